//! Hostname globs: literal characters plus `*`, which matches any sequence
//! (including the empty one). No other metacharacters.

/// Returns true if `pattern` matches the whole of `text`.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p = pattern.as_bytes();
    let t = text.as_bytes();
    let (mut pi, mut ti) = (0usize, 0usize);
    // Position of the last `*` seen and the text index it was tried at.
    let mut star: Option<(usize, usize)> = None;

    while ti < t.len() {
        if pi < p.len() && p[pi] == b'*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == b'*')
}

/// A pattern is valid when it is non-empty and made only of hostname
/// characters and `*`.
pub fn is_valid_pattern(pattern: &str) -> bool {
    !pattern.is_empty()
        && pattern
            .bytes()
            .all(|c| c == b'*' || c.is_ascii_alphanumeric() || c == b'-' || c == b'.')
}

/// RFC 1123-style hostname check: dot-separated labels of 1..=63 ASCII
/// alphanumerics or `-`, not starting or ending with `-`.
pub fn is_valid_hostname(name: &str) -> bool {
    if name.is_empty() || name.len() > 253 {
        return false;
    }
    name.split('.').all(|label| {
        !label.is_empty()
            && label.len() <= 63
            && !label.starts_with('-')
            && !label.ends_with('-')
            && label.bytes().all(|c| c.is_ascii_alphanumeric() || c == b'-')
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    /// Exponential reference matcher, fine for short inputs.
    fn naive(p: &[u8], t: &[u8]) -> bool {
        match p.split_first() {
            None => t.is_empty(),
            Some((b'*', rest)) => (0..=t.len()).any(|k| naive(rest, &t[k..])),
            Some((c, rest)) => t.first() == Some(c) && naive(rest, &t[1..]),
        }
    }

    #[test]
    fn literal_and_star() {
        assert!(glob_match("db-*", "db-3"));
        assert!(glob_match("db-*", "db-"));
        assert!(!glob_match("db-*", "cache-1"));
        assert!(glob_match("*", ""));
        assert!(glob_match("*-1", "web-1"));
        assert!(glob_match("a*b*c", "axxbyyc"));
        assert!(!glob_match("a*b*c", "axxbyy"));
        assert!(glob_match("web", "web"));
        assert!(!glob_match("web", "web-1"));
        assert!(!glob_match("db-?", "db-1"));
    }

    #[test]
    fn hostname_validation() {
        assert!(is_valid_hostname("web-1"));
        assert!(is_valid_hostname("a.b.c"));
        assert!(!is_valid_hostname(""));
        assert!(!is_valid_hostname("-web"));
        assert!(!is_valid_hostname("we b"));
        assert!(!is_valid_hostname("a..b"));
    }

    proptest! {
        #[test]
        fn agrees_with_naive_matcher(p in "[ab*]{0,7}", t in "[ab]{0,9}") {
            prop_assert_eq!(glob_match(&p, &t), naive(p.as_bytes(), t.as_bytes()));
        }
    }
}
