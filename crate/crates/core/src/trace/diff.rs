use std::fmt;

/// First point at which two traces differ. `None` on a side means that trace
/// ended earlier.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Divergence {
    pub line: usize,
    pub golden: Option<String>,
    pub actual: Option<String>,
}

impl fmt::Display for Divergence {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "traces diverge at line {}", self.line)?;
        writeln!(f, "- {}", self.golden.as_deref().unwrap_or("<end of golden trace>"))?;
        write!(f, "+ {}", self.actual.as_deref().unwrap_or("<end of trace>"))
    }
}

/// Byte-level comparison, reported per line.
pub fn diff_traces(golden: &str, actual: &str) -> Option<Divergence> {
    if golden == actual {
        return None;
    }
    let mut g = golden.split_inclusive('\n');
    let mut a = actual.split_inclusive('\n');
    let mut line = 0;
    loop {
        line += 1;
        match (g.next(), a.next()) {
            (None, None) => return None,
            (x, y) if x == y => continue,
            (x, y) => {
                let strip = |s: &str| s.trim_end_matches('\n').to_string();
                return Some(Divergence {
                    line,
                    golden: x.map(strip),
                    actual: y.map(strip),
                });
            }
        }
    }
}
