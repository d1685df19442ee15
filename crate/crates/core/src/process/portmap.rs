use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

/// Hostname to gateway loopback port. Serialized one `<hostname> <port>`
/// line per host, sorted by hostname.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct PortMap {
    pub ports: BTreeMap<String, u16>,
}

impl PortMap {
    pub fn get(&self, host: &str) -> Option<u16> {
        self.ports.get(host).copied()
    }

    pub fn host_for(&self, port: u16) -> Option<&str> {
        self.ports.iter().find(|(_, &p)| p == port).map(|(h, _)| h.as_str())
    }
}

impl fmt::Display for PortMap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (h, p) in &self.ports {
            writeln!(f, "{h} {p}")?;
        }
        Ok(())
    }
}

impl FromStr for PortMap {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let mut map = PortMap::default();
        for (i, line) in s.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut words = line.split_whitespace();
            let (Some(h), Some(p), None) = (words.next(), words.next(), words.next()) else {
                return Err(format!("line {}: expected `<hostname> <port>`", i + 1));
            };
            let port: u16 = p.parse().map_err(|_| format!("line {}: bad port `{p}`", i + 1))?;
            if map.ports.insert(h.to_string(), port).is_some() {
                return Err(format!("line {}: duplicate host `{h}`", i + 1));
            }
        }
        Ok(map)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn parse_rejects_garbage() {
        assert!("web-1".parse::<PortMap>().is_err());
        assert!("web-1 99999".parse::<PortMap>().is_err());
        assert!("a 1\na 2".parse::<PortMap>().is_err());
    }

    proptest! {
        #[test]
        fn round_trips(ports in proptest::collection::btree_map("[a-z][a-z0-9-]{0,10}", 1u16.., 0..20)) {
            let map = PortMap { ports };
            prop_assert_eq!(map.to_string().parse::<PortMap>().unwrap(), map);
        }
    }
}
