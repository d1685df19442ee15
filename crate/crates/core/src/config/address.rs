use std::collections::BTreeMap;
use std::fmt;
use std::net::Ipv4Addr;
use std::str::FromStr;

use thiserror::Error;

/// A virtual IPv4 subnet from which host addresses are drawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Subnet {
    base: Ipv4Addr,
    prefix: u8,
}

impl Subnet {
    /// Builds a subnet; host bits of `base` are cleared.
    pub fn new(base: Ipv4Addr, prefix: u8) -> Option<Self> {
        if prefix > 32 {
            return None;
        }
        let base = Ipv4Addr::from(u32::from(base) & Self::mask_bits(prefix));
        Some(Subnet { base, prefix })
    }

    fn mask_bits(prefix: u8) -> u32 {
        if prefix == 0 {
            0
        } else {
            u32::MAX << (32 - prefix)
        }
    }

    pub fn base(&self) -> Ipv4Addr {
        self.base
    }

    pub fn prefix(&self) -> u8 {
        self.prefix
    }

    pub fn contains(&self, addr: Ipv4Addr) -> bool {
        u32::from(addr) & Self::mask_bits(self.prefix) == u32::from(self.base)
    }

    /// Number of assignable host addresses. The network and broadcast
    /// addresses are reserved.
    pub fn capacity(&self) -> u64 {
        let total = 1u64 << (32 - u32::from(self.prefix));
        total.saturating_sub(2)
    }

    /// The `index`-th assignable address (0-based), skipping the network
    /// address.
    pub fn host(&self, index: u64) -> Option<Ipv4Addr> {
        if index >= self.capacity() {
            return None;
        }
        Some(Ipv4Addr::from(u32::from(self.base) + 1 + index as u32))
    }
}

impl fmt::Display for Subnet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}/{}", self.base, self.prefix)
    }
}

impl FromStr for Subnet {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (addr, prefix) = s
            .split_once('/')
            .ok_or_else(|| format!("subnet `{s}` is missing a /prefix"))?;
        let addr: Ipv4Addr = addr
            .trim()
            .parse()
            .map_err(|_| format!("invalid subnet address `{addr}`"))?;
        let prefix: u8 = prefix
            .trim()
            .parse()
            .map_err(|_| format!("invalid prefix length `{prefix}`"))?;
        Subnet::new(addr, prefix).ok_or_else(|| format!("prefix length {prefix} exceeds 32"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AddressError {
    #[error("subnet {subnet} exhausted ({capacity} addresses)")]
    SubnetExhausted { subnet: Subnet, capacity: u64 },
}

/// Hands out stable virtual addresses, one per hostname, in allocation order.
///
/// The binding lives as long as the allocator: restarting an instance of a
/// hostname keeps its address.
#[derive(Debug, Clone)]
pub struct AddressAllocator {
    subnet: Subnet,
    next: u64,
    by_host: BTreeMap<String, Ipv4Addr>,
    by_addr: BTreeMap<Ipv4Addr, String>,
}

impl AddressAllocator {
    pub fn new(subnet: Subnet) -> Self {
        AddressAllocator {
            subnet,
            next: 0,
            by_host: BTreeMap::new(),
            by_addr: BTreeMap::new(),
        }
    }

    pub fn subnet(&self) -> Subnet {
        self.subnet
    }

    /// Returns the address bound to `hostname`, allocating the next free one
    /// on first use.
    pub fn assign(&mut self, hostname: &str) -> Result<Ipv4Addr, AddressError> {
        if let Some(addr) = self.by_host.get(hostname) {
            return Ok(*addr);
        }
        let addr = self.subnet.host(self.next).ok_or(AddressError::SubnetExhausted {
            subnet: self.subnet,
            capacity: self.subnet.capacity(),
        })?;
        self.next += 1;
        self.by_host.insert(hostname.to_string(), addr);
        self.by_addr.insert(addr, hostname.to_string());
        Ok(addr)
    }

    pub fn lookup(&self, hostname: &str) -> Option<Ipv4Addr> {
        self.by_host.get(hostname).copied()
    }

    pub fn reverse(&self, addr: Ipv4Addr) -> Option<&str> {
        self.by_addr.get(&addr).map(String::as_str)
    }

    pub fn bindings(&self) -> impl Iterator<Item = (&str, Ipv4Addr)> {
        self.by_host.iter().map(|(h, a)| (h.as_str(), *a))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn first_address_skips_network_address() {
        let mut alloc = AddressAllocator::new("10.0.0.0/16".parse().unwrap());
        assert_eq!(alloc.assign("web-1").unwrap(), Ipv4Addr::new(10, 0, 0, 1));
        assert_eq!(alloc.assign("web-2").unwrap(), Ipv4Addr::new(10, 0, 0, 2));
        assert_eq!(alloc.assign("web-1").unwrap(), Ipv4Addr::new(10, 0, 0, 1));
    }

    #[test]
    fn exhaustion_after_capacity() {
        let subnet: Subnet = "192.168.1.0/30".parse().unwrap();
        assert_eq!(subnet.capacity(), 2);
        let mut alloc = AddressAllocator::new(subnet);
        alloc.assign("a").unwrap();
        alloc.assign("b").unwrap();
        assert!(matches!(
            alloc.assign("c"),
            Err(AddressError::SubnetExhausted { capacity: 2, .. })
        ));
        // Known names still resolve.
        assert_eq!(alloc.assign("a").unwrap(), Ipv4Addr::new(192, 168, 1, 1));
    }

    #[test]
    fn subnet_membership() {
        let subnet: Subnet = "10.1.2.3/16".parse().unwrap();
        assert_eq!(subnet.base(), Ipv4Addr::new(10, 1, 0, 0));
        assert!(subnet.contains(Ipv4Addr::new(10, 1, 200, 7)));
        assert!(!subnet.contains(Ipv4Addr::new(10, 2, 0, 1)));
        assert!("10.0.0.0".parse::<Subnet>().is_err());
        assert!("10.0.0.0/33".parse::<Subnet>().is_err());
    }

    proptest! {
        #[test]
        fn assignment_is_injective_and_idempotent(names in proptest::collection::vec("[a-e]{1,3}", 1..40)) {
            let mut alloc = AddressAllocator::new("10.0.0.0/24".parse().unwrap());
            let first: Vec<_> = names.iter().map(|n| alloc.assign(n).unwrap()).collect();
            let again: Vec<_> = names.iter().map(|n| alloc.assign(n).unwrap()).collect();
            prop_assert_eq!(&first, &again);
            for (i, a) in names.iter().enumerate() {
                for (j, b) in names.iter().enumerate() {
                    prop_assert_eq!(a == b, first[i] == first[j]);
                }
            }
        }
    }
}
