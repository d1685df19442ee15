//! Resolves a few hostnames against a config and shows the addresses they get.

use im_core::config::{parse_config, AddressAllocator};

const CONFIG: &str = "\
[network]
subnet = 10.20.0.0/16

[rule]
pattern = web-*
function_type = web
max_instances = 2

[rule]
pattern = *
function_type = catch-all
external_policy = warm-for 5s by-role
";

fn main() {
    let config = parse_config(CONFIG).expect("config parses");
    let mut alloc = AddressAllocator::new(config.network.subnet);
    for host in ["web-1", "web-2", "cache-7", "web-1"] {
        let rule = config.resolve_function_type(host).expect("catch-all matches");
        let addr = alloc.assign(host).expect("subnet has room");
        let limits = config.limits_for(&rule.function_type);
        println!(
            "{host:<8} -> {:<10} {addr:<12} policy={:?} max_lifetime={:?}",
            rule.function_type, rule.external_policy, limits.max_lifetime
        );
    }
    println!("reverse 10.20.0.3 = {:?}", alloc.reverse("10.20.0.3".parse().unwrap()));

    let bad = parse_config("[rule]\npattern = web-*\n");
    println!("missing function_type: {}", bad.unwrap_err());
}
