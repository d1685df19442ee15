//! Injects a fault into a running host. Its peers see their connections
//! reset, the host comes back as a new instance on the same address and a
//! later client gets through.

use im_core::config::parse_config;
use im_core::sim::{parse_scenario, run_scenario};
use im_core::trace::Channel;
use std::time::Duration;

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let config = parse_config(&std::fs::read_to_string(format!("{dir}/fault.conf")).unwrap()).unwrap();
    let scenario = parse_scenario(&std::fs::read_to_string(format!("{dir}/fault.scn")).unwrap()).unwrap();

    let run = run_scenario(config, &scenario, 0, Duration::from_secs(10)).unwrap();
    let interesting = ["fault", "reset", "start", "connection-reset", "connected"];
    for r in run.trace.records() {
        let app = r.channel == Channel::App;
        if interesting.contains(&r.kind.as_str()) && (app || r.kind != "connected") {
            println!("{r}");
        }
    }
}
