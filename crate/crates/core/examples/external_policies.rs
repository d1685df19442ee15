//! Compares the external-connection policies on one scenario: a
//! keep-running host stays up while a client is attached, a preemptible one
//! sleeps anyway and its client later sees a reset, and a by-role host only
//! waits for connections it accepted.

use im_core::config::parse_config;
use im_core::sim::{parse_scenario, run_scenario, DEFAULT_HORIZON};

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    for name in ["preemptible", "warm_for"] {
        let config = parse_config(&std::fs::read_to_string(format!("{dir}/{name}.conf")).unwrap()).unwrap();
        let scenario = parse_scenario(&std::fs::read_to_string(format!("{dir}/{name}.scn")).unwrap()).unwrap();
        println!("== {name}");
        let run = run_scenario(config, &scenario, 0, DEFAULT_HORIZON).unwrap();
        for r in run.trace.records() {
            let shown = match r.kind.as_str() {
                "suspend" | "suspend-blocked" | "suspend-deferred" | "lost" | "connection-reset" => true,
                "state" => r.detail("to") == Some("sleeping"),
                _ => false,
            };
            if shown {
                println!("{r}");
            }
        }
    }
}
