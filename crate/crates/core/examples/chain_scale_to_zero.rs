//! Runs the client -> web -> db chain in the simulator: both hosts start on
//! demand, sleep once idle, get a keep-warm probe and are finally released.
//! Prints the orchestrator's view of the run and the resulting metrics.

use im_core::config::parse_config;
use im_core::sim::{parse_scenario, run_scenario, DEFAULT_HORIZON};
use im_core::trace::{compute_metrics, Channel};

fn main() {
    let dir = concat!(env!("CARGO_MANIFEST_DIR"), "/scenarios");
    let config = parse_config(&std::fs::read_to_string(format!("{dir}/chain.conf")).unwrap()).unwrap();
    let scenario = parse_scenario(&std::fs::read_to_string(format!("{dir}/chain.scn")).unwrap()).unwrap();

    let run = run_scenario(config, &scenario, 0, DEFAULT_HORIZON).expect("scenario is valid");
    for r in run.trace.records() {
        if r.channel == Channel::Orch && matches!(r.kind.as_str(), "state" | "timer") {
            println!("{r}");
        }
    }
    println!();
    print!("{}", compute_metrics(run.trace.records()).unwrap());
}
