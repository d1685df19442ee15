//! Reruns a scenario, compares it with its checked-in golden trace and then
//! shows what a divergence report looks like.

use im_core::config::parse_config;
use im_core::sim::{parse_scenario, run_scenario, DEFAULT_HORIZON};
use im_core::trace::diff_traces;

fn main() {
    let root = env!("CARGO_MANIFEST_DIR");
    let config = parse_config(&std::fs::read_to_string(format!("{root}/scenarios/chain.conf")).unwrap()).unwrap();
    let scenario = parse_scenario(&std::fs::read_to_string(format!("{root}/scenarios/chain.scn")).unwrap()).unwrap();
    let golden = std::fs::read_to_string(format!("{root}/tests/golden/chain.trace")).unwrap();

    let actual = run_scenario(config, &scenario, 0, DEFAULT_HORIZON).unwrap().trace.render();
    match diff_traces(&golden, &actual) {
        None => println!("chain: identical to golden ({} lines)", golden.lines().count()),
        Some(d) => println!("chain: {d}"),
    }

    // A one-byte change in the payload size.
    let tampered = actual.replacen("bytes=1024", "bytes=1023", 1);
    println!("{}", diff_traces(&golden, &tampered).unwrap());
}
