mod common;

use std::collections::BTreeMap;
use std::time::Duration;

use common::*;
use im_core::sim::{parse_scenario, Simulation, DEFAULT_HORIZON};
use im_core::trace::{parse_trace, render_trace, Channel};
use proptest::prelude::*;

#[test]
fn goldens_match() {
    for name in GOLDENS {
        check_golden(name, &run_named(name)).unwrap();
    }
}

#[test]
fn goldens_hold_invariants_at_every_step() {
    for name in GOLDENS {
        let (config, scenario) = load(name);
        let run = Simulation::new(config, &scenario, 0).unwrap().checked().run(DEFAULT_HORIZON);
        assert_eq!(run.aborted, None, "{name}");
    }
}

#[test]
fn golden_traces_reparse_byte_for_byte() {
    for name in GOLDENS {
        let text = golden_text(name);
        assert_eq!(render_trace(&parse_trace(&text).unwrap()), text, "{name}");
    }
}

#[test]
fn scenarios_round_trip_through_display() {
    for name in GOLDENS {
        let (_, scenario) = load(name);
        assert_eq!(parse_scenario(&scenario.to_string()).unwrap(), scenario, "{name}");
    }
}

#[test]
fn horizon_cuts_the_run() {
    let (config, scenario) = load("chain");
    let text = sim_trace(config, &scenario, 0, Duration::from_secs(10));
    let records = parse_trace(&text).unwrap();
    let last = records.last().unwrap();
    assert_eq!(last.kind, "run-end");
    assert_eq!(last.time.0, 10_000_000);
    assert!(records.iter().all(|r| r.time.0 <= 10_000_000));
}

#[test]
fn seq_numbers_are_dense_and_time_monotone() {
    let (config, scenario) = random_world(1, 6, 4, 200);
    let records = parse_trace(&sim_trace(config, &scenario, 9, DEFAULT_HORIZON)).unwrap();
    for (i, w) in records.windows(2).enumerate() {
        assert_eq!(w[1].seq, w[0].seq + 1, "record {i}");
        assert!(w[1].time >= w[0].time, "record {i}");
    }
}

#[test]
fn connect_to_unmatched_hostname_is_refused_up_front() {
    let (config, _) = load("chain");
    let scenario = parse_scenario("[stimuli]\nat 0ms connect mail-1\n").unwrap();
    assert!(Simulation::new(config, &scenario, 0).is_err());
}

#[test]
fn connect_timeout_rejects_waiting_client() {
    let config = im_core::config::parse_config(
        "[timing]\ncold_start_latency = 2s\nconnect_timeout = 500ms\n[rule]\npattern = slow-*\nfunction_type = slow\n",
    )
    .unwrap();
    let scenario = parse_scenario("[stimuli]\nat 0ms connect slow-1\n").unwrap();
    let records = parse_trace(&sim_trace(config, &scenario, 0, Duration::from_secs(5))).unwrap();
    let failed: Vec<_> = records
        .iter()
        .filter(|r| r.channel == Channel::App && r.kind == "connection-failed")
        .collect();
    assert_eq!(failed.len(), 1);
    assert_eq!(failed[0].time.0, 500_000);
    assert_eq!(failed[0].detail("reason"), Some("admission-timeout"));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn random_worlds_keep_invariants(seed in any::<u64>(), sim_seed in any::<u64>()) {
        let (config, scenario) = random_world(seed, 4, 3, 80);
        let run = Simulation::new(config, &scenario, sim_seed).unwrap().checked().run(DEFAULT_HORIZON);
        prop_assert_eq!(run.aborted, None);
        let records = run.trace.records();

        // One address per hostname for the whole run, distinct across hosts.
        let mut addr: BTreeMap<&str, &str> = BTreeMap::new();
        for r in records.iter().filter(|r| r.kind == "start") {
            let a = r.detail("address").unwrap();
            prop_assert_eq!(*addr.entry(&r.host).or_insert(a), a);
        }
        let mut seen: Vec<_> = addr.values().collect();
        seen.sort();
        seen.dedup();
        prop_assert_eq!(seen.len(), addr.len());

        // Instance ids only grow, one per start.
        let mut last: BTreeMap<&str, u64> = BTreeMap::new();
        for r in records.iter().filter(|r| r.kind == "start") {
            let prev = last.insert(&r.host, r.inst).unwrap_or(0);
            prop_assert_eq!(r.inst, prev + 1);
        }

        // Every connect is answered at most once on the app channel.
        let mut answers: BTreeMap<&str, u32> = BTreeMap::new();
        for r in records.iter().filter(|r| r.channel == Channel::App) {
            if matches!(r.kind.as_str(), "connected" | "connection-failed") {
                if let Some(c) = r.detail("conn") {
                    *answers.entry(c).or_default() += 1;
                }
            }
        }
        prop_assert!(answers.values().all(|&n| n == 1), "{:?}", answers);
    }
}
