#![allow(dead_code)]

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Duration;

use im_core::config::{parse_config, Config};
use im_core::sim::{parse_scenario, run_scenario, Scenario, DEFAULT_HORIZON};
use im_core::trace::{Channel, TraceRecord};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

/// Scenarios with a checked-in golden trace.
pub const GOLDENS: [&str; 4] = ["chain", "fault", "preemptible", "warm_for"];

pub const APP_KINDS: [&str; 5] = ["connected", "connection-failed", "connection-reset", "data", "listening"];

pub fn crate_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

pub fn load(name: &str) -> (Config, Scenario) {
    let dir = crate_dir().join("scenarios");
    let conf = std::fs::read_to_string(dir.join(format!("{name}.conf"))).unwrap();
    let scn = std::fs::read_to_string(dir.join(format!("{name}.scn"))).unwrap();
    (parse_config(&conf).unwrap(), parse_scenario(&scn).unwrap())
}

pub fn run_named(name: &str) -> String {
    let (config, scenario) = load(name);
    let run = run_scenario(config, &scenario, 0, DEFAULT_HORIZON).unwrap();
    assert!(run.aborted.is_none(), "{name}: {:?}", run.aborted);
    run.trace.render()
}

pub fn golden_path(name: &str) -> PathBuf {
    crate_dir().join("tests/golden").join(format!("{name}.trace"))
}

/// Compares against the checked-in golden; `IM_BLESS=1` rewrites it instead.
pub fn check_golden(name: &str, actual: &str) -> Result<(), String> {
    let path = golden_path(name);
    if std::env::var_os("IM_BLESS").is_some() {
        std::fs::write(&path, actual).map_err(|e| e.to_string())?;
        return Ok(());
    }
    let golden = std::fs::read_to_string(&path).map_err(|e| format!("{}: {e}", path.display()))?;
    match im_core::trace::diff_traces(&golden, actual) {
        None => Ok(()),
        Some(d) => Err(format!("{name}: {d}")),
    }
}

pub fn golden_text(name: &str) -> String {
    std::fs::read_to_string(golden_path(name)).unwrap()
}

/// Second, structurally different metrics scan: per-host state timelines are
/// collected first and integrated afterwards.
#[derive(Debug, Default, PartialEq, Eq)]
pub struct OracleMetrics {
    pub cold_starts: BTreeMap<String, u64>,
    pub warm_resumes: BTreeMap<String, u64>,
    pub suspensions: BTreeMap<String, u64>,
    pub faults: BTreeMap<String, u64>,
    pub running_us: BTreeMap<String, u64>,
    pub sleeping_us: BTreeMap<String, u64>,
    pub makespan_us: u64,
    pub latencies: Vec<u64>,
}

pub fn oracle_metrics(records: &[TraceRecord]) -> OracleMetrics {
    let mut m = OracleMetrics::default();
    let end = records.last().map(|r| r.time.0).unwrap_or(0);
    let begin = records.first().map(|r| r.time.0).unwrap_or(0);
    m.makespan_us = end - begin;

    let mut timeline: BTreeMap<&str, Vec<(u64, &str)>> = BTreeMap::new();
    for r in records.iter().filter(|r| r.channel == Channel::Orch) {
        let counter = match r.kind.as_str() {
            "start" => Some(&mut m.cold_starts),
            "resume" => Some(&mut m.warm_resumes),
            "suspend" => Some(&mut m.suspensions),
            _ => None,
        };
        if let Some(c) = counter {
            *c.entry(r.host.clone()).or_default() += 1;
        }
        if r.kind == "state" {
            let to = r.detail("to").unwrap();
            timeline.entry(&r.host).or_default().push((r.time.0, to));
            if to == "failed" {
                *m.faults.entry(r.host.clone()).or_default() += 1;
            }
        }
    }
    for (host, points) in &timeline {
        let mut spans = [0u64; 2];
        for (i, (t, s)) in points.iter().enumerate() {
            let next = points.get(i + 1).map_or(end, |p| p.0);
            match *s {
                "running" => spans[0] += next - t,
                "sleeping" => spans[1] += next - t,
                _ => {}
            }
        }
        m.running_us.insert(host.to_string(), spans[0]);
        m.sleeping_us.insert(host.to_string(), spans[1]);
    }

    let mut first_connected: BTreeMap<&str, u64> = BTreeMap::new();
    for r in records.iter().rev() {
        if r.channel == Channel::App && r.kind == "connected" {
            first_connected.insert(r.detail("conn").unwrap(), r.time.0);
        }
    }
    for r in records.iter().filter(|r| r.channel == Channel::Orch && r.kind == "connect") {
        let c = r.detail("conn").unwrap();
        if let Some(t) = first_connected.get(c) {
            m.latencies.push(t - r.time.0);
        }
    }
    m.latencies.sort_unstable();
    m
}

/// A chain of `types` function types with `per_type` hosts each; type `i`
/// hosts connect onwards to a host of type `i + 1`.
pub fn random_world(seed: u64, types: usize, per_type: usize, stimuli: usize) -> (Config, Scenario) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut conf = String::from(
        "[network]\nrtt = 1ms\njitter = 3ms\n\n[timing]\ncold_start_latency = 200ms\nresume_latency = 20ms\n\
         idle_debounce = 2s\nkeep_warm_period = 30s\nsleep_ttl = 90s\nconnect_timeout = 5s\n",
    );
    for t in 0..types {
        let policy = ["keep-running", "preemptible", "warm-for 5s", "warm-for 3s by-role"][t % 4];
        write!(conf, "\n[rule]\npattern = t{t}-*\nfunction_type = f{t}\nexternal_policy = {policy}\n").unwrap();
    }

    let mut scn = String::new();
    for t in 0..types {
        write!(scn, "[script f{t}]\non_start:\n  listen {}\n", 1000 + t).unwrap();
        write!(scn, "on_connection:\n  send accepted {}\n", rng.gen_range(1..512)).unwrap();
        if t + 1 < types {
            let next = rng.gen_range(0..per_type);
            write!(scn, "  connect t{}-{next}\n  send last {}\n", t + 1, rng.gen_range(1..4096)).unwrap();
            if rng.gen_bool(0.5) {
                scn.push_str("  sleep 50ms\n  close last\n");
            }
        }
        scn.push_str("  declare_idle\n");
        // Replies from on_data would let two hosts echo forever.
        scn.push_str("on_data:\n");
        if rng.gen_bool(0.3) {
            scn.push_str("  set_timer 2s\n");
        }
        scn.push_str("  declare_idle\n");
        scn.push_str("on_timer:\n  declare_idle\n");
    }
    scn.push_str("[stimuli]\n");
    let mut connects = 0u32;
    let mut at_ms = 0u64;
    for i in 0..stimuli {
        at_ms += rng.gen_range(0..1500);
        let host = format!("t{}-{}", rng.gen_range(0..types), rng.gen_range(0..per_type));
        let roll = rng.gen_range(0..100);
        // Every host is reached at least once.
        let host = if i < types * per_type {
            format!("t{}-{}", i % types, i / types)
        } else {
            host
        };
        let line = if connects == 0 || roll < 45 || i < types * per_type {
            connects += 1;
            format!("connect {host}")
        } else if roll < 75 {
            format!("send {} {}", rng.gen_range(1..=connects), rng.gen_range(1..2048))
        } else if roll < 95 {
            format!("close {}", rng.gen_range(1..=connects))
        } else {
            format!("fault {host}")
        };
        writeln!(scn, "at {at_ms}ms {line}").unwrap();
    }
    (parse_config(&conf).unwrap(), parse_scenario(&scn).unwrap())
}

pub fn sim_trace(config: Config, scenario: &Scenario, seed: u64, horizon: Duration) -> String {
    let run = run_scenario(config, scenario, seed, horizon).unwrap();
    assert!(run.aborted.is_none(), "{:?}", run.aborted);
    run.trace.render()
}
