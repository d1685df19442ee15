//! Resource-usage metrics recomputed from a trace alone.

use std::collections::BTreeMap;
use std::fmt;

use super::{Channel, TraceError, TraceRecord};

/// Upper bucket edges of the admission latency histogram, in microseconds.
/// A sample lands in the first bucket whose edge is >= the sample; the last
/// bucket is unbounded.
pub const HISTOGRAM_EDGES_US: [u64; 8] = [0, 1_000, 10_000, 50_000, 100_000, 200_000, 500_000, 1_000_000];

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LatencyHistogram {
    /// One count per edge plus the +inf bucket.
    pub counts: [u64; 9],
}

impl LatencyHistogram {
    pub fn record(&mut self, us: u64) {
        let idx = HISTOGRAM_EDGES_US
            .iter()
            .position(|&e| us <= e)
            .unwrap_or(HISTOGRAM_EDGES_US.len());
        self.counts[idx] += 1;
    }

    pub fn total(&self) -> u64 {
        self.counts.iter().sum()
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct HostMetrics {
    pub cold_starts: u64,
    pub warm_resumes: u64,
    pub suspensions: u64,
    pub faults: u64,
    pub running_us: u64,
    pub sleeping_us: u64,
}

impl HostMetrics {
    pub fn running_seconds(&self) -> f64 {
        self.running_us as f64 / 1e6
    }

    pub fn sleeping_seconds(&self) -> f64 {
        self.sleeping_us as f64 / 1e6
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricsReport {
    pub hosts: BTreeMap<String, HostMetrics>,
    pub makespan_us: u64,
    pub total_running_us: u64,
    pub baseline_us: u64,
    /// `1 - running / (known hosts * makespan)`, clamped to [0, 1].
    pub savings_ratio: f64,
    pub admission_latency: LatencyHistogram,
}

impl MetricsReport {
    pub fn total_host_seconds(&self) -> f64 {
        self.total_running_us as f64 / 1e6
    }

    pub fn baseline_host_seconds(&self) -> f64 {
        self.baseline_us as f64 / 1e6
    }
}

impl fmt::Display for MetricsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(
            f,
            "{:<16} {:>5} {:>6} {:>8} {:>6} {:>12} {:>12}",
            "host", "cold", "warm", "suspend", "fault", "running_s", "sleeping_s"
        )?;
        for (h, m) in &self.hosts {
            writeln!(
                f,
                "{:<16} {:>5} {:>6} {:>8} {:>6} {:>12.6} {:>12.6}",
                h,
                m.cold_starts,
                m.warm_resumes,
                m.suspensions,
                m.faults,
                m.running_seconds(),
                m.sleeping_seconds()
            )?;
        }
        writeln!(f, "makespan_s          {:.6}", self.makespan_us as f64 / 1e6)?;
        writeln!(f, "host_seconds        {:.6}", self.total_host_seconds())?;
        writeln!(f, "always_on_seconds   {:.6}", self.baseline_host_seconds())?;
        writeln!(f, "savings_ratio       {:.6}", self.savings_ratio)?;
        write!(f, "admission_latency  ")?;
        for (i, c) in self.admission_latency.counts.iter().enumerate() {
            match HISTOGRAM_EDGES_US.get(i) {
                Some(e) => write!(f, " le{}us={}", e, c)?,
                None => write!(f, " inf={}", c)?,
            }
        }
        writeln!(f)
    }
}

#[derive(Default)]
struct Open {
    running_since: Option<u64>,
    sleeping_since: Option<u64>,
}

/// Derives a [`MetricsReport`]. The trace must end with a `run-end` record.
pub fn compute_metrics(trace: &[TraceRecord]) -> Result<MetricsReport, TraceError> {
    let last = trace.last().ok_or(TraceError::Empty)?;
    if last.kind != "run-end" {
        return Err(TraceError::Truncated {
            last: last.to_string(),
        });
    }
    let end = last.time.0;
    let start = trace
        .iter()
        .find(|r| r.kind == "config")
        .unwrap_or(&trace[0])
        .time
        .0;

    let mut hosts: BTreeMap<String, HostMetrics> = BTreeMap::new();
    let mut open: BTreeMap<String, Open> = BTreeMap::new();
    let mut requested: BTreeMap<&str, u64> = BTreeMap::new();
    let mut hist = LatencyHistogram::default();

    for r in trace {
        let t = r.time.0;
        match (r.channel, r.kind.as_str()) {
            (Channel::Orch, "state") => {
                let m = hosts.entry(r.host.clone()).or_default();
                let o = open.entry(r.host.clone()).or_default();
                match r.detail("from") {
                    Some("running") => {
                        if let Some(s) = o.running_since.take() {
                            m.running_us += t - s;
                        }
                    }
                    Some("sleeping") => {
                        if let Some(s) = o.sleeping_since.take() {
                            m.sleeping_us += t - s;
                        }
                    }
                    _ => {}
                }
                match r.detail("to") {
                    Some("running") => o.running_since = Some(t),
                    Some("sleeping") => o.sleeping_since = Some(t),
                    Some("failed") => m.faults += 1,
                    _ => {}
                }
            }
            (Channel::Orch, "start") => hosts.entry(r.host.clone()).or_default().cold_starts += 1,
            (Channel::Orch, "resume") => hosts.entry(r.host.clone()).or_default().warm_resumes += 1,
            (Channel::Orch, "suspend") => hosts.entry(r.host.clone()).or_default().suspensions += 1,
            (Channel::Orch, "connect") => {
                if let Some(c) = r.detail("conn") {
                    requested.insert(c, t);
                }
            }
            (Channel::App, "connected") => {
                if let Some(t0) = r.detail("conn").and_then(|c| requested.remove(c)) {
                    hist.record(t - t0);
                }
            }
            _ => {}
        }
    }
    for (h, o) in open {
        let m = hosts.get_mut(&h).expect("opened hosts are registered");
        if let Some(s) = o.running_since {
            m.running_us += end - s;
        }
        if let Some(s) = o.sleeping_since {
            m.sleeping_us += end - s;
        }
    }

    let makespan_us = end - start;
    let total_running_us: u64 = hosts.values().map(|m| m.running_us).sum();
    let baseline_us = hosts.len() as u64 * makespan_us;
    let savings_ratio = if baseline_us == 0 {
        0.0
    } else {
        (1.0 - total_running_us as f64 / baseline_us as f64).clamp(0.0, 1.0)
    };
    Ok(MetricsReport {
        hosts,
        makespan_us,
        total_running_us,
        baseline_us,
        savings_ratio,
        admission_latency: hist,
    })
}
