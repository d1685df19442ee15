//! Static-time configuration: which hostnames exist, which function type
//! backs each of them, and the timing and policy knobs of the platform.
//!
//! The document format is line oriented. Sections are introduced by
//! `[name]` or `[name arg]` headers and contain `key = value` lines. Full-line
//! comments start with `#`.
//!
//! ```text
//! [network]
//! subnet = 10.0.0.0/16
//!
//! [timing]
//! cold_start_latency = 200ms
//! keep_warm_period = 60s
//!
//! [rule]
//! pattern = db-*
//! function_type = dbnode
//! max_instances = 8
//! external_policy = warm-for 30s by-role
//! ```

mod address;
mod glob;
mod parse;

use std::collections::BTreeMap;
use std::fmt;
use std::path::PathBuf;
use std::time::Duration;

use thiserror::Error;

pub use address::{AddressAllocator, AddressError, Subnet};
pub use glob::{glob_match, is_valid_hostname, is_valid_pattern};
pub use parse::parse_config;

/// Platform caps for a single function instance.
pub const MAX_MEMORY_MB: u32 = 10_240;
pub const MAX_VCPU: u32 = 6;
pub const MAX_LIFETIME: Duration = Duration::from_secs(15 * 60);

pub const DEFAULT_MAX_INSTANCES: u32 = 256;
pub const DEFAULT_MAX_RESTARTS: u32 = 3;
pub const DEFAULT_READINESS_TIMEOUT: Duration = Duration::from_secs(10);

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ConfigError {
    #[error("line {line}: {message}")]
    Syntax { line: usize, message: String },
    #[error("invalid configuration: {0}")]
    Validation(String),
}

/// How suspension treats a host that holds connections to peers outside the
/// virtual network.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExternalMode {
    /// Never suspend while any external connection is open.
    KeepRunning,
    /// Suspend anyway; external connections are marked lost.
    Preemptible,
    /// Keep running for this long after going idle, then behave as
    /// `Preemptible`.
    WarmFor(Duration),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExternalConnPolicy {
    pub mode: ExternalMode,
    /// When set, only connections the host initiated (active endpoint) are
    /// subject to `mode`; accepted (passive) ones pin the host like
    /// `KeepRunning`.
    pub distinguish_endpoint_role: bool,
}

impl ExternalConnPolicy {
    pub const KEEP_RUNNING: ExternalConnPolicy = ExternalConnPolicy {
        mode: ExternalMode::KeepRunning,
        distinguish_endpoint_role: false,
    };

    pub fn new(mode: ExternalMode) -> Self {
        ExternalConnPolicy {
            mode,
            distinguish_endpoint_role: false,
        }
    }

    pub fn by_role(mut self) -> Self {
        self.distinguish_endpoint_role = true;
        self
    }
}

impl Default for ExternalConnPolicy {
    fn default() -> Self {
        Self::KEEP_RUNNING
    }
}

impl fmt::Display for ExternalConnPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.mode {
            ExternalMode::KeepRunning => f.write_str("keep-running")?,
            ExternalMode::Preemptible => f.write_str("preemptible")?,
            ExternalMode::WarmFor(d) => write!(f, "warm-for {}", crate::time::format_duration(d))?,
        }
        if self.distinguish_endpoint_role {
            f.write_str(" by-role")?;
        }
        Ok(())
    }
}

/// One `hostname pattern -> function type` mapping.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MappingRule {
    pub pattern: String,
    pub function_type: String,
    /// Cap on distinct hostnames bound through this rule.
    pub max_instances: u32,
    pub external_policy: Option<ExternalConnPolicy>,
}

impl MappingRule {
    pub fn new(pattern: impl Into<String>, function_type: impl Into<String>) -> Self {
        MappingRule {
            pattern: pattern.into(),
            function_type: function_type.into(),
            max_instances: DEFAULT_MAX_INSTANCES,
            external_policy: None,
        }
    }

    pub fn matches(&self, hostname: &str) -> bool {
        glob_match(&self.pattern, hostname)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TimingParams {
    pub cold_start_latency: Duration,
    pub resume_latency: Duration,
    pub idle_debounce: Duration,
    pub keep_warm_period: Duration,
    pub sleep_ttl: Duration,
    pub connect_timeout: Duration,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            cold_start_latency: Duration::from_millis(200),
            resume_latency: Duration::from_millis(20),
            idle_debounce: Duration::from_millis(500),
            keep_warm_period: Duration::from_secs(60),
            sleep_ttl: Duration::from_secs(600),
            connect_timeout: Duration::from_secs(5),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct NetworkParams {
    pub subnet: Subnet,
    /// Delivery latency of a network notification in the simulated backend.
    pub rtt: Duration,
    /// Upper bound of seeded uniform jitter added to each delivery. Zero
    /// disables jitter.
    pub jitter: Duration,
}

impl Default for NetworkParams {
    fn default() -> Self {
        NetworkParams {
            subnet: Subnet::new(std::net::Ipv4Addr::new(10, 0, 0, 0), 16).expect("valid prefix"),
            rtt: Duration::from_millis(1),
            jitter: Duration::ZERO,
        }
    }
}

/// Resources of one function type. `max_lifetime = None` disables the
/// lifetime cap.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FunctionLimits {
    pub memory_mb: u32,
    pub vcpu: u32,
    pub max_lifetime: Option<Duration>,
}

impl Default for FunctionLimits {
    fn default() -> Self {
        FunctionLimits {
            memory_mb: MAX_MEMORY_MB,
            vcpu: MAX_VCPU,
            max_lifetime: Some(MAX_LIFETIME),
        }
    }
}

/// How the process backend launches a function type.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ProcessSpec {
    pub function_type: String,
    /// Command line; `{hostname}`, `{port}` and `{portmap}` are substituted.
    pub command: String,
    pub env: Vec<(String, String)>,
    pub workdir: Option<PathBuf>,
    pub readiness_timeout: Duration,
}

impl ProcessSpec {
    pub const PLACEHOLDERS: [&'static str; 3] = ["hostname", "port", "portmap"];

    pub fn new(function_type: impl Into<String>, command: impl Into<String>) -> Self {
        ProcessSpec {
            function_type: function_type.into(),
            command: command.into(),
            env: Vec::new(),
            workdir: None,
            readiness_timeout: DEFAULT_READINESS_TIMEOUT,
        }
    }

    /// Checks that every `{...}` in the template names a known placeholder.
    pub fn check_template(&self) -> Result<(), String> {
        if self.command.trim().is_empty() {
            return Err(format!("process `{}`: empty command", self.function_type));
        }
        let mut rest = self.command.as_str();
        while let Some(open) = rest.find('{') {
            let after = &rest[open + 1..];
            let close = after
                .find('}')
                .ok_or_else(|| format!("process `{}`: unterminated placeholder", self.function_type))?;
            let name = &after[..close];
            if !Self::PLACEHOLDERS.contains(&name) {
                return Err(format!(
                    "process `{}`: unknown placeholder `{{{name}}}`",
                    self.function_type
                ));
            }
            rest = &after[close + 1..];
        }
        if rest.contains('}') {
            return Err(format!("process `{}`: stray `}}`", self.function_type));
        }
        Ok(())
    }

    /// Expands the command template into an argument vector.
    pub fn render(&self, hostname: &str, port: u16, portmap: &str) -> Vec<String> {
        self.command
            .split_whitespace()
            .map(|word| {
                word.replace("{hostname}", hostname)
                    .replace("{port}", &port.to_string())
                    .replace("{portmap}", portmap)
            })
            .collect()
    }
}

/// Validated platform configuration.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Config {
    pub rules: Vec<MappingRule>,
    pub network: NetworkParams,
    pub timing: TimingParams,
    pub limits: BTreeMap<String, FunctionLimits>,
    pub default_external_policy: ExternalConnPolicy,
    pub max_restarts: u32,
    pub processes: BTreeMap<String, ProcessSpec>,
    /// Hostnames known ahead of time; the process backend publishes a
    /// gateway port for each.
    pub hosts: Vec<String>,
}

impl Config {
    /// A config with default parameters and the given rules. Not validated.
    pub fn with_rules(rules: Vec<MappingRule>) -> Self {
        Config {
            rules,
            network: NetworkParams::default(),
            timing: TimingParams::default(),
            limits: BTreeMap::new(),
            default_external_policy: ExternalConnPolicy::default(),
            max_restarts: DEFAULT_MAX_RESTARTS,
            processes: BTreeMap::new(),
            hosts: Vec::new(),
        }
    }

    /// First rule, in declaration order, whose pattern matches the whole
    /// hostname.
    pub fn resolve_function_type(&self, hostname: &str) -> Option<&MappingRule> {
        self.resolve_index(hostname).map(|i| &self.rules[i])
    }

    pub fn resolve_index(&self, hostname: &str) -> Option<usize> {
        self.rules.iter().position(|r| r.matches(hostname))
    }

    pub fn limits_for(&self, function_type: &str) -> FunctionLimits {
        self.limits.get(function_type).copied().unwrap_or_default()
    }

    /// Policy for a host, honoring a per-rule override.
    pub fn external_policy_for(&self, hostname: &str) -> ExternalConnPolicy {
        self.resolve_function_type(hostname)
            .and_then(|r| r.external_policy)
            .unwrap_or(self.default_external_policy)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let fail = |m: String| Err(ConfigError::Validation(m));
        if self.rules.is_empty() {
            return fail("rules non-empty: at least one [rule] is required".into());
        }
        let mut seen = std::collections::BTreeSet::new();
        for rule in &self.rules {
            if !is_valid_pattern(&rule.pattern) {
                return fail(format!("invalid hostname pattern `{}`", rule.pattern));
            }
            if rule.function_type.is_empty() {
                return fail(format!("rule `{}` has an empty function_type", rule.pattern));
            }
            if rule.max_instances == 0 {
                return fail(format!("rule `{}`: max_instances must be positive", rule.pattern));
            }
            if !seen.insert(rule.pattern.as_str()) {
                return fail(format!("duplicate rule pattern `{}`", rule.pattern));
            }
            if let Some(p) = rule.external_policy {
                check_policy(&p)?;
            }
        }
        check_policy(&self.default_external_policy)?;

        let t = &self.timing;
        let timings = [
            ("cold_start_latency", t.cold_start_latency),
            ("resume_latency", t.resume_latency),
            ("idle_debounce", t.idle_debounce),
            ("keep_warm_period", t.keep_warm_period),
            ("sleep_ttl", t.sleep_ttl),
            ("connect_timeout", t.connect_timeout),
        ];
        for (name, d) in timings {
            if d.is_zero() {
                return fail(format!("timing `{name}` must be strictly positive"));
            }
        }
        if t.resume_latency >= t.cold_start_latency {
            return fail("resume_latency must be shorter than cold_start_latency".into());
        }
        if t.keep_warm_period >= t.sleep_ttl {
            return fail("keep_warm_period must be shorter than sleep_ttl".into());
        }

        let total: u64 = self.rules.iter().map(|r| u64::from(r.max_instances)).sum();
        if total > self.network.subnet.capacity() {
            return fail(format!(
                "subnet {} holds {} addresses but rules allow {} instances",
                self.network.subnet,
                self.network.subnet.capacity(),
                total
            ));
        }

        for (ft, lim) in &self.limits {
            if lim.memory_mb == 0 || lim.memory_mb > MAX_MEMORY_MB {
                return fail(format!("limits `{ft}`: memory_mb must be in 1..={MAX_MEMORY_MB}"));
            }
            if lim.vcpu == 0 || lim.vcpu > MAX_VCPU {
                return fail(format!("limits `{ft}`: vcpu must be in 1..={MAX_VCPU}"));
            }
            if lim.max_lifetime.is_some_and(|d| d.is_zero()) {
                return fail(format!("limits `{ft}`: max_lifetime must be positive"));
            }
        }
        for spec in self.processes.values() {
            spec.check_template().map_err(ConfigError::Validation)?;
            if spec.readiness_timeout.is_zero() {
                return fail(format!("process `{}`: readiness_timeout must be positive", spec.function_type));
            }
        }
        for host in &self.hosts {
            if !is_valid_hostname(host) {
                return fail(format!("[hosts]: invalid hostname `{host}`"));
            }
            if self.resolve_index(host).is_none() {
                return fail(format!("[hosts]: `{host}` matches no rule"));
            }
        }
        Ok(())
    }

    /// Renders the canonical document form; `parse_config` reads it back to
    /// an equal `Config`.
    pub fn to_document(&self) -> String {
        parse::render(self)
    }
}

fn check_policy(p: &ExternalConnPolicy) -> Result<(), ConfigError> {
    if let ExternalMode::WarmFor(d) = p.mode {
        if d.is_zero() {
            return Err(ConfigError::Validation("warm-for duration must be positive".into()));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn rules(pairs: &[(&str, &str)]) -> Config {
        Config::with_rules(pairs.iter().map(|(p, f)| MappingRule::new(*p, *f)).collect())
    }

    #[test]
    fn first_match_wins() {
        let c = rules(&[("db-*", "dbnode"), ("*", "generic")]);
        assert_eq!(c.resolve_function_type("db-3").unwrap().function_type, "dbnode");
        assert_eq!(c.resolve_function_type("web-1").unwrap().function_type, "generic");

        let c = rules(&[("*", "generic"), ("db-*", "dbnode")]);
        assert_eq!(c.resolve_function_type("db-3").unwrap().function_type, "generic");
    }

    #[test]
    fn no_match_is_none() {
        let c = rules(&[("db-*", "dbnode")]);
        assert!(c.resolve_function_type("cache-1").is_none());
    }

    #[test]
    fn timing_invariants_enforced() {
        let mut c = rules(&[("*", "g")]);
        assert!(c.validate().is_ok());
        c.timing.resume_latency = c.timing.cold_start_latency;
        assert!(c.validate().is_err());
        c.timing = TimingParams::default();
        c.timing.keep_warm_period = c.timing.sleep_ttl;
        assert!(c.validate().is_err());
        c.timing = TimingParams::default();
        c.timing.idle_debounce = Duration::ZERO;
        assert!(c.validate().is_err());
    }

    #[test]
    fn subnet_must_fit_instances() {
        let mut c = rules(&[("*", "g")]);
        c.network.subnet = "10.0.0.0/24".parse().unwrap();
        c.rules[0].max_instances = 254;
        assert!(c.validate().is_ok());
        c.rules[0].max_instances = 255;
        assert!(c.validate().is_err());
    }

    #[test]
    fn placeholder_checks() {
        let ok = ProcessSpec::new("echo", "python3 srv.py {port} --name {hostname}");
        assert!(ok.check_template().is_ok());
        assert_eq!(
            ok.render("web-1", 4000, "/tmp/map"),
            ["python3", "srv.py", "4000", "--name", "web-1"]
        );
        assert!(ProcessSpec::new("e", "srv {nope}").check_template().is_err());
        assert!(ProcessSpec::new("e", "srv {port").check_template().is_err());
        assert!(ProcessSpec::new("e", "   ").check_template().is_err());
    }
}
