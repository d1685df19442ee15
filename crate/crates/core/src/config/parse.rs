use std::fmt::Write as _;
use std::path::PathBuf;

use super::{
    Config, ConfigError, ExternalConnPolicy, ExternalMode, FunctionLimits, MappingRule, ProcessSpec,
};
use crate::time::{format_duration, parse_duration};

enum Section {
    None,
    Network,
    Timing,
    Policy,
    Rule(usize),
    Limits(String),
    Process(String),
    Hosts,
}

struct Partial {
    pattern: Option<String>,
    function_type: Option<String>,
    max_instances: u32,
    external_policy: Option<ExternalConnPolicy>,
    line: usize,
}

fn syntax(line: usize, message: impl Into<String>) -> ConfigError {
    ConfigError::Syntax {
        line,
        message: message.into(),
    }
}

/// Parses and validates a configuration document.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let mut config = Config::with_rules(Vec::new());
    let mut rules: Vec<Partial> = Vec::new();
    let mut section = Section::None;

    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }

        if let Some(header) = line.strip_prefix('[') {
            let header = header
                .strip_suffix(']')
                .ok_or_else(|| syntax(lineno, "unterminated section header"))?;
            let mut words = header.split_whitespace();
            let name = words.next().unwrap_or("");
            let arg = words.next();
            if words.next().is_some() {
                return Err(syntax(lineno, "section header takes at most one argument"));
            }
            section = match (name, arg) {
                ("network", None) => Section::Network,
                ("timing", None) => Section::Timing,
                ("policy", None) => Section::Policy,
                ("hosts", None) => Section::Hosts,
                ("rule", None) => {
                    rules.push(Partial {
                        pattern: None,
                        function_type: None,
                        max_instances: super::DEFAULT_MAX_INSTANCES,
                        external_policy: None,
                        line: lineno,
                    });
                    Section::Rule(rules.len() - 1)
                }
                ("limits", Some(ft)) => {
                    config.limits.entry(ft.to_string()).or_default();
                    Section::Limits(ft.to_string())
                }
                ("process", Some(ft)) => {
                    if config.processes.contains_key(ft) {
                        return Err(syntax(lineno, format!("duplicate [process {ft}]")));
                    }
                    config
                        .processes
                        .insert(ft.to_string(), ProcessSpec::new(ft, String::new()));
                    Section::Process(ft.to_string())
                }
                _ => return Err(syntax(lineno, format!("unknown section `[{header}]`"))),
            };
            continue;
        }

        if let Section::Hosts = section {
            config.hosts.push(line.to_string());
            continue;
        }

        let (key, value) = line
            .split_once('=')
            .map(|(k, v)| (k.trim(), v.trim()))
            .ok_or_else(|| syntax(lineno, "expected `key = value`"))?;
        let dur = || parse_duration(value).ok_or_else(|| syntax(lineno, format!("invalid duration `{value}`")));
        let int = || {
            value
                .parse::<u32>()
                .map_err(|_| syntax(lineno, format!("invalid integer `{value}`")))
        };
        let unknown = || syntax(lineno, format!("unknown key `{key}`"));

        match &section {
            Section::None => return Err(syntax(lineno, "key outside of any section")),
            Section::Hosts => unreachable!(),
            Section::Network => match key {
                "subnet" => config.network.subnet = value.parse().map_err(|m: String| syntax(lineno, m))?,
                "rtt" => config.network.rtt = dur()?,
                "jitter" => config.network.jitter = dur()?,
                _ => return Err(unknown()),
            },
            Section::Timing => {
                let t = &mut config.timing;
                let slot = match key {
                    "cold_start_latency" => &mut t.cold_start_latency,
                    "resume_latency" => &mut t.resume_latency,
                    "idle_debounce" => &mut t.idle_debounce,
                    "keep_warm_period" => &mut t.keep_warm_period,
                    "sleep_ttl" => &mut t.sleep_ttl,
                    "connect_timeout" => &mut t.connect_timeout,
                    _ => return Err(unknown()),
                };
                *slot = dur()?;
            }
            Section::Policy => match key {
                "external_policy" => {
                    config.default_external_policy = parse_policy(value).map_err(|m| syntax(lineno, m))?
                }
                "max_restarts" => config.max_restarts = int()?,
                _ => return Err(unknown()),
            },
            Section::Rule(i) => {
                let rule = &mut rules[*i];
                match key {
                    "pattern" => rule.pattern = Some(value.to_string()),
                    "function_type" => rule.function_type = Some(value.to_string()),
                    "max_instances" => rule.max_instances = int()?,
                    "external_policy" => {
                        rule.external_policy = Some(parse_policy(value).map_err(|m| syntax(lineno, m))?)
                    }
                    _ => return Err(unknown()),
                }
            }
            Section::Limits(ft) => {
                let lim: &mut FunctionLimits = config.limits.get_mut(ft).expect("section registered");
                match key {
                    "memory_mb" => lim.memory_mb = int()?,
                    "vcpu" => lim.vcpu = int()?,
                    "max_lifetime" => {
                        lim.max_lifetime = if value == "none" { None } else { Some(dur()?) }
                    }
                    _ => return Err(unknown()),
                }
            }
            Section::Process(ft) => {
                let spec = config.processes.get_mut(ft).expect("section registered");
                match key {
                    "command" => spec.command = value.to_string(),
                    "env" => {
                        let (k, v) = value
                            .split_once('=')
                            .ok_or_else(|| syntax(lineno, "env expects `NAME=value`"))?;
                        spec.env.push((k.trim().to_string(), v.trim().to_string()));
                    }
                    "workdir" => spec.workdir = Some(PathBuf::from(value)),
                    "readiness_timeout" => spec.readiness_timeout = dur()?,
                    _ => return Err(unknown()),
                }
            }
        }
    }

    for p in rules {
        let pattern = p
            .pattern
            .ok_or_else(|| syntax(p.line, "[rule] is missing `pattern`"))?;
        let function_type = p
            .function_type
            .ok_or_else(|| syntax(p.line, "[rule] is missing `function_type`"))?;
        config.rules.push(MappingRule {
            pattern,
            function_type,
            max_instances: p.max_instances,
            external_policy: p.external_policy,
        });
    }

    config.validate()?;
    Ok(config)
}

/// `keep-running | preemptible | warm-for <duration>`, optionally followed by
/// `by-role`.
pub(super) fn parse_policy(text: &str) -> Result<ExternalConnPolicy, String> {
    let words: Vec<&str> = text.split_whitespace().collect();
    let (mode, rest) = match words.as_slice() {
        ["keep-running", rest @ ..] => (ExternalMode::KeepRunning, rest),
        ["preemptible", rest @ ..] => (ExternalMode::Preemptible, rest),
        ["warm-for", d, rest @ ..] => {
            let d = parse_duration(d).ok_or_else(|| format!("invalid duration `{d}`"))?;
            (ExternalMode::WarmFor(d), rest)
        }
        _ => return Err(format!("invalid external policy `{text}`")),
    };
    match rest {
        [] => Ok(ExternalConnPolicy::new(mode)),
        ["by-role"] => Ok(ExternalConnPolicy::new(mode).by_role()),
        _ => Err(format!("invalid external policy `{text}`")),
    }
}

pub(super) fn render(c: &Config) -> String {
    let mut out = String::new();
    let t = &c.timing;
    let _ = writeln!(out, "[network]");
    let _ = writeln!(out, "subnet = {}", c.network.subnet);
    let _ = writeln!(out, "rtt = {}", format_duration(c.network.rtt));
    let _ = writeln!(out, "jitter = {}", format_duration(c.network.jitter));
    let _ = writeln!(out, "\n[timing]");
    for (k, v) in [
        ("cold_start_latency", t.cold_start_latency),
        ("resume_latency", t.resume_latency),
        ("idle_debounce", t.idle_debounce),
        ("keep_warm_period", t.keep_warm_period),
        ("sleep_ttl", t.sleep_ttl),
        ("connect_timeout", t.connect_timeout),
    ] {
        let _ = writeln!(out, "{k} = {}", format_duration(v));
    }
    let _ = writeln!(out, "\n[policy]");
    let _ = writeln!(out, "external_policy = {}", c.default_external_policy);
    let _ = writeln!(out, "max_restarts = {}", c.max_restarts);
    for r in &c.rules {
        let _ = writeln!(out, "\n[rule]");
        let _ = writeln!(out, "pattern = {}", r.pattern);
        let _ = writeln!(out, "function_type = {}", r.function_type);
        let _ = writeln!(out, "max_instances = {}", r.max_instances);
        if let Some(p) = r.external_policy {
            let _ = writeln!(out, "external_policy = {p}");
        }
    }
    for (ft, lim) in &c.limits {
        let _ = writeln!(out, "\n[limits {ft}]");
        let _ = writeln!(out, "memory_mb = {}", lim.memory_mb);
        let _ = writeln!(out, "vcpu = {}", lim.vcpu);
        match lim.max_lifetime {
            Some(d) => {
                let _ = writeln!(out, "max_lifetime = {}", format_duration(d));
            }
            None => {
                let _ = writeln!(out, "max_lifetime = none");
            }
        }
    }
    for (ft, spec) in &c.processes {
        let _ = writeln!(out, "\n[process {ft}]");
        let _ = writeln!(out, "command = {}", spec.command);
        for (k, v) in &spec.env {
            let _ = writeln!(out, "env = {k}={v}");
        }
        if let Some(w) = &spec.workdir {
            let _ = writeln!(out, "workdir = {}", w.display());
        }
        let _ = writeln!(out, "readiness_timeout = {}", format_duration(spec.readiness_timeout));
    }
    if !c.hosts.is_empty() {
        let _ = writeln!(out, "\n[hosts]");
        for h in &c.hosts {
            let _ = writeln!(out, "{h}");
        }
    }
    out
}
