//! Scenario documents: scripted application behavior per function type plus
//! timed stimuli.
//!
//! ```text
//! [script web]
//! on_start:
//!   listen 80
//! on_connection:
//!   connect db-1
//!   send last 512
//! on_data:
//!   close cur
//!   declare_idle
//!
//! [stimuli]
//! at 0ms connect web-1
//! at 2s send 1 128
//! at 5s fault web-1
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::time::Duration;

use thiserror::Error;

use crate::time::{format_duration, parse_duration};

/// Which connection a primitive acts on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConnRef {
    /// The connection that triggered the running handler.
    Cur,
    /// The most recent connection this instance opened.
    Last,
    /// The most recent connection this instance accepted.
    Accepted,
}

impl ConnRef {
    pub fn as_str(self) -> &'static str {
        match self {
            ConnRef::Cur => "cur",
            ConnRef::Last => "last",
            ConnRef::Accepted => "accepted",
        }
    }

    fn parse(s: &str) -> Option<ConnRef> {
        match s {
            "cur" => Some(ConnRef::Cur),
            "last" => Some(ConnRef::Last),
            "accepted" => Some(ConnRef::Accepted),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Primitive {
    /// Blocks the handler until the connection is established. A failed
    /// connect ends the handler.
    Connect(String),
    Send(ConnRef, u64),
    Close(ConnRef),
    Sleep(Duration),
    /// Runs `on_timer` once after the delay; re-arming replaces the previous
    /// timer.
    SetTimer(Duration),
    Exit,
    DeclareIdle,
    Listen(u16),
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Primitive::Connect(h) => write!(f, "connect {h}"),
            Primitive::Send(r, n) => write!(f, "send {} {n}", r.as_str()),
            Primitive::Close(r) => write!(f, "close {}", r.as_str()),
            Primitive::Sleep(d) => write!(f, "sleep {}", format_duration(*d)),
            Primitive::SetTimer(d) => write!(f, "set_timer {}", format_duration(*d)),
            Primitive::Exit => f.write_str("exit"),
            Primitive::DeclareIdle => f.write_str("declare_idle"),
            Primitive::Listen(p) => write!(f, "listen {p}"),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum HandlerKind {
    OnStart,
    OnConnection,
    OnData,
    OnTimer,
}

impl HandlerKind {
    pub const ALL: [HandlerKind; 4] = [
        HandlerKind::OnStart,
        HandlerKind::OnConnection,
        HandlerKind::OnData,
        HandlerKind::OnTimer,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HandlerKind::OnStart => "on_start",
            HandlerKind::OnConnection => "on_connection",
            HandlerKind::OnData => "on_data",
            HandlerKind::OnTimer => "on_timer",
        }
    }
}

/// Behavior of one function type. Missing handlers do nothing.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Script {
    pub handlers: BTreeMap<HandlerKind, Vec<Primitive>>,
}

impl Script {
    pub fn handler(&self, kind: HandlerKind) -> &[Primitive] {
        self.handlers.get(&kind).map_or(&[], Vec::as_slice)
    }

    pub fn on(mut self, kind: HandlerKind, program: Vec<Primitive>) -> Self {
        self.handlers.insert(kind, program);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StimulusKind {
    /// A new external client connects to the hostname. Clients are numbered
    /// from 1 in stimulus order.
    Connect(String),
    Fault(String),
    /// External client `k` writes bytes on its connection.
    Send(u32, u64),
    /// External client `k` closes its connection.
    Close(u32),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Stimulus {
    pub at: Duration,
    pub kind: StimulusKind,
}

impl Stimulus {
    pub fn connect(at: Duration, host: &str) -> Self {
        Stimulus {
            at,
            kind: StimulusKind::Connect(host.to_string()),
        }
    }

    /// Crashes the host's current instance at `at`.
    pub fn inject_fault(host: &str, at: Duration) -> Self {
        Stimulus {
            at,
            kind: StimulusKind::Fault(host.to_string()),
        }
    }

    pub fn send(at: Duration, client: u32, bytes: u64) -> Self {
        Stimulus {
            at,
            kind: StimulusKind::Send(client, bytes),
        }
    }

    pub fn close(at: Duration, client: u32) -> Self {
        Stimulus {
            at,
            kind: StimulusKind::Close(client),
        }
    }
}

impl fmt::Display for Stimulus {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "at {} ", format_duration(self.at))?;
        match &self.kind {
            StimulusKind::Connect(h) => write!(f, "connect {h}"),
            StimulusKind::Fault(h) => write!(f, "fault {h}"),
            StimulusKind::Send(k, n) => write!(f, "send {k} {n}"),
            StimulusKind::Close(k) => write!(f, "close {k}"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Scenario {
    pub scripts: BTreeMap<String, Script>,
    pub stimuli: Vec<Stimulus>,
}

impl Scenario {
    pub fn script(&self, function_type: &str) -> Option<&Script> {
        self.scripts.get(function_type)
    }

    /// Hostnames named by stimuli.
    pub fn hostnames(&self) -> impl Iterator<Item = &str> {
        self.stimuli.iter().filter_map(|s| match &s.kind {
            StimulusKind::Connect(h) | StimulusKind::Fault(h) => Some(h.as_str()),
            _ => None,
        })
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (ft, script) in &self.scripts {
            writeln!(f, "[script {ft}]")?;
            for (kind, program) in &script.handlers {
                writeln!(f, "{}:", kind.as_str())?;
                for p in program {
                    writeln!(f, "  {p}")?;
                }
            }
            writeln!(f)?;
        }
        writeln!(f, "[stimuli]")?;
        for s in &self.stimuli {
            writeln!(f, "{s}")?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("scenario line {line}: {message}")]
pub struct ScenarioError {
    pub line: usize,
    pub message: String,
}

fn err(line: usize, message: impl Into<String>) -> ScenarioError {
    ScenarioError {
        line,
        message: message.into(),
    }
}

fn duration(line: usize, s: &str) -> Result<Duration, ScenarioError> {
    parse_duration(s).ok_or_else(|| err(line, format!("bad duration `{s}`")))
}

fn number<T: std::str::FromStr>(line: usize, s: &str) -> Result<T, ScenarioError> {
    s.parse().map_err(|_| err(line, format!("bad number `{s}`")))
}

fn conn_ref(line: usize, s: &str) -> Result<ConnRef, ScenarioError> {
    ConnRef::parse(s).ok_or_else(|| err(line, format!("expected cur, last or accepted, found `{s}`")))
}

fn parse_primitive(line: usize, words: &[&str]) -> Result<Primitive, ScenarioError> {
    Ok(match words {
        ["connect", target] => Primitive::Connect(target.to_string()),
        ["send", r, n] => Primitive::Send(conn_ref(line, r)?, number(line, n)?),
        ["close", r] => Primitive::Close(conn_ref(line, r)?),
        ["sleep", d] => Primitive::Sleep(duration(line, d)?),
        ["set_timer", d] => Primitive::SetTimer(duration(line, d)?),
        ["exit"] => Primitive::Exit,
        ["declare_idle"] => Primitive::DeclareIdle,
        ["listen", p] => Primitive::Listen(number(line, p)?),
        _ => return Err(err(line, format!("unknown primitive `{}`", words.join(" ")))),
    })
}

fn parse_stimulus(line: usize, words: &[&str]) -> Result<Stimulus, ScenarioError> {
    let ["at", t, rest @ ..] = words else {
        return Err(err(line, "stimulus must start with `at <time>`"));
    };
    let at = duration(line, t)?;
    let kind = match rest {
        ["connect", h] => StimulusKind::Connect(h.to_string()),
        ["fault", h] => StimulusKind::Fault(h.to_string()),
        ["send", k, n] => StimulusKind::Send(number(line, k)?, number(line, n)?),
        ["close", k] => StimulusKind::Close(number(line, k)?),
        _ => return Err(err(line, format!("unknown stimulus `{}`", rest.join(" ")))),
    };
    Ok(Stimulus { at, kind })
}

enum Section {
    None,
    Script(String, Option<HandlerKind>),
    Stimuli,
}

pub fn parse_scenario(text: &str) -> Result<Scenario, ScenarioError> {
    let mut sc = Scenario::default();
    let mut section = Section::None;
    for (idx, raw) in text.lines().enumerate() {
        let lineno = idx + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if let Some(h) = line.strip_prefix('[') {
            let h = h.strip_suffix(']').ok_or_else(|| err(lineno, "unterminated section header"))?;
            let words: Vec<&str> = h.split_whitespace().collect();
            section = match words[..] {
                ["script", ft] => {
                    if sc.scripts.insert(ft.to_string(), Script::default()).is_some() {
                        return Err(err(lineno, format!("duplicate [script {ft}]")));
                    }
                    Section::Script(ft.to_string(), None)
                }
                ["stimuli"] => Section::Stimuli,
                _ => return Err(err(lineno, format!("unknown section `[{h}]`"))),
            };
            continue;
        }
        let words: Vec<&str> = line.split_whitespace().collect();
        match &mut section {
            Section::None => return Err(err(lineno, "content outside a section")),
            Section::Stimuli => sc.stimuli.push(parse_stimulus(lineno, &words)?),
            Section::Script(ft, current) => {
                if let Some(name) = line.strip_suffix(':') {
                    let kind = HandlerKind::ALL
                        .into_iter()
                        .find(|k| k.as_str() == name)
                        .ok_or_else(|| err(lineno, format!("unknown handler `{name}`")))?;
                    let script = sc.scripts.get_mut(ft.as_str()).expect("inserted at header");
                    if script.handlers.insert(kind, Vec::new()).is_some() {
                        return Err(err(lineno, format!("duplicate handler `{name}`")));
                    }
                    *current = Some(kind);
                    continue;
                }
                let kind = current.ok_or_else(|| err(lineno, "primitive before any handler"))?;
                let p = parse_primitive(lineno, &words)?;
                sc.scripts
                    .get_mut(ft.as_str())
                    .expect("inserted at header")
                    .handlers
                    .get_mut(&kind)
                    .expect("inserted at handler line")
                    .push(p);
            }
        }
    }
    Ok(sc)
}
