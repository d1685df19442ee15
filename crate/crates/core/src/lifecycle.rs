//! The host-function lifecycle as a pure state machine.
//!
//! [`apply_event`] consumes a [`HostRecord`] and a [`LifecycleEvent`] and
//! returns the next record together with the [`Action`]s a function manager
//! has to carry out. It never reads a clock and never touches a backend.
//!
//! ```text
//!   Unallocated --connect--> Starting --started--> Running --idle--> Sleeping
//!                               ^  |                 |  ^              |  |
//!                     restart   |  | failed   exit/  |  +--resumed-- Resuming
//!                               |  v          fault  v                 |  ttl
//!                              Failed <------------ Stopped      Terminated
//! ```

use std::collections::VecDeque;
use std::fmt;
use std::net::Ipv4Addr;
use std::time::Duration;

use crate::config::{ExternalConnPolicy, ExternalMode, TimingParams};
use crate::time::Timestamp;

/// Per-host bound on connections waiting for a start or resume.
pub const ADMISSION_QUEUE_CAPACITY: usize = 1024;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConnId(pub u64);

impl fmt::Display for ConnId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum HostState {
    Unallocated,
    Starting,
    Running,
    Sleeping,
    Resuming,
    Stopped,
    Terminated,
    Failed,
}

impl HostState {
    pub const ALL: [HostState; 8] = [
        HostState::Unallocated,
        HostState::Starting,
        HostState::Running,
        HostState::Sleeping,
        HostState::Resuming,
        HostState::Stopped,
        HostState::Terminated,
        HostState::Failed,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            HostState::Unallocated => "unallocated",
            HostState::Starting => "starting",
            HostState::Running => "running",
            HostState::Sleeping => "sleeping",
            HostState::Resuming => "resuming",
            HostState::Stopped => "stopped",
            HostState::Terminated => "terminated",
            HostState::Failed => "failed",
        }
    }

    pub fn parse(s: &str) -> Option<HostState> {
        HostState::ALL.into_iter().find(|h| h.as_str() == s)
    }

    pub fn is_terminal(self) -> bool {
        matches!(self, HostState::Stopped | HostState::Terminated)
    }

    /// States in which an instance exists on the backend.
    pub fn has_instance(self) -> bool {
        matches!(
            self,
            HostState::Starting | HostState::Running | HostState::Sleeping | HostState::Resuming
        )
    }
}

impl fmt::Display for HostState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum EndpointRole {
    /// The host initiated the connection.
    Active,
    /// The host accepted the connection.
    Passive,
}

impl EndpointRole {
    pub fn as_str(self) -> &'static str {
        match self {
            EndpointRole::Active => "active",
            EndpointRole::Passive => "passive",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExternalConn {
    pub conn: ConnId,
    pub role: EndpointRole,
}

/// Timer kinds, declared in their tie-break order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TimerKind {
    ConnectTimeout,
    IdleDebounce,
    KeepWarm,
    SleepTtl,
}

impl TimerKind {
    pub const ALL: [TimerKind; 4] = [
        TimerKind::ConnectTimeout,
        TimerKind::IdleDebounce,
        TimerKind::KeepWarm,
        TimerKind::SleepTtl,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            TimerKind::ConnectTimeout => "connect-timeout",
            TimerKind::IdleDebounce => "idle-debounce",
            TimerKind::KeepWarm => "keep-warm",
            TimerKind::SleepTtl => "sleep-ttl",
        }
    }

    /// The event delivered to the state machine when this timer fires.
    pub fn event(self) -> LifecycleEvent {
        match self {
            TimerKind::ConnectTimeout => LifecycleEvent::ConnectTimeoutElapsed,
            TimerKind::IdleDebounce => LifecycleEvent::IdleDebounceElapsed,
            TimerKind::KeepWarm => LifecycleEvent::KeepWarmTimer,
            TimerKind::SleepTtl => LifecycleEvent::SleepTtlExpired,
        }
    }
}

/// Why a connection was refused. Rendered into the app-visible
/// `connection-failed` record.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RejectReason {
    UnknownHost,
    HostTerminated,
    HostStopped,
    HostFailed,
    StartFailed,
    AdmissionTimeout,
    QueueFull,
    SubnetExhausted,
    InstanceLimit,
    MalformedHostname,
}

impl RejectReason {
    pub fn as_str(self) -> &'static str {
        match self {
            RejectReason::UnknownHost => "unknown-host",
            RejectReason::HostTerminated => "host-terminated",
            RejectReason::HostStopped => "host-stopped",
            RejectReason::HostFailed => "host-failed",
            RejectReason::StartFailed => "start-failed",
            RejectReason::AdmissionTimeout => "admission-timeout",
            RejectReason::QueueFull => "queue-full",
            RejectReason::SubnetExhausted => "subnet-exhausted",
            RejectReason::InstanceLimit => "instance-limit",
            RejectReason::MalformedHostname => "malformed-hostname",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Per-hostname lifecycle record.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostRecord {
    pub hostname: String,
    pub address: Ipv4Addr,
    /// Incremented every time a new instance is started for this hostname.
    pub instance_id: u64,
    pub state: HostState,
    pub state_entered_at: Timestamp,
    pub pending_connections: VecDeque<(ConnId, Timestamp)>,
    /// Established connections to other hosts in the virtual network.
    pub open_connections: u32,
    pub external_connections: Vec<ExternalConn>,
    pub idle_since: Option<Timestamp>,
    pub restart_count: u32,
    /// The current resume was issued by the keep-warm timer, not by traffic.
    pub keep_warm_probe: bool,
    /// First entry into Sleeping since the last genuine activity; the sleep
    /// TTL is measured from here and is not reset by keep-warm probes.
    pub dormant_since: Option<Timestamp>,
}

impl HostRecord {
    pub fn new(hostname: impl Into<String>, address: Ipv4Addr) -> Self {
        HostRecord {
            hostname: hostname.into(),
            address,
            instance_id: 0,
            state: HostState::Unallocated,
            state_entered_at: Timestamp::ZERO,
            pending_connections: VecDeque::new(),
            open_connections: 0,
            external_connections: Vec::new(),
            idle_since: None,
            restart_count: 0,
            keep_warm_probe: false,
            dormant_since: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum LifecycleEvent {
    ConnectRequested(ConnId),
    StartCompleted,
    StartFailed(String),
    ResumeCompleted,
    AppActive,
    AppIdle,
    IdleDebounceElapsed,
    KeepWarmTimer,
    SleepTtlExpired,
    ConnectTimeoutElapsed,
    AppExited,
    Fault,
    AdminReset,
}

impl LifecycleEvent {
    pub fn name(&self) -> &'static str {
        match self {
            LifecycleEvent::ConnectRequested(_) => "connect-requested",
            LifecycleEvent::StartCompleted => "start-completed",
            LifecycleEvent::StartFailed(_) => "start-failed",
            LifecycleEvent::ResumeCompleted => "resume-completed",
            LifecycleEvent::AppActive => "app-active",
            LifecycleEvent::AppIdle => "app-idle",
            LifecycleEvent::IdleDebounceElapsed => "idle-debounce-elapsed",
            LifecycleEvent::KeepWarmTimer => "keep-warm-timer",
            LifecycleEvent::SleepTtlExpired => "sleep-ttl-expired",
            LifecycleEvent::ConnectTimeoutElapsed => "connect-timeout-elapsed",
            LifecycleEvent::AppExited => "app-exited",
            LifecycleEvent::Fault => "fault",
            LifecycleEvent::AdminReset => "admin-reset",
        }
    }
}

/// A trace entry produced by the state machine; the orchestrator stamps it
/// with time, host and instance.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceNote {
    pub kind: &'static str,
    pub details: Vec<(&'static str, String)>,
}

impl TraceNote {
    fn new(kind: &'static str, details: Vec<(&'static str, String)>) -> Self {
        TraceNote { kind, details }
    }
}

/// Side-effect descriptions. The state machine only returns these.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Action {
    StartInstance,
    SuspendInstance,
    ResumeInstance,
    ReleaseInstance,
    ScheduleTimer(TimerKind, Duration),
    CancelTimer(TimerKind),
    CancelAllTimers,
    AdmitConnection(ConnId),
    RejectConnection(ConnId, RejectReason),
    /// Every established connection of the instance is reset.
    ResetConnections,
    /// An external connection is dropped by a preemptive suspension.
    LoseConnection(ConnId),
    EmitTrace(TraceNote),
}

/// Parameters the transition function needs from the configuration.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LifecycleParams {
    pub timing: TimingParams,
    pub max_restarts: u32,
    pub external_policy: ExternalConnPolicy,
}

impl Default for LifecycleParams {
    fn default() -> Self {
        LifecycleParams {
            timing: TimingParams::default(),
            max_restarts: crate::config::DEFAULT_MAX_RESTARTS,
            external_policy: ExternalConnPolicy::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AdmissionDecision {
    /// Destination is running; set the connection up now.
    Proceed,
    /// Destination is sleeping; resume it, then set up.
    ResumeThenProceed,
    /// Destination has never run; start an instance, then set up.
    InstantiateThenProceed,
    /// A start or resume is already in flight; wait for it.
    Enqueue,
    Fail(RejectReason),
}

/// Admission case analysis for a connection to a host in `dest_state`.
pub fn admit_connection(dest_state: HostState, dest_resolvable: bool) -> AdmissionDecision {
    use AdmissionDecision::*;
    match dest_state {
        HostState::Running => Proceed,
        HostState::Sleeping => ResumeThenProceed,
        HostState::Terminated => Fail(RejectReason::HostTerminated),
        HostState::Unallocated if dest_resolvable => InstantiateThenProceed,
        HostState::Unallocated => Fail(RejectReason::UnknownHost),
        HostState::Starting | HostState::Resuming => Enqueue,
        HostState::Stopped => Fail(RejectReason::HostStopped),
        HostState::Failed => Fail(RejectReason::HostFailed),
    }
}

/// Outcome of checking a host's external connections before suspension.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum GateOutcome {
    Permit { lose: Vec<ConnId> },
    /// Some connection pins the host until it closes.
    Blocked,
    /// A warm-for window is still open; check again after this long.
    Defer(Duration),
}

/// Evaluates the external-connection policy for an idle running host.
pub fn gate_external(record: &HostRecord, policy: ExternalConnPolicy, now: Timestamp) -> GateOutcome {
    let idle_for = record.idle_since.map(|t| now.since(t)).unwrap_or(Duration::ZERO);
    let mut lose = Vec::new();
    let mut defer: Option<Duration> = None;
    for ext in &record.external_connections {
        if policy.distinguish_endpoint_role && ext.role == EndpointRole::Passive {
            return GateOutcome::Blocked;
        }
        match policy.mode {
            ExternalMode::KeepRunning => return GateOutcome::Blocked,
            ExternalMode::Preemptible => lose.push(ext.conn),
            ExternalMode::WarmFor(window) => {
                if idle_for >= window {
                    lose.push(ext.conn);
                } else {
                    defer = Some(window - idle_for);
                }
            }
        }
    }
    match defer {
        Some(d) => GateOutcome::Defer(d),
        None => GateOutcome::Permit { lose },
    }
}

/// Whether suspension is currently permitted by the external policy.
pub fn external_policy_gate(record: &HostRecord, policy: ExternalConnPolicy, now: Timestamp) -> bool {
    matches!(gate_external(record, policy, now), GateOutcome::Permit { .. })
}

struct Step<'a> {
    r: HostRecord,
    out: Vec<Action>,
    now: Timestamp,
    p: &'a LifecycleParams,
}

impl Step<'_> {
    fn emit(&mut self, a: Action) {
        self.out.push(a);
    }

    fn note(&mut self, kind: &'static str, details: Vec<(&'static str, String)>) {
        self.out.push(Action::EmitTrace(TraceNote::new(kind, details)));
    }

    fn goto(&mut self, to: HostState) {
        let from = self.r.state;
        self.r.state = to;
        self.r.state_entered_at = self.now;
        self.note(
            "state",
            vec![("from", from.as_str().into()), ("to", to.as_str().into())],
        );
    }

    fn ignore(&mut self, ev: &LifecycleEvent) {
        let state = self.r.state.as_str().to_string();
        self.note("ignored", vec![("event", ev.name().into()), ("state", state)]);
    }

    /// Traffic arrived: the host is no longer idle or dormant.
    fn mark_active(&mut self) {
        if self.r.idle_since.take().is_some() {
            self.emit(Action::CancelTimer(TimerKind::IdleDebounce));
        }
        self.r.dormant_since = None;
        self.r.keep_warm_probe = false;
    }

    fn enqueue(&mut self, conn: ConnId) {
        if self.r.pending_connections.len() >= ADMISSION_QUEUE_CAPACITY {
            self.emit(Action::RejectConnection(conn, RejectReason::QueueFull));
            return;
        }
        if self.r.pending_connections.is_empty() {
            let t = self.p.timing.connect_timeout;
            self.emit(Action::ScheduleTimer(TimerKind::ConnectTimeout, t));
        }
        self.r.pending_connections.push_back((conn, self.now));
    }

    fn admit_pending(&mut self) {
        if self.r.pending_connections.is_empty() {
            return;
        }
        self.emit(Action::CancelTimer(TimerKind::ConnectTimeout));
        while let Some((c, _)) = self.r.pending_connections.pop_front() {
            self.emit(Action::AdmitConnection(c));
        }
    }

    fn reject_pending(&mut self, reason: RejectReason) {
        while let Some((c, _)) = self.r.pending_connections.pop_front() {
            self.emit(Action::RejectConnection(c, reason));
        }
    }

    fn start_instance(&mut self) {
        self.r.instance_id += 1;
        self.emit(Action::StartInstance);
        self.goto(HostState::Starting);
    }

    fn on_connect(&mut self, conn: ConnId) {
        match admit_connection(self.r.state, true) {
            AdmissionDecision::Proceed => {
                self.mark_active();
                self.emit(Action::AdmitConnection(conn));
            }
            AdmissionDecision::InstantiateThenProceed => {
                self.start_instance();
                self.enqueue(conn);
            }
            AdmissionDecision::ResumeThenProceed => {
                self.mark_active();
                self.goto(HostState::Resuming);
                self.emit(Action::CancelTimer(TimerKind::KeepWarm));
                self.emit(Action::CancelTimer(TimerKind::SleepTtl));
                self.emit(Action::ResumeInstance);
                self.enqueue(conn);
            }
            AdmissionDecision::Enqueue => {
                if self.r.state == HostState::Resuming {
                    self.mark_active();
                }
                self.enqueue(conn);
            }
            AdmissionDecision::Fail(reason) => self.emit(Action::RejectConnection(conn, reason)),
        }
    }

    /// Instance lost: drop everything it held, then restart within budget.
    fn fail(&mut self, release: bool, reason: Option<&str>) {
        let had_pending = !self.r.pending_connections.is_empty();
        self.emit(Action::CancelAllTimers);
        if release {
            self.emit(Action::ReleaseInstance);
        }
        if release {
            self.emit(Action::ResetConnections);
        }
        self.r.open_connections = 0;
        self.r.external_connections.clear();
        self.r.idle_since = None;
        self.r.dormant_since = None;
        self.r.keep_warm_probe = false;
        self.goto(HostState::Failed);
        if let Some(reason) = reason {
            self.note("start-failed", vec![("reason", reason.to_string())]);
        }
        let why = if release {
            RejectReason::HostFailed
        } else {
            RejectReason::StartFailed
        };
        if had_pending {
            self.reject_pending(why);
        }
        if self.r.restart_count < self.p.max_restarts {
            self.r.restart_count += 1;
            self.start_instance();
        } else {
            self.goto(HostState::Terminated);
        }
    }

    fn enter_sleep(&mut self, lose: Vec<ConnId>) {
        for c in lose {
            self.r.external_connections.retain(|e| e.conn != c);
            self.emit(Action::LoseConnection(c));
        }
        let dormant = *self.r.dormant_since.get_or_insert(self.now);
        let ttl_left = (dormant + self.p.timing.sleep_ttl).since(self.now);
        self.r.keep_warm_probe = false;
        self.goto(HostState::Sleeping);
        self.emit(Action::SuspendInstance);
        self.emit(Action::ScheduleTimer(TimerKind::KeepWarm, self.p.timing.keep_warm_period));
        self.emit(Action::ScheduleTimer(TimerKind::SleepTtl, ttl_left));
    }

    fn on_idle_elapsed(&mut self, ev: &LifecycleEvent) {
        if self.r.idle_since.is_none() {
            self.ignore(ev);
            return;
        }
        if self.r.open_connections > 0 {
            let n = self.r.open_connections.to_string();
            self.note("suspend-blocked", vec![("connections", n), ("reason", "open-connections".into())]);
            return;
        }
        match gate_external(&self.r, self.p.external_policy, self.now) {
            GateOutcome::Permit { lose } => self.enter_sleep(lose),
            GateOutcome::Blocked => {
                let n = self.r.external_connections.len().to_string();
                self.note("suspend-blocked", vec![("connections", n), ("reason", "external".into())]);
            }
            GateOutcome::Defer(d) => {
                self.note("suspend-deferred", vec![("delay_us", crate::time::micros(d).to_string())]);
                self.emit(Action::ScheduleTimer(TimerKind::IdleDebounce, d));
            }
        }
    }

    fn on_connect_timeout(&mut self) {
        let limit = self.p.timing.connect_timeout;
        let now = self.now;
        let mut keep = VecDeque::new();
        let mut expired = Vec::new();
        for (c, at) in self.r.pending_connections.drain(..) {
            if now.since(at) >= limit {
                expired.push(c);
            } else {
                keep.push_back((c, at));
            }
        }
        self.r.pending_connections = keep;
        for c in expired {
            self.emit(Action::RejectConnection(c, RejectReason::AdmissionTimeout));
        }
        if let Some((_, oldest)) = self.r.pending_connections.front() {
            let left = (*oldest + limit).since(now);
            self.emit(Action::ScheduleTimer(TimerKind::ConnectTimeout, left));
        }
    }
}

/// Applies one event. Pairs the table does not cover are traced no-ops.
pub fn apply_event(
    record: HostRecord,
    event: &LifecycleEvent,
    now: Timestamp,
    params: &LifecycleParams,
) -> (HostRecord, Vec<Action>) {
    use HostState as S;
    use LifecycleEvent as E;

    let mut s = Step {
        r: record,
        out: Vec::new(),
        now,
        p: params,
    };
    match (s.r.state, event) {
        (_, E::ConnectRequested(c)) => s.on_connect(*c),

        (S::Starting, E::StartCompleted) => {
            s.r.idle_since = None;
            s.r.keep_warm_probe = false;
            s.goto(S::Running);
            s.admit_pending();
        }
        (S::Starting, E::StartFailed(reason)) => s.fail(false, Some(reason)),
        (S::Starting, E::Fault) => s.fail(true, None),
        (S::Starting | S::Resuming, E::ConnectTimeoutElapsed) => s.on_connect_timeout(),

        (S::Running, E::AppIdle) => {
            s.r.idle_since.get_or_insert(now);
            let d = s.p.timing.idle_debounce;
            s.emit(Action::ScheduleTimer(TimerKind::IdleDebounce, d));
        }
        (S::Running, E::AppActive) => s.mark_active(),
        (S::Running, E::IdleDebounceElapsed) => s.on_idle_elapsed(event),
        (S::Running, E::AppExited) => {
            s.emit(Action::CancelAllTimers);
            s.emit(Action::ReleaseInstance);
            s.reject_pending(RejectReason::HostStopped);
            s.r.idle_since = None;
            s.goto(S::Stopped);
        }

        (S::Sleeping, E::KeepWarmTimer) => {
            s.r.keep_warm_probe = true;
            s.goto(S::Resuming);
            s.emit(Action::CancelTimer(TimerKind::SleepTtl));
            s.emit(Action::ResumeInstance);
        }
        (S::Sleeping, E::SleepTtlExpired) => {
            s.emit(Action::CancelAllTimers);
            s.emit(Action::ReleaseInstance);
            s.goto(S::Terminated);
        }

        (S::Resuming, E::ResumeCompleted) => {
            s.goto(S::Running);
            s.admit_pending();
            if s.r.keep_warm_probe && s.r.idle_since.is_some() {
                let d = s.p.timing.idle_debounce;
                s.emit(Action::ScheduleTimer(TimerKind::IdleDebounce, d));
            }
        }

        (S::Running | S::Sleeping | S::Resuming, E::Fault) => s.fail(true, None),

        (S::Stopped | S::Terminated, E::AdminReset) => {
            s.r.restart_count = 0;
            s.r.idle_since = None;
            s.r.dormant_since = None;
            s.r.keep_warm_probe = false;
            s.goto(S::Unallocated);
        }

        _ => s.ignore(event),
    }
    (s.r, s.out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn params() -> LifecycleParams {
        LifecycleParams::default()
    }

    fn rec(state: HostState) -> HostRecord {
        let mut r = HostRecord::new("web-1", Ipv4Addr::new(10, 0, 0, 1));
        r.state = state;
        r
    }

    fn at(ms: u64) -> Timestamp {
        Timestamp(ms * 1000)
    }

    fn effects(actions: &[Action]) -> Vec<Action> {
        actions
            .iter()
            .filter(|a| !matches!(a, Action::EmitTrace(_)))
            .cloned()
            .collect()
    }

    #[test]
    fn admission_table() {
        use AdmissionDecision::*;
        assert_eq!(admit_connection(HostState::Running, true), Proceed);
        assert_eq!(admit_connection(HostState::Sleeping, true), ResumeThenProceed);
        assert_eq!(admit_connection(HostState::Terminated, true), Fail(RejectReason::HostTerminated));
        assert_eq!(admit_connection(HostState::Unallocated, true), InstantiateThenProceed);
        assert_eq!(admit_connection(HostState::Unallocated, false), Fail(RejectReason::UnknownHost));
        assert_eq!(admit_connection(HostState::Starting, true), Enqueue);
        assert_eq!(admit_connection(HostState::Resuming, true), Enqueue);
        assert_eq!(admit_connection(HostState::Stopped, true), Fail(RejectReason::HostStopped));
    }

    #[test]
    fn cold_start_admits_queued_once() {
        let p = params();
        let (r, a) = apply_event(rec(HostState::Unallocated), &LifecycleEvent::ConnectRequested(ConnId(1)), at(0), &p);
        assert_eq!(r.state, HostState::Starting);
        assert_eq!(r.instance_id, 1);
        assert_eq!(
            effects(&a),
            [
                Action::StartInstance,
                Action::ScheduleTimer(TimerKind::ConnectTimeout, p.timing.connect_timeout)
            ]
        );
        let (r, a) = apply_event(r, &LifecycleEvent::ConnectRequested(ConnId(2)), at(10), &p);
        assert!(effects(&a).is_empty());
        let (r, a) = apply_event(r, &LifecycleEvent::StartCompleted, at(200), &p);
        assert_eq!(r.state, HostState::Running);
        assert_eq!(
            effects(&a),
            [
                Action::CancelTimer(TimerKind::ConnectTimeout),
                Action::AdmitConnection(ConnId(1)),
                Action::AdmitConnection(ConnId(2)),
            ]
        );
        assert!(r.pending_connections.is_empty());
    }

    #[test]
    fn exit_releases() {
        let (r, a) = apply_event(rec(HostState::Running), &LifecycleEvent::AppExited, at(5), &params());
        assert_eq!(r.state, HostState::Stopped);
        assert!(effects(&a).contains(&Action::ReleaseInstance));
    }

    #[test]
    fn keep_warm_resumes() {
        let mut r = rec(HostState::Sleeping);
        r.idle_since = Some(at(0));
        let (r, a) = apply_event(r, &LifecycleEvent::KeepWarmTimer, at(60_000), &params());
        assert_eq!(r.state, HostState::Resuming);
        assert!(r.keep_warm_probe);
        assert!(effects(&a).contains(&Action::ResumeInstance));
    }

    #[test]
    fn open_connections_block_suspension() {
        let mut r = rec(HostState::Running);
        r.open_connections = 2;
        r.idle_since = Some(at(0));
        let (r, a) = apply_event(r, &LifecycleEvent::IdleDebounceElapsed, at(500), &params());
        assert_eq!(r.state, HostState::Running);
        assert!(!effects(&a).contains(&Action::SuspendInstance));
    }

    #[test]
    fn idle_path_suspends_then_ttl_terminates() {
        let p = params();
        let (r, _) = apply_event(rec(HostState::Running), &LifecycleEvent::AppIdle, at(0), &p);
        let (r, a) = apply_event(r, &LifecycleEvent::IdleDebounceElapsed, at(500), &p);
        assert_eq!(r.state, HostState::Sleeping);
        assert_eq!(
            effects(&a),
            [
                Action::SuspendInstance,
                Action::ScheduleTimer(TimerKind::KeepWarm, p.timing.keep_warm_period),
                Action::ScheduleTimer(TimerKind::SleepTtl, p.timing.sleep_ttl),
            ]
        );
        // Probe, find nothing, re-suspend: the TTL keeps counting from the
        // first suspension.
        let (r, _) = apply_event(r, &LifecycleEvent::KeepWarmTimer, at(60_500), &p);
        let (r, a) = apply_event(r, &LifecycleEvent::ResumeCompleted, at(60_520), &p);
        assert!(effects(&a).contains(&Action::ScheduleTimer(TimerKind::IdleDebounce, p.timing.idle_debounce)));
        let (r, a) = apply_event(r, &LifecycleEvent::IdleDebounceElapsed, at(61_020), &p);
        assert_eq!(r.state, HostState::Sleeping);
        assert!(effects(&a).contains(&Action::ScheduleTimer(
            TimerKind::SleepTtl,
            Duration::from_millis(600_500 - 61_020)
        )));
        let (r, a) = apply_event(r, &LifecycleEvent::SleepTtlExpired, at(600_500), &p);
        assert_eq!(r.state, HostState::Terminated);
        assert!(effects(&a).contains(&Action::ReleaseInstance));
    }

    #[test]
    fn restart_budget() {
        let p = params();
        let mut r = rec(HostState::Running);
        r.instance_id = 1;
        for n in 1..=3 {
            let (next, a) = apply_event(r, &LifecycleEvent::Fault, at(n), &p);
            assert_eq!(next.state, HostState::Starting);
            assert_eq!(next.instance_id, 1 + n);
            assert!(effects(&a).contains(&Action::StartInstance));
            let (next, _) = apply_event(next, &LifecycleEvent::StartCompleted, at(n), &p);
            r = next;
        }
        let (r, a) = apply_event(r, &LifecycleEvent::Fault, at(10), &p);
        assert_eq!(r.state, HostState::Terminated);
        assert!(!effects(&a).contains(&Action::StartInstance));
        let (r, _) = apply_event(r, &LifecycleEvent::AdminReset, at(11), &p);
        assert_eq!(r.state, HostState::Unallocated);
        assert_eq!(r.restart_count, 0);
    }

    #[test]
    fn start_failure_rejects_queue_and_restarts() {
        let p = params();
        let (r, _) = apply_event(rec(HostState::Unallocated), &LifecycleEvent::ConnectRequested(ConnId(7)), at(0), &p);
        let (r, a) = apply_event(r, &LifecycleEvent::StartFailed("spawn".into()), at(3), &p);
        assert_eq!(r.state, HostState::Starting);
        assert_eq!(r.restart_count, 1);
        let eff = effects(&a);
        assert!(eff.contains(&Action::RejectConnection(ConnId(7), RejectReason::StartFailed)));
        assert!(eff.contains(&Action::StartInstance));
        assert!(!eff.contains(&Action::ReleaseInstance));
    }

    #[test]
    fn connect_timeout_rejects_only_expired() {
        let mut p = params();
        p.timing.connect_timeout = Duration::from_millis(100);
        let (r, _) = apply_event(rec(HostState::Unallocated), &LifecycleEvent::ConnectRequested(ConnId(1)), at(0), &p);
        let (r, _) = apply_event(r, &LifecycleEvent::ConnectRequested(ConnId(2)), at(60), &p);
        let (r, a) = apply_event(r, &LifecycleEvent::ConnectTimeoutElapsed, at(100), &p);
        assert_eq!(
            effects(&a),
            [
                Action::RejectConnection(ConnId(1), RejectReason::AdmissionTimeout),
                Action::ScheduleTimer(TimerKind::ConnectTimeout, Duration::from_millis(60)),
            ]
        );
        assert_eq!(r.pending_connections.len(), 1);
    }

    #[test]
    fn stale_events_are_traced_noops() {
        let r = rec(HostState::Stopped);
        let (r2, a) = apply_event(r.clone(), &LifecycleEvent::Fault, at(1), &params());
        assert_eq!(r2, r);
        assert!(matches!(&a[..], [Action::EmitTrace(TraceNote { kind: "ignored", .. })]));
    }

    mod gate {
        use super::*;
        use crate::config::ExternalConnPolicy;

        fn with_ext(role: EndpointRole) -> HostRecord {
            let mut r = rec(HostState::Running);
            r.idle_since = Some(at(0));
            r.external_connections.push(ExternalConn { conn: ConnId(9), role });
            r
        }

        #[test]
        fn keep_running_blocks() {
            let r = with_ext(EndpointRole::Active);
            assert!(!external_policy_gate(&r, ExternalConnPolicy::KEEP_RUNNING, at(1_000)));
        }

        #[test]
        fn preemptible_permits_and_loses() {
            let r = with_ext(EndpointRole::Active);
            let pol = ExternalConnPolicy::new(ExternalMode::Preemptible);
            assert_eq!(gate_external(&r, pol, at(1)), GateOutcome::Permit { lose: vec![ConnId(9)] });
        }

        #[test]
        fn warm_for_threshold() {
            let r = with_ext(EndpointRole::Active);
            let pol = ExternalConnPolicy::new(ExternalMode::WarmFor(Duration::from_secs(30)));
            assert!(!external_policy_gate(&r, pol, at(10_000)));
            assert_eq!(gate_external(&r, pol, at(10_000)), GateOutcome::Defer(Duration::from_secs(20)));
            assert!(external_policy_gate(&r, pol, at(31_000)));
        }

        #[test]
        fn by_role_pins_passive_only() {
            let pol = ExternalConnPolicy::new(ExternalMode::Preemptible).by_role();
            assert!(!external_policy_gate(&with_ext(EndpointRole::Passive), pol, at(1)));
            assert!(external_policy_gate(&with_ext(EndpointRole::Active), pol, at(1)));
        }

        #[test]
        fn no_external_connections_always_permitted() {
            let r = rec(HostState::Running);
            assert!(external_policy_gate(&r, ExternalConnPolicy::KEEP_RUNNING, at(0)));
        }
    }
}
