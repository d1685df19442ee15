//! The function manager.
//!
//! [`Orchestrator`] owns the host registry, the timer wheel, the gateway's
//! connection table and the trace. Every input (socket operations, signals,
//! backend completions, timer ticks) is a method call carrying the current
//! time; every output goes to a [`Backend`] or to the trace. It is a plain
//! single-threaded value: drivers serialize inputs through one loop.

mod backend;
mod timers;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::config::{AddressAllocator, AddressError, Config};
use crate::gateway::{ConnState, Endpoint, Forwarded, Direction, Gateway, GatewayError, OpOutcome, SocketOp};
use crate::lifecycle::{
    apply_event, Action, ConnId, EndpointRole, ExternalConn, HostRecord, HostState, LifecycleEvent,
    LifecycleParams, RejectReason, TimerKind,
};
use crate::time::Timestamp;
use crate::trace::{Channel, Trace, NO_HOST};

pub use backend::{Backend, BackendCall, InstanceRef, Notification, RecordingBackend, StartRequest};
pub use timers::TimerWheel;

#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum SignalKind {
    ConnectTo(String),
    SocketActivity,
    AllIdle,
    ProcessExit,
    ExternalData,
}

impl SignalKind {
    pub fn name(&self) -> &'static str {
        match self {
            SignalKind::ConnectTo(_) => "connect-to",
            SignalKind::SocketActivity => "socket-activity",
            SignalKind::AllIdle => "all-idle",
            SignalKind::ProcessExit => "process-exit",
            SignalKind::ExternalData => "external-data",
        }
    }
}

/// An observation that some host could be runnable, or that all of its
/// processes are idle.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AllocationSignal {
    pub kind: SignalKind,
    /// Hostname the signal was observed at.
    pub source: String,
    /// Instance the signal came from, when known. Signals from a previous
    /// instance are dropped.
    pub instance: Option<u64>,
    pub at: Timestamp,
}

impl AllocationSignal {
    pub fn new(kind: SignalKind, source: impl Into<String>, at: Timestamp) -> Self {
        AllocationSignal {
            kind,
            source: source.into(),
            instance: None,
            at,
        }
    }

    pub fn from_instance(mut self, instance: u64) -> Self {
        self.instance = Some(instance);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum OrchestratorError {
    #[error("unknown host `{0}`")]
    UnknownHost(String),
    #[error("host `{host}` is {state}; socket operations need a running instance")]
    NotRunning { host: String, state: HostState },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
}

/// Where a connection came from, for detecting initiators that died while
/// their connect was queued.
#[derive(Debug, Clone, Copy)]
struct Origin {
    instance: u64,
}

#[derive(Debug)]
pub struct Orchestrator {
    config: Config,
    allocator: AddressAllocator,
    hosts: BTreeMap<String, HostRecord>,
    function_types: BTreeMap<String, String>,
    rule_usage: BTreeMap<usize, u32>,
    timers: TimerWheel,
    gateway: Gateway,
    origins: BTreeMap<ConnId, Origin>,
    trace: Trace,
}

impl Orchestrator {
    pub fn new(config: Config) -> Self {
        let subnet = config.network.subnet;
        Orchestrator {
            config,
            allocator: AddressAllocator::new(subnet),
            hosts: BTreeMap::new(),
            function_types: BTreeMap::new(),
            rule_usage: BTreeMap::new(),
            timers: TimerWheel::new(),
            gateway: Gateway::new(subnet),
            origins: BTreeMap::new(),
            trace: Trace::new(),
        }
    }

    pub fn config(&self) -> &Config {
        &self.config
    }

    pub fn record(&self, host: &str) -> Option<&HostRecord> {
        self.hosts.get(host)
    }

    pub fn records(&self) -> impl Iterator<Item = &HostRecord> {
        self.hosts.values()
    }

    pub fn gateway(&self) -> &Gateway {
        &self.gateway
    }

    pub fn timers(&self) -> &TimerWheel {
        &self.timers
    }

    pub fn trace(&self) -> &Trace {
        &self.trace
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        &mut self.trace
    }

    pub fn into_trace(self) -> Trace {
        self.trace
    }

    pub fn next_deadline(&self) -> Option<Timestamp> {
        self.timers.next_deadline()
    }

    pub fn function_type(&self, host: &str) -> Option<&str> {
        self.function_types.get(host).map(String::as_str)
    }

    /// Address bindings made so far (hostname -> virtual address).
    pub fn addresses(&self) -> impl Iterator<Item = (&str, Ipv4Addr)> {
        self.allocator.bindings()
    }

    fn orch(&mut self, now: Timestamp, kind: &str, host: &str, inst: u64, details: Vec<(&str, String)>) {
        self.trace.push(now, Channel::Orch, kind, host, inst, details);
    }

    /// Appends an app-visible record.
    pub fn app_event(&mut self, now: Timestamp, kind: &str, who: &Endpoint, details: Vec<(&str, String)>) {
        let inst = who
            .hostname()
            .and_then(|h| self.hosts.get(h))
            .map_or(0, |r| r.instance_id);
        self.trace.push(now, Channel::App, kind, who.label(), inst, details);
    }

    /// Opening record of a run.
    pub fn banner(&mut self, now: Timestamp, extra: Vec<(&str, String)>) {
        let t = self.config.timing;
        let mut d = vec![
            ("rules", self.config.rules.len().to_string()),
            ("cold_start_us", crate::time::micros(t.cold_start_latency).to_string()),
            ("resume_us", crate::time::micros(t.resume_latency).to_string()),
            ("idle_debounce_us", crate::time::micros(t.idle_debounce).to_string()),
            ("keep_warm_us", crate::time::micros(t.keep_warm_period).to_string()),
            ("sleep_ttl_us", crate::time::micros(t.sleep_ttl).to_string()),
            ("connect_timeout_us", crate::time::micros(t.connect_timeout).to_string()),
            ("subnet", self.config.network.subnet.to_string()),
        ];
        d.extend(extra);
        self.orch(now, "config", NO_HOST, 0, d);
    }

    /// Closing record of a run; metrics require it.
    pub fn finish(&mut self, now: Timestamp) {
        self.orch(now, "run-end", NO_HOST, 0, vec![]);
        let _ = self.trace.flush();
    }

    fn params_for(&self, host: &str) -> LifecycleParams {
        LifecycleParams {
            timing: self.config.timing,
            max_restarts: self.config.max_restarts,
            external_policy: self.config.external_policy_for(host),
        }
    }

    fn instance_of(&self, e: &Endpoint) -> u64 {
        e.hostname()
            .and_then(|h| self.hosts.get(h))
            .map_or(0, |r| r.instance_id)
    }

    /// Registers `host` on first reference: rule match, instance cap and
    /// address assignment.
    fn ensure_record(&mut self, host: &str) -> Result<(), RejectReason> {
        if self.hosts.contains_key(host) {
            return Ok(());
        }
        if !crate::config::is_valid_hostname(host) {
            return Err(RejectReason::MalformedHostname);
        }
        let idx = self.config.resolve_index(host).ok_or(RejectReason::UnknownHost)?;
        let rule = &self.config.rules[idx];
        let used = self.rule_usage.get(&idx).copied().unwrap_or(0);
        if used >= rule.max_instances {
            return Err(RejectReason::InstanceLimit);
        }
        let function_type = rule.function_type.clone();
        let addr = self.allocator.assign(host).map_err(|e| match e {
            AddressError::SubnetExhausted { .. } => RejectReason::SubnetExhausted,
        })?;
        self.rule_usage.insert(idx, used + 1);
        self.gateway.bind(host, addr);
        self.function_types.insert(host.to_string(), function_type);
        self.hosts.insert(host.to_string(), HostRecord::new(host, addr));
        Ok(())
    }

    /// A connection attempt from `src` to `dst`. The outcome reaches the
    /// application through [`Backend::notify`].
    pub fn handle_connect(&mut self, backend: &mut dyn Backend, src: Endpoint, dst: &str, now: Timestamp) -> ConnId {
        let conn = self.gateway.open(src.clone(), Endpoint::Host(dst.to_string()), now);
        self.admission(backend, conn, now);
        conn
    }

    /// An external client (outside the virtual network) connects to `dst`.
    pub fn connect_external(
        &mut self,
        backend: &mut dyn Backend,
        label: &str,
        addr: Ipv4Addr,
        dst: &str,
        now: Timestamp,
    ) -> ConnId {
        self.handle_connect(backend, Endpoint::external(label, addr), dst, now)
    }

    fn admission(&mut self, backend: &mut dyn Backend, conn: ConnId, now: Timestamp) {
        let c = self.gateway.connection(conn).expect("just opened").clone();
        let src_inst = self.instance_of(&c.src);
        if c.src.hostname().is_some() {
            self.origins.insert(conn, Origin { instance: src_inst });
        }
        self.orch(
            now,
            "connect",
            c.src.label(),
            src_inst,
            vec![("conn", conn.to_string()), ("dst", c.dst.label().to_string())],
        );
        match &c.dst {
            Endpoint::External { .. } => {
                // External peers are outside orchestration; the connection
                // goes straight through.
                self.execute(backend, c.src.hostname().unwrap_or(NO_HOST), src_inst, Action::AdmitConnection(conn), now);
            }
            Endpoint::Host(dst) => {
                let dst = dst.clone();
                if let Err(reason) = self.ensure_record(&dst) {
                    self.execute(backend, &dst, 0, Action::RejectConnection(conn, reason), now);
                    return;
                }
                self.apply(backend, &dst, LifecycleEvent::ConnectRequested(conn), now);
            }
        }
    }

    /// Feeds one lifecycle event for `host` and carries out the resulting
    /// actions.
    pub fn apply(&mut self, backend: &mut dyn Backend, host: &str, event: LifecycleEvent, now: Timestamp) {
        let params = self.params_for(host);
        let Some(record) = self.hosts.remove(host) else {
            self.orch(now, "signal-dropped", host, 0, vec![("event", event.name().to_string())]);
            return;
        };
        let mut inst = record.instance_id;
        let (record, actions) = apply_event(record, &event, now, &params);
        self.hosts.insert(host.to_string(), record);
        for a in actions {
            if a == Action::StartInstance {
                inst += 1;
            }
            self.execute(backend, host, inst, a, now);
        }
    }

    fn execute(&mut self, backend: &mut dyn Backend, host: &str, inst: u64, action: Action, now: Timestamp) {
        let iref = || InstanceRef {
            hostname: host.to_string(),
            instance: inst,
        };
        match action {
            Action::StartInstance => {
                let rec = &self.hosts[host];
                let req = StartRequest {
                    hostname: host.to_string(),
                    function_type: self.function_types[host].clone(),
                    address: rec.address,
                    instance: inst,
                };
                self.orch(
                    now,
                    "start",
                    host,
                    inst,
                    vec![
                        ("address", req.address.to_string()),
                        ("function_type", req.function_type.clone()),
                    ],
                );
                backend.start(req, now);
            }
            Action::SuspendInstance => {
                self.orch(now, "suspend", host, inst, vec![]);
                backend.suspend(iref(), now);
            }
            Action::ResumeInstance => {
                let probe = self.hosts[host].keep_warm_probe;
                let cause = if probe { "keep-warm" } else { "connect" };
                self.orch(now, "resume", host, inst, vec![("cause", cause.to_string())]);
                backend.resume(iref(), now);
            }
            Action::ReleaseInstance => {
                self.orch(now, "release", host, inst, vec![]);
                backend.release(iref(), now);
            }
            Action::ScheduleTimer(kind, delay) => self.timers.schedule(host, kind, now + delay),
            Action::CancelTimer(kind) => {
                self.timers.cancel(host, kind);
            }
            Action::CancelAllTimers => self.timers.cancel_all(host),
            Action::AdmitConnection(conn) => self.admit(backend, conn, now),
            Action::RejectConnection(conn, reason) => self.reject(backend, conn, reason, now),
            Action::ResetConnections => {
                let reset = self.gateway.reset_host(host, now);
                let me = Endpoint::Host(host.to_string());
                for conn in reset {
                    let c = self.gateway.connection(conn).expect("reset ids exist").clone();
                    let peer = c.peer_of(&me).expect("host is an endpoint").clone();
                    self.orch(now, "reset", host, inst, vec![("conn", conn.to_string()), ("peer", peer.label().to_string())]);
                    backend.notify(Notification::Reset { conn, peer: peer.clone() }, now);
                    if let Some(p) = peer.hostname() {
                        if p != host {
                            self.sync_connections(backend, p, now);
                        }
                    }
                }
                self.sync_connections(backend, host, now);
            }
            Action::LoseConnection(conn) => {
                if self.gateway.transition(conn, ConnState::Lost, now).is_ok() {
                    let c = self.gateway.connection(conn).expect("exists").clone();
                    let me = Endpoint::Host(host.to_string());
                    let peer = c.peer_of(&me).cloned().unwrap_or(c.dst.clone());
                    self.orch(now, "lost", host, inst, vec![("conn", conn.to_string()), ("peer", peer.label().to_string())]);
                    backend.notify(
                        Notification::Lost {
                            conn,
                            host: host.to_string(),
                            peer,
                        },
                        now,
                    );
                }
            }
            Action::EmitTrace(note) => {
                let details = note.details.into_iter().map(|(k, v)| (k, v)).collect();
                self.orch(now, note.kind, host, inst, details);
            }
        }
    }

    fn admit(&mut self, backend: &mut dyn Backend, conn: ConnId, now: Timestamp) {
        let c = self.gateway.connection(conn).expect("admitted ids exist").clone();
        let dst_label = c.dst.label().to_string();
        let dst_inst = self.instance_of(&c.dst);
        // The initiator may have died while its connect was queued.
        let orphaned = match (c.src.hostname(), self.origins.get(&conn)) {
            (Some(h), Some(o)) => self
                .hosts
                .get(h)
                .is_none_or(|r| r.instance_id != o.instance || r.state != HostState::Running),
            _ => false,
        };
        if orphaned {
            let _ = self.gateway.transition(conn, ConnState::Reset, now);
            self.orch(now, "orphaned", &dst_label, dst_inst, vec![("conn", conn.to_string())]);
            return;
        }
        if let Err(e) = self.gateway.transition(conn, ConnState::Established, now) {
            self.orch(now, "protocol-error", &dst_label, dst_inst, vec![("error", e.to_string())]);
            return;
        }
        self.orch(now, "admit", &dst_label, dst_inst, vec![("conn", conn.to_string()), ("src", c.src.label().to_string())]);
        for e in [&c.src, &c.dst] {
            if let Some(h) = e.hostname() {
                self.sync_connections(backend, h, now);
            }
        }
        backend.notify(
            Notification::Admitted {
                conn,
                src: c.src.clone(),
                dst: c.dst.clone(),
            },
            now,
        );
    }

    fn reject(&mut self, backend: &mut dyn Backend, conn: ConnId, reason: RejectReason, now: Timestamp) {
        let c = self.gateway.connection(conn).expect("rejected ids exist").clone();
        let _ = self.gateway.transition(conn, ConnState::Reset, now);
        let dst_inst = self.instance_of(&c.dst);
        self.orch(
            now,
            "reject",
            c.dst.label(),
            dst_inst,
            vec![("conn", conn.to_string()), ("reason", reason.to_string())],
        );
        backend.notify(
            Notification::Rejected {
                conn,
                src: c.src.clone(),
                dst: c.dst.label().to_string(),
                reason,
            },
            now,
        );
    }

    /// Re-derives a host's connection counters from the gateway table. A
    /// host that is idle and just lost a connection gets its idle debounce
    /// restarted.
    fn sync_connections(&mut self, backend: &mut dyn Backend, host: &str, now: Timestamp) {
        let (internal, external) = self.gateway.established_for(host);
        let Some(rec) = self.hosts.get_mut(host) else {
            return;
        };
        let before = rec.open_connections as usize + rec.external_connections.len();
        rec.open_connections = internal;
        rec.external_connections = external
            .iter()
            .map(|&(conn, role)| ExternalConn { conn, role })
            .collect();
        let after = internal as usize + external.len();
        if after < before && rec.state == HostState::Running && rec.idle_since.is_some() {
            self.apply(backend, host, LifecycleEvent::AppIdle, now);
        }
    }

    fn require_running(&self, host: &str, instance: Option<u64>) -> Result<&HostRecord, OrchestratorError> {
        let rec = self
            .hosts
            .get(host)
            .ok_or_else(|| OrchestratorError::UnknownHost(host.to_string()))?;
        if rec.state != HostState::Running || instance.is_some_and(|i| i != rec.instance_id) {
            return Err(OrchestratorError::NotRunning {
                host: host.to_string(),
                state: rec.state,
            });
        }
        Ok(rec)
    }

    /// Intercepts a socket operation made by the running instance of `host`.
    pub fn socket_op(
        &mut self,
        backend: &mut dyn Backend,
        host: &str,
        op: SocketOp,
        now: Timestamp,
    ) -> Result<OpOutcome, OrchestratorError> {
        let inst = match self.require_running(host, None) {
            Ok(r) => r.instance_id,
            Err(e) => {
                self.orch(now, "protocol-error", host, 0, vec![("error", e.to_string()), ("op", op.name().to_string())]);
                return Err(e);
            }
        };
        let out = match self.gateway.on_socket_op(host, &op, now) {
            Ok(out) => out,
            Err(e) => {
                self.orch(now, "protocol-error", host, inst, vec![("error", e.to_string()), ("op", op.name().to_string())]);
                return Err(e.into());
            }
        };
        for sig in &out.signals {
            if sig.kind == SignalKind::SocketActivity {
                self.apply(backend, host, LifecycleEvent::AppActive, now);
            }
        }
        match &op {
            SocketOp::Connect(target) => {
                if let Some(conn) = out.conn {
                    self.admission(backend, conn, now);
                } else if let Some(reason) = out.failed {
                    self.orch(now, "connect", host, inst, vec![("dst", target.clone())]);
                    self.orch(now, "reject", host, inst, vec![("reason", reason.to_string())]);
                }
            }
            SocketOp::Listen(port) => {
                let me = Endpoint::Host(host.to_string());
                self.app_event(now, "listening", &me, vec![("port", port.to_string())]);
            }
            SocketOp::Close(conn) => {
                self.orch(now, "close", host, inst, vec![("conn", conn.to_string())]);
                let c = self.gateway.connection(*conn).expect("checked by gateway").clone();
                for e in [&c.src, &c.dst] {
                    if let Some(h) = e.hostname() {
                        self.sync_connections(backend, h, now);
                    }
                }
            }
            _ => {}
        }
        Ok(out)
    }

    /// Completes delivery of bytes accepted by [`Orchestrator::forward`];
    /// false if the connection went away in the meantime.
    pub fn deliver(&mut self, conn: ConnId, dir: Direction, bytes: u64, now: Timestamp) -> bool {
        self.gateway.deliver(conn, dir, bytes, now)
    }

    /// An external peer closes its side of `conn`.
    pub fn close_external(&mut self, backend: &mut dyn Backend, conn: ConnId, now: Timestamp) -> Result<(), OrchestratorError> {
        let c = self
            .gateway
            .connection(conn)
            .ok_or(GatewayError::UnknownConn(conn))?
            .clone();
        if c.state != ConnState::Established {
            return Ok(());
        }
        self.gateway.transition(conn, ConnState::Closed, now)?;
        let who = if c.src.hostname().is_none() { &c.src } else { &c.dst };
        self.orch(now, "close", who.label(), 0, vec![("conn", conn.to_string())]);
        for e in [&c.src, &c.dst] {
            if let Some(h) = e.hostname() {
                self.sync_connections(backend, h, now);
            }
        }
        Ok(())
    }

    /// Data written by one endpoint. A sender on a connection lost to
    /// preemption gets a reset.
    pub fn forward(
        &mut self,
        backend: &mut dyn Backend,
        conn: ConnId,
        dir: Direction,
        bytes: u64,
        now: Timestamp,
    ) -> Result<Forwarded, OrchestratorError> {
        let out = self.gateway.forward(conn, dir, bytes, now)?;
        if out == Forwarded::SenderReset {
            let c = self.gateway.connection(conn).expect("forwarded").clone();
            let sender = c.sender(dir).clone();
            let inst = self.instance_of(&sender);
            self.orch(now, "reset", sender.label(), inst, vec![("conn", conn.to_string()), ("cause", "lost".to_string())]);
            backend.notify(Notification::Reset { conn, peer: sender }, now);
        }
        Ok(out)
    }

    /// Translates an allocation signal into a lifecycle event.
    pub fn report_signal(&mut self, backend: &mut dyn Backend, sig: AllocationSignal) {
        let now = sig.at;
        let current = self.hosts.get(&sig.source).map(|r| (r.instance_id, r.state));
        let stale = match (current, sig.instance) {
            (None, _) => true,
            (Some((id, _)), Some(i)) => id != i,
            _ => false,
        };
        if stale && !matches!(sig.kind, SignalKind::ConnectTo(_)) {
            self.orch(now, "signal-dropped", &sig.source, sig.instance.unwrap_or(0), vec![("signal", sig.kind.name().to_string())]);
            return;
        }
        let event = match sig.kind {
            SignalKind::ConnectTo(dst) => {
                self.handle_connect(backend, Endpoint::Host(sig.source), &dst, now);
                return;
            }
            SignalKind::SocketActivity | SignalKind::ExternalData => LifecycleEvent::AppActive,
            SignalKind::AllIdle => {
                let inst = current.map_or(0, |(i, _)| i);
                self.orch(now, "idle", &sig.source, inst, vec![]);
                LifecycleEvent::AppIdle
            }
            SignalKind::ProcessExit => LifecycleEvent::AppExited,
        };
        self.apply(backend, &sig.source, event, now);
    }

    /// Fires all timers due at or before `now`, in deadline order.
    pub fn tick(&mut self, backend: &mut dyn Backend, now: Timestamp) -> Vec<(String, TimerKind)> {
        let mut fired = Vec::new();
        while let Some((deadline, host, kind)) = self.timers.pop_due(now) {
            let inst = self.hosts.get(&host).map_or(0, |r| r.instance_id);
            self.orch(deadline, "timer", &host, inst, vec![("timer", kind.as_str().to_string())]);
            self.apply(backend, &host, kind.event(), deadline);
            fired.push((host, kind));
        }
        fired
    }

    /// The instance of `host` crashed or was killed.
    pub fn handle_fault(&mut self, backend: &mut dyn Backend, host: &str, now: Timestamp) {
        let inst = self.hosts.get(host).map_or(0, |r| r.instance_id);
        self.orch(now, "fault", host, inst, vec![]);
        self.apply(backend, host, LifecycleEvent::Fault, now);
    }

    fn completion_matches(&mut self, host: &str, instance: u64, expect: HostState, what: &str, now: Timestamp) -> bool {
        let ok = self
            .hosts
            .get(host)
            .is_some_and(|r| r.instance_id == instance && r.state == expect);
        if !ok {
            self.orch(now, "stale-completion", host, instance, vec![("completion", what.to_string())]);
        }
        ok
    }

    pub fn start_completed(&mut self, backend: &mut dyn Backend, host: &str, instance: u64, now: Timestamp) {
        if self.completion_matches(host, instance, HostState::Starting, "start", now) {
            self.apply(backend, host, LifecycleEvent::StartCompleted, now);
        }
    }

    pub fn start_failed(&mut self, backend: &mut dyn Backend, host: &str, instance: u64, reason: &str, now: Timestamp) {
        if self.completion_matches(host, instance, HostState::Starting, "start", now) {
            self.apply(backend, host, LifecycleEvent::StartFailed(reason.to_string()), now);
        }
    }

    pub fn resume_completed(&mut self, backend: &mut dyn Backend, host: &str, instance: u64, now: Timestamp) {
        if self.completion_matches(host, instance, HostState::Resuming, "resume", now) {
            self.apply(backend, host, LifecycleEvent::ResumeCompleted, now);
        }
    }

    /// Revives a stopped or terminated hostname.
    pub fn admin_reset(&mut self, backend: &mut dyn Backend, host: &str, now: Timestamp) {
        self.apply(backend, host, LifecycleEvent::AdminReset, now);
    }

    /// Checks that every record's connection counters match the gateway and
    /// that no sleeping host holds internal connections.
    pub fn check_consistency(&self) -> Result<(), String> {
        for (host, rec) in &self.hosts {
            let (internal, external) = self.gateway.established_for(host);
            if rec.open_connections != internal {
                return Err(format!(
                    "{host}: record has {} open connections, gateway {}",
                    rec.open_connections, internal
                ));
            }
            let ext: Vec<(ConnId, EndpointRole)> =
                rec.external_connections.iter().map(|e| (e.conn, e.role)).collect();
            if ext != external {
                return Err(format!("{host}: external connections differ: {ext:?} vs {external:?}"));
            }
            if rec.state == HostState::Sleeping && rec.open_connections > 0 {
                return Err(format!("{host}: sleeping with open connections"));
            }
            if !rec.pending_connections.is_empty()
                && !matches!(rec.state, HostState::Starting | HostState::Resuming)
            {
                return Err(format!("{host}: pending connections while {}", rec.state));
            }
        }
        Ok(())
    }
}
