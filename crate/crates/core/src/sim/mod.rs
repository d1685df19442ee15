//! Deterministic discrete-event backend.
//!
//! Instances run [`Script`]s instead of programs; the network is a constant
//! round-trip time with optional seeded jitter. The whole run is a function
//! of (config, scenario, seed, horizon): same inputs, same trace bytes.
//!
//! Timing model:
//! - a start completes `cold_start_latency` after the backend call, a resume
//!   `resume_latency` after it;
//! - an admitted connection is reported to the initiator one network delay
//!   after admission; the acceptor's `on_connection` runs at admission;
//! - data and resets reach the other side one network delay after they
//!   happen; refusals reach the initiator immediately;
//! - at equal instants, queued events run before orchestrator timers.
//!
//! Events aimed at an instance that is not running (its own timers,
//! wakeups, notices of lost connections) wait until it next resumes.

mod queue;
mod script;

use std::collections::{BTreeMap, BTreeSet};
use std::net::Ipv4Addr;
use std::rc::Rc;
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::config::{Config, ConfigError};
use crate::gateway::{Direction, Endpoint, Forwarded, SocketOp};
use crate::lifecycle::{ConnId, HostState, LifecycleEvent, RejectReason};
use crate::orchestrator::{
    AllocationSignal, BackendCall, Notification, Orchestrator, RecordingBackend, SignalKind, StartRequest,
};
use crate::time::{micros, Timestamp};
use crate::trace::{Channel, Trace};

pub use queue::{EventKey, EventQueue};
pub use script::{
    parse_scenario, ConnRef, HandlerKind, Primitive, Scenario, ScenarioError, Script, Stimulus, StimulusKind,
};

/// Default end of a run when the scenario never quiesces.
pub const DEFAULT_HORIZON: Duration = Duration::from_secs(3600);

/// Base of the addresses handed to external clients (198.18.0.0/15).
const CLIENT_BASE: u32 = u32::from_be_bytes([198, 18, 0, 0]);

#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("scenario names `{0}`, which no rule resolves")]
    Unresolvable(String),
    #[error("stimulus refers to client {0}, but only {1} clients connect")]
    UnknownClient(u32, usize),
}

/// Network and platform latencies.
#[derive(Debug, Clone)]
pub struct LatencyModel {
    pub cold_start: Duration,
    pub resume: Duration,
    pub network_rtt: Duration,
    /// Upper bound of a uniform extra delay per network delivery. Zero
    /// disables jitter and leaves the RNG untouched.
    pub jitter: Duration,
    rng: ChaCha8Rng,
}

impl LatencyModel {
    pub fn from_config(config: &Config, seed: u64) -> Self {
        LatencyModel {
            cold_start: config.timing.cold_start_latency,
            resume: config.timing.resume_latency,
            network_rtt: config.network.rtt,
            jitter: config.network.jitter,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn network_delay(&mut self) -> Duration {
        if self.jitter.is_zero() {
            return self.network_rtt;
        }
        let extra = self.rng.gen_range(0..=micros(self.jitter));
        self.network_rtt + Duration::from_micros(extra)
    }
}

#[derive(Debug, Clone)]
enum Ev {
    Stimulus(StimulusKind),
    StartDone { host: String, inst: u64 },
    ResumeDone { host: String, inst: u64 },
    LifetimeExpired { host: String, inst: u64 },
    Connected { conn: ConnId, who: Endpoint, inst: u64 },
    Accepted { conn: ConnId, host: String, inst: u64 },
    Failed { conn: ConnId, who: Endpoint, inst: u64, reason: RejectReason },
    ResetSeen { conn: ConnId, who: Endpoint, inst: u64 },
    Data { conn: ConnId, dir: Direction, bytes: u64 },
    Wake { host: String, inst: u64, task: u64 },
    AppTimer { host: String, inst: u64, generation: u64 },
}

#[derive(Debug, Clone)]
struct Task {
    handler: HandlerKind,
    pc: usize,
    cur: Option<ConnId>,
}

#[derive(Debug)]
struct App {
    instance: u64,
    script: Rc<Script>,
    /// Blocked continuations by task id.
    blocked: BTreeMap<u64, Task>,
    connecting: BTreeMap<ConnId, u64>,
    last: Option<ConnId>,
    accepted: Option<ConnId>,
    timer_generation: u64,
    deferred: Vec<Ev>,
    /// Queue entries owned by this instance, cancelled when it goes away.
    owned: BTreeSet<EventKey>,
}

/// Result of a run.
#[derive(Debug)]
pub struct SimRun {
    pub trace: Trace,
    pub end: Timestamp,
    /// Diagnostic of a script runtime error that stopped the run early.
    pub aborted: Option<String>,
}

pub struct Simulation {
    orch: Orchestrator,
    backend: RecordingBackend,
    queue: EventQueue<Ev>,
    now: Timestamp,
    latency: LatencyModel,
    scripts: BTreeMap<String, Rc<Script>>,
    apps: BTreeMap<String, App>,
    clients: Vec<ConnId>,
    next_task: u64,
    aborted: Option<String>,
    check_invariants: bool,
    seed: u64,
}

impl Simulation {
    pub fn new(config: Config, scenario: &Scenario, seed: u64) -> Result<Self, SimError> {
        config.validate()?;
        for h in scenario.hostnames() {
            if config.resolve_function_type(h).is_none() {
                return Err(SimError::Unresolvable(h.to_string()));
            }
        }
        let connects = scenario
            .stimuli
            .iter()
            .filter(|s| matches!(s.kind, StimulusKind::Connect(_)))
            .count();
        for s in &scenario.stimuli {
            if let StimulusKind::Send(k, _) | StimulusKind::Close(k) = s.kind {
                if k == 0 || k as usize > connects {
                    return Err(SimError::UnknownClient(k, connects));
                }
            }
        }

        let latency = LatencyModel::from_config(&config, seed);
        let orch = Orchestrator::new(config);
        let mut queue = EventQueue::new();
        for s in &scenario.stimuli {
            queue.push(Timestamp::ZERO + s.at, Ev::Stimulus(s.kind.clone()));
        }
        Ok(Simulation {
            orch,
            backend: RecordingBackend::new(),
            queue,
            now: Timestamp::ZERO,
            latency,
            scripts: scenario
                .scripts
                .iter()
                .map(|(ft, s)| (ft.clone(), Rc::new(s.clone())))
                .collect(),
            apps: BTreeMap::new(),
            clients: Vec::new(),
            next_task: 1,
            aborted: None,
            check_invariants: false,
            seed,
        })
    }

    /// Checks orchestrator/gateway consistency after every step; a violation
    /// aborts the run.
    pub fn checked(mut self) -> Self {
        self.check_invariants = true;
        self
    }

    pub fn orchestrator(&self) -> &Orchestrator {
        &self.orch
    }

    pub fn trace_mut(&mut self) -> &mut Trace {
        self.orch.trace_mut()
    }

    pub fn now(&self) -> Timestamp {
        self.now
    }

    /// Runs to quiescence or `horizon`, whichever comes first.
    pub fn run(mut self, horizon: Duration) -> SimRun {
        let horizon = Timestamp::ZERO + horizon;
        let mut end = self.now;
        self.orch.banner(
            self.now,
            vec![
                ("jitter_us", micros(self.latency.jitter).to_string()),
                ("rtt_us", micros(self.latency.network_rtt).to_string()),
                ("seed", self.seed.to_string()),
            ],
        );
        loop {
            let q = self.queue.next_time();
            let t = self.orch.next_deadline();
            let next = match (q, t) {
                (None, None) => break,
                (Some(a), Some(b)) => a.min(b),
                (Some(a), None) | (None, Some(a)) => a,
            };
            if next > horizon {
                end = horizon;
                break;
            }
            debug_assert!(next >= self.now, "virtual time went backwards");
            self.now = next;
            end = next;
            if q == Some(next) {
                let (_, ev) = self.queue.pop().expect("peeked");
                self.handle(ev);
            } else {
                self.orch.tick(&mut self.backend, next);
            }
            self.drain_backend();
            if self.check_invariants && self.aborted.is_none() {
                if let Err(e) = self.orch.check_consistency() {
                    self.abort("-", format!("invariant violated: {e}"));
                }
            }
            if self.aborted.is_some() {
                break;
            }
        }
        self.orch.finish(end);
        SimRun {
            trace: self.orch.into_trace(),
            end,
            aborted: self.aborted,
        }
    }

    fn abort(&mut self, host: &str, message: String) {
        let inst = self.orch.record(host).map_or(0, |r| r.instance_id);
        self.orch
            .trace_mut()
            .push(self.now, Channel::Orch, "script-error", host, inst, [("error", message.as_str())]);
        self.aborted = Some(format!("{host}: {message}"));
    }

    fn schedule(&mut self, delay: Duration, ev: Ev) -> EventKey {
        self.queue.push(self.now + delay, ev)
    }

    /// Schedules an event owned by the app instance of `host`.
    fn schedule_owned(&mut self, host: &str, delay: Duration, ev: Ev) {
        let key = self.schedule(delay, ev);
        if let Some(app) = self.apps.get_mut(host) {
            app.owned.insert(key);
        }
    }

    fn drain_backend(&mut self) {
        loop {
            let calls = self.backend.drain();
            if calls.is_empty() {
                break;
            }
            for (_, call) in calls {
                self.on_backend_call(call);
            }
        }
    }

    fn endpoint_instance(&self, e: &Endpoint) -> u64 {
        e.hostname()
            .and_then(|h| self.apps.get(h))
            .map_or(0, |a| a.instance)
    }

    fn on_backend_call(&mut self, call: BackendCall) {
        match call {
            BackendCall::Start(StartRequest { hostname, instance, .. }) => {
                let d = self.latency.cold_start;
                self.schedule(d, Ev::StartDone { host: hostname, inst: instance });
            }
            BackendCall::Suspend(_) => {}
            BackendCall::Resume(r) => {
                let d = self.latency.resume;
                self.schedule(
                    d,
                    Ev::ResumeDone {
                        host: r.hostname,
                        inst: r.instance,
                    },
                );
            }
            BackendCall::Release(r) => {
                if self.apps.get(&r.hostname).is_some_and(|a| a.instance == r.instance) {
                    let app = self.apps.remove(&r.hostname).expect("checked");
                    for key in app.owned {
                        self.queue.cancel(key);
                    }
                }
            }
            BackendCall::Notify(n) => self.on_notification(n),
        }
    }

    fn on_notification(&mut self, n: Notification) {
        match n {
            Notification::Admitted { conn, src, dst } => {
                if let Endpoint::Host(h) = &dst {
                    let inst = self.orch.record(h).map_or(0, |r| r.instance_id);
                    self.schedule(
                        Duration::ZERO,
                        Ev::Accepted {
                            conn,
                            host: h.clone(),
                            inst,
                        },
                    );
                }
                let inst = self.endpoint_instance(&src);
                let d = self.latency.network_delay();
                self.schedule(d, Ev::Connected { conn, who: src, inst });
            }
            Notification::Rejected { conn, src, reason, .. } => {
                let inst = self.endpoint_instance(&src);
                self.schedule(
                    Duration::ZERO,
                    Ev::Failed {
                        conn,
                        who: src,
                        inst,
                        reason,
                    },
                );
            }
            Notification::Reset { conn, peer } => {
                let inst = self.endpoint_instance(&peer);
                let d = self.latency.network_delay();
                self.schedule(d, Ev::ResetSeen { conn, who: peer, inst });
            }
            Notification::Lost { conn, host, .. } => {
                let inst = self.apps.get(&host).map_or(0, |a| a.instance);
                self.schedule(
                    Duration::ZERO,
                    Ev::ResetSeen {
                        conn,
                        who: Endpoint::Host(host),
                        inst,
                    },
                );
            }
        }
    }

    fn live(&self, host: &str, inst: u64) -> bool {
        self.apps.get(host).is_some_and(|a| a.instance == inst)
    }

    fn running(&self, host: &str) -> bool {
        self.orch.record(host).is_some_and(|r| r.state == HostState::Running)
    }

    /// Holds `ev` until `host` resumes; true if it was held.
    fn defer_if_frozen(&mut self, host: &str, ev: &Ev) -> bool {
        if self.running(host) {
            return false;
        }
        if let Some(app) = self.apps.get_mut(host) {
            app.deferred.push(ev.clone());
        }
        true
    }

    fn app_record(&mut self, kind: &str, who: &Endpoint, details: Vec<(&str, String)>) {
        self.orch.app_event(self.now, kind, who, details);
    }

    fn handle(&mut self, ev: Ev) {
        match ev {
            Ev::Stimulus(s) => self.stimulus(s),
            Ev::StartDone { host, inst } => {
                self.orch.start_completed(&mut self.backend, &host, inst, self.now);
                let ok = self
                    .orch
                    .record(&host)
                    .is_some_and(|r| r.instance_id == inst && r.state == HostState::Running);
                if ok {
                    self.spawn_app(&host, inst);
                }
            }
            Ev::ResumeDone { host, inst } => {
                self.orch.resume_completed(&mut self.backend, &host, inst, self.now);
                if self.running(&host) && self.live(&host, inst) {
                    let held = std::mem::take(&mut self.apps.get_mut(&host).expect("live").deferred);
                    for ev in held {
                        self.handle(ev);
                        if self.aborted.is_some() {
                            return;
                        }
                    }
                }
            }
            Ev::LifetimeExpired { host, inst } => {
                let due = self.orch.record(&host).is_some_and(|r| {
                    r.instance_id == inst
                        && matches!(r.state, HostState::Running | HostState::Sleeping | HostState::Resuming)
                });
                if due {
                    self.orch
                        .trace_mut()
                        .push(self.now, Channel::Orch, "lifetime-expired", &host, inst, [("cause", "max-lifetime")]);
                    self.orch.handle_fault(&mut self.backend, &host, self.now);
                }
            }
            Ev::Connected { conn, who, inst } => {
                if let Some(h) = who.hostname().map(str::to_string) {
                    if !self.live(&h, inst) {
                        return;
                    }
                    let ev = Ev::Connected { conn, who: who.clone(), inst };
                    if self.defer_if_frozen(&h, &ev) {
                        return;
                    }
                }
                let peer = self.orch.gateway().connection(conn).map(|c| c.dst.label().to_string());
                self.app_record(
                    "connected",
                    &who,
                    vec![("conn", conn.to_string()), ("peer", peer.unwrap_or_default())],
                );
                if let Some(h) = who.hostname() {
                    let app = self.apps.get_mut(h).expect("live");
                    if let Some(task) = app.connecting.remove(&conn) {
                        let t = app.blocked.remove(&task).expect("connecting tasks are blocked");
                        let h = h.to_string();
                        self.run_task(&h, task, t);
                    }
                }
            }
            Ev::Accepted { conn, host, inst } => {
                if !self.live(&host, inst) {
                    return;
                }
                let ev = Ev::Accepted {
                    conn,
                    host: host.clone(),
                    inst,
                };
                if self.defer_if_frozen(&host, &ev) {
                    return;
                }
                if self
                    .orch
                    .socket_op(&mut self.backend, &host, SocketOp::Accept(conn), self.now)
                    .is_err()
                {
                    return;
                }
                self.apps.get_mut(&host).expect("live").accepted = Some(conn);
                self.start_task(&host, HandlerKind::OnConnection, Some(conn));
            }
            Ev::Failed { conn, who, inst, reason } => {
                if let Some(h) = who.hostname() {
                    if !self.live(h, inst) {
                        return;
                    }
                }
                self.app_record(
                    "connection-failed",
                    &who,
                    vec![("conn", conn.to_string()), ("reason", reason.to_string())],
                );
                if let Some(h) = who.hostname() {
                    let app = self.apps.get_mut(h).expect("live");
                    if let Some(task) = app.connecting.remove(&conn) {
                        app.blocked.remove(&task);
                    }
                }
            }
            Ev::ResetSeen { conn, who, inst } => {
                if let Some(h) = who.hostname().map(str::to_string) {
                    if !self.live(&h, inst) {
                        return;
                    }
                    let ev = Ev::ResetSeen { conn, who: who.clone(), inst };
                    if self.defer_if_frozen(&h, &ev) {
                        return;
                    }
                }
                self.app_record("connection-reset", &who, vec![("conn", conn.to_string())]);
            }
            Ev::Data { conn, dir, bytes } => {
                let Some(c) = self.orch.gateway().connection(conn) else {
                    return;
                };
                let to = c.receiver(dir).clone();
                if let Some(h) = to.hostname() {
                    let ev = Ev::Data { conn, dir, bytes };
                    if c.state == crate::gateway::ConnState::Established && self.defer_if_frozen(h, &ev) {
                        return;
                    }
                }
                if !self.orch.deliver(conn, dir, bytes, self.now) {
                    return;
                }
                match to.hostname() {
                    None => self.app_record("data", &to, vec![("bytes", bytes.to_string()), ("conn", conn.to_string())]),
                    Some(h) => {
                        let h = h.to_string();
                        if self
                            .orch
                            .socket_op(&mut self.backend, &h, SocketOp::Recv(conn, bytes), self.now)
                            .is_err()
                        {
                            return;
                        }
                        self.app_record("data", &to, vec![("bytes", bytes.to_string()), ("conn", conn.to_string())]);
                        self.start_task(&h, HandlerKind::OnData, Some(conn));
                    }
                }
            }
            Ev::Wake { host, inst, task } => {
                if !self.live(&host, inst) {
                    return;
                }
                let ev = Ev::Wake {
                    host: host.clone(),
                    inst,
                    task,
                };
                if self.defer_if_frozen(&host, &ev) {
                    return;
                }
                self.orch.apply(&mut self.backend, &host, LifecycleEvent::AppActive, self.now);
                let app = self.apps.get_mut(&host).expect("live");
                if let Some(t) = app.blocked.remove(&task) {
                    self.run_task(&host, task, t);
                }
            }
            Ev::AppTimer { host, inst, generation } => {
                if !self.live(&host, inst) || self.apps[&host].timer_generation != generation {
                    return;
                }
                let ev = Ev::AppTimer {
                    host: host.clone(),
                    inst,
                    generation,
                };
                if self.defer_if_frozen(&host, &ev) {
                    return;
                }
                self.orch.apply(&mut self.backend, &host, LifecycleEvent::AppActive, self.now);
                self.start_task(&host, HandlerKind::OnTimer, None);
            }
        }
    }

    fn stimulus(&mut self, s: StimulusKind) {
        let now = self.now;
        match s {
            StimulusKind::Connect(host) => {
                let k = self.clients.len() as u32 + 1;
                let addr = Ipv4Addr::from(CLIENT_BASE + k);
                let conn = self
                    .orch
                    .connect_external(&mut self.backend, &format!("ext/{k}"), addr, &host, now);
                self.clients.push(conn);
            }
            StimulusKind::Fault(host) => self.orch.handle_fault(&mut self.backend, &host, now),
            StimulusKind::Send(k, bytes) => {
                let Some(&conn) = self.clients.get(k as usize - 1) else {
                    return self.ignored(k, "not-connected");
                };
                match self.orch.forward(&mut self.backend, conn, Direction::SrcToDst, bytes, now) {
                    Ok(Forwarded::Sent { .. }) => {
                        let d = self.latency.network_delay();
                        self.schedule(
                            d,
                            Ev::Data {
                                conn,
                                dir: Direction::SrcToDst,
                                bytes,
                            },
                        );
                    }
                    Ok(Forwarded::SenderReset) => {}
                    Err(_) => self.ignored(k, "not-established"),
                }
            }
            StimulusKind::Close(k) => {
                let Some(&conn) = self.clients.get(k as usize - 1) else {
                    return self.ignored(k, "not-connected");
                };
                if self.orch.close_external(&mut self.backend, conn, now).is_err() {
                    self.ignored(k, "not-established");
                }
            }
        }
    }

    fn ignored(&mut self, client: u32, reason: &str) {
        let label = format!("ext/{client}");
        self.orch
            .trace_mut()
            .push(self.now, Channel::Orch, "stimulus-ignored", &label, 0, [("reason", reason)]);
    }

    fn spawn_app(&mut self, host: &str, inst: u64) {
        let ft = self.orch.function_type(host).unwrap_or_default().to_string();
        let script = self.scripts.get(&ft).cloned().unwrap_or_default();
        self.apps.insert(
            host.to_string(),
            App {
                instance: inst,
                script,
                blocked: BTreeMap::new(),
                connecting: BTreeMap::new(),
                last: None,
                accepted: None,
                timer_generation: 0,
                deferred: Vec::new(),
                owned: BTreeSet::new(),
            },
        );
        if let Some(lifetime) = self.orch.config().limits_for(&ft).max_lifetime {
            self.schedule_owned(
                host,
                lifetime,
                Ev::LifetimeExpired {
                    host: host.to_string(),
                    inst,
                },
            );
        }
        self.start_task(host, HandlerKind::OnStart, None);
    }

    fn start_task(&mut self, host: &str, handler: HandlerKind, cur: Option<ConnId>) {
        let id = self.next_task;
        self.next_task += 1;
        self.run_task(host, id, Task { handler, pc: 0, cur });
    }

    fn resolve(&mut self, host: &str, task: &Task, r: ConnRef) -> Option<ConnId> {
        let app = &self.apps[host];
        let c = match r {
            ConnRef::Cur => task.cur,
            ConnRef::Last => app.last,
            ConnRef::Accepted => app.accepted,
        };
        if c.is_none() {
            self.abort(host, format!("`{}` names no connection in {}", r.as_str(), task.handler.as_str()));
        }
        c
    }

    /// Runs primitives until the task blocks, ends, or the instance goes
    /// away.
    fn run_task(&mut self, host: &str, id: u64, mut task: Task) {
        let Some(app) = self.apps.get(host) else {
            return;
        };
        let inst = app.instance;
        let script = Rc::clone(&app.script);
        let program = script.handler(task.handler);
        while let Some(p) = program.get(task.pc) {
            task.pc += 1;
            if self.aborted.is_some() || !self.live(host, inst) || !self.running(host) {
                return;
            }
            let now = self.now;
            match p {
                Primitive::Connect(target) => {
                    let out = match self
                        .orch
                        .socket_op(&mut self.backend, host, SocketOp::Connect(target.clone()), now)
                    {
                        Ok(out) => out,
                        Err(e) => return self.abort(host, e.to_string()),
                    };
                    let app = self.apps.get_mut(host).expect("live");
                    if let Some(conn) = out.conn {
                        app.last = Some(conn);
                        app.connecting.insert(conn, id);
                        app.blocked.insert(id, task);
                        return;
                    }
                    let reason = out.failed.unwrap_or(RejectReason::UnknownHost);
                    let me = Endpoint::Host(host.to_string());
                    self.app_record(
                        "connection-failed",
                        &me,
                        vec![("dst", target.clone()), ("reason", reason.to_string())],
                    );
                    return;
                }
                Primitive::Send(r, bytes) => {
                    let Some(conn) = self.resolve(host, &task, *r) else {
                        return;
                    };
                    if self
                        .orch
                        .socket_op(&mut self.backend, host, SocketOp::Send(conn, *bytes), now)
                        .is_err()
                    {
                        return;
                    }
                    let src_is_me = self
                        .orch
                        .gateway()
                        .connection(conn)
                        .is_some_and(|c| c.src.hostname() == Some(host));
                    let dir = if src_is_me { Direction::SrcToDst } else { Direction::DstToSrc };
                    match self.orch.forward(&mut self.backend, conn, dir, *bytes, now) {
                        Ok(Forwarded::Sent { .. }) => {
                            let d = self.latency.network_delay();
                            self.schedule(d, Ev::Data { conn, dir, bytes: *bytes });
                        }
                        Ok(Forwarded::SenderReset) => return,
                        Err(_) => {
                            let me = Endpoint::Host(host.to_string());
                            self.app_record("connection-reset", &me, vec![("conn", conn.to_string())]);
                            return;
                        }
                    }
                }
                Primitive::Close(r) => {
                    let Some(conn) = self.resolve(host, &task, *r) else {
                        return;
                    };
                    let _ = self.orch.socket_op(&mut self.backend, host, SocketOp::Close(conn), now);
                }
                Primitive::Sleep(d) => {
                    self.apps.get_mut(host).expect("live").blocked.insert(id, task);
                    self.schedule_owned(
                        host,
                        *d,
                        Ev::Wake {
                            host: host.to_string(),
                            inst,
                            task: id,
                        },
                    );
                    return;
                }
                Primitive::SetTimer(d) => {
                    let app = self.apps.get_mut(host).expect("live");
                    app.timer_generation += 1;
                    let generation = app.timer_generation;
                    self.schedule_owned(
                        host,
                        *d,
                        Ev::AppTimer {
                            host: host.to_string(),
                            inst,
                            generation,
                        },
                    );
                }
                Primitive::Exit => {
                    let sig = AllocationSignal::new(SignalKind::ProcessExit, host, now).from_instance(inst);
                    self.orch.report_signal(&mut self.backend, sig);
                    return;
                }
                Primitive::DeclareIdle => {
                    // Another handler still has work coming; the last one to
                    // finish gets to declare.
                    let waiting = self.apps[host].blocked.len();
                    if waiting > 0 {
                        let n = waiting.to_string();
                        self.orch
                            .trace_mut()
                            .push(now, Channel::Orch, "idle-refused", host, inst, [("blocked", n.as_str())]);
                        continue;
                    }
                    let sig = AllocationSignal::new(SignalKind::AllIdle, host, now).from_instance(inst);
                    self.orch.report_signal(&mut self.backend, sig);
                }
                Primitive::Listen(port) => {
                    let _ = self.orch.socket_op(&mut self.backend, host, SocketOp::Listen(*port), now);
                }
            }
        }
    }
}

/// Runs `scenario` under `config` and returns the complete trace.
pub fn run_scenario(config: Config, scenario: &Scenario, seed: u64, horizon: Duration) -> Result<SimRun, SimError> {
    Ok(Simulation::new(config, scenario, seed)?.run(horizon))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::MappingRule;

    fn config() -> Config {
        Config::with_rules(vec![MappingRule::new("web-*", "web"), MappingRule::new("db-*", "db")])
    }

    fn kinds(run: &SimRun) -> Vec<String> {
        run.trace.records().iter().map(|r| r.kind.clone()).collect()
    }

    #[test]
    fn empty_scenario_is_banner_only() {
        let run = run_scenario(config(), &Scenario::default(), 7, DEFAULT_HORIZON).unwrap();
        assert_eq!(kinds(&run), ["config", "run-end"]);
        assert_eq!(run.end, Timestamp::ZERO);
    }

    #[test]
    fn unresolvable_stimulus_rejected_up_front() {
        let mut sc = Scenario::default();
        sc.stimuli.push(Stimulus::connect(Duration::ZERO, "cache-1"));
        assert!(matches!(
            run_scenario(config(), &sc, 0, DEFAULT_HORIZON),
            Err(SimError::Unresolvable(h)) if h == "cache-1"
        ));
    }

    #[test]
    fn cold_start_then_connected_after_rtt() {
        let mut sc = Scenario::default();
        sc.stimuli.push(Stimulus::connect(Duration::from_secs(1), "web-1"));
        let run = run_scenario(config(), &sc, 0, Duration::from_secs(5)).unwrap();
        let connected = run
            .trace
            .records()
            .iter()
            .find(|r| r.kind == "connected")
            .unwrap();
        assert_eq!(connected.time, Timestamp(1_201_000));
        assert_eq!(connected.host, "ext/1");
    }

    #[test]
    fn jitter_depends_on_seed() {
        let mut cfg = config();
        cfg.network.jitter = Duration::from_micros(900);
        let mut sc = Scenario::default();
        for i in 0..5 {
            sc.stimuli.push(Stimulus::connect(Duration::from_millis(i * 10), "web-1"));
        }
        let a = run_scenario(cfg.clone(), &sc, 1, Duration::from_secs(2)).unwrap().trace.render();
        let b = run_scenario(cfg.clone(), &sc, 1, Duration::from_secs(2)).unwrap().trace.render();
        let c = run_scenario(cfg, &sc, 2, Duration::from_secs(2)).unwrap().trace.render();
        assert_eq!(a, b);
        assert_ne!(a.lines().skip(1).collect::<Vec<_>>(), c.lines().skip(1).collect::<Vec<_>>());
    }

    #[test]
    fn dangling_reference_aborts_with_diagnostic() {
        let sc = parse_scenario("[script web]\non_start:\n  send last 10\n[stimuli]\nat 0ms connect web-1\n").unwrap();
        let run = run_scenario(config(), &sc, 0, DEFAULT_HORIZON).unwrap();
        let k = kinds(&run);
        assert!(run.aborted.unwrap().contains("`last` names no connection"));
        assert_eq!(&k[k.len() - 2..], ["script-error", "run-end"]);
    }
}
