//! Backend running host functions as local OS processes.
//!
//! Every hostname listed under `[hosts]` gets a loopback gateway port,
//! published in a port map file. A client connecting to that port is an
//! allocation signal: the orchestrator starts (or resumes) the host's process
//! and, once admitted, the connection is proxied to the port the process
//! listens on (`{port}` in its command template). Suspension is `SIGSTOP`,
//! resumption `SIGCONT`.
//!
//! Process-internal idleness is unobservable here, so a host counts as idle
//! as soon as none of its proxied connections remain open; the orchestrator
//! still waits `idle_debounce` before suspending.

mod portmap;

use std::collections::BTreeMap;
use std::net::Ipv4Addr;
use std::path::{Path, PathBuf};
use std::process::{ExitStatus, Stdio};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use thiserror::Error;
use tokio::net::{TcpListener, TcpStream};
use tokio::sync::{mpsc, oneshot};
use tokio::task::JoinHandle;
use tokio::time::Instant;

use crate::config::{Config, ConfigError};
use crate::gateway::Direction;
use crate::lifecycle::{ConnId, HostState};
use crate::orchestrator::{
    AllocationSignal, BackendCall, InstanceRef, Notification, Orchestrator, RecordingBackend, SignalKind,
    StartRequest,
};
use crate::time::Timestamp;
use crate::trace::Trace;

pub use portmap::PortMap;

const READINESS_POLL: Duration = Duration::from_millis(20);

/// Base of the synthetic addresses given to proxied clients.
const CLIENT_BASE: u32 = u32::from_be_bytes([198, 18, 0, 0]);

#[derive(Debug, Error)]
pub enum ProcessError {
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("no [hosts] configured; nothing to serve")]
    NoHosts,
    #[error("the platform event loop is gone")]
    Stopped,
}

/// Snapshot of one host as seen by the platform.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HostStatus {
    pub state: HostState,
    pub instance: u64,
    /// Process of the current instance, while one exists.
    pub pid: Option<u32>,
}

/// What shutdown leaves behind.
#[derive(Debug)]
pub struct ShutdownReport {
    pub trace: Trace,
    /// Every process spawned during the run, all reaped by now.
    pub spawned: Vec<u32>,
}

enum Msg {
    Inbound { host: String, stream: TcpStream },
    Ready { host: String, inst: u64 },
    NotReady { host: String, inst: u64, reason: &'static str },
    Exited { host: String, inst: u64, status: ExitStatus },
    Resumed { host: String, inst: u64 },
    ProxyDone { conn: ConnId, up: u64, down: u64 },
    Status { host: String, reply: oneshot::Sender<Option<HostStatus>> },
    Shutdown { reply: oneshot::Sender<ShutdownReport> },
}

/// A running platform. Dropping it without [`Platform::shutdown`] still
/// kills the processes (they are spawned kill-on-drop), but does not reap
/// them.
pub struct Platform {
    tx: mpsc::UnboundedSender<Msg>,
    ports: PortMap,
    portmap_path: PathBuf,
    acceptors: Vec<JoinHandle<()>>,
    driver: JoinHandle<()>,
}

impl Platform {
    /// Binds the gateway ports, writes the port map to `portmap_path` and
    /// starts the event loop on the current tokio runtime.
    pub async fn start(config: Config, portmap_path: &Path, trace: Trace) -> Result<Platform, ProcessError> {
        config.validate()?;
        if config.hosts.is_empty() {
            return Err(ProcessError::NoHosts);
        }
        let (tx, rx) = mpsc::unbounded_channel();
        let mut ports = PortMap::default();
        let mut acceptors = Vec::new();
        for host in &config.hosts {
            let listener = TcpListener::bind((Ipv4Addr::LOCALHOST, 0)).await?;
            ports.ports.insert(host.clone(), listener.local_addr()?.port());
            let tx = tx.clone();
            let host = host.clone();
            acceptors.push(tokio::spawn(async move {
                while let Ok((stream, _)) = listener.accept().await {
                    let msg = Msg::Inbound {
                        host: host.clone(),
                        stream,
                    };
                    if tx.send(msg).is_err() {
                        break;
                    }
                }
            }));
        }
        std::fs::write(portmap_path, ports.to_string())?;

        let mut orch = Orchestrator::new(config);
        *orch.trace_mut() = trace;
        let mut driver = Driver {
            orch,
            backend: RecordingBackend::new(),
            epoch: Instant::now(),
            tx: tx.clone(),
            portmap_path: portmap_path.to_path_buf(),
            procs: BTreeMap::new(),
            pending: BTreeMap::new(),
            proxies: BTreeMap::new(),
            next_client: 1,
            spawned: Vec::new(),
            watchers: Vec::new(),
        };
        let now = driver.now();
        let map = portmap_path.display().to_string();
        driver.orch.banner(now, vec![("backend", "process".to_string()), ("portmap", map)]);
        let driver = tokio::spawn(driver.run(rx));
        Ok(Platform {
            tx,
            ports,
            portmap_path: portmap_path.to_path_buf(),
            acceptors,
            driver,
        })
    }

    pub fn ports(&self) -> &PortMap {
        &self.ports
    }

    pub fn port_of(&self, host: &str) -> Option<u16> {
        self.ports.get(host)
    }

    pub fn portmap_path(&self) -> &Path {
        &self.portmap_path
    }

    pub async fn status(&self, host: &str) -> Result<Option<HostStatus>, ProcessError> {
        let (reply, rx) = oneshot::channel();
        self.tx
            .send(Msg::Status {
                host: host.to_string(),
                reply,
            })
            .map_err(|_| ProcessError::Stopped)?;
        rx.await.map_err(|_| ProcessError::Stopped)
    }

    /// Kills every process, waits for all of them and closes the trace.
    pub async fn shutdown(self) -> Result<ShutdownReport, ProcessError> {
        for a in &self.acceptors {
            a.abort();
        }
        let (reply, rx) = oneshot::channel();
        self.tx.send(Msg::Shutdown { reply }).map_err(|_| ProcessError::Stopped)?;
        let report = rx.await.map_err(|_| ProcessError::Stopped)?;
        let _ = self.driver.await;
        Ok(report)
    }
}

struct Proc {
    instance: u64,
    pid: u32,
    port: u16,
    exited: Arc<AtomicBool>,
    /// Died while stopped; reported as a fault on the next resume.
    dead: bool,
}

struct Driver {
    orch: Orchestrator,
    backend: RecordingBackend,
    epoch: Instant,
    tx: mpsc::UnboundedSender<Msg>,
    portmap_path: PathBuf,
    procs: BTreeMap<String, Proc>,
    /// Client sockets waiting for admission.
    pending: BTreeMap<ConnId, TcpStream>,
    /// Live proxies; sending on the channel resets the client.
    proxies: BTreeMap<ConnId, oneshot::Sender<()>>,
    next_client: u32,
    spawned: Vec<u32>,
    watchers: Vec<JoinHandle<()>>,
}

fn signal(pid: u32, sig: libc::c_int) -> bool {
    // SAFETY: kill(2) has no memory-safety preconditions.
    unsafe { libc::kill(pid as libc::pid_t, sig) == 0 }
}

fn free_port() -> std::io::Result<u16> {
    Ok(std::net::TcpListener::bind((Ipv4Addr::LOCALHOST, 0))?.local_addr()?.port())
}

impl Driver {
    fn now(&self) -> Timestamp {
        Timestamp(self.epoch.elapsed().as_micros() as u64)
    }

    async fn run(mut self, mut rx: mpsc::UnboundedReceiver<Msg>) {
        loop {
            let deadline = self
                .orch
                .next_deadline()
                .map(|d| self.epoch + Duration::from_micros(d.0));
            let timer = async {
                match deadline {
                    Some(d) => tokio::time::sleep_until(d).await,
                    None => std::future::pending().await,
                }
            };
            tokio::select! {
                msg = rx.recv() => match msg {
                    Some(Msg::Shutdown { reply }) => {
                        let report = self.shutdown().await;
                        let _ = reply.send(report);
                        return;
                    }
                    Some(m) => self.handle(m),
                    None => {
                        self.shutdown().await;
                        return;
                    }
                },
                _ = timer => {
                    let now = self.now();
                    self.orch.tick(&mut self.backend, now);
                }
            }
            self.drain();
            self.report_idle();
        }
    }

    fn handle(&mut self, msg: Msg) {
        let now = self.now();
        match msg {
            Msg::Inbound { host, stream } => {
                let k = self.next_client;
                self.next_client += 1;
                let addr = Ipv4Addr::from(CLIENT_BASE + k);
                let conn = self
                    .orch
                    .connect_external(&mut self.backend, &format!("ext/{k}"), addr, &host, now);
                self.pending.insert(conn, stream);
            }
            Msg::Ready { host, inst } => self.orch.start_completed(&mut self.backend, &host, inst, now),
            Msg::NotReady { host, inst, reason } => {
                if self.procs.get(&host).is_some_and(|p| p.instance == inst) {
                    self.procs.remove(&host);
                }
                self.orch.start_failed(&mut self.backend, &host, inst, reason, now);
            }
            Msg::Exited { host, inst, status } => self.exited(&host, inst, status, now),
            Msg::Resumed { host, inst } => self.orch.resume_completed(&mut self.backend, &host, inst, now),
            Msg::ProxyDone { conn, up, down } => {
                if self.proxies.remove(&conn).is_none() {
                    return;
                }
                for (dir, n) in [(Direction::SrcToDst, up), (Direction::DstToSrc, down)] {
                    if n == 0 {
                        continue;
                    }
                    if self.orch.forward(&mut self.backend, conn, dir, n, now).is_ok()
                        && self.orch.deliver(conn, dir, n, now)
                    {
                        let c = self.orch.gateway().connection(conn).expect("forwarded").clone();
                        let to = c.receiver(dir).clone();
                        self.orch
                            .app_event(now, "data", &to, vec![("bytes", n.to_string()), ("conn", conn.to_string())]);
                    }
                }
                let _ = self.orch.close_external(&mut self.backend, conn, now);
            }
            Msg::Status { host, reply } => {
                let status = self.orch.record(&host).map(|r| HostStatus {
                    state: r.state,
                    instance: r.instance_id,
                    pid: self
                        .procs
                        .get(&host)
                        .filter(|p| p.instance == r.instance_id && !p.dead)
                        .map(|p| p.pid),
                });
                let _ = reply.send(status);
            }
            Msg::Shutdown { .. } => unreachable!("handled by the loop"),
        }
    }

    fn exited(&mut self, host: &str, inst: u64, status: ExitStatus, now: Timestamp) {
        let Some(p) = self.procs.get_mut(host).filter(|p| p.instance == inst) else {
            // A process we released ourselves.
            return;
        };
        let state = self.orch.record(host).map(|r| r.state);
        let code = status.code().map_or_else(|| "signal".to_string(), |c| c.to_string());
        self.orch
            .trace_mut()
            .push(now, crate::trace::Channel::Orch, "exit", host, inst, [("code", code.as_str())]);
        match state {
            Some(HostState::Sleeping) => p.dead = true,
            Some(HostState::Starting) => {
                self.procs.remove(host);
                self.orch.start_failed(&mut self.backend, host, inst, "exited", now);
            }
            Some(HostState::Running) if status.success() => {
                p.dead = true;
                let sig = AllocationSignal::new(SignalKind::ProcessExit, host, now).from_instance(inst);
                self.orch.report_signal(&mut self.backend, sig);
            }
            _ => {
                p.dead = true;
                self.orch.handle_fault(&mut self.backend, host, now);
            }
        }
    }

    fn drain(&mut self) {
        loop {
            let calls = self.backend.drain();
            if calls.is_empty() {
                break;
            }
            for (_, call) in calls {
                self.on_call(call);
            }
        }
    }

    fn on_call(&mut self, call: BackendCall) {
        let now = self.now();
        match call {
            BackendCall::Start(req) => self.spawn(req),
            BackendCall::Suspend(InstanceRef { hostname, instance }) => {
                if let Some(p) = self.procs.get(&hostname).filter(|p| p.instance == instance && !p.dead) {
                    signal(p.pid, libc::SIGSTOP);
                }
            }
            BackendCall::Resume(InstanceRef { hostname, instance }) => {
                match self.procs.get(&hostname).filter(|p| p.instance == instance) {
                    Some(p) if !p.dead && signal(p.pid, libc::SIGCONT) => {
                        let _ = self.tx.send(Msg::Resumed {
                            host: hostname,
                            inst: instance,
                        });
                    }
                    _ => self.orch.handle_fault(&mut self.backend, &hostname, now),
                }
            }
            BackendCall::Release(InstanceRef { hostname, instance }) => {
                if let Some(p) = self.procs.get(&hostname).filter(|p| p.instance == instance) {
                    if !p.dead {
                        signal(p.pid, libc::SIGKILL);
                    }
                    self.procs.remove(&hostname);
                }
            }
            BackendCall::Notify(n) => self.notify(n, now),
        }
    }

    fn notify(&mut self, n: Notification, now: Timestamp) {
        match n {
            Notification::Admitted { conn, src, dst } => {
                let Some(client) = self.pending.remove(&conn) else {
                    return;
                };
                let Some(port) = dst.hostname().and_then(|h| self.procs.get(h)).map(|p| p.port) else {
                    return;
                };
                let peer = dst.label().to_string();
                self.orch
                    .app_event(now, "connected", &src, vec![("conn", conn.to_string()), ("peer", peer)]);
                let (reset_tx, reset_rx) = oneshot::channel();
                self.proxies.insert(conn, reset_tx);
                tokio::spawn(proxy(conn, client, port, reset_rx, self.tx.clone()));
            }
            Notification::Rejected { conn, src, reason, .. } => {
                self.pending.remove(&conn);
                self.orch.app_event(
                    now,
                    "connection-failed",
                    &src,
                    vec![("conn", conn.to_string()), ("reason", reason.to_string())],
                );
            }
            Notification::Reset { conn, peer } | Notification::Lost { conn, peer, .. } => {
                if let Some(tx) = self.proxies.remove(&conn) {
                    let _ = tx.send(());
                }
                if peer.hostname().is_none() {
                    self.orch
                        .app_event(now, "connection-reset", &peer, vec![("conn", conn.to_string())]);
                }
            }
        }
    }

    fn spawn(&mut self, req: StartRequest) {
        let StartRequest {
            hostname: host,
            function_type,
            instance: inst,
            ..
        } = req;
        let fail = |tx: &mpsc::UnboundedSender<Msg>, host: String, reason| {
            let _ = tx.send(Msg::NotReady { host, inst, reason });
        };
        let Some(spec) = self.orch.config().processes.get(&function_type).cloned() else {
            return fail(&self.tx, host, "no-process-spec");
        };
        let Ok(port) = free_port() else {
            return fail(&self.tx, host, "no-port");
        };
        let args = spec.render(&host, port, &self.portmap_path.display().to_string());
        let mut cmd = tokio::process::Command::new(&args[0]);
        cmd.args(&args[1..])
            .envs(spec.env.iter().map(|(k, v)| (k, v)))
            .stdin(Stdio::null())
            .stdout(Stdio::null())
            .stderr(Stdio::null())
            .kill_on_drop(true);
        if let Some(dir) = &spec.workdir {
            cmd.current_dir(dir);
        }
        let mut child = match cmd.spawn() {
            Ok(c) => c,
            Err(_) => return fail(&self.tx, host, "spawn"),
        };
        let pid = child.id().expect("not yet waited");
        self.spawned.push(pid);
        let exited = Arc::new(AtomicBool::new(false));
        self.procs.insert(
            host.clone(),
            Proc {
                instance: inst,
                pid,
                port,
                exited: exited.clone(),
                dead: false,
            },
        );

        let tx = self.tx.clone();
        let (h, flag) = (host.clone(), exited.clone());
        self.watchers.push(tokio::spawn(async move {
            if let Ok(status) = child.wait().await {
                flag.store(true, Ordering::SeqCst);
                let _ = tx.send(Msg::Exited { host: h, inst, status });
            }
        }));

        let tx = self.tx.clone();
        let timeout = spec.readiness_timeout;
        tokio::spawn(async move {
            let deadline = Instant::now() + timeout;
            loop {
                if exited.load(Ordering::SeqCst) {
                    return;
                }
                if TcpStream::connect((Ipv4Addr::LOCALHOST, port)).await.is_ok() {
                    let _ = tx.send(Msg::Ready { host, inst });
                    return;
                }
                if Instant::now() >= deadline {
                    signal(pid, libc::SIGKILL);
                    let _ = tx.send(Msg::NotReady {
                        host,
                        inst,
                        reason: "readiness-timeout",
                    });
                    return;
                }
                tokio::time::sleep(READINESS_POLL).await;
            }
        });
    }

    /// Running hosts with no open proxied connection are idle.
    fn report_idle(&mut self) {
        let now = self.now();
        let idle: Vec<(String, u64)> = self
            .orch
            .records()
            .filter(|r| {
                r.state == HostState::Running
                    && r.idle_since.is_none()
                    && r.open_connections == 0
                    && r.external_connections.is_empty()
            })
            .map(|r| (r.hostname.clone(), r.instance_id))
            .collect();
        for (host, inst) in idle {
            let sig = AllocationSignal::new(SignalKind::AllIdle, &host, now).from_instance(inst);
            self.orch.report_signal(&mut self.backend, sig);
        }
        self.drain();
    }

    async fn shutdown(&mut self) -> ShutdownReport {
        for (_, tx) in std::mem::take(&mut self.proxies) {
            let _ = tx.send(());
        }
        self.pending.clear();
        for p in self.procs.values() {
            if !p.exited.load(Ordering::SeqCst) {
                signal(p.pid, libc::SIGKILL);
            }
        }
        for w in std::mem::take(&mut self.watchers) {
            let _ = w.await;
        }
        let now = self.now();
        for host in std::mem::take(&mut self.procs).into_keys() {
            let inst = self.orch.record(&host).map_or(0, |r| r.instance_id);
            self.orch
                .trace_mut()
                .push(now, crate::trace::Channel::Orch, "shutdown-kill", &host, inst, Vec::<(&str, &str)>::new());
        }
        self.orch.finish(now);
        ShutdownReport {
            trace: std::mem::take(self.orch.trace_mut()),
            spawned: std::mem::take(&mut self.spawned),
        }
    }
}

async fn proxy(
    conn: ConnId,
    mut client: TcpStream,
    port: u16,
    reset: oneshot::Receiver<()>,
    tx: mpsc::UnboundedSender<Msg>,
) {
    let copied = async {
        let mut upstream = TcpStream::connect((Ipv4Addr::LOCALHOST, port)).await?;
        tokio::io::copy_bidirectional(&mut client, &mut upstream).await
    };
    let done = tokio::select! {
        r = copied => Some(r.unwrap_or((0, 0))),
        _ = reset => None,
    };
    match done {
        Some((up, down)) => {
            let _ = tx.send(Msg::ProxyDone { conn, up, down });
        }
        // Abortive close so the client sees a reset, not an orderly end. A
        // zero linger never blocks on drop.
        None => {
            #[allow(deprecated)]
            let _ = client.set_linger(Some(Duration::ZERO));
        }
    }
}
