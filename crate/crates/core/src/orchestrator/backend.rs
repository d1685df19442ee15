use std::net::Ipv4Addr;

use crate::gateway::Endpoint;
use crate::lifecycle::{ConnId, RejectReason};
use crate::time::Timestamp;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct StartRequest {
    pub hostname: String,
    pub function_type: String,
    pub address: Ipv4Addr,
    pub instance: u64,
}

/// A specific instance of a hostname.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct InstanceRef {
    pub hostname: String,
    pub instance: u64,
}

/// Connection outcomes the backend must surface to applications.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Notification {
    Admitted {
        conn: ConnId,
        src: Endpoint,
        dst: Endpoint,
    },
    Rejected {
        conn: ConnId,
        src: Endpoint,
        dst: String,
        reason: RejectReason,
    },
    /// `peer` sees the connection reset because the other side went away.
    Reset { conn: ConnId, peer: Endpoint },
    /// An external connection of `host` was dropped by suspension.
    Lost { conn: ConnId, host: String, peer: Endpoint },
}

/// What the function manager needs from a platform.
///
/// Calls must not block. `start` and `resume` complete asynchronously: the
/// backend reports back exactly once per call through the orchestrator's
/// `start_completed` / `start_failed` / `resume_completed`.
pub trait Backend {
    fn start(&mut self, req: StartRequest, now: Timestamp);
    fn suspend(&mut self, inst: InstanceRef, now: Timestamp);
    fn resume(&mut self, inst: InstanceRef, now: Timestamp);
    fn release(&mut self, inst: InstanceRef, now: Timestamp);
    fn notify(&mut self, n: Notification, now: Timestamp);
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum BackendCall {
    Start(StartRequest),
    Suspend(InstanceRef),
    Resume(InstanceRef),
    Release(InstanceRef),
    Notify(Notification),
}

/// Backend that only records calls; drivers drain and act on them.
#[derive(Debug, Clone, Default)]
pub struct RecordingBackend {
    pub calls: Vec<(Timestamp, BackendCall)>,
}

impl RecordingBackend {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn drain(&mut self) -> Vec<(Timestamp, BackendCall)> {
        std::mem::take(&mut self.calls)
    }
}

impl Backend for RecordingBackend {
    fn start(&mut self, req: StartRequest, now: Timestamp) {
        self.calls.push((now, BackendCall::Start(req)));
    }

    fn suspend(&mut self, inst: InstanceRef, now: Timestamp) {
        self.calls.push((now, BackendCall::Suspend(inst)));
    }

    fn resume(&mut self, inst: InstanceRef, now: Timestamp) {
        self.calls.push((now, BackendCall::Resume(inst)));
    }

    fn release(&mut self, inst: InstanceRef, now: Timestamp) {
        self.calls.push((now, BackendCall::Release(inst)));
    }

    fn notify(&mut self, n: Notification, now: Timestamp) {
        self.calls.push((now, BackendCall::Notify(n)));
    }
}
