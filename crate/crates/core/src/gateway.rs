//! Data plane bookkeeping: every socket control operation of every instance
//! passes through here. The gateway keeps the connection table, turns socket
//! operations into allocation signals and classifies connections as internal
//! or external.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::net::Ipv4Addr;

use thiserror::Error;

use crate::config::{is_valid_hostname, Subnet};
use crate::lifecycle::{ConnId, EndpointRole, RejectReason};
use crate::orchestrator::{AllocationSignal, SignalKind};
use crate::time::Timestamp;

/// One side of a connection.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Endpoint {
    /// A host function, by hostname.
    Host(String),
    /// A peer outside the virtual network. `label` names it in traces.
    External { label: String, addr: Ipv4Addr },
}

impl Endpoint {
    pub fn external(label: impl Into<String>, addr: Ipv4Addr) -> Self {
        Endpoint::External {
            label: label.into(),
            addr,
        }
    }

    pub fn hostname(&self) -> Option<&str> {
        match self {
            Endpoint::Host(h) => Some(h),
            Endpoint::External { .. } => None,
        }
    }

    /// Name used in the `host=` field of trace records.
    pub fn label(&self) -> &str {
        match self {
            Endpoint::Host(h) => h,
            Endpoint::External { label, .. } => label,
        }
    }
}

impl fmt::Display for Endpoint {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ConnState {
    Pending,
    Established,
    Closed,
    Reset,
    Lost,
}

impl ConnState {
    pub fn as_str(self) -> &'static str {
        match self {
            ConnState::Pending => "pending",
            ConnState::Established => "established",
            ConnState::Closed => "closed",
            ConnState::Reset => "reset",
            ConnState::Lost => "lost",
        }
    }

    fn can_become(self, next: ConnState) -> bool {
        use ConnState::*;
        matches!(
            (self, next),
            (Pending, Established) | (Pending, Reset) | (Established, Closed) | (Established, Reset) | (Established, Lost)
        )
    }
}

/// `SrcToDst` carries bytes written by the initiator.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    SrcToDst,
    DstToSrc,
}

impl Direction {
    pub fn as_str(self) -> &'static str {
        match self {
            Direction::SrcToDst => "fwd",
            Direction::DstToSrc => "rev",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FlowCounters {
    pub sent: u64,
    pub delivered: u64,
    pub dropped: u64,
}

impl FlowCounters {
    pub fn in_flight(&self) -> u64 {
        self.sent - self.delivered - self.dropped
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ConnectionRecord {
    pub id: ConnId,
    pub src: Endpoint,
    pub dst: Endpoint,
    pub state: ConnState,
    pub forward: FlowCounters,
    pub backward: FlowCounters,
    pub created_at: Timestamp,
    pub last_activity_at: Timestamp,
}

impl ConnectionRecord {
    /// The initiator is always the active endpoint.
    pub fn role_of(&self, who: &Endpoint) -> Option<EndpointRole> {
        if &self.src == who {
            Some(EndpointRole::Active)
        } else if &self.dst == who {
            Some(EndpointRole::Passive)
        } else {
            None
        }
    }

    pub fn peer_of(&self, who: &Endpoint) -> Option<&Endpoint> {
        if &self.src == who {
            Some(&self.dst)
        } else if &self.dst == who {
            Some(&self.src)
        } else {
            None
        }
    }

    /// The endpoint that receives bytes travelling in `dir`.
    pub fn receiver(&self, dir: Direction) -> &Endpoint {
        match dir {
            Direction::SrcToDst => &self.dst,
            Direction::DstToSrc => &self.src,
        }
    }

    pub fn sender(&self, dir: Direction) -> &Endpoint {
        match dir {
            Direction::SrcToDst => &self.src,
            Direction::DstToSrc => &self.dst,
        }
    }

    fn flow_mut(&mut self, dir: Direction) -> &mut FlowCounters {
        match dir {
            Direction::SrcToDst => &mut self.forward,
            Direction::DstToSrc => &mut self.backward,
        }
    }

    pub fn flow(&self, dir: Direction) -> &FlowCounters {
        match dir {
            Direction::SrcToDst => &self.forward,
            Direction::DstToSrc => &self.backward,
        }
    }
}

/// How a connection looks from the host's side.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    Internal,
    External(EndpointRole),
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct SocketTable {
    pub conns: BTreeSet<ConnId>,
    pub listening: BTreeSet<u16>,
    pub connects: u64,
    pub accepts: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum SocketOp {
    Connect(String),
    Listen(u16),
    Accept(ConnId),
    Close(ConnId),
    Send(ConnId, u64),
    Recv(ConnId, u64),
}

impl SocketOp {
    pub fn name(&self) -> &'static str {
        match self {
            SocketOp::Connect(_) => "connect",
            SocketOp::Listen(_) => "listen",
            SocketOp::Accept(_) => "accept",
            SocketOp::Close(_) => "close",
            SocketOp::Send(..) => "send",
            SocketOp::Recv(..) => "recv",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GatewayError {
    #[error("unknown connection {0}")]
    UnknownConn(ConnId),
    #[error("connection {conn} does not belong to {host}")]
    NotAnEndpoint { conn: ConnId, host: String },
    #[error("connection {conn} is {state}, expected {expected}")]
    BadState {
        conn: ConnId,
        state: &'static str,
        expected: &'static str,
    },
}

/// Result of one intercepted socket operation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct OpOutcome {
    /// Connection created by a `Connect`.
    pub conn: Option<ConnId>,
    /// A `Connect` that failed before reaching orchestration.
    pub failed: Option<RejectReason>,
    pub signals: Vec<AllocationSignal>,
}

/// What happened to a forwarded payload.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Forwarded {
    /// Accepted for delivery to this endpoint.
    Sent { to: Endpoint },
    /// The connection was lost to a preemptive suspension; the sender sees a
    /// reset.
    SenderReset,
}

#[derive(Debug, Clone)]
pub struct Gateway {
    subnet: Subnet,
    next_conn: u64,
    names: BTreeMap<Ipv4Addr, String>,
    addrs: BTreeMap<String, Ipv4Addr>,
    conns: BTreeMap<ConnId, ConnectionRecord>,
    tables: BTreeMap<String, SocketTable>,
}

impl Gateway {
    pub fn new(subnet: Subnet) -> Self {
        Gateway {
            subnet,
            next_conn: 1,
            names: BTreeMap::new(),
            addrs: BTreeMap::new(),
            conns: BTreeMap::new(),
            tables: BTreeMap::new(),
        }
    }

    /// Makes `addr` reachable under `hostname`.
    pub fn bind(&mut self, hostname: &str, addr: Ipv4Addr) {
        self.names.insert(addr, hostname.to_string());
        self.addrs.insert(hostname.to_string(), addr);
    }

    pub fn connection(&self, id: ConnId) -> Option<&ConnectionRecord> {
        self.conns.get(&id)
    }

    pub fn connections(&self) -> impl Iterator<Item = &ConnectionRecord> {
        self.conns.values()
    }

    pub fn table(&self, host: &str) -> Option<&SocketTable> {
        self.tables.get(host)
    }

    fn address_of(&self, e: &Endpoint) -> Option<Ipv4Addr> {
        match e {
            Endpoint::Host(h) => self.addrs.get(h).copied(),
            Endpoint::External { addr, .. } => Some(*addr),
        }
    }

    fn in_subnet(&self, e: &Endpoint) -> bool {
        self.address_of(e).is_some_and(|a| self.subnet.contains(a))
            || matches!(e, Endpoint::Host(h) if !self.addrs.contains_key(h))
    }

    /// Internal when both endpoints are inside the virtual subnet; otherwise
    /// external, with the role the in-subnet endpoint plays.
    pub fn classify_external(&self, conn: &ConnectionRecord) -> Classification {
        match (self.in_subnet(&conn.src), self.in_subnet(&conn.dst)) {
            (true, true) => Classification::Internal,
            (true, false) => Classification::External(EndpointRole::Active),
            (false, _) => Classification::External(EndpointRole::Passive),
        }
    }

    /// Established connections of `host`: the internal count and the list of
    /// external ones with the host's role.
    pub fn established_for(&self, host: &str) -> (u32, Vec<(ConnId, EndpointRole)>) {
        let me = Endpoint::Host(host.to_string());
        let mut internal = 0;
        let mut external = Vec::new();
        if let Some(t) = self.tables.get(host) {
            for id in &t.conns {
                let c = &self.conns[id];
                if c.state != ConnState::Established {
                    continue;
                }
                match self.classify_external(c) {
                    Classification::Internal => internal += 1,
                    Classification::External(_) => {
                        external.push((c.id, c.role_of(&me).expect("table entries are endpoints")))
                    }
                }
            }
        }
        (internal, external)
    }

    /// Opens a connection record on behalf of `src`.
    pub fn open(&mut self, src: Endpoint, dst: Endpoint, now: Timestamp) -> ConnId {
        let id = ConnId(self.next_conn);
        self.next_conn += 1;
        for e in [&src, &dst] {
            if let Endpoint::Host(h) = e {
                self.tables.entry(h.clone()).or_default().conns.insert(id);
            }
        }
        if let Endpoint::Host(h) = &src {
            self.tables.get_mut(h).expect("just inserted").connects += 1;
        }
        self.conns.insert(
            id,
            ConnectionRecord {
                id,
                src,
                dst,
                state: ConnState::Pending,
                forward: FlowCounters::default(),
                backward: FlowCounters::default(),
                created_at: now,
                last_activity_at: now,
            },
        );
        id
    }

    /// Moves a connection to `next`, checking the allowed transitions.
    pub fn transition(&mut self, id: ConnId, next: ConnState, now: Timestamp) -> Result<&ConnectionRecord, GatewayError> {
        let c = self.conns.get_mut(&id).ok_or(GatewayError::UnknownConn(id))?;
        if !c.state.can_become(next) {
            return Err(GatewayError::BadState {
                conn: id,
                state: c.state.as_str(),
                expected: match next {
                    ConnState::Established => "pending",
                    _ => "pending or established",
                },
            });
        }
        c.state = next;
        c.last_activity_at = now;
        Ok(c)
    }

    /// Resets every live connection of `host`; returns the affected ids.
    pub fn reset_host(&mut self, host: &str, now: Timestamp) -> Vec<ConnId> {
        let ids: Vec<ConnId> = self
            .tables
            .get(host)
            .map(|t| t.conns.iter().copied().collect())
            .unwrap_or_default();
        let mut out = Vec::new();
        for id in ids {
            let c = self.conns.get_mut(&id).expect("table entries exist");
            if c.state == ConnState::Established {
                c.state = ConnState::Reset;
                c.last_activity_at = now;
                out.push(id);
            }
        }
        out
    }

    fn endpoint_check(&self, host: &str, id: ConnId) -> Result<&ConnectionRecord, GatewayError> {
        let c = self.conns.get(&id).ok_or(GatewayError::UnknownConn(id))?;
        let me = Endpoint::Host(host.to_string());
        if c.src != me && c.dst != me {
            return Err(GatewayError::NotAnEndpoint {
                conn: id,
                host: host.to_string(),
            });
        }
        Ok(c)
    }

    /// Intercepts one socket operation of `host`.
    pub fn on_socket_op(&mut self, host: &str, op: &SocketOp, now: Timestamp) -> Result<OpOutcome, GatewayError> {
        let activity = AllocationSignal::new(SignalKind::SocketActivity, host, now);
        let mut out = OpOutcome::default();
        match op {
            SocketOp::Connect(target) => {
                let src = Endpoint::Host(host.to_string());
                if let Ok(addr) = target.parse::<Ipv4Addr>() {
                    if self.subnet.contains(addr) {
                        match self.names.get(&addr).cloned() {
                            Some(name) => {
                                out.conn = Some(self.open(src, Endpoint::Host(name.clone()), now));
                                out.signals.push(AllocationSignal::new(SignalKind::ConnectTo(name), host, now));
                            }
                            None => out.failed = Some(RejectReason::UnknownHost),
                        }
                    } else {
                        out.conn = Some(self.open(src, Endpoint::external(format!("ext/{addr}"), addr), now));
                    }
                } else if is_valid_hostname(target) {
                    out.conn = Some(self.open(src, Endpoint::Host(target.clone()), now));
                    out.signals
                        .push(AllocationSignal::new(SignalKind::ConnectTo(target.clone()), host, now));
                } else {
                    out.failed = Some(RejectReason::MalformedHostname);
                }
                out.signals.push(activity);
            }
            SocketOp::Listen(port) => {
                self.tables.entry(host.to_string()).or_default().listening.insert(*port);
            }
            SocketOp::Accept(id) => {
                self.endpoint_check(host, *id)?;
                self.tables.entry(host.to_string()).or_default().accepts += 1;
                out.signals.push(activity);
            }
            SocketOp::Close(id) => {
                let state = self.endpoint_check(host, *id)?.state;
                match state {
                    ConnState::Established => {
                        self.transition(*id, ConnState::Closed, now)?;
                    }
                    // Closing a connection that already went away is harmless.
                    ConnState::Closed | ConnState::Reset | ConnState::Lost => {}
                    ConnState::Pending => {
                        return Err(GatewayError::BadState {
                            conn: *id,
                            state: "pending",
                            expected: "established",
                        })
                    }
                }
            }
            SocketOp::Send(id, n) => {
                self.endpoint_check(host, *id)?;
                self.tables.entry(host.to_string()).or_default().bytes_sent += n;
                out.signals.push(activity);
            }
            SocketOp::Recv(id, n) => {
                self.endpoint_check(host, *id)?;
                self.tables.entry(host.to_string()).or_default().bytes_received += n;
                out.signals.push(activity);
            }
        }
        Ok(out)
    }

    /// Accepts `bytes` from the `dir` sender for delivery to its peer.
    pub fn forward(&mut self, id: ConnId, dir: Direction, bytes: u64, now: Timestamp) -> Result<Forwarded, GatewayError> {
        let c = self.conns.get_mut(&id).ok_or(GatewayError::UnknownConn(id))?;
        match c.state {
            ConnState::Established => {
                c.flow_mut(dir).sent += bytes;
                c.last_activity_at = now;
                Ok(Forwarded::Sent {
                    to: c.receiver(dir).clone(),
                })
            }
            ConnState::Lost => {
                c.flow_mut(dir).sent += bytes;
                c.flow_mut(dir).dropped += bytes;
                Ok(Forwarded::SenderReset)
            }
            s => Err(GatewayError::BadState {
                conn: id,
                state: s.as_str(),
                expected: "established",
            }),
        }
    }

    /// Completes delivery of bytes previously accepted by [`forward`].
    /// Returns false (and counts the bytes as dropped) if the connection is
    /// no longer established.
    ///
    /// [`forward`]: Gateway::forward
    pub fn deliver(&mut self, id: ConnId, dir: Direction, bytes: u64, now: Timestamp) -> bool {
        let Some(c) = self.conns.get_mut(&id) else {
            return false;
        };
        if c.state == ConnState::Established {
            c.flow_mut(dir).delivered += bytes;
            c.last_activity_at = now;
            true
        } else {
            c.flow_mut(dir).dropped += bytes;
            false
        }
    }
}
