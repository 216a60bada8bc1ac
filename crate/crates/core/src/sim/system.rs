use crate::error::SimError;
use crate::policies::Policy;

use super::{Event, EventKind, Packet, PacketId, ServerState, SystemConfig, Trace};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Status {
    Pending,
    Arrived,
    Delivered,
    Dropped,
}

/// Server occupancy, packet records and the event log shared by the event
/// loop and the coupled runners. Policies only see it through [`Ctx`].
#[derive(Debug, Clone)]
pub struct SystemState {
    m: usize,
    r: usize,
    servers: Vec<ServerState>,
    tokens: Vec<u64>,
    packets: Vec<Packet>,
    status: Vec<Status>,
    log: Vec<Event>,
    sequence: u64,
    preemptions: u64,
    drops: u64,
    started: Vec<usize>,
    freshest_delivered: f64,
    in_system: usize,
    delivered: usize,
    log_events: bool,
}

impl SystemState {
    pub fn new(m: usize, r: usize, packets: Vec<Packet>) -> Self {
        let n = packets.len();
        Self {
            m,
            r,
            servers: (0..m).map(ServerState::idle).collect(),
            tokens: vec![0; m],
            packets: packets.into_iter().map(|p| Packet { v: None, c: None, ..p }).collect(),
            status: vec![Status::Pending; n],
            log: Vec::new(),
            sequence: 0,
            preemptions: 0,
            drops: 0,
            started: Vec::new(),
            freshest_delivered: 0.0,
            in_system: 0,
            delivered: 0,
            log_events: true,
        }
    }

    /// Turns the event log off or on; counters are kept either way.
    pub fn set_event_logging(&mut self, on: bool) {
        self.log_events = on;
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.servers
    }

    pub fn packets(&self) -> &[Packet] {
        &self.packets
    }

    pub fn packet(&self, id: PacketId) -> &Packet {
        &self.packets[id.index()]
    }

    /// `U(t)`: the largest generation time delivered so far (0 initially).
    pub fn freshest_delivered(&self) -> f64 {
        self.freshest_delivered
    }

    /// `N(t)`: distinct packets that arrived and were neither delivered nor
    /// dropped.
    pub fn in_system(&self) -> usize {
        self.in_system
    }

    /// `γ(t)`: distinct packets delivered so far.
    pub fn delivered_count(&self) -> usize {
        self.delivered
    }

    pub fn busy_count(&self) -> usize {
        self.servers.iter().filter(|s| !s.is_idle()).count()
    }

    /// Generation counter of a server slot; bumped on every assignment and
    /// release so stale scheduled completions can be recognised.
    pub fn token(&self, server: usize) -> u64 {
        self.tokens[server]
    }

    pub(crate) fn set_scheduled_completion(&mut self, server: usize, at: f64) {
        self.servers[server].scheduled_completion = Some(at);
    }

    /// Servers that started a new service during the last handler call.
    pub fn take_started(&mut self) -> Vec<usize> {
        std::mem::take(&mut self.started)
    }

    fn push_event(&mut self, time: f64, kind: EventKind) {
        if !self.log_events {
            return;
        }
        self.log.push(Event {
            time,
            kind,
            sequence: self.sequence,
        });
        self.sequence += 1;
    }

    fn release(&mut self, server: usize) -> PacketId {
        let slot = &mut self.servers[server];
        let packet = slot.occupant.take().expect("release of idle server");
        slot.service_start = None;
        slot.scheduled_completion = None;
        self.tokens[server] += 1;
        packet
    }

    pub fn arrive(&mut self, policy: &mut dyn Policy, id: PacketId, now: f64) -> Result<(), SimError> {
        let idx = id.index();
        if self.status[idx] != Status::Pending {
            return Err(SimError::violation(now, format!("packet {id} arrived twice")));
        }
        self.status[idx] = Status::Arrived;
        self.in_system += 1;
        self.push_event(now, EventKind::Arrival { packet: id });
        policy.on_arrival(&mut Ctx { now, state: self }, id)
    }

    /// Delivers the packet on `server`, cancels its other replicas and lets
    /// the policy refill the freed servers.
    pub fn complete(&mut self, policy: &mut dyn Policy, server: usize, now: f64) -> Result<PacketId, SimError> {
        let Some(id) = self.servers[server].occupant else {
            return Err(SimError::violation(now, format!("completion on idle server {server}")));
        };
        self.release(server);
        self.push_event(now, EventKind::Completion { server, packet: id });
        let idx = id.index();
        self.status[idx] = Status::Delivered;
        self.packets[idx].c = Some(now);
        self.in_system -= 1;
        self.delivered += 1;
        if self.packets[idx].s > self.freshest_delivered {
            self.freshest_delivered = self.packets[idx].s;
        }
        for other in 0..self.m {
            if self.servers[other].occupant == Some(id) {
                self.release(other);
                self.push_event(
                    now,
                    EventKind::Cancellation {
                        server: other,
                        packet: id,
                    },
                );
            }
        }
        policy.on_departure(&mut Ctx { now, state: self }, id)?;
        Ok(id)
    }

    /// Consumes the state into a [`Trace`], sorting the log by event order.
    pub fn into_trace(mut self, config: SystemConfig) -> Trace {
        self.log.sort_by(|a, b| a.order(b));
        Trace {
            config,
            packets: self.packets,
            event_log: self.log,
            preemption_count: self.preemptions,
            drop_count: self.drops,
        }
    }
}

/// The handle a policy uses to inspect and change server assignments while
/// handling one event at time `now`.
pub struct Ctx<'a> {
    now: f64,
    state: &'a mut SystemState,
}

impl Ctx<'_> {
    pub fn now(&self) -> f64 {
        self.now
    }

    pub fn num_servers(&self) -> usize {
        self.state.m
    }

    /// Maximum replication degree `r` of the system.
    pub fn max_replicas(&self) -> usize {
        self.state.r
    }

    pub fn servers(&self) -> &[ServerState] {
        &self.state.servers
    }

    pub fn packet(&self, id: PacketId) -> &Packet {
        self.state.packet(id)
    }

    pub fn idle_count(&self) -> usize {
        self.state.servers.iter().filter(|s| s.is_idle()).count()
    }

    pub fn idle_servers(&self) -> Vec<usize> {
        self.state
            .servers
            .iter()
            .filter(|s| s.is_idle())
            .map(|s| s.index)
            .collect()
    }

    pub fn replicas(&self, id: PacketId) -> usize {
        self.state.servers.iter().filter(|s| s.occupant == Some(id)).count()
    }

    pub fn servers_of(&self, id: PacketId) -> Vec<usize> {
        self.state
            .servers
            .iter()
            .filter(|s| s.occupant == Some(id))
            .map(|s| s.index)
            .collect()
    }

    /// Distinct in-service packets with their replica counts, in order of
    /// lowest server index.
    pub fn in_service(&self) -> Vec<(PacketId, usize)> {
        let mut out: Vec<(PacketId, usize)> = Vec::with_capacity(self.state.m);
        for s in &self.state.servers {
            if let Some(id) = s.occupant {
                match out.iter_mut().find(|(p, _)| *p == id) {
                    Some((_, n)) => *n += 1,
                    None => out.push((id, 1)),
                }
            }
        }
        out
    }

    pub fn assign(&mut self, server: usize, id: PacketId) -> Result<(), SimError> {
        let now = self.now;
        if server >= self.state.m {
            return Err(SimError::violation(now, format!("server {server} out of range")));
        }
        if let Some(other) = self.state.servers[server].occupant {
            return Err(SimError::violation(
                now,
                format!("assignment of {id} to server {server}, busy with {other}"),
            ));
        }
        if self.state.status[id.index()] != Status::Arrived {
            return Err(SimError::violation(
                now,
                format!("assignment of {id} which is not waiting in the system"),
            ));
        }
        if self.replicas(id) >= self.state.r {
            return Err(SimError::violation(
                now,
                format!("{id} would exceed the replication degree r={}", self.state.r),
            ));
        }
        let slot = &mut self.state.servers[server];
        slot.occupant = Some(id);
        slot.service_start = Some(now);
        slot.scheduled_completion = None;
        self.state.tokens[server] += 1;
        self.state.started.push(server);
        let p = &mut self.state.packets[id.index()];
        if p.v.is_none() {
            p.v = Some(now);
        }
        Ok(())
    }

    /// Places `id` on up to `count` idle servers, lowest index first.
    /// Returns how many replicas were started.
    pub fn replicate(&mut self, id: PacketId, count: usize) -> Result<usize, SimError> {
        let targets: Vec<usize> = self.idle_servers().into_iter().take(count).collect();
        for &s in &targets {
            self.assign(s, id)?;
        }
        Ok(targets.len())
    }

    /// Stops service on `server`; the packet stays in the system and it is
    /// up to the policy to queue or drop it.
    pub fn preempt(&mut self, server: usize) -> Result<PacketId, SimError> {
        if self.state.servers.get(server).is_none_or(|s| s.is_idle()) {
            return Err(SimError::violation(
                self.now,
                format!("preemption of idle server {server}"),
            ));
        }
        let id = self.state.release(server);
        self.state.preemptions += 1;
        self.state
            .push_event(self.now, EventKind::Cancellation { server, packet: id });
        Ok(id)
    }

    /// Preempts every replica of `id`; returns the number stopped.
    pub fn preempt_all(&mut self, id: PacketId) -> Result<usize, SimError> {
        let servers = self.servers_of(id);
        for &s in &servers {
            self.preempt(s)?;
        }
        Ok(servers.len())
    }

    /// Removes a waiting packet from the system for good.
    pub fn drop_packet(&mut self, id: PacketId) -> Result<(), SimError> {
        if self.state.status[id.index()] != Status::Arrived || self.replicas(id) > 0 {
            return Err(SimError::violation(
                self.now,
                format!("drop of {id}, which is not waiting"),
            ));
        }
        self.state.status[id.index()] = Status::Dropped;
        self.state.in_system -= 1;
        self.state.drops += 1;
        self.state.push_event(self.now, EventKind::Drop { packet: id });
        Ok(())
    }
}
