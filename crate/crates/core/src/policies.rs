//! Scheduling policies driven by the event loop through [`Ctx`].

use std::cmp::Ordering;
use std::collections::{BTreeSet, VecDeque};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{ConfigError, SimError};
use crate::sim::{BufferSize, Ctx, PacketId, SystemConfig};

pub trait Policy {
    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, packet: PacketId) -> Result<(), SimError>;

    /// Called after `delivered` finished and its other replicas were
    /// cancelled.
    fn on_departure(&mut self, ctx: &mut Ctx<'_>, delivered: PacketId) -> Result<(), SimError>;

    /// Packets waiting in the queue, in no particular order.
    fn queued(&self) -> Vec<PacketId>;
}

/// Which packet timestamp orders the queue: generation time for the LGFS
/// family, arrival time for LCFS.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum KeyField {
    Generation,
    Arrival,
}

impl KeyField {
    pub fn key(self, ctx: &Ctx<'_>, id: PacketId) -> PriorityKey {
        let p = ctx.packet(id);
        let value = match self {
            Self::Generation => p.s,
            Self::Arrival => p.a,
        };
        PriorityKey { value, id }
    }
}

/// Freshness key; equal timestamps are broken by id, larger id fresher.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PriorityKey {
    pub value: f64,
    pub id: PacketId,
}

impl Eq for PriorityKey {}

impl Ord for PriorityKey {
    fn cmp(&self, other: &Self) -> Ordering {
        self.value.total_cmp(&other.value).then(self.id.cmp(&other.id))
    }
}

impl PartialOrd for PriorityKey {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum PolicyDescriptor {
    PrmpLgfsR,
    NonPrmpLgfsR,
    Fcfs,
    LcfsPreemptive,
    LcfsNonPreemptive,
}

impl PolicyDescriptor {
    pub const ALL: [Self; 5] = [
        Self::PrmpLgfsR,
        Self::NonPrmpLgfsR,
        Self::Fcfs,
        Self::LcfsPreemptive,
        Self::LcfsNonPreemptive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Self::PrmpLgfsR => "prmp-lgfs-r",
            Self::NonPrmpLgfsR => "non-prmp-lgfs-r",
            Self::Fcfs => "fcfs",
            Self::LcfsPreemptive => "lcfs-p",
            Self::LcfsNonPreemptive => "lcfs-np",
        }
    }

    pub fn check(self, config: &SystemConfig) -> Result<(), ConfigError> {
        match self {
            Self::LcfsPreemptive | Self::LcfsNonPreemptive if config.r > 1 => Err(ConfigError::IncompatiblePolicy {
                policy: self.name().into(),
                reason: format!("replication is not supported (r={})", config.r),
            }),
            _ => Ok(()),
        }
    }

    pub fn build(self, config: &SystemConfig) -> Result<Box<dyn Policy + Send>, ConfigError> {
        self.check(config)?;
        let (m, r, b) = (config.m, config.r, config.buffer);
        Ok(match self {
            Self::PrmpLgfsR => Box::new(PrmpLgfs::new(m, r, b, KeyField::Generation)),
            Self::NonPrmpLgfsR => Box::new(NonPrmpLgfs::new(m, r, b, KeyField::Generation)),
            Self::Fcfs => Box::new(Fcfs::new(b)),
            Self::LcfsPreemptive => Box::new(PrmpLgfs::new(m, 1, b, KeyField::Arrival)),
            Self::LcfsNonPreemptive => Box::new(NonPrmpLgfs::new(m, 1, b, KeyField::Arrival)),
        })
    }
}

impl fmt::Display for PolicyDescriptor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PolicyDescriptor {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let s = s.trim().to_ascii_lowercase();
        let alias = match s.as_str() {
            "lcfs-preemptive" => "lcfs-p",
            "lcfs-nonpreemptive" | "lcfs-non-preemptive" => "lcfs-np",
            other => other,
        };
        Self::ALL
            .into_iter()
            .find(|d| d.name() == alias)
            .ok_or_else(|| ConfigError::Invalid(format!("unknown policy `{s}`")))
    }
}

impl TryFrom<String> for PolicyDescriptor {
    type Error = ConfigError;
    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<PolicyDescriptor> for String {
    fn from(value: PolicyDescriptor) -> Self {
        value.name().to_string()
    }
}

/// Preemptive freshest-first scheduling with up to `r` replicas per packet.
///
/// After every event the `⌈m/r⌉` freshest packets in the system are ranked;
/// the first `⌊m/r⌋` hold `r` servers each and the next holds the
/// remaining `m mod r`. Replicas of everything else are preempted back to
/// the queue. With `r = 1` and arrival-time keys this is LCFS-P.
#[derive(Debug, Clone)]
pub struct PrmpLgfs {
    m: usize,
    r: usize,
    buffer: BufferSize,
    key: KeyField,
    queue: BTreeSet<PriorityKey>,
}

impl PrmpLgfs {
    pub fn new(m: usize, r: usize, buffer: BufferSize, key: KeyField) -> Self {
        Self {
            m,
            r,
            buffer,
            key,
            queue: BTreeSet::new(),
        }
    }

    fn rebalance(&mut self, ctx: &mut Ctx<'_>) -> Result<(), SimError> {
        let slots = self.m.div_ceil(self.r);
        let in_service = ctx.in_service();
        let mut ranked: Vec<(PriorityKey, usize)> =
            in_service.iter().map(|&(id, n)| (self.key.key(ctx, id), n)).collect();
        ranked.extend(self.queue.iter().rev().take(slots).map(|&k| (k, 0)));
        ranked.sort_by_key(|r| std::cmp::Reverse(r.0));

        let mut remaining = self.m;
        let targets: Vec<usize> = ranked
            .iter()
            .map(|_| {
                let t = self.r.min(remaining);
                remaining -= t;
                t
            })
            .collect();

        for (&(key, held), &target) in ranked.iter().zip(&targets) {
            if held > target {
                let servers = ctx.servers_of(key.id);
                for &s in servers.iter().rev().take(held - target) {
                    ctx.preempt(s)?;
                }
                if target == 0 {
                    self.queue.insert(key);
                }
            }
        }
        for (&(key, held), &target) in ranked.iter().zip(&targets) {
            if held < target {
                if held == 0 {
                    self.queue.remove(&key);
                }
                ctx.replicate(key.id, target - held)?;
            }
        }

        if let Some(b) = self.buffer.limit() {
            while self.queue.len() > b {
                let stale = self.queue.pop_first().expect("non-empty queue");
                ctx.drop_packet(stale.id)?;
            }
        }
        Ok(())
    }
}

impl Policy for PrmpLgfs {
    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, packet: PacketId) -> Result<(), SimError> {
        self.queue.insert(self.key.key(ctx, packet));
        self.rebalance(ctx)
    }

    fn on_departure(&mut self, ctx: &mut Ctx<'_>, _delivered: PacketId) -> Result<(), SimError> {
        self.rebalance(ctx)
    }

    fn queued(&self) -> Vec<PacketId> {
        self.queue.iter().map(|k| k.id).collect()
    }
}

/// Non-preemptive freshest-first scheduling with replication. A full queue
/// keeps the fresher of the arrival and its stalest entry. With `r = 1` and
/// arrival-time keys this is LCFS-NP.
#[derive(Debug, Clone)]
pub struct NonPrmpLgfs {
    m: usize,
    r: usize,
    buffer: BufferSize,
    key: KeyField,
    queue: BTreeSet<PriorityKey>,
}

impl NonPrmpLgfs {
    pub fn new(m: usize, r: usize, buffer: BufferSize, key: KeyField) -> Self {
        Self {
            m,
            r,
            buffer,
            key,
            queue: BTreeSet::new(),
        }
    }
}

impl Policy for NonPrmpLgfs {
    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, packet: PacketId) -> Result<(), SimError> {
        let idle = ctx.idle_count();
        if idle > 0 {
            ctx.replicate(packet, self.r.min(idle))?;
            return Ok(());
        }
        let key = self.key.key(ctx, packet);
        if self.buffer.admits(self.queue.len()) {
            self.queue.insert(key);
            return Ok(());
        }
        match self.queue.first().copied() {
            Some(stalest) if key > stalest => {
                self.queue.pop_first();
                ctx.drop_packet(stalest.id)?;
                self.queue.insert(key);
            }
            _ => ctx.drop_packet(packet)?,
        }
        Ok(())
    }

    fn on_departure(&mut self, ctx: &mut Ctx<'_>, _delivered: PacketId) -> Result<(), SimError> {
        let k = self.m / self.r;
        let deficit = self.m - k * self.r;
        let short = if deficit > 0 {
            ctx.in_service()
                .into_iter()
                .filter(|&(_, n)| n == deficit)
                .map(|(id, _)| self.key.key(ctx, id))
                .max()
        } else {
            None
        };
        let extra = (k + 1) * self.r - self.m;
        match self.queue.last().copied() {
            None => {
                if let Some(pj) = short {
                    ctx.replicate(pj.id, extra)?;
                }
            }
            Some(head) => {
                if let Some(pj) = short.filter(|pj| *pj > head) {
                    ctx.replicate(pj.id, extra)?;
                }
                let idle = ctx.idle_count();
                if idle > 0 {
                    self.queue.pop_last();
                    ctx.replicate(head.id, self.r.min(idle))?;
                }
            }
        }
        Ok(())
    }

    fn queued(&self) -> Vec<PacketId> {
        self.queue.iter().map(|k| k.id).collect()
    }
}

/// First-come first-served in arrival order, one server per packet.
#[derive(Debug, Clone)]
pub struct Fcfs {
    buffer: BufferSize,
    queue: VecDeque<PacketId>,
}

impl Fcfs {
    pub fn new(buffer: BufferSize) -> Self {
        Self {
            buffer,
            queue: VecDeque::new(),
        }
    }
}

impl Policy for Fcfs {
    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, packet: PacketId) -> Result<(), SimError> {
        if ctx.idle_count() > 0 {
            ctx.replicate(packet, 1)?;
        } else if self.buffer.admits(self.queue.len()) {
            self.queue.push_back(packet);
        } else {
            ctx.drop_packet(packet)?;
        }
        Ok(())
    }

    fn on_departure(&mut self, ctx: &mut Ctx<'_>, _delivered: PacketId) -> Result<(), SimError> {
        while ctx.idle_count() > 0 {
            let Some(next) = self.queue.pop_front() else {
                break;
            };
            ctx.replicate(next, 1)?;
        }
        Ok(())
    }

    fn queued(&self) -> Vec<PacketId> {
        self.queue.iter().copied().collect()
    }
}
