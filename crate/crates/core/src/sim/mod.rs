//! Packets, system configuration, events and the deterministic event loop.

mod engine;
mod system;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::distributions::{DistributionSpec, RngStream, StreamPurpose};
use crate::error::ConfigError;

pub use engine::{run_simulation, run_simulation_with, RunOptions, ServiceTimes, StreamServiceTimes};
pub use system::{Ctx, SystemState};

/// 1-based packet identifier, increasing in generation order.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PacketId(pub u32);

impl PacketId {
    pub fn from_index(index: usize) -> Self {
        Self(u32::try_from(index + 1).expect("packet count exceeds u32"))
    }

    pub fn index(self) -> usize {
        self.0 as usize - 1
    }
}

impl fmt::Display for PacketId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "#{}", self.0)
    }
}

/// One update packet: generation time `s`, arrival time `a`, earliest
/// service start `v` and delivery time `c`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Packet {
    pub id: PacketId,
    pub s: f64,
    pub a: f64,
    pub v: Option<f64>,
    pub c: Option<f64>,
}

impl Packet {
    pub fn new(id: PacketId, s: f64, a: f64) -> Self {
        Self {
            id,
            s,
            a,
            v: None,
            c: None,
        }
    }
}

/// Builds a workload from `(s, a)` pairs, assigning ids in order.
pub fn workload_from_pairs(pairs: &[(f64, f64)]) -> Vec<Packet> {
    pairs
        .iter()
        .enumerate()
        .map(|(i, &(s, a))| Packet::new(PacketId::from_index(i), s, a))
        .collect()
}

/// Queue capacity `B`; `Infinite` is written as `"inf"` in text form.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "BufferRepr", into = "BufferRepr")]
pub enum BufferSize {
    Finite(usize),
    Infinite,
}

impl BufferSize {
    pub fn admits(&self, len: usize) -> bool {
        match *self {
            Self::Finite(b) => len < b,
            Self::Infinite => true,
        }
    }

    pub fn limit(&self) -> Option<usize> {
        match *self {
            Self::Finite(b) => Some(b),
            Self::Infinite => None,
        }
    }
}

impl fmt::Display for BufferSize {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Finite(b) => write!(f, "{b}"),
            Self::Infinite => f.write_str("inf"),
        }
    }
}

impl FromStr for BufferSize {
    type Err = ConfigError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "inf" | "infinity" | "∞" => Ok(Self::Infinite),
            other => other.parse::<usize>().map(Self::Finite).map_err(|_| {
                ConfigError::Invalid(format!(
                    "buffer size must be a non-negative integer or \"inf\", got `{s}`"
                ))
            }),
        }
    }
}

#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum BufferRepr {
    Count(u64),
    Text(String),
}

impl TryFrom<BufferRepr> for BufferSize {
    type Error = ConfigError;

    fn try_from(value: BufferRepr) -> Result<Self, Self::Error> {
        match value {
            BufferRepr::Count(n) => usize::try_from(n)
                .map(Self::Finite)
                .map_err(|_| ConfigError::Invalid(format!("buffer size {n} too large"))),
            BufferRepr::Text(t) => t.parse(),
        }
    }
}

impl From<BufferSize> for BufferRepr {
    fn from(value: BufferSize) -> Self {
        match value {
            BufferSize::Finite(b) => BufferRepr::Count(b as u64),
            BufferSize::Infinite => BufferRepr::Text("inf".into()),
        }
    }
}

/// Server count `m`, replication cap `r`, buffer `B`, the three input
/// distributions, horizon and seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemConfig {
    pub m: usize,
    pub r: usize,
    pub buffer: BufferSize,
    pub service: DistributionSpec,
    pub generation: DistributionSpec,
    pub arrival_delay: DistributionSpec,
    pub horizon: f64,
    pub seed: u64,
}

impl SystemConfig {
    /// A configuration with zero arrival delay (`a_i = s_i`).
    pub fn new(
        m: usize,
        r: usize,
        buffer: BufferSize,
        service: DistributionSpec,
        generation: DistributionSpec,
        horizon: f64,
        seed: u64,
    ) -> Result<Self, ConfigError> {
        Self {
            m,
            r,
            buffer,
            service,
            generation,
            arrival_delay: DistributionSpec::Constant { value: 0.0 },
            horizon,
            seed,
        }
        .validated()
    }

    pub fn with_arrival_delay(mut self, delay: DistributionSpec) -> Self {
        self.arrival_delay = delay;
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    pub fn with_buffer(mut self, buffer: BufferSize) -> Self {
        self.buffer = buffer;
        self
    }

    pub fn with_replication(mut self, r: usize) -> Self {
        self.r = r;
        self
    }

    pub fn validated(self) -> Result<Self, ConfigError> {
        if self.m == 0 {
            return Err(ConfigError::Invalid("m must be at least 1".into()));
        }
        if self.r == 0 || self.r > self.m {
            return Err(ConfigError::Invalid(format!(
                "replication degree r={} must satisfy 1 <= r <= m={}",
                self.r, self.m
            )));
        }
        if !(self.horizon.is_finite() && self.horizon > 0.0) {
            return Err(ConfigError::Invalid(format!(
                "horizon must be positive, got {}",
                self.horizon
            )));
        }
        self.service.validate()?;
        self.generation.validate()?;
        self.arrival_delay.validate()?;
        if self.service.mean() <= 0.0 {
            return Err(ConfigError::Invalid("service mean must be positive".into()));
        }
        if self.generation.mean() <= 0.0 {
            return Err(ConfigError::Invalid("inter-generation mean must be positive".into()));
        }
        Ok(self)
    }

    /// Generation rate λ.
    pub fn lambda(&self) -> f64 {
        1.0 / self.generation.mean()
    }

    /// Per-server service rate μ.
    pub fn mu(&self) -> f64 {
        1.0 / self.service.mean()
    }

    /// Traffic intensity λ/(mμ), computed as if there were no replication.
    pub fn rho(&self) -> f64 {
        self.lambda() / (self.m as f64 * self.mu())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum EventKind {
    Completion { server: usize, packet: PacketId },
    Cancellation { server: usize, packet: PacketId },
    Arrival { packet: PacketId },
    Drop { packet: PacketId },
}

impl EventKind {
    fn rank(&self) -> u8 {
        match self {
            Self::Completion { .. } => 0,
            Self::Cancellation { .. } => 1,
            Self::Arrival { .. } => 2,
            Self::Drop { .. } => 3,
        }
    }

    pub fn server(&self) -> Option<usize> {
        match *self {
            Self::Completion { server, .. } | Self::Cancellation { server, .. } => Some(server),
            _ => None,
        }
    }

    pub fn packet(&self) -> PacketId {
        match *self {
            Self::Completion { packet, .. }
            | Self::Cancellation { packet, .. }
            | Self::Arrival { packet }
            | Self::Drop { packet } => packet,
        }
    }
}

/// A logged event. Equal times order Completion < Cancellation < Arrival
/// < Drop, then by server index, packet id and sequence number.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Event {
    pub time: f64,
    pub kind: EventKind,
    pub sequence: u64,
}

impl Event {
    pub fn order(&self, other: &Self) -> Ordering {
        self.time
            .total_cmp(&other.time)
            .then(self.kind.rank().cmp(&other.kind.rank()))
            .then(
                self.kind
                    .server()
                    .unwrap_or(usize::MAX)
                    .cmp(&other.kind.server().unwrap_or(usize::MAX)),
            )
            .then(self.kind.packet().cmp(&other.kind.packet()))
            .then(self.sequence.cmp(&other.sequence))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServerState {
    pub index: usize,
    pub occupant: Option<PacketId>,
    pub service_start: Option<f64>,
    /// Set by the event loop; coupled runs drive completions externally and
    /// leave it empty.
    pub scheduled_completion: Option<f64>,
}

impl ServerState {
    pub fn idle(index: usize) -> Self {
        Self {
            index,
            occupant: None,
            service_start: None,
            scheduled_completion: None,
        }
    }

    pub fn is_idle(&self) -> bool {
        self.occupant.is_none()
    }
}

/// Complete record of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trace {
    pub config: SystemConfig,
    pub packets: Vec<Packet>,
    pub event_log: Vec<Event>,
    pub preemption_count: u64,
    pub drop_count: u64,
}

impl Trace {
    pub fn horizon(&self) -> f64 {
        self.config.horizon
    }

    pub fn delivered(&self) -> impl Iterator<Item = &Packet> {
        self.packets.iter().filter(|p| p.c.is_some())
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("trace serialises")
    }
}

/// Draws `(s, a)` for every packet generated in `[0, horizon]`.
/// `s_1 = τ_1`, `s_{i+1} = s_i + τ_{i+1}`, `a_i = s_i + δ_i`.
pub fn generate_workload(config: &SystemConfig) -> Result<Vec<Packet>, ConfigError> {
    let config = config.clone().validated()?;
    let mut gen_stream = RngStream::new(config.seed, StreamPurpose::Generation, 0);
    let mut delay_stream = RngStream::new(config.seed, StreamPurpose::ArrivalDelay, 0);
    generate_workload_from(&config, &mut gen_stream, &mut delay_stream)
}

pub fn generate_workload_from(
    config: &SystemConfig,
    generation: &mut RngStream,
    delay: &mut RngStream,
) -> Result<Vec<Packet>, ConfigError> {
    let gen = config.generation.sampler();
    let del = config.arrival_delay.sampler();
    let mut packets = Vec::new();
    let mut s = 0.0;
    loop {
        s += gen.draw(generation);
        if s > config.horizon {
            break;
        }
        let a = s + del.draw(delay);
        packets.push(Packet::new(PacketId::from_index(packets.len()), s, a));
    }
    Ok(packets)
}
