//! Coupled simulations and statistical checks for comparing policies.
//!
//! The coupled runners use uniformization: completion epochs arrive at rate
//! `m·μ` and each epoch picks a uniform slot rank. Every system maps that
//! rank onto one of its servers through a bijection, so each busy server
//! completes at rate `μ` in every system and each marginal law matches a
//! plain simulation with exponential service.

use std::collections::VecDeque;
use std::fmt;

use rand::Rng;
use rand_distr::{Distribution, Exp};
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::distributions::{DistributionSpec, RngStream, StreamPurpose};
use crate::error::{ConfigError, SimError};
use crate::metrics::{age_trajectory, lower_bound_trajectory, time_average_age};
use crate::policies::{Policy, PolicyDescriptor};
use crate::sim::{Ctx, Packet, PacketId, SystemConfig, SystemState, Trace};

/// How a shared slot rank is mapped onto servers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum CouplingMode {
    /// Rank `i` is the slot with the `i`-th largest generation time, idle
    /// and stale slots counting as `U`. Checks `U` and slot ordering
    /// against system 0.
    Freshness,
    /// Rank `i` is the `i`-th busy server by index. Checks that the number
    /// of packets in the system and the number delivered agree with
    /// system 0.
    BusyOrder,
}

/// One participant of a coupled run.
pub struct CoupledSystem {
    pub label: String,
    pub config: SystemConfig,
    pub policy: Box<dyn Policy + Send>,
}

impl CoupledSystem {
    pub fn new(descriptor: PolicyDescriptor, config: SystemConfig) -> Result<Self, ConfigError> {
        let policy = descriptor.build(&config)?;
        Ok(Self {
            label: format!("{descriptor} r={} B={}", config.r, config.buffer),
            config,
            policy,
        })
    }

    /// A system driven by a hand-written policy.
    pub fn custom(label: impl Into<String>, config: SystemConfig, policy: Box<dyn Policy + Send>) -> Self {
        Self {
            label: label.into(),
            config,
            policy,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Epoch {
    pub time: f64,
    pub rank: usize,
}

/// `U` and the per-server generation times sorted in decreasing order,
/// with idle servers and servers holding packets no fresher than `U`
/// reported as `U`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Snapshot {
    pub time: f64,
    pub u: f64,
    pub alpha: Vec<f64>,
}

impl Snapshot {
    /// `U ≥ other.U` and `alpha[i] ≥ other.alpha[i]` for every `i`.
    pub fn dominates(&self, other: &Self) -> bool {
        self.u >= other.u && self.alpha.iter().zip(&other.alpha).all(|(a, b)| a >= b)
    }
}

/// Server indices ordered by slot rank, together with the slot values.
fn freshness_order(state: &SystemState) -> Vec<(f64, usize)> {
    let u = state.freshest_delivered();
    let mut slots: Vec<(f64, usize)> = state
        .servers()
        .iter()
        .map(|s| {
            let value = s.occupant.map_or(u, |id| state.packet(id).s.max(u));
            (value, s.index)
        })
        .collect();
    slots.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    slots
}

pub fn snapshot(state: &SystemState, time: f64) -> Snapshot {
    Snapshot {
        time,
        u: state.freshest_delivered(),
        alpha: freshness_order(state).into_iter().map(|(v, _)| v).collect(),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Counts {
    pub in_system: usize,
    pub delivered: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Discrepancy {
    pub time: f64,
    pub event: usize,
    pub detail: String,
}

#[derive(Debug, Clone, Copy, Default)]
pub struct RecordOptions {
    pub snapshots: bool,
    pub counts: bool,
}

#[derive(Debug, Clone)]
pub struct CoupledRun {
    pub mode: CouplingMode,
    pub labels: Vec<String>,
    pub schedule: Vec<Epoch>,
    pub traces: Vec<Trace>,
    /// Per system, one entry per event when requested.
    pub snapshots: Vec<Vec<Snapshot>>,
    pub counts: Vec<Vec<(f64, Counts)>>,
    /// First failed comparison of each system against system 0.
    pub discrepancies: Vec<Option<Discrepancy>>,
    /// Arrivals plus completion epochs processed, including epochs that
    /// hit no busy server.
    pub events: usize,
}

impl CoupledRun {
    pub fn holds(&self) -> bool {
        self.discrepancies.iter().all(Option::is_none)
    }
}

fn busy_order(state: &SystemState) -> Vec<usize> {
    state
        .servers()
        .iter()
        .filter(|s| !s.is_idle())
        .map(|s| s.index)
        .collect()
}

fn counts(state: &SystemState) -> Counts {
    Counts {
        in_system: state.in_system(),
        delivered: state.delivered_count(),
    }
}

/// Runs every system on the same workload and completion schedule until
/// the horizon of system 0. All systems need the same `m` and the same
/// exponential service law; epochs come from the coupling stream of
/// system 0's seed.
pub fn run_coupled(
    mode: CouplingMode,
    mut systems: Vec<CoupledSystem>,
    workload: &[Packet],
    options: RecordOptions,
) -> Result<CoupledRun, SimError> {
    let Some(first) = systems.first() else {
        return Err(ConfigError::Invalid("coupled run needs at least one system".into()).into());
    };
    let base = first.config.clone().validated()?;
    let Some(rate) = base.service.exponential_rate() else {
        return Err(ConfigError::Invalid(format!("coupling needs exponential service, got {}", base.service)).into());
    };
    for sys in &systems {
        sys.config.clone().validated()?;
        if sys.config.m != base.m || sys.config.service.exponential_rate() != Some(rate) {
            return Err(ConfigError::Invalid(format!(
                "`{}` differs from `{}` in server count or service law",
                sys.label, first.label
            ))
            .into());
        }
        if mode == CouplingMode::BusyOrder && sys.config.buffer.limit().is_some() {
            return Err(ConfigError::Invalid(format!(
                "count coupling needs an unbounded buffer, `{}` has B={}",
                sys.label, sys.config.buffer
            ))
            .into());
        }
    }

    let m = base.m;
    let horizon = base.horizon;
    let mut states: Vec<SystemState> = systems
        .iter()
        .map(|s| SystemState::new(m, s.config.r, workload.to_vec()))
        .collect();
    let n = systems.len();
    let mut run = CoupledRun {
        mode,
        labels: systems.iter().map(|s| s.label.clone()).collect(),
        schedule: Vec::new(),
        traces: Vec::new(),
        snapshots: vec![Vec::new(); if options.snapshots { n } else { 0 }],
        counts: vec![Vec::new(); if options.counts { n } else { 0 }],
        discrepancies: vec![None; n],
        events: 0,
    };

    let mut arrivals: Vec<usize> = (0..workload.len()).collect();
    arrivals.sort_by(|&x, &y| workload[x].a.total_cmp(&workload[y].a).then(x.cmp(&y)));
    let mut arrivals = arrivals.into_iter().peekable();
    let mut rng = RngStream::new(base.seed, StreamPurpose::Coupling, 0);
    let clock = Exp::new(m as f64 * rate).expect("positive rate");
    let mut next_epoch = clock.sample(&mut rng);

    loop {
        let arrival = arrivals.peek().map(|&i| workload[i].a);
        let now = match arrival {
            Some(a) if a <= next_epoch => a,
            _ => next_epoch,
        };
        if now > horizon {
            break;
        }
        if arrival == Some(now) {
            let id = workload[arrivals.next().expect("peeked")].id;
            for (sys, state) in systems.iter_mut().zip(&mut states) {
                state.arrive(sys.policy.as_mut(), id, now)?;
            }
        } else {
            let rank = rng.random_range(0..m);
            run.schedule.push(Epoch { time: now, rank });
            for (sys, state) in systems.iter_mut().zip(&mut states) {
                let server = match mode {
                    CouplingMode::Freshness => {
                        let (_, server) = freshness_order(state)[rank];
                        (!state.servers()[server].is_idle()).then_some(server)
                    }
                    CouplingMode::BusyOrder => busy_order(state).get(rank).copied(),
                };
                if let Some(server) = server {
                    state.complete(sys.policy.as_mut(), server, now)?;
                }
            }
            next_epoch = now + clock.sample(&mut rng);
        }
        for state in &mut states {
            state.take_started();
        }
        run.events += 1;
        compare(mode, &states, now, &mut run, options);
    }

    run.traces = systems
        .into_iter()
        .zip(states)
        .map(|(sys, state)| state.into_trace(sys.config))
        .collect();
    Ok(run)
}

fn compare(mode: CouplingMode, states: &[SystemState], now: f64, run: &mut CoupledRun, options: RecordOptions) {
    let event = run.events;
    match mode {
        CouplingMode::Freshness => {
            let snaps: Vec<Snapshot> = states.iter().map(|s| snapshot(s, now)).collect();
            for (i, snap) in snaps.iter().enumerate().skip(1) {
                if run.discrepancies[i].is_none() && !snaps[0].dominates(snap) {
                    run.discrepancies[i] = Some(Discrepancy {
                        time: now,
                        event,
                        detail: format!(
                            "U={} alpha={:?} does not dominate U={} alpha={:?}",
                            snaps[0].u, snaps[0].alpha, snap.u, snap.alpha
                        ),
                    });
                }
            }
            if options.snapshots {
                for (store, snap) in run.snapshots.iter_mut().zip(snaps) {
                    store.push(snap);
                }
            }
        }
        CouplingMode::BusyOrder => {
            let reference = counts(&states[0]);
            for (i, state) in states.iter().enumerate().skip(1) {
                let c = counts(state);
                if run.discrepancies[i].is_none() && c != reference {
                    run.discrepancies[i] = Some(Discrepancy {
                        time: now,
                        event,
                        detail: format!(
                            "N={} delivered={} vs N={} delivered={}",
                            reference.in_system, reference.delivered, c.in_system, c.delivered
                        ),
                    });
                }
            }
        }
    }
    if options.counts {
        for (store, state) in run.counts.iter_mut().zip(states) {
            store.push((now, counts(state)));
        }
    }
}

/// Freshness coupling of `p` against `pi` on one workload.
pub fn run_coupled_exponential(
    p: (PolicyDescriptor, &SystemConfig),
    pi: (PolicyDescriptor, &SystemConfig),
    workload: &[Packet],
) -> Result<CoupledRun, SimError> {
    let systems = vec![
        CoupledSystem::new(p.0, p.1.clone())?,
        CoupledSystem::new(pi.0, pi.1.clone())?,
    ];
    run_coupled(CouplingMode::Freshness, systems, workload, RecordOptions::default())
}

/// Busy-order coupling of `p` against `pi`, recording `N(t)` and `γ(t)`.
pub fn run_coupled_counts(
    p: (PolicyDescriptor, &SystemConfig),
    pi: (PolicyDescriptor, &SystemConfig),
    workload: &[Packet],
) -> Result<CoupledRun, SimError> {
    let systems = vec![
        CoupledSystem::new(p.0, p.1.clone())?,
        CoupledSystem::new(pi.0, pi.1.clone())?,
    ];
    let options = RecordOptions {
        snapshots: false,
        counts: true,
    };
    run_coupled(CouplingMode::BusyOrder, systems, workload, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PacketGap {
    pub id: PacketId,
    pub s: f64,
    /// Earliest service start among packets at least as fresh.
    pub gamma: Option<f64>,
    /// Earliest delivery among packets at least as fresh.
    pub delivery: Option<f64>,
}

impl PacketGap {
    pub fn d(&self) -> Option<f64> {
        Some(self.delivery? - self.gamma?)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GapAudit {
    pub packets: Vec<PacketGap>,
    /// `∫_0^T (Δ(t) − Δ^LB(t)) dt`.
    pub gap_area: f64,
    /// The same area rebuilt packet by packet as
    /// `Σ τ_i (min(D_i, T) − min(Γ_i, T))`.
    pub decomposition: f64,
    /// `Σ τ_i d_i`, with `T − Γ_i` standing in for packets not yet covered
    /// by a delivery.
    pub bound: f64,
    pub horizon: f64,
}

impl GapAudit {
    pub fn mean_d(&self) -> Option<f64> {
        let ds: Vec<f64> = self.packets.iter().filter_map(PacketGap::d).collect();
        (!ds.is_empty()).then(|| ds.iter().sum::<f64>() / ds.len() as f64)
    }

    /// Gap between the time-average age and its lower bound.
    pub fn average_gap(&self) -> f64 {
        self.gap_area / self.horizon
    }
}

pub fn gap_audit(trace: &Trace) -> GapAudit {
    let horizon = trace.horizon();
    let mut order: Vec<&Packet> = trace.packets.iter().collect();
    order.sort_by(|a, b| a.s.total_cmp(&b.s).then(a.id.cmp(&b.id)));

    let mut packets = vec![
        PacketGap {
            id: PacketId(1),
            s: 0.0,
            gamma: None,
            delivery: None
        };
        order.len()
    ];
    let (mut gamma, mut delivery) = (f64::INFINITY, f64::INFINITY);
    let mut i = order.len();
    while i > 0 {
        // packets with equal s share their suffix minimum
        let mut j = i;
        while j > 0 && order[j - 1].s == order[i - 1].s {
            j -= 1;
            gamma = gamma.min(order[j].v.unwrap_or(f64::INFINITY));
            delivery = delivery.min(order[j].c.unwrap_or(f64::INFINITY));
        }
        for k in j..i {
            packets[k] = PacketGap {
                id: order[k].id,
                s: order[k].s,
                gamma: gamma.is_finite().then_some(gamma),
                delivery: delivery.is_finite().then_some(delivery),
            };
        }
        i = j;
    }

    let (mut decomposition, mut bound, mut prev_s) = (0.0, 0.0, 0.0);
    for p in &packets {
        let tau = p.s - prev_s;
        prev_s = p.s;
        let start = p.gamma.unwrap_or(horizon).min(horizon);
        let end = p.delivery.unwrap_or(horizon).min(horizon);
        decomposition += tau * (end - start).max(0.0);
        bound += tau * p.d().unwrap_or(horizon - start);
    }
    let gap_area =
        (time_average_age(&age_trajectory(trace)) - time_average_age(&lower_bound_trajectory(trace))) * horizon;
    GapAudit {
        packets,
        gap_area,
        decomposition,
        bound,
        horizon,
    }
}

/// `E[min(X_1, ..., X_r)]` estimated from `draws` samples.
pub fn mean_of_min_monte_carlo(spec: &DistributionSpec, r: usize, draws: usize, seed: u64) -> f64 {
    let sampler = spec.sampler();
    let mut stream = RngStream::new(seed, StreamPurpose::Experiment, r as u64);
    let total: f64 = (0..draws)
        .map(|_| (0..r).map(|_| sampler.draw(&mut stream)).fold(f64::INFINITY, f64::min))
        .sum();
    total / draws as f64
}

/// Sample mean and standard error of the mean.
pub fn mean_se(samples: &[f64]) -> (f64, f64) {
    let n = samples.len() as f64;
    let mean = samples.iter().sum::<f64>() / n;
    if samples.len() < 2 {
        return (mean, 0.0);
    }
    let var = samples.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Verdict {
    LessOrEqual,
    Greater,
    Inconclusive,
}

impl fmt::Display for Verdict {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::LessOrEqual => "A ≤ B",
            Self::Greater => "A > B",
            Self::Inconclusive => "inconclusive",
        })
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum VerificationError {
    #[error("at least {needed} replications per sample are required, got {got}")]
    TooFewReplications { needed: usize, got: usize },
    #[error("confidence must lie in (0.5, 1), got {0}")]
    InvalidConfidence(f64),
    #[error("paired samples differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
}

pub const MIN_REPLICATIONS: usize = 30;
/// Replications per sample used by statistical checks unless overridden.
pub const DEFAULT_REPLICATIONS: usize = 100;
pub const DEFAULT_CONFIDENCE: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Comparison {
    pub verdict: Verdict,
    pub mean_a: f64,
    pub mean_b: f64,
    /// Standard error of `mean_b − mean_a`.
    pub se: f64,
    pub statistic: f64,
    pub df: f64,
}

fn decide(diff: f64, se: f64, df: f64, confidence: f64) -> (Verdict, f64) {
    if se == 0.0 {
        let verdict = match diff.partial_cmp(&0.0) {
            Some(std::cmp::Ordering::Greater) => Verdict::LessOrEqual,
            Some(std::cmp::Ordering::Less) => Verdict::Greater,
            _ => Verdict::Inconclusive,
        };
        return (
            verdict,
            if diff == 0.0 {
                0.0
            } else {
                diff.signum() * f64::INFINITY
            },
        );
    }
    let t = diff / se;
    let q = StudentsT::new(0.0, 1.0, df)
        .expect("positive df")
        .inverse_cdf(confidence);
    let verdict = if t > q {
        Verdict::LessOrEqual
    } else if t < -q {
        Verdict::Greater
    } else {
        Verdict::Inconclusive
    };
    (verdict, t)
}

fn check_inputs(a: &[f64], b: &[f64], confidence: f64) -> Result<(), VerificationError> {
    if !(confidence > 0.5 && confidence < 1.0) {
        return Err(VerificationError::InvalidConfidence(confidence));
    }
    let got = a.len().min(b.len());
    if got < MIN_REPLICATIONS {
        return Err(VerificationError::TooFewReplications {
            needed: MIN_REPLICATIONS,
            got,
        });
    }
    Ok(())
}

/// One-sided Welch comparison of independent samples: `A ≤ B` when the
/// mean of `a` is significantly below that of `b`, `A > B` when it is
/// significantly above.
pub fn dominance_ci(a: &[f64], b: &[f64], confidence: f64) -> Result<Comparison, VerificationError> {
    check_inputs(a, b, confidence)?;
    let (ma, sa) = mean_se(a);
    let (mb, sb) = mean_se(b);
    let (va, vb) = (sa * sa, sb * sb);
    let se = (va + vb).sqrt();
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let df = if se == 0.0 {
        na + nb - 2.0
    } else {
        (va + vb).powi(2) / (va * va / (na - 1.0) + vb * vb / (nb - 1.0))
    };
    let (verdict, statistic) = decide(mb - ma, se, df, confidence);
    Ok(Comparison {
        verdict,
        mean_a: ma,
        mean_b: mb,
        se,
        statistic,
        df,
    })
}

/// Paired one-sided comparison for samples obtained under common random
/// numbers, using the differences `b_i − a_i`.
pub fn paired_dominance_ci(a: &[f64], b: &[f64], confidence: f64) -> Result<Comparison, VerificationError> {
    if a.len() != b.len() {
        return Err(VerificationError::LengthMismatch(a.len(), b.len()));
    }
    check_inputs(a, b, confidence)?;
    let diffs: Vec<f64> = b.iter().zip(a).map(|(y, x)| y - x).collect();
    let (md, se) = mean_se(&diffs);
    let df = (diffs.len() - 1) as f64;
    let (verdict, statistic) = decide(md, se, df, confidence);
    Ok(Comparison {
        verdict,
        mean_a: mean_se(a).0,
        mean_b: mean_se(b).0,
        se,
        statistic,
        df,
    })
}

/// FCFS that leaves servers idle until `batch` packets are waiting. Not
/// work-conserving; used as a negative control for the count coupling.
#[derive(Debug, Clone)]
pub struct BatchingFcfs {
    batch: usize,
    waiting: VecDeque<PacketId>,
    released: bool,
}

impl BatchingFcfs {
    pub fn new(batch: usize) -> Self {
        Self {
            batch,
            waiting: VecDeque::new(),
            released: false,
        }
    }

    fn dispatch(&mut self, ctx: &mut Ctx<'_>) -> Result<(), SimError> {
        if !self.released && self.waiting.len() < self.batch {
            return Ok(());
        }
        self.released = true;
        while ctx.idle_count() > 0 {
            let Some(id) = self.waiting.pop_front() else {
                break;
            };
            ctx.replicate(id, 1)?;
        }
        if self.waiting.is_empty() && ctx.idle_count() == ctx.num_servers() {
            self.released = false;
        }
        Ok(())
    }
}

impl Policy for BatchingFcfs {
    fn on_arrival(&mut self, ctx: &mut Ctx<'_>, packet: PacketId) -> Result<(), SimError> {
        self.waiting.push_back(packet);
        self.dispatch(ctx)
    }

    fn on_departure(&mut self, ctx: &mut Ctx<'_>, _delivered: PacketId) -> Result<(), SimError> {
        self.dispatch(ctx)
    }

    fn queued(&self) -> Vec<PacketId> {
        self.waiting.iter().copied().collect()
    }
}

/// Outcome of one checked claim.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClaimReport {
    pub claim: String,
    pub config: String,
    pub observed: f64,
    pub bound: f64,
    pub pass: bool,
    pub detail: String,
}

impl fmt::Display for ClaimReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "[{}] {} | {} | observed={} bound={}",
            if self.pass { "PASS" } else { "FAIL" },
            self.claim,
            self.config,
            self.observed,
            self.bound
        )?;
        if !self.detail.is_empty() {
            write!(f, " | {}", self.detail)?;
        }
        Ok(())
    }
}
