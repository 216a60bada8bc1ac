//! Named claim sets run by `aoi-sim verify`.

use std::fmt;

use crate::distributions::{
    check_nbu, default_nbu_grid, derive_seed, nbu_presets, DistributionSpec, DEFAULT_NBU_TOLERANCE,
};
use crate::error::{ConfigError, SimError};
use crate::metrics::age_trajectory;
use crate::policies::PolicyDescriptor;
use crate::sim::{generate_workload, run_simulation, workload_from_pairs, BufferSize, Packet, SystemConfig, Trace};
use crate::verification::{
    gap_audit, mean_of_min_monte_carlo, mean_se, run_coupled, BatchingFcfs, ClaimReport, CoupledSystem, CouplingMode,
    RecordOptions,
};

use super::HarnessError;

pub const SUITES: [&str; 7] = [
    "thm1",
    "thm2a",
    "thm2b",
    "thm3",
    "cor-b-invariance",
    "lcfs-equivalence",
    "nbu-presets",
];

/// Run counts and sizes for the suites.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SuiteScale {
    /// Coupled runs per configuration.
    pub runs: usize,
    /// Minimum events per coupled run.
    pub events: usize,
    /// Replications per gap estimate.
    pub replications: usize,
    /// Horizon of each gap replication.
    pub horizon: f64,
}

impl Default for SuiteScale {
    fn default() -> Self {
        Self {
            runs: 50,
            events: 10_000,
            replications: 20,
            horizon: 1e5,
        }
    }
}

impl SuiteScale {
    pub fn quick() -> Self {
        Self {
            runs: 4,
            events: 2_000,
            replications: 5,
            horizon: 2e3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteReport {
    pub suite: String,
    pub seed: u64,
    pub claims: Vec<ClaimReport>,
}

impl SuiteReport {
    pub fn passed(&self) -> bool {
        !self.claims.is_empty() && self.claims.iter().all(|c| c.pass)
    }
}

impl fmt::Display for SuiteReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for claim in &self.claims {
            writeln!(f, "{claim}")?;
        }
        let failed = self.claims.iter().filter(|c| !c.pass).count();
        write!(
            f,
            "suite {} seed {}: {} claims, {} failed",
            self.suite,
            self.seed,
            self.claims.len(),
            failed
        )
    }
}

pub fn run_verification_suite(suite: &str, seed: u64, scale: SuiteScale) -> Result<SuiteReport, HarnessError> {
    let claims = match suite {
        "thm1" => dominance(seed, scale)?,
        "thm2a" => gap_general(seed, scale)?,
        "thm2b" => gap_replicated(seed, scale)?,
        "thm3" => counts(seed, scale)?,
        "cor-b-invariance" => buffer_invariance(seed, scale)?,
        "lcfs-equivalence" => lcfs_equivalence(seed)?,
        "nbu-presets" => nbu(),
        other => {
            return Err(ConfigError::Invalid(format!(
                "unknown suite `{other}`, expected one of {}",
                SUITES.join(", ")
            ))
            .into())
        }
    };
    Ok(SuiteReport {
        suite: suite.to_string(),
        seed,
        claims,
    })
}

fn runtime(config: &SystemConfig, label: &str) -> impl Fn(SimError) -> HarnessError {
    let (seed, label) = (config.seed, label.to_string());
    move |source| HarnessError::Runtime {
        seed,
        config: label.clone(),
        source,
    }
}

fn exp(rate: f64) -> DistributionSpec {
    DistributionSpec::exponential(rate).expect("positive rate")
}

fn config(
    m: usize,
    r: usize,
    buffer: BufferSize,
    service: DistributionSpec,
    rho: f64,
    horizon: f64,
    seed: u64,
) -> Result<SystemConfig, ConfigError> {
    let lambda = rho * m as f64 / service.mean();
    SystemConfig::new(m, r, buffer, service, exp(lambda), horizon, seed)
}

/// Horizon expected to produce about `events` arrivals and completions.
fn horizon_for(events: usize, m: usize, rho: f64) -> f64 {
    let lambda = rho * m as f64;
    let completions = (m as f64).min(lambda);
    1.2 * events as f64 / (lambda + completions)
}

fn dominance(seed: u64, scale: SuiteScale) -> Result<Vec<ClaimReport>, HarnessError> {
    use PolicyDescriptor::*;
    let mut claims = Vec::new();
    for (m, r) in [(1, 1), (4, 1), (4, 2), (4, 4)] {
        let mut contenders: Vec<(PolicyDescriptor, usize, BufferSize)> = vec![
            (Fcfs, 1, BufferSize::Finite(10)),
            (Fcfs, 1, BufferSize::Infinite),
            (NonPrmpLgfsR, r, BufferSize::Finite(1)),
        ];
        if r == 1 {
            contenders.push((LcfsPreemptive, 1, BufferSize::Infinite));
            contenders.push((LcfsNonPreemptive, 1, BufferSize::Finite(1)));
        }
        let (mut checked, mut failed, mut min_events) = (0usize, Vec::new(), usize::MAX);
        for run in 0..scale.runs {
            let rho = [0.5, 1.0, 1.8][run % 3];
            let run_seed = derive_seed(&[seed, m as u64, r as u64, run as u64]);
            let mut base = config(
                m,
                r,
                BufferSize::Infinite,
                exp(1.0),
                rho,
                horizon_for(scale.events, m, rho),
                run_seed,
            )?;
            if run % 2 == 1 {
                base = base.with_arrival_delay(exp(1.0));
            }
            let workload = generate_workload(&base)?;
            let mut systems = vec![CoupledSystem::new(PrmpLgfsR, base.clone())?];
            for &(desc, cr, b) in &contenders {
                let c = base.clone().with_replication(cr).with_buffer(b);
                systems.push(CoupledSystem::new(desc, c)?);
            }
            let result = run_coupled(CouplingMode::Freshness, systems, &workload, RecordOptions::default())
                .map_err(runtime(&base, "coupled dominance"))?;
            checked += 1;
            min_events = min_events.min(result.events);
            for (label, d) in result.labels.iter().zip(&result.discrepancies) {
                if let Some(d) = d {
                    failed.push(format!("seed {run_seed} {label} at t={}: {}", d.time, d.detail));
                }
            }
        }
        let pass = failed.is_empty() && min_events >= scale.events;
        claims.push(ClaimReport {
            claim: "prmp-lgfs-r dominates U and slot ordering".into(),
            config: format!("m={m} r={r} runs={checked}"),
            observed: failed.len() as f64,
            bound: 0.0,
            pass,
            detail: failed
                .first()
                .cloned()
                .unwrap_or_else(|| format!("min events per run {min_events}")),
        });
    }
    Ok(claims)
}

struct GapEstimate {
    mean: f64,
    se: f64,
    mean_d: f64,
}

fn estimate_gap(
    base: &SystemConfig,
    descriptor: PolicyDescriptor,
    replications: usize,
) -> Result<GapEstimate, HarnessError> {
    let mut gaps = Vec::with_capacity(replications);
    let mut ds = Vec::with_capacity(replications);
    for k in 0..replications {
        let cfg = base.clone().with_seed(derive_seed(&[base.seed, k as u64]));
        let workload = generate_workload(&cfg)?;
        let mut policy = descriptor.build(&cfg)?;
        let trace = run_simulation(&cfg, policy.as_mut(), &workload).map_err(runtime(&cfg, descriptor.name()))?;
        let audit = gap_audit(&trace);
        gaps.push(audit.average_gap());
        if let Some(d) = audit.mean_d() {
            ds.push(d);
        }
    }
    let (mean, se) = mean_se(&gaps);
    let (mean_d, _) = mean_se(&ds);
    Ok(GapEstimate { mean, se, mean_d })
}

fn gap_claim(label: &str, cfg: &SystemConfig, bound: f64, est: &GapEstimate) -> ClaimReport {
    ClaimReport {
        claim: format!("{label} gap <= bound + 3 SE"),
        config: format!(
            "m={} r={} B={} service={} rho={:.2}",
            cfg.m,
            cfg.r,
            cfg.buffer,
            cfg.service,
            cfg.rho()
        ),
        observed: est.mean,
        bound: bound + 3.0 * est.se,
        pass: est.mean <= bound + 3.0 * est.se,
        detail: format!("se={:.4} mean d={:.4}", est.se, est.mean_d),
    }
}

fn gap_general(seed: u64, scale: SuiteScale) -> Result<Vec<ClaimReport>, HarnessError> {
    let mut claims = Vec::new();
    let gamma = DistributionSpec::gamma_mean(4.0, 1.0).expect("valid gamma");
    let cfg = config(4, 1, BufferSize::Finite(1), gamma, 1.8, scale.horizon, seed)?;
    let est = estimate_gap(&cfg, PolicyDescriptor::NonPrmpLgfsR, scale.replications)?;
    claims.push(gap_claim("non-prmp-lgfs-r", &cfg, 1.0, &est));

    let shifted = DistributionSpec::shifted_exponential(0.25, 4.0).expect("valid shifted exponential");
    for r in [1, 4] {
        for rho in [0.4, 1.0, 2.0] {
            let cfg = config(
                4,
                r,
                BufferSize::Finite(1),
                shifted,
                rho,
                scale.horizon,
                derive_seed(&[seed, r as u64, rho.to_bits()]),
            )?;
            let est = estimate_gap(&cfg, PolicyDescriptor::NonPrmpLgfsR, scale.replications)?;
            claims.push(gap_claim("non-prmp-lgfs-r", &cfg, shifted.mean(), &est));
        }
    }
    Ok(claims)
}

fn gap_replicated(seed: u64, scale: SuiteScale) -> Result<Vec<ClaimReport>, HarnessError> {
    let service = DistributionSpec::shifted_exponential(0.25, 4.0).expect("valid shifted exponential");
    let draws = if scale.replications >= 20 { 1_000_000 } else { 100_000 };
    let e_min = mean_of_min_monte_carlo(&service, 2, draws, seed);
    let mut claims = Vec::new();
    for rho in [0.5, 1.0, 1.8] {
        let cfg = config(
            4,
            2,
            BufferSize::Finite(1),
            service,
            rho,
            scale.horizon,
            derive_seed(&[seed, rho.to_bits()]),
        )?;
        let est = estimate_gap(&cfg, PolicyDescriptor::NonPrmpLgfsR, scale.replications)?;
        let mut claim = gap_claim("non-prmp-lgfs-r", &cfg, e_min, &est);
        claim.detail = format!("{} E[min of 2]={e_min:.5}", claim.detail);
        claims.push(claim);
    }
    Ok(claims)
}

fn counts(seed: u64, scale: SuiteScale) -> Result<Vec<ClaimReport>, HarnessError> {
    use PolicyDescriptor::*;
    let mut claims = Vec::new();
    for m in [1, 4] {
        for contender in [Fcfs, NonPrmpLgfsR] {
            let mut failed = Vec::new();
            for run in 0..scale.runs {
                let rho = [0.5, 0.9, 1.5][run % 3];
                let run_seed = derive_seed(&[seed, m as u64, run as u64]);
                let cfg = config(
                    m,
                    1,
                    BufferSize::Infinite,
                    exp(1.0),
                    rho,
                    horizon_for(scale.events, m, rho),
                    run_seed,
                )?;
                let workload = generate_workload(&cfg)?;
                let systems = vec![
                    CoupledSystem::new(PrmpLgfsR, cfg.clone())?,
                    CoupledSystem::new(contender, cfg.clone())?,
                ];
                let options = RecordOptions {
                    snapshots: false,
                    counts: false,
                };
                let result = run_coupled(CouplingMode::BusyOrder, systems, &workload, options)
                    .map_err(runtime(&cfg, "count coupling"))?;
                if let Some(Some(d)) = result.discrepancies.get(1) {
                    failed.push(format!("seed {run_seed} at t={}: {}", d.time, d.detail));
                }
            }
            claims.push(ClaimReport {
                claim: format!("N(t) and deliveries match {contender}"),
                config: format!("m={m} r=1 B=inf runs={}", scale.runs),
                observed: failed.len() as f64,
                bound: 0.0,
                pass: failed.is_empty(),
                detail: failed.first().cloned().unwrap_or_default(),
            });
        }
    }

    // an idling policy has to break the match
    let cfg = config(
        1,
        1,
        BufferSize::Infinite,
        exp(1.0),
        0.5,
        horizon_for(scale.events, 1, 0.5),
        seed,
    )?;
    let workload = generate_workload(&cfg)?;
    let systems = vec![
        CoupledSystem::new(PrmpLgfsR, cfg.clone())?,
        CoupledSystem::custom("batching-fcfs", cfg.clone(), Box::new(BatchingFcfs::new(2))),
    ];
    let result = run_coupled(CouplingMode::BusyOrder, systems, &workload, RecordOptions::default())
        .map_err(runtime(&cfg, "negative control"))?;
    claims.push(ClaimReport {
        claim: "idling control is detected".into(),
        config: "m=1 r=1 B=inf batching-fcfs".into(),
        observed: f64::from(u8::from(result.holds())),
        bound: 0.0,
        pass: !result.holds(),
        detail: String::new(),
    });
    Ok(claims)
}

fn run_plain(cfg: &SystemConfig, descriptor: PolicyDescriptor, workload: &[Packet]) -> Result<Trace, HarnessError> {
    let mut policy = descriptor.build(cfg)?;
    run_simulation(cfg, policy.as_mut(), workload).map_err(runtime(cfg, descriptor.name()))
}

fn buffer_invariance(seed: u64, scale: SuiteScale) -> Result<Vec<ClaimReport>, HarnessError> {
    let buffers = [
        BufferSize::Finite(0),
        BufferSize::Finite(1),
        BufferSize::Finite(10),
        BufferSize::Infinite,
    ];
    let mut claims = Vec::new();
    for (m, r) in [(1, 1), (4, 1), (4, 2), (4, 4)] {
        let mut failed = Vec::new();
        let runs = scale.runs.min(20);
        for run in 0..runs {
            let run_seed = derive_seed(&[seed, m as u64, r as u64, run as u64]);
            let rho = [0.5, 1.0, 1.8][run % 3];
            let mut base = config(
                m,
                r,
                BufferSize::Infinite,
                exp(1.0),
                rho,
                horizon_for(scale.events, m, rho),
                run_seed,
            )?;
            if run % 2 == 1 {
                base = base.with_arrival_delay(exp(1.0));
            }
            let workload = generate_workload(&base)?;
            let systems = buffers
                .iter()
                .map(|&b| CoupledSystem::new(PolicyDescriptor::PrmpLgfsR, base.clone().with_buffer(b)))
                .collect::<Result<Vec<_>, _>>()?;
            let result = run_coupled(CouplingMode::Freshness, systems, &workload, RecordOptions::default())
                .map_err(runtime(&base, "buffer invariance"))?;
            let reference = age_trajectory(&result.traces[0]);
            for (trace, b) in result.traces.iter().zip(buffers).skip(1) {
                if age_trajectory(trace).resets() != reference.resets() {
                    failed.push(format!("seed {run_seed} B={b}"));
                }
            }
        }
        claims.push(ClaimReport {
            claim: "prmp-lgfs-r age trajectory is the same for every B".into(),
            config: format!("m={m} r={r} B in {{0,1,10,inf}} runs={runs}"),
            observed: failed.len() as f64,
            bound: 0.0,
            pass: failed.is_empty(),
            detail: failed.first().cloned().unwrap_or_default(),
        });
    }
    Ok(claims)
}

fn lcfs_equivalence(seed: u64) -> Result<Vec<ClaimReport>, HarnessError> {
    use PolicyDescriptor::*;
    let pairs = [
        (PrmpLgfsR, LcfsPreemptive, BufferSize::Infinite),
        (NonPrmpLgfsR, LcfsNonPreemptive, BufferSize::Finite(1)),
    ];
    let mut claims = Vec::new();
    for (lgfs, lcfs, b) in pairs {
        let mut mismatches = Vec::new();
        for m in [1, 4] {
            for k in 0..20u64 {
                let run_seed = derive_seed(&[seed, m as u64, k]);
                let cfg = config(m, 1, b, exp(1.0), 0.9, 500.0, run_seed)?;
                let workload = generate_workload(&cfg)?;
                let x = run_plain(&cfg, lgfs, &workload)?;
                let y = run_plain(&cfg, lcfs, &workload)?;
                if x.to_json() != y.to_json() {
                    mismatches.push(format!("m={m} seed {run_seed}"));
                }
            }
        }
        claims.push(ClaimReport {
            claim: format!("{lgfs} trace equals {lcfs} when a = s"),
            config: format!("r=1 B={b} m in {{1,4}} seeds=20"),
            observed: mismatches.len() as f64,
            bound: 0.0,
            pass: mismatches.is_empty(),
            detail: mismatches.first().cloned().unwrap_or_default(),
        });
    }

    // packet 2 is generated later but arrives earlier
    let witness = workload_from_pairs(&[(0.0, 0.5), (0.1, 0.2), (1.0, 1.0)]);
    let unit = DistributionSpec::constant(1.0).expect("valid constant");
    let cfg = SystemConfig::new(1, 1, BufferSize::Infinite, unit, exp(1.0), 20.0, seed)?;
    let x = run_plain(&cfg, PrmpLgfsR, &witness)?;
    let y = run_plain(&cfg, LcfsPreemptive, &witness)?;
    let differs = x.to_json() != y.to_json();
    claims.push(ClaimReport {
        claim: "out-of-order arrivals separate the disciplines".into(),
        config: "m=1 r=1 B=inf witness".into(),
        observed: f64::from(u8::from(differs)),
        bound: 1.0,
        pass: differs,
        detail: String::new(),
    });
    Ok(claims)
}

fn nbu() -> Vec<ClaimReport> {
    let mut claims: Vec<ClaimReport> = nbu_presets()
        .into_iter()
        .map(|(name, spec)| {
            let report = check_nbu(&spec, &default_nbu_grid(&spec), DEFAULT_NBU_TOLERANCE);
            ClaimReport {
                claim: "NBU on default grid".into(),
                config: format!("{name} {spec}"),
                observed: report.worst_violation,
                bound: DEFAULT_NBU_TOLERANCE,
                pass: report.holds,
                detail: format!("worst at {:?}", report.worst_at),
            }
        })
        .collect();
    let control = DistributionSpec::gamma_mean(0.5, 1.0).expect("valid gamma");
    let report = check_nbu(&control, &default_nbu_grid(&control), DEFAULT_NBU_TOLERANCE);
    claims.push(ClaimReport {
        claim: "gamma K=0.5 is rejected".into(),
        config: control.to_string(),
        observed: report.worst_violation,
        bound: DEFAULT_NBU_TOLERANCE,
        pass: !report.holds,
        detail: String::new(),
    });
    claims
}
