//! Simulates one configuration and prints the age functionals.

use aoi_sim::distributions::DistributionSpec;
use aoi_sim::metrics::{age_trajectory, summarize, throughput_delay};
use aoi_sim::policies::PolicyDescriptor;
use aoi_sim::sim::{generate_workload, run_simulation, BufferSize, SystemConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SystemConfig::new(
        4,
        2,
        BufferSize::Finite(1),
        DistributionSpec::exponential(1.0)?,
        DistributionSpec::erlang_mean(2, 0.2)?,
        10_000.0,
        42,
    )?;
    let workload = generate_workload(&config)?;
    for policy in PolicyDescriptor::ALL.into_iter().filter(|p| p.check(&config).is_ok()) {
        let mut sched = policy.build(&config)?;
        let trace = run_simulation(&config, sched.as_mut(), &workload)?;
        let summary = summarize(&age_trajectory(&trace));
        let td = throughput_delay(&trace);
        println!(
            "{:>16}: avg age {:.4}  avg peak {:?}  throughput {:.4}  preemptions {}",
            policy.name(),
            summary.time_avg,
            summary.avg_peak,
            td.throughput(),
            trace.preemption_count
        );
    }
    Ok(())
}
