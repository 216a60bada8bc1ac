//! Couples prmp-lgfs-r against the other policies on one exponential
//! sample path and reports whether it stays at least as fresh throughout.

use aoi_sim::distributions::DistributionSpec;
use aoi_sim::metrics::{age_trajectory, time_average_age};
use aoi_sim::policies::PolicyDescriptor::*;
use aoi_sim::sim::{generate_workload, BufferSize, SystemConfig};
use aoi_sim::verification::{run_coupled, CoupledSystem, CouplingMode, RecordOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let base = SystemConfig::new(
        4,
        2,
        BufferSize::Infinite,
        DistributionSpec::exponential(1.0)?,
        DistributionSpec::exponential(5.0)?,
        5_000.0,
        7,
    )?
    .with_arrival_delay(DistributionSpec::two_point(1.0, 100.0, 0.5)?);
    let workload = generate_workload(&base)?;
    let systems = vec![
        CoupledSystem::new(PrmpLgfsR, base.clone())?,
        CoupledSystem::new(PrmpLgfsR, base.clone().with_replication(1))?,
        CoupledSystem::new(NonPrmpLgfsR, base.clone().with_buffer(BufferSize::Finite(1)))?,
        CoupledSystem::new(
            Fcfs,
            base.clone().with_replication(1).with_buffer(BufferSize::Finite(10)),
        )?,
    ];
    let run = run_coupled(CouplingMode::Freshness, systems, &workload, RecordOptions::default())?;
    println!("{} events, dominance holds: {}", run.events, run.holds());
    for (label, trace) in run.labels.iter().zip(&run.traces) {
        println!("{label:>28}: avg age {:.4}", time_average_age(&age_trajectory(trace)));
    }
    Ok(())
}
