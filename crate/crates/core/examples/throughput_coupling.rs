//! Shows that the number of packets in the system and the number delivered
//! follow the same path under any work-conserving policy, and that an
//! idling policy departs from it.

use aoi_sim::distributions::DistributionSpec;
use aoi_sim::policies::PolicyDescriptor::*;
use aoi_sim::sim::{generate_workload, BufferSize, SystemConfig};
use aoi_sim::verification::{run_coupled, BatchingFcfs, CoupledSystem, CouplingMode, RecordOptions};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let config = SystemConfig::new(
        2,
        1,
        BufferSize::Infinite,
        DistributionSpec::exponential(1.0)?,
        DistributionSpec::exponential(1.5)?,
        2_000.0,
        11,
    )?;
    let workload = generate_workload(&config)?;
    let systems = vec![
        CoupledSystem::new(PrmpLgfsR, config.clone())?,
        CoupledSystem::new(Fcfs, config.clone())?,
        CoupledSystem::new(NonPrmpLgfsR, config.clone())?,
        CoupledSystem::custom("batching-fcfs", config.clone(), Box::new(BatchingFcfs::new(2))),
    ];
    let options = RecordOptions {
        snapshots: false,
        counts: true,
    };
    let run = run_coupled(CouplingMode::BusyOrder, systems, &workload, options)?;
    for (i, label) in run.labels.iter().enumerate() {
        let last = run.counts[i].last().map(|(_, c)| c.delivered).unwrap_or(0);
        match &run.discrepancies[i] {
            None => println!("{label:>28}: matches, {last} delivered"),
            Some(d) => println!("{label:>28}: departs at t={:.3} ({})", d.time, d.detail),
        }
    }
    Ok(())
}
