//! Measures how far non-prmp-lgfs-r sits above the lower-bound age process
//! under NBU service, and splits the gap packet by packet.

use aoi_sim::distributions::DistributionSpec;
use aoi_sim::policies::PolicyDescriptor;
use aoi_sim::sim::{generate_workload, run_simulation, BufferSize, SystemConfig};
use aoi_sim::verification::gap_audit;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for k in [1.0, 4.0, 16.0] {
        let service = DistributionSpec::gamma_mean(k, 1.0)?;
        let config = SystemConfig::new(
            4,
            1,
            BufferSize::Finite(1),
            service,
            DistributionSpec::exponential(7.2)?,
            20_000.0,
            3,
        )?;
        let workload = generate_workload(&config)?;
        let mut policy = PolicyDescriptor::NonPrmpLgfsR.build(&config)?;
        let trace = run_simulation(&config, policy.as_mut(), &workload)?;
        let audit = gap_audit(&trace);
        println!(
            "gamma K={k:>4}: gap {:.4} (E[X] = 1), mean d_i {:.4}, per-packet sum {:.4} <= bound {:.4}",
            audit.average_gap(),
            audit.mean_d().unwrap_or(f64::NAN),
            audit.decomposition / audit.horizon,
            audit.bound / audit.horizon
        );
    }
    Ok(())
}
