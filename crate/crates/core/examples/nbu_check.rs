//! Checks the New-Better-than-Used property of the shipped service laws.

use aoi_sim::distributions::{check_nbu, default_nbu_grid, nbu_presets, DistributionSpec, DEFAULT_NBU_TOLERANCE};

fn main() {
    let mut laws = nbu_presets();
    laws.push(("gamma-k0.5 (not NBU)", DistributionSpec::gamma_mean(0.5, 1.0).unwrap()));
    for (name, spec) in laws {
        let report = check_nbu(&spec, &default_nbu_grid(&spec), DEFAULT_NBU_TOLERANCE);
        println!(
            "{name:>22} {spec:<36} NBU {:<5} worst {:+.3e} at {:?}",
            report.holds, report.worst_violation, report.worst_at
        );
    }
}
