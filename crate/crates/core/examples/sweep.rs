//! Runs a shipped experiment preset at reduced scale and prints the table.
//! Usage: `cargo run --release --example sweep [preset]`.

use aoi_sim::harness::{preset_names, run_experiment, write_results, ExperimentSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "fig-avg-age1".into());
    let mut spec = ExperimentSpec::load(&name)
        .map_err(|e| format!("{e}; presets: {}", preset_names().collect::<Vec<_>>().join(", ")))?;
    spec.horizon = spec.horizon.min(2_000.0);
    spec.replications = spec.replications.min(5);
    let rows = run_experiment(&spec)?;
    write_results(&rows, std::io::stdout().lock())?;
    Ok(())
}
