//! Generate a synthetic run with frequency noise, curvature noise and a slow
//! distance drift, then write it as a run CSV.

use sphereplane::io::{load_run_csv, write_run_csv};
use sphereplane::pipeline::{simulate_run, SampleKind, SimulationConfig};

pub fn run_example() -> sphereplane::Result<()> {
    let mut cfg = SimulationConfig::run1_like(42);
    cfg.noise.freq_sigma_hz = 0.01;
    cfg.noise.k_el_rel_sigma = 0.04;
    cfg.drift.amplitude = 5e-9;
    cfg.validate()?;

    let run = simulate_run(&cfg)?;
    let sweeps = run
        .samples
        .iter()
        .filter(|s| s.kind == SampleKind::Sweep)
        .count();
    println!(
        "{} samples ({} sweep, {} reference) over {:.1} h",
        run.samples.len(),
        sweeps,
        run.samples.len() - sweeps,
        run.samples.last().map_or(0.0, |s| s.t) / 3600.0
    );

    let dir = std::env::temp_dir().join("sphereplane-simulate-example");
    let path = dir.join("run.csv");
    write_run_csv(&run, &path)?;
    let back = load_run_csv(&path)?;
    assert_eq!(back, run);
    println!("wrote {} (config hash {})", path.display(), cfg.hash()?);
    Ok(())
}

#[allow(dead_code)]
fn main() {
    if let Err(e) = run_example() {
        eprintln!("{e}");
        std::process::exit(1);
    }
}
