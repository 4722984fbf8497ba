//! Builds the moment tensor of a single-regime stream and shows that its
//! normalized form is close to rank one.

use delaymix::datagen::{generate, oracle_moment_tensor, ScenarioSpec};
use delaymix::{cp_als, AlsOptions, MomentConfig, SystemTensor, TimeDelaySystem};

fn main() -> delaymix::Result<()> {
    let sys = TimeDelaySystem::scalar(0.5, 1.0, 1.0, 1);
    let traj = generate(&ScenarioSpec::alternating(vec![sys], 5000, 5000, 3))?;
    let config = MomentConfig::new(1, 1, 3);
    println!(
        "mode size {}, minimum window {}",
        config.mode_size(),
        config.min_window()
    );

    let mut tensor = SystemTensor::new(config)?;
    for start in (0..traj.len() - 100).step_by(100) {
        tensor.accumulate_window(&traj.slice(start, start + 100))?;
    }
    println!(
        "{} contributions, {} bytes",
        tensor.sample_count(),
        tensor.footprint_bytes()
    );

    let first = traj.slice(0, 100);
    let mut single = SystemTensor::new(config)?;
    single.accumulate_window(&first)?;
    let oracle = oracle_moment_tensor(&first, &config)?;
    let diff = single
        .data()
        .as_slice()
        .iter()
        .zip(oracle.as_slice())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    println!("incremental vs nested-loop oracle: max diff {diff:.2e}");

    let normalized = tensor.normalized_view()?;
    for rank in 1..=2 {
        let fit = cp_als(&normalized, rank, &AlsOptions::cold(0))?;
        println!(
            "rank {rank}: relative residual {:.4} after {} sweeps",
            fit.residual, fit.iters
        );
    }
    Ok(())
}
