//! Saves the engine state mid-stream, restores it and checks that both
//! copies produce the same forecasts afterwards.

use delaymix::datagen::{generate, ScenarioSpec};
use delaymix::engine::run_stream_with;
use delaymix::{run_stream, EngineConfig, EngineState, TimeDelaySystem};

fn main() -> delaymix::Result<()> {
    let sys = TimeDelaySystem::scalar(0.5, 1.0, 1.0, 1);
    let traj = generate(&ScenarioSpec::alternating(vec![sys], 4000, 4000, 2).with_noise(0.01))?;

    let first = run_stream(EngineConfig::new(1, 1), &traj.slice(0, 2000))?;
    let mut bytes = Vec::new();
    first.final_state.write_checkpoint(&mut bytes)?;
    println!(
        "checkpoint: {} bytes after {} updates",
        bytes.len(),
        first.final_state.updates()
    );

    let restored = EngineState::read_checkpoint(bytes.as_slice())?;
    let rest = traj.slice(2000, 4000);
    let a = run_stream_with(first.final_state, &rest)?;
    let b = run_stream_with(restored, &rest)?;
    let same = a.reports.iter().zip(&b.reports).all(|(x, y)| x.forecast == y.forecast);
    println!(
        "continued MSE {:.5} vs {:.5}, identical forecasts: {same}",
        a.metrics.mse, b.metrics.mse
    );
    Ok(())
}
