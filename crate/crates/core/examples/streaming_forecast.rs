//! Streams a regime-switching series through the engine and compares its
//! forecasts with the persistence baseline.

use delaymix::datagen::{generate, ScenarioSpec};
use delaymix::{run_stream, EngineConfig, TimeDelaySystem};

fn main() -> delaymix::Result<()> {
    let regimes = vec![
        TimeDelaySystem::scalar(0.5, 1.0, 1.0, 1),
        TimeDelaySystem::scalar(-0.6, 1.0, 1.0, 2),
    ];
    let traj = generate(&ScenarioSpec::alternating(regimes, 1000, 10_000, 0).with_noise(0.01))?;

    for horizon in [1, 10] {
        let mut config = EngineConfig::new(1, 1);
        config.horizon = horizon;
        let out = run_stream(config, &traj)?;
        let adaptations = out.reports.iter().filter(|r| r.adapted).count();
        println!(
            "l_s={horizon:2}: engine MSE {:.4}, persistence MSE {:.4}, {adaptations}/{} updates adapted",
            out.metrics.mse,
            out.persistence.mse,
            out.reports.len()
        );
    }

    let out = run_stream(EngineConfig::new(1, 1), &traj)?;
    println!("first windows (start, adapted, active model, window fit):");
    for (start, r) in out.window_starts.iter().zip(&out.reports).take(15) {
        println!("  {start:5} {:5} {} {:.4}", r.adapted, r.active_regime, r.window_fit);
    }
    Ok(())
}
