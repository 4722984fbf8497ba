//! Runs the engine on a noise-free stream that alternates between a regime
//! with input delay 1 and one with input delay 3, then reads each recovered
//! regime's delay off the spectral-norm profile of its Markov parameters.

use delaymix::datagen::{generate, ScenarioSpec};
use delaymix::syslin::DEFAULT_DELAY_THRESHOLD;
use delaymix::{detect_delay, run_stream, spectral_norm_profile, EngineConfig, TimeDelaySystem};

fn main() -> delaymix::Result<()> {
    let regimes = vec![
        TimeDelaySystem::scalar(0.5, 1.0, 1.0, 1),
        TimeDelaySystem::scalar(0.6, 1.0, 1.0, 3),
    ];
    let traj = generate(&ScenarioSpec::alternating(regimes, 2000, 40_000, 7))?;

    let config = EngineConfig::new(1, 1);
    let outcome = run_stream(config.clone(), &traj)?;
    let adaptations = outcome.reports.iter().filter(|r| r.adapted).count();
    println!("{} updates, {adaptations} adaptations", outcome.reports.len());

    let database = outcome.final_state.database();
    for (i, seq) in database.markov_estimates(&config.moment)?.iter().enumerate() {
        let profile = spectral_norm_profile(seq);
        let delay = detect_delay(&profile, DEFAULT_DELAY_THRESHOLD);
        let shown: Vec<String> = profile.iter().map(|p| format!("{p:.3}")).collect();
        println!("regime {i}: delay {delay}, profile [{}]", shown.join(", "));
    }
    Ok(())
}
