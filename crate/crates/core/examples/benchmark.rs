//! Per-update cost over growing stream lengths for a two-input,
//! two-output system.

use delaymix::cli::bench_lengths;
use delaymix::datagen::{generate, random_stable_system, ScenarioSpec};
use delaymix::io::Dataset;
use delaymix::EngineConfig;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> delaymix::Result<()> {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let sys = random_stable_system(&mut rng, 2, 2, 2, 1);
    let length = 100_000;
    let data = Dataset::from_trajectory(generate(
        &ScenarioSpec::alternating(vec![sys], length, length, 1).with_noise(0.01),
    )?);

    let (rows, _) = bench_lengths(&EngineConfig::new(2, 2), &data, &[1_000, 10_000, 100_000])?;
    for row in rows {
        println!(
            "length {:6}: {:4} updates, {:3} adaptations, median update {:7.0} us, footprint {} B",
            row.length,
            row.updates,
            row.adaptations,
            row.median_update_us.unwrap_or(f64::NAN),
            row.footprint_bytes
        );
    }
    Ok(())
}
