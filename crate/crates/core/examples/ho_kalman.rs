//! Realizes a state-space model from Markov parameters and checks that
//! its impulse response matches.

use delaymix::datagen::random_stable_model;
use delaymix::{ho_kalman, markov_parameters_free, RealizationOptions};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> delaymix::Result<()> {
    let s = 3;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let model = random_stable_model(&mut rng, 3, 2, 2);
    let seq = markov_parameters_free(&model, 2 * s)?;

    for opts in [RealizationOptions::fixed(s, 3), RealizationOptions::auto(s)] {
        let realized = ho_kalman(&seq, &opts)?;
        let back = markov_parameters_free(&realized, 2 * s)?;
        println!(
            "{:?}: order {}, max Markov error {:.2e}",
            opts.state_dim,
            realized.state_dim(),
            seq.max_block_distance(&back)
        );
    }
    Ok(())
}
