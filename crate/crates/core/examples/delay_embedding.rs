//! Simulates a delayed system and its delay-free embedding on the same
//! inputs and compares outputs and Markov parameters.

use delaymix::{
    embed_delay, markov_parameters_delayed, markov_parameters_free, simulate_delay_free, simulate_delayed,
    TimeDelaySystem,
};
use nalgebra::{DMatrix, DVector};

fn main() -> delaymix::Result<()> {
    let sys = TimeDelaySystem::new(
        DMatrix::from_row_slice(2, 2, &[0.7, 0.2, -0.1, 0.5]),
        DMatrix::from_row_slice(2, 1, &[1.0, 0.5]),
        DMatrix::from_row_slice(1, 2, &[1.0, -1.0]),
        2,
    )?;
    let model = embed_delay(&sys);
    println!("state dimension {} -> {}", sys.state_dim(), model.state_dim());

    let inputs: Vec<DVector<f64>> = (0..12)
        .map(|t| DVector::from_element(1, if t == 0 { 1.0 } else { 0.0 }))
        .collect();
    let delayed = simulate_delayed(
        &sys,
        &inputs,
        &DVector::zeros(2),
        &[DVector::zeros(1), DVector::zeros(1)],
    )?;
    let free = simulate_delay_free(&model, &inputs, &DVector::zeros(model.state_dim()))?;
    for (t, (a, b)) in delayed.outputs.iter().zip(&free.outputs).enumerate() {
        println!("t={t:2}  delayed {:>9.5}  embedded {:>9.5}", a[0], b[0]);
    }

    let g = markov_parameters_delayed(&sys, 8)?;
    let h = markov_parameters_free(&model, 8)?;
    println!("max Markov parameter difference {:.2e}", g.max_block_distance(&h));
    Ok(())
}
