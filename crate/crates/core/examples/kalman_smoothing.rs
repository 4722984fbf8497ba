//! Filters and smooths a noisy two-state system and reports state errors.

use delaymix::datagen::random_stable_model;
use delaymix::{kalman_forward, rts_smoother, NoiseSpec, Trajectory};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

fn main() -> delaymix::Result<()> {
    let (q, r): (f64, f64) = (1e-3, 1e-2);
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = random_stable_model(&mut rng, 2, 1, 1);
    let process = Normal::new(0.0, q.sqrt()).expect("valid std");
    let obs = Normal::new(0.0, r.sqrt()).expect("valid std");

    let len = 200;
    let mut x = DVector::from_fn(2, |_, _| rng.sample::<f64, _>(StandardNormal));
    let (mut states, mut outputs, mut inputs) = (Vec::new(), Vec::new(), Vec::new());
    for _ in 0..len {
        let u = DVector::from_element(1, rng.sample::<f64, _>(StandardNormal));
        states.push(x.clone());
        outputs.push(model.output_map() * &x + DVector::from_element(1, rng.sample(obs)));
        x = model.transition() * &x + model.input_map() * &u + DVector::from_fn(2, |_, _| rng.sample(process));
        inputs.push(u);
    }
    let window = Trajectory::new(outputs, inputs)?;
    let trace = kalman_forward(&model, &window, &NoiseSpec::new(q, r, 1.0))?;
    let smoothed = rts_smoother(&model, &trace)?;

    let rmse = |est: &[DVector<f64>]| {
        let se: f64 = est.iter().zip(&states).map(|(e, s)| (e - s).norm_squared()).sum();
        (se / len as f64).sqrt()
    };
    println!("filtered state RMSE {:.4}", rmse(&trace.filtered_means));
    println!("smoothed state RMSE {:.4}", rmse(&smoothed.smoothed_means));
    Ok(())
}
