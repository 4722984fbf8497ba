//! Recovers two planted rank-one components from a slightly noisy tensor.

use delaymix::{align_components, cp_als, reconstruct, AlsOptions, CpFactors, Tensor3};
use nalgebra::DVector;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

fn main() -> delaymix::Result<()> {
    let dim = 10;
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let mut unit = || DVector::from_fn(dim, |_, _| rng.sample::<f64, _>(StandardNormal)).normalize();
    let components: Vec<[DVector<f64>; 3]> = (0..2).map(|_| [unit(), unit(), unit()]).collect();
    let truth = CpFactors::from_components(&components)?;

    let clean = reconstruct(&truth, dim)?;
    let noisy: Vec<f64> = clean
        .as_slice()
        .iter()
        .map(|v| v + 1e-4 * rng.sample::<f64, _>(StandardNormal))
        .collect();
    let tensor = Tensor3::from_vec(dim, noisy).expect("length matches");

    let fit = cp_als(&tensor, 2, &AlsOptions::cold(7).with_tol(1e-10))?;
    println!("{} sweeps, relative residual {:.2e}", fit.iters, fit.residual);
    let alignment = align_components(&fit.factors, &truth)?;
    for (i, cos) in alignment.cosines.iter().enumerate() {
        println!(
            "component {i} -> estimate {}: cosines {:.6} {:.6} {:.6}",
            alignment.permutation[i], cos[0], cos[1], cos[2]
        );
    }

    let warm = cp_als(&tensor, 2, &AlsOptions::warm(fit.factors))?;
    println!("warm restart from the fit: {} sweeps", warm.iters);
    Ok(())
}
