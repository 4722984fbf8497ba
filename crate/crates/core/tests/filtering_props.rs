use delaymix::datagen::{random_stable_model, random_stable_system};
use delaymix::filtering::{anchor_state, roll_out};
use delaymix::{
    embed_delay, forecast, ho_kalman, kalman_forward, markov_parameters_delayed, rts_smoother, select_regime,
    simulate_delayed, DelayFreeModel, NoiseSpec, RealizationOptions, Trajectory,
};
use nalgebra::{DMatrix, DVector};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Normal, StandardNormal};

fn gaussian(rng: &mut ChaCha8Rng, n: usize) -> DVector<f64> {
    DVector::from_fn(n, |_, _| rng.sample(StandardNormal))
}

fn noise_free_window(model: &DelayFreeModel, rng: &mut ChaCha8Rng, len: usize) -> Trajectory {
    let inputs: Vec<DVector<f64>> = (0..len).map(|_| gaussian(rng, model.input_dim())).collect();
    delaymix::simulate_delay_free(model, &inputs, &DVector::zeros(model.state_dim())).unwrap()
}

#[test]
fn filter_beats_open_loop_on_linear_gaussian_data() {
    let (q, r) = (0.01, 0.04);
    let noise = NoiseSpec::new(q, r, 1.0);
    let (mut filter_se, mut open_se) = (0.0, 0.0);
    for seed in 0..20 {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_stable_model(&mut rng, 3, 1, 2);
        let process = Normal::new(0.0, q.sqrt()).unwrap();
        let obs = Normal::new(0.0, r.sqrt()).unwrap();
        let len = 200;
        let mut x = gaussian(&mut rng, 3);
        let mut outputs = Vec::with_capacity(len);
        let mut inputs = Vec::with_capacity(len);
        for _ in 0..len {
            let u = gaussian(&mut rng, 1);
            let y = model.output_map() * &x + DVector::from_fn(2, |_, _| rng.sample(obs));
            x = model.transition() * &x + model.input_map() * &u + DVector::from_fn(3, |_, _| rng.sample(process));
            outputs.push(y);
            inputs.push(u);
        }
        let window = Trajectory::new(outputs, inputs).unwrap();
        let trace = kalman_forward(&model, &window, &noise).unwrap();
        let open = delaymix::simulate_delay_free(&model, &window.inputs, &DVector::zeros(3)).unwrap();
        for t in 0..len {
            filter_se += (&window.outputs[t] - &trace.one_step_predictions[t]).norm_squared();
            open_se += (&window.outputs[t] - &open.outputs[t]).norm_squared();
        }
    }
    assert!(filter_se <= open_se, "filter {filter_se} vs open loop {open_se}");
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn covariances_stay_symmetric_psd(
        seed in any::<u64>(), n in 1usize..=4, d in 1usize..=3, dc in 1usize..=2,
        q in 1e-8f64..1.0, r in 1e-8f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_stable_model(&mut rng, n, dc, d);
        let mut window = noise_free_window(&model, &mut rng, 60);
        for y in &mut window.outputs {
            *y += gaussian(&mut rng, d) * 0.1;
        }
        let trace = kalman_forward(&model, &window, &NoiseSpec::new(q, r, 1.0)).unwrap();
        for p in trace.filtered_covs.iter().chain(&trace.predicted_covs) {
            prop_assert!((p - p.transpose()).amax() <= 1e-12 * (1.0 + p.amax()));
            prop_assert!(p.clone().symmetric_eigenvalues().min() >= -1e-9);
        }
    }

    #[test]
    fn long_forecast_extends_short_forecast(
        seed in any::<u64>(), n in 1usize..=4, d in 1usize..=3, dc in 1usize..=2,
        a in 1usize..=6, b in 1usize..=6,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_stable_model(&mut rng, n, dc, d);
        let window = noise_free_window(&model, &mut rng, 30);
        let future: Vec<DVector<f64>> = (0..a + b).map(|_| gaussian(&mut rng, dc)).collect();
        let noise = NoiseSpec::default();
        let long = forecast(&model, &window, &future, &noise).unwrap();
        let short = forecast(&model, &window, &future[..a], &noise).unwrap();
        prop_assert_eq!(&long[..a], &short[..]);

        // continue from the state reached after `a` steps
        let mut x = anchor_state(&model, &window, &noise).unwrap();
        let mut u = window.inputs[window.len() - 1].clone();
        for next in &future[..a] {
            x = model.transition() * &x + model.input_map() * &u;
            u = next.clone();
        }
        let tail = roll_out(&model, x, &u, &future[a..]);
        prop_assert_eq!(&long[a..], &tail[..]);
    }

    #[test]
    fn selection_follows_database_order(seed in any::<u64>(), size in 2usize..=5, rot in 0usize..5) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let database: Vec<DelayFreeModel> = (0..size).map(|_| random_stable_model(&mut rng, 2, 1, 1)).collect();
        let window = noise_free_window(&database[0], &mut rng, 40);
        let noise = NoiseSpec::default();
        let (best, err) = select_regime(&database, &window, &noise).unwrap();
        let shift = rot % size;
        let mut rotated = database.clone();
        rotated.rotate_left(shift);
        let (moved, err2) = select_regime(&rotated, &window, &noise).unwrap();
        prop_assert_eq!(err, err2);
        prop_assert_eq!((moved + shift) % size, best);
    }

    /// Forecasts through the delay embedding and through a Ho-Kalman
    /// realization of the same Markov parameters coincide.
    #[test]
    fn embedding_and_realization_forecast_alike(seed in any::<u64>(), ls in 1usize..=10) {
        let (d, dc, k, tau, s) = (2, 2, 2, 1, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let sys = random_stable_system(&mut rng, k, dc, d, tau);
        let order = k + tau * dc;
        let embedded = embed_delay(&sys);
        let realized = ho_kalman(
            &markov_parameters_delayed(&sys, 2 * s).unwrap(),
            &RealizationOptions::fixed(s, order),
        )
        .unwrap();
        let inputs: Vec<DVector<f64>> = (0..60 + ls).map(|_| gaussian(&mut rng, dc)).collect();
        let pre = vec![DVector::zeros(dc); tau];
        let traj = simulate_delayed(&sys, &inputs, &DVector::zeros(k), &pre).unwrap();
        let window = traj.slice(0, 60);
        let noise = NoiseSpec::new(1e-10, 1e-10, 1.0);
        let a = forecast(&embedded, &window, &inputs[60..], &noise).unwrap();
        let b = forecast(&realized, &window, &inputs[60..], &noise).unwrap();
        for (x, y) in a.iter().zip(&b) {
            prop_assert!((x - y).amax() <= 1e-6, "{} vs {}", x, y);
        }
    }
}

/// Posterior mean of all states given the whole window, from the normal
/// equations of the joint Gaussian log-density.
fn batch_smoother(model: &DelayFreeModel, window: &Trajectory, noise: &NoiseSpec) -> Vec<DVector<f64>> {
    let (n, len) = (model.state_dim(), window.len());
    let (a, b, c) = (model.transition(), model.input_map(), model.output_map());
    let eye = DMatrix::<f64>::identity(n, n);
    let mut h = DMatrix::<f64>::zeros(n * len, n * len);
    let mut g = DVector::<f64>::zeros(n * len);
    let add = |h: &mut DMatrix<f64>, i: usize, j: usize, m: &DMatrix<f64>| {
        let mut view = h.view_mut((i * n, j * n), (n, n));
        view += m;
    };
    add(&mut h, 0, 0, &(&eye / noise.prior_var));
    for t in 0..len {
        let ctc = c.transpose() * c / noise.obs_var;
        add(&mut h, t, t, &ctc);
        let mut rows = g.rows_mut(t * n, n);
        rows += c.transpose() * &window.outputs[t] / noise.obs_var;
    }
    for t in 0..len - 1 {
        let q = 1.0 / noise.process_var;
        add(&mut h, t, t, &(a.transpose() * a * q));
        add(&mut h, t + 1, t + 1, &(&eye * q));
        add(&mut h, t, t + 1, &(-a.transpose() * q));
        add(&mut h, t + 1, t, &(-a * q));
        let drive = b * &window.inputs[t] * q;
        let mut next = g.rows_mut((t + 1) * n, n);
        next += &drive;
        let mut cur = g.rows_mut(t * n, n);
        cur -= a.transpose() * &drive;
    }
    let x = h.cholesky().expect("positive definite").solve(&g);
    (0..len).map(|t| x.rows(t * n, n).into_owned()).collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn smoother_matches_batch_posterior(
        seed in any::<u64>(), n in 1usize..=3, d in 1usize..=2, dc in 1usize..=2,
        q in 1e-3f64..1.0, r in 1e-3f64..1.0,
    ) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let model = random_stable_model(&mut rng, n, dc, d);
        let mut window = noise_free_window(&model, &mut rng, 15);
        for y in &mut window.outputs {
            *y += gaussian(&mut rng, d) * 0.3;
        }
        let noise = NoiseSpec::new(q, r, 0.5);
        let trace = kalman_forward(&model, &window, &noise).unwrap();
        let smoothed = rts_smoother(&model, &trace).unwrap();
        let batch = batch_smoother(&model, &window, &noise);
        for (x, y) in smoothed.smoothed_means.iter().zip(&batch) {
            prop_assert!((x - y).amax() <= 1e-8 * (1.0 + y.amax()), "{} vs {}", x, y);
        }
    }
}
