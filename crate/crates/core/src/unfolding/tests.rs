use super::*;
use crate::covstats::test_support::*;
use crate::covstats::ExpertKind;
use crate::linalg::HpdFactor;
use crate::rng::{complex_normal, SimRng};
use crate::solvers::{gradient, pgd_solve, PgdOptions, StepRule};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};

fn random_params(depth: usize, l: usize, noise: f64, seed: u64) -> UnfoldedParams {
    let mut rng = SimRng::seed_from_u64(seed);
    // surrogate near I / sigma^2 with a small Sigma-proportional part, so deeper layers stay bounded
    let mut p = UnfoldedParams::initial(depth, l, noise);
    for layer in &mut p.layers {
        for z in layer.a_mat.iter_mut() {
            *z = complex_normal(&mut rng) * (0.05 / (noise * noise));
        }
        layer.b_mat = scaled_identity(l, 1.0 / noise);
        for z in layer.b_mat.iter_mut() {
            *z += complex_normal(&mut rng) * (0.1 / noise);
        }
        layer.nu = (0.002 + 0.004 * rng.random::<f64>()).ln();
    }
    p
}

fn example<'a>(y: &'a CMat, target: &'a [f64], model: &'a ModelContext) -> Example<'a> {
    Example { y, target, model, scale: 0.7 }
}

#[test]
fn zero_step_and_zero_surrogate_are_identity() {
    let model = random_model(4, 2, 6, 1);
    let y = random_y(4, 2, 2.0, 2);
    let a = random_activity(6, 3);
    let mut layer = UnfoldedLayer::initial(4, model.noise_power);
    layer.nu = -1e3;
    assert_eq!(unfolded_layer(&y, &a, &layer, &model).unwrap(), a);
    let layer = UnfoldedLayer { a_mat: CMat::zeros(4, 4), b_mat: CMat::zeros(4, 4), nu: 0.0 };
    assert_eq!(unfolded_layer(&y, &a, &layer, &model).unwrap(), a);
}

/// Unfolded net whose layer `i` uses `A = 0`, `B = Sigma(a^(i-1))^{-1}` against
/// `depth` fixed-step PGD iterations, on experts whose covariance is the same
/// for every antenna.
fn pgd_equivalence(kind: ExpertKind, seed: u64, depth: usize) -> f64 {
    let model = random_model(4, 3, 6, seed).with_expert(kind).unwrap();
    let y = random_y(4, 3, 1.5, seed + 100);
    let eta: f64 = 0.05;
    let mut a = vec![0.0; 6];
    let mut layers = Vec::new();
    for _ in 0..depth {
        let sigma = model.covariance_ym(0, &a);
        for m in 1..3 {
            assert_eq!(sigma, model.covariance_ym(m, &a), "covariance must be shared");
        }
        let layer = UnfoldedLayer { a_mat: CMat::zeros(4, 4), b_mat: HpdFactor::new(&sigma).unwrap().inverse(), nu: eta.ln() };
        a = unfolded_layer(&y, &a, &layer, &model).unwrap();
        layers.push(layer);
    }
    let params = UnfoldedParams::new(layers).unwrap();
    let net = unfolded_forward(&y, &params, &model).unwrap();
    let opts = PgdOptions { max_iters: depth, step: StepRule::Fixed(eta), tol: 0.0, expert: kind };
    let pgd = pgd_solve(&y, &model, &opts).unwrap();
    assert_eq!(pgd.iterations, depth);
    net.iter().zip(&pgd.a_hat).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[test]
fn exact_inverse_reproduces_pgd() {
    for seed in 0..10 {
        for kind in [ExpertKind::Expert2, ExpertKind::Expert3] {
            let err = pgd_equivalence(kind, seed, 4);
            assert!(err < 1e-10, "{kind:?} seed {seed}: {err}");
        }
    }
}

fn fd_worst(kind: ExpertKind, seed: u64, depth: usize) -> f64 {
    let (l, m, k) = (4, 2, 6);
    let model = random_model(l, m, k, seed).with_expert(kind).unwrap();
    // frames a little above the noise floor keep every layer in a moderate range
    let amp = 1.5 * model.noise_power.sqrt();
    let ys: Vec<CMat> = (0..3).map(|i| random_y(l, m, amp, seed * 10 + i)).collect();
    let targets: Vec<Vec<f64>> = (0..3).map(|i| random_activity(k, seed * 10 + 5 + i)).collect();
    let batch: Vec<Example> = ys.iter().zip(&targets).map(|(y, t)| example(y, t, &model)).collect();
    let params = random_params(depth, l, model.noise_power, seed);
    let (_, grad) = param_gradients(&batch, &params, LossKind::Mse).unwrap();
    let g = grad.to_flat();
    let base = params.to_flat();
    let scale = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
    let mut worst = 0.0f64;
    for i in 0..base.len() {
        let h = 1e-4 * base[i].abs().max(1e-2);
        let eval = |delta: f64| {
            let mut p = params.clone();
            let mut f = base.clone();
            f[i] += delta;
            p.set_flat(&f);
            batch_loss(&batch, &p, LossKind::Mse).unwrap()
        };
        // fourth-order central stencil
        let fd = (8.0 * (eval(h) - eval(-h)) - (eval(2.0 * h) - eval(-2.0 * h))) / (12.0 * h);
        let err = (fd - g[i]).abs() / fd.abs().max(g[i].abs()).max(1e-6 * scale);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn parameter_gradients_match_finite_differences() {
    for depth in [1, 2] {
        for kind in ExpertKind::ALL {
            for seed in 0..3 {
                let worst = fd_worst(kind, seed, depth);
                assert!(worst < 1e-4, "I={depth} {kind:?} seed {seed}: {worst}");
            }
        }
    }
}

#[test]
fn single_layer_step_gradient_by_hand() {
    let model = random_model(4, 2, 6, 11);
    let noise = model.noise_power;
    let ys: Vec<CMat> = (0..4).map(|i| random_y(4, 2, 1.0, 40 + i)).collect();
    let targets: Vec<Vec<f64>> = (0..4).map(|i| random_activity(6, 50 + i)).collect();
    let batch: Vec<Example> = ys.iter().zip(&targets).map(|(y, t)| example(y, t, &model)).collect();
    // A = 0, B = Sigma(0)^{-1} = I / sigma^2 makes d the exact gradient at zero
    let layer = UnfoldedLayer { a_mat: CMat::zeros(4, 4), b_mat: scaled_identity(4, 1.0 / noise), nu: 0.03f64.ln() };
    let params = UnfoldedParams::new(vec![layer]).unwrap();
    let (_, grad) = param_gradients(&batch, &params, LossKind::Mse).unwrap();
    let eta = params.layers[0].eta();
    let zero = vec![0.0; 6];
    let mut want = 0.0;
    for ex in &batch {
        let d = gradient(ex.y, &zero, &model).unwrap();
        let a_hat: Vec<f64> = d.iter().map(|di| (-eta * di).max(0.0)).collect();
        let (_, dl) = LossKind::Mse.eval(&a_hat, ex.target, ex.scale);
        want += -(0..6).filter(|&k| -eta * d[k] > 0.0).map(|k| d[k] * dl[k]).sum::<f64>();
    }
    want /= batch.len() as f64;
    // d loss / d nu = eta * d loss / d eta
    let got = grad.layers[0].nu / eta;
    assert!((got - want).abs() <= 1e-10 * want.abs().max(1e-12), "{got} vs {want}");
}

#[test]
fn dead_projection_has_zero_gradient() {
    let model = random_model(4, 2, 6, 12);
    let y = CMat::zeros(4, 2);
    let target = random_activity(6, 13);
    let batch = [example(&y, &target, &model)];
    let params = UnfoldedParams::initial(2, 4, model.noise_power);
    let out = unfolded_forward(&y, &params, &model).unwrap();
    assert!(out.iter().all(|&v| v == 0.0));
    let (_, grad) = param_gradients(&batch, &params, LossKind::Mse).unwrap();
    assert!(grad.to_flat().iter().all(|&v| v == 0.0));
}

#[test]
fn flat_round_trip() {
    let p = random_params(3, 4, 0.5, 1);
    let mut q = UnfoldedParams::initial(3, 4, 1.0);
    q.set_flat(&p.to_flat());
    assert_eq!(p, q);
    assert_eq!(p.to_flat().len(), 3 * UnfoldedParams::per_layer(4));
}

#[test]
fn empty_network_is_rejected() {
    assert!(UnfoldedParams::new(vec![]).is_err());
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn output_is_nonnegative(seed in 0u64..10_000, kind in 0usize..4, scale in 0.1f64..20.0) {
        let model = random_model(4, 2, 6, seed).with_expert(ExpertKind::ALL[kind]).unwrap();
        let y = random_y(4, 2, scale, seed + 1);
        let params = random_params(3, 4, model.noise_power, seed + 2);
        let out = unfolded_forward(&y, &params, &model).unwrap();
        prop_assert!(out.iter().all(|&v| v >= 0.0));
    }
}
