//! Independent oracles for the generator and inversion: naive matrix
//! products, central finite differences and a dense normal-equations solve.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use semlink::generator::{GeneratorModel, LatentDims};
use semlink::inversion::{self, InitMode, InversionConfig, NoiseMode, ReconstructionLoss};
use semlink::latent::{power_normalize, ImageDims, SemanticLatent};

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, scale: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(-scale..scale)).collect()
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

/// Central difference of `f` at `x` along `dir`.
fn directional_fd(f: impl Fn(&[f64]) -> f64, x: &[f64], dir: &[f64], h: f64) -> f64 {
    let plus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a + h * d).collect();
    let minus: Vec<f64> = x.iter().zip(dir).map(|(a, d)| a - h * d).collect();
    (f(&plus) - f(&minus)) / (2.0 * h)
}

#[test]
fn linear_forward_matches_triple_loop() {
    let latent = LatentDims::new(3, 4);
    let image = ImageDims::new(3, 5);
    let model = GeneratorModel::seeded_linear(latent, image, 42);
    let layer = &model.layers()[0];
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let z = rand_vec(&mut rng, 12, 1.0);
    let got = model.forward_raw(&z).unwrap();
    let (rows, cols) = (layer.outputs(), layer.inputs());
    for i in 0..rows {
        let mut acc = layer.bias()[i];
        for j in 0..cols {
            acc += layer.weights()[i * cols + j] * z[j];
        }
        assert!((got[i] - acc).abs() <= 1e-12, "row {i}");
    }
}

#[test]
fn linear_generator_is_affine() {
    let model = GeneratorModel::seeded_linear(LatentDims::new(2, 4), ImageDims::new(2, 3), 8);
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let z1 = rand_vec(&mut rng, 8, 1.0);
    let z2 = rand_vec(&mut rng, 8, 1.0);
    let (a, b) = (0.7, -1.3);
    let mix: Vec<f64> = z1.iter().zip(&z2).map(|(x, y)| a * x + b * y).collect();
    let lhs = model.forward_raw(&mix).unwrap();
    let g1 = model.forward_raw(&z1).unwrap();
    let g2 = model.forward_raw(&z2).unwrap();
    let g0 = model.forward_raw(&[0.0; 8]).unwrap();
    for i in 0..lhs.len() {
        let rhs = a * g1[i] + b * g2[i] - (a + b - 1.0) * g0[i];
        assert!((lhs[i] - rhs).abs() < 1e-12);
    }
}

#[test]
fn generator_backward_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for trial in 0..24u64 {
        let latent = LatentDims::new(2, 4);
        let image = ImageDims::new(3, 3);
        let (model, tol) = if trial % 2 == 0 {
            (GeneratorModel::seeded_linear(latent, image, trial), 1e-5)
        } else {
            (GeneratorModel::seeded_mlp(latent, image, &[10, 7], trial), 1e-4)
        };
        let z = rand_vec(&mut rng, 8, 1.0);
        let up = rand_vec(&mut rng, image.num_values(), 1.0);
        let dir = rand_vec(&mut rng, 8, 1.0);
        let grad = model.backward(&z, &up).unwrap();
        let f = |v: &[f64]| dot(&up, &model.forward_raw(v).unwrap());
        let fd = directional_fd(f, &z, &dir, 1e-5);
        let err = rel_err(dot(&grad, &dir), fd);
        assert!(err < tol, "trial {trial}: rel err {err:e}");
    }
}

fn objective_config(lambda2: f64) -> InversionConfig {
    InversionConfig {
        lambda1: 1.0,
        lambda2,
        noise_mode: NoiseMode::Fixed,
        ..Default::default()
    }
}

/// Gradient of the full objective (including normalization) against central
/// differences, with the channel noise held fixed.
#[test]
fn objective_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let latent = LatentDims::new(2, 6);
    let image = ImageDims::new(4, 4);
    let mut worst: f64 = 0.0;
    for trial in 0..24u64 {
        let model = GeneratorModel::seeded_mlp(latent, image, &[9], 100 + trial);
        let target = rand_vec(&mut rng, image.num_values(), 0.5).iter().map(|v| v + 0.5).collect::<Vec<_>>();
        let y = rand_vec(&mut rng, 12, 2.0);
        let noise = rand_vec(&mut rng, 12, 0.2);
        let cfg = objective_config(if trial % 3 == 0 { 0.0 } else { 0.3 });
        let (_, grad) = inversion::loss_and_grad(&model, &target, &y, &noise, &cfg).unwrap();
        let f = |v: &[f64]| inversion::loss_and_grad(&model, &target, v, &noise, &cfg).unwrap().0;
        let dir = rand_vec(&mut rng, 12, 1.0);
        let err = rel_err(dot(&grad, &dir), directional_fd(f, &y, &dir, 1e-6));
        worst = worst.max(err);
        assert!(err < 1e-4, "trial {trial}: rel err {err:e}");
    }
    eprintln!("worst objective gradient rel err {worst:e}");
}

/// The normalization Jacobian is not a pure scaling: check the gradient
/// through it on a linear generator with an L2 loss, where nothing else can
/// hide an error.
#[test]
fn gradient_through_normalization() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let model = GeneratorModel::seeded_linear(LatentDims::new(2, 4), ImageDims::new(2, 2), 77);
    let cfg = InversionConfig {
        lambda2: 0.0,
        reconstruction: ReconstructionLoss::L2,
        noise_mode: NoiseMode::Off,
        ..Default::default()
    };
    for _ in 0..20 {
        let target = rand_vec(&mut rng, 12, 1.0);
        let y = rand_vec(&mut rng, 8, 3.0);
        let (_, grad) = inversion::loss_and_grad(&model, &target, &y, &[0.0; 8], &cfg).unwrap();
        for k in 0..8 {
            let mut e = vec![0.0; 8];
            e[k] = 1.0;
            let f = |v: &[f64]| inversion::loss_and_grad(&model, &target, v, &[0.0; 8], &cfg).unwrap().0;
            let fd = directional_fd(f, &y, &e, 1e-6);
            assert!(rel_err(grad[k], fd) < 1e-4 || (grad[k] - fd).abs() < 1e-9, "coord {k}: {} vs {fd}", grad[k]);
        }
        // Gradient is orthogonal to y: the objective only sees y's direction.
        assert!(dot(&grad, &y).abs() < 1e-9 * (1.0 + dot(&grad, &grad).sqrt() * dot(&y, &y).sqrt()));
    }
}

/// Dense least-squares solve for the affine generator via the normal equations.
fn normal_equations_solution(model: &GeneratorModel, target: &[f64]) -> Vec<f64> {
    let layer = &model.layers()[0];
    let a = DMatrix::from_row_slice(layer.outputs(), layer.inputs(), layer.weights());
    let rhs = DVector::from_iterator(target.len(), target.iter().zip(layer.bias()).map(|(x, b)| x - b));
    let ata = a.transpose() * &a;
    let atb = a.transpose() * rhs;
    let sol = ata.cholesky().expect("well-conditioned").solve(&atb);
    sol.iter().copied().collect()
}

pub fn oracle_inversion_config() -> InversionConfig {
    InversionConfig {
        lambda1: 1.0,
        lambda2: 0.0,
        reconstruction: ReconstructionLoss::L2,
        noise_mode: NoiseMode::Off,
        init: InitMode::SeededGaussian,
        iterations: 3000,
        step_size: 0.01,
        ..Default::default()
    }
}

#[test]
fn least_squares_inversion_matches_normal_equations() {
    let latent = LatentDims::new(2, 4);
    let image = ImageDims::new(4, 4);
    for seed in 0..3u64 {
        let model = GeneratorModel::seeded_linear(latent, image, 1000 + seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let z_star = SemanticLatent::new(2, 4, rand_vec(&mut rng, 8, 1.0)).unwrap();
        let target = model.forward_raw(z_star.power_normalized().unwrap().as_slice()).unwrap();
        let (expected, _) = power_normalize(&normal_equations_solution(&model, &target)).unwrap();
        let got = inversion::invert_raw(&model, &target, &oracle_inversion_config(), seed).unwrap();
        let diff: f64 = got.latent.as_slice().iter().zip(&expected).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        let norm: f64 = expected.iter().map(|v| v * v).sum::<f64>().sqrt();
        assert!(diff / norm < 1e-4, "seed {seed}: rel err {:e}", diff / norm);
    }
}

#[test]
fn zero_latent_target_converges_from_zero_init() {
    let model = GeneratorModel::seeded_mlp(LatentDims::new(2, 4), ImageDims::new(3, 3), &[8], 4);
    let target = model.forward_raw(&[0.0; 8]).unwrap();
    let cfg = InversionConfig {
        noise_mode: NoiseMode::Off,
        iterations: 100,
        ..Default::default()
    };
    let out = inversion::invert_raw(&model, &target, &cfg, 0).unwrap();
    // The optimum is the starting point: the loss stays at zero and y never moves.
    assert!(out.state.loss_trace.iter().all(|l| *l == 0.0));
    assert!(out.latent.as_slice().iter().all(|v| *v == 0.0));
}

#[test]
fn noiseless_inversion_reduces_loss() {
    let latent = LatentDims::new(2, 4);
    let image = ImageDims::new(4, 4);
    for seed in 0..5u64 {
        let model = GeneratorModel::seeded_mlp(latent, image, &[16], seed);
        let mut rng = ChaCha8Rng::seed_from_u64(seed + 50);
        let z_star = SemanticLatent::new(2, 4, rand_vec(&mut rng, 8, 1.0)).unwrap();
        let target = model.forward_raw(z_star.power_normalized().unwrap().as_slice()).unwrap();
        let cfg = InversionConfig {
            noise_mode: NoiseMode::Off,
            step_size: 0.01,
            iterations: 200,
            ..Default::default()
        };
        let out = inversion::invert_raw(&model, &target, &cfg, seed).unwrap();
        let trace = &out.state.loss_trace;
        assert!(trace.last().unwrap() < &trace[0], "seed {seed}: {} -> {}", trace[0], trace.last().unwrap());
    }
}
