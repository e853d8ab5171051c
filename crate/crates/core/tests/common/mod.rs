//! Independent reference implementations shared by the integration tests.
#![allow(dead_code)]

use nalgebra::{DMatrix, DVector};
use plume_scout::agent::{QNetwork, PROB_FLOOR};
use rand::Rng;

/// Random symmetric positive-definite matrix `A A^T + n I` scaled to unit-ish entries.
pub fn random_spd<R: Rng>(n: usize, rng: &mut R) -> DMatrix<f64> {
    let a = DMatrix::from_fn(n, n, |_, _| rng.random_range(-1.0..1.0));
    &a * a.transpose() + DMatrix::identity(n, n) * (0.1 * n as f64)
}

/// Textbook BLUE: explicit binary `H`, gain via a general (LU) inverse.
pub fn dense_blue(xb: &[f64], b: &DMatrix<f64>, cells: &[usize], y: &[f64], v0: f64) -> Vec<f64> {
    let n = xb.len();
    let m = cells.len();
    if m == 0 {
        return xb.to_vec();
    }
    let mut h = DMatrix::zeros(m, n);
    for (r, &c) in cells.iter().enumerate() {
        h[(r, c)] = 1.0;
    }
    let s = &h * b * h.transpose() + DMatrix::identity(m, m) * v0;
    let k = b * h.transpose() * s.lu().try_inverse().expect("invertible innovation covariance");
    let xb_v = DVector::from_column_slice(xb);
    let innovation = DVector::from_column_slice(y) - &h * &xb_v;
    (xb_v + k * innovation).iter().copied().collect()
}

/// `trace((I - K H) B)` with an explicit gain.
pub fn dense_posterior_trace(b: &DMatrix<f64>, cells: &[usize], v0: f64) -> f64 {
    let n = b.nrows();
    let m = cells.len();
    if m == 0 {
        return b.trace();
    }
    let mut h = DMatrix::zeros(m, n);
    for (r, &c) in cells.iter().enumerate() {
        h[(r, c)] = 1.0;
    }
    let s = &h * b * h.transpose() + DMatrix::identity(m, m) * v0;
    let k = b * h.transpose() * s.lu().try_inverse().unwrap();
    ((DMatrix::identity(n, n) - k * h) * b).trace()
}

/// Per-sample projection via triangular "hat" kernels: atom `j` receives
/// `p_i * max(0, 1 - |Tz_i - z_j| / dz)` from every source atom `i`.
pub fn hat_projection(atoms: &[f64], reward: f64, done: bool, discount: f64, next: &[f64]) -> Vec<f64> {
    let (lo, hi) = (atoms[0], atoms[atoms.len() - 1]);
    let dz = atoms[1] - atoms[0];
    let sources: Vec<(f64, f64)> = if done {
        vec![(reward.clamp(lo, hi), 1.0)]
    } else {
        atoms.iter().zip(next).map(|(&z, &p)| ((reward + discount * z).clamp(lo, hi), p)).collect()
    };
    atoms
        .iter()
        .map(|&zj| sources.iter().map(|&(tz, p)| p * (1.0 - (tz - zj).abs() / dz).max(0.0)).sum())
        .collect()
}

/// Mean cross-entropy loss written directly from the network's forward pass.
pub fn reference_loss(net: &QNetwork, inputs: &DMatrix<f64>, actions: &[usize], targets: &DMatrix<f64>) -> f64 {
    let k = net.num_atoms();
    let mut total = 0.0;
    for b in 0..inputs.ncols() {
        let x: Vec<f64> = inputs.column(b).iter().copied().collect();
        let table = net.forward(&x).unwrap();
        let p = table.row(actions[b]);
        for j in 0..k {
            total -= targets[(j, b)] * p[j].max(PROB_FLOOR).ln();
        }
    }
    total / inputs.ncols() as f64
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Largest relative error of a vector against a reference, scaled by the
/// reference's magnitude.
pub fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    let scale = b.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(1e-12);
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max) / scale
}

/// Random probability vector of length `k`.
pub fn random_distribution<R: Rng>(k: usize, rng: &mut R) -> Vec<f64> {
    let raw: Vec<f64> = (0..k).map(|_| rng.random::<f64>().powi(3)).collect();
    let s: f64 = raw.iter().sum();
    raw.iter().map(|v| v / s).collect()
}

/// Central-difference check of `loss_and_grads` on `samples` random
/// parameters; returns the worst relative error.
pub fn gradient_check<R: Rng>(
    net: &QNetwork,
    inputs: &DMatrix<f64>,
    actions: &[usize],
    targets: &DMatrix<f64>,
    h: f64,
    samples: usize,
    rng: &mut R,
) -> f64 {
    let (_, grads) = net.loss_and_grads(inputs, actions, targets).unwrap();
    let analytic: Vec<Vec<f64>> = grads.tensors().iter().map(|t| t.to_vec()).collect();
    let mut worst = 0.0f64;
    for _ in 0..samples {
        let t = rng.random_range(0..analytic.len());
        let i = rng.random_range(0..analytic[t].len());
        let mut plus = net.clone();
        plus.tensors_mut()[t][i] += h;
        let mut minus = net.clone();
        minus.tensors_mut()[t][i] -= h;
        let fd = (reference_loss(&plus, inputs, actions, targets) - reference_loss(&minus, inputs, actions, targets)) / (2.0 * h);
        let g = analytic[t][i];
        worst = worst.max((fd - g).abs() / fd.abs().max(g.abs()).max(1e-7));
    }
    worst
}

/// Random network, batch and target distributions for gradient checks.
pub fn random_problem<R: Rng>(rng: &mut R, batch: usize) -> (QNetwork, DMatrix<f64>, Vec<usize>, DMatrix<f64>) {
    let (input, actions, atoms) = (rng.random_range(3..10), rng.random_range(2..5), rng.random_range(3..8));
    let hidden = [rng.random_range(4..12), rng.random_range(3..8)];
    let mut net = QNetwork::new(input, &hidden, actions, atoms, rng);
    // Nonzero biases keep pre-activations off the ReLU kink at exactly 0.
    for (t, tensor) in net.tensors_mut().into_iter().enumerate() {
        if t % 2 == 1 {
            tensor.iter_mut().for_each(|b| *b = rng.random_range(-0.5..0.5));
        }
    }
    let inputs = DMatrix::from_fn(input, batch, |_, _| rng.random_range(-1.0..1.0));
    let acts = (0..batch).map(|_| rng.random_range(0..actions)).collect();
    let mut targets = DMatrix::zeros(atoms, batch);
    for b in 0..batch {
        targets.column_mut(b).copy_from_slice(&random_distribution(atoms, rng));
    }
    (net, inputs, acts, targets)
}
