//! Fully connected categorical Q-network: rectified hidden layers and one
//! softmax over return atoms per action.
//!
//! Batches are column-major: one sample per column. Output logits for sample
//! `b` are laid out action-major, so action `a` owns rows `a*K .. (a+1)*K`.

use nalgebra::{DMatrix, DVector};
use rand::Rng;

use crate::error::{Error, Result};

/// Probability floor inside the cross-entropy log.
pub const PROB_FLOOR: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `out x in`.
    pub weights: DMatrix<f64>,
    pub bias: DVector<f64>,
}

impl Dense {
    /// Glorot-uniform weights, zero biases.
    fn glorot<R: Rng + ?Sized>(fan_in: usize, fan_out: usize, rng: &mut R) -> Self {
        let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let weights = DMatrix::from_fn(fan_out, fan_in, |_, _| rng.random_range(-limit..=limit));
        Self { weights, bias: DVector::zeros(fan_out) }
    }

    fn zeros_like(&self) -> Self {
        Self {
            weights: DMatrix::zeros(self.weights.nrows(), self.weights.ncols()),
            bias: DVector::zeros(self.bias.len()),
        }
    }

    fn apply(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        let mut z = &self.weights * x;
        for mut col in z.column_iter_mut() {
            col += &self.bias;
        }
        z
    }
}

/// Per-action return distributions for one state: `num_actions x num_atoms`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct DistTable {
    pub num_actions: usize,
    pub num_atoms: usize,
    pub probs: Vec<f64>,
}

impl DistTable {
    pub fn row(&self, action: usize) -> &[f64] {
        &self.probs[action * self.num_atoms..(action + 1) * self.num_atoms]
    }

    /// `Q(a) = sum_j z_j p_j(a)`.
    pub fn q_values(&self, atoms: &[f64]) -> Vec<f64> {
        (0..self.num_actions).map(|a| self.row(a).iter().zip(atoms).map(|(p, z)| p * z).sum()).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct QNetwork {
    layers: Vec<Dense>,
    num_actions: usize,
    num_atoms: usize,
}

/// Same shape as the network's parameters.
pub type Gradients = QNetwork;

impl QNetwork {
    pub fn new<R: Rng + ?Sized>(
        input_dim: usize,
        hidden: &[usize],
        num_actions: usize,
        num_atoms: usize,
        rng: &mut R,
    ) -> Self {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(num_actions * num_atoms);
        let layers = dims.windows(2).map(|w| Dense::glorot(w[0], w[1], rng)).collect();
        Self { layers, num_actions, num_atoms }
    }

    /// Rebuilds a network from explicit layers (checkpoint loading, fixtures).
    pub fn from_layers(layers: Vec<Dense>, num_actions: usize, num_atoms: usize) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::invalid("network needs at least one layer"));
        }
        for (k, pair) in layers.windows(2).enumerate() {
            if pair[0].weights.nrows() != pair[1].weights.ncols() {
                return Err(Error::invalid(format!("layer {k} output does not match layer {} input", k + 1)));
            }
        }
        for (k, l) in layers.iter().enumerate() {
            if l.bias.len() != l.weights.nrows() {
                return Err(Error::invalid(format!("layer {k} bias length mismatch")));
            }
        }
        if layers.last().unwrap().weights.nrows() != num_actions * num_atoms {
            return Err(Error::invalid("output layer width must be num_actions * num_atoms"));
        }
        Ok(Self { layers, num_actions, num_atoms })
    }

    pub fn layers(&self) -> &[Dense] {
        &self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn num_actions(&self) -> usize {
        self.num_actions
    }

    pub fn num_atoms(&self) -> usize {
        self.num_atoms
    }

    pub fn zeros_like(&self) -> Self {
        Self { layers: self.layers.iter().map(Dense::zeros_like).collect(), ..*self }
    }

    /// Parameter tensors in a fixed order: `w0, b0, w1, b1, ...`.
    pub fn tensors(&self) -> Vec<&[f64]> {
        self.layers.iter().flat_map(|l| [l.weights.as_slice(), l.bias.as_slice()]).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut [f64]> {
        self.layers.iter_mut().flat_map(|l| [l.weights.as_mut_slice(), l.bias.as_mut_slice()]).collect()
    }

    pub fn param_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    fn check_input(&self, rows: usize) -> Result<()> {
        if rows != self.input_dim() {
            return Err(Error::invalid(format!("network expects {} inputs, got {rows}", self.input_dim())));
        }
        Ok(())
    }

    /// Hidden activations for a batch; returns pre-activations and
    /// activations of every hidden layer (input included as activation 0).
    fn hidden_pass(&self, inputs: &DMatrix<f64>) -> (Vec<DMatrix<f64>>, Vec<DMatrix<f64>>) {
        let mut pre = Vec::with_capacity(self.layers.len() - 1);
        let mut act = vec![inputs.clone()];
        for layer in &self.layers[..self.layers.len() - 1] {
            let z = layer.apply(act.last().unwrap());
            act.push(z.map(|v| v.max(0.0)));
            pre.push(z);
        }
        (pre, act)
    }

    /// Output logits for a batch, `(num_actions * num_atoms) x batch`.
    pub fn logits_batch(&self, inputs: &DMatrix<f64>) -> Result<DMatrix<f64>> {
        self.check_input(inputs.nrows())?;
        let (_, act) = self.hidden_pass(inputs);
        Ok(self.layers.last().unwrap().apply(act.last().unwrap()))
    }

    pub fn forward(&self, encoding: &[f64]) -> Result<DistTable> {
        self.check_input(encoding.len())?;
        let x = DMatrix::from_column_slice(encoding.len(), 1, encoding);
        let mut logits = self.logits_batch(&x)?;
        let probs = logits.as_mut_slice();
        for chunk in probs.chunks_mut(self.num_atoms) {
            softmax_in_place(chunk);
        }
        Ok(DistTable { num_actions: self.num_actions, num_atoms: self.num_atoms, probs: probs.to_vec() })
    }

    /// Mean cross-entropy between `targets` (one column per sample) and the
    /// predicted distribution of the taken action, with its gradient.
    pub fn loss_and_grads(
        &self,
        inputs: &DMatrix<f64>,
        actions: &[usize],
        targets: &DMatrix<f64>,
    ) -> Result<(f64, Gradients)> {
        self.check_input(inputs.nrows())?;
        let batch = inputs.ncols();
        let k = self.num_atoms;
        if batch == 0 || actions.len() != batch || targets.ncols() != batch || targets.nrows() != k {
            return Err(Error::invalid("batch, actions and targets disagree in shape"));
        }
        if let Some(a) = actions.iter().find(|&&a| a >= self.num_actions) {
            return Err(Error::invalid(format!("action {a} out of range")));
        }

        let (pre, act) = self.hidden_pass(inputs);
        let last = self.layers.last().unwrap();
        let h = act.last().unwrap();
        let scale = 1.0 / batch as f64;

        let mut grads = self.zeros_like();
        let mut d_hidden = DMatrix::<f64>::zeros(h.nrows(), batch);
        let mut loss = 0.0;
        let mut logits = DVector::<f64>::zeros(k);
        let mut delta = DVector::<f64>::zeros(k);

        for b in 0..batch {
            let start = actions[b] * k;
            let w_rows = last.weights.rows(start, k);
            let hb = h.column(b);
            logits.copy_from(&last.bias.rows(start, k));
            logits.gemv(1.0, &w_rows, &hb, 1.0);
            softmax_in_place(logits.as_mut_slice());
            let target = targets.column(b);
            let mass: f64 = target.iter().sum();
            for j in 0..k {
                loss -= target[j] * logits[j].max(PROB_FLOOR).ln();
                delta[j] = (logits[j] * mass - target[j]) * scale;
            }
            let gl = grads.layers.last_mut().unwrap();
            gl.bias.rows_mut(start, k).axpy(1.0, &delta, 1.0);
            // Column-major weights: each column slice of the action block is contiguous.
            for (c, &hv) in hb.iter().enumerate() {
                if hv != 0.0 {
                    let col = &mut gl.weights.column_mut(c);
                    for (w, d) in col.as_mut_slice()[start..start + k].iter_mut().zip(delta.iter()) {
                        *w += hv * d;
                    }
                }
            }
            d_hidden.column_mut(b).gemv_tr(1.0, &w_rows, &delta, 0.0);
        }
        loss *= scale;
        if !loss.is_finite() {
            return Err(Error::Numeric(format!("non-finite C51 loss {loss}")));
        }

        let mut upstream = d_hidden;
        for li in (0..self.layers.len() - 1).rev() {
            upstream.zip_apply(&pre[li], |d, z| {
                if z <= 0.0 {
                    *d = 0.0
                }
            });
            let g = &mut grads.layers[li];
            g.weights = &upstream * act[li].transpose();
            g.bias = upstream.column_sum();
            if li > 0 {
                upstream = self.layers[li].weights.tr_mul(&upstream);
            }
        }
        Ok((loss, grads))
    }
}

pub fn softmax_in_place(x: &mut [f64]) {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut sum = 0.0;
    for v in x.iter_mut() {
        *v = (*v - max).exp();
        sum += *v;
    }
    for v in x.iter_mut() {
        *v /= sum;
    }
}
