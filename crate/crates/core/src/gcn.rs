//! Two-layer graph-convolutional chooser embeddings with a logit head.
//!
//! Each layer computes `H' = relu(A' drop(H) W)` with the self-looped
//! normalized adjacency `A' = (D+2I)^{-1/2} (A+I) (D+2I)^{-1/2}`. The
//! chooser embedding is the concatenation of both layer outputs (or the last
//! layer only), optionally prefixed by the input `H0`, and feeds an MNL head `u_i + H_a . gamma_i`, plus
//! `theta . y_i` when item features exist. Gradients are backpropagated by
//! hand through this fixed composition.

use ndarray::{s, Array1, Array2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::ChoiceDataset;
use crate::error::{Error, Result};
use crate::graph::{SocialGraph, SparseSymmetric};
use crate::models::log_sum_exp;
use crate::optimizer::{rprop_step, RpropState, TrainReport};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GcnConfig {
    pub layer_dims: [usize; 2],
    pub dropout: f64,
    pub concatenate_layers: bool,
    /// Prefix the embedding with the input `H0`.
    #[serde(alias = "concat_h0")]
    pub concat_input: bool,
    /// Width of the learned input table used when choosers have no features.
    pub learned_input_dim: usize,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            layer_dims: [16, 16],
            dropout: 0.5,
            concatenate_layers: true,
            concat_input: false,
            learned_input_dim: 16,
        }
    }
}

impl GcnConfig {
    fn check(&self) -> Result<()> {
        if self.layer_dims.contains(&0) || self.learned_input_dim == 0 {
            return Err(Error::Config("GCN dimensions must be positive".into()));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::Config(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Input width for `dataset`: its feature count, or the learned width.
    pub fn input_dim(&self, dataset: &ChoiceDataset) -> usize {
        if dataset.d_x > 0 {
            dataset.d_x
        } else {
            self.learned_input_dim
        }
    }

    pub fn embedding_dim(&self, input_dim: usize) -> usize {
        let layers = if self.concatenate_layers {
            self.layer_dims[0] + self.layer_dims[1]
        } else {
            self.layer_dims[1]
        };
        layers + if self.concat_input { input_dim } else { 0 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    /// Dropout active, masks drawn from `(seed, epoch)`.
    Train { seed: u64, epoch: u64 },
    Eval,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    /// Learned `H0` (`n x learned_input_dim`) when choosers have no features.
    pub input: Option<Array2<f64>>,
    pub w0: Array2<f64>,
    pub w1: Array2<f64>,
    pub u: Array1<f64>,
    /// Embedding coefficients, `k x embedding_dim`.
    pub gamma: Array2<f64>,
    pub theta: Array1<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, rows: usize, cols: usize, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

impl GcnParams {
    /// Glorot-uniform layer weights (and learned inputs); zero head.
    pub fn init(cfg: &GcnConfig, dataset: &ChoiceDataset, seed: u64) -> Result<Self> {
        cfg.check()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (input, d0) = if dataset.d_x > 0 {
            (None, dataset.d_x)
        } else {
            let d = cfg.learned_input_dim;
            (Some(glorot(&mut rng, dataset.n_choosers, d, d, d)), d)
        };
        let [h1, h2] = cfg.layer_dims;
        Ok(Self {
            input,
            w0: glorot(&mut rng, d0, h1, d0, h1),
            w1: glorot(&mut rng, h1, h2, h1, h2),
            u: Array1::zeros(dataset.n_items),
            gamma: Array2::zeros((dataset.n_items, cfg.embedding_dim(d0))),
            theta: Array1::zeros(dataset.d_y),
        })
    }

    pub fn zeros_like(&self) -> Self {
        Self {
            input: self.input.as_ref().map(|h| Array2::zeros(h.raw_dim())),
            w0: Array2::zeros(self.w0.raw_dim()),
            w1: Array2::zeros(self.w1.raw_dim()),
            u: Array1::zeros(self.u.len()),
            gamma: Array2::zeros(self.gamma.raw_dim()),
            theta: Array1::zeros(self.theta.len()),
        }
    }

    fn blocks(&self) -> impl Iterator<Item = &f64> {
        self.input
            .iter()
            .flat_map(|h| h.iter())
            .chain(self.w0.iter())
            .chain(self.w1.iter())
            .chain(self.u.iter())
            .chain(self.gamma.iter())
            .chain(self.theta.iter())
    }

    fn blocks_mut(&mut self) -> impl Iterator<Item = &mut f64> {
        self.input
            .iter_mut()
            .flat_map(|h| h.iter_mut())
            .chain(self.w0.iter_mut())
            .chain(self.w1.iter_mut())
            .chain(self.u.iter_mut())
            .chain(self.gamma.iter_mut())
            .chain(self.theta.iter_mut())
    }

    pub fn to_flat(&self) -> Vec<f64> {
        self.blocks().copied().collect()
    }

    pub fn assign_flat(&mut self, flat: &[f64]) {
        for (dst, &src) in self.blocks_mut().zip(flat) {
            *dst = src;
        }
    }

    fn squared_norm(&self) -> f64 {
        self.blocks().map(|x| x * x).sum()
    }

    fn check(&self, cfg: &GcnConfig, dataset: &ChoiceDataset) -> Result<()> {
        let d0 = match &self.input {
            Some(h) if dataset.d_x == 0 && h.nrows() == dataset.n_choosers => h.ncols(),
            None if dataset.d_x > 0 => dataset.d_x,
            _ => return Err(Error::Config("GCN input does not match the dataset's chooser features".into())),
        };
        let [h1, h2] = cfg.layer_dims;
        if self.w0.dim() != (d0, h1)
            || self.w1.dim() != (h1, h2)
            || self.u.len() != dataset.n_items
            || self.gamma.dim() != (dataset.n_items, cfg.embedding_dim(d0))
            || self.theta.len() != dataset.d_y
        {
            return Err(Error::Config("GCN parameter shapes do not match the configuration".into()));
        }
        Ok(())
    }
}

/// Intermediate values of one forward pass, kept for backpropagation.
struct ForwardPass {
    mask0: Option<Array2<f64>>,
    mask1: Option<Array2<f64>>,
    ax0: Array2<f64>,
    p1: Array2<f64>,
    ax1: Array2<f64>,
    p2: Array2<f64>,
    embedding: Array2<f64>,
}

fn dropout_mask(rng: &mut ChaCha8Rng, shape: (usize, usize), rate: f64) -> Array2<f64> {
    let keep = 1.0 / (1.0 - rate);
    Array2::from_shape_simple_fn(shape, || if rng.gen::<f64>() < rate { 0.0 } else { keep })
}

fn relu(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.max(0.0))
}

fn forward(op: &SparseSymmetric, params: &GcnParams, cfg: &GcnConfig, inputs: &Array2<f64>, mode: Mode) -> ForwardPass {
    let mut rng = match mode {
        Mode::Train { seed, epoch } if cfg.dropout > 0.0 => {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(epoch);
            Some(r)
        }
        _ => None,
    };
    let mask0 = rng.as_mut().map(|r| dropout_mask(r, inputs.dim(), cfg.dropout));
    let x0 = match &mask0 {
        Some(m) => inputs * m,
        None => inputs.clone(),
    };
    let ax0 = op.mul(&x0);
    let p1 = ax0.dot(&params.w0);
    let h1 = relu(&p1);
    let mask1 = rng.as_mut().map(|r| dropout_mask(r, h1.dim(), cfg.dropout));
    let x1 = match &mask1 {
        Some(m) => &h1 * m,
        None => h1.clone(),
    };
    let ax1 = op.mul(&x1);
    let p2 = ax1.dot(&params.w1);
    let h2 = relu(&p2);
    let mut parts = Vec::with_capacity(3);
    if cfg.concat_input {
        parts.push(inputs.view());
    }
    if cfg.concatenate_layers {
        parts.push(h1.view());
    }
    parts.push(h2.view());
    let embedding = ndarray::concatenate(Axis(1), &parts).expect("same row count");
    ForwardPass { mask0, mask1, ax0, p1, ax1, p2, embedding }
}

fn inputs<'a>(params: &'a GcnParams, dataset: &'a ChoiceDataset) -> &'a Array2<f64> {
    params
        .input
        .as_ref()
        .or(dataset.chooser_features.as_ref())
        .expect("checked by GcnParams::check")
}

/// Chooser embeddings `n x embedding_dim`.
pub fn gcn_forward(
    g: &SocialGraph,
    params: &GcnParams,
    cfg: &GcnConfig,
    dataset: &ChoiceDataset,
    mode: Mode,
) -> Result<Array2<f64>> {
    cfg.check()?;
    params.check(cfg, dataset)?;
    if g.n() != dataset.n_choosers {
        return Err(Error::Config(format!("graph has {} nodes, dataset {} choosers", g.n(), dataset.n_choosers)));
    }
    let op = g.normalized_operator(true);
    Ok(forward(&op, params, cfg, inputs(params, dataset), mode).embedding)
}

/// Objective (weighted NLL + ridge on every parameter) and its gradient.
pub fn objective_and_gradient(
    op: &SparseSymmetric,
    params: &GcnParams,
    cfg: &GcnConfig,
    dataset: &ChoiceDataset,
    obs_idx: &[usize],
    l2: f64,
    mode: Mode,
) -> Result<(f64, GcnParams)> {
    cfg.check()?;
    params.check(cfg, dataset)?;
    let x = inputs(params, dataset);
    let fp = forward(op, params, cfg, x, mode);
    let h = &fp.embedding;
    let mut grad = params.zeros_like();
    let mut d_emb = Array2::<f64>::zeros(h.raw_dim());
    let mut util = Vec::new();
    let mut nll = 0.0;
    for &o in obs_idx {
        let obs = &dataset.observations[o];
        let ha = h.row(obs.chooser);
        let y = obs.item_features.as_ref();
        util.clear();
        for (pos, &item) in obs.choice_set.iter().enumerate() {
            let mut v = params.u[item] + params.gamma.row(item).dot(&ha);
            if let Some(y) = y {
                v += params.theta.dot(&y.row(pos));
            }
            util.push(v);
        }
        let lse = log_sum_exp(&util);
        nll += obs.weight * (lse - util[obs.chosen_index]);
        if obs.weight == 0.0 {
            continue;
        }
        for (pos, &item) in obs.choice_set.iter().enumerate() {
            let p = (util[pos] - lse).exp();
            let r = obs.weight * (p - if pos == obs.chosen_index { 1.0 } else { 0.0 });
            grad.u[item] += r;
            grad.gamma.row_mut(item).scaled_add(r, &ha);
            d_emb.row_mut(obs.chooser).scaled_add(r, &params.gamma.row(item));
            if let Some(y) = y {
                grad.theta.scaled_add(r, &y.row(pos));
            }
        }
    }

    // Split the embedding gradient into input, layer-1 and layer-2 parts.
    let d_in_dim = if cfg.concat_input { x.ncols() } else { 0 };
    let d_input = d_emb.slice(s![.., ..d_in_dim]).to_owned();
    let h1_end = d_in_dim + if cfg.concatenate_layers { cfg.layer_dims[0] } else { 0 };
    let mut d_h1 = if cfg.concatenate_layers {
        d_emb.slice(s![.., d_in_dim..h1_end]).to_owned()
    } else {
        Array2::zeros(fp.p1.raw_dim())
    };
    let d_h2 = d_emb.slice(s![.., h1_end..]).to_owned();

    let relu_grad = |d: Array2<f64>, pre: &Array2<f64>| {
        let mut d = d;
        Zip::from(&mut d).and(pre).for_each(|g, &p| {
            if p <= 0.0 {
                *g = 0.0;
            }
        });
        d
    };

    // Layer 2: p2 = A' x1 W1, x1 = h1 * mask1.
    let d_p2 = relu_grad(d_h2, &fp.p2);
    grad.w1 = fp.ax1.t().dot(&d_p2);
    let mut d_x1 = op.mul(&d_p2.dot(&params.w1.t()));
    if let Some(m) = &fp.mask1 {
        d_x1 *= m;
    }
    d_h1 += &d_x1;

    // Layer 1: p1 = A' x0 W0, x0 = inputs * mask0.
    let d_p1 = relu_grad(d_h1, &fp.p1);
    grad.w0 = fp.ax0.t().dot(&d_p1);
    if let Some(gi) = grad.input.as_mut() {
        let mut d_x0 = op.mul(&d_p1.dot(&params.w0.t()));
        if let Some(m) = &fp.mask0 {
            d_x0 *= m;
        }
        if cfg.concat_input {
            d_x0 += &d_input;
        }
        *gi = d_x0;
    }

    let mut value = nll;
    if l2 > 0.0 {
        value += 0.5 * l2 * params.squared_norm();
        for (g, &p) in grad.blocks_mut().zip(params.blocks()) {
            *g += l2 * p;
        }
    }
    Ok((value, grad))
}

/// Eval-mode objective over the observations of `choosers`.
pub fn gcn_choice_objective(
    params: &GcnParams,
    cfg: &GcnConfig,
    g: &SocialGraph,
    dataset: &ChoiceDataset,
    choosers: &[usize],
    l2: f64,
) -> Result<f64> {
    let op = g.normalized_operator(true);
    let obs = dataset.observations_of(choosers);
    Ok(objective_and_gradient(&op, params, cfg, dataset, &obs, l2, Mode::Eval)?.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GcnTrainOptions {
    pub learning_rate: f64,
    pub l2: f64,
    pub max_epochs: usize,
    pub tolerance: f64,
    /// Seeds weight initialization and the per-epoch dropout masks.
    pub seed: u64,
}

impl Default for GcnTrainOptions {
    fn default() -> Self {
        Self { learning_rate: 0.01, l2: 1e-3, max_epochs: 100, tolerance: 1e-8, seed: 0 }
    }
}

/// End-to-end Rprop training of the GCN and its head on the observations of
/// `train_choosers`. The whole graph is used for message passing.
pub fn train_gcn(
    g: &SocialGraph,
    dataset: &ChoiceDataset,
    train_choosers: &[usize],
    cfg: &GcnConfig,
    opts: &GcnTrainOptions,
) -> Result<TrainReport<GcnParams>> {
    if g.n() != dataset.n_choosers {
        return Err(Error::Config(format!("graph has {} nodes, dataset {} choosers", g.n(), dataset.n_choosers)));
    }
    let obs = dataset.observations_of(train_choosers);
    if obs.is_empty() {
        return Err(Error::Argument("training choosers have no observations".into()));
    }
    let op = g.normalized_operator(true);
    let mut params = GcnParams::init(cfg, dataset, opts.seed)?;
    let mut flat = params.to_flat();
    let mut state = RpropState::new(flat.len(), opts.learning_rate);
    let mut epochs_run = 0;
    for epoch in 0..opts.max_epochs {
        let mode = Mode::Train { seed: opts.seed, epoch: epoch as u64 };
        let (value, grad) = objective_and_gradient(&op, &params, cfg, dataset, &obs, opts.l2, mode)?;
        if !value.is_finite() {
            return Err(Error::Divergence { epoch, value });
        }
        let grad = grad.to_flat();
        if grad.iter().map(|x| x * x).sum::<f64>() < opts.tolerance {
            break;
        }
        rprop_step(&mut flat, &grad, &mut state);
        params.assign_flat(&flat);
        epochs_run = epoch + 1;
    }
    let (value, grad) = objective_and_gradient(&op, &params, cfg, dataset, &obs, opts.l2, Mode::Eval)?;
    if !value.is_finite() {
        return Err(Error::Divergence { epoch: epochs_run, value });
    }
    let sq = grad.squared_norm();
    Ok(TrainReport {
        final_params: params,
        epochs_run,
        final_objective: value,
        final_gradient_sq_norm: sq,
        converged: sq < opts.tolerance,
    })
}

/// Head utilities over an observation's choice set, given embeddings.
pub(crate) fn head_utilities(params: &GcnParams, embedding: &Array2<f64>, obs: &crate::data::ChoiceObservation) -> Vec<f64> {
    let ha = embedding.row(obs.chooser);
    obs.choice_set
        .iter()
        .enumerate()
        .map(|(pos, &item)| {
            let mut v = params.u[item] + params.gamma.row(item).dot(&ha);
            if let Some(y) = &obs.item_features {
                v += params.theta.dot(&y.row(pos));
            }
            v
        })
        .collect()
}
