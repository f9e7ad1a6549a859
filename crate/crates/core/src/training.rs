//! Flow-distribution objective, reverse-mode gradients, and the training
//! loop.
//!
//! The true transition matrix `p(j|i)` is the row-normalised aggregate flow.
//! The model's estimate is `p̂(j|i) = softmax_j(ĥ_i·ĥ_j)`, and the loss is the
//! summed cross entropy `−Σ_ij p(j|i) log p̂(j|i)`.

use std::io::Write;
use std::time::Instant;

use ndarray::{s, Array2, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::fusion::MobilityPattern;
use crate::ingest::FlowMatrix;
use crate::linalg::{log_sum_exp, softmax_rows, softmax_rows_backward};
use crate::model::{
    forward_cached, head_slice, init_params, ForwardCache, HeadCache, HeadProjections, ModelDims,
    ModelParams, PatternCache, RegionEmbedding, Variant,
};
use crate::{Error, Result};

/// Row-stochastic `|V|×|V|` matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct TransitionMatrix(Array2<f64>);

impl TransitionMatrix {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        if probs.nrows() != probs.ncols() {
            return Err(Error::shape("transition matrix must be square"));
        }
        for (i, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|p| !(p.is_finite() && *p >= 0.0)) {
                return Err(Error::validation(format!("row {i} has a negative or non-finite entry")));
            }
            if (row.sum() - 1.0).abs() > 1e-9 {
                return Err(Error::validation(format!("row {i} sums to {}", row.sum())));
            }
        }
        Ok(Self(probs))
    }

    pub fn probs(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n_regions(&self) -> usize {
        self.0.nrows()
    }

    /// `Σ_i H(p_i)`, the minimum attainable loss.
    pub fn entropy_sum(&self) -> f64 {
        -self.0.iter().filter(|p| **p > 0.0).map(|p| p * p.ln()).sum::<f64>()
    }
}

/// `p(j|i) = ω_ij / Σ_j* ω_ij*`. Regions with no out-flow get a uniform row.
pub fn transition_probs(flow: &FlowMatrix) -> TransitionMatrix {
    let n = flow.n_regions();
    let mut probs = flow.weights.clone();
    for mut row in probs.rows_mut() {
        let total = row.sum();
        if total > 0.0 {
            row /= total;
        } else {
            row.fill(1.0 / n as f64);
        }
    }
    TransitionMatrix(probs)
}

/// `p̂(j|i) = softmax_j(ĥ_i·ĥ_j)`, self included.
pub fn estimated_probs(emb: &RegionEmbedding) -> TransitionMatrix {
    let e = emb.matrix();
    TransitionMatrix(softmax_rows(&e.dot(&e.t())))
}

/// `−Σ_ij p log p̂`; entries with `p = 0` contribute exactly 0.
pub fn loss(p: &TransitionMatrix, p_hat: &TransitionMatrix) -> f64 {
    p.0.iter()
        .zip(p_hat.0.iter())
        .filter(|(p, _)| **p > 0.0)
        .map(|(p, q)| -p * q.ln())
        .sum()
}

/// `Σ_i KL(p_i ‖ p̂_i)`.
pub fn kl_divergence(p: &TransitionMatrix, p_hat: &TransitionMatrix) -> f64 {
    loss(p, p_hat) - p.entropy_sum()
}

/// Loss evaluated from embeddings via log-softmax, immune to `p̂` underflow.
pub fn embedding_loss(target: &TransitionMatrix, emb: &Array2<f64>) -> f64 {
    let logits = emb.dot(&emb.t());
    let mut total = 0.0;
    for (p_row, l_row) in target.0.rows().into_iter().zip(logits.rows()) {
        let lse = log_sum_exp(l_row);
        total += p_row
            .iter()
            .zip(l_row.iter())
            .filter(|(p, _)| **p > 0.0)
            .map(|(p, l)| -p * (l - lse))
            .sum::<f64>();
    }
    total
}

/// `Σ_i KL(p_i ‖ p̂_i)` evaluated from embeddings via log-softmax.
pub fn embedding_kl(target: &TransitionMatrix, emb: &Array2<f64>) -> f64 {
    embedding_loss(target, emb) - target.entropy_sum()
}

fn add_head_grads(
    input: ArrayView2<'_, f64>,
    proj: &HeadProjections,
    cache: &HeadCache,
    d_out: ArrayView2<'_, f64>,
    grad: &mut HeadProjections,
) -> Array2<f64> {
    let scale = (cache.query.ncols() as f64).sqrt();
    let d_probs = d_out.dot(&cache.value.t());
    let d_value = cache.probs.t().dot(&d_out);
    let d_logits = softmax_rows_backward(&cache.probs, &d_probs) / scale;
    let d_query = d_logits.dot(&cache.key);
    let d_key = d_logits.t().dot(&cache.query);
    grad.query += &input.t().dot(&d_query);
    grad.key += &input.t().dot(&d_key);
    grad.value += &input.t().dot(&d_value);
    d_query.dot(&proj.query.t()) + d_key.dot(&proj.key.t()) + d_value.dot(&proj.value.t())
}

/// Gradient of `loss_scale · ℒ` with respect to every parameter tensor.
/// Returns the unscaled loss alongside.
pub fn backward_scaled(
    params: &ModelParams,
    cache: &ForwardCache,
    target: &TransitionMatrix,
    loss_scale: f64,
) -> Result<(f64, ModelParams)> {
    let (Some(emb), Some(combined)) = (&cache.embedding, &cache.combined) else {
        return Err(Error::MissingCache);
    };
    let dims = params.dims;
    if cache.hidden.len() != dims.n_patterns
        || cache.patterns.len() != dims.n_patterns
        || emb.dim() != (dims.n_regions, dims.hidden)
        || target.n_regions() != dims.n_regions
        || (params.variant.cross_attention && cache.cross.len() != dims.n_regions)
    {
        return Err(Error::shape("forward cache does not match parameters or target"));
    }
    let n_patterns = dims.n_patterns as f64;
    let dh = dims.head_dim();
    let mut grads = params.zeros_like();

    // loss -> logits G = ÊÊᵀ -> embedding
    let value = embedding_loss(target, emb);
    let p_hat = softmax_rows(&emb.dot(&emb.t()));
    let row_mass = target.0.sum_axis(Axis(1)).insert_axis(Axis(1));
    let d_logits = (&p_hat * &row_mass - &target.0) * loss_scale;
    let d_emb = (&d_logits + &d_logits.t()).dot(emb);

    // output layer
    grads.output_weight = combined.t().dot(&d_emb);
    grads.output_bias = d_emb.sum_axis(Axis(0)).insert_axis(Axis(0));
    let d_combined = d_emb.dot(&params.output_weight.t());

    // residual mean of hidden states
    let mut d_hidden: Vec<Array2<f64>> = (0..dims.n_patterns).map(|_| &d_combined / n_patterns).collect();

    // fused state
    if params.variant.cross_attention {
        for (i, heads) in cache.cross.iter().enumerate() {
            let stack = Array2::from_shape_fn((dims.n_patterns, dims.hidden), |(k, c)| cache.hidden[k][[i, c]]);
            let mut d_stack = Array2::zeros(stack.raw_dim());
            for (f, (head_cache, proj)) in heads.iter().zip(&params.cross).enumerate() {
                let g = d_combined.slice(s![i, f * dh..(f + 1) * dh]).to_owned() / n_patterns;
                let d_out = Array2::from_shape_fn((dims.n_patterns, dh), |(_, c)| g[c]);
                d_stack += &add_head_grads(stack.view(), proj, head_cache, d_out.view(), &mut grads.cross[f]);
            }
            for (k, d_h) in d_hidden.iter_mut().enumerate() {
                let mut row = d_h.row_mut(i);
                row += &d_stack.row(k);
            }
        }
    } else {
        for d_h in &mut d_hidden {
            *d_h += &(&d_combined / n_patterns);
        }
    }

    // per-pattern message passing
    for (pattern_cache, d_h) in cache.patterns.iter().zip(d_hidden) {
        match pattern_cache {
            PatternCache::Direct(input) => {
                grads.direct += &input.t().dot(&d_h);
            }
            PatternCache::MessagePassing(layers) => {
                let mut d_out = d_h;
                for (l, layer_cache) in layers.iter().enumerate().rev() {
                    let layer = &params.layers[l];
                    grads.layers[l].fuse += &layer_cache.concat.t().dot(&d_out);
                    let d_concat = d_out.dot(&layer.fuse.t());
                    let mut d_input = Array2::<f64>::zeros((dims.n_regions, dims.layer_input_dim(l)));
                    for f in 0..dims.heads {
                        d_input += &add_head_grads(
                            layer_cache.source_input.view(),
                            &layer.source[f],
                            &layer_cache.source[f],
                            head_slice(&d_concat, f, dh),
                            &mut grads.layers[l].source[f],
                        );
                        d_input += &add_head_grads(
                            layer_cache.target_input.view(),
                            &layer.target[f],
                            &layer_cache.target[f],
                            head_slice(&d_concat, dims.heads + f, dh),
                            &mut grads.layers[l].target[f],
                        );
                    }
                    d_out = d_input;
                }
            }
        }
    }
    Ok((value, grads))
}

/// Gradient of ℒ with respect to every parameter tensor, plus the loss value.
/// Fails with [`Error::MissingCache`] if `cache` was not recorded.
pub fn backward(params: &ModelParams, cache: &ForwardCache, target: &TransitionMatrix) -> Result<(f64, ModelParams)> {
    backward_scaled(params, cache, target, 1.0)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum OptimizerKind {
    Adam { beta1: f64, beta2: f64, epsilon: f64 },
    Sgd,
}

impl OptimizerKind {
    pub fn adam() -> Self {
        OptimizerKind::Adam { beta1: 0.9, beta2: 0.999, epsilon: 1e-8 }
    }
}

impl Default for OptimizerKind {
    fn default() -> Self {
        Self::adam()
    }
}

pub trait Optimizer {
    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams);
}

pub struct Sgd {
    pub learning_rate: f64,
}

impl Optimizer for Sgd {
    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        for (p, g) in params.tensors_mut().into_iter().zip(grads.tensors()) {
            p.scaled_add(-self.learning_rate, g);
        }
    }
}

pub struct Adam {
    learning_rate: f64,
    beta1: f64,
    beta2: f64,
    epsilon: f64,
    step: i32,
    first: Vec<Array2<f64>>,
    second: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(params: &ModelParams, learning_rate: f64, beta1: f64, beta2: f64, epsilon: f64) -> Self {
        let zeros: Vec<Array2<f64>> = params.tensors().iter().map(|t| Array2::zeros(t.raw_dim())).collect();
        Self {
            learning_rate,
            beta1,
            beta2,
            epsilon,
            step: 0,
            first: zeros.clone(),
            second: zeros,
        }
    }
}

impl Optimizer for Adam {
    fn step(&mut self, params: &mut ModelParams, grads: &ModelParams) {
        self.step += 1;
        let c1 = 1.0 - self.beta1.powi(self.step);
        let c2 = 1.0 - self.beta2.powi(self.step);
        for (((p, g), m), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(&mut self.first)
            .zip(&mut self.second)
        {
            ndarray::Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = self.beta1 * *m + (1.0 - self.beta1) * g;
                *v = self.beta2 * *v + (1.0 - self.beta2) * g * g;
                *p -= self.learning_rate * (*m / c1) / ((*v / c2).sqrt() + self.epsilon);
            });
        }
    }
}

/// Ablation switches, one per removable component.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Ablations {
    /// Replace distance-based clustering with contiguous time groups.
    pub no_mgf: bool,
    /// Replace intra-pattern message passing with one linear projection.
    pub no_ipmp: bool,
    /// Replace cross attention with the plain mean of hidden states.
    pub no_ipmca: bool,
}

impl Ablations {
    pub fn variant(&self) -> Variant {
        Variant { message_passing: !self.no_ipmp, cross_attention: !self.no_ipmca }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    pub ablation: Ablations,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 2000,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::adam(),
            seed: 0,
            ablation: Ablations::default(),
        }
    }
}

impl TrainConfig {
    /// `epochs ≥ 1`; the learning rate must be finite and non-negative
    /// (zero gives a frozen model, which is occasionally useful as a baseline).
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(Error::config("epochs must be at least 1"));
        }
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(Error::config(format!("invalid learning rate {}", self.learning_rate)));
        }
        Ok(())
    }

    fn optimizer(&self, params: &ModelParams) -> Box<dyn Optimizer> {
        match self.optimizer {
            OptimizerKind::Adam { beta1, beta2, epsilon } => {
                Box::new(Adam::new(params, self.learning_rate, beta1, beta2, epsilon))
            }
            OptimizerKind::Sgd => Box::new(Sgd { learning_rate: self.learning_rate }),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub loss: f64,
    pub seconds: f64,
}

/// One record per epoch: the loss of the parameters entering that epoch and
/// the cumulative wall time at its end.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainHistory {
    pub records: Vec<EpochRecord>,
}

impl TrainHistory {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn losses(&self) -> Vec<f64> {
        self.records.iter().map(|r| r.loss).collect()
    }

    /// CSV `epoch,loss,seconds`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "epoch,loss,seconds")?;
        for r in &self.records {
            writeln!(out, "{},{},{:.6}", r.epoch, r.loss, r.seconds)?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let mut records = Vec::new();
        for rec in rdr.deserialize() {
            records.push(rec?);
        }
        Ok(Self { records })
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub params: ModelParams,
    pub history: TrainHistory,
    pub embedding: RegionEmbedding,
    /// Loss of the returned parameters.
    pub final_loss: f64,
}

fn numeric_failure(epoch: usize, params: &ModelParams) -> Error {
    let norms: Vec<String> = params
        .norms()
        .into_iter()
        .map(|(n, v)| format!("{n}={v:.3e}"))
        .collect();
    Error::Numeric(format!("non-finite loss at epoch {epoch}; parameter norms: {}", norms.join(" ")))
}

/// Full-batch training from freshly initialised parameters.
pub fn train(
    patterns: &[MobilityPattern],
    flow: &FlowMatrix,
    dims: ModelDims,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    let params = init_params(dims, cfg.seed)?.with_variant(cfg.ablation.variant());
    train_from(params, patterns, flow, cfg)
}

/// Full-batch training starting from `params`.
pub fn train_from(
    mut params: ModelParams,
    patterns: &[MobilityPattern],
    flow: &FlowMatrix,
    cfg: &TrainConfig,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let target = transition_probs(flow);
    let mut optimizer = cfg.optimizer(&params);
    let mut history = TrainHistory::default();
    let start = Instant::now();
    for epoch in 0..cfg.epochs {
        let (_, cache) = forward_cached(patterns, &params)?;
        let (value, grads) = backward(&params, &cache, &target)?;
        if !value.is_finite() {
            return Err(numeric_failure(epoch, &params));
        }
        optimizer.step(&mut params, &grads);
        history.records.push(EpochRecord {
            epoch,
            loss: value,
            seconds: start.elapsed().as_secs_f64(),
        });
        log::debug!("epoch {epoch} loss {value}");
    }
    let (out, _) = forward_cached(patterns, &params)?;
    let final_loss = embedding_loss(&target, out.embedding.matrix());
    if !final_loss.is_finite() {
        return Err(numeric_failure(cfg.epochs, &params));
    }
    Ok(TrainOutcome { params, history, embedding: out.embedding, final_loss })
}
