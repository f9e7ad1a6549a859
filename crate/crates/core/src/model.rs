//! Mobility pattern joint learning network.
//!
//! Each pattern is split into a source stream (rows are out-flows) and a
//! target stream (rows are in-flows). Within a pattern, every region attends
//! to every region with multi-head scaled dot-product attention; the two
//! stream outputs are concatenated and linearly fused into the pattern's
//! hidden state `h^k`. Across patterns, each region attends over its own `N`
//! hidden states (cross attention), the results are averaged, added to the
//! mean hidden state, and passed through a fully connected output layer.

use std::io::Write;

use ndarray::{concatenate, s, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::fusion::MobilityPattern;
use crate::linalg::softmax_rows;
use crate::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelDims {
    pub n_regions: usize,
    pub n_patterns: usize,
    pub hidden: usize,
    pub heads: usize,
    pub layers: usize,
}

impl ModelDims {
    pub fn new(
        n_regions: usize,
        n_patterns: usize,
        hidden: usize,
        heads: usize,
        layers: usize,
    ) -> Result<Self> {
        let dims = Self { n_regions, n_patterns, hidden, heads, layers };
        dims.validate()?;
        Ok(dims)
    }

    pub fn validate(&self) -> Result<()> {
        if [self.n_regions, self.n_patterns, self.hidden, self.heads, self.layers].contains(&0) {
            return Err(Error::config(format!("all model dimensions must be positive: {self:?}")));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "hidden size {} is not divisible by {} heads",
                self.hidden, self.heads
            )));
        }
        Ok(())
    }

    /// Per-head width `d / F`.
    pub fn head_dim(&self) -> usize {
        self.hidden / self.heads
    }

    /// Feature width entering layer `l` (0-based): `|V|` for the first layer,
    /// `d` afterwards.
    pub fn layer_input_dim(&self, layer: usize) -> usize {
        if layer == 0 {
            self.n_regions
        } else {
            self.hidden
        }
    }
}

/// Which parts of the network are active. Disabling a stage swaps in the
/// simple substitute used by the ablation variants.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Variant {
    /// Off: `h^k = [X_s | X_t]·W_direct`, a single linear projection.
    pub message_passing: bool,
    /// Off: the fused state is the plain mean of the pattern hidden states.
    pub cross_attention: bool,
}

impl Default for Variant {
    fn default() -> Self {
        Self { message_passing: true, cross_attention: true }
    }
}

/// Query, key and value projections of one attention head, each stored as
/// `in_dim × head_dim` so that a row-feature matrix `H` projects as `H·W`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HeadProjections {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct IntraLayer {
    pub source: Vec<HeadProjections>,
    pub target: Vec<HeadProjections>,
    /// `2d × d` fusion of the concatenated stream outputs, no bias.
    pub fuse: Array2<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub dims: ModelDims,
    pub seed: u64,
    pub variant: Variant,
    pub layers: Vec<IntraLayer>,
    /// `2|V| × d`, only used when message passing is ablated.
    pub direct: Array2<f64>,
    pub cross: Vec<HeadProjections>,
    pub output_weight: Array2<f64>,
    /// `1 × d`.
    pub output_bias: Array2<f64>,
}

fn glorot(rng: &mut ChaCha8Rng, fan_in: usize, fan_out: usize) -> Array2<f64> {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-limit..limit))
}

fn glorot_heads(rng: &mut ChaCha8Rng, in_dim: usize, dims: &ModelDims) -> Vec<HeadProjections> {
    let dh = dims.head_dim();
    (0..dims.heads)
        .map(|_| HeadProjections {
            query: glorot(rng, in_dim, dh),
            key: glorot(rng, in_dim, dh),
            value: glorot(rng, in_dim, dh),
        })
        .collect()
}

/// Glorot-uniform weights (`U(±√(6/(fan_in+fan_out)))`), zero bias,
/// deterministic in `seed`.
pub fn init_params(dims: ModelDims, seed: u64) -> Result<ModelParams> {
    dims.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let d = dims.hidden;
    let layers = (0..dims.layers)
        .map(|l| {
            let in_dim = dims.layer_input_dim(l);
            IntraLayer {
                source: glorot_heads(&mut rng, in_dim, &dims),
                target: glorot_heads(&mut rng, in_dim, &dims),
                fuse: glorot(&mut rng, 2 * d, d),
            }
        })
        .collect();
    let direct = glorot(&mut rng, 2 * dims.n_regions, d);
    let cross = glorot_heads(&mut rng, d, &dims);
    let output_weight = glorot(&mut rng, d, d);
    Ok(ModelParams {
        dims,
        seed,
        variant: Variant::default(),
        layers,
        direct,
        cross,
        output_weight,
        output_bias: Array2::zeros((1, d)),
    })
}

impl ModelParams {
    pub fn with_variant(mut self, variant: Variant) -> Self {
        self.variant = variant;
        self
    }

    /// Same structure, all entries zero. Used as a gradient accumulator.
    pub fn zeros_like(&self) -> Self {
        let mut z = self.clone();
        for t in z.tensors_mut() {
            t.fill(0.0);
        }
        z
    }

    /// Every trainable tensor, in a fixed order shared with
    /// [`tensors_mut`](Self::tensors_mut) and [`tensor_names`](Self::tensor_names).
    pub fn tensors(&self) -> Vec<&Array2<f64>> {
        let mut out = Vec::new();
        for layer in &self.layers {
            for h in layer.source.iter().chain(&layer.target) {
                out.extend([&h.query, &h.key, &h.value]);
            }
            out.push(&layer.fuse);
        }
        out.push(&self.direct);
        for h in &self.cross {
            out.extend([&h.query, &h.key, &h.value]);
        }
        out.push(&self.output_weight);
        out.push(&self.output_bias);
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Array2<f64>> {
        let mut out = Vec::new();
        for layer in &mut self.layers {
            for h in layer.source.iter_mut().chain(layer.target.iter_mut()) {
                out.extend([&mut h.query, &mut h.key, &mut h.value]);
            }
            out.push(&mut layer.fuse);
        }
        out.push(&mut self.direct);
        for h in &mut self.cross {
            out.extend([&mut h.query, &mut h.key, &mut h.value]);
        }
        out.push(&mut self.output_weight);
        out.push(&mut self.output_bias);
        out
    }

    pub fn tensor_names(&self) -> Vec<String> {
        let mut out = Vec::new();
        for (l, layer) in self.layers.iter().enumerate() {
            for (stream, heads) in [("source", &layer.source), ("target", &layer.target)] {
                for f in 0..heads.len() {
                    for p in ["query", "key", "value"] {
                        out.push(format!("intra.{l}.{stream}.{f}.{p}"));
                    }
                }
            }
            out.push(format!("intra.{l}.fuse"));
        }
        out.push("direct".to_string());
        for f in 0..self.cross.len() {
            for p in ["query", "key", "value"] {
                out.push(format!("cross.{f}.{p}"));
            }
        }
        out.push("output.weight".to_string());
        out.push("output.bias".to_string());
        out
    }

    pub fn n_parameters(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Euclidean norm of every tensor, for diagnostics.
    pub fn norms(&self) -> Vec<(String, f64)> {
        self.tensor_names()
            .into_iter()
            .zip(self.tensors())
            .map(|(n, t)| (n, t.iter().map(|x| x * x).sum::<f64>().sqrt()))
            .collect()
    }

    fn check_shapes(&self) -> Result<()> {
        let reference = init_params(self.dims, 0)?;
        for ((name, a), b) in self.tensor_names().iter().zip(self.tensors()).zip(reference.tensors()) {
            if a.dim() != b.dim() {
                return Err(Error::shape(format!(
                    "{name} has shape {:?}, expected {:?}",
                    a.dim(),
                    b.dim()
                )));
            }
        }
        if self.layers.len() != self.dims.layers || self.cross.len() != self.dims.heads {
            return Err(Error::shape("parameter layout does not match model dims"));
        }
        Ok(())
    }

    /// JSON checkpoint including dims, seed and variant.
    pub fn write_json<W: Write>(&self, out: W) -> Result<()> {
        serde_json::to_writer(out, self)?;
        Ok(())
    }

    pub fn read_json<R: std::io::Read>(reader: R) -> Result<Self> {
        let params: Self = serde_json::from_reader(reader)?;
        params.dims.validate()?;
        params.check_shapes()?;
        Ok(params)
    }
}

/// `|V|×d` region embedding matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct RegionEmbedding(pub Array2<f64>);

impl RegionEmbedding {
    pub fn matrix(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn n_regions(&self) -> usize {
        self.0.nrows()
    }

    pub fn dim(&self) -> usize {
        self.0.ncols()
    }

    /// CSV with header `region_id,e0,...,e{d-1}`.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        let header: Vec<String> = (0..self.dim()).map(|k| format!("e{k}")).collect();
        writeln!(out, "region_id,{}", header.join(","))?;
        for (i, row) in self.0.rows().into_iter().enumerate() {
            let vals: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{i},{}", vals.join(","))?;
        }
        Ok(())
    }

    pub fn read_csv<R: std::io::Read>(reader: R) -> Result<Self> {
        let mut rdr = csv::Reader::from_reader(reader);
        let width = rdr.headers()?.len();
        if width < 2 {
            return Err(Error::Parse { line: 1, message: "embedding CSV needs region_id and e0..".into() });
        }
        let mut rows: Vec<(usize, Vec<f64>)> = Vec::new();
        for record in rdr.records() {
            let record = record?;
            let line = record.position().map(|p| p.line()).unwrap_or(0);
            let parse_err = |f: &str| Error::Parse { line, message: format!("`{f}` is not a number") };
            let id = record[0].trim().parse::<usize>().map_err(|_| parse_err(&record[0]))?;
            let vals = record
                .iter()
                .skip(1)
                .map(|f| f.trim().parse::<f64>().map_err(|_| parse_err(f)))
                .collect::<Result<Vec<_>>>()?;
            rows.push((id, vals));
        }
        rows.sort_by_key(|r| r.0);
        if rows.iter().enumerate().any(|(k, r)| r.0 != k) {
            return Err(Error::validation("embedding region ids must be dense 0..n"));
        }
        let n = rows.len();
        let flat: Vec<f64> = rows.into_iter().flat_map(|r| r.1).collect();
        let m = Array2::from_shape_vec((n, width - 1), flat).map_err(|e| Error::shape(e.to_string()))?;
        Ok(Self(m))
    }
}

/// Source and target feature matrices of a pattern: `X_s` is the weight
/// matrix itself (row `i` = out-flows of `i`), `X_t = X_sᵀ`.
pub fn pattern_features(p: &MobilityPattern) -> (Array2<f64>, Array2<f64>) {
    (p.weights.clone(), p.weights.t().to_owned())
}

/// Row-stochastic attention over all regions:
/// `softmax_j(⟨h_i W_q, h_j W_k⟩ / √d_head)`.
pub fn intra_attention_scores(
    h: ArrayView2<'_, f64>,
    query: &Array2<f64>,
    key: &Array2<f64>,
) -> Array2<f64> {
    let q = h.dot(query);
    let k = h.dot(key);
    attention_probs(&q, &k)
}

fn attention_probs(q: &Array2<f64>, k: &Array2<f64>) -> Array2<f64> {
    let scale = (q.ncols() as f64).sqrt();
    softmax_rows(&(q.dot(&k.t()) / scale))
}

/// Activations of one attention head, kept for the backward pass.
#[derive(Clone, Debug)]
pub(crate) struct HeadCache {
    pub query: Array2<f64>,
    pub key: Array2<f64>,
    pub value: Array2<f64>,
    pub probs: Array2<f64>,
}

fn head_forward(h: ArrayView2<'_, f64>, head: &HeadProjections) -> (Array2<f64>, HeadCache) {
    let query = h.dot(&head.query);
    let key = h.dot(&head.key);
    let value = h.dot(&head.value);
    let probs = attention_probs(&query, &key);
    let out = probs.dot(&value);
    (out, HeadCache { query, key, value, probs })
}

fn concat_heads(outputs: &[Array2<f64>]) -> Array2<f64> {
    let views: Vec<_> = outputs.iter().map(|o| o.view()).collect();
    concatenate(Axis(1), &views).expect("head outputs share row count")
}

fn multi_head(h: ArrayView2<'_, f64>, heads: &[HeadProjections]) -> (Array2<f64>, Vec<HeadCache>) {
    let (outs, caches): (Vec<_>, Vec<_>) = heads.iter().map(|hd| head_forward(h, hd)).unzip();
    (concat_heads(&outs), caches)
}

/// One stream of one message-passing layer: per head, the attention matrix
/// times the value-projected features; heads concatenated to `|V|×d`.
pub fn intra_layer_forward(h_prev: ArrayView2<'_, f64>, heads: &[HeadProjections]) -> Result<Array2<f64>> {
    for head in heads {
        if head.query.nrows() != h_prev.ncols()
            || head.key.nrows() != h_prev.ncols()
            || head.value.nrows() != h_prev.ncols()
        {
            return Err(Error::shape(format!(
                "layer input has width {}, projections expect {}",
                h_prev.ncols(),
                head.value.nrows()
            )));
        }
    }
    Ok(multi_head(h_prev, heads).0)
}

#[derive(Clone, Debug)]
pub(crate) struct LayerCache {
    pub source_input: Array2<f64>,
    pub target_input: Array2<f64>,
    pub source: Vec<HeadCache>,
    pub target: Vec<HeadCache>,
    /// `[source output | target output]`, `|V|×2d`.
    pub concat: Array2<f64>,
}

#[derive(Clone, Debug)]
pub(crate) enum PatternCache {
    MessagePassing(Vec<LayerCache>),
    /// `[X_s | X_t]`, `|V|×2|V|`.
    Direct(Array2<f64>),
}

fn intra_pattern_cached(p: &MobilityPattern, params: &ModelParams) -> (Array2<f64>, PatternCache) {
    let (xs, xt) = pattern_features(p);
    if !params.variant.message_passing {
        let input = concatenate(Axis(1), &[xs.view(), xt.view()]).expect("same row count");
        let h = input.dot(&params.direct);
        return (h, PatternCache::Direct(input));
    }
    let mut caches = Vec::with_capacity(params.layers.len());
    let (mut source_in, mut target_in) = (xs, xt);
    let mut h = Array2::zeros((0, 0));
    for layer in &params.layers {
        let (s_out, s_cache) = multi_head(source_in.view(), &layer.source);
        let (t_out, t_cache) = multi_head(target_in.view(), &layer.target);
        let concat = concatenate(Axis(1), &[s_out.view(), t_out.view()]).expect("same row count");
        h = concat.dot(&layer.fuse);
        caches.push(LayerCache {
            source_input: source_in,
            target_input: target_in,
            source: s_cache,
            target: t_cache,
            concat,
        });
        source_in = h.clone();
        target_in = h.clone();
    }
    (h, PatternCache::MessagePassing(caches))
}

/// Hidden state `h^k` of one pattern after `L` stacked layers. Layer 1 reads
/// `X_s` and `X_t`; deeper layers feed the previous fused state to both
/// streams.
pub fn intra_pattern_forward(p: &MobilityPattern, params: &ModelParams) -> Result<Array2<f64>> {
    check_pattern(p, &params.dims)?;
    Ok(intra_pattern_cached(p, params).0)
}

fn check_pattern(p: &MobilityPattern, dims: &ModelDims) -> Result<()> {
    if p.n_regions() != dims.n_regions {
        return Err(Error::shape(format!(
            "pattern {} has {} regions, model expects {}",
            p.pattern_id,
            p.n_regions(),
            dims.n_regions
        )));
    }
    Ok(())
}

/// Rows `h^0_i .. h^{N-1}_i` stacked as an `N×d` matrix.
fn region_stack(hidden: &[Array2<f64>], i: usize) -> Array2<f64> {
    let rows: Vec<_> = hidden.iter().map(|h| h.row(i).insert_axis(Axis(0))).collect();
    concatenate(Axis(0), &rows).expect("hidden states share width")
}

fn cross_attention_cached(hidden: &[Array2<f64>], params: &ModelParams) -> (Array2<f64>, Vec<Vec<HeadCache>>) {
    let (n_regions, d) = hidden[0].dim();
    let n_patterns = hidden.len() as f64;
    let mut fused = Array2::zeros((n_regions, d));
    let mut caches = Vec::with_capacity(n_regions);
    for i in 0..n_regions {
        let stack = region_stack(hidden, i);
        let (out, cache) = multi_head(stack.view(), &params.cross);
        fused.row_mut(i).assign(&(out.sum_axis(Axis(0)) / n_patterns));
        caches.push(cache);
    }
    (fused, caches)
}

/// Per-region cross attention over patterns, averaged over the attending
/// pattern. Returns the `|V|×d` fused state.
pub fn inter_pattern_attention(hidden: &[Array2<f64>], params: &ModelParams) -> Result<Array2<f64>> {
    check_hidden(hidden, &params.dims)?;
    Ok(cross_attention_cached(hidden, params).0)
}

/// The `N×N` attention matrices over patterns, indexed `[region][head]`.
pub fn cross_attention_weights(hidden: &[Array2<f64>], params: &ModelParams) -> Result<Vec<Vec<Array2<f64>>>> {
    check_hidden(hidden, &params.dims)?;
    Ok(cross_attention_cached(hidden, params)
        .1
        .into_iter()
        .map(|heads| heads.into_iter().map(|c| c.probs).collect())
        .collect())
}

fn check_hidden(hidden: &[Array2<f64>], dims: &ModelDims) -> Result<()> {
    if hidden.is_empty() {
        return Err(Error::shape("no pattern hidden states"));
    }
    if let Some(h) = hidden.iter().find(|h| h.dim() != (dims.n_regions, dims.hidden)) {
        return Err(Error::shape(format!(
            "hidden state has shape {:?}, expected ({}, {})",
            h.dim(),
            dims.n_regions,
            dims.hidden
        )));
    }
    Ok(())
}

fn mean_hidden(hidden: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = hidden[0].clone();
    for h in &hidden[1..] {
        acc += h;
    }
    acc / hidden.len() as f64
}

/// `Ĥ = (mean_k h^k + fused)·W_out + b`.
pub fn output_embeddings(hidden: &[Array2<f64>], fused: &Array2<f64>, params: &ModelParams) -> Result<RegionEmbedding> {
    check_hidden(hidden, &params.dims)?;
    if fused.dim() != hidden[0].dim() {
        return Err(Error::shape("fused state does not match hidden state shape"));
    }
    let combined = mean_hidden(hidden) + fused;
    Ok(RegionEmbedding(combined.dot(&params.output_weight) + &params.output_bias))
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub embedding: RegionEmbedding,
    /// One `|V|×d` hidden state per pattern.
    pub hidden: Vec<Array2<f64>>,
    pub fused: Array2<f64>,
}

/// Activations recorded by [`forward_cached`], consumed by
/// [`crate::training::backward`]. The default value is empty.
#[derive(Clone, Debug, Default)]
pub struct ForwardCache {
    pub(crate) patterns: Vec<PatternCache>,
    pub(crate) hidden: Vec<Array2<f64>>,
    pub(crate) cross: Vec<Vec<HeadCache>>,
    pub(crate) combined: Option<Array2<f64>>,
    pub(crate) embedding: Option<Array2<f64>>,
}

impl ForwardCache {
    pub fn is_empty(&self) -> bool {
        self.embedding.is_none()
    }
}

fn check_patterns(patterns: &[MobilityPattern], dims: &ModelDims) -> Result<()> {
    if patterns.len() != dims.n_patterns {
        return Err(Error::shape(format!(
            "got {} patterns, model expects {}",
            patterns.len(),
            dims.n_patterns
        )));
    }
    patterns.iter().try_for_each(|p| check_pattern(p, dims))
}

/// Forward pass recording every intermediate needed for gradients.
pub fn forward_cached(patterns: &[MobilityPattern], params: &ModelParams) -> Result<(ForwardOutput, ForwardCache)> {
    check_patterns(patterns, &params.dims)?;
    let (hidden, pattern_caches): (Vec<_>, Vec<_>) =
        patterns.iter().map(|p| intra_pattern_cached(p, params)).unzip();
    let (fused, cross) = if params.variant.cross_attention {
        cross_attention_cached(&hidden, params)
    } else {
        (mean_hidden(&hidden), Vec::new())
    };
    let combined = mean_hidden(&hidden) + &fused;
    let embedding = combined.dot(&params.output_weight) + &params.output_bias;
    let cache = ForwardCache {
        patterns: pattern_caches,
        hidden: hidden.clone(),
        cross,
        combined: Some(combined),
        embedding: Some(embedding.clone()),
    };
    Ok((ForwardOutput { embedding: RegionEmbedding(embedding), hidden, fused }, cache))
}

/// Forward pass without recording activations.
pub fn forward(patterns: &[MobilityPattern], params: &ModelParams) -> Result<ForwardOutput> {
    Ok(forward_cached(patterns, params)?.0)
}

pub(crate) fn head_slice(m: &Array2<f64>, head: usize, head_dim: usize) -> ArrayView2<'_, f64> {
    m.slice(s![.., head * head_dim..(head + 1) * head_dim])
}
