//! Graph convolutional S-learner.
//!
//! Each sample becomes a graph with one node per feature. Node `j` carries
//! `[x_j, w_j]` (value and causal weight, both standardized with training
//! statistics) or just `[x_j]` when weighting is disabled. Layers compute
//! `H ← LeakyReLU(Â H W)` with the fixed normalized adjacency `Â`; the final
//! node embeddings are mean-pooled, the treatment scalar is appended, and a
//! one-hidden-layer readout produces the outcome:
//!
//! `ŷ = vᵀ LeakyReLU(U [pool; t] + b) + s·t + c`.
//!
//! Uplift is `μ̂(x, 1) − μ̂(x, 0)` from two forward passes.
//!
//! All parameters live in one flat vector (see [`Layout`]) so that the
//! optimizer and the finite-difference check work on plain slices. Minibatch
//! gradients are accumulated over fixed chunks of the batch in parallel and the
//! chunk sums are added in order, so results do not depend on the thread count.

use std::path::Path;

use nalgebra::DMatrix;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cate::CausalWeights;
use crate::dataset::Dataset;
use crate::error::{Result, UpliftError};
use crate::rng::SeededRng;
use crate::structure::GcnAdjacency;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GcnConfig {
    pub layers: usize,
    pub hidden: usize,
    pub readout_hidden: usize,
    pub leaky_slope: f64,
    pub lr: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch: usize,
    pub l2: f64,
    pub seed: u64,
}

impl Default for GcnConfig {
    fn default() -> Self {
        Self {
            layers: 2,
            hidden: 16,
            readout_hidden: 16,
            leaky_slope: 0.01,
            lr: 0.01,
            momentum: 0.9,
            epochs: 300,
            batch: 64,
            l2: 1e-4,
            seed: 0,
        }
    }
}

impl GcnConfig {
    pub fn validate(&self) -> Result<()> {
        if self.layers == 0 || self.hidden == 0 || self.readout_hidden == 0 || self.batch == 0 {
            return Err(UpliftError::Config(
                "gcn layers, hidden, readout_hidden and batch must be positive".into(),
            ));
        }
        if !(self.lr > 0.0 && self.lr.is_finite())
            || !(0.0..1.0).contains(&self.momentum)
            || self.l2 < 0.0
        {
            return Err(UpliftError::Config(format!(
                "invalid optimizer settings lr={} momentum={} l2={}",
                self.lr, self.momentum, self.l2
            )));
        }
        Ok(())
    }
}

/// Offsets of every parameter block inside the flat parameter vector.
/// Matrices are row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct Layout {
    /// `(offset, fan_in, fan_out)` of each graph-convolution weight.
    pub conv: Vec<(usize, usize, usize)>,
    /// Readout hidden weight `U`, `readout_hidden × (hidden + 1)`; the last
    /// column multiplies the treatment.
    pub readout_w: usize,
    pub readout_b: usize,
    pub out_w: usize,
    pub t_skip: usize,
    pub out_b: usize,
    pub total: usize,
    pub hidden: usize,
    pub readout_hidden: usize,
}

impl Layout {
    pub fn new(in_dim: usize, cfg: &GcnConfig) -> Self {
        let mut offset = 0;
        let mut conv = Vec::with_capacity(cfg.layers);
        let mut fan_in = in_dim;
        for _ in 0..cfg.layers {
            conv.push((offset, fan_in, cfg.hidden));
            offset += fan_in * cfg.hidden;
            fan_in = cfg.hidden;
        }
        let r = cfg.readout_hidden;
        let readout_w = offset;
        offset += r * (cfg.hidden + 1);
        let readout_b = offset;
        offset += r;
        let out_w = offset;
        offset += r;
        let t_skip = offset;
        let out_b = offset + 1;
        Self {
            conv,
            readout_w,
            readout_b,
            out_w,
            t_skip,
            out_b,
            total: offset + 2,
            hidden: cfg.hidden,
            readout_hidden: r,
        }
    }

    /// Weight decay per parameter: `l2` on weight matrices, zero on biases.
    pub fn decay_mask(&self, l2: f64) -> Vec<f64> {
        let mut mask = vec![l2; self.total];
        mask[self.readout_b..self.readout_b + self.readout_hidden].fill(0.0);
        mask[self.out_b] = 0.0;
        mask
    }

    /// Index of the readout weight connecting the treatment to hidden unit `k`.
    pub fn treatment_weight(&self, k: usize) -> usize {
        self.readout_w + k * (self.hidden + 1) + self.hidden
    }
}

/// Training-split statistics used to standardize node features. Values are
/// standardized per feature; the causal-weight channel shares one mean and
/// standard deviation across all features so that differences in weight
/// magnitude between features survive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub value_mean: Vec<f64>,
    pub value_std: Vec<f64>,
    pub weight_mean: Option<f64>,
    pub weight_std: Option<f64>,
}

fn mean_std(values: impl Iterator<Item = f64> + Clone) -> (f64, f64) {
    let n = values.clone().count() as f64;
    let mean = values.clone().sum::<f64>() / n;
    let var = values.map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let std = var.sqrt();
    (mean, if std > 1e-12 { std } else { 1.0 })
}

impl Standardizer {
    pub fn fit(x: &DMatrix<f64>, weights: Option<&DMatrix<f64>>) -> Self {
        let (value_mean, value_std) = x.column_iter().map(|c| mean_std(c.iter().copied())).unzip();
        let (weight_mean, weight_std) = match weights {
            Some(w) => {
                let (m, s) = mean_std(w.iter().copied());
                (Some(m), Some(s))
            }
            None => (None, None),
        };
        Self {
            value_mean,
            value_std,
            weight_mean,
            weight_std,
        }
    }

    pub fn uses_weights(&self) -> bool {
        self.weight_mean.is_some()
    }

    pub fn in_dim(&self) -> usize {
        if self.uses_weights() {
            2
        } else {
            1
        }
    }
}

/// Standardized per-sample node features, `n × d × m`, row-major per sample.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeFeatureTensor {
    pub n: usize,
    pub d: usize,
    pub m: usize,
    pub data: Vec<f64>,
}

impl NodeFeatureTensor {
    pub fn build(
        x: &DMatrix<f64>,
        weights: Option<&DMatrix<f64>>,
        stats: &Standardizer,
    ) -> Result<Self> {
        let (n, d) = x.shape();
        if stats.value_mean.len() != d {
            return Err(UpliftError::shape(
                format!("{} features", stats.value_mean.len()),
                d,
            ));
        }
        let m = stats.in_dim();
        match (weights, stats.uses_weights()) {
            (Some(w), true) if w.shape() == (n, d) => {}
            (None, false) => {}
            (Some(w), true) => {
                return Err(UpliftError::shape(
                    format!("{n}x{d} causal weights"),
                    format!("{}x{}", w.nrows(), w.ncols()),
                ))
            }
            (Some(_), false) => {
                return Err(UpliftError::shape(
                    "no causal weights (plain model)",
                    "causal weights",
                ))
            }
            (None, true) => return Err(UpliftError::shape("causal weights", "none")),
        }
        let mut data = vec![0.0; n * d * m];
        for i in 0..n {
            for j in 0..d {
                let base = (i * d + j) * m;
                data[base] = (x[(i, j)] - stats.value_mean[j]) / stats.value_std[j];
                if let (Some(w), Some(mu), Some(sd)) =
                    (weights, stats.weight_mean, stats.weight_std)
                {
                    data[base + 1] = (w[(i, j)] - mu) / sd;
                }
            }
        }
        Ok(Self { n, d, m, data })
    }

    pub fn sample(&self, i: usize) -> &[f64] {
        let size = self.d * self.m;
        &self.data[i * size..(i + 1) * size]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GcnModel {
    pub config: GcnConfig,
    pub n_nodes: usize,
    pub in_dim: usize,
    pub layout: Layout,
    pub params: Vec<f64>,
    pub a_norm: GcnAdjacency,
    pub standardizer: Option<Standardizer>,
    /// Mean training loss per epoch.
    pub train_loss: Vec<f64>,
}

/// Activations retained by [`GcnModel::forward`] for backpropagation.
#[derive(Debug, Clone, Default)]
pub struct ForwardCache {
    input: Vec<f64>,
    /// Activations of the last layer computed, `LeakyReLU(Â H_l W_l)`.
    act: Vec<f64>,
    /// `Â H_l` per layer, `d × fan_in`.
    propagated: Vec<Vec<f64>>,
    /// `Â H_l W_l` per layer, `d × hidden`.
    pre_activation: Vec<Vec<f64>>,
    readout_in: Vec<f64>,
    readout_pre: Vec<f64>,
    readout_act: Vec<f64>,
    pub y_hat: f64,
}

/// Non-zero entries of `Â` by row and by column, so propagation touches
/// only the edges that exist.
#[derive(Debug, Clone)]
struct Propagation {
    rows: Vec<Vec<(usize, f64)>>,
    cols: Vec<Vec<(usize, f64)>>,
}

impl Propagation {
    fn new(a: &GcnAdjacency) -> Self {
        let a = &a.a_norm;
        let d = a.nrows();
        let nonzero = |f: &dyn Fn(usize) -> f64| -> Vec<(usize, f64)> {
            (0..d)
                .filter_map(|u| Some((u, f(u))).filter(|(_, c)| *c != 0.0))
                .collect()
        };
        Self {
            rows: (0..d).map(|v| nonzero(&|u| a[(v, u)])).collect(),
            cols: (0..d).map(|v| nonzero(&|u| a[(u, v)])).collect(),
        }
    }

    /// `out = Â h` for a row-major `d × width` block.
    fn apply(&self, h: &[f64], width: usize, out: &mut [f64]) {
        Self::mul(&self.rows, h, width, out);
    }

    /// `out = Âᵀ h`.
    fn apply_transpose(&self, h: &[f64], width: usize, out: &mut [f64]) {
        Self::mul(&self.cols, h, width, out);
    }

    fn mul(entries: &[Vec<(usize, f64)>], h: &[f64], width: usize, out: &mut [f64]) {
        out.fill(0.0);
        for (v, row) in entries.iter().enumerate() {
            let dst = &mut out[v * width..(v + 1) * width];
            for &(u, coef) in row {
                for (o, x) in dst.iter_mut().zip(&h[u * width..(u + 1) * width]) {
                    *o += coef * x;
                }
            }
        }
    }
}

/// Reusable buffers of the backward pass.
#[derive(Debug, Default)]
struct BackwardScratch {
    d_pool: Vec<f64>,
    d_h: Vec<f64>,
    d_z: Vec<f64>,
    d_ah: Vec<f64>,
}

/// Samples per gradient chunk. Chunks are fixed by position in the batch,
/// so the summation order is the same for any thread count.
const GRAD_CHUNK: usize = 16;

impl ForwardCache {
    /// Final node embeddings `H^L`, `d × hidden`.
    pub fn embeddings(&self, slope: f64) -> Vec<f64> {
        self.pre_activation
            .last()
            .map(|z| z.iter().map(|&v| leaky(v, slope)).collect())
            .unwrap_or_else(|| self.input.clone())
    }
}

#[inline]
fn leaky(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        v
    } else {
        slope * v
    }
}

#[inline]
fn leaky_grad(v: f64, slope: f64) -> f64 {
    if v > 0.0 {
        1.0
    } else {
        slope
    }
}

impl GcnModel {
    /// Fresh model: Glorot-uniform weights `±sqrt(6 / (fan_in + fan_out))`
    /// drawn from `config.seed`, zero biases and treatment skip.
    pub fn init(config: &GcnConfig, a_norm: GcnAdjacency, in_dim: usize) -> Result<Self> {
        config.validate()?;
        let d = a_norm.n_nodes();
        if d == 0 || in_dim == 0 {
            return Err(UpliftError::Config(
                "gcn needs at least one node and one input channel".into(),
            ));
        }
        let layout = Layout::new(in_dim, config);
        let mut params = vec![0.0; layout.total];
        let mut rng = SeededRng::new(config.seed);
        let mut glorot = |offset: usize, fan_in: usize, fan_out: usize, params: &mut [f64]| {
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            for p in &mut params[offset..offset + fan_in * fan_out] {
                *p = rng.uniform_range(-limit, limit);
            }
        };
        for &(offset, fan_in, fan_out) in &layout.conv {
            glorot(offset, fan_in, fan_out, &mut params);
        }
        glorot(
            layout.readout_w,
            config.hidden + 1,
            config.readout_hidden,
            &mut params,
        );
        glorot(layout.out_w, config.readout_hidden, 1, &mut params);
        Ok(Self {
            config: config.clone(),
            n_nodes: d,
            in_dim,
            layout,
            params,
            a_norm,
            standardizer: None,
            train_loss: Vec::new(),
        })
    }

    pub fn uses_weights(&self) -> bool {
        self.in_dim == 2
    }

    fn check_input(&self, features: &[f64]) -> Result<()> {
        if features.len() != self.n_nodes * self.in_dim {
            return Err(UpliftError::shape(
                format!("{}x{} node features", self.n_nodes, self.in_dim),
                format!("{} values", features.len()),
            ));
        }
        Ok(())
    }

    /// Forward pass on one sample; `features` is `d × in_dim` row-major.
    pub fn forward(&self, features: &[f64], t: f64) -> Result<ForwardCache> {
        self.check_input(features)?;
        Ok(self.forward_unchecked(features, t))
    }

    fn forward_unchecked(&self, features: &[f64], t: f64) -> ForwardCache {
        let mut cache = ForwardCache::default();
        self.forward_into(&Propagation::new(&self.a_norm), features, t, &mut cache);
        cache
    }

    /// Forward pass reusing the buffers of `c`.
    fn forward_into(&self, prop: &Propagation, features: &[f64], t: f64, c: &mut ForwardCache) {
        let d = self.n_nodes;
        let slope = self.config.leaky_slope;
        let p = &self.params;
        let layers = self.layout.conv.len();
        c.input.clear();
        c.input.extend_from_slice(features);
        c.propagated.resize_with(layers, Vec::new);
        c.pre_activation.resize_with(layers, Vec::new);
        for (l, &(offset, fan_in, fan_out)) in self.layout.conv.iter().enumerate() {
            let mut ah = std::mem::take(&mut c.propagated[l]);
            ah.resize(d * fan_in, 0.0);
            prop.apply(if l == 0 { &c.input } else { &c.act }, fan_in, &mut ah);
            let w = &p[offset..offset + fan_in * fan_out];
            let mut z = std::mem::take(&mut c.pre_activation[l]);
            z.clear();
            z.resize(d * fan_out, 0.0);
            for v in 0..d {
                let zrow = &mut z[v * fan_out..(v + 1) * fan_out];
                for (cidx, &val) in ah[v * fan_in..(v + 1) * fan_in].iter().enumerate() {
                    if val == 0.0 {
                        continue;
                    }
                    for (zk, wk) in zrow
                        .iter_mut()
                        .zip(&w[cidx * fan_out..(cidx + 1) * fan_out])
                    {
                        *zk += val * wk;
                    }
                }
            }
            c.act.clear();
            c.act.extend(z.iter().map(|&v| leaky(v, slope)));
            c.propagated[l] = ah;
            c.pre_activation[l] = z;
        }
        let hidden = self.layout.hidden;
        c.readout_in.clear();
        c.readout_in.resize(hidden + 1, 0.0);
        for v in 0..d {
            for (acc, h) in c.readout_in[..hidden]
                .iter_mut()
                .zip(&c.act[v * hidden..(v + 1) * hidden])
            {
                *acc += h;
            }
        }
        for val in c.readout_in.iter_mut().take(hidden) {
            *val /= d as f64;
        }
        c.readout_in[hidden] = t;
        let r = self.layout.readout_hidden;
        let uw = &p[self.layout.readout_w..self.layout.readout_w + r * (hidden + 1)];
        let ub = &p[self.layout.readout_b..self.layout.readout_b + r];
        c.readout_pre.clear();
        c.readout_pre.extend((0..r).map(|k| {
            ub[k]
                + uw[k * (hidden + 1)..(k + 1) * (hidden + 1)]
                    .iter()
                    .zip(&c.readout_in)
                    .map(|(a, b)| a * b)
                    .sum::<f64>()
        }));
        c.readout_act.clear();
        c.readout_act
            .extend(c.readout_pre.iter().map(|&v| leaky(v, slope)));
        let ow = &p[self.layout.out_w..self.layout.out_w + r];
        c.y_hat = ow
            .iter()
            .zip(&c.readout_act)
            .map(|(a, b)| a * b)
            .sum::<f64>()
            + p[self.layout.t_skip] * t
            + p[self.layout.out_b];
    }

    /// Gradient of `ŷ` scaled by `dy` (the upstream derivative) with
    /// respect to every parameter, in flat layout order.
    pub fn backward(&self, cache: &ForwardCache, dy: f64) -> Vec<f64> {
        let mut g = vec![0.0; self.layout.total];
        self.backward_into(
            &Propagation::new(&self.a_norm),
            cache,
            dy,
            &mut g,
            &mut BackwardScratch::default(),
        );
        g
    }

    /// Adds the gradient of `dy · ŷ` to `g`.
    fn backward_into(
        &self,
        prop: &Propagation,
        cache: &ForwardCache,
        dy: f64,
        g: &mut [f64],
        s: &mut BackwardScratch,
    ) {
        let d = self.n_nodes;
        let slope = self.config.leaky_slope;
        let lay = &self.layout;
        let p = &self.params;
        let hidden = lay.hidden;
        let r = lay.readout_hidden;
        let t = cache.readout_in[hidden];

        g[lay.out_b] += dy;
        g[lay.t_skip] += dy * t;
        s.d_pool.clear();
        s.d_pool.resize(hidden, 0.0);
        for k in 0..r {
            g[lay.out_w + k] += dy * cache.readout_act[k];
            let d_pre = dy * p[lay.out_w + k] * leaky_grad(cache.readout_pre[k], slope);
            g[lay.readout_b + k] += d_pre;
            let row = lay.readout_w + k * (hidden + 1);
            for (gc, x) in g[row..=row + hidden].iter_mut().zip(&cache.readout_in) {
                *gc += d_pre * x;
            }
            for (dp, w) in s.d_pool.iter_mut().zip(&p[row..row + hidden]) {
                *dp += w * d_pre;
            }
        }
        // mean pooling spreads the gradient evenly over nodes
        s.d_h.clear();
        s.d_h
            .extend((0..d * hidden).map(|idx| s.d_pool[idx % hidden] / d as f64));
        for l in (0..lay.conv.len()).rev() {
            let (offset, fan_in, fan_out) = lay.conv[l];
            s.d_z.clear();
            s.d_z.extend(
                s.d_h
                    .iter()
                    .zip(&cache.pre_activation[l])
                    .map(|(gh, &zv)| gh * leaky_grad(zv, slope)),
            );
            let ah = &cache.propagated[l];
            for v in 0..d {
                let dz = &s.d_z[v * fan_out..(v + 1) * fan_out];
                for (cidx, &val) in ah[v * fan_in..(v + 1) * fan_in].iter().enumerate() {
                    if val == 0.0 {
                        continue;
                    }
                    let grow = offset + cidx * fan_out;
                    for (gk, dzk) in g[grow..grow + fan_out].iter_mut().zip(dz) {
                        *gk += val * dzk;
                    }
                }
            }
            if l == 0 {
                break;
            }
            let w = &p[offset..offset + fan_in * fan_out];
            s.d_ah.clear();
            s.d_ah.resize(d * fan_in, 0.0);
            for v in 0..d {
                let dz = &s.d_z[v * fan_out..(v + 1) * fan_out];
                for (cidx, out) in s.d_ah[v * fan_in..(v + 1) * fan_in].iter_mut().enumerate() {
                    *out = dz
                        .iter()
                        .zip(&w[cidx * fan_out..(cidx + 1) * fan_out])
                        .map(|(a, b)| a * b)
                        .sum();
                }
            }
            s.d_h.resize(d * fan_in, 0.0);
            prop.apply_transpose(&s.d_ah, fan_in, &mut s.d_h);
        }
    }

    /// Squared-error loss and its parameter gradient for one sample.
    pub fn loss_and_grad(&self, features: &[f64], t: f64, target: f64) -> Result<(f64, Vec<f64>)> {
        let cache = self.forward(features, t)?;
        let err = cache.y_hat - target;
        Ok((err * err, self.backward(&cache, 2.0 * err)))
    }

    pub fn predict_one(&self, features: &[f64], t: f64) -> Result<f64> {
        Ok(self.forward(features, t)?.y_hat)
    }

    pub fn node_features(
        &self,
        x: &DMatrix<f64>,
        weights: Option<&CausalWeights>,
    ) -> Result<NodeFeatureTensor> {
        let stats = self.standardizer.as_ref().ok_or_else(|| {
            UpliftError::Contract("model has no standardization statistics; fit it first".into())
        })?;
        NodeFeatureTensor::build(x, weights.map(|w| &w.w), stats)
    }
}

pub fn gcn_forward(
    model: &GcnModel,
    node_features: &DMatrix<f64>,
    t: f64,
) -> Result<(f64, ForwardCache)> {
    if node_features.shape() != (model.n_nodes, model.in_dim) {
        return Err(UpliftError::shape(
            format!("{}x{} node features", model.n_nodes, model.in_dim),
            format!("{}x{}", node_features.nrows(), node_features.ncols()),
        ));
    }
    let flat: Vec<f64> = node_features.transpose().as_slice().to_vec();
    let cache = model.forward(&flat, t)?;
    Ok((cache.y_hat, cache))
}

pub fn fit(
    train: &Dataset,
    weights: Option<&CausalWeights>,
    a: &GcnAdjacency,
    cfg: &GcnConfig,
) -> Result<GcnModel> {
    cfg.validate()?;
    let n = train.n();
    if a.n_nodes() != train.d() {
        return Err(UpliftError::shape(
            format!("{}x{} adjacency", train.d(), train.d()),
            a.n_nodes(),
        ));
    }
    if let Some(w) = weights {
        if w.w.shape() != (n, train.d()) {
            return Err(UpliftError::shape(
                format!("{}x{} causal weights", n, train.d()),
                format!("{}x{}", w.w.nrows(), w.w.ncols()),
            ));
        }
    }
    let stats = Standardizer::fit(&train.x, weights.map(|w| &w.w));
    let tensor = NodeFeatureTensor::build(&train.x, weights.map(|w| &w.w), &stats)?;
    let mut model = GcnModel::init(cfg, a.clone(), stats.in_dim())?;
    model.standardizer = Some(stats);
    // start the output bias at the target mean
    let out_b = model.layout.out_b;
    model.params[out_b] = train.y.iter().sum::<f64>() / n as f64;

    let mut rng = SeededRng::new(cfg.seed ^ 0x005E_ED0F_0DE5);
    let mut velocity = vec![0.0; model.layout.total];
    let decay = model.layout.decay_mask(cfg.l2);
    let mut order: Vec<usize> = (0..n).collect();
    let prop = Propagation::new(&model.a_norm);
    let total = model.layout.total;
    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (b, batch) in order.chunks(cfg.batch).enumerate() {
            let chunks: Vec<(f64, Vec<f64>)> = batch
                .par_chunks(GRAD_CHUNK)
                .map(|chunk| {
                    let mut grad = vec![0.0; total];
                    let mut loss = 0.0;
                    let mut cache = ForwardCache::default();
                    let mut scratch = BackwardScratch::default();
                    for &i in chunk {
                        model.forward_into(
                            &prop,
                            tensor.sample(i),
                            f64::from(train.t[i]),
                            &mut cache,
                        );
                        let err = cache.y_hat - train.y[i];
                        loss += err * err;
                        model.backward_into(&prop, &cache, 2.0 * err, &mut grad, &mut scratch);
                    }
                    (loss, grad)
                })
                .collect();
            let mut grad = vec![0.0; total];
            let mut batch_loss = 0.0;
            for (loss, g) in &chunks {
                batch_loss += loss;
                for (acc, v) in grad.iter_mut().zip(g) {
                    *acc += v;
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let mut norm_sq = 0.0;
            for (k, (gk, pk)) in grad.iter_mut().zip(&model.params).enumerate() {
                *gk = *gk * scale + decay[k] * pk;
                norm_sq += *gk * *gk;
            }
            if !batch_loss.is_finite() || !norm_sq.is_finite() {
                return Err(UpliftError::Numeric(format!(
                    "non-finite training loss at epoch {epoch}, batch {b} (loss {batch_loss}, grad-norm {})",
                    norm_sq.sqrt()
                )));
            }
            for ((p, v), g) in model.params.iter_mut().zip(velocity.iter_mut()).zip(&grad) {
                *v = cfg.momentum * *v + g;
                *p -= cfg.lr * *v;
            }
            epoch_loss += batch_loss;
        }
        model.train_loss.push(epoch_loss / n as f64);
    }
    Ok(model)
}

/// Central finite differences (step `1e-5`) against the analytic gradient of
/// the squared error on one sample. Returns the largest relative error with
/// denominator `max(|analytic|, |numeric|, 1e-8)`.
pub fn gradient_check(model: &GcnModel, features: &[f64], t: f64, target: f64) -> Result<f64> {
    const STEP: f64 = 1e-5;
    let (_, analytic) = model.loss_and_grad(features, t, target)?;
    let mut probe = model.clone();
    let mut worst: f64 = 0.0;
    for (k, &grad) in analytic.iter().enumerate() {
        let orig = probe.params[k];
        probe.params[k] = orig + STEP;
        let up = (probe.predict_one(features, t)? - target).powi(2);
        probe.params[k] = orig - STEP;
        let down = (probe.predict_one(features, t)? - target).powi(2);
        probe.params[k] = orig;
        let numeric = (up - down) / (2.0 * STEP);
        let denom = grad.abs().max(numeric.abs()).max(1e-8);
        worst = worst.max((grad - numeric).abs() / denom);
    }
    Ok(worst)
}

#[derive(Debug, Clone, PartialEq)]
pub struct UpliftScores {
    pub mu0: Vec<f64>,
    pub mu1: Vec<f64>,
    pub tau_hat: Vec<f64>,
    /// `(row, y − μ̂₀)` for treated rows.
    pub d_tilde_1: Vec<(usize, f64)>,
    /// `(row, μ̂₁ − y)` for control rows.
    pub d_tilde_0: Vec<(usize, f64)>,
}

impl UpliftScores {
    /// Prediction of the observed outcome: `μ̂₁` for treated rows, `μ̂₀` otherwise.
    pub fn observed_prediction(&self, t: &[u8]) -> Vec<f64> {
        t.iter()
            .enumerate()
            .map(|(i, &w)| if w == 1 { self.mu1[i] } else { self.mu0[i] })
            .collect()
    }

    /// Writes `id,mu0,mu1,tau_hat`.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["id", "mu0", "mu1", "tau_hat"])?;
        for i in 0..self.tau_hat.len() {
            w.write_record([
                i.to_string(),
                self.mu0[i].to_string(),
                self.mu1[i].to_string(),
                self.tau_hat[i].to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    /// Reads `id,mu0,mu1,tau_hat`; the imputed-effect diagnostics are
    /// rebuilt when the outcomes are supplied.
    pub fn read_csv(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(UpliftError::MissingArtifact(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let header = r.headers()?.clone();
        let expected = ["id", "mu0", "mu1", "tau_hat"];
        if header.iter().collect::<Vec<_>>() != expected {
            return Err(UpliftError::Schema(format!(
                "prediction file header must be `id,mu0,mu1,tau_hat`, got `{}`",
                header.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut out = UpliftScores {
            mu0: vec![],
            mu1: vec![],
            tau_hat: vec![],
            d_tilde_1: vec![],
            d_tilde_0: vec![],
        };
        for (k, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |c: usize| -> Result<f64> {
                rec[c].trim().parse().map_err(|_| UpliftError::DataRow {
                    row: k + 1,
                    message: format!("cannot parse `{}` in column {}", &rec[c], expected[c]),
                })
            };
            out.mu0.push(num(1)?);
            out.mu1.push(num(2)?);
            out.tau_hat.push(num(3)?);
        }
        Ok(out)
    }

    pub fn with_imputations(mut self, t: &[u8], y: &[f64]) -> Self {
        self.d_tilde_1.clear();
        self.d_tilde_0.clear();
        for i in 0..t.len() {
            if t[i] == 1 {
                self.d_tilde_1.push((i, y[i] - self.mu0[i]));
            } else {
                self.d_tilde_0.push((i, self.mu1[i] - y[i]));
            }
        }
        self
    }
}

pub fn predict_uplift(
    model: &GcnModel,
    ds: &Dataset,
    weights: Option<&CausalWeights>,
) -> Result<UpliftScores> {
    if ds.d() != model.n_nodes {
        return Err(UpliftError::shape(
            format!("{} features", model.n_nodes),
            ds.d(),
        ));
    }
    let tensor = model.node_features(&ds.x, weights)?;
    let prop = Propagation::new(&model.a_norm);
    let (mu0, mu1): (Vec<f64>, Vec<f64>) = (0..ds.n())
        .into_par_iter()
        .map_init(ForwardCache::default, |cache, i| {
            let f = tensor.sample(i);
            model.forward_into(&prop, f, 0.0, cache);
            let y0 = cache.y_hat;
            model.forward_into(&prop, f, 1.0, cache);
            (y0, cache.y_hat)
        })
        .unzip();
    let tau_hat = mu1.iter().zip(&mu0).map(|(a, b)| a - b).collect();
    Ok(UpliftScores {
        mu0,
        mu1,
        tau_hat,
        d_tilde_1: vec![],
        d_tilde_0: vec![],
    }
    .with_imputations(&ds.t, &ds.y))
}

/// On-disk model format.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnModelFile {
    pub dims: GcnDims,
    pub conv_weights: Vec<Vec<Vec<f64>>>,
    pub readout_w: Vec<Vec<f64>>,
    pub readout_b: Vec<f64>,
    pub out_w: Vec<f64>,
    pub t_skip: f64,
    pub out_b: f64,
    pub a_norm: Vec<Vec<f64>>,
    pub standardizer: Option<Standardizer>,
    pub hyperparameters: GcnConfig,
    pub train_loss: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnDims {
    pub n_nodes: usize,
    pub in_dim: usize,
    pub hidden: usize,
    pub layers: usize,
    pub readout_hidden: usize,
}

fn unflatten(block: &[f64], rows: usize, cols: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|r| block[r * cols..(r + 1) * cols].to_vec())
        .collect()
}

impl GcnModel {
    pub fn to_file(&self) -> GcnModelFile {
        let l = &self.layout;
        let p = &self.params;
        let r = l.readout_hidden;
        GcnModelFile {
            dims: GcnDims {
                n_nodes: self.n_nodes,
                in_dim: self.in_dim,
                hidden: l.hidden,
                layers: l.conv.len(),
                readout_hidden: r,
            },
            conv_weights: l
                .conv
                .iter()
                .map(|&(o, fi, fo)| unflatten(&p[o..o + fi * fo], fi, fo))
                .collect(),
            readout_w: unflatten(
                &p[l.readout_w..l.readout_w + r * (l.hidden + 1)],
                r,
                l.hidden + 1,
            ),
            readout_b: p[l.readout_b..l.readout_b + r].to_vec(),
            out_w: p[l.out_w..l.out_w + r].to_vec(),
            t_skip: p[l.t_skip],
            out_b: p[l.out_b],
            a_norm: self.a_norm.rows(),
            standardizer: self.standardizer.clone(),
            hyperparameters: self.config.clone(),
            train_loss: self.train_loss.clone(),
        }
    }

    pub fn from_file(f: GcnModelFile) -> Result<Self> {
        let mut cfg = f.hyperparameters.clone();
        cfg.layers = f.dims.layers;
        cfg.hidden = f.dims.hidden;
        cfg.readout_hidden = f.dims.readout_hidden;
        let a_norm = GcnAdjacency::from_rows(&f.a_norm)?;
        if a_norm.n_nodes() != f.dims.n_nodes {
            return Err(UpliftError::Data(
                "model adjacency does not match n_nodes".into(),
            ));
        }
        let layout = Layout::new(f.dims.in_dim, &cfg);
        let mut params = Vec::with_capacity(layout.total);
        if f.conv_weights.len() != layout.conv.len() {
            return Err(UpliftError::Data("model layer count mismatch".into()));
        }
        for (w, &(_, fi, fo)) in f.conv_weights.iter().zip(&layout.conv) {
            if w.len() != fi || w.iter().any(|r| r.len() != fo) {
                return Err(UpliftError::Data("model layer shape mismatch".into()));
            }
            params.extend(w.iter().flatten());
        }
        params.extend(f.readout_w.iter().flatten());
        params.extend(&f.readout_b);
        params.extend(&f.out_w);
        params.push(f.t_skip);
        params.push(f.out_b);
        if params.len() != layout.total {
            return Err(UpliftError::Data("model parameter count mismatch".into()));
        }
        Ok(Self {
            config: cfg,
            n_nodes: f.dims.n_nodes,
            in_dim: f.dims.in_dim,
            layout,
            params,
            a_norm,
            standardizer: f.standardizer,
            train_loss: f.train_loss,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(&self.to_file())?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        Self::from_file(serde_json::from_str(s)?)
    }
}
