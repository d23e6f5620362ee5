//! A small pre-norm attention stack with fixed random weights and per-layer
//! rotary scaling, used for probe experiments and the toy retrieval oracle.

mod probes;
mod retrieval;

use ndarray::{s, Array1, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curve::ScaleSchedule;
use crate::rope::{entropy, frequencies, rotate_in_place};

pub use probes::{
    cosine, first_block_ablation, middle_last_sweep, probe_first_block_similarity,
    probe_middle_vs_last, spearman, AblationComparison, SimilaritySeries,
};
pub use retrieval::{
    calibrate_delta, retrieval_accuracy, retrieval_logits, RetrievalLogits, RetrievalTask, TrialLogits,
    DEFAULT_TRIALS,
};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ToyError {
    #[error("invalid toy model configuration: {0}")]
    Config(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid retrieval task: {0}")]
    Task(String),
    #[error("probe failed: {0}")]
    Probe(String),
    #[error("calibration failed: {0}")]
    Calibration(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToyModelConfig {
    pub n_layers: usize,
    pub n_heads: usize,
    pub head_dim: usize,
    pub seq_len: usize,
    pub base: f64,
    pub weight_seed: u64,
    pub causal: bool,
    /// Multiplier on the tied query/key projections; sets attention sharpness.
    pub qk_gain: f64,
    /// Hidden width of the MLP as a multiple of the model width.
    pub mlp_ratio: usize,
}

impl Default for ToyModelConfig {
    fn default() -> Self {
        Self {
            n_layers: 8,
            n_heads: 4,
            head_dim: 32,
            seq_len: 512,
            base: 10_000.0,
            weight_seed: 0,
            causal: true,
            qk_gain: 1.0,
            mlp_ratio: 2,
        }
    }
}

impl ToyModelConfig {
    pub fn d_model(&self) -> usize {
        self.n_heads * self.head_dim
    }

    pub fn validate(&self) -> Result<(), ToyError> {
        let fail = |m: String| Err(ToyError::Config(m));
        if self.n_layers == 0 || self.n_heads == 0 || self.seq_len == 0 || self.mlp_ratio == 0 {
            return fail("all counts must be positive".into());
        }
        if self.head_dim < 2 || !self.head_dim.is_multiple_of(2) {
            return fail(format!("head_dim must be even and >= 2, got {}", self.head_dim));
        }
        if !(self.base.is_finite() && self.base > 1.0) {
            return fail(format!("base must be > 1, got {}", self.base));
        }
        if !(self.qk_gain.is_finite() && self.qk_gain > 0.0) {
            return fail(format!("qk_gain must be > 0, got {}", self.qk_gain));
        }
        Ok(())
    }
}

/// Positional treatment of one layer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LayerRope {
    Scaled(f64),
    Disabled,
}

/// Which attention maps a forward pass keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Capture {
    #[default]
    None,
    /// Final row of every map.
    LastRow,
    Full,
}

#[derive(Debug, Clone, Default)]
pub struct ForwardOptions {
    pub capture: Capture,
    /// Compute the mean row entropy of every head.
    pub entropy: bool,
}

#[derive(Debug, Clone)]
pub struct ForwardOutput {
    /// Residual stream after each layer, `seq × d_model`.
    pub hidden: Vec<Array2<f64>>,
    /// `[layer][head]`, shaped by the capture mode; empty for `Capture::None`.
    pub attention: Vec<Vec<Array2<f64>>>,
    /// Pre-softmax scores of the final query in the last layer, per head.
    pub last_logits: Vec<Vec<f64>>,
    /// `[layer][head]` mean entropy over rows, when requested.
    pub row_entropy: Vec<Vec<f64>>,
}

impl ForwardOutput {
    /// Per-layer mean of `row_entropy` over heads.
    pub fn entropy_profile(&self) -> Vec<f64> {
        self.row_entropy
            .iter()
            .map(|heads| heads.iter().sum::<f64>() / heads.len() as f64)
            .collect()
    }
}

struct LayerWeights {
    wq: Array2<f64>,
    wv: Array2<f64>,
    wo: Array2<f64>,
    w1: Array2<f64>,
    w2: Array2<f64>,
}

/// Model with weights drawn once from `weight_seed`.
pub struct ToyModel {
    config: ToyModelConfig,
    layers: Vec<LayerWeights>,
    thetas: Vec<f64>,
}

fn gaussian(rows: usize, cols: usize, std: f64, rng: &mut ChaCha8Rng) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || {
        let z: f64 = StandardNormal.sample(rng);
        z * std
    })
}

fn rms_norm(x: &Array2<f64>) -> Array2<f64> {
    let mut out = x.clone();
    for mut row in out.rows_mut() {
        let ms = row.iter().map(|v| v * v).sum::<f64>() / row.len() as f64;
        let inv = 1.0 / (ms + 1e-6).sqrt();
        row.mapv_inplace(|v| v * inv);
    }
    out
}

fn gelu(x: f64) -> f64 {
    0.5 * x * (1.0 + (0.797_884_560_802_865_4 * (x + 0.044715 * x * x * x)).tanh())
}

impl ToyModel {
    pub fn new(config: ToyModelConfig) -> Result<Self, ToyError> {
        config.validate()?;
        let d = config.d_model();
        let hidden = d * config.mlp_ratio;
        let mut rng = ChaCha8Rng::seed_from_u64(config.weight_seed);
        let inv = |n: usize| 1.0 / (n as f64).sqrt();
        let layers = (0..config.n_layers)
            .map(|_| LayerWeights {
                wq: gaussian(d, d, config.qk_gain * inv(d), &mut rng),
                wv: gaussian(d, d, inv(d), &mut rng),
                wo: gaussian(d, d, inv(d), &mut rng),
                w1: gaussian(d, hidden, inv(d), &mut rng),
                w2: gaussian(hidden, d, inv(hidden), &mut rng),
            })
            .collect();
        let thetas = frequencies(config.head_dim, config.base);
        Ok(Self {
            config,
            layers,
            thetas,
        })
    }

    pub fn config(&self) -> &ToyModelConfig {
        &self.config
    }

    /// Per-layer rotary treatment for a schedule; layers outside it run at scale 1.
    pub fn rope_plan(&self, schedule: &ScaleSchedule) -> Result<Vec<LayerRope>, ToyError> {
        let end = schedule.first_scaled_layer() + schedule.len();
        if end > self.config.n_layers {
            return Err(ToyError::Dimension(format!(
                "schedule covers layers up to {end} but the model has {}",
                self.config.n_layers
            )));
        }
        Ok((0..self.config.n_layers)
            .map(|k| LayerRope::Scaled(schedule.scale_for_layer(k)))
            .collect())
    }

    pub fn forward(
        &self,
        tokens: &Array2<f64>,
        schedule: &ScaleSchedule,
        options: &ForwardOptions,
    ) -> Result<ForwardOutput, ToyError> {
        let plan = self.rope_plan(schedule)?;
        self.forward_with(tokens, &plan, options)
    }

    pub fn forward_with(
        &self,
        tokens: &Array2<f64>,
        plan: &[LayerRope],
        options: &ForwardOptions,
    ) -> Result<ForwardOutput, ToyError> {
        let cfg = &self.config;
        let (seq, width) = tokens.dim();
        if width != cfg.d_model() {
            return Err(ToyError::Dimension(format!(
                "token width {width} != d_model {}",
                cfg.d_model()
            )));
        }
        if seq == 0 || seq > cfg.seq_len {
            return Err(ToyError::Dimension(format!(
                "token count {seq} outside 1..={}",
                cfg.seq_len
            )));
        }
        if plan.len() != cfg.n_layers {
            return Err(ToyError::Dimension(format!(
                "rope plan has {} layers, model has {}",
                plan.len(),
                cfg.n_layers
            )));
        }
        for rope in plan {
            if let LayerRope::Scaled(s) = rope {
                if !(s.is_finite() && *s >= 1.0) {
                    return Err(ToyError::Config(format!("layer scale must be >= 1, got {s}")));
                }
            }
        }

        let mut x = tokens.clone();
        let mut out = ForwardOutput {
            hidden: Vec::with_capacity(cfg.n_layers),
            attention: Vec::new(),
            last_logits: Vec::new(),
            row_entropy: Vec::new(),
        };
        let hd = cfg.head_dim;
        let inv_sqrt = 1.0 / (hd as f64).sqrt();
        for (li, (layer, rope)) in self.layers.iter().zip(plan).enumerate() {
            let is_last = li + 1 == cfg.n_layers;
            let h = rms_norm(&x);
            let mut q = h.dot(&layer.wq);
            let v = h.dot(&layer.wv);
            if let LayerRope::Scaled(scale) = *rope {
                for (m, mut row) in q.rows_mut().into_iter().enumerate() {
                    let pos = m as f64 / scale;
                    let row = row.as_slice_mut().expect("standard layout");
                    for head in row.chunks_mut(hd) {
                        rotate_in_place(head, pos, &self.thetas);
                    }
                }
            }
            let mut mixed = Array2::<f64>::zeros((seq, cfg.d_model()));
            let mut maps = Vec::new();
            let mut entropies = Vec::new();
            for head in 0..cfg.n_heads {
                let cols = s![.., head * hd..(head + 1) * hd];
                // Keys share the query projection, so both sides are `q`.
                let qh = q.slice(cols);
                let mut scores = qh.dot(&qh.t()) * inv_sqrt;
                if is_last {
                    out.last_logits.push(
                        scores
                            .row(seq - 1)
                            .iter()
                            .copied()
                            .collect(),
                    );
                }
                softmax_rows(&mut scores, cfg.causal);
                if options.entropy {
                    let total: f64 = scores
                        .rows()
                        .into_iter()
                        .map(|r| entropy(r.as_slice().expect("contiguous")).unwrap_or(0.0))
                        .sum();
                    entropies.push(total / seq as f64);
                }
                mixed
                    .slice_mut(cols)
                    .assign(&scores.dot(&v.slice(cols)));
                match options.capture {
                    Capture::None => {}
                    Capture::LastRow => maps.push(scores.slice(s![seq - 1..seq, ..]).to_owned()),
                    Capture::Full => maps.push(scores),
                }
            }
            x = x + mixed.dot(&layer.wo);
            let hidden = rms_norm(&x).dot(&layer.w1).mapv(gelu);
            x = x + hidden.dot(&layer.w2);
            out.hidden.push(x.clone());
            if options.capture != Capture::None {
                out.attention.push(maps);
            }
            if options.entropy {
                out.row_entropy.push(entropies);
            }
        }
        Ok(out)
    }
}

/// Row-wise softmax in place; with `causal`, entries above the diagonal are zero.
fn softmax_rows(scores: &mut Array2<f64>, causal: bool) {
    for (m, mut row) in scores.axis_iter_mut(Axis(0)).enumerate() {
        let limit = if causal { m + 1 } else { row.len() };
        let max = row
            .slice(s![..limit])
            .iter()
            .fold(f64::NEG_INFINITY, |a, &b| a.max(b));
        let mut sum = 0.0;
        for (n, v) in row.iter_mut().enumerate() {
            if n < limit {
                *v = (*v - max).exp();
                sum += *v;
            } else {
                *v = 0.0;
            }
        }
        row.mapv_inplace(|v| v / sum);
    }
}

/// Softmax of a single logit vector.
pub(crate) fn softmax(logits: &[f64]) -> Vec<f64> {
    let max = logits.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let exps: Vec<f64> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Token embeddings `shared·b + e_m` with `b`, `e_m` standard normal,
/// deterministic in `seed`.
pub fn random_tokens(seq_len: usize, d_model: usize, shared: f64, seed: u64) -> Array2<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let base: Array1<f64> = Array1::from_shape_simple_fn(d_model, || StandardNormal.sample(&mut rng));
    let mut tokens = gaussian(seq_len, d_model, 1.0, &mut rng);
    for mut row in tokens.rows_mut() {
        row.scaled_add(shared, &base);
    }
    tokens
}

/// Per-layer mean attention entropy (nats) on random tokens.
pub fn entropy_profile(
    config: &ToyModelConfig,
    schedule: &ScaleSchedule,
    seq_len: usize,
    token_seed: u64,
) -> Result<Vec<f64>, ToyError> {
    let model = ToyModel::new(config.clone())?;
    let tokens = random_tokens(seq_len, config.d_model(), 1.0, token_seed);
    let out = model.forward(
        &tokens,
        schedule,
        &ForwardOptions {
            capture: Capture::None,
            entropy: true,
        },
    )?;
    Ok(out.entropy_profile())
}
