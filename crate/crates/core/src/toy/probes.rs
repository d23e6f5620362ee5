use ndarray::{Array1, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use crate::curve::ScaleSchedule;
use crate::fitness::layer_thirds;

use super::{ForwardOptions, LayerRope, ToyError, ToyModel};

/// Cosine similarity; `None` if either vector has zero norm.
pub fn cosine(a: ArrayView1<f64>, b: ArrayView1<f64>) -> Option<f64> {
    let (na, nb) = (a.dot(&a).sqrt(), b.dot(&b).sqrt());
    if na == 0.0 || nb == 0.0 {
        return None;
    }
    Some((a.dot(&b) / (na * nb)).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimilaritySeries {
    pub positions: Vec<usize>,
    pub similarity: Vec<f64>,
    /// Positions skipped because their state had zero norm.
    pub excluded: Vec<usize>,
}

impl SimilaritySeries {
    /// Mean similarity over the last quarter of the included positions.
    pub fn last_quartile_mean(&self) -> f64 {
        let n = self.similarity.len();
        let tail = &self.similarity[n - n.div_ceil(4)..];
        tail.iter().sum::<f64>() / tail.len() as f64
    }
}

fn mean_rows(states: &Array2<f64>, rows: std::ops::Range<usize>) -> Array1<f64> {
    let mut acc = Array1::zeros(states.ncols());
    for m in rows.clone() {
        acc += &states.row(m);
    }
    acc / rows.len() as f64
}

/// Cosine similarity between the mean of the first `block` states and each later state.
pub fn probe_first_block_similarity(
    states: &Array2<f64>,
    block: usize,
) -> Result<SimilaritySeries, ToyError> {
    let seq = states.nrows();
    if block == 0 || seq <= block {
        return Err(ToyError::Probe(format!(
            "sequence of {seq} is not longer than block {block}"
        )));
    }
    let anchor = mean_rows(states, 0..block);
    if anchor.dot(&anchor) == 0.0 {
        return Err(ToyError::Probe("first block mean has zero norm".into()));
    }
    let mut series = SimilaritySeries {
        positions: Vec::new(),
        similarity: Vec::new(),
        excluded: Vec::new(),
    };
    for m in block..seq {
        match cosine(anchor.view(), states.row(m)) {
            Some(c) => {
                series.positions.push(m);
                series.similarity.push(c);
            }
            None => series.excluded.push(m),
        }
    }
    if series.similarity.is_empty() {
        return Err(ToyError::Probe("every probed state has zero norm".into()));
    }
    Ok(series)
}

/// Cosine similarity between the middle-third mean state and the final state.
pub fn probe_middle_vs_last(states: &Array2<f64>) -> Result<f64, ToyError> {
    let seq = states.nrows();
    if seq < 3 {
        return Err(ToyError::Probe(format!("need at least 3 positions, got {seq}")));
    }
    let middle = mean_rows(states, layer_thirds(seq)[1].clone());
    cosine(middle.view(), states.row(seq - 1))
        .ok_or_else(|| ToyError::Probe("zero-norm state".into()))
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(a: &[f64], b: &[f64]) -> Option<f64> {
    if a.len() != b.len() || a.len() < 2 {
        return None;
    }
    let (ra, rb) = (ranks(a), ranks(b));
    let mean = (a.len() as f64 + 1.0) / 2.0;
    let (mut num, mut da, mut db) = (0.0, 0.0, 0.0);
    for (x, y) in ra.iter().zip(&rb) {
        num += (x - mean) * (y - mean);
        da += (x - mean).powi(2);
        db += (y - mean).powi(2);
    }
    if da == 0.0 || db == 0.0 {
        return None;
    }
    Some(num / (da * db).sqrt())
}

fn ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&i, &j| v[i].total_cmp(&v[j]));
    let mut out = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let rank = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            out[k] = rank;
        }
        i = j + 1;
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationComparison {
    pub normal: SimilaritySeries,
    pub ablated: SimilaritySeries,
}

/// First-block similarity at `layer` with rotary on everywhere vs disabled on `ablate`.
pub fn first_block_ablation(
    model: &ToyModel,
    tokens: &Array2<f64>,
    layer: usize,
    ablate: std::ops::RangeInclusive<usize>,
    block: usize,
) -> Result<AblationComparison, ToyError> {
    let n = model.config().n_layers;
    if layer >= n || *ablate.end() >= n {
        return Err(ToyError::Probe(format!("layers must be below {n}")));
    }
    let mut plan = vec![LayerRope::Scaled(1.0); n];
    let opts = ForwardOptions::default();
    let normal = model.forward_with(tokens, &plan, &opts)?;
    for k in ablate {
        plan[k] = LayerRope::Disabled;
    }
    let ablated = model.forward_with(tokens, &plan, &opts)?;
    Ok(AblationComparison {
        normal: probe_first_block_similarity(&normal.hidden[layer], block)?,
        ablated: probe_first_block_similarity(&ablated.hidden[layer], block)?,
    })
}

/// Middle-vs-last similarity at `layer` under a uniform schedule for each
/// scale, averaged over `samples`.
pub fn middle_last_sweep(
    model: &ToyModel,
    samples: &[Array2<f64>],
    layer: usize,
    scales: &[f64],
) -> Result<Vec<(f64, f64)>, ToyError> {
    let n = model.config().n_layers;
    if layer >= n {
        return Err(ToyError::Probe(format!("layer {layer} must be below {n}")));
    }
    if samples.is_empty() {
        return Err(ToyError::Probe("no token samples".into()));
    }
    scales
        .iter()
        .map(|&s| {
            let sched = ScaleSchedule::uniform(n, s)
                .map_err(|e| ToyError::Config(e.to_string()))?;
            let mut total = 0.0;
            for tokens in samples {
                let out = model.forward(tokens, &sched, &ForwardOptions::default())?;
                total += probe_middle_vs_last(&out.hidden[layer])?;
            }
            Ok((s, total / samples.len() as f64))
        })
        .collect()
}
