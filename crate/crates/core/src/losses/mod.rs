//! Training objectives and the Nash–Sutcliffe efficiency metric.

use crate::tensor::rng::Rng;
use crate::tensor::{Result, Tensor, TensorError};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossWeights {
    pub lambda_con: f64,
    pub lambda_adv: f64,
    pub lambda_sup: f64,
    pub tau: f64,
    pub negatives: usize,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights { lambda_con: 0.1, lambda_adv: 0.1, lambda_sup: 1.0, tau: 0.1, negatives: 8 }
    }
}

impl LossWeights {
    pub fn validate(&self) -> std::result::Result<(), String> {
        for (name, v) in [("lambda_con", self.lambda_con), ("lambda_adv", self.lambda_adv), ("lambda_sup", self.lambda_sup)] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(format!("loss.{name} must be a finite nonnegative number, got {v}"));
            }
        }
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return Err(format!("loss.tau must be positive, got {}", self.tau));
        }
        if self.negatives == 0 {
            return Err("loss.negatives must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Warmup,
    Adversarial,
}

impl Phase {
    pub fn at(epoch: usize, warmup_epochs: usize) -> Phase {
        if epoch < warmup_epochs {
            Phase::Warmup
        } else {
            Phase::Adversarial
        }
    }
}

/// Pairs drawn for one contrastive evaluation: per anchor, the positive
/// index followed by up to `negatives` negative indices.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ContrastivePairs {
    pub anchors: Vec<usize>,
    pub positives: Vec<usize>,
    pub negatives: Vec<Vec<usize>>,
}

/// Samples a positive (same reservoir, other sample) and up to `negatives`
/// samples of other reservoirs for every anchor that has a positive.
pub fn sample_pairs(ids: &[usize], negatives: usize, rng: &mut Rng) -> ContrastivePairs {
    let mut pairs = ContrastivePairs { anchors: vec![], positives: vec![], negatives: vec![] };
    for (i, &id) in ids.iter().enumerate() {
        let same: Vec<usize> = (0..ids.len()).filter(|&j| j != i && ids[j] == id).collect();
        if same.is_empty() {
            continue;
        }
        let other: Vec<usize> = (0..ids.len()).filter(|&j| ids[j] != id).collect();
        pairs.anchors.push(i);
        pairs.positives.push(same[rng.below(same.len())]);
        pairs.negatives.push(rng.choose_distinct(&other, negatives));
    }
    pairs
}

/// InfoNCE over cosine similarities of pseudo-domain embeddings `v`
/// (`batch × d`) for pre-sampled pairs. Returns 0 when no anchor has a
/// positive.
pub fn contrastive_loss_with(v: &Tensor, pairs: &ContrastivePairs, tau: f64) -> Result<Tensor> {
    if pairs.anchors.is_empty() {
        log::warn!("contrastive loss: no anchor has a positive in this batch");
        return Ok(Tensor::scalar(0.0));
    }
    let b = v.shape()[0];
    let sims = v.cosine_matrix(v)?.reshape(&[b * b])?;
    let width = 1 + pairs.negatives.iter().map(Vec::len).max().unwrap_or(0);
    let a = pairs.anchors.len();
    let mut index = Vec::with_capacity(a * width);
    let mut mask = Vec::with_capacity(a * width);
    for ((&i, &p), negs) in pairs.anchors.iter().zip(&pairs.positives).zip(&pairs.negatives) {
        index.push(i * b + p);
        mask.push(1.0);
        for k in 0..width - 1 {
            match negs.get(k) {
                Some(&n) => {
                    index.push(i * b + n);
                    mask.push(1.0);
                }
                None => {
                    index.push(i * b + p);
                    mask.push(0.0);
                }
            }
        }
    }
    let logits = sims.gather(&index)?.reshape(&[a, width])?.scale(1.0 / tau);
    let mask = Tensor::new(&[a, width], mask)?;
    let log_denom = logits.exp().mul(&mask)?.sum_axis(1)?.log()?;
    let positive = logits.slice(1, 0..1)?.reshape(&[a])?;
    Ok(log_denom.sub(&positive)?.mean())
}

/// Samples pairs from `rng`, then evaluates [`contrastive_loss_with`].
pub fn contrastive_loss(v: &Tensor, ids: &[usize], tau: f64, negatives: usize, rng: &mut Rng) -> Result<Tensor> {
    contrastive_loss_with(v, &sample_pairs(ids, negatives, rng), tau)
}

/// Mean over the batch of `‖d_out − v_target‖²`; the target is treated as a constant.
pub fn adversarial_loss(d_out: &Tensor, v_target: &Tensor) -> Result<Tensor> {
    if d_out.shape() != v_target.shape() || d_out.shape().len() != 2 {
        return Err(TensorError::Dimension {
            op: "adversarial_loss",
            lhs: d_out.shape().to_vec(),
            rhs: v_target.shape().to_vec(),
        });
    }
    let batch = d_out.shape()[0] as f64;
    Ok(d_out.sub(&v_target.detach())?.square().sum().scale(1.0 / batch))
}

/// Mean squared error over all entries.
pub fn supervised_loss(pred: &Tensor, target: &Tensor) -> Result<Tensor> {
    if pred.shape() != target.shape() {
        return Err(TensorError::Dimension {
            op: "supervised_loss",
            lhs: pred.shape().to_vec(),
            rhs: target.shape().to_vec(),
        });
    }
    Ok(pred.sub(target)?.square().mean())
}

/// Mean cross-entropy of `logits` (`batch × classes`) against hard labels.
pub fn cross_entropy(logits: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let shape = logits.shape();
    if shape.len() != 2 || shape[0] != labels.len() {
        return Err(TensorError::Dimension { op: "cross_entropy", lhs: shape.to_vec(), rhs: vec![labels.len()] });
    }
    let (b, k) = (shape[0], shape[1]);
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(TensorError::Invalid { op: "cross_entropy", msg: format!("label {bad} out of range for {k} classes") });
    }
    // row maxima are constants, so subtracting them leaves the gradient unchanged
    let maxima: Vec<f64> = {
        let v = logits.value();
        (0..b).map(|i| v[i * k..(i + 1) * k].iter().copied().fold(f64::NEG_INFINITY, f64::max)).collect()
    };
    let shifted = logits.sub(&Tensor::new(&[b, 1], maxima)?)?;
    let lse = shifted.exp().sum_axis(1)?.log()?;
    let picked = shifted.reshape(&[b * k])?.gather(&labels.iter().enumerate().map(|(i, &l)| i * k + l).collect::<Vec<_>>())?;
    Ok(lse.sub(&picked)?.mean())
}

/// Weighted objective under the phase rule. `l_adv` is ignored during warm-up.
pub fn total_loss(l_con: &Tensor, l_adv: &Tensor, l_sup: &Tensor, w: &LossWeights, phase: Phase) -> Result<Tensor> {
    let warm = l_con.scale(w.lambda_con).add(&l_sup.scale(w.lambda_sup))?;
    match phase {
        Phase::Warmup => Ok(warm),
        Phase::Adversarial => warm.add(&l_adv.scale(w.lambda_adv)),
    }
}

/// Scalar counterpart of [`total_loss`] used when reconciling logs.
pub fn total_value(l_con: f64, l_adv: f64, l_sup: f64, w: &LossWeights, phase: Phase) -> f64 {
    let warm = w.lambda_con * l_con + w.lambda_sup * l_sup;
    match phase {
        Phase::Warmup => warm,
        Phase::Adversarial => warm + w.lambda_adv * l_adv,
    }
}

/// `1 − Σ(ŷ−y)² / Σ(y−ȳ)²`. `None` when fewer than two observations or
/// when the observations are constant.
pub fn nse(pred: &[f64], obs: &[f64]) -> Option<f64> {
    assert_eq!(pred.len(), obs.len(), "nse needs aligned series");
    if obs.len() < 2 {
        log::warn!("NSE undefined for {} observation(s)", obs.len());
        return None;
    }
    let mean = obs.iter().sum::<f64>() / obs.len() as f64;
    let denom: f64 = obs.iter().map(|y| (y - mean).powi(2)).sum();
    if denom == 0.0 {
        log::warn!("NSE undefined: observations are constant");
        return None;
    }
    let num: f64 = pred.iter().zip(obs).map(|(p, y)| (p - y).powi(2)).sum();
    Some(1.0 - num / denom)
}

fn mean_defined(values: &[Option<f64>]) -> Option<f64> {
    let defined: Vec<f64> = values.iter().flatten().copied().collect();
    if defined.is_empty() {
        None
    } else {
        Some(defined.iter().sum::<f64>() / defined.len() as f64)
    }
}

/// Mean of per-day scores; undefined if any day is undefined.
pub fn overall(days: &[Option<f64>]) -> Option<f64> {
    if days.iter().any(Option::is_none) || days.is_empty() {
        return None;
    }
    mean_defined(days)
}

/// Multi-day forecasts and observations of one reservoir in physical units,
/// one row of length `H` per window.
#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirForecasts {
    pub id: String,
    pub predictions: Vec<Vec<f64>>,
    pub observations: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReservoirNse {
    pub id: String,
    pub days: Vec<Option<f64>>,
    pub overall: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NseReport {
    pub reservoirs: Vec<ReservoirNse>,
    /// Per-day scores macro-averaged across reservoirs.
    pub days: Vec<Option<f64>>,
    /// Mean of [`NseReport::days`].
    pub overall: Option<f64>,
    /// Per-day scores over all reservoirs' samples pooled together.
    pub pooled_days: Vec<Option<f64>>,
    pub pooled_overall: Option<f64>,
}

fn column(rows: &[Vec<f64>], k: usize) -> Vec<f64> {
    rows.iter().map(|r| r[k]).collect()
}

pub fn nse_report(forecasts: &[ReservoirForecasts], horizon: usize) -> NseReport {
    let reservoirs: Vec<ReservoirNse> = forecasts
        .iter()
        .map(|f| {
            let days: Vec<Option<f64>> = (0..horizon)
                .map(|k| nse(&column(&f.predictions, k), &column(&f.observations, k)))
                .collect();
            ReservoirNse { id: f.id.clone(), overall: overall(&days), days }
        })
        .collect();
    let days: Vec<Option<f64>> = (0..horizon)
        .map(|k| {
            let col: Vec<Option<f64>> = reservoirs.iter().map(|r| r.days[k]).collect();
            if col.iter().any(Option::is_none) {
                log::warn!("day {}: excluding reservoirs with undefined NSE from the average", k + 1);
            }
            mean_defined(&col)
        })
        .collect();
    let pooled_days: Vec<Option<f64>> = (0..horizon)
        .map(|k| {
            let p: Vec<f64> = forecasts.iter().flat_map(|f| column(&f.predictions, k)).collect();
            let o: Vec<f64> = forecasts.iter().flat_map(|f| column(&f.observations, k)).collect();
            nse(&p, &o)
        })
        .collect();
    NseReport {
        reservoirs,
        overall: overall(&days),
        days,
        pooled_overall: overall(&pooled_days),
        pooled_days,
    }
}

#[cfg(test)]
mod tests;
