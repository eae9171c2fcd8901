//! The Conveyance loss.
//!
//! For a label `t` with plausible set `S` (always containing `t`) and its
//! complement `N`, the loss on class probabilities `p` is
//!
//! ```text
//! l(p, t) = log(1 + alpha * (1 - p_t) / p_t + beta * (1 - p_S) / p_S)
//! ```
//!
//! The production path never forms `p`. With logits `z` it pools three terms
//! in a single log-sum-exp:
//!
//! ```text
//! tau_0     = 0
//! tau_alpha = log(alpha) + LSE_{c != t} z_c - z_t
//! tau_beta  = log(beta)  + LSE_{n in N} z_n - LSE_{s in S} z_s
//! l         = LSE{tau_0, tau_alpha, tau_beta}
//! ```
//!
//! A term whose weight is zero, or whose index set is empty, is `-inf` and
//! simply drops out of the pool. With `alpha = 1, beta = 0` the loss is
//! exactly softmax cross-entropy.

use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Error, Result};
use crate::lse::{lse_excluding, lse_iter, masked_lse_unchecked, softmax};
use crate::par::{map_indexed, Execution};
use crate::qmatrix::PlausibilityMatrix;

/// Finite real-valued class scores.
#[derive(Debug, Clone, PartialEq)]
pub struct LogitVector(Vec<f64>);

impl LogitVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return arg_err("logit vector must have at least one class");
        }
        if let Some(i) = values.iter().position(|v| !v.is_finite()) {
            return arg_err(format!("logit {i} is not finite ({})", values[i]));
        }
        Ok(Self(values))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn into_inner(self) -> Vec<f64> {
        self.0
    }
}

/// A point on the probability simplex.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector(Vec<f64>);

impl ProbVector {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.is_empty() {
            return arg_err("probability vector must have at least one class");
        }
        if let Some(i) = values
            .iter()
            .position(|v| !(v.is_finite() && (0.0..=1.0).contains(v)))
        {
            return arg_err(format!("probability {i} outside [0, 1] ({})", values[i]));
        }
        let total: f64 = values.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return arg_err(format!("probabilities sum to {total}, expected 1"));
        }
        Ok(Self(values))
    }

    /// Softmax of the logits.
    pub fn from_logits(z: &LogitVector) -> Self {
        Self(softmax(z.as_slice()))
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }
}

/// Membership mask of the plausible set `S` for one target.
///
/// The target is always a member.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PlausibleSet {
    mask: Vec<bool>,
    target: usize,
}

impl PlausibleSet {
    /// Builds a set from a membership mask, forcing the target in.
    pub fn new(mut mask: Vec<bool>, target: usize) -> Result<Self> {
        if target >= mask.len() {
            return arg_err(format!(
                "target {target} out of range for {} classes",
                mask.len()
            ));
        }
        mask[target] = true;
        Ok(Self { mask, target })
    }

    /// `S = {t}`.
    pub fn singleton(class_count: usize, target: usize) -> Result<Self> {
        Self::new(vec![false; class_count], target)
    }

    /// `S = members ∪ {t}`.
    pub fn from_members(class_count: usize, target: usize, members: &[usize]) -> Result<Self> {
        let mut mask = vec![false; class_count];
        for &m in members {
            if m >= class_count {
                return arg_err(format!("member {m} out of range for {class_count} classes"));
            }
            mask[m] = true;
        }
        Self::new(mask, target)
    }

    /// `S` = every class.
    pub fn full(class_count: usize, target: usize) -> Result<Self> {
        Self::new(vec![true; class_count], target)
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn target(&self) -> usize {
        self.target
    }

    pub fn class_count(&self) -> usize {
        self.mask.len()
    }

    pub fn contains(&self, class: usize) -> bool {
        self.mask.get(class).copied().unwrap_or(false)
    }

    /// `|S|`.
    pub fn size(&self) -> usize {
        self.mask.iter().filter(|&&m| m).count()
    }

    /// Sorted members of `S`.
    pub fn members(&self) -> Vec<usize> {
        (0..self.mask.len()).filter(|&c| self.mask[c]).collect()
    }

    /// Mask of `N = C - S`.
    pub fn complement(&self) -> Vec<bool> {
        self.mask.iter().map(|m| !m).collect()
    }
}

/// How per-sample losses are combined over a batch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Reduction {
    #[default]
    Mean,
    Sum,
    None,
}

/// Margin weights and batch reduction.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossParams {
    pub alpha: f64,
    pub beta: f64,
    #[serde(default)]
    pub reduction: Reduction,
}

impl LossParams {
    /// Validated constructor. `alpha = beta = 0` is rejected; use
    /// [`LossParams::degenerate`] to opt into the identically-zero loss.
    pub fn new(alpha: f64, beta: f64) -> Result<Self> {
        let p = Self::degenerate(alpha, beta)?;
        if alpha == 0.0 && beta == 0.0 {
            return arg_err("alpha and beta are both zero; the loss would be identically 0");
        }
        Ok(p)
    }

    /// Accepts `alpha = beta = 0`.
    pub fn degenerate(alpha: f64, beta: f64) -> Result<Self> {
        for (name, v) in [("alpha", alpha), ("beta", beta)] {
            if !(v.is_finite() && v >= 0.0) {
                return arg_err(format!("{name} must be finite and non-negative, got {v}"));
            }
        }
        Ok(Self {
            alpha,
            beta,
            reduction: Reduction::Mean,
        })
    }

    /// `alpha = 1, beta = 0`: plain cross-entropy.
    pub fn cross_entropy() -> Self {
        Self {
            alpha: 1.0,
            beta: 0.0,
            reduction: Reduction::Mean,
        }
    }

    pub fn with_reduction(mut self, reduction: Reduction) -> Self {
        self.reduction = reduction;
        self
    }

    /// Re-checks the invariants, e.g. after deserialization.
    pub fn validate(&self) -> Result<()> {
        Self::new(self.alpha, self.beta).map(|_| ())
    }
}

/// Every intermediate of the logit-space evaluation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossBreakdown {
    pub tau_0: f64,
    pub tau_alpha: f64,
    pub tau_beta: f64,
    pub z_target: f64,
    /// LSE over `S`.
    pub z_s: f64,
    /// LSE over `N`; `-inf` when `N` is empty.
    pub z_n: f64,
    /// LSE over every class but the target; `-inf` when `C = 1`.
    pub z_not_t: f64,
    pub loss: f64,
}

/// Probability-space evaluation.
///
/// This is the slow reference form. `1 - p_t` and `1 - p_S` are accumulated
/// from the complementary entries rather than by subtraction, so tiny
/// complements keep their relative precision.
pub fn conveyance_loss_prob(p: &ProbVector, s: &PlausibleSet, params: &LossParams) -> Result<f64> {
    check_len(p.len(), s)?;
    let p = p.as_slice();
    let t = s.target();
    let p_t = p[t];
    let (mut p_s, mut p_n, mut not_t) = (0.0, 0.0, 0.0);
    for (c, &pc) in p.iter().enumerate() {
        if s.contains(c) {
            p_s += pc;
        } else {
            p_n += pc;
        }
        if c != t {
            not_t += pc;
        }
    }
    if p_t <= 0.0 {
        return Err(Error::Domain("p_t = 0: target odds are infinite".into()));
    }
    if p_s <= 0.0 {
        return Err(Error::Domain("p_S = 0: plausible-set odds are infinite".into()));
    }
    let mut odds = 0.0;
    if params.alpha > 0.0 {
        odds += params.alpha * not_t / p_t;
    }
    if params.beta > 0.0 {
        odds += params.beta * p_n / p_s;
    }
    Ok(odds.ln_1p())
}

/// Probability space the way a careless implementation would do it:
/// unshifted exponentials and literal `1 - p` subtractions. Kept to
/// demonstrate where the stable path is needed; may return NaN or inf.
pub fn naive_probability_loss(z: &[f64], s: &PlausibleSet, params: &LossParams) -> f64 {
    let e: Vec<f64> = z.iter().map(|v| v.exp()).collect();
    let total: f64 = e.iter().sum();
    let p: Vec<f64> = e.iter().map(|v| v / total).collect();
    let p_t = p[s.target()];
    let p_s: f64 = s.members().iter().map(|&c| p[c]).sum();
    (1.0 + params.alpha * (1.0 - p_t) / p_t + params.beta * (1.0 - p_s) / p_s).ln()
}

/// Stable logit-space evaluation with all intermediates.
pub fn conveyance_loss_logits(
    z: &LogitVector,
    s: &PlausibleSet,
    params: &LossParams,
) -> Result<LossBreakdown> {
    check_len(z.len(), s)?;
    if z.len() == 1 {
        log::warn!("conveyance loss evaluated with a single class; loss is identically 0");
    }
    Ok(breakdown(z.as_slice(), s.mask(), s.target(), params))
}

/// Analytic gradient of the loss with respect to the logits.
pub fn conveyance_grad(z: &LogitVector, s: &PlausibleSet, params: &LossParams) -> Result<Vec<f64>> {
    check_len(z.len(), s)?;
    let mut grad = vec![0.0; z.len()];
    loss_and_grad(z.as_slice(), s.mask(), s.target(), params, &mut grad);
    Ok(grad)
}

/// Loss and gradient together.
pub fn conveyance_loss_and_grad(
    z: &LogitVector,
    s: &PlausibleSet,
    params: &LossParams,
) -> Result<(f64, Vec<f64>)> {
    check_len(z.len(), s)?;
    let mut grad = vec![0.0; z.len()];
    let loss = loss_and_grad(z.as_slice(), s.mask(), s.target(), params, &mut grad);
    Ok((loss, grad))
}

/// `-log softmax(z)_t`, the cross-entropy the loss reduces to at `alpha = 1, beta = 0`.
pub fn cross_entropy(z: &LogitVector, target: usize) -> Result<f64> {
    if target >= z.len() {
        return arg_err(format!("target {target} out of range for {} classes", z.len()));
    }
    let z = z.as_slice();
    Ok(lse_iter(z.iter().copied()) - z[target])
}

/// Batch result: a reduced scalar, or per-sample values for [`Reduction::None`].
#[derive(Debug, Clone, PartialEq)]
pub enum BatchLoss {
    Reduced(f64),
    PerSample(Vec<f64>),
}

impl BatchLoss {
    /// The scalar, if reduced.
    pub fn scalar(&self) -> Option<f64> {
        match self {
            BatchLoss::Reduced(v) => Some(*v),
            BatchLoss::PerSample(_) => None,
        }
    }

    pub fn per_sample(&self) -> Option<&[f64]> {
        match self {
            BatchLoss::Reduced(_) => None,
            BatchLoss::PerSample(v) => Some(v),
        }
    }
}

/// Batch evaluation with plausible sets read from the columns of `q`.
pub fn batch_loss(
    logits: &[LogitVector],
    targets: &[usize],
    q: &PlausibilityMatrix,
    params: &LossParams,
) -> Result<BatchLoss> {
    batch_loss_with(Execution::default(), logits, targets, q, params)
}

/// [`batch_loss`] with an explicit execution mode. Per-sample losses are
/// computed (possibly in parallel) and then reduced in index order, so the
/// result does not depend on the mode.
pub fn batch_loss_with(
    exec: Execution,
    logits: &[LogitVector],
    targets: &[usize],
    q: &PlausibilityMatrix,
    params: &LossParams,
) -> Result<BatchLoss> {
    if logits.len() != targets.len() {
        return arg_err(format!(
            "{} logit rows but {} targets",
            logits.len(),
            targets.len()
        ));
    }
    let c = q.class_count();
    for (b, (z, &t)) in logits.iter().zip(targets).enumerate() {
        if z.len() != c {
            return arg_err(format!("row {b} has {} logits, Q has {c} classes", z.len()));
        }
        if t >= c {
            return arg_err(format!("target {t} of row {b} out of range for {c} classes"));
        }
    }
    let masks: Vec<Vec<bool>> = (0..c).map(|t| q.plausible_mask(t)).collect();
    let losses = map_indexed(exec, logits.len(), |b| {
        let t = targets[b];
        breakdown(logits[b].as_slice(), &masks[t], t, params).loss
    });
    Ok(reduce(losses, params.reduction))
}

pub(crate) fn reduce(losses: Vec<f64>, reduction: Reduction) -> BatchLoss {
    match reduction {
        Reduction::None => BatchLoss::PerSample(losses),
        Reduction::Sum => BatchLoss::Reduced(losses.iter().sum()),
        Reduction::Mean => {
            let n = losses.len().max(1) as f64;
            BatchLoss::Reduced(losses.iter().sum::<f64>() / n)
        }
    }
}

fn check_len(len: usize, s: &PlausibleSet) -> Result<()> {
    if len != s.class_count() {
        return arg_err(format!(
            "{len} classes in scores but plausible set covers {}",
            s.class_count()
        ));
    }
    Ok(())
}

fn breakdown(z: &[f64], mask: &[bool], t: usize, params: &LossParams) -> LossBreakdown {
    let z_target = z[t];
    let z_s = masked_lse_unchecked(z, mask);
    let z_n = lse_iter(
        z.iter()
            .zip(mask)
            .filter(|(_, &m)| !m)
            .map(|(&v, _)| v),
    );
    let z_not_t = lse_excluding(z, t);
    let tau_alpha = if params.alpha > 0.0 && z_not_t > f64::NEG_INFINITY {
        params.alpha.ln() + z_not_t - z_target
    } else {
        f64::NEG_INFINITY
    };
    let tau_beta = if params.beta > 0.0 && z_n > f64::NEG_INFINITY {
        params.beta.ln() + z_n - z_s
    } else {
        f64::NEG_INFINITY
    };
    let loss = lse_iter([0.0, tau_alpha, tau_beta]);
    LossBreakdown {
        tau_0: 0.0,
        tau_alpha,
        tau_beta,
        z_target,
        z_s,
        z_n,
        z_not_t,
        loss,
    }
}

/// Writes `dl/dz` into `grad` (overwriting) and returns the loss.
///
/// With pooling weights `w_a = exp(tau_alpha - l)`, `w_b = exp(tau_beta - l)`:
/// `dl/dz_c = w_a (q_c - [c = t]) + w_b (r_c [c in N] - u_c [c in S])` where
/// `q`, `r`, `u` are the softmaxes restricted to `C - {t}`, `N` and `S`.
pub(crate) fn loss_and_grad(
    z: &[f64],
    mask: &[bool],
    t: usize,
    params: &LossParams,
    grad: &mut [f64],
) -> f64 {
    let b = breakdown(z, mask, t, params);
    grad.iter_mut().for_each(|g| *g = 0.0);
    let w_alpha = (b.tau_alpha - b.loss).exp();
    let w_beta = (b.tau_beta - b.loss).exp();
    if w_alpha > 0.0 {
        for (c, g) in grad.iter_mut().enumerate() {
            if c != t {
                *g += w_alpha * (z[c] - b.z_not_t).exp();
            }
        }
        grad[t] -= w_alpha;
    }
    if w_beta > 0.0 {
        for (c, g) in grad.iter_mut().enumerate() {
            if mask[c] {
                *g -= w_beta * (z[c] - b.z_s).exp();
            } else {
                *g += w_beta * (z[c] - b.z_n).exp();
            }
        }
    }
    b.loss
}
