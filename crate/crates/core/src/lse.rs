//! Log-sum-exp primitives.
//!
//! Every reduction subtracts the running maximum before exponentiating, so no
//! intermediate `exp` ever sees a positive argument. An empty selection yields
//! `f64::NEG_INFINITY`, the identity element of LSE.

use crate::error::{arg_err, Result};

/// `log Σ exp(values[i])` over all entries. Empty input gives `-inf`.
pub fn lse(values: &[f64]) -> f64 {
    lse_iter(values.iter().copied())
}

/// LSE over an iterator of values; `-inf` entries contribute nothing.
///
/// The maximum's own term is kept out of the sum and added back through
/// `ln_1p`, so a result just above the maximum keeps its small excess.
pub fn lse_iter<I>(values: I) -> f64
where
    I: IntoIterator<Item = f64> + Clone,
{
    let (arg, max) = values
        .clone()
        .into_iter()
        .enumerate()
        .fold((usize::MAX, f64::NEG_INFINITY), |(ai, am), (i, v)| {
            if v > am { (i, v) } else { (ai, am) }
        });
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    if max == f64::INFINITY {
        return f64::INFINITY;
    }
    let rest: f64 = values
        .into_iter()
        .enumerate()
        .filter(|&(i, _)| i != arg)
        .map(|(_, v)| (v - max).exp())
        .sum();
    max + rest.ln_1p()
}

/// `log Σ_{i: mask[i]} exp(values[i])`.
///
/// Returns `-inf` when the mask selects nothing.
pub fn masked_lse(values: &[f64], mask: &[bool]) -> Result<f64> {
    if values.len() != mask.len() {
        return arg_err(format!(
            "masked_lse: {} values but mask of length {}",
            values.len(),
            mask.len()
        ));
    }
    Ok(masked_lse_unchecked(values, mask))
}

pub(crate) fn masked_lse_unchecked(values: &[f64], mask: &[bool]) -> f64 {
    lse_iter(
        values
            .iter()
            .zip(mask)
            .filter(|(_, &m)| m)
            .map(|(&v, _)| v),
    )
}

/// LSE over every entry except `skip`.
pub(crate) fn lse_excluding(values: &[f64], skip: usize) -> f64 {
    lse_iter(
        values
            .iter()
            .enumerate()
            .filter(move |&(i, _)| i != skip)
            .map(|(_, &v)| v),
    )
}

/// Max-shifted softmax.
pub fn softmax(values: &[f64]) -> Vec<f64> {
    let norm = lse(values);
    values.iter().map(|&v| (v - norm).exp()).collect()
}

/// Natural log of the softmax, computed without forming probabilities.
pub fn log_softmax(values: &[f64]) -> Vec<f64> {
    let norm = lse(values);
    values.iter().map(|&v| v - norm).collect()
}
