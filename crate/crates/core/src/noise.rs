//! Structured label-noise models.
//!
//! `T[i][j]` is the probability that an instance of true class `i` is
//! annotated with label `j`. Four topologies are provided: column (sink)
//! noise, one-directional pair flips, cyclic flips inside superclasses and
//! uniform block noise inside superclasses.

use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{arg_err, Result};
use crate::par::{map_indexed, Execution};
use crate::textmat::{format_rows, parse_square};

const ROW_SUM_TOL: f64 = 1e-12;

/// Row-stochastic `C x C` corruption matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct TransitionMatrix {
    class_count: usize,
    probs: Vec<f64>,
    noise_rate: f64,
}

impl TransitionMatrix {
    pub fn identity(class_count: usize) -> Result<Self> {
        if class_count == 0 {
            return arg_err("transition matrix needs at least one class");
        }
        let mut probs = vec![0.0; class_count * class_count];
        for c in 0..class_count {
            probs[c * class_count + c] = 1.0;
        }
        Ok(Self {
            class_count,
            probs,
            noise_rate: 0.0,
        })
    }

    /// Validates row-stochasticity. The noise rate is recorded as the
    /// largest off-diagonal row mass.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self> {
        let n = rows.len();
        if n == 0 {
            return arg_err("transition matrix needs at least one class");
        }
        let mut probs = Vec::with_capacity(n * n);
        let mut noise_rate: f64 = 0.0;
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return arg_err(format!("row {i} has {} entries, expected {n}", row.len()));
            }
            if let Some(v) = row.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
                return arg_err(format!("row {i} has invalid probability {v}"));
            }
            let sum: f64 = row.iter().sum();
            if (sum - 1.0).abs() > ROW_SUM_TOL {
                return arg_err(format!("row {i} sums to {sum}, expected 1"));
            }
            noise_rate = noise_rate.max(1.0 - row[i]);
            probs.extend_from_slice(row);
        }
        Ok(Self {
            class_count: n,
            probs,
            noise_rate,
        })
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn noise_rate(&self) -> f64 {
        self.noise_rate
    }

    pub fn get(&self, true_class: usize, label: usize) -> f64 {
        self.probs[true_class * self.class_count + label]
    }

    pub fn row(&self, true_class: usize) -> &[f64] {
        let n = self.class_count;
        &self.probs[true_class * n..(true_class + 1) * n]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.probs.chunks(self.class_count)
    }

    /// Label distribution induced by a prior over true classes: `prior^T T`.
    pub fn push_forward(&self, prior: &[f64]) -> Vec<f64> {
        let n = self.class_count;
        let mut out = vec![0.0; n];
        for (i, &w) in prior.iter().enumerate() {
            for (j, o) in out.iter_mut().enumerate() {
                *o += w * self.probs[i * n + j];
            }
        }
        out
    }

    /// One row per line, shortest round-trip decimal representation.
    pub fn to_text(&self) -> String {
        format_rows(self.rows().map(|r| r.to_vec()), |v| format!("{v}"))
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let rows = parse_square(text, |t| {
            t.parse::<f64>().map_err(|e| format!("{t:?}: {e}"))
        })?;
        Self::from_rows(rows)
    }

    fn set(&mut self, i: usize, j: usize, v: f64) {
        self.probs[i * self.class_count + j] = v;
    }
}

/// Noise topology and rate.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "topology", rename_all = "snake_case")]
pub enum NoiseSpec {
    /// Every non-sink class keeps `1 - eta` and splits `eta` evenly between
    /// the two sinks. Each sink sends `2 eta / 3` of its labels to the other
    /// sink. Default sinks are `{3, 5}` for ten classes and the two middle
    /// indices otherwise.
    Column {
        eta: f64,
        #[serde(default)]
        sinks: Option<[usize; 2]>,
    },
    /// Each `(source, destination)` pair moves `eta` of the source's labels.
    AsymmetricPairs { eta: f64, pairs: Vec<(usize, usize)> },
    /// Inside consecutive groups of `group_size`, member `i` sends `eta` to
    /// member `i + 1 (mod group_size)`.
    CyclicSuperclass { eta: f64, group_size: usize },
    /// Inside consecutive groups, `eta` is spread uniformly over the other
    /// members.
    BlockSuperclass { eta: f64, group_size: usize },
}

impl NoiseSpec {
    pub fn eta(&self) -> f64 {
        match self {
            NoiseSpec::Column { eta, .. }
            | NoiseSpec::AsymmetricPairs { eta, .. }
            | NoiseSpec::CyclicSuperclass { eta, .. }
            | NoiseSpec::BlockSuperclass { eta, .. } => *eta,
        }
    }

    /// Column noise at 60% into cat (3) and dog (5).
    pub fn column_cifar10() -> Self {
        NoiseSpec::Column {
            eta: 0.6,
            sinks: Some([3, 5]),
        }
    }

    /// Truck to automobile, bird to airplane, cat to dog, deer to horse at 45%.
    pub fn asymmetric_cifar10() -> Self {
        NoiseSpec::AsymmetricPairs {
            eta: 0.45,
            pairs: vec![(9, 1), (2, 0), (3, 5), (4, 7)],
        }
    }

    /// Same topology at a different rate.
    pub fn with_eta(&self, new_eta: f64) -> Self {
        let mut s = self.clone();
        match &mut s {
            NoiseSpec::Column { eta, .. }
            | NoiseSpec::AsymmetricPairs { eta, .. }
            | NoiseSpec::CyclicSuperclass { eta, .. }
            | NoiseSpec::BlockSuperclass { eta, .. } => *eta = new_eta,
        }
        s
    }
}

/// Default column-noise sinks for a class count.
pub fn default_sinks(class_count: usize) -> [usize; 2] {
    if class_count == 10 {
        [3, 5]
    } else {
        [class_count / 2 - 1, class_count / 2]
    }
}

/// Builds the exact transition matrix for `spec` over `class_count` classes.
pub fn build_transition(spec: &NoiseSpec, class_count: usize) -> Result<TransitionMatrix> {
    let eta = spec.eta();
    if !(0.0..=1.0).contains(&eta) {
        return arg_err(format!("noise rate must lie in [0, 1], got {eta}"));
    }
    let mut t = TransitionMatrix::identity(class_count)?;
    t.noise_rate = eta;
    let n = class_count;
    match spec {
        NoiseSpec::Column { sinks, .. } => {
            if n < 2 {
                return arg_err("column noise needs at least two classes");
            }
            let [a, b] = sinks.unwrap_or_else(|| default_sinks(n));
            if a >= n || b >= n || a == b {
                return arg_err(format!("invalid sinks {a}, {b} for {n} classes"));
            }
            let half = eta / 2.0;
            // written so that eta = 0.6 yields exactly 0.6 / 0.4
            let sink_flip = eta - eta / 3.0;
            let sink_keep = (1.0 - eta) + eta / 3.0;
            for c in 0..n {
                if c == a || c == b {
                    let other = if c == a { b } else { a };
                    t.set(c, c, sink_keep);
                    t.set(c, other, sink_flip);
                } else {
                    t.set(c, c, 1.0 - eta);
                    t.set(c, a, half);
                    t.set(c, b, half);
                }
            }
        }
        NoiseSpec::AsymmetricPairs { pairs, .. } => {
            let mut seen = vec![false; n];
            for &(src, dst) in pairs {
                if src >= n || dst >= n {
                    return arg_err(format!("pair ({src}, {dst}) out of range for {n} classes"));
                }
                if src == dst {
                    return arg_err(format!("pair ({src}, {dst}) flips a class onto itself"));
                }
                if seen[src] {
                    return arg_err(format!("class {src} is the source of more than one pair"));
                }
                seen[src] = true;
                t.set(src, src, 1.0 - eta);
                t.set(src, dst, eta);
            }
        }
        NoiseSpec::CyclicSuperclass { group_size, .. } => {
            check_groups(n, *group_size)?;
            let g = *group_size;
            for c in 0..n {
                let base = c - c % g;
                let next = base + (c % g + 1) % g;
                t.set(c, c, 1.0 - eta);
                t.set(c, next, eta);
            }
        }
        NoiseSpec::BlockSuperclass { group_size, .. } => {
            check_groups(n, *group_size)?;
            let g = *group_size;
            let share = eta / (g - 1) as f64;
            for c in 0..n {
                let base = c - c % g;
                for m in base..base + g {
                    t.set(c, m, if m == c { 1.0 - eta } else { share });
                }
            }
        }
    }
    Ok(t)
}

fn check_groups(n: usize, g: usize) -> Result<()> {
    if g < 2 {
        return arg_err(format!("superclass size must be at least 2, got {g}"));
    }
    if !n.is_multiple_of(g) {
        return arg_err(format!("{n} classes are not divisible into groups of {g}"));
    }
    Ok(())
}

/// Resamples each label from its row of `t`.
///
/// Label `i` draws from its own position in a seeded ChaCha8 stream, so the
/// output does not depend on how the work is split across threads.
pub fn corrupt_labels(clean: &[usize], t: &TransitionMatrix, seed: u64) -> Result<Vec<usize>> {
    corrupt_labels_with(Execution::default(), clean, t, seed)
}

pub fn corrupt_labels_with(
    exec: Execution,
    clean: &[usize],
    t: &TransitionMatrix,
    seed: u64,
) -> Result<Vec<usize>> {
    let n = t.class_count();
    if let Some(&bad) = clean.iter().find(|&&c| c >= n) {
        return arg_err(format!("label {bad} out of range for {n} classes"));
    }
    let base = ChaCha8Rng::seed_from_u64(seed);
    Ok(map_indexed(exec, clean.len(), |i| {
        let mut rng = base.clone();
        rng.set_word_pos(2 * i as u128);
        let u = (rng.next_u64() >> 11) as f64 * (1.0 / (1u64 << 53) as f64);
        sample_row(t.row(clean[i]), u)
    }))
}

fn sample_row(row: &[f64], u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &p) in row.iter().enumerate() {
        if p <= 0.0 {
            continue;
        }
        acc += p;
        last = j;
        if u < acc {
            return j;
        }
    }
    last
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row_sums_ok(t: &TransitionMatrix) {
        for (i, r) in t.rows().enumerate() {
            let s: f64 = r.iter().sum();
            assert!((s - 1.0).abs() <= 1e-12, "row {i} sums to {s}");
        }
    }

    #[test]
    fn column_noise_entries() {
        let t = build_transition(&NoiseSpec::column_cifar10(), 10).unwrap();
        assert_eq!(t.get(0, 0), 0.4);
        assert_eq!(t.get(0, 3), 0.3);
        assert_eq!(t.get(0, 5), 0.3);
        assert_eq!(t.get(3, 3), 0.6);
        assert_eq!(t.get(3, 5), 0.4);
        assert_eq!(t.get(5, 5), 0.6);
        assert_eq!(t.get(5, 3), 0.4);
        row_sums_ok(&t);
        for (i, r) in t.rows().enumerate() {
            let nz = r.iter().filter(|&&v| v > 0.0).count();
            assert_eq!(nz, if i == 3 || i == 5 { 2 } else { 3 });
        }
    }

    #[test]
    fn column_noise_default_sinks() {
        assert_eq!(default_sinks(10), [3, 5]);
        assert_eq!(default_sinks(8), [3, 4]);
        let t = build_transition(&NoiseSpec::Column { eta: 0.5, sinks: None }, 8).unwrap();
        assert_eq!(t.get(0, 3), 0.25);
        assert_eq!(t.get(0, 4), 0.25);
        row_sums_ok(&t);
    }

    #[test]
    fn asymmetric_pairs_entries() {
        let t = build_transition(&NoiseSpec::asymmetric_cifar10(), 10).unwrap();
        assert_eq!(t.get(3, 3), 0.55);
        assert_eq!(t.get(3, 5), 0.45);
        assert_eq!(t.get(9, 1), 0.45);
        for c in [0, 1, 5, 6, 7, 8] {
            assert_eq!(t.get(c, c), 1.0);
        }
        row_sums_ok(&t);
    }

    #[test]
    fn cyclic_superclass_entries() {
        let spec = NoiseSpec::CyclicSuperclass { eta: 0.45, group_size: 5 };
        let t = build_transition(&spec, 100).unwrap();
        for c in 0..100 {
            let next = c - c % 5 + (c % 5 + 1) % 5;
            assert_eq!(t.get(c, c), 0.55);
            assert_eq!(t.get(c, next), 0.45);
        }
        assert_eq!(t.get(4, 0), 0.45);
        row_sums_ok(&t);
    }

    #[test]
    fn block_superclass_entries() {
        let spec = NoiseSpec::BlockSuperclass { eta: 0.6, group_size: 5 };
        let t = build_transition(&spec, 100).unwrap();
        for c in 0..100 {
            for m in 0..100 {
                let expected = if m == c {
                    0.4
                } else if m / 5 == c / 5 {
                    0.15
                } else {
                    0.0
                };
                assert_eq!(t.get(c, m), expected);
            }
        }
        row_sums_ok(&t);
    }

    #[test]
    fn invalid_specs_rejected() {
        let bad_sink = NoiseSpec::Column { eta: 0.6, sinks: Some([3, 12]) };
        assert!(build_transition(&bad_sink, 10).is_err());
        let dup = NoiseSpec::AsymmetricPairs { eta: 0.4, pairs: vec![(1, 2), (1, 3)] };
        assert!(build_transition(&dup, 10).is_err());
        let indivisible = NoiseSpec::BlockSuperclass { eta: 0.6, group_size: 3 };
        assert!(build_transition(&indivisible, 10).is_err());
        let rate = NoiseSpec::CyclicSuperclass { eta: 1.5, group_size: 5 };
        assert!(build_transition(&rate, 10).is_err());
    }

    #[test]
    fn identity_corruption_is_a_no_op() {
        let t = TransitionMatrix::identity(4).unwrap();
        let clean: Vec<usize> = (0..1000).map(|i| i % 4).collect();
        assert_eq!(corrupt_labels(&clean, &t, 7).unwrap(), clean);
    }

    #[test]
    fn corruption_is_seeded_and_shard_independent() {
        let t = build_transition(&NoiseSpec::column_cifar10(), 10).unwrap();
        let clean: Vec<usize> = (0..5000).map(|i| i % 10).collect();
        let a = corrupt_labels_with(Execution::Sequential, &clean, &t, 11).unwrap();
        let b = corrupt_labels_with(Execution::Parallel, &clean, &t, 11).unwrap();
        assert_eq!(a, b);
        // a prefix is corrupted identically
        let c = corrupt_labels(&clean[..100], &t, 11).unwrap();
        assert_eq!(&a[..100], &c[..]);
        assert_ne!(a, corrupt_labels(&clean, &t, 12).unwrap());
    }

    #[test]
    fn text_round_trip() {
        let t = build_transition(&NoiseSpec::column_cifar10(), 10).unwrap();
        let back = TransitionMatrix::from_text(&t.to_text()).unwrap();
        assert_eq!(back.probs, t.probs);
        assert!(TransitionMatrix::from_text("0.5 0.4\n0 1\n").is_err());
    }

    #[test]
    fn spec_serializes_with_topology_tag() {
        let spec = NoiseSpec::column_cifar10();
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"topology\":\"column\""));
        let back: NoiseSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
    }
}
