//! Seeded synthetic datasets.

use std::f64::consts::TAU;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand::seq::SliceRandom;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{arg_err, Result};
use crate::noise::{corrupt_labels, TransitionMatrix};

/// Features with clean and optionally corrupted labels.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    /// Row-major `len x dim`.
    features: Vec<f64>,
    dim: usize,
    clean_labels: Vec<usize>,
    noisy_labels: Option<Vec<usize>>,
    class_count: usize,
}

impl LabeledDataset {
    pub fn new(
        features: Vec<f64>,
        dim: usize,
        clean_labels: Vec<usize>,
        noisy_labels: Option<Vec<usize>>,
        class_count: usize,
    ) -> Result<Self> {
        if dim == 0 || class_count == 0 {
            return arg_err("dataset needs a positive feature dimension and class count");
        }
        if features.len() != dim * clean_labels.len() {
            return arg_err(format!(
                "{} feature values do not form {} rows of dimension {dim}",
                features.len(),
                clean_labels.len()
            ));
        }
        for labels in std::iter::once(&clean_labels).chain(noisy_labels.as_ref()) {
            if labels.len() != clean_labels.len() {
                return arg_err("noisy and clean label arrays differ in length");
            }
            if let Some(&bad) = labels.iter().find(|&&l| l >= class_count) {
                return arg_err(format!("label {bad} out of range for {class_count} classes"));
            }
        }
        Ok(Self {
            features,
            dim,
            clean_labels,
            noisy_labels,
            class_count,
        })
    }

    pub fn len(&self) -> usize {
        self.clean_labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clean_labels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn class_count(&self) -> usize {
        self.class_count
    }

    pub fn feature(&self, i: usize) -> &[f64] {
        &self.features[i * self.dim..(i + 1) * self.dim]
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }

    pub fn clean_labels(&self) -> &[usize] {
        &self.clean_labels
    }

    pub fn noisy_labels(&self) -> Option<&[usize]> {
        self.noisy_labels.as_deref()
    }

    /// Labels used for supervision: noisy when present, clean otherwise.
    pub fn training_labels(&self) -> &[usize] {
        self.noisy_labels.as_deref().unwrap_or(&self.clean_labels)
    }

    /// Replaces the noisy labels by a fresh corruption of the clean ones.
    /// Features are untouched.
    pub fn with_noise(mut self, t: &TransitionMatrix, seed: u64) -> Result<Self> {
        if t.class_count() != self.class_count {
            return arg_err(format!(
                "transition matrix has {} classes, dataset has {}",
                t.class_count(),
                self.class_count
            ));
        }
        self.noisy_labels = Some(corrupt_labels(&self.clean_labels, t, seed)?);
        Ok(self)
    }

    pub fn with_noisy_labels(mut self, labels: Vec<usize>) -> Result<Self> {
        let ds = Self::new(
            std::mem::take(&mut self.features),
            self.dim,
            std::mem::take(&mut self.clean_labels),
            Some(labels),
            self.class_count,
        )?;
        Ok(ds)
    }

    /// Header `f0,...,f{d-1},clean_label,noisy_label`, one row per sample.
    /// The noisy column is empty when no corruption was applied.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        for j in 0..self.dim {
            let _ = write!(out, "f{j},");
        }
        out.push_str("clean_label,noisy_label\n");
        for i in 0..self.len() {
            for v in self.feature(i) {
                let _ = write!(out, "{v},");
            }
            let _ = write!(out, "{},", self.clean_labels[i]);
            if let Some(n) = &self.noisy_labels {
                let _ = write!(out, "{}", n[i]);
            }
            out.push('\n');
        }
        out
    }
}

/// One MIL bag.
#[derive(Debug, Clone, PartialEq)]
pub struct Bag {
    /// Row-major `instances x dim`.
    pub features: Vec<f64>,
    pub label: usize,
    /// Hidden per-instance truth, for evaluation only.
    pub instance_truth: Vec<usize>,
}

impl Bag {
    pub fn len(&self) -> usize {
        self.instance_truth.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instance_truth.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BagDataset {
    pub bags: Vec<Bag>,
    pub dim: usize,
}

impl BagDataset {
    pub fn instance_count(&self) -> usize {
        self.bags.iter().map(Bag::len).sum()
    }
}

fn rng_for(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn normal(rng: &mut ChaCha8Rng) -> f64 {
    StandardNormal.sample(rng)
}

/// Points on the unit circle whose un-jittered angle picks the class.
///
/// Class `c` owns the sector `[2 pi c / C, 2 pi (c + 1) / C)`. Each point draws
/// a uniform angle in its sector, then Gaussian angular jitter with standard
/// deviation `angular_noise_std` radians moves it, possibly across a boundary.
pub fn make_ring(
    class_count: usize,
    n_per_class: usize,
    angular_noise_std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if class_count < 3 {
        return arg_err(format!("ring needs at least 3 classes, got {class_count}"));
    }
    if !(angular_noise_std.is_finite() && angular_noise_std >= 0.0) {
        return arg_err("angular noise must be finite and non-negative");
    }
    let mut rng = rng_for(seed);
    let width = TAU / class_count as f64;
    let mut features = Vec::with_capacity(2 * class_count * n_per_class);
    let mut labels = Vec::with_capacity(class_count * n_per_class);
    for c in 0..class_count {
        for _ in 0..n_per_class {
            let base = (c as f64 + rng.random::<f64>()) * width;
            let theta = base + angular_noise_std * normal(&mut rng);
            features.push(theta.cos());
            features.push(theta.sin());
            labels.push(c);
        }
    }
    LabeledDataset::new(features, 2, labels, None, class_count)
}

/// Sector index of a point on the plane, for a ring of `class_count` classes.
pub fn ring_sector(x: f64, y: f64, class_count: usize) -> usize {
    let angle = y.atan2(x).rem_euclid(TAU);
    ((angle / (TAU / class_count as f64)) as usize).min(class_count - 1)
}

/// Isotropic unit-variance Gaussian classes.
///
/// When `C <= d` the means are scaled orthonormal vectors, so every pair sits
/// exactly `class_separation` apart. Otherwise random directions are rescaled
/// so the closest pair is `class_separation` apart.
pub fn make_gaussian_mixture(
    class_count: usize,
    dim: usize,
    n_per_class: usize,
    class_separation: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    let means = mixture_means(class_count, dim, class_separation, seed)?;
    sample_mixture(&means, dim, n_per_class, seed.wrapping_add(0x9e37_79b9_7f4a_7c15))
}

/// Class means for [`make_gaussian_mixture`], so train and test splits can
/// share them while drawing different samples.
pub fn mixture_means(
    class_count: usize,
    dim: usize,
    class_separation: f64,
    seed: u64,
) -> Result<Vec<Vec<f64>>> {
    if class_count == 0 || dim == 0 {
        return arg_err("mixture needs at least one class and one dimension");
    }
    if !(class_separation.is_finite() && class_separation >= 0.0) {
        return arg_err("class separation must be finite and non-negative");
    }
    let mut rng = rng_for(seed);
    let mut dirs: Vec<Vec<f64>> = Vec::with_capacity(class_count);
    for _ in 0..class_count {
        let mut v: Vec<f64> = (0..dim).map(|_| normal(&mut rng)).collect();
        if dirs.len() < dim {
            for u in &dirs {
                let proj: f64 = v.iter().zip(u).map(|(a, b)| a * b).sum();
                v.iter_mut().zip(u).for_each(|(a, b)| *a -= proj * b);
            }
        }
        let norm = v.iter().map(|a| a * a).sum::<f64>().sqrt();
        v.iter_mut().for_each(|a| *a /= norm);
        dirs.push(v);
    }
    let scale = if class_count <= dim {
        class_separation / std::f64::consts::SQRT_2
    } else {
        let mut min_d = f64::INFINITY;
        for i in 0..class_count {
            for j in 0..i {
                let d = dirs[i]
                    .iter()
                    .zip(&dirs[j])
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                min_d = min_d.min(d);
            }
        }
        class_separation / min_d
    };
    Ok(dirs
        .into_iter()
        .map(|v| v.into_iter().map(|a| a * scale).collect())
        .collect())
}

/// Draws `n_per_class` unit-variance samples around each mean.
pub fn sample_mixture(
    means: &[Vec<f64>],
    dim: usize,
    n_per_class: usize,
    seed: u64,
) -> Result<LabeledDataset> {
    let mut rng = rng_for(seed);
    let mut features = Vec::with_capacity(means.len() * n_per_class * dim);
    let mut labels = Vec::with_capacity(means.len() * n_per_class);
    for (c, mean) in means.iter().enumerate() {
        if mean.len() != dim {
            return arg_err(format!("mean {c} has dimension {}, expected {dim}", mean.len()));
        }
        for _ in 0..n_per_class {
            features.extend(mean.iter().map(|m| m + normal(&mut rng)));
            labels.push(c);
        }
    }
    LabeledDataset::new(features, dim, labels, None, means.len())
}

/// One-dimensional ordinal classes centered at `0, 1, ..., C - 1`.
pub fn make_ordinal_line(
    class_count: usize,
    n_per_class: usize,
    overlap_std: f64,
    seed: u64,
) -> Result<LabeledDataset> {
    if class_count < 2 {
        return arg_err(format!("ordinal line needs at least 2 classes, got {class_count}"));
    }
    if !(overlap_std.is_finite() && overlap_std >= 0.0) {
        return arg_err("overlap std must be finite and non-negative");
    }
    let mut rng = rng_for(seed);
    let mut features = Vec::with_capacity(class_count * n_per_class);
    let mut labels = Vec::with_capacity(class_count * n_per_class);
    for c in 0..class_count {
        for _ in 0..n_per_class {
            features.push(c as f64 + overlap_std * normal(&mut rng));
            labels.push(c);
        }
    }
    LabeledDataset::new(features, 1, labels, None, class_count)
}

/// Distance between the negative and positive instance means.
pub const MIL_CLASS_SEPARATION: f64 = 2.0;

/// Synthetic MIL bags with the default instance separation.
pub fn make_mil_bags(
    n_bags: usize,
    bag_size: usize,
    positive_instance_rate: f64,
    dim: usize,
    seed: u64,
) -> Result<BagDataset> {
    make_mil_bags_separated(n_bags, bag_size, positive_instance_rate, dim, MIL_CLASS_SEPARATION, seed)
}

/// Synthetic MIL bags.
///
/// Odd-indexed bags are positive and hold `round(rate * bag_size)` (at least
/// one) truly positive instances at random positions; the rest of a positive
/// bag and every negative bag are truly negative. Instances are unit-variance
/// Gaussians whose class means lie `separation` apart along the diagonal.
pub fn make_mil_bags_separated(
    n_bags: usize,
    bag_size: usize,
    positive_instance_rate: f64,
    dim: usize,
    separation: f64,
    seed: u64,
) -> Result<BagDataset> {
    if !(positive_instance_rate > 0.0 && positive_instance_rate <= 1.0) {
        return arg_err(format!(
            "positive instance rate must lie in (0, 1], got {positive_instance_rate}"
        ));
    }
    if bag_size == 0 || dim == 0 {
        return arg_err("bags need at least one instance and one feature");
    }
    let mut rng = rng_for(seed);
    let offset = 0.5 * separation / (dim as f64).sqrt();
    let n_pos = ((positive_instance_rate * bag_size as f64).round() as usize).clamp(1, bag_size);
    let mut bags = Vec::with_capacity(n_bags);
    for b in 0..n_bags {
        let label = b % 2;
        let mut truth = vec![0usize; bag_size];
        if label == 1 {
            truth[..n_pos].iter_mut().for_each(|t| *t = 1);
            truth.shuffle(&mut rng);
        }
        let mut features = Vec::with_capacity(bag_size * dim);
        for &t in &truth {
            let sign = if t == 1 { 1.0 } else { -1.0 };
            features.extend((0..dim).map(|_| sign * offset + normal(&mut rng)));
        }
        bags.push(Bag {
            features,
            label,
            instance_truth: truth,
        });
    }
    Ok(BagDataset { bags, dim })
}
