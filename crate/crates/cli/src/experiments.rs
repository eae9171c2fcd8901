//! Experiment drivers shared by the binary and the test suites.
//!
//! Every driver fans its independent runs (seeds, sweep cells) out through
//! [`map_indexed`] and returns records in a fixed order, so the written
//! outputs do not depend on scheduling.

use anyhow::Result;
use conveyance::data::{make_mil_bags_separated, make_ring, mixture_means, sample_mixture, LabeledDataset};
use conveyance::model::ModelParams;
use conveyance::noise::{build_transition, TransitionMatrix};
use conveyance::par::{map_indexed, Execution};
use conveyance::train::{train_and_evaluate, train_mil_instances, ExperimentReport, LossKind};
use conveyance::{q_from_transition, q_ordinal, Boundary, OrdinalWindowSpec, PlausibilityMatrix};
use serde::Serialize;

use crate::config::{ExperimentConfig, ExperimentKind};

pub const METHOD_CE: &str = "ce";
pub const METHOD_CE_CLEAN: &str = "ce_clean";
pub const METHOD_CONVEYANCE: &str = "conveyance";

/// Scalar metrics of one finished run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RunMetrics {
    pub accuracy: f64,
    pub diagonal_mass: f64,
    pub p_t: f64,
    pub p_s: f64,
    pub p_n: f64,
    pub final_train_loss: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_recall_in_negative_bags: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_recall_in_positive_bags: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_recall: Option<f64>,
}

impl RunMetrics {
    fn from_report(r: &ExperimentReport) -> Self {
        Self {
            accuracy: r.clean_test_accuracy,
            diagonal_mass: r.diagonal_mass(),
            p_t: r.mean_mass.p_t,
            p_s: r.mean_mass.p_s,
            p_n: r.mean_mass.p_n,
            final_train_loss: r.train_curve.last().copied().unwrap_or(f64::NAN),
            negative_recall_in_negative_bags: None,
            negative_recall_in_positive_bags: None,
            positive_recall: None,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RunRecord {
    pub method: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub metrics: Option<RunMetrics>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<ExperimentReport>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
    #[serde(skip)]
    pub wall_time_secs: f64,
    #[serde(skip)]
    pub model: Option<ModelParams>,
}

impl RunRecord {
    fn new(method: &str, seed: u64, loss: &LossKind) -> Self {
        let (alpha, beta) = match *loss {
            LossKind::Conveyance { alpha, beta } => (Some(alpha), Some(beta)),
            LossKind::CrossEntropy => (None, None),
        };
        Self {
            method: method.to_string(),
            seed,
            alpha,
            beta,
            metrics: None,
            report: None,
            error: None,
            wall_time_secs: 0.0,
            model: None,
        }
    }

    fn finish(mut self, outcome: conveyance::Result<(ModelParams, ExperimentReport)>) -> Self {
        match outcome {
            Ok((model, report)) => {
                self.metrics = Some(RunMetrics::from_report(&report));
                self.wall_time_secs = report.wall_time_secs;
                self.report = Some(report);
                self.model = Some(model);
            }
            Err(e) => {
                log::warn!("{} seed {} failed: {e}", self.method, self.seed);
                self.error = Some(e.to_string());
            }
        }
        self
    }

    pub fn accuracy(&self) -> Option<f64> {
        self.metrics.as_ref().map(|m| m.accuracy)
    }
}

/// Mean and sample standard deviation over the successful seeds.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Stat {
    pub mean: f64,
    pub std: Option<f64>,
    pub n: usize,
}

impl Stat {
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let std = (n > 1).then(|| {
            let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
            (ss / (n - 1) as f64).sqrt()
        });
        Some(Self { mean, std, n })
    }
}

impl std::fmt::Display for Stat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self.std {
            Some(s) => write!(f, "{:.4} ± {:.4}", self.mean, s),
            None => write!(f, "{:.4}", self.mean),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct MethodSummary {
    pub method: String,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub beta: Option<f64>,
    pub failures: usize,
    pub accuracy: Option<Stat>,
    pub diagonal_mass: Option<Stat>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_recall_in_positive_bags: Option<Stat>,
}

/// Results of any experiment driver.
#[derive(Debug, Clone, Serialize)]
pub struct ExperimentOutcome {
    pub experiment: ExperimentKind,
    pub runs: Vec<RunRecord>,
    pub summary: Vec<MethodSummary>,
    /// Decision-boundary grids, one per run in `runs` (toy2d only).
    #[serde(skip)]
    pub grids: Vec<Option<Vec<usize>>>,
}

impl ExperimentOutcome {
    fn new(experiment: ExperimentKind, runs: Vec<RunRecord>) -> Self {
        let summary = summarize(&runs);
        Self {
            experiment,
            runs,
            summary,
            grids: Vec::new(),
        }
    }

    pub fn summary_for(&self, method: &str) -> Option<&MethodSummary> {
        self.summary.iter().find(|s| s.method == method && s.alpha.is_none())
            .or_else(|| self.summary.iter().find(|s| s.method == method))
    }

    pub fn cell(&self, alpha: f64, beta: f64) -> Option<&MethodSummary> {
        self.summary
            .iter()
            .find(|s| s.alpha == Some(alpha) && s.beta == Some(beta))
    }

    pub fn mean_accuracy(&self, method: &str) -> Option<f64> {
        self.summary_for(method)?.accuracy.as_ref().map(|s| s.mean)
    }

    pub fn runs_for<'a>(&'a self, method: &'a str) -> impl Iterator<Item = &'a RunRecord> + 'a {
        self.runs.iter().filter(move |r| r.method == method)
    }
}

fn summarize(runs: &[RunRecord]) -> Vec<MethodSummary> {
    let mut keys: Vec<(String, Option<f64>, Option<f64>)> = Vec::new();
    for r in runs {
        let key = (r.method.clone(), r.alpha, r.beta);
        if !keys.contains(&key) {
            keys.push(key);
        }
    }
    keys.into_iter()
        .map(|(method, alpha, beta)| {
            let group: Vec<&RunRecord> = runs
                .iter()
                .filter(|r| r.method == method && r.alpha == alpha && r.beta == beta)
                .collect();
            let ok: Vec<&RunMetrics> = group.iter().filter_map(|r| r.metrics.as_ref()).collect();
            let collect = |f: &dyn Fn(&RunMetrics) -> Option<f64>| {
                Stat::of(&ok.iter().filter_map(|m| f(m)).collect::<Vec<_>>())
            };
            MethodSummary {
                failures: group.len() - ok.len(),
                accuracy: collect(&|m| Some(m.accuracy)),
                diagonal_mass: collect(&|m| Some(m.diagonal_mass)),
                negative_recall_in_positive_bags: collect(&|m| m.negative_recall_in_positive_bags),
                method,
                alpha,
                beta,
            }
        })
        .collect()
}

/// Independent sub-seeds for the data splits and noise of one base seed.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed ^ stream.wrapping_mul(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

const STREAM_MEANS: u64 = 1;
const STREAM_TRAIN: u64 = 2;
const STREAM_TEST: u64 = 3;
const STREAM_NOISE: u64 = 4;

/// Noisy train split, clean train split, clean test split and the noise.
pub struct MixtureSplits {
    pub clean_train: LabeledDataset,
    pub noisy_train: LabeledDataset,
    pub test: LabeledDataset,
    pub transition: TransitionMatrix,
    pub q: PlausibilityMatrix,
}

pub fn mixture_splits(cfg: &ExperimentConfig, seed: u64) -> Result<MixtureSplits> {
    let d = &cfg.dataset;
    let spec = cfg
        .noise
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("missing noise section"))?;
    let transition = build_transition(spec, d.class_count)?;
    let means = mixture_means(d.class_count, d.dim, d.separation, derive_seed(seed, STREAM_MEANS))?;
    let clean_train = sample_mixture(&means, d.dim, d.n_per_class, derive_seed(seed, STREAM_TRAIN))?;
    let test = sample_mixture(&means, d.dim, d.test_n_per_class, derive_seed(seed, STREAM_TEST))?;
    let noisy_train = clean_train
        .clone()
        .with_noise(&transition, derive_seed(seed, STREAM_NOISE))?;
    let q = q_from_transition(&transition);
    Ok(MixtureSplits {
        clean_train,
        noisy_train,
        test,
        transition,
        q,
    })
}

pub fn run(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    cfg.validate()?;
    match cfg.experiment {
        ExperimentKind::NoiseRecovery => noise_recovery(cfg, exec),
        ExperimentKind::Sweep => sweep(cfg, exec),
        ExperimentKind::Toy2d => toy2d(cfg, exec),
        ExperimentKind::MilToy => mil_toy(cfg, exec),
        ExperimentKind::LossEval => anyhow::bail!("loss_eval is not a training experiment"),
    }
}

/// CE on clean labels, CE on noisy labels and Conveyance on noisy labels,
/// all scored on a clean test split.
pub fn noise_recovery(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    let splits: Vec<MixtureSplits> = cfg
        .seeds
        .iter()
        .map(|&s| mixture_splits(cfg, s))
        .collect::<Result<_>>()?;
    let conv = LossKind::conveyance(cfg.loss_params()?);
    let jobs: Vec<(usize, &str, LossKind)> = (0..cfg.seeds.len())
        .flat_map(|i| {
            [
                (i, METHOD_CE_CLEAN, LossKind::CrossEntropy),
                (i, METHOD_CE, LossKind::CrossEntropy),
                (i, METHOD_CONVEYANCE, conv),
            ]
        })
        .collect();
    let runs = map_indexed(exec, jobs.len(), |j| {
        let (i, method, loss) = jobs[j];
        let seed = cfg.seeds[i];
        let sp = &splits[i];
        let train_set = if method == METHOD_CE_CLEAN { &sp.clean_train } else { &sp.noisy_train };
        let tc = cfg.train.to_config(seed, loss);
        RunRecord::new(method, seed, &loss).finish(train_and_evaluate(train_set, &sp.test, &sp.q, &tc))
    });
    Ok(ExperimentOutcome::new(cfg.experiment, runs))
}

/// CE baseline plus Conveyance at every grid cell, per seed.
pub fn sweep(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    let grid = cfg
        .sweep
        .as_ref()
        .ok_or_else(|| anyhow::anyhow!("missing sweep section"))?;
    let splits: Vec<MixtureSplits> = cfg
        .seeds
        .iter()
        .map(|&s| mixture_splits(cfg, s))
        .collect::<Result<_>>()?;
    let mut losses = vec![(METHOD_CE, LossKind::CrossEntropy)];
    for &alpha in &grid.alpha_values {
        for &beta in &grid.beta_values {
            losses.push((METHOD_CONVEYANCE, LossKind::Conveyance { alpha, beta }));
        }
    }
    let jobs: Vec<(usize, usize)> = (0..cfg.seeds.len())
        .flat_map(|i| (0..losses.len()).map(move |k| (i, k)))
        .collect();
    let mut runs = map_indexed(exec, jobs.len(), |j| {
        let (i, k) = jobs[j];
        let (method, loss) = losses[k];
        let seed = cfg.seeds[i];
        let sp = &splits[i];
        let tc = cfg.train.to_config(seed, loss);
        RunRecord::new(method, seed, &loss).finish(train_and_evaluate(&sp.noisy_train, &sp.test, &sp.q, &tc))
    });
    for r in &mut runs {
        r.model = None;
    }
    Ok(ExperimentOutcome::new(cfg.experiment, runs))
}

/// Mean Conveyance accuracy over seeds, as an `alpha` by `beta` matrix.
pub fn heatmap(outcome: &ExperimentOutcome, cfg: &ExperimentConfig) -> Vec<Vec<f64>> {
    let grid = cfg.sweep.as_ref().expect("sweep config");
    grid.alpha_values
        .iter()
        .map(|&a| {
            grid.beta_values
                .iter()
                .map(|&b| {
                    outcome
                        .cell(a, b)
                        .and_then(|s| s.accuracy.as_ref())
                        .map_or(f64::NAN, |s| s.mean)
                })
                .collect()
        })
        .collect()
}

/// Ring toy: CE against Conveyance with an ordinal window of one on each side.
pub fn toy2d(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    let d = &cfg.dataset;
    let q = q_ordinal(
        d.class_count,
        OrdinalWindowSpec {
            window: 1,
            boundary: Boundary::Wrap,
        },
    )?;
    let data: Vec<(LabeledDataset, LabeledDataset)> = cfg
        .seeds
        .iter()
        .map(|&s| {
            Ok((
                make_ring(d.class_count, d.n_per_class, d.angular_noise_std, derive_seed(s, STREAM_TRAIN))?,
                make_ring(d.class_count, d.test_n_per_class, d.angular_noise_std, derive_seed(s, STREAM_TEST))?,
            ))
        })
        .collect::<Result<_>>()?;
    let conv = LossKind::conveyance(cfg.loss_params()?);
    let jobs: Vec<(usize, &str, LossKind)> = (0..cfg.seeds.len())
        .flat_map(|i| [(i, METHOD_CE, LossKind::CrossEntropy), (i, METHOD_CONVEYANCE, conv)])
        .collect();
    let mut runs = map_indexed(exec, jobs.len(), |j| {
        let (i, method, loss) = jobs[j];
        let seed = cfg.seeds[i];
        let tc = cfg.train.to_config(seed, loss);
        RunRecord::new(method, seed, &loss).finish(train_and_evaluate(&data[i].0, &data[i].1, &q, &tc))
    });
    let res = d.grid_resolution;
    let grids = runs
        .iter_mut()
        .map(|r| {
            r.model.take().map(|m| {
                let points = grid_points(res);
                map_indexed(exec, points.len(), |k| m.predict(&points[k]))
            })
        })
        .collect();
    let mut outcome = ExperimentOutcome::new(cfg.experiment, runs);
    outcome.grids = grids;
    Ok(outcome)
}

/// Row-major grid over `[-1.5, 1.5]^2`, `x` varying fastest.
pub fn grid_points(resolution: usize) -> Vec<[f64; 2]> {
    let coord = |k: usize| {
        if resolution == 1 {
            0.0
        } else {
            -1.5 + 3.0 * k as f64 / (resolution - 1) as f64
        }
    };
    (0..resolution)
        .flat_map(|row| (0..resolution).map(move |col| [coord(col), coord(row)]))
        .collect()
}

/// MIL bags: instances inherit their bag label; scored on hidden truth.
pub fn mil_toy(cfg: &ExperimentConfig, exec: Execution) -> Result<ExperimentOutcome> {
    let d = &cfg.dataset;
    let bags: Vec<_> = cfg
        .seeds
        .iter()
        .map(|&s| {
            make_mil_bags_separated(
                d.n_bags,
                d.bag_size,
                d.positive_instance_rate,
                d.dim,
                d.instance_separation,
                derive_seed(s, STREAM_TRAIN),
            )
        })
        .collect::<conveyance::Result<_>>()?;
    let conv = LossKind::conveyance(cfg.loss_params()?);
    let jobs: Vec<(usize, &str, LossKind)> = (0..cfg.seeds.len())
        .flat_map(|i| [(i, METHOD_CE, LossKind::CrossEntropy), (i, METHOD_CONVEYANCE, conv)])
        .collect();
    let runs = map_indexed(exec, jobs.len(), |j| {
        let (i, method, loss) = jobs[j];
        let seed = cfg.seeds[i];
        let tc = cfg.train.to_config(seed, loss);
        let mut rec = RunRecord::new(method, seed, &loss);
        match train_mil_instances(&bags[i], &tc) {
            Ok(mil) => {
                let mut m = RunMetrics::from_report(&mil.report);
                m.negative_recall_in_negative_bags = Some(mil.negative_recall_in_negative_bags);
                m.negative_recall_in_positive_bags = Some(mil.negative_recall_in_positive_bags);
                m.positive_recall = Some(mil.positive_recall);
                rec.metrics = Some(m);
                rec.wall_time_secs = mil.report.wall_time_secs;
                rec.report = Some(mil.report);
            }
            Err(e) => rec.error = Some(e.to_string()),
        }
        rec
    });
    Ok(ExperimentOutcome::new(cfg.experiment, runs))
}
