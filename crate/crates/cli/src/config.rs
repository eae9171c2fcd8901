//! Experiment configuration.
//!
//! A config file is a TOML document mirroring [`ExperimentConfig`]. Every
//! field is optional: the file is merged over the defaults for the selected
//! experiment, and command-line flags are applied last.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use conveyance::model::{Architecture, DEFAULT_HIDDEN};
use conveyance::noise::{build_transition, NoiseSpec};
use conveyance::train::{LossKind, LrSchedule, TrainConfig};
use conveyance::LossParams;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Toy2d,
    NoiseRecovery,
    MilToy,
    Sweep,
    LossEval,
}

impl ExperimentKind {
    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Toy2d => "toy2d",
            ExperimentKind::NoiseRecovery => "noise_recovery",
            ExperimentKind::MilToy => "mil_toy",
            ExperimentKind::Sweep => "sweep",
            ExperimentKind::LossEval => "loss_eval",
        }
    }
}

/// Dataset knobs. Each experiment reads the subset it needs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetConfig {
    pub class_count: usize,
    pub dim: usize,
    pub n_per_class: usize,
    pub test_n_per_class: usize,
    /// Distance between mixture means.
    pub separation: f64,
    /// Ring jitter in radians.
    pub angular_noise_std: f64,
    /// Side length of the decision-boundary grid.
    pub grid_resolution: usize,
    pub n_bags: usize,
    pub bag_size: usize,
    pub positive_instance_rate: f64,
    pub instance_separation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub momentum: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr_schedule: LrSchedule,
    pub architecture: Architecture,
}

impl TrainSection {
    pub fn to_config(&self, seed: u64, loss: LossKind) -> TrainConfig {
        TrainConfig {
            learning_rate: self.learning_rate,
            momentum: self.momentum,
            epochs: self.epochs,
            batch_size: self.batch_size,
            seed,
            loss,
            lr_schedule: self.lr_schedule,
            architecture: self.architecture,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossSection {
    pub alpha: f64,
    pub beta: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepGrid {
    pub alpha_values: Vec<f64>,
    pub beta_values: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub experiment: ExperimentKind,
    pub seeds: Vec<u64>,
    pub output_dir: PathBuf,
    pub dataset: DatasetConfig,
    #[serde(default)]
    pub noise: Option<NoiseSpec>,
    pub train: TrainSection,
    pub loss: LossSection,
    #[serde(default)]
    pub sweep: Option<SweepGrid>,
}

impl ExperimentConfig {
    /// Defaults for each experiment family.
    pub fn defaults(kind: ExperimentKind) -> Self {
        let mixture = DatasetConfig {
            class_count: 10,
            dim: 16,
            n_per_class: 500,
            test_n_per_class: 500,
            separation: 5.0,
            angular_noise_std: 0.15,
            grid_resolution: 64,
            n_bags: 100,
            bag_size: 50,
            positive_instance_rate: 0.2,
            instance_separation: conveyance::data::MIL_CLASS_SEPARATION,
        };
        let mlp_train = TrainSection {
            learning_rate: 0.1,
            momentum: 0.9,
            epochs: 30,
            batch_size: 128,
            lr_schedule: LrSchedule::Cosine,
            architecture: Architecture::Mlp1 {
                hidden: DEFAULT_HIDDEN,
            },
        };
        let loss = LossSection {
            alpha: 0.1,
            beta: 10.0,
        };
        let base = Self {
            experiment: kind,
            seeds: vec![0, 1, 2],
            output_dir: PathBuf::from(format!("results/{}", kind.name())),
            dataset: mixture,
            noise: None,
            train: mlp_train,
            loss,
            sweep: None,
        };
        match kind {
            ExperimentKind::NoiseRecovery => Self {
                noise: Some(NoiseSpec::column_cifar10()),
                ..base
            },
            ExperimentKind::Sweep => Self {
                noise: Some(NoiseSpec::column_cifar10()),
                sweep: Some(SweepGrid {
                    alpha_values: vec![1e-2, 1e-1, 1.0, 10.0, 1e2],
                    beta_values: vec![1e-2, 1e-1, 1.0, 10.0, 1e2],
                }),
                ..base
            },
            ExperimentKind::Toy2d => Self {
                seeds: vec![0, 1, 2, 3, 4],
                dataset: DatasetConfig {
                    class_count: 8,
                    dim: 2,
                    n_per_class: 200,
                    test_n_per_class: 200,
                    ..base.dataset.clone()
                },
                train: TrainSection {
                    epochs: 1000,
                    lr_schedule: LrSchedule::Constant,
                    ..base.train.clone()
                },
                ..base
            },
            ExperimentKind::MilToy => Self {
                seeds: vec![0, 1, 2, 3, 4],
                dataset: DatasetConfig {
                    class_count: 2,
                    dim: 8,
                    ..base.dataset.clone()
                },
                train: TrainSection {
                    epochs: 50,
                    architecture: Architecture::Linear,
                    ..base.train.clone()
                },
                loss: LossSection { alpha: 1.0, beta: 1.0 },
                ..base
            },
            ExperimentKind::LossEval => base,
        }
    }

    /// Defaults for `kind`, overlaid with the TOML document in `text`.
    pub fn from_toml(kind: ExperimentKind, text: &str) -> Result<Self> {
        let overlay: toml::Table = toml::from_str(text).context("config is not valid TOML")?;
        if let Some(declared) = overlay.get("experiment") {
            let declared = declared.as_str().unwrap_or_default();
            if declared != kind.name() {
                bail!(
                    "config declares experiment {declared:?} but the command runs {:?}",
                    kind.name()
                );
            }
        }
        let mut base = toml::Table::try_from(Self::defaults(kind)).context("serializing defaults")?;
        merge(&mut base, overlay);
        let cfg: Self = base.try_into().context("config does not match the expected schema")?;
        Ok(cfg)
    }

    pub fn load(kind: ExperimentKind, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .with_context(|| format!("reading config {}", path.display()))?;
        Self::from_toml(kind, &text)
    }

    pub fn loss_params(&self) -> Result<LossParams> {
        Ok(LossParams::new(self.loss.alpha, self.loss.beta)?)
    }

    /// Rejects inconsistent configurations before any computation.
    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            bail!("at least one seed is required");
        }
        self.train
            .to_config(0, LossKind::CrossEntropy)
            .validate()
            .context("train section")?;
        let d = &self.dataset;
        match self.experiment {
            ExperimentKind::Toy2d => {
                if d.class_count < 3 {
                    bail!("toy2d needs at least 3 classes");
                }
                if d.grid_resolution == 0 {
                    bail!("grid_resolution must be positive");
                }
                if !(d.angular_noise_std.is_finite() && d.angular_noise_std >= 0.0) {
                    bail!("angular_noise_std must be non-negative");
                }
                self.loss_params()?;
            }
            ExperimentKind::NoiseRecovery | ExperimentKind::Sweep => {
                if d.class_count < 2 || d.dim == 0 || d.n_per_class == 0 || d.test_n_per_class == 0 {
                    bail!("mixture needs >= 2 classes, a positive dimension and sample counts");
                }
                let noise = self
                    .noise
                    .as_ref()
                    .context("this experiment needs a [noise] section")?;
                build_transition(noise, d.class_count).context("noise section")?;
                if self.experiment == ExperimentKind::Sweep {
                    let grid = self.sweep.as_ref().context("sweep needs a [sweep] section")?;
                    if grid.alpha_values.is_empty() || grid.beta_values.is_empty() {
                        bail!("sweep grid must be nonempty");
                    }
                    for &a in &grid.alpha_values {
                        for &b in &grid.beta_values {
                            LossParams::new(a, b).with_context(|| format!("sweep cell ({a}, {b})"))?;
                        }
                    }
                } else {
                    self.loss_params()?;
                }
            }
            ExperimentKind::MilToy => {
                if d.n_bags < 2 || d.bag_size == 0 || d.dim == 0 {
                    bail!("mil_toy needs at least two bags, a positive bag size and dimension");
                }
                if !(d.positive_instance_rate > 0.0 && d.positive_instance_rate <= 1.0) {
                    bail!("positive_instance_rate must lie in (0, 1]");
                }
                self.loss_params()?;
            }
            ExperimentKind::LossEval => {}
        }
        Ok(())
    }

    /// SHA-256 of the resolved config in canonical JSON. The output
    /// directory is not part of the identity.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.output_dir = PathBuf::new();
        let json = serde_json::to_vec(&c).expect("config serializes");
        hex::encode(Sha256::digest(&json))
    }
}

fn merge(base: &mut toml::Table, overlay: toml::Table) {
    for (k, v) in overlay {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) if k != "noise" && k != "architecture" => {
                merge(b, o)
            }
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}
