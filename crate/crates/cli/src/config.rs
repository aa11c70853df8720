//! Experiment configuration: a sectioned `key = value` file.

use std::fs::File;
use std::io::BufReader;
use std::path::{Path, PathBuf};

use metrix::data::{Dataset, GaussianSpec, SamplerConfig};
use metrix::loss::LossConfig;
use metrix::mixup::MixupType;
use metrix::model::ModelConfig;
use metrix::trainer::{MixupConfig, OptimizerConfig, TrainConfig};
use serde::{Deserialize, Serialize};

use crate::CliError;

/// Environment variable that overrides `trainer.seed`.
pub const SEED_ENV: &str = "METRIX_SEED";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Examples file; when unset the Gaussian generator below is used.
    pub path: Option<PathBuf>,
    /// Train class ids; defaults to `split.txt` next to `path`.
    pub split: Option<PathBuf>,
    pub classes: usize,
    pub per_class: usize,
    pub dim: usize,
    pub center_scale: f64,
    pub sigma: f64,
    pub seed: u64,
}

impl Default for DataSection {
    fn default() -> Self {
        let g = GaussianSpec::default();
        Self {
            path: None,
            split: None,
            classes: g.classes,
            per_class: g.per_class,
            dim: g.dim,
            center_scale: g.center_scale,
            sigma: g.sigma,
            seed: g.seed,
        }
    }
}

impl DataSection {
    pub fn spec(&self) -> GaussianSpec {
        GaussianSpec {
            classes: self.classes,
            per_class: self.per_class,
            dim: self.dim,
            center_scale: self.center_scale,
            sigma: self.sigma,
            seed: self.seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainerSection {
    pub epochs: usize,
    pub seed: u64,
    pub eval_every: usize,
    pub steps_per_epoch: Option<usize>,
    pub reservoir: usize,
}

impl Default for TrainerSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            epochs: t.epochs,
            seed: t.seed,
            eval_every: t.eval_every,
            steps_per_epoch: t.steps_per_epoch,
            reservoir: t.reservoir,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PositivitySection {
    /// `start:end:step`
    pub grid: String,
    pub n: usize,
    pub mix_type: MixupType,
    pub seed: u64,
}

impl Default for PositivitySection {
    fn default() -> Self {
        Self {
            grid: "0.0:1.0:0.1".into(),
            n: 2000,
            mix_type: MixupType::Embedding,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblateSection {
    /// Runs per value with consecutive trainer seeds; rows report the mean.
    pub repeats: usize,
}

impl Default for AblateSection {
    fn default() -> Self {
        Self { repeats: 1 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputSection {
    pub dir: PathBuf,
}

impl Default for OutputSection {
    fn default() -> Self {
        Self {
            dir: PathBuf::from("run"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub data: DataSection,
    pub model: ModelConfig,
    pub loss: LossConfig,
    pub mixup: MixupConfig,
    pub batch: SamplerConfig,
    pub optimizer: OptimizerConfig,
    pub trainer: TrainerSection,
    pub positivity: PositivitySection,
    pub ablate: AblateSection,
    pub output: OutputSection,
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let de = toml::Deserializer::parse(text)
            .map_err(|e| CliError::Config(e.to_string().trim().to_string()))?;
        let cfg: Self = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let inner = e.into_inner().to_string();
            CliError::Config(format!("{path}: {}", inner.trim()))
        })?;
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        Self::parse(&text)
    }

    /// Semantic checks, reported with the offending section.
    fn check(&self) -> Result<(), CliError> {
        let section =
            |name: &'static str| move |e: metrix::Error| CliError::Config(format!("{name}: {e}"));
        self.loss.resolve().map_err(section("loss.name"))?;
        self.batch.validate().map_err(section("batch"))?;
        if self.ablate.repeats == 0 {
            return Err(CliError::Config(
                "ablate.repeats: must be at least 1".into(),
            ));
        }
        self.train_config().validate().map_err(section("trainer"))?;
        Ok(())
    }

    /// Applies the seed override from the environment.
    pub fn with_env_seed(mut self) -> Result<Self, CliError> {
        if let Ok(v) = std::env::var(SEED_ENV) {
            self.trainer.seed = v.trim().parse().map_err(|_| {
                CliError::Config(format!("{SEED_ENV}: not an unsigned integer: `{v}`"))
            })?;
        }
        Ok(self)
    }

    /// The same configuration with every defaulted loss hyperparameter filled in.
    pub fn resolved(&self) -> Result<Self, CliError> {
        let (loss, _) = self
            .loss
            .resolve()
            .map_err(|e| CliError::Config(format!("loss.name: {e}")))?;
        Ok(Self {
            loss,
            ..self.clone()
        })
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            epochs: self.trainer.epochs,
            seed: self.trainer.seed,
            eval_every: self.trainer.eval_every,
            steps_per_epoch: self.trainer.steps_per_epoch,
            reservoir: self.trainer.reservoir,
            model: self.model.clone(),
            batch: self.batch.clone(),
            loss: self.loss.clone(),
            mixup: self.mixup.clone(),
            optimizer: self.optimizer.clone(),
        }
    }

    /// Loads or generates the dataset; file paths are relative to `base`.
    pub fn dataset(&self, base: &Path) -> Result<Dataset, CliError> {
        match &self.data.path {
            None => Ok(Dataset::generate_gaussian(&self.data.spec())
                .map_err(|e| CliError::Config(format!("data: {e}")))?),
            Some(p) => {
                let examples = base.join(p);
                let split = match &self.data.split {
                    Some(s) => base.join(s),
                    None => examples.with_file_name("split.txt"),
                };
                let open = |p: &Path| {
                    File::open(p)
                        .map(BufReader::new)
                        .map_err(|e| CliError::io(p, e))
                };
                Dataset::read(open(&examples)?, open(&split)?).map_err(|e| {
                    CliError::Config(format!("data.path: {}: {e}", examples.display()))
                })
            }
        }
    }

    pub fn run_dir(&self, base: &Path) -> PathBuf {
        base.join(&self.output.dir)
    }
}
