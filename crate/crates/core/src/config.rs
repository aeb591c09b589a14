//! Experiment configuration.
//!
//! A config is a JSON object; every field is optional and falls back to the
//! defaults below. The top-level `seed` is the only seed that matters:
//! [`validate_config`] overwrites every nested `seed` with a child seed
//! derived from it, so one number reproduces a whole run.
//!
//! ```
//! let cfg = hvn::config::validate_config("{}").unwrap();
//! assert_eq!(cfg.fsl.lambda2, 10.0);
//! assert_eq!(cfg.gan.batch_size, 128);
//!
//! let err = hvn::config::validate_config(r#"{"fsl": {"lambda2": -1}}"#).unwrap_err();
//! assert!(err.to_string().contains("fsl.lambda2"));
//! ```

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::data::{generate_synthetic, load_features, split_classes, Dataset, SplitSpec, SynthSpec};
use crate::error::{Error, Result};
use crate::eval::{Scenario, ScenarioTag};
use crate::fewshot::FslTrainConfig;
use crate::halluc::{CmmGan, GanTrainConfig, Hallucinator, StochasticHallucinator};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    Synthetic(SynthSpec),
    /// `.hvnf` or `.csv` feature file.
    File(PathBuf),
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(SynthSpec::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitConfig {
    pub novel_count: usize,
    /// Explicit base and novel classes; overrides `novel_count`.
    pub classes: Option<SplitSpec>,
    pub seed: u64,
}

impl Default for SplitConfig {
    fn default() -> Self {
        Self {
            novel_count: 5,
            classes: None,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub shots: Vec<usize>,
    pub tags: Vec<ScenarioTag>,
    pub episode_count: usize,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            shots: vec![1, 5, 10, 15, 20],
            tags: vec![ScenarioTag::AudioPlusHalVisual, ScenarioTag::VisualPlusHalAudio],
            episode_count: 600,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub data: DataSource,
    pub split: SplitConfig,
    pub gan: GanTrainConfig,
    pub fsl: FslTrainConfig,
    pub scenarios: Vec<Scenario>,
    pub ablation: AblationConfig,
    /// Test-time hallucination: 0 uses mean mode (`z = 0`), otherwise the
    /// average of this many stochastic draws per sample.
    pub hallucination_draws: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let mut cfg = Self {
            seed: 0,
            data: DataSource::default(),
            split: SplitConfig::default(),
            gan: GanTrainConfig::default(),
            fsl: FslTrainConfig::default(),
            scenarios: ScenarioTag::ALL.iter().map(|&t| Scenario::new(t)).collect(),
            ablation: AblationConfig::default(),
            hallucination_draws: 0,
            output_dir: PathBuf::from("runs/hvn"),
        };
        cfg.derive_seeds();
        cfg
    }
}

/// Parses and range-checks a JSON config. Errors carry the field path.
pub fn validate_config(raw: &str) -> Result<ExperimentConfig> {
    let de = &mut serde_json::Deserializer::from_str(raw);
    let mut cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        let field = if path == "." { "config".to_string() } else { path };
        Error::config(field, e.into_inner().to_string())
    })?;
    cfg.derive_seeds();
    cfg.validate()?;
    Ok(cfg)
}

pub fn load_config(path: impl AsRef<Path>) -> Result<ExperimentConfig> {
    validate_config(&std::fs::read_to_string(path)?)
}

impl ExperimentConfig {
    /// The hallucinator evaluation and export use for `gan`.
    pub fn hallucinator<'a>(&self, gan: &'a CmmGan) -> Box<dyn Hallucinator + 'a> {
        match self.hallucination_draws {
            0 => Box::new(gan),
            draws => Box::new(StochasticHallucinator {
                gan,
                draws,
                seed: rng::child_seed(self.seed, "hallucinate"),
            }),
        }
    }

    /// Replaces the master seed and re-derives every phase seed from it.
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self.derive_seeds();
        self
    }

    fn derive_seeds(&mut self) {
        let s = self.seed;
        if let DataSource::Synthetic(spec) = &mut self.data {
            spec.seed = rng::child_seed(s, "data");
        }
        self.split.seed = rng::child_seed(s, "split");
        self.gan.seed = rng::child_seed(s, "gan");
        self.fsl.seed = rng::child_seed(s, "fsl");
        let eval = rng::child_seed(s, "eval");
        for sc in &mut self.scenarios {
            sc.seed = eval;
        }
    }

    pub fn validate(&self) -> Result<()> {
        if let DataSource::Synthetic(spec) = &self.data {
            spec.validate().map_err(|e| prefix(e, "data.synthetic."))?;
            let n = spec.class_count;
            match &self.split.classes {
                Some(classes) => classes.validate(n)?,
                None if self.split.novel_count == 0 || self.split.novel_count >= n => {
                    return Err(Error::config(
                        "split.novel_count",
                        format!("must be in 1..{n}, got {}", self.split.novel_count),
                    ))
                }
                None => {}
            }
        }
        self.gan.validate()?;
        self.fsl.validate()?;
        if self.scenarios.is_empty() {
            return Err(Error::config("scenarios", "list is empty"));
        }
        for (i, sc) in self.scenarios.iter().enumerate() {
            sc.validate().map_err(|e| rename(e, "scenario.", &format!("scenarios[{i}].")))?;
        }
        let ab = &self.ablation;
        if ab.shots.is_empty() {
            return Err(Error::config("ablation.shots", "list is empty"));
        }
        if let Some(i) = ab.shots.iter().position(|&s| s == 0) {
            return Err(Error::config(format!("ablation.shots[{i}]"), "must be positive"));
        }
        if ab.tags.is_empty() {
            return Err(Error::config("ablation.tags", "list is empty"));
        }
        if ab.episode_count == 0 {
            return Err(Error::config("ablation.episode_count", "must be positive"));
        }
        Ok(())
    }

    /// Generates or loads the dataset.
    pub fn load_data(&self) -> Result<Dataset> {
        match &self.data {
            DataSource::Synthetic(spec) => generate_synthetic(spec).map_err(|e| prefix(e, "data.synthetic.")),
            DataSource::File(path) => load_features(path),
        }
    }

    pub fn split_for(&self, dataset: &Dataset) -> Result<SplitSpec> {
        match &self.split.classes {
            Some(classes) => {
                classes.validate(dataset.class_count())?;
                Ok(classes.clone())
            }
            None => split_classes(dataset, self.split.novel_count, self.split.seed),
        }
    }

    /// Everything that determines a result, minus output paths.
    pub fn fingerprint_context(&self) -> impl Serialize + '_ {
        #[derive(Serialize)]
        struct Ctx<'a> {
            seed: u64,
            data: &'a DataSource,
            split: &'a SplitConfig,
            gan: &'a GanTrainConfig,
            fsl: &'a FslTrainConfig,
            hallucination_draws: usize,
        }
        Ctx {
            seed: self.seed,
            data: &self.data,
            split: &self.split,
            gan: &self.gan,
            fsl: &self.fsl,
            hallucination_draws: self.hallucination_draws,
        }
    }
}

fn prefix(e: Error, p: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: format!("{p}{field}"),
            message,
        },
        other => other,
    }
}

fn rename(e: Error, from: &str, to: &str) -> Error {
    match e {
        Error::Config { field, message } => Error::Config {
            field: field.strip_prefix(from).map_or(field.clone(), |rest| format!("{to}{rest}")),
            message,
        },
        other => other,
    }
}
