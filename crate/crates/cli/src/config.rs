//! Flat run configuration shared by every command.
//!
//! Resolution order: command defaults, then the `--config` file, then flags.
//! The resolved value is written next to the outputs as `config.json`, and
//! feeding that file back through `--config` reproduces the run.

use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use fgflow::flow::{NoiseSchedule, Preconditioner, StepSchedule};
use fgflow::lifting::{EmbeddingKind, DEFAULT_REG_EPS};
use fgflow::scenario::MixtureScenario;
use fgflow::{FlowConfig, KernelParams};
use serde::{Deserialize, Serialize};
use serde_json::Value;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum StepScheduleKind {
    Constant,
    Harmonic,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum NoiseScheduleKind {
    Constant,
    InverseSqrt,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum PreconditionerKind {
    None,
    Rms,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum LabelMethod {
    Lp,
    Knn,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "snake_case")]
pub enum EmbeddingChoice {
    Identity,
    Pca,
}

impl From<EmbeddingChoice> for EmbeddingKind {
    fn from(e: EmbeddingChoice) -> Self {
        match e {
            EmbeddingChoice::Identity => EmbeddingKind::Identity,
            EmbeddingChoice::Pca => EmbeddingKind::Pca,
        }
    }
}

/// Every knob of every command. Unused fields are harmless; unknown keys in
/// a config file are rejected.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,

    pub step_size: f64,
    pub step_schedule: StepScheduleKind,
    /// Harmonic schedule constant.
    pub tau0: f64,
    pub noise_level: f64,
    pub noise_schedule: NoiseScheduleKind,
    pub iterations: usize,
    pub backoff: f64,
    pub max_retries: usize,
    pub seed: u64,
    pub preconditioner: PreconditionerKind,
    pub spd_floor: f64,
    pub workers: usize,
    pub record_timing: bool,
    /// Write a measure snapshot every this many iterations; 0 disables.
    pub snapshot_every: usize,

    pub embedding: EmbeddingChoice,
    /// Embedding dimension; defaults to the feature dimension.
    pub embedding_dim: Option<usize>,
    pub reg_eps: f64,

    pub label_method: LabelMethod,
    pub knn_k: usize,

    pub scenario: Option<MixtureScenario>,
    pub dataset: Option<PathBuf>,
    pub source: Option<PathBuf>,
    pub target: Option<PathBuf>,
    pub measure: Option<PathBuf>,
    pub moments: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        let flow = FlowConfig::<f64>::new(0.05, 2000);
        Self {
            alpha: 0.3,
            beta: 0.15,
            gamma: 1.0,
            step_size: flow.step_size,
            step_schedule: StepScheduleKind::Constant,
            tau0: 100.0,
            noise_level: 0.0,
            noise_schedule: NoiseScheduleKind::Constant,
            iterations: flow.iterations,
            backoff: flow.backoff,
            max_retries: flow.max_retries,
            seed: 0,
            preconditioner: PreconditionerKind::None,
            spd_floor: flow.spd_floor,
            workers: 1,
            record_timing: false,
            snapshot_every: 0,
            embedding: EmbeddingChoice::Identity,
            embedding_dim: None,
            reg_eps: DEFAULT_REG_EPS,
            label_method: LabelMethod::Lp,
            knn_k: 5,
            scenario: None,
            dataset: None,
            source: None,
            target: None,
            measure: None,
            moments: None,
        }
    }
}

impl RunConfig {
    /// Defaults for a mixture scenario: its reference hyperparameters and a
    /// snapshot every 100 iterations.
    pub fn for_scenario(scenario: MixtureScenario) -> Self {
        let d = scenario.defaults();
        Self {
            alpha: d.alpha,
            beta: d.beta,
            gamma: d.gamma,
            step_size: d.step_size,
            noise_level: d.noise_level,
            iterations: d.iterations,
            snapshot_every: 100,
            scenario: Some(scenario),
            ..Self::default()
        }
    }

    /// Overlays the keys present in a JSON config file onto `self`.
    pub fn merge_file(self, path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let file: Value = serde_json::from_str(&text).map_err(|e| ParseFailure(format!("{}: {e}", path.display())))?;
        self.merge_value(file).map_err(|e| ParseFailure(format!("{}: {e}", path.display())).into())
    }

    pub fn merge_value(self, file: Value) -> std::result::Result<Self, String> {
        let Value::Object(overrides) = file else {
            return Err("config must be a JSON object".into());
        };
        let mut base = serde_json::to_value(self).map_err(|e| e.to_string())?;
        let obj = base.as_object_mut().expect("config serializes to an object");
        for (k, v) in overrides {
            if !obj.contains_key(&k) {
                return Err(format!("unknown config key {k:?}"));
            }
            obj.insert(k, v);
        }
        serde_json::from_value(base).map_err(|e| e.to_string())
    }

    pub fn kernel(&self) -> Result<KernelParams<f64>> {
        Ok(KernelParams::new(self.alpha, self.beta, self.gamma)?)
    }

    pub fn flow(&self) -> Result<FlowConfig<f64>> {
        let mut f = FlowConfig::new(self.step_size, self.iterations)
            .with_noise(self.noise_level)
            .with_seed(self.seed);
        f.step_schedule = match self.step_schedule {
            StepScheduleKind::Constant => StepSchedule::Constant,
            StepScheduleKind::Harmonic => StepSchedule::Harmonic { tau0: self.tau0 },
        };
        f.noise_schedule = match self.noise_schedule {
            NoiseScheduleKind::Constant => NoiseSchedule::Constant,
            NoiseScheduleKind::InverseSqrt => NoiseSchedule::InverseSqrt,
        };
        f.preconditioner = match self.preconditioner {
            PreconditionerKind::None => Preconditioner::None,
            PreconditionerKind::Rms => Preconditioner::Rms,
        };
        f.backoff = self.backoff;
        f.max_retries = self.max_retries;
        f.spd_floor = self.spd_floor;
        f.workers = self.workers;
        f.record_timing = self.record_timing;
        f.validate()?;
        Ok(f)
    }

    pub fn require<'a>(&self, field: &'a Option<PathBuf>, name: &str) -> Result<&'a Path> {
        match field {
            Some(p) if !p.as_os_str().is_empty() => Ok(p),
            _ => bail!(UsageFailure(format!("missing required input --{name}"))),
        }
    }

    pub fn write(&self, dir: &Path) -> Result<()> {
        let mut text = serde_json::to_string_pretty(self)?;
        text.push('\n');
        std::fs::write(dir.join("config.json"), text)?;
        Ok(())
    }
}

/// A malformed config or input file.
#[derive(Debug, thiserror::Error)]
#[error("parse error: {0}")]
pub struct ParseFailure(pub String);

/// A missing or contradictory argument.
#[derive(Debug, thiserror::Error)]
#[error("{0}")]
pub struct UsageFailure(pub String);

#[cfg(test)]
mod tests {
    use super::*;
    use serde_json::json;

    #[test]
    fn file_keys_override_defaults() {
        let c = RunConfig::default().merge_value(json!({"alpha": 2.0, "label_method": "knn"})).unwrap();
        assert_eq!(c.alpha, 2.0);
        assert_eq!(c.label_method, LabelMethod::Knn);
        assert_eq!(c.beta, RunConfig::default().beta);
    }

    #[test]
    fn unknown_keys_and_bad_values_are_rejected() {
        assert!(RunConfig::default().merge_value(json!({"alpah": 2.0})).is_err());
        assert!(RunConfig::default().merge_value(json!({"iterations": -1})).is_err());
        assert!(RunConfig::default().merge_value(json!([1])).is_err());
    }

    #[test]
    fn resolved_config_round_trips() {
        let mut c = RunConfig::for_scenario(MixtureScenario::TwoToFour);
        c.embedding_dim = Some(3);
        c.target = Some("t.jsonl".into());
        let back: RunConfig = serde_json::from_str(&serde_json::to_string(&c).unwrap()).unwrap();
        assert_eq!(back, c);
        assert_eq!(RunConfig::default().merge_value(serde_json::to_value(&c).unwrap()).unwrap(), c);
    }

    #[test]
    fn scenario_defaults_carry_reference_values() {
        let c = RunConfig::for_scenario(MixtureScenario::TwoToFour);
        assert_eq!((c.alpha, c.beta, c.gamma, c.step_size, c.noise_level, c.iterations), (0.3, 0.1, 0.5, 0.03, 0.1, 2500));
        let f = c.flow().unwrap();
        assert_eq!(f.noise_level, 0.1);
        assert!(RunConfig { step_size: -1.0, ..c }.flow().is_err());
    }
}
