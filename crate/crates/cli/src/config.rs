//! The single run configuration. Every section and field is optional in the TOML
//! file; missing values take the defaults below.

use std::path::Path;

use ietp_core::data::{GridSpec, LabelParams, SampleConfig, SplitMode};
use ietp_core::evaluation::EvalOptions;
use ietp_core::model::{ModelConfig, Variant};
use ietp_core::synth::ScenarioConfig;
use ietp_core::training::TrainConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::CliError;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    /// Master seed; split, bootstrap, training and tie-break seeds derive from it.
    pub seed: u64,
    /// Number of base learners (and bootstrap sets).
    pub learners: usize,
    pub variant: Variant,
    pub data: DataSection,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
    pub bench: BenchSection,
    pub synth: ScenarioConfig,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            seed: 1,
            learners: 20,
            variant: Variant::WithManeuvers,
            data: DataSection::default(),
            model: ModelSection::default(),
            train: TrainSection::default(),
            eval: EvalSection::default(),
            bench: BenchSection::default(),
            synth: ScenarioConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// History and future lengths in working frames (0.2 s).
    pub t_h: usize,
    pub t_f: usize,
    pub stride: usize,
    /// Social grid cell length, meters.
    pub cell_length: f64,
    pub lane_window: usize,
    pub speed_window: usize,
    pub braking_ratio: f64,
    pub test_fraction: f64,
    pub split_mode: SplitMode,
}

impl Default for DataSection {
    fn default() -> Self {
        let l = LabelParams::default();
        DataSection {
            t_h: 15,
            t_f: 25,
            stride: 1,
            cell_length: GridSpec::default().cell_length,
            lane_window: l.lane_window,
            speed_window: l.speed_window,
            braking_ratio: l.braking_ratio,
            test_fraction: 0.25,
            split_mode: SplitMode::Sample,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub conv1_depth: usize,
    pub conv2_depth: usize,
    pub leaky_alpha: f64,
    pub position_scale: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        let m = ModelConfig::default();
        ModelSection {
            encoder_hidden: m.encoder_hidden,
            decoder_hidden: m.decoder_hidden,
            conv1_depth: m.conv1_depth,
            conv2_depth: m.conv2_depth,
            leaky_alpha: m.leaky_alpha,
            position_scale: m.position_scale,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Concurrent learner trainings. Unset: `IETP_WORKERS`, else 1.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub workers: Option<usize>,
}

impl Default for TrainSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        TrainSection {
            learning_rate: t.learning_rate,
            epochs: t.epochs,
            batch_size: t.batch_size,
            grad_clip: t.grad_clip.unwrap_or(0.0),
            workers: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub steps_per_second: usize,
    pub chunk_size: usize,
}

impl Default for EvalSection {
    fn default() -> Self {
        let e = EvalOptions::default();
        EvalSection {
            steps_per_second: e.steps_per_second,
            chunk_size: e.chunk_size,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub sizes: Vec<usize>,
    /// Test samples timed per size.
    pub samples: usize,
    pub repetitions: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        BenchSection {
            sizes: vec![1, 2, 5, 10, 20],
            samples: 50,
            repetitions: 3,
        }
    }
}

/// Seed streams taken from the master seed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Seeds {
    pub master: u64,
    pub split: u64,
    pub bootstrap: u64,
    pub training: u64,
    pub tie_break: u64,
}

impl Config {
    pub fn load(path: &Path) -> Result<Config, CliError> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| CliError::config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    pub fn load_or_default(path: Option<&Path>) -> Result<Config, CliError> {
        match path {
            Some(p) => Config::load(p),
            None => Ok(Config::default()),
        }
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::config(m));
        if self.learners == 0 {
            return bad("learners must be at least 1".into());
        }
        if !(self.data.test_fraction > 0.0 && self.data.test_fraction < 1.0) {
            return bad(format!("data.test_fraction {} not in (0, 1)", self.data.test_fraction));
        }
        if self.data.stride == 0 {
            return bad("data.stride must be at least 1".into());
        }
        if self.train.batch_size == 0 || self.train.epochs == 0 || !(self.train.learning_rate > 0.0) {
            return bad("train.batch_size, train.epochs and train.learning_rate must be positive".into());
        }
        if !(self.train.grad_clip >= 0.0) {
            return bad(format!("train.grad_clip {} is negative", self.train.grad_clip));
        }
        if self.train.workers == Some(0) {
            return bad("train.workers must be at least 1".into());
        }
        if self.eval.steps_per_second == 0 || self.eval.chunk_size == 0 {
            return bad("eval.steps_per_second and eval.chunk_size must be positive".into());
        }
        if self.bench.repetitions == 0 || self.bench.samples == 0 {
            return bad("bench.repetitions and bench.samples must be positive".into());
        }
        self.model_config()
            .validate()
            .map_err(|e| CliError::config(e.to_string()))?;
        Ok(())
    }

    pub fn label_params(&self) -> LabelParams {
        LabelParams {
            t_h: self.data.t_h,
            t_f: self.data.t_f,
            lane_window: self.data.lane_window,
            speed_window: self.data.speed_window,
            braking_ratio: self.data.braking_ratio,
        }
    }

    pub fn sample_config(&self) -> SampleConfig {
        SampleConfig {
            t_h: self.data.t_h,
            t_f: self.data.t_f,
            grid: GridSpec {
                cell_length: self.data.cell_length,
            },
            stride: self.data.stride,
            label: self.label_params(),
        }
    }

    pub fn model_config(&self) -> ModelConfig {
        let m = &self.model;
        ModelConfig {
            encoder_hidden: m.encoder_hidden,
            decoder_hidden: m.decoder_hidden,
            conv1_depth: m.conv1_depth,
            conv2_depth: m.conv2_depth,
            t_h: self.data.t_h,
            t_f: self.data.t_f,
            grid: GridSpec {
                cell_length: self.data.cell_length,
            },
            leaky_alpha: m.leaky_alpha,
            position_scale: m.position_scale,
        }
    }

    pub fn train_config(&self) -> TrainConfig {
        TrainConfig {
            learning_rate: self.train.learning_rate,
            epochs: self.train.epochs,
            batch_size: self.train.batch_size,
            grad_clip: (self.train.grad_clip > 0.0).then_some(self.train.grad_clip),
        }
    }

    pub fn scenario(&self) -> ScenarioConfig {
        ScenarioConfig {
            label: self.label_params(),
            ..self.synth.clone()
        }
    }

    pub fn seeds(&self) -> Seeds {
        use ietp_core::derive_seed;
        Seeds {
            master: self.seed,
            split: derive_seed(self.seed, 100),
            bootstrap: derive_seed(self.seed, 101),
            training: derive_seed(self.seed, 102),
            tie_break: derive_seed(self.seed, 103),
        }
    }

    pub fn eval_options(&self, period_s: f64) -> EvalOptions {
        EvalOptions {
            period_s,
            steps_per_second: self.eval.steps_per_second,
            tie_seed: self.seeds().tie_break,
            chunk_size: self.eval.chunk_size,
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// sha256 of the canonical TOML rendering. The worker count does not change
    /// results and is left out.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.train.workers = None;
        hex::encode(Sha256::digest(c.to_toml().as_bytes()))
    }
}
