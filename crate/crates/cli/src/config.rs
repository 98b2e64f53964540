//! Flat `key = value` pipeline configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Unknown keys are
//! rejected. Lists are comma separated.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use phaseret_core::aggregation::TransformKind;
use phaseret_core::denoiser::{DenoiserArch, TrainConfig};
use phaseret_core::initialization::InitConfig;
use phaseret_core::projections::SpaceConstraint;
use phaseret_core::refinement::{default_lambda, RefinementConfig};
use phaseret_core::solvers::SolverParams;
use phaseret_core::synth::SyntheticCorpusSpec;
use phaseret_core::{NoiseModel, SnrMode};

use crate::error::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct PipelineConfig {
    pub seed: u64,
    pub work_dir: PathBuf,
    pub image_dim: usize,
    pub padded_dim: usize,
    pub alpha: f64,
    /// Pixel scale at which measurement noise is drawn (255 for 8-bit data).
    pub intensity_scale: f64,
    pub snr_mode: SnrMode,
    pub count: usize,
    pub init: InitConfig,
    pub refine_steps: usize,
    pub refine_inner_iters: usize,
    pub refine_beta: f64,
    /// One value for a constant schedule, or `steps + 1` values. Images live
    /// in [0, 1], so unit noise would swamp them.
    pub refine_sigma: Vec<f64>,
    /// `None` selects the default log-spaced ladder.
    pub refine_lambda: Option<Vec<f64>>,
    pub refine_final_projection: bool,
    pub train_epochs: usize,
    pub train_batch_size: usize,
    pub train_learning_rate: f64,
    pub train_weight_decay: f64,
    pub train_warmup_fraction: f64,
    pub train_trained_steps: usize,
    pub train_hidden_channels: usize,
    pub train_layers: usize,
    pub train_kernel_size: usize,
    pub train_embed_dim: usize,
    pub train_sigma: f64,
    pub train_validation_fraction: f64,
    pub train_validation_draws: usize,
    /// 0 disables aggregation in `run`.
    pub aggregate_p: usize,
    pub transform: TransformKind,
    pub shift_search: bool,
    pub coverage_levels: Vec<f64>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            work_dir: PathBuf::from("work"),
            image_dim: 32,
            padded_dim: 64,
            alpha: 3.0,
            intensity_scale: 255.0,
            snr_mode: SnrMode::Intensity,
            count: 500,
            init: InitConfig::desk(),
            refine_steps: 4,
            refine_inner_iters: 5,
            refine_beta: 0.9,
            refine_sigma: vec![0.3],
            refine_lambda: None,
            refine_final_projection: true,
            train_epochs: 40,
            train_batch_size: 16,
            train_learning_rate: 2e-3,
            train_weight_decay: 1e-4,
            train_warmup_fraction: 0.05,
            train_trained_steps: 32,
            train_hidden_channels: 16,
            train_layers: 4,
            train_kernel_size: 3,
            train_embed_dim: 16,
            train_sigma: 0.3,
            train_validation_fraction: 0.1,
            train_validation_draws: 4,
            aggregate_p: 0,
            transform: TransformKind::Rot180,
            shift_search: false,
            coverage_levels: vec![0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7, 0.8, 0.9],
        }
    }
}

fn bad(key: &str, value: &str) -> CliError {
    CliError::Config(format!("invalid value for {key}: {value:?}"))
}

fn num<T: std::str::FromStr>(key: &str, value: &str) -> Result<T, CliError> {
    value.parse().map_err(|_| bad(key, value))
}

fn list(key: &str, value: &str) -> Result<Vec<f64>, CliError> {
    value.split(',').map(|v| num(key, v.trim())).collect()
}

fn boolean(key: &str, value: &str) -> Result<bool, CliError> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(bad(key, value)),
    }
}

fn join(values: &[f64]) -> String {
    values.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(",")
}

impl PipelineConfig {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = Self::default();
        for (n, raw) in text.lines().enumerate() {
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| CliError::Config(format!("line {}: expected key = value", n + 1)))?;
            cfg.set(key.trim(), value.trim())?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn set(&mut self, key: &str, v: &str) -> Result<(), CliError> {
        match key {
            "seed" => self.seed = num(key, v)?,
            "work_dir" => self.work_dir = PathBuf::from(v),
            "image_dim" => self.image_dim = num(key, v)?,
            "padded_dim" => self.padded_dim = num(key, v)?,
            "alpha" => self.alpha = num(key, v)?,
            "intensity_scale" => self.intensity_scale = num(key, v)?,
            "snr_mode" => {
                self.snr_mode = match v {
                    "intensity" => SnrMode::Intensity,
                    "field" => SnrMode::Field,
                    _ => return Err(bad(key, v)),
                }
            }
            "count" => self.count = num(key, v)?,
            "init.restarts" => self.init.restarts = num(key, v)?,
            "init.explore_iters" => self.init.explore_iters = num(key, v)?,
            "init.keep" => self.init.keep = num(key, v)?,
            "init.refine_iters" => self.init.refine_iters = num(key, v)?,
            "init.hio_block" => self.init.hio_block = num(key, v)?,
            "init.aer_block" => self.init.aer_block = num(key, v)?,
            "init.align_twins" => self.init.align_twins = boolean(key, v)?,
            "solver.beta" => self.init.solver.beta = num(key, v)?,
            "solver.zeta" => self.init.solver.zeta = num(key, v)?,
            "solver.accel_period" => self.init.solver.accel_period = num(key, v)?,
            "solver.constraint" => {
                self.init.solver.constraint = match v {
                    "support" => SpaceConstraint::Support,
                    "support_nonneg" => SpaceConstraint::SupportNonNegative,
                    _ => return Err(bad(key, v)),
                }
            }
            "refine.steps" => self.refine_steps = num(key, v)?,
            "refine.inner_iters" => self.refine_inner_iters = num(key, v)?,
            "refine.beta" => self.refine_beta = num(key, v)?,
            "refine.sigma" => self.refine_sigma = list(key, v)?,
            "refine.lambda" => self.refine_lambda = if v == "default" { None } else { Some(list(key, v)?) },
            "refine.final_projection" => self.refine_final_projection = boolean(key, v)?,
            "train.epochs" => self.train_epochs = num(key, v)?,
            "train.batch_size" => self.train_batch_size = num(key, v)?,
            "train.learning_rate" => self.train_learning_rate = num(key, v)?,
            "train.weight_decay" => self.train_weight_decay = num(key, v)?,
            "train.warmup_fraction" => self.train_warmup_fraction = num(key, v)?,
            "train.trained_steps" => self.train_trained_steps = num(key, v)?,
            "train.hidden_channels" => self.train_hidden_channels = num(key, v)?,
            "train.layers" => self.train_layers = num(key, v)?,
            "train.kernel_size" => self.train_kernel_size = num(key, v)?,
            "train.embed_dim" => self.train_embed_dim = num(key, v)?,
            "train.sigma" => self.train_sigma = num(key, v)?,
            "train.validation_fraction" => self.train_validation_fraction = num(key, v)?,
            "train.validation_draws" => self.train_validation_draws = num(key, v)?,
            "aggregate.p" => self.aggregate_p = num(key, v)?,
            "aggregate.transform" => {
                self.transform = TransformKind::parse(v).ok_or_else(|| bad(key, v))?
            }
            "eval.shift_search" => self.shift_search = boolean(key, v)?,
            "calibrate.levels" => self.coverage_levels = list(key, v)?,
            _ => return Err(CliError::Config(format!("unknown key {key:?}"))),
        }
        Ok(())
    }

    /// Serializes every key, in the order `set` accepts them.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("seed", self.seed.to_string());
        kv("work_dir", self.work_dir.display().to_string());
        kv("image_dim", self.image_dim.to_string());
        kv("padded_dim", self.padded_dim.to_string());
        kv("alpha", self.alpha.to_string());
        kv("intensity_scale", self.intensity_scale.to_string());
        kv(
            "snr_mode",
            match self.snr_mode {
                SnrMode::Intensity => "intensity",
                SnrMode::Field => "field",
            }
            .into(),
        );
        kv("count", self.count.to_string());
        kv("init.restarts", self.init.restarts.to_string());
        kv("init.explore_iters", self.init.explore_iters.to_string());
        kv("init.keep", self.init.keep.to_string());
        kv("init.refine_iters", self.init.refine_iters.to_string());
        kv("init.hio_block", self.init.hio_block.to_string());
        kv("init.aer_block", self.init.aer_block.to_string());
        kv("init.align_twins", self.init.align_twins.to_string());
        kv("solver.beta", self.init.solver.beta.to_string());
        kv("solver.zeta", self.init.solver.zeta.to_string());
        kv("solver.accel_period", self.init.solver.accel_period.to_string());
        kv(
            "solver.constraint",
            match self.init.solver.constraint {
                SpaceConstraint::Support => "support",
                SpaceConstraint::SupportNonNegative => "support_nonneg",
            }
            .into(),
        );
        kv("refine.steps", self.refine_steps.to_string());
        kv("refine.inner_iters", self.refine_inner_iters.to_string());
        kv("refine.beta", self.refine_beta.to_string());
        kv("refine.sigma", join(&self.refine_sigma));
        kv("refine.lambda", self.refine_lambda.as_deref().map_or("default".into(), join));
        kv("refine.final_projection", self.refine_final_projection.to_string());
        kv("train.epochs", self.train_epochs.to_string());
        kv("train.batch_size", self.train_batch_size.to_string());
        kv("train.learning_rate", self.train_learning_rate.to_string());
        kv("train.weight_decay", self.train_weight_decay.to_string());
        kv("train.warmup_fraction", self.train_warmup_fraction.to_string());
        kv("train.trained_steps", self.train_trained_steps.to_string());
        kv("train.hidden_channels", self.train_hidden_channels.to_string());
        kv("train.layers", self.train_layers.to_string());
        kv("train.kernel_size", self.train_kernel_size.to_string());
        kv("train.embed_dim", self.train_embed_dim.to_string());
        kv("train.sigma", self.train_sigma.to_string());
        kv("train.validation_fraction", self.train_validation_fraction.to_string());
        kv("train.validation_draws", self.train_validation_draws.to_string());
        kv("aggregate.p", self.aggregate_p.to_string());
        kv("aggregate.transform", self.transform.as_str().into());
        kv("eval.shift_search", self.shift_search.to_string());
        kv("calibrate.levels", join(&self.coverage_levels));
        s
    }

    pub fn noise(&self) -> NoiseModel {
        NoiseModel::new(self.alpha).with_intensity_scale(self.intensity_scale)
    }

    pub fn corpus_spec(&self) -> SyntheticCorpusSpec {
        SyntheticCorpusSpec {
            padded_dim: self.padded_dim,
            ..SyntheticCorpusSpec::new(self.count, self.image_dim, self.seed)
        }
    }

    pub fn solver(&self) -> SolverParams {
        self.init.solver
    }

    /// Refinement settings with the given seed.
    pub fn refinement(&self, seed: u64) -> Result<RefinementConfig, CliError> {
        let t = self.refine_steps;
        let sigma = match self.refine_sigma.as_slice() {
            [s] => vec![*s; t + 1],
            s => s.to_vec(),
        };
        let cfg = RefinementConfig {
            steps: t,
            inner_iters: self.refine_inner_iters,
            beta: self.refine_beta,
            sigma,
            lambda: self.refine_lambda.clone().unwrap_or_else(|| default_lambda(t)),
            seed,
            constraint: self.init.solver.constraint,
            final_projection: self.refine_final_projection,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn training(&self) -> Result<TrainConfig, CliError> {
        let cfg = TrainConfig {
            arch: DenoiserArch {
                input_channels: self.init.keep + 1,
                hidden_channels: self.train_hidden_channels,
                layers: self.train_layers,
                kernel_size: self.train_kernel_size,
                embed_dim: self.train_embed_dim,
            },
            trained_steps: self.train_trained_steps,
            epochs: self.train_epochs,
            batch_size: self.train_batch_size,
            learning_rate: self.train_learning_rate,
            weight_decay: self.train_weight_decay,
            warmup_fraction: self.train_warmup_fraction,
            seed: self.seed,
            sigma: vec![self.train_sigma; self.train_trained_steps + 1],
            validation_fraction: self.train_validation_fraction,
            validation_draws: self.train_validation_draws,
        };
        cfg.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let wrap = |e: phaseret_core::Error| CliError::Config(e.to_string());
        if self.image_dim == 0 || self.padded_dim < self.image_dim {
            return Err(CliError::Config("need 0 < image_dim <= padded_dim".into()));
        }
        self.noise().validate().map_err(wrap)?;
        self.init.validate().map_err(wrap)?;
        self.refinement(0)?;
        self.training()?;
        if self.coverage_levels.iter().any(|q| !(*q > 0.0 && *q < 1.0)) {
            return Err(CliError::Config("calibrate.levels must lie in (0, 1)".into()));
        }
        Ok(())
    }

    pub fn corpus_dir(&self) -> PathBuf {
        self.work_dir.join("corpus")
    }

    pub fn init_dir(&self) -> PathBuf {
        self.work_dir.join("init")
    }

    pub fn model_path(&self) -> PathBuf {
        self.work_dir.join("model.i2dn")
    }

    pub fn recon_dir(&self) -> PathBuf {
        self.work_dir.join("recon")
    }

    pub fn aggregate_dir(&self) -> PathBuf {
        self.work_dir.join("aggregate")
    }

    pub fn calibration_dir(&self) -> PathBuf {
        self.work_dir.join("calibration")
    }

    pub fn run_dir(&self) -> PathBuf {
        self.work_dir.join("run")
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn text_round_trip() {
        let cfg = PipelineConfig {
            refine_lambda: Some(vec![0.25, 0.5, 0.75, 1.0]),
            alpha: 2.5,
            ..PipelineConfig::default()
        };
        let back = PipelineConfig::parse(&cfg.to_text()).unwrap();
        assert_eq!(back, cfg);
        assert_eq!(back.to_text(), cfg.to_text());
    }

    #[test]
    fn errors_are_config_errors() {
        for text in ["bogus = 1", "alpha = x", "alpha", "refine.steps = 0", "init.keep = 100"] {
            let err = PipelineConfig::parse(text).unwrap_err();
            assert_eq!(err.exit_code(), 2, "{text}");
        }
    }

    #[test]
    fn sigma_expands_and_lambda_follows_steps() {
        let cfg = PipelineConfig::parse("refine.steps = 6\nrefine.sigma = 0.5").unwrap();
        let r = cfg.refinement(1).unwrap();
        assert_eq!(r.sigma, vec![0.5; 7]);
        assert_eq!(r.lambda, default_lambda(6));
    }
}
