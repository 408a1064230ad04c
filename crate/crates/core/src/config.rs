//! Run configuration shared by every pipeline stage, settable from a
//! `key = value` file and from command-line overrides.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{ConformalParams, QuantileRule};
use crate::error::{Error, Result};
use crate::nets::TrainConfig;
use crate::predictors::{Architecture, PredictorKind};
use crate::sim::{ControllerSpec, SimConfig};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub seed: u64,
    pub sim: SimConfig,
    pub controllers: Vec<ControllerSpec>,
    /// Controller whose episodes form the controller-specific datasets.
    pub specific_controller: u32,
    /// Episodes simulated per controller.
    pub episodes: usize,
    pub max_episode_len: usize,
    /// Window length `m`.
    pub window: usize,
    pub horizons: Vec<usize>,
    /// Train, calibration, validation and test fractions.
    pub split: [f64; 4],
    /// Also build and use the mixed-controller, action-annotated datasets.
    pub independent: bool,
    pub kinds: Vec<PredictorKind>,
    pub arch: Architecture,
    pub train_monolithic: TrainConfig,
    pub train_evaluator: TrainConfig,
    pub train_forecaster: TrainConfig,
    pub train_autoencoder: TrainConfig,
    pub train_latent: TrainConfig,
    /// Frames used to fit the evaluator and the autoencoder, at most.
    pub max_frames: usize,
    pub evaluator_augment: bool,
    /// Adaptive bins `Q` for ECE and conformal bounds.
    pub bins: usize,
    pub histogram_bins: usize,
    pub alpha: f64,
    /// Resamples per bin, `M`.
    pub resamples: usize,
    /// Draws per resample, `N`.
    pub resample_size: usize,
    /// Rule whose bounds go into reliability reports.
    pub quantile_rule: QuantileRule,
    pub coverage_trials: usize,
}

fn train(learning_rate: f64, batch_size: usize, max_epochs: usize) -> TrainConfig {
    TrainConfig {
        learning_rate,
        batch_size,
        max_epochs,
        patience_epochs: 3,
        early_stop_patience: 6,
        ..TrainConfig::default()
    }
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            sim: SimConfig::default(),
            controllers: ControllerSpec::default_set(),
            specific_controller: 0,
            episodes: 250,
            max_episode_len: 200,
            window: 5,
            horizons: (1..=9).collect(),
            split: [0.4, 0.2, 0.2, 0.2],
            independent: false,
            kinds: PredictorKind::ALL.to_vec(),
            arch: Architecture::default(),
            train_monolithic: train(0.05, 32, 30),
            train_evaluator: train(0.05, 32, 30),
            train_forecaster: train(4.0, 32, 15),
            train_autoencoder: TrainConfig {
                grad_clip: Some(5.0),
                ..train(0.05, 16, 20)
            },
            train_latent: train(0.05, 32, 30),
            max_frames: 4000,
            evaluator_augment: true,
            bins: 10,
            histogram_bins: 10,
            alpha: 0.05,
            resamples: 200,
            resample_size: 500,
            quantile_rule: QuantileRule::Standard,
            coverage_trials: 200,
        }
    }
}

fn parse<T: std::str::FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidParameter(format!("{key}: cannot parse `{value}`")))
}

fn parse_bool(key: &str, value: &str) -> Result<bool> {
    match value.trim() {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(Error::InvalidParameter(format!("{key}: expected true or false, got `{value}`"))),
    }
}

/// `a..b` (inclusive) or a comma list.
pub fn parse_horizons(value: &str) -> Result<Vec<usize>> {
    let value = value.trim();
    let hs: Vec<usize> = if let Some((a, b)) = value.split_once("..") {
        let (a, b): (usize, usize) = (parse("horizons", a)?, parse("horizons", b.trim_start_matches('='))?);
        (a..=b).collect()
    } else {
        value
            .split(',')
            .map(|v| parse("horizons", v))
            .collect::<Result<_>>()?
    };
    if hs.is_empty() {
        return Err(Error::InvalidParameter("horizons: empty list".into()));
    }
    Ok(hs)
}

fn set_train(cfg: &mut TrainConfig, field: &str, key: &str, value: &str) -> Result<()> {
    match field {
        "lr" | "learning_rate" => cfg.learning_rate = parse(key, value)?,
        "batch" | "batch_size" => cfg.batch_size = parse(key, value)?,
        "epochs" | "max_epochs" => cfg.max_epochs = parse(key, value)?,
        "lr_factor" => cfg.lr_reduction_factor = parse(key, value)?,
        "patience" => cfg.patience_epochs = parse(key, value)?,
        "early_stop" => cfg.early_stop_patience = parse(key, value)?,
        "grad_clip" => {
            cfg.grad_clip = match value.trim() {
                "none" | "" => None,
                v => Some(parse(key, v)?),
            }
        }
        _ => return Err(Error::InvalidParameter(format!("unknown key `{key}`"))),
    }
    Ok(())
}

impl RunConfig {
    /// Sets one parameter by its `key = value` name.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let key = key.trim().replace('-', "_");
        let key = key.as_str();
        if let Some(field) = key.strip_prefix("sim.") {
            return self.sim.set(field, value.trim());
        }
        for (prefix, hidden) in [
            ("monolithic.", &mut self.arch.monolithic_hidden),
            ("evaluator.", &mut self.arch.evaluator_hidden),
            ("forecaster.", &mut self.arch.forecaster_hidden),
            ("latent.", &mut self.arch.latent_forecaster_hidden),
        ] {
            if key.strip_prefix(prefix) == Some("hidden") {
                *hidden = parse(key, value)?;
                return Ok(());
            }
        }
        let ae = &mut self.arch.autoencoder;
        match key {
            "autoencoder.hidden" => return parse(key, value).map(|v| ae.hidden = v),
            "autoencoder.latent_dim" => return parse(key, value).map(|v| ae.latent_dim = v),
            "autoencoder.lambda1" => return parse(key, value).map(|v| ae.lambda1 = v),
            "autoencoder.lambda2" => return parse(key, value).map(|v| ae.lambda2 = v),
            _ => {}
        }
        for (prefix, tc) in [
            ("monolithic.", &mut self.train_monolithic),
            ("evaluator.", &mut self.train_evaluator),
            ("forecaster.", &mut self.train_forecaster),
            ("autoencoder.", &mut self.train_autoencoder),
            ("latent.", &mut self.train_latent),
        ] {
            if let Some(field) = key.strip_prefix(prefix) {
                return set_train(tc, field, key, value);
            }
        }
        match key {
            "seed" => self.seed = parse(key, value)?,
            "specific_controller" => self.specific_controller = parse(key, value)?,
            "episodes" => self.episodes = parse(key, value)?,
            "max_episode_len" => self.max_episode_len = parse(key, value)?,
            "m" | "window" => self.window = parse(key, value)?,
            "k" | "horizons" => self.horizons = parse_horizons(value)?,
            "split" => {
                let parts: Vec<f64> = value.split(',').map(|v| parse(key, v)).collect::<Result<_>>()?;
                self.split = parts
                    .try_into()
                    .map_err(|_| Error::InvalidParameter("split: expected four fractions".into()))?;
            }
            "independent" => self.independent = parse_bool(key, value)?,
            "kinds" => {
                self.kinds = value.split(',').map(|v| v.trim().parse()).collect::<Result<_>>()?;
            }
            "max_frames" => self.max_frames = parse(key, value)?,
            "evaluator_augment" => self.evaluator_augment = parse_bool(key, value)?,
            "q" | "bins" => self.bins = parse(key, value)?,
            "histogram_bins" => self.histogram_bins = parse(key, value)?,
            "alpha" => self.alpha = parse(key, value)?,
            "resamples" => self.resamples = parse(key, value)?,
            "resample_size" => self.resample_size = parse(key, value)?,
            "quantile_rule" => self.quantile_rule = value.trim().parse()?,
            "coverage_trials" => self.coverage_trials = parse(key, value)?,
            _ => return Err(Error::InvalidParameter(format!("unknown key `{key}`"))),
        }
        Ok(())
    }

    /// Applies a `key = value` file. Blank lines and `#` comments are skipped.
    pub fn apply_file(&mut self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        for (n, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| Error::malformed(path, format!("line {}: expected key = value", n + 1)))?;
            self.set(key, value)?;
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        self.sim.validate()?;
        for c in &self.controllers {
            c.validate()?;
        }
        if !self.controllers.iter().any(|c| c.id == self.specific_controller) {
            return Err(Error::InvalidParameter(format!(
                "specific_controller {} is not a configured controller",
                self.specific_controller
            )));
        }
        if self.window == 0 || self.episodes == 0 || self.bins == 0 || self.coverage_trials == 0 {
            return Err(Error::InvalidParameter(
                "window, episodes, bins and coverage_trials must be >= 1".into(),
            ));
        }
        if self.horizons.is_empty() {
            return Err(Error::InvalidParameter("horizons: empty list".into()));
        }
        let longest = self.window + self.horizons.iter().max().unwrap();
        if longest > self.max_episode_len {
            return Err(Error::TrajectoryTooShort {
                len: self.max_episode_len,
                needed: longest,
            });
        }
        if self.kinds.is_empty() {
            return Err(Error::InvalidParameter("kinds: empty list".into()));
        }
        self.arch.autoencoder.validate()?;
        for t in [
            &self.train_monolithic,
            &self.train_evaluator,
            &self.train_forecaster,
            &self.train_autoencoder,
            &self.train_latent,
        ] {
            t.validate()?;
        }
        self.conformal(self.quantile_rule).validate()
    }

    pub fn conformal(&self, rule: QuantileRule) -> ConformalParams {
        ConformalParams {
            alpha: self.alpha,
            resamples: self.resamples,
            resample_size: self.resample_size,
            rule,
            seed: crate::seed::derive_seed(self.seed, "conformal", 0),
        }
    }
}
