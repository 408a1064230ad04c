//! Safety label and score predictors: monolithic classifiers over observation
//! windows, and composites that forecast forward `k` steps (in image or latent
//! space) and judge the forecast with an evaluator.
//!
//! All networks see frames as darkness vectors (`1 - intensity`) so that clean
//! renders are mostly zeros. Class index 0 is unsafe and index 1 is safe.

pub mod autoencoder;
pub mod evaluator;
pub mod forecaster;
pub mod monolithic;

use std::fmt;
use std::path::Path;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nets::softmax;
use crate::sim::{Action, Observation};

pub use autoencoder::{train_autoencoder, AutoencoderConfig, SafetyAutoencoder};
pub use evaluator::{robust_evaluate, train_evaluator, Evaluator};
pub use forecaster::{rollout, train_image_forecaster, train_latent_forecaster, Forecaster, OneStep};
pub use monolithic::{train_monolithic, MonolithicPredictor};

const BUNDLE_FORMAT: &str = "chancepred-predictor";
pub const BUNDLE_VERSION: u32 = 1;

pub fn darkness(obs: &Observation) -> Vec<f64> {
    let mut out = Vec::with_capacity(obs.pixels().len());
    obs.darkness_into(&mut out);
    out
}

pub fn action_values(actions: &[Action]) -> Vec<f64> {
    actions.iter().map(|a| a.sign()).collect()
}

/// Concatenates frames, then appends action values when given.
pub fn flatten_input<F: AsRef<[f64]>>(frames: &[F], actions: Option<&[f64]>) -> Vec<f64> {
    let mut x: Vec<f64> = frames.iter().flat_map(|f| f.as_ref().iter().copied()).collect();
    if let Some(a) = actions {
        x.extend_from_slice(a);
    }
    x
}

/// Darkness-encoded window plus, when `with_actions`, the window's actions.
pub fn encode_window(window: &[Arc<Observation>], actions: Option<&[Action]>, with_actions: bool) -> Result<Vec<f64>> {
    let mut x = Vec::with_capacity(window.len() * crate::sim::PIXELS + window.len());
    for obs in window {
        obs.darkness_into(&mut x);
    }
    if with_actions {
        let a = actions.ok_or_else(|| Error::InvalidParameter("predictor needs window actions".into()))?;
        if a.len() != window.len() {
            return Err(Error::DimensionMismatch {
                expected: window.len(),
                got: a.len(),
            });
        }
        x.extend(a.iter().map(|a| a.sign()));
    }
    Ok(x)
}

/// Softmax probability of the safe class from `[unsafe, safe]` logits.
pub fn safe_probability(logits: &[f64]) -> f64 {
    softmax(logits)[1]
}

/// Safe iff the score is strictly above one half.
pub fn label_from_score(score: f64) -> u8 {
    u8::from(score > 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PredictorKind {
    Monolithic,
    CompositeImage,
    CompositeLatent,
}

impl PredictorKind {
    pub const ALL: [PredictorKind; 3] = [
        PredictorKind::Monolithic,
        PredictorKind::CompositeImage,
        PredictorKind::CompositeLatent,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PredictorKind::Monolithic => "monolithic",
            PredictorKind::CompositeImage => "composite_image",
            PredictorKind::CompositeLatent => "composite_latent",
        }
    }
}

impl fmt::Display for PredictorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PredictorKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        PredictorKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown predictor kind `{s}`")))
    }
}

/// Layer widths and loss weights for every trainable part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Architecture {
    pub monolithic_hidden: usize,
    pub evaluator_hidden: usize,
    pub forecaster_hidden: usize,
    pub latent_forecaster_hidden: usize,
    pub autoencoder: AutoencoderConfig,
}

impl Default for Architecture {
    fn default() -> Self {
        Architecture {
            monolithic_hidden: 32,
            evaluator_hidden: 32,
            forecaster_hidden: 64,
            latent_forecaster_hidden: 32,
            autoencoder: AutoencoderConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeImage {
    pub forecaster: Forecaster,
    pub evaluator: Evaluator,
    pub k: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CompositeLatent {
    pub autoencoder: SafetyAutoencoder,
    pub forecaster: Forecaster,
    pub evaluator: Evaluator,
    pub k: usize,
}

impl CompositeImage {
    /// Evaluator score after each of `0..=k_max` forecast steps.
    pub fn horizon_scores(&self, window: &[Arc<Observation>], actions: Option<&[Action]>, k_max: usize) -> Result<Vec<f64>> {
        let frames: Vec<Vec<f64>> = window.iter().map(|o| darkness(o)).collect();
        let acts = self.forecaster.window_actions(actions, window.len())?;
        let mut out = Vec::with_capacity(k_max + 1);
        out.push(self.evaluator.score_darkness(frames.last().expect("nonempty window"))?);
        forecaster::rollout_with(&self.forecaster, frames, acts, k_max, |frame| {
            out.push(self.evaluator.score_darkness(frame)?);
            Ok(())
        })?;
        Ok(out)
    }
}

impl CompositeLatent {
    pub fn horizon_scores(&self, window: &[Arc<Observation>], actions: Option<&[Action]>, k_max: usize) -> Result<Vec<f64>> {
        let latents: Vec<Vec<f64>> = window
            .iter()
            .map(|o| self.autoencoder.encode_mean(&darkness(o)))
            .collect::<Result<_>>()?;
        let acts = self.forecaster.window_actions(actions, window.len())?;
        let judge = |z: &[f64]| -> Result<f64> {
            let frame = self.autoencoder.decode(z)?;
            self.evaluator.score_darkness(&frame)
        };
        let mut out = Vec::with_capacity(k_max + 1);
        out.push(judge(latents.last().expect("nonempty window"))?);
        forecaster::rollout_with(&self.forecaster, latents, acts, k_max, |z| {
            out.push(judge(z)?);
            Ok(())
        })?;
        Ok(out)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum LabelPredictor {
    Monolithic(MonolithicPredictor),
    CompositeImage(CompositeImage),
    CompositeLatent(CompositeLatent),
}

impl LabelPredictor {
    pub fn kind(&self) -> PredictorKind {
        match self {
            LabelPredictor::Monolithic(_) => PredictorKind::Monolithic,
            LabelPredictor::CompositeImage(_) => PredictorKind::CompositeImage,
            LabelPredictor::CompositeLatent(_) => PredictorKind::CompositeLatent,
        }
    }

    pub fn m(&self) -> usize {
        match self {
            LabelPredictor::Monolithic(p) => p.m,
            LabelPredictor::CompositeImage(p) => p.forecaster.m,
            LabelPredictor::CompositeLatent(p) => p.forecaster.m,
        }
    }

    pub fn k(&self) -> usize {
        match self {
            LabelPredictor::Monolithic(p) => p.k,
            LabelPredictor::CompositeImage(p) => p.k,
            LabelPredictor::CompositeLatent(p) => p.k,
        }
    }

    /// True when the predictor ignores actions (trained on one controller).
    pub fn controller_specific(&self) -> bool {
        match self {
            LabelPredictor::Monolithic(p) => p.controller_specific,
            LabelPredictor::CompositeImage(p) => !p.forecaster.with_actions,
            LabelPredictor::CompositeLatent(p) => !p.forecaster.with_actions,
        }
    }

    /// Same parts, different horizon. Monolithic predictors cannot be re-aimed.
    pub fn with_horizon(&self, k: usize) -> Result<Self> {
        let mut p = self.clone();
        match &mut p {
            LabelPredictor::Monolithic(_) => {
                return Err(Error::InvalidParameter(
                    "a monolithic predictor must be retrained for another horizon".into(),
                ))
            }
            LabelPredictor::CompositeImage(c) => c.k = k,
            LabelPredictor::CompositeLatent(c) => c.k = k,
        }
        Ok(p)
    }

    fn check_window(&self, window: &[Arc<Observation>]) -> Result<()> {
        if window.len() != self.m() {
            return Err(Error::DimensionMismatch {
                expected: self.m(),
                got: window.len(),
            });
        }
        Ok(())
    }

    /// Chance-like score of the safe class in `[0, 1]`.
    pub fn predict_score(&self, window: &[Arc<Observation>], actions: Option<&[Action]>) -> Result<f64> {
        self.check_window(window)?;
        match self {
            LabelPredictor::Monolithic(p) => p.score(window, actions),
            LabelPredictor::CompositeImage(c) => Ok(*c.horizon_scores(window, actions, c.k)?.last().unwrap()),
            LabelPredictor::CompositeLatent(c) => Ok(*c.horizon_scores(window, actions, c.k)?.last().unwrap()),
        }
    }

    /// Scores for horizons `0..=k_max` from one rollout. Composite predictors only.
    pub fn horizon_scores(&self, window: &[Arc<Observation>], actions: Option<&[Action]>, k_max: usize) -> Result<Vec<f64>> {
        self.check_window(window)?;
        match self {
            LabelPredictor::Monolithic(_) => Err(Error::InvalidParameter(
                "horizon sweeps need a composite predictor".into(),
            )),
            LabelPredictor::CompositeImage(c) => c.horizon_scores(window, actions, k_max),
            LabelPredictor::CompositeLatent(c) => c.horizon_scores(window, actions, k_max),
        }
    }

    pub fn predict_label(&self, window: &[Arc<Observation>], actions: Option<&[Action]>) -> Result<u8> {
        Ok(label_from_score(self.predict_score(window, actions)?))
    }

    pub fn score_sample(&self, sample: &Sample) -> Result<f64> {
        self.predict_score(&sample.window, sample.actions.as_deref())
    }

    pub fn score_samples(&self, samples: &[Sample]) -> Result<Vec<f64>> {
        samples.iter().map(|s| self.score_sample(s)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bundle = BundleRef {
            format: BUNDLE_FORMAT,
            version: BUNDLE_VERSION,
            m: self.m(),
            k: self.k(),
            controller_specific: self.controller_specific(),
            predictor: self,
        };
        let text = serde_json::to_string(&bundle)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let bundle: Bundle = serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        if bundle.format != BUNDLE_FORMAT {
            return Err(Error::malformed(path, format!("format `{}`", bundle.format)));
        }
        if bundle.version != BUNDLE_VERSION {
            return Err(Error::VersionMismatch {
                found: bundle.version,
                expected: BUNDLE_VERSION,
            });
        }
        let p = bundle.predictor;
        if (p.m(), p.k(), p.controller_specific()) != (bundle.m, bundle.k, bundle.controller_specific) {
            return Err(Error::malformed(path, "manifest disagrees with embedded predictor"));
        }
        Ok(p)
    }
}

#[derive(Serialize)]
struct BundleRef<'a> {
    format: &'a str,
    version: u32,
    m: usize,
    k: usize,
    controller_specific: bool,
    predictor: &'a LabelPredictor,
}

#[derive(Deserialize)]
struct Bundle {
    format: String,
    version: u32,
    m: usize,
    k: usize,
    controller_specific: bool,
    predictor: LabelPredictor,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{Activation, DenseNet, Layer};
    use crate::sim::{render_observation, SystemState, PIXELS};

    /// A 2-logit net that ignores its input and emits `logits`.
    fn constant_net(input_dim: usize, logits: [f64; 2]) -> DenseNet {
        DenseNet::from_layers(vec![Layer {
            input_dim,
            output_dim: 2,
            activation: Activation::Identity,
            weights: vec![0.0; 2 * input_dim],
            bias: logits.to_vec(),
        }])
        .unwrap()
    }

    fn mono(logits: [f64; 2]) -> LabelPredictor {
        LabelPredictor::Monolithic(MonolithicPredictor {
            net: constant_net(2 * PIXELS, logits),
            m: 2,
            k: 1,
            controller_specific: true,
        })
    }

    fn window() -> Vec<Arc<Observation>> {
        let frame = Arc::new(render_observation(&SystemState::UPRIGHT));
        vec![Arc::clone(&frame), frame]
    }

    #[test]
    fn score_examples_and_tie_break() {
        let w = window();
        assert_eq!(mono([0.0, 0.0]).predict_score(&w, None).unwrap(), 0.5);
        assert_eq!(mono([0.0, 0.0]).predict_label(&w, None).unwrap(), 0);
        let s = mono([0.0, 3f64.ln()]).predict_score(&w, None).unwrap();
        assert!((s - 0.75).abs() < 1e-12);
        assert_eq!(mono([0.0, 3f64.ln()]).predict_label(&w, None).unwrap(), 1);
        assert!(matches!(
            mono([0.0, 0.0]).predict_score(&w[..1], None),
            Err(Error::DimensionMismatch { expected: 2, got: 1 })
        ));
    }

    #[test]
    fn bundle_round_trip_and_version_check() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = mono([0.25, -1.5]);
        p.save(&path).unwrap();
        assert_eq!(LabelPredictor::load(&path).unwrap(), p);
        let text = std::fs::read_to_string(&path).unwrap().replacen("\"version\":1", "\"version\":9", 1);
        std::fs::write(&path, text).unwrap();
        assert!(matches!(LabelPredictor::load(&path), Err(Error::VersionMismatch { found: 9, .. })));
        assert!(matches!(
            LabelPredictor::load(dir.path().join("none.json")),
            Err(Error::MissingInput(_))
        ));
    }
}
