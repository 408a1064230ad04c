//! One-step forecasters, in pixel space or in an autoencoder's latent space,
//! rolled out iteratively to reach horizon `k`.

use std::collections::{HashMap, VecDeque};

use serde::{Deserialize, Serialize};

use super::{darkness, flatten_input, SafetyAutoencoder};
use crate::data::{Dataset, DatasetKind, Sample};
use crate::error::{Error, Result};
use crate::nets::{sgd_train, Activation, DenseNet, ExampleSource, LossKind, Target, TrainConfig};
use crate::seed::{rng_from, Rng};
use crate::sim::{Action, Observation, PIXELS};

/// Maps the last `m` frames (and, if `with_actions`, their actions) to the next frame.
pub trait OneStep {
    fn m(&self) -> usize;

    fn step(&self, frames: &[&[f64]], actions: Option<&[f64]>) -> Result<Vec<f64>>;
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forecaster {
    pub net: DenseNet,
    pub m: usize,
    pub frame_dim: usize,
    pub with_actions: bool,
}

impl Forecaster {
    pub fn input_dim(m: usize, frame_dim: usize, with_actions: bool) -> usize {
        m * frame_dim + if with_actions { m } else { 0 }
    }

    /// Action values for a rollout, or `None` when the forecaster ignores actions.
    pub fn window_actions(&self, actions: Option<&[Action]>, m: usize) -> Result<Option<Vec<f64>>> {
        if !self.with_actions {
            return Ok(None);
        }
        let a = actions.ok_or_else(|| Error::InvalidParameter("forecaster needs window actions".into()))?;
        if a.len() != m {
            return Err(Error::DimensionMismatch {
                expected: m,
                got: a.len(),
            });
        }
        Ok(Some(super::action_values(a)))
    }
}

impl OneStep for Forecaster {
    fn m(&self) -> usize {
        self.m
    }

    fn step(&self, frames: &[&[f64]], actions: Option<&[f64]>) -> Result<Vec<f64>> {
        if frames.len() != self.m {
            return Err(Error::DimensionMismatch {
                expected: self.m,
                got: frames.len(),
            });
        }
        let actions = if self.with_actions { actions } else { None };
        self.net.forward(&flatten_input(frames, actions))
    }
}

/// Applies `f` exactly `k` times, sliding the window over its own forecasts,
/// and calls `visit` on each forecast. Actions after the window are unknown and
/// enter as 0. Returns the final frame (the last input frame when `k = 0`).
pub fn rollout_with<F: OneStep + ?Sized>(
    f: &F,
    frames: Vec<Vec<f64>>,
    actions: Option<Vec<f64>>,
    k: usize,
    mut visit: impl FnMut(&[f64]) -> Result<()>,
) -> Result<Vec<f64>> {
    if frames.len() != f.m() {
        return Err(Error::DimensionMismatch {
            expected: f.m(),
            got: frames.len(),
        });
    }
    let mut frames: VecDeque<Vec<f64>> = frames.into();
    let mut actions: Option<VecDeque<f64>> = actions.map(Into::into);
    for _ in 0..k {
        let next = {
            let refs: Vec<&[f64]> = frames.iter().map(Vec::as_slice).collect();
            let acts = actions.as_mut().map(|a| a.make_contiguous() as &[f64]);
            f.step(&refs, acts)?
        };
        visit(&next)?;
        frames.pop_front();
        frames.push_back(next);
        if let Some(a) = actions.as_mut() {
            a.pop_front();
            a.push_back(0.0);
        }
    }
    Ok(frames.pop_back().expect("m >= 1"))
}

pub fn rollout<F: OneStep + ?Sized>(f: &F, frames: Vec<Vec<f64>>, actions: Option<Vec<f64>>, k: usize) -> Result<Vec<f64>> {
    rollout_with(f, frames, actions, k, |_| Ok(()))
}

fn with_next_frame(train: &Dataset) -> Result<Vec<&Sample>> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    train.validate()?;
    let usable: Vec<&Sample> = train.samples.iter().filter(|s| s.next_frame.is_some()).collect();
    if usable.is_empty() {
        return Err(Error::NotEnoughSamples { have: 0, need: 1 });
    }
    Ok(usable)
}

fn sample_actions(s: &Sample, with_actions: bool) -> Option<Vec<f64>> {
    if with_actions {
        s.actions.as_deref().map(super::action_values)
    } else {
        None
    }
}

struct PixelSource<'a> {
    samples: Vec<&'a Sample>,
    with_actions: bool,
}

impl ExampleSource for PixelSource<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn example(&self, index: usize, _rng: &mut Rng) -> (Vec<f64>, Target) {
        let s = self.samples[index];
        let frames: Vec<Vec<f64>> = s.window.iter().map(|o| darkness(o)).collect();
        let x = flatten_input(&frames, sample_actions(s, self.with_actions).as_deref());
        let next = s.next_frame.as_deref().expect("filtered");
        (x, Target::Values(darkness(next)))
    }
}

/// Sigmoid-output one-step image forecaster trained with per-pixel BCE against
/// the true next frame.
pub fn train_image_forecaster(train: &Dataset, hidden: usize, cfg: &TrainConfig) -> Result<(Forecaster, Vec<f64>)> {
    let samples = with_next_frame(train)?;
    let with_actions = train.kind == DatasetKind::ObsAction;
    let dims = [Forecaster::input_dim(train.m, PIXELS, with_actions), hidden, PIXELS];
    let mut rng = rng_from(cfg.seed ^ 0x696d_6167);
    let net = DenseNet::new(&dims, &[Activation::Relu, Activation::Sigmoid], &mut rng)?;
    let source = PixelSource { samples, with_actions };
    let (net, history) = sgd_train(&net, &source, LossKind::Bce, cfg)?;
    Ok((
        Forecaster {
            net,
            m: train.m,
            frame_dim: PIXELS,
            with_actions,
        },
        history,
    ))
}

/// Latent means of every distinct frame referenced by `samples`.
fn encode_frames(samples: &[&Sample], ae: &SafetyAutoencoder) -> Result<HashMap<*const Observation, Vec<f64>>> {
    let mut cache = HashMap::new();
    for s in samples {
        for obs in s.window.iter().chain(s.next_frame.iter()) {
            let key = std::sync::Arc::as_ptr(obs);
            if let std::collections::hash_map::Entry::Vacant(e) = cache.entry(key) {
                e.insert(ae.encode_mean(&darkness(obs))?);
            }
        }
    }
    Ok(cache)
}

/// Tanh-hidden forecaster in latent space, trained with MSE against the
/// encoder mean of the true next frame.
pub fn train_latent_forecaster(
    train: &Dataset,
    ae: &SafetyAutoencoder,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<(Forecaster, Vec<f64>)> {
    let samples = with_next_frame(train)?;
    let with_actions = train.kind == DatasetKind::ObsAction;
    let latent = ae.latent_dim();
    let cache = encode_frames(&samples, ae)?;
    let examples: Vec<(Vec<f64>, Target)> = samples
        .iter()
        .map(|s| {
            let frames: Vec<&[f64]> = s.window.iter().map(|o| cache[&std::sync::Arc::as_ptr(o)].as_slice()).collect();
            let x = flatten_input(&frames, sample_actions(s, with_actions).as_deref());
            let next = s.next_frame.as_ref().expect("filtered");
            (x, Target::Values(cache[&std::sync::Arc::as_ptr(next)].clone()))
        })
        .collect();
    let dims = [Forecaster::input_dim(train.m, latent, with_actions), hidden, latent];
    let mut rng = rng_from(cfg.seed ^ 0x6c61_7465);
    let net = DenseNet::new(&dims, &[Activation::Tanh, Activation::Identity], &mut rng)?;
    let (net, history) = sgd_train(&net, &examples, LossKind::Mse, cfg)?;
    Ok((
        Forecaster {
            net,
            m: train.m,
            frame_dim: latent,
            with_actions,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{render_observation, SystemState};
    use rand::Rng as _;
    use std::cell::Cell;
    use std::sync::Arc;

    struct Counting {
        m: usize,
        calls: Cell<usize>,
    }

    impl OneStep for Counting {
        fn m(&self) -> usize {
            self.m
        }

        fn step(&self, frames: &[&[f64]], _actions: Option<&[f64]>) -> Result<Vec<f64>> {
            self.calls.set(self.calls.get() + 1);
            Ok(frames.last().unwrap().iter().map(|v| v + 1.0).collect())
        }
    }

    #[test]
    fn rollout_applies_exactly_k_steps() {
        for k in 0..12 {
            let f = Counting { m: 3, calls: Cell::new(0) };
            let frames = vec![vec![0.0], vec![0.0], vec![5.0]];
            let out = rollout(&f, frames, None, k).unwrap();
            assert_eq!(f.calls.get(), k);
            assert_eq!(out, vec![5.0 + k as f64]);
        }
    }

    #[test]
    fn rollout_pads_unknown_actions_with_zero() {
        struct Echo;
        impl OneStep for Echo {
            fn m(&self) -> usize {
                2
            }
            fn step(&self, _frames: &[&[f64]], actions: Option<&[f64]>) -> Result<Vec<f64>> {
                Ok(actions.unwrap().to_vec())
            }
        }
        let out = rollout(&Echo, vec![vec![0.0; 2]; 2], Some(vec![1.0, -1.0]), 2).unwrap();
        assert_eq!(out, vec![-1.0, 0.0]);
    }

    /// Trajectories whose state never changes.
    pub(crate) fn frozen_dataset(n: usize, m: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed);
        let mut ds = Dataset::empty(DatasetKind::ObsController, m, 1);
        ds.controller_ids.insert(0);
        for i in 0..n {
            let state = SystemState::new(rng.gen_range(-2.0..2.0), 0.0, rng.gen_range(-0.5..0.5), 0.0);
            let obs = Arc::new(render_observation(&state));
            ds.samples.push(Sample {
                traj_id: i as u64,
                index: m - 1,
                controller_id: 0,
                window: vec![Arc::clone(&obs); m],
                actions: None,
                label: crate::sim::safety_of_state(&state),
                current_label: crate::sim::safety_of_state(&state),
                next_frame: Some(obs),
            });
        }
        ds
    }

    #[test]
    fn static_scene_forecast_matches_last_frame() {
        let cfg = TrainConfig {
            max_epochs: 40,
            batch_size: 16,
            learning_rate: 4.0,
            seed: 1,
            ..TrainConfig::default()
        };
        let (f, history) = train_image_forecaster(&frozen_dataset(400, 2, 1), 64, &cfg).unwrap();
        assert!(history.iter().all(|l| l.is_finite()));
        let test = frozen_dataset(50, 2, 2);
        let mut err = 0.0;
        for s in &test.samples {
            let frames: Vec<Vec<f64>> = s.window.iter().map(|o| darkness(o)).collect();
            let out = rollout(&f, frames, None, 1).unwrap();
            assert!(out.iter().all(|v| (0.0..=1.0).contains(v)));
            let truth = darkness(s.last_frame());
            err += out.iter().zip(&truth).map(|(a, b)| (a - b).abs()).sum::<f64>() / PIXELS as f64;
        }
        let err = err / test.len() as f64;
        assert!(err < 0.05, "mean per-pixel error {err}");
    }

    #[test]
    fn image_forecaster_training_is_seeded() {
        let ds = frozen_dataset(30, 2, 3);
        let cfg = TrainConfig {
            max_epochs: 2,
            batch_size: 8,
            seed: 9,
            ..TrainConfig::default()
        };
        let a = train_image_forecaster(&ds, 8, &cfg).unwrap();
        let b = train_image_forecaster(&ds, 8, &cfg).unwrap();
        assert_eq!(a, b);
    }
}
