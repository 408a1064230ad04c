use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{encode_window, safe_probability};
use crate::data::{Dataset, DatasetKind, Sample};
use crate::error::{Error, Result};
use crate::nets::{sgd_train, Activation, DenseNet, ExampleSource, LossKind, Target, TrainConfig};
use crate::seed::{rng_from, Rng};
use crate::sim::{Action, Observation, PIXELS};

/// One classifier from an observation window (and, when controller
/// independent, the window's actions) to the safety label `k` steps ahead.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MonolithicPredictor {
    pub net: DenseNet,
    pub m: usize,
    pub k: usize,
    pub controller_specific: bool,
}

impl MonolithicPredictor {
    pub fn input_dim(m: usize, controller_specific: bool) -> usize {
        m * PIXELS + if controller_specific { 0 } else { m }
    }

    pub fn logits(&self, window: &[Arc<Observation>], actions: Option<&[Action]>) -> Result<Vec<f64>> {
        self.net.forward(&encode_window(window, actions, !self.controller_specific)?)
    }

    pub fn score(&self, window: &[Arc<Observation>], actions: Option<&[Action]>) -> Result<f64> {
        Ok(safe_probability(&self.logits(window, actions)?))
    }
}

/// Window classification examples drawn from dataset samples.
pub struct WindowSource<'a> {
    pub samples: &'a [Sample],
    pub with_actions: bool,
}

impl ExampleSource for WindowSource<'_> {
    fn len(&self) -> usize {
        self.samples.len()
    }

    fn example(&self, index: usize, _rng: &mut Rng) -> (Vec<f64>, Target) {
        let s = &self.samples[index];
        let x = encode_window(&s.window, s.actions.as_deref(), self.with_actions)
            .expect("dataset validated before training");
        (x, Target::Class(usize::from(s.label)))
    }
}

/// Trains on `train`, which should already be rebalanced. Returns the
/// predictor and its per-epoch loss.
pub fn train_monolithic(train: &Dataset, hidden: usize, cfg: &TrainConfig) -> Result<(MonolithicPredictor, Vec<f64>)> {
    if train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    train.validate()?;
    let controller_specific = train.kind == DatasetKind::ObsController;
    let dims = [MonolithicPredictor::input_dim(train.m, controller_specific), hidden, 2];
    let mut rng = rng_from(cfg.seed ^ 0x6d6f_6e6f);
    let net = DenseNet::new(&dims, &[Activation::Relu, Activation::Identity], &mut rng)?;
    let source = WindowSource {
        samples: &train.samples,
        with_actions: !controller_specific,
    };
    let (net, history) = sgd_train(&net, &source, LossKind::Ce, cfg)?;
    Ok((
        MonolithicPredictor {
            net,
            m: train.m,
            k: train.k,
            controller_specific,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{render_observation, SystemState};
    use rand::Rng as _;

    /// Windows of single renders labelled by whether the cart sits right of centre.
    fn cart_side_dataset(n: usize, seed: u64) -> Dataset {
        let mut rng = rng_from(seed);
        let mut ds = Dataset::empty(DatasetKind::ObsController, 1, 1);
        ds.controller_ids.insert(0);
        for i in 0..n {
            let x: f64 = rng.gen_range(0.3..2.0) * if i % 2 == 0 { 1.0 } else { -1.0 };
            let obs = Arc::new(render_observation(&SystemState::new(x, 0.0, rng.gen_range(-0.1..0.1), 0.0)));
            ds.samples.push(Sample {
                traj_id: i as u64,
                index: 0,
                controller_id: 0,
                window: vec![obs],
                actions: None,
                label: u8::from(x > 0.0),
                current_label: 1,
                next_frame: None,
            });
        }
        ds
    }

    fn cfg() -> TrainConfig {
        TrainConfig {
            max_epochs: 30,
            batch_size: 16,
            seed: 3,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn learns_separable_windows() {
        let (p, history) = train_monolithic(&cart_side_dataset(300, 1), 16, &cfg()).unwrap();
        assert!(history.last().unwrap() < &history[0]);
        let test = cart_side_dataset(200, 2);
        let correct = test
            .samples
            .iter()
            .filter(|s| u8::from(p.score(&s.window, None).unwrap() > 0.5) == s.label)
            .count();
        assert!(correct as f64 / 200.0 > 0.95, "{correct}");
    }

    #[test]
    fn seeded_training_is_deterministic() {
        let ds = cart_side_dataset(60, 4);
        let short = TrainConfig { max_epochs: 3, ..cfg() };
        let (a, _) = train_monolithic(&ds, 8, &short).unwrap();
        let (b, _) = train_monolithic(&ds, 8, &short).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn empty_dataset_is_an_error() {
        let ds = Dataset::empty(DatasetKind::ObsController, 2, 1);
        assert!(matches!(train_monolithic(&ds, 8, &cfg()), Err(Error::EmptyDataset)));
    }
}
