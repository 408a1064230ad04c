//! Variational autoencoder whose objective also asks a frozen evaluator to
//! recognise the safety label of each reconstruction.

use rand::seq::SliceRandom;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use super::darkness;
use super::evaluator::{Evaluator, LabelledFrame};
use crate::error::{Error, Result};
use crate::nets::{clip_pair, loss, loss_grad, Activation, DenseNet, Gradients, LossKind, Schedule, Target, TrainConfig};
use crate::seed::rng_from;
use crate::sim::PIXELS;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AutoencoderConfig {
    pub latent_dim: usize,
    pub hidden: usize,
    /// Weight of the KL term.
    pub lambda1: f64,
    /// Weight of the evaluator cross entropy on reconstructions.
    pub lambda2: f64,
}

impl Default for AutoencoderConfig {
    fn default() -> Self {
        AutoencoderConfig {
            latent_dim: 8,
            hidden: 64,
            lambda1: 1.0,
            lambda2: PIXELS as f64,
        }
    }
}

impl AutoencoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.latent_dim == 0 || self.hidden == 0 {
            return Err(Error::InvalidParameter("latent and hidden widths must be >= 1".into()));
        }
        if !(self.lambda1 >= 0.0 && self.lambda2 >= 0.0) {
            return Err(Error::InvalidParameter("loss weights must be >= 0".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SafetyAutoencoder {
    /// Frame to `[mean; log-variance]` of the latent.
    pub encoder: DenseNet,
    /// Latent to sigmoid darkness frame.
    pub decoder: DenseNet,
    pub config: AutoencoderConfig,
}

impl SafetyAutoencoder {
    pub fn latent_dim(&self) -> usize {
        self.config.latent_dim
    }

    pub fn encode_mean(&self, frame: &[f64]) -> Result<Vec<f64>> {
        let mut out = self.encoder.forward(frame)?;
        out.truncate(self.latent_dim());
        Ok(out)
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        self.decoder.forward(z)
    }

    pub fn reconstruct(&self, frame: &[f64]) -> Result<Vec<f64>> {
        self.decode(&self.encode_mean(frame)?)
    }
}

/// `KL(N(mu, exp(log_var)) || N(0, I))`, summed over dimensions.
pub fn kl_divergence(mu: &[f64], log_var: &[f64]) -> f64 {
    0.5 * mu
        .iter()
        .zip(log_var)
        .map(|(m, lv)| m * m + lv.exp() - 1.0 - lv)
        .sum::<f64>()
}

/// Mean evaluator cross entropy on mean-latent reconstructions.
pub fn reconstruction_ce(ae: &SafetyAutoencoder, evaluator: &Evaluator, frames: &[LabelledFrame]) -> Result<f64> {
    let net = evaluator
        .net()
        .ok_or_else(|| Error::InvalidParameter("cross entropy needs a learned evaluator".into()))?;
    let mut total = 0.0;
    for (obs, label) in frames {
        let logits = net.forward(&ae.reconstruct(&darkness(obs))?)?;
        total += loss(LossKind::Ce, &logits, &Target::Class(usize::from(*label)))?;
    }
    Ok(total / frames.len().max(1) as f64)
}

/// Mean per-pixel squared error of mean-latent reconstructions.
pub fn reconstruction_mse(ae: &SafetyAutoencoder, frames: &[LabelledFrame]) -> Result<f64> {
    let mut total = 0.0;
    for (obs, _) in frames {
        let x = darkness(obs);
        let y = ae.reconstruct(&x)?;
        total += y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>() / PIXELS as f64;
    }
    Ok(total / frames.len().max(1) as f64)
}

/// Minimizes, per frame, the summed squared reconstruction error plus
/// `lambda1` times the KL term plus `lambda2` times the evaluator's cross
/// entropy on the reconstruction. Latents are sampled by reparameterization
/// during training. Returns the model and its mean loss per epoch.
pub fn train_autoencoder(
    frames: &[LabelledFrame],
    evaluator: Option<&Evaluator>,
    ac: &AutoencoderConfig,
    cfg: &TrainConfig,
) -> Result<(SafetyAutoencoder, Vec<f64>)> {
    ac.validate()?;
    cfg.validate()?;
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let judge = match (evaluator.and_then(Evaluator::net), ac.lambda2 > 0.0) {
        (Some(net), true) => Some(net),
        (None, true) => {
            return Err(Error::InvalidParameter(
                "a positive safety weight needs a learned evaluator".into(),
            ))
        }
        (_, false) => None,
    };
    let l = ac.latent_dim;
    let mut rng = rng_from(cfg.seed ^ 0x7661_6520);
    let mut encoder = DenseNet::new(&[PIXELS, ac.hidden, 2 * l], &[Activation::Relu, Activation::Identity], &mut rng)?;
    let mut decoder = DenseNet::new(&[l, ac.hidden, PIXELS], &[Activation::Relu, Activation::Sigmoid], &mut rng)?;
    let mut ge = Gradients::zeros_like(&encoder);
    let mut gd = Gradients::zeros_like(&decoder);
    let mut scratch = judge.map(Gradients::zeros_like);
    let mut schedule = Schedule::new(cfg);
    let mut order: Vec<usize> = (0..frames.len()).collect();
    let mut history = Vec::new();
    for epoch in 0..cfg.max_epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            ge.clear();
            gd.clear();
            for &i in batch {
                let (obs, label) = &frames[i];
                let x = darkness(obs);
                let te = encoder.trace(&x)?;
                let (mu, log_var) = te.output().split_at(l);
                let eps: Vec<f64> = (0..l).map(|_| StandardNormal.sample(&mut rng)).collect();
                let sd: Vec<f64> = log_var.iter().map(|lv| (0.5 * lv).exp()).collect();
                let z: Vec<f64> = (0..l).map(|j| mu[j] + sd[j] * eps[j]).collect();
                let td = decoder.trace(&z)?;
                let y = td.output();
                let mut gy: Vec<f64> = y.iter().zip(&x).map(|(a, b)| 2.0 * (a - b)).collect();
                let mut sample_loss = y.iter().zip(&x).map(|(a, b)| (a - b) * (a - b)).sum::<f64>()
                    + ac.lambda1 * kl_divergence(mu, log_var);
                if let (Some(net), Some(scratch)) = (judge, scratch.as_mut()) {
                    let tv = net.trace(y)?;
                    let target = Target::Class(usize::from(*label));
                    sample_loss += ac.lambda2 * loss(LossKind::Ce, tv.output(), &target)?;
                    let gl = loss_grad(LossKind::Ce, tv.output(), &target)?;
                    scratch.clear();
                    let gin = net.backward_trace(&tv, &gl, scratch, true).expect("input gradient requested");
                    gy.iter_mut().zip(gin).for_each(|(g, v)| *g += ac.lambda2 * v);
                }
                total += sample_loss;
                let gz = decoder.backward_trace(&td, &gy, &mut gd, true).expect("input gradient requested");
                let mut gh = vec![0.0; 2 * l];
                for j in 0..l {
                    gh[j] = gz[j] + ac.lambda1 * mu[j];
                    gh[l + j] = gz[j] * eps[j] * 0.5 * sd[j] + ac.lambda1 * 0.5 * (log_var[j].exp() - 1.0);
                }
                encoder.backward_trace(&te, &gh, &mut ge, false);
            }
            let n = batch.len() as f64;
            ge.scale(1.0 / n);
            gd.scale(1.0 / n);
            clip_pair(&mut ge, &mut gd, cfg.grad_clip);
            let lr = schedule.learning_rate();
            encoder.apply_gradients(&ge, lr);
            decoder.apply_gradients(&gd, lr);
        }
        let epoch_loss = total / frames.len() as f64;
        if !epoch_loss.is_finite() {
            return Err(Error::Divergence { epoch });
        }
        history.push(epoch_loss);
        if !schedule.observe(epoch_loss) {
            break;
        }
    }
    Ok((
        SafetyAutoencoder {
            encoder,
            decoder,
            config: *ac,
        },
        history,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::seed::rng_from;
    use crate::sim::{render_observation, safety_of_state, SystemState};
    use rand::Rng as _;
    use std::sync::Arc;

    fn frames(n: usize, seed: u64) -> Vec<LabelledFrame> {
        let mut rng = rng_from(seed);
        (0..n)
            .map(|_| {
                let s = SystemState::new(rng.gen_range(-2.0..2.0), 0.0, rng.gen_range(-0.3..0.3), 0.0);
                (Arc::new(render_observation(&s)), safety_of_state(&s))
            })
            .collect()
    }

    #[test]
    fn kl_of_standard_normal_is_zero() {
        assert_eq!(kl_divergence(&[0.0; 4], &[0.0; 4]), 0.0);
        assert!(kl_divergence(&[1.0], &[0.0]) > 0.0);
    }

    #[test]
    fn overcomplete_plain_autoencoder_reconstructs() {
        let data = frames(40, 1);
        let ac = AutoencoderConfig {
            latent_dim: PIXELS,
            hidden: 64,
            lambda1: 0.0,
            lambda2: 0.0,
        };
        let cfg = TrainConfig {
            learning_rate: 0.05,
            batch_size: 4,
            max_epochs: 150,
            grad_clip: Some(5.0),
            seed: 2,
            ..TrainConfig::default()
        };
        let (ae, history) = train_autoencoder(&data, None, &ac, &cfg).unwrap();
        assert!(history.iter().all(|l| l.is_finite()));
        let mse = reconstruction_mse(&ae, &data).unwrap();
        assert!(mse < 0.01, "mse {mse}");
    }

    #[test]
    fn safety_weight_needs_learned_evaluator() {
        let ac = AutoencoderConfig::default();
        let err = train_autoencoder(&frames(4, 3), Some(&Evaluator::RobustFeature), &ac, &TrainConfig::default());
        assert!(matches!(err, Err(Error::InvalidParameter(_))));
    }
}
