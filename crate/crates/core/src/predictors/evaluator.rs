//! Single-frame safety judges: a learned classifier, optionally trained with
//! photometric augmentation, and a geometric rule that reads the pole angle
//! off the image.

use std::collections::HashSet;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};

use super::{darkness, safe_probability};
use crate::data::Sample;
use crate::error::{Error, Result};
use crate::nets::{sgd_train, Activation, DenseNet, ExampleSource, LossKind, Target, TrainConfig};
use crate::seed::{rng_from, Rng};
use crate::sim::{Observation, CART_HEIGHT, CART_TOP, HEIGHT, PIXELS, POLE_ROWS, SAFE_ANGLE, SAFE_TIP_OFFSET, WIDTH};

pub const BRIGHTNESS_SHIFT: f64 = 0.2;
pub const INVERT_PROB: f64 = 0.5;
pub const BLUR_PROB: f64 = 0.5;
pub const BLUR_SIGMA: f64 = 0.8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Evaluator {
    Learned { net: DenseNet, augmented: bool },
    RobustFeature,
}

impl Evaluator {
    /// Safe-class score of a darkness-encoded frame.
    pub fn score_darkness(&self, frame: &[f64]) -> Result<f64> {
        match self {
            Evaluator::Learned { net, .. } => Ok(safe_probability(&net.forward(frame)?)),
            Evaluator::RobustFeature => {
                if frame.len() != PIXELS {
                    return Err(Error::DimensionMismatch {
                        expected: PIXELS,
                        got: frame.len(),
                    });
                }
                Ok(f64::from(robust_evaluate_darkness(frame)))
            }
        }
    }

    pub fn score(&self, obs: &Observation) -> Result<f64> {
        self.score_darkness(&darkness(obs))
    }

    pub fn label(&self, obs: &Observation) -> Result<u8> {
        Ok(super::label_from_score(self.score(obs)?))
    }

    pub fn net(&self) -> Option<&DenseNet> {
        match self {
            Evaluator::Learned { net, .. } => Some(net),
            Evaluator::RobustFeature => None,
        }
    }
}

fn median(values: &[f64]) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        (v[n / 2 - 1] + v[n / 2]) / 2.0
    }
}

/// Darkness-weighted mean column of `rows`, or `None` if they are blank.
fn weighted_column(weight: &[f64], rows: impl Iterator<Item = usize>) -> Option<f64> {
    let (mut sum, mut moment) = (0.0, 0.0);
    for row in rows {
        for col in 0..WIDTH {
            let w = weight[row * WIDTH + col];
            sum += w;
            moment += w * col as f64;
        }
    }
    (sum > 1e-9).then(|| moment / sum)
}

/// Pole lean estimated from a darkness-encoded frame, in radians; `None` when
/// no cart or pole is visible.
pub fn estimate_pole_angle(frame: &[f64]) -> Option<f64> {
    // A frame that is mostly dark is an inverted render.
    let inverted = median(frame) > 0.5;
    let weight: Vec<f64> = if inverted {
        frame.iter().map(|d| 1.0 - d).collect()
    } else {
        frame.to_vec()
    };
    let pivot = weighted_column(&weight, CART_TOP..CART_TOP + CART_HEIGHT)?;
    // Least-squares line through the pivot: offset = slope * height.
    let (mut num, mut den) = (0.0, 0.0);
    for r in 1..=POLE_ROWS {
        if let Some(c) = weighted_column(&weight, std::iter::once(CART_TOP - r)) {
            let h = r as f64;
            num += h * (c - pivot);
            den += h * h;
        }
    }
    if den == 0.0 {
        return None;
    }
    let tip_offset = num / den * POLE_ROWS as f64;
    // Inverse of the renderer's tip quantization scale.
    let tan = tip_offset * SAFE_ANGLE.tan() / (SAFE_TIP_OFFSET as f64 + 0.5);
    Some(tan.atan())
}

pub fn robust_evaluate_darkness(frame: &[f64]) -> u8 {
    match estimate_pole_angle(frame) {
        Some(angle) => u8::from(angle.abs() <= SAFE_ANGLE),
        None => 0,
    }
}

/// Geometric evaluator: undo inversion by the median rule, then fit the pole
/// line above the cart and compare its lean against the safe angle.
pub fn robust_evaluate(obs: &Observation) -> u8 {
    robust_evaluate_darkness(&darkness(obs))
}

fn gaussian_kernel() -> [f64; 3] {
    let side = (-1.0 / (2.0 * BLUR_SIGMA * BLUR_SIGMA)).exp();
    let total = 1.0 + 2.0 * side;
    [side / total, 1.0 / total, side / total]
}

/// Separable 3x3 Gaussian blur with edge replication.
pub fn blur(img: &[f64]) -> Vec<f64> {
    let k = gaussian_kernel();
    let at = |v: &[f64], r: i64, c: i64| {
        let r = r.clamp(0, HEIGHT as i64 - 1) as usize;
        let c = c.clamp(0, WIDTH as i64 - 1) as usize;
        v[r * WIDTH + c]
    };
    let mut tmp = vec![0.0; PIXELS];
    for r in 0..HEIGHT as i64 {
        for c in 0..WIDTH as i64 {
            tmp[r as usize * WIDTH + c as usize] = (0..3).map(|i| k[i] * at(img, r, c + i as i64 - 1)).sum();
        }
    }
    let mut out = vec![0.0; PIXELS];
    for r in 0..HEIGHT as i64 {
        for c in 0..WIDTH as i64 {
            out[r as usize * WIDTH + c as usize] = (0..3).map(|i| k[i] * at(&tmp, r + i as i64 - 1, c)).sum();
        }
    }
    out
}

/// Random brightness shift, then inversion and blur each with probability one
/// half. Operates on intensities.
pub fn augment(intensity: &[f64], rng: &mut Rng) -> Vec<f64> {
    let shift = rng.gen_range(-BRIGHTNESS_SHIFT..=BRIGHTNESS_SHIFT);
    let mut img: Vec<f64> = intensity.iter().map(|p| (p + shift).clamp(0.0, 1.0)).collect();
    if rng.gen_bool(INVERT_PROB) {
        img.iter_mut().for_each(|p| *p = 1.0 - *p);
    }
    if rng.gen_bool(BLUR_PROB) {
        img = blur(&img);
    }
    img
}

pub type LabelledFrame = (Arc<Observation>, u8);

/// Last frame of each sample with its current safety label, each distinct
/// frame once.
pub fn labelled_frames(samples: &[Sample]) -> Vec<LabelledFrame> {
    let mut seen = HashSet::new();
    samples
        .iter()
        .filter_map(|s| {
            let obs = s.window.last()?;
            seen.insert(Arc::as_ptr(obs))
                .then(|| (Arc::clone(obs), s.current_label))
        })
        .collect()
}

/// Resamples both labels with replacement up to the larger class size.
pub fn balance_frames(frames: &[LabelledFrame], seed: u64) -> Result<Vec<LabelledFrame>> {
    let (unsafe_f, safe_f): (Vec<&LabelledFrame>, Vec<&LabelledFrame>) = frames.iter().partition(|f| f.1 == 0);
    if unsafe_f.is_empty() {
        return Err(Error::RebalanceImpossible { missing: 0 });
    }
    if safe_f.is_empty() {
        return Err(Error::RebalanceImpossible { missing: 1 });
    }
    let target = unsafe_f.len().max(safe_f.len());
    let mut rng = rng_from(seed);
    let mut out = Vec::with_capacity(2 * target);
    for class in [&unsafe_f, &safe_f] {
        for _ in 0..target {
            out.push((*class[rng.gen_range(0..class.len())]).clone());
        }
    }
    out.shuffle(&mut rng);
    Ok(out)
}

struct FrameSource<'a> {
    frames: &'a [LabelledFrame],
    augment: bool,
}

impl ExampleSource for FrameSource<'_> {
    fn len(&self) -> usize {
        self.frames.len()
    }

    fn example(&self, index: usize, rng: &mut Rng) -> (Vec<f64>, Target) {
        let (obs, label) = &self.frames[index];
        let x = if self.augment {
            let intensity: Vec<f64> = obs.pixels().iter().map(|&p| f64::from(p)).collect();
            augment(&intensity, rng).into_iter().map(|p| 1.0 - p).collect()
        } else {
            darkness(obs)
        };
        (x, Target::Class(usize::from(*label)))
    }
}

pub fn train_evaluator(
    frames: &[LabelledFrame],
    augment: bool,
    hidden: usize,
    cfg: &TrainConfig,
) -> Result<(Evaluator, Vec<f64>)> {
    if frames.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let safe = frames.iter().filter(|f| f.1 == 1).count();
    if safe == 0 || safe == frames.len() {
        return Err(Error::SingleClass(u8::from(safe > 0)));
    }
    let mut rng = rng_from(cfg.seed ^ 0x6576_616c);
    let net = DenseNet::new(&[PIXELS, hidden, 2], &[Activation::Relu, Activation::Identity], &mut rng)?;
    let (net, history) = sgd_train(&net, &FrameSource { frames, augment }, LossKind::Ce, cfg)?;
    Ok((Evaluator::Learned { net, augmented: augment }, history))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::sim::{render_observation, safety_of_state, SystemState, ACTIVITY_ANGLE};

    fn deg(d: f64) -> f64 {
        d.to_radians()
    }

    #[test]
    fn robust_examples() {
        let upright = render_observation(&SystemState::UPRIGHT);
        assert_eq!(robust_evaluate(&upright), 1);
        assert_eq!(robust_evaluate(&upright.inverted()), 1);
        let leaning = render_observation(&SystemState::new(0.0, 0.0, deg(10.0), 0.0));
        assert_eq!(robust_evaluate(&leaning), 0);
        assert_eq!(robust_evaluate(&leaning.inverted()), 0);
        assert_eq!(robust_evaluate(&Observation::blank()), 0);
    }

    #[test]
    fn robust_matches_safety_on_state_sweep() {
        let mut rng = rng_from(77);
        for i in 0..1000 {
            let theta = if i < 100 {
                // Dense around the boundary.
                deg(6.0) * (0.9 + 0.2 * i as f64 / 100.0) * if i % 2 == 0 { 1.0 } else { -1.0 }
            } else {
                rng.gen_range(-ACTIVITY_ANGLE..ACTIVITY_ANGLE)
            };
            let state = SystemState::new(rng.gen_range(-2.4..2.4), 0.0, theta, 0.0);
            let obs = render_observation(&state);
            assert_eq!(robust_evaluate(&obs), safety_of_state(&state), "{state:?}");
            assert_eq!(robust_evaluate(&obs.inverted()), safety_of_state(&state), "{state:?}");
        }
    }

    #[test]
    fn blur_preserves_constant_images_and_mass() {
        let flat = vec![0.3; PIXELS];
        assert!(blur(&flat).iter().all(|v| (v - 0.3).abs() < 1e-12));
        let mut spot = vec![0.0; PIXELS];
        spot[10 * WIDTH + 10] = 1.0;
        let b = blur(&spot);
        assert!((b.iter().sum::<f64>() - 1.0).abs() < 1e-12);
        assert!(b[10 * WIDTH + 10] < 1.0 && b[10 * WIDTH + 11] > 0.0);
    }

    #[test]
    fn augment_stays_in_range() {
        let mut rng = rng_from(5);
        let img: Vec<f64> = render_observation(&SystemState::UPRIGHT).pixels().iter().map(|&p| f64::from(p)).collect();
        for _ in 0..50 {
            assert!(augment(&img, &mut rng).iter().all(|p| (0.0..=1.0).contains(p)));
        }
    }

    #[test]
    fn single_class_frames_are_rejected() {
        let obs = Arc::new(render_observation(&SystemState::UPRIGHT));
        let frames = vec![(obs, 1u8); 4];
        assert!(matches!(
            train_evaluator(&frames, false, 4, &TrainConfig::default()),
            Err(Error::SingleClass(1))
        ));
        assert!(matches!(balance_frames(&frames, 0), Err(Error::RebalanceImpossible { missing: 0 })));
    }
}
