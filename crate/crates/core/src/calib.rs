//! Post-hoc calibrators mapping a predictor's safe-class softmax score to a
//! safety chance, and min-ECE selection among them.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::conformal::assign_bin;
use crate::error::{Error, Result};
use crate::metrics::ece;
use crate::nets::sigmoid;

/// Clamp applied to scores before any log or logit.
pub const SCORE_EPS: f64 = 1e-7;
pub const GD_ITERATIONS: usize = 2000;
pub const GD_LR: f64 = 0.1;
pub const TEMPERATURE_RANGE: (f64, f64) = (0.05, 20.0);

pub fn clamp_score(s: f64) -> f64 {
    s.clamp(SCORE_EPS, 1.0 - SCORE_EPS)
}

pub fn logit(s: f64) -> f64 {
    let s = clamp_score(s);
    (s / (1.0 - s)).ln()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CalibKind {
    Isotonic,
    Temperature,
    Platt,
    Beta,
    Histogram,
}

impl CalibKind {
    /// Also the tie-break order of [`select_min_ece`].
    pub const ALL: [CalibKind; 5] = [
        CalibKind::Isotonic,
        CalibKind::Temperature,
        CalibKind::Platt,
        CalibKind::Beta,
        CalibKind::Histogram,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CalibKind::Isotonic => "isotonic",
            CalibKind::Temperature => "temperature",
            CalibKind::Platt => "platt",
            CalibKind::Beta => "beta",
            CalibKind::Histogram => "histogram",
        }
    }
}

impl fmt::Display for CalibKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CalibKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        CalibKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::InvalidParameter(format!("unknown calibrator `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Calibrator {
    /// `sigmoid(a * logit(s) + b)`
    Platt { a: f64, b: f64 },
    /// `sigmoid(logit(s) / t)`, the two-class form of `softmax(z / t)`.
    Temperature { t: f64 },
    /// Equal-count bins given by score ranges, each with a pooled safe fraction.
    Histogram { ranges: Vec<(f64, f64)>, values: Vec<f64> },
    /// Left-continuous step function through `(x[i], y[i])`.
    Isotonic { x: Vec<f64>, y: Vec<f64> },
    /// `sigmoid(a ln s - b ln(1 - s) + c)` with `a, b >= 0`.
    Beta { a: f64, b: f64, c: f64 },
}

impl Calibrator {
    pub fn kind(&self) -> CalibKind {
        match self {
            Calibrator::Platt { .. } => CalibKind::Platt,
            Calibrator::Temperature { .. } => CalibKind::Temperature,
            Calibrator::Histogram { .. } => CalibKind::Histogram,
            Calibrator::Isotonic { .. } => CalibKind::Isotonic,
            Calibrator::Beta { .. } => CalibKind::Beta,
        }
    }

    pub fn identity() -> Self {
        Calibrator::Temperature { t: 1.0 }
    }

    pub fn apply(&self, s: f64) -> f64 {
        match self {
            Calibrator::Platt { a, b } => sigmoid(a * logit(s) + b),
            Calibrator::Temperature { t } => sigmoid(logit(s) / t),
            Calibrator::Histogram { ranges, values } => values[assign_bin(ranges, s)],
            Calibrator::Isotonic { x, y } => {
                let i = x.partition_point(|&xi| xi < s);
                y[i.min(y.len() - 1)]
            }
            Calibrator::Beta { a, b, c } => {
                let s = clamp_score(s);
                sigmoid(a * s.ln() - b * (1.0 - s).ln() + c)
            }
        }
    }

    pub fn apply_all(&self, scores: &[f64]) -> Vec<f64> {
        scores.iter().map(|&s| self.apply(s)).collect()
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text + "\n").map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let cal: Calibrator =
            serde_json::from_str(&text).map_err(|e| Error::malformed(path, e.to_string()))?;
        cal.validate().map_err(|e| Error::malformed(path, e.to_string()))?;
        Ok(cal)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidParameter(format!("{} calibrator: {m}", self.kind())));
        match self {
            Calibrator::Temperature { t } if !(t.is_finite() && *t > 0.0) => bad("t must be > 0"),
            Calibrator::Beta { a, b, .. } if *a < 0.0 || *b < 0.0 => bad("a, b must be >= 0"),
            Calibrator::Histogram { ranges, values }
                if ranges.is_empty() || ranges.len() != values.len() =>
            {
                bad("ranges and values must be nonempty and equal length")
            }
            Calibrator::Isotonic { x, y } if x.is_empty() || x.len() != y.len() => {
                bad("x and y must be nonempty and equal length")
            }
            _ => Ok(()),
        }
    }
}

fn check_inputs(scores: &[f64], labels: &[u8], need_both: bool) -> Result<()> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    if scores.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if scores.iter().any(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter("non-finite score".into()));
    }
    if need_both {
        let safe = labels.iter().filter(|&&y| y != 0).count();
        if safe == 0 {
            return Err(Error::SingleClass(0));
        }
        if safe == labels.len() {
            return Err(Error::SingleClass(1));
        }
    }
    Ok(())
}

/// Mean and standard deviation, with the deviation replaced by 1 when degenerate.
fn standardizer(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mu = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / n).sqrt();
    (mu, if sd > 1e-12 { sd } else { 1.0 })
}

/// Full-batch gradient descent on mean cross-entropy of `sigmoid(w . z + c)` over
/// standardized features `z`. Weights flagged in `nonneg` are projected onto `[0, inf)`.
fn logistic_gd(features: &[Vec<f64>], labels: &[u8], w0: &[f64], c0: f64, nonneg: bool) -> (Vec<f64>, f64) {
    let d = w0.len();
    let n = labels.len() as f64;
    let (mut w, mut c) = (w0.to_vec(), c0);
    let mut gw = vec![0.0; d];
    for _ in 0..GD_ITERATIONS {
        gw.iter_mut().for_each(|g| *g = 0.0);
        let mut gc = 0.0;
        for (z, &y) in features.iter().zip(labels) {
            let p = sigmoid(w.iter().zip(z).map(|(a, b)| a * b).sum::<f64>() + c);
            let r = p - f64::from(y);
            for (g, zi) in gw.iter_mut().zip(z) {
                *g += r * zi;
            }
            gc += r;
        }
        for (wi, g) in w.iter_mut().zip(&gw) {
            *wi -= GD_LR * g / n;
            if nonneg {
                *wi = wi.max(0.0);
            }
        }
        c -= GD_LR * gc / n;
    }
    (w, c)
}

/// Logistic regression on `logit(score)`, started from the identity map.
pub fn fit_platt(scores: &[f64], labels: &[u8]) -> Result<Calibrator> {
    check_inputs(scores, labels, true)?;
    let x: Vec<f64> = scores.iter().map(|&s| logit(s)).collect();
    let (mu, sd) = standardizer(&x);
    let z: Vec<Vec<f64>> = x.iter().map(|v| vec![(v - mu) / sd]).collect();
    // a x + b = (a sd) z + (b + a mu)
    let (w, c) = logistic_gd(&z, labels, &[sd], mu, false);
    let a = w[0] / sd;
    Ok(Calibrator::Platt { a, b: c - a * mu })
}

fn temperature_nll(margins: &[f64], labels: &[u8], t: f64) -> f64 {
    margins
        .iter()
        .zip(labels)
        .map(|(&m, &y)| {
            let p = sigmoid(m / t).clamp(SCORE_EPS, 1.0 - SCORE_EPS);
            if y != 0 {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum::<f64>()
        / margins.len() as f64
}

/// Golden-section search for the temperature over two-class logit pairs
/// `[unsafe, safe]`.
pub fn fit_temperature(logit_pairs: &[[f64; 2]], labels: &[u8]) -> Result<Calibrator> {
    let margins: Vec<f64> = logit_pairs.iter().map(|z| z[1] - z[0]).collect();
    check_inputs(&margins, labels, true)?;
    let f = |t: f64| temperature_nll(&margins, labels, t);
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let (mut lo, mut hi) = TEMPERATURE_RANGE;
    let mut x1 = hi - inv_phi * (hi - lo);
    let mut x2 = lo + inv_phi * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    while hi - lo > 1e-6 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - inv_phi * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + inv_phi * (hi - lo);
            f2 = f(x2);
        }
    }
    Ok(Calibrator::Temperature { t: (lo + hi) / 2.0 })
}

/// Temperature fit from safe-class scores, recovering the logit margin.
pub fn fit_temperature_scores(scores: &[f64], labels: &[u8]) -> Result<Calibrator> {
    let pairs: Vec<[f64; 2]> = scores.iter().map(|&s| [0.0, logit(s)]).collect();
    fit_temperature(&pairs, labels)
}

/// Weighted pool-adjacent-violators: nondecreasing least-squares fit of `y`.
pub fn pava(y: &[f64], w: &[f64]) -> Vec<f64> {
    // (mean, weight, length) blocks
    let mut blocks: Vec<(f64, f64, usize)> = Vec::with_capacity(y.len());
    for (&yi, &wi) in y.iter().zip(w) {
        blocks.push((yi, wi, 1));
        while blocks.len() > 1 {
            let (m2, w2, l2) = blocks[blocks.len() - 1];
            let (m1, w1, l1) = blocks[blocks.len() - 2];
            if m1 <= m2 {
                break;
            }
            blocks.pop();
            let wt = w1 + w2;
            *blocks.last_mut().unwrap() = ((m1 * w1 + m2 * w2) / wt, wt, l1 + l2);
        }
    }
    blocks
        .into_iter()
        .flat_map(|(m, _, l)| std::iter::repeat_n(m, l))
        .collect()
}

/// Sorts by score and groups equal scores into weighted points.
fn grouped(scores: &[f64], labels: &[u8]) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let mut idx: Vec<usize> = (0..scores.len()).collect();
    idx.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let (mut x, mut y, mut w) = (Vec::new(), Vec::new(), Vec::new());
    for i in idx {
        let (s, l) = (scores[i], f64::from(labels[i]));
        if x.last() == Some(&s) {
            let j = x.len() - 1;
            y[j] += l;
            w[j] += 1.0;
        } else {
            x.push(s);
            y.push(l);
            w.push(1.0);
        }
    }
    for (yi, wi) in y.iter_mut().zip(&w) {
        *yi /= wi;
    }
    (x, y, w)
}

pub fn fit_isotonic(scores: &[f64], labels: &[u8]) -> Result<Calibrator> {
    check_inputs(scores, labels, false)?;
    let (x, y, w) = grouped(scores, labels);
    Ok(Calibrator::Isotonic { y: pava(&y, &w), x })
}

/// Equal-count bins over sorted scores (sizes differ by at most one), valued by
/// safe fraction and then pooled to be nondecreasing.
pub fn fit_histogram(scores: &[f64], labels: &[u8], bins: usize) -> Result<Calibrator> {
    check_inputs(scores, labels, false)?;
    if bins == 0 {
        return Err(Error::InvalidParameter("histogram bins must be >= 1".into()));
    }
    if scores.len() < bins {
        return Err(Error::NotEnoughSamples {
            have: scores.len(),
            need: bins,
        });
    }
    let mut pairs: Vec<(f64, u8)> = scores.iter().copied().zip(labels.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let n = pairs.len();
    let (mut ranges, mut values, mut weights) = (Vec::new(), Vec::new(), Vec::new());
    for j in 0..bins {
        let chunk = &pairs[j * n / bins..(j + 1) * n / bins];
        ranges.push((chunk[0].0, chunk[chunk.len() - 1].0));
        values.push(chunk.iter().map(|p| f64::from(p.1)).sum::<f64>() / chunk.len() as f64);
        weights.push(chunk.len() as f64);
    }
    Ok(Calibrator::Histogram {
        ranges,
        values: pava(&values, &weights),
    })
}

/// Logistic regression on `(ln s, -ln(1 - s))` with nonnegative coefficients,
/// started from the identity map.
pub fn fit_beta(scores: &[f64], labels: &[u8]) -> Result<Calibrator> {
    check_inputs(scores, labels, true)?;
    let s: Vec<f64> = scores.iter().map(|&s| clamp_score(s)).collect();
    let x1: Vec<f64> = s.iter().map(|s| s.ln()).collect();
    let x2: Vec<f64> = s.iter().map(|s| -(1.0 - s).ln()).collect();
    let (m1, s1) = standardizer(&x1);
    let (m2, s2) = standardizer(&x2);
    let z: Vec<Vec<f64>> = x1
        .iter()
        .zip(&x2)
        .map(|(a, b)| vec![(a - m1) / s1, (b - m2) / s2])
        .collect();
    let (w, c) = logistic_gd(&z, labels, &[s1, s2], m1 + m2, true);
    let (a, b) = (w[0] / s1, w[1] / s2);
    Ok(Calibrator::Beta {
        a,
        b,
        c: c - a * m1 - b * m2,
    })
}

/// Fits every family; families that need both classes are skipped on
/// single-class input.
pub fn fit_all(scores: &[f64], labels: &[u8], histogram_bins: usize) -> Result<Vec<Calibrator>> {
    let mut out = Vec::new();
    for kind in CalibKind::ALL {
        let fitted = match kind {
            CalibKind::Isotonic => fit_isotonic(scores, labels),
            CalibKind::Temperature => fit_temperature_scores(scores, labels),
            CalibKind::Platt => fit_platt(scores, labels),
            CalibKind::Beta => fit_beta(scores, labels),
            CalibKind::Histogram => fit_histogram(scores, labels, histogram_bins),
        };
        match fitted {
            Ok(c) => out.push(c),
            Err(Error::SingleClass(_)) => {}
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CalibSelection {
    pub chosen: Calibrator,
    /// ECE of each candidate on the fitting data, in candidate order.
    pub ece: Vec<(CalibKind, f64)>,
}

impl CalibSelection {
    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["kind", "ece"])?;
        for (k, e) in &self.ece {
            w.write_record([k.name().to_string(), e.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Vec<(CalibKind, f64)>> {
        let path = path.as_ref();
        let mut r = csv::Reader::from_path(path)?;
        let mut out = Vec::new();
        for rec in r.records() {
            let rec = rec?;
            let kind = rec.get(0).unwrap_or_default().parse()?;
            let e = rec
                .get(1)
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::malformed(path, "bad ece value"))?;
            out.push((kind, e));
        }
        Ok(out)
    }
}

/// Picks the candidate with the smallest ECE on `(scores, labels)`; ties go to
/// the earlier kind in [`CalibKind::ALL`], then to the earlier candidate.
pub fn select_min_ece(candidates: &[Calibrator], scores: &[f64], labels: &[u8], q: usize) -> Result<CalibSelection> {
    if candidates.is_empty() {
        return Err(Error::InvalidParameter("no calibrator candidates".into()));
    }
    let mut eces = Vec::with_capacity(candidates.len());
    for c in candidates {
        eces.push((c.kind(), ece(&c.apply_all(scores), labels, q)?));
    }
    let best = (0..candidates.len())
        .min_by(|&i, &j| {
            eces[i]
                .1
                .total_cmp(&eces[j].1)
                .then(eces[i].0.cmp(&eces[j].0))
                .then(i.cmp(&j))
        })
        .unwrap();
    Ok(CalibSelection {
        chosen: candidates[best].clone(),
        ece: eces,
    })
}
