//! Equal-count binning of calibrated scores and per-bin conformal error bounds.
//!
//! For each bin the validation pairs are bootstrap-resampled `M` times with `N`
//! draws; the nonconformity score of a resample is the absolute gap between its
//! mean predicted chance and its empirical safe fraction. The bound `c_j` is a
//! rank statistic of those scores.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::{derive_seed, rng_from};

/// A calibrated safety chance paired with the true safety label.
pub type ScoredLabel = (f64, u8);

#[derive(Debug, Clone, PartialEq)]
pub struct BinnedValidation {
    pub bins: Vec<Vec<ScoredLabel>>,
    /// `(min, max)` score of each bin.
    pub ranges: Vec<(f64, f64)>,
    /// Pairs beyond `Q * floor(n / Q)`, highest scores, excluded from every bin.
    pub dropped: usize,
}

impl BinnedValidation {
    pub fn q(&self) -> usize {
        self.bins.len()
    }

    pub fn bin_size(&self) -> usize {
        self.bins.first().map_or(0, Vec::len)
    }
}

/// Sorts by score (stable, so ties keep input order), keeps the first
/// `Q * floor(n / Q)` pairs and cuts them into `Q` consecutive equal bins.
pub fn adaptive_binning(pairs: &[ScoredLabel], q: usize) -> Result<BinnedValidation> {
    if q == 0 {
        return Err(Error::InvalidParameter("bin count Q must be >= 1".into()));
    }
    if pairs.len() < q {
        return Err(Error::NotEnoughSamples {
            have: pairs.len(),
            need: q,
        });
    }
    if pairs.iter().any(|(g, _)| !g.is_finite()) {
        return Err(Error::InvalidParameter("non-finite score".into()));
    }
    let mut sorted = pairs.to_vec();
    sorted.sort_by(|a, b| a.0.total_cmp(&b.0));
    let per_bin = pairs.len() / q;
    let bins: Vec<Vec<ScoredLabel>> = sorted[..per_bin * q]
        .chunks(per_bin)
        .map(<[_]>::to_vec)
        .collect();
    let ranges = bins.iter().map(|b| (b[0].0, b[b.len() - 1].0)).collect();
    Ok(BinnedValidation {
        bins,
        ranges,
        dropped: pairs.len() - per_bin * q,
    })
}

/// Bin for score `g` given per-bin `(min, max)` ranges in ascending order.
/// Scores below every range go to the first bin, above every range to the
/// last, and scores in a gap go to the nearer boundary (ties to the lower bin).
pub fn assign_bin(ranges: &[(f64, f64)], g: f64) -> usize {
    debug_assert!(!ranges.is_empty());
    if g <= ranges[0].1 {
        return 0;
    }
    for j in 1..ranges.len() {
        let (lo, hi) = ranges[j];
        if g < lo {
            let below = g - ranges[j - 1].1;
            let above = lo - g;
            return if below <= above { j - 1 } else { j };
        }
        if g <= hi {
            return j;
        }
    }
    ranges.len() - 1
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum QuantileRule {
    /// Rank `ceil((M/2 + 1)(1 - alpha))`. Lower than `Standard`, so bounds are tighter.
    Paper,
    /// Rank `ceil((M + 1)(1 - alpha))`, clamped to `M`.
    Standard,
}

impl QuantileRule {
    pub const ALL: [QuantileRule; 2] = [QuantileRule::Standard, QuantileRule::Paper];

    pub fn name(self) -> &'static str {
        match self {
            QuantileRule::Paper => "paper",
            QuantileRule::Standard => "standard",
        }
    }
}

impl fmt::Display for QuantileRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for QuantileRule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "paper" => Ok(QuantileRule::Paper),
            "standard" => Ok(QuantileRule::Standard),
            _ => Err(Error::InvalidParameter(format!(
                "quantile rule `{s}` (expected paper|standard)"
            ))),
        }
    }
}

// Products like 201 * 0.95 land a few ulps above an integer.
fn ceil_tolerant(x: f64) -> usize {
    (x - 1e-9).ceil().max(0.0) as usize
}

/// 1-based rank of the conformal quantile among `m` sorted scores.
pub fn quantile_index(rule: QuantileRule, m: usize, alpha: f64) -> Result<usize> {
    let n = match rule {
        QuantileRule::Paper => ceil_tolerant((m as f64 / 2.0 + 1.0) * (1.0 - alpha)),
        QuantileRule::Standard => ceil_tolerant((m as f64 + 1.0) * (1.0 - alpha)).min(m),
    }
    .max(1);
    if n > m {
        // Smallest M with ceil((M/2 + 1)(1 - alpha)) <= M.
        let required = (1..)
            .find(|&mm| ceil_tolerant((mm as f64 / 2.0 + 1.0) * (1.0 - alpha)).max(1) <= mm)
            .expect("a large enough M always exists for alpha < 1");
        return Err(Error::QuantileOutOfRange {
            index: n,
            resamples: m,
            required,
        });
    }
    Ok(n)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ConformalParams {
    pub alpha: f64,
    /// Resamples per bin, `M`.
    pub resamples: usize,
    /// Draws per resample, `N`.
    pub resample_size: usize,
    pub rule: QuantileRule,
    pub seed: u64,
}

impl Default for ConformalParams {
    fn default() -> Self {
        ConformalParams {
            alpha: 0.05,
            resamples: 200,
            resample_size: 500,
            rule: QuantileRule::Standard,
            seed: 0,
        }
    }
}

impl ConformalParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha < 0.5) {
            return Err(Error::InvalidParameter(format!(
                "alpha = {} outside (0, 0.5)",
                self.alpha
            )));
        }
        if self.resamples == 0 || self.resample_size == 0 {
            return Err(Error::InvalidParameter("M and N must be >= 1".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConformalBounds {
    pub c: Vec<f64>,
    pub ranges: Vec<(f64, f64)>,
    pub alpha: f64,
    pub resamples: usize,
    pub resample_size: usize,
    pub rule: QuantileRule,
    /// Rank used to pick each `c_j`.
    pub quantile_index: usize,
}

/// `(mean score, safe fraction)` gap of `n` draws with replacement from `bin`.
fn resample_gap(bin: &[ScoredLabel], n: usize, rng: &mut crate::seed::Rng) -> f64 {
    let (mut g, mut p) = (0.0, 0.0);
    for _ in 0..n {
        let (score, label) = bin[rng.gen_range(0..bin.len())];
        g += score;
        p += f64::from(label);
    }
    ((g - p) / n as f64).abs()
}

pub fn conformal_calibrate(bv: &BinnedValidation, params: &ConformalParams) -> Result<ConformalBounds> {
    params.validate()?;
    if bv.bins.is_empty() || bv.bins.iter().any(Vec::is_empty) {
        return Err(Error::InvalidParameter("every bin must be nonempty".into()));
    }
    let n = quantile_index(params.rule, params.resamples, params.alpha)?;
    let c = bv
        .bins
        .iter()
        .enumerate()
        .map(|(j, bin)| {
            let mut rng = rng_from(derive_seed(params.seed, "conformal-bin", j as u64));
            let mut deltas: Vec<f64> = (0..params.resamples)
                .map(|_| resample_gap(bin, params.resample_size, &mut rng))
                .collect();
            deltas.sort_by(f64::total_cmp);
            deltas[n - 1]
        })
        .collect();
    Ok(ConformalBounds {
        c,
        ranges: bv.ranges.clone(),
        alpha: params.alpha,
        resamples: params.resamples,
        resample_size: params.resample_size,
        rule: params.rule,
        quantile_index: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IntervalPrediction {
    pub g: f64,
    pub bin: usize,
    pub lo: f64,
    pub hi: f64,
}

impl ConformalBounds {
    pub fn q(&self) -> usize {
        self.c.len()
    }

    pub fn interval(&self, g: f64) -> IntervalPrediction {
        interval_predict(self, g)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin", "range_lo", "range_hi", "c"])?;
        for (j, (c, (lo, hi))) in self.c.iter().zip(&self.ranges).enumerate() {
            w.write_record([j.to_string(), lo.to_string(), hi.to_string(), c.to_string()])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    /// Reads the per-bin table; `meta` supplies what the CSV does not carry.
    pub fn load_csv(path: impl AsRef<Path>, meta: &ConformalParams) -> Result<Self> {
        let path = path.as_ref();
        meta.validate()?;
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        let headers = r.headers()?.clone();
        if headers.iter().collect::<Vec<_>>() != ["bin", "range_lo", "range_hi", "c"] {
            return Err(Error::malformed(path, "expected columns bin,range_lo,range_hi,c"));
        }
        let (mut c, mut ranges) = (Vec::new(), Vec::new());
        for (row, rec) in r.records().enumerate() {
            let rec = rec?;
            let num = |i: usize| -> Result<f64> {
                rec.get(i)
                    .and_then(|v| v.parse().ok())
                    .ok_or_else(|| Error::malformed(path, format!("row {row}, column {i}")))
            };
            ranges.push((num(1)?, num(2)?));
            c.push(num(3)?);
        }
        if c.is_empty() {
            return Err(Error::malformed(path, "no bins"));
        }
        Ok(ConformalBounds {
            c,
            ranges,
            alpha: meta.alpha,
            resamples: meta.resamples,
            resample_size: meta.resample_size,
            rule: meta.rule,
            quantile_index: quantile_index(meta.rule, meta.resamples, meta.alpha)?,
        })
    }
}

pub fn interval_predict(bounds: &ConformalBounds, g: f64) -> IntervalPrediction {
    let bin = assign_bin(&bounds.ranges, g);
    let c = bounds.c[bin];
    IntervalPrediction {
        g,
        bin,
        lo: (g - c).max(0.0),
        hi: (g + c).min(1.0),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// `None` for bins that received no fresh pairs.
    pub per_bin: Vec<Option<f64>>,
    /// Mean over bins with fresh pairs.
    pub overall: f64,
    pub trials_per_bin: usize,
}

/// Assigns fresh pairs to bins by score range, then per bin draws `trials`
/// resamples of `n` pairs and counts how often the resample gap is within `c_j`.
/// Bins that no fresh pair falls into are skipped; it is an error if all are.
pub fn empirical_coverage(
    bounds: &ConformalBounds,
    fresh: &[ScoredLabel],
    trials: usize,
    n: usize,
    seed: u64,
) -> Result<Coverage> {
    if trials == 0 || n == 0 {
        return Err(Error::InvalidParameter("trials and N must be >= 1".into()));
    }
    let mut bins: Vec<Vec<ScoredLabel>> = vec![Vec::new(); bounds.q()];
    for &(g, label) in fresh {
        bins[assign_bin(&bounds.ranges, g)].push((g, label));
    }
    if bins.iter().all(Vec::is_empty) {
        return Err(Error::NotEnoughSamples { have: 0, need: 1 });
    }
    let per_bin: Vec<Option<f64>> = bins
        .iter()
        .enumerate()
        .map(|(j, bin)| {
            if bin.is_empty() {
                return None;
            }
            let mut rng = rng_from(derive_seed(seed, "coverage-bin", j as u64));
            let hits = (0..trials)
                .filter(|_| resample_gap(bin, n, &mut rng) <= bounds.c[j])
                .count();
            Some(hits as f64 / trials as f64)
        })
        .collect();
    let filled: Vec<f64> = per_bin.iter().flatten().copied().collect();
    Ok(Coverage {
        overall: filled.iter().sum::<f64>() / filled.len() as f64,
        per_bin,
        trials_per_bin: trials,
    })
}
