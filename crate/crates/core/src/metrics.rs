//! F1, FPR, ECE and MCE with "safe" (label 1) as the positive class, plus
//! reliability-diagram rows and the report CSV formats.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::conformal::{adaptive_binning, ConformalBounds, ScoredLabel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct Confusion {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    pub r#fn: usize,
}

impl Confusion {
    pub fn from_predictions(predictions: &[u8], labels: &[u8]) -> Result<Self> {
        if predictions.len() != labels.len() {
            return Err(Error::DimensionMismatch {
                expected: labels.len(),
                got: predictions.len(),
            });
        }
        if labels.is_empty() {
            return Err(Error::EmptyDataset);
        }
        let mut c = Confusion::default();
        for (&p, &y) in predictions.iter().zip(labels) {
            match (p != 0, y != 0) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.r#fn += 1,
            }
        }
        Ok(c)
    }

    /// Zero when there are no true or predicted positives.
    pub fn f1(&self) -> f64 {
        let denom = 2 * self.tp + self.fp + self.r#fn;
        if self.tp == 0 {
            0.0
        } else {
            2.0 * self.tp as f64 / denom as f64
        }
    }

    /// Zero when there are no actual negatives.
    pub fn fpr(&self) -> f64 {
        let neg = self.fp + self.tn;
        if neg == 0 {
            0.0
        } else {
            self.fp as f64 / neg as f64
        }
    }
}

pub fn f1_score(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(Confusion::from_predictions(predictions, labels)?.f1())
}

pub fn fpr(predictions: &[u8], labels: &[u8]) -> Result<f64> {
    Ok(Confusion::from_predictions(predictions, labels)?.fpr())
}

fn pairs(scores: &[f64], labels: &[u8]) -> Result<Vec<ScoredLabel>> {
    if scores.len() != labels.len() {
        return Err(Error::DimensionMismatch {
            expected: labels.len(),
            got: scores.len(),
        });
    }
    Ok(scores.iter().copied().zip(labels.iter().copied()).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ReliabilityRow {
    pub bin: usize,
    pub conf: f64,
    pub acc: f64,
    pub count: usize,
    pub c: Option<f64>,
}

impl ReliabilityRow {
    pub fn gap(&self) -> f64 {
        (self.conf - self.acc).abs()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ReliabilityDiagram {
    pub rows: Vec<ReliabilityRow>,
}

pub fn reliability_data(
    scores: &[f64],
    labels: &[u8],
    q: usize,
    bounds: Option<&ConformalBounds>,
) -> Result<ReliabilityDiagram> {
    if let Some(b) = bounds {
        if b.q() != q {
            return Err(Error::DimensionMismatch {
                expected: q,
                got: b.q(),
            });
        }
    }
    let bv = adaptive_binning(&pairs(scores, labels)?, q)?;
    let rows = bv
        .bins
        .iter()
        .enumerate()
        .map(|(j, bin)| {
            let n = bin.len() as f64;
            ReliabilityRow {
                bin: j,
                conf: bin.iter().map(|p| p.0).sum::<f64>() / n,
                acc: bin.iter().map(|p| f64::from(p.1)).sum::<f64>() / n,
                count: bin.len(),
                c: bounds.map(|b| b.c[j]),
            }
        })
        .collect();
    Ok(ReliabilityDiagram { rows })
}

impl ReliabilityDiagram {
    pub fn ece(&self) -> f64 {
        let total: usize = self.rows.iter().map(|r| r.count).sum();
        self.rows
            .iter()
            .map(|r| r.count as f64 / total as f64 * r.gap())
            .sum()
    }

    pub fn mce(&self) -> f64 {
        self.rows.iter().map(ReliabilityRow::gap).fold(0.0, f64::max)
    }

    pub fn save_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let mut w = csv::Writer::from_path(path)?;
        w.write_record(["bin", "conf", "acc", "count", "c"])?;
        for r in &self.rows {
            w.write_record([
                r.bin.to_string(),
                r.conf.to_string(),
                r.acc.to_string(),
                r.count.to_string(),
                r.c.map(|c| c.to_string()).unwrap_or_default(),
            ])?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load_csv(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::MissingInput(path.to_path_buf()));
        }
        let mut r = csv::Reader::from_path(path)?;
        if r.headers()?.iter().collect::<Vec<_>>() != ["bin", "conf", "acc", "count", "c"] {
            return Err(Error::malformed(path, "expected columns bin,conf,acc,count,c"));
        }
        let mut rows = Vec::new();
        for (i, rec) in r.records().enumerate() {
            let rec = rec?;
            let bad = || Error::malformed(path, format!("row {i}"));
            let field = |k: usize| rec.get(k).ok_or_else(bad);
            let c = match field(4)? {
                "" => None,
                v => Some(v.parse().map_err(|_| bad())?),
            };
            rows.push(ReliabilityRow {
                bin: field(0)?.parse().map_err(|_| bad())?,
                conf: field(1)?.parse().map_err(|_| bad())?,
                acc: field(2)?.parse().map_err(|_| bad())?,
                count: field(3)?.parse().map_err(|_| bad())?,
                c,
            });
        }
        Ok(ReliabilityDiagram { rows })
    }
}

/// Equal-count binned ECE and MCE; the binning remainder is ignored.
pub fn ece_mce(scores: &[f64], labels: &[u8], q: usize) -> Result<(f64, f64)> {
    let d = reliability_data(scores, labels, q, None)?;
    Ok((d.ece(), d.mce()))
}

pub fn ece(scores: &[f64], labels: &[u8], q: usize) -> Result<f64> {
    Ok(ece_mce(scores, labels, q)?.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub predictor: String,
    pub k: usize,
    pub split: String,
    /// `uncalibrated` or `calibrated`.
    pub stage: String,
    pub f1: f64,
    pub fpr: f64,
    pub ece: f64,
    pub mce: f64,
    pub n: usize,
}

impl MetricsReport {
    /// Labels come from thresholding `scores` at 0.5 (ties to unsafe).
    pub fn compute(
        predictor: &str,
        k: usize,
        split: &str,
        stage: &str,
        scores: &[f64],
        labels: &[u8],
        q: usize,
    ) -> Result<Self> {
        let predictions: Vec<u8> = scores.iter().map(|&s| u8::from(s > 0.5)).collect();
        let conf = Confusion::from_predictions(&predictions, labels)?;
        let (ece, mce) = ece_mce(scores, labels, q)?;
        Ok(MetricsReport {
            predictor: predictor.to_string(),
            k,
            split: split.to_string(),
            stage: stage.to_string(),
            f1: conf.f1(),
            fpr: conf.fpr(),
            ece,
            mce,
            n: labels.len(),
        })
    }
}

pub fn save_metrics_csv(path: impl AsRef<Path>, reports: &[MetricsReport]) -> Result<()> {
    let path = path.as_ref();
    let mut w = csv::Writer::from_path(path)?;
    if reports.is_empty() {
        w.write_record(["predictor", "k", "split", "stage", "f1", "fpr", "ece", "mce", "n"])?;
    }
    for r in reports {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn load_metrics_csv(path: impl AsRef<Path>) -> Result<Vec<MetricsReport>> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::conformal::QuantileRule;
    use crate::seed::rng_from;
    use rand::Rng as _;

    #[test]
    fn confusion_arithmetic() {
        // TP=2, FP=1, FN=1, TN=1
        let pred = [1, 1, 1, 0, 0];
        let lab = [1, 1, 0, 1, 0];
        assert!((f1_score(&pred, &lab).unwrap() - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(fpr(&pred, &lab).unwrap(), 0.5);
        assert_eq!(f1_score(&lab, &lab).unwrap(), 1.0);
        assert_eq!(fpr(&lab, &lab).unwrap(), 0.0);
        assert_eq!(f1_score(&[0, 0, 0], &[1, 0, 1]).unwrap(), 0.0);
        assert!(matches!(f1_score(&[1], &[1, 0]), Err(Error::DimensionMismatch { .. })));
    }

    #[test]
    fn ece_arithmetic() {
        let (e, m) = ece_mce(&[0.1, 0.1, 0.9, 0.9], &[0, 0, 0, 1], 2).unwrap();
        assert!((e - 0.25).abs() < 1e-12);
        assert!((m - 0.4).abs() < 1e-12);
        let (e, m) = ece_mce(&[0.0, 1.0, 1.0, 0.0], &[0, 1, 1, 0], 2).unwrap();
        assert_eq!((e, m), (0.0, 0.0));
        assert!(ece_mce(&[0.5], &[1], 2).is_err());
    }

    #[test]
    fn bernoulli_scores_are_calibrated() {
        let mut rng = rng_from(11);
        let mut scores = Vec::new();
        let mut labels = Vec::new();
        for _ in 0..100_000 {
            let s: f64 = rng.gen_range(0.0..1.0);
            scores.push(s);
            labels.push(u8::from(rng.gen_bool(s)));
        }
        let (e, m) = ece_mce(&scores, &labels, 10).unwrap();
        assert!(e < 0.02, "ece {e}");
        assert!(m >= e);
    }

    #[test]
    fn reliability_csv_round_trip() {
        let scores: Vec<f64> = (0..40).map(|i| f64::from(i) / 40.0 + 1e-3 / 3.0).collect();
        let labels: Vec<u8> = (0..40).map(|i| u8::from(i % 3 == 0)).collect();
        let bounds = ConformalBounds {
            c: vec![0.1, 0.2, 0.3, 1.0 / 7.0],
            ranges: vec![(0.0, 0.2), (0.25, 0.45), (0.5, 0.7), (0.75, 1.0)],
            alpha: 0.05,
            resamples: 200,
            resample_size: 500,
            rule: QuantileRule::Standard,
            quantile_index: 191,
        };
        let d = reliability_data(&scores, &labels, 4, Some(&bounds)).unwrap();
        assert_eq!(d.rows.len(), 4);
        assert!(d.rows.iter().all(|r| r.count == 10));
        assert_eq!(d.rows[3].c, Some(1.0 / 7.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rel.csv");
        d.save_csv(&path).unwrap();
        assert_eq!(ReliabilityDiagram::load_csv(&path).unwrap(), d);

        let plain = reliability_data(&scores, &labels, 4, None).unwrap();
        plain.save_csv(&path).unwrap();
        assert_eq!(ReliabilityDiagram::load_csv(&path).unwrap(), plain);
    }

    #[test]
    fn metrics_csv_round_trip_and_header() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("metrics.csv");
        let r = MetricsReport::compute("monolithic", 3, "test", "calibrated", &[0.2, 0.7, 0.9, 0.4], &[0, 1, 0, 1], 2)
            .unwrap();
        save_metrics_csv(&path, std::slice::from_ref(&r)).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("predictor,k,split,stage,f1,fpr,ece,mce,n\n"));
        assert_eq!(load_metrics_csv(&path).unwrap(), vec![r]);
    }
}
