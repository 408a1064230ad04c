//! The four stages (simulate, train, calibrate, evaluate) as library
//! functions, plus the on-disk layout the command-line tool reads and writes.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::calib::{fit_all, select_min_ece, CalibSelection, Calibrator};
use crate::config::RunConfig;
use crate::conformal::{
    adaptive_binning, conformal_calibrate, empirical_coverage, ConformalBounds, QuantileRule, ScoredLabel,
};
use crate::data::{
    assign_splits, build_dataset, load_dataset, rebalance, save_dataset, split_by_assignment, Dataset, DatasetKind,
    Split, SplitSpec,
};
use crate::error::{Error, Result};
use crate::metrics::{reliability_data, save_metrics_csv, MetricsReport, ReliabilityDiagram};
use crate::nets::TrainConfig;
use crate::predictors::evaluator::{balance_frames, labelled_frames};
use crate::predictors::{
    train_autoencoder, train_evaluator, train_image_forecaster, train_latent_forecaster, train_monolithic,
    CompositeImage, CompositeLatent, LabelPredictor, PredictorKind,
};
use crate::seed::{derive_seed, rng_for};
use crate::sim::{run_episode, sample_initial_state, Trajectory};

pub type Splits = [Dataset; 4];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ControllerSet {
    /// One controller's episodes, no actions.
    Specific,
    /// Every controller's episodes, with actions.
    Independent,
}

impl ControllerSet {
    pub fn name(self) -> &'static str {
        match self {
            ControllerSet::Specific => "specific",
            ControllerSet::Independent => "independent",
        }
    }

    pub fn kind(self) -> DatasetKind {
        match self {
            ControllerSet::Specific => DatasetKind::ObsController,
            ControllerSet::Independent => DatasetKind::ObsAction,
        }
    }

    fn index(self) -> u64 {
        self as u64
    }

    pub fn enabled(cfg: &RunConfig) -> Vec<ControllerSet> {
        if cfg.independent {
            vec![ControllerSet::Specific, ControllerSet::Independent]
        } else {
            vec![ControllerSet::Specific]
        }
    }
}

impl fmt::Display for ControllerSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Name used in reports: the predictor kind, suffixed for the
/// controller-independent set.
pub fn model_name(set: ControllerSet, kind: PredictorKind) -> String {
    match set {
        ControllerSet::Specific => kind.name().to_string(),
        ControllerSet::Independent => format!("{}_independent", kind.name()),
    }
}

/// Episodes of every controller the enabled sets need.
pub fn simulate(cfg: &RunConfig) -> Result<Vec<Trajectory>> {
    cfg.validate()?;
    let mut out = Vec::new();
    for c in &cfg.controllers {
        if !cfg.independent && c.id != cfg.specific_controller {
            continue;
        }
        for e in 0..cfg.episodes as u64 {
            let index = (u64::from(c.id) << 32) | e;
            let init = sample_initial_state(&mut rng_for(cfg.seed, "initial-state", index));
            let seed = derive_seed(cfg.seed, "episode", index);
            out.push(run_episode(c, init, cfg.max_episode_len, seed, &cfg.sim)?);
        }
    }
    Ok(out)
}

/// Rebalanced train/calibration/validation/test datasets for every horizon.
/// Each trajectory lands in the same split at every horizon.
pub fn build_set(cfg: &RunConfig, set: ControllerSet, trajs: &[Trajectory]) -> Result<BTreeMap<usize, Splits>> {
    let chosen: Vec<&Trajectory> = trajs
        .iter()
        .filter(|t| set == ControllerSet::Independent || t.controller_id == cfg.specific_controller)
        .collect();
    let ids: Vec<u64> = chosen.iter().filter(|t| t.len() > cfg.window).map(|t| t.id).collect();
    let spec = SplitSpec {
        fractions: cfg.split,
        seed: derive_seed(cfg.seed, "split", set.index()),
    };
    let assignment = assign_splits(&ids, &spec)?;
    let mut out = BTreeMap::new();
    for &k in &cfg.horizons {
        let ds = build_dataset(chosen.iter().copied(), cfg.window, k, set.kind())?;
        let parts = split_by_assignment(&ds, &assignment)?;
        let mut balanced = Vec::with_capacity(4);
        for (i, part) in parts.iter().enumerate() {
            let stream = (set.index() << 40) | ((k as u64) << 8) | i as u64;
            balanced.push(rebalance(part, derive_seed(cfg.seed, "rebalance", stream))?);
        }
        let balanced: Splits = balanced.try_into().expect("four splits");
        out.insert(k, balanced);
    }
    Ok(out)
}

fn seeded(tc: &TrainConfig, cfg: &RunConfig, stage: &str, stream: u64) -> TrainConfig {
    TrainConfig {
        seed: derive_seed(cfg.seed, stage, stream),
        ..*tc
    }
}

#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub kind: PredictorKind,
    pub k: usize,
    pub predictor: LabelPredictor,
    pub history: Vec<f64>,
}

#[derive(Debug, Default)]
pub struct TrainReport {
    pub models: Vec<TrainedModel>,
    /// Loss histories of the shared composite parts.
    pub parts: Vec<(String, Vec<f64>)>,
    /// Models whose training failed; the others are still returned.
    pub failures: Vec<(String, Error)>,
}

/// Trains the configured predictor kinds for one controller set. Monolithic
/// predictors are trained per horizon; composite parts are trained once on the
/// shortest horizon's training split and shared across horizons.
pub fn train_set(cfg: &RunConfig, set: ControllerSet, trains: &BTreeMap<usize, Dataset>) -> Result<TrainReport> {
    let mut report = TrainReport::default();
    let stream = |extra: u64| (set.index() << 40) | extra;
    if cfg.kinds.contains(&PredictorKind::Monolithic) {
        for &k in &cfg.horizons {
            let train = trains.get(&k).ok_or_else(|| Error::InvalidParameter(format!("no training split for k={k}")))?;
            let tc = seeded(&cfg.train_monolithic, cfg, "train-monolithic", stream(k as u64));
            match train_monolithic(train, cfg.arch.monolithic_hidden, &tc) {
                Ok((p, history)) => report.models.push(TrainedModel {
                    kind: PredictorKind::Monolithic,
                    k,
                    predictor: LabelPredictor::Monolithic(p),
                    history,
                }),
                Err(e @ Error::Divergence { .. }) => report.failures.push((format!("monolithic k={k}"), e)),
                Err(e) => return Err(e),
            }
        }
    }
    let want_image = cfg.kinds.contains(&PredictorKind::CompositeImage);
    let want_latent = cfg.kinds.contains(&PredictorKind::CompositeLatent);
    if !(want_image || want_latent) {
        return Ok(report);
    }
    let k0 = *cfg.horizons.iter().min().expect("validated nonempty");
    let base = &trains[&k0];
    let mut frames = balance_frames(&labelled_frames(&base.samples), derive_seed(cfg.seed, "frames", stream(0)))?;
    frames.truncate(cfg.max_frames.max(2));
    let tc = seeded(&cfg.train_evaluator, cfg, "train-evaluator", stream(0));
    let (evaluator, history) = train_evaluator(&frames, cfg.evaluator_augment, cfg.arch.evaluator_hidden, &tc)?;
    report.parts.push(("evaluator".into(), history));
    if want_image {
        let tc = seeded(&cfg.train_forecaster, cfg, "train-forecaster", stream(0));
        match train_image_forecaster(base, cfg.arch.forecaster_hidden, &tc) {
            Ok((forecaster, history)) => {
                report.parts.push(("image_forecaster".into(), history));
                for &k in &cfg.horizons {
                    report.models.push(TrainedModel {
                        kind: PredictorKind::CompositeImage,
                        k,
                        predictor: LabelPredictor::CompositeImage(CompositeImage {
                            forecaster: forecaster.clone(),
                            evaluator: evaluator.clone(),
                            k,
                        }),
                        history: Vec::new(),
                    });
                }
            }
            Err(e @ Error::Divergence { .. }) => report.failures.push(("image forecaster".into(), e)),
            Err(e) => return Err(e),
        }
    }
    if want_latent {
        let tc = seeded(&cfg.train_autoencoder, cfg, "train-autoencoder", stream(0));
        let trained = train_autoencoder(&frames, Some(&evaluator), &cfg.arch.autoencoder, &tc).and_then(|(ae, h)| {
            let tc = seeded(&cfg.train_latent, cfg, "train-latent", stream(0));
            let (f, h2) = train_latent_forecaster(base, &ae, cfg.arch.latent_forecaster_hidden, &tc)?;
            Ok((ae, h, f, h2))
        });
        match trained {
            Ok((ae, h_ae, forecaster, h_f)) => {
                report.parts.push(("autoencoder".into(), h_ae));
                report.parts.push(("latent_forecaster".into(), h_f));
                for &k in &cfg.horizons {
                    report.models.push(TrainedModel {
                        kind: PredictorKind::CompositeLatent,
                        k,
                        predictor: LabelPredictor::CompositeLatent(CompositeLatent {
                            autoencoder: ae.clone(),
                            forecaster: forecaster.clone(),
                            evaluator: evaluator.clone(),
                            k,
                        }),
                        history: Vec::new(),
                    });
                }
            }
            Err(e @ Error::Divergence { .. }) => report.failures.push(("latent composite".into(), e)),
            Err(e) => return Err(e),
        }
    }
    Ok(report)
}

/// Composite rollouts do not depend on the horizon, so scores for every
/// horizon are computed once per window and reused.
#[derive(Debug, Default)]
pub struct ScoreCache {
    k_max: usize,
    by_window: HashMap<(u64, usize), Vec<f64>>,
}

impl ScoreCache {
    pub fn new(k_max: usize) -> Self {
        ScoreCache {
            k_max,
            by_window: HashMap::new(),
        }
    }
}

/// Uncalibrated safe-class scores of `p` on every sample of `ds`. `cache` must
/// only be shared between predictors with identical composite parts.
pub fn score_dataset(p: &LabelPredictor, ds: &Dataset, cache: &mut ScoreCache) -> Result<Vec<f64>> {
    if let LabelPredictor::Monolithic(_) = p {
        return p.score_samples(&ds.samples);
    }
    if p.k() > cache.k_max {
        return Err(Error::InvalidParameter(format!("horizon {} beyond cache limit {}", p.k(), cache.k_max)));
    }
    ds.samples
        .iter()
        .map(|s| {
            let key = (s.traj_id, s.index);
            if !cache.by_window.contains_key(&key) {
                let scores = p.horizon_scores(&s.window, s.actions.as_deref(), cache.k_max)?;
                cache.by_window.insert(key, scores);
            }
            Ok(cache.by_window[&key][p.k()])
        })
        .collect()
}

fn pairs(scores: &[f64], labels: &[u8]) -> Vec<ScoredLabel> {
    scores.iter().copied().zip(labels.iter().copied()).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct Calibration {
    pub selection: CalibSelection,
    /// Bounds under each rule of [`QuantileRule::ALL`].
    pub bounds: Vec<ConformalBounds>,
}

impl Calibration {
    pub fn bounds_for(&self, rule: QuantileRule) -> &ConformalBounds {
        self.bounds.iter().find(|b| b.rule == rule).expect("both rules computed")
    }
}

/// Picks the min-ECE calibrator on the calibration split, then derives
/// conformal bounds from calibrated validation scores.
pub fn calibrate(
    cfg: &RunConfig,
    calib: (&[f64], &[u8]),
    valid: (&[f64], &[u8]),
    seed: u64,
) -> Result<Calibration> {
    let candidates = fit_all(calib.0, calib.1, cfg.histogram_bins)?;
    let selection = select_min_ece(&candidates, calib.0, calib.1, cfg.bins)?;
    let g = selection.chosen.apply_all(valid.0);
    let binned = adaptive_binning(&pairs(&g, valid.1), cfg.bins)?;
    let bounds = QuantileRule::ALL
        .iter()
        .map(|&rule| {
            let params = crate::conformal::ConformalParams {
                seed,
                ..cfg.conformal(rule)
            };
            conformal_calibrate(&binned, &params)
        })
        .collect::<Result<_>>()?;
    Ok(Calibration { selection, bounds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub predictor: String,
    pub k: usize,
    pub rule: QuantileRule,
    /// Bin index, or `all` for the mean over bins.
    pub bin: String,
    pub c: Option<f64>,
    pub coverage: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct Evaluation {
    pub reports: Vec<MetricsReport>,
    pub reliability: ReliabilityDiagram,
    pub coverage: Vec<CoverageRow>,
}

/// Test-split metrics before and after calibration, the calibrated
/// reliability diagram with bounds, and empirical coverage under both rules.
pub fn evaluate(
    cfg: &RunConfig,
    name: &str,
    k: usize,
    cal: &Calibration,
    test: (&[f64], &[u8]),
    seed: u64,
) -> Result<Evaluation> {
    let (scores, labels) = test;
    let g = cal.selection.chosen.apply_all(scores);
    let split = Split::Test.name();
    let reports = vec![
        MetricsReport::compute(name, k, split, "uncalibrated", scores, labels, cfg.bins)?,
        MetricsReport::compute(name, k, split, "calibrated", &g, labels, cfg.bins)?,
    ];
    let reliability = reliability_data(&g, labels, cfg.bins, Some(cal.bounds_for(cfg.quantile_rule)))?;
    let fresh = pairs(&g, labels);
    let mut coverage = Vec::new();
    for bounds in &cal.bounds {
        let cov = empirical_coverage(bounds, &fresh, cfg.coverage_trials, cfg.resample_size, seed)?;
        for (j, value) in cov.per_bin.iter().enumerate() {
            coverage.push(CoverageRow {
                predictor: name.to_string(),
                k,
                rule: bounds.rule,
                bin: j.to_string(),
                c: Some(bounds.c[j]),
                coverage: *value,
            });
        }
        coverage.push(CoverageRow {
            predictor: name.to_string(),
            k,
            rule: bounds.rule,
            bin: "all".into(),
            c: None,
            coverage: Some(cov.overall),
        });
    }
    Ok(Evaluation {
        reports,
        reliability,
        coverage,
    })
}

/// Results of one model carried through calibration and evaluation.
#[derive(Debug, Clone)]
pub struct ModelResult {
    pub set: ControllerSet,
    pub kind: PredictorKind,
    pub k: usize,
    pub calibration: Calibration,
    pub evaluation: Evaluation,
}

fn model_stream(set: ControllerSet, kind: PredictorKind, k: usize) -> u64 {
    (set.index() << 40) | ((kind as u64) << 16) | k as u64
}

/// Calibrates and evaluates already trained models against in-memory splits.
pub fn calibrate_and_evaluate(
    cfg: &RunConfig,
    set: ControllerSet,
    splits: &BTreeMap<usize, Splits>,
    models: &[TrainedModel],
) -> Result<Vec<ModelResult>> {
    let k_max = cfg.horizons.iter().copied().max().unwrap_or(0);
    let mut caches: HashMap<PredictorKind, ScoreCache> = HashMap::new();
    let mut out = Vec::new();
    for m in models {
        let cache = caches.entry(m.kind).or_insert_with(|| ScoreCache::new(k_max));
        let sp = splits
            .get(&m.k)
            .ok_or_else(|| Error::InvalidParameter(format!("no datasets for k={}", m.k)))?;
        let [_, calib, valid, test] = sp;
        let score = |ds: &Dataset, cache: &mut ScoreCache| score_dataset(&m.predictor, ds, cache);
        let (sc, sv, se) = (score(calib, cache)?, score(valid, cache)?, score(test, cache)?);
        let stream = model_stream(set, m.kind, m.k);
        let calibration = calibrate(
            cfg,
            (&sc, &calib.labels()),
            (&sv, &valid.labels()),
            derive_seed(cfg.seed, "conformal", stream),
        )?;
        let evaluation = evaluate(
            cfg,
            &model_name(set, m.kind),
            m.k,
            &calibration,
            (&se, &test.labels()),
            derive_seed(cfg.seed, "coverage", stream),
        )?;
        out.push(ModelResult {
            set,
            kind: m.kind,
            k: m.k,
            calibration,
            evaluation,
        });
    }
    Ok(out)
}

/// File locations under an output directory.
#[derive(Debug, Clone)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn dataset(&self, set: ControllerSet, k: usize, split: Split) -> PathBuf {
        self.root
            .join("data")
            .join(set.name())
            .join(format!("k{k}"))
            .join(format!("{}.jsonl", split.name()))
    }

    fn models_dir(&self, set: ControllerSet) -> PathBuf {
        self.root.join("models").join(set.name())
    }

    pub fn bundle(&self, set: ControllerSet, kind: PredictorKind, k: usize) -> PathBuf {
        self.models_dir(set).join(format!("{}_k{k}.json", kind.name()))
    }

    pub fn loss(&self, set: ControllerSet, part: &str) -> PathBuf {
        self.models_dir(set).join(format!("{part}_loss.csv"))
    }

    fn calib_file(&self, set: ControllerSet, kind: PredictorKind, k: usize, suffix: &str) -> PathBuf {
        self.root
            .join("calib")
            .join(set.name())
            .join(format!("{}_k{k}_{suffix}", kind.name()))
    }

    pub fn calibrator(&self, set: ControllerSet, kind: PredictorKind, k: usize) -> PathBuf {
        self.calib_file(set, kind, k, "calibrator.json")
    }

    pub fn selection(&self, set: ControllerSet, kind: PredictorKind, k: usize) -> PathBuf {
        self.calib_file(set, kind, k, "selection.csv")
    }

    pub fn bounds(&self, set: ControllerSet, kind: PredictorKind, k: usize, rule: QuantileRule) -> PathBuf {
        self.calib_file(set, kind, k, &format!("bounds_{}.csv", rule.name()))
    }

    pub fn metrics(&self) -> PathBuf {
        self.root.join("reports").join("metrics.csv")
    }

    pub fn coverage(&self) -> PathBuf {
        self.root.join("reports").join("coverage.csv")
    }

    pub fn reliability(&self, set: ControllerSet, kind: PredictorKind, k: usize) -> PathBuf {
        self.root
            .join("reports")
            .join("reliability")
            .join(format!("{}_k{k}.csv", model_name(set, kind)))
    }
}

fn ensure_parent(path: &Path) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    Ok(())
}

fn save_history(path: &Path, history: &[f64]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["epoch", "loss"])?;
    for (i, l) in history.iter().enumerate() {
        w.write_record([i.to_string(), l.to_string()])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub type Log<'a> = &'a mut dyn FnMut(&str);

pub fn cmd_simulate(cfg: &RunConfig, layout: &Layout, log: Log) -> Result<()> {
    let trajs = simulate(cfg)?;
    log(&format!("simulated {} episodes", trajs.len()));
    for set in ControllerSet::enabled(cfg) {
        for (k, splits) in build_set(cfg, set, &trajs)? {
            for (split, ds) in Split::ALL.iter().zip(&splits) {
                let path = layout.dataset(set, k, *split);
                ensure_parent(&path)?;
                save_dataset(ds, &path)?;
                let (unsafe_n, safe_n) = ds.class_counts();
                log(&format!("{set} k={k} {}: {} windows ({safe_n} safe, {unsafe_n} unsafe)", split.name(), ds.len()));
            }
        }
    }
    Ok(())
}

pub fn cmd_train(cfg: &RunConfig, layout: &Layout, log: Log) -> Result<()> {
    cfg.validate()?;
    let mut first_failure = None;
    for set in ControllerSet::enabled(cfg) {
        let mut trains = BTreeMap::new();
        for &k in &cfg.horizons {
            trains.insert(k, load_dataset(layout.dataset(set, k, Split::Train))?);
        }
        let report = train_set(cfg, set, &trains)?;
        for m in &report.models {
            let path = layout.bundle(set, m.kind, m.k);
            ensure_parent(&path)?;
            m.predictor.save(&path)?;
            if !m.history.is_empty() {
                save_history(&layout.loss(set, &format!("{}_k{}", m.kind.name(), m.k)), &m.history)?;
            }
            log(&format!("{set} {} k={}: saved", m.kind, m.k));
        }
        for (part, history) in &report.parts {
            save_history(&layout.loss(set, part), history)?;
        }
        for (what, e) in report.failures {
            log(&format!("{set} {what}: training failed: {e}"));
            first_failure.get_or_insert(e);
        }
    }
    first_failure.map_or(Ok(()), Err)
}

pub fn cmd_calibrate(cfg: &RunConfig, layout: &Layout, log: Log) -> Result<()> {
    cfg.validate()?;
    let k_max = cfg.horizons.iter().copied().max().unwrap_or(0);
    for set in ControllerSet::enabled(cfg) {
        for &kind in &cfg.kinds {
            let mut cache = ScoreCache::new(k_max);
            for &k in &cfg.horizons {
                let p = LabelPredictor::load(layout.bundle(set, kind, k))?;
                let calib = load_dataset(layout.dataset(set, k, Split::Calib))?;
                let valid = load_dataset(layout.dataset(set, k, Split::Valid))?;
                let sc = score_dataset(&p, &calib, &mut cache)?;
                let sv = score_dataset(&p, &valid, &mut cache)?;
                let seed = derive_seed(cfg.seed, "conformal", model_stream(set, kind, k));
                let cal = calibrate(cfg, (&sc, &calib.labels()), (&sv, &valid.labels()), seed)?;
                let path = layout.calibrator(set, kind, k);
                ensure_parent(&path)?;
                cal.selection.chosen.save(&path)?;
                cal.selection.save_csv(layout.selection(set, kind, k))?;
                for b in &cal.bounds {
                    b.save_csv(layout.bounds(set, kind, k, b.rule))?;
                }
                log(&format!("{set} {kind} k={k}: chose {}", cal.selection.chosen.kind()));
            }
        }
    }
    Ok(())
}

fn save_coverage(path: &Path, rows: &[CoverageRow]) -> Result<()> {
    ensure_parent(path)?;
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["predictor", "k", "rule", "bin", "c", "coverage"])?;
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        w.write_record([
            r.predictor.clone(),
            r.k.to_string(),
            r.rule.name().to_string(),
            r.bin.clone(),
            opt(r.c),
            opt(r.coverage),
        ])?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn cmd_evaluate(cfg: &RunConfig, layout: &Layout, log: Log) -> Result<()> {
    cfg.validate()?;
    let k_max = cfg.horizons.iter().copied().max().unwrap_or(0);
    let mut reports = Vec::new();
    let mut coverage = Vec::new();
    for set in ControllerSet::enabled(cfg) {
        for &kind in &cfg.kinds {
            let mut cache = ScoreCache::new(k_max);
            for &k in &cfg.horizons {
                let p = LabelPredictor::load(layout.bundle(set, kind, k))?;
                let chosen = Calibrator::load(layout.calibrator(set, kind, k))?;
                let selection = CalibSelection {
                    ece: CalibSelection::load_csv(layout.selection(set, kind, k))?,
                    chosen,
                };
                let bounds = QuantileRule::ALL
                    .iter()
                    .map(|&rule| ConformalBounds::load_csv(layout.bounds(set, kind, k, rule), &cfg.conformal(rule)))
                    .collect::<Result<_>>()?;
                let cal = Calibration { selection, bounds };
                let test = load_dataset(layout.dataset(set, k, Split::Test))?;
                let se = score_dataset(&p, &test, &mut cache)?;
                let seed = derive_seed(cfg.seed, "coverage", model_stream(set, kind, k));
                let ev = evaluate(cfg, &model_name(set, kind), k, &cal, (&se, &test.labels()), seed)?;
                let path = layout.reliability(set, kind, k);
                ensure_parent(&path)?;
                ev.reliability.save_csv(&path)?;
                let cal_row = &ev.reports[1];
                log(&format!(
                    "{} k={k}: f1 {:.3} fpr {:.3} ece {:.3} -> {:.3}",
                    model_name(set, kind),
                    cal_row.f1,
                    cal_row.fpr,
                    ev.reports[0].ece,
                    cal_row.ece
                ));
                reports.extend(ev.reports);
                coverage.extend(ev.coverage);
            }
        }
    }
    let path = layout.metrics();
    ensure_parent(&path)?;
    save_metrics_csv(&path, &reports)?;
    save_coverage(&layout.coverage(), &coverage)
}
