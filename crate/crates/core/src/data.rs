//! Windowed safety datasets: construction, class rebalancing, trajectory-level
//! splits and a line-oriented JSON file format.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize, Serializer};

use crate::error::{Error, Result};
use crate::seed::rng_from;
use crate::sim::{Action, Observation, Trajectory, HEIGHT, WIDTH};

pub const FORMAT_VERSION: u32 = 1;
const FORMAT_NAME: &str = "chancepred-dataset";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Windows from a single fixed controller, no actions.
    ObsController,
    /// Windows paired with the actions taken, any number of controllers.
    ObsAction,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub traj_id: u64,
    /// Index `i` of the last frame of the window in its trajectory.
    pub index: usize,
    pub controller_id: u32,
    /// Frames `y_{i-m+1} ..= y_i`.
    pub window: Vec<Arc<Observation>>,
    pub actions: Option<Vec<Action>>,
    /// Safety of the state `k` steps after the last frame.
    pub label: u8,
    /// Safety of the state at the last frame.
    pub current_label: u8,
    /// `y_{i+1}`, when the trajectory has it.
    pub next_frame: Option<Arc<Observation>>,
}

impl Sample {
    pub fn last_frame(&self) -> &Observation {
        self.window.last().expect("windows are never empty")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub kind: DatasetKind,
    pub m: usize,
    pub k: usize,
    pub samples: Vec<Sample>,
    pub controller_ids: BTreeSet<u32>,
}

impl Dataset {
    pub fn empty(kind: DatasetKind, m: usize, k: usize) -> Self {
        Dataset {
            kind,
            m,
            k,
            samples: Vec::new(),
            controller_ids: BTreeSet::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// `(unsafe, safe)` sample counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let safe = self.samples.iter().filter(|s| s.label == 1).count();
        (self.samples.len() - safe, safe)
    }

    pub fn labels(&self) -> Vec<u8> {
        self.samples.iter().map(|s| s.label).collect()
    }

    fn with_samples(&self, samples: Vec<Sample>) -> Self {
        Dataset {
            kind: self.kind,
            m: self.m,
            k: self.k,
            controller_ids: samples.iter().map(|s| s.controller_id).collect(),
            samples,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == DatasetKind::ObsController && self.controller_ids.len() > 1 {
            return Err(Error::InvalidParameter(format!(
                "observation-controller dataset mixes controllers {:?}",
                self.controller_ids
            )));
        }
        for s in &self.samples {
            if s.window.len() != self.m {
                return Err(Error::DimensionMismatch {
                    expected: self.m,
                    got: s.window.len(),
                });
            }
            if s.actions.is_some() != (self.kind == DatasetKind::ObsAction) {
                return Err(Error::InvalidParameter(
                    "actions must be present exactly for observation-action datasets".into(),
                ));
            }
        }
        Ok(())
    }
}

/// One sample per index `i` in `[m-1, len-1-k]`.
pub fn build_windows(
    traj: &Trajectory,
    m: usize,
    k: usize,
    kind: DatasetKind,
) -> Result<Vec<Sample>> {
    if m == 0 {
        return Err(Error::InvalidParameter("window length m must be >= 1".into()));
    }
    let len = traj.len();
    if len < m + k {
        return Err(Error::TrajectoryTooShort { len, needed: m + k });
    }
    let steps = &traj.steps;
    Ok((m - 1..len - k)
        .map(|i| {
            let span = &steps[i + 1 - m..=i];
            Sample {
                traj_id: traj.id,
                index: i,
                controller_id: traj.controller_id,
                window: span.iter().map(|s| Arc::clone(&s.observation)).collect(),
                actions: (kind == DatasetKind::ObsAction)
                    .then(|| span.iter().map(|s| s.action).collect()),
                label: steps[i + k].label,
                current_label: steps[i].label,
                next_frame: steps.get(i + 1).map(|s| Arc::clone(&s.observation)),
            }
        })
        .collect())
}

/// Windows from every trajectory long enough for `(m, k)`; shorter ones are skipped.
pub fn build_dataset<'a>(
    trajs: impl IntoIterator<Item = &'a Trajectory>,
    m: usize,
    k: usize,
    kind: DatasetKind,
) -> Result<Dataset> {
    let mut ds = Dataset::empty(kind, m, k);
    for traj in trajs {
        if traj.len() < m + k {
            continue;
        }
        ds.samples.extend(build_windows(traj, m, k, kind)?);
        ds.controller_ids.insert(traj.controller_id);
    }
    ds.validate()?;
    Ok(ds)
}

/// Resamples both classes with replacement to `max(class counts)` each.
pub fn rebalance(ds: &Dataset, seed: u64) -> Result<Dataset> {
    let (unsafe_idx, safe_idx): (Vec<usize>, Vec<usize>) =
        (0..ds.len()).partition(|&i| ds.samples[i].label == 0);
    if unsafe_idx.is_empty() {
        return Err(Error::RebalanceImpossible { missing: 0 });
    }
    if safe_idx.is_empty() {
        return Err(Error::RebalanceImpossible { missing: 1 });
    }
    let target = unsafe_idx.len().max(safe_idx.len());
    let mut rng = rng_from(seed);
    let mut picked = Vec::with_capacity(2 * target);
    for class in [&unsafe_idx, &safe_idx] {
        for _ in 0..target {
            picked.push(class[rng.gen_range(0..class.len())]);
        }
    }
    picked.shuffle(&mut rng);
    Ok(ds.with_samples(picked.into_iter().map(|i| ds.samples[i].clone()).collect()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Train,
    Calib,
    Valid,
    Test,
}

impl Split {
    pub const ALL: [Split; 4] = [Split::Train, Split::Calib, Split::Valid, Split::Test];

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Calib => "calib",
            Split::Valid => "valid",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SplitSpec {
    /// Train, calibration, validation, test.
    pub fractions: [f64; 4],
    pub seed: u64,
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if self.fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
            return Err(Error::InvalidSplit("fractions must be positive".into()));
        }
        let sum: f64 = self.fractions.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::InvalidSplit(format!("fractions sum to {sum}, not 1")));
        }
        Ok(())
    }
}

/// Seeded assignment of trajectory ids to splits. Ids are sorted first, so the
/// result depends only on the id set, not on its order.
pub fn assign_splits(ids: &[u64], spec: &SplitSpec) -> Result<BTreeMap<u64, Split>> {
    spec.validate()?;
    let mut ids: Vec<u64> = ids.iter().copied().collect::<BTreeSet<_>>().into_iter().collect();
    ids.shuffle(&mut rng_from(spec.seed));
    let total = ids.len();
    let mut bounds = [0usize; 5];
    let mut cumulative = 0.0;
    for (j, f) in spec.fractions.iter().enumerate() {
        cumulative += f;
        bounds[j + 1] = if j == 3 {
            total
        } else {
            ((cumulative * total as f64).round() as usize).min(total)
        };
    }
    let mut out = BTreeMap::new();
    for (j, split) in Split::ALL.iter().enumerate() {
        if bounds[j + 1] <= bounds[j] {
            return Err(Error::InvalidSplit(format!(
                "{} split is empty ({total} trajectories)",
                split.name()
            )));
        }
        for &id in &ids[bounds[j]..bounds[j + 1]] {
            out.insert(id, *split);
        }
    }
    Ok(out)
}

/// Disjoint partition of `ds` by trajectory.
pub fn split_dataset(ds: &Dataset, spec: &SplitSpec) -> Result<[Dataset; 4]> {
    let ids: Vec<u64> = ds.samples.iter().map(|s| s.traj_id).collect();
    split_by_assignment(ds, &assign_splits(&ids, spec)?)
}

/// Partition by a precomputed assignment, so that several datasets built from
/// the same trajectories agree on which split each trajectory belongs to.
pub fn split_by_assignment(ds: &Dataset, assignment: &BTreeMap<u64, Split>) -> Result<[Dataset; 4]> {
    let mut parts: [Vec<Sample>; 4] = Default::default();
    for s in &ds.samples {
        let split = assignment
            .get(&s.traj_id)
            .ok_or_else(|| Error::InvalidSplit(format!("trajectory {} has no split", s.traj_id)))?;
        parts[*split as usize].push(s.clone());
    }
    Ok(parts.map(|p| ds.with_samples(p)))
}

#[derive(Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    kind: DatasetKind,
    m: usize,
    k: usize,
    height: usize,
    width: usize,
    controller_ids: Vec<u32>,
    /// Distinct frames, written before the records that reference them.
    frames: usize,
    count: usize,
}

/// Pixel value written with at most four decimals.
struct Px(f32);

impl Serialize for Px {
    fn serialize<S: Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        let v = (f64::from(self.0) * 1e4).round() / 1e4;
        if v == 0.0 || v == 1.0 {
            s.serialize_u8(v as u8)
        } else {
            s.serialize_f64(v)
        }
    }
}

/// Binary images as alternating run lengths starting with white (`1`);
/// anything else as a plain pixel array.
#[derive(Serialize, Deserialize)]
#[serde(untagged)]
enum PixelsOut {
    Runs(String),
    Values(Vec<f32>),
}

fn encode_pixels(obs: &Observation) -> serde_json::Value {
    let px = obs.pixels();
    if px.iter().all(|&p| p == 0.0 || p == 1.0) {
        let mut runs = Vec::new();
        let mut current = 1.0;
        let mut len = 0usize;
        for &p in px {
            if p == current {
                len += 1;
            } else {
                runs.push(len.to_string());
                current = p;
                len = 1;
            }
        }
        runs.push(len.to_string());
        serde_json::Value::String(runs.join(","))
    } else {
        serde_json::to_value(px.iter().map(|&p| Px(p)).collect::<Vec<_>>()).expect("numbers serialize")
    }
}

fn decode_pixels(px: PixelsOut) -> std::result::Result<Vec<f32>, String> {
    match px {
        PixelsOut::Values(v) => Ok(v),
        PixelsOut::Runs(text) => {
            let mut out = Vec::with_capacity(HEIGHT * WIDTH);
            let mut value = 1.0;
            for run in text.split(',') {
                let n: usize = run.parse().map_err(|_| format!("bad run length `{run}`"))?;
                if out.len() + n > HEIGHT * WIDTH {
                    return Err("runs exceed the image size".into());
                }
                out.extend(std::iter::repeat_n(value, n));
                value = 1.0 - value;
            }
            Ok(out)
        }
    }
}

#[derive(Serialize)]
struct FrameOut {
    id: usize,
    px: serde_json::Value,
}

#[derive(Deserialize)]
struct FrameIn {
    id: usize,
    px: PixelsOut,
}

#[derive(Serialize, Deserialize)]
struct Record {
    traj: u64,
    index: usize,
    controller: u32,
    label: u8,
    current_label: u8,
    actions: Option<Vec<i8>>,
    frames: Vec<usize>,
    next: Option<usize>,
}

/// Writes a header line, one line per distinct frame, then one line per
/// sample referencing frames by id.
pub fn save_dataset(ds: &Dataset, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    ds.validate()?;
    let mut ids: HashMap<*const Observation, usize> = HashMap::new();
    let mut table: Vec<Arc<Observation>> = Vec::new();
    let mut id_of = |obs: &Arc<Observation>| {
        *ids.entry(Arc::as_ptr(obs)).or_insert_with(|| {
            table.push(Arc::clone(obs));
            table.len() - 1
        })
    };
    let records: Vec<Record> = ds
        .samples
        .iter()
        .map(|s| Record {
            traj: s.traj_id,
            index: s.index,
            controller: s.controller_id,
            label: s.label,
            current_label: s.current_label,
            actions: s
                .actions
                .as_ref()
                .map(|a| a.iter().map(|u| u.sign() as i8).collect()),
            frames: s.window.iter().map(&mut id_of).collect(),
            next: s.next_frame.as_ref().map(&mut id_of),
        })
        .collect();
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(file);
    let header = Header {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        kind: ds.kind,
        m: ds.m,
        k: ds.k,
        height: HEIGHT,
        width: WIDTH,
        controller_ids: ds.controller_ids.iter().copied().collect(),
        frames: table.len(),
        count: ds.len(),
    };
    write_line(&mut w, &header, path)?;
    for (id, obs) in table.iter().enumerate() {
        write_line(&mut w, &FrameOut { id, px: encode_pixels(obs) }, path)?;
    }
    for rec in &records {
        write_line(&mut w, rec, path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn write_line<W: Write, T: Serialize>(w: &mut W, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub fn load_dataset(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    if !path.exists() {
        return Err(Error::MissingInput(path.to_path_buf()));
    }
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut lines = BufReader::new(file).lines();
    let mut next_line = |what: &str| -> Result<String> {
        lines
            .next()
            .ok_or_else(|| Error::malformed(path, format!("file ends before {what}")))?
            .map_err(|e| Error::io(path, e))
    };
    let header: Header = serde_json::from_str(&next_line("the header")?)
        .map_err(|e| Error::malformed(path, format!("bad header: {e}")))?;
    if header.format != FORMAT_NAME {
        return Err(Error::malformed(path, format!("unknown format `{}`", header.format)));
    }
    if header.version != FORMAT_VERSION {
        return Err(Error::VersionMismatch {
            found: header.version,
            expected: FORMAT_VERSION,
        });
    }
    if header.height != HEIGHT || header.width != WIDTH {
        return Err(Error::malformed(
            path,
            format!("image size {}x{} unsupported", header.height, header.width),
        ));
    }
    let mut table = Vec::with_capacity(header.frames);
    for n in 0..header.frames {
        let frame: FrameIn = serde_json::from_str(&next_line("all frames")?)
            .map_err(|e| Error::malformed(path, format!("frame {n}: {e}")))?;
        if frame.id != n {
            return Err(Error::malformed(path, format!("frame {n} has id {}", frame.id)));
        }
        let obs = decode_pixels(frame.px)
            .and_then(|px| Observation::from_pixels(px).map_err(|e| e.to_string()))
            .map_err(|e| Error::malformed(path, format!("frame {n}: {e}")))?;
        table.push(Arc::new(obs));
    }
    let frame = |id: usize, n: usize| -> Result<Arc<Observation>> {
        table
            .get(id)
            .cloned()
            .ok_or_else(|| Error::malformed(path, format!("record {n}: unknown frame {id}")))
    };
    let mut samples = Vec::with_capacity(header.count);
    for n in 0..header.count {
        let rec: Record = serde_json::from_str(&next_line("all records")?)
            .map_err(|e| Error::malformed(path, format!("record {n}: {e}")))?;
        let actions = rec
            .actions
            .map(|a| {
                a.into_iter()
                    .map(|v| match v {
                        1 => Ok(Action::Right),
                        -1 => Ok(Action::Left),
                        _ => Err(Error::malformed(path, format!("record {n}: action {v}"))),
                    })
                    .collect::<Result<Vec<_>>>()
            })
            .transpose()?;
        samples.push(Sample {
            traj_id: rec.traj,
            index: rec.index,
            controller_id: rec.controller,
            window: rec.frames.iter().map(|&id| frame(id, n)).collect::<Result<_>>()?,
            actions,
            label: rec.label,
            current_label: rec.current_label,
            next_frame: rec.next.map(|id| frame(id, n)).transpose()?,
        });
    }
    if let Some(Ok(extra)) = lines.next() {
        if !extra.trim().is_empty() {
            return Err(Error::malformed(path, "trailing data after the last record"));
        }
    }
    let ds = Dataset {
        kind: header.kind,
        m: header.m,
        k: header.k,
        samples,
        controller_ids: header.controller_ids.into_iter().collect(),
    };
    ds.validate().map_err(|e| Error::malformed(path, e.to_string()))?;
    Ok(ds)
}
