//! Trajectory containers, offline dataset ingestion and the two-stage scaler.
//!
//! Datasets are plain CSV (or JSONL) files with a JSON sidecar manifest that
//! names the state, action, reward and episode-id columns:
//!
//! ```json
//! { "state_cols": ["s0", "s1"], "action_cols": ["a0"],
//!   "reward_col": "r", "episode_col": "episode" }
//! ```
//!
//! Episode boundaries come only from the episode-id column. Without one, the
//! whole file is a single trajectory.

use std::collections::HashSet;
use std::fs;
use std::io::{BufRead, BufReader};
use std::ops::Range;
use std::path::{Path, PathBuf};

use ndarray::{s, Array1, Array2, ArrayView1, Axis};
use serde::{Deserialize, Serialize};

use crate::error::{DiclError, Result};

/// Time-indexed states, optional actions and optional rewards.
///
/// Row `t` of every present field refers to the same timestep; `rewards[t]`
/// is the reward received for acting in `states[t]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    states: Array2<f64>,
    actions: Option<Array2<f64>>,
    rewards: Option<Array1<f64>>,
}

impl Trajectory {
    pub fn new(states: Array2<f64>, actions: Option<Array2<f64>>, rewards: Option<Array1<f64>>) -> Result<Self> {
        let len = states.nrows();
        if len == 0 {
            return Err(DiclError::schema("trajectory must contain at least one step"));
        }
        if states.ncols() == 0 {
            return Err(DiclError::schema("trajectory must have at least one state dimension"));
        }
        if let Some(a) = &actions {
            if a.nrows() != len {
                return Err(DiclError::schema(format!(
                    "actions have {} rows but states have {len}",
                    a.nrows()
                )));
            }
        }
        if let Some(r) = &rewards {
            if r.len() != len {
                return Err(DiclError::schema(format!(
                    "rewards have {} entries but states have {len}",
                    r.len()
                )));
            }
        }
        let finite = states.iter().all(|v| v.is_finite())
            && actions.iter().flatten().all(|v| v.is_finite())
            && rewards.iter().flatten().all(|v| v.is_finite());
        if !finite {
            return Err(DiclError::schema("trajectory contains NaN or infinite values"));
        }
        let actions = actions.filter(|a| a.ncols() > 0);
        Ok(Self {
            states,
            actions,
            rewards,
        })
    }

    /// Trajectory of states only.
    pub fn from_states(states: Array2<f64>) -> Result<Self> {
        Self::new(states, None, None)
    }

    pub fn len(&self) -> usize {
        self.states.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state_dim(&self) -> usize {
        self.states.ncols()
    }

    pub fn action_dim(&self) -> usize {
        self.actions.as_ref().map_or(0, |a| a.ncols())
    }

    pub fn states(&self) -> &Array2<f64> {
        &self.states
    }

    pub fn actions(&self) -> Option<&Array2<f64>> {
        self.actions.as_ref()
    }

    pub fn rewards(&self) -> Option<&Array1<f64>> {
        self.rewards.as_ref()
    }

    pub fn state(&self, t: usize) -> ArrayView1<'_, f64> {
        self.states.row(t)
    }

    /// Copy of the timesteps in `range`.
    pub fn slice(&self, range: Range<usize>) -> Result<Self> {
        if range.start >= range.end || range.end > self.len() {
            return Err(DiclError::invalid(format!(
                "slice {range:?} out of bounds for trajectory of length {}",
                self.len()
            )));
        }
        Ok(Self {
            states: self.states.slice(s![range.clone(), ..]).to_owned(),
            actions: self.actions.as_ref().map(|a| a.slice(s![range.clone(), ..]).to_owned()),
            rewards: self.rewards.as_ref().map(|r| r.slice(s![range.clone()]).to_owned()),
        })
    }

    /// Column-concatenated feature matrix `[states | actions? | reward?]`.
    pub fn features(&self, with_actions: bool, with_reward: bool) -> Result<Array2<f64>> {
        let mut blocks: Vec<Array2<f64>> = vec![self.states.clone()];
        if with_actions {
            let a = self
                .actions
                .as_ref()
                .ok_or_else(|| DiclError::schema("actions requested but trajectory has none"))?;
            blocks.push(a.clone());
        }
        if with_reward {
            let r = self
                .rewards
                .as_ref()
                .ok_or_else(|| DiclError::schema("rewards requested but trajectory has none"))?;
            blocks.push(r.clone().insert_axis(Axis(1)));
        }
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(1), &views).map_err(|e| DiclError::schema(e.to_string()))
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub source: String,
    pub policy: String,
}

/// A collection of trajectories sharing state and action dimensions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, meta: DatasetMeta) -> Result<Self> {
        if let Some(first) = trajectories.first() {
            let (ds, da) = (first.state_dim(), first.action_dim());
            for (i, t) in trajectories.iter().enumerate() {
                if t.state_dim() != ds || t.action_dim() != da {
                    return Err(DiclError::schema(format!(
                        "trajectory {i} has dims (s={}, a={}) but dataset has (s={ds}, a={da})",
                        t.state_dim(),
                        t.action_dim()
                    )));
                }
            }
        }
        Ok(Self { trajectories, meta })
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }

    pub fn state_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.state_dim())
    }

    pub fn action_dim(&self) -> usize {
        self.trajectories.first().map_or(0, |t| t.action_dim())
    }

    pub fn total_steps(&self) -> usize {
        self.trajectories.iter().map(|t| t.len()).sum()
    }

    /// All states stacked row-wise.
    pub fn all_states(&self) -> Array2<f64> {
        let views: Vec<_> = self.trajectories.iter().map(|t| t.states.view()).collect();
        if views.is_empty() {
            return Array2::zeros((0, 0));
        }
        ndarray::concatenate(Axis(0), &views).expect("state dims agree")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DataFormat {
    Csv,
    Jsonl,
}

impl DataFormat {
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("ndjson") => DataFormat::Jsonl,
            _ => DataFormat::Csv,
        }
    }
}

/// Column mapping for a trajectory file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub state_cols: Vec<String>,
    #[serde(default)]
    pub action_cols: Vec<String>,
    #[serde(default)]
    pub reward_col: Option<String>,
    #[serde(default)]
    pub episode_col: Option<String>,
    #[serde(default)]
    pub source: Option<String>,
    #[serde(default)]
    pub policy: Option<String>,
}

impl Manifest {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)?;
        let m: Manifest =
            serde_json::from_str(&text).map_err(|e| DiclError::schema(format!("manifest {}: {e}", path.display())))?;
        if m.state_cols.is_empty() {
            return Err(DiclError::schema("manifest: state_cols must not be empty"));
        }
        Ok(m)
    }

    /// Default sidecar location: `data.csv` -> `data.manifest.json`.
    pub fn sidecar_path(data: &Path) -> PathBuf {
        data.with_extension("manifest.json")
    }

    /// Mapping derived from header names: `s<i>` states, `a<i>` actions,
    /// `r`/`reward` reward and `episode`/`episode_id` episode column.
    pub fn from_header(header: &[String]) -> Result<Self> {
        let numbered = |prefix: &str, name: &str| {
            name.strip_prefix(prefix)
                .is_some_and(|rest| !rest.is_empty() && rest.chars().all(|c| c.is_ascii_digit()))
        };
        let mut m = Manifest::default();
        for name in header {
            if numbered("s", name) {
                m.state_cols.push(name.clone());
            } else if numbered("a", name) {
                m.action_cols.push(name.clone());
            } else if name == "r" || name == "reward" {
                m.reward_col = Some(name.clone());
            } else if name == "episode" || name == "episode_id" {
                m.episode_col = Some(name.clone());
            }
        }
        if m.state_cols.is_empty() {
            return Err(DiclError::schema(
                "no manifest found and header has no s<i> state columns",
            ));
        }
        Ok(m)
    }

    fn write_header(&self) -> Vec<String> {
        let mut cols = Vec::new();
        if let Some(e) = &self.episode_col {
            cols.push(e.clone());
        }
        cols.extend(self.state_cols.iter().cloned());
        cols.extend(self.action_cols.iter().cloned());
        if let Some(r) = &self.reward_col {
            cols.push(r.clone());
        }
        cols
    }
}

struct RowMapping {
    episode: Option<usize>,
    states: Vec<usize>,
    actions: Vec<usize>,
    reward: Option<usize>,
}

impl RowMapping {
    fn resolve(manifest: &Manifest, header: &[String]) -> Result<Self> {
        let find = |name: &str| {
            header
                .iter()
                .position(|h| h == name)
                .ok_or_else(|| DiclError::schema(format!("column '{name}' not found in header")))
        };
        Ok(Self {
            episode: manifest.episode_col.as_deref().map(find).transpose()?,
            states: manifest.state_cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
            actions: manifest.action_cols.iter().map(|c| find(c)).collect::<Result<_>>()?,
            reward: manifest.reward_col.as_deref().map(find).transpose()?,
        })
    }
}

#[derive(Default)]
struct EpisodeBuilder {
    id: String,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    rows: usize,
}

struct Assembler<'a> {
    manifest: &'a Manifest,
    seen: HashSet<String>,
    current: Option<EpisodeBuilder>,
    done: Vec<Trajectory>,
}

impl<'a> Assembler<'a> {
    fn new(manifest: &'a Manifest) -> Self {
        Self {
            manifest,
            seen: HashSet::new(),
            current: None,
            done: Vec::new(),
        }
    }

    fn push(&mut self, line: usize, episode: String, values: &RowValues) -> Result<()> {
        let switch = self.current.as_ref().is_none_or(|c| c.id != episode);
        if switch {
            self.flush()?;
            if !self.seen.insert(episode.clone()) {
                return Err(DiclError::Parse {
                    line,
                    message: format!("episode '{episode}' is not contiguous"),
                });
            }
            self.current = Some(EpisodeBuilder {
                id: episode,
                ..Default::default()
            });
        }
        let cur = self.current.as_mut().expect("episode opened above");
        cur.states.extend_from_slice(&values.states);
        cur.actions.extend_from_slice(&values.actions);
        if let Some(r) = values.reward {
            cur.rewards.push(r);
        }
        cur.rows += 1;
        Ok(())
    }

    fn flush(&mut self) -> Result<()> {
        if let Some(ep) = self.current.take() {
            let ds = self.manifest.state_cols.len();
            let da = self.manifest.action_cols.len();
            let states =
                Array2::from_shape_vec((ep.rows, ds), ep.states).map_err(|e| DiclError::schema(e.to_string()))?;
            let actions = if da > 0 {
                Some(Array2::from_shape_vec((ep.rows, da), ep.actions).map_err(|e| DiclError::schema(e.to_string()))?)
            } else {
                None
            };
            let rewards = self.manifest.reward_col.as_ref().map(|_| Array1::from(ep.rewards));
            self.done.push(
                Trajectory::new(states, actions, rewards)
                    .map_err(|e| DiclError::schema(format!("episode '{}': {e}", ep.id)))?,
            );
        }
        Ok(())
    }

    fn finish(mut self) -> Result<Vec<Trajectory>> {
        self.flush()?;
        Ok(self.done)
    }
}

struct RowValues {
    states: Vec<f64>,
    actions: Vec<f64>,
    reward: Option<f64>,
}

fn parse_field(raw: &str, line: usize, col: &str) -> Result<f64> {
    let v: f64 = raw.trim().parse().map_err(|_| DiclError::Parse {
        line,
        message: format!("column '{col}': cannot parse '{raw}' as a number"),
    })?;
    if !v.is_finite() {
        return Err(DiclError::schema(format!(
            "line {line}, column '{col}': non-finite value '{raw}'"
        )));
    }
    Ok(v)
}

/// Load trajectories from a CSV or JSONL file.
///
/// When `manifest` is `None`, the sidecar `<stem>.manifest.json` is used if it
/// exists, otherwise the mapping is derived from the header names.
pub fn load_dataset(path: &Path, format: DataFormat, manifest: Option<&Manifest>) -> Result<Dataset> {
    if !path.exists() {
        return Err(DiclError::schema(format!(
            "dataset file {} does not exist",
            path.display()
        )));
    }
    let sidecar;
    let manifest = match manifest {
        Some(m) => Some(m),
        None => {
            let p = Manifest::sidecar_path(path);
            if p.exists() {
                sidecar = Manifest::from_file(&p)?;
                Some(&sidecar)
            } else {
                None
            }
        }
    };
    let trajectories = match format {
        DataFormat::Csv => load_csv(path, manifest)?,
        DataFormat::Jsonl => load_jsonl(path, manifest)?,
    };
    let meta = DatasetMeta {
        source: manifest
            .and_then(|m| m.source.clone())
            .unwrap_or_else(|| path.display().to_string()),
        policy: manifest.and_then(|m| m.policy.clone()).unwrap_or_default(),
    };
    Dataset::new(trajectories, meta)
}

fn load_csv(path: &Path, manifest: Option<&Manifest>) -> Result<Vec<Trajectory>> {
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| DiclError::schema(e.to_string()))?;
    let header: Vec<String> = reader
        .headers()
        .map_err(|e| DiclError::Parse {
            line: 1,
            message: e.to_string(),
        })?
        .iter()
        .map(str::to_owned)
        .collect();
    let owned;
    let manifest = match manifest {
        Some(m) => m,
        None => {
            owned = Manifest::from_header(&header)?;
            &owned
        }
    };
    let map = RowMapping::resolve(manifest, &header)?;
    let mut asm = Assembler::new(manifest);
    for (i, record) in reader.records().enumerate() {
        let line = i + 2;
        let record = record.map_err(|e| DiclError::Parse {
            line,
            message: e.to_string(),
        })?;
        if record.len() != header.len() {
            return Err(DiclError::Parse {
                line,
                message: format!("expected {} fields, found {}", header.len(), record.len()),
            });
        }
        let get = |idx: usize| parse_field(&record[idx], line, &header[idx]);
        let values = RowValues {
            states: map.states.iter().map(|&c| get(c)).collect::<Result<_>>()?,
            actions: map.actions.iter().map(|&c| get(c)).collect::<Result<_>>()?,
            reward: map.reward.map(get).transpose()?,
        };
        let episode = map.episode.map(|c| record[c].to_string()).unwrap_or_default();
        asm.push(line, episode, &values)?;
    }
    asm.finish()
}

fn load_jsonl(path: &Path, manifest: Option<&Manifest>) -> Result<Vec<Trajectory>> {
    let manifest = manifest.ok_or_else(|| DiclError::schema("JSONL datasets require a manifest"))?;
    let file = fs::File::open(path)?;
    let mut asm = Assembler::new(manifest);
    for (i, line) in BufReader::new(file).lines().enumerate() {
        let lineno = i + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let obj: serde_json::Map<String, serde_json::Value> =
            serde_json::from_str(&line).map_err(|e| DiclError::Parse {
                line: lineno,
                message: e.to_string(),
            })?;
        let get = |col: &str| -> Result<f64> {
            let v = obj.get(col).ok_or_else(|| DiclError::Parse {
                line: lineno,
                message: format!("missing key '{col}'"),
            })?;
            let x = v
                .as_f64()
                .ok_or_else(|| DiclError::schema(format!("line {lineno}, key '{col}': not a finite number")))?;
            if !x.is_finite() {
                return Err(DiclError::schema(format!("line {lineno}, key '{col}': non-finite")));
            }
            Ok(x)
        };
        let values = RowValues {
            states: manifest.state_cols.iter().map(|c| get(c)).collect::<Result<_>>()?,
            actions: manifest.action_cols.iter().map(|c| get(c)).collect::<Result<_>>()?,
            reward: manifest.reward_col.as_deref().map(get).transpose()?,
        };
        let episode = match &manifest.episode_col {
            Some(c) => match obj.get(c) {
                Some(serde_json::Value::String(s)) => s.clone(),
                Some(v) => v.to_string(),
                None => {
                    return Err(DiclError::Parse {
                        line: lineno,
                        message: format!("missing key '{c}'"),
                    })
                }
            },
            None => String::new(),
        };
        asm.push(lineno, episode, &values)?;
    }
    asm.finish()
}

/// Write a dataset as CSV plus sidecar manifest. Columns are named
/// `s<i>`, `a<i>`, `r` and `episode`.
pub fn write_dataset_csv(dataset: &Dataset, path: &Path) -> Result<Manifest> {
    let ds = dataset.state_dim();
    let da = dataset.action_dim();
    let has_reward = dataset.trajectories.first().is_some_and(|t| t.rewards.is_some());
    let manifest = Manifest {
        state_cols: (0..ds).map(|i| format!("s{i}")).collect(),
        action_cols: (0..da).map(|i| format!("a{i}")).collect(),
        reward_col: has_reward.then(|| "r".to_string()),
        episode_col: Some("episode".to_string()),
        source: Some(dataset.meta.source.clone()),
        policy: Some(dataset.meta.policy.clone()),
    };
    let mut w = csv::Writer::from_path(path).map_err(|e| DiclError::schema(e.to_string()))?;
    w.write_record(manifest.write_header())
        .map_err(|e| DiclError::schema(e.to_string()))?;
    for (ep, traj) in dataset.trajectories.iter().enumerate() {
        for t in 0..traj.len() {
            let mut row = vec![ep.to_string()];
            row.extend(traj.states.row(t).iter().map(|v| format!("{v:?}")));
            if let Some(a) = &traj.actions {
                row.extend(a.row(t).iter().map(|v| format!("{v:?}")));
            }
            if let Some(r) = &traj.rewards {
                row.push(format!("{:?}", r[t]));
            }
            w.write_record(&row).map_err(|e| DiclError::schema(e.to_string()))?;
        }
    }
    w.flush()?;
    fs::write(Manifest::sidecar_path(path), serde_json::to_string_pretty(&manifest)?)?;
    Ok(manifest)
}

/// Which columns of a dataset a scaler is fitted on.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimSelector {
    States,
    Actions,
    StatesActions,
    StatesActionsReward,
}

impl DimSelector {
    fn stack(&self, dataset: &Dataset) -> Result<Array2<f64>> {
        let (a, r) = match self {
            DimSelector::States => (false, false),
            DimSelector::Actions => {
                let blocks = dataset
                    .trajectories
                    .iter()
                    .map(|t| {
                        t.actions
                            .clone()
                            .ok_or_else(|| DiclError::schema("dataset has no actions"))
                    })
                    .collect::<Result<Vec<_>>>()?;
                let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
                return ndarray::concatenate(Axis(0), &views).map_err(|e| DiclError::schema(e.to_string()));
            }
            DimSelector::StatesActions => (true, false),
            DimSelector::StatesActionsReward => (true, true),
        };
        let blocks = dataset
            .trajectories
            .iter()
            .map(|t| t.features(a, r))
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = blocks.iter().map(|b| b.view()).collect();
        ndarray::concatenate(Axis(0), &views).map_err(|e| DiclError::schema(e.to_string()))
    }
}

/// Min-max scaling to `[0, 1]` followed by standardization.
///
/// Constant dimensions are flagged: stage 1 only subtracts the minimum and
/// stage 2 is the identity for them.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScalerPipeline {
    pub min: Vec<f64>,
    pub max: Vec<f64>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
    pub constant: Vec<bool>,
}

impl ScalerPipeline {
    /// Fit on the rows of `data`.
    pub fn fit(data: &Array2<f64>) -> Result<Self> {
        if data.nrows() < 2 {
            return Err(DiclError::invalid("scaler needs at least 2 samples"));
        }
        let d = data.ncols();
        let mut out = Self {
            min: vec![0.0; d],
            max: vec![0.0; d],
            mean: vec![0.0; d],
            std: vec![1.0; d],
            constant: vec![false; d],
        };
        for j in 0..d {
            let col = data.column(j);
            let lo = col.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = col.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            out.min[j] = lo;
            out.max[j] = hi;
            if hi - lo <= 0.0 {
                out.constant[j] = true;
                continue;
            }
            let unit: Vec<f64> = col.iter().map(|&v| (v - lo) / (hi - lo)).collect();
            let m = crate::stats::mean(&unit);
            let var = crate::stats::kahan_sum(unit.iter().map(|u| (u - m) * (u - m))) / unit.len() as f64;
            out.mean[j] = m;
            if var > 0.0 {
                out.std[j] = var.sqrt();
            } else {
                out.constant[j] = true;
            }
        }
        Ok(out)
    }

    /// Identity scaler for `d` dimensions.
    pub fn identity(d: usize) -> Self {
        Self {
            min: vec![0.0; d],
            max: vec![1.0; d],
            mean: vec![0.0; d],
            std: vec![1.0; d],
            constant: vec![false; d],
        }
    }

    pub fn dim(&self) -> usize {
        self.min.len()
    }

    fn range(&self, j: usize) -> f64 {
        let r = self.max[j] - self.min[j];
        if r > 0.0 {
            r
        } else {
            1.0
        }
    }

    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        let u = (v - self.min[j]) / self.range(j);
        if self.constant[j] {
            u
        } else {
            (u - self.mean[j]) / self.std[j]
        }
    }

    pub fn inverse_value(&self, j: usize, z: f64) -> f64 {
        let u = if self.constant[j] {
            z
        } else {
            z * self.std[j] + self.mean[j]
        };
        u * self.range(j) + self.min[j]
    }

    pub fn transform(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(x.ncols())?;
        let mut out = x.clone();
        for ((_, j), v) in out.indexed_iter_mut() {
            *v = self.transform_value(j, *v);
        }
        Ok(out)
    }

    pub fn inverse(&self, z: &Array2<f64>) -> Result<Array2<f64>> {
        self.check(z.ncols())?;
        let mut out = z.clone();
        for ((_, j), v) in out.indexed_iter_mut() {
            *v = self.inverse_value(j, *v);
        }
        Ok(out)
    }

    fn check(&self, d: usize) -> Result<()> {
        if d != self.dim() {
            return Err(DiclError::DimMismatch {
                expected: self.dim(),
                got: d,
            });
        }
        Ok(())
    }
}

/// Fit the scaler on the selected columns of every trajectory.
pub fn fit_scaler(dataset: &Dataset, dims: DimSelector) -> Result<ScalerPipeline> {
    ScalerPipeline::fit(&dims.stack(dataset)?)
}
