//! Task streams: a synthetic structural-causal generator with annotated
//! factors, B-I splitting of flat datasets, and the `cpns-tab` text format.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{config, Error, Result};
use crate::model::TaskRange;
use crate::tensor::{cosine, Tensor};

/// Borrowed inputs with global labels.
#[derive(Debug, Clone, Copy)]
pub struct Batch<'a> {
    pub x: &'a Tensor,
    pub y: &'a [usize],
}

impl Batch<'_> {
    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub x: Tensor,
    pub y: Vec<usize>,
    pub num_classes: usize,
}

impl Dataset {
    pub fn new(x: Tensor, y: Vec<usize>, num_classes: usize) -> Result<Self> {
        if x.rows() != y.len() {
            return Err(Error::Format(format!(
                "{} rows but {} labels",
                x.rows(),
                y.len()
            )));
        }
        if let Some(&bad) = y.iter().find(|&&l| l >= num_classes) {
            return Err(Error::Input(format!(
                "label {bad} out of range for {num_classes} classes"
            )));
        }
        Ok(Dataset { x, y, num_classes })
    }

    pub fn empty(dims: usize, num_classes: usize) -> Self {
        Dataset {
            x: Tensor::zeros(0, dims),
            y: Vec::new(),
            num_classes,
        }
    }

    pub fn len(&self) -> usize {
        self.y.len()
    }

    pub fn is_empty(&self) -> bool {
        self.y.is_empty()
    }

    pub fn dims(&self) -> usize {
        self.x.cols()
    }

    pub fn batch(&self) -> Batch<'_> {
        Batch {
            x: &self.x,
            y: &self.y,
        }
    }

    pub fn subset(&self, idx: &[usize]) -> Dataset {
        Dataset {
            x: self.x.select_rows(idx),
            y: idx.iter().map(|&i| self.y[i]).collect(),
            num_classes: self.num_classes,
        }
    }

    pub fn indices_of(&self, label: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.y[i] == label).collect()
    }

    /// Samples whose label falls in `[lo, hi)`.
    pub fn filter_range(&self, lo: usize, hi: usize) -> Dataset {
        let idx: Vec<usize> = (0..self.len())
            .filter(|&i| self.y[i] >= lo && self.y[i] < hi)
            .collect();
        self.subset(&idx)
    }

    /// Row-wise concatenation; both sides must agree on dimensionality.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        if self.dims() != other.dims() {
            return Err(Error::Format("concatenating datasets of different width".into()));
        }
        let mut data = self.x.data().to_vec();
        data.extend_from_slice(other.x.data());
        let mut y = self.y.clone();
        y.extend_from_slice(&other.y);
        Ok(Dataset {
            x: Tensor::from_vec(y.len(), self.dims(), data)?,
            y,
            num_classes: self.num_classes.max(other.num_classes),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FactorTag {
    Causal,
    MinimalCausal,
    Spurious,
    Noise,
}

impl FactorTag {
    pub fn is_causal(self) -> bool {
        matches!(self, FactorTag::Causal | FactorTag::MinimalCausal)
    }

    fn as_str(self) -> &'static str {
        match self {
            FactorTag::Causal => "causal",
            FactorTag::MinimalCausal => "minimal_causal",
            FactorTag::Spurious => "spurious",
            FactorTag::Noise => "noise",
        }
    }

    fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "causal" => FactorTag::Causal,
            "minimal_causal" => FactorTag::MinimalCausal,
            "spurious" => FactorTag::Spurious,
            "noise" => FactorTag::Noise,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskData {
    pub train: Dataset,
    pub test: Dataset,
    pub range: TaskRange,
}

/// Ground truth emitted by the synthetic generator.
#[derive(Debug, Clone, PartialEq)]
pub struct Annotations {
    pub factors: Vec<FactorTag>,
    /// Per global class, its `d_c` orthonormal causal directions.
    pub class_directions: Vec<Vec<Vec<f64>>>,
    /// Per global class, the causal part of its mean.
    pub causal_means: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TaskStream {
    pub tasks: Vec<TaskData>,
    pub annotations: Option<Annotations>,
}

impl TaskStream {
    pub fn new(tasks: Vec<TaskData>, annotations: Option<Annotations>) -> Result<Self> {
        for (i, a) in tasks.iter().enumerate() {
            for b in &tasks[i + 1..] {
                if a.range.offset < b.range.end() && b.range.offset < a.range.end() {
                    return Err(Error::Invariant("task label ranges overlap".into()));
                }
            }
            for set in [&a.train, &a.test] {
                if set.y.iter().any(|&l| !a.range.contains(l)) {
                    return Err(Error::Invariant(format!(
                        "task {i} holds a label outside its range"
                    )));
                }
            }
        }
        Ok(TaskStream { tasks, annotations })
    }

    pub fn num_classes(&self) -> usize {
        self.tasks.last().map(|t| t.range.end()).unwrap_or(0)
    }

    pub fn input_dim(&self) -> usize {
        self.tasks.first().map(|t| t.train.dims()).unwrap_or(0)
    }

    /// Test samples of tasks `0..=t`.
    pub fn test_upto(&self, t: usize) -> Result<Dataset> {
        let mut acc = Dataset::empty(self.input_dim(), self.num_classes());
        for task in &self.tasks[..=t] {
            acc = acc.concat(&task.test)?;
        }
        Ok(acc)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScmConfig {
    pub classes_per_task: usize,
    pub num_tasks: usize,
    /// Causal factor dimensions per class.
    pub d_c: usize,
    pub d_s: usize,
    /// Size of the minimal sufficient subset of each class's factors.
    pub d_mc: usize,
    /// Cosine between matching causal directions of consecutive tasks
    /// (the maximum over classes).
    pub overlap: f64,
    /// Spreads per-class overlap linearly over `overlap·[1 − spread, 1]`
    /// so overlap groups are distinguishable; 0 gives every class `overlap`.
    pub overlap_spread: f64,
    pub spurious_strength: f64,
    pub noise_sigma: f64,
    pub input_dim: usize,
    pub seed: u64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Mean amplitude along minimal-causal directions.
    pub mc_margin: f64,
    /// Mean amplitude along the remaining causal directions.
    pub causal_margin: f64,
    pub spurious_amplitude: f64,
}

impl Default for ScmConfig {
    fn default() -> Self {
        ScmConfig {
            classes_per_task: 4,
            num_tasks: 5,
            d_c: 3,
            d_s: 4,
            d_mc: 1,
            overlap: 0.7,
            overlap_spread: 0.75,
            spurious_strength: 0.95,
            noise_sigma: 1.0,
            input_dim: 64,
            seed: 0,
            train_per_class: 100,
            test_per_class: 100,
            mc_margin: 2.0,
            causal_margin: 1.0,
            spurious_amplitude: 3.0,
        }
    }
}

impl ScmConfig {
    pub fn validate(&self) -> Result<()> {
        if self.classes_per_task == 0 || self.num_tasks == 0 {
            return config("classes_per_task and num_tasks must be positive");
        }
        if self.d_mc >= self.d_c {
            return config("d_mc must be smaller than d_c");
        }
        if self.d_c > self.input_dim {
            return config("d_c exceeds input_dim");
        }
        if !(0.0..=1.0).contains(&self.overlap)
            || !(0.0..=1.0).contains(&self.overlap_spread)
            || !(0.0..=1.0).contains(&self.spurious_strength)
        {
            return config("overlap, overlap_spread and spurious_strength must lie in [0, 1]");
        }
        if self.noise_sigma < 0.0 || self.train_per_class == 0 || self.test_per_class == 0 {
            return config("noise_sigma must be ≥ 0 and per-class sample counts positive");
        }
        let classes = self.classes_per_task * self.num_tasks;
        if self.d_c * classes + self.d_s > self.input_dim {
            return config(format!(
                "infeasible geometry: {} causal + {} spurious dims exceed input_dim {}",
                self.d_c * classes,
                self.d_s,
                self.input_dim
            ));
        }
        Ok(())
    }

    fn class_overlap(&self, k: usize) -> f64 {
        let k_max = self.classes_per_task.saturating_sub(1).max(1) as f64;
        let frac = if self.classes_per_task == 1 {
            1.0
        } else {
            k as f64 / k_max
        };
        self.overlap * (1.0 - self.overlap_spread * (1.0 - frac))
    }
}

fn unit(dim: usize, i: usize) -> Vec<f64> {
    let mut v = vec![0.0; dim];
    v[i] = 1.0;
    v
}

/// Generates the annotated stream. Task 0's causal directions are axis
/// aligned; task `t+1` rotates each direction of task `t` toward a fresh
/// axis, `u' = o_k·u + √(1 − o_k²)·e`, so matching directions of
/// consecutive tasks have cosine `o_k` and all others are orthogonal.
pub fn gen_scm_stream(cfg: &ScmConfig) -> Result<TaskStream> {
    cfg.validate()?;
    let k_per = cfg.classes_per_task;
    let d = cfg.input_dim;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let mut factors = vec![FactorTag::Noise; d];
    let mut next_axis = 0;
    let mut dirs: Vec<Vec<Vec<f64>>> = Vec::new();
    let mut prev: Vec<Vec<Vec<f64>>> = Vec::new();
    for t in 0..cfg.num_tasks {
        let mut cur = Vec::with_capacity(k_per);
        for k in 0..k_per {
            let o = cfg.class_overlap(k);
            let s = (1.0 - o * o).max(0.0).sqrt();
            let mut class_dirs = Vec::with_capacity(cfg.d_c);
            for j in 0..cfg.d_c {
                let axis = next_axis;
                next_axis += 1;
                factors[axis] = if j < cfg.d_mc {
                    FactorTag::MinimalCausal
                } else {
                    FactorTag::Causal
                };
                let e = unit(d, axis);
                let u = if t == 0 {
                    e
                } else {
                    let p: &Vec<f64> = &prev[k][j];
                    p.iter().zip(&e).map(|(a, b)| o * a + s * b).collect()
                };
                class_dirs.push(u);
            }
            cur.push(class_dirs);
        }
        dirs.extend(cur.iter().cloned());
        prev = cur;
    }
    let spurious_offset = next_axis;
    for f in factors.iter_mut().skip(spurious_offset).take(cfg.d_s) {
        *f = FactorTag::Spurious;
    }

    let causal_means: Vec<Vec<f64>> = dirs
        .iter()
        .map(|class_dirs| {
            let mut m = vec![0.0; d];
            for (j, u) in class_dirs.iter().enumerate() {
                let a = if j < cfg.d_mc {
                    cfg.mc_margin
                } else {
                    cfg.causal_margin
                };
                m.iter_mut().zip(u).for_each(|(mi, ui)| *mi += a * ui);
            }
            m
        })
        .collect();

    let sample = |class: usize, local: usize, aligned: Option<f64>, rng: &mut ChaCha8Rng| {
        let mut x = causal_means[class].clone();
        if cfg.d_s > 0 {
            let code = match aligned {
                Some(strength) if k_per > 1 && rng.random::<f64>() >= strength => {
                    let other = rng.random_range(0..k_per - 1);
                    if other >= local {
                        other + 1
                    } else {
                        other
                    }
                }
                Some(_) => local,
                None => rng.random_range(0..k_per),
            };
            x[spurious_offset + code % cfg.d_s] += cfg.spurious_amplitude;
        }
        for v in x.iter_mut() {
            *v += cfg.noise_sigma * rng.sample::<f64, _>(StandardNormal);
        }
        x
    };

    let mut tasks = Vec::with_capacity(cfg.num_tasks);
    for t in 0..cfg.num_tasks {
        let range = TaskRange {
            offset: t * k_per,
            count: k_per,
        };
        let mut build = |per: usize, aligned: Option<f64>| -> Result<Dataset> {
            let mut data = Vec::with_capacity(per * k_per * d);
            let mut y = Vec::with_capacity(per * k_per);
            for i in 0..per * k_per {
                // interleave classes so prefixes stay balanced
                let local = i % k_per;
                data.extend(sample(range.offset + local, local, aligned, &mut rng));
                y.push(range.offset + local);
            }
            Dataset::new(
                Tensor::from_vec(y.len(), d, data)?,
                y,
                cfg.num_tasks * k_per,
            )
        };
        let train = build(cfg.train_per_class, Some(cfg.spurious_strength))?;
        let test = build(cfg.test_per_class, None)?;
        tasks.push(TaskData { train, test, range });
    }

    TaskStream::new(
        tasks,
        Some(Annotations {
            factors,
            class_directions: dirs,
            causal_means,
        }),
    )
}

/// Largest cosine between any class prototype of task `t` and any of
/// task `t + 1`.
pub fn max_prototype_cosine(ann: &Annotations, range_a: TaskRange, range_b: TaskRange) -> f64 {
    let mut best: f64 = 0.0;
    for a in range_a.offset..range_a.end() {
        for b in range_b.offset..range_b.end() {
            best = best.max(cosine(&ann.causal_means[a], &ann.causal_means[b]));
        }
    }
    best
}

/// Cuts a flat train/test pair into a B-I stream. Classes are visited in a
/// seed-shuffled order and relabeled so each task's labels are contiguous;
/// classes that do not fill a whole increment are dropped.
pub fn split_tasks(
    train: &Dataset,
    test: &Dataset,
    base: usize,
    increment: usize,
    seed: u64,
) -> Result<TaskStream> {
    if base == 0 || increment == 0 {
        return config("B and I must be positive");
    }
    let total = train.num_classes.max(test.num_classes);
    if base > total {
        return config(format!("B = {base} exceeds the {total} available classes"));
    }
    let mut order: Vec<usize> = (0..total).collect();
    order.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let increments = (total - base) / increment;
    let kept = base + increments * increment;
    let mut relabel = vec![None; total];
    for (new, &old) in order[..kept].iter().enumerate() {
        relabel[old] = Some(new);
    }
    let remap = |ds: &Dataset, lo: usize, hi: usize| -> Result<Dataset> {
        let idx: Vec<usize> = (0..ds.len())
            .filter(|&i| matches!(relabel[ds.y[i]], Some(n) if n >= lo && n < hi))
            .collect();
        let mut sub = ds.subset(&idx);
        sub.y.iter_mut().for_each(|l| *l = relabel[*l].expect("kept"));
        sub.num_classes = kept;
        Ok(sub)
    };
    let mut tasks = Vec::new();
    let mut lo = 0;
    let mut width = base;
    while lo < kept {
        let range = TaskRange {
            offset: lo,
            count: width,
        };
        tasks.push(TaskData {
            train: remap(train, lo, lo + width)?,
            test: remap(test, lo, lo + width)?,
            range,
        });
        lo += width;
        width = increment;
    }
    TaskStream::new(tasks, None)
}

const TAB_MAGIC: &str = "cpns-tab v1";

/// Parses the `cpns-tab v1` text format.
pub fn parse_table(text: &str) -> Result<Dataset> {
    let mut lines = text.lines().enumerate();
    let (_, header) = lines
        .next()
        .ok_or_else(|| Error::Format("empty table".into()))?;
    let rest = header
        .strip_prefix(TAB_MAGIC)
        .ok_or_else(|| Error::Format(format!("missing '{TAB_MAGIC}' header")))?;
    let mut dims = None;
    let mut classes = None;
    for field in rest.split_whitespace() {
        let parse = |v: &str| {
            v.parse::<usize>()
                .map_err(|_| Error::Parse { line: 1, message: format!("bad header field '{field}'") })
        };
        if let Some(v) = field.strip_prefix("dims=") {
            dims = Some(parse(v)?);
        } else if let Some(v) = field.strip_prefix("classes=") {
            classes = Some(parse(v)?);
        } else {
            return Err(Error::Parse {
                line: 1,
                message: format!("unknown header field '{field}'"),
            });
        }
    }
    let (dims, classes) = match (dims, classes) {
        (Some(d), Some(k)) => (d, k),
        _ => return Err(Error::Format("header needs dims= and classes=".into())),
    };

    let mut data = Vec::new();
    let mut y = Vec::new();
    for (i, line) in lines {
        let line_no = i + 1;
        if line.trim().is_empty() {
            continue;
        }
        let mut fields = line.split_whitespace();
        let label_str = fields.next().expect("non-empty line");
        let label: usize = label_str.parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("bad label '{label_str}'"),
        })?;
        if label >= classes {
            return Err(Error::Parse {
                line: line_no,
                message: format!("label {label} out of range for {classes} classes"),
            });
        }
        let before = data.len();
        for f in fields {
            let v: f64 = f.parse().map_err(|_| Error::Parse {
                line: line_no,
                message: format!("non-numeric feature '{f}'"),
            })?;
            data.push(v);
        }
        if data.len() - before != dims {
            return Err(Error::Format(format!(
                "line {line_no}: expected {dims} features, found {}",
                data.len() - before
            )));
        }
        y.push(label);
    }
    Dataset::new(Tensor::from_vec(y.len(), dims, data)?, y, classes)
}

pub fn format_table(ds: &Dataset) -> String {
    let mut out = format!("{TAB_MAGIC} dims={} classes={}\n", ds.dims(), ds.num_classes);
    for (row, label) in ds.x.iter_rows().zip(&ds.y) {
        let _ = write!(out, "{label}");
        for v in row {
            // `{:?}` on f64 prints the shortest exactly round-tripping form
            let _ = write!(out, " {v:?}");
        }
        out.push('\n');
    }
    out
}

pub fn load_table(path: impl AsRef<Path>) -> Result<Dataset> {
    parse_table(&fs::read_to_string(path)?)
}

pub fn save_table(path: impl AsRef<Path>, ds: &Dataset) -> Result<()> {
    fs::write(path, format_table(ds))?;
    Ok(())
}

/// The `.factors` sidecar next to `table_path`, if present.
pub fn load_factors(table_path: impl AsRef<Path>) -> Result<Option<Vec<FactorTag>>> {
    let path = table_path.as_ref().with_extension("factors");
    if !path.exists() {
        return Ok(None);
    }
    let text = fs::read_to_string(&path)?;
    text.split_whitespace()
        .enumerate()
        .map(|(i, tok)| {
            FactorTag::parse(tok).ok_or_else(|| Error::Parse {
                line: i + 1,
                message: format!("unknown factor tag '{tok}'"),
            })
        })
        .collect::<Result<Vec<_>>>()
        .map(Some)
}

pub fn save_factors(table_path: impl AsRef<Path>, tags: &[FactorTag]) -> Result<()> {
    let path = table_path.as_ref().with_extension("factors");
    let body: String = tags.iter().map(|t| format!("{}\n", t.as_str())).collect();
    fs::write(path, body)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ScmConfig {
        ScmConfig {
            classes_per_task: 3,
            num_tasks: 3,
            d_c: 2,
            d_s: 3,
            d_mc: 1,
            input_dim: 24,
            train_per_class: 10,
            test_per_class: 5,
            ..ScmConfig::default()
        }
    }

    #[test]
    fn zero_overlap_is_orthogonal() {
        let cfg = ScmConfig {
            overlap: 0.0,
            ..small()
        };
        let s = gen_scm_stream(&cfg).unwrap();
        let ann = s.annotations.unwrap();
        let c = max_prototype_cosine(&ann, s.tasks[0].range, s.tasks[1].range);
        assert!(c.abs() < 1e-10);
    }

    #[test]
    fn overlap_is_calibrated() {
        let s = gen_scm_stream(&small()).unwrap();
        let ann = s.annotations.unwrap();
        for t in 0..2 {
            let c = max_prototype_cosine(&ann, s.tasks[t].range, s.tasks[t + 1].range);
            assert!((c - 0.7).abs() < 1e-6, "{c}");
        }
    }

    #[test]
    fn infeasible_geometry_rejected() {
        let cfg = ScmConfig {
            input_dim: 10,
            ..small()
        };
        assert!(matches!(gen_scm_stream(&cfg), Err(Error::Config(_))));
    }

    #[test]
    fn labels_stay_in_task_ranges() {
        let s = gen_scm_stream(&small()).unwrap();
        for t in &s.tasks {
            assert!(t.train.y.iter().all(|&l| t.range.contains(l)));
            assert_eq!(t.train.len(), 30);
        }
        assert_eq!(s, gen_scm_stream(&small()).unwrap());
    }

    fn flat(classes: usize) -> Dataset {
        let y: Vec<usize> = (0..classes * 2).map(|i| i % classes).collect();
        Dataset::new(Tensor::zeros(y.len(), 1), y, classes).unwrap()
    }

    #[test]
    fn equal_and_half_splits() {
        let d = flat(100);
        assert_eq!(split_tasks(&d, &d, 10, 10, 0).unwrap().tasks.len(), 10);
        let s = split_tasks(&d, &d, 50, 10, 0).unwrap();
        assert_eq!(s.tasks.len(), 6);
        assert_eq!(s.tasks[0].range.count, 50);
        let d = flat(101);
        let s = split_tasks(&d, &d, 10, 10, 0).unwrap();
        assert_eq!(s.tasks.len(), 10);
        assert_eq!(s.num_classes(), 100);
        assert!(split_tasks(&d, &d, 0, 10, 0).is_err());
    }

    #[test]
    fn table_parse_errors_name_the_line() {
        let ok = "cpns-tab v1 dims=2 classes=3\n0 1.5 2\n2 -1 0.25\n";
        assert_eq!(parse_table(ok).unwrap().len(), 2);
        let bad = "cpns-tab v1 dims=2 classes=3\n0 1.5 2\n1 x 0\n";
        match parse_table(bad) {
            Err(Error::Parse { line, .. }) => assert_eq!(line, 3),
            other => panic!("{other:?}"),
        }
        let short = "cpns-tab v1 dims=2 classes=3\n0 1.5\n";
        assert!(matches!(parse_table(short), Err(Error::Format(_))));
    }
}
