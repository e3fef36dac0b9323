//! Experiment orchestration: config, the incremental loop
//! (expand → train → buffer commit → evaluate), result files, sweeps and
//! ablations.

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::buffer::RehearsalBuffer;
use crate::checkpoint;
use crate::counterfactual::{gen_inter_batch, gen_intra_batch, CounterfactualSample};
use crate::data::{gen_scm_stream, load_factors, load_table, split_tasks, Dataset, ScmConfig, TaskStream};
use crate::error::{config, Error, Result};
use crate::metrics::{
    accuracy, cka_between_extractors, counterfactual_quality, masking_curve, old_new_error, EvalRecord,
};
use crate::model::{ExpandableModel, ModelConfig};
use crate::risk::{assert_risk_bound, empirical_cpns_risk};
use crate::trainer::{EpochRecord, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum DataSource {
    Synthetic(ScmConfig),
    Table {
        train: PathBuf,
        test: PathBuf,
        base: usize,
        increment: usize,
    },
}

impl Default for DataSource {
    fn default() -> Self {
        DataSource::Synthetic(ScmConfig::default())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MetricToggles {
    pub old_new: bool,
    pub cka: bool,
    pub masking: bool,
    pub masking_ks: Vec<usize>,
    pub cf_quality: bool,
    /// Rows used for CKA (taken from the front of the seen test data).
    pub cka_samples: usize,
}

impl Default for MetricToggles {
    fn default() -> Self {
        MetricToggles {
            old_new: true,
            cka: true,
            masking: true,
            masking_ks: vec![0, 1, 2, 3, 5],
            cf_quality: true,
            cka_samples: 512,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub run_id: String,
    /// Label for the `method` column; derived from the weights when absent.
    pub method: Option<String>,
    pub data: DataSource,
    pub model: ModelConfig,
    pub train: TrainConfig,
    pub metrics: MetricToggles,
    pub output_dir: PathBuf,
    pub seeds: Vec<u64>,
    /// Train with the plain baseline code path regardless of CPNS weights.
    pub baseline_code_path: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run_id: "run".into(),
            method: None,
            data: DataSource::default(),
            model: ModelConfig::default(),
            train: TrainConfig::default(),
            metrics: MetricToggles::default(),
            output_dir: PathBuf::from("out"),
            seeds: vec![0],
            baseline_code_path: false,
        }
    }
}

impl ExperimentConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read config {}: {e}", path.display())))?;
        Self::from_json(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.seeds.is_empty() {
            return config("seed list is empty");
        }
        if self.run_id.is_empty() || self.run_id.contains(['/', '\\']) {
            return config("run_id must be a non-empty single path component");
        }
        match &self.data {
            DataSource::Synthetic(s) => s.validate()?,
            DataSource::Table { train, test, base, increment } => {
                for p in [train, test] {
                    if !p.exists() {
                        return config(format!("data file {} does not exist", p.display()));
                    }
                }
                if *base == 0 || *increment == 0 {
                    return config("B and I must be positive");
                }
            }
        }
        self.model.validate()?;
        self.train.validate()
    }

    /// Applies the environment overrides for output directory and threads.
    pub fn apply_env(&mut self) {
        if let Ok(dir) = std::env::var("CPNSLAB_OUT") {
            if !dir.is_empty() {
                self.output_dir = PathBuf::from(dir);
            }
        }
    }

    pub fn method_name(&self) -> String {
        if let Some(m) = &self.method {
            return m.clone();
        }
        let t = &self.train;
        if self.baseline_code_path || (!t.intra_active() && !t.inter_active() && t.stage1_epochs == 0) {
            "baseline".into()
        } else {
            "cpns".into()
        }
    }

    pub fn scenario(&self) -> String {
        match &self.data {
            DataSource::Synthetic(s) => format!("scm-{}x{}", s.num_tasks, s.classes_per_task),
            DataSource::Table { base, increment, .. } => format!("B{base}-I{increment}"),
        }
    }

    pub fn build_stream(&self, seed: u64) -> Result<TaskStream> {
        match &self.data {
            DataSource::Synthetic(s) => {
                let mut s = s.clone();
                s.seed = s.seed.wrapping_add(seed);
                gen_scm_stream(&s)
            }
            DataSource::Table { train, test, base, increment } => {
                let tr = load_table(train)?;
                let te = load_table(test)?;
                if tr.dims() != te.dims() {
                    return Err(Error::Format("train and test tables differ in width".into()));
                }
                let mut stream = split_tasks(&tr, &te, *base, *increment, seed)?;
                if let Some(factors) = load_factors(train)? {
                    if factors.len() != tr.dims() {
                        return Err(Error::Format("factor sidecar does not match table width".into()));
                    }
                    stream.annotations = Some(crate::data::Annotations {
                        factors,
                        class_directions: Vec::new(),
                        causal_means: Vec::new(),
                    });
                }
                Ok(stream)
            }
        }
    }
}

#[derive(Debug, Clone)]
pub struct SeedResult {
    pub seed: u64,
    pub last: f64,
    pub avg: f64,
    pub evals: Vec<EvalRecord>,
    pub epochs: Vec<EpochRecord>,
    pub model: ExpandableModel,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub method: String,
    pub scenario: String,
    pub seed: u64,
    pub last: f64,
    pub avg: f64,
}

fn samples_of(samples: Vec<CounterfactualSample>, limit: usize) -> Vec<CounterfactualSample> {
    samples.into_iter().take(limit).collect()
}

/// Evaluation after finishing task `t`.
pub fn evaluate(
    model: &ExpandableModel,
    stream: &TaskStream,
    buffer: &Dataset,
    history: &mut Vec<f64>,
    cfg: &ExperimentConfig,
) -> Result<EvalRecord> {
    let t = model.current_task()?;
    let task_accuracies = stream.tasks[..=t]
        .iter()
        .map(|task| accuracy(model, &task.test))
        .collect::<Result<Vec<_>>>()?;
    let seen = stream.test_upto(t)?;
    let last_acc = accuracy(model, &seen)?;
    history.push(last_acc);
    let avg_acc = history.iter().sum::<f64>() / history.len() as f64;
    let m = &cfg.metrics;
    let ann = stream.annotations.as_ref();

    let old_new_errors = match ann {
        Some(a) if m.old_new && t >= 1 && !a.causal_means.is_empty() => Some(old_new_error(
            model,
            &stream.test_upto(t - 1)?,
            stream.tasks[t].range,
            &a.causal_means,
        )?),
        _ => None,
    };
    let cka_by_layer = if m.cka && t >= 1 {
        let n = seen.len().min(m.cka_samples.max(2));
        let idx: Vec<usize> = (0..n).collect();
        cka_between_extractors(model, t - 1, t, &seen.x.select_rows(&idx))?
    } else {
        Vec::new()
    };
    let masking = match ann {
        Some(a) if m.masking && !m.masking_ks.is_empty() => {
            let causal = a.factors.iter().filter(|f| f.is_causal()).count();
            let ks: Vec<usize> = m.masking_ks.iter().copied().filter(|&k| k <= causal).collect();
            if ks.is_empty() {
                None
            } else {
                Some(masking_curve(model, &seen, &a.factors, &ks)?)
            }
        }
        _ => None,
    };
    let cf = cfg.train.cf_config();
    let current = &stream.tasks[t].test;
    let cf_quality = if m.cf_quality {
        let c = model.current_features(&current.x)?;
        let labels = current
            .y
            .iter()
            .map(|&l| model.intra_label(l))
            .collect::<Result<Vec<_>>>()?;
        let mut samples = gen_intra_batch(&c, &labels, model.intra_head()?, &cf)?;
        if t >= 1 {
            let z_old = model.old_features(&seen.x)?;
            let cur = model.current_features(&seen.x)?;
            let proj = model.project(&z_old)?;
            let inter = gen_inter_batch(&cur, &proj, &z_old, &seen.y, model.inter_head()?, &cf)?;
            samples.extend(samples_of(inter, seen.len()));
        }
        Some(counterfactual_quality(&samples, model)?)
    } else {
        None
    };
    let buffer_batch = (t >= 1 && !buffer.is_empty()).then(|| buffer.batch());
    let cpns_report = empirical_cpns_risk(model, current.batch(), buffer_batch, &cf)?;
    assert_risk_bound(&cpns_report)?;
    Ok(EvalRecord {
        task_index: t,
        task_accuracies,
        last_acc,
        avg_acc,
        old_new_errors,
        cka_by_layer,
        masking_curve: masking,
        cf_quality,
        cpns_report,
    })
}

fn seed_dir(cfg: &ExperimentConfig, seed: u64) -> PathBuf {
    cfg.output_dir.join(&cfg.run_id).join(format!("seed-{seed}"))
}

/// The full incremental loop for one seed. Artifacts are written when
/// `write` is set.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, write: bool) -> Result<SeedResult> {
    let stream = cfg.build_stream(seed)?;
    let mut model_cfg = cfg.model.clone();
    model_cfg.input_dim = stream.input_dim();
    let mut model = ExpandableModel::new(model_cfg, seed)?;
    let mut train_cfg = cfg.train.clone();
    train_cfg.seed = train_cfg.seed.wrapping_add(seed);
    let mut buffer = RehearsalBuffer::new(
        train_cfg.buffer_capacity,
        train_cfg.buffer_policy,
        stream.input_dim(),
        train_cfg.seed,
    );
    let mut trainer = Trainer::new(train_cfg)?;
    let dir = seed_dir(cfg, seed);
    let mut epoch_log = if write {
        fs::create_dir_all(&dir)?;
        Some(BufWriter::new(File::create(dir.join("epochs.jsonl"))?))
    } else {
        None
    };

    let mut history = Vec::new();
    let mut evals = Vec::new();
    let mut epochs = Vec::new();
    for (t, task) in stream.tasks.iter().enumerate() {
        model.expand(task.range.count)?;
        let records = if cfg.baseline_code_path {
            trainer.train_task_baseline(&mut model, &task.train, &buffer)?
        } else {
            trainer.train_task(&mut model, &task.train, &buffer)?
        };
        buffer.commit(&task.train, &model)?;
        let buf = buffer.as_dataset(model.num_classes());
        let eval = evaluate(&model, &stream, &buf, &mut history, cfg)?;
        log::info!(
            "seed {seed} task {t}: acc {:.4} (avg {:.4})",
            eval.last_acc,
            eval.avg_acc
        );
        if let Some(w) = epoch_log.as_mut() {
            for r in &records {
                serde_json::to_writer(&mut *w, r)?;
                w.write_all(b"\n")?;
            }
            fs::write(
                dir.join(format!("eval-task{t}.json")),
                serde_json::to_string_pretty(&eval)?,
            )?;
            checkpoint::save(dir.join(format!("model-task{t}.ckpt")), &model)?;
        }
        epochs.extend(records);
        evals.push(eval);
    }
    if let Some(mut w) = epoch_log {
        w.flush()?;
    }
    let last = history.last().copied().unwrap_or(0.0);
    let avg = history.iter().sum::<f64>() / history.len().max(1) as f64;
    let result = SeedResult {
        seed,
        last,
        avg,
        evals,
        epochs,
        model,
    };
    if write {
        write_summary(&dir.join("summary.csv"), &[summary_row(cfg, &result)])?;
    }
    Ok(result)
}

fn summary_row(cfg: &ExperimentConfig, r: &SeedResult) -> SummaryRow {
    SummaryRow {
        method: cfg.method_name(),
        scenario: cfg.scenario(),
        seed: r.seed,
        last: r.last,
        avg: r.avg,
    }
}

pub fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

fn pool(threads: Option<usize>) -> Result<rayon::ThreadPool> {
    let n = threads
        .or_else(|| std::env::var("CPNSLAB_THREADS").ok().and_then(|v| v.parse().ok()))
        .unwrap_or(1);
    rayon::ThreadPoolBuilder::new()
        .num_threads(n.max(1))
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

/// Runs every seed (in parallel when `threads > 1`); seeds are independent
/// so results do not depend on the schedule.
pub fn run_seeds(cfg: &ExperimentConfig, write: bool, threads: Option<usize>) -> Result<Vec<SeedResult>> {
    cfg.validate()?;
    pool(threads)?.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&s| run_seed(cfg, s, write))
            .collect::<Result<Vec<_>>>()
    })
}

/// `run`: all seeds plus a run-level summary CSV.
pub fn run(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<SummaryRow>> {
    let results = run_seeds(cfg, true, threads)?;
    let rows: Vec<SummaryRow> = results.iter().map(|r| summary_row(cfg, r)).collect();
    write_summary(&cfg.output_dir.join(&cfg.run_id).join("summary.csv"), &rows)?;
    Ok(rows)
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    v.iter().sum::<f64>() / v.len().max(1) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SweepParam {
    Lambda,
    Gamma,
    Beta,
    Epsilon,
    Alpha,
    Nu,
}

impl std::str::FromStr for SweepParam {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "lambda" => SweepParam::Lambda,
            "gamma" => SweepParam::Gamma,
            "beta" => SweepParam::Beta,
            "epsilon" => SweepParam::Epsilon,
            "alpha" => SweepParam::Alpha,
            "nu" => SweepParam::Nu,
            other => {
                return config(format!(
                    "unknown sweep parameter '{other}' (expected lambda, gamma, beta, epsilon, alpha or nu)"
                ))
            }
        })
    }
}

impl SweepParam {
    pub fn name(self) -> &'static str {
        match self {
            SweepParam::Lambda => "lambda",
            SweepParam::Gamma => "gamma",
            SweepParam::Beta => "beta",
            SweepParam::Epsilon => "epsilon",
            SweepParam::Alpha => "alpha",
            SweepParam::Nu => "nu",
        }
    }

    pub fn apply(self, t: &mut TrainConfig, v: f64) {
        match self {
            SweepParam::Lambda => t.lambda = v,
            SweepParam::Gamma => t.gamma = v,
            SweepParam::Beta => t.beta = v,
            SweepParam::Epsilon => t.epsilon = v,
            SweepParam::Alpha => t.alpha = v,
            SweepParam::Nu => t.nu = v,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub value: f64,
    pub last: f64,
    pub avg: f64,
}

/// One seed-averaged row per value, written to `sweep-<param>.csv`.
pub fn sweep(cfg: &ExperimentConfig, param: SweepParam, values: &[f64], threads: Option<usize>) -> Result<Vec<SweepRow>> {
    if values.is_empty() {
        return config("sweep needs at least one value");
    }
    let mut rows = Vec::with_capacity(values.len());
    for &v in values {
        let mut c = cfg.clone();
        param.apply(&mut c.train, v);
        c.run_id = format!("{}-{}-{v}", cfg.run_id, param.name());
        let results = run_seeds(&c, true, threads)?;
        rows.push(SweepRow {
            value: v,
            last: mean(results.iter().map(|r| r.last)),
            avg: mean(results.iter().map(|r| r.avg)),
        });
    }
    let dir = cfg.output_dir.join(&cfg.run_id);
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join(format!("sweep-{}.csv", param.name())))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub method: String,
    pub intra: bool,
    pub inter: bool,
    pub two_stage: bool,
    pub last: f64,
    pub avg: f64,
}

/// The six ablation variants as `(name, intra, inter, two_stage)`.
pub const ABLATIONS: [(&str, bool, bool, bool); 6] = [
    ("baseline", false, false, false),
    ("intra", true, false, true),
    ("inter_single_stage", false, true, false),
    ("inter_two_stage", false, true, true),
    ("both_single_stage", true, true, false),
    ("full", true, true, true),
];

pub fn ablation_config(cfg: &ExperimentConfig, intra: bool, inter: bool, two_stage: bool) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.train.intra = intra;
    c.train.inter = inter;
    if !two_stage {
        c.train.stage1_epochs = 0;
    }
    if !intra && !inter {
        c.train = c.train.baseline();
    }
    c
}

/// Runs the six variants; writes `ablation.csv` (seed-averaged) and a
/// per-seed `summary.csv`.
pub fn ablate(cfg: &ExperimentConfig, threads: Option<usize>) -> Result<Vec<AblationRow>> {
    cfg.validate()?;
    if cfg.train.stage1_epochs == 0 {
        return config("ablation needs stage1_epochs > 0 for the two-stage variants");
    }
    let mut rows = Vec::new();
    let mut summary = Vec::new();
    for (name, intra, inter, two) in ABLATIONS {
        let mut c = ablation_config(cfg, intra, inter, two);
        c.run_id = format!("{}-{name}", cfg.run_id);
        c.method = Some(name.to_string());
        let results = run_seeds(&c, true, threads)?;
        summary.extend(results.iter().map(|r| summary_row(&c, r)));
        rows.push(AblationRow {
            method: name.to_string(),
            intra,
            inter,
            two_stage: two,
            last: mean(results.iter().map(|r| r.last)),
            avg: mean(results.iter().map(|r| r.avg)),
        });
    }
    let dir = cfg.output_dir.join(&cfg.run_id);
    fs::create_dir_all(&dir)?;
    let mut w = csv::Writer::from_path(dir.join("ablation.csv"))?;
    for r in &rows {
        w.serialize(r)?;
    }
    w.flush()?;
    write_summary(&dir.join("summary.csv"), &summary)?;
    Ok(rows)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointEval {
    pub samples: usize,
    pub accuracy: f64,
    pub tasks: usize,
    pub classes: usize,
}

/// Accuracy of a saved model on a `cpns-tab` file.
pub fn eval_checkpoint(ckpt: &Path, data: &Path) -> Result<CheckpointEval> {
    let model = checkpoint::load(ckpt)?;
    let ds = load_table(data)?;
    if ds.dims() != model.config.input_dim {
        return Err(Error::Format(format!(
            "data has {} features, model expects {}",
            ds.dims(),
            model.config.input_dim
        )));
    }
    if let Some(&bad) = ds.y.iter().find(|&&l| l >= model.num_classes()) {
        return Err(Error::Input(format!(
            "label {bad} is beyond the model's {} classes",
            model.num_classes()
        )));
    }
    Ok(CheckpointEval {
        samples: ds.len(),
        accuracy: accuracy(&model, &ds)?,
        tasks: model.num_tasks(),
        classes: model.num_classes(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sweep_params_parse() {
        for p in ["lambda", "gamma", "beta", "epsilon", "alpha", "nu"] {
            assert_eq!(p.parse::<SweepParam>().unwrap().name(), p);
        }
        assert!(matches!("lr".parse::<SweepParam>(), Err(Error::Config(_))));
    }

    #[test]
    fn method_names() {
        let cfg = ExperimentConfig::default();
        assert_eq!(cfg.method_name(), "cpns");
        let base = ExperimentConfig {
            train: TrainConfig::default().baseline(),
            ..ExperimentConfig::default()
        };
        assert_eq!(base.method_name(), "baseline");
        assert_eq!(cfg.scenario(), "scm-5x4");
    }

    #[test]
    fn ablation_variants() {
        let cfg = ExperimentConfig::default();
        let b = ablation_config(&cfg, false, false, false);
        assert!(!b.train.intra_active() && !b.train.inter_active() && b.train.stage1_epochs == 0);
        let single = ablation_config(&cfg, true, true, false);
        assert!(single.train.intra_active() && single.train.inter_active());
        assert_eq!(single.train.stage1_epochs, 0);
        let full = ablation_config(&cfg, true, true, true);
        assert_eq!(full.train, cfg.train);
    }

    #[test]
    fn config_json_defaults_and_validation() {
        let cfg = ExperimentConfig::from_json(r#"{"data": {"kind": "synthetic", "num_tasks": 2}}"#).unwrap();
        assert_eq!(cfg.seeds, vec![0]);
        assert!(matches!(&cfg.data, DataSource::Synthetic(s) if s.num_tasks == 2 && s.classes_per_task == 4));
        assert!(ExperimentConfig::from_json(r#"{"seeds": []}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"run_id": "a/b"}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"unknown": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"train": {"lamda": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"data": {"kind": "synthetic", "overlp": 1}}"#).is_err());
    }
}
