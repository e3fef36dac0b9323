//! Two-stage training on top of the expansion baseline.
//!
//! Stage 1 shapes the new extractor with the intra-task objective only
//! (sufficiency/necessity surrogate plus the KL term). Stage 2 adds the
//! active CPNS terms to the baseline objective:
//!
//! `L_cls + L_aux + R_intra + λ·R_inter + γ·(KL_intra + KL_inter) + L_p`.
//!
//! Counterfactual displacements are computed from current values and enter
//! the graph as constants, so no second-order terms appear.

use std::time::Instant;

use rand::seq::{index, SliceRandom};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Reduction};
use crate::buffer::{BufferPolicy, RehearsalBuffer};
use crate::counterfactual::{gen_inter_batch, gen_intra_batch, CfConfig, DivergenceKind};
use crate::data::Dataset;
use crate::error::{config, usage, Error, Result};
use crate::model::ExpandableModel;
use crate::optim::{Optimizer, OptimizerConfig, OptimizerKind};
use crate::params::Bindings;
use crate::risk::{empirical_cpns_risk, surrogate_terms, CpnsReport};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrSchedule {
    #[default]
    Constant,
    Cosine,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub stage1_epochs: usize,
    pub stage2_epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub optimizer: OptimizerKind,
    pub schedule: LrSchedule,
    pub lambda: f64,
    pub gamma: f64,
    pub beta: f64,
    pub alpha: f64,
    pub epsilon: f64,
    pub nu: f64,
    pub divergence: DivergenceKind,
    /// Scope switches for ablations; a scope also needs nonzero weights.
    pub intra: bool,
    pub inter: bool,
    /// Whether the KL terms contribute gradients (otherwise only logged).
    pub kl_backprop: bool,
    pub buffer_capacity: usize,
    pub buffer_policy: BufferPolicy,
    pub seed: u64,
    /// Record real elapsed time in epoch logs (breaks byte-identical output).
    pub record_wall_clock: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            stage1_epochs: 100,
            stage2_epochs: 30,
            batch_size: 32,
            lr: 1e-2,
            momentum: 0.95,
            beta2: 0.999,
            weight_decay: 1e-5,
            optimizer: OptimizerKind::Adam,
            schedule: LrSchedule::Constant,
            lambda: 0.5,
            gamma: 1.0,
            beta: 0.03,
            alpha: 1.0,
            epsilon: 0.05,
            nu: 1.0,
            divergence: DivergenceKind::SoftmaxKl,
            intra: true,
            inter: true,
            kl_backprop: true,
            buffer_capacity: 2000,
            buffer_policy: BufferPolicy::Herding,
            seed: 0,
            record_wall_clock: false,
        }
    }
}

impl TrainConfig {
    /// The expansion baseline: every CPNS weight zero and no stage 1.
    pub fn baseline(mut self) -> Self {
        self.lambda = 0.0;
        self.gamma = 0.0;
        self.nu = 0.0;
        self.stage1_epochs = 0;
        self
    }

    pub fn validate(&self) -> Result<()> {
        let rates = [
            ("lr", self.lr),
            ("momentum", self.momentum),
            ("weight_decay", self.weight_decay),
            ("lambda", self.lambda),
            ("gamma", self.gamma),
            ("beta", self.beta),
            ("alpha", self.alpha),
            ("epsilon", self.epsilon),
            ("nu", self.nu),
        ];
        if let Some((name, v)) = rates.iter().find(|(_, v)| !(*v >= 0.0) || !v.is_finite()) {
            return config(format!("{name} must be a finite value ≥ 0, got {v}"));
        }
        if self.batch_size == 0 {
            return config("batch_size must be positive");
        }
        if self.lr == 0.0 {
            return config("lr must be positive");
        }
        if self.intra_active() && (self.alpha == 0.0 || self.epsilon == 0.0) {
            return config("intra counterfactuals need alpha > 0 and epsilon > 0");
        }
        if self.inter_active() && (self.beta == 0.0 || self.epsilon == 0.0) {
            return config("inter counterfactuals need beta > 0 and epsilon > 0");
        }
        Ok(())
    }

    /// Intra terms contribute in stage 2.
    pub fn intra_active(&self) -> bool {
        self.intra && (self.nu > 0.0 || self.gamma > 0.0)
    }

    /// Inter terms (and the projector loss) contribute in stage 2.
    pub fn inter_active(&self) -> bool {
        self.inter && self.lambda > 0.0
    }

    pub fn cf_config(&self) -> CfConfig {
        CfConfig {
            alpha: if self.alpha > 0.0 { self.alpha } else { 1.0 },
            beta: if self.beta > 0.0 { self.beta } else { 0.03 },
            epsilon: if self.epsilon > 0.0 { self.epsilon } else { 0.05 },
            divergence: self.divergence,
            ..CfConfig::default()
        }
    }

    pub fn optimizer_config(&self) -> OptimizerConfig {
        OptimizerConfig {
            kind: self.optimizer,
            lr: self.lr,
            momentum: self.momentum,
            beta2: self.beta2,
            weight_decay: self.weight_decay,
            eps: 1e-8,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossTerms {
    pub cls: f64,
    pub aux: f64,
    pub intra: f64,
    pub inter: f64,
    pub kl: f64,
    pub proj: f64,
}

impl LossTerms {
    fn add(&mut self, o: &LossTerms) {
        self.cls += o.cls;
        self.aux += o.aux;
        self.intra += o.intra;
        self.inter += o.inter;
        self.kl += o.kl;
        self.proj += o.proj;
    }

    fn scale(&mut self, s: f64) {
        for v in [
            &mut self.cls,
            &mut self.aux,
            &mut self.intra,
            &mut self.inter,
            &mut self.kl,
            &mut self.proj,
        ] {
            *v *= s;
        }
    }

    pub fn total(&self) -> f64 {
        self.cls + self.aux + self.intra + self.inter + self.kl + self.proj
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub task: usize,
    pub stage: u8,
    pub epoch: usize,
    pub loss_terms: LossTerms,
    pub cpns_report: CpnsReport,
    pub wall_ms: u64,
}

/// Generator invocation counts, split by stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct CfCounters {
    pub intra_stage1: u64,
    pub inter_stage1: u64,
    pub intra_stage2: u64,
    pub inter_stage2: u64,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub counters: CfCounters,
    rng: ChaCha8Rng,
    stage: u8,
}

/// One minibatch slice: inputs, global labels, and their frozen features.
struct Part {
    x: Tensor,
    y: Vec<usize>,
    z_old: Option<Tensor>,
}

/// Graph nodes of one part after the base losses are built.
struct PartNodes {
    c: NodeId,
    z_old: Option<NodeId>,
    z: NodeId,
}

struct StepResult {
    grads: Vec<(String, Tensor)>,
    terms: LossTerms,
}

fn add_opt(g: &mut Graph, acc: Option<NodeId>, v: NodeId) -> Result<NodeId> {
    match acc {
        None => Ok(v),
        Some(a) => g.add(a, v),
    }
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let rng = ChaCha8Rng::seed_from_u64(config.seed ^ 0x7261_696e);
        Ok(Trainer {
            config,
            counters: CfCounters::default(),
            rng,
            stage: 0,
        })
    }

    fn make_parts(
        &mut self,
        model: &ExpandableModel,
        task: &Dataset,
        batch_idx: &[usize],
        buffer: Option<&Dataset>,
    ) -> Result<Vec<Part>> {
        let t = model.current_task()?;
        let old = |x: &Tensor| -> Result<Option<Tensor>> {
            if t == 0 {
                Ok(None)
            } else {
                model.old_features(x).map(Some)
            }
        };
        let x = task.x.select_rows(batch_idx);
        let mut parts = vec![Part {
            z_old: old(&x)?,
            y: batch_idx.iter().map(|&i| task.y[i]).collect(),
            x,
        }];
        if let Some(buf) = buffer.filter(|b| !b.is_empty()) {
            let m = batch_idx.len().min(buf.len());
            let mut idx = index::sample(&mut self.rng, buf.len(), m).into_vec();
            idx.sort_unstable();
            let x = buf.x.select_rows(&idx);
            parts.push(Part {
                z_old: old(&x)?,
                y: idx.iter().map(|&i| buf.y[i]).collect(),
                x,
            });
        }
        Ok(parts)
    }

    /// `L_cls + L_aux` over all parts, averaged over every row.
    fn build_base(
        model: &ExpandableModel,
        g: &mut Graph,
        b: &mut Bindings,
        parts: &[Part],
        terms: &mut LossTerms,
    ) -> Result<(NodeId, Vec<PartNodes>)> {
        let t = model.current_task()?;
        let n: usize = parts.iter().map(|p| p.y.len()).sum();
        let inv_n = 1.0 / n as f64;
        let mut nodes = Vec::with_capacity(parts.len());
        let mut cls_sum = None;
        let mut aux_sum = None;
        for p in parts {
            let x = g.constant(p.x.clone());
            let c = model.build_extractor(g, b, t, x, true)?;
            let (z_old, z) = match &p.z_old {
                Some(zo) => {
                    let zo = g.constant(zo.clone());
                    (Some(zo), g.concat_cols(&[zo, c])?)
                }
                None => (None, c),
            };
            let logits = model.build_head(g, b, "cls", z, true)?;
            let ce = g.softmax_cross_entropy(logits, &p.y, Reduction::Sum)?;
            cls_sum = Some(add_opt(g, cls_sum, ce)?);
            if t >= 1 {
                let labels = p
                    .y
                    .iter()
                    .map(|&l| model.aux_label(l))
                    .collect::<Result<Vec<_>>>()?;
                let al = model.build_head(g, b, "aux", c, true)?;
                let ce = g.softmax_cross_entropy(al, &labels, Reduction::Sum)?;
                aux_sum = Some(add_opt(g, aux_sum, ce)?);
            }
            nodes.push(PartNodes { c, z_old, z });
        }
        let cls = g.scale(cls_sum.expect("non-empty parts"), inv_n)?;
        terms.cls = g.scalar(cls);
        let mut total = cls;
        if let Some(a) = aux_sum {
            let aux = g.scale(a, inv_n)?;
            terms.aux = g.scalar(aux);
            total = g.add(total, aux)?;
        }
        Ok((total, nodes))
    }

    /// Intra surrogate and KL on the current-task rows.
    fn build_intra(
        &mut self,
        model: &ExpandableModel,
        g: &mut Graph,
        b: &mut Bindings,
        part: &Part,
        c: NodeId,
        terms: &mut LossTerms,
    ) -> Result<Option<NodeId>> {
        let cfg = &self.config;
        let labels = part
            .y
            .iter()
            .map(|&l| model.intra_label(l))
            .collect::<Result<Vec<_>>>()?;
        let head = model.intra_head()?;
        let logits_f = model.build_head(g, b, "intra", c, true)?;
        if !(cfg.nu > 0.0 || cfg.gamma > 0.0) {
            let ce = g.softmax_cross_entropy(logits_f, &labels, Reduction::Mean)?;
            terms.intra += g.scalar(ce);
            return Ok(Some(ce));
        }
        let c_val = g.value(c).clone();
        let samples = gen_intra_batch(&c_val, &labels, head, &cfg.cf_config())?;
        let n = samples.len() as u64;
        if self.stage == 1 {
            self.counters.intra_stage1 += n;
        } else {
            self.counters.intra_stage2 += n;
        }
        let mut delta = Tensor::zeros(c_val.rows(), c_val.cols());
        for (r, s) in samples.iter().enumerate() {
            delta.row_mut(r).copy_from_slice(&s.delta);
        }
        let delta = g.constant(delta);
        let cf = g.add(c, delta)?;
        let logits_cf = model.build_head(g, b, "intra", cf, true)?;
        let sur = surrogate_terms(g, logits_f, logits_cf, &labels, cfg.nu, Reduction::Mean)?;
        terms.intra += g.scalar(sur);
        let mut total = sur;
        if cfg.gamma > 0.0 {
            let kl = g.kl_softmax(cf, c, Reduction::Mean)?;
            let kl = g.scale(kl, cfg.gamma)?;
            terms.kl += g.scalar(kl);
            if cfg.kl_backprop {
                total = g.add(total, kl)?;
            }
        }
        Ok(Some(total))
    }

    /// `mean ‖P(z_old) − stopgrad(c)‖²` summed over parts.
    fn build_projector_loss(
        model: &ExpandableModel,
        g: &mut Graph,
        b: &mut Bindings,
        parts: &[Part],
        nodes: &[PartNodes],
        terms: &mut LossTerms,
    ) -> Result<NodeId> {
        let n: usize = parts.iter().map(|p| p.y.len()).sum();
        let mut acc = None;
        for pn in nodes {
            let zo = pn.z_old.ok_or_else(|| Error::Usage("projector needs frozen features".into()))?;
            let target = g.constant(g.value(pn.c).clone());
            let proj = model.build_projector(g, b, zo, true)?;
            let diff = g.sub(proj, target)?;
            let sq = g.mul(diff, diff)?;
            let s = g.sum(sq)?;
            acc = Some(add_opt(g, acc, s)?);
        }
        let lp = g.scale(acc.expect("parts"), 1.0 / n as f64)?;
        terms.proj += g.scalar(lp);
        Ok(lp)
    }

    /// Inter surrogate (weighted by λ) and KL over every part.
    fn build_inter(
        &mut self,
        model: &ExpandableModel,
        g: &mut Graph,
        b: &mut Bindings,
        parts: &[Part],
        nodes: &[PartNodes],
        terms: &mut LossTerms,
    ) -> Result<NodeId> {
        let cfg = self.config.clone();
        let n: usize = parts.iter().map(|p| p.y.len()).sum();
        let inv_n = 1.0 / n as f64;
        let head = model.inter_head()?;
        let mut sur_sum = None;
        let mut kl_sum = None;
        for (p, pn) in parts.iter().zip(nodes) {
            let zo_val = p.z_old.as_ref().expect("t ≥ 1");
            let c_val = g.value(pn.c).clone();
            let projected = model.project(zo_val)?;
            let samples = gen_inter_batch(&c_val, &projected, zo_val, &p.y, head, &cfg.cf_config())?;
            if self.stage == 1 {
                self.counters.inter_stage1 += samples.len() as u64;
            } else {
                self.counters.inter_stage2 += samples.len() as u64;
            }
            let mut delta = Tensor::zeros(c_val.rows(), c_val.cols());
            for (r, s) in samples.iter().enumerate() {
                delta.row_mut(r).copy_from_slice(&s.delta);
            }
            let delta = g.constant(delta);
            let cf = g.add(pn.c, delta)?;
            let z_cf = g.concat_cols(&[pn.z_old.expect("t ≥ 1"), cf])?;
            let lf = model.build_head(g, b, "inter", pn.z, true)?;
            let lc = model.build_head(g, b, "inter", z_cf, true)?;
            let s = surrogate_terms(g, lf, lc, &p.y, cfg.nu, Reduction::Sum)?;
            sur_sum = Some(add_opt(g, sur_sum, s)?);
            if cfg.gamma > 0.0 {
                let k = g.kl_softmax(cf, pn.c, Reduction::Sum)?;
                kl_sum = Some(add_opt(g, kl_sum, k)?);
            }
        }
        let inter = g.scale(sur_sum.expect("parts"), cfg.lambda * inv_n)?;
        terms.inter += g.scalar(inter);
        let mut total = inter;
        if let Some(k) = kl_sum {
            let kl = g.scale(k, cfg.gamma * inv_n)?;
            terms.kl += g.scalar(kl);
            if cfg.kl_backprop {
                total = g.add(total, kl)?;
            }
        }
        Ok(total)
    }

    fn stage2_step(&mut self, model: &ExpandableModel, parts: &[Part], baseline_only: bool) -> Result<StepResult> {
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let mut terms = LossTerms::default();
        let (mut total, nodes) = Self::build_base(model, &mut g, &mut b, parts, &mut terms)?;
        if !baseline_only {
            let t = model.current_task()?;
            if self.config.intra_active() {
                if let Some(l) =
                    self.build_intra(model, &mut g, &mut b, &parts[0], nodes[0].c, &mut terms)?
                {
                    total = g.add(total, l)?;
                }
            }
            if self.config.inter_active() && t >= 1 {
                let l = self.build_inter(model, &mut g, &mut b, parts, &nodes, &mut terms)?;
                total = g.add(total, l)?;
                let lp = Self::build_projector_loss(model, &mut g, &mut b, parts, &nodes, &mut terms)?;
                total = g.add(total, lp)?;
            }
        }
        g.backward(total)?;
        Ok(StepResult {
            grads: b.gradients(&g),
            terms,
        })
    }

    fn stage1_step(&mut self, model: &ExpandableModel, parts: &[Part]) -> Result<StepResult> {
        let t = model.current_task()?;
        let mut g = Graph::new();
        let mut b = Bindings::new();
        let mut terms = LossTerms::default();
        let p = &parts[0];
        let x = g.constant(p.x.clone());
        let c = model.build_extractor(&mut g, &mut b, t, x, true)?;
        let mut total = self
            .build_intra(model, &mut g, &mut b, p, c, &mut terms)?
            .expect("stage 1 objective");
        if self.config.inter_active() && t >= 1 {
            // calibrate the projector so stage-2 inter counterfactuals start
            // from a meaningful reference; only P receives this gradient
            let zo = g.constant(p.z_old.clone().expect("t ≥ 1"));
            let nodes = [PartNodes { c, z_old: Some(zo), z: c }];
            let lp = Self::build_projector_loss(model, &mut g, &mut b, &parts[..1], &nodes, &mut terms)?;
            total = g.add(total, lp)?;
        }
        g.backward(total)?;
        Ok(StepResult {
            grads: b.gradients(&g),
            terms,
        })
    }

    fn lr_scale(&self, epoch: usize, epochs: usize) -> f64 {
        match self.config.schedule {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * epoch as f64 / epochs.max(1) as f64).cos())
            }
        }
    }

    fn run_stage(
        &mut self,
        model: &mut ExpandableModel,
        task: &Dataset,
        buffer: Option<&Dataset>,
        stage: u8,
        epochs: usize,
        baseline_only: bool,
    ) -> Result<Vec<EpochRecord>> {
        let t = model.current_task()?;
        let cf = self.config.cf_config();
        let mut opt = Optimizer::new(self.config.optimizer_config());
        let mut records = Vec::with_capacity(epochs);
        let bs = self.config.batch_size;
        self.stage = stage;
        for epoch in 0..epochs {
            let started = Instant::now();
            opt.set_lr_scale(self.lr_scale(epoch, epochs));
            let mut order: Vec<usize> = (0..task.len()).collect();
            order.shuffle(&mut self.rng);
            let mut sum = LossTerms::default();
            let mut batches = 0usize;
            for chunk in order.chunks(bs) {
                let stage_buffer = if stage == 2 { buffer } else { None };
                let mut parts = self.make_parts(model, task, chunk, stage_buffer)?;
                if stage == 1 {
                    parts.truncate(1);
                }
                let step = if stage == 1 {
                    self.stage1_step(model, &parts)?
                } else {
                    self.stage2_step(model, &parts, baseline_only)?
                };
                opt.step(model, &step.grads)?;
                sum.add(&step.terms);
                batches += 1;
            }
            sum.scale(1.0 / batches.max(1) as f64);
            if !model.all_finite() {
                return Err(Error::Numerical(format!(
                    "non-finite parameters after task {t} stage {stage} epoch {epoch}"
                )));
            }
            let report = empirical_cpns_risk(model, task.batch(), buffer.map(|b| b.batch()), &cf)?;
            let wall_ms = if self.config.record_wall_clock {
                started.elapsed().as_millis() as u64
            } else {
                0
            };
            log::debug!(
                "task {t} stage {stage} epoch {epoch}: loss {:.4} r_total {:.3}",
                sum.total(),
                report.r_total
            );
            records.push(EpochRecord {
                task: t,
                stage,
                epoch,
                loss_terms: sum,
                cpns_report: report,
                wall_ms,
            });
        }
        Ok(records)
    }

    fn check_preconditions(&self, model: &ExpandableModel, task: &Dataset, buffer: &RehearsalBuffer) -> Result<usize> {
        let t = model.current_task()?;
        if task.is_empty() {
            return Err(Error::Input("empty task training set".into()));
        }
        let range = model.current_range()?;
        if task.y.iter().any(|&l| !range.contains(l)) {
            return Err(Error::Input("task data holds labels outside the current task range".into()));
        }
        if t >= 1 && buffer.is_empty() {
            return config("rehearsal buffer is empty at a task after the first");
        }
        Ok(t)
    }

    fn frozen_snapshot(model: &ExpandableModel) -> Vec<Tensor> {
        model
            .named_params()
            .into_iter()
            .filter(|(_, p)| p.frozen)
            .map(|(_, p)| p.value.clone())
            .collect()
    }

    fn train_impl(
        &mut self,
        model: &mut ExpandableModel,
        task: &Dataset,
        buffer: &RehearsalBuffer,
        baseline_only: bool,
    ) -> Result<Vec<EpochRecord>> {
        let t = self.check_preconditions(model, task, buffer)?;
        let frozen_before = Self::frozen_snapshot(model);
        let buf = (t >= 1).then(|| buffer.as_dataset(model.num_classes()));
        let mut records = Vec::new();
        if !baseline_only && self.config.stage1_epochs > 0 {
            let before = self.counters.inter_stage1;
            records.extend(self.run_stage(model, task, buf.as_ref(), 1, self.config.stage1_epochs, false)?);
            if self.counters.inter_stage1 != before {
                return Err(Error::Invariant("inter counterfactuals generated during stage 1".into()));
            }
        }
        records.extend(self.run_stage(model, task, buf.as_ref(), 2, self.config.stage2_epochs, baseline_only)?);
        if Self::frozen_snapshot(model) != frozen_before {
            return Err(Error::Invariant("a frozen extractor changed during training".into()));
        }
        Ok(records)
    }

    /// Trains the newest extractor and the heads on one task.
    pub fn train_task(
        &mut self,
        model: &mut ExpandableModel,
        task: &Dataset,
        buffer: &RehearsalBuffer,
    ) -> Result<Vec<EpochRecord>> {
        self.train_impl(model, task, buffer, false)
    }

    /// The plain expansion baseline (`L_cls + L_aux` only), independent of
    /// every CPNS setting.
    pub fn train_task_baseline(
        &mut self,
        model: &mut ExpandableModel,
        task: &Dataset,
        buffer: &RehearsalBuffer,
    ) -> Result<Vec<EpochRecord>> {
        self.train_impl(model, task, buffer, true)
    }
}

/// One projector update on `x`: `mean ‖P(f_old(x)) − stopgrad(f_t(x))‖²`.
/// Only the projector's parameters move.
pub fn projector_step(model: &mut ExpandableModel, x: &Tensor, opt: &mut Optimizer) -> Result<f64> {
    if model.current_task()? == 0 {
        return usage("projector_step needs at least one frozen extractor");
    }
    let z_old = model.old_features(x)?;
    let target = model.current_features(x)?;
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let zo = g.constant(z_old);
    let tg = g.constant(target);
    let proj = model.build_projector(&mut g, &mut b, zo, true)?;
    let diff = g.sub(proj, tg)?;
    let sq = g.mul(diff, diff)?;
    let s = g.sum(sq)?;
    let loss = g.scale(s, 1.0 / x.rows().max(1) as f64)?;
    let value = g.scalar(loss);
    g.backward(loss)?;
    opt.step(model, &b.gradients(&g))?;
    Ok(value)
}
