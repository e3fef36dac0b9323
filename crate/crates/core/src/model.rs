//! The expansion skeleton: one feature extractor per task (all but the
//! newest frozen), a unified classifier over the concatenated features,
//! per-task auxiliary and intra-task heads, and a projector from frozen
//! features into the current feature space.
//!
//! Parameter names are qualified: extractor `i` owns `f{i}.l{j}.w|b`; the
//! heads live under `cls.*`, `aux.*`, `intra.*`, `inter.*` and `proj.{0,1}.*`.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId};
use crate::error::{config, usage, Error, Result};
use crate::optim::ParamStore;
use crate::params::{init_bias, init_uniform, Bindings, Param, ParameterSet};
use crate::tensor::{argmax, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub feature_dim: usize,
    pub hidden: Vec<usize>,
    /// Hidden width of the projector; `None` means `feature_dim`.
    pub projector_hidden: Option<usize>,
    /// Use a dedicated inter-task head instead of tying it to `cls`.
    pub separate_inter_head: bool,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            input_dim: 64,
            feature_dim: 32,
            hidden: vec![64],
            projector_hidden: None,
            separate_inter_head: false,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.feature_dim == 0 {
            return config("input_dim and feature_dim must be positive");
        }
        if self.hidden.contains(&0) || self.projector_hidden == Some(0) {
            return config("hidden widths must be positive");
        }
        Ok(())
    }

    pub fn extractor_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.feature_dim);
        dims
    }
}

/// Borrowed view of a linear classifier `logits = W·x + b`.
#[derive(Debug, Clone, Copy)]
pub struct Head<'a> {
    pub weight: &'a Tensor,
    pub bias: &'a Tensor,
}

impl<'a> Head<'a> {
    pub fn new(weight: &'a Tensor, bias: &'a Tensor) -> Self {
        Head { weight, bias }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn logits(&self, x: &Tensor) -> Result<Tensor> {
        x.affine(self.weight, self.bias)
    }

    pub fn logits_row(&self, x: &[f64]) -> Vec<f64> {
        (0..self.weight.rows())
            .map(|j| crate::tensor::dot(self.weight.row(j), x) + self.bias.data()[j])
            .collect()
    }

    pub fn predict_row(&self, x: &[f64]) -> usize {
        argmax(&self.logits_row(x))
    }
}

/// A multi-layer perceptron mapping inputs to `d`-dimensional features.
/// Hidden layers use ReLU; the output layer is linear.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureExtractor {
    pub layer_dims: Vec<usize>,
    pub params: ParameterSet,
    pub frozen: bool,
    pub task_index: usize,
}

impl FeatureExtractor {
    pub fn new(layer_dims: Vec<usize>, task_index: usize, rng: &mut ChaCha8Rng) -> Self {
        let mut params = ParameterSet::new();
        for (j, w) in layer_dims.windows(2).enumerate() {
            params.insert(format!("l{j}.w"), init_uniform(w[1], w[0], rng));
            params.insert(format!("l{j}.b"), init_bias(w[1], w[0], rng));
        }
        FeatureExtractor {
            layer_dims,
            params,
            frozen: false,
            task_index,
        }
    }

    pub fn num_layers(&self) -> usize {
        self.layer_dims.len() - 1
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().expect("non-empty dims")
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
        self.params.freeze_all();
    }

    /// Output of every layer (post-activation for hidden layers).
    pub fn activations(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if x.cols() != self.layer_dims[0] {
            return Err(Error::Input(format!(
                "input has {} features, extractor expects {}",
                x.cols(),
                self.layer_dims[0]
            )));
        }
        let n = self.num_layers();
        let mut out = Vec::with_capacity(n);
        let mut h = x.clone();
        for j in 0..n {
            let w = self.params.tensor(&format!("l{j}.w"))?;
            let b = self.params.tensor(&format!("l{j}.b"))?;
            h = h.affine(w, b)?;
            if j + 1 < n {
                h = h.map(|v| if v > 0.0 { v } else { 0.0 });
            }
            out.push(h.clone());
        }
        Ok(out)
    }

    pub fn forward(&self, x: &Tensor) -> Result<Tensor> {
        Ok(self.activations(x)?.pop().expect("at least one layer"))
    }

    /// Adds this extractor to a graph; parameters are bound under `prefix`.
    pub fn build(
        &self,
        g: &mut Graph,
        b: &mut Bindings,
        prefix: &str,
        x: NodeId,
        trainable: bool,
    ) -> Result<NodeId> {
        let n = self.num_layers();
        let trainable = trainable && !self.frozen;
        let mut h = x;
        for j in 0..n {
            let wn = format!("l{j}.w");
            let bn = format!("l{j}.b");
            let w = b.bind(g, &format!("{prefix}{wn}"), self.params.tensor(&wn)?, trainable);
            let bias = b.bind(g, &format!("{prefix}{bn}"), self.params.tensor(&bn)?, trainable);
            h = g.linear(h, w, bias)?;
            if j + 1 < n {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }
}

/// Global label range `[offset, offset + count)` of one task.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaskRange {
    pub offset: usize,
    pub count: usize,
}

impl TaskRange {
    pub fn contains(&self, label: usize) -> bool {
        label >= self.offset && label < self.offset + self.count
    }

    pub fn end(&self) -> usize {
        self.offset + self.count
    }
}

#[derive(Debug, Clone)]
pub struct ExpandableModel {
    pub config: ModelConfig,
    pub(crate) extractors: Vec<FeatureExtractor>,
    pub(crate) heads: ParameterSet,
    pub(crate) tasks: Vec<TaskRange>,
    pub(crate) rng: ChaCha8Rng,
}

impl ExpandableModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        Ok(ExpandableModel {
            config,
            extractors: Vec::new(),
            heads: ParameterSet::new(),
            tasks: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        })
    }

    pub fn extractors(&self) -> &[FeatureExtractor] {
        &self.extractors
    }

    pub fn heads(&self) -> &ParameterSet {
        &self.heads
    }

    pub fn task_ranges(&self) -> &[TaskRange] {
        &self.tasks
    }

    /// Number of extractors (tasks begun so far).
    pub fn num_tasks(&self) -> usize {
        self.extractors.len()
    }

    /// Index `t` of the task currently being learned.
    pub fn current_task(&self) -> Result<usize> {
        match self.extractors.len() {
            0 => usage("model has no extractors; call expand first"),
            n => Ok(n - 1),
        }
    }

    pub fn current_range(&self) -> Result<TaskRange> {
        let t = self.current_task()?;
        Ok(self.tasks[t])
    }

    pub fn num_classes(&self) -> usize {
        self.tasks.last().map(|r| r.end()).unwrap_or(0)
    }

    pub fn feature_dim(&self) -> usize {
        self.config.feature_dim
    }

    fn projector_hidden(&self) -> usize {
        self.config.projector_hidden.unwrap_or(self.config.feature_dim)
    }

    /// Freezes the current extractor, appends a fresh one, and grows the
    /// classifier heads for `new_class_count` new classes.
    pub fn expand(&mut self, new_class_count: usize) -> Result<()> {
        if new_class_count == 0 {
            return config("expand: new_class_count must be positive");
        }
        let d = self.config.feature_dim;
        if let Some(cur) = self.extractors.last_mut() {
            cur.freeze();
        }
        let t = self.extractors.len();
        let dims = self.config.extractor_dims();
        let ext = FeatureExtractor::new(dims, t, &mut self.rng);
        self.extractors.push(ext);

        let old_classes = self.num_classes();
        let total = old_classes + new_class_count;
        let width = (t + 1) * d;

        let widen = |heads: &mut ParameterSet, name: &str, rng: &mut ChaCha8Rng| {
            let mut w = Tensor::zeros(total, width);
            let mut b = Tensor::zeros(1, total);
            let fresh_w = init_uniform(new_class_count, width, rng);
            let fresh_b = init_bias(new_class_count, width, rng);
            for r in 0..new_class_count {
                w.row_mut(old_classes + r).copy_from_slice(fresh_w.row(r));
                b.data_mut()[old_classes + r] = fresh_b.data()[r];
            }
            if let (Some(ow), Some(ob)) = (
                heads.get(&format!("{name}.w")).map(|p| p.value.clone()),
                heads.get(&format!("{name}.b")).map(|p| p.value.clone()),
            ) {
                for r in 0..old_classes {
                    w.row_mut(r)[..ow.cols()].copy_from_slice(ow.row(r));
                    b.data_mut()[r] = ob.data()[r];
                }
            }
            heads.insert(format!("{name}.w"), w);
            heads.insert(format!("{name}.b"), b);
        };
        widen(&mut self.heads, "cls", &mut self.rng);
        if self.config.separate_inter_head {
            widen(&mut self.heads, "inter", &mut self.rng);
        }

        if t >= 1 {
            self.heads
                .insert("aux.w", init_uniform(new_class_count + 1, d, &mut self.rng));
            self.heads
                .insert("aux.b", init_bias(new_class_count + 1, d, &mut self.rng));
        } else {
            self.heads.remove("aux.w");
            self.heads.remove("aux.b");
        }
        self.heads
            .insert("intra.w", init_uniform(new_class_count, d, &mut self.rng));
        self.heads
            .insert("intra.b", init_bias(new_class_count, d, &mut self.rng));

        if t >= 1 {
            let h = self.projector_hidden();
            let in_dim = t * d;
            self.heads
                .insert("proj.0.w", init_uniform(h, in_dim, &mut self.rng));
            self.heads.insert("proj.0.b", init_bias(h, in_dim, &mut self.rng));
            self.heads.insert("proj.1.w", init_uniform(d, h, &mut self.rng));
            self.heads.insert("proj.1.b", init_bias(d, h, &mut self.rng));
        }

        self.tasks.push(TaskRange {
            offset: old_classes,
            count: new_class_count,
        });
        Ok(())
    }

    fn head_ref(&self, name: &str) -> Result<Head<'_>> {
        Ok(Head::new(
            self.heads.tensor(&format!("{name}.w"))?,
            self.heads.tensor(&format!("{name}.b"))?,
        ))
    }

    /// Unified classifier over concatenated features.
    pub fn cls_head(&self) -> Result<Head<'_>> {
        self.head_ref("cls")
    }

    /// Inter-task head; tied to `cls` unless configured otherwise.
    pub fn inter_head(&self) -> Result<Head<'_>> {
        self.head_ref(self.inter_name())
    }

    pub(crate) fn inter_name(&self) -> &'static str {
        if self.config.separate_inter_head {
            "inter"
        } else {
            "cls"
        }
    }

    pub fn intra_head(&self) -> Result<Head<'_>> {
        self.head_ref("intra")
    }

    pub fn aux_head(&self) -> Result<Head<'_>> {
        if self.current_task()? == 0 {
            return usage("auxiliary head is inactive for the first task");
        }
        self.head_ref("aux")
    }

    /// Features of every extractor, in task order.
    pub fn features(&self, x: &Tensor) -> Result<Vec<Tensor>> {
        if self.extractors.is_empty() {
            return usage("model has no extractors");
        }
        self.extractors.iter().map(|e| e.forward(x)).collect()
    }

    /// `[f_0(x), …, f_t(x)]`.
    pub fn concat_features(&self, x: &Tensor) -> Result<Tensor> {
        let feats = self.features(x)?;
        Tensor::concat_cols(&feats.iter().collect::<Vec<_>>())
    }

    /// `[f_0(x), …, f_{t−1}(x)]`; requires `t ≥ 1`.
    pub fn old_features(&self, x: &Tensor) -> Result<Tensor> {
        let t = self.current_task()?;
        if t == 0 {
            return usage("no frozen extractors at the first task");
        }
        let feats = self.extractors[..t]
            .iter()
            .map(|e| e.forward(x))
            .collect::<Result<Vec<_>>>()?;
        Tensor::concat_cols(&feats.iter().collect::<Vec<_>>())
    }

    pub fn current_features(&self, x: &Tensor) -> Result<Tensor> {
        let t = self.current_task()?;
        self.extractors[t].forward(x)
    }

    pub fn forward_concat(&self, x: &Tensor) -> Result<Tensor> {
        let z = self.concat_features(x)?;
        self.cls_head()?.logits(&z)
    }

    pub fn forward_aux(&self, x: &Tensor) -> Result<Tensor> {
        let head = self.aux_head()?;
        head.logits(&self.current_features(x)?)
    }

    pub fn forward_intra(&self, x: &Tensor) -> Result<Tensor> {
        self.intra_head()?.logits(&self.current_features(x)?)
    }

    /// Projector output `P([f_0(x), …, f_{t−1}(x)])`.
    pub fn project_old(&self, x: &Tensor) -> Result<Tensor> {
        let z_old = self.old_features(x)?;
        self.project(&z_old)
    }

    /// Applies the projector to already computed frozen features.
    pub fn project(&self, z_old: &Tensor) -> Result<Tensor> {
        if self.current_task()? == 0 {
            return usage("projector is inactive for the first task");
        }
        let h = z_old
            .affine(self.heads.tensor("proj.0.w")?, self.heads.tensor("proj.0.b")?)?
            .map(|v| if v > 0.0 { v } else { 0.0 });
        h.affine(self.heads.tensor("proj.1.w")?, self.heads.tensor("proj.1.b")?)
    }

    /// Predicted global labels.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.forward_concat(x)?.iter_rows().map(argmax).collect())
    }

    /// Maps a global label into the auxiliary label space: current-task
    /// classes keep their within-task index, everything else is the
    /// aggregated old bucket `|C_t|`.
    pub fn aux_label(&self, label: usize) -> Result<usize> {
        let r = self.current_range()?;
        Ok(if r.contains(label) {
            label - r.offset
        } else {
            r.count
        })
    }

    /// Within-task index of a current-task label.
    pub fn intra_label(&self, label: usize) -> Result<usize> {
        let r = self.current_range()?;
        if !r.contains(label) {
            return Err(Error::Input(format!(
                "label {label} is not in the current task range {}..{}",
                r.offset,
                r.end()
            )));
        }
        Ok(label - r.offset)
    }

    // ---- graph construction -------------------------------------------

    pub fn build_extractor(
        &self,
        g: &mut Graph,
        b: &mut Bindings,
        index: usize,
        x: NodeId,
        trainable: bool,
    ) -> Result<NodeId> {
        let e = self
            .extractors
            .get(index)
            .ok_or_else(|| Error::Usage(format!("no extractor {index}")))?;
        e.build(g, b, &format!("f{index}."), x, trainable)
    }

    /// Adds a linear head (`cls`, `aux`, `intra`, `inter`) to a graph.
    pub fn build_head(
        &self,
        g: &mut Graph,
        b: &mut Bindings,
        name: &str,
        input: NodeId,
        trainable: bool,
    ) -> Result<NodeId> {
        let name = if name == "inter" { self.inter_name() } else { name };
        let wn = format!("{name}.w");
        let bn = format!("{name}.b");
        let w = b.bind(g, &wn, self.heads.tensor(&wn)?, trainable);
        let bias = b.bind(g, &bn, self.heads.tensor(&bn)?, trainable);
        g.linear(input, w, bias)
    }

    pub fn build_projector(
        &self,
        g: &mut Graph,
        b: &mut Bindings,
        z_old: NodeId,
        trainable: bool,
    ) -> Result<NodeId> {
        let mut h = z_old;
        for layer in 0..2 {
            let wn = format!("proj.{layer}.w");
            let bn = format!("proj.{layer}.b");
            let w = b.bind(g, &wn, self.heads.tensor(&wn)?, trainable);
            let bias = b.bind(g, &bn, self.heads.tensor(&bn)?, trainable);
            h = g.linear(h, w, bias)?;
            if layer == 0 {
                h = g.relu(h)?;
            }
        }
        Ok(h)
    }

    /// Every parameter with its qualified name.
    pub fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = Vec::new();
        for (i, e) in self.extractors.iter().enumerate() {
            for (n, p) in e.params.iter() {
                out.push((format!("f{i}.{n}"), p));
            }
        }
        for (n, p) in self.heads.iter() {
            out.push((n.clone(), p));
        }
        out
    }

    pub fn all_finite(&self) -> bool {
        self.extractors.iter().all(|e| e.params.all_finite()) && self.heads.all_finite()
    }
}

impl ParamStore for ExpandableModel {
    fn param_mut(&mut self, name: &str) -> Option<&mut Param> {
        if let Some(rest) = name.strip_prefix('f') {
            if let Some((idx, local)) = rest.split_once('.') {
                if let Ok(i) = idx.parse::<usize>() {
                    return self.extractors.get_mut(i)?.params.get_mut(local);
                }
            }
        }
        self.heads.get_mut(name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> ModelConfig {
        ModelConfig {
            input_dim: 5,
            feature_dim: 3,
            hidden: vec![4],
            projector_hidden: None,
            separate_inter_head: false,
        }
    }

    #[test]
    fn base_case_expansion() {
        let mut m = ExpandableModel::new(small(), 1).unwrap();
        m.expand(10).unwrap();
        assert_eq!(m.num_tasks(), 1);
        assert_eq!(m.cls_head().unwrap().weight.shape(), (10, 3));
        assert!(m.aux_head().is_err());
        assert!(m.project_old(&Tensor::zeros(1, 5)).is_err());
    }

    #[test]
    fn zero_classes_is_config_error() {
        let mut m = ExpandableModel::new(small(), 1).unwrap();
        assert!(matches!(m.expand(0), Err(Error::Config(_))));
    }

    #[test]
    fn second_expansion_inherits_classifier() {
        let mut m = ExpandableModel::new(small(), 1).unwrap();
        m.expand(10).unwrap();
        let old_w = m.cls_head().unwrap().weight.clone();
        let old_b = m.cls_head().unwrap().bias.clone();
        m.expand(10).unwrap();
        let w = m.cls_head().unwrap().weight;
        assert_eq!(w.shape(), (20, 6));
        for r in 0..10 {
            assert_eq!(&w.row(r)[..3], old_w.row(r));
            assert_eq!(&w.row(r)[3..], &[0.0; 3]);
            assert_eq!(m.cls_head().unwrap().bias.data()[r], old_b.data()[r]);
        }
        assert!(m.extractors()[0].frozen);
        assert!(!m.extractors()[1].frozen);
        assert_eq!(m.aux_head().unwrap().weight.shape(), (11, 3));
        assert_eq!(m.heads().tensor("proj.0.w").unwrap().cols(), 3);
    }

    #[test]
    fn aux_and_intra_labels() {
        let mut m = ExpandableModel::new(small(), 1).unwrap();
        m.expand(3).unwrap();
        m.expand(2).unwrap();
        assert_eq!(m.aux_label(4).unwrap(), 1);
        assert_eq!(m.aux_label(0).unwrap(), 2);
        assert_eq!(m.intra_label(3).unwrap(), 0);
        assert!(m.intra_label(1).is_err());
    }

    #[test]
    fn projector_output_dim_is_feature_dim() {
        let mut m = ExpandableModel::new(small(), 3).unwrap();
        for _ in 0..3 {
            m.expand(2).unwrap();
        }
        let x = Tensor::from_vec(2, 5, (0..10).map(|v| v as f64 / 10.0).collect()).unwrap();
        assert_eq!(m.project_old(&x).unwrap().shape(), (2, 3));
        assert_eq!(m.heads().tensor("proj.0.w").unwrap().cols(), 6);
    }

    #[test]
    fn zero_projector_gives_zero() {
        let mut m = ExpandableModel::new(small(), 3).unwrap();
        m.expand(2).unwrap();
        m.expand(2).unwrap();
        for n in ["proj.0.w", "proj.0.b", "proj.1.w", "proj.1.b"] {
            let p = m.param_mut(n).unwrap();
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_vec(1, 5, vec![1.0, -2.0, 0.5, 3.0, 0.1]).unwrap();
        assert_eq!(m.project_old(&x).unwrap().data(), &[0.0; 3]);
    }

    #[test]
    fn zero_intra_weights_give_uniform_prediction() {
        let mut m = ExpandableModel::new(small(), 3).unwrap();
        m.expand(4).unwrap();
        for n in ["intra.w", "intra.b"] {
            let p = m.param_mut(n).unwrap();
            p.value.data_mut().iter_mut().for_each(|v| *v = 0.0);
        }
        let x = Tensor::from_vec(1, 5, vec![1.0; 5]).unwrap();
        let logits = m.forward_intra(&x).unwrap();
        let mut g = Graph::new();
        let z = g.constant(logits);
        let l = g
            .softmax_cross_entropy(z, &[1], crate::autodiff::Reduction::Mean)
            .unwrap();
        assert!((g.scalar(l) - 4f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn input_dim_mismatch_is_input_error() {
        let mut m = ExpandableModel::new(small(), 3).unwrap();
        m.expand(2).unwrap();
        assert!(matches!(
            m.forward_concat(&Tensor::zeros(1, 4)),
            Err(Error::Input(_))
        ));
    }

    #[test]
    fn param_lookup_by_qualified_name() {
        let mut m = ExpandableModel::new(small(), 3).unwrap();
        m.expand(2).unwrap();
        assert!(m.param_mut("f0.l1.w").is_some());
        assert!(m.param_mut("cls.b").is_some());
        assert!(m.param_mut("f3.l0.w").is_none());
    }
}
