//! Empirical CPNS risk, monotonicity violations and interventional PNS
//! estimates (all indicator-based), plus the differentiable surrogates the
//! trainer optimizes.
//!
//! Per sample, two 0/1 indicators are recorded:
//! * sufficiency violation — the factual representation predicts wrongly;
//! * necessity violation — the counterfactual still predicts the label
//!   (degenerate counterfactuals always count as violations).
//!
//! `R̂ = mean(suff) + mean(nec)` per scope and `M̂ = mean(suff · nec)`,
//! so `M̂ ≤ R̂` holds sample by sample.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, NodeId, Reduction};
use crate::counterfactual::{gen_inter_batch, gen_intra_batch, CfConfig, CounterfactualSample, Scope};
use crate::data::Batch;
use crate::error::{input, usage, Error, Result};
use crate::model::{ExpandableModel, Head};
use crate::tensor::{argmax, softmax, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct CpnsReport {
    pub r_intra: f64,
    pub r_inter: f64,
    pub r_total: f64,
    pub m_intra: f64,
    pub m_inter: f64,
    pub m_total: f64,
    pub pns_intra_est: f64,
    pub pns_inter_est: f64,
    pub n_intra: usize,
    pub n_inter: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Indicators {
    pub sufficiency_violation: bool,
    pub necessity_violation: bool,
    pub factual_correct: bool,
    /// Literal prediction on the counterfactual (no degeneracy override).
    pub counterfactual_correct: bool,
}

impl Indicators {
    pub fn evaluate(head: Head, factual: &[f64], counterfactual: &[f64], degenerate: bool, label: usize) -> Self {
        let fc = head.predict_row(factual) == label;
        let cc = head.predict_row(counterfactual) == label;
        Indicators {
            sufficiency_violation: !fc,
            necessity_violation: cc || degenerate,
            factual_correct: fc,
            counterfactual_correct: cc,
        }
    }
}

#[derive(Debug, Clone, Copy, Default)]
struct ScopeStats {
    r: f64,
    m: f64,
    pns: f64,
    n: usize,
}

fn scope_stats(ind: &[Indicators]) -> ScopeStats {
    if ind.is_empty() {
        return ScopeStats::default();
    }
    let n = ind.len() as f64;
    // fixed index-order counting keeps the result schedule independent
    let count = |f: &dyn Fn(&Indicators) -> bool| ind.iter().filter(|i| f(i)).count() as f64;
    let suff = count(&|i| i.sufficiency_violation);
    let nec = count(&|i| i.necessity_violation);
    let both = count(&|i| i.sufficiency_violation && i.necessity_violation);
    let fc = count(&|i| i.factual_correct);
    let cc = count(&|i| i.counterfactual_correct);
    ScopeStats {
        r: suff / n + nec / n,
        m: both / n,
        pns: fc / n - cc / n,
        n: ind.len(),
    }
}

impl CpnsReport {
    pub fn from_indicators(intra: &[Indicators], inter: &[Indicators]) -> Self {
        let a = scope_stats(intra);
        let e = scope_stats(inter);
        CpnsReport {
            r_intra: a.r,
            r_inter: e.r,
            r_total: a.r + e.r,
            m_intra: a.m,
            m_inter: e.m,
            m_total: a.m + e.m,
            pns_intra_est: a.pns,
            pns_inter_est: e.pns,
            n_intra: a.n,
            n_inter: e.n,
        }
    }
}

/// `M̂_CPNS ≤ R̂_CPNS`. Always true for reports built here.
pub fn check_risk_bound(report: &CpnsReport) -> bool {
    report.m_total <= report.r_total
}

pub fn assert_risk_bound(report: &CpnsReport) -> Result<()> {
    if check_risk_bound(report) {
        Ok(())
    } else {
        Err(Error::Invariant(format!(
            "monotonicity violation {} exceeds CPNS risk {}",
            report.m_total, report.r_total
        )))
    }
}

/// Intra-scope indicators from precomputed current-task features and
/// within-task labels.
pub fn intra_indicators(
    features: &Tensor,
    local_labels: &[usize],
    w_intra: Head,
    cfg: &CfConfig,
) -> Result<(Vec<Indicators>, Vec<CounterfactualSample>)> {
    let samples = gen_intra_batch(features, local_labels, w_intra, cfg)?;
    let ind = samples
        .iter()
        .zip(local_labels)
        .map(|(s, &y)| Indicators::evaluate(w_intra, &s.factual, &s.counterfactual, s.degenerate, y))
        .collect();
    Ok((ind, samples))
}

fn concat_row(prefix: &[f64], c: &[f64]) -> Vec<f64> {
    prefix.iter().chain(c).copied().collect()
}

/// Inter-scope indicators on `[z_old, c]` versus `[z_old, c̄_inter]`.
pub fn inter_indicators(
    z_old: &Tensor,
    current: &Tensor,
    projected: &Tensor,
    labels: &[usize],
    w_inter: Head,
    cfg: &CfConfig,
) -> Result<(Vec<Indicators>, Vec<CounterfactualSample>)> {
    let samples = gen_inter_batch(current, projected, z_old, labels, w_inter, cfg)?;
    let ind = samples
        .iter()
        .enumerate()
        .map(|(r, s)| {
            let zf = concat_row(z_old.row(r), &s.factual);
            let zc = concat_row(z_old.row(r), &s.counterfactual);
            Indicators::evaluate(w_inter, &zf, &zc, s.degenerate, labels[r])
        })
        .collect();
    Ok((ind, samples))
}

fn local_labels(model: &ExpandableModel, y: &[usize]) -> Result<Vec<usize>> {
    y.iter().map(|&l| model.intra_label(l)).collect()
}

fn stack(a: Batch, b: Option<Batch>) -> Result<(Tensor, Vec<usize>)> {
    let mut data = a.x.data().to_vec();
    let mut y = a.y.to_vec();
    if let Some(b) = b {
        if b.x.cols() != a.x.cols() {
            return input("buffer and current batches differ in width");
        }
        data.extend_from_slice(b.x.data());
        y.extend_from_slice(b.y);
    }
    Ok((Tensor::from_vec(y.len(), a.x.cols(), data)?, y))
}

/// Indicators for both scopes. Inter terms cover current ∪ buffer and are
/// empty at the first task.
pub fn cpns_indicators(
    model: &ExpandableModel,
    current: Batch,
    buffer: Option<Batch>,
    cfg: &CfConfig,
) -> Result<(Vec<Indicators>, Vec<Indicators>)> {
    if current.is_empty() {
        return input("empty current-task batch");
    }
    let t = model.current_task()?;
    let c = model.current_features(current.x)?;
    let (intra, _) = intra_indicators(&c, &local_labels(model, current.y)?, model.intra_head()?, cfg)?;
    let inter = if t == 0 {
        Vec::new()
    } else {
        let (x, y) = stack(current, buffer.filter(|b| !b.is_empty()))?;
        let z_old = model.old_features(&x)?;
        let cur = model.current_features(&x)?;
        let proj = model.project(&z_old)?;
        inter_indicators(&z_old, &cur, &proj, &y, model.inter_head()?, cfg)?.0
    };
    Ok((intra, inter))
}

pub fn empirical_cpns_risk(
    model: &ExpandableModel,
    current: Batch,
    buffer: Option<Batch>,
    cfg: &CfConfig,
) -> Result<CpnsReport> {
    let (intra, inter) = cpns_indicators(model, current, buffer, cfg)?;
    let report = CpnsReport::from_indicators(&intra, &inter);
    assert_risk_bound(&report)?;
    Ok(report)
}

/// `(M̂_intra, M̂_inter)`.
pub fn monotonicity_violation(
    model: &ExpandableModel,
    current: Batch,
    buffer: Option<Batch>,
    cfg: &CfConfig,
) -> Result<(f64, f64)> {
    let r = empirical_cpns_risk(model, current, buffer, cfg)?;
    Ok((r.m_intra, r.m_inter))
}

/// Accuracy under the factual representation minus accuracy under the
/// generated counterfactual, over `eval`.
pub fn estimate_pns_interventional(
    model: &ExpandableModel,
    eval: Batch,
    scope: Scope,
    cfg: &CfConfig,
) -> Result<f64> {
    if eval.is_empty() {
        return input("empty evaluation set");
    }
    let ind = match scope {
        Scope::Intra => {
            let c = model.current_features(eval.x)?;
            intra_indicators(&c, &local_labels(model, eval.y)?, model.intra_head()?, cfg)?.0
        }
        Scope::Inter => {
            if model.current_task()? == 0 {
                return usage("inter-task PNS needs at least one frozen extractor");
            }
            let z_old = model.old_features(eval.x)?;
            let cur = model.current_features(eval.x)?;
            let proj = model.project(&z_old)?;
            inter_indicators(&z_old, &cur, &proj, eval.y, model.inter_head()?, cfg)?.0
        }
    };
    let s = scope_stats(&ind);
    Ok(s.pns)
}

/// `ℓ_CE(logits_f, y) + ν·(−log(1 − p_y(logits_cf) + δ))`, reduced over rows.
pub fn surrogate_terms(
    g: &mut Graph,
    logits_factual: NodeId,
    logits_counterfactual: NodeId,
    labels: &[usize],
    nu: f64,
    reduction: Reduction,
) -> Result<NodeId> {
    let ce = g.softmax_cross_entropy(logits_factual, labels, reduction)?;
    if nu == 0.0 {
        return Ok(ce);
    }
    let nec = g.neg_log_complement(logits_counterfactual, labels, reduction)?;
    let nec = g.scale(nec, nu)?;
    g.add(ce, nec)
}

fn surrogate_value(head: Head, factual: &[f64], counterfactual: &[f64], label: usize, nu: f64) -> Result<f64> {
    if factual.len() != head.in_dim() || counterfactual.len() != head.in_dim() {
        return input("feature width does not match the head");
    }
    if label >= head.classes() {
        return input(format!("label {label} out of range"));
    }
    let lf = head.logits_row(factual);
    let lc = head.logits_row(counterfactual);
    let ce = -crate::tensor::log_softmax(&lf)[label];
    let p = softmax(&lc)[label];
    Ok(ce + nu * -(1.0 - p + crate::autodiff::COMPLEMENT_DELTA).ln())
}

/// Scalar intra surrogate for one sample.
pub fn surrogate_intra_loss(
    factual: &[f64],
    counterfactual: &[f64],
    label: usize,
    w_intra: Head,
    nu: f64,
) -> Result<f64> {
    surrogate_value(w_intra, factual, counterfactual, label, nu)
}

/// Scalar inter surrogate on concatenated representations; needs `t ≥ 1`.
pub fn surrogate_inter_loss(
    model: &ExpandableModel,
    z_factual: &[f64],
    z_counterfactual: &[f64],
    label: usize,
    nu: f64,
) -> Result<f64> {
    if model.current_task()? == 0 {
        return usage("inter-task surrogate is undefined at the first task");
    }
    surrogate_value(model.inter_head()?, z_factual, z_counterfactual, label, nu)
}

/// Convenience: the factual prediction of a head on one row.
pub fn predict(head: Head, features: &[f64]) -> usize {
    argmax(&head.logits_row(features))
}
