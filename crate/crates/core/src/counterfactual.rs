//! Dual-scope counterfactual features.
//!
//! * Intra-task: gradient ascent on the intra-task cross-entropy,
//!   `c̄ = ĉ + α·∇_ĉ ℓ_CE(W_intra·ĉ, y)`.
//! * Inter-task: a pull toward the projected frozen features,
//!   `c̄ = ĉ − β·∇_ĉ ‖ĉ − c̃‖² = ĉ − 2β(ĉ − c̃)`.
//!
//! Both are held inside a divergence ball `D(c̄, ĉ) ≤ ε` by halving the
//! step until it is feasible. Random and projected-gradient perturbers are
//! provided as baselines.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{kl_softmax_value, sorted_order, Graph, Reduction};
use crate::error::{config, Result};
use crate::model::Head;
use crate::tensor::{log_softmax, norm, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scope {
    Intra,
    Inter,
}

/// Which discrepancy bounds a counterfactual and regularizes training.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DivergenceKind {
    /// KL between softmax-normalized feature vectors.
    #[default]
    SoftmaxKl,
    /// KL between the predictive class distributions of the scope's head.
    PredictiveKl,
    /// Mean squared difference.
    Mse,
    /// 1-D Wasserstein distance between the coordinate value distributions.
    Wasserstein,
}

/// A divergence bound to the context it needs.
#[derive(Debug, Clone, Copy)]
pub enum Divergence<'a> {
    SoftmaxKl,
    Mse,
    Wasserstein,
    PredictiveKl {
        head: Head<'a>,
        prefix: Option<&'a [f64]>,
    },
}

impl<'a> Divergence<'a> {
    pub fn bind(kind: DivergenceKind, head: Head<'a>, prefix: Option<&'a [f64]>) -> Self {
        match kind {
            DivergenceKind::SoftmaxKl => Divergence::SoftmaxKl,
            DivergenceKind::Mse => Divergence::Mse,
            DivergenceKind::Wasserstein => Divergence::Wasserstein,
            DivergenceKind::PredictiveKl => Divergence::PredictiveKl { head, prefix },
        }
    }

    /// `D(counterfactual, factual)`.
    pub fn eval(&self, counterfactual: &[f64], factual: &[f64]) -> f64 {
        match self {
            Divergence::SoftmaxKl => kl_softmax_value(counterfactual, factual),
            Divergence::Mse => {
                counterfactual
                    .iter()
                    .zip(factual)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    / factual.len().max(1) as f64
            }
            Divergence::Wasserstein => wasserstein_values(counterfactual, factual),
            Divergence::PredictiveKl { head, prefix } => {
                let with_prefix = |c: &[f64]| match prefix {
                    Some(p) => p.iter().chain(c).copied().collect::<Vec<_>>(),
                    None => c.to_vec(),
                };
                let a = head.logits_row(&with_prefix(counterfactual));
                let b = head.logits_row(&with_prefix(factual));
                kl_softmax_value(&a, &b)
            }
        }
    }
}

/// Exact 1-D W₁ between the empirical distributions of two equal-length
/// samples (sorted coupling).
pub fn wasserstein_values(a: &[f64], b: &[f64]) -> f64 {
    let oa = sorted_order(a);
    let ob = sorted_order(b);
    oa.iter()
        .zip(&ob)
        .map(|(&i, &j)| (a[i] - b[j]).abs())
        .sum::<f64>()
        / a.len().max(1) as f64
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CfConfig {
    /// Intra-task step size on the raw loss gradient.
    pub alpha: f64,
    /// Inter-task pull strength.
    pub beta: f64,
    /// Divergence bound.
    pub epsilon: f64,
    pub divergence: DivergenceKind,
    pub max_halvings: u32,
    /// Bisection steps for projecting back onto the divergence ball.
    pub projection_steps: u32,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            alpha: 1.0,
            beta: 0.03,
            epsilon: 0.05,
            divergence: DivergenceKind::SoftmaxKl,
            max_halvings: 30,
            projection_steps: 10,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0) || !(self.beta > 0.0) || !(self.epsilon > 0.0) {
            return config("alpha, beta and epsilon must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CounterfactualSample {
    pub scope: Scope,
    pub factual: Vec<f64>,
    pub counterfactual: Vec<f64>,
    /// Signed displacement `counterfactual − factual`.
    pub delta: Vec<f64>,
    /// Step size actually used after backtracking (for PGD: displacement norm).
    pub applied_scale: f64,
    /// Divergence `D(counterfactual, factual)` under the configured metric.
    pub kl_value: f64,
    /// Set when no admissible non-trivial perturbation exists.
    pub degenerate: bool,
    /// Projected frozen-feature reference `c̃` (inter scope).
    pub reference: Option<Vec<f64>>,
    /// Frozen-feature prefix `z_old`, so `[prefix, c]` feeds the inter head.
    pub context: Option<Vec<f64>>,
    pub label: Option<usize>,
}

impl CounterfactualSample {
    fn degenerate(scope: Scope, factual: &[f64]) -> Self {
        CounterfactualSample {
            scope,
            factual: factual.to_vec(),
            counterfactual: factual.to_vec(),
            delta: vec![0.0; factual.len()],
            applied_scale: 0.0,
            kl_value: 0.0,
            degenerate: true,
            reference: None,
            context: None,
            label: None,
        }
    }
}

struct Step {
    point: Vec<f64>,
    scale: f64,
    value: f64,
}

fn along(factual: &[f64], direction: &[f64], s: f64) -> Vec<f64> {
    factual
        .iter()
        .zip(direction)
        .map(|(f, d)| f + s * d)
        .collect()
}

/// Halves `scale` until `D(f + scale·dir, f) ≤ ε`; `None` if it never is.
fn backtrack(
    factual: &[f64],
    direction: &[f64],
    mut scale: f64,
    epsilon: f64,
    max_halvings: u32,
    div: &Divergence,
) -> Option<Step> {
    for _ in 0..=max_halvings {
        let point = along(factual, direction, scale);
        let value = div.eval(&point, factual);
        if value <= epsilon {
            return Some(Step { point, scale, value });
        }
        scale *= 0.5;
    }
    None
}

fn finish(
    scope: Scope,
    factual: &[f64],
    direction: &[f64],
    scale: f64,
    epsilon: f64,
    max_halvings: u32,
    div: &Divergence,
) -> CounterfactualSample {
    if direction.iter().all(|&v| v == 0.0) {
        return CounterfactualSample::degenerate(scope, factual);
    }
    match backtrack(factual, direction, scale, epsilon, max_halvings, div) {
        Some(step) => CounterfactualSample {
            scope,
            factual: factual.to_vec(),
            delta: step.point.iter().zip(factual).map(|(c, f)| c - f).collect(),
            counterfactual: step.point,
            applied_scale: step.scale,
            kl_value: step.value,
            degenerate: false,
            reference: None,
            context: None,
            label: None,
        },
        None => CounterfactualSample::degenerate(scope, factual),
    }
}

/// Per-row `∇_ĉ ℓ_CE(head·ĉ, y)`, from one graph with summed loss.
pub fn intra_gradients(factuals: &Tensor, labels: &[usize], head: Head) -> Result<Tensor> {
    let mut g = Graph::new();
    let c = g.leaf(factuals.clone());
    let w = g.constant(head.weight.clone());
    let b = g.constant(head.bias.clone());
    let logits = g.linear(c, w, b)?;
    let loss = g.softmax_cross_entropy(logits, labels, Reduction::Sum)?;
    g.backward(loss)?;
    g.grad_wrt(c)
}

/// Intra-task counterfactual under the softmax-KL constraint.
pub fn gen_intra(
    factual: &[f64],
    label: usize,
    w_intra: Head,
    alpha: f64,
    epsilon: f64,
) -> Result<CounterfactualSample> {
    gen_intra_with(factual, label, w_intra, alpha, epsilon, &Divergence::SoftmaxKl, 30)
}

pub fn gen_intra_with(
    factual: &[f64],
    label: usize,
    w_intra: Head,
    alpha: f64,
    epsilon: f64,
    div: &Divergence,
    max_halvings: u32,
) -> Result<CounterfactualSample> {
    if !(alpha > 0.0) || !(epsilon > 0.0) {
        return config("gen_intra: alpha and epsilon must be positive");
    }
    let grad = intra_gradients(&Tensor::row_vector(factual), &[label], w_intra)?;
    let mut s = finish(
        Scope::Intra,
        factual,
        grad.row(0),
        alpha,
        epsilon,
        max_halvings,
        div,
    );
    s.label = Some(label);
    Ok(s)
}

/// Intra-task counterfactuals for a batch of features (one graph).
pub fn gen_intra_batch(
    factuals: &Tensor,
    labels: &[usize],
    w_intra: Head,
    cfg: &CfConfig,
) -> Result<Vec<CounterfactualSample>> {
    cfg.validate()?;
    let grads = intra_gradients(factuals, labels, w_intra)?;
    let div = Divergence::bind(cfg.divergence, w_intra, None);
    Ok((0..factuals.rows())
        .map(|r| {
            let mut s = finish(
                Scope::Intra,
                factuals.row(r),
                grads.row(r),
                cfg.alpha,
                cfg.epsilon,
                cfg.max_halvings,
                &div,
            );
            s.label = Some(labels[r]);
            s
        })
        .collect())
}

/// Inter-task counterfactual: pulls `ĉ` toward the projection `c̃`.
pub fn gen_inter(
    factual: &[f64],
    projected: &[f64],
    beta: f64,
    epsilon: f64,
) -> Result<CounterfactualSample> {
    gen_inter_with(factual, projected, beta, epsilon, &Divergence::SoftmaxKl, 30)
}

pub fn gen_inter_with(
    factual: &[f64],
    projected: &[f64],
    beta: f64,
    epsilon: f64,
    div: &Divergence,
    max_halvings: u32,
) -> Result<CounterfactualSample> {
    if !(beta > 0.0) || !(epsilon > 0.0) {
        return config("gen_inter: beta and epsilon must be positive");
    }
    if factual.len() != projected.len() {
        return config("gen_inter: factual and projected dimensions differ");
    }
    // c̄ = ĉ + β·(−∇‖ĉ − c̃‖²)
    let direction: Vec<f64> = factual
        .iter()
        .zip(projected)
        .map(|(f, p)| -2.0 * (f - p))
        .collect();
    let mut s = finish(
        Scope::Inter,
        factual,
        &direction,
        beta,
        epsilon,
        max_halvings,
        div,
    );
    s.reference = Some(projected.to_vec());
    Ok(s)
}

/// Inter-task counterfactuals for a batch. `z_old` rows are attached as
/// context so the inter head can score `[z_old, c̄]`.
pub fn gen_inter_batch(
    factuals: &Tensor,
    projected: &Tensor,
    z_old: &Tensor,
    labels: &[usize],
    w_inter: Head,
    cfg: &CfConfig,
) -> Result<Vec<CounterfactualSample>> {
    cfg.validate()?;
    (0..factuals.rows())
        .map(|r| {
            let div = Divergence::bind(cfg.divergence, w_inter, Some(z_old.row(r)));
            let mut s = gen_inter_with(
                factuals.row(r),
                projected.row(r),
                cfg.beta,
                cfg.epsilon,
                &div,
                cfg.max_halvings,
            )?;
            s.context = Some(z_old.row(r).to_vec());
            s.label = Some(labels[r]);
            Ok(s)
        })
        .collect()
}

/// Isotropic Gaussian direction, scaled to the largest step (to bisection
/// precision) whose divergence stays within `budget`.
pub fn perturb_random(
    factual: &[f64],
    budget: f64,
    rng: &mut impl Rng,
) -> Result<CounterfactualSample> {
    perturb_random_with(factual, budget, rng, &Divergence::SoftmaxKl)
}

pub fn perturb_random_with(
    factual: &[f64],
    budget: f64,
    rng: &mut impl Rng,
    div: &Divergence,
) -> Result<CounterfactualSample> {
    if !(budget > 0.0) {
        return config("perturb_random: budget must be positive");
    }
    let mut direction: Vec<f64> = (0..factual.len())
        .map(|_| rng.sample::<f64, _>(StandardNormal))
        .collect();
    let n = norm(&direction);
    if n == 0.0 {
        return Ok(CounterfactualSample::degenerate(Scope::Intra, factual));
    }
    direction.iter_mut().for_each(|v| *v /= n);
    let feasible = |s: f64| div.eval(&along(factual, &direction, s), factual) <= budget;

    let mut hi = norm(factual).max(1.0);
    let mut grown = 0;
    while feasible(hi) && grown < 60 {
        hi *= 2.0;
        grown += 1;
    }
    let mut lo = 0.0;
    if feasible(hi) {
        lo = hi;
    } else {
        let mut s = hi;
        for _ in 0..=60 {
            s *= 0.5;
            if feasible(s) {
                lo = s;
                break;
            }
            hi = s;
        }
        if lo > 0.0 {
            for _ in 0..50 {
                let mid = 0.5 * (lo + hi);
                if feasible(mid) {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
        }
    }
    if lo == 0.0 {
        return Ok(CounterfactualSample::degenerate(Scope::Intra, factual));
    }
    let point = along(factual, &direction, lo);
    let value = div.eval(&point, factual);
    Ok(CounterfactualSample {
        scope: Scope::Intra,
        factual: factual.to_vec(),
        delta: point.iter().zip(factual).map(|(c, f)| c - f).collect(),
        counterfactual: point,
        applied_scale: lo,
        kl_value: value,
        degenerate: false,
        reference: None,
        context: None,
        label: None,
    })
}

/// Iterated gradient ascent on `ℓ_CE` with projection back onto the
/// divergence ball (bisection along the segment to the factual point).
#[allow(clippy::too_many_arguments)]
pub fn perturb_pgd(
    factual: &[f64],
    label: usize,
    w_intra: Head,
    steps: usize,
    step_size: f64,
    budget: f64,
) -> Result<CounterfactualSample> {
    perturb_pgd_with(
        factual,
        label,
        w_intra,
        steps,
        step_size,
        budget,
        &Divergence::SoftmaxKl,
        10,
    )
}

#[allow(clippy::too_many_arguments)]
pub fn perturb_pgd_with(
    factual: &[f64],
    label: usize,
    w_intra: Head,
    steps: usize,
    step_size: f64,
    budget: f64,
    div: &Divergence,
    projection_steps: u32,
) -> Result<CounterfactualSample> {
    if steps == 0 {
        return config("perturb_pgd: steps must be at least 1");
    }
    if !(step_size > 0.0) || !(budget > 0.0) {
        return config("perturb_pgd: step_size and budget must be positive");
    }
    let mut current = factual.to_vec();
    for _ in 0..steps {
        let g = intra_gradients(&Tensor::row_vector(&current), &[label], w_intra)?;
        if g.data().iter().all(|&v| v == 0.0) {
            break;
        }
        let mut next = along(&current, g.row(0), step_size);
        if div.eval(&next, factual) > budget {
            let (mut lo, mut hi) = (0.0, 1.0);
            for _ in 0..projection_steps {
                let mid = 0.5 * (lo + hi);
                let probe: Vec<f64> = factual
                    .iter()
                    .zip(&next)
                    .map(|(f, n)| f + mid * (n - f))
                    .collect();
                if div.eval(&probe, factual) <= budget {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            next = factual
                .iter()
                .zip(&next)
                .map(|(f, n)| f + lo * (n - f))
                .collect();
        }
        current = next;
    }
    let delta: Vec<f64> = current.iter().zip(factual).map(|(c, f)| c - f).collect();
    if delta.iter().all(|&v| v == 0.0) {
        let mut s = CounterfactualSample::degenerate(Scope::Intra, factual);
        s.label = Some(label);
        return Ok(s);
    }
    Ok(CounterfactualSample {
        scope: Scope::Intra,
        factual: factual.to_vec(),
        applied_scale: norm(&delta),
        kl_value: div.eval(&current, factual),
        counterfactual: current,
        delta,
        degenerate: false,
        reference: None,
        context: None,
        label: Some(label),
    })
}

/// Log-probability of `label` under `head` (helper for diagnostics).
pub fn log_prob(head: Head, features: &[f64], label: usize) -> f64 {
    log_softmax(&head.logits_row(features))[label]
}
