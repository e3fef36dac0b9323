//! Evaluation instruments: incremental accuracy, Old→New error by semantic
//! overlap, linear CKA, factor-masking curves, counterfactual quality and a
//! 1-D Wasserstein distance.

use serde::{Deserialize, Serialize};

use crate::autodiff::Graph;
use crate::counterfactual::{CounterfactualSample, Scope};
use crate::data::{Dataset, FactorTag};
use crate::error::{config, input, usage, Result};
use crate::model::{ExpandableModel, TaskRange};
use crate::params::Bindings;
use crate::risk::CpnsReport;
use crate::tensor::{argmax, cosine, Tensor};

pub fn accuracy(model: &ExpandableModel, ds: &Dataset) -> Result<f64> {
    if ds.is_empty() {
        return Ok(0.0);
    }
    let pred = model.predict(&ds.x)?;
    let hits = pred.iter().zip(&ds.y).filter(|(p, y)| p == y).count();
    Ok(hits as f64 / ds.len() as f64)
}

/// `(last, avg)` from the accuracies measured after each stage.
pub fn incremental_accuracy(history: &[f64]) -> Result<(f64, f64)> {
    match history.last() {
        None => input("empty accuracy history"),
        Some(&last) => Ok((last, history.iter().sum::<f64>() / history.len() as f64)),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverlapGroup {
    pub classes: Vec<usize>,
    pub mean_overlap: f64,
    pub samples: usize,
    pub rate: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OldNewErrors {
    pub low: OverlapGroup,
    pub medium: OverlapGroup,
    pub high: OverlapGroup,
}

/// Fraction of old-class test samples predicted into `new_range`, with old
/// classes grouped into overlap tertiles. A class's overlap is its largest
/// prototype cosine to any new class.
pub fn old_new_error(
    model: &ExpandableModel,
    old_test: &Dataset,
    new_range: TaskRange,
    prototypes: &[Vec<f64>],
) -> Result<OldNewErrors> {
    if model.current_task()? == 0 {
        return usage("Old→New error needs at least one earlier task");
    }
    if prototypes.len() < new_range.end() {
        return input("missing class prototypes");
    }
    let mut old: Vec<usize> = old_test.y.clone();
    old.sort_unstable();
    old.dedup();
    if let Some(c) = old.iter().find(|&&c| new_range.contains(c)) {
        return input(format!("class {c} is in the new range"));
    }
    let mut scored: Vec<(f64, usize)> = old
        .iter()
        .map(|&c| {
            let o = (new_range.offset..new_range.end())
                .map(|n| cosine(&prototypes[c], &prototypes[n]))
                .fold(f64::NEG_INFINITY, f64::max);
            (o, c)
        })
        .collect();
    scored.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let pred = if old_test.is_empty() {
        Vec::new()
    } else {
        model.predict(&old_test.x)?
    };
    let n = scored.len();
    let mut groups: Vec<OverlapGroup> = (0..3)
        .map(|_| OverlapGroup {
            classes: Vec::new(),
            mean_overlap: 0.0,
            samples: 0,
            rate: 0.0,
        })
        .collect();
    for (rank, &(o, c)) in scored.iter().enumerate() {
        let g = &mut groups[(3 * rank / n.max(1)).min(2)];
        g.classes.push(c);
        g.mean_overlap += o;
    }
    for g in groups.iter_mut() {
        let mut hits = 0;
        for (p, y) in pred.iter().zip(&old_test.y) {
            if g.classes.contains(y) {
                g.samples += 1;
                if new_range.contains(*p) {
                    hits += 1;
                }
            }
        }
        if !g.classes.is_empty() {
            g.mean_overlap /= g.classes.len() as f64;
        }
        if g.samples > 0 {
            g.rate = hits as f64 / g.samples as f64;
        }
    }
    let high = groups.pop().expect("3 groups");
    let medium = groups.pop().expect("3 groups");
    let low = groups.pop().expect("3 groups");
    Ok(OldNewErrors { low, medium, high })
}

fn centered(x: &Tensor) -> Tensor {
    let (n, d) = x.shape();
    let mut out = x.clone();
    for j in 0..d {
        let mean = (0..n).map(|i| x.get(i, j)).sum::<f64>() / n as f64;
        for i in 0..n {
            out.set(i, j, x.get(i, j) - mean);
        }
    }
    out
}

/// `‖AᵀB‖_F²` for row-aligned `A` (n×p) and `B` (n×q).
fn cross_frob2(a: &Tensor, b: &Tensor) -> f64 {
    let mut total = 0.0;
    for i in 0..a.cols() {
        for j in 0..b.cols() {
            let s: f64 = (0..a.rows()).map(|r| a.get(r, i) * b.get(r, j)).sum();
            total += s * s;
        }
    }
    total
}

/// Linear CKA on column-centered activations. Zero-variance input yields 0.
pub fn linear_cka(x: &Tensor, y: &Tensor) -> Result<f64> {
    if x.rows() != y.rows() {
        return input("CKA inputs need the same number of rows");
    }
    if x.rows() < 2 {
        return input("CKA needs at least two samples");
    }
    let xc = centered(x);
    let yc = centered(y);
    let xx = cross_frob2(&xc, &xc).sqrt();
    let yy = cross_frob2(&yc, &yc).sqrt();
    if xx == 0.0 || yy == 0.0 {
        log::warn!("linear CKA on a zero-variance input; reporting 0");
        return Ok(0.0);
    }
    Ok((cross_frob2(&yc, &xc) / (xx * yy)).clamp(0.0, 1.0))
}

/// Per-layer CKA between extractors `a` and `b` on the same inputs.
pub fn cka_between_extractors(model: &ExpandableModel, a: usize, b: usize, x: &Tensor) -> Result<Vec<(usize, f64)>> {
    let ex = model.extractors();
    let (ea, eb) = match (ex.get(a), ex.get(b)) {
        (Some(ea), Some(eb)) => (ea, eb),
        _ => return usage("extractor index out of range"),
    };
    let la = ea.activations(x)?;
    let lb = eb.activations(x)?;
    la.iter()
        .zip(&lb)
        .enumerate()
        .map(|(i, (u, v))| Ok((i, linear_cka(u, v)?)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MaskingCurve {
    pub points: Vec<(usize, f64)>,
    pub avg_drop: f64,
}

/// Average accuracy lost per masked factor between the first and last `k`.
/// With consecutive `k` this is the mean of the step-to-step decrements.
pub fn avg_drop(points: &[(usize, f64)]) -> f64 {
    match (points.first(), points.last()) {
        (Some(&(k0, a0)), Some(&(k1, a1))) if k1 > k0 => (a0 - a1) / (k1 - k0) as f64,
        _ => 0.0,
    }
}

/// `∂ logit_y / ∂x` for every row, through every extractor and `cls`.
pub fn input_saliency(model: &ExpandableModel, x: &Tensor, labels: &[usize]) -> Result<Tensor> {
    let mut g = Graph::new();
    let mut b = Bindings::new();
    let xn = g.leaf(x.clone());
    let mut feats = Vec::new();
    for i in 0..model.num_tasks() {
        feats.push(model.build_extractor(&mut g, &mut b, i, xn, false)?);
    }
    let z = if feats.len() == 1 {
        feats[0]
    } else {
        g.concat_cols(&feats)?
    };
    let logits = model.build_head(&mut g, &mut b, "cls", z, false)?;
    let mut onehot = Tensor::zeros(x.rows(), model.num_classes());
    for (r, &y) in labels.iter().enumerate() {
        onehot.set(r, y, 1.0);
    }
    let oh = g.constant(onehot);
    let picked = g.mul(logits, oh)?;
    let s = g.sum(picked)?;
    g.backward(s)?;
    g.grad_wrt(xn)
}

/// Accuracy after zeroing each sample's top-`k` causal input dimensions,
/// ranked by saliency magnitude.
pub fn masking_curve(
    model: &ExpandableModel,
    test: &Dataset,
    factors: &[FactorTag],
    ks: &[usize],
) -> Result<MaskingCurve> {
    if factors.len() != test.dims() {
        return config("factor annotations do not match the input width");
    }
    if ks.is_empty() || ks.windows(2).any(|w| w[0] >= w[1]) {
        return config("ks must be non-empty and strictly increasing");
    }
    let causal: Vec<usize> = (0..factors.len()).filter(|&i| factors[i].is_causal()).collect();
    if *ks.last().expect("non-empty") > causal.len() {
        return config(format!(
            "k = {} exceeds the {} annotated causal dimensions",
            ks.last().expect("non-empty"),
            causal.len()
        ));
    }
    if test.is_empty() {
        return input("empty test set");
    }
    let sal = input_saliency(model, &test.x, &test.y)?;
    let ranked: Vec<Vec<usize>> = (0..test.len())
        .map(|r| {
            let mut dims = causal.clone();
            // stable sort keeps lower dimensions first on ties
            dims.sort_by(|&a, &b| sal.get(r, b).abs().total_cmp(&sal.get(r, a).abs()));
            dims
        })
        .collect();
    let mut points = Vec::with_capacity(ks.len());
    for &k in ks {
        let mut x = test.x.clone();
        for (r, dims) in ranked.iter().enumerate() {
            for &d in &dims[..k] {
                x.set(r, d, 0.0);
            }
        }
        let masked = Dataset {
            x,
            y: test.y.clone(),
            num_classes: test.num_classes,
        };
        points.push((k, accuracy(model, &masked)?));
    }
    Ok(MaskingCurve {
        avg_drop: avg_drop(&points),
        points,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CfQuality {
    pub pfr: f64,
    pub lkld: f64,
    pub hss: Option<f64>,
}

fn with_context(s: &CounterfactualSample, c: &[f64]) -> Vec<f64> {
    match &s.context {
        Some(p) => p.iter().chain(c).copied().collect(),
        None => c.to_vec(),
    }
}

/// Prediction flip rate, mean divergence, and (for inter samples) mean
/// cosine to the projected frozen-feature reference.
pub fn counterfactual_quality(samples: &[CounterfactualSample], model: &ExpandableModel) -> Result<CfQuality> {
    if samples.is_empty() {
        return input("no counterfactual samples");
    }
    let intra = model.intra_head()?;
    let mut flips = 0;
    for s in samples {
        let head = match s.scope {
            Scope::Intra => intra,
            Scope::Inter => model.inter_head()?,
        };
        let f = argmax(&head.logits_row(&with_context(s, &s.factual)));
        let c = argmax(&head.logits_row(&with_context(s, &s.counterfactual)));
        if f != c {
            flips += 1;
        }
    }
    let n = samples.len() as f64;
    let hss = if samples.iter().any(|s| s.reference.is_some()) {
        Some(historical_similarity(samples, false)?)
    } else {
        None
    };
    Ok(CfQuality {
        pfr: flips as f64 / n,
        lkld: samples.iter().map(|s| s.kl_value).sum::<f64>() / n,
        hss,
    })
}

/// Mean cosine to the reference over samples that carry one; `factual`
/// scores the unperturbed features instead (the comparison baseline).
pub fn historical_similarity(samples: &[CounterfactualSample], factual: bool) -> Result<f64> {
    let vals: Vec<f64> = samples
        .iter()
        .filter_map(|s| {
            s.reference.as_ref().map(|r| {
                let v = if factual { &s.factual } else { &s.counterfactual };
                cosine(v, r)
            })
        })
        .collect();
    if vals.is_empty() {
        return usage("HSS needs inter-scope samples with projected references");
    }
    Ok(vals.iter().sum::<f64>() / vals.len() as f64)
}

/// Exact W₁ between two 1-D empirical distributions (quantile coupling;
/// sizes may differ).
pub fn wasserstein_1d(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.is_empty() || b.is_empty() {
        return input("wasserstein_1d needs non-empty samples");
    }
    let mut sa = a.to_vec();
    let mut sb = b.to_vec();
    sa.sort_by(f64::total_cmp);
    sb.sort_by(f64::total_cmp);
    if sa.len() == sb.len() {
        let s: f64 = sa.iter().zip(&sb).map(|(x, y)| (x - y).abs()).sum();
        return Ok(s / sa.len() as f64);
    }
    let (n, m) = (sa.len(), sb.len());
    let (mut i, mut j) = (0, 0);
    let mut u = 0.0;
    let mut total = 0.0;
    while i < n && j < m {
        let ua = (i + 1) as f64 / n as f64;
        let ub = (j + 1) as f64 / m as f64;
        let next = ua.min(ub);
        total += (next - u) * (sa[i] - sb[j]).abs();
        u = next;
        if ua <= next {
            i += 1;
        }
        if ub <= next {
            j += 1;
        }
    }
    Ok(total)
}

/// W₁ per column, averaged over columns.
pub fn sliced_wasserstein(a: &Tensor, b: &Tensor) -> Result<f64> {
    if a.cols() != b.cols() || a.cols() == 0 {
        return input("sliced_wasserstein needs matching non-zero widths");
    }
    let col = |t: &Tensor, j: usize| (0..t.rows()).map(|i| t.get(i, j)).collect::<Vec<_>>();
    let mut total = 0.0;
    for j in 0..a.cols() {
        total += wasserstein_1d(&col(a, j), &col(b, j))?;
    }
    Ok(total / a.cols() as f64)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub task_index: usize,
    pub task_accuracies: Vec<f64>,
    pub last_acc: f64,
    pub avg_acc: f64,
    pub old_new_errors: Option<OldNewErrors>,
    pub cka_by_layer: Vec<(usize, f64)>,
    pub masking_curve: Option<MaskingCurve>,
    pub cf_quality: Option<CfQuality>,
    pub cpns_report: CpnsReport,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn incremental_accuracy_arithmetic() {
        assert_eq!(incremental_accuracy(&[0.9]).unwrap(), (0.9, 0.9));
        let (l, a) = incremental_accuracy(&[0.8, 0.6]).unwrap();
        assert_eq!(l, 0.6);
        assert!((a - 0.7).abs() < 1e-15);
        assert!(incremental_accuracy(&[]).is_err());
    }

    #[test]
    fn cka_identity_and_zero_variance() {
        let x = Tensor::from_rows(&[[1.0, 2.0], [0.5, -1.0], [3.0, 0.0]]).unwrap();
        assert!((linear_cka(&x, &x).unwrap() - 1.0).abs() < 1e-12);
        let z = Tensor::from_rows(&[[1.0], [1.0], [1.0]]).unwrap();
        assert_eq!(linear_cka(&x, &z).unwrap(), 0.0);
    }

    #[test]
    #[allow(clippy::approx_constant)]
    fn reference_avg_drops() {
        let rows = [
            ([52.88, 40.52, 32.15, 25.33, 17.65], 7.05),
            ([56.52, 46.21, 39.14, 33.25, 25.12], 6.28),
            ([54.37, 43.12, 35.41, 28.85, 20.34], 6.81),
            ([56.13, 47.05, 40.32, 34.81, 27.45], 5.74),
        ];
        for (accs, drop) in rows {
            let pts: Vec<_> = [0, 1, 2, 3, 5].into_iter().zip(accs).collect();
            assert!((avg_drop(&pts) - drop).abs() < 0.005, "{}", avg_drop(&pts));
        }
    }

    #[test]
    fn wasserstein_translation_and_identity() {
        let a = [0.3, -1.0, 2.5, 0.0];
        let b: Vec<f64> = a.iter().map(|v| v + 0.75).collect();
        assert_eq!(wasserstein_1d(&a, &a).unwrap(), 0.0);
        assert!((wasserstein_1d(&a, &b).unwrap() - 0.75).abs() < 1e-15);
        // unequal sizes: {0} vs {0, 1} → 0.5
        assert!((wasserstein_1d(&[0.0], &[0.0, 1.0]).unwrap() - 0.5).abs() < 1e-15);
    }
}
