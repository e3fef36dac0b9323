#![allow(dead_code)]

use cpnslab::autodiff::{Graph, NodeId, Reduction};
use cpnslab::model::{ExpandableModel, ModelConfig};
use cpnslab::tensor::Tensor;
use cpnslab::Result;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor(rng: &mut impl Rng, rows: usize, cols: usize, scale: f64) -> Tensor {
    let data = (0..rows * cols).map(|_| rng.random_range(-scale..scale)).collect();
    Tensor::from_vec(rows, cols, data).unwrap()
}

/// Builds a scalar from leaf inputs.
pub type Builder<'a> = dyn Fn(&mut Graph, &[NodeId]) -> Result<NodeId> + 'a;

fn eval(inputs: &[Tensor], build: &Builder) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = build(&mut g, &ids).unwrap();
    g.scalar(root)
}

/// Largest relative error between reverse-mode and central finite
/// differences over every input entry.
pub fn max_fd_error(inputs: &[Tensor], build: &Builder, h: f64) -> f64 {
    let mut g = Graph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone())).collect();
    let root = build(&mut g, &ids).unwrap();
    g.backward(root).unwrap();
    let analytic: Vec<Tensor> = ids.iter().map(|&i| g.grad_wrt(i).unwrap()).collect();

    let mut worst: f64 = 0.0;
    for (k, t) in inputs.iter().enumerate() {
        for j in 0..t.len() {
            let mut plus = inputs.to_vec();
            plus[k].data_mut()[j] += h;
            let mut minus = inputs.to_vec();
            minus[k].data_mut()[j] -= h;
            let numeric = (eval(&plus, build) - eval(&minus, build)) / (2.0 * h);
            let a = analytic[k].data()[j];
            let denom = a.abs().max(numeric.abs()).max(1e-6);
            worst = worst.max((a - numeric).abs() / denom);
        }
    }
    worst
}

/// Weighted sum `Σ r ⊙ node` so non-scalar ops can be checked.
pub fn contract(g: &mut Graph, node: NodeId, weights: &Tensor) -> Result<NodeId> {
    let w = g.constant(weights.clone());
    let m = g.mul(node, w)?;
    g.sum(m)
}

pub fn labels(rng: &mut impl Rng, n: usize, classes: usize) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..classes)).collect()
}

/// The differentiable operations covered by the gradient-fidelity suite.
pub const OPS: [&str; 7] = [
    "linear",
    "relu",
    "softmax_ce",
    "kl_softmax",
    "neg_log_complement",
    "surrogate_intra",
    "surrogate_inter",
];

/// Worst finite-difference error over `configs` random instances of `op`.
pub fn fd_suite(op: &str, configs: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for seed in 0..configs {
        let mut r = rng(seed.wrapping_mul(7919) ^ op.len() as u64);
        let n = r.random_range(1..5);
        let d = r.random_range(1..6);
        let k = r.random_range(2..5);
        let err = match op {
            "linear" => {
                let inputs = [
                    random_tensor(&mut r, n, d, 2.0),
                    random_tensor(&mut r, k, d, 2.0),
                    random_tensor(&mut r, 1, k, 2.0),
                ];
                let wts = random_tensor(&mut r, n, k, 1.0);
                max_fd_error(
                    &inputs,
                    &|g, ids| {
                        let y = g.linear(ids[0], ids[1], ids[2])?;
                        contract(g, y, &wts)
                    },
                    1e-5,
                )
            }
            "relu" => {
                // keep every entry at least 0.1 away from the kink
                let mut x = random_tensor(&mut r, n, d, 2.0);
                for v in x.data_mut() {
                    if v.abs() < 0.1 {
                        *v += 0.2_f64.copysign(*v);
                    }
                }
                let wts = random_tensor(&mut r, n, d, 1.0);
                max_fd_error(
                    &[x],
                    &|g, ids| {
                        let y = g.relu(ids[0])?;
                        contract(g, y, &wts)
                    },
                    1e-5,
                )
            }
            "softmax_ce" => {
                let y = labels(&mut r, n, k);
                let red = if r.random::<bool>() { Reduction::Mean } else { Reduction::Sum };
                max_fd_error(
                    &[random_tensor(&mut r, n, k, 3.0)],
                    &|g, ids| g.softmax_cross_entropy(ids[0], &y, red),
                    1e-5,
                )
            }
            "kl_softmax" => {
                let a = random_tensor(&mut r, n, k, 2.0);
                let b = random_tensor(&mut r, n, k, 2.0);
                max_fd_error(&[a, b], &|g, ids| g.kl_softmax(ids[0], ids[1], Reduction::Mean), 1e-5)
            }
            "neg_log_complement" => {
                let y = labels(&mut r, n, k);
                max_fd_error(
                    &[random_tensor(&mut r, n, k, 2.0)],
                    &|g, ids| g.neg_log_complement(ids[0], &y, Reduction::Sum),
                    1e-5,
                )
            }
            "surrogate_intra" | "surrogate_inter" => {
                // features, head weight and bias are differentiated; the
                // counterfactual displacement is a constant (straight-through)
                let width = if op == "surrogate_inter" { 2 * d } else { d };
                let y = labels(&mut r, n, k);
                let delta = random_tensor(&mut r, n, d, 0.5);
                let nu = r.random_range(0.1..2.0);
                let inputs = [
                    random_tensor(&mut r, n, d, 1.5),
                    random_tensor(&mut r, n, width - d, 1.5),
                    random_tensor(&mut r, k, width, 1.5),
                    random_tensor(&mut r, 1, k, 1.5),
                ];
                let inter = op == "surrogate_inter";
                max_fd_error(
                    &inputs,
                    &|g, ids| {
                        let dl = g.constant(delta.clone());
                        let cf = g.add(ids[0], dl)?;
                        let (zf, zc) = if inter {
                            (g.concat_cols(&[ids[1], ids[0]])?, g.concat_cols(&[ids[1], cf])?)
                        } else {
                            (ids[0], cf)
                        };
                        let lf = g.linear(zf, ids[2], ids[3])?;
                        let lc = g.linear(zc, ids[2], ids[3])?;
                        let s = cpnslab::risk::surrogate_terms(g, lf, lc, &y, nu, Reduction::Mean)?;
                        let kl = g.kl_softmax(cf, ids[0], Reduction::Mean)?;
                        g.add(s, kl)
                    },
                    1e-5,
                )
            }
            other => panic!("unknown op {other}"),
        };
        worst = worst.max(err);
    }
    worst
}

pub fn small_model(input_dim: usize, seed: u64, tasks: &[usize]) -> ExpandableModel {
    let cfg = ModelConfig {
        input_dim,
        feature_dim: 4,
        hidden: vec![6],
        ..ModelConfig::default()
    };
    let mut m = ExpandableModel::new(cfg, seed).unwrap();
    for &k in tasks {
        m.expand(k).unwrap();
    }
    m
}
