//! Reverse-mode differentiation on a tiny softmax regression, checked
//! against central finite differences.
//!
//!     cargo run --example autodiff_basics

use cpnslab::autodiff::{Graph, Reduction};
use cpnslab::tensor::Tensor;

fn loss(x: &Tensor, w: &Tensor, b: &Tensor, y: &[usize]) -> cpnslab::Result<f64> {
    let mut g = Graph::new();
    let (x, w, b) = (g.constant(x.clone()), g.leaf(w.clone()), g.leaf(b.clone()));
    let logits = g.linear(x, w, b)?;
    let l = g.softmax_cross_entropy(logits, y, Reduction::Mean)?;
    Ok(g.scalar(l))
}

fn main() -> cpnslab::Result<()> {
    let x = Tensor::from_rows(&[[0.5, -1.0, 2.0], [1.5, 0.3, -0.7]])?;
    let w = Tensor::from_rows(&[[0.1, 0.2, -0.3], [-0.4, 0.5, 0.6]])?;
    let b = Tensor::from_rows(&[[0.05, -0.05]])?;
    let y = [1, 0];

    let mut g = Graph::new();
    let xn = g.constant(x.clone());
    let wn = g.leaf(w.clone());
    let bn = g.leaf(b.clone());
    let logits = g.linear(xn, wn, bn)?;
    let h = g.relu(logits)?;
    let l = g.softmax_cross_entropy(logits, &y, Reduction::Mean)?;
    println!("graph of {} nodes, loss {:.6} (relu branch unused: {:?})", g.len(), g.scalar(l), g.value(h).shape());
    g.backward(l)?;
    let grad = g.grad_wrt(wn)?;

    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for i in 0..w.len() {
        let mut plus = w.clone();
        plus.data_mut()[i] += eps;
        let mut minus = w.clone();
        minus.data_mut()[i] -= eps;
        let fd = (loss(&x, &plus, &b, &y)? - loss(&x, &minus, &b, &y)?) / (2.0 * eps);
        let an = grad.data()[i];
        println!("dL/dw[{i}] reverse {an:+.8}  finite-diff {fd:+.8}");
        worst = worst.max((an - fd).abs());
    }
    println!("max abs difference {worst:.2e}");
    Ok(())
}
