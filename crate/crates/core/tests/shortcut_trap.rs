//! The synthetic stream must actually trap a naive learner: a linear probe
//! on every input dimension latches onto the spurious code and loses
//! accuracy on the (uniformly recoded) test split, while a probe restricted
//! to the causal dimensions does not.

use cpnslab::autodiff::{Graph, Reduction};
use cpnslab::data::{gen_scm_stream, Dataset, FactorTag, ScmConfig};
use cpnslab::tensor::{argmax, Tensor};

fn columns(ds: &Dataset, cols: &[usize]) -> Tensor {
    let mut out = Tensor::zeros(ds.len(), cols.len());
    for r in 0..ds.len() {
        for (j, &c) in cols.iter().enumerate() {
            out.set(r, j, ds.x.get(r, c));
        }
    }
    out
}

/// Full-batch gradient descent on softmax regression; returns test accuracy.
fn probe(train: &Dataset, test: &Dataset, cols: &[usize], offset: usize, classes: usize) -> (f64, f64) {
    let xtr = columns(train, cols);
    let ytr: Vec<usize> = train.y.iter().map(|y| y - offset).collect();
    let mut w = Tensor::zeros(classes, cols.len());
    let mut b = Tensor::zeros(1, classes);
    for _ in 0..400 {
        let mut g = Graph::new();
        let x = g.constant(xtr.clone());
        let wn = g.leaf(w.clone());
        let bn = g.leaf(b.clone());
        let logits = g.linear(x, wn, bn).unwrap();
        let loss = g.softmax_cross_entropy(logits, &ytr, Reduction::Mean).unwrap();
        g.backward(loss).unwrap();
        let (gw, gb) = (g.grad_wrt(wn).unwrap(), g.grad_wrt(bn).unwrap());
        w.data_mut().iter_mut().zip(gw.data()).for_each(|(p, d)| *p -= 0.5 * d);
        b.data_mut().iter_mut().zip(gb.data()).for_each(|(p, d)| *p -= 0.5 * d);
    }
    let acc = |ds: &Dataset| {
        let l = columns(ds, cols).affine(&w, &b).unwrap();
        let hits = l.iter_rows().zip(&ds.y).filter(|(r, &y)| argmax(r) + offset == y).count();
        hits as f64 / ds.len() as f64
    };
    (acc(train), acc(test))
}

#[test]
fn linear_probe_falls_for_the_shortcut() {
    let cfg = ScmConfig::default();
    let stream = gen_scm_stream(&cfg).unwrap();
    let factors = &stream.annotations.as_ref().unwrap().factors;
    let task = &stream.tasks[0];
    let k = task.range.count;
    let all: Vec<usize> = (0..factors.len()).collect();
    let causal: Vec<usize> = all.iter().copied().filter(|&i| factors[i].is_causal()).collect();
    let spurious: Vec<usize> = all.iter().copied().filter(|&i| factors[i] == FactorTag::Spurious).collect();

    let (_, acc_all) = probe(&task.train, &task.test, &all, task.range.offset, k);
    let (_, acc_causal) = probe(&task.train, &task.test, &causal, task.range.offset, k);
    let (train_sp, test_sp) = probe(&task.train, &task.test, &spurious, task.range.offset, k);

    // the spurious code alone fits the training split about as often as it
    // agrees with the label, and carries no signal at test time
    assert!(train_sp > 0.85, "spurious probe train accuracy {train_sp}");
    assert!(test_sp < 1.0 / k as f64 + 0.1, "spurious probe test accuracy {test_sp}");
    assert!(
        acc_causal > acc_all + 0.05,
        "causal-only probe {acc_causal} should beat the all-feature probe {acc_all}"
    );
}
