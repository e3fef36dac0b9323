mod common;

use common::{fd_suite, max_fd_error, random_tensor, rng, small_model, OPS};
use cpnslab::autodiff::{Graph, Reduction};
use cpnslab::params::Bindings;

#[test]
fn every_op_matches_finite_differences() {
    for op in OPS {
        let err = fd_suite(op, 25);
        assert!(err < 1e-4, "{op}: relative error {err:e}");
    }
}

#[test]
fn composite_network_gradient() {
    // extractor → concat → head → CE, differentiated w.r.t. the input
    let model = small_model(5, 3, &[2, 3]);
    let mut r = rng(11);
    let x = random_tensor(&mut r, 3, 5, 1.0);
    let y = vec![0, 3, 4];
    let err = max_fd_error(
        &[x],
        &|g: &mut Graph, ids| {
            let mut b = Bindings::new();
            let f0 = model.build_extractor(g, &mut b, 0, ids[0], false)?;
            let f1 = model.build_extractor(g, &mut b, 1, ids[0], false)?;
            let z = g.concat_cols(&[f0, f1])?;
            let logits = model.build_head(g, &mut b, "cls", z, false)?;
            g.softmax_cross_entropy(logits, &y, Reduction::Mean)
        },
        1e-5,
    );
    assert!(err < 1e-4, "relative error {err:e}");
}

#[test]
fn wasserstein_gradient_away_from_ties() {
    let mut r = rng(5);
    for _ in 0..20 {
        let a = random_tensor(&mut r, 2, 4, 3.0);
        let b = random_tensor(&mut r, 2, 4, 3.0);
        let err = max_fd_error(&[a, b], &|g, ids| g.wasserstein_1d(ids[0], ids[1], Reduction::Sum), 1e-7);
        assert!(err < 1e-4, "relative error {err:e}");
    }
}
