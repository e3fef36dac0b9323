//! Post-hoc instruments on a two-task model: Old→New confusion by semantic
//! overlap, layer-wise CKA between the two extractors, and the accuracy
//! curve under progressive masking of salient causal inputs.
//!
//!     cargo run --release --example diagnostics

use cpnslab::data::{gen_scm_stream, ScmConfig};
use cpnslab::experiment::{run_seed, DataSource, ExperimentConfig};
use cpnslab::metrics::{cka_between_extractors, masking_curve, old_new_error};
use cpnslab::trainer::TrainConfig;

fn main() -> cpnslab::Result<()> {
    let scm = ScmConfig {
        num_tasks: 2,
        ..ScmConfig::default()
    };
    let cfg = ExperimentConfig {
        data: DataSource::Synthetic(scm.clone()),
        train: TrainConfig::default().baseline(),
        ..ExperimentConfig::default()
    };
    let model = run_seed(&cfg, 0, false)?.model;
    let stream = gen_scm_stream(&scm)?;
    let ann = stream.annotations.as_ref().expect("annotated");

    let errors = old_new_error(&model, &stream.test_upto(0)?, stream.tasks[1].range, &ann.causal_means)?;
    for (name, g) in [("low", &errors.low), ("medium", &errors.medium), ("high", &errors.high)] {
        println!(
            "{name:<6} overlap {:.2}: classes {:?}, Old→New error {:.3}",
            g.mean_overlap, g.classes, g.rate
        );
    }

    let seen = stream.test_upto(1)?;
    for (layer, cka) in cka_between_extractors(&model, 0, 1, &seen.x)? {
        println!("layer {layer}: CKA(f_0, f_1) = {cka:.3}");
    }

    let curve = masking_curve(&model, &seen, &ann.factors, &[0, 1, 2, 3, 5])?;
    for (k, acc) in &curve.points {
        println!("top-{k} causal inputs masked: accuracy {acc:.3}");
    }
    println!("average drop per masked factor {:.4}", curve.avg_drop);
    Ok(())
}
