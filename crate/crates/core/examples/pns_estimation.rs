//! Interventional PNS estimates (factual accuracy minus counterfactual
//! accuracy) on a separable one-task stream, before and after training,
//! across counterfactual strengths.
//!
//!     cargo run --release --example pns_estimation

use cpnslab::buffer::RehearsalBuffer;
use cpnslab::counterfactual::{CfConfig, Scope};
use cpnslab::data::{gen_scm_stream, ScmConfig};
use cpnslab::metrics::accuracy;
use cpnslab::model::{ExpandableModel, ModelConfig};
use cpnslab::risk::estimate_pns_interventional;
use cpnslab::trainer::{TrainConfig, Trainer};

fn main() -> cpnslab::Result<()> {
    let stream = gen_scm_stream(&ScmConfig {
        num_tasks: 1,
        d_s: 0,
        noise_sigma: 0.3,
        ..ScmConfig::default()
    })?;
    let task = &stream.tasks[0];
    let mut model = ExpandableModel::new(ModelConfig::default(), 0)?;
    model.expand(task.range.count)?;

    let strengths = [(1.0, 0.05), (100.0, 0.5), (1e4, 5.0), (1e6, 50.0)];
    let show = |label: &str, m: &ExpandableModel| -> cpnslab::Result<()> {
        println!("{label}: test accuracy {:.3}", accuracy(m, &task.test)?);
        for &(alpha, epsilon) in &strengths {
            let cfg = CfConfig {
                alpha,
                epsilon,
                ..CfConfig::default()
            };
            let est = estimate_pns_interventional(m, task.test.batch(), Scope::Intra, &cfg)?;
            println!("  alpha {alpha:>9} epsilon {epsilon:>5}: PNS estimate {est:+.3}");
        }
        Ok(())
    };
    show("untrained", &model)?;

    let train = TrainConfig::default().baseline();
    let buffer = RehearsalBuffer::new(train.buffer_capacity, train.buffer_policy, stream.input_dim(), 0);
    Trainer::new(train)?.train_task(&mut model, &task.train, &buffer)?;
    show("trained", &model)
}
