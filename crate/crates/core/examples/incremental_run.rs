//! A complete class-incremental run driven from code: per task, expand the
//! model, train both stages, refresh the rehearsal buffer and evaluate.
//!
//!     cargo run --release --example incremental_run

use cpnslab::experiment::{run_seed, DataSource, ExperimentConfig};
use cpnslab::data::ScmConfig;
use cpnslab::trainer::TrainConfig;

fn main() -> cpnslab::Result<()> {
    let cfg = ExperimentConfig {
        data: DataSource::Synthetic(ScmConfig {
            num_tasks: 3,
            ..ScmConfig::default()
        }),
        train: TrainConfig {
            stage1_epochs: 20,
            stage2_epochs: 20,
            ..TrainConfig::default()
        },
        ..ExperimentConfig::default()
    };
    let result = run_seed(&cfg, 0, false)?;
    for e in &result.evals {
        let r = &e.cpns_report;
        println!(
            "after task {}: acc {:.3} (avg {:.3})  per-task {:?}",
            e.task_index,
            e.last_acc,
            e.avg_acc,
            e.task_accuracies.iter().map(|a| (a * 1000.0).round() / 1000.0).collect::<Vec<_>>()
        );
        println!(
            "    R_intra {:.3} R_inter {:.3} M_total {:.3} ≤ R_total {:.3}; PNS intra {:+.3} inter {:+.3}",
            r.r_intra, r.r_inter, r.m_total, r.r_total, r.pns_intra_est, r.pns_inter_est
        );
    }
    let stage1 = result.epochs.iter().filter(|e| e.stage == 1).count();
    println!("{} epoch records ({stage1} in stage 1)", result.epochs.len());
    Ok(())
}
