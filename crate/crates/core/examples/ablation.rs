//! The six-variant ablation (baseline, +intra, +inter with and without the
//! two-stage schedule, both terms without it, and the full method) on a
//! small stream, written to `out/<run_id>/ablation.csv`.
//!
//!     cargo run --release --example ablation -- [out_dir]

use cpnslab::data::ScmConfig;
use cpnslab::experiment::{ablate, DataSource, ExperimentConfig, MetricToggles};
use cpnslab::trainer::TrainConfig;

fn main() -> cpnslab::Result<()> {
    let out = std::env::args().nth(1).unwrap_or_else(|| "out".into());
    let cfg = ExperimentConfig {
        run_id: "ablation-example".into(),
        data: DataSource::Synthetic(ScmConfig {
            num_tasks: 3,
            train_per_class: 60,
            ..ScmConfig::default()
        }),
        train: TrainConfig {
            stage1_epochs: 10,
            stage2_epochs: 15,
            ..TrainConfig::default()
        },
        metrics: MetricToggles {
            cka: false,
            masking: false,
            cf_quality: false,
            ..MetricToggles::default()
        },
        output_dir: out.into(),
        seeds: vec![0, 1],
        ..ExperimentConfig::default()
    };
    println!("{:<20} {:>5} {:>5} {:>9} {:>7} {:>7}", "variant", "intra", "inter", "two-stage", "last", "avg");
    for r in ablate(&cfg, None)? {
        println!(
            "{:<20} {:>5} {:>5} {:>9} {:>7.4} {:>7.4}",
            r.method, r.intra, r.inter, r.two_stage, r.last, r.avg
        );
    }
    Ok(())
}
