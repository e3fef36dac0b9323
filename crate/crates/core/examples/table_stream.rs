//! Loading flat `cpns-tab` tables and cutting them into a B-I class
//! incremental stream (e.g. B50-I10), then running the loop on it.
//!
//!     cargo run --release --example table_stream

use cpnslab::data::{gen_scm_stream, save_table, split_tasks, load_table, ScmConfig};
use cpnslab::experiment::{run_seed, DataSource, ExperimentConfig, MetricToggles};
use cpnslab::trainer::TrainConfig;

fn main() -> cpnslab::Result<()> {
    // a 12-class flat dataset stands in for an external benchmark export
    let stream = gen_scm_stream(&ScmConfig {
        num_tasks: 3,
        ..ScmConfig::default()
    })?;
    let dir = tempfile_dir()?;
    let (train, test) = (dir.join("train.tab"), dir.join("test.tab"));
    let mut flat_train = stream.tasks[0].train.clone();
    for task in &stream.tasks[1..] {
        flat_train = flat_train.concat(&task.train)?;
    }
    save_table(&train, &flat_train)?;
    save_table(&test, &stream.test_upto(2)?)?;

    let split = split_tasks(&load_table(&train)?, &load_table(&test)?, 6, 3, 0)?;
    for (t, task) in split.tasks.iter().enumerate() {
        println!("task {t}: classes {:?}, {} train / {} test rows", task.range, task.train.len(), task.test.len());
    }

    let cfg = ExperimentConfig {
        data: DataSource::Table {
            train,
            test,
            base: 6,
            increment: 3,
        },
        train: TrainConfig {
            stage1_epochs: 5,
            stage2_epochs: 10,
            ..TrainConfig::default()
        },
        metrics: MetricToggles {
            masking: false,
            old_new: false,
            ..MetricToggles::default()
        },
        ..ExperimentConfig::default()
    };
    let r = run_seed(&cfg, 0, false)?;
    println!("B6-I3: last {:.3}, avg {:.3}", r.last, r.avg);
    Ok(())
}

fn tempfile_dir() -> cpnslab::Result<std::path::PathBuf> {
    let dir = std::env::temp_dir().join(format!("cpnslab-table-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    Ok(dir)
}
