//! Growing a model over tasks: each expansion freezes the previous
//! extractor, appends a new one and widens the unified classifier. The
//! model is then saved and restored bit-exactly.
//!
//!     cargo run --example expandable_model

use cpnslab::checkpoint;
use cpnslab::model::{ExpandableModel, ModelConfig};
use cpnslab::tensor::Tensor;

fn main() -> cpnslab::Result<()> {
    let cfg = ModelConfig {
        input_dim: 8,
        feature_dim: 4,
        hidden: vec![16],
        ..ModelConfig::default()
    };
    let mut model = ExpandableModel::new(cfg, 42)?;
    let x = Tensor::from_rows(&[[0.3, -0.1, 0.8, 0.0, 1.2, -0.5, 0.4, 0.9]])?;
    for classes in [4, 3, 3] {
        model.expand(classes)?;
        let frozen = model.extractors().iter().filter(|e| e.frozen).count();
        println!(
            "task {}: {} classes total, {} extractors ({} frozen), concatenated width {}, range {:?}",
            model.current_task()?,
            model.num_classes(),
            model.extractors().len(),
            frozen,
            model.feature_dim() * model.extractors().len(),
            model.current_range()?,
        );
    }
    println!("prediction {:?}", model.predict(&x)?);
    for (name, p) in model.named_params().iter().take(6) {
        println!("  {name:<12} {:?} frozen={}", p.value.shape(), p.frozen);
    }

    let bytes = checkpoint::to_bytes(&model)?;
    let back = checkpoint::from_bytes(&bytes)?;
    let same = model.forward_concat(&x)? == back.forward_concat(&x)?;
    println!("checkpoint of {} bytes; restored forward identical: {same}", bytes.len());
    Ok(())
}
