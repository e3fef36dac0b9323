//! Intra-task (loss-gradient) and inter-task (pull toward projected old
//! features) counterfactuals against random and PGD perturbations, under the
//! same divergence budget.
//!
//!     cargo run --example counterfactuals

use cpnslab::counterfactual::{gen_inter, gen_intra, perturb_pgd, perturb_random};
use cpnslab::model::Head;
use cpnslab::tensor::{cosine, Tensor};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> cpnslab::Result<()> {
    let w = Tensor::from_rows(&[[1.0, -0.5, 0.2], [-0.3, 0.8, 0.1], [0.2, 0.1, -0.9]])?;
    let b = Tensor::zeros(1, 3);
    let head = Head::new(&w, &b);
    let factual = [1.2, -0.4, 0.3];
    let label = head.predict_row(&factual);
    let epsilon = 0.05;
    let mut rng = ChaCha8Rng::seed_from_u64(0);

    let samples = [
        ("gen_intra", gen_intra(&factual, label, head, 1.0, epsilon)?),
        ("perturb_random", perturb_random(&factual, epsilon, &mut rng)?),
        ("perturb_pgd", perturb_pgd(&factual, label, head, 10, 0.5, epsilon)?),
    ];
    println!("factual prediction {label}");
    for (name, s) in &samples {
        println!(
            "{name:<15} divergence {:.4} (≤ {epsilon})  step {:.4}  prediction {}  degenerate {}",
            s.kl_value,
            s.applied_scale,
            head.predict_row(&s.counterfactual),
            s.degenerate
        );
    }

    let projected = [0.2, 0.9, -0.1];
    let inter = gen_inter(&factual, &projected, 0.03, epsilon)?;
    println!(
        "gen_inter: beta_eff {:.4}, cosine to reference {:.4} → {:.4}",
        inter.applied_scale,
        cosine(&factual, &projected),
        cosine(&inter.counterfactual, &projected)
    );
    Ok(())
}
