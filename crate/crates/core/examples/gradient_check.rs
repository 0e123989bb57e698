//! Finite-difference check of the full training loss (similarity,
//! confidence and semantic terms) against the reverse-mode gradients.
//!
//! cargo run --release --example gradient_check -- [cases]

use simgroup::losses::LossConfig;
use simgroup::trainer::{check_loss_gradients, gradcheck_case};

fn main() -> simgroup::Result<()> {
    let cases: u64 = std::env::args().nth(1).and_then(|s| s.parse().ok()).unwrap_or(5);
    let loss = LossConfig::default();
    for case in 0..cases {
        let (model, cloud, labels) = gradcheck_case(case, 16, 4, 3)?;
        let report = check_loss_gradients(&model, &cloud, &labels, &loss, loss.alpha_initial, 1e-4)?;
        println!(
            "case {case}: max relative error {:.2e} over {} entries ({} skipped near kinks)",
            report.max_rel_error(),
            report.checked(),
            report.excluded()
        );
        for p in &report.params {
            println!("  {:<24} {:.2e}", p.name, p.max_rel_error);
        }
    }
    Ok(())
}
