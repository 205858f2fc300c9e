//! Diagnostic accuracy against chart review with exact 95% intervals, and
//! the per-group sample size for a two-proportion comparison.
//!
//! ```text
//! cargo run --example validation_metrics
//! ```

use kidney_phenotype::validation::{diagnostic_metrics, render_metrics_table, sample_size, ConfusionMatrix, PowerParams, ProportionCi};

fn main() {
    let cm = ConfusionMatrix::new(131, 19, 1, 149);
    let m = diagnostic_metrics(&cm).unwrap();
    print!("{}", render_metrics_table("CKD phenotype vs chart review", &cm, &m));

    let ci = ProportionCi::exact(7, 10, 0.05);
    println!("\n7/10: {}  [{:.6}, {:.6}]", ci.display(), ci.lower, ci.upper);

    let n = sample_size(&PowerParams::default()).unwrap();
    println!("p0 0.5, OR 2, alpha 0.05, power 0.8: {n} per group");
}
