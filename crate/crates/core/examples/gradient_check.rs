// Finite-difference check of the full model under cross-entropy.

use ots::classifier::{gradcheck_model, AggregatorKind, GradcheckSetup};
use ots::numcore::GradcheckConfig;

pub fn run_example() -> ots::Result<()> {
    let cfg = GradcheckConfig::default();
    for kind in [AggregatorKind::Gram, AggregatorKind::Fc, AggregatorKind::MaxAvgPool] {
        let setup = GradcheckSetup {
            aggregator: kind,
            ..GradcheckSetup::default()
        };
        let report = gradcheck_model(&setup, &cfg)?;
        println!("{kind}: max relative error {:.2e}", report.max_rel_error);
        for p in &report.params {
            println!("  {:<16} {:>3} coords  {:.2e}", p.name, p.coords_checked, p.max_rel_error);
        }
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ots::Result<()> {
    run_example()
}
