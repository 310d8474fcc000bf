// Training on the small synthetic co-occurrence benchmark.

use ots::classifier::{train, AggregatorKind, ModelConfig, OtsModel, SgdConfig};
use ots::cli::class_table;
use ots::dataio::{generate_synthetic, CooccurrenceSpec};
use ots::oam::parse_alpha_chain;
use ots::oam::Fusion;

pub fn run_example() -> ots::Result<()> {
    let spec = CooccurrenceSpec::small(7);
    let all = generate_synthetic(&spec, 400)?;
    let (train_set, eval_set) = all.split_at(300);
    println!("train class counts {:?}", train_set.class_counts());

    let config = ModelConfig {
        channels: spec.channels(),
        objects: spec.objects(),
        alphas: parse_alpha_chain("2,0.5")?,
        fusion: Fusion::Concat,
        oam_bias: false,
        aggregator: AggregatorKind::Gram,
        c_out: 64,
        classes: spec.classes(),
        gram_bias: false,
        relu: false,
    };
    let mut model = OtsModel::new(config, 7)?;
    let sgd = SgdConfig {
        epochs: 6,
        batch_size: 32,
        step_epochs: 4,
        ..SgdConfig::default()
    };
    let report = train(&mut model, &train_set, Some(&eval_set), &sgd, 7)?;
    print!("{}", report.to_delimited());
    if let Some(e) = &report.final_eval {
        print!("{}", class_table(e, eval_set.class_names(), 0.0));
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ots::Result<()> {
    run_example()
}
