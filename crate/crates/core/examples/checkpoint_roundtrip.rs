// Saving a trained model and reading it back.

use ots::classifier::{evaluate, train, ModelConfig, OtsModel, SgdConfig};
use ots::dataio::{generate_synthetic, load_checkpoint, read_container, save_checkpoint, CooccurrenceSpec};

pub fn run_example() -> ots::Result<()> {
    let spec = CooccurrenceSpec::small(3);
    let data = generate_synthetic(&spec, 120)?;
    let config = ModelConfig {
        channels: spec.channels(),
        objects: spec.objects(),
        c_out: 32,
        ..ModelConfig::standard(spec.classes())
    };
    let mut model = OtsModel::new(config, 3)?;
    let sgd = SgdConfig {
        epochs: 2,
        batch_size: 20,
        ..SgdConfig::default()
    };
    train(&mut model, &data, None, &sgd, 3)?;

    let dir = tempfile::tempdir()?;
    let path = dir.path().join("model.otsf");
    save_checkpoint(&path, &model)?;
    for r in read_container(&path)? {
        println!("  {:<24} {:?} {:?}", r.name(), r.dtype(), r.shape());
    }

    let loaded = load_checkpoint(&path)?;
    let before = evaluate(&model, &data)?;
    let after = evaluate(&loaded, &data)?;
    let x = data.sample(0);
    let gap = model.logits(&x)?.max_abs_diff(&loaded.logits(&x)?);
    println!(
        "accuracy {:.3} before, {:.3} after, logit gap {gap:.1e}",
        before.accuracy, after.accuracy
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> ots::Result<()> {
    run_example()
}
