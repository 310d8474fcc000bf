// Per-object feature vectors from a feature map and a segmentation score map.

use ots::numcore::Matrix;
use ots::ofam::{compute_mask, ofam, FeatureMap, ScoreMap};

pub fn run_example() -> ots::Result<()> {
    // Four channels over a 2x3 grid of units, flattened to six columns.
    let features = FeatureMap::new(Matrix::from_fn(4, 6, |c, i| (c * 6 + i) as f64 / 10.0))?;
    // Three object classes; "lamp" never wins a unit, units 4 and 5 are ties.
    let scores = ScoreMap::new(Matrix::from_rows(&[
        &[0.9, 0.8, 0.1, 0.2, 0.5, 0.4],
        &[0.1, 0.2, 0.9, 0.7, 0.5, 0.4],
        &[0.0, 0.0, 0.0, 0.1, 0.0, 0.2],
    ]))?;
    let names = ["bed", "table", "lamp"];

    let mask = compute_mask(&scores);
    println!("winner mask (objects x units):");
    for (j, name) in names.iter().enumerate() {
        let row: Vec<&str> = (0..6).map(|i| if mask.is_set(j, i) { "1" } else { "." }).collect();
        println!("  {name:<6} {}", row.join(" "));
    }

    let x = ofam(&features, &scores)?;
    println!("object features (channels x objects):");
    for c in 0..x.channel_count() {
        let row: Vec<String> = (0..x.object_count()).map(|j| format!("{:7.4}", x.matrix().get(c, j))).collect();
        println!("  {}", row.join(" "));
    }
    for (name, present) in names.iter().zip(x.present()) {
        println!("  {name}: {}", if *present { "present" } else { "absent" });
    }
    Ok(())
}

#[allow(dead_code)]
fn main() -> ots::Result<()> {
    run_example()
}
