// Collapsing the object axis: strip convolution versus pooling.

use ots::classifier::Aggregator;
use ots::gram::GramLayer;
use ots::numcore::{Matrix, Tape};

fn pooled(x: &Matrix) -> ots::Result<Matrix> {
    let mut tape = Tape::new();
    let xv = tape.input(x);
    let out = Aggregator::MaxAvgPool.forward(&mut tape, xv)?;
    Ok(tape.value(out).clone())
}

pub fn run_example() -> ots::Result<()> {
    let gram = GramLayer::new(8, 5, 6, 3)?;
    let x = Matrix::from_fn(8, 5, |c, n| (c as f64 - 3.5) * (n as f64 + 1.0) / 10.0);
    let swapped = x.permute_cols(&[1, 0, 2, 3, 4]);

    let g = gram.apply(&x)?;
    let g_swapped = gram.apply(&swapped)?;
    println!("GRAM output {}x{}", g.rows(), g.cols());
    println!("  change after swapping two objects: {:.4}", g.max_abs_diff(&g_swapped));

    let p = pooled(&x)?;
    let p_swapped = pooled(&swapped)?;
    println!("pooling output {}x{}", p.rows(), p.cols());
    println!("  change after swapping two objects: {:.4}", p.max_abs_diff(&p_swapped));
    Ok(())
}

#[allow(dead_code)]
fn main() -> ots::Result<()> {
    run_example()
}
