// One object attention block and a cascaded stack.

use ots::numcore::{Matrix, Tape};
use ots::oam::{parse_alpha_chain, Alpha, Fusion, OamStack, ObjectAttentionBlock};

pub fn run_example() -> ots::Result<()> {
    let x = Matrix::from_fn(64, 10, |c, n| ((c * 7 + n * 13) % 17) as f64 / 17.0 - 0.5);

    let mut block = ObjectAttentionBlock::new(64, Alpha::integer(2)?, 1)?;
    println!(
        "block: {} -> {} channels, V has {}, gamma starts at {}",
        block.c_in(),
        block.output_channels(),
        block.value_channels(),
        block.gamma()
    );
    block.gamma_param_mut().value_mut().fill(0.5);

    let mut tape = Tape::new();
    let xv = tape.input(&x);
    let parts = block.forward_parts(&mut tape, xv)?;
    let beta = tape.value(parts.beta);
    let sums: Vec<String> = (0..beta.cols())
        .map(|j| format!("{:.3}", (0..beta.rows()).map(|i| beta.get(i, j)).sum::<f64>()))
        .collect();
    println!("attention map {}x{}, column sums {}", beta.rows(), beta.cols(), sums.join(" "));
    let out = tape.value(parts.out);
    println!("output {}x{}", out.rows(), out.cols());

    // Relabelling the objects relabels the output the same way.
    let stack = OamStack::new(64, &parse_alpha_chain("2,0.5")?, Fusion::Concat, 2)?;
    let perm: Vec<usize> = (0..10).rev().collect();
    let a = stack.apply(&x.permute_cols(&perm))?;
    let b = stack.apply(&x)?.permute_cols(&perm);
    println!(
        "stack alphas {:?}: {} -> {} channels, permutation gap {:.1e}",
        stack.alphas().iter().map(|a| a.to_string()).collect::<Vec<_>>(),
        64,
        stack.output_channels(64),
        a.max_abs_diff(&b)
    );
    Ok(())
}

#[allow(dead_code)]
fn main() -> ots::Result<()> {
    run_example()
}
