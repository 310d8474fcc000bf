// Parameter and FLOP counts for the attention and aggregation layers.

use ots::costmodel::{cost_oab_stack, cost_self_attention, standard_preset, render_table, Bias};
use ots::oam::parse_alpha_chain;

pub fn run_example() -> ots::Result<()> {
    for table in standard_preset() {
        println!("{}", table.title);
        println!("{}", render_table(&table.rows));
    }

    // Any other configuration: three blocks over 512 channels and 80 objects.
    let alphas = parse_alpha_chain("2,1,0.5")?;
    let custom = vec![
        cost_oab_stack(512, &alphas, 80)?,
        cost_self_attention(512, 64, 256, 512, 80, Bias::PerProjection),
    ];
    println!("Custom, N = 80");
    print!("{}", render_table(&custom));
    Ok(())
}

#[allow(dead_code)]
fn main() -> ots::Result<()> {
    run_example()
}
