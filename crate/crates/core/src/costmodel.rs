//! Closed-form parameter and FLOP counts.
//!
//! One FLOP is one multiply-accumulate of a linear map. Softmax,
//! concatenation, the scalar gate and bias additions cost nothing. A
//! 1x1 convolution from `a` to `b` channels over `n` units therefore
//! costs `a * b * n`, and the attention products `Q^T K` and `V beta`
//! cost `c * n^2` each for `c`-channel operands.
//!
//! Parameter counts include the per-projection biases of the attention
//! variants when [`Bias::PerProjection`] is selected; FLOP counts never
//! include them.

use std::fmt::Write as _;

use crate::error::Result;
use crate::gram::GramLayer;
use crate::numcore::Parameterized;
use crate::oam::Alpha;

/// Whether 1x1 projections carry a bias vector.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Bias {
    None,
    PerProjection,
}

/// Exact counts for one named configuration.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CostReport {
    pub name: String,
    pub params: u64,
    pub flops: u64,
}

impl CostReport {
    pub fn new(name: impl Into<String>, params: u64, flops: u64) -> Self {
        Self {
            name: name.into(),
            params,
            flops,
        }
    }

    /// Tenths of a million, rounded half away from zero.
    pub fn params_tenths(&self) -> u64 {
        millions_tenths(self.params)
    }

    pub fn flops_tenths(&self) -> u64 {
        millions_tenths(self.flops)
    }

    /// Millions with one decimal; an exact zero prints as `0`.
    pub fn params_m(&self) -> String {
        format_millions(self.params)
    }

    pub fn flops_m(&self) -> String {
        format_millions(self.flops)
    }

    /// Sequential composition of layers.
    pub fn chain(name: impl Into<String>, parts: &[CostReport]) -> Self {
        Self::new(
            name,
            parts.iter().map(|p| p.params).sum(),
            parts.iter().map(|p| p.flops).sum(),
        )
    }

    /// `times` identical layers in sequence.
    pub fn repeated(&self, name: impl Into<String>, times: u64) -> Self {
        Self::new(name, self.params * times, self.flops * times)
    }
}

fn millions_tenths(x: u64) -> u64 {
    (x + 50_000) / 100_000
}

fn format_millions(x: u64) -> String {
    if x == 0 {
        return "0".into();
    }
    let t = millions_tenths(x);
    format!("{}.{}", t / 10, t % 10)
}

fn bias_count(bias: Bias, widths: &[u64]) -> u64 {
    match bias {
        Bias::None => 0,
        Bias::PerProjection => widths.iter().sum(),
    }
}

/// One object attention block with biased V, Q and K projections.
pub fn cost_oab(c_in: usize, alpha: Alpha, n: usize) -> Result<CostReport> {
    cost_oab_with(c_in, alpha, n, Bias::PerProjection)
}

pub fn cost_oab_with(c_in: usize, alpha: Alpha, n: usize, bias: Bias) -> Result<CostReport> {
    let c_v = alpha.value_channels(c_in)? as u64;
    let (c_in, n) = (c_in as u64, n as u64);
    let weights = c_in * c_v + 2 * c_v * c_v;
    // +1 for the gate is exact only in the instantiated count; tables round it away.
    let params = weights + bias_count(bias, &[c_v, c_v, c_v]) + 1;
    let flops = n * weights + 2 * c_v * n * n;
    Ok(CostReport::new(format!("OAB(c_in={c_in}, alpha={alpha})"), params, flops))
}

/// Blocks chained from `c_in`, as built by [`crate::oam::OamStack::build`].
pub fn cost_oab_stack(c_in: usize, alphas: &[Alpha], n: usize) -> Result<CostReport> {
    cost_oab_stack_with(c_in, alphas, n, Bias::PerProjection)
}

pub fn cost_oab_stack_with(c_in: usize, alphas: &[Alpha], n: usize, bias: Bias) -> Result<CostReport> {
    let mut parts = Vec::with_capacity(alphas.len());
    let mut channels = c_in;
    for &alpha in alphas {
        let c_v = alpha.value_channels(channels)?;
        parts.push(cost_oab_with(channels, alpha, n, bias)?);
        channels = 2 * c_v;
    }
    let label: Vec<String> = alphas.iter().map(|a| a.to_string()).collect();
    Ok(CostReport::chain(
        format!("OAB x{} (c_in={c_in}, alpha={})", alphas.len(), label.join(",")),
        &parts,
    ))
}

/// Self-attention with separate query/key width and an output projection.
pub fn cost_self_attention(
    c_in: usize,
    c_qk: usize,
    c_v: usize,
    c_out: usize,
    n: usize,
    bias: Bias,
) -> CostReport {
    let [c_in, c_qk, c_v, c_out, n] = [c_in, c_qk, c_v, c_out, n].map(|x| x as u64);
    let weights = 2 * c_in * c_qk + c_in * c_v + c_v * c_out;
    let params = weights + bias_count(bias, &[c_qk, c_qk, c_v, c_out]);
    let flops = n * weights + n * n * (c_qk + c_v);
    CostReport::new(format!("Self-attention(c_in={c_in}, c_qk={c_qk}, c_v={c_v})"), params, flops)
}

/// Non-local block: three width-`c` projections plus an output projection.
pub fn cost_nonlocal(c_in: usize, c: usize, c_out: usize, n: usize, bias: Bias) -> CostReport {
    let [c_in, c, c_out, n] = [c_in, c, c_out, n].map(|x| x as u64);
    let weights = 3 * c_in * c + c * c_out;
    let params = weights + bias_count(bias, &[c, c, c, c_out]);
    let flops = n * weights + 2 * c * n * n;
    CostReport::new(format!("Non-local(c_in={c_in}, c={c})"), params, flops)
}

pub fn cost_gram(c: usize, n: usize, c_out: usize) -> CostReport {
    let [c, n, c_out] = [c, n, c_out].map(|x| x as u64);
    let count = c * n + c * c_out;
    CostReport::new(format!("GRAM(c={c}, n={n}, c_out={c_out})"), count, count)
}

/// Flatten followed by a dense map to `c_out`.
pub fn cost_fc(c: usize, n: usize, c_out: usize) -> CostReport {
    let count = (c * n * c_out) as u64;
    CostReport::new(format!("FC(c={c}, n={n}, c_out={c_out})"), count, count)
}

/// Concatenated max and average pooling over the object axis.
pub fn cost_pool(c: usize, n: usize) -> CostReport {
    CostReport::new(format!("Max & Avg. Pooling(c={c}, n={n})"), 0, 2 * (c * n) as u64)
}

/// Stored learnable scalars of a built layer.
pub fn count_instantiated(layer: &dyn Parameterized) -> u64 {
    layer.parameter_count()
}

/// Closed form for a built [`GramLayer`], biases included if present.
pub fn gram_params(layer: &GramLayer) -> u64 {
    let base = cost_gram(layer.c_in(), layer.n_units(), layer.c_out()).params;
    if layer.use_bias() {
        base + (layer.c_in() + layer.c_out()) as u64
    } else {
        base
    }
}

/// One titled group of rows, printed as a block.
#[derive(Clone, Debug)]
pub struct CostTable {
    pub title: String,
    pub rows: Vec<CostReport>,
}

/// Reference cost rows for the 1024-channel, 150-object configuration.
pub fn standard_preset() -> Vec<CostTable> {
    let n = 150;
    let a = |s: &str| s.parse::<Alpha>().expect("static alpha");
    let oab_single = cost_oab(1024, a("2"), n).expect("valid");
    let oab_pair = cost_oab_stack(1024, &[a("2"), a("0.5")], n).expect("valid");
    let sa = cost_self_attention(1024, 128, 512, 1024, n, Bias::PerProjection);
    let nl = cost_nonlocal(1024, 512, 1024, n, Bias::PerProjection);

    let renamed = |r: &CostReport, name: &str| CostReport::new(name, r.params, r.flops);
    vec![
        CostTable {
            title: "Attention blocks, C_in = C_out = 1024, N = 150".into(),
            rows: vec![
                renamed(&sa, "Self-attention"),
                renamed(&nl, "Non-local"),
                renamed(&cost_oab(1024, a("1"), n).expect("valid"), "Object Attention Block"),
            ],
        },
        CostTable {
            title: "Number of cascaded object attention blocks".into(),
            rows: vec![renamed(&oab_single, "OAB x1"), renamed(&oab_pair, "OAB x2")],
        },
        CostTable {
            title: "Two cascaded blocks of each attention type".into(),
            rows: vec![
                nl.repeated("Non-Local", 2),
                sa.repeated("Self-Attention", 2),
                renamed(&oab_pair, "Object Attention Block"),
                renamed(&oab_single, "Object Attention Block (S)"),
            ],
        },
        CostTable {
            title: "Object aggregation, C = 1024, N = 150, C_out = 2048".into(),
            rows: vec![
                renamed(&cost_fc(1024, n, 2048), "FC"),
                renamed(&cost_pool(1024, n), "Max & Avg. Pooling"),
                renamed(&cost_gram(1024, n, 2048), "GRAM"),
            ],
        },
    ]
}

/// Aligned plain-text table with exact and rounded columns.
pub fn render_table(reports: &[CostReport]) -> String {
    let header = ["Layer", "Params", "FLOPs", "Parm. (M)", "FLOPs (M)"];
    let rows: Vec<[String; 5]> = reports
        .iter()
        .map(|r| {
            [
                r.name.clone(),
                r.params.to_string(),
                r.flops.to_string(),
                r.params_m(),
                r.flops_m(),
            ]
        })
        .collect();
    let mut widths = header.map(str::len);
    for row in &rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.chars().count());
        }
    }
    let mut out = String::new();
    let line = |out: &mut String, cells: [&str; 5]| {
        let _ = write!(out, "{:<w$}", cells[0], w = widths[0]);
        for (i, cell) in cells.iter().enumerate().skip(1) {
            let _ = write!(out, "  {:>w$}", cell, w = widths[i]);
        }
        out.push('\n');
    };
    line(&mut out, header);
    let rule: Vec<String> = widths.iter().map(|w| "-".repeat(*w)).collect();
    line(&mut out, [&rule[0], &rule[1], &rule[2], &rule[3], &rule[4]]);
    for row in &rows {
        line(&mut out, [&row[0], &row[1], &row[2], &row[3], &row[4]]);
    }
    out
}

/// Comma-separated variant of [`render_table`].
pub fn render_delimited(reports: &[CostReport]) -> String {
    let mut out = String::from("layer,params,flops,params_m,flops_m\n");
    for r in reports {
        let name = if r.name.contains(',') {
            format!("\"{}\"", r.name.replace('"', "\"\""))
        } else {
            r.name.clone()
        };
        let _ = writeln!(out, "{name},{},{},{},{}", r.params, r.flops, r.params_m(), r.flops_m());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oam::{Fusion, ObjectAttentionBlock, OamStack};

    fn a(s: &str) -> Alpha {
        s.parse().unwrap()
    }

    fn rounded(r: &CostReport) -> (String, String) {
        (r.params_m(), r.flops_m())
    }

    #[test]
    fn table_one_rows() {
        let sa = cost_self_attention(1024, 128, 512, 1024, 150, Bias::PerProjection);
        let nl = cost_nonlocal(1024, 512, 1024, 150, Bias::PerProjection);
        let oab = cost_oab(1024, a("1"), 150).unwrap();
        assert_eq!(rounded(&sa), ("1.3".into(), "211.0".into()));
        assert_eq!(rounded(&nl), ("2.1".into(), "337.6".into()));
        assert_eq!(rounded(&oab), ("1.1".into(), "180.3".into()));
    }

    #[test]
    fn bias_free_attention_rows_round_the_same_except_oab() {
        let sa = cost_self_attention(1024, 128, 512, 1024, 150, Bias::None);
        let nl = cost_nonlocal(1024, 512, 1024, 150, Bias::None);
        assert_eq!(rounded(&sa), ("1.3".into(), "211.0".into()));
        assert_eq!(rounded(&nl), ("2.1".into(), "337.6".into()));
        // 1024*512 + 2*512^2 = 1_048_576 plus the gate rounds to 1.0M
        let oab = cost_oab_with(1024, a("1"), 150, Bias::None).unwrap();
        assert_eq!(oab.params, 1_048_577);
        assert_eq!(oab.params_m(), "1.0");
    }

    #[test]
    fn oab_flops_pin_unit_count() {
        let oab = cost_oab(1024, a("1"), 150).unwrap();
        assert_eq!(oab.flops, 180_326_400);
        for n in 100..=200 {
            if n != 150 {
                assert_ne!(cost_oab(1024, a("1"), n).unwrap().flops_m(), "180.3", "n={n}");
            }
        }
    }

    #[test]
    fn block_chains() {
        assert_eq!(rounded(&cost_oab(1024, a("2"), 150).unwrap()), ("0.4".into(), "70.5".into()));
        let pair = cost_oab_stack(1024, &[a("2"), a("0.5")], 150).unwrap();
        assert_eq!(rounded(&pair), ("1.2".into(), "211.5".into()));
        assert!(cost_oab(1024, a("3"), 150).is_err());
    }

    #[test]
    fn cascades() {
        let sa = cost_self_attention(1024, 128, 512, 1024, 150, Bias::PerProjection).repeated("sa", 2);
        let nl = cost_nonlocal(1024, 512, 1024, 150, Bias::PerProjection).repeated("nl", 2);
        assert_eq!(rounded(&sa), ("2.6".into(), "422.0".into()));
        assert_eq!(rounded(&nl), ("4.2".into(), "675.2".into()));
    }

    #[test]
    fn trivial_hand_counts() {
        let sa = cost_self_attention(1, 1, 1, 1, 1, Bias::None);
        assert_eq!((sa.params, sa.flops), (4, 6));
        let nl = cost_nonlocal(2, 1, 2, 1, Bias::None);
        assert_eq!((nl.params, nl.flops), (8, 10));
    }

    #[test]
    fn aggregation_rows() {
        assert_eq!(rounded(&cost_gram(1024, 150, 2048)), ("2.3".into(), "2.3".into()));
        assert_eq!(rounded(&cost_fc(1024, 150, 2048)), ("314.6".into(), "314.6".into()));
        assert_eq!(rounded(&cost_pool(1024, 150)), ("0".into(), "0.3".into()));
        assert_eq!(cost_gram(1024, 150, 2048).params, 2_250_752);
    }

    #[test]
    fn rounding_is_half_away_from_zero() {
        assert_eq!(CostReport::new("x", 1_050_000, 0).params_m(), "1.1");
        assert_eq!(CostReport::new("x", 1_049_999, 0).params_m(), "1.0");
        assert_eq!(CostReport::new("x", 1, 0).params_m(), "0.0");
        assert_eq!(CostReport::new("x", 0, 0).params_m(), "0");
    }

    #[test]
    fn instantiated_counts_agree() {
        for (bias, flag) in [(Bias::None, false), (Bias::PerProjection, true)] {
            let block = ObjectAttentionBlock::build(64, a("1"), Fusion::Concat, flag, 0).unwrap();
            assert_eq!(count_instantiated(&block), cost_oab_with(64, a("1"), 10, bias).unwrap().params);
            let alphas = [a("2"), a("0.5")];
            let stack = OamStack::build(64, &alphas, Fusion::Concat, flag, 0).unwrap();
            assert_eq!(
                count_instantiated(&stack),
                cost_oab_stack_with(64, &alphas, 10, bias).unwrap().params
            );
        }
        assert_eq!(count_instantiated(&OamStack::empty()), 0);
        let g = GramLayer::build(8, 5, 6, true, 0).unwrap();
        assert_eq!(count_instantiated(&g), gram_params(&g));
    }

    #[test]
    fn monotone_in_each_dimension() {
        let base = cost_self_attention(8, 4, 4, 8, 5, Bias::None);
        for bumped in [
            cost_self_attention(9, 4, 4, 8, 5, Bias::None),
            cost_self_attention(8, 5, 4, 8, 5, Bias::None),
            cost_self_attention(8, 4, 5, 8, 5, Bias::None),
            cost_self_attention(8, 4, 4, 8, 6, Bias::None),
        ] {
            assert!(bumped.flops > base.flops);
        }
        let g = cost_gram(4, 4, 4);
        for bumped in [cost_gram(5, 4, 4), cost_gram(4, 5, 4), cost_gram(4, 4, 5)] {
            assert!(bumped.params > g.params && bumped.flops > g.flops);
        }
    }

    #[test]
    fn render_is_deterministic_and_lists_every_row() {
        let table = &standard_preset()[0];
        let text = render_table(&table.rows);
        assert_eq!(text, render_table(&table.rows));
        assert!(text.contains("1.3") && text.contains("211.0"));
        assert!(text.contains("2.1") && text.contains("337.6"));
        assert!(text.contains("1.1") && text.contains("180.3"));
        assert_eq!(text.lines().count(), 2 + 3);
        let single = render_table(&[CostReport::new("only", 1, 2)]);
        assert_eq!(single.lines().count(), 3);
    }
}
