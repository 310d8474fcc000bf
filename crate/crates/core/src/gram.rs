//! Global relation aggregation.
//!
//! A strip depthwise convolution whose kernel spans all `N` object slots
//! of each channel reduces `C x N` features to a `C x 1` vector
//! (`mid[c] = sum_n D[c, n] * f[c, n]`); a pointwise projection then maps
//! it to the `C_out x 1` scene representation. The kernel is
//! position-specific, so unlike pooling the result depends on which
//! object occupies which slot.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{OtsError, Result};
use crate::numcore::{glorot_uniform, Matrix, Param, Parameterized, Tape, Var};

#[derive(Clone, Debug)]
pub struct GramLayer {
    c_in: usize,
    n_units: usize,
    c_out: usize,
    depthwise: Param,
    pointwise: Param,
    bias: Option<(Param, Param)>,
}

impl GramLayer {
    pub fn new(c_in: usize, n_units: usize, c_out: usize, seed: u64) -> Result<Self> {
        Self::build(c_in, n_units, c_out, false, seed)
    }

    /// `use_bias` adds a bias after each of the two convolutions.
    pub fn build(c_in: usize, n_units: usize, c_out: usize, use_bias: bool, seed: u64) -> Result<Self> {
        if c_in == 0 || n_units == 0 || c_out == 0 {
            return Err(OtsError::Config(format!(
                "GRAM dimensions must be positive, got ({c_in}, {n_units}, {c_out})"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        // Each channel's strip sees n_units inputs and feeds one output.
        let depthwise = Param::new(glorot_uniform(c_in, n_units, n_units, 1, &mut rng));
        let pointwise = Param::new(glorot_uniform(c_out, c_in, c_in, c_out, &mut rng));
        let bias = use_bias.then(|| {
            (
                Param::exempt(Matrix::zeros(c_in, 1)),
                Param::exempt(Matrix::zeros(c_out, 1)),
            )
        });
        Ok(Self {
            c_in,
            n_units,
            c_out,
            depthwise,
            pointwise,
            bias,
        })
    }

    /// (1024, 150, 2048).
    pub fn standard(seed: u64) -> Self {
        Self::new(1024, 150, 2048, seed).expect("positive dims")
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn n_units(&self) -> usize {
        self.n_units
    }

    pub fn c_out(&self) -> usize {
        self.c_out
    }

    pub fn use_bias(&self) -> bool {
        self.bias.is_some()
    }

    pub fn depthwise(&self) -> &Param {
        &self.depthwise
    }

    pub fn pointwise(&self) -> &Param {
        &self.pointwise
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, f: Var) -> Result<Var> {
        let shape = tape.value(f).shape();
        if shape != (self.c_in, self.n_units) {
            return Err(OtsError::shape(
                "gram_forward",
                format!(
                    "expected {}x{} input, got {}x{}",
                    self.c_in, self.n_units, shape.0, shape.1
                ),
            ));
        }
        let d = tape.param(&self.depthwise);
        let weighted = tape.mul(d, f)?;
        let mut mid = tape.sum_rows(weighted);
        if let Some((b_mid, _)) = &self.bias {
            let b = tape.param(b_mid);
            mid = tape.add(mid, b)?;
        }
        let p = tape.param(&self.pointwise);
        let mut out = tape.matmul(p, mid)?;
        if let Some((_, b_out)) = &self.bias {
            let b = tape.param(b_out);
            out = tape.add(out, b)?;
        }
        Ok(out)
    }

    pub fn apply(&self, f: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let fv = tape.input(f);
        let out = self.forward(&mut tape, fv)?;
        Ok(tape.value(out).clone())
    }
}

impl Parameterized for GramLayer {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = vec![
            ("gram.depthwise".to_string(), &self.depthwise),
            ("gram.pointwise".to_string(), &self.pointwise),
        ];
        if let Some((b_mid, b_out)) = &self.bias {
            out.push(("gram.bias_mid".into(), b_mid));
            out.push(("gram.bias_out".into(), b_out));
        }
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = vec![
            ("gram.depthwise".to_string(), &mut self.depthwise),
            ("gram.pointwise".to_string(), &mut self.pointwise),
        ];
        if let Some((b_mid, b_out)) = &mut self.bias {
            out.push(("gram.bias_mid".into(), b_mid));
            out.push(("gram.bias_out".into(), b_out));
        }
        out
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numcore::{gradcheck, GradcheckConfig};
    use rand::Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> Matrix {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Matrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
    }

    fn naive(g: &GramLayer, f: &Matrix) -> Matrix {
        let d = g.depthwise().value();
        let p = g.pointwise().value();
        let mid: Vec<f64> = (0..g.c_in())
            .map(|c| (0..g.n_units()).map(|n| d.get(c, n) * f.get(c, n)).sum())
            .collect();
        Matrix::from_fn(g.c_out(), 1, |o, _| {
            (0..g.c_in()).map(|c| p.get(o, c) * mid[c]).sum()
        })
    }

    fn set(p: &mut Param, m: Matrix) {
        p.assign(m).unwrap();
    }

    #[test]
    fn parameter_counts() {
        assert_eq!(GramLayer::standard(0).parameter_count(), 2_250_752);
        assert_eq!(GramLayer::new(1, 1, 1, 0).unwrap().parameter_count(), 2);
        assert_eq!(GramLayer::build(2, 3, 4, true, 0).unwrap().parameter_count(), 6 + 8 + 2 + 4);
    }

    #[test]
    fn ones_and_identity_reduce_to_row_sums() {
        let mut g = GramLayer::new(3, 4, 3, 0).unwrap();
        set(&mut g.depthwise, Matrix::ones(3, 4));
        set(&mut g.pointwise, Matrix::identity(3));
        let f = random_matrix(3, 4, 1);
        let out = g.apply(&f).unwrap();
        for c in 0..3 {
            let expected: f64 = f.row(c).iter().sum();
            assert!((out.get(c, 0) - expected).abs() < 1e-14);
        }
    }

    #[test]
    fn single_unit_is_elementwise_then_projection() {
        let g = GramLayer::new(4, 1, 2, 5).unwrap();
        let f = random_matrix(4, 1, 6);
        let mid = g.depthwise().value().zip_map(&f, |a, b| a * b).unwrap();
        let expected = g.pointwise().value().matmul(&mid).unwrap();
        assert!(g.apply(&f).unwrap().max_abs_diff(&expected) < 1e-15);
    }

    #[test]
    fn matches_loop_oracle() {
        let g = GramLayer::new(16, 10, 8, 7).unwrap();
        let f = random_matrix(16, 10, 8);
        assert!(g.apply(&f).unwrap().max_abs_diff(&naive(&g, &f)) < 1e-12);
    }

    #[test]
    fn linear_in_input() {
        let g = GramLayer::new(6, 5, 4, 9).unwrap();
        let (f1, f2) = (random_matrix(6, 5, 10), random_matrix(6, 5, 11));
        let (a, b) = (0.7, -1.3);
        let combo = f1.scale(a).add(&f2.scale(b)).unwrap();
        let lhs = g.apply(&combo).unwrap();
        let rhs = g.apply(&f1).unwrap().scale(a).add(&g.apply(&f2).unwrap().scale(b)).unwrap();
        assert!(lhs.max_abs_diff(&rhs) < 1e-10);
    }

    #[test]
    fn position_sensitive() {
        let g = GramLayer::new(6, 5, 4, 12).unwrap();
        let f = random_matrix(6, 5, 13);
        let permuted = f.permute_cols(&[4, 2, 0, 3, 1]);
        let diff = g.apply(&f).unwrap().max_abs_diff(&g.apply(&permuted).unwrap());
        assert!(diff > 1e-6);
    }

    #[test]
    fn shape_mismatch() {
        let g = GramLayer::new(6, 5, 4, 0).unwrap();
        assert!(matches!(g.apply(&Matrix::zeros(6, 4)), Err(OtsError::Shape { .. })));
        assert!(GramLayer::new(0, 5, 4, 0).is_err());
    }

    #[test]
    fn gradcheck_with_biases() {
        let mut g = GramLayer::build(5, 4, 3, true, 14).unwrap();
        let f = random_matrix(5, 4, 15);
        let w = random_matrix(3, 1, 16);
        let report = gradcheck(&mut g, &GradcheckConfig::default(), |g: &GramLayer, tape| {
            let fv = tape.constant(f.clone());
            let out = g.forward(tape, fv)?;
            let sq = tape.mul(out, out)?;
            let wv = tape.constant(w.clone());
            let weighted = tape.mul(sq, wv)?;
            Ok(tape.sum(weighted))
        })
        .unwrap();
        assert!(report.max_rel_error < 1e-5, "{report:?}");
    }
}
