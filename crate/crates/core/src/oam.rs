//! Object attention: cascaded blocks relating object columns to each other.
//!
//! A block projects its input `F` (c_in x N) to values `V = Wv F`
//! (c_v x N), derives queries and keys from `V` rather than from `F`
//! (`Q = Wq V`, `K = Wk V`), forms the column-stochastic
//! attention `beta = softmax_cols(Q^T K)` and outputs
//! `concat_rows(gamma * V beta, V)`. With `c_v = c_in / (2 alpha)` the
//! output has `c_in / alpha` channels, so `alpha` compresses (or widens)
//! the representation as blocks are chained.
//!
//! Blocks can optionally carry a bias on each of the three projections.
//! The query bias never changes the output: it shifts every entry of a
//! softmax column by the same amount.

use std::fmt;
use std::str::FromStr;

use num_rational::Ratio;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{OtsError, Result};
use crate::numcore::{derive_seed, glorot_uniform, Matrix, Param, Parameterized, Tape, Var};

/// Exact positive compression factor.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Alpha(Ratio<u64>);

impl Alpha {
    pub fn new(numer: u64, denom: u64) -> Result<Self> {
        if numer == 0 || denom == 0 {
            return Err(OtsError::Config(format!("alpha must be positive, got {numer}/{denom}")));
        }
        Ok(Alpha(Ratio::new(numer, denom)))
    }

    pub fn integer(n: u64) -> Result<Self> {
        Self::new(n, 1)
    }

    pub fn numer(&self) -> u64 {
        *self.0.numer()
    }

    pub fn denom(&self) -> u64 {
        *self.0.denom()
    }

    /// `c_in / (2 alpha)` when it is a positive integer.
    pub fn value_channels(&self, c_in: usize) -> Result<usize> {
        let num = c_in as u64 * self.denom();
        let den = 2 * self.numer();
        if c_in == 0 || !num.is_multiple_of(den) {
            return Err(OtsError::Config(format!(
                "c_in={c_in} with alpha={self} gives a non-integral value width c_in/(2*alpha)"
            )));
        }
        Ok((num / den) as usize)
    }
}

impl fmt::Display for Alpha {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.denom() == 1 {
            write!(f, "{}", self.numer())
        } else {
            write!(f, "{}/{}", self.numer(), self.denom())
        }
    }
}

impl FromStr for Alpha {
    type Err = OtsError;

    /// Accepts `2`, `1/2` and terminating decimals such as `0.5`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let bad = || OtsError::Config(format!("cannot parse alpha from {s:?}"));
        if let Some((n, d)) = s.split_once('/') {
            let n: u64 = n.trim().parse().map_err(|_| bad())?;
            let d: u64 = d.trim().parse().map_err(|_| bad())?;
            return Alpha::new(n, d);
        }
        if let Some((whole, frac)) = s.split_once('.') {
            if frac.is_empty() || frac.len() > 12 || !frac.bytes().all(|b| b.is_ascii_digit()) {
                return Err(bad());
            }
            let whole: u64 = if whole.is_empty() { 0 } else { whole.parse().map_err(|_| bad())? };
            let denom = 10u64.pow(frac.len() as u32);
            let frac: u64 = frac.parse().map_err(|_| bad())?;
            return Alpha::new(whole * denom + frac, denom);
        }
        Alpha::integer(s.parse().map_err(|_| bad())?)
    }
}

/// Parses a comma-separated alpha chain such as `2,0.5`.
pub fn parse_alpha_chain(s: &str) -> Result<Vec<Alpha>> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(str::parse).collect()
}

/// How the attention path and the value path are combined.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Fusion {
    /// `concat_rows(gamma * V beta, V)`: 2 c_v output channels.
    #[default]
    Concat,
    /// `gamma * V beta + V`: c_v output channels.
    Sum,
}

impl fmt::Display for Fusion {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Fusion::Concat => "concat",
            Fusion::Sum => "sum",
        })
    }
}

impl FromStr for Fusion {
    type Err = OtsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "concat" | "cat" => Ok(Fusion::Concat),
            "sum" => Ok(Fusion::Sum),
            other => Err(OtsError::Config(format!("unknown fusion {other:?}"))),
        }
    }
}

#[derive(Clone, Debug)]
pub struct ObjectAttentionBlock {
    c_in: usize,
    alpha: Alpha,
    c_v: usize,
    fusion: Fusion,
    wv: Param,
    bv: Option<Param>,
    wq: Param,
    bq: Option<Param>,
    wk: Param,
    bk: Option<Param>,
    gamma: Param,
}

impl ObjectAttentionBlock {
    pub fn new(c_in: usize, alpha: Alpha, seed: u64) -> Result<Self> {
        Self::with_fusion(c_in, alpha, Fusion::Concat, seed)
    }

    pub fn with_fusion(c_in: usize, alpha: Alpha, fusion: Fusion, seed: u64) -> Result<Self> {
        Self::build(c_in, alpha, fusion, false, seed)
    }

    /// Full constructor; `bias` adds zero-initialized V, Q and K biases.
    pub fn build(c_in: usize, alpha: Alpha, fusion: Fusion, bias: bool, seed: u64) -> Result<Self> {
        let c_v = alpha.value_channels(c_in)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let wv = Param::new(glorot_uniform(c_v, c_in, c_in, c_v, &mut rng));
        let wq = Param::new(glorot_uniform(c_v, c_v, c_v, c_v, &mut rng));
        let wk = Param::new(glorot_uniform(c_v, c_v, c_v, c_v, &mut rng));
        let b = || bias.then(|| Param::exempt(Matrix::zeros(c_v, 1)));
        Ok(Self {
            c_in,
            alpha,
            c_v,
            fusion,
            wv,
            bv: b(),
            wq,
            bq: b(),
            wk,
            bk: b(),
            gamma: Param::exempt(Matrix::zeros(1, 1)),
        })
    }

    pub fn c_in(&self) -> usize {
        self.c_in
    }

    pub fn alpha(&self) -> Alpha {
        self.alpha
    }

    pub fn value_channels(&self) -> usize {
        self.c_v
    }

    pub fn fusion(&self) -> Fusion {
        self.fusion
    }

    pub fn has_bias(&self) -> bool {
        self.bv.is_some()
    }

    pub fn output_channels(&self) -> usize {
        match self.fusion {
            Fusion::Concat => 2 * self.c_v,
            Fusion::Sum => self.c_v,
        }
    }

    pub fn gamma(&self) -> f64 {
        self.gamma.value().get(0, 0)
    }

    pub fn gamma_param_mut(&mut self) -> &mut Param {
        &mut self.gamma
    }

    pub fn wq_mut(&mut self) -> &mut Param {
        &mut self.wq
    }

    pub fn wk_mut(&mut self) -> &mut Param {
        &mut self.wk
    }

    pub fn wv(&self) -> &Param {
        &self.wv
    }

    /// Intermediate handles from a taped forward pass.
    pub fn forward_parts<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<BlockParts> {
        let (rows, n) = tape.value(x).shape();
        if rows != self.c_in {
            return Err(OtsError::shape(
                "oab_forward",
                format!("block expects {} input channels, got {rows}", self.c_in),
            ));
        }
        let ones = tape.constant(Matrix::ones(1, n));
        let v = affine(tape, &self.wv, self.bv.as_ref(), x, ones)?;
        let q = affine(tape, &self.wq, self.bq.as_ref(), v, ones)?;
        let k = affine(tape, &self.wk, self.bk.as_ref(), v, ones)?;

        // (Q^T K)[i, j] = q_i . k_j; softmax over i makes each column a
        // distribution over source objects for target object j.
        let logits = tape.matmul_tn(q, k)?;
        let beta = tape.softmax_cols(logits);
        let attended = tape.matmul(v, beta)?;
        let gamma = tape.param(&self.gamma);
        let gated = tape.scale_by(attended, gamma)?;
        let out = match self.fusion {
            Fusion::Concat => tape.concat_rows(gated, v)?,
            Fusion::Sum => tape.add(gated, v)?,
        };
        Ok(BlockParts {
            v,
            q,
            k,
            beta,
            out,
        })
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        Ok(self.forward_parts(tape, x)?.out)
    }

    /// Untaped forward on a plain matrix.
    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let out = self.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

/// Node handles of one block's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct BlockParts {
    pub v: Var,
    pub q: Var,
    pub k: Var,
    pub beta: Var,
    pub out: Var,
}

fn affine<'a>(tape: &mut Tape<'a>, w: &'a Param, b: Option<&'a Param>, x: Var, ones: Var) -> Result<Var> {
    let wv = tape.param(w);
    let wx = tape.matmul(wv, x)?;
    match b {
        Some(b) => {
            let bv = tape.param(b);
            let bias = tape.matmul(bv, ones)?;
            tape.add(wx, bias)
        }
        None => Ok(wx),
    }
}

impl Parameterized for ObjectAttentionBlock {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = vec![("Wv".into(), &self.wv)];
        out.extend(self.bv.as_ref().map(|p| ("bv".into(), p)));
        out.push(("Wq".into(), &self.wq));
        out.extend(self.bq.as_ref().map(|p| ("bq".into(), p)));
        out.push(("Wk".into(), &self.wk));
        out.extend(self.bk.as_ref().map(|p| ("bk".into(), p)));
        out.push(("gamma".into(), &self.gamma));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = vec![("Wv".into(), &mut self.wv)];
        out.extend(self.bv.as_mut().map(|p| ("bv".into(), p)));
        out.push(("Wq".into(), &mut self.wq));
        out.extend(self.bq.as_mut().map(|p| ("bq".into(), p)));
        out.push(("Wk".into(), &mut self.wk));
        out.extend(self.bk.as_mut().map(|p| ("bk".into(), p)));
        out.push(("gamma".into(), &mut self.gamma));
        out
    }
}

/// Blocks applied in sequence; block `t + 1` consumes block `t`'s output.
#[derive(Clone, Debug, Default)]
pub struct OamStack {
    blocks: Vec<ObjectAttentionBlock>,
}

impl OamStack {
    /// Chains blocks starting from `c_in` channels, one per alpha.
    pub fn new(c_in: usize, alphas: &[Alpha], fusion: Fusion, seed: u64) -> Result<Self> {
        Self::build(c_in, alphas, fusion, false, seed)
    }

    /// As [`OamStack::new`], with projection biases in every block when `bias` is set.
    pub fn build(c_in: usize, alphas: &[Alpha], fusion: Fusion, bias: bool, seed: u64) -> Result<Self> {
        let mut blocks = Vec::with_capacity(alphas.len());
        let mut channels = c_in;
        for (t, &alpha) in alphas.iter().enumerate() {
            let block =
                ObjectAttentionBlock::build(channels, alpha, fusion, bias, derive_seed(seed, t as u64))?;
            channels = block.output_channels();
            blocks.push(block);
        }
        Ok(Self { blocks })
    }

    /// Two concatenating blocks with alpha = (2, 0.5) over 1024 channels.
    pub fn standard(seed: u64) -> Self {
        let alphas = [Alpha::integer(2).unwrap(), Alpha::new(1, 2).unwrap()];
        Self::new(1024, &alphas, Fusion::Concat, seed).expect("1024 -> 512 -> 1024 is valid")
    }

    pub fn empty() -> Self {
        Self::default()
    }

    pub fn blocks(&self) -> &[ObjectAttentionBlock] {
        &self.blocks
    }

    pub fn blocks_mut(&mut self) -> &mut [ObjectAttentionBlock] {
        &mut self.blocks
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn alphas(&self) -> Vec<Alpha> {
        self.blocks.iter().map(|b| b.alpha()).collect()
    }

    /// Input channel count, or `None` for an empty stack.
    pub fn input_channels(&self) -> Option<usize> {
        self.blocks.first().map(|b| b.c_in())
    }

    /// Output channels given `c_in` input channels (identity when empty).
    pub fn output_channels(&self, c_in: usize) -> usize {
        self.blocks.last().map_or(c_in, |b| b.output_channels())
    }

    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, x: Var) -> Result<Var> {
        let mut h = x;
        for block in &self.blocks {
            h = block.forward(tape, h)?;
        }
        Ok(h)
    }

    pub fn apply(&self, x: &Matrix) -> Result<Matrix> {
        let mut tape = Tape::new();
        let xv = tape.input(x);
        let out = self.forward(&mut tape, xv)?;
        Ok(tape.value(out).clone())
    }
}

impl Parameterized for OamStack {
    fn named_params(&self) -> Vec<(String, &Param)> {
        self.blocks
            .iter()
            .enumerate()
            .flat_map(|(t, b)| {
                b.named_params()
                    .into_iter()
                    .map(move |(n, p)| (format!("oam.{t}.{n}"), p))
            })
            .collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.blocks
            .iter_mut()
            .enumerate()
            .flat_map(|(t, b)| {
                b.named_params_mut()
                    .into_iter()
                    .map(move |(n, p)| (format!("oam.{t}.{n}"), p))
            })
            .collect()
    }
}
