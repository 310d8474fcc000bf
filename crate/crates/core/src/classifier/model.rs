use std::fmt;
use std::str::FromStr;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{OtsError, Result};
use crate::gram::GramLayer;
use crate::numcore::{derive_seed, glorot_uniform, Matrix, Param, Parameterized, Tape, Var};
use crate::oam::{parse_alpha_chain, Alpha, Fusion, OamStack};
use crate::ofam::ObjectFeatures;

/// Which layer collapses the object axis before the head.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum AggregatorKind {
    #[default]
    Gram,
    /// Flatten and a dense map; equivalent to a full-size convolution kernel.
    Fc,
    /// Per-channel max and mean over objects, concatenated.
    MaxAvgPool,
}

impl fmt::Display for AggregatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AggregatorKind::Gram => "gram",
            AggregatorKind::Fc => "fc",
            AggregatorKind::MaxAvgPool => "pool",
        })
    }
}

impl FromStr for AggregatorKind {
    type Err = OtsError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gram" => Ok(Self::Gram),
            "fc" => Ok(Self::Fc),
            "pool" => Ok(Self::MaxAvgPool),
            other => Err(OtsError::Config(format!("unknown aggregator {other:?}"))),
        }
    }
}

/// Everything needed to rebuild a model's shapes.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub channels: usize,
    pub objects: usize,
    pub alphas: Vec<Alpha>,
    pub fusion: Fusion,
    /// Biases on the attention projections.
    pub oam_bias: bool,
    pub aggregator: AggregatorKind,
    /// Representation width produced by GRAM or FC.
    pub c_out: usize,
    pub classes: usize,
    pub gram_bias: bool,
    /// Rectifier between the aggregator and the head.
    pub relu: bool,
}

impl ModelConfig {
    /// 1024 channels, 150 objects, alpha = (2, 0.5), GRAM to 2048.
    pub fn standard(classes: usize) -> Self {
        Self {
            channels: 1024,
            objects: 150,
            alphas: vec![Alpha::integer(2).unwrap(), Alpha::new(1, 2).unwrap()],
            fusion: Fusion::Concat,
            oam_bias: false,
            aggregator: AggregatorKind::Gram,
            c_out: 2048,
            classes,
            gram_bias: false,
            relu: false,
        }
    }

    /// Plain-text `key = value` form, one entry per line.
    pub fn to_text(&self) -> String {
        let alphas: Vec<String> = self.alphas.iter().map(|a| a.to_string()).collect();
        format!(
            "channels = {}\nobjects = {}\nalphas = {}\nfusion = {}\noam_bias = {}\naggregator = {}\nc_out = {}\nclasses = {}\ngram_bias = {}\nrelu = {}\n",
            self.channels,
            self.objects,
            alphas.join(","),
            self.fusion,
            self.oam_bias,
            self.aggregator,
            self.c_out,
            self.classes,
            self.gram_bias,
            self.relu
        )
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::standard(0);
        let mut seen = 0;
        for line in text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#')) {
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| OtsError::Config(format!("malformed config line {line:?}")))?;
            let (key, value) = (key.trim(), value.trim());
            let num = |v: &str| {
                v.parse::<usize>()
                    .map_err(|_| OtsError::Config(format!("{key} must be an integer, got {v:?}")))
            };
            let flag = |v: &str| {
                v.parse::<bool>()
                    .map_err(|_| OtsError::Config(format!("{key} must be true/false, got {v:?}")))
            };
            match key {
                "channels" => cfg.channels = num(value)?,
                "objects" => cfg.objects = num(value)?,
                "alphas" => cfg.alphas = parse_alpha_chain(value)?,
                "fusion" => cfg.fusion = value.parse()?,
                "oam_bias" => cfg.oam_bias = flag(value)?,
                "aggregator" => cfg.aggregator = value.parse()?,
                "c_out" => cfg.c_out = num(value)?,
                "classes" => cfg.classes = num(value)?,
                "gram_bias" => cfg.gram_bias = flag(value)?,
                "relu" => cfg.relu = flag(value)?,
                other => return Err(OtsError::Config(format!("unknown config key {other:?}"))),
            }
            seen += 1;
        }
        if seen == 0 {
            return Err(OtsError::Config("empty model config".into()));
        }
        Ok(cfg)
    }
}

/// Dense map over the flattened `C x N` features.
#[derive(Clone, Debug)]
pub struct FlattenLinear {
    weight: Param,
}

impl FlattenLinear {
    pub fn new(c: usize, n: usize, c_out: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Self {
            weight: Param::new(glorot_uniform(c_out, c * n, c * n, c_out, &mut rng)),
        }
    }

    /// Zero-filled weights; allocation is lazy, so this stays cheap even
    /// at full size when only the shape matters.
    pub fn zeros(c: usize, n: usize, c_out: usize) -> Self {
        Self {
            weight: Param::new(Matrix::zeros(c_out, c * n)),
        }
    }
}

impl Parameterized for FlattenLinear {
    fn named_params(&self) -> Vec<(String, &Param)> {
        vec![("fc.weight".into(), &self.weight)]
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        vec![("fc.weight".into(), &mut self.weight)]
    }
}

#[derive(Clone, Debug)]
pub enum Aggregator {
    Gram(GramLayer),
    Fc(FlattenLinear),
    MaxAvgPool,
}

impl Aggregator {
    /// Collapses the `C x N` object axis into one column.
    pub fn forward<'a>(&'a self, tape: &mut Tape<'a>, h: Var) -> Result<Var> {
        match self {
            Aggregator::Gram(g) => g.forward(tape, h),
            Aggregator::Fc(fc) => {
                let (c, n) = tape.value(h).shape();
                let flat = tape.reshape(h, c * n, 1)?;
                let w = tape.param(&fc.weight);
                tape.matmul(w, flat)
            }
            Aggregator::MaxAvgPool => {
                let n = tape.value(h).cols();
                let max = tape.max_rows(h)?;
                let sum = tape.sum_rows(h);
                let mean = tape.scale(sum, 1.0 / n as f64);
                tape.concat_rows(max, mean)
            }
        }
    }
}

impl Parameterized for Aggregator {
    fn named_params(&self) -> Vec<(String, &Param)> {
        match self {
            Aggregator::Gram(g) => g.named_params(),
            Aggregator::Fc(fc) => fc.named_params(),
            Aggregator::MaxAvgPool => Vec::new(),
        }
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        match self {
            Aggregator::Gram(g) => g.named_params_mut(),
            Aggregator::Fc(fc) => fc.named_params_mut(),
            Aggregator::MaxAvgPool => Vec::new(),
        }
    }
}

/// Object attention, aggregation and a linear recognition head.
#[derive(Clone, Debug)]
pub struct OtsModel {
    config: ModelConfig,
    oam: OamStack,
    aggregator: Aggregator,
    head_weight: Param,
    head_bias: Param,
}

impl OtsModel {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        if config.classes == 0 || config.channels == 0 || config.objects == 0 {
            return Err(OtsError::Config(
                "classes, channels and objects must all be positive".into(),
            ));
        }
        let oam = OamStack::build(
            config.channels,
            &config.alphas,
            config.fusion,
            config.oam_bias,
            derive_seed(seed, 0),
        )?;
        let width = oam.output_channels(config.channels);
        let (aggregator, rep) = match config.aggregator {
            AggregatorKind::Gram => (
                Aggregator::Gram(GramLayer::build(
                    width,
                    config.objects,
                    config.c_out,
                    config.gram_bias,
                    derive_seed(seed, 1),
                )?),
                config.c_out,
            ),
            AggregatorKind::Fc => (
                Aggregator::Fc(FlattenLinear::new(width, config.objects, config.c_out, derive_seed(seed, 1))),
                config.c_out,
            ),
            AggregatorKind::MaxAvgPool => (Aggregator::MaxAvgPool, 2 * width),
        };
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
        let head_weight = Param::new(glorot_uniform(config.classes, rep, rep, config.classes, &mut rng));
        let head_bias = Param::exempt(Matrix::zeros(config.classes, 1));
        Ok(Self {
            config,
            oam,
            aggregator,
            head_weight,
            head_bias,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn oam(&self) -> &OamStack {
        &self.oam
    }

    pub fn oam_mut(&mut self) -> &mut OamStack {
        &mut self.oam
    }

    pub fn aggregator(&self) -> &Aggregator {
        &self.aggregator
    }

    pub fn classes(&self) -> usize {
        self.config.classes
    }

    pub fn head_weight(&self) -> &Param {
        &self.head_weight
    }

    /// Width of the vector handed to the head.
    pub fn representation_width(&self) -> usize {
        self.head_weight.value().cols()
    }

    /// Taped logits (`K x 1`) for one `C x C'` object-feature matrix.
    pub fn forward_logits<'a>(&'a self, tape: &mut Tape<'a>, x: &'a Matrix) -> Result<Var> {
        let expected = (self.config.channels, self.config.objects);
        if x.shape() != expected {
            return Err(OtsError::shape(
                "forward_logits",
                format!(
                    "model expects {}x{} object features, got {}x{}",
                    expected.0,
                    expected.1,
                    x.rows(),
                    x.cols()
                ),
            ));
        }
        let xv = tape.input(x);
        self.forward_var(tape, xv)
    }

    /// [`OtsModel::forward_logits`] for features already on the tape.
    pub fn forward_var<'a>(&'a self, tape: &mut Tape<'a>, xv: Var) -> Result<Var> {
        let h = self.oam.forward(tape, xv)?;
        let mut rep = self.aggregator.forward(tape, h)?;
        if self.config.relu {
            rep = tape.relu(rep);
        }
        let w = tape.param(&self.head_weight);
        let b = tape.param(&self.head_bias);
        let z = tape.matmul(w, rep)?;
        tape.add(z, b)
    }

    /// Untaped logits.
    pub fn logits(&self, x: &ObjectFeatures) -> Result<Matrix> {
        let mut tape = Tape::new();
        let out = self.forward_logits(&mut tape, x.matrix())?;
        Ok(tape.value(out).clone())
    }

    pub fn predict(&self, x: &ObjectFeatures) -> Result<usize> {
        Ok(argmax(self.logits(x)?.as_slice()))
    }
}

impl Parameterized for OtsModel {
    fn named_params(&self) -> Vec<(String, &Param)> {
        let mut out = self.oam.named_params();
        out.extend(self.aggregator.named_params());
        out.push(("head.weight".into(), &self.head_weight));
        out.push(("head.bias".into(), &self.head_bias));
        out
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        let mut out = self.oam.named_params_mut();
        out.extend(self.aggregator.named_params_mut());
        out.push(("head.weight".into(), &mut self.head_weight));
        out.push(("head.bias".into(), &mut self.head_bias));
        out
    }
}

/// Index of the first maximal entry.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

/// `-log softmax(logits)[label]` via log-sum-exp.
pub fn cross_entropy(tape: &mut Tape<'_>, logits: Var, label: usize) -> Result<Var> {
    let (k, cols) = tape.value(logits).shape();
    if cols != 1 {
        return Err(OtsError::shape("cross_entropy", format!("logits must be Kx1, got {k}x{cols}")));
    }
    if label >= k {
        return Err(OtsError::Usage(format!("label {label} out of range for {k} classes")));
    }
    let log_p = tape.log_softmax_cols(logits);
    let mut onehot = Matrix::zeros(k, 1);
    onehot.set(label, 0, 1.0);
    let mask = tape.constant(onehot);
    let picked = tape.mul(log_p, mask)?;
    let total = tape.sum(picked);
    Ok(tape.scale(total, -1.0))
}
