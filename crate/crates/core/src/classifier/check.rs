use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::model::{cross_entropy, AggregatorKind, ModelConfig, OtsModel};
use crate::error::Result;
use crate::numcore::{derive_seed, gradcheck, GradcheckConfig, GradcheckReport, Matrix, Parameterized};
use crate::oam::{parse_alpha_chain, Fusion};

/// Shape of the model built by [`gradcheck_model`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradcheckSetup {
    pub channels: usize,
    pub objects: usize,
    pub classes: usize,
    pub alphas: String,
    pub aggregator: AggregatorKind,
    pub c_out: usize,
    /// Gate value written into every block before checking.
    pub gamma: f64,
    pub seed: u64,
}

impl Default for GradcheckSetup {
    fn default() -> Self {
        Self {
            channels: 32,
            objects: 12,
            classes: 3,
            alphas: "2,0.5".into(),
            aggregator: AggregatorKind::Gram,
            c_out: 16,
            gamma: 0.5,
            seed: 0,
        }
    }
}

impl GradcheckSetup {
    pub fn model_config(&self) -> Result<ModelConfig> {
        Ok(ModelConfig {
            channels: self.channels,
            objects: self.objects,
            alphas: parse_alpha_chain(&self.alphas)?,
            fusion: Fusion::Concat,
            oam_bias: false,
            aggregator: self.aggregator,
            c_out: self.c_out,
            classes: self.classes,
            gram_bias: false,
            relu: false,
        })
    }
}

/// Finite-difference check of the whole model under cross-entropy on one random sample.
pub fn gradcheck_model(setup: &GradcheckSetup, cfg: &GradcheckConfig) -> Result<GradcheckReport> {
    let mut model = OtsModel::new(setup.model_config()?, setup.seed)?;
    for block in model.oam_mut().blocks_mut() {
        block.gamma_param_mut().value_mut().fill(setup.gamma);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(setup.seed, 99));
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let x = Matrix::from_fn(setup.channels, setup.objects, |_, _| normal.sample(&mut rng));
    let label = (setup.seed % setup.classes.max(1) as u64) as usize;
    model.zero_grads();
    gradcheck(&mut model, cfg, |m: &OtsModel, tape| {
        let xv = tape.constant(x.clone());
        let logits = m.forward_var(tape, xv)?;
        cross_entropy(tape, logits, label)
    })
}
