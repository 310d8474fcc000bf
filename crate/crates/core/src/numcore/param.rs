use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;

use super::Matrix;

static NEXT_PARAM_ID: AtomicU64 = AtomicU64::new(1);

/// Process-unique handle linking a tape leaf back to its [`Param`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(u64);

impl ParamId {
    fn fresh() -> Self {
        ParamId(NEXT_PARAM_ID.fetch_add(1, Ordering::Relaxed))
    }
}

/// A learnable tensor together with its accumulated gradient.
#[derive(Clone, Debug)]
pub struct Param {
    id: ParamId,
    value: Matrix,
    grad: Matrix,
    decay_exempt: bool,
}

impl Param {
    pub fn new(value: Matrix) -> Self {
        let grad = Matrix::zeros(value.rows(), value.cols());
        Self {
            id: ParamId::fresh(),
            value,
            grad,
            decay_exempt: false,
        }
    }

    /// A parameter the optimizer never applies weight decay to (gates, biases).
    pub fn exempt(value: Matrix) -> Self {
        Self {
            decay_exempt: true,
            ..Self::new(value)
        }
    }

    pub fn id(&self) -> ParamId {
        self.id
    }

    pub fn value(&self) -> &Matrix {
        &self.value
    }

    pub fn value_mut(&mut self) -> &mut Matrix {
        &mut self.value
    }

    pub fn grad(&self) -> &Matrix {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut Matrix {
        &mut self.grad
    }

    pub fn decay_exempt(&self) -> bool {
        self.decay_exempt
    }

    pub fn shape(&self) -> (usize, usize) {
        self.value.shape()
    }

    pub fn len(&self) -> usize {
        self.value.len()
    }

    pub fn is_empty(&self) -> bool {
        self.value.is_empty()
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    /// Replaces the value, keeping identity. Shape must be unchanged.
    pub fn assign(&mut self, value: Matrix) -> crate::Result<()> {
        if value.shape() != self.value.shape() {
            return Err(crate::OtsError::shape(
                "assign",
                format!("{:?} into {:?}", value.shape(), self.value.shape()),
            ));
        }
        self.value = value;
        Ok(())
    }
}

/// Anything that owns named parameters.
pub trait Parameterized {
    /// Parameters in a fixed, deterministic order with their checkpoint names.
    fn named_params(&self) -> Vec<(String, &Param)>;

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)>;

    fn params(&self) -> Vec<&Param> {
        self.named_params().into_iter().map(|(_, p)| p).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param> {
        self.named_params_mut().into_iter().map(|(_, p)| p).collect()
    }

    fn zero_grads(&mut self) {
        for p in self.params_mut() {
            p.zero_grad();
        }
    }

    /// Number of stored learnable scalars.
    fn parameter_count(&self) -> u64 {
        self.params().iter().map(|p| p.len() as u64).sum()
    }
}

/// Uniform initialization in `±sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_uniform<R: Rng + ?Sized>(
    rows: usize,
    cols: usize,
    fan_in: usize,
    fan_out: usize,
    rng: &mut R,
) -> Matrix {
    let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
    Matrix::from_fn(rows, cols, |_, _| rng.random_range(-limit..=limit))
}

/// Derives an independent stream seed for sub-component `index`.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    // splitmix64 finalizer
    let mut z = seed ^ index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
