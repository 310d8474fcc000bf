//! Class-conditional object co-occurrence scenes.
//!
//! Each class is a vector of per-object presence probabilities. A sample
//! draws its class uniformly, then each object independently; present
//! objects get that object's shared embedding plus Gaussian noise and
//! absent objects are zero columns. The class is only visible through
//! which objects appear together.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::dataset::SceneDataset;
use crate::error::{OtsError, Result};
use crate::numcore::{derive_seed, Matrix};
use crate::ofam::ObjectFeatures;

pub const DEFAULT_CLASSES: [&str; 7] = [
    "Bathroom",
    "Bedroom",
    "Corridor",
    "Dining room",
    "Kitchen",
    "Living room",
    "Office",
];

/// Generator settings. `presence` is `K x C'`, `object_embeddings` is `C x C'`.
#[derive(Clone, Debug, PartialEq)]
pub struct CooccurrenceSpec {
    pub class_names: Vec<String>,
    pub presence: Matrix,
    pub object_embeddings: Matrix,
    pub noise_sigma: f64,
    pub seed: u64,
}

/// Probabilities used by [`CooccurrenceSpec::structured`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PresenceLayout {
    /// Probability of the objects every class shares.
    pub shared: f64,
    /// Probability of a class's own signature objects.
    pub signature: f64,
    /// Probability of another class's signature objects.
    pub leak: f64,
    /// Probability of objects shared by neighbouring classes.
    pub neighbour: f64,
    /// Probability of every remaining object.
    pub background: f64,
}

impl Default for PresenceLayout {
    fn default() -> Self {
        Self {
            shared: 0.6,
            signature: 0.7,
            leak: 0.05,
            neighbour: 0.5,
            background: 0.02,
        }
    }
}

impl CooccurrenceSpec {
    /// The 7-class, 150-object, 1024-channel benchmark.
    pub fn default_spec() -> Self {
        let names = DEFAULT_CLASSES.iter().map(|s| s.to_string()).collect();
        Self::structured(names, 150, 1024, 0.1, 7, PresenceLayout::default())
            .expect("default spec is valid")
    }

    /// A 3-class, 12-object, 32-channel spec that trains in seconds.
    pub fn small(seed: u64) -> Self {
        let names = vec!["alpha".into(), "beta".into(), "gamma".into()];
        Self::structured(names, 12, 32, 0.1, seed, PresenceLayout::default()).expect("small spec is valid")
    }

    /// Builds a presence matrix from shared, signature and neighbour objects.
    ///
    /// Object slots are laid out as: `C'/15` (at least one) shared objects,
    /// up to four signature objects per class, one neighbour object per class
    /// (also likely in the next class), then background. Embeddings are
    /// standard normal, drawn from `seed`.
    pub fn structured(
        class_names: Vec<String>,
        objects: usize,
        channels: usize,
        noise_sigma: f64,
        seed: u64,
        layout: PresenceLayout,
    ) -> Result<Self> {
        let k = class_names.len();
        if k == 0 || channels == 0 {
            return Err(OtsError::Config("need at least one class and one channel".into()));
        }
        let shared = (objects / 15).max(1);
        let sig = ((objects.saturating_sub(shared + k)) / k).min(4);
        if sig == 0 {
            return Err(OtsError::Config(format!(
                "{objects} objects cannot hold signatures for {k} classes"
            )));
        }
        let sig_start = shared;
        let nb_start = sig_start + k * sig;
        let mut presence = Matrix::filled(k, objects, layout.background);
        for c in 0..k {
            for j in 0..shared {
                presence.set(c, j, layout.shared);
            }
            for owner in 0..k {
                let p = if owner == c { layout.signature } else { layout.leak };
                for s in 0..sig {
                    presence.set(c, sig_start + owner * sig + s, p);
                }
            }
            presence.set(c, nb_start + c, layout.neighbour);
            presence.set(c, nb_start + (c + k - 1) % k, layout.neighbour);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
        let normal = Normal::new(0.0, 1.0).expect("unit normal");
        let object_embeddings = Matrix::from_fn(channels, objects, |_, _| normal.sample(&mut rng));
        let spec = Self {
            class_names,
            presence,
            object_embeddings,
            noise_sigma,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn classes(&self) -> usize {
        self.presence.rows()
    }

    pub fn objects(&self) -> usize {
        self.presence.cols()
    }

    pub fn channels(&self) -> usize {
        self.object_embeddings.rows()
    }

    pub fn validate(&self) -> Result<()> {
        let (k, objects) = self.presence.shape();
        if k == 0 || objects == 0 {
            return Err(OtsError::Config("presence matrix is empty".into()));
        }
        if self.class_names.len() != k {
            return Err(OtsError::Config(format!(
                "{} class names for {k} presence rows",
                self.class_names.len()
            )));
        }
        if self.object_embeddings.cols() != objects || self.object_embeddings.rows() == 0 {
            return Err(OtsError::Config(format!(
                "embeddings are {}x{}, expected Cx{objects}",
                self.object_embeddings.rows(),
                self.object_embeddings.cols()
            )));
        }
        if let Some(p) = self.presence.as_slice().iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(OtsError::Config(format!("presence {p} outside [0, 1]")));
        }
        for a in 0..k {
            for b in a + 1..k {
                if self.presence.row(a) == self.presence.row(b) {
                    return Err(OtsError::Config(format!("classes {a} and {b} have identical presence")));
                }
            }
        }
        if !(self.noise_sigma >= 0.0 && self.noise_sigma.is_finite()) {
            return Err(OtsError::Config(format!("noise sigma {} must be nonnegative", self.noise_sigma)));
        }
        Ok(())
    }
}

/// Draws `n_samples` scenes. Depends only on `spec` and `n_samples`.
pub fn generate_synthetic(spec: &CooccurrenceSpec, n_samples: usize) -> Result<SceneDataset> {
    spec.validate()?;
    let (k, objects, channels) = (spec.classes(), spec.objects(), spec.channels());
    let mut ds = SceneDataset::new(channels, objects, spec.class_names.clone())?;
    let noise = Normal::new(0.0, spec.noise_sigma).expect("validated sigma");
    for i in 0..n_samples {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(spec.seed, i as u64));
        let y = rng.random_range(0..k);
        let present: Vec<bool> = (0..objects).map(|j| rng.random_bool(spec.presence.get(y, j))).collect();
        let mut m = Matrix::zeros(channels, objects);
        for (j, &p) in present.iter().enumerate() {
            if p {
                for c in 0..channels {
                    m.set(c, j, spec.object_embeddings.get(c, j) + noise.sample(&mut rng));
                }
            }
        }
        ds.push(&ObjectFeatures::new(m, present)?, y)?;
    }
    Ok(ds)
}
