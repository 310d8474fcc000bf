//! Central finite-difference gradient checker.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::param::derive_seed;
use super::{Grads, Parameterized, Tape, Var};
use crate::error::Result;

#[derive(Clone, Copy, Debug)]
pub struct GradcheckConfig {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates sampled per parameter tensor (all of them when fewer).
    pub coords_per_param: usize,
    pub seed: u64,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        Self {
            step: 1e-5,
            coords_per_param: 32,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct ParamCheck {
    pub name: String,
    pub coords_checked: usize,
    pub max_rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct GradcheckReport {
    pub max_rel_error: f64,
    pub params: Vec<ParamCheck>,
}

impl GradcheckReport {
    pub fn coords_checked(&self) -> usize {
        self.params.iter().map(|p| p.coords_checked).sum()
    }
}

/// `|a - n| / max(1e-8, |a| + |n|)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-8)
}

/// Evaluates the scalar loss without a backward sweep.
pub fn eval_loss<M, F>(model: &M, f: &F) -> Result<f64>
where
    F: for<'a> Fn(&'a M, &mut Tape<'a>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(model, &mut tape)?;
    Ok(tape.scalar(loss))
}

pub fn analytic_grads<M, F>(model: &M, f: &F) -> Result<Grads>
where
    F: for<'a> Fn(&'a M, &mut Tape<'a>) -> Result<Var>,
{
    let mut tape = Tape::new();
    let loss = f(model, &mut tape)?;
    tape.backward(loss)
}

/// Compares supplied gradients against central differences.
pub fn check_against<M, F>(
    model: &mut M,
    grads: &Grads,
    cfg: &GradcheckConfig,
    f: &F,
) -> Result<GradcheckReport>
where
    M: Parameterized,
    F: for<'a> Fn(&'a M, &mut Tape<'a>) -> Result<Var>,
{
    let meta: Vec<(String, usize, super::ParamId)> = model
        .named_params()
        .into_iter()
        .map(|(name, p)| (name, p.len(), p.id()))
        .collect();

    let mut report = GradcheckReport {
        max_rel_error: 0.0,
        params: Vec::with_capacity(meta.len()),
    };
    for (pi, (name, len, id)) in meta.into_iter().enumerate() {
        let coords: Vec<usize> = if len <= cfg.coords_per_param {
            (0..len).collect()
        } else {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, pi as u64));
            let mut picked = index::sample(&mut rng, len, cfg.coords_per_param).into_vec();
            picked.sort_unstable();
            picked
        };
        let analytic = grads.get(id);
        let mut worst = 0.0f64;
        for &k in &coords {
            let original = model.params()[pi].value().as_slice()[k];
            set_coord(model, pi, k, original + cfg.step);
            let plus = eval_loss(model, f)?;
            set_coord(model, pi, k, original - cfg.step);
            let minus = eval_loss(model, f)?;
            set_coord(model, pi, k, original);

            let numeric = (plus - minus) / (2.0 * cfg.step);
            let a = analytic.map_or(0.0, |g| g.as_slice()[k]);
            worst = worst.max(relative_error(a, numeric));
        }
        report.max_rel_error = report.max_rel_error.max(worst);
        report.params.push(ParamCheck {
            name,
            coords_checked: coords.len(),
            max_rel_error: worst,
        });
    }
    Ok(report)
}

/// Backward sweep followed by [`check_against`].
pub fn gradcheck<M, F>(model: &mut M, cfg: &GradcheckConfig, f: F) -> Result<GradcheckReport>
where
    M: Parameterized,
    F: for<'a> Fn(&'a M, &mut Tape<'a>) -> Result<Var>,
{
    let grads = analytic_grads(model, &f)?;
    check_against(model, &grads, cfg, &f)
}

fn set_coord<M: Parameterized>(model: &mut M, param: usize, k: usize, v: f64) {
    let mut params = model.params_mut();
    params[param].value_mut().as_mut_slice()[k] = v;
}
