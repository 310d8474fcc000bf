//! Dense matrices, a reverse-mode tape, and a finite-difference checker.

pub mod gradcheck;
mod matrix;
mod param;
mod tape;

pub use gradcheck::{gradcheck, GradcheckConfig, GradcheckReport};
pub use matrix::Matrix;
pub use param::{derive_seed, glorot_uniform, Param, ParamId, Parameterized};
pub use tape::{Grads, Tape, Var};

impl Parameterized for Vec<Param> {
    fn named_params(&self) -> Vec<(String, &Param)> {
        self.iter().enumerate().map(|(i, p)| (format!("p{i}"), p)).collect()
    }

    fn named_params_mut(&mut self) -> Vec<(String, &mut Param)> {
        self.iter_mut()
            .enumerate()
            .map(|(i, p)| (format!("p{i}"), p))
            .collect()
    }
}
