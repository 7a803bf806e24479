//! Adversarial, cycle-consistency and identity losses.
//!
//! Discriminators emit raw logits. In least-squares mode the targets are
//! 1 (real) and 0 (fake) on the logits themselves; in log mode the logits go
//! through a sigmoid, written with softplus for stability:
//! `-ln σ(z) = softplus(-z)` and `-ln(1 - σ(z)) = softplus(z)`.

use std::fmt;
use std::str::FromStr;

use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum LossMode {
    #[default]
    LeastSquares,
    Log,
}

impl fmt::Display for LossMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossMode::LeastSquares => "lsgan",
            LossMode::Log => "log",
        })
    }
}

impl FromStr for LossMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lsgan" | "least_squares" => Ok(LossMode::LeastSquares),
            "log" => Ok(LossMode::Log),
            other => Err(Error::Config(format!("unknown loss mode `{other}` (expected lsgan or log)"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossWeights {
    pub lambda_cycle: f32,
    pub lambda_identity: f32,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda_cycle: 10.0,
            lambda_identity: 0.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda_cycle >= 0.0 && self.lambda_identity >= 0.0) {
            return Err(Error::InvalidArgument(format!("loss weights must be >= 0, got {self:?}")));
        }
        Ok(())
    }
}

/// `mean((z - target)^2)`.
fn squared_distance(tape: &Tape, z: &Var, target: f32) -> Result<Var> {
    let t = Var::constant(Tensor::full(z.shape(), target));
    let d = tape.sub(z, &t)?;
    let sq = tape.square(&d)?;
    tape.reduce_mean(&sq)
}

/// `mean(-ln σ(z))`
fn neg_log_sigmoid(tape: &Tape, z: &Var) -> Result<Var> {
    let nz = tape.neg(z)?;
    let sp = tape.softplus(&nz)?;
    tape.reduce_mean(&sp)
}

/// `mean(-ln(1 - σ(z)))`
fn neg_log_one_minus_sigmoid(tape: &Tape, z: &Var) -> Result<Var> {
    let sp = tape.softplus(z)?;
    tape.reduce_mean(&sp)
}

/// Generator side of the adversarial game: push fake logits toward "real".
pub fn adversarial_g_loss(tape: &Tape, d_fake: &Var, mode: LossMode) -> Result<Var> {
    match mode {
        LossMode::LeastSquares => squared_distance(tape, d_fake, 1.0),
        LossMode::Log => neg_log_sigmoid(tape, d_fake),
    }
}

/// Discriminator loss, halved. `d_fake_pooled` should be computed from a
/// detached image so no gradient reaches the generator.
pub fn adversarial_d_loss(tape: &Tape, d_real: &Var, d_fake_pooled: &Var, mode: LossMode) -> Result<Var> {
    let (real, fake) = match mode {
        LossMode::LeastSquares => (squared_distance(tape, d_real, 1.0)?, squared_distance(tape, d_fake_pooled, 0.0)?),
        LossMode::Log => (neg_log_sigmoid(tape, d_real)?, neg_log_one_minus_sigmoid(tape, d_fake_pooled)?),
    };
    let sum = tape.add(&real, &fake)?;
    tape.scale(&sum, 0.5)
}

fn l1(tape: &Tape, a: &Var, b: &Var) -> Result<Var> {
    let d = tape.sub(a, b)?;
    let ad = tape.abs(&d)?;
    tape.reduce_mean(&ad)
}

/// `mean|F(G(x)) - x| + mean|G(F(y)) - y|`.
pub fn cycle_loss(tape: &Tape, x: &Var, x_reconstructed: &Var, y: &Var, y_reconstructed: &Var) -> Result<Var> {
    let lx = l1(tape, x_reconstructed, x)?;
    let ly = l1(tape, y_reconstructed, y)?;
    tape.add(&lx, &ly)
}

/// `mean|G(y) - y| + mean|F(x) - x|`.
pub fn identity_loss(tape: &Tape, y: &Var, g_of_y: &Var, x: &Var, f_of_x: &Var) -> Result<Var> {
    let ly = l1(tape, g_of_y, y)?;
    let lx = l1(tape, f_of_x, x)?;
    tape.add(&ly, &lx)
}

/// `adv_xy + adv_yx + λ_cyc·cyc + λ_id·idt`. The identity term is left out
/// entirely when its weight is zero, so `idt` may be `None` in that case.
pub fn total_generator_objective(
    tape: &Tape,
    adv_g_xy: &Var,
    adv_g_yx: &Var,
    cyc: &Var,
    idt: Option<&Var>,
    w: &LossWeights,
) -> Result<Var> {
    w.validate()?;
    let adv = tape.add(adv_g_xy, adv_g_yx)?;
    let weighted_cyc = tape.scale(cyc, w.lambda_cycle)?;
    let mut total = tape.add(&adv, &weighted_cyc)?;
    if w.lambda_identity != 0.0 {
        let idt = idt.ok_or_else(|| {
            Error::InvalidArgument("identity loss is required when lambda_identity > 0".into())
        })?;
        let weighted_idt = tape.scale(idt, w.lambda_identity)?;
        total = tape.add(&total, &weighted_idt)?;
    }
    Ok(total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Shape;

    fn map(v: f32) -> Var {
        Var::constant(Tensor::full(Shape::new(1, 1, 3, 5).unwrap(), v))
    }

    fn row(v: &[f32]) -> Var {
        Var::constant(Tensor::from_vec([1, 1, 1, v.len()], v.to_vec()).unwrap())
    }

    fn val(v: &Var) -> f32 {
        v.value().item()
    }

    #[test]
    fn g_loss_least_squares() {
        let t = Tape::new();
        assert_eq!(val(&adversarial_g_loss(&t, &map(1.0), LossMode::LeastSquares).unwrap()), 0.0);
        assert_eq!(val(&adversarial_g_loss(&t, &map(0.0), LossMode::LeastSquares).unwrap()), 1.0);
        assert_eq!(val(&adversarial_g_loss(&t, &map(0.5), LossMode::LeastSquares).unwrap()), 0.25);
    }

    #[test]
    fn d_loss_least_squares() {
        let t = Tape::new();
        let m = LossMode::LeastSquares;
        assert_eq!(val(&adversarial_d_loss(&t, &map(1.0), &map(0.0), m).unwrap()), 0.0);
        assert_eq!(val(&adversarial_d_loss(&t, &map(0.5), &map(0.5), m).unwrap()), 0.25);
        assert_eq!(val(&adversarial_d_loss(&t, &map(0.0), &map(1.0), m).unwrap()), 1.0);
    }

    #[test]
    fn log_mode_confident_discriminator_is_near_zero() {
        let t = Tape::new();
        let loss = adversarial_d_loss(&t, &map(30.0), &map(-30.0), LossMode::Log).unwrap();
        assert!(val(&loss) < 1e-12);
        let g = adversarial_g_loss(&t, &map(0.0), LossMode::Log).unwrap();
        assert!((val(&g) - 2f32.ln()).abs() < 1e-6);
    }

    #[test]
    fn cycle_loss_examples() {
        let t = Tape::new();
        let x = row(&[0.2]);
        let xr = row(&[0.5]);
        let y = row(&[0.0]);
        let c = cycle_loss(&t, &x, &xr, &y, &y).unwrap();
        assert!((val(&c) - 0.3).abs() < 1e-7);
        assert_eq!(val(&cycle_loss(&t, &x, &x, &y, &y).unwrap()), 0.0);
        let swapped = cycle_loss(&t, &y, &y, &x, &xr).unwrap();
        assert_eq!(val(&swapped), val(&c));
    }

    #[test]
    fn cycle_loss_shape_mismatch() {
        let t = Tape::new();
        assert!(cycle_loss(&t, &row(&[0.0]), &row(&[0.0, 1.0]), &row(&[0.0]), &row(&[0.0])).is_err());
    }

    #[test]
    fn identity_loss_examples() {
        let t = Tape::new();
        let v = identity_loss(&t, &row(&[1.0]), &row(&[0.0]), &row(&[0.0]), &row(&[0.0])).unwrap();
        assert_eq!(val(&v), 1.0);
        let x = row(&[0.3, -0.7]);
        assert_eq!(val(&identity_loss(&t, &x, &x, &x, &x).unwrap()), 0.0);
    }

    #[test]
    fn total_weighted_sum() {
        let t = Tape::new();
        let w = LossWeights::default();
        let total = total_generator_objective(
            &t,
            &Var::constant(Tensor::scalar(0.3)),
            &Var::constant(Tensor::scalar(0.4)),
            &Var::constant(Tensor::scalar(0.05)),
            Some(&Var::constant(Tensor::scalar(123.0))),
            &w,
        )
        .unwrap();
        assert!((val(&total) - 1.2).abs() < 1e-6);
    }

    #[test]
    fn loss_mode_parsing() {
        assert_eq!("lsgan".parse::<LossMode>().unwrap(), LossMode::LeastSquares);
        assert_eq!("log".parse::<LossMode>().unwrap(), LossMode::Log);
        assert!("hinge".parse::<LossMode>().is_err());
    }
}
