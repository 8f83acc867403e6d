//! Adversarial objectives recorded on a [`Tape`] so they can be
//! differentiated: minimax, Wasserstein, and the interpolate gradient
//! penalty.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Tape, Tensor, TensorError, Var};
use crate::nn::{Bound, NetError, Network};

/// Probabilities are clamped to `[EPS_LOG, 1 - EPS_LOG]` before any log.
pub const EPS_LOG: f64 = 1e-7;
pub const DEFAULT_GP_LAMBDA: f64 = 10.0;
/// Added under the square root of the gradient norm so its derivative stays
/// finite at a zero gradient.
const NORM_EPS: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum LossError {
    #[error("{0}")]
    Invalid(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Net(#[from] NetError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossRole {
    DLoss,
    GLoss,
    CriticLoss,
    GpTerm,
}

/// A finite scalar loss reading.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossValue {
    pub value: f64,
    pub role: LossRole,
}

impl LossValue {
    pub fn read(tape: &Tape, v: Var, role: LossRole) -> Result<Self, LossError> {
        Ok(Self {
            value: tape.value(v)?.item()?,
            role,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GLossVariant {
    /// `mean(ln(1 - D(G(z))))`
    Saturating,
    /// `-mean(ln D(G(z)))`
    #[default]
    NonSaturating,
}

fn check_probabilities(tape: &Tape, v: Var, what: &str) -> Result<(), LossError> {
    if let Some(p) = tape
        .value(v)?
        .data()
        .iter()
        .find(|p| !(0.0..=1.0).contains(*p))
    {
        return Err(LossError::Invalid(format!(
            "{what} must be a probability in [0, 1], got {p}"
        )));
    }
    Ok(())
}

fn mean_log(tape: &mut Tape, p: Var) -> Result<Var, TensorError> {
    let c = tape.clamp(p, EPS_LOG, 1.0 - EPS_LOG)?;
    let l = tape.ln(c)?;
    tape.mean(l)
}

fn one_minus(tape: &mut Tape, p: Var) -> Result<Var, TensorError> {
    let n = tape.scale(p, -1.0)?;
    tape.add_scalar(n, 1.0)
}

/// `-mean(ln d_real) - mean(ln(1 - d_fake))`, the negated value function.
pub fn minimax_d_loss(tape: &mut Tape, d_real: Var, d_fake: Var) -> Result<Var, LossError> {
    check_probabilities(tape, d_real, "d_real")?;
    check_probabilities(tape, d_fake, "d_fake")?;
    let real = mean_log(tape, d_real)?;
    let q = one_minus(tape, d_fake)?;
    let fake = mean_log(tape, q)?;
    let v = tape.add(real, fake)?;
    Ok(tape.scale(v, -1.0)?)
}

pub fn minimax_g_loss(
    tape: &mut Tape,
    d_fake: Var,
    variant: GLossVariant,
) -> Result<Var, LossError> {
    check_probabilities(tape, d_fake, "d_fake")?;
    Ok(match variant {
        GLossVariant::Saturating => {
            let q = one_minus(tape, d_fake)?;
            mean_log(tape, q)?
        }
        GLossVariant::NonSaturating => {
            let l = mean_log(tape, d_fake)?;
            tape.scale(l, -1.0)?
        }
    })
}

/// `mean(c_fake) - mean(c_real)`
pub fn wasserstein_critic_loss(
    tape: &mut Tape,
    c_real: Var,
    c_fake: Var,
) -> Result<Var, LossError> {
    let r = tape.mean(c_real)?;
    let f = tape.mean(c_fake)?;
    Ok(tape.sub(f, r)?)
}

/// `-mean(c_fake)`
pub fn wasserstein_g_loss(tape: &mut Tape, c_fake: Var) -> Result<Var, LossError> {
    let f = tape.mean(c_fake)?;
    Ok(tape.scale(f, -1.0)?)
}

/// `(critic_loss, g_loss)` for the same critic scores.
pub fn wasserstein_losses(
    tape: &mut Tape,
    c_real: Var,
    c_fake: Var,
) -> Result<(Var, Var), LossError> {
    Ok((
        wasserstein_critic_loss(tape, c_real, c_fake)?,
        wasserstein_g_loss(tape, c_fake)?,
    ))
}

/// A recorded gradient-penalty term and the interpolate gradient norms it
/// was built from.
#[derive(Debug, Clone)]
pub struct GradientPenalty {
    pub term: Var,
    pub norms: Vec<f64>,
}

impl GradientPenalty {
    pub fn mean_norm(&self) -> f64 {
        self.norms.iter().sum::<f64>() / self.norms.len() as f64
    }
}

/// `lambda * mean((|grad critic(x_hat)| - 1)^2)` over interpolates
/// `x_hat = u * real + (1 - u) * fake` with one `u ~ U(0, 1)` per sample.
///
/// The interpolates are fresh leaves, so the term depends on the critic's
/// parameters only; its gradient with respect to them runs through a second
/// differentiation of the critic. The critic runs in eval mode and must treat
/// samples independently.
pub fn gradient_penalty<R: Rng>(
    tape: &mut Tape,
    critic: &Network,
    bound: &Bound,
    real: &Tensor,
    fake: &Tensor,
    lambda: f64,
    rng: &mut R,
) -> Result<GradientPenalty, LossError> {
    if real.shape() != fake.shape() {
        return Err(LossError::Invalid(format!(
            "real batch {:?} and fake batch {:?} differ in shape",
            real.shape(),
            fake.shape()
        )));
    }
    if !(lambda >= 0.0 && lambda.is_finite()) {
        return Err(LossError::Invalid(format!(
            "gradient penalty weight {lambda} must be >= 0"
        )));
    }
    let batch = real.shape()[0];
    let per = real.numel() / batch;
    let mut mix = Vec::with_capacity(real.numel());
    for b in 0..batch {
        let u: f64 = rng.random();
        let rows = real.data()[b * per..(b + 1) * per]
            .iter()
            .zip(&fake.data()[b * per..(b + 1) * per]);
        mix.extend(rows.map(|(r, f)| u * r + (1.0 - u) * f));
    }
    let x_hat = tape.variable(Tensor::new(real.shape().to_vec(), mix)?)?;
    let scores = critic.forward_eval(tape, bound, x_hat)?;
    let total = tape.sum(scores)?;
    let grad = tape.grad(total, &[x_hat], true)?[0];
    let flat = tape.reshape(grad, &[batch, per])?;
    let sq = tape.square(flat)?;
    let ss = tape.sum_axis(sq, 1)?;
    let ss = tape.add_scalar(ss, NORM_EPS)?;
    let norms = tape.sqrt(ss)?;
    let dev = tape.add_scalar(norms, -1.0)?;
    let dev2 = tape.square(dev)?;
    let mean = tape.mean(dev2)?;
    let term = tape.scale(mean, lambda)?;
    Ok(GradientPenalty {
        term,
        norms: tape.value(norms)?.data().to_vec(),
    })
}
