//! Tanh-squashed Gaussian action distribution.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Tape, Var};
use crate::error::Result;

const HALF_LN_2PI: f64 = 0.918_938_533_204_672_8;

/// Reparameterised sample `tanh(mean + exp(log_std) * eps)` and its exact
/// log-density, `[batch, 1]`, including the tanh change of variables.
pub fn sample_with_noise(tape: &mut Tape, mean: Var, log_std: Var, noise: &[f64]) -> Result<(Var, Var)> {
    let [b, a] = tape.shape(mean);
    let eps = tape.constant(b, a, noise.to_vec());
    let std = tape.exp(log_std);
    let scaled = tape.mul(std, eps)?;
    let u = tape.add(mean, scaled)?;
    let action = tape.tanh(u);
    // log N(u; mean, std) = -eps^2/2 - log_std - ln(2 pi)/2
    let gauss_const = tape.constant(b, a, noise.iter().map(|e| -0.5 * e * e - HALF_LN_2PI).collect());
    let gauss = tape.sub(gauss_const, log_std)?;
    // log(1 - tanh(u)^2) = 2 (ln 2 - u - softplus(-2u))
    let neg2u = tape.scale(u, -2.0);
    let sp = tape.softplus(neg2u);
    let usp = tape.add(u, sp)?;
    let jac = tape.scale(usp, -2.0);
    let jac = tape.add_scalar(jac, 2.0 * std::f64::consts::LN_2);
    let per_dim = tape.sub(gauss, jac)?;
    let log_prob = tape.row_sum(per_dim);
    Ok((action, log_prob))
}

pub fn draw_noise(rng: &mut impl Rng, n: usize) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

/// Samples an action for every row of `mean`/`log_std`.
pub fn sample_action(tape: &mut Tape, mean: Var, log_std: Var, rng: &mut impl Rng) -> Result<(Var, Var)> {
    let [b, a] = tape.shape(mean);
    let noise = draw_noise(rng, b * a);
    sample_with_noise(tape, mean, log_std, &noise)
}

/// Deterministic action `tanh(mean)` used for evaluation.
pub fn mean_action(tape: &mut Tape, mean: Var) -> Var {
    tape.tanh(mean)
}
