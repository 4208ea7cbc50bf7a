use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::model::{backward, batch_loss_in, DocInputs, ModelParams};
use super::TrainError;
use crate::numeric::{DoubleDouble, Real};

/// Largest number of checked coordinates accepted.
pub const MAX_CHECK_PARAMS: usize = 10_000;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: Option<usize>,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
}

fn rel_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / (a.abs() + n.abs()).max(1e-8)
}

/// Compares `analytic` with central differences of `f` at `theta` on the
/// coordinates where `select` holds (all when `None`). The difference
/// quotient is formed in `f`'s scalar type over the step actually taken
/// after rounding `theta ± eps`.
pub fn grad_check_fn<T, F>(
    mut f: F,
    analytic: &[f64],
    theta: &[f64],
    eps: f64,
    select: Option<&[bool]>,
) -> Result<GradCheckReport, TrainError>
where
    T: Real,
    F: FnMut(&[f64]) -> Result<T, TrainError>,
{
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(TrainError::InvalidConfig(format!(
            "finite-difference step {eps} must be positive"
        )));
    }
    if analytic.len() != theta.len() || select.is_some_and(|s| s.len() != theta.len()) {
        return Err(TrainError::ShapeMismatch(format!(
            "{} gradients for {} parameters",
            analytic.len(),
            theta.len()
        )));
    }
    let coords: Vec<usize> = (0..theta.len())
        .filter(|&i| select.is_none_or(|s| s[i]))
        .collect();
    if coords.len() > MAX_CHECK_PARAMS {
        return Err(TrainError::InvalidConfig(format!(
            "{} coordinates exceed the check limit of {MAX_CHECK_PARAMS}",
            coords.len()
        )));
    }
    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: None,
        analytic: 0.0,
        numeric: 0.0,
        checked: coords.len(),
    };
    let mut probe = theta.to_vec();
    for i in coords {
        let (hi, lo) = (theta[i] + eps, theta[i] - eps);
        probe[i] = hi;
        let up = f(&probe)?;
        probe[i] = lo;
        let down = f(&probe)?;
        probe[i] = theta[i];
        let numeric = ((up - down) / T::from_f64(hi - lo)).to_f64();
        let err = rel_error(analytic[i], numeric);
        if report.worst_index.is_none() || err > report.max_rel_error {
            report = GradCheckReport {
                max_rel_error: err,
                worst_index: Some(i),
                analytic: analytic[i],
                numeric,
                ..report
            };
        }
    }
    Ok(report)
}

/// Checks the model gradient on every trainable coordinate (dropout off).
pub fn grad_check(
    params: &ModelParams,
    batch: &[&DocInputs],
    eps: f64,
) -> Result<GradCheckReport, TrainError> {
    grad_check_with(params, batch, eps, |_| {})
}

/// [`grad_check`] with a hook that may alter the analytic gradient first.
pub fn grad_check_with(
    params: &ModelParams,
    batch: &[&DocInputs],
    eps: f64,
    tamper: impl FnOnce(&mut [f64]),
) -> Result<GradCheckReport, TrainError> {
    let mut analytic = backward(params, batch, None)?.grad;
    tamper(&mut analytic);
    let theta = params.flatten();
    let mask = params.trainable_mask();
    let mut probe = params.clone();
    grad_check_fn(
        |t| {
            probe.set_flat(t)?;
            batch_loss_in::<DoubleDouble>(&probe, batch, None)
        },
        &analytic,
        &theta,
        eps,
        Some(&mask),
    )
}

/// Replaces the zero-initialized syntax and decoder blocks with small
/// seeded values so every gradient path is exercised.
pub fn randomize_params(params: &mut ModelParams, seed: u64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    params
        .syntax
        .weight
        .mapv_inplace(|_| rng.random_range(-0.3..0.3));
    params
        .syntax
        .bias
        .mapv_inplace(|_| rng.random_range(-0.3..0.3));
    params
        .decoder
        .weight
        .mapv_inplace(|_| rng.random_range(-1.0..1.0));
    params.decoder.bias = rng.random_range(-0.5..0.5);
}
