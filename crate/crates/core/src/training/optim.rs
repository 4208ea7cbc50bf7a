use serde::{Deserialize, Serialize};

use super::{TrainConfig, TrainError};
use crate::numeric::Real;

/// Probabilities are clipped to `[P_CLIP, 1 - P_CLIP]` before taking logs.
pub const P_CLIP: f64 = 1e-12;

/// Mean binary cross-entropy over pair probabilities.
pub fn pair_loss(probs: &[f64], gold: &[bool]) -> Result<f64, TrainError> {
    if probs.is_empty() {
        return Err(TrainError::EmptyBatch);
    }
    if probs.len() != gold.len() {
        return Err(TrainError::ShapeMismatch(format!(
            "{} probabilities for {} labels",
            probs.len(),
            gold.len()
        )));
    }
    let total: f64 = probs
        .iter()
        .zip(gold)
        .map(|(&p, &y)| {
            let p = p.clamp(P_CLIP, 1.0 - P_CLIP);
            if y {
                -p.ln()
            } else {
                -(1.0 - p).ln()
            }
        })
        .sum();
    Ok(total / probs.len() as f64)
}

/// `-log σ(z)` for positives, `-log(1 - σ(z))` for negatives, without
/// forming σ(z).
pub(crate) fn bce_with_logit<T: Real>(z: T, y: bool) -> T {
    let softplus = z.max(T::zero()) + (-z.abs()).exp().ln_1p();
    if y {
        softplus - z
    } else {
        softplus
    }
}

pub fn l2_norm(g: &[f64]) -> f64 {
    g.iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Rescales `g` to norm `max_norm` when it is longer.
pub fn clip_gradients(g: &[f64], max_norm: f64) -> Result<Vec<f64>, TrainError> {
    if g.iter().any(|v| !v.is_finite()) {
        return Err(TrainError::NonFiniteGradient { batch: None });
    }
    let norm = l2_norm(g);
    if norm <= max_norm {
        return Ok(g.to_vec());
    }
    let scale = max_norm / norm;
    Ok(g.iter().map(|v| v * scale).collect())
}

/// Number of warm-up steps: `ceil(warmup · total_steps)`.
pub fn warmup_steps(total_steps: usize, warmup: f64) -> usize {
    (warmup * total_steps as f64).ceil() as usize
}

/// Linear warm-up from 0 to `cfg.lr`, then linear decay to 0 at `total_steps`.
pub fn lr_schedule(step: usize, total_steps: usize, cfg: &TrainConfig) -> f64 {
    let total = total_steps.max(1);
    if step >= total {
        return 0.0;
    }
    let warm = warmup_steps(total, cfg.warmup);
    if step < warm {
        cfg.lr * step as f64 / warm as f64
    } else {
        cfg.lr * (total - step) as f64 / (total - warm) as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizerState {
    pub step: u64,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub betas: (f64, f64),
    pub eps: f64,
}

impl OptimizerState {
    pub fn new(n_params: usize) -> Self {
        Self {
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            betas: (0.9, 0.999),
            eps: 1e-8,
        }
    }
}

/// One AdamW update of every coordinate, decay included.
pub fn adamw_step(
    theta: &mut [f64],
    g: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
) -> Result<(), TrainError> {
    let all = vec![true; theta.len()];
    adamw_step_masked(theta, g, state, lr, weight_decay, &all, &all)
}

/// AdamW restricted to coordinates with `update[i]`; decay applies only
/// where `decay[i]` also holds. Skipped coordinates keep their moments.
pub fn adamw_step_masked(
    theta: &mut [f64],
    g: &[f64],
    state: &mut OptimizerState,
    lr: f64,
    weight_decay: f64,
    update: &[bool],
    decay: &[bool],
) -> Result<(), TrainError> {
    let n = theta.len();
    if [
        g.len(),
        state.m.len(),
        state.v.len(),
        update.len(),
        decay.len(),
    ]
    .iter()
    .any(|&l| l != n)
    {
        return Err(TrainError::ShapeMismatch(format!(
            "{n} parameters, {} gradients, moments {}/{}",
            g.len(),
            state.m.len(),
            state.v.len()
        )));
    }
    state.step += 1;
    let (b1, b2) = state.betas;
    let t = state.step as i32;
    let c1 = 1.0 - b1.powi(t);
    let c2 = 1.0 - b2.powi(t);
    for i in 0..n {
        if !update[i] {
            continue;
        }
        if decay[i] {
            theta[i] -= lr * weight_decay * theta[i];
        }
        state.m[i] = b1 * state.m[i] + (1.0 - b1) * g[i];
        state.v[i] = b2 * state.v[i] + (1.0 - b2) * g[i] * g[i];
        let m_hat = state.m[i] / c1;
        let v_hat = state.v[i] / c2;
        theta[i] -= lr * m_hat / (v_hat.sqrt() + state.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_loss_examples() {
        assert!((pair_loss(&[0.5], &[true]).unwrap() - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(pair_loss(&[1.0 - 1e-12], &[true]).unwrap() < 1e-11);
        let want = -(0.9f64.ln() + 0.8f64.ln()) / 2.0;
        assert!((pair_loss(&[0.9, 0.2], &[true, false]).unwrap() - want).abs() < 1e-15);
        assert!(matches!(pair_loss(&[], &[]), Err(TrainError::EmptyBatch)));
    }

    #[test]
    fn logit_loss_matches_probability_loss() {
        for &z in &[-3.0, -0.2, 0.0, 0.7, 4.0] {
            let p = crate::resolver::logistic(z);
            for y in [true, false] {
                let a = bce_with_logit(z, y);
                let b = pair_loss(&[p], &[y]).unwrap();
                assert!((a - b).abs() < 1e-14, "{z} {y}");
            }
        }
    }

    #[test]
    fn clipping() {
        assert_eq!(clip_gradients(&[0.3, 0.4], 1.0).unwrap(), vec![0.3, 0.4]);
        let c = clip_gradients(&[3.0, 4.0], 1.0).unwrap();
        assert!((c[0] - 0.6).abs() < 1e-15 && (c[1] - 0.8).abs() < 1e-15);
        assert_eq!(clip_gradients(&[0.0, 0.0], 1.0).unwrap(), vec![0.0, 0.0]);
        assert!(matches!(
            clip_gradients(&[f64::NAN], 1.0),
            Err(TrainError::NonFiniteGradient { .. })
        ));
    }

    #[test]
    fn schedule_endpoints() {
        let cfg = TrainConfig::default();
        assert_eq!(lr_schedule(0, 100, &cfg), 0.0);
        assert_eq!(lr_schedule(10, 100, &cfg), 2e-5);
        assert_eq!(lr_schedule(100, 100, &cfg), 0.0);
        assert_eq!(lr_schedule(55, 100, &cfg), 2e-5 * 45.0 / 90.0);
        let flat = TrainConfig { warmup: 0.0, ..cfg };
        assert_eq!(lr_schedule(0, 10, &flat), 2e-5);
    }

    #[test]
    fn adamw_first_step_closed_form() {
        let mut theta = [1.5];
        let mut st = OptimizerState::new(1);
        adamw_step(&mut theta, &[0.3], &mut st, 0.1, 0.0).unwrap();
        let want = 1.5 - 0.1 * 0.3 / (0.3 + 1e-8);
        assert!((theta[0] - want).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn adamw_zero_gradient() {
        let mut theta = [1.0, -2.0];
        let mut st = OptimizerState::new(2);
        adamw_step(&mut theta, &[0.0, 0.0], &mut st, 0.1, 0.0).unwrap();
        assert_eq!(theta, [1.0, -2.0]);
        adamw_step(&mut theta, &[0.0, 0.0], &mut st, 0.1, 0.5).unwrap();
        assert_eq!(theta, [1.0 * (1.0 - 0.05), -2.0 * (1.0 - 0.05)]);
        assert_eq!(st.step, 2);
        assert!(matches!(
            adamw_step(&mut theta, &[0.0], &mut st, 0.1, 0.0),
            Err(TrainError::ShapeMismatch(_))
        ));
    }
}
