//! Adam with linear warmup and global-norm gradient clipping.

use super::feat::Feat;
use super::params::ParamStore;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub warmup_steps: usize,
    pub grad_clip_norm: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            warmup_steps: 1000,
            grad_clip_norm: 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub step: usize,
    pub m: Vec<Vec<f32>>,
    pub v: Vec<Vec<f32>>,
}

impl AdamState {
    pub fn new(params: &ParamStore<f32>) -> Self {
        let m = (0..params.len())
            .map(|i| vec![0.0f32; params.tensor(i).numel()])
            .collect();
        let v = (0..params.len())
            .map(|i| vec![0.0f32; params.tensor(i).numel()])
            .collect();
        Self { step: 0, m, v }
    }
}

/// One optimizer step. `grads` is index-aligned with the store; missing
/// entries are treated as zero gradients.
pub fn adam_step(
    params: &mut ParamStore<f32>,
    grads: &[Option<Feat<f32>>],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    if grads.len() != params.len() {
        return Err(Error::invalid("gradient list misaligned with parameters"));
    }
    state.step += 1;
    let warm = if cfg.warmup_steps > 0 {
        (state.step as f64 / cfg.warmup_steps as f64).min(1.0)
    } else {
        1.0
    };
    let lr = cfg.learning_rate * warm;

    let mut sq_norm = 0.0f64;
    for g in grads.iter().flatten() {
        for v in &g.data {
            sq_norm += (*v as f64) * (*v as f64);
        }
    }
    let norm = sq_norm.sqrt();
    let clip = if cfg.grad_clip_norm > 0.0 && norm > cfg.grad_clip_norm {
        cfg.grad_clip_norm / norm
    } else {
        1.0
    };

    let bc1 = 1.0 - cfg.beta1.powi(state.step as i32);
    let bc2 = 1.0 - cfg.beta2.powi(state.step as i32);
    for (idx, g) in grads.iter().enumerate() {
        let Some(g) = g else { continue };
        let m = &mut state.m[idx];
        let v = &mut state.v[idx];
        let tensor = params.tensor_mut(idx);
        for i in 0..tensor.numel() {
            let gi = g.data[i] as f64 * clip;
            let mi = cfg.beta1 * m[i] as f64 + (1.0 - cfg.beta1) * gi;
            let vi = cfg.beta2 * v[i] as f64 + (1.0 - cfg.beta2) * gi * gi;
            m[i] = mi as f32;
            v[i] = vi as f32;
            let update = lr * (mi / bc1) / ((vi / bc2).sqrt() + cfg.eps);
            tensor.data[i] -= update as f32;
        }
    }
    if !params.all_finite() {
        return Err(Error::invalid("non-finite parameter after optimizer step"));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn quadratic_params(x0: f32) -> ParamStore<f32> {
        let mut p = ParamStore::new();
        let mut f = Feat::zeros(1, 1, 1, 1);
        f.data[0] = x0;
        p.add("x", f);
        p
    }

    #[test]
    fn adam_descends_a_quadratic() {
        // minimize (x-3)^2 from 0
        let mut params = quadratic_params(0.0);
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig {
            learning_rate: 0.05,
            warmup_steps: 0,
            grad_clip_norm: 0.0,
            ..Default::default()
        };
        for _ in 0..2000 {
            let x = params.tensor(0).data[0];
            let mut g = Feat::zeros(1, 1, 1, 1);
            g.data[0] = 2.0 * (x - 3.0);
            adam_step(&mut params, &[Some(g)], &mut state, &cfg).unwrap();
        }
        let x = params.tensor(0).data[0];
        assert!((x - 3.0).abs() < 0.05, "x = {x}");
    }

    #[test]
    fn warmup_scales_first_steps() {
        let mut params = quadratic_params(0.0);
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig {
            learning_rate: 0.1,
            warmup_steps: 10,
            grad_clip_norm: 0.0,
            ..Default::default()
        };
        let mut g = Feat::zeros(1, 1, 1, 1);
        g.data[0] = 1.0;
        adam_step(&mut params, &[Some(g)], &mut state, &cfg).unwrap();
        // first step uses lr/10; Adam normalizes the gradient so the move
        // is about lr_eff in magnitude
        let moved = params.tensor(0).data[0].abs();
        assert!(moved < 0.02, "moved {moved}");
    }

    #[test]
    fn clipping_bounds_the_update_norm() {
        let mut params = quadratic_params(0.0);
        let mut state = AdamState::new(&params);
        let cfg = AdamConfig {
            learning_rate: 1.0,
            warmup_steps: 0,
            grad_clip_norm: 1.0,
            ..Default::default()
        };
        let mut g = Feat::zeros(1, 1, 1, 1);
        g.data[0] = 1e6;
        adam_step(&mut params, &[Some(g)], &mut state, &cfg).unwrap();
        // after clipping the effective gradient is 1.0, so m/v stay sane
        assert!(state.m[0][0].abs() <= 0.11);
    }
}
