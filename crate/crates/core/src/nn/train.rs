//! Self-supervised ε-prediction training.
//!
//! Per step: draw a batch of (x, c) pairs, sample t ~ U(0,1) and
//! τ ~ U(0, τ_max) per item, noise-augment the conditioning, form
//! z_t = √α_t·x + √(1−α_t)·ε, predict ε̂, and take an Adam step on the
//! mean squared ε error. A fixed seed makes the whole loop bit-identical
//! across reruns.

use super::adam::{adam_step, AdamConfig, AdamState};
use super::feat::Feat;
use super::params::ParamStore;
use super::tape::Tape;
use super::unet::{forward, ParamGrads, ParamLeaves, UNetConfig};
use crate::data::{make_training_pair, ScaleProfile};
use crate::degrade::DegradeConfig;
use crate::diffusion::{forward_sample, noise_augment, NcaConfig};
use crate::error::{Error, Result};
use crate::prng::{sample_standard_normal, Prng};
use crate::schedule::NoiseSchedule;
use crate::tensor::ImageTensor;
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub steps: usize,
    pub learning_rate: f64,
    pub warmup_steps: usize,
    pub grad_clip_norm: f64,
    pub tau_max: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 16,
            steps: 50_000,
            learning_rate: 1e-4,
            warmup_steps: 1000,
            grad_clip_norm: 1.0,
            tau_max: 0.5,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.steps == 0 {
            return Err(Error::invalid("batch_size and steps must be positive"));
        }
        if !(self.learning_rate > 0.0) || !(self.grad_clip_norm >= 0.0) {
            return Err(Error::invalid("learning_rate/grad_clip_norm must be positive"));
        }
        if !(0.0..=1.0).contains(&self.tau_max) {
            return Err(Error::invalid("tau_max must be in [0,1]"));
        }
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            warmup_steps: self.warmup_steps,
            grad_clip_norm: self.grad_clip_norm,
            ..Default::default()
        }
    }
}

/// Where training pairs come from.
pub enum PairSource<'a> {
    /// A fixed list cycled in order; with `len == batch_size` every step
    /// sees the same batch (the overfit setting).
    Fixed(&'a [(ImageTensor, ImageTensor)]),
    /// Random crop + degradation from an in-memory corpus.
    Synth {
        corpus: &'a [ImageTensor],
        profile: ScaleProfile,
        degrade: Option<DegradeConfig>,
    },
}

impl PairSource<'_> {
    fn draw(
        &self,
        step: usize,
        item: usize,
        prng: &mut Prng,
    ) -> Result<(ImageTensor, ImageTensor)> {
        match self {
            PairSource::Fixed(pairs) => {
                let idx = (step * 31 + item) % pairs.len();
                let _ = prng;
                Ok(pairs[idx].clone())
            }
            PairSource::Synth {
                corpus,
                profile,
                degrade,
            } => {
                let idx = prng.uniform_usize(corpus.len());
                make_training_pair(&corpus[idx], prng, profile, degrade.as_ref())
            }
        }
    }
}

pub struct TrainOutput {
    pub loss_curve: Vec<f64>,
}

/// Runs the training loop, reporting (step, loss) through `on_step`.
pub fn train(
    params: &mut ParamStore<f32>,
    unet_cfg: &UNetConfig,
    source: &PairSource,
    cfg: &TrainConfig,
    sched: &NoiseSchedule,
    prng: &mut Prng,
    mut on_step: impl FnMut(usize, f64, &ParamStore<f32>) -> Result<()>,
) -> Result<TrainOutput> {
    cfg.validate()?;
    unet_cfg.validate()?;
    if let PairSource::Fixed(pairs) = source {
        if pairs.is_empty() {
            return Err(Error::EmptyCorpus("no training pairs".to_string()));
        }
    }
    if let PairSource::Synth { corpus, .. } = source {
        if corpus.is_empty() {
            return Err(Error::EmptyCorpus("no corpus images".to_string()));
        }
    }
    let nca = NcaConfig::new(cfg.tau_max, 0.0)?;
    let adam_cfg = cfg.adam();
    let mut adam = AdamState::new(params);
    let mut curve = Vec::with_capacity(cfg.steps);

    for step in 0..cfg.steps {
        let mut xs = Vec::with_capacity(cfg.batch_size);
        let mut cs = Vec::with_capacity(cfg.batch_size);
        let mut ts = Vec::with_capacity(cfg.batch_size);
        let mut taus = Vec::with_capacity(cfg.batch_size);
        let mut eps_images = Vec::with_capacity(cfg.batch_size);
        let mut zs = Vec::with_capacity(cfg.batch_size);
        for item in 0..cfg.batch_size {
            let (x, c) = source.draw(step, item, prng)?;
            let t = prng.uniform();
            let tau = if cfg.tau_max > 0.0 {
                prng.uniform_in(0.0, cfg.tau_max)
            } else {
                0.0
            };
            let (c_tau, _) = noise_augment(&c, tau, prng, sched, &nca)?;
            let eps = sample_standard_normal(prng, x.height(), x.width(), x.channels())?;
            let z = forward_sample(&x, t, &eps, sched)?;
            xs.push(x);
            cs.push(c_tau);
            ts.push(t);
            taus.push(tau);
            eps_images.push(eps);
            zs.push(z);
        }

        let z_feat = Feat::<f32>::from_images(&zs)?;
        let c_feat = Feat::<f32>::from_images(&cs)?;
        let eps_feat = Feat::<f32>::from_images(&eps_images)?;

        let mut tape: Tape<f32> = Tape::new();
        let leaves = ParamLeaves::register(&mut tape, params);
        let eps_hat = forward(&mut tape, params, &leaves, unet_cfg, z_feat, &ts, c_feat, &taus)?;
        let loss_id = tape.mse_vs(eps_hat, eps_feat)?;
        let loss = tape.scalar_value(loss_id);
        if !loss.is_finite() {
            return Err(Error::TrainingDiverged {
                step,
                t: ts[0],
                tau: taus[0],
                detail: format!("loss is not finite; batch t={ts:?} tau={taus:?}"),
            });
        }
        let grads = ParamGrads::collect(&mut tape.backward(loss_id), &leaves);
        adam_step(params, &grads.by_param, &mut adam, &adam_cfg).map_err(|e| {
            Error::TrainingDiverged {
                step,
                t: ts[0],
                tau: taus[0],
                detail: e.to_string(),
            }
        })?;
        curve.push(loss);
        on_step(step, loss, params)?;
    }
    Ok(TrainOutput { loss_curve: curve })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::textures::synthesize_smooth;
    use crate::degrade::{resize_to, ResizeMode};

    fn tiny_cfg() -> UNetConfig {
        UNetConfig {
            base_channels: 8,
            channel_multipliers: vec![1, 2],
            res_blocks_per_level: 1,
            embedding_dim: 16,
            image_channels: 3,
            norm_groups: 8,
        }
    }

    fn toy_pairs(n: usize, size: usize) -> Vec<(ImageTensor, ImageTensor)> {
        let root = Prng::from_seed(500);
        (0..n)
            .map(|i| {
                let mut p = root.split(i as u64);
                let x = synthesize_smooth(&mut p, size, size);
                let lr = resize_to(&x, size / 4, size / 4, ResizeMode::Bicubic).unwrap();
                let c = resize_to(&lr, size, size, ResizeMode::Bicubic).unwrap();
                (x, c)
            })
            .collect()
    }

    #[test]
    fn initial_loss_is_near_one() {
        // zero-output net ⇒ loss ≈ E‖ε‖² = 1
        let unet = tiny_cfg();
        let mut params = super::super::unet::init_params(&mut Prng::from_seed(1), &unet).unwrap();
        let pairs = toy_pairs(4, 16);
        let cfg = TrainConfig {
            batch_size: 4,
            steps: 1,
            learning_rate: 1e-4,
            warmup_steps: 10,
            grad_clip_norm: 1.0,
            tau_max: 0.5,
        };
        let out = train(
            &mut params,
            &unet,
            &PairSource::Fixed(&pairs),
            &cfg,
            &NoiseSchedule::default(),
            &mut Prng::from_seed(2),
            |_, _, _| Ok(()),
        )
        .unwrap();
        let first = out.loss_curve[0];
        assert!((first - 1.0).abs() < 0.2, "first loss {first}");
    }

    #[test]
    fn fixed_seed_reproduces_loss_curve_bitwise() {
        let unet = tiny_cfg();
        let pairs = toy_pairs(2, 16);
        let cfg = TrainConfig {
            batch_size: 2,
            steps: 5,
            learning_rate: 1e-3,
            warmup_steps: 5,
            grad_clip_norm: 1.0,
            tau_max: 0.5,
        };
        let run = || {
            let mut params =
                super::super::unet::init_params(&mut Prng::from_seed(7), &unet).unwrap();
            train(
                &mut params,
                &unet,
                &PairSource::Fixed(&pairs),
                &cfg,
                &NoiseSchedule::default(),
                &mut Prng::from_seed(8),
                |_, _, _| Ok(()),
            )
            .unwrap()
            .loss_curve
        };
        let a = run();
        let b = run();
        assert_eq!(a, b);
    }

    #[test]
    fn loss_decreases_on_short_run() {
        let unet = tiny_cfg();
        let pairs = toy_pairs(4, 16);
        let cfg = TrainConfig {
            batch_size: 4,
            steps: 60,
            learning_rate: 2e-3,
            warmup_steps: 10,
            grad_clip_norm: 1.0,
            tau_max: 0.5,
        };
        let mut params = super::super::unet::init_params(&mut Prng::from_seed(3), &unet).unwrap();
        let out = train(
            &mut params,
            &unet,
            &PairSource::Fixed(&pairs),
            &cfg,
            &NoiseSchedule::default(),
            &mut Prng::from_seed(4),
            |_, _, _| Ok(()),
        )
        .unwrap();
        let head: f64 = out.loss_curve[..10].iter().sum::<f64>() / 10.0;
        let tail: f64 = out.loss_curve[50..].iter().sum::<f64>() / 10.0;
        assert!(tail < head, "head {head} tail {tail}");
    }
}
