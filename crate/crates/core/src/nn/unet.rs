//! Fully convolutional ε-prediction UNet.
//!
//! No attention anywhere: residual conv blocks with group normalization,
//! 2× average-pool downsampling, nearest-neighbor upsampling and skip
//! concatenation. The network input is concat(z_t, c_τ) along channels;
//! t and τ each get a sinusoidal embedding and separate learned
//! projections whose per-block channel biases are summed into the
//! residual branch, so the two noise levels stay distinguishable.
//!
//! Each residual branch's final conv and the output conv start at zero:
//! a freshly initialized network computes the identity on its skip path
//! and outputs zero.

use super::feat::Feat;
use super::params::ParamStore;
use super::scalar::Scalar;
use super::tape::{NodeId, Tape};
use crate::diffusion::Denoiser;
use crate::error::{Error, Result};
use crate::prng::Prng;
use crate::tensor::{ImageTensor, ValueDomain};
use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct UNetConfig {
    pub base_channels: usize,
    pub channel_multipliers: Vec<usize>,
    pub res_blocks_per_level: usize,
    pub embedding_dim: usize,
    pub image_channels: usize,
    pub norm_groups: usize,
}

impl Default for UNetConfig {
    fn default() -> Self {
        Self {
            base_channels: 32,
            channel_multipliers: vec![1, 2, 4],
            res_blocks_per_level: 2,
            embedding_dim: 128,
            image_channels: 3,
            norm_groups: 8,
        }
    }
}

impl UNetConfig {
    pub fn validate(&self) -> Result<()> {
        if self.base_channels == 0
            || self.channel_multipliers.is_empty()
            || self.channel_multipliers.iter().any(|&m| m == 0)
            || self.res_blocks_per_level == 0
            || self.norm_groups == 0
        {
            return Err(Error::invalid("unet config fields must be positive"));
        }
        if self.embedding_dim < 2 || self.embedding_dim % 2 != 0 {
            return Err(Error::invalid("embedding_dim must be even and >= 2"));
        }
        if self.image_channels != 1 && self.image_channels != 3 {
            return Err(Error::invalid("image_channels must be 1 or 3"));
        }
        Ok(())
    }

    pub fn levels(&self) -> usize {
        self.channel_multipliers.len()
    }

    /// Spatial dims must be divisible by this.
    pub fn spatial_divisor(&self) -> usize {
        1 << (self.levels() - 1)
    }

    fn level_channels(&self, lvl: usize) -> usize {
        self.base_channels * self.channel_multipliers[lvl]
    }
}

/// Largest group count ≤ the configured one that divides `channels`.
fn groups_for(channels: usize, preferred: usize) -> usize {
    (1..=preferred.min(channels))
        .rev()
        .find(|g| channels % g == 0)
        .unwrap_or(1)
}

const GN_EPS: f64 = 1e-5;
/// Continuous times are scaled by this before the sinusoidal embedding.
const TIME_SCALE: f64 = 1000.0;

fn sinusoidal_embedding(v: f64, dim: usize) -> Vec<f64> {
    let half = dim / 2;
    let mut out = vec![0.0; dim];
    for i in 0..half {
        let exponent = if half > 1 {
            i as f64 / (half - 1) as f64
        } else {
            0.0
        };
        let freq = 10_000.0f64.powf(-exponent);
        out[i] = (v * TIME_SCALE * freq).sin();
        out[half + i] = (v * TIME_SCALE * freq).cos();
    }
    out
}

struct Init<'a, T> {
    params: ParamStore<T>,
    prng: &'a mut Prng,
}

impl<T: Scalar> Init<'_, T> {
    fn conv(&mut self, name: &str, oc: usize, ic: usize, k: usize, zero: bool) {
        let fan_in = (ic * k * k) as f64;
        let scale = (2.0 / fan_in).sqrt();
        let mut w = Feat::zeros(oc, ic, k, k);
        if !zero {
            for v in &mut w.data {
                *v = T::from_f64(self.prng.normal() * scale);
            }
        }
        self.params.add(format!("{name}.w"), w);
        self.params.add(format!("{name}.b"), Feat::zeros(1, oc, 1, 1));
    }

    fn linear(&mut self, name: &str, fout: usize, fin: usize) {
        let scale = (1.0 / fin as f64).sqrt();
        let mut w = Feat::zeros(fout, fin, 1, 1);
        for v in &mut w.data {
            *v = T::from_f64(self.prng.normal() * scale);
        }
        self.params.add(format!("{name}.w"), w);
        self.params.add(format!("{name}.b"), Feat::zeros(1, fout, 1, 1));
    }

    fn group_norm(&mut self, name: &str, c: usize) {
        let mut gamma = Feat::zeros(1, c, 1, 1);
        for v in &mut gamma.data {
            *v = T::ONE;
        }
        self.params.add(format!("{name}.g"), gamma);
        self.params.add(format!("{name}.b"), Feat::zeros(1, c, 1, 1));
    }

    fn res_block(&mut self, prefix: &str, c_in: usize, c_out: usize, emb: usize) {
        self.group_norm(&format!("{prefix}.gn1"), c_in);
        self.conv(&format!("{prefix}.conv1"), c_out, c_in, 3, false);
        self.linear(&format!("{prefix}.emb_t"), c_out, emb);
        self.linear(&format!("{prefix}.emb_tau"), c_out, emb);
        self.group_norm(&format!("{prefix}.gn2"), c_out);
        // zero-init: the residual branch starts as a no-op
        self.conv(&format!("{prefix}.conv2"), c_out, c_out, 3, true);
        if c_in != c_out {
            self.conv(&format!("{prefix}.skip"), c_out, c_in, 1, false);
        }
    }
}

/// Builds a freshly initialized parameter store: fan-in-scaled conv
/// weights, zero biases, zero residual-branch output convs.
pub fn init_params<T: Scalar>(prng: &mut Prng, cfg: &UNetConfig) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut init = Init {
        params: ParamStore::new(),
        prng,
    };
    let emb = cfg.embedding_dim;
    init.conv("stem", cfg.base_channels, 2 * cfg.image_channels, 3, false);
    init.linear("temb.l1", emb, emb);
    init.linear("temb.l2", emb, emb);
    init.linear("tauemb.l1", emb, emb);
    init.linear("tauemb.l2", emb, emb);

    let levels = cfg.levels();
    let mut c_prev = cfg.base_channels;
    for lvl in 0..levels {
        let c_lvl = cfg.level_channels(lvl);
        for blk in 0..cfg.res_blocks_per_level {
            let c_in = if blk == 0 { c_prev } else { c_lvl };
            init.res_block(&format!("down.{lvl}.{blk}"), c_in, c_lvl, emb);
        }
        c_prev = c_lvl;
    }
    init.res_block("mid.0", c_prev, c_prev, emb);
    for lvl in (0..levels).rev() {
        let c_lvl = cfg.level_channels(lvl);
        let c_above = if lvl + 1 == levels {
            cfg.level_channels(levels - 1)
        } else {
            cfg.level_channels(lvl + 1)
        };
        for blk in 0..cfg.res_blocks_per_level {
            let c_in = if blk == 0 { c_above + c_lvl } else { c_lvl };
            init.res_block(&format!("up.{lvl}.{blk}"), c_in, c_lvl, emb);
        }
    }
    init.group_norm("out.gn", cfg.base_channels);
    init.conv("out.conv", cfg.image_channels, cfg.base_channels, 3, true);
    Ok(init.params)
}

/// Leaf-registered parameters for one forward pass; index-aligned with
/// the store.
pub struct ParamLeaves {
    pub ids: Vec<NodeId>,
}

impl ParamLeaves {
    pub fn register<T: Scalar>(tape: &mut Tape<T>, params: &ParamStore<T>) -> ParamLeaves {
        ParamLeaves {
            ids: (0..params.len())
                .map(|i| tape.leaf(params.tensor(i).clone()))
                .collect(),
        }
    }
}

/// Gradients re-indexed by parameter-store position.
pub struct ParamGrads<T> {
    pub by_param: Vec<Option<Feat<T>>>,
}

impl<T: Scalar> ParamGrads<T> {
    pub fn collect(grads: &mut super::tape::Gradients<T>, leaves: &ParamLeaves) -> ParamGrads<T> {
        ParamGrads {
            by_param: leaves.ids.iter().map(|id| grads.take(*id)).collect(),
        }
    }
}

struct Builder<'a, T: Scalar> {
    tape: &'a mut Tape<T>,
    params: &'a ParamStore<T>,
    leaves: &'a ParamLeaves,
    cfg: &'a UNetConfig,
}

impl<T: Scalar> Builder<'_, T> {
    fn id(&self, name: &str) -> Result<NodeId> {
        Ok(self.leaves.ids[self.params.index_of(name)?])
    }

    fn conv(&mut self, name: &str, x: NodeId, pad: usize) -> Result<NodeId> {
        let w = self.id(&format!("{name}.w"))?;
        let b = self.id(&format!("{name}.b"))?;
        self.tape.conv2d(x, w, b, pad)
    }

    fn gnorm(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let g = self.id(&format!("{name}.g"))?;
        let b = self.id(&format!("{name}.b"))?;
        let c = self.tape.value(x).c;
        let groups = groups_for(c, self.cfg.norm_groups);
        self.tape.group_norm(x, g, b, groups, GN_EPS)
    }

    fn linear(&mut self, name: &str, x: NodeId) -> Result<NodeId> {
        let w = self.id(&format!("{name}.w"))?;
        let b = self.id(&format!("{name}.b"))?;
        self.tape.linear(x, w, b)
    }

    fn emb_mlp(&mut self, prefix: &str, raw: NodeId) -> Result<NodeId> {
        let h = self.linear(&format!("{prefix}.l1"), raw)?;
        let h = self.tape.silu(h);
        self.linear(&format!("{prefix}.l2"), h)
    }

    fn res_block(
        &mut self,
        prefix: &str,
        x: NodeId,
        temb: NodeId,
        tauemb: NodeId,
    ) -> Result<NodeId> {
        let c_in = self.tape.value(x).c;
        let mut h = self.gnorm(&format!("{prefix}.gn1"), x)?;
        h = self.tape.silu(h);
        h = self.conv(&format!("{prefix}.conv1"), h, 1)?;
        let bias_t = self.linear(&format!("{prefix}.emb_t"), temb)?;
        let bias_tau = self.linear(&format!("{prefix}.emb_tau"), tauemb)?;
        h = self.tape.add_channel_bias(h, bias_t)?;
        h = self.tape.add_channel_bias(h, bias_tau)?;
        h = self.gnorm(&format!("{prefix}.gn2"), h)?;
        h = self.tape.silu(h);
        h = self.conv(&format!("{prefix}.conv2"), h, 1)?;
        let c_out = self.tape.value(h).c;
        let skip = if c_in != c_out {
            self.conv(&format!("{prefix}.skip"), x, 0)?
        } else {
            x
        };
        self.tape.add(skip, h)
    }
}

/// Records the forward pass ε_θ(z_t, t, c_τ, τ) on the tape and returns
/// the output node. `t` and `tau` are per-batch-item.
pub fn forward<T: Scalar>(
    tape: &mut Tape<T>,
    params: &ParamStore<T>,
    leaves: &ParamLeaves,
    cfg: &UNetConfig,
    z_t: Feat<T>,
    t: &[f64],
    c_tau: Feat<T>,
    tau: &[f64],
) -> Result<NodeId> {
    cfg.validate()?;
    let (n, c, h, w) = z_t.shape();
    if c_tau.shape() != (n, c, h, w) {
        return Err(Error::invalid(format!(
            "z_t {:?} and c_tau {:?} must match",
            z_t.shape(),
            c_tau.shape()
        )));
    }
    if c != cfg.image_channels {
        return Err(Error::invalid(format!(
            "expected {} image channels, got {c}",
            cfg.image_channels
        )));
    }
    let div = cfg.spatial_divisor();
    if h % div != 0 || w % div != 0 {
        return Err(Error::invalid(format!(
            "spatial dims {h}x{w} must be divisible by {div}"
        )));
    }
    if t.len() != n || tau.len() != n {
        return Err(Error::invalid("need one (t, tau) per batch item"));
    }
    for &v in t.iter().chain(tau) {
        if !(0.0..=1.0).contains(&v) {
            return Err(Error::invalid(format!("t/tau must be in [0,1], got {v}")));
        }
    }

    let emb_rows_t: Vec<Vec<f64>> = t
        .iter()
        .map(|&v| sinusoidal_embedding(v, cfg.embedding_dim))
        .collect();
    let emb_rows_tau: Vec<Vec<f64>> = tau
        .iter()
        .map(|&v| sinusoidal_embedding(v, cfg.embedding_dim))
        .collect();
    let raw_t = tape.leaf(Feat::from_rows(&emb_rows_t)?);
    let raw_tau = tape.leaf(Feat::from_rows(&emb_rows_tau)?);

    let z_id = tape.leaf(z_t);
    let c_id = tape.leaf(c_tau);

    let mut b = Builder {
        tape,
        params,
        leaves,
        cfg,
    };
    let temb = b.emb_mlp("temb", raw_t)?;
    let tauemb = b.emb_mlp("tauemb", raw_tau)?;

    let cat = b.tape.concat_channels(z_id, c_id)?;
    let mut x = b.conv("stem", cat, 1)?;

    let levels = cfg.levels();
    let mut skips = Vec::with_capacity(levels);
    for lvl in 0..levels {
        for blk in 0..cfg.res_blocks_per_level {
            x = b.res_block(&format!("down.{lvl}.{blk}"), x, temb, tauemb)?;
        }
        skips.push(x);
        if lvl + 1 < levels {
            x = b.tape.avg_pool2(x)?;
        }
    }
    x = b.res_block("mid.0", x, temb, tauemb)?;
    for lvl in (0..levels).rev() {
        let skip = skips[lvl];
        x = b.tape.concat_channels(x, skip)?;
        for blk in 0..cfg.res_blocks_per_level {
            x = b.res_block(&format!("up.{lvl}.{blk}"), x, temb, tauemb)?;
        }
        if lvl > 0 {
            x = b.tape.upsample_nearest2(x);
        }
    }
    x = b.gnorm("out.gn", x)?;
    x = b.tape.silu(x);
    b.conv("out.conv", x, 1)
}

/// Inference wrapper satisfying the sampler's `Denoiser` interface.
pub struct UNetDenoiser<'a> {
    pub params: &'a ParamStore<f32>,
    pub cfg: &'a UNetConfig,
}

impl Denoiser for UNetDenoiser<'_> {
    fn predict_eps(
        &self,
        z_t: &ImageTensor,
        t: f64,
        c_tau: &ImageTensor,
        tau: f64,
    ) -> Result<ImageTensor> {
        let z = Feat::<f32>::from_images(std::slice::from_ref(z_t))?;
        let c = Feat::<f32>::from_images(std::slice::from_ref(c_tau))?;
        let mut tape = Tape::new();
        let leaves = ParamLeaves::register(&mut tape, self.params);
        let out = forward(
            &mut tape,
            self.params,
            &leaves,
            self.cfg,
            z,
            &[t],
            c,
            &[tau],
        )?;
        tape.value(out).to_image(0, ValueDomain::Latent)
    }
}

/// Independent hand count of the parameter total for a config; used to
/// cross-check `init_params`.
pub fn expected_param_count(cfg: &UNetConfig) -> usize {
    let conv = |oc: usize, ic: usize, k: usize| oc * ic * k * k + oc;
    let lin = |fo: usize, fi: usize| fo * fi + fo;
    let gn = |c: usize| 2 * c;
    let res = |cin: usize, cout: usize, emb: usize| {
        gn(cin)
            + conv(cout, cin, 3)
            + lin(cout, emb)
            + lin(cout, emb)
            + gn(cout)
            + conv(cout, cout, 3)
            + if cin != cout { conv(cout, cin, 1) } else { 0 }
    };
    let emb = cfg.embedding_dim;
    let mut total = conv(cfg.base_channels, 2 * cfg.image_channels, 3);
    total += 2 * (lin(emb, emb) + lin(emb, emb));
    let levels = cfg.levels();
    let mut c_prev = cfg.base_channels;
    for lvl in 0..levels {
        let c = cfg.level_channels(lvl);
        for blk in 0..cfg.res_blocks_per_level {
            total += res(if blk == 0 { c_prev } else { c }, c, emb);
        }
        c_prev = c;
    }
    total += res(c_prev, c_prev, emb);
    for lvl in (0..levels).rev() {
        let c = cfg.level_channels(lvl);
        let c_above = if lvl + 1 == levels {
            cfg.level_channels(levels - 1)
        } else {
            cfg.level_channels(lvl + 1)
        };
        for blk in 0..cfg.res_blocks_per_level {
            total += res(if blk == 0 { c_above + c } else { c }, c, emb);
        }
    }
    total += gn(cfg.base_channels) + conv(cfg.image_channels, cfg.base_channels, 3);
    total
}

#[cfg(test)]
mod tests {
    use super::*;

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

    fn run_forward(
        cfg: &UNetConfig,
        params: &ParamStore<f32>,
        h: usize,
        w: usize,
    ) -> Result<Feat<f32>> {
        let mut p = Prng::from_seed(5);
        let mut z = Feat::<f32>::zeros(1, cfg.image_channels, h, w);
        for v in &mut z.data {
            *v = p.normal() as f32;
        }
        let mut c = Feat::<f32>::zeros(1, cfg.image_channels, h, w);
        for v in &mut c.data {
            *v = p.uniform() as f32;
        }
        let mut tape = Tape::new();
        let leaves = ParamLeaves::register(&mut tape, params);
        let out = forward(&mut tape, params, &leaves, cfg, z, &[0.5], c, &[0.1])?;
        Ok(tape.value(out).clone())
    }

    #[test]
    fn init_is_deterministic() {
        let cfg = tiny_cfg();
        let a: ParamStore<f32> = init_params(&mut Prng::from_seed(3), &cfg).unwrap();
        let b: ParamStore<f32> = init_params(&mut Prng::from_seed(3), &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn fresh_network_outputs_zero() {
        // zero-init residual and output convs force a zero ε̂ at init
        let cfg = tiny_cfg();
        let params: ParamStore<f32> = init_params(&mut Prng::from_seed(4), &cfg).unwrap();
        let out = run_forward(&cfg, &params, 8, 8).unwrap();
        assert!(out.data.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn res_block_zero_init_passes_skip_through() {
        // with conv2 zero-initialized, one res block must return exactly
        // its skip path for a random input
        let cfg = tiny_cfg();
        let params: ParamStore<f64> = init_params(&mut Prng::from_seed(8), &cfg).unwrap();
        let mut tape: Tape<f64> = Tape::new();
        let leaves = ParamLeaves::register(&mut tape, &params);
        let mut p = Prng::from_seed(9);
        let mut x = Feat::<f64>::zeros(2, cfg.base_channels, 8, 8);
        for v in &mut x.data {
            *v = p.normal();
        }
        let emb_rows: Vec<Vec<f64>> =
            vec![sinusoidal_embedding(0.3, cfg.embedding_dim); 2];
        let raw = tape.leaf(Feat::from_rows(&emb_rows).unwrap());
        let x_id = tape.leaf(x.clone());
        let mut b = Builder {
            tape: &mut tape,
            params: &params,
            leaves: &leaves,
            cfg: &cfg,
        };
        let temb = b.emb_mlp("temb", raw).unwrap();
        let tauemb = b.emb_mlp("tauemb", raw).unwrap();
        let out = b.res_block("down.0.0", x_id, temb, tauemb).unwrap();
        assert_eq!(tape.value(out).data, x.data);
    }

    #[test]
    fn fully_convolutional_shapes() {
        let cfg = tiny_cfg();
        let params: ParamStore<f32> = init_params(&mut Prng::from_seed(6), &cfg).unwrap();
        for (h, w) in [(16, 16), (32, 32), (16, 32)] {
            let out = run_forward(&cfg, &params, h, w).unwrap();
            assert_eq!(out.shape(), (1, 3, h, w));
        }
        // divisibility violated
        assert!(run_forward(&cfg, &params, 9, 16).is_err());
    }

    #[test]
    fn parameter_count_matches_hand_count() {
        let cfg = UNetConfig {
            base_channels: 32,
            channel_multipliers: vec![1, 2],
            res_blocks_per_level: 2,
            embedding_dim: 64,
            image_channels: 3,
            norm_groups: 8,
        };
        let params: ParamStore<f32> = init_params(&mut Prng::from_seed(7), &cfg).unwrap();
        assert_eq!(params.num_params(), expected_param_count(&cfg));
    }

    #[test]
    fn no_attention_keys() {
        let cfg = UNetConfig::default();
        let params: ParamStore<f32> = init_params(&mut Prng::from_seed(1), &cfg).unwrap();
        assert!(params.iter().all(|(name, _)| !name.contains("attn")));
    }

    #[test]
    fn bad_time_rejected() {
        let cfg = tiny_cfg();
        let params: ParamStore<f32> = init_params(&mut Prng::from_seed(2), &cfg).unwrap();
        let z = Feat::<f32>::zeros(1, 3, 8, 8);
        let c = Feat::<f32>::zeros(1, 3, 8, 8);
        let mut tape = Tape::new();
        let leaves = ParamLeaves::register(&mut tape, &params);
        assert!(forward(&mut tape, &params, &leaves, &cfg, z, &[1.5], c, &[0.0]).is_err());
    }
}
