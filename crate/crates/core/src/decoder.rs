//! Untrained convolutional decoder prior.
//!
//! A skip-free deep-decoder-style generator: a fixed random latent block is
//! repeatedly upsampled (nearest, x2), convolved (3x3), channel-normalized
//! and activated (leaky ReLU 0.2), then collapsed to one channel by a 1x1
//! convolution and squashed with a sigmoid. Only the weights are optimized;
//! the latent stays fixed. An optional learned skip path (1x1 projection of
//! each stage's input, upsampled and added to the stage output) is exposed
//! behind [`DecoderConfig::skip`] for fidelity experiments.

use crate::autodiff::checkpoint::Parameter;
use crate::autodiff::{Tape, Var};
use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use rand::Rng;
use rand_distr::{Distribution, Normal};

/// Architecture and initialization choices for [`build_decoder`].
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderConfig {
    /// Latent block shape `(channels, h0, w0)`; the output is
    /// `h0 * 2^stages` pixels tall (and likewise for width).
    pub latent_channels: usize,
    pub latent_h: usize,
    pub latent_w: usize,
    /// Number of x2 upsampling stages.
    pub stages: usize,
    /// Output channels per stage; length must equal `stages`.
    pub channels_per_stage: Vec<usize>,
    /// Learned residual skip path per stage (default off).
    pub skip: bool,
    pub seed: u64,
}

/// Default channel progression, truncated or extended to `stages`.
pub const DEFAULT_CHANNELS: [usize; 6] = [128, 128, 64, 64, 32, 16];

impl DecoderConfig {
    /// Default configuration generating `size x size` images from an
    /// 8x8 latent block (or smaller for tiny outputs).
    pub fn for_output(size: usize, seed: u64) -> Result<Self> {
        if !size.is_power_of_two() || size < 2 {
            return Err(Error::config(format!(
                "output size must be a power of two >= 2, got {size}"
            )));
        }
        let latent = 8.min(size / 2);
        let stages = (size / latent).trailing_zeros() as usize;
        let channels_per_stage: Vec<usize> = (0..stages)
            .map(|i| DEFAULT_CHANNELS[i.min(DEFAULT_CHANNELS.len() - 1)])
            .collect();
        Ok(Self {
            latent_channels: 32,
            latent_h: latent,
            latent_w: latent,
            stages,
            channels_per_stage,
            skip: false,
            seed,
        })
    }

    pub fn output_dims(&self) -> (usize, usize) {
        (self.latent_h << self.stages, self.latent_w << self.stages)
    }

    fn validate(&self, target: Option<(usize, usize)>) -> Result<()> {
        if self.latent_channels == 0 || self.latent_h == 0 || self.latent_w == 0 {
            return Err(Error::config("latent dimensions must be >= 1"));
        }
        if self.stages == 0 {
            return Err(Error::config("decoder needs at least one stage"));
        }
        if self.channels_per_stage.len() != self.stages {
            return Err(Error::config(format!(
                "channels_per_stage has {} entries for {} stages",
                self.channels_per_stage.len(),
                self.stages
            )));
        }
        if self.channels_per_stage.iter().any(|&c| c == 0) {
            return Err(Error::config("stage channel counts must be >= 1"));
        }
        let dims = self.output_dims();
        if !dims.0.is_power_of_two() || !dims.1.is_power_of_two() {
            return Err(Error::config(format!(
                "decoder output {}x{} is not a power of two",
                dims.0, dims.1
            )));
        }
        if let Some(t) = target {
            if dims != t {
                return Err(Error::config(format!(
                    "decoder output {}x{} does not reach target {}x{}",
                    dims.0, dims.1, t.0, t.1
                )));
            }
        }
        Ok(())
    }
}

/// A built generator: fixed latent plus named parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct DecoderNet {
    cfg: DecoderConfig,
    latent: Vec<f64>,
    params: Vec<Parameter>,
}

fn he_normal(rng: &mut impl Rng, fan_in: usize, n: usize) -> Vec<f64> {
    let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).expect("positive sigma");
    (0..n).map(|_| normal.sample(rng)).collect()
}

/// Initializes weights (He normal), norms (identity affine) and the fixed
/// latent (uniform on `[0, 0.1)`), all from `cfg.seed`.
pub fn build_decoder(cfg: &DecoderConfig) -> Result<DecoderNet> {
    build_decoder_for(cfg, None)
}

/// As [`build_decoder`], also checking the output dims against a target.
pub fn build_decoder_for(cfg: &DecoderConfig, target: Option<(usize, usize)>) -> Result<DecoderNet> {
    cfg.validate(target)?;
    let mut rng = seeded_rng(cfg.seed);
    let latent: Vec<f64> = (0..cfg.latent_channels * cfg.latent_h * cfg.latent_w)
        .map(|_| 0.1 * rng.random::<f64>())
        .collect();
    let mut params = Vec::new();
    let mut ch_in = cfg.latent_channels;
    for (i, &ch_out) in cfg.channels_per_stage.iter().enumerate() {
        // No bias on stage convs: channel_norm subtracts the per-channel
        // mean right after, so a bias would be a dead direction.
        params.push(Parameter::new(
            format!("stage{i}.conv.w"),
            vec![ch_out, ch_in, 3, 3],
            he_normal(&mut rng, ch_in * 9, ch_out * ch_in * 9),
        ));
        params.push(Parameter::new(
            format!("stage{i}.norm.gamma"),
            vec![ch_out],
            vec![1.0; ch_out],
        ));
        params.push(Parameter::zeros(format!("stage{i}.norm.beta"), vec![ch_out]));
        if cfg.skip {
            params.push(Parameter::new(
                format!("stage{i}.skip.w"),
                vec![ch_out, ch_in, 1, 1],
                he_normal(&mut rng, ch_in, ch_out * ch_in),
            ));
            params.push(Parameter::zeros(format!("stage{i}.skip.b"), vec![ch_out]));
        }
        ch_in = ch_out;
    }
    params.push(Parameter::new(
        "final.conv.w",
        vec![1, ch_in, 1, 1],
        he_normal(&mut rng, ch_in, ch_in),
    ));
    params.push(Parameter::zeros("final.conv.b", vec![1]));
    Ok(DecoderNet { cfg: cfg.clone(), latent, params })
}

/// Closed-form parameter count for a config (the oracle the tests compare
/// against the built net): per stage `9*ci*co` for the bias-free conv plus
/// `2*co` for the norm affine (plus `ci*co + co` for the optional skip),
/// then `ci + 1` for the final 1x1 conv.
pub fn expected_param_count(cfg: &DecoderConfig) -> usize {
    let mut total = 0;
    let mut ch_in = cfg.latent_channels;
    for &ch_out in &cfg.channels_per_stage {
        total += 9 * ch_in * ch_out; // conv kernel
        total += 2 * ch_out; // norm affine
        if cfg.skip {
            total += ch_in * ch_out + ch_out;
        }
        ch_in = ch_out;
    }
    total + ch_in + 1
}

impl DecoderNet {
    pub fn config(&self) -> &DecoderConfig {
        &self.cfg
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn latent(&self) -> &[f64] {
        &self.latent
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.numel()).sum()
    }

    /// Pushes the parameters onto a tape as differentiable leaves (in
    /// `params()` order) and builds the forward graph. Returns the output
    /// image `(H, W)` and the parameter vars for gradient lookup.
    pub fn forward_graph(&self, tape: &Tape) -> (Var, Vec<Var>) {
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(&p.shape, p.data.clone(), true))
            .collect();
        let out = self.forward_with(tape, &vars);
        (out, vars)
    }

    /// Forward pass with explicit parameter vars (used both by the solver
    /// loop and by the purity test with constants).
    pub fn forward_with(&self, tape: &Tape, vars: &[Var]) -> Var {
        let cfg = &self.cfg;
        let mut x = tape.constant(
            &[cfg.latent_channels, cfg.latent_h, cfg.latent_w],
            self.latent.clone(),
        );
        let mut idx = 0;
        let mut take = || {
            let v = vars[idx].clone();
            idx += 1;
            v
        };
        for &ch_out in &cfg.channels_per_stage {
            let w = take();
            let (gamma, beta) = (take(), take());
            let up = x.upsample2();
            let zero_bias = tape.constant(&[ch_out], vec![0.0; ch_out]);
            let mut y = up
                .conv2d(&w, &zero_bias)
                .channel_norm(&gamma, &beta)
                .leaky_relu(0.2);
            if cfg.skip {
                let (sw, sb) = (take(), take());
                y = y.add(&up.conv2d(&sw, &sb));
            }
            x = y;
        }
        let (fw, fb) = (take(), take());
        let out = x.conv2d(&fw, &fb).sigmoid();
        let dims = cfg.output_dims();
        out.reshape(&[dims.0, dims.1])
    }

    /// Plain forward pass (no gradients), returning the image values.
    pub fn forward_values(&self) -> Vec<f64> {
        let tape = Tape::new();
        let vars: Vec<Var> = self
            .params
            .iter()
            .map(|p| tape.leaf(&p.shape, p.data.clone(), false))
            .collect();
        self.forward_with(&tape, &vars).value()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::check::{finite_diff_grad, relative_error};

    fn small_cfg(size: usize, seed: u64) -> DecoderConfig {
        let latent = 4.min(size / 2);
        let stages = (size / latent).trailing_zeros() as usize;
        DecoderConfig {
            latent_channels: 8,
            latent_h: latent,
            latent_w: latent,
            stages,
            channels_per_stage: vec![8; stages],
            skip: false,
            seed,
        }
    }

    #[test]
    fn output_shape_contract() {
        for size in [16usize, 64, 128, 256] {
            let cfg = small_cfg(size, 1);
            let net = build_decoder(&cfg).unwrap();
            assert_eq!(cfg.output_dims(), (size, size));
            if size <= 64 {
                let out = net.forward_values();
                assert_eq!(out.len(), size * size);
            }
        }
        // 4 * 2^4 = 64: a 4x4 latent with four stages reaches 64x64.
        let cfg = DecoderConfig {
            latent_channels: 8,
            latent_h: 4,
            latent_w: 4,
            stages: 4,
            channels_per_stage: vec![16, 16, 8, 8],
            skip: false,
            seed: 0,
        };
        let net = build_decoder(&cfg).unwrap();
        assert_eq!(net.forward_values().len(), 64 * 64);
    }

    #[test]
    fn same_seed_same_net() {
        let cfg = small_cfg(16, 42);
        let (a, b) = (build_decoder(&cfg).unwrap(), build_decoder(&cfg).unwrap());
        assert_eq!(a, b);
        let other = build_decoder(&small_cfg(16, 43)).unwrap();
        assert_ne!(a.params()[0].data, other.params()[0].data);
    }

    #[test]
    fn parameter_count_matches_closed_form() {
        let cfg = DecoderConfig::for_output(64, 7).unwrap();
        let net = build_decoder(&cfg).unwrap();
        assert_eq!(net.param_count(), expected_param_count(&cfg));
        let skip_cfg = DecoderConfig { skip: true, ..small_cfg(16, 3) };
        let net = build_decoder(&skip_cfg).unwrap();
        assert_eq!(net.param_count(), expected_param_count(&skip_cfg));
    }

    #[test]
    fn outputs_live_strictly_inside_unit_interval() {
        let net = build_decoder(&small_cfg(16, 5)).unwrap();
        let out = net.forward_values();
        assert!(out.iter().all(|&v| v > 0.0 && v < 1.0));
    }

    #[test]
    fn saturating_final_conv_drives_output_to_zero() {
        // Zero weights plus a large negative bias pin the pre-activation at
        // -30 everywhere, so the sigmoid saturates to ~0 uniformly.
        let mut net = build_decoder(&small_cfg(16, 6)).unwrap();
        let n = net.params.len();
        for v in &mut net.params_mut()[n - 2].data {
            *v = 0.0;
        }
        for v in &mut net.params_mut()[n - 1].data {
            *v = -30.0;
        }
        let out = net.forward_values();
        assert!(
            out.iter().all(|&v| v < 1e-3),
            "max {}",
            out.iter().cloned().fold(0.0, f64::max)
        );
    }

    #[test]
    fn forward_is_pure() {
        let net = build_decoder(&small_cfg(16, 9)).unwrap();
        assert_eq!(net.forward_values(), net.forward_values());
    }

    #[test]
    fn no_dead_parameters_and_gradients_match_fd() {
        // 16x16 config: every parameter tensor receives a nonzero gradient
        // of mean(output), and spot-checked tensors agree with central
        // finite differences.
        let net = build_decoder(&small_cfg(16, 11)).unwrap();
        let tape = Tape::new();
        let (out, vars) = net.forward_graph(&tape);
        let loss = out.mean();
        let grads = loss.backward().unwrap();
        for (p, v) in net.params().iter().zip(&vars) {
            let g = grads.or_zeros(v);
            let norm: f64 = g.iter().map(|x| x * x).sum::<f64>().sqrt();
            assert!(norm > 0.0, "dead gradient for {}", p.name);
        }
        // Finite differences on a few leading entries of representative
        // tensors (a conv bias, the norm affines, the final conv pair).
        for check_idx in [1usize, 2, 3, net.params().len() - 2, net.params().len() - 1] {
            let analytic = grads.or_zeros(&vars[check_idx]);
            let base = net.params()[check_idx].data.clone();
            let probe_len = base.len().min(8);
            let numeric = finite_diff_grad(
                |x| {
                    let mut probe_net = net.clone();
                    probe_net.params_mut()[check_idx].data[..probe_len]
                        .copy_from_slice(&x[..probe_len]);
                    let t = Tape::new();
                    let vars: Vec<Var> = probe_net
                        .params()
                        .iter()
                        .map(|p| t.leaf(&p.shape, p.data.clone(), false))
                        .collect();
                    probe_net.forward_with(&t, &vars).mean().scalar()
                },
                &base[..probe_len],
                1e-5,
            );
            let err = relative_error(&analytic[..probe_len], &numeric, 1e-9);
            assert!(err < 1e-4, "param {check_idx} FD mismatch: {err}");
        }
    }

    #[test]
    fn invalid_configs_are_rejected() {
        let mut cfg = small_cfg(16, 0);
        cfg.channels_per_stage.pop();
        assert!(build_decoder(&cfg).is_err());
        let cfg = small_cfg(16, 0);
        assert!(build_decoder_for(&cfg, Some((32, 32))).is_err());
        assert!(build_decoder_for(&cfg, Some((16, 16))).is_ok());
    }
}
