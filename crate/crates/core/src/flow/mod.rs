//! Toy Glow-style invertible model: exact forward/inverse maps with
//! log-determinant tracking.
//!
//! Architecture per level: squeeze (space-to-channel x2), then K steps of
//! [actnorm -> fixed channel permutation -> affine coupling]; after every
//! level except the last, half the channels exit as latents. Couplings
//! predict per-element log-scale (squashed by tanh, so scales stay in
//! `[e^-1, e]`) and shift for the second half of the channels from a small
//! conv net on the first half; the net's last layer is zero-initialized so
//! a fresh model is the identity map with log-determinant zero.
//!
//! Invertible 1x1 convolutions are replaced by fixed random channel
//! permutations: exact zero-cost log-determinant and no matrix numerics at
//! toy scale. The latent vector is the concatenation of the split-off
//! pieces (level order), each flattened channel-major, followed by the
//! final level's channels; its length equals the image pixel count.

mod train;

pub use train::{train_flow, FlowTrainReport};

use crate::autodiff::checkpoint::Parameter;
use crate::autodiff::{concat, Tape, Var};
use crate::error::{Error, Result};
use crate::field::RealImage;
use crate::kv::KvDoc;
use crate::rng::{derive_seed, seeded_rng};
use rand::seq::SliceRandom;
use rand_distr::{Distribution, Normal};
use std::path::Path;
use std::rc::Rc;

/// The latent is a flat real vector whose length equals the pixel count.
pub type LatentVector = Vec<f64>;

/// Build/training configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowConfig {
    /// Times the splitting is performed (the flow's own "L").
    pub levels: usize,
    /// Steps of flow per level (the paper's "K").
    pub steps_per_level: usize,
    /// Square image side, a power of two divisible by `2^levels`.
    pub image_size: usize,
    pub coupling_hidden_channels: usize,
    pub lr: f64,
    pub epochs: usize,
    pub batch_size: usize,
    /// Linear learning-rate ramp over this many optimizer steps.
    pub warmup_steps: usize,
    pub seed: u64,
}

impl FlowConfig {
    /// Toy defaults: 16x16 single-channel images, levels=2, K=4.
    pub fn toy(seed: u64) -> Self {
        Self {
            levels: 2,
            steps_per_level: 4,
            image_size: 16,
            coupling_hidden_channels: 32,
            lr: 1e-3,
            epochs: 40,
            batch_size: 50,
            warmup_steps: 100,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.levels == 0 || self.steps_per_level == 0 {
            return Err(Error::config("levels and steps_per_level must be >= 1"));
        }
        if !self.image_size.is_power_of_two() {
            return Err(Error::config("image_size must be a power of two"));
        }
        if self.image_size % (1 << self.levels) != 0 || self.image_size >> self.levels == 0 {
            return Err(Error::config(format!(
                "image_size {} is not divisible by 2^levels",
                self.image_size
            )));
        }
        if self.coupling_hidden_channels == 0 {
            return Err(Error::config("coupling_hidden_channels must be >= 1"));
        }
        Ok(())
    }
}

/// Tensors per flow step, in parameter-vector order.
const STEP_TENSORS: usize = 6; // logs, bias, w1, b1, w2, b2

/// A built flow model: structure plus parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowModel {
    levels: usize,
    steps_per_level: usize,
    image_size: usize,
    hidden: usize,
    /// Per (level, step) channel permutation tables.
    perms: Vec<Vec<Vec<usize>>>,
    params: Vec<Parameter>,
    actnorm_initialized: bool,
}

impl FlowModel {
    /// Channel count during the steps of `level`.
    fn channels_at(&self, level: usize) -> usize {
        4 << level
    }

    /// Spatial side length during the steps of `level`.
    fn side_at(&self, level: usize) -> usize {
        self.image_size >> (level + 1)
    }

    fn param_index(&self, level: usize, step: usize, tensor: usize) -> usize {
        (level * self.steps_per_level + step) * STEP_TENSORS + tensor
    }

    /// Latent piece lengths in output order.
    fn piece_lens(&self) -> Vec<usize> {
        let mut lens = Vec::with_capacity(self.levels);
        for l in 0..self.levels {
            let c = self.channels_at(l);
            let n = self.side_at(l) * self.side_at(l);
            if l + 1 < self.levels {
                lens.push(c / 2 * n);
            } else {
                lens.push(c * n);
            }
        }
        lens
    }

    pub fn image_size(&self) -> usize {
        self.image_size
    }

    pub fn levels(&self) -> usize {
        self.levels
    }

    pub fn steps_per_level(&self) -> usize {
        self.steps_per_level
    }

    pub fn num_latent(&self) -> usize {
        self.image_size * self.image_size
    }

    pub fn actnorm_initialized(&self) -> bool {
        self.actnorm_initialized
    }

    pub fn params(&self) -> &[Parameter] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Parameter] {
        &mut self.params
    }

    pub fn permutations(&self) -> &[Vec<Vec<usize>>] {
        &self.perms
    }

    /// Builds a fresh model. Couplings are identity (zero-initialized last
    /// conv), actnorm is identity until [`FlowModel::init_actnorm`] runs,
    /// permutations are drawn once from the seed.
    pub fn build(cfg: &FlowConfig) -> Result<Self> {
        cfg.validate()?;
        let mut rng = seeded_rng(derive_seed(cfg.seed, 0xF10));
        let mut perms = Vec::new();
        let mut params = Vec::new();
        for l in 0..cfg.levels {
            let c = 4 << l;
            let mut level_perms = Vec::new();
            for s in 0..cfg.steps_per_level {
                let mut perm: Vec<usize> = (0..c).collect();
                perm.shuffle(&mut rng);
                level_perms.push(perm);
                let half = c / 2;
                let hidden = cfg.coupling_hidden_channels;
                let name = |t: &str| format!("l{l}.s{s}.{t}");
                params.push(Parameter::zeros(name("actnorm.logs"), vec![c]));
                params.push(Parameter::zeros(name("actnorm.bias"), vec![c]));
                let fan_in = half * 9;
                let normal = Normal::new(0.0, (2.0 / fan_in as f64).sqrt()).unwrap();
                params.push(Parameter::new(
                    name("coupling.w1"),
                    vec![hidden, half, 3, 3],
                    (0..hidden * half * 9).map(|_| normal.sample(&mut rng)).collect(),
                ));
                params.push(Parameter::zeros(name("coupling.b1"), vec![hidden]));
                // Zero-initialized output conv: identity flow at init.
                params.push(Parameter::zeros(name("coupling.w2"), vec![c, hidden, 3, 3]));
                params.push(Parameter::zeros(name("coupling.b2"), vec![c]));
            }
            perms.push(level_perms);
        }
        Ok(Self {
            levels: cfg.levels,
            steps_per_level: cfg.steps_per_level,
            image_size: cfg.image_size,
            hidden: cfg.coupling_hidden_channels,
            perms,
            params,
            actnorm_initialized: false,
        })
    }

    /// Pushes every parameter onto `tape` in order; `requires_grad` makes
    /// them optimization leaves (training) or constants (inference).
    pub fn push_leaves(&self, tape: &Tape, requires_grad: bool) -> Vec<Var> {
        self.params
            .iter()
            .map(|p| tape.leaf(&p.shape, p.data.clone(), requires_grad))
            .collect()
    }

    fn step_vars<'a>(&self, vars: &'a [Var], level: usize, step: usize) -> [&'a Var; STEP_TENSORS] {
        let base = self.param_index(level, step, 0);
        [
            &vars[base],
            &vars[base + 1],
            &vars[base + 2],
            &vars[base + 3],
            &vars[base + 4],
            &vars[base + 5],
        ]
    }

    /// Coupling net: `raw = conv(relu(conv(xa, w1, b1)), w2, b2)`, split
    /// into (tanh-squashed) log-scale and shift for the second half.
    fn coupling_params(xa: &Var, vars: &[&Var; STEP_TENSORS], half: usize) -> (Var, Var) {
        let raw = xa.conv2d(vars[2], vars[3]).relu().conv2d(vars[4], vars[5]);
        let log_s = raw.slice(0, 0, half).tanh();
        let t = raw.slice(0, half, half);
        (log_s, t)
    }

    /// One step forward; returns the transformed tensor and the step's
    /// log-det contribution.
    fn step_forward(
        &self,
        x: &Var,
        vars: &[&Var; STEP_TENSORS],
        perm: &[usize],
        side: usize,
    ) -> (Var, Var) {
        let c = x.shape()[0];
        let half = c / 2;
        // Actnorm: y = x * exp(logs) + bias per channel.
        let scale = vars[0].exp();
        let y = x.channel_affine(&scale, vars[1]);
        let ld_act = vars[0].sum().scale((side * side) as f64);
        // Fixed permutation.
        let y = y.permute_channels(Rc::new(perm.to_vec()));
        // Affine coupling on the second half.
        let xa = y.slice(0, 0, half);
        let xb = y.slice(0, half, half);
        let (log_s, t) = Self::coupling_params(&xa, vars, half);
        let yb = xb.mul(&log_s.exp()).add(&t);
        let out = concat(&[&xa, &yb], 0);
        let ld = ld_act.add(&log_s.sum());
        (out, ld)
    }

    /// Exact inverse of [`FlowModel::step_forward`].
    fn step_inverse(&self, y: &Var, vars: &[&Var; STEP_TENSORS], perm: &[usize]) -> Var {
        let c = y.shape()[0];
        let half = c / 2;
        let ya = y.slice(0, 0, half);
        let yb = y.slice(0, half, half);
        let (log_s, t) = Self::coupling_params(&ya, vars, half);
        let xb = yb.sub(&t).mul(&log_s.neg().exp());
        let x = concat(&[&ya, &xb], 0);
        // Invert the permutation.
        let mut inv = vec![0usize; c];
        for (i, &p) in perm.iter().enumerate() {
            inv[p] = i;
        }
        let x = x.permute_channels(Rc::new(inv));
        // Invert actnorm: x = (y - bias) * exp(-logs).
        let inv_scale = vars[0].neg().exp();
        let neg_bias = vars[1].neg().mul(&inv_scale);
        x.channel_affine(&inv_scale, &neg_bias)
    }

    /// Forward graph from an `(H, W)` image tensor to the latent pieces
    /// plus total log-determinant.
    pub fn forward_graph(&self, tape: &Tape, x: &Var, vars: &[Var]) -> (Vec<Var>, Var) {
        assert_eq!(
            x.shape(),
            vec![self.image_size, self.image_size],
            "image dims mismatch"
        );
        let mut cur = x.reshape(&[1, self.image_size, self.image_size]);
        let mut pieces = Vec::with_capacity(self.levels);
        let mut logdet = tape.constant(&[1], vec![0.0]);
        for l in 0..self.levels {
            cur = cur.squeeze2();
            let side = self.side_at(l);
            for s in 0..self.steps_per_level {
                let sv = self.step_vars(vars, l, s);
                let (next, ld) = self.step_forward(&cur, &sv, &self.perms[l][s], side);
                cur = next;
                logdet = logdet.add(&ld);
            }
            let c = self.channels_at(l);
            if l + 1 < self.levels {
                let exit = cur.slice(0, c / 2, c / 2);
                pieces.push(exit.reshape(&[c / 2 * side * side]));
                cur = cur.slice(0, 0, c / 2);
            } else {
                pieces.push(cur.reshape(&[c * side * side]));
            }
        }
        (pieces, logdet)
    }

    /// Inverse graph from a flat latent `(k)` back to the `(H, W)` image.
    /// Differentiable with respect to `z` (and the parameters).
    pub fn inverse_graph(&self, z: &Var, vars: &[Var]) -> Var {
        assert_eq!(z.shape(), vec![self.num_latent()], "latent length mismatch");
        let lens = self.piece_lens();
        let mut offsets = Vec::with_capacity(lens.len());
        let mut acc = 0;
        for &len in &lens {
            offsets.push(acc);
            acc += len;
        }
        let mut cur: Option<Var> = None;
        for l in (0..self.levels).rev() {
            let side = self.side_at(l);
            let c = self.channels_at(l);
            let piece = z.slice(0, offsets[l], lens[l]);
            let mut x = if l + 1 < self.levels {
                let keep = cur.take().expect("inner level output");
                let exit = piece.reshape(&[c / 2, side, side]);
                concat(&[&keep, &exit], 0)
            } else {
                piece.reshape(&[c, side, side])
            };
            for s in (0..self.steps_per_level).rev() {
                let sv = self.step_vars(vars, l, s);
                x = self.step_inverse(&x, &sv, &self.perms[l][s]);
            }
            cur = Some(x.unsqueeze2());
        }
        cur.expect("at least one level")
            .reshape(&[self.image_size, self.image_size])
    }

    /// Plain forward pass: latent vector plus log-determinant.
    pub fn forward(&self, image: &RealImage) -> Result<(LatentVector, f64)> {
        if image.height() != self.image_size || image.width() != self.image_size {
            return Err(Error::dims(format!(
                "flow expects {0}x{0} images",
                self.image_size
            )));
        }
        self.forward_values(image.values())
    }

    /// As [`FlowModel::forward`], on raw image values.
    pub fn forward_values(&self, image: &[f64]) -> Result<(LatentVector, f64)> {
        if image.len() != self.num_latent() {
            return Err(Error::dims("image length mismatch"));
        }
        let tape = Tape::new();
        let vars = self.push_leaves(&tape, false);
        let x = tape.constant(&[self.image_size, self.image_size], image.to_vec());
        let (pieces, logdet) = self.forward_graph(&tape, &x, &vars);
        let mut z = Vec::with_capacity(self.num_latent());
        for p in &pieces {
            z.extend_from_slice(&p.value());
        }
        if !z.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("flow forward produced NaN/Inf".into()));
        }
        Ok((z, logdet.scalar()))
    }

    /// Plain inverse pass to raw (unclamped) image values.
    pub fn inverse_values(&self, z: &[f64]) -> Result<Vec<f64>> {
        if z.len() != self.num_latent() {
            return Err(Error::dims(format!(
                "latent length {} != {}",
                z.len(),
                self.num_latent()
            )));
        }
        let tape = Tape::new();
        let vars = self.push_leaves(&tape, false);
        let zv = tape.constant(&[z.len()], z.to_vec());
        let out = self.inverse_graph(&zv, &vars).value();
        if !out.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("flow inverse produced NaN/Inf".into()));
        }
        Ok(out)
    }

    /// Data-dependent actnorm initialization: running the batch through the
    /// net block by block, each actnorm is set so its output has per-channel
    /// mean 0 and variance 1 on the batch, then applied before moving on.
    pub fn init_actnorm(&mut self, batch: &[Vec<f64>]) -> Result<()> {
        if batch.is_empty() {
            return Err(Error::config("actnorm init needs a non-empty batch"));
        }
        let n = self.image_size * self.image_size;
        if batch.iter().any(|b| b.len() != n) {
            return Err(Error::dims("actnorm init batch has wrong image size"));
        }
        let tape = Tape::new();
        let mut states: Vec<Var> = batch
            .iter()
            .map(|b| {
                tape.constant(&[self.image_size, self.image_size], b.clone())
                    .reshape(&[1, self.image_size, self.image_size])
            })
            .collect();
        for l in 0..self.levels {
            states = states.into_iter().map(|x| x.squeeze2()).collect();
            let side = self.side_at(l);
            let c = self.channels_at(l);
            for s in 0..self.steps_per_level {
                // Per-channel stats of the pre-actnorm activations.
                let mut mean = vec![0.0; c];
                let mut var = vec![0.0; c];
                let count = (states.len() * side * side) as f64;
                for x in &states {
                    x.with_value(|xv| {
                        for ch in 0..c {
                            for v in &xv[ch * side * side..(ch + 1) * side * side] {
                                mean[ch] += v;
                            }
                        }
                    });
                }
                for m in &mut mean {
                    *m /= count;
                }
                for x in &states {
                    x.with_value(|xv| {
                        for ch in 0..c {
                            for v in &xv[ch * side * side..(ch + 1) * side * side] {
                                var[ch] += (v - mean[ch]) * (v - mean[ch]);
                            }
                        }
                    });
                }
                let base = self.param_index(l, s, 0);
                for ch in 0..c {
                    let std = (var[ch] / count + 1e-12).sqrt();
                    self.params[base].data[ch] = -(std.ln());
                    self.params[base + 1].data[ch] = -mean[ch] / std;
                }
                // Apply the freshly initialized step to every sample.
                let consts: Vec<Var> = (0..STEP_TENSORS)
                    .map(|t| {
                        tape.constant(
                            &self.params[base + t].shape.clone(),
                            self.params[base + t].data.clone(),
                        )
                    })
                    .collect();
                let sv: [&Var; STEP_TENSORS] = [
                    &consts[0], &consts[1], &consts[2], &consts[3], &consts[4], &consts[5],
                ];
                states = states
                    .into_iter()
                    .map(|x| self.step_forward(&x, &sv, &self.perms[l][s], side).0)
                    .collect();
            }
            if l + 1 < self.levels {
                let keep = c / 2;
                states = states.into_iter().map(|x| x.slice(0, 0, keep)).collect();
            }
        }
        self.actnorm_initialized = true;
        Ok(())
    }
}

/// Draws `z = temperature * eps`, `eps ~ N(0, I)`, and decodes it;
/// deterministic in the seed. The returned image is clamped to `[0, 1]`.
pub fn flow_sample(model: &FlowModel, temperature: f64, seed: u64) -> Result<RealImage> {
    let mut rng = seeded_rng(seed);
    let normal = Normal::new(0.0, 1.0).unwrap();
    let z: Vec<f64> = (0..model.num_latent())
        .map(|_| temperature * normal.sample(&mut rng))
        .collect();
    let values = model.inverse_values(&z)?;
    Ok(RealImage::new(model.image_size(), model.image_size(), values)?.clamped())
}

pub const TOPOLOGY_NAME: &str = "topology.txt";

/// Saves topology + parameters into a checkpoint directory.
pub fn save_flow(model: &FlowModel, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir)?;
    let mut doc = KvDoc::new();
    doc.set("image_size", model.image_size);
    doc.set("levels", model.levels);
    doc.set("steps_per_level", model.steps_per_level);
    doc.set("hidden_channels", model.hidden);
    doc.set("actnorm_initialized", model.actnorm_initialized);
    for l in 0..model.levels {
        for s in 0..model.steps_per_level {
            let table: Vec<String> = model.perms[l][s].iter().map(|p| p.to_string()).collect();
            doc.set(&format!("perm.l{l}.s{s}"), table.join(","));
        }
    }
    doc.save(&dir.join(TOPOLOGY_NAME))?;
    crate::autodiff::checkpoint::save_parameters(dir, &model.params)
}

/// Loads a checkpoint written by [`save_flow`].
pub fn load_flow(dir: &Path) -> Result<FlowModel> {
    let topo_path = dir.join(TOPOLOGY_NAME);
    let origin = topo_path.display().to_string();
    let doc = KvDoc::load(&topo_path)?;
    let levels: usize = doc.require_parsed("levels")?;
    let steps: usize = doc.require_parsed("steps_per_level")?;
    let image_size: usize = doc.require_parsed("image_size")?;
    let hidden: usize = doc.require_parsed("hidden_channels")?;
    let initialized: bool = doc.parsed_or("actnorm_initialized", false)?;
    let mut perms = Vec::with_capacity(levels);
    for l in 0..levels {
        let c = 4 << l;
        let mut level_perms = Vec::with_capacity(steps);
        for s in 0..steps {
            let raw = doc.require(&format!("perm.l{l}.s{s}"))?;
            let table: Vec<usize> = raw
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<usize>()
                        .map_err(|_| Error::format(&origin, format!("bad permutation `{raw}`")))
                })
                .collect::<Result<_>>()?;
            if table.len() != c {
                return Err(Error::format(
                    &origin,
                    format!(
                        "permutation l{l}.s{s} has {} entries, expected {c}",
                        table.len()
                    ),
                ));
            }
            let mut seen = vec![false; c];
            for &p in &table {
                if p >= c || seen[p] {
                    return Err(Error::format(&origin, "permutation table is not a bijection"));
                }
                seen[p] = true;
            }
            level_perms.push(table);
        }
        perms.push(level_perms);
    }
    let params = crate::autodiff::checkpoint::load_parameters(dir)?;
    let expected = levels * steps * STEP_TENSORS;
    if params.len() != expected {
        return Err(Error::format(
            &origin,
            format!("expected {expected} tensors, found {}", params.len()),
        ));
    }
    Ok(FlowModel {
        levels,
        steps_per_level: steps,
        image_size,
        hidden,
        perms,
        params,
        actnorm_initialized: initialized,
    })
}
