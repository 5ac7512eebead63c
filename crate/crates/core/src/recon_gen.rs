//! Generative reconstruction: fitting a randomly initialized decoder's
//! weights (untrained prior) or a latent vector through a trained
//! invertible flow, both by Adam on the differentiable measurement loss.
//!
//! Both solvers keep the best-loss iterate rather than the last: this kind
//! of optimization can degrade late, and the loss at the returned image is
//! then non-increasing in the iteration budget by construction.

use crate::autodiff::adam::{adam_step, AdamHyper, AdamState};
use crate::autodiff::complex::{
    apply_a_layer, magnitude_layer, packed_pupil_const, subsample_const, subsample_layer,
};
use crate::autodiff::{Tape, Var};
use crate::decoder::{build_decoder_for, DecoderConfig};
use crate::error::{Error, Result};
use crate::field::RealImage;
use crate::flow::FlowModel;
use crate::measurement::MeasurementSet;
use crate::metrics::MetricReport;
use crate::recon_classic::{iera_reconstruct, sparse_reconstruct, IeraConfig, SparseConfig};
use crate::rng::seeded_rng;
use rand_distr::{Distribution, Normal};
use std::rc::Rc;
use std::time::Instant;

/// Latent initialization for the invertible solver.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LatentInit {
    Zeros,
    Gaussian { sigma: f64 },
}

/// Optimization loop settings shared by both generative solvers.
#[derive(Debug, Clone, PartialEq)]
pub struct GenReconConfig {
    pub iterations: usize,
    pub lr: f64,
    pub seed: u64,
    /// Print a progress line to stderr every this many iterations (0 = off).
    pub log_every: usize,
    /// Invertible solver only.
    pub latent_init: LatentInit,
    /// Optional `lambda * ||z||^2` term (default 0, the loss is used as-is).
    pub latent_penalty: f64,
}

impl GenReconConfig {
    pub fn untrained_default(seed: u64) -> Self {
        Self {
            iterations: 5000,
            lr: 0.01,
            seed,
            log_every: 0,
            latent_init: LatentInit::Zeros,
            latent_penalty: 0.0,
        }
    }

    pub fn invertible_default(seed: u64) -> Self {
        Self {
            iterations: 3000,
            lr: 0.05,
            seed,
            log_every: 0,
            latent_init: LatentInit::Zeros,
            latent_penalty: 0.0,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.iterations == 0 {
            return Err(Error::config("iterations must be >= 1"));
        }
        if !(self.lr > 0.0) {
            return Err(Error::config("lr must be > 0"));
        }
        if self.latent_penalty < 0.0 {
            return Err(Error::config("latent_penalty must be >= 0"));
        }
        Ok(())
    }
}

/// A finished reconstruction.
#[derive(Debug, Clone)]
pub struct ReconResult {
    pub image: RealImage,
    /// Measurement loss per recorded iteration (or per epoch for the
    /// classical methods, including the initial estimate).
    pub loss_trace: Vec<f64>,
    /// Loss at the returned (best) iterate.
    pub best_loss: f64,
    pub best_iteration: usize,
    pub metrics: Option<MetricReport>,
    pub wall_time_s: f64,
}

/// Pre-expanded constants of the measurement chain, built once per solve.
struct ChainConsts {
    pupils: Vec<Rc<Vec<f64>>>,
    masks: Vec<Rc<Vec<f64>>>,
    ys: Vec<Vec<f64>>,
}

impl ChainConsts {
    fn new(m: &MeasurementSet) -> Self {
        let pupils = m.array().pupils().iter().map(packed_pupil_const).collect();
        let masks = (0..m.num_cameras())
            .map(|l| subsample_const(m.masks(), l))
            .collect();
        let ys = (0..m.num_cameras())
            .map(|l| m.camera_y(l).values().to_vec())
            .collect();
        Self { pupils, masks, ys }
    }
}

/// The measurement loss as a graph over the estimate `x` (an `(H, W)`
/// tensor): `sum_l || y_l - M_l |A_l(x)| ||^2`, summed in camera order.
fn loss_graph(tape: &Tape, x: &Var, m: &MeasurementSet, consts: &ChainConsts) -> Var {
    let dims = [m.height(), m.width()];
    let mut total: Option<Var> = None;
    for l in 0..m.num_cameras() {
        let field = apply_a_layer(x, consts.pupils[l].clone());
        let masked = subsample_layer(&magnitude_layer(&field), consts.masks[l].clone());
        let y = tape.constant(&dims, consts.ys[l].clone());
        let term = y.sub(&masked).sum_squares();
        total = Some(match total {
            None => term,
            Some(t) => t.add(&term),
        });
    }
    total.expect("measurement sets have at least one camera")
}

fn wrap_divergence(err: Error, at: usize, trace: &[f64]) -> Error {
    match err {
        Error::NonFinite(_) => Error::Diverged { at, trace: trace.to_vec() },
        other => other,
    }
}

/// Fits decoder weights against the measurements (the untrained prior).
pub fn untrained_ptych(
    m: &MeasurementSet,
    dcfg: &DecoderConfig,
    ocfg: &GenReconConfig,
) -> Result<ReconResult> {
    ocfg.validate()?;
    let start = Instant::now();
    let mut net = build_decoder_for(dcfg, Some((m.height(), m.width())))?;
    let consts = ChainConsts::new(m);
    let hp = AdamHyper::with_lr(ocfg.lr);
    let mut adam: Vec<AdamState> = net.params().iter().map(|p| AdamState::new(p.numel())).collect();
    let mut trace = Vec::with_capacity(ocfg.iterations);
    let mut best: (f64, usize, Vec<f64>) = (f64::INFINITY, 0, Vec::new());
    for it in 0..ocfg.iterations {
        let tape = Tape::new();
        let (out, vars) = net.forward_graph(&tape);
        let loss = loss_graph(&tape, &out, m, &consts);
        let loss_val = loss.scalar();
        if !loss_val.is_finite() {
            return Err(Error::Diverged { at: it, trace });
        }
        trace.push(loss_val);
        if loss_val < best.0 {
            best = (loss_val, it, out.value());
        }
        if ocfg.log_every > 0 && it % ocfg.log_every == 0 {
            eprintln!("untrained iter {it}: loss {loss_val:.6e}");
        }
        let grads = loss.backward().map_err(|e| wrap_divergence(e, it, &trace))?;
        for (i, p) in net.params_mut().iter_mut().enumerate() {
            adam_step(&mut p.data, &grads.or_zeros(&vars[i]), &mut adam[i], &hp);
        }
    }
    let image = RealImage::new(m.height(), m.width(), best.2)?.clamped();
    Ok(ReconResult {
        image,
        loss_trace: trace,
        best_loss: best.0,
        best_iteration: best.1,
        metrics: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Optimizes the full-dimensional latent of a trained flow against the
/// measurements. The best iterate is selected by the measurement term
/// (the optional latent penalty shapes the search only).
pub fn invertible_ptych(
    m: &MeasurementSet,
    model: &FlowModel,
    ocfg: &GenReconConfig,
) -> Result<ReconResult> {
    ocfg.validate()?;
    if model.image_size() != m.height() || model.image_size() != m.width() {
        return Err(Error::dims(format!(
            "flow generates {0}x{0} images but measurements are {1}x{2}",
            model.image_size(),
            m.height(),
            m.width()
        )));
    }
    let start = Instant::now();
    let k = model.num_latent();
    let mut z: Vec<f64> = match ocfg.latent_init {
        LatentInit::Zeros => vec![0.0; k],
        LatentInit::Gaussian { sigma } => {
            let normal = Normal::new(0.0, sigma).map_err(|_| Error::config("bad sigma"))?;
            let mut rng = seeded_rng(ocfg.seed);
            (0..k).map(|_| normal.sample(&mut rng)).collect()
        }
    };
    let consts = ChainConsts::new(m);
    let hp = AdamHyper::with_lr(ocfg.lr);
    let mut adam = AdamState::new(k);
    let mut trace = Vec::with_capacity(ocfg.iterations);
    let mut best: (f64, usize, Vec<f64>) = (f64::INFINITY, 0, Vec::new());
    for it in 0..ocfg.iterations {
        let tape = Tape::new();
        let vars = model.push_leaves(&tape, false);
        let zv = tape.leaf(&[k], z.clone(), true);
        let x = model.inverse_graph(&zv, &vars);
        let fit = loss_graph(&tape, &x, m, &consts);
        let fit_val = fit.scalar();
        if !fit_val.is_finite() {
            return Err(Error::Diverged { at: it, trace });
        }
        trace.push(fit_val);
        if fit_val < best.0 {
            best = (fit_val, it, x.value());
        }
        if ocfg.log_every > 0 && it % ocfg.log_every == 0 {
            eprintln!("invertible iter {it}: loss {fit_val:.6e}");
        }
        let objective = if ocfg.latent_penalty > 0.0 {
            fit.add(&zv.sum_squares().scale(ocfg.latent_penalty))
        } else {
            fit
        };
        let grads = objective.backward().map_err(|e| wrap_divergence(e, it, &trace))?;
        adam_step(&mut z, &grads.or_zeros(&zv), &mut adam, &hp);
    }
    let image = RealImage::new(m.height(), m.width(), best.2)?.clamped();
    Ok(ReconResult {
        image,
        loss_trace: trace,
        best_loss: best.0,
        best_iteration: best.1,
        metrics: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    })
}

/// Uniform dispatch over all four solvers.
#[derive(Debug, Clone)]
pub enum MethodSpec {
    Iera(IeraConfig),
    Sparse(SparseConfig),
    Untrained { decoder: DecoderConfig, opt: GenReconConfig },
    Invertible { model: FlowModel, opt: GenReconConfig },
}

impl MethodSpec {
    pub fn name(&self) -> &'static str {
        match self {
            MethodSpec::Iera(_) => "iera",
            MethodSpec::Sparse(_) => "sparse",
            MethodSpec::Untrained { .. } => "untrained",
            MethodSpec::Invertible { .. } => "invertible",
        }
    }
}

/// Runs the chosen method, normalizes the outcome into [`ReconResult`]
/// and fills in metrics when the ground truth is provided.
pub fn reconstruct(
    m: &MeasurementSet,
    spec: &MethodSpec,
    truth: Option<&RealImage>,
) -> Result<ReconResult> {
    let start = Instant::now();
    let mut result = match spec {
        MethodSpec::Iera(cfg) => {
            let (image, trace) = iera_reconstruct(m, cfg)?;
            from_classic(image, trace, start)
        }
        MethodSpec::Sparse(cfg) => {
            let (image, trace) = sparse_reconstruct(m, cfg)?;
            from_classic(image, trace, start)
        }
        MethodSpec::Untrained { decoder, opt } => untrained_ptych(m, decoder, opt)?,
        MethodSpec::Invertible { model, opt } => invertible_ptych(m, model, opt)?,
    };
    if let Some(t) = truth {
        result.metrics = Some(MetricReport::compute(t, &result.image)?);
    }
    Ok(result)
}

fn from_classic(image: RealImage, trace: Vec<f64>, start: Instant) -> ReconResult {
    let (best_loss, best_iteration) = trace
        .iter()
        .enumerate()
        .map(|(i, &v)| (v, i))
        .fold((f64::INFINITY, 0), |acc, (v, i)| if v < acc.0 { (v, i) } else { acc });
    ReconResult {
        image,
        loss_trace: trace,
        best_loss,
        best_iteration,
        metrics: None,
        wall_time_s: start.elapsed().as_secs_f64(),
    }
}
