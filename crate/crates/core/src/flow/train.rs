//! Maximum-likelihood training of the flow.
//!
//! Per-sample NLL in nats: `0.5 ||z||^2 + (k/2) ln(2 pi) - logdet +
//! k ln 256`, the last term being the 8-bit dequantization constant; the
//! constant terms do not affect gradients but keep reported values
//! comparable. Images are dequantized with fresh `U(0, 1/256)` noise each
//! epoch. Actnorm is data-dependent-initialized on the first batch.

use super::{FlowConfig, FlowModel};
use crate::autodiff::adam::{adam_step, AdamHyper, AdamState};
use crate::autodiff::Tape;
use crate::error::{Error, Result};
use crate::field::RealImage;
use crate::rng::{derive_seed, seeded_rng};
use rand::seq::SliceRandom;
use rand::Rng;

/// Trained model plus the per-epoch mean NLL trace.
#[derive(Debug, Clone)]
pub struct FlowTrainReport {
    pub model: FlowModel,
    pub nll_trace: Vec<f64>,
}

fn dequantize(image: &RealImage, seed: u64) -> Vec<f64> {
    let mut rng = seeded_rng(seed);
    image
        .values()
        .iter()
        .map(|&v| v + rng.random::<f64>() / 256.0)
        .collect()
}

/// Per-sample NLL graph value and gradient accumulation.
struct SampleResult {
    nll: f64,
}

/// Trains a fresh flow on the dataset. Deterministic in `cfg.seed`.
pub fn train_flow(dataset: &[RealImage], cfg: &FlowConfig) -> Result<FlowTrainReport> {
    if dataset.len() < 2 {
        return Err(Error::config("flow training needs at least 2 images"));
    }
    for img in dataset {
        if img.height() != cfg.image_size || img.width() != cfg.image_size {
            return Err(Error::dims(format!(
                "dataset image {}x{} does not match configured size {}",
                img.height(),
                img.width(),
                cfg.image_size
            )));
        }
    }
    let mut model = FlowModel::build(cfg)?;
    let k = model.num_latent() as f64;
    let nll_const = 0.5 * k * (2.0 * std::f64::consts::PI).ln() + k * (256.0f64).ln();

    // Data-dependent init on the first batch (epoch-0 dequantization).
    let first: Vec<Vec<f64>> = dataset
        .iter()
        .take(cfg.batch_size.max(2).min(dataset.len()))
        .enumerate()
        .map(|(i, img)| dequantize(img, derive_seed(cfg.seed, i as u64)))
        .collect();
    model.init_actnorm(&first)?;

    let hp_template = AdamHyper::with_lr(cfg.lr);
    let mut adam: Vec<AdamState> = model
        .params()
        .iter()
        .map(|p| AdamState::new(p.numel()))
        .collect();
    let mut step_count = 0u64;
    let mut trace = Vec::with_capacity(cfg.epochs);

    for epoch in 0..cfg.epochs {
        let mut order: Vec<usize> = (0..dataset.len()).collect();
        order.shuffle(&mut seeded_rng(derive_seed(cfg.seed, 0xE0 + epoch as u64)));
        let mut epoch_nll = 0.0;
        let mut seen = 0usize;
        for batch in order.chunks(cfg.batch_size.max(1)) {
            let mut grad_acc: Vec<Vec<f64>> = model
                .params()
                .iter()
                .map(|p| vec![0.0; p.numel()])
                .collect();
            let mut batch_nll = 0.0;
            for &idx in batch {
                let data = dequantize(
                    &dataset[idx],
                    derive_seed(cfg.seed, (epoch * dataset.len() + idx) as u64),
                );
                let sample = nll_backward(&model, &data, &mut grad_acc)?;
                batch_nll += sample.nll + nll_const;
            }
            let scale = 1.0 / batch.len() as f64;
            batch_nll *= scale;
            if !batch_nll.is_finite() {
                return Err(Error::Diverged { at: epoch, trace });
            }
            epoch_nll += batch_nll * batch.len() as f64;
            seen += batch.len();
            // Linear warmup ramp on the learning rate.
            step_count += 1;
            let ramp = if cfg.warmup_steps > 0 {
                (step_count as f64 / cfg.warmup_steps as f64).min(1.0)
            } else {
                1.0
            };
            let hp = AdamHyper { lr: hp_template.lr * ramp, ..hp_template };
            if hp.lr > 0.0 {
                for (i, p) in model.params_mut().iter_mut().enumerate() {
                    for g in &mut grad_acc[i] {
                        *g *= scale;
                    }
                    adam_step(&mut p.data, &grad_acc[i], &mut adam[i], &hp);
                }
            }
        }
        trace.push(epoch_nll / seen as f64);
    }
    Ok(FlowTrainReport { model, nll_trace: trace })
}

/// Builds the NLL graph for one sample, runs backward, and adds the
/// parameter gradients into `grad_acc`. Returns the sample NLL without the
/// additive constant.
fn nll_backward(model: &FlowModel, data: &[f64], grad_acc: &mut [Vec<f64>]) -> Result<SampleResult> {
    let tape = Tape::new();
    let vars = model.push_leaves(&tape, true);
    let x = tape.constant(&[model.image_size(), model.image_size()], data.to_vec());
    let (pieces, logdet) = model.forward_graph(&tape, &x, &vars);
    let mut loss = pieces[0].sum_squares().scale(0.5);
    for p in &pieces[1..] {
        loss = loss.add(&p.sum_squares().scale(0.5));
    }
    let loss = loss.sub(&logdet);
    let grads = loss.backward()?;
    for (acc, v) in grad_acc.iter_mut().zip(&vars) {
        if let Some(g) = grads.wrt(v) {
            for (a, gi) in acc.iter_mut().zip(g) {
                *a += gi;
            }
        }
    }
    Ok(SampleResult { nll: loss.scalar() })
}
