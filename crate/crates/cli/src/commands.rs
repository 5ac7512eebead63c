//! Subcommand implementations.

use crate::{config, Method};
use anyhow::{bail, Context, Result};
use ptych_core::field::io::{read_png, read_ptyf, write_atomic, write_png, write_ptyf};
use ptych_core::field::pupil::{default_radius, default_spacing};
use ptych_core::field::{make_camera_array, make_subsample_mask, NoiseSpec, RealImage};
use ptych_core::flow::{load_flow, save_flow, train_flow as run_flow_training};
use ptych_core::kv::KvDoc;
use ptych_core::measurement::{forward_measure, store};
use ptych_core::metrics::MetricReport;
use ptych_core::recon_classic::trace_to_csv;
use ptych_core::recon_gen::{reconstruct as run_reconstruct, MethodSpec, ReconResult};
use ptych_core::rng::derive_seed;
use std::path::Path;

#[allow(clippy::too_many_arguments)]
pub fn simulate(
    image: &Path,
    grid: usize,
    radius: Option<f64>,
    spacing: Option<f64>,
    ratio: f64,
    noise: f64,
    seed: u64,
    out: &Path,
) -> Result<()> {
    let truth = read_png(image).with_context(|| format!("reading {}", image.display()))?;
    if truth.height() != truth.width() {
        bail!("input image must be square, got {}x{}", truth.height(), truth.width());
    }
    let n = truth.height();
    let radius = radius.unwrap_or_else(|| default_radius(n));
    let spacing = spacing.unwrap_or_else(|| default_spacing(radius));
    let array = make_camera_array(n, n, grid, radius, spacing)?;
    let masks = make_subsample_mask(n, n, array.num_cameras(), ratio, derive_seed(seed, 1))?;
    let noise_spec = NoiseSpec::new(noise, derive_seed(seed, 2));
    let m = forward_measure(&truth, &array, &masks, &noise_spec)?;
    store::save(&m, out)?;
    println!(
        "simulated {} cameras ({}x{} grid, radius {radius}, spacing {spacing}) \
         at ratio {ratio}% noise {noise}% -> {}",
        array.num_cameras(),
        grid,
        grid,
        out.display()
    );
    Ok(())
}

fn method_spec(
    method: Method,
    model: Option<&Path>,
    config_path: &Path,
    size: usize,
) -> Result<MethodSpec> {
    Ok(match method {
        Method::Iera => MethodSpec::Iera(config::load_iera(config_path)?),
        Method::Sparse => MethodSpec::Sparse(config::load_sparse(config_path)?),
        Method::Untrained => {
            let (decoder, opt) = config::load_untrained(config_path, size)?;
            MethodSpec::Untrained { decoder, opt }
        }
        Method::Invertible => {
            let Some(ckpt) = model else {
                bail!("--method invertible requires --model <checkpoint dir>");
            };
            let model = load_flow(ckpt)
                .with_context(|| format!("loading flow checkpoint {}", ckpt.display()))?;
            MethodSpec::Invertible { model, opt: config::load_invertible(config_path)? }
        }
    })
}

fn write_result(out: &Path, result: &ReconResult) -> Result<()> {
    std::fs::create_dir_all(out)?;
    write_png(&out.join("recon.png"), &result.image)?;
    write_ptyf(&out.join("recon.ptyf"), &result.image)?;
    write_atomic(&out.join("loss.csv"), trace_to_csv(&result.loss_trace).as_bytes())?;
    if let Some(metrics) = &result.metrics {
        let mut doc = KvDoc::new();
        doc.set("psnr_db", format!("{:.6}", metrics.psnr_db));
        doc.set("ssim", format!("{:.6}", metrics.ssim));
        doc.save(&out.join("metrics.txt"))?;
    }
    Ok(())
}

pub fn reconstruct(
    measurements: &Path,
    method: Method,
    model: Option<&Path>,
    config_path: &Path,
    truth: Option<&Path>,
    out: &Path,
) -> Result<()> {
    let m = store::load(measurements)
        .with_context(|| format!("loading measurements from {}", measurements.display()))?;
    let spec = method_spec(method, model, config_path, m.height())?;
    let truth_img = truth.map(read_png).transpose()?;
    let result = run_reconstruct(&m, &spec, truth_img.as_ref())?;
    write_result(out, &result)?;
    let metrics = result
        .metrics
        .map(|r| format!(" psnr {:.2} dB ssim {:.4}", r.psnr_db, r.ssim))
        .unwrap_or_default();
    println!(
        "{} finished: best loss {:.6e} at iteration {} in {:.1}s{} -> {}",
        spec.name(),
        result.best_loss,
        result.best_iteration,
        result.wall_time_s,
        metrics,
        out.display()
    );
    Ok(())
}

fn read_image_any(path: &Path) -> Result<RealImage> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("ptyf") => Ok(read_ptyf(path)?),
        _ => Ok(read_png(path)?),
    }
}

pub fn metrics(reference: &Path, candidate: &Path) -> Result<()> {
    let a = read_image_any(reference)?;
    let b = read_image_any(candidate)?;
    let report = MetricReport::compute(&a, &b)?;
    println!("psnr_db = {:.6}", report.psnr_db);
    println!("ssim = {:.6}", report.ssim);
    Ok(())
}

pub fn train_flow(config_path: &Path, data: &Path, out: &Path) -> Result<()> {
    let cfg = config::load_flow_config(config_path)?;
    let mut paths: Vec<_> = std::fs::read_dir(data)
        .with_context(|| format!("reading {}", data.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().and_then(|e| e.to_str()) == Some("png"))
        .collect();
    paths.sort();
    if paths.len() < 2 {
        bail!("{}: need at least 2 PNG images, found {}", data.display(), paths.len());
    }
    let dataset: Vec<RealImage> = paths
        .iter()
        .map(|p| read_png(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    println!(
        "training flow (levels {}, K {}, {}x{}, {} images, {} epochs)",
        cfg.levels, cfg.steps_per_level, cfg.image_size, cfg.image_size, dataset.len(), cfg.epochs
    );
    let report = run_flow_training(&dataset, &cfg)?;
    save_flow(&report.model, out)?;
    let mut doc = KvDoc::new();
    for (i, v) in report.nll_trace.iter().enumerate() {
        doc.set(&format!("epoch.{i:04}.nll"), format!("{v:.6}"));
    }
    doc.save(&out.join("nll_trace.txt"))?;
    println!(
        "nll {:.3} -> {:.3} over {} epochs -> {}",
        report.nll_trace.first().unwrap_or(&f64::NAN),
        report.nll_trace.last().unwrap_or(&f64::NAN),
        report.nll_trace.len(),
        out.display()
    );
    Ok(())
}

pub fn synth(out: &Path, size: usize, kind: &str, count: usize, seed: u64) -> Result<()> {
    std::fs::create_dir_all(out)?;
    let mut written = 0usize;
    match kind {
        "set" => {
            for (name, img) in ptych_core::synth::fallback_set(size) {
                write_png(&out.join(format!("{name}.png")), &img)?;
                written += 1;
            }
        }
        "blobs" => {
            for (i, img) in ptych_core::synth::blob_dataset(size, count, seed)
                .into_iter()
                .enumerate()
            {
                write_png(&out.join(format!("blobs_{i:04}.png")), &img)?;
                written += 1;
            }
        }
        "bars" => {
            for i in 0..count {
                let img = ptych_core::synth::bars(size, size, (size / 16).max(1) + i, i % 2 == 0);
                write_png(&out.join(format!("bars_{i:04}.png")), &img)?;
                written += 1;
            }
        }
        "chart" => {
            write_png(&out.join("chart.png"), &ptych_core::synth::chart(size, size))?;
            written += 1;
        }
        other => bail!("unknown kind `{other}` (expected set|blobs|bars|chart)"),
    }
    println!("wrote {written} images to {}", out.display());
    Ok(())
}
