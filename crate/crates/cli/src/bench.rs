//! Benchmark harness: runs a (image, method, ratio, noise, seed) grid,
//! one measurement set per (image, ratio, noise, seed) shared by all
//! methods, and emits:
//!
//! * `rows.csv` — one row per cell, fixed header
//!   `image,method,ratio_pct,noise_pct,seed,psnr_db,ssim,wall_time_s`;
//! * `aggregate_psnr.csv` — methods x (ratio sweep | noise sweep) means;
//! * `ssim_vs_ratio.csv`, `ssim_vs_noise.csv` — mean-SSIM curves;
//! * `cells/<id>.row` — per-cell results, the resume ledger: finished
//!   cells are skipped on re-runs.
//!
//! The grid is two sweeps: every ratio in `ratios` at `ratio_noise`
//! (default 0), plus `noise_ratio` (default 20) at every level in
//! `noise_levels`. Cells are pure functions of their parameters, so a
//! shuffled or resumed run produces identical rows.

use crate::config::decoder_for_size;
use anyhow::{bail, Context, Result};
use ptych_core::field::io::{read_png, write_atomic};
use ptych_core::field::pupil::{default_radius, default_spacing};
use ptych_core::field::{make_camera_array, make_subsample_mask, NoiseSpec, RealImage};
use ptych_core::flow::load_flow;
use ptych_core::kv::KvDoc;
use ptych_core::measurement::forward_measure;
use ptych_core::recon_classic::{IeraConfig, IeraInit, SparseConfig};
use ptych_core::recon_gen::{reconstruct, GenReconConfig, LatentInit, MethodSpec};
use ptych_core::rng::derive_seed;
use rayon::prelude::*;
use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

#[derive(Debug, Clone)]
struct BenchSpec {
    images: Vec<(String, PathBuf)>,
    ratio_sweep: Vec<(f64, f64)>,
    methods: Vec<String>,
    seeds: Vec<u64>,
    grid: usize,
    radius: Option<f64>,
    spacing: Option<f64>,
    flow_model: Option<PathBuf>,
    doc: KvDoc,
}

fn fmt_pct(v: f64) -> String {
    // Stable, filename-safe percent formatting: 2 -> "2", 2.5 -> "2.5".
    let s = format!("{v}");
    s
}

fn cell_id(image: &str, method: &str, ratio: f64, noise: f64, seed: u64) -> String {
    format!(
        "{image}__{method}__r{}__n{}__s{seed}",
        fmt_pct(ratio).replace('.', "p"),
        fmt_pct(noise).replace('.', "p")
    )
}

fn fnv1a(text: &str) -> u64 {
    let mut hash = 0xcbf29ce484222325u64;
    for b in text.as_bytes() {
        hash ^= *b as u64;
        hash = hash.wrapping_mul(0x100000001b3);
    }
    hash
}

fn parse_spec(path: &Path) -> Result<BenchSpec> {
    let doc = KvDoc::load(path)?;
    let base = path.parent().unwrap_or(Path::new("."));
    let images: Vec<(String, PathBuf)> = doc
        .require("images")?
        .split(',')
        .map(|s| s.trim())
        .filter(|s| !s.is_empty())
        .map(|s| {
            let p = base.join(s);
            let stem = p
                .file_stem()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_else(|| s.to_string());
            (stem, p)
        })
        .collect();
    if images.is_empty() {
        bail!("{}: `images` is empty", path.display());
    }
    let ratios: Vec<f64> = match doc.get("ratios") {
        Some(_) => doc.parsed_list("ratios")?,
        None => Vec::new(),
    };
    let ratio_noise: f64 = doc.parsed_or("ratio_noise", 0.0)?;
    let noise_levels: Vec<f64> = match doc.get("noise_levels") {
        Some(_) => doc.parsed_list("noise_levels")?,
        None => Vec::new(),
    };
    let noise_ratio: f64 = doc.parsed_or("noise_ratio", 20.0)?;
    let mut sweep: Vec<(f64, f64)> = Vec::new();
    for &r in &ratios {
        sweep.push((r, ratio_noise));
    }
    for &q in &noise_levels {
        sweep.push((noise_ratio, q));
    }
    sweep.dedup_by(|a, b| a == b);
    // Full dedup across the two groups.
    let mut seen = BTreeSet::new();
    sweep.retain(|&(r, q)| seen.insert((fmt_pct(r), fmt_pct(q))));
    if sweep.is_empty() {
        bail!("{}: no (ratio, noise) cells — set `ratios` or `noise_levels`", path.display());
    }
    for &(r, q) in &sweep {
        if !(r > 0.0 && r <= 100.0) {
            bail!("ratio {r} out of (0, 100]");
        }
        if q < 0.0 {
            bail!("noise level {q} must be >= 0");
        }
    }
    let methods: Vec<String> = doc
        .require("methods")?
        .split(',')
        .map(|s| s.trim().to_string())
        .filter(|s| !s.is_empty())
        .collect();
    for m in &methods {
        if !["iera", "sparse", "untrained", "invertible"].contains(&m.as_str()) {
            bail!("unknown method `{m}` in bench spec");
        }
    }
    let seeds: Vec<u64> = doc.parsed_list("seeds").unwrap_or_else(|_| vec![0]);
    let flow_model = doc.get("flow_model").map(|p| base.join(p));
    if methods.iter().any(|m| m == "invertible") && flow_model.is_none() {
        bail!("methods include `invertible` but no `flow_model` checkpoint is set");
    }
    Ok(BenchSpec {
        images,
        ratio_sweep: sweep,
        methods,
        seeds,
        grid: doc.parsed_or("grid", 5)?,
        radius: doc.get("radius").map(|_| doc.require_parsed("radius")).transpose()?,
        spacing: doc.get("spacing").map(|_| doc.require_parsed("spacing")).transpose()?,
        flow_model,
        doc,
    })
}

/// Method-prefixed keys (`untrained.lr = ...`) extracted as their own doc.
fn sub_doc(doc: &KvDoc, prefix: &str) -> KvDoc {
    let mut out = KvDoc::new();
    let p = format!("{prefix}.");
    for key in doc.keys() {
        if let Some(stripped) = key.strip_prefix(&p) {
            out.set(stripped, doc.get(key).unwrap());
        }
    }
    out
}

struct Cell {
    image_name: String,
    method: String,
    ratio: f64,
    noise: f64,
    seed: u64,
}

fn run_cell(spec: &BenchSpec, cell: &Cell, truth: &RealImage) -> Result<String> {
    let n = truth.height();
    let radius = spec.radius.unwrap_or_else(|| default_radius(n));
    let spacing = spec.spacing.unwrap_or_else(|| default_spacing(radius));
    let array = make_camera_array(n, n, spec.grid, radius, spacing)?;
    // The measurement set is shared by every method on this
    // (image, ratio, noise, seed) point.
    let meas_seed = fnv1a(&format!(
        "{}|r{}|n{}|s{}",
        cell.image_name,
        fmt_pct(cell.ratio),
        fmt_pct(cell.noise),
        cell.seed
    ));
    let masks = make_subsample_mask(
        n,
        n,
        array.num_cameras(),
        cell.ratio,
        derive_seed(meas_seed, 1),
    )?;
    let noise = NoiseSpec::new(cell.noise, derive_seed(meas_seed, 2));
    let m = forward_measure(truth, &array, &masks, &noise)?;

    let method_spec = match cell.method.as_str() {
        "iera" => {
            let d = sub_doc(&spec.doc, "iera");
            MethodSpec::Iera(IeraConfig {
                epochs: d.parsed_or("epochs", 100)?,
                init: IeraInit::FlatMagnitude,
                track_residual: false,
            })
        }
        "sparse" => {
            let d = sub_doc(&spec.doc, "sparse");
            MethodSpec::Sparse(SparseConfig {
                iera: IeraConfig {
                    epochs: d.parsed_or("epochs", 100)?,
                    init: IeraInit::FlatMagnitude,
                    track_residual: false,
                },
                sparsity_s: d.parsed_or("sparsity", (n * n / 8).max(1))?,
            })
        }
        "untrained" => {
            let d = sub_doc(&spec.doc, "untrained");
            let decoder = decoder_for_size(&d, n, cell.seed)?;
            MethodSpec::Untrained {
                decoder,
                opt: GenReconConfig {
                    iterations: d.parsed_or("iterations", 5000)?,
                    lr: d.parsed_or("lr", 0.01)?,
                    seed: cell.seed,
                    log_every: 0,
                    latent_init: LatentInit::Zeros,
                    latent_penalty: 0.0,
                },
            }
        }
        "invertible" => {
            let d = sub_doc(&spec.doc, "invertible");
            let model = load_flow(spec.flow_model.as_ref().expect("validated in parse_spec"))?;
            MethodSpec::Invertible {
                model,
                opt: GenReconConfig {
                    iterations: d.parsed_or("iterations", 3000)?,
                    lr: d.parsed_or("lr", 0.05)?,
                    seed: cell.seed,
                    log_every: 0,
                    latent_init: LatentInit::Zeros,
                    latent_penalty: d.parsed_or("latent_penalty", 0.0)?,
                },
            }
        }
        other => bail!("unknown method `{other}`"),
    };
    let result = reconstruct(&m, &method_spec, Some(truth))?;
    let metrics = result.metrics.expect("truth provided");
    Ok(format!(
        "{},{},{},{},{},{:.6},{:.6},{:.3}",
        cell.image_name,
        cell.method,
        fmt_pct(cell.ratio),
        fmt_pct(cell.noise),
        cell.seed,
        metrics.psnr_db,
        metrics.ssim,
        result.wall_time_s
    ))
}

pub const ROWS_HEADER: &str = "image,method,ratio_pct,noise_pct,seed,psnr_db,ssim,wall_time_s";

fn mean(values: &[f64]) -> f64 {
    values.iter().sum::<f64>() / values.len() as f64
}

struct ParsedRow {
    method: String,
    ratio: f64,
    noise: f64,
    psnr: f64,
    ssim: f64,
}

fn parse_row(line: &str) -> Result<ParsedRow> {
    let parts: Vec<&str> = line.split(',').collect();
    if parts.len() != 8 {
        bail!("malformed row `{line}`");
    }
    Ok(ParsedRow {
        method: parts[1].to_string(),
        ratio: parts[2].parse()?,
        noise: parts[3].parse()?,
        psnr: parts[5].parse()?,
        ssim: parts[6].parse()?,
    })
}

fn write_outputs(spec: &BenchSpec, out: &Path, rows: &[String]) -> Result<()> {
    let mut sorted = rows.to_vec();
    sorted.sort();
    let mut rows_csv = String::from(ROWS_HEADER);
    rows_csv.push('\n');
    for r in &sorted {
        rows_csv.push_str(r);
        rows_csv.push('\n');
    }
    write_atomic(&out.join("rows.csv"), rows_csv.as_bytes())?;

    let parsed: Vec<ParsedRow> = sorted.iter().map(|r| parse_row(r)).collect::<Result<_>>()?;
    let ratio_noise: f64 = spec.doc.parsed_or("ratio_noise", 0.0).unwrap_or(0.0);
    let noise_ratio: f64 = spec.doc.parsed_or("noise_ratio", 20.0).unwrap_or(20.0);
    let ratio_cols: Vec<f64> = spec
        .ratio_sweep
        .iter()
        .filter(|&&(_, q)| q == ratio_noise)
        .map(|&(r, _)| r)
        .collect();
    let noise_cols: Vec<f64> = spec
        .ratio_sweep
        .iter()
        .filter(|&&(r, _)| r == noise_ratio)
        .map(|&(_, q)| q)
        .collect();

    // Table-1-shaped aggregate: methods x (ratio sweep | noise sweep).
    let mut agg = String::from("method");
    for r in &ratio_cols {
        agg.push_str(&format!(",ratio_{}", fmt_pct(*r)));
    }
    for q in &noise_cols {
        agg.push_str(&format!(",noise_{}", fmt_pct(*q)));
    }
    agg.push('\n');
    let collect = |method: &str, ratio: f64, noise: f64, which: &str| -> Vec<f64> {
        parsed
            .iter()
            .filter(|p| p.method == method && p.ratio == ratio && p.noise == noise)
            .map(|p| if which == "psnr" { p.psnr } else { p.ssim })
            .collect()
    };
    for method in &spec.methods {
        agg.push_str(method);
        for &r in &ratio_cols {
            let vals = collect(method, r, ratio_noise, "psnr");
            agg.push_str(&format!(",{:.4}", mean(&vals)));
        }
        for &q in &noise_cols {
            let vals = collect(method, noise_ratio, q, "psnr");
            agg.push_str(&format!(",{:.4}", mean(&vals)));
        }
        agg.push('\n');
    }
    write_atomic(&out.join("aggregate_psnr.csv"), agg.as_bytes())?;

    // Fig-2-shaped SSIM curves.
    let mut curve_r = String::from("method,ratio_pct,mean_ssim\n");
    for method in &spec.methods {
        for &r in &ratio_cols {
            let vals = collect(method, r, ratio_noise, "ssim");
            curve_r.push_str(&format!("{method},{},{:.6}\n", fmt_pct(r), mean(&vals)));
        }
    }
    write_atomic(&out.join("ssim_vs_ratio.csv"), curve_r.as_bytes())?;
    let mut curve_n = String::from("method,noise_pct,mean_ssim\n");
    for method in &spec.methods {
        for &q in &noise_cols {
            let vals = collect(method, noise_ratio, q, "ssim");
            curve_n.push_str(&format!("{method},{},{:.6}\n", fmt_pct(q), mean(&vals)));
        }
    }
    write_atomic(&out.join("ssim_vs_noise.csv"), curve_n.as_bytes())?;
    Ok(())
}

pub fn run(spec_path: &Path, out: &Path) -> Result<()> {
    let spec = parse_spec(spec_path)?;
    let cells_dir = out.join("cells");
    std::fs::create_dir_all(&cells_dir)?;

    // Load and validate truth images once.
    let truths: Vec<RealImage> = spec
        .images
        .iter()
        .map(|(_, p)| read_png(p).with_context(|| format!("reading {}", p.display())))
        .collect::<Result<_>>()?;
    for ((name, _), img) in spec.images.iter().zip(&truths) {
        if img.height() != img.width() || !img.height().is_power_of_two() {
            bail!("image `{name}` must be square with power-of-two side");
        }
    }

    let mut cells: Vec<(usize, Cell)> = Vec::new();
    for (i, (name, _)) in spec.images.iter().enumerate() {
        for method in &spec.methods {
            for &(ratio, noise) in &spec.ratio_sweep {
                for &seed in &spec.seeds {
                    cells.push((
                        i,
                        Cell {
                            image_name: name.clone(),
                            method: method.clone(),
                            ratio,
                            noise,
                            seed,
                        },
                    ));
                }
            }
        }
    }
    println!(
        "bench: {} cells ({} images x {} methods x {} points x {} seeds)",
        cells.len(),
        spec.images.len(),
        spec.methods.len(),
        spec.ratio_sweep.len(),
        spec.seeds.len()
    );

    let outcomes: Vec<(String, std::result::Result<bool, String>)> = cells
        .par_iter()
        .map(|(img_idx, cell)| {
            let id = cell_id(&cell.image_name, &cell.method, cell.ratio, cell.noise, cell.seed);
            let row_path = cells_dir.join(format!("{id}.row"));
            if row_path.exists() {
                return (id, Ok(false));
            }
            let _ = std::fs::remove_file(cells_dir.join(format!("{id}.err")));
            match run_cell(&spec, cell, &truths[*img_idx]) {
                Ok(row) => match write_atomic(&row_path, row.as_bytes()) {
                    Ok(()) => (id, Ok(true)),
                    Err(e) => (id, Err(e.to_string())),
                },
                Err(e) => {
                    let _ = write_atomic(
                        &cells_dir.join(format!("{id}.err")),
                        e.to_string().as_bytes(),
                    );
                    (id, Err(e.to_string()))
                }
            }
        })
        .collect();

    let computed = outcomes.iter().filter(|(_, r)| matches!(r, Ok(true))).count();
    let skipped = outcomes.iter().filter(|(_, r)| matches!(r, Ok(false))).count();
    let failures: Vec<(String, String)> = outcomes
        .iter()
        .filter_map(|(id, r)| r.as_ref().err().map(|e| (id.clone(), e.clone())))
        .collect();

    // Assemble rows from the cell ledger (includes previous runs).
    let mut rows = Vec::new();
    for (_, cell) in &cells {
        let id = cell_id(&cell.image_name, &cell.method, cell.ratio, cell.noise, cell.seed);
        let row_path = cells_dir.join(format!("{id}.row"));
        if let Ok(row) = std::fs::read_to_string(&row_path) {
            rows.push(row.trim().to_string());
        }
    }
    write_outputs(&spec, out, &rows)?;

    println!("bench: computed {computed}, skipped {skipped}, failed {}", failures.len());
    if !failures.is_empty() {
        let mut csv = String::from("cell,error\n");
        for (id, e) in &failures {
            csv.push_str(&format!("{id},\"{}\"\n", e.replace('"', "'")));
        }
        write_atomic(&out.join("failures.csv"), csv.as_bytes())?;
        bail!("{} bench cells failed (see failures.csv)", failures.len());
    }
    Ok(())
}
