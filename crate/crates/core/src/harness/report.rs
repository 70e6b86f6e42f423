//! Result artifacts: JSON, CSV tables, raw embeddings, and quick-look PNGs.
//!
//! Everything a run produces lands in one output directory:
//!
//! ```text
//! result.json       full per-trial records and the resolved config
//! results.csv       one row per (trial, stage) with acc and nmi
//! confusion.csv     final confusion matrix summed over trials
//! curves.csv        long-format training curves (stage, metric, trial, epoch)
//! embeddings.f32    trial-0 evaluation embeddings, row-major f32 LE
//! embeddings.json   shape and labels for embeddings.f32
//! confusion.png     row-normalized confusion heatmap
//! curves.png        trial-0 loss curves, each min-max scaled
//! ```
//!
//! An existing `result.json` is never overwritten unless `force` is set.

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::Path;

use image::{Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::harness::{ExperimentResult, SweepPoint};

fn csv_err(path: &Path) -> impl Fn(csv::Error) -> Error + '_ {
    move |e| Error::io(path, io::Error::other(e))
}

/// Write every artifact for one experiment into `out_dir`.
pub fn emit_report(result: &ExperimentResult, out_dir: &Path, force: bool) -> Result<()> {
    let json_path = out_dir.join("result.json");
    if json_path.exists() && !force {
        return Err(Error::OutputExists(json_path.display().to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let file = File::create(&json_path).map_err(|e| Error::io(&json_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), result)
        .map_err(|e| Error::io(&json_path, io::Error::other(e)))?;

    write_results_csv(result, &out_dir.join("results.csv"))?;
    let summed = summed_confusion(result);
    write_confusion_csv(&summed, &out_dir.join("confusion.csv"))?;
    write_curves_csv(result, &out_dir.join("curves.csv"))?;

    if let Some(extras) = &result.extras {
        write_embeddings(
            &extras.embeddings,
            &extras.labels,
            &out_dir.join("embeddings.f32"),
            &out_dir.join("embeddings.json"),
        )?;
    }

    let png_path = out_dir.join("confusion.png");
    confusion_heatmap(&summed)
        .save(&png_path)
        .map_err(|e| Error::io(&png_path, io::Error::other(e)))?;
    if let Some(chart) = curves_chart(result) {
        let png_path = out_dir.join("curves.png");
        chart
            .save(&png_path)
            .map_err(|e| Error::io(&png_path, io::Error::other(e)))?;
    }
    Ok(())
}

/// Write the summary table and full JSON for a hyperparameter sweep.
pub fn emit_sweep_report(points: &[SweepPoint], out_dir: &Path, force: bool) -> Result<()> {
    let json_path = out_dir.join("sweep.json");
    if json_path.exists() && !force {
        return Err(Error::OutputExists(json_path.display().to_string()));
    }
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;

    let file = File::create(&json_path).map_err(|e| Error::io(&json_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), points)
        .map_err(|e| Error::io(&json_path, io::Error::other(e)))?;

    let csv_path = out_dir.join("sweep.csv");
    let file = File::create(&csv_path).map_err(|e| Error::io(&csv_path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = csv_err(&csv_path);
    w.write_record(["axis", "value", "acc_mean", "acc_std", "nmi_mean", "nmi_std"])
        .map_err(&err)?;
    for p in points {
        let s = &p.result.summary;
        w.write_record([
            p.axis.clone(),
            format!("{}", p.value),
            format!("{:.6}", s.acc.mean),
            format!("{:.6}", s.acc.std),
            format!("{:.6}", s.nmi.mean),
            format!("{:.6}", s.nmi.std),
        ])
        .map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    Ok(())
}

fn write_results_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = csv_err(path);
    w.write_record(["trial", "seed", "stage", "acc", "nmi"])
        .map_err(&err)?;
    for t in &result.trials {
        let mut row = |stage: &str, acc: f64, nmi: f64| {
            w.write_record([
                t.trial.to_string(),
                t.seed.to_string(),
                stage.to_string(),
                format!("{acc:.6}"),
                format!("{nmi:.6}"),
            ])
        };
        if let Some(e) = &t.raw_kmeans {
            row("raw_kmeans", e.acc, e.nmi).map_err(&err)?;
        }
        if let Some(e) = &t.stage1 {
            row("stage1", e.acc, e.nmi).map_err(&err)?;
        }
        if let Some(e) = &t.stage2 {
            row("stage2", e.acc, e.nmi).map_err(&err)?;
        }
        row("final", t.final_eval.acc, t.final_eval.nmi).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Final confusion matrices element-wise summed over all trials.
fn summed_confusion(result: &ExperimentResult) -> Vec<Vec<usize>> {
    let k = result.n_cluster;
    let mut sum = vec![vec![0usize; k]; k];
    for t in &result.trials {
        for (i, row) in t.final_eval.confusion.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                sum[i][j] += v;
            }
        }
    }
    sum
}

fn write_confusion_csv(confusion: &[Vec<usize>], path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = csv_err(path);
    let k = confusion.len();
    let mut header = vec!["truth".to_string()];
    header.extend((0..k).map(|j| format!("pred_{j}")));
    w.write_record(&header).map_err(&err)?;
    for (i, row) in confusion.iter().enumerate() {
        let mut rec = vec![i.to_string()];
        rec.extend(row.iter().map(|v| v.to_string()));
        w.write_record(&rec).map_err(&err)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn write_curves_csv(result: &ExperimentResult, path: &Path) -> Result<()> {
    let file = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = csv::Writer::from_writer(BufWriter::new(file));
    let err = csv_err(path);
    w.write_record(["stage", "metric", "trial", "epoch", "value"])
        .map_err(&err)?;
    for t in &result.trials {
        let mut row = |stage: &str, metric: &str, epoch: usize, value: f64| {
            w.write_record([
                stage.to_string(),
                metric.to_string(),
                t.trial.to_string(),
                epoch.to_string(),
                format!("{value:.8}"),
            ])
        };
        for (e, &v) in t.pretrain_curve.iter().enumerate() {
            row("pretrain", "reconstruction_loss", e, v).map_err(&err)?;
        }
        for (e, losses) in t.clustering_curve.iter().enumerate() {
            row("clustering", "reconstruction_loss", e, losses.rec).map_err(&err)?;
            row("clustering", "clustering_loss", e, losses.clu).map_err(&err)?;
            row("clustering", "adversarial_loss", e, losses.vat).map_err(&err)?;
        }
        for (e, &v) in t.change_trajectory.iter().enumerate() {
            row("clustering", "label_change_fraction", e, v).map_err(&err)?;
        }
        for (e, &v) in t.classifier_curve.iter().enumerate() {
            row("classifier", "classification_loss", e, v).map_err(&err)?;
        }
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}

/// Raw row-major little-endian f32 matrix plus a JSON sidecar describing it.
fn write_embeddings(
    embeddings: &ndarray::Array2<f64>,
    labels: &[usize],
    bin_path: &Path,
    meta_path: &Path,
) -> Result<()> {
    let file = File::create(bin_path).map_err(|e| Error::io(bin_path, e))?;
    let mut w = BufWriter::new(file);
    for &v in embeddings.iter() {
        w.write_all(&(v as f32).to_le_bytes())
            .map_err(|e| Error::io(bin_path, e))?;
    }
    w.flush().map_err(|e| Error::io(bin_path, e))?;

    let meta = serde_json::json!({
        "rows": embeddings.nrows(),
        "cols": embeddings.ncols(),
        "dtype": "f32le",
        "labels": labels,
    });
    let file = File::create(meta_path).map_err(|e| Error::io(meta_path, e))?;
    serde_json::to_writer_pretty(BufWriter::new(file), &meta)
        .map_err(|e| Error::io(meta_path, io::Error::other(e)))?;
    Ok(())
}

const CELL: u32 = 40;
const GRID: Rgb<u8> = Rgb([90, 90, 90]);

fn lerp(a: u8, b: u8, t: f64) -> u8 {
    (a as f64 + (b as f64 - a as f64) * t).round().clamp(0.0, 255.0) as u8
}

/// White-to-blue cell color for a row-normalized confusion value in [0, 1].
fn heat_color(t: f64) -> Rgb<u8> {
    Rgb([
        lerp(255, 13, t),
        lerp(255, 71, t),
        lerp(255, 161, t),
    ])
}

/// Row-normalized heatmap: each row's cells are shaded by the fraction of
/// that true class they received.
fn confusion_heatmap(confusion: &[Vec<usize>]) -> RgbImage {
    let k = confusion.len() as u32;
    let side = k * CELL + (k + 1);
    let mut img = RgbImage::from_pixel(side, side, GRID);
    for (i, row) in confusion.iter().enumerate() {
        let total: usize = row.iter().sum();
        for (j, &v) in row.iter().enumerate() {
            let t = if total == 0 {
                0.0
            } else {
                v as f64 / total as f64
            };
            let color = heat_color(t);
            let x0 = j as u32 * (CELL + 1) + 1;
            let y0 = i as u32 * (CELL + 1) + 1;
            for dy in 0..CELL {
                for dx in 0..CELL {
                    img.put_pixel(x0 + dx, y0 + dy, color);
                }
            }
        }
    }
    img
}

const CHART_W: u32 = 640;
const CHART_H: u32 = 360;
const MARGIN: u32 = 12;

fn draw_line(img: &mut RgbImage, p0: (i64, i64), p1: (i64, i64), color: Rgb<u8>) {
    let (mut x0, mut y0) = p0;
    let (x1, y1) = p1;
    let dx = (x1 - x0).abs();
    let dy = -(y1 - y0).abs();
    let sx = if x0 < x1 { 1 } else { -1 };
    let sy = if y0 < y1 { 1 } else { -1 };
    let mut err = dx + dy;
    loop {
        if x0 >= 0 && y0 >= 0 && (x0 as u32) < img.width() && (y0 as u32) < img.height() {
            img.put_pixel(x0 as u32, y0 as u32, color);
        }
        if x0 == x1 && y0 == y1 {
            break;
        }
        let e2 = 2 * err;
        if e2 >= dy {
            err += dy;
            x0 += sx;
        }
        if e2 <= dx {
            err += dx;
            y0 += sy;
        }
    }
}

/// Plot one min-max-scaled series into the chart area.
fn draw_series(img: &mut RgbImage, values: &[f64], color: Rgb<u8>) {
    if values.len() < 2 {
        return;
    }
    let lo = values.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = if (hi - lo).abs() < 1e-30 { 1.0 } else { hi - lo };
    let w = (CHART_W - 2 * MARGIN) as f64;
    let h = (CHART_H - 2 * MARGIN) as f64;
    let mut prev = None;
    for (i, &v) in values.iter().enumerate() {
        let x = MARGIN as f64 + w * i as f64 / (values.len() - 1) as f64;
        let y = MARGIN as f64 + h * (1.0 - (v - lo) / span);
        let p = (x.round() as i64, y.round() as i64);
        if let Some(q) = prev {
            draw_line(img, q, p, color);
        }
        prev = Some(p);
    }
}

/// Trial-0 training curves, each series min-max scaled so shapes are
/// comparable: pretraining (gray), clustering losses (blue/orange/green),
/// classifier (red).
fn curves_chart(result: &ExperimentResult) -> Option<RgbImage> {
    let t = result.trials.first()?;
    let mut img = RgbImage::from_pixel(CHART_W, CHART_H, Rgb([255, 255, 255]));
    // Plot border.
    let border = Rgb([0, 0, 0]);
    for x in MARGIN - 1..CHART_W - MARGIN + 1 {
        img.put_pixel(x, MARGIN - 1, border);
        img.put_pixel(x, CHART_H - MARGIN, border);
    }
    for y in MARGIN - 1..CHART_H - MARGIN + 1 {
        img.put_pixel(MARGIN - 1, y, border);
        img.put_pixel(CHART_W - MARGIN, y, border);
    }
    draw_series(&mut img, &t.pretrain_curve, Rgb([120, 120, 120]));
    let rec: Vec<f64> = t.clustering_curve.iter().map(|l| l.rec).collect();
    let clu: Vec<f64> = t.clustering_curve.iter().map(|l| l.clu).collect();
    let vat: Vec<f64> = t.clustering_curve.iter().map(|l| l.vat).collect();
    draw_series(&mut img, &rec, Rgb([31, 119, 180]));
    draw_series(&mut img, &clu, Rgb([255, 127, 14]));
    draw_series(&mut img, &vat, Rgb([44, 160, 44]));
    draw_series(&mut img, &t.classifier_curve, Rgb([214, 39, 40]));
    Some(img)
}
