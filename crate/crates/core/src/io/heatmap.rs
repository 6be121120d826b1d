//! Node-score heatmaps: a per-node CSV and an optional RGB raster.

use std::path::{Path, PathBuf};

use super::{csv_records, csv_write_err, csv_writer, finish_csv, format_f64, ingest_err, parse_f64, split_header, write_atomic};
use crate::error::{Error, Result};
use crate::spatial::WsiGraph;

pub fn sigmoid(x: f64) -> f64 {
    1.0 / (1.0 + (-x).exp())
}

#[derive(Debug, Clone, PartialEq)]
pub struct HeatmapRow {
    pub patch_id: usize,
    pub x: f64,
    pub y: f64,
    pub node_score: f64,
    pub sigmoid_score: f64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeatmapFiles {
    pub csv: PathBuf,
    pub png: Option<PathBuf>,
}

/// Writes `<stem>.csv` and, when `downsample > 0`, `<stem>.png`.
pub fn export_heatmap(
    graph: &WsiGraph,
    node_scores: &[f64],
    stem: &Path,
    downsample: f64,
    patch_size_px: f64,
) -> Result<HeatmapFiles> {
    if node_scores.len() != graph.node_count() {
        return Err(Error::Shape(format!(
            "{} scores for {} nodes",
            node_scores.len(),
            graph.node_count()
        )));
    }
    let csv_path = stem.with_extension("csv");
    let mut w = csv_writer();
    w.write_record(["patch_id", "x", "y", "node_score", "sigmoid_score"])
        .map_err(|e| csv_write_err(&csv_path, e))?;
    for (n, &s) in graph.nodes().iter().zip(node_scores) {
        w.write_record([
            n.id.to_string(),
            format_f64(n.x),
            format_f64(n.y),
            format_f64(s),
            format_f64(sigmoid(s)),
        ])
        .map_err(|e| csv_write_err(&csv_path, e))?;
    }
    finish_csv(&csv_path, w)?;

    let png = if downsample > 0.0 {
        let png_path = stem.with_extension("png");
        let bytes = render_heatmap_png(graph, node_scores, downsample, patch_size_px)?;
        write_atomic(&png_path, &bytes)?;
        Some(png_path)
    } else {
        None
    };
    Ok(HeatmapFiles { csv: csv_path, png })
}

pub fn load_heatmap_csv(path: &Path) -> Result<Vec<HeatmapRow>> {
    let (header, rows) = split_header(path, csv_records(path)?)?;
    if header != ["patch_id", "x", "y", "node_score", "sigmoid_score"] {
        return Err(ingest_err(path, 1, "header must be patch_id,x,y,node_score,sigmoid_score"));
    }
    rows.into_iter()
        .map(|(line, rec)| {
            if rec.len() != 5 {
                return Err(ingest_err(path, line, format!("{} fields, expected 5", rec.len())));
            }
            Ok(HeatmapRow {
                patch_id: rec[0]
                    .trim()
                    .parse()
                    .map_err(|_| ingest_err(path, line, format!("bad patch_id {:?}", &rec[0])))?,
                x: parse_f64(path, line, "x", &rec[1])?,
                y: parse_f64(path, line, "y", &rec[2])?,
                node_score: parse_f64(path, line, "node_score", &rec[3])?,
                sigmoid_score: parse_f64(path, line, "sigmoid_score", &rec[4])?,
            })
        })
        .collect()
}

/// Diverging map over `[0, 1]`: blue at 0, white at 0.5, red at 1.
fn colormap(s: f64) -> [u8; 3] {
    let s = s.clamp(0.0, 1.0);
    let ch = |v: f64| (255.0 * v).round() as u8;
    if s <= 0.5 {
        let t = s / 0.5;
        [ch(t), ch(t), 255]
    } else {
        let t = (s - 0.5) / 0.5;
        [255, ch(1.0 - t), ch(1.0 - t)]
    }
}

/// 8-bit RGB PNG on a white canvas. Each patch is a filled square of side
/// `ceil(patch_size_px / downsample)` whose corner sits at its downsampled
/// coordinate; later nodes paint over earlier ones.
pub fn render_heatmap_png(graph: &WsiGraph, node_scores: &[f64], downsample: f64, patch_size_px: f64) -> Result<Vec<u8>> {
    if !(downsample > 0.0 && downsample.is_finite() && patch_size_px > 0.0) {
        return Err(Error::Input(format!(
            "downsample ({downsample}) and patch size ({patch_size_px}) must be positive"
        )));
    }
    let extent = (patch_size_px / downsample).ceil() as usize;
    let max_x = graph.nodes().iter().map(|n| n.x).fold(0.0, f64::max);
    let max_y = graph.nodes().iter().map(|n| n.y).fold(0.0, f64::max);
    let width = (max_x / downsample).ceil() as usize + extent;
    let height = (max_y / downsample).ceil() as usize + extent;
    if width.saturating_mul(height) > 1 << 28 {
        return Err(Error::Input(format!("{width}x{height} raster is too large; raise the downsample")));
    }
    let mut pixels = vec![255u8; width * height * 3];
    for (n, &s) in graph.nodes().iter().zip(node_scores) {
        let rgb = colormap(sigmoid(s));
        let x0 = (n.x / downsample).floor() as usize;
        let y0 = (n.y / downsample).floor() as usize;
        for y in y0..(y0 + extent).min(height) {
            for x in x0..(x0 + extent).min(width) {
                let i = (y * width + x) * 3;
                pixels[i..i + 3].copy_from_slice(&rgb);
            }
        }
    }

    let mut out = Vec::new();
    let mut enc = png::Encoder::new(&mut out, width as u32, height as u32);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let encode_err = |e: png::EncodingError| Error::Numeric(format!("PNG encoding failed: {e}"));
    let mut writer = enc.write_header().map_err(encode_err)?;
    writer.write_image_data(&pixels).map_err(encode_err)?;
    writer.finish().map_err(encode_err)?;
    Ok(out)
}
