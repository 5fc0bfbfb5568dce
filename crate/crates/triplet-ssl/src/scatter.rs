//! 2-D embedding scatter files (CSV plus dependency-free SVG) and the
//! silhouette statistic used to quantify cluster separation.

use std::io::Write;
use std::path::Path;

use ndarray::Array2;

use crate::data::Dataset;
use crate::embedknn::embed_dataset;
use crate::net::{EmbeddingModel, Scalar};
use crate::{Error, Result};

const PALETTE: [&str; 10] = [
    "#1f77b4", "#ff7f0e", "#2ca02c", "#d62728", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f",
    "#bcbd22", "#17becf",
];

/// Embed every example with a 2-D model and write `x,y,label` CSV plus an
/// SVG scatter colored by true class (label -1 when unlabeled). An empty
/// dataset produces a header-only CSV.
pub fn emit_scatter<F: Scalar>(
    model: &EmbeddingModel<F>,
    dataset: &Dataset,
    csv_path: &Path,
    svg_path: &Path,
) -> Result<()> {
    if model.embedding_dim() != 2 {
        return Err(Error::Argument(format!(
            "scatter needs a 2-dimensional embedding model, got {}",
            model.embedding_dim()
        )));
    }
    let indices: Vec<usize> = (0..dataset.len()).collect();
    let points: Vec<(f64, f64)> = if indices.is_empty() {
        Vec::new()
    } else {
        let embedded = embed_dataset(model, dataset, &indices)?;
        embedded
            .rows
            .rows()
            .into_iter()
            .map(|r| (r[0].to_f64(), r[1].to_f64()))
            .collect()
    };
    let labels: Vec<i64> = match dataset.labels() {
        Some(y) => y.iter().map(|&l| l as i64).collect(),
        None => vec![-1; dataset.len()],
    };

    let mut csv = std::fs::File::create(csv_path)?;
    writeln!(csv, "x,y,label")?;
    for ((x, y), label) in points.iter().zip(labels.iter()) {
        writeln!(csv, "{x:.6},{y:.6},{label}")?;
    }

    std::fs::write(svg_path, render_svg(&points, &labels))?;
    Ok(())
}

fn render_svg(points: &[(f64, f64)], labels: &[i64]) -> String {
    let size = 640.0;
    let margin = 40.0;
    let (mut min_x, mut max_x) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut min_y, mut max_y) = (f64::INFINITY, f64::NEG_INFINITY);
    for &(x, y) in points {
        min_x = min_x.min(x);
        max_x = max_x.max(x);
        min_y = min_y.min(y);
        max_y = max_y.max(y);
    }
    if points.is_empty() {
        min_x = 0.0;
        max_x = 1.0;
        min_y = 0.0;
        max_y = 1.0;
    }
    let span_x = (max_x - min_x).max(1e-9);
    let span_y = (max_y - min_y).max(1e-9);

    let mut svg = String::new();
    svg.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{size}\" height=\"{size}\" \
         viewBox=\"0 0 {size} {size}\">\n"
    ));
    svg.push_str(&format!(
        "  <rect width=\"{size}\" height=\"{size}\" fill=\"white\"/>\n"
    ));
    for (&(x, y), &label) in points.iter().zip(labels.iter()) {
        let px = margin + (x - min_x) / span_x * (size - 2.0 * margin);
        // SVG y grows downward; flip so larger embedding y plots higher.
        let py = size - margin - (y - min_y) / span_y * (size - 2.0 * margin);
        let color = if label < 0 {
            "#000000"
        } else {
            PALETTE[(label as usize) % PALETTE.len()]
        };
        svg.push_str(&format!(
            "  <circle cx=\"{px:.2}\" cy=\"{py:.2}\" r=\"3\" fill=\"{color}\" fill-opacity=\"0.75\"/>\n"
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Mean silhouette over all points: s(i) = (b - a) / max(a, b) with a the
/// mean intra-cluster distance and b the smallest mean distance to another
/// cluster. Points in singleton clusters score 0.
pub fn silhouette(points: &Array2<f64>, labels: &[usize]) -> Result<f64> {
    let n = points.nrows();
    if n != labels.len() {
        return Err(Error::Argument("points/labels length mismatch".into()));
    }
    if n == 0 {
        return Err(Error::Argument("empty point set".into()));
    }
    let classes: std::collections::BTreeSet<usize> = labels.iter().copied().collect();
    if classes.len() < 2 {
        return Err(Error::Argument(
            "silhouette needs at least two clusters".into(),
        ));
    }
    let class_list: Vec<usize> = classes.into_iter().collect();
    let class_pos: std::collections::BTreeMap<usize, usize> = class_list
        .iter()
        .enumerate()
        .map(|(pos, &c)| (c, pos))
        .collect();
    let counts: Vec<usize> = {
        let mut counts = vec![0usize; class_list.len()];
        for &l in labels {
            counts[class_pos[&l]] += 1;
        }
        counts
    };

    let mut total = 0.0;
    for i in 0..n {
        let own = class_pos[&labels[i]];
        if counts[own] <= 1 {
            continue; // s(i) = 0 for singleton clusters
        }
        let mut sums = vec![0.0f64; class_list.len()];
        let pi = points.row(i);
        for j in 0..n {
            if i == j {
                continue;
            }
            let d: f64 = pi
                .iter()
                .zip(points.row(j).iter())
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            sums[class_pos[&labels[j]]] += d;
        }
        let a = sums[own] / (counts[own] - 1) as f64;
        let b = sums
            .iter()
            .enumerate()
            .filter(|&(k, _)| k != own && counts[k] > 0)
            .map(|(k, &s)| s / counts[k] as f64)
            .fold(f64::INFINITY, f64::min);
        let s = if a.max(b) > 0.0 { (b - a) / a.max(b) } else { 0.0 };
        total += s;
    }
    Ok(total / n as f64)
}
