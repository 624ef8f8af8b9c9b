//! Accuracy metrics comparing reference (`x`, solver) and predicted (`y`)
//! values: Pearson, Spearman, RMSE and the histogram coefficient of
//! determination, plus the scatter export.

use std::path::Path;

use crate::error::{Error, Result};

pub const DEFAULT_BINS: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsReport {
    pub pearson: f64,
    pub spearman: f64,
    pub rmse: f64,
    /// Percentage, clamped at 0.
    pub hist_r2: f64,
    pub n: usize,
}

fn check_pair(x: &[f64], y: &[f64], min_len: usize) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            op: "metric",
            left: vec![x.len()],
            right: vec![y.len()],
        });
    }
    if x.len() < min_len {
        return Err(Error::UndefinedMetric(format!("need at least {min_len} samples, got {}", x.len())));
    }
    Ok(())
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

pub fn pearson(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (mx, my) = (mean(x), mean(y));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (&a, &b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::UndefinedMetric("correlation of a constant series".into()));
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..v.len()).collect();
    order.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i + 1;
        while j < order.len() && v[order[j]] == v[order[i]] {
            j += 1;
        }
        // positions i..j (0-based) share rank mean(i+1..=j)
        let rank = (i + 1 + j) as f64 / 2.0;
        for &k in &order[i..j] {
            ranks[k] = rank;
        }
        i = j;
    }
    ranks
}

pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 2)?;
    pearson(&average_ranks(x), &average_ranks(y))
}

pub fn rmse(x: &[f64], y: &[f64]) -> Result<f64> {
    check_pair(x, y, 1)?;
    let sq: f64 = x.iter().zip(y).map(|(a, b)| (a - b) * (a - b)).sum();
    Ok((sq / x.len() as f64).sqrt())
}

/// Count histograms of `x` and `y` over shared bins spanning both.
pub fn shared_histograms(x: &[f64], y: &[f64], bins: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if bins < 2 {
        return Err(Error::InvalidArgument(format!("need at least 2 bins, got {bins}")));
    }
    let (lo, hi) = x
        .iter()
        .chain(y)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(hi > lo) {
        return Err(Error::UndefinedMetric("histogram range is empty".into()));
    }
    let width = (hi - lo) / bins as f64;
    let count = |v: &[f64]| {
        let mut h = vec![0.0; bins];
        for &a in v {
            let b = (((a - lo) / width) as usize).min(bins - 1);
            h[b] += 1.0;
        }
        h
    };
    Ok((count(x), count(y)))
}

/// R² of histogram `hy` against reference `hx`, as a percentage (unclamped).
pub fn r2_of_histograms(hx: &[f64], hy: &[f64]) -> Result<f64> {
    let m = mean(hx);
    let ss_tot: f64 = hx.iter().map(|h| (h - m) * (h - m)).sum();
    if ss_tot == 0.0 {
        return Err(Error::UndefinedMetric("reference histogram has zero variance".into()));
    }
    let ss_res: f64 = hx.iter().zip(hy).map(|(a, b)| (b - a) * (b - a)).sum();
    Ok(100.0 * (1.0 - ss_res / ss_tot))
}

/// Raw histogram R² percentage; may be negative.
pub fn hist_r2_raw(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    check_pair(x, y, 2)?;
    let (hx, hy) = shared_histograms(x, y, bins)?;
    r2_of_histograms(&hx, &hy)
}

/// Histogram R² percentage as reported: negative values clamp to 0.
pub fn hist_r2(x: &[f64], y: &[f64], bins: usize) -> Result<f64> {
    let raw = hist_r2_raw(x, y, bins)?;
    if raw < 0.0 {
        log::info!("histogram R² {raw:.3}% clamped to 0");
        return Ok(0.0);
    }
    Ok(raw)
}

pub fn report(x: &[f64], y: &[f64], bins: usize) -> Result<MetricsReport> {
    Ok(MetricsReport {
        pearson: pearson(x, y)?,
        spearman: spearman(x, y)?,
        rmse: rmse(x, y)?,
        hist_r2: hist_r2(x, y, bins)?,
        n: x.len(),
    })
}

/// Writes a `cfd,ai` CSV with one row per sample.
pub fn scatter_export(x: &[f32], y: &[f32], path: impl AsRef<Path>) -> Result<()> {
    if x.len() != y.len() {
        return Err(Error::Dimension {
            op: "scatter_export",
            left: vec![x.len()],
            right: vec![y.len()],
        });
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(["cfd", "ai"])?;
    for (a, b) in x.iter().zip(y) {
        // f32 Display prints the shortest text that parses back to the same value
        w.write_record([a.to_string(), b.to_string()])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_scatter(path: impl AsRef<Path>) -> Result<(Vec<f32>, Vec<f32>)> {
    let mut r = csv::Reader::from_path(path)?;
    let (mut x, mut y) = (Vec::new(), Vec::new());
    for rec in r.records() {
        let rec = rec?;
        let parse = |i: usize| {
            rec.get(i)
                .and_then(|s| s.parse::<f32>().ok())
                .ok_or_else(|| Error::InvalidArgument(format!("bad scatter row {rec:?}")))
        };
        x.push(parse(0)?);
        y.push(parse(1)?);
    }
    Ok((x, y))
}
