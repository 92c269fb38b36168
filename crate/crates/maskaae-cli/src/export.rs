//! Post-hoc exports: a U-curve table (median final Fréchet distance per
//! latent width) derived from a sweep summary, and per-run mask-gate
//! trajectories. Both write plain CSV; SVG output is a convenience
//! rendering and never affects exit status.

use std::collections::BTreeMap;
use std::path::Path;

use maskaae::{MaaeError, Result};

use crate::sweep::{median, read_summary, variant_name, SweepRow};

#[derive(Debug, Clone, PartialEq)]
pub struct UcurvePoint {
    pub variant: String,
    pub m: usize,
    pub median_frechet: f64,
    pub runs: usize,
    pub failed: usize,
}

/// Collapse a sweep summary to one row per (variant, m), ordered by
/// variant then m. Failed cells count toward `failed` and are excluded
/// from the median.
pub fn ucurve_points(rows: &[SweepRow]) -> Vec<UcurvePoint> {
    let mut groups: BTreeMap<(String, usize), Vec<&SweepRow>> = BTreeMap::new();
    for r in rows {
        groups
            .entry((variant_name(r.variant).to_string(), r.m))
            .or_default()
            .push(r);
    }
    groups
        .into_iter()
        .map(|((variant, m), members)| {
            let mut vals: Vec<f64> = members.iter().map(|r| r.final_frechet).collect();
            let failed = members.iter().filter(|r| !r.ok).count();
            UcurvePoint {
                variant,
                m,
                median_frechet: median(&mut vals),
                runs: members.len(),
                failed,
            }
        })
        .collect()
}

pub fn export_ucurve(summary_path: &Path, out_csv: &Path, svg: Option<&Path>) -> Result<Vec<UcurvePoint>> {
    let rows = read_summary(summary_path)?;
    if rows.is_empty() {
        return Err(MaaeError::invalid(format!(
            "{}: no data rows to export",
            summary_path.display()
        )));
    }
    let points = ucurve_points(&rows);
    let mut out = String::from("variant,m,median_frechet,runs,failed\n");
    for p in &points {
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            p.variant, p.m, p.median_frechet, p.runs, p.failed
        ));
    }
    std::fs::write(out_csv, out)?;
    if let Some(svg_path) = svg {
        if let Err(e) = write_ucurve_svg(svg_path, &points) {
            log::warn!("svg export skipped: {e}");
        }
    }
    Ok(points)
}

/// Minimal line plot: log2(m) on x, median Fréchet on y, one polyline
/// per variant. Good enough to eyeball the U shape.
fn write_ucurve_svg(path: &Path, points: &[UcurvePoint]) -> Result<()> {
    let finite: Vec<&UcurvePoint> = points.iter().filter(|p| p.median_frechet.is_finite()).collect();
    if finite.len() < 2 {
        return Err(MaaeError::invalid("need at least two finite points for an svg"));
    }
    let (w, h, pad) = (640.0, 400.0, 48.0);
    let xs: Vec<f64> = finite.iter().map(|p| (p.m as f64).log2()).collect();
    let ys: Vec<f64> = finite.iter().map(|p| p.median_frechet).collect();
    let (x0, x1) = (
        xs.iter().cloned().fold(f64::INFINITY, f64::min),
        xs.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let (y0, y1) = (
        ys.iter().cloned().fold(f64::INFINITY, f64::min),
        ys.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
    );
    let sx = |x: f64| pad + (x - x0) / (x1 - x0).max(1e-12) * (w - 2.0 * pad);
    let sy = |y: f64| h - pad - (y - y0) / (y1 - y0).max(1e-12) * (h - 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    let colors = ["#1f77b4", "#d62728", "#2ca02c"];
    let mut variants: Vec<&str> = finite.iter().map(|p| p.variant.as_str()).collect();
    variants.dedup();
    for (vi, variant) in variants.iter().enumerate() {
        let pts: Vec<String> = finite
            .iter()
            .filter(|p| p.variant == *variant)
            .map(|p| format!("{:.1},{:.1}", sx((p.m as f64).log2()), sy(p.median_frechet)))
            .collect();
        if pts.len() < 2 {
            continue;
        }
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"{}\" stroke-width=\"2\" points=\"{}\"/>\n",
            colors[vi % colors.len()],
            pts.join(" ")
        ));
        svg.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{}</text>\n",
            pad,
            pad - 8.0 + 14.0 * vi as f64,
            colors[vi % colors.len()],
            variant
        ));
    }
    for p in &finite {
        svg.push_str(&format!(
            "<circle cx=\"{:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"#333\"/>\n\
             <text x=\"{:.1}\" y=\"{}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            sx((p.m as f64).log2()),
            sy(p.median_frechet),
            sx((p.m as f64).log2()),
            h - pad / 2.0,
            p.m
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}

/// Copy a run's mask trajectory out of its run directory, byte for byte.
pub fn export_mask_trace(run_dir: &Path, out_csv: &Path, svg: Option<&Path>) -> Result<()> {
    let src = run_dir.join("mask_trace.csv");
    if !src.is_file() {
        return Err(MaaeError::invalid(format!(
            "{}: no mask_trace.csv (is this a run directory?)",
            run_dir.display()
        )));
    }
    std::fs::copy(&src, out_csv)?;
    if let Some(svg_path) = svg {
        if let Err(e) = write_trace_svg(&src, svg_path) {
            log::warn!("svg export skipped: {e}");
        }
    }
    Ok(())
}

fn write_trace_svg(trace_csv: &Path, path: &Path) -> Result<()> {
    let text = std::fs::read_to_string(trace_csv)?;
    let mut steps: Vec<f64> = Vec::new();
    let mut series: Vec<Vec<f64>> = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let vals: Vec<f64> = line
            .split(',')
            .map(|s| s.parse().map_err(|_| MaaeError::Format(format!("bad value '{s}'"))))
            .collect::<Result<_>>()?;
        if vals.len() < 2 {
            return Err(MaaeError::Format("trace row needs step plus gates".into()));
        }
        steps.push(vals[0]);
        if series.is_empty() {
            series = vec![Vec::new(); vals.len() - 1];
        }
        for (j, v) in vals[1..].iter().enumerate() {
            series[j].push(*v);
        }
    }
    if steps.len() < 2 {
        return Err(MaaeError::invalid("need at least two trace rows for an svg"));
    }
    let (w, h, pad) = (640.0, 320.0, 40.0);
    let x1 = *steps.last().unwrap();
    let sx = |s: f64| pad + s / x1.max(1.0) * (w - 2.0 * pad);
    let sy = |mu: f64| h - pad - mu.clamp(0.0, 1.0) * (h - 2.0 * pad);
    let mut svg = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n\
         <rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n"
    );
    for gates in &series {
        let pts: Vec<String> = steps
            .iter()
            .zip(gates)
            .map(|(s, mu)| format!("{:.1},{:.1}", sx(*s), sy(*mu)))
            .collect();
        svg.push_str(&format!(
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-opacity=\"0.7\" stroke-width=\"1.5\" points=\"{}\"/>\n",
            pts.join(" ")
        ));
    }
    svg.push_str("</svg>\n");
    std::fs::write(path, svg)?;
    Ok(())
}
