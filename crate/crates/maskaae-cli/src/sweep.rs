//! Capacity sweeps: a grid of (variant, m, repeat) runs over one
//! dataset, summarized into `sweep_summary.csv`. Cells are independent;
//! a failing cell is recorded and skipped past rather than aborting the
//! sweep, and re-invoking the same sweep resumes where it left off.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use maskaae::net::Variant;
use maskaae::synthetic::Dataset;
use maskaae::{MaaeError, Result};
use serde::{Deserialize, Serialize};

use crate::config::ResolvedConfig;
use crate::runner::{execute, RunPlan};

#[derive(Debug, Clone)]
pub struct SweepSpec {
    pub variants: Vec<Variant>,
    pub m_values: Vec<usize>,
    pub repeats: usize,
    pub base: ResolvedConfig,
    pub base_seed: u64,
    pub data_path: PathBuf,
    pub out_dir: PathBuf,
    pub jobs: usize,
}

impl SweepSpec {
    pub fn validate(&self) -> Result<()> {
        if self.variants.is_empty() {
            return Err(MaaeError::invalid("sweep needs at least one variant"));
        }
        if self.m_values.is_empty() || self.m_values.iter().any(|&m| m < 1) {
            return Err(MaaeError::invalid("m_values must be nonempty, each ≥ 1"));
        }
        if self.repeats < 1 {
            return Err(MaaeError::invalid("repeats must be ≥ 1"));
        }
        if self.jobs < 1 {
            return Err(MaaeError::invalid("jobs must be ≥ 1"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepRow {
    pub variant: Variant,
    pub m: usize,
    pub repeat: usize,
    pub final_frechet: f64,
    pub final_nac: f64,
    pub m_a: usize,
    pub wall_seconds: f64,
    pub ok: bool,
}

pub fn variant_name(v: Variant) -> &'static str {
    match v {
        Variant::Maskaae => "maskaae",
        Variant::WaeBaseline => "wae_baseline",
    }
}

pub fn cell_run_name(variant: Variant, m: usize, repeat: usize) -> String {
    format!("{}_m{m:02}_r{repeat}", variant_name(variant))
}

/// One seed per cell, disjoint across the grid: repeats, m (< 1000) and
/// the variant each get their own decimal range above the base.
pub fn cell_seed(base_seed: u64, variant: Variant, m: usize, repeat: usize) -> u64 {
    let v = match variant {
        Variant::WaeBaseline => 0u64,
        Variant::Maskaae => 1u64,
    };
    base_seed
        .wrapping_mul(10_000_000)
        .wrapping_add(v * 1_000_000)
        .wrapping_add((m as u64) * 1000)
        .wrapping_add(repeat as u64)
}

struct Cell {
    variant: Variant,
    m: usize,
    repeat: usize,
}

/// Run (or reuse) every cell, then rewrite the summary CSV. Returns the
/// rows plus whether any cell failed.
pub fn run_sweep(spec: &SweepSpec, dataset: &Dataset) -> Result<(Vec<SweepRow>, bool)> {
    spec.validate()?;
    std::fs::create_dir_all(&spec.out_dir)?;
    let mut cells = Vec::new();
    for &variant in &spec.variants {
        for &m in &spec.m_values {
            for repeat in 0..spec.repeats {
                cells.push(Cell { variant, m, repeat });
            }
        }
    }

    let next = AtomicUsize::new(0);
    let rows: Mutex<Vec<SweepRow>> = Mutex::new(Vec::with_capacity(cells.len()));
    let worker = |_tid: usize| loop {
        let i = next.fetch_add(1, Ordering::SeqCst);
        if i >= cells.len() {
            break;
        }
        let cell = &cells[i];
        let run_dir = spec.out_dir.join(cell_run_name(cell.variant, cell.m, cell.repeat));
        let seed = cell_seed(spec.base_seed, cell.variant, cell.m, cell.repeat);
        let plan = RunPlan::from_resolved(
            &spec.base,
            cell.m,
            cell.variant,
            seed,
            run_dir.clone(),
            spec.data_path.clone(),
        );
        let row = match execute(&plan, dataset, true) {
            Ok(summary) => {
                log::info!(
                    "{}: frechet {:.3} nac {:.4} m_A {} ({:.0}s{})",
                    run_dir.display(),
                    summary.final_record.frechet,
                    summary.final_record.nac,
                    summary.final_record.m_a,
                    summary.wall_seconds,
                    if summary.reused { ", reused" } else { "" }
                );
                SweepRow {
                    variant: cell.variant,
                    m: cell.m,
                    repeat: cell.repeat,
                    final_frechet: summary.final_record.frechet,
                    final_nac: summary.final_record.nac,
                    m_a: summary.final_record.m_a,
                    wall_seconds: summary.wall_seconds,
                    ok: true,
                }
            }
            Err(e) => {
                log::error!("{}: failed: {e}", run_dir.display());
                SweepRow {
                    variant: cell.variant,
                    m: cell.m,
                    repeat: cell.repeat,
                    final_frechet: f64::NAN,
                    final_nac: f64::NAN,
                    m_a: 0,
                    wall_seconds: 0.0,
                    ok: false,
                }
            }
        };
        rows.lock().unwrap().push(row);
    };

    if spec.jobs <= 1 {
        worker(0);
    } else {
        std::thread::scope(|s| {
            for t in 0..spec.jobs {
                s.spawn(move || worker(t));
            }
        });
    }

    let mut rows = rows.into_inner().unwrap();
    rows.sort_by_key(|r| (variant_name(r.variant), r.m, r.repeat));
    let any_failed = rows.iter().any(|r| !r.ok);
    write_summary(&spec.out_dir.join("sweep_summary.csv"), &rows)?;
    Ok((rows, any_failed))
}

pub fn write_summary(path: &Path, rows: &[SweepRow]) -> Result<()> {
    let mut out = String::from("variant,m,repeat,final_frechet,final_nac,m_A,wall_seconds\n");
    for r in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{:.3}\n",
            variant_name(r.variant),
            r.m,
            r.repeat,
            r.final_frechet,
            r.final_nac,
            r.m_a,
            r.wall_seconds
        ));
    }
    std::fs::write(path, out)?;
    Ok(())
}

pub fn read_summary(path: &Path) -> Result<Vec<SweepRow>> {
    let text = std::fs::read_to_string(path)?;
    let mut rows = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if i == 0 || line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 7 {
            return Err(MaaeError::Format(format!(
                "{}: line {} has {} fields, want 7",
                path.display(),
                i + 1,
                fields.len()
            )));
        }
        let variant = match fields[0] {
            "maskaae" => Variant::Maskaae,
            "wae_baseline" => Variant::WaeBaseline,
            other => {
                return Err(MaaeError::Format(format!("unknown variant '{other}'")))
            }
        };
        let parse_f = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|_| MaaeError::Format(format!("bad float '{s}'")))
        };
        let frechet = parse_f(fields[3])?;
        let nac = parse_f(fields[4])?;
        rows.push(SweepRow {
            variant,
            m: fields[1].parse().map_err(|_| MaaeError::Format("bad m".into()))?,
            repeat: fields[2].parse().map_err(|_| MaaeError::Format("bad repeat".into()))?,
            final_frechet: frechet,
            final_nac: nac,
            m_a: fields[5].parse().map_err(|_| MaaeError::Format("bad m_A".into()))?,
            wall_seconds: parse_f(fields[6])?,
            ok: frechet.is_finite(),
        });
    }
    Ok(rows)
}

/// Median over the finite entries; NaN when none.
pub fn median(values: &mut Vec<f64>) -> f64 {
    values.retain(|v| v.is_finite());
    if values.is_empty() {
        return f64::NAN;
    }
    values.sort_by(|a, b| a.total_cmp(b));
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn seeds_are_distinct_across_the_grid() {
        let mut seen = std::collections::HashSet::new();
        for v in [Variant::WaeBaseline, Variant::Maskaae] {
            for m in [2usize, 4, 8, 16, 32, 78] {
                for r in 0..5 {
                    assert!(seen.insert(cell_seed(9, v, m, r)));
                }
            }
        }
    }

    #[test]
    fn summary_round_trips() {
        let dir = tempfile::tempdir().unwrap();
        let rows = vec![
            SweepRow {
                variant: Variant::WaeBaseline,
                m: 8,
                repeat: 0,
                final_frechet: 26.52339,
                final_nac: 0.0388,
                m_a: 8,
                wall_seconds: 29.1,
                ok: true,
            },
            SweepRow {
                variant: Variant::Maskaae,
                m: 16,
                repeat: 2,
                final_frechet: f64::NAN,
                final_nac: f64::NAN,
                m_a: 0,
                wall_seconds: 0.0,
                ok: false,
            },
        ];
        let path = dir.path().join("s.csv");
        write_summary(&path, &rows).unwrap();
        let back = read_summary(&path).unwrap();
        assert_eq!(back.len(), 2);
        assert_eq!(back[0].final_frechet, 26.52339);
        assert!(!back[1].ok);
    }

    #[test]
    fn median_ignores_nan_and_averages_even_counts() {
        assert_eq!(median(&mut vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&mut vec![4.0, f64::NAN, 1.0]), 2.5);
        assert!(median(&mut vec![f64::NAN]).is_nan());
    }
}
