//! NAC comparison tables. Collects the final negative-auto-correlation
//! score from a set of finished runs and tabulates them per (variant, m)
//! with a winner mark on the variant with the lower median in each
//! m-group. Refuses to mix runs whose evaluation extractors differ,
//! since those scores are not comparable.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use maskaae::{MaaeError, Result};
use serde::Serialize;

use crate::runner::{read_final_record, read_manifest};

#[derive(Debug, Clone, Serialize)]
pub struct NacRow {
    pub variant: String,
    pub m: usize,
    pub repeat: usize,
    pub m_a: usize,
    pub nac: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct NacTable {
    pub rows: Vec<NacRow>,
    /// Per m: the variant with the lower median NAC, if both are present.
    pub winners: BTreeMap<usize, String>,
}

pub fn collect(run_dirs: &[PathBuf]) -> Result<NacTable> {
    let mut rows = Vec::new();
    let mut extractor_seen: Option<(String, String)> = None;
    for dir in run_dirs {
        let manifest = read_manifest(dir)?;
        let record = read_final_record(dir)?;
        let extractor = serde_json::to_string(&manifest.train.eval.extractor)
            .unwrap_or_else(|_| "?".into());
        match &extractor_seen {
            None => extractor_seen = Some((extractor, dir.display().to_string())),
            Some((seen, first_dir)) if *seen != extractor => {
                return Err(MaaeError::invalid(format!(
                    "runs use different evaluation extractors ({first_dir}: {seen}, {}: {extractor}); \
                     their NAC scores are not comparable — regenerate one side or pass a uniform set",
                    dir.display()
                )));
            }
            _ => {}
        }
        let (variant, repeat) = parse_run_name(dir);
        rows.push(NacRow {
            variant: variant.unwrap_or_else(|| {
                serde_json::to_string(&manifest.train.variant)
                    .unwrap_or_default()
                    .trim_matches('"')
                    .to_string()
            }),
            m: manifest.m,
            repeat: repeat.unwrap_or(0),
            m_a: record.m_a,
            nac: record.nac,
        });
    }
    rows.sort_by(|a, b| (&a.variant, a.m, a.repeat).cmp(&(&b.variant, b.m, b.repeat)));

    let mut groups: BTreeMap<usize, BTreeMap<String, Vec<f64>>> = BTreeMap::new();
    for r in &rows {
        groups
            .entry(r.m)
            .or_default()
            .entry(r.variant.clone())
            .or_default()
            .push(r.nac);
    }
    let mut winners = BTreeMap::new();
    for (m, per_variant) in &groups {
        if per_variant.len() < 2 {
            continue;
        }
        let mut best: Option<(&str, f64)> = None;
        for (variant, vals) in per_variant {
            let med = crate::sweep::median(&mut vals.clone());
            if med.is_finite() && best.map_or(true, |(_, b)| med < b) {
                best = Some((variant, med));
            }
        }
        if let Some((variant, _)) = best {
            winners.insert(*m, variant.to_string());
        }
    }
    Ok(NacTable { rows, winners })
}

/// Sweep cells are named `{variant}_m{m:02}_r{repeat}`; fall back to the
/// manifest when a directory was named by hand.
fn parse_run_name(dir: &Path) -> (Option<String>, Option<usize>) {
    let name = match dir.file_name().and_then(|n| n.to_str()) {
        Some(n) => n,
        None => return (None, None),
    };
    let mut variant = None;
    for v in ["maskaae", "wae_baseline"] {
        if name.starts_with(&format!("{v}_m")) {
            variant = Some(v.to_string());
        }
    }
    let repeat = name
        .rsplit_once("_r")
        .and_then(|(_, r)| r.parse().ok());
    (variant, repeat)
}

pub fn render_csv(table: &NacTable) -> String {
    let mut out = String::from("variant,m,repeat,m_A,nac,winner\n");
    for r in &table.rows {
        let mark = if table.winners.get(&r.m).map(|w| w == &r.variant).unwrap_or(false) {
            "*"
        } else {
            ""
        };
        out.push_str(&format!(
            "{},{},{},{},{},{}\n",
            r.variant, r.m, r.repeat, r.m_a, r.nac, mark
        ));
    }
    out
}
