//! Aggregation of metrics files into a comparison table.
//!
//! A file's method is the nearest enclosing directory that is neither a
//! `seed_<n>` directory nor a setting; its setting is the nearest enclosing
//! directory named `iid` or `ood`, `-` when there is none.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use cohf::experiment::drop_percent;
use cohf::metalearn::Metrics;

use crate::CliError;

#[derive(Clone, Debug, PartialEq)]
pub struct Row {
    pub method: String,
    pub setting: String,
    pub runs: usize,
    pub accuracy: f64,
    /// Population standard deviation; `None` for a single run.
    pub accuracy_std: Option<f64>,
    pub macro_f1: f64,
    pub macro_f1_std: Option<f64>,
    /// Relative I.I.D. to OOD accuracy drop in percent, on OOD rows whose
    /// method also has an I.I.D. row.
    pub drop: Option<f64>,
}

/// Mean and population standard deviation.
pub fn mean_std(xs: &[f64]) -> (f64, Option<f64>) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, (xs.len() > 1).then(|| var.sqrt()))
}

fn is_setting(name: &str) -> bool {
    matches!(name, "iid" | "ood")
}

fn is_seed_dir(name: &str) -> bool {
    name.strip_prefix("seed_").is_some_and(|s| s.parse::<u64>().is_ok())
}

/// `(method, setting)` of a metrics file.
pub fn labels(path: &Path) -> (String, String) {
    let dirs: Vec<String> = path
        .canonicalize()
        .unwrap_or_else(|_| path.to_path_buf())
        .parent()
        .map(|p| p.iter().rev().map(|c| c.to_string_lossy().into_owned()).collect())
        .unwrap_or_default();
    let method = dirs
        .iter()
        .find(|d| !is_seed_dir(d) && !is_setting(d))
        .cloned()
        .unwrap_or_else(|| "-".into());
    let setting = dirs
        .iter()
        .find(|d| is_setting(d))
        .cloned()
        .unwrap_or_else(|| "-".into());
    (method, setting)
}

pub fn summarize(files: &[PathBuf]) -> Result<Vec<Row>, CliError> {
    if files.is_empty() {
        return Err(CliError::Config("report needs at least one metrics file".into()));
    }
    let mut groups: BTreeMap<(String, String), Vec<Metrics>> = BTreeMap::new();
    for f in files {
        let m = Metrics::load(f).map_err(|e| CliError::Data(format!("{}: {e}", f.display())))?;
        groups.entry(labels(f)).or_default().push(m);
    }
    let mut rows: Vec<Row> = groups
        .into_iter()
        .map(|((method, setting), ms)| {
            let acc: Vec<f64> = ms.iter().map(|m| m.accuracy).collect();
            let f1: Vec<f64> = ms.iter().map(|m| m.macro_f1).collect();
            let (accuracy, accuracy_std) = mean_std(&acc);
            let (macro_f1, macro_f1_std) = mean_std(&f1);
            Row {
                method,
                setting,
                runs: ms.len(),
                accuracy,
                accuracy_std,
                macro_f1,
                macro_f1_std,
                drop: None,
            }
        })
        .collect();
    let iid: BTreeMap<String, f64> = rows
        .iter()
        .filter(|r| r.setting == "iid")
        .map(|r| (r.method.clone(), r.accuracy))
        .collect();
    for r in rows.iter_mut().filter(|r| r.setting == "ood") {
        r.drop = iid.get(&r.method).map(|&i| drop_percent(i, r.accuracy));
    }
    Ok(rows)
}

fn cell(mean: f64, std: Option<f64>) -> String {
    match std {
        Some(s) => format!("{mean:.4} ± {s:.4}"),
        None => format!("{mean:.4}"),
    }
}

pub fn render(rows: &[Row]) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<16} {:<8} {:>4}  {:<17}  {:<17}  {:>8}",
        "method", "setting", "runs", "accuracy", "macro-F1", "drop"
    );
    for r in rows {
        let drop = r.drop.map_or_else(|| "-".into(), |d| format!("{d:.2}%"));
        let _ = writeln!(
            out,
            "{:<16} {:<8} {:>4}  {:<17}  {:<17}  {:>8}",
            r.method,
            r.setting,
            r.runs,
            cell(r.accuracy, r.accuracy_std),
            cell(r.macro_f1, r.macro_f1_std),
            drop
        );
    }
    out
}
