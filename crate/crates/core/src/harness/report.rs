//! Collects `report.json` files into one method x label-budget table.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};

use super::experiment::{Method, Report};

/// Every `report.json` under `dir`, in path order.
pub fn find_reports(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d)? {
            let path = entry?.path();
            if path.is_dir() {
                stack.push(path);
            } else if path.file_name().is_some_and(|n| n == "report.json") {
                found.push(path);
            }
        }
    }
    found.sort();
    Ok(found)
}

pub fn load_reports(dir: &Path) -> Result<Vec<Report>> {
    find_reports(dir)?
        .into_iter()
        .map(|p| Ok(serde_json::from_str(&fs::read_to_string(&p)?)?))
        .collect()
}

/// Rows are methods (in [`Method`] order, then by name), columns are label
/// budgets ascending, cells are `mean±std`. Missing cells are left empty.
pub fn table_csv(reports: &[Report]) -> Result<String> {
    let mut budgets = BTreeSet::new();
    let mut cells: BTreeMap<(Method, String), BTreeMap<usize, String>> = BTreeMap::new();
    for r in reports {
        budgets.insert(r.labels_per_class);
        let row = cells.entry((r.method, r.method_name.clone())).or_default();
        if row.insert(r.labels_per_class, r.cell()).is_some() {
            return Err(Error::Data(format!(
                "two reports for {} at {} labels per class",
                r.method_name, r.labels_per_class
            )));
        }
    }
    let mut out = String::from("method");
    for b in &budgets {
        out.push_str(&format!(",{b}"));
    }
    out.push('\n');
    for ((_, name), row) in &cells {
        out.push_str(name);
        for b in &budgets {
            out.push(',');
            if let Some(c) = row.get(b) {
                out.push_str(c);
            }
        }
        out.push('\n');
    }
    Ok(out)
}
