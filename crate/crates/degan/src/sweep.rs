//! λ_e × λ_d grids. Each cell is an ordinary manifest run in its own
//! directory by a separate `degan run` process.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Mutex;

use crate::error::{format_error, Error, IoContext, Result};
use crate::manifest::Manifest;
use crate::metrics::format_float;
use crate::runner::SUMMARY_FILE;

pub const SWEEP_FILE: &str = "sweep.csv";

#[derive(Debug, Clone)]
pub struct SweepCell {
    pub lambda_e: f64,
    pub lambda_d: f64,
    pub name: String,
    pub manifest: Manifest,
}

pub fn parse_list(text: &str) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|s| s.trim().parse::<f64>().map_err(|_| Error::Config(format!("invalid number '{s}' in '{text}'"))))
        .collect::<Result<_>>()?;
    if values.is_empty() || values.iter().any(|v| !(*v >= 0.0 && v.is_finite())) {
        return Err(Error::Config(format!("'{text}' must list non-negative numbers")));
    }
    Ok(values)
}

pub fn cells(base: &Manifest, lambda_e: &[f64], lambda_d: &[f64]) -> Result<Vec<SweepCell>> {
    let mut out = Vec::new();
    for &le in lambda_e {
        for &ld in lambda_d {
            let mut manifest = base.clone();
            manifest.config.insert("lambda_e".into(), toml::Value::Float(le));
            manifest.config.insert("lambda_d".into(), toml::Value::Float(ld));
            manifest.output_dir = None;
            manifest.check()?;
            out.push(SweepCell { lambda_e: le, lambda_d: ld, name: format!("le-{le}_ld-{ld}"), manifest });
        }
    }
    Ok(out)
}

/// Runs every cell with up to `jobs` concurrent `exe run` processes.
pub fn run_sweep(exe: &Path, cells: &[SweepCell], out: &Path, jobs: usize, resume: bool) -> Result<PathBuf> {
    let manifests = out.join("manifests");
    fs::create_dir_all(&manifests).at(&manifests)?;
    let mut queue = Vec::new();
    for cell in cells {
        let path = manifests.join(format!("{}.toml", cell.name));
        fs::write(&path, cell.manifest.to_toml()?).at(&path)?;
        queue.push((cell.name.clone(), path));
    }
    queue.reverse();
    let queue = Mutex::new(queue);
    let failures = Mutex::new(Vec::new());
    std::thread::scope(|s| {
        for _ in 0..jobs.max(1).min(cells.len().max(1)) {
            s.spawn(|| loop {
                let Some((name, path)) = queue.lock().expect("queue").pop() else {
                    break;
                };
                let mut cmd = Command::new(exe);
                cmd.arg("run").arg("--config").arg(&path).arg("--out").arg(out.join(&name));
                if resume {
                    cmd.arg("--resume");
                }
                log::info!("sweep cell {name}: starting");
                match cmd.status() {
                    Ok(st) if st.success() => log::info!("sweep cell {name}: done"),
                    Ok(st) => failures.lock().expect("failures").push(format!("{name} ({st})")),
                    Err(e) => failures.lock().expect("failures").push(format!("{name} ({e})")),
                }
            });
        }
    });
    let failures = failures.into_inner().expect("failures");
    if !failures.is_empty() {
        return Err(Error::Config(format!("sweep cells failed: {}", failures.join(", "))));
    }
    collect(cells, out)
}

/// One row per cell with the `mean` row of its summary.
pub fn collect(cells: &[SweepCell], out: &Path) -> Result<PathBuf> {
    let mut rows = Vec::new();
    let mut keys: Vec<String> = Vec::new();
    for cell in cells {
        let path = out.join(&cell.name).join(SUMMARY_FILE);
        let mut r = csv::Reader::from_path(&path).map_err(|e| format_error(&path, e))?;
        let header: Vec<String> = r.headers().map_err(|e| format_error(&path, e))?.iter().map(String::from).collect();
        let mean = r
            .records()
            .filter_map(|rec| rec.ok())
            .find(|rec| rec.get(0) == Some("mean"))
            .ok_or_else(|| format_error(&path, "no mean row"))?;
        let values: Vec<(String, String)> = header.iter().cloned().zip(mean.iter().map(String::from)).skip(1).collect();
        for (k, _) in &values {
            if !keys.contains(k) {
                keys.push(k.clone());
            }
        }
        rows.push((cell, values));
    }
    let path = out.join(SWEEP_FILE);
    let mut w = csv::Writer::from_path(&path).map_err(|e| format_error(&path, e))?;
    let err = |e: csv::Error| format_error(&path, e);
    w.write_record(["lambda_e", "lambda_d"].into_iter().chain(keys.iter().map(String::as_str))).map_err(err)?;
    for (cell, values) in rows {
        let mut rec = vec![format_float(cell.lambda_e), format_float(cell.lambda_d)];
        rec.extend(
            keys.iter().map(|k| values.iter().find(|(n, _)| n == k).map(|(_, v)| v.clone()).unwrap_or_default()),
        );
        w.write_record(&rec).map_err(err)?;
    }
    w.flush().at(&path)?;
    Ok(path)
}
