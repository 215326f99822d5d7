//! Text tables that lay out this run's results next to full-scale reference values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, IoContext, Result};
use crate::metrics::{load_run, RunFile, RUN_FILE};
use crate::runner::mean_sd;

const MISSING: &str = "—";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TableId {
    KdMain,
    KdProxySweep,
    Incremental,
}

impl FromStr for TableId {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "kd_main" => Ok(TableId::KdMain),
            "kd_proxy_sweep" => Ok(TableId::KdProxySweep),
            "incremental" => Ok(TableId::Incremental),
            other => Err(Error::Config(format!("unknown table '{other}' (kd_main, kd_proxy_sweep, incremental)"))),
        }
    }
}

/// Every `run.toml` under `paths`, in sorted path order.
pub fn collect_runs(paths: &[PathBuf]) -> Result<Vec<(PathBuf, RunFile)>> {
    fn walk(dir: &Path, out: &mut Vec<PathBuf>) -> Result<()> {
        if dir.join(RUN_FILE).is_file() {
            out.push(dir.to_path_buf());
        }
        let mut entries: Vec<PathBuf> =
            fs::read_dir(dir).at(dir)?.map(|e| e.map(|e| e.path())).collect::<std::io::Result<_>>().at(dir)?;
        entries.sort();
        for e in entries.into_iter().filter(|e| e.is_dir()) {
            walk(&e, out)?;
        }
        Ok(())
    }
    let mut dirs = Vec::new();
    for p in paths {
        walk(p, &mut dirs)?;
    }
    dirs.into_iter().map(|d| load_run(&d).map(|r| (d, r))).collect()
}

/// `mean±sd (n)` in percent.
fn cell(values: &[f64]) -> String {
    if values.is_empty() {
        return MISSING.into();
    }
    let (m, s) = mean_sd(values);
    format!("{:.2}±{:.2} ({})", 100.0 * m, 100.0 * s, values.len())
}

fn reference(v: Option<f64>) -> String {
    v.map(|v| format!("{v:.2}")).unwrap_or_else(|| MISSING.into())
}

fn render(title: &str, header: &[String], rows: &[Vec<String>]) -> String {
    let widths: Vec<usize> = (0..header.len())
        .map(|c| rows.iter().map(|r| r[c].chars().count()).chain([header[c].chars().count()]).max().unwrap_or(0))
        .collect();
    let line = |cells: &[String]| -> String {
        let parts: Vec<String> = cells
            .iter()
            .zip(&widths)
            .enumerate()
            .map(|(i, (c, &w))| {
                let pad = w - c.chars().count();
                if i == 0 {
                    format!("{c}{}", " ".repeat(pad))
                } else {
                    format!("{}{c}", " ".repeat(pad))
                }
            })
            .collect();
        parts.join(" | ").trim_end().to_string()
    };
    let mut out = format!("{title}\n");
    out.push_str(&line(header));
    out.push('\n');
    out.push_str(&widths.iter().map(|&w| "-".repeat(w)).collect::<Vec<_>>().join("-+-"));
    out.push('\n');
    for r in rows {
        out.push_str(&line(r));
        out.push('\n');
    }
    out
}

fn values<'a>(runs: impl Iterator<Item = &'a RunFile>, key: &str) -> Vec<f64> {
    runs.filter_map(|r| r.summary_value(key)).collect()
}

fn distilled<'a>(runs: &'a [(PathBuf, RunFile)], source: &'a str) -> impl Iterator<Item = &'a RunFile> + 'a {
    runs.iter()
        .map(|(_, r)| r)
        .filter(move |r| r.pipeline == "distill" && r.tags.get("kd_source").map(String::as_str) == Some(source))
}

fn teachers(runs: &[(PathBuf, RunFile)]) -> Vec<f64> {
    let mut seen = Vec::new();
    let mut out = Vec::new();
    for (_, r) in runs {
        if r.pipeline != "train_teacher" || r.tags.get("role").map(String::as_str) != Some("teacher") {
            continue;
        }
        let key = (r.config.get("seed").cloned(), r.tags.get("data").cloned());
        if !seen.contains(&key) {
            seen.push(key);
            out.extend(r.summary_value("test_acc"));
        }
    }
    out
}

fn kd_main(runs: &[(PathBuf, RunFile)]) -> String {
    const REF: [(&str, &str, [f64; 3]); 5] = [
        ("Teacher", "", [83.02, 90.72, 79.05]),
        ("Using true data", "true", [81.78, 88.98, 69.65]),
        ("Proxy data", "proxy", [74.58, 77.81, 46.32]),
        ("DCGAN", "vanilla", [66.24, 79.67, 39.77]),
        ("DeGAN", "degan", [80.55, 83.79, 65.25]),
    ];
    let header: Vec<String> = ["Method", "This run", "Ref. CIFAR-10", "Ref. F-MNIST", "Ref. CIFAR-100"]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let rows: Vec<Vec<String>> = REF
        .iter()
        .map(|(name, source, refs)| {
            let ours = if source.is_empty() { teachers(runs) } else { values(distilled(runs, source), "test_acc") };
            let mut row = vec![name.to_string(), cell(&ours)];
            row.extend(refs.iter().map(|&v| reference(Some(v))));
            row
        })
        .collect();
    let mut out = render("Student accuracy (%) after distillation", &header, &rows);
    out.push_str("Ref. columns are full-scale reference values, not expected outputs of this run.\n");
    out
}

fn kd_proxy_sweep(runs: &[(PathBuf, RunFile)]) -> String {
    let mut proxies: Vec<String> = Vec::new();
    for (_, r) in runs {
        if let Some(p) = r.tags.get("proxy").filter(|_| r.pipeline == "distill") {
            if !proxies.contains(p) {
                proxies.push(p.clone());
            }
        }
    }
    let methods = [("Proxy data", "proxy"), ("DCGAN", "vanilla"), ("DeGAN", "degan")];
    let mut header = vec!["Method".to_string()];
    header.extend(proxies.iter().enumerate().map(|(i, _)| format!("P{}", i + 1)));
    let rows: Vec<Vec<String>> = methods
        .iter()
        .map(|(name, source)| {
            let mut row = vec![name.to_string()];
            for p in &proxies {
                let v = values(distilled(runs, source).filter(|r| r.tags.get("proxy") == Some(p)), "test_acc");
                row.push(cell(&v));
            }
            row
        })
        .collect();
    let mut out = render("Student accuracy (%) by proxy dataset (this run)", &header, &rows);
    for (i, p) in proxies.iter().enumerate() {
        let _ = writeln!(out, "  P{} = {p}", i + 1);
    }
    out.push('\n');
    let ref_header: Vec<String> =
        ["Method", "90 cls", "40 cls", "6 cls", "Smp-1", "Smp-2", "Smp-3", "Smp-4", "Smp-5", "SVHN", "Noise"]
            .iter()
            .map(|s| s.to_string())
            .collect();
    let refs: [(&str, [f64; 10]); 3] = [
        ("Proxy data", [74.58, 65.78, 36.44, 42.15, 49.24, 46.65, 49.08, 47.0, 45.18, 11.63]),
        ("DCGAN", [66.24, 66.13, 39.44, 56.81, 67.33, 62.1, 69.34, 68.66, 26.5, 10.09]),
        ("DeGAN", [80.55, 76.32, 59.53, 66.95, 74.59, 72.87, 76.63, 71.61, 55.05, 23.26]),
    ];
    let ref_rows: Vec<Vec<String>> = refs
        .iter()
        .map(|(name, vals)| std::iter::once(name.to_string()).chain(vals.iter().map(|&v| reference(Some(v)))).collect())
        .collect();
    out.push_str(&render(
        "Published reference values (CIFAR-10 teacher; proxies from CIFAR-100, SVHN, noise)",
        &ref_header,
        &ref_rows,
    ));
    out
}

fn incremental(runs: &[(PathBuf, RunFile)]) -> String {
    const REF: [(&str, Option<&str>, f64); 5] = [
        ("Finetuning", Some("finetune"), 41.6),
        ("Fixed representation", None, 46.8),
        ("LwF.MC", None, 62.58),
        ("Using proxy data", Some("lwf_proxy"), 65.03),
        ("DeGAN", Some("degan"), 68.65),
    ];
    let header: Vec<String> =
        ["Method", "Combined", "Old classes", "New classes", "Ref. combined"].iter().map(|s| s.to_string()).collect();
    let rows: Vec<Vec<String>> = REF
        .iter()
        .map(|(name, mode, r)| {
            let sel: Vec<&RunFile> = match mode {
                Some(m) => runs
                    .iter()
                    .map(|(_, r)| r)
                    .filter(|r| r.pipeline == "incremental_update" && r.tags.get("mode").map(String::as_str) == Some(m))
                    .collect(),
                None => Vec::new(),
            };
            let col = |k: &str| cell(&values(sel.iter().copied(), k));
            vec![name.to_string(), col("combined_acc"), col("old_acc"), col("new_acc"), reference(Some(*r))]
        })
        .collect();
    let mut out = render("Single-step class-incremental accuracy (%)", &header, &rows);
    out.push_str("Ref. column holds full-scale reference values (CIFAR-100, 20 + 20 classes), not expected outputs of this run.\n");
    out
}

/// Renders `table` from run records; an empty record set is an error.
pub fn make_table(runs: &[(PathBuf, RunFile)], table: TableId) -> Result<String> {
    if runs.is_empty() {
        return Err(Error::Config("no run records found".into()));
    }
    Ok(match table {
        TableId::KdMain => kd_main(runs),
        TableId::KdProxySweep => kd_proxy_sweep(runs),
        TableId::Incremental => incremental(runs),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    fn run(pipeline: &str, tags: &[(&str, &str)], summary: &[(&str, f64)]) -> (PathBuf, RunFile) {
        (
            PathBuf::from("x"),
            RunFile {
                pipeline: pipeline.into(),
                wall_clock_secs: None,
                checkpoints: vec![],
                config: BTreeMap::from([("seed".to_string(), "0".to_string())]),
                summary: summary.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
                tags: tags.iter().map(|(k, v)| (k.to_string(), v.to_string())).collect(),
                seed_traces: BTreeMap::new(),
            },
        )
    }

    #[test]
    fn empty_record_set_is_an_error() {
        assert!(make_table(&[], TableId::KdMain).is_err());
    }

    #[test]
    fn kd_main_rows_and_missing_cells() {
        let runs = vec![
            run("distill", &[("kd_source", "degan")], &[("test_acc", 0.5)]),
            run("distill", &[("kd_source", "degan")], &[("test_acc", 0.7)]),
            run("train_teacher", &[("role", "teacher"), ("data", "d")], &[("test_acc", 0.9)]),
        ];
        let t = make_table(&runs, TableId::KdMain).unwrap();
        let lines: Vec<&str> = t.lines().collect();
        for (i, name) in ["Teacher", "Using true data", "Proxy data", "DCGAN", "DeGAN"].iter().enumerate() {
            assert!(lines[3 + i].starts_with(name), "{t}");
        }
        assert!(lines[7].contains("60.00±14.14 (2)"), "{t}");
        assert!(lines[4].contains(MISSING));
        assert!(lines[3].contains("90.00±0.00 (1)"));
        assert!(t.contains("80.55") && t.contains("full-scale reference"));
    }

    #[test]
    fn incremental_layout() {
        let runs = vec![run("incremental_update", &[("mode", "finetune")], &[("combined_acc", 0.4)])];
        let t = make_table(&runs, TableId::Incremental).unwrap();
        let names: Vec<&str> = t.lines().skip(3).take(5).map(|l| l.split(" | ").next().unwrap().trim()).collect();
        assert_eq!(names, ["Finetuning", "Fixed representation", "LwF.MC", "Using proxy data", "DeGAN"]);
        assert!(t.contains("41.60") && t.contains("68.65"));
    }

    #[test]
    fn proxy_sweep_columns_follow_proxy_tags() {
        let runs = vec![
            run("distill", &[("kd_source", "proxy"), ("proxy", "a")], &[("test_acc", 0.3)]),
            run("distill", &[("kd_source", "degan"), ("proxy", "b")], &[("test_acc", 0.6)]),
        ];
        let t = make_table(&runs, TableId::KdProxySweep).unwrap();
        assert!(t.contains("P1 = a") && t.contains("P2 = b"));
        assert!(t.contains("23.26"));
    }
}
