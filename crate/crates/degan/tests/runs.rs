use std::fs;
use std::path::{Path, PathBuf};
use std::process::Command;

use degan::cache::DatasetCache;
use degan::manifest::Manifest;
use degan::runner::{run, RunOptions};
use degan::tables::{collect_runs, make_table, TableId};
use degan::Error;

const TINY: &str = r#"
pipeline = "distill"
seeds = [0, 1]

[data]
true = "synthetic:true:3:12:8x8x1:{seed}"
test = "synthetic:true:3:6:8x8x1:5{seed}"
proxy = "synthetic:related:3:12:8x8x1:{seed}"
proxy_counts = [12, 4, 0]

[options]
source = "degan"

[config]
batch_size = 16
latent_dim = 8
gan_epochs = 2
teacher_epochs = 3
kd_epochs = 2
batches_per_kd_epoch = 2
"#;

fn manifest(text: &str) -> Manifest {
    Manifest::from_toml(Path::new("tiny.toml"), text).unwrap()
}

fn opts(out: &Path, resume: bool) -> RunOptions {
    RunOptions { out: out.to_path_buf(), resume }
}

fn files(dir: &Path, name: &str) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.file_name().unwrap() == name {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

#[test]
fn seeds_summary_and_resume() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let m = manifest(TINY);
    let cache = DatasetCache::new(tmp.path().join("cache"));
    let first = run(&m, &opts(&out, false), &cache).unwrap();
    assert_eq!(first.seeds.len(), 2);
    for stage in ["teacher", "gan", "student"] {
        for s in [0, 1] {
            assert!(out.join(format!("seed-{s}/{stage}/metrics.csv")).is_file(), "{stage}");
        }
    }
    assert!(out.join("seed-0/gan/generator/digest.txt").is_file());
    let summary = fs::read_to_string(&first.summary).unwrap();
    let lines: Vec<&str> = summary.lines().collect();
    assert_eq!(lines.len(), 5, "{summary}");
    assert!(lines[0].starts_with("seed,") && lines[0].contains("test_acc"));
    assert!(lines[3].starts_with("mean,") && lines[4].starts_with("sd,"));

    assert!(matches!(run(&m, &opts(&out, false), &cache), Err(Error::OutputExists(_))));

    let before = files(&out, "metrics.csv");
    fs::remove_file(out.join("seed-1/done")).unwrap();
    let again = run(&m, &opts(&out, true), &cache).unwrap();
    assert!(again.seeds[0].resumed && !again.seeds[1].resumed);
    assert_eq!(files(&out, "metrics.csv"), before);
    assert_eq!(fs::read_to_string(&again.summary).unwrap(), summary);

    let table = make_table(&collect_runs(&[out.clone()]).unwrap(), TableId::KdMain).unwrap();
    assert!(table.lines().any(|l| l.starts_with("DeGAN") && l.contains("(2)")), "{table}");
    assert!(table.lines().any(|l| l.starts_with("Teacher") && l.contains("(2)")), "{table}");
}

#[test]
fn reruns_are_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let m = manifest(&TINY.replace("seeds = [0, 1]", "seeds = [4]"));
    let cache = DatasetCache::new(tmp.path().join("cache"));
    run(&m, &opts(&tmp.path().join("a"), false), &cache).unwrap();
    run(&m, &opts(&tmp.path().join("b"), false), &cache).unwrap();
    let a = files(&tmp.path().join("a"), "metrics.csv");
    assert_eq!(a.len(), 3);
    assert_eq!(a, files(&tmp.path().join("b"), "metrics.csv"));
    assert_eq!(files(&tmp.path().join("a"), "digest.txt"), files(&tmp.path().join("b"), "digest.txt"));
}

#[test]
fn bad_reference_fails_before_training() {
    let tmp = tempfile::tempdir().unwrap();
    let out = tmp.path().join("run");
    let m = manifest(&TINY.replace("synthetic:related:3:12:8x8x1:{seed}", "cache:absent"));
    assert!(run(&m, &opts(&out, false), &DatasetCache::new(tmp.path())).is_err());
    assert!(!out.exists());
}

#[test]
fn incremental_and_other_sources() {
    let tmp = tempfile::tempdir().unwrap();
    let cache = DatasetCache::new(tmp.path().join("cache"));
    let mut runs = Vec::new();
    for mode in ["finetune", "lwf_proxy", "degan"] {
        let text = TINY
            .replace("pipeline = \"distill\"", "pipeline = \"incremental\"")
            .replace("seeds = [0, 1]", "seeds = [0]")
            .replace("true:3:", "true:4:")
            .replace("proxy_counts = [12, 4, 0]", "old_classes = 2")
            .replace("source = \"degan\"", &format!("incremental_mode = \"{mode}\""));
        let out = tmp.path().join(mode);
        let r = run(&manifest(&text), &opts(&out, false), &cache).unwrap();
        assert!(r.seeds[0].run.summary_value("combined_acc").is_some());
        assert!(out.join("seed-0/old_model/model/params.bin").is_file());
        runs.push(out);
    }
    let table = make_table(&collect_runs(&runs).unwrap(), TableId::Incremental).unwrap();
    assert!(table.lines().filter(|l| l.contains("(1)")).count() == 3, "{table}");
    for source in ["vanilla", "proxy", "true"] {
        let text = TINY
            .replace("seeds = [0, 1]", "seeds = [0]")
            .replace("source = \"degan\"", &format!("source = \"{source}\""));
        let r = run(&manifest(&text), &opts(&tmp.path().join(source), false), &cache).unwrap();
        assert_eq!(r.seeds[0].run.tags.get("kd_source").map(String::as_str), Some(source));
    }
}

fn degan() -> Command {
    Command::new(env!("CARGO_BIN_EXE_degan"))
}

#[test]
fn cli_end_to_end() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("m.toml");
    fs::write(&cfg, TINY.replace("pipeline = \"distill\"", "pipeline = \"train_degan\"")).unwrap();
    let out = tmp.path().join("gan");
    let ok =
        degan().args(["train-degan", "--seed", "2", "--config"]).arg(&cfg).arg("--out").arg(&out).status().unwrap();
    assert!(ok.success());
    assert!(!degan().arg("run").arg("--config").arg(&cfg).arg("--out").arg(&out).status().unwrap().success());
    assert!(!degan()
        .args(["run", "--device", "cuda", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(tmp.path().join("x"))
        .status()
        .unwrap()
        .success());

    let png = tmp.path().join("s/grid.png");
    let st = degan()
        .arg("export-samples")
        .arg("--generator")
        .arg(out.join("seed-2/gan/generator"))
        .arg("--classifier")
        .arg(out.join("seed-2/teacher/model"))
        .args(["--rows", "4", "--cols", "4", "--out"])
        .arg(&png)
        .status()
        .unwrap();
    assert!(st.success());
    assert_eq!(fs::read_to_string(png.with_extension("csv")).unwrap().lines().count(), 17);

    let empty = tmp.path().join("empty");
    fs::create_dir(&empty).unwrap();
    assert!(!degan().args(["make-table", "--table", "kd_main"]).arg(&empty).status().unwrap().success());
    let table = degan().args(["make-table", "--table", "kd_main"]).arg(&out).output().unwrap();
    assert!(table.status.success());
    assert!(String::from_utf8(table.stdout).unwrap().contains("Teacher"));
}

#[test]
fn sweep_runs_every_cell() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = tmp.path().join("m.toml");
    let text =
        TINY.replace("pipeline = \"distill\"", "pipeline = \"train_degan\"").replace("seeds = [0, 1]", "seeds = [0]");
    fs::write(&cfg, text).unwrap();
    let out = tmp.path().join("sweep");
    let st = degan()
        .args(["sweep", "--lambda-e", "0,1", "--lambda-d", "1", "--jobs", "2", "--config"])
        .arg(&cfg)
        .arg("--out")
        .arg(&out)
        .env("DEGAN_DATA_DIR", tmp.path().join("cache"))
        .status()
        .unwrap();
    assert!(st.success());
    let csv = fs::read_to_string(out.join("sweep.csv")).unwrap();
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines.len(), 3, "{csv}");
    assert!(lines[0].starts_with("lambda_e,lambda_d,"));
    assert!(lines[1].starts_with("0,1,") && lines[2].starts_with("1,1,"));
}

#[test]
fn cache_command_stores_datasets() {
    let tmp = tempfile::tempdir().unwrap();
    let st = degan()
        .args(["cache", "tiny", "--from", "synthetic:unrelated:3:4:8x8x3:1"])
        .env("DEGAN_DATA_DIR", tmp.path())
        .status()
        .unwrap();
    assert!(st.success());
    let ds = DatasetCache::new(tmp.path()).load("tiny").unwrap();
    assert_eq!(ds.len(), 12);
}

#[test]
fn bundled_manifests_are_valid() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../manifests");
    let mut n = 0;
    for entry in fs::read_dir(&dir).unwrap() {
        let path = entry.unwrap().path();
        let m = Manifest::load(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
        m.check().unwrap();
        m.config(0).unwrap();
        n += 1;
    }
    assert!(n >= 4);
}
