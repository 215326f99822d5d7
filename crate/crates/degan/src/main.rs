use std::path::{Path, PathBuf};

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use degan::cache::DatasetCache;
use degan::dataref::DataRef;
use degan::manifest::{Manifest, Pipeline};
use degan::runner::{run, RunOptions};
use degan::tables::{collect_runs, make_table, TableId};
use degan::{checkpoint, import, samples, sweep};

#[derive(Parser)]
#[command(
    name = "degan",
    version,
    about = "Data-enriching GAN experiments: teachers, generators, distillation, incremental learning"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunFlags {
    /// Experiment manifest (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Run only this seed instead of the manifest's seed list.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; overrides the manifest's `output_dir`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Continue a partially finished output directory, skipping completed seeds.
    #[arg(long)]
    resume: bool,
    /// Compute device; only `cpu` is available.
    #[arg(long, default_value = "cpu")]
    device: String,
}

#[derive(Subcommand)]
enum Command {
    /// Run the pipeline named in the manifest.
    Run(RunFlags),
    /// Train a teacher classifier on the true data.
    TrainTeacher(RunFlags),
    /// Train a DeGAN (or vanilla GAN with `--source vanilla`) generator on the proxy.
    TrainDegan {
        #[command(flatten)]
        flags: RunFlags,
        #[arg(long)]
        source: Option<String>,
    },
    /// Distill the teacher into a student.
    Distill {
        #[command(flatten)]
        flags: RunFlags,
        /// degan | vanilla | proxy | true
        #[arg(long)]
        source: Option<String>,
    },
    /// Single-step class-incremental update.
    Incremental {
        #[command(flatten)]
        flags: RunFlags,
        /// finetune | lwf_proxy | degan
        #[arg(long)]
        mode: Option<String>,
    },
    /// Write a grid of generated samples and a CSV of classifier predictions.
    ExportSamples {
        /// Generator checkpoint directory.
        #[arg(long)]
        generator: PathBuf,
        /// Classifier checkpoint directory.
        #[arg(long)]
        classifier: PathBuf,
        #[arg(long, default_value_t = 8)]
        rows: usize,
        #[arg(long, default_value_t = 8)]
        cols: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output PNG; the sidecar CSV is written next to it.
        #[arg(long)]
        out: PathBuf,
    },
    /// Render a results table from run directories.
    MakeTable {
        /// kd_main | kd_proxy_sweep | incremental
        #[arg(long)]
        table: String,
        /// Write the table here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Run directories to scan for run records.
        #[arg(required = true)]
        runs: Vec<PathBuf>,
    },
    /// Run a manifest over a λ_e × λ_d grid in parallel worker processes.
    Sweep {
        #[command(flatten)]
        flags: RunFlags,
        /// Comma-separated λ_e values.
        #[arg(long, default_value = "0,1")]
        lambda_e: String,
        /// Comma-separated λ_d values.
        #[arg(long, default_value = "0,1")]
        lambda_d: String,
        /// Concurrent worker processes (default: available cores).
        #[arg(long)]
        jobs: Option<usize>,
    },
    /// Store a dataset in the cache (`$DEGAN_DATA_DIR`, default ./data-cache).
    Cache {
        /// Cache entry name.
        name: String,
        /// A dataset reference such as `synthetic:true:5:200:16x16x1:0`.
        #[arg(long, conflicts_with_all = ["idx_images", "cifar"])]
        from: Option<String>,
        /// IDX image file; requires --idx-labels.
        #[arg(long, requires = "idx_labels")]
        idx_images: Option<PathBuf>,
        #[arg(long)]
        idx_labels: Option<PathBuf>,
        /// CIFAR binary batch files.
        #[arg(long, num_args = 1..)]
        cifar: Vec<PathBuf>,
        /// CIFAR-100 records (coarse and fine label bytes).
        #[arg(long)]
        fine: bool,
        #[arg(long, default_value_t = 10)]
        classes: usize,
    },
}

fn load_manifest(flags: &RunFlags, pipeline: Option<Pipeline>) -> anyhow::Result<(Manifest, RunOptions)> {
    if flags.device != "cpu" {
        bail!("device '{}' is not available; only cpu is supported", flags.device);
    }
    let mut m = Manifest::load(&flags.config)?;
    if let Some(p) = pipeline {
        m.pipeline = p;
    }
    if let Some(s) = flags.seed {
        m.seeds = Some(vec![s]);
        m.repeats = None;
    }
    let out = match (&flags.out, &m.output_dir) {
        (Some(o), _) => o.clone(),
        (None, Some(o)) => o.clone(),
        (None, None) => bail!("no output directory: pass --out or set output_dir in the manifest"),
    };
    m.check()?;
    Ok((m, RunOptions { out, resume: flags.resume }))
}

fn execute(m: &Manifest, opts: &RunOptions) -> anyhow::Result<()> {
    let outcome = run(m, opts, &DatasetCache::from_env())?;
    for s in &outcome.seeds {
        let acc = ["test_acc", "combined_acc", "val_acc", "hist_entropy"]
            .iter()
            .find_map(|k| s.run.summary_value(k).map(|v| format!("{k} {v:.4}")))
            .unwrap_or_default();
        println!("seed {}{}: {acc}", s.seed, if s.resumed { " (resumed)" } else { "" });
    }
    println!("summary: {}", outcome.summary.display());
    Ok(())
}

fn cache_store(
    name: &str,
    from: Option<&str>,
    idx: Option<(&Path, &Path)>,
    cifar: &[PathBuf],
    fine: bool,
    classes: usize,
) -> anyhow::Result<()> {
    let cache = DatasetCache::from_env();
    let ds = if let Some(r) = from {
        r.parse::<DataRef>()?.load(&cache)?
    } else if let Some((i, l)) = idx {
        import::read_idx(i, l, classes, name)?
    } else if !cifar.is_empty() {
        import::read_cifar(&cifar.iter().map(PathBuf::as_path).collect::<Vec<_>>(), fine, name)?
    } else {
        bail!("give one of --from, --idx-images or --cifar");
    };
    let m = cache.store(name, &ds)?;
    println!(
        "stored {} ({} images, {}, {} classes) in {}",
        m.name,
        m.count,
        m.shape,
        m.num_classes,
        cache.root().display()
    );
    Ok(())
}

fn main() -> anyhow::Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().command {
        Command::Run(flags) => {
            let (m, o) = load_manifest(&flags, None)?;
            execute(&m, &o)
        }
        Command::TrainTeacher(flags) => {
            let (m, o) = load_manifest(&flags, Some(Pipeline::TrainTeacher))?;
            execute(&m, &o)
        }
        Command::TrainDegan { flags, source } => {
            let (mut m, o) = load_manifest(&flags, Some(Pipeline::TrainDegan))?;
            if let Some(s) = source {
                m.options.source = s;
            }
            m.check()?;
            execute(&m, &o)
        }
        Command::Distill { flags, source } => {
            let (mut m, o) = load_manifest(&flags, Some(Pipeline::Distill))?;
            if let Some(s) = source {
                m.options.source = s;
            }
            m.check()?;
            execute(&m, &o)
        }
        Command::Incremental { flags, mode } => {
            let (mut m, o) = load_manifest(&flags, Some(Pipeline::Incremental))?;
            if let Some(md) = mode {
                m.options.incremental_mode = md;
            }
            m.check()?;
            execute(&m, &o)
        }
        Command::ExportSamples { generator, classifier, rows, cols, seed, out } => {
            let g =
                checkpoint::load(&generator).with_context(|| format!("loading generator {}", generator.display()))?;
            let c = checkpoint::load(&classifier)
                .with_context(|| format!("loading classifier {}", classifier.display()))?;
            let e = samples::export_samples(&g, &c, rows, cols, seed, &out)?;
            println!("wrote {} and {}", e.image.display(), e.sidecar.display());
            Ok(())
        }
        Command::MakeTable { table, out, runs } => {
            let id: TableId = table.parse()?;
            let text = make_table(&collect_runs(&runs)?, id)?;
            match out {
                Some(p) => std::fs::write(&p, text).with_context(|| format!("writing {}", p.display()))?,
                None => print!("{text}"),
            }
            Ok(())
        }
        Command::Sweep { flags, lambda_e, lambda_d, jobs } => {
            let (m, o) = load_manifest(&flags, None)?;
            if o.out.exists() && std::fs::read_dir(&o.out)?.next().is_some() && !o.resume {
                return Err(degan::Error::OutputExists(o.out).into());
            }
            let cells = sweep::cells(&m, &sweep::parse_list(&lambda_e)?, &sweep::parse_list(&lambda_d)?)?;
            let jobs = jobs.unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));
            let exe = std::env::current_exe().context("locating the degan executable")?;
            let path = sweep::run_sweep(&exe, &cells, &o.out, jobs, o.resume)?;
            println!("sweep summary: {}", path.display());
            Ok(())
        }
        Command::Cache { name, from, idx_images, idx_labels, cifar, fine, classes } => {
            let idx = idx_images.as_deref().zip(idx_labels.as_deref());
            cache_store(&name, from.as_deref(), idx, &cifar, fine, if fine { 100 } else { classes })
        }
    }
}
