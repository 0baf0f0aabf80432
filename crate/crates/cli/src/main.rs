mod document;

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use jedi_core::metrics::{parse_curves_csv, render_svg, write_curves_csv, MetricsReport};
use jedi_core::model::init_models;
use jedi_core::store::{ingest_dump, parse_manifest, EmbeddingStore, Split};
use jedi_core::train::{evaluate_model, fit_with, run_ablation_grid, AblationGrid, Checkpoint, FitOptions};
use jedi_core::Error;

use document::RunDocument;

/// Joint expert distillation over cached embeddings.
#[derive(Parser)]
#[command(name = "jedi", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct DocArgs {
    /// Run document (TOML); defaults apply to anything it leaves out.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override a document key, e.g. `--set loss.gamma=0.2` or `--set world.jitter=0.5`.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Build a store from a manifest and text dumps.
    Ingest {
        /// TOML file of `[[dataset]]` tables.
        #[arg(long)]
        manifest: PathBuf,
        /// `DATASET:SPLIT:PATH`, where DATASET is a name or id.
        #[arg(long = "dump", value_name = "DATASET:SPLIT:PATH")]
        dumps: Vec<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic world from the document's `[world]` table.
    GenWorld {
        #[command(flatten)]
        doc: DocArgs,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train students and teachers jointly.
    Train {
        #[command(flatten)]
        doc: DocArgs,
        /// Store directory; overrides the document's `store`.
        #[arg(long)]
        store: Option<PathBuf>,
        /// Run directory for the config snapshot, curves, report and checkpoints.
        #[arg(long)]
        out: PathBuf,
        /// Continue from a checkpoint written by the same configuration.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score a finished run's models on the validation and test splits.
    Eval {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        store: Option<PathBuf>,
    },
    /// Train one run per ablation cell and tabulate test accuracy.
    Ablate {
        #[command(flatten)]
        doc: DocArgs,
        #[arg(long)]
        store: Option<PathBuf>,
        /// `standard`, `full`, or comma-separated cell names.
        #[arg(long, default_value = "standard")]
        grid: String,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render accuracy curves and the metrics table of a run directory.
    Report {
        #[arg(long)]
        run: PathBuf,
        #[arg(long, default_value = "test")]
        split: String,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e.chain().any(|c| c.downcast_ref::<Error>().is_some_and(Error::is_config));
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Ingest { manifest, dumps, out } => ingest(&manifest, &dumps, &out),
        Command::GenWorld { doc, out } => gen_world(&doc, &out),
        Command::Train {
            doc,
            store,
            out,
            resume,
        } => train(&doc, store.as_deref(), &out, resume.as_deref()),
        Command::Eval { run, store } => eval(&run, store.as_deref()),
        Command::Ablate { doc, store, grid, out } => ablate(&doc, store.as_deref(), &grid, &out),
        Command::Report { run, split } => report(&run, &split),
    }
}

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).with_context(|| format!("writing {}", path.display()))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn summarize(store: &EmbeddingStore) {
    for spec in store.manifest() {
        let counts: Vec<String> = Split::ALL
            .iter()
            .map(|&s| format!("{s} {}", store.count(spec.id, s)))
            .collect();
        println!("{:<12} {}", spec.name, counts.join(", "));
    }
}

fn ingest(manifest: &Path, dumps: &[String], out: &Path) -> Result<()> {
    let text = fs::read_to_string(manifest).with_context(|| format!("reading {}", manifest.display()))?;
    let mut store = EmbeddingStore::new(parse_manifest(&text, manifest)?)?;
    for spec in dumps {
        let mut parts = spec.splitn(3, ':');
        let (Some(ds), Some(split), Some(path)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Config(format!("--dump `{spec}` is not DATASET:SPLIT:PATH")).into());
        };
        let home = store
            .manifest()
            .iter()
            .find(|d| d.name == ds || d.id.to_string() == ds)
            .map(|d| d.id)
            .ok_or_else(|| Error::Config(format!("--dump `{spec}`: no dataset `{ds}` in the manifest")))?;
        let split: Split = split.parse()?;
        let path = Path::new(path);
        let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
        ingest_dump(&mut store, &text, home, split, path)?;
    }
    store.write(out)?;
    summarize(&store);
    Ok(())
}

fn gen_world(args: &DocArgs, out: &Path) -> Result<()> {
    let doc = RunDocument::load(args.config.as_deref(), &args.overrides)?;
    let (store, _) = doc.open_store(None)?;
    store.write(out)?;
    write(&out.join("world.toml"), toml::to_string(&doc.world)?)?;
    summarize(&store);
    Ok(())
}

fn write_snapshot(out: &Path, resolved: &str, seed: u64) -> Result<()> {
    create_dir(out)?;
    write(&out.join("config.toml"), resolved)?;
    write(&out.join("seed.txt"), format!("{seed}\n"))
}

fn train(args: &DocArgs, store_flag: Option<&Path>, out: &Path, resume: Option<&Path>) -> Result<()> {
    let doc = RunDocument::load(args.config.as_deref(), &args.overrides)?;
    let (store, generated) = doc.open_store(store_flag)?;
    let store_path = store_flag.or(doc.store.as_deref());
    write_snapshot(out, &doc.resolved(&doc.train, store_path, generated)?, doc.train.seed)?;
    let ck_dir = out.join("checkpoints");
    if doc.train.checkpoint_every > 0 {
        create_dir(&ck_dir)?;
    }
    let options = FitOptions {
        checkpoint_dir: Some(ck_dir),
        resume: resume.map(Checkpoint::read).transpose()?,
        stop_after: None,
    };
    let mut outcome = fit_with(&store, &doc.train, None, options)?;
    for w in outcome.experts.warnings() {
        eprintln!("warning: {w}");
    }
    write_snapshot(out, &doc.resolved(&outcome.config, store_path, generated)?, doc.train.seed)?;
    write(&out.join("curves.csv"), write_curves_csv(&outcome.curves)?)?;
    write(&out.join("report.toml"), outcome.report.to_toml()?)?;
    let tables = format!(
        "{}\n{}",
        outcome.report.render_table(Split::Val),
        outcome.report.render_table(Split::Test)
    );
    write(&out.join("report.txt"), &tables)?;
    let epoch = outcome.history.len();
    let hash = outcome.report.config_hash.clone();
    Checkpoint::capture(&mut outcome.model, epoch, outcome.config.seed, &hash, &outcome.history)
        .write(&out.join("model.jedk"))?;
    print!("{tables}");
    Ok(())
}

fn eval(run: &Path, store_flag: Option<&Path>) -> Result<()> {
    let config = run.join("config.toml");
    let doc = RunDocument::load(Some(&config), &[])?;
    let (store, _) = doc.open_store(store_flag)?;
    let ck = Checkpoint::read(&run.join("model.jedk"))?;
    let mut model = init_models(
        &store.segment_dims(),
        &store.num_classes(),
        doc.train.seed,
        &doc.train.init_policy(),
        None,
    )?;
    ck.restore(&mut model)?;
    let mut rows = Vec::new();
    for dataset in 0..store.num_experts() {
        for split in [Split::Val, Split::Test] {
            if store.count(dataset, split) > 0 {
                rows.extend(evaluate_model(&model, &store, dataset, split)?);
            }
        }
    }
    let report = MetricsReport {
        config_hash: ck.config_hash,
        datasets: store.experts().iter().map(|s| s.name.clone()).collect(),
        final_epoch: ck.epoch.checked_sub(1),
        rows,
        initial: vec![],
    };
    println!("{}\n{}", report.render_table(Split::Val), report.render_table(Split::Test));
    Ok(())
}

fn ablate(args: &DocArgs, store_flag: Option<&Path>, grid: &str, out: &Path) -> Result<()> {
    let doc = RunDocument::load(args.config.as_deref(), &args.overrides)?;
    let cells = AblationGrid::parse(grid)?.cells()?;
    let (store, generated) = doc.open_store(store_flag)?;
    let store_path = store_flag.or(doc.store.as_deref());
    write_snapshot(out, &doc.resolved(&doc.train, store_path, generated)?, doc.train.seed)?;
    let table = run_ablation_grid(&store, &doc.train, &cells, None)?;
    let text = table.render();
    write(&out.join("ablation.txt"), &text)?;
    write(&out.join("ablation.toml"), table.to_toml()?)?;
    print!("{text}");
    Ok(())
}

fn report(run: &Path, split: &str) -> Result<()> {
    let split: Split = split.parse()?;
    let curves_path = run.join("curves.csv");
    let report_path = run.join("report.toml");
    let missing: Vec<String> = [&curves_path, &report_path]
        .iter()
        .filter(|p| !p.is_file())
        .map(|p| p.display().to_string())
        .collect();
    if !missing.is_empty() {
        anyhow::bail!("missing run files: {}", missing.join(", "));
    }
    let text = fs::read_to_string(&curves_path)?;
    let points = parse_curves_csv(&text).with_context(|| format!("parsing {}", curves_path.display()))?;
    let report = MetricsReport::from_toml(&fs::read_to_string(&report_path)?)
        .with_context(|| format!("parsing {}", report_path.display()))?;
    for name in &report.datasets {
        let svg = render_svg(&points, name, split.name(), "acc1");
        let path = run.join(format!("curves-{name}-{split}.svg"));
        write(&path, svg)?;
        println!("wrote {}", path.display());
    }
    print!("{}", report.render_table(split));
    Ok(())
}
