//! `gappred` — drive the spiral-task sweep and the gap-predictor
//! experiments from the command line.

use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

use gappred_core::eval::{LabelMode, Regime, Scope};
use gappred_core::ggp::{self, Family};
use gappred_core::pipeline::{
    self, examples_from_records, lambda_for, RunConfig, RunStore,
};
use gappred_core::spiral::{self, Purpose, SpiralSpec};

#[derive(Parser)]
#[command(name = "gappred", version, about = "Spiral-task sweeps and generalization-gap predictors")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate spiral datasets as JSON Lines files.
    GenDatasets(GenDatasetsArgs),
    /// Sample classifier hyperparameters from the published grid.
    SampleHparams(SampleHparamsArgs),
    /// Run the full train/extract sweep into a run directory.
    TrainNets(TrainNetsArgs),
    /// Re-extract signatures at a new squash constant from checkpoints.
    ExtractSignatures(ExtractSignaturesArgs),
    /// Fit one gap predictor on a finished run and save the model.
    TrainGgp(TrainGgpArgs),
    /// Cross-validate one (scope, regime, family) cell.
    Evaluate(EvaluateArgs),
    /// Export (train accuracy, gap, knobs) scatter data as CSV.
    ExportAnalysis(ExportAnalysisArgs),
    /// Evaluate all 15 cells and print the results table.
    Report(ReportArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum CliScope {
    PerDataset,
    SingleModel,
}

impl From<CliScope> for Scope {
    fn from(s: CliScope) -> Scope {
        match s {
            CliScope::PerDataset => Scope::PerDataset,
            CliScope::SingleModel => Scope::SingleModel,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliRegime {
    SameDist,
    UnseenHparams,
    UnseenDatasets,
}

impl From<CliRegime> for Regime {
    fn from(r: CliRegime) -> Regime {
        match r {
            CliRegime::SameDist => Regime::SameDist,
            CliRegime::UnseenHparams => Regime::UnseenHparams,
            CliRegime::UnseenDatasets => Regime::UnseenDatasets,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliFamily {
    Linear,
    Dnn,
    Rnn,
}

impl From<CliFamily> for Family {
    fn from(f: CliFamily) -> Family {
        match f {
            CliFamily::Linear => Family::Linear,
            CliFamily::Dnn => Family::Dnn,
            CliFamily::Rnn => Family::Rnn,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum CliLabels {
    Gap,
    TestAcc,
}

impl From<CliLabels> for LabelMode {
    fn from(l: CliLabels) -> LabelMode {
        match l {
            CliLabels::Gap => LabelMode::Gap,
            CliLabels::TestAcc => LabelMode::TestAccuracy,
        }
    }
}

#[derive(Args)]
struct GenDatasetsArgs {
    /// Generate the full 135-spec published grid.
    #[arg(long, conflicts_with = "spec")]
    preset: Option<String>,
    /// One spec as "k=1,sigma=0.05,m=100,seed=3".
    #[arg(long)]
    spec: Option<String>,
    #[arg(long, value_enum, default_value = "train")]
    purpose: CliPurpose,
    /// Points to generate; defaults to m for train sets and 10000 for test
    /// sets.
    #[arg(long)]
    count: Option<u32>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum CliPurpose {
    Train,
    Test,
}

#[derive(Args)]
struct SampleHparamsArgs {
    #[arg(long, default_value_t = 100)]
    count: u32,
    #[arg(long, default_value_t = 7)]
    seed: u64,
    /// Output JSON file; stdout when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainNetsArgs {
    /// Run config TOML; CLI flags below override individual fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Start from a named preset instead of a config file.
    #[arg(long, default_value = "desk")]
    preset: String,
    #[arg(long)]
    root_seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long)]
    hparam_count: Option<u32>,
    #[arg(long)]
    hparam_seed: Option<u64>,
    #[arg(long)]
    steps: Option<usize>,
    #[arg(long)]
    test_size: Option<u32>,
    #[arg(long)]
    lambda_dependent: Option<f64>,
    #[arg(long)]
    lambda_independent: Option<f64>,
    /// Persist weights so signatures can be re-extracted later.
    #[arg(long)]
    checkpoints: bool,
    /// Comma-separated grid overrides.
    #[arg(long)]
    loops: Option<String>,
    #[arg(long)]
    sigmas: Option<String>,
    #[arg(long)]
    sizes: Option<String>,
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractSignaturesArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    lambda: f64,
}

#[derive(Args)]
struct TrainGgpArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum)]
    family: CliFamily,
    #[arg(long, value_enum, default_value = "single-model")]
    scope: CliScope,
    #[arg(long, value_enum, default_value = "gap")]
    labels: CliLabels,
    /// Restrict training to one dataset variation (required for
    /// per-dataset scope).
    #[arg(long)]
    variation: Option<u32>,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum)]
    scope: CliScope,
    #[arg(long, value_enum)]
    regime: CliRegime,
    #[arg(long, value_enum)]
    family: CliFamily,
    #[arg(long, value_enum, default_value = "gap")]
    labels: CliLabels,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the report cell JSON here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write pooled (prediction, label) pairs as CSV.
    #[arg(long)]
    calibration: Option<PathBuf>,
    /// Skip recording the headline metrics into the run manifest.
    #[arg(long)]
    no_manifest_update: bool,
}

#[derive(Args)]
struct ExportAnalysisArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Also write minimal SVG scatters into this directory.
    #[arg(long)]
    svg: Option<PathBuf>,
}

#[derive(Args)]
struct ReportArgs {
    #[arg(long)]
    run: PathBuf,
    #[arg(long, value_enum, default_value = "gap")]
    labels: CliLabels,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Write the table here as well as stdout.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Write all report cells as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
}

fn main() {
    let cli = Cli::parse();
    if let Err(e) = run(cli) {
        eprintln!("error: {e:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.cmd {
        Cmd::GenDatasets(args) => gen_datasets(args),
        Cmd::SampleHparams(args) => sample_hparams(args),
        Cmd::TrainNets(args) => train_nets(args),
        Cmd::ExtractSignatures(args) => extract_signatures(args),
        Cmd::TrainGgp(args) => train_ggp(args),
        Cmd::Evaluate(args) => evaluate(args),
        Cmd::ExportAnalysis(args) => export_analysis(args),
        Cmd::Report(args) => report(args),
    }
}

fn parse_spec(text: &str) -> Result<SpiralSpec> {
    let (mut k, mut sigma, mut m, mut seed) = (None, None, None, None);
    for part in text.split(',') {
        let (key, value) = part
            .split_once('=')
            .with_context(|| format!("expected key=value, got {part:?}"))?;
        match key.trim() {
            "k" => k = Some(value.trim().parse().context("k")?),
            "sigma" => sigma = Some(value.trim().parse().context("sigma")?),
            "m" => m = Some(value.trim().parse().context("m")?),
            "seed" => seed = Some(value.trim().parse().context("seed")?),
            other => bail!("unknown spec key {other:?} (expected k, sigma, m, seed)"),
        }
    }
    Ok(SpiralSpec::new(
        k.context("spec is missing k")?,
        sigma.context("spec is missing sigma")?,
        m.context("spec is missing m")?,
        seed.context("spec is missing seed")?,
    ))
}

fn spec_file_name(spec: &SpiralSpec, purpose: Purpose) -> String {
    let tag = match purpose {
        Purpose::Train => "train",
        Purpose::Test => "test",
    };
    format!(
        "spiral_m{}_k{}_sigma{}_seed{}_{tag}.jsonl",
        spec.num_train, spec.loops, spec.noise_sigma, spec.data_seed
    )
}

fn gen_datasets(args: GenDatasetsArgs) -> Result<()> {
    let purpose = match args.purpose {
        CliPurpose::Train => Purpose::Train,
        CliPurpose::Test => Purpose::Test,
    };
    let specs = match (&args.preset, &args.spec) {
        (Some(name), None) if name == "paper" => spiral::paper_preset_specs(),
        (Some(name), None) => bail!("unknown preset {name:?} (expected \"paper\")"),
        (None, Some(text)) => vec![parse_spec(text)?],
        _ => bail!("pass exactly one of --preset or --spec"),
    };
    std::fs::create_dir_all(&args.out)?;
    for spec in &specs {
        let count = args.count.unwrap_or(match purpose {
            Purpose::Train => spec.num_train,
            Purpose::Test => 10_000,
        });
        let data = spiral::generate(spec, count, purpose)?;
        let path = args.out.join(spec_file_name(spec, purpose));
        let file = std::fs::File::create(&path)?;
        data.write_jsonl(std::io::BufWriter::new(file))?;
    }
    println!("wrote {} dataset file(s) to {}", specs.len(), args.out.display());
    Ok(())
}

fn sample_hparams(args: SampleHparamsArgs) -> Result<()> {
    let hparams = pipeline::sample_hparams(args.count, args.seed)?;
    let text = serde_json::to_string_pretty(&hparams)?;
    match args.out {
        Some(path) => std::fs::write(&path, text)?,
        None => println!("{text}"),
    }
    Ok(())
}

fn parse_list<T: std::str::FromStr>(text: &str, what: &str) -> Result<Vec<T>>
where
    T::Err: std::fmt::Display,
{
    text.split(',')
        .map(|p| p.trim().parse::<T>().map_err(|e| anyhow::anyhow!("{what}: {e}")))
        .collect()
}

fn train_nets(args: TrainNetsArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => RunConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => match args.preset.as_str() {
            "desk" => RunConfig::desk(),
            "paper" => RunConfig::paper(),
            other => bail!("unknown preset {other:?} (expected \"desk\" or \"paper\")"),
        },
    };
    if let Some(v) = args.root_seed {
        config.root_seed = v;
    }
    if let Some(v) = args.workers {
        config.workers = v;
    }
    if let Some(v) = args.hparam_count {
        config.hparam_count = v;
    }
    if let Some(v) = args.hparam_seed {
        config.hparam_seed = v;
    }
    if let Some(v) = args.steps {
        config.train_steps = v;
    }
    if let Some(v) = args.test_size {
        config.test_size = v;
    }
    if let Some(v) = args.lambda_dependent {
        config.lambda_dataset_dependent = v;
    }
    if let Some(v) = args.lambda_independent {
        config.lambda_dataset_independent = v;
    }
    if args.checkpoints {
        config.checkpoint_weights = true;
    }
    if let Some(t) = &args.loops {
        config.grid.loops = parse_list(t, "loops")?;
        config.preset = "custom".to_string();
    }
    if let Some(t) = &args.sigmas {
        config.grid.noise_sigma = parse_list(t, "sigmas")?;
        config.preset = "custom".to_string();
    }
    if let Some(t) = &args.sizes {
        config.grid.num_train = parse_list(t, "sizes")?;
        config.preset = "custom".to_string();
    }
    if let Some(t) = &args.seeds {
        config.grid.data_seeds = parse_list(t, "seeds")?;
        config.preset = "custom".to_string();
    }

    eprintln!(
        "sweep: {} units ({} datasets x {} configurations), {} steps each",
        config.unit_count(),
        config.dataset_specs().len(),
        config.hparam_count,
        config.train_steps
    );
    let manifest = pipeline::run_sweep(&config, &args.out)?;
    println!(
        "completed {}/{} units ({} diverged, {} failed) -> {}",
        manifest.completed,
        manifest.total_units,
        manifest.diverged,
        manifest.failed.len(),
        args.out.display()
    );
    Ok(())
}

fn extract_signatures(args: ExtractSignaturesArgs) -> Result<()> {
    let manifest = pipeline::reextract(&args.run, args.lambda)?;
    println!(
        "extracted at lambda {}; record files: {:?}",
        args.lambda,
        manifest.record_files.values().collect::<Vec<_>>()
    );
    Ok(())
}

fn train_ggp(args: TrainGgpArgs) -> Result<()> {
    let store = RunStore::open(&args.run)?;
    let family: Family = args.family.into();
    let scope: Scope = args.scope.into();
    let lambda = lambda_for(family, scope, &store.manifest.config);
    let records = store.records_for(lambda)?;
    let mut examples = examples_from_records(records, args.labels.into());
    match (scope, args.variation) {
        (Scope::PerDataset, Some(v)) => examples.retain(|e| e.variation_id == v),
        (Scope::PerDataset, None) => {
            bail!("per-dataset scope trains one model per variation; pass --variation")
        }
        (Scope::SingleModel, _) => {}
    }
    if examples.is_empty() {
        bail!("no usable examples (is the variation id valid?)");
    }
    let model = ggp::fit_family(&examples, family, scope.task_mode(), args.seed)?;
    let text = serde_json::to_string(&model)?;
    std::fs::write(&args.out, text)?;
    println!(
        "fitted {family} model on {} examples (lambda {lambda}) -> {}",
        examples.len(),
        args.out.display()
    );
    Ok(())
}

fn write_calibration(path: &Path, outcome: &gappred_core::eval::EvalOutcome) -> Result<()> {
    let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "prediction,label")?;
    for c in &outcome.calibration {
        writeln!(w, "{},{}", c.prediction, c.label)?;
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let mut store = RunStore::open(&args.run)?;
    let outcome = store.evaluate_cell(
        args.scope.into(),
        args.regime.into(),
        args.family.into(),
        args.labels.into(),
        args.seed,
    )?;
    let text = serde_json::to_string_pretty(&outcome.report)?;
    println!("{text}");
    if let Some(path) = &args.out {
        std::fs::write(path, &text)?;
    }
    if let Some(path) = &args.calibration {
        write_calibration(path, &outcome)?;
    }
    if !args.no_manifest_update {
        store.record_metric(&outcome.report)?;
    }
    Ok(())
}

fn export_analysis(args: ExportAnalysisArgs) -> Result<()> {
    let store = RunStore::open(&args.run)?;
    let lambda = store.manifest.lambdas.first().copied().context("run has no record files")?;
    let records = store.records_for(lambda)?;
    let file = std::fs::File::create(&args.out)?;
    let rows = pipeline::export_analysis(records, std::io::BufWriter::new(file))?;
    println!("wrote {rows} rows to {}", args.out.display());
    if let Some(dir) = &args.svg {
        let paths = pipeline::write_scatter_svgs(records, dir)?;
        println!("wrote {} scatter plot(s) to {}", paths.len(), dir.display());
    }
    Ok(())
}

fn report(args: ReportArgs) -> Result<()> {
    let mut store = RunStore::open(&args.run)?;
    let label_mode: LabelMode = args.labels.into();
    let reports = pipeline::run_report(&store, label_mode, args.seed)?;
    for r in &reports {
        store.record_metric(r)?;
    }
    let table = pipeline::format_table(&reports, label_mode, store.diverged_count());
    println!("{table}");
    if let Some(path) = &args.out {
        std::fs::write(path, &table)?;
    }
    if let Some(path) = &args.json {
        std::fs::write(path, serde_json::to_string_pretty(&reports)?)?;
    }
    Ok(())
}
