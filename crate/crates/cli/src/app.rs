//! Argument parsing and the command implementations.

use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use compactformer::bench::{aggregate, best_per_signal, run_grid, RunResult};
use compactformer::dynsys::{simulate_lorenz, simulate_vdp, System};
use compactformer::koopman::run_koopformer;
use compactformer::models::{Family, Variant};
use compactformer::signals::SignalId;
use serde::Serialize;

use crate::config::RunConfig;
use crate::output::{write_atomic, Artifacts};
use crate::report;

#[derive(Debug, Parser)]
#[command(name = "compactformer", version, about = "Compact Transformer forecasting benchmarks and the Deep Koopformer")]
pub struct Cli {
    /// Base seed for every random draw.
    #[arg(long, global = true, env = "COMPACTFORMER_SEED")]
    pub seed: Option<u64>,
    /// JSON run configuration (`config_version: 1`).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Benchmark signals.
    #[command(subcommand)]
    Signals(SignalsCmd),
    /// The forecasting grid.
    #[command(subcommand)]
    Bench(BenchCmd),
    /// Best (variant, P, H) per signal from a results CSV.
    BestTable(BestTableArgs),
    /// The Deep Koopformer.
    #[command(subcommand)]
    Koopformer(KoopCmd),
    /// Noisy dynamical systems.
    #[command(subcommand)]
    Dynsys(DynsysCmd),
}

#[derive(Debug, Subcommand)]
pub enum SignalsCmd {
    /// Write normalized signals as `t,value` CSV files.
    Gen(SignalsGenArgs),
}

#[derive(Debug, Args)]
pub struct SignalsGenArgs {
    /// Signal id, or `all`.
    #[arg(long)]
    pub id: String,
    /// Apply the noise model before normalizing.
    #[arg(long)]
    pub noisy: bool,
    /// Series length (default 500).
    #[arg(long)]
    pub len: Option<usize>,
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum BenchCmd {
    /// Train and evaluate every grid cell.
    Run(BenchRunArgs),
    /// Rebuild aggregate tables and heatmaps from a results CSV.
    Aggregate(BenchAggregateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Regime {
    Clean,
    Noisy,
    Both,
}

#[derive(Debug, Args)]
pub struct BenchRunArgs {
    /// Comma-separated families (patchtst, informer, autoformer).
    #[arg(long, value_delimiter = ',')]
    pub families: Option<Vec<String>>,
    /// Comma-separated variants (minimal, standard, full).
    #[arg(long, value_delimiter = ',')]
    pub variants: Option<Vec<String>>,
    /// Comma-separated signal ids.
    #[arg(long, value_delimiter = ',')]
    pub signals: Option<Vec<String>>,
    #[arg(long, value_delimiter = ',')]
    pub patches: Option<Vec<usize>>,
    #[arg(long, value_delimiter = ',')]
    pub horizons: Option<Vec<usize>>,
    #[arg(long, value_enum)]
    pub regime: Option<Regime>,
    #[arg(long)]
    pub clean_epochs: Option<usize>,
    #[arg(long)]
    pub noisy_epochs: Option<usize>,
    /// Worker threads; 1 trains cells one after another.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Share one color scale across all heatmaps.
    #[arg(long)]
    pub global_scale: bool,
    /// Record per-cell wall time; without it `wall_ms` is 0 so reruns are
    /// byte-identical.
    #[arg(long)]
    pub wall_clock: bool,
    #[arg(long, default_value = "bench_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BenchAggregateArgs {
    #[arg(long)]
    pub results: PathBuf,
    #[arg(long)]
    pub global_scale: bool,
    #[arg(long, default_value = "bench_out")]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BestTableArgs {
    #[arg(long)]
    pub results: PathBuf,
    /// Restrict to one family.
    #[arg(long)]
    pub family: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
pub enum KoopCmd {
    /// Train on a simulated trajectory and write loss, forecast and
    /// spectral-trace CSVs.
    Train(KoopTrainArgs),
}

#[derive(Debug, Args)]
pub struct KoopTrainArgs {
    /// vdp or lorenz.
    #[arg(long)]
    pub system: String,
    /// patchtst, informer or autoformer.
    #[arg(long)]
    pub backbone: Option<String>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub patch: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    #[arg(long, default_value = "koopformer_out")]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum DynsysCmd {
    /// Write a trajectory as `t,x1,x2[,x3]`.
    Simulate(DynsysArgs),
}

#[derive(Debug, Args)]
pub struct DynsysArgs {
    /// vdp or lorenz.
    #[arg(long)]
    pub system: String,
    #[arg(long)]
    pub noise_sigma: Option<f64>,
    #[arg(long)]
    pub out: PathBuf,
}

/// How a command finished; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Status {
    Success,
    /// Some grid cells failed; their coordinates are in `failures.csv`.
    Partial,
}

impl Status {
    pub fn code(self) -> i32 {
        match self {
            Status::Success => 0,
            Status::Partial => 2,
        }
    }
}

fn parse_list<T: FromStr>(items: &[String]) -> Result<Vec<T>>
where
    T::Err: std::error::Error + Send + Sync + 'static,
{
    items.iter().map(|s| Ok(s.trim().parse::<T>()?)).collect()
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        Some(p) => RunConfig::load(p),
        None => Ok(RunConfig::default()),
    }
}

pub fn run(cli: Cli) -> Result<Status> {
    let cfg = load_config(cli.config.as_deref())?;
    match cli.command {
        Command::Signals(SignalsCmd::Gen(a)) => signals_gen(cfg, cli.seed, a),
        Command::Bench(BenchCmd::Run(a)) => bench_run(cfg, cli.seed, a),
        Command::Bench(BenchCmd::Aggregate(a)) => bench_aggregate(a),
        Command::BestTable(a) => best_table(a),
        Command::Koopformer(KoopCmd::Train(a)) => koopformer_train(cfg, cli.seed, a),
        Command::Dynsys(DynsysCmd::Simulate(a)) => dynsys_simulate(cfg, cli.seed, a),
    }
}

fn signals_gen(cfg: RunConfig, seed: Option<u64>, a: SignalsGenArgs) -> Result<Status> {
    let ids = if a.id == "all" {
        SignalId::ALL.to_vec()
    } else {
        vec![a.id.parse::<SignalId>()?]
    };
    let mut grid = cfg.grid;
    if let Some(s) = seed {
        grid.seed = s;
    }
    if let Some(len) = a.len {
        grid.series_len = len;
    }
    let mut out = Artifacts::default();
    for id in ids {
        let values = grid.series_for(id, a.noisy)?;
        out.add(format!("{}.csv", id.name()), report::signal_csv(&values));
    }
    for p in out.commit(&a.out)? {
        println!("{}", p.display());
    }
    Ok(Status::Success)
}

fn bench_run(cfg: RunConfig, seed: Option<u64>, a: BenchRunArgs) -> Result<Status> {
    let mut spec = cfg.grid.clone();
    if let Some(s) = seed {
        spec.seed = s;
    }
    if let Some(v) = &a.families {
        spec.families = parse_list::<Family>(v)?;
    }
    if let Some(v) = &a.variants {
        spec.variants = parse_list::<Variant>(v)?;
    }
    if let Some(v) = &a.signals {
        spec.signals = parse_list::<SignalId>(v)?;
    }
    if let Some(v) = &a.patches {
        spec.patch_lengths = v.clone();
    }
    if let Some(v) = &a.horizons {
        spec.horizons = v.clone();
    }
    if let Some(r) = a.regime {
        spec.regimes = match r {
            Regime::Clean => vec![false],
            Regime::Noisy => vec![true],
            Regime::Both => vec![false, true],
        };
    }
    if let Some(e) = a.clean_epochs {
        spec.clean_epochs = e;
    }
    if let Some(e) = a.noisy_epochs {
        spec.noisy_epochs = e;
    }
    if a.jobs == 0 {
        bail!("--jobs must be at least 1");
    }
    spec.validate()?;
    // Fail on an unusable output directory before hours of training.
    std::fs::create_dir_all(&a.out).with_context(|| format!("cannot create output directory {}", a.out.display()))?;
    let probe = tempfile::NamedTempFile::new_in(&a.out)
        .with_context(|| format!("output directory {} is not writable", a.out.display()))?;
    drop(probe);

    eprintln!("running {} cells with {} job(s)", spec.cells().len(), a.jobs);
    let mut outcome = run_grid(&spec, a.jobs)?;
    if !a.wall_clock {
        outcome.results.iter_mut().for_each(|r| r.wall_ms = 0);
    }
    let mut art = Artifacts::default();
    art.add("results.csv", report::results_csv(&outcome.results));
    add_aggregates(&mut art, &outcome.results, a.global_scale);
    art.add("best_per_signal.csv", report::best_csv(&best_per_signal(&outcome.results)));
    let resolved = RunConfig { grid: spec, ..cfg };
    art.add("run_config.json", resolved.to_json() + "\n");
    if !outcome.failures.is_empty() {
        let mut text = String::from("signal,family,variant,patch,horizon,noise,error\n");
        for f in &outcome.failures {
            let c = f.cell;
            text.push_str(&format!(
                "{},{},{},{},{},{},\"{}\"\n",
                c.signal.name(),
                c.family,
                c.variant,
                c.patch,
                c.horizon,
                c.noisy,
                f.message.replace('"', "'")
            ));
        }
        art.add("failures.csv", text);
    }
    art.commit(&a.out)?;
    println!(
        "{} results, {} failures written to {}",
        outcome.results.len(),
        outcome.failures.len(),
        a.out.display()
    );
    Ok(if outcome.failures.is_empty() {
        Status::Success
    } else {
        Status::Partial
    })
}

/// Aggregate CSVs (one per regime) and heatmap SVGs.
fn add_aggregates(art: &mut Artifacts, results: &[RunResult], global_scale: bool) {
    let agg = aggregate(results);
    if !agg.incomplete.is_empty() {
        eprintln!("warning: {} aggregate cells average fewer signals than the rest", agg.incomplete.len());
    }
    for noise in [false, true] {
        let rows: Vec<_> = agg.rows.iter().copied().filter(|r| r.key.noise == noise).collect();
        if !rows.is_empty() {
            art.add(format!("aggregate_{}.csv", report::regime(noise)), report::aggregate_csv(&rows));
        }
    }
    for h in report::HeatmapArtifact::build(agg.heatmaps(), global_scale) {
        art.add(format!("{}.svg", h.file_stem()), h.to_svg());
    }
}

fn read_results(path: &Path) -> Result<Vec<RunResult>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))?;
    report::parse_results_csv(&text).with_context(|| format!("in {}", path.display()))
}

fn bench_aggregate(a: BenchAggregateArgs) -> Result<Status> {
    let results = read_results(&a.results)?;
    let mut art = Artifacts::default();
    add_aggregates(&mut art, &results, a.global_scale);
    for p in art.commit(&a.out)? {
        println!("{}", p.display());
    }
    Ok(Status::Success)
}

fn best_table(a: BestTableArgs) -> Result<Status> {
    let mut results = read_results(&a.results)?;
    if let Some(f) = &a.family {
        let family: Family = f.parse()?;
        results.retain(|r| r.family == family);
    }
    let text = report::best_csv(&best_per_signal(&results));
    match &a.out {
        Some(p) => write_atomic(p, &text)?,
        None => print!("{text}"),
    }
    Ok(Status::Success)
}

#[derive(Serialize)]
struct KoopSummary {
    system: System,
    backbone: Family,
    seed: u64,
    epochs: usize,
    train_total_before: f64,
    train_total_after: f64,
    reduction: f64,
    test_rmse: f64,
    max_singular_value: f64,
}

fn koopformer_train(cfg: RunConfig, seed: Option<u64>, a: KoopTrainArgs) -> Result<Status> {
    let system: System = a.system.parse()?;
    let mut settings = cfg.koopformer;
    if let Some(b) = &a.backbone {
        settings.backbone = b.parse()?;
    }
    let per = match system {
        System::Vdp => &mut settings.vdp,
        System::Lorenz => &mut settings.lorenz,
    };
    per.epochs = a.epochs.or(per.epochs);
    per.patch = a.patch.or(per.patch);
    per.batch_size = a.batch_size.or(per.batch_size);
    let spec = settings.spec(system, seed.unwrap_or(0));
    spec.model.validate()?;
    let run = run_koopformer(&spec)?;
    let max_s = run.log.iter().map(|e| e.max_singular_value).fold(0.0, f64::max);
    let summary = KoopSummary {
        system,
        backbone: spec.model.backbone,
        seed: spec.seed,
        epochs: spec.train.epochs,
        train_total_before: run.train_before.total,
        train_total_after: run.train_after.total,
        reduction: run.train_before.total / run.train_after.total,
        test_rmse: run.test.rmse,
        max_singular_value: max_s,
    };
    let mut art = Artifacts::default();
    art.add("loss.csv", report::loss_csv(&run.log));
    art.add("forecast.csv", report::forecast_csv(&run.forecast, &run.truth));
    art.add("spectral_trace.csv", report::spectral_csv(&run.log));
    art.add("summary.json", serde_json::to_string_pretty(&summary)? + "\n");
    art.commit(&a.out)?;
    println!(
        "{system} {}: train loss {:.6e} -> {:.6e} ({:.1}x), test RMSE {:.6}, max singular value {:.6}",
        summary.backbone, summary.train_total_before, summary.train_total_after, summary.reduction, summary.test_rmse, max_s
    );
    Ok(Status::Success)
}

fn dynsys_simulate(cfg: RunConfig, seed: Option<u64>, a: DynsysArgs) -> Result<Status> {
    let system: System = a.system.parse()?;
    let traj = match system {
        System::Vdp => {
            let mut c = cfg.dynsys.vdp;
            c.seed = seed.unwrap_or(c.seed);
            c.noise_sigma = a.noise_sigma.unwrap_or(c.noise_sigma);
            simulate_vdp(&c)?
        }
        System::Lorenz => {
            let mut c = cfg.dynsys.lorenz;
            c.seed = seed.unwrap_or(c.seed);
            c.noise_sigma = a.noise_sigma.unwrap_or(c.noise_sigma);
            simulate_lorenz(&c)?
        }
    };
    if let Some(dir) = a.out.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    }
    write_atomic(&a.out, &report::trajectory_csv(&traj))?;
    println!("{}", a.out.display());
    Ok(Status::Success)
}
