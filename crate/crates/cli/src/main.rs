use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use stbn::predictor::DEFAULT_MARKOV_ORDER;
use stbn::ranking::{format_cause_block, write_ranking_csv};
use stbn::{
    generate_synthetic_network, load_panel_csv, rank_lagged_variables, run_experiment,
    select_cause_nodes, split_chronological, train_markov_chain, train_stbn, ExperimentConfig,
    FitConfig, LagConfig, SavedPredictor, SyntheticSpec,
};

#[derive(Parser)]
#[command(name = "stbn", version, about = "Spatio-temporal Bayesian network traffic flow forecaster")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic hidden-source network panel.
    Synth(SynthArgs),
    /// Rank lagged candidate flows for one target site.
    Rank(RankArgs),
    /// Train a predictor and save it as JSON.
    Train(TrainArgs),
    /// One-step forecasts from a saved predictor.
    Forecast(ForecastArgs),
    /// Compare Random Walk, Markov Chain and STBN on a chronological split.
    Evaluate(EvaluateArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long, default_value_t = 10)]
    n_sites: usize,
    #[arg(long, default_value_t = 3)]
    n_sources: usize,
    #[arg(long, default_value_t = 2400)]
    length: usize,
    #[arg(long, default_value_t = 96)]
    steps_per_day: usize,
    #[arg(long, default_value_t = 1)]
    delay_min: usize,
    #[arg(long, default_value_t = 8)]
    delay_max: usize,
    #[arg(long, default_value_t = 0.5)]
    gain_min: f64,
    #[arg(long, default_value_t = 2.0)]
    gain_max: f64,
    #[arg(long, default_value_t = 15.0)]
    noise_std: f64,
    #[arg(long, default_value_t = 200.0)]
    base_level: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct LagArgs {
    /// Largest lag considered.
    #[arg(long, default_value_t = 100)]
    d: usize,
    /// Number of cause nodes.
    #[arg(long, default_value_t = 4)]
    k: usize,
}

impl LagArgs {
    fn config(&self) -> LagConfig {
        LagConfig { d: self.d, k: self.k }
    }
}

#[derive(Args)]
struct FitArgs {
    #[arg(long, default_value_t = 1)]
    k_min: usize,
    #[arg(long, default_value_t = 8)]
    k_max: usize,
    #[arg(long, default_value_t = 5)]
    restarts: usize,
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
    #[arg(long, default_value_t = 500)]
    max_iter: usize,
    #[arg(long, default_value_t = 1e-6)]
    reg_eps: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

impl FitArgs {
    fn config(&self) -> FitConfig {
        FitConfig {
            k_range: (self.k_min, self.k_max),
            restarts: self.restarts,
            tol: self.tol,
            max_iter: self.max_iter,
            reg_eps: self.reg_eps,
            seed: self.seed,
        }
    }
}

#[derive(Args)]
struct RankArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    target: String,
    #[command(flatten)]
    lag: LagArgs,
    /// Rank on the first N rows only.
    #[arg(long)]
    train_len: Option<usize>,
    #[arg(short, long)]
    output: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    #[arg(long)]
    panel: PathBuf,
    #[arg(long)]
    target: String,
    #[command(flatten)]
    lag: LagArgs,
    #[command(flatten)]
    fit: FitArgs,
    /// Train on the first N rows only.
    #[arg(long)]
    train_len: Option<usize>,
    /// Markov chain order for `--markov-output`.
    #[arg(long, default_value_t = DEFAULT_MARKOV_ORDER)]
    order: usize,
    #[arg(short, long)]
    output: PathBuf,
    /// Also train and save the Markov chain baseline here.
    #[arg(long)]
    markov_output: Option<PathBuf>,
}

#[derive(Args)]
struct ForecastArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    panel: PathBuf,
    /// First prediction index (defaults to the earliest index with full history).
    #[arg(long)]
    start: Option<i64>,
    /// One past the last prediction index (defaults to one past the panel end).
    #[arg(long)]
    end: Option<i64>,
    /// Output CSV; standard output when omitted.
    #[arg(short, long)]
    output: Option<PathBuf>,
}

#[derive(Args)]
struct EvaluateArgs {
    #[arg(long)]
    panel: PathBuf,
    /// Comma-separated target sites; defaults to the first five sites.
    #[arg(long, value_delimiter = ',')]
    targets: Vec<String>,
    #[command(flatten)]
    lag: LagArgs,
    #[command(flatten)]
    fit: FitArgs,
    #[arg(long, default_value_t = 2112)]
    train_len: usize,
    #[arg(long, default_value_t = DEFAULT_MARKOV_ORDER)]
    order: usize,
    /// Report CSV (`method,target,rmse`).
    #[arg(short, long)]
    output: PathBuf,
    /// Full report with configuration echo, as JSON.
    #[arg(long)]
    json: Option<PathBuf>,
    /// Directory for per-target `t,truth,rw,mc,stbn` dumps.
    #[arg(long)]
    dump_dir: Option<PathBuf>,
}

/// Flag values the underlying configs reject.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage<T>(result: stbn::Result<T>) -> Result<T> {
    result.map_err(|e| UsageError(e.to_string()).into())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Synth(args) => cmd_synth(args),
        Command::Rank(args) => cmd_rank(args),
        Command::Train(args) => cmd_train(args),
        Command::Forecast(args) => cmd_forecast(args),
        Command::Evaluate(args) => cmd_evaluate(args),
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("error: {err:#}");
            if err.is::<UsageError>() {
                ExitCode::from(2)
            } else {
                ExitCode::from(1)
            }
        }
    }
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    let file = File::create(path).with_context(|| format!("cannot create {}", path.display()))?;
    Ok(BufWriter::new(file))
}

fn load(path: &Path) -> Result<stbn::FlowPanel> {
    load_panel_csv(path).with_context(|| format!("cannot load panel {}", path.display()))
}

fn training_part(panel: stbn::FlowPanel, train_len: Option<usize>) -> Result<stbn::FlowPanel> {
    match train_len {
        Some(n) => Ok(split_chronological(&panel, n)?.0),
        None => Ok(panel),
    }
}

fn cmd_synth(args: SynthArgs) -> Result<()> {
    let spec = SyntheticSpec {
        n_sites: args.n_sites,
        n_sources: args.n_sources,
        length: args.length,
        steps_per_day: args.steps_per_day,
        delay_range: (args.delay_min, args.delay_max),
        gain_range: (args.gain_min, args.gain_max),
        noise_std: args.noise_std,
        base_level: args.base_level,
    };
    usage(spec.validate())?;
    let panel = generate_synthetic_network(&spec, args.seed)?;
    let mut out = create(&args.output)?;
    panel.write_csv(&mut out)?;
    out.flush()?;
    println!(
        "wrote {} rows x {} sites to {}",
        panel.len(),
        panel.n_sites(),
        args.output.display()
    );
    Ok(())
}

fn cmd_rank(args: RankArgs) -> Result<()> {
    let panel = load(&args.panel)?;
    let cfg = args.lag.config();
    usage(cfg.validate(panel.n_sites()))?;
    let train = training_part(panel, args.train_len)?;
    let ranking = rank_lagged_variables(&train, &args.target, &cfg)?;
    for skipped in &ranking.skipped {
        eprintln!("warning: {skipped} is constant over the window and was not scored");
    }
    let mut out = create(&args.output)?;
    write_ranking_csv(&ranking.entries, &mut out)?;
    out.flush()?;
    let nodes = select_cause_nodes(&ranking.entries, &args.target, cfg.k)?;
    print!("{}", format_cause_block(&nodes));
    Ok(())
}

fn cmd_train(args: TrainArgs) -> Result<()> {
    let panel = load(&args.panel)?;
    let lag = args.lag.config();
    let fit = args.fit.config();
    usage(lag.validate(panel.n_sites()))?;
    usage(fit.validate())?;
    let train = training_part(panel, args.train_len)?;

    let (predictor, report) = train_stbn(&train, &args.target, &lag, &fit)?;
    print!("{}", format_cause_block(&predictor.cause_nodes));
    println!(
        "mixture: K = {}, log-likelihood = {:.3}, BIC = {:.3}, {} iterations",
        report.chosen_k, report.final_loglik, report.bic, report.n_iter
    );
    SavedPredictor::Stbn(predictor).save(&args.output)?;

    if let Some(path) = &args.markov_output {
        let (markov, report) = train_markov_chain(&train, &args.target, args.order, &fit)?;
        println!("markov chain (order {}): K = {}", args.order, report.chosen_k);
        SavedPredictor::MarkovChain(markov).save(path)?;
    }
    Ok(())
}

fn cmd_forecast(args: ForecastArgs) -> Result<()> {
    let predictor = SavedPredictor::load(&args.model)
        .with_context(|| format!("cannot load predictor {}", args.model.display()))?;
    let panel = load(&args.panel)?;
    let origin = panel.origin_index();
    let start = args.start.unwrap_or(origin + predictor.max_lag() as i64);
    let end = args.end.unwrap_or(origin + panel.len() as i64 + 1);
    if start >= end {
        bail!(UsageError(format!("empty forecast range {start}..{end}")));
    }

    let mut out: Box<dyn Write> = match &args.output {
        Some(path) => Box::new(create(path)?),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    };
    writeln!(out, "t,forecast")?;
    for t in start..end {
        let value = predictor
            .forecast(&panel, t)
            .with_context(|| format!("forecast for {} at t = {t}", predictor.target_site()))?;
        writeln!(out, "{t},{value}")?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_evaluate(args: EvaluateArgs) -> Result<()> {
    let panel = load(&args.panel)?;
    let cfg = ExperimentConfig {
        lag: args.lag.config(),
        fit: args.fit.config(),
        markov_order: args.order,
        train_len: args.train_len,
    };
    usage(cfg.lag.validate(panel.n_sites()))?;
    usage(cfg.fit.validate())?;
    let targets = if args.targets.is_empty() {
        panel.site_ids().iter().take(5).cloned().collect()
    } else {
        args.targets
    };

    let report = run_experiment(&panel, &targets, &cfg)?;
    let mut out = create(&args.output)?;
    report.write_csv(&mut out)?;
    out.flush()?;
    if let Some(path) = &args.json {
        fs::write(path, serde_json::to_string_pretty(&report)?)?;
    }
    if let Some(dir) = &args.dump_dir {
        fs::create_dir_all(dir)?;
        for trace in &report.forecasts {
            let mut out = create(&dir.join(format!("forecast_{}.csv", trace.target)))?;
            trace.write_csv(&mut out)?;
            out.flush()?;
        }
    }
    println!("RMSE (veh/hr) over {} test points", report.n_test);
    print!("{}", report.format_table());
    Ok(())
}
