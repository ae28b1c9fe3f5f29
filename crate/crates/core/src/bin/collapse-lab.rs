use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use collapse_lab::dataset::Dataset;
use collapse_lab::error::{Error, Result};
use collapse_lab::experiment::{run_experiment, run_stages, ExperimentConfig, SeesawSection, Stage};
use collapse_lab::rng::Seed;
use collapse_lab::seesaw::{seesaw_table, write_seesaw_csv};
use collapse_lab::tid::{tid_report, TidConvention, TidOptions, DEFAULT_SUBSET};

#[derive(Parser)]
#[command(name = "collapse-lab", version, about = "Diffusion sampling experiments on synthetic data")]
struct Cli {
    /// Experiment config (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the config's global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory (overrides the config's `out_dir`).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Sampler worker threads; results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Only print warnings and errors.
    #[arg(short, long, global = true)]
    quiet: bool,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the training dataset.
    Gen,
    /// Generate the dataset and train every model.
    Train,
    /// Sample every model with every sampler (needs trained checkpoints).
    Sample,
    /// Tail index difference, from the config's artifacts or two CSV files.
    Tid(TidArgs),
    /// Velocity MAE, error covariance, density evolution, velocity grids.
    Diagnose,
    /// Closed-form see-saw losses.
    Seesaw {
        #[arg(long)]
        p_max: Option<usize>,
    },
    /// Every stage the config enables.
    Run,
}

#[derive(clap::Args)]
struct TidArgs {
    /// Reference dataset CSV; with --sampled, skips the config.
    #[arg(long, requires = "sampled")]
    train: Option<PathBuf>,
    #[arg(long, requires = "train")]
    sampled: Option<PathBuf>,
    /// Comma-separated neighborhood radii.
    #[arg(long, value_delimiter = ',')]
    eps: Vec<f64>,
    #[arg(long, default_value_t = DEFAULT_SUBSET)]
    subset: usize,
    /// Measure distances along one coordinate.
    #[arg(long)]
    dim: Option<usize>,
    /// `reciprocal` or `raw`.
    #[arg(long, default_value = "reciprocal")]
    convention: String,
    #[arg(long)]
    top_k: Option<usize>,
}

fn config_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Config(vec![msg.into()]))
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let Some(path) = &cli.config else {
        return config_err("--config: required for this subcommand");
    };
    let mut cfg = ExperimentConfig::from_path(path)?;
    if let Some(s) = cli.seed {
        cfg.seed = Seed(s);
    }
    if let Some(o) = &cli.out {
        cfg.out_dir = Some(o.clone());
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// `dir/name` when an output directory is given, stdout otherwise.
fn sink(out: Option<&Path>, name: &str) -> Result<Box<dyn Write>> {
    Ok(match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            Box::new(BufWriter::new(File::create(dir.join(name))?))
        }
        None => Box::new(io::stdout().lock()),
    })
}

fn standalone_tid(cli: &Cli, a: &TidArgs, train: &Path, sampled: &Path) -> Result<()> {
    let mut probs = Vec::new();
    if a.eps.is_empty() {
        probs.push("--eps: at least one radius is required".to_string());
    }
    let convention = match a.convention.as_str() {
        "reciprocal" => TidConvention::Reciprocal,
        "raw" => TidConvention::Raw,
        other => {
            probs.push(format!("--convention: expected reciprocal or raw, got {other:?}"));
            TidConvention::Reciprocal
        }
    };
    let opts = TidOptions {
        subset: a.subset,
        seed: Seed(cli.seed.unwrap_or(0)),
        dim: a.dim,
        convention,
        top_k: a.top_k,
    };
    probs.extend(opts.problems().into_iter().map(|p| format!("--{}", p.replace('_', "-"))));
    if !probs.is_empty() {
        return Err(Error::Config(probs));
    }
    let read = |p: &Path| -> Result<Dataset> { Dataset::read_csv(File::open(p)?) };
    let report = tid_report(&read(train)?, &read(sampled)?, &a.eps, &opts)?;
    let mut w = sink(cli.out.as_deref(), "tid.csv")?;
    report.write_csv(&mut w)?;
    w.flush()?;
    Ok(())
}

fn run(cli: &Cli) -> Result<()> {
    let stages = match &cli.cmd {
        Cmd::Gen => vec![Stage::Gen],
        Cmd::Train => vec![Stage::Gen, Stage::Train],
        Cmd::Sample => vec![Stage::Sample],
        Cmd::Diagnose => vec![Stage::Diagnose],
        Cmd::Tid(a) => {
            if let (Some(t), Some(s)) = (&a.train, &a.sampled) {
                return standalone_tid(cli, a, t, s);
            }
            vec![Stage::Tid]
        }
        Cmd::Seesaw { p_max } => {
            if cli.config.is_none() {
                let rows = seesaw_table(p_max.unwrap_or(20))?;
                let mut w = sink(cli.out.as_deref(), "seesaw.csv")?;
                write_seesaw_csv(&rows, &mut w)?;
                w.flush()?;
                return Ok(());
            }
            let mut cfg = load_config(cli)?;
            if let Some(p) = p_max {
                cfg.seesaw = Some(SeesawSection { p_max: *p });
            }
            run_stages(&cfg, &[Stage::Seesaw])?;
            return Ok(());
        }
        Cmd::Run => {
            let cfg = load_config(cli)?;
            let m = run_experiment(&cfg)?;
            log::info!("wrote {} files in {:.1}s", m.files.len(), m.wall_clock_s);
            return Ok(());
        }
    };
    let cfg = load_config(cli)?;
    run_stages(&cfg, &stages)?;
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let level = if cli.quiet { "warn" } else { "info" };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level))
        .format_timestamp(None)
        .init();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            match &e {
                Error::Config(list) => {
                    eprintln!("config error:");
                    for p in list {
                        eprintln!("  {p}");
                    }
                }
                other => eprintln!("error: {other}"),
            }
            ExitCode::from(if e.is_config() { 2 } else { 3 })
        }
    }
}
