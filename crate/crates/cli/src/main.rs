use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use ellipshrink::experiment::{
    render_identity, render_risk_csv, run_check, run_risk, with_threads, IdentityParams, RawConfig,
};
use ellipshrink::posterior::PosteriorT;
use ellipshrink::risk::stein_identity_check;
use ellipshrink::{sufficient_stats, Dataset, Error};
use nalgebra::DVector;

/// Shrinkage estimation of a location vector under elliptical errors.
#[derive(Debug, Parser)]
#[command(name = "ellipshrink", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Monte Carlo risk study driven by a config file.
    Risk(RiskArgs),
    /// Check a shrinkage function against the minimax and dominance conditions.
    Check(CheckArgs),
    /// Monte Carlo check of the Stein-type identities.
    Identity(IdentityArgs),
    /// Posterior log-density of the mean at given points.
    Posterior(PosteriorArgs),
}

#[derive(Debug, Args)]
struct RiskArgs {
    /// Config file of `key = value` lines.
    config: PathBuf,
    #[arg(long)]
    p: Option<String>,
    #[arg(long = "N")]
    n: Option<String>,
    #[arg(long)]
    sigma: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    theta: Option<String>,
    #[arg(long, allow_hyphen_values = true)]
    mixing: Option<String>,
    #[arg(long)]
    estimators: Option<String>,
    #[arg(long)]
    reps: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    #[arg(long)]
    compare: Option<String>,
    /// Output CSV path; stdout when absent.
    #[arg(long)]
    out: Option<String>,
    /// Worker threads (default: all cores).
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct CheckArgs {
    /// Shrinkage function in the estimator grammar, e.g. `baranchik:at,c=1`.
    #[arg(long = "fn")]
    function: String,
    #[arg(long)]
    p: usize,
    #[arg(long = "N")]
    n: usize,
    /// Seed for the reference sample of the integrability checks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Emit the reports as CSV instead of text.
    #[arg(long)]
    csv: bool,
}

#[derive(Debug, Args)]
struct IdentityArgs {
    #[arg(long, default_value_t = 5)]
    p: usize,
    /// Wishart degrees of freedom.
    #[arg(long, default_value_t = 19)]
    n: usize,
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    #[arg(long, default_value_t = 1.0)]
    beta: f64,
    /// θ = theta_norm · e₁.
    #[arg(long = "theta-norm", default_value_t = 0.0)]
    theta_norm: f64,
    #[arg(long = "fn", default_value = "baranchik:at,c=1")]
    function: String,
    /// Sample size for function specs that depend on it.
    #[arg(long = "N", default_value_t = 20)]
    sample_size: usize,
    #[arg(long, default_value_t = 200_000)]
    reps: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Multiplies the right-hand-side constants (testing hook).
    #[arg(long, default_value_t = 1.0)]
    perturb: f64,
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Debug, Args)]
struct PosteriorArgs {
    /// Headerless CSV, one observation per line.
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated point; repeatable.
    #[arg(long, required = true, allow_hyphen_values = true)]
    at: Vec<String>,
}

enum Failure {
    Usage(Error),
    Runtime(Error),
}

type Outcome = Result<ExitCode, Failure>;

fn usage<T>(r: Result<T, Error>) -> Result<T, Failure> {
    r.map_err(Failure::Usage)
}

fn runtime<T>(r: Result<T, Error>) -> Result<T, Failure> {
    r.map_err(Failure::Runtime)
}

fn write_stdout(text: &str) -> Result<(), Failure> {
    let mut out = std::io::stdout().lock();
    runtime(out.write_all(text.as_bytes()).map_err(|e| Error::Io {
        path: "<stdout>".into(),
        source: e,
    }))
}

fn cmd_risk(args: RiskArgs) -> Outcome {
    let mut raw = usage(RawConfig::from_path(&args.config))?;
    let overrides = [
        ("p", args.p),
        ("N", args.n),
        ("sigma", args.sigma),
        ("theta", args.theta),
        ("mixing", args.mixing),
        ("estimators", args.estimators),
        ("reps", args.reps),
        ("seed", args.seed),
        ("compare", args.compare),
        ("out", args.out),
    ];
    for (key, value) in overrides {
        if let Some(v) = value {
            usage(raw.set(key, v))?;
        }
    }
    let cfg = usage(raw.build())?;
    let rows = runtime(with_threads(args.threads, || run_risk(&cfg)).and_then(|r| r))?;
    let text = runtime(render_risk_csv(&cfg, &rows))?;
    match &cfg.out {
        Some(path) => runtime(std::fs::write(path, text).map_err(|e| Error::Io {
            path: path.clone(),
            source: e,
        }))?,
        None => write_stdout(&text)?,
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_check(args: CheckArgs) -> Outcome {
    let outcome = usage(run_check(&args.function, args.p, args.n, args.seed))?;
    let text = if args.csv {
        runtime(outcome.render_csv())?
    } else {
        outcome.render_text()
    };
    write_stdout(&text)?;
    Ok(if outcome.has_failure() {
        ExitCode::from(1)
    } else {
        ExitCode::SUCCESS
    })
}

fn cmd_identity(args: IdentityArgs) -> Outcome {
    let params = IdentityParams {
        p: args.p,
        n: args.n,
        alpha: args.alpha,
        beta: args.beta,
        theta_norm: args.theta_norm,
        function: args.function,
        sample_size: args.sample_size,
        reps: args.reps,
        seed: args.seed,
        perturb: args.perturb,
    };
    let setup = usage(params.setup())?;
    let report = runtime(with_threads(args.threads, || stein_identity_check(&setup)).and_then(|r| r))?;
    write_stdout(&render_identity(&params, &report))?;
    Ok(if report.pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(1)
    })
}

fn parse_point(text: &str, p: usize) -> Result<DVector<f64>, Error> {
    let values = text
        .split(',')
        .map(|t| t.trim().parse::<f64>())
        .collect::<Result<Vec<_>, _>>()
        .map_err(|e| Error::BadSpec {
            spec: text.to_string(),
            reason: e.to_string(),
        })?;
    if values.len() != p {
        return Err(Error::DimensionMismatch {
            expected: p,
            found: values.len(),
        });
    }
    Ok(DVector::from_vec(values))
}

fn cmd_posterior(args: PosteriorArgs) -> Outcome {
    let data = usage(Dataset::from_csv_path(&args.data))?;
    let points = usage(args.at.iter().map(|s| parse_point(s, data.p())).collect::<Result<Vec<_>, _>>())?;
    let post = runtime(sufficient_stats(&data).and_then(|s| PosteriorT::from_stats(&s)))?;
    let mut text: String = (1..=data.p()).map(|i| format!("x{i},")).collect();
    text += "log_density\n";
    for point in &points {
        let value = runtime(post.logpdf(point))?;
        for x in point.iter() {
            text += &format!("{x},");
        }
        text += &format!("{value:.16e}\n");
    }
    write_stdout(&text)?;
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Risk(args) => cmd_risk(args),
        Command::Check(args) => cmd_check(args),
        Command::Identity(args) => cmd_identity(args),
        Command::Posterior(args) => cmd_posterior(args),
    };
    match result {
        Ok(code) => code,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("runtime error: {e}");
            ExitCode::from(3)
        }
    }
}
