use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand};
use tgee_core::correlation::CorrKind;
use tgee_core::family::Family;
use tgee_core::inference::{sandwich, wald};
use tgee_core::io::{load_dataset, load_model, predict, save_dataset, save_model, write_predictions, write_tensor};
use tgee_core::penalty::Penalty;
use tgee_core::selection::{select_lambda, select_rank};
use tgee_core::sim::{prediction_metrics, run_bench, simulate, BenchConfig, ShapeKind, SimConfig};
use tgee_core::solver::{fit, FitConfig};

/// Tensor generalized estimating equations for longitudinal array covariates.
#[derive(Parser, Debug)]
#[command(name = "tgee", version, arg_required_else_help = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate a longitudinal dataset with a shaped 2-D coefficient signal.
    Simulate(SimulateArgs),
    /// Fit a tensor GEE model.
    Fit(FitArgs),
    /// Choose the CP rank by BIC under independence.
    SelectRank(SelectRankArgs),
    /// Choose the penalty level by validation loss.
    SelectLambda(SelectLambdaArgs),
    /// Predict responses of a dataset from a fitted model.
    Predict(PredictArgs),
    /// Sandwich standard errors and Wald intervals for the factor entries.
    Inference(InferenceArgs),
    /// Replicated simulation benchmark over sample sizes and working correlations.
    Bench(BenchArgs),
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[arg(long, default_value = "square")]
    shape: ShapeKind,
    #[arg(long, default_value_t = 500)]
    n: usize,
    #[arg(long, default_value_t = 4)]
    m: usize,
    #[arg(long, default_value_t = 5)]
    p0: usize,
    #[arg(long, default_value_t = 0.8)]
    rho: f64,
    #[arg(long, default_value_t = 1.0)]
    sigma2: f64,
    /// Correlation structure of the true errors.
    #[arg(long, default_value = "exchangeable")]
    truth_corr: CorrKind,
    /// Side length of the square coefficient grid.
    #[arg(long, default_value_t = 64)]
    grid: usize,
    #[arg(long, env = "TGEE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args, Debug, Clone)]
struct ModelArgs {
    #[arg(long, default_value_t = 1)]
    rank: usize,
    /// Overrides the family recorded in the dataset manifest.
    #[arg(long)]
    family: Option<Family>,
    #[arg(long, default_value = "independence")]
    corr: CorrKind,
    /// none, lasso, ridge, enet or scad.
    #[arg(long, default_value = "none")]
    penalty: String,
    #[arg(long, default_value_t = 1.5)]
    enet_alpha: f64,
    #[arg(long, default_value_t = 3.7)]
    scad_a: f64,
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, env = "TGEE_SEED", default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1)]
    restarts: usize,
}

#[derive(Args, Debug)]
struct FitArgs {
    #[arg(long)]
    data: PathBuf,
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 0.0)]
    lambda: f64,
    #[arg(long)]
    out: PathBuf,
    /// Also write the estimated coefficient tensor as CSV.
    #[arg(long)]
    tensor_out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct SelectRankArgs {
    #[arg(long)]
    data: PathBuf,
    /// A range `a:b` or a comma-separated list.
    #[arg(long, default_value = "1:5")]
    ranks: String,
    #[arg(long)]
    family: Option<Family>,
    #[arg(long, env = "TGEE_SEED", default_value_t = 0)]
    seed: u64,
}

#[derive(Args, Debug)]
struct SelectLambdaArgs {
    #[arg(long)]
    train: PathBuf,
    #[arg(long)]
    valid: PathBuf,
    /// Comma-separated penalty levels.
    #[arg(long, value_delimiter = ',', required = true)]
    grid: Vec<f64>,
    #[command(flatten)]
    model: ModelArgs,
}

#[derive(Args, Debug)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Output CSV; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Append an RMSE / correlation footer.
    #[arg(long)]
    metrics: bool,
}

#[derive(Args, Debug)]
struct InferenceArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    model: PathBuf,
    #[arg(long, default_value_t = 0.95)]
    level: f64,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args, Debug)]
struct BenchArgs {
    #[arg(long, default_value = "butterfly")]
    shape: ShapeKind,
    #[arg(long, value_delimiter = ',', default_value = "50,100,150")]
    n_list: Vec<usize>,
    #[arg(long, default_value_t = 10)]
    m: usize,
    #[arg(long, default_value_t = 100)]
    reps: usize,
    #[arg(long, value_delimiter = ',', default_value = "exchangeable,ar1,independence")]
    corr_list: Vec<CorrKind>,
    #[arg(long, default_value_t = 4)]
    rank: usize,
    #[arg(long, default_value_t = 1e-4)]
    tol: f64,
    #[arg(long, default_value_t = 100)]
    max_iter: usize,
    #[arg(long, env = "TGEE_SEED", default_value_t = 0)]
    seed: u64,
    /// Worker threads; 0 uses every core.
    #[arg(long, default_value_t = 0)]
    jobs: usize,
    #[arg(long)]
    out: Option<PathBuf>,
}

enum Failure {
    Usage(String),
    Runtime(anyhow::Error),
}

impl From<anyhow::Error> for Failure {
    fn from(e: anyhow::Error) -> Self {
        Failure::Runtime(e)
    }
}

impl From<tgee_core::TgeeError> for Failure {
    fn from(e: tgee_core::TgeeError) -> Self {
        Failure::Runtime(e.into())
    }
}

impl From<io::Error> for Failure {
    fn from(e: io::Error) -> Self {
        Failure::Runtime(e.into())
    }
}

type CliResult<T = ()> = Result<T, Failure>;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
                ExitCode::SUCCESS
            } else {
                ExitCode::from(1)
            };
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}

fn run(cmd: Command) -> CliResult {
    match cmd {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Fit(a) => cmd_fit(a),
        Command::SelectRank(a) => cmd_select_rank(a),
        Command::SelectLambda(a) => cmd_select_lambda(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Inference(a) => cmd_inference(a),
        Command::Bench(a) => cmd_bench(a),
    }
}

fn output(path: Option<&Path>) -> CliResult<Box<dyn Write>> {
    Ok(match path {
        Some(p) => Box::new(BufWriter::new(
            File::create(p).with_context(|| format!("cannot create {}", p.display()))?,
        )),
        None => Box::new(BufWriter::new(io::stdout().lock())),
    })
}

fn parse_penalty(a: &ModelArgs) -> CliResult<Penalty> {
    let p = match a.penalty.to_ascii_lowercase().as_str() {
        "none" => Penalty::None,
        "lasso" => Penalty::Lasso,
        "ridge" => Penalty::Ridge,
        "enet" => Penalty::Enet { alpha: a.enet_alpha },
        "scad" => Penalty::Scad { a: a.scad_a },
        other => return Err(Failure::Usage(format!("unknown penalty '{other}' (none, lasso, ridge, enet, scad)"))),
    };
    p.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(p)
}

fn fit_config(a: &ModelArgs, family: Family, lambda: f64) -> CliResult<FitConfig> {
    let penalty = parse_penalty(a)?;
    if penalty.is_none() && lambda > 0.0 {
        return Err(Failure::Usage(format!("--lambda {lambda} conflicts with --penalty none")));
    }
    let mut cfg = FitConfig::new(a.rank)
        .family(family)
        .corr(a.corr)
        .penalty(penalty, lambda)
        .seed(a.seed)
        .max_outer(a.max_iter)
        .restarts(a.restarts);
    cfg.tol = a.tol;
    cfg.validate().map_err(|e| Failure::Usage(e.to_string()))?;
    Ok(cfg)
}

fn cmd_simulate(a: SimulateArgs) -> CliResult {
    let cfg = SimConfig {
        n: a.n,
        m: a.m,
        p0: a.p0,
        sigma2: a.sigma2,
        rho: a.rho,
        truth_corr: a.truth_corr,
        shape: a.shape,
        grid: (a.grid, a.grid),
        seed: a.seed,
    };
    let (data, truth) = simulate(&cfg)?;
    save_dataset(&data, &a.out)?;
    write_tensor(&a.out.join("B_true.csv"), &truth.b)?;
    eprintln!("wrote {} subjects x {} times to {}", data.n(), data.m(), a.out.display());
    Ok(())
}

fn cmd_fit(a: FitArgs) -> CliResult {
    // flag conflicts are usage errors, so check them before touching the data
    fit_config(&a.model, a.model.family.unwrap_or_default(), a.lambda)?;
    let data = load_dataset(&a.data)?;
    let family = a.model.family.unwrap_or(data.family());
    let cfg = fit_config(&a.model, family, a.lambda)?;
    let res = fit(&data.with_family(family), &cfg)?;
    for w in &res.warnings {
        log::warn!("{w}");
    }
    save_model(&res, &a.out)?;
    if let Some(p) = &a.tensor_out {
        write_tensor(p, &res.coefficient_tensor())?;
    }
    eprintln!(
        "converged={} outer_iters={} ee_norm={:.3e}",
        res.converged, res.outer_iters, res.ee_norm
    );
    Ok(())
}

fn parse_ranks(s: &str) -> CliResult<Vec<usize>> {
    let bad = || Failure::Usage(format!("cannot parse ranks '{s}' (use a:b or a,b,c)"));
    let ranks: Vec<usize> = if let Some((lo, hi)) = s.split_once(':') {
        let (lo, hi): (usize, usize) = (lo.trim().parse().map_err(|_| bad())?, hi.trim().parse().map_err(|_| bad())?);
        (lo..=hi).collect()
    } else {
        s.split(',').map(|t| t.trim().parse().map_err(|_| bad())).collect::<CliResult<_>>()?
    };
    if ranks.is_empty() || ranks.contains(&0) {
        return Err(bad());
    }
    Ok(ranks)
}

fn cmd_select_rank(a: SelectRankArgs) -> CliResult {
    let ranks = parse_ranks(&a.ranks)?;
    let data = load_dataset(&a.data)?;
    let family = a.family.unwrap_or(data.family());
    let sel = select_rank(&data, &ranks, family, a.seed)?;
    let mut out = output(None)?;
    writeln!(out, "rank,p_e,bic,converged")?;
    for e in &sel.entries {
        let bic = e.bic.map_or_else(|| "NA".to_string(), |v| format!("{v:.10e}"));
        writeln!(out, "{},{},{},{}", e.rank, e.p_e, bic, e.converged)?;
    }
    out.flush()?;
    eprintln!("chosen rank: {}", sel.chosen);
    Ok(())
}

fn cmd_select_lambda(a: SelectLambdaArgs) -> CliResult {
    if a.grid.iter().any(|&l| !(l >= 0.0) || !l.is_finite()) {
        return Err(Failure::Usage("penalty levels must be finite and non-negative".into()));
    }
    let penalty = parse_penalty(&a.model)?;
    if penalty.is_none() && a.grid.iter().any(|&l| l > 0.0) {
        return Err(Failure::Usage("a positive --grid level conflicts with --penalty none".into()));
    }
    let train = load_dataset(&a.train)?;
    let valid = load_dataset(&a.valid)?;
    let family = a.model.family.unwrap_or(train.family());
    let cfg = fit_config(&a.model, family, 0.0)?;
    let sel = select_lambda(&train.with_family(family), &valid.with_family(family), &a.grid, &cfg)?;
    let mut out = output(None)?;
    writeln!(out, "lambda,metric,converged")?;
    for e in &sel.entries {
        let metric = e.metric.map_or_else(|| "NA".to_string(), |v| format!("{v:.10e}"));
        writeln!(out, "{},{},{}", e.lambda, metric, e.converged)?;
    }
    out.flush()?;
    eprintln!("chosen lambda: {}", sel.chosen);
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> CliResult {
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?;
    let preds = predict(&model, &data)?;
    let mut out = output(a.out.as_deref())?;
    write_predictions(&mut out, &preds)?;
    if a.metrics {
        let y: Vec<f64> = preds.iter().map(|p| p.y).collect();
        let mu: Vec<f64> = preds.iter().map(|p| p.mu).collect();
        let pm = prediction_metrics(&y, &mu)?;
        writeln!(out, "# rmse,{:.16e}", pm.rmse)?;
        match pm.corr {
            Some(c) => writeln!(out, "# corr,{c:.16e}")?,
            None => writeln!(out, "# corr,NA")?,
        }
    }
    out.flush()?;
    Ok(())
}

fn cmd_inference(a: InferenceArgs) -> CliResult {
    if !(a.level > 0.0 && a.level < 1.0) {
        return Err(Failure::Usage(format!("--level must lie in (0, 1), got {}", a.level)));
    }
    let model = load_model(&a.model)?;
    let data = load_dataset(&a.data)?.with_family(model.family);
    let sw = sandwich(&data, &model)?;
    let rows = wald(&model, &sw, a.level)?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "block,row,component,estimate,se,lo,hi")?;
    for r in rows {
        writeln!(
            out,
            "{},{},{},{:.16e},{:.16e},{:.16e},{:.16e}",
            r.block + 1,
            r.row + 1,
            r.component + 1,
            r.estimate,
            r.se,
            r.lo,
            r.hi
        )?;
    }
    out.flush()?;
    Ok(())
}

fn cmd_bench(a: BenchArgs) -> CliResult {
    if a.reps < 2 {
        return Err(Failure::Usage("--reps must be at least 2".into()));
    }
    let cfg = BenchConfig {
        shape: a.shape,
        n_list: a.n_list,
        m: a.m,
        reps: a.reps,
        corr_list: a.corr_list,
        rank: a.rank,
        seed: a.seed,
        tol: a.tol,
        max_outer: a.max_iter,
        ..BenchConfig::default()
    };
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(a.jobs)
        .build()
        .map_err(|e| anyhow!("cannot start worker pool: {e}"))?;
    let rows = pool.install(|| run_bench(&cfg))?;
    let mut out = output(a.out.as_deref())?;
    writeln!(out, "n,m,corr,bias2,variance,mse,mse_se,converged")?;
    for r in rows {
        let mt = r.metrics;
        writeln!(
            out,
            "{},{},{},{:.6},{:.6},{:.6},{:.6},{}",
            r.n, r.m, r.corr, mt.bias2, mt.variance, mt.mse, mt.mse_se, r.converged
        )?;
    }
    out.flush()?;
    Ok(())
}
