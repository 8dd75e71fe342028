mod config;

use clap::{Args, Parser, Subcommand};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use tar_threshold::estimators::{build_profile, central_mle, pseudo_mle, write_estimates_csv};
use tar_threshold::limit::{DEFAULT_STOP_DEPTH, MIN_VARPI_BURN_IN, MIN_VARPI_TRAJ_LEN};
use tar_threshold::montecarlo::{
    limit_path_seed, run_limit_mc, DEFAULT_J_GRID, DEFAULT_LAG_GRID, DEFAULT_SAMPLE_SIZES,
};
use tar_threshold::{
    bayes_estimate, diag_interval_bound, diag_mixing, estimate_varpi, run_filter, run_finite_mc,
    simulate_path_with, simulate_z, solve_gamma, EstimatorKind, EstimatorResult, LimitLaw,
    McConfig, PathSample, Prior, SimOptions, TabulatedDensity, TarParams, ThetaSpace,
};

use config::{ConfigError, Echo};

#[derive(Parser, Debug)]
#[command(
    name = "tar-threshold",
    version,
    about = "Threshold estimation for TAR(1) with colored noise"
)]
#[command(args_override_self = true)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Simulate one trajectory and write `path.csv`.
    Simulate(SimulateArgs),
    /// Estimate θ from a path CSV or a fresh simulation.
    Estimate(EstimateArgs),
    /// Finite-sample Monte Carlo over an n grid.
    McFinite(McFiniteArgs),
    /// Monte Carlo of the limit experiment.
    McLimit(McLimitArgs),
    /// Kernel density of the stationary law and ϖ.
    Density(DensityArgs),
    /// Interval-bound and mixing diagnostics.
    Diagnostics(DiagnosticsArgs),
}

#[derive(Args, Debug)]
struct ModelArgs {
    #[arg(long, default_value_t = 1.5, allow_negative_numbers = true)]
    theta: f64,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    rho_plus: f64,
    #[arg(long, default_value_t = -0.5, allow_negative_numbers = true)]
    rho_minus: f64,
    #[arg(long, default_value_t = 0.9, allow_negative_numbers = true)]
    a: f64,
    #[arg(long, default_value_t = 1.0, allow_negative_numbers = true)]
    theta_lo: f64,
    #[arg(long, default_value_t = 2.0, allow_negative_numbers = true)]
    theta_hi: f64,
}

impl ModelArgs {
    fn space(&self) -> tar_threshold::Result<ThetaSpace> {
        ThetaSpace::new(self.theta_lo, self.theta_hi)
    }

    fn full(&self) -> tar_threshold::Result<TarParams> {
        TarParams::new(
            self.theta,
            self.rho_plus,
            self.rho_minus,
            self.a,
            self.space()?,
        )
    }

    fn relaxed(&self) -> tar_threshold::Result<TarParams> {
        TarParams::simulation_only(
            self.theta,
            self.rho_plus,
            self.rho_minus,
            self.a,
            self.space()?,
        )
    }

    fn echo(&self, e: &mut Echo) {
        e.set("theta", self.theta)
            .set("rho-plus", self.rho_plus)
            .set("rho-minus", self.rho_minus)
            .set("a", self.a)
            .set("theta-lo", self.theta_lo)
            .set("theta-hi", self.theta_hi);
    }
}

#[derive(Args, Debug)]
struct SimulateArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long)]
    n: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Also write the driving noises to `noise.csv`.
    #[arg(long)]
    keep_noise: bool,
    #[arg(long, default_value_t = 0)]
    burn_in: usize,
}

#[derive(Args, Debug)]
struct EstimateArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Path CSV with columns `j,x,xi`.
    #[arg(long, conflicts_with = "simulate")]
    input: Option<PathBuf>,
    /// Simulate the input from the model instead of reading it.
    #[arg(long)]
    simulate: bool,
    #[arg(long)]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// `uniform` or a `theta,density` CSV file.
    #[arg(long, default_value = "uniform")]
    prior: String,
    #[arg(long, default_value = "bayes,central_mle,pseudo_mle")]
    estimators: String,
    /// Also write `filter.csv` at this θ.
    #[arg(long, allow_negative_numbers = true)]
    filter_theta: Option<f64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct McFiniteArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 2000)]
    trials: usize,
    /// Comma-separated sample sizes.
    #[arg(long)]
    n_grid: Option<String>,
    /// Single sample size, shorthand for a one-point grid.
    #[arg(long, conflicts_with = "n_grid")]
    n: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "uniform")]
    prior: String,
    #[arg(long, default_value = "bayes,central_mle,pseudo_mle")]
    estimators: String,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct McLimitArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Number of limit draws m.
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Jump intensity; estimated from the model when absent.
    #[arg(long)]
    varpi: Option<f64>,
    /// Jump scale; computed from the model when absent.
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long, default_value_t = 1_000_000)]
    traj_len: usize,
    #[arg(long, default_value_t = 10_000)]
    burn_in: usize,
    #[arg(long, default_value_t = DEFAULT_STOP_DEPTH)]
    stop_depth: f64,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DensityArgs {
    #[command(flatten)]
    model: ModelArgs,
    #[arg(long, default_value_t = 1_000_000)]
    traj_len: usize,
    #[arg(long, default_value_t = 10_000)]
    burn_in: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Args, Debug)]
struct DiagnosticsArgs {
    #[command(flatten)]
    model: ModelArgs,
    /// Sample size for the interval bound.
    #[arg(long, default_value_t = 100)]
    n: usize,
    #[arg(long, default_value_t = 100_000)]
    trials: usize,
    /// Interval width scale v in [θ₀, θ₀ + v/n].
    #[arg(long, default_value_t = 1.0)]
    v: f64,
    #[arg(long, default_value_t = 1_000_000)]
    traj_len: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    workers: Option<usize>,
    #[arg(long, default_value = "out")]
    out: PathBuf,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Input(String),
    Numeric(String),
}

impl Failure {
    fn code(&self) -> u8 {
        match self {
            Failure::Config(_) => 2,
            Failure::Input(_) => 3,
            Failure::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            Failure::Config(m) | Failure::Input(m) | Failure::Numeric(m) => m,
        }
    }
}

impl From<tar_threshold::Error> for Failure {
    fn from(e: tar_threshold::Error) -> Self {
        use tar_threshold::Error as E;
        match e {
            E::Parameter { .. } => Failure::Config(e.to_string()),
            E::Numeric(_) => Failure::Numeric(e.to_string()),
            E::Input(_) | E::Parse { .. } | E::Io(_) | E::Csv(_) => Failure::Input(e.to_string()),
        }
    }
}

impl From<ConfigError> for Failure {
    fn from(e: ConfigError) -> Self {
        Failure::Config(e.0)
    }
}

type Outcome<T = ()> = Result<T, Failure>;

fn require_seed(seed: Option<u64>) -> Outcome<u64> {
    seed.ok_or_else(|| {
        Failure::Config("`--seed` is required for commands that draw random numbers".into())
    })
}

fn workers(w: Option<usize>) -> usize {
    w.unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

fn out_file(dir: &Path, name: &str) -> Outcome<BufWriter<File>> {
    let path = dir.join(name);
    File::create(&path)
        .map(BufWriter::new)
        .map_err(|e| Failure::Input(format!("cannot create {}: {e}", path.display())))
}

fn prepare_out(dir: &Path, echo: &Echo) -> Outcome {
    fs::create_dir_all(dir)
        .map_err(|e| Failure::Input(format!("cannot create {}: {e}", dir.display())))?;
    let mut f = out_file(dir, "config.txt")?;
    f.write_all(echo.render().as_bytes())
        .map_err(|e| Failure::Input(format!("cannot write config echo: {e}")))
}

fn write_with<F>(dir: &Path, name: &str, f: F) -> Outcome
where
    F: FnOnce(&mut BufWriter<File>) -> tar_threshold::Result<()>,
{
    let mut w = out_file(dir, name)?;
    f(&mut w)?;
    w.flush()
        .map_err(|e| Failure::Input(format!("cannot write {name}: {e}")))
}

fn parse_prior(spec: &str) -> Outcome<Prior> {
    if spec == "uniform" {
        return Ok(Prior::Uniform);
    }
    let file =
        File::open(spec).map_err(|e| Failure::Input(format!("cannot open prior {spec}: {e}")))?;
    Ok(Prior::Tabulated(TabulatedDensity::read_csv(
        BufReader::new(file),
    )?))
}

fn parse_kinds(spec: &str) -> Outcome<Vec<EstimatorKind>> {
    let mut kinds = Vec::new();
    for part in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let k = EstimatorKind::parse(part)?;
        if !kinds.contains(&k) {
            kinds.push(k);
        }
    }
    if kinds.is_empty() {
        return Err(Failure::Config("`--estimators` lists no estimator".into()));
    }
    Ok(kinds)
}

fn parse_grid(spec: &str) -> Outcome<Vec<usize>> {
    spec.split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse()
                .map_err(|_| Failure::Config(format!("`--n-grid`: `{s}` is not a sample size")))
        })
        .collect()
}

fn join<T: ToString>(items: &[T]) -> String {
    items.iter().map(T::to_string).collect::<Vec<_>>().join(",")
}

fn simulate(args: SimulateArgs) -> Outcome {
    let params = args.model.relaxed()?;
    let seed = require_seed(args.seed)?;
    let opts = SimOptions {
        keep_noise: args.keep_noise,
        burn_in: args.burn_in,
    };
    let path = simulate_path_with(&params, args.n, seed, opts)?;
    let mut echo = Echo::new("simulate");
    args.model.echo(&mut echo);
    echo.set("n", args.n)
        .set("seed", seed)
        .set("keep-noise", args.keep_noise)
        .set("burn-in", args.burn_in);
    prepare_out(&args.out, &echo)?;
    write_with(&args.out, "path.csv", |w| path.write_csv(w))?;
    if args.keep_noise {
        write_with(&args.out, "noise.csv", |w| path.write_noise_csv(w))?;
    }
    println!(
        "wrote {} rows to {}",
        path.n() + 1,
        args.out.join("path.csv").display()
    );
    Ok(())
}

fn estimate(args: EstimateArgs) -> Outcome {
    let params = args.model.full()?;
    let prior = parse_prior(&args.prior)?;
    prior.validate_on(params.theta_space())?;
    let kinds = parse_kinds(&args.estimators)?;
    let mut echo = Echo::new("estimate");
    args.model.echo(&mut echo);
    echo.set("prior", &args.prior).set(
        "estimators",
        join(&kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>()),
    );
    let x = match (&args.input, args.simulate) {
        (Some(input), false) => {
            let file = File::open(input)
                .map_err(|e| Failure::Input(format!("cannot open {}: {e}", input.display())))?;
            echo.set("input", input.display());
            PathSample::read_csv(BufReader::new(file), args.seed.unwrap_or(0))?.into_x()
        }
        (None, true) => {
            let seed = require_seed(args.seed)?;
            let n = args
                .n
                .ok_or_else(|| Failure::Config("`--simulate` needs `--n`".into()))?;
            echo.set("simulate", true).set("n", n).set("seed", seed);
            tar_threshold::simulate_path(&params, n, seed)?.into_x()
        }
        _ => {
            return Err(Failure::Config(
                "give exactly one of `--input` or `--simulate`".into(),
            ))
        }
    };
    if x.len() < 2 {
        return Err(Failure::Input(
            "the path needs at least two observations".into(),
        ));
    }
    let profile = build_profile(&x, &params)?;
    let results: Vec<EstimatorResult> = kinds
        .iter()
        .map(|k| match k {
            EstimatorKind::Bayes => bayes_estimate(&profile, &prior),
            EstimatorKind::CentralMle => Ok(central_mle(&profile)),
            EstimatorKind::PseudoMle => pseudo_mle(&x, &params),
        })
        .collect::<tar_threshold::Result<_>>()?;
    if let Some(t) = args.filter_theta {
        echo.set("filter-theta", t);
    }
    prepare_out(&args.out, &echo)?;
    write_with(&args.out, "estimates.csv", |w| {
        write_estimates_csv(w, &results)
    })?;
    write_with(&args.out, "profile.csv", |w| profile.write_csv(w))?;
    if let Some(t) = args.filter_theta {
        let run = run_filter(&x, t, &params)?;
        write_with(&args.out, "filter.csv", |w| run.write_csv(w))?;
    }
    for r in &results {
        println!("{:<12} {:.10}", r.kind.as_str(), r.estimate);
    }
    Ok(())
}

fn mc_finite(args: McFiniteArgs) -> Outcome {
    let params = args.model.full()?;
    let seed = require_seed(args.seed)?;
    let mut config = McConfig::new(params, args.trials, seed);
    config.prior = parse_prior(&args.prior)?;
    config.kinds = parse_kinds(&args.estimators)?;
    config.sample_sizes = match (&args.n_grid, args.n) {
        (Some(g), _) => parse_grid(g)?,
        (None, Some(n)) => vec![n],
        (None, None) => DEFAULT_SAMPLE_SIZES.to_vec(),
    };
    config.workers = workers(args.workers);
    config.validate()?;
    let mut echo = Echo::new("mc-finite");
    args.model.echo(&mut echo);
    echo.set("trials", args.trials)
        .set("n-grid", join(&config.sample_sizes))
        .set("seed", seed)
        .set("prior", &args.prior)
        .set(
            "estimators",
            join(&config.kinds.iter().map(|k| k.as_str()).collect::<Vec<_>>()),
        );
    let result = run_finite_mc(&config)?;
    prepare_out(&args.out, &echo)?;
    write_with(&args.out, "summary.csv", |w| result.summary.write_csv(w))?;
    write_with(&args.out, "boundary_hits.csv", |w| {
        result.summary.write_boundary_csv(w)
    })?;
    write_with(&args.out, "finite_errors.csv", |w| {
        result.write_errors_csv(w)
    })?;
    for r in &result.summary.rows {
        println!(
            "n={:<6} {:<12} {:.4} ± {:.4}",
            r.n,
            r.kind.as_str(),
            r.normalized_rmse,
            r.std_err
        );
    }
    Ok(())
}

fn mc_limit(args: McLimitArgs) -> Outcome {
    let seed = require_seed(args.seed)?;
    let workers = workers(args.workers);
    let mut echo = Echo::new("mc-limit");
    echo.set("trials", args.trials)
        .set("stop-depth", args.stop_depth)
        .set("seed", seed);
    let beta2 = match args.beta2 {
        Some(b) => b,
        None => {
            let params = args.model.full()?;
            tar_threshold::beta_squared(&params, &solve_gamma(params.a())?)
        }
    };
    let varpi = match args.varpi {
        Some(v) => v,
        None => {
            if args.traj_len < MIN_VARPI_TRAJ_LEN || args.burn_in < MIN_VARPI_BURN_IN {
                return Err(Failure::Config(format!(
                    "estimating varpi needs `--traj-len` >= {MIN_VARPI_TRAJ_LEN} and `--burn-in` >= {MIN_VARPI_BURN_IN}"
                )));
            }
            echo.set("traj-len", args.traj_len)
                .set("burn-in", args.burn_in);
            estimate_varpi(&args.model.relaxed()?, args.traj_len, args.burn_in, seed)?.0
        }
    };
    if args.beta2.is_none() || args.varpi.is_none() {
        args.model.echo(&mut echo);
    }
    echo.set("beta2", beta2).set("varpi", varpi);
    let law = LimitLaw::new(beta2, varpi)?;
    let summary = run_limit_mc(&law, args.trials, seed, args.stop_depth, workers)?;
    let first = simulate_z(&law, limit_path_seed(seed, 0), args.stop_depth)?;
    prepare_out(&args.out, &echo)?;
    write_with(&args.out, "limit_summary.csv", |w| summary.write_csv(w))?;
    write_with(&args.out, "limit_detail.csv", |w| {
        summary.write_detail_csv(w)
    })?;
    write_with(&args.out, "limit_samples.csv", |w| {
        summary.write_samples_csv(w)
    })?;
    write_with(&args.out, "zpath.csv", |w| first.write_csv(w))?;
    println!(
        "beta2 {beta2:.6} varpi {varpi:.6}: rmse u_tilde {:.4}, u_hat {:.4}",
        summary.rmse_u_tilde, summary.rmse_u_hat
    );
    Ok(())
}

fn density(args: DensityArgs) -> Outcome {
    let params = args.model.relaxed()?;
    let seed = require_seed(args.seed)?;
    let (varpi, est) = estimate_varpi(&params, args.traj_len, args.burn_in, seed)?;
    let mut echo = Echo::new("density");
    args.model.echo(&mut echo);
    echo.set("traj-len", args.traj_len)
        .set("burn-in", args.burn_in)
        .set("seed", seed);
    prepare_out(&args.out, &echo)?;
    write_with(&args.out, "density.csv", |w| est.write_csv(w))?;
    write_with(&args.out, "varpi.csv", |w| {
        let mut wtr = csv::Writer::from_writer(w);
        wtr.write_record(["theta", "varpi", "bandwidth", "sample_size"])?;
        wtr.write_record([
            tar_threshold::csvio::fmt(params.theta()),
            tar_threshold::csvio::fmt(varpi),
            tar_threshold::csvio::fmt(est.bandwidth),
            est.sample_size.to_string(),
        ])?;
        wtr.flush()?;
        Ok(())
    })?;
    println!(
        "varpi {varpi:.6} (bandwidth {:.4e}, {} samples)",
        est.bandwidth, est.sample_size
    );
    Ok(())
}

fn diagnostics(args: DiagnosticsArgs) -> Outcome {
    let params = args.model.relaxed()?;
    let seed = require_seed(args.seed)?;
    let bound = diag_interval_bound(
        &params,
        args.n,
        args.v,
        args.trials,
        seed,
        &DEFAULT_J_GRID,
        workers(args.workers),
    )?;
    let mixing = diag_mixing(&params, &DEFAULT_LAG_GRID, args.traj_len, seed)?;
    let mut echo = Echo::new("diagnostics");
    args.model.echo(&mut echo);
    echo.set("n", args.n)
        .set("trials", args.trials)
        .set("v", args.v)
        .set("traj-len", args.traj_len)
        .set("seed", seed);
    prepare_out(&args.out, &echo)?;
    write_with(&args.out, "interval_bound.csv", |w| bound.write_csv(w))?;
    write_with(&args.out, "mixing.csv", |w| mixing.write_csv(w))?;
    let text = format!("{}\n{}", bound.to_text(), mixing.to_text());
    write_with(&args.out, "diagnostics.txt", |w| {
        Ok(w.write_all(text.as_bytes())?)
    })?;
    print!("{text}");
    Ok(())
}

fn run(cli: Cli) -> Outcome {
    match cli.command {
        Command::Simulate(a) => simulate(a),
        Command::Estimate(a) => estimate(a),
        Command::McFinite(a) => mc_finite(a),
        Command::McLimit(a) => mc_limit(a),
        Command::Density(a) => density(a),
        Command::Diagnostics(a) => diagnostics(a),
    }
}

fn main() -> ExitCode {
    let args = match config::expand(std::env::args_os().collect()) {
        Ok(a) => a,
        Err(e) => {
            eprintln!("error: {}", e.0);
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message());
            ExitCode::from(f.code())
        }
    }
}
