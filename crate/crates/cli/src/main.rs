mod history;

use std::fs::File;
use std::io::BufWriter;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use jdgsvd::driver::{solve, Method, SolveOutput, SolverConfig, Status};
use jdgsvd::sparse::{make_d, make_t, read_matrix_market, MatrixPair, SparseCsr};
use jdgsvd::Error;
use serde::Serialize;

use history::BoxResult;

#[derive(Parser)]
#[command(name = "jdgsvd", version, about = "Jacobi-Davidson GSVD of sparse matrix pairs")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Compute GSVD components nearest a target.
    Run(RunArgs),
    /// Print outer and inner iteration totals from a history file.
    Summarize {
        history: PathBuf,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltinA {
    /// `diag(1, 2, ..., n)`
    Diag,
    /// Sparse random `n x n` plus the identity, from the run seed.
    Random,
}

#[derive(Clone, Copy, ValueEnum)]
enum BuiltinB {
    /// Tridiagonal, 3 on the diagonal and 1 off it.
    #[value(name = "T")]
    T,
    /// `(n-1) x n` first differences.
    #[value(name = "D")]
    D,
}

#[derive(Args)]
struct RunArgs {
    #[arg(long, value_name = "PATH", conflicts_with = "builtin_a", required_unless_present = "builtin_a")]
    matrix_a: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    builtin_a: Option<BuiltinA>,
    /// Order of the builtin `A`.
    #[arg(long, default_value_t = 100)]
    size: usize,
    #[arg(long, value_name = "PATH", conflicts_with = "builtin_b", required_unless_present = "builtin_b")]
    matrix_b: Option<PathBuf>,
    #[arg(long, value_name = "NAME")]
    builtin_b: Option<BuiltinB>,
    #[arg(long)]
    method: Method,
    #[arg(long)]
    tau: f64,
    #[arg(long, default_value_t = 1)]
    num: usize,
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,
    #[arg(long, default_value_t = 1e-4)]
    fixtol: f64,
    #[arg(long, default_value_t = 3)]
    kmin: usize,
    #[arg(long, default_value_t = 30)]
    kmax: usize,
    #[arg(long, default_value_t = 1e-4)]
    inner_eps: f64,
    /// Total number of correction equations (default `n`).
    #[arg(long)]
    inner_budget: Option<usize>,
    #[arg(long)]
    exact_inner: bool,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Results as JSON.
    #[arg(long, value_name = "PATH")]
    out: Option<PathBuf>,
    /// Include `x`, `u`, `v` in the results.
    #[arg(long)]
    vectors: bool,
    /// Convergence history as CSV.
    #[arg(long, value_name = "PATH")]
    history: Option<PathBuf>,
}

#[derive(Serialize)]
struct ComponentRecord {
    alpha: f64,
    beta: f64,
    sigma: f64,
    res_norm: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    x: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    u: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    v: Option<Vec<f64>>,
}

#[derive(Serialize)]
struct Results {
    method: String,
    tau: f64,
    num: usize,
    seed: u64,
    status: &'static str,
    found: usize,
    outer_iterations: usize,
    inner_iterations: usize,
    components: Vec<ComponentRecord>,
}

fn builtin_a(kind: BuiltinA, n: usize, seed: u64) -> BoxResult<SparseCsr> {
    use rand::{Rng, SeedableRng};
    if n == 0 {
        return Err("--size must be positive".into());
    }
    Ok(match kind {
        BuiltinA::Diag => SparseCsr::from_diagonal(&(1..=n).map(|i| i as f64).collect::<Vec<_>>()),
        BuiltinA::Random => {
            let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
            let mut trip = Vec::new();
            for i in 0..n {
                trip.push((i, i, 1.0));
                for j in 0..n {
                    if rng.random_bool(0.05) {
                        trip.push((i, j, rng.random_range(-1.0..1.0)));
                    }
                }
            }
            SparseCsr::from_triplets(n, n, &trip)?
        }
    })
}

fn load_pair(args: &RunArgs) -> BoxResult<MatrixPair> {
    let a = match (&args.matrix_a, args.builtin_a) {
        (Some(path), _) => read_matrix_market(path)?,
        (None, Some(kind)) => builtin_a(kind, args.size, args.seed)?,
        (None, None) => return Err("one of --matrix-a or --builtin-a is required".into()),
    };
    let n = a.cols();
    let b = match (&args.matrix_b, args.builtin_b) {
        (Some(path), _) => read_matrix_market(path)?,
        (None, Some(BuiltinB::T)) => make_t(n)?,
        (None, Some(BuiltinB::D)) => make_d(n)?,
        (None, None) => return Err("one of --matrix-b or --builtin-b is required".into()),
    };
    Ok(MatrixPair::new(a, b)?)
}

fn config(args: &RunArgs) -> SolverConfig {
    let mut cfg = SolverConfig::new(args.method, args.tau, args.num);
    cfg.tol = args.tol;
    cfg.fixtol = args.fixtol;
    cfg.k_min = args.kmin;
    cfg.k_max = args.kmax;
    cfg.inner_eps = args.inner_eps;
    cfg.inner_budget = args.inner_budget;
    cfg.exact_inner = args.exact_inner;
    cfg.seed = args.seed;
    cfg
}

fn results(args: &RunArgs, out: &SolveOutput) -> Results {
    let set = &out.converged;
    let components = (0..set.len())
        .map(|i| ComponentRecord {
            alpha: set.alphas[i],
            beta: set.betas[i],
            sigma: set.sigma(i),
            res_norm: set.res_norms[i],
            x: args.vectors.then(|| set.x.column(i).iter().copied().collect()),
            u: args.vectors.then(|| set.u.column(i).iter().copied().collect()),
            v: args.vectors.then(|| set.v.column(i).iter().copied().collect()),
        })
        .collect();
    let (status, found) = match out.status {
        Status::AllFound => ("all_found", set.len()),
        Status::BudgetExhausted { found } => ("budget_exhausted", found),
    };
    Results {
        method: args.method.name().to_string(),
        tau: args.tau,
        num: args.num,
        seed: args.seed,
        status,
        found,
        outer_iterations: out.history.outer_iterations(),
        inner_iterations: out.history.inner_iterations(),
        components,
    }
}

fn run(args: &RunArgs) -> BoxResult<bool> {
    let pair = load_pair(args)?;
    let cfg = config(args);
    let out = match solve(&pair, &cfg) {
        Ok(out) => out,
        Err(e @ Error::RankDeficientB { .. }) => {
            return Err(format!("method {} cannot be used with this B: {e}", args.method).into());
        }
        Err(e) => return Err(e.into()),
    };
    let res = results(args, &out);
    for (i, c) in res.components.iter().enumerate() {
        println!("{:>3}  sigma = {:.15e}  res_norm = {:.3e}", i + 1, c.sigma, c.res_norm);
    }
    println!(
        "{}: {} of {} found, I_out = {}, I_in = {}",
        res.status, res.found, args.num, res.outer_iterations, res.inner_iterations
    );
    if let Some(path) = &args.out {
        serde_json::to_writer_pretty(BufWriter::new(File::create(path)?), &res)?;
    }
    if let Some(path) = &args.history {
        history::write_csv(File::create(path)?, &history::rows(&out.history))?;
    }
    Ok(out.status == Status::AllFound)
}

fn summarize(path: &PathBuf) -> BoxResult<()> {
    let rows = history::read_csv(File::open(path).map_err(|e| format!("{}: {e}", path.display()))?)
        .map_err(|e| format!("{}: {e}", path.display()))?;
    print!("{}", history::render(&history::summarize(&rows)));
    Ok(())
}

fn main() -> ExitCode {
    env_logger::init();
    let cli = Cli::parse();
    let outcome = match &cli.command {
        Command::Run(args) => run(args),
        Command::Summarize { history } => summarize(history).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
    }
}
