//! One binary, subcommand per pipeline: `solve` for ncop problem files,
//! `stereo` for rectified PGM pairs, `oracle` for exact minima, plus
//! `decompose`, `propagation`, and `bench` for inspection and seeded
//! comparisons. Every run echoes its effective configuration as `#`
//! comment lines so traces are self-describing.
//!
//! Exit codes: 0 success, 1 usage error, 2 runtime error.

use std::error::Error;
use std::path::PathBuf;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use coopt::gen::{self, Topology};
use coopt::oracle::brute_force_min;
use coopt::stereo::{evaluate_disparity, load_disparity, run_stereo};
use coopt::{
    count_spanning_trees, default_tree_set, grid_hv_decomposition, neighbor_degree_matrix, run,
    self_loop_degree_matrix, spanning_tree_decomposition, straightforward_decomposition,
    validate_decomposition, Assignment, Decomposition, Form, LambdaSchedule, MatchCost, ncop,
    Problem, PropagationMatrix, SolverConfig, StereoConfig,
};

const LONG_VERSION: &str = if cfg!(debug_assertions) {
    concat!(env!("CARGO_PKG_VERSION"), " (debug build, ncop format 1)")
} else {
    concat!(env!("CARGO_PKG_VERSION"), " (release build, ncop format 1)")
};

#[derive(Parser)]
#[command(
    name = "coopt",
    version,
    long_version = LONG_VERSION,
    about = "Cooperative energy minimization for discrete labeling problems"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the iterative solver on a problem file and print the trace.
    Solve(SolveArgs),
    /// Compute a disparity map from a rectified PGM pair.
    Stereo(StereoArgs),
    /// Exact minimum energy by brute force.
    Oracle(OracleArgs),
    /// Build a decomposition and check it reconstructs the energy.
    Decompose(DecomposeArgs),
    /// Print a propagation matrix as dense CSV rows.
    Propagation(PropagationArgs),
    /// Solve a seeded instance suite and compare against the oracle.
    Bench(BenchArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum FormArg {
    Basic,
    Canonical,
    Simple,
}

impl From<FormArg> for Form {
    fn from(f: FormArg) -> Form {
        match f {
            FormArg::Basic => Form::Basic,
            FormArg::Canonical => Form::Canonical,
            FormArg::Simple => Form::Simple,
        }
    }
}

/// `--lambda` accepts a constant strength or the literal `harmonic` for
/// the 1 - 1/k schedule.
#[derive(Clone, Copy)]
enum LambdaArg {
    Constant(f64),
    Harmonic,
}

fn parse_lambda(s: &str) -> Result<LambdaArg, String> {
    if s.eq_ignore_ascii_case("harmonic") {
        return Ok(LambdaArg::Harmonic);
    }
    s.parse::<f64>()
        .map(LambdaArg::Constant)
        .map_err(|_| format!("expected a number or \"harmonic\", got {s:?}"))
}

impl LambdaArg {
    fn schedule(self) -> LambdaSchedule {
        match self {
            LambdaArg::Constant(v) => LambdaSchedule::Constant(v),
            LambdaArg::Harmonic => LambdaSchedule::Harmonic,
        }
    }

    fn label(self) -> String {
        match self {
            LambdaArg::Constant(v) => v.to_string(),
            LambdaArg::Harmonic => "harmonic".into(),
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum DecompArg {
    /// One sub-objective per variable from its incident edges.
    Star,
    /// Spanning-tree decomposition over the default tree set.
    Tree,
}

#[derive(Clone, Copy, ValueEnum)]
enum MatrixArg {
    Neighbor,
    #[value(name = "selfloop", alias = "self-loop")]
    SelfLoop,
}

#[derive(Clone, Copy, ValueEnum)]
enum CostArg {
    Abs,
    Squared,
}

#[derive(Clone, Copy, ValueEnum)]
enum SuiteArg {
    Small,
    Medium,
}

fn enum_name<T: ValueEnum>(v: T) -> String {
    v.to_possible_value().expect("no skipped variants").get_name().to_string()
}

enum CliError {
    Usage(String),
    Runtime(Box<dyn Error>),
}

impl<E: Error + 'static> From<E> for CliError {
    fn from(e: E) -> Self {
        CliError::Runtime(Box::new(e))
    }
}

fn main() {
    // Die quietly when a downstream pipe closes, like other line-oriented
    // tools, instead of panicking mid-print.
    #[cfg(unix)]
    unsafe {
        libc::signal(libc::SIGPIPE, libc::SIG_DFL);
    }
    std::process::exit(run_main());
}

fn run_main() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.cmd {
        Cmd::Solve(a) => cmd_solve(a),
        Cmd::Stereo(a) => cmd_stereo(a),
        Cmd::Oracle(a) => cmd_oracle(a),
        Cmd::Decompose(a) => cmd_decompose(a),
        Cmd::Propagation(a) => cmd_propagation(a),
        Cmd::Bench(a) => cmd_bench(a),
    };
    match result {
        Ok(()) => 0,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            1
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            2
        }
    }
}

/// Parses an optional config-file string into a flag enum.
fn parse_enum<T: ValueEnum>(field: &str, v: Option<String>) -> Result<Option<T>, CliError> {
    v.map(|s| {
        T::from_str(&s, true)
            .map_err(|_| CliError::Usage(format!("config file: bad {field} value {s:?}")))
    })
    .transpose()
}

fn read_config<T: serde::de::DeserializeOwned + Default>(
    path: &Option<PathBuf>,
) -> Result<T, CliError> {
    match path {
        Some(p) => {
            let text = std::fs::read_to_string(p)?;
            Ok(toml::from_str(&text)
                .map_err(|e| CliError::Usage(format!("config file {}: {e}", p.display())))?)
        }
        None => Ok(T::default()),
    }
}

fn labels_string(a: &Assignment) -> String {
    a.labels
        .iter()
        .map(ToString::to_string)
        .collect::<Vec<_>>()
        .join(" ")
}

#[derive(Args)]
struct SolveArgs {
    /// Problem file in ncop format.
    #[arg(long)]
    input: PathBuf,
    /// TOML file supplying defaults for the remaining flags (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, value_enum)]
    form: Option<FormArg>,
    /// Cooperation strength: a constant or "harmonic".
    #[arg(long, value_parser = parse_lambda)]
    lambda: Option<LambdaArg>,
    /// Soft-decision weight for the simple form.
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
    #[arg(long, value_enum)]
    decomp: Option<DecompArg>,
    #[arg(long, value_enum)]
    matrix: Option<MatrixArg>,
    /// Relative equilibrium tolerance.
    #[arg(long)]
    tol: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Write the iteration CSV here instead of stdout.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(serde::Deserialize)]
#[serde(untagged)]
enum LambdaFile {
    Num(f64),
    Named(String),
}

#[derive(Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct SolveFile {
    form: Option<String>,
    lambda: Option<LambdaFile>,
    alpha: Option<f64>,
    max_iter: Option<usize>,
    decomp: Option<String>,
    matrix: Option<String>,
    tol: Option<f64>,
    threads: Option<usize>,
}

fn build_decomposition(p: &Problem, kind: DecompArg) -> Result<Decomposition, CliError> {
    Ok(match kind {
        DecompArg::Star => straightforward_decomposition(p),
        DecompArg::Tree => spanning_tree_decomposition(p, &default_tree_set(p)?)?,
    })
}

fn build_matrix(p: &Problem, rule: MatrixArg) -> Result<PropagationMatrix, CliError> {
    Ok(match rule {
        MatrixArg::Neighbor => neighbor_degree_matrix(p)?,
        MatrixArg::SelfLoop => self_loop_degree_matrix(p)?,
    })
}

fn cmd_solve(a: SolveArgs) -> Result<(), CliError> {
    let file: SolveFile = read_config(&a.config)?;
    let file_lambda = match file.lambda {
        Some(LambdaFile::Num(v)) => Some(LambdaArg::Constant(v)),
        Some(LambdaFile::Named(s)) => {
            Some(parse_lambda(&s).map_err(|e| CliError::Usage(format!("config file: {e}")))?)
        }
        None => None,
    };
    let form = a.form.or(parse_enum("form", file.form)?).unwrap_or(FormArg::Basic);
    let lambda = a.lambda.or(file_lambda).unwrap_or(LambdaArg::Constant(0.5));
    let alpha = a.alpha.or(file.alpha).unwrap_or(0.16);
    let max_iter = a.max_iter.or(file.max_iter).unwrap_or(16);
    let decomp = a
        .decomp
        .or(parse_enum("decomp", file.decomp)?)
        .unwrap_or(DecompArg::Star);
    let matrix = a
        .matrix
        .or(parse_enum("matrix", file.matrix)?)
        .unwrap_or(MatrixArg::Neighbor);
    let tol = a.tol.or(file.tol).unwrap_or(1e-9);
    let threads = a.threads.or(file.threads).unwrap_or(1);

    let p = ncop::read_file(&a.input)?;
    let d = build_decomposition(&p, decomp)?;
    let w = build_matrix(&p, matrix)?;
    let cfg = SolverConfig {
        form: form.into(),
        schedule: lambda.schedule(),
        alpha,
        max_iter,
        equilibrium_tol: tol,
        threads,
        ..SolverConfig::default()
    };

    println!("# input {}", a.input.display());
    println!("# vars {} edges {}", p.num_vars(), p.num_edges());
    println!(
        "# form {} lambda {} alpha {} max_iter {} decomp {} matrix {} tol {} threads {}",
        Form::from(form).name(),
        lambda.label(),
        alpha,
        max_iter,
        enum_name(decomp),
        enum_name(matrix),
        tol,
        threads
    );

    let out = run(&p, &d, Some(&w), &cfg)?;
    match &a.trace {
        Some(path) => {
            std::fs::write(path, out.trace.to_csv())?;
            println!("# trace {}", path.display());
        }
        None => print!("{}", out.trace.to_csv()),
    }
    println!("# bound_valid {}", out.trace.bound_valid);
    println!("# best_energy {}", out.best_energy);
    println!("# best {}", labels_string(&out.best));
    match &out.certificate {
        Some(c) => println!(
            "# certificate {} at iteration {} energy {}",
            match c.route {
                coopt::CertificateRoute::ZeroLambda => "zero-lambda",
                coopt::CertificateRoute::Equilibrium => "equilibrium",
                coopt::CertificateRoute::DivergentConsensus => "divergent-consensus",
            },
            c.iteration,
            c.energy
        ),
        None => println!("# certificate none"),
    }
    Ok(())
}

#[derive(Args)]
struct StereoArgs {
    /// Left PGM image.
    #[arg(long)]
    left: PathBuf,
    /// Right PGM image.
    #[arg(long)]
    right: PathBuf,
    /// Output disparity PGM.
    #[arg(long)]
    out: PathBuf,
    /// TOML file supplying defaults for the remaining flags (flags win).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Largest disparity searched.
    #[arg(long)]
    dmax: Option<usize>,
    #[arg(long)]
    alpha: Option<f64>,
    #[arg(long)]
    iters: Option<usize>,
    /// Ground-truth disparity PGM; enables bad-pixel and RMS metrics.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// Gray levels per disparity unit in --out and --truth.
    #[arg(long)]
    scale: Option<u16>,
    #[arg(long, value_enum)]
    cost: Option<CostArg>,
    #[arg(long)]
    tau_match: Option<f64>,
    #[arg(long)]
    smooth_weight: Option<f64>,
    #[arg(long)]
    tau_smooth: Option<f64>,
    #[arg(long)]
    threads: Option<usize>,
    /// Report 0 seconds, keeping stdout byte-reproducible.
    #[arg(long)]
    no_timing: bool,
}

#[derive(Default, serde::Deserialize)]
#[serde(deny_unknown_fields)]
struct StereoFile {
    dmax: Option<usize>,
    alpha: Option<f64>,
    iters: Option<usize>,
    scale: Option<u16>,
    cost: Option<String>,
    tau_match: Option<f64>,
    smooth_weight: Option<f64>,
    tau_smooth: Option<f64>,
    threads: Option<usize>,
}

fn cmd_stereo(a: StereoArgs) -> Result<(), CliError> {
    let file: StereoFile = read_config(&a.config)?;
    let dmax = a.dmax.or(file.dmax).unwrap_or(4);
    let alpha = a.alpha.or(file.alpha).unwrap_or(0.16);
    let iters = a.iters.or(file.iters).unwrap_or(16);
    let scale = a.scale.or(file.scale).unwrap_or(1);
    let cost = a.cost.or(parse_enum("cost", file.cost)?).unwrap_or(CostArg::Abs);
    let tau_match = a.tau_match.or(file.tau_match).unwrap_or(20.0);
    let smooth_weight = a.smooth_weight.or(file.smooth_weight).unwrap_or(20.0);
    let tau_smooth = a.tau_smooth.or(file.tau_smooth).unwrap_or(2.0);
    let threads = a.threads.or(file.threads).unwrap_or(1);

    let cfg = StereoConfig {
        d_max: dmax,
        match_cost: match cost {
            CostArg::Abs => MatchCost::Absolute,
            CostArg::Squared => MatchCost::Squared,
        },
        tau_match,
        smooth_weight,
        tau_smooth,
        alpha,
        max_iter: iters,
        threads,
    };

    println!("# left {} right {} out {}", a.left.display(), a.right.display(), a.out.display());
    println!(
        "# dmax {} alpha {} iters {} cost {} tau_match {} smooth_weight {} tau_smooth {} \
         scale {} threads {}",
        dmax,
        alpha,
        iters,
        enum_name(cost),
        tau_match,
        smooth_weight,
        tau_smooth,
        scale,
        threads
    );

    let outcome = run_stereo(&a.left, &a.right, &cfg, Some(&a.out), scale)?;
    print!("{}", outcome.trace.to_csv());
    let (bad_pct, rms) = match &a.truth {
        Some(t) => {
            let gt = load_disparity(t, scale)?;
            let m = evaluate_disparity(&outcome.disparity, &gt, 1.0)?;
            (100.0 * m.bad_fraction, m.rms)
        }
        None => (f64::NAN, f64::NAN),
    };
    let seconds = if a.no_timing { 0.0 } else { outcome.seconds };
    println!("energy,bad_pct,rms,seconds");
    println!("{},{},{},{}", outcome.energy, bad_pct, rms, seconds);
    Ok(())
}

#[derive(Args)]
struct OracleArgs {
    /// Problem file in ncop format.
    #[arg(long)]
    input: PathBuf,
}

fn cmd_oracle(a: OracleArgs) -> Result<(), CliError> {
    let p = ncop::read_file(&a.input)?;
    println!("# input {}", a.input.display());
    println!("# vars {} edges {}", p.num_vars(), p.num_edges());
    let r = brute_force_min(&p)?;
    println!("energy,{}", r.energy);
    println!("assignment,{}", labels_string(&r.assignment));
    println!("visited,{}", r.visited);
    Ok(())
}

#[derive(Clone, Copy, ValueEnum)]
enum DecompKindArg {
    Star,
    Tree,
    Grid,
}

#[derive(Args)]
struct DecomposeArgs {
    /// Problem file in ncop format.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: Option<DecompKindArg>,
    /// Grid height (grid kind only).
    #[arg(long)]
    rows: Option<usize>,
    /// Grid width (grid kind only).
    #[arg(long)]
    cols: Option<usize>,
    /// Emit every term: `u <sub> <var> <coeff>` and `b <sub> <i> <j> <coeff>`.
    #[arg(long)]
    dump: bool,
}

fn cmd_decompose(a: DecomposeArgs) -> Result<(), CliError> {
    let kind = a.kind.unwrap_or(DecompKindArg::Star);
    let p = ncop::read_file(&a.input)?;
    println!("# input {}", a.input.display());
    println!("# kind {}", enum_name(kind));
    let d = match kind {
        DecompKindArg::Star => straightforward_decomposition(&p),
        DecompKindArg::Tree => spanning_tree_decomposition(&p, &default_tree_set(&p)?)?,
        DecompKindArg::Grid => {
            let (rows, cols) = match (a.rows, a.cols) {
                (Some(r), Some(c)) => (r, c),
                _ => {
                    return Err(CliError::Usage(
                        "--kind grid needs --rows and --cols".into(),
                    ))
                }
            };
            grid_hv_decomposition(&p, rows, cols)?
        }
    };
    validate_decomposition(&p, &d)?;
    println!("subs,{}", d.num_subs());
    for sub in 0..d.num_subs() {
        println!(
            "sub,{},unary_terms,{},edge_terms,{}",
            sub,
            d.unary_terms(sub).len(),
            d.edge_terms(sub).len()
        );
    }
    if a.dump {
        for sub in 0..d.num_subs() {
            for (var, coeff) in d.unary_terms(sub) {
                println!("u {sub} {var} {coeff}");
            }
            for (e, coeff) in d.edge_terms(sub) {
                let edge = p.edge(e);
                println!("b {sub} {} {} {coeff}", edge.i, edge.j);
            }
        }
    }
    println!("valid,true");
    if matches!(kind, DecompKindArg::Star | DecompKindArg::Tree) {
        println!("spanning_trees,{}", count_spanning_trees(&p)?);
    }
    Ok(())
}

#[derive(Args)]
struct PropagationArgs {
    /// Problem file in ncop format.
    #[arg(long)]
    input: PathBuf,
    #[arg(long, value_enum)]
    kind: Option<MatrixArg>,
    /// Emit sparse triplets `i j w` instead of dense CSV rows.
    #[arg(long)]
    dump: bool,
}

fn cmd_propagation(a: PropagationArgs) -> Result<(), CliError> {
    let kind = a.kind.unwrap_or(MatrixArg::Neighbor);
    let p = ncop::read_file(&a.input)?;
    println!("# input {}", a.input.display());
    println!("# kind {}", enum_name(kind));
    let w = build_matrix(&p, kind)?;
    println!("n,{}", w.n());
    if a.dump {
        for (i, j, weight) in w.triplets() {
            println!("{i} {j} {weight}");
        }
    } else {
        for i in 0..w.n() {
            let mut dense = vec![0.0f64; w.n()];
            for &(j, weight) in w.row(i) {
                dense[j] = weight;
            }
            let row: Vec<String> = dense.iter().map(ToString::to_string).collect();
            println!("{}", row.join(","));
        }
    }
    Ok(())
}

#[derive(Args)]
struct BenchArgs {
    #[arg(long, value_enum)]
    suite: Option<SuiteArg>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    threads: Option<usize>,
}

fn cmd_bench(a: BenchArgs) -> Result<(), CliError> {
    let suite = a.suite.unwrap_or(SuiteArg::Small);
    let seed = a.seed.unwrap_or(0);
    let threads = a.threads.unwrap_or(1);
    println!("# suite {} seed {} threads {}", enum_name(suite), seed, threads);

    let sizes: &[usize] = match suite {
        SuiteArg::Small => &[4, 6, 8],
        SuiteArg::Medium => &[5, 7, 9, 10],
    };
    let mut instances: Vec<(String, Problem)> = Vec::new();
    let mut s = seed;
    for &n in sizes {
        for (label, topo) in [
            (format!("chain{n}"), Topology::Chain(n)),
            (format!("tree{n}"), Topology::RandomTree(n)),
            (format!("ring{n}"), Topology::Ring(n)),
        ] {
            instances.push((label, gen::problem_with_random_domains(&topo, 2..=4, s)));
            s += 1;
        }
        instances.push((
            "simple5".into(),
            gen::problem_with_random_domains(&Topology::Simple5, 2..=4, s),
        ));
        s += 1;
    }

    println!("instance,topology,n,oracle,best,gap,certified");
    let mut certified = 0usize;
    let mut max_gap = 0.0f64;
    for (idx, (label, p)) in instances.iter().enumerate() {
        let exact = brute_force_min(p)?;
        let tree_cfg = SolverConfig {
            schedule: LambdaSchedule::Constant(0.0),
            max_iter: 4,
            threads,
            ..SolverConfig::default()
        };
        let star_cfg = SolverConfig {
            schedule: LambdaSchedule::Constant(0.9),
            max_iter: 120,
            threads,
            ..SolverConfig::default()
        };
        let tree_out = run(p, &build_decomposition(p, DecompArg::Tree)?, None, &tree_cfg)?;
        let star_out = run(p, &build_decomposition(p, DecompArg::Star)?, None, &star_cfg)?;
        let best = tree_out.best_energy.min(star_out.best_energy);
        let has_cert = tree_out.certificate.is_some() || star_out.certificate.is_some();
        let gap = best - exact.energy;
        certified += usize::from(has_cert);
        max_gap = max_gap.max(gap);
        println!(
            "{},{},{},{},{},{},{}",
            idx,
            label,
            p.num_vars(),
            exact.energy,
            best,
            gap,
            has_cert
        );
    }
    println!("# certified {}/{} max_gap {}", certified, instances.len(), max_gap);
    Ok(())
}
