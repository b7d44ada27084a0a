//! `maxent` command line: fit a maximum-entropy density to CSV data,
//! evaluate or condition a saved model, and score rival models against
//! the fitted benchmark.

use std::fmt::Write as _;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use anyhow::{bail, Context, Result};
use clap::{ArgGroup, Args, Parser, Subcommand};

use maxent::{
    build_grid, compare_conditional, compare_unconditional, default_nodes_per_dim, evidence,
    fit_scaling, sample_moments, solve_dual, sweep_degrees, Dataset, MaxEntDensity, MaxEntFit,
    ModelFile, ModelScore, MomentBasis, RivalModel, SolverConfig, SolverError, SupportRegion,
    SweepOptions,
};

#[derive(Parser)]
#[command(
    name = "maxent",
    version,
    about = "Maximum-entropy density estimation with BIC model selection"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// Print the solver iteration trace.
    #[arg(long, global = true)]
    verbose: bool,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a density to CSV data, either at one degree or over a BIC-scored sweep.
    Fit(FitArgs),
    /// Evaluate a saved model at a point or as a plotting table.
    Eval(EvalArgs),
    /// Conditional density or expectation of the last column given the others.
    Conditional(ConditionalArgs),
    /// Score rival models against the fitted benchmark (model 0).
    Compare(CompareArgs),
}

#[derive(Args)]
#[command(group = ArgGroup::new("what").required(true).args(["degree", "sweep"]))]
struct FitArgs {
    /// CSV data: one observation per row, numeric columns, optional header.
    csv: PathBuf,

    /// Maximum monomial degree A of the moment basis.
    #[arg(long)]
    degree: Option<u32>,

    /// Comma-separated degrees to sweep, e.g. "2,4,6"; the BIC winner is kept.
    #[arg(long, value_name = "A,A,...")]
    sweep: Option<String>,

    /// Support region: "auto" (data box padded 10% per side),
    /// "box:lo,hi[;lo,hi...]", or "ball:R".
    #[arg(long, default_value = "auto")]
    support: String,

    /// Quadrature nodes per dimension (default 256/64/32 for K = 1/2/3).
    #[arg(long)]
    nodes: Option<usize>,

    /// Convergence tolerance on the gradient infinity norm.
    #[arg(long, default_value_t = 1e-8)]
    tol: f64,

    #[arg(long, default_value_t = 100)]
    max_iters: usize,

    /// Permit odd maximum degrees in --degree/--sweep.
    #[arg(long)]
    allow_odd: bool,

    /// Write the fitted model as JSON.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = ArgGroup::new("mode").required(true).args(["at", "table"]))]
struct EvalArgs {
    /// Model JSON produced by `maxent fit`.
    model: PathBuf,

    /// Comma-separated evaluation point, e.g. --at "0.5,0.2".
    #[arg(long)]
    at: Option<String>,

    /// Evaluation table with this many points per dimension.
    #[arg(long)]
    table: Option<usize>,

    /// Write the table as CSV instead of printing it.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
#[command(group = ArgGroup::new("mode").required(true).args(["expect", "table"]))]
struct ConditionalArgs {
    /// Model JSON fitted on (X, Y) columns with Y last.
    model: PathBuf,

    /// Comma-separated conditioning point for the X columns.
    #[arg(long)]
    given: String,

    /// Print the conditional expectation E[Y | X = x].
    #[arg(long)]
    expect: bool,

    /// Conditional density table over this many quadrature nodes.
    #[arg(long)]
    table: Option<usize>,

    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct CompareArgs {
    /// The CSV the benchmark was fitted on (fingerprint checked).
    #[arg(long)]
    data: PathBuf,

    /// Benchmark model JSON (the joint model in conditional mode).
    #[arg(long)]
    benchmark: PathBuf,

    /// Marginal model JSON fitted on the X columns (conditional mode).
    #[arg(long, requires = "conditional")]
    marginal: Option<PathBuf>,

    /// Compare conditional models of the last column given the others.
    #[arg(long, requires = "marginal")]
    conditional: bool,

    /// Rival model as "name:logL:K"; repeatable.
    #[arg(long = "rival", value_name = "NAME:LOGL:K")]
    rivals: Vec<String>,

    /// Write the JSON report here (otherwise printed after the table).
    #[arg(long)]
    out: Option<PathBuf>,
}

fn main() -> Result<()> {
    init_threads();
    let cli = Cli::parse();
    match cli.command {
        Command::Fit(args) => cmd_fit(args, cli.verbose),
        Command::Eval(args) => cmd_eval(args),
        Command::Conditional(args) => cmd_conditional(args),
        Command::Compare(args) => cmd_compare(args),
    }
}

/// MAXENT_THREADS caps the rayon pool used for row and node evaluation.
fn init_threads() {
    if let Ok(value) = std::env::var("MAXENT_THREADS") {
        match value.parse::<usize>() {
            Ok(n) if n >= 1 => {
                let _ = rayon::ThreadPoolBuilder::new()
                    .num_threads(n)
                    .build_global();
            }
            _ => eprintln!("warning: ignoring invalid MAXENT_THREADS value `{value}`"),
        }
    }
}

fn cmd_fit(args: FitArgs, verbose: bool) -> Result<()> {
    let text = std::fs::read_to_string(&args.csv)
        .with_context(|| format!("cannot read {}", args.csv.display()))?;
    let data = Dataset::from_csv_str(&text)
        .with_context(|| format!("cannot parse {}", args.csv.display()))?;
    let support = parse_support(&args.support, Some(&data))?;
    let config = SolverConfig {
        grad_tol: args.tol,
        max_iters: args.max_iters,
        ..SolverConfig::default()
    };
    let n = data.n_rows();

    let (fit, all_converged) = if let Some(sweep) = &args.sweep {
        let degrees = parse_degrees(sweep)?;
        let options = SweepOptions {
            nodes_per_dim: args.nodes,
            allow_odd: args.allow_odd,
        };
        let result = sweep_degrees(&data, &support, &degrees, &config, &options)?;
        println!("degree sweep over {} observations:", n);
        println!("{:>8} {:>6} {:>16} {:>16} {:>10}", "A", "L", "H_min", "evidence", "status");
        for df in &result.fits {
            println!(
                "{:>8} {:>6} {:>16.9} {:>16.4} {:>10}",
                df.degree,
                df.fit.n_params(),
                df.fit.h_min(),
                df.evidence,
                if df.fit.converged() { "ok" } else { "failed" }
            );
        }
        println!("selected A={}", result.selected_degree());
        let all_ok = result.fits.iter().all(|df| df.fit.converged());
        if verbose {
            print_trace(result.selected_fit());
        }
        (result.selected_fit().clone(), all_ok)
    } else {
        let degree = args.degree.expect("clap group guarantees one of the two");
        if degree % 2 == 1 && !args.allow_odd {
            bail!("degree {degree} is odd; pass --allow-odd to permit it");
        }
        if degree < 1 {
            bail!("degree must be at least 1");
        }
        let scaling = fit_scaling(&data, &support)?;
        let basis = MomentBasis::new(data.dim(), degree, scaling)?;
        let nodes = args
            .nodes
            .unwrap_or_else(|| default_nodes_per_dim(data.dim()))
            .max(degree as usize + 1);
        let grid = build_grid(&support, &basis, nodes)?;
        let moments = sample_moments(&data, &basis)?;
        match solve_dual(&grid, &moments, &config) {
            Ok(fit) => {
                if verbose {
                    print_trace(&fit);
                }
                (fit, true)
            }
            Err(SolverError::NotConverged {
                iterations,
                grad_norm,
                fit,
            }) => {
                if verbose {
                    print_trace(&fit);
                }
                print_summary(&fit, n)?;
                bail!(
                    "fit did not converge after {iterations} iterations \
                     (gradient norm {grad_norm:.3e}); no model written"
                );
            }
            Err(other) => return Err(other.into()),
        }
    };

    print_summary(&fit, n)?;
    if let Some(out) = &args.out {
        let stamp = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        let file = ModelFile::from_fit(&fit, data.fingerprint(), stamp);
        write_atomic(out, &file.to_json_string()?)?;
        println!("model written to {}", out.display());
    }
    if !all_converged {
        bail!("one or more sweep fits did not converge");
    }
    Ok(())
}

fn print_summary(fit: &MaxEntFit, n: usize) -> Result<()> {
    let log_lik = n as f64 * fit.dual_value();
    println!(
        "degree A = {}, L = {} moment functions, K = {} dimensions",
        fit.basis().max_degree(),
        fit.n_params(),
        fit.basis().dim()
    );
    println!("H_min (KL vs uniform prior): {:.12}", fit.h_min());
    println!(
        "log-likelihood: {:.6}, evidence: {:.6}",
        log_lik,
        evidence(log_lik, fit.n_params(), n)?
    );
    println!(
        "iterations: {}, final gradient norm: {:.3e}, converged: {}",
        fit.iterations(),
        fit.grad_norm_final(),
        fit.converged()
    );
    // mass recomputed by quadrature as an end-to-end check
    let grid = build_grid(fit.support(), fit.basis(), fit.nodes_per_dim())?;
    let density = MaxEntDensity::from_fit(fit.clone());
    let mass: f64 = (0..grid.n_nodes())
        .map(|q| grid.weights()[q] * density.density_at(grid.node_original(q)))
        .sum();
    println!("density mass on fit grid: {mass:.12}");
    if fit.n_params() <= 16 {
        let entries: Vec<String> = fit.lambda_hat().iter().map(|l| format!("{l:.6e}")).collect();
        println!("lambda_hat: [{}]", entries.join(", "));
    } else {
        let norm = fit.lambda_hat().iter().fold(0.0f64, |m, x| m.max(x.abs()));
        println!("lambda_hat: {} entries, max |entry| = {norm:.6e}", fit.n_params());
    }
    Ok(())
}

fn print_trace(fit: &MaxEntFit) {
    println!("{:>6} {:>20} {:>14} {:>10} {:>9}", "iter", "dual", "grad_norm", "ridge", "halvings");
    for r in fit.trace() {
        println!(
            "{:>6} {:>20.12} {:>14.3e} {:>10.1e} {:>9}",
            r.iteration, r.dual_value, r.grad_norm, r.ridge, r.halvings
        );
    }
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let density = model.to_density()?;
    let dim = density.dim();

    if let Some(at) = &args.at {
        let point = parse_point(at, dim)?;
        if !density.support().contains(&point) {
            eprintln!("warning: point lies outside the support; density is 0");
        }
        println!("{:?}", density.density_at(&point));
        return Ok(());
    }

    let points = args.table.expect("clap group guarantees one of the two");
    if points < 2 {
        bail!("--table needs at least 2 points per dimension");
    }
    let table = evaluation_table(&density, points);
    match &args.out {
        Some(path) => {
            write_atomic(path, &table)?;
            println!("evaluation table written to {}", path.display());
        }
        None => print!("{table}"),
    }
    Ok(())
}

fn evaluation_table(density: &MaxEntDensity, points: usize) -> String {
    let dim = density.dim();
    let bbox = density.support().bounding_box();
    let mut out = String::new();
    let header: Vec<String> = (1..=dim).map(|k| format!("x{k}")).collect();
    let _ = writeln!(out, "{},density", header.join(","));
    let mut index = vec![0usize; dim];
    let total = points.pow(dim as u32);
    let mut point = vec![0.0; dim];
    for _ in 0..total {
        for k in 0..dim {
            let (lo, hi) = bbox[k];
            point[k] = lo + (hi - lo) * index[k] as f64 / (points - 1) as f64;
        }
        let coords: Vec<String> = point.iter().map(|v| format!("{v:?}")).collect();
        let _ = writeln!(out, "{},{:?}", coords.join(","), density.density_at(&point));
        for k in (0..dim).rev() {
            index[k] += 1;
            if index[k] < points {
                break;
            }
            index[k] = 0;
        }
    }
    out
}

fn cmd_conditional(args: ConditionalArgs) -> Result<()> {
    let model = load_model(&args.model)?;
    let density = model.to_density()?;
    let dim = density.dim();
    if dim < 2 {
        bail!(
            "conditioning requires a model fitted on at least two columns \
             (this one has {dim}); the dependent variable is the last column"
        );
    }
    let x = parse_point(&args.given, dim - 1)?;
    if args.expect {
        let value = density.conditional_expectation(&x)?;
        println!("{value:?}");
        return Ok(());
    }
    let nodes = args.table.expect("clap group guarantees one of the two");
    let slice = density.conditional_slice(&x, nodes)?;
    let mut out = String::from("y,conditional_density\n");
    for (y, f) in slice.ys().iter().zip(slice.density()) {
        let _ = writeln!(out, "{y:?},{f:?}");
    }
    match &args.out {
        Some(path) => {
            write_atomic(path, &out)?;
            println!("conditional table written to {}", path.display());
        }
        None => print!("{out}"),
    }
    Ok(())
}

fn cmd_compare(args: CompareArgs) -> Result<()> {
    let text = std::fs::read_to_string(&args.data)
        .with_context(|| format!("cannot read {}", args.data.display()))?;
    let data = Dataset::from_csv_str(&text)?;
    let n = data.n_rows();
    let benchmark_file = load_model(&args.benchmark)?;
    benchmark_file
        .check_fingerprint(&data)
        .context("benchmark model does not match --data")?;
    let benchmark = benchmark_file.to_fit()?;
    let rivals = args
        .rivals
        .iter()
        .map(|s| parse_rival(s))
        .collect::<Result<Vec<_>>>()?;

    let scores = if args.conditional {
        let marginal_path = args.marginal.as_ref().expect("clap enforces the pairing");
        let marginal_file = load_model(marginal_path)?;
        let marginal = marginal_file.to_fit()?;
        if marginal_file.data_fingerprint.n_rows != n as u64 {
            bail!(
                "marginal model was fitted on {} rows but --data has {n}; \
                 fit it on the X columns of the same data",
                marginal_file.data_fingerprint.n_rows
            );
        }
        compare_conditional(n, &benchmark, &marginal, &rivals)?
    } else {
        compare_unconditional(n, &benchmark, &rivals)?
    };

    println!(
        "{:<20} {:>16} {:>6} {:>16} {:>12}",
        "model", "logL", "K", "evidence", "posterior"
    );
    for s in &scores {
        println!(
            "{:<20} {:>16.6} {:>6} {:>16.6} {:>12.6}",
            s.model_id, s.log_likelihood, s.k_params, s.evidence, s.posterior
        );
    }
    let p0 = scores[0].posterior;
    if p0 > 0.5 && scores.len() > 1 {
        println!(
            "note: the benchmark (model 0) dominates with posterior {p0:.3}; \
             none of the rival models fits the data well"
        );
    }
    let report = report_json(&scores, n, p0)?;
    match &args.out {
        Some(path) => {
            write_atomic(path, &report)?;
            println!("report written to {}", path.display());
        }
        None => print!("{report}"),
    }
    Ok(())
}

fn report_json(scores: &[ModelScore], n: usize, p0: f64) -> Result<String> {
    let value = serde_json::json!({
        "n": n,
        "models": scores,
        "benchmark_dominates": p0 > 0.5,
    });
    let mut text = serde_json::to_string_pretty(&value)?;
    text.push('\n');
    Ok(text)
}

fn load_model(path: &Path) -> Result<ModelFile> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("cannot read {}", path.display()))?;
    ModelFile::from_json_str(&text).with_context(|| format!("cannot parse {}", path.display()))
}

/// Atomic write: temp file in the target directory, then rename.
fn write_atomic(path: &Path, contents: &str) -> Result<()> {
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let mut tmp = tempfile::NamedTempFile::new_in(dir)
        .with_context(|| format!("cannot create temp file in {}", dir.display()))?;
    tmp.write_all(contents.as_bytes())?;
    tmp.persist(path)
        .with_context(|| format!("cannot write {}", path.display()))?;
    Ok(())
}

fn parse_degrees(spec: &str) -> Result<Vec<u32>> {
    spec.split(',')
        .map(|s| {
            s.trim()
                .parse::<u32>()
                .with_context(|| format!("invalid degree `{s}` in sweep list"))
        })
        .collect()
}

fn parse_point(spec: &str, dim: usize) -> Result<Vec<f64>> {
    let values = spec
        .split(',')
        .map(|s| {
            let v = s
                .trim()
                .parse::<f64>()
                .with_context(|| format!("invalid coordinate `{s}`"))?;
            if !v.is_finite() {
                bail!("coordinate `{s}` is not finite");
            }
            Ok(v)
        })
        .collect::<Result<Vec<f64>>>()?;
    if values.len() != dim {
        bail!("expected {dim} coordinates, got {}", values.len());
    }
    Ok(values)
}

/// "auto" | "box:lo,hi[;lo,hi...]" | "ball:R".
fn parse_support(spec: &str, data: Option<&Dataset>) -> Result<SupportRegion> {
    if spec == "auto" {
        let data = data.context("--support auto needs data")?;
        let mut bounds = Vec::with_capacity(data.dim());
        for k in 0..data.dim() {
            let (lo, hi) = data.column_range(k);
            let range = hi - lo;
            if range <= 0.0 {
                bail!(
                    "column {} has zero range; auto support would be degenerate, \
                     pass --support explicitly",
                    k + 1
                );
            }
            bounds.push((lo - 0.1 * range, hi + 0.1 * range));
        }
        return Ok(SupportRegion::bounded_box(bounds)?);
    }
    if let Some(rest) = spec.strip_prefix("box:") {
        let bounds = rest
            .split(';')
            .map(|pair| {
                let (lo, hi) = pair
                    .split_once(',')
                    .with_context(|| format!("bad box bound `{pair}`, expected lo,hi"))?;
                Ok((lo.trim().parse::<f64>()?, hi.trim().parse::<f64>()?))
            })
            .collect::<Result<Vec<(f64, f64)>>>()?;
        if let Some(data) = data {
            if bounds.len() != data.dim() {
                bail!(
                    "support has {} dimensions but data has {}",
                    bounds.len(),
                    data.dim()
                );
            }
        }
        return Ok(SupportRegion::bounded_box(bounds)?);
    }
    if let Some(rest) = spec.strip_prefix("ball:") {
        let radius = rest.trim().parse::<f64>().context("bad ball radius")?;
        let dim = data.map(|d| d.dim()).unwrap_or(1);
        return Ok(SupportRegion::ball(radius, dim)?);
    }
    bail!("unrecognized support `{spec}`; use auto, box:lo,hi[;lo,hi...], or ball:R")
}

fn parse_rival(spec: &str) -> Result<RivalModel> {
    let (rest, k) = spec
        .rsplit_once(':')
        .context("rival must be name:logL:K")?;
    let (name, logl) = rest
        .rsplit_once(':')
        .context("rival must be name:logL:K")?;
    if name.is_empty() {
        bail!("rival name must be nonempty in `{spec}`");
    }
    let log_likelihood = logl
        .trim()
        .parse::<f64>()
        .with_context(|| format!("bad rival log-likelihood in `{spec}`"))?;
    let k_params = k
        .trim()
        .parse::<usize>()
        .with_context(|| format!("bad rival parameter count in `{spec}`"))?;
    Ok(RivalModel::new(name, log_likelihood, k_params))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_box_support() {
        let s = parse_support("box:0,1;-2,3", None).unwrap();
        match s {
            SupportRegion::Box { bounds } => {
                assert_eq!(bounds, vec![(0.0, 1.0), (-2.0, 3.0)]);
            }
            _ => panic!("expected box"),
        }
    }

    #[test]
    fn parses_ball_support() {
        let data = Dataset::from_csv_str("0.1,0.1\n-0.2,0.3\n").unwrap();
        let s = parse_support("ball:2.5", Some(&data)).unwrap();
        assert_eq!(s, SupportRegion::ball(2.5, 2).unwrap());
    }

    #[test]
    fn auto_support_pads_ten_percent() {
        let data = Dataset::from_csv_str("0\n10\n").unwrap();
        let s = parse_support("auto", Some(&data)).unwrap();
        match s {
            SupportRegion::Box { bounds } => {
                assert!((bounds[0].0 + 1.0).abs() < 1e-12);
                assert!((bounds[0].1 - 11.0).abs() < 1e-12);
            }
            _ => panic!("expected box"),
        }
    }

    #[test]
    fn auto_support_rejects_constant_column() {
        let data = Dataset::from_csv_str("3\n3\n3\n").unwrap();
        assert!(parse_support("auto", Some(&data)).is_err());
    }

    #[test]
    fn rejects_unknown_support() {
        assert!(parse_support("sphere:1", None).is_err());
    }

    #[test]
    fn parses_rival_with_colon_in_name() {
        let r = parse_rival("ols:v2:-123.5:3").unwrap();
        assert_eq!(r.id, "ols:v2");
        assert_eq!(r.log_likelihood, -123.5);
        assert_eq!(r.k_params, 3);
    }

    #[test]
    fn rejects_malformed_rival() {
        assert!(parse_rival("noparts").is_err());
        assert!(parse_rival("name:abc:2").is_err());
        assert!(parse_rival(":1:2").is_err());
    }

    #[test]
    fn parses_point_with_dimension_check() {
        assert_eq!(parse_point("0.5, 1.5", 2).unwrap(), vec![0.5, 1.5]);
        assert!(parse_point("0.5", 2).is_err());
        assert!(parse_point("a,b", 2).is_err());
    }

    #[test]
    fn parses_degree_list() {
        assert_eq!(parse_degrees("2, 4,6").unwrap(), vec![2, 4, 6]);
        assert!(parse_degrees("2,x").is_err());
    }
}
