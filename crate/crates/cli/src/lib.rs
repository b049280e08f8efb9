//! `gss` command-line front end. Exit status: 0 success, 1 infeasible or a
//! failed check, 2 malformed input.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Args, Parser, Subcommand};
use gss_core::binalg::{struct_of, BinMatrix};
use gss_core::gss::{
    audit_input_sharing, certify_sparsity_preserving, gss_parametrize, qi_pattern_witnesses,
    qi_subspace_residual, ymax, GssSpec,
};
use gss_core::io::{
    export_qp, parse_platoon_config, parse_problem, parse_real_matrix, ControllerFile, Problem,
};
use gss_core::platoon::{run_benchmark, BenchmarkOptions, PlatoonConfig};
use gss_core::robust::{assemble_qp, synthesize, SynthesisResult};
use gss_core::rollout::{fmt_num, simulate_explicit, verify_constraints, vertex_sweep};
use gss_core::CoreError;
use gss_qp::{Method, SolverSettings, SolverStatus};
use log::info;
use nalgebra::DVector;

#[derive(Debug, Parser)]
#[command(
    name = "gss",
    version,
    about = "Robust synthesis over generalized sparsity subspaces"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the largest Y with Y T <= T.
    Ymax { pattern: PathBuf },
    /// Check T <= S and Y T <= T, listing witnesses.
    Certify {
        #[arg(long)]
        t: PathBuf,
        /// Defaults to ymax(T).
        #[arg(long)]
        y: Option<PathBuf>,
        #[arg(long)]
        s: PathBuf,
        /// Block sizes `m p` for the input-sharing audit.
        #[arg(long, num_args = 2, value_names = ["M", "P"])]
        blocks: Option<Vec<usize>>,
    },
    /// Quadratic invariance of Sparse(T) against a pattern, and of the
    /// subspace {Q in Sparse(T) : Q G in Sparse(Y)} against G when G is given.
    QiCheck {
        #[arg(long)]
        t: PathBuf,
        /// Pattern of the plant; defaults to Struct(G).
        #[arg(long)]
        delta: Option<PathBuf>,
        /// Real matrix.
        #[arg(long)]
        g: Option<PathBuf>,
        /// Defaults to ymax(T).
        #[arg(long)]
        y: Option<PathBuf>,
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },
    /// Dimension and orthonormal basis of the subspace.
    Parametrize {
        #[arg(long)]
        t: PathBuf,
        /// Real matrix.
        #[arg(long)]
        g: PathBuf,
        /// Defaults to ymax(T).
        #[arg(long)]
        y: Option<PathBuf>,
    },
    /// Synthesize a robust controller for a problem file.
    Synth {
        problem: PathBuf,
        /// Controller file to write.
        #[arg(short, long)]
        output: Option<PathBuf>,
        /// Also sweep this many vertex disturbance sequences.
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Simulate a saved controller on a problem.
    Rollout {
        problem: PathBuf,
        controller: PathBuf,
        /// Real matrix with one disturbance per row; zero when absent.
        #[arg(long)]
        disturbance: Option<PathBuf>,
        /// Worst case over this many vertex sequences instead of one rollout.
        #[arg(long)]
        sweep: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Constraint slack below `-tol` counts as a violation.
        #[arg(long, default_value_t = 1e-6)]
        tol: f64,
        /// Trajectory table to write instead of printing it.
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
    /// Platoon benchmark: GSS, QI subset and relaxed lower bound.
    Platoon {
        /// TOML overrides of the default configuration.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        vehicles: Option<usize>,
        #[arg(long)]
        horizon: Option<usize>,
        #[arg(long, default_value_t = 10_000)]
        sweep: usize,
        #[arg(long, default_value_t = 100)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Full report to write.
        #[arg(short, long)]
        output: Option<PathBuf>,
        #[command(flatten)]
        solver: SolverArgs,
    },
    /// Write the assembled quadratic program as triplets.
    ExportQp {
        problem: PathBuf,
        #[arg(short, long)]
        output: Option<PathBuf>,
    },
}

#[derive(Debug, Clone, Default, Args)]
pub struct SolverArgs {
    /// `admm` or `ipm`.
    #[arg(long)]
    method: Option<String>,
    #[arg(long)]
    eps_abs: Option<f64>,
    #[arg(long)]
    eps_rel: Option<f64>,
    #[arg(long)]
    max_iter: Option<usize>,
}

impl SolverArgs {
    fn apply(&self, mut s: SolverSettings) -> anyhow::Result<SolverSettings> {
        if let Some(m) = &self.method {
            s.method = m.parse::<Method>()?;
        }
        if let Some(v) = self.eps_abs {
            s.eps_abs = v;
        }
        if let Some(v) = self.eps_rel {
            s.eps_rel = v;
        }
        if let Some(v) = self.max_iter {
            s.max_iter = v;
        }
        s.validate()?;
        Ok(s)
    }
}

/// A check ran to completion and came out negative.
#[derive(Debug)]
struct Negative;

fn read(path: &Path) -> anyhow::Result<String> {
    fs::read_to_string(path).with_context(|| format!("cannot read {}", path.display()))
}

fn read_pattern(path: &Path) -> anyhow::Result<BinMatrix> {
    read(path)?
        .parse()
        .with_context(|| format!("in {}", path.display()))
}

fn read_problem(path: &Path) -> anyhow::Result<Problem> {
    parse_problem(&read(path)?).with_context(|| format!("in {}", path.display()))
}

fn emit(output: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match output {
        Some(p) => fs::write(p, text).with_context(|| format!("cannot write {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn pairs(w: &[(usize, usize)]) -> String {
    let items: Vec<String> = w.iter().map(|(i, j)| format!("({i}, {j})")).collect();
    items.join(" ")
}

fn y_or_max(y: Option<&PathBuf>, t: &BinMatrix) -> anyhow::Result<BinMatrix> {
    match y {
        Some(p) => read_pattern(p),
        None => Ok(ymax(t)),
    }
}

fn cmd_certify(
    t: &Path,
    y: Option<&PathBuf>,
    s: &Path,
    blocks: Option<&[usize]>,
) -> anyhow::Result<()> {
    let t = read_pattern(t)?;
    let y = y_or_max(y, &t)?;
    let s = read_pattern(s)?;
    let cert = certify_sparsity_preserving(&t, &y, &s)?;
    let mut failed = !cert.passed();
    println!("t_leq_s = {}", cert.outside_s.is_empty());
    if !cert.outside_s.is_empty() {
        println!("t_outside_s = {}", pairs(&cert.outside_s));
    }
    println!("yt_leq_t = {}", cert.yt_excess.is_empty());
    if !cert.yt_excess.is_empty() {
        println!("yt_excess = {}", pairs(&cert.yt_excess));
    }
    if let Some(&[m, p]) = blocks {
        let violations = audit_input_sharing(&t, &y, m, p)?;
        println!("sharing_violations = {}", violations.len());
        for v in &violations {
            println!(
                "  u{}[{}] uses u{}[{}], which uses y{}[{}]",
                v.a, v.s, v.b, v.t, v.c, v.v
            );
        }
        failed |= !violations.is_empty();
    }
    println!("certified = {}", !failed);
    if failed {
        return Err(Negative.into());
    }
    Ok(())
}

fn cmd_qi_check(
    t: &Path,
    delta: Option<&PathBuf>,
    g: Option<&PathBuf>,
    y: Option<&PathBuf>,
    tol: f64,
) -> anyhow::Result<()> {
    let t = read_pattern(t)?;
    let g = g
        .map(|p| parse_real_matrix(&read(p)?).with_context(|| format!("in {}", p.display())))
        .transpose()?;
    let delta = match (delta, &g) {
        (Some(p), _) => read_pattern(p)?,
        (None, Some(g)) => struct_of(g, 0.0),
        (None, None) => bail!("qi-check needs --delta or --g"),
    };
    let witnesses = qi_pattern_witnesses(&t, &delta)?;
    let mut qi = witnesses.is_empty();
    println!("pattern_qi = {}", witnesses.is_empty());
    if !witnesses.is_empty() {
        println!("witnesses = {}", pairs(&witnesses));
    }
    if let Some(g) = &g {
        let y = y_or_max(y, &t)?;
        let spec = gss_parametrize(&t, &y, g)?;
        let residual = qi_subspace_residual(&spec, g)?;
        println!("subspace_dim = {}", spec.dim());
        println!("subspace_residual = {}", fmt_num(residual));
        println!("subspace_qi = {}", residual <= tol);
        qi &= residual <= tol;
    }
    if !qi {
        return Err(Negative.into());
    }
    Ok(())
}

fn describe_basis(spec: &GssSpec) -> String {
    let (rows, cols) = spec.shape();
    let mut s = format!("shape = {rows} {cols}\ndim = {}\n", spec.dim());
    for (k, el) in spec.basis.iter().enumerate() {
        let items: Vec<String> = el
            .entries
            .iter()
            .map(|(j, v)| format!("{j}:{}", fmt_num(*v)))
            .collect();
        let _ = writeln!(s, "element {k} row {} {}", el.row, items.join(" "));
    }
    s
}

fn synthesis_summary(r: &SynthesisResult) -> String {
    let c = &r.certification;
    let mut s = String::new();
    let _ = writeln!(s, "status = {}", r.status);
    let _ = writeln!(s, "objective = {}", fmt_num(r.objective));
    let _ = writeln!(s, "iterations = {}", r.iterations);
    let _ = writeln!(s, "sparsity_preserving = {}", c.sparsity_preserving);
    let _ = writeln!(s, "certification_overridden = {}", c.overridden);
    let _ = writeln!(s, "l_in_s = {}", c.l_in_s);
    let _ = writeln!(s, "l_violation = {}", fmt_num(c.l_violation));
    let _ = writeln!(s, "qi_subspace = {}", c.qi_subspace);
    let _ = writeln!(s, "min_worst_case_slack = {}", fmt_num(r.min_slack()));
    s
}

fn cmd_synth(
    path: &Path,
    output: Option<&Path>,
    sweep: Option<usize>,
    seed: u64,
    solver: &SolverArgs,
) -> anyhow::Result<()> {
    let settings = solver.apply(SolverSettings::default())?;
    let p = read_problem(path)?;
    let ss = p.stacked()?;
    let spec = p.spec(&ss)?;
    info!("parameter subspace of dimension {}", spec.dim());
    println!("dim = {}", spec.dim());
    let r = synthesize(&ss, &spec, &p.cost, &p.dist, p.certification, &settings)?;
    print!("{}", synthesis_summary(&r));
    if let Some(budget) = sweep {
        let rep = vertex_sweep(
            &p.sys, &r.l, &r.g, &p.x0, ss.horizon, &p.cons, &p.dist, budget, seed,
        )?;
        println!("sweep_rollouts = {}", rep.rollouts);
        println!("sweep_exhaustive = {}", rep.exhaustive);
        println!("sweep_worst_slack = {}", fmt_num(rep.worst_slack));
    }
    if let Some(out) = output {
        emit(Some(out), &ControllerFile::from_result(&ss, &r).to_toml())?;
    }
    if r.status != SolverStatus::Optimal {
        return Err(Negative.into());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_rollout(
    problem: &Path,
    controller: &Path,
    disturbance: Option<&PathBuf>,
    sweep: Option<usize>,
    seed: u64,
    tol: f64,
    output: Option<&Path>,
) -> anyhow::Result<()> {
    let p = read_problem(problem)?;
    let file = ControllerFile::parse(&read(controller)?)
        .with_context(|| format!("in {}", controller.display()))?;
    let horizon = p.horizon();
    let (n, m, pp) = (p.sys.n(), p.sys.m(), p.sys.p());
    if (file.n, file.m, file.p, file.horizon) != (n, m, pp, horizon) {
        bail!(CoreError::Invalid(format!(
            "controller is for n={} m={} p={} N={}, problem has n={n} m={m} p={pp} N={horizon}",
            file.n, file.m, file.p, file.horizon
        )));
    }
    let l = file.l_matrix()?;
    let g = file.g_vector();
    if let Some(budget) = sweep {
        let rep = vertex_sweep(
            &p.sys, &l, &g, &p.x0, horizon, &p.cons, &p.dist, budget, seed,
        )?;
        println!("sweep_rollouts = {}", rep.rollouts);
        println!("sweep_exhaustive = {}", rep.exhaustive);
        println!("sweep_worst_slack = {}", fmt_num(rep.worst_slack));
        if rep.worst_slack < -tol {
            return Err(Negative.into());
        }
        return Ok(());
    }
    let w: Vec<DVector<f64>> = match disturbance {
        None => vec![DVector::zeros(n); horizon],
        Some(path) => {
            let wm = parse_real_matrix(&read(path)?)
                .with_context(|| format!("in {}", path.display()))?;
            if wm.shape() != (horizon, n) {
                bail!(CoreError::Invalid(format!(
                    "disturbance file must be {horizon}x{n}, found {}x{}",
                    wm.nrows(),
                    wm.ncols()
                )));
            }
            (0..horizon).map(|k| wm.row(k).transpose()).collect()
        }
    };
    let traj = simulate_explicit(&p.sys, &l, &g, &p.x0, &w)?;
    let slacks = verify_constraints(&traj, &p.cons);
    emit(output, &traj.to_table(Some(&slacks)))?;
    eprintln!(
        "cost = {}, min_slack = {}",
        fmt_num(p.cost.evaluate(&traj.states, &traj.inputs)),
        fmt_num(slacks.min_slack)
    );
    if slacks.min_slack < -tol {
        return Err(Negative.into());
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_platoon(
    config: Option<&PathBuf>,
    vehicles: Option<usize>,
    horizon: Option<usize>,
    sweep: usize,
    samples: usize,
    seed: u64,
    output: Option<&Path>,
    solver: &SolverArgs,
) -> anyhow::Result<()> {
    let mut cfg = match config {
        Some(p) => {
            parse_platoon_config(&read(p)?).with_context(|| format!("in {}", p.display()))?
        }
        None => PlatoonConfig::default(),
    };
    if let Some(n) = vehicles {
        cfg.n_vehicles = n;
    }
    if let Some(h) = horizon {
        cfg.horizon = h;
    }
    cfg.validate()?;
    let defaults = BenchmarkOptions::default();
    let opts = BenchmarkOptions {
        settings: solver.apply(defaults.settings)?,
        sweep_budget: sweep,
        equivalence_samples: samples,
        seed,
    };
    let report = run_benchmark(&cfg, &opts)?;
    print!("{}", report.summary_table());
    if let Some(out) = output {
        emit(Some(out), &report.to_text())?;
    }
    if !report.all_optimal() || !report.ordering_holds(1e-9) {
        return Err(Negative.into());
    }
    Ok(())
}

fn cmd_export_qp(problem: &Path, output: Option<&Path>) -> anyhow::Result<()> {
    let p = read_problem(problem)?;
    let ss = p.stacked()?;
    let spec = p.spec(&ss)?;
    let qp = assemble_qp(&ss, &spec, &p.cost, &p.dist, p.certification)?;
    emit(output, &export_qp(&qp))
}

pub fn dispatch(cli: &Cli) -> anyhow::Result<()> {
    match &cli.command {
        Command::Ymax { pattern } => {
            print!("{}", ymax(&read_pattern(pattern)?));
            Ok(())
        }
        Command::Certify { t, y, s, blocks } => cmd_certify(t, y.as_ref(), s, blocks.as_deref()),
        Command::QiCheck {
            t,
            delta,
            g,
            y,
            tol,
        } => cmd_qi_check(t, delta.as_ref(), g.as_ref(), y.as_ref(), *tol),
        Command::Parametrize { t, g, y } => {
            let t = read_pattern(t)?;
            let y = y_or_max(y.as_ref(), &t)?;
            let g = parse_real_matrix(&read(g)?).with_context(|| format!("in {}", g.display()))?;
            let spec = gss_parametrize(&t, &y, &g)?;
            print!("{}", describe_basis(&spec));
            Ok(())
        }
        Command::Synth {
            problem,
            output,
            sweep,
            seed,
            solver,
        } => cmd_synth(problem, output.as_deref(), *sweep, *seed, solver),
        Command::Rollout {
            problem,
            controller,
            disturbance,
            sweep,
            seed,
            tol,
            output,
        } => cmd_rollout(
            problem,
            controller,
            disturbance.as_ref(),
            *sweep,
            *seed,
            *tol,
            output.as_deref(),
        ),
        Command::Platoon {
            config,
            vehicles,
            horizon,
            sweep,
            samples,
            seed,
            output,
            solver,
        } => cmd_platoon(
            config.as_ref(),
            *vehicles,
            *horizon,
            *sweep,
            *samples,
            *seed,
            output.as_deref(),
            solver,
        ),
        Command::ExportQp { problem, output } => cmd_export_qp(problem, output.as_deref()),
    }
}

/// Exit status for an error: 1 when the input was fine but the answer is
/// negative (infeasible, uncertified), 2 otherwise.
pub fn exit_status(err: &anyhow::Error) -> u8 {
    if err.is::<Negative>() {
        return 1;
    }
    match err.chain().find_map(|e| e.downcast_ref::<CoreError>()) {
        Some(CoreError::Uncertified(_) | CoreError::SolverStatus(_)) => 1,
        _ => 2,
    }
}

pub fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if !e.is::<Negative>() {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(exit_status(&e))
        }
    }
}

impl std::fmt::Display for Negative {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str("check failed")
    }
}

impl std::error::Error for Negative {}
