//! Vehicle platoon benchmark with a predecessor-follower information
//! structure.
//!
//! State ordering is `[p_0..p_{n-1}, v_0..v_{n-1}]`. Outputs are grouped per
//! vehicle: the leader measures `(p_0, v_0)`, follower `i` measures
//! `(p_{i-1} - p_i, v_i)`.

use std::fmt::Write as _;
use std::time::Instant;

use gss_qp::{Method, SolverSettings, SolverStatus};
use log::info;
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::binalg::{bool_mul, BinMatrix};
use crate::error::{CoreError, Result};
use crate::gss::{gss_parametrize, qi_pattern_witnesses, ymax, GssSpec};
use crate::robust::{synthesize, Certification, CostSpec, DisturbanceSet, SynthesisResult};
use crate::rollout::{
    fmt_num, simulate_explicit, vertex_sweep, ImplicitController, SweepReport, Trajectory,
};
use crate::stacked::{
    stack_info_structure, ConstraintSet, InfoStructure, StackedSystem, SystemModel,
};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PlatoonConfig {
    pub n_vehicles: usize,
    /// kg
    pub mass: f64,
    /// s
    pub ts: f64,
    pub horizon: usize,
    /// N
    pub thrust_limit: f64,
    /// m
    pub safety_distance: f64,
    /// m
    pub dist_pos: f64,
    /// m/s
    pub dist_vel: f64,
    pub stage_pos_weight: f64,
    pub stage_vel_weight: f64,
    pub terminal_pos_weight: f64,
    pub terminal_vel_weight: f64,
    /// Gap between consecutive vehicles at rest when `x0` is not given.
    pub initial_spacing: f64,
    /// Distance of each target ahead of its start when `targets` is not given.
    pub target_offset: f64,
    /// `[p_0..p_{n-1}, v_0..v_{n-1}]`
    pub x0: Option<Vec<f64>>,
    pub targets: Option<Vec<f64>>,
}

impl Default for PlatoonConfig {
    fn default() -> Self {
        Self {
            n_vehicles: 8,
            mass: 1700.0,
            ts: 0.2,
            horizon: 15,
            thrust_limit: 20000.0,
            safety_distance: 2.0,
            dist_pos: 0.1,
            dist_vel: 0.1,
            stage_pos_weight: 0.01,
            stage_vel_weight: 0.002,
            terminal_pos_weight: 0.2,
            terminal_vel_weight: 0.2,
            initial_spacing: 5.0,
            target_offset: 10.0,
            x0: None,
            targets: None,
        }
    }
}

impl PlatoonConfig {
    pub fn initial_state(&self) -> DVector<f64> {
        match &self.x0 {
            Some(x) => DVector::from_column_slice(x),
            None => {
                let n = self.n_vehicles;
                DVector::from_fn(2 * n, |i, _| {
                    if i < n {
                        -self.initial_spacing * i as f64
                    } else {
                        0.0
                    }
                })
            }
        }
    }

    pub fn target_positions(&self) -> DVector<f64> {
        match &self.targets {
            Some(t) => DVector::from_column_slice(t),
            None => {
                let x0 = self.initial_state();
                DVector::from_fn(self.n_vehicles, |i, _| x0[i] + self.target_offset)
            }
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CoreError::Invalid(msg));
        if self.n_vehicles < 1 || self.horizon < 1 {
            return bad("need at least one vehicle and a horizon of at least one step".into());
        }
        let positive = [
            ("mass", self.mass),
            ("ts", self.ts),
            ("thrust_limit", self.thrust_limit),
            ("safety_distance", self.safety_distance),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return bad(format!("{name} must be positive, got {v}"));
            }
        }
        let nonneg = [
            ("dist_pos", self.dist_pos),
            ("dist_vel", self.dist_vel),
            ("stage_pos_weight", self.stage_pos_weight),
            ("stage_vel_weight", self.stage_vel_weight),
            ("terminal_pos_weight", self.terminal_pos_weight),
            ("terminal_vel_weight", self.terminal_vel_weight),
        ];
        for (name, v) in nonneg {
            if !(v >= 0.0 && v.is_finite()) {
                return bad(format!("{name} must be nonnegative, got {v}"));
            }
        }
        let n = self.n_vehicles;
        if self.x0.as_ref().is_some_and(|x| x.len() != 2 * n) {
            return bad(format!("x0 must have {} entries", 2 * n));
        }
        if self.targets.as_ref().is_some_and(|t| t.len() != n) {
            return bad(format!("targets must have {n} entries"));
        }
        let x0 = self.initial_state();
        for i in 1..n {
            let gap = x0[i - 1] - x0[i];
            if gap < self.safety_distance {
                return bad(format!(
                    "initial gap {gap} between vehicles {} and {i} is below the safety distance",
                    i - 1
                ));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct PlatoonModel {
    pub sys: SystemModel,
    pub cons: ConstraintSet,
    pub cost: CostSpec,
    pub dist: DisturbanceSet,
    pub info: InfoStructure,
    pub x0: DVector<f64>,
}

/// Output matrix: rows `2i, 2i+1` belong to vehicle `i`.
pub fn output_matrix(n: usize) -> DMatrix<f64> {
    let mut c = DMatrix::zeros(2 * n, 2 * n);
    c[(0, 0)] = 1.0;
    for i in 1..n {
        c[(2 * i, i - 1)] = 1.0;
        c[(2 * i, i)] = -1.0;
    }
    for i in 0..n {
        c[(2 * i + 1, n + i)] = 1.0;
    }
    c
}

/// Each vehicle sees its own two outputs: `I_n ⊗ [1 1]`.
pub fn local_pattern(n: usize) -> BinMatrix {
    BinMatrix::identity(n).kron(&BinMatrix::ones(1, 2))
}

pub fn build_platoon(cfg: &PlatoonConfig) -> Result<PlatoonModel> {
    cfg.validate()?;
    let n = cfg.n_vehicles;
    let nx = 2 * n;
    let mut ac = DMatrix::zeros(nx, nx);
    let mut bc = DMatrix::zeros(nx, n);
    for i in 0..n {
        ac[(i, n + i)] = 1.0;
        bc[(n + i, i)] = 1.0 / cfg.mass;
    }
    let eye = DMatrix::identity(nx, nx);
    let a = &eye + &ac * cfg.ts;
    let b = (&eye + &ac * (cfg.ts / 2.0)) * &bc * cfg.ts;
    let sys = SystemModel::new(a, b, output_matrix(n), eye.clone(), eye)?;

    // |u_i| <= thrust, then p_{i-1} - p_i >= safety
    let s = 2 * n + (n - 1);
    let mut u = DMatrix::zeros(s, nx);
    let mut v = DMatrix::zeros(s, n);
    let mut bvec = DVector::zeros(s);
    for i in 0..n {
        v[(2 * i, i)] = 1.0;
        v[(2 * i + 1, i)] = -1.0;
        bvec[2 * i] = cfg.thrust_limit;
        bvec[2 * i + 1] = cfg.thrust_limit;
    }
    let spacing = spacing_rows(n);
    u.view_mut((2 * n, 0), (n - 1, nx)).copy_from(&spacing);
    bvec.rows_mut(2 * n, n - 1).fill(-cfg.safety_distance);
    let cons = ConstraintSet {
        u,
        v,
        b: bvec,
        r: spacing,
        z: DVector::from_element(n - 1, -cfg.safety_distance),
    };

    let weights = |pos: f64, vel: f64| DVector::from_fn(nx, |i, _| if i < n { pos } else { vel });
    let targets = cfg.target_positions();
    let reference = DVector::from_fn(nx, |i, _| if i < n { targets[i] } else { 0.0 });
    let horizon = cfg.horizon;
    let mut state_weights = vec![weights(cfg.stage_pos_weight, cfg.stage_vel_weight); horizon];
    state_weights.push(weights(cfg.terminal_pos_weight, cfg.terminal_vel_weight));
    let cost = CostSpec {
        state_weights,
        input_weights: vec![DVector::zeros(n); horizon],
        state_refs: vec![reference; horizon + 1],
    };
    let dist = DisturbanceSet::Box {
        half_width: weights(cfg.dist_pos, cfg.dist_vel),
    };
    let info = InfoStructure::uniform(horizon, &local_pattern(n));
    Ok(PlatoonModel {
        sys,
        cons,
        cost,
        dist,
        info,
        x0: cfg.initial_state(),
    })
}

/// Rows `-(p_{i-1} - p_i)` for `i = 1..n`.
fn spacing_rows(n: usize) -> DMatrix<f64> {
    let mut r = DMatrix::zeros(n - 1, 2 * n);
    for i in 1..n {
        r[(i - 1, i - 1)] = -1.0;
        r[(i - 1, i)] = 1.0;
    }
    r
}

/// Quadratically invariant restriction of `I_n ⊗ [1 1]`: even-indexed
/// vehicles keep both of their outputs, odd-indexed vehicles none, except a
/// last odd vehicle which keeps its velocity.
pub fn qi_subset_t(n: usize) -> BinMatrix {
    let mut t = BinMatrix::zeros(n, 2 * n);
    for a in 0..n {
        if a % 2 == 0 {
            t.set(a, 2 * a, true);
            t.set(a, 2 * a + 1, true);
        } else if a == n - 1 {
            t.set(a, 2 * a + 1, true);
        }
    }
    t
}

/// Information relaxation where every vehicle forwards all it knows to its
/// follower with a one-step delay: vehicle `a` knows the outputs of vehicle
/// `b <= a` up to time `k - (a - b)`.
pub fn relaxed_superset(n: usize, horizon: usize) -> InfoStructure {
    let mut info = InfoStructure::new(horizon);
    for k in 0..horizon {
        for j in 0..=k {
            let block = BinMatrix::from_fn(n, 2 * n, |a, col| {
                let b = col / 2;
                b <= a && a - b <= k - j
            });
            info.set(k, j, block);
        }
    }
    info
}

#[derive(Debug, Clone)]
pub struct BenchmarkOptions {
    /// Defaults to the interior-point method: the robust platoon programs are
    /// degenerate enough that the operator-splitting iteration stalls.
    pub settings: SolverSettings,
    /// Vertex rollouts per upper-bound controller.
    pub sweep_budget: usize,
    /// Random disturbance sequences for the explicit/implicit comparison.
    pub equivalence_samples: usize,
    pub seed: u64,
}

impl Default for BenchmarkOptions {
    fn default() -> Self {
        Self {
            settings: SolverSettings {
                method: Method::InteriorPoint,
                ..SolverSettings::default()
            },
            sweep_budget: 10_000,
            equivalence_samples: 100,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct VariantReport {
    pub name: &'static str,
    pub dim: usize,
    pub result: SynthesisResult,
    pub solve_seconds: f64,
    /// Disturbance-free closed-loop trajectory.
    pub nominal: Trajectory,
    pub sweep: Option<SweepReport>,
    /// Largest explicit/implicit trajectory difference.
    pub equivalence_gap: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct BenchmarkReport {
    pub config: PlatoonConfig,
    pub gss: VariantReport,
    pub qi: VariantReport,
    pub low: VariantReport,
    /// Witnesses of `S CB S` leaving `Sparse(S)`.
    pub non_qi_witnesses: usize,
}

impl BenchmarkReport {
    pub fn all_optimal(&self) -> bool {
        [&self.gss, &self.qi, &self.low]
            .iter()
            .all(|v| v.result.status == SolverStatus::Optimal)
    }

    /// `J_low <= J_GSS <= J_QI` up to a relative slack.
    pub fn ordering_holds(&self, rel_tol: f64) -> bool {
        let (jg, jq, jl) = self.objectives();
        let tol = rel_tol * (1.0 + jq.abs());
        jl <= jg + tol && jl <= jq + tol && jg <= jq + tol
    }

    pub fn objectives(&self) -> (f64, f64, f64) {
        (
            self.gss.result.objective,
            self.qi.result.objective,
            self.low.result.objective,
        )
    }

    /// `(J_GSS - J_low) / J_low`
    pub fn suboptimality_gap(&self) -> f64 {
        let (jg, _, jl) = self.objectives();
        (jg - jl) / jl
    }

    /// `1 - J_GSS / J_QI`
    pub fn improvement_over_qi(&self) -> f64 {
        let (jg, jq, _) = self.objectives();
        1.0 - jg / jq
    }

    /// `key = value` lines.
    pub fn to_text(&self) -> String {
        let mut s = String::from("# gss-platoon-report v1\n");
        let cfg = &self.config;
        let vec_str = |v: &DVector<f64>| {
            let items: Vec<String> = v.iter().map(|x| fmt_num(*x)).collect();
            format!("[{}]", items.join(", "))
        };
        let _ = writeln!(s, "n_vehicles = {}", cfg.n_vehicles);
        let _ = writeln!(s, "horizon = {}", cfg.horizon);
        let _ = writeln!(s, "x0 = {}", vec_str(&cfg.initial_state()));
        let _ = writeln!(s, "targets = {}", vec_str(&cfg.target_positions()));
        let _ = writeln!(s, "non_qi_witnesses = {}", self.non_qi_witnesses);
        for v in [&self.gss, &self.qi, &self.low] {
            let r = &v.result;
            let _ = writeln!(s, "\n[{}]", v.name);
            let _ = writeln!(s, "status = \"{}\"", r.status);
            let _ = writeln!(s, "objective = {}", fmt_num(r.objective));
            let _ = writeln!(s, "dim = {}", v.dim);
            let _ = writeln!(s, "iterations = {}", r.iterations);
            let _ = writeln!(s, "solve_seconds = {}", fmt_num(v.solve_seconds));
            let _ = writeln!(
                s,
                "sparsity_preserving = {}",
                r.certification.sparsity_preserving
            );
            let _ = writeln!(s, "l_in_s = {}", r.certification.l_in_s);
            let _ = writeln!(s, "l_violation = {}", fmt_num(r.certification.l_violation));
            let _ = writeln!(s, "qi_subspace = {}", r.certification.qi_subspace);
            let _ = writeln!(s, "min_worst_case_slack = {}", fmt_num(r.min_slack()));
            if let Some(sw) = &v.sweep {
                let _ = writeln!(s, "sweep_rollouts = {}", sw.rollouts);
                let _ = writeln!(s, "sweep_exhaustive = {}", sw.exhaustive);
                let _ = writeln!(s, "sweep_worst_slack = {}", fmt_num(sw.worst_slack));
            }
            if let Some(gap) = v.equivalence_gap {
                let _ = writeln!(s, "explicit_implicit_gap = {}", fmt_num(gap));
            }
        }
        let _ = writeln!(s, "\n[summary]");
        let _ = writeln!(s, "ordering = {}", self.ordering_holds(1e-9));
        let _ = writeln!(
            s,
            "improvement_over_qi = {}",
            fmt_num(self.improvement_over_qi())
        );
        let _ = writeln!(
            s,
            "suboptimality_gap = {}",
            fmt_num(self.suboptimality_gap())
        );
        s
    }

    pub fn summary_table(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(
            s,
            "{:<10} {:>16} {:>6} {:>10} {:>8} {:>14}",
            "variant", "J", "dim", "status", "L in S", "min slack"
        );
        for v in [&self.gss, &self.qi, &self.low] {
            let r = &v.result;
            let _ = writeln!(
                s,
                "{:<10} {:>16} {:>6} {:>10} {:>8} {:>14}",
                v.name,
                fmt_num(r.objective),
                v.dim,
                r.status.to_string(),
                r.certification.l_in_s,
                fmt_num(r.min_slack())
            );
        }
        let _ = writeln!(
            s,
            "J_low <= J_GSS <= J_QI: {}; GSS improves on QI by {:.2}%; worst-case suboptimality {:.2}%",
            self.ordering_holds(1e-9),
            100.0 * self.improvement_over_qi(),
            100.0 * self.suboptimality_gap()
        );
        s
    }
}

/// The three parameter subspaces of the benchmark on a lifted system.
pub struct BenchmarkSpecs {
    pub gss: GssSpec,
    pub qi: GssSpec,
    pub low: GssSpec,
}

pub fn benchmark_specs(ss: &StackedSystem, n_vehicles: usize) -> Result<BenchmarkSpecs> {
    let gss = gss_parametrize(&ss.sbold, &ymax(&ss.sbold), &ss.cb)?;
    let tbold = stack_info_structure(
        &InfoStructure::uniform(ss.horizon, &qi_subset_t(n_vehicles)),
        ss.m,
        ss.p,
    )?;
    let qi = gss_parametrize(&tbold, &bool_mul(&tbold, &ss.delta)?, &ss.cb)?;
    let relaxed = stack_info_structure(&relaxed_superset(n_vehicles, ss.horizon), ss.m, ss.p)?;
    let low = gss_parametrize(&relaxed, &bool_mul(&relaxed, &ss.delta)?, &ss.cb)?;
    Ok(BenchmarkSpecs { gss, qi, low })
}

fn random_box_sequence(
    rng: &mut ChaCha8Rng,
    half_width: &DVector<f64>,
    horizon: usize,
) -> Vec<DVector<f64>> {
    (0..horizon)
        .map(|_| {
            DVector::from_fn(half_width.len(), |i, _| {
                rng.random_range(-1.0..=1.0) * half_width[i]
            })
        })
        .collect()
}

pub fn run_benchmark(cfg: &PlatoonConfig, opts: &BenchmarkOptions) -> Result<BenchmarkReport> {
    let model = build_platoon(cfg)?;
    let ss = StackedSystem::new(&model.sys, &model.cons, &model.info, &model.x0)?;
    let non_qi_witnesses = qi_pattern_witnesses(&ss.sbold, &ss.delta)?.len();
    let specs = benchmark_specs(&ss, cfg.n_vehicles)?;
    let horizon = cfg.horizon;
    let zero_w = vec![DVector::zeros(ss.n); horizon];

    let run = |name: &'static str,
               spec: &GssSpec,
               cert: Certification,
               upper: bool|
     -> Result<VariantReport> {
        info!("{name}: solving over a {}-dimensional subspace", spec.dim());
        let start = Instant::now();
        let result = synthesize(&ss, spec, &model.cost, &model.dist, cert, &opts.settings)?;
        let solve_seconds = start.elapsed().as_secs_f64();
        info!(
            "{name}: J = {} ({}, {} iterations, {:.1} s)",
            result.objective, result.status, result.iterations, solve_seconds
        );
        let nominal = simulate_explicit(&model.sys, &result.l, &result.g, &model.x0, &zero_w)?;
        let (sweep, equivalence_gap) = if upper {
            let sweep = vertex_sweep(
                &model.sys,
                &result.l,
                &result.g,
                &model.x0,
                horizon,
                &model.cons,
                &model.dist,
                opts.sweep_budget,
                opts.seed,
            )?;
            let implicit = ImplicitController::new(&model.sys, &result.q, &result.g, horizon)?;
            let DisturbanceSet::Box { half_width } = &model.dist else {
                unreachable!("the platoon uses a box")
            };
            let mut rng = ChaCha8Rng::seed_from_u64(opts.seed ^ 0x5eed);
            let mut gap = 0.0f64;
            for _ in 0..opts.equivalence_samples {
                let w = random_box_sequence(&mut rng, half_width, horizon);
                let a = simulate_explicit(&model.sys, &result.l, &result.g, &model.x0, &w)?;
                let b = implicit.simulate(&model.sys, &model.x0, &w)?;
                gap = gap.max(a.max_difference(&b));
            }
            (Some(sweep), Some(gap))
        } else {
            (None, None)
        };
        Ok(VariantReport {
            name,
            dim: spec.dim(),
            result,
            solve_seconds,
            nominal,
            sweep,
            equivalence_gap,
        })
    };

    // the three solves are independent
    let (gss, qi, low) = std::thread::scope(|scope| {
        let gss = scope.spawn(|| run("gss", &specs.gss, Certification::Required, true));
        let qi = scope.spawn(|| run("qi_subset", &specs.qi, Certification::Required, true));
        let low = run("relaxed", &specs.low, Certification::Override, false);
        let join = |h: std::thread::ScopedJoinHandle<'_, Result<VariantReport>>| {
            h.join().unwrap_or_else(|e| std::panic::resume_unwind(e))
        };
        (join(gss), join(qi), low)
    });
    let (gss, qi, low) = (gss?, qi?, low?);
    Ok(BenchmarkReport {
        config: cfg.clone(),
        gss,
        qi,
        low,
        non_qi_witnesses,
    })
}
