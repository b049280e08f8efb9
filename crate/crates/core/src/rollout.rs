//! Closed-loop simulation of finite-horizon affine policies.

use std::fmt::Write as _;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{dim_err, Result};
use crate::robust::DisturbanceSet;
use crate::stacked::{lift_dynamics, ConstraintSet, SystemModel};

#[derive(Debug, Clone)]
pub struct Trajectory {
    /// `x_0..=x_N`
    pub states: Vec<DVector<f64>>,
    /// `u_0..u_N`
    pub inputs: Vec<DVector<f64>>,
    /// `y_0..=y_N`
    pub outputs: Vec<DVector<f64>>,
    /// `w_0..w_N`
    pub disturbances: Vec<DVector<f64>>,
}

impl Trajectory {
    pub fn horizon(&self) -> usize {
        self.inputs.len()
    }

    /// Stacked `[u_0; ..; u_{N-1}; 0]`.
    pub fn stacked_inputs(&self) -> DVector<f64> {
        let m = self.inputs.first().map_or(0, |u| u.len());
        let mut out = DVector::zeros(m * (self.horizon() + 1));
        for (k, u) in self.inputs.iter().enumerate() {
            out.rows_mut(k * m, m).copy_from(u);
        }
        out
    }

    pub fn stacked_outputs(&self) -> DVector<f64> {
        let p = self.outputs[0].len();
        let mut out = DVector::zeros(p * self.outputs.len());
        for (k, y) in self.outputs.iter().enumerate() {
            out.rows_mut(k * p, p).copy_from(y);
        }
        out
    }

    /// Largest `|x_{k+1} - A x_k - B u_k - D w_k|` over all stages.
    pub fn dynamics_residual(&self, sys: &SystemModel) -> f64 {
        (0..self.horizon())
            .map(|k| {
                let pred = &sys.a * &self.states[k]
                    + &sys.b * &self.inputs[k]
                    + &sys.d * &self.disturbances[k];
                (&self.states[k + 1] - pred).amax()
            })
            .fold(0.0, f64::max)
    }

    /// Largest absolute difference in states, inputs and outputs.
    pub fn max_difference(&self, other: &Trajectory) -> f64 {
        let pairs = self
            .states
            .iter()
            .zip(&other.states)
            .chain(self.inputs.iter().zip(&other.inputs))
            .chain(self.outputs.iter().zip(&other.outputs));
        pairs.map(|(a, b)| (a - b).amax()).fold(0.0, f64::max)
    }

    /// Whitespace-separated table with one row per stage. Inputs and
    /// disturbances at stage `N` are written as zero.
    pub fn to_table(&self, slacks: Option<&SlackReport>) -> String {
        let n = self.states[0].len();
        let m = self.inputs.first().map_or(0, |u| u.len());
        let p = self.outputs[0].len();
        let mut out = String::from("# gss-trajectory v1\n");
        let mut header = vec!["stage".to_string()];
        header.extend((0..n).map(|i| format!("x{i}")));
        header.extend((0..m).map(|i| format!("u{i}")));
        header.extend((0..p).map(|i| format!("y{i}")));
        header.extend((0..n).map(|i| format!("w{i}")));
        header.push("min_slack".into());
        out.push_str(&header.join(" "));
        out.push('\n');
        let zero_u = DVector::zeros(m);
        let zero_w = DVector::zeros(n);
        for k in 0..=self.horizon() {
            let mut row = vec![k.to_string()];
            let u = self.inputs.get(k).unwrap_or(&zero_u);
            let w = self.disturbances.get(k).unwrap_or(&zero_w);
            for v in self.states[k]
                .iter()
                .chain(u.iter())
                .chain(self.outputs[k].iter())
                .chain(w.iter())
            {
                row.push(fmt_num(*v));
            }
            let slack = slacks.map_or(f64::NAN, |s| s.stage_min(k));
            row.push(fmt_num(slack));
            out.push_str(&row.join(" "));
            out.push('\n');
        }
        out
    }
}

/// Twelve significant digits.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        return "nan".into();
    }
    if v.is_infinite() {
        return if v > 0.0 { "inf".into() } else { "-inf".into() };
    }
    let mut s = String::new();
    write!(s, "{v:.11e}").expect("formatting into a String");
    // 1.23450000000e2 -> 123.45 when the exponent is moderate
    let parsed: f64 = s.parse().expect("round trip");
    let abs = parsed.abs();
    if abs == 0.0 {
        return "0".into();
    }
    if (1e-4..1e12).contains(&abs) {
        let digits = (11 - abs.log10().floor() as i32).max(0) as usize;
        let fixed = format!("{parsed:.digits$}");
        let trimmed = if fixed.contains('.') {
            fixed
                .trim_end_matches('0')
                .trim_end_matches('.')
                .to_string()
        } else {
            fixed
        };
        return trimmed;
    }
    s
}

fn check_disturbances(sys: &SystemModel, w: &[DVector<f64>]) -> Result<()> {
    if w.is_empty() {
        return dim_err("disturbance sequence must cover at least one stage");
    }
    if let Some(bad) = w.iter().position(|wk| wk.len() != sys.n()) {
        return dim_err(format!(
            "w_{bad} has length {}, expected {}",
            w[bad].len(),
            sys.n()
        ));
    }
    Ok(())
}

/// Runs `u_k = Σ_{j<=k} L_{k,j} y_j + g_k` for `k < N = w.len()`.
pub fn simulate_explicit(
    sys: &SystemModel,
    l: &DMatrix<f64>,
    g: &DVector<f64>,
    x0: &DVector<f64>,
    w: &[DVector<f64>],
) -> Result<Trajectory> {
    check_disturbances(sys, w)?;
    let (n, m, p) = (sys.n(), sys.m(), sys.p());
    let horizon = w.len();
    if l.shape() != (m * (horizon + 1), p * (horizon + 1)) || g.len() != m * (horizon + 1) {
        return dim_err(format!(
            "controller {}x{} with offset {} does not match horizon {horizon}",
            l.nrows(),
            l.ncols(),
            g.len()
        ));
    }
    if x0.len() != n {
        return dim_err(format!("x0 has length {}, expected {n}", x0.len()));
    }
    let mut states = vec![x0.clone()];
    let mut outputs = Vec::with_capacity(horizon + 1);
    let mut inputs = Vec::with_capacity(horizon);
    for k in 0..horizon {
        let x = &states[k];
        outputs.push(&sys.c * x + &sys.h * &w[k]);
        let mut u = g.rows(k * m, m).clone_owned();
        for (j, y) in outputs.iter().enumerate() {
            u += l.view((k * m, j * p), (m, p)) * y;
        }
        let next = &sys.a * x + &sys.b * &u + &sys.d * &w[k];
        inputs.push(u);
        states.push(next);
    }
    outputs.push(&sys.c * &states[horizon]);
    Ok(Trajectory {
        states,
        inputs,
        outputs,
        disturbances: w.to_vec(),
    })
}

/// Executes `u = Q y - Q CB u + (I + Q CB) g` stage by stage; `u_k` uses
/// `y_0..=y_k` and `u_0..u_{k-1}`.
#[derive(Debug, Clone)]
pub struct ImplicitController {
    q: DMatrix<f64>,
    qcb: DMatrix<f64>,
    offset: DVector<f64>,
    horizon: usize,
}

impl ImplicitController {
    pub fn new(
        sys: &SystemModel,
        q: &DMatrix<f64>,
        g: &DVector<f64>,
        horizon: usize,
    ) -> Result<Self> {
        let (m, p) = (sys.m(), sys.p());
        if q.shape() != (m * (horizon + 1), p * (horizon + 1)) || g.len() != m * (horizon + 1) {
            return dim_err("disturbance feedback does not match the horizon");
        }
        let lifted = lift_dynamics(sys, horizon)?;
        let cb = &lifted.cbold * &lifted.bbold;
        let qcb = q * cb;
        let offset = g + &qcb * g;
        Ok(Self {
            q: q.clone(),
            qcb,
            offset,
            horizon,
        })
    }

    pub fn simulate(
        &self,
        sys: &SystemModel,
        x0: &DVector<f64>,
        w: &[DVector<f64>],
    ) -> Result<Trajectory> {
        check_disturbances(sys, w)?;
        if w.len() != self.horizon {
            return dim_err(format!(
                "{} disturbances for horizon {}",
                w.len(),
                self.horizon
            ));
        }
        let (m, p) = (sys.m(), sys.p());
        let mut states = vec![x0.clone()];
        let mut outputs: Vec<DVector<f64>> = Vec::with_capacity(self.horizon + 1);
        let mut inputs: Vec<DVector<f64>> = Vec::with_capacity(self.horizon);
        for k in 0..self.horizon {
            let x = &states[k];
            outputs.push(&sys.c * x + &sys.h * &w[k]);
            let mut u = self.offset.rows(k * m, m).clone_owned();
            for (j, y) in outputs.iter().enumerate() {
                u += self.q.view((k * m, j * p), (m, p)) * y;
            }
            for (j, uj) in inputs.iter().enumerate() {
                u -= self.qcb.view((k * m, j * m), (m, m)) * uj;
            }
            let next = &sys.a * x + &sys.b * &u + &sys.d * &w[k];
            inputs.push(u);
            states.push(next);
        }
        outputs.push(&sys.c * &states[self.horizon]);
        Ok(Trajectory {
            states,
            inputs,
            outputs,
            disturbances: w.to_vec(),
        })
    }
}

pub fn simulate_implicit(
    sys: &SystemModel,
    q: &DMatrix<f64>,
    g: &DVector<f64>,
    x0: &DVector<f64>,
    w: &[DVector<f64>],
) -> Result<Trajectory> {
    ImplicitController::new(sys, q, g, w.len())?.simulate(sys, x0, w)
}

#[derive(Debug, Clone)]
pub struct SlackReport {
    /// `b - U x_k - V u_k` for `k < N`.
    pub stage: Vec<DVector<f64>>,
    /// `z - R x_N`
    pub terminal: DVector<f64>,
    pub min_slack: f64,
    /// `(stage, row)` of the smallest slack; stage `N` is the terminal set.
    pub argmin: Option<(usize, usize)>,
}

impl SlackReport {
    pub fn stage_min(&self, k: usize) -> f64 {
        let v = if k < self.stage.len() {
            &self.stage[k]
        } else {
            &self.terminal
        };
        v.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

pub fn verify_constraints(traj: &Trajectory, cons: &ConstraintSet) -> SlackReport {
    let horizon = traj.horizon();
    let stage: Vec<DVector<f64>> = (0..horizon)
        .map(|k| &cons.b - &cons.u * &traj.states[k] - &cons.v * &traj.inputs[k])
        .collect();
    let terminal = &cons.z - &cons.r * &traj.states[horizon];
    let mut min_slack = f64::INFINITY;
    let mut argmin = None;
    for (k, v) in stage.iter().chain(std::iter::once(&terminal)).enumerate() {
        for (r, &s) in v.iter().enumerate() {
            if s < min_slack {
                min_slack = s;
                argmin = Some((k, r));
            }
        }
    }
    SlackReport {
        stage,
        terminal,
        min_slack,
        argmin,
    }
}

#[derive(Debug, Clone)]
pub struct SweepReport {
    pub worst_slack: f64,
    pub rollouts: usize,
    /// Every vertex sequence was simulated.
    pub exhaustive: bool,
    pub worst_disturbance: Option<Vec<DVector<f64>>>,
}

/// Simulates the explicit controller `(L, g)` on vertex disturbance
/// sequences. Box sets are enumerated exhaustively when the vertex count
/// fits in `budget`, otherwise `budget` vertex sequences are sampled.
/// Polytope vertices are found by maximizing random directions.
#[allow(clippy::too_many_arguments)]
pub fn vertex_sweep(
    sys: &SystemModel,
    l: &DMatrix<f64>,
    g: &DVector<f64>,
    x0: &DVector<f64>,
    horizon: usize,
    cons: &ConstraintSet,
    dist: &DisturbanceSet,
    budget: usize,
    seed: u64,
) -> Result<SweepReport> {
    let n = sys.n();
    dist.validate(n)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut report = SweepReport {
        worst_slack: f64::INFINITY,
        rollouts: 0,
        exhaustive: false,
        worst_disturbance: None,
    };
    let run = |w: Vec<DVector<f64>>, report: &mut SweepReport| -> Result<()> {
        let traj = simulate_explicit(sys, l, g, x0, &w)?;
        let slack = verify_constraints(&traj, cons).min_slack;
        report.rollouts += 1;
        if slack < report.worst_slack || report.worst_disturbance.is_none() {
            report.worst_slack = report.worst_slack.min(slack);
            report.worst_disturbance = Some(w);
        }
        Ok(())
    };

    match dist {
        DisturbanceSet::Box { half_width } => {
            let active: Vec<usize> = (0..n).filter(|&j| half_width[j] > 0.0).collect();
            let bits = active.len() * horizon;
            let vertex = |code: &dyn Fn(usize) -> bool| -> Vec<DVector<f64>> {
                (0..horizon)
                    .map(|k| {
                        let mut w = DVector::zeros(n);
                        for (a, &j) in active.iter().enumerate() {
                            let up = code(k * active.len() + a);
                            w[j] = if up { half_width[j] } else { -half_width[j] };
                        }
                        w
                    })
                    .collect()
            };
            if bits < usize::BITS as usize && (1usize << bits) <= budget.max(1) {
                report.exhaustive = true;
                for code in 0..(1usize << bits) {
                    run(vertex(&|b| code >> b & 1 == 1), &mut report)?;
                }
            } else {
                for _ in 0..budget {
                    let signs: Vec<bool> = (0..bits).map(|_| rng.random()).collect();
                    run(vertex(&|b| signs[b]), &mut report)?;
                }
            }
        }
        DisturbanceSet::Polytope { m, h } => {
            // pool of stage vertices from random support directions
            let mut pool: Vec<DVector<f64>> = Vec::new();
            for _ in 0..(8 * n).max(16) {
                let dir: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
                let w = polytope_vertex(m, h, &dir)?;
                if !pool.iter().any(|p| (p - &w).amax() < 1e-7) {
                    pool.push(w);
                }
            }
            for _ in 0..budget {
                let w: Vec<DVector<f64>> = (0..horizon)
                    .map(|_| pool[rng.random_range(0..pool.len())].clone())
                    .collect();
                run(w, &mut report)?;
            }
        }
    }
    Ok(report)
}

/// A maximizer of `dirᵀ w` over `M w <= h`.
fn polytope_vertex(m: &DMatrix<f64>, h: &DVector<f64>, dir: &[f64]) -> Result<DVector<f64>> {
    use gss_qp::{solve, QuadraticProgram, SolverSettings, SparseMatrix};
    let n = m.ncols();
    let qp = QuadraticProgram::new(
        SparseMatrix::zeros(n, n),
        dir.iter().map(|v| -v).collect(),
        SparseMatrix::zeros(0, n),
        vec![],
        crate::robust::dense_to_sparse(m),
        h.iter().copied().collect(),
    )?;
    let settings = SolverSettings {
        eps_abs: 1e-10,
        eps_rel: 1e-10,
        ..Default::default()
    };
    let res = solve(&qp, &settings)?;
    if res.status != gss_qp::SolverStatus::Optimal {
        return Err(crate::error::CoreError::SolverStatus(res.status));
    }
    Ok(DVector::from_vec(res.x))
}
