//! ADMM iteration on the equilibrated problem
//!
//! ```text
//! minimize ½ xᵀ P x + qᵀ x   subject to   l <= A x <= u
//! ```
//!
//! Each iteration solves one quasi-definite KKT system whose factorization is
//! reused until the step penalty changes. Equalities are rows with `l = u`.

use faer::sparse::{SparseColMat, Triplet};
use faer::Side;
use log::debug;

use crate::error::QpError;
use crate::ipm;
use crate::ldlt::LdltSolver;
use crate::problem::QuadraticProgram;
use crate::settings::{Method, SolverSettings};
use crate::sparse::SparseMatrix;

const RHO_MIN: f64 = 1e-6;
const RHO_MAX: f64 = 1e6;
const RHO_EQ_FACTOR: f64 = 1e3;
const MIN_SCALING: f64 = 1e-4;
const MAX_SCALING: f64 = 1e4;
const DIVISION_TOL: f64 = 1e-30;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolverStatus {
    Optimal,
    MaxIterations,
    PrimalInfeasible,
    DualInfeasible,
}

impl SolverStatus {
    pub fn as_str(self) -> &'static str {
        match self {
            SolverStatus::Optimal => "optimal",
            SolverStatus::MaxIterations => "max_iter",
            SolverStatus::PrimalInfeasible => "infeasible",
            SolverStatus::DualInfeasible => "unbounded",
        }
    }
}

impl std::fmt::Display for SolverStatus {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone)]
pub struct SolverResult {
    pub status: SolverStatus,
    pub x: Vec<f64>,
    /// Multipliers of the equality rows.
    pub y_eq: Vec<f64>,
    /// Multipliers of the inequality rows, nonnegative at optimality.
    pub y_ineq: Vec<f64>,
    pub objective: f64,
    pub iterations: usize,
    /// Infinity norm of the constraint violation at `x`.
    pub prim_res: f64,
    /// Infinity norm of the Lagrangian gradient at `(x, y)`.
    pub dual_res: f64,
    pub polished: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum RowKind {
    Equality,
    Inequality,
    Free,
}

/// Problem data after Ruiz equilibration.
pub(crate) struct Scaled {
    pub p: SparseMatrix,
    pub q: Vec<f64>,
    pub a: SparseMatrix,
    pub l: Vec<f64>,
    pub u: Vec<f64>,
    pub d: Vec<f64>,
    pub e: Vec<f64>,
    pub d_inv: Vec<f64>,
    pub e_inv: Vec<f64>,
    pub c: f64,
}

struct Residuals {
    prim: f64,
    dual: f64,
    eps_prim: f64,
    eps_dual: f64,
}

/// Solves `qp` with default initialization at zero.
pub fn solve(qp: &QuadraticProgram, settings: &SolverSettings) -> Result<SolverResult, QpError> {
    settings.validate()?;
    qp.validate()?;
    check_psd(&qp.hessian)?;

    let neq = qp.num_eq();
    let a = qp.eq_matrix.vstack(&qp.ineq_matrix);
    let m = a.nrows();
    let mut l = Vec::with_capacity(m);
    let mut u = Vec::with_capacity(m);
    l.extend_from_slice(&qp.eq_rhs);
    u.extend_from_slice(&qp.eq_rhs);
    l.extend(std::iter::repeat_n(f64::NEG_INFINITY, qp.num_ineq()));
    u.extend_from_slice(&qp.ineq_rhs);

    let scaled = equilibrate(&qp.hessian, &qp.linear, a, &l, &u, settings.scaling_iters);
    let raw = match settings.method {
        Method::Admm => Admm::new(scaled, settings.clone())?.run()?,
        Method::InteriorPoint => {
            let raw = ipm::run(&scaled, settings)?;
            if raw.status == SolverStatus::Optimal {
                raw
            } else {
                debug!(
                    "interior point stalled after {} iterations, falling back to ADMM",
                    raw.iterations
                );
                let mut fallback = Admm::new(scaled, settings.clone())?.run()?;
                fallback.iterations += raw.iterations;
                fallback
            }
        }
    };

    let RawSolution {
        status,
        x,
        y,
        iterations,
        polished,
    } = raw;
    let (prim_res, dual_res) = unscaled_residuals(qp, &x, &y[..neq], &y[neq..]);
    let objective = qp.objective(&x);
    debug!(
        "qp solve: status={status} iter={iterations} polished={polished} prim={prim_res:.3e} dual={dual_res:.3e}"
    );
    Ok(SolverResult {
        status,
        objective,
        iterations,
        prim_res,
        dual_res,
        polished,
        y_eq: y[..neq].to_vec(),
        y_ineq: y[neq..].to_vec(),
        x,
    })
}

/// Residuals of the original problem at `(x, y)`.
fn unscaled_residuals(qp: &QuadraticProgram, x: &[f64], y_eq: &[f64], y_in: &[f64]) -> (f64, f64) {
    let mut prim = 0.0f64;
    let mut ax = vec![0.0; qp.num_eq()];
    qp.eq_matrix.mul_vec(x, &mut ax);
    for (v, b) in ax.iter().zip(&qp.eq_rhs) {
        prim = prim.max((v - b).abs());
    }
    let mut ax = vec![0.0; qp.num_ineq()];
    qp.ineq_matrix.mul_vec(x, &mut ax);
    for (v, b) in ax.iter().zip(&qp.ineq_rhs) {
        prim = prim.max(v - b);
    }
    let n = qp.num_vars();
    let mut grad = vec![0.0; n];
    qp.hessian.sym_upper_mul_vec(x, &mut grad);
    let mut tmp = vec![0.0; n];
    qp.eq_matrix.tr_mul_vec(y_eq, &mut tmp);
    grad.iter_mut().zip(&tmp).for_each(|(g, t)| *g += t);
    qp.ineq_matrix.tr_mul_vec(y_in, &mut tmp);
    grad.iter_mut().zip(&tmp).for_each(|(g, t)| *g += t);
    let dual = grad
        .iter()
        .zip(&qp.linear)
        .fold(0.0f64, |m, (g, q)| m.max((g + q).abs()));
    (prim.max(0.0), dual)
}

/// Rejects Hessians with an eigenvalue below `-1e-10 * max diagonal`.
fn check_psd(upper: &SparseMatrix) -> Result<(), QpError> {
    let n = upper.nrows();
    if n == 0 || upper.nnz() == 0 {
        return Ok(());
    }
    let max_diag = (0..n).map(|j| upper.get(j, j)).fold(0.0f64, f64::max);
    if max_diag <= 0.0 {
        // A symmetric matrix with nonpositive diagonal is PSD only if it is zero.
        return Err(QpError::NotPsd);
    }
    let shift = 1e-10 * max_diag;
    let triplets: Vec<Triplet<usize, usize, f64>> = upper
        .triplets()
        .map(|(i, j, v)| Triplet::new(i, j, v))
        .chain((0..n).map(|j| Triplet::new(j, j, shift)))
        .collect();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| QpError::Factorization(format!("{e:?}")))?;
    mat.sp_cholesky(Side::Upper)
        .map(|_| ())
        .map_err(|_| QpError::NotPsd)
}

fn equilibrate(
    p_upper: &SparseMatrix,
    q: &[f64],
    a: SparseMatrix,
    l: &[f64],
    u: &[f64],
    iters: usize,
) -> Scaled {
    let n = q.len();
    let m = a.nrows();
    let mut p = p_upper.clone();
    let mut a = a;
    let mut q = q.to_vec();
    let mut d = vec![1.0; n];
    let mut e = vec![1.0; m];
    let mut c = 1.0;

    let clamp_norm = |v: f64| {
        if v < MIN_SCALING {
            1.0
        } else {
            v.min(MAX_SCALING)
        }
    };

    for _ in 0..iters {
        let mut col = vec![0.0f64; n];
        for (i, j, v) in p.triplets() {
            col[j] = col[j].max(v.abs());
            col[i] = col[i].max(v.abs());
        }
        for (cj, an) in col.iter_mut().zip(a.col_inf_norms()) {
            *cj = cj.max(an);
        }
        let d_step: Vec<f64> = col.iter().map(|&v| 1.0 / clamp_norm(v).sqrt()).collect();
        let e_step: Vec<f64> = a
            .row_inf_norms()
            .iter()
            .map(|&v| 1.0 / clamp_norm(v).sqrt())
            .collect();
        p.scale(&d_step, &d_step);
        a.scale(&e_step, &d_step);
        q.iter_mut().zip(&d_step).for_each(|(qi, di)| *qi *= di);
        d.iter_mut().zip(&d_step).for_each(|(di, s)| *di *= s);
        e.iter_mut().zip(&e_step).for_each(|(ei, s)| *ei *= s);

        let mut pcol = vec![0.0f64; n];
        for (i, j, v) in p.triplets() {
            pcol[j] = pcol[j].max(v.abs());
            pcol[i] = pcol[i].max(v.abs());
        }
        let mean_p = if n > 0 {
            pcol.iter().sum::<f64>() / n as f64
        } else {
            0.0
        };
        let q_norm = inf_norm(&q);
        let c_step = 1.0 / clamp_norm(mean_p.max(q_norm));
        p.scale(&vec![c_step; n], &vec![1.0; n]);
        q.iter_mut().for_each(|qi| *qi *= c_step);
        c *= c_step;
    }

    let l = l.iter().zip(&e).map(|(v, ei)| v * ei).collect();
    let u = u.iter().zip(&e).map(|(v, ei)| v * ei).collect();
    let d_inv = d.iter().map(|v| 1.0 / v).collect();
    let e_inv = e.iter().map(|v| 1.0 / v).collect();
    Scaled {
        p,
        q,
        a,
        l,
        u,
        d,
        e,
        d_inv,
        e_inv,
        c,
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

pub(crate) struct RawSolution {
    pub status: SolverStatus,
    pub x: Vec<f64>,
    pub y: Vec<f64>,
    pub iterations: usize,
    pub polished: bool,
}

struct Admm {
    s: Scaled,
    settings: SolverSettings,
    kinds: Vec<RowKind>,
    rho: f64,
    rho_vec: Vec<f64>,
    kkt: LdltSolver,
    rho_positions: Vec<usize>,
    x: Vec<f64>,
    z: Vec<f64>,
    y: Vec<f64>,
    x_prev: Vec<f64>,
    y_prev: Vec<f64>,
    // scratch
    rhs: Vec<f64>,
    ax: Vec<f64>,
    px: Vec<f64>,
    aty: Vec<f64>,
}

impl Admm {
    fn new(s: Scaled, settings: SolverSettings) -> Result<Self, QpError> {
        let n = s.q.len();
        let m = s.a.nrows();
        let kinds: Vec<RowKind> =
            s.l.iter()
                .zip(&s.u)
                .map(|(&lo, &hi)| {
                    if lo == f64::NEG_INFINITY && hi == f64::INFINITY {
                        RowKind::Free
                    } else if lo == hi {
                        RowKind::Equality
                    } else {
                        RowKind::Inequality
                    }
                })
                .collect();
        let rho = settings.rho;
        let rho_vec = rho_vector(&kinds, rho);

        let mut triplets: Vec<(usize, usize, f64)> = s.p.triplets().collect();
        triplets.extend((0..n).map(|j| (j, j, settings.sigma)));
        for (i, j, v) in s.a.triplets() {
            triplets.push((j, n + i, v));
        }
        triplets.extend((0..m).map(|i| (n + i, n + i, -1.0 / rho_vec[i])));
        let upper = SparseMatrix::from_triplets(n + m, n + m, &triplets);
        let signs = (0..n + m).map(|k| if k < n { 1 } else { -1 }).collect();
        let kkt = LdltSolver::new(upper, signs)?;
        let rho_positions = (0..m)
            .map(|i| kkt.position(n + i, n + i).expect("diagonal present"))
            .collect();
        debug!(
            "qp kkt: n={n} m={m} factor nnz={} a nnz={}",
            kkt.factor_nnz(),
            s.a.nnz()
        );

        Ok(Self {
            kinds,
            rho,
            rho_vec,
            kkt,
            rho_positions,
            x: vec![0.0; n],
            z: vec![0.0; m],
            y: vec![0.0; m],
            x_prev: vec![0.0; n],
            y_prev: vec![0.0; m],
            rhs: vec![0.0; n + m],
            ax: vec![0.0; m],
            px: vec![0.0; n],
            aty: vec![0.0; n],
            s,
            settings,
        })
    }

    fn n(&self) -> usize {
        self.x.len()
    }

    fn run(&mut self) -> Result<RawSolution, QpError> {
        let n = self.n();
        let m = self.z.len();
        let alpha = self.settings.alpha;
        let sigma = self.settings.sigma;
        let mut polish_cooldown = 0usize;

        for iter in 1..=self.settings.max_iter {
            self.x_prev.copy_from_slice(&self.x);
            self.y_prev.copy_from_slice(&self.y);

            for j in 0..n {
                self.rhs[j] = sigma * self.x[j] - self.s.q[j];
            }
            for i in 0..m {
                self.rhs[n + i] = self.z[i] - self.y[i] / self.rho_vec[i];
            }
            self.kkt.solve_in_place(&mut self.rhs);

            for j in 0..n {
                self.x[j] = alpha * self.rhs[j] + (1.0 - alpha) * self.x_prev[j];
            }
            for i in 0..m {
                let rho_i = self.rho_vec[i];
                let z_tilde = self.z[i] + (self.rhs[n + i] - self.y[i]) / rho_i;
                let z_relax = alpha * z_tilde + (1.0 - alpha) * self.z[i];
                let z_new = (z_relax + self.y[i] / rho_i).clamp(self.s.l[i], self.s.u[i]);
                self.y[i] += rho_i * (z_relax - z_new);
                self.z[i] = z_new;
            }

            let check = iter % self.settings.check_interval == 0 || iter == self.settings.max_iter;
            if !check {
                continue;
            }
            let res = self.residuals(&self.x.clone(), &self.y.clone(), &self.z.clone());
            if res.prim <= res.eps_prim && res.dual <= res.eps_dual {
                let polished = self.settings.polish && self.try_polish()?;
                return Ok(self.finish(SolverStatus::Optimal, iter, polished));
            }
            if self.primal_infeasible() {
                return Ok(self.finish(SolverStatus::PrimalInfeasible, iter, false));
            }
            if self.dual_infeasible() {
                return Ok(self.finish(SolverStatus::DualInfeasible, iter, false));
            }
            if self.settings.polish
                && polish_cooldown == 0
                && res.prim <= self.settings.polish_trigger * res.eps_prim
                && res.dual <= self.settings.polish_trigger * res.eps_dual
            {
                if self.try_polish()? {
                    return Ok(self.finish(SolverStatus::Optimal, iter, true));
                }
                polish_cooldown = 20;
            }
            polish_cooldown = polish_cooldown.saturating_sub(1);
            if self.settings.adaptive_rho && iter % self.settings.adaptive_rho_interval == 0 {
                self.adapt_rho()?;
            }
            if iter % 1000 == 0 {
                debug!(
                    "iter {iter}: prim={:.3e}/{:.3e} dual={:.3e}/{:.3e} rho={:.3e}",
                    res.prim, res.eps_prim, res.dual, res.eps_dual, self.rho
                );
            }
        }
        let polished = self.settings.polish && self.try_polish()?;
        let status = if polished {
            SolverStatus::Optimal
        } else {
            SolverStatus::MaxIterations
        };
        Ok(self.finish(status, self.settings.max_iter, polished))
    }

    /// Unscaled residuals and their tolerances at a scaled point.
    fn residuals(&mut self, x: &[f64], y: &[f64], z: &[f64]) -> Residuals {
        let s = &self.s;
        s.a.mul_vec(x, &mut self.ax);
        s.p.sym_upper_mul_vec(x, &mut self.px);
        s.a.tr_mul_vec(y, &mut self.aty);

        let mut prim = 0.0f64;
        let mut ax_norm = 0.0f64;
        let mut z_norm = 0.0f64;
        for i in 0..z.len() {
            prim = prim.max((s.e_inv[i] * (self.ax[i] - z[i])).abs());
            ax_norm = ax_norm.max((s.e_inv[i] * self.ax[i]).abs());
            z_norm = z_norm.max((s.e_inv[i] * z[i]).abs());
        }
        let mut dual = 0.0f64;
        let mut px_norm = 0.0f64;
        let mut aty_norm = 0.0f64;
        let mut q_norm = 0.0f64;
        for j in 0..x.len() {
            let scale = s.d_inv[j] / s.c;
            dual = dual.max((scale * (self.px[j] + s.q[j] + self.aty[j])).abs());
            px_norm = px_norm.max((scale * self.px[j]).abs());
            aty_norm = aty_norm.max((scale * self.aty[j]).abs());
            q_norm = q_norm.max((scale * s.q[j]).abs());
        }
        let eps = &self.settings;
        Residuals {
            prim,
            dual,
            eps_prim: eps.eps_abs + eps.eps_rel * ax_norm.max(z_norm),
            eps_dual: eps.eps_abs + eps.eps_rel * px_norm.max(aty_norm).max(q_norm),
        }
    }

    fn primal_infeasible(&mut self) -> bool {
        let s = &self.s;
        let m = self.y.len();
        let eps = self.settings.eps_prim_inf;
        let mut dy: Vec<f64> = (0..m).map(|i| self.y[i] - self.y_prev[i]).collect();
        let norm = dy
            .iter()
            .zip(&s.e)
            .fold(0.0f64, |acc, (v, e)| acc.max((v * e).abs()));
        if norm <= DIVISION_TOL {
            return false;
        }
        // project onto the polar of the recession cone of [l, u]
        for i in 0..m {
            if s.u[i] == f64::INFINITY {
                dy[i] = dy[i].min(0.0);
            }
            if s.l[i] == f64::NEG_INFINITY {
                dy[i] = dy[i].max(0.0);
            }
        }
        let support: f64 = (0..m)
            .map(|i| {
                let up = if dy[i] > 0.0 { s.u[i] * dy[i] } else { 0.0 };
                let lo = if dy[i] < 0.0 { s.l[i] * dy[i] } else { 0.0 };
                up + lo
            })
            .sum();
        if !(support < 0.0) {
            return false;
        }
        let mut atdy = vec![0.0; self.n()];
        s.a.tr_mul_vec(&dy, &mut atdy);
        let lhs = atdy
            .iter()
            .zip(&s.d_inv)
            .fold(0.0f64, |acc, (v, d)| acc.max((v * d).abs()));
        lhs < eps * norm
    }

    fn dual_infeasible(&mut self) -> bool {
        let s = &self.s;
        let n = self.n();
        let eps = self.settings.eps_dual_inf;
        let dx: Vec<f64> = (0..n).map(|j| self.x[j] - self.x_prev[j]).collect();
        let norm = dx
            .iter()
            .zip(&s.d)
            .fold(0.0f64, |acc, (v, d)| acc.max((v * d).abs()));
        if norm <= DIVISION_TOL {
            return false;
        }
        let cost: f64 = dx.iter().zip(&s.q).map(|(a, b)| a * b).sum();
        if !(cost < -s.c * eps * norm) {
            return false;
        }
        let mut pdx = vec![0.0; n];
        s.p.sym_upper_mul_vec(&dx, &mut pdx);
        let pnorm = pdx
            .iter()
            .zip(&s.d_inv)
            .fold(0.0f64, |acc, (v, d)| acc.max((v * d).abs()));
        if pnorm > s.c * eps * norm {
            return false;
        }
        let mut adx = vec![0.0; self.z.len()];
        s.a.mul_vec(&dx, &mut adx);
        for i in 0..adx.len() {
            let v = adx[i] * s.e_inv[i];
            let lower_ok = s.l[i] == f64::NEG_INFINITY || v >= -eps * norm;
            let upper_ok = s.u[i] == f64::INFINITY || v <= eps * norm;
            if !(lower_ok && upper_ok) {
                return false;
            }
        }
        true
    }

    fn adapt_rho(&mut self) -> Result<(), QpError> {
        let s = &self.s;
        s.a.mul_vec(&self.x, &mut self.ax);
        s.p.sym_upper_mul_vec(&self.x, &mut self.px);
        s.a.tr_mul_vec(&self.y, &mut self.aty);
        let prim = self
            .ax
            .iter()
            .zip(&self.z)
            .fold(0.0f64, |m, (a, z)| m.max((a - z).abs()));
        let prim_scale = inf_norm(&self.ax).max(inf_norm(&self.z)).max(DIVISION_TOL);
        let dual = (0..self.n()).fold(0.0f64, |m, j| {
            m.max((self.px[j] + s.q[j] + self.aty[j]).abs())
        });
        let dual_scale = inf_norm(&self.px)
            .max(inf_norm(&self.aty))
            .max(inf_norm(&s.q))
            .max(DIVISION_TOL);
        let ratio = (prim / prim_scale) / (dual / dual_scale).max(DIVISION_TOL);
        let new_rho = (self.rho * ratio.sqrt()).clamp(RHO_MIN, RHO_MAX);
        let tol = self.settings.adaptive_rho_tolerance;
        if new_rho > self.rho * tol || new_rho < self.rho / tol {
            self.rho = new_rho;
            self.rho_vec = rho_vector(&self.kinds, new_rho);
            for (i, &pos) in self.rho_positions.iter().enumerate() {
                self.kkt.set_value(pos, -1.0 / self.rho_vec[i]);
            }
            self.kkt.refactor()?;
        }
        Ok(())
    }

    /// Solves the KKT system restricted to the guessed active set. On success
    /// the polished point replaces the iterate.
    fn try_polish(&mut self) -> Result<bool, QpError> {
        let n = self.n();
        let m = self.z.len();
        let mut active: Vec<(usize, f64, i8)> = Vec::new();
        for i in 0..m {
            let (lo, hi) = (self.s.l[i], self.s.u[i]);
            if self.kinds[i] == RowKind::Equality {
                active.push((i, lo, 0));
            } else if self.z[i] - lo < -self.y[i] {
                active.push((i, lo, -1));
            } else if hi - self.z[i] < self.y[i] {
                active.push((i, hi, 1));
            }
        }
        let k = active.len();
        let rows: Vec<usize> = active.iter().map(|a| a.0).collect();
        let a_red = self.s.a.select_rows(&rows);
        let delta = self.settings.polish_delta;

        let mut triplets: Vec<(usize, usize, f64)> = self.s.p.triplets().collect();
        triplets.extend((0..n).map(|j| (j, j, delta)));
        for (r, j, v) in a_red.triplets() {
            triplets.push((j, n + r, v));
        }
        triplets.extend((0..k).map(|r| (n + r, n + r, -delta)));
        let upper = SparseMatrix::from_triplets(n + k, n + k, &triplets);
        let signs = (0..n + k).map(|i| if i < n { 1 } else { -1 }).collect();
        let mut kkt = match LdltSolver::new(upper, signs) {
            Ok(kkt) => kkt,
            Err(e) => {
                debug!("polish factorization failed: {e}");
                return Ok(false);
            }
        };

        let mut rhs = vec![0.0; n + k];
        // proximal term around the ADMM iterate pins directions the active
        // set leaves free
        for j in 0..n {
            rhs[j] = -self.s.q[j] + delta * self.x[j];
        }
        for (r, a) in active.iter().enumerate() {
            rhs[n + r] = a.1;
        }
        let mut sol = rhs.clone();
        kkt.solve_in_place(&mut sol);
        // iterative refinement removes the dual regularization
        let mut kx = vec![0.0; n + k];
        for _ in 0..self.settings.polish_refine_iters {
            kkt.mul_vec(&sol, &mut kx);
            for r in 0..k {
                kx[n + r] += delta * sol[n + r];
            }
            let mut resid: Vec<f64> = rhs.iter().zip(&kx).map(|(b, v)| b - v).collect();
            kkt.solve_in_place(&mut resid);
            sol.iter_mut().zip(&resid).for_each(|(s, d)| *s += d);
        }

        let x_pol = sol[..n].to_vec();
        let mut y_pol = vec![0.0; m];
        for (r, a) in active.iter().enumerate() {
            let val = sol[n + r];
            y_pol[a.0] = match a.2 {
                -1 => val.min(0.0),
                1 => val.max(0.0),
                _ => val,
            };
        }
        let mut ax = vec![0.0; m];
        self.s.a.mul_vec(&x_pol, &mut ax);
        let z_pol: Vec<f64> = (0..m)
            .map(|i| ax[i].clamp(self.s.l[i], self.s.u[i]))
            .collect();
        let res = self.residuals(&x_pol, &y_pol, &z_pol);
        let ok = res.prim <= res.eps_prim
            && res.dual <= res.eps_dual
            && x_pol.iter().chain(&y_pol).all(|v| v.is_finite());
        debug!(
            "polish: active={k} prim={:.3e}/{:.3e} dual={:.3e}/{:.3e} accepted={ok}",
            res.prim, res.eps_prim, res.dual, res.eps_dual
        );
        if ok {
            self.x = x_pol;
            self.y = y_pol;
            self.z = z_pol;
        }
        Ok(ok)
    }

    fn finish(&self, status: SolverStatus, iterations: usize, polished: bool) -> RawSolution {
        let s = &self.s;
        let (x, y) = match status {
            SolverStatus::Optimal | SolverStatus::MaxIterations => (
                self.x.iter().zip(&s.d).map(|(v, d)| v * d).collect(),
                self.y.iter().zip(&s.e).map(|(v, e)| v * e / s.c).collect(),
            ),
            // certificates: directions rather than points
            SolverStatus::PrimalInfeasible => (
                vec![f64::NAN; self.n()],
                self.y
                    .iter()
                    .zip(&self.y_prev)
                    .zip(&s.e)
                    .map(|((a, b), e)| (a - b) * e / s.c)
                    .collect(),
            ),
            SolverStatus::DualInfeasible => (
                self.x
                    .iter()
                    .zip(&self.x_prev)
                    .zip(&s.d)
                    .map(|((a, b), d)| (a - b) * d)
                    .collect(),
                vec![f64::NAN; self.z.len()],
            ),
        };
        RawSolution {
            status,
            x,
            y,
            iterations,
            polished,
        }
    }
}

fn rho_vector(kinds: &[RowKind], rho: f64) -> Vec<f64> {
    kinds
        .iter()
        .map(|k| match k {
            RowKind::Equality => (RHO_EQ_FACTOR * rho).min(RHO_MAX),
            RowKind::Inequality => rho,
            RowKind::Free => RHO_MIN,
        })
        .collect()
}
