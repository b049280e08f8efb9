//! Mehrotra predictor-corrector on the equilibrated problem
//!
//! ```text
//! minimize ½ xᵀ P x + qᵀ x   subject to   A_E x = b_E,   A_I x + s = u_I,   s >= 0
//! ```
//!
//! Rows with `l = u` are equalities, rows with finite `u` inequalities; rows
//! free on both sides are dropped. The reduced Newton system is quasi-definite
//! and shares one symbolic factorization across iterations.

use log::{debug, trace};

use crate::error::QpError;
use crate::ldlt::LdltSolver;
use crate::settings::SolverSettings;
use crate::solver::{RawSolution, Scaled, SolverStatus};
use crate::sparse::SparseMatrix;

const REG_PRIMAL: f64 = 1e-8;
const REG_DUAL: f64 = 1e-8;
const PIVOT_DELTA: f64 = 2e-7;
/// Pivot regularization is raised by this factor when a direction comes back
/// non-finite or inaccurate.
const PIVOT_BUMP: f64 = 1e3;
const PIVOT_RETRIES: usize = 3;
/// Relative residual after refinement above which a factorization is
/// considered broken.
const REFINE_ACCEPT: f64 = 1e-4;
const STEP_FRACTION: f64 = 0.99;
const REFINE_STEPS: usize = 10;
const DIVERGENCE: f64 = 1e13;

struct Newton {
    kkt: LdltSolver,
    n: usize,
    /// Storage positions of the diagonal of the inequality rows.
    ineq_diag: Vec<usize>,
    is_eq: Vec<bool>,
    scratch: Vec<f64>,
    resid: Vec<f64>,
    last_err: f64,
}

impl Newton {
    fn new(p: &SparseMatrix, a: &SparseMatrix, is_eq: Vec<bool>) -> Result<Self, QpError> {
        let n = p.ncols();
        let m = a.nrows();
        let mut triplets: Vec<(usize, usize, f64)> = p.triplets().collect();
        triplets.extend((0..n).map(|j| (j, j, REG_PRIMAL)));
        for (i, j, v) in a.triplets() {
            triplets.push((j, n + i, v));
        }
        triplets.extend((0..m).map(|r| (n + r, n + r, if is_eq[r] { -REG_DUAL } else { -1.0 })));
        let upper = SparseMatrix::from_triplets(n + m, n + m, &triplets);
        let signs = (0..n + m).map(|k| if k < n { 1 } else { -1 }).collect();
        let mut kkt = LdltSolver::new(upper, signs)?;
        kkt.set_fixed_regularization(PIVOT_DELTA);
        let ineq_diag = (0..m)
            .filter(|&r| !is_eq[r])
            .map(|r| kkt.position(n + r, n + r).expect("diagonal present"))
            .collect();
        Ok(Self {
            kkt,
            n,
            ineq_diag,
            is_eq,
            scratch: vec![0.0; n + m],
            resid: vec![0.0; n + m],
            last_err: 0.0,
        })
    }

    /// Sets the inequality block to `-(w + REG_DUAL)` and refactors.
    fn factor(&mut self, w: impl Iterator<Item = f64>, delta: f64) -> Result<(), QpError> {
        for (&pos, wi) in self.ineq_diag.iter().zip(w) {
            self.kkt.set_value(pos, -wi - REG_DUAL);
        }
        self.kkt.set_fixed_regularization(delta);
        self.kkt.refactor()
    }

    /// Solves in place, refining towards the system without the static
    /// regularization.
    fn solve(&mut self, rhs: &mut [f64]) {
        let target = rhs.to_vec();
        self.kkt.solve_in_place(rhs);
        let target_norm = inf_norm(&target);
        let mut best = f64::INFINITY;
        let mut best_sol = rhs.to_vec();
        for step in 0..=REFINE_STEPS {
            self.kkt.mul_vec(rhs, &mut self.scratch);
            for (k, v) in self.scratch.iter_mut().enumerate() {
                if k < self.n {
                    *v -= REG_PRIMAL * rhs[k];
                } else {
                    *v += REG_DUAL * rhs[k];
                }
            }
            for k in 0..rhs.len() {
                self.resid[k] = target[k] - self.scratch[k];
            }
            let err = inf_norm(&self.resid);
            if !(err < best) {
                break;
            }
            let converged = err <= 1e-12 + 1e-13 * target_norm;
            let stalled = err > best / 5.0;
            best = err;
            best_sol.copy_from_slice(rhs);
            if converged || stalled || step == REFINE_STEPS {
                break;
            }
            self.kkt.solve_in_place(&mut self.resid);
            rhs.iter_mut().zip(&self.resid).for_each(|(r, d)| *r += d);
        }
        rhs.copy_from_slice(&best_sol);
        self.last_err = best / target_norm.max(1e-300);
    }

    fn is_eq(&self, r: usize) -> bool {
        self.is_eq[r]
    }
}

fn inf_norm(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Largest step in `(0, 1]` keeping `v + t dv >= 0` on the inequality rows.
fn max_step(v: &[f64], dv: &[f64], ineq: &[usize]) -> f64 {
    ineq.iter().fold(
        1.0f64,
        |t, &r| {
            if dv[r] < 0.0 {
                t.min(-v[r] / dv[r])
            } else {
                t
            }
        },
    )
}

/// Runs the interior-point iteration. A result with status other than
/// `Optimal` means the method stalled; it never certifies infeasibility.
pub(crate) fn run(s: &Scaled, settings: &SolverSettings) -> Result<RawSolution, QpError> {
    let n = s.q.len();
    let mut rows = Vec::new();
    let mut is_eq = Vec::new();
    for i in 0..s.a.nrows() {
        if s.l[i] == s.u[i] {
            rows.push(i);
            is_eq.push(true);
        } else if s.u[i].is_finite() {
            debug_assert!(
                s.l[i] == f64::NEG_INFINITY,
                "two-sided rows are not produced"
            );
            rows.push(i);
            is_eq.push(false);
        }
    }
    let m = rows.len();
    let a = s.a.select_rows(&rows);
    let b: Vec<f64> = rows.iter().map(|&i| s.u[i]).collect();
    let e_inv: Vec<f64> = rows.iter().map(|&i| s.e_inv[i]).collect();
    let ineq: Vec<usize> = (0..m).filter(|&r| !is_eq[r]).collect();
    let mi = ineq.len();
    let mut newton = Newton::new(&s.p, &a, is_eq)?;

    // initial point: regularized least squares, then shift s and z inside
    let mut sol = vec![0.0; n + m];
    for j in 0..n {
        sol[j] = -s.q[j];
    }
    sol[n..].copy_from_slice(&b);
    newton.factor(std::iter::repeat(1.0), PIVOT_DELTA)?;
    newton.solve(&mut sol);
    let mut x = sol[..n].to_vec();
    let mut w = sol[n..].to_vec();
    let mut sv = vec![0.0; m];
    if mi > 0 {
        for &r in &ineq {
            sv[r] = -w[r];
        }
        let shift_s = -ineq.iter().map(|&r| sv[r]).fold(f64::INFINITY, f64::min);
        let shift_z = -ineq.iter().map(|&r| w[r]).fold(f64::INFINITY, f64::min);
        for &r in &ineq {
            if shift_s >= 0.0 {
                sv[r] += 1.0 + shift_s;
            }
            if shift_z >= 0.0 {
                w[r] += 1.0 + shift_z;
            }
        }
        // balance the complementarity products
        let sz: f64 = ineq.iter().map(|&r| sv[r] * w[r]).sum();
        let sum_s: f64 = ineq.iter().map(|&r| sv[r]).sum();
        let sum_z: f64 = ineq.iter().map(|&r| w[r]).sum();
        let (bs, bz) = (0.5 * sz / sum_z, 0.5 * sz / sum_s);
        for &r in &ineq {
            sv[r] += bs;
            w[r] += bz;
        }
    }

    let mut ax = vec![0.0; m];
    let mut px = vec![0.0; n];
    let mut atw = vec![0.0; n];
    let mut r_d = vec![0.0; n];
    let mut r_p = vec![0.0; m];
    let mut rhs = vec![0.0; n + m];
    let mut ds_aff = vec![0.0; m];
    let mut dz_aff = vec![0.0; m];
    let mut ds = vec![0.0; m];
    let mut status = SolverStatus::MaxIterations;
    let mut iterations = 0;

    for iter in 0..=settings.ipm_max_iter {
        iterations = iter;
        a.mul_vec(&x, &mut ax);
        s.p.sym_upper_mul_vec(&x, &mut px);
        a.tr_mul_vec(&w, &mut atw);
        for j in 0..n {
            r_d[j] = px[j] + s.q[j] + atw[j];
        }
        for r in 0..m {
            r_p[r] = ax[r] - b[r] + sv[r];
        }
        let gap: f64 = ineq.iter().map(|&r| sv[r] * w[r]).sum();
        let mu = if mi > 0 { gap / mi as f64 } else { 0.0 };

        // termination on the unscaled problem
        let prim = (0..m).fold(0.0f64, |acc, r| acc.max((e_inv[r] * r_p[r]).abs()));
        let prim_scale = (0..m).fold(0.0f64, |acc, r| {
            acc.max((e_inv[r] * ax[r]).abs())
                .max((e_inv[r] * b[r]).abs())
        });
        let dual_of =
            |v: &[f64]| (0..n).fold(0.0f64, |acc, j| acc.max((s.d_inv[j] * v[j]).abs())) / s.c;
        let dual = dual_of(&r_d);
        let dual_scale = dual_of(&px).max(dual_of(&atw)).max(dual_of(&s.q));
        let xpx: f64 = x.iter().zip(&px).map(|(a, b)| a * b).sum();
        let qx: f64 = x.iter().zip(&s.q).map(|(a, b)| a * b).sum();
        let eps_prim = settings.eps_abs + settings.eps_rel * prim_scale;
        let eps_dual = settings.eps_abs + settings.eps_rel * dual_scale;
        let eps_gap = settings.eps_abs + settings.eps_rel * xpx.abs().max(qx.abs()) / s.c;
        trace!(
            "ipm {iter}: prim={prim:.3e}/{eps_prim:.3e} dual={dual:.3e}/{eps_dual:.3e} gap={:.3e}/{eps_gap:.3e}",
            gap / s.c
        );
        if prim <= eps_prim && dual <= eps_dual && gap.abs() / s.c <= eps_gap {
            status = SolverStatus::Optimal;
            break;
        }
        let size = inf_norm(&x).max(inf_norm(&w)).max(inf_norm(&sv));
        if iter == settings.ipm_max_iter || !(size < DIVERGENCE) {
            break;
        }

        // predictor, refactoring with heavier pivot regularization when the
        // direction is not usable
        let fill_rhs = |rhs: &mut [f64], rc: &dyn Fn(usize) -> f64, newton: &Newton| {
            for j in 0..n {
                rhs[j] = -r_d[j];
            }
            for r in 0..m {
                rhs[n + r] = if newton.is_eq(r) {
                    -r_p[r]
                } else {
                    -r_p[r] + rc(r) / w[r]
                };
            }
        };
        let mut delta = PIVOT_DELTA;
        let mut ok = false;
        for _ in 0..=PIVOT_RETRIES {
            if let Err(e) = newton.factor(ineq.iter().map(|&r| sv[r] / w[r]), delta) {
                debug!("ipm: {e} at pivot regularization {delta:e}");
            } else {
                fill_rhs(&mut rhs, &|r| sv[r] * w[r], &newton);
                newton.solve(&mut rhs);
                if newton.last_err < REFINE_ACCEPT && rhs.iter().all(|v| v.is_finite()) {
                    ok = true;
                    break;
                }
            }
            delta *= PIVOT_BUMP;
        }
        if !ok {
            break;
        }
        // slack steps from the linearized complementarity, so the dual
        // regularization cannot push a tiny slack across the boundary
        for &r in &ineq {
            dz_aff[r] = rhs[n + r];
            ds_aff[r] = -(sv[r] * w[r] + sv[r] * dz_aff[r]) / w[r];
        }
        let alpha_aff = max_step(&sv, &ds_aff, &ineq).min(max_step(&w, &dz_aff, &ineq));
        let sigma = if mi > 0 && mu > 0.0 {
            let mu_aff: f64 = ineq
                .iter()
                .map(|&r| (sv[r] + alpha_aff * ds_aff[r]) * (w[r] + alpha_aff * dz_aff[r]))
                .sum::<f64>()
                / mi as f64;
            (mu_aff / mu).clamp(0.0, 1.0).powi(3)
        } else {
            0.0
        };

        // corrector
        let rc = |r: usize| sv[r] * w[r] + ds_aff[r] * dz_aff[r] - sigma * mu;
        fill_rhs(&mut rhs, &rc, &newton);
        newton.solve(&mut rhs);
        for &r in &ineq {
            ds[r] = -(rc(r) + sv[r] * rhs[n + r]) / w[r];
        }
        if !rhs.iter().all(|v| v.is_finite()) {
            break;
        }
        let dw = &rhs[n..];
        let alpha =
            (STEP_FRACTION * max_step(&sv, &ds, &ineq).min(max_step(&w, dw, &ineq))).min(1.0);
        trace!("ipm step: alpha_aff={alpha_aff:.3e} sigma={sigma:.3e} alpha={alpha:.3e} refine_err={:.3e}", newton.last_err);
        for j in 0..n {
            x[j] += alpha * rhs[j];
        }
        for r in 0..m {
            w[r] += alpha * dw[r];
        }
        for &r in &ineq {
            sv[r] += alpha * ds[r];
        }
    }

    debug!("ipm: status={status} iterations={iterations}");
    let mut y = vec![0.0; s.a.nrows()];
    for (r, &i) in rows.iter().enumerate() {
        y[i] = w[r] * s.e[i] / s.c;
    }
    Ok(RawSolution {
        status,
        x: x.iter().zip(&s.d).map(|(v, d)| v * d).collect(),
        y,
        iterations,
        polished: false,
    })
}
