//! Robust counterpart of the disturbance-feedback program and its assembly
//! into a sparse quadratic program over `(q_params, v, aux)`.
//!
//! Row `i` of the lifted constraints must hold for every admissible
//! disturbance sequence:
//!
//! ```text
//! F_i v + max_w (F_i Q P + G_i) w <= c_i
//! ```
//!
//! With `Q = Σ q_k Q_k` the row vector `a_i(q) = F_i Q P + G_i` is affine in
//! `q`. The terminal disturbance block is zero, so its columns are dropped.

use std::ops::Range;

use gss_qp::{
    solve, Method, QuadraticProgram, SolverResult, SolverSettings, SolverStatus, SparseMatrix,
};
use log::debug;
use nalgebra::{DMatrix, DVector};

use crate::binalg::{leq, max_outside, sparse_member};
use crate::error::{dim_err, CoreError, Result};
use crate::gss::{certify_sparsity_preserving, q_to_l, qi_check_subspace, GssSpec};
use crate::stacked::StackedSystem;

/// Per-stage disturbance set, identical for stages `0..N`.
#[derive(Debug, Clone)]
pub enum DisturbanceSet {
    /// `|w_j| <= half_width_j`
    Box { half_width: DVector<f64> },
    /// `M w <= h`, assumed nonempty and bounded.
    Polytope { m: DMatrix<f64>, h: DVector<f64> },
}

impl DisturbanceSet {
    pub fn validate(&self, n: usize) -> Result<()> {
        match self {
            DisturbanceSet::Box { half_width } => {
                if half_width.len() != n {
                    return dim_err(format!(
                        "box has {} half-widths, expected {n}",
                        half_width.len()
                    ));
                }
                if half_width.iter().any(|&d| !(d >= 0.0) || !d.is_finite()) {
                    return Err(CoreError::Invalid(
                        "box half-widths must be finite and nonnegative".into(),
                    ));
                }
            }
            DisturbanceSet::Polytope { m, h } => {
                if m.ncols() != n || m.nrows() != h.len() {
                    return dim_err(format!(
                        "polytope M is {}x{} with {} offsets, expected {n} columns",
                        m.nrows(),
                        m.ncols(),
                        h.len()
                    ));
                }
                if m.iter().chain(h.iter()).any(|v| !v.is_finite()) {
                    return Err(CoreError::Invalid("polytope data must be finite".into()));
                }
            }
        }
        Ok(())
    }
}

/// Diagonal quadratic cost on the disturbance-free trajectory:
/// `Σ_{k<=N} (x_k - r_k)ᵀ W_k (x_k - r_k) + Σ_{k<N} u_kᵀ R_k u_k`.
#[derive(Debug, Clone)]
pub struct CostSpec {
    /// `N + 1` diagonals.
    pub state_weights: Vec<DVector<f64>>,
    /// `N` diagonals.
    pub input_weights: Vec<DVector<f64>>,
    /// `N + 1` references.
    pub state_refs: Vec<DVector<f64>>,
}

impl CostSpec {
    pub fn zero(n: usize, m: usize, horizon: usize) -> Self {
        Self {
            state_weights: vec![DVector::zeros(n); horizon + 1],
            input_weights: vec![DVector::zeros(m); horizon],
            state_refs: vec![DVector::zeros(n); horizon + 1],
        }
    }

    pub fn validate(&self, n: usize, m: usize, horizon: usize) -> Result<()> {
        if self.state_weights.len() != horizon + 1
            || self.state_refs.len() != horizon + 1
            || self.input_weights.len() != horizon
        {
            return dim_err(format!(
                "cost has {} state weights, {} references and {} input weights for horizon {horizon}",
                self.state_weights.len(),
                self.state_refs.len(),
                self.input_weights.len()
            ));
        }
        let states_ok = self
            .state_weights
            .iter()
            .chain(&self.state_refs)
            .all(|w| w.len() == n);
        if !states_ok || self.input_weights.iter().any(|w| w.len() != m) {
            return dim_err("cost vectors do not match the state and input dimensions");
        }
        let weights = self.state_weights.iter().chain(&self.input_weights);
        if weights
            .flat_map(|w| w.iter())
            .any(|&v| !(v >= 0.0) || !v.is_finite())
        {
            return Err(CoreError::Invalid(
                "cost weights must be finite and nonnegative".into(),
            ));
        }
        Ok(())
    }

    /// Cost of explicit state (`N + 1`) and input (`N`) sequences.
    pub fn evaluate(&self, states: &[DVector<f64>], inputs: &[DVector<f64>]) -> f64 {
        let mut j = 0.0;
        for ((x, w), r) in states.iter().zip(&self.state_weights).zip(&self.state_refs) {
            j += (x - r).component_mul(&(x - r)).dot(w);
        }
        for (u, w) in inputs.iter().zip(&self.input_weights) {
            j += u.component_mul(u).dot(w);
        }
        j
    }
}

/// Whether `assemble_qp` demands a sparsity-preservation certificate.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Certification {
    Required,
    /// For relaxations whose pattern deliberately exceeds the information
    /// structure.
    Override,
}

/// Variable spans of the assembled program.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct QpLayout {
    pub num_params: usize,
    pub num_inputs: usize,
    pub num_aux: usize,
}

impl QpLayout {
    pub fn q_params(&self) -> Range<usize> {
        0..self.num_params
    }

    pub fn v(&self) -> Range<usize> {
        self.num_params..self.num_params + self.num_inputs
    }

    pub fn aux(&self) -> Range<usize> {
        let start = self.num_params + self.num_inputs;
        start..start + self.num_aux
    }

    pub fn num_vars(&self) -> usize {
        self.num_params + self.num_inputs + self.num_aux
    }
}

#[derive(Debug, Clone)]
pub struct QpProblem {
    pub qp: QuadraticProgram,
    pub layout: QpLayout,
    /// Objective offset, so that the cost equals `qp.objective(x) + constant`.
    pub constant: f64,
}

/// `Σ_j |a_j| d_j`, the maximum of `a·w` over the box `|w_j| <= d_j`.
pub fn worst_case_box(a: &[f64], half_width: &[f64]) -> f64 {
    a.iter().zip(half_width).map(|(x, d)| x.abs() * d).sum()
}

/// The support LPs are tiny and often dual degenerate, where the splitting
/// iteration crawls.
fn lp_settings() -> SolverSettings {
    SolverSettings {
        method: Method::InteriorPoint,
        eps_abs: 1e-10,
        eps_rel: 1e-10,
        ..Default::default()
    }
}

/// `max { aᵀ w : M w <= h }` solved as a linear program.
pub fn polytope_support(m: &DMatrix<f64>, h: &DVector<f64>, a: &[f64]) -> Result<f64> {
    let n = m.ncols();
    if a.len() != n {
        return dim_err(format!(
            "row has {} entries, polytope has {n} columns",
            a.len()
        ));
    }
    if a.iter().all(|&v| v == 0.0) {
        return Ok(0.0);
    }
    let qp = QuadraticProgram::new(
        SparseMatrix::zeros(n, n),
        a.iter().map(|v| -v).collect(),
        SparseMatrix::zeros(0, n),
        vec![],
        dense_to_sparse(m),
        h.iter().copied().collect(),
    )?;
    let res = solve(&qp, &lp_settings())?;
    match res.status {
        SolverStatus::Optimal => Ok(-res.objective),
        SolverStatus::DualInfeasible => Err(CoreError::Invalid(
            "disturbance polytope is unbounded in the direction of a constraint row".into(),
        )),
        status => Err(CoreError::SolverStatus(status)),
    }
}

/// `min { hᵀ z : Mᵀ z = a, z >= 0 }`, the dual of [`polytope_support`].
pub fn polytope_dual_value(m: &DMatrix<f64>, h: &DVector<f64>, a: &[f64]) -> Result<f64> {
    let (k, n) = m.shape();
    if a.len() != n {
        return dim_err(format!(
            "row has {} entries, polytope has {n} columns",
            a.len()
        ));
    }
    let neg_identity: Vec<(usize, usize, f64)> = (0..k).map(|r| (r, r, -1.0)).collect();
    let qp = QuadraticProgram::new(
        SparseMatrix::zeros(k, k),
        h.iter().copied().collect(),
        dense_to_sparse(&m.transpose()),
        a.to_vec(),
        SparseMatrix::from_triplets(k, k, &neg_identity),
        vec![0.0; k],
    )?;
    let res = solve(&qp, &lp_settings())?;
    match res.status {
        SolverStatus::Optimal => Ok(res.objective),
        status => Err(CoreError::SolverStatus(status)),
    }
}

pub fn dense_to_sparse(m: &DMatrix<f64>) -> SparseMatrix {
    let mut triplets = Vec::new();
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            let v = m[(i, j)];
            if v != 0.0 {
                triplets.push((i, j, v));
            }
        }
    }
    SparseMatrix::from_triplets(m.nrows(), m.ncols(), &triplets)
}

/// Sparse row vectors `b_kᵀ P` restricted to the first `N` disturbance
/// stages, one per basis element.
fn basis_disturbance_rows(ss: &StackedSystem, spec: &GssSpec) -> Vec<Vec<(usize, f64)>> {
    let nw = ss.n * ss.horizon;
    let p = &ss.dynamics.p;
    spec.basis
        .iter()
        .map(|el| {
            (0..nw)
                .filter_map(|j| {
                    let v: f64 = el.entries.iter().map(|&(r, b)| b * p[(r, j)]).sum();
                    (v != 0.0).then_some((j, v))
                })
                .collect()
        })
        .collect()
}

fn check_spec(ss: &StackedSystem, spec: &GssSpec, cert: Certification) -> Result<()> {
    let shape = (ss.m * (ss.horizon + 1), ss.p * (ss.horizon + 1));
    if spec.shape() != shape {
        return dim_err(format!(
            "subspace is over {:?} matrices, the lifted system needs {:?}",
            spec.shape(),
            shape
        ));
    }
    if !leq(&spec.t, &ss.causal_mask())? {
        return Err(CoreError::NonCausal(
            "pattern T reaches outside the causal mask".into(),
        ));
    }
    if cert == Certification::Required {
        let certificate = certify_sparsity_preserving(&spec.t, &spec.y, &ss.sbold)?;
        if !certificate.passed() {
            return Err(CoreError::Uncertified(format!(
                "{} entries of T outside S, {} entries of YT outside T",
                certificate.outside_s.len(),
                certificate.yt_excess.len()
            )));
        }
    }
    Ok(())
}

/// Assembles the robust program. Variables are `[q_params, v, aux]`.
pub fn assemble_qp(
    ss: &StackedSystem,
    spec: &GssSpec,
    cost: &CostSpec,
    dist: &DisturbanceSet,
    cert: Certification,
) -> Result<QpProblem> {
    let (n, m, horizon) = (ss.n, ss.m, ss.horizon);
    check_spec(ss, spec, cert)?;
    cost.validate(n, m, horizon)?;
    dist.validate(n)?;

    let d = spec.dim();
    let nv = m * (horizon + 1);
    let nw = n * horizon;
    let f = &ss.constraints.f;
    let g = &ss.constraints.g;
    let c = &ss.constraints.c;
    let rows = c.len();
    let w_rows = basis_disturbance_rows(ss, spec);

    let mut ineq: Vec<(usize, usize, f64)> = Vec::new();
    let mut ineq_rhs: Vec<f64> = Vec::new();
    let mut eq: Vec<(usize, usize, f64)> = Vec::new();
    let mut eq_rhs: Vec<f64> = Vec::new();
    let mut num_aux = 0usize;
    let aux0 = d + nv;

    // coefficient lists of a_i(q), one per disturbance column
    let mut coeffs: Vec<Vec<(usize, f64)>> = vec![Vec::new(); nw];
    for i in 0..rows {
        coeffs.iter_mut().for_each(Vec::clear);
        for (k, el) in spec.basis.iter().enumerate() {
            let fik = f[(i, el.row)];
            if fik == 0.0 {
                continue;
            }
            for &(j, w) in &w_rows[k] {
                coeffs[j].push((k, fik * w));
            }
        }

        let mut robust: Vec<(usize, f64)> = (0..nv)
            .filter(|&j| f[(i, j)] != 0.0)
            .map(|j| (d + j, f[(i, j)]))
            .collect();
        let mut rhs = c[i];

        match dist {
            DisturbanceSet::Box { half_width } => {
                for j in 0..nw {
                    let dj = half_width[j % n];
                    if dj == 0.0 {
                        continue;
                    }
                    if coeffs[j].is_empty() {
                        rhs -= g[(i, j)].abs() * dj;
                        continue;
                    }
                    // λ >= a_ij(q) and λ >= -a_ij(q)
                    let lambda = aux0 + num_aux;
                    num_aux += 1;
                    for sign in [1.0, -1.0] {
                        let row = ineq_rhs.len();
                        for &(k, v) in &coeffs[j] {
                            ineq.push((row, k, sign * v));
                        }
                        ineq.push((row, lambda, -1.0));
                        ineq_rhs.push(-sign * g[(i, j)]);
                    }
                    robust.push((lambda, dj));
                }
            }
            DisturbanceSet::Polytope { m: pm, h } => {
                let faces = h.len();
                for stage in 0..horizon {
                    let cols = stage * n..(stage + 1) * n;
                    let active = cols
                        .clone()
                        .any(|j| !coeffs[j].is_empty() || g[(i, j)] != 0.0);
                    if !active {
                        continue;
                    }
                    // z >= 0, Mᵀ z = a_{i,stage}(q)
                    let z0 = aux0 + num_aux;
                    num_aux += faces;
                    for r in 0..faces {
                        let row = ineq_rhs.len();
                        ineq.push((row, z0 + r, -1.0));
                        ineq_rhs.push(0.0);
                        robust.push((z0 + r, h[r]));
                    }
                    for (local, j) in cols.enumerate() {
                        let row = eq_rhs.len();
                        for r in 0..faces {
                            if pm[(r, local)] != 0.0 {
                                eq.push((row, z0 + r, pm[(r, local)]));
                            }
                        }
                        for &(k, v) in &coeffs[j] {
                            eq.push((row, k, -v));
                        }
                        eq_rhs.push(g[(i, j)]);
                    }
                }
            }
        }
        let row = ineq_rhs.len();
        ineq.extend(robust.into_iter().map(|(col, v)| (row, col, v)));
        ineq_rhs.push(rhs);
    }

    // the padded terminal input is zero
    for j in m * horizon..nv {
        let row = eq_rhs.len();
        eq.push((row, d + j, 1.0));
        eq_rhs.push(0.0);
    }

    let layout = QpLayout {
        num_params: d,
        num_inputs: nv,
        num_aux,
    };
    let nvars = layout.num_vars();
    let (hessian, linear, constant) = objective_terms(ss, cost, d, nvars);
    let qp = QuadraticProgram::new(
        hessian,
        linear,
        SparseMatrix::from_triplets(eq_rhs.len(), nvars, &eq),
        eq_rhs,
        SparseMatrix::from_triplets(ineq_rhs.len(), nvars, &ineq),
        ineq_rhs,
    )?;
    debug!(
        "assembled qp: params={d} inputs={nv} aux={num_aux} eq={} ineq={} nnz={}",
        qp.num_eq(),
        qp.num_ineq(),
        qp.eq_matrix.nnz() + qp.ineq_matrix.nnz()
    );
    Ok(QpProblem {
        qp,
        layout,
        constant,
    })
}

/// With `x̂ = Abold x0 + Bbold v` and `e = Abold x0 - r`, the cost is
/// `vᵀ (BᵀWB + R) v + 2 eᵀ W B v + eᵀ W e`.
fn objective_terms(
    ss: &StackedSystem,
    cost: &CostSpec,
    offset: usize,
    nvars: usize,
) -> (SparseMatrix, Vec<f64>, f64) {
    let (n, m, horizon) = (ss.n, ss.m, ss.horizon);
    let w = DVector::from_iterator(
        n * (horizon + 1),
        cost.state_weights.iter().flat_map(|v| v.iter().copied()),
    );
    let mut r = DVector::zeros(m * (horizon + 1));
    for (k, rk) in cost.input_weights.iter().enumerate() {
        r.rows_mut(k * m, m).copy_from(rk);
    }
    let refs = DVector::from_iterator(
        n * (horizon + 1),
        cost.state_refs.iter().flat_map(|v| v.iter().copied()),
    );
    let b = &ss.dynamics.bbold;
    let e = &ss.dynamics.abold * &ss.x0 - refs;
    let wb = DMatrix::from_fn(b.nrows(), b.ncols(), |i, j| w[i] * b[(i, j)]);
    let mut h = b.transpose() * &wb;
    for j in 0..h.nrows() {
        h[(j, j)] += r[j];
    }
    h *= 2.0;
    let lin = wb.transpose() * &e * 2.0;
    let constant = e.component_mul(&e).dot(&w);

    let mut triplets = Vec::new();
    for j in 0..h.ncols() {
        for i in 0..=j {
            if h[(i, j)] != 0.0 {
                triplets.push((offset + i, offset + j, h[(i, j)]));
            }
        }
    }
    let mut linear = vec![0.0; nvars];
    linear[offset..offset + lin.len()].copy_from_slice(lin.as_slice());
    (
        SparseMatrix::from_triplets(nvars, nvars, &triplets),
        linear,
        constant,
    )
}

#[derive(Debug, Clone)]
pub struct CertificationRecord {
    /// `T <= S` and `Y T <= T`.
    pub sparsity_preserving: bool,
    pub overridden: bool,
    /// Recovered `L` lies in `Sparse(Sbold)` at tolerance `1e-6`.
    pub l_in_s: bool,
    /// Largest entry of `L` outside the information structure.
    pub l_violation: f64,
    /// The parameter subspace is QI with respect to `CB`.
    pub qi_subspace: bool,
}

#[derive(Debug, Clone)]
pub struct SynthesisResult {
    pub status: SolverStatus,
    pub q_params: Vec<f64>,
    pub q: DMatrix<f64>,
    pub v: DVector<f64>,
    pub l: DMatrix<f64>,
    pub g: DVector<f64>,
    pub objective: f64,
    pub certification: CertificationRecord,
    /// `c_i - F_i v - max_w (F_i Q P + G_i) w` per constraint row.
    pub worst_case_slacks: DVector<f64>,
    pub iterations: usize,
    pub prim_res: f64,
    pub dual_res: f64,
}

impl SynthesisResult {
    pub fn min_slack(&self) -> f64 {
        self.worst_case_slacks
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }
}

/// Worst-case slack of every lifted constraint row for a fixed `(Q, v)`.
pub fn worst_case_slacks(
    ss: &StackedSystem,
    q: &DMatrix<f64>,
    v: &DVector<f64>,
    dist: &DisturbanceSet,
) -> Result<DVector<f64>> {
    let (n, horizon) = (ss.n, ss.horizon);
    let nw = n * horizon;
    let f = &ss.constraints.f;
    let a = f * q * ss.dynamics.p.columns(0, nw) + ss.constraints.g.columns(0, nw);
    let nominal = &ss.constraints.c - f * v;
    let mut slack = DVector::zeros(nominal.len());
    for i in 0..nominal.len() {
        let row: Vec<f64> = a.row(i).iter().copied().collect();
        let worst = match dist {
            DisturbanceSet::Box { half_width } => {
                let d: Vec<f64> = (0..nw).map(|j| half_width[j % n]).collect();
                worst_case_box(&row, &d)
            }
            DisturbanceSet::Polytope { m, h } => {
                let mut total = 0.0;
                for stage in 0..horizon {
                    total += polytope_support(m, h, &row[stage * n..(stage + 1) * n])?;
                }
                total
            }
        };
        slack[i] = nominal[i] - worst;
    }
    Ok(slack)
}

/// Maps a solver result back to `(Q, v)`, `(L, g)` and re-verifies it.
pub fn extract_solution(
    problem: &QpProblem,
    raw: &SolverResult,
    ss: &StackedSystem,
    spec: &GssSpec,
    dist: &DisturbanceSet,
    cert: Certification,
) -> Result<SynthesisResult> {
    match raw.status {
        SolverStatus::Optimal | SolverStatus::MaxIterations => {}
        status => return Err(CoreError::SolverStatus(status)),
    }
    let layout = &problem.layout;
    let q_params = raw.x[layout.q_params()].to_vec();
    let v = DVector::from_column_slice(&raw.x[layout.v()]);
    let q = spec.assemble(&q_params)?;
    let (l, g) = q_to_l(&q, &v, &ss.cb, &ss.ca_x0)?;
    let sparsity_preserving = certify_sparsity_preserving(&spec.t, &spec.y, &ss.sbold)?.passed();
    let l_in_s = sparse_member(&l, &ss.sbold, 1e-6)?;
    let l_violation = max_outside(&l, &ss.sbold);
    if cert == Certification::Required && !l_in_s {
        log::warn!("recovered L leaves the information structure by {l_violation:e}");
    }
    let qi_subspace = qi_check_subspace(spec, &ss.cb)?;
    let worst_case_slacks = worst_case_slacks(ss, &q, &v, dist)?;
    Ok(SynthesisResult {
        status: raw.status,
        objective: problem.qp.objective(&raw.x) + problem.constant,
        certification: CertificationRecord {
            sparsity_preserving,
            overridden: cert == Certification::Override,
            l_in_s,
            l_violation,
            qi_subspace,
        },
        q_params,
        q,
        v,
        l,
        g,
        worst_case_slacks,
        iterations: raw.iterations,
        prim_res: raw.prim_res,
        dual_res: raw.dual_res,
    })
}

/// Assemble, solve and extract in one call.
pub fn synthesize(
    ss: &StackedSystem,
    spec: &GssSpec,
    cost: &CostSpec,
    dist: &DisturbanceSet,
    cert: Certification,
    settings: &SolverSettings,
) -> Result<SynthesisResult> {
    let problem = assemble_qp(ss, spec, cost, dist, cert)?;
    let raw = solve(&problem.qp, settings)?;
    extract_solution(&problem, &raw, ss, spec, dist, cert)
}
