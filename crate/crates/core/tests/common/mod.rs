#![allow(dead_code)]

use gss_core::binalg::BinMatrix;
use gss_core::gss::{gss_parametrize, q_to_l, ymax, GssSpec};
use gss_core::robust::{assemble_qp, Certification, CostSpec, DisturbanceSet};
use gss_core::rollout::{simulate_explicit, verify_constraints};
use gss_core::stacked::{ConstraintSet, InfoStructure, StackedSystem, SystemModel};
use gss_qp::{solve, QuadraticProgram, SolverSettings, SolverStatus, SparseMatrix};
use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> DMatrix<f64> {
    DMatrix::from_fn(rows, cols, |_, _| rng.random_range(-1.0..1.0))
}

pub fn random_vector(rng: &mut ChaCha8Rng, len: usize) -> DVector<f64> {
    DVector::from_fn(len, |_, _| rng.random_range(-1.0..1.0))
}

/// Dense plant with a stable-ish `A` and a random direct disturbance `H`.
pub fn random_plant(rng: &mut ChaCha8Rng, n: usize, m: usize, p: usize) -> SystemModel {
    let a = random_matrix(rng, n, n) * (0.9 / n as f64);
    SystemModel::new(
        a,
        random_matrix(rng, n, m),
        random_matrix(rng, p, n),
        random_matrix(rng, n, n),
        random_matrix(rng, p, n),
    )
    .unwrap()
}

pub fn random_pattern(rng: &mut ChaCha8Rng, rows: usize, cols: usize, density: f64) -> BinMatrix {
    BinMatrix::from_fn(rows, cols, |_, _| rng.random_bool(density))
}

/// Independent random block for every `j <= k`.
pub fn random_info(
    rng: &mut ChaCha8Rng,
    horizon: usize,
    m: usize,
    p: usize,
    density: f64,
) -> InfoStructure {
    let mut info = InfoStructure::new(horizon);
    for k in 0..horizon {
        for j in 0..=k {
            info.set(k, j, random_pattern(rng, m, p, density));
        }
    }
    info
}

/// Keeps every one of `s` with probability `keep`.
pub fn thin(rng: &mut ChaCha8Rng, s: &BinMatrix, keep: f64) -> BinMatrix {
    BinMatrix::from_fn(s.rows(), s.cols(), |i, j| {
        s.get(i, j) && rng.random_bool(keep)
    })
}

pub fn random_in_pattern(rng: &mut ChaCha8Rng, pattern: &BinMatrix) -> DMatrix<f64> {
    DMatrix::from_fn(pattern.rows(), pattern.cols(), |i, j| {
        if pattern.get(i, j) {
            rng.random_range(-1.0..1.0)
        } else {
            0.0
        }
    })
}

pub fn bin(rows: &[&[u8]]) -> BinMatrix {
    BinMatrix::from_rows(rows).unwrap()
}

/// `(G, S, T)` of the three-by-three worked example.
pub fn example_one() -> (DMatrix<f64>, BinMatrix, BinMatrix) {
    let g = DMatrix::from_row_slice(3, 3, &[1., -2., 0., 2., -3., 0., 3., -1., 1.]);
    let s = bin(&[&[1, 1, 0], &[0, 1, 1], &[1, 0, 0]]);
    let t = bin(&[&[1, 1, 0], &[0, 1, 1], &[0, 0, 0]]);
    (g, s, t)
}

/// `max a·w` over `|w_j| <= d_j` by enumerating every vertex.
pub fn box_vertex_max(a: &[f64], d: &[f64]) -> f64 {
    let k = a.len();
    assert!(k <= 20);
    (0..1usize << k)
        .map(|code| {
            (0..k)
                .map(|j| {
                    if code >> j & 1 == 1 {
                        a[j] * d[j]
                    } else {
                        -a[j] * d[j]
                    }
                })
                .sum::<f64>()
        })
        .fold(f64::NEG_INFINITY, f64::max)
}

/// Every sign pattern of the box, as per-stage disturbance sequences.
pub fn box_vertex_sequences(half_width: &DVector<f64>, horizon: usize) -> Vec<Vec<DVector<f64>>> {
    let n = half_width.len();
    let bits = n * horizon;
    (0..1usize << bits)
        .map(|code| {
            (0..horizon)
                .map(|k| {
                    DVector::from_fn(n, |j, _| {
                        let up = code >> (k * n + j) & 1 == 1;
                        if up {
                            half_width[j]
                        } else {
                            -half_width[j]
                        }
                    })
                })
                .collect()
        })
        .collect()
}

pub fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Random plant with input, state and terminal boxes, a random
/// information structure and a random box disturbance.
pub struct SmallProblem {
    pub sys: SystemModel,
    pub cons: ConstraintSet,
    pub info: InfoStructure,
    pub x0: DVector<f64>,
    pub ss: StackedSystem,
    pub cost: CostSpec,
    pub dist: DisturbanceSet,
}

pub fn small_problem(
    rng: &mut ChaCha8Rng,
    n: usize,
    m: usize,
    p: usize,
    horizon: usize,
) -> SmallProblem {
    let sys = random_plant(rng, n, m, p);
    let s = 2 * m + 2 * n;
    let mut u = DMatrix::zeros(s, n);
    let mut v = DMatrix::zeros(s, m);
    let mut b = DVector::zeros(s);
    for i in 0..m {
        v[(2 * i, i)] = 1.0;
        v[(2 * i + 1, i)] = -1.0;
        b[2 * i] = 3.0;
        b[2 * i + 1] = 3.0;
    }
    for i in 0..n {
        u[(2 * m + 2 * i, i)] = 1.0;
        u[(2 * m + 2 * i + 1, i)] = -1.0;
        b[2 * m + 2 * i] = 4.0;
        b[2 * m + 2 * i + 1] = 4.0;
    }
    let r = DMatrix::from_fn(2 * n, n, |i, j| {
        if i / 2 == j {
            if i % 2 == 0 {
                1.0
            } else {
                -1.0
            }
        } else {
            0.0
        }
    });
    let cons = ConstraintSet {
        u,
        v,
        b,
        r,
        z: DVector::from_element(2 * n, 4.0),
    };
    let info = random_info(rng, horizon, m, p, 0.6);
    let x0 = random_vector(rng, n);
    let ss = StackedSystem::new(&sys, &cons, &info, &x0).unwrap();
    let cost = CostSpec {
        state_weights: (0..=horizon)
            .map(|_| DVector::from_fn(n, |_, _| rng.random_range(0.1..1.0)))
            .collect(),
        input_weights: (0..horizon)
            .map(|_| DVector::from_fn(m, |_, _| rng.random_range(0.0..0.1)))
            .collect(),
        state_refs: (0..=horizon).map(|_| random_vector(rng, n) * 3.0).collect(),
    };
    let dist = DisturbanceSet::Box {
        half_width: DVector::from_fn(n, |_, _| rng.random_range(0.0..0.2)),
    };
    SmallProblem {
        sys,
        cons,
        info,
        x0,
        ss,
        cost,
        dist,
    }
}

/// Largest gap between the worst-case slack encoded by the assembled
/// program and the slack found by simulating every vertex sequence, for
/// random fixed `(Q, v)`. The auxiliaries come from minimizing their sum
/// with `(Q, v)` pinned.
pub fn box_exactness_gap(p: &SmallProblem, spec: &GssSpec, rng: &mut ChaCha8Rng) -> f64 {
    let DisturbanceSet::Box { half_width } = &p.dist else {
        panic!("box disturbance expected")
    };
    let problem = assemble_qp(&p.ss, spec, &p.cost, &p.dist, Certification::Override).unwrap();
    let layout = problem.layout;
    let nvars = layout.num_vars();
    let aux0 = layout.aux().start;
    let (m, horizon) = (p.ss.m, p.ss.horizon);

    let q_params: Vec<f64> = (0..layout.num_params)
        .map(|_| rng.random_range(-1.0..1.0))
        .collect();
    let mut v = random_vector(rng, layout.num_inputs);
    v.rows_mut(m * horizon, m).fill(0.0);

    let qp = &problem.qp;
    let mut rows: Vec<Vec<(usize, f64)>> = vec![Vec::new(); qp.num_ineq()];
    for (i, j, val) in qp.ineq_matrix.triplets() {
        rows[i].push((j, val));
    }
    let is_epigraph = |r: &Vec<(usize, f64)>| r.iter().any(|&(j, val)| j >= aux0 && val == -1.0);

    let mut ineq = Vec::new();
    let mut ineq_rhs = Vec::new();
    for (i, r) in rows.iter().enumerate().filter(|(_, r)| is_epigraph(r)) {
        let row = ineq_rhs.len();
        ineq.extend(r.iter().map(|&(j, val)| (row, j, val)));
        ineq_rhs.push(qp.ineq_rhs[i]);
    }
    let pinned: Vec<f64> = q_params.iter().copied().chain(v.iter().copied()).collect();
    let eq: Vec<(usize, usize, f64)> = (0..pinned.len()).map(|k| (k, k, 1.0)).collect();
    let mut linear = vec![0.0; nvars];
    linear[aux0..].iter_mut().for_each(|c| *c = 1.0);
    let lp = QuadraticProgram::new(
        SparseMatrix::zeros(nvars, nvars),
        linear,
        SparseMatrix::from_triplets(pinned.len(), nvars, &eq),
        pinned,
        SparseMatrix::from_triplets(ineq_rhs.len(), nvars, &ineq),
        ineq_rhs,
    )
    .unwrap();
    let settings = SolverSettings {
        eps_abs: 1e-11,
        eps_rel: 1e-11,
        ..Default::default()
    };
    let res = solve(&lp, &settings).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);

    let encoded: Vec<f64> = rows
        .iter()
        .enumerate()
        .filter(|(_, r)| !is_epigraph(r))
        .map(|(i, r)| qp.ineq_rhs[i] - r.iter().map(|&(j, val)| val * res.x[j]).sum::<f64>())
        .collect();

    let q = spec.assemble(&q_params).unwrap();
    let (l, g) = q_to_l(&q, &v, &p.ss.cb, &p.ss.ca_x0).unwrap();
    let mut worst = vec![f64::INFINITY; encoded.len()];
    for w in box_vertex_sequences(half_width, horizon) {
        let traj = simulate_explicit(&p.sys, &l, &g, &p.x0, &w).unwrap();
        let report = verify_constraints(&traj, &p.cons);
        let flat = report
            .stage
            .iter()
            .chain(std::iter::once(&report.terminal))
            .flat_map(|s| s.iter().copied());
        for (slot, s) in worst.iter_mut().zip(flat) {
            *slot = slot.min(s);
        }
    }
    assert_eq!(worst.len(), p.ss.num_constraint_rows());
    encoded
        .iter()
        .zip(&worst)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
}

/// `max a·w` over `M w <= h` in the plane, by intersecting every pair of
/// facets.
pub fn planar_polytope_max(m: &DMatrix<f64>, h: &DVector<f64>, a: &[f64]) -> f64 {
    assert_eq!(m.ncols(), 2);
    let mut best = f64::NEG_INFINITY;
    for i in 0..m.nrows() {
        for j in i + 1..m.nrows() {
            let sub = nalgebra::Matrix2::new(m[(i, 0)], m[(i, 1)], m[(j, 0)], m[(j, 1)]);
            if sub.determinant().abs() < 1e-12 {
                continue;
            }
            let w = sub.try_inverse().unwrap() * nalgebra::Vector2::new(h[i], h[j]);
            let w = DVector::from_column_slice(w.as_slice());
            if (m * &w - h).max() <= 1e-9 {
                best = best.max(a[0] * w[0] + a[1] * w[1]);
            }
        }
    }
    best
}

/// A bounded polygon around the origin: a box with random extra cuts.
pub fn random_polygon(rng: &mut ChaCha8Rng) -> (DMatrix<f64>, DVector<f64>) {
    let extra = rng.random_range(1..4);
    let rows = 4 + extra;
    let mut m = DMatrix::zeros(rows, 2);
    let mut h = DVector::zeros(rows);
    for k in 0..2 {
        m[(2 * k, k)] = 1.0;
        m[(2 * k + 1, k)] = -1.0;
        h[2 * k] = rng.random_range(0.5..2.0);
        h[2 * k + 1] = rng.random_range(0.5..2.0);
    }
    for r in 4..rows {
        m[(r, 0)] = rng.random_range(-1.0..1.0);
        m[(r, 1)] = rng.random_range(-1.0..1.0);
        h[r] = rng.random_range(0.3..1.5);
    }
    (m, h)
}

/// Nominal cost `Σ (x_k - r_k)ᵀ W_k (x_k - r_k) + Σ u_kᵀ R_k u_k` as
/// `½ vᵀ H v + fᵀ v + c0` over the stacked nominal inputs.
pub fn nominal_cost_terms(
    ss: &StackedSystem,
    cost: &CostSpec,
) -> (DMatrix<f64>, DVector<f64>, f64) {
    let (n, m, horizon) = (ss.n, ss.m, ss.horizon);
    let mut h = DMatrix::zeros(m * (horizon + 1), m * (horizon + 1));
    let mut f = DVector::zeros(m * (horizon + 1));
    let mut c0 = 0.0;
    let x_free = &ss.dynamics.abold * &ss.x0;
    for k in 0..=horizon {
        let bk = ss.dynamics.bbold.rows(k * n, n);
        let e = x_free.rows(k * n, n) - &cost.state_refs[k];
        let w = DMatrix::from_diagonal(&cost.state_weights[k]);
        h += bk.transpose() * &w * bk * 2.0;
        f += bk.transpose() * &w * &e * 2.0;
        c0 += (e.transpose() * &w * &e)[(0, 0)];
    }
    for k in 0..horizon {
        for i in 0..m {
            h[(k * m + i, k * m + i)] += 2.0 * cost.input_weights[k][i];
        }
    }
    (h, f, c0)
}

fn dense_to_triplets(
    m: &DMatrix<f64>,
    row0: usize,
    col0: usize,
    out: &mut Vec<(usize, usize, f64)>,
) {
    for j in 0..m.ncols() {
        for i in 0..m.nrows() {
            if m[(i, j)] != 0.0 {
                out.push((row0 + i, col0 + j, m[(i, j)]));
            }
        }
    }
}

/// Optimal robust cost over `{Q in Sparse(T) : Q CB in Sparse(Y)}` with
/// every free entry of `Q` as a variable, the subspace imposed by explicit
/// equalities and the box disturbance handled by one inequality per vertex
/// sequence and constraint row.
pub fn dense_vertex_oracle(
    ss: &StackedSystem,
    t: &BinMatrix,
    y: &BinMatrix,
    cost: &CostSpec,
    half_width: &DVector<f64>,
    settings: &SolverSettings,
) -> f64 {
    let (n, m, horizon) = (ss.n, ss.m, ss.horizon);
    let free: Vec<(usize, usize)> = t.ones_positions().collect();
    let nq = free.len();
    let nv = m * (horizon + 1);
    let nvars = nq + nv;

    let (h, f, c0) = nominal_cost_terms(ss, cost);
    let mut hess = Vec::new();
    for j in 0..nv {
        for i in 0..=j {
            if h[(i, j)] != 0.0 {
                hess.push((nq + i, nq + j, h[(i, j)]));
            }
        }
    }
    let mut linear = vec![0.0; nvars];
    linear[nq..].copy_from_slice(f.as_slice());

    let mut eq = Vec::new();
    let mut eq_rhs = Vec::new();
    for i in 0..y.rows() {
        for l in (0..y.cols()).filter(|&l| !y.get(i, l)) {
            let coeffs: Vec<(usize, f64)> = free
                .iter()
                .enumerate()
                .filter(|(_, &(fi, fj))| fi == i && ss.cb[(fj, l)] != 0.0)
                .map(|(k, &(_, fj))| (k, ss.cb[(fj, l)]))
                .collect();
            if coeffs.is_empty() {
                continue;
            }
            let row = eq_rhs.len();
            eq.extend(coeffs.into_iter().map(|(k, v)| (row, k, v)));
            eq_rhs.push(0.0);
        }
    }
    for j in m * horizon..nv {
        let row = eq_rhs.len();
        eq.push((row, nq + j, 1.0));
        eq_rhs.push(0.0);
    }

    let fm = &ss.constraints.f;
    let gm = &ss.constraints.g;
    let c = &ss.constraints.c;
    let nw = n * horizon;
    let p_cols = ss.dynamics.p.columns(0, nw).clone_owned();
    let mut ineq = Vec::new();
    let mut ineq_rhs = Vec::new();
    for code in 0..1usize << nw {
        let w = DVector::from_fn(nw, |j, _| {
            if code >> j & 1 == 1 {
                half_width[j % n]
            } else {
                -half_width[j % n]
            }
        });
        let pw = &p_cols * &w;
        let gw = gm.columns(0, nw) * &w;
        for r in 0..c.len() {
            let row = ineq_rhs.len();
            for (k, &(i, j)) in free.iter().enumerate() {
                let v = fm[(r, i)] * pw[j];
                if v != 0.0 {
                    ineq.push((row, k, v));
                }
            }
            dense_to_triplets(&fm.rows(r, 1).clone_owned(), row, nq, &mut ineq);
            ineq_rhs.push(c[r] - gw[r]);
        }
    }
    let qp = QuadraticProgram::new(
        SparseMatrix::from_triplets(nvars, nvars, &hess),
        linear,
        SparseMatrix::from_triplets(eq_rhs.len(), nvars, &eq),
        eq_rhs,
        SparseMatrix::from_triplets(ineq_rhs.len(), nvars, &ineq),
        ineq_rhs,
    )
    .unwrap();
    let res = solve(&qp, settings).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    res.objective + c0
}

/// Best nominal cost for fixed `Q`: the constraints are tightened by the
/// vertex-enumerated worst case, leaving a program in `v` alone.
pub fn cost_for_fixed_q(
    ss: &StackedSystem,
    q: &DMatrix<f64>,
    cost: &CostSpec,
    half_width: &DVector<f64>,
    settings: &SolverSettings,
) -> Option<f64> {
    let (n, m, horizon) = (ss.n, ss.m, ss.horizon);
    let nv = m * (horizon + 1);
    let nw = n * horizon;
    let fm = &ss.constraints.f;
    let a = fm * q * ss.dynamics.p.columns(0, nw) + ss.constraints.g.columns(0, nw);
    let mut worst = vec![f64::NEG_INFINITY; a.nrows()];
    for code in 0..1usize << nw {
        let w = DVector::from_fn(nw, |j, _| {
            if code >> j & 1 == 1 {
                half_width[j % n]
            } else {
                -half_width[j % n]
            }
        });
        let aw = &a * w;
        for (slot, v) in worst.iter_mut().zip(aw.iter()) {
            *slot = slot.max(*v);
        }
    }
    let (h, f, c0) = nominal_cost_terms(ss, cost);
    let mut hess = Vec::new();
    for j in 0..nv {
        for i in 0..=j {
            if h[(i, j)] != 0.0 {
                hess.push((i, j, h[(i, j)]));
            }
        }
    }
    let mut ineq = Vec::new();
    dense_to_triplets(fm, 0, 0, &mut ineq);
    let rhs: Vec<f64> = (0..fm.nrows())
        .map(|r| ss.constraints.c[r] - worst[r])
        .collect();
    let eq: Vec<(usize, usize, f64)> = (m * horizon..nv)
        .enumerate()
        .map(|(r, j)| (r, j, 1.0))
        .collect();
    let qp = QuadraticProgram::new(
        SparseMatrix::from_triplets(nv, nv, &hess),
        f.iter().copied().collect(),
        SparseMatrix::from_triplets(m, nv, &eq),
        vec![0.0; m],
        SparseMatrix::from_triplets(fm.nrows(), nv, &ineq),
        rhs,
    )
    .unwrap();
    let res = solve(&qp, settings).unwrap();
    match res.status {
        SolverStatus::Optimal => Some(res.objective + c0),
        SolverStatus::PrimalInfeasible => None,
        status => panic!("inner program ended with {status}"),
    }
}

/// Minimizes [`cost_for_fixed_q`] over a `points^d` grid of subspace
/// coordinates in `[-radius, radius]^d`, then refines around the best point
/// `refinements` times, shrinking the box to one grid step each time.
#[allow(clippy::too_many_arguments)]
pub fn grid_oracle(
    ss: &StackedSystem,
    spec: &GssSpec,
    cost: &CostSpec,
    half_width: &DVector<f64>,
    radius: f64,
    points: usize,
    refinements: usize,
    settings: &SolverSettings,
) -> (f64, Vec<f64>) {
    let d = spec.dim();
    let mut center = vec![0.0; d];
    let mut half = radius;
    let mut best = (f64::INFINITY, center.clone());
    for _ in 0..=refinements {
        let step = 2.0 * half / (points - 1) as f64;
        let total = points.pow(d as u32);
        for idx in 0..total {
            let mut rest = idx;
            let params: Vec<f64> = (0..d)
                .map(|k| {
                    let i = rest % points;
                    rest /= points;
                    center[k] - half + step * i as f64
                })
                .collect();
            let q = spec.assemble(&params).unwrap();
            if let Some(j) = cost_for_fixed_q(ss, &q, cost, half_width, settings) {
                if j < best.0 {
                    best = (j, params);
                }
            }
        }
        center = best.1.clone();
        half = step;
    }
    best
}

/// Random plant, information structure and `T <= Sbold` with the maximal
/// subspace over `T`.
pub struct GssDraw {
    pub ss: StackedSystem,
    pub t: BinMatrix,
    pub spec: GssSpec,
}

pub fn gss_draw(seed: u64) -> GssDraw {
    let mut rng = rng(seed);
    let (n, m, p) = (
        rng.random_range(1..=3),
        rng.random_range(1..=3),
        rng.random_range(1..=3),
    );
    let horizon = rng.random_range(1..=4);
    let sys = random_plant(&mut rng, n, m, p);
    let info = random_info(&mut rng, horizon, m, p, 0.5);
    let x0 = random_vector(&mut rng, n);
    let ss = StackedSystem::new(&sys, &ConstraintSet::empty(n, m), &info, &x0).unwrap();
    let t = thin(&mut rng, &ss.sbold, 0.8);
    let spec = gss_parametrize(&t, &ymax(&t), &ss.cb).unwrap();
    GssDraw { ss, t, spec }
}
