use gss_qp::{
    solve, Method, QpError, QuadraticProgram, SolverSettings, SolverStatus, SparseMatrix,
};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn dense(rows: usize, cols: usize, data: &[f64]) -> SparseMatrix {
    SparseMatrix::from_dense_row_major(rows, cols, data)
}

fn qp(
    p: (usize, &[f64]),
    q: &[f64],
    aeq: (usize, &[f64]),
    beq: &[f64],
    ain: (usize, &[f64]),
    bin: &[f64],
) -> QuadraticProgram {
    let n = q.len();
    QuadraticProgram::new(
        dense(p.0, n, p.1),
        q.to_vec(),
        dense(aeq.0, n, aeq.1),
        beq.to_vec(),
        dense(ain.0, n, ain.1),
        bin.to_vec(),
    )
    .unwrap()
}

/// Gaussian elimination with partial pivoting; `None` if singular.
fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for k in 0..n {
        let piv = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs()))?;
        if a[piv][k].abs() < 1e-12 {
            return None;
        }
        a.swap(k, piv);
        b.swap(k, piv);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            b[i] -= f * b[k];
        }
    }
    let mut x = vec![0.0; n];
    for k in (0..n).rev() {
        let s: f64 = (k + 1..n).map(|j| a[k][j] * x[j]).sum();
        x[k] = (b[k] - s) / a[k][k];
    }
    Some(x)
}

/// Minimizer of a strictly convex QP by enumerating active sets.
fn active_set_oracle(
    p: &[Vec<f64>],
    q: &[f64],
    aeq: &[Vec<f64>],
    beq: &[f64],
    ain: &[Vec<f64>],
    bin: &[f64],
) -> Option<Vec<f64>> {
    let n = q.len();
    let mut best: Option<(f64, Vec<f64>)> = None;
    for mask in 0u32..(1 << ain.len()) {
        let rows: Vec<(&Vec<f64>, f64, bool)> = aeq
            .iter()
            .zip(beq)
            .map(|(r, &b)| (r, b, false))
            .chain(
                ain.iter()
                    .zip(bin)
                    .enumerate()
                    .filter(|(i, _)| mask >> i & 1 == 1)
                    .map(|(_, (r, &b))| (r, b, true)),
            )
            .collect();
        let k = rows.len();
        let mut kkt = vec![vec![0.0; n + k]; n + k];
        let mut rhs = vec![0.0; n + k];
        for i in 0..n {
            kkt[i][..n].copy_from_slice(&p[i]);
            rhs[i] = -q[i];
        }
        for (r, (row, b, _)) in rows.iter().enumerate() {
            for j in 0..n {
                kkt[n + r][j] = row[j];
                kkt[j][n + r] = row[j];
            }
            rhs[n + r] = *b;
        }
        let Some(sol) = dense_solve(kkt, rhs) else {
            continue;
        };
        let x = &sol[..n];
        let feasible = ain
            .iter()
            .zip(bin)
            .all(|(r, b)| r.iter().zip(x).map(|(a, v)| a * v).sum::<f64>() <= b + 1e-9);
        let dual_ok = rows
            .iter()
            .zip(&sol[n..])
            .all(|((_, _, ineq), &y)| !ineq || y >= -1e-9);
        if feasible && dual_ok {
            let obj: f64 = (0..n)
                .map(|i| 0.5 * x[i] * (0..n).map(|j| p[i][j] * x[j]).sum::<f64>() + q[i] * x[i])
                .sum();
            if best.as_ref().is_none_or(|(o, _)| obj < *o) {
                best = Some((obj, x.to_vec()));
            }
        }
    }
    best.map(|(_, x)| x)
}

fn interior_point() -> SolverSettings {
    SolverSettings {
        method: Method::InteriorPoint,
        ..Default::default()
    }
}

fn flat(m: &[Vec<f64>]) -> Vec<f64> {
    m.iter().flatten().copied().collect()
}

#[test]
fn clamped_scalar() {
    // min (x - 1)^2 s.t. x <= 0, written as x^2 - 2x + 1
    let p = qp((1, &[2.0]), &[-2.0], (0, &[]), &[], (1, &[1.0]), &[0.0]);
    let res = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    assert!(res.x[0].abs() < 1e-7);
    assert!(res.objective.abs() < 1e-7);
    assert!((res.y_ineq[0] - 2.0).abs() < 1e-6);
}

#[test]
fn equality_constrained_pair() {
    // min x² + y² s.t. x + y = 2
    let p = qp(
        (2, &[2.0, 0.0, 0.0, 2.0]),
        &[0.0, 0.0],
        (1, &[1.0, 1.0]),
        &[2.0],
        (0, &[]),
        &[],
    );
    let res = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    assert!((res.x[0] - 1.0).abs() < 1e-7 && (res.x[1] - 1.0).abs() < 1e-7);
    assert!((res.objective - 2.0).abs() < 1e-7);
}

#[test]
fn linear_program() {
    // min -x - y s.t. x + 2y <= 4, 3x + y <= 6, x, y >= 0 ; optimum (1.6, 1.2)
    let p = qp(
        (2, &[0.0; 4]),
        &[-1.0, -1.0],
        (0, &[]),
        &[],
        (4, &[1.0, 2.0, 3.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
        &[4.0, 6.0, 0.0, 0.0],
    );
    let res = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    assert!((res.x[0] - 1.6).abs() < 1e-6, "{:?}", res.x);
    assert!((res.x[1] - 1.2).abs() < 1e-6, "{:?}", res.x);
}

#[test]
fn detects_primal_infeasibility() {
    // x <= -1 and -x <= -1
    let p = qp(
        (1, &[1.0]),
        &[0.0],
        (0, &[]),
        &[],
        (2, &[1.0, -1.0]),
        &[-1.0, -1.0],
    );
    let res = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(res.status, SolverStatus::PrimalInfeasible);
}

#[test]
fn detects_unboundedness() {
    // min -x s.t. -x <= 0
    let p = qp((1, &[0.0]), &[-1.0], (0, &[]), &[], (1, &[-1.0]), &[0.0]);
    let res = solve(&p, &SolverSettings::default()).unwrap();
    assert_eq!(res.status, SolverStatus::DualInfeasible);
}

#[test]
fn rejects_indefinite_hessian() {
    let p = qp(
        (2, &[1.0, 0.0, 0.0, -1.0]),
        &[0.0, 0.0],
        (0, &[]),
        &[],
        (0, &[]),
        &[],
    );
    assert!(matches!(
        solve(&p, &SolverSettings::default()),
        Err(QpError::NotPsd)
    ));
}

#[test]
fn rejects_bad_dimensions() {
    let err = QuadraticProgram::new(
        SparseMatrix::identity(2),
        vec![0.0; 2],
        SparseMatrix::zeros(1, 3),
        vec![0.0],
        SparseMatrix::zeros(0, 2),
        vec![],
    );
    assert!(matches!(err, Err(QpError::Dimension { .. })));
}

#[test]
fn rejects_bad_settings() {
    let p = qp((1, &[1.0]), &[0.0], (0, &[]), &[], (0, &[]), &[]);
    let s = SolverSettings {
        alpha: 2.5,
        ..Default::default()
    };
    assert!(matches!(solve(&p, &s), Err(QpError::Settings(_))));
}

struct Random {
    p: Vec<Vec<f64>>,
    q: Vec<f64>,
    aeq: Vec<Vec<f64>>,
    beq: Vec<f64>,
    ain: Vec<Vec<f64>>,
    bin: Vec<f64>,
}

fn random_problem(seed: u64) -> Random {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = rng.random_range(1..=5);
    let neq = rng.random_range(0..n.min(2) + 1).min(n - 1);
    let nin = rng.random_range(0..=6);
    let mut g = || rng.random_range(-2.0..2.0);
    let m: Vec<Vec<f64>> = (0..n).map(|_| (0..n).map(|_| g()).collect()).collect();
    let p: Vec<Vec<f64>> = (0..n)
        .map(|i| {
            (0..n)
                .map(|j| {
                    (0..n).map(|k| m[k][i] * m[k][j]).sum::<f64>() + if i == j { 0.5 } else { 0.0 }
                })
                .collect()
        })
        .collect();
    let q = (0..n).map(|_| g()).collect();
    let aeq = (0..neq).map(|_| (0..n).map(|_| g()).collect()).collect();
    let beq = (0..neq).map(|_| g()).collect();
    let ain = (0..nin).map(|_| (0..n).map(|_| g()).collect()).collect();
    // keep the feasible set nonempty: x = 0 satisfies every inequality
    let bin = (0..nin).map(|_| g().abs() + 0.1).collect();
    Random {
        p,
        q,
        aeq,
        beq,
        ain,
        bin,
    }
}

impl Random {
    fn program(&self) -> QuadraticProgram {
        let n = self.q.len();
        qp(
            (n, &flat(&self.p)),
            &self.q,
            (self.aeq.len(), &flat(&self.aeq)),
            &self.beq,
            (self.ain.len(), &flat(&self.ain)),
            &self.bin,
        )
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn matches_active_set_oracle(seed in any::<u64>()) {
        let r = random_problem(seed);
        let Some(expected) = active_set_oracle(&r.p, &r.q, &r.aeq, &r.beq, &r.ain, &r.bin) else {
            // equalities may be inconsistent with the inequalities
            return Ok(());
        };
        let res = solve(&r.program(), &SolverSettings::default()).unwrap();
        prop_assert_eq!(res.status, SolverStatus::Optimal);
        for (a, b) in res.x.iter().zip(&expected) {
            prop_assert!((a - b).abs() < 1e-5, "{:?} vs {:?}", res.x, expected);
        }
        prop_assert!(res.prim_res < 1e-6 && res.dual_res < 1e-6);
    }

    #[test]
    fn interior_point_matches_active_set_oracle(seed in any::<u64>()) {
        let r = random_problem(seed);
        let Some(expected) = active_set_oracle(&r.p, &r.q, &r.aeq, &r.beq, &r.ain, &r.bin) else {
            return Ok(());
        };
        let res = solve(&r.program(), &interior_point()).unwrap();
        prop_assert_eq!(res.status, SolverStatus::Optimal);
        for (a, b) in res.x.iter().zip(&expected) {
            prop_assert!((a - b).abs() < 1e-5, "{:?} vs {:?}", res.x, expected);
        }
    }

    #[test]
    fn interior_point_deterministic(seed in any::<u64>()) {
        let r = random_problem(seed).program();
        let a = solve(&r, &interior_point()).unwrap();
        let b = solve(&r, &interior_point()).unwrap();
        prop_assert_eq!(a.iterations, b.iterations);
        prop_assert!(a.x.iter().zip(&b.x).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn deterministic(seed in any::<u64>()) {
        let r = random_problem(seed).program();
        let a = solve(&r, &SolverSettings::default()).unwrap();
        let b = solve(&r, &SolverSettings::default()).unwrap();
        prop_assert_eq!(a.status, b.status);
        prop_assert_eq!(a.iterations, b.iterations);
        prop_assert!(a.x.iter().zip(&b.x).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn invariant_to_row_scaling(seed in any::<u64>(), scale in 1e-3f64..1e3) {
        let mut r = random_problem(seed);
        if active_set_oracle(&r.p, &r.q, &r.aeq, &r.beq, &r.ain, &r.bin).is_none() {
            return Ok(());
        }
        let a = solve(&r.program(), &SolverSettings::default()).unwrap();
        for (row, b) in r.ain.iter_mut().zip(r.bin.iter_mut()) {
            row.iter_mut().for_each(|v| *v *= scale);
            *b *= scale;
        }
        let b = solve(&r.program(), &SolverSettings::default()).unwrap();
        for (u, v) in a.x.iter().zip(&b.x) {
            prop_assert!((u - v).abs() < 1e-5 * (1.0 + u.abs()));
        }
    }
}

#[test]
fn badly_scaled_box() {
    // min Σ (x_i - 3e4)² s.t. |x_i| <= 2e4 ; optimum at the bound
    let n = 20;
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut triplets = Vec::new();
    let mut ineq = Vec::new();
    for i in 0..n {
        triplets.push((i, i, 2.0 * rng.random_range(1e-4..1.0)));
        ineq.push((2 * i, i, 1.0));
        ineq.push((2 * i + 1, i, -1.0));
    }
    let p = SparseMatrix::from_triplets(n, n, &triplets);
    let q: Vec<f64> = (0..n).map(|i| -p.get(i, i) * 3e4).collect();
    let program = QuadraticProgram::new(
        p,
        q,
        SparseMatrix::zeros(0, n),
        vec![],
        SparseMatrix::from_triplets(2 * n, n, &ineq),
        vec![2e4; 2 * n],
    )
    .unwrap();
    let res = solve(&program, &SolverSettings::default()).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    for x in &res.x {
        assert!((x - 2e4).abs() < 1e-6 * 2e4);
        assert!(*x <= 2e4 + 1e-6);
    }
}

#[test]
fn interior_point_small_cases() {
    let scalar = qp((1, &[2.0]), &[-2.0], (0, &[]), &[], (1, &[1.0]), &[0.0]);
    let res = solve(&scalar, &interior_point()).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    assert!(res.x[0].abs() < 1e-7);
    assert!((res.y_ineq[0] - 2.0).abs() < 1e-6);

    let pair = qp(
        (2, &[2.0, 0.0, 0.0, 2.0]),
        &[0.0, 0.0],
        (1, &[1.0, 1.0]),
        &[2.0],
        (0, &[]),
        &[],
    );
    let res = solve(&pair, &interior_point()).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    assert!((res.objective - 2.0).abs() < 1e-7);

    let lp = qp(
        (2, &[0.0; 4]),
        &[-1.0, -1.0],
        (0, &[]),
        &[],
        (4, &[1.0, 2.0, 3.0, 1.0, -1.0, 0.0, 0.0, -1.0]),
        &[4.0, 6.0, 0.0, 0.0],
    );
    let res = solve(&lp, &interior_point()).unwrap();
    assert_eq!(res.status, SolverStatus::Optimal);
    assert!((res.x[0] - 1.6).abs() < 1e-6 && (res.x[1] - 1.2).abs() < 1e-6);
}

#[test]
fn interior_point_falls_back_for_certificates() {
    let infeasible = qp(
        (1, &[1.0]),
        &[0.0],
        (0, &[]),
        &[],
        (2, &[1.0, -1.0]),
        &[-1.0, -1.0],
    );
    let res = solve(&infeasible, &interior_point()).unwrap();
    assert_eq!(res.status, SolverStatus::PrimalInfeasible);

    let unbounded = qp((1, &[0.0]), &[-1.0], (0, &[]), &[], (1, &[-1.0]), &[0.0]);
    let res = solve(&unbounded, &interior_point()).unwrap();
    assert_eq!(res.status, SolverStatus::DualInfeasible);
}

#[test]
fn method_names_parse() {
    assert_eq!("admm".parse::<Method>().unwrap(), Method::Admm);
    assert_eq!("ipm".parse::<Method>().unwrap(), Method::InteriorPoint);
    assert!("simplex".parse::<Method>().is_err());
}
