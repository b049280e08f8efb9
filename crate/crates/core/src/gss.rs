//! Generalized sparsity subspaces `{Q in Sparse(T) : Q G in Sparse(Y)}`,
//! their certification, and the maps between disturbance feedback `Q` and
//! output feedback `L`.

use nalgebra::{DMatrix, DVector};

use crate::binalg::{bool_mul, excess, BinMatrix};
use crate::error::{dim_err, CoreError, Result};

/// Relative tolerance on singular values when deciding the rank of the
/// constraint map.
pub const RANK_TOL: f64 = 1e-10;
const CHOP_TOL: f64 = 1e-14;

/// The largest `Y` with `Y T <= T`: `Y(i, j) = 0` iff some column `k` has
/// `T(i, k) = 0` and `T(j, k) = 1`.
pub fn ymax(t: &BinMatrix) -> BinMatrix {
    let rows = t.rows();
    BinMatrix::from_fn(rows, rows, |i, j| {
        let (ri, rj) = (t.row(i), t.row(j));
        !ri.iter().zip(rj).any(|(&a, &b)| !a && b)
    })
}

/// A basis element has a single nonzero row. Entries are sorted by column
/// and have unit Euclidean norm.
#[derive(Debug, Clone, PartialEq)]
pub struct BasisElement {
    pub row: usize,
    pub entries: Vec<(usize, f64)>,
}

impl BasisElement {
    fn dot(&self, other: &BasisElement) -> f64 {
        if self.row != other.row {
            return 0.0;
        }
        sparse_dot(&self.entries, &other.entries)
    }
}

fn sparse_dot(a: &[(usize, f64)], b: &[(usize, f64)]) -> f64 {
    let (mut i, mut j, mut acc) = (0, 0, 0.0);
    while i < a.len() && j < b.len() {
        match a[i].0.cmp(&b[j].0) {
            std::cmp::Ordering::Less => i += 1,
            std::cmp::Ordering::Greater => j += 1,
            std::cmp::Ordering::Equal => {
                acc += a[i].1 * b[j].1;
                i += 1;
                j += 1;
            }
        }
    }
    acc
}

#[derive(Debug, Clone)]
pub struct GssSpec {
    pub t: BinMatrix,
    pub y: BinMatrix,
    /// Orthonormal under the entrywise inner product.
    pub basis: Vec<BasisElement>,
}

impl GssSpec {
    pub fn dim(&self) -> usize {
        self.basis.len()
    }

    /// Shape of `Q`.
    pub fn shape(&self) -> (usize, usize) {
        (self.t.rows(), self.t.cols())
    }

    pub fn element_matrix(&self, k: usize) -> DMatrix<f64> {
        let (r, c) = self.shape();
        let mut q = DMatrix::zeros(r, c);
        let el = &self.basis[k];
        for &(j, v) in &el.entries {
            q[(el.row, j)] = v;
        }
        q
    }

    /// `Σ params_k Q_k`
    pub fn assemble(&self, params: &[f64]) -> Result<DMatrix<f64>> {
        if params.len() != self.dim() {
            return dim_err(format!(
                "{} parameters for a {}-dimensional subspace",
                params.len(),
                self.dim()
            ));
        }
        let (r, c) = self.shape();
        let mut q = DMatrix::zeros(r, c);
        for (el, &a) in self.basis.iter().zip(params) {
            for &(j, v) in &el.entries {
                q[(el.row, j)] += a * v;
            }
        }
        Ok(q)
    }

    /// Coordinates of the orthogonal projection of `q` onto the subspace.
    pub fn coordinates(&self, q: &DMatrix<f64>) -> Vec<f64> {
        self.basis
            .iter()
            .map(|el| el.entries.iter().map(|&(j, v)| v * q[(el.row, j)]).sum())
            .collect()
    }

    /// Frobenius norm of `q` minus its projection onto the subspace.
    pub fn projection_residual(&self, q: &DMatrix<f64>) -> f64 {
        let proj = self
            .assemble(&self.coordinates(q))
            .expect("coordinates match the basis");
        (q - proj).norm()
    }

    /// Largest deviation of the basis Gram matrix from the identity.
    pub fn orthonormality_defect(&self) -> f64 {
        let mut worst = 0.0f64;
        for (a, ea) in self.basis.iter().enumerate() {
            for eb in &self.basis[a..] {
                let target = if std::ptr::eq(ea, eb) { 1.0 } else { 0.0 };
                worst = worst.max((ea.dot(eb) - target).abs());
            }
        }
        worst
    }
}

/// Basis of `{Q in Sparse(T) : Q G in Sparse(Y)}`.
///
/// The constraints never couple different rows of `Q`, so the null space is
/// computed row by row from a small SVD.
pub fn gss_parametrize(t: &BinMatrix, y: &BinMatrix, g: &DMatrix<f64>) -> Result<GssSpec> {
    let (a, b) = (t.rows(), t.cols());
    if y.rows() != a || y.cols() != a || g.shape() != (b, a) {
        return dim_err(format!(
            "T is {a}x{b}, Y is {}x{}, G is {}x{}; expected Y {a}x{a} and G {b}x{a}",
            y.rows(),
            y.cols(),
            g.nrows(),
            g.ncols()
        ));
    }

    struct RowMap {
        row: usize,
        unconstrained: Vec<usize>,
        constrained: Vec<usize>,
        svd: Option<(DVector<f64>, DMatrix<f64>)>,
    }

    let mut maps = Vec::with_capacity(a);
    let mut sigma_max = 0.0f64;
    for i in 0..a {
        let free: Vec<usize> = (0..b).filter(|&j| t.get(i, j)).collect();
        if free.is_empty() {
            continue;
        }
        let zeros: Vec<usize> = (0..a).filter(|&l| !y.get(i, l)).collect();
        // constraint l: Σ_{j free} Q(i, j) G(j, l) = 0
        let (constrained, unconstrained): (Vec<usize>, Vec<usize>) = free
            .iter()
            .partition(|&&j| zeros.iter().any(|&l| g[(j, l)] != 0.0));
        let active: Vec<usize> = zeros
            .into_iter()
            .filter(|&l| constrained.iter().any(|&j| g[(j, l)] != 0.0))
            .collect();
        let svd = if constrained.is_empty() {
            None
        } else {
            let c = constrained.len();
            let rows = active.len().max(c);
            let m = DMatrix::from_fn(rows, c, |r, k| {
                if r < active.len() {
                    g[(constrained[k], active[r])]
                } else {
                    0.0
                }
            });
            let svd = m.svd(false, true);
            let sv = svd.singular_values.clone();
            sigma_max = sigma_max.max(sv.max());
            Some((sv, svd.v_t.expect("right singular vectors requested")))
        };
        maps.push(RowMap {
            row: i,
            unconstrained,
            constrained,
            svd,
        });
    }

    let tol = RANK_TOL * sigma_max;
    let mut basis = Vec::new();
    for map in maps {
        for &j in &map.unconstrained {
            basis.push(BasisElement {
                row: map.row,
                entries: vec![(j, 1.0)],
            });
        }
        let Some((sv, v_t)) = map.svd else { continue };
        let mut found: Vec<(f64, Vec<(usize, f64)>)> = Vec::new();
        for (k, &s) in sv.iter().enumerate() {
            if s > tol {
                continue;
            }
            let entries: Vec<(usize, f64)> = map
                .constrained
                .iter()
                .enumerate()
                .map(|(c, &j)| (j, v_t[(k, c)]))
                .filter(|(_, v)| v.abs() > CHOP_TOL)
                .collect();
            found.push((s, entries));
        }
        // deterministic order and sign: largest leading entry positive
        found.sort_by(|x, y| x.0.total_cmp(&y.0));
        for (_, mut entries) in found {
            let lead =
                entries
                    .iter()
                    .map(|e| e.1)
                    .fold(0.0f64, |m, v| if v.abs() > m.abs() { v } else { m });
            if lead < 0.0 {
                entries.iter_mut().for_each(|e| e.1 = -e.1);
            }
            let norm = entries.iter().map(|e| e.1 * e.1).sum::<f64>().sqrt();
            entries.iter_mut().for_each(|e| e.1 /= norm);
            basis.push(BasisElement {
                row: map.row,
                entries,
            });
        }
    }
    Ok(GssSpec {
        t: t.clone(),
        y: y.clone(),
        basis,
    })
}

/// Outcome of the sufficient sparsity-preservation test `T <= S`, `Y T <= T`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SparsityCertificate {
    /// Ones of `T` where `S` is zero.
    pub outside_s: Vec<(usize, usize)>,
    /// Ones of `Y T` where `T` is zero.
    pub yt_excess: Vec<(usize, usize)>,
}

impl SparsityCertificate {
    pub fn passed(&self) -> bool {
        self.outside_s.is_empty() && self.yt_excess.is_empty()
    }
}

pub fn certify_sparsity_preserving(
    t: &BinMatrix,
    y: &BinMatrix,
    s: &BinMatrix,
) -> Result<SparsityCertificate> {
    let outside_s = excess(t, s)?;
    let yt_excess = excess(&bool_mul(y, t)?, t)?;
    Ok(SparsityCertificate {
        outside_s,
        yt_excess,
    })
}

/// Entries where `T Δ T` exceeds `T`; empty iff `Sparse(T)` is QI with
/// respect to any matrix with pattern `Δ`.
pub fn qi_pattern_witnesses(t: &BinMatrix, delta: &BinMatrix) -> Result<Vec<(usize, usize)>> {
    let tdt = bool_mul(&bool_mul(t, delta)?, t)?;
    excess(&tdt, t)
}

pub fn qi_check_pattern(t: &BinMatrix, delta: &BinMatrix) -> Result<bool> {
    Ok(qi_pattern_witnesses(t, delta)?.is_empty())
}

/// Worst normalized violation of `Q_i G Q_j in span(basis)` over all basis
/// pairs: `residual / (1 + ‖Q_i G Q_j‖)`.
///
/// `Q_i G Q_j` is `(a_iᵀ G e_{r_j})` times `Q_j` moved to row `r_i`, so only
/// the projection of each basis vector onto every row's span is needed.
pub fn qi_subspace_residual(spec: &GssSpec, g: &DMatrix<f64>) -> Result<f64> {
    let (a, b) = spec.shape();
    if g.shape() != (b, a) {
        return dim_err(format!(
            "G is {}x{}, expected {b}x{a}",
            g.nrows(),
            g.ncols()
        ));
    }
    let mut by_row: Vec<Vec<usize>> = vec![Vec::new(); a];
    for (k, el) in spec.basis.iter().enumerate() {
        by_row[el.row].push(k);
    }
    let mut worst = 0.0f64;
    let mut dense = vec![0.0; b];
    for members in &by_row {
        if members.is_empty() {
            continue;
        }
        // residual of each basis vector after projection onto this row's span
        let rho: Vec<f64> = spec
            .basis
            .iter()
            .map(|el| {
                dense.iter_mut().for_each(|v| *v = 0.0);
                for &(j, v) in &el.entries {
                    dense[j] = v;
                }
                for &k in members {
                    let bk = &spec.basis[k].entries;
                    let c = sparse_dot(bk, &el.entries);
                    for &(j, v) in bk {
                        dense[j] -= c * v;
                    }
                }
                dense.iter().map(|v| v * v).sum::<f64>().sqrt()
            })
            .collect();
        for &i in members {
            let ai = &spec.basis[i].entries;
            for (el, &r) in spec.basis.iter().zip(&rho) {
                let s: f64 = ai.iter().map(|&(j, v)| v * g[(j, el.row)]).sum();
                let viol = s.abs() * r / (1.0 + s.abs());
                worst = worst.max(viol);
            }
        }
    }
    Ok(worst)
}

/// Subspace QI test with tolerance `1e-8`.
pub fn qi_check_subspace(spec: &GssSpec, g: &DMatrix<f64>) -> Result<bool> {
    Ok(qi_subspace_residual(spec, g)? <= 1e-8)
}

/// Requires `M` strictly lower triangular up to round-off.
fn check_strictly_lower(m: &DMatrix<f64>, what: &str) -> Result<()> {
    let scale = m.amax().max(1.0);
    for j in 0..m.ncols() {
        for i in 0..=j.min(m.nrows().saturating_sub(1)) {
            if m[(i, j)].abs() > 1e-12 * scale {
                return Err(CoreError::NonCausal(format!(
                    "{what} has entry ({i}, {j}) = {:e} on or above the diagonal",
                    m[(i, j)]
                )));
            }
        }
    }
    Ok(())
}

/// Solves `(I + sign * M) X = R` for strictly lower triangular `M`.
fn unit_lower_solve(m: &DMatrix<f64>, sign: f64, r: &DMatrix<f64>) -> DMatrix<f64> {
    let mut x = r.clone();
    for i in 0..m.nrows() {
        for l in 0..i {
            let coef = sign * m[(i, l)];
            if coef != 0.0 {
                for j in 0..x.ncols() {
                    let v = x[(l, j)];
                    x[(i, j)] -= coef * v;
                }
            }
        }
    }
    x
}

fn check_map_dims(
    x: &DMatrix<f64>,
    vec: &DVector<f64>,
    cb: &DMatrix<f64>,
    ca_x0: &DVector<f64>,
) -> Result<()> {
    let (rows, cols) = x.shape();
    if cb.shape() != (cols, rows) || vec.len() != rows || ca_x0.len() != cols {
        return dim_err(format!(
            "controller {rows}x{cols} with offset {}, CB {}x{}, CA x0 {}",
            vec.len(),
            cb.nrows(),
            cb.ncols(),
            ca_x0.len()
        ));
    }
    Ok(())
}

/// `L = (I + Q CB)^{-1} Q`, `g = v - L (CB v + CA x0)`.
pub fn q_to_l(
    q: &DMatrix<f64>,
    v: &DVector<f64>,
    cb: &DMatrix<f64>,
    ca_x0: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_map_dims(q, v, cb, ca_x0)?;
    let qcb = q * cb;
    check_strictly_lower(&qcb, "Q CB")?;
    let l = unit_lower_solve(&qcb, 1.0, q);
    let g = v - &l * (cb * v + ca_x0);
    Ok((l, g))
}

/// `Q = (I - L CB)^{-1} L`, `v = Q (CB g + CA x0) + g`.
pub fn l_to_q(
    l: &DMatrix<f64>,
    g: &DVector<f64>,
    cb: &DMatrix<f64>,
    ca_x0: &DVector<f64>,
) -> Result<(DMatrix<f64>, DVector<f64>)> {
    check_map_dims(l, g, cb, ca_x0)?;
    let lcb = l * cb;
    check_strictly_lower(&lcb, "L CB")?;
    let q = unit_lower_solve(&lcb, -1.0, l);
    let v = &q * (cb * g + ca_x0) + g;
    Ok((q, v))
}

/// `Σ_{i<N} (-1)^i (Q CB)^i Q`
pub fn power_series_l(q: &DMatrix<f64>, cb: &DMatrix<f64>, horizon: usize) -> DMatrix<f64> {
    let qcb = q * cb;
    let mut term = q.clone();
    let mut sum = q.clone();
    for i in 1..horizon {
        term = &qcb * term;
        if i % 2 == 1 {
            sum -= &term;
        } else {
            sum += &term;
        }
    }
    sum
}

/// A triple where input `u_s^a` knows `u_t^b`, `u_t^b` knows `y_v^c`, but
/// `u_s^a` does not know `y_v^c`. Indices are zero-based.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SharingViolation {
    pub a: usize,
    pub s: usize,
    pub b: usize,
    pub t: usize,
    pub c: usize,
    pub v: usize,
}

/// All `(i, k, j)` with `Y(i, k) = T(k, j) = 1` and `T(i, j) = 0`, decoded
/// into input, time and output indices.
pub fn audit_input_sharing(
    t: &BinMatrix,
    y: &BinMatrix,
    m: usize,
    p: usize,
) -> Result<Vec<SharingViolation>> {
    let (rows, cols) = (t.rows(), t.cols());
    if y.rows() != rows || y.cols() != rows {
        return dim_err(format!("Y must be {rows}x{rows}"));
    }
    if m == 0 || p == 0 || rows % m != 0 || cols % p != 0 {
        return dim_err(format!(
            "{rows}x{cols} pattern is not made of {m}x{p} blocks"
        ));
    }
    let mut out = Vec::new();
    for i in 0..rows {
        for k in (0..rows).filter(|&k| y.get(i, k)) {
            for j in (0..cols).filter(|&j| t.get(k, j) && !t.get(i, j)) {
                out.push(SharingViolation {
                    a: i % m,
                    s: i / m,
                    b: k % m,
                    t: k / m,
                    c: j % p,
                    v: j / p,
                });
            }
        }
    }
    Ok(out)
}
