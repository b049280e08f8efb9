//! Horizon-lifted system matrices.
//!
//! Stacked vectors cover stages `0..=N`. The last input block and the last
//! disturbance block are identically zero, which keeps every lifted matrix
//! square in its block structure.

use std::collections::BTreeMap;

use nalgebra::{DMatrix, DVector};

use crate::binalg::{struct_of, BinMatrix};
use crate::error::{dim_err, CoreError, Result};

/// `x_{k+1} = A x_k + B u_k + D w_k`, `y_k = C x_k + H w_k`.
#[derive(Debug, Clone)]
pub struct SystemModel {
    pub a: DMatrix<f64>,
    pub b: DMatrix<f64>,
    pub c: DMatrix<f64>,
    pub d: DMatrix<f64>,
    pub h: DMatrix<f64>,
}

impl SystemModel {
    pub fn new(
        a: DMatrix<f64>,
        b: DMatrix<f64>,
        c: DMatrix<f64>,
        d: DMatrix<f64>,
        h: DMatrix<f64>,
    ) -> Result<Self> {
        let sys = Self { a, b, c, d, h };
        sys.validate()?;
        Ok(sys)
    }

    pub fn validate(&self) -> Result<()> {
        let n = self.a.nrows();
        let checks = [
            ("A", self.a.shape(), (n, n)),
            ("B", self.b.shape(), (n, self.b.ncols())),
            ("C", self.c.shape(), (self.c.nrows(), n)),
            ("D", self.d.shape(), (n, n)),
            ("H", self.h.shape(), (self.c.nrows(), n)),
        ];
        for (name, got, want) in checks {
            if got != want {
                return dim_err(format!(
                    "{name} is {}x{}, expected {}x{}",
                    got.0, got.1, want.0, want.1
                ));
            }
        }
        if n == 0 || self.m() == 0 || self.p() == 0 {
            return dim_err("state, input and output dimensions must be positive");
        }
        Ok(())
    }

    #[inline]
    pub fn n(&self) -> usize {
        self.a.nrows()
    }

    #[inline]
    pub fn m(&self) -> usize {
        self.b.ncols()
    }

    #[inline]
    pub fn p(&self) -> usize {
        self.c.nrows()
    }
}

/// Stage constraints `U x_k + V u_k <= b` for `k < N` and terminal
/// constraint `R x_N <= z`.
#[derive(Debug, Clone)]
pub struct ConstraintSet {
    pub u: DMatrix<f64>,
    pub v: DMatrix<f64>,
    pub b: DVector<f64>,
    pub r: DMatrix<f64>,
    pub z: DVector<f64>,
}

impl ConstraintSet {
    pub fn empty(n: usize, m: usize) -> Self {
        Self {
            u: DMatrix::zeros(0, n),
            v: DMatrix::zeros(0, m),
            b: DVector::zeros(0),
            r: DMatrix::zeros(0, n),
            z: DVector::zeros(0),
        }
    }

    #[inline]
    pub fn s(&self) -> usize {
        self.b.len()
    }

    #[inline]
    pub fn num_terminal(&self) -> usize {
        self.z.len()
    }

    pub fn validate(&self, n: usize, m: usize) -> Result<()> {
        let s = self.s();
        let r = self.num_terminal();
        if self.u.shape() != (s, n) || self.v.shape() != (s, m) || self.r.shape() != (r, n) {
            return dim_err(format!(
                "constraint matrices U {:?}, V {:?}, R {:?} inconsistent with n={n}, m={m}, s={s}, r={r}",
                self.u.shape(),
                self.v.shape(),
                self.r.shape()
            ));
        }
        Ok(())
    }
}

/// Which outputs each input may use: block `(k, j)` is the `m x p` pattern
/// of `L_{k,j}`. Missing blocks mean no information.
#[derive(Debug, Clone)]
pub struct InfoStructure {
    pub horizon: usize,
    pub blocks: BTreeMap<(usize, usize), BinMatrix>,
}

impl InfoStructure {
    pub fn new(horizon: usize) -> Self {
        Self {
            horizon,
            blocks: BTreeMap::new(),
        }
    }

    /// The same block for every `j <= k <= N - 1`.
    pub fn uniform(horizon: usize, block: &BinMatrix) -> Self {
        let mut info = Self::new(horizon);
        for k in 0..horizon {
            for j in 0..=k {
                info.blocks.insert((k, j), block.clone());
            }
        }
        info
    }

    pub fn set(&mut self, k: usize, j: usize, block: BinMatrix) {
        self.blocks.insert((k, j), block);
    }
}

/// Lifts an information structure to the `m(N+1) x p(N+1)` pattern.
pub fn stack_info_structure(info: &InfoStructure, m: usize, p: usize) -> Result<BinMatrix> {
    let n_h = info.horizon;
    let mut out = BinMatrix::zeros(m * (n_h + 1), p * (n_h + 1));
    for (&(k, j), block) in &info.blocks {
        if j > k || k >= n_h {
            return Err(CoreError::Invalid(format!(
                "block ({k}, {j}) outside 0 <= j <= k <= {}",
                n_h.saturating_sub(1)
            )));
        }
        if block.rows() != m || block.cols() != p {
            return dim_err(format!(
                "block ({k}, {j}) is {}x{}, expected {m}x{p}",
                block.rows(),
                block.cols()
            ));
        }
        out.set_block(k * m, j * p, block);
    }
    Ok(out)
}

/// All-ones on blocks `(k, j)` with `j <= k <= N - 1`.
pub fn causal_mask(horizon: usize, m: usize, p: usize) -> BinMatrix {
    BinMatrix::from_fn(m * (horizon + 1), p * (horizon + 1), |i, j| {
        let (k, l) = (i / m, j / p);
        l <= k && k < horizon
    })
}

/// Lifted dynamics `x = Abold x0 + Bbold u + ED w`, `y = Cbold x + Hbold w`.
#[derive(Debug, Clone)]
pub struct LiftedDynamics {
    pub horizon: usize,
    pub abold: DMatrix<f64>,
    pub e: DMatrix<f64>,
    pub bbold: DMatrix<f64>,
    pub ed: DMatrix<f64>,
    pub cbold: DMatrix<f64>,
    pub hbold: DMatrix<f64>,
    pub p: DMatrix<f64>,
}

pub fn lift_dynamics(sys: &SystemModel, horizon: usize) -> Result<LiftedDynamics> {
    sys.validate()?;
    if horizon < 1 {
        return Err(CoreError::Invalid("horizon must be at least 1".into()));
    }
    let n = sys.n();
    let nh = horizon + 1;

    let mut powers = Vec::with_capacity(nh);
    powers.push(DMatrix::identity(n, n));
    for k in 1..nh {
        let next = &sys.a * &powers[k - 1];
        powers.push(next);
    }

    let mut abold = DMatrix::zeros(n * nh, n);
    for (k, pk) in powers.iter().enumerate() {
        abold.view_mut((k * n, 0), (n, n)).copy_from(pk);
    }
    // E(k, j) = A^{k-1-j} for j < k
    let mut e = DMatrix::zeros(n * nh, n * nh);
    for k in 1..nh {
        for j in 0..k {
            e.view_mut((k * n, j * n), (n, n))
                .copy_from(&powers[k - 1 - j]);
        }
    }
    let bbold = &e * block_diag(&sys.b, nh);
    let ed = &e * block_diag(&sys.d, nh);
    let cbold = block_diag(&sys.c, nh);
    let hbold = block_diag(&sys.h, nh);
    let p = &cbold * &ed + &hbold;
    Ok(LiftedDynamics {
        horizon,
        abold,
        e,
        bbold,
        ed,
        cbold,
        hbold,
        p,
    })
}

/// Lifted constraints `F u + G w <= c`.
#[derive(Debug, Clone)]
pub struct LiftedConstraints {
    pub ubold: DMatrix<f64>,
    pub vbold: DMatrix<f64>,
    pub f: DMatrix<f64>,
    pub g: DMatrix<f64>,
    pub c: DVector<f64>,
}

pub fn lift_constraints(
    sys: &SystemModel,
    dynamics: &LiftedDynamics,
    cons: &ConstraintSet,
    x0: &DVector<f64>,
) -> Result<LiftedConstraints> {
    let (n, m) = (sys.n(), sys.m());
    cons.validate(n, m)?;
    if x0.len() != n {
        return dim_err(format!("x0 has length {}, expected {n}", x0.len()));
    }
    let horizon = dynamics.horizon;
    let (s, r) = (cons.s(), cons.num_terminal());
    let rows = horizon * s + r;
    let mut ubold = DMatrix::zeros(rows, n * (horizon + 1));
    let mut vbold = DMatrix::zeros(rows, m * (horizon + 1));
    for k in 0..horizon {
        ubold.view_mut((k * s, k * n), (s, n)).copy_from(&cons.u);
        vbold.view_mut((k * s, k * m), (s, m)).copy_from(&cons.v);
    }
    ubold
        .view_mut((horizon * s, horizon * n), (r, n))
        .copy_from(&cons.r);
    let f = &ubold * &dynamics.bbold + &vbold;
    let g = &ubold * &dynamics.ed;
    let c = constraint_rhs(&cons.b, &cons.z, horizon, &ubold, &dynamics.abold, x0);
    Ok(LiftedConstraints {
        ubold,
        vbold,
        f,
        g,
        c,
    })
}

fn constraint_rhs(
    b: &DVector<f64>,
    z: &DVector<f64>,
    horizon: usize,
    ubold: &DMatrix<f64>,
    abold: &DMatrix<f64>,
    x0: &DVector<f64>,
) -> DVector<f64> {
    let s = b.len();
    let mut c = DVector::zeros(horizon * s + z.len());
    for k in 0..horizon {
        c.rows_mut(k * s, s).copy_from(b);
    }
    c.rows_mut(horizon * s, z.len()).copy_from(z);
    c - ubold * (abold * x0)
}

/// `I_count ⊗ block`.
pub fn block_diag(block: &DMatrix<f64>, count: usize) -> DMatrix<f64> {
    let (r, c) = block.shape();
    let mut out = DMatrix::zeros(r * count, c * count);
    for k in 0..count {
        out.view_mut((k * r, k * c), (r, c)).copy_from(block);
    }
    out
}

/// Everything the synthesis needs about one plant, horizon and initial state.
#[derive(Debug, Clone)]
pub struct StackedSystem {
    pub n: usize,
    pub m: usize,
    pub p: usize,
    pub horizon: usize,
    pub dynamics: LiftedDynamics,
    pub constraints: LiftedConstraints,
    pub x0: DVector<f64>,
    pub sbold: BinMatrix,
    pub delta: BinMatrix,
    /// `Cbold * Bbold`
    pub cb: DMatrix<f64>,
    /// `Cbold * Abold * x0`
    pub ca_x0: DVector<f64>,
    cons_b: DVector<f64>,
    cons_z: DVector<f64>,
}

impl StackedSystem {
    pub fn new(
        sys: &SystemModel,
        cons: &ConstraintSet,
        info: &InfoStructure,
        x0: &DVector<f64>,
    ) -> Result<Self> {
        let horizon = info.horizon;
        let dynamics = lift_dynamics(sys, horizon)?;
        let constraints = lift_constraints(sys, &dynamics, cons, x0)?;
        let sbold = stack_info_structure(info, sys.m(), sys.p())?;
        let cb = &dynamics.cbold * &dynamics.bbold;
        let delta = struct_of(&cb, 0.0);
        let ca_x0 = &dynamics.cbold * (&dynamics.abold * x0);
        Ok(Self {
            n: sys.n(),
            m: sys.m(),
            p: sys.p(),
            horizon,
            dynamics,
            constraints,
            x0: x0.clone(),
            sbold,
            delta,
            cb,
            ca_x0,
            cons_b: cons.b.clone(),
            cons_z: cons.z.clone(),
        })
    }

    /// Recomputes only the parts that depend on the initial state.
    pub fn with_x0(&self, x0: &DVector<f64>) -> Result<Self> {
        if x0.len() != self.n {
            return dim_err(format!("x0 has length {}, expected {}", x0.len(), self.n));
        }
        let mut out = self.clone();
        out.constraints.c = constraint_rhs(
            &self.cons_b,
            &self.cons_z,
            self.horizon,
            &self.constraints.ubold,
            &self.dynamics.abold,
            x0,
        );
        out.ca_x0 = &self.dynamics.cbold * (&self.dynamics.abold * x0);
        out.x0 = x0.clone();
        Ok(out)
    }

    pub fn causal_mask(&self) -> BinMatrix {
        causal_mask(self.horizon, self.m, self.p)
    }

    /// Rows of `F`, `G`, `c`.
    pub fn num_constraint_rows(&self) -> usize {
        self.constraints.c.len()
    }
}
