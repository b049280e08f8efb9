use crate::error::QpError;
use crate::sparse::SparseMatrix;

/// A convex quadratic program
///
/// ```text
/// minimize    ½ xᵀ P x + qᵀ x
/// subject to  A_eq x  = b_eq
///             A_in x <= b_in
/// ```
///
/// `hessian` stores the upper triangle of the symmetric matrix `P`.
#[derive(Debug, Clone)]
pub struct QuadraticProgram {
    pub hessian: SparseMatrix,
    pub linear: Vec<f64>,
    pub eq_matrix: SparseMatrix,
    pub eq_rhs: Vec<f64>,
    pub ineq_matrix: SparseMatrix,
    pub ineq_rhs: Vec<f64>,
}

impl QuadraticProgram {
    /// Assembles a program, keeping only the upper triangle of `hessian`.
    pub fn new(
        hessian: SparseMatrix,
        linear: Vec<f64>,
        eq_matrix: SparseMatrix,
        eq_rhs: Vec<f64>,
        ineq_matrix: SparseMatrix,
        ineq_rhs: Vec<f64>,
    ) -> Result<Self, QpError> {
        let qp = Self {
            hessian: hessian.upper_triangle(),
            linear,
            eq_matrix,
            eq_rhs,
            ineq_matrix,
            ineq_rhs,
        };
        qp.validate()?;
        Ok(qp)
    }

    #[inline]
    pub fn num_vars(&self) -> usize {
        self.linear.len()
    }

    #[inline]
    pub fn num_eq(&self) -> usize {
        self.eq_rhs.len()
    }

    #[inline]
    pub fn num_ineq(&self) -> usize {
        self.ineq_rhs.len()
    }

    pub fn validate(&self) -> Result<(), QpError> {
        let n = self.linear.len();
        let check = |what: &'static str, got: (usize, usize), want: (usize, usize)| {
            if got == want {
                Ok(())
            } else {
                Err(QpError::Dimension {
                    what,
                    expected: want,
                    found: got,
                })
            }
        };
        check(
            "hessian",
            (self.hessian.nrows(), self.hessian.ncols()),
            (n, n),
        )?;
        check(
            "equality matrix",
            (self.eq_matrix.nrows(), self.eq_matrix.ncols()),
            (self.eq_rhs.len(), n),
        )?;
        check(
            "inequality matrix",
            (self.ineq_matrix.nrows(), self.ineq_matrix.ncols()),
            (self.ineq_rhs.len(), n),
        )?;
        let finite = self.linear.iter().all(|v| v.is_finite())
            && self.eq_rhs.iter().all(|v| v.is_finite())
            && self.hessian.values().iter().all(|v| v.is_finite())
            && self.eq_matrix.values().iter().all(|v| v.is_finite())
            && self.ineq_matrix.values().iter().all(|v| v.is_finite())
            && self
                .ineq_rhs
                .iter()
                .all(|v| !v.is_nan() && *v != f64::NEG_INFINITY);
        if !finite {
            return Err(QpError::NonFinite);
        }
        Ok(())
    }

    /// `½ xᵀ P x + qᵀ x`
    pub fn objective(&self, x: &[f64]) -> f64 {
        let mut px = vec![0.0; x.len()];
        self.hessian.sym_upper_mul_vec(x, &mut px);
        x.iter()
            .zip(&px)
            .zip(&self.linear)
            .map(|((xi, pxi), qi)| 0.5 * xi * pxi + qi * xi)
            .sum()
    }
}
