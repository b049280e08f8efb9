//! Sparse LDLᵀ factorization of quasi-definite systems, backed by `faer`.

use faer::dyn_stack::{MemBuffer, MemStack, StackReq};
use faer::linalg::cholesky::ldlt::factor::LdltRegularization;
use faer::sparse::linalg::cholesky::{
    factorize_symbolic_cholesky, CholeskySymbolicParams, LdltRef, SymbolicCholesky,
    SymmetricOrdering,
};
use faer::sparse::{SparseColMat, SymbolicSparseColMat};
use faer::{Conj, MatMut, Par, Side};

use crate::error::QpError;
use crate::sparse::SparseMatrix;

/// Owns the symbolic analysis (fill-reducing ordering) of a fixed sparsity
/// pattern so that numeric values can be updated and refactored cheaply.
pub(crate) struct LdltSolver {
    matrix: SparseColMat<usize, f64>,
    layout: SparseMatrix,
    symbolic: SymbolicCholesky<usize>,
    factor: Vec<f64>,
    signs: Vec<i8>,
    fixed_delta: Option<f64>,
    mem: MemBuffer,
}

impl LdltSolver {
    /// `upper` is the upper triangle of a symmetric quasi-definite matrix whose
    /// pivots are expected to have the given `signs`.
    pub fn new(upper: SparseMatrix, signs: Vec<i8>) -> Result<Self, QpError> {
        let n = upper.nrows();
        assert_eq!(n, upper.ncols());
        assert_eq!(signs.len(), n);
        let symbolic_mat = SymbolicSparseColMat::new_checked(
            n,
            n,
            upper.col_ptr().to_vec(),
            None,
            upper.row_idx().to_vec(),
        );
        let matrix = SparseColMat::new(symbolic_mat, upper.values().to_vec());
        let symbolic = factorize_symbolic_cholesky(
            matrix.symbolic(),
            Side::Upper,
            SymmetricOrdering::Amd,
            CholeskySymbolicParams::default(),
        )
        .map_err(|e| QpError::Factorization(format!("{e:?}")))?;
        let req = StackReq::any_of(&[
            symbolic.factorize_numeric_ldlt_scratch::<f64>(Par::Seq, Default::default()),
            symbolic.solve_in_place_scratch::<f64>(1, Par::Seq),
        ]);
        let mem = MemBuffer::try_new(req).map_err(|e| QpError::Factorization(format!("{e:?}")))?;
        let factor = vec![0.0; symbolic.len_val()];
        let mut solver = Self {
            matrix,
            layout: upper,
            symbolic,
            factor,
            signs,
            fixed_delta: None,
            mem,
        };
        solver.refactor()?;
        Ok(solver)
    }

    /// Uses a fixed dynamic-regularization threshold instead of one relative
    /// to the largest entry. Needed when diagonal entries span many orders of
    /// magnitude.
    pub fn set_fixed_regularization(&mut self, delta: f64) {
        self.fixed_delta = Some(delta);
    }

    /// Storage index of entry `(i, j)`, `i <= j`, if it is structurally present.
    pub fn position(&self, i: usize, j: usize) -> Option<usize> {
        let ptr = self.layout.col_ptr();
        let rows = &self.layout.row_idx()[ptr[j]..ptr[j + 1]];
        rows.binary_search(&i).ok().map(|k| ptr[j] + k)
    }

    pub fn set_value(&mut self, pos: usize, value: f64) {
        self.matrix.val_mut()[pos] = value;
    }

    pub fn refactor(&mut self) -> Result<(), QpError> {
        let scale = self
            .matrix
            .val()
            .iter()
            .fold(0.0f64, |m, v| m.max(v.abs()))
            .max(1.0);
        let (delta, epsilon) = match self.fixed_delta {
            Some(d) => (d, 1e-6 * d),
            None => (1e-9 * scale, 1e-15 * scale),
        };
        let regularization = LdltRegularization {
            dynamic_regularization_signs: Some(&self.signs),
            dynamic_regularization_delta: delta,
            dynamic_regularization_epsilon: epsilon,
        };
        let stack = MemStack::new(&mut self.mem);
        self.symbolic
            .factorize_numeric_ldlt(
                &mut self.factor,
                self.matrix.as_ref(),
                Side::Upper,
                regularization,
                Par::Seq,
                stack,
                Default::default(),
            )
            .map_err(|e| QpError::Factorization(format!("{e:?}")))?;
        Ok(())
    }

    pub fn solve_in_place(&mut self, rhs: &mut [f64]) {
        let n = rhs.len();
        let ldlt = LdltRef::new(&self.symbolic, &self.factor);
        ldlt.solve_in_place_with_conj(
            Conj::No,
            MatMut::from_column_major_slice_mut(rhs, n, 1),
            Par::Seq,
            MemStack::new(&mut self.mem),
        );
    }

    /// `out = K * x` using the stored (unfactored) matrix.
    pub fn mul_vec(&self, x: &[f64], out: &mut [f64]) {
        let ptr = self.layout.col_ptr();
        let rows = self.layout.row_idx();
        let vals = self.matrix.val();
        out.iter_mut().for_each(|o| *o = 0.0);
        for j in 0..self.layout.ncols() {
            for k in ptr[j]..ptr[j + 1] {
                let i = rows[k];
                out[i] += vals[k] * x[j];
                if i != j {
                    out[j] += vals[k] * x[i];
                }
            }
        }
    }

    pub fn factor_nnz(&self) -> usize {
        self.factor.len()
    }
}
