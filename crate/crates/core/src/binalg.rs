//! Binary (0/1) matrices and the boolean algebra used to reason about
//! sparsity patterns.

use std::fmt;
use std::str::FromStr;

use nalgebra::DMatrix;

use crate::error::{dim_err, CoreError, Result};

/// Dense row-major 0/1 matrix.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BinMatrix {
    rows: usize,
    cols: usize,
    data: Vec<bool>,
}

impl BinMatrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![false; rows * cols],
        }
    }

    pub fn ones(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![true; rows * cols],
        }
    }

    pub fn identity(n: usize) -> Self {
        Self::from_fn(n, n, |i, j| i == j)
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for i in 0..rows {
            for j in 0..cols {
                data.push(f(i, j));
            }
        }
        Self { rows, cols, data }
    }

    /// Builds a matrix from rows of 0/1 values. Any other value is rejected.
    pub fn from_rows<R: AsRef<[u8]>>(rows: &[R]) -> Result<Self> {
        let cols = rows.first().map_or(0, |r| r.as_ref().len());
        let mut data = Vec::with_capacity(rows.len() * cols);
        for (i, row) in rows.iter().enumerate() {
            let row = row.as_ref();
            if row.len() != cols {
                return dim_err(format!(
                    "row {i} has {} entries, expected {cols}",
                    row.len()
                ));
            }
            for &v in row {
                match v {
                    0 => data.push(false),
                    1 => data.push(true),
                    _ => return Err(CoreError::Invalid(format!("entry {v} is not 0 or 1"))),
                }
            }
        }
        Ok(Self {
            rows: rows.len(),
            cols,
            data,
        })
    }

    #[inline]
    pub fn rows(&self) -> usize {
        self.rows
    }

    #[inline]
    pub fn cols(&self) -> usize {
        self.cols
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> bool {
        assert!(
            i < self.rows && j < self.cols,
            "index ({i}, {j}) out of bounds"
        );
        self.data[i * self.cols + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, value: bool) {
        assert!(
            i < self.rows && j < self.cols,
            "index ({i}, {j}) out of bounds"
        );
        self.data[i * self.cols + j] = value;
    }

    pub fn row(&self, i: usize) -> &[bool] {
        &self.data[i * self.cols..(i + 1) * self.cols]
    }

    pub fn count_ones(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_zero(&self) -> bool {
        !self.data.contains(&true)
    }

    pub fn transpose(&self) -> Self {
        Self::from_fn(self.cols, self.rows, |i, j| self.get(j, i))
    }

    /// Entrywise OR.
    pub fn or(&self, other: &Self) -> Result<Self> {
        same_shape(self, other)?;
        Ok(Self {
            rows: self.rows,
            cols: self.cols,
            data: self
                .data
                .iter()
                .zip(&other.data)
                .map(|(a, b)| *a || *b)
                .collect(),
        })
    }

    /// Copies `block` into the submatrix starting at `(r0, c0)`.
    pub fn set_block(&mut self, r0: usize, c0: usize, block: &BinMatrix) {
        for i in 0..block.rows {
            for j in 0..block.cols {
                self.set(r0 + i, c0 + j, block.get(i, j));
            }
        }
    }

    pub fn block(&self, r0: usize, c0: usize, rows: usize, cols: usize) -> BinMatrix {
        Self::from_fn(rows, cols, |i, j| self.get(r0 + i, c0 + j))
    }

    /// Kronecker product `self ⊗ other`.
    pub fn kron(&self, other: &BinMatrix) -> BinMatrix {
        Self::from_fn(self.rows * other.rows, self.cols * other.cols, |i, j| {
            self.get(i / other.rows, j / other.cols) && other.get(i % other.rows, j % other.cols)
        })
    }

    /// Positions of the ones, row by row.
    pub fn ones_positions(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.data
            .iter()
            .enumerate()
            .filter(|(_, &b)| b)
            .map(|(k, _)| (k / self.cols, k % self.cols))
    }

    pub fn to_real(&self) -> DMatrix<f64> {
        DMatrix::from_fn(
            self.rows,
            self.cols,
            |i, j| if self.get(i, j) { 1.0 } else { 0.0 },
        )
    }
}

fn same_shape(a: &BinMatrix, b: &BinMatrix) -> Result<()> {
    if a.rows != b.rows || a.cols != b.cols {
        return dim_err(format!("{}x{} vs {}x{}", a.rows, a.cols, b.rows, b.cols));
    }
    Ok(())
}

/// Pattern of the entries of `m` whose magnitude exceeds `eps`.
pub fn struct_of(m: &DMatrix<f64>, eps: f64) -> BinMatrix {
    assert!(eps >= 0.0, "threshold must be nonnegative");
    BinMatrix::from_fn(m.nrows(), m.ncols(), |i, j| m[(i, j)].abs() > eps)
}

/// Boolean product: `out(i, j) = OR_k x1(i, k) AND x2(k, j)`.
pub fn bool_mul(x1: &BinMatrix, x2: &BinMatrix) -> Result<BinMatrix> {
    if x1.cols != x2.rows {
        return dim_err(format!(
            "cannot multiply {}x{} by {}x{}",
            x1.rows, x1.cols, x2.rows, x2.cols
        ));
    }
    let mut out = BinMatrix::zeros(x1.rows, x2.cols);
    for i in 0..x1.rows {
        let dst = &mut out.data[i * x2.cols..(i + 1) * x2.cols];
        for (k, _) in x1.row(i).iter().enumerate().filter(|(_, &b)| b) {
            for (d, &s) in dst.iter_mut().zip(x2.row(k)) {
                *d |= s;
            }
        }
    }
    Ok(out)
}

/// `r`-fold boolean product of a square matrix with itself.
pub fn bool_pow(x: &BinMatrix, r: usize) -> Result<BinMatrix> {
    if x.rows != x.cols {
        return dim_err(format!("power of non-square {}x{} matrix", x.rows, x.cols));
    }
    if r == 0 {
        return Err(CoreError::Invalid("exponent must be positive".into()));
    }
    let mut out = x.clone();
    for _ in 1..r {
        out = bool_mul(&out, x)?;
    }
    Ok(out)
}

/// `x <= y` entrywise.
pub fn leq(x: &BinMatrix, y: &BinMatrix) -> Result<bool> {
    same_shape(x, y)?;
    Ok(x.data.iter().zip(&y.data).all(|(a, b)| !*a || *b))
}

/// `x <= y` with at least one strict entry.
pub fn lt(x: &BinMatrix, y: &BinMatrix) -> Result<bool> {
    Ok(leq(x, y)? && x != y)
}

/// Some entry of `x` exceeds the corresponding entry of `y`.
pub fn not_leq(x: &BinMatrix, y: &BinMatrix) -> Result<bool> {
    Ok(!leq(x, y)?)
}

/// Entries where `x` is one and `y` is zero.
pub fn excess(x: &BinMatrix, y: &BinMatrix) -> Result<Vec<(usize, usize)>> {
    same_shape(x, y)?;
    Ok(x.ones_positions().filter(|&(i, j)| !y.get(i, j)).collect())
}

/// True iff `|m(i, j)| <= tol` wherever `x(i, j) = 0`.
pub fn sparse_member(m: &DMatrix<f64>, x: &BinMatrix, tol: f64) -> Result<bool> {
    if m.nrows() != x.rows || m.ncols() != x.cols {
        return dim_err(format!(
            "matrix is {}x{}, pattern is {}x{}",
            m.nrows(),
            m.ncols(),
            x.rows,
            x.cols
        ));
    }
    Ok((0..x.rows).all(|i| (0..x.cols).all(|j| x.get(i, j) || m[(i, j)].abs() <= tol)))
}

/// Largest `|m(i, j)|` over the zeros of `x`.
pub fn max_outside(m: &DMatrix<f64>, x: &BinMatrix) -> f64 {
    let mut worst = 0.0f64;
    for i in 0..x.rows {
        for j in 0..x.cols {
            if !x.get(i, j) {
                worst = worst.max(m[(i, j)].abs());
            }
        }
    }
    worst
}

impl fmt::Display for BinMatrix {
    /// Text format: `rows cols` on the first line, then one line per row.
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "{} {}", self.rows, self.cols)?;
        for i in 0..self.rows {
            let line: Vec<&str> = self
                .row(i)
                .iter()
                .map(|&b| if b { "1" } else { "0" })
                .collect();
            writeln!(f, "{}", line.join(" "))?;
        }
        Ok(())
    }
}

impl fmt::Debug for BinMatrix {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BinMatrix(")?;
        for i in 0..self.rows {
            if i > 0 {
                write!(f, "; ")?;
            }
            for &b in self.row(i) {
                write!(f, "{}", b as u8)?;
            }
        }
        write!(f, ")")
    }
}

impl FromStr for BinMatrix {
    type Err = CoreError;

    fn from_str(s: &str) -> Result<Self> {
        let mut lines = s
            .lines()
            .enumerate()
            .map(|(k, l)| (k + 1, l.split('#').next().unwrap_or("").trim()))
            .filter(|(_, l)| !l.is_empty());
        let (line, header) = lines.next().ok_or(CoreError::Parse {
            line: 1,
            msg: "missing `rows cols` header".into(),
        })?;
        let dims: Vec<usize> = header
            .split_whitespace()
            .map(|t| t.parse::<usize>())
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| CoreError::Parse {
                line,
                msg: format!("bad header: {e}"),
            })?;
        let [rows, cols] = dims[..] else {
            return Err(CoreError::Parse {
                line,
                msg: "header must be `rows cols`".into(),
            });
        };
        let mut out = BinMatrix::zeros(rows, cols);
        let mut read = 0;
        for (line, text) in lines {
            if read == rows {
                return Err(CoreError::Parse {
                    line,
                    msg: format!("more than {rows} rows"),
                });
            }
            let tokens: Vec<&str> = text.split_whitespace().collect();
            if tokens.len() != cols {
                return Err(CoreError::Parse {
                    line,
                    msg: format!("expected {cols} entries, found {}", tokens.len()),
                });
            }
            for (j, t) in tokens.iter().enumerate() {
                let v = match *t {
                    "0" => false,
                    "1" => true,
                    other => {
                        return Err(CoreError::Parse {
                            line,
                            msg: format!("entry `{other}` is not 0 or 1"),
                        })
                    }
                };
                out.set(read, j, v);
            }
            read += 1;
        }
        if read != rows {
            return Err(CoreError::Parse {
                line: s.lines().count(),
                msg: format!("expected {rows} rows, found {read}"),
            });
        }
        Ok(out)
    }
}
