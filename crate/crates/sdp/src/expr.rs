//! Matrix-valued affine expressions in the declared decision variables.
//!
//! An [`AffineExpr`] is a constant matrix plus a sum of terms of the form
//! `L · V · R` or `L · Vᵀ · R`, where `V` is a decision variable and `L`, `R`
//! are fixed matrices. This is enough to write every block of the LMIs used
//! for state-feedback synthesis (`A X + B L`, `X + Xᵀ - P`, ...).
//!
//! Shape errors in the algebra are programming errors and panic, in the same
//! way nalgebra's own operators do.

use std::ops::{Add, Neg, Sub};

use nalgebra::DMatrix;

/// Handle to a matrix variable declared on a [`crate::Problem`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct VarId(pub(crate) usize);

impl VarId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug)]
pub(crate) struct Term {
    pub var: VarId,
    pub left: DMatrix<f64>,
    pub right: DMatrix<f64>,
    pub transposed: bool,
}

#[derive(Clone, Debug)]
pub struct AffineExpr {
    rows: usize,
    cols: usize,
    pub(crate) constant: DMatrix<f64>,
    pub(crate) terms: Vec<Term>,
}

impl AffineExpr {
    pub fn constant(m: DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            constant: m,
            terms: Vec::new(),
        }
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self::constant(DMatrix::zeros(rows, cols))
    }

    pub fn identity(n: usize) -> Self {
        Self::constant(DMatrix::identity(n, n))
    }

    pub(crate) fn variable(var: VarId, rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            constant: DMatrix::zeros(rows, cols),
            terms: vec![Term {
                var,
                left: DMatrix::identity(rows, rows),
                right: DMatrix::identity(cols, cols),
                transposed: false,
            }],
        }
    }

    pub fn nrows(&self) -> usize {
        self.rows
    }

    pub fn ncols(&self) -> usize {
        self.cols
    }

    pub fn shape(&self) -> (usize, usize) {
        (self.rows, self.cols)
    }

    /// True when no decision variable appears.
    pub fn is_constant(&self) -> bool {
        self.terms.is_empty()
    }

    /// `M · self`
    pub fn premul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(
            m.ncols(),
            self.rows,
            "premul: {}x{} times {}x{}",
            m.nrows(),
            m.ncols(),
            self.rows,
            self.cols
        );
        Self {
            rows: m.nrows(),
            cols: self.cols,
            constant: m * &self.constant,
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    var: t.var,
                    left: m * &t.left,
                    right: t.right.clone(),
                    transposed: t.transposed,
                })
                .collect(),
        }
    }

    /// `self · M`
    pub fn postmul(&self, m: &DMatrix<f64>) -> Self {
        assert_eq!(
            self.cols,
            m.nrows(),
            "postmul: {}x{} times {}x{}",
            self.rows,
            self.cols,
            m.nrows(),
            m.ncols()
        );
        Self {
            rows: self.rows,
            cols: m.ncols(),
            constant: &self.constant * m,
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    var: t.var,
                    left: t.left.clone(),
                    right: &t.right * m,
                    transposed: t.transposed,
                })
                .collect(),
        }
    }

    pub fn transpose(&self) -> Self {
        // (L V R)ᵀ = Rᵀ Vᵀ Lᵀ
        Self {
            rows: self.cols,
            cols: self.rows,
            constant: self.constant.transpose(),
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    var: t.var,
                    left: t.right.transpose(),
                    right: t.left.transpose(),
                    transposed: !t.transposed,
                })
                .collect(),
        }
    }

    pub fn scale(&self, s: f64) -> Self {
        Self {
            rows: self.rows,
            cols: self.cols,
            constant: &self.constant * s,
            terms: self
                .terms
                .iter()
                .map(|t| Term {
                    var: t.var,
                    left: &t.left * s,
                    right: t.right.clone(),
                    transposed: t.transposed,
                })
                .collect(),
        }
    }

    /// Place `self` at `(row, col)` inside a `rows × cols` zero matrix.
    pub fn embed(&self, rows: usize, cols: usize, row: usize, col: usize) -> Self {
        assert!(row + self.rows <= rows && col + self.cols <= cols, "embed out of range");
        let mut sel_l = DMatrix::zeros(rows, self.rows);
        for i in 0..self.rows {
            sel_l[(row + i, i)] = 1.0;
        }
        let mut sel_r = DMatrix::zeros(self.cols, cols);
        for j in 0..self.cols {
            sel_r[(j, col + j)] = 1.0;
        }
        self.premul(&sel_l).postmul(&sel_r)
    }

    /// Assemble a block matrix. `None` entries are zero blocks; every block
    /// row and block column needs at least one `Some` to fix its size.
    pub fn blocks(grid: Vec<Vec<Option<AffineExpr>>>) -> Self {
        let nr = grid.len();
        assert!(nr > 0, "empty block grid");
        let nc = grid[0].len();
        assert!(grid.iter().all(|r| r.len() == nc), "ragged block grid");

        let heights: Vec<usize> = (0..nr)
            .map(|i| {
                grid[i]
                    .iter()
                    .flatten()
                    .map(|e| e.rows)
                    .next()
                    .unwrap_or_else(|| panic!("block row {i} is all zero"))
            })
            .collect();
        let widths: Vec<usize> = (0..nc)
            .map(|j| {
                grid.iter()
                    .filter_map(|r| r[j].as_ref())
                    .map(|e| e.cols)
                    .next()
                    .unwrap_or_else(|| panic!("block column {j} is all zero"))
            })
            .collect();
        let total_r: usize = heights.iter().sum();
        let total_c: usize = widths.iter().sum();

        let mut out = AffineExpr::zeros(total_r, total_c);
        let mut r0 = 0;
        for (i, row) in grid.into_iter().enumerate() {
            let mut c0 = 0;
            for (j, block) in row.into_iter().enumerate() {
                if let Some(b) = block {
                    assert_eq!(
                        b.shape(),
                        (heights[i], widths[j]),
                        "block ({i},{j}) has inconsistent shape"
                    );
                    out = out + b.embed(total_r, total_c, r0, c0);
                }
                c0 += widths[j];
            }
            r0 += heights[i];
        }
        out
    }

    /// Assemble a symmetric block matrix from its upper triangle
    /// (`grid[i][j]` for `j >= i`). Entries below the diagonal are ignored and
    /// replaced by transposes of their mirror blocks.
    pub fn symmetric_blocks(grid: Vec<Vec<Option<AffineExpr>>>) -> Self {
        let n = grid.len();
        let mut full: Vec<Vec<Option<AffineExpr>>> = vec![vec![None; n]; n];
        for (i, row) in grid.iter().enumerate() {
            assert_eq!(row.len(), n, "symmetric block grid must be square");
            for j in i..n {
                full[i][j] = row[j].clone();
                if j > i {
                    full[j][i] = row[j].as_ref().map(|e| e.transpose());
                }
            }
        }
        Self::blocks(full)
    }

    /// Numeric value for the given variable values (indexed by `VarId`).
    pub fn evaluate(&self, values: &[DMatrix<f64>]) -> DMatrix<f64> {
        let mut out = self.constant.clone();
        for t in &self.terms {
            let v = &values[t.var.0];
            if t.transposed {
                out += &t.left * v.transpose() * &t.right;
            } else {
                out += &t.left * v * &t.right;
            }
        }
        out
    }
}

impl Add for AffineExpr {
    type Output = AffineExpr;

    fn add(mut self, rhs: AffineExpr) -> AffineExpr {
        assert_eq!(self.shape(), rhs.shape(), "add: shape mismatch");
        self.constant += rhs.constant;
        self.terms.extend(rhs.terms);
        self
    }
}

impl Sub for AffineExpr {
    type Output = AffineExpr;

    fn sub(self, rhs: AffineExpr) -> AffineExpr {
        self + rhs.neg()
    }
}

impl Neg for AffineExpr {
    type Output = AffineExpr;

    fn neg(self) -> AffineExpr {
        self.scale(-1.0)
    }
}
