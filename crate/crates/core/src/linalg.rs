//! Small dense blocks, the block-CSR Jacobian, and the operator abstraction
//! shared by the Krylov solver and the eigenvalue estimators.

use std::sync::atomic::{AtomicU64, Ordering};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::instrumentation::{Category, QueryCounters};
use crate::mesh::STENCIL_SIZE;

/// Conserved variables per cell.
pub const N_VAR: usize = 4;

pub type Vec4 = [f64; N_VAR];
pub type Block = [[f64; N_VAR]; N_VAR];

pub const ZERO_BLOCK: Block = [[0.0; N_VAR]; N_VAR];

pub fn identity_block() -> Block {
    let mut b = ZERO_BLOCK;
    for (k, row) in b.iter_mut().enumerate() {
        row[k] = 1.0;
    }
    b
}

pub fn block_mul(a: &Block, b: &Block) -> Block {
    let mut c = ZERO_BLOCK;
    for i in 0..N_VAR {
        for k in 0..N_VAR {
            let aik = a[i][k];
            for j in 0..N_VAR {
                c[i][j] += aik * b[k][j];
            }
        }
    }
    c
}

pub fn block_vec(a: &Block, x: &[f64]) -> Vec4 {
    let mut y = [0.0; N_VAR];
    for (yi, row) in y.iter_mut().zip(a) {
        *yi = row.iter().zip(x).map(|(a, b)| a * b).sum();
    }
    y
}

pub fn block_add_assign(a: &mut Block, b: &Block) {
    for (ra, rb) in a.iter_mut().zip(b) {
        for (x, y) in ra.iter_mut().zip(rb) {
            *x += y;
        }
    }
}

pub fn block_max_abs(a: &Block) -> f64 {
    a.iter().flatten().fold(0.0f64, |m, v| m.max(v.abs()))
}

/// Infinity norm (max absolute row sum).
pub fn block_norm_inf(a: &Block) -> f64 {
    a.iter()
        .map(|r| r.iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max)
}

pub fn norm2(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum::<f64>().sqrt()
}

pub fn norm_inf(x: &[f64]) -> f64 {
    x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Something that can be multiplied with a vector, densified, and solved.
pub trait LinearOperator: Sync {
    fn dim(&self) -> usize;
    fn apply(&self, x: &[f64], y: &mut [f64]);
    fn to_dense(&self) -> DMatrix<f64>;
    /// Solves `self · x = b` to (near) machine precision.
    fn solve(&self, b: &[f64]) -> Result<Vec<f64>>;
}

impl LinearOperator for DMatrix<f64> {
    fn dim(&self) -> usize {
        self.nrows()
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            *yi = (0..self.ncols()).map(|j| self[(i, j)] * x[j]).sum();
        }
    }

    fn to_dense(&self) -> DMatrix<f64> {
        self.clone()
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let rhs = nalgebra::DVector::from_column_slice(b);
        self.clone()
            .lu()
            .solve(&rhs)
            .map(|x| x.as_slice().to_vec())
            .ok_or(Error::SingularMatrix)
    }
}

static NEXT_GENERATION: AtomicU64 = AtomicU64::new(1);

/// Block-CSR matrix with `N_VAR × N_VAR` dense blocks. Within a row the
/// blocks appear in stencil order, diagonal first.
#[derive(Clone, Debug)]
pub struct BlockSparseMatrix {
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    blocks: Vec<Block>,
    time_step: Vec<f64>,
    generation: u64,
}

impl BlockSparseMatrix {
    /// Builds from per-row `(column, block)` lists. The diagonal block must
    /// come first in each row.
    pub fn from_rows(rows: Vec<Vec<(usize, Block)>>, time_step: Vec<f64>) -> Result<Self> {
        let n = rows.len();
        if time_step.len() != n {
            return Err(Error::InvalidArgument(format!(
                "time step length {} != block rows {n}",
                time_step.len()
            )));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut blocks = Vec::new();
        row_ptr.push(0);
        for (i, row) in rows.into_iter().enumerate() {
            if row.first().map(|(c, _)| *c) != Some(i) {
                return Err(Error::InvalidArgument(format!(
                    "row {i} does not start with its diagonal block"
                )));
            }
            if row.len() > STENCIL_SIZE {
                return Err(Error::InvalidArgument(format!(
                    "row {i} has {} blocks (stencil holds {STENCIL_SIZE})",
                    row.len()
                )));
            }
            for (c, b) in row {
                if c >= n {
                    return Err(Error::IndexOutOfRange {
                        what: "block column",
                        index: c,
                        limit: n,
                    });
                }
                cols.push(c);
                blocks.push(b);
            }
            row_ptr.push(cols.len());
        }
        Ok(Self {
            row_ptr,
            cols,
            blocks,
            time_step,
            generation: NEXT_GENERATION.fetch_add(1, Ordering::Relaxed),
        })
    }

    /// Same pattern, blocks replaced by `f(row, col, block)`.
    pub fn map_blocks(&self, f: impl Fn(usize, usize, &Block) -> Block) -> Self {
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for i in 0..self.n_cells() {
            for p in self.row_ptr[i]..self.row_ptr[i + 1] {
                blocks.push(f(i, self.cols[p], &self.blocks[p]));
            }
        }
        Self {
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            blocks,
            time_step: self.time_step.clone(),
            generation: NEXT_GENERATION.fetch_add(1, Ordering::Relaxed),
        }
    }

    /// Unique id; a block-inverse cache records the id it was built from.
    pub fn generation(&self) -> u64 {
        self.generation
    }

    pub fn n_cells(&self) -> usize {
        self.row_ptr.len() - 1
    }

    /// Local pseudo time step of each cell used in assembly.
    pub fn time_step(&self, i: usize) -> f64 {
        self.time_step[i]
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, &Block)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.cols[r.clone()].iter().copied().zip(&self.blocks[r])
    }

    pub fn block(&self, i: usize, j: usize) -> Option<&Block> {
        self.row(i).find(|(c, _)| *c == j).map(|(_, b)| b)
    }

    pub fn diag_block(&self, i: usize) -> &Block {
        &self.blocks[self.row_ptr[i]]
    }

    pub fn nnz_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Scalar entry `A[(i,k),(j,kk)]`, zero outside the block pattern.
    pub fn element(&self, i: usize, k: usize, j: usize, kk: usize) -> f64 {
        self.block(i, j).map_or(0.0, |b| b[k][kk])
    }

    pub(crate) fn check_element(&self, i: usize, k: usize, j: usize, kk: usize) -> Result<()> {
        let n = self.n_cells();
        for (what, idx, lim) in [
            ("cell", i, n),
            ("cell", j, n),
            ("component", k, N_VAR),
            ("component", kk, N_VAR),
        ] {
            if idx >= lim {
                return Err(Error::IndexOutOfRange {
                    what,
                    index: idx,
                    limit: lim,
                });
            }
        }
        Ok(())
    }

    /// The O_A oracle. Scans the stencil row, so it costs `STENCIL_SIZE`
    /// quantum queries.
    pub fn jacobian_element_oracle(
        &self,
        i: usize,
        k: usize,
        j: usize,
        kk: usize,
        counters: &QueryCounters,
    ) -> Result<f64> {
        self.check_element(i, k, j, kk)?;
        counters.quantum(Category::Jacobian, STENCIL_SIZE as u64);
        Ok(self.element(i, k, j, kk))
    }

    pub fn matvec(&self, x: &[f64], y: &mut [f64]) {
        for i in 0..self.n_cells() {
            let mut acc = [0.0; N_VAR];
            for (j, b) in self.row(i) {
                let xj = &x[j * N_VAR..(j + 1) * N_VAR];
                for (a, row) in acc.iter_mut().zip(b) {
                    *a += row.iter().zip(xj).map(|(p, q)| p * q).sum::<f64>();
                }
            }
            y[i * N_VAR..(i + 1) * N_VAR].copy_from_slice(&acc);
        }
    }
}

impl LinearOperator for BlockSparseMatrix {
    fn dim(&self) -> usize {
        self.n_cells() * N_VAR
    }

    fn apply(&self, x: &[f64], y: &mut [f64]) {
        self.matvec(x, y);
    }

    fn to_dense(&self) -> DMatrix<f64> {
        let d = self.dim();
        let mut m = DMatrix::zeros(d, d);
        for i in 0..self.n_cells() {
            for (j, b) in self.row(i) {
                for k in 0..N_VAR {
                    for kk in 0..N_VAR {
                        m[(i * N_VAR + k, j * N_VAR + kk)] = b[k][kk];
                    }
                }
            }
        }
        m
    }

    fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let cache = crate::precond::BlockInverseCache::build(self, &QueryCounters::new())?;
        crate::solver::bicgstab(self, b, 1e-13, Some(&cache)).map(|(x, _)| x)
    }
}
