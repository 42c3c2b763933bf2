//! Block-Jacobi preconditioning: `P = blockdiag(A_ii)⁻¹`, the preconditioned
//! operator `Ã = P·A`, the preconditioned residual `R' = P·R`, and
//! condition-number estimates.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::instrumentation::{Category, QueryCounters};
use crate::linalg::{block_mul, block_norm_inf, block_vec, norm2, Block, BlockSparseMatrix, LinearOperator, N_VAR};
use crate::par::Exec;

/// Inverts a dense block by Gaussian elimination with partial pivoting.
/// A pivot below `1e-14·‖block‖∞` is treated as singular.
pub fn invert_block(block: &Block) -> Option<Block> {
    let scale = block_norm_inf(block);
    if !(scale > 0.0) || !scale.is_finite() {
        return None;
    }
    let mut a = *block;
    let mut inv = crate::linalg::identity_block();
    for col in 0..N_VAR {
        let piv = (col..N_VAR)
            .max_by(|&x, &y| a[x][col].abs().total_cmp(&a[y][col].abs()))
            .unwrap();
        if a[piv][col].abs() < 1e-14 * scale {
            return None;
        }
        a.swap(col, piv);
        inv.swap(col, piv);
        let d = a[col][col];
        for k in 0..N_VAR {
            a[col][k] /= d;
            inv[col][k] /= d;
        }
        for row in 0..N_VAR {
            if row != col {
                let f = a[row][col];
                if f != 0.0 {
                    for k in 0..N_VAR {
                        a[row][k] -= f * a[col][k];
                        inv[row][k] -= f * inv[col][k];
                    }
                }
            }
        }
    }
    Some(inv)
}

/// Flop-equivalent units charged per block inversion.
pub const INVERSION_COST: u64 = (N_VAR * N_VAR * N_VAR) as u64;

pub fn invert_diagonal_block(a: &BlockSparseMatrix, i: usize, counters: &QueryCounters) -> Result<Block> {
    if i >= a.n_cells() {
        return Err(Error::IndexOutOfRange {
            what: "cell",
            index: i,
            limit: a.n_cells(),
        });
    }
    counters.classical(Category::BlockInversion, INVERSION_COST);
    invert_block(a.diag_block(i)).ok_or(Error::SingularBlock { cell: i })
}

/// Inverses of all diagonal blocks of one particular matrix.
#[derive(Clone, Debug)]
pub struct BlockInverseCache {
    blocks: Vec<Block>,
    source: u64,
}

impl BlockInverseCache {
    pub fn build(a: &BlockSparseMatrix, counters: &QueryCounters) -> Result<Self> {
        Self::build_with(a, counters, Exec::default())
    }

    pub fn build_with(a: &BlockSparseMatrix, counters: &QueryCounters, exec: Exec) -> Result<Self> {
        let blocks = exec.try_map(a.n_cells(), |i| invert_diagonal_block(a, i, counters))?;
        Ok(Self {
            blocks,
            source: a.generation(),
        })
    }

    pub fn is_valid_for(&self, a: &BlockSparseMatrix) -> bool {
        self.source == a.generation()
    }

    fn check(&self, a: &BlockSparseMatrix) -> Result<()> {
        if self.is_valid_for(a) {
            Ok(())
        } else {
            Err(Error::StaleCache)
        }
    }

    pub fn block(&self, i: usize) -> &Block {
        &self.blocks[i]
    }

    pub fn n_cells(&self) -> usize {
        self.blocks.len()
    }

    /// `P·v`.
    pub fn apply(&self, v: &[f64]) -> Vec<f64> {
        let mut out = Vec::with_capacity(v.len());
        for (i, b) in self.blocks.iter().enumerate() {
            out.extend(block_vec(b, &v[i * N_VAR..(i + 1) * N_VAR]));
        }
        out
    }
}

/// The O'_A oracle: `Ã[(i,k),(j,kk)] = Σ_l B_i[k][l]·A_ij[l][kk]`, needing
/// `N_VAR` elements of `A`. Zero wherever `A` has no block.
pub fn preconditioned_element_oracle(
    a: &BlockSparseMatrix,
    cache: &BlockInverseCache,
    i: usize,
    k: usize,
    j: usize,
    kk: usize,
    counters: &QueryCounters,
) -> Result<f64> {
    cache.check(a)?;
    a.check_element(i, k, j, kk)?;
    counters.quantum(Category::Jacobian, N_VAR as u64);
    Ok(match a.block(i, j) {
        Some(blk) => (0..N_VAR).map(|l| cache.blocks[i][k][l] * blk[l][kk]).sum(),
        None => 0.0,
    })
}

/// `R'_(i,k) = Σ_l B_i[k][l]·R_(i,l)`.
pub fn preconditioned_residual_entry(
    a: &BlockSparseMatrix,
    cache: &BlockInverseCache,
    residual: &[f64],
    i: usize,
    k: usize,
) -> Result<f64> {
    cache.check(a)?;
    a.check_element(i, k, i, k)?;
    Ok((0..N_VAR)
        .map(|l| cache.blocks[i][k][l] * residual[i * N_VAR + l])
        .sum())
}

/// `Ã = P·A` with the same block pattern as `A`.
pub fn precondition_matrix(a: &BlockSparseMatrix, cache: &BlockInverseCache) -> Result<BlockSparseMatrix> {
    cache.check(a)?;
    Ok(a.map_blocks(|i, _, blk| block_mul(&cache.blocks[i], blk)))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KappaMethod {
    DenseEig,
    PowerIteration,
    /// Dense for dimension ≤ [`DENSE_LIMIT`], iterative above.
    Auto,
}

pub const DENSE_LIMIT: usize = 2000;
const POWER_TOL: f64 = 1e-3;
const POWER_MAX_ITER: usize = 10_000;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConditionEstimate {
    /// `|λ|max / |λ|min`
    pub kappa: f64,
    pub max_abs_eig: f64,
    pub min_abs_eig: f64,
    pub method: KappaMethod,
}

/// `κ = |λ|max / |λ|min` from eigenvalue moduli.
pub fn condition_number(op: &impl LinearOperator, method: KappaMethod) -> Result<ConditionEstimate> {
    let method = match method {
        KappaMethod::Auto if op.dim() <= DENSE_LIMIT => KappaMethod::DenseEig,
        KappaMethod::Auto => KappaMethod::PowerIteration,
        m => m,
    };
    let (max_abs_eig, min_abs_eig) = match method {
        KappaMethod::DenseEig => {
            if op.dim() > DENSE_LIMIT {
                return Err(Error::InvalidArgument(format!(
                    "dense eigensolve limited to dimension {DENSE_LIMIT} (got {})",
                    op.dim()
                )));
            }
            dense_extremes(op.to_dense())?
        }
        _ => (power_iteration(op, false)?, power_iteration(op, true)?),
    };
    if min_abs_eig == 0.0 {
        return Err(Error::SingularMatrix);
    }
    Ok(ConditionEstimate {
        kappa: max_abs_eig / min_abs_eig,
        max_abs_eig,
        min_abs_eig,
        method,
    })
}

/// Random orthogonal similarities tried after a stalled QR iteration.
/// nalgebra's Francis sweep has no exceptional shifts and can cycle on
/// structured inputs such as `PA` with identity diagonal blocks; a change
/// of basis leaves the spectrum intact and breaks the cycle.
const SCHUR_RETRIES: u64 = 4;

fn dense_extremes(m: DMatrix<f64>) -> Result<(f64, f64)> {
    let n = m.nrows();
    let max_iter = 100 * n.max(10);
    let mut schur = nalgebra::Schur::try_new(m.clone(), f64::EPSILON, max_iter);
    for seed in 0..SCHUR_RETRIES {
        if schur.is_some() {
            break;
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = g.qr().q();
        schur = nalgebra::Schur::try_new(q.transpose() * &m * &q, f64::EPSILON, max_iter);
    }
    let schur = schur.ok_or(Error::EigenNotConverged {
        iterations: max_iter,
        estimate: f64::NAN,
    })?;
    let moduli: Vec<f64> = schur.complex_eigenvalues().iter().map(|z| z.norm()).collect();
    let hi = moduli.iter().copied().fold(0.0, f64::max);
    let lo = moduli.iter().copied().fold(f64::INFINITY, f64::min);
    Ok((hi, lo))
}

/// Largest eigenvalue modulus of `op` (or of its inverse when `inverse`,
/// returned as the smallest modulus of `op`).
fn power_iteration(op: &impl LinearOperator, inverse: bool) -> Result<f64> {
    let n = op.dim();
    let mut x: Vec<f64> = (0..n).map(|i| 1.0 + 0.25 * ((i as f64) * 0.7).sin()).collect();
    let s = norm2(&x);
    x.iter_mut().for_each(|e| *e /= s);
    let mut y = vec![0.0; n];
    let mut prev = f64::NAN;
    for it in 1..=POWER_MAX_ITER {
        if inverse {
            y = op.solve(&x).map_err(|_| Error::SingularMatrix)?;
        } else {
            op.apply(&x, &mut y);
        }
        let est = norm2(&y);
        if est == 0.0 || !est.is_finite() {
            return if inverse {
                Err(Error::SingularMatrix)
            } else {
                Ok(0.0)
            };
        }
        for (a, b) in x.iter_mut().zip(&y) {
            *a = b / est;
        }
        if (est - prev).abs() <= POWER_TOL * est {
            return Ok(if inverse { 1.0 / est } else { est });
        }
        prev = est;
        if it == POWER_MAX_ITER {
            return Err(Error::EigenNotConverged {
                iterations: it,
                estimate: if inverse { 1.0 / est } else { est },
            });
        }
    }
    unreachable!()
}
