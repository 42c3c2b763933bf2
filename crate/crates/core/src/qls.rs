//! Emulated quantum linear solve.
//!
//! The linear system is solved exactly; the quantum character enters only
//! through what a reader of the output state could learn: an l∞ tomography
//! estimate of the normalized solution from `M = ⌈C·log₂D/ε²⌉` multinomial
//! shots, and an amplitude-estimation estimate of its norm with bounded
//! relative error.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution, StandardNormal};

use crate::error::{Error, Result};
use crate::instrumentation::{Category, QueryCounters};
use crate::linalg::{norm2, BlockSparseMatrix, N_VAR};
use crate::par::Exec;
use crate::precond::BlockInverseCache;
use crate::solver::{bicgstab, SolveStats};
use crate::stateprep::{prep_norm, prepared_amplitudes};
use crate::sumtree::SumTree;

/// Constant of the standard l∞ tomography sample bound. Conservative for
/// random unit vectors, which already meet ε at much smaller values.
pub const DEFAULT_SHOTS_CONSTANT: f64 = 36.0;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct QuantumNoiseConfig {
    /// Target l∞ error of the tomography estimate.
    pub epsilon: f64,
    pub shots_constant: f64,
    /// Half-width of the relative norm error; `None` means `epsilon / 10`.
    pub ae_relative_error: Option<f64>,
    pub sign_flip_prob: f64,
    pub seed: u64,
    /// Skip sampling and norm noise entirely.
    pub bypass: bool,
}

impl Default for QuantumNoiseConfig {
    fn default() -> Self {
        Self {
            epsilon: 1e-2,
            shots_constant: DEFAULT_SHOTS_CONSTANT,
            ae_relative_error: None,
            sign_flip_prob: 0.0,
            seed: 0,
            bypass: false,
        }
    }
}

impl QuantumNoiseConfig {
    pub fn noiseless() -> Self {
        Self {
            bypass: true,
            ..Self::default()
        }
    }

    pub fn with_epsilon(epsilon: f64) -> Self {
        Self {
            epsilon,
            ..Self::default()
        }
    }

    pub fn ae_error(&self) -> f64 {
        self.ae_relative_error.unwrap_or(self.epsilon / 10.0)
    }

    pub fn validate(&self) -> Result<()> {
        if self.bypass {
            return Ok(());
        }
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return bad(format!("epsilon must lie in (0, 1) (got {})", self.epsilon));
        }
        if !(self.shots_constant > 0.0) {
            return bad(format!("shots constant must be positive (got {})", self.shots_constant));
        }
        if !(self.ae_error() >= 0.0) {
            return bad(format!("amplitude-estimation error must be >= 0 (got {})", self.ae_error()));
        }
        if !(0.0..=1.0).contains(&self.sign_flip_prob) {
            return bad(format!("sign flip probability must lie in [0, 1] (got {})", self.sign_flip_prob));
        }
        Ok(())
    }

    pub fn rng(&self) -> ChaCha8Rng {
        ChaCha8Rng::seed_from_u64(self.seed)
    }
}

/// `⌈C·log₂(D)/ε²⌉`, at least one shot.
pub fn shot_count(dim: usize, epsilon: f64, shots_constant: f64) -> u64 {
    let log = (dim.max(2) as f64).log2();
    ((shots_constant * log / (epsilon * epsilon)).ceil() as u64).max(1)
}

#[derive(Clone, Debug, PartialEq)]
pub struct TomographySample {
    /// `(index, ũ_j)` for every index that received at least one shot.
    pub entries: Vec<(usize, f64)>,
    pub shots: u64,
}

impl TomographySample {
    /// `max_j |ũ_j − u_j|`, absent entries counted as zero.
    pub fn linf_error(&self, u: &[f64]) -> f64 {
        let mut dense = vec![0.0; u.len()];
        for &(j, v) in &self.entries {
            dense[j] = v;
        }
        dense.iter().zip(u).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()))
    }
}

/// One multinomial draw of `M` shots over `u_j²`, drawn as a chain of
/// conditional binomials. Estimates are `sign_j·√(n_j/M)`.
pub fn tomography_sample(u: &[f64], cfg: &QuantumNoiseConfig, rng: &mut impl Rng) -> Result<TomographySample> {
    let norm = norm2(u);
    if (norm - 1.0).abs() > 1e-10 {
        return Err(Error::Unnormalized { norm });
    }
    let shots = shot_count(u.len(), cfg.epsilon, cfg.shots_constant);
    let mut left = shots;
    let mut mass = 1.0f64;
    let last = u.iter().rposition(|&x| x != 0.0).unwrap_or(0);
    let mut entries = Vec::new();
    for (j, &uj) in u.iter().enumerate() {
        if left == 0 || j > last {
            break;
        }
        let pj = uj * uj;
        if pj == 0.0 {
            continue;
        }
        let n = if j == last {
            left
        } else {
            let q = (pj / mass).clamp(0.0, 1.0);
            Binomial::new(left, q)
                .map_err(|e| Error::InvalidArgument(format!("binomial({left}, {q}): {e}")))?
                .sample(rng)
        };
        mass -= pj;
        left -= n;
        if n > 0 {
            let mut s = uj.signum();
            if cfg.sign_flip_prob > 0.0 && rng.random_bool(cfg.sign_flip_prob) {
                s = -s;
            }
            entries.push((j, s * (n as f64 / shots as f64).sqrt()));
        }
    }
    Ok(TomographySample { entries, shots })
}

/// `c·(1 + η)` with `η ~ U[−η_AE, η_AE]`.
pub fn amplitude_estimation_norm(c_true: f64, cfg: &QuantumNoiseConfig, rng: &mut impl Rng) -> f64 {
    let eta = cfg.ae_error();
    if eta == 0.0 || c_true == 0.0 {
        return c_true;
    }
    c_true * (1.0 + rng.random_range(-eta..=eta))
}

/// Ideal linear solve standing in for the quantum solver.
pub fn solve_exact(
    a: &BlockSparseMatrix,
    rhs: &[f64],
    tol: f64,
    precond: Option<&BlockInverseCache>,
) -> Result<(Vec<f64>, SolveStats)> {
    if let Some(c) = precond {
        if !c.is_valid_for(a) {
            return Err(Error::StaleCache);
        }
    }
    bicgstab(a, rhs, tol, precond)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct UpdateEntry {
    pub index: usize,
    /// Normalized estimate `ũ_j`.
    pub unit: f64,
    /// Applied increment `c·ũ_j`.
    pub delta: f64,
}

/// Classical output of one emulated solve: a sparse approximation of `ΔU`.
#[derive(Clone, Debug, PartialEq)]
pub struct SparseUpdate {
    /// Sorted by index.
    pub entries: Vec<UpdateEntry>,
    /// Recombined norm estimate `c = c_b·c_l`.
    pub norm_estimate: f64,
    /// `‖ΔU‖₂` of the exact solve (diagnostic).
    pub true_norm: f64,
    /// Tomography shots; zero when sampling was bypassed.
    pub shots: u64,
}

impl SparseUpdate {
    pub fn empty() -> Self {
        Self {
            entries: Vec::new(),
            norm_estimate: 0.0,
            true_norm: 0.0,
            shots: 0,
        }
    }

    pub fn nonzero_count(&self) -> usize {
        self.entries.len()
    }

    /// Distinct cells touched, ascending.
    pub fn touched_cells(&self) -> Vec<usize> {
        let mut cells: Vec<usize> = self.entries.iter().map(|e| e.index / N_VAR).collect();
        cells.sort_unstable();
        cells.dedup();
        cells
    }

    pub fn to_dense(&self, len: usize) -> Vec<f64> {
        let mut out = vec![0.0; len];
        for e in &self.entries {
            out[e.index] = e.delta;
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct QuantumSolve {
    pub update: SparseUpdate,
    /// Exact `ΔU` (solution of the system with right-hand side `-R`).
    pub exact: Vec<f64>,
    pub stats: SolveStats,
}

/// Solves `system · ΔU = −b`, where `b` is the vector held in `tree`
/// (the plain or the preconditioned residual, matching `system`).
///
/// The right-hand side is the prepared state `−b/‖b‖` and `c_b = ‖b‖`
/// comes from the tree root. The solver output `y` has norm `c_l`, so
/// `ΔU = c_b·y` and `‖ΔU‖ = c_b·c_l`.
pub fn quantum_solve(
    system: &BlockSparseMatrix,
    inner_precond: Option<&BlockInverseCache>,
    tree: &SumTree,
    cfg: &QuantumNoiseConfig,
    linear_tol: f64,
    rng: &mut impl Rng,
    counters: &QueryCounters,
) -> Result<QuantumSolve> {
    if tree.root() == 0.0 {
        return Ok(QuantumSolve {
            update: SparseUpdate::empty(),
            exact: vec![0.0; tree.len()],
            stats: SolveStats::default(),
        });
    }
    let c_b = prep_norm(tree);
    let prepared = prepared_amplitudes(tree)?;
    let (y, stats) = solve_exact(system, &prepared.amplitudes, linear_tol, inner_precond)?;
    let c_l = norm2(&y);
    let exact: Vec<f64> = y.iter().map(|v| c_b * v).collect();
    let true_norm = c_b * c_l;
    if c_l == 0.0 {
        return Ok(QuantumSolve {
            update: SparseUpdate::empty(),
            exact,
            stats,
        });
    }

    let update = if cfg.bypass {
        SparseUpdate {
            entries: exact
                .iter()
                .enumerate()
                .filter(|(_, &d)| d != 0.0)
                .map(|(index, &delta)| UpdateEntry {
                    index,
                    unit: y[index] / c_l,
                    delta,
                })
                .collect(),
            norm_estimate: true_norm,
            true_norm,
            shots: 0,
        }
    } else {
        let u: Vec<f64> = y.iter().map(|v| v / c_l).collect();
        let sample = tomography_sample(&u, cfg, rng)?;
        counters.quantum(Category::Sampling, sample.shots);
        let c = c_b * amplitude_estimation_norm(c_l, cfg, rng);
        SparseUpdate {
            entries: sample
                .entries
                .iter()
                .map(|&(index, unit)| UpdateEntry {
                    index,
                    unit,
                    delta: c * unit,
                })
                .collect(),
            norm_estimate: c,
            true_norm,
            shots: sample.shots,
        }
    };
    Ok(QuantumSolve { update, exact, stats })
}

/// Random unit vector with Gaussian components.
pub fn random_unit_vector(dim: usize, rng: &mut impl Rng) -> Vec<f64> {
    let mut v: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(StandardNormal)).collect();
    let n = norm2(&v);
    v.iter_mut().for_each(|x| *x /= n);
    v
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Calibration {
    pub shots_constant: f64,
    pub passes: usize,
    pub trials: usize,
}

/// Fraction-of-trials check of `‖ũ − u‖∞ ≤ ε` on random unit vectors;
/// trial `t` uses stream `t` of the seeded generator.
pub fn concentration_passes(
    dim: usize,
    cfg: &QuantumNoiseConfig,
    trials: usize,
    exec: Exec,
) -> Result<usize> {
    let ok = exec.try_map(trials, |t| -> Result<bool> {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64);
        let u = random_unit_vector(dim, &mut rng);
        let s = tomography_sample(&u, cfg, &mut rng)?;
        Ok(s.linf_error(&u) <= cfg.epsilon)
    })?;
    Ok(ok.into_iter().filter(|&b| b).count())
}

/// Doubles the shots constant, starting from `cfg.shots_constant`, until at
/// least `min_passes` of `trials` meet the l∞ target.
pub fn calibrate_shots_constant(
    dim: usize,
    cfg: &QuantumNoiseConfig,
    trials: usize,
    min_passes: usize,
    exec: Exec,
) -> Result<Calibration> {
    let mut c = *cfg;
    for _ in 0..16 {
        let passes = concentration_passes(dim, &c, trials, exec)?;
        if passes >= min_passes {
            return Ok(Calibration {
                shots_constant: c.shots_constant,
                passes,
                trials,
            });
        }
        c.shots_constant *= 2.0;
    }
    Err(Error::InvalidArgument(format!(
        "no shots constant up to {} reaches {min_passes}/{trials}",
        c.shots_constant
    )))
}
