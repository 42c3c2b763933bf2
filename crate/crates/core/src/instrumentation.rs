//! Logical cost accounting.
//!
//! Two units are tracked separately: a *classical access* reads or writes a
//! single memory entry, a *quantum query* is one invocation of an oracle on
//! a (emulated) superposition of addresses. Counts are kept per category so
//! the cost factors of a step can be attributed to the data structure, the
//! matrix and residual oracles, the stencil oracle, block inversion and
//! tomography shots.

use std::ops::{Add, Sub};
use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Category {
    /// Sum-tree reads, writes and node queries.
    Tree,
    /// Jacobian element oracle.
    Jacobian,
    /// Residual element oracle.
    Residual,
    /// Stencil relation oracle.
    Stencil,
    /// Dense block inversion, in n_var³ flop-equivalent units per block.
    BlockInversion,
    /// Tomography shots (one full linear-solver run each).
    Sampling,
}

impl Category {
    pub const ALL: [Category; 6] = [
        Category::Tree,
        Category::Jacobian,
        Category::Residual,
        Category::Stencil,
        Category::BlockInversion,
        Category::Sampling,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Category::Tree => "tree",
            Category::Jacobian => "jacobian",
            Category::Residual => "residual",
            Category::Stencil => "stencil",
            Category::BlockInversion => "block_inversion",
            Category::Sampling => "sampling",
        }
    }

    fn slot(self) -> usize {
        self as usize
    }
}

const N_CAT: usize = Category::ALL.len();

/// Monotone per-category counters. Shared by reference; increments are
/// relaxed atomics so read-only oracles can count through `&self`.
#[derive(Debug, Default)]
pub struct QueryCounters {
    classical: [AtomicU64; N_CAT],
    quantum: [AtomicU64; N_CAT],
}

impl QueryCounters {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn classical(&self, cat: Category, n: u64) {
        self.classical[cat.slot()].fetch_add(n, Ordering::Relaxed);
    }

    pub fn quantum(&self, cat: Category, n: u64) {
        self.quantum[cat.slot()].fetch_add(n, Ordering::Relaxed);
    }

    pub fn snapshot(&self) -> CounterSnapshot {
        let mut s = CounterSnapshot::default();
        for c in 0..N_CAT {
            s.classical[c] = self.classical[c].load(Ordering::Relaxed);
            s.quantum[c] = self.quantum[c].load(Ordering::Relaxed);
        }
        s
    }

    fn from_snapshot(s: &CounterSnapshot) -> Self {
        let out = Self::default();
        for c in 0..N_CAT {
            out.classical[c].store(s.classical[c], Ordering::Relaxed);
            out.quantum[c].store(s.quantum[c], Ordering::Relaxed);
        }
        out
    }
}

impl Clone for QueryCounters {
    fn clone(&self) -> Self {
        Self::from_snapshot(&self.snapshot())
    }
}

/// Plain copy of the counters at one instant.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct CounterSnapshot {
    pub classical: [u64; N_CAT],
    pub quantum: [u64; N_CAT],
}

impl CounterSnapshot {
    pub fn classical_total(&self) -> u64 {
        self.classical.iter().sum()
    }

    pub fn quantum_total(&self) -> u64 {
        self.quantum.iter().sum()
    }

    pub fn classical_of(&self, cat: Category) -> u64 {
        self.classical[cat.slot()]
    }

    pub fn quantum_of(&self, cat: Category) -> u64 {
        self.quantum[cat.slot()]
    }

    /// One `category.classical=…` / `category.quantum=…` line per category.
    pub fn report_lines(&self) -> Vec<String> {
        let mut out = Vec::with_capacity(2 * N_CAT + 2);
        for cat in Category::ALL {
            out.push(format!("counters.{}.classical={}", cat.name(), self.classical_of(cat)));
            out.push(format!("counters.{}.quantum={}", cat.name(), self.quantum_of(cat)));
        }
        out.push(format!("counters.classical_total={}", self.classical_total()));
        out.push(format!("counters.quantum_total={}", self.quantum_total()));
        out
    }
}

impl Add for CounterSnapshot {
    type Output = Self;
    fn add(mut self, rhs: Self) -> Self {
        for c in 0..N_CAT {
            self.classical[c] += rhs.classical[c];
            self.quantum[c] += rhs.quantum[c];
        }
        self
    }
}

impl Sub for CounterSnapshot {
    type Output = Self;
    fn sub(mut self, rhs: Self) -> Self {
        for c in 0..N_CAT {
            self.classical[c] -= rhs.classical[c];
            self.quantum[c] -= rhs.quantum[c];
        }
        self
    }
}

/// Threshold above which a power-law exponent is no longer considered
/// polylogarithmic growth.
pub const POLYLOG_EXPONENT_LIMIT: f64 = 0.2;

/// Result of [`scaling_fit`]. Both models are fitted in log space.
#[derive(Clone, Copy, Debug)]
pub struct ScalingFit {
    /// `count ≈ power_prefactor · N^power_exponent`
    pub power_exponent: f64,
    pub power_prefactor: f64,
    pub power_rms_residual: f64,
    /// `count ≈ log_prefactor · (log₂ N)^log_exponent`
    pub log_exponent: f64,
    pub log_prefactor: f64,
    pub log_rms_residual: f64,
    /// Set when `power_exponent` exceeds [`POLYLOG_EXPONENT_LIMIT`].
    pub exceeds_polylog: bool,
}

/// Least-squares fit of `(N, count)` pairs against a power law and a
/// power of `log₂ N`.
pub fn scaling_fit(series: &[(f64, f64)]) -> Result<ScalingFit> {
    if series.len() < 3 {
        return Err(Error::InsufficientData(format!(
            "need at least 3 sizes, got {}",
            series.len()
        )));
    }
    let (lo, hi) = series
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), &(n, _)| (lo.min(n), hi.max(n)));
    if hi < 8.0 * lo {
        return Err(Error::InsufficientData(format!(
            "sizes span only {:.2}x (need 8x)",
            hi / lo
        )));
    }
    if series.iter().any(|&(n, c)| n <= 2.0 || c <= 0.0) {
        return Err(Error::InsufficientData(
            "sizes must exceed 2 and counts must be positive".into(),
        ));
    }

    let ln_c: Vec<f64> = series.iter().map(|&(_, c)| c.ln()).collect();
    let ln_n: Vec<f64> = series.iter().map(|&(n, _)| n.ln()).collect();
    let ln_log_n: Vec<f64> = series.iter().map(|&(n, _)| n.log2().ln()).collect();

    let (pb, pa, pr) = least_squares(&ln_n, &ln_c);
    let (lb, la, lr) = least_squares(&ln_log_n, &ln_c);
    Ok(ScalingFit {
        power_exponent: pb,
        power_prefactor: pa.exp(),
        power_rms_residual: pr,
        log_exponent: lb,
        log_prefactor: la.exp(),
        log_rms_residual: lr,
        exceeds_polylog: pb > POLYLOG_EXPONENT_LIMIT,
    })
}

/// Returns (slope, intercept, rms residual).
fn least_squares(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let slope = if sxx > 0.0 { sxy / sxx } else { 0.0 };
    let icpt = my - slope * mx;
    let rms = (x
        .iter()
        .zip(y)
        .map(|(a, b)| (b - icpt - slope * a).powi(2))
        .sum::<f64>()
        / n)
        .sqrt();
    (slope, icpt, rms)
}
