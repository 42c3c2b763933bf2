//! The pseudo-time iteration: assemble, solve (through the emulated quantum
//! solver), apply the sparse update, refresh the sum tree locally and read
//! the residual norm back from the tree root.

use std::fmt::Write as _;
use std::io::Write;
use std::time::Instant;

use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::fvm::{PhysicalState, Physics};
use crate::instrumentation::{Category, CounterSnapshot, QueryCounters};
use crate::linalg::{block_vec, norm2, BlockSparseMatrix, Vec4, N_VAR};
use crate::mesh::Mesh;
use crate::par::Exec;
use crate::precond::{invert_block, precondition_matrix, BlockInverseCache};
use crate::qls::{quantum_solve, QuantumNoiseConfig, QuantumSolve, SparseUpdate};
use crate::sumtree::{NodePath, SumTree};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub enum Preconditioning {
    #[default]
    None,
    BlockJacobi,
}

impl Preconditioning {
    pub fn name(self) -> &'static str {
        match self {
            Preconditioning::None => "none",
            Preconditioning::BlockJacobi => "block_jacobi",
        }
    }
}

impl std::str::FromStr for Preconditioning {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(Preconditioning::None),
            "block_jacobi" => Ok(Preconditioning::BlockJacobi),
            other => Err(Error::InvalidArgument(format!(
                "unknown preconditioner '{other}' (expected none or block_jacobi)"
            ))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolverSettings {
    pub cfl: f64,
    /// Stop once `res_norm / res_norm₀` falls below this.
    pub tol: f64,
    pub max_iters: usize,
    /// Relative residual of the inner linear solve.
    pub linear_tol: f64,
    /// Diverged once `res_norm > divergence_factor · res_norm₀`.
    pub divergence_factor: f64,
    /// Full tree audit period in iterations; 0 disables.
    pub audit_every: usize,
    /// Period of the direct `‖R‖` evaluation; 0 disables.
    pub true_residual_every: usize,
    pub preconditioner: Preconditioning,
}

impl Default for SolverSettings {
    fn default() -> Self {
        Self {
            cfl: 10.0,
            tol: 1e-6,
            max_iters: 2000,
            linear_tol: 1e-10,
            divergence_factor: 1e6,
            audit_every: 50,
            true_residual_every: 10,
            preconditioner: Preconditioning::None,
        }
    }
}

impl SolverSettings {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.cfl > 0.0 && self.cfl.is_finite()) {
            return bad(format!("cfl must be positive (got {})", self.cfl));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return bad(format!("tol must lie in (0, 1) (got {})", self.tol));
        }
        if !(self.linear_tol > 0.0) {
            return bad(format!("linear tolerance must be positive (got {})", self.linear_tol));
        }
        if !(self.divergence_factor > 1.0) {
            return bad(format!("divergence factor must exceed 1 (got {})", self.divergence_factor));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvergenceRecord {
    pub iter: usize,
    /// `‖R‖₂`, or `‖R′‖₂` under preconditioning, read from the tree root.
    pub res_norm: f64,
    /// `log₁₀(res_norm / res_norm₀)`.
    pub res_drop: f64,
    /// Norm estimate `c` of the applied update.
    pub delta_u_norm: f64,
    pub classical_accesses: u64,
    pub quantum_queries: u64,
    pub wall_ms: f64,
    /// Directly evaluated `‖R‖₂`, on the periodic check iterations.
    pub true_res_norm: Option<f64>,
}

pub const HISTORY_HEADER: &str = "iter,res_norm,res_drop,delta_u_norm,classical_accesses,quantum_queries,wall_ms";

impl ConvergenceRecord {
    pub fn csv_row(&self, wall_time: bool) -> String {
        format!(
            "{},{:.17e},{:.17e},{:.17e},{},{},{:.3}",
            self.iter,
            self.res_norm,
            self.res_drop,
            self.delta_u_norm,
            self.classical_accesses,
            self.quantum_queries,
            if wall_time { self.wall_ms } else { 0.0 }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
    NonPhysical { cell: usize },
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max_iters",
            RunStatus::Diverged => "diverged",
            RunStatus::NonPhysical { .. } => "nonphysical",
        }
    }
}

#[derive(Clone, Debug)]
pub struct RunOutcome {
    pub status: RunStatus,
    pub state: PhysicalState,
    pub history: Vec<ConvergenceRecord>,
    pub counters: CounterSnapshot,
    pub initial_res_norm: f64,
}

impl RunOutcome {
    pub fn iterations(&self) -> usize {
        self.history.last().map_or(0, |r| r.iter)
    }

    pub fn final_record(&self) -> &ConvergenceRecord {
        self.history.last().expect("history always holds the initial record")
    }

    pub fn converged(&self) -> bool {
        self.status == RunStatus::Converged
    }
}

#[derive(Clone, Debug)]
pub struct StepReport {
    pub record: ConvergenceRecord,
    pub update: SparseUpdate,
    /// The exact `ΔU` of this step.
    pub exact: Vec<f64>,
    pub touched_cells: usize,
    pub tree_writes: usize,
    /// Largest single `update_for_cell` write count in this step.
    pub max_cell_writes: usize,
    pub nonphysical: Option<usize>,
}

/// Sink for the per-iteration history, flushed row by row.
pub struct HistoryWriter<W: Write> {
    out: W,
    wall_time: bool,
}

impl<W: Write> HistoryWriter<W> {
    pub fn new(mut out: W, wall_time: bool) -> Result<Self> {
        writeln!(out, "{HISTORY_HEADER}")?;
        out.flush()?;
        Ok(Self { out, wall_time })
    }

    pub fn push(&mut self, r: &ConvergenceRecord) -> Result<()> {
        writeln!(self.out, "{}", r.csv_row(self.wall_time))?;
        self.out.flush()?;
        Ok(())
    }
}

pub struct Simulation {
    mesh: Mesh,
    physics: Physics,
    state: PhysicalState,
    settings: SolverSettings,
    noise: QuantumNoiseConfig,
    rng: ChaCha8Rng,
    counters: QueryCounters,
    tree: SumTree,
    res0: f64,
    iter: usize,
    exec: Exec,
    start: Instant,
}

impl Simulation {
    pub fn new(
        mesh: Mesh,
        physics: Physics,
        state: PhysicalState,
        settings: SolverSettings,
        noise: QuantumNoiseConfig,
    ) -> Result<Self> {
        settings.validate()?;
        noise.validate()?;
        if state.n_cells() != mesh.n_cells() {
            return Err(Error::InvalidArgument(format!(
                "state has {} cells, mesh has {}",
                state.n_cells(),
                mesh.n_cells()
            )));
        }
        let counters = QueryCounters::new();
        let exec = Exec::default();
        let leaves = full_leaves(&physics, &state, &mesh, &settings, exec)?;
        counters.classical(Category::Residual, leaves.len() as u64);
        let tree = SumTree::new(&leaves)?;
        let res0 = tree.root().sqrt();
        Ok(Self {
            rng: noise.rng(),
            mesh,
            physics,
            state,
            settings,
            noise,
            counters,
            tree,
            res0,
            iter: 0,
            exec,
            start: Instant::now(),
        })
    }

    /// Starts from the uniform freestream.
    pub fn from_freestream(mesh: Mesh, physics: Physics, settings: SolverSettings, noise: QuantumNoiseConfig) -> Result<Self> {
        let state = physics.freestream_state(mesh.n_cells());
        Self::new(mesh, physics, state, settings, noise)
    }

    pub fn with_exec(mut self, exec: Exec) -> Self {
        self.exec = exec;
        self
    }

    pub fn mesh(&self) -> &Mesh {
        &self.mesh
    }

    pub fn physics(&self) -> &Physics {
        &self.physics
    }

    pub fn state(&self) -> &PhysicalState {
        &self.state
    }

    pub fn settings(&self) -> &SolverSettings {
        &self.settings
    }

    pub fn noise(&self) -> &QuantumNoiseConfig {
        &self.noise
    }

    pub fn tree(&self) -> &SumTree {
        &self.tree
    }

    pub fn iteration(&self) -> usize {
        self.iter
    }

    pub fn initial_res_norm(&self) -> f64 {
        self.res0
    }

    /// Monitored norm, read from the tree root without charging a query.
    pub fn res_norm(&self) -> f64 {
        self.tree.root().sqrt()
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot() + self.tree.counters()
    }

    fn res_drop(&self, res: f64) -> f64 {
        if self.res0 > 0.0 {
            (res / self.res0).log10()
        } else {
            0.0
        }
    }

    fn record(&self, res_norm: f64, delta_u_norm: f64, true_res_norm: Option<f64>) -> ConvergenceRecord {
        let c = self.counters();
        ConvergenceRecord {
            iter: self.iter,
            res_norm,
            res_drop: self.res_drop(res_norm),
            delta_u_norm,
            classical_accesses: c.classical_total(),
            quantum_queries: c.quantum_total(),
            wall_ms: self.start.elapsed().as_secs_f64() * 1e3,
            true_res_norm,
        }
    }

    pub fn initial_record(&self) -> ConvergenceRecord {
        let true_res = (self.settings.preconditioner == Preconditioning::BlockJacobi)
            .then(|| self.true_residual_norm().ok())
            .flatten();
        self.record(self.res0, 0.0, true_res)
    }

    /// `‖R(U)‖₂` evaluated directly from the state.
    pub fn true_residual_norm(&self) -> Result<f64> {
        Ok(norm2(&self.physics.residual_with(&self.state, &self.mesh, self.exec)?))
    }

    /// Current Jacobian and, with block-Jacobi, its inverse cache and the
    /// preconditioned operator.
    pub fn systems(&self) -> Result<(BlockSparseMatrix, Option<(BlockInverseCache, BlockSparseMatrix)>)> {
        let a = self
            .physics
            .assemble_jacobian_with(&self.state, &self.mesh, self.settings.cfl, self.exec)?;
        self.counters
            .classical(Category::Jacobian, (a.nnz_blocks() * N_VAR * N_VAR) as u64);
        let pre = match self.settings.preconditioner {
            Preconditioning::None => None,
            Preconditioning::BlockJacobi => {
                let cache = BlockInverseCache::build_with(&a, &self.counters, self.exec)?;
                let at = precondition_matrix(&a, &cache)?;
                Some((cache, at))
            }
        };
        Ok((a, pre))
    }

    /// Assembles the current system and runs the emulated solve, without
    /// touching the state.
    pub fn solve(&mut self) -> Result<QuantumSolve> {
        let (a, pre) = self.systems()?;
        // The unpreconditioned system still gets block-Jacobi inside the
        // ideal solver; that is the emulator's business and is not metered.
        let (system, inner) = match &pre {
            Some((_, at)) => (at, None),
            None => (&a, Some(BlockInverseCache::build_with(&a, &QueryCounters::new(), self.exec)?)),
        };
        quantum_solve(
            system,
            inner.as_ref(),
            &self.tree,
            &self.noise,
            self.settings.linear_tol,
            &mut self.rng,
            &self.counters,
        )
        .map_err(|e| Error::StepFailed {
            iteration: self.iter + 1,
            source: Box::new(e),
        })
    }

    /// One implicit step `A ΔU = −R`, `U ← U + ΔŨ`.
    pub fn step(&mut self) -> Result<StepReport> {
        let solve = self.solve()?;
        self.apply_update(solve.update, solve.exact)
    }

    /// Adds a sparse update to the state at its sampled entries only and
    /// refreshes the tree once per distinct touched cell.
    pub fn apply_update(&mut self, update: SparseUpdate, exact: Vec<f64>) -> Result<StepReport> {
        if let Some(e) = update.entries.iter().find(|e| e.index >= self.state.len()) {
            return Err(Error::IndexOutOfRange {
                what: "update entry",
                index: e.index,
                limit: self.state.len(),
            });
        }
        self.iter += 1;
        {
            let values = self.state.values_mut();
            for e in &update.entries {
                values[e.index] += e.delta;
            }
        }
        let touched = update.touched_cells();
        for &c in &touched {
            if self.physics.primitives(&self.state.cell(c)).is_err() {
                let record = self.record(f64::NAN, update.norm_estimate, None);
                return Ok(StepReport {
                    record,
                    update,
                    exact,
                    touched_cells: touched.len(),
                    tree_writes: 0,
                    max_cell_writes: 0,
                    nonphysical: Some(c),
                });
            }
        }

        let mut tree_writes = 0;
        let mut max_cell_writes = 0;
        for &c in &touched {
            let (physics, state, mesh, settings, counters) =
                (&self.physics, &self.state, &self.mesh, &self.settings, &self.counters);
            let w = self.tree.update_for_cell(mesh, c, |i| {
                counters.classical(Category::Residual, (mesh.stencil().cells(i).count() * N_VAR) as u64);
                leaf_values(physics, state, mesh, settings, i)
            })?;
            tree_writes += w;
            max_cell_writes = max_cell_writes.max(w);
        }

        let res_norm = self.tree.node_query(NodePath::ROOT)?.sqrt();
        if self.settings.audit_every > 0 && self.iter.is_multiple_of(self.settings.audit_every) {
            self.audit()?;
        }
        let true_res = if self.settings.true_residual_every > 0 && self.iter.is_multiple_of(self.settings.true_residual_every) {
            Some(self.true_residual_norm()?)
        } else {
            None
        };
        let record = self.record(res_norm, update.norm_estimate, true_res);
        Ok(StepReport {
            record,
            update,
            exact,
            touched_cells: touched.len(),
            tree_writes,
            max_cell_writes,
            nonphysical: None,
        })
    }

    /// Parent-consistency audit plus a comparison of the root against a
    /// fresh evaluation of the stored residual.
    pub fn audit(&self) -> Result<()> {
        if !self.tree.audit() {
            return Err(Error::TreeInconsistent { relative_error: f64::NAN });
        }
        let fresh = full_leaves(&self.physics, &self.state, &self.mesh, &self.settings, self.exec)?;
        let want: f64 = fresh.iter().map(|v| v * v).sum();
        let got = self.tree.root();
        let rel = if want > 0.0 { (got - want).abs() / want } else { got.abs() };
        if rel > 1e-9 {
            return Err(Error::TreeInconsistent { relative_error: rel });
        }
        Ok(())
    }

    /// Iterates to a stopping rule, streaming each record to `sink`.
    pub fn run<W: Write>(mut self, mut sink: Option<&mut HistoryWriter<W>>) -> Result<RunOutcome> {
        let first = self.initial_record();
        if let Some(s) = sink.as_deref_mut() {
            s.push(&first)?;
        }
        let mut history = vec![first];
        let status = loop {
            let res = history.last().unwrap().res_norm;
            if self.res0 == 0.0 || res / self.res0 < self.settings.tol {
                break RunStatus::Converged;
            }
            if self.iter >= self.settings.max_iters {
                break RunStatus::MaxIters;
            }
            let report = self.step()?;
            if let Some(s) = sink.as_deref_mut() {
                s.push(&report.record)?;
            }
            history.push(report.record);
            if let Some(cell) = report.nonphysical {
                break RunStatus::NonPhysical { cell };
            }
            let res = report.record.res_norm;
            if !res.is_finite() || res > self.settings.divergence_factor * self.res0 {
                break RunStatus::Diverged;
            }
        };
        let counters = self.counters();
        Ok(RunOutcome {
            status,
            state: self.state,
            history,
            counters,
            initial_res_norm: self.res0,
        })
    }
}

/// Tree leaves of one cell: `R_i`, or `B_i·R_i` with `B_i` recomputed from
/// the local diagonal block.
fn leaf_values(physics: &Physics, state: &PhysicalState, mesh: &Mesh, settings: &SolverSettings, i: usize) -> Result<Vec4> {
    let r = physics.cell_residual(state, mesh, i)?;
    match settings.preconditioner {
        Preconditioning::None => Ok(r),
        Preconditioning::BlockJacobi => {
            let d = physics.diagonal_block(state, mesh, i, settings.cfl)?;
            let b = invert_block(&d).ok_or(Error::SingularBlock { cell: i })?;
            Ok(block_vec(&b, &r))
        }
    }
}

fn full_leaves(physics: &Physics, state: &PhysicalState, mesh: &Mesh, settings: &SolverSettings, exec: Exec) -> Result<Vec<f64>> {
    let cells = exec.try_map(mesh.n_cells(), |i| leaf_values(physics, state, mesh, settings, i))?;
    Ok(cells.into_iter().flatten().collect())
}

/// Key-value summary block of a finished run.
#[derive(Clone, Debug, Default)]
pub struct Summary {
    entries: Vec<(String, String)>,
}

impl Summary {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        let value = value.to_string();
        match self.entries.iter_mut().find(|(k, _)| k == key) {
            Some(e) => e.1 = value,
            None => self.entries.push((key.to_string(), value)),
        }
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.entries.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
    }

    pub fn from_outcome(outcome: &RunOutcome) -> Self {
        let mut s = Self::new();
        let last = outcome.final_record();
        s.set("status", outcome.status.name());
        if let RunStatus::NonPhysical { cell } = outcome.status {
            s.set("nonphysical_cell", cell);
        }
        s.set("iterations", outcome.iterations());
        s.set("initial_res_norm", format!("{:.6e}", outcome.initial_res_norm));
        s.set("final_res_norm", format!("{:.6e}", last.res_norm));
        s.set("final_res_drop", format!("{:.4}", last.res_drop));
        if let Some(t) = outcome.history.iter().rev().find_map(|r| r.true_res_norm) {
            s.set("last_true_res_norm", format!("{t:.6e}"));
        }
        for line in outcome.counters.report_lines() {
            if let Some((k, v)) = line.split_once('=') {
                s.set(k.trim(), v.trim());
            }
        }
        s
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for (k, v) in &self.entries {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
