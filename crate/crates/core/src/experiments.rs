//! Experiment drivers behind the command-line tool: single runs, ε sweeps,
//! problem-size scaling of the injected error, and baseline comparisons.
//! Every experiment returns its data and can optionally write CSV files.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use crate::config::Config;
use crate::driver::{HistoryWriter, RunOutcome, RunStatus, Simulation, SolverSettings, Summary};
use crate::error::{Error, Result};
use crate::fvm::{PhysicalState, Physics};
use crate::linalg::{norm2, norm_inf, N_VAR};
use crate::mesh::{ChannelSpec, Mesh};
use crate::par::map_with_jobs;
use crate::precond::{condition_number, precondition_matrix, BlockInverseCache, KappaMethod};
use crate::qls::QuantumNoiseConfig;

pub fn build_mesh(spec: &ChannelSpec) -> Result<Mesh> {
    Mesh::channel(*spec)
}

/// Runs the configured case to a stopping rule. With `out`, writes
/// `history.csv`, `summary.txt` and the effective `config.txt` there.
pub fn run_single(cfg: &Config, out: Option<&Path>) -> Result<(RunOutcome, Summary)> {
    let mesh = build_mesh(&cfg.mesh)?;
    let physics = Physics::new(cfg.flow)?;
    let sim = Simulation::from_freestream(mesh.clone(), physics.clone(), cfg.solver, cfg.quantum)?;
    let outcome = match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            fs::write(dir.join("config.txt"), cfg.to_text())?;
            let file = BufWriter::new(File::create(dir.join("history.csv"))?);
            let mut w = HistoryWriter::new(file, cfg.wall_time)?;
            sim.run(Some(&mut w))?
        }
        None => sim.run::<std::io::Sink>(None)?,
    };
    let mut summary = Summary::from_outcome(&outcome);
    summary.set("quantum.bypass", cfg.quantum.bypass);
    summary.set("quantum.epsilon", cfg.quantum.epsilon);
    summary.set("quantum.shots_constant", cfg.quantum.shots_constant);
    summary.set("solver.preconditioner", cfg.solver.preconditioner.name());
    if cfg.report_kappa && !matches!(outcome.status, RunStatus::NonPhysical { .. } | RunStatus::Diverged) {
        let (ka, kp) = kappas(&physics, &outcome.state, &mesh, cfg.solver.cfl);
        summary.set("kappa_A", ka);
        summary.set("kappa_A_preconditioned", kp);
    }
    if let Some(dir) = out {
        fs::write(dir.join("summary.txt"), summary.render())?;
    }
    Ok((outcome, summary))
}

/// `κ(A)` and `κ(P·A)` at `state`, rendered for the summary.
pub fn kappas(physics: &Physics, state: &PhysicalState, mesh: &Mesh, cfl: f64) -> (String, String) {
    let render = |r: Result<f64>| match r {
        Ok(k) => format!("{k:.6e}"),
        Err(e) => format!("unavailable ({e})"),
    };
    let a = match physics.assemble_jacobian(state, mesh, cfl) {
        Ok(a) => a,
        Err(e) => return (render(Err(e)), String::from("unavailable")),
    };
    let ka = condition_number(&a, KappaMethod::Auto).map(|c| c.kappa);
    let counters = crate::instrumentation::QueryCounters::new();
    let kp = BlockInverseCache::build(&a, &counters)
        .and_then(|c| precondition_matrix(&a, &c))
        .and_then(|at| condition_number(&at, KappaMethod::Auto).map(|c| c.kappa));
    (render(ka), render(kp))
}

/// One point of an ε sweep. `epsilon` is `None` for the noise-free baseline.
#[derive(Clone, Debug, PartialEq)]
pub struct SweepPoint {
    pub epsilon: Option<f64>,
    pub status: String,
    pub iterations: usize,
    pub final_res_drop: f64,
    pub converged: bool,
    pub error: Option<String>,
}

impl SweepPoint {
    fn from_result(epsilon: Option<f64>, r: Result<RunOutcome>) -> Self {
        match r {
            Ok(o) => Self {
                epsilon,
                status: o.status.name().to_string(),
                iterations: o.iterations(),
                final_res_drop: o.final_record().res_drop,
                converged: o.converged(),
                error: None,
            },
            Err(e) => Self {
                epsilon,
                status: "error".into(),
                iterations: 0,
                final_res_drop: f64::NAN,
                converged: false,
                error: Some(e.to_string()),
            },
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepReport {
    pub baseline: SweepPoint,
    /// In the order given.
    pub points: Vec<SweepPoint>,
    /// Largest converging ε on the grid.
    pub eps1: Option<f64>,
    /// Largest ε converging within 5% of the baseline iteration count.
    pub eps2: Option<f64>,
    pub warnings: Vec<String>,
}

/// Relative iteration-count slack for the stable-error threshold.
pub const STABLE_ITERATION_SLACK: f64 = 0.05;

impl SweepReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("epsilon,status,iters_to_converge,final_res_drop\n");
        for p in std::iter::once(&self.baseline).chain(&self.points) {
            let eps = p.epsilon.map_or_else(|| "bypass".to_string(), |e| format!("{e:e}"));
            let iters = if p.converged { p.iterations.to_string() } else { String::new() };
            let _ = writeln!(s, "{eps},{},{iters},{:.6}", p.status, p.final_res_drop);
        }
        s
    }

    pub fn thresholds_text(&self) -> String {
        let f = |e: Option<f64>| e.map_or_else(|| "none".to_string(), |v| format!("{v:e}"));
        let mut s = format!("eps1 = {}\neps2 = {}\n", f(self.eps1), f(self.eps2));
        for w in &self.warnings {
            let _ = writeln!(s, "warning = {w}");
        }
        s
    }
}

fn run_quiet(cfg: &Config, noise: QuantumNoiseConfig, out: Option<&Path>) -> Result<RunOutcome> {
    let mesh = build_mesh(&cfg.mesh)?;
    let physics = Physics::new(cfg.flow)?;
    let sim = Simulation::from_freestream(mesh, physics, cfg.solver, noise)?;
    match out {
        Some(dir) => {
            fs::create_dir_all(dir)?;
            let file = BufWriter::new(File::create(dir.join("history.csv"))?);
            let mut w = HistoryWriter::new(file, cfg.wall_time)?;
            sim.run(Some(&mut w))
        }
        None => sim.run::<std::io::Sink>(None),
    }
}

/// Baseline plus one run per ε, at most `jobs` at a time. Failures of
/// individual points are recorded, not propagated.
pub fn sweep(cfg: &Config, epsilons: &[f64], jobs: usize, out: Option<&Path>) -> Result<SweepReport> {
    for &e in epsilons {
        QuantumNoiseConfig { epsilon: e, bypass: false, ..cfg.quantum }.validate()?;
    }
    let n = epsilons.len() + 1;
    let results = map_with_jobs(jobs.max(1), n, |k| {
        let (eps, noise) = if k == 0 {
            (None, QuantumNoiseConfig { bypass: true, ..cfg.quantum })
        } else {
            let e = epsilons[k - 1];
            (Some(e), QuantumNoiseConfig { epsilon: e, bypass: false, ..cfg.quantum })
        };
        let dir = out.map(|d| match eps {
            None => d.join("baseline"),
            Some(e) => d.join(format!("eps_{e:e}")),
        });
        SweepPoint::from_result(eps, run_quiet(cfg, noise, dir.as_deref()))
    });
    let mut it = results.into_iter();
    let baseline = it.next().expect("baseline point");
    let points: Vec<SweepPoint> = it.collect();

    let mut warnings = Vec::new();
    if epsilons.len() < 2 {
        warnings.push(format!("only {} epsilon value(s); thresholds are degenerate", epsilons.len()));
    }
    if !baseline.converged {
        warnings.push(format!("baseline did not converge ({})", baseline.status));
    }
    let eps1 = points
        .iter()
        .filter(|p| p.converged)
        .filter_map(|p| p.epsilon)
        .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))));
    let eps2 = if baseline.converged {
        let limit = baseline.iterations as f64 * (1.0 + STABLE_ITERATION_SLACK);
        points
            .iter()
            .filter(|p| p.converged && p.iterations as f64 <= limit)
            .filter_map(|p| p.epsilon)
            .fold(None, |m: Option<f64>, e| Some(m.map_or(e, |m| m.max(e))))
    } else {
        None
    };
    if points.len() >= 2 && points.iter().all(|p| p.converged) {
        warnings.push("every epsilon converged; eps1 is only a lower bound".into());
    }
    if !points.is_empty() && points.iter().all(|p| !p.converged) {
        warnings.push("no epsilon converged".into());
    }
    let report = SweepReport {
        baseline,
        points,
        eps1,
        eps2,
        warnings,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("sweep.csv"), report.to_csv())?;
        fs::write(dir.join("thresholds.txt"), report.thresholds_text())?;
    }
    Ok(report)
}

/// Smooth field vanishing on the channel boundary, used to perturb a
/// converged state.
pub fn perturbation_shape(mesh: &Mesh, i: usize) -> f64 {
    let spec = mesh.spec();
    let [x, y] = mesh.centroid(i);
    let pi = std::f64::consts::PI;
    (pi * x / spec.length_x).sin() * (pi * y / spec.length_y).sin()
}

/// `U + δ·f(x, y)·U∞` cell by cell.
pub fn perturbed_state(state: &PhysicalState, mesh: &Mesh, physics: &Physics, delta: f64) -> PhysicalState {
    let q_inf = physics.freestream();
    let mut out = state.clone();
    for i in 0..mesh.n_cells() {
        let f = delta * perturbation_shape(mesh, i);
        let mut q = state.cell(i);
        for k in 0..N_VAR {
            q[k] += f * q_inf[k];
        }
        out.set_cell(i, q);
    }
    out
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScalingRow {
    pub nx: usize,
    pub ny: usize,
    pub n_cells: usize,
    /// `max_i |ΔŨ_i − ΔU_i|`
    pub max_abs_error: f64,
    /// `‖ΔU‖₂`
    pub update_norm: f64,
    /// `max_i |u_i|` of the normalized exact update.
    pub u_max: f64,
    pub shots: u64,
    pub touched_cells: usize,
    pub tree_writes: usize,
    pub baseline_iterations: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalingReport {
    pub epsilon: Option<f64>,
    pub rows: Vec<ScalingRow>,
    /// `max / min` of `max_abs_error` over the sizes.
    pub error_spread: f64,
    pub within_band: bool,
    /// `(‖ΔU_{k}‖ / ‖ΔU_{k-1}‖) / √(N_k / N_{k-1})` for consecutive sizes.
    pub norm_ratio_vs_sqrt: Vec<f64>,
    pub norm_scaling_ok: bool,
}

/// Allowed spread of the injected error across sizes.
pub const ERROR_BAND: f64 = 3.0;
/// Allowed relative deviation of `‖ΔU‖` from `√k` growth.
pub const NORM_SCALING_SLACK: f64 = 0.3;

impl ScalingReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("N,max_abs_error,update_norm,u_max,nx,ny,shots,touched_cells,tree_writes\n");
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{},{:.9e},{:.9e},{:.9e},{},{},{},{},{}",
                r.n_cells, r.max_abs_error, r.update_norm, r.u_max, r.nx, r.ny, r.shots, r.touched_cells, r.tree_writes
            );
        }
        s
    }
}

/// Converged noise-free state of the configured case on an `nx × ny` mesh,
/// reached at the baseline CFL of the scaling settings.
pub fn converged_baseline(cfg: &Config, nx: usize, ny: usize) -> Result<(Mesh, Physics, RunOutcome)> {
    let spec = ChannelSpec { nx, ny, ..cfg.mesh };
    let mesh = build_mesh(&spec)?;
    let physics = Physics::new(cfg.flow)?;
    let settings = SolverSettings {
        cfl: cfg.scaling.baseline_cfl,
        ..cfg.solver
    };
    let sim = Simulation::from_freestream(mesh.clone(), physics.clone(), settings, QuantumNoiseConfig::noiseless())?;
    let outcome = sim.run::<std::io::Sink>(None)?;
    if !outcome.converged() {
        return Err(Error::InvalidArgument(format!(
            "baseline on {nx}x{ny} did not converge ({})",
            outcome.status.name()
        )));
    }
    Ok((mesh, physics, outcome))
}

/// One noisy step from the perturbed converged baseline of each size.
/// `epsilon = None` bypasses the noise.
pub fn scaling(cfg: &Config, sizes: &[(usize, usize)], epsilon: Option<f64>, jobs: usize, out: Option<&Path>) -> Result<ScalingReport> {
    if sizes.len() < 2 {
        return Err(Error::InvalidArgument("scaling needs at least two sizes".into()));
    }
    if sizes.windows(2).any(|w| w[1].0 * w[1].1 <= w[0].0 * w[0].1) {
        return Err(Error::InvalidArgument("sizes must be increasing".into()));
    }
    let noise = match epsilon {
        Some(e) => QuantumNoiseConfig { epsilon: e, bypass: false, ..cfg.quantum },
        None => QuantumNoiseConfig { bypass: true, ..cfg.quantum },
    };
    noise.validate()?;
    let rows = map_with_jobs(jobs.max(1), sizes.len(), |k| -> Result<ScalingRow> {
        let (nx, ny) = sizes[k];
        let (mesh, physics, base) = converged_baseline(cfg, nx, ny)?;
        let start = perturbed_state(&base.state, &mesh, &physics, cfg.scaling.perturbation);
        let settings = SolverSettings {
            cfl: cfg.scaling.cfl,
            ..cfg.solver
        };
        let mut sim = Simulation::new(mesh, physics, start, settings, noise)?;
        let rep = sim.step()?;
        let approx = rep.update.to_dense(rep.exact.len());
        let max_abs_error = approx.iter().zip(&rep.exact).fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
        let update_norm = norm2(&rep.exact);
        Ok(ScalingRow {
            nx,
            ny,
            n_cells: nx * ny,
            max_abs_error,
            update_norm,
            u_max: if update_norm > 0.0 { norm_inf(&rep.exact) / update_norm } else { 0.0 },
            shots: rep.update.shots,
            touched_cells: rep.touched_cells,
            tree_writes: rep.tree_writes,
            baseline_iterations: base.iterations(),
        })
    })
    .into_iter()
    .collect::<Result<Vec<_>>>()?;

    let (lo, hi) = rows
        .iter()
        .fold((f64::INFINITY, 0.0f64), |(lo, hi), r| (lo.min(r.max_abs_error), hi.max(r.max_abs_error)));
    let error_spread = if hi == 0.0 { 1.0 } else { hi / lo };
    let norm_ratio_vs_sqrt: Vec<f64> = rows
        .windows(2)
        .map(|w| (w[1].update_norm / w[0].update_norm) / (w[1].n_cells as f64 / w[0].n_cells as f64).sqrt())
        .collect();
    let report = ScalingReport {
        epsilon,
        within_band: error_spread <= ERROR_BAND,
        norm_scaling_ok: norm_ratio_vs_sqrt.iter().all(|r| (r - 1.0).abs() <= NORM_SCALING_SLACK),
        rows,
        error_spread,
        norm_ratio_vs_sqrt,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("scaling.csv"), report.to_csv())?;
    }
    Ok(report)
}

#[derive(Clone, Debug)]
pub struct CompareReport {
    pub baseline: RunOutcome,
    pub noisy: RunOutcome,
    /// `‖U_q − U_c‖∞`
    pub linf_difference: f64,
    /// `‖U_c‖∞`
    pub baseline_linf: f64,
    pub noisy_diverged: bool,
}

impl CompareReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("iter,baseline_res_norm,noisy_res_norm,baseline_res_drop,noisy_res_drop\n");
        let n = self.baseline.history.len().max(self.noisy.history.len());
        let cell = |h: &[crate::driver::ConvergenceRecord], i: usize, drop: bool| {
            h.get(i).map_or_else(String::new, |r| format!("{:.17e}", if drop { r.res_drop } else { r.res_norm }))
        };
        for i in 0..n {
            let _ = writeln!(
                s,
                "{i},{},{},{},{}",
                cell(&self.baseline.history, i, false),
                cell(&self.noisy.history, i, false),
                cell(&self.baseline.history, i, true),
                cell(&self.noisy.history, i, true)
            );
        }
        s
    }

    pub fn summary(&self) -> Summary {
        let mut s = Summary::new();
        s.set("baseline_status", self.baseline.status.name());
        s.set("baseline_iterations", self.baseline.iterations());
        s.set("noisy_status", self.noisy.status.name());
        s.set("noisy_iterations", self.noisy.iterations());
        s.set("noisy_diverged", self.noisy_diverged);
        s.set("linf_difference", format!("{:.6e}", self.linf_difference));
        s.set("baseline_linf", format!("{:.6e}", self.baseline_linf));
        s.set(
            "relative_linf_difference",
            format!("{:.6e}", self.linf_difference / self.baseline_linf),
        );
        s
    }
}

/// Noise-free baseline against the configured noisy run.
pub fn compare(cfg: &Config, jobs: usize, out: Option<&Path>) -> Result<CompareReport> {
    let noises = [QuantumNoiseConfig { bypass: true, ..cfg.quantum }, cfg.quantum];
    let mut runs = map_with_jobs(jobs.max(1), 2, |k| {
        let dir = out.map(|d| d.join(if k == 0 { "baseline" } else { "noisy" }));
        run_quiet(cfg, noises[k], dir.as_deref())
    })
    .into_iter();
    let baseline = runs.next().unwrap()?;
    let noisy = runs.next().unwrap()?;
    let linf_difference = baseline
        .state
        .values()
        .iter()
        .zip(noisy.state.values())
        .fold(0.0f64, |m, (a, b)| m.max((a - b).abs()));
    let report = CompareReport {
        baseline_linf: norm_inf(baseline.state.values()),
        noisy_diverged: matches!(noisy.status, RunStatus::Diverged | RunStatus::NonPhysical { .. }),
        linf_difference,
        baseline,
        noisy,
    };
    if let Some(dir) = out {
        fs::create_dir_all(dir)?;
        fs::write(dir.join("compare.csv"), report.to_csv())?;
        fs::write(dir.join("summary.txt"), report.summary().render())?;
    }
    Ok(report)
}
