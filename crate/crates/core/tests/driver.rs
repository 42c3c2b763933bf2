mod common;

use qfvm_core::driver::{HistoryWriter, Preconditioning, RunStatus, Simulation, SolverSettings};
use qfvm_core::fvm::{FlowConditions, Physics};
use qfvm_core::instrumentation::Category;
use qfvm_core::linalg::{norm2, N_VAR};
use qfvm_core::mesh::{ChannelSpec, Mesh, STENCIL_SIZE};
use qfvm_core::qls::QuantumNoiseConfig;

fn physics() -> Physics {
    Physics::new(FlowConditions::default()).unwrap()
}

fn small_mesh() -> Mesh {
    Mesh::channel(ChannelSpec::new(16, 4, 0.1)).unwrap()
}

fn settings() -> SolverSettings {
    SolverSettings {
        cfl: 20.0,
        ..SolverSettings::default()
    }
}

#[test]
fn bypass_run_reproduces_the_reference_loop() {
    let (ph, m, st) = (physics(), small_mesh(), settings());
    let sim = Simulation::from_freestream(m.clone(), ph.clone(), st, QuantumNoiseConfig::noiseless()).unwrap();
    let out = sim.run::<std::io::Sink>(None).unwrap();
    assert_eq!(out.status, RunStatus::Converged);
    let want = common::reference_history(&ph, &m, st.cfl, st.tol, st.max_iters, st.linear_tol);
    assert_eq!(out.history.len(), want.len());
    for (r, w) in out.history.iter().zip(&want) {
        assert!((r.res_norm - w).abs() <= 1e-10 * want[0], "iter {}: {} vs {w}", r.iter, r.res_norm);
    }
}

#[test]
fn noisy_step_stays_within_the_error_bound() {
    let eps = 1e-4;
    let mut sim = Simulation::from_freestream(small_mesh(), physics(), settings(), QuantumNoiseConfig::with_epsilon(eps)).unwrap();
    let rep = sim.step().unwrap();
    let norm = norm2(&rep.exact);
    let dense = rep.update.to_dense(rep.exact.len());
    let err = dense.iter().zip(&rep.exact).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
    assert!(err <= 2.0 * eps * norm, "{err:e} vs {:e}", 2.0 * eps * norm);
    assert!(rep.update.shots > 0);
}

#[test]
fn step_costs_follow_the_touched_cells() {
    let mut sim = Simulation::from_freestream(small_mesh(), physics(), settings(), QuantumNoiseConfig::with_epsilon(1e-1)).unwrap();
    let before = sim.counters();
    let rep = sim.step().unwrap();
    let after = sim.counters();
    let d = sim.tree().depth();
    assert_eq!(rep.touched_cells, rep.update.touched_cells().len());
    assert!(rep.tree_writes <= rep.touched_cells * STENCIL_SIZE * N_VAR * (d + 1));
    assert!(rep.max_cell_writes <= STENCIL_SIZE * N_VAR * (d + 1));
    let reads = after.classical_of(Category::Residual) - before.classical_of(Category::Residual);
    assert!(reads > 0);
    assert!(reads <= (rep.touched_cells * STENCIL_SIZE * STENCIL_SIZE * N_VAR) as u64);
    assert_eq!(after.quantum_of(Category::Sampling) - before.quantum_of(Category::Sampling), rep.update.shots);
    assert!(sim.tree().audit());
}

#[test]
fn larger_epsilon_does_not_converge_faster() {
    let mut iters = Vec::new();
    for noise in [
        QuantumNoiseConfig::noiseless(),
        QuantumNoiseConfig::with_epsilon(1e-3),
        QuantumNoiseConfig::with_epsilon(1e-1),
        QuantumNoiseConfig::with_epsilon(5e-1),
    ] {
        let out = Simulation::from_freestream(small_mesh(), physics(), settings(), noise).unwrap().run::<std::io::Sink>(None).unwrap();
        println!("epsilon {:?}: {} after {} iterations", (!noise.bypass).then_some(noise.epsilon), out.status.name(), out.iterations());
        iters.push(out.iterations());
    }
    assert!(iters.windows(2).all(|w| w[1] + 5 >= w[0]), "{iters:?}");
}

#[test]
fn preconditioned_run_converges_on_the_true_residual() {
    let st = SolverSettings {
        preconditioner: Preconditioning::BlockJacobi,
        ..settings()
    };
    let (ph, m) = (physics(), small_mesh());
    let sim = Simulation::from_freestream(m.clone(), ph.clone(), st, QuantumNoiseConfig::noiseless()).unwrap();
    let out = sim.run::<std::io::Sink>(None).unwrap();
    assert_eq!(out.status, RunStatus::Converged);
    let r0 = norm2(&ph.residual(&ph.freestream_state(m.n_cells()), &m).unwrap());
    let rf = norm2(&ph.residual(&out.state, &m).unwrap());
    assert!(rf / r0 < 1e-4, "{rf:e} / {r0:e}");
}

#[test]
fn history_is_byte_identical_without_wall_time() {
    let run = || {
        let mut buf = Vec::new();
        let noise = QuantumNoiseConfig {
            seed: 3,
            ..QuantumNoiseConfig::with_epsilon(1e-2)
        };
        let st = SolverSettings {
            max_iters: 40,
            ..settings()
        };
        let sim = Simulation::from_freestream(small_mesh(), physics(), st, noise).unwrap();
        let mut w = HistoryWriter::new(&mut buf, false).unwrap();
        sim.run(Some(&mut w)).unwrap();
        buf
    };
    let a = run();
    assert_eq!(a, run());
    assert_eq!(String::from_utf8(a).unwrap().lines().count(), 42);
}

#[test]
fn max_iters_is_reported() {
    let st = SolverSettings {
        max_iters: 3,
        ..settings()
    };
    let out = Simulation::from_freestream(small_mesh(), physics(), st, QuantumNoiseConfig::noiseless())
        .unwrap()
        .run::<std::io::Sink>(None)
        .unwrap();
    assert_eq!(out.status, RunStatus::MaxIters);
    assert_eq!(out.iterations(), 3);
}
