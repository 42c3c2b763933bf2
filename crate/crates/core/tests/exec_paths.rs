mod common;

use qfvm_core::driver::{Simulation, SolverSettings};
use qfvm_core::fvm::{FlowConditions, Physics};
use qfvm_core::instrumentation::QueryCounters;
use qfvm_core::linalg::LinearOperator;
use qfvm_core::mesh::{ChannelSpec, Mesh};
use qfvm_core::par::{map_with_jobs, Exec};
use qfvm_core::precond::BlockInverseCache;
use qfvm_core::qls::{concentration_passes, QuantumNoiseConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn setup() -> (Physics, Mesh) {
    (
        Physics::new(FlowConditions::default()).unwrap(),
        Mesh::channel(ChannelSpec::new(32, 8, 0.1)).unwrap(),
    )
}

#[test]
fn kernels_agree_bit_for_bit() {
    let (ph, m) = setup();
    let s = common::random_state(&ph, m.n_cells(), &mut ChaCha8Rng::seed_from_u64(1));
    assert_eq!(
        ph.residual_with(&s, &m, Exec::Sequential).unwrap(),
        ph.residual_with(&s, &m, Exec::Parallel).unwrap()
    );
    let a = ph.assemble_jacobian_with(&s, &m, 10.0, Exec::Sequential).unwrap();
    let b = ph.assemble_jacobian_with(&s, &m, 10.0, Exec::Parallel).unwrap();
    assert_eq!(a.to_dense(), b.to_dense());
    let ca = BlockInverseCache::build_with(&a, &QueryCounters::new(), Exec::Sequential).unwrap();
    let cb = BlockInverseCache::build_with(&a, &QueryCounters::new(), Exec::Parallel).unwrap();
    for i in 0..m.n_cells() {
        assert_eq!(ca.block(i), cb.block(i));
    }
}

#[test]
fn sampling_trials_agree() {
    let cfg = QuantumNoiseConfig::with_epsilon(5e-2);
    assert_eq!(
        concentration_passes(128, &cfg, 40, Exec::Sequential).unwrap(),
        concentration_passes(128, &cfg, 40, Exec::Parallel).unwrap()
    );
}

#[test]
fn noisy_runs_agree() {
    let (ph, m) = setup();
    let st = SolverSettings {
        max_iters: 25,
        ..SolverSettings::default()
    };
    let noise = QuantumNoiseConfig::with_epsilon(1e-2);
    let run = |exec| {
        Simulation::from_freestream(m.clone(), ph.clone(), st, noise)
            .unwrap()
            .with_exec(exec)
            .run::<std::io::Sink>(None)
            .unwrap()
    };
    let a = run(Exec::Sequential);
    let b = run(Exec::Parallel);
    assert_eq!(a.state.values(), b.state.values());
    let hist = |o: &qfvm_core::RunOutcome| o.history.iter().map(|r| r.res_norm).collect::<Vec<_>>();
    assert_eq!(hist(&a), hist(&b));
}

#[test]
fn job_pools_preserve_order() {
    let f = |i: usize| (i as f64).sqrt().sin();
    assert_eq!(map_with_jobs(1, 100, f), map_with_jobs(3, 100, f));
}
