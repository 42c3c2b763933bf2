//! Independent oracles shared by the integration tests and the acceptance
//! target.
#![allow(dead_code)]

use qfvm_core::fvm::{PhysicalState, Physics};
use qfvm_core::instrumentation::QueryCounters;
use qfvm_core::linalg::{block_max_abs, norm2, Vec4, N_VAR};
use qfvm_core::mesh::{BoundaryTag, Face, Mesh, Related};
use qfvm_core::precond::BlockInverseCache;
use qfvm_core::solver::bicgstab;
use rand::Rng;

pub const GOLDEN: &str = include_str!("../../../../configs/golden.cfg");

/// Realizable state with every cell drawn independently.
pub fn random_state(ph: &Physics, n_cells: usize, rng: &mut impl Rng) -> PhysicalState {
    let mut values = Vec::with_capacity(n_cells * N_VAR);
    for _ in 0..n_cells {
        let rho = rng.random_range(0.7..1.3);
        let u = rng.random_range(0.2..0.8);
        let v = rng.random_range(-0.2..0.2);
        let p = rng.random_range(0.5..0.9);
        values.extend(ph.conserved(rho, u, v, p));
    }
    PhysicalState::from_values(values).unwrap()
}

/// Sum of squares with Kahan compensation.
pub fn kahan_sum_sq(v: &[f64]) -> f64 {
    let (mut s, mut c) = (0.0f64, 0.0f64);
    for x in v {
        let y = x * x - c;
        let t = s + y;
        c = (t - s) - y;
        s = t;
    }
    s
}

fn prim(gamma: f64, q: &Vec4) -> (f64, f64, f64, f64, f64) {
    let rho = q[0];
    let u = q[1] / rho;
    let v = q[2] / rho;
    let p = (gamma - 1.0) * (q[3] - 0.5 * rho * (u * u + v * v));
    let c = (gamma * p / rho).sqrt();
    (rho, u, v, p, c)
}

/// Rusanov flux written out from the scalar formulas.
pub fn rusanov_scalar(gamma: f64, ql: &Vec4, qr: &Vec4, n: [f64; 2]) -> Vec4 {
    let len = n[0].hypot(n[1]);
    let flux = |q: &Vec4| {
        let (rho, u, v, p, c) = prim(gamma, q);
        let vn = u * n[0] + v * n[1];
        let f = [rho * vn, rho * u * vn + p * n[0], rho * v * vn + p * n[1], (q[3] + p) * vn];
        (f, vn.abs() + c * len)
    };
    let (fl, sl) = flux(ql);
    let (fr, sr) = flux(qr);
    let lam = sl.max(sr);
    std::array::from_fn(|k| 0.5 * (fl[k] + fr[k]) - 0.5 * lam * (qr[k] - ql[k]))
}

/// Residual by a loop over faces: each interior face flux is evaluated once
/// from its east/north owner and scattered with opposite signs.
pub fn face_loop_residual(ph: &Physics, mesh: &Mesh, state: &PhysicalState) -> Vec<f64> {
    let g = ph.gamma();
    let mut r = vec![0.0; state.len()];
    let mut add = |i: usize, f: &Vec4, s: f64| {
        for k in 0..N_VAR {
            r[i * N_VAR + k] += s * f[k];
        }
    };
    for i in 0..mesh.n_cells() {
        let q = state.cell(i);
        for face in Face::ALL {
            let n = mesh.normal(i, face);
            match mesh.across(i, face) {
                Related::Cell(j) => {
                    if matches!(face, Face::East | Face::North) {
                        let f = rusanov_scalar(g, &q, &state.cell(j), n);
                        add(i, &f, 1.0);
                        add(j, &f, -1.0);
                    }
                }
                Related::Ghost { tag, .. } => {
                    let p = ph.primitives(&q).unwrap();
                    let gq = ph.ghost(&q, &p, tag, n);
                    add(i, &rusanov_scalar(g, &q, &gq, n), 1.0);
                }
            }
        }
    }
    r
}

/// Largest relative deviation between the analytic `∂R/∂U` blocks and
/// central differences of the cell residuals, `h = 1e-7·‖U_j‖`.
pub fn jacobian_fd_error(ph: &Physics, mesh: &Mesh, state: &PhysicalState, cfl: f64) -> f64 {
    let a = ph.assemble_jacobian(state, mesh, cfl).unwrap();
    let mut worst = 0.0f64;
    for j in 0..mesh.n_cells() {
        let uj = state.cell(j);
        let h = 1e-7 * uj.iter().map(|x| x * x).sum::<f64>().sqrt();
        let rows: Vec<usize> = mesh.stencil().cells(j).collect();
        let mut fd = vec![[[0.0; N_VAR]; N_VAR]; rows.len()];
        for kk in 0..N_VAR {
            let mut plus = state.clone();
            let mut minus = state.clone();
            plus.values_mut()[j * N_VAR + kk] += h;
            minus.values_mut()[j * N_VAR + kk] -= h;
            for (m, &i) in rows.iter().enumerate() {
                let rp = ph.cell_residual(&plus, mesh, i).unwrap();
                let rm = ph.cell_residual(&minus, mesh, i).unwrap();
                for k in 0..N_VAR {
                    fd[m][k][kk] = (rp[k] - rm[k]) / (2.0 * h);
                }
            }
        }
        for (m, &i) in rows.iter().enumerate() {
            let mut analytic = *a.block(i, j).expect("stencil block present");
            if i == j {
                let shift = mesh.volume(i) / a.time_step(i);
                for k in 0..N_VAR {
                    analytic[k][k] -= shift;
                }
            }
            let scale = block_max_abs(&analytic).max(block_max_abs(&fd[m])).max(1e-300);
            let mut diff = 0.0f64;
            for k in 0..N_VAR {
                for kk in 0..N_VAR {
                    diff = diff.max((analytic[k][kk] - fd[m][k][kk]).abs());
                }
            }
            worst = worst.max(diff / scale);
        }
    }
    worst
}

/// Plain implicit loop without tree or state preparation: `A ΔU = −R` by
/// BiCGStab, residual norms straight from the residual vector.
pub fn reference_history(ph: &Physics, mesh: &Mesh, cfl: f64, tol: f64, max_iters: usize, linear_tol: f64) -> Vec<f64> {
    let mut u = ph.freestream_state(mesh.n_cells());
    let mut r = ph.residual(&u, mesh).unwrap();
    let r0 = norm2(&r);
    let mut hist = vec![r0];
    while r0 > 0.0 && hist.last().unwrap() / r0 >= tol && hist.len() <= max_iters {
        let a = ph.assemble_jacobian(&u, mesh, cfl).unwrap();
        let cache = BlockInverseCache::build(&a, &QueryCounters::new()).unwrap();
        let rhs: Vec<f64> = r.iter().map(|x| -x).collect();
        let (dx, _) = bicgstab(&a, &rhs, linear_tol, Some(&cache)).unwrap();
        for (x, d) in u.values_mut().iter_mut().zip(&dx) {
            *x += d;
        }
        r = ph.residual(&u, mesh).unwrap();
        hist.push(norm2(&r));
    }
    hist
}

/// Boundary tags present on the mesh, with counts.
pub fn tag_counts(mesh: &Mesh) -> Vec<(BoundaryTag, usize)> {
    let mut out: Vec<(BoundaryTag, usize)> = Vec::new();
    for i in 0..mesh.n_cells() {
        for f in Face::ALL {
            let t = mesh.boundary_tag(i, f);
            match out.iter_mut().find(|(k, _)| *k == t) {
                Some(e) => e.1 += 1,
                None => out.push((t, 1)),
            }
        }
    }
    out
}
