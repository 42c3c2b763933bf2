//! Amplitude-level emulation of preparing the normalized residual state
//! from the sum tree by recursive conditional rotations.
//!
//! At a node `p` with `S_R(p) > 0` the rotation angle is
//! `θ = arccos √(S_R(p0)/S_R(p))`; the left child receives `cos θ` and the
//! right child `sin θ` of the parent's amplitude. After `d` rounds the leaf
//! amplitudes equal `|R_j|/‖R‖`, and the signed leaves supply the phase so
//! that the final state is `-R/‖R‖`.

use crate::error::{Error, Result};
use crate::sumtree::{NodePath, SumTree};

#[derive(Clone, Debug, PartialEq)]
pub struct PreparedState {
    /// One amplitude per logical leaf.
    pub amplitudes: Vec<f64>,
    /// Conditional-rotation rounds performed (the tree depth).
    pub rounds: usize,
}

/// Quantum queries charged per rotation round: the node and its left child.
pub const QUERIES_PER_ROUND: u64 = 2;

pub fn prepared_amplitudes(tree: &SumTree) -> Result<PreparedState> {
    if tree.root() <= 0.0 {
        return Err(Error::ZeroResidual);
    }
    let mut level = vec![1.0f64];
    for depth in 0..tree.depth() {
        tree.count_queries(QUERIES_PER_ROUND);
        let mut next = Vec::with_capacity(level.len() * 2);
        for (bits, &amp) in level.iter().enumerate() {
            let p = NodePath::new(bits, depth);
            let total = tree.sum_at(p);
            if amp == 0.0 || total == 0.0 {
                next.extend([0.0, 0.0]);
                continue;
            }
            let left = tree.sum_at(p.child(false));
            let right = tree.sum_at(p.child(true));
            let (l, r) = if left == 0.0 {
                (0.0, 1.0)
            } else if right == 0.0 {
                (1.0, 0.0)
            } else {
                let theta = (left / total).sqrt().acos();
                (theta.cos(), theta.sin())
            };
            next.extend([amp * l, amp * r]);
        }
        level = next;
    }
    // phase from the signed leaves, in one more query
    tree.count_queries(1);
    level.truncate(tree.len());
    for (j, a) in level.iter_mut().enumerate() {
        let s = tree.leaf_at(j);
        if s > 0.0 {
            *a = -*a;
        } else if s == 0.0 {
            *a = 0.0;
        }
    }
    Ok(PreparedState {
        amplitudes: level,
        rounds: tree.depth(),
    })
}

/// `c_b = √S_R(root) = ‖R‖₂`, from a single root query.
pub fn prep_norm(tree: &SumTree) -> f64 {
    tree.node_query(NodePath::ROOT)
        .expect("root path is always valid")
        .sqrt()
}
