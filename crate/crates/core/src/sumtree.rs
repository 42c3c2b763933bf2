//! Residual sum tree.
//!
//! A complete binary tree over the `D` residual entries, padded with zeros
//! to `2^d` leaves. Leaves keep the *signed* residual value; every internal
//! node keeps the sum of squares of the leaves below it, so the root holds
//! `‖R‖²`. Nodes live in one array in heap order: the node reached from the
//! root by the branch string `p` sits at `2^|p| - 1 + int(p)`.

use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::instrumentation::{Category, CounterSnapshot, QueryCounters};
use crate::linalg::{Vec4, N_VAR};
use crate::mesh::Mesh;

/// Branch string from the root; bit `len-1-t` of `bits` is the branch taken
/// at depth `t` (0 = left, 1 = right).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct NodePath {
    bits: usize,
    len: usize,
}

impl NodePath {
    pub const ROOT: NodePath = NodePath { bits: 0, len: 0 };

    pub fn new(bits: usize, len: usize) -> Self {
        Self { bits, len }
    }

    /// Path to leaf `j` in a tree of depth `depth`.
    pub fn leaf(j: usize, depth: usize) -> Self {
        Self { bits: j, len: depth }
    }

    pub fn child(self, right: bool) -> Self {
        Self {
            bits: (self.bits << 1) | right as usize,
            len: self.len + 1,
        }
    }

    pub fn len(self) -> usize {
        self.len
    }

    pub fn is_root(self) -> bool {
        self.len == 0
    }

    /// Linear address `2^|p| - 1 + int(p)`.
    pub fn address(self) -> usize {
        (1usize << self.len) - 1 + self.bits
    }
}

#[derive(Debug, Clone)]
pub struct SumTree {
    len: usize,
    depth: usize,
    nodes: Vec<f64>,
    counters: QueryCounters,
}

impl SumTree {
    /// Builds the tree bottom-up. Every node is written once.
    pub fn new(residual: &[f64]) -> Result<Self> {
        if residual.is_empty() {
            return Err(Error::EmptyVector);
        }
        let len = residual.len();
        let width = len.next_power_of_two();
        let depth = width.trailing_zeros() as usize;
        let mut nodes = vec![0.0; 2 * width - 1];
        nodes[width - 1..width - 1 + len].copy_from_slice(residual);
        let mut t = Self {
            len,
            depth,
            nodes,
            counters: QueryCounters::new(),
        };
        for a in (0..width - 1).rev() {
            t.nodes[a] = t.node_value(2 * a + 1) + t.node_value(2 * a + 2);
        }
        t.counters.classical(Category::Tree, (2 * width - 1) as u64);
        Ok(t)
    }

    /// Logical number of leaves `D`.
    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn depth(&self) -> usize {
        self.depth
    }

    pub fn width(&self) -> usize {
        1 << self.depth
    }

    pub fn counters(&self) -> CounterSnapshot {
        self.counters.snapshot()
    }

    fn first_leaf(&self) -> usize {
        self.width() - 1
    }

    /// `S_R` at an address: squared value at a leaf, stored sum otherwise.
    fn node_value(&self, addr: usize) -> f64 {
        let v = self.nodes[addr];
        if addr >= self.first_leaf() {
            v * v
        } else {
            v
        }
    }

    /// Unmetered `S_R(p)`, for read-only consumers that do their own
    /// accounting.
    pub(crate) fn sum_at(&self, p: NodePath) -> f64 {
        self.node_value(p.address())
    }

    /// Unmetered signed leaf.
    pub(crate) fn leaf_at(&self, j: usize) -> f64 {
        self.nodes[self.first_leaf() + j]
    }

    pub(crate) fn count_queries(&self, n: u64) {
        self.counters.quantum(Category::Tree, n);
    }

    /// `P_R |a_r(p)⟩|0⟩ = |a_r(p)⟩|S_R(p)⟩`, one quantum query.
    pub fn node_query(&self, p: NodePath) -> Result<f64> {
        if p.len > self.depth || p.bits >> p.len != 0 {
            return Err(Error::InvalidPath {
                len: p.len,
                depth: self.depth,
            });
        }
        self.counters.quantum(Category::Tree, 1);
        Ok(self.node_value(p.address()))
    }

    pub fn root(&self) -> f64 {
        self.node_value(0)
    }

    pub fn signed_leaf(&self, j: usize) -> Result<f64> {
        if j >= self.width() {
            return Err(Error::IndexOutOfRange {
                what: "leaf",
                index: j,
                limit: self.width(),
            });
        }
        self.counters.classical(Category::Tree, 1);
        Ok(self.leaf_at(j))
    }

    /// Logical leaves, unmetered.
    pub fn leaves(&self) -> &[f64] {
        let f = self.first_leaf();
        &self.nodes[f..f + self.len]
    }

    /// Writes leaf `j` and refreshes its ancestors from their children.
    /// Returns the number of node writes, `d + 1`.
    pub fn update_leaf(&mut self, j: usize, value: f64) -> Result<usize> {
        if j >= self.len {
            return Err(Error::PaddingWrite { leaf: j, len: self.len });
        }
        let mut a = self.first_leaf() + j;
        // one read of the old leaf, then d + 1 writes up the path
        self.counters.classical(Category::Tree, 1);
        self.nodes[a] = value;
        let mut writes = 1;
        while a > 0 {
            a = (a - 1) / 2;
            self.nodes[a] = self.node_value(2 * a + 1) + self.node_value(2 * a + 2);
            writes += 1;
        }
        self.counters.classical(Category::Tree, writes as u64);
        Ok(writes)
    }

    /// Refreshes every leaf whose residual depends on cell `i`: all
    /// components of every cell in the stencil of `i`. `cell_values(i')`
    /// returns the new leaf values of cell `i'`.
    pub fn update_for_cell<F>(&mut self, mesh: &Mesh, i: usize, mut cell_values: F) -> Result<usize>
    where
        F: FnMut(usize) -> Result<Vec4>,
    {
        if i >= mesh.n_cells() {
            return Err(Error::IndexOutOfRange {
                what: "cell",
                index: i,
                limit: mesh.n_cells(),
            });
        }
        let mut writes = 0;
        for c in mesh.stencil().cells(i) {
            let vals = cell_values(c)?;
            for (k, v) in vals.into_iter().enumerate() {
                writes += self.update_leaf(c * N_VAR + k, v)?;
            }
        }
        let bound = crate::mesh::STENCIL_SIZE * N_VAR * (self.depth + 1);
        assert!(
            writes <= bound,
            "cell update wrote {writes} nodes, bound is {bound}"
        );
        Ok(writes)
    }

    /// Checks that every internal node equals the sum of its children
    /// (bit-exact) and padding leaves are zero.
    pub fn audit(&self) -> bool {
        let f = self.first_leaf();
        (0..f).all(|a| self.nodes[a] == self.node_value(2 * a + 1) + self.node_value(2 * a + 2))
            && self.nodes[f + self.len..].iter().all(|&v| v == 0.0)
    }

    /// Level-order listing, one `address value` pair per line.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (a, v) in self.nodes.iter().enumerate() {
            let _ = writeln!(out, "{a} {v:.17e}");
        }
        out
    }
}
