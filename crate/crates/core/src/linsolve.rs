//! Direct solves of the policy linear systems `(I - γP)x = b` and
//! `x(I - γP) = b`.
//!
//! The transition graph of `P` is condensed into strongly connected
//! components. Components are eliminated in topological order: singletons by
//! scalar division, larger blocks by dense LU with partial pivoting. For an
//! irreducible chain this is a single dense LU; for the chain-structured
//! counterexamples it is an exact O(nnz) substitution.
//!
//! The component order depends only on the sparsity pattern, so a system can
//! have its values overwritten in place and keep its order.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use petgraph::algo::tarjan_scc;
use petgraph::graph::DiGraph;

/// Row-sparse square matrix in compressed rows; each entry is `(column, value)`.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseRows {
    entries: Vec<(usize, f64)>,
    row_ptr: Vec<usize>,
}

impl SparseRows {
    pub fn new(rows: Vec<Vec<(usize, f64)>>) -> Self {
        let mut out = Self { entries: Vec::new(), row_ptr: vec![0] };
        for row in rows {
            out.entries.extend(row);
            out.row_ptr.push(out.entries.len());
        }
        out
    }

    pub fn dim(&self) -> usize {
        self.row_ptr.len().saturating_sub(1)
    }

    pub fn row(&self, i: usize) -> &[(usize, f64)] {
        &self.entries[self.row_ptr[i]..self.row_ptr[i + 1]]
    }

    pub fn nnz(&self) -> usize {
        self.entries.len()
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let n = self.dim();
        let mut m = DMatrix::zeros(n, n);
        for i in 0..n {
            for &(j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    pub(crate) fn clear(&mut self) {
        self.entries.clear();
        self.row_ptr.clear();
        self.row_ptr.push(0);
    }

    pub(crate) fn push(&mut self, col: usize, value: f64) {
        self.entries.push((col, value));
    }

    /// Close the current row: sort it by column and merge duplicates.
    pub(crate) fn finish_row(&mut self) {
        let start = *self.row_ptr.last().expect("row_ptr starts with 0");
        let row = &mut self.entries[start..];
        row.sort_unstable_by_key(|e| e.0);
        let mut w = start;
        for r in start..self.entries.len() {
            let e = self.entries[r];
            if w > start && self.entries[w - 1].0 == e.0 {
                self.entries[w - 1].1 += e.1;
            } else {
                self.entries[w] = e;
                w += 1;
            }
        }
        self.entries.truncate(w);
        self.row_ptr.push(w);
    }

    /// Strongly connected components, successors before predecessors,
    /// flattened into `order` with boundaries in `comp_ptr`.
    fn components(&self, order: &mut Vec<usize>, comp_ptr: &mut Vec<usize>) {
        let n = self.dim();
        let mut g: DiGraph<(), ()> = DiGraph::with_capacity(n, self.nnz());
        let nodes: Vec<_> = (0..n).map(|_| g.add_node(())).collect();
        for i in 0..n {
            for &(j, _) in self.row(i) {
                if i != j {
                    g.add_edge(nodes[i], nodes[j], ());
                }
            }
        }
        order.clear();
        comp_ptr.clear();
        comp_ptr.push(0);
        for comp in tarjan_scc(&g) {
            let start = order.len();
            order.extend(comp.into_iter().map(|v| v.index()));
            order[start..].sort_unstable();
            comp_ptr.push(order.len());
        }
    }
}

/// Reusable buffers for block eliminations.
#[derive(Debug, Clone, Default)]
pub struct SolveScratch {
    block: Vec<f64>,
    rhs: Vec<f64>,
    local: Vec<usize>,
}

/// The system `I - γP` for a sparse `P`, with its component order.
#[derive(Debug, Clone)]
pub struct DiscountedSystem {
    gamma: f64,
    p: SparseRows,
    /// States grouped by component, successor-first.
    order: Vec<usize>,
    comp_ptr: Vec<usize>,
}

impl DiscountedSystem {
    pub fn new(p: SparseRows, gamma: f64) -> Self {
        let mut sys = Self { gamma, p, order: Vec::new(), comp_ptr: Vec::new() };
        sys.p.components(&mut sys.order, &mut sys.comp_ptr);
        sys
    }

    /// Row pointers and mutable entries of `P`. Only values may change, which
    /// keeps the component order valid; an entry may be set to zero.
    pub(crate) fn entries_mut(&mut self) -> (&[usize], &mut [(usize, f64)]) {
        (&self.p.row_ptr, &mut self.p.entries)
    }

    pub fn num_components(&self) -> usize {
        self.comp_ptr.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.p.dim()
    }

    pub fn matrix(&self) -> &SparseRows {
        &self.p
    }

    fn component(&self, c: usize) -> &[usize] {
        &self.order[self.comp_ptr[c]..self.comp_ptr[c + 1]]
    }

    fn check_len(&self, b: &[f64], x: &[f64]) -> Result<()> {
        let n = self.dim();
        if b.len() != n || x.len() != n {
            return Err(Error::Shape(format!("rhs has length {}, system has {n}", b.len())));
        }
        Ok(())
    }

    /// Solve `(I - γP) x = b`.
    pub fn solve(&self, b: &[f64]) -> Result<DVector<f64>> {
        let mut x = DVector::zeros(b.len());
        self.solve_into(b, x.as_mut_slice(), &mut SolveScratch::default())?;
        Ok(x)
    }

    /// Solve `x (I - γP) = b`, i.e. `(I - γP)^T x = b`.
    pub fn solve_transpose(&self, b: &[f64]) -> Result<DVector<f64>> {
        let mut x = DVector::zeros(b.len());
        self.solve_transpose_into(b, x.as_mut_slice(), &mut SolveScratch::default())?;
        Ok(x)
    }

    /// [`solve`](Self::solve) into a caller-owned buffer.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64], scratch: &mut SolveScratch) -> Result<()> {
        self.check_len(b, x)?;
        let (g, p) = (self.gamma, &self.p);
        scratch.local.resize(self.dim(), usize::MAX);
        for c in 0..self.num_components() {
            let comp = self.component(c);
            if let [s] = *comp {
                let mut rhs = b[s];
                let mut diag = 1.0;
                for &(j, v) in p.row(s) {
                    if j == s {
                        diag -= g * v;
                    } else {
                        rhs += g * v * x[j];
                    }
                }
                x[s] = rhs / diag;
                continue;
            }
            let k = comp.len();
            scratch.block.clear();
            scratch.block.resize(k * k, 0.0);
            scratch.rhs.clear();
            for (li, &s) in comp.iter().enumerate() {
                scratch.local[s] = li;
                scratch.block[li * k + li] = 1.0;
            }
            for (li, &s) in comp.iter().enumerate() {
                let mut rhs = b[s];
                for &(j, v) in p.row(s) {
                    match scratch.local[j] {
                        usize::MAX => rhs += g * v * x[j],
                        lj => scratch.block[li * k + lj] -= g * v,
                    }
                }
                scratch.rhs.push(rhs);
            }
            lu_solve_in_place(&mut scratch.block, &mut scratch.rhs, k)?;
            for (li, &s) in comp.iter().enumerate() {
                x[s] = scratch.rhs[li];
                scratch.local[s] = usize::MAX;
            }
        }
        finite(x)
    }

    /// [`solve_transpose`](Self::solve_transpose) into a caller-owned buffer.
    ///
    /// Components are taken predecessor-first; once a component is solved
    /// its mass is pushed along its outgoing rows, so no transpose is formed.
    pub fn solve_transpose_into(&self, b: &[f64], x: &mut [f64], scratch: &mut SolveScratch) -> Result<()> {
        self.check_len(b, x)?;
        let (g, p) = (self.gamma, &self.p);
        x.copy_from_slice(b);
        scratch.local.resize(self.dim(), usize::MAX);
        for c in (0..self.num_components()).rev() {
            let comp = self.component(c);
            if let [s] = *comp {
                let self_loop: f64 = p.row(s).iter().filter(|e| e.0 == s).map(|e| e.1).sum();
                x[s] /= 1.0 - g * self_loop;
            } else {
                // (I - γP_CC)^T x_C = acc_C
                let k = comp.len();
                scratch.block.clear();
                scratch.block.resize(k * k, 0.0);
                scratch.rhs.clear();
                for (li, &s) in comp.iter().enumerate() {
                    scratch.local[s] = li;
                    scratch.block[li * k + li] = 1.0;
                    scratch.rhs.push(x[s]);
                }
                for (li, &s) in comp.iter().enumerate() {
                    for &(j, v) in p.row(s) {
                        let lj = scratch.local[j];
                        if lj != usize::MAX {
                            scratch.block[lj * k + li] -= g * v;
                        }
                    }
                }
                lu_solve_in_place(&mut scratch.block, &mut scratch.rhs, k)?;
                for (li, &s) in comp.iter().enumerate() {
                    x[s] = scratch.rhs[li];
                }
            }
            for &s in comp {
                for &(j, v) in p.row(s) {
                    let outside = if comp.len() == 1 { j != s } else { scratch.local[j] == usize::MAX };
                    if outside {
                        x[j] += g * v * x[s];
                    }
                }
            }
            if comp.len() > 1 {
                for &s in comp {
                    scratch.local[s] = usize::MAX;
                }
            }
        }
        finite(x)
    }
}

fn finite(x: &[f64]) -> Result<()> {
    if x.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite solution of policy system".into()));
    }
    Ok(())
}

/// Gaussian elimination with partial pivoting on a row-major `k × k` block;
/// the solution overwrites `rhs`.
fn lu_solve_in_place(a: &mut [f64], rhs: &mut [f64], k: usize) -> Result<()> {
    for col in 0..k {
        let pivot = (col..k)
            .max_by(|&i, &j| a[i * k + col].abs().total_cmp(&a[j * k + col].abs()))
            .expect("nonempty pivot range");
        if a[pivot * k + col] == 0.0 {
            return Err(Error::Numeric("singular block in policy system".into()));
        }
        if pivot != col {
            for j in 0..k {
                a.swap(pivot * k + j, col * k + j);
            }
            rhs.swap(pivot, col);
        }
        let d = a[col * k + col];
        for i in col + 1..k {
            let f = a[i * k + col] / d;
            if f != 0.0 {
                for j in col..k {
                    a[i * k + j] -= f * a[col * k + j];
                }
                rhs[i] -= f * rhs[col];
            }
        }
    }
    for i in (0..k).rev() {
        let tail: f64 = (i + 1..k).map(|j| a[i * k + j] * rhs[j]).sum();
        rhs[i] = (rhs[i] - tail) / a[i * k + i];
    }
    Ok(())
}
