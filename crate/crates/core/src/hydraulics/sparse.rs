//! Sparse Cholesky factorization for the fixed-pattern head system.
//!
//! The pattern is a graph Laplacian restricted to junctions, so it is fixed per
//! network. Ordering and symbolic factorization are computed once; numeric
//! factorization and solves use caller-owned buffers.

use std::collections::BTreeSet;

#[derive(Debug, Clone)]
pub(crate) struct SymbolicCholesky {
    n: usize,
    /// perm[k] = original index eliminated at step k.
    perm: Vec<usize>,
    /// inverse permutation.
    pos: Vec<usize>,
    /// values layout: column k occupies [start[k], start[k + 1]); first slot is the diagonal.
    start: Vec<usize>,
    /// below-diagonal rows of column k (permuted indices, ascending).
    rows: Vec<usize>,
    /// outer-product updates issued by column k: (slot a, slot b, target).
    updates: Vec<(usize, usize, usize)>,
    update_start: Vec<usize>,
}

impl SymbolicCholesky {
    /// `edges` are off-diagonal couplings between original indices in `0..n`.
    pub(crate) fn new(n: usize, edges: &[(usize, usize)]) -> Self {
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for &(a, b) in edges {
            if a != b {
                adj[a].insert(b);
                adj[b].insert(a);
            }
        }
        // Greedy minimum degree on the elimination graph; ties by lowest index.
        let mut by_degree: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
        let mut perm = Vec::with_capacity(n);
        let mut pattern_orig: Vec<Vec<usize>> = Vec::with_capacity(n);
        while let Some((_, v)) = by_degree.pop_first() {
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            for &u in &nbrs {
                by_degree.remove(&(adj[u].len(), u));
                adj[u].remove(&v);
            }
            for (i, &a) in nbrs.iter().enumerate() {
                for &b in &nbrs[i + 1..] {
                    adj[a].insert(b);
                    adj[b].insert(a);
                }
            }
            for &u in &nbrs {
                by_degree.insert((adj[u].len(), u));
            }
            adj[v].clear();
            perm.push(v);
            pattern_orig.push(nbrs);
        }
        let mut pos = vec![0; n];
        for (k, &v) in perm.iter().enumerate() {
            pos[v] = k;
        }
        let mut start = Vec::with_capacity(n + 1);
        let mut rows = Vec::new();
        let mut row_start = Vec::with_capacity(n + 1);
        let mut next = 0;
        for pat in &pattern_orig {
            start.push(next);
            row_start.push(rows.len());
            let mut r: Vec<usize> = pat.iter().map(|&u| pos[u]).collect();
            r.sort_unstable();
            next += 1 + r.len();
            rows.extend(r);
        }
        start.push(next);
        row_start.push(rows.len());

        let mut sym = SymbolicCholesky {
            n,
            perm,
            pos,
            start,
            rows,
            updates: Vec::new(),
            update_start: Vec::with_capacity(n + 1),
        };
        for k in 0..n {
            sym.update_start.push(sym.updates.len());
            let col = &sym.rows[row_start[k]..row_start[k + 1]];
            for (a, &ra) in col.iter().enumerate() {
                for (b, &rb) in col.iter().enumerate().skip(a) {
                    let target = sym.slot(rb, ra).expect("fill pattern closed under elimination");
                    sym.updates.push((sym.start[k] + 1 + a, sym.start[k] + 1 + b, target));
                }
            }
        }
        sym.update_start.push(sym.updates.len());
        sym
    }

    pub(crate) fn len(&self) -> usize {
        self.start[self.n]
    }

    fn column_rows(&self, k: usize) -> &[usize] {
        let a = self.start[k] - k;
        let b = self.start[k + 1] - k - 1;
        &self.rows[a..b]
    }

    /// Storage slot of entry (row, col) in permuted indices with row ≥ col.
    fn slot(&self, row: usize, col: usize) -> Option<usize> {
        if row == col {
            return Some(self.start[col]);
        }
        self.column_rows(col)
            .binary_search(&row)
            .ok()
            .map(|t| self.start[col] + 1 + t)
    }

    /// Slot of the diagonal for original index `i`.
    pub(crate) fn diag_slot(&self, i: usize) -> usize {
        self.start[self.pos[i]]
    }

    /// Slot of the coupling between original indices `i` and `j`.
    pub(crate) fn off_slot(&self, i: usize, j: usize) -> usize {
        let (a, b) = (self.pos[i], self.pos[j]);
        self.slot(a.max(b), a.min(b)).expect("edge present in pattern")
    }

    /// In-place numeric factorization. Returns the offending original index
    /// when a pivot is not positive.
    pub(crate) fn factor(&self, values: &mut [f64]) -> Result<(), usize> {
        for k in 0..self.n {
            let d = values[self.start[k]];
            if !(d > 0.0 && d.is_finite()) {
                return Err(self.perm[k]);
            }
            let l = d.sqrt();
            values[self.start[k]] = l;
            for s in self.start[k] + 1..self.start[k + 1] {
                values[s] /= l;
            }
            for &(a, b, t) in &self.updates[self.update_start[k]..self.update_start[k + 1]] {
                values[t] -= values[a] * values[b];
            }
        }
        Ok(())
    }

    /// Solve with factored values; `rhs` in original order is overwritten by
    /// the solution. `work` must have length n.
    pub(crate) fn solve(&self, values: &[f64], rhs: &mut [f64], work: &mut [f64]) {
        for k in 0..self.n {
            work[k] = rhs[self.perm[k]];
        }
        for k in 0..self.n {
            let y = work[k] / values[self.start[k]];
            work[k] = y;
            for (t, &r) in self.column_rows(k).iter().enumerate() {
                work[r] -= values[self.start[k] + 1 + t] * y;
            }
        }
        for k in (0..self.n).rev() {
            let mut s = work[k];
            for (t, &r) in self.column_rows(k).iter().enumerate() {
                s -= values[self.start[k] + 1 + t] * work[r];
            }
            work[k] = s / values[self.start[k]];
        }
        for k in 0..self.n {
            rhs[self.perm[k]] = work[k];
        }
    }
}
