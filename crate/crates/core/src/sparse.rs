//! Compressed sparse rows and a direct LU solver tuned for the nearly
//! tree-shaped matrices produced by wire discretizations.

use std::collections::BTreeSet;
use std::sync::Arc;

use nalgebra::DMatrix;

use crate::error::{EmError, Result};

/// Relative pivot size below which a factorization is declared singular.
pub const PIVOT_TOLERANCE: f64 = 1e-13;

#[derive(Debug, Clone, PartialEq)]
pub struct CsrMatrix {
    n: usize,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    values: Vec<f64>,
}

impl CsrMatrix {
    /// Square matrix from (row, col, value) triplets; duplicates are summed.
    /// Every diagonal entry is stored, even when zero.
    pub fn from_triplets(n: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut rows: Vec<Vec<(usize, f64)>> = (0..n).map(|i| vec![(i, 0.0)]).collect();
        for &(r, c, v) in triplets {
            assert!(r < n && c < n, "triplet ({r}, {c}) outside {n}x{n}");
            rows[r].push((c, v));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut values = Vec::new();
        row_ptr.push(0);
        for mut row in rows {
            row.sort_by_key(|e| e.0);
            for (c, v) in row {
                if col_idx.len() > *row_ptr.last().unwrap() && *col_idx.last().unwrap() == c {
                    *values.last_mut().unwrap() += v;
                } else {
                    col_idx.push(c);
                    values.push(v);
                }
            }
            row_ptr.push(col_idx.len());
        }
        Self { n, row_ptr, col_idx, values }
    }

    pub fn from_dense(m: &DMatrix<f64>) -> Self {
        assert_eq!(m.nrows(), m.ncols());
        let mut trip = Vec::new();
        for i in 0..m.nrows() {
            for j in 0..m.ncols() {
                if m[(i, j)] != 0.0 {
                    trip.push((i, j, m[(i, j)]));
                }
            }
        }
        Self::from_triplets(m.nrows(), &trip)
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn nnz(&self) -> usize {
        self.values.len()
    }

    pub fn row(&self, i: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        self.col_idx[r.clone()].iter().copied().zip(self.values[r].iter().copied())
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        match self.col_idx[r.clone()].binary_search(&j) {
            Ok(p) => self.values[r.start + p],
            Err(_) => 0.0,
        }
    }

    /// Mutable access to a stored entry.
    pub fn entry_mut(&mut self, i: usize, j: usize) -> Option<&mut f64> {
        let r = self.row_ptr[i]..self.row_ptr[i + 1];
        let p = self.col_idx[r.clone()].binary_search(&j).ok()?;
        Some(&mut self.values[r.start + p])
    }

    /// Sets every stored value of row `i` to zero (pattern kept).
    pub fn clear_row(&mut self, i: usize) {
        for v in &mut self.values[self.row_ptr[i]..self.row_ptr[i + 1]] {
            *v = 0.0;
        }
    }

    pub fn mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        self.mul_vec_into(x, &mut y);
        y
    }

    pub fn mul_vec_into(&self, x: &[f64], y: &mut [f64]) {
        for (i, yi) in y.iter_mut().enumerate() {
            let mut acc = 0.0;
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                acc += self.values[k] * x[self.col_idx[k]];
            }
            *yi = acc;
        }
    }

    /// xᵀ·A as a vector.
    pub fn transpose_mul_vec(&self, x: &[f64]) -> Vec<f64> {
        let mut y = vec![0.0; self.n];
        for (i, &xi) in x.iter().enumerate() {
            for k in self.row_ptr[i]..self.row_ptr[i + 1] {
                y[self.col_idx[k]] += self.values[k] * xi;
            }
        }
        y
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.n, self.n);
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                m[(i, j)] += v;
            }
        }
        m
    }

    /// Triplet dump, one `row col value` per line.
    pub fn to_triplet_text(&self) -> String {
        let mut out = String::new();
        for i in 0..self.n {
            for (j, v) in self.row(i) {
                out.push_str(&format!("{i} {j} {v:.16e}\n"));
            }
        }
        out
    }

    fn same_pattern(&self, other_ptr: &[usize], other_idx: &[usize]) -> bool {
        self.row_ptr == other_ptr && self.col_idx == other_idx
    }
}

/// Fill-reducing ordering and the filled pattern of P·A·Pᵀ. Reusable for
/// every matrix sharing the sparsity pattern of the analyzed one.
#[derive(Debug)]
pub struct SymbolicLu {
    n: usize,
    /// perm[new] = old.
    perm: Vec<usize>,
    row_ptr: Vec<usize>,
    col_idx: Vec<usize>,
    diag_pos: Vec<usize>,
    /// Position in the filled storage of every stored entry of the source.
    scatter: Vec<usize>,
    src_row_ptr: Vec<usize>,
    src_col_idx: Vec<usize>,
}

impl SymbolicLu {
    /// Greedy minimum-degree ordering on the symmetrized pattern followed by
    /// symbolic elimination. Trees eliminate leaf-first with no fill.
    pub fn analyze(a: &CsrMatrix) -> Self {
        let n = a.n;
        let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
        for i in 0..n {
            for (j, _) in a.row(i) {
                if i != j {
                    adj[i].insert(j);
                    adj[j].insert(i);
                }
            }
        }
        let original = adj.clone();

        let mut queue: BTreeSet<(usize, usize)> = (0..n).map(|i| (adj[i].len(), i)).collect();
        let mut perm = Vec::with_capacity(n);
        let mut eliminated = vec![false; n];
        // Filled neighbours of every node, in original numbering.
        let mut filled: Vec<Vec<usize>> = vec![Vec::new(); n];
        while let Some((_, v)) = queue.pop_first() {
            eliminated[v] = true;
            perm.push(v);
            let nbrs: Vec<usize> = adj[v].iter().copied().collect();
            filled[v] = nbrs.clone();
            for &u in &nbrs {
                queue.remove(&(adj[u].len(), u));
                adj[u].remove(&v);
            }
            for (x, &u) in nbrs.iter().enumerate() {
                for &w in &nbrs[x + 1..] {
                    adj[u].insert(w);
                    adj[w].insert(u);
                }
            }
            for &u in &nbrs {
                queue.insert((adj[u].len(), u));
            }
            adj[v].clear();
        }
        debug_assert!(eliminated.iter().all(|&e| e));

        let mut inv = vec![0usize; n];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        // Filled symmetric pattern: original edges plus edges from each
        // eliminated node to its remaining neighbours.
        let mut pattern: Vec<BTreeSet<usize>> = (0..n).map(|i| BTreeSet::from([i])).collect();
        for old in 0..n {
            for &nb in original[old].iter().chain(filled[old].iter()) {
                let (p, q) = (inv[old], inv[nb]);
                pattern[p].insert(q);
                pattern[q].insert(p);
            }
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut col_idx = Vec::new();
        let mut diag_pos = Vec::with_capacity(n);
        row_ptr.push(0);
        for (i, row) in pattern.iter().enumerate() {
            for &j in row {
                if j == i {
                    diag_pos.push(col_idx.len());
                }
                col_idx.push(j);
            }
            row_ptr.push(col_idx.len());
        }

        let mut scatter = Vec::with_capacity(a.nnz());
        for i in 0..n {
            let pi = inv[i];
            let r = row_ptr[pi]..row_ptr[pi + 1];
            for (j, _) in a.row(i) {
                let pj = inv[j];
                let off = col_idx[r.clone()].binary_search(&pj).expect("pattern covers source");
                scatter.push(r.start + off);
            }
        }

        Self {
            n,
            perm,
            row_ptr,
            col_idx,
            diag_pos,
            scatter,
            src_row_ptr: a.row_ptr.clone(),
            src_col_idx: a.col_idx.clone(),
        }
    }

    /// Stored entries of the factors (fill included).
    pub fn factor_nnz(&self) -> usize {
        self.col_idx.len()
    }

    /// Numeric LU of `alpha·A + beta·I` for a matrix with the analyzed pattern.
    pub fn factor(self: &Arc<Self>, a: &CsrMatrix, alpha: f64, beta: f64) -> Result<SparseLu> {
        assert!(
            a.same_pattern(&self.src_row_ptr, &self.src_col_idx),
            "matrix pattern differs from the analyzed pattern"
        );
        let n = self.n;
        let mut vals = vec![0.0; self.col_idx.len()];
        for (k, &dst) in self.scatter.iter().enumerate() {
            vals[dst] += alpha * a.values[k];
        }
        for i in 0..n {
            vals[self.diag_pos[i]] += beta;
        }
        let mut scale = vec![0.0f64; n];
        for (i, s) in scale.iter_mut().enumerate() {
            *s = vals[self.row_ptr[i]..self.row_ptr[i + 1]].iter().fold(0.0, |m, v| m.max(v.abs()));
        }

        // Right-looking elimination restricted to the filled pattern.
        for k in 0..n {
            let pivot = vals[self.diag_pos[k]];
            if !(pivot.abs() > PIVOT_TOLERANCE * scale[k]) || !pivot.is_finite() {
                return Err(EmError::Singular { row: self.perm[k], pivot: pivot.abs() });
            }
            let upper = self.diag_pos[k] + 1..self.row_ptr[k + 1];
            for kk in upper.clone() {
                let i = self.col_idx[kk];
                // Structural symmetry: row i holds column k.
                let ri = self.row_ptr[i]..self.row_ptr[i + 1];
                let pik = ri.start + self.col_idx[ri.clone()].binary_search(&k).unwrap();
                if vals[pik] == 0.0 {
                    continue;
                }
                let l = vals[pik] / pivot;
                vals[pik] = l;
                let mut cursor = pik + 1;
                for kj in upper.clone() {
                    let j = self.col_idx[kj];
                    while self.col_idx[cursor] < j {
                        cursor += 1;
                    }
                    vals[cursor] -= l * vals[kj];
                }
            }
        }
        Ok(SparseLu { symbolic: Arc::clone(self), vals })
    }
}

/// Numeric factors L·U = P·(αA + βI)·Pᵀ.
#[derive(Debug, Clone)]
pub struct SparseLu {
    symbolic: Arc<SymbolicLu>,
    vals: Vec<f64>,
}

impl SparseLu {
    /// One-shot analysis and factorization of `alpha·A + beta·I`.
    pub fn new(a: &CsrMatrix, alpha: f64, beta: f64) -> Result<Self> {
        Arc::new(SymbolicLu::analyze(a)).factor(a, alpha, beta)
    }

    pub fn n(&self) -> usize {
        self.symbolic.n
    }

    pub fn solve(&self, b: &[f64]) -> Vec<f64> {
        let mut x = vec![0.0; b.len()];
        let mut work = vec![0.0; b.len()];
        self.solve_into(b, &mut x, &mut work);
        x
    }

    /// Allocation-free solve; `work` must have length n.
    pub fn solve_into(&self, b: &[f64], x: &mut [f64], work: &mut [f64]) {
        let s = &*self.symbolic;
        for (new, &old) in s.perm.iter().enumerate() {
            work[new] = b[old];
        }
        for i in 0..s.n {
            let mut acc = work[i];
            for k in s.row_ptr[i]..s.diag_pos[i] {
                acc -= self.vals[k] * work[s.col_idx[k]];
            }
            work[i] = acc;
        }
        for i in (0..s.n).rev() {
            let mut acc = work[i];
            for k in s.diag_pos[i] + 1..s.row_ptr[i + 1] {
                acc -= self.vals[k] * work[s.col_idx[k]];
            }
            work[i] = acc / self.vals[s.diag_pos[i]];
        }
        for (new, &old) in s.perm.iter().enumerate() {
            x[old] = work[new];
        }
    }
}
