//! Sparse LDLᵀ for quasi-definite matrices with a minimum-degree fill-reducing
//! ordering. The factorization is split into a symbolic phase, reused while
//! the sparsity pattern is unchanged, and a cheap numeric phase.

use std::cmp::Reverse;
use std::collections::BinaryHeap;

const NONE: usize = usize::MAX;

/// Greedy minimum-degree ordering on an explicit elimination graph. Ties are
/// broken by the lower vertex index so the ordering is deterministic.
pub fn min_degree(n: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Vec<usize> {
    let mut adj: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, j) in edges {
        if i != j {
            adj[i].push(j);
            adj[j].push(i);
        }
    }
    for a in &mut adj {
        a.sort_unstable();
        a.dedup();
    }
    let mut heap: BinaryHeap<Reverse<(usize, usize)>> =
        (0..n).map(|v| Reverse((adj[v].len(), v))).collect();
    let mut done = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut merged = Vec::new();
    while let Some(Reverse((deg, v))) = heap.pop() {
        if done[v] || deg != adj[v].len() {
            continue;
        }
        done[v] = true;
        order.push(v);
        let nbrs = std::mem::take(&mut adj[v]);
        for &u in &nbrs {
            merged.clear();
            let (a, b) = (&adj[u], &nbrs);
            let (mut x, mut y) = (0, 0);
            while x < a.len() || y < b.len() {
                let next = match (a.get(x), b.get(y)) {
                    (Some(&p), Some(&q)) if p == q => {
                        x += 1;
                        y += 1;
                        p
                    }
                    (Some(&p), Some(&q)) if p < q => {
                        x += 1;
                        p
                    }
                    (Some(_), Some(&q)) => {
                        y += 1;
                        q
                    }
                    (Some(&p), None) => {
                        x += 1;
                        p
                    }
                    (None, Some(&q)) => {
                        y += 1;
                        q
                    }
                    (None, None) => unreachable!(),
                };
                if next != u && next != v {
                    merged.push(next);
                }
            }
            std::mem::swap(&mut adj[u], &mut merged);
            heap.push(Reverse((adj[u].len(), u)));
        }
    }
    order
}

/// Ordering, elimination tree and the permuted upper-triangular pattern.
#[derive(Debug, Clone)]
pub struct LdlSymbolic {
    n: usize,
    perm: Vec<usize>,
    colptr: Vec<usize>,
    rowval: Vec<usize>,
    /// position of each input coordinate in the permuted value array
    map: Vec<usize>,
    etree: Vec<usize>,
    lnz: Vec<usize>,
}

impl LdlSymbolic {
    /// `coords` lists upper-triangular `(row, col)` positions of an `n×n`
    /// symmetric matrix in the order values will later be supplied.
    /// Every diagonal position must be present.
    pub fn analyze(n: usize, coords: &[(usize, usize)]) -> Self {
        let perm = min_degree(n, coords.iter().copied());
        Self::with_ordering(n, coords, perm)
    }

    pub fn with_ordering(n: usize, coords: &[(usize, usize)], perm: Vec<usize>) -> Self {
        let mut pinv = vec![0usize; n];
        for (k, &p) in perm.iter().enumerate() {
            pinv[p] = k;
        }
        let permuted: Vec<(usize, usize)> = coords
            .iter()
            .map(|&(i, j)| {
                let (a, b) = (pinv[i], pinv[j]);
                if a <= b {
                    (a, b)
                } else {
                    (b, a)
                }
            })
            .collect();

        let mut counts = vec![0usize; n + 1];
        for &(_, j) in &permuted {
            counts[j + 1] += 1;
        }
        for j in 0..n {
            counts[j + 1] += counts[j];
        }
        let mut slots: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (t, &(i, j)) in permuted.iter().enumerate() {
            slots[j].push((i, t));
        }
        let mut colptr = vec![0usize; n + 1];
        let mut rowval = Vec::new();
        let mut map = vec![0usize; coords.len()];
        for (j, col) in slots.iter_mut().enumerate() {
            col.sort_unstable();
            for &(i, t) in col.iter() {
                if rowval.len() == colptr[j] || *rowval.last().unwrap() != i {
                    rowval.push(i);
                }
                map[t] = rowval.len() - 1;
            }
            colptr[j + 1] = rowval.len();
        }

        let mut etree = vec![NONE; n];
        let mut lnz = vec![0usize; n];
        let mut work = vec![NONE; n];
        for j in 0..n {
            work[j] = j;
            for &row in &rowval[colptr[j]..colptr[j + 1]] {
                let mut i = row;
                while work[i] != j {
                    if etree[i] == NONE {
                        etree[i] = j;
                    }
                    lnz[i] += 1;
                    work[i] = j;
                    i = etree[i];
                }
            }
        }

        Self {
            n,
            perm,
            colptr,
            rowval,
            map,
            etree,
            lnz,
        }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn factor_nnz(&self) -> usize {
        self.lnz.iter().sum()
    }

    /// Numeric factorization with `values` aligned to the coordinates given at
    /// analysis. Returns `None` on a zero pivot.
    pub fn factor(&self, values: &[f64]) -> Option<LdlFactor> {
        let n = self.n;
        assert_eq!(
            values.len(),
            self.map.len(),
            "value count must match analysed pattern"
        );
        let mut ax = vec![0.0; self.rowval.len()];
        for (t, &v) in values.iter().enumerate() {
            ax[self.map[t]] += v;
        }

        let mut lp = vec![0usize; n + 1];
        for i in 0..n {
            lp[i + 1] = lp[i] + self.lnz[i];
        }
        let total = lp[n];
        let mut li = vec![0usize; total];
        let mut lx = vec![0.0; total];
        let mut d = vec![0.0; n];
        let mut dinv = vec![0.0; n];
        let mut next_space: Vec<usize> = lp[..n].to_vec();
        let mut y_vals = vec![0.0; n];
        let mut y_used = vec![false; n];
        let mut y_idx = vec![0usize; n];
        let mut elim = vec![0usize; n];

        for k in 0..n {
            let mut nnz_y = 0;
            for p in self.colptr[k]..self.colptr[k + 1] {
                let b = self.rowval[p];
                if b == k {
                    d[k] = ax[p];
                    continue;
                }
                y_vals[b] = ax[p];
                if !y_used[b] {
                    y_used[b] = true;
                    elim[0] = b;
                    let mut nnz_e = 1;
                    let mut next = self.etree[b];
                    while next != NONE && next < k {
                        if y_used[next] {
                            break;
                        }
                        y_used[next] = true;
                        elim[nnz_e] = next;
                        nnz_e += 1;
                        next = self.etree[next];
                    }
                    while nnz_e > 0 {
                        nnz_e -= 1;
                        y_idx[nnz_y] = elim[nnz_e];
                        nnz_y += 1;
                    }
                }
            }
            for i in (0..nnz_y).rev() {
                let c = y_idx[i];
                let end = next_space[c];
                let yc = y_vals[c];
                for j in lp[c]..end {
                    y_vals[li[j]] -= lx[j] * yc;
                }
                li[end] = k;
                lx[end] = yc * dinv[c];
                d[k] -= yc * lx[end];
                next_space[c] += 1;
                y_vals[c] = 0.0;
                y_used[c] = false;
            }
            if d[k] == 0.0 || !d[k].is_finite() {
                return None;
            }
            dinv[k] = 1.0 / d[k];
        }

        Some(LdlFactor {
            perm: self.perm.clone(),
            lp,
            li,
            lx,
            d,
            dinv,
            work: vec![0.0; n],
        })
    }
}

#[derive(Debug, Clone)]
pub struct LdlFactor {
    perm: Vec<usize>,
    lp: Vec<usize>,
    li: Vec<usize>,
    lx: Vec<f64>,
    d: Vec<f64>,
    dinv: Vec<f64>,
    work: Vec<f64>,
}

impl LdlFactor {
    /// Solves in place.
    pub fn solve(&mut self, b: &mut [f64]) {
        let n = self.perm.len();
        let x = &mut self.work;
        for k in 0..n {
            x[k] = b[self.perm[k]];
        }
        for i in 0..n {
            let xi = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                x[self.li[j]] -= self.lx[j] * xi;
            }
        }
        for i in 0..n {
            x[i] *= self.dinv[i];
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in self.lp[i]..self.lp[i + 1] {
                s -= self.lx[j] * x[self.li[j]];
            }
            x[i] = s;
        }
        for k in 0..n {
            b[self.perm[k]] = x[k];
        }
    }

    /// Number of positive and negative pivots.
    pub fn inertia(&self) -> (usize, usize) {
        let pos = self.d.iter().filter(|&&v| v > 0.0).count();
        (pos, self.d.len() - pos)
    }
}
