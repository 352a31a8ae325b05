use nalgebra::DMatrix;

/// Compressed sparse column matrix. Row indices are sorted within each
/// column and duplicates are merged. Structural zeros may be stored.
#[derive(Debug, Clone, PartialEq)]
pub struct CscMatrix {
    nrows: usize,
    ncols: usize,
    colptr: Vec<usize>,
    rowval: Vec<usize>,
    nzval: Vec<f64>,
}

impl CscMatrix {
    pub fn zeros(nrows: usize, ncols: usize) -> Self {
        Self {
            nrows,
            ncols,
            colptr: vec![0; ncols + 1],
            rowval: Vec::new(),
            nzval: Vec::new(),
        }
    }

    pub fn identity(n: usize) -> Self {
        Self {
            nrows: n,
            ncols: n,
            colptr: (0..=n).collect(),
            rowval: (0..n).collect(),
            nzval: vec![1.0; n],
        }
    }

    /// Duplicate entries are summed. Entries are kept even when zero, so the
    /// pattern depends only on the coordinates passed in.
    pub fn from_triplets(nrows: usize, ncols: usize, triplets: &[(usize, usize, f64)]) -> Self {
        let mut counts = vec![0usize; ncols + 1];
        for &(i, j, _) in triplets {
            assert!(
                i < nrows && j < ncols,
                "triplet ({i}, {j}) out of {nrows}x{ncols}"
            );
            counts[j + 1] += 1;
        }
        for j in 0..ncols {
            counts[j + 1] += counts[j];
        }
        let mut next = counts.clone();
        let mut rows = vec![0usize; triplets.len()];
        let mut vals = vec![0.0; triplets.len()];
        for &(i, j, v) in triplets {
            rows[next[j]] = i;
            vals[next[j]] = v;
            next[j] += 1;
        }
        let mut colptr = vec![0usize; ncols + 1];
        let mut rowval = Vec::with_capacity(triplets.len());
        let mut nzval = Vec::with_capacity(triplets.len());
        let mut order: Vec<usize> = Vec::new();
        for j in 0..ncols {
            order.clear();
            order.extend(counts[j]..counts[j + 1]);
            order.sort_by_key(|&k| rows[k]);
            for &k in &order {
                if rowval.len() > colptr[j] && *rowval.last().unwrap() == rows[k] {
                    *nzval.last_mut().unwrap() += vals[k];
                } else {
                    rowval.push(rows[k]);
                    nzval.push(vals[k]);
                }
            }
            colptr[j + 1] = rowval.len();
        }
        Self {
            nrows,
            ncols,
            colptr,
            rowval,
            nzval,
        }
    }

    /// Keeps entries whose magnitude exceeds `drop_tol`.
    pub fn from_dense(m: &DMatrix<f64>, drop_tol: f64) -> Self {
        let mut colptr = Vec::with_capacity(m.ncols() + 1);
        let mut rowval = Vec::new();
        let mut nzval = Vec::new();
        colptr.push(0);
        for j in 0..m.ncols() {
            for i in 0..m.nrows() {
                let v = m[(i, j)];
                if v.abs() > drop_tol {
                    rowval.push(i);
                    nzval.push(v);
                }
            }
            colptr.push(rowval.len());
        }
        Self {
            nrows: m.nrows(),
            ncols: m.ncols(),
            colptr,
            rowval,
            nzval,
        }
    }

    pub fn to_dense(&self) -> DMatrix<f64> {
        let mut m = DMatrix::zeros(self.nrows, self.ncols);
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                m[(self.rowval[k], j)] += self.nzval[k];
            }
        }
        m
    }

    pub fn nrows(&self) -> usize {
        self.nrows
    }

    pub fn ncols(&self) -> usize {
        self.ncols
    }

    pub fn nnz(&self) -> usize {
        self.rowval.len()
    }

    pub fn colptr(&self) -> &[usize] {
        &self.colptr
    }

    pub fn rowval(&self) -> &[usize] {
        &self.rowval
    }

    pub fn values(&self) -> &[f64] {
        &self.nzval
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.nzval
    }

    pub fn same_pattern(&self, other: &Self) -> bool {
        self.nrows == other.nrows
            && self.ncols == other.ncols
            && self.colptr == other.colptr
            && self.rowval == other.rowval
    }

    /// `(row, value)` pairs of column `j`.
    pub fn col(&self, j: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let r = self.colptr[j]..self.colptr[j + 1];
        self.rowval[r.clone()]
            .iter()
            .copied()
            .zip(self.nzval[r].iter().copied())
    }

    /// Entry `(i, j)`; zero when not stored.
    pub fn get(&self, i: usize, j: usize) -> f64 {
        let r = self.colptr[j]..self.colptr[j + 1];
        match self.rowval[r.clone()].binary_search(&i) {
            Ok(k) => self.nzval[r.start + k],
            Err(_) => 0.0,
        }
    }

    pub fn transpose(&self) -> Self {
        let mut counts = vec![0usize; self.nrows + 1];
        for &i in &self.rowval {
            counts[i + 1] += 1;
        }
        for i in 0..self.nrows {
            counts[i + 1] += counts[i];
        }
        let mut next = counts.clone();
        let mut rowval = vec![0usize; self.nnz()];
        let mut nzval = vec![0.0; self.nnz()];
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                let i = self.rowval[k];
                rowval[next[i]] = j;
                nzval[next[i]] = self.nzval[k];
                next[i] += 1;
            }
        }
        Self {
            nrows: self.ncols,
            ncols: self.nrows,
            colptr: counts,
            rowval,
            nzval,
        }
    }

    /// `y = self · x`
    pub fn mul_vec(&self, x: &[f64], y: &mut [f64]) {
        y.iter_mut().for_each(|v| *v = 0.0);
        self.mul_vec_add(x, y);
    }

    /// `y += self · x`
    pub fn mul_vec_add(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.ncols);
        debug_assert_eq!(y.len(), self.nrows);
        for j in 0..self.ncols {
            let xj = x[j];
            if xj == 0.0 {
                continue;
            }
            for k in self.colptr[j]..self.colptr[j + 1] {
                y[self.rowval[k]] += self.nzval[k] * xj;
            }
        }
    }

    /// `y = selfᵀ · x`
    pub fn tmul_vec(&self, x: &[f64], y: &mut [f64]) {
        debug_assert_eq!(x.len(), self.nrows);
        debug_assert_eq!(y.len(), self.ncols);
        for j in 0..self.ncols {
            let mut s = 0.0;
            for k in self.colptr[j]..self.colptr[j + 1] {
                s += self.nzval[k] * x[self.rowval[k]];
            }
            y[j] = s;
        }
    }

    /// `diag(left) · self · diag(right)`, in place.
    pub fn scale(&mut self, left: &[f64], right: &[f64]) {
        for j in 0..self.ncols {
            for k in self.colptr[j]..self.colptr[j + 1] {
                self.nzval[k] *= left[self.rowval[k]] * right[j];
            }
        }
    }

    pub fn col_inf_norms(&self) -> Vec<f64> {
        (0..self.ncols)
            .map(|j| self.col(j).fold(0.0f64, |m, (_, v)| m.max(v.abs())))
            .collect()
    }

    pub fn row_inf_norms(&self) -> Vec<f64> {
        let mut n = vec![0.0f64; self.nrows];
        for (k, &i) in self.rowval.iter().enumerate() {
            n[i] = n[i].max(self.nzval[k].abs());
        }
        n
    }

    pub fn is_symmetric(&self, tol: f64) -> bool {
        if self.nrows != self.ncols {
            return false;
        }
        let t = self.transpose();
        (0..self.ncols).all(|j| {
            self.col(j).all(|(i, v)| (v - t.get(i, j)).abs() <= tol)
                && t.col(j).all(|(i, v)| (v - self.get(i, j)).abs() <= tol)
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{dmatrix, DVector};

    #[test]
    fn triplets_merge_duplicates_and_sort() {
        let m =
            CscMatrix::from_triplets(3, 2, &[(2, 0, 1.0), (0, 0, 2.0), (2, 0, 3.0), (1, 1, 0.0)]);
        assert_eq!(m.nnz(), 3);
        assert_eq!(m.rowval(), &[0, 2, 1]);
        assert_eq!(m.to_dense(), dmatrix![2.0, 0.0; 0.0, 0.0; 4.0, 0.0]);
    }

    #[test]
    fn products_match_dense() {
        let d = dmatrix![1.0, 0.0, -2.0; 0.0, 3.0, 0.0; 4.0, 0.5, 0.0; 0.0, 0.0, 1.5];
        let s = CscMatrix::from_dense(&d, 0.0);
        let x = [1.0, -1.0, 2.0];
        let mut y = vec![0.0; 4];
        s.mul_vec(&x, &mut y);
        assert_eq!(DVector::from_vec(y), &d * DVector::from_row_slice(&x));
        let z = [0.5, 1.0, -1.0, 2.0];
        let mut w = vec![0.0; 3];
        s.tmul_vec(&z, &mut w);
        assert_eq!(
            DVector::from_vec(w),
            d.transpose() * DVector::from_row_slice(&z)
        );
        assert_eq!(s.transpose().to_dense(), d.transpose());
        assert_eq!(s.get(2, 1), 0.5);
        assert_eq!(s.get(1, 0), 0.0);
    }

    #[test]
    fn norms_and_scaling() {
        let d = dmatrix![1.0, -5.0; 2.0, 0.0];
        let mut s = CscMatrix::from_dense(&d, 0.0);
        assert_eq!(s.col_inf_norms(), vec![2.0, 5.0]);
        assert_eq!(s.row_inf_norms(), vec![5.0, 2.0]);
        s.scale(&[2.0, 1.0], &[1.0, 0.1]);
        assert_eq!(s.to_dense(), dmatrix![2.0, -1.0; 2.0, 0.0]);
        assert!(!s.is_symmetric(1e-12));
        assert!(CscMatrix::identity(3).is_symmetric(0.0));
    }
}
