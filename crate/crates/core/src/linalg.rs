//! Thin helpers over `faer`: sparse construction, sub-matrix extraction,
//! mat-vec products and reusable factorizations operating on `&[f64]`.

use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Mat, MatMut, MatRef, Side};

use crate::error::{Error, Result};

pub type SpMat = SparseColMat<usize, f64>;

/// Duplicates are summed in input order, so equal contribution sequences give
/// bit-identical entries.
pub fn from_triplets(nrows: usize, ncols: usize, entries: &[(usize, usize, f64)]) -> SpMat {
    let mut sorted = entries.to_vec();
    sorted.sort_by_key(|&(r, c, _)| (c, r));
    let mut t: Vec<Triplet<usize, usize, f64>> = Vec::with_capacity(sorted.len());
    for (r, c, v) in sorted {
        match t.last_mut() {
            Some(last) if last.row == r && last.col == c => last.val += v,
            _ => t.push(Triplet::new(r, c, v)),
        }
    }
    SparseColMat::try_new_from_triplets(nrows, ncols, &t)
        .expect("triplet indices are within the declared shape")
}

/// Iterate `(row, col, value)` over stored entries.
pub fn entries(a: &SpMat) -> impl Iterator<Item = (usize, usize, f64)> + '_ {
    let cp = a.symbolic().col_ptr();
    let ri = a.symbolic().row_idx();
    let val = a.val();
    (0..a.ncols()).flat_map(move |j| (cp[j]..cp[j + 1]).map(move |k| (ri[k], j, val[k])))
}

pub fn spmv(a: &SpMat, x: &[f64]) -> Vec<f64> {
    let mut y = vec![0.0; a.nrows()];
    spmv_acc(a, x, &mut y);
    y
}

/// `y += A x`
pub fn spmv_acc(a: &SpMat, x: &[f64], y: &mut [f64]) {
    debug_assert_eq!(x.len(), a.ncols());
    let cp = a.symbolic().col_ptr();
    let ri = a.symbolic().row_idx();
    let val = a.val();
    for j in 0..a.ncols() {
        let xj = x[j];
        if xj == 0.0 {
            continue;
        }
        for k in cp[j]..cp[j + 1] {
            y[ri[k]] += val[k] * xj;
        }
    }
}

/// `y = A^T x`
pub fn spmv_t(a: &SpMat, x: &[f64]) -> Vec<f64> {
    let cp = a.symbolic().col_ptr();
    let ri = a.symbolic().row_idx();
    let val = a.val();
    (0..a.ncols())
        .map(|j| (cp[j]..cp[j + 1]).map(|k| val[k] * x[ri[k]]).sum())
        .collect()
}

pub fn quad_form(a: &SpMat, x: &[f64]) -> f64 {
    dot(x, &spmv(a, x))
}

pub fn bilinear(a: &SpMat, x: &[f64], y: &[f64]) -> f64 {
    dot(x, &spmv(a, y))
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

/// Lookup table `global -> local` with `usize::MAX` for absent indices.
pub fn index_map(len: usize, indices: &[usize]) -> Vec<usize> {
    let mut map = vec![usize::MAX; len];
    for (k, &g) in indices.iter().enumerate() {
        map[g] = k;
    }
    map
}

/// `A[rows, cols]` in the order given.
pub fn submatrix(a: &SpMat, rows: &[usize], cols: &[usize]) -> SpMat {
    let rmap = index_map(a.nrows(), rows);
    let cp = a.symbolic().col_ptr();
    let ri = a.symbolic().row_idx();
    let val = a.val();
    let mut t = Vec::new();
    for (jl, &j) in cols.iter().enumerate() {
        for k in cp[j]..cp[j + 1] {
            let il = rmap[ri[k]];
            if il != usize::MAX {
                t.push((il, jl, val[k]));
            }
        }
    }
    from_triplets(rows.len(), cols.len(), &t)
}

pub fn gather(x: &[f64], idx: &[usize]) -> Vec<f64> {
    idx.iter().map(|&i| x[i]).collect()
}

pub fn scatter(len: usize, idx: &[usize], vals: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; len];
    for (&i, &v) in idx.iter().zip(vals) {
        out[i] = v;
    }
    out
}

/// Largest `|A_ij - A_ji|`.
pub fn max_asymmetry(a: &SpMat) -> f64 {
    let at = transpose(a);
    let mut diff = 0.0f64;
    for (r, c, v) in entries(a) {
        diff = diff.max((v - at_entry(&at, r, c)).abs());
    }
    for (r, c, v) in entries(&at) {
        diff = diff.max((v - at_entry(a, r, c)).abs());
    }
    diff
}

fn at_entry(a: &SpMat, r: usize, c: usize) -> f64 {
    let cp = a.symbolic().col_ptr();
    let ri = &a.symbolic().row_idx()[cp[c]..cp[c + 1]];
    match ri.binary_search(&r) {
        Ok(k) => a.val()[cp[c] + k],
        Err(_) => 0.0,
    }
}

pub fn transpose(a: &SpMat) -> SpMat {
    let t: Vec<_> = entries(a).map(|(r, c, v)| (c, r, v)).collect();
    from_triplets(a.ncols(), a.nrows(), &t)
}

pub fn vec_as_mat(x: &mut [f64]) -> MatMut<'_, f64> {
    let n = x.len();
    MatMut::from_column_major_slice_mut(x, n, 1)
}

fn relative_residual(a: &SpMat, x: &[f64], b: &[f64]) -> f64 {
    let ax = spmv(a, x);
    let r: f64 = ax
        .iter()
        .zip(b)
        .map(|(p, q)| (p - q) * (p - q))
        .sum::<f64>()
        .sqrt();
    let nb = norm2(b);
    if nb == 0.0 {
        r
    } else {
        r / nb
    }
}

enum Factor {
    Llt(faer::sparse::linalg::solvers::Llt<usize, f64>),
    Lu(faer::sparse::linalg::solvers::Lu<usize, f64>),
}

/// Symmetric equilibration `D A D` with `d_i = 1/sqrt(max_j |a_ij|)`.
pub(crate) fn equilibrate(a: &SpMat) -> (SpMat, Vec<f64>) {
    let mut rmax = vec![0.0f64; a.nrows()];
    for (r, _, v) in entries(a) {
        rmax[r] = rmax[r].max(v.abs());
    }
    let d: Vec<f64> = rmax
        .iter()
        .map(|&m| if m > 0.0 && m.is_finite() { 1.0 / m.sqrt() } else { 1.0 })
        .collect();
    let mut scaled = a.clone();
    let cp = a.symbolic().col_ptr().to_vec();
    let ri = a.symbolic().row_idx().to_vec();
    let val = scaled.val_mut();
    for j in 0..a.ncols() {
        for k in cp[j]..cp[j + 1] {
            val[k] *= d[ri[k]] * d[j];
        }
    }
    (scaled, d)
}

/// Sparse direct solver on the equilibrated system. Residuals are checked on
/// the scaled system, with iterative refinement when a solve misses the
/// tolerance.
pub struct SparseSolver {
    matrix: SpMat,
    scale: Vec<f64>,
    factor: Factor,
    tolerance: f64,
    label: &'static str,
}

impl SparseSolver {
    /// Cholesky; `a` must be symmetric positive definite (lower triangle is read).
    pub fn spd(a: SpMat, tolerance: f64, label: &'static str) -> Result<Self> {
        let (matrix, scale) = equilibrate(&a);
        let f = matrix
            .sp_cholesky(Side::Lower)
            .map_err(|e| Error::solver(format!("{label}: Cholesky failed ({e:?})"), f64::NAN))?;
        Ok(Self {
            matrix,
            scale,
            factor: Factor::Llt(f),
            tolerance,
            label,
        })
    }

    /// LU with partial pivoting for general square matrices.
    pub fn general(a: SpMat, tolerance: f64, label: &'static str) -> Result<Self> {
        let (matrix, scale) = equilibrate(&a);
        let f = matrix
            .sp_lu()
            .map_err(|e| Error::solver(format!("{label}: LU failed ({e:?})"), f64::NAN))?;
        Ok(Self {
            matrix,
            scale,
            factor: Factor::Lu(f),
            tolerance,
            label,
        })
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    fn apply_inverse(&self, rhs: MatMut<'_, f64>) {
        match &self.factor {
            Factor::Llt(f) => f.solve_in_place(rhs),
            Factor::Lu(f) => f.solve_in_place(rhs),
        }
    }

    /// Unchecked solve of several right-hand sides stored as columns.
    pub fn solve_mat(&self, rhs: MatRef<'_, f64>) -> Mat<f64> {
        let d = &self.scale;
        let mut out = Mat::from_fn(rhs.nrows(), rhs.ncols(), |i, j| d[i] * rhs[(i, j)]);
        self.apply_inverse(out.as_mut());
        for j in 0..out.ncols() {
            for i in 0..out.nrows() {
                out[(i, j)] *= d[i];
            }
        }
        out
    }

    pub fn solve(&self, b: &[f64]) -> Result<Vec<f64>> {
        let d = &self.scale;
        let bs: Vec<f64> = b.iter().zip(d).map(|(v, s)| v * s).collect();
        let mut y = bs.clone();
        self.apply_inverse(vec_as_mat(&mut y));
        let mut res = relative_residual(&self.matrix, &y, &bs);
        let mut sweeps = 0;
        while !(res <= self.tolerance) && sweeps < 3 {
            let ay = spmv(&self.matrix, &y);
            let mut r: Vec<f64> = bs.iter().zip(&ay).map(|(p, q)| p - q).collect();
            self.apply_inverse(vec_as_mat(&mut r));
            for (yi, ri) in y.iter_mut().zip(&r) {
                *yi += ri;
            }
            res = relative_residual(&self.matrix, &y, &bs);
            sweeps += 1;
        }
        if res <= self.tolerance {
            Ok(y.iter().zip(d).map(|(v, s)| v * s).collect())
        } else {
            Err(Error::solver(self.label, res))
        }
    }
}

/// Dense Cholesky that reports the first column whose pivot collapses.
/// Used to detect linearly dependent basis columns.
pub fn cholesky_first_breakdown(a: MatRef<'_, f64>, rel_tol: f64) -> Option<usize> {
    let n = a.nrows();
    let mut l = a.to_owned();
    for j in 0..n {
        let mut d = l[(j, j)];
        for k in 0..j {
            d -= l[(j, k)] * l[(j, k)];
        }
        if !(d > rel_tol * a[(j, j)].abs()) {
            return Some(j);
        }
        let d = d.sqrt();
        l[(j, j)] = d;
        for i in j + 1..n {
            let mut s = l[(i, j)];
            for k in 0..j {
                s -= l[(i, k)] * l[(j, k)];
            }
            l[(i, j)] = s / d;
        }
    }
    None
}

#[cfg(test)]
mod tests {
    use super::*;

    fn laplace_1d(n: usize) -> SpMat {
        let mut t = Vec::new();
        for i in 0..n {
            t.push((i, i, 2.0));
            if i + 1 < n {
                t.push((i, i + 1, -1.0));
                t.push((i + 1, i, -1.0));
            }
        }
        from_triplets(n, n, &t)
    }

    #[test]
    fn duplicates_are_summed() {
        let a = from_triplets(2, 2, &[(0, 0, 1.0), (0, 0, 2.0), (1, 0, 1.0)]);
        assert_eq!(spmv(&a, &[1.0, 0.0]), vec![3.0, 1.0]);
        assert_eq!(spmv_t(&a, &[1.0, 1.0]), vec![4.0, 0.0]);
    }

    #[test]
    fn spd_and_lu_agree() {
        let a = laplace_1d(30);
        let b: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        let x1 = SparseSolver::spd(a.clone(), 1e-12, "t").unwrap().solve(&b).unwrap();
        let x2 = SparseSolver::general(a, 1e-12, "t").unwrap().solve(&b).unwrap();
        for (p, q) in x1.iter().zip(&x2) {
            assert!((p - q).abs() < 1e-10);
        }
    }

    #[test]
    fn submatrix_picks_entries() {
        let a = laplace_1d(5);
        let s = submatrix(&a, &[1, 2], &[2, 3]);
        assert_eq!(spmv(&s, &[1.0, 0.0]), vec![-1.0, 2.0]);
        assert_eq!(spmv(&s, &[0.0, 1.0]), vec![0.0, -1.0]);
        assert_eq!(max_asymmetry(&a), 0.0);
    }

    #[test]
    fn detects_dependent_columns() {
        let m = Mat::<f64>::from_fn(3, 3, |i, j| [[1.0, 1.0, 0.0], [1.0, 1.0, 0.0], [0.0, 0.0, 1.0]][i][j]);
        assert_eq!(cholesky_first_breakdown(m.as_ref(), 1e-12), Some(1));
        let id = Mat::<f64>::identity(3, 3);
        assert_eq!(cholesky_first_breakdown(id.as_ref(), 1e-12), None);
    }
}
