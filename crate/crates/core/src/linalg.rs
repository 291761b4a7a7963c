//! Small dense linear-algebra helpers on top of nalgebra.

use nalgebra::{DMatrix, DVector, SymmetricEigen};

use crate::error::{Error, Result};

/// Symmetric eigendecomposition with eigenvalues sorted in descending order and
/// each eigenvector signed so its largest-magnitude entry is positive.
pub fn sym_eigen_sorted(a: &DMatrix<f64>) -> (DVector<f64>, DMatrix<f64>) {
    let n = a.nrows();
    let sym = symmetrize(a);
    let eig = SymmetricEigen::new(sym);
    let mut order: Vec<usize> = (0..n).collect();
    // stable sort keeps ties in the solver's order
    order.sort_by(|&i, &j| eig.eigenvalues[j].total_cmp(&eig.eigenvalues[i]));
    let mut vals = DVector::zeros(n);
    let mut vecs = DMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vals[dst] = eig.eigenvalues[src];
        let col = eig.eigenvectors.column(src);
        let mut pivot = 0;
        for r in 0..n {
            if col[r].abs() > col[pivot].abs() + 1e-12 {
                pivot = r;
            }
        }
        let sign = if col[pivot] < 0.0 { -1.0 } else { 1.0 };
        for r in 0..n {
            vecs[(r, dst)] = sign * col[r];
        }
    }
    (vals, vecs)
}

pub fn symmetrize(a: &DMatrix<f64>) -> DMatrix<f64> {
    (a + a.transpose()) * 0.5
}

pub fn max_asymmetry(a: &DMatrix<f64>) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 0..a.nrows() {
        for j in 0..i {
            worst = worst.max((a[(i, j)] - a[(j, i)]).abs());
        }
    }
    worst
}

pub fn min_eigenvalue(a: &DMatrix<f64>) -> f64 {
    if a.nrows() == 0 {
        return 0.0;
    }
    SymmetricEigen::new(symmetrize(a))
        .eigenvalues
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
}

/// Apply `f` to the spectrum of a symmetric matrix: U f(Λ) Uᵀ.
pub fn sym_apply(a: &DMatrix<f64>, f: impl Fn(f64) -> f64) -> DMatrix<f64> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let mut d = eig.eigenvectors.clone();
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        let s = f(lam);
        d.column_mut(j).scale_mut(s);
    }
    &d * eig.eigenvectors.transpose()
}

/// Clip negative eigenvalues of a symmetric matrix at `floor`.
pub fn project_eigen_floor(a: &DMatrix<f64>, floor: f64) -> DMatrix<f64> {
    symmetrize(&sym_apply(a, |l| l.max(floor)))
}

/// Inverse and symmetric inverse square root of a small SPD block, with a
/// condition-number guard.
pub struct SpdBlock {
    pub inv: DMatrix<f64>,
    pub inv_sqrt: DMatrix<f64>,
    pub log_det: f64,
}

pub const MAX_CONDITION: f64 = 1e12;

pub fn spd_block(a: &DMatrix<f64>) -> Result<SpdBlock> {
    let eig = SymmetricEigen::new(symmetrize(a));
    let lmax = eig.eigenvalues.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lmin = eig.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min);
    if !(lmin > 0.0) || !(lmax / lmin <= MAX_CONDITION) {
        let cond = if lmin > 0.0 { lmax / lmin } else { f64::INFINITY };
        return Err(Error::SingularH(cond));
    }
    let k = a.nrows();
    let u = &eig.eigenvectors;
    let mut inv = DMatrix::zeros(k, k);
    let mut inv_sqrt = DMatrix::zeros(k, k);
    let mut log_det = 0.0;
    for (j, &lam) in eig.eigenvalues.iter().enumerate() {
        log_det += lam.ln();
        let col = u.column(j);
        let outer = &col * col.transpose();
        inv += &outer / lam;
        inv_sqrt += &outer / lam.sqrt();
    }
    Ok(SpdBlock {
        inv: symmetrize(&inv),
        inv_sqrt: symmetrize(&inv_sqrt),
        log_det,
    })
}

/// Solve `a x = b` for symmetric positive (semi)definite `a`, falling back to a
/// ridge-regularized solve when the Cholesky factorization fails.
pub fn solve_spd(a: &DMatrix<f64>, b: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        return Ok(ch.solve(b));
    }
    let scale = a.diagonal().iter().map(|v| v.abs()).fold(0.0, f64::max).max(1e-300);
    let mut ridge = 1e-12 * scale;
    for _ in 0..8 {
        let mut reg = a.clone();
        for i in 0..reg.nrows() {
            reg[(i, i)] += ridge;
        }
        if let Some(ch) = reg.cholesky() {
            return Ok(ch.solve(b));
        }
        ridge *= 100.0;
    }
    Err(Error::Numerical("matrix is not positive definite".into()))
}

pub fn inverse_spd(a: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    solve_spd(a, &DMatrix::identity(a.nrows(), a.nrows()))
}

/// Numerical column rank via singular values relative to the largest.
pub fn column_rank(a: &DMatrix<f64>, rel_tol: f64) -> usize {
    if a.ncols() == 0 {
        return 0;
    }
    let sv = a.clone().svd(false, false).singular_values;
    let smax = sv.iter().copied().fold(0.0, f64::max);
    if smax == 0.0 {
        return 0;
    }
    sv.iter().filter(|&&s| s > rel_tol * smax).count()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Sample standard deviation (n - 1 denominator); zero for fewer than two values.
pub fn sample_sd(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let mu = mean(xs);
    (xs.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / (xs.len() - 1) as f64).sqrt()
}
