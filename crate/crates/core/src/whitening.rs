//! Reduction of the mixed model to an ordinary penalized least-squares problem:
//! `ỹ = H^{-1/2}(y − S v̂)`, `T̃ = H^{-1/2} T`, and per-gene orthonormalization.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{StackedProblem, VarianceComponents};
use crate::reml::EigenK;

/// `H^{-1/2} M` with the symmetric inverse square root of
/// `H = Σg ⊗ K + Σe ⊗ I`, for a trait-major (n·m) × c matrix M.
pub fn h_inv_sqrt_apply(vc: &VarianceComponents, eig: &EigenK, mat: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = eig.n();
    let m = vc.m();
    if mat.nrows() != n * m {
        return Err(Error::invalid("matrix rows do not match n·m"));
    }
    let mut rot = eig.rotate(mat);
    for i in 0..n {
        let blk = linalg::spd_block(&eig.block(vc, i))?;
        for c in 0..mat.ncols() {
            let v = DVector::from_fn(m, |l, _| rot[(l * n + i, c)]);
            let w = &blk.inv_sqrt * v;
            for l in 0..m {
                rot[(l * n + i, c)] = w[l];
            }
        }
    }
    Ok(eig.unrotate(&rot))
}

#[derive(Debug, Clone, Copy, Default)]
pub struct WhitenOptions {
    /// Fail on a rank-deficient group instead of adding jitter.
    pub strict: bool,
}

#[derive(Debug, Clone)]
pub struct WhitenedGroup {
    pub gene_id: String,
    /// Orthonormalized block with `VᵀV/n = I`.
    pub v: DMatrix<f64>,
    /// Upper-triangular factor, `T̃_j = V_j R_j`.
    pub r: DMatrix<f64>,
    /// False for an all-zero block, which can never enter the model.
    pub active: bool,
}

#[derive(Debug, Clone)]
pub struct WhitenedProblem {
    pub n: usize,
    pub m: usize,
    pub y_tilde: DVector<f64>,
    pub groups: Vec<WhitenedGroup>,
    pub warnings: Vec<String>,
}

impl WhitenedProblem {
    pub fn p(&self) -> usize {
        self.groups.len()
    }

    /// Group size (columns per gene).
    pub fn group_size(&self) -> usize {
        self.groups.first().map_or(self.m, |g| g.v.ncols())
    }

    pub fn t_tilde_group(&self, j: usize) -> DMatrix<f64> {
        &self.groups[j].v * &self.groups[j].r
    }

    /// Build directly from whitened response and design blocks.
    pub fn from_blocks(
        n: usize,
        m: usize,
        y_tilde: DVector<f64>,
        blocks: Vec<(String, DMatrix<f64>)>,
        opts: WhitenOptions,
    ) -> Result<Self> {
        let mut warnings = Vec::new();
        let mut groups = Vec::with_capacity(blocks.len());
        for (gene_id, t) in blocks {
            groups.push(orthonormalize(gene_id, t, n, opts, &mut warnings)?);
        }
        Ok(Self { n, m, y_tilde, groups, warnings })
    }
}

fn orthonormalize(
    gene_id: String,
    t: DMatrix<f64>,
    n: usize,
    opts: WhitenOptions,
    warnings: &mut Vec<String>,
) -> Result<WhitenedGroup> {
    let k = t.ncols();
    let mut sigma = linalg::symmetrize(&(t.tr_mul(&t) / n as f64));
    let tr = sigma.trace();
    if !(tr > 1e-300) {
        return Ok(WhitenedGroup { gene_id, v: DMatrix::zeros(t.nrows(), k), r: DMatrix::identity(k, k), active: false });
    }
    if linalg::min_eigenvalue(&sigma) < 1e-10 * tr / k as f64 {
        if opts.strict {
            return Err(Error::RankDeficientGroup(gene_id));
        }
        let jitter = 1e-8 * tr / k as f64;
        for a in 0..k {
            sigma[(a, a)] += jitter;
        }
        warnings.push(format!("gene `{gene_id}`: rank-deficient design block, added jitter {jitter:e}"));
    }
    let chol = sigma.cholesky().ok_or_else(|| Error::RankDeficientGroup(gene_id.clone()))?;
    let r = chol.l().transpose();
    let r_inv = r
        .clone()
        .solve_upper_triangular(&DMatrix::identity(k, k))
        .ok_or_else(|| Error::RankDeficientGroup(gene_id.clone()))?;
    let v = &t * r_inv;
    Ok(WhitenedGroup { gene_id, v, r, active: true })
}

/// Whiten a stacked problem at fixed variance components and GLS fixed effects.
pub fn whiten_problem(
    problem: &StackedProblem,
    v_hat: &DVector<f64>,
    vc: &VarianceComponents,
    eig: &EigenK,
    opts: WhitenOptions,
) -> Result<WhitenedProblem> {
    if problem.p == 0 {
        return Err(Error::EmptyDesign);
    }
    let resid = &problem.y - &problem.s * v_hat;
    let y_tilde = h_inv_sqrt_apply(vc, eig, &DMatrix::from_column_slice(resid.len(), 1, resid.as_slice()))?
        .column(0)
        .into_owned();
    let t_tilde = h_inv_sqrt_apply(vc, eig, &problem.t)?;
    let blocks = (0..problem.p)
        .map(|j| (problem.gene_ids[j].clone(), t_tilde.columns(j * problem.m, problem.m).into_owned()))
        .collect();
    WhitenedProblem::from_blocks(problem.n, problem.m, y_tilde, blocks, opts)
}

/// Original-scale coefficients `B_j = R_j⁻¹ β_j`, one row per gene.
pub fn backtransform_coefficients(beta: &[DVector<f64>], groups: &[WhitenedGroup]) -> DMatrix<f64> {
    let k = groups.first().map_or(0, |g| g.r.nrows());
    let mut b = DMatrix::zeros(groups.len(), k);
    for (j, (bj, g)) in beta.iter().zip(groups).enumerate() {
        if bj.iter().all(|&v| v == 0.0) {
            continue;
        }
        let sol = g.r.solve_upper_triangular(bj).expect("triangular factor is nonsingular");
        b.row_mut(j).copy_from(&sol.transpose());
    }
    b
}
