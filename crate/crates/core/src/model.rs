//! Domain types shared across the crate and assembly of the stacked
//! multi-trait design.
//!
//! Traits are stacked trait-major: `y = (y⁽¹⁾; …; y⁽ᵐ⁾)`, so the marginal
//! covariance is `H = Σg ⊗ K + Σe ⊗ I`. Gene coefficients are laid out
//! group-major: the `m` coefficients of gene `j` occupy positions
//! `j·m .. (j+1)·m`.

use std::collections::{BTreeMap, HashSet};

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

fn check_unique(ids: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(ids.len());
    for id in ids {
        if !seen.insert(id.as_str()) {
            return Err(Error::DuplicateId(id.clone()));
        }
    }
    Ok(())
}

fn check_finite(m: &DMatrix<f64>, what: &str) -> Result<()> {
    if m.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid(format!("{what} contains non-finite entries")));
    }
    Ok(())
}

fn select_rows(m: &DMatrix<f64>, rows: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(rows.len(), m.ncols(), |i, j| m[(rows[i], j)])
}

/// Traits and fixed covariates for `n` subjects.
#[derive(Debug, Clone, PartialEq)]
pub struct PhenotypeTable {
    pub subject_ids: Vec<String>,
    pub trait_names: Vec<String>,
    /// n × m
    pub y: DMatrix<f64>,
    pub covariate_names: Vec<String>,
    /// n × q, leading column is the intercept
    pub w: DMatrix<f64>,
}

impl PhenotypeTable {
    pub fn new(
        subject_ids: Vec<String>,
        trait_names: Vec<String>,
        y: DMatrix<f64>,
        covariate_names: Vec<String>,
        w: DMatrix<f64>,
    ) -> Result<Self> {
        let n = subject_ids.len();
        if n < 2 {
            return Err(Error::invalid("phenotype table needs at least two subjects"));
        }
        if y.nrows() != n || w.nrows() != n {
            return Err(Error::invalid("phenotype rows do not match subject ids"));
        }
        if y.ncols() == 0 || y.ncols() != trait_names.len() {
            return Err(Error::invalid("trait columns do not match trait names"));
        }
        if w.ncols() == 0 || w.ncols() != covariate_names.len() {
            return Err(Error::invalid("covariate columns do not match covariate names"));
        }
        check_unique(&subject_ids)?;
        check_finite(&y, "trait matrix")?;
        check_finite(&w, "covariate matrix")?;
        if linalg::column_rank(&w, 1e-10) < w.ncols() {
            return Err(Error::invalid("covariate matrix is not of full column rank"));
        }
        Ok(Self { subject_ids, trait_names, y, covariate_names, w })
    }

    /// Table whose only covariate is the intercept.
    pub fn intercept_only(subject_ids: Vec<String>, trait_names: Vec<String>, y: DMatrix<f64>) -> Result<Self> {
        let w = DMatrix::from_element(y.nrows(), 1, 1.0);
        Self::new(subject_ids, trait_names, y, vec!["intercept".into()], w)
    }

    /// Prepend an intercept column to raw covariates.
    pub fn with_covariates(
        subject_ids: Vec<String>,
        trait_names: Vec<String>,
        y: DMatrix<f64>,
        covariate_names: Vec<String>,
        covariates: DMatrix<f64>,
    ) -> Result<Self> {
        let n = y.nrows();
        if covariates.nrows() != n {
            return Err(Error::invalid("covariate rows do not match trait rows"));
        }
        let mut w = DMatrix::from_element(n, covariates.ncols() + 1, 1.0);
        w.columns_mut(1, covariates.ncols()).copy_from(&covariates);
        let mut names = vec!["intercept".to_string()];
        names.extend(covariate_names);
        Self::new(subject_ids, trait_names, y, names, w)
    }

    pub fn n(&self) -> usize {
        self.y.nrows()
    }
    pub fn m(&self) -> usize {
        self.y.ncols()
    }
    pub fn q(&self) -> usize {
        self.w.ncols()
    }

    /// Scale every trait to mean 0 and unit sample variance. Constant traits are
    /// only centered.
    pub fn standardize_traits(&self) -> Self {
        let mut out = self.clone();
        for l in 0..self.m() {
            let col: Vec<f64> = self.y.column(l).iter().copied().collect();
            let mu = linalg::mean(&col);
            let sd = linalg::sample_sd(&col);
            let s = if sd > 0.0 { sd } else { 1.0 };
            for i in 0..self.n() {
                out.y[(i, l)] = (self.y[(i, l)] - mu) / s;
            }
        }
        out
    }

    /// Single-trait view of trait `l`.
    pub fn select_trait(&self, l: usize) -> Self {
        Self {
            subject_ids: self.subject_ids.clone(),
            trait_names: vec![self.trait_names[l].clone()],
            y: self.y.columns(l, 1).into_owned(),
            covariate_names: self.covariate_names.clone(),
            w: self.w.clone(),
        }
    }

    pub fn select_subjects(&self, rows: &[usize]) -> Self {
        Self {
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            trait_names: self.trait_names.clone(),
            y: select_rows(&self.y, rows),
            covariate_names: self.covariate_names.clone(),
            w: select_rows(&self.w, rows),
        }
    }
}

/// Raw SNP dosages; `NaN` marks a missing call.
#[derive(Debug, Clone, PartialEq)]
pub struct GenotypeMatrix {
    pub subject_ids: Vec<String>,
    pub snp_ids: Vec<String>,
    /// n × s
    pub dosages: DMatrix<f64>,
}

impl GenotypeMatrix {
    pub fn new(subject_ids: Vec<String>, snp_ids: Vec<String>, dosages: DMatrix<f64>) -> Result<Self> {
        if dosages.nrows() != subject_ids.len() || dosages.ncols() != snp_ids.len() {
            return Err(Error::invalid("genotype dimensions do not match ids"));
        }
        check_unique(&subject_ids)?;
        check_unique(&snp_ids)?;
        for v in dosages.iter() {
            if !v.is_nan() && !(0.0..=2.0).contains(v) {
                return Err(Error::invalid(format!("dosage {v} outside [0, 2]")));
            }
        }
        Ok(Self { subject_ids, snp_ids, dosages })
    }

    pub fn n(&self) -> usize {
        self.dosages.nrows()
    }
    pub fn n_snps(&self) -> usize {
        self.dosages.ncols()
    }
}

/// Gene-level genetic scores, columns centered to mean zero.
#[derive(Debug, Clone, PartialEq)]
pub struct GeneScoreMatrix {
    pub subject_ids: Vec<String>,
    pub gene_ids: Vec<String>,
    /// n × p
    pub x: DMatrix<f64>,
}

impl GeneScoreMatrix {
    /// Validates shapes and centers every column.
    pub fn new(subject_ids: Vec<String>, gene_ids: Vec<String>, mut x: DMatrix<f64>) -> Result<Self> {
        if x.nrows() != subject_ids.len() || x.ncols() != gene_ids.len() {
            return Err(Error::invalid("gene score dimensions do not match ids"));
        }
        check_unique(&subject_ids)?;
        check_unique(&gene_ids)?;
        check_finite(&x, "gene score matrix")?;
        let n = x.nrows() as f64;
        for mut col in x.column_iter_mut() {
            let mu = col.sum() / n;
            col.add_scalar_mut(-mu);
        }
        Ok(Self { subject_ids, gene_ids, x })
    }

    pub fn n(&self) -> usize {
        self.x.nrows()
    }
    pub fn p(&self) -> usize {
        self.x.ncols()
    }
}

/// Genetic relatedness matrix K (twice the kinship coefficients).
#[derive(Debug, Clone, PartialEq)]
pub struct KinshipMatrix {
    pub subject_ids: Vec<String>,
    pub k: DMatrix<f64>,
}

impl KinshipMatrix {
    /// Validates symmetry to 1e-10 and stores the exactly symmetrized matrix.
    /// Positive semidefiniteness is checked when the matrix is decomposed.
    pub fn new(subject_ids: Vec<String>, k: DMatrix<f64>) -> Result<Self> {
        if k.nrows() != subject_ids.len() || k.ncols() != subject_ids.len() {
            return Err(Error::invalid("kinship dimensions do not match ids"));
        }
        check_unique(&subject_ids)?;
        check_finite(&k, "kinship matrix")?;
        if linalg::max_asymmetry(&k) > 1e-10 {
            return Err(Error::invalid("kinship matrix is not symmetric"));
        }
        Ok(Self { subject_ids, k: linalg::symmetrize(&k) })
    }

    pub fn identity(subject_ids: Vec<String>) -> Self {
        let n = subject_ids.len();
        Self { subject_ids, k: DMatrix::identity(n, n) }
    }

    pub fn n(&self) -> usize {
        self.k.nrows()
    }

    pub fn select_subjects(&self, rows: &[usize]) -> Self {
        Self {
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            k: DMatrix::from_fn(rows.len(), rows.len(), |i, j| self.k[(rows[i], rows[j])]),
        }
    }

    /// Rectangular block K[rows, cols].
    pub fn block(&self, rows: &[usize], cols: &[usize]) -> DMatrix<f64> {
        DMatrix::from_fn(rows.len(), cols.len(), |i, j| self.k[(rows[i], cols[j])])
    }

    pub fn index_of(&self) -> BTreeMap<&str, usize> {
        self.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect()
    }
}

/// Genetic and residual trait covariance matrices, H = Σg ⊗ K + Σe ⊗ I.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawVarianceComponents", into = "RawVarianceComponents")]
pub struct VarianceComponents {
    pub sigma_g: DMatrix<f64>,
    pub sigma_e: DMatrix<f64>,
}

#[derive(Serialize, Deserialize)]
struct RawVarianceComponents {
    sigma_g: Vec<Vec<f64>>,
    sigma_e: Vec<Vec<f64>>,
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

fn from_rows(rows: &[Vec<f64>]) -> std::result::Result<DMatrix<f64>, String> {
    let k = rows.len();
    if rows.iter().any(|r| r.len() != k) {
        return Err("covariance matrix must be square".into());
    }
    Ok(DMatrix::from_fn(k, k, |i, j| rows[i][j]))
}

impl From<VarianceComponents> for RawVarianceComponents {
    fn from(v: VarianceComponents) -> Self {
        Self { sigma_g: rows_of(&v.sigma_g), sigma_e: rows_of(&v.sigma_e) }
    }
}

impl TryFrom<RawVarianceComponents> for VarianceComponents {
    type Error = String;
    fn try_from(r: RawVarianceComponents) -> std::result::Result<Self, String> {
        VarianceComponents::new(from_rows(&r.sigma_g)?, from_rows(&r.sigma_e)?).map_err(|e| e.to_string())
    }
}

impl VarianceComponents {
    pub fn new(sigma_g: DMatrix<f64>, sigma_e: DMatrix<f64>) -> Result<Self> {
        let m = sigma_e.nrows();
        if sigma_g.shape() != (m, m) || sigma_e.shape() != (m, m) || m == 0 {
            return Err(Error::invalid("variance components must be matching square matrices"));
        }
        let scale = sigma_e.abs().max().max(sigma_g.abs().max()).max(1e-300);
        if linalg::max_asymmetry(&sigma_g) > 1e-10 * scale || linalg::max_asymmetry(&sigma_e) > 1e-10 * scale {
            return Err(Error::invalid("variance components must be symmetric"));
        }
        let sigma_g = linalg::symmetrize(&sigma_g);
        let sigma_e = linalg::symmetrize(&sigma_e);
        if sigma_e.clone().cholesky().is_none() {
            return Err(Error::invalid("residual covariance is not positive definite"));
        }
        if linalg::min_eigenvalue(&sigma_g) < -1e-10 * scale {
            return Err(Error::invalid("genetic covariance is not positive semidefinite"));
        }
        Ok(Self { sigma_g, sigma_e })
    }

    /// Bypasses validation; used internally for feasible iterates.
    pub(crate) fn from_parts(sigma_g: DMatrix<f64>, sigma_e: DMatrix<f64>) -> Self {
        Self { sigma_g, sigma_e }
    }

    /// Σg = 0, Σe = σ²·I.
    pub fn iid(m: usize, sigma2: f64) -> Self {
        Self { sigma_g: DMatrix::zeros(m, m), sigma_e: DMatrix::identity(m, m) * sigma2 }
    }

    pub fn m(&self) -> usize {
        self.sigma_e.nrows()
    }

    /// Trait `l` marginal pair (σ²g, σ²e).
    pub fn trait_pair(&self, l: usize) -> (f64, f64) {
        (self.sigma_g[(l, l)], self.sigma_e[(l, l)])
    }

    /// For m = 2: (σ²g1, σg12, σ²g2, σ²e1, σe12, σ²e2).
    pub fn entries(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for s in [&self.sigma_g, &self.sigma_e] {
            for i in 0..self.m() {
                for j in i..self.m() {
                    out.push(s[(i, j)]);
                }
            }
        }
        out
    }

    /// Dense (nm × nm) covariance H for a given K.
    pub fn dense_h(&self, k: &DMatrix<f64>) -> DMatrix<f64> {
        let n = k.nrows();
        let m = self.m();
        DMatrix::from_fn(n * m, n * m, |r, c| {
            let (l, i) = (r / n, r % n);
            let (t, j) = (c / n, c % n);
            self.sigma_g[(l, t)] * k[(i, j)] + if i == j { self.sigma_e[(l, t)] } else { 0.0 }
        })
    }
}

/// The stacked regression `y = S v + T b + g + e`.
#[derive(Debug, Clone)]
pub struct StackedProblem {
    pub n: usize,
    pub m: usize,
    pub q: usize,
    pub p: usize,
    /// length n·m, trait-major
    pub y: DVector<f64>,
    /// (n·m) × (q·m), block diagonal diag(W, …, W); column `l·q + a`
    pub s: DMatrix<f64>,
    /// (n·m) × (p·m), block diagonal diag(X, …, X) with group-major columns:
    /// column `j·m + l` holds X[:, j] in trait block `l`
    pub t: DMatrix<f64>,
    pub gene_ids: Vec<String>,
}

impl StackedProblem {
    pub fn group_columns(&self, j: usize) -> std::ops::Range<usize> {
        j * self.m..(j + 1) * self.m
    }

    pub fn unstack_y(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.m, |i, l| self.y[l * self.n + i])
    }

    pub fn unstack_w(&self) -> DMatrix<f64> {
        self.s.view((0, 0), (self.n, self.q)).into_owned()
    }

    pub fn unstack_x(&self) -> DMatrix<f64> {
        DMatrix::from_fn(self.n, self.p, |i, j| self.t[(i, j * self.m)])
    }
}

/// Convert a group-major coefficient vector to a p × m matrix.
pub fn coef_to_matrix(b: &DVector<f64>, p: usize, m: usize) -> DMatrix<f64> {
    DMatrix::from_fn(p, m, |j, l| b[j * m + l])
}

pub fn matrix_to_coef(b: &DMatrix<f64>) -> DVector<f64> {
    let (p, m) = b.shape();
    DVector::from_fn(p * m, |k, _| b[(k / m, k % m)])
}

/// Trait-major stacking of an n × m matrix.
pub fn stack_columns(y: &DMatrix<f64>) -> DVector<f64> {
    DVector::from_column_slice(y.as_slice())
}

pub fn stack_problem(pheno: &PhenotypeTable, scores: &GeneScoreMatrix) -> Result<StackedProblem> {
    if pheno.subject_ids != scores.subject_ids {
        return Err(Error::invalid("phenotype and gene-score subjects are not aligned"));
    }
    let (n, m, q, p) = (pheno.n(), pheno.m(), pheno.q(), scores.p());
    let y = stack_columns(&pheno.y);
    let mut s = DMatrix::zeros(n * m, q * m);
    let mut t = DMatrix::zeros(n * m, p * m);
    for l in 0..m {
        s.view_mut((l * n, l * q), (n, q)).copy_from(&pheno.w);
        for j in 0..p {
            t.view_mut((l * n, j * m + l), (n, 1)).copy_from(&scores.x.column(j));
        }
    }
    Ok(StackedProblem { n, m, q, p, y, s, t, gene_ids: scores.gene_ids.clone() })
}

/// Anything with one row per subject that can be subset by row index.
pub trait SubjectRows: Sized {
    fn subject_ids(&self) -> &[String];
    fn select_subjects(&self, rows: &[usize]) -> Self;
}

impl SubjectRows for PhenotypeTable {
    fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
    fn select_subjects(&self, rows: &[usize]) -> Self {
        PhenotypeTable::select_subjects(self, rows)
    }
}

impl SubjectRows for GeneScoreMatrix {
    fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
    fn select_subjects(&self, rows: &[usize]) -> Self {
        // re-center on the subset
        let x = select_rows(&self.x, rows);
        let ids = rows.iter().map(|&i| self.subject_ids[i].clone()).collect();
        GeneScoreMatrix::new(ids, self.gene_ids.clone(), x).expect("row subset of a valid matrix")
    }
}

impl SubjectRows for GenotypeMatrix {
    fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
    fn select_subjects(&self, rows: &[usize]) -> Self {
        Self {
            subject_ids: rows.iter().map(|&i| self.subject_ids[i].clone()).collect(),
            snp_ids: self.snp_ids.clone(),
            dosages: select_rows(&self.dosages, rows),
        }
    }
}

impl SubjectRows for KinshipMatrix {
    fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }
    fn select_subjects(&self, rows: &[usize]) -> Self {
        KinshipMatrix::select_subjects(self, rows)
    }
}

/// Restrict phenotypes, genotypes (or scores) and kinship to the shared
/// subjects, in lexicographic id order.
pub fn align_subjects<G: SubjectRows>(
    pheno: &PhenotypeTable,
    geno: &G,
    kinship: &KinshipMatrix,
) -> Result<(PhenotypeTable, G, KinshipMatrix)> {
    check_unique(pheno.subject_ids())?;
    check_unique(geno.subject_ids())?;
    check_unique(kinship.subject_ids())?;
    let index = |ids: &[String]| -> BTreeMap<String, usize> {
        ids.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect()
    };
    let pi = index(pheno.subject_ids());
    let gi = index(geno.subject_ids());
    let ki = index(kinship.subject_ids());
    // BTreeMap iteration gives sorted ids
    let common: Vec<&String> = pi.keys().filter(|id| gi.contains_key(*id) && ki.contains_key(*id)).collect();
    if common.is_empty() {
        return Err(Error::EmptyIntersection);
    }
    let rows = |map: &BTreeMap<String, usize>| -> Vec<usize> { common.iter().map(|id| map[*id]).collect() };
    let pheno = pheno.select_subjects(&rows(&pi));
    if pheno.n() < 2 {
        return Err(Error::invalid("fewer than two shared subjects"));
    }
    Ok((pheno, geno.select_subjects(&rows(&gi)), kinship.select_subjects(&rows(&ki))))
}
