//! End-to-end fits: variance components, whitening, path, tuning.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use super::cv::{cross_validate, observed_occurrence_index};
use super::path::{fit_path, PathOptions, PathResult};
use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{stack_problem, GeneScoreMatrix, KinshipMatrix, PhenotypeTable, StackedProblem, VarianceComponents};
use crate::penalties::{PenaltyKind, PenaltySpec};
use crate::reml::{self, eigen_k_matrix, EigenK, Heritability, RemlOptions, RemlState};
use crate::whitening::{whiten_problem, WhitenOptions, WhitenedProblem};

/// How the covariance `H` is obtained.
#[derive(Debug, Clone, PartialEq)]
pub enum CovarianceMode {
    /// AI-REML at b = 0.
    Reml,
    /// Fixed variance components.
    Fixed(VarianceComponents),
    /// `H = I`: the ordinary linear model.
    Identity,
}

#[derive(Debug, Clone)]
pub struct FitOptions {
    pub penalty: PenaltySpec,
    pub path: PathOptions,
    pub folds: usize,
    pub seed: u64,
    pub reml: RemlOptions,
    pub covariance: CovarianceMode,
    pub whiten: WhitenOptions,
    /// Repetitions for the occurrence index; 0 disables it.
    pub ooi_reps: usize,
}

impl FitOptions {
    pub fn new(kind: PenaltyKind) -> Self {
        Self {
            penalty: PenaltySpec::new(kind),
            path: PathOptions::default(),
            folds: 5,
            seed: 1,
            reml: RemlOptions::default(),
            covariance: CovarianceMode::Reml,
            whiten: WhitenOptions::default(),
            ooi_reps: 0,
        }
    }
}

/// Variance components, GLS fixed effects and the whitened design for one
/// set of subjects.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub vc: VarianceComponents,
    pub v_hat: DVector<f64>,
    pub reml: Option<RemlState>,
    pub whitened: WhitenedProblem,
}

fn identity_eigen(n: usize) -> EigenK {
    EigenK { u: DMatrix::identity(n, n), lambda: DVector::from_element(n, 1.0) }
}

pub fn prepare(problem: StackedProblem, k: &DMatrix<f64>, opts: &FitOptions) -> Result<Prepared> {
    let m = problem.m;
    let (eig, vc, v_hat, state) = match &opts.covariance {
        CovarianceMode::Reml => {
            let eig = eigen_k_matrix(k)?;
            let fit = reml::estimate_variance_components(&problem.y, &problem.s, &eig, &opts.reml)?;
            (eig, fit.vc, fit.v_hat, Some(fit.state))
        }
        CovarianceMode::Fixed(vc) => {
            if vc.m() != m {
                return Err(Error::Config(format!("fixed variance components are {}×{}, data have {m} traits", vc.m(), vc.m())));
            }
            let eig = if vc.sigma_g.amax() == 0.0 { identity_eigen(problem.n) } else { eigen_k_matrix(k)? };
            let v_hat = reml::gls_fixed_effects(vc, &problem.y, &problem.s, &eig)?;
            (eig, vc.clone(), v_hat, None)
        }
        CovarianceMode::Identity => {
            let eig = identity_eigen(problem.n);
            let vc = VarianceComponents::from_parts(DMatrix::zeros(m, m), DMatrix::identity(m, m));
            let v_hat = reml::gls_fixed_effects(&vc, &problem.y, &problem.s, &eig)?;
            (eig, vc, v_hat, None)
        }
    };
    let whitened = whiten_problem(&problem, &v_hat, &vc, &eig, opts.whiten)?;
    Ok(Prepared { vc, v_hat, reml: state, whitened })
}

/// Outcome of a tuned fit, serialized as the fit report.
#[derive(Debug, Clone, Serialize)]
pub struct FitResult {
    pub penalty: PenaltySpec,
    pub covariance: String,
    pub gene_ids: Vec<String>,
    pub trait_names: Vec<String>,
    pub variance_components: VarianceComponents,
    pub heritability: Heritability,
    pub reml: Option<RemlState>,
    /// GLS fixed effects, trait-major.
    pub fixed_effects: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub cv_curve: Vec<f64>,
    /// Standard deviation of the fold errors at each evaluated λ.
    pub cv_sd: Vec<f64>,
    pub lambda_index: usize,
    pub lambda_selected: f64,
    /// p × m original-scale coefficients at the selected λ, one row per gene.
    pub coefficients: Vec<Vec<f64>>,
    pub selected_genes: Vec<String>,
    pub ooi: Option<Vec<Vec<f64>>>,
    pub warnings: Vec<String>,
    pub seed: u64,
    pub monotonicity_violations: usize,
    #[serde(skip)]
    pub path: PathResult,
}

impl FitResult {
    pub fn coefficient_matrix(&self) -> DMatrix<f64> {
        let m = self.trait_names.len();
        DMatrix::from_fn(self.gene_ids.len(), m, |j, l| self.coefficients[j][l])
    }
}

fn rows_of(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows()).map(|j| m.row(j).iter().copied().collect()).collect()
}

fn check_inputs(pheno: &PhenotypeTable, scores: &GeneScoreMatrix, kinship: &KinshipMatrix, opts: &FitOptions) -> Result<()> {
    opts.penalty.validate()?;
    if opts.penalty.kind == PenaltyKind::Mcp && pheno.m() > 1 {
        return Err(Error::Config("the mcp penalty is single-trait; select one trait or use a group penalty".into()));
    }
    if scores.p() == 0 {
        return Err(Error::EmptyDesign);
    }
    if pheno.subject_ids != kinship.subject_ids || pheno.subject_ids != scores.subject_ids {
        return Err(Error::invalid("phenotypes, gene scores and kinship are not aligned on subjects"));
    }
    Ok(())
}

/// Prepare the full data and fit the untuned path.
pub fn fit_full_path(
    pheno: &PhenotypeTable,
    scores: &GeneScoreMatrix,
    kinship: &KinshipMatrix,
    opts: &FitOptions,
) -> Result<(StackedProblem, Prepared, PathResult)> {
    check_inputs(pheno, scores, kinship, opts)?;
    let problem = stack_problem(pheno, scores)?;
    let prepared = prepare(problem.clone(), &kinship.k, opts)?;
    let path = fit_path(&prepared.whitened, &opts.penalty, &opts.path);
    Ok((problem, prepared, path))
}

/// Penalized multi-trait mixed model: REML at b = 0, whitening, CV-tuned path.
pub fn fit_mtmm(
    pheno: &PhenotypeTable,
    scores: &GeneScoreMatrix,
    kinship: &KinshipMatrix,
    opts: &FitOptions,
) -> Result<FitResult> {
    let (problem, prepared, path) = fit_full_path(pheno, scores, kinship, opts)?;
    let cv = cross_validate(&problem, &kinship.k, &path.lambdas, opts, 0)?;
    let ooi = if opts.ooi_reps > 0 {
        Some(rows_of(&observed_occurrence_index(&problem, &kinship.k, &path, opts, opts.ooi_reps)?))
    } else {
        None
    };
    let point = &path.points[cv.selected_index];
    let selected_genes = path.selected_genes(cv.selected_index).into_iter().map(|j| scores.gene_ids[j].clone()).collect();
    let covariance = match &opts.covariance {
        CovarianceMode::Reml => "reml",
        CovarianceMode::Fixed(_) => "fixed",
        CovarianceMode::Identity => "identity",
    };
    let mut warnings = prepared.whitened.warnings.clone();
    if let Some(state) = &prepared.reml {
        if state.at_boundary {
            warnings.push("variance components converged on the boundary of the parameter space".into());
        }
    }
    if path.points.iter().any(|p| !p.converged) {
        warnings.push("coordinate descent reached the pass limit for some lambda".into());
    }
    if opts.penalty.kind == PenaltyKind::SparseGroupMcp && opts.penalty.gamma <= 2.0 {
        warnings.push("gamma <= 2: sparse group updates are outside the convex region".into());
    }
    Ok(FitResult {
        penalty: opts.penalty,
        covariance: covariance.into(),
        gene_ids: scores.gene_ids.clone(),
        trait_names: pheno.trait_names.clone(),
        heritability: reml::heritability_ratio(&prepared.vc),
        variance_components: prepared.vc.clone(),
        reml: prepared.reml.clone(),
        fixed_effects: prepared.v_hat.iter().copied().collect(),
        lambdas: path.lambdas.clone(),
        cv_sd: (0..cv.curve.len())
            .map(|i| linalg::sample_sd(&cv.fold_curves.iter().map(|c| c[i]).collect::<Vec<_>>()))
            .collect(),
        cv_curve: cv.curve.clone(),
        lambda_index: cv.selected_index,
        lambda_selected: cv.lambda_selected,
        coefficients: rows_of(&point.coefficients),
        selected_genes,
        ooi,
        warnings,
        seed: opts.seed,
        monotonicity_violations: path.monotonicity_violations,
        path,
    })
}

/// Single-trait penalized LMM with scalar MCP.
pub fn fit_lmm_uni(
    pheno: &PhenotypeTable,
    trait_index: usize,
    scores: &GeneScoreMatrix,
    kinship: &KinshipMatrix,
    opts: &FitOptions,
) -> Result<FitResult> {
    let mut o = opts.clone();
    o.penalty.kind = PenaltyKind::Mcp;
    fit_mtmm(&pheno.select_trait(trait_index), scores, kinship, &o)
}

/// Single-trait penalized linear model (`H = I`) with scalar MCP.
pub fn fit_linear_uni(
    pheno: &PhenotypeTable,
    trait_index: usize,
    scores: &GeneScoreMatrix,
    opts: &FitOptions,
) -> Result<FitResult> {
    let mut o = opts.clone();
    o.penalty.kind = PenaltyKind::Mcp;
    o.covariance = CovarianceMode::Identity;
    let kin = KinshipMatrix::identity(pheno.subject_ids.clone());
    fit_mtmm(&pheno.select_trait(trait_index), scores, &kin, &o)
}
