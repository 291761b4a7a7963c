//! Subject-level V-fold cross-validation and the observed occurrence index.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::path::{fit_path, PathOptions, PathResult};
use super::pipeline::{prepare, FitOptions};
use crate::error::{Error, Result};
use crate::model::{matrix_to_coef, StackedProblem, VarianceComponents};
use crate::penalties::PenaltyKind;
use crate::reml::eigen_k_matrix;
use crate::whitening::h_inv_sqrt_apply;

/// Fold label per subject: a seeded permutation dealt round-robin.
pub fn fold_assignment(n: usize, folds: usize, seed: u64, stream: u64) -> Vec<usize> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut fold = vec![0; n];
    for (pos, &i) in order.iter().enumerate() {
        fold[i] = pos % folds;
    }
    fold
}

/// Rows of a stacked problem for a subset of subjects.
pub fn subset_problem(problem: &StackedProblem, subjects: &[usize]) -> StackedProblem {
    let (n, m) = (problem.n, problem.m);
    let rows: Vec<usize> = (0..m).flat_map(|l| subjects.iter().map(move |&i| l * n + i)).collect();
    let pick = |mat: &DMatrix<f64>| DMatrix::from_fn(rows.len(), mat.ncols(), |r, c| mat[(rows[r], c)]);
    StackedProblem {
        n: subjects.len(),
        m,
        q: problem.q,
        p: problem.p,
        y: DVector::from_fn(rows.len(), |r, _| problem.y[rows[r]]),
        s: pick(&problem.s),
        t: pick(&problem.t),
        gene_ids: problem.gene_ids.clone(),
    }
}

pub fn sub_kinship(k: &DMatrix<f64>, subjects: &[usize]) -> DMatrix<f64> {
    DMatrix::from_fn(subjects.len(), subjects.len(), |a, b| k[(subjects[a], subjects[b])])
}

#[derive(Debug, Clone)]
pub struct CvResult {
    pub lambdas: Vec<f64>,
    /// Mean held-out error per λ over the evaluable prefix.
    pub curve: Vec<f64>,
    pub fold_curves: Vec<Vec<f64>>,
    pub selected_index: usize,
    pub lambda_selected: f64,
}

/// Held-out error `eᵀ H_test⁻¹ e / (n_test · m)` along a training path.
fn fold_errors(
    test: &StackedProblem,
    k_test: &DMatrix<f64>,
    vc: &VarianceComponents,
    v_hat: &DVector<f64>,
    path: &PathResult,
) -> Result<Vec<f64>> {
    let eig = eigen_k_matrix(k_test)?;
    let base = &test.y - &test.s * v_hat;
    let denom = (test.n * test.m) as f64;
    let mut out = Vec::with_capacity(path.points.len());
    for pt in &path.points {
        if !pt.converged {
            break;
        }
        let b = matrix_to_coef(&pt.coefficients);
        let e = &base - &test.t * b;
        let white = h_inv_sqrt_apply(vc, &eig, &DMatrix::from_column_slice(e.len(), 1, e.as_slice()))?;
        let err = white.norm_squared() / denom;
        if !err.is_finite() {
            break;
        }
        out.push(err);
    }
    Ok(out)
}

/// Tune λ over a fixed grid. The curve stops at the first λ that any fold
/// cannot evaluate; ties go to the larger λ.
pub fn cross_validate(
    problem: &StackedProblem,
    k: &DMatrix<f64>,
    lambdas: &[f64],
    opts: &FitOptions,
    stream: u64,
) -> Result<CvResult> {
    let v = opts.folds;
    if v < 2 || v > problem.n {
        return Err(Error::Config(format!("folds must lie in 2..={}, got {v}", problem.n)));
    }
    let labels = fold_assignment(problem.n, v, opts.seed, stream);
    let min = problem.m + problem.q;
    for f in 0..v {
        let size = labels.iter().filter(|&&l| l != f).count();
        if size < min {
            return Err(Error::FoldTooSmall { fold: f, size, min });
        }
    }
    // points past the first unconverged λ are never evaluated
    let path_opts = PathOptions { lambdas: Some(lambdas.to_vec()), max_active: None, stop_unconverged: true, ..opts.path.clone() };
    let fold_curves: Vec<Vec<f64>> = (0..v)
        .into_par_iter()
        .map(|f| -> Result<Vec<f64>> {
            let train: Vec<usize> = (0..problem.n).filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = (0..problem.n).filter(|&i| labels[i] == f).collect();
            let prepared = prepare(subset_problem(problem, &train), &sub_kinship(k, &train), opts)?;
            let path = fit_path(&prepared.whitened, &opts.penalty, &path_opts);
            fold_errors(&subset_problem(problem, &test), &sub_kinship(k, &test), &prepared.vc, &prepared.v_hat, &path)
        })
        .collect::<Result<_>>()?;
    let evaluable = fold_curves.iter().map(|c| c.len()).min().unwrap_or(0);
    let curve: Vec<f64> =
        (0..evaluable).map(|i| fold_curves.iter().map(|c| c[i]).sum::<f64>() / v as f64).collect();
    let mut selected_index = 0;
    for (i, &c) in curve.iter().enumerate() {
        if c < curve[selected_index] {
            selected_index = i;
        }
    }
    if evaluable == 0 {
        log::warn!("no evaluable lambda in cross-validation; selecting the largest");
    }
    Ok(CvResult { lambdas: lambdas.to_vec(), curve, fold_curves, selected_index, lambda_selected: lambdas[selected_index] })
}

/// Selection frequency over `reps` independently split cross-validations,
/// read off the full-data path at each selected λ.
pub fn observed_occurrence_index(
    problem: &StackedProblem,
    k: &DMatrix<f64>,
    full_path: &PathResult,
    opts: &FitOptions,
    reps: usize,
) -> Result<DMatrix<f64>> {
    let width = full_path.points[0].coefficients.ncols();
    let picks: Vec<usize> = (0..reps)
        .into_par_iter()
        .map(|r| cross_validate(problem, k, &full_path.lambdas, opts, r as u64 + 1).map(|cv| cv.selected_index))
        .collect::<Result<_>>()?;
    let mut ooi = DMatrix::zeros(problem.p, width);
    for idx in picks {
        let c = &full_path.points[idx].coefficients;
        for j in 0..problem.p {
            let group_on = c.row(j).iter().any(|&x| x != 0.0);
            for l in 0..width {
                let hit = if opts.penalty.kind == PenaltyKind::GroupMcp { group_on } else { c[(j, l)] != 0.0 };
                if hit {
                    ooi[(j, l)] += 1.0;
                }
            }
        }
    }
    Ok(ooi / reps.max(1) as f64)
}
