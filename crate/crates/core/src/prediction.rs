//! BLUP prediction of held-out subjects and correlation-based evaluation.

use nalgebra::{DMatrix, DVector};
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{GeneScoreMatrix, KinshipMatrix, PhenotypeTable, VarianceComponents};
use crate::solver::{fit_mtmm, fold_assignment, FitOptions, FitResult};

/// Everything from the training fit that prediction needs.
#[derive(Debug, Clone)]
pub struct TrainedModel {
    pub vc: VarianceComponents,
    /// q × m fixed effects, column per trait.
    pub fixed: DMatrix<f64>,
    /// p × m gene coefficients.
    pub coefficients: DMatrix<f64>,
    pub y: DMatrix<f64>,
    pub w: DMatrix<f64>,
    pub x: DMatrix<f64>,
    pub k: DMatrix<f64>,
}

impl TrainedModel {
    pub fn from_fit(fit: &FitResult, pheno: &PhenotypeTable, scores: &GeneScoreMatrix, kinship: &KinshipMatrix) -> Self {
        let (q, m) = (pheno.q(), pheno.m());
        Self {
            vc: fit.variance_components.clone(),
            fixed: DMatrix::from_fn(q, m, |a, l| fit.fixed_effects[l * q + a]),
            coefficients: fit.coefficient_matrix(),
            y: pheno.y.clone(),
            w: pheno.w.clone(),
            x: scores.x.clone(),
            k: kinship.k.clone(),
        }
    }

    fn train_residual(&self) -> DMatrix<f64> {
        &self.y - &self.w * &self.fixed - &self.x * &self.coefficients
    }
}

fn check_test_shapes(model: &TrainedModel, k_tt: &DMatrix<f64>, w_test: &DMatrix<f64>, x_test: &DMatrix<f64>) -> Result<()> {
    let nt = k_tt.nrows();
    if k_tt.ncols() != model.y.nrows() || w_test.nrows() != nt || x_test.nrows() != nt {
        return Err(Error::invalid("test matrices do not conform with the training data"));
    }
    if w_test.ncols() != model.w.ncols() || x_test.ncols() != model.x.ncols() {
        return Err(Error::invalid("test covariates or gene scores have the wrong number of columns"));
    }
    if k_tt.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("cross-relatedness block has non-finite entries"));
    }
    Ok(())
}

/// Trait-wise BLUP: `W_t v + X_t b + σ²g K_tt (σ²g K + σ²e I)⁻¹ (y − W v − X b)`.
pub fn blup_predict(
    model: &TrainedModel,
    k_tt: &DMatrix<f64>,
    w_test: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
    trait_index: usize,
) -> Result<DVector<f64>> {
    check_test_shapes(model, k_tt, w_test, x_test)?;
    let l = trait_index;
    let (sg, se) = model.vc.trait_pair(l);
    if sg == 0.0 && se == 0.0 {
        return Err(Error::SingularTraitH(l));
    }
    let fixed = w_test * model.fixed.column(l) + x_test * model.coefficients.column(l);
    if sg == 0.0 {
        return Ok(fixed);
    }
    let n = model.y.nrows();
    let h = &model.k * sg + DMatrix::identity(n, n) * se;
    let r = model.train_residual().column(l).into_owned();
    let alpha = h
        .cholesky()
        .ok_or_else(|| Error::Numerical(format!("trait {l} training covariance is not positive definite")))?
        .solve(&r);
    Ok(fixed + k_tt * alpha * sg)
}

/// Joint BLUP using the full cross-trait covariance; n_test × m.
pub fn blup_predict_joint(
    model: &TrainedModel,
    k_tt: &DMatrix<f64>,
    w_test: &DMatrix<f64>,
    x_test: &DMatrix<f64>,
) -> Result<DMatrix<f64>> {
    check_test_shapes(model, k_tt, w_test, x_test)?;
    let (n, m, nt) = (model.y.nrows(), model.y.ncols(), k_tt.nrows());
    let h = model.vc.dense_h(&model.k);
    let r = model.train_residual();
    let r_stacked = DVector::from_column_slice(r.as_slice());
    let alpha = h
        .cholesky()
        .ok_or_else(|| Error::Numerical("joint training covariance is not positive definite".into()))?
        .solve(&r_stacked);
    let mut out = w_test * &model.fixed + x_test * &model.coefficients;
    for l in 0..m {
        for t in 0..m {
            let g = model.vc.sigma_g[(l, t)];
            if g != 0.0 {
                let add = k_tt * alpha.rows(t * n, n) * g;
                let mut col = out.column_mut(l);
                col += add;
            }
        }
    }
    debug_assert_eq!(out.nrows(), nt);
    Ok(out)
}

/// Sample Pearson correlation.
pub fn prediction_correlation(pred: &[f64], obs: &[f64]) -> Result<f64> {
    if pred.len() != obs.len() || pred.len() < 3 {
        return Err(Error::invalid("correlation needs two equal-length vectors of length >= 3"));
    }
    let (mp, mo) = (linalg::mean(pred), linalg::mean(obs));
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in pred.iter().zip(obs) {
        sxy += (a - mp) * (b - mo);
        sxx += (a - mp).powi(2);
        syy += (b - mo).powi(2);
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0))
}

#[derive(Debug, Clone, Serialize)]
pub struct PredictionReport {
    pub trait_names: Vec<String>,
    pub mean: Vec<Option<f64>>,
    pub sd: Vec<Option<f64>>,
    /// fold × trait; `None` where the correlation is undefined.
    pub fold_correlations: Vec<Vec<Option<f64>>>,
}

impl PredictionReport {
    /// `mean(sd)` per trait, `NA` when undefined.
    pub fn formatted(&self) -> Vec<String> {
        self.mean
            .iter()
            .zip(&self.sd)
            .map(|(m, s)| match (m, s) {
                (Some(m), Some(s)) => format!("{m:.3}({s:.3})"),
                (Some(m), None) => format!("{m:.3}(NA)"),
                _ => "NA".into(),
            })
            .collect()
    }
}

/// Subset rows without re-centering, so train and test share one scale.
pub fn raw_scores(scores: &GeneScoreMatrix, rows: &[usize]) -> GeneScoreMatrix {
    GeneScoreMatrix {
        subject_ids: rows.iter().map(|&i| scores.subject_ids[i].clone()).collect(),
        gene_ids: scores.gene_ids.clone(),
        x: DMatrix::from_fn(rows.len(), scores.p(), |a, j| scores.x[(rows[a], j)]),
    }
}

/// V-fold prediction: fit on each training split, BLUP the held-out subjects,
/// correlate per trait.
pub fn cv_prediction_report(
    pheno: &PhenotypeTable,
    scores: &GeneScoreMatrix,
    kinship: &KinshipMatrix,
    opts: &FitOptions,
    folds: usize,
    seed: u64,
) -> Result<PredictionReport> {
    let n = pheno.n();
    if folds < 2 || folds > n {
        return Err(Error::Config(format!("prediction folds must lie in 2..={n}")));
    }
    let labels = fold_assignment(n, folds, seed, u64::MAX);
    let m = pheno.m();
    let per_fold: Vec<Vec<Option<f64>>> = (0..folds)
        .into_par_iter()
        .map(|f| -> Result<Vec<Option<f64>>> {
            let train: Vec<usize> = (0..n).filter(|&i| labels[i] != f).collect();
            let test: Vec<usize> = (0..n).filter(|&i| labels[i] == f).collect();
            let p_tr = pheno.select_subjects(&train);
            let s_tr = raw_scores(scores, &train);
            let k_tr = kinship.select_subjects(&train);
            let fit = fit_mtmm(&p_tr, &s_tr, &k_tr, opts)?;
            let model = TrainedModel::from_fit(&fit, &p_tr, &s_tr, &k_tr);
            let k_tt = kinship.block(&test, &train);
            let p_te = pheno.select_subjects(&test);
            let x_te = raw_scores(scores, &test).x;
            (0..m)
                .map(|l| {
                    let pred = blup_predict(&model, &k_tt, &p_te.w, &x_te, l)?;
                    let obs: Vec<f64> = p_te.y.column(l).iter().copied().collect();
                    match prediction_correlation(pred.as_slice(), &obs) {
                        Ok(c) => Ok(Some(c)),
                        Err(Error::ZeroVariance) => Ok(None),
                        Err(e) => Err(e),
                    }
                })
                .collect()
        })
        .collect::<Result<_>>()?;
    let mut mean = Vec::with_capacity(m);
    let mut sd = Vec::with_capacity(m);
    for l in 0..m {
        let vals: Vec<f64> = per_fold.iter().filter_map(|f| f[l]).collect();
        mean.push((!vals.is_empty()).then(|| linalg::mean(&vals)));
        sd.push((vals.len() >= 2).then(|| linalg::sample_sd(&vals)));
    }
    Ok(PredictionReport { trait_names: pheno.trait_names.clone(), mean, sd, fold_correlations: per_fold })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn normal(rng: &mut ChaCha8Rng) -> f64 {
        rng.sample(StandardNormal)
    }

    /// Random model on n_train + n_test subjects; returns the model, the full K,
    /// test covariates and scores.
    fn instance(nr: usize, nt: usize, m: usize, seed: u64) -> (TrainedModel, DMatrix<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = nr + nt;
        let g = DMatrix::from_fn(n, n + 2, |_, _| normal(&mut rng));
        let k = &g * g.transpose() / (n + 2) as f64;
        let a = DMatrix::from_fn(m, m, |_, _| normal(&mut rng));
        let b = DMatrix::from_fn(m, m, |_, _| normal(&mut rng));
        let vc = VarianceComponents::new(&a * a.transpose() * 0.5 + DMatrix::identity(m, m) * 0.1, &b * b.transpose() * 0.3 + DMatrix::identity(m, m) * 0.2).unwrap();
        let p = 3;
        let w = DMatrix::from_fn(n, 2, |_, c| if c == 0 { 1.0 } else { normal(&mut rng) });
        let x = DMatrix::from_fn(n, p, |_, _| normal(&mut rng));
        let model = TrainedModel {
            vc,
            fixed: DMatrix::from_fn(2, m, |_, _| normal(&mut rng)),
            coefficients: DMatrix::from_fn(p, m, |_, _| normal(&mut rng)),
            y: DMatrix::from_fn(nr, m, |_, _| normal(&mut rng)),
            w: w.rows(0, nr).into_owned(),
            x: x.rows(0, nr).into_owned(),
            k: k.view((0, 0), (nr, nr)).into_owned(),
        };
        (model, k, w.rows(nr, nt).into_owned(), x.rows(nr, nt).into_owned())
    }

    #[test]
    fn matches_conditional_gaussian_mean() {
        for seed in 0..20 {
            let (nr, nt) = (8, 3);
            let (model, k, wt, xt) = instance(nr, nt, 2, seed);
            let k_tt = k.view((nr, 0), (nt, nr)).into_owned();
            for l in 0..2 {
                let (sg, se) = model.vc.trait_pair(l);
                let cov = &k * sg + DMatrix::identity(nr + nt, nr + nt) * se;
                let s22 = cov.view((0, 0), (nr, nr)).into_owned();
                let s12 = cov.view((nr, 0), (nt, nr)).into_owned();
                let mu_tr = &model.w * model.fixed.column(l) + &model.x * model.coefficients.column(l);
                let mu_te = &wt * model.fixed.column(l) + &xt * model.coefficients.column(l);
                let oracle = mu_te + s12 * s22.try_inverse().unwrap() * (model.y.column(l) - mu_tr);
                let got = blup_predict(&model, &k_tt, &wt, &xt, l).unwrap();
                assert!((got - oracle).amax() < 1e-8);
            }
            // joint version against the 2-trait partitioned covariance
            let big = model.vc.dense_h(&k);
            let idx_tr: Vec<usize> = (0..2).flat_map(|l| (0..nr).map(move |i| l * (nr + nt) + i)).collect();
            let idx_te: Vec<usize> = (0..2).flat_map(|l| (nr..nr + nt).map(move |i| l * (nr + nt) + i)).collect();
            let s22 = DMatrix::from_fn(idx_tr.len(), idx_tr.len(), |a, b| big[(idx_tr[a], idx_tr[b])]);
            let s12 = DMatrix::from_fn(idx_te.len(), idx_tr.len(), |a, b| big[(idx_te[a], idx_tr[b])]);
            let mu_tr = &model.w * &model.fixed + &model.x * &model.coefficients;
            let mu_te = &wt * &model.fixed + &xt * &model.coefficients;
            let r = DVector::from_column_slice((&model.y - mu_tr).as_slice());
            let cond = DVector::from_column_slice(mu_te.as_slice()) + s12 * s22.try_inverse().unwrap() * r;
            let joint = blup_predict_joint(&model, &k_tt, &wt, &xt).unwrap();
            assert!((DVector::from_column_slice(joint.as_slice()) - cond).amax() < 1e-8);
        }
    }

    #[test]
    fn no_relatedness_gives_fixed_part() {
        let (mut model, _, wt, xt) = instance(6, 2, 2, 3);
        let fixed = &wt * model.fixed.column(0) + &xt * model.coefficients.column(0);
        let zero = DMatrix::zeros(2, 6);
        assert!((blup_predict(&model, &zero, &wt, &xt, 0).unwrap() - &fixed).amax() < 1e-12);
        model.vc.sigma_g.fill(0.0);
        let k_tt = DMatrix::from_element(2, 6, 0.3);
        assert!((blup_predict(&model, &k_tt, &wt, &xt, 0).unwrap() - &fixed).amax() < 1e-12);
        model.vc.sigma_e.fill(0.0);
        assert!(matches!(blup_predict(&model, &k_tt, &wt, &xt, 0), Err(Error::SingularTraitH(0))));
    }

    #[test]
    fn vanishing_genetic_variance_approaches_fixed_part() {
        let (mut model, k, wt, xt) = instance(8, 3, 1, 5);
        let k_tt = k.view((8, 0), (3, 8)).into_owned();
        let fixed = &wt * model.fixed.column(0) + &xt * model.coefficients.column(0);
        model.vc.sigma_e[(0, 0)] = 1.0;
        let mut last = f64::INFINITY;
        for ratio in [1e-2, 1e-4, 1e-6] {
            model.vc.sigma_g[(0, 0)] = ratio;
            let d = (blup_predict(&model, &k_tt, &wt, &xt, 0).unwrap() - &fixed).amax();
            assert!(d < last);
            last = d;
        }
        assert!(last < 1e-4);
    }

    #[test]
    fn test_permutation_permutes_predictions() {
        let (model, k, wt, xt) = instance(7, 4, 2, 8);
        let k_tt = k.view((7, 0), (4, 7)).into_owned();
        let perm = [2, 0, 3, 1];
        let pk = DMatrix::from_fn(4, 7, |a, b| k_tt[(perm[a], b)]);
        let pw = DMatrix::from_fn(4, 2, |a, b| wt[(perm[a], b)]);
        let px = DMatrix::from_fn(4, 3, |a, b| xt[(perm[a], b)]);
        let base = blup_predict(&model, &k_tt, &wt, &xt, 1).unwrap();
        let permuted = blup_predict(&model, &pk, &pw, &px, 1).unwrap();
        for a in 0..4 {
            assert!((permuted[a] - base[perm[a]]).abs() < 1e-12);
        }
    }

    #[test]
    fn correlation_examples() {
        let obs = [1.0, 2.0, 4.0, 3.5];
        assert!((prediction_correlation(&obs, &obs).unwrap() - 1.0).abs() < 1e-15);
        let neg: Vec<f64> = obs.iter().map(|v| 5.0 - v).collect();
        assert!((prediction_correlation(&neg, &obs).unwrap() + 1.0).abs() < 1e-15);
        assert!(matches!(prediction_correlation(&[2.0; 4], &obs), Err(Error::ZeroVariance)));
        assert!(prediction_correlation(&obs[..2], &obs[..2]).is_err());
    }
}
