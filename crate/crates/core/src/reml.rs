//! Restricted maximum likelihood for `H = Σg ⊗ K + Σe ⊗ I` by the
//! average-information algorithm.
//!
//! Everything is evaluated in the eigenbasis of K. With `K = U Λ Uᵀ` the
//! rotated covariance `(I ⊗ Uᵀ) H (I ⊗ U)` is block diagonal across subjects,
//! subject `i` carrying the m × m block `H_i = λ_i Σg + Σe`, so every quantity
//! costs O(n) small dense operations once the data are rotated.
//!
//! Free parameters are the upper triangles of Σg then Σe, each row-major; for
//! m = 2 that is `(σ²g1, σg12, σ²g2, σ²e1, σe12, σ²e2)`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{KinshipMatrix, VarianceComponents};

const LN_2PI: f64 = 1.837_877_066_409_345_3;

/// Eigendecomposition of the kinship matrix, eigenvalues descending.
#[derive(Debug, Clone)]
pub struct EigenK {
    pub u: DMatrix<f64>,
    pub lambda: DVector<f64>,
}

pub fn eigen_k(kinship: &KinshipMatrix) -> Result<EigenK> {
    eigen_k_matrix(&kinship.k)
}

pub fn eigen_k_matrix(k: &DMatrix<f64>) -> Result<EigenK> {
    let (mut lambda, u) = linalg::sym_eigen_sorted(k);
    let min = lambda.iter().copied().fold(f64::INFINITY, f64::min);
    if min < -1e-8 {
        return Err(Error::NotPsd(min));
    }
    lambda.iter_mut().for_each(|l| *l = l.max(0.0));
    Ok(EigenK { u, lambda })
}

impl EigenK {
    pub fn n(&self) -> usize {
        self.lambda.len()
    }

    /// Spread `max λ − min λ`; Σg and Σe are only separable when it is positive.
    pub fn spread(&self) -> f64 {
        if self.n() == 0 {
            return 0.0;
        }
        self.lambda[0] - self.lambda[self.n() - 1]
    }

    /// `(I_m ⊗ Uᵀ) M` for a trait-major (n·m) × c matrix.
    pub fn rotate(&self, mat: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_blocks(mat, true)
    }

    /// `(I_m ⊗ U) M`.
    pub fn unrotate(&self, mat: &DMatrix<f64>) -> DMatrix<f64> {
        self.apply_blocks(mat, false)
    }

    fn apply_blocks(&self, mat: &DMatrix<f64>, transpose: bool) -> DMatrix<f64> {
        let n = self.n();
        assert_eq!(mat.nrows() % n, 0, "row count is not a multiple of n");
        let m = mat.nrows() / n;
        let mut out = DMatrix::zeros(mat.nrows(), mat.ncols());
        for l in 0..m {
            let block = mat.rows(l * n, n);
            let r = if transpose { self.u.tr_mul(&block) } else { &self.u * block };
            out.rows_mut(l * n, n).copy_from(&r);
        }
        out
    }

    /// Block `H_i = λ_i Σg + Σe`.
    pub fn block(&self, vc: &VarianceComponents, i: usize) -> DMatrix<f64> {
        &vc.sigma_g * self.lambda[i] + &vc.sigma_e
    }
}

/// Rotated data split per subject.
struct Rotated {
    /// m-vector per subject
    y: Vec<DVector<f64>>,
    /// m × k per subject
    s: Vec<DMatrix<f64>>,
}

fn rotate_data(y: &DVector<f64>, s: &DMatrix<f64>, eig: &EigenK) -> Result<Rotated> {
    let n = eig.n();
    if n == 0 || y.len() % n != 0 || s.nrows() != y.len() {
        return Err(Error::invalid("stacked data do not conform with the kinship matrix"));
    }
    let m = y.len() / n;
    let yr = eig.rotate(&DMatrix::from_column_slice(y.len(), 1, y.as_slice()));
    let sr = eig.rotate(s);
    let k = s.ncols();
    let ys = (0..n).map(|i| DVector::from_fn(m, |l, _| yr[(l * n + i, 0)])).collect();
    let ss = (0..n).map(|i| DMatrix::from_fn(m, k, |l, c| sr[(l * n + i, c)])).collect();
    Ok(Rotated { y: ys, s: ss })
}

/// Index pairs (a, b), a ≤ b, in row-major upper-triangle order.
pub fn triangle_pairs(m: usize) -> Vec<(usize, usize)> {
    (0..m).flat_map(|a| (a..m).map(move |b| (a, b))).collect()
}

pub fn n_params(m: usize) -> usize {
    m * (m + 1)
}

pub fn pack(vc: &VarianceComponents) -> DVector<f64> {
    DVector::from_vec(vc.entries())
}

pub fn unpack(theta: &DVector<f64>, m: usize) -> VarianceComponents {
    let pairs = triangle_pairs(m);
    let half = pairs.len();
    let mut g = DMatrix::zeros(m, m);
    let mut e = DMatrix::zeros(m, m);
    for (t, &(a, b)) in pairs.iter().enumerate() {
        g[(a, b)] = theta[t];
        g[(b, a)] = theta[t];
        e[(a, b)] = theta[half + t];
        e[(b, a)] = theta[half + t];
    }
    VarianceComponents::from_parts(g, e)
}

/// Σg clipped to PSD, Σe floored at `1e-6 · tr(Σe) / m`.
pub fn project_feasible(vc: &VarianceComponents) -> VarianceComponents {
    let m = vc.m();
    let g = linalg::project_eigen_floor(&vc.sigma_g, 0.0);
    let tr = vc.sigma_e.trace().max(0.0);
    let floor = (1e-6 * tr / m as f64).max(1e-12);
    let e = linalg::project_eigen_floor(&vc.sigma_e, floor);
    VarianceComponents::from_parts(g, e)
}

struct Evaluation {
    loglik: f64,
    v_hat: DVector<f64>,
    score: Option<DVector<f64>>,
    ai: Option<DMatrix<f64>>,
}

fn evaluate(vc: &VarianceComponents, data: &Rotated, eig: &EigenK, derivs: bool) -> Result<Evaluation> {
    let n = eig.n();
    let m = vc.m();
    let k = data.s.first().map_or(0, |s| s.ncols());
    let mut log_det_h = 0.0;
    let mut h_inv = Vec::with_capacity(n);
    let mut a = Vec::with_capacity(n);
    let mut info = DMatrix::<f64>::zeros(k, k);
    let mut rhs = DVector::<f64>::zeros(k);
    for i in 0..n {
        let blk = linalg::spd_block(&eig.block(vc, i))?;
        log_det_h += blk.log_det;
        let ai = &blk.inv * &data.s[i];
        info += data.s[i].tr_mul(&ai);
        rhs += ai.tr_mul(&data.y[i]);
        h_inv.push(blk.inv);
        a.push(ai);
    }
    let (c, log_det_info) = if k > 0 {
        let ch = linalg::symmetrize(&info)
            .cholesky()
            .ok_or_else(|| Error::Numerical("Sᵀ H⁻¹ S is singular".into()))?;
        let ld = 2.0 * ch.l().diagonal().iter().map(|d| d.ln()).sum::<f64>();
        (ch.inverse(), ld)
    } else {
        (DMatrix::zeros(0, 0), 0.0)
    };
    let v_hat = &c * &rhs;
    let mut py = Vec::with_capacity(n);
    let mut ypy = 0.0;
    for i in 0..n {
        let r = &data.y[i] - &data.s[i] * &v_hat;
        let p = &h_inv[i] * &r;
        ypy += r.dot(&p);
        py.push(p);
    }
    let dof = (n * m - k) as f64;
    let loglik = -0.5 * (log_det_h + log_det_info + ypy) - 0.5 * dof * LN_2PI;
    if !derivs {
        return Ok(Evaluation { loglik, v_hat, score: None, ai: None });
    }

    let pairs = triangle_pairs(m);
    let half = pairs.len();
    let np = 2 * half;
    let mut score = DVector::zeros(np);
    // f[t][i] = D_{t,i} P y restricted to subject i
    let mut f: Vec<Vec<DVector<f64>>> = vec![Vec::with_capacity(n); np];
    for i in 0..n {
        let p_ii = &h_inv[i] - &a[i] * &c * a[i].transpose();
        for (t, &(ia, ib)) in pairs.iter().enumerate() {
            let (tr_e, quad_e, fe) = if ia == ib {
                let mut fv = DVector::zeros(m);
                fv[ia] = py[i][ia];
                (p_ii[(ia, ia)], py[i][ia] * py[i][ia], fv)
            } else {
                let mut fv = DVector::zeros(m);
                fv[ia] = py[i][ib];
                fv[ib] = py[i][ia];
                (2.0 * p_ii[(ia, ib)], 2.0 * py[i][ia] * py[i][ib], fv)
            };
            let lam = eig.lambda[i];
            score[t] += -0.5 * lam * (tr_e - quad_e);
            score[half + t] += -0.5 * (tr_e - quad_e);
            f[t].push(&fe * lam);
            f[half + t].push(fe);
        }
    }
    let mut proj = vec![DVector::<f64>::zeros(k); np];
    for t in 0..np {
        for i in 0..n {
            proj[t] += a[i].tr_mul(&f[t][i]);
        }
    }
    let mut ai = DMatrix::zeros(np, np);
    for t in 0..np {
        for u in t..np {
            let mut acc = 0.0;
            for i in 0..n {
                acc += f[t][i].dot(&(&h_inv[i] * &f[u][i]));
            }
            acc -= proj[t].dot(&(&c * &proj[u]));
            ai[(t, u)] = 0.5 * acc;
            ai[(u, t)] = 0.5 * acc;
        }
    }
    Ok(Evaluation { loglik, v_hat, score: Some(score), ai: Some(ai) })
}

/// Restricted log-likelihood including the `−½ (nm − k) log 2π` constant.
pub fn reml_loglik(vc: &VarianceComponents, y: &DVector<f64>, s: &DMatrix<f64>, eig: &EigenK) -> Result<f64> {
    let data = rotate_data(y, s, eig)?;
    Ok(evaluate(vc, &data, eig, false)?.loglik)
}

/// REML score vector and average-information matrix.
pub fn reml_score_and_ai(
    vc: &VarianceComponents,
    y: &DVector<f64>,
    s: &DMatrix<f64>,
    eig: &EigenK,
) -> Result<(DVector<f64>, DMatrix<f64>)> {
    let data = rotate_data(y, s, eig)?;
    let ev = evaluate(vc, &data, eig, true)?;
    Ok((ev.score.unwrap(), ev.ai.unwrap()))
}

/// GLS fixed effects `(Sᵀ H⁻¹ S)⁻¹ Sᵀ H⁻¹ y` for given variance components.
pub fn gls_fixed_effects(
    vc: &VarianceComponents,
    y: &DVector<f64>,
    s: &DMatrix<f64>,
    eig: &EigenK,
) -> Result<DVector<f64>> {
    let data = rotate_data(y, s, eig)?;
    Ok(evaluate(vc, &data, eig, false)?.v_hat)
}

#[derive(Debug, Clone)]
pub struct RemlOptions {
    pub max_iter: usize,
    pub loglik_tol: f64,
    pub score_tol: f64,
    /// Starting point; the OLS-residual split is used when absent.
    pub init: Option<VarianceComponents>,
}

impl Default for RemlOptions {
    fn default() -> Self {
        Self { max_iter: 200, loglik_tol: 1e-8, score_tol: 1e-4, init: None }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct RemlState {
    pub theta: Vec<f64>,
    pub loglik: f64,
    pub score: Vec<f64>,
    #[serde(skip)]
    pub ai: DMatrix<f64>,
    pub iteration: usize,
    pub converged: bool,
    /// Converged on a face of the feasible set, where the score need not vanish.
    pub at_boundary: bool,
    pub history: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct RemlFit {
    pub v_hat: DVector<f64>,
    pub vc: VarianceComponents,
    pub state: RemlState,
}

/// Half of the OLS residual covariance on each component.
fn initial_components(y: &DVector<f64>, s: &DMatrix<f64>, m: usize) -> Result<VarianceComponents> {
    let n = y.len() / m;
    let sts = s.tr_mul(s);
    let coef = linalg::solve_spd(&sts, &DMatrix::from_column_slice(y.len(), 1, y.as_slice()).tr_mul(s).transpose())?;
    let r = y - s * coef.column(0);
    let rm = DMatrix::from_column_slice(n, m, r.as_slice());
    let denom = (n.max(2) - 1) as f64;
    let cov = rm.tr_mul(&rm) / denom;
    let half = cov * 0.5;
    Ok(project_feasible(&VarianceComponents::from_parts(half.clone(), half)))
}

/// Average-information REML with step halving and feasibility projection.
pub fn estimate_variance_components(
    y: &DVector<f64>,
    s: &DMatrix<f64>,
    eig: &EigenK,
    opts: &RemlOptions,
) -> Result<RemlFit> {
    if eig.spread() < 1e-8 {
        return Err(Error::NonIdentifiable(eig.spread()));
    }
    let n = eig.n();
    if y.len() % n != 0 {
        return Err(Error::invalid("response length is not a multiple of n"));
    }
    let m = y.len() / n;
    let data = rotate_data(y, s, eig)?;
    let mut vc = match &opts.init {
        Some(v) => project_feasible(v),
        None => initial_components(y, s, m)?,
    };
    let mut theta = pack(&vc);
    let mut ev = evaluate(&vc, &data, eig, true)?;
    let mut history = vec![ev.loglik];
    let mut converged = false;
    let mut at_boundary = false;
    let mut iteration = 0;

    while iteration < opts.max_iter {
        iteration += 1;
        let score = ev.score.clone().unwrap();
        let ai = ev.ai.clone().unwrap();
        let dir = linalg::solve_spd(&ai, &DMatrix::from_column_slice(score.len(), 1, score.as_slice()))?
            .column(0)
            .into_owned();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..40 {
            let cand = project_feasible(&unpack(&(&theta + &dir * step), m));
            if let Ok(c) = evaluate(&cand, &data, eig, false) {
                if c.loglik >= ev.loglik {
                    accepted = Some(cand);
                    break;
                }
            }
            step *= 0.5;
        }
        let Some(cand) = accepted else {
            // no ascent direction left within floating-point resolution
            converged = true;
            at_boundary = score.amax() >= opts.score_tol;
            break;
        };
        let new_theta = pack(&cand);
        let next = evaluate(&cand, &data, eig, true)?;
        let dll = next.loglik - ev.loglik;
        let dtheta = (&new_theta - &theta).amax();
        theta = new_theta;
        vc = cand;
        ev = next;
        history.push(ev.loglik);
        if dll.abs() < opts.loglik_tol {
            let small_score = ev.score.as_ref().unwrap().amax() < opts.score_tol;
            let stalled = dtheta < 1e-9 * (1.0 + theta.amax());
            if small_score || stalled {
                converged = true;
                at_boundary = !small_score;
                break;
            }
        }
    }
    if !converged {
        return Err(Error::MaxIterations(opts.max_iter));
    }
    let state = RemlState {
        theta: theta.iter().copied().collect(),
        loglik: ev.loglik,
        score: ev.score.as_ref().unwrap().iter().copied().collect(),
        ai: ev.ai.clone().unwrap(),
        iteration,
        converged,
        at_boundary,
        history,
    };
    Ok(RemlFit { v_hat: ev.v_hat, vc, state })
}

/// Outcome of [`heritability_ratio`].
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Heritability {
    /// θ/(1+θ) when Σg ≈ θ Σe.
    pub ratio: Option<f64>,
    pub theta: Option<f64>,
    /// σ²g(l) / (σ²g(l) + σ²e(l)) per trait.
    pub per_trait: Vec<f64>,
}

/// Heritability from proportional covariance components; `ratio` is `None` when
/// Σg is not within 5 % (relative Frobenius) of a multiple of Σe.
pub fn heritability_ratio(vc: &VarianceComponents) -> Heritability {
    let per_trait = (0..vc.m())
        .map(|l| {
            let (g, e) = vc.trait_pair(l);
            if g + e > 0.0 {
                g / (g + e)
            } else {
                0.0
            }
        })
        .collect();
    let ee = vc.sigma_e.norm_squared();
    let theta = vc.sigma_g.dot(&vc.sigma_e) / ee;
    let resid = (&vc.sigma_g - &vc.sigma_e * theta).norm();
    let proportional = resid <= 0.05 * vc.sigma_g.norm() && theta >= 0.0;
    Heritability {
        ratio: proportional.then(|| theta / (1.0 + theta)),
        theta: proportional.then_some(theta),
        per_trait,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_spd(m: usize, rng: &mut ChaCha8Rng, ridge: f64) -> DMatrix<f64> {
        let a = DMatrix::from_fn(m, m, |_, _| rng.sample::<f64, _>(StandardNormal));
        &a * a.transpose() / m as f64 + DMatrix::identity(m, m) * ridge
    }

    fn random_instance(n: usize, m: usize, q: usize, seed: u64) -> (VarianceComponents, DVector<f64>, DMatrix<f64>, DMatrix<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let g = DMatrix::from_fn(n, n + 3, |_, _| rng.sample::<f64, _>(StandardNormal));
        let k = &g * g.transpose() / (n + 3) as f64;
        let vc = VarianceComponents::new(random_spd(m, &mut rng, 0.1), random_spd(m, &mut rng, 0.2)).unwrap();
        let w = DMatrix::from_fn(n, q, |_, c| if c == 0 { 1.0 } else { rng.sample(StandardNormal) });
        let mut s = DMatrix::zeros(n * m, q * m);
        for l in 0..m {
            s.view_mut((l * n, l * q), (n, q)).copy_from(&w);
        }
        let y = DVector::from_fn(n * m, |_, _| rng.sample::<f64, _>(StandardNormal));
        (vc, y, s, k)
    }

    /// Direct (nm × nm) REML evaluation.
    fn dense_reml(vc: &VarianceComponents, y: &DVector<f64>, s: &DMatrix<f64>, k: &DMatrix<f64>) -> f64 {
        let h = vc.dense_h(k);
        let hinv = h.clone().try_inverse().unwrap();
        let sthis = s.transpose() * &hinv * s;
        let p = &hinv - &hinv * s * sthis.clone().try_inverse().unwrap() * s.transpose() * &hinv;
        let nm = y.len();
        let dof = (nm - s.ncols()) as f64;
        -0.5 * (h.determinant().ln() + sthis.determinant().ln() + (y.transpose() * p * y)[0]) - 0.5 * dof * LN_2PI
    }

    #[test]
    fn eigen_k_examples() {
        let e = eigen_k_matrix(&DMatrix::identity(3, 3)).unwrap();
        assert!(e.lambda.iter().all(|&l| (l - 1.0).abs() < 1e-14));
        for j in 0..3 {
            let col = e.u.column(j);
            assert_eq!(col.iter().filter(|v| v.abs() > 0.5).count(), 1);
        }
        let e = eigen_k_matrix(&DMatrix::from_diagonal(&DVector::from_vec(vec![1.0, 2.0]))).unwrap();
        assert_eq!(e.lambda.as_slice(), &[2.0, 1.0]);
        let bad = DMatrix::from_row_slice(2, 2, &[0.5, 1.0, 1.0, 0.5]);
        assert!(matches!(eigen_k_matrix(&bad), Err(Error::NotPsd(_))));
    }

    #[test]
    fn eigen_k_reconstructs() {
        let (_, _, _, k) = random_instance(12, 1, 1, 3);
        let e = eigen_k_matrix(&k).unwrap();
        let orth = e.u.tr_mul(&e.u) - DMatrix::identity(12, 12);
        assert!(orth.amax() < 1e-8);
        let recon = &e.u * DMatrix::from_diagonal(&e.lambda) * e.u.transpose();
        assert!((recon - &k).amax() < 1e-6 * k.amax());
    }

    #[test]
    fn loglik_matches_dense_oracle() {
        for seed in 0..10 {
            let m = 1 + seed as usize % 3;
            let (vc, y, s, k) = random_instance(9, m, 2, seed);
            let eig = eigen_k_matrix(&k).unwrap();
            let fast = reml_loglik(&vc, &y, &s, &eig).unwrap();
            let dense = dense_reml(&vc, &y, &s, &k);
            assert!((fast - dense).abs() < 1e-8 * (1.0 + dense.abs()), "{fast} vs {dense}");
            let zero_g = VarianceComponents::new(DMatrix::zeros(m, m), vc.sigma_e.clone()).unwrap();
            let fast = reml_loglik(&zero_g, &y, &s, &eig).unwrap();
            let dense = dense_reml(&zero_g, &y, &s, &k);
            assert!((fast - dense).abs() < 1e-8 * (1.0 + dense.abs()));
        }
    }

    #[test]
    fn determinant_scaling() {
        let (vc, y, s, k) = random_instance(7, 2, 1, 11);
        let eig = eigen_k_matrix(&k).unwrap();
        let c: f64 = 2.5;
        let scaled = VarianceComponents::new(&vc.sigma_g * c, &vc.sigma_e * c).unwrap();
        let logdet = |v: &VarianceComponents| (0..7).map(|i| linalg::spd_block(&eig.block(v, i)).unwrap().log_det).sum::<f64>();
        assert!((logdet(&scaled) - logdet(&vc) - 14.0 * c.ln()).abs() < 1e-10);
        let _ = (y, s);
    }

    #[test]
    fn two_point_iid_reml_by_hand() {
        let eig = eigen_k_matrix(&DMatrix::identity(2, 2)).unwrap();
        let vc = VarianceComponents::new(DMatrix::from_element(1, 1, 0.5), DMatrix::from_element(1, 1, 1.5)).unwrap();
        let y = DVector::from_vec(vec![1.0, 3.0]);
        let s = DMatrix::from_element(2, 1, 1.0);
        let ll = reml_loglik(&vc, &y, &s, &eig).unwrap();
        let expect = -0.5 * (2.0 * 2f64.ln() + 1.0 + (2.0 * std::f64::consts::PI).ln());
        assert!((ll - expect).abs() < 1e-12);
    }

    #[test]
    fn score_matches_finite_differences_and_ai_is_psd() {
        for seed in 20..30 {
            let m = 1 + seed as usize % 2;
            let (vc, y, s, k) = random_instance(10, m, 2, seed);
            let eig = eigen_k_matrix(&k).unwrap();
            let (score, ai) = reml_score_and_ai(&vc, &y, &s, &eig).unwrap();
            let theta = pack(&vc);
            let h = 1e-5;
            for t in 0..theta.len() {
                let mut up = theta.clone();
                up[t] += h;
                let mut dn = theta.clone();
                dn[t] -= h;
                let fd = (reml_loglik(&unpack(&up, m), &y, &s, &eig).unwrap()
                    - reml_loglik(&unpack(&dn, m), &y, &s, &eig).unwrap())
                    / (2.0 * h);
                assert!((fd - score[t]).abs() <= 1e-5 * score.amax().max(1.0), "t={t} fd={fd} score={}", score[t]);
            }
            assert!(linalg::max_asymmetry(&ai) < 1e-12);
            assert!(linalg::min_eigenvalue(&ai) > -1e-8);
        }
    }

    #[test]
    fn identity_kinship_not_identifiable() {
        let eig = eigen_k_matrix(&DMatrix::identity(5, 5)).unwrap();
        let y = DVector::from_fn(5, |i, _| i as f64);
        let s = DMatrix::from_element(5, 1, 1.0);
        let r = estimate_variance_components(&y, &s, &eig, &RemlOptions::default());
        assert!(matches!(r, Err(Error::NonIdentifiable(_))));
    }

    #[test]
    fn single_trait_optimum_matches_grid_search() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let n = 40;
        // block-family kinship: families of four full sibs
        let k = DMatrix::from_fn(n, n, |i, j| if i == j { 1.0 } else if i / 4 == j / 4 { 0.5 } else { 0.0 });
        let eig = eigen_k_matrix(&k).unwrap();
        let truth = VarianceComponents::new(DMatrix::from_element(1, 1, 1.0), DMatrix::from_element(1, 1, 0.5)).unwrap();
        let h = truth.dense_h(&k);
        let l = h.cholesky().unwrap().l();
        let z = DVector::from_fn(n, |_, _| rng.sample::<f64, _>(StandardNormal));
        let y = l * z + DVector::from_element(n, 2.0);
        let s = DMatrix::from_element(n, 1, 1.0);
        let fit = estimate_variance_components(&y, &s, &eig, &RemlOptions::default()).unwrap();
        assert!(fit.state.converged);
        assert!(fit.state.history.windows(2).all(|w| w[1] >= w[0]));
        let (score, _) = reml_score_and_ai(&fit.vc, &y, &s, &eig).unwrap();
        assert!(score.amax() < 1e-6, "score {score}");

        // coarse-to-fine grid over (σ²g, σ²e)
        let ll = |g: f64, e: f64| {
            let v = VarianceComponents::from_parts(DMatrix::from_element(1, 1, g), DMatrix::from_element(1, 1, e));
            reml_loglik(&v, &y, &s, &eig).unwrap_or(f64::NEG_INFINITY)
        };
        let (mut cg, mut ce, mut width) = (1.5, 1.5, 1.5);
        for _ in 0..8 {
            let mut best = (f64::NEG_INFINITY, cg, ce);
            for a in 0..=40 {
                for b in 0..=40 {
                    let g = (cg - width + 2.0 * width * a as f64 / 40.0).max(0.0);
                    let e = (ce - width + 2.0 * width * b as f64 / 40.0).max(1e-6);
                    let v = ll(g, e);
                    if v > best.0 {
                        best = (v, g, e);
                    }
                }
            }
            cg = best.1;
            ce = best.2;
            width *= 0.2;
        }
        assert!((fit.vc.sigma_g[(0, 0)] - cg).abs() < 1e-4, "{} vs {cg}", fit.vc.sigma_g[(0, 0)]);
        assert!((fit.vc.sigma_e[(0, 0)] - ce).abs() < 1e-4);
        assert!(fit.state.loglik >= ll(cg, ce) - 1e-9);
    }

    #[test]
    fn gls_equals_ols_for_iid_covariance() {
        let (_, y, s, k) = random_instance(15, 2, 3, 42);
        let eig = eigen_k_matrix(&k).unwrap();
        let v = gls_fixed_effects(&VarianceComponents::iid(2, 0.7), &y, &s, &eig).unwrap();
        let ols = (s.transpose() * &s).try_inverse().unwrap() * s.transpose() * &y;
        assert!((v - ols).amax() < 1e-10);
    }

    #[test]
    fn loglik_invariant_to_repeated_eigenvalue_basis() {
        // K with a repeated eigenvalue: rotating within the eigenspace leaves H fixed
        let k = DMatrix::from_fn(6, 6, |i, j| if i == j { 1.0 } else if i / 3 == j / 3 { 0.5 } else { 0.0 });
        let eig = eigen_k_matrix(&k).unwrap();
        let mut swapped = eig.clone();
        // eigenvalue 0.5 has multiplicity 4 (columns 2..6); mix two of its vectors
        let (c, s_) = (0.6, 0.8);
        let a = eig.u.column(2).into_owned();
        let b = eig.u.column(3).into_owned();
        swapped.u.set_column(2, &(&a * c + &b * s_));
        swapped.u.set_column(3, &(&a * -s_ + &b * c));
        let (vc, y, s, _) = random_instance(6, 2, 1, 9);
        let l1 = reml_loglik(&vc, &y, &s, &eig).unwrap();
        let l2 = reml_loglik(&vc, &y, &s, &swapped).unwrap();
        assert!((l1 - l2).abs() < 1e-10);
    }

    #[test]
    fn heritability_examples() {
        let e = DMatrix::from_row_slice(2, 2, &[0.900, 0.490, 0.490, 0.903]);
        let h = heritability_ratio(&VarianceComponents::new(&e * 0.1, e.clone()).unwrap());
        assert!((h.ratio.unwrap() - 0.091).abs() < 5e-4);
        let h0 = heritability_ratio(&VarianceComponents::new(DMatrix::zeros(2, 2), e).unwrap());
        assert_eq!(h0.ratio, Some(0.0));
        let s4 = VarianceComponents::new(
            DMatrix::from_row_slice(2, 2, &[0.40, 0.24, 0.24, 0.40]),
            DMatrix::from_row_slice(2, 2, &[0.20, 0.04, 0.04, 0.24]),
        )
        .unwrap();
        let h4 = heritability_ratio(&s4);
        assert_eq!(h4.ratio, None);
        assert!((h4.per_trait[0] - 0.4 / 0.6).abs() < 1e-12);
        assert!((h4.per_trait[1] - 0.4 / 0.64).abs() < 1e-12);
    }
}
