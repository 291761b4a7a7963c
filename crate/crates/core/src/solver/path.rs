//! Group coordinate descent along a warm-started λ path.

use nalgebra::{DMatrix, DVector};

use crate::penalties::{PenaltyKind, PenaltySpec};
use crate::whitening::{backtransform_coefficients, WhitenedProblem};

#[derive(Debug, Clone)]
pub struct PathOptions {
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    /// Stop when the largest coefficient change in a full pass falls below
    /// `tol · max(1, ‖β‖∞)`.
    pub tol: f64,
    pub max_passes: usize,
    /// Stop the path after the first λ whose active set exceeds this size.
    pub max_active: Option<usize>,
    /// Explicit descending grid; overrides the log-spaced default.
    pub lambdas: Option<Vec<f64>>,
    /// Stop the path at the first λ that does not converge.
    pub stop_unconverged: bool,
}

impl Default for PathOptions {
    fn default() -> Self {
        Self { n_lambda: 100, lambda_min_ratio: 0.01, tol: 1e-7, max_passes: 10_000, max_active: None, lambdas: None, stop_unconverged: false }
    }
}

#[derive(Debug, Clone)]
pub struct PathPoint {
    pub lambda: f64,
    /// Coefficients in the orthonormalized basis, one vector per group.
    pub beta: Vec<DVector<f64>>,
    /// Original-scale coefficients, p × group size.
    pub coefficients: DMatrix<f64>,
    pub objective: f64,
    pub passes: usize,
    pub converged: bool,
    pub active: usize,
}

#[derive(Debug, Clone)]
pub struct PathResult {
    pub lambdas: Vec<f64>,
    pub points: Vec<PathPoint>,
    /// Passes after which the objective rose; zero for a correct solver.
    pub monotonicity_violations: usize,
}

impl PathResult {
    /// Genes with any nonzero coefficient at path index `k`.
    pub fn selected_genes(&self, k: usize) -> Vec<usize> {
        let c = &self.points[k].coefficients;
        (0..c.nrows()).filter(|&j| c.row(j).iter().any(|&v| v != 0.0)).collect()
    }
}

fn group_z(w: &WhitenedProblem, j: usize, resid: &DVector<f64>) -> DVector<f64> {
    w.groups[j].v.tr_mul(resid) / w.n as f64
}

/// Smallest λ at which the all-zero solution is optimal.
pub fn lambda_max(w: &WhitenedProblem, spec: &PenaltySpec) -> f64 {
    let zs: Vec<DVector<f64>> =
        (0..w.p()).filter(|&j| w.groups[j].active).map(|j| group_z(w, j, &w.y_tilde)).collect();
    if zs.is_empty() {
        return 0.0;
    }
    let group = zs.iter().map(|z| z.norm() / (z.len() as f64).sqrt()).fold(0.0, f64::max);
    match spec.kind {
        PenaltyKind::GroupMcp => group,
        PenaltyKind::Mcp => zs.iter().map(|z| z.amax()).fold(0.0, f64::max),
        PenaltyKind::SparseGroupMcp => {
            let all_zero = |lam: f64| zs.iter().all(|z| spec.zero_at(z, lam));
            let (mut lo, mut hi) = (0.0, group);
            if hi == 0.0 {
                return 0.0;
            }
            while hi - lo > 1e-6 * hi {
                let mid = 0.5 * (lo + hi);
                if all_zero(mid) {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            hi
        }
    }
}

/// Log-spaced descending grid from `lambda_max` to `lambda_min_ratio · lambda_max`.
pub fn lambda_grid(lmax: f64, opts: &PathOptions) -> Vec<f64> {
    if let Some(l) = &opts.lambdas {
        return l.clone();
    }
    if !(lmax > 0.0) || opts.n_lambda <= 1 {
        return vec![lmax.max(0.0)];
    }
    let last = (opts.n_lambda - 1) as f64;
    (0..opts.n_lambda).map(|i| lmax * opts.lambda_min_ratio.powf(i as f64 / last)).collect()
}

pub fn objective(w: &WhitenedProblem, spec: &PenaltySpec, beta: &[DVector<f64>], resid: &DVector<f64>, lambda: f64) -> f64 {
    resid.norm_squared() / (2.0 * w.n as f64) + beta.iter().map(|b| spec.value(b, lambda)).sum::<f64>()
}

pub fn residual(w: &WhitenedProblem, beta: &[DVector<f64>]) -> DVector<f64> {
    let mut r = w.y_tilde.clone();
    for (g, b) in w.groups.iter().zip(beta) {
        if b.iter().any(|&v| v != 0.0) {
            r -= &g.v * b;
        }
    }
    r
}

struct Solver<'a> {
    w: &'a WhitenedProblem,
    spec: &'a PenaltySpec,
    lambda: f64,
    beta: Vec<DVector<f64>>,
    resid: DVector<f64>,
    last_obj: f64,
    violations: usize,
}

impl Solver<'_> {
    /// One cyclic pass; returns the largest coefficient change.
    fn pass(&mut self, only_active: bool) -> f64 {
        let mut max_change: f64 = 0.0;
        for j in 0..self.w.p() {
            let g = &self.w.groups[j];
            if !g.active {
                continue;
            }
            let nonzero = self.beta[j].iter().any(|&v| v != 0.0);
            if only_active && !nonzero {
                continue;
            }
            let z = group_z(self.w, j, &self.resid) + &self.beta[j];
            let new = self.spec.update(&z, &self.beta[j], self.lambda);
            let delta = &new - &self.beta[j];
            let change = delta.amax();
            if change > 0.0 {
                self.resid -= &g.v * &delta;
                self.beta[j] = new;
                max_change = max_change.max(change);
            }
        }
        let obj = objective(self.w, self.spec, &self.beta, &self.resid, self.lambda);
        if obj > self.last_obj + 1e-12 * self.last_obj.abs().max(1.0) {
            self.violations += 1;
        }
        self.last_obj = obj;
        max_change
    }

    fn threshold(&self, tol: f64) -> f64 {
        let inf = self.beta.iter().map(|b| b.amax()).fold(0.0, f64::max);
        tol * inf.max(1.0)
    }

    /// Full passes alternating with active-set sweeps until a full pass is quiet.
    fn run(&mut self, opts: &PathOptions) -> (usize, bool) {
        let mut passes = 0;
        while passes < opts.max_passes {
            let change = self.pass(false);
            passes += 1;
            if change < self.threshold(opts.tol) {
                return (passes, true);
            }
            while passes < opts.max_passes {
                let change = self.pass(true);
                passes += 1;
                if change < self.threshold(opts.tol) {
                    break;
                }
            }
        }
        (passes, false)
    }
}

/// Minimize at a single λ from the given start (zero when `None`).
pub fn fit_lambda(
    w: &WhitenedProblem,
    spec: &PenaltySpec,
    lambda: f64,
    start: Option<&[DVector<f64>]>,
    opts: &PathOptions,
) -> PathPoint {
    let k = w.group_size();
    let beta: Vec<DVector<f64>> = match start {
        Some(s) => s.to_vec(),
        None => vec![DVector::zeros(k); w.p()],
    };
    let resid = residual(w, &beta);
    let mut solver = Solver { w, spec, lambda, last_obj: f64::INFINITY, beta, resid, violations: 0 };
    solver.last_obj = objective(w, spec, &solver.beta, &solver.resid, lambda);
    let (passes, converged) = solver.run(opts);
    point_from(w, spec, solver.beta, &solver.resid, lambda, passes, converged)
}

fn point_from(
    w: &WhitenedProblem,
    spec: &PenaltySpec,
    beta: Vec<DVector<f64>>,
    resid: &DVector<f64>,
    lambda: f64,
    passes: usize,
    converged: bool,
) -> PathPoint {
    let objective = objective(w, spec, &beta, resid, lambda);
    let active = beta.iter().filter(|b| b.iter().any(|&v| v != 0.0)).count();
    let coefficients = backtransform_coefficients(&beta, &w.groups);
    PathPoint { lambda, beta, coefficients, objective, passes, converged, active }
}

/// Warm-started path over the default or supplied λ grid.
pub fn fit_path(w: &WhitenedProblem, spec: &PenaltySpec, opts: &PathOptions) -> PathResult {
    let lambdas = lambda_grid(lambda_max(w, spec), opts);
    let k = w.group_size();
    let beta = vec![DVector::zeros(k); w.p()];
    let resid = w.y_tilde.clone();
    let mut solver = Solver { w, spec, lambda: lambdas[0], beta, resid, last_obj: f64::INFINITY, violations: 0 };
    let mut points = Vec::with_capacity(lambdas.len());
    for &lambda in &lambdas {
        solver.lambda = lambda;
        solver.last_obj = objective(w, spec, &solver.beta, &solver.resid, lambda);
        let (passes, converged) = solver.run(opts);
        if !converged {
            log::debug!("coordinate descent hit {} passes at lambda {lambda:e}", opts.max_passes);
        }
        let pt = point_from(w, spec, solver.beta.clone(), &solver.resid, lambda, passes, converged);
        let stop = opts.max_active.is_some_and(|cap| pt.active > cap) || (opts.stop_unconverged && !converged);
        points.push(pt);
        if stop {
            break;
        }
    }
    let lambdas = points.iter().map(|p| p.lambda).collect();
    PathResult { lambdas, points, monotonicity_violations: solver.violations }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::penalties::{firm_threshold, group_threshold, PenaltyKind};
    use crate::whitening::{WhitenOptions, WhitenedGroup};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use rand_distr::StandardNormal;

    fn random_problem(n: usize, m: usize, p: usize, seed: u64, signal: &[usize]) -> WhitenedProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let blocks: Vec<(String, DMatrix<f64>)> = (0..p)
            .map(|j| (format!("g{j}"), DMatrix::from_fn(n * m, m, |_, _| rng.sample::<f64, _>(StandardNormal))))
            .collect();
        let mut y = DVector::from_fn(n * m, |_, _| rng.sample::<f64, _>(StandardNormal));
        for &j in signal {
            y += blocks[j].1.column(0) * 1.5;
        }
        WhitenedProblem::from_blocks(n, m, y, blocks, WhitenOptions::default()).unwrap()
    }

    fn orthogonal_problem(n: usize, m: usize, p: usize, seed: u64) -> WhitenedProblem {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let a = DMatrix::from_fn(n * m, p * m, |_, _| rng.sample::<f64, _>(StandardNormal));
        let q = a.qr().q() * (n as f64).sqrt();
        let groups = (0..p)
            .map(|j| WhitenedGroup { gene_id: format!("g{j}"), v: q.columns(j * m, m).into_owned(), r: DMatrix::identity(m, m), active: true })
            .collect();
        let y = DVector::from_fn(n * m, |_, _| rng.sample::<f64, _>(StandardNormal) * 2.0);
        WhitenedProblem { n, m, y_tilde: y, groups, warnings: vec![] }
    }

    #[test]
    fn lambda_max_properties() {
        let mut w = random_problem(30, 2, 5, 1, &[0]);
        let spec = PenaltySpec::new(PenaltyKind::GroupMcp);
        let lmax = lambda_max(&w, &spec);
        let at = fit_lambda(&w, &spec, lmax, None, &PathOptions::default());
        assert_eq!(at.active, 0);
        let below = fit_lambda(&w, &spec, 0.99 * lmax, None, &PathOptions::default());
        assert!(below.active > 0);
        w.y_tilde *= 3.0;
        assert!((lambda_max(&w, &spec) - 3.0 * lmax).abs() < 1e-12 * lmax);
        w.y_tilde.fill(0.0);
        assert_eq!(lambda_max(&w, &spec), 0.0);

        let w = random_problem(30, 2, 5, 2, &[1]);
        let sg = PenaltySpec::new(PenaltyKind::SparseGroupMcp);
        let lmax = lambda_max(&w, &sg);
        assert_eq!(fit_lambda(&w, &sg, lmax, None, &PathOptions::default()).active, 0);
        assert!(fit_lambda(&w, &sg, 0.99 * lmax, None, &PathOptions::default()).active > 0);
    }

    #[test]
    fn grid_is_log_spaced_and_descending() {
        let g = lambda_grid(2.0, &PathOptions::default());
        assert_eq!(g.len(), 100);
        assert!((g[0] - 2.0).abs() < 1e-15 && (g[99] - 0.02).abs() < 1e-12);
        assert!(g.windows(2).all(|w| w[1] < w[0]));
    }

    #[test]
    fn single_group_path_is_the_operator() {
        let w = random_problem(25, 2, 1, 3, &[0]);
        let spec = PenaltySpec::new(PenaltyKind::GroupMcp);
        let path = fit_path(&w, &spec, &PathOptions::default());
        let z = group_z(&w, 0, &w.y_tilde);
        for pt in &path.points {
            let op = group_threshold(&z, pt.lambda, spec.gamma);
            assert!((&pt.beta[0] - op).amax() < 1e-10);
        }
        let w1 = random_problem(25, 1, 1, 4, &[0]);
        let mcp = PenaltySpec::new(PenaltyKind::Mcp);
        let z = group_z(&w1, 0, &w1.y_tilde)[0];
        for pt in &fit_path(&w1, &mcp, &PathOptions::default()).points {
            assert!((pt.beta[0][0] - firm_threshold(z, pt.lambda, 3.0)).abs() < 1e-10);
        }
    }

    #[test]
    fn orthogonal_design_is_groupwise() {
        let w = orthogonal_problem(20, 2, 3, 5);
        for kind in [PenaltyKind::GroupMcp, PenaltyKind::SparseGroupMcp] {
            let spec = PenaltySpec::new(kind);
            let path = fit_path(&w, &spec, &PathOptions { tol: 1e-12, ..Default::default() });
            for pt in &path.points {
                for j in 0..3 {
                    let z = group_z(&w, j, &w.y_tilde);
                    let op = spec.update(&z, &DVector::zeros(2), pt.lambda);
                    assert!((&pt.beta[j] - op).amax() < 1e-8, "{kind:?} λ={}", pt.lambda);
                }
            }
        }
    }

    #[test]
    fn random_instance_is_stationary_and_locally_optimal() {
        let w = random_problem(40, 2, 10, 6, &[0, 3]);
        let spec = PenaltySpec::new(PenaltyKind::GroupMcp);
        let path = fit_path(&w, &spec, &PathOptions { tol: 1e-10, ..Default::default() });
        assert_eq!(path.monotonicity_violations, 0);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for pt in path.points.iter().step_by(9) {
            let resid = residual(&w, &pt.beta);
            for j in 0..w.p() {
                if pt.beta[j].iter().all(|&v| v == 0.0) {
                    continue;
                }
                let z = group_z(&w, j, &resid) + &pt.beta[j];
                let b = &pt.beta[j];
                let r = b.norm();
                let tau = 2f64.sqrt() * pt.lambda;
                let grad = b - &z + b * ((tau - r / spec.gamma).max(0.0) / r);
                assert!(grad.amax() < 1e-5, "KKT residual {}", grad.amax());
            }
            for _ in 0..1000 {
                let scale = 10f64.powf(rng.random_range(-4.0..-1.0));
                let pert: Vec<DVector<f64>> = pt
                    .beta
                    .iter()
                    .map(|b| {
                        if rng.random_bool(0.3) {
                            b + DVector::from_fn(2, |_, _| rng.random_range(-1.0..1.0) * scale)
                        } else {
                            b.clone()
                        }
                    })
                    .collect();
                let f = objective(&w, &spec, &pert, &residual(&w, &pert), pt.lambda);
                assert!(pt.objective <= f + 1e-10);
            }
        }
    }

    #[test]
    fn warm_start_matches_cold_start_where_locally_convex() {
        let w = random_problem(60, 2, 20, 8, &[1, 5, 9]);
        let spec = PenaltySpec::new(PenaltyKind::GroupMcp);
        let opts = PathOptions { tol: 1e-12, ..Default::default() };
        let path = fit_path(&w, &spec, &opts);
        let mut checked = 0;
        for pt in &path.points {
            let act: Vec<usize> = (0..w.p()).filter(|&j| pt.beta[j].iter().any(|&v| v != 0.0)).collect();
            if act.is_empty() {
                continue;
            }
            let va = DMatrix::from_fn(w.n * 2, act.len() * 2, |i, c| w.groups[act[c / 2]].v[(i, c % 2)]);
            let gram = va.tr_mul(&va) / w.n as f64;
            if crate::linalg::min_eigenvalue(&gram) <= 1.0 / spec.gamma {
                continue;
            }
            let cold = fit_lambda(&w, &spec, pt.lambda, None, &opts);
            for j in 0..w.p() {
                assert!((&cold.beta[j] - &pt.beta[j]).amax() < 1e-6);
            }
            checked += 1;
        }
        assert!(checked > 10);
    }

    #[test]
    fn max_active_truncates() {
        let w = random_problem(30, 1, 20, 9, &[2]);
        let spec = PenaltySpec::new(PenaltyKind::Mcp);
        let path = fit_path(&w, &spec, &PathOptions { max_active: Some(3), ..Default::default() });
        assert!(path.points.len() < 100);
        assert!(path.points.last().unwrap().active > 3);
        assert!(path.points[..path.points.len() - 1].iter().all(|p| p.active <= 3));
    }
}
