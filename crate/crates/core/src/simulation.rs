//! Synthetic pedigree data, the six covariance scenarios, ROC / partial AUC
//! evaluation and the four-method comparison.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::genetics::{kinship_from_pedigree, Pedigree, PedigreeRecord};
use crate::linalg;
use crate::model::{GeneScoreMatrix, KinshipMatrix, PhenotypeTable};
use crate::penalties::PenaltyKind;
use crate::solver::{fit_full_path, CovarianceMode, FitOptions, PathOptions, PathResult};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Structure {
    Homogeneity,
    Heterogeneity,
}

impl Structure {
    pub fn as_str(self) -> &'static str {
        match self {
            Structure::Homogeneity => "homogeneity",
            Structure::Heterogeneity => "heterogeneity",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    MtmmGmcp,
    MtmmSgmcp,
    LmmMcp,
    LinearMcp,
}

impl Method {
    pub const ALL: [Method; 4] = [Method::MtmmGmcp, Method::MtmmSgmcp, Method::LmmMcp, Method::LinearMcp];

    pub fn as_str(self) -> &'static str {
        match self {
            Method::MtmmGmcp => "mtmm_gmcp",
            Method::MtmmSgmcp => "mtmm_sgmcp",
            Method::LmmMcp => "lmm_mcp",
            Method::LinearMcp => "linear_mcp",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        Method::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}`")))
    }
}

/// `(Σe, Σd)` of scenarios 1–6; Σd is the polygenic covariance Σg.
pub fn scenario_covariances(id: u8) -> Result<(DMatrix<f64>, DMatrix<f64>)> {
    let (e, d) = match id {
        1 => ([0.20, 0.04, 0.20], [0.40, 0.08, 0.40]),
        2 => ([0.20, 0.10, 0.20], [0.40, 0.20, 0.40]),
        3 => ([0.20, 0.16, 0.20], [0.40, 0.32, 0.40]),
        4 => ([0.20, 0.04, 0.24], [0.40, 0.24, 0.40]),
        5 => ([0.20, 0.16, 0.24], [0.40, 0.04, 0.40]),
        6 => ([0.20, 0.16, 0.24], [0.40, 0.24, 0.40]),
        _ => return Err(Error::Config(format!("scenario must be 1..=6, got {id}"))),
    };
    let mk = |v: [f64; 3]| DMatrix::from_row_slice(2, 2, &[v[0], v[1], v[1], v[2]]);
    Ok((mk(e), mk(d)))
}

/// One simulated data set.
#[derive(Debug, Clone, Serialize)]
pub struct ScenarioSpec {
    pub scenario: u8,
    pub structure: Structure,
    pub families: usize,
    pub family_size: usize,
    pub p: usize,
    pub beta0: f64,
    pub maf_range: (f64, f64),
    /// Scale every trait to unit variance after simulation.
    pub standardize: bool,
}

impl ScenarioSpec {
    pub fn new(scenario: u8, structure: Structure) -> Self {
        Self { scenario, structure, families: 10, family_size: 20, p: 500, beta0: 0.15, maf_range: (0.05, 0.5), standardize: true }
    }

    pub fn n(&self) -> usize {
        self.families * self.family_size
    }
}

/// Gene × trait truth; homogeneity uses genes 1–5 and 16–20 (1-based) for both
/// traits, heterogeneity swaps 16–20 for 21–25 on trait 2.
pub fn truth_support(structure: Structure, p: usize) -> Vec<[bool; 2]> {
    let mut t = vec![[false; 2]; p];
    let mut set = |range: std::ops::RangeInclusive<usize>, l: usize| {
        for j in range {
            if j <= p {
                t[j - 1][l] = true;
            }
        }
    };
    set(1..=5, 0);
    set(16..=20, 0);
    set(1..=5, 1);
    match structure {
        Structure::Homogeneity => set(16..=20, 1),
        Structure::Heterogeneity => set(21..=25, 1),
    }
    t
}

/// Pedigree of `families` three-generation families of `size` members each:
/// two founders, their children, one married-in spouse per child while room
/// remains, and grandchildren dealt round-robin over the couples.
pub fn family_pedigree(families: usize, size: usize) -> Pedigree {
    let mut recs = Vec::with_capacity(families * size);
    for f in 0..families {
        let id = |k: usize| format!("F{f:03}_{k:02}");
        if size == 1 {
            recs.push(PedigreeRecord::new(&id(0), None, None));
            continue;
        }
        recs.push(PedigreeRecord::new(&id(0), None, None));
        recs.push(PedigreeRecord::new(&id(1), None, None));
        let rest = size - 2;
        let children = rest.min(((size + 2) / 5).max(1));
        let left = rest - children;
        let spouses = children.min(left.div_ceil(2));
        let grandchildren = left - spouses;
        let mut next = 2;
        let mut kids = Vec::new();
        for _ in 0..children {
            recs.push(PedigreeRecord::new(&id(next), Some(&id(0)), Some(&id(1))));
            kids.push(id(next));
            next += 1;
        }
        let mut couples = Vec::new();
        for kid in kids.iter().take(spouses) {
            recs.push(PedigreeRecord::new(&id(next), None, None));
            couples.push((kid.clone(), id(next)));
            next += 1;
        }
        for g in 0..grandchildren {
            let (a, b) = &couples[g % couples.len()];
            recs.push(PedigreeRecord::new(&id(next), Some(a), Some(b)));
            next += 1;
        }
    }
    Pedigree::new(recs)
}

#[derive(Debug, Clone)]
pub struct SimulatedGenotypes {
    pub pedigree: Pedigree,
    /// Raw allele counts, n × p.
    pub dosages: DMatrix<f64>,
    /// Standardized dosages.
    pub scores: GeneScoreMatrix,
    pub kinship: KinshipMatrix,
}

/// Gene-dropping through the family pedigree; founder alleles are Bernoulli
/// with a per-variant frequency drawn uniformly from `maf_range`. Variants
/// that come out monomorphic are redrawn.
pub fn simulate_pedigree_genotypes(
    families: usize,
    family_size: usize,
    p: usize,
    maf_range: (f64, f64),
    rng: &mut ChaCha8Rng,
) -> Result<SimulatedGenotypes> {
    if p == 0 || families == 0 || family_size == 0 {
        return Err(Error::Config("families, family size and p must be positive".into()));
    }
    if !(0.0 < maf_range.0 && maf_range.0 <= maf_range.1 && maf_range.1 <= 0.5) {
        return Err(Error::Config("maf range must satisfy 0 < lo <= hi <= 0.5".into()));
    }
    let pedigree = family_pedigree(families, family_size);
    let recs = &pedigree.records;
    let n = recs.len();
    let index: std::collections::HashMap<&str, usize> = recs.iter().enumerate().map(|(i, r)| (r.id.as_str(), i)).collect();
    let parents: Vec<Option<(usize, usize)>> = recs
        .iter()
        .map(|r| match (&r.father, &r.mother) {
            (Some(f), Some(m)) => Some((index[f.as_str()], index[m.as_str()])),
            _ => None,
        })
        .collect();
    let mut dosages = DMatrix::zeros(n, p);
    let mut alleles = vec![[0u8; 2]; n];
    for j in 0..p {
        for _attempt in 0..1000 {
            let maf = if maf_range.0 == maf_range.1 { maf_range.0 } else { rng.random_range(maf_range.0..maf_range.1) };
            // records list parents before children
            for i in 0..n {
                alleles[i] = match parents[i] {
                    None => [rng.random_bool(maf) as u8, rng.random_bool(maf) as u8],
                    Some((f, m)) => [alleles[f][rng.random_range(0..2)], alleles[m][rng.random_range(0..2)]],
                };
            }
            let first = alleles[0][0] + alleles[0][1];
            if alleles.iter().any(|a| a[0] + a[1] != first) {
                break;
            }
        }
        for i in 0..n {
            dosages[(i, j)] = (alleles[i][0] + alleles[i][1]) as f64;
        }
    }
    let mut x = dosages.clone();
    for j in 0..p {
        let col: Vec<f64> = x.column(j).iter().copied().collect();
        let (mu, sd) = (linalg::mean(&col), linalg::sample_sd(&col));
        let s = if sd > 0.0 { sd } else { 1.0 };
        x.column_mut(j).iter_mut().for_each(|v| *v = (*v - mu) / s);
    }
    let ids: Vec<String> = recs.iter().map(|r| r.id.clone()).collect();
    let genes = (1..=p).map(|j| format!("G{j:04}")).collect();
    let scores = GeneScoreMatrix::new(ids, genes, x)?;
    let kinship = kinship_from_pedigree(&pedigree)?;
    Ok(SimulatedGenotypes { pedigree, dosages, scores, kinship })
}

fn sym_sqrt(a: &DMatrix<f64>) -> DMatrix<f64> {
    linalg::sym_apply(a, |l| l.max(0.0).sqrt())
}

/// `Y = X B + G + E` with `vec(G) ~ N(0, Σd ⊗ K)` and `vec(E) ~ N(0, Σe ⊗ I)`.
pub fn simulate_traits(
    x: &DMatrix<f64>,
    k: &DMatrix<f64>,
    b: &DMatrix<f64>,
    sigma_d: &DMatrix<f64>,
    sigma_e: &DMatrix<f64>,
    rng: &mut ChaCha8Rng,
) -> DMatrix<f64> {
    let (n, m) = (x.nrows(), b.ncols());
    let normals = |r: &mut ChaCha8Rng| DMatrix::from_fn(n, m, |_, _| r.sample::<f64, _>(StandardNormal));
    let xi_g = normals(rng);
    let xi_e = normals(rng);
    let g = sym_sqrt(k) * xi_g * sym_sqrt(sigma_d);
    let e = xi_e * sym_sqrt(sigma_e);
    x * b + g + e
}

#[derive(Debug, Clone)]
pub struct ScenarioData {
    pub pheno: PhenotypeTable,
    pub scores: GeneScoreMatrix,
    pub kinship: KinshipMatrix,
    /// p × 2 effect matrix.
    pub b: DMatrix<f64>,
    pub truth: Vec<[bool; 2]>,
}

fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Data for replicate `rep`. Genotypes depend only on `(seed, rep)`, so the
/// scenarios of one replicate share a pedigree sample.
pub fn simulate_scenario(spec: &ScenarioSpec, seed: u64, rep: u64) -> Result<ScenarioData> {
    let (sigma_e, sigma_d) = scenario_covariances(spec.scenario)?;
    let mut grng = stream_rng(seed, rep << 8);
    let geno = simulate_pedigree_genotypes(spec.families, spec.family_size, spec.p, spec.maf_range, &mut grng)?;
    let truth = truth_support(spec.structure, spec.p);
    let b = DMatrix::from_fn(spec.p, 2, |j, l| if truth[j][l] { spec.beta0 } else { 0.0 });
    let code = 1 + 2 * spec.scenario as u64 + matches!(spec.structure, Structure::Heterogeneity) as u64;
    let mut trng = stream_rng(seed, (rep << 8) | code);
    let y = simulate_traits(&geno.scores.x, &geno.kinship.k, &b, &sigma_d, &sigma_e, &mut trng);
    let mut pheno = PhenotypeTable::intercept_only(geno.scores.subject_ids.clone(), vec!["trait1".into(), "trait2".into()], y)?;
    if spec.standardize {
        pheno = pheno.standardize_traits();
    }
    Ok(ScenarioData { pheno, scores: geno.scores, kinship: geno.kinship, b, truth })
}

/// ROC points from (0,0) to (1,1), sorted and made monotone.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RocCurve {
    pub points: Vec<(f64, f64)>,
}

/// Build the staircase from raw (FPR, TPR) points: sort, take the running
/// maximum of TPR, add the endpoints and drop repeats.
pub fn roc_from_points(raw: &[(f64, f64)]) -> RocCurve {
    let mut pts: Vec<(f64, f64)> = raw.to_vec();
    pts.push((0.0, 0.0));
    pts.push((1.0, 1.0));
    pts.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(pts.len());
    let mut best = 0.0f64;
    for (f, t) in pts {
        best = best.max(t);
        let p = (f, best);
        if out.last() != Some(&p) {
            out.push(p);
        }
    }
    RocCurve { points: out }
}

/// ROC of a sequence of selected sets (one per λ) against a truth set.
pub fn roc_from_selections(selections: &[Vec<bool>], truth: &[bool]) -> Result<RocCurve> {
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::DegenerateTruth);
    }
    let raw: Vec<(f64, f64)> = selections
        .iter()
        .map(|sel| {
            let tp = sel.iter().zip(truth).filter(|(s, t)| **s && **t).count();
            let fp = sel.iter().zip(truth).filter(|(s, t)| **s && !**t).count();
            (fp as f64 / neg as f64, tp as f64 / pos as f64)
        })
        .collect();
    Ok(roc_from_points(&raw))
}

/// Gene-level ROC: a gene counts as selected when any trait coefficient is nonzero.
pub fn roc_from_path(path: &PathResult, truth: &[bool]) -> Result<RocCurve> {
    roc_from_selections(&path_selections(path, None), truth)
}

/// Selected sets along a path, for all traits or one trait column.
pub fn path_selections(path: &PathResult, trait_col: Option<usize>) -> Vec<Vec<bool>> {
    path.points
        .iter()
        .map(|pt| {
            let c = &pt.coefficients;
            (0..c.nrows())
                .map(|j| match trait_col {
                    Some(l) => c[(j, l)] != 0.0,
                    None => c.row(j).iter().any(|&v| v != 0.0),
                })
                .collect()
        })
        .collect()
}

/// Area under the curve over FPR ∈ [0, cap], divided by `cap`.
pub fn partial_auc(roc: &RocCurve, cap: f64) -> f64 {
    assert!(cap > 0.0 && cap <= 1.0, "fpr cap must lie in (0, 1]");
    let mut area = 0.0;
    for w in roc.points.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        if x0 >= cap {
            break;
        }
        if x1 <= x0 {
            continue;
        }
        let xe = x1.min(cap);
        let ye = y0 + (y1 - y0) * (xe - x0) / (x1 - x0);
        // widths in units of the cap, so that the diagonal gives exactly cap / 2
        area += 0.5 * (y0 + ye) * ((xe - x0) / cap);
    }
    area
}

/// Per-λ selection sets of one method on one data set. Single-trait methods
/// fit each trait on its own path and take the union at equal path index.
pub fn method_selections(method: Method, data: &ScenarioData, path: &PathOptions) -> Result<Vec<Vec<bool>>> {
    let base = |kind: PenaltyKind, cov: CovarianceMode| {
        let mut o = FitOptions::new(kind);
        o.path = path.clone();
        o.covariance = cov;
        o
    };
    match method {
        Method::MtmmGmcp | Method::MtmmSgmcp => {
            let kind = if method == Method::MtmmGmcp { PenaltyKind::GroupMcp } else { PenaltyKind::SparseGroupMcp };
            let (_, _, p) = fit_full_path(&data.pheno, &data.scores, &data.kinship, &base(kind, CovarianceMode::Reml))?;
            Ok(path_selections(&p, None))
        }
        Method::LmmMcp | Method::LinearMcp => {
            let (cov, kin) = if method == Method::LmmMcp {
                (CovarianceMode::Reml, data.kinship.clone())
            } else {
                (CovarianceMode::Identity, KinshipMatrix::identity(data.pheno.subject_ids.clone()))
            };
            let opts = base(PenaltyKind::Mcp, cov);
            let mut per_trait = Vec::new();
            for l in 0..data.pheno.m() {
                let (_, _, p) = fit_full_path(&data.pheno.select_trait(l), &data.scores, &kin, &opts)?;
                per_trait.push(path_selections(&p, None));
            }
            let len = per_trait.iter().map(|s| s.len()).max().unwrap_or(0);
            Ok((0..len)
                .map(|k| {
                    let mut u = vec![false; data.scores.p()];
                    for s in &per_trait {
                        for (j, &on) in s[k.min(s.len() - 1)].iter().enumerate() {
                            u[j] |= on;
                        }
                    }
                    u
                })
                .collect())
        }
    }
}

#[derive(Debug, Clone)]
pub struct SuiteConfig {
    pub scenarios: Vec<u8>,
    pub structures: Vec<Structure>,
    pub methods: Vec<Method>,
    pub replicates: usize,
    pub seed: u64,
    pub template: ScenarioSpec,
    pub fpr_cap: f64,
    pub path: PathOptions,
}

impl Default for SuiteConfig {
    fn default() -> Self {
        Self {
            scenarios: (1..=6).collect(),
            structures: vec![Structure::Homogeneity, Structure::Heterogeneity],
            methods: Method::ALL.to_vec(),
            replicates: 50,
            seed: 1,
            template: ScenarioSpec::new(1, Structure::Homogeneity),
            fpr_cap: 0.1,
            path: PathOptions::default(),
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteCell {
    pub scenario: u8,
    pub structure: Structure,
    pub method: Method,
    pub mean: f64,
    pub sd: f64,
    pub replicates: usize,
    pub failed: usize,
}

#[derive(Debug, Clone, Serialize)]
pub struct ReplicateCurve {
    pub scenario: u8,
    pub structure: Structure,
    pub method: Method,
    pub replicate: usize,
    /// `None` for the gene-level curve.
    pub trait_index: Option<usize>,
    pub pauc: f64,
    pub roc: RocCurve,
}

#[derive(Debug, Clone, Serialize)]
pub struct SuiteResult {
    pub cells: Vec<SuiteCell>,
    pub curves: Vec<ReplicateCurve>,
}

impl SuiteResult {
    pub fn cell(&self, scenario: u8, structure: Structure, method: Method) -> Option<&SuiteCell> {
        self.cells.iter().find(|c| c.scenario == scenario && c.structure == structure && c.method == method)
    }
}

/// Active-set size beyond which every selected set has FPR above `cap`, so
/// stopping the path there leaves the partial AUC unchanged.
pub fn roc_active_cap(truth: &[bool], cap: f64) -> usize {
    let pos = truth.iter().filter(|&&t| t).count();
    let neg = truth.len() - pos;
    pos + (cap * neg as f64).ceil() as usize + 1
}

type TaskOutcome = Vec<(Method, Result<Vec<ReplicateCurve>>)>;

fn run_task(cfg: &SuiteConfig, scenario: u8, structure: Structure, rep: usize) -> TaskOutcome {
    let spec = ScenarioSpec { scenario, structure, ..cfg.template.clone() };
    let data = match simulate_scenario(&spec, cfg.seed, rep as u64) {
        Ok(d) => d,
        Err(e) => {
            let msg = e.to_string();
            return cfg.methods.iter().map(|&m| (m, Err(Error::Numerical(msg.clone())))).collect();
        }
    };
    let gene_truth: Vec<bool> = data.truth.iter().map(|t| t[0] || t[1]).collect();
    let path = PathOptions { max_active: Some(cfg.path.max_active.unwrap_or_else(|| roc_active_cap(&gene_truth, cfg.fpr_cap))), ..cfg.path.clone() };
    cfg.methods
        .iter()
        .map(|&method| {
            let out = method_selections(method, &data, &path).and_then(|sel| {
                let roc = roc_from_selections(&sel, &gene_truth)?;
                let pauc = partial_auc(&roc, cfg.fpr_cap);
                Ok(vec![ReplicateCurve { scenario, structure, method, replicate: rep, trait_index: None, pauc, roc }])
            });
            (method, out)
        })
        .collect()
}

/// Mean (sd) partial AUC per scenario, structure and method. Replicates run in
/// parallel on independent random streams; failed replicates are counted and
/// left out of the summary.
pub fn run_scenario_suite(cfg: &SuiteConfig) -> Result<SuiteResult> {
    if cfg.replicates < 1 {
        return Err(Error::Config("at least one replicate is required".into()));
    }
    if !(cfg.fpr_cap > 0.0 && cfg.fpr_cap <= 1.0) {
        return Err(Error::Config("fpr cap must lie in (0, 1]".into()));
    }
    let mut tasks = Vec::new();
    for &s in &cfg.scenarios {
        scenario_covariances(s)?;
        for &st in &cfg.structures {
            for r in 0..cfg.replicates {
                tasks.push((s, st, r));
            }
        }
    }
    let outcomes: Vec<TaskOutcome> = tasks.par_iter().map(|&(s, st, r)| run_task(cfg, s, st, r)).collect();
    let mut cells = Vec::new();
    let mut curves = Vec::new();
    for &s in &cfg.scenarios {
        for &st in &cfg.structures {
            for &method in &cfg.methods {
                let mut vals = Vec::new();
                let mut failed = 0;
                for (task, outcome) in tasks.iter().zip(&outcomes) {
                    if task.0 != s || task.1 != st {
                        continue;
                    }
                    for (m, res) in outcome {
                        if *m != method {
                            continue;
                        }
                        match res {
                            Ok(cs) => {
                                vals.push(cs[0].pauc);
                                curves.extend(cs.iter().cloned());
                            }
                            Err(e) => {
                                log::warn!("scenario {s} {} {} replicate {} failed: {e}", st.as_str(), method.as_str(), task.2);
                                failed += 1;
                            }
                        }
                    }
                }
                let (mean, sd) = if vals.is_empty() { (f64::NAN, f64::NAN) } else { (linalg::mean(&vals), linalg::sample_sd(&vals)) };
                cells.push(SuiteCell { scenario: s, structure: st, method, mean, sd, replicates: vals.len(), failed });
            }
        }
    }
    Ok(SuiteResult { cells, curves })
}
