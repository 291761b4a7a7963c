//! Command-line front end: argument parsing, configuration files and report
//! emission.
//!
//! Settings resolve as command-line flag, then config file, then default.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::genetics::{collapse_weighted_sum, grm_from_markers, impute_and_standardize, kinship_from_pedigree};
use crate::io;
use crate::model::{align_subjects, GeneScoreMatrix, KinshipMatrix, PhenotypeTable};
use crate::penalties::{PenaltyKind, PenaltySpec};
use crate::prediction::{blup_predict, cv_prediction_report, prediction_correlation, raw_scores, TrainedModel};
use crate::simulation::{run_scenario_suite, simulate_scenario, Method, ScenarioSpec, Structure, SuiteConfig, SuiteResult};
use crate::solver::{fit_mtmm, CovarianceMode, FitOptions, FitResult, PathOptions};
use crate::whitening::WhitenOptions;

#[derive(Debug, Parser)]
#[command(name = "pmtmm", version, about = "Penalized multi-trait mixed models for gene-level association")]
pub struct Cli {
    /// Worker threads (1 gives the reproducibility reference).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
    /// TOML file with default settings; command-line flags take precedence.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build a kinship matrix from genotypes or a pedigree.
    Kinship(KinshipArgs),
    /// Collapse SNP dosages into gene scores.
    Collapse(CollapseArgs),
    /// Fit a penalized model with cross-validated tuning.
    Fit(FitArgs),
    /// Predict traits by BLUP and report prediction correlations.
    Predict(PredictArgs),
    /// Run the simulation comparison or write simulated datasets.
    Simulate(SimulateArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum KinshipMethod {
    Grm,
    Pedigree,
}

#[derive(Debug, Args)]
pub struct KinshipArgs {
    #[arg(long, value_enum)]
    pub method: KinshipMethod,
    /// Genotype TSV (grm) or pedigree TSV (pedigree).
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CollapseArgs {
    #[arg(long)]
    pub genotypes: PathBuf,
    #[arg(long)]
    pub map: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
}

/// Model and tuning flags shared by `fit` and `predict`.
#[derive(Debug, Clone, Default, Args)]
pub struct ModelFlags {
    /// mcp, group_mcp or sparse_group_mcp.
    #[arg(long)]
    pub penalty: Option<String>,
    #[arg(long)]
    pub gamma: Option<f64>,
    #[arg(long)]
    pub lambda2_ratio: Option<f64>,
    #[arg(long)]
    pub folds: Option<usize>,
    #[arg(long)]
    pub n_lambda: Option<usize>,
    #[arg(long)]
    pub lambda_min_ratio: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Ordinary linear model (no kinship).
    #[arg(long)]
    pub linear: bool,
    /// Fail on rank-deficient gene groups instead of adding jitter.
    #[arg(long)]
    pub strict: bool,
    /// Analyse a single trait by name.
    #[arg(long = "trait")]
    pub trait_name: Option<String>,
}

#[derive(Debug, Args)]
pub struct FitArgs {
    #[arg(long)]
    pub pheno: PathBuf,
    #[arg(long)]
    pub scores: PathBuf,
    /// Required unless --linear.
    #[arg(long)]
    pub kinship: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Compute the observed occurrence index.
    #[arg(long)]
    pub ooi: bool,
    #[arg(long)]
    pub ooi_reps: Option<usize>,
    /// JSON report.
    #[arg(long)]
    pub out: PathBuf,
    /// Coefficient table (genes × traits) at the selected λ.
    #[arg(long)]
    pub coef: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct PredictArgs {
    /// Training phenotypes.
    #[arg(long)]
    pub train: PathBuf,
    /// Test phenotypes; without it, V-fold prediction on the training set.
    #[arg(long)]
    pub test: Option<PathBuf>,
    #[arg(long)]
    pub scores: PathBuf,
    #[arg(long)]
    pub kinship: Option<PathBuf>,
    #[arg(long)]
    pub covariates: Option<PathBuf>,
    #[command(flatten)]
    pub model: ModelFlags,
    /// Folds for V-fold prediction.
    #[arg(long)]
    pub pred_folds: Option<usize>,
    /// Predictions TSV (test mode).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// JSON correlation report.
    #[arg(long)]
    pub report: PathBuf,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    /// Scenario ids, comma separated (1-6).
    #[arg(long, value_delimiter = ',')]
    pub scenarios: Option<Vec<u8>>,
    /// homogeneity, heterogeneity or both.
    #[arg(long)]
    pub structure: Option<String>,
    /// Methods, comma separated.
    #[arg(long, value_delimiter = ',')]
    pub methods: Option<Vec<String>>,
    #[arg(long)]
    pub reps: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Nonzero effect size.
    #[arg(long)]
    pub beta0: Option<f64>,
    #[arg(long)]
    pub fpr_cap: Option<f64>,
    #[arg(long)]
    pub families: Option<usize>,
    #[arg(long)]
    pub family_size: Option<usize>,
    /// Number of genes.
    #[arg(long)]
    pub genes: Option<usize>,
    #[arg(long)]
    pub n_lambda: Option<usize>,
    /// Write the replicate datasets instead of running the comparison.
    #[arg(long)]
    pub data_only: bool,
    /// Replicate written by --data-only.
    #[arg(long, default_value_t = 0)]
    pub rep: u64,
    #[arg(long)]
    pub out_dir: PathBuf,
}

/// Keys accepted in a `--config` file.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub penalty: Option<String>,
    pub gamma: Option<f64>,
    pub lambda2_ratio: Option<f64>,
    pub folds: Option<usize>,
    pub n_lambda: Option<usize>,
    pub lambda_min_ratio: Option<f64>,
    pub seed: Option<u64>,
    pub ooi_reps: Option<usize>,
    pub pred_folds: Option<usize>,
    pub fpr_cap: Option<f64>,
    pub scenarios: Option<Vec<u8>>,
    pub structure: Option<String>,
    pub methods: Option<Vec<String>>,
    pub reps: Option<usize>,
    pub beta0: Option<f64>,
    pub families: Option<usize>,
    pub family_size: Option<usize>,
    pub genes: Option<usize>,
    pub threads: Option<usize>,
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = io::read_text(path)?;
        toml::from_str(&text).map_err(|e| Error::Config(format!("{}: {e}", path.display())))
    }
}

fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Resolved model settings, echoed into reports.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSettings {
    pub penalty: PenaltySpec,
    pub folds: usize,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub seed: u64,
    pub linear: bool,
    pub strict: bool,
    pub trait_name: Option<String>,
    pub ooi_reps: usize,
}

impl ModelSettings {
    pub fn resolve(flags: &ModelFlags, cfg: &RunConfig, ooi_reps: usize) -> Result<Self> {
        let kind = PenaltyKind::parse(&pick(flags.penalty.clone(), cfg.penalty.clone(), "group_mcp".into()))?;
        let mut penalty = PenaltySpec::new(kind);
        penalty.gamma = pick(flags.gamma, cfg.gamma, kind.default_gamma());
        penalty.lambda2_ratio = pick(flags.lambda2_ratio, cfg.lambda2_ratio, penalty.lambda2_ratio);
        penalty.validate()?;
        let s = Self {
            penalty,
            folds: pick(flags.folds, cfg.folds, 5),
            n_lambda: pick(flags.n_lambda, cfg.n_lambda, 100),
            lambda_min_ratio: pick(flags.lambda_min_ratio, cfg.lambda_min_ratio, 0.01),
            seed: pick(flags.seed, cfg.seed, 1),
            linear: flags.linear,
            strict: flags.strict,
            trait_name: flags.trait_name.clone(),
            ooi_reps,
        };
        if s.folds < 2 {
            return Err(Error::Config("folds must be at least 2".into()));
        }
        if s.n_lambda < 2 {
            return Err(Error::Config("n_lambda must be at least 2".into()));
        }
        if !(s.lambda_min_ratio > 0.0 && s.lambda_min_ratio < 1.0) {
            return Err(Error::Config("lambda_min_ratio must lie in (0, 1)".into()));
        }
        Ok(s)
    }

    pub fn fit_options(&self) -> FitOptions {
        let mut o = FitOptions::new(self.penalty.kind);
        o.penalty = self.penalty;
        o.path = PathOptions { n_lambda: self.n_lambda, lambda_min_ratio: self.lambda_min_ratio, ..PathOptions::default() };
        o.folds = self.folds;
        o.seed = self.seed;
        o.whiten = WhitenOptions { strict: self.strict };
        o.ooi_reps = self.ooi_reps;
        if self.linear {
            o.covariance = CovarianceMode::Identity;
        }
        o
    }
}

fn select_named_trait(pheno: PhenotypeTable, name: &Option<String>) -> Result<PhenotypeTable> {
    match name {
        None => Ok(pheno),
        Some(n) => {
            let l = pheno
                .trait_names
                .iter()
                .position(|t| t == n)
                .ok_or_else(|| Error::Config(format!("no trait named `{n}`")))?;
            Ok(pheno.select_trait(l))
        }
    }
}

fn load_pheno(path: &Path, covariates: &Option<PathBuf>, trait_name: &Option<String>) -> Result<PhenotypeTable> {
    let mut pheno = io::read_phenotypes(path)?;
    if let Some(c) = covariates {
        pheno = io::read_covariates_into(c, &pheno)?;
    }
    select_named_trait(pheno, trait_name)
}

fn load_kinship(path: &Option<PathBuf>, linear: bool, ids: &[String]) -> Result<KinshipMatrix> {
    match (path, linear) {
        (_, true) => Ok(KinshipMatrix::identity(ids.to_vec())),
        (Some(p), false) => io::read_kinship(p),
        (None, false) => Err(Error::Config("--kinship is required unless --linear".into())),
    }
}

/// Parse arguments and run; returns the process exit code.
pub fn run_from_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return code;
        }
    };
    match run(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn run(cli: Cli) -> Result<()> {
    let cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(t) = cli.threads.or(cfg.threads) {
        if t == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(t).build_global() {
            log::debug!("thread pool already initialised: {e}");
        }
    }
    match cli.command {
        Command::Kinship(a) => cmd_kinship(&a),
        Command::Collapse(a) => cmd_collapse(&a),
        Command::Fit(a) => cmd_fit(&a, &cfg),
        Command::Predict(a) => cmd_predict(&a, &cfg),
        Command::Simulate(a) => cmd_simulate(&a, &cfg),
    }
}

pub fn cmd_kinship(a: &KinshipArgs) -> Result<()> {
    let table = io::Table::read(&a.input)?;
    let pedigree_like = io::is_pedigree_header(&table.header);
    let kin = match a.method {
        KinshipMethod::Grm => {
            if pedigree_like {
                return Err(Error::Config(format!("{} is a pedigree file; use --method pedigree", a.input.display())));
            }
            let clean = impute_and_standardize(&io::read_genotypes(&a.input)?)?;
            if !clean.dropped_snps.is_empty() {
                log::warn!("dropped {} monomorphic SNPs", clean.dropped_snps.len());
            }
            grm_from_markers(&clean.genotypes)?
        }
        KinshipMethod::Pedigree => kinship_from_pedigree(&io::read_pedigree(&a.input)?)?,
    };
    io::write_kinship(&a.out, &kin)?;
    println!("kinship: {} subjects written to {}", kin.n(), a.out.display());
    Ok(())
}

pub fn cmd_collapse(a: &CollapseArgs) -> Result<()> {
    let map = io::read_gene_map(&a.map)?;
    let clean = impute_and_standardize(&io::read_genotypes(&a.genotypes)?)?;
    if !clean.dropped_snps.is_empty() {
        log::warn!("dropped {} monomorphic SNPs", clean.dropped_snps.len());
    }
    let collapsed = collapse_weighted_sum(&clean.genotypes, &map)?;
    if collapsed.unmapped_snps > 0 {
        log::warn!("{} gene-map SNPs are absent from the genotypes and were skipped", collapsed.unmapped_snps);
    }
    io::write_gene_scores(&a.out, &collapsed.scores)?;
    println!("collapse: {} genes for {} subjects written to {}", collapsed.scores.p(), collapsed.scores.n(), a.out.display());
    Ok(())
}

/// A selected gene with its per-trait estimates and occurrence index.
#[derive(Debug, Clone, Serialize)]
pub struct SelectedGene {
    pub gene_id: String,
    pub estimates: Vec<f64>,
    pub ooi: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize)]
struct FitReport<'a> {
    #[serde(flatten)]
    fit: &'a FitResult,
    selected: Vec<SelectedGene>,
    n_subjects: usize,
    config: &'a ModelSettings,
}

fn selected_rows(fit: &FitResult) -> Vec<SelectedGene> {
    fit.gene_ids
        .iter()
        .enumerate()
        .filter(|(j, _)| fit.coefficients[*j].iter().any(|&b| b != 0.0))
        .map(|(j, g)| SelectedGene {
            gene_id: g.clone(),
            estimates: fit.coefficients[j].clone(),
            ooi: fit.ooi.as_ref().map(|o| o[j].clone()),
        })
        .collect()
}

/// Fit on aligned inputs. Returns the fit, the aligned phenotypes and the
/// report text.
pub fn fit_report(
    pheno: &PhenotypeTable,
    scores: &GeneScoreMatrix,
    kinship: &KinshipMatrix,
    settings: &ModelSettings,
) -> Result<(FitResult, String)> {
    let (pheno, scores, kinship) = align_subjects(pheno, scores, kinship)?;
    let fit = fit_mtmm(&pheno, &scores, &kinship, &settings.fit_options())?;
    let report = FitReport { fit: &fit, selected: selected_rows(&fit), n_subjects: pheno.n(), config: settings };
    let text = io::to_sorted_json(&report)?;
    Ok((fit, text))
}

pub fn coefficient_table(fit: &FitResult) -> String {
    io::format_table("gene_id", &fit.trait_names, &fit.gene_ids, &fit.coefficient_matrix())
}

pub fn cmd_fit(a: &FitArgs, cfg: &RunConfig) -> Result<()> {
    let ooi_reps = if a.ooi { pick(a.ooi_reps, cfg.ooi_reps, 100) } else { 0 };
    let settings = ModelSettings::resolve(&a.model, cfg, ooi_reps)?;
    let pheno = load_pheno(&a.pheno, &a.covariates, &settings.trait_name)?;
    let scores = io::read_gene_scores(&a.scores)?;
    let kinship = load_kinship(&a.kinship, settings.linear, &scores.subject_ids)?;
    let (fit, text) = fit_report(&pheno, &scores, &kinship, &settings)?;
    for w in &fit.warnings {
        log::warn!("{w}");
    }
    io::write_text(&a.out, &text)?;
    if let Some(c) = &a.coef {
        io::write_text(c, &coefficient_table(&fit))?;
    }
    let mut summary = String::new();
    let _ = writeln!(summary, "penalty {} (gamma {}), covariance {}", fit.penalty.kind.as_str(), fit.penalty.gamma, fit.covariance);
    let _ = writeln!(summary, "lambda {:.6} (index {} of {})", fit.lambda_selected, fit.lambda_index, fit.lambdas.len());
    if let Some(h) = fit.heritability.ratio {
        let _ = writeln!(summary, "heritability ratio {h:.3}");
    }
    let _ = writeln!(summary, "{} selected genes: {}", fit.selected_genes.len(), fit.selected_genes.join(", "));
    print!("{summary}");
    Ok(())
}

#[derive(Debug, Clone, Serialize)]
struct PredictionOutput<'a> {
    trait_names: &'a [String],
    correlations: Vec<Option<f64>>,
    n_train: usize,
    n_test: usize,
    variance_components: &'a crate::model::VarianceComponents,
    selected_genes: &'a [String],
    config: &'a ModelSettings,
}

#[derive(Debug, Clone, Serialize)]
struct CvPredictionOutput<'a> {
    #[serde(flatten)]
    report: &'a crate::prediction::PredictionReport,
    formatted: Vec<String>,
    folds: usize,
    config: &'a ModelSettings,
}

fn rows_for(ids: &[String], index: &HashMap<&str, usize>, what: &str) -> Result<Vec<usize>> {
    ids.iter()
        .map(|id| index.get(id.as_str()).copied().ok_or_else(|| Error::invalid(format!("subject `{id}` missing from {what}"))))
        .collect()
}

/// Train/test BLUP. Returns the training fit, predictions (n_test × m),
/// per-trait correlations and the number of training subjects used.
pub fn predict_split(
    train: &PhenotypeTable,
    test: &PhenotypeTable,
    scores: &GeneScoreMatrix,
    kinship: &KinshipMatrix,
    settings: &ModelSettings,
) -> Result<(FitResult, DMatrix<f64>, Vec<Option<f64>>, usize)> {
    if train.trait_names != test.trait_names {
        return Err(Error::invalid("training and test phenotype files have different traits"));
    }
    let s_index: HashMap<&str, usize> = scores.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let k_index: HashMap<&str, usize> = kinship.index_of().into_iter().collect();
    let train_ids: Vec<String> = {
        let mut v: Vec<String> = train
            .subject_ids
            .iter()
            .filter(|id| s_index.contains_key(id.as_str()) && k_index.contains_key(id.as_str()))
            .cloned()
            .collect();
        v.sort();
        v
    };
    if train_ids.len() < 2 {
        return Err(Error::EmptyIntersection);
    }
    let p_index: HashMap<&str, usize> = train.subject_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let p_tr = train.select_subjects(&rows_for(&train_ids, &p_index, "training phenotypes")?);
    let tr_scores = rows_for(&train_ids, &s_index, "gene scores")?;
    let tr_kin = rows_for(&train_ids, &k_index, "kinship")?;
    let s_tr = raw_scores(scores, &tr_scores);
    let k_tr = kinship.select_subjects(&tr_kin);
    let te_scores = rows_for(&test.subject_ids, &s_index, "gene scores")?;
    let te_kin = rows_for(&test.subject_ids, &k_index, "kinship")?;
    let fit = fit_mtmm(&p_tr, &s_tr, &k_tr, &settings.fit_options())?;
    let model = TrainedModel::from_fit(&fit, &p_tr, &s_tr, &k_tr);
    let k_tt = kinship.block(&te_kin, &tr_kin);
    let x_te = raw_scores(scores, &te_scores).x;
    let m = train.m();
    let mut pred = DMatrix::zeros(test.n(), m);
    let mut cors = Vec::with_capacity(m);
    for l in 0..m {
        let p = blup_predict(&model, &k_tt, &test.w, &x_te, l)?;
        pred.column_mut(l).copy_from(&p);
        let obs: Vec<f64> = test.y.column(l).iter().copied().collect();
        cors.push(prediction_correlation(p.as_slice(), &obs).ok());
    }
    Ok((fit, pred, cors, train_ids.len()))
}

pub fn cmd_predict(a: &PredictArgs, cfg: &RunConfig) -> Result<()> {
    let settings = ModelSettings::resolve(&a.model, cfg, 0)?;
    let train = load_pheno(&a.train, &a.covariates, &settings.trait_name)?;
    let scores = io::read_gene_scores(&a.scores)?;
    let kinship = load_kinship(&a.kinship, settings.linear, &scores.subject_ids)?;
    match &a.test {
        Some(test_path) => {
            let test = load_pheno(test_path, &a.covariates, &settings.trait_name)?;
            let (fit, pred, cors, n_train) = predict_split(&train, &test, &scores, &kinship, &settings)?;
            if let Some(out) = &a.out {
                io::write_text(out, &io::format_table("subject_id", &test.trait_names, &test.subject_ids, &pred))?;
            }
            let report = PredictionOutput {
                trait_names: &test.trait_names,
                correlations: cors.clone(),
                n_train,
                n_test: test.n(),
                variance_components: &fit.variance_components,
                selected_genes: &fit.selected_genes,
                config: &settings,
            };
            io::write_json(&a.report, &report)?;
            for (name, c) in test.trait_names.iter().zip(&cors) {
                match c {
                    Some(c) => println!("{name}: correlation {c:.3}"),
                    None => println!("{name}: correlation NA"),
                }
            }
        }
        None => {
            let (pheno, scores, kinship) = align_subjects(&train, &scores, &kinship)?;
            let folds = pick(a.pred_folds, cfg.pred_folds, 5);
            let report = cv_prediction_report(&pheno, &scores, &kinship, &settings.fit_options(), folds, settings.seed)?;
            let formatted = report.formatted();
            io::write_json(&a.report, &CvPredictionOutput { report: &report, formatted: formatted.clone(), folds, config: &settings })?;
            for (name, f) in report.trait_names.iter().zip(&formatted) {
                println!("{name}: {f}");
            }
        }
    }
    Ok(())
}

fn parse_structures(s: &str) -> Result<Vec<Structure>> {
    match s {
        "homogeneity" | "hom" => Ok(vec![Structure::Homogeneity]),
        "heterogeneity" | "het" => Ok(vec![Structure::Heterogeneity]),
        "both" => Ok(vec![Structure::Homogeneity, Structure::Heterogeneity]),
        other => Err(Error::Config(format!("unknown structure `{other}`"))),
    }
}

pub fn suite_config(a: &SimulateArgs, cfg: &RunConfig) -> Result<SuiteConfig> {
    let d = SuiteConfig::default();
    let mut template = d.template.clone();
    template.beta0 = pick(a.beta0, cfg.beta0, template.beta0);
    template.families = pick(a.families, cfg.families, template.families);
    template.family_size = pick(a.family_size, cfg.family_size, template.family_size);
    template.p = pick(a.genes, cfg.genes, template.p);
    let methods = match a.methods.clone().or(cfg.methods.clone()) {
        Some(ms) => ms.iter().map(|m| Method::parse(m)).collect::<Result<Vec<_>>>()?,
        None => d.methods.clone(),
    };
    let path = PathOptions { n_lambda: pick(a.n_lambda, cfg.n_lambda, d.path.n_lambda), ..d.path.clone() };
    let out = SuiteConfig {
        scenarios: pick(a.scenarios.clone(), cfg.scenarios.clone(), d.scenarios.clone()),
        structures: parse_structures(&pick(a.structure.clone(), cfg.structure.clone(), "both".into()))?,
        methods,
        replicates: pick(a.reps, cfg.reps, d.replicates),
        seed: pick(a.seed, cfg.seed, d.seed),
        template,
        fpr_cap: pick(a.fpr_cap, cfg.fpr_cap, d.fpr_cap),
        path,
    };
    if out.template.family_size < 3 || out.template.families == 0 || out.template.p < 25 {
        return Err(Error::Config("need families >= 1, family_size >= 3 and at least 25 genes".into()));
    }
    if out.methods.is_empty() || out.scenarios.is_empty() {
        return Err(Error::Config("no methods or scenarios selected".into()));
    }
    Ok(out)
}

fn fmt_cell(mean: f64, sd: f64) -> String {
    if mean.is_nan() {
        "NA".into()
    } else if sd.is_nan() {
        format!("{mean:.3}(NA)")
    } else {
        format!("{mean:.3}({sd:.3})")
    }
}

/// Wide table: one row per scenario and structure, one column per method.
pub fn scenario_table(cfg: &SuiteConfig, res: &SuiteResult) -> String {
    let mut out = String::from("scenario\tstructure");
    for m in &cfg.methods {
        out.push('\t');
        out.push_str(m.as_str());
    }
    out.push('\n');
    for &s in &cfg.scenarios {
        for &st in &cfg.structures {
            let _ = write!(out, "{s}\t{}", st.as_str());
            for &m in &cfg.methods {
                let cell = res.cell(s, st, m).map(|c| fmt_cell(c.mean, c.sd)).unwrap_or_else(|| "NA".into());
                let _ = write!(out, "\t{cell}");
            }
            out.push('\n');
        }
    }
    out
}

pub fn long_table(res: &SuiteResult) -> String {
    let mut out = String::from("scenario\tstructure\tmethod\tmean_pauc\tsd_pauc\treplicates\tfailed\n");
    for c in &res.cells {
        let _ = writeln!(
            out,
            "{}\t{}\t{}\t{}\t{}\t{}\t{}",
            c.scenario,
            c.structure.as_str(),
            c.method.as_str(),
            io::fmt_num(c.mean),
            io::fmt_num(c.sd),
            c.replicates,
            c.failed
        );
    }
    out
}

pub fn roc_table(res: &SuiteResult) -> String {
    let mut out = String::from("scenario\tstructure\tmethod\treplicate\tpauc\tfpr\ttpr\n");
    for c in &res.curves {
        for (f, t) in &c.roc.points {
            let _ = writeln!(
                out,
                "{}\t{}\t{}\t{}\t{}\t{}\t{}",
                c.scenario,
                c.structure.as_str(),
                c.method.as_str(),
                c.replicate,
                io::fmt_num(c.pauc),
                io::fmt_num(*f),
                io::fmt_num(*t)
            );
        }
    }
    out
}

fn structure_tag(s: Structure) -> &'static str {
    match s {
        Structure::Homogeneity => "hom",
        Structure::Heterogeneity => "het",
    }
}

pub fn cmd_simulate(a: &SimulateArgs, cfg: &RunConfig) -> Result<()> {
    let suite = suite_config(a, cfg)?;
    if a.data_only {
        for &s in &suite.scenarios {
            for &st in &suite.structures {
                let spec = ScenarioSpec { scenario: s, structure: st, ..suite.template.clone() };
                let data = simulate_scenario(&spec, suite.seed, a.rep)?;
                let prefix = a.out_dir.join(format!("s{s}_{}", structure_tag(st)));
                let file = |name: &str| PathBuf::from(format!("{}_{name}", prefix.display()));
                io::write_phenotypes(&file("pheno.tsv"), &data.pheno)?;
                io::write_gene_scores(&file("scores.tsv"), &data.scores)?;
                io::write_kinship(&file("kinship.tsv"), &data.kinship)?;
                let truth = DMatrix::from_fn(data.b.nrows(), 2, |j, l| data.b[(j, l)]);
                io::write_text(&file("effects.tsv"), &io::format_table("gene_id", &data.pheno.trait_names, &data.scores.gene_ids, &truth))?;
                println!("wrote {}_*.tsv", prefix.display());
            }
        }
        return Ok(());
    }
    let res = run_scenario_suite(&suite)?;
    let table = scenario_table(&suite, &res);
    io::write_text(&a.out_dir.join("pauc_table.tsv"), &table)?;
    io::write_text(&a.out_dir.join("pauc_long.tsv"), &long_table(&res))?;
    io::write_text(&a.out_dir.join("roc_points.tsv"), &roc_table(&res))?;
    print!("{table}");
    Ok(())
}
