//! Tab-separated input/output and JSON reports.
//!
//! Every table has a header row and an id in the first column. Missing
//! dosages are the literal `NA`. Numbers are written in shortest round-trip
//! form so that reading a written file gives back the same values.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::genetics::{GeneMap, GeneMapEntry, Pedigree, PedigreeRecord};
use crate::model::{GeneScoreMatrix, GenotypeMatrix, KinshipMatrix, PhenotypeTable};

/// A parsed TSV: header fields and data rows, each with its 1-based line.
#[derive(Debug, Clone)]
pub struct Table {
    pub path: PathBuf,
    pub header: Vec<String>,
    pub rows: Vec<(usize, Vec<String>)>,
}

impl Table {
    pub fn parse(path: &Path, text: &str) -> Result<Self> {
        let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
        let Some((_, head)) = lines.next() else {
            return Err(parse_err(path, 1, "file is empty"));
        };
        let header: Vec<String> = head.split('\t').map(|s| s.trim().to_string()).collect();
        let mut rows = Vec::new();
        for (i, line) in lines {
            let fields: Vec<String> = line.split('\t').map(|s| s.trim().to_string()).collect();
            if fields.len() != header.len() {
                return Err(parse_err(path, i + 1, format!("expected {} fields, found {}", header.len(), fields.len())));
            }
            rows.push((i + 1, fields));
        }
        Ok(Self { path: path.to_path_buf(), header, rows })
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(path, &read_text(path)?)
    }

    fn ids(&self) -> Vec<String> {
        self.rows.iter().map(|(_, r)| r[0].clone()).collect()
    }

    fn require_rows(&self) -> Result<()> {
        if self.rows.is_empty() {
            return Err(parse_err(&self.path, 2, "no data rows"));
        }
        Ok(())
    }

    /// Numeric body (all columns after the id); `NA` becomes NaN when allowed.
    fn numbers(&self, allow_na: bool) -> Result<DMatrix<f64>> {
        let cols = self.header.len() - 1;
        let mut m = DMatrix::zeros(self.rows.len(), cols);
        for (r, (line, fields)) in self.rows.iter().enumerate() {
            for c in 0..cols {
                m[(r, c)] = parse_number(&self.path, *line, &fields[c + 1], allow_na)?;
            }
        }
        Ok(m)
    }
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> Error {
    Error::Parse { path: path.to_path_buf(), line, msg: msg.into() }
}

fn parse_number(path: &Path, line: usize, s: &str, allow_na: bool) -> Result<f64> {
    if s == "NA" {
        return if allow_na { Ok(f64::NAN) } else { Err(parse_err(path, line, "missing value `NA` not allowed here")) };
    }
    match s.parse::<f64>() {
        Ok(v) if v.is_finite() => Ok(v),
        _ => Err(parse_err(path, line, format!("`{s}` is not a finite number"))),
    }
}

pub fn read_text(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|source| Error::Io { path: dir.to_path_buf(), source })?;
    }
    fs::write(path, text).map_err(|source| Error::Io { path: path.to_path_buf(), source })
}

/// Shortest round-trip decimal form.
pub fn fmt_num(v: f64) -> String {
    if v.is_nan() {
        "NA".into()
    } else if v == 0.0 {
        "0".into()
    } else {
        format!("{v}")
    }
}

/// Render a matrix with a header and row ids.
pub fn format_table(first: &str, columns: &[String], row_ids: &[String], m: &DMatrix<f64>) -> String {
    let mut out = String::new();
    out.push_str(first);
    for c in columns {
        out.push('\t');
        out.push_str(c);
    }
    out.push('\n');
    for (i, id) in row_ids.iter().enumerate() {
        out.push_str(id);
        for j in 0..m.ncols() {
            let _ = write!(out, "\t{}", fmt_num(m[(i, j)]));
        }
        out.push('\n');
    }
    out
}

fn body_header(t: &Table) -> Result<Vec<String>> {
    if t.header.len() < 2 {
        return Err(parse_err(&t.path, 1, "header needs an id column and at least one value column"));
    }
    Ok(t.header[1..].to_vec())
}

/// Trait table: `subject_id` then one column per trait. The intercept is the
/// only covariate.
pub fn read_phenotypes(path: &Path) -> Result<PhenotypeTable> {
    let t = Table::read(path)?;
    t.require_rows()?;
    let names = body_header(&t)?;
    PhenotypeTable::intercept_only(t.ids(), names, t.numbers(false)?)
}

/// Attach covariates (a table keyed by subject id, intercept added
/// automatically) to a phenotype table. Every phenotyped subject needs a row.
pub fn read_covariates_into(path: &Path, pheno: &PhenotypeTable) -> Result<PhenotypeTable> {
    let t = Table::read(path)?;
    t.require_rows()?;
    let names = body_header(&t)?;
    let values = t.numbers(false)?;
    let index: std::collections::HashMap<&str, usize> =
        t.rows.iter().enumerate().map(|(i, (_, r))| (r[0].as_str(), i)).collect();
    let mut cov = DMatrix::zeros(pheno.n(), names.len());
    for (i, id) in pheno.subject_ids.iter().enumerate() {
        let r = *index.get(id.as_str()).ok_or_else(|| Error::invalid(format!("no covariates for subject `{id}`")))?;
        cov.row_mut(i).copy_from(&values.row(r));
    }
    PhenotypeTable::with_covariates(pheno.subject_ids.clone(), pheno.trait_names.clone(), pheno.y.clone(), names, cov)
}

pub fn write_phenotypes(path: &Path, pheno: &PhenotypeTable) -> Result<()> {
    write_text(path, &format_table("subject_id", &pheno.trait_names, &pheno.subject_ids, &pheno.y))
}

/// Subjects × SNPs dosage table; `NA` marks a missing call.
pub fn read_genotypes(path: &Path) -> Result<GenotypeMatrix> {
    let t = Table::read(path)?;
    t.require_rows()?;
    let snps = body_header(&t)?;
    GenotypeMatrix::new(t.ids(), snps, t.numbers(true)?)
}

pub fn write_genotypes(path: &Path, g: &GenotypeMatrix) -> Result<()> {
    write_text(path, &format_table("subject_id", &g.snp_ids, &g.subject_ids, &g.dosages))
}

/// Subjects × genes score table. Columns are re-centered on read.
pub fn read_gene_scores(path: &Path) -> Result<GeneScoreMatrix> {
    let t = Table::read(path)?;
    t.require_rows()?;
    let genes = body_header(&t)?;
    GeneScoreMatrix::new(t.ids(), genes, t.numbers(false)?)
}

pub fn write_gene_scores(path: &Path, s: &GeneScoreMatrix) -> Result<()> {
    write_text(path, &format_table("subject_id", &s.gene_ids, &s.subject_ids, &s.x))
}

/// Square matrix with an id header row and an id first column, in the same
/// order.
pub fn read_kinship(path: &Path) -> Result<KinshipMatrix> {
    let t = Table::read(path)?;
    t.require_rows()?;
    let cols = body_header(&t)?;
    let ids = t.ids();
    if ids != cols {
        return Err(parse_err(path, 1, "row ids and column ids differ"));
    }
    KinshipMatrix::new(ids, t.numbers(false)?)
}

pub fn write_kinship(path: &Path, k: &KinshipMatrix) -> Result<()> {
    write_text(path, &format_table("subject_id", &k.subject_ids, &k.subject_ids, &k.k))
}

/// Whether a header looks like a pedigree (`id`, `father`, `mother`).
pub fn is_pedigree_header(header: &[String]) -> bool {
    header.len() == 3 && header[1].eq_ignore_ascii_case("father") && header[2].eq_ignore_ascii_case("mother")
}

/// Three columns: id, father, mother; `0` or `NA` for an unknown parent.
pub fn read_pedigree(path: &Path) -> Result<Pedigree> {
    let t = Table::read(path)?;
    t.require_rows()?;
    if !is_pedigree_header(&t.header) {
        return Err(Error::Config(format!("{} is not a pedigree file (expected id, father, mother)", path.display())));
    }
    let parent = |s: &str| if s == "0" || s == "NA" || s.is_empty() { None } else { Some(s.to_string()) };
    Ok(Pedigree::new(
        t.rows
            .iter()
            .map(|(_, r)| PedigreeRecord { id: r[0].clone(), father: parent(&r[1]), mother: parent(&r[2]) })
            .collect(),
    ))
}

pub fn write_pedigree(path: &Path, ped: &Pedigree) -> Result<()> {
    let mut out = String::from("subject_id\tfather\tmother\n");
    for r in &ped.records {
        let p = |o: &Option<String>| o.clone().unwrap_or_else(|| "0".into());
        let _ = writeln!(out, "{}\t{}\t{}", r.id, p(&r.father), p(&r.mother));
    }
    write_text(path, &out)
}

/// `snp_id`, `gene_id` and an optional `weight` column.
pub fn read_gene_map(path: &Path) -> Result<GeneMap> {
    let t = Table::read(path)?;
    t.require_rows()?;
    let weighted = match t.header.len() {
        2 => false,
        3 => true,
        _ => return Err(parse_err(path, 1, "gene map needs snp_id, gene_id and optionally weight")),
    };
    let mut entries = Vec::with_capacity(t.rows.len());
    for (line, r) in &t.rows {
        let weight = if weighted { Some(parse_number(path, *line, &r[2], false)?) } else { None };
        entries.push(GeneMapEntry { snp_id: r[0].clone(), gene_id: r[1].clone(), weight });
    }
    GeneMap::new(entries)
}

pub fn write_gene_map(path: &Path, map: &GeneMap) -> Result<()> {
    let weighted = map.entries.iter().any(|e| e.weight.is_some());
    let mut out = String::from(if weighted { "snp_id\tgene_id\tweight\n" } else { "snp_id\tgene_id\n" });
    for e in &map.entries {
        if weighted {
            let w = e.weight.map(fmt_num).unwrap_or_else(|| "NA".into());
            let _ = writeln!(out, "{}\t{}\t{}", e.snp_id, e.gene_id, w);
        } else {
            let _ = writeln!(out, "{}\t{}", e.snp_id, e.gene_id);
        }
    }
    write_text(path, &out)
}

/// Pretty-printed JSON with object keys in sorted order.
pub fn to_sorted_json<T: Serialize>(value: &T) -> Result<String> {
    let v = serde_json::to_value(value).map_err(|e| Error::Numerical(format!("cannot serialize report: {e}")))?;
    let mut s = serde_json::to_string_pretty(&v).map_err(|e| Error::Numerical(format!("cannot serialize report: {e}")))?;
    s.push('\n');
    Ok(s)
}

pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    write_text(path, &to_sorted_json(value)?)
}
