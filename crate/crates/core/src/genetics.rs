//! Kinship construction from markers or pedigrees, marker QC, and
//! weighted-sum collapsing of SNPs into gene scores.

use std::collections::{BTreeMap, HashMap, VecDeque};

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::linalg;
use crate::model::{GeneScoreMatrix, GenotypeMatrix, KinshipMatrix};

/// Result of [`impute_and_standardize`].
#[derive(Debug, Clone)]
pub struct CleanGenotypes {
    pub genotypes: GenotypeMatrix,
    pub dropped_snps: Vec<String>,
}

/// Mean-impute missing dosages per SNP and drop monomorphic SNPs.
pub fn impute_and_standardize(g: &GenotypeMatrix) -> Result<CleanGenotypes> {
    let n = g.n();
    let mut keep = Vec::new();
    let mut dropped = Vec::new();
    let mut columns: Vec<Vec<f64>> = Vec::new();
    for (s, snp) in g.snp_ids.iter().enumerate() {
        let col = g.dosages.column(s);
        let observed: Vec<f64> = col.iter().copied().filter(|v| !v.is_nan()).collect();
        if observed.is_empty() {
            return Err(Error::AllMissing(snp.clone()));
        }
        let mu = linalg::mean(&observed);
        let filled: Vec<f64> = col.iter().map(|&v| if v.is_nan() { mu } else { v }).collect();
        let var = filled.iter().map(|v| (v - mu).powi(2)).sum::<f64>() / n as f64;
        if var <= 1e-24 {
            dropped.push(snp.clone());
        } else {
            keep.push(snp.clone());
            columns.push(filled);
        }
    }
    let dosages = DMatrix::from_fn(n, keep.len(), |i, j| columns[j][i]);
    Ok(CleanGenotypes {
        genotypes: GenotypeMatrix { subject_ids: g.subject_ids.clone(), snp_ids: keep, dosages },
        dropped_snps: dropped,
    })
}

/// Standardized-genotype relationship matrix averaged over all SNPs.
pub fn grm_from_markers(g: &GenotypeMatrix) -> Result<KinshipMatrix> {
    let (n, s) = (g.n(), g.n_snps());
    if s == 0 {
        return Err(Error::invalid("no markers for GRM"));
    }
    let mut z = DMatrix::zeros(n, s);
    for j in 0..s {
        let col = g.dosages.column(j);
        if col.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(format!("SNP `{}` has missing dosages; impute first", g.snp_ids[j])));
        }
        let p_hat = col.sum() / n as f64 / 2.0;
        let spread = 2.0 * p_hat * (1.0 - p_hat);
        let constant = col.iter().all(|&v| (v - col[0]).abs() < 1e-12);
        if spread < 1e-12 || constant {
            return Err(Error::DegenerateSnp(g.snp_ids[j].clone()));
        }
        let scale = 1.0 / spread.sqrt();
        for i in 0..n {
            z[(i, j)] = (col[i] - 2.0 * p_hat) * scale;
        }
    }
    let mut k = (&z * z.transpose()) / s as f64;
    k = linalg::symmetrize(&k);
    let min_eig = linalg::min_eigenvalue(&k);
    if min_eig < -1e-8 {
        return Err(Error::NotPsd(min_eig));
    }
    if min_eig < 0.0 {
        k = linalg::project_eigen_floor(&k, 0.0);
    }
    KinshipMatrix::new(g.subject_ids.clone(), k)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PedigreeRecord {
    pub id: String,
    pub father: Option<String>,
    pub mother: Option<String>,
}

impl PedigreeRecord {
    pub fn new(id: &str, father: Option<&str>, mother: Option<&str>) -> Self {
        Self { id: id.into(), father: father.map(Into::into), mother: mother.map(Into::into) }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Pedigree {
    pub records: Vec<PedigreeRecord>,
}

impl Pedigree {
    pub fn new(records: Vec<PedigreeRecord>) -> Self {
        Self { records }
    }

    /// Records in an order where parents precede children. Parents that are
    /// referenced but never listed are added as founders (flagged `false`).
    fn topological(&self) -> Result<Vec<(PedigreeRecord, bool)>> {
        let mut all: BTreeMap<String, (PedigreeRecord, bool)> = BTreeMap::new();
        let mut listed_order = Vec::new();
        for r in &self.records {
            if all.insert(r.id.clone(), (r.clone(), true)).is_some() {
                return Err(Error::DuplicateId(r.id.clone()));
            }
            listed_order.push(r.id.clone());
        }
        for r in &self.records {
            for parent in [&r.father, &r.mother].into_iter().flatten() {
                if parent == &r.id {
                    return Err(Error::CyclicPedigree(r.id.clone()));
                }
                all.entry(parent.clone())
                    .or_insert_with(|| (PedigreeRecord::new(parent, None, None), false));
            }
        }
        let mut indegree: HashMap<&str, usize> = HashMap::new();
        let mut children: HashMap<&str, Vec<&str>> = HashMap::new();
        for (id, (r, _)) in &all {
            let parents: Vec<&String> = [&r.father, &r.mother].into_iter().flatten().collect();
            indegree.insert(id, parents.len());
            for p in parents {
                children.entry(p.as_str()).or_default().push(id);
            }
        }
        // seed the queue in input order (implicit founders first) for a stable result
        let mut queue: VecDeque<&str> = VecDeque::new();
        for (id, (_, listed)) in &all {
            if !listed && indegree[id.as_str()] == 0 {
                queue.push_back(id);
            }
        }
        for id in &listed_order {
            if indegree[id.as_str()] == 0 {
                queue.push_back(id);
            }
        }
        let mut out = Vec::with_capacity(all.len());
        while let Some(id) = queue.pop_front() {
            out.push(all[id].clone());
            if let Some(kids) = children.get(id) {
                let mut ready = Vec::new();
                for &kid in kids {
                    let d = indegree.get_mut(kid).unwrap();
                    *d -= 1;
                    if *d == 0 {
                        ready.push(kid);
                    }
                }
                ready.sort_by_key(|k| listed_order.iter().position(|x| x == k));
                queue.extend(ready);
            }
        }
        if out.len() != all.len() {
            let stuck = indegree.iter().filter(|(_, &d)| d > 0).map(|(k, _)| *k).min().unwrap_or("?");
            return Err(Error::CyclicPedigree(stuck.to_string()));
        }
        Ok(out)
    }
}

/// Numerator relationship matrix by the recursive tabular method. Output rows
/// follow the order of the input records.
pub fn kinship_from_pedigree(ped: &Pedigree) -> Result<KinshipMatrix> {
    if ped.records.is_empty() {
        return Err(Error::invalid("empty pedigree"));
    }
    let order = ped.topological()?;
    let pos: HashMap<&str, usize> = order.iter().enumerate().map(|(i, (r, _))| (r.id.as_str(), i)).collect();
    let total = order.len();
    let mut a = DMatrix::<f64>::zeros(total, total);
    for i in 0..total {
        let r = &order[i].0;
        let f = r.father.as_deref().map(|x| pos[x]);
        let m = r.mother.as_deref().map(|x| pos[x]);
        for j in 0..i {
            let v = 0.5 * (f.map_or(0.0, |f| a[(j, f)]) + m.map_or(0.0, |m| a[(j, m)]));
            a[(i, j)] = v;
            a[(j, i)] = v;
        }
        a[(i, i)] = 1.0 + match (f, m) {
            (Some(f), Some(m)) => 0.5 * a[(f, m)],
            _ => 0.0,
        };
    }
    let rows: Vec<usize> = ped.records.iter().map(|r| pos[r.id.as_str()]).collect();
    let k = DMatrix::from_fn(rows.len(), rows.len(), |i, j| a[(rows[i], rows[j])]);
    KinshipMatrix::new(ped.records.iter().map(|r| r.id.clone()).collect(), k)
}

#[derive(Debug, Clone, PartialEq)]
pub struct GeneMapEntry {
    pub snp_id: String,
    pub gene_id: String,
    /// Replaces the allele-frequency weight when present.
    pub weight: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct GeneMap {
    pub entries: Vec<GeneMapEntry>,
}

impl GeneMap {
    pub fn new(entries: Vec<GeneMapEntry>) -> Result<Self> {
        let mut seen = HashMap::new();
        for e in &entries {
            if let Some(prev) = seen.insert(e.snp_id.clone(), e.gene_id.clone()) {
                if prev != e.gene_id {
                    return Err(Error::invalid(format!("SNP `{}` maps to more than one gene", e.snp_id)));
                }
                return Err(Error::DuplicateId(e.snp_id.clone()));
            }
            if let Some(w) = e.weight {
                if !(w.is_finite() && w > 0.0) {
                    return Err(Error::invalid(format!("weight for `{}` must be positive", e.snp_id)));
                }
            }
        }
        Ok(Self { entries })
    }

    pub fn from_pairs(pairs: &[(&str, &str)]) -> Result<Self> {
        Self::new(
            pairs
                .iter()
                .map(|(s, g)| GeneMapEntry { snp_id: s.to_string(), gene_id: g.to_string(), weight: None })
                .collect(),
        )
    }

    /// Gene ids in order of first appearance.
    pub fn genes(&self) -> Vec<String> {
        let mut out: Vec<String> = Vec::new();
        for e in &self.entries {
            if !out.contains(&e.gene_id) {
                out.push(e.gene_id.clone());
            }
        }
        out
    }
}

#[derive(Debug, Clone)]
pub struct CollapsedScores {
    pub scores: GeneScoreMatrix,
    /// Map entries whose SNP is absent from the genotypes.
    pub unmapped_snps: usize,
}

/// Weighted-sum collapsing: each SNP is divided by
/// `sqrt(n q̂ (1 - q̂))` with `q̂ = (Σ dosage + 1) / (2n + 2)`, summed within the
/// gene, and the gene column centered.
pub fn collapse_weighted_sum(g: &GenotypeMatrix, map: &GeneMap) -> Result<CollapsedScores> {
    let n = g.n();
    let snp_pos: HashMap<&str, usize> = g.snp_ids.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let genes = map.genes();
    let gene_pos: HashMap<&str, usize> = genes.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let mut x = DMatrix::<f64>::zeros(n, genes.len());
    let mut members = vec![0usize; genes.len()];
    let mut unmapped = 0;
    for e in &map.entries {
        let Some(&s) = snp_pos.get(e.snp_id.as_str()) else {
            unmapped += 1;
            continue;
        };
        let col = g.dosages.column(s);
        if col.iter().any(|v| v.is_nan()) {
            return Err(Error::invalid(format!("SNP `{}` has missing dosages; impute first", e.snp_id)));
        }
        let w = match e.weight {
            Some(w) => w,
            None => {
                let q = (col.sum() + 1.0) / (2.0 * n as f64 + 2.0);
                (n as f64 * q * (1.0 - q)).sqrt()
            }
        };
        let j = gene_pos[e.gene_id.as_str()];
        members[j] += 1;
        for i in 0..n {
            x[(i, j)] += col[i] / w;
        }
    }
    if let Some(j) = members.iter().position(|&c| c == 0) {
        return Err(Error::EmptyGene(genes[j].clone()));
    }
    let scores = GeneScoreMatrix::new(g.subject_ids.clone(), genes, x)?;
    Ok(CollapsedScores { scores, unmapped_snps: unmapped })
}
