//! Data model: genotype matrix with missing cells, binary phenotype,
//! missingness bookkeeping, dummy coding, and the weighted complete-data
//! expansion that downstream fitting and forest growth consume.
//!
//! Conventions, used everywhere:
//! - genotypes take values 0/1/2 (copies of the minor allele), `None` = missing;
//! - dummy coding: 0 -> (0,0), 1 -> (1,0), 2 -> (0,1);
//! - "x columns" are the SNPs with at least one missing value, in input
//!   order; "z columns" are the fully observed remainder;
//! - per-individual candidate weights sum to one, so each individual carries
//!   total weight one in the expansion regardless of its candidate count.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::collections::HashSet;
use std::io::Write;
use std::path::Path;

/// n x m genotype matrix, row-major, `None` marks a missing cell.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GenotypeMatrix {
    n: usize,
    m: usize,
    values: Vec<Option<u8>>,
    snp_names: Vec<String>,
}

impl GenotypeMatrix {
    pub fn new(n: usize, m: usize, snp_names: Option<Vec<String>>) -> Self {
        let snp_names =
            snp_names.unwrap_or_else(|| (1..=m).map(|j| format!("snp_{j}")).collect());
        assert_eq!(snp_names.len(), m, "snp name count must equal m");
        GenotypeMatrix {
            n,
            m,
            values: vec![None; n * m],
            snp_names,
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn m(&self) -> usize {
        self.m
    }
    pub fn snp_names(&self) -> &[String] {
        &self.snp_names
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Option<u8> {
        self.values[i * self.m + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Option<u8>) {
        if let Some(g) = v {
            assert!(g <= 2, "genotype must be 0, 1 or 2");
        }
        self.values[i * self.m + j] = v;
    }

    pub fn is_missing(&self, i: usize, j: usize) -> bool {
        self.get(i, j).is_none()
    }

    /// Number of missing cells in column j.
    pub fn column_missing_count(&self, j: usize) -> usize {
        (0..self.n).filter(|&i| self.is_missing(i, j)).count()
    }

    /// Indices of individuals with no missing genotype.
    pub fn complete_individuals(&self) -> Vec<usize> {
        (0..self.n)
            .filter(|&i| (0..self.m).all(|j| !self.is_missing(i, j)))
            .collect()
    }
}

/// Binary phenotype vector, `None` marks a missing value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhenotypeVector {
    values: Vec<Option<u8>>,
}

impl PhenotypeVector {
    pub fn new(values: Vec<Option<u8>>) -> Self {
        for v in values.iter().flatten() {
            assert!(*v <= 1, "phenotype must be 0 or 1");
        }
        PhenotypeVector { values }
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }
    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize) -> Option<u8> {
        self.values[i]
    }

    pub fn missing_count(&self) -> usize {
        self.values.iter().filter(|v| v.is_none()).count()
    }

    /// Mean of the observed values.
    pub fn observed_mean(&self) -> f64 {
        let obs: Vec<u8> = self.values.iter().flatten().cloned().collect();
        obs.iter().map(|&v| v as f64).sum::<f64>() / obs.len().max(1) as f64
    }
}

/// Dummy pair for one genotype value.
#[inline]
pub fn dummy_pair(v: u8) -> (f64, f64) {
    match v {
        0 => (0.0, 0.0),
        1 => (1.0, 0.0),
        2 => (0.0, 1.0),
        _ => panic!("genotype out of range"),
    }
}

/// Inverse of `dummy_pair`; `None` when the pair is not a valid coding.
#[inline]
pub fn decode_pair(d1: f64, d2: f64) -> Option<u8> {
    match (d1 as i64, d2 as i64) {
        (0, 0) => Some(0),
        (1, 0) => Some(1),
        (0, 1) => Some(2),
        _ => None,
    }
}

/// Split SNP columns into fully observed (z) and missing-prone (x) sets,
/// both in input order.
pub fn split_by_missingness(g: &GenotypeMatrix) -> (Vec<usize>, Vec<usize>) {
    let mut z = Vec::new();
    let mut x = Vec::new();
    for j in 0..g.m() {
        if g.column_missing_count(j) == 0 {
            z.push(j);
        } else {
            x.push(j);
        }
    }
    (z, x)
}

/// Missingness bookkeeping for one dataset.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MissingMask {
    /// SNP columns with at least one missing value, input order.
    pub x_cols: Vec<usize>,
    /// Fully observed SNP columns, input order.
    pub z_cols: Vec<usize>,
    /// n x p indicator: snp_mask[i][k] = 1 iff x_cols[k] is missing for i.
    pub snp_mask: Vec<Vec<u8>>,
    /// Phenotype missing indicator per individual.
    pub pheno_mask: Vec<u8>,
}

impl MissingMask {
    pub fn from_data(g: &GenotypeMatrix, y: &PhenotypeVector) -> Self {
        assert_eq!(g.n(), y.len(), "genotype and phenotype lengths differ");
        let (z_cols, x_cols) = split_by_missingness(g);
        let snp_mask = (0..g.n())
            .map(|i| {
                x_cols
                    .iter()
                    .map(|&j| g.is_missing(i, j) as u8)
                    .collect::<Vec<u8>>()
            })
            .collect();
        let pheno_mask = (0..g.n()).map(|i| y.get(i).is_none() as u8).collect();
        MissingMask {
            x_cols,
            z_cols,
            snp_mask,
            pheno_mask,
        }
    }

    /// Like `from_data`, but with a prescribed missing-prone column set, so
    /// subsets of a dataset keep the parent's equation layout even when a
    /// subset happens to observe one of those columns completely.
    pub fn with_x_cols(g: &GenotypeMatrix, y: &PhenotypeVector, x_cols: Vec<usize>) -> Self {
        assert_eq!(g.n(), y.len(), "genotype and phenotype lengths differ");
        let z_cols = (0..g.m()).filter(|j| !x_cols.contains(j)).collect();
        let snp_mask = (0..g.n())
            .map(|i| {
                x_cols
                    .iter()
                    .map(|&j| g.is_missing(i, j) as u8)
                    .collect::<Vec<u8>>()
            })
            .collect();
        let pheno_mask = (0..g.n()).map(|i| y.get(i).is_none() as u8).collect();
        MissingMask {
            x_cols,
            z_cols,
            snp_mask,
            pheno_mask,
        }
    }

    pub fn p(&self) -> usize {
        self.x_cols.len()
    }

    pub fn pheno_missing_any(&self) -> bool {
        self.pheno_mask.iter().any(|&v| v == 1)
    }

    /// Missing x-positions for individual i.
    pub fn missing_positions(&self, i: usize) -> Vec<usize> {
        self.snp_mask[i]
            .iter()
            .enumerate()
            .filter_map(|(k, &v)| (v == 1).then_some(k))
            .collect()
    }

    /// Missing cells of individual i as absolute SNP columns, ascending.
    pub fn missing_columns(&self, i: usize) -> Vec<usize> {
        self.missing_positions(i)
            .into_iter()
            .map(|k| self.x_cols[k])
            .collect()
    }

    /// Count of missing SNP cells for individual i.
    pub fn nu(&self, i: usize) -> usize {
        self.snp_mask[i].iter().map(|&v| v as usize).sum()
    }
}

/// Per-column and per-individual missingness summary.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MissingSummary {
    /// (snp name, missing count, missing proportion) for every SNP column.
    pub per_column: Vec<(String, usize, f64)>,
    /// (missing count per individual, number of individuals), ascending.
    pub per_individual: Vec<(usize, usize)>,
    pub total_missing_cells: usize,
    pub pheno_missing: usize,
}

pub fn summarize_missingness(g: &GenotypeMatrix, y: &PhenotypeVector) -> MissingSummary {
    let n = g.n() as f64;
    let per_column = (0..g.m())
        .map(|j| {
            let c = g.column_missing_count(j);
            (g.snp_names()[j].clone(), c, c as f64 / n)
        })
        .collect::<Vec<_>>();
    let mut counts = std::collections::BTreeMap::new();
    let mut total = 0usize;
    for i in 0..g.n() {
        let nu = (0..g.m()).filter(|&j| g.is_missing(i, j)).count();
        total += nu;
        *counts.entry(nu).or_insert(0usize) += 1;
    }
    MissingSummary {
        per_column,
        per_individual: counts.into_iter().collect(),
        total_missing_cells: total,
        pheno_missing: y.missing_count(),
    }
}

/// Dummy-coded design view of a genotype matrix. Missing cells stay NaN.
#[derive(Clone, Debug)]
pub struct EncodedDesign {
    pub n: usize,
    /// n x 2m row-major dummy values; NaN marks an unencoded (missing) cell.
    pub dummies: Vec<f64>,
    /// Source SNP column of each dummy column (length 2m).
    pub source_snp: Vec<usize>,
    pub intercept: bool,
}

pub fn dummy_encode(g: &GenotypeMatrix, intercept: bool) -> EncodedDesign {
    let (n, m) = (g.n(), g.m());
    let mut dummies = vec![f64::NAN; n * 2 * m];
    for i in 0..n {
        for j in 0..m {
            if let Some(v) = g.get(i, j) {
                let (d1, d2) = dummy_pair(v);
                dummies[i * 2 * m + 2 * j] = d1;
                dummies[i * 2 * m + 2 * j + 1] = d2;
            }
        }
    }
    let source_snp = (0..m).flat_map(|j| [j, j]).collect();
    EncodedDesign {
        n,
        dummies,
        source_snp,
        intercept,
    }
}

impl EncodedDesign {
    /// Decode back to genotype values; round-trip inverse of `dummy_encode`.
    pub fn decode(&self, names: &[String]) -> GenotypeMatrix {
        let m = self.source_snp.len() / 2;
        let mut g = GenotypeMatrix::new(self.n, m, Some(names.to_vec()));
        for i in 0..self.n {
            for j in 0..m {
                let d1 = self.dummies[i * 2 * m + 2 * j];
                let d2 = self.dummies[i * 2 * m + 2 * j + 1];
                if !d1.is_nan() && !d2.is_nan() {
                    g.set(i, j, decode_pair(d1, d2));
                }
            }
        }
        g
    }
}

/// One imputation candidate: values for the missing cells of one individual.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImputedCandidate {
    /// (SNP column, genotype value) for every missing SNP cell, ascending.
    pub assignment: Vec<(usize, u8)>,
    /// Completed phenotype when the phenotype was missing.
    pub phenotype: Option<u8>,
    pub weight: f64,
}

/// How a candidate set was produced.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum GenerationMode {
    /// All completions listed exhaustively.
    Enumerated,
    /// Retained sampler draws, deduplicated with multiplicity weights.
    Gibbs,
    /// Enumerated, then small weights zeroed and the rest renormalized.
    Truncated,
}

/// Candidate completions for one individual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct IndividualImputation {
    pub individual: usize,
    pub candidates: Vec<ImputedCandidate>,
    pub mode: GenerationMode,
}

/// Imputation output for every individual with at least one missing cell.
#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct ImputationSet {
    pub entries: Vec<IndividualImputation>,
}

impl ImputationSet {
    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
    pub fn total_candidates(&self) -> usize {
        self.entries.iter().map(|e| e.candidates.len()).sum()
    }
}

/// Row provenance in the weighted expansion.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Provenance {
    Observed,
    Imputed,
}

/// One row of the weighted complete data: a fully observed individual or one
/// candidate completion of a partially observed individual.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CompleteRow {
    pub individual: usize,
    /// Completed genotype, all m SNPs.
    pub genotypes: Vec<u8>,
    pub phenotype: u8,
    /// Missingness indicators of the x columns (observed data, shared by all
    /// candidate rows of the individual).
    pub snp_miss: Vec<u8>,
    pub pheno_miss: u8,
    pub weight: f64,
    pub provenance: Provenance,
}

/// Weighted complete data: observed rows plus weighted imputed rows.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WeightedCompleteData {
    pub snp_names: Vec<String>,
    pub x_cols: Vec<usize>,
    pub pheno_missing_modeled: bool,
    pub n_individuals: usize,
    pub rows: Vec<CompleteRow>,
}

impl WeightedCompleteData {
    pub fn total_weight(&self) -> f64 {
        self.rows.iter().map(|r| r.weight).sum()
    }

    /// Write the expansion as CSV: id, weight, provenance, phenotype, one
    /// column per SNP, one r column per missing-prone SNP (and r_phenotype
    /// when phenotype missingness is modeled).
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        let mut header = vec![
            "id".to_string(),
            "weight".to_string(),
            "provenance".to_string(),
            "phenotype".to_string(),
        ];
        header.extend(self.snp_names.iter().map(|s| format!("snp_{s}")));
        header.extend(self.x_cols.iter().map(|&j| format!("r_{}", self.snp_names[j])));
        if self.pheno_missing_modeled {
            header.push("r_phenotype".to_string());
        }
        w.write_record(&header)?;
        for row in &self.rows {
            let mut rec = vec![
                row.individual.to_string(),
                format!("{:.12}", row.weight),
                match row.provenance {
                    Provenance::Observed => "observed".to_string(),
                    Provenance::Imputed => "imputed".to_string(),
                },
                row.phenotype.to_string(),
            ];
            rec.extend(row.genotypes.iter().map(|v| v.to_string()));
            rec.extend(row.snp_miss.iter().map(|v| v.to_string()));
            if self.pheno_missing_modeled {
                rec.push(row.pheno_miss.to_string());
            }
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Build the weighted complete data from observed data plus an imputation
/// set covering every individual with missing cells.
pub fn expand_complete_data(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    imp: &ImputationSet,
) -> Result<WeightedCompleteData> {
    let n = g.n();
    let mut by_individual: Vec<Option<&IndividualImputation>> = vec![None; n];
    for e in &imp.entries {
        if e.individual >= n {
            return Err(Error::data(format!(
                "imputation entry for individual {} out of range",
                e.individual
            )));
        }
        by_individual[e.individual] = Some(e);
    }

    let mut rows = Vec::new();
    for i in 0..n {
        let missing = mask.missing_columns(i);
        let pheno_missing = mask.pheno_mask[i] == 1;
        let snp_miss = mask.snp_mask[i].clone();
        if missing.is_empty() && !pheno_missing {
            rows.push(CompleteRow {
                individual: i,
                genotypes: (0..g.m()).map(|j| g.get(i, j).unwrap()).collect(),
                phenotype: y.get(i).unwrap(),
                snp_miss,
                pheno_miss: 0,
                weight: 1.0,
                provenance: Provenance::Observed,
            });
            continue;
        }
        let entry = by_individual[i].ok_or_else(|| {
            Error::data(format!(
                "individual {i} has missing cells but no imputation entry"
            ))
        })?;
        let wsum: f64 = entry.candidates.iter().map(|c| c.weight).sum();
        if (wsum - 1.0).abs() > 1e-8 {
            return Err(Error::data(format!(
                "candidate weights for individual {i} sum to {wsum}, expected 1"
            )));
        }
        for cand in &entry.candidates {
            let positions: Vec<usize> = cand.assignment.iter().map(|&(k, _)| k).collect();
            if positions != missing {
                return Err(Error::data(format!(
                    "candidate assignment for individual {i} does not match its missing cells"
                )));
            }
            if pheno_missing != cand.phenotype.is_some() {
                return Err(Error::data(format!(
                    "candidate phenotype presence for individual {i} does not match the mask"
                )));
            }
            let mut genotypes: Vec<u8> = Vec::with_capacity(g.m());
            for j in 0..g.m() {
                genotypes.push(g.get(i, j).unwrap_or(0));
            }
            for &(k, v) in &cand.assignment {
                if g.get(i, k).is_some() {
                    return Err(Error::data(format!(
                        "candidate for individual {i} assigns observed cell (snp {k})"
                    )));
                }
                genotypes[k] = v;
            }
            let phenotype = match cand.phenotype {
                Some(v) => v,
                None => y.get(i).unwrap(),
            };
            rows.push(CompleteRow {
                individual: i,
                genotypes,
                phenotype,
                snp_miss: snp_miss.clone(),
                pheno_miss: pheno_missing as u8,
                weight: cand.weight / wsum,
                provenance: Provenance::Imputed,
            });
        }
    }

    Ok(WeightedCompleteData {
        snp_names: g.snp_names().to_vec(),
        x_cols: mask.x_cols.clone(),
        pheno_missing_modeled: mask.pheno_missing_any(),
        n_individuals: n,
        rows,
    })
}

/// CSV loading options.
#[derive(Clone, Debug)]
pub struct LoadOptions {
    pub na_token: String,
    pub phenotype_col: String,
}

impl Default for LoadOptions {
    fn default() -> Self {
        LoadOptions {
            na_token: "NA".to_string(),
            phenotype_col: "phenotype".to_string(),
        }
    }
}

/// Load a combined CSV: one phenotype column, all other columns SNPs in file
/// order. Cells must be 0/1/2 (genotype), 0/1 (phenotype) or the NA token.
pub fn load_genotypes(path: &Path, opts: &LoadOptions) -> Result<(GenotypeMatrix, PhenotypeVector)> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_path(path)?;
    let headers: Vec<String> = rdr.headers()?.iter().map(|s| s.trim().to_string()).collect();
    let pheno_idx = headers
        .iter()
        .position(|h| h == &opts.phenotype_col)
        .ok_or_else(|| {
            Error::data(format!(
                "phenotype column '{}' not found in {}",
                opts.phenotype_col,
                path.display()
            ))
        })?;
    let snp_names: Vec<String> = headers
        .iter()
        .enumerate()
        .filter(|&(i, _)| i != pheno_idx)
        .map(|(_, h)| h.clone())
        .collect();
    let mut seen = HashSet::new();
    for name in &snp_names {
        if !seen.insert(name) {
            return Err(Error::data(format!("duplicate SNP column name '{name}'")));
        }
    }

    let mut geno_rows: Vec<Vec<Option<u8>>> = Vec::new();
    let mut pheno: Vec<Option<u8>> = Vec::new();
    for (ridx, rec) in rdr.records().enumerate() {
        let rec = rec?;
        if rec.len() != headers.len() {
            return Err(Error::Parse {
                path: path.display().to_string(),
                row: ridx + 2,
                col: "-".to_string(),
                msg: format!("expected {} fields, found {}", headers.len(), rec.len()),
            });
        }
        let mut row: Vec<Option<u8>> = Vec::with_capacity(snp_names.len());
        for (cidx, cell) in rec.iter().enumerate() {
            let cell = cell.trim();
            let parse_err = |msg: String| Error::Parse {
                path: path.display().to_string(),
                row: ridx + 2,
                col: headers[cidx].clone(),
                msg,
            };
            if cidx == pheno_idx {
                if cell == opts.na_token {
                    pheno.push(None);
                } else {
                    match cell {
                        "0" => pheno.push(Some(0)),
                        "1" => pheno.push(Some(1)),
                        _ => {
                            return Err(parse_err(format!(
                                "phenotype must be 0, 1 or {}, found '{cell}'",
                                opts.na_token
                            )))
                        }
                    }
                }
            } else if cell == opts.na_token {
                row.push(None);
            } else {
                match cell {
                    "0" => row.push(Some(0)),
                    "1" => row.push(Some(1)),
                    "2" => row.push(Some(2)),
                    _ => {
                        return Err(parse_err(format!(
                            "genotype must be 0, 1, 2 or {}, found '{cell}'",
                            opts.na_token
                        )))
                    }
                }
            }
        }
        geno_rows.push(row);
    }

    let n = geno_rows.len();
    let m = snp_names.len();
    let mut g = GenotypeMatrix::new(n, m, Some(snp_names));
    for (i, row) in geno_rows.into_iter().enumerate() {
        for (j, v) in row.into_iter().enumerate() {
            g.set(i, j, v);
        }
    }
    Ok((g, PhenotypeVector::new(pheno)))
}

/// Write a combined CSV in the `load_genotypes` layout.
pub fn write_genotypes(
    path: &Path,
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    na_token: &str,
) -> Result<()> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "phenotype")?;
    for name in g.snp_names() {
        write!(f, ",{name}")?;
    }
    writeln!(f)?;
    for i in 0..g.n() {
        match y.get(i) {
            Some(v) => write!(f, "{v}")?,
            None => write!(f, "{na_token}")?,
        }
        for j in 0..g.m() {
            match g.get(i, j) {
                Some(v) => write!(f, ",{v}")?,
                None => write!(f, ",{na_token}")?,
            }
        }
        writeln!(f)?;
    }
    f.flush()?;
    Ok(())
}

/// Reject datasets the pipeline cannot model: fewer than two individuals,
/// an all-missing SNP column, or a constant observed phenotype.
pub fn validate_for_analysis(g: &GenotypeMatrix, y: &PhenotypeVector) -> Result<()> {
    if g.n() < 2 {
        return Err(Error::data("need at least two individuals"));
    }
    if g.n() != y.len() {
        return Err(Error::data("genotype and phenotype lengths differ"));
    }
    for j in 0..g.m() {
        if g.column_missing_count(j) == g.n() {
            return Err(Error::data(format!(
                "SNP column '{}' has all values missing",
                g.snp_names()[j]
            )));
        }
    }
    let obs: Vec<u8> = (0..y.len()).filter_map(|i| y.get(i)).collect();
    if obs.is_empty() {
        return Err(Error::data("phenotype has no observed values"));
    }
    if obs.iter().all(|&v| v == obs[0]) {
        return Err(Error::data("observed phenotype is constant"));
    }
    Ok(())
}
