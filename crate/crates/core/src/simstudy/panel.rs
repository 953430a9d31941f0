//! Synthetic wide genotype panels whose missingness pattern hits exact
//! per-SNP and per-individual NA-count margins. The pattern is built by the
//! bipartite degree-sequence construction (columns in decreasing degree,
//! each assigned to the rows with the largest remaining degree), so a given
//! pair of feasible margins always yields the same pattern; the seed only
//! drives the genotype and phenotype values.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GenotypeMatrix, PhenotypeVector};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, Tag};
use crate::simgen::{
    gen_correlated_snps, gen_phenotype, CorrelationSpec, PhenotypeModel, SnpCoding,
};

/// Shape of a synthetic panel: dimensions, correlation band, phenotype
/// model, and the exact NA-count margins.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PanelSpec {
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub maf_low: f64,
    pub maf_high: f64,
    pub intercept: f64,
    pub signal_terms: Vec<(usize, SnpCoding)>,
    /// NA count of each SNP column; must sum to the individual total.
    pub snp_na_counts: Vec<usize>,
    /// NA count of each individual.
    pub individual_na_counts: Vec<usize>,
}

impl PanelSpec {
    /// A wide case-control shaped panel: 596 individuals by 207 SNPs,
    /// 1724 missing cells. Fifty SNPs are complete; the rest spread over
    /// 1..=32 NAs (81 columns with 1-9, 44 with 10-19, 30 with 20-29, two
    /// with 30+). Individuals carry 0..=9 NAs with counts
    /// 83/107/132/79/59/44/31/30/15/16.
    pub fn wide_default() -> PanelSpec {
        let mut snp = Vec::with_capacity(207);
        snp.extend(std::iter::repeat(0).take(50));
        // 26 columns with a single NA and 55 with five: 301 cells
        snp.extend(std::iter::repeat(1).take(26));
        snp.extend(std::iter::repeat(5).take(55));
        // four full 10..=19 ramps plus 10..=13: 626 cells
        for _ in 0..4 {
            snp.extend(10..=19);
        }
        snp.extend(10..=13);
        // three full 20..=29 ramps: 735 cells
        for _ in 0..3 {
            snp.extend(20..=29);
        }
        snp.extend([30, 32]);
        let mut indiv = Vec::with_capacity(596);
        for (count, reps) in [
            (0usize, 83usize),
            (1, 107),
            (2, 132),
            (3, 79),
            (4, 59),
            (5, 44),
            (6, 31),
            (7, 30),
            (8, 15),
            (9, 16),
        ] {
            indiv.extend(std::iter::repeat(count).take(reps));
        }
        PanelSpec {
            n: 596,
            m: 207,
            rho: 0.8,
            maf_low: 0.3,
            maf_high: 0.4,
            intercept: -0.4,
            signal_terms: vec![
                (100, SnpCoding::Numeric(1.1)),
                (103, SnpCoding::Numeric(-0.9)),
            ],
            snp_na_counts: snp,
            individual_na_counts: indiv,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.snp_na_counts.len() != self.m {
            return Err(Error::config("one NA count per SNP column required"));
        }
        if self.individual_na_counts.len() != self.n {
            return Err(Error::config("one NA count per individual required"));
        }
        let by_snp: usize = self.snp_na_counts.iter().sum();
        let by_indiv: usize = self.individual_na_counts.iter().sum();
        if by_snp != by_indiv {
            return Err(Error::config(format!(
                "margin totals disagree: {by_snp} by SNP vs {by_indiv} by individual"
            )));
        }
        if self.snp_na_counts.iter().any(|&c| c > self.n)
            || self.individual_na_counts.iter().any(|&c| c > self.m)
        {
            return Err(Error::config("an NA count exceeds its dimension"));
        }
        Ok(())
    }
}

/// 0-1 incidence with the given column and row sums, by the greedy
/// degree-sequence construction. Errors when the margins are infeasible.
fn incidence(spec: &PanelSpec) -> Result<Vec<(usize, usize)>> {
    let mut remaining: Vec<usize> = spec.individual_na_counts.clone();
    let mut cols: Vec<usize> = (0..spec.m).collect();
    cols.sort_by(|&a, &b| spec.snp_na_counts[b].cmp(&spec.snp_na_counts[a]).then(a.cmp(&b)));
    let mut cells = Vec::with_capacity(spec.snp_na_counts.iter().sum());
    for &j in &cols {
        let need = spec.snp_na_counts[j];
        if need == 0 {
            continue;
        }
        // rows with the largest remaining degree, ties to the lower index
        let mut rows: Vec<usize> = (0..spec.n).filter(|&i| remaining[i] > 0).collect();
        if rows.len() < need {
            return Err(Error::config(
                "NA margins are infeasible: a column needs more rows than remain",
            ));
        }
        rows.sort_by(|&a, &b| remaining[b].cmp(&remaining[a]).then(a.cmp(&b)));
        for &i in rows.iter().take(need) {
            remaining[i] -= 1;
            cells.push((i, j));
        }
    }
    // the greedy construction fills every row degree exactly when feasible
    if remaining.iter().any(|&r| r > 0) {
        return Err(Error::config(
            "NA margins are infeasible: row counts left unfilled",
        ));
    }
    Ok(cells)
}

/// Builds the panel: correlated genotypes, a logistic phenotype, and the
/// margin-exact NA pattern punched into the genotype matrix. The phenotype
/// stays complete.
pub fn synthetic_panel(
    spec: &PanelSpec,
    seed: u64,
) -> Result<(GenotypeMatrix, PhenotypeVector)> {
    spec.validate()?;
    let cells = incidence(spec)?;
    let sub = |k: u64| derive_rng(seed, &[Tag::Study as u64, 16 + k]).gen::<u64>();
    let mut g = gen_correlated_snps(
        spec.n,
        &CorrelationSpec {
            m: spec.m,
            rho: spec.rho,
            maf_low: spec.maf_low,
            maf_high: spec.maf_high,
            seed: sub(0),
        },
    )?;
    let y = gen_phenotype(
        &g,
        &PhenotypeModel {
            intercept: spec.intercept,
            terms: spec.signal_terms.clone(),
        },
        sub(1),
    )?;
    for &(i, j) in &cells {
        g.set(i, j, None);
    }
    Ok((g, y))
}
