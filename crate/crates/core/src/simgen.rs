//! Synthetic data generation: banded-correlation genotypes, logistic
//! phenotypes, and value-dependent (non-ignorable) missingness injection.
//!
//! Genotypes come from a Gaussian copula: each individual draws a latent
//! AR(1) vector with corr(e_i, e_j) = rho^|i-j|, and each column is cut into
//! 0/1/2 at the Hardy-Weinberg proportions (1-maf)^2, 2 maf (1-maf), maf^2
//! for a per-column MAF drawn uniformly from [maf_low, maf_high]. The MAF
//! stream is independent of the latent-noise stream, so column frequencies
//! do not depend on n.

use crate::data::{GenotypeMatrix, PhenotypeVector};
use crate::error::{Error, Result};
use crate::math::{logistic, normal_quantile};
use crate::seed::{derive_rng, Tag};
use rand::Rng;
use serde::{Deserialize, Serialize};

/// Specification of the correlated genotype block.
#[derive(Clone, Debug)]
pub struct CorrelationSpec {
    pub m: usize,
    pub rho: f64,
    pub maf_low: f64,
    pub maf_high: f64,
    pub seed: u64,
}

fn std_normal(rng: &mut impl Rng) -> f64 {
    // inverse-cdf sampling keeps the stream portable across rand versions
    let u: f64 = rng.gen::<f64>().clamp(1e-16, 1.0 - 1e-16);
    normal_quantile(u)
}

/// Generate an n x m genotype matrix with latent correlation rho^|i-j|.
pub fn gen_correlated_snps(n: usize, spec: &CorrelationSpec) -> Result<GenotypeMatrix> {
    if n < 2 {
        return Err(Error::config("need n >= 2 individuals"));
    }
    if spec.m == 0 {
        return Err(Error::config("need m >= 1 SNPs"));
    }
    if !(0.0..1.0).contains(&spec.rho) {
        return Err(Error::config("rho must lie in [0, 1)"));
    }
    if !(spec.maf_low > 0.0 && spec.maf_low <= spec.maf_high && spec.maf_high < 0.5) {
        return Err(Error::config("need 0 < maf_low <= maf_high < 0.5"));
    }

    let mut maf_rng = derive_rng(spec.seed, &[Tag::MafDraw as u64]);
    let mafs: Vec<f64> = (0..spec.m)
        .map(|_| maf_rng.gen_range(spec.maf_low..spec.maf_high))
        .collect();
    // cut points on the latent normal scale per column
    let cuts: Vec<(f64, f64)> = mafs
        .iter()
        .map(|&maf| {
            let p0 = (1.0 - maf) * (1.0 - maf);
            let p1 = 2.0 * maf * (1.0 - maf);
            (normal_quantile(p0), normal_quantile(p0 + p1))
        })
        .collect();

    let mut latent_rng = derive_rng(spec.seed, &[Tag::LatentNoise as u64]);
    let innov_scale = (1.0 - spec.rho * spec.rho).sqrt();
    let mut g = GenotypeMatrix::new(n, spec.m, None);
    for i in 0..n {
        let mut e = std_normal(&mut latent_rng);
        for j in 0..spec.m {
            if j > 0 {
                e = spec.rho * e + innov_scale * std_normal(&mut latent_rng);
            }
            let (c0, c1) = cuts[j];
            let v = if e <= c0 {
                0
            } else if e <= c1 {
                1
            } else {
                2
            };
            g.set(i, j, Some(v));
        }
    }
    Ok(g)
}

/// How one SNP enters the phenotype linear predictor.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum SnpCoding {
    /// coefficient * genotype value
    Numeric(f64),
    /// coefficient pair on the dummy coding (value 1, value 2)
    DummyPair(f64, f64),
}

/// Logistic phenotype model on complete genotypes.
#[derive(Clone, Debug)]
pub struct PhenotypeModel {
    pub intercept: f64,
    /// (SNP column, coding) terms.
    pub terms: Vec<(usize, SnpCoding)>,
}

impl PhenotypeModel {
    pub fn linear_predictor(&self, g: &GenotypeMatrix, i: usize) -> Result<f64> {
        let mut lp = self.intercept;
        for &(j, coding) in &self.terms {
            let v = g.get(i, j).ok_or_else(|| {
                Error::data(format!(
                    "phenotype model references missing cell (individual {i}, snp {j})"
                ))
            })? as f64;
            lp += match coding {
                SnpCoding::Numeric(c) => c * v,
                SnpCoding::DummyPair(c1, c2) => {
                    let (d1, d2) = crate::data::dummy_pair(v as u8);
                    c1 * d1 + c2 * d2
                }
            };
        }
        Ok(lp)
    }
}

/// Draw Bernoulli(logistic(lp_i)) phenotypes.
pub fn gen_phenotype(g: &GenotypeMatrix, model: &PhenotypeModel, seed: u64) -> Result<PhenotypeVector> {
    for &(j, _) in &model.terms {
        if j >= g.m() {
            return Err(Error::config(format!("phenotype term references snp {j} >= m")));
        }
    }
    let mut rng = derive_rng(seed, &[Tag::Phenotype as u64]);
    let mut values = Vec::with_capacity(g.n());
    for i in 0..g.n() {
        let pi = logistic(model.linear_predictor(g, i)?);
        values.push(Some((rng.gen::<f64>() < pi) as u8));
    }
    Ok(PhenotypeVector::new(values))
}

/// Missingness target: one SNP column or the phenotype.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum MissTarget {
    Snp(usize),
    Phenotype,
}

/// Value-dependent missingness: P(missing) = logistic(xi0 + xi1 * value).
#[derive(Clone, Copy, Debug)]
pub struct MissSpec {
    pub target: MissTarget,
    pub xi0: f64,
    pub xi1: f64,
}

/// Expected missing proportion of a spec given the complete data it will act
/// on; closed form over the realized values.
pub fn expected_missing_proportion(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    spec: &MissSpec,
) -> f64 {
    let n = g.n() as f64;
    let total = match spec.target {
        MissTarget::Snp(j) => (0..g.n())
            .map(|i| logistic(spec.xi0 + spec.xi1 * g.get(i, j).unwrap_or(0) as f64))
            .sum::<f64>(),
        MissTarget::Phenotype => (0..y.len())
            .map(|i| logistic(spec.xi0 + spec.xi1 * y.get(i).unwrap_or(0) as f64))
            .sum::<f64>(),
    };
    total / n
}

/// Blank cells according to the missingness specs. Inputs must be complete
/// on every targeted column; returns new copies with `None` cells, leaving
/// the inputs untouched as ground truth.
pub fn inject_missingness(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    specs: &[MissSpec],
    seed: u64,
) -> Result<(GenotypeMatrix, PhenotypeVector)> {
    let mut seen = std::collections::HashSet::new();
    for spec in specs {
        if !seen.insert(spec.target) {
            return Err(Error::config("duplicate missingness target"));
        }
        if let MissTarget::Snp(j) = spec.target {
            if j >= g.m() {
                return Err(Error::config(format!("missingness target snp {j} >= m")));
            }
        }
    }
    let mut g_out = g.clone();
    let mut y_out: Vec<Option<u8>> = (0..y.len()).map(|i| y.get(i)).collect();
    for (t, spec) in specs.iter().enumerate() {
        let mut rng = derive_rng(seed, &[Tag::Missingness as u64, t as u64]);
        for i in 0..g.n() {
            let value = match spec.target {
                MissTarget::Snp(j) => g.get(i, j).ok_or_else(|| {
                    Error::data(format!(
                        "missingness target snp {j} already missing for individual {i}"
                    ))
                })? as f64,
                MissTarget::Phenotype => y.get(i).ok_or_else(|| {
                    Error::data(format!("phenotype already missing for individual {i}"))
                })? as f64,
            };
            if rng.gen::<f64>() < logistic(spec.xi0 + spec.xi1 * value) {
                match spec.target {
                    MissTarget::Snp(j) => g_out.set(i, j, None),
                    MissTarget::Phenotype => y_out[i] = None,
                }
            }
        }
    }
    Ok((g_out, PhenotypeVector::new(y_out)))
}
