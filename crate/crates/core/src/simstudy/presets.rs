//! Generating presets for the two validation studies: a sparse-signal study
//! (three dummy-coded signal SNPs, missing genotypes only) and a polygenic
//! study (ten numerically coded signal SNPs, missing genotypes and missing
//! phenotype). Each comes at full scale and at a proportionally shrunk desk
//! scale whose signal columns keep the same position relative to the
//! correlation band, so the desk runs exercise the same neighborhood
//! structure in minutes.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::data::{GenotypeMatrix, PhenotypeVector};
use crate::error::Result;
use crate::seed::{derive_rng, Tag};
use crate::simgen::{
    gen_correlated_snps, gen_phenotype, inject_missingness, CorrelationSpec, MissSpec,
    MissTarget, PhenotypeModel, SnpCoding,
};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyKind {
    Sim1,
    Sim2,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum StudyScale {
    Full,
    Desk,
}

/// Everything used to generate one study's data, kept for downstream checks
/// against the generating truth.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct StudyTruth {
    pub which: StudyKind,
    pub scale: StudyScale,
    pub n: usize,
    pub m: usize,
    pub rho: f64,
    pub maf_low: f64,
    pub maf_high: f64,
    pub intercept: f64,
    /// (column, coding) pairs of the phenotype model, 0-based columns.
    pub signal_terms: Vec<(usize, SnpCoding)>,
    /// (column, xi0, xi1) of each genotype missingness mechanism.
    pub snp_missing: Vec<(usize, f64, f64)>,
    /// (xi0, xi1) of the phenotype missingness mechanism, when present.
    pub pheno_missing: Option<(f64, f64)>,
}

impl StudyTruth {
    pub fn new(which: StudyKind, scale: StudyScale) -> StudyTruth {
        let (n, m) = match scale {
            StudyScale::Full => (1000, 100),
            StudyScale::Desk => (400, 40),
        };
        // alternate a strong and a mild self-censoring slope across the
        // missing-prone columns
        let alternating =
            |cols: &[usize]| -> Vec<(usize, f64, f64)> {
                cols.iter()
                    .enumerate()
                    .map(|(i, &c)| (c, -2.0, if i % 2 == 0 { 1.1 } else { 0.4 }))
                    .collect()
            };
        match (which, scale) {
            (StudyKind::Sim1, StudyScale::Full) => StudyTruth {
                which,
                scale,
                n,
                m,
                rho: 0.8,
                maf_low: 0.3,
                maf_high: 0.4,
                intercept: -2.2,
                signal_terms: vec![
                    (40, SnpCoding::DummyPair(1.6, 1.4)),
                    (41, SnpCoding::DummyPair(1.8, -0.8)),
                    (49, SnpCoding::DummyPair(-1.7, -0.9)),
                ],
                snp_missing: alternating(&[0, 1, 2, 3, 4, 40, 41, 42, 43, 44]),
                pheno_missing: None,
            },
            (StudyKind::Sim1, StudyScale::Desk) => StudyTruth {
                which,
                scale,
                n,
                m,
                rho: 0.8,
                maf_low: 0.3,
                maf_high: 0.4,
                intercept: -2.2,
                signal_terms: vec![
                    (16, SnpCoding::DummyPair(1.6, 1.4)),
                    (17, SnpCoding::DummyPair(1.8, -0.8)),
                    (19, SnpCoding::DummyPair(-1.7, -0.9)),
                ],
                snp_missing: alternating(&[0, 1, 2, 16, 17, 18]),
                pheno_missing: None,
            },
            (StudyKind::Sim2, StudyScale::Full) => StudyTruth {
                which,
                scale,
                n,
                m,
                rho: 0.8,
                maf_low: 0.3,
                maf_high: 0.4,
                intercept: -2.2,
                signal_terms: vec![
                    (40, SnpCoding::Numeric(1.2)),
                    (41, SnpCoding::Numeric(1.8)),
                    (42, SnpCoding::Numeric(1.6)),
                    (43, SnpCoding::Numeric(1.3)),
                    (44, SnpCoding::Numeric(1.7)),
                    (45, SnpCoding::Numeric(-0.8)),
                    (46, SnpCoding::Numeric(-1.0)),
                    (47, SnpCoding::Numeric(-0.9)),
                    (48, SnpCoding::Numeric(-1.4)),
                    (49, SnpCoding::Numeric(-1.0)),
                ],
                snp_missing: alternating(&[0, 1, 2, 3, 4, 40, 41, 42, 43, 44]),
                pheno_missing: Some((-2.0, 1.2)),
            },
            (StudyKind::Sim2, StudyScale::Desk) => StudyTruth {
                which,
                scale,
                n,
                m,
                rho: 0.8,
                maf_low: 0.3,
                maf_high: 0.4,
                intercept: -2.2,
                signal_terms: vec![
                    (16, SnpCoding::Numeric(1.2)),
                    (17, SnpCoding::Numeric(1.8)),
                    (18, SnpCoding::Numeric(-0.9)),
                    (19, SnpCoding::Numeric(-1.4)),
                ],
                snp_missing: alternating(&[0, 1, 16, 17]),
                pheno_missing: Some((-2.0, 1.2)),
            },
        }
    }

    pub fn signal_cols(&self) -> Vec<usize> {
        self.signal_terms.iter().map(|&(c, _)| c).collect()
    }

    pub fn missing_cols(&self) -> Vec<usize> {
        self.snp_missing.iter().map(|&(c, _, _)| c).collect()
    }

    fn phenotype_model(&self) -> PhenotypeModel {
        PhenotypeModel {
            intercept: self.intercept,
            terms: self.signal_terms.clone(),
        }
    }

    fn miss_specs(&self) -> Vec<MissSpec> {
        let mut specs: Vec<MissSpec> = self
            .snp_missing
            .iter()
            .map(|&(c, xi0, xi1)| MissSpec {
                target: MissTarget::Snp(c),
                xi0,
                xi1,
            })
            .collect();
        if let Some((xi0, xi1)) = self.pheno_missing {
            specs.push(MissSpec {
                target: MissTarget::Phenotype,
                xi0,
                xi1,
            });
        }
        specs
    }
}

/// One study's generated data, before and after the missingness injection.
#[derive(Clone, Debug)]
pub struct StudyData {
    pub g_complete: GenotypeMatrix,
    pub y_complete: PhenotypeVector,
    pub g: GenotypeMatrix,
    pub y: PhenotypeVector,
}

/// Generates a study dataset: correlated genotypes, the phenotype from the
/// truth's logistic model, then self-censoring missingness.
pub fn generate_study_data(truth: &StudyTruth, seed: u64) -> Result<StudyData> {
    let sub = |k: u64| derive_rng(seed, &[Tag::Study as u64, k]).gen::<u64>();
    let g_complete = gen_correlated_snps(
        truth.n,
        &CorrelationSpec {
            m: truth.m,
            rho: truth.rho,
            maf_low: truth.maf_low,
            maf_high: truth.maf_high,
            seed: sub(1),
        },
    )?;
    let y_complete = gen_phenotype(&g_complete, &truth.phenotype_model(), sub(2))?;
    let (g, y) = inject_missingness(&g_complete, &y_complete, &truth.miss_specs(), sub(3))?;
    Ok(StudyData {
        g_complete,
        y_complete,
        g,
        y,
    })
}
