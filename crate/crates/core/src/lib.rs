//! Ridge-penalized EM multiple imputation for non-ignorably missing SNP
//! genotypes, with weighted random-forest variable selection and Wald tests
//! of the missingness mechanism.
//!
//! The model system couples three logistic regressions: a binary phenotype
//! model on all SNP dummies, a sequential trinomial model for each
//! missing-prone SNP given the fully observed SNPs and its predecessors, and
//! a logistic missingness model for each missingness indicator given SNPs,
//! phenotype and preceding indicators. An EM algorithm with a shared ridge
//! penalty imputes the missing cells as weighted candidate completions; the
//! weighted expansion feeds per-equation random forests whose permutation
//! importances drive iterative variable selection; the final fit's Louis
//! covariance feeds Wald tests of whether missingness is ignorable.

pub mod data;
pub mod error;
pub mod forest;
pub mod glm;
pub mod inference;
pub mod math;
pub mod mirem;
pub mod simgen;
pub mod simstudy;
pub mod seed;

pub use data::{
    dummy_encode, dummy_pair, decode_pair, expand_complete_data, load_genotypes,
    split_by_missingness, summarize_missingness, validate_for_analysis, write_genotypes,
    CompleteRow, EncodedDesign, GenerationMode, GenotypeMatrix, ImputationSet, ImputedCandidate,
    IndividualImputation, LoadOptions, MissingMask, MissingSummary, PhenotypeVector, Provenance,
    WeightedCompleteData,
};
pub use error::{Error, Result};
