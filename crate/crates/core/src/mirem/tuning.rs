//! Ridge-penalty selection. Two criteria: an effective-degrees-of-freedom
//! BIC evaluated on a single EM sweep per grid point, and K-fold
//! cross-validated misclassification of the phenotype equation.

use super::em::{e_step, init_theta, m_step, observed_record, EmConfig};
use super::louis::{conditional_score_covariance, louis_from_parts, q_hessian};
use super::structure::ModelStructure;
use super::weights::{compute_weights, enumerate_completions};
use crate::data::{GenotypeMatrix, MissingMask, PhenotypeVector};
use crate::error::{Error, Result};
use crate::seed::{derive_rng, Tag};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

/// How the model-size exponent enters the BIC penalty: the default raises
/// log((2m+1)n) to the power xi; the alternative multiplies it by xi,
/// which at xi = 1 is the classical BIC penalty.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EbicReading {
    Power,
    Multiplier,
}

/// Per-parameter penalty at sample size n with m SNPs (2m + 1 candidate
/// coefficients per equation side drive the log term).
pub fn ebic_penalty(n: usize, n_snps: usize, xi: f64, reading: EbicReading) -> f64 {
    let log_n = (((2 * n_snps + 1) * n) as f64).ln();
    match reading {
        EbicReading::Power => log_n.powf(xi),
        EbicReading::Multiplier => xi * log_n,
    }
}

/// BIC-type score of one EM sweep: minus twice the expected complete-data
/// log-likelihood at the updated parameters plus the effective model
/// dimension times the penalty. Lower is better.
pub fn ebic(
    q_unpenalized: f64,
    effective_df: f64,
    n: usize,
    n_snps: usize,
    xi: f64,
    reading: EbicReading,
) -> f64 {
    -2.0 * q_unpenalized + effective_df * ebic_penalty(n, n_snps, xi, reading)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum TuneMethod {
    Ebic,
    Cv,
}

#[derive(Clone, Debug)]
pub struct TuneConfig {
    pub method: TuneMethod,
    /// Candidate lambda values; evaluated in the given order.
    pub grid: Vec<f64>,
    /// Cross-validation folds (cv method only).
    pub folds: usize,
    pub xi: f64,
    pub reading: EbicReading,
    /// EM settings shared by every candidate; `lambda` is overridden per
    /// grid point.
    pub em: EmConfig,
}

/// Seven-decade default grid.
pub fn default_grid() -> Vec<f64> {
    vec![1e-6, 1e-5, 1e-4, 1e-3, 1e-2, 1e-1, 1.0]
}

impl Default for TuneConfig {
    fn default() -> Self {
        TuneConfig {
            method: TuneMethod::Ebic,
            grid: default_grid(),
            folds: 10,
            xi: 2.0,
            reading: EbicReading::Power,
            em: EmConfig::default(),
        }
    }
}

/// One evaluated grid point.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LambdaPoint {
    pub lambda: f64,
    /// Criterion value (BIC score or mean misclassification error); NaN
    /// when unusable.
    pub score: f64,
    pub usable: bool,
    /// Standard error of the fold scores (cv with >= 2 usable folds).
    pub se: Option<f64>,
    /// Folds that produced a fit (cv only).
    pub folds_used: usize,
    /// Effective degrees of freedom (ebic only).
    pub effective_df: Option<f64>,
    /// Failure or skip notes.
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TuneDiagnostics {
    pub method: TuneMethod,
    pub points: Vec<LambdaPoint>,
    /// Index of the chosen (score-minimizing) grid point.
    pub chosen: usize,
    /// Index of the largest usable lambda whose score is within one
    /// standard error of the minimum (cv only).
    pub one_se: Option<usize>,
}

/// Selects lambda over the grid. Grid points whose evaluation fails are
/// marked unusable; the selection errors only when nothing is usable.
pub fn tune_lambda(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    structure: &ModelStructure,
    cfg: &TuneConfig,
) -> Result<(f64, TuneDiagnostics)> {
    if cfg.grid.is_empty() {
        return Err(Error::config("lambda grid must be non-empty"));
    }
    let points = match cfg.method {
        TuneMethod::Ebic => ebic_points(g, y, mask, structure, cfg)?,
        TuneMethod::Cv => cv_points(g, y, mask, structure, cfg)?,
    };
    let chosen = points
        .iter()
        .enumerate()
        .filter(|(_, p)| p.usable)
        .min_by(|(_, a), (_, b)| a.score.partial_cmp(&b.score).unwrap())
        .map(|(i, _)| i)
        .ok_or_else(|| {
            Error::numerical("no lambda in the grid produced a usable fit")
        })?;
    let one_se = points[chosen].se.map(|se| {
        let limit = points[chosen].score + se;
        points
            .iter()
            .enumerate()
            .filter(|(_, p)| p.usable && p.score <= limit)
            .max_by(|(_, a), (_, b)| a.lambda.partial_cmp(&b.lambda).unwrap())
            .map(|(i, _)| i)
            .unwrap()
    });
    let lambda = points[chosen].lambda;
    let diagnostics = TuneDiagnostics {
        method: cfg.method,
        points,
        chosen,
        one_se,
    };
    Ok((lambda, diagnostics))
}

/// One EM sweep per grid point from a shared starting point: M-step at the
/// candidate lambda, an E-step at the update, then the effective dimension
/// from the Louis covariance against the Q curvature.
fn ebic_points(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    structure: &ModelStructure,
    cfg: &TuneConfig,
) -> Result<Vec<LambdaPoint>> {
    let init = init_theta(g, y, mask, structure, &cfg.em)?;
    let es0 = e_step(g, y, mask, &init, &cfg.em, 0)?;
    let n = g.n();
    let mut points = Vec::with_capacity(cfg.grid.len());
    for &lambda in &cfg.grid {
        let mut emc = cfg.em.clone();
        emc.lambda = lambda;
        let point = (|| -> Result<LambdaPoint> {
            let ms = m_step(&es0.wcd, structure, &emc, Some(&init))?;
            let es1 = e_step(g, y, mask, &ms.system, &emc, 1)?;
            let h = q_hessian(&es1.wcd, &ms.system, lambda);
            let v = conditional_score_covariance(&es1.wcd, &ms.system);
            let cov = louis_from_parts(&h, &v)?;
            let df = h.trace_product_with(&cov);
            let score = ebic(ms.q_unpenalized, df, n, structure.m, cfg.xi, cfg.reading);
            Ok(LambdaPoint {
                lambda,
                score,
                usable: true,
                se: None,
                folds_used: 0,
                effective_df: Some(df),
                note: None,
            })
        })();
        points.push(point.unwrap_or_else(|e| LambdaPoint {
            lambda,
            score: f64::NAN,
            usable: false,
            se: None,
            folds_used: 0,
            effective_df: None,
            note: Some(e.to_string()),
        }));
    }
    Ok(points)
}

/// Phenotype-stratified fold assignment over the observed-phenotype
/// individuals: fold id per individual, or None when the phenotype is
/// missing (those individuals train in every fold).
fn fold_assignment(
    y: &PhenotypeVector,
    folds: usize,
    seed: u64,
) -> Vec<Option<usize>> {
    let n = y.len();
    let mut assignment = vec![None; n];
    for class in 0..2u8 {
        let mut members: Vec<usize> =
            (0..n).filter(|&i| y.get(i) == Some(class)).collect();
        let mut rng = derive_rng(seed, &[Tag::Fold as u64, class as u64]);
        members.shuffle(&mut rng);
        for (pos, &i) in members.iter().enumerate() {
            assignment[i] = Some(pos % folds);
        }
    }
    assignment
}

fn subset_rows(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    keep: &[usize],
) -> (GenotypeMatrix, PhenotypeVector) {
    let mut gs = GenotypeMatrix::new(keep.len(), g.m(), Some(g.snp_names().to_vec()));
    for (row, &i) in keep.iter().enumerate() {
        for j in 0..g.m() {
            gs.set(row, j, g.get(i, j));
        }
    }
    let ys = PhenotypeVector::new(keep.iter().map(|&i| y.get(i)).collect());
    (gs, ys)
}

/// Posterior probability of phenotype 1 for one individual under a fitted
/// system, marginalized over the enumerable completions of its missing
/// genotypes. None when the enumeration cap is exceeded.
fn pheno_posterior(
    sys: &super::structure::ModelSystem,
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    i: usize,
    enum_cap: usize,
) -> Result<Option<f64>> {
    let mut rec = observed_record(g, y, mask, i);
    if 3usize.checked_pow(rec.nu() as u32).is_none_or(|c| c > enum_cap) {
        return Ok(None);
    }
    let ev = super::evaluator::SystemEvaluator::new(sys);
    let mut log_norms = [0.0f64; 2];
    for yv in 0..2u8 {
        rec.y = Some(yv);
        let cands = enumerate_completions(&rec, enum_cap)?;
        let (_, log_norm) = compute_weights(&ev, &rec, &cands)?;
        log_norms[yv as usize] = log_norm;
    }
    Ok(Some(crate::math::logistic(log_norms[1] - log_norms[0])))
}

/// K-fold misclassification of the phenotype under the full fitted system,
/// one EM fit per (fold, lambda). Folds whose fit fails are skipped and
/// recorded; a lambda with no surviving fold is unusable.
fn cv_points(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    structure: &ModelStructure,
    cfg: &TuneConfig,
) -> Result<Vec<LambdaPoint>> {
    if cfg.folds < 2 {
        return Err(Error::config("cross-validation needs at least 2 folds"));
    }
    let n = g.n();
    let assignment = fold_assignment(y, cfg.folds, cfg.em.seed);
    // training data per fold, shared across the lambda grid
    let mut fold_sets: Vec<(Vec<usize>, Vec<usize>)> = Vec::with_capacity(cfg.folds);
    for f in 0..cfg.folds {
        let test: Vec<usize> = (0..n).filter(|&i| assignment[i] == Some(f)).collect();
        let train: Vec<usize> = (0..n).filter(|&i| assignment[i] != Some(f)).collect();
        fold_sets.push((train, test));
    }

    let mut points = Vec::with_capacity(cfg.grid.len());
    for &lambda in &cfg.grid {
        let mut emc = cfg.em.clone();
        emc.lambda = lambda;
        let mut fold_scores: Vec<f64> = Vec::new();
        let mut notes: Vec<String> = Vec::new();
        for (f, (train, test)) in fold_sets.iter().enumerate() {
            if test.is_empty() {
                continue;
            }
            let (g_tr, y_tr) = subset_rows(g, y, train);
            let mask_tr = MissingMask::with_x_cols(&g_tr, &y_tr, mask.x_cols.clone());
            let fit = match super::em::ridge_em(&g_tr, &y_tr, &mask_tr, structure, &emc)
            {
                Ok(fit) => fit,
                Err(e) => {
                    notes.push(format!("fold {f}: {e}"));
                    continue;
                }
            };
            let mut tested = 0usize;
            let mut missed = 0usize;
            let mut failed = false;
            for &i in test {
                match pheno_posterior(&fit.system, g, y, mask, i, emc.enum_cap) {
                    Ok(Some(p1)) => {
                        tested += 1;
                        let predicted = (p1 > 0.5) as u8;
                        if Some(predicted) != y.get(i) {
                            missed += 1;
                        }
                    }
                    Ok(None) => {}
                    Err(e) => {
                        notes.push(format!("fold {f}: {e}"));
                        failed = true;
                        break;
                    }
                }
            }
            if failed || tested == 0 {
                continue;
            }
            fold_scores.push(missed as f64 / tested as f64);
        }
        let folds_used = fold_scores.len();
        if folds_used == 0 {
            points.push(LambdaPoint {
                lambda,
                score: f64::NAN,
                usable: false,
                se: None,
                folds_used: 0,
                effective_df: None,
                note: Some(if notes.is_empty() {
                    "no fold produced a usable fit".to_string()
                } else {
                    notes.join("; ")
                }),
            });
            continue;
        }
        let mean = fold_scores.iter().sum::<f64>() / folds_used as f64;
        let se = (folds_used >= 2).then(|| {
            let var = fold_scores
                .iter()
                .map(|s| (s - mean).powi(2))
                .sum::<f64>()
                / (folds_used - 1) as f64;
            (var / folds_used as f64).sqrt()
        });
        points.push(LambdaPoint {
            lambda,
            score: mean,
            usable: true,
            se,
            folds_used,
            effective_df: None,
            note: (!notes.is_empty()).then(|| notes.join("; ")),
        });
    }
    Ok(points)
}
