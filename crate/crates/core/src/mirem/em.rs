//! The ridge-penalized EM engine over the three-equation system.
//!
//! E-step: enumerate (or sample) each incomplete record's completions and
//! weight them by their complete-data likelihood. M-step: refit every
//! equation on the weighted completed data, warm-started from the previous
//! parameters so the penalized objective ascends. The driver alternates the
//! two until the max-norm parameter change drops below tolerance.

use super::evaluator::SystemEvaluator;
use super::gibbs::gibbs_candidates;
use super::structure::{design_width, EqId, ModelStructure, ModelSystem, ParamLayout, Predictor};
use super::weights::{
    compute_weights, enumerate_completions, truncate_weights, ObservedRecord,
};
use crate::data::{
    dummy_pair, expand_complete_data, CompleteRow, GenerationMode, GenotypeMatrix, ImputationSet,
    ImputedCandidate, IndividualImputation, MissingMask, PhenotypeVector, WeightedCompleteData,
};
use crate::error::{Error, Result};
use crate::glm::{
    fit_binary_auto, fit_weighted_ridge_trinomial, FitOptions, FitResult,
};
use crate::seed::{derive_rng, Tag};
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use rayon::prelude::*;

/// EM engine configuration.
#[derive(Clone, Debug)]
pub struct EmConfig {
    /// Ridge strength shared by every equation (intercepts unpenalized).
    pub lambda: f64,
    /// EM iteration cap.
    pub max_iter: usize,
    /// Max-norm parameter-change convergence threshold.
    pub tol: f64,
    /// Largest 3^nu enumerated exhaustively.
    pub enum_cap: usize,
    /// Fall back to the within-record sampler past the cap.
    pub gibbs: bool,
    pub gibbs_burn_in: usize,
    pub gibbs_retained: usize,
    /// Candidate weights below this are zeroed and the rest renormalized.
    pub weight_eps: f64,
    /// Weighted minority count under which binary fits switch to the
    /// bias-reduced fit; zero disables the substitution.
    pub firth_threshold: f64,
    pub seed: u64,
}

impl Default for EmConfig {
    fn default() -> Self {
        EmConfig {
            lambda: 0.0,
            max_iter: 100,
            tol: 1e-6,
            enum_cap: 27,
            gibbs: true,
            gibbs_burn_in: 50,
            gibbs_retained: 10,
            weight_eps: 0.0,
            firth_threshold: 15.0,
            seed: 0,
        }
    }
}

/// Builds one individual's observed record.
pub fn observed_record(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    i: usize,
) -> ObservedRecord {
    let m = g.m();
    let base_geno: Vec<u8> = (0..m).map(|k| g.get(i, k).unwrap_or(0)).collect();
    ObservedRecord {
        base_geno,
        missing: mask.missing_columns(i),
        y: y.get(i),
        r: mask.snp_mask[i].clone(),
        r_y: mask.pheno_mask[i],
    }
}

/// E-step output: candidates with weights, the expanded data, and the exact
/// observed-data log-likelihood when every record was enumerated.
#[derive(Debug)]
pub struct EStep {
    pub imputations: ImputationSet,
    pub wcd: WeightedCompleteData,
    pub observed_loglik: Option<f64>,
}

/// Candidate generation and weighting for every individual. `sweep_tag`
/// separates the sampler streams of successive EM iterations.
pub fn e_step(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    sys: &ModelSystem,
    cfg: &EmConfig,
    sweep_tag: u64,
) -> Result<EStep> {
    let n = g.n();
    let ev = SystemEvaluator::new(sys);

    struct PerIndividual {
        entry: Option<IndividualImputation>,
        loglik: f64,
        sampled: bool,
    }

    let per: Vec<Result<PerIndividual>> = (0..n)
        .into_par_iter()
        .map(|i| {
            let rec = observed_record(g, y, mask, i);
            if rec.y.is_none() && !sys.structure.pheno_missing {
                return Err(Error::data(format!(
                    "phenotype missing for individual {i} but phenotype \
                     missingness is not modeled"
                )));
            }
            if rec.nu() == 0 && rec.y.is_some() {
                let st = ev.init_state(rec.base_geno, rec.y.unwrap(), rec.r, rec.r_y);
                return Ok(PerIndividual {
                    entry: None,
                    loglik: ev.loglik(&st),
                    sampled: false,
                });
            }
            let enumerable = 3usize.checked_pow(rec.nu() as u32).is_some_and(|c| c <= cfg.enum_cap);
            if enumerable {
                let mut cands = enumerate_completions(&rec, cfg.enum_cap)?;
                let (mut w, log_norm) = compute_weights(&ev, &rec, &cands)?;
                truncate_weights(&mut w, cfg.weight_eps);
                for (c, &wi) in cands.iter_mut().zip(w.iter()) {
                    c.weight = wi;
                }
                let mode = super::weights::mark_mode(&cands, cfg.weight_eps);
                Ok(PerIndividual {
                    entry: Some(IndividualImputation {
                        individual: i,
                        candidates: cands,
                        mode,
                    }),
                    loglik: log_norm,
                    sampled: false,
                })
            } else if cfg.gibbs {
                let mut rng = derive_rng(cfg.seed, &[Tag::Gibbs as u64, sweep_tag, i as u64]);
                let cands = gibbs_candidates(
                    &ev,
                    &rec,
                    cfg.gibbs_burn_in,
                    cfg.gibbs_retained,
                    &mut rng,
                );
                Ok(PerIndividual {
                    entry: Some(IndividualImputation {
                        individual: i,
                        candidates: cands,
                        mode: GenerationMode::Gibbs,
                    }),
                    loglik: f64::NAN,
                    sampled: true,
                })
            } else {
                Err(Error::EnumTooLarge {
                    nu: rec.nu(),
                    cap: cfg.enum_cap,
                })
            }
        })
        .collect();

    let mut entries = Vec::new();
    let mut loglik = 0.0;
    let mut any_sampled = false;
    for r in per {
        let r = r?;
        any_sampled |= r.sampled;
        if !any_sampled {
            loglik += r.loglik;
        }
        if let Some(e) = r.entry {
            entries.push(e);
        }
    }
    let imputations = ImputationSet { entries };
    let wcd = expand_complete_data(g, y, mask, &imputations)?;
    Ok(EStep {
        imputations,
        wcd,
        observed_loglik: (!any_sampled).then_some(loglik),
    })
}

/// Intercept-excluded penalty mask for an equation's design columns.
pub fn penalize_columns(preds: &[Predictor]) -> Vec<bool> {
    let mut v = vec![true; design_width(preds)];
    v[0] = false;
    v
}

/// Writes one completed row's design values for an equation into `out`
/// (intercept first). `out` must have the equation's design width.
pub(crate) fn fill_design_row(row: &CompleteRow, preds: &[Predictor], out: &mut [f64]) {
    out[0] = 1.0;
    let mut at = 1;
    for pr in preds {
        match pr {
            Predictor::Snp(k) => {
                let (d1, d2) = dummy_pair(row.genotypes[*k]);
                out[at] = d1;
                out[at + 1] = d2;
                at += 2;
            }
            Predictor::Pheno => {
                out[at] = row.phenotype as f64;
                at += 1;
            }
            Predictor::MissInd(k) => {
                out[at] = row.snp_miss[*k] as f64;
                at += 1;
            }
        }
    }
}

/// Design matrix of an equation over completed rows.
pub fn design_matrix(rows: &[CompleteRow], preds: &[Predictor]) -> DMatrix<f64> {
    let w = design_width(preds);
    let mut x = DMatrix::zeros(rows.len(), w);
    let mut buf = vec![0.0; w];
    for (i, row) in rows.iter().enumerate() {
        fill_design_row(row, preds, &mut buf);
        for (j, &v) in buf.iter().enumerate() {
            x[(i, j)] = v;
        }
    }
    x
}

/// Binary response of a non-trinomial equation.
pub fn binary_response(rows: &[CompleteRow], eq: EqId) -> Vec<f64> {
    rows.iter()
        .map(|r| match eq {
            EqId::Pheno => r.phenotype as f64,
            EqId::Miss(j) => r.snp_miss[j] as f64,
            EqId::MissY => r.pheno_miss as f64,
            EqId::Geno(_) => unreachable!("trinomial equation"),
        })
        .collect()
}

/// Convergence bookkeeping of one equation fit.
#[derive(Clone, Debug)]
pub struct EquationFitSummary {
    pub eq: EqId,
    pub converged: bool,
    pub used_firth: bool,
    pub separation: bool,
    pub iterations: usize,
}

/// M-step output.
#[derive(Debug)]
pub struct MStep {
    pub system: ModelSystem,
    /// Expected complete-data log-likelihood at the new parameters.
    pub q_unpenalized: f64,
    /// The M-step objective: Q minus the ridge penalty.
    pub q_penalized: f64,
    pub fits: Vec<EquationFitSummary>,
}

/// Refits every equation on the weighted completed data. Binary equations
/// switch to the bias-reduced fit when the weighted minority count falls
/// under `cfg.firth_threshold`; a warm start keeps the ascent property.
pub fn m_step(
    wcd: &WeightedCompleteData,
    structure: &ModelStructure,
    cfg: &EmConfig,
    warm: Option<&ModelSystem>,
) -> Result<MStep> {
    structure.validate()?;
    if let Some(w) = warm {
        assert_eq!(
            w.structure, *structure,
            "warm start must share the structure"
        );
    }
    let rows = &wcd.rows;
    if rows.is_empty() {
        return Err(Error::data("no rows to fit"));
    }
    let weights: Vec<f64> = rows.iter().map(|r| r.weight).collect();

    let eqs = structure.equations();
    let fitted: Vec<Result<(FitResult, EquationFitSummary)>> = eqs
        .par_iter()
        .map(|&eq| {
            let preds = structure.predictors(eq);
            let x = design_matrix(rows, preds);
            let penalize = penalize_columns(preds);
            let mut opts = FitOptions::with_lambda(cfg.lambda);
            opts.warm_start = warm.map(|w| w.equation_coefficients(eq));
            let fit = match eq {
                EqId::Geno(j) => {
                    let resp: Vec<u8> = rows
                        .iter()
                        .map(|r| r.genotypes[structure.x_cols[j]])
                        .collect();
                    fit_weighted_ridge_trinomial(&x, &resp, &weights, &penalize, &opts)
                }
                _ => {
                    let resp = binary_response(rows, eq);
                    fit_binary_auto(&x, &resp, &weights, &penalize, &opts, cfg.firth_threshold)
                }
            }
            .map_err(|e| Error::numerical(format!("{} failed: {e}", eq.label())))?;
            let summary = EquationFitSummary {
                eq,
                converged: fit.converged,
                used_firth: fit.used_firth,
                separation: fit.separation,
                iterations: fit.iterations,
            };
            Ok((fit, summary))
        })
        .collect();

    let mut system = ModelSystem::zeroed(structure.clone())?;
    let mut q_unpenalized = 0.0;
    let mut q_penalized = 0.0;
    let mut fits = Vec::with_capacity(eqs.len());
    for (eq, r) in eqs.iter().zip(fitted) {
        let (fit, summary) = r?;
        q_unpenalized += fit.loglik;
        q_penalized += fit.penalized_loglik;
        system.set_equation_coefficients(*eq, &fit.coefficients);
        fits.push(summary);
    }
    Ok(MStep {
        system,
        q_unpenalized,
        q_penalized,
        fits,
    })
}

/// Adjusted-proportion logit, finite for empty or saturated counts.
fn adjusted_logit(successes: f64, total: f64) -> f64 {
    let p = (successes + 0.5) / (total + 1.0);
    (p / (1.0 - p)).ln()
}

/// Starting parameters: slopes zero everywhere; phenotype and missingness
/// intercepts at marginal logits; genotype equations fitted on complete
/// cases when there are enough of them, otherwise set to the marginal
/// genotype frequencies of the observed cells.
pub fn init_theta(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    structure: &ModelStructure,
    cfg: &EmConfig,
) -> Result<ModelSystem> {
    let mut sys = ModelSystem::zeroed(structure.clone())?;
    let n = g.n();
    let p = structure.p();

    let mut ones = 0.0;
    let mut obs = 0.0;
    for i in 0..n {
        if let Some(v) = y.get(i) {
            ones += v as f64;
            obs += 1.0;
        }
    }
    sys.theta[sys.layout.eq1.start] = adjusted_logit(ones, obs);

    for j in 0..p {
        let miss: f64 = (0..n).map(|i| mask.snp_mask[i][j] as f64).sum();
        sys.theta[sys.layout.eq8[j].start] = adjusted_logit(miss, n as f64);
    }
    if let Some(r) = &sys.layout.eq_ry {
        let miss: f64 = mask.pheno_mask.iter().map(|&v| v as f64).sum();
        sys.theta[r.start] = adjusted_logit(miss, n as f64);
    }

    let complete: Vec<usize> = (0..n).filter(|&i| mask.nu(i) == 0).collect();
    for j in 0..p {
        let preds = &structure.eq4[j];
        let w = design_width(preds);
        let mut initialized = false;
        if complete.len() >= w + 5 {
            let mut x = DMatrix::zeros(complete.len(), w);
            let mut resp = Vec::with_capacity(complete.len());
            for (row, &i) in complete.iter().enumerate() {
                x[(row, 0)] = 1.0;
                let mut at = 1;
                for pr in preds {
                    match pr {
                        Predictor::Snp(k) => {
                            let (d1, d2) = dummy_pair(g.get(i, *k).expect("complete case"));
                            x[(row, at)] = d1;
                            x[(row, at + 1)] = d2;
                            at += 2;
                        }
                        _ => unreachable!("genotype equations admit SNPs only"),
                    }
                }
                resp.push(g.get(i, structure.x_cols[j]).expect("complete case"));
            }
            let ones_w = vec![1.0; complete.len()];
            let penalize = penalize_columns(preds);
            let opts = FitOptions::with_lambda(cfg.lambda);
            if let Ok(fit) =
                fit_weighted_ridge_trinomial(&x, &resp, &ones_w, &penalize, &opts)
            {
                if fit.converged {
                    sys.set_equation_coefficients(EqId::Geno(j), &fit.coefficients);
                    initialized = true;
                }
            }
        }
        if !initialized {
            let mut counts = [0.0f64; 3];
            for i in 0..n {
                if let Some(v) = g.get(i, structure.x_cols[j]) {
                    counts[v as usize] += 1.0;
                }
            }
            let (r1, r2) = sys.layout.eq4[j].clone();
            sys.theta[r1.start] = ((counts[1] + 0.5) / (counts[0] + 0.5)).ln();
            sys.theta[r2.start] = ((counts[2] + 0.5) / (counts[0] + 0.5)).ln();
        }
    }
    Ok(sys)
}

/// True for every coefficient the ridge penalty applies to (non-intercepts).
pub fn penalty_mask(layout: &ParamLayout) -> Vec<bool> {
    let mut mask = vec![true; layout.total];
    mask[layout.eq1.start] = false;
    for (r1, r2) in &layout.eq4 {
        mask[r1.start] = false;
        mask[r2.start] = false;
    }
    for r in &layout.eq8 {
        mask[r.start] = false;
    }
    if let Some(r) = &layout.eq_ry {
        mask[r.start] = false;
    }
    mask
}

/// lambda/2 times the squared norm of the penalized coefficients.
pub fn system_penalty(sys: &ModelSystem, lambda: f64) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    let mask = penalty_mask(&sys.layout);
    0.5 * lambda
        * sys
            .theta
            .iter()
            .zip(mask.iter())
            .filter(|(_, &pen)| pen)
            .map(|(&t, _)| t * t)
            .sum::<f64>()
}

/// One EM iteration's bookkeeping. The observed-data log-likelihood is the
/// one computed by the iteration's E-step, i.e. evaluated at the incoming
/// parameters.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EmIterationRecord {
    pub iteration: usize,
    pub q_penalized: f64,
    pub q_unpenalized: f64,
    pub observed_loglik: Option<f64>,
    pub penalized_observed_loglik: Option<f64>,
    pub param_change: f64,
    pub lambda: f64,
    pub all_fits_converged: bool,
    pub any_firth: bool,
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
pub struct EmTrace {
    pub iterations: Vec<EmIterationRecord>,
    pub converged: bool,
}

/// Converged EM state: final parameters, the trace, and the final E-step
/// artifacts evaluated at the final parameters.
#[derive(Debug)]
pub struct EmFit {
    pub system: ModelSystem,
    pub trace: EmTrace,
    pub imputations: ImputationSet,
    pub wcd: WeightedCompleteData,
    pub observed_loglik: Option<f64>,
    pub penalized_observed_loglik: Option<f64>,
}

/// Runs the EM from the default initialization.
pub fn ridge_em(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    structure: &ModelStructure,
    cfg: &EmConfig,
) -> Result<EmFit> {
    let init = init_theta(g, y, mask, structure, cfg)?;
    ridge_em_from(g, y, mask, init, cfg)
}

/// Runs the EM from explicit starting parameters. Data with no missing
/// cells collapses to a single M-step (the direct penalized fit).
pub fn ridge_em_from(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    mask: &MissingMask,
    init: ModelSystem,
    cfg: &EmConfig,
) -> Result<EmFit> {
    assert!(cfg.max_iter >= 1, "need at least one EM iteration");
    let mut sys = init;
    let mut trace = EmTrace::default();
    for k in 1..=cfg.max_iter {
        let es = e_step(g, y, mask, &sys, cfg, k as u64)?;
        let ms = m_step(&es.wcd, &sys.structure, cfg, Some(&sys))?;
        let change = ms.system.max_param_change(&sys);
        trace.iterations.push(EmIterationRecord {
            iteration: k,
            q_penalized: ms.q_penalized,
            q_unpenalized: ms.q_unpenalized,
            observed_loglik: es.observed_loglik,
            penalized_observed_loglik: es
                .observed_loglik
                .map(|l| l - system_penalty(&sys, cfg.lambda)),
            param_change: change,
            lambda: cfg.lambda,
            all_fits_converged: ms.fits.iter().all(|f| f.converged),
            any_firth: ms.fits.iter().any(|f| f.used_firth),
        });
        sys = ms.system;
        if es.imputations.is_empty() || change < cfg.tol {
            trace.converged = true;
            break;
        }
    }
    let es = e_step(g, y, mask, &sys, cfg, cfg.max_iter as u64 + 1)?;
    Ok(EmFit {
        penalized_observed_loglik: es
            .observed_loglik
            .map(|l| l - system_penalty(&sys, cfg.lambda)),
        observed_loglik: es.observed_loglik,
        system: sys,
        trace,
        imputations: es.imputations,
        wcd: es.wcd,
    })
}
