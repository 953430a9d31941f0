//! Candidate completions and their posterior weights.
//!
//! Each candidate's unnormalized weight is the complete-data likelihood of
//! the record with that completion filled in: the phenotype factor, the
//! sequential genotype factors, and the missingness factors. Everything is
//! computed in log space and normalized with a max-subtracted log-sum-exp.

use super::evaluator::{RecordState, SystemEvaluator};
use crate::data::{GenerationMode, ImputedCandidate};
use crate::error::{Error, Result};

/// One individual's observed record, before completion.
#[derive(Clone, Debug)]
pub struct ObservedRecord {
    /// Genotypes with missing cells at an arbitrary placeholder value.
    pub base_geno: Vec<u8>,
    /// Column indices of the missing genotype cells, ascending.
    pub missing: Vec<usize>,
    /// Observed phenotype, or None when missing.
    pub y: Option<u8>,
    /// Missingness indicators of the x columns.
    pub r: Vec<u8>,
    /// Phenotype-missingness indicator.
    pub r_y: u8,
}

impl ObservedRecord {
    pub fn nu(&self) -> usize {
        self.missing.len()
    }

    /// Number of completions a full enumeration would list.
    pub fn enumeration_size(&self) -> usize {
        3usize.pow(self.nu() as u32) * if self.y.is_none() { 2 } else { 1 }
    }
}

/// Lists every completion: all 3^nu genotype assignments (lexicographic in
/// the ascending missing positions), each crossed with y in {0, 1} when the
/// phenotype is missing. Weights are left at zero.
pub fn enumerate_completions(rec: &ObservedRecord, enum_cap: usize) -> Result<Vec<ImputedCandidate>> {
    let nu = rec.nu();
    let combos = 3usize.pow(nu as u32);
    if combos > enum_cap {
        return Err(Error::EnumTooLarge { nu, cap: enum_cap });
    }
    let y_vals: &[Option<u8>] = if rec.y.is_none() {
        &[Some(0), Some(1)]
    } else {
        &[None]
    };
    let mut out = Vec::with_capacity(combos * y_vals.len());
    let mut values = vec![0u8; nu];
    for _ in 0..combos {
        for &yv in y_vals {
            out.push(ImputedCandidate {
                assignment: rec
                    .missing
                    .iter()
                    .zip(values.iter())
                    .map(|(&c, &v)| (c, v))
                    .collect(),
                phenotype: yv,
                weight: 0.0,
            });
        }
        // odometer increment, last position fastest
        for d in (0..nu).rev() {
            if values[d] < 2 {
                values[d] += 1;
                break;
            }
            values[d] = 0;
        }
    }
    Ok(out)
}

/// Applies one candidate to a record state.
pub fn apply_candidate(ev: &SystemEvaluator, st: &mut RecordState, cand: &ImputedCandidate) {
    for &(c, v) in &cand.assignment {
        ev.set_snp(st, c, v);
    }
    if let Some(yv) = cand.phenotype {
        ev.set_pheno(st, yv);
    }
}

/// Normalizes log weights to probabilities; also returns the log-sum-exp
/// (the record's observed-data log-likelihood contribution).
pub fn normalize_log_weights(log_w: &[f64]) -> Result<(Vec<f64>, f64)> {
    let max = log_w.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    if !max.is_finite() {
        return Err(Error::numerical(
            "all candidate log-weights are -inf; the model assigns the \
             record zero probability",
        ));
    }
    let mut sum = 0.0;
    let mut w: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    for &v in &w {
        sum += v;
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    Ok((w, max + sum.ln()))
}

/// Posterior weights of the candidates under the current parameters, plus
/// the log-normalizer. Candidates are evaluated with incremental state
/// updates; consecutive candidates share all but a few cells.
pub fn compute_weights(
    ev: &SystemEvaluator,
    rec: &ObservedRecord,
    candidates: &[ImputedCandidate],
) -> Result<(Vec<f64>, f64)> {
    assert!(!candidates.is_empty(), "candidate list must be non-empty");
    let mut st = ev.init_state(
        rec.base_geno.clone(),
        rec.y.unwrap_or(0),
        rec.r.clone(),
        rec.r_y,
    );
    let mut log_w = Vec::with_capacity(candidates.len());
    for cand in candidates {
        apply_candidate(ev, &mut st, cand);
        log_w.push(ev.loglik(&st));
    }
    normalize_log_weights(&log_w)
}

/// Zeroes weights below `eps` and renormalizes the survivors. The largest
/// weight always survives (ties broken toward the first index), so the
/// result is a valid distribution for any eps < 1.
pub fn truncate_weights(weights: &mut [f64], eps: f64) {
    assert!((0.0..1.0).contains(&eps), "eps in [0, 1)");
    if eps == 0.0 {
        return;
    }
    let mut best = 0;
    for (i, &w) in weights.iter().enumerate() {
        if w > weights[best] {
            best = i;
        }
    }
    let mut sum = 0.0;
    for (i, w) in weights.iter_mut().enumerate() {
        if *w < eps && i != best {
            *w = 0.0;
        }
        sum += *w;
    }
    for w in weights.iter_mut() {
        *w /= sum;
    }
}

/// Generation mode after truncation: Truncated once any candidate was
/// dropped, Enumerated otherwise.
pub fn mark_mode(candidates: &[ImputedCandidate], eps: f64) -> GenerationMode {
    if eps > 0.0 && candidates.iter().any(|c| c.weight == 0.0) {
        GenerationMode::Truncated
    } else {
        GenerationMode::Enumerated
    }
}
