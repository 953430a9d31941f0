//! Within-record sampler for completions when full enumeration is too
//! large. Each missing genotype cell has a trinomial full conditional
//! (and a missing phenotype a binary one) proportional to the complete-data
//! likelihood, so a systematic-scan sweep updates one cell at a time via the
//! incremental evaluator.

use super::evaluator::SystemEvaluator;
use super::weights::ObservedRecord;
use crate::data::ImputedCandidate;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Draws `retained` completions after `burn_in` full sweeps, deduplicated
/// with multiplicity; weights are the empirical frequencies. The candidate
/// list is sorted by assignment for a deterministic order.
pub fn gibbs_candidates(
    ev: &SystemEvaluator,
    rec: &ObservedRecord,
    burn_in: usize,
    retained: usize,
    rng: &mut ChaCha8Rng,
) -> Vec<ImputedCandidate> {
    assert!(retained > 0, "must retain at least one draw");
    let mut st = ev.init_state(
        rec.base_geno.clone(),
        rec.y.unwrap_or(0),
        rec.r.clone(),
        rec.r_y,
    );
    // start from each cell's full conditional rather than the placeholder
    let mut counts: BTreeMap<(Vec<u8>, Option<u8>), usize> = BTreeMap::new();
    for sweep in 0..burn_in + retained {
        for &c in &rec.missing {
            let mut lw = [0.0f64; 3];
            for g in 0..3u8 {
                ev.set_snp(&mut st, c, g);
                lw[g as usize] = ev.loglik(&st);
            }
            let g = sample_categorical(&lw, rng);
            ev.set_snp(&mut st, c, g);
        }
        if rec.y.is_none() {
            let mut lw = [0.0f64; 2];
            for v in 0..2u8 {
                ev.set_pheno(&mut st, v);
                lw[v as usize] = ev.loglik(&st);
            }
            let v = sample_categorical(&lw, rng);
            ev.set_pheno(&mut st, v);
        }
        if sweep >= burn_in {
            let values: Vec<u8> = rec.missing.iter().map(|&c| st.geno[c]).collect();
            let yv = rec.y.is_none().then_some(st.y);
            *counts.entry((values, yv)).or_insert(0) += 1;
        }
    }

    counts
        .into_iter()
        .map(|((values, yv), count)| ImputedCandidate {
            assignment: rec
                .missing
                .iter()
                .zip(values.iter())
                .map(|(&c, &v)| (c, v))
                .collect(),
            phenotype: yv,
            weight: count as f64 / retained as f64,
        })
        .collect()
}

/// Samples an index proportional to exp(log_w), overflow-safe.
fn sample_categorical(log_w: &[f64], rng: &mut ChaCha8Rng) -> u8 {
    let max = log_w.iter().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let probs: Vec<f64> = log_w.iter().map(|&l| (l - max).exp()).collect();
    let total: f64 = probs.iter().sum();
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i as u8;
        }
    }
    (log_w.len() - 1) as u8
}
