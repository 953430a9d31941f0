//! The imputation/selection cycle driver: alternate short penalized-EM runs
//! with per-equation forest selection, accumulate selection frequencies over
//! the cycles, then fit the frequency-filtered system to convergence and test
//! the missingness mechanism on its Louis covariance.
//!
//! Selection candidates never shrink: every cycle's forests see the full
//! allowed predictor set of each equation, so a predictor dropped from the
//! parametric system can re-enter later. Only the fitted equations shrink
//! between cycles.

use nalgebra::DMatrix;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    grow_forest, select_variables, variable_importance, FeatureColumn, FeatureKind,
    ForestData, ForestParams, SelectPolicy, VimpTable,
};
use crate::data::{
    validate_for_analysis, GenotypeMatrix, MissingMask, PhenotypeVector, WeightedCompleteData,
};
use crate::error::{Error, Result};
use crate::inference::{coefficient_table, mechanism_report, CoefficientRow, MechanismReport};
use crate::math::chi2_sf;
use crate::mirem::{
    louis_variance, ridge_em, tune_lambda, EmConfig, EmFit, EmTrace, EqId, ModelStructure,
    ModelSystem, Predictor, TuneConfig, TuneDiagnostics,
};
use crate::seed::{derive_rng, Tag};

/// Ridge strength for the EM fits: fixed, or selected once on the saturated
/// system before the cycles begin.
#[derive(Clone, Debug)]
pub enum LambdaPolicy {
    Fixed(f64),
    Tuned(TuneConfig),
}

/// How the accumulated frequencies decide the final predictor sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum FinalRule {
    /// Keep predictors selected in at least this many cycles.
    MinFrequency(usize),
    /// Keep at most this many predictors per equation, highest frequency
    /// first (ties to the earlier candidate); never a zero-frequency one.
    TopFrequencies(usize),
}

/// Cycle driver configuration.
#[derive(Clone, Debug)]
pub struct CycleConfig {
    /// Number of imputation/selection cycles.
    pub tau: usize,
    /// EM iteration cap within each cycle (the final fit runs to `em`'s own
    /// cap instead).
    pub kappa: usize,
    pub lambda: LambdaPolicy,
    pub selection: SelectPolicy,
    /// Final-set rule; `None` keeps the full-frequency predictors.
    pub final_rule: Option<FinalRule>,
    /// Per-equation forest settings; the seed field is overridden with a
    /// per-cycle, per-equation derivation from `seed`.
    pub forest: ForestParams,
    pub em: EmConfig,
    /// Minority weight under which a missingness-indicator response is
    /// screened by a weighted contingency test instead of a forest.
    pub imbalance_min: f64,
    /// Level for the mechanism report and the contingency screen.
    pub alpha: f64,
    pub seed: u64,
}

impl Default for CycleConfig {
    fn default() -> Self {
        CycleConfig {
            tau: 10,
            kappa: 5,
            lambda: LambdaPolicy::Fixed(0.0),
            selection: SelectPolicy::Threshold(0.0),
            final_rule: None,
            forest: ForestParams::default(),
            em: EmConfig::default(),
            imbalance_min: 10.0,
            alpha: 0.05,
            seed: 0,
        }
    }
}

/// How one equation's predictors were chosen in one cycle.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum SelectionMethod {
    Forest,
    FrequencyScreen,
}

/// Weighted contingency test of one candidate against the response.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ScreenEntry {
    pub name: String,
    pub statistic: f64,
    /// Zero when the table is degenerate (constant column or response).
    pub df: usize,
    pub p_value: f64,
}

/// One equation's selection outcome in one cycle.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquationSelection {
    pub equation: EqId,
    pub method: SelectionMethod,
    pub selected: Vec<Predictor>,
    /// Forest importances; absent when the equation was screened.
    pub importance: Option<VimpTable>,
    /// Contingency-screen table; present only when screened.
    pub screen: Option<Vec<ScreenEntry>>,
    /// Reason the forest was bypassed, when it was.
    pub note: Option<String>,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CycleRecord {
    pub cycle: usize,
    pub selections: Vec<EquationSelection>,
}

/// Selection counts of one equation's candidates over the cycles.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EquationFrequencies {
    pub equation: EqId,
    pub candidates: Vec<Predictor>,
    pub counts: Vec<usize>,
}

/// Everything the cycle driver produces: per-cycle selections, frequencies,
/// the final converged fit with its Louis covariance, the mechanism report,
/// and the full coefficient table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SelectionReport {
    pub tau: usize,
    /// Ridge strength used by every fit.
    pub lambda: f64,
    pub tuning: Option<TuneDiagnostics>,
    pub cycles: Vec<CycleRecord>,
    pub frequencies: Vec<EquationFrequencies>,
    pub final_system: ModelSystem,
    /// Louis covariance of the final fit, row-major.
    pub covariance: Vec<f64>,
    pub covariance_dim: usize,
    pub em_trace: EmTrace,
    pub mechanism: MechanismReport,
    pub coefficients: Vec<CoefficientRow>,
    /// Screen fallbacks and intercept-only degenerations, in cycle order.
    pub events: Vec<String>,
    pub snp_names: Vec<String>,
}

fn pred_display(pred: Predictor, x_cols: &[usize], snp_names: &[String]) -> String {
    match pred {
        Predictor::Snp(k) => snp_names[k].clone(),
        Predictor::Pheno => "phenotype".to_string(),
        Predictor::MissInd(k) => format!("r_{}", snp_names[x_cols[k]]),
    }
}

fn eq_display(eq: EqId, x_cols: &[usize], snp_names: &[String]) -> String {
    match eq {
        EqId::Pheno => "phenotype".to_string(),
        EqId::Geno(j) => format!("genotype {}", snp_names[x_cols[j]]),
        EqId::Miss(j) => format!("missingness r_{}", snp_names[x_cols[j]]),
        EqId::MissY => "missingness r_phenotype".to_string(),
    }
}

impl SelectionReport {
    pub fn covariance_matrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.covariance_dim, self.covariance_dim, &self.covariance)
    }

    /// Frequency table: one row per (equation, candidate) with the selection
    /// count and whether the candidate survived into the final system.
    pub fn frequencies_csv(&self) -> String {
        let s = &self.final_system.structure;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["equation", "predictor", "frequency", "in_final"])
            .expect("in-memory csv");
        for ef in &self.frequencies {
            let eq_name = eq_display(ef.equation, &s.x_cols, &self.snp_names);
            let final_set = s.predictors(ef.equation);
            for (pred, count) in ef.candidates.iter().zip(ef.counts.iter()) {
                w.write_record([
                    eq_name.as_str(),
                    &pred_display(*pred, &s.x_cols, &self.snp_names),
                    &count.to_string(),
                    if final_set.contains(pred) { "yes" } else { "no" },
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }

    /// Per-cycle selections in tidy form: one row per selected predictor,
    /// with an explicit row for equations reduced to intercept only.
    pub fn per_cycle_csv(&self) -> String {
        let s = &self.final_system.structure;
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(["cycle", "equation", "method", "predictor"])
            .expect("in-memory csv");
        for rec in &self.cycles {
            for sel in &rec.selections {
                let eq_name = eq_display(sel.equation, &s.x_cols, &self.snp_names);
                let method = match sel.method {
                    SelectionMethod::Forest => "forest",
                    SelectionMethod::FrequencyScreen => "screen",
                };
                if sel.selected.is_empty() {
                    w.write_record([
                        &rec.cycle.to_string(),
                        eq_name.as_str(),
                        method,
                        "(intercept only)",
                    ])
                    .expect("in-memory csv");
                }
                for pred in &sel.selected {
                    w.write_record([
                        &rec.cycle.to_string(),
                        eq_name.as_str(),
                        method,
                        &pred_display(*pred, &s.x_cols, &self.snp_names),
                    ])
                    .expect("in-memory csv");
                }
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }
}

/// Assembles one equation's forest dataset from the weighted complete data:
/// completed genotype values for SNP features, observed indicators and
/// (completed) phenotype for the rest.
fn equation_forest_data(
    wcd: &WeightedCompleteData,
    eq: EqId,
    candidates: &[Predictor],
    snp_names: &[String],
) -> ForestData {
    let x_cols = &wcd.x_cols;
    let features = candidates
        .iter()
        .map(|&pred| match pred {
            Predictor::Snp(k) => FeatureColumn {
                name: snp_names[k].clone(),
                kind: FeatureKind::Genotype,
                values: wcd.rows.iter().map(|r| r.genotypes[k]).collect(),
            },
            Predictor::Pheno => FeatureColumn {
                name: "phenotype".to_string(),
                kind: FeatureKind::Binary,
                values: wcd.rows.iter().map(|r| r.phenotype).collect(),
            },
            Predictor::MissInd(k) => FeatureColumn {
                name: format!("r_{}", snp_names[x_cols[k]]),
                kind: FeatureKind::Binary,
                values: wcd.rows.iter().map(|r| r.snp_miss[k]).collect(),
            },
        })
        .collect();
    let (response, n_classes, response_name): (Vec<u8>, u8, String) = match eq {
        EqId::Pheno => (
            wcd.rows.iter().map(|r| r.phenotype).collect(),
            2,
            "phenotype".to_string(),
        ),
        EqId::Geno(j) => (
            wcd.rows.iter().map(|r| r.genotypes[x_cols[j]]).collect(),
            3,
            snp_names[x_cols[j]].clone(),
        ),
        EqId::Miss(j) => (
            wcd.rows.iter().map(|r| r.snp_miss[j]).collect(),
            2,
            format!("r_{}", snp_names[x_cols[j]]),
        ),
        EqId::MissY => (
            wcd.rows.iter().map(|r| r.pheno_miss).collect(),
            2,
            "r_phenotype".to_string(),
        ),
    };
    ForestData {
        features,
        response,
        n_classes,
        weights: wcd.rows.iter().map(|r| r.weight).collect(),
        response_name,
    }
}

/// Weighted Pearson chi-square of each feature against the response, over
/// the populated rows and columns of the weighted contingency table. A
/// degenerate table (fewer than two populated response classes or feature
/// values) yields statistic 0, df 0, p 1.
pub fn contingency_screen(data: &ForestData) -> Vec<ScreenEntry> {
    let nc = data.n_classes as usize;
    data.features
        .iter()
        .map(|col| {
            let arity = col.kind.arity() as usize;
            let mut cells = vec![0.0f64; nc * arity];
            for i in 0..data.n_rows() {
                cells[data.response[i] as usize * arity + col.values[i] as usize] +=
                    data.weights[i];
            }
            let row_sum: Vec<f64> = (0..nc)
                .map(|c| cells[c * arity..(c + 1) * arity].iter().sum())
                .collect();
            let col_sum: Vec<f64> = (0..arity)
                .map(|v| (0..nc).map(|c| cells[c * arity + v]).sum())
                .collect();
            let total: f64 = row_sum.iter().sum();
            let rows_pop = row_sum.iter().filter(|&&s| s > 0.0).count();
            let cols_pop = col_sum.iter().filter(|&&s| s > 0.0).count();
            if rows_pop < 2 || cols_pop < 2 || total <= 0.0 {
                return ScreenEntry {
                    name: col.name.clone(),
                    statistic: 0.0,
                    df: 0,
                    p_value: 1.0,
                };
            }
            let mut chi2 = 0.0;
            for c in 0..nc {
                for v in 0..arity {
                    let e = row_sum[c] * col_sum[v] / total;
                    if e > 0.0 {
                        let d = cells[c * arity + v] - e;
                        chi2 += d * d / e;
                    }
                }
            }
            let df = (rows_pop - 1) * (cols_pop - 1);
            ScreenEntry {
                name: col.name.clone(),
                statistic: chi2,
                df,
                p_value: chi2_sf(chi2, df as f64),
            }
        })
        .collect()
}

/// Screen-based stand-in for forest selection: the threshold policy keeps
/// candidates associated at level `alpha`; top-s keeps the s largest
/// statistics among testable candidates. Returns ascending feature indices.
fn screen_select(entries: &[ScreenEntry], policy: SelectPolicy, alpha: f64) -> Vec<usize> {
    match policy {
        SelectPolicy::Threshold(_) => (0..entries.len())
            .filter(|&i| entries[i].p_value < alpha)
            .collect(),
        SelectPolicy::TopS(s) => {
            let mut idx: Vec<usize> = (0..entries.len()).filter(|&i| entries[i].df > 0).collect();
            idx.sort_by(|&a, &b| {
                entries[b]
                    .statistic
                    .partial_cmp(&entries[a].statistic)
                    .expect("finite screen statistics")
                    .then(a.cmp(&b))
            });
            idx.truncate(s);
            idx.sort_unstable();
            idx
        }
    }
}

fn select_one(
    wcd: &WeightedCompleteData,
    eq: EqId,
    candidates: &[Predictor],
    cfg: &CycleConfig,
    forest_seed: u64,
    snp_names: &[String],
) -> Result<EquationSelection> {
    let data = equation_forest_data(wcd, eq, candidates, snp_names);
    let nc = data.n_classes as usize;
    let mut class_w = [0.0f64; 3];
    for (i, &resp) in data.response.iter().enumerate() {
        class_w[resp as usize] += data.weights[i];
    }
    let populated = class_w[..nc].iter().filter(|&&w| w > 0.0).count();
    let minority = class_w[..nc]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let is_missingness = matches!(eq, EqId::Miss(_) | EqId::MissY);
    let screen_note = if populated < 2 {
        Some("screened: response constant over the weighted rows".to_string())
    } else if is_missingness && minority < cfg.imbalance_min {
        Some(format!(
            "screened: weighted minority {minority:.1} below {}",
            cfg.imbalance_min
        ))
    } else {
        None
    };
    if let Some(note) = screen_note {
        let entries = contingency_screen(&data);
        let picked = screen_select(&entries, cfg.selection, cfg.alpha);
        return Ok(EquationSelection {
            equation: eq,
            method: SelectionMethod::FrequencyScreen,
            selected: picked.into_iter().map(|i| candidates[i]).collect(),
            importance: None,
            screen: Some(entries),
            note: Some(note),
        });
    }
    let mut params = cfg.forest;
    params.seed = forest_seed;
    let model = grow_forest(&data, &params)?;
    let table = variable_importance(&model, &data);
    let picked = select_variables(&table, cfg.selection);
    Ok(EquationSelection {
        equation: eq,
        method: SelectionMethod::Forest,
        selected: picked.into_iter().map(|i| candidates[i]).collect(),
        importance: Some(table),
        screen: None,
        note: None,
    })
}

/// Replaces the active predictor sets of a structure.
fn apply_sets(base: &ModelStructure, sets: &[(EqId, Vec<Predictor>)]) -> ModelStructure {
    let mut s = base.clone();
    for (eq, preds) in sets {
        match eq {
            EqId::Pheno => s.eq1 = preds.clone(),
            EqId::Geno(j) => s.eq4[*j] = preds.clone(),
            EqId::Miss(j) => s.eq8[*j] = preds.clone(),
            EqId::MissY => s.eq_ry = Some(preds.clone()),
        }
    }
    s
}

/// Applies a final rule to accumulated frequencies, per equation. Candidate
/// order is preserved in the returned sets.
pub fn final_sets(
    frequencies: &[EquationFrequencies],
    rule: FinalRule,
) -> Vec<(EqId, Vec<Predictor>)> {
    frequencies
        .iter()
        .map(|ef| {
            let set = match rule {
                FinalRule::MinFrequency(fmin) => ef
                    .candidates
                    .iter()
                    .zip(ef.counts.iter())
                    .filter(|(_, &c)| c >= fmin)
                    .map(|(&p, _)| p)
                    .collect(),
                FinalRule::TopFrequencies(s) => {
                    let mut idx: Vec<usize> =
                        (0..ef.candidates.len()).filter(|&i| ef.counts[i] > 0).collect();
                    idx.sort_by(|&a, &b| ef.counts[b].cmp(&ef.counts[a]).then(a.cmp(&b)));
                    idx.truncate(s);
                    idx.sort_unstable();
                    idx.into_iter().map(|i| ef.candidates[i]).collect()
                }
            };
            (ef.equation, set)
        })
        .collect()
}

/// Runs the full selection procedure and returns the report together with
/// the final converged fit (whose weighted complete data the caller may
/// export).
pub fn run_cycles(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    cfg: &CycleConfig,
) -> Result<(SelectionReport, EmFit)> {
    if cfg.tau < 1 {
        return Err(Error::config("tau must be at least 1"));
    }
    if cfg.kappa < 1 {
        return Err(Error::config("kappa must be at least 1"));
    }
    validate_for_analysis(g, y)?;
    let snp_names = g.snp_names();
    let mask = MissingMask::from_data(g, y);
    let saturated = ModelStructure::saturated(g.m(), &mask, mask.pheno_missing_any());

    let (lambda, tuning) = match &cfg.lambda {
        LambdaPolicy::Fixed(l) => (*l, None),
        LambdaPolicy::Tuned(tc) => {
            let (l, diag) = tune_lambda(g, y, &mask, &saturated, tc)?;
            (l, Some(diag))
        }
    };
    let mut em_cycle = cfg.em.clone();
    em_cycle.lambda = lambda;
    em_cycle.max_iter = cfg.kappa;
    let mut em_final = cfg.em.clone();
    em_final.lambda = lambda;
    em_final.seed = derive_rng(cfg.seed, &[Tag::Cycle as u64, 0]).gen::<u64>();

    let equations = saturated.equations();
    let candidates_per_eq: Vec<Vec<Predictor>> = equations
        .iter()
        .map(|&eq| saturated.predictors(eq).to_vec())
        .collect();
    let mut counts: Vec<Vec<usize>> = candidates_per_eq
        .iter()
        .map(|c| vec![0usize; c.len()])
        .collect();

    let mut structure = saturated.clone();
    let mut cycles = Vec::with_capacity(cfg.tau);
    let mut events = Vec::new();
    for t in 1..=cfg.tau {
        em_cycle.seed = derive_rng(cfg.seed, &[Tag::Cycle as u64, t as u64]).gen::<u64>();
        let fit = ridge_em(g, y, &mask, &structure, &em_cycle)?;
        let selections: Vec<EquationSelection> = equations
            .par_iter()
            .enumerate()
            .map(|(eqi, &eq)| {
                let forest_seed = derive_rng(
                    cfg.seed,
                    &[Tag::Cycle as u64, t as u64, eqi as u64],
                )
                .gen::<u64>();
                select_one(
                    &fit.wcd,
                    eq,
                    &candidates_per_eq[eqi],
                    cfg,
                    forest_seed,
                    snp_names,
                )
            })
            .collect::<Result<_>>()?;
        for (eqi, sel) in selections.iter().enumerate() {
            let label = eq_display(sel.equation, &saturated.x_cols, snp_names);
            if let Some(note) = &sel.note {
                events.push(format!("cycle {t}: {label} {note}"));
            }
            if sel.selected.is_empty() {
                events.push(format!("cycle {t}: {label} reduced to intercept only"));
            }
            for pred in &sel.selected {
                let ci = candidates_per_eq[eqi]
                    .iter()
                    .position(|c| c == pred)
                    .expect("selected predictors come from the candidate set");
                counts[eqi][ci] += 1;
            }
        }
        let sets: Vec<(EqId, Vec<Predictor>)> = selections
            .iter()
            .map(|sel| (sel.equation, sel.selected.clone()))
            .collect();
        structure = apply_sets(&saturated, &sets);
        cycles.push(CycleRecord {
            cycle: t,
            selections,
        });
    }

    let frequencies: Vec<EquationFrequencies> = equations
        .iter()
        .zip(candidates_per_eq.iter())
        .zip(counts.iter())
        .map(|((&eq, cands), cnt)| EquationFrequencies {
            equation: eq,
            candidates: cands.clone(),
            counts: cnt.clone(),
        })
        .collect();
    let rule = cfg
        .final_rule
        .unwrap_or(FinalRule::MinFrequency(cfg.tau));
    let finals = final_sets(&frequencies, rule);
    for (eq, preds) in &finals {
        if preds.is_empty() {
            events.push(format!(
                "final: {} intercept only",
                eq_display(*eq, &saturated.x_cols, snp_names)
            ));
        }
    }
    let final_structure = apply_sets(&saturated, &finals);

    let fit = ridge_em(g, y, &mask, &final_structure, &em_final)?;
    let cov = louis_variance(&fit.wcd, &fit.system, lambda)?;
    let mechanism = mechanism_report(&fit.system, &cov, cfg.alpha, snp_names)?;
    let coefficients = coefficient_table(&fit.system, &cov, snp_names);
    let report = SelectionReport {
        tau: cfg.tau,
        lambda,
        tuning,
        cycles,
        frequencies,
        final_system: fit.system.clone(),
        covariance: cov.transpose().as_slice().to_vec(), // row-major
        covariance_dim: cov.nrows(),
        em_trace: fit.trace.clone(),
        mechanism,
        coefficients,
        events,
        snp_names: snp_names.to_vec(),
    };
    Ok((report, fit))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::simgen::{
        gen_correlated_snps, gen_phenotype, inject_missingness, CorrelationSpec, MissSpec,
        MissTarget, PhenotypeModel, SnpCoding,
    };

    /// Small MNAR dataset: six SNPs, signal on 0 and 2, self-censoring
    /// missingness on columns 1 and 2.
    fn mnar_dataset(n: usize, seed: u64) -> (GenotypeMatrix, PhenotypeVector) {
        let g = gen_correlated_snps(
            n,
            &CorrelationSpec {
                m: 6,
                rho: 0.2,
                maf_low: 0.3,
                maf_high: 0.45,
                seed,
            },
        )
        .unwrap();
        let model = PhenotypeModel {
            intercept: -0.7,
            terms: vec![
                (0, SnpCoding::DummyPair(1.4, 1.8)),
                (2, SnpCoding::Numeric(-1.0)),
            ],
        };
        let y = gen_phenotype(&g, &model, seed ^ 0x5c).unwrap();
        inject_missingness(
            &g,
            &y,
            &[
                MissSpec {
                    target: MissTarget::Snp(1),
                    xi0: -1.6,
                    xi1: 0.8,
                },
                MissSpec {
                    target: MissTarget::Snp(2),
                    xi0: -1.8,
                    xi1: 0.6,
                },
            ],
            seed ^ 0xa3,
        )
        .unwrap()
    }

    /// Small-sample settings: a modest ridge keeps saturated designs with
    /// rare genotype levels away from singularity.
    fn quick_config() -> CycleConfig {
        CycleConfig {
            tau: 2,
            kappa: 2,
            lambda: LambdaPolicy::Fixed(0.25),
            forest: ForestParams {
                ntr: 40,
                ..Default::default()
            },
            ..Default::default()
        }
    }

    #[test]
    fn tau_one_final_set_equals_single_cycle_selection() {
        let (g, y) = mnar_dataset(120, 11);
        let mut cfg = quick_config();
        cfg.tau = 1;
        let (report, _) = run_cycles(&g, &y, &cfg).unwrap();
        assert_eq!(report.cycles.len(), 1);
        for (ef, sel) in report
            .frequencies
            .iter()
            .zip(report.cycles[0].selections.iter())
        {
            assert!(ef.counts.iter().all(|&c| c <= 1));
            let from_freq: Vec<Predictor> = ef
                .candidates
                .iter()
                .zip(ef.counts.iter())
                .filter(|(_, &c)| c == 1)
                .map(|(&p, _)| p)
                .collect();
            assert_eq!(from_freq, sel.selected);
            assert_eq!(
                report.final_system.structure.predictors(ef.equation),
                sel.selected.as_slice()
            );
        }
    }

    #[test]
    fn reports_are_bit_identical_across_reruns() {
        let (g, y) = mnar_dataset(110, 29);
        let cfg = quick_config();
        let (r1, _) = run_cycles(&g, &y, &cfg).unwrap();
        let (r2, _) = run_cycles(&g, &y, &cfg).unwrap();
        let b1 = serde_json::to_vec(&r1).unwrap();
        let b2 = serde_json::to_vec(&r2).unwrap();
        assert_eq!(b1, b2, "same seed and config must reproduce the report");
        // and a different seed changes at least the forests
        let mut cfg2 = cfg.clone();
        cfg2.seed = 1;
        let (r3, _) = run_cycles(&g, &y, &cfg2).unwrap();
        assert_ne!(b1, serde_json::to_vec(&r3).unwrap());
    }

    #[test]
    fn complete_data_degenerates_to_single_equation_flow() {
        let g = gen_correlated_snps(
            150,
            &CorrelationSpec {
                m: 5,
                rho: 0.1,
                maf_low: 0.3,
                maf_high: 0.45,
                seed: 7,
            },
        )
        .unwrap();
        let model = PhenotypeModel {
            intercept: -0.4,
            terms: vec![(1, SnpCoding::Numeric(1.3))],
        };
        let y = gen_phenotype(&g, &model, 8).unwrap();
        let mut cfg = quick_config();
        cfg.tau = 1;
        let (report, fit) = run_cycles(&g, &y, &cfg).unwrap();
        assert!(report.final_system.structure.x_cols.is_empty());
        assert_eq!(report.cycles[0].selections.len(), 1, "phenotype equation only");
        assert!(report.mechanism.rows.is_empty());
        assert!(report.em_trace.converged, "no-missing EM is a single fit");
        assert_eq!(fit.wcd.rows.len(), 150, "one row per individual");
        let csv = report.frequencies_csv();
        assert!(csv.lines().count() >= 6, "header plus five candidates");
    }

    #[test]
    fn impossible_threshold_leaves_intercepts_and_is_recorded() {
        let (g, y) = mnar_dataset(100, 43);
        let mut cfg = quick_config();
        cfg.selection = SelectPolicy::Threshold(f64::INFINITY);
        let (report, _) = run_cycles(&g, &y, &cfg).unwrap();
        let s = &report.final_system.structure;
        assert!(s.eq1.is_empty());
        assert!(s.eq4.iter().all(|p| p.is_empty()));
        assert!(s.eq8.iter().all(|p| p.is_empty()));
        assert!(report
            .events
            .iter()
            .any(|e| e.contains("reduced to intercept only")));
        assert!(report.events.iter().any(|e| e.starts_with("final:")));
        for row in &report.mechanism.rows {
            assert!(row.joint.is_none());
            assert!(!row.non_ignorable);
        }
        // intercept-only system still has one parameter per equation block
        assert_eq!(report.covariance_dim, report.final_system.layout.total);
        let csv = report.per_cycle_csv();
        assert!(csv.contains("(intercept only)"));
    }

    #[test]
    fn imbalance_floor_routes_missingness_equations_through_screen() {
        let (g, y) = mnar_dataset(120, 57);
        let mut cfg = quick_config();
        cfg.tau = 1;
        cfg.imbalance_min = f64::MAX;
        let (report, _) = run_cycles(&g, &y, &cfg).unwrap();
        for sel in &report.cycles[0].selections {
            match sel.equation {
                EqId::Miss(_) | EqId::MissY => {
                    assert_eq!(sel.method, SelectionMethod::FrequencyScreen);
                    assert!(sel.importance.is_none());
                    let entries = sel.screen.as_ref().unwrap();
                    assert_eq!(
                        entries.len(),
                        report
                            .frequencies
                            .iter()
                            .find(|ef| ef.equation == sel.equation)
                            .unwrap()
                            .candidates
                            .len()
                    );
                    assert!(sel.note.as_ref().unwrap().contains("weighted minority"));
                }
                _ => {
                    assert_eq!(sel.method, SelectionMethod::Forest);
                    assert!(sel.importance.is_some());
                    assert!(sel.screen.is_none());
                }
            }
        }
        assert!(report.events.iter().any(|e| e.contains("screened")));
    }

    #[test]
    fn contingency_screen_matches_hand_computed_chi_square() {
        let data = ForestData {
            features: vec![
                FeatureColumn {
                    name: "f".to_string(),
                    kind: FeatureKind::Binary,
                    values: vec![0, 1, 0, 1],
                },
                FeatureColumn {
                    name: "const".to_string(),
                    kind: FeatureKind::Genotype,
                    values: vec![2, 2, 2, 2],
                },
            ],
            response: vec![0, 0, 1, 1],
            n_classes: 2,
            weights: vec![1.0, 2.0, 3.0, 4.0],
            response_name: "r".to_string(),
        };
        let entries = contingency_screen(&data);
        // weighted table [[1,2],[3,4]]: margins (3,7) and (4,6), total 10;
        // chi2 = 0.2^2 * (1/1.2 + 1/1.8 + 1/2.8 + 1/4.2) = 5/63
        assert!((entries[0].statistic - 5.0 / 63.0).abs() < 1e-12);
        assert_eq!(entries[0].df, 1);
        assert!(
            (entries[0].p_value - chi2_sf(5.0 / 63.0, 1.0)).abs() < 1e-15
        );
        // constant column cannot be tested
        assert_eq!(entries[1].df, 0);
        assert_eq!(entries[1].p_value, 1.0);
        assert_eq!(entries[1].statistic, 0.0);

        // top-1 keeps the testable feature; threshold needs p below alpha
        let top = screen_select(&entries, SelectPolicy::TopS(1), 0.05);
        assert_eq!(top, vec![0]);
        let th = screen_select(&entries, SelectPolicy::Threshold(0.0), 0.9999);
        assert_eq!(th, vec![0], "p = 0.778 clears a loose alpha");
        let th = screen_select(&entries, SelectPolicy::Threshold(0.0), 0.05);
        assert!(th.is_empty());
    }

    #[test]
    fn final_rules_are_monotone_and_skip_zero_frequencies() {
        let (g, y) = mnar_dataset(120, 71);
        let mut cfg = quick_config();
        cfg.tau = 4;
        cfg.kappa = 1;
        let (report, _) = run_cycles(&g, &y, &cfg).unwrap();
        let as_sets = |sets: &[(EqId, Vec<Predictor>)]| -> Vec<Vec<Predictor>> {
            sets.iter().map(|(_, s)| s.clone()).collect()
        };
        for fmin in 0..4usize {
            let lo = as_sets(&final_sets(&report.frequencies, FinalRule::MinFrequency(fmin)));
            let hi = as_sets(&final_sets(
                &report.frequencies,
                FinalRule::MinFrequency(fmin + 1),
            ));
            for (l, h) in lo.iter().zip(hi.iter()) {
                assert!(h.iter().all(|p| l.contains(p)), "raising fmin only removes");
            }
        }
        for s in 0..6usize {
            let lo = as_sets(&final_sets(&report.frequencies, FinalRule::TopFrequencies(s)));
            let hi = as_sets(&final_sets(
                &report.frequencies,
                FinalRule::TopFrequencies(s + 1),
            ));
            for (l, h) in lo.iter().zip(hi.iter()) {
                assert!(l.iter().all(|p| h.contains(p)), "raising s only adds");
                assert!(h.len() <= s + 1);
            }
        }
        // zero-frequency candidates never enter a top-frequencies set
        let all = as_sets(&final_sets(
            &report.frequencies,
            FinalRule::TopFrequencies(usize::MAX),
        ));
        for (ef, set) in report.frequencies.iter().zip(all.iter()) {
            for (pred, &c) in ef.candidates.iter().zip(ef.counts.iter()) {
                assert_eq!(set.contains(pred), c > 0);
            }
        }
    }

    #[test]
    fn tuned_lambda_is_selected_once_and_recorded() {
        let (g, y) = mnar_dataset(160, 83);
        let mut cfg = quick_config();
        cfg.tau = 1;
        let mut tc = TuneConfig::default();
        tc.grid = vec![0.25, 2.5];
        tc.em.max_iter = 3;
        cfg.lambda = LambdaPolicy::Tuned(tc);
        let (report, _) = run_cycles(&g, &y, &cfg).unwrap();
        let diag = report.tuning.as_ref().unwrap();
        assert_eq!(diag.points.len(), 2);
        assert!(report.lambda == 0.25 || report.lambda == 2.5);
        assert_eq!(diag.points[diag.chosen].lambda, report.lambda);
        assert!(report.em_trace.iterations.iter().all(|r| r.lambda == report.lambda));
    }

    #[test]
    fn lone_missing_snp_has_no_genotype_candidates_and_still_runs() {
        // one SNP total, missing-prone: its genotype equation has an empty
        // candidate set and must fall back to intercept only gracefully
        let g = gen_correlated_snps(
            100,
            &CorrelationSpec {
                m: 1,
                rho: 0.0,
                maf_low: 0.35,
                maf_high: 0.45,
                seed: 5,
            },
        )
        .unwrap();
        let model = PhenotypeModel {
            intercept: -0.3,
            terms: vec![(0, SnpCoding::Numeric(1.2))],
        };
        let y = gen_phenotype(&g, &model, 6).unwrap();
        let (g, y) = inject_missingness(
            &g,
            &y,
            &[MissSpec {
                target: MissTarget::Snp(0),
                xi0: -1.5,
                xi1: 0.7,
            }],
            9,
        )
        .unwrap();
        let mut cfg = quick_config();
        cfg.tau = 1;
        let (report, _) = run_cycles(&g, &y, &cfg).unwrap();
        let geno_sel = report.cycles[0]
            .selections
            .iter()
            .find(|s| matches!(s.equation, EqId::Geno(_)))
            .unwrap();
        assert!(geno_sel.selected.is_empty());
        assert!(report.final_system.structure.eq4[0].is_empty());
        assert!(!report.mechanism.rows.is_empty());
    }
}
