//! Reference analyses that ignore the missingness model: a full-design
//! logistic fit plus a forest importance ranking, run either on complete
//! data or on the complete-case subset. The complete-case variant is a
//! diagnostic: instead of failing on the degenerate designs that row
//! deletion tends to produce, it flags them.

use nalgebra::DMatrix;

use crate::data::{dummy_pair, GenotypeMatrix, PhenotypeVector};
use crate::error::{Error, Result};
use crate::forest::{
    grow_forest, variable_importance, FeatureColumn, FeatureKind, ForestData, ForestParams,
    VimpTable,
};
use crate::glm::{fit_weighted_ridge_binary, FitOptions};
use crate::math::normal_cdf;
use serde::{Deserialize, Serialize};

/// Standard errors beyond this are treated as a failed (separated or
/// collinear) maximum-likelihood fit.
const DEGENERATE_SE: f64 = 50.0;

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineCoefficient {
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub p_value: f64,
}

/// Outcome of one reference analysis.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BaselineReport {
    /// Rows that entered the fit after complete-case filtering.
    pub n_used: usize,
    /// Active SNP columns, ascending.
    pub columns: Vec<usize>,
    /// Intercept then one dummy pair per active SNP; empty when the fit
    /// could not be computed at all.
    pub coefficients: Vec<BaselineCoefficient>,
    pub converged: bool,
    /// Separation, non-convergence, a singular design, or standard errors
    /// beyond any plausible scale.
    pub degenerate: bool,
    pub note: Option<String>,
    /// Forest importances over the active SNPs; absent when the filtered
    /// response has a single class.
    pub importance: Option<VimpTable>,
}

/// Full-design logistic fit plus forest importances on NA-free data.
pub fn run_baseline_complete(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    seed: u64,
) -> Result<BaselineReport> {
    for j in 0..g.m() {
        if g.column_missing_count(j) > 0 {
            return Err(Error::data(format!(
                "column {} has missing values; use the complete-case analysis",
                g.snp_names()[j]
            )));
        }
    }
    if y.missing_count() > 0 {
        return Err(Error::data(
            "phenotype has missing values; use the complete-case analysis",
        ));
    }
    let columns: Vec<usize> = (0..g.m()).collect();
    Ok(fit_rows(g, y, &columns, &all_rows(g.n()), seed))
}

/// Complete-case variant: keeps the rows with no NA in the active columns
/// and an observed phenotype, then proceeds as the complete analysis.
/// Degenerate fits are reported, not returned as errors. `columns` of None
/// means all SNPs.
pub fn run_baseline_completecase(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    columns: Option<&[usize]>,
    seed: u64,
) -> BaselineReport {
    let columns: Vec<usize> = match columns {
        Some(c) => c.to_vec(),
        None => (0..g.m()).collect(),
    };
    let rows: Vec<usize> = (0..g.n())
        .filter(|&i| {
            y.get(i).is_some() && columns.iter().all(|&j| !g.is_missing(i, j))
        })
        .collect();
    fit_rows(g, y, &columns, &rows, seed)
}

fn all_rows(n: usize) -> Vec<usize> {
    (0..n).collect()
}

fn fit_rows(
    g: &GenotypeMatrix,
    y: &PhenotypeVector,
    columns: &[usize],
    rows: &[usize],
    seed: u64,
) -> BaselineReport {
    let n = rows.len();
    let mut report = BaselineReport {
        n_used: n,
        columns: columns.to_vec(),
        coefficients: Vec::new(),
        converged: false,
        degenerate: false,
        note: None,
        importance: None,
    };
    if n == 0 {
        report.degenerate = true;
        report.note = Some("no complete-case rows remain".to_string());
        return report;
    }
    let resp: Vec<u8> = rows
        .iter()
        .map(|&i| y.get(i).expect("rows are phenotype-observed"))
        .collect();
    let ones = resp.iter().filter(|&&v| v == 1).count();
    if ones == 0 || ones == n {
        report.degenerate = true;
        report.note = Some("filtered phenotype has a single class".to_string());
        return report;
    }

    // forest part
    let data = ForestData {
        features: columns
            .iter()
            .map(|&j| FeatureColumn {
                name: g.snp_names()[j].clone(),
                kind: FeatureKind::Genotype,
                values: rows
                    .iter()
                    .map(|&i| g.get(i, j).expect("rows are complete in the active columns"))
                    .collect(),
            })
            .collect(),
        response: resp.iter().copied().collect(),
        n_classes: 2,
        weights: vec![1.0; n],
        response_name: "phenotype".to_string(),
    };
    let params = ForestParams {
        seed,
        ..Default::default()
    };
    match grow_forest(&data, &params) {
        Ok(model) => report.importance = Some(variable_importance(&model, &data)),
        Err(e) => report.note = Some(format!("forest skipped: {e}")),
    }

    // full-design logistic fit: intercept plus one dummy pair per SNP
    let d = 1 + 2 * columns.len();
    let mut x = DMatrix::zeros(n, d);
    for (r, &i) in rows.iter().enumerate() {
        x[(r, 0)] = 1.0;
        for (c, &j) in columns.iter().enumerate() {
            let (d1, d2) = dummy_pair(g.get(i, j).expect("complete rows"));
            x[(r, 1 + 2 * c)] = d1;
            x[(r, 2 + 2 * c)] = d2;
        }
    }
    let yv: Vec<f64> = resp.iter().map(|&v| v as f64).collect();
    let w = vec![1.0; n];
    let penalize = vec![false; d];
    let opts = FitOptions {
        compute_covariance: true,
        ..Default::default()
    };
    let fit = match fit_weighted_ridge_binary(&x, &yv, &w, &penalize, &opts) {
        Ok(f) => f,
        Err(e) => {
            report.degenerate = true;
            report.note = Some(format!("maximum-likelihood fit failed: {e}"));
            return report;
        }
    };
    report.converged = fit.converged;
    let cov = match &fit.covariance {
        Some(c) => c,
        None => {
            report.degenerate = true;
            report.note = Some("information matrix is singular".to_string());
            return report;
        }
    };
    let mut max_se = 0.0f64;
    for (k, &est) in fit.coefficients.iter().enumerate() {
        let se = cov[(k, k)].max(0.0).sqrt();
        max_se = max_se.max(se);
        let z = est / se;
        let term = if k == 0 {
            "(intercept)".to_string()
        } else {
            let c = (k - 1) / 2;
            let level = 1 + (k - 1) % 2;
            format!("{}[{}]", g.snp_names()[columns[c]], level)
        };
        report.coefficients.push(BaselineCoefficient {
            term,
            estimate: est,
            se,
            p_value: 2.0 * (1.0 - normal_cdf(z.abs())),
        });
    }
    if fit.separation || !fit.converged || max_se > DEGENERATE_SE {
        report.degenerate = true;
        let why = if fit.separation {
            "separated fit".to_string()
        } else if !fit.converged {
            "fit did not converge".to_string()
        } else {
            format!("standard errors up to {max_se:.1}")
        };
        report.note = Some(match report.note.take() {
            Some(prev) => format!("{prev}; {why}"),
            None => why,
        });
    }
    report
}

/// CSV rendering of the coefficient side of a baseline report.
pub fn baseline_csv(report: &BaselineReport) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["term", "estimate", "se", "p_value"])
        .expect("in-memory csv");
    for c in &report.coefficients {
        w.write_record([
            c.term.as_str(),
            &format!("{}", c.estimate),
            &format!("{}", c.se),
            &format!("{}", c.p_value),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

/// CSV rendering of the importance side of a baseline report.
pub fn importance_csv(table: &VimpTable) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["snp", "mda", "mdg"]).expect("in-memory csv");
    for e in &table.entries {
        w.write_record([e.name.as_str(), &format!("{}", e.mda), &format!("{}", e.mdg)])
            .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}
