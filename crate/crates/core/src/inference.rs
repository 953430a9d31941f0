//! Wald tests on fitted coefficient blocks and the missingness-mechanism
//! report: per missingness equation, a joint test of all slopes, per-covariate
//! block tests, and an ignorability verdict driven by the covariates whose
//! values are themselves incomplete.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::math::{chi2_sf, normal_cdf};
use crate::mirem::{EqId, ModelSystem, Predictor};

/// A chi-square Wald test of one coefficient sub-vector.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct WaldResult {
    /// W = coef' cov^-1 coef, nonnegative.
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    /// Indices of the tested coefficients; positions within the sub-vector
    /// for `wald_test`, stacked-parameter indices for `wald_test_at`.
    pub tested: Vec<usize>,
}

/// Significance marker for a p-value: thresholds 0.001, 0.01, 0.05, 0.1.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else if p < 0.1 {
        "."
    } else {
        ""
    }
}

/// Wald test of the hypothesis that the given coefficient sub-vector is zero,
/// using its covariance sub-matrix. The covariance must be symmetric positive
/// definite.
pub fn wald_test(coef_sub: &[f64], cov_sub: &DMatrix<f64>) -> Result<WaldResult> {
    let d = coef_sub.len();
    if d == 0 {
        return Err(Error::config("wald test needs at least one coefficient"));
    }
    if cov_sub.nrows() != d || cov_sub.ncols() != d {
        return Err(Error::config(format!(
            "covariance is {}x{} but {d} coefficients were given",
            cov_sub.nrows(),
            cov_sub.ncols()
        )));
    }
    let gamma = DVector::from_column_slice(coef_sub);
    let chol = cov_sub.clone().cholesky().ok_or_else(|| {
        Error::numerical("covariance of the tested coefficients is singular")
    })?;
    let statistic = gamma.dot(&chol.solve(&gamma)).max(0.0);
    Ok(WaldResult {
        statistic,
        df: d,
        p_value: chi2_sf(statistic, d as f64),
        tested: (0..d).collect(),
    })
}

/// Wald test of the stacked coefficients at `indices`, extracting the
/// sub-vector and covariance block from the full fit.
pub fn wald_test_at(
    theta: &[f64],
    cov: &DMatrix<f64>,
    indices: &[usize],
) -> Result<WaldResult> {
    let coef: Vec<f64> = indices.iter().map(|&i| theta[i]).collect();
    let d = indices.len();
    let mut sub = DMatrix::zeros(d, d);
    for (a, &i) in indices.iter().enumerate() {
        for (b, &j) in indices.iter().enumerate() {
            sub[(a, b)] = cov[(i, j)];
        }
    }
    let mut res = wald_test(&coef, &sub)?;
    res.tested = indices.to_vec();
    Ok(res)
}

/// z-test of a single coefficient.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientTest {
    pub label: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

/// One covariate of a missingness equation: its block Wald test, the
/// per-coefficient z-tests, and whether it counts toward the verdict.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CovariateTest {
    pub name: String,
    pub predictor: Predictor,
    /// A significant covariate flips the verdict to non-ignorable only when
    /// its own values are incomplete (a missing-prone SNP, the phenotype when
    /// phenotype missingness is modeled) or it is a missingness indicator.
    /// Fully observed covariates describe an ignorable mechanism.
    pub counts_toward_verdict: bool,
    pub wald: WaldResult,
    pub coefficients: Vec<CoefficientTest>,
}

/// Mechanism tests of one missingness equation.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MechanismRow {
    pub equation: EqId,
    /// Display name of the missingness indicator, e.g. "r_snp_41".
    pub indicator: String,
    /// Joint test of every non-intercept coefficient; absent for an
    /// intercept-only equation.
    pub joint: Option<WaldResult>,
    pub covariates: Vec<CovariateTest>,
    pub non_ignorable: bool,
}

/// Missingness-mechanism report over every missingness equation of a fit.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct MechanismReport {
    pub alpha: f64,
    pub rows: Vec<MechanismRow>,
}

fn predictor_name(pred: Predictor, snp_names: &[String], x_cols: &[usize]) -> String {
    match pred {
        Predictor::Snp(k) => snp_names[k].clone(),
        Predictor::Pheno => "phenotype".to_string(),
        Predictor::MissInd(k) => format!("r_{}", snp_names[x_cols[k]]),
    }
}

fn coefficient_labels(pred: Predictor, name: &str) -> Vec<String> {
    match pred {
        Predictor::Snp(_) => vec![format!("{name}[1]"), format!("{name}[2]")],
        _ => vec![name.to_string()],
    }
}

fn z_test(label: String, estimate: f64, var: f64) -> CoefficientTest {
    let se = var.max(0.0).sqrt();
    let z = estimate / se;
    CoefficientTest {
        label,
        estimate,
        se,
        z,
        p_value: 2.0 * (1.0 - normal_cdf(z.abs())),
    }
}

fn mechanism_row(
    sys: &ModelSystem,
    cov: &DMatrix<f64>,
    alpha: f64,
    snp_names: &[String],
    eq: EqId,
    range: std::ops::Range<usize>,
    indicator: String,
) -> Result<MechanismRow> {
    let s = &sys.structure;
    let preds = s.predictors(eq);
    let mut covariates = Vec::with_capacity(preds.len());
    let mut at = range.start + 1;
    for &pred in preds {
        let w = pred.width();
        let idx: Vec<usize> = (at..at + w).collect();
        at += w;
        let name = predictor_name(pred, snp_names, &s.x_cols);
        let wald = wald_test_at(&sys.theta, cov, &idx)?;
        let coefficients = coefficient_labels(pred, &name)
            .into_iter()
            .zip(idx.iter())
            .map(|(label, &i)| z_test(label, sys.theta[i], cov[(i, i)]))
            .collect();
        let counts_toward_verdict = match pred {
            Predictor::Snp(k) => s.x_cols.contains(&k),
            Predictor::Pheno => s.pheno_missing,
            Predictor::MissInd(_) => true,
        };
        covariates.push(CovariateTest {
            name,
            predictor: pred,
            counts_toward_verdict,
            wald,
            coefficients,
        });
    }
    debug_assert_eq!(at, range.end);
    let slopes: Vec<usize> = (range.start + 1..range.end).collect();
    let joint = if slopes.is_empty() {
        None
    } else {
        Some(wald_test_at(&sys.theta, cov, &slopes)?)
    };
    let non_ignorable = covariates
        .iter()
        .any(|c| c.counts_toward_verdict && c.wald.p_value < alpha);
    Ok(MechanismRow {
        equation: eq,
        indicator,
        joint,
        covariates,
        non_ignorable,
    })
}

/// Builds the missingness-mechanism report from a fitted system and its
/// coefficient covariance. `snp_names` must cover all m SNP columns. Fails
/// only when a tested covariance block is not positive definite, which a
/// Louis covariance rules out.
pub fn mechanism_report(
    sys: &ModelSystem,
    cov: &DMatrix<f64>,
    alpha: f64,
    snp_names: &[String],
) -> Result<MechanismReport> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::config("alpha must lie strictly between 0 and 1"));
    }
    let s = &sys.structure;
    assert_eq!(snp_names.len(), s.m, "one name per SNP column");
    let mut rows = Vec::with_capacity(s.x_cols.len() + s.pheno_missing as usize);
    for j in 0..s.x_cols.len() {
        rows.push(mechanism_row(
            sys,
            cov,
            alpha,
            snp_names,
            EqId::Miss(j),
            sys.layout.eq8[j].clone(),
            format!("r_{}", snp_names[s.x_cols[j]]),
        )?);
    }
    if s.pheno_missing {
        let range = sys.layout.eq_ry.clone().expect("layout matches structure");
        rows.push(mechanism_row(
            sys,
            cov,
            alpha,
            snp_names,
            EqId::MissY,
            range,
            "r_phenotype".to_string(),
        )?);
    }
    Ok(MechanismReport { alpha, rows })
}

fn fmt_p(p: f64) -> String {
    if p >= 1e-3 {
        format!("{p:.4}")
    } else {
        format!("{p:.3e}")
    }
}

impl MechanismReport {
    /// CSV table, one joint row plus one row per covariate for each
    /// missingness indicator.
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record([
            "indicator",
            "term",
            "statistic",
            "df",
            "p_value",
            "signif",
            "counts_toward_verdict",
            "verdict",
        ])
        .expect("in-memory csv");
        for row in &self.rows {
            let verdict = if row.non_ignorable {
                "non-ignorable"
            } else {
                "ignorable"
            };
            match &row.joint {
                Some(j) => w.write_record([
                    row.indicator.as_str(),
                    "(all slopes)",
                    &format!("{}", j.statistic),
                    &format!("{}", j.df),
                    &format!("{}", j.p_value),
                    stars(j.p_value),
                    "",
                    verdict,
                ]),
                None => w.write_record([
                    row.indicator.as_str(),
                    "(intercept only)",
                    "",
                    "",
                    "",
                    "",
                    "",
                    verdict,
                ]),
            }
            .expect("in-memory csv");
            for c in &row.covariates {
                w.write_record([
                    row.indicator.as_str(),
                    c.name.as_str(),
                    &format!("{}", c.wald.statistic),
                    &format!("{}", c.wald.df),
                    &format!("{}", c.wald.p_value),
                    stars(c.wald.p_value),
                    if c.counts_toward_verdict { "yes" } else { "no" },
                    "",
                ])
                .expect("in-memory csv");
            }
        }
        String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
    }

    /// Aligned plain-text rendering of the same table.
    pub fn to_text(&self) -> String {
        let header = ["indicator", "term", "stat", "df", "p", "signif", "verdict"];
        let mut body: Vec<[String; 7]> = Vec::new();
        for row in &self.rows {
            let verdict = if row.non_ignorable {
                "non-ignorable"
            } else {
                "ignorable"
            };
            match &row.joint {
                Some(j) => body.push([
                    row.indicator.clone(),
                    "(all slopes)".into(),
                    format!("{:.4}", j.statistic),
                    j.df.to_string(),
                    fmt_p(j.p_value),
                    stars(j.p_value).into(),
                    verdict.into(),
                ]),
                None => body.push([
                    row.indicator.clone(),
                    "(intercept only)".into(),
                    String::new(),
                    String::new(),
                    String::new(),
                    String::new(),
                    verdict.into(),
                ]),
            }
            for c in &row.covariates {
                body.push([
                    String::new(),
                    c.name.clone(),
                    format!("{:.4}", c.wald.statistic),
                    c.wald.df.to_string(),
                    fmt_p(c.wald.p_value),
                    stars(c.wald.p_value).into(),
                    String::new(),
                ]);
            }
        }
        let mut widths = header.map(str::len);
        for row in &body {
            for (w, cell) in widths.iter_mut().zip(row.iter()) {
                *w = (*w).max(cell.len());
            }
        }
        let mut out = format!(
            "missingness mechanism Wald tests (alpha = {})\n\n",
            self.alpha
        );
        let fmt_row = |cells: &[String; 7]| {
            let mut line = String::new();
            for (cell, w) in cells.iter().zip(widths.iter()) {
                line.push_str(&format!("{cell:<w$}  "));
            }
            line.truncate(line.trim_end().len());
            line.push('\n');
            line
        };
        out.push_str(&fmt_row(&header.map(String::from)));
        for row in &body {
            out.push_str(&fmt_row(row));
        }
        out
    }
}

/// One line of the full coefficient table.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct CoefficientRow {
    pub equation: String,
    pub term: String,
    pub estimate: f64,
    pub se: f64,
    pub z: f64,
    pub p_value: f64,
}

/// Per-coefficient estimates, standard errors, and z-tests for every
/// equation of a fitted system, in stacked parameter order.
pub fn coefficient_table(
    sys: &ModelSystem,
    cov: &DMatrix<f64>,
    snp_names: &[String],
) -> Vec<CoefficientRow> {
    let s = &sys.structure;
    assert_eq!(snp_names.len(), s.m, "one name per SNP column");
    let mut rows = Vec::with_capacity(sys.layout.total);
    let mut push_block =
        |equation: String, preds: &[Predictor], range: std::ops::Range<usize>| {
            let mut labels = vec!["(intercept)".to_string()];
            for &pred in preds {
                let name = predictor_name(pred, snp_names, &s.x_cols);
                labels.extend(coefficient_labels(pred, &name));
            }
            debug_assert_eq!(labels.len(), range.len());
            for (label, i) in labels.into_iter().zip(range) {
                let t = z_test(label, sys.theta[i], cov[(i, i)]);
                rows.push(CoefficientRow {
                    equation: equation.clone(),
                    term: t.label,
                    estimate: t.estimate,
                    se: t.se,
                    z: t.z,
                    p_value: t.p_value,
                });
            }
        };
    push_block("phenotype".to_string(), &s.eq1, sys.layout.eq1.clone());
    for j in 0..s.x_cols.len() {
        let name = &snp_names[s.x_cols[j]];
        let (r1, r2) = sys.layout.eq4[j].clone();
        push_block(format!("genotype {name} level 1"), &s.eq4[j], r1);
        push_block(format!("genotype {name} level 2"), &s.eq4[j], r2);
    }
    for j in 0..s.x_cols.len() {
        let name = &snp_names[s.x_cols[j]];
        push_block(
            format!("missingness r_{name}"),
            &s.eq8[j],
            sys.layout.eq8[j].clone(),
        );
    }
    if let Some(range) = sys.layout.eq_ry.clone() {
        push_block(
            "missingness r_phenotype".to_string(),
            s.eq_ry.as_deref().expect("layout matches structure"),
            range,
        );
    }
    rows
}

/// CSV rendering of a coefficient table.
pub fn coefficient_table_csv(rows: &[CoefficientRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["equation", "term", "estimate", "se", "z", "p_value", "signif"])
        .expect("in-memory csv");
    for r in rows {
        w.write_record([
            r.equation.as_str(),
            r.term.as_str(),
            &format!("{}", r.estimate),
            &format!("{}", r.se),
            &format!("{}", r.z),
            &format!("{}", r.p_value),
            stars(r.p_value),
        ])
        .expect("in-memory csv");
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

/// Phenotype-association summary of one SNP in the phenotype equation: both
/// dummy-level estimates with their z tests, plus the 2-df joint Wald test of
/// the pair.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AssociationRow {
    pub snp: String,
    /// Original SNP column index.
    pub column: usize,
    pub level1: CoefficientTest,
    pub level2: CoefficientTest,
    pub joint: WaldResult,
}

/// Builds the association table: one row per SNP retained in the phenotype
/// equation, in equation order. Empty when the equation is intercept-only.
pub fn association_table(
    sys: &ModelSystem,
    cov: &DMatrix<f64>,
    snp_names: &[String],
) -> Result<Vec<AssociationRow>> {
    let s = &sys.structure;
    assert_eq!(snp_names.len(), s.m, "one name per SNP column");
    let theta: Vec<f64> = sys.theta.iter().cloned().collect();
    let base = sys.layout.eq1.start;
    let mut rows = Vec::with_capacity(s.eq1.len());
    for (i, &pred) in s.eq1.iter().enumerate() {
        let Predictor::Snp(k) = pred else {
            return Err(Error::config(
                "phenotype equation holds a non-genotype predictor",
            ));
        };
        // intercept first, then one dummy pair per SNP in equation order
        let i1 = base + 1 + 2 * i;
        let i2 = i1 + 1;
        let joint = wald_test_at(&theta, cov, &[i1, i2])?;
        rows.push(AssociationRow {
            snp: snp_names[k].clone(),
            column: k,
            level1: z_test(
                format!("{}[1]", snp_names[k]),
                theta[i1],
                cov[(i1, i1)],
            ),
            level2: z_test(
                format!("{}[2]", snp_names[k]),
                theta[i2],
                cov[(i2, i2)],
            ),
            joint,
        });
    }
    Ok(rows)
}

/// CSV rendering of an association table: one line per dummy level with the
/// joint Wald columns repeated on both.
pub fn association_csv(rows: &[AssociationRow]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "snp",
        "level",
        "estimate",
        "se",
        "z",
        "p_value",
        "wald_statistic",
        "wald_df",
        "wald_p",
        "wald_signif",
    ])
    .expect("in-memory csv");
    for r in rows {
        for (level, t) in [(1u8, &r.level1), (2u8, &r.level2)] {
            w.write_record([
                r.snp.as_str(),
                &level.to_string(),
                &format!("{}", t.estimate),
                &format!("{}", t.se),
                &format!("{}", t.z),
                &format!("{}", t.p_value),
                &format!("{}", r.joint.statistic),
                &r.joint.df.to_string(),
                &format!("{}", r.joint.p_value),
                stars(r.joint.p_value),
            ])
            .expect("in-memory csv");
        }
    }
    String::from_utf8(w.into_inner().expect("in-memory csv")).expect("utf8 csv")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mirem::ModelStructure;
    use crate::seed::{derive_rng, Tag};
    use rand::Rng;

    /// Chi-square survival by composite Simpson on the chi density (the
    /// sqrt-substituted chi-square density, smooth at zero for every df).
    fn chi2_sf_quadrature(x: f64, df: u32) -> f64 {
        let a = df as f64 / 2.0;
        // Gamma(df/2) by upward recursion from Gamma(1) or Gamma(1/2)
        let mut g = if df % 2 == 0 {
            1.0
        } else {
            std::f64::consts::PI.sqrt()
        };
        let mut t = if df % 2 == 0 { 1.0 } else { 0.5 };
        while t < a - 0.25 {
            g *= t;
            t += 1.0;
        }
        let norm = 2.0 / (2f64.powf(a) * g);
        let f = |t: f64| norm * t.powi(df as i32 - 1) * (-0.5 * t * t).exp();
        let b = x.sqrt();
        let n = 8000;
        let h = b / n as f64;
        let mut s = f(0.0) + f(b);
        for i in 1..n {
            s += if i % 2 == 1 { 4.0 } else { 2.0 } * f(i as f64 * h);
        }
        1.0 - s * h / 3.0
    }

    #[test]
    fn chi2_survival_matches_integrated_density() {
        for &df in &[1u32, 2, 3, 4, 7, 12, 21, 30] {
            for &x in &[0.01, 0.1, 0.5, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 100.0] {
                let got = chi2_sf(x, df as f64);
                let want = chi2_sf_quadrature(x, df);
                assert!(
                    (got - want).abs() < 1e-10,
                    "df {df}, x {x}: {got} vs {want}"
                );
            }
        }
    }

    #[test]
    fn zero_subvector_gives_unit_p() {
        let cov = DMatrix::identity(3, 3);
        let res = wald_test(&[0.0, 0.0, 0.0], &cov).unwrap();
        assert_eq!(res.statistic, 0.0);
        assert_eq!(res.df, 3);
        assert_eq!(res.p_value, 1.0);
        assert_eq!(res.tested, vec![0, 1, 2]);
    }

    #[test]
    fn scalar_case_matches_quadrature_oracle() {
        let cov = DMatrix::identity(1, 1);
        let res = wald_test(&[2.0], &cov).unwrap();
        assert_eq!(res.statistic, 4.0);
        assert_eq!(res.df, 1);
        assert!((res.p_value - chi2_sf_quadrature(4.0, 1)).abs() < 1e-8);
        assert!((res.p_value - 0.0455).abs() < 1e-4);
    }

    #[test]
    fn statistic_is_invariant_under_reparameterization() {
        let mut rng = derive_rng(3, &[Tag::Synthetic as u64]);
        for rep in 0..50 {
            let d = 1 + rep % 6;
            let a = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() * 2.0 - 1.0);
            let cov = &a.transpose() * &a + DMatrix::identity(d, d) * 0.5;
            let gamma: Vec<f64> = (0..d).map(|_| rng.gen::<f64>() * 2.0 - 1.0).collect();
            // T = I + small perturbation stays invertible and well conditioned
            let t = DMatrix::identity(d, d)
                + DMatrix::from_fn(d, d, |_, _| 0.15 * (rng.gen::<f64>() - 0.5));
            let gv = DVector::from_column_slice(&gamma);
            let tg = &t * &gv;
            let tcov = &t * &cov * t.transpose();
            let w0 = wald_test(&gamma, &cov).unwrap().statistic;
            let w1 = wald_test(tg.as_slice(), &tcov).unwrap().statistic;
            assert!((w0 - w1).abs() < 1e-10, "rep {rep}: {w0} vs {w1}");
        }
    }

    #[test]
    fn p_value_decreases_in_statistic_at_fixed_df() {
        for d in 1..=6usize {
            let cov = DMatrix::identity(1, 1);
            let mut last = 1.0 + 1e-12;
            for k in 0..40 {
                let w = 0.25 * (k as f64 + 1.0);
                // scalar scaling trick keeps df=1; use chi2_sf directly for d>1
                let p = if d == 1 {
                    wald_test(&[w.sqrt()], &cov).unwrap().p_value
                } else {
                    chi2_sf(w, d as f64)
                };
                assert!(p < last, "df {d}, W {w}");
                last = p;
            }
        }
    }

    #[test]
    fn singular_covariance_is_an_error() {
        let cov = DMatrix::from_row_slice(2, 2, &[1.0, 1.0, 1.0, 1.0]);
        let err = wald_test(&[0.5, -0.5], &cov).unwrap_err();
        assert!(err.to_string().contains("singular"), "{err}");
        // dimension mismatch is caught before factorization
        assert!(wald_test(&[1.0], &DMatrix::identity(2, 2)).is_err());
        assert!(wald_test(&[], &DMatrix::identity(0, 0)).is_err());
    }

    fn names(m: usize) -> Vec<String> {
        (1..=m).map(|k| format!("snp_{k}")).collect()
    }

    /// m=3 SNPs, column 1 missing-prone; optionally phenotype missingness.
    fn toy_system(pheno_missing: bool, second_x: bool) -> ModelSystem {
        let x_cols = if second_x { vec![1, 2] } else { vec![1] };
        let z_cols: Vec<usize> = (0..3).filter(|c| !x_cols.contains(c)).collect();
        let p = x_cols.len();
        let eq4 = (0..p)
            .map(|j| {
                let mut preds: Vec<Predictor> =
                    z_cols.iter().map(|&c| Predictor::Snp(c)).collect();
                preds.extend(x_cols[..j].iter().map(|&c| Predictor::Snp(c)));
                preds.sort_by_key(|pr| match pr {
                    Predictor::Snp(k) => *k,
                    _ => usize::MAX,
                });
                preds
            })
            .collect();
        let eq8 = (0..p)
            .map(|j| {
                (0..3)
                    .map(Predictor::Snp)
                    .chain(std::iter::once(Predictor::Pheno))
                    .chain((0..j).map(Predictor::MissInd))
                    .collect()
            })
            .collect();
        let eq_ry = pheno_missing.then(|| {
            (0..3)
                .map(Predictor::Snp)
                .chain(std::iter::once(Predictor::Pheno))
                .chain((0..p).map(Predictor::MissInd))
                .collect()
        });
        let structure = ModelStructure {
            m: 3,
            z_cols,
            x_cols,
            pheno_missing,
            eq1: (0..3).map(Predictor::Snp).collect(),
            eq4,
            eq8,
            eq_ry,
        };
        ModelSystem::zeroed(structure).unwrap()
    }

    #[test]
    fn zero_slopes_report_is_ignorable_everywhere() {
        let sys = toy_system(true, true);
        let cov = DMatrix::identity(sys.layout.total, sys.layout.total) * 0.25;
        let rep = mechanism_report(&sys, &cov, 0.05, &names(3)).unwrap();
        assert_eq!(rep.rows.len(), 3); // two SNP indicators + phenotype
        for row in &rep.rows {
            assert!(!row.non_ignorable);
            assert_eq!(row.joint.as_ref().unwrap().p_value, 1.0);
            for c in &row.covariates {
                assert_eq!(c.wald.p_value, 1.0);
                for t in &c.coefficients {
                    assert_eq!(t.estimate, 0.0);
                    assert_eq!(t.se, 0.5);
                }
            }
        }
        assert_eq!(rep.rows[0].indicator, "r_snp_2");
        assert_eq!(rep.rows[2].indicator, "r_phenotype");
    }

    #[test]
    fn verdict_ignores_significant_fully_observed_covariates() {
        let mut sys = toy_system(false, false);
        let cov = DMatrix::identity(sys.layout.total, sys.layout.total) * 0.04;
        // eq8[0] predictors: snp_1 (observed), snp_2 (missing-prone),
        // snp_3 (observed), phenotype (observed); intercept at range start
        let start = sys.layout.eq8[0].start;
        // a strong fully observed SNP effect does not flip the verdict
        sys.theta[start + 1] = 2.0;
        let rep = mechanism_report(&sys, &cov, 0.05, &names(3)).unwrap();
        let row = &rep.rows[0];
        assert!(row.covariates[0].wald.p_value < 1e-6);
        assert!(!row.covariates[0].counts_toward_verdict);
        assert!(!row.non_ignorable);
        assert!(row.joint.as_ref().unwrap().p_value < 1e-6, "joint still fires");

        // ... and a strong phenotype effect does not either (y observed)
        sys.theta[start + 1] = 0.0;
        sys.theta[start + 7] = 2.0;
        let rep = mechanism_report(&sys, &cov, 0.05, &names(3)).unwrap();
        assert!(!rep.rows[0].non_ignorable);

        // the missing-valued SNP itself flips it
        sys.theta[start + 7] = 0.0;
        sys.theta[start + 3] = 2.0;
        let rep = mechanism_report(&sys, &cov, 0.05, &names(3)).unwrap();
        assert!(rep.rows[0].covariates[1].counts_toward_verdict);
        assert!(rep.rows[0].non_ignorable);
    }

    #[test]
    fn indicator_and_phenotype_covariates_can_flip_verdict() {
        // with two missing-prone SNPs, eq8[1] contains r of the first
        let mut sys = toy_system(false, true);
        let cov = DMatrix::identity(sys.layout.total, sys.layout.total) * 0.04;
        let r = sys.layout.eq8[1].clone();
        sys.theta[r.end - 1] = 2.0; // MissInd(0), last predictor
        let rep = mechanism_report(&sys, &cov, 0.05, &names(3)).unwrap();
        let row = &rep.rows[1];
        assert_eq!(row.covariates.last().unwrap().name, "r_snp_2");
        assert!(row.covariates.last().unwrap().counts_toward_verdict);
        assert!(row.non_ignorable);

        // phenotype becomes a trigger once its own missingness is modeled
        let mut sys = toy_system(true, false);
        let cov = DMatrix::identity(sys.layout.total, sys.layout.total) * 0.04;
        let start = sys.layout.eq8[0].start;
        sys.theta[start + 7] = 2.0; // phenotype covariate in the SNP equation
        let rep = mechanism_report(&sys, &cov, 0.05, &names(3)).unwrap();
        assert!(rep.rows[0].non_ignorable);
    }

    #[test]
    fn intercept_only_equation_reports_no_joint_test() {
        let mut sys = toy_system(false, false);
        sys.structure.eq8[0].clear();
        let sys = ModelSystem::zeroed(sys.structure).unwrap();
        let cov = DMatrix::identity(sys.layout.total, sys.layout.total);
        let rep = mechanism_report(&sys, &cov, 0.05, &names(3)).unwrap();
        assert!(rep.rows[0].joint.is_none());
        assert!(rep.rows[0].covariates.is_empty());
        assert!(!rep.rows[0].non_ignorable);
        let csv = rep.to_csv();
        assert!(csv.contains("(intercept only)"), "{csv}");
        assert!(csv.contains("ignorable"), "{csv}");
    }

    #[test]
    fn report_tables_render_every_term() {
        let mut sys = toy_system(true, true);
        let mut rng = derive_rng(9, &[Tag::Synthetic as u64, 4]);
        for v in sys.theta.iter_mut() {
            *v = rng.gen::<f64>() - 0.5;
        }
        let d = sys.layout.total;
        let a = DMatrix::from_fn(d, d, |_, _| rng.gen::<f64>() * 0.2 - 0.1);
        let cov = &a.transpose() * &a + DMatrix::identity(d, d) * 0.3;
        let rep = mechanism_report(&sys, &cov, 0.05, &names(3)).unwrap();
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.trim_end().lines().collect();
        let n_cov: usize = rep.rows.iter().map(|r| r.covariates.len()).sum();
        assert_eq!(lines.len(), 1 + rep.rows.len() + n_cov);
        assert!(lines[0].starts_with("indicator,term,"));
        let text = rep.to_text();
        assert!(text.contains("r_snp_2") && text.contains("(all slopes)"));

        let table = coefficient_table(&sys, &cov, &names(3));
        assert_eq!(table.len(), d);
        for row in &table {
            assert!(row.se > 0.0);
            let z = row.estimate / row.se;
            assert!((row.z - z).abs() < 1e-14);
            let p = 2.0 * (1.0 - normal_cdf(z.abs()));
            assert!((row.p_value - p).abs() < 1e-14);
            // a z-test and the 1-df chi-square Wald test agree
            assert!((row.p_value - chi2_sf(z * z, 1.0)).abs() < 1e-12);
        }
        let csv = coefficient_table_csv(&table);
        assert_eq!(csv.trim_end().lines().count(), 1 + d);
        assert!(csv.contains("genotype snp_2 level 1"));
        assert!(csv.contains("missingness r_phenotype"));
    }

    #[test]
    fn significance_stars_follow_thresholds() {
        assert_eq!(stars(0.0005), "***");
        assert_eq!(stars(0.005), "**");
        assert_eq!(stars(0.03), "*");
        assert_eq!(stars(0.07), ".");
        assert_eq!(stars(0.2), "");
        assert_eq!(stars(0.05), "."); // boundary goes to the weaker marker
    }

    #[test]
    fn association_table_pairs_z_tests_with_joint_wald() {
        let mut sys = toy_system(false, false);
        let base = sys.layout.eq1.start;
        for (off, v) in [(1usize, 0.8), (2, -0.3), (3, 0.0), (4, 1.1), (5, -0.6), (6, 0.25)] {
            sys.theta[base + off] = v;
        }
        // correlate the first dummy pair so the joint test is not a sum of
        // the two z tests
        let d = sys.layout.total;
        let mut cov = DMatrix::identity(d, d) * 0.09;
        cov[(base + 1, base + 2)] = 0.03;
        cov[(base + 2, base + 1)] = 0.03;

        let rows = association_table(&sys, &cov, &names(3)).unwrap();
        assert_eq!(rows.len(), 3);
        assert_eq!(rows[0].snp, "snp_1");
        assert_eq!(rows[0].column, 0);

        let table = coefficient_table(&sys, &cov, &names(3));
        let pheno_rows: Vec<&CoefficientRow> = table
            .iter()
            .filter(|r| r.equation == "phenotype")
            .collect();
        let theta: Vec<f64> = sys.theta.iter().cloned().collect();
        for (i, row) in rows.iter().enumerate() {
            // pheno_rows[0] is the intercept
            assert_eq!(row.level1.estimate, pheno_rows[1 + 2 * i].estimate);
            assert!((row.level1.p_value - pheno_rows[1 + 2 * i].p_value).abs() < 1e-15);
            assert_eq!(row.level2.estimate, pheno_rows[2 + 2 * i].estimate);
            let explicit =
                wald_test_at(&theta, &cov, &[base + 1 + 2 * i, base + 2 + 2 * i]).unwrap();
            assert_eq!(row.joint.statistic, explicit.statistic);
            assert_eq!(row.joint.df, 2);
        }

        // pencil value for the correlated pair: gamma = (0.8, -0.3) against
        // S = [[0.09, 0.03], [0.03, 0.09]] gives
        // W = (0.09*0.64 + 0.09*0.09 + 2*0.03*0.24) / det, det = 0.0072
        let w = (0.09 * 0.64 + 0.09 * 0.09 + 0.06 * 0.24) / 0.0072;
        assert!((rows[0].joint.statistic - w).abs() < 1e-10);

        let csv = association_csv(&rows);
        assert_eq!(csv.trim_end().lines().count(), 1 + 6);
        assert!(csv.starts_with("snp,level,"));

        // an intercept-only phenotype equation yields an empty table
        let mut bare = toy_system(false, false);
        bare.structure.eq1.clear();
        let bare = ModelSystem::zeroed(bare.structure).unwrap();
        let d = bare.layout.total;
        let cov = DMatrix::identity(d, d);
        assert!(association_table(&bare, &cov, &names(3)).unwrap().is_empty());
    }
}
