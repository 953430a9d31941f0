//! Model structure for the three-equation system: which predictors are
//! active in each equation, and how the stacked parameter vector is laid out.
//!
//! The system couples a binary phenotype equation, one sequential trinomial
//! genotype equation per missing-prone SNP, and one binary missingness
//! equation per missing-prone SNP (plus an optional equation for phenotype
//! missingness). Genotype equations may only condition on fully observed
//! SNPs and on missing-prone SNPs that precede them in input order;
//! missingness equations may additionally condition on the phenotype and on
//! earlier missingness indicators.

use crate::data::MissingMask;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};
use std::ops::Range;

/// A covariate available to an equation's design.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Predictor {
    /// Original SNP column index; contributes the two genotype dummies
    /// (value 1 -> (1,0), value 2 -> (0,1), baseline 0 -> (0,0)).
    Snp(usize),
    /// The binary phenotype as a covariate (missingness equations only).
    Pheno,
    /// The missingness indicator of the k-th missing-prone column.
    MissInd(usize),
}

impl Predictor {
    /// Number of design columns the predictor contributes.
    pub fn width(&self) -> usize {
        match self {
            Predictor::Snp(_) => 2,
            Predictor::Pheno | Predictor::MissInd(_) => 1,
        }
    }
}

/// Identifies one equation of the system.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum EqId {
    /// Binary phenotype model.
    Pheno,
    /// Trinomial genotype model of the j-th missing-prone SNP.
    Geno(usize),
    /// Binary missingness model of the j-th missing-prone SNP.
    Miss(usize),
    /// Binary phenotype-missingness model.
    MissY,
}

impl EqId {
    pub fn label(&self) -> String {
        match self {
            EqId::Pheno => "phenotype equation".into(),
            EqId::Geno(j) => format!("genotype equation {j}"),
            EqId::Miss(j) => format!("missingness equation {j}"),
            EqId::MissY => "phenotype-missingness equation".into(),
        }
    }
}

/// Active predictor sets per equation. Selection shrinks these; the
/// saturated structure activates every predictor an equation is allowed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelStructure {
    /// Total SNP count.
    pub m: usize,
    /// Fully observed SNP columns, input order.
    pub z_cols: Vec<usize>,
    /// Missing-prone SNP columns, input order.
    pub x_cols: Vec<usize>,
    /// Model phenotype missingness with its own equation.
    pub pheno_missing: bool,
    /// Phenotype-equation predictors (SNPs only).
    pub eq1: Vec<Predictor>,
    /// Genotype-equation predictors, one set per missing-prone SNP.
    pub eq4: Vec<Vec<Predictor>>,
    /// Missingness-equation predictors, one set per missing-prone SNP.
    pub eq8: Vec<Vec<Predictor>>,
    /// Phenotype-missingness predictors; present iff `pheno_missing`.
    pub eq_ry: Option<Vec<Predictor>>,
}

impl ModelStructure {
    /// Structure with every allowed predictor active. SNP predictors are
    /// listed in input column order; the phenotype and the missingness
    /// indicators follow the SNP block.
    pub fn saturated(m: usize, mask: &MissingMask, pheno_missing: bool) -> Self {
        let p = mask.x_cols.len();
        let x_rank: std::collections::HashMap<usize, usize> = mask
            .x_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| (c, j))
            .collect();

        let eq1: Vec<Predictor> = (0..m).map(Predictor::Snp).collect();
        let eq4: Vec<Vec<Predictor>> = (0..p)
            .map(|j| {
                (0..m)
                    .filter(|c| match x_rank.get(c) {
                        None => true,         // fully observed
                        Some(&jj) => jj < j,  // preceding missing-prone SNP
                    })
                    .map(Predictor::Snp)
                    .collect()
            })
            .collect();
        let eq8: Vec<Vec<Predictor>> = (0..p)
            .map(|j| {
                (0..m)
                    .map(Predictor::Snp)
                    .chain(std::iter::once(Predictor::Pheno))
                    .chain((0..j).map(Predictor::MissInd))
                    .collect()
            })
            .collect();
        let eq_ry = pheno_missing.then(|| {
            (0..m)
                .map(Predictor::Snp)
                .chain(std::iter::once(Predictor::Pheno))
                .chain((0..p).map(Predictor::MissInd))
                .collect()
        });

        ModelStructure {
            m,
            z_cols: mask.z_cols.clone(),
            x_cols: mask.x_cols.clone(),
            pheno_missing,
            eq1,
            eq4,
            eq8,
            eq_ry,
        }
    }

    pub fn p(&self) -> usize {
        self.x_cols.len()
    }

    /// Checks the sequential-factorization constraints: every referenced
    /// column exists, genotype equations only condition on fully observed or
    /// preceding missing-prone SNPs, missingness equations only on earlier
    /// indicators, and the phenotype equation on SNPs alone.
    pub fn validate(&self) -> Result<()> {
        let p = self.p();
        if self.eq4.len() != p || self.eq8.len() != p {
            return Err(Error::config(
                "genotype/missingness equation counts must match the number \
                 of missing-prone columns",
            ));
        }
        if self.pheno_missing != self.eq_ry.is_some() {
            return Err(Error::config(
                "phenotype-missingness equation present iff modeled",
            ));
        }
        let x_rank: std::collections::HashMap<usize, usize> = self
            .x_cols
            .iter()
            .enumerate()
            .map(|(j, &c)| (c, j))
            .collect();
        let check_snp = |c: usize| -> Result<()> {
            if c >= self.m {
                return Err(Error::config(format!("SNP index {c} out of range")));
            }
            Ok(())
        };
        let no_dups = |preds: &[Predictor], what: &str| -> Result<()> {
            let mut seen = std::collections::HashSet::new();
            for pr in preds {
                if !seen.insert(*pr) {
                    return Err(Error::config(format!("duplicate predictor in {what}")));
                }
            }
            Ok(())
        };

        no_dups(&self.eq1, "phenotype equation")?;
        for pr in &self.eq1 {
            match pr {
                Predictor::Snp(c) => check_snp(*c)?,
                _ => {
                    return Err(Error::config(
                        "phenotype equation admits SNP predictors only",
                    ))
                }
            }
        }
        for (j, preds) in self.eq4.iter().enumerate() {
            no_dups(preds, &EqId::Geno(j).label())?;
            for pr in preds {
                match pr {
                    Predictor::Snp(c) => {
                        check_snp(*c)?;
                        if let Some(&jj) = x_rank.get(c) {
                            if jj >= j {
                                return Err(Error::config(format!(
                                    "genotype equation {j} may only condition on \
                                     preceding missing-prone SNPs (got rank {jj})"
                                )));
                            }
                        }
                    }
                    _ => {
                        return Err(Error::config(
                            "genotype equations admit SNP predictors only",
                        ))
                    }
                }
            }
        }
        for (j, preds) in self.eq8.iter().enumerate() {
            no_dups(preds, &EqId::Miss(j).label())?;
            for pr in preds {
                match pr {
                    Predictor::Snp(c) => check_snp(*c)?,
                    Predictor::Pheno => {}
                    Predictor::MissInd(k) => {
                        if *k >= j {
                            return Err(Error::config(format!(
                                "missingness equation {j} may only condition on \
                                 earlier indicators (got {k})"
                            )));
                        }
                    }
                }
            }
        }
        if let Some(preds) = &self.eq_ry {
            no_dups(preds, "phenotype-missingness equation")?;
            for pr in preds {
                match pr {
                    Predictor::Snp(c) => check_snp(*c)?,
                    Predictor::Pheno => {}
                    Predictor::MissInd(k) => {
                        if *k >= p {
                            return Err(Error::config(format!(
                                "missingness indicator {k} out of range"
                            )));
                        }
                    }
                }
            }
        }
        Ok(())
    }

    /// Equations in canonical order: phenotype, genotype 0..p, missingness
    /// 0..p, then phenotype missingness when modeled.
    pub fn equations(&self) -> Vec<EqId> {
        let p = self.p();
        let mut eqs = Vec::with_capacity(1 + 2 * p + 1);
        eqs.push(EqId::Pheno);
        eqs.extend((0..p).map(EqId::Geno));
        eqs.extend((0..p).map(EqId::Miss));
        if self.pheno_missing {
            eqs.push(EqId::MissY);
        }
        eqs
    }

    pub fn predictors(&self, eq: EqId) -> &[Predictor] {
        match eq {
            EqId::Pheno => &self.eq1,
            EqId::Geno(j) => &self.eq4[j],
            EqId::Miss(j) => &self.eq8[j],
            EqId::MissY => self.eq_ry.as_deref().expect("phenotype missingness modeled"),
        }
    }
}

/// Intercept-included design width for a predictor list.
pub fn design_width(preds: &[Predictor]) -> usize {
    1 + preds.iter().map(Predictor::width).sum::<usize>()
}

/// Coefficient ranges of each equation inside the stacked parameter vector.
/// Layout order matches `ModelStructure::equations`; each trinomial equation
/// occupies two adjacent equal-width blocks.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamLayout {
    pub eq1: Range<usize>,
    pub eq4: Vec<(Range<usize>, Range<usize>)>,
    pub eq8: Vec<Range<usize>>,
    pub eq_ry: Option<Range<usize>>,
    pub total: usize,
}

impl ParamLayout {
    pub fn from_structure(s: &ModelStructure) -> Self {
        let mut at = 0;
        let mut take = |w: usize| {
            let r = at..at + w;
            at += w;
            r
        };
        let eq1 = take(design_width(&s.eq1));
        let eq4 = s
            .eq4
            .iter()
            .map(|preds| {
                let w = design_width(preds);
                (take(w), take(w))
            })
            .collect();
        let eq8 = s.eq8.iter().map(|preds| take(design_width(preds))).collect();
        let eq_ry = s.eq_ry.as_ref().map(|preds| take(design_width(preds)));
        ParamLayout {
            eq1,
            eq4,
            eq8,
            eq_ry,
            total: at,
        }
    }
}

/// The full parameter state: structure, layout, and stacked coefficients.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct ModelSystem {
    pub structure: ModelStructure,
    pub layout: ParamLayout,
    pub theta: Vec<f64>,
}

impl ModelSystem {
    /// Validates the structure and allocates a zero parameter vector.
    pub fn zeroed(structure: ModelStructure) -> Result<Self> {
        structure.validate()?;
        let layout = ParamLayout::from_structure(&structure);
        let theta = vec![0.0; layout.total];
        Ok(ModelSystem {
            structure,
            layout,
            theta,
        })
    }

    /// Phenotype-equation coefficients.
    pub fn beta(&self) -> &[f64] {
        &self.theta[self.layout.eq1.clone()]
    }

    /// The two coefficient blocks of genotype equation j.
    pub fn alpha(&self, j: usize) -> (&[f64], &[f64]) {
        let (r1, r2) = &self.layout.eq4[j];
        (&self.theta[r1.clone()], &self.theta[r2.clone()])
    }

    /// Missingness-equation coefficients for the j-th missing-prone SNP.
    pub fn gamma(&self, j: usize) -> &[f64] {
        &self.theta[self.layout.eq8[j].clone()]
    }

    /// Phenotype-missingness coefficients when that equation is modeled.
    pub fn gamma_y(&self) -> Option<&[f64]> {
        self.layout
            .eq_ry
            .as_ref()
            .map(|r| &self.theta[r.clone()])
    }

    /// Stacked coefficient slice (both blocks) of one equation.
    pub fn equation_coefficients(&self, eq: EqId) -> Vec<f64> {
        match eq {
            EqId::Pheno => self.beta().to_vec(),
            EqId::Geno(j) => {
                let (a1, a2) = self.alpha(j);
                let mut v = a1.to_vec();
                v.extend_from_slice(a2);
                v
            }
            EqId::Miss(j) => self.gamma(j).to_vec(),
            EqId::MissY => self.gamma_y().expect("phenotype missingness modeled").to_vec(),
        }
    }

    /// Writes one equation's coefficients back into the stacked vector.
    pub fn set_equation_coefficients(&mut self, eq: EqId, coef: &[f64]) {
        match eq {
            EqId::Pheno => {
                let r = self.layout.eq1.clone();
                self.theta[r].copy_from_slice(coef);
            }
            EqId::Geno(j) => {
                let (r1, r2) = self.layout.eq4[j].clone();
                let w = r1.len();
                assert_eq!(coef.len(), 2 * w, "stacked trinomial blocks");
                self.theta[r1].copy_from_slice(&coef[..w]);
                self.theta[r2].copy_from_slice(&coef[w..]);
            }
            EqId::Miss(j) => {
                let r = self.layout.eq8[j].clone();
                self.theta[r].copy_from_slice(coef);
            }
            EqId::MissY => {
                let r = self.layout.eq_ry.clone().expect("phenotype missingness modeled");
                self.theta[r].copy_from_slice(coef);
            }
        }
    }

    /// Largest absolute coefficient difference against another system with
    /// the same layout.
    pub fn max_param_change(&self, other: &ModelSystem) -> f64 {
        assert_eq!(self.theta.len(), other.theta.len(), "layouts differ");
        self.theta
            .iter()
            .zip(other.theta.iter())
            .fold(0.0f64, |a, (&x, &y)| a.max((x - y).abs()))
    }
}
