//! Cached per-equation linear predictors for one individual's record, with
//! O(touched equations) updates when a single cell changes. Candidate
//! enumeration and the within-record sampler both mutate one cell at a time,
//! so this is what keeps the E-step linear in the number of candidates.

use super::structure::{EqId, ModelSystem, Predictor};
use crate::data::dummy_pair;
use crate::math::log1p_exp;

/// Where one SNP's dummy pair lands in the stacked parameter vector.
#[derive(Clone, Copy, Debug)]
enum SnpTouch {
    Pheno { c1: usize, c2: usize },
    /// Both coefficient blocks of a genotype equation share the design.
    Geno { j: usize, a1: (usize, usize), a2: (usize, usize) },
    Miss { j: usize, c1: usize, c2: usize },
    MissY { c1: usize, c2: usize },
}

/// Where the phenotype covariate lands.
#[derive(Clone, Copy, Debug)]
enum PhenoTouch {
    Miss { j: usize, c: usize },
    MissY { c: usize },
}

/// Precomputed coefficient addressing for a fixed `ModelSystem`.
pub struct SystemEvaluator<'a> {
    pub sys: &'a ModelSystem,
    /// Per SNP column: every equation whose design includes its dummies.
    snp_touch: Vec<Vec<SnpTouch>>,
    /// Every equation whose design includes the phenotype.
    pheno_touch: Vec<PhenoTouch>,
    /// Intercept-free design description per equation, used for from-scratch
    /// initialization: (equation, theta offsets of each predictor).
    init_plan: Vec<(EqId, Vec<(Predictor, usize)>)>,
}

/// Mutable record state: current completed values and cached linear
/// predictors for every equation.
#[derive(Clone, Debug)]
pub struct RecordState {
    pub geno: Vec<u8>,
    pub y: u8,
    /// Missingness indicators of the x columns (observed data).
    pub r: Vec<u8>,
    pub r_y: u8,
    pub eta_pheno: f64,
    pub eta_geno: Vec<(f64, f64)>,
    pub eta_miss: Vec<f64>,
    pub eta_miss_y: f64,
}

impl<'a> SystemEvaluator<'a> {
    pub fn new(sys: &'a ModelSystem) -> Self {
        let s = &sys.structure;
        let m = s.m;
        let mut snp_touch: Vec<Vec<SnpTouch>> = vec![Vec::new(); m];
        let mut pheno_touch = Vec::new();
        let mut init_plan = Vec::new();

        for eq in s.equations() {
            let preds = s.predictors(eq);
            let mut offsets = Vec::with_capacity(preds.len());
            // intercept occupies slot 0 of each block
            let mut at = 1usize;
            for pr in preds {
                offsets.push((*pr, at));
                at += pr.width();
            }
            let base = |sysm: &ModelSystem, eq: EqId| -> usize {
                match eq {
                    EqId::Pheno => sysm.layout.eq1.start,
                    EqId::Geno(j) => sysm.layout.eq4[j].0.start,
                    EqId::Miss(j) => sysm.layout.eq8[j].start,
                    EqId::MissY => sysm.layout.eq_ry.as_ref().unwrap().start,
                }
            };
            let b = base(sys, eq);
            for &(pr, off) in &offsets {
                match pr {
                    Predictor::Snp(k) => {
                        let touch = match eq {
                            EqId::Pheno => SnpTouch::Pheno { c1: b + off, c2: b + off + 1 },
                            EqId::Geno(j) => {
                                let b2 = sys.layout.eq4[j].1.start;
                                SnpTouch::Geno {
                                    j,
                                    a1: (b + off, b + off + 1),
                                    a2: (b2 + off, b2 + off + 1),
                                }
                            }
                            EqId::Miss(j) => SnpTouch::Miss { j, c1: b + off, c2: b + off + 1 },
                            EqId::MissY => SnpTouch::MissY { c1: b + off, c2: b + off + 1 },
                        };
                        snp_touch[k].push(touch);
                    }
                    Predictor::Pheno => match eq {
                        EqId::Miss(j) => pheno_touch.push(PhenoTouch::Miss { j, c: b + off }),
                        EqId::MissY => pheno_touch.push(PhenoTouch::MissY { c: b + off }),
                        _ => unreachable!("validated structure"),
                    },
                    Predictor::MissInd(_) => {} // observed data, never mutated
                }
            }
            init_plan.push((eq, offsets));
        }

        SystemEvaluator {
            sys,
            snp_touch,
            pheno_touch,
            init_plan,
        }
    }

    /// Computes every linear predictor from scratch.
    pub fn init_state(&self, geno: Vec<u8>, y: u8, r: Vec<u8>, r_y: u8) -> RecordState {
        let s = &self.sys.structure;
        let p = s.p();
        let mut st = RecordState {
            geno,
            y,
            r,
            r_y,
            eta_pheno: 0.0,
            eta_geno: vec![(0.0, 0.0); p],
            eta_miss: vec![0.0; p],
            eta_miss_y: 0.0,
        };
        let th = &self.sys.theta;
        for (eq, offsets) in &self.init_plan {
            match eq {
                EqId::Pheno => {
                    let b = self.sys.layout.eq1.start;
                    st.eta_pheno = th[b] + self.block_eta(&st, offsets, b);
                }
                EqId::Geno(j) => {
                    let b1 = self.sys.layout.eq4[*j].0.start;
                    let b2 = self.sys.layout.eq4[*j].1.start;
                    st.eta_geno[*j] = (
                        th[b1] + self.block_eta(&st, offsets, b1),
                        th[b2] + self.block_eta(&st, offsets, b2),
                    );
                }
                EqId::Miss(j) => {
                    let b = self.sys.layout.eq8[*j].start;
                    st.eta_miss[*j] = th[b] + self.block_eta(&st, offsets, b);
                }
                EqId::MissY => {
                    let b = self.sys.layout.eq_ry.as_ref().unwrap().start;
                    st.eta_miss_y = th[b] + self.block_eta(&st, offsets, b);
                }
            }
        }
        st
    }

    fn block_eta(&self, st: &RecordState, offsets: &[(Predictor, usize)], base: usize) -> f64 {
        let th = &self.sys.theta;
        let mut eta = 0.0;
        for &(pr, off) in offsets {
            match pr {
                Predictor::Snp(k) => {
                    let (d1, d2) = dummy_pair(st.geno[k]);
                    eta += th[base + off] * d1 + th[base + off + 1] * d2;
                }
                Predictor::Pheno => eta += th[base + off] * st.y as f64,
                Predictor::MissInd(k) => eta += th[base + off] * st.r[k] as f64,
            }
        }
        eta
    }

    /// Changes one genotype cell, updating only the equations that use it.
    pub fn set_snp(&self, st: &mut RecordState, k: usize, g: u8) {
        let old = st.geno[k];
        if old == g {
            return;
        }
        let (o1, o2) = dummy_pair(old);
        let (n1, n2) = dummy_pair(g);
        let d1 = n1 - o1;
        let d2 = n2 - o2;
        let th = &self.sys.theta;
        for t in &self.snp_touch[k] {
            match *t {
                SnpTouch::Pheno { c1, c2 } => st.eta_pheno += th[c1] * d1 + th[c2] * d2,
                SnpTouch::Geno { j, a1, a2 } => {
                    st.eta_geno[j].0 += th[a1.0] * d1 + th[a1.1] * d2;
                    st.eta_geno[j].1 += th[a2.0] * d1 + th[a2.1] * d2;
                }
                SnpTouch::Miss { j, c1, c2 } => st.eta_miss[j] += th[c1] * d1 + th[c2] * d2,
                SnpTouch::MissY { c1, c2 } => st.eta_miss_y += th[c1] * d1 + th[c2] * d2,
            }
        }
        st.geno[k] = g;
    }

    /// Changes the phenotype, updating the equations that use it as a
    /// covariate (its own equation reads `st.y` directly).
    pub fn set_pheno(&self, st: &mut RecordState, v: u8) {
        let old = st.y;
        if old == v {
            return;
        }
        let d = v as f64 - old as f64;
        let th = &self.sys.theta;
        for t in &self.pheno_touch {
            match *t {
                PhenoTouch::Miss { j, c } => st.eta_miss[j] += th[c] * d,
                PhenoTouch::MissY { c } => st.eta_miss_y += th[c] * d,
            }
        }
        st.y = v;
    }

    /// Complete-data log-likelihood of the record at the current state:
    /// phenotype term, one trinomial term per missing-prone SNP, one
    /// missingness term per missing-prone SNP, and the phenotype-missingness
    /// term when modeled.
    pub fn loglik(&self, st: &RecordState) -> f64 {
        let s = &self.sys.structure;
        let mut ll = bernoulli_logpmf(st.y, st.eta_pheno);
        for j in 0..s.p() {
            let (e1, e2) = st.eta_geno[j];
            let g = st.geno[s.x_cols[j]];
            let pick = match g {
                0 => 0.0,
                1 => e1,
                2 => e2,
                _ => unreachable!("genotype in 0..=2"),
            };
            ll += pick - log_denom3(e1, e2);
            ll += bernoulli_logpmf(st.r[j], st.eta_miss[j]);
        }
        if s.pheno_missing {
            ll += bernoulli_logpmf(st.r_y, st.eta_miss_y);
        }
        ll
    }
}

#[inline]
fn bernoulli_logpmf(y: u8, eta: f64) -> f64 {
    y as f64 * eta - log1p_exp(eta)
}

#[inline]
fn log_denom3(e1: f64, e2: f64) -> f64 {
    let m = 0.0f64.max(e1).max(e2);
    m + ((-m).exp() + (e1 - m).exp() + (e2 - m).exp()).ln()
}

/// Naive from-scratch log-likelihood used to cross-check the incremental
/// cache; shared with tests and kept free of the touch-list machinery.
pub fn loglik_direct(sys: &ModelSystem, geno: &[u8], y: u8, r: &[u8], r_y: u8) -> f64 {
    let s = &sys.structure;
    let eta_of = |preds: &[Predictor], coef: &[f64]| -> f64 {
        let mut eta = coef[0];
        let mut at = 1;
        for pr in preds {
            match pr {
                Predictor::Snp(k) => {
                    let (d1, d2) = dummy_pair(geno[*k]);
                    eta += coef[at] * d1 + coef[at + 1] * d2;
                    at += 2;
                }
                Predictor::Pheno => {
                    eta += coef[at] * y as f64;
                    at += 1;
                }
                Predictor::MissInd(k) => {
                    eta += coef[at] * r[*k] as f64;
                    at += 1;
                }
            }
        }
        eta
    };
    let mut ll = bernoulli_logpmf(y, eta_of(&s.eq1, sys.beta()));
    for j in 0..s.p() {
        let (a1, a2) = sys.alpha(j);
        let e1 = eta_of(&s.eq4[j], a1);
        let e2 = eta_of(&s.eq4[j], a2);
        let pick = match geno[s.x_cols[j]] {
            0 => 0.0,
            1 => e1,
            2 => e2,
            _ => unreachable!(),
        };
        ll += pick - log_denom3(e1, e2);
        ll += bernoulli_logpmf(r[j], eta_of(&s.eq8[j], sys.gamma(j)));
    }
    if let Some(gy) = sys.gamma_y() {
        ll += bernoulli_logpmf(r_y, eta_of(s.eq_ry.as_ref().unwrap(), gy));
    }
    ll
}
