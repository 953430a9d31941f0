//! Penalized weighted logistic fitters: binary and baseline-category
//! trinomial ridge fits plus Firth bias-reduced binary fits.
//!
//! Conventions shared by all fitters:
//! - designs are dense column-major matrices whose first column is the
//!   intercept; `penalize[k]` marks the columns the ridge penalty touches
//!   (the intercept is never penalized anywhere in this crate);
//! - every Newton step is guarded by halving on the penalized objective, so
//!   the objective trace is non-decreasing and warm-started fits can only
//!   improve on their start;
//! - convergence is max-norm of the (penalized) gradient below `grad_tol`;
//!   non-convergence at lambda = 0 is the separation flag, reported through
//!   `converged`, not an error.

mod binary;
mod firth;
mod trinomial;

pub use binary::{binary_loglik, fit_binary_auto, fit_weighted_ridge_binary};
pub use firth::fit_firth_binary;
pub use trinomial::{fit_weighted_ridge_trinomial, trinomial_loglik, trinomial_probs};

use nalgebra::DMatrix;

/// Options shared by the penalized fitters.
#[derive(Clone, Debug)]
pub struct FitOptions {
    pub lambda: f64,
    pub max_iter: usize,
    pub grad_tol: f64,
    /// Invert the final information matrix into `FitResult::covariance`.
    pub compute_covariance: bool,
    /// Starting coefficients; zeros when absent.
    pub warm_start: Option<Vec<f64>>,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            lambda: 0.0,
            max_iter: 100,
            grad_tol: 1e-8,
            compute_covariance: false,
            warm_start: None,
        }
    }
}

impl FitOptions {
    pub fn with_lambda(lambda: f64) -> Self {
        FitOptions {
            lambda,
            ..Default::default()
        }
    }
}

/// Output of one penalized fit.
#[derive(Clone, Debug)]
pub struct FitResult {
    /// Binary: one block. Trinomial: [block for category 1, block for 2].
    pub coefficients: Vec<f64>,
    /// Inverse of the penalized information at the estimate, when requested.
    pub covariance: Option<DMatrix<f64>>,
    pub converged: bool,
    pub iterations: usize,
    /// Unpenalized weighted log-likelihood at the estimate.
    pub loglik: f64,
    pub penalized_loglik: f64,
    /// Penalized objective after each accepted step (halving included).
    pub objective_trace: Vec<f64>,
    pub used_firth: bool,
    /// Set when a lambda = 0 fit saturated its linear predictors: the
    /// gradient vanishes along a divergent coefficient path, so the gradient
    /// criterion alone would misreport convergence. Always false for ridge
    /// (lambda > 0) and Firth fits, whose optima are finite.
    pub separation: bool,
}

/// |eta| beyond which a lambda = 0 fit is treated as separated: fitted
/// probabilities are within ~1e-11 of 0/1 there.
pub(crate) const SEPARATION_ETA: f64 = 25.0;

/// X^T diag(w) X accumulated through a scaled copy; `w` must be nonnegative.
pub(crate) fn xtwx(x: &DMatrix<f64>, w: &[f64]) -> DMatrix<f64> {
    let mut scaled = x.clone();
    for (mut row, &wi) in scaled.row_iter_mut().zip(w.iter()) {
        row *= wi.sqrt();
    }
    scaled.tr_mul(&scaled)
}

/// X^T v for a per-row vector v.
pub(crate) fn xtv(x: &DMatrix<f64>, v: &[f64]) -> Vec<f64> {
    let n = x.nrows();
    let d = x.ncols();
    let mut out = vec![0.0; d];
    for k in 0..d {
        let col = x.column(k);
        let mut s = 0.0;
        for i in 0..n {
            s += col[i] * v[i];
        }
        out[k] = s;
    }
    out
}

pub(crate) fn add_ridge(h: &mut DMatrix<f64>, lambda: f64, penalize: &[bool]) {
    if lambda == 0.0 {
        return;
    }
    for (k, &p) in penalize.iter().enumerate() {
        if p {
            h[(k, k)] += lambda;
        }
    }
}

pub(crate) fn ridge_penalty(coef: &[f64], lambda: f64, penalize: &[bool]) -> f64 {
    if lambda == 0.0 {
        return 0.0;
    }
    0.5 * lambda
        * coef
            .iter()
            .zip(penalize.iter())
            .filter(|&(_, &p)| p)
            .map(|(&c, _)| c * c)
            .sum::<f64>()
}
