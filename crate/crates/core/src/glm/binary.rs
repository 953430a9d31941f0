//! Weighted ridge binary logistic regression, plus the automatic Firth
//! substitution used for imbalanced or separated responses.

use super::{add_ridge, ridge_penalty, xtv, xtwx, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::math::{log1p_exp, logistic};
use nalgebra::{DMatrix, DVector};

/// Weighted log-likelihood of a binary logistic model.
pub fn binary_loglik(x: &DMatrix<f64>, y: &[f64], w: &[f64], coef: &[f64]) -> f64 {
    let beta = DVector::from_column_slice(coef);
    let eta = x * beta;
    let mut ll = 0.0;
    for i in 0..y.len() {
        ll += w[i] * (y[i] * eta[i] - log1p_exp(eta[i]));
    }
    ll
}

/// Maximize the ridge-penalized weighted binary log-likelihood by Newton
/// iterations with step halving. The intercept (or any column with
/// `penalize[k] == false`) is excluded from the penalty.
pub fn fit_weighted_ridge_binary(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    penalize: &[bool],
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = x.nrows();
    let d = x.ncols();
    assert_eq!(y.len(), n, "response length");
    assert_eq!(w.len(), n, "weight length");
    assert_eq!(penalize.len(), d, "penalize length");

    let mut beta: Vec<f64> = match &opts.warm_start {
        Some(b) => {
            assert_eq!(b.len(), d, "warm start length");
            b.clone()
        }
        None => vec![0.0; d],
    };

    let objective = |coef: &[f64]| {
        binary_loglik(x, y, w, coef) - ridge_penalty(coef, opts.lambda, penalize)
    };

    let mut pll = objective(&beta);
    let mut trace = vec![pll];
    let mut converged = false;
    let mut iterations = 0;

    for iter in 1..=opts.max_iter {
        let beta_v = DVector::from_column_slice(&beta);
        let eta = x * &beta_v;
        let mut resid = vec![0.0; n];
        let mut wvar = vec![0.0; n];
        for i in 0..n {
            let pi = logistic(eta[i]);
            resid[i] = w[i] * (y[i] - pi);
            wvar[i] = w[i] * pi * (1.0 - pi);
        }
        let mut grad = xtv(x, &resid);
        if opts.lambda > 0.0 {
            for k in 0..d {
                if penalize[k] {
                    grad[k] -= opts.lambda * beta[k];
                }
            }
        }
        let gmax = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
        if gmax < opts.grad_tol {
            converged = true;
            break;
        }

        let mut h = xtwx(x, &wvar);
        add_ridge(&mut h, opts.lambda, penalize);
        let chol = match h.cholesky() {
            Some(c) => c,
            None => {
                if iter == 1 {
                    return Err(Error::numerical(
                        "singular information matrix; the design is collinear \
                         (a ridge penalty would regularize it)",
                    ));
                }
                break;
            }
        };
        let delta = chol.solve(&DVector::from_column_slice(&grad));

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(delta.iter())
                .map(|(&b, &dl)| b + step * dl)
                .collect();
            let cand_pll = objective(&cand);
            if cand_pll >= pll - 1e-12 {
                beta = cand;
                pll = cand_pll;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        iterations = iter;
        trace.push(pll);
        if !accepted {
            break;
        }
    }

    let beta_v = DVector::from_column_slice(&beta);
    let eta = x * &beta_v;

    if !converged {
        // gradient may have dropped below tolerance on the final accepted step
        let mut resid = vec![0.0; n];
        for i in 0..n {
            resid[i] = w[i] * (y[i] - logistic(eta[i]));
        }
        let mut grad = xtv(x, &resid);
        for k in 0..d {
            if penalize[k] {
                grad[k] -= opts.lambda * beta[k];
            }
        }
        converged = grad.iter().all(|g| g.abs() < opts.grad_tol);
    }

    // Under separation the score vanishes along a divergent coefficient path,
    // so the gradient criterion cannot tell a finite optimum from one at
    // infinity. Saturated linear predictors are the signature of the latter.
    let mut separation = false;
    if opts.lambda == 0.0 {
        separation = eta.iter().any(|e| e.abs() > super::SEPARATION_ETA);
        if separation {
            converged = false;
        }
    }

    let covariance = if opts.compute_covariance {
        let mut wvar = vec![0.0; n];
        for i in 0..n {
            let pi = logistic(eta[i]);
            wvar[i] = w[i] * pi * (1.0 - pi);
        }
        let mut h = xtwx(x, &wvar);
        add_ridge(&mut h, opts.lambda, penalize);
        h.cholesky().map(|c| c.inverse())
    } else {
        None
    };

    let loglik = binary_loglik(x, y, w, &beta);
    Ok(FitResult {
        penalized_loglik: loglik - ridge_penalty(&beta, opts.lambda, penalize),
        coefficients: beta,
        covariance,
        converged,
        iterations,
        loglik,
        objective_trace: trace,
        used_firth: false,
        separation,
    })
}

/// Ridge fit with automatic Firth substitution: Firth replaces the ridge fit
/// when the weighted minority count of the response is below
/// `firth_threshold`, or when a lambda = 0 fit fails to converge
/// (separation). A threshold of zero disables the substitution entirely.
pub fn fit_binary_auto(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    penalize: &[bool],
    opts: &FitOptions,
    firth_threshold: f64,
) -> Result<FitResult> {
    if firth_threshold > 0.0 {
        let ones: f64 = y.iter().zip(w.iter()).map(|(&yi, &wi)| yi * wi).sum();
        let total: f64 = w.iter().sum();
        let minority = ones.min(total - ones);
        if minority < firth_threshold {
            return super::fit_firth_binary(x, y, w, opts);
        }
    }
    let fit = fit_weighted_ridge_binary(x, y, w, penalize, opts)?;
    if !fit.converged && opts.lambda == 0.0 && firth_threshold > 0.0 {
        return super::fit_firth_binary(x, y, w, opts);
    }
    Ok(fit)
}
