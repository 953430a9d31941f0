//! Firth bias-reduced binary logistic regression: maximizes the Jeffreys-
//! penalized likelihood l(b) + 0.5 log det X'WX. Used in place of the ridge
//! fit for heavily imbalanced or separated binary responses; always
//! unpenalized by lambda.

use super::{xtv, xtwx, FitOptions, FitResult};
use crate::error::{Error, Result};
use crate::math::logistic;
use nalgebra::{DMatrix, DVector};

fn firth_objective(x: &DMatrix<f64>, y: &[f64], w: &[f64], coef: &[f64]) -> Option<f64> {
    let ll = super::binary_loglik(x, y, w, coef);
    let beta = DVector::from_column_slice(coef);
    let eta = x * beta;
    let wvar: Vec<f64> = (0..y.len())
        .map(|i| {
            let pi = logistic(eta[i]);
            w[i] * pi * (1.0 - pi)
        })
        .collect();
    let m = xtwx(x, &wvar);
    let chol = m.cholesky()?;
    let logdet: f64 = 2.0 * chol.l().diagonal().iter().map(|v| v.ln()).sum::<f64>();
    Some(ll + 0.5 * logdet)
}

/// Firth fit. `opts.lambda` is ignored by design; `opts.warm_start`,
/// iteration cap and tolerance apply as usual.
pub fn fit_firth_binary(
    x: &DMatrix<f64>,
    y: &[f64],
    w: &[f64],
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = x.nrows();
    let d = x.ncols();
    assert_eq!(y.len(), n, "response length");
    assert_eq!(w.len(), n, "weight length");

    let mut beta: Vec<f64> = match &opts.warm_start {
        Some(b) => b.clone(),
        None => vec![0.0; d],
    };
    let mut obj = firth_objective(x, y, w, &beta)
        .ok_or_else(|| Error::numerical("singular information matrix in Firth fit"))?;
    let mut trace = vec![obj];
    let mut converged = false;
    let mut iterations = 0;

    let modified_score = |coef: &[f64]| -> Option<(Vec<f64>, DMatrix<f64>)> {
        let beta_v = DVector::from_column_slice(coef);
        let eta = x * beta_v;
        let mut wvar = vec![0.0; n];
        let mut pis = vec![0.0; n];
        for i in 0..n {
            let pi = logistic(eta[i]);
            pis[i] = pi;
            wvar[i] = w[i] * pi * (1.0 - pi);
        }
        let m = xtwx(x, &wvar);
        let chol = m.clone().cholesky()?;
        // leverages of the weighted hat matrix via Z = L^{-1} X'
        let mut z = x.transpose();
        chol.l().solve_lower_triangular_mut(&mut z);
        let mut score_in = vec![0.0; n];
        for i in 0..n {
            let h = wvar[i] * z.column(i).norm_squared();
            score_in[i] = w[i] * (y[i] - pis[i]) + h * (0.5 - pis[i]);
        }
        Some((xtv(x, &score_in), m))
    };

    for iter in 1..=opts.max_iter {
        let (score, m) = match modified_score(&beta) {
            Some(v) => v,
            None => break,
        };
        let smax = score.iter().fold(0.0f64, |a, &s| a.max(s.abs()));
        if smax < opts.grad_tol {
            converged = true;
            break;
        }
        let chol = match m.cholesky() {
            Some(c) => c,
            None => break,
        };
        let delta = chol.solve(&DVector::from_column_slice(&score));

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = beta
                .iter()
                .zip(delta.iter())
                .map(|(&b, &dl)| b + step * dl)
                .collect();
            if let Some(cand_obj) = firth_objective(x, y, w, &cand) {
                if cand_obj >= obj - 1e-12 {
                    beta = cand;
                    obj = cand_obj;
                    accepted = true;
                    break;
                }
            }
            step *= 0.5;
        }
        iterations = iter;
        trace.push(obj);
        if !accepted {
            break;
        }
    }

    if !converged {
        if let Some((score, _)) = modified_score(&beta) {
            converged = score.iter().all(|s| s.abs() < opts.grad_tol);
        }
    }

    let covariance = if opts.compute_covariance {
        let beta_v = DVector::from_column_slice(&beta);
        let eta = x * beta_v;
        let wvar: Vec<f64> = (0..n)
            .map(|i| {
                let pi = logistic(eta[i]);
                w[i] * pi * (1.0 - pi)
            })
            .collect();
        xtwx(x, &wvar).cholesky().map(|c| c.inverse())
    } else {
        None
    };

    let loglik = super::binary_loglik(x, y, w, &beta);
    Ok(FitResult {
        coefficients: beta,
        covariance,
        converged,
        iterations,
        loglik,
        penalized_loglik: obj,
        objective_trace: trace,
        used_firth: true,
        separation: false,
    })
}
