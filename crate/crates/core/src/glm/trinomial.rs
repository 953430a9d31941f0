//! Weighted ridge trinomial (baseline-category) logistic regression.
//! Category 0 is the baseline; the two non-baseline categories share the
//! design and get independent coefficient blocks, estimated jointly.

use super::{add_ridge, ridge_penalty, xtv, xtwx, FitOptions, FitResult};
use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};

/// (phi0, phi1, phi2) for one pair of linear predictors, overflow-safe.
#[inline]
pub fn trinomial_probs(eta1: f64, eta2: f64) -> (f64, f64, f64) {
    let m = 0.0f64.max(eta1).max(eta2);
    let e0 = (-m).exp();
    let e1 = (eta1 - m).exp();
    let e2 = (eta2 - m).exp();
    let denom = e0 + e1 + e2;
    (e0 / denom, e1 / denom, e2 / denom)
}

fn log_denom(eta1: f64, eta2: f64) -> f64 {
    let m = 0.0f64.max(eta1).max(eta2);
    m + ((-m).exp() + (eta1 - m).exp() + (eta2 - m).exp()).ln()
}

/// Weighted log-likelihood; `coef` is the stacked [block1, block2].
pub fn trinomial_loglik(x: &DMatrix<f64>, y: &[u8], w: &[f64], coef: &[f64]) -> f64 {
    let d = x.ncols();
    let b1 = DVector::from_column_slice(&coef[..d]);
    let b2 = DVector::from_column_slice(&coef[d..]);
    let eta1 = x * b1;
    let eta2 = x * b2;
    let mut ll = 0.0;
    for i in 0..y.len() {
        let term = match y[i] {
            0 => 0.0,
            1 => eta1[i],
            2 => eta2[i],
            _ => panic!("trinomial response out of range"),
        };
        ll += w[i] * (term - log_denom(eta1[i], eta2[i]));
    }
    ll
}

/// Maximize the ridge-penalized weighted trinomial log-likelihood. The
/// returned coefficient vector stacks the category-1 block before the
/// category-2 block; `penalize` refers to design columns and applies to both
/// blocks.
pub fn fit_weighted_ridge_trinomial(
    x: &DMatrix<f64>,
    y: &[u8],
    w: &[f64],
    penalize: &[bool],
    opts: &FitOptions,
) -> Result<FitResult> {
    let n = x.nrows();
    let d = x.ncols();
    assert_eq!(y.len(), n, "response length");
    assert_eq!(w.len(), n, "weight length");
    assert_eq!(penalize.len(), d, "penalize length");

    let stacked_penalize: Vec<bool> = penalize.iter().chain(penalize.iter()).cloned().collect();
    let mut coef: Vec<f64> = match &opts.warm_start {
        Some(c) => {
            assert_eq!(c.len(), 2 * d, "warm start length");
            c.clone()
        }
        None => vec![0.0; 2 * d],
    };

    let objective = |c: &[f64]| {
        trinomial_loglik(x, y, w, c) - ridge_penalty(c, opts.lambda, &stacked_penalize)
    };

    let mut pll = objective(&coef);
    let mut trace = vec![pll];
    let mut converged = false;
    let mut iterations = 0;

    let gradient = |c: &[f64]| -> Vec<f64> {
        let b1 = DVector::from_column_slice(&c[..d]);
        let b2 = DVector::from_column_slice(&c[d..]);
        let eta1 = x * b1;
        let eta2 = x * b2;
        let mut r1 = vec![0.0; n];
        let mut r2 = vec![0.0; n];
        for i in 0..n {
            let (_, p1, p2) = trinomial_probs(eta1[i], eta2[i]);
            r1[i] = w[i] * (((y[i] == 1) as u8 as f64) - p1);
            r2[i] = w[i] * (((y[i] == 2) as u8 as f64) - p2);
        }
        let mut g = xtv(x, &r1);
        g.extend(xtv(x, &r2));
        if opts.lambda > 0.0 {
            for k in 0..2 * d {
                if stacked_penalize[k] {
                    g[k] -= opts.lambda * c[k];
                }
            }
        }
        g
    };

    for iter in 1..=opts.max_iter {
        let grad = gradient(&coef);
        let gmax = grad.iter().fold(0.0f64, |a, &g| a.max(g.abs()));
        if gmax < opts.grad_tol {
            converged = true;
            break;
        }

        let b1 = DVector::from_column_slice(&coef[..d]);
        let b2 = DVector::from_column_slice(&coef[d..]);
        let eta1 = x * b1;
        let eta2 = x * b2;
        let mut w11 = vec![0.0; n];
        let mut w22 = vec![0.0; n];
        let mut w12 = vec![0.0; n];
        for i in 0..n {
            let (_, p1, p2) = trinomial_probs(eta1[i], eta2[i]);
            w11[i] = w[i] * p1 * (1.0 - p1);
            w22[i] = w[i] * p2 * (1.0 - p2);
            w12[i] = w[i] * p1 * p2; // negated in the Hessian assembly
        }
        let mut h11 = xtwx(x, &w11);
        let mut h22 = xtwx(x, &w22);
        let h12 = xtwx(x, &w12);
        add_ridge(&mut h11, opts.lambda, penalize);
        add_ridge(&mut h22, opts.lambda, penalize);

        let mut h = DMatrix::zeros(2 * d, 2 * d);
        h.view_mut((0, 0), (d, d)).copy_from(&h11);
        h.view_mut((d, d), (d, d)).copy_from(&h22);
        h.view_mut((0, d), (d, d)).copy_from(&(-&h12));
        h.view_mut((d, 0), (d, d)).copy_from(&(-&h12));

        let chol = match h.cholesky() {
            Some(c) => c,
            None => {
                if iter == 1 {
                    return Err(Error::numerical(
                        "singular trinomial information matrix; the design is \
                         collinear (a ridge penalty would regularize it)",
                    ));
                }
                break;
            }
        };
        let delta = chol.solve(&DVector::from_column_slice(&grad));

        let mut step = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand: Vec<f64> = coef
                .iter()
                .zip(delta.iter())
                .map(|(&b, &dl)| b + step * dl)
                .collect();
            let cand_pll = objective(&cand);
            if cand_pll >= pll - 1e-12 {
                coef = cand;
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

    if !converged {
        let grad = gradient(&coef);
        converged = grad.iter().all(|g| g.abs() < opts.grad_tol);
    }

    // Same divergence signature as the binary fit: at lambda = 0 a vanishing
    // gradient with saturated linear predictors means the optimum is at
    // infinity (e.g. an empty category), not a finite stationary point.
    let mut separation = false;
    if opts.lambda == 0.0 {
        let b1 = DVector::from_column_slice(&coef[..d]);
        let b2 = DVector::from_column_slice(&coef[d..]);
        let eta1 = x * b1;
        let eta2 = x * b2;
        separation = eta1
            .iter()
            .chain(eta2.iter())
            .any(|e| e.abs() > super::SEPARATION_ETA);
        if separation {
            converged = false;
        }
    }

    let covariance = if opts.compute_covariance {
        let b1 = DVector::from_column_slice(&coef[..d]);
        let b2 = DVector::from_column_slice(&coef[d..]);
        let eta1 = x * b1;
        let eta2 = x * b2;
        let mut w11 = vec![0.0; n];
        let mut w22 = vec![0.0; n];
        let mut w12 = vec![0.0; n];
        for i in 0..n {
            let (_, p1, p2) = trinomial_probs(eta1[i], eta2[i]);
            w11[i] = w[i] * p1 * (1.0 - p1);
            w22[i] = w[i] * p2 * (1.0 - p2);
            w12[i] = w[i] * p1 * p2;
        }
        let mut h11 = xtwx(x, &w11);
        let mut h22 = xtwx(x, &w22);
        let h12 = xtwx(x, &w12);
        add_ridge(&mut h11, opts.lambda, penalize);
        add_ridge(&mut h22, opts.lambda, penalize);
        let mut h = DMatrix::zeros(2 * d, 2 * d);
        h.view_mut((0, 0), (d, d)).copy_from(&h11);
        h.view_mut((d, d), (d, d)).copy_from(&h22);
        h.view_mut((0, d), (d, d)).copy_from(&(-&h12));
        h.view_mut((d, 0), (d, d)).copy_from(&(-&h12));
        h.cholesky().map(|c| c.inverse())
    } else {
        None
    };

    let loglik = trinomial_loglik(x, y, w, &coef);
    Ok(FitResult {
        penalized_loglik: loglik - ridge_penalty(&coef, opts.lambda, &stacked_penalize),
        coefficients: coef,
        covariance,
        converged,
        iterations,
        loglik,
        objective_trace: trace,
        used_firth: false,
        separation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::glm::test_util::grid_maximize;

    #[test]
    fn matches_grid_search_oracle() {
        let xs = [0.0, 1.0, 2.0];
        let x = DMatrix::from_fn(3, 2, |i, j| if j == 0 { 1.0 } else { xs[i] });
        let y = vec![0u8, 1, 2];
        let w = vec![1.0, 1.0, 1.0];
        let lambda = 0.5;
        let fit = fit_weighted_ridge_trinomial(
            &x,
            &y,
            &w,
            &[false, true],
            &FitOptions::with_lambda(lambda),
        )
        .unwrap();
        assert!(fit.converged);

        let oracle = grid_maximize(4, -4.0, 4.0, 8, 13, &|c| {
            trinomial_loglik(&x, &y, &w, c) - 0.5 * lambda * (c[1] * c[1] + c[3] * c[3])
        });
        for k in 0..4 {
            assert!(
                (fit.coefficients[k] - oracle[k]).abs() < 1e-3,
                "coef {k}: {} vs {}",
                fit.coefficients[k],
                oracle[k]
            );
        }
    }

    #[test]
    fn intercept_only_recovers_weighted_frequencies() {
        let y = vec![0u8, 0, 1, 1, 1, 2, 0, 1, 2, 2];
        let w = vec![1.0, 2.0, 1.0, 1.0, 0.5, 1.5, 1.0, 1.0, 2.0, 1.0];
        let x = DMatrix::from_element(10, 1, 1.0);
        let fit =
            fit_weighted_ridge_trinomial(&x, &y, &w, &[false], &FitOptions::default()).unwrap();
        assert!(fit.converged);
        let total: f64 = w.iter().sum();
        let freq = |k: u8| -> f64 {
            y.iter()
                .zip(w.iter())
                .filter(|&(&yi, _)| yi == k)
                .map(|(_, &wi)| wi)
                .sum::<f64>()
                / total
        };
        let (p0, p1, p2) = trinomial_probs(fit.coefficients[0], fit.coefficients[1]);
        assert!((p0 - freq(0)).abs() < 1e-8);
        assert!((p1 - freq(1)).abs() < 1e-8);
        assert!((p2 - freq(2)).abs() < 1e-8);
    }

    #[test]
    fn constant_response_with_ridge_pushes_intercepts_negative() {
        let y = vec![0u8; 12];
        let w = vec![1.0; 12];
        let x = DMatrix::from_element(12, 1, 1.0);
        let fit =
            fit_weighted_ridge_trinomial(&x, &y, &w, &[true], &FitOptions::with_lambda(0.01))
                .unwrap();
        assert!(fit.converged);
        assert!(fit.coefficients[0] < -2.0);
        assert!(fit.coefficients[1] < -2.0);
        let (p0, _, _) = trinomial_probs(fit.coefficients[0], fit.coefficients[1]);
        assert!(p0 > 0.95);
    }

    #[test]
    fn covariance_is_symmetric_positive_diagonal() {
        let mut rng = crate::seed::derive_rng(3, &[17]);
        use rand::Rng;
        let n = 60;
        let x = DMatrix::from_fn(n, 3, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.gen_range(0..3) as f64
            }
        });
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3) as u8).collect();
        let w = vec![1.0; n];
        let mut opts = FitOptions::with_lambda(0.2);
        opts.compute_covariance = true;
        let fit =
            fit_weighted_ridge_trinomial(&x, &y, &w, &[false, true, true], &opts).unwrap();
        let cov = fit.covariance.unwrap();
        assert_eq!(cov.nrows(), 6);
        for i in 0..6 {
            assert!(cov[(i, i)] > 0.0);
            for j in 0..6 {
                assert!((cov[(i, j)] - cov[(j, i)]).abs() < 1e-10);
            }
        }
    }

    #[test]
    fn objective_trace_monotone_and_weight_equivalence() {
        let mut rng = crate::seed::derive_rng(9, &[18]);
        use rand::Rng;
        let n = 40;
        let x = DMatrix::from_fn(n, 2, |_, j| {
            if j == 0 {
                1.0
            } else {
                rng.gen_range(0..3) as f64
            }
        });
        let y: Vec<u8> = (0..n).map(|_| rng.gen_range(0..3) as u8).collect();
        let opts = FitOptions::with_lambda(0.3);
        let fit =
            fit_weighted_ridge_trinomial(&x, &y, &vec![1.0; n], &[false, true], &opts).unwrap();
        for pair in fit.objective_trace.windows(2) {
            assert!(pair[1] >= pair[0] - 1e-12);
        }

        let x2 = DMatrix::from_fn(2 * n, 2, |i, j| x[(i % n, j)]);
        let y2: Vec<u8> = (0..2 * n).map(|i| y[i % n]).collect();
        let dup =
            fit_weighted_ridge_trinomial(&x2, &y2, &vec![1.0; 2 * n], &[false, true], &opts)
                .unwrap();
        let wtd =
            fit_weighted_ridge_trinomial(&x, &y, &vec![2.0; n], &[false, true], &opts).unwrap();
        for (a, b) in dup.coefficients.iter().zip(wtd.coefficients.iter()) {
            assert!((a - b).abs() < 1e-10);
        }
    }
}
