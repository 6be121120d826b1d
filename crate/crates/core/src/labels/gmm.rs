//! Two-component one-dimensional Gaussian mixtures fitted by EM.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GmmOptions {
    pub restarts: usize,
    pub max_iter: usize,
    /// Stop once an iteration improves the log-likelihood by less than this.
    pub tol: f64,
    pub var_floor: f64,
}

impl Default for GmmOptions {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iter: 500,
            tol: 1e-8,
            var_floor: 1e-6,
        }
    }
}

/// Fitted mixture; component 0 has the smaller mean.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Gmm {
    pub means: [f64; 2],
    pub variances: [f64; 2],
    pub weights: [f64; 2],
    pub log_likelihood: f64,
    pub iterations: usize,
}

impl Gmm {
    /// Log of `weight · N(x | mean, var)` for both components.
    fn log_joint(&self, x: f64) -> [f64; 2] {
        let mut out = [0.0; 2];
        for c in 0..2 {
            let var = self.variances[c];
            out[c] = self.weights[c].ln() - 0.5 * ((2.0 * std::f64::consts::PI * var).ln() + (x - self.means[c]).powi(2) / var);
        }
        out
    }

    /// Posterior probability of the larger-mean component.
    pub fn posterior_high(&self, x: f64) -> f64 {
        let [l0, l1] = self.log_joint(x);
        1.0 / (1.0 + (l0 - l1).exp())
    }

    /// 1 when the larger-mean component has the higher responsibility.
    pub fn label(&self, x: f64) -> u8 {
        let [l0, l1] = self.log_joint(x);
        u8::from(l1 > l0)
    }

    pub fn log_likelihood_of(&self, values: &[f64]) -> f64 {
        values.iter().map(|&x| log_sum_exp(self.log_joint(x))).sum()
    }
}

#[inline]
fn log_sum_exp([a, b]: [f64; 2]) -> f64 {
    let m = a.max(b);
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// One EM run from the given initial means.
#[derive(Debug, Clone)]
pub struct EmRun {
    pub gmm: Gmm,
    /// Log-likelihood at the start of each iteration, then at the final parameters.
    pub trace: Vec<f64>,
    pub converged: bool,
}

pub fn em_from(values: &[f64], init_means: [f64; 2], opts: &GmmOptions) -> EmRun {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).max(opts.var_floor);
    let mut gmm = Gmm {
        means: init_means,
        variances: [var, var],
        weights: [0.5, 0.5],
        log_likelihood: f64::NEG_INFINITY,
        iterations: 0,
    };
    let mut trace = Vec::new();
    let mut resp = vec![0.0; values.len()];
    let mut converged = false;

    for it in 0..opts.max_iter {
        // E-step: responsibilities of component 1 and the current log-likelihood
        let mut ll = 0.0;
        for (r, &x) in resp.iter_mut().zip(values) {
            let lj = gmm.log_joint(x);
            let lse = log_sum_exp(lj);
            ll += lse;
            *r = (lj[1] - lse).exp();
        }
        if let Some(&prev) = trace.last() {
            if ll - prev < opts.tol {
                trace.push(ll);
                gmm.log_likelihood = ll;
                gmm.iterations = it;
                converged = true;
                break;
            }
        }
        trace.push(ll);
        gmm.log_likelihood = ll;
        gmm.iterations = it + 1;

        // M-step
        let n1: f64 = resp.iter().sum();
        let n0 = n - n1;
        if n0 <= 0.0 || n1 <= 0.0 {
            break;
        }
        let m1 = resp.iter().zip(values).map(|(r, x)| r * x).sum::<f64>() / n1;
        let m0 = resp.iter().zip(values).map(|(r, x)| (1.0 - r) * x).sum::<f64>() / n0;
        let v1 = resp.iter().zip(values).map(|(r, x)| r * (x - m1).powi(2)).sum::<f64>() / n1;
        let v0 = resp.iter().zip(values).map(|(r, x)| (1.0 - r) * (x - m0).powi(2)).sum::<f64>() / n0;
        gmm.means = [m0, m1];
        gmm.variances = [v0.max(opts.var_floor), v1.max(opts.var_floor)];
        gmm.weights = [n0 / n, n1 / n];
    }
    if !converged {
        gmm.log_likelihood = gmm.log_likelihood_of(values);
    }

    if gmm.means[0] > gmm.means[1] {
        gmm.means.swap(0, 1);
        gmm.variances.swap(0, 1);
        gmm.weights.swap(0, 1);
    }
    EmRun { gmm, trace, converged }
}

/// Empirical quantile with linear interpolation over sorted values.
fn quantile(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64)
}

/// Best of several EM runs seeded from symmetric quantile pairs.
pub fn fit_gmm(values: &[f64], opts: &GmmOptions) -> Result<Gmm> {
    if values.len() < 4 {
        return Err(Error::Size(format!("GMM needs at least 4 values, got {}", values.len())));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::Input("GMM input contains non-finite values".into()));
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let sd = (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    if sd <= 1e-9 {
        return Err(Error::DegenerateDistribution(format!(
            "values are nearly constant (sample sd {sd:e})"
        )));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);

    let restarts = opts.restarts.max(1);
    let mut best: Option<EmRun> = None;
    for r in 0..restarts {
        // q runs over 0.05 .. 0.45
        let q = 0.05 + 0.4 * r as f64 / (restarts.max(2) - 1) as f64;
        let run = em_from(values, [quantile(&sorted, q), quantile(&sorted, 1.0 - q)], opts);
        let better = match &best {
            None => true,
            Some(b) => {
                (run.converged && !b.converged)
                    || (run.converged == b.converged && run.gmm.log_likelihood > b.gmm.log_likelihood)
            }
        };
        if better {
            best = Some(run);
        }
    }
    let best = best.unwrap();
    if !best.converged {
        return Err(Error::Convergence {
            iterations: opts.max_iter,
            best_log_likelihood: best.gmm.log_likelihood,
        });
    }
    Ok(best.gmm)
}

/// Binary labels (1 = larger-mean component) and the fitted mixture.
pub fn gmm_binarize(values: &[f64]) -> Result<(Vec<u8>, Gmm)> {
    gmm_binarize_with(values, &GmmOptions::default())
}

pub fn gmm_binarize_with(values: &[f64], opts: &GmmOptions) -> Result<(Vec<u8>, Gmm)> {
    let gmm = fit_gmm(values, opts)?;
    Ok((values.iter().map(|&x| gmm.label(x)).collect(), gmm))
}
