//! Structure of the latent process: class-specific means over time,
//! random-effect covariance, serial-correlation kernels, and the implied
//! moments of the stacked normalized observations.
//!
//! Within class `g`, a subject's latent trajectory is
//! `Z(t)' u + x_latent' beta_g + w(t)` with `u ~ N(mu_g, omega_g^2 L L')`
//! and `w` an optional zero-mean Gaussian process. A normalized observation
//! of marker `k` at time `t` adds the marker's contrast shift, its random
//! intercept (if any), and measurement error. This module computes the
//! resulting mean vectors and covariance matrices for an arbitrary stacked
//! list of (marker, time) observations — the continuous-branch inputs.

use crate::model::{class_coef, Autocorr, ModelSpec, ParameterVector};
use nalgebra::{DMatrix, DVector};

/// Covariance of the serial process between times `t` and `s`.
pub fn autocorr_cov(kind: Autocorr, sigma_w: &[f64], t: f64, s: f64) -> f64 {
    match kind {
        Autocorr::None => 0.0,
        Autocorr::Brownian => sigma_w[0] * sigma_w[0] * t.min(s),
        Autocorr::Ar => {
            let (sd, rate) = (sigma_w[0], sigma_w[1]);
            sd * sd * (-rate * (t - s).abs()).exp()
        }
    }
}

/// Random-effect covariance of class `g`: `omega_g^2 L L'`.
pub fn random_effect_covariance(theta: &ParameterVector, g: usize) -> DMatrix<f64> {
    let r = theta.b_chol.len();
    let mut l = DMatrix::zeros(r, r);
    for (i, row) in theta.b_chol.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            l[(i, j)] = *v;
        }
    }
    let scale = variance_scale(theta, g);
    let mut b = &l * l.transpose();
    b *= scale * scale;
    b
}

/// The class's SD multiplier on the random effects (1 when the model has no
/// class-specific variances).
pub fn variance_scale(theta: &ParameterVector, g: usize) -> f64 {
    if theta.omega.is_empty() {
        1.0
    } else {
        theta.omega[g]
    }
}

/// Mean latent value for class `g` at time `t` given the subject's latent
/// covariate values.
pub fn latent_mean(
    spec: &ModelSpec,
    theta: &ParameterVector,
    g: usize,
    t: f64,
    latent_covs: &[f64],
) -> f64 {
    let mut m = 0.0;
    for (j, f) in spec.random_effect_basis.functions.iter().enumerate() {
        m += f.eval(t) * theta.mu[g][j];
    }
    for (c, x) in latent_covs.iter().enumerate() {
        m += class_coef(&theta.beta[c], g) * x;
    }
    m
}

/// Mean of the stacked normalized observations `(marker, time)` for class
/// `g`: latent mean plus the marker's contrast shift.
pub fn stacked_mean(
    spec: &ModelSpec,
    theta: &ParameterVector,
    g: usize,
    obs: &[(usize, f64)],
    latent_covs: &[f64],
    contrast_covs: &[f64],
) -> DVector<f64> {
    DVector::from_iterator(
        obs.len(),
        obs.iter().map(|&(k, t)| {
            let mut m = latent_mean(spec, theta, g, t, latent_covs);
            for (c, x) in contrast_covs.iter().enumerate() {
                m += theta.gamma[k][c] * x;
            }
            m
        }),
    )
}

/// Covariance of the stacked normalized observations for class `g`:
/// shared random effects and serial process couple everything; marker
/// random intercepts couple within a marker; measurement error is diagonal.
pub fn stacked_covariance(
    spec: &ModelSpec,
    theta: &ParameterVector,
    g: usize,
    obs: &[(usize, f64)],
) -> DMatrix<f64> {
    let n = obs.len();
    let r = spec.random_dim();
    let b = random_effect_covariance(theta, g);
    // Design rows Z(t) for each observation.
    let mut z = DMatrix::zeros(n, r);
    for (a, &(_, t)) in obs.iter().enumerate() {
        for (j, f) in spec.random_effect_basis.functions.iter().enumerate() {
            z[(a, j)] = f.eval(t);
        }
    }
    let mut v = &z * &b * z.transpose();
    for a in 0..n {
        let (ka, ta) = obs[a];
        for bi in 0..n {
            let (kb, tb) = obs[bi];
            if spec.autocorr != Autocorr::None {
                v[(a, bi)] += autocorr_cov(spec.autocorr, &theta.sigma_w, ta, tb);
            }
            if ka == kb {
                if let Some(su) = theta.sigma_u[ka] {
                    v[(a, bi)] += su * su;
                }
            }
        }
        let se = theta.sigma_e[ka];
        v[(a, a)] += se * se;
    }
    v
}
