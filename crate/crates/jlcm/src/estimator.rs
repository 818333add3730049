//! Maximum-likelihood estimation by a damped Newton (Marquardt)
//! algorithm with finite-difference derivatives.
//!
//! The optimizer works in the free parameter space ([`ParameterVector`]
//! handles the positivity and ordering reparameterizations), accepts a
//! step only when the log-likelihood does not decrease, and declares
//! convergence only when three criteria hold simultaneously:
//!
//! 1. squared parameter change `sum_j |dtheta_j|^2 < eps1`,
//! 2. log-likelihood change `|dl| < eps2`,
//! 3. scaled score criterion `G' H^{-1} G / np < eps3`.
//!
//! Derivatives come from likelihood values only. The gradient uses
//! componentwise central differences. The Hessian uses the symmetric
//! four-point scheme
//!
//! ```text
//! H_ij = [f(x + h_i e_i + h_j e_j) - f(x + h_i e_i) - f(x + h_j e_j) + f(x)]
//!        / (h_i h_j)
//! ```
//!
//! which is symmetric by construction and needs one evaluation per
//! parameter pair on top of the single-bump values. Probes that move only
//! event-side parameters reuse the evaluator's marker-density cache, so
//! the cost per iteration is dominated by the pairs of longitudinal
//! parameters.
//!
//! Multi-start wraps the fit with several start points (user-supplied,
//! random perturbations of a base fit, or class splits/merges of fits
//! with one class fewer/more) and returns the best converged run, with
//! ties broken by lower BIC and then by order.

use crate::data::Dataset;
use crate::error::Error;
use crate::likelihood::{Evaluator, LikelihoodOptions};
use crate::model::{ModelSpec, ParameterVector};
use crate::Result;
use nalgebra::{Cholesky, DMatrix, DVector};
use serde::{Deserialize, Serialize};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use statrs::distribution::{ChiSquared, ContinuousCDF};

/// The three convergence tolerances and the iteration budget.
#[derive(Debug, Clone)]
pub struct ConvergenceCriteria {
    /// Threshold on the squared parameter change of the last step.
    pub param_tol: f64,
    /// Threshold on the log-likelihood change of the last step.
    pub loglik_tol: f64,
    /// Threshold on `G' H^{-1} G / np`.
    pub score_tol: f64,
    pub max_iterations: usize,
}

impl Default for ConvergenceCriteria {
    fn default() -> Self {
        Self {
            param_tol: 1e-4,
            loglik_tol: 1e-4,
            score_tol: 1e-4,
            max_iterations: 500,
        }
    }
}

impl ConvergenceCriteria {
    pub fn validate(&self) -> Result<()> {
        if !(self.param_tol > 0.0 && self.loglik_tol > 0.0 && self.score_tol > 0.0) {
            return Err(Error::Domain(
                "convergence tolerances must be strictly positive".into(),
            ));
        }
        if self.max_iterations == 0 {
            return Err(Error::Domain("iteration budget must be at least 1".into()));
        }
        Ok(())
    }
}

/// Componentwise finite-difference step sizes
/// `h_j = max(floor, relative * |x_j|)`.
#[derive(Debug, Clone)]
pub struct StepPolicy {
    /// Step floor for gradient (central-difference) probes.
    pub gradient_floor: f64,
    /// Step floor for Hessian probes.
    pub hessian_floor: f64,
    /// Relative component of both steps.
    pub relative: f64,
}

impl Default for StepPolicy {
    fn default() -> Self {
        Self {
            gradient_floor: 1e-5,
            hessian_floor: 1e-4,
            relative: 1e-4,
        }
    }
}

impl StepPolicy {
    pub fn validate(&self) -> Result<()> {
        if !(self.gradient_floor > 0.0 && self.hessian_floor > 0.0) {
            return Err(Error::Domain(
                "finite-difference steps must be strictly positive".into(),
            ));
        }
        if !(self.relative >= 0.0) {
            return Err(Error::Domain(
                "relative finite-difference step must be nonnegative".into(),
            ));
        }
        Ok(())
    }

    fn gradient_step(&self, x: f64) -> f64 {
        self.gradient_floor.max(self.relative * x.abs())
    }

    fn hessian_step(&self, x: f64) -> f64 {
        self.hessian_floor.max(self.relative * x.abs())
    }
}

/// How a fit ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Termination {
    /// All three criteria satisfied.
    Converged,
    /// Iteration budget exhausted.
    MaxIterations,
    /// The log-likelihood stopped improving meaningfully for 50
    /// iterations (or no acceptable step existed) without the criteria
    /// being met.
    Stalled,
}

/// Values of the three convergence criteria at the final iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CriteriaValues {
    pub param_change: f64,
    pub loglik_change: f64,
    pub score: f64,
}

/// Everything the optimizer knows at termination, in free-parameter
/// space.
#[derive(Debug, Clone)]
pub struct Maximized {
    pub x: Vec<f64>,
    pub value: f64,
    pub iterations: usize,
    pub termination: Termination,
    /// Objective value at the start and after every accepted step
    /// (nondecreasing).
    pub trace: Vec<f64>,
    pub criteria: CriteriaValues,
    /// Gradient at the final point.
    pub gradient: Vec<f64>,
    /// Negated Hessian of the objective at the final point (the observed
    /// information when the objective is a log-likelihood).
    pub neg_hessian: DMatrix<f64>,
}

/// A fitted model.
#[derive(Debug, Clone)]
pub struct FitResult {
    pub theta: ParameterVector,
    /// Free-space parameter values (the space the optimizer and the
    /// covariance live in).
    pub free: Vec<f64>,
    pub free_names: Vec<String>,
    pub log_likelihood: f64,
    pub bic: f64,
    /// Number of free parameters.
    pub np: usize,
    pub n_subjects: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub criteria: CriteriaValues,
    pub loglik_trace: Vec<f64>,
    pub gradient: Vec<f64>,
    /// Observed information (negated log-likelihood Hessian) at the
    /// optimum, free space.
    pub neg_hessian: DMatrix<f64>,
    /// Inverse information, when it exists (asymptotic covariance of the
    /// free parameters).
    pub covariance: Option<DMatrix<f64>>,
    /// Which start point produced this fit.
    pub start_id: String,
}

impl FitResult {
    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }
}

/// Fit configuration: tolerances, finite-difference steps, likelihood
/// evaluation settings, and a label for the start point.
#[derive(Debug, Clone, Default)]
pub struct FitOptions {
    pub criteria: ConvergenceCriteria,
    pub steps: StepPolicy,
    pub likelihood: LikelihoodOptions,
}

/// Shrink a probe step at most this many times (halving) when the
/// objective is not finite there.
const PROBE_SHRINKS: u32 = 6;
/// Bound on damping inflations / step rejections within one iteration.
const MAX_INNER: usize = 60;
/// Iterations without a log-likelihood improvement of at least the
/// loglik tolerance before a run is flagged as stalled.
const STALL_LIMIT: usize = 50;
const LAMBDA_START: f64 = 1e-3;
const LAMBDA_MIN: f64 = 1e-12;
const LAMBDA_MAX: f64 = 1e10;

fn eval_shifted<F>(f: &F, base: &[f64], shifts: &[(usize, f64)]) -> f64
where
    F: Fn(&[f64]) -> Result<f64>,
{
    let mut x = base.to_vec();
    for &(j, d) in shifts {
        x[j] += d;
    }
    f(&x).unwrap_or(f64::NAN)
}

/// Gradient by componentwise central differences and Hessian by the
/// symmetric four-point value scheme. Steps shrink (bounded) when a probe
/// lands where the objective is not finite.
pub fn finite_difference_score_and_hessian<F>(
    f: &F,
    x: &[f64],
    steps: &StepPolicy,
) -> Result<(Vec<f64>, DMatrix<f64>)>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    steps.validate()?;
    let n = x.len();
    let f0 = f(x)?;
    if !f0.is_finite() {
        return Err(Error::Numeric(
            "objective is not finite at the expansion point".into(),
        ));
    }
    let gradient: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut h = steps.gradient_step(x[j]);
            for _ in 0..=PROBE_SHRINKS {
                let fp = eval_shifted(f, x, &[(j, h)]);
                let fm = eval_shifted(f, x, &[(j, -h)]);
                if fp.is_finite() && fm.is_finite() {
                    return Ok((fp - fm) / (2.0 * h));
                }
                h *= 0.5;
            }
            Err(Error::Numeric(format!(
                "objective not finite near the expansion point along component {j}"
            )))
        })
        .collect::<Result<_>>()?;

    // Single-bump values f(x + h_j e_j), shrinking h_j where needed.
    let singles: Vec<(f64, f64)> = (0..n)
        .into_par_iter()
        .map(|j| {
            let mut h = steps.hessian_step(x[j]);
            for _ in 0..=PROBE_SHRINKS {
                let v = eval_shifted(f, x, &[(j, h)]);
                if v.is_finite() {
                    return Ok((h, v));
                }
                h *= 0.5;
            }
            Err(Error::Numeric(format!(
                "objective not finite near the expansion point along component {j}"
            )))
        })
        .collect::<Result<_>>()?;

    let pairs: Vec<(usize, usize)> =
        (0..n).flat_map(|i| (i..n).map(move |j| (i, j))).collect();
    let entries: Vec<f64> = pairs
        .par_iter()
        .map(|&(i, j)| {
            for k in 0..=PROBE_SHRINKS {
                let scale = 0.5f64.powi(k as i32);
                let (hi, hj) = (singles[i].0 * scale, singles[j].0 * scale);
                let (fi, fj) = if k == 0 {
                    (singles[i].1, singles[j].1)
                } else {
                    let fi = eval_shifted(f, x, &[(i, hi)]);
                    let fj = eval_shifted(f, x, &[(j, hj)]);
                    (fi, fj)
                };
                let fij = if i == j {
                    eval_shifted(f, x, &[(i, 2.0 * hi)])
                } else {
                    eval_shifted(f, x, &[(i, hi), (j, hj)])
                };
                if fi.is_finite() && fj.is_finite() && fij.is_finite() {
                    return Ok((fij - fi - fj + f0) / (hi * hj));
                }
            }
            Err(Error::Numeric(format!(
                "objective not finite near the expansion point for components {i}, {j}"
            )))
        })
        .collect::<Result<_>>()?;
    let mut hessian = DMatrix::zeros(n, n);
    for (&(i, j), &v) in pairs.iter().zip(&entries) {
        hessian[(i, j)] = v;
        hessian[(j, i)] = v;
    }
    Ok((gradient, hessian))
}

/// Maximize a log-likelihood-like objective with damped Newton steps.
pub fn maximize<F>(
    f: &F,
    start: &[f64],
    criteria: &ConvergenceCriteria,
    steps: &StepPolicy,
) -> Result<Maximized>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    criteria.validate()?;
    steps.validate()?;
    let np = start.len();
    if np == 0 {
        return Err(Error::Domain("nothing to optimize: no free parameters".into()));
    }
    let mut x = start.to_vec();
    let mut value = f(&x)?;
    if !value.is_finite() {
        return Err(Error::Numeric(
            "objective is not finite at the start point".into(),
        ));
    }
    let mut trace = vec![value];
    let mut lambda = LAMBDA_START;
    let mut param_change = f64::INFINITY;
    let mut loglik_change = f64::INFINITY;
    let mut stall = 0usize;
    let mut iterations = 0usize;
    let mut termination = Termination::MaxIterations;
    let mut gradient = Vec::new();
    let mut neg_hessian = DMatrix::zeros(np, np);
    let mut score = f64::INFINITY;

    for iter in 1..=criteria.max_iterations {
        iterations = iter;
        let (g, h) = finite_difference_score_and_hessian(f, &x, steps)?;
        gradient = g;
        neg_hessian = -h;
        let gvec = DVector::from_column_slice(&gradient);
        score = match Cholesky::new(neg_hessian.clone()) {
            Some(chol) => gvec.dot(&chol.solve(&gvec)) / np as f64,
            None => f64::INFINITY,
        };
        if param_change < criteria.param_tol
            && loglik_change < criteria.loglik_tol
            && score < criteria.score_tol
        {
            termination = Termination::Converged;
            break;
        }

        // Diagonal boost used by the damping ladder; the floor keeps the
        // ladder effective where the information diagonal vanishes.
        let boost = DVector::from_iterator(
            np,
            (0..np).map(|i| neg_hessian[(i, i)].abs().max(1e-8)),
        );
        let mut accepted = false;
        let mut solvable = false;
        let mut last_step_sq = f64::NAN;
        let mut last_candidate_change = f64::NAN;
        for _ in 0..MAX_INNER {
            let mut damped = neg_hessian.clone();
            for i in 0..np {
                damped[(i, i)] += lambda * boost[i];
            }
            let delta = match Cholesky::new(damped) {
                Some(chol) => chol.solve(&gvec),
                None => {
                    lambda *= 10.0;
                    if lambda > LAMBDA_MAX {
                        break;
                    }
                    continue;
                }
            };
            solvable = true;
            let candidate: Vec<f64> = x.iter().zip(delta.iter()).map(|(a, d)| a + d).collect();
            let cand_value = f(&candidate).unwrap_or(f64::NAN);
            last_step_sq = delta.iter().map(|d| d * d).sum();
            last_candidate_change = (cand_value - value).abs();
            if cand_value.is_finite() && cand_value >= value {
                param_change = last_step_sq;
                loglik_change = cand_value - value;
                x = candidate;
                value = cand_value;
                trace.push(value);
                lambda = (lambda / 10.0).max(LAMBDA_MIN);
                accepted = true;
                break;
            }
            lambda *= 10.0;
            if lambda > LAMBDA_MAX {
                break;
            }
        }
        if !accepted {
            if !solvable {
                return Err(Error::Numeric(
                    "damped Hessian remained singular after repeated damping inflation".into(),
                ));
            }
            // No step improves the objective. If the most recent candidate
            // moved essentially nothing and the score criterion holds, we
            // are at the optimum up to rounding; otherwise flag a stall.
            if last_step_sq < criteria.param_tol
                && last_candidate_change < criteria.loglik_tol
                && score < criteria.score_tol
            {
                param_change = last_step_sq;
                loglik_change = last_candidate_change;
                termination = Termination::Converged;
            } else {
                termination = Termination::Stalled;
            }
            break;
        }
        if loglik_change < criteria.loglik_tol {
            stall += 1;
            if stall >= STALL_LIMIT {
                termination = Termination::Stalled;
                break;
            }
        } else {
            stall = 0;
        }
        if iter == criteria.max_iterations {
            termination = Termination::MaxIterations;
        }
    }

    // After a stall or an exhausted budget the stored derivatives refer to
    // the point before the last accepted step; refresh them at the final
    // point so diagnostics are trustworthy.
    if termination != Termination::Converged {
        let (g, h) = finite_difference_score_and_hessian(f, &x, steps)?;
        gradient = g;
        neg_hessian = -h;
        let gvec = DVector::from_column_slice(&gradient);
        score = match Cholesky::new(neg_hessian.clone()) {
            Some(chol) => gvec.dot(&chol.solve(&gvec)) / np as f64,
            None => f64::INFINITY,
        };
    }
    Ok(Maximized {
        x,
        value,
        iterations,
        termination,
        trace,
        criteria: CriteriaValues {
            param_change,
            loglik_change,
            score,
        },
        gradient,
        neg_hessian,
    })
}

/// Fit the model by maximizing the left-truncated log-likelihood from one
/// start point.
pub fn marquardt_fit(
    spec: &ModelSpec,
    data: &Dataset,
    start: &ParameterVector,
    options: &FitOptions,
    start_id: &str,
) -> Result<FitResult> {
    let eval = Evaluator::new(spec, data, options.likelihood.clone())?;
    let free0 = start.pack(spec)?;
    let objective = |x: &[f64]| -> Result<f64> {
        let theta = ParameterVector::unpack(spec, x)?;
        eval.log_likelihood(&theta)
    };
    let max = maximize(&objective, &free0, &options.criteria, &options.steps)?;
    let theta = ParameterVector::unpack(spec, &max.x)?;
    let np = max.x.len();
    let n_subjects = data.n_subjects();
    let bic = -2.0 * max.value + np as f64 * (n_subjects as f64).ln();
    let covariance = if max.termination == Termination::Converged {
        Cholesky::new(max.neg_hessian.clone()).map(|c| c.inverse())
    } else {
        None
    };
    Ok(FitResult {
        theta,
        free: max.x,
        free_names: ParameterVector::free_names(spec),
        log_likelihood: max.value,
        bic,
        np,
        n_subjects,
        iterations: max.iterations,
        termination: max.termination,
        criteria: max.criteria,
        loglik_trace: max.trace,
        gradient: max.gradient,
        neg_hessian: max.neg_hessian,
        covariance,
        start_id: start_id.to_string(),
    })
}

/// Where multi-start gets its start points.
pub enum StartStrategy {
    /// Explicit start points, labeled `user-1`, `user-2`, ...
    Supplied(Vec<ParameterVector>),
    /// The base itself plus `n_starts - 1` random free-space
    /// perturbations `x_j + scale * max(0.2, |x_j|) * N(0,1)`.
    Perturb {
        base: ParameterVector,
        n_starts: usize,
        scale: f64,
        seed: u64,
    },
    /// Class splits of a fit with one class fewer and/or merges of a fit
    /// with one class more.
    Adjacent {
        smaller: Option<ParameterVector>,
        larger: Option<ParameterVector>,
    },
}

/// All runs of a multi-start fit plus the index of the winner.
pub struct MultiStartResult {
    pub best: usize,
    pub runs: Vec<FitResult>,
}

impl MultiStartResult {
    pub fn best_fit(&self) -> &FitResult {
        &self.runs[self.best]
    }
}

/// Run the fit from several start points and keep the best converged run
/// (highest log-likelihood, ties by lower BIC then order). If nothing
/// converged, the best completed run is returned still flagged by its
/// `termination`.
pub fn multi_start(
    spec: &ModelSpec,
    data: &Dataset,
    strategy: &StartStrategy,
    options: &FitOptions,
) -> Result<MultiStartResult> {
    let starts = build_starts(spec, strategy)?;
    if starts.is_empty() {
        return Err(Error::Domain("multi-start needs at least one start point".into()));
    }
    let outcomes: Vec<(String, Result<FitResult>)> = starts
        .into_par_iter()
        .map(|(id, theta)| {
            let fit = marquardt_fit(spec, data, &theta, options, &id);
            (id, fit)
        })
        .collect();
    let mut runs = Vec::new();
    let mut failures = Vec::new();
    for (id, outcome) in outcomes {
        match outcome {
            Ok(fit) => runs.push(fit),
            Err(e) => failures.push(format!("{id}: {e}")),
        }
    }
    if runs.is_empty() {
        return Err(Error::Numeric(format!(
            "every start point failed: {}",
            failures.join("; ")
        )));
    }
    let pick = |candidates: Vec<usize>| -> usize {
        let mut best = candidates[0];
        for &i in &candidates[1..] {
            let better = runs[i].log_likelihood > runs[best].log_likelihood
                || (runs[i].log_likelihood == runs[best].log_likelihood
                    && runs[i].bic < runs[best].bic);
            if better {
                best = i;
            }
        }
        best
    };
    let converged: Vec<usize> = (0..runs.len()).filter(|&i| runs[i].converged()).collect();
    let best = if converged.is_empty() {
        pick((0..runs.len()).collect())
    } else {
        pick(converged)
    };
    Ok(MultiStartResult { best, runs })
}

fn build_starts(
    spec: &ModelSpec,
    strategy: &StartStrategy,
) -> Result<Vec<(String, ParameterVector)>> {
    match strategy {
        StartStrategy::Supplied(thetas) => Ok(thetas
            .iter()
            .enumerate()
            .map(|(i, t)| (format!("user-{}", i + 1), t.clone()))
            .collect()),
        StartStrategy::Perturb {
            base,
            n_starts,
            scale,
            seed,
        } => {
            if *n_starts == 0 {
                return Err(Error::Domain("perturbation strategy needs n_starts >= 1".into()));
            }
            let free = base.pack(spec)?;
            let mut rng = rand_chacha::ChaCha12Rng::seed_from_u64(*seed);
            let norm = StandardNormal;
            let mut out = vec![("base".to_string(), base.clone())];
            for i in 1..*n_starts {
                let jittered: Vec<f64> = free
                    .iter()
                    .map(|&v| {
                        let z: f64 = norm.sample(&mut rng);
                        v + scale * v.abs().max(0.2) * z
                    })
                    .collect();
                out.push((
                    format!("perturb-{i}"),
                    ParameterVector::unpack(spec, &jittered)?,
                ));
            }
            Ok(out)
        }
        StartStrategy::Adjacent { smaller, larger } => {
            let mut out = Vec::new();
            if let Some(small) = smaller {
                for (i, theta) in split_starts(spec, small)?.into_iter().enumerate() {
                    out.push((format!("split-{}", i + 1), theta));
                }
            }
            if let Some(large) = larger {
                for (i, theta) in merge_starts(spec, large)?.into_iter().enumerate() {
                    out.push((format!("merge-{}", i + 1), theta));
                }
            }
            if out.is_empty() {
                return Err(Error::Domain(
                    "adjacent strategy needs a smaller or a larger fit".into(),
                ));
            }
            Ok(out)
        }
    }
}

/// Marginal SD of random-effect dimension `j` (row norm of the Cholesky
/// factor).
fn latent_sd(theta: &ParameterVector, j: usize) -> f64 {
    theta.b_chol[j].iter().map(|v| v * v).sum::<f64>().sqrt()
}

/// Shift every class's first random-effect mean so the first class sits
/// at zero, which is where the scale of the latent process is anchored.
/// A common shift leaves the between-class separation untouched.
fn anchor_first_mean(mu: &mut [Vec<f64>]) {
    if mu.is_empty() || mu[0].is_empty() {
        return;
    }
    let shift = mu[0][0];
    for row in mu.iter_mut() {
        row[0] -= shift;
    }
}

/// Spread a one-class fit across the classes of a G-class model: class
/// means fan out by multiples of the latent SD, event baselines are
/// copied, and everything shared is taken as-is.
pub fn spread_single_class_start(
    spec: &ModelSpec,
    single: &ParameterVector,
) -> Result<ParameterVector> {
    let mut small_spec = spec.clone();
    small_spec.n_classes = 1;
    single.check_shape(&small_spec)?;
    let g_n = spec.n_classes;
    let r = spec.random_dim();
    let mut theta = ParameterVector::template(spec);
    theta.b_chol = single.b_chol.clone();
    theta.sigma_w = single.sigma_w.clone();
    theta.eta = single.eta.clone();
    theta.gamma = single.gamma.clone();
    theta.sigma_u = single.sigma_u.clone();
    theta.sigma_e = single.sigma_e.clone();
    let offset = |g: usize| -> f64 {
        if g_n == 1 {
            0.0
        } else {
            -1.0 + 2.0 * g as f64 / (g_n - 1) as f64
        }
    };
    for g in 0..g_n {
        for j in 0..r {
            theta.mu[g][j] = single.mu[0][j] + offset(g) * latent_sd(single, j);
        }
    }
    anchor_first_mean(&mut theta.mu);
    for (c, b) in theta.beta.iter_mut().enumerate() {
        for slot in b.iter_mut() {
            *slot = single.beta[c][0];
        }
    }
    for p in 0..spec.n_causes() {
        for g in 0..g_n {
            for j in 0..theta.nu[p][g].len() {
                theta.nu[p][g][j] = single.nu[p][0][j] + 0.05 * offset(g);
            }
        }
        for (c, z) in theta.zeta[p].iter_mut().enumerate() {
            for slot in z.iter_mut() {
                *slot = single.zeta[p][c][0];
            }
        }
    }
    Ok(theta)
}

/// One start per split choice: duplicate a class of the (G-1)-class fit,
/// offsetting the two copies' means by half a latent SD each way.
fn split_starts(spec: &ModelSpec, smaller: &ParameterVector) -> Result<Vec<ParameterVector>> {
    let g_n = spec.n_classes;
    if g_n < 2 {
        return Err(Error::Domain("class splits need at least two classes".into()));
    }
    let mut small_spec = spec.clone();
    small_spec.n_classes = g_n - 1;
    smaller.check_shape(&small_spec)?;
    let r = spec.random_dim();
    let mut out = Vec::with_capacity(g_n - 1);
    for split in 0..g_n - 1 {
        let mut theta = ParameterVector::template(spec);
        theta.b_chol = smaller.b_chol.clone();
        theta.sigma_w = smaller.sigma_w.clone();
        theta.eta = smaller.eta.clone();
        theta.gamma = smaller.gamma.clone();
        theta.sigma_u = smaller.sigma_u.clone();
        theta.sigma_e = smaller.sigma_e.clone();
        // Source class for each target class: `split` appears twice.
        let source = |g: usize| if g <= split { g } else { g - 1 };
        for g in 0..g_n {
            for j in 0..r {
                let mut m = smaller.mu[source(g)][j];
                if g == split {
                    m -= 0.5 * latent_sd(smaller, j);
                } else if g == split + 1 {
                    m += 0.5 * latent_sd(smaller, j);
                }
                theta.mu[g][j] = m;
            }
        }
        anchor_first_mean(&mut theta.mu);
        for (c, b) in theta.beta.iter_mut().enumerate() {
            if b.len() == 1 {
                b[0] = smaller.beta[c][0];
            } else {
                for g in 0..g_n {
                    b[g] = smaller.beta[c][source(g)];
                }
            }
        }
        if !theta.omega.is_empty() {
            for g in 0..g_n {
                theta.omega[g] = smaller.omega[source(g)];
            }
            theta.omega[g_n - 1] = 1.0;
        }
        for p in 0..spec.n_causes() {
            for g in 0..g_n {
                theta.nu[p][g] = smaller.nu[p][source(g)].clone();
            }
            for (c, z) in theta.zeta[p].iter_mut().enumerate() {
                if z.len() == 1 {
                    z[0] = smaller.zeta[p][c][0];
                } else {
                    for g in 0..g_n {
                        z[g] = smaller.zeta[p][c][source(g)];
                    }
                }
            }
        }
        // Membership logits: copy rows through the split, then shift so
        // the last class is the zero reference again (softmax-invariant).
        let arity = theta.xi[0].len();
        for g in 0..g_n {
            theta.xi[g] = smaller.xi[source(g)].clone();
        }
        let reference = theta.xi[g_n - 1].clone();
        for row in theta.xi.iter_mut() {
            for (v, r0) in row.iter_mut().zip(&reference) {
                *v -= r0;
            }
            debug_assert_eq!(row.len(), arity);
        }
        out.push(theta);
    }
    Ok(out)
}

/// One start per merge of two adjacent classes of the (G+1)-class fit:
/// the pair's parameters are averaged.
fn merge_starts(spec: &ModelSpec, larger: &ParameterVector) -> Result<Vec<ParameterVector>> {
    let g_n = spec.n_classes;
    let mut large_spec = spec.clone();
    large_spec.n_classes = g_n + 1;
    larger.check_shape(&large_spec)?;
    let r = spec.random_dim();
    let mut out = Vec::with_capacity(g_n);
    for merge in 0..g_n {
        let mut theta = ParameterVector::template(spec);
        theta.b_chol = larger.b_chol.clone();
        theta.sigma_w = larger.sigma_w.clone();
        theta.eta = larger.eta.clone();
        theta.gamma = larger.gamma.clone();
        theta.sigma_u = larger.sigma_u.clone();
        theta.sigma_e = larger.sigma_e.clone();
        // Source classes for each target class: `merge` absorbs
        // `merge + 1`.
        let blend = |a: f64, b: f64| 0.5 * (a + b);
        let sources = |g: usize| -> (usize, Option<usize>) {
            if g < merge {
                (g, None)
            } else if g == merge {
                (g, Some(g + 1))
            } else {
                (g + 1, None)
            }
        };
        for g in 0..g_n {
            let (a, b) = sources(g);
            for j in 0..r {
                theta.mu[g][j] = match b {
                    Some(b) => blend(larger.mu[a][j], larger.mu[b][j]),
                    None => larger.mu[a][j],
                };
            }
        }
        anchor_first_mean(&mut theta.mu);
        for (c, bvals) in theta.beta.iter_mut().enumerate() {
            if bvals.len() == 1 {
                bvals[0] = larger.beta[c][0];
            } else {
                for g in 0..g_n {
                    let (a, b) = sources(g);
                    bvals[g] = match b {
                        Some(b) => blend(larger.beta[c][a], larger.beta[c][b]),
                        None => larger.beta[c][a],
                    };
                }
            }
        }
        if !theta.omega.is_empty() {
            for g in 0..g_n {
                let (a, b) = sources(g);
                theta.omega[g] = match b {
                    Some(b) => blend(larger.omega[a], larger.omega[b]),
                    None => larger.omega[a],
                };
            }
            theta.omega[g_n - 1] = 1.0;
        }
        for p in 0..spec.n_causes() {
            for g in 0..g_n {
                let (a, b) = sources(g);
                for j in 0..theta.nu[p][g].len() {
                    theta.nu[p][g][j] = match b {
                        Some(b) => blend(larger.nu[p][a][j], larger.nu[p][b][j]),
                        None => larger.nu[p][a][j],
                    };
                }
            }
            for (c, z) in theta.zeta[p].iter_mut().enumerate() {
                if z.len() == 1 {
                    z[0] = larger.zeta[p][c][0];
                } else {
                    for g in 0..g_n {
                        let (a, b) = sources(g);
                        z[g] = match b {
                            Some(b) => blend(larger.zeta[p][c][a], larger.zeta[p][c][b]),
                            None => larger.zeta[p][c][a],
                        };
                    }
                }
            }
        }
        for g in 0..g_n {
            let (a, b) = sources(g);
            theta.xi[g] = match b {
                Some(b) => larger.xi[a]
                    .iter()
                    .zip(&larger.xi[b])
                    .map(|(x, y)| blend(*x, *y))
                    .collect(),
                None => larger.xi[a].clone(),
            };
        }
        let reference = theta.xi[g_n - 1].clone();
        for row in theta.xi.iter_mut() {
            for (v, r0) in row.iter_mut().zip(&reference) {
                *v -= r0;
            }
        }
        out.push(theta);
    }
    Ok(out)
}

/// Asymptotic covariance of the free parameters: inverse observed
/// information at the optimum. Fails by naming the flat directions when
/// the information is singular.
pub fn asymptotic_covariance(fit: &FitResult) -> Result<DMatrix<f64>> {
    if !fit.converged() {
        return Err(Error::Domain(
            "asymptotic covariance requires a converged fit".into(),
        ));
    }
    if let Some(cov) = &fit.covariance {
        return Ok(cov.clone());
    }
    match Cholesky::new(fit.neg_hessian.clone()) {
        Some(chol) => Ok(chol.inverse()),
        None => {
            let eigen = fit.neg_hessian.clone().symmetric_eigen();
            let max_ev = eigen
                .eigenvalues
                .iter()
                .fold(0.0f64, |acc, &v| acc.max(v.abs()));
            let tol = max_ev * 1e-10 + f64::MIN_POSITIVE;
            let mut flat = Vec::new();
            for (k, &ev) in eigen.eigenvalues.iter().enumerate() {
                if ev <= tol {
                    let col = eigen.eigenvectors.column(k);
                    for (i, &w) in col.iter().enumerate() {
                        if w.abs() > 0.3 && !flat.contains(&fit.free_names[i]) {
                            flat.push(fit.free_names[i].clone());
                        }
                    }
                }
            }
            Err(Error::Numeric(format!(
                "information matrix is singular; flat directions involve: {}",
                flat.join(", ")
            )))
        }
    }
}

/// A Wald test of `H0: subset of free parameters = 0`.
#[derive(Debug, Clone, Copy)]
pub struct WaldTest {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Joint Wald test for the named free-parameter indices being zero.
pub fn wald_test(fit: &FitResult, indices: &[usize]) -> Result<WaldTest> {
    if indices.is_empty() {
        return Err(Error::Domain("a Wald test needs at least one parameter".into()));
    }
    for &i in indices {
        if i >= fit.np {
            return Err(Error::Domain(format!(
                "parameter index {i} out of range for {} free parameters",
                fit.np
            )));
        }
    }
    let cov = asymptotic_covariance(fit)?;
    let k = indices.len();
    let sub = DMatrix::from_fn(k, k, |a, b| cov[(indices[a], indices[b])]);
    let est = DVector::from_iterator(k, indices.iter().map(|&i| fit.free[i]));
    let chol = Cholesky::new(sub).ok_or_else(|| {
        Error::Numeric("covariance of the tested subset is not positive definite".into())
    })?;
    let statistic = est.dot(&chol.solve(&est));
    let dist = ChiSquared::new(k as f64)
        .map_err(|e| Error::Numeric(format!("chi-square with {k} df: {e}")))?;
    let p_value = 1.0 - dist.cdf(statistic);
    Ok(WaldTest {
        statistic,
        df: k,
        p_value,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{MarkerSeries, SubjectRecord};
    use crate::model::{Autocorr, MarkerSpec, TimeBasis};
    use crate::links::LinkFamily;
    use approx::assert_abs_diff_eq;
    use rand::SeedableRng;
    use rand_chacha::ChaCha12Rng;

    #[test]
    fn quadratic_objective_has_exact_derivatives() {
        let f = |x: &[f64]| -> Result<f64> { Ok(x.iter().map(|v| v * v).sum()) };
        let x = [0.3, -1.2, 2.0];
        let (g, h) = finite_difference_score_and_hessian(&f, &x, &StepPolicy::default()).unwrap();
        for j in 0..3 {
            assert_abs_diff_eq!(g[j], 2.0 * x[j], epsilon = 1e-6);
            for i in 0..3 {
                let expect = if i == j { 2.0 } else { 0.0 };
                assert_abs_diff_eq!(h[(i, j)], expect, epsilon = 1e-6);
            }
        }
    }

    #[test]
    fn zero_step_policy_is_rejected() {
        let f = |x: &[f64]| -> Result<f64> { Ok(-x[0] * x[0]) };
        let bad = StepPolicy {
            gradient_floor: 0.0,
            ..StepPolicy::default()
        };
        assert!(finite_difference_score_and_hessian(&f, &[1.0], &bad).is_err());
        let bad = StepPolicy {
            hessian_floor: 0.0,
            ..StepPolicy::default()
        };
        assert!(finite_difference_score_and_hessian(&f, &[1.0], &bad).is_err());
    }

    /// One class, intercept-only random effect, a single linear marker
    /// with two visits per subject and no events: the MLE has a closed
    /// form through the balanced exchangeable covariance structure.
    fn gls_spec() -> ModelSpec {
        ModelSpec {
            n_classes: 1,
            random_effect_basis: TimeBasis::poly(0, 0.0, 1.0),
            autocorr: Autocorr::None,
            class_specific_variance: false,
            latent_covariates: vec![],
            contrast_covariates: vec![],
            hazard_covariates: vec![],
            membership_covariates: vec![],
            markers: vec![MarkerSpec {
                name: "y".into(),
                link: LinkFamily::Linear,
                random_intercept: false,
            }],
            causes: vec![],
        }
    }

    fn gls_data(m: usize, seed: u64) -> Dataset {
        let (a, b, se) = (1.5, 0.9, 0.7);
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let norm = StandardNormal;
        let subjects = (0..m)
            .map(|i| {
                let u: f64 = norm.sample(&mut rng);
                let values: Vec<f64> = (0..2)
                    .map(|_| {
                        let z: f64 = norm.sample(&mut rng);
                        a + b * (u + se * z)
                    })
                    .collect();
                SubjectRecord {
                    id: format!("s{i}"),
                    entry: 0.0,
                    time: 10.0,
                    cause: 0,
                    covariates: vec![],
                    markers: vec![MarkerSeries {
                        times: vec![0.0, 1.0],
                        values,
                    }],
                }
            })
            .collect();
        Dataset {
            covariate_names: vec![],
            marker_names: vec!["y".into()],
            subjects,
        }
    }

    /// Closed-form MLE (a, b, sigma_e) for the balanced two-visit design.
    fn gls_oracle(data: &Dataset) -> (f64, f64, f64) {
        let m = data.subjects.len() as f64;
        let mut mean = 0.0;
        for s in &data.subjects {
            mean += s.markers[0].values.iter().sum::<f64>();
        }
        mean /= 2.0 * m;
        let (mut w11, mut w22, mut w12) = (0.0, 0.0, 0.0);
        for s in &data.subjects {
            let d1 = s.markers[0].values[0] - mean;
            let d2 = s.markers[0].values[1] - mean;
            w11 += d1 * d1;
            w22 += d2 * d2;
            w12 += d1 * d2;
        }
        let (w11, w22, w12) = (w11 / m, w22 / m, w12 / m);
        let diag = 0.5 * (w11 + w22);
        let b = w12.sqrt();
        let se = ((diag - w12) / w12).sqrt();
        (mean, b, se)
    }

    fn tight_options() -> FitOptions {
        FitOptions {
            criteria: ConvergenceCriteria {
                param_tol: 1e-12,
                loglik_tol: 1e-12,
                score_tol: 1e-12,
                max_iterations: 300,
            },
            ..FitOptions::default()
        }
    }

    #[test]
    fn gls_toy_recovers_the_closed_form_mle() {
        let spec = gls_spec();
        let data = gls_data(40, 11);
        let (a, b, se) = gls_oracle(&data);
        let start = ParameterVector::template(&spec);
        let fit = marquardt_fit(&spec, &data, &start, &tight_options(), "test").unwrap();
        assert!(fit.converged());
        assert_abs_diff_eq!(fit.theta.eta[0][0], a, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.theta.eta[0][1], b, epsilon = 1e-6);
        assert_abs_diff_eq!(fit.theta.sigma_e[0], se, epsilon = 1e-6);
        // Accepted iterations never decreased the log-likelihood.
        for w in fit.loglik_trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
        let n = data.subjects.len() as f64;
        assert_abs_diff_eq!(
            fit.bic,
            -2.0 * fit.log_likelihood + 3.0 * n.ln(),
            epsilon = 1e-10
        );
    }

    #[test]
    fn restarting_at_the_optimum_converges_immediately() {
        let spec = gls_spec();
        let data = gls_data(40, 11);
        let start = ParameterVector::template(&spec);
        let opts = FitOptions::default();
        let fit = marquardt_fit(&spec, &data, &start, &opts, "first").unwrap();
        assert!(fit.converged());
        let refit = marquardt_fit(&spec, &data, &fit.theta, &opts, "again").unwrap();
        assert!(refit.converged());
        assert!(
            refit.iterations <= 2,
            "took {} iterations from the optimum",
            refit.iterations
        );
    }

    #[test]
    fn gradient_matches_a_fourth_order_oracle() {
        let spec = gls_spec();
        let data = gls_data(25, 5);
        let eval = Evaluator::new(&spec, &data, LikelihoodOptions::default()).unwrap();
        let objective = |x: &[f64]| -> Result<f64> {
            let theta = ParameterVector::unpack(&spec, x)?;
            eval.log_likelihood(&theta)
        };
        let x = [0.9, -0.2, 0.15];
        let (g, _) =
            finite_difference_score_and_hessian(&objective, &x, &StepPolicy::default()).unwrap();
        for j in 0..3 {
            let h = 1e-3;
            let at = |d: f64| {
                let mut p = x.to_vec();
                p[j] += d;
                objective(&p).unwrap()
            };
            let oracle =
                (at(-2.0 * h) - 8.0 * at(-h) + 8.0 * at(h) - at(2.0 * h)) / (12.0 * h);
            let scale = oracle.abs().max(1.0);
            assert!(
                ((g[j] - oracle) / scale).abs() < 1e-4,
                "component {j}: {} vs oracle {}",
                g[j],
                oracle
            );
        }
    }

    #[test]
    fn standard_errors_match_an_independent_information_oracle() {
        let spec = gls_spec();
        let data = gls_data(40, 11);
        let start = ParameterVector::template(&spec);
        let fit = marquardt_fit(&spec, &data, &start, &tight_options(), "test").unwrap();
        let cov = asymptotic_covariance(&fit).unwrap();
        for i in 0..3 {
            for j in 0..3 {
                assert_abs_diff_eq!(cov[(i, j)], cov[(j, i)], epsilon = 1e-12);
            }
            assert!(cov[(i, i)] > 0.0);
        }

        // Independent log-likelihood: bivariate normal in closed form,
        // differentiated by high-order central differences.
        let loglik = |p: &[f64]| -> f64 {
            let (a, b, se) = (p[0], p[1].exp(), p[2].exp());
            let d = b * b * (1.0 + se * se);
            let o = b * b;
            let det = d * d - o * o;
            let mut l = 0.0;
            for s in &data.subjects {
                let e1 = s.markers[0].values[0] - a;
                let e2 = s.markers[0].values[1] - a;
                let quad = (d * (e1 * e1 + e2 * e2) - 2.0 * o * e1 * e2) / det;
                l += -(2.0f64 * std::f64::consts::PI).ln() - 0.5 * det.ln() - 0.5 * quad;
            }
            l
        };
        let n = 3;
        let mut info = DMatrix::zeros(n, n);
        let h = 1e-3;
        let shift = |i: usize, di: f64, j: usize, dj: f64| {
            let mut p = fit.free.clone();
            p[i] += di;
            p[j] += dj;
            loglik(&p)
        };
        for i in 0..n {
            for j in 0..n {
                let second = if i == j {
                    (-shift(i, 2.0 * h, i, 0.0) + 16.0 * shift(i, h, i, 0.0)
                        - 30.0 * loglik(&fit.free)
                        + 16.0 * shift(i, -h, i, 0.0)
                        - shift(i, -2.0 * h, i, 0.0))
                        / (12.0 * h * h)
                } else {
                    (shift(i, h, j, h) - shift(i, h, j, -h) - shift(i, -h, j, h)
                        + shift(i, -h, j, -h))
                        / (4.0 * h * h)
                };
                info[(i, j)] = -second;
            }
        }
        let oracle_cov = Cholesky::new(info).unwrap().inverse();
        for i in 0..n {
            let se_fit = cov[(i, i)].sqrt();
            let se_oracle = oracle_cov[(i, i)].sqrt();
            assert!(
                ((se_fit - se_oracle) / se_oracle).abs() < 1e-3,
                "SE {i}: {se_fit} vs oracle {se_oracle}"
            );
        }
    }

    #[test]
    fn wald_statistic_is_the_squared_standardized_estimate() {
        let spec = gls_spec();
        let data = gls_data(40, 11);
        let start = ParameterVector::template(&spec);
        let fit = marquardt_fit(&spec, &data, &start, &tight_options(), "test").unwrap();
        let cov = asymptotic_covariance(&fit).unwrap();
        let test = wald_test(&fit, &[0]).unwrap();
        assert_abs_diff_eq!(
            test.statistic,
            fit.free[0] * fit.free[0] / cov[(0, 0)],
            epsilon = 1e-10
        );
        assert_eq!(test.df, 1);
        // The intercept is ~9 SEs from zero, so its p-value may underflow;
        // the log noise scale is close enough to zero for an interior one.
        assert!((0.0..1.0).contains(&test.p_value));
        let interior = wald_test(&fit, &[2]).unwrap();
        assert!(interior.p_value > 0.0 && interior.p_value < 1.0);
        assert!(wald_test(&fit, &[9]).is_err());
        assert!(wald_test(&fit, &[]).is_err());
    }

    /// Two well-separated classes on a single continuous marker.
    fn mixture_spec() -> ModelSpec {
        let mut spec = gls_spec();
        spec.n_classes = 2;
        spec
    }

    fn mixture_data(m: usize, seed: u64) -> Dataset {
        let mut rng = ChaCha12Rng::seed_from_u64(seed);
        let norm = StandardNormal;
        let subjects = (0..m)
            .map(|i| {
                let mu = if i % 2 == 0 { 0.0 } else { 4.0 };
                let u: f64 = norm.sample(&mut rng);
                let values: Vec<f64> = (0..2)
                    .map(|_| {
                        let z: f64 = norm.sample(&mut rng);
                        mu + u + 0.5 * z
                    })
                    .collect();
                SubjectRecord {
                    id: format!("s{i}"),
                    entry: 0.0,
                    time: 10.0,
                    cause: 0,
                    covariates: vec![],
                    markers: vec![MarkerSeries {
                        times: vec![0.0, 1.0],
                        values,
                    }],
                }
            })
            .collect();
        Dataset {
            covariate_names: vec![],
            marker_names: vec!["y".into()],
            subjects,
        }
    }

    #[test]
    fn random_starts_agree_on_a_separated_mixture() {
        let spec = mixture_spec();
        let data = mixture_data(80, 17);
        let mut base = ParameterVector::template(&spec);
        base.mu = vec![vec![0.0], vec![4.0]];
        base.sigma_e = vec![0.5];
        let strategy = StartStrategy::Perturb {
            base,
            n_starts: 10,
            scale: 0.5,
            seed: 3,
        };
        let options = FitOptions::default();
        let result = multi_start(&spec, &data, &strategy, &options).unwrap();
        assert_eq!(result.runs.len(), 10);
        let best = result.best_fit();
        assert!(best.converged());
        let near_top = result
            .runs
            .iter()
            .filter(|r| r.converged() && (r.log_likelihood - best.log_likelihood).abs() < 1e-3)
            .count();
        assert!(
            near_top >= 8,
            "only {near_top}/10 starts reached the top log-likelihood"
        );
    }

    #[test]
    fn identical_starts_give_identical_results() {
        let spec = gls_spec();
        let data = gls_data(30, 2);
        let start = ParameterVector::template(&spec);
        let strategy = StartStrategy::Supplied(vec![start.clone(), start]);
        let result = multi_start(&spec, &data, &strategy, &FitOptions::default()).unwrap();
        assert_eq!(result.runs.len(), 2);
        assert_eq!(result.runs[0].free, result.runs[1].free);
        assert_eq!(
            result.runs[0].log_likelihood,
            result.runs[1].log_likelihood
        );
        assert_eq!(result.best, 0);
        assert_eq!(result.runs[0].start_id, "user-1");
    }

    #[test]
    fn adjacent_starts_split_and_merge_between_class_counts() {
        let spec = mixture_spec();
        let data = mixture_data(40, 9);
        let single_spec = gls_spec();
        let single = marquardt_fit(
            &single_spec,
            &data,
            &ParameterVector::template(&single_spec),
            &FitOptions::default(),
            "g1",
        )
        .unwrap();
        let spread = spread_single_class_start(&spec, &single.theta).unwrap();
        assert_eq!(spread.mu.len(), 2);
        assert!(spread.mu[0][0] < spread.mu[1][0]);

        let strategy = StartStrategy::Adjacent {
            smaller: Some(single.theta.clone()),
            larger: None,
        };
        let result = multi_start(&spec, &data, &strategy, &FitOptions::default()).unwrap();
        assert_eq!(result.runs.len(), 1);
        assert_eq!(result.runs[0].start_id, "split-1");

        // Merge back down: a three-class parameter set proposes two-class
        // starts.
        let mut spec3 = mixture_spec();
        spec3.n_classes = 3;
        let mut three = ParameterVector::template(&spec3);
        three.mu = vec![vec![0.0], vec![2.0], vec![4.0]];
        let strategy = StartStrategy::Adjacent {
            smaller: None,
            larger: Some(three),
        };
        let starts = build_starts(&spec, &strategy).unwrap();
        assert_eq!(starts.len(), 2);
        assert!(starts.iter().all(|(id, _)| id.starts_with("merge-")));
        for (_, theta) in &starts {
            theta.pack(&spec).unwrap();
        }
    }

    #[test]
    fn stalling_far_from_any_optimum_is_flagged() {
        // Maximum at infinity: Newton steps of size ~1 forever, with the
        // improvement shrinking geometrically below the tolerance.
        let f = |x: &[f64]| -> Result<f64> { Ok(-(-x[0]).exp()) };
        let out = maximize(
            &f,
            &[0.0],
            &ConvergenceCriteria::default(),
            &StepPolicy::default(),
        )
        .unwrap();
        assert_eq!(out.termination, Termination::Stalled);
        for w in out.trace.windows(2) {
            assert!(w[1] >= w[0]);
        }
    }

    #[test]
    fn singular_information_is_reported_with_its_flat_directions() {
        let fit = FitResult {
            theta: ParameterVector::template(&gls_spec()),
            free: vec![0.1, 0.2],
            free_names: vec!["alpha".into(), "beta".into()],
            log_likelihood: -10.0,
            bic: 20.0,
            np: 2,
            n_subjects: 5,
            iterations: 3,
            termination: Termination::Converged,
            criteria: CriteriaValues {
                param_change: 0.0,
                loglik_change: 0.0,
                score: 0.0,
            },
            loglik_trace: vec![-10.0],
            gradient: vec![0.0, 0.0],
            neg_hessian: DMatrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 0.0]),
            covariance: None,
            start_id: "test".into(),
        };
        let err = asymptotic_covariance(&fit).err().expect("must fail");
        let msg = err.to_string();
        assert!(msg.contains("beta"), "message was: {msg}");
        assert!(!msg.contains("alpha"), "message was: {msg}");
    }

    #[test]
    fn all_failing_starts_produce_an_aggregate_error() {
        let spec = gls_spec();
        let data = gls_data(10, 4);
        let mut broken = ParameterVector::template(&spec);
        broken.eta[0][0] = f64::NAN;
        let strategy = StartStrategy::Supplied(vec![broken.clone(), broken]);
        let err = multi_start(&spec, &data, &strategy, &FitOptions::default())
            .err()
            .expect("all starts fail");
        let msg = err.to_string();
        assert!(msg.contains("user-1") && msg.contains("user-2"), "{msg}");
    }
}
