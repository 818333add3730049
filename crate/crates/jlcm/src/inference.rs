//! Post-fit quantities: posterior class membership and the derived
//! classification table, individual dynamic predictions of cumulative
//! incidence with parametric-bootstrap bands, a score test for residual
//! dependence between the markers and the event process within classes,
//! weighted predicted-versus-observed marker summaries, and a weighted
//! nonparametric cumulative-incidence estimator for visual comparison.
//!
//! Everything here conditions on a fitted parameter vector; the heavy
//! per-subject quantities (class-wise log-densities, cumulative hazards,
//! empirical-Bayes random-effect estimates) are computed once at
//! construction and shared across the summaries.

use crate::data::{Dataset, MarkerSeries, SubjectRecord};
use crate::error::Error;
use crate::estimator::{asymptotic_covariance, FitResult};
use crate::hazards::{ClassHazard, Hazards};
use crate::likelihood::{Components, Evaluator, LikelihoodOptions};
use crate::links::{LinkFamily, PreparedLink};
use crate::model::{class_coef, ModelSpec, ParameterVector};
use crate::numerics::{chi_square_sf, gauss_hermite, log_sum_exp, stream_seed};
use crate::structural::autocorr_cov;
use crate::Result;
use nalgebra::{Cholesky, DMatrix, DVector};
use rand::SeedableRng;
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;

/// Per-subject posterior class-membership probabilities with the
/// assignment table they imply.
#[derive(Debug, Clone)]
pub struct PosteriorClassification {
    /// Subject-by-class posterior probabilities; each row sums to 1.
    pub probabilities: Vec<Vec<f64>>,
    /// Modal class per subject (ties resolved to the lowest index).
    pub assigned: Vec<usize>,
    /// Entry (g, h): mean posterior probability of class h among the
    /// subjects assigned to class g. Rows of empty classes are NaN.
    pub table: Vec<Vec<f64>>,
    /// Classes to which no subject was assigned.
    pub empty_classes: Vec<usize>,
}

/// One chi-square test: statistic, degrees of freedom, upper-tail
/// p-value.
#[derive(Debug, Clone, Copy)]
pub struct TestComponent {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// Score test of whether the shared random effects still carry
/// information about the event risks once class membership is accounted
/// for.
#[derive(Debug, Clone)]
pub struct ScoreTestResult {
    /// One test per cause, each with `r` degrees of freedom.
    pub per_cause: Vec<TestComponent>,
    /// Joint test across causes with `r * P` degrees of freedom.
    pub global: TestComponent,
    /// The summed score vector, cause blocks concatenated.
    pub score: Vec<f64>,
    /// Per-subject score contributions (subjects by `r * P`), kept for
    /// diagnostics.
    pub contributions: DMatrix<f64>,
}

/// Point prediction of the probability of a specific cause of event in
/// a time window, given the marker history up to the landmark.
#[derive(Debug, Clone, Copy)]
pub struct Prediction {
    pub estimate: f64,
    /// Number of marker measurements at or before the landmark.
    pub used_measurements: usize,
    /// True when no measurement preceded the landmark, so the prediction
    /// rests on covariates alone.
    pub covariate_only: bool,
}

/// A point prediction together with a parametric-bootstrap band.
#[derive(Debug, Clone, Copy)]
pub struct PredictionBand {
    pub estimate: f64,
    pub median: f64,
    pub lower: f64,
    pub upper: f64,
    pub covariate_only: bool,
}

/// One class-marker-interval cell of the longitudinal fit summary.
#[derive(Debug, Clone, Copy)]
pub struct GofCell {
    pub class: usize,
    pub marker: usize,
    pub interval_lower: f64,
    pub interval_upper: f64,
    /// Posterior-weighted mean of model-predicted observed-scale values.
    pub predicted: f64,
    /// Posterior-weighted mean of the actual measurements.
    pub observed: f64,
    /// Total posterior weight in the cell.
    pub weight: f64,
    pub n_obs: usize,
}

/// Predicted-versus-observed weighted means over a time partition.
#[derive(Debug, Clone)]
pub struct GofTable {
    pub cells: Vec<GofCell>,
    /// (class, marker, interval index) triples with no observations.
    pub empty_cells: Vec<(usize, usize, usize)>,
}

/// Right-continuous step function `t -> value`, 0 before the first jump.
#[derive(Debug, Clone)]
pub struct StepFunction {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl StepFunction {
    pub fn value_at(&self, t: f64) -> f64 {
        match self.times.partition_point(|&x| x <= t) {
            0 => 0.0,
            k => self.values[k - 1],
        }
    }
}

/// Shared engine for the post-fit summaries: holds the class-wise
/// log-density components and the posterior membership probabilities.
pub struct Inference<'a> {
    spec: &'a ModelSpec,
    data: &'a Dataset,
    theta: &'a ParameterVector,
    components: Components,
    posteriors: Vec<Vec<f64>>,
}

impl<'a> Inference<'a> {
    pub fn new(
        spec: &'a ModelSpec,
        data: &'a Dataset,
        theta: &'a ParameterVector,
        opts: &LikelihoodOptions,
    ) -> Result<Self> {
        let evaluator = Evaluator::new(spec, data, opts.clone())?;
        let components = evaluator.components(theta)?;
        let posteriors = posterior_rows(&components);
        Ok(Self {
            spec,
            data,
            theta,
            components,
            posteriors,
        })
    }

    /// Build from a completed fit. Non-converged fits are refused unless
    /// `force` is set, since every summary here assumes the estimates are
    /// at a maximum.
    pub fn from_fit(
        fit: &'a FitResult,
        spec: &'a ModelSpec,
        data: &'a Dataset,
        opts: &LikelihoodOptions,
        force: bool,
    ) -> Result<Self> {
        if !fit.converged() && !force {
            return Err(Error::NonConvergence(
                "the fit did not converge; pass the force flag to summarize it anyway".into(),
            ));
        }
        Self::new(spec, data, &fit.theta, opts)
    }

    /// Posterior membership probabilities, subject by class.
    pub fn posterior_probs(&self) -> &[Vec<f64>] {
        &self.posteriors
    }

    pub fn components(&self) -> &Components {
        &self.components
    }

    /// Modal classes and the mean-posterior-by-assigned-class table.
    pub fn classification(&self) -> PosteriorClassification {
        let g_n = self.spec.n_classes;
        let assigned: Vec<usize> = self
            .posteriors
            .iter()
            .map(|row| {
                row.iter()
                    .enumerate()
                    .max_by(|a, b| a.1.total_cmp(b.1))
                    .map(|(g, _)| g)
                    .unwrap_or(0)
            })
            .collect();
        let mut table = vec![vec![0.0; g_n]; g_n];
        let mut counts = vec![0usize; g_n];
        for (row, &g) in self.posteriors.iter().zip(&assigned) {
            counts[g] += 1;
            for (h, p) in row.iter().enumerate() {
                table[g][h] += p;
            }
        }
        let mut empty_classes = Vec::new();
        for g in 0..g_n {
            if counts[g] == 0 {
                empty_classes.push(g);
                table[g] = vec![f64::NAN; g_n];
            } else {
                for v in table[g].iter_mut() {
                    *v /= counts[g] as f64;
                }
            }
        }
        PosteriorClassification {
            probabilities: self.posteriors.clone(),
            assigned,
            table,
            empty_classes,
        }
    }

    /// Per-subject score contributions for the conditional-independence
    /// test: row i holds, for each cause p and random-effect dimension j,
    ///
    /// ```text
    /// sum_g P(class = g | data_i) (1[cause_i = p] - A_p(T_i | g)) E(u* | g, markers_i)_j
    /// ```
    ///
    /// where `u*` is the random effect centered at its class mean. The
    /// delayed-entry part of the score is identically zero and is omitted.
    pub fn score_contributions(&self) -> Result<DMatrix<f64>> {
        let p_n = self.spec.n_causes();
        if p_n == 0 {
            return Err(Error::Domain(
                "the score test needs at least one cause of event".into(),
            ));
        }
        let r = self.spec.random_dim();
        let n = self.data.subjects.len();
        let mut rows = DMatrix::zeros(n, r * p_n);
        for (i, subject) in self.data.subjects.iter().enumerate() {
            for p in 0..p_n {
                let indicator = if subject.cause == p + 1 { 1.0 } else { 0.0 };
                for g in 0..self.spec.n_classes {
                    let weight = self.posteriors[i][g]
                        * (indicator - self.components.cumulative_hazards[i][g][p]);
                    for j in 0..r {
                        rows[(i, p * r + j)] +=
                            weight * self.components.eb_deviations[i][g][j];
                    }
                }
            }
        }
        Ok(rows)
    }

    /// Cause-specific and global score tests; the statistic normalizes
    /// the summed score by the empirical covariance of its per-subject
    /// contributions.
    pub fn score_test(&self) -> Result<ScoreTestResult> {
        let contributions = self.score_contributions()?;
        let r = self.spec.random_dim();
        let p_n = self.spec.n_causes();
        let per_cause = (0..p_n)
            .map(|p| {
                let block = contributions.columns(p * r, r).into_owned();
                quadratic_score_statistic(&block)
            })
            .collect::<Result<Vec<_>>>()?;
        let global = quadratic_score_statistic(&contributions)?;
        let score = (0..contributions.ncols())
            .map(|c| contributions.column(c).sum())
            .collect();
        Ok(ScoreTestResult {
            per_cause,
            global,
            score,
            contributions,
        })
    }

    /// Posterior-weighted predicted and observed marker means over the
    /// time partition given by ascending `bounds`. Interval m covers
    /// `[bounds[m], bounds[m+1])`; the final interval includes its upper
    /// endpoint. Predictions are the expected observed-scale values given
    /// the class and the subject's empirical-Bayes random-effect
    /// estimates, with the remaining noise (measurement error, any
    /// marker-specific intercept, any serial process) integrated out
    /// numerically.
    pub fn gof_longitudinal(&self, bounds: &[f64]) -> Result<GofTable> {
        if bounds.len() < 2 || bounds.windows(2).any(|w| w[0] >= w[1]) {
            return Err(Error::Domain(
                "time partition needs at least two strictly increasing bounds".into(),
            ));
        }
        let g_n = self.spec.n_classes;
        let k_n = self.spec.n_markers();
        let m_n = bounds.len() - 1;
        let links = self
            .spec
            .markers
            .iter()
            .map(|m| PreparedLink::new(&m.link))
            .collect::<Result<Vec<_>>>()?;
        let rule = gauss_hermite(30)?;
        let latent_ix = self
            .spec
            .latent_covariates
            .iter()
            .map(|c| self.data.covariate_index(&c.name))
            .collect::<Result<Vec<_>>>()?;
        let contrast_ix = self
            .spec
            .contrast_covariates
            .iter()
            .map(|c| self.data.covariate_index(c))
            .collect::<Result<Vec<_>>>()?;

        let interval_of = |t: f64| -> Option<usize> {
            if t < bounds[0] || t > bounds[m_n] {
                return None;
            }
            Some(bounds[1..].partition_point(|&b| b <= t).min(m_n - 1))
        };

        // cell accumulators: [class][marker][interval]
        let mut weight = vec![vec![vec![0.0; m_n]; k_n]; g_n];
        let mut pred = vec![vec![vec![0.0; m_n]; k_n]; g_n];
        let mut obs = vec![vec![vec![0.0; m_n]; k_n]; g_n];
        let mut count = vec![vec![vec![0usize; m_n]; k_n]; g_n];

        for (i, subject) in self.data.subjects.iter().enumerate() {
            for (k, series) in subject.markers.iter().enumerate() {
                let noise_base = {
                    let se = self.theta.sigma_e[k];
                    let su = self.theta.sigma_u[k].unwrap_or(0.0);
                    se * se + su * su
                };
                for (&t, &y) in series.times.iter().zip(&series.values) {
                    let Some(m_ix) = interval_of(t) else { continue };
                    let sd = (noise_base
                        + autocorr_cov(self.spec.autocorr, &self.theta.sigma_w, t, t))
                    .sqrt();
                    for g in 0..g_n {
                        let w = self.posteriors[i][g];
                        let mean = self.latent_mean(
                            subject,
                            &latent_ix,
                            &contrast_ix,
                            g,
                            k,
                            t,
                            &self.components.eb_deviations[i][g],
                        );
                        let predicted =
                            expected_observed(&links[k], &self.theta.eta[k], mean, sd, rule)?;
                        weight[g][k][m_ix] += w;
                        pred[g][k][m_ix] += w * predicted;
                        obs[g][k][m_ix] += w * y;
                        count[g][k][m_ix] += 1;
                    }
                }
            }
        }

        let mut cells = Vec::new();
        let mut empty_cells = Vec::new();
        for g in 0..g_n {
            for k in 0..k_n {
                for m in 0..m_n {
                    if count[g][k][m] == 0 || weight[g][k][m] <= 0.0 {
                        empty_cells.push((g, k, m));
                        continue;
                    }
                    cells.push(GofCell {
                        class: g,
                        marker: k,
                        interval_lower: bounds[m],
                        interval_upper: bounds[m + 1],
                        predicted: pred[g][k][m] / weight[g][k][m],
                        observed: obs[g][k][m] / weight[g][k][m],
                        weight: weight[g][k][m],
                        n_obs: count[g][k][m],
                    });
                }
            }
        }
        Ok(GofTable { cells, empty_cells })
    }

    /// Expected latent level for one measurement: covariate effects,
    /// class mean plus empirical-Bayes deviation through the time basis,
    /// and any marker-specific contrasts.
    fn latent_mean(
        &self,
        subject: &SubjectRecord,
        latent_ix: &[usize],
        contrast_ix: &[usize],
        g: usize,
        k: usize,
        t: f64,
        eb: &[f64],
    ) -> f64 {
        let mut mean = 0.0;
        for (c, &ix) in latent_ix.iter().enumerate() {
            mean += class_coef(&self.theta.beta[c], g) * subject.covariates[ix];
        }
        for (f, (mu, dev)) in self
            .spec
            .random_effect_basis
            .functions
            .iter()
            .zip(self.theta.mu[g].iter().zip(eb))
        {
            mean += f.eval(t) * (mu + dev);
        }
        for (c, &ix) in contrast_ix.iter().enumerate() {
            mean += self.theta.gamma[k][c] * subject.covariates[ix];
        }
        mean
    }
}

/// Softmax of the class-wise complete log-densities. The delayed-entry
/// correction is a class marginal, so it cancels in the normalization.
fn posterior_rows(components: &Components) -> Vec<Vec<f64>> {
    components
        .ln_membership
        .iter()
        .zip(&components.ln_longitudinal)
        .zip(&components.ln_event)
        .map(|((lm, ly), le)| {
            let joint: Vec<f64> = lm
                .iter()
                .zip(ly)
                .zip(le)
                .map(|((a, b), c)| a + b + c)
                .collect();
            let lse = log_sum_exp(&joint);
            joint.iter().map(|v| (v - lse).exp()).collect()
        })
        .collect()
}

/// `U^T Var(U)^{-1} U` with `Var(U)` the centered empirical covariance
/// of the per-subject contribution rows, plus its chi-square p-value.
fn quadratic_score_statistic(contributions: &DMatrix<f64>) -> Result<TestComponent> {
    let (n, d) = contributions.shape();
    if n < 2 {
        return Err(Error::Domain(
            "the score test needs at least two subjects".into(),
        ));
    }
    let u = DVector::from_iterator(d, (0..d).map(|c| contributions.column(c).sum()));
    let mean = &u / n as f64;
    let mut var = DMatrix::zeros(d, d);
    for i in 0..n {
        let centered = contributions.row(i).transpose() - &mean;
        var += &centered * centered.transpose();
    }
    let chol = Cholesky::new(var).ok_or_else(|| {
        Error::Numeric(
            "empirical variance of the score contributions is singular; \
             more subjects or fewer shared random effects are needed"
                .into(),
        )
    })?;
    let statistic = (u.transpose() * chol.solve(&u))[(0, 0)].max(0.0);
    Ok(TestComponent {
        statistic,
        df: d,
        p_value: chi_square_sf(statistic, d as f64)?,
    })
}

/// Expected observed-scale value of a marker given the latent mean and
/// the residual noise SD: exact probit sums for threshold links, a
/// Gauss-Hermite average of the forward transform otherwise.
fn expected_observed(
    link: &PreparedLink,
    eta: &[f64],
    mean: f64,
    sd: f64,
    rule: &crate::numerics::QuadratureRule,
) -> Result<f64> {
    match link.family() {
        LinkFamily::Threshold { max_level } => {
            let mut acc = 0.0;
            for level in 1..=*max_level {
                acc += level as f64 * link.ordinal_density(eta, level, mean, sd)?;
            }
            Ok(acc)
        }
        _ => {
            let mut acc = 0.0;
            let scale = std::f64::consts::SQRT_2 * sd;
            for (&x, &w) in rule.nodes.iter().zip(&rule.weights) {
                acc += w * link.forward(eta, mean + scale * x)?;
            }
            Ok(acc / std::f64::consts::PI.sqrt())
        }
    }
}

/// Probability of an event of the given cause (1-based) inside
/// `(landmark, landmark + horizon]`, conditional on being event-free at
/// the landmark and on the marker history up to it:
///
/// ```text
/// sum_g pi_g f(history | g) S_g(s) CIF_g(s, s + t)
/// -----------------------------------------------
///      sum_g pi_g f(history | g) S_g(s)
/// ```
///
/// Measurements taken exactly at the landmark count as history. With no
/// history at all the marker density drops out and the prediction is
/// covariate-only, which the result flags.
pub fn dynamic_prediction(
    spec: &ModelSpec,
    data: &Dataset,
    subject: usize,
    theta: &ParameterVector,
    opts: &LikelihoodOptions,
    landmark: f64,
    horizon: f64,
    cause: usize,
) -> Result<Prediction> {
    let p_n = spec.n_causes();
    if cause == 0 || cause > p_n {
        return Err(Error::Domain(format!(
            "cause {cause} outside the model's 1..={p_n} range"
        )));
    }
    if horizon < 0.0 {
        return Err(Error::Domain("prediction horizon must be nonnegative".into()));
    }
    let record = data
        .subjects
        .get(subject)
        .ok_or_else(|| Error::Domain(format!("no subject at index {subject}")))?;
    if record.time <= landmark {
        return Err(Error::Domain(format!(
            "subject {} is no longer event-free at the landmark {landmark}",
            record.id
        )));
    }

    // Class priors from the membership covariates.
    let member_vals = spec
        .membership_covariates
        .iter()
        .map(|name| Ok(record.covariates[data.covariate_index(name)?]))
        .collect::<Result<Vec<f64>>>()?;
    let ln_prior: Vec<f64> = theta
        .membership_probs(&member_vals)?
        .iter()
        .map(|p| p.ln())
        .collect();

    // Marker-history densities per class.
    let history: Vec<MarkerSeries> = record
        .markers
        .iter()
        .map(|series| {
            let keep = series.times.partition_point(|&t| t <= landmark);
            MarkerSeries {
                times: series.times[..keep].to_vec(),
                values: series.values[..keep].to_vec(),
            }
        })
        .collect();
    let used_measurements: usize = history.iter().map(|s| s.times.len()).sum();
    let covariate_only = used_measurements == 0;
    let ln_history = if covariate_only {
        vec![0.0; spec.n_classes]
    } else {
        let trimmed = Dataset {
            covariate_names: data.covariate_names.clone(),
            marker_names: data.marker_names.clone(),
            subjects: vec![SubjectRecord {
                id: record.id.clone(),
                entry: 0.0,
                time: landmark,
                cause: 0,
                covariates: record.covariates.clone(),
                markers: history,
            }],
        };
        let evaluator = Evaluator::new(spec, &trimmed, opts.clone())?;
        let mut components = evaluator.components(theta)?;
        components.ln_longitudinal.swap_remove(0)
    };

    let hazard_vals = spec
        .hazard_covariates
        .iter()
        .map(|c| Ok(record.covariates[data.covariate_index(&c.name)?]))
        .collect::<Result<Vec<f64>>>()?;
    let hazards = Hazards::new(spec)?;
    let mut ln_num = Vec::with_capacity(spec.n_classes);
    let mut ln_den = Vec::with_capacity(spec.n_classes);
    for g in 0..spec.n_classes {
        let class = ClassHazard::assemble(spec, theta, g, &hazard_vals);
        let survival = hazards.survival(&class, landmark);
        let base = ln_prior[g] + ln_history[g] + survival.ln();
        let incidence = if survival > 0.0 {
            hazards.cumulative_incidence(&class, cause - 1, landmark, landmark + horizon)?
        } else {
            0.0
        };
        ln_num.push(base + incidence.ln());
        ln_den.push(base);
    }
    let estimate = (log_sum_exp(&ln_num) - log_sum_exp(&ln_den)).exp();
    Ok(Prediction {
        estimate,
        used_measurements,
        covariate_only,
    })
}

/// Dynamic prediction with a parametric-bootstrap band: `draws`
/// parameter vectors are sampled from the asymptotic normal law of the
/// estimates, the prediction is recomputed under each, and the band
/// reports the median and the 2.5/97.5 percentiles alongside the
/// plug-in estimate.
#[allow(clippy::too_many_arguments)]
pub fn dynamic_prediction_band(
    fit: &FitResult,
    spec: &ModelSpec,
    data: &Dataset,
    subject: usize,
    opts: &LikelihoodOptions,
    landmark: f64,
    horizon: f64,
    cause: usize,
    draws: usize,
    seed: u64,
) -> Result<PredictionBand> {
    if draws < 2 {
        return Err(Error::Domain("a band needs at least two draws".into()));
    }
    let point = dynamic_prediction(
        spec, data, subject, &fit.theta, opts, landmark, horizon, cause,
    )?;
    let covariance = asymptotic_covariance(fit)?;
    let scale = Cholesky::new(covariance).ok_or_else(|| {
        Error::Numeric("parameter covariance is not positive definite".into())
    })?;
    let np = fit.free.len();
    let estimates: Vec<f64> = (0..draws)
        .into_par_iter()
        .map(|m| {
            let mut rng =
                rand_chacha::ChaCha12Rng::seed_from_u64(stream_seed(seed, &[m as u64]));
            let z = DVector::from_iterator(
                np,
                (0..np).map(|_| StandardNormal.sample(&mut rng)),
            );
            let shifted = DVector::from_column_slice(&fit.free) + scale.l() * z;
            let theta = ParameterVector::unpack(spec, shifted.as_slice())?;
            dynamic_prediction(
                spec, data, subject, &theta, opts, landmark, horizon, cause,
            )
            .map(|p| p.estimate)
        })
        .collect::<Result<Vec<f64>>>()?;
    let mut sorted = estimates;
    sorted.sort_by(f64::total_cmp);
    Ok(PredictionBand {
        estimate: point.estimate,
        median: percentile(&sorted, 0.5),
        lower: percentile(&sorted, 0.025),
        upper: percentile(&sorted, 0.975),
        covariate_only: point.covariate_only,
    })
}

/// Linear-interpolated percentile of an ascending slice.
fn percentile(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = h.ceil() as usize;
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Aalen-Johansen cumulative-incidence estimator for the given cause
/// (1-based) with per-subject weights and delayed entry: at each event
/// time the cause-specific hazard increment is the weighted events over
/// the weighted risk set (entered but not yet exited), and the
/// incidence accumulates overall-survival times increment.
pub fn weighted_nonparametric_cif(
    data: &Dataset,
    weights: &[f64],
    cause: usize,
) -> Result<StepFunction> {
    if cause == 0 {
        return Err(Error::Domain("cause must be 1-based".into()));
    }
    if weights.len() != data.subjects.len() {
        return Err(Error::Domain(format!(
            "{} weights for {} subjects",
            weights.len(),
            data.subjects.len()
        )));
    }
    if weights.iter().any(|w| !(0.0..=1.0).contains(w)) {
        return Err(Error::Domain("weights must lie in [0, 1]".into()));
    }
    if weights.iter().sum::<f64>() <= 0.0 {
        return Err(Error::Domain("all subject weights are zero".into()));
    }
    let mut event_times: Vec<f64> = data
        .subjects
        .iter()
        .filter(|s| s.cause > 0)
        .map(|s| s.time)
        .collect();
    event_times.sort_by(f64::total_cmp);
    event_times.dedup();

    let mut survival = 1.0;
    let mut incidence = 0.0;
    let mut times = Vec::with_capacity(event_times.len());
    let mut values = Vec::with_capacity(event_times.len());
    for &t in &event_times {
        let mut at_risk = 0.0;
        let mut jump_all = 0.0;
        let mut jump_cause = 0.0;
        for (s, &w) in data.subjects.iter().zip(weights) {
            if s.entry < t && t <= s.time {
                at_risk += w;
                if s.time == t && s.cause > 0 {
                    jump_all += w;
                    if s.cause == cause {
                        jump_cause += w;
                    }
                }
            }
        }
        if at_risk <= 0.0 {
            continue;
        }
        incidence += survival * jump_cause / at_risk;
        survival *= 1.0 - jump_all / at_risk;
        times.push(t);
        values.push(incidence);
    }
    Ok(StepFunction { times, values })
}
