//! Left-truncated joint log-likelihood over latent classes.
//!
//! Each subject contributes `log L_i - log S_i(entry)`, where
//!
//! ```text
//! L_i = sum_g P(class = g | covariates)
//!       * f(markers | class = g)
//!       * f(event time, cause | class = g)
//! ```
//!
//! and `S_i(entry)` is the marginal probability of being event-free at the
//! delayed-entry time, so that subjects recruited conditional on survival
//! do not bias the hazards. With entry at 0 the correction term is skipped
//! entirely, making truncated and untruncated values identical.
//!
//! The marker density `f(markers | g)` has two evaluation paths:
//!
//! - **closed form** when every marker has a continuous link: the
//!   transformed observations are jointly normal, so one multivariate
//!   normal density (plus transformation Jacobians) suffices;
//! - **quadrature** when any marker is ordinal or bounded: the shared
//!   random effects are integrated by a tensor-product Gauss-Hermite rule,
//!   with a nested one-dimensional rule for each discrete marker's own
//!   random intercept. Conditional on the shared effects, continuous
//!   markers keep a compound-symmetry closed form driven by per-marker
//!   sufficient statistics, ordinal markers contribute probit interval
//!   probabilities, and bounded markers mix edge masses with interior
//!   densities.
//!
//! The stacked observation vector is ordered marker-major (all of marker
//! 1's measurements in time order, then marker 2's, and so on). All
//! accumulation is in the log domain; class sums use log-sum-exp.
//!
//! Finite-difference optimization probes often move only the event-side
//! parameters, so the evaluator caches per-subject, per-class marker
//! log-densities keyed by the bit pattern of the parameters that can
//! affect them.

use crate::data::Dataset;
use crate::error::Error;
use crate::hazards::{ClassHazard, Hazards};
use crate::links::{LinkFamily, PreparedLink};
use crate::model::{class_coef, Autocorr, CovariateSpec, ModelSpec, ParameterVector};
use crate::numerics::{fast_phi, fast_phi_interval, gauss_hermite, log_sum_exp};
use crate::structural::{
    random_effect_covariance, stacked_covariance, stacked_mean, variance_scale,
};
use crate::Result;
use nalgebra::{Cholesky, DVector};
use serde::{Deserialize, Serialize};
use rayon::prelude::*;
use std::collections::HashMap;
use std::sync::{Arc, Mutex};

const LN_2PI: f64 = 1.837_877_066_409_345_3;
const LN_PI: f64 = 1.144_729_885_849_400_2;

/// Probability products are flushed into the log accumulator below this
/// threshold so long series of small interval probabilities cannot
/// underflow to zero.
const PRODUCT_FLUSH: f64 = 1e-280;

/// The marker-density cache is cleared once it grows past this size (one
/// optimizer iteration needs far fewer distinct entries).
const CACHE_CAP: usize = 4096;

/// Tuning knobs for likelihood evaluation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LikelihoodOptions {
    /// Gauss-Hermite nodes per random-effect dimension (and for each
    /// nested random-intercept integral). At least 3.
    pub hermite_nodes: usize,
    /// Apply the delayed-entry correction (subtract the log marginal
    /// survival at the entry time). On by default.
    pub truncation: bool,
    /// Evaluate subjects in parallel (the reduction order is fixed either
    /// way, so results are identical).
    pub parallel: bool,
    /// Send all-continuous models through the quadrature path instead of
    /// the closed form (used to cross-validate the two branches; requires
    /// no serial correlation).
    pub force_quadrature: bool,
}

impl Default for LikelihoodOptions {
    fn default() -> Self {
        Self {
            hermite_nodes: 15,
            truncation: true,
            parallel: true,
            force_quadrature: false,
        }
    }
}

/// Which marker-density path the evaluator uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Branch {
    Closed,
    Quadrature,
}

/// Per-subject, per-class pieces of the likelihood, for post-fit use
/// (posterior classification, score tests, goodness of fit).
#[derive(Debug, Clone)]
pub struct Components {
    /// log P(class = g | membership covariates); subject by class.
    pub ln_membership: Vec<Vec<f64>>,
    /// log f(markers | g); subject by class.
    pub ln_longitudinal: Vec<Vec<f64>>,
    /// log f(event data | g); subject by class. Zero when no causes.
    pub ln_event: Vec<Vec<f64>>,
    /// log S(entry | g); subject by class. Zero when entry is 0.
    pub ln_entry_survival: Vec<Vec<f64>>,
    /// Cause-specific cumulative hazards at the subject's event or
    /// censoring time, covariate effects applied; subject by class by
    /// cause.
    pub cumulative_hazards: Vec<Vec<Vec<f64>>>,
    /// Empirical-Bayes deviations E[u | markers, g] - mean_g of the
    /// shared random effects; subject by class by dimension.
    pub eb_deviations: Vec<Vec<Vec<f64>>>,
    /// Per-subject log-likelihood contributions (entry-corrected).
    pub contributions: Vec<f64>,
}

/// How one bounded-marker measurement enters the likelihood.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum BoundedObs {
    /// Exactly at the lower bound: probit mass below the floor cut.
    Floor,
    /// Exactly at the upper bound: probit mass above the ceiling cut.
    Ceil,
    /// Interior value: transformed normal density times Jacobian.
    Interior,
}

/// Precomputed per-marker observation block for one subject.
#[derive(Debug, Clone)]
struct PrepMarker {
    n: usize,
    values: Vec<f64>,
    /// Random-effect design rows, row-major `n x r`.
    z: Vec<f64>,
    /// Design column sums `sum_a z_a` (continuous markers), length `r`.
    sz: Vec<f64>,
    /// Design Gram matrix `sum_a z_a z_a^T` (continuous markers),
    /// row-major `r x r`.
    szz: Vec<f64>,
    kind: PrepKind,
}

#[derive(Debug, Clone)]
enum PrepKind {
    Continuous,
    /// Threshold index bounds per measurement (`None` marks the open ends
    /// of the scale).
    Ordinal {
        lo_idx: Vec<Option<usize>>,
        hi_idx: Vec<Option<usize>>,
    },
    Bounded {
        classes: Vec<BoundedObs>,
        n_interior: usize,
    },
}

/// One subject, reshaped for fast likelihood evaluation.
#[derive(Debug, Clone)]
struct Prepared {
    entry: f64,
    time: f64,
    cause: usize,
    latent_x: Vec<f64>,
    contrast_x: Vec<f64>,
    hazard_x: Vec<f64>,
    member_x: Vec<f64>,
    /// Marker-major stacked (marker, time) pairs.
    stacked: Vec<(usize, f64)>,
    /// Design rows for the stacked order, row-major `total x r`.
    z_rows: Vec<f64>,
    markers: Vec<PrepMarker>,
    total_obs: usize,
}

/// Class-independent, per-theta view of one marker's measurements.
enum StageMarker {
    /// Transformed-value sums for the conditional normal: `sum v`,
    /// `sum v^2`, `sum v z_a`.
    Continuous { sv: f64, svv: f64, svz: Vec<f64> },
    /// Resolved threshold bounds per measurement.
    Ordinal { lo: Vec<f64>, hi: Vec<f64> },
    /// Per measurement: the edge cut (floor/ceiling) or the transformed
    /// interior value.
    Bounded { vals: Vec<f64> },
}

/// Per-theta context shared across subjects on the quadrature branch.
#[derive(Default)]
struct QuadCtx {
    /// `sqrt(2) * L z_q`, row-major `n_nodes x r`.
    s: Vec<f64>,
    /// Transformed lower/upper cuts per bounded marker.
    bounded_cuts: Vec<Option<(f64, f64)>>,
}

/// Reusable evaluator bound to one model and one dataset.
pub struct Evaluator<'a> {
    spec: &'a ModelSpec,
    data: &'a Dataset,
    opts: LikelihoodOptions,
    links: Vec<PreparedLink>,
    hazards: Hazards,
    branch: Branch,
    prepared: Vec<Prepared>,
    /// Tensor-product node coordinates, row-major `n_nodes x r` (empty on
    /// the closed branch).
    grid_z: Vec<f64>,
    /// Log combined weight per tensor node; exponentials sum to 1.
    grid_lnw: Vec<f64>,
    /// Standardized nodes and log weights of the nested one-dimensional
    /// rule for marker random intercepts.
    inner_z: Vec<f64>,
    inner_lnw: Vec<f64>,
    cache: Mutex<HashMap<Vec<u64>, Arc<Vec<f64>>>>,
}

impl<'a> Evaluator<'a> {
    pub fn new(spec: &'a ModelSpec, data: &'a Dataset, opts: LikelihoodOptions) -> Result<Self> {
        spec.validate()?;
        data.validate(spec)?;
        if opts.hermite_nodes < 3 {
            return Err(Error::Domain(
                "at least 3 quadrature nodes per dimension are required".into(),
            ));
        }
        let branch = if spec.has_discrete_marker() || opts.force_quadrature {
            if spec.autocorr != Autocorr::None {
                return Err(Error::Domain(
                    "the quadrature path factorizes measurements given the random \
                     effects and cannot represent serial correlation"
                        .into(),
                ));
            }
            Branch::Quadrature
        } else {
            Branch::Closed
        };
        let links = spec
            .markers
            .iter()
            .map(|m| PreparedLink::new(&m.link))
            .collect::<Result<Vec<_>>>()?;
        let hazards = Hazards::new(spec)?;
        let rule = gauss_hermite(opts.hermite_nodes)?;
        let (grid_z, grid_lnw) = if branch == Branch::Quadrature {
            tensor_grid(&rule.nodes, &rule.weights, spec.random_dim())
        } else {
            (Vec::new(), Vec::new())
        };
        let inner_z = rule.nodes.clone();
        let inner_lnw: Vec<f64> = rule.weights.iter().map(|w| w.ln() - 0.5 * LN_PI).collect();
        let prepared = prepare_subjects(spec, data)?;
        Ok(Self {
            spec,
            data,
            opts,
            links,
            hazards,
            branch,
            prepared,
            grid_z,
            grid_lnw,
            inner_z,
            inner_lnw,
            cache: Mutex::new(HashMap::new()),
        })
    }

    pub fn spec(&self) -> &ModelSpec {
        self.spec
    }

    pub fn data(&self) -> &Dataset {
        self.data
    }

    pub fn options(&self) -> &LikelihoodOptions {
        &self.opts
    }

    #[cfg(test)]
    fn cached_entries(&self) -> usize {
        self.cache.lock().unwrap().len()
    }

    /// Total left-truncated log-likelihood.
    pub fn log_likelihood(&self, theta: &ParameterVector) -> Result<f64> {
        Ok(self.contributions(theta)?.iter().sum())
    }

    /// Per-subject log-likelihood contributions, in dataset order.
    pub fn contributions(&self, theta: &ParameterVector) -> Result<Vec<f64>> {
        theta.check_shape(self.spec)?;
        let lfy = self.marker_log_densities(theta)?;
        let g_count = self.spec.n_classes;
        let mut out = Vec::with_capacity(self.prepared.len());
        let mut num = vec![0.0; g_count];
        let mut den = vec![0.0; g_count];
        for (i, prep) in self.prepared.iter().enumerate() {
            let probs = theta.membership_probs(&prep.member_x)?;
            let correct_entry =
                self.opts.truncation && prep.entry > 0.0 && self.spec.n_causes() > 0;
            for g in 0..g_count {
                let ln_pi = probs[g].ln();
                let (ln_ft, ln_s0, _) = self.event_terms(theta, prep, g);
                num[g] = ln_pi + lfy[i * g_count + g] + ln_ft;
                if correct_entry {
                    den[g] = ln_pi + ln_s0;
                }
            }
            let mut c = log_sum_exp(&num);
            if correct_entry {
                c -= log_sum_exp(&den);
            }
            out.push(c);
        }
        Ok(out)
    }

    /// Full per-subject, per-class breakdown for post-fit analyses.
    pub fn components(&self, theta: &ParameterVector) -> Result<Components> {
        theta.check_shape(self.spec)?;
        let g_count = self.spec.n_classes;
        let r = self.spec.random_dim();
        let n = self.prepared.len();
        let evaluated = self.run_subjects(theta, true)?;
        let mut comp = Components {
            ln_membership: Vec::with_capacity(n),
            ln_longitudinal: Vec::with_capacity(n),
            ln_event: Vec::with_capacity(n),
            ln_entry_survival: Vec::with_capacity(n),
            cumulative_hazards: Vec::with_capacity(n),
            eb_deviations: Vec::with_capacity(n),
            contributions: Vec::with_capacity(n),
        };
        for (prep, (lfy, eb)) in self.prepared.iter().zip(evaluated) {
            let probs = theta.membership_probs(&prep.member_x)?;
            let ln_pi: Vec<f64> = probs.iter().map(|p| p.ln()).collect();
            let mut ln_ft = vec![0.0; g_count];
            let mut ln_s0 = vec![0.0; g_count];
            let mut cum = Vec::with_capacity(g_count);
            for g in 0..g_count {
                let (ft, s0, c) = self.event_terms(theta, prep, g);
                ln_ft[g] = ft;
                ln_s0[g] = s0;
                cum.push(c);
            }
            let num: Vec<f64> = (0..g_count)
                .map(|g| ln_pi[g] + lfy[g] + ln_ft[g])
                .collect();
            let mut contribution = log_sum_exp(&num);
            if self.opts.truncation && prep.entry > 0.0 && self.spec.n_causes() > 0 {
                let den: Vec<f64> = (0..g_count).map(|g| ln_pi[g] + ln_s0[g]).collect();
                contribution -= log_sum_exp(&den);
            }
            comp.ln_membership.push(ln_pi);
            comp.ln_longitudinal.push(lfy);
            comp.ln_event.push(ln_ft);
            comp.ln_entry_survival.push(ln_s0);
            comp.cumulative_hazards.push(cum);
            comp.eb_deviations
                .push(eb.chunks(r).map(|c| c.to_vec()).collect());
            comp.contributions.push(contribution);
        }
        Ok(comp)
    }

    /// Per-subject, per-class marker log-densities (`n * G`,
    /// subject-major), cached under the bit signature of the parameters
    /// that can affect them.
    fn marker_log_densities(&self, theta: &ParameterVector) -> Result<Arc<Vec<f64>>> {
        let key = marker_signature(theta);
        if let Some(hit) = self.cache.lock().unwrap().get(&key) {
            return Ok(hit.clone());
        }
        let evaluated = self.run_subjects(theta, false)?;
        let g_count = self.spec.n_classes;
        let mut flat = Vec::with_capacity(evaluated.len() * g_count);
        for (lfy, _) in &evaluated {
            flat.extend_from_slice(lfy);
        }
        let arc = Arc::new(flat);
        let mut map = self.cache.lock().unwrap();
        if map.len() >= CACHE_CAP {
            map.clear();
        }
        map.insert(key, arc.clone());
        Ok(arc)
    }

    /// Evaluate every subject's marker log-densities (and, if requested,
    /// empirical-Bayes deviations), in dataset order.
    #[allow(clippy::type_complexity)]
    fn run_subjects(
        &self,
        theta: &ParameterVector,
        want_eb: bool,
    ) -> Result<Vec<(Vec<f64>, Vec<f64>)>> {
        for (k, sd) in theta.sigma_e.iter().enumerate() {
            if !(*sd > 0.0) {
                return Err(Error::Domain(format!(
                    "measurement error SD of marker {} must be positive",
                    self.spec.markers[k].name
                )));
            }
        }
        let ctx = self.theta_context(theta)?;
        let eval_one = |(prep, id): (&Prepared, &str)| -> Result<(Vec<f64>, Vec<f64>)> {
            let res = match self.branch {
                Branch::Closed => self.closed_subject(theta, prep, want_eb),
                Branch::Quadrature => self.quadrature_subject(theta, &ctx, prep, want_eb),
            };
            res.map_err(|e| Error::Numeric(format!("subject {id}: {e}")))
        };
        let pairs: Vec<(&Prepared, &str)> = self
            .prepared
            .iter()
            .zip(&self.data.subjects)
            .map(|(p, s)| (p, s.id.as_str()))
            .collect();
        if self.opts.parallel {
            pairs.into_par_iter().map(eval_one).collect()
        } else {
            pairs.into_iter().map(eval_one).collect()
        }
    }

    /// Shared per-theta quantities for the quadrature branch.
    fn theta_context(&self, theta: &ParameterVector) -> Result<QuadCtx> {
        if self.branch == Branch::Closed {
            return Ok(QuadCtx::default());
        }
        let r = self.spec.random_dim();
        let nq = self.grid_lnw.len();
        let mut s = vec![0.0; nq * r];
        for q in 0..nq {
            let z = &self.grid_z[q * r..(q + 1) * r];
            for i in 0..r {
                let mut acc = 0.0;
                for (j, lij) in theta.b_chol[i].iter().enumerate() {
                    acc += lij * z[j];
                }
                s[q * r + i] = std::f64::consts::SQRT_2 * acc;
            }
        }
        let mut bounded_cuts = vec![None; self.spec.n_markers()];
        for (k, marker) in self.spec.markers.iter().enumerate() {
            if let LinkFamily::Bounded { range, .. } = marker.link {
                let lo = self.links[k].inverse(&theta.eta[k], range.0)?;
                let hi = self.links[k].inverse(&theta.eta[k], range.1)?;
                bounded_cuts[k] = Some((lo, hi));
            }
        }
        Ok(QuadCtx { s, bounded_cuts })
    }

    /// Closed-form branch: one multivariate normal per class over the
    /// stacked transformed observations.
    fn closed_subject(
        &self,
        theta: &ParameterVector,
        prep: &Prepared,
        want_eb: bool,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let g_count = self.spec.n_classes;
        let r = self.spec.random_dim();
        let total = prep.total_obs;
        // Transformed observations and Jacobians are class-independent.
        let mut v = DVector::zeros(total);
        let mut ln_jac = 0.0;
        let mut at = 0;
        for (k, m) in prep.markers.iter().enumerate() {
            for a in 0..m.n {
                v[at] = self.links[k].inverse(&theta.eta[k], m.values[a])?;
                ln_jac += self.links[k].jacobian(&theta.eta[k], m.values[a])?.ln();
                at += 1;
            }
        }
        let mut lfy = vec![0.0; g_count];
        let mut eb = if want_eb { vec![0.0; g_count * r] } else { Vec::new() };
        for g in 0..g_count {
            let mean = stacked_mean(
                self.spec,
                theta,
                g,
                &prep.stacked,
                &prep.latent_x,
                &prep.contrast_x,
            );
            let cov = stacked_covariance(self.spec, theta, g, &prep.stacked);
            let chol = Cholesky::new(cov).ok_or_else(|| {
                Error::Numeric(
                    "stacked observation covariance is not positive definite".into(),
                )
            })?;
            let resid = &v - mean;
            let weights = chol.solve(&resid);
            let logdet: f64 = 2.0
                * (0..total)
                    .map(|i| chol.l_dirty()[(i, i)].ln())
                    .sum::<f64>();
            lfy[g] = -0.5 * (total as f64 * LN_2PI + logdet + resid.dot(&weights)) + ln_jac;
            if want_eb {
                // E[u | markers, g] - mean_g = B_g Z^T V^{-1} (v - mean).
                let bg = random_effect_covariance(theta, g);
                let mut ztw = vec![0.0; r];
                for (a, w) in weights.iter().enumerate() {
                    for j in 0..r {
                        ztw[j] += prep.z_rows[a * r + j] * w;
                    }
                }
                for i in 0..r {
                    eb[g * r + i] = (0..r).map(|j| bg[(i, j)] * ztw[j]).sum();
                }
            }
        }
        Ok((lfy, eb))
    }

    /// Quadrature branch: tensor Gauss-Hermite over the shared random
    /// effects, with per-marker conditional factors at each node.
    fn quadrature_subject(
        &self,
        theta: &ParameterVector,
        ctx: &QuadCtx,
        prep: &Prepared,
        want_eb: bool,
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        let g_count = self.spec.n_classes;
        let r = self.spec.random_dim();
        let nq = self.grid_lnw.len();
        // Stage 1 (class-independent): transforms, bounds, sufficient
        // statistics, and every node-independent log term.
        let mut stage = Vec::with_capacity(prep.markers.len());
        let mut ln_const = 0.0;
        for (k, m) in prep.markers.iter().enumerate() {
            let se = theta.sigma_e[k];
            match &m.kind {
                PrepKind::Continuous => {
                    let mut sv = 0.0;
                    let mut svv = 0.0;
                    let mut svz = vec![0.0; r];
                    for a in 0..m.n {
                        let va = self.links[k].inverse(&theta.eta[k], m.values[a])?;
                        ln_const += self.links[k].jacobian(&theta.eta[k], m.values[a])?.ln();
                        sv += va;
                        svv += va * va;
                        for j in 0..r {
                            svz[j] += va * m.z[a * r + j];
                        }
                    }
                    if m.n > 0 {
                        let nf = m.n as f64;
                        let su2 = theta.sigma_u[k].unwrap_or(0.0).powi(2);
                        // Compound-symmetry log-determinant: the marker's
                        // random intercept adds rank one to sigma_e^2 I.
                        ln_const += -0.5 * nf * LN_2PI
                            - 0.5 * (nf - 1.0) * (se * se).ln()
                            - 0.5 * (se * se + nf * su2).ln();
                    }
                    stage.push(StageMarker::Continuous { sv, svv, svz });
                }
                PrepKind::Ordinal { lo_idx, hi_idx } => {
                    let tau = &theta.eta[k];
                    let lo = lo_idx
                        .iter()
                        .map(|i| i.map_or(f64::NEG_INFINITY, |j| tau[j]))
                        .collect();
                    let hi = hi_idx
                        .iter()
                        .map(|i| i.map_or(f64::INFINITY, |j| tau[j]))
                        .collect();
                    stage.push(StageMarker::Ordinal { lo, hi });
                }
                PrepKind::Bounded {
                    classes,
                    n_interior,
                } => {
                    let (cut_lo, cut_hi) =
                        ctx.bounded_cuts[k].expect("bounded marker has transform cuts");
                    let mut vals = Vec::with_capacity(m.n);
                    for a in 0..m.n {
                        match classes[a] {
                            BoundedObs::Floor => vals.push(cut_lo),
                            BoundedObs::Ceil => vals.push(cut_hi),
                            BoundedObs::Interior => {
                                let va = self.links[k].inverse(&theta.eta[k], m.values[a])?;
                                ln_const +=
                                    self.links[k].jacobian(&theta.eta[k], m.values[a])?.ln();
                                vals.push(va);
                            }
                        }
                    }
                    ln_const += *n_interior as f64 * (-0.5 * LN_2PI - se.ln());
                    stage.push(StageMarker::Bounded { vals });
                }
            }
        }
        // Stage 2: per class, fold in the class's constant mean shifts and
        // sweep the nodes.
        let mut lfy = vec![0.0; g_count];
        let mut eb = if want_eb { vec![0.0; g_count * r] } else { Vec::new() };
        let mut ln_terms = vec![0.0; nq];
        let mut u = vec![0.0; r];
        let mut inner_buf = vec![0.0; self.inner_z.len()];
        for g in 0..g_count {
            let scale = variance_scale(theta, g);
            let latent_shift: f64 = prep
                .latent_x
                .iter()
                .enumerate()
                .map(|(ci, x)| class_coef(&theta.beta[ci], g) * x)
                .sum();
            let folded: Vec<FoldedMarker> = stage
                .iter()
                .zip(&prep.markers)
                .enumerate()
                .map(|(k, (sm, m))| {
                    let contrast_shift: f64 = prep
                        .contrast_x
                        .iter()
                        .enumerate()
                        .map(|(ci, x)| theta.gamma[k][ci] * x)
                        .sum();
                    let c = latent_shift + contrast_shift;
                    match sm {
                        StageMarker::Continuous { sv, svv, svz } => {
                            let nf = m.n as f64;
                            let se2 = theta.sigma_e[k] * theta.sigma_e[k];
                            let su2 = theta.sigma_u[k].unwrap_or(0.0).powi(2);
                            FoldedMarker::Continuous {
                                q0: svv - 2.0 * c * sv + nf * c * c,
                                q1: (0..r).map(|j| svz[j] - c * m.sz[j]).collect(),
                                esum0: sv - nf * c,
                                inv_se2: 1.0 / se2,
                                // Rank-one correction weight of the
                                // compound-symmetry inverse.
                                shrink: su2 / (se2 * (se2 + nf * su2)),
                            }
                        }
                        _ => FoldedMarker::Shift {
                            c,
                            inv_se: 1.0 / theta.sigma_e[k],
                            intercept_sd: theta.sigma_u[k],
                        },
                    }
                })
                .collect();
            for (q, term) in ln_terms.iter_mut().enumerate() {
                let s = &ctx.s[q * r..(q + 1) * r];
                for j in 0..r {
                    u[j] = theta.mu[g][j] + scale * s[j];
                }
                let mut acc = 0.0;
                for ((sm, fm), m) in stage.iter().zip(&folded).zip(&prep.markers) {
                    acc += node_term(sm, fm, m, &u, &self.inner_z, &self.inner_lnw, &mut inner_buf);
                }
                *term = self.grid_lnw[q] + acc;
            }
            let lse = log_sum_exp(&ln_terms);
            lfy[g] = lse + ln_const;
            if want_eb && lse.is_finite() {
                // Posterior mean of u - mean_g under the node weights.
                for (q, term) in ln_terms.iter().enumerate() {
                    let w = (term - lse).exp();
                    let s = &ctx.s[q * r..(q + 1) * r];
                    for j in 0..r {
                        eb[g * r + j] += w * scale * s[j];
                    }
                }
            }
        }
        Ok((lfy, eb))
    }

    /// Event-side terms for one subject and class: log event density, log
    /// survival at entry, and per-cause cumulative hazards at the event
    /// time (covariates applied).
    fn event_terms(
        &self,
        theta: &ParameterVector,
        prep: &Prepared,
        g: usize,
    ) -> (f64, f64, Vec<f64>) {
        let p_count = self.spec.n_causes();
        if p_count == 0 {
            return (0.0, 0.0, Vec::new());
        }
        let ch = ClassHazard::assemble(self.spec, theta, g, &prep.hazard_x);
        let mut cum = Vec::with_capacity(p_count);
        let mut ln_ft = 0.0;
        for p in 0..p_count {
            let a = self.hazards.cumulative(p, ch.nu[p], ch.lp[p], prep.time);
            ln_ft -= a;
            cum.push(a);
        }
        if prep.cause > 0 {
            let p = prep.cause - 1;
            ln_ft += self.hazards.log_hazard(p, ch.nu[p], ch.lp[p], prep.time);
        }
        let ln_s0 = if prep.entry > 0.0 {
            -(0..p_count)
                .map(|p| self.hazards.cumulative(p, ch.nu[p], ch.lp[p], prep.entry))
                .sum::<f64>()
        } else {
            0.0
        };
        (ln_ft, ln_s0, cum)
    }
}

/// Class-folded per-marker constants for one node sweep.
enum FoldedMarker {
    Continuous {
        q0: f64,
        q1: Vec<f64>,
        esum0: f64,
        inv_se2: f64,
        shrink: f64,
    },
    Shift {
        c: f64,
        inv_se: f64,
        intercept_sd: Option<f64>,
    },
}

/// One marker's conditional log term at one quadrature node.
fn node_term(
    sm: &StageMarker,
    fm: &FoldedMarker,
    m: &PrepMarker,
    u: &[f64],
    inner_z: &[f64],
    inner_lnw: &[f64],
    inner_buf: &mut [f64],
) -> f64 {
    match (sm, fm) {
        (
            StageMarker::Continuous { .. },
            FoldedMarker::Continuous {
                q0,
                q1,
                esum0,
                inv_se2,
                shrink,
            },
        ) => {
            let r = u.len();
            let mut uq1 = 0.0;
            let mut usz = 0.0;
            let mut uszzu = 0.0;
            for i in 0..r {
                uq1 += u[i] * q1[i];
                usz += u[i] * m.sz[i];
                for j in 0..r {
                    uszzu += u[i] * m.szz[i * r + j] * u[j];
                }
            }
            let ssr = q0 - 2.0 * uq1 + uszzu;
            let esum = esum0 - usz;
            -0.5 * (ssr * inv_se2 - shrink * esum * esum)
        }
        (
            StageMarker::Ordinal { lo, hi },
            FoldedMarker::Shift {
                c,
                inv_se,
                intercept_sd,
            },
        ) => match intercept_sd {
            None => ordinal_log_prob(lo, hi, &m.z, u, *c, *inv_se),
            Some(su) => {
                for (h, out) in inner_buf.iter_mut().enumerate() {
                    let ups = std::f64::consts::SQRT_2 * su * inner_z[h];
                    *out = inner_lnw[h] + ordinal_log_prob(lo, hi, &m.z, u, c + ups, *inv_se);
                }
                log_sum_exp(inner_buf)
            }
        },
        (
            StageMarker::Bounded { vals },
            FoldedMarker::Shift {
                c,
                inv_se,
                intercept_sd,
            },
        ) => {
            let classes = match &m.kind {
                PrepKind::Bounded { classes, .. } => classes,
                _ => unreachable!("bounded stage marker pairs with bounded prep"),
            };
            match intercept_sd {
                None => bounded_log_density(classes, vals, &m.z, u, *c, *inv_se),
                Some(su) => {
                    for (h, out) in inner_buf.iter_mut().enumerate() {
                        let ups = std::f64::consts::SQRT_2 * su * inner_z[h];
                        *out = inner_lnw[h]
                            + bounded_log_density(classes, vals, &m.z, u, c + ups, *inv_se);
                    }
                    log_sum_exp(inner_buf)
                }
            }
        }
        _ => unreachable!("stage and folded marker kinds always align"),
    }
}

/// Log probability of an ordinal series given the latent path `u` and a
/// constant mean shift: product of probit interval probabilities.
fn ordinal_log_prob(lo: &[f64], hi: &[f64], z: &[f64], u: &[f64], shift: f64, inv_se: f64) -> f64 {
    let r = u.len();
    let mut prod = 1.0;
    let mut ln_acc = 0.0;
    for a in 0..lo.len() {
        let mut mz = shift;
        for j in 0..r {
            mz += u[j] * z[a * r + j];
        }
        let p = fast_phi_interval((lo[a] - mz) * inv_se, (hi[a] - mz) * inv_se);
        if p <= 0.0 {
            return f64::NEG_INFINITY;
        }
        prod *= p;
        if prod < PRODUCT_FLUSH {
            ln_acc += prod.ln();
            prod = 1.0;
        }
    }
    ln_acc + prod.ln()
}

/// Log density of a bounded series given the latent path: edge
/// observations contribute probit masses, interior ones squared-error
/// terms (their normalization constants are accumulated elsewhere).
fn bounded_log_density(
    classes: &[BoundedObs],
    vals: &[f64],
    z: &[f64],
    u: &[f64],
    shift: f64,
    inv_se: f64,
) -> f64 {
    let r = u.len();
    let mut prod = 1.0;
    let mut ln_acc = 0.0;
    for a in 0..classes.len() {
        let mut mz = shift;
        for j in 0..r {
            mz += u[j] * z[a * r + j];
        }
        match classes[a] {
            BoundedObs::Floor => {
                let p = fast_phi((vals[a] - mz) * inv_se);
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                prod *= p;
            }
            BoundedObs::Ceil => {
                let p = fast_phi((mz - vals[a]) * inv_se);
                if p <= 0.0 {
                    return f64::NEG_INFINITY;
                }
                prod *= p;
            }
            BoundedObs::Interior => {
                let zz = (vals[a] - mz) * inv_se;
                ln_acc -= 0.5 * zz * zz;
            }
        }
        if prod < PRODUCT_FLUSH {
            ln_acc += prod.ln();
            prod = 1.0;
        }
    }
    ln_acc + prod.ln()
}

/// Tensor-product Gauss-Hermite grid over `r` dimensions: standardized
/// node coordinates (row-major) and log weights normalized so that the
/// exponentials sum to one.
fn tensor_grid(nodes: &[f64], weights: &[f64], r: usize) -> (Vec<f64>, Vec<f64>) {
    let m = nodes.len();
    let nq = m.pow(r as u32);
    let mut z = Vec::with_capacity(nq * r);
    let mut lnw = Vec::with_capacity(nq);
    for q in 0..nq {
        let mut rem = q;
        let mut w = -(r as f64) * 0.5 * LN_PI;
        for _ in 0..r {
            let idx = rem % m;
            rem /= m;
            z.push(nodes[idx]);
            w += weights[idx].ln();
        }
        lnw.push(w);
    }
    (z, lnw)
}

/// Bit signature of every parameter that can change the marker densities
/// (everything except class-membership and event-side parameters).
fn marker_signature(theta: &ParameterVector) -> Vec<u64> {
    fn push_all(sig: &mut Vec<u64>, values: &[f64]) {
        for v in values {
            sig.push(v.to_bits());
        }
    }
    let mut sig = Vec::new();
    for b in &theta.beta {
        push_all(&mut sig, b);
    }
    for m in &theta.mu {
        push_all(&mut sig, m);
    }
    for row in &theta.b_chol {
        push_all(&mut sig, row);
    }
    push_all(&mut sig, &theta.omega);
    push_all(&mut sig, &theta.sigma_w);
    for e in &theta.eta {
        push_all(&mut sig, e);
    }
    for gm in &theta.gamma {
        push_all(&mut sig, gm);
    }
    for su in &theta.sigma_u {
        match su {
            Some(v) => {
                sig.push(1);
                sig.push(v.to_bits());
            }
            None => sig.push(0),
        }
    }
    push_all(&mut sig, &theta.sigma_e);
    sig
}

/// Resolve covariate names of one model role to dataset columns.
fn name_indices(data: &Dataset, names: &[String]) -> Result<Vec<usize>> {
    names.iter().map(|n| data.covariate_index(n)).collect()
}

/// Resolve the named covariates of one model role to dataset columns.
fn role_indices(data: &Dataset, covs: &[CovariateSpec]) -> Result<Vec<usize>> {
    covs.iter().map(|c| data.covariate_index(&c.name)).collect()
}

/// Reshape every subject for evaluation: covariate role vectors, stacked
/// observation order, design rows, and per-marker observation kinds.
fn prepare_subjects(spec: &ModelSpec, data: &Dataset) -> Result<Vec<Prepared>> {
    let latent_ix = role_indices(data, &spec.latent_covariates)?;
    let contrast_ix = name_indices(data, &spec.contrast_covariates)?;
    let hazard_ix = role_indices(data, &spec.hazard_covariates)?;
    let member_ix = name_indices(data, &spec.membership_covariates)?;
    let r = spec.random_dim();
    let mut out = Vec::with_capacity(data.subjects.len());
    for subj in &data.subjects {
        let pick = |ix: &[usize]| ix.iter().map(|&i| subj.covariates[i]).collect::<Vec<_>>();
        let mut stacked = Vec::with_capacity(subj.total_measurements());
        let mut z_rows = Vec::with_capacity(subj.total_measurements() * r);
        let mut markers = Vec::with_capacity(spec.n_markers());
        for (k, series) in subj.markers.iter().enumerate() {
            let n = series.len();
            let mut z = Vec::with_capacity(n * r);
            for &t in &series.times {
                stacked.push((k, t));
                for f in &spec.random_effect_basis.functions {
                    let val = f.eval(t);
                    z.push(val);
                    z_rows.push(val);
                }
            }
            let mut sz = vec![0.0; r];
            let mut szz = vec![0.0; r * r];
            for a in 0..n {
                for i in 0..r {
                    sz[i] += z[a * r + i];
                    for j in 0..r {
                        szz[i * r + j] += z[a * r + i] * z[a * r + j];
                    }
                }
            }
            let kind = match &spec.markers[k].link {
                LinkFamily::Threshold { max_level } => {
                    let mut lo_idx = Vec::with_capacity(n);
                    let mut hi_idx = Vec::with_capacity(n);
                    for &y in &series.values {
                        let level = y.round() as usize;
                        lo_idx.push(if level == 0 { None } else { Some(level - 1) });
                        hi_idx.push(if level == *max_level { None } else { Some(level) });
                    }
                    PrepKind::Ordinal { lo_idx, hi_idx }
                }
                LinkFamily::Bounded { range, .. } => {
                    let classes: Vec<BoundedObs> = series
                        .values
                        .iter()
                        .map(|&y| {
                            if y == range.0 {
                                BoundedObs::Floor
                            } else if y == range.1 {
                                BoundedObs::Ceil
                            } else {
                                BoundedObs::Interior
                            }
                        })
                        .collect();
                    let n_interior = classes
                        .iter()
                        .filter(|c| **c == BoundedObs::Interior)
                        .count();
                    PrepKind::Bounded {
                        classes,
                        n_interior,
                    }
                }
                _ => PrepKind::Continuous,
            };
            markers.push(PrepMarker {
                n,
                values: series.values.clone(),
                z,
                sz,
                szz,
                kind,
            });
        }
        out.push(Prepared {
            entry: subj.entry,
            time: subj.time,
            cause: subj.cause,
            latent_x: pick(&latent_ix),
            contrast_x: pick(&contrast_ix),
            hazard_x: pick(&hazard_ix),
            member_x: pick(&member_ix),
            total_obs: stacked.len(),
            stacked,
            z_rows,
            markers,
        })
    }
    Ok(out)
}
