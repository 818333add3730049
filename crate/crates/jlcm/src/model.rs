//! Model specification and the constrained parameter vector.
//!
//! `ModelSpec` declares the structure of a joint latent-class model: how many
//! classes, which markers with which link families, which competing causes
//! with which baseline families, the random-effect time basis, and the
//! covariates attached to each submodel. `ParameterVector` holds one
//! structured set of values for such a specification, and converts to and
//! from the flat unconstrained vector the optimizer works on.
//!
//! Scale conventions for the structured vector:
//!
//! - Standard deviations (`sigma_e`, `sigma_u`, `sigma_w`, `omega`) and link
//!   parameters are stored on their natural scale: SDs positive, thresholds
//!   increasing, monotone-spline coefficients nonnegative.
//! - Baseline hazard parameters (`nu`) are stored on the unconstrained
//!   estimation scale; each baseline family documents its own positivity
//!   mapping (Weibull and piecewise heights exponentiate, spline baseline
//!   coefficients are squared).
//!
//! The flat vector applies: `log` to SDs and variance inflations, first
//! value + square-root increments to threshold grids, square roots to
//! monotone-spline coefficients, `log` to the beta-family shapes and scale
//! and to linear-link slopes. Fixed entries are excluded from the flat
//! vector entirely: the first class's random-intercept mean (0), the leading
//! Cholesky element (1), the last class's membership coefficients (0) and
//! variance inflation (1), and the last marker's contrast effects (negative
//! sum of the others).

use crate::error::Error;
use crate::links::LinkFamily;
use crate::Result;
use serde::{Deserialize, Serialize};

/// One basis function of time.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TimeFunction {
    Intercept,
    /// `((t - center) / scale) ^ exponent`
    Power { exponent: u32, center: f64, scale: f64 },
}

impl TimeFunction {
    pub fn eval(&self, t: f64) -> f64 {
        match self {
            TimeFunction::Intercept => 1.0,
            TimeFunction::Power {
                exponent,
                center,
                scale,
            } => ((t - center) / scale).powi(*exponent as i32),
        }
    }
}

/// An ordered list of time basis functions (a design-row generator).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeBasis {
    pub functions: Vec<TimeFunction>,
}

impl TimeBasis {
    /// Polynomial basis `1, u, u^2, ..., u^degree` in `u = (t - center)/scale`.
    pub fn poly(degree: u32, center: f64, scale: f64) -> Self {
        let mut functions = vec![TimeFunction::Intercept];
        for e in 1..=degree {
            functions.push(TimeFunction::Power {
                exponent: e,
                center,
                scale,
            });
        }
        Self { functions }
    }

    pub fn dim(&self) -> usize {
        self.functions.len()
    }

    pub fn eval_into(&self, t: f64, out: &mut [f64]) {
        for (o, f) in out.iter_mut().zip(&self.functions) {
            *o = f.eval(t);
        }
    }

    pub fn eval(&self, t: f64) -> Vec<f64> {
        self.functions.iter().map(|f| f.eval(t)).collect()
    }
}

/// Serial-correlation process added to the latent trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Autocorr {
    None,
    Brownian,
    /// Exponential-decay (AR-type) covariance with its own decay rate.
    Ar,
}

impl Autocorr {
    /// Number of parameters: SD for brownian, SD + decay rate for AR.
    pub fn param_count(&self) -> usize {
        match self {
            Autocorr::None => 0,
            Autocorr::Brownian => 1,
            Autocorr::Ar => 2,
        }
    }
}

/// A covariate entering a submodel, optionally with class-specific effects.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovariateSpec {
    pub name: String,
    pub class_specific: bool,
}

/// One longitudinal marker.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MarkerSpec {
    pub name: String,
    pub link: LinkFamily,
    /// Marker-specific random intercept shared across that marker's visits.
    pub random_intercept: bool,
}

/// Baseline hazard family for one cause.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum BaselineFamily {
    /// Two parameters per class, stored as log scale and log shape.
    Weibull,
    /// Piecewise-constant hazard with the given interior cut points
    /// (heights stored as logs; one more height than cuts).
    Piecewise { cuts: Vec<f64> },
    /// Monotone-spline cumulative hazard on the given time window
    /// (coefficients stored as square roots).
    MSpline {
        interior_knots: Vec<f64>,
        range: (f64, f64),
    },
}

impl BaselineFamily {
    pub fn param_count(&self) -> usize {
        match self {
            BaselineFamily::Weibull => 2,
            BaselineFamily::Piecewise { cuts } => cuts.len() + 1,
            BaselineFamily::MSpline { interior_knots, .. } => interior_knots.len() + 4,
        }
    }
}

/// One competing cause of failure.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CauseSpec {
    pub name: String,
    pub baseline: BaselineFamily,
}

/// Full structural description of a joint latent-class model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub n_classes: usize,
    /// Random-effect design over time; the first function must be the
    /// intercept (the identifiability constraint pins its first-class mean).
    pub random_effect_basis: TimeBasis,
    pub autocorr: Autocorr,
    /// Whether classes other than the last carry a variance inflation of the
    /// random effects.
    pub class_specific_variance: bool,
    /// Extra fixed effects on the latent process (beyond the random-effect
    /// means), optionally class-specific.
    pub latent_covariates: Vec<CovariateSpec>,
    /// Covariates with marker-specific effects summing to zero over markers.
    pub contrast_covariates: Vec<String>,
    /// Covariates in the cause-specific proportional-hazard terms.
    pub hazard_covariates: Vec<CovariateSpec>,
    /// Covariates in the multinomial class-membership model (intercept is
    /// always included implicitly and is not listed here).
    pub membership_covariates: Vec<String>,
    pub markers: Vec<MarkerSpec>,
    pub causes: Vec<CauseSpec>,
}

impl ModelSpec {
    pub fn n_markers(&self) -> usize {
        self.markers.len()
    }

    pub fn n_causes(&self) -> usize {
        self.causes.len()
    }

    /// Dimension of the random-effect vector.
    pub fn random_dim(&self) -> usize {
        self.random_effect_basis.dim()
    }

    /// Whether any marker requires numerical integration over the random
    /// effects (ordinal or bounded observation models).
    pub fn has_discrete_marker(&self) -> bool {
        self.markers.iter().any(|m| !m.link.is_continuous())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_classes == 0 {
            return Err(Error::Config("a model needs at least one class".into()));
        }
        if self.markers.is_empty() {
            return Err(Error::Config("a model needs at least one marker".into()));
        }
        if self.random_dim() == 0 {
            return Err(Error::Config(
                "the random-effect basis needs at least the intercept".into(),
            ));
        }
        if self.random_effect_basis.functions[0] != TimeFunction::Intercept {
            return Err(Error::Config(
                "the first random-effect basis function must be the intercept".into(),
            ));
        }
        if self.has_discrete_marker() && self.autocorr != Autocorr::None {
            return Err(Error::Config(
                "serial correlation is not supported together with ordinal or bounded markers"
                    .into(),
            ));
        }
        if !self.contrast_covariates.is_empty() && self.n_markers() < 2 {
            return Err(Error::Config(
                "contrast covariates need at least two markers (their effects sum to zero)"
                    .into(),
            ));
        }
        let mut names: Vec<&str> = self.markers.iter().map(|m| m.name.as_str()).collect();
        names.sort_unstable();
        if names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("marker names must be unique".into()));
        }
        let mut cause_names: Vec<&str> = self.causes.iter().map(|c| c.name.as_str()).collect();
        cause_names.sort_unstable();
        if cause_names.windows(2).any(|w| w[0] == w[1]) {
            return Err(Error::Config("cause names must be unique".into()));
        }
        for m in &self.markers {
            // Surface structural link problems (bad ranges, empty levels) now.
            crate::links::PreparedLink::new(&m.link)?;
        }
        Ok(())
    }
}

/// Effect value for class `g` from a possibly shared coefficient list
/// (length 1 = shared across classes, length G = class-specific).
pub fn class_coef(values: &[f64], g: usize) -> f64 {
    if values.len() == 1 {
        values[0]
    } else {
        values[g]
    }
}

/// Structured parameter values for a `ModelSpec`. Field layouts:
///
/// - `beta[c]`: latent-process effect of covariate `c`; length 1 if shared,
///   `G` if class-specific.
/// - `mu[g]`: random-effect mean of class `g` (`mu[0][0]` fixed at 0).
/// - `b_chol`: lower-triangular rows of the shared Cholesky factor
///   (`b_chol[0][0]` fixed at 1).
/// - `omega[g]`: variance inflation per class (last fixed at 1); empty when
///   the spec does not use class-specific variances.
/// - `sigma_w`: autocorrelation parameters (SD, then decay rate for AR).
/// - `nu[p][g]`: baseline parameters of cause `p` in class `g`
///   (unconstrained scale).
/// - `zeta[p][c]`: hazard effect of covariate `c` on cause `p`; length 1 or
///   `G` as for `beta`.
/// - `xi[g]`: membership coefficients (intercept first; last class all 0).
/// - `eta[k]`: link parameters of marker `k`, natural scale.
/// - `gamma[k][c]`: contrast effect of covariate `c` on marker `k`; sums to
///   0 over `k`.
/// - `sigma_u[k]`: random-intercept SD where the marker has one.
/// - `sigma_e[k]`: measurement-error SD.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterVector {
    pub beta: Vec<Vec<f64>>,
    pub mu: Vec<Vec<f64>>,
    pub b_chol: Vec<Vec<f64>>,
    pub omega: Vec<f64>,
    pub sigma_w: Vec<f64>,
    pub nu: Vec<Vec<Vec<f64>>>,
    pub zeta: Vec<Vec<Vec<f64>>>,
    pub xi: Vec<Vec<f64>>,
    pub eta: Vec<Vec<f64>>,
    pub gamma: Vec<Vec<f64>>,
    pub sigma_u: Vec<Option<f64>>,
    pub sigma_e: Vec<f64>,
}

impl ParameterVector {
    /// A template with fixed entries set and free entries at neutral values
    /// (zeros; SDs and variance scales at 1, slopes at 1).
    pub fn template(spec: &ModelSpec) -> Self {
        let g_n = spec.n_classes;
        let r = spec.random_dim();
        let beta = spec
            .latent_covariates
            .iter()
            .map(|c| vec![0.0; if c.class_specific { g_n } else { 1 }])
            .collect();
        let mu = vec![vec![0.0; r]; g_n];
        let mut b_chol = vec![vec![0.0; r]; r];
        for (i, row) in b_chol.iter_mut().enumerate() {
            row.truncate(i + 1);
        }
        b_chol[0][0] = 1.0;
        let omega = if spec.class_specific_variance {
            vec![1.0; g_n]
        } else {
            Vec::new()
        };
        let sigma_w = vec![1.0; spec.autocorr.param_count()];
        let nu = spec
            .causes
            .iter()
            .map(|c| vec![vec![0.0; c.baseline.param_count()]; g_n])
            .collect();
        let zeta = spec
            .causes
            .iter()
            .map(|_| {
                spec.hazard_covariates
                    .iter()
                    .map(|c| vec![0.0; if c.class_specific { g_n } else { 1 }])
                    .collect()
            })
            .collect();
        let xi = vec![vec![0.0; 1 + spec.membership_covariates.len()]; g_n];
        let eta = spec
            .markers
            .iter()
            .map(|m| match &m.link {
                LinkFamily::Linear => vec![0.0, 1.0],
                LinkFamily::Spline { .. } | LinkFamily::Bounded { .. } => {
                    let mut e = vec![0.0; m.link.param_count()];
                    for v in e[1..].iter_mut() {
                        *v = 1.0;
                    }
                    e
                }
                LinkFamily::BetaCdf { .. } => vec![1.0, 1.0, 0.0, 1.0],
                LinkFamily::Threshold { max_level } => {
                    (0..*max_level).map(|l| l as f64).collect()
                }
            })
            .collect();
        let gamma = vec![vec![0.0; spec.contrast_covariates.len()]; spec.n_markers()];
        let sigma_u = spec
            .markers
            .iter()
            .map(|m| if m.random_intercept { Some(1.0) } else { None })
            .collect();
        let sigma_e = vec![1.0; spec.n_markers()];
        Self {
            beta,
            mu,
            b_chol,
            omega,
            sigma_w,
            nu,
            zeta,
            xi,
            eta,
            gamma,
            sigma_u,
            sigma_e,
        }
    }

    /// Class-membership probabilities for one subject's membership
    /// covariates (intercept excluded; pass the raw covariate values).
    pub fn membership_probs(&self, xc: &[f64]) -> Result<Vec<f64>> {
        let g_n = self.xi.len();
        if g_n == 0 {
            return Err(Error::Domain("parameter vector has no classes".into()));
        }
        let arity = self.xi[0].len() - 1;
        if xc.len() != arity {
            return Err(Error::Config(format!(
                "membership model expects {arity} covariates, got {}",
                xc.len()
            )));
        }
        let mut logits = Vec::with_capacity(g_n);
        for coefs in &self.xi {
            let mut l = coefs[0];
            for (c, x) in coefs[1..].iter().zip(xc) {
                l += c * x;
            }
            logits.push(l);
        }
        let lse = crate::numerics::log_sum_exp(&logits);
        Ok(logits.iter().map(|l| (l - lse).exp()).collect())
    }

    /// Number of free (estimated) parameters for `spec`.
    pub fn free_len(spec: &ModelSpec) -> usize {
        let g_n = spec.n_classes;
        let r = spec.random_dim();
        let mut n = 0;
        n += (g_n - 1) * (1 + spec.membership_covariates.len());
        for c in &spec.latent_covariates {
            n += if c.class_specific { g_n } else { 1 };
        }
        n += g_n * r - 1;
        n += r * (r + 1) / 2 - 1;
        if spec.class_specific_variance {
            n += g_n - 1;
        }
        n += spec.autocorr.param_count();
        for cause in &spec.causes {
            n += g_n * cause.baseline.param_count();
            for c in &spec.hazard_covariates {
                n += if c.class_specific { g_n } else { 1 };
            }
        }
        for m in &spec.markers {
            n += m.link.param_count();
            if m.random_intercept {
                n += 1;
            }
            n += 1; // sigma_e
        }
        n += spec.contrast_covariates.len() * (spec.n_markers() - 1).max(0);
        n
    }

    /// Names of the free parameters, in flat-vector order. Classes, causes,
    /// and within-block indices are 1-based in the names; covariates and
    /// markers appear by name.
    pub fn free_names(spec: &ModelSpec) -> Vec<String> {
        let g_n = spec.n_classes;
        let r = spec.random_dim();
        let mut names = Vec::with_capacity(Self::free_len(spec));
        for g in 0..g_n - 1 {
            names.push(format!("xi[{}].intercept", g + 1));
            for c in &spec.membership_covariates {
                names.push(format!("xi[{}].{}", g + 1, c));
            }
        }
        for c in &spec.latent_covariates {
            if c.class_specific {
                for g in 0..g_n {
                    names.push(format!("beta.{}[{}]", c.name, g + 1));
                }
            } else {
                names.push(format!("beta.{}", c.name));
            }
        }
        for g in 0..g_n {
            for j in 0..r {
                if g == 0 && j == 0 {
                    continue;
                }
                names.push(format!("mu[{}][{}]", g + 1, j + 1));
            }
        }
        for i in 0..r {
            for j in 0..=i {
                if i == 0 && j == 0 {
                    continue;
                }
                names.push(format!("bchol[{}][{}]", i + 1, j + 1));
            }
        }
        if spec.class_specific_variance {
            for g in 0..g_n - 1 {
                names.push(format!("omega[{}]", g + 1));
            }
        }
        match spec.autocorr {
            Autocorr::None => {}
            Autocorr::Brownian => names.push("sigma_w".into()),
            Autocorr::Ar => {
                names.push("sigma_w".into());
                names.push("ar_rate".into());
            }
        }
        for (p, cause) in spec.causes.iter().enumerate() {
            for g in 0..g_n {
                for j in 0..cause.baseline.param_count() {
                    names.push(format!("nu[{}][{}][{}]", p + 1, g + 1, j + 1));
                }
            }
            for c in &spec.hazard_covariates {
                if c.class_specific {
                    for g in 0..g_n {
                        names.push(format!("zeta[{}].{}[{}]", p + 1, c.name, g + 1));
                    }
                } else {
                    names.push(format!("zeta[{}].{}", p + 1, c.name));
                }
            }
        }
        for (k, m) in spec.markers.iter().enumerate() {
            for j in 0..m.link.param_count() {
                names.push(format!("eta.{}[{}]", m.name, j + 1));
            }
            if k + 1 < spec.n_markers() {
                for c in &spec.contrast_covariates {
                    names.push(format!("gamma.{}.{}", m.name, c));
                }
            }
            if m.random_intercept {
                names.push(format!("sigma_u.{}", m.name));
            }
            names.push(format!("sigma_e.{}", m.name));
        }
        names
    }

    /// Flatten to the unconstrained vector (reparameterizing positive and
    /// ordered blocks), excluding fixed entries. Errors on boundary values
    /// that the unconstrained scale cannot represent (zero SDs, equal
    /// thresholds) and on fixed entries that do not hold their fixed value.
    pub fn pack(&self, spec: &ModelSpec) -> Result<Vec<f64>> {
        let g_n = spec.n_classes;
        let mut flat = Vec::with_capacity(Self::free_len(spec));
        self.check_shape(spec)?;
        for g in 0..g_n - 1 {
            flat.extend_from_slice(&self.xi[g]);
        }
        for xi_last in &self.xi[g_n - 1] {
            if *xi_last != 0.0 {
                return Err(Error::Domain(
                    "membership coefficients of the last class must be 0".into(),
                ));
            }
        }
        for b in &self.beta {
            flat.extend_from_slice(b);
        }
        if self.mu[0][0] != 0.0 {
            return Err(Error::Domain(
                "first-class random-intercept mean is fixed at 0".into(),
            ));
        }
        for (g, m) in self.mu.iter().enumerate() {
            for (j, v) in m.iter().enumerate() {
                if g == 0 && j == 0 {
                    continue;
                }
                flat.push(*v);
            }
        }
        if self.b_chol[0][0] != 1.0 {
            return Err(Error::Domain(
                "leading Cholesky element is fixed at 1".into(),
            ));
        }
        for (i, row) in self.b_chol.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                if i == 0 && j == 0 {
                    continue;
                }
                flat.push(*v);
            }
        }
        if spec.class_specific_variance {
            if self.omega[g_n - 1] != 1.0 {
                return Err(Error::Domain(
                    "last-class variance inflation is fixed at 1".into(),
                ));
            }
            for v in &self.omega[..g_n - 1] {
                flat.push(pos_log(*v, "variance inflation")?);
            }
        }
        match spec.autocorr {
            Autocorr::None => {}
            Autocorr::Brownian => flat.push(pos_log(self.sigma_w[0], "autocorrelation SD")?),
            Autocorr::Ar => {
                flat.push(pos_log(self.sigma_w[0], "autocorrelation SD")?);
                flat.push(pos_log(self.sigma_w[1], "autocorrelation decay rate")?);
            }
        }
        for (p, _cause) in spec.causes.iter().enumerate() {
            for g in 0..g_n {
                flat.extend_from_slice(&self.nu[p][g]);
            }
            for z in &self.zeta[p] {
                flat.extend_from_slice(z);
            }
        }
        for (k, m) in spec.markers.iter().enumerate() {
            pack_link(&mut flat, &m.link, &self.eta[k])?;
            if k + 1 < spec.n_markers() {
                flat.extend_from_slice(&self.gamma[k]);
            }
            if m.random_intercept {
                flat.push(pos_log(
                    self.sigma_u[k].ok_or_else(|| {
                        Error::Domain(format!("marker {} is missing its random-intercept SD", m.name))
                    })?,
                    "random-intercept SD",
                )?);
            }
            flat.push(pos_log(self.sigma_e[k], "measurement-error SD")?);
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "parameter vector contains non-finite values".into(),
            ));
        }
        Ok(flat)
    }

    /// Rebuild the structured vector from a flat unconstrained vector.
    pub fn unpack(spec: &ModelSpec, flat: &[f64]) -> Result<Self> {
        let expect = Self::free_len(spec);
        if flat.len() != expect {
            return Err(Error::Domain(format!(
                "flat parameter vector has length {}, model needs {expect}",
                flat.len()
            )));
        }
        if flat.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(
                "flat parameter vector contains non-finite values".into(),
            ));
        }
        let g_n = spec.n_classes;
        let r = spec.random_dim();
        let mut out = Self::template(spec);
        let mut it = flat.iter().copied();
        let take = |n: usize, it: &mut dyn Iterator<Item = f64>| -> Vec<f64> {
            it.take(n).collect()
        };
        for g in 0..g_n - 1 {
            out.xi[g] = take(1 + spec.membership_covariates.len(), &mut it);
        }
        for (c, spec_c) in spec.latent_covariates.iter().enumerate() {
            let n = if spec_c.class_specific { g_n } else { 1 };
            out.beta[c] = take(n, &mut it);
        }
        for g in 0..g_n {
            for j in 0..r {
                if g == 0 && j == 0 {
                    continue;
                }
                out.mu[g][j] = it.next().unwrap();
            }
        }
        for i in 0..r {
            for j in 0..=i {
                if i == 0 && j == 0 {
                    continue;
                }
                out.b_chol[i][j] = it.next().unwrap();
            }
        }
        if spec.class_specific_variance {
            for g in 0..g_n - 1 {
                out.omega[g] = it.next().unwrap().exp();
            }
            out.omega[g_n - 1] = 1.0;
        }
        for s in out.sigma_w.iter_mut() {
            *s = it.next().unwrap().exp();
        }
        for (p, cause) in spec.causes.iter().enumerate() {
            for g in 0..g_n {
                out.nu[p][g] = take(cause.baseline.param_count(), &mut it);
            }
            for (c, spec_c) in spec.hazard_covariates.iter().enumerate() {
                let n = if spec_c.class_specific { g_n } else { 1 };
                out.zeta[p][c] = take(n, &mut it);
            }
        }
        for (k, m) in spec.markers.iter().enumerate() {
            out.eta[k] = unpack_link(&m.link, &mut it);
            if k + 1 < spec.n_markers() {
                out.gamma[k] = take(spec.contrast_covariates.len(), &mut it);
            }
            if m.random_intercept {
                out.sigma_u[k] = Some(it.next().unwrap().exp());
            }
            out.sigma_e[k] = it.next().unwrap().exp();
        }
        // Last marker's contrast effects balance the others.
        if !spec.contrast_covariates.is_empty() {
            let last = spec.n_markers() - 1;
            for c in 0..spec.contrast_covariates.len() {
                out.gamma[last][c] = -(0..last).map(|k| out.gamma[k][c]).sum::<f64>();
            }
        }
        debug_assert!(it.next().is_none());
        Ok(out)
    }

    pub(crate) fn check_shape(&self, spec: &ModelSpec) -> Result<()> {
        let g_n = spec.n_classes;
        let r = spec.random_dim();
        let ok = self.xi.len() == g_n
            && self.xi.iter().all(|x| x.len() == 1 + spec.membership_covariates.len())
            && self.mu.len() == g_n
            && self.mu.iter().all(|m| m.len() == r)
            && self.b_chol.len() == r
            && self.b_chol.iter().enumerate().all(|(i, row)| row.len() == i + 1)
            && self.beta.len() == spec.latent_covariates.len()
            && self.nu.len() == spec.n_causes()
            && self.zeta.len() == spec.n_causes()
            && self.eta.len() == spec.n_markers()
            && self.eta.iter().zip(&spec.markers).all(|(e, m)| e.len() == m.link.param_count())
            && self.gamma.len() == spec.n_markers()
            && self.sigma_u.len() == spec.n_markers()
            && self.sigma_e.len() == spec.n_markers()
            && self.omega.len() == if spec.class_specific_variance { g_n } else { 0 }
            && self.sigma_w.len() == spec.autocorr.param_count();
        if ok {
            Ok(())
        } else {
            Err(Error::Domain(
                "parameter vector shape does not match the model specification".into(),
            ))
        }
    }
}

fn pos_log(v: f64, what: &str) -> Result<f64> {
    if v > 0.0 && v.is_finite() {
        Ok(v.ln())
    } else {
        Err(Error::Domain(format!(
            "{what} must be strictly positive to flatten, got {v}"
        )))
    }
}

fn pack_link(flat: &mut Vec<f64>, family: &LinkFamily, eta: &[f64]) -> Result<()> {
    match family {
        LinkFamily::Linear => {
            flat.push(eta[0]);
            flat.push(pos_log(eta[1], "linear link slope")?);
        }
        LinkFamily::Spline { .. } | LinkFamily::Bounded { .. } => {
            flat.push(eta[0]);
            for c in &eta[1..] {
                if *c < 0.0 {
                    return Err(Error::Domain(format!(
                        "monotone spline coefficient must be nonnegative, got {c}"
                    )));
                }
                flat.push(c.sqrt());
            }
        }
        LinkFamily::BetaCdf { .. } => {
            flat.push(pos_log(eta[0], "beta link shape")?);
            flat.push(pos_log(eta[1], "beta link shape")?);
            flat.push(eta[2]);
            flat.push(pos_log(eta[3], "beta link scale")?);
        }
        LinkFamily::Threshold { .. } => {
            flat.push(eta[0]);
            for w in eta.windows(2) {
                let inc = w[1] - w[0];
                if inc <= 0.0 {
                    return Err(Error::Domain(format!(
                        "thresholds must be strictly increasing, got increment {inc}"
                    )));
                }
                flat.push(inc.sqrt());
            }
        }
    }
    Ok(())
}

fn unpack_link(family: &LinkFamily, it: &mut dyn Iterator<Item = f64>) -> Vec<f64> {
    let n = family.param_count();
    let raw: Vec<f64> = it.take(n).collect();
    match family {
        LinkFamily::Linear => vec![raw[0], raw[1].exp()],
        LinkFamily::Spline { .. } | LinkFamily::Bounded { .. } => {
            let mut eta = vec![raw[0]];
            eta.extend(raw[1..].iter().map(|v| v * v));
            eta
        }
        LinkFamily::BetaCdf { .. } => vec![raw[0].exp(), raw[1].exp(), raw[2], raw[3].exp()],
        LinkFamily::Threshold { .. } => {
            let mut eta = vec![raw[0]];
            for v in &raw[1..] {
                eta.push(eta.last().unwrap() + v * v);
            }
            eta
        }
    }
}
