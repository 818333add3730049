//! Marker link functions: the monotone transformations `H_k` that map the
//! latent-process scale to each observed marker's scale, together with the
//! conditional observation densities they induce.
//!
//! A marker's *family* (structure: knots, ranges, level counts) is declared
//! in the model specification; its *parameters* are part of the estimated
//! parameter vector and arrive here on the natural scale (positive
//! coefficients already positive, thresholds already increasing). The
//! families:
//!
//! - `linear`: `H(v) = a + b v`, so the normalized observation is
//!   `H^-1(y) = (y - a)/b` with Jacobian `1/b`.
//! - `spline`: `H^-1(y) = a + sum_l c_l I_l(y*)` with degree-3 monotone
//!   I-splines on the marker range affinely pre-scaled to [0, 1]; used for
//!   continuous but skewed markers.
//! - `betacdf`: `H^-1(y) = loc + scale * I_{y*}(p, q)` (regularized
//!   incomplete beta), with the range mapping padded by a small fraction of
//!   the span so the Jacobian stays positive at the observed bounds.
//! - `threshold`: ordinal probit. Levels `0..=M` with thresholds
//!   `t_1 < ... < t_M`; level `l` is observed when the underlying normalized
//!   value falls in `[t_l, t_{l+1})` (with `t_0 = -inf`, `t_{M+1} = +inf`).
//! - `bounded`: a continuous marker on `[lo, hi]` whose boundary values
//!   carry point masses; interior values use the spline transformation's
//!   density, the bounds accumulate the corresponding Gaussian tails.

use crate::error::Error;
use crate::numerics::{normal_interval_prob, normal_pdf, normal_sf, SQRT_2PI};
use crate::splines::ISplineBasis;
use crate::Result;
use serde::{Deserialize, Serialize};

/// Structural description of a marker's link (no estimated quantities).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum LinkFamily {
    /// Affine transformation; for standard continuous markers.
    Linear,
    /// Monotone degree-3 I-spline transformation on `range`.
    Spline {
        interior_knots: Vec<f64>,
        range: (f64, f64),
    },
    /// Rescaled incomplete-beta transformation on `range`; `pad` is the
    /// fraction of the span added on each side before mapping to (0, 1).
    BetaCdf { range: (f64, f64), pad: f64 },
    /// Ordinal marker with integer levels `0..=max_level`.
    Threshold { max_level: usize },
    /// Continuous on `range` with floor/ceiling point masses at the bounds.
    Bounded {
        interior_knots: Vec<f64>,
        range: (f64, f64),
    },
}

impl LinkFamily {
    /// Number of link parameters contributed to the model parameter vector.
    pub fn param_count(&self) -> usize {
        match self {
            LinkFamily::Linear => 2,
            LinkFamily::Spline { interior_knots, .. }
            | LinkFamily::Bounded { interior_knots, .. } => interior_knots.len() + 4,
            LinkFamily::BetaCdf { .. } => 4,
            LinkFamily::Threshold { max_level } => *max_level,
        }
    }

    /// Whether observations enter the likelihood through a density on a
    /// continuous scale (true) or through probability masses (false).
    pub fn is_continuous(&self) -> bool {
        matches!(
            self,
            LinkFamily::Linear | LinkFamily::Spline { .. } | LinkFamily::BetaCdf { .. }
        )
    }

    pub fn describe(&self) -> &'static str {
        match self {
            LinkFamily::Linear => "linear",
            LinkFamily::Spline { .. } => "spline",
            LinkFamily::BetaCdf { .. } => "betacdf",
            LinkFamily::Threshold { .. } => "threshold",
            LinkFamily::Bounded { .. } => "bounded",
        }
    }
}

/// A link family with its derived evaluation machinery (spline bases are
/// built once here, not per call).
#[derive(Debug, Clone)]
pub struct PreparedLink {
    family: LinkFamily,
    basis: Option<ISplineBasis>,
}

impl PreparedLink {
    pub fn new(family: &LinkFamily) -> Result<Self> {
        let basis = match family {
            LinkFamily::Spline {
                interior_knots,
                range,
            }
            | LinkFamily::Bounded {
                interior_knots,
                range,
            } => {
                validate_range(*range)?;
                // Basis lives on [0, 1]; knots are given in marker units and
                // pre-scaled along with the argument.
                let span = range.1 - range.0;
                let scaled: Vec<f64> = interior_knots.iter().map(|k| (k - range.0) / span).collect();
                Some(ISplineBasis::new(0.0, 1.0, &scaled)?)
            }
            LinkFamily::BetaCdf { range, pad } => {
                validate_range(*range)?;
                if !(*pad > 0.0) || *pad >= 0.5 {
                    return Err(Error::Domain(format!(
                        "betacdf pad must be in (0, 0.5), got {pad}"
                    )));
                }
                None
            }
            LinkFamily::Threshold { max_level } => {
                if *max_level == 0 {
                    return Err(Error::Domain(
                        "threshold link needs at least two levels".into(),
                    ));
                }
                None
            }
            LinkFamily::Linear => None,
        };
        Ok(Self {
            family: family.clone(),
            basis,
        })
    }

    pub fn family(&self) -> &LinkFamily {
        &self.family
    }

    pub fn param_count(&self) -> usize {
        self.family.param_count()
    }

    fn check_eta(&self, eta: &[f64]) -> Result<()> {
        if eta.len() != self.param_count() {
            return Err(Error::Domain(format!(
                "{} link expects {} parameters, got {}",
                self.family.describe(),
                self.param_count(),
                eta.len()
            )));
        }
        Ok(())
    }

    /// Normalized (latent-scale) value `H^-1(y)` of an observed value for a
    /// continuous family, or of an interior/boundary value for `bounded`.
    pub fn inverse(&self, eta: &[f64], y: f64) -> Result<f64> {
        self.check_eta(eta)?;
        match &self.family {
            LinkFamily::Linear => {
                let (a, b) = (eta[0], eta[1]);
                check_positive_slope(b)?;
                Ok((y - a) / b)
            }
            LinkFamily::Spline { range, .. } | LinkFamily::Bounded { range, .. } => {
                let u = rescale(y, *range)?;
                let basis = self.basis.as_ref().unwrap();
                let mut vals = vec![0.0; basis.len()];
                basis.values(u, &mut vals)?;
                let mut acc = eta[0];
                for (c, v) in eta[1..].iter().zip(&vals) {
                    acc += c * v;
                }
                Ok(acc)
            }
            LinkFamily::BetaCdf { range, pad } => {
                let u = beta_rescale(y, *range, *pad)?;
                let (p, q, loc, scale) = beta_params(eta)?;
                Ok(loc + scale * statrs::function::beta::beta_reg(p, q, u))
            }
            LinkFamily::Threshold { .. } => Err(Error::Domain(
                "threshold links have no continuous inverse; use the ordinal density".into(),
            )),
        }
    }

    /// Jacobian `d H^-1 / dy` at an observed value (continuous families and
    /// the interior of `bounded`).
    pub fn jacobian(&self, eta: &[f64], y: f64) -> Result<f64> {
        self.check_eta(eta)?;
        match &self.family {
            LinkFamily::Linear => {
                check_positive_slope(eta[1])?;
                Ok(1.0 / eta[1])
            }
            LinkFamily::Spline { range, .. } | LinkFamily::Bounded { range, .. } => {
                let u = rescale(y, *range)?;
                let basis = self.basis.as_ref().unwrap();
                let mut der = vec![0.0; basis.len()];
                basis.derivatives(u, &mut der)?;
                let mut acc = 0.0;
                for (c, d) in eta[1..].iter().zip(&der) {
                    acc += c * d;
                }
                Ok(acc / (range.1 - range.0))
            }
            LinkFamily::BetaCdf { range, pad } => {
                let u = beta_rescale(y, *range, *pad)?;
                let (p, q, _, scale) = beta_params(eta)?;
                let ln_b = statrs::function::beta::ln_beta(p, q);
                let ln_pdf = (p - 1.0) * u.ln() + (q - 1.0) * (1.0 - u).ln() - ln_b;
                let span = range.1 - range.0;
                Ok(scale * ln_pdf.exp() / (span * (1.0 + 2.0 * pad)))
            }
            LinkFamily::Threshold { .. } => Err(Error::Domain(
                "threshold links have no continuous Jacobian".into(),
            )),
        }
    }

    /// Observed value produced by a latent value: the inverse of `H^-1`,
    /// saturating at the marker range for the bounded-range families and
    /// discretizing for `threshold`.
    pub fn forward(&self, eta: &[f64], latent: f64) -> Result<f64> {
        self.check_eta(eta)?;
        match &self.family {
            LinkFamily::Linear => {
                check_positive_slope(eta[1])?;
                Ok(eta[0] + eta[1] * latent)
            }
            LinkFamily::Threshold { .. } => {
                // Level = number of thresholds at or below the latent value.
                Ok(eta.iter().take_while(|&&t| t <= latent).count() as f64)
            }
            LinkFamily::Spline { range, .. }
            | LinkFamily::Bounded { range, .. }
            | LinkFamily::BetaCdf { range, .. } => {
                let lo_val = self.inverse(eta, range.0)?;
                let hi_val = self.inverse(eta, range.1)?;
                if latent <= lo_val {
                    return Ok(range.0);
                }
                if latent >= hi_val {
                    return Ok(range.1);
                }
                crate::numerics::brent_root(
                    |y| self.inverse(eta, y).unwrap_or(f64::NAN) - latent,
                    range.0,
                    range.1,
                    1e-12 * (range.1 - range.0),
                )
            }
        }
    }

    /// P(Y = level | normalized mean m, residual SD sd) for a threshold
    /// marker: the probit mass between the bracketing thresholds.
    pub fn ordinal_density(&self, eta: &[f64], level: usize, m: f64, sd: f64) -> Result<f64> {
        self.check_eta(eta)?;
        let max_level = match &self.family {
            LinkFamily::Threshold { max_level } => *max_level,
            other => {
                return Err(Error::Domain(format!(
                    "ordinal density is only defined for threshold links, not {}",
                    other.describe()
                )))
            }
        };
        check_positive_sd(sd)?;
        if level > max_level {
            return Err(Error::Domain(format!(
                "ordinal level {level} outside 0..={max_level}"
            )));
        }
        Ok(if level == 0 {
            1.0 - normal_sf((eta[0] - m) / sd)
        } else if level == max_level {
            normal_sf((eta[max_level - 1] - m) / sd)
        } else {
            normal_interval_prob((eta[level - 1] - m) / sd, (eta[level] - m) / sd)
        })
    }

    /// Density/mass of a bounded marker value given the normalized mean and
    /// residual SD: Gaussian tail masses at the range bounds, Jacobian-scaled
    /// Gaussian density inside.
    pub fn bounded_density(&self, eta: &[f64], y: f64, m: f64, sd: f64) -> Result<f64> {
        self.check_eta(eta)?;
        let range = match &self.family {
            LinkFamily::Bounded { range, .. } => *range,
            other => {
                return Err(Error::Domain(format!(
                    "bounded density is only defined for bounded links, not {}",
                    other.describe()
                )))
            }
        };
        check_positive_sd(sd)?;
        if y < range.0 || y > range.1 {
            return Err(Error::Domain(format!(
                "bounded value {y} outside [{}, {}]",
                range.0, range.1
            )));
        }
        if y == range.0 {
            let z = (self.inverse(eta, range.0)? - m) / sd;
            Ok(1.0 - normal_sf(z))
        } else if y == range.1 {
            let z = (self.inverse(eta, range.1)? - m) / sd;
            Ok(normal_sf(z))
        } else {
            let z = (self.inverse(eta, y)? - m) / sd;
            let jac = self.jacobian(eta, y)?;
            Ok(normal_pdf(z) / sd * jac)
        }
    }

    /// Log density of a continuous observation under the normalized-scale
    /// Gaussian model: `log phi((H^-1(y) - m)/sd) - log sd + log J(y)`.
    pub fn continuous_log_density(&self, eta: &[f64], y: f64, m: f64, sd: f64) -> Result<f64> {
        check_positive_sd(sd)?;
        let v = self.inverse(eta, y)?;
        let jac = self.jacobian(eta, y)?;
        if jac <= 0.0 {
            return Ok(f64::NEG_INFINITY);
        }
        let z = (v - m) / sd;
        Ok(-0.5 * z * z - sd.ln() - SQRT_2PI.ln() + jac.ln())
    }
}

fn validate_range(range: (f64, f64)) -> Result<()> {
    if !(range.0.is_finite() && range.1.is_finite()) || range.0 >= range.1 {
        return Err(Error::Domain(format!(
            "marker range must satisfy lo < hi, got [{}, {}]",
            range.0, range.1
        )));
    }
    Ok(())
}

fn rescale(y: f64, range: (f64, f64)) -> Result<f64> {
    if y < range.0 || y > range.1 {
        return Err(Error::Domain(format!(
            "marker value {y} outside range [{}, {}]",
            range.0, range.1
        )));
    }
    Ok((y - range.0) / (range.1 - range.0))
}

fn beta_rescale(y: f64, range: (f64, f64), pad: f64) -> Result<f64> {
    if y < range.0 || y > range.1 {
        return Err(Error::Domain(format!(
            "marker value {y} outside range [{}, {}]",
            range.0, range.1
        )));
    }
    let span = range.1 - range.0;
    let d = pad * span;
    Ok((y - range.0 + d) / (span + 2.0 * d))
}

fn beta_params(eta: &[f64]) -> Result<(f64, f64, f64, f64)> {
    let (p, q, loc, scale) = (eta[0], eta[1], eta[2], eta[3]);
    if !(p > 0.0 && q > 0.0 && scale > 0.0) {
        return Err(Error::Domain(format!(
            "betacdf parameters need positive shapes and scale, got ({p}, {q}, {loc}, {scale})"
        )));
    }
    Ok((p, q, loc, scale))
}

fn check_positive_slope(b: f64) -> Result<()> {
    if !(b > 0.0) {
        return Err(Error::Domain(format!(
            "linear link slope must be positive, got {b}"
        )));
    }
    Ok(())
}

fn check_positive_sd(sd: f64) -> Result<()> {
    if !(sd > 0.0) {
        return Err(Error::Domain(format!(
            "residual SD must be positive, got {sd}"
        )));
    }
    Ok(())
}
