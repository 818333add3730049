//! Cause-specific hazards: baseline families, cumulative hazards, and
//! class-conditional cumulative incidence.
//!
//! Within a class, cause `p` has hazard `a_p(t) = a0_p(t) * exp(lp)` where
//! `lp` is the covariate linear predictor. Baseline parameters arrive on
//! the unconstrained estimation scale; the positivity mappings are:
//!
//! - Weibull: scale `lambda = exp(nu_1)`, shape `kappa = exp(nu_2)`, with
//!   cumulative hazard `(t / lambda) ^ kappa`.
//! - Piecewise-constant: heights `exp(nu_j)` on the intervals split at the
//!   cut points (first interval starts at 0, last extends to infinity).
//! - Monotone-spline: hazard `sum_l nu_l^2 M_l(t)` on the family's time
//!   window, zero before it, constant-hazard extension after it.

use crate::error::Error;
use crate::model::{class_coef, BaselineFamily, ModelSpec, ParameterVector};
use crate::numerics::integrate_legendre;
use crate::splines::MSplineBasis;
use crate::Result;

/// Number of quadrature nodes used for cumulative hazards and incidence
/// integrals without closed forms.
pub const HAZARD_QUADRATURE_NODES: usize = 50;

/// Prepared per-cause baseline machinery (spline bases built once).
#[derive(Debug, Clone)]
pub struct Hazards {
    families: Vec<BaselineFamily>,
    msplines: Vec<Option<MSplineBasis>>,
}

impl Hazards {
    pub fn new(spec: &ModelSpec) -> Result<Self> {
        let mut msplines = Vec::with_capacity(spec.n_causes());
        for cause in &spec.causes {
            msplines.push(match &cause.baseline {
                BaselineFamily::MSpline {
                    interior_knots,
                    range,
                } => {
                    if !(range.0 >= 0.0 && range.1 > range.0) {
                        return Err(Error::Config(format!(
                            "spline baseline window must satisfy 0 <= lo < hi, got [{}, {}]",
                            range.0, range.1
                        )));
                    }
                    Some(MSplineBasis::new(range.0, range.1, interior_knots)?)
                }
                _ => None,
            });
        }
        Ok(Self {
            families: spec.causes.iter().map(|c| c.baseline.clone()).collect(),
            msplines,
        })
    }

    pub fn n_causes(&self) -> usize {
        self.families.len()
    }

    /// Baseline hazard of cause `p` at time `t >= 0`.
    pub fn baseline_hazard(&self, p: usize, nu: &[f64], t: f64) -> f64 {
        match &self.families[p] {
            BaselineFamily::Weibull => {
                let (ln_lambda, kappa) = (nu[0], nu[1].exp());
                // kappa/lambda * (t/lambda)^(kappa-1), computed in logs.
                if t <= 0.0 {
                    return if kappa < 1.0 {
                        f64::INFINITY
                    } else if kappa == 1.0 {
                        (-ln_lambda).exp()
                    } else {
                        0.0
                    };
                }
                (nu[1] - ln_lambda + (kappa - 1.0) * (t.ln() - ln_lambda)).exp()
            }
            BaselineFamily::Piecewise { cuts } => {
                if t < 0.0 {
                    return 0.0;
                }
                let j = cuts.iter().take_while(|c| t >= **c).count();
                nu[j].exp()
            }
            BaselineFamily::MSpline { range, .. } => {
                if t < range.0 {
                    return 0.0;
                }
                let basis = self.msplines[p].as_ref().unwrap();
                let tt = t.min(range.1);
                let mut vals = vec![0.0; basis.len()];
                basis
                    .values(tt, &mut vals)
                    .expect("clamped time inside the baseline window");
                vals.iter().zip(nu).map(|(m, v)| v * v * m).sum()
            }
        }
    }

    /// Baseline cumulative hazard of cause `p` over `[0, t]`.
    pub fn baseline_cumulative(&self, p: usize, nu: &[f64], t: f64) -> f64 {
        if t <= 0.0 {
            return 0.0;
        }
        match &self.families[p] {
            BaselineFamily::Weibull => {
                let kappa = nu[1].exp();
                (kappa * (t.ln() - nu[0])).exp()
            }
            BaselineFamily::Piecewise { cuts } => {
                let mut acc = 0.0;
                let mut left = 0.0;
                for (j, cut) in cuts.iter().enumerate() {
                    if t <= *cut {
                        return acc + nu[j].exp() * (t - left);
                    }
                    acc += nu[j].exp() * (cut - left);
                    left = *cut;
                }
                acc + nu[cuts.len()].exp() * (t - left)
            }
            BaselineFamily::MSpline {
                interior_knots,
                range,
            } => {
                // Piecewise Gauss-Legendre between knots: each segment is a
                // polynomial, so the rule is exact there; a single span over
                // the whole window would lose ~1e-7 at the knot kinks.
                let upto = t.min(range.1);
                let mut acc = 0.0;
                let mut left = range.0;
                if upto > range.0 {
                    for cut in interior_knots.iter().copied().chain([range.1]) {
                        let right = cut.min(upto);
                        if right > left {
                            acc += integrate_legendre(
                                |v| self.baseline_hazard(p, nu, v),
                                left,
                                right,
                                HAZARD_QUADRATURE_NODES,
                            )
                            .expect("baseline quadrature rule");
                        }
                        if cut >= upto {
                            break;
                        }
                        left = cut;
                    }
                }
                if t > range.1 {
                    acc += self.baseline_hazard(p, nu, range.1) * (t - range.1);
                }
                acc
            }
        }
    }

    /// Cumulative hazard with the covariate effect applied.
    pub fn cumulative(&self, p: usize, nu: &[f64], lp: f64, t: f64) -> f64 {
        self.baseline_cumulative(p, nu, t) * lp.exp()
    }

    /// Log hazard with the covariate effect applied.
    pub fn log_hazard(&self, p: usize, nu: &[f64], lp: f64, t: f64) -> f64 {
        self.baseline_hazard(p, nu, t).ln() + lp
    }

    /// All-cause cumulative hazard for one class.
    pub fn total_cumulative(&self, class: &ClassHazard<'_>, t: f64) -> f64 {
        (0..self.n_causes())
            .map(|p| self.cumulative(p, class.nu[p], class.lp[p], t))
            .sum()
    }

    /// Event-free (all-cause survival) probability from 0 to `t` for one
    /// class.
    pub fn survival(&self, class: &ClassHazard<'_>, t: f64) -> f64 {
        (-self.total_cumulative(class, t)).exp()
    }

    /// Class-conditional cumulative incidence of cause `p` between
    /// `from` and `to`, given event-free at `from`:
    /// integral of `a_p(v) S(v)/S(from)` over `[from, to]`.
    pub fn cumulative_incidence(
        &self,
        class: &ClassHazard<'_>,
        p: usize,
        from: f64,
        to: f64,
    ) -> Result<f64> {
        if to <= from {
            return Ok(0.0);
        }
        let s_from = (-self.total_cumulative(class, from)).exp();
        if s_from <= 0.0 {
            return Err(Error::Numeric(format!(
                "no survival mass left at the conditioning time {from}"
            )));
        }
        // The integrand can be sharply peaked (survival collapsing over a
        // narrow window under a steep baseline), so the 50-point rule is
        // applied on adaptively bisected panels rather than one span.
        let f = |v: f64| {
            self.baseline_hazard(p, class.nu[p], v)
                * class.lp[p].exp()
                * (-self.total_cumulative(class, v)).exp()
        };
        let integral = if from == 0.0 {
            // A decreasing-hazard baseline is singular (integrably) at 0;
            // v = to * s^4 turns t^(k-1) dt into s^(4k-1) ds, which the
            // quadrature handles for any shape above 1/4.
            let g = |s: f64| f(to * s * s * s * s) * 4.0 * to * s * s * s;
            adaptive_legendre(&g, 0.0, 1.0, 1e-10, 14)?
        } else {
            adaptive_legendre(&f, from, to, 1e-10, 14)?
        };
        Ok(integral / s_from)
    }
}

/// Composite Gauss-Legendre integration with panel bisection: a panel is
/// accepted when halving it moves the estimate by less than `rel_tol`
/// (relative to the panel magnitude), or when `depth` runs out.
fn adaptive_legendre<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    rel_tol: f64,
    depth: usize,
) -> Result<f64> {
    let whole = integrate_legendre(f, a, b, HAZARD_QUADRATURE_NODES)?;
    let mid = 0.5 * (a + b);
    let left = integrate_legendre(f, a, mid, HAZARD_QUADRATURE_NODES)?;
    let right = integrate_legendre(f, mid, b, HAZARD_QUADRATURE_NODES)?;
    let split = left + right;
    if depth == 0 || (whole - split).abs() <= rel_tol * (1.0 + split.abs()) {
        return Ok(split);
    }
    Ok(adaptive_legendre(f, a, mid, rel_tol, depth - 1)?
        + adaptive_legendre(f, mid, b, rel_tol, depth - 1)?)
}

/// One class's hazard inputs: per-cause baseline parameters and linear
/// predictors for a particular subject.
pub struct ClassHazard<'a> {
    pub nu: Vec<&'a [f64]>,
    pub lp: Vec<f64>,
}

impl<'a> ClassHazard<'a> {
    /// Assemble for class `g` from the parameter vector and the subject's
    /// hazard covariate values (aligned with the spec's hazard covariates).
    pub fn assemble(
        spec: &ModelSpec,
        theta: &'a ParameterVector,
        g: usize,
        hazard_covs: &[f64],
    ) -> Self {
        let nu = (0..spec.n_causes())
            .map(|p| theta.nu[p][g].as_slice())
            .collect();
        let lp = (0..spec.n_causes())
            .map(|p| linear_predictor(theta, p, g, hazard_covs))
            .collect();
        Self { nu, lp }
    }
}

/// Proportional-hazard linear predictor for cause `p`, class `g`.
pub fn linear_predictor(
    theta: &ParameterVector,
    p: usize,
    g: usize,
    hazard_covs: &[f64],
) -> f64 {
    theta.zeta[p]
        .iter()
        .zip(hazard_covs)
        .map(|(z, x)| class_coef(z, g) * x)
        .sum()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::links::LinkFamily;
    use crate::model::{Autocorr, CauseSpec, CovariateSpec, MarkerSpec, TimeBasis};
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    fn spec_with(causes: Vec<CauseSpec>) -> ModelSpec {
        ModelSpec {
            n_classes: 2,
            random_effect_basis: TimeBasis::poly(1, 0.0, 1.0),
            autocorr: Autocorr::None,
            class_specific_variance: false,
            latent_covariates: vec![],
            contrast_covariates: vec![],
            hazard_covariates: vec![CovariateSpec {
                name: "x1".into(),
                class_specific: false,
            }],
            membership_covariates: vec![],
            markers: vec![MarkerSpec {
                name: "y".into(),
                link: LinkFamily::Linear,
                random_intercept: false,
            }],
            causes,
        }
    }

    fn weibull_spec() -> ModelSpec {
        spec_with(vec![
            CauseSpec {
                name: "one".into(),
                baseline: BaselineFamily::Weibull,
            },
            CauseSpec {
                name: "two".into(),
                baseline: BaselineFamily::Weibull,
            },
        ])
    }

    #[test]
    fn weibull_cumulative_is_power_law() {
        let spec = weibull_spec();
        let h = Hazards::new(&spec).unwrap();
        // lambda = e^4.61, kappa = e^2.75.
        let nu: [f64; 2] = [4.61, 2.75];
        let lambda = nu[0].exp();
        let kappa = nu[1].exp();
        for t in [66.0, 70.0, 80.0, 85.0, 100.0] {
            let want = (t / lambda).powf(kappa);
            assert_abs_diff_eq!(
                h.baseline_cumulative(0, &nu, t),
                want,
                epsilon = 1e-12 * want.max(1.0)
            );
        }
        assert_eq!(h.baseline_cumulative(0, &nu, 0.0), 0.0);
        assert_eq!(h.baseline_cumulative(0, &nu, -1.0), 0.0);
    }

    #[test]
    fn weibull_cumulative_matches_hazard_quadrature() {
        let spec = weibull_spec();
        let h = Hazards::new(&spec).unwrap();
        let nu = [4.58, 2.73];
        for (a, b) in [(65.0, 75.0), (70.0, 71.0), (0.5, 85.0)] {
            let direct = h.baseline_cumulative(0, &nu, b) - h.baseline_cumulative(0, &nu, a);
            // Midpoint Riemann oracle.
            let n = 400_000;
            let step = (b - a) / n as f64;
            let mut acc = 0.0;
            for i in 0..n {
                acc += h.baseline_hazard(0, &nu, a + (i as f64 + 0.5) * step);
            }
            acc *= step;
            assert!(
                (direct - acc).abs() <= 1e-6 * acc.abs().max(1e-4),
                "[{a}, {b}]: closed form {direct} vs quadrature {acc}"
            );
        }
    }

    #[test]
    fn weibull_hazard_is_derivative_of_cumulative() {
        let spec = weibull_spec();
        let h = Hazards::new(&spec).unwrap();
        let nu = [1.5, 0.4];
        for t in [0.3, 1.0, 2.7, 6.0] {
            let eps = 1e-6 * t;
            let fd = (h.baseline_cumulative(0, &nu, t + eps)
                - h.baseline_cumulative(0, &nu, t - eps))
                / (2.0 * eps);
            let alpha = h.baseline_hazard(0, &nu, t);
            assert!(
                (fd - alpha).abs() <= 1e-6 * alpha,
                "t = {t}: hazard {alpha} vs derivative {fd}"
            );
        }
    }

    #[test]
    fn piecewise_cumulative_by_hand() {
        let spec = spec_with(vec![CauseSpec {
            name: "one".into(),
            baseline: BaselineFamily::Piecewise {
                cuts: vec![1.0, 2.0],
            },
        }]);
        let h = Hazards::new(&spec).unwrap();
        let nu = [0.5f64.ln(), 0.0, 2.0f64.ln()];
        assert_abs_diff_eq!(h.baseline_cumulative(0, &nu, 0.5), 0.25, epsilon = 1e-14);
        assert_abs_diff_eq!(h.baseline_cumulative(0, &nu, 1.0), 0.5, epsilon = 1e-14);
        assert_abs_diff_eq!(h.baseline_cumulative(0, &nu, 1.5), 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(h.baseline_cumulative(0, &nu, 3.0), 3.5, epsilon = 1e-14);
        // Heights are right-continuous at the cuts.
        assert_abs_diff_eq!(h.baseline_hazard(0, &nu, 1.0), 1.0);
        assert_abs_diff_eq!(h.baseline_hazard(0, &nu, 0.999), 0.5);
        assert_abs_diff_eq!(h.baseline_hazard(0, &nu, 2.0), 2.0);
    }

    #[test]
    fn mspline_cumulative_matches_exact_integral_family() {
        let spec = spec_with(vec![CauseSpec {
            name: "one".into(),
            baseline: BaselineFamily::MSpline {
                interior_knots: vec![1.0, 3.0],
                range: (0.0, 5.0),
            },
        }]);
        let h = Hazards::new(&spec).unwrap();
        let nu = [0.8, 0.5, 1.1, 0.3, 0.9, 0.6];
        let basis = MSplineBasis::new(0.0, 5.0, &[1.0, 3.0]).unwrap();
        for t in [0.5, 1.0, 2.2, 4.9, 5.0] {
            let got = h.baseline_cumulative(0, &nu, t);
            let mut ints = vec![0.0; basis.len()];
            basis.integrals(t, &mut ints).unwrap();
            let want: f64 = ints.iter().zip(&nu).map(|(i, v)| v * v * i).sum();
            assert!(
                (got - want).abs() < 1e-9 * (1.0 + want),
                "t = {t}: quadrature {got} vs exact {want}"
            );
        }
        // Beyond the window the hazard extends at its endpoint value.
        let at_end = h.baseline_hazard(0, &nu, 5.0);
        assert_abs_diff_eq!(h.baseline_hazard(0, &nu, 7.0), at_end);
        assert_abs_diff_eq!(
            h.baseline_cumulative(0, &nu, 7.0),
            h.baseline_cumulative(0, &nu, 5.0) + 2.0 * at_end,
            epsilon = 1e-12
        );
        // Before the window there is no hazard.
        assert_eq!(h.baseline_hazard(0, &nu, -0.5), 0.0);
    }

    #[test]
    fn covariates_scale_hazards_proportionally() {
        let spec = weibull_spec();
        let h = Hazards::new(&spec).unwrap();
        let mut theta = ParameterVector::template(&spec);
        theta.zeta[0][0] = vec![-0.28];
        theta.zeta[1][0] = vec![0.65];
        let lp0 = linear_predictor(&theta, 0, 0, &[1.0]);
        let lp1 = linear_predictor(&theta, 1, 1, &[1.0]);
        assert_abs_diff_eq!(lp0, -0.28);
        assert_abs_diff_eq!(lp1, 0.65);
        assert_abs_diff_eq!(linear_predictor(&theta, 0, 0, &[0.0]), 0.0);
        let nu = [1.0, 0.3];
        assert_abs_diff_eq!(
            h.cumulative(0, &nu, lp0, 2.0),
            h.baseline_cumulative(0, &nu, 2.0) * (-0.28f64).exp(),
            epsilon = 1e-14
        );
        // Class-specific effects pick their own entry.
        theta.zeta[0][0] = vec![0.1, 0.9];
        assert_abs_diff_eq!(linear_predictor(&theta, 0, 1, &[2.0]), 1.8);
    }

    #[test]
    fn constant_hazard_incidence_closed_form() {
        // Single cause with constant hazard a: incidence over [0, t] is
        // 1 - exp(-a t).
        let spec = spec_with(vec![CauseSpec {
            name: "one".into(),
            baseline: BaselineFamily::Piecewise { cuts: vec![] },
        }]);
        let h = Hazards::new(&spec).unwrap();
        let a = 0.7f64;
        let nu = vec![a.ln()];
        let class = ClassHazard {
            nu: vec![&nu],
            lp: vec![0.0],
        };
        for t in [0.1, 1.0, 2.5] {
            let got = h.cumulative_incidence(&class, 0, 0.0, t).unwrap();
            let want = 1.0 - (-a * t).exp();
            assert!(
                (got - want).abs() < 1e-6,
                "t = {t}: {got} vs closed form {want}"
            );
        }
    }

    #[test]
    fn two_equal_causes_split_incidence() {
        // Two causes with the same constant hazard a: each accumulates
        // (1 - exp(-2 a t)) / 2.
        let spec = spec_with(vec![
            CauseSpec {
                name: "one".into(),
                baseline: BaselineFamily::Piecewise { cuts: vec![] },
            },
            CauseSpec {
                name: "two".into(),
                baseline: BaselineFamily::Piecewise { cuts: vec![] },
            },
        ]);
        let h = Hazards::new(&spec).unwrap();
        let a = 0.4f64;
        let nu = vec![a.ln()];
        let class = ClassHazard {
            nu: vec![&nu, &nu],
            lp: vec![0.0, 0.0],
        };
        for t in [0.5, 2.0] {
            let got = h.cumulative_incidence(&class, 0, 0.0, t).unwrap();
            let want = 0.5 * (1.0 - (-2.0 * a * t).exp());
            assert!((got - want).abs() < 1e-6, "t = {t}: {got} vs {want}");
        }
        // Delayed entry renormalizes by survival at the entry time.
        let got = h.cumulative_incidence(&class, 0, 1.0, 3.0).unwrap();
        let want = 0.5 * (1.0 - (-2.0 * a * 2.0).exp());
        assert!((got - want).abs() < 1e-6, "{got} vs {want}");
        assert_eq!(h.cumulative_incidence(&class, 0, 3.0, 3.0).unwrap(), 0.0);
    }

    #[test]
    fn incidences_and_survival_partition_probability() {
        let spec = weibull_spec();
        let h = Hazards::new(&spec).unwrap();
        let nu1 = [1.2, 0.1];
        let nu2 = [0.9, -0.2];
        let class = ClassHazard {
            nu: vec![&nu1, &nu2],
            lp: vec![0.2, -0.1],
        };
        let t = 6.0;
        let f1 = h.cumulative_incidence(&class, 0, 0.0, t).unwrap();
        let f2 = h.cumulative_incidence(&class, 1, 0.0, t).unwrap();
        let s = h.survival(&class, t);
        assert!(
            (f1 + f2 + s - 1.0).abs() < 1e-8,
            "{f1} + {f2} + {s} != 1"
        );
    }

    proptest! {
        #[test]
        fn cumulative_hazards_are_nondecreasing(
            nu0 in -2.0f64..2.0,
            nu1 in -1.0f64..1.0,
            t1 in 0.01f64..8.0,
            dt in 0.0f64..4.0,
        ) {
            let spec = weibull_spec();
            let h = Hazards::new(&spec).unwrap();
            let nu = [nu0, nu1];
            let a = h.baseline_cumulative(0, &nu, t1);
            let b = h.baseline_cumulative(0, &nu, t1 + dt);
            prop_assert!(b >= a);
            prop_assert!(a >= 0.0);
        }
    }
}
