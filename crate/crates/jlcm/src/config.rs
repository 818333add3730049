//! Line-based configuration files for model structure and simulation
//! scenarios.
//!
//! Model file directives (one per line, `#` comments allowed):
//!
//! ```text
//! classes 2
//! basis poly degree=1 center=65 scale=10
//! autocorr none
//! class_specific_variance
//! marker y1 link=ispline knots=23,27,31 range=0,40
//! marker y2 link=threshold levels=11
//! marker y3 link=betacdf range=0,100 pad=0.01 random_intercept
//! marker y4 link=bounded-ispline knots=10 range=0,30
//! cause death baseline=weibull
//! cause dropout baseline=piecewise cuts=1,2
//! cause other baseline=mspline knots=1.5 range=0,5
//! covariate x1 role=hazard
//! covariate sex role=latent class_specific
//! ```
//!
//! Scenario file directives:
//!
//! ```text
//! subjects 500
//! entry uniform min=65 max=85
//! followup 20
//! visit_spacing 2.5
//! covariate x1 bernoulli p=0.6
//! true mu[2][1] -0.570
//! ```
//!
//! `true` lines give generating values by free-parameter name on the
//! reporting scale: the unconstrained scale for everything except
//! `sigma_*` / `omega[*]` entries, which are written as the positive values
//! themselves and log-transformed on read.

use crate::error::Error;
use crate::links::LinkFamily;
use crate::model::{
    Autocorr, BaselineFamily, CauseSpec, CovariateSpec, MarkerSpec, ModelSpec, ParameterVector,
    TimeBasis,
};
use crate::Result;
use std::collections::HashMap;
use std::path::Path;

/// How a scenario draws one baseline covariate.
#[derive(Debug, Clone, PartialEq)]
pub enum CovariateDist {
    Bernoulli { p: f64 },
    Normal { mean: f64, sd: f64 },
    Constant { value: f64 },
}

/// How a scenario draws entry times.
#[derive(Debug, Clone, PartialEq)]
pub enum EntryDist {
    Uniform { min: f64, max: f64 },
    Constant { value: f64 },
}

/// A data-generating protocol: design sizes, entry/visit process, covariate
/// distributions, and named generating parameter values.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub n_subjects: usize,
    pub entry: EntryDist,
    /// Administrative censoring this long after entry.
    pub followup: f64,
    pub visit_spacing: f64,
    pub covariates: Vec<(String, CovariateDist)>,
    /// (free-parameter name, value on the reporting scale)
    pub truth: Vec<(String, f64)>,
}

impl ScenarioConfig {
    /// Resolve the named truth values into a structured parameter vector
    /// for `spec`. Every free parameter must be covered exactly once.
    pub fn truth_parameters(&self, spec: &ModelSpec) -> Result<ParameterVector> {
        let names = ParameterVector::free_names(spec);
        let index: HashMap<&str, usize> = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut flat = vec![f64::NAN; names.len()];
        for (name, value) in &self.truth {
            let i = *index.get(name.as_str()).ok_or_else(|| {
                Error::Config(format!("unknown parameter {name:?} in truth values"))
            })?;
            if !flat[i].is_nan() {
                return Err(Error::Config(format!(
                    "parameter {name:?} given twice in truth values"
                )));
            }
            flat[i] = if reported_positive(name) {
                if !(*value > 0.0) {
                    return Err(Error::Config(format!(
                        "parameter {name:?} must be positive, got {value}"
                    )));
                }
                value.ln()
            } else {
                *value
            };
        }
        let missing: Vec<&String> = names
            .iter()
            .zip(&flat)
            .filter(|(_, v)| v.is_nan())
            .map(|(n, _)| n)
            .collect();
        if !missing.is_empty() {
            return Err(Error::Config(format!(
                "truth values missing for: {}",
                missing
                    .iter()
                    .map(|s| s.as_str())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        ParameterVector::unpack(spec, &flat)
    }
}

/// Whether a free parameter is reported as a positive natural value rather
/// than on its unconstrained (log) scale.
pub fn reported_positive(name: &str) -> bool {
    name.starts_with("sigma_") || name.starts_with("omega[")
}

struct Line<'a> {
    no: usize,
    directive: &'a str,
    args: Vec<&'a str>,
}

impl<'a> Line<'a> {
    fn err(&self, msg: impl std::fmt::Display) -> Error {
        Error::Config(format!("line {}: {msg}", self.no))
    }

    /// Positional argument `i` (not containing '=').
    fn pos(&self, i: usize, what: &str) -> Result<&'a str> {
        self.args
            .get(i)
            .filter(|a| !a.contains('='))
            .copied()
            .ok_or_else(|| self.err(format!("expected {what}")))
    }

    fn num(&self, i: usize, what: &str) -> Result<f64> {
        let raw = self.pos(i, what)?;
        raw.parse()
            .map_err(|_| self.err(format!("cannot parse {what} from {raw:?}")))
    }

    fn kv(&self) -> HashMap<&'a str, &'a str> {
        self.args
            .iter()
            .filter_map(|a| a.split_once('='))
            .collect()
    }

    fn flag(&self, name: &str) -> bool {
        self.args.iter().any(|a| *a == name)
    }

    fn kv_num(&self, kv: &HashMap<&'a str, &'a str>, key: &str) -> Result<f64> {
        let raw = kv
            .get(key)
            .ok_or_else(|| self.err(format!("missing {key}=")))?;
        raw.parse()
            .map_err(|_| self.err(format!("cannot parse {key}={raw:?}")))
    }

    fn kv_list(&self, kv: &HashMap<&'a str, &'a str>, key: &str) -> Result<Vec<f64>> {
        let raw = kv
            .get(key)
            .ok_or_else(|| self.err(format!("missing {key}=")))?;
        raw.split(',')
            .map(|p| {
                p.parse()
                    .map_err(|_| self.err(format!("cannot parse {key} entry {p:?}")))
            })
            .collect()
    }

    fn kv_pair(&self, kv: &HashMap<&'a str, &'a str>, key: &str) -> Result<(f64, f64)> {
        let list = self.kv_list(kv, key)?;
        if list.len() != 2 {
            return Err(self.err(format!("{key}= needs exactly two values")));
        }
        Ok((list[0], list[1]))
    }
}

fn lines(text: &str) -> impl Iterator<Item = Line<'_>> {
    text.lines().enumerate().filter_map(|(i, raw)| {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            return None;
        }
        let mut parts = body.split_whitespace();
        let directive = parts.next()?;
        Some(Line {
            no: i + 1,
            directive,
            args: parts.collect(),
        })
    })
}

/// Parse a model-structure file.
pub fn parse_model(text: &str) -> Result<ModelSpec> {
    let mut n_classes = None;
    let mut basis = None;
    let mut autocorr = Autocorr::None;
    let mut class_specific_variance = false;
    let mut markers = Vec::new();
    let mut causes = Vec::new();
    let mut latent = Vec::new();
    let mut contrast = Vec::new();
    let mut hazard = Vec::new();
    let mut membership = Vec::new();
    for line in lines(text) {
        match line.directive {
            "classes" => n_classes = Some(line.num(0, "class count")? as usize),
            "basis" => {
                let kind = line.pos(0, "basis kind")?;
                if kind != "poly" {
                    return Err(line.err(format!("unknown basis kind {kind:?}")));
                }
                let kv = line.kv();
                basis = Some(TimeBasis::poly(
                    line.kv_num(&kv, "degree")? as u32,
                    line.kv_num(&kv, "center")?,
                    line.kv_num(&kv, "scale")?,
                ));
            }
            "autocorr" => {
                autocorr = match line.pos(0, "autocorr kind")? {
                    "none" => Autocorr::None,
                    "brownian" => Autocorr::Brownian,
                    "ar" => Autocorr::Ar,
                    other => return Err(line.err(format!("unknown autocorr kind {other:?}"))),
                }
            }
            "class_specific_variance" => class_specific_variance = true,
            "marker" => {
                let name = line.pos(0, "marker name")?;
                let kv = line.kv();
                let link = match *kv
                    .get("link")
                    .ok_or_else(|| line.err("missing link="))?
                {
                    "linear" => LinkFamily::Linear,
                    "ispline" => LinkFamily::Spline {
                        interior_knots: line.kv_list(&kv, "knots")?,
                        range: line.kv_pair(&kv, "range")?,
                    },
                    "betacdf" => LinkFamily::BetaCdf {
                        range: line.kv_pair(&kv, "range")?,
                        pad: match kv.get("pad") {
                            Some(_) => line.kv_num(&kv, "pad")?,
                            None => 0.01,
                        },
                    },
                    "threshold" => {
                        let levels = line.kv_num(&kv, "levels")? as usize;
                        if levels < 2 {
                            return Err(line.err("threshold link needs levels >= 2"));
                        }
                        LinkFamily::Threshold {
                            max_level: levels - 1,
                        }
                    }
                    "bounded-ispline" => LinkFamily::Bounded {
                        interior_knots: line.kv_list(&kv, "knots")?,
                        range: line.kv_pair(&kv, "range")?,
                    },
                    other => return Err(line.err(format!("unknown link family {other:?}"))),
                };
                markers.push(MarkerSpec {
                    name: name.into(),
                    link,
                    random_intercept: line.flag("random_intercept"),
                });
            }
            "cause" => {
                let name = line.pos(0, "cause name")?;
                let kv = line.kv();
                let baseline = match *kv
                    .get("baseline")
                    .ok_or_else(|| line.err("missing baseline="))?
                {
                    "weibull" => BaselineFamily::Weibull,
                    "piecewise" => BaselineFamily::Piecewise {
                        cuts: line.kv_list(&kv, "cuts")?,
                    },
                    "mspline" => BaselineFamily::MSpline {
                        interior_knots: line.kv_list(&kv, "knots")?,
                        range: line.kv_pair(&kv, "range")?,
                    },
                    other => return Err(line.err(format!("unknown baseline family {other:?}"))),
                };
                causes.push(CauseSpec {
                    name: name.into(),
                    baseline,
                });
            }
            "covariate" => {
                let name = line.pos(0, "covariate name")?;
                let kv = line.kv();
                let role = *kv.get("role").ok_or_else(|| line.err("missing role="))?;
                let class_specific = line.flag("class_specific");
                match role {
                    "latent" => latent.push(CovariateSpec {
                        name: name.into(),
                        class_specific,
                    }),
                    "contrast" => contrast.push(name.to_string()),
                    "hazard" => hazard.push(CovariateSpec {
                        name: name.into(),
                        class_specific,
                    }),
                    "membership" => membership.push(name.to_string()),
                    other => return Err(line.err(format!("unknown covariate role {other:?}"))),
                }
            }
            other => return Err(line.err(format!("unknown model directive {other:?}"))),
        }
    }
    let spec = ModelSpec {
        n_classes: n_classes.ok_or_else(|| Error::Config("missing `classes` line".into()))?,
        random_effect_basis: basis.ok_or_else(|| Error::Config("missing `basis` line".into()))?,
        autocorr,
        class_specific_variance,
        latent_covariates: latent,
        contrast_covariates: contrast,
        hazard_covariates: hazard,
        membership_covariates: membership,
        markers,
        causes,
    };
    spec.validate()?;
    Ok(spec)
}

pub fn parse_model_file(path: &Path) -> Result<ModelSpec> {
    let text = std::fs::read_to_string(path)?;
    parse_model(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}

/// Parse a simulation-scenario file.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig> {
    let mut n_subjects = None;
    let mut entry = None;
    let mut followup = None;
    let mut visit_spacing = None;
    let mut covariates = Vec::new();
    let mut truth = Vec::new();
    for line in lines(text) {
        match line.directive {
            "subjects" => n_subjects = Some(line.num(0, "subject count")? as usize),
            "entry" => {
                let kv = line.kv();
                entry = Some(match line.pos(0, "entry distribution")? {
                    "uniform" => EntryDist::Uniform {
                        min: line.kv_num(&kv, "min")?,
                        max: line.kv_num(&kv, "max")?,
                    },
                    "constant" => EntryDist::Constant {
                        value: line.kv_num(&kv, "value")?,
                    },
                    other => {
                        return Err(line.err(format!("unknown entry distribution {other:?}")))
                    }
                });
            }
            "followup" => followup = Some(line.num(0, "follow-up duration")?),
            "visit_spacing" => visit_spacing = Some(line.num(0, "visit spacing")?),
            "covariate" => {
                let name = line.pos(0, "covariate name")?;
                let kv = line.kv();
                let dist = match line.pos(1, "covariate distribution")? {
                    "bernoulli" => CovariateDist::Bernoulli {
                        p: line.kv_num(&kv, "p")?,
                    },
                    "normal" => CovariateDist::Normal {
                        mean: line.kv_num(&kv, "mean")?,
                        sd: line.kv_num(&kv, "sd")?,
                    },
                    "constant" => CovariateDist::Constant {
                        value: line.kv_num(&kv, "value")?,
                    },
                    other => {
                        return Err(line.err(format!("unknown covariate distribution {other:?}")))
                    }
                };
                covariates.push((name.to_string(), dist));
            }
            "true" => {
                let name = line.pos(0, "parameter name")?;
                let value = line.num(1, "parameter value")?;
                truth.push((name.to_string(), value));
            }
            other => return Err(line.err(format!("unknown scenario directive {other:?}"))),
        }
    }
    Ok(ScenarioConfig {
        n_subjects: n_subjects
            .ok_or_else(|| Error::Config("missing `subjects` line".into()))?,
        entry: entry.ok_or_else(|| Error::Config("missing `entry` line".into()))?,
        followup: followup.ok_or_else(|| Error::Config("missing `followup` line".into()))?,
        visit_spacing: visit_spacing
            .ok_or_else(|| Error::Config("missing `visit_spacing` line".into()))?,
        covariates,
        truth,
    })
}

pub fn parse_scenario_file(path: &Path) -> Result<ScenarioConfig> {
    let text = std::fs::read_to_string(path)?;
    parse_scenario(&text).map_err(|e| match e {
        Error::Config(msg) => Error::Config(format!("{}: {msg}", path.display())),
        other => other,
    })
}
