//! Saved fits. A fit artifact is a self-contained JSON document holding
//! the model structure, the estimates in both structured and free form,
//! the curvature information needed for standard errors and
//! parametric-bootstrap bands, and the convergence diagnostics — enough
//! to compute predictions, tests, and classifications later without the
//! training data or a refit.
//!
//! Floats survive the JSON round trip exactly, so a reloaded artifact
//! reproduces in-process results bit for bit.

use crate::error::Error;
use crate::estimator::{CriteriaValues, FitResult, Termination};
use crate::likelihood::LikelihoodOptions;
use crate::model::{ModelSpec, ParameterVector};
use crate::Result;
use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};
use std::path::Path;

/// Artifact layout revision this build writes and reads.
pub const FORMAT_VERSION: u32 = 1;

/// A fitted model in storable form. `free` and the matrices live in the
/// unconstrained parameter space; `theta` carries the same estimates on
/// the model scale.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitArtifact {
    pub format_version: u32,
    pub spec: ModelSpec,
    /// Likelihood settings the fit used; reused for predictions and
    /// tests so artifact-based results match in-process ones.
    pub likelihood: LikelihoodOptions,
    pub theta: ParameterVector,
    pub free: Vec<f64>,
    pub free_names: Vec<String>,
    pub log_likelihood: f64,
    pub bic: f64,
    pub np: usize,
    pub n_subjects: usize,
    pub iterations: usize,
    pub termination: Termination,
    pub criteria: CriteriaValues,
    pub loglik_trace: Vec<f64>,
    pub gradient: Vec<f64>,
    /// Observed information (row-major).
    pub neg_hessian: Vec<Vec<f64>>,
    /// Inverse information when it exists (row-major).
    pub covariance: Option<Vec<Vec<f64>>>,
    pub start_id: String,
}

/// One row of the parameter table: estimate and standard error on the
/// reporting scale (standard deviations and variance inflations as the
/// positive values themselves, everything else unconstrained).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParameterRow {
    pub name: String,
    pub estimate: f64,
    pub standard_error: Option<f64>,
    /// True for values pinned by the identifiability conventions rather
    /// than estimated.
    pub fixed: bool,
}

fn matrix_rows(m: &DMatrix<f64>) -> Vec<Vec<f64>> {
    (0..m.nrows())
        .map(|i| (0..m.ncols()).map(|j| m[(i, j)]).collect())
        .collect()
}

fn rows_matrix(rows: &[Vec<f64>], n: usize, what: &str) -> Result<DMatrix<f64>> {
    if rows.len() != n || rows.iter().any(|r| r.len() != n) {
        return Err(Error::Config(format!(
            "artifact {what} is not a {n}x{n} matrix"
        )));
    }
    Ok(DMatrix::from_fn(n, n, |i, j| rows[i][j]))
}

impl FitArtifact {
    pub fn from_fit(spec: &ModelSpec, fit: &FitResult, likelihood: &LikelihoodOptions) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            spec: spec.clone(),
            likelihood: likelihood.clone(),
            theta: fit.theta.clone(),
            free: fit.free.clone(),
            free_names: fit.free_names.clone(),
            log_likelihood: fit.log_likelihood,
            bic: fit.bic,
            np: fit.np,
            n_subjects: fit.n_subjects,
            iterations: fit.iterations,
            termination: fit.termination,
            criteria: fit.criteria,
            loglik_trace: fit.loglik_trace.clone(),
            gradient: fit.gradient.clone(),
            neg_hessian: matrix_rows(&fit.neg_hessian),
            covariance: fit.covariance.as_ref().map(matrix_rows),
            start_id: fit.start_id.clone(),
        }
    }

    /// Reassemble the in-memory fit (validating the stored shapes), so
    /// every post-fit routine works off a loaded artifact.
    pub fn to_fit(&self) -> Result<FitResult> {
        self.validate()?;
        Ok(FitResult {
            theta: self.theta.clone(),
            free: self.free.clone(),
            free_names: self.free_names.clone(),
            log_likelihood: self.log_likelihood,
            bic: self.bic,
            np: self.np,
            n_subjects: self.n_subjects,
            iterations: self.iterations,
            termination: self.termination,
            criteria: self.criteria,
            loglik_trace: self.loglik_trace.clone(),
            gradient: self.gradient.clone(),
            neg_hessian: rows_matrix(&self.neg_hessian, self.np, "information")?,
            covariance: self
                .covariance
                .as_ref()
                .map(|c| rows_matrix(c, self.np, "covariance"))
                .transpose()?,
            start_id: self.start_id.clone(),
        })
    }

    pub fn converged(&self) -> bool {
        self.termination == Termination::Converged
    }

    pub fn validate(&self) -> Result<()> {
        if self.format_version != FORMAT_VERSION {
            return Err(Error::Config(format!(
                "artifact format {} not supported (this build reads {FORMAT_VERSION})",
                self.format_version
            )));
        }
        self.spec.validate()?;
        self.theta.check_shape(&self.spec)?;
        let expect = ParameterVector::free_names(&self.spec);
        if self.free_names != expect {
            return Err(Error::Config(
                "artifact free-parameter names do not match its model structure".into(),
            ));
        }
        if self.np != expect.len() || self.free.len() != self.np || self.gradient.len() != self.np
        {
            return Err(Error::Config(format!(
                "artifact stores {} free values for {} named parameters",
                self.free.len(),
                expect.len()
            )));
        }
        rows_matrix(&self.neg_hessian, self.np, "information")?;
        if let Some(c) = &self.covariance {
            rows_matrix(c, self.np, "covariance")?;
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)?;
        std::fs::write(path, text).map_err(|e| {
            Error::Config(format!("cannot write artifact {}: {e}", path.display()))
        })
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::Config(format!("cannot read artifact {}: {e}", path.display()))
        })?;
        let artifact: Self = serde_json::from_str(&text)?;
        artifact.validate()?;
        Ok(artifact)
    }

    /// The parameter table: free parameters in estimation order with
    /// reporting-scale estimates and standard errors, plus the
    /// convention-fixed values flagged and slotted next to their
    /// families.
    pub fn parameter_table(&self) -> Vec<ParameterRow> {
        let ses: Option<Vec<f64>> = self
            .covariance
            .as_ref()
            .map(|c| (0..self.np).map(|j| c[j][j].max(0.0).sqrt()).collect());
        let mut rows: Vec<ParameterRow> = self
            .free_names
            .iter()
            .zip(&self.free)
            .enumerate()
            .map(|(j, (name, &value))| {
                let se = ses.as_ref().map(|s| s[j]);
                if crate::config::reported_positive(name) {
                    let v = value.exp();
                    ParameterRow {
                        name: name.clone(),
                        estimate: v,
                        standard_error: se.map(|s| v * s),
                        fixed: false,
                    }
                } else {
                    ParameterRow {
                        name: name.clone(),
                        estimate: value,
                        standard_error: se,
                        fixed: false,
                    }
                }
            })
            .collect();

        let fixed = |name: &str, estimate: f64| ParameterRow {
            name: name.into(),
            estimate,
            standard_error: None,
            fixed: true,
        };
        let insert_before = |rows: &mut Vec<ParameterRow>, family: &str, row: ParameterRow| {
            let at = rows
                .iter()
                .position(|r| r.name.starts_with(family))
                .unwrap_or(rows.len());
            rows.insert(at, row);
        };
        insert_before(&mut rows, "mu[", fixed("mu[1][1]", 0.0));
        insert_before(&mut rows, "bchol[", fixed("bchol[1][1]", 1.0));
        if self.spec.class_specific_variance {
            let at = rows
                .iter()
                .rposition(|r| r.name.starts_with("omega["))
                .map(|i| i + 1)
                .unwrap_or(rows.len());
            rows.insert(at, fixed(&format!("omega[{}]", self.spec.n_classes), 1.0));
        }
        rows
    }
}
