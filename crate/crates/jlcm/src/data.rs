//! Subject-level data: entry and event information, baseline covariates,
//! and per-marker measurement series, with CSV input/output.
//!
//! Two files describe a dataset:
//!
//! - survival file: `id,entry,time,cause,<covariate...>` — one row per
//!   subject; `cause` is `0` for censoring, `1..=P` for failure causes;
//!   extra columns are baseline covariates referenced by name in the model
//!   specification.
//! - longitudinal file: `id,marker,time,value` — one row per measurement.
//!
//! All validation failures name the offending subjects so data problems can
//! be fixed at the source.

use crate::error::Error;
use crate::links::LinkFamily;
use crate::model::ModelSpec;
use crate::Result;
use serde::{Deserialize, Serialize};
use std::collections::HashMap;
use std::path::Path;

/// Measurements of one marker for one subject, in time order.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct MarkerSeries {
    pub times: Vec<f64>,
    pub values: Vec<f64>,
}

impl MarkerSeries {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }
}

/// One subject: entry/event times, cause indicator, baseline covariates
/// (aligned with `Dataset::covariate_names`), and one series per marker
/// (aligned with `Dataset::marker_names`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubjectRecord {
    pub id: String,
    pub entry: f64,
    pub time: f64,
    /// 0 = censored, `1..=P` = failed from that cause.
    pub cause: usize,
    pub covariates: Vec<f64>,
    pub markers: Vec<MarkerSeries>,
}

impl SubjectRecord {
    pub fn total_measurements(&self) -> usize {
        self.markers.iter().map(MarkerSeries::len).sum()
    }
}

/// A full dataset: named covariate columns, named markers, one record per
/// subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub covariate_names: Vec<String>,
    pub marker_names: Vec<String>,
    pub subjects: Vec<SubjectRecord>,
}

impl Dataset {
    /// Read the survival and longitudinal files; markers are ordered as
    /// given in `marker_names` (normally the model's marker order).
    pub fn from_csv(
        survival: &Path,
        longitudinal: &Path,
        marker_names: &[String],
    ) -> Result<Self> {
        let mut reader = csv::Reader::from_path(survival)?;
        let headers = reader.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols.len() < 4 || cols[0] != "id" || cols[1] != "entry" || cols[2] != "time" || cols[3] != "cause" {
            return Err(Error::Data(format!(
                "survival file must start with columns id,entry,time,cause; found {}",
                cols.join(",")
            )));
        }
        let covariate_names: Vec<String> = cols[4..].iter().map(|s| s.to_string()).collect();
        let mut subjects = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        for row in reader.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let id = row
                .get(0)
                .ok_or_else(|| Error::Data(format!("survival line {line}: missing id")))?
                .to_string();
            if index.contains_key(&id) {
                return Err(Error::Data(format!(
                    "survival line {line}: duplicate subject id {id}"
                )));
            }
            let num = |i: usize, what: &str| -> Result<f64> {
                let raw = row.get(i).unwrap_or("");
                raw.trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "survival line {line}: cannot parse {what} value {raw:?} for subject {id}"
                    ))
                })
            };
            let entry = num(1, "entry")?;
            let time = num(2, "time")?;
            let cause_raw = num(3, "cause")?;
            if cause_raw < 0.0 || cause_raw.fract() != 0.0 {
                return Err(Error::Data(format!(
                    "survival line {line}: cause must be a nonnegative integer, got {cause_raw} for subject {id}"
                )));
            }
            let mut covariates = Vec::with_capacity(covariate_names.len());
            for (j, name) in covariate_names.iter().enumerate() {
                covariates.push(num(4 + j, name)?);
            }
            index.insert(id.clone(), subjects.len());
            subjects.push(SubjectRecord {
                id,
                entry,
                time,
                cause: cause_raw as usize,
                covariates,
                markers: vec![MarkerSeries::default(); marker_names.len()],
            });
        }

        let marker_index: HashMap<&str, usize> = marker_names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.as_str(), i))
            .collect();
        let mut reader = csv::Reader::from_path(longitudinal)?;
        let headers = reader.headers()?.clone();
        let cols: Vec<&str> = headers.iter().collect();
        if cols != ["id", "marker", "time", "value"] {
            return Err(Error::Data(format!(
                "longitudinal file must have columns id,marker,time,value; found {}",
                cols.join(",")
            )));
        }
        for row in reader.records() {
            let row = row?;
            let line = row.position().map(|p| p.line()).unwrap_or(0);
            let id = row.get(0).unwrap_or("");
            let marker = row.get(1).unwrap_or("");
            let subject = *index.get(id).ok_or_else(|| {
                Error::Data(format!(
                    "longitudinal line {line}: subject {id} has no survival row"
                ))
            })?;
            let k = *marker_index.get(marker).ok_or_else(|| {
                Error::Data(format!(
                    "longitudinal line {line}: unknown marker {marker:?}"
                ))
            })?;
            let num = |i: usize, what: &str| -> Result<f64> {
                let raw = row.get(i).unwrap_or("");
                raw.trim().parse::<f64>().map_err(|_| {
                    Error::Data(format!(
                        "longitudinal line {line}: cannot parse {what} value {raw:?}"
                    ))
                })
            };
            let series = &mut subjects[subject].markers[k];
            series.times.push(num(2, "time")?);
            series.values.push(num(3, "value")?);
        }
        Ok(Self {
            covariate_names,
            marker_names: marker_names.to_vec(),
            subjects,
        })
    }

    /// Write the two CSV files for this dataset.
    pub fn write_csv(&self, survival: &Path, longitudinal: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(survival)?;
        let mut header = vec!["id", "entry", "time", "cause"];
        header.extend(self.covariate_names.iter().map(String::as_str));
        w.write_record(&header)?;
        for s in &self.subjects {
            let mut row = vec![
                s.id.clone(),
                format_num(s.entry),
                format_num(s.time),
                s.cause.to_string(),
            ];
            row.extend(s.covariates.iter().map(|v| format_num(*v)));
            w.write_record(&row)?;
        }
        w.flush()?;

        let mut w = csv::Writer::from_path(longitudinal)?;
        w.write_record(["id", "marker", "time", "value"])?;
        for s in &self.subjects {
            for (k, series) in s.markers.iter().enumerate() {
                for (t, v) in series.times.iter().zip(&series.values) {
                    w.write_record([
                        s.id.as_str(),
                        self.marker_names[k].as_str(),
                        &format_num(*t),
                        &format_num(*v),
                    ])?;
                }
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn n_subjects(&self) -> usize {
        self.subjects.len()
    }

    pub fn covariate_index(&self, name: &str) -> Result<usize> {
        self.covariate_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| {
                Error::Data(format!(
                    "covariate {name:?} not present in the dataset (columns: {})",
                    self.covariate_names.join(", ")
                ))
            })
    }

    /// Observed (min, max) of a marker across all subjects, if any value
    /// exists.
    pub fn observed_range(&self, k: usize) -> Option<(f64, f64)> {
        let mut range: Option<(f64, f64)> = None;
        for s in &self.subjects {
            for v in &s.markers[k].values {
                range = Some(match range {
                    None => (*v, *v),
                    Some((lo, hi)) => (lo.min(*v), hi.max(*v)),
                });
            }
        }
        range
    }

    /// Check the dataset against a model specification; any violation is
    /// reported with the subjects involved.
    pub fn validate(&self, spec: &ModelSpec) -> Result<()> {
        if self.marker_names.len() != spec.n_markers()
            || self
                .marker_names
                .iter()
                .zip(&spec.markers)
                .any(|(n, m)| *n != m.name)
        {
            return Err(Error::Data(format!(
                "dataset markers [{}] do not match the model markers [{}]",
                self.marker_names.join(", "),
                spec.markers
                    .iter()
                    .map(|m| m.name.clone())
                    .collect::<Vec<_>>()
                    .join(", ")
            )));
        }
        for role in [
            spec.latent_covariates
                .iter()
                .map(|c| c.name.clone())
                .collect::<Vec<_>>(),
            spec.contrast_covariates.clone(),
            spec.hazard_covariates
                .iter()
                .map(|c| c.name.clone())
                .collect::<Vec<_>>(),
            spec.membership_covariates.clone(),
        ] {
            for name in role {
                self.covariate_index(&name)?;
            }
        }

        let mut bad_window = Vec::new();
        let mut bad_cause = Vec::new();
        let mut bad_order = Vec::new();
        let mut bad_times = Vec::new();
        let mut no_measure = Vec::new();
        let mut bad_values = Vec::new();
        for s in &self.subjects {
            if !(s.time > s.entry) {
                bad_window.push(s.id.clone());
            }
            if s.cause > spec.n_causes() {
                bad_cause.push(s.id.clone());
            }
            if s.total_measurements() == 0 {
                no_measure.push(s.id.clone());
            }
            for (k, series) in s.markers.iter().enumerate() {
                if series.times.windows(2).any(|w| w[0] > w[1]) {
                    bad_order.push(s.id.clone());
                }
                if series
                    .times
                    .iter()
                    .any(|t| *t < s.entry || *t > s.time)
                {
                    bad_times.push(s.id.clone());
                }
                if series
                    .values
                    .iter()
                    .any(|v| !value_admissible(&spec.markers[k].link, *v))
                {
                    bad_values.push(s.id.clone());
                }
            }
        }
        let mut problems = Vec::new();
        for (what, ids) in [
            ("event time not after entry time", &mut bad_window),
            ("cause outside the model's cause range", &mut bad_cause),
            ("unsorted measurement times", &mut bad_order),
            ("measurement times outside [entry, event]", &mut bad_times),
            ("no measurements on any marker", &mut no_measure),
            ("marker values outside the link's support", &mut bad_values),
        ] {
            ids.dedup();
            if !ids.is_empty() {
                problems.push(format!("{what}: subjects {}", summarize_ids(ids)));
            }
        }
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Data(problems.join("; ")))
        }
    }
}

fn value_admissible(link: &LinkFamily, v: f64) -> bool {
    match link {
        LinkFamily::Linear => v.is_finite(),
        LinkFamily::Spline { range, .. }
        | LinkFamily::Bounded { range, .. }
        | LinkFamily::BetaCdf { range, .. } => v >= range.0 && v <= range.1,
        LinkFamily::Threshold { max_level } => {
            v.fract() == 0.0 && v >= 0.0 && v <= *max_level as f64
        }
    }
}

fn summarize_ids(ids: &[String]) -> String {
    const SHOW: usize = 10;
    if ids.len() <= SHOW {
        ids.join(", ")
    } else {
        format!(
            "{} and {} more",
            ids[..SHOW].join(", "),
            ids.len() - SHOW
        )
    }
}

fn format_num(v: f64) -> String {
    // Shortest representation that round-trips; keeps files stable across
    // writes of identical data.
    let mut s = format!("{v}");
    if s == "-0" {
        s = "0".into();
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{
        Autocorr, BaselineFamily, CauseSpec, CovariateSpec, MarkerSpec, ModelSpec, TimeBasis,
    };

    fn two_marker_spec() -> ModelSpec {
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
            markers: vec![
                MarkerSpec {
                    name: "m1".into(),
                    link: LinkFamily::Linear,
                    random_intercept: false,
                },
                MarkerSpec {
                    name: "m2".into(),
                    link: LinkFamily::Threshold { max_level: 3 },
                    random_intercept: false,
                },
            ],
            causes: vec![CauseSpec {
                name: "event".into(),
                baseline: BaselineFamily::Weibull,
            }],
        }
    }

    fn subject(id: &str) -> SubjectRecord {
        SubjectRecord {
            id: id.into(),
            entry: 1.0,
            time: 5.0,
            cause: 1,
            covariates: vec![0.5],
            markers: vec![
                MarkerSeries {
                    times: vec![1.0, 2.5, 4.0],
                    values: vec![-0.3, 0.1, 0.9],
                },
                MarkerSeries {
                    times: vec![1.0, 4.0],
                    values: vec![0.0, 3.0],
                },
            ],
        }
    }

    fn dataset() -> Dataset {
        Dataset {
            covariate_names: vec!["x1".into()],
            marker_names: vec!["m1".into(), "m2".into()],
            subjects: vec![subject("a"), subject("b")],
        }
    }

    #[test]
    fn valid_dataset_passes() {
        dataset().validate(&two_marker_spec()).unwrap();
    }

    #[test]
    fn csv_roundtrip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let surv = dir.path().join("surv.csv");
        let long = dir.path().join("long.csv");
        let data = dataset();
        data.write_csv(&surv, &long).unwrap();
        let back = Dataset::from_csv(&surv, &long, &data.marker_names).unwrap();
        assert_eq!(back, data);
    }

    #[test]
    fn csv_rejects_malformed_headers() {
        let dir = tempfile::tempdir().unwrap();
        let surv = dir.path().join("surv.csv");
        let long = dir.path().join("long.csv");
        std::fs::write(&surv, "id,start,time,cause\n1,0,1,0\n").unwrap();
        std::fs::write(&long, "id,marker,time,value\n").unwrap();
        let err = Dataset::from_csv(&surv, &long, &["m1".into()]).unwrap_err();
        assert!(err.to_string().contains("id,entry,time,cause"), "{err}");
    }

    #[test]
    fn csv_rejects_unknown_ids_and_markers() {
        let dir = tempfile::tempdir().unwrap();
        let surv = dir.path().join("surv.csv");
        let long = dir.path().join("long.csv");
        std::fs::write(&surv, "id,entry,time,cause\ns1,0,2,0\n").unwrap();
        std::fs::write(&long, "id,marker,time,value\ns2,m1,1,0.5\n").unwrap();
        let err = Dataset::from_csv(&surv, &long, &["m1".into()]).unwrap_err();
        assert!(err.to_string().contains("s2"), "{err}");
        std::fs::write(&long, "id,marker,time,value\ns1,zz,1,0.5\n").unwrap();
        let err = Dataset::from_csv(&surv, &long, &["m1".into()]).unwrap_err();
        assert!(err.to_string().contains("zz"), "{err}");
    }

    #[test]
    fn csv_rejects_duplicate_subjects_and_bad_numbers() {
        let dir = tempfile::tempdir().unwrap();
        let surv = dir.path().join("surv.csv");
        let long = dir.path().join("long.csv");
        std::fs::write(&surv, "id,entry,time,cause\ns1,0,2,0\ns1,0,3,0\n").unwrap();
        std::fs::write(&long, "id,marker,time,value\n").unwrap();
        let err = Dataset::from_csv(&surv, &long, &["m1".into()]).unwrap_err();
        assert!(err.to_string().contains("duplicate"), "{err}");
        std::fs::write(&surv, "id,entry,time,cause\ns1,zero,2,0\n").unwrap();
        let err = Dataset::from_csv(&surv, &long, &["m1".into()]).unwrap_err();
        assert!(err.to_string().contains("entry"), "{err}");
    }

    #[test]
    fn validation_reports_offending_subjects() {
        let spec = two_marker_spec();
        let mut data = dataset();
        data.subjects[0].time = 0.5; // before entry
        data.subjects[1].markers[0].times = vec![2.0, 1.5, 3.0]; // unsorted
        let err = data.validate(&spec).unwrap_err().to_string();
        assert!(err.contains("not after entry"), "{err}");
        assert!(err.contains('a'), "{err}");
        assert!(err.contains("unsorted"), "{err}");
        assert!(err.contains('b'), "{err}");
    }

    #[test]
    fn validation_rejects_out_of_window_measurements() {
        let spec = two_marker_spec();
        let mut data = dataset();
        data.subjects[0].markers[0].times[2] = 6.0; // after event time
        let err = data.validate(&spec).unwrap_err().to_string();
        assert!(err.contains("outside [entry, event]"), "{err}");
    }

    #[test]
    fn validation_rejects_bad_cause_and_empty_subjects() {
        let spec = two_marker_spec();
        let mut data = dataset();
        data.subjects[0].cause = 2; // model has one cause
        data.subjects[1].markers = vec![MarkerSeries::default(), MarkerSeries::default()];
        let err = data.validate(&spec).unwrap_err().to_string();
        assert!(err.contains("cause"), "{err}");
        assert!(err.contains("no measurements"), "{err}");
    }

    #[test]
    fn validation_rejects_unsupported_marker_values() {
        let spec = two_marker_spec();
        let mut data = dataset();
        data.subjects[0].markers[1].values[1] = 2.5; // non-integer ordinal
        let err = data.validate(&spec).unwrap_err().to_string();
        assert!(err.contains("support"), "{err}");
        let mut data = dataset();
        data.subjects[0].markers[1].values[1] = 7.0; // above max level
        assert!(data.validate(&spec).is_err());
    }

    #[test]
    fn validation_requires_model_covariates() {
        let mut spec = two_marker_spec();
        spec.hazard_covariates[0].name = "x9".into();
        let err = dataset().validate(&spec).unwrap_err().to_string();
        assert!(err.contains("x9"), "{err}");
    }

    #[test]
    fn marker_name_mismatch_is_reported() {
        let spec = two_marker_spec();
        let mut data = dataset();
        data.marker_names[1] = "other".into();
        let err = data.validate(&spec).unwrap_err().to_string();
        assert!(err.contains("do not match"), "{err}");
    }

    #[test]
    fn observed_range_scans_all_subjects() {
        let data = dataset();
        assert_eq!(data.observed_range(0), Some((-0.3, 0.9)));
        assert_eq!(data.observed_range(1), Some((0.0, 3.0)));
        let empty = Dataset {
            covariate_names: vec![],
            marker_names: vec!["m".into()],
            subjects: vec![],
        };
        assert_eq!(empty.observed_range(0), None);
    }

    #[test]
    fn id_summaries_are_capped() {
        let ids: Vec<String> = (0..15).map(|i| format!("s{i}")).collect();
        let s = summarize_ids(&ids);
        assert!(s.contains("and 5 more"), "{s}");
    }
}
