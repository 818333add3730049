//! Command-line front end for the joint latent-class model library:
//! fitting, simulation, replicate studies, dynamic prediction, the
//! conditional-independence score test, goodness of fit, and posterior
//! classification. Every command writes plot-ready CSV tables (each with
//! a one-line `.schema` sidecar describing its columns) into a fresh
//! output directory and prints a human-readable summary. Outputs carry
//! no timestamps, so identical inputs and seeds give byte-identical
//! files.

use clap::{Args, Parser, Subcommand};
use jlcm::artifact::FitArtifact;
use jlcm::config::{parse_model_file, parse_scenario_file};
use jlcm::data::Dataset;
use jlcm::estimator::{
    marquardt_fit, multi_start, ConvergenceCriteria, FitOptions, StartStrategy,
};
use jlcm::inference::{dynamic_prediction, dynamic_prediction_band, Inference};
use jlcm::model::{ModelSpec, ParameterVector};
use jlcm::simulator::{generate_cohort, run_replicate_study, Scenario, StudyOptions};
use jlcm::Error;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

type Result<T> = std::result::Result<T, Error>;

#[derive(Parser)]
#[command(
    name = "jlcm",
    about = "Joint latent-class models for multivariate longitudinal markers \
             and competing risks",
    version
)]
struct Cli {
    /// Cap the worker thread count (default: one per CPU).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit the model to data and write a fit artifact.
    Fit(FitCmd),
    /// Generate a synthetic cohort from a scenario.
    Simulate(SimulateCmd),
    /// Generate and fit many cohorts; summarize recovery and test size.
    ReplicateStudy(StudyCmd),
    /// Predict the probability of an event after a landmark time.
    Predict(PredictCmd),
    /// Test conditional independence between markers and event times.
    ScoreTest(ScoreTestCmd),
    /// Compare posterior-weighted observed and predicted marker means.
    Gof(GofCmd),
    /// Posterior class membership for every subject.
    Classify(ClassifyCmd),
}

#[derive(Args)]
struct OutputArgs {
    /// Directory the command writes into (created; must not exist).
    #[arg(long)]
    out: PathBuf,
    /// Write into an existing output directory.
    #[arg(long)]
    force: bool,
}

impl OutputArgs {
    fn prepare(&self) -> Result<&Path> {
        match std::fs::create_dir(&self.out) {
            Ok(()) => Ok(&self.out),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                if self.force {
                    Ok(&self.out)
                } else {
                    Err(Error::Config(format!(
                        "output directory {} already exists; pass --force to write into it",
                        self.out.display()
                    )))
                }
            }
            Err(e) => Err(Error::Config(format!(
                "cannot create output directory {}: {e}",
                self.out.display()
            ))),
        }
    }
}

#[derive(Args)]
struct DataArgs {
    /// Survival CSV: columns id, entry, time, cause, then covariates.
    #[arg(long)]
    survival: PathBuf,
    /// Longitudinal CSV: columns id, marker, time, value.
    #[arg(long)]
    longitudinal: PathBuf,
}

impl DataArgs {
    fn load(&self, spec: &ModelSpec) -> Result<Dataset> {
        let marker_names: Vec<String> =
            spec.markers.iter().map(|m| m.name.clone()).collect();
        let data = Dataset::from_csv(&self.survival, &self.longitudinal, &marker_names)?;
        data.validate(spec)?;
        Ok(data)
    }
}

#[derive(Args)]
struct EstimationArgs {
    /// Convergence thresholds: parameter change, log-likelihood change,
    /// score criterion.
    #[arg(long, value_name = "E1,E2,E3", default_value = "1e-4,1e-4,1e-4")]
    criteria: String,
    #[arg(long, default_value_t = 500)]
    max_iterations: usize,
    /// Gauss-Hermite nodes per random-effect dimension.
    #[arg(long, default_value_t = 15)]
    nodes: usize,
}

impl EstimationArgs {
    fn fit_options(&self) -> Result<FitOptions> {
        let parts: Vec<f64> = self
            .criteria
            .split(',')
            .map(|p| {
                p.trim().parse::<f64>().map_err(|_| {
                    Error::Config(format!("cannot read convergence threshold {p:?}"))
                })
            })
            .collect::<Result<_>>()?;
        if parts.len() != 3 {
            return Err(Error::Config(
                "--criteria takes exactly three comma-separated thresholds".into(),
            ));
        }
        let mut options = FitOptions::default();
        options.criteria = ConvergenceCriteria {
            param_tol: parts[0],
            loglik_tol: parts[1],
            score_tol: parts[2],
            max_iterations: self.max_iterations,
        };
        options.likelihood.hermite_nodes = self.nodes;
        Ok(options)
    }
}

fn parse_list(text: &str, what: &str) -> Result<Vec<f64>> {
    text.split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Error::Config(format!("cannot read {what} value {p:?}")))
        })
        .collect()
}

/// Write a CSV table plus its one-line `.schema` sidecar.
fn write_table(dir: &Path, name: &str, schema: &str, content: &str) -> Result<()> {
    std::fs::write(dir.join(name), content)?;
    std::fs::write(dir.join(format!("{name}.schema")), format!("{schema}\n"))?;
    Ok(())
}

fn csv_opt(v: Option<f64>) -> String {
    v.map(|x| x.to_string()).unwrap_or_default()
}

#[derive(Args)]
struct FitCmd {
    /// Model structure file.
    #[arg(long)]
    model: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Number of latent classes: a single value ("2") or an inclusive
    /// sweep ("1..4") that fits each count and compares BIC.
    #[arg(long)]
    classes: Option<String>,
    /// Number of start points; above 1, starts 2.. are random
    /// perturbations of the neutral start.
    #[arg(long, default_value_t = 1)]
    starts: usize,
    /// Relative scale of the start-point perturbations.
    #[arg(long, default_value_t = 0.5)]
    start_scale: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    estimation: EstimationArgs,
    #[command(flatten)]
    output: OutputArgs,
}

fn parse_class_range(text: &str) -> Result<(usize, usize)> {
    let bad = || Error::Config(format!("cannot read class count {text:?} (use \"2\" or \"1..4\")"));
    if let Some((a, b)) = text.split_once("..") {
        let lo: usize = a.trim().parse().map_err(|_| bad())?;
        let hi: usize = b.trim().parse().map_err(|_| bad())?;
        if lo == 0 || hi < lo {
            return Err(bad());
        }
        Ok((lo, hi))
    } else {
        let g: usize = text.trim().parse().map_err(|_| bad())?;
        if g == 0 {
            return Err(bad());
        }
        Ok((g, g))
    }
}

fn parameter_table_text(artifact: &FitArtifact) -> String {
    let mut out = format!("{:<22} {:>12} {:>12}\n", "parameter", "estimate", "SE");
    for row in artifact.parameter_table() {
        let se = match (row.fixed, row.standard_error) {
            (true, _) => "fixed".to_string(),
            (false, Some(se)) => format!("{se:.4}"),
            (false, None) => "-".to_string(),
        };
        out.push_str(&format!("{:<22} {:>12.4} {:>12}\n", row.name, row.estimate, se));
    }
    out
}

fn parameter_table_csv(artifact: &FitArtifact) -> String {
    let mut out = String::from("name,estimate,standard_error,fixed\n");
    for row in artifact.parameter_table() {
        out.push_str(&format!(
            "{},{},{},{}\n",
            row.name,
            row.estimate,
            csv_opt(row.standard_error),
            row.fixed
        ));
    }
    out
}

fn run_fit(cmd: FitCmd) -> Result<ExitCode> {
    let base_spec = parse_model_file(&cmd.model)?;
    let (lo, hi) = match &cmd.classes {
        Some(text) => parse_class_range(text)?,
        None => (base_spec.n_classes, base_spec.n_classes),
    };
    let options = cmd.estimation.fit_options()?;
    let data = cmd.data.load(&base_spec)?;
    let dir = cmd.output.prepare()?;

    let mut fits = Vec::new();
    for g in lo..=hi {
        let mut spec = base_spec.clone();
        spec.n_classes = g;
        spec.validate()?;
        let template = ParameterVector::template(&spec);
        let fit = if cmd.starts <= 1 {
            marquardt_fit(&spec, &data, &template, &options, "neutral")?
        } else {
            let strategy = StartStrategy::Perturb {
                base: template,
                n_starts: cmd.starts,
                scale: cmd.start_scale,
                seed: cmd.seed,
            };
            multi_start(&spec, &data, &strategy, &options)?.best_fit().clone()
        };
        let artifact = FitArtifact::from_fit(&spec, &fit, &options.likelihood);
        let name = if lo == hi {
            "fit.json".to_string()
        } else {
            format!("fit_g{g}.json")
        };
        artifact.save(&dir.join(&name))?;
        fits.push((g, name, artifact));
    }

    // Report the best fit by BIC, preferring converged ones.
    let best = fits
        .iter()
        .enumerate()
        .filter(|(_, (_, _, a))| a.converged())
        .min_by(|(_, (_, _, a)), (_, (_, _, b))| a.bic.total_cmp(&b.bic))
        .map(|(i, _)| i)
        .unwrap_or_else(|| {
            (0..fits.len())
                .min_by(|&i, &j| fits[i].2.bic.total_cmp(&fits[j].2.bic))
                .unwrap()
        });

    if lo != hi {
        let mut csv = String::from("classes,np,log_likelihood,bic,converged,artifact\n");
        for (g, name, a) in &fits {
            csv.push_str(&format!(
                "{g},{},{},{},{},{name}\n",
                a.np,
                a.log_likelihood,
                a.bic,
                a.converged()
            ));
        }
        write_table(
            dir,
            "bic_by_classes.csv",
            "classes: int; np: int; log_likelihood: float; bic: float; \
             converged: bool; artifact: file name",
            &csv,
        )?;
        println!("class-count comparison (lower BIC is better):");
        for (g, _, a) in &fits {
            println!(
                "  G={g}: loglik {:.3}, np {}, BIC {:.3}{}",
                a.log_likelihood,
                a.np,
                a.bic,
                if a.converged() { "" } else { "  [not converged]" }
            );
        }
        println!("selected G={} by BIC", fits[best].0);
    }

    let (g, name, artifact) = &fits[best];
    write_table(
        dir,
        "parameters.csv",
        "name: parameter; estimate: reporting scale; standard_error: \
         delta-method for positive-scale rows, empty when unavailable; \
         fixed: bool",
        &parameter_table_csv(artifact),
    )?;
    print!("{}", parameter_table_text(artifact));
    println!(
        "log-likelihood {:.4}; BIC {:.4}; {} free parameters; {} subjects",
        artifact.log_likelihood, artifact.bic, artifact.np, artifact.n_subjects
    );
    println!(
        "{} after {} iterations (start {}); final criteria: parameters {:.2e}, \
         log-likelihood {:.2e}, score {:.2e}",
        match artifact.converged() {
            true => "converged".to_string(),
            false => format!("did not converge ({:?})", artifact.termination),
        },
        artifact.iterations,
        artifact.start_id,
        artifact.criteria.param_change,
        artifact.criteria.loglik_change,
        artifact.criteria.score
    );
    println!("artifact written to {}", dir.join(name).display());
    let _ = g;

    if fits.iter().all(|(_, _, a)| a.converged()) {
        Ok(ExitCode::SUCCESS)
    } else {
        Ok(ExitCode::from(2))
    }
}

#[derive(Args)]
struct SimulateCmd {
    /// Model structure file.
    #[arg(long)]
    model: PathBuf,
    /// Scenario file: design laws plus generating parameter values.
    #[arg(long)]
    scenario: PathBuf,
    /// Which replicate stream to draw.
    #[arg(long, default_value_t = 0)]
    replicate: u64,
    #[arg(long, default_value_t = 1729)]
    seed: u64,
    /// Uniform perturbation half-width for visits after the first.
    #[arg(long, default_value_t = 0.0)]
    visit_jitter: f64,
    #[command(flatten)]
    output: OutputArgs,
}

fn build_scenario(
    model: &Path,
    scenario: &Path,
    seed: u64,
    visit_jitter: f64,
) -> Result<Scenario> {
    let spec = parse_model_file(model)?;
    let design = parse_scenario_file(scenario)?;
    let theta = design.truth_parameters(&spec)?;
    let scenario = Scenario {
        spec,
        theta,
        design,
        visit_jitter,
        seed,
    };
    scenario.validate()?;
    Ok(scenario)
}

fn run_simulate(cmd: SimulateCmd) -> Result<ExitCode> {
    let scenario = build_scenario(&cmd.model, &cmd.scenario, cmd.seed, cmd.visit_jitter)?;
    let dir = cmd.output.prepare()?;
    let cohort = generate_cohort(&scenario, cmd.replicate)?;
    cohort
        .data
        .write_csv(&dir.join("survival.csv"), &dir.join("longitudinal.csv"))?;
    let mut classes = String::from("id,class\n");
    for (s, g) in cohort.data.subjects.iter().zip(&cohort.classes) {
        classes.push_str(&format!("{},{}\n", s.id, g + 1));
    }
    write_table(
        dir,
        "true_classes.csv",
        "id: subject; class: generating class (1-based)",
        &classes,
    )?;

    let n = cohort.data.n_subjects();
    println!("wrote {n} subjects to {}", dir.display());
    for (m, name) in scenario.spec.markers.iter().map(|m| &m.name).enumerate() {
        let total: usize = cohort.data.subjects.iter().map(|s| s.markers[m].len()).sum();
        println!(
            "  marker {name}: {total} measurements ({:.2} per subject)",
            total as f64 / n as f64
        );
    }
    for (p, cause) in scenario.spec.causes.iter().enumerate() {
        let events = cohort.data.subjects.iter().filter(|s| s.cause == p + 1).count();
        println!("  cause {}: {events} events", cause.name);
    }
    let censored = cohort.data.subjects.iter().filter(|s| s.cause == 0).count();
    println!("  censored: {censored}");
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct StudyCmd {
    /// Model structure file.
    #[arg(long)]
    model: PathBuf,
    /// Scenario file: design laws plus generating parameter values.
    #[arg(long)]
    scenario: PathBuf,
    #[arg(long)]
    replicates: usize,
    /// Nominal level for the score test on each converged fit; 0 skips
    /// testing.
    #[arg(long, default_value_t = 0.05)]
    level: f64,
    /// Relative size of the truth perturbation used as each replicate's
    /// start point.
    #[arg(long, default_value_t = 0.1)]
    start_jitter: f64,
    #[arg(long, default_value_t = 1729)]
    seed: u64,
    #[command(flatten)]
    estimation: EstimationArgs,
    #[command(flatten)]
    output: OutputArgs,
}

fn run_study(cmd: StudyCmd) -> Result<ExitCode> {
    let scenario = build_scenario(&cmd.model, &cmd.scenario, cmd.seed, 0.0)?;
    let mut options = StudyOptions::default();
    options.fit = cmd.estimation.fit_options()?;
    options.start_jitter = cmd.start_jitter;
    options.score_level = cmd.level;
    let dir = cmd.output.prepare()?;
    let report = run_replicate_study(&scenario, cmd.replicates, &options)?;
    std::fs::write(dir.join("study.json"), serde_json::to_string_pretty(&report)?)?;
    write_table(
        dir,
        "report.csv",
        "name: parameter; truth and mean_estimate: reporting scale; \
         empirical_sd: across converged replicates; mean_standard_error: \
         mean delta-method SE; coverage_pct: Wald 95% coverage",
        &report.to_csv(),
    )?;
    print!("{}", report.render_table());
    println!("study written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct PredictCmd {
    /// Fit artifact from a `fit` run.
    #[arg(long)]
    artifact: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Subject id whose history conditions the prediction.
    #[arg(long)]
    id: String,
    /// Landmark time: history up to here is used.
    #[arg(long)]
    landmark: f64,
    /// Horizons after the landmark, comma separated.
    #[arg(long, value_name = "T1,T2,...")]
    horizons: String,
    /// Cause of interest (1-based).
    #[arg(long)]
    cause: usize,
    /// Parameter draws for the uncertainty band; below 2, only the
    /// plug-in estimate is computed and the band collapses onto it.
    #[arg(long, default_value_t = 2000)]
    draws: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[command(flatten)]
    output: OutputArgs,
}

fn run_predict(cmd: PredictCmd) -> Result<ExitCode> {
    let artifact = FitArtifact::load(&cmd.artifact)?;
    let fit = artifact.to_fit()?;
    let data = cmd.data.load(&artifact.spec)?;
    let subject = data
        .subjects
        .iter()
        .position(|s| s.id == cmd.id)
        .ok_or_else(|| Error::Data(format!("no subject with id {:?}", cmd.id)))?;
    if cmd.landmark < data.subjects[subject].entry {
        return Err(Error::Domain(format!(
            "landmark {} is before subject {:?}'s entry time {}",
            cmd.landmark, cmd.id, data.subjects[subject].entry
        )));
    }
    let horizons = parse_list(&cmd.horizons, "horizon")?;
    let dir = cmd.output.prepare()?;

    let mut csv = String::from("id,s,horizon,cause,estimate,median,lo,hi\n");
    println!(
        "{:<10} {:>10} {:>10} {:>10} {:>10}",
        "horizon", "estimate", "median", "lo", "hi"
    );
    for &horizon in &horizons {
        let (estimate, median, lo, hi) = if cmd.draws < 2 {
            let point = dynamic_prediction(
                &artifact.spec,
                &data,
                subject,
                &artifact.theta,
                &artifact.likelihood,
                cmd.landmark,
                horizon,
                cmd.cause,
            )?;
            (point.estimate, point.estimate, point.estimate, point.estimate)
        } else {
            let band = dynamic_prediction_band(
                &fit,
                &artifact.spec,
                &data,
                subject,
                &artifact.likelihood,
                cmd.landmark,
                horizon,
                cmd.cause,
                cmd.draws,
                cmd.seed,
            )?;
            (band.estimate, band.median, band.lower, band.upper)
        };
        csv.push_str(&format!(
            "{},{},{horizon},{},{estimate},{median},{lo},{hi}\n",
            cmd.id, cmd.landmark, cmd.cause
        ));
        println!(
            "{:<10} {:>10.5} {:>10.5} {:>10.5} {:>10.5}",
            horizon, estimate, median, lo, hi
        );
    }
    write_table(
        dir,
        "predictions.csv",
        "id: subject; s: landmark; horizon: window after s; cause: 1-based; \
         estimate: plug-in probability; median, lo, hi: median and 2.5/97.5 \
         percentiles over parameter draws",
        &csv,
    )?;
    println!("predictions written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct ScoreTestCmd {
    /// Fit artifact from a `fit` run (must be converged).
    #[arg(long)]
    artifact: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
}

fn run_score_test(cmd: ScoreTestCmd) -> Result<ExitCode> {
    let artifact = FitArtifact::load(&cmd.artifact)?;
    if !artifact.converged() {
        return Err(Error::NonConvergence(
            "the score test needs a converged fit artifact".into(),
        ));
    }
    let data = cmd.data.load(&artifact.spec)?;
    let dir = cmd.output.prepare()?;
    let inference = Inference::new(&artifact.spec, &data, &artifact.theta, &artifact.likelihood)?;
    let test = inference.score_test()?;

    let mut csv = String::from("scope,statistic,df,p_value\n");
    for (p, component) in test.per_cause.iter().enumerate() {
        csv.push_str(&format!(
            "{},{},{},{}\n",
            artifact.spec.causes[p].name, component.statistic, component.df, component.p_value
        ));
        println!(
            "cause {}: statistic {:.4}, df {}, p {:.4}",
            artifact.spec.causes[p].name, component.statistic, component.df, component.p_value
        );
    }
    csv.push_str(&format!(
        "global,{},{},{}\n",
        test.global.statistic, test.global.df, test.global.p_value
    ));
    println!(
        "global: statistic {:.4}, df {}, p {:.4}",
        test.global.statistic, test.global.df, test.global.p_value
    );
    write_table(
        dir,
        "score_test.csv",
        "scope: cause name or \"global\"; statistic: chi-square; df: \
         degrees of freedom; p_value: upper tail",
        &csv,
    )?;
    println!("report written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct GofCmd {
    /// Fit artifact from a `fit` run.
    #[arg(long)]
    artifact: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    /// Time-partition edges, comma separated and increasing; default:
    /// four equal-width intervals over the observed measurement times.
    #[arg(long)]
    bounds: Option<String>,
    #[command(flatten)]
    output: OutputArgs,
}

fn default_bounds(data: &Dataset) -> Result<Vec<f64>> {
    let times = data
        .subjects
        .iter()
        .flat_map(|s| s.markers.iter().flat_map(|m| m.times.iter().copied()));
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for t in times {
        lo = lo.min(t);
        hi = hi.max(t);
    }
    if !(lo < hi) {
        return Err(Error::Data(
            "cannot build a default time partition: fewer than two distinct \
             measurement times"
                .into(),
        ));
    }
    Ok((0..=4).map(|k| lo + (hi - lo) * k as f64 / 4.0).collect())
}

fn run_gof(cmd: GofCmd) -> Result<ExitCode> {
    let artifact = FitArtifact::load(&cmd.artifact)?;
    let data = cmd.data.load(&artifact.spec)?;
    let bounds = match &cmd.bounds {
        Some(text) => parse_list(text, "bound")?,
        None => default_bounds(&data)?,
    };
    let dir = cmd.output.prepare()?;
    let inference = Inference::new(&artifact.spec, &data, &artifact.theta, &artifact.likelihood)?;
    let table = inference.gof_longitudinal(&bounds)?;

    let mut csv = String::from(
        "class,marker,interval_lower,interval_upper,predicted,observed,weight,n_obs\n",
    );
    println!(
        "{:<6} {:<10} {:<18} {:>10} {:>10} {:>8}",
        "class", "marker", "interval", "predicted", "observed", "n_obs"
    );
    for cell in &table.cells {
        let marker = &artifact.spec.markers[cell.marker].name;
        csv.push_str(&format!(
            "{},{marker},{},{},{},{},{},{}\n",
            cell.class + 1,
            cell.interval_lower,
            cell.interval_upper,
            cell.predicted,
            cell.observed,
            cell.weight,
            cell.n_obs
        ));
        println!(
            "{:<6} {:<10} [{:>7.2}, {:>7.2}) {:>10.4} {:>10.4} {:>8}",
            cell.class + 1,
            marker,
            cell.interval_lower,
            cell.interval_upper,
            cell.predicted,
            cell.observed,
            cell.n_obs
        );
    }
    write_table(
        dir,
        "gof.csv",
        "class: 1-based; marker: name; interval_lower/upper: time window; \
         predicted and observed: posterior-weighted means; weight: total \
         posterior mass; n_obs: measurements in the cell",
        &csv,
    )?;
    if !table.empty_cells.is_empty() {
        println!("{} cells had no observations", table.empty_cells.len());
    }
    println!("table written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

#[derive(Args)]
struct ClassifyCmd {
    /// Fit artifact from a `fit` run.
    #[arg(long)]
    artifact: PathBuf,
    #[command(flatten)]
    data: DataArgs,
    #[command(flatten)]
    output: OutputArgs,
}

fn run_classify(cmd: ClassifyCmd) -> Result<ExitCode> {
    let artifact = FitArtifact::load(&cmd.artifact)?;
    let data = cmd.data.load(&artifact.spec)?;
    let dir = cmd.output.prepare()?;
    let inference = Inference::new(&artifact.spec, &data, &artifact.theta, &artifact.likelihood)?;
    let classification = inference.classification();
    let g_n = artifact.spec.n_classes;

    let mut csv = String::from("id,assigned");
    for g in 1..=g_n {
        csv.push_str(&format!(",p{g}"));
    }
    csv.push('\n');
    for (i, subject) in data.subjects.iter().enumerate() {
        csv.push_str(&format!("{},{}", subject.id, classification.assigned[i] + 1));
        for p in &classification.probabilities[i] {
            csv.push_str(&format!(",{p}"));
        }
        csv.push('\n');
    }
    write_table(
        dir,
        "classification.csv",
        "id: subject; assigned: modal posterior class (1-based); p<g>: \
         posterior probability of class g",
        &csv,
    )?;

    println!("mean posterior probability by assigned class (rows = assigned):");
    for (g, row) in classification.table.iter().enumerate() {
        let n = classification
            .assigned
            .iter()
            .filter(|&&a| a == g)
            .count();
        let cells: Vec<String> = row.iter().map(|v| format!("{v:.3}")).collect();
        println!("  class {} (n={n}): {}", g + 1, cells.join("  "));
    }
    for g in &classification.empty_classes {
        println!("  class {} has no assigned subjects", g + 1);
    }
    println!("classification written to {}", dir.display());
    Ok(ExitCode::SUCCESS)
}

fn run(cli: Cli) -> Result<ExitCode> {
    if let Some(threads) = cli.threads {
        if threads == 0 {
            return Err(Error::Config("--threads must be at least 1".into()));
        }
        // Ignore the error from configuring twice (tests call run twice).
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global();
    }
    match cli.command {
        Command::Fit(cmd) => run_fit(cmd),
        Command::Simulate(cmd) => run_simulate(cmd),
        Command::ReplicateStudy(cmd) => run_study(cmd),
        Command::Predict(cmd) => run_predict(cmd),
        Command::ScoreTest(cmd) => run_score_test(cmd),
        Command::Gof(cmd) => run_gof(cmd),
        Command::Classify(cmd) => run_classify(cmd),
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
