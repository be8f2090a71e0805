//! Batch front end: `gen`, `run` and `report`.
//!
//! A run is described by one TOML file:
//!
//! ```toml
//! output_dir = "results"
//! seed = 2024
//! n_iterations = 1000
//! reference = "largestROI+CoxStepAIC"
//! strategies = ["largestROI", "metaHistogram", "allROIMax"]
//! models = ["CoxStepAIC", "randomForest"]
//!
//! [data]
//! lesions = "lesions.csv"
//! outcomes = "outcomes.csv"
//! ```
//!
//! A `[generate]` table (synthetic cohort parameters) may replace `[data]`.
//! Optional `[forest]`, `[coxnet]` and `[boosting]` tables override model
//! hyperparameters. Relative paths resolve against the config file's
//! directory.

use std::collections::BTreeMap;
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use roisurv::cohort::{load_lesions, load_outcomes, Cohort, SchemaPolicy};
use roisurv::evaluation::{KmCurve, LogRank, KM_CSV_HEADER};
use roisurv::harness::{
    km_by_heterogeneity, km_by_roi_count, make_partitions, run_grid, summarize, write_summary_csv, write_summary_json,
    EffectMatrix, HarnessConfig, Scheme, SchemeResult, SummaryRow, DEFAULT_CORRELATION_THRESHOLD, DEFAULT_ITERATIONS,
};
use roisurv::heterogeneity::{Metric, DEFAULT_MINKOWSKI_P};
use roisurv::survival::{BoostParams, CoxnetParams, ForestParams, ModelSpec};
use roisurv::synthgen::{generate, GenSpec};

pub const DEFAULT_REFERENCE: &str = "largestROI+CoxStepAIC";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("cannot parse {path}: {source}")]
    Toml { path: PathBuf, source: toml::de::Error },
    #[error("no results found in {0}")]
    NoResults(PathBuf),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Core(#[from] roisurv::Error),
}

impl CliError {
    /// Process exit code: 1 for bad input, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Toml { .. } | CliError::NoResults(_) => 1,
            CliError::Core(e) if e.is_validation() => 1,
            CliError::Io { .. } | CliError::Core(_) => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataPaths {
    pub lesions: PathBuf,
    pub outcomes: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub output_dir: PathBuf,
    #[serde(default)]
    pub data: Option<DataPaths>,
    #[serde(default)]
    pub generate: Option<GenSpec>,
    #[serde(default)]
    pub strategies: Vec<String>,
    #[serde(default)]
    pub models: Vec<String>,
    #[serde(default = "default_iterations")]
    pub n_iterations: usize,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub reference: Option<String>,
    #[serde(default = "default_minkowski")]
    pub minkowski_p: f64,
    #[serde(default = "default_threshold")]
    pub correlation_threshold: f64,
    #[serde(default = "default_true")]
    pub standardize: bool,
    #[serde(default)]
    pub forest: Option<ForestParams>,
    #[serde(default)]
    pub coxnet: Option<CoxnetParams>,
    #[serde(default)]
    pub boosting: Option<BoostParams>,
}

fn default_iterations() -> usize {
    DEFAULT_ITERATIONS
}
fn default_minkowski() -> f64 {
    DEFAULT_MINKOWSKI_P
}
fn default_threshold() -> f64 {
    DEFAULT_CORRELATION_THRESHOLD
}
fn default_true() -> bool {
    true
}

impl RunConfig {
    /// Reads a config and resolves its relative paths against the file's
    /// directory.
    pub fn load(path: impl AsRef<Path>) -> Result<RunConfig> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(io_err(path))?;
        let mut cfg = RunConfig::from_toml(&text).map_err(|e| match e {
            CliError::Toml { source, .. } => CliError::Toml {
                path: path.to_path_buf(),
                source,
            },
            other => other,
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        let resolve = |p: &mut PathBuf| {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        };
        resolve(&mut cfg.output_dir);
        if let Some(d) = &mut cfg.data {
            resolve(&mut d.lesions);
            resolve(&mut d.outcomes);
        }
        Ok(cfg)
    }

    pub fn from_toml(text: &str) -> Result<RunConfig> {
        toml::from_str(text).map_err(|source| CliError::Toml {
            path: PathBuf::from("<config>"),
            source,
        })
    }

    fn model_specs(&self) -> Result<Vec<ModelSpec>> {
        self.models
            .iter()
            .map(|m| {
                let spec: ModelSpec = m.parse().map_err(|e: roisurv::Error| CliError::Config(e.to_string()))?;
                Ok(match spec {
                    ModelSpec::RandomForest { .. } => ModelSpec::RandomForest {
                        params: self.forest.unwrap_or_default(),
                    },
                    ModelSpec::Coxnet { .. } => ModelSpec::Coxnet {
                        params: self.coxnet.unwrap_or_default(),
                    },
                    ModelSpec::BoostAft { distribution, .. } => ModelSpec::BoostAft {
                        distribution,
                        params: self.boosting.unwrap_or_default(),
                    },
                    other => other,
                })
            })
            .collect()
    }

    /// The strategy × model grid, in config order (strategies outer).
    pub fn schemes(&self) -> Result<Vec<Scheme>> {
        if self.strategies.is_empty() || self.models.is_empty() {
            return Err(CliError::Config(
                "at least one strategy and one model are required".into(),
            ));
        }
        let models = self.model_specs()?;
        let mut out = Vec::new();
        for s in &self.strategies {
            for m in &models {
                out.push(Scheme::parse(s, m.clone()).map_err(|e| CliError::Config(e.to_string()))?);
            }
        }
        let mut labels: Vec<&str> = out.iter().map(|s| s.label.as_str()).collect();
        labels.sort_unstable();
        if let Some(w) = labels.windows(2).find(|w| w[0] == w[1]) {
            return Err(CliError::Config(format!("scheme `{}` listed twice", w[0])));
        }
        for spec in &models {
            spec.validate().map_err(|e| CliError::Config(e.to_string()))?;
        }
        Ok(out)
    }

    pub fn reference_label(&self) -> &str {
        self.reference.as_deref().unwrap_or(DEFAULT_REFERENCE)
    }

    pub fn harness_config(&self) -> Result<HarnessConfig> {
        if !(self.correlation_threshold > 0.0 && self.correlation_threshold <= 1.0) {
            return Err(CliError::Config("correlation_threshold must lie in (0, 1]".into()));
        }
        Ok(HarnessConfig {
            metrics: Metric::all(self.minkowski_p).map_err(|e| CliError::Config(e.to_string()))?,
            correlation_threshold: self.correlation_threshold,
            standardize: self.standardize,
        })
    }

    /// Checks everything that can be checked without reading data.
    pub fn validate_run(&self) -> Result<Vec<Scheme>> {
        let schemes = self.schemes()?;
        if self.n_iterations == 0 {
            return Err(CliError::Config("n_iterations must be positive".into()));
        }
        let reference = self.reference_label();
        if !schemes.iter().any(|s| s.label == reference) {
            return Err(CliError::Config(format!(
                "reference scheme `{reference}` is not in the grid"
            )));
        }
        match (&self.data, &self.generate) {
            (Some(_), Some(_)) => return Err(CliError::Config("give either [data] or [generate], not both".into())),
            (None, None) => return Err(CliError::Config("a [data] or [generate] table is required".into())),
            (None, Some(g)) => g.validate()?,
            _ => {}
        }
        self.harness_config()?;
        Ok(schemes)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub command: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub spec: Option<GenSpec>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub schemes: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_fits: Option<usize>,
    /// Output files relative to the output directory.
    pub files: Vec<String>,
}

impl Manifest {
    pub fn load(dir: &Path) -> Result<Manifest> {
        let path = dir.join("manifest.json");
        let f = File::open(&path).map_err(io_err(&path))?;
        Ok(serde_json::from_reader(BufReader::new(f)).map_err(roisurv::Error::from)?)
    }
}

struct Output {
    dir: PathBuf,
    files: Vec<String>,
}

impl Output {
    fn new(dir: &Path) -> Result<Output> {
        fs::create_dir_all(dir).map_err(io_err(dir))?;
        Ok(Output {
            dir: dir.to_path_buf(),
            files: Vec::new(),
        })
    }

    fn write(&mut self, rel: &str, body: impl FnOnce(&mut dyn Write) -> roisurv::Result<()>) -> Result<()> {
        let path = self.dir.join(rel);
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent).map_err(io_err(parent))?;
        }
        let f = File::create(&path).map_err(io_err(&path))?;
        let mut w = BufWriter::new(f);
        body(&mut w)?;
        w.flush().map_err(io_err(&path))?;
        self.files.push(rel.to_string());
        Ok(())
    }

    fn finish(mut self, mut manifest: Manifest) -> Result<PathBuf> {
        manifest.files = std::mem::take(&mut self.files);
        manifest.files.push("manifest.json".into());
        let path = self.dir.join("manifest.json");
        let f = File::create(&path).map_err(io_err(&path))?;
        serde_json::to_writer_pretty(BufWriter::new(f), &manifest).map_err(roisurv::Error::from)?;
        Ok(self.dir)
    }
}

/// Writes a synthetic cohort (`lesions.csv`, `outcomes.csv`) and a manifest.
pub fn cmd_gen(config: &RunConfig) -> Result<PathBuf> {
    let spec = config
        .generate
        .as_ref()
        .ok_or_else(|| CliError::Config("`gen` needs a [generate] table".into()))?;
    spec.validate()?;
    let cohort = generate(spec)?;
    let mut out = Output::new(&config.output_dir)?;
    write_cohort(&mut out, &cohort)?;
    out.finish(Manifest {
        command: "gen".into(),
        seed: spec.seed,
        spec: Some(spec.clone()),
        schemes: vec![],
        reference: None,
        n_fits: None,
        files: vec![],
    })
}

fn write_cohort(out: &mut Output, cohort: &Cohort) -> Result<()> {
    out.write("lesions.csv", |w| cohort.write_lesions(w))?;
    out.write("outcomes.csv", |w| cohort.write_outcomes(w))
}

/// Runs the full grid and writes iteration CSVs, summaries and KM data.
pub fn cmd_run(config: &RunConfig) -> Result<PathBuf> {
    let schemes = config.validate_run()?;
    let harness = config.harness_config()?;
    let cohort = match (&config.data, &config.generate) {
        (Some(d), _) => {
            let table = load_lesions(&d.lesions, &SchemaPolicy::Infer)?;
            load_outcomes(&d.outcomes, table)?
        }
        (None, Some(g)) => generate(g)?,
        (None, None) => unreachable!("checked by validate_run"),
    };
    let plan = make_partitions(&cohort, config.n_iterations, config.seed)?;
    log::info!(
        "{} patients, {} lesions, {} schemes × {} iterations",
        cohort.len(),
        cohort.n_lesions(),
        schemes.len(),
        plan.n_iterations()
    );
    let run = run_grid(&cohort, &schemes, &plan, &harness)?;
    log::info!("{} model fits", run.n_fits);

    let mut out = Output::new(&config.output_dir)?;
    if config.generate.is_some() {
        write_cohort(&mut out, &cohort)?;
    }
    out.write("plan.json", |w| plan.to_json(w))?;
    for r in &run.results {
        out.write(&iteration_file(&r.label), |w| r.write_csv(w))?;
    }
    let reference = config.reference_label().to_string();
    write_reports(&mut out, &run.results, &reference)?;

    let (curves, test) = km_by_roi_count(&cohort)?;
    out.write("km/roi_count.csv", |w| write_km(w, &curves))?;
    let mut tests = vec![("roi_count".to_string(), test)];
    for m in &harness.metrics {
        let (curves, test) = km_by_heterogeneity(&cohort, *m)?;
        out.write(&format!("km/heterogeneity_{}.csv", m.name()), |w| write_km(w, &curves))?;
        tests.push((format!("heterogeneity_{}", m.name()), test));
    }
    out.write("km/logrank.csv", |w| write_logrank(w, &tests))?;

    out.finish(Manifest {
        command: "run".into(),
        seed: config.seed,
        spec: config.generate.clone(),
        schemes: run.results.iter().map(|r| r.label.clone()).collect(),
        reference: Some(reference),
        n_fits: Some(run.n_fits),
        files: vec![],
    })
}

pub fn iteration_file(label: &str) -> String {
    format!("iterations/{label}.csv")
}

fn write_reports(out: &mut Output, results: &[SchemeResult], reference: &str) -> Result<Vec<SummaryRow>> {
    let rows = summarize(results, reference)?;
    out.write("summary.csv", |w| write_summary_csv(&rows, w))?;
    out.write("summary.json", |w| write_summary_json(&rows, w))?;
    let matrix = EffectMatrix::from_summary(&rows);
    out.write("effect_matrix.csv", |w| matrix.write_csv(w))?;
    Ok(rows)
}

fn write_km(w: &mut dyn Write, curves: &[(String, KmCurve)]) -> roisurv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(KM_CSV_HEADER)?;
    for (g, c) in curves {
        c.write_csv_rows(g, &mut wr)?;
    }
    wr.flush()?;
    Ok(())
}

fn write_logrank(w: &mut dyn Write, tests: &[(String, Option<LogRank>)]) -> roisurv::Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["stratification", "statistic", "df", "p_value"])?;
    for (name, t) in tests {
        match t {
            Some(t) => wr.write_record([
                name.clone(),
                t.statistic.to_string(),
                t.df.to_string(),
                t.p_value.to_string(),
            ])?,
            None => wr.write_record([name.as_str(), "", "", ""])?,
        }
    }
    wr.flush()?;
    Ok(())
}

/// Reads every iteration CSV under `dir/iterations`, in manifest order when
/// a run manifest is present and by file name otherwise.
pub fn read_results(dir: &Path) -> Result<Vec<SchemeResult>> {
    let it_dir = dir.join("iterations");
    let mut found: BTreeMap<String, PathBuf> = BTreeMap::new();
    if it_dir.is_dir() {
        for entry in fs::read_dir(&it_dir).map_err(io_err(&it_dir))? {
            let path = entry.map_err(io_err(&it_dir))?.path();
            if path.extension().is_some_and(|e| e == "csv") {
                let f = File::open(&path).map_err(io_err(&path))?;
                let r = SchemeResult::read_csv(BufReader::new(f))?;
                found.insert(r.label.clone(), path);
            }
        }
    }
    if found.is_empty() {
        return Err(CliError::NoResults(dir.to_path_buf()));
    }
    let mut order: Vec<String> = Manifest::load(dir)
        .map(|m| m.schemes.into_iter().filter(|s| found.contains_key(s)).collect())
        .unwrap_or_default();
    for k in found.keys() {
        if !order.contains(k) {
            order.push(k.clone());
        }
    }
    order
        .iter()
        .map(|label| {
            let path = &found[label];
            let f = File::open(path).map_err(io_err(path))?;
            Ok(SchemeResult::read_csv(BufReader::new(f))?)
        })
        .collect()
}

/// Rebuilds summary tables and the effect matrix from iteration CSVs.
pub fn cmd_report(results_dir: &Path, reference: Option<&str>, out_dir: Option<&Path>) -> Result<Vec<SummaryRow>> {
    let results = read_results(results_dir)?;
    let reference = match reference {
        Some(r) => r.to_string(),
        None => Manifest::load(results_dir)
            .ok()
            .and_then(|m| m.reference)
            .unwrap_or_else(|| DEFAULT_REFERENCE.to_string()),
    };
    if !results.iter().any(|r| r.label == reference) {
        return Err(CliError::Config(format!(
            "reference scheme `{reference}` has no results"
        )));
    }
    let mut out = Output::new(out_dir.unwrap_or(results_dir))?;
    write_reports(&mut out, &results, &reference)
}
