//! Monte Carlo cross-validation over a fixed partition plan.
//!
//! One [`PartitionPlan`] is drawn per cohort and reused by every scheme.
//! A [`Scheme`] pairs an ROI strategy (plus a risk aggregator for `allROI`)
//! with a model. [`run_grid`] fits each `(strategy, model, iteration)` once
//! and scores every aggregator from that fit.

use std::collections::{HashMap, HashSet};
use std::fmt;
use std::io::{Read, Write};
use std::sync::atomic::{AtomicUsize, Ordering};

use indexmap::IndexMap;
use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::aggregation::{aggregate_risks, build_design_with, DiversityTable, RiskAggregator, StrategyKind};
use crate::cohort::{Cohort, SurvivalResponse};
use crate::error::{Error, Result};
use crate::evaluation::{c_index, cohens_d, kaplan_meier, logrank_test, median, EffectBand, KmCurve, LogRank};
use crate::heterogeneity::{
    patient_heterogeneity, roi_count_group, tercile_stratify, Metric, Tercile, DEFAULT_MINKOWSKI_P,
};
use crate::seed::SeedHandle;
use crate::survival::{fit_model, FitOptions, ModelSpec};

pub const DEFAULT_ITERATIONS: usize = 1000;
pub const DEFAULT_CORRELATION_THRESHOLD: f64 = 0.9;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Split {
    pub train: Vec<String>,
    pub test: Vec<String>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionPlan {
    pub seed: u64,
    /// Cohort patient ids in cohort order.
    pub patient_ids: Vec<String>,
    pub iterations: Vec<Split>,
}

pub fn train_size(n: usize) -> usize {
    (2.0 * n as f64 / 3.0).round() as usize
}

/// Draws `n_iterations` independent patient-level 2/3 – 1/3 splits.
pub fn make_partitions(cohort: &Cohort, n_iterations: usize, seed: u64) -> Result<PartitionPlan> {
    let n = cohort.len();
    if n < 6 {
        return Err(Error::invalid(format!(
            "need at least 6 patients to partition, have {n}"
        )));
    }
    if n_iterations == 0 {
        return Err(Error::invalid("n_iterations must be positive"));
    }
    let ids: Vec<String> = cohort.patient_ids().into_iter().map(String::from).collect();
    let k = train_size(n);
    let base = SeedHandle(seed).derive_label("partitions");
    let iterations = (0..n_iterations)
        .map(|it| {
            let mut order: Vec<usize> = (0..n).collect();
            order.shuffle(&mut base.derive(it as u64).rng());
            let mut in_train = vec![false; n];
            order[..k].iter().for_each(|&i| in_train[i] = true);
            let (train, test): (Vec<_>, Vec<_>) = (0..n).partition(|&i| in_train[i]);
            Split {
                train: train.into_iter().map(|i| ids[i].clone()).collect(),
                test: test.into_iter().map(|i| ids[i].clone()).collect(),
            }
        })
        .collect();
    Ok(PartitionPlan {
        seed,
        patient_ids: ids,
        iterations,
    })
}

impl PartitionPlan {
    pub fn n_iterations(&self) -> usize {
        self.iterations.len()
    }

    /// Errors unless the plan was drawn on a cohort with exactly these patients.
    pub fn check(&self, cohort: &Cohort) -> Result<()> {
        let ids: HashSet<&str> = cohort.patient_ids().into_iter().collect();
        let planned: HashSet<&str> = self.patient_ids.iter().map(String::as_str).collect();
        if ids != planned || ids.len() != self.patient_ids.len() {
            return Err(Error::invalid("partition plan was built on a different cohort"));
        }
        for (it, s) in self.iterations.iter().enumerate() {
            let train: HashSet<&str> = s.train.iter().map(String::as_str).collect();
            let test: HashSet<&str> = s.test.iter().map(String::as_str).collect();
            if train.len() + test.len() != ids.len()
                || !train.is_disjoint(&test)
                || !train.iter().chain(&test).all(|id| ids.contains(id))
            {
                return Err(Error::invalid(format!(
                    "iteration {it} is not a partition of the cohort"
                )));
            }
        }
        Ok(())
    }

    pub fn to_json<W: Write>(&self, w: W) -> Result<()> {
        serde_json::to_writer_pretty(w, self)?;
        Ok(())
    }

    pub fn from_json<R: Read>(r: R) -> Result<PartitionPlan> {
        Ok(serde_json::from_reader(r)?)
    }
}

/// A strategy × model pair; `aggregator` is present iff the strategy is `allROI`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scheme {
    pub strategy: StrategyKind,
    pub aggregator: Option<RiskAggregator>,
    pub model: ModelSpec,
    pub label: String,
}

impl Scheme {
    pub fn new(strategy: StrategyKind, aggregator: Option<RiskAggregator>, model: ModelSpec) -> Result<Scheme> {
        if (strategy == StrategyKind::AllRoi) != aggregator.is_some() {
            return Err(Error::invalid(
                "a risk aggregator is required for allROI and not allowed otherwise",
            ));
        }
        let label = format!("{}+{}", strategy_label(strategy, aggregator), model.label());
        Ok(Scheme {
            strategy,
            aggregator,
            model,
            label,
        })
    }

    /// Builds a scheme from a strategy label such as `largestROI` or `allROIMax`.
    pub fn parse(strategy: &str, model: ModelSpec) -> Result<Scheme> {
        let (kind, agg) = parse_strategy(strategy)?;
        Scheme::new(kind, agg, model)
    }

    pub fn strategy_label(&self) -> String {
        strategy_label(self.strategy, self.aggregator)
    }
}

impl fmt::Display for Scheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.label)
    }
}

pub fn strategy_label(kind: StrategyKind, agg: Option<RiskAggregator>) -> String {
    match agg {
        Some(a) => a.scheme_name().to_string(),
        None => kind.name().to_string(),
    }
}

/// Parses `largestROI`, `metaHistogram`, `allROIMin`, ... into a kind and
/// an optional aggregator.
pub fn parse_strategy(label: &str) -> Result<(StrategyKind, Option<RiskAggregator>)> {
    if let Some(agg) = RiskAggregator::from_scheme_name(label) {
        return Ok((StrategyKind::AllRoi, Some(agg)));
    }
    let kind: StrategyKind = label.parse()?;
    if kind == StrategyKind::AllRoi {
        return Err(Error::invalid(
            "`allROI` needs an aggregator: allROIMin, allROIMax, allROIMean or allROIWeightedMean",
        ));
    }
    Ok((kind, None))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HarnessConfig {
    pub metrics: Vec<Metric>,
    pub correlation_threshold: f64,
    pub standardize: bool,
}

impl Default for HarnessConfig {
    fn default() -> Self {
        HarnessConfig {
            metrics: Metric::all(DEFAULT_MINKOWSKI_P).expect("default Minkowski order is valid"),
            correlation_threshold: DEFAULT_CORRELATION_THRESHOLD,
            standardize: true,
        }
    }
}

/// Per-iteration bookkeeping used to audit a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct IterationAudit {
    pub train_rows: usize,
    pub test_rows: usize,
    /// Total lesions of the train and test patients.
    pub train_lesions: usize,
    pub test_lesions: usize,
    /// Patients with rows on both sides.
    pub overlap: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeResult {
    pub label: String,
    pub strategy: String,
    pub model: String,
    /// Test c-index per iteration; `None` marks a failed iteration.
    pub c_indices: Vec<Option<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub audit: Vec<IterationAudit>,
}

impl SchemeResult {
    pub fn valid(&self) -> Vec<f64> {
        self.c_indices.iter().flatten().copied().collect()
    }

    pub fn median(&self) -> Option<f64> {
        median(&self.valid())
    }

    pub fn n_failed(&self) -> usize {
        self.c_indices.iter().filter(|c| c.is_none()).count()
    }

    pub fn n_below_half(&self) -> usize {
        self.c_indices.iter().flatten().filter(|c| **c < 0.5).count()
    }

    /// Writes `scheme,iteration,c_index,failed`; failed rows carry `NaN`.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        wr.write_record(["scheme", "iteration", "c_index", "failed"])?;
        for (it, c) in self.c_indices.iter().enumerate() {
            let (value, failed) = match c {
                Some(v) => (v.to_string(), "0"),
                None => ("NaN".to_string(), "1"),
            };
            wr.write_record([self.label.as_str(), &it.to_string(), &value, failed])?;
        }
        wr.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(r: R) -> Result<SchemeResult> {
        let mut rd = csv::Reader::from_reader(r);
        let header = rd.headers()?.clone();
        if header.iter().collect::<Vec<_>>() != ["scheme", "iteration", "c_index", "failed"] {
            return Err(Error::SchemaMismatch(format!(
                "unexpected iteration CSV header {header:?}"
            )));
        }
        let mut label: Option<String> = None;
        let mut c_indices = Vec::new();
        for (k, rec) in rd.records().enumerate() {
            let rec = rec?;
            let line = k as u64 + 2;
            let parse_err = |column: &str, message: String| Error::Parse {
                line,
                column: column.into(),
                message,
            };
            match &label {
                None => label = Some(rec[0].to_string()),
                Some(l) if l != &rec[0] => {
                    return Err(parse_err("scheme", format!("mixed schemes `{l}` and `{}`", &rec[0])))
                }
                _ => {}
            }
            let it: usize = rec[1].parse().map_err(|e| parse_err("iteration", format!("{e}")))?;
            if it != c_indices.len() {
                return Err(parse_err(
                    "iteration",
                    format!("expected {}, found {it}", c_indices.len()),
                ));
            }
            let value = match &rec[3] {
                "1" => None,
                "0" => Some(
                    rec[2]
                        .parse::<f64>()
                        .map_err(|e| parse_err("c_index", format!("{e}")))?,
                ),
                other => return Err(parse_err("failed", format!("expected 0 or 1, found `{other}`"))),
            };
            c_indices.push(value);
        }
        let label = label.ok_or_else(|| Error::invalid("iteration CSV has no rows"))?;
        let (strategy, model) = split_label(&label);
        Ok(SchemeResult {
            strategy,
            model,
            label,
            c_indices,
            audit: Vec::new(),
        })
    }
}

fn split_label(label: &str) -> (String, String) {
    match label.split_once('+') {
        Some((s, m)) => (s.to_string(), m.to_string()),
        None => (label.to_string(), String::new()),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GridRun {
    pub results: Vec<SchemeResult>,
    /// Number of model fits performed.
    pub n_fits: usize,
}

/// Runs one scheme on `plan`.
pub fn run_scheme(
    cohort: &Cohort,
    scheme: &Scheme,
    plan: &PartitionPlan,
    config: &HarnessConfig,
) -> Result<SchemeResult> {
    let mut run = run_grid(cohort, std::slice::from_ref(scheme), plan, config)?;
    Ok(run.results.remove(0))
}

struct FitUnit {
    strategy: StrategyKind,
    model: ModelSpec,
    /// `(scheme index, aggregator)` served by this fit.
    targets: Vec<(usize, Option<RiskAggregator>)>,
}

struct CellOutput {
    c: Vec<Option<f64>>,
    audit: IterationAudit,
}

/// Runs every scheme on the same plan. Schemes that differ only in their
/// risk aggregator share one fit per iteration.
pub fn run_grid(cohort: &Cohort, schemes: &[Scheme], plan: &PartitionPlan, config: &HarnessConfig) -> Result<GridRun> {
    plan.check(cohort)?;
    if schemes.is_empty() {
        return Err(Error::invalid("no schemes to run"));
    }
    let mut seen = HashSet::new();
    for s in schemes {
        if !seen.insert(s.label.as_str()) {
            return Err(Error::invalid(format!("duplicate scheme `{}`", s.label)));
        }
        s.model.validate()?;
    }
    let mut units: Vec<FitUnit> = Vec::new();
    for (k, s) in schemes.iter().enumerate() {
        match units
            .iter_mut()
            .find(|u| u.strategy == s.strategy && u.model == s.model)
        {
            Some(u) => u.targets.push((k, s.aggregator)),
            None => units.push(FitUnit {
                strategy: s.strategy,
                model: s.model.clone(),
                targets: vec![(k, s.aggregator)],
            }),
        }
    }
    let cache = if schemes.iter().any(|s| s.strategy.uses_diversity()) {
        Some(DiversityTable::compute(cohort, &config.metrics)?)
    } else {
        None
    };
    let index: HashMap<&str, usize> = cohort
        .patient_ids()
        .into_iter()
        .enumerate()
        .map(|(i, id)| (id, i))
        .collect();
    let fits = AtomicUsize::new(0);
    let n_it = plan.n_iterations();
    let cells: Vec<(usize, usize)> = (0..units.len())
        .flat_map(|u| (0..n_it).map(move |it| (u, it)))
        .collect();
    let outputs: Vec<Result<CellOutput>> = cells
        .par_iter()
        .map(|&(u, it)| {
            run_cell(
                cohort,
                &units[u],
                &plan.iterations[it],
                SeedHandle(plan.seed).derive(it as u64),
                &index,
                cache.as_ref(),
                config,
                &fits,
            )
        })
        .collect();

    let mut results: Vec<SchemeResult> = schemes
        .iter()
        .map(|s| SchemeResult {
            label: s.label.clone(),
            strategy: s.strategy_label(),
            model: s.model.label().to_string(),
            c_indices: vec![None; n_it],
            audit: vec![IterationAudit::default(); n_it],
        })
        .collect();
    for (&(u, it), out) in cells.iter().zip(outputs) {
        let out = out?;
        for (&(k, _), c) in units[u].targets.iter().zip(&out.c) {
            results[k].c_indices[it] = *c;
            results[k].audit[it] = out.audit;
        }
    }
    Ok(GridRun {
        results,
        n_fits: fits.into_inner(),
    })
}

#[allow(clippy::too_many_arguments)]
fn run_cell(
    cohort: &Cohort,
    unit: &FitUnit,
    split: &Split,
    stream: SeedHandle,
    index: &HashMap<&str, usize>,
    cache: Option<&DiversityTable>,
    config: &HarnessConfig,
    fits: &AtomicUsize,
) -> Result<CellOutput> {
    let pick = |ids: &[String]| -> Result<Cohort> {
        let idx = ids
            .iter()
            .map(|id| {
                index
                    .get(id.as_str())
                    .copied()
                    .ok_or_else(|| Error::invalid(format!("plan references unknown patient `{id}`")))
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(cohort.select(&idx))
    };
    let train = pick(&split.train)?;
    let test = pick(&split.test)?;
    let strategy = unit
        .strategy
        .with_seed(Some(stream.derive_label(unit.strategy.name())))?;
    let train_design = build_design_with(&train, strategy, &config.metrics, cache)?;
    let test_design = build_design_with(&test, strategy, &config.metrics, cache)?;
    let train_ids: HashSet<&str> = train_design.rows().iter().map(|r| r.patient_id.as_str()).collect();
    let test_ids: HashSet<&str> = test_design.rows().iter().map(|r| r.patient_id.as_str()).collect();
    let audit = IterationAudit {
        train_rows: train_design.n_rows(),
        test_rows: test_design.n_rows(),
        train_lesions: train.n_lesions(),
        test_lesions: test.n_lesions(),
        overlap: train_ids.intersection(&test_ids).count(),
    };
    let failed = || CellOutput {
        c: vec![None; unit.targets.len()],
        audit,
    };

    let options = FitOptions {
        standardize: config.standardize,
        filter_threshold: (unit.strategy == StrategyKind::MetaHistogram).then_some(config.correlation_threshold),
        seed: stream.derive_label(unit.model.label()),
    };
    fits.fetch_add(1, Ordering::Relaxed);
    let model = match fit_model(&train_design, &unit.model, &options) {
        Ok(m) => m,
        Err(e) => {
            log::debug!("{} + {}: fit failed: {e}", unit.strategy, unit.model);
            return Ok(failed());
        }
    };
    let risks = match model.predict(&test_design) {
        Ok(r) => r,
        Err(e) => {
            log::debug!("{} + {}: prediction failed: {e}", unit.strategy, unit.model);
            return Ok(failed());
        }
    };
    let responses: Vec<SurvivalResponse> = test.responses();
    let c = unit
        .targets
        .iter()
        .map(|&(_, agg)| {
            let patient_risk: Vec<f64> = match agg {
                None => risks.clone(),
                Some(a) => {
                    let rows: Vec<(&str, f64, f64)> = test_design
                        .rows()
                        .iter()
                        .zip(&risks)
                        .map(|(r, &risk)| (r.patient_id.as_str(), risk, r.volume))
                        .collect();
                    let per = aggregate_risks(&rows, a).ok()?;
                    test.patient_ids().iter().map(|id| per[*id]).collect()
                }
            };
            if patient_risk.iter().any(|r| !r.is_finite()) {
                return None;
            }
            c_index(&patient_risk, &responses).ok()
        })
        .collect();
    Ok(CellOutput { c, audit })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryRow {
    pub scheme: String,
    pub strategy: String,
    pub model: String,
    pub n_iterations: usize,
    pub n_failed: usize,
    pub median: Option<f64>,
    pub delta_median: Option<f64>,
    pub cohens_d: Option<f64>,
    pub effect_band: Option<EffectBand>,
    pub stars: String,
    pub min: Option<f64>,
    pub max: Option<f64>,
    pub n_below_half: usize,
}

/// Per-scheme medians and effect sizes relative to `reference`.
pub fn summarize(results: &[SchemeResult], reference: &str) -> Result<Vec<SummaryRow>> {
    let reference_result = results
        .iter()
        .find(|r| r.label == reference)
        .ok_or_else(|| Error::invalid(format!("reference scheme `{reference}` is not among the results")))?;
    let ref_sample = reference_result.valid();
    let ref_median = median(&ref_sample);
    Ok(results
        .iter()
        .map(|r| {
            let sample = r.valid();
            let med = median(&sample);
            let d = if r.label == reference {
                Some(0.0)
            } else {
                cohens_d(&sample, &ref_sample).ok().map(|c| c.d)
            };
            let band = d.map(EffectBand::of);
            SummaryRow {
                scheme: r.label.clone(),
                strategy: r.strategy.clone(),
                model: r.model.clone(),
                n_iterations: r.c_indices.len(),
                n_failed: r.n_failed(),
                delta_median: match (med, ref_median) {
                    (Some(_), Some(_)) if r.label == reference => Some(0.0),
                    (Some(a), Some(b)) => Some(a - b),
                    _ => None,
                },
                median: med,
                cohens_d: d,
                stars: band.map_or("", EffectBand::stars).to_string(),
                effect_band: band,
                min: sample.iter().copied().reduce(f64::min),
                max: sample.iter().copied().reduce(f64::max),
                n_below_half: r.n_below_half(),
            }
        })
        .collect())
}

pub const SUMMARY_CSV_HEADER: [&str; 13] = [
    "scheme",
    "strategy",
    "model",
    "n_iterations",
    "n_failed",
    "median",
    "delta_median",
    "cohens_d",
    "effect_band",
    "stars",
    "min",
    "max",
    "n_below_half",
];

fn opt(v: Option<f64>) -> String {
    v.map_or_else(String::new, |x| x.to_string())
}

pub fn write_summary_csv<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(SUMMARY_CSV_HEADER)?;
    for r in rows {
        wr.write_record([
            r.scheme.clone(),
            r.strategy.clone(),
            r.model.clone(),
            r.n_iterations.to_string(),
            r.n_failed.to_string(),
            opt(r.median),
            opt(r.delta_median),
            opt(r.cohens_d),
            r.effect_band.map_or_else(String::new, |b| b.name().to_string()),
            r.stars.clone(),
            opt(r.min),
            opt(r.max),
            r.n_below_half.to_string(),
        ])?;
    }
    wr.flush()?;
    Ok(())
}

pub fn write_summary_json<W: Write>(rows: &[SummaryRow], w: W) -> Result<()> {
    serde_json::to_writer_pretty(w, rows)?;
    Ok(())
}

pub fn read_summary_json<R: Read>(r: R) -> Result<Vec<SummaryRow>> {
    Ok(serde_json::from_reader(r)?)
}

/// Δmedian and effect band per `(strategy, model)` cell.
#[derive(Debug, Clone, PartialEq)]
pub struct EffectMatrix {
    pub strategies: Vec<String>,
    pub models: Vec<String>,
    /// `cells[strategy][model]`.
    pub cells: Vec<Vec<Option<(f64, EffectBand)>>>,
}

impl EffectMatrix {
    pub fn from_summary(rows: &[SummaryRow]) -> EffectMatrix {
        let mut strategies: IndexMap<String, ()> = IndexMap::new();
        let mut models: IndexMap<String, ()> = IndexMap::new();
        for r in rows {
            strategies.insert(r.strategy.clone(), ());
            models.insert(r.model.clone(), ());
        }
        let mut cells = vec![vec![None; models.len()]; strategies.len()];
        for r in rows {
            if let (Some(delta), Some(band)) = (r.delta_median, r.effect_band) {
                let i = strategies.get_index_of(&r.strategy).expect("inserted above");
                let j = models.get_index_of(&r.model).expect("inserted above");
                cells[i][j] = Some((delta, band));
            }
        }
        EffectMatrix {
            strategies: strategies.into_keys().collect(),
            models: models.into_keys().collect(),
            cells,
        }
    }

    pub fn get(&self, strategy: &str, model: &str) -> Option<(f64, EffectBand)> {
        let i = self.strategies.iter().position(|s| s == strategy)?;
        let j = self.models.iter().position(|m| m == model)?;
        self.cells[i][j]
    }

    /// Cells read like `+0.0123**`; empty where the scheme is absent.
    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut wr = csv::Writer::from_writer(w);
        let mut header = vec!["strategy".to_string()];
        header.extend(self.models.iter().cloned());
        wr.write_record(&header)?;
        for (s, row) in self.strategies.iter().zip(&self.cells) {
            let mut rec = vec![s.clone()];
            rec.extend(row.iter().map(|c| match c {
                Some((delta, band)) => format_cell(*delta, *band),
                None => String::new(),
            }));
            wr.write_record(&rec)?;
        }
        wr.flush()?;
        Ok(())
    }
}

pub fn format_cell(delta: f64, band: EffectBand) -> String {
    let delta = if delta == 0.0 { 0.0 } else { delta };
    format!("{delta:+.4}{}", band.stars())
}

/// Labelled KM curves of a stratification and the log-rank test across them
/// (`None` when fewer than two groups are populated).
pub type Strata = (Vec<(String, KmCurve)>, Option<LogRank>);

/// Kaplan–Meier curves by lesion-count group (`1`, `2-3`, `4+`), with the
/// log-rank test across the non-empty groups.
pub fn km_by_roi_count(cohort: &Cohort) -> Result<Strata> {
    let mut groups: IndexMap<&str, Vec<SurvivalResponse>> =
        ["1", "2-3", "4+"].into_iter().map(|g| (g, Vec::new())).collect();
    for p in cohort.patients() {
        groups[roi_count_group(p.lesions().len())].push(p.response());
    }
    stratified(groups.into_iter().map(|(g, v)| (g.to_string(), v)).collect())
}

/// Kaplan–Meier curves by terciles of the per-patient heterogeneity index.
pub fn km_by_heterogeneity(cohort: &Cohort, metric: Metric) -> Result<Strata> {
    let index = cohort
        .patients()
        .iter()
        .map(|p| patient_heterogeneity(p, metric))
        .collect::<Result<Vec<_>>>()?;
    let labels = tercile_stratify(&index)?;
    let mut groups: IndexMap<Tercile, Vec<SurvivalResponse>> = [Tercile::Low, Tercile::Mid, Tercile::High]
        .into_iter()
        .map(|t| (t, Vec::new()))
        .collect();
    for (p, t) in cohort.patients().iter().zip(labels) {
        groups[&t].push(p.response());
    }
    stratified(groups.into_iter().map(|(t, v)| (t.name().to_string(), v)).collect())
}

fn stratified(groups: Vec<(String, Vec<SurvivalResponse>)>) -> Result<Strata> {
    let present: Vec<(String, Vec<SurvivalResponse>)> = groups.into_iter().filter(|(_, v)| !v.is_empty()).collect();
    let curves = present.iter().map(|(g, v)| (g.clone(), kaplan_meier(v))).collect();
    let samples: Vec<Vec<SurvivalResponse>> = present.into_iter().map(|(_, v)| v).collect();
    let test = if samples.len() >= 2 {
        logrank_test(&samples).ok()
    } else {
        None
    };
    Ok((curves, test))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synthgen::{generate, GenSpec};

    fn cohort(n: usize) -> Cohort {
        generate(&GenSpec {
            n_patients: n,
            n_features: 4,
            n_informative: 2,
            ..Default::default()
        })
        .unwrap()
    }

    #[test]
    fn partition_sizes() {
        let plan = make_partitions(&cohort(115), 5, 1).unwrap();
        for s in &plan.iterations {
            assert_eq!((s.train.len(), s.test.len()), (77, 38));
        }
        assert_eq!(plan, make_partitions(&cohort(115), 5, 1).unwrap());
        assert!(make_partitions(&cohort(5), 5, 1).is_err());
    }

    #[test]
    fn plan_round_trips_and_checks() {
        let c = cohort(30);
        let plan = make_partitions(&c, 3, 9).unwrap();
        let mut buf = Vec::new();
        plan.to_json(&mut buf).unwrap();
        assert_eq!(PartitionPlan::from_json(buf.as_slice()).unwrap(), plan);
        plan.check(&c).unwrap();
        assert!(plan.check(&cohort(31)).is_err());
    }

    #[test]
    fn scheme_labels_and_aggregator_rule() {
        let s = Scheme::parse("allROIMax", ModelSpec::Cox).unwrap();
        assert_eq!(s.label, "allROIMax+Cox");
        assert_eq!(
            Scheme::parse("largestROI", ModelSpec::CoxStepAic).unwrap().label,
            "largestROI+CoxStepAIC"
        );
        assert!(Scheme::new(StrategyKind::AllRoi, None, ModelSpec::Cox).is_err());
        assert!(Scheme::new(StrategyKind::LargestRoi, Some(RiskAggregator::Max), ModelSpec::Cox).is_err());
        assert!(parse_strategy("allROI").is_err());
    }

    fn result(label: &str, values: &[f64]) -> SchemeResult {
        let (strategy, model) = split_label(label);
        SchemeResult {
            label: label.into(),
            strategy,
            model,
            c_indices: values.iter().map(|v| Some(*v)).collect(),
            audit: vec![],
        }
    }

    #[test]
    fn summary_self_and_shift() {
        let base = [0.5, 0.6, 0.7, 0.55, 0.65];
        let (_, var) = crate::evaluation::mean_var(&base);
        let sd = var.sqrt();
        let shifted: Vec<f64> = base.iter().map(|v| v + sd).collect();
        let rows = summarize(&[result("a+M", &base), result("b+M", &shifted)], "a+M").unwrap();
        assert_eq!(rows[0].delta_median, Some(0.0));
        assert_eq!(rows[0].cohens_d, Some(0.0));
        assert_eq!(rows[0].effect_band, Some(EffectBand::Negligible));
        assert!((rows[1].cohens_d.unwrap() - 1.0).abs() < 1e-12);
        assert_eq!(rows[1].effect_band, Some(EffectBand::Large));
        assert!(summarize(&[result("a+M", &base)], "zzz").is_err());
    }

    #[test]
    fn summary_hand_computed() {
        let rows = summarize(
            &[
                result("r+M", &[0.5, 0.6, 0.7]),
                result("s+M", &[0.4, 0.45, 0.9, 0.3]),
                result("t+N", &[0.8, 0.8, 0.6]),
            ],
            "r+M",
        )
        .unwrap();
        for (r, expect) in rows.iter().zip([0.6, 0.425, 0.8]) {
            assert!((r.median.unwrap() - expect).abs() < 1e-15);
        }
        assert!((rows[1].delta_median.unwrap() - (0.425 - 0.6)).abs() < 1e-15);
        assert_eq!(rows[1].n_below_half, 3);
        assert_eq!(rows[2].min, Some(0.6));
    }

    #[test]
    fn iteration_csv_round_trip() {
        let mut r = result("largestROI+Cox", &[0.61, 0.5]);
        r.c_indices.push(None);
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("scheme,iteration,c_index,failed\n"));
        assert!(text.contains("largestROI+Cox,2,NaN,1"));
        let back = SchemeResult::read_csv(buf.as_slice()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn effect_matrix_reference_cell() {
        let rows = summarize(&[result("a+M", &[0.5, 0.6]), result("b+M", &[0.7, 0.8])], "a+M").unwrap();
        let m = EffectMatrix::from_summary(&rows);
        assert_eq!(
            format_cell(m.get("a", "M").unwrap().0, m.get("a", "M").unwrap().1),
            "+0.0000"
        );
        let mut buf = Vec::new();
        m.write_csv(&mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "strategy,M\na,+0.0000\nb,+0.2000***\n");
    }
}
