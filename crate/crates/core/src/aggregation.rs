//! Turning multi-lesion patients into model rows, and model risks back into
//! one score per patient.
//!
//! ROI aggregation builds one representative row per patient before
//! fitting. Risk aggregation (`allROI`) fits on every lesion and collapses
//! the per-lesion risks afterwards with a [`RiskAggregator`].

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, DesignMatrix, DesignRow, Patient};
use crate::error::{Error, Result};
use crate::heterogeneity::{patient_heterogeneity, Metric};
use crate::seed::SeedHandle;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum StrategyKind {
    #[serde(rename = "largestROI")]
    LargestRoi,
    #[serde(rename = "randomROI")]
    RandomRoi,
    #[serde(rename = "largestROIdiversityIndex")]
    LargestRoiDiversity,
    #[serde(rename = "randomROIdiversityIndex")]
    RandomRoiDiversity,
    #[serde(rename = "arithmeticMeanROI")]
    ArithmeticMean,
    #[serde(rename = "weightedMeanROI")]
    WeightedMean,
    #[serde(rename = "metaHistogram")]
    MetaHistogram,
    #[serde(rename = "allROI")]
    AllRoi,
}

impl StrategyKind {
    pub const ALL: [StrategyKind; 8] = [
        StrategyKind::LargestRoi,
        StrategyKind::RandomRoi,
        StrategyKind::LargestRoiDiversity,
        StrategyKind::RandomRoiDiversity,
        StrategyKind::ArithmeticMean,
        StrategyKind::WeightedMean,
        StrategyKind::MetaHistogram,
        StrategyKind::AllRoi,
    ];

    pub fn name(self) -> &'static str {
        match self {
            StrategyKind::LargestRoi => "largestROI",
            StrategyKind::RandomRoi => "randomROI",
            StrategyKind::LargestRoiDiversity => "largestROIdiversityIndex",
            StrategyKind::RandomRoiDiversity => "randomROIdiversityIndex",
            StrategyKind::ArithmeticMean => "arithmeticMeanROI",
            StrategyKind::WeightedMean => "weightedMeanROI",
            StrategyKind::MetaHistogram => "metaHistogram",
            StrategyKind::AllRoi => "allROI",
        }
    }

    pub fn is_random(self) -> bool {
        matches!(self, StrategyKind::RandomRoi | StrategyKind::RandomRoiDiversity)
    }

    pub fn uses_diversity(self) -> bool {
        matches!(
            self,
            StrategyKind::LargestRoiDiversity | StrategyKind::RandomRoiDiversity
        )
    }

    /// Binds a seed; random kinds fail without one.
    pub fn with_seed(self, seed: Option<SeedHandle>) -> Result<RoiStrategy> {
        Ok(match self {
            StrategyKind::LargestRoi => RoiStrategy::LargestRoi,
            StrategyKind::LargestRoiDiversity => RoiStrategy::LargestRoiDiversity,
            StrategyKind::ArithmeticMean => RoiStrategy::ArithmeticMean,
            StrategyKind::WeightedMean => RoiStrategy::WeightedMean,
            StrategyKind::MetaHistogram => RoiStrategy::MetaHistogram,
            StrategyKind::AllRoi => RoiStrategy::AllRoi,
            StrategyKind::RandomRoi | StrategyKind::RandomRoiDiversity => {
                let seed = seed.ok_or_else(|| Error::invalid(format!("{} requires a seed handle", self.name())))?;
                if self == StrategyKind::RandomRoi {
                    RoiStrategy::RandomRoi(seed)
                } else {
                    RoiStrategy::RandomRoiDiversity(seed)
                }
            }
        })
    }
}

impl fmt::Display for StrategyKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for StrategyKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        StrategyKind::ALL
            .into_iter()
            .find(|k| k.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::invalid(format!("unknown ROI strategy `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RoiStrategy {
    LargestRoi,
    RandomRoi(SeedHandle),
    LargestRoiDiversity,
    RandomRoiDiversity(SeedHandle),
    ArithmeticMean,
    WeightedMean,
    MetaHistogram,
    AllRoi,
}

impl RoiStrategy {
    pub fn kind(&self) -> StrategyKind {
        match self {
            RoiStrategy::LargestRoi => StrategyKind::LargestRoi,
            RoiStrategy::RandomRoi(_) => StrategyKind::RandomRoi,
            RoiStrategy::LargestRoiDiversity => StrategyKind::LargestRoiDiversity,
            RoiStrategy::RandomRoiDiversity(_) => StrategyKind::RandomRoiDiversity,
            RoiStrategy::ArithmeticMean => StrategyKind::ArithmeticMean,
            RoiStrategy::WeightedMean => StrategyKind::WeightedMean,
            RoiStrategy::MetaHistogram => StrategyKind::MetaHistogram,
            RoiStrategy::AllRoi => StrategyKind::AllRoi,
        }
    }
}

/// Precomputed heterogeneity indices per patient, one column per metric.
///
/// Indices depend only on a patient's own lesions, so one table serves
/// every cross-validation split.
#[derive(Debug, Clone, PartialEq)]
pub struct DiversityTable {
    metrics: Vec<Metric>,
    values: HashMap<String, Vec<f64>>,
}

impl DiversityTable {
    pub fn compute(cohort: &Cohort, metrics: &[Metric]) -> Result<DiversityTable> {
        check_diversity_metrics(metrics)?;
        let mut values = HashMap::with_capacity(cohort.len());
        for p in cohort.patients() {
            let row = metrics
                .iter()
                .map(|&m| patient_heterogeneity(p, m))
                .collect::<Result<Vec<_>>>()?;
            values.insert(p.patient_id().to_string(), row);
        }
        Ok(DiversityTable {
            metrics: metrics.to_vec(),
            values,
        })
    }

    pub fn metrics(&self) -> &[Metric] {
        &self.metrics
    }

    pub fn get(&self, patient_id: &str) -> Option<&[f64]> {
        self.values.get(patient_id).map(Vec::as_slice)
    }
}

fn check_diversity_metrics(metrics: &[Metric]) -> Result<()> {
    let names = ["canberra", "euclidean", "minkowski", "kendall", "spearman"];
    let complete = metrics.len() == names.len()
        && names
            .iter()
            .all(|n| metrics.iter().filter(|m| m.name() == *n).count() == 1);
    if complete {
        Ok(())
    } else {
        Err(Error::invalid(
            "diversity strategies need exactly one of each of the five heterogeneity metrics",
        ))
    }
}

pub fn build_design(cohort: &Cohort, strategy: RoiStrategy, metrics: &[Metric]) -> Result<DesignMatrix> {
    build_design_with(cohort, strategy, metrics, None)
}

/// As [`build_design`], reading heterogeneity indices from `cache` when
/// given. Patients missing from the cache are computed on the fly.
pub fn build_design_with(
    cohort: &Cohort,
    strategy: RoiStrategy,
    metrics: &[Metric],
    cache: Option<&DiversityTable>,
) -> Result<DesignMatrix> {
    let kind = strategy.kind();
    if kind.uses_diversity() {
        check_diversity_metrics(metrics)?;
    }
    let base_schema = cohort.schema();
    let schema: Vec<String> = match kind {
        StrategyKind::MetaHistogram => base_schema
            .iter()
            .flat_map(|f| META_STATS.iter().map(move |s| format!("{f}_{s}")))
            .collect(),
        k if k.uses_diversity() => base_schema
            .iter()
            .cloned()
            .chain(metrics.iter().map(|m| format!("div_{}", m.name())))
            .collect(),
        _ => base_schema.to_vec(),
    };

    let mut rows = Vec::new();
    let mut responses = Vec::new();
    for p in cohort.patients() {
        let total_volume: f64 = p.lesions().iter().map(|l| l.volume() as f64).sum();
        let constructed = |roi_id: &str, features: Vec<f64>| DesignRow {
            patient_id: p.patient_id().to_string(),
            roi_id: roi_id.to_string(),
            volume: total_volume,
            weight: 1.0,
            features,
        };
        match strategy {
            RoiStrategy::AllRoi => {
                for idx in 0..p.lesions().len() {
                    rows.push(lesion_row(p, idx));
                    responses.push(p.response());
                }
                continue;
            }
            RoiStrategy::LargestRoi => rows.push(lesion_row(p, p.largest_lesion_index())),
            RoiStrategy::RandomRoi(seed) => rows.push(lesion_row(p, random_lesion(p, seed))),
            RoiStrategy::LargestRoiDiversity | RoiStrategy::RandomRoiDiversity(_) => {
                let idx = match strategy {
                    RoiStrategy::RandomRoiDiversity(seed) => random_lesion(p, seed),
                    _ => p.largest_lesion_index(),
                };
                let mut row = lesion_row(p, idx);
                match cache.and_then(|c| c.get(p.patient_id())) {
                    Some(v) if c_metrics_match(cache, metrics) => row.features.extend_from_slice(v),
                    _ => {
                        for &m in metrics {
                            row.features.push(patient_heterogeneity(p, m)?);
                        }
                    }
                }
                rows.push(row);
            }
            RoiStrategy::ArithmeticMean => {
                let m = p.lesions().len() as f64;
                let mut acc = vec![0.0; base_schema.len()];
                for l in p.lesions() {
                    for (a, v) in acc.iter_mut().zip(l.features()) {
                        *a += v;
                    }
                }
                acc.iter_mut().for_each(|a| *a /= m);
                rows.push(constructed("arithmeticMean", acc));
            }
            RoiStrategy::WeightedMean => {
                let mut acc = vec![0.0; base_schema.len()];
                for l in p.lesions() {
                    let w = l.volume() as f64 / total_volume;
                    for (a, v) in acc.iter_mut().zip(l.features()) {
                        *a += w * v;
                    }
                }
                rows.push(constructed("weightedMean", acc));
            }
            RoiStrategy::MetaHistogram => {
                rows.push(constructed("metaHistogram", meta_histogram_features(p)));
            }
        }
        responses.push(p.response());
    }
    DesignMatrix::new(schema, rows, responses)
}

fn c_metrics_match(cache: Option<&DiversityTable>, metrics: &[Metric]) -> bool {
    cache.is_some_and(|c| c.metrics == metrics)
}

fn lesion_row(p: &Patient, idx: usize) -> DesignRow {
    let l = &p.lesions()[idx];
    DesignRow {
        patient_id: p.patient_id().to_string(),
        roi_id: l.roi_id().to_string(),
        volume: l.volume() as f64,
        weight: 1.0,
        features: l.features().to_vec(),
    }
}

/// Uniform lesion draw keyed on the patient id, so the choice for a patient
/// does not depend on which other patients are in the cohort.
fn random_lesion(p: &Patient, seed: SeedHandle) -> usize {
    seed.derive_label(p.patient_id())
        .rng()
        .random_range(0..p.lesions().len())
}

pub const META_STATS: [&str; 7] = ["mean", "variance", "sum", "skewness", "kurtosis", "energy", "entropy"];

/// Seven meta-histogram statistics per base feature, feature-major.
///
/// The histogram's bins are the feature's values over the patient's lesions
/// by descending volume. Skewness and excess kurtosis are 0 when the
/// variance vanishes; entropy normalizes absolute values.
pub fn meta_histogram_features(patient: &Patient) -> Vec<f64> {
    let order = patient.lesions_by_size();
    let n_features = patient.lesions()[0].features().len();
    let mut out = Vec::with_capacity(n_features * META_STATS.len());
    let mut bins = Vec::with_capacity(order.len());
    for j in 0..n_features {
        bins.clear();
        bins.extend(order.iter().map(|&i| patient.lesions()[i].features()[j]));
        out.extend_from_slice(&meta_histogram_stats(&bins));
    }
    out
}

/// `[mean, variance, sum, skewness, kurtosis, energy, entropy]` of `values`.
pub fn meta_histogram_stats(values: &[f64]) -> [f64; 7] {
    let m = values.len() as f64;
    let sum: f64 = values.iter().sum();
    let mean = sum / m;
    let (mut m2, mut m3, mut m4) = (0.0, 0.0, 0.0);
    for v in values {
        let d = v - mean;
        m2 += d * d;
        m3 += d * d * d;
        m4 += d * d * d * d;
    }
    m2 /= m;
    m3 /= m;
    m4 /= m;
    // rounding noise around a constant histogram counts as zero spread
    let degenerate = m2 <= 1e-24 * mean * mean || m2 == 0.0;
    let variance = if degenerate { 0.0 } else { m2 };
    let (skew, kurt) = if degenerate {
        (0.0, 0.0)
    } else {
        (m3 / m2.powf(1.5), m4 / (m2 * m2) - 3.0)
    };
    let energy: f64 = values.iter().map(|v| v * v).sum();
    let abs_total: f64 = values.iter().map(|v| v.abs()).sum();
    let entropy = if abs_total == 0.0 {
        0.0
    } else {
        let h: f64 = values
            .iter()
            .map(|v| v.abs() / abs_total)
            .filter(|&q| q > 0.0)
            .map(|q| -q * q.ln())
            .sum();
        h.max(0.0)
    };
    [mean, variance, sum, skew, kurt, energy, entropy]
}

/// Redundancy filter fitted on training rows and replayed on test rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CorrelationFilter {
    pub threshold: f64,
    /// Indices (into the fitted schema) of the retained columns.
    pub kept: Vec<usize>,
    pub removed: Vec<usize>,
    pub input_width: usize,
}

impl CorrelationFilter {
    /// Scans column pairs in schema order. For each pair with
    /// `|r| > threshold` among the still-retained columns, drops the one
    /// with the larger mean absolute correlation to the other retained
    /// columns; equal means drop the later column.
    pub fn fit(design: &DesignMatrix, threshold: f64) -> Result<CorrelationFilter> {
        if !(threshold > 0.0 && threshold <= 1.0) {
            return Err(Error::invalid(format!(
                "correlation threshold must lie in (0, 1], got {threshold}"
            )));
        }
        let p = design.n_features();
        let corr = abs_correlation_matrix(design);
        let mut alive = vec![true; p];
        let mut n_alive = p;
        let mut sums: Vec<f64> = (0..p)
            .map(|i| (0..p).filter(|&j| j != i).map(|j| corr[i * p + j]).sum())
            .collect();
        let mut removed = Vec::new();
        for i in 0..p {
            if !alive[i] {
                continue;
            }
            for j in (i + 1)..p {
                if !alive[j] || corr[i * p + j] <= threshold {
                    continue;
                }
                let denom = (n_alive - 1) as f64;
                let (mi, mj) = (sums[i] / denom, sums[j] / denom);
                let drop = if mi > mj { i } else { j };
                alive[drop] = false;
                n_alive -= 1;
                removed.push(drop);
                for k in 0..p {
                    if alive[k] {
                        sums[k] -= corr[k * p + drop];
                    }
                }
                if drop == i {
                    break;
                }
            }
        }
        removed.sort_unstable();
        Ok(CorrelationFilter {
            threshold,
            kept: (0..p).filter(|&j| alive[j]).collect(),
            removed,
            input_width: p,
        })
    }

    pub fn apply(&self, design: &DesignMatrix) -> Result<DesignMatrix> {
        if design.n_features() != self.input_width {
            return Err(Error::SchemaMismatch(format!(
                "filter fitted on {} columns, design has {}",
                self.input_width,
                design.n_features()
            )));
        }
        Ok(design.select_columns(&self.kept))
    }
}

pub fn correlation_filter(design: &DesignMatrix, threshold: f64) -> Result<(DesignMatrix, CorrelationFilter)> {
    let filter = CorrelationFilter::fit(design, threshold)?;
    Ok((filter.apply(design)?, filter))
}

/// Row-major `p × p` matrix of |Pearson r|; constant columns correlate 0.
pub fn abs_correlation_matrix(design: &DesignMatrix) -> Vec<f64> {
    let p = design.n_features();
    let n = design.n_rows() as f64;
    let cols: Vec<Vec<f64>> = design
        .columns()
        .into_iter()
        .map(|c| {
            let mean = c.iter().sum::<f64>() / n;
            let centered: Vec<f64> = c.iter().map(|v| v - mean).collect();
            let norm = centered.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm > 0.0 {
                centered.iter().map(|v| v / norm).collect()
            } else {
                vec![0.0; c.len()]
            }
        })
        .collect();
    let mut out = vec![0.0; p * p];
    for i in 0..p {
        for j in i..p {
            let r: f64 = cols[i].iter().zip(&cols[j]).map(|(a, b)| a * b).sum();
            let r = r.abs().min(1.0);
            out[i * p + j] = r;
            out[j * p + i] = r;
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RiskAggregator {
    Min,
    Max,
    Mean,
    WeightedMean,
}

impl RiskAggregator {
    pub const ALL: [RiskAggregator; 4] = [
        RiskAggregator::Min,
        RiskAggregator::Max,
        RiskAggregator::Mean,
        RiskAggregator::WeightedMean,
    ];

    /// Scheme-level name, e.g. `allROIMax`.
    pub fn scheme_name(self) -> &'static str {
        match self {
            RiskAggregator::Min => "allROIMin",
            RiskAggregator::Max => "allROIMax",
            RiskAggregator::Mean => "allROIMean",
            RiskAggregator::WeightedMean => "allROIWeightedMean",
        }
    }

    pub fn from_scheme_name(s: &str) -> Option<RiskAggregator> {
        RiskAggregator::ALL
            .into_iter()
            .find(|a| a.scheme_name().eq_ignore_ascii_case(s))
    }
}

/// Collapses `(patient_id, risk, volume)` rows to one risk per patient, in
/// order of first appearance.
pub fn aggregate_risks(rows: &[(&str, f64, f64)], agg: RiskAggregator) -> Result<IndexMap<String, f64>> {
    if rows.is_empty() {
        return Err(Error::invalid("no risks to aggregate"));
    }
    let mut groups: IndexMap<&str, Vec<(f64, f64)>> = IndexMap::new();
    for &(id, risk, volume) in rows {
        if !risk.is_finite() {
            return Err(Error::invalid(format!("non-finite risk for patient `{id}`")));
        }
        groups.entry(id).or_default().push((risk, volume));
    }
    Ok(groups
        .into_iter()
        .map(|(id, g)| {
            let v = match agg {
                RiskAggregator::Min => g.iter().map(|x| x.0).fold(f64::INFINITY, f64::min),
                RiskAggregator::Max => g.iter().map(|x| x.0).fold(f64::NEG_INFINITY, f64::max),
                RiskAggregator::Mean => g.iter().map(|x| x.0).sum::<f64>() / g.len() as f64,
                RiskAggregator::WeightedMean => {
                    let total: f64 = g.iter().map(|x| x.1).sum();
                    g.iter().map(|&(r, w)| (w / total) * r).sum()
                }
            };
            (id.to_string(), v)
        })
        .collect())
}
