//! Multi-lesion cohort data model, CSV ingestion and feature standardization.
//!
//! Two CSV files describe a cohort:
//!
//! * `lesions.csv`: `patient_id,roi_id,volume,<feature_1>,...,<feature_p>`,
//!   one row per lesion;
//! * `outcomes.csv`: `patient_id,time,event`, one row per patient.
//!
//! Lesions smaller than [`MIN_VOLUME`] voxels are dropped at load time with a
//! warning. Everything else that does not parse is an error carrying the
//! offending line number.

use std::collections::{HashMap, HashSet};
use std::io::{Read, Write};
use std::path::Path;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Smallest lesion volume (voxels) kept at ingestion.
pub const MIN_VOLUME: u64 = 2;

const LESION_KEYS: [&str; 3] = ["patient_id", "roi_id", "volume"];
const OUTCOME_KEYS: [&str; 3] = ["patient_id", "time", "event"];

/// One region of interest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Lesion {
    roi_id: String,
    volume: u64,
    features: Vec<f64>,
}

impl Lesion {
    pub fn new(roi_id: impl Into<String>, volume: u64, features: Vec<f64>) -> Result<Self> {
        let roi_id = roi_id.into();
        if volume < MIN_VOLUME {
            return Err(Error::invalid(format!(
                "lesion `{roi_id}` has volume {volume} < {MIN_VOLUME}"
            )));
        }
        if let Some(v) = features.iter().find(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "lesion `{roi_id}` has a non-finite feature value {v}"
            )));
        }
        Ok(Lesion {
            roi_id,
            volume,
            features,
        })
    }

    pub fn roi_id(&self) -> &str {
        &self.roi_id
    }

    pub fn volume(&self) -> u64 {
        self.volume
    }

    pub fn features(&self) -> &[f64] {
        &self.features
    }
}

/// Observed follow-up: event time, or censoring time when `event` is false.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurvivalResponse {
    time: f64,
    event: bool,
}

impl SurvivalResponse {
    pub fn new(time: f64, event: bool) -> Result<Self> {
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::invalid(format!(
                "survival time must be finite and > 0, got {time}"
            )));
        }
        Ok(SurvivalResponse { time, event })
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    pub fn event(&self) -> bool {
        self.event
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Patient {
    patient_id: String,
    lesions: Vec<Lesion>,
    response: SurvivalResponse,
}

impl Patient {
    pub fn new(patient_id: impl Into<String>, lesions: Vec<Lesion>, response: SurvivalResponse) -> Result<Self> {
        let patient_id = patient_id.into();
        if lesions.is_empty() {
            return Err(Error::invalid(format!("patient `{patient_id}` has no lesions")));
        }
        let mut seen = HashSet::new();
        for l in &lesions {
            if !seen.insert(l.roi_id.as_str()) {
                return Err(Error::invalid(format!(
                    "patient `{patient_id}` has duplicate roi `{}`",
                    l.roi_id
                )));
            }
        }
        Ok(Patient {
            patient_id,
            lesions,
            response,
        })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn lesions(&self) -> &[Lesion] {
        &self.lesions
    }

    pub fn response(&self) -> SurvivalResponse {
        self.response
    }

    /// Index of the largest lesion. Equal volumes resolve to the smallest
    /// `roi_id`.
    pub fn largest_lesion_index(&self) -> usize {
        let mut best = 0;
        for (i, l) in self.lesions.iter().enumerate().skip(1) {
            let b = &self.lesions[best];
            if l.volume > b.volume || (l.volume == b.volume && l.roi_id < b.roi_id) {
                best = i;
            }
        }
        best
    }

    /// Lesion indices by descending volume, ties by ascending `roi_id`.
    pub fn lesions_by_size(&self) -> Vec<usize> {
        let mut idx: Vec<usize> = (0..self.lesions.len()).collect();
        idx.sort_by(|&a, &b| {
            let (la, lb) = (&self.lesions[a], &self.lesions[b]);
            lb.volume.cmp(&la.volume).then_with(|| la.roi_id.cmp(&lb.roi_id))
        });
        idx
    }
}

/// Patients with one or more lesions sharing a feature schema.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Cohort {
    schema: Vec<String>,
    patients: Vec<Patient>,
}

impl Cohort {
    pub fn new(schema: Vec<String>, patients: Vec<Patient>) -> Result<Self> {
        let mut seen = HashSet::new();
        for p in &patients {
            if !seen.insert(p.patient_id.as_str()) {
                return Err(Error::invalid(format!("duplicate patient `{}`", p.patient_id)));
            }
            for l in &p.lesions {
                if l.features.len() != schema.len() {
                    return Err(Error::SchemaMismatch(format!(
                        "lesion `{}` of patient `{}` has {} features, schema has {}",
                        l.roi_id,
                        p.patient_id,
                        l.features.len(),
                        schema.len()
                    )));
                }
            }
        }
        Ok(Cohort { schema, patients })
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn patients(&self) -> &[Patient] {
        &self.patients
    }

    pub fn len(&self) -> usize {
        self.patients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.patients.is_empty()
    }

    pub fn n_lesions(&self) -> usize {
        self.patients.iter().map(|p| p.lesions.len()).sum()
    }

    pub fn patient_ids(&self) -> Vec<&str> {
        self.patients.iter().map(|p| p.patient_id.as_str()).collect()
    }

    pub fn responses(&self) -> Vec<SurvivalResponse> {
        self.patients.iter().map(|p| p.response).collect()
    }

    /// Cohort restricted to the patients at `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> Cohort {
        Cohort {
            schema: self.schema.clone(),
            patients: indices.iter().map(|&i| self.patients[i].clone()).collect(),
        }
    }

    pub fn write_lesions<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header: Vec<&str> = LESION_KEYS.to_vec();
        header.extend(self.schema.iter().map(String::as_str));
        w.write_record(&header)?;
        for p in &self.patients {
            for l in &p.lesions {
                let mut rec = vec![p.patient_id.clone(), l.roi_id.clone(), l.volume.to_string()];
                rec.extend(l.features.iter().map(|v| v.to_string()));
                w.write_record(&rec)?;
            }
        }
        w.flush()?;
        Ok(())
    }

    pub fn write_outcomes<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(OUTCOME_KEYS)?;
        for p in &self.patients {
            w.write_record([
                p.patient_id.clone(),
                p.response.time.to_string(),
                if p.response.event { "1" } else { "0" }.to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn save(&self, lesions: impl AsRef<Path>, outcomes: impl AsRef<Path>) -> Result<()> {
        self.write_lesions(std::fs::File::create(lesions)?)?;
        self.write_outcomes(std::fs::File::create(outcomes)?)?;
        Ok(())
    }

    pub fn load(lesions: impl AsRef<Path>, outcomes: impl AsRef<Path>) -> Result<Cohort> {
        let table = load_lesions(lesions, &SchemaPolicy::Infer)?;
        load_outcomes(outcomes, table)
    }
}

/// How `load_lesions` treats the feature columns of the header.
#[derive(Debug, Clone, PartialEq)]
pub enum SchemaPolicy {
    /// Take feature names from the header.
    Infer,
    /// Require the header's feature columns to equal this list.
    Strict(Vec<String>),
}

/// Lesions grouped by patient, before outcomes are attached.
#[derive(Debug, Clone, PartialEq)]
pub struct LesionTable {
    pub schema: Vec<String>,
    /// Patients in order of first appearance.
    pub groups: IndexMap<String, Vec<Lesion>>,
    /// Rows dropped for being below [`MIN_VOLUME`].
    pub excluded: usize,
}

impl LesionTable {
    pub fn n_lesions(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }
}

pub fn load_lesions(path: impl AsRef<Path>, policy: &SchemaPolicy) -> Result<LesionTable> {
    read_lesions(std::fs::File::open(path)?, policy)
}

pub fn read_lesions<R: Read>(reader: R, policy: &SchemaPolicy) -> Result<LesionTable> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() < LESION_KEYS.len() || header.iter().take(3).zip(LESION_KEYS).any(|(h, k)| h.trim() != k) {
        return Err(Error::SchemaMismatch(format!(
            "lesions header must start with {}",
            LESION_KEYS.join(",")
        )));
    }
    let schema: Vec<String> = header.iter().skip(3).map(|s| s.trim().to_string()).collect();
    if let SchemaPolicy::Strict(expected) = policy {
        if *expected != schema {
            return Err(Error::SchemaMismatch(
                "feature columns differ from the expected schema".into(),
            ));
        }
    }

    let mut groups: IndexMap<String, Vec<Lesion>> = IndexMap::new();
    let mut seen: HashSet<(String, String)> = HashSet::new();
    let mut excluded = 0;
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let patient_id = record[0].trim().to_string();
        let roi_id = record[1].trim().to_string();
        if patient_id.is_empty() || roi_id.is_empty() {
            return Err(Error::Parse {
                line,
                column: if patient_id.is_empty() { "patient_id" } else { "roi_id" }.into(),
                message: "blank identifier".into(),
            });
        }
        if !seen.insert((patient_id.clone(), roi_id.clone())) {
            return Err(Error::DuplicateLesion {
                line,
                patient_id,
                roi_id,
            });
        }
        let volume: u64 = record[2].trim().parse().map_err(|_| Error::Parse {
            line,
            column: "volume".into(),
            message: format!("`{}` is not a non-negative integer voxel count", &record[2]),
        })?;
        let mut features = Vec::with_capacity(schema.len());
        for (j, name) in schema.iter().enumerate() {
            let cell = record[3 + j].trim();
            let v: f64 = cell.parse().map_err(|_| Error::Parse {
                line,
                column: name.clone(),
                message: format!("`{cell}` is not a number"),
            })?;
            if !v.is_finite() {
                return Err(Error::Parse {
                    line,
                    column: name.clone(),
                    message: format!("non-finite value `{cell}`"),
                });
            }
            features.push(v);
        }
        if volume < MIN_VOLUME {
            log::warn!(
                "line {line}: lesion `{roi_id}` of patient `{patient_id}` has volume {volume} < {MIN_VOLUME}; excluded"
            );
            excluded += 1;
            continue;
        }
        groups.entry(patient_id).or_default().push(Lesion {
            roi_id,
            volume,
            features,
        });
    }
    Ok(LesionTable {
        schema,
        groups,
        excluded,
    })
}

pub fn load_outcomes(path: impl AsRef<Path>, table: LesionTable) -> Result<Cohort> {
    read_outcomes(std::fs::File::open(path)?, table)
}

pub fn read_outcomes<R: Read>(reader: R, table: LesionTable) -> Result<Cohort> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(reader);
    let header = rdr.headers()?.clone();
    if header.len() != 3 || header.iter().zip(OUTCOME_KEYS).any(|(h, k)| h.trim() != k) {
        return Err(Error::SchemaMismatch(format!(
            "outcomes header must be {}",
            OUTCOME_KEYS.join(",")
        )));
    }
    let mut responses: HashMap<String, SurvivalResponse> = HashMap::new();
    for record in rdr.records() {
        let record = record?;
        let line = record.position().map_or(0, |p| p.line());
        let patient_id = record[0].trim().to_string();
        let cell = record[1].trim();
        let time: f64 = cell.parse().map_err(|_| Error::Parse {
            line,
            column: "time".into(),
            message: format!("`{cell}` is not a number"),
        })?;
        if !(time.is_finite() && time > 0.0) {
            return Err(Error::Parse {
                line,
                column: "time".into(),
                message: format!("time must be finite and > 0, got `{cell}`"),
            });
        }
        let event = match record[2].trim() {
            "1" => true,
            "0" => false,
            other => {
                return Err(Error::Parse {
                    line,
                    column: "event".into(),
                    message: format!("event must be 0 or 1, got `{other}`"),
                })
            }
        };
        if responses.contains_key(&patient_id) {
            return Err(Error::DuplicateOutcome { line, patient_id });
        }
        if !table.groups.contains_key(&patient_id) {
            log::warn!("line {line}: outcome for unknown patient `{patient_id}` ignored");
        }
        responses.insert(patient_id, SurvivalResponse { time, event });
    }

    let missing: Vec<String> = table
        .groups
        .keys()
        .filter(|id| !responses.contains_key(*id))
        .cloned()
        .collect();
    if !missing.is_empty() {
        return Err(Error::MissingOutcomes(missing));
    }
    let patients = table
        .groups
        .into_iter()
        .map(|(id, lesions)| {
            let response = responses[&id];
            Patient::new(id, lesions, response)
        })
        .collect::<Result<Vec<_>>>()?;
    Cohort::new(table.schema, patients)
}

/// One model input row. `roi_id` is synthetic (e.g. `mean`) for
/// constructed representatives.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignRow {
    pub patient_id: String,
    pub roi_id: String,
    /// Lesion volume; for constructed rows, the patient's total volume.
    pub volume: f64,
    pub weight: f64,
    pub features: Vec<f64>,
}

/// Flat rows handed to survival models, each pointing back to its patient.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignMatrix {
    schema: Vec<String>,
    rows: Vec<DesignRow>,
    responses: Vec<SurvivalResponse>,
}

impl DesignMatrix {
    pub fn new(schema: Vec<String>, rows: Vec<DesignRow>, responses: Vec<SurvivalResponse>) -> Result<Self> {
        if rows.len() != responses.len() {
            return Err(Error::invalid("rows and responses differ in length"));
        }
        if let Some(r) = rows.iter().find(|r| r.features.len() != schema.len()) {
            return Err(Error::SchemaMismatch(format!(
                "row for patient `{}` has {} features, schema has {}",
                r.patient_id,
                r.features.len(),
                schema.len()
            )));
        }
        Ok(DesignMatrix {
            schema,
            rows,
            responses,
        })
    }

    /// Builds a design from a raw matrix, one synthetic patient per row.
    pub fn from_columns(schema: Vec<String>, rows: Vec<Vec<f64>>, responses: Vec<SurvivalResponse>) -> Result<Self> {
        let rows = rows
            .into_iter()
            .enumerate()
            .map(|(i, features)| DesignRow {
                patient_id: format!("row{i}"),
                roi_id: "roi".into(),
                volume: 1.0,
                weight: 1.0,
                features,
            })
            .collect();
        DesignMatrix::new(schema, rows, responses)
    }

    pub fn schema(&self) -> &[String] {
        &self.schema
    }

    pub fn rows(&self) -> &[DesignRow] {
        &self.rows
    }

    pub fn responses(&self) -> &[SurvivalResponse] {
        &self.responses
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    pub fn n_features(&self) -> usize {
        self.schema.len()
    }

    pub fn n_events(&self) -> usize {
        self.responses.iter().filter(|r| r.event).count()
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r.features[j]).collect()
    }

    /// Column-major copy of the feature matrix.
    pub fn columns(&self) -> Vec<Vec<f64>> {
        (0..self.n_features()).map(|j| self.column(j)).collect()
    }

    pub fn times(&self) -> Vec<f64> {
        self.responses.iter().map(|r| r.time).collect()
    }

    pub fn events(&self) -> Vec<bool> {
        self.responses.iter().map(|r| r.event).collect()
    }

    /// Keeps the feature columns at `keep`, in that order.
    pub fn select_columns(&self, keep: &[usize]) -> DesignMatrix {
        DesignMatrix {
            schema: keep.iter().map(|&j| self.schema[j].clone()).collect(),
            rows: self
                .rows
                .iter()
                .map(|r| DesignRow {
                    features: keep.iter().map(|&j| r.features[j]).collect(),
                    ..r.clone()
                })
                .collect(),
            responses: self.responses.clone(),
        }
    }

    /// Keeps the rows whose patient satisfies `keep`.
    pub fn filter_patients(&self, mut keep: impl FnMut(&str) -> bool) -> DesignMatrix {
        let mut rows = Vec::new();
        let mut responses = Vec::new();
        for (r, y) in self.rows.iter().zip(&self.responses) {
            if keep(&r.patient_id) {
                rows.push(r.clone());
                responses.push(*y);
            }
        }
        DesignMatrix {
            schema: self.schema.clone(),
            rows,
            responses,
        }
    }

    /// Distinct patient ids in row order.
    pub fn patient_ids(&self) -> Vec<&str> {
        let mut seen = HashSet::new();
        self.rows
            .iter()
            .map(|r| r.patient_id.as_str())
            .filter(|id| seen.insert(*id))
            .collect()
    }

    fn map_features(&self, mut f: impl FnMut(usize, f64) -> f64) -> DesignMatrix {
        DesignMatrix {
            schema: self.schema.clone(),
            rows: self
                .rows
                .iter()
                .map(|r| DesignRow {
                    features: r.features.iter().enumerate().map(|(j, &v)| f(j, v)).collect(),
                    ..r.clone()
                })
                .collect(),
            responses: self.responses.clone(),
        }
    }
}

/// Per-feature affine transform fitted on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub means: Vec<f64>,
    /// Sample (n-1) standard deviations; 1 for constant columns.
    pub sds: Vec<f64>,
}

impl Standardizer {
    pub fn fit(design: &DesignMatrix) -> Result<Standardizer> {
        check_finite(design)?;
        let n = design.n_rows();
        let mut means = Vec::with_capacity(design.n_features());
        let mut sds = Vec::with_capacity(design.n_features());
        for j in 0..design.n_features() {
            let col = design.column(j);
            let mean = if n == 0 {
                0.0
            } else {
                col.iter().sum::<f64>() / n as f64
            };
            let ss: f64 = col.iter().map(|v| (v - mean).powi(2)).sum();
            let sd = if n > 1 { (ss / (n - 1) as f64).sqrt() } else { 0.0 };
            means.push(mean);
            sds.push(if sd > 0.0 { sd } else { 1.0 });
        }
        Ok(Standardizer { means, sds })
    }

    pub fn apply(&self, design: &DesignMatrix) -> Result<DesignMatrix> {
        if self.means.len() != design.n_features() {
            return Err(Error::SchemaMismatch(format!(
                "standardizer has {} features, design has {}",
                self.means.len(),
                design.n_features()
            )));
        }
        check_finite(design)?;
        Ok(design.map_features(|j, v| (v - self.means[j]) / self.sds[j]))
    }

    pub fn invert(&self, design: &DesignMatrix) -> Result<DesignMatrix> {
        if self.means.len() != design.n_features() {
            return Err(Error::SchemaMismatch("standardizer/design width differ".into()));
        }
        Ok(design.map_features(|j, v| v * self.sds[j] + self.means[j]))
    }
}

/// Standardizes `design`. Without `params` the transform is estimated from
/// `design` itself; with `params` it is only applied.
pub fn standardize(design: &DesignMatrix, params: Option<&Standardizer>) -> Result<(DesignMatrix, Standardizer)> {
    let fitted = match params {
        Some(p) => p.clone(),
        None => Standardizer::fit(design)?,
    };
    let out = fitted.apply(design)?;
    Ok((out, fitted))
}

fn check_finite(design: &DesignMatrix) -> Result<()> {
    for r in &design.rows {
        if r.features.iter().any(|v| !v.is_finite()) {
            return Err(Error::invalid(format!(
                "non-finite feature in row of patient `{}`",
                r.patient_id
            )));
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn resp(t: f64, e: bool) -> SurvivalResponse {
        SurvivalResponse::new(t, e).unwrap()
    }

    fn one_col(values: &[f64]) -> DesignMatrix {
        DesignMatrix::from_columns(
            vec!["x".into()],
            values.iter().map(|&v| vec![v]).collect(),
            values.iter().map(|_| resp(1.0, true)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn loads_hundred_feature_table() {
        let names: Vec<String> = (1..=100).map(|i| format!("f{i}")).collect();
        let mut csv = format!("patient_id,roi_id,volume,{}\n", names.join(","));
        for (p, r) in [("A", "r1"), ("A", "r2"), ("B", "r1")] {
            let vals: Vec<String> = (0..100).map(|i| (i as f64 * 0.5).to_string()).collect();
            csv.push_str(&format!("{p},{r},10,{}\n", vals.join(",")));
        }
        let table = read_lesions(csv.as_bytes(), &SchemaPolicy::Infer).unwrap();
        assert_eq!(table.groups.len(), 2);
        assert_eq!(table.schema.len(), 100);
        assert_eq!(table.n_lesions(), 3);
    }

    #[test]
    fn header_only_is_empty() {
        let table = read_lesions("patient_id,roi_id,volume,a,b\n".as_bytes(), &SchemaPolicy::Infer).unwrap();
        assert!(table.groups.is_empty());
        let cohort = read_outcomes("patient_id,time,event\n".as_bytes(), table).unwrap();
        assert!(cohort.is_empty());
        assert_eq!(cohort.schema().len(), 2);
    }

    #[test]
    fn small_volume_rows_are_dropped() {
        let csv = "patient_id,roi_id,volume,a\nA,r1,1,0.5\nA,r2,5,1.5\nB,r1,2,2.5\n";
        let table = read_lesions(csv.as_bytes(), &SchemaPolicy::Infer).unwrap();
        assert_eq!(table.n_lesions(), 2);
        assert_eq!(table.excluded, 1);
        assert_eq!(table.groups["A"][0].roi_id(), "r2");
    }

    #[test]
    fn malformed_cells_report_line() {
        let csv = "patient_id,roi_id,volume,a\nA,r1,3,0.5\nA,r2,3,\n";
        match read_lesions(csv.as_bytes(), &SchemaPolicy::Infer) {
            Err(Error::Parse { line, column, .. }) => {
                assert_eq!(line, 3);
                assert_eq!(column, "a");
            }
            other => panic!("unexpected {other:?}"),
        }
        let csv = "patient_id,roi_id,volume,a\nA,r1,3,NaN\n";
        assert!(matches!(
            read_lesions(csv.as_bytes(), &SchemaPolicy::Infer),
            Err(Error::Parse { line: 2, .. })
        ));
    }

    #[test]
    fn duplicate_lesion_rejected() {
        let csv = "patient_id,roi_id,volume,a\nA,r1,3,0.5\nA,r1,4,1.5\n";
        assert!(matches!(
            read_lesions(csv.as_bytes(), &SchemaPolicy::Infer),
            Err(Error::DuplicateLesion { line: 3, .. })
        ));
    }

    #[test]
    fn strict_schema_checked() {
        let csv = "patient_id,roi_id,volume,a,b\n";
        let strict = SchemaPolicy::Strict(vec!["a".into(), "c".into()]);
        assert!(matches!(
            read_lesions(csv.as_bytes(), &strict),
            Err(Error::SchemaMismatch(_))
        ));
        let ok = SchemaPolicy::Strict(vec!["a".into(), "b".into()]);
        assert!(read_lesions(csv.as_bytes(), &ok).is_ok());
    }

    fn two_patient_table() -> LesionTable {
        let csv = "patient_id,roi_id,volume,a\nA,r1,3,0.5\nB,r1,4,1.5\n";
        read_lesions(csv.as_bytes(), &SchemaPolicy::Infer).unwrap()
    }

    #[test]
    fn outcomes_attach() {
        let out = "patient_id,time,event\nB,3.5,0\nA,2,1\n";
        let cohort = read_outcomes(out.as_bytes(), two_patient_table()).unwrap();
        assert_eq!(cohort.len(), 2);
        assert_eq!(cohort.patients()[0].patient_id(), "A");
        assert_eq!(cohort.patients()[0].response(), resp(2.0, true));
        assert_eq!(cohort.patients()[1].response(), resp(3.5, false));
    }

    #[test]
    fn missing_outcome_names_patient() {
        let out = "patient_id,time,event\nA,2,1\n";
        match read_outcomes(out.as_bytes(), two_patient_table()) {
            Err(Error::MissingOutcomes(ids)) => assert_eq!(ids, vec!["B".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn bad_outcome_values_rejected() {
        let out = "patient_id,time,event\nA,2,1\nB,3,2\n";
        assert!(matches!(
            read_outcomes(out.as_bytes(), two_patient_table()),
            Err(Error::Parse { line: 3, .. })
        ));
        let out = "patient_id,time,event\nA,0,1\nB,3,1\n";
        assert!(matches!(
            read_outcomes(out.as_bytes(), two_patient_table()),
            Err(Error::Parse { line: 2, .. })
        ));
        let out = "patient_id,time,event\nA,1,1\nA,3,1\n";
        assert!(matches!(
            read_outcomes(out.as_bytes(), two_patient_table()),
            Err(Error::DuplicateOutcome { line: 3, .. })
        ));
    }

    #[test]
    fn standardize_basic() {
        let (z, params) = standardize(&one_col(&[1.0, 2.0, 3.0]), None).unwrap();
        assert_eq!(z.column(0), vec![-1.0, 0.0, 1.0]);
        assert_eq!(params.means, vec![2.0]);
        assert_eq!(params.sds, vec![1.0]);
    }

    #[test]
    fn standardize_constant_column() {
        let (z, params) = standardize(&one_col(&[5.0, 5.0, 5.0]), None).unwrap();
        assert_eq!(z.column(0), vec![0.0, 0.0, 0.0]);
        assert_eq!(params.sds, vec![1.0]);
    }

    #[test]
    fn standardize_replays_train_params() {
        let train = Standardizer {
            means: vec![2.0],
            sds: vec![1.0],
        };
        let before = train.clone();
        let (z, used) = standardize(&one_col(&[4.0]), Some(&train)).unwrap();
        assert_eq!(z.column(0), vec![2.0]);
        assert_eq!(used, before);
        assert_eq!(train, before);
    }

    #[test]
    fn width_mismatch_is_error() {
        let params = Standardizer {
            means: vec![0.0, 0.0],
            sds: vec![1.0, 1.0],
        };
        assert!(standardize(&one_col(&[1.0]), Some(&params)).is_err());
    }

    #[test]
    fn largest_lesion_tie_break() {
        let l = |id: &str, v| Lesion::new(id, v, vec![0.0]).unwrap();
        let p = Patient::new("A", vec![l("r3", 10), l("r1", 10), l("r2", 4)], resp(1.0, true)).unwrap();
        assert_eq!(p.largest_lesion_index(), 1);
        assert_eq!(p.lesions_by_size(), vec![1, 0, 2]);
    }
}
