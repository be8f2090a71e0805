//! Survival learners behind one fit/predict contract.
//!
//! Every fitted model maps a feature row to a risk score where larger means
//! an earlier predicted event. [`fit_model`] optionally applies the
//! correlation filter, drops columns that are constant on the training rows,
//! standardizes (except for the forest), and fits the learner;
//! [`predict_risk`] replays the same steps on new rows.

pub mod aft;
pub mod cox;
pub mod coxnet;
pub mod forest;
pub mod partial_likelihood;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use aft::{aft_boost_fit, AftDistribution, BoostParams, BoostedAft};
pub use cox::{cox_fit, stepwise_aic, CoxData, CoxFit, CoxStatus, StepwiseFit};
pub use coxnet::{coxnet_fit, CoxnetFit, CoxnetParams};
pub use forest::{rsf_fit, Forest, ForestParams};
pub use partial_likelihood::RiskSets;

use crate::aggregation::CorrelationFilter;
use crate::cohort::{DesignMatrix, Standardizer};
use crate::error::{Error, Result};
use crate::seed::SeedHandle;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "camelCase")]
pub enum ModelSpec {
    Cox,
    #[serde(rename = "coxStepAIC")]
    CoxStepAic,
    Coxnet {
        #[serde(default)]
        params: CoxnetParams,
    },
    RandomForest {
        #[serde(default)]
        params: ForestParams,
    },
    #[serde(rename = "boostAFT")]
    BoostAft {
        distribution: AftDistribution,
        #[serde(default)]
        params: BoostParams,
    },
}

impl ModelSpec {
    pub fn coxnet() -> ModelSpec {
        ModelSpec::Coxnet {
            params: CoxnetParams::default(),
        }
    }

    pub fn random_forest() -> ModelSpec {
        ModelSpec::RandomForest {
            params: ForestParams::default(),
        }
    }

    pub fn boost_aft(distribution: AftDistribution) -> ModelSpec {
        ModelSpec::BoostAft {
            distribution,
            params: BoostParams::default(),
        }
    }

    /// The six models compared in the benchmark grid.
    pub fn benchmark_set() -> Vec<ModelSpec> {
        vec![
            ModelSpec::CoxStepAic,
            ModelSpec::coxnet(),
            ModelSpec::boost_aft(AftDistribution::Weibull),
            ModelSpec::boost_aft(AftDistribution::Loglog),
            ModelSpec::boost_aft(AftDistribution::Lognormal),
            ModelSpec::random_forest(),
        ]
    }

    pub fn label(&self) -> &'static str {
        match self {
            ModelSpec::Cox => "Cox",
            ModelSpec::CoxStepAic => "CoxStepAIC",
            ModelSpec::Coxnet { .. } => "Coxnet",
            ModelSpec::RandomForest { .. } => "randomForest",
            ModelSpec::BoostAft { distribution, .. } => distribution.label(),
        }
    }

    pub fn is_forest(&self) -> bool {
        matches!(self, ModelSpec::RandomForest { .. })
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Cox | ModelSpec::CoxStepAic => Ok(()),
            ModelSpec::Coxnet { params } => params.validate(),
            ModelSpec::RandomForest { params } => params.validate(),
            ModelSpec::BoostAft { params, .. } => params.validate(),
        }
    }
}

impl fmt::Display for ModelSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

/// Parses a model label with default hyperparameters.
impl FromStr for ModelSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<ModelSpec> {
        Ok(match s {
            "Cox" => ModelSpec::Cox,
            "CoxStepAIC" => ModelSpec::CoxStepAic,
            "Coxnet" => ModelSpec::coxnet(),
            "randomForest" => ModelSpec::random_forest(),
            "Weibull" => ModelSpec::boost_aft(AftDistribution::Weibull),
            "Loglog" => ModelSpec::boost_aft(AftDistribution::Loglog),
            "Lognormal" => ModelSpec::boost_aft(AftDistribution::Lognormal),
            other => return Err(Error::invalid(format!("unknown model `{other}`"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FitOptions {
    pub standardize: bool,
    /// Correlation-filter threshold fitted on the training rows.
    pub filter_threshold: Option<f64>,
    pub seed: SeedHandle,
}

impl Default for FitOptions {
    fn default() -> Self {
        FitOptions {
            standardize: true,
            filter_threshold: None,
            seed: SeedHandle(0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Learner {
    Linear {
        /// Coefficient per active column.
        beta: Vec<f64>,
    },
    Stepwise {
        selected: Vec<usize>,
        beta: Vec<f64>,
    },
    Coxnet {
        lambda: f64,
        beta: Vec<f64>,
    },
    Forest(Forest),
    Boost(BoostedAft),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedModel {
    pub spec: ModelSpec,
    pub input_schema: Vec<String>,
    pub filter: Option<CorrelationFilter>,
    /// Post-filter columns the learner sees.
    pub active: Vec<usize>,
    pub standardizer: Option<Standardizer>,
    pub learner: Learner,
}

impl FittedModel {
    /// Names of the columns that reach the learner.
    pub fn active_features(&self) -> Vec<&str> {
        let post: Vec<usize> = match &self.filter {
            Some(f) => f.kept.clone(),
            None => (0..self.input_schema.len()).collect(),
        };
        self.active
            .iter()
            .map(|&j| self.input_schema[post[j]].as_str())
            .collect()
    }

    /// Names of the columns with a nonzero effect, for linear learners.
    pub fn selected_features(&self) -> Option<Vec<&str>> {
        let names = self.active_features();
        match &self.learner {
            Learner::Stepwise { selected, .. } => Some(selected.iter().map(|&j| names[j]).collect()),
            Learner::Linear { beta } | Learner::Coxnet { beta, .. } => Some(
                beta.iter()
                    .zip(&names)
                    .filter(|(b, _)| **b != 0.0)
                    .map(|(_, n)| *n)
                    .collect(),
            ),
            Learner::Boost(b) => Some(
                b.beta
                    .iter()
                    .zip(&names)
                    .filter(|(b, _)| **b != 0.0)
                    .map(|(_, n)| *n)
                    .collect(),
            ),
            Learner::Forest(_) => None,
        }
    }

    /// Training-row mortality stored at fit time (forest only).
    pub fn training_mortality(&self) -> Option<&[f64]> {
        match &self.learner {
            Learner::Forest(f) => Some(&f.train_mortality),
            _ => None,
        }
    }

    fn prepare(&self, design: &DesignMatrix) -> Result<DesignMatrix> {
        if design.schema() != self.input_schema.as_slice() {
            return Err(Error::SchemaMismatch(format!(
                "model trained on [{}], rows have [{}]",
                self.input_schema.join(", "),
                design.schema().join(", ")
            )));
        }
        let filtered = match &self.filter {
            Some(f) => f.apply(design)?,
            None => design.clone(),
        };
        let active = filtered.select_columns(&self.active);
        match &self.standardizer {
            Some(s) => s.apply(&active),
            None => Ok(active),
        }
    }

    pub fn predict(&self, design: &DesignMatrix) -> Result<Vec<f64>> {
        let x = self.prepare(design)?;
        let rows = x.rows();
        let linear = |beta: &[f64]| -> Vec<f64> {
            rows.iter()
                .map(|r| r.features.iter().zip(beta).map(|(a, b)| a * b).sum())
                .collect()
        };
        Ok(match &self.learner {
            Learner::Linear { beta } | Learner::Coxnet { beta, .. } => linear(beta),
            Learner::Stepwise { selected, beta } => rows
                .iter()
                .map(|r| selected.iter().zip(beta).map(|(&j, b)| r.features[j] * b).sum())
                .collect(),
            Learner::Forest(f) => rows.iter().map(|r| f.predict_row(&r.features)).collect(),
            Learner::Boost(b) => rows.iter().map(|r| b.risk(&r.features)).collect(),
        })
    }
}

/// Fits `spec` on `design` under `options`.
pub fn fit_model(design: &DesignMatrix, spec: &ModelSpec, options: &FitOptions) -> Result<FittedModel> {
    spec.validate()?;
    if design.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let filter = options
        .filter_threshold
        .map(|t| CorrelationFilter::fit(design, t))
        .transpose()?;
    let filtered = match &filter {
        Some(f) => f.apply(design)?,
        None => design.clone(),
    };
    let active: Vec<usize> = (0..filtered.n_features())
        .filter(|&j| {
            let col = filtered.column(j);
            col.iter().any(|v| *v != col[0])
        })
        .collect();
    let reduced = filtered.select_columns(&active);
    let (x, standardizer) = if options.standardize && !spec.is_forest() {
        let s = Standardizer::fit(&reduced)?;
        (s.apply(&reduced)?, Some(s))
    } else {
        (reduced, None)
    };
    let learner = match spec {
        ModelSpec::Cox => {
            let all: Vec<usize> = (0..x.n_features()).collect();
            let fit = cox_fit(&x, &all)?;
            match fit.status {
                CoxStatus::Converged => {}
                CoxStatus::NotConverged => {
                    log::debug!("Cox fit stopped before convergence (|score| = {:.3e})", fit.score_norm)
                }
                status => return Err(Error::FitFailed(format!("Cox fit: {status:?}"))),
            }
            Learner::Linear { beta: fit.beta }
        }
        ModelSpec::CoxStepAic => {
            let step = stepwise_aic(&x)?;
            Learner::Stepwise {
                selected: step.selected,
                beta: step.fit.beta,
            }
        }
        ModelSpec::Coxnet { params } => {
            let fit = coxnet_fit(&x, params, options.seed)?;
            Learner::Coxnet {
                lambda: fit.lambda(),
                beta: fit.beta().to_vec(),
            }
        }
        ModelSpec::RandomForest { params } => Learner::Forest(rsf_fit(&x, params, options.seed)?),
        ModelSpec::BoostAft { distribution, params } => Learner::Boost(aft_boost_fit(&x, *distribution, params)?),
    };
    Ok(FittedModel {
        spec: spec.clone(),
        input_schema: design.schema().to_vec(),
        filter,
        active,
        standardizer,
        learner,
    })
}

pub fn predict_risk(model: &FittedModel, design: &DesignMatrix) -> Result<Vec<f64>> {
    model.predict(design)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::SurvivalResponse;

    fn design(names: &[&str], rows: Vec<Vec<f64>>) -> DesignMatrix {
        let ys = (0..rows.len())
            .map(|i| SurvivalResponse::new(1.0 + i as f64, i % 3 != 2).unwrap())
            .collect();
        DesignMatrix::from_columns(names.iter().map(|s| s.to_string()).collect(), rows, ys).unwrap()
    }

    fn linear_model(beta: Vec<f64>) -> FittedModel {
        FittedModel {
            spec: ModelSpec::Cox,
            input_schema: vec!["x".into()],
            filter: None,
            active: vec![0],
            standardizer: None,
            learner: Learner::Linear { beta },
        }
    }

    #[test]
    fn zero_coefficients_give_constant_risk() {
        let m = linear_model(vec![0.0]);
        let r = m
            .predict(&design(&["x"], vec![vec![1.0], vec![5.0], vec![-2.0]]))
            .unwrap();
        assert!(r.iter().all(|v| *v == r[0]));
    }

    #[test]
    fn unit_coefficient_is_linear() {
        let m = linear_model(vec![1.0]);
        let r = m.predict(&design(&["x"], vec![vec![1.0], vec![2.0]])).unwrap();
        assert_eq!(r[1] - r[0], 1.0);
    }

    #[test]
    fn schema_mismatch_is_rejected() {
        let m = linear_model(vec![1.0]);
        let err = m.predict(&design(&["y"], vec![vec![1.0]])).unwrap_err();
        assert!(matches!(err, Error::SchemaMismatch(_)));
    }

    #[test]
    fn labels_round_trip() {
        for spec in ModelSpec::benchmark_set().into_iter().chain([ModelSpec::Cox]) {
            assert_eq!(spec.label().parse::<ModelSpec>().unwrap(), spec);
        }
    }

    #[test]
    fn serde_tags() {
        let spec = ModelSpec::boost_aft(AftDistribution::Loglog);
        let json = serde_json::to_string(&spec).unwrap();
        assert!(json.contains("\"kind\":\"boostAFT\"") && json.contains("\"loglog\""));
        let back: ModelSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let forest: ModelSpec = serde_json::from_str(r#"{"kind":"randomForest"}"#).unwrap();
        assert_eq!(forest, ModelSpec::random_forest());
    }

    #[test]
    fn constant_columns_are_dropped() {
        let rows: Vec<Vec<f64>> = (0..30).map(|i| vec![0.0, (i as f64).sin()]).collect();
        let d = design(&["flat", "wave"], rows);
        let m = fit_model(&d, &ModelSpec::Cox, &FitOptions::default()).unwrap();
        assert_eq!(m.active_features(), vec!["wave"]);
        assert_eq!(m.predict(&d).unwrap().len(), 30);
    }

    #[test]
    fn coefficient_scaling_preserves_ranking() {
        let rows: Vec<Vec<f64>> = (0..20)
            .map(|i| vec![(i as f64 * 0.7).cos(), ((i * 7) % 20) as f64 * 0.1])
            .collect();
        let d = design(&["a", "b"], rows);
        let mut m = fit_model(&d, &ModelSpec::Cox, &FitOptions::default()).unwrap();
        let base = m.predict(&d).unwrap();
        if let Learner::Linear { beta } = &mut m.learner {
            beta.iter_mut().for_each(|b| *b *= 3.5);
        }
        let scaled = m.predict(&d).unwrap();
        let rank = |v: &[f64]| {
            let mut idx: Vec<usize> = (0..v.len()).collect();
            idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
            idx
        };
        assert_eq!(rank(&base), rank(&scaled));
    }
}
