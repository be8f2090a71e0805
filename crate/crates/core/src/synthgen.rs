//! Synthetic multi-lesion cohorts with a planted survival signal.
//!
//! Each patient draws a latent feature vector; each lesion adds independent
//! noise to it. A fixed weight vector over the first `n_informative`
//! features scores every lesion, the hazard link collapses those scores to
//! one log-hazard, and event times follow a Weibull proportional-hazards
//! model:
//!
//! ```text
//! S(t | x) = exp(−(t / scale)^shape · exp(η))
//! ```
//!
//! Optional per-patient noise dispersion (`noise_scale_spread`) and a
//! log-hazard term proportional to it (`dispersion_hazard`) make hazard grow
//! with inter-lesion heterogeneity.

use std::fmt;
use std::str::FromStr;

use rand::distr::weighted::WeightedIndex;
use rand::Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::cohort::{Cohort, Lesion, Patient, SurvivalResponse, MIN_VOLUME};
use crate::error::{Error, Result};
use crate::seed::SeedHandle;

const MAX_VOLUME: f64 = 1e4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HazardLink {
    Max,
    Mean,
    Min,
    /// Only the largest lesion drives the hazard.
    LargestOnly,
}

impl fmt::Display for HazardLink {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            HazardLink::Max => "max",
            HazardLink::Mean => "mean",
            HazardLink::Min => "min",
            HazardLink::LargestOnly => "largest_only",
        })
    }
}

impl FromStr for HazardLink {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "max" => Ok(HazardLink::Max),
            "mean" => Ok(HazardLink::Mean),
            "min" => Ok(HazardLink::Min),
            "largest_only" => Ok(HazardLink::LargestOnly),
            _ => Err(Error::invalid(format!("unknown hazard link `{s}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GenSpec {
    pub n_patients: usize,
    /// `lesion_count_pmf[k]` is the probability of `k + 1` lesions.
    pub lesion_count_pmf: Vec<f64>,
    pub n_features: usize,
    pub n_informative: usize,
    pub patient_latent_sd: f64,
    pub lesion_noise_sd: f64,
    pub hazard_link: HazardLink,
    /// Euclidean norm of the lesion-score weight vector.
    pub effect_size: f64,
    pub baseline_scale: f64,
    pub baseline_shape: f64,
    pub censor_horizon: f64,
    /// Upper bound of the independent uniform censoring time; `None`
    /// leaves only administrative censoring.
    pub censor_uniform_max: Option<f64>,
    /// Standard deviation of `log s`, where `s` scales a patient's lesion noise.
    pub noise_scale_spread: f64,
    /// Log-hazard increase per unit of `log s`.
    pub dispersion_hazard: f64,
    pub seed: u64,
}

impl Default for GenSpec {
    fn default() -> Self {
        GenSpec {
            n_patients: 200,
            lesion_count_pmf: vec![0.4, 0.2, 0.15, 0.15, 0.1],
            n_features: 20,
            n_informative: 5,
            patient_latent_sd: 1.0,
            lesion_noise_sd: 0.5,
            hazard_link: HazardLink::Max,
            effect_size: 1.0,
            baseline_scale: 24.0,
            baseline_shape: 1.2,
            censor_horizon: 60.0,
            censor_uniform_max: Some(120.0),
            noise_scale_spread: 0.0,
            dispersion_hazard: 0.0,
            seed: 42,
        }
    }
}

impl GenSpec {
    pub fn k_max(&self) -> usize {
        self.lesion_count_pmf.len()
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::invalid(m.to_string()));
        if self.n_patients == 0 {
            return bad("n_patients must be positive");
        }
        if self.lesion_count_pmf.is_empty() {
            return bad("lesion_count_pmf must not be empty");
        }
        if self.lesion_count_pmf.iter().any(|p| !p.is_finite() || *p < 0.0) {
            return bad("lesion_count_pmf entries must be finite and non-negative");
        }
        let total: f64 = self.lesion_count_pmf.iter().sum();
        if (total - 1.0).abs() > 1e-9 {
            return Err(Error::invalid(format!("lesion_count_pmf sums to {total}, expected 1")));
        }
        if self.n_features == 0 {
            return bad("n_features must be positive");
        }
        if self.n_informative > self.n_features {
            return Err(Error::invalid(format!(
                "n_informative ({}) exceeds n_features ({})",
                self.n_informative, self.n_features
            )));
        }
        let non_negative = [
            self.patient_latent_sd,
            self.lesion_noise_sd,
            self.effect_size,
            self.noise_scale_spread,
        ];
        if non_negative.iter().any(|v| !v.is_finite() || *v < 0.0) || !self.dispersion_hazard.is_finite() {
            return bad("standard deviations and effect sizes must be finite and non-negative");
        }
        let positive = [self.baseline_scale, self.baseline_shape, self.censor_horizon];
        if positive.iter().any(|v| !v.is_finite() || *v <= 0.0) {
            return bad("baseline_scale, baseline_shape and censor_horizon must be positive");
        }
        if let Some(m) = self.censor_uniform_max {
            if !m.is_finite() || m <= 0.0 {
                return bad("censor_uniform_max must be positive");
            }
        }
        Ok(())
    }

    /// Lesion-score weights: zero beyond `n_informative`, Euclidean norm
    /// `effect_size`.
    pub fn weights(&self) -> Vec<f64> {
        let mut rng = SeedHandle(self.seed).derive_label("weights").rng();
        let mut w: Vec<f64> = (0..self.n_features)
            .map(|j| {
                if j < self.n_informative {
                    let mag: f64 = rng.random_range(0.5..1.5);
                    if rng.random_bool(0.5) {
                        mag
                    } else {
                        -mag
                    }
                } else {
                    0.0
                }
            })
            .collect();
        let norm = w.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm > 0.0 {
            w.iter_mut().for_each(|v| *v *= self.effect_size / norm);
        }
        w
    }
}

pub fn feature_names(n: usize) -> Vec<String> {
    let width = n.to_string().len().max(2);
    (1..=n).map(|j| format!("f{j:0width$}")).collect()
}

/// Draws a cohort from `spec`; identical specs give identical cohorts.
pub fn generate(spec: &GenSpec) -> Result<Cohort> {
    spec.validate()?;
    let w = spec.weights();
    let counts =
        WeightedIndex::new(&spec.lesion_count_pmf).map_err(|e| Error::invalid(format!("lesion_count_pmf: {e}")))?;
    let master = SeedHandle(spec.seed).derive_label("patients");
    let id_width = spec.n_patients.to_string().len().max(4);
    let mut patients = Vec::with_capacity(spec.n_patients);
    for i in 0..spec.n_patients {
        let mut rng = master.derive(i as u64).rng();
        let k = counts.sample(&mut rng) + 1;
        let latent: Vec<f64> = (0..spec.n_features)
            .map(|_| spec.patient_latent_sd * rng.sample::<f64, _>(StandardNormal))
            .collect();
        let log_s = spec.noise_scale_spread * rng.sample::<f64, _>(StandardNormal);
        let noise_sd = spec.lesion_noise_sd * log_s.exp();
        let mut lesions: Vec<(Vec<f64>, f64)> = (0..k)
            .map(|_| {
                let x: Vec<f64> = latent
                    .iter()
                    .map(|m| m + noise_sd * rng.sample::<f64, _>(StandardNormal))
                    .collect();
                let score = x.iter().zip(&w).map(|(a, b)| a * b).sum();
                (x, score)
            })
            .collect();
        let mut volumes = draw_volumes(k, &mut rng);
        if spec.hazard_link == HazardLink::LargestOnly {
            // largest volume goes to the highest-scoring lesion
            volumes.sort_unstable_by(|a, b| b.cmp(a));
            lesions.sort_by(|a, b| b.1.total_cmp(&a.1));
        }
        let scores: Vec<f64> = lesions.iter().map(|l| l.1).collect();
        let link = match spec.hazard_link {
            HazardLink::Max => scores.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            HazardLink::Min => scores.iter().copied().fold(f64::INFINITY, f64::min),
            HazardLink::Mean => scores.iter().sum::<f64>() / k as f64,
            HazardLink::LargestOnly => scores[0],
        };
        let eta = link + spec.dispersion_hazard * log_s;
        let e: f64 = Exp1.sample(&mut rng);
        let t_event = spec.baseline_scale * (e * (-eta).exp()).powf(1.0 / spec.baseline_shape);
        let mut t_censor = spec.censor_horizon;
        if let Some(m) = spec.censor_uniform_max {
            let u: f64 = 1.0 - rng.random::<f64>();
            t_censor = t_censor.min(m * u);
        }
        let event = t_event <= t_censor;
        let time = if event { t_event } else { t_censor };
        let response = SurvivalResponse::new(time.max(f64::MIN_POSITIVE), event)?;
        let lesions = lesions
            .into_iter()
            .zip(volumes)
            .enumerate()
            .map(|(j, ((x, _), v))| Lesion::new(format!("R{}", j + 1), v, x))
            .collect::<Result<Vec<_>>>()?;
        patients.push(Patient::new(format!("P{:0id_width$}", i + 1), lesions, response)?);
    }
    Cohort::new(feature_names(spec.n_features), patients)
}

/// Distinct log-uniform integer volumes in `[MIN_VOLUME, MAX_VOLUME]`.
fn draw_volumes(k: usize, rng: &mut impl Rng) -> Vec<u64> {
    let (lo, hi) = ((MIN_VOLUME as f64).ln(), MAX_VOLUME.ln());
    let mut out: Vec<u64> = Vec::with_capacity(k);
    while out.len() < k {
        let v = rng.random_range(lo..=hi).exp().round() as u64;
        let v = v.clamp(MIN_VOLUME, MAX_VOLUME as u64);
        if !out.contains(&v) {
            out.push(v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn degenerate_pmf_gives_single_lesions() {
        let spec = GenSpec {
            lesion_count_pmf: vec![1.0],
            ..Default::default()
        };
        let c = generate(&spec).unwrap();
        assert!(c.patients().iter().all(|p| p.lesions().len() == 1));
    }

    #[test]
    fn deterministic() {
        let spec = GenSpec::default();
        let (a, b) = (generate(&spec).unwrap(), generate(&spec).unwrap());
        let dump = |c: &Cohort| {
            let mut l = Vec::new();
            let mut o = Vec::new();
            c.write_lesions(&mut l).unwrap();
            c.write_outcomes(&mut o).unwrap();
            (l, o)
        };
        assert_eq!(dump(&a), dump(&b));
    }

    #[test]
    fn censoring_fraction_is_moderate() {
        let c = generate(&GenSpec::default()).unwrap();
        let censored = c.responses().iter().filter(|r| !r.event()).count() as f64 / c.len() as f64;
        assert!(censored > 0.1 && censored < 0.9, "{censored}");
    }

    #[test]
    fn rejects_bad_specs() {
        let cases = [
            GenSpec {
                lesion_count_pmf: vec![0.5, 0.4],
                ..Default::default()
            },
            GenSpec {
                n_informative: 21,
                ..Default::default()
            },
            GenSpec {
                baseline_shape: 0.0,
                ..Default::default()
            },
        ];
        for spec in cases {
            assert!(generate(&spec).unwrap_err().is_validation());
        }
    }

    #[test]
    fn zero_noise_makes_lesions_identical() {
        let spec = GenSpec {
            lesion_noise_sd: 0.0,
            n_patients: 30,
            ..Default::default()
        };
        for p in generate(&spec).unwrap().patients() {
            let first = p.lesions()[0].features();
            assert!(p.lesions().iter().all(|l| l.features() == first));
        }
    }

    #[test]
    fn largest_lesion_carries_top_score_under_largest_only() {
        let spec = GenSpec {
            hazard_link: HazardLink::LargestOnly,
            n_patients: 50,
            ..Default::default()
        };
        let w = spec.weights();
        for p in generate(&spec).unwrap().patients() {
            let score = |x: &[f64]| x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let big = score(p.lesions()[p.largest_lesion_index()].features());
            assert!(p.lesions().iter().all(|l| score(l.features()) <= big));
        }
    }

    #[test]
    fn weights_have_requested_norm() {
        let spec = GenSpec {
            effect_size: 2.0,
            ..Default::default()
        };
        let w = spec.weights();
        assert!((w.iter().map(|v| v * v).sum::<f64>().sqrt() - 2.0).abs() < 1e-12);
        assert!(w[spec.n_informative..].iter().all(|v| *v == 0.0));
    }
}
