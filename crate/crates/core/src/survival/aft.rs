//! Componentwise gradient boosting of parametric accelerated failure time
//! models.
//!
//! The model is `log T = η(x) + σ ε`. Each step fits every centered
//! single-feature least-squares learner (plus an intercept learner) to the
//! negative gradient of the loss with respect to `η`, moves the best one by
//! `ν` times its coefficient, and then refits `σ` by a golden-section search
//! on `log σ`.
//!
//! The gradient is scaled by the current `σ²`, which leaves the choice of
//! learner unchanged (the factor is common to all rows) but keeps step
//! lengths on the log-time scale; the unscaled gradient grows like `1/σ²`
//! and oscillates once `σ` becomes small.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::cohort::DesignMatrix;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AftDistribution {
    /// Extreme-value errors.
    Weibull,
    /// Logistic errors.
    Loglog,
    /// Gaussian errors.
    Lognormal,
}

impl AftDistribution {
    pub const ALL: [AftDistribution; 3] = [
        AftDistribution::Weibull,
        AftDistribution::Loglog,
        AftDistribution::Lognormal,
    ];

    pub fn label(self) -> &'static str {
        match self {
            AftDistribution::Weibull => "Weibull",
            AftDistribution::Loglog => "Loglog",
            AftDistribution::Lognormal => "Lognormal",
        }
    }

    /// Negative log density (event) or survival (censored) of the standardized
    /// residual `z`, excluding `log σ` and the Jacobian of the log transform.
    fn loss_z(self, z: f64, event: bool) -> f64 {
        match (self, event) {
            (AftDistribution::Weibull, true) => z.exp() - z,
            (AftDistribution::Weibull, false) => z.exp(),
            (AftDistribution::Loglog, true) => 2.0 * softplus(z) - z,
            (AftDistribution::Loglog, false) => softplus(z),
            (AftDistribution::Lognormal, true) => 0.5 * z * z,
            (AftDistribution::Lognormal, false) => -log_normal_upper(z),
        }
    }

    /// Derivative of [`Self::loss_z`] in `z`.
    fn dloss_z(self, z: f64, event: bool) -> f64 {
        match (self, event) {
            (AftDistribution::Weibull, e) => z.exp() - e as u8 as f64,
            (AftDistribution::Loglog, true) => 2.0 * sigmoid(z) - 1.0,
            (AftDistribution::Loglog, false) => sigmoid(z),
            (AftDistribution::Lognormal, true) => z,
            (AftDistribution::Lognormal, false) => mills_ratio(z),
        }
    }
}

fn softplus(z: f64) -> f64 {
    if z > 0.0 {
        z + (-z).exp().ln_1p()
    } else {
        z.exp().ln_1p()
    }
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

const LN_SQRT_2PI: f64 = 0.918_938_533_204_672_7;

/// `log(1 − Φ(z))`.
fn log_normal_upper(z: f64) -> f64 {
    if z < 35.0 {
        (0.5 * erfc(z / std::f64::consts::SQRT_2)).ln()
    } else {
        let z2 = z * z;
        -0.5 * z2 - z.ln() - LN_SQRT_2PI + (1.0 - 1.0 / z2 + 3.0 / (z2 * z2)).ln()
    }
}

/// `φ(z) / (1 − Φ(z))`.
fn mills_ratio(z: f64) -> f64 {
    if z < 35.0 {
        (-0.5 * z * z - LN_SQRT_2PI - log_normal_upper(z)).exp()
    } else {
        let z2 = z * z;
        z / (1.0 - 1.0 / z2 + 3.0 / (z2 * z2))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BoostParams {
    pub steps: usize,
    pub nu: f64,
}

impl Default for BoostParams {
    fn default() -> Self {
        BoostParams { steps: 100, nu: 0.1 }
    }
}

impl BoostParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.nu > 0.0 && self.nu <= 1.0) {
            return Err(Error::invalid("boosting step size must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoostedAft {
    pub distribution: AftDistribution,
    pub intercept: f64,
    /// Coefficients on the raw (uncentered) features.
    pub beta: Vec<f64>,
    pub sigma: f64,
    /// Feature chosen at each step; `None` for the intercept learner.
    pub path: Vec<Option<usize>>,
}

impl BoostedAft {
    /// Linear predictor for log survival time.
    pub fn location(&self, row: &[f64]) -> f64 {
        self.intercept + row.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }

    pub fn risk(&self, row: &[f64]) -> f64 {
        -row.iter().zip(&self.beta).map(|(a, b)| a * b).sum::<f64>()
    }
}

struct Problem {
    dist: AftDistribution,
    y: Vec<f64>,
    events: Vec<bool>,
}

impl Problem {
    fn loss(&self, eta: &[f64], log_sigma: f64) -> f64 {
        let s = log_sigma.exp();
        self.y
            .iter()
            .zip(eta)
            .zip(&self.events)
            .map(|((y, e), &d)| d as u8 as f64 * log_sigma + self.dist.loss_z((y - e) / s, d))
            .sum()
    }

    /// Negative gradient in `η`, multiplied by `σ²` so that it is measured
    /// on the log-time scale.
    fn working_residual(&self, eta: &[f64], sigma: f64) -> Vec<f64> {
        self.y
            .iter()
            .zip(eta)
            .zip(&self.events)
            .map(|((y, e), &d)| sigma * self.dist.dloss_z((y - e) / sigma, d))
            .collect()
    }

    fn fit_log_sigma(&self, eta: &[f64], around: f64) -> f64 {
        golden_section(|ls| self.loss(eta, ls), around - 8.0, around + 8.0)
    }
}

fn golden_section(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    while b - a > 1e-9 {
        if fc < fd || fd.is_nan() {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
    }
    0.5 * (a + b)
}

pub fn aft_boost_fit(design: &DesignMatrix, dist: AftDistribution, params: &BoostParams) -> Result<BoostedAft> {
    params.validate()?;
    if design.n_events() == 0 {
        return Err(Error::NoEvents);
    }
    let times = design.times();
    if times.iter().any(|t| t.is_nan() || *t <= 0.0) {
        return Err(Error::invalid("AFT boosting needs strictly positive times"));
    }
    let problem = Problem {
        dist,
        y: times.iter().map(|t| t.ln()).collect(),
        events: design.events(),
    };
    let n = design.n_rows();
    let nf = n as f64;
    let mut centered = design.columns();
    let means: Vec<f64> = centered
        .iter_mut()
        .map(|col| {
            let m = col.iter().sum::<f64>() / nf;
            col.iter_mut().for_each(|v| *v -= m);
            m
        })
        .collect();
    let ss: Vec<f64> = centered.iter().map(|c| c.iter().map(|v| v * v).sum()).collect();

    // offset: constant location and scale by alternating 1-D searches
    let ybar = problem.y.iter().sum::<f64>() / nf;
    let spread = problem.y.iter().map(|y| (y - ybar).powi(2)).sum::<f64>() / nf;
    let mut offset = ybar;
    let mut log_sigma = 0.5 * spread.max(1e-12).ln();
    for _ in 0..50 {
        let prev = (offset, log_sigma);
        offset = golden_section(
            |o| problem.loss(&vec![o; n], log_sigma),
            offset - 20.0 * log_sigma.exp().max(1.0),
            offset + 20.0 * log_sigma.exp().max(1.0),
        );
        log_sigma = problem.fit_log_sigma(&vec![offset; n], log_sigma);
        if (prev.0 - offset).abs() < 1e-10 && (prev.1 - log_sigma).abs() < 1e-10 {
            break;
        }
    }

    let mut eta = vec![offset; n];
    let mut coef = vec![0.0; centered.len()];
    let mut intercept = offset;
    let mut path = Vec::with_capacity(params.steps);
    for _ in 0..params.steps {
        let u = problem.working_residual(&eta, log_sigma.exp());
        let mean_u = u.iter().sum::<f64>() / nf;
        let mut best: (f64, Option<usize>, f64) = (nf * mean_u * mean_u, None, mean_u);
        for (j, col) in centered.iter().enumerate() {
            if ss[j] <= 0.0 {
                continue;
            }
            let xu: f64 = col.iter().zip(&u).map(|(a, b)| a * b).sum();
            let gain = xu * xu / ss[j];
            if gain > best.0 {
                best = (gain, Some(j), xu / ss[j]);
            }
        }
        let step = params.nu * best.2;
        match best.1 {
            Some(j) => {
                coef[j] += step;
                for (e, x) in eta.iter_mut().zip(&centered[j]) {
                    *e += step * x;
                }
            }
            None => {
                intercept += step;
                eta.iter_mut().for_each(|e| *e += step);
            }
        }
        path.push(best.1);
        log_sigma = problem.fit_log_sigma(&eta, log_sigma);
    }
    let shift: f64 = coef.iter().zip(&means).map(|(b, m)| b * m).sum();
    Ok(BoostedAft {
        distribution: dist,
        intercept: intercept - shift,
        beta: coef,
        sigma: log_sigma.exp(),
        path,
    })
}
