//! Cox proportional hazards by Newton–Raphson, and forward stepwise
//! selection by AIC.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::partial_likelihood::{linear_predictor, require_events, RiskSets};
use crate::cohort::DesignMatrix;
use crate::error::Result;

pub const SCORE_TOLERANCE: f64 = 1e-8;
pub const MAX_NEWTON_ITERATIONS: usize = 50;
/// Any |βⱼ| beyond this is taken as (quasi-)separation.
pub const SEPARATION_BOUND: f64 = 15.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CoxStatus {
    Converged,
    Separated,
    NotConverged,
    Singular,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxFit {
    pub beta: Vec<f64>,
    pub loglik: f64,
    pub aic: f64,
    pub status: CoxStatus,
    pub iterations: usize,
    /// ∞-norm of the score at `beta`.
    pub score_norm: f64,
}

impl CoxFit {
    pub fn ok(&self) -> bool {
        self.status == CoxStatus::Converged
    }
}

/// Columns plus risk-set index, reused across candidate fits.
#[derive(Debug, Clone)]
pub struct CoxData {
    pub columns: Vec<Vec<f64>>,
    pub risk_sets: RiskSets,
}

impl CoxData {
    pub fn new(design: &DesignMatrix) -> Result<CoxData> {
        let risk_sets = RiskSets::new(&design.times(), &design.events());
        require_events(&risk_sets)?;
        Ok(CoxData {
            columns: design.columns(),
            risk_sets,
        })
    }

    pub fn n(&self) -> usize {
        self.risk_sets.n()
    }

    /// Linear predictor for `beta` on `subset`.
    pub fn eta(&self, subset: &[usize], beta: &[f64]) -> Vec<f64> {
        let cols: Vec<Vec<f64>> = subset.iter().map(|&j| self.columns[j].clone()).collect();
        linear_predictor(&cols, beta, self.n())
    }

    /// Maximizes the partial likelihood over the columns in `subset`.
    pub fn fit(&self, subset: &[usize], start: Option<&[f64]>) -> CoxFit {
        let cols: Vec<&Vec<f64>> = subset.iter().map(|&j| &self.columns[j]).collect();
        let x: Vec<Vec<f64>> = cols.into_iter().cloned().collect();
        newton(&x, &self.risk_sets, start)
    }
}

/// Fits a Cox model on the columns of `design` listed in `subset`.
pub fn cox_fit(design: &DesignMatrix, subset: &[usize]) -> Result<CoxFit> {
    Ok(CoxData::new(design)?.fit(subset, None))
}

fn newton(x: &[Vec<f64>], rs: &RiskSets, start: Option<&[f64]>) -> CoxFit {
    let p = x.len();
    let n = rs.n();
    let mut beta: Vec<f64> = start.map_or_else(|| vec![0.0; p], <[f64]>::to_vec);
    let (mut ll, mut score, mut info) = rs.derivatives(x, &linear_predictor(x, &beta, n));
    let finish = |beta: Vec<f64>, ll: f64, score: &DVector<f64>, status, iterations| CoxFit {
        aic: -2.0 * ll + 2.0 * p as f64,
        score_norm: score.amax(),
        beta,
        loglik: ll,
        status,
        iterations,
    };
    if p == 0 {
        return finish(beta, ll, &score, CoxStatus::Converged, 0);
    }
    for it in 0..MAX_NEWTON_ITERATIONS {
        if score.amax() < SCORE_TOLERANCE {
            return finish(beta, ll, &score, CoxStatus::Converged, it);
        }
        let Some(step) = solve_spd(&info, &score) else {
            return finish(beta, ll, &score, CoxStatus::Singular, it);
        };
        let mut scale = 1.0;
        let mut candidate: Vec<f64>;
        let mut cand_ll;
        let mut halvings = 0;
        loop {
            candidate = beta.iter().zip(step.iter()).map(|(b, s)| b + scale * s).collect();
            cand_ll = rs.loglik(&linear_predictor(x, &candidate, n));
            if cand_ll.is_finite() && cand_ll >= ll - 1e-12 * ll.abs().max(1.0) {
                break;
            }
            halvings += 1;
            if halvings > 30 {
                return finish(beta, ll, &score, CoxStatus::NotConverged, it);
            }
            scale *= 0.5;
        }
        beta = candidate;
        if beta.iter().any(|b| b.abs() > SEPARATION_BOUND) {
            let (l, s, _) = rs.derivatives(x, &linear_predictor(x, &beta, n));
            return finish(beta, l, &s, CoxStatus::Separated, it + 1);
        }
        (ll, score, info) = rs.derivatives(x, &linear_predictor(x, &beta, n));
    }
    let status = if score.amax() < SCORE_TOLERANCE {
        CoxStatus::Converged
    } else {
        CoxStatus::NotConverged
    };
    finish(beta, ll, &score, status, MAX_NEWTON_ITERATIONS)
}

fn solve_spd(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    if let Some(ch) = a.clone().cholesky() {
        let x = ch.solve(b);
        if x.iter().all(|v| v.is_finite()) {
            return Some(x);
        }
    }
    let x = a.clone().lu().solve(b)?;
    x.iter().all(|v| v.is_finite()).then_some(x)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepwiseFit {
    /// Selected column indices in order of entry.
    pub selected: Vec<usize>,
    pub fit: CoxFit,
    /// AIC after each step, starting with the null model.
    pub aic_trace: Vec<f64>,
}

/// Forward selection from the null model: add the column with the largest
/// AIC decrease while one exists, up to `min(p, events - 1)` columns.
/// Candidates that separate or fail to converge are skipped.
pub fn stepwise_aic(design: &DesignMatrix) -> Result<StepwiseFit> {
    let data = CoxData::new(design)?;
    Ok(stepwise_on(&data))
}

pub(crate) fn stepwise_on(data: &CoxData) -> StepwiseFit {
    let p = data.columns.len();
    let budget = p.min(data.risk_sets.n_events().saturating_sub(1));
    let mut current = data.fit(&[], None);
    let mut selected: Vec<usize> = Vec::new();
    let mut aic_trace = vec![current.aic];
    while selected.len() < budget {
        let mut best: Option<(usize, CoxFit)> = None;
        for j in 0..p {
            if selected.contains(&j) {
                continue;
            }
            let mut subset = selected.clone();
            subset.push(j);
            let mut start = current.beta.clone();
            start.push(0.0);
            let cand = data.fit(&subset, Some(&start));
            if !cand.ok() {
                continue;
            }
            if best.as_ref().is_none_or(|(_, b)| cand.aic < b.aic) {
                best = Some((j, cand));
            }
        }
        match best {
            Some((j, fit)) if fit.aic < current.aic => {
                selected.push(j);
                aic_trace.push(fit.aic);
                current = fit;
            }
            _ => break,
        }
    }
    StepwiseFit {
        selected,
        fit: current,
        aic_trace,
    }
}
