//! Elastic-net penalized Cox regression.
//!
//! Minimizes `−ℓ(β)/N + λ(α‖β‖₁ + (1−α)/2 ‖β‖²)` by proximal Newton
//! iterations with cyclic coordinate descent on each penalized quadratic
//! model. The λ path is
//! geometric from `λ_max`, the smallest value with every coefficient at
//! zero, down to `λ_max · lambda_min_ratio`, and λ is picked by K-fold
//! cross-validated partial likelihood with folds formed by patient.

use std::collections::HashMap;

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::partial_likelihood::{linear_predictor, require_events, RiskSets};
use crate::cohort::DesignMatrix;
use crate::error::{Error, Result};
use crate::seed::SeedHandle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CoxnetParams {
    pub alpha: f64,
    pub n_lambda: usize,
    pub lambda_min_ratio: f64,
    pub cv_folds: usize,
}

impl Default for CoxnetParams {
    fn default() -> Self {
        CoxnetParams {
            alpha: 1.0,
            n_lambda: 100,
            lambda_min_ratio: 1e-4,
            cv_folds: 5,
        }
    }
}

impl CoxnetParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(Error::invalid("coxnet alpha must lie in (0, 1]"));
        }
        if self.n_lambda == 0 || self.cv_folds < 2 {
            return Err(Error::invalid("coxnet needs n_lambda >= 1 and cv_folds >= 2"));
        }
        if !(self.lambda_min_ratio > 0.0 && self.lambda_min_ratio < 1.0) {
            return Err(Error::invalid("lambda_min_ratio must lie in (0, 1)"));
        }
        Ok(())
    }
}

const OUTER_MAX: usize = 200;
const INNER_MAX: usize = 10_000;
const OUTER_TOL: f64 = 1e-10;
const INNER_TOL: f64 = 1e-12;
const DAMPING: f64 = 1e-8;
const POLISH_EVERY: usize = 5;
const OBJ_TOL: f64 = 1e-12;
const DEV_RATIO_MAX: f64 = 0.999;
const DEV_RATIO_TOL: f64 = 1e-5;
const MIN_PATH: usize = 5;

/// Penalized Cox problem on fixed data.
#[derive(Debug, Clone)]
pub struct CoxnetProblem {
    pub columns: Vec<Vec<f64>>,
    pub risk_sets: RiskSets,
}

impl CoxnetProblem {
    pub fn new(design: &DesignMatrix) -> Result<CoxnetProblem> {
        let risk_sets = RiskSets::new(&design.times(), &design.events());
        require_events(&risk_sets)?;
        Ok(CoxnetProblem {
            columns: design.columns(),
            risk_sets,
        })
    }

    fn n(&self) -> usize {
        self.risk_sets.n()
    }

    /// Gradient and Hessian of `−ℓ(β)/N`.
    fn quadratic(&self, beta: &[f64]) -> (DVector<f64>, DMatrix<f64>) {
        let eta = linear_predictor(&self.columns, beta, self.n());
        let (_, score, info) = self.risk_sets.derivatives(&self.columns, &eta);
        let nf = self.n() as f64;
        (-score / nf, info / nf)
    }

    /// Smallest λ at which every coefficient is zero.
    pub fn lambda_max(&self, alpha: f64) -> f64 {
        let (g, _) = self.quadratic(&vec![0.0; self.columns.len()]);
        g.iter().map(|v| v.abs()).fold(0.0, f64::max) / alpha.max(1e-3)
    }

    pub fn objective(&self, beta: &[f64], lambda: f64, alpha: f64) -> f64 {
        let eta = linear_predictor(&self.columns, beta, self.n());
        -self.risk_sets.loglik(&eta) / self.n() as f64 + penalty(beta, lambda, alpha)
    }

    /// Solves at a single λ from the warm start `beta` by proximal Newton
    /// steps: coordinate descent on the penalized second-order model, then
    /// step-halving on the true objective.
    pub fn solve(&self, lambda: f64, alpha: f64, beta: &mut [f64]) {
        let p = self.columns.len();
        let l1 = lambda * alpha;
        let l2 = lambda * (1.0 - alpha);
        let mut prev_obj = self.objective(beta, lambda, alpha);
        for _ in 0..OUTER_MAX {
            let start: Vec<f64> = beta.to_vec();
            let (g, mut h) = self.quadratic(beta);
            // damping keeps the model bounded when the Hessian is singular
            for j in 0..p {
                h[(j, j)] *= 1.0 + DAMPING;
            }
            // gradient of the smooth model at the current inner iterate
            let mut mg: Vec<f64> = g.iter().copied().collect();
            let mut full_sweep = true;
            for sweep in 1..=INNER_MAX {
                let mut max_delta: f64 = 0.0;
                for j in 0..p {
                    let hjj = h[(j, j)];
                    if hjj <= 0.0 || (!full_sweep && beta[j] == 0.0) {
                        continue;
                    }
                    let u = hjj * beta[j] - mg[j];
                    let new = soft_threshold(u, l1) / (hjj + l2);
                    let delta = new - beta[j];
                    if delta != 0.0 {
                        for (m, hk) in mg.iter_mut().zip(h.column(j).iter()) {
                            *m += delta * hk;
                        }
                        beta[j] = new;
                        max_delta = max_delta.max(hjj * delta * delta);
                    }
                }
                if max_delta < INNER_TOL {
                    if full_sweep {
                        break;
                    }
                    full_sweep = true;
                } else if sweep % POLISH_EVERY == 0 && polish(&g, &h, &start, beta, &mut mg, l1, l2) {
                    break;
                } else {
                    full_sweep = false;
                }
            }
            let mut obj = self.objective(beta, lambda, alpha);
            let mut tries = 0;
            while (obj.is_nan() || obj > prev_obj + 1e-15 * prev_obj.abs()) && tries < 30 {
                for (b, s) in beta.iter_mut().zip(&start) {
                    *b = 0.5 * (*b + s);
                }
                obj = self.objective(beta, lambda, alpha);
                tries += 1;
            }
            let gain = prev_obj - obj;
            prev_obj = obj;
            let change = beta.iter().zip(&start).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
            if change < OUTER_TOL || gain <= OBJ_TOL * obj.abs() {
                break;
            }
        }
    }

    /// As [`CoxnetProblem::path`], but stops once the fit saturates: the
    /// deviance ratio reaches `DEV_RATIO_MAX`, or (after `MIN_PATH`
    /// values) it improves by less than a fraction `DEV_RATIO_TOL`.
    pub fn truncated_path(&self, lambdas: &[f64], alpha: f64) -> Vec<Vec<f64>> {
        let null = self.risk_sets.loglik(&vec![0.0; self.n()]);
        let sat = self.risk_sets.saturated_loglik();
        let mut beta = vec![0.0; self.columns.len()];
        let mut out = Vec::with_capacity(lambdas.len());
        let mut prev_ratio = 0.0;
        for &lam in lambdas {
            self.solve(lam, alpha, &mut beta);
            out.push(beta.clone());
            let ll = self.risk_sets.loglik(&linear_predictor(&self.columns, &beta, self.n()));
            let ratio = if sat > null { (ll - null) / (sat - null) } else { 1.0 };
            if ratio >= DEV_RATIO_MAX || (out.len() >= MIN_PATH && ratio - prev_ratio < DEV_RATIO_TOL * ratio) {
                break;
            }
            prev_ratio = ratio;
        }
        out
    }

    /// Coefficients along `lambdas` (warm-started in order).
    pub fn path(&self, lambdas: &[f64], alpha: f64) -> Vec<Vec<f64>> {
        let mut beta = vec![0.0; self.columns.len()];
        lambdas
            .iter()
            .map(|&lam| {
                self.solve(lam, alpha, &mut beta);
                beta.clone()
            })
            .collect()
    }
}

/// Minimizes the penalized quadratic model exactly by an active-set
/// iteration started from the current iterate. Each round solves the model
/// on the support with fixed signs; if a coefficient would change sign the
/// iterate moves only up to the first zero crossing and that coordinate
/// leaves the support, otherwise the worst violating zero coordinate
/// enters. Gives up after a bounded number of rounds, leaving `beta`
/// untouched.
fn polish(
    g: &DVector<f64>,
    h: &DMatrix<f64>,
    start: &[f64],
    beta: &mut [f64],
    mg: &mut [f64],
    l1: f64,
    l2: f64,
) -> bool {
    let p = beta.len();
    let hb0: Vec<f64> = (0..p).map(|j| (0..p).map(|m| h[(j, m)] * start[m]).sum()).collect();
    let mut b = beta.to_vec();
    let mut sign: Vec<f64> = b.iter().map(|v| if *v == 0.0 { 0.0 } else { v.signum() }).collect();
    let slack = l1 * (1.0 + 1e-9);
    for _ in 0..(4 * p + 10) {
        let active: Vec<usize> = (0..p).filter(|&j| sign[j] != 0.0).collect();
        let k = active.len();
        if k > 0 {
            // g + H (b - b0) + l1 s + l2 b = 0 on the support, b = 0 elsewhere
            let lhs = DMatrix::from_fn(k, k, |a, c| h[(active[a], active[c])] + if a == c { l2 } else { 0.0 });
            let rhs = DVector::from_fn(k, |a, _| hb0[active[a]] - g[active[a]] - l1 * sign[active[a]]);
            let Some(chol) = lhs.cholesky() else {
                return false;
            };
            let sol = chol.solve(&rhs);
            // largest step along (sol - b) that keeps every sign
            let mut step = 1.0;
            let mut leaving = None;
            for (a, &j) in active.iter().enumerate() {
                if sol[a] * sign[j] <= 0.0 {
                    let t = b[j] / (b[j] - sol[a]);
                    if t < step {
                        step = t;
                        leaving = Some(j);
                    }
                }
            }
            for (a, &j) in active.iter().enumerate() {
                b[j] += step * (sol[a] - b[j]);
            }
            if let Some(j) = leaving {
                b[j] = 0.0;
                sign[j] = 0.0;
                continue;
            }
        }
        let model_grad: Vec<f64> = (0..p)
            .map(|j| g[j] + (0..p).map(|m| h[(j, m)] * b[m]).sum::<f64>() - hb0[j])
            .collect();
        let worst = (0..p)
            .filter(|&j| sign[j] == 0.0 && h[(j, j)] > 0.0 && model_grad[j].abs() > slack)
            .max_by(|&x, &y| model_grad[x].abs().total_cmp(&model_grad[y].abs()));
        match worst {
            None => {
                beta.copy_from_slice(&b);
                mg.copy_from_slice(&model_grad);
                return true;
            }
            Some(j) => sign[j] = -model_grad[j].signum(),
        }
    }
    false
}

fn soft_threshold(u: f64, t: f64) -> f64 {
    if u > t {
        u - t
    } else if u < -t {
        u + t
    } else {
        0.0
    }
}

fn penalty(beta: &[f64], lambda: f64, alpha: f64) -> f64 {
    let l1: f64 = beta.iter().map(|b| b.abs()).sum();
    let l2: f64 = beta.iter().map(|b| b * b).sum();
    lambda * (alpha * l1 + 0.5 * (1.0 - alpha) * l2)
}

pub fn lambda_path(lambda_max: f64, n_lambda: usize, min_ratio: f64) -> Vec<f64> {
    if n_lambda == 1 {
        return vec![lambda_max];
    }
    (0..n_lambda)
        .map(|k| lambda_max * min_ratio.powf(k as f64 / (n_lambda - 1) as f64))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoxnetFit {
    pub lambdas: Vec<f64>,
    pub betas: Vec<Vec<f64>>,
    /// Cross-validated partial likelihood per λ (larger is better).
    pub cv_score: Vec<f64>,
    pub chosen: usize,
}

impl CoxnetFit {
    pub fn beta(&self) -> &[f64] {
        &self.betas[self.chosen]
    }

    pub fn lambda(&self) -> f64 {
        self.lambdas[self.chosen]
    }
}

/// Fits the λ path (stopping early once the fit saturates) and selects λ
/// by cross-validation.
///
/// The CV criterion for fold `k` is `ℓ(β₋ₖ) − ℓ₋ₖ(β₋ₖ)`, the full-data
/// partial likelihood minus the training-fold one, both at the training-fold
/// coefficients.
pub fn coxnet_fit(design: &DesignMatrix, params: &CoxnetParams, seed: SeedHandle) -> Result<CoxnetFit> {
    params.validate()?;
    let full = CoxnetProblem::new(design)?;
    if full.risk_sets.n_events() < 2 * params.cv_folds {
        return Err(Error::FitFailed(format!(
            "coxnet needs at least {} events for {}-fold CV, have {}",
            2 * params.cv_folds,
            params.cv_folds,
            full.risk_sets.n_events()
        )));
    }
    let lmax = full.lambda_max(params.alpha);
    let lambdas = if lmax > 0.0 {
        lambda_path(lmax, params.n_lambda, params.lambda_min_ratio)
    } else {
        vec![0.0]
    };
    let betas = full.truncated_path(&lambdas, params.alpha);
    let lambdas = lambdas[..betas.len()].to_vec();

    let folds = patient_folds(design, params.cv_folds, seed);
    let mut cv_score = vec![0.0; lambdas.len()];
    for k in 0..params.cv_folds {
        let train = design_subset(design, &folds, |f| f != k);
        let Ok(problem) = CoxnetProblem::new(&train) else {
            return Err(Error::FitFailed(format!("CV fold {k} has no training events")));
        };
        // beyond a fold's own stopping point its last coefficients are reused
        let path = problem.truncated_path(&lambdas, params.alpha);
        for (l, b) in (0..lambdas.len()).map(|l| (l, &path[l.min(path.len() - 1)])) {
            let full_ll = full.risk_sets.loglik(&linear_predictor(&full.columns, b, full.n()));
            let train_ll = problem
                .risk_sets
                .loglik(&linear_predictor(&problem.columns, b, problem.n()));
            cv_score[l] += full_ll - train_ll;
        }
    }
    let chosen = cv_score
        .iter()
        .enumerate()
        .fold(0, |best, (i, &s)| if s > cv_score[best] { i } else { best });
    Ok(CoxnetFit {
        lambdas,
        betas,
        cv_score,
        chosen,
    })
}

/// Fold label per row; rows of one patient share a fold.
fn patient_folds(design: &DesignMatrix, k: usize, seed: SeedHandle) -> Vec<usize> {
    let mut ids: Vec<&str> = design.patient_ids();
    ids.shuffle(&mut seed.rng());
    let fold_of: HashMap<&str, usize> = ids.iter().enumerate().map(|(i, id)| (*id, i % k)).collect();
    design.rows().iter().map(|r| fold_of[r.patient_id.as_str()]).collect()
}

fn design_subset(design: &DesignMatrix, folds: &[usize], keep: impl Fn(usize) -> bool) -> DesignMatrix {
    let ids: std::collections::HashSet<&str> = design
        .rows()
        .iter()
        .zip(folds)
        .filter(|(_, &f)| keep(f))
        .map(|(r, _)| r.patient_id.as_str())
        .collect();
    design.filter_patients(|id| ids.contains(id))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::SurvivalResponse;
    use crate::survival::cox::cox_fit;
    use rand::Rng;
    use rand_distr::StandardNormal;

    fn synthetic(n: usize, beta: &[f64], seed: u64, dup_first: bool) -> DesignMatrix {
        let mut rng = SeedHandle(seed).rng();
        let p = beta.len();
        let mut rows = Vec::new();
        let mut ys = Vec::new();
        for _ in 0..n {
            let x: Vec<f64> = (0..p).map(|_| rng.sample(StandardNormal)).collect();
            let eta: f64 = x.iter().zip(beta).map(|(a, b)| a * b).sum();
            let u: f64 = rng.random_range(1e-12..1.0);
            let t = -u.ln() * (-eta).exp();
            let c: f64 = rng.random_range(0.0..3.0);
            ys.push(SurvivalResponse::new(t.min(c).max(1e-9), t <= c).unwrap());
            let mut row = x;
            if dup_first {
                row.insert(1, row[0]);
            }
            rows.push(row);
        }
        let width = rows[0].len();
        DesignMatrix::from_columns((0..width).map(|j| format!("x{j}")).collect(), rows, ys).unwrap()
    }

    #[test]
    fn lambda_max_zeroes_everything() {
        let d = synthetic(120, &[0.8, -0.5, 0.0], 1, false);
        let prob = CoxnetProblem::new(&d).unwrap();
        let lmax = prob.lambda_max(1.0);
        let mut beta = vec![0.0; 3];
        prob.solve(lmax, 1.0, &mut beta);
        assert_eq!(beta, vec![0.0; 3]);
        let mut beta = vec![0.0; 3];
        prob.solve(lmax * 0.9, 1.0, &mut beta);
        assert!(beta.iter().any(|b| *b != 0.0));
    }

    #[test]
    fn small_lambda_recovers_cox() {
        let d = synthetic(200, &[0.7, -0.4, 0.3, 0.0, 0.5], 2, false);
        let prob = CoxnetProblem::new(&d).unwrap();
        let lambdas = lambda_path(prob.lambda_max(1.0), 100, 1e-4);
        let path = prob.path(&lambdas, 1.0);
        let cox = cox_fit(&d, &[0, 1, 2, 3, 4]).unwrap();
        let last = path.last().unwrap();
        let diff = last
            .iter()
            .zip(&cox.beta)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(diff < 1e-3, "{diff}");
        let nz = |b: &Vec<f64>| b.iter().filter(|v| **v != 0.0).count();
        assert_eq!(nz(&path[0]), 0);
        assert_eq!(nz(last), 5);
    }

    #[test]
    fn duplicated_columns_share_coefficient() {
        let single = synthetic(200, &[0.9, 0.3], 3, false);
        let dup = synthetic(200, &[0.9, 0.3], 3, true);
        let ps = CoxnetProblem::new(&single).unwrap();
        let pd = CoxnetProblem::new(&dup).unwrap();
        let lam = ps.lambda_max(1.0) * 0.1;
        let mut bs = vec![0.0; 2];
        ps.solve(lam, 1.0, &mut bs);
        let mut bd = vec![0.0; 3];
        pd.solve(lam, 1.0, &mut bd);
        assert!(bd[0] * bd[1] >= 0.0);
        assert!((bd[0] + bd[1] - bs[0]).abs() < 1e-2, "{bd:?} vs {bs:?}");
    }

    #[test]
    fn cv_selects_and_is_deterministic() {
        let d = synthetic(150, &[0.8, 0.0, 0.0, -0.6], 4, false);
        let params = CoxnetParams {
            n_lambda: 30,
            ..Default::default()
        };
        let a = coxnet_fit(&d, &params, SeedHandle(1)).unwrap();
        let b = coxnet_fit(&d, &params, SeedHandle(1)).unwrap();
        assert_eq!(a, b);
        assert!(a.betas.len() <= 30 && a.betas.len() == a.lambdas.len());
        assert_eq!(a.cv_score.len(), a.lambdas.len());
        assert!(a.beta()[0] > 0.0 && a.beta()[3] < 0.0);
    }

    #[test]
    fn too_few_events() {
        let rows = vec![vec![1.0], vec![2.0], vec![3.0]];
        let ys = vec![
            SurvivalResponse::new(1.0, true).unwrap(),
            SurvivalResponse::new(2.0, false).unwrap(),
            SurvivalResponse::new(3.0, true).unwrap(),
        ];
        let d = DesignMatrix::from_columns(vec!["x".into()], rows, ys).unwrap();
        assert!(coxnet_fit(&d, &CoxnetParams::default(), SeedHandle(0)).is_err());
    }
}
