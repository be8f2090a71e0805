//! Cox log partial likelihood with Efron's tie correction.
//!
//! Rows are grouped by distinct time. For an event time with `d` tied
//! events `D` and risk set `R`, the contribution is
//!
//! ```text
//! Σ_{i∈D} ηᵢ − Σ_{l=0}^{d−1} log( Σ_R e^η − (l/d) Σ_D e^η )
//! ```
//!
//! Exponentials are shifted by `max η` before summation.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Time-sorted index shared by every evaluation on the same responses.
#[derive(Debug, Clone)]
pub struct RiskSets {
    /// Groups of equal time, latest first: `(members, events)`.
    groups: Vec<(Vec<usize>, Vec<usize>)>,
    n: usize,
    n_events: usize,
}

impl RiskSets {
    pub fn new(times: &[f64], events: &[bool]) -> RiskSets {
        let n = times.len();
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| times[b].total_cmp(&times[a]));
        let mut groups = Vec::new();
        let mut k = 0;
        while k < n {
            let t = times[order[k]];
            let mut end = k;
            while end < n && times[order[end]] == t {
                end += 1;
            }
            let members: Vec<usize> = order[k..end].to_vec();
            let ev: Vec<usize> = members.iter().copied().filter(|&i| events[i]).collect();
            groups.push((members, ev));
            k = end;
        }
        RiskSets {
            groups,
            n,
            n_events: events.iter().filter(|&&e| e).count(),
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn n_events(&self) -> usize {
        self.n_events
    }

    /// Supremum of the Efron log partial likelihood: `-Σ ln(d!)` over tied
    /// event groups of size `d`.
    pub fn saturated_loglik(&self) -> f64 {
        -self
            .groups
            .iter()
            .map(|(_, ev)| (1..=ev.len()).map(|k| (k as f64).ln()).sum::<f64>())
            .sum::<f64>()
    }

    /// Log partial likelihood at linear predictor `eta`.
    pub fn loglik(&self, eta: &[f64]) -> f64 {
        let shift = max_of(eta);
        let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
        let mut s0 = 0.0;
        let mut ll = 0.0;
        for (members, ev) in &self.groups {
            for &i in members {
                s0 += w[i];
            }
            if ev.is_empty() {
                continue;
            }
            let d = ev.len() as f64;
            let d0: f64 = ev.iter().map(|&i| w[i]).sum();
            for &i in ev {
                ll += eta[i];
            }
            for l in 0..ev.len() {
                let f = l as f64 / d;
                ll -= (s0 - f * d0).ln() + shift;
            }
        }
        ll
    }

    /// Log-likelihood, score and observed information for `eta = X β`,
    /// `x` column-major (`x[j][i]`).
    pub fn derivatives(&self, x: &[Vec<f64>], eta: &[f64]) -> (f64, DVector<f64>, DMatrix<f64>) {
        // The information is Xᵀ diag(v) X − MᵀM: vᵢ collects wᵢ/den over every
        // Efron term whose risk set holds i, and M has one row per term, the
        // weighted mean of x over that term's risk set.
        let p = x.len();
        let n = self.n;
        let shift = max_of(eta);
        let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
        let mut ll = 0.0;
        let mut score = DVector::zeros(p);
        let mut means = DMatrix::zeros(self.n_events, p);
        let mut row = 0;
        let mut s0 = 0.0;
        let mut s1 = vec![0.0; p];
        let mut d1 = vec![0.0; p];
        // per group: Σ 1/den and Σ (l/d)/den
        let mut c1 = vec![0.0; self.groups.len()];
        let mut c2 = vec![0.0; self.groups.len()];
        for (g, (members, ev)) in self.groups.iter().enumerate() {
            for &i in members {
                s0 += w[i];
                for (acc, col) in s1.iter_mut().zip(x) {
                    *acc += w[i] * col[i];
                }
            }
            if ev.is_empty() {
                continue;
            }
            let d = ev.len() as f64;
            let mut d0 = 0.0;
            d1.iter_mut().for_each(|v| *v = 0.0);
            for &i in ev {
                ll += eta[i];
                d0 += w[i];
                for a in 0..p {
                    score[a] += x[a][i];
                    d1[a] += w[i] * x[a][i];
                }
            }
            for l in 0..ev.len() {
                let f = l as f64 / d;
                let den = s0 - f * d0;
                ll -= den.ln() + shift;
                c1[g] += 1.0 / den;
                c2[g] += f / den;
                for a in 0..p {
                    let m = (s1[a] - f * d1[a]) / den;
                    score[a] -= m;
                    means[(row, a)] = m;
                }
                row += 1;
            }
        }
        let mut v = vec![0.0; n];
        let mut tail = 0.0;
        for (g, (members, ev)) in self.groups.iter().enumerate().rev() {
            tail += c1[g];
            for &i in members {
                v[i] = w[i] * tail;
            }
            for &i in ev {
                v[i] -= w[i] * c2[g];
            }
        }
        let xm = DMatrix::from_fn(n, p, |i, a| x[a][i]);
        let xv = DMatrix::from_fn(n, p, |i, a| v[i] * x[a][i]);
        let mut info = xm.tr_mul(&xv);
        info.gemm_tr(-1.0, &means, &means, 1.0);
        for a in 0..p {
            for b in 0..a {
                info[(b, a)] = info[(a, b)];
            }
        }
        (ll, score, info)
    }

    /// Gradient of the log-likelihood with respect to each `ηᵢ` and the
    /// diagonal of the negative Hessian.
    pub fn eta_derivatives(&self, eta: &[f64]) -> (Vec<f64>, Vec<f64>) {
        let shift = max_of(eta);
        let w: Vec<f64> = eta.iter().map(|e| (e - shift).exp()).collect();
        // per group: (A, B) for risk-set members outside D, (A', B') inside D
        let mut coef = vec![(0.0, 0.0, 0.0, 0.0); self.groups.len()];
        let mut s0 = 0.0;
        for (g, (members, ev)) in self.groups.iter().enumerate() {
            for &i in members {
                s0 += w[i];
            }
            if ev.is_empty() {
                continue;
            }
            let d = ev.len() as f64;
            let d0: f64 = ev.iter().map(|&i| w[i]).sum();
            let c = &mut coef[g];
            for l in 0..ev.len() {
                let f = l as f64 / d;
                let den = s0 - f * d0;
                c.0 += 1.0 / den;
                c.1 += 1.0 / (den * den);
                c.2 += (1.0 - f) / den;
                c.3 += (1.0 - f) * (1.0 - f) / (den * den);
            }
        }
        let mut grad = vec![0.0; self.n];
        let mut hdiag = vec![0.0; self.n];
        // earliest group first: sums over event times <= own time
        let (mut ca, mut cb) = (0.0, 0.0);
        for (g, (members, ev)) in self.groups.iter().enumerate().rev() {
            let c = coef[g];
            for &i in members {
                let is_event = ev.contains(&i);
                let (a, b) = if is_event {
                    (ca + c.2, cb + c.3)
                } else {
                    (ca + c.0, cb + c.1)
                };
                grad[i] = (is_event as u8 as f64) - w[i] * a;
                hdiag[i] = w[i] * a - w[i] * w[i] * b;
            }
            ca += c.0;
            cb += c.1;
        }
        (grad, hdiag)
    }
}

fn max_of(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::NEG_INFINITY, f64::max).clamp(-1e300, 1e300)
}

pub(crate) fn linear_predictor(x: &[Vec<f64>], beta: &[f64], n: usize) -> Vec<f64> {
    let mut eta = vec![0.0; n];
    for (col, &b) in x.iter().zip(beta) {
        if b != 0.0 {
            for (e, v) in eta.iter_mut().zip(col) {
                *e += b * v;
            }
        }
    }
    eta
}

pub(crate) fn require_events(rs: &RiskSets) -> Result<()> {
    if rs.n_events() == 0 {
        Err(Error::NoEvents)
    } else {
        Ok(())
    }
}
