//! Inter-lesion dissimilarity and the per-patient heterogeneity index.
//!
//! Five dissimilarities between two feature vectors `x`, `y` of length `n`:
//!
//! | metric    | value                                             |
//! |-----------|---------------------------------------------------|
//! | Canberra  | Σ \|xᵢ − yᵢ\| / (\|xᵢ\| + \|yᵢ\|), 0/0 terms are 0 |
//! | Euclidean | (Σ (xᵢ − yᵢ)²)^½                                   |
//! | Minkowski | (Σ \|xᵢ − yᵢ\|ᵖ)^(1/p)                             |
//! | Kendall   | 1 − \|τₐ\|                                         |
//! | Spearman  | 1 − \|ρ\| on average ranks                         |
//!
//! A patient's heterogeneity index is 0 for a single lesion and the mean
//! dissimilarity over all unordered lesion pairs otherwise.

use serde::{Deserialize, Serialize};

use crate::cohort::Patient;
use crate::error::{Error, Result};

pub const DEFAULT_MINKOWSKI_P: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum Metric {
    Canberra,
    Euclidean,
    Minkowski { p: f64 },
    Kendall,
    Spearman,
}

impl Metric {
    pub fn minkowski(p: f64) -> Result<Metric> {
        if !(p.is_finite() && p > 0.0) {
            return Err(Error::invalid(format!(
                "Minkowski order must be finite and > 0, got {p}"
            )));
        }
        Ok(Metric::Minkowski { p })
    }

    /// The five metrics in canonical order, with Minkowski order `p`.
    pub fn all(p: f64) -> Result<Vec<Metric>> {
        Ok(vec![
            Metric::Canberra,
            Metric::Euclidean,
            Metric::minkowski(p)?,
            Metric::Kendall,
            Metric::Spearman,
        ])
    }

    pub fn name(&self) -> &'static str {
        match self {
            Metric::Canberra => "canberra",
            Metric::Euclidean => "euclidean",
            Metric::Minkowski { .. } => "minkowski",
            Metric::Kendall => "kendall",
            Metric::Spearman => "spearman",
        }
    }

    fn is_rank_based(&self) -> bool {
        matches!(self, Metric::Kendall | Metric::Spearman)
    }
}

pub fn pairwise_distance(x: &[f64], y: &[f64], metric: Metric) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::invalid(format!(
            "vectors differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    let min_len = if metric.is_rank_based() { 2 } else { 1 };
    if x.len() < min_len {
        return Err(Error::invalid(format!(
            "{} distance needs vectors of length >= {min_len}",
            metric.name()
        )));
    }
    if x.iter().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite coordinate"));
    }
    let d = match metric {
        Metric::Canberra => x
            .iter()
            .zip(y)
            .map(|(a, b)| {
                let den = a.abs() + b.abs();
                if den == 0.0 {
                    0.0
                } else {
                    (a - b).abs() / den
                }
            })
            .sum(),
        Metric::Euclidean => x.iter().zip(y).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt(),
        Metric::Minkowski { p } => {
            if !(p.is_finite() && p > 0.0) {
                return Err(Error::invalid(format!("invalid Minkowski order {p}")));
            }
            x.iter()
                .zip(y)
                .map(|(a, b)| (a - b).abs().powf(p))
                .sum::<f64>()
                .powf(1.0 / p)
        }
        Metric::Kendall => 1.0 - kendall_tau_a(x, y).abs(),
        Metric::Spearman => 1.0 - spearman_rho(x, y).abs(),
    };
    Ok(d.max(0.0))
}

/// Kendall's τₐ by direct pair enumeration.
pub fn kendall_tau_a(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len();
    let mut s: i64 = 0;
    for i in 0..n {
        for j in (i + 1)..n {
            s += (sign(x[i] - x[j]) * sign(y[i] - y[j])) as i64;
        }
    }
    2.0 * s as f64 / (n as f64 * (n as f64 - 1.0))
}

/// Spearman's ρ with average ranks; 0 when either vector is constant.
pub fn spearman_rho(x: &[f64], y: &[f64]) -> f64 {
    let (rx, ry) = (average_ranks(x), average_ranks(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return 0.0;
    }
    (sxy / (sxx * syy).sqrt()).clamp(-1.0, 1.0)
}

/// 1-based ranks, ties receive the mean of the ranks they span.
pub fn average_ranks(v: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..v.len()).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; v.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && v[idx[j + 1]] == v[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

fn sign(v: f64) -> i32 {
    if v > 0.0 {
        1
    } else if v < 0.0 {
        -1
    } else {
        0
    }
}

pub fn patient_heterogeneity(patient: &Patient, metric: Metric) -> Result<f64> {
    let lesions = patient.lesions();
    if lesions.len() < 2 {
        return Ok(0.0);
    }
    let mut total = 0.0;
    let mut pairs = 0usize;
    for i in 0..lesions.len() {
        for j in (i + 1)..lesions.len() {
            total += pairwise_distance(lesions[i].features(), lesions[j].features(), metric)?;
            pairs += 1;
        }
    }
    Ok(total / pairs as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Tercile {
    Low,
    Mid,
    High,
}

impl Tercile {
    pub fn name(self) -> &'static str {
        match self {
            Tercile::Low => "low",
            Tercile::Mid => "mid",
            Tercile::High => "high",
        }
    }
}

/// Linear-interpolation empirical quantile (R type 7) of sorted data.
pub fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let h = (sorted.len() - 1) as f64 * q;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(sorted.len() - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

/// Labels values by the 1/3 and 2/3 empirical quantiles. A value equal to
/// a boundary goes to the lower group.
pub fn tercile_stratify(values: &[f64]) -> Result<Vec<Tercile>> {
    if values.len() < 3 {
        return Err(Error::invalid("tercile stratification needs at least 3 values"));
    }
    if values.iter().any(|v| !v.is_finite()) {
        return Err(Error::invalid("non-finite value"));
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let q1 = quantile_sorted(&sorted, 1.0 / 3.0);
    let q2 = quantile_sorted(&sorted, 2.0 / 3.0);
    Ok(values
        .iter()
        .map(|&v| {
            if v <= q1 {
                Tercile::Low
            } else if v <= q2 {
                Tercile::Mid
            } else {
                Tercile::High
            }
        })
        .collect())
}

/// ROI-count groups: 1, 2–3, 4+.
pub fn roi_count_group(n_lesions: usize) -> &'static str {
    match n_lesions {
        0 | 1 => "1",
        2 | 3 => "2-3",
        _ => "4+",
    }
}
