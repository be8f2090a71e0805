//! Concordance, Kaplan–Meier, log-rank and Cohen's d.

use std::fmt;
use std::io::Write;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use statrs::distribution::{ChiSquared, ContinuousCDF};

use crate::cohort::SurvivalResponse;
use crate::error::{Error, Result};

/// Harrell's concordance index.
///
/// A pair is comparable when the shorter of two distinct times is an
/// observed event; equal times are never comparable. Concordant pairs
/// score 1, tied risks 0.5. Runs in O(n log n).
pub fn c_index(risks: &[f64], responses: &[SurvivalResponse]) -> Result<f64> {
    let counts = concordance_counts(risks, responses)?;
    counts.ratio().ok_or(Error::NoComparablePairs)
}

/// Pair counts behind [`c_index`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct ConcordanceCounts {
    pub concordant: u64,
    pub tied_risk: u64,
    pub comparable: u64,
}

impl ConcordanceCounts {
    pub fn ratio(&self) -> Option<f64> {
        if self.comparable == 0 {
            None
        } else {
            Some((2 * self.concordant + self.tied_risk) as f64 / (2 * self.comparable) as f64)
        }
    }
}

pub fn concordance_counts(risks: &[f64], responses: &[SurvivalResponse]) -> Result<ConcordanceCounts> {
    if risks.len() != responses.len() {
        return Err(Error::invalid(format!(
            "{} risks for {} responses",
            risks.len(),
            responses.len()
        )));
    }
    if risks.iter().any(|r| r.is_nan()) {
        return Err(Error::invalid("NaN risk score"));
    }
    let n = risks.len();
    // dense ranks of the risk values
    let mut by_risk: Vec<usize> = (0..n).collect();
    by_risk.sort_by(|&a, &b| risks[a].total_cmp(&risks[b]));
    let mut rank = vec![0usize; n];
    let mut r = 0;
    for k in 0..n {
        if k > 0 && risks[by_risk[k]] != risks[by_risk[k - 1]] {
            r += 1;
        }
        rank[by_risk[k]] = r;
    }
    let mut tree = Fenwick::new(r + 1);

    let mut by_time: Vec<usize> = (0..n).collect();
    by_time.sort_by(|&a, &b| responses[b].time().total_cmp(&responses[a].time()));
    let mut counts = ConcordanceCounts::default();
    let mut inserted = 0u64;
    let mut k = 0;
    while k < n {
        let t = responses[by_time[k]].time();
        let mut end = k;
        while end < n && responses[by_time[end]].time() == t {
            end += 1;
        }
        for &i in &by_time[k..end] {
            if responses[i].event() {
                let below = tree.prefix(rank[i]);
                let at = tree.prefix(rank[i] + 1) - below;
                counts.concordant += below;
                counts.tied_risk += at;
                counts.comparable += inserted;
            }
        }
        for &i in &by_time[k..end] {
            tree.add(rank[i]);
            inserted += 1;
        }
        k = end;
    }
    Ok(counts)
}

struct Fenwick {
    tree: Vec<u64>,
}

impl Fenwick {
    fn new(n: usize) -> Self {
        Fenwick { tree: vec![0; n + 1] }
    }

    fn add(&mut self, idx: usize) {
        let mut i = idx + 1;
        while i < self.tree.len() {
            self.tree[i] += 1;
            i += i & i.wrapping_neg();
        }
    }

    /// Count of inserted ranks `< idx`.
    fn prefix(&self, idx: usize) -> u64 {
        let mut s = 0;
        let mut i = idx;
        while i > 0 {
            s += self.tree[i];
            i -= i & i.wrapping_neg();
        }
        s
    }
}

/// Product-limit survival estimate at the distinct event times.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KmCurve {
    pub event_times: Vec<f64>,
    pub at_risk: Vec<usize>,
    pub n_events: Vec<usize>,
    pub survival: Vec<f64>,
}

impl KmCurve {
    /// Survival just after time `t` (right-continuous step function).
    pub fn survival_at(&self, t: f64) -> f64 {
        let k = self.event_times.partition_point(|&s| s <= t);
        if k == 0 {
            1.0
        } else {
            self.survival[k - 1]
        }
    }

    /// Writes `group,time,at_risk,events,survival` rows.
    pub fn write_csv_rows<W: Write>(&self, group: &str, w: &mut csv::Writer<W>) -> Result<()> {
        for i in 0..self.event_times.len() {
            w.write_record([
                group.to_string(),
                self.event_times[i].to_string(),
                self.at_risk[i].to_string(),
                self.n_events[i].to_string(),
                self.survival[i].to_string(),
            ])?;
        }
        Ok(())
    }
}

pub const KM_CSV_HEADER: [&str; 5] = ["group", "time", "at_risk", "events", "survival"];

pub fn kaplan_meier(responses: &[SurvivalResponse]) -> KmCurve {
    let mut sorted: Vec<SurvivalResponse> = responses.to_vec();
    sorted.sort_by(|a, b| a.time().total_cmp(&b.time()));
    let n = sorted.len();
    let mut curve = KmCurve {
        event_times: vec![],
        at_risk: vec![],
        n_events: vec![],
        survival: vec![],
    };
    // Between censorings the product telescopes to n_after / n_start; the
    // survival is kept as a product of such block ratios.
    let mut completed = 1.0;
    let mut block_start = n;
    let mut last_after = n;
    let mut k = 0;
    while k < n {
        let t = sorted[k].time();
        let at_risk = n - k;
        let mut end = k;
        let mut d = 0;
        while end < n && sorted[end].time() == t {
            d += sorted[end].event() as usize;
            end += 1;
        }
        if d > 0 {
            if at_risk < last_after {
                completed *= last_after as f64 / block_start as f64;
                block_start = at_risk;
            }
            let after = at_risk - d;
            curve.event_times.push(t);
            curve.at_risk.push(at_risk);
            curve.n_events.push(d);
            curve.survival.push(completed * (after as f64 / block_start as f64));
            last_after = after;
        }
        k = end;
    }
    curve
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LogRank {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
}

/// K-sample log-rank test over the pooled distinct event times.
pub fn logrank_test(groups: &[Vec<SurvivalResponse>]) -> Result<LogRank> {
    if groups.len() < 2 {
        return Err(Error::invalid("log-rank test needs at least two groups"));
    }
    if groups.iter().any(Vec::is_empty) {
        return Err(Error::invalid("log-rank groups must be non-empty"));
    }
    let k = groups.len();
    let mut pooled: Vec<(f64, bool, usize)> = groups
        .iter()
        .enumerate()
        .flat_map(|(g, rs)| rs.iter().map(move |r| (r.time(), r.event(), g)))
        .collect();
    if !pooled.iter().any(|x| x.1) {
        return Err(Error::NoEvents);
    }
    pooled.sort_by(|a, b| a.0.total_cmp(&b.0));

    let mut at_risk: Vec<f64> = groups.iter().map(|g| g.len() as f64).collect();
    let mut o_minus_e = vec![0.0; k];
    let mut v = vec![0.0; k * k];
    let mut i = 0;
    while i < pooled.len() {
        let t = pooled[i].0;
        let mut end = i;
        let mut deaths = vec![0.0; k];
        let mut leaving = vec![0.0; k];
        while end < pooled.len() && pooled[end].0 == t {
            let (_, e, g) = pooled[end];
            if e {
                deaths[g] += 1.0;
            }
            leaving[g] += 1.0;
            end += 1;
        }
        let d: f64 = deaths.iter().sum();
        let n: f64 = at_risk.iter().sum();
        if d > 0.0 {
            for g in 0..k {
                o_minus_e[g] += deaths[g] - (d * at_risk[g]) / n;
            }
            if n > 1.0 {
                let c = d * (n - d) / (n * n * (n - 1.0));
                for g in 0..k {
                    for h in 0..k {
                        let delta = if g == h { n } else { 0.0 };
                        v[g * k + h] += c * at_risk[g] * (delta - at_risk[h]);
                    }
                }
            }
        }
        for g in 0..k {
            at_risk[g] -= leaving[g];
        }
        i = end;
    }

    let m = k - 1;
    let u = DVector::from_iterator(m, o_minus_e[..m].iter().copied());
    let statistic = if u.iter().all(|&x| x == 0.0) {
        0.0
    } else {
        let vm = DMatrix::from_fn(m, m, |a, b| v[a * k + b]);
        let inv = vm
            .clone()
            .cholesky()
            .map(|c| c.inverse())
            .or_else(|| vm.pseudo_inverse(1e-12).ok())
            .ok_or_else(|| Error::FitFailed("singular log-rank covariance".into()))?;
        (u.transpose() * inv * &u)[(0, 0)].max(0.0)
    };
    Ok(LogRank {
        statistic,
        df: m,
        p_value: chi_square_sf(statistic, m as f64),
    })
}

/// Upper tail of the chi-square distribution.
pub fn chi_square_sf(x: f64, df: f64) -> f64 {
    if x <= 0.0 {
        return 1.0;
    }
    ChiSquared::new(df).map(|d| d.sf(x)).unwrap_or(f64::NAN)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EffectBand {
    Negligible,
    Small,
    Medium,
    Large,
}

impl EffectBand {
    /// |d| < 0.2 negligible, < 0.5 small, < 0.8 medium, otherwise large.
    pub fn of(d: f64) -> EffectBand {
        let a = d.abs();
        if a < 0.2 {
            EffectBand::Negligible
        } else if a < 0.5 {
            EffectBand::Small
        } else if a < 0.8 {
            EffectBand::Medium
        } else {
            EffectBand::Large
        }
    }

    pub fn stars(self) -> &'static str {
        match self {
            EffectBand::Negligible => "",
            EffectBand::Small => "*",
            EffectBand::Medium => "**",
            EffectBand::Large => "***",
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            EffectBand::Negligible => "negligible",
            EffectBand::Small => "small",
            EffectBand::Medium => "medium",
            EffectBand::Large => "large",
        }
    }
}

impl fmt::Display for EffectBand {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CohensD {
    pub d: f64,
    pub band: EffectBand,
}

/// Standardized mean difference `(mean(a) - mean(b)) / pooled_sd`.
pub fn cohens_d(a: &[f64], b: &[f64]) -> Result<CohensD> {
    if a.len() < 2 || b.len() < 2 {
        return Err(Error::invalid("Cohen's d needs at least two values per sample"));
    }
    let (ma, va) = mean_var(a);
    let (mb, vb) = mean_var(b);
    let (na, nb) = (a.len() as f64, b.len() as f64);
    let pooled = (((na - 1.0) * va + (nb - 1.0) * vb) / (na + nb - 2.0)).sqrt();
    let diff = ma - mb;
    let d = if pooled > 0.0 {
        diff / pooled
    } else if diff == 0.0 {
        0.0
    } else {
        return Err(Error::invalid("pooled standard deviation is zero but means differ"));
    };
    Ok(CohensD {
        d,
        band: EffectBand::of(d),
    })
}

/// Mean and sample (n-1) variance.
pub fn mean_var(x: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let m = x.iter().sum::<f64>() / n;
    let v = x.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (n - 1.0);
    (m, v)
}

pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut s = values.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    Some(if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;

    fn rs(times: &[f64], events: &[bool]) -> Vec<SurvivalResponse> {
        times
            .iter()
            .zip(events)
            .map(|(&t, &e)| SurvivalResponse::new(t, e).unwrap())
            .collect()
    }

    fn brute(risks: &[f64], y: &[SurvivalResponse]) -> Option<f64> {
        let (mut num, mut den) = (0u64, 0u64);
        for i in 0..y.len() {
            for j in 0..y.len() {
                if y[i].time() < y[j].time() && y[i].event() {
                    den += 2;
                    num += if risks[i] > risks[j] {
                        2
                    } else if risks[i] == risks[j] {
                        1
                    } else {
                        0
                    };
                }
            }
        }
        (den > 0).then(|| num as f64 / den as f64)
    }

    #[test]
    fn c_index_examples() {
        let y = rs(&[1.0, 2.0, 3.0], &[true; 3]);
        assert_eq!(c_index(&[3.0, 2.0, 1.0], &y).unwrap(), 1.0);
        assert_eq!(c_index(&[1.0, 1.0, 1.0], &y).unwrap(), 0.5);
        let y = rs(&[1.0, 2.0, 3.0, 4.0], &[true, false, true, false]);
        // comparable pairs: (1,2) (1,3) (1,4) (3,4); only (3,4) is discordant
        assert_eq!(brute(&[4.0, 3.0, 1.0, 2.0], &y), Some(0.75));
        assert_eq!(c_index(&[4.0, 3.0, 1.0, 2.0], &y).unwrap(), 0.75);
        // swapping the risks of patients 3 and 4 fixes the last pair
        assert_eq!(brute(&[4.0, 3.0, 2.0, 1.0], &y), Some(1.0));
        assert_eq!(c_index(&[4.0, 3.0, 2.0, 1.0], &y).unwrap(), 1.0);
    }

    #[test]
    fn c_index_errors() {
        let y = rs(&[1.0, 2.0], &[false, false]);
        assert!(matches!(c_index(&[1.0, 2.0], &y), Err(Error::NoComparablePairs)));
        let y = rs(&[2.0, 2.0], &[true, true]);
        assert!(matches!(c_index(&[1.0, 2.0], &y), Err(Error::NoComparablePairs)));
        assert!(c_index(&[1.0], &y).is_err());
    }

    #[test]
    fn km_examples() {
        let k = kaplan_meier(&rs(&[1.0, 2.0, 3.0], &[true; 3]));
        assert_eq!(k.survival, vec![2.0 / 3.0, 1.0 / 3.0, 0.0]);
        assert_eq!(k.at_risk, vec![3, 2, 1]);
        let k = kaplan_meier(&rs(&[1.0, 2.0, 3.0], &[true, false, true]));
        assert_eq!(k.event_times, vec![1.0, 3.0]);
        assert_eq!(k.survival, vec![2.0 / 3.0, 0.0]);
        assert_eq!(k.survival_at(2.5), 2.0 / 3.0);
        let k = kaplan_meier(&rs(&[1.0, 2.0], &[false, false]));
        assert!(k.event_times.is_empty());
        assert_eq!(k.survival_at(10.0), 1.0);
    }

    #[test]
    fn km_matches_textbook_product() {
        let y = rs(
            &[1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 5.0, 6.0, 7.0],
            &[true, true, false, false, true, true, false, true, true],
        );
        let k = kaplan_meier(&y);
        // direct product-limit by hand
        let expect = [
            8.0 / 9.0,
            8.0 / 9.0 * 7.0 / 8.0,
            8.0 / 9.0 * 7.0 / 8.0 * 3.0 / 5.0,
            8.0 / 9.0 * 7.0 / 8.0 * 3.0 / 5.0 * 1.0 / 2.0,
            0.0,
        ];
        for (a, b) in k.survival.iter().zip(expect) {
            assert_relative_eq!(*a, b, max_relative = 1e-14);
        }
        assert_eq!(k.at_risk, vec![9, 8, 5, 2, 1]);
    }

    #[test]
    fn logrank_identical_groups() {
        let g = rs(&[1.0, 3.0, 4.0, 6.0, 8.0], &[true, false, true, true, false]);
        let lr = logrank_test(&[g.clone(), g]).unwrap();
        assert_eq!(lr.statistic, 0.0);
        assert_eq!(lr.p_value, 1.0);
        assert_eq!(lr.df, 1);
    }

    #[test]
    fn logrank_two_sample_reference() {
        // hand computation: O1 - E1 = 1 - 1.75 = -0.75 ... see below
        let a = rs(&[1.0, 2.0, 3.0], &[true; 3]);
        let b = rs(&[4.0, 5.0, 6.0], &[true; 3]);
        let lr = logrank_test(&[a.clone(), b.clone()]).unwrap();
        // expected events for group a over times 1..6 with risk sets
        // (3,3),(2,3),(1,3),(0,3),.. : E = 3/6 + 2/5 + 1/4 = 1.15
        // V = 9/36 + 6/25 + 3/16
        let oe = 3.0 - (0.5 + 0.4 + 0.25);
        let v = 9.0 / 36.0 + 6.0 / 25.0 + 3.0 / 16.0;
        assert_relative_eq!(lr.statistic, oe * oe / v, max_relative = 1e-12);
        let swapped = logrank_test(&[b, a]).unwrap();
        assert_relative_eq!(swapped.statistic, lr.statistic, max_relative = 1e-12);
    }

    #[test]
    fn logrank_errors() {
        let g = rs(&[1.0], &[true]);
        assert!(logrank_test(std::slice::from_ref(&g)).is_err());
        assert!(logrank_test(&[g, vec![]]).is_err());
        let c = rs(&[1.0], &[false]);
        assert!(matches!(logrank_test(&[c.clone(), c]), Err(Error::NoEvents)));
    }

    #[test]
    fn chi_square_tail_values() {
        // reference values: 1 - pchisq(3.841459, 1) = 0.05; pchisq(x, 2) = 1 - exp(-x/2)
        assert_relative_eq!(chi_square_sf(3.841458820694124, 1.0), 0.05, max_relative = 1e-9);
        assert_relative_eq!(chi_square_sf(4.0, 2.0), (-2.0f64).exp(), max_relative = 1e-10);
    }

    #[test]
    fn cohens_d_examples() {
        let a = [1.0, 2.0, 3.0];
        assert_eq!(cohens_d(&a, &a).unwrap().d, 0.0);
        assert_eq!(cohens_d(&a, &a).unwrap().band, EffectBand::Negligible);
        let c = cohens_d(&a, &[2.0, 3.0, 4.0]).unwrap();
        assert_eq!(c.d, -1.0);
        assert_eq!(c.band, EffectBand::Large);
        assert_eq!(cohens_d(&[5.0, 5.0], &[5.0, 5.0]).unwrap().d, 0.0);
        assert!(cohens_d(&[5.0, 5.0], &[4.0, 4.0]).is_err());
        assert!(cohens_d(&[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn effect_band_cuts() {
        assert_eq!(EffectBand::of(0.1999), EffectBand::Negligible);
        assert_eq!(EffectBand::of(-0.2), EffectBand::Small);
        assert_eq!(EffectBand::of(0.4999), EffectBand::Small);
        assert_eq!(EffectBand::of(0.5), EffectBand::Medium);
        assert_eq!(EffectBand::of(0.7999), EffectBand::Medium);
        assert_eq!(EffectBand::of(-0.8), EffectBand::Large);
    }

    fn instance() -> impl Strategy<Value = (Vec<f64>, Vec<SurvivalResponse>)> {
        (2usize..30).prop_flat_map(|n| {
            (
                prop::collection::vec(0i32..6, n),
                prop::collection::vec(1i32..12, n),
                prop::collection::vec(any::<bool>(), n),
            )
                .prop_map(|(r, t, e)| {
                    let risks = r.into_iter().map(f64::from).collect();
                    let ys = t
                        .into_iter()
                        .zip(e)
                        .map(|(t, e)| SurvivalResponse::new(f64::from(t), e).unwrap())
                        .collect();
                    (risks, ys)
                })
        })
    }

    proptest! {
        #[test]
        fn c_index_matches_brute_force((risks, y) in instance()) {
            prop_assert_eq!(c_index(&risks, &y).ok(), brute(&risks, &y));
        }

        #[test]
        fn c_index_complement_and_monotone(
            t in prop::collection::vec(0.1f64..10.0, 3..25),
            seed in 0u64..10_000,
        ) {
            use rand::Rng;
            let mut rng = crate::SeedHandle(seed).rng();
            let y: Vec<SurvivalResponse> = t.iter()
                .map(|&t| SurvivalResponse::new(t, rng.random_bool(0.7)).unwrap())
                .collect();
            let risks: Vec<f64> = (0..t.len()).map(|_| rng.random::<f64>()).collect();
            if let Ok(c) = c_index(&risks, &y) {
                let neg: Vec<f64> = risks.iter().map(|r| -r).collect();
                prop_assert!((c + c_index(&neg, &y).unwrap() - 1.0).abs() < 1e-12);
                let tr: Vec<f64> = risks.iter().map(|r| (3.0 * r).exp() + r).collect();
                prop_assert_eq!(c_index(&tr, &y).unwrap(), c);
            }
        }

        #[test]
        fn km_without_censoring_is_empirical(t in prop::collection::vec(1u32..20, 1..40)) {
            let y: Vec<SurvivalResponse> = t.iter()
                .map(|&v| SurvivalResponse::new(f64::from(v), true).unwrap())
                .collect();
            let k = kaplan_meier(&y);
            let n = y.len() as f64;
            for (i, &s) in k.event_times.iter().enumerate() {
                let survivors = y.iter().filter(|r| r.time() > s).count() as f64;
                prop_assert_eq!(k.survival[i], survivors / n);
            }
        }

        #[test]
        fn logrank_time_rescaling(
            a in prop::collection::vec((1u32..30, any::<bool>()), 2..20),
            b in prop::collection::vec((1u32..30, any::<bool>()), 2..20),
            scale in 0.01f64..100.0,
        ) {
            let mk = |v: &Vec<(u32, bool)>, s: f64| v.iter()
                .map(|&(t, e)| SurvivalResponse::new(f64::from(t) * s, e).unwrap())
                .collect::<Vec<_>>();
            if let Ok(x) = logrank_test(&[mk(&a, 1.0), mk(&b, 1.0)]) {
                let y = logrank_test(&[mk(&a, scale), mk(&b, scale)]).unwrap();
                prop_assert!((x.statistic - y.statistic).abs() <= 1e-9 * x.statistic.max(1.0));
            }
        }
    }
}
