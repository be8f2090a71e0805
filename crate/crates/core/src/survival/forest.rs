//! Random survival forest with log-rank splitting.

use rand::seq::index::sample;
use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cohort::DesignMatrix;
use crate::error::{Error, Result};
use crate::seed::SeedHandle;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ForestParams {
    pub n_trees: usize,
    /// Features tried per node; `None` means `⌈√p⌉`.
    pub mtry: Option<usize>,
    /// Minimum number of (bootstrap) samples in each child.
    pub min_node: usize,
    /// Candidate split points per feature.
    pub n_split: usize,
    pub bootstrap: bool,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 1000,
            mtry: None,
            min_node: 15,
            n_split: 10,
            bootstrap: true,
        }
    }
}

impl ForestParams {
    pub fn validate(&self) -> Result<()> {
        if self.n_trees == 0 || self.min_node == 0 || self.n_split == 0 || self.mtry == Some(0) {
            return Err(Error::invalid("forest hyperparameters must be positive"));
        }
        Ok(())
    }

    pub fn mtry_for(&self, p: usize) -> usize {
        self.mtry
            .unwrap_or_else(|| (p as f64).sqrt().ceil() as usize)
            .clamp(1, p.max(1))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        /// Nelson–Aalen cumulative hazard summed over the training event times.
        mortality: f64,
        size: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn leaf_of(&self, row: &[f64]) -> &Node {
        let mut k = 0;
        loop {
            match &self.nodes[k] {
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => k = if row[*feature] <= *threshold { *left } else { *right },
                leaf => return leaf,
            }
        }
    }

    pub fn predict(&self, row: &[f64]) -> f64 {
        match self.leaf_of(row) {
            Node::Leaf { mortality, .. } => *mortality,
            Node::Split { .. } => unreachable!(),
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes.iter().filter(|n| matches!(n, Node::Leaf { .. })).count()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
    /// Ensemble mortality of every training row.
    pub train_mortality: Vec<f64>,
    /// Out-of-bag mortality; `None` for rows that were in every bag.
    pub oob_mortality: Vec<Option<f64>>,
}

impl Forest {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }

    pub fn predict(&self, rows: &[Vec<f64>]) -> Result<Vec<f64>> {
        rows.iter()
            .map(|r| {
                if r.len() != self.n_features {
                    Err(Error::SchemaMismatch(format!(
                        "forest expects {} features, row has {}",
                        self.n_features,
                        r.len()
                    )))
                } else {
                    Ok(self.predict_row(r))
                }
            })
            .collect()
    }
}

struct Grower<'a> {
    rows: Vec<&'a [f64]>,
    times: Vec<f64>,
    events: Vec<bool>,
    /// Distinct training event times, ascending.
    grid: Vec<f64>,
    params: ForestParams,
    mtry: usize,
}

pub fn rsf_fit(design: &DesignMatrix, params: &ForestParams, seed: SeedHandle) -> Result<Forest> {
    params.validate()?;
    if design.n_events() < 2 {
        return Err(Error::FitFailed("random forest needs at least two events".into()));
    }
    let p = design.n_features();
    let times = design.times();
    let events = design.events();
    let mut grid: Vec<f64> = times.iter().zip(&events).filter(|(_, &e)| e).map(|(t, _)| *t).collect();
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    let grower = Grower {
        rows: design.rows().iter().map(|r| r.features.as_slice()).collect(),
        times,
        events,
        grid,
        params: *params,
        mtry: params.mtry_for(p),
    };
    let n = design.n_rows();
    let grown: Vec<(Tree, Vec<bool>)> = (0..params.n_trees)
        .into_par_iter()
        .map(|t| grower.grow(seed.derive(t as u64)))
        .collect();

    let mut oob_sum = vec![0.0; n];
    let mut oob_cnt = vec![0usize; n];
    for (tree, in_bag) in &grown {
        for i in 0..n {
            if !in_bag[i] {
                oob_sum[i] += tree.predict(grower.rows[i]);
                oob_cnt[i] += 1;
            }
        }
    }
    let trees: Vec<Tree> = grown.into_iter().map(|(t, _)| t).collect();
    let mut forest = Forest {
        trees,
        n_features: p,
        train_mortality: Vec::new(),
        oob_mortality: oob_sum
            .iter()
            .zip(&oob_cnt)
            .map(|(s, &c)| (c > 0).then(|| s / c as f64))
            .collect(),
    };
    forest.train_mortality = grower.rows.iter().map(|r| forest.predict_row(r)).collect();
    Ok(forest)
}

impl Grower<'_> {
    fn grow(&self, seed: SeedHandle) -> (Tree, Vec<bool>) {
        let mut rng = seed.rng();
        let n = self.rows.len();
        let mut in_bag = vec![false; n];
        let sample: Vec<usize> = if self.params.bootstrap {
            (0..n).map(|_| rng.random_range(0..n)).collect()
        } else {
            (0..n).collect()
        };
        for &i in &sample {
            in_bag[i] = true;
        }
        let mut nodes = Vec::new();
        self.build(sample, &mut nodes, &mut rng);
        (Tree { nodes }, in_bag)
    }

    fn build(&self, mut idx: Vec<usize>, nodes: &mut Vec<Node>, rng: &mut impl Rng) -> usize {
        let me = nodes.len();
        nodes.push(Node::Leaf {
            mortality: 0.0,
            size: 0,
        });
        idx.sort_by(|&a, &b| self.times[a].total_cmp(&self.times[b]));
        match self.best_split(&idx, rng) {
            Some((feature, threshold)) => {
                let (l, r): (Vec<usize>, Vec<usize>) = idx.iter().partition(|&&i| self.rows[i][feature] <= threshold);
                let left = self.build(l, nodes, rng);
                let right = self.build(r, nodes, rng);
                nodes[me] = Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                };
            }
            None => {
                nodes[me] = Node::Leaf {
                    mortality: self.mortality(&idx),
                    size: idx.len(),
                };
            }
        }
        me
    }

    /// `idx` sorted by ascending time.
    fn mortality(&self, idx: &[usize]) -> f64 {
        let mut total = 0.0;
        let mut chf = 0.0;
        let mut k = 0;
        let n = idx.len();
        for &g in &self.grid {
            while k < n && self.times[idx[k]] < g {
                k += 1;
            }
            let at_risk = n - k;
            let mut j = k;
            let mut d = 0usize;
            while j < n && self.times[idx[j]] == g {
                d += self.events[idx[j]] as usize;
                j += 1;
            }
            if at_risk > 0 && d > 0 {
                chf += d as f64 / at_risk as f64;
            }
            total += chf;
        }
        total
    }

    fn best_split(&self, idx: &[usize], rng: &mut impl Rng) -> Option<(usize, f64)> {
        let min_node = self.params.min_node;
        if idx.len() < 2 * min_node || !idx.iter().any(|&i| self.events[i]) {
            return None;
        }
        let p = self.rows[0].len();
        if p == 0 {
            return None;
        }
        let mut features: Vec<usize> = sample(rng, p, self.mtry).into_vec();
        features.sort_unstable();
        let mut best: Option<(f64, usize, f64)> = None;
        let mut left = vec![false; idx.len()];
        for f in features {
            let mut values: Vec<f64> = idx.iter().map(|&i| self.rows[i][f]).collect();
            values.sort_by(f64::total_cmp);
            values.dedup();
            if values.len() < 2 {
                continue;
            }
            let usable = values.len() - 1;
            let cand: Vec<f64> = if usable <= self.params.n_split {
                values[..usable].to_vec()
            } else {
                let mut pick = sample(rng, usable, self.params.n_split).into_vec();
                pick.sort_unstable();
                pick.into_iter().map(|k| values[k]).collect()
            };
            for c in cand {
                let mut n_left = 0;
                for (slot, &i) in left.iter_mut().zip(idx) {
                    *slot = self.rows[i][f] <= c;
                    n_left += *slot as usize;
                }
                if n_left < min_node || idx.len() - n_left < min_node {
                    continue;
                }
                let stat = self.logrank(idx, &left);
                if stat > 0.0 && best.is_none_or(|(s, _, _)| stat > s) {
                    best = Some((stat, f, c));
                }
            }
        }
        best.map(|(_, f, c)| (f, c))
    }

    /// Two-sample log-rank chi-square; `idx` sorted by ascending time.
    fn logrank(&self, idx: &[usize], left: &[bool]) -> f64 {
        let n = idx.len();
        let mut y = n as f64;
        let mut yl = left.iter().filter(|&&b| b).count() as f64;
        let mut num = 0.0;
        let mut var = 0.0;
        let mut k = 0;
        while k < n {
            let t = self.times[idx[k]];
            let (mut d, mut dl, mut m, mut ml) = (0.0, 0.0, 0.0, 0.0);
            while k < n && self.times[idx[k]] == t {
                let i = idx[k];
                m += 1.0;
                if left[k] {
                    ml += 1.0;
                }
                if self.events[i] {
                    d += 1.0;
                    if left[k] {
                        dl += 1.0;
                    }
                }
                k += 1;
            }
            if d > 0.0 {
                num += dl - yl * d / y;
                if y > 1.0 {
                    var += (yl / y) * (1.0 - yl / y) * (y - d) / (y - 1.0) * d;
                }
            }
            y -= m;
            yl -= ml;
        }
        if var > 1e-12 {
            num * num / var
        } else {
            0.0
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cohort::SurvivalResponse;
    use crate::evaluation::c_index;
    use rand_distr::StandardNormal;

    fn responses(times: &[f64], events: &[bool]) -> Vec<SurvivalResponse> {
        times
            .iter()
            .zip(events)
            .map(|(&t, &e)| SurvivalResponse::new(t, e).unwrap())
            .collect()
    }

    fn design(rows: Vec<Vec<f64>>, times: &[f64], events: &[bool]) -> DesignMatrix {
        let p = rows[0].len();
        DesignMatrix::from_columns(
            (0..p).map(|j| format!("f{j}")).collect(),
            rows,
            responses(times, events),
        )
        .unwrap()
    }

    fn small(n_trees: usize) -> ForestParams {
        ForestParams {
            n_trees,
            ..Default::default()
        }
    }

    #[test]
    fn monotone_feature_orders_in_sample() {
        let n = 100;
        let rows: Vec<Vec<f64>> = (0..n).map(|i| vec![i as f64]).collect();
        let times: Vec<f64> = (0..n).map(|i| (n - i) as f64).collect();
        let d = design(rows, &times, &vec![true; n]);
        let f = rsf_fit(&d, &small(200), SeedHandle(5)).unwrap();
        let c = c_index(&f.train_mortality, d.responses()).unwrap();
        assert!(c >= 0.9, "{c}");
    }

    #[test]
    fn single_tree_without_bootstrap_is_its_leaf() {
        let mut rng = SeedHandle(9).rng();
        let n = 80;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.sample(StandardNormal), rng.sample(StandardNormal)])
            .collect();
        let times: Vec<f64> = (0..n).map(|_| rng.random_range(0.1..10.0)).collect();
        let events: Vec<bool> = (0..n).map(|_| rng.random_bool(0.7)).collect();
        let d = design(rows.clone(), &times, &events);
        let params = ForestParams {
            n_trees: 1,
            bootstrap: false,
            ..Default::default()
        };
        let f = rsf_fit(&d, &params, SeedHandle(1)).unwrap();
        for r in &rows {
            assert_eq!(f.predict_row(r), f.trees[0].predict(r));
        }
        assert!(f.oob_mortality.iter().all(Option::is_none));
    }

    #[test]
    fn degenerate_response_gives_single_leaves() {
        let rows: Vec<Vec<f64>> = (0..40).map(|i| vec![i as f64]).collect();
        let d = design(rows, &[5.0; 40], &[true; 40]);
        let f = rsf_fit(&d, &small(10), SeedHandle(2)).unwrap();
        assert!(f.trees.iter().all(|t| t.n_leaves() == 1));
    }

    #[test]
    fn monotone_transform_invariance() {
        let mut rng = SeedHandle(11).rng();
        let n = 120;
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| vec![rng.sample::<f64, _>(StandardNormal), rng.random_range(0.0..1.0)])
            .collect();
        let times: Vec<f64> = rows
            .iter()
            .map(|r| (-(r[0] * 0.8)).exp() * rng.random_range(0.05..1.0f64))
            .collect();
        let events = vec![true; n];
        let warped: Vec<Vec<f64>> = rows.iter().map(|r| vec![r[0].exp(), r[1].powi(3) + 2.0]).collect();
        let a = rsf_fit(&design(rows, &times, &events), &small(50), SeedHandle(3)).unwrap();
        let b = rsf_fit(&design(warped, &times, &events), &small(50), SeedHandle(3)).unwrap();
        assert_eq!(a.train_mortality, b.train_mortality);
    }

    #[test]
    fn deterministic_and_stored_mortality_reproduced() {
        let mut rng = SeedHandle(12).rng();
        let rows: Vec<Vec<f64>> = (0..60).map(|_| vec![rng.sample(StandardNormal)]).collect();
        let times: Vec<f64> = (0..60).map(|_| rng.random_range(1.0..5.0)).collect();
        let d = design(rows.clone(), &times, &[true; 60]);
        let a = rsf_fit(&d, &small(30), SeedHandle(4)).unwrap();
        let b = rsf_fit(&d, &small(30), SeedHandle(4)).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.predict(&rows).unwrap(), a.train_mortality);
    }
}
