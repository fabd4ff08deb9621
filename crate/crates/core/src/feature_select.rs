//! Random-forest feature importance and coverage-based parameter selection.
//!
//! Trees are CART regressors grown on bootstrap resamples with a random
//! feature subset per node. Importance is mean decrease in impurity: every
//! split credits its feature with the drop in summed squared error, which
//! already weights the node by its sample count.

use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::param_space::{Configuration, ParameterSpace};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForestParams {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    /// Fraction of features considered at each node.
    pub feature_subsample: f64,
    pub bootstrap: bool,
    pub seed: u64,
}

impl Default for ForestParams {
    fn default() -> Self {
        ForestParams {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 2,
            feature_subsample: 1.0,
            bootstrap: true,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
        /// Decrease in summed squared error achieved by this split.
        gain: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    nodes: Vec<Node>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                    ..
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }

    pub fn split_count(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Split { .. }))
            .count()
    }

    fn accumulate_importance(&self, out: &mut [f64]) {
        for node in &self.nodes {
            if let Node::Split { feature, gain, .. } = node {
                out[*feature] += gain;
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub params: ForestParams,
    pub n_features: usize,
}

impl Forest {
    pub fn predict(&self, row: &[f64]) -> f64 {
        self.trees.iter().map(|t| t.predict(row)).sum::<f64>() / self.trees.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub importances: Vec<f64>,
    /// Feature indices by descending importance; ties break by index.
    pub order: Vec<usize>,
}

/// Fits a regression forest on rows of `x` (already scaled to `[0, 1]`).
pub fn fit_forest(x: &[Vec<f64>], y: &[f64], params: &ForestParams) -> Result<Forest> {
    if x.len() != y.len() {
        return Err(Error::InvalidArgument(format!(
            "{} rows but {} targets",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::InvalidArgument("forest needs at least 2 rows".into()));
    }
    let d = x[0].len();
    if d == 0 || x.iter().any(|r| r.len() != d) {
        return Err(Error::InvalidArgument("rows must share a non-zero width".into()));
    }
    if x.iter().flatten().chain(y).any(|v| !v.is_finite()) {
        return Err(Error::InvalidArgument("non-finite value in training data".into()));
    }
    if params.n_trees == 0 || params.min_leaf == 0 || !(params.feature_subsample > 0.0 && params.feature_subsample <= 1.0) {
        return Err(Error::InvalidArgument(format!("bad forest parameters {params:?}")));
    }
    let data = TrainingData::new(x, y);
    let trees = (0..params.n_trees)
        .into_par_iter()
        .map(|t| {
            let seed = params.seed ^ (t as u64 + 1).wrapping_mul(0x9E37_79B9_7F4A_7C15);
            grow_tree(&data, params, &mut ChaCha8Rng::seed_from_u64(seed))
        })
        .collect();
    Ok(Forest {
        trees,
        params: *params,
        n_features: d,
    })
}

/// Mean decrease in impurity, normalized to sum to one. A forest without a
/// single impurity-reducing split (e.g. constant targets) gets uniform
/// importances.
pub fn importance(forest: &Forest) -> ImportanceRanking {
    let d = forest.n_features;
    let mut totals = vec![0.0; d];
    for tree in &forest.trees {
        tree.accumulate_importance(&mut totals);
    }
    let sum: f64 = totals.iter().sum();
    let importances = if sum > 0.0 {
        totals.iter().map(|v| v / sum).collect()
    } else {
        vec![1.0 / d as f64; d]
    };
    ranking_from(importances)
}

pub fn ranking_from(importances: Vec<f64>) -> ImportanceRanking {
    let mut order: Vec<usize> = (0..importances.len()).collect();
    order.sort_by(|&a, &b| importances[b].total_cmp(&importances[a]).then(a.cmp(&b)));
    ImportanceRanking { importances, order }
}

/// Shortest prefix of the ranking whose importance sum reaches `coverage`.
/// `coverage >= 1` returns every index.
pub fn select_by_coverage(ranking: &ImportanceRanking, coverage: f64) -> Result<Vec<usize>> {
    if !(coverage > 0.0 && coverage <= 1.0) {
        return Err(Error::InvalidArgument(format!("coverage must lie in (0, 1], got {coverage}")));
    }
    if coverage >= 1.0 {
        return Ok(ranking.order.clone());
    }
    let mut acc = 0.0;
    let mut picked = Vec::new();
    for &i in &ranking.order {
        picked.push(i);
        acc += ranking.importances[i];
        if acc >= coverage {
            break;
        }
    }
    Ok(picked)
}

/// Forest inputs for configurations: every parameter in its symmetric unit
/// coordinate (non-tunable parameters are the constant 0.5).
pub fn forest_inputs(space: &ParameterSpace, configs: &[Configuration]) -> Vec<Vec<f64>> {
    configs
        .iter()
        .map(|c| {
            space
                .params()
                .iter()
                .zip(c.values())
                .map(|(p, &v)| p.to_unit(v))
                .collect()
        })
        .collect()
}

struct TrainingData<'a> {
    x: &'a [Vec<f64>],
    y: &'a [f64],
    d: usize,
}

impl<'a> TrainingData<'a> {
    fn new(x: &'a [Vec<f64>], y: &'a [f64]) -> Self {
        TrainingData { x, y, d: x[0].len() }
    }
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    gain: f64,
    left_count: usize,
}

fn grow_tree(data: &TrainingData<'_>, params: &ForestParams, rng: &mut ChaCha8Rng) -> Tree {
    let n = data.y.len();
    let rows: Vec<usize> = if params.bootstrap {
        (0..n).map(|_| rng.gen_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mtry = ((data.d as f64 * params.feature_subsample).round() as usize).clamp(1, data.d);
    let mut nodes = Vec::new();
    grow_node(data, params, rng, rows, 0, mtry, &mut nodes);
    Tree { nodes }
}

fn grow_node(
    data: &TrainingData<'_>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
    mut rows: Vec<usize>,
    depth: usize,
    mtry: usize,
    nodes: &mut Vec<Node>,
) -> usize {
    let id = nodes.len();
    let n = rows.len() as f64;
    let sum: f64 = rows.iter().map(|&r| data.y[r]).sum();
    let mean = sum / n;
    nodes.push(Node::Leaf { value: mean });

    if depth >= params.max_depth || rows.len() < 2 * params.min_leaf {
        return id;
    }
    let sse: f64 = rows.iter().map(|&r| (data.y[r] - mean).powi(2)).sum();
    if sse <= 0.0 {
        return id;
    }
    let Some(best) = best_split(data, params, rng, &mut rows, sse, mtry) else {
        return id;
    };
    // rows left sorted by the winning feature only if it was searched last; re-partition
    let (left_rows, right_rows): (Vec<usize>, Vec<usize>) = rows
        .iter()
        .partition(|&&r| data.x[r][best.feature] <= best.threshold);
    debug_assert_eq!(left_rows.len(), best.left_count);
    let left = grow_node(data, params, rng, left_rows, depth + 1, mtry, nodes);
    let right = grow_node(data, params, rng, right_rows, depth + 1, mtry, nodes);
    nodes[id] = Node::Split {
        feature: best.feature,
        threshold: best.threshold,
        left,
        right,
        gain: best.gain,
    };
    id
}

fn best_split(
    data: &TrainingData<'_>,
    params: &ForestParams,
    rng: &mut ChaCha8Rng,
    rows: &mut [usize],
    sse: f64,
    mtry: usize,
) -> Option<BestSplit> {
    let n = rows.len();
    let total_sum: f64 = rows.iter().map(|&r| data.y[r]).sum();
    let total_sq: f64 = rows.iter().map(|&r| data.y[r] * data.y[r]).sum();
    let mut best: Option<BestSplit> = None;
    let mut features: Vec<usize> = index::sample(rng, data.d, mtry).into_vec();
    features.sort_unstable();
    for feature in features {
        rows.sort_by(|&a, &b| data.x[a][feature].total_cmp(&data.x[b][feature]));
        let mut left_sum = 0.0;
        let mut left_sq = 0.0;
        for i in 0..n - 1 {
            let y = data.y[rows[i]];
            left_sum += y;
            left_sq += y * y;
            let left_count = i + 1;
            let right_count = n - left_count;
            if left_count < params.min_leaf || right_count < params.min_leaf {
                continue;
            }
            let here = data.x[rows[i]][feature];
            let next = data.x[rows[i + 1]][feature];
            if here >= next {
                continue;
            }
            let right_sum = total_sum - left_sum;
            let right_sq = total_sq - left_sq;
            let left_sse = (left_sq - left_sum * left_sum / left_count as f64).max(0.0);
            let right_sse = (right_sq - right_sum * right_sum / right_count as f64).max(0.0);
            let gain = sse - left_sse - right_sse;
            if gain > 1e-12 * sse && best.as_ref().map_or(true, |b| gain > b.gain) {
                best = Some(BestSplit {
                    feature,
                    threshold: 0.5 * (here + next),
                    gain,
                    left_count,
                });
            }
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn synthetic(n: usize, d: usize, seed: u64, f: impl Fn(&[f64], &mut ChaCha8Rng) -> f64) -> (Vec<Vec<f64>>, Vec<f64>) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let x: Vec<Vec<f64>> = (0..n).map(|_| (0..d).map(|_| rng.gen()).collect()).collect();
        let y = x.iter().map(|r| f(r, &mut rng)).collect();
        (x, y)
    }

    #[test]
    fn two_points_one_split_exact() {
        let x = vec![vec![0.2], vec![0.9]];
        let y = vec![3.0, -1.0];
        let params = ForestParams {
            n_trees: 1,
            max_depth: 1,
            min_leaf: 1,
            feature_subsample: 1.0,
            bootstrap: false,
            seed: 1,
        };
        let forest = fit_forest(&x, &y, &params).unwrap();
        assert_eq!(forest.trees[0].split_count(), 1);
        assert_eq!(forest.predict(&x[0]), 3.0);
        assert_eq!(forest.predict(&x[1]), -1.0);
        assert_eq!(importance(&forest).importances, vec![1.0]);
    }

    #[test]
    fn constant_target_gives_uniform_importance() {
        let (x, _) = synthetic(30, 4, 2, |_, _| 0.0);
        let y = vec![5.0; 30];
        let forest = fit_forest(&x, &y, &ForestParams { n_trees: 10, ..Default::default() }).unwrap();
        assert!(forest.trees.iter().all(|t| t.split_count() == 0));
        let r = importance(&forest);
        assert!(r.importances.iter().all(|&v| v == 0.25));
        assert_eq!(r.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn single_feature_has_all_importance() {
        let (x, y) = synthetic(50, 1, 3, |r, _| r[0] * r[0]);
        let forest = fit_forest(&x, &y, &ForestParams { n_trees: 8, ..Default::default() }).unwrap();
        assert_eq!(importance(&forest).importances, vec![1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(fit_forest(&[vec![0.1]], &[1.0], &ForestParams::default()).is_err());
        assert!(fit_forest(&[vec![0.1], vec![0.2, 0.3]], &[1.0, 2.0], &ForestParams::default()).is_err());
        assert!(fit_forest(&[vec![0.1], vec![f64::NAN]], &[1.0, 2.0], &ForestParams::default()).is_err());
    }

    #[test]
    fn coverage_prefix_examples() {
        let r = ranking_from(vec![0.05, 0.5, 0.15, 0.3]);
        assert_eq!(r.order, vec![1, 3, 2, 0]);
        assert_eq!(select_by_coverage(&r, 0.9).unwrap(), vec![1, 3, 2]);
        assert_eq!(select_by_coverage(&r, 1.0).unwrap(), vec![1, 3, 2, 0]);
        assert_eq!(select_by_coverage(&r, 0.5).unwrap(), vec![1]);
        assert!(select_by_coverage(&r, 0.0).is_err());
        assert!(select_by_coverage(&r, 1.5).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        let r = ranking_from(vec![0.25, 0.25, 0.25, 0.25]);
        assert_eq!(r.order, vec![0, 1, 2, 3]);
    }

    #[test]
    fn deterministic_for_fixed_seed() {
        let (x, y) = synthetic(80, 6, 4, |r, g| r[1] + 0.1 * g.gen::<f64>());
        let p = ForestParams { n_trees: 20, seed: 9, ..Default::default() };
        assert_eq!(fit_forest(&x, &y, &p).unwrap(), fit_forest(&x, &y, &p).unwrap());
    }
}
