//! Bagged regression trees with variance-reduction splits.

use nalgebra::DMatrix;
use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ForestConfig {
    pub n_trees: usize,
    pub max_depth: usize,
    pub min_leaf: usize,
    pub seed: u64,
    /// Features tried per split; `None` means max(1, d/3).
    pub max_features: Option<usize>,
    /// Draw a bootstrap sample per tree; off means every tree sees all rows.
    pub bootstrap: bool,
}

impl Default for ForestConfig {
    fn default() -> Self {
        ForestConfig {
            n_trees: 100,
            max_depth: 12,
            min_leaf: 5,
            seed: 0,
            max_features: None,
            bootstrap: true,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Node {
    Leaf(f64),
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<Node>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf(v) => return *v,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => at = if row[*feature] <= *threshold { *left } else { *right },
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Forest {
    pub trees: Vec<Tree>,
    pub n_features: usize,
}

struct Builder<'a> {
    x: &'a DMatrix<f64>,
    y: &'a [f64],
    cfg: &'a ForestConfig,
    mtry: usize,
    nodes: Vec<Node>,
}

struct BestSplit {
    feature: usize,
    threshold: f64,
    score: f64,
}

impl Builder<'_> {
    fn leaf(&mut self, rows: &[usize]) -> usize {
        let mean = rows.iter().map(|&i| self.y[i]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf(mean));
        self.nodes.len() - 1
    }

    fn build(&mut self, rows: &mut [usize], depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let first = self.y[rows[0]];
        let pure = rows.iter().all(|&i| self.y[i] == first);
        if pure || depth >= self.cfg.max_depth || rows.len() < 2 * self.cfg.min_leaf {
            return self.leaf(rows);
        }

        let d = self.x.ncols();
        let mut features = sample(rng, d, self.mtry).into_vec();
        features.sort_unstable();

        let Some(best) = self.best_split(rows, &features) else {
            return self.leaf(rows);
        };

        let slot = self.nodes.len();
        self.nodes.push(Node::Leaf(f64::NAN));
        let mid = partition_rows(rows, |&i| self.x[(i, best.feature)] <= best.threshold);
        let (left_rows, right_rows) = rows.split_at_mut(mid);
        let left = self.build(left_rows, depth + 1, rng);
        let right = self.build(right_rows, depth + 1, rng);
        self.nodes[slot] = Node::Split {
            feature: best.feature,
            threshold: best.threshold,
            left,
            right,
        };
        slot
    }

    /// Maximizes sum_L^2/n_L + sum_R^2/n_R, which is equivalent to
    /// maximizing the reduction in squared error.
    fn best_split(&self, rows: &[usize], features: &[usize]) -> Option<BestSplit> {
        let n = rows.len();
        let min_leaf = self.cfg.min_leaf.max(1);
        let total: f64 = rows.iter().map(|&i| self.y[i]).sum();
        let mut best: Option<BestSplit> = None;
        let mut pairs: Vec<(f64, f64)> = Vec::with_capacity(n);

        for &f in features {
            pairs.clear();
            pairs.extend(rows.iter().map(|&i| (self.x[(i, f)], self.y[i])));
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            let mut left_sum = 0.0;
            for k in 1..n {
                left_sum += pairs[k - 1].1;
                if k < min_leaf || n - k < min_leaf || pairs[k - 1].0 >= pairs[k].0 {
                    continue;
                }
                let right_sum = total - left_sum;
                let score = left_sum * left_sum / k as f64 + right_sum * right_sum / (n - k) as f64;
                if best.as_ref().is_none_or(|b| score > b.score) {
                    let lo = pairs[k - 1].0;
                    let hi = pairs[k].0;
                    let mut threshold = lo + (hi - lo) / 2.0;
                    if threshold >= hi {
                        threshold = lo;
                    }
                    best = Some(BestSplit {
                        feature: f,
                        threshold,
                        score,
                    });
                }
            }
        }
        best
    }
}

/// In-place partition; returns the count of rows satisfying `pred`.
fn partition_rows(rows: &mut [usize], pred: impl Fn(&usize) -> bool) -> usize {
    let mut mid = 0;
    for k in 0..rows.len() {
        if pred(&rows[k]) {
            rows.swap(mid, k);
            mid += 1;
        }
    }
    mid
}

fn fit_tree(x: &DMatrix<f64>, y: &[f64], cfg: &ForestConfig, mtry: usize, mut rng: ChaCha8Rng) -> Tree {
    let n = y.len();
    let mut rows: Vec<usize> = if cfg.bootstrap {
        (0..n).map(|_| rng.random_range(0..n)).collect()
    } else {
        (0..n).collect()
    };
    let mut builder = Builder {
        x,
        y,
        cfg,
        mtry,
        nodes: Vec::new(),
    };
    builder.build(&mut rows, 0, &mut rng);
    Tree {
        nodes: builder.nodes,
    }
}

/// Fit a forest. Tree `t` draws from a stream derived from `(seed, t)`, so
/// the result does not depend on thread scheduling.
pub fn fit_forest(x: &DMatrix<f64>, y: &[f64], cfg: &ForestConfig) -> Result<Forest> {
    let (n, d) = x.shape();
    if y.len() != n {
        return Err(Error::Dimension {
            expected: n,
            got: y.len(),
        });
    }
    if n == 0 || cfg.n_trees == 0 {
        return Err(Error::InvalidInput(format!(
            "forest needs rows and trees (n={n}, n_trees={})",
            cfg.n_trees
        )));
    }
    let mtry = cfg.max_features.unwrap_or(d / 3).clamp(1, d.max(1));
    let trees = if d == 0 {
        let mean = y.iter().sum::<f64>() / n as f64;
        vec![Tree {
            nodes: vec![Node::Leaf(mean)],
        }]
    } else {
        (0..cfg.n_trees)
            .into_par_iter()
            .map(|t| fit_tree(x, y, cfg, mtry, rng_for(cfg.seed, t as u64)))
            .collect()
    };
    Ok(Forest {
        trees,
        n_features: d,
    })
}

impl Forest {
    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::Dimension {
                expected: self.n_features,
                got: x.ncols(),
            });
        }
        let mut row = vec![0.0; self.n_features];
        Ok((0..x.nrows())
            .map(|i| {
                row.iter_mut()
                    .zip(x.row(i).iter())
                    .for_each(|(r, v)| *r = *v);
                let sum: f64 = self.trees.iter().map(|t| t.predict_row(&row)).sum();
                sum / self.trees.len() as f64
            })
            .collect())
    }
}
