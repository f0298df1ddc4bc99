//! Gradient-boosted regression trees, exact greedy splits, second-order
//! gain with L2 leaf shrinkage and L1 soft-thresholding of gradient sums.

use nalgebra::DMatrix;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GbtConfig {
    pub n_estimators: usize,
    pub max_depth: usize,
    pub learning_rate: f64,
    /// Row fraction drawn (without replacement) per boosting round.
    pub subsample: f64,
    /// L1 soft threshold applied to gradient sums in gains and leaf values.
    pub l1_alpha: f64,
    /// L2 penalty on leaf values.
    pub l2_lambda: f64,
    /// Stop after this many rounds without validation MAE improvement.
    pub early_stop_rounds: Option<usize>,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_estimators: 500,
            max_depth: 8,
            learning_rate: 0.01,
            subsample: 0.8,
            l1_alpha: 0.5,
            l2_lambda: 1.0,
            early_stop_rounds: None,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_estimators == 0 || self.max_depth == 0 {
            return Err(Error::InvalidArgument(
                "gbt needs at least one round and depth ≥ 1".into(),
            ));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "learning rate {} outside (0, 1]",
                self.learning_rate
            )));
        }
        if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            return Err(Error::InvalidArgument(format!(
                "subsample {} outside (0, 1]",
                self.subsample
            )));
        }
        if !(self.l1_alpha >= 0.0) || !(self.l2_lambda >= 0.0) {
            return Err(Error::InvalidArgument("penalties must be ≥ 0".into()));
        }
        Ok(())
    }
}

/// Flat tree: internal nodes route on `feature < threshold`, leaves hold
/// the already-shrunk contribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum TreeNode {
    Split { feature: usize, threshold: f64, left: usize, right: usize },
    Leaf { value: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            match self.nodes[i] {
                TreeNode::Leaf { value } => return value,
                TreeNode::Split { feature, threshold, left, right } => {
                    i = if row[feature] < threshold { left } else { right };
                }
            }
        }
    }

    pub fn is_stump(&self) -> bool {
        matches!(self.nodes.as_slice(), [TreeNode::Leaf { value }] if *value == 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GbtModel {
    pub config: GbtConfig,
    pub n_features: usize,
    /// Initial prediction: the training-target mean.
    pub init: f64,
    pub trees: Vec<Tree>,
    /// Training MAE after each round.
    pub train_curve: Vec<f64>,
    /// Validation MAE after each round (empty without a validation set).
    pub val_curve: Vec<f64>,
}

impl GbtModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.init + self.trees.iter().map(|t| t.predict_row(row)).sum::<f64>()
    }

    pub fn predict(&self, x: &DMatrix<f64>) -> Result<Vec<f64>> {
        if x.ncols() != self.n_features {
            return Err(Error::DimMismatch(format!(
                "model expects {} features, got {}",
                self.n_features,
                x.ncols()
            )));
        }
        Ok((0..x.nrows())
            .map(|i| {
                let row: Vec<f64> = x.row(i).iter().copied().collect();
                self.predict_row(&row)
            })
            .collect())
    }
}

fn soft_threshold(g: f64, alpha: f64) -> f64 {
    if g > alpha {
        g - alpha
    } else if g < -alpha {
        g + alpha
    } else {
        0.0
    }
}

struct TreeBuilder<'a> {
    cols: &'a [Vec<f64>],
    grad: &'a [f64],
    cfg: &'a GbtConfig,
    nodes: Vec<TreeNode>,
}

impl<'a> TreeBuilder<'a> {
    fn score(&self, g: f64, h: f64) -> f64 {
        let s = soft_threshold(g, self.cfg.l1_alpha);
        s * s / (h + self.cfg.l2_lambda)
    }

    fn leaf_value(&self, g: f64, h: f64) -> f64 {
        // Shrinkage folded into the stored value.
        -self.cfg.learning_rate * soft_threshold(g, self.cfg.l1_alpha)
            / (h + self.cfg.l2_lambda)
    }

    /// Builds the subtree over `rows`, returns its node index.
    fn grow(&mut self, rows: &mut [usize], depth: usize) -> usize {
        let g_sum: f64 = rows.iter().map(|&i| self.grad[i]).sum();
        let h_sum = rows.len() as f64;
        let parent_score = self.score(g_sum, h_sum);

        let mut best: Option<(f64, usize, f64)> = None; // gain, feature, threshold
        if depth < self.cfg.max_depth && rows.len() >= 2 {
            for (f, col) in self.cols.iter().enumerate() {
                rows.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap());
                let mut g_left = 0.0;
                for k in 0..rows.len() - 1 {
                    g_left += self.grad[rows[k]];
                    let (lo, hi) = (col[rows[k]], col[rows[k + 1]]);
                    if lo == hi {
                        continue;
                    }
                    let h_left = (k + 1) as f64;
                    let gain = 0.5
                        * (self.score(g_left, h_left)
                            + self.score(g_sum - g_left, h_sum - h_left)
                            - parent_score);
                    if gain > 1e-12 && best.map_or(true, |(bg, _, _)| gain > bg) {
                        best = Some((gain, f, (lo + hi) / 2.0));
                    }
                }
            }
        }

        match best {
            None => {
                self.nodes.push(TreeNode::Leaf { value: self.leaf_value(g_sum, h_sum) });
                self.nodes.len() - 1
            }
            Some((_, feature, threshold)) => {
                let col = &self.cols[feature];
                rows.sort_by(|&a, &b| col[a].partial_cmp(&col[b]).unwrap());
                let split_at = rows.partition_point(|&i| col[i] < threshold);
                let here = self.nodes.len();
                self.nodes.push(TreeNode::Leaf { value: 0.0 }); // placeholder
                let (l_rows, r_rows) = rows.split_at_mut(split_at);
                let left = self.grow(l_rows, depth + 1);
                let right = self.grow(r_rows, depth + 1);
                self.nodes[here] = TreeNode::Split { feature, threshold, left, right };
                here
            }
        }
    }
}

fn check_finite(x: &DMatrix<f64>, y: &[f64]) -> Result<()> {
    for i in 0..x.nrows() {
        for j in 0..x.ncols() {
            if !x[(i, j)].is_finite() {
                return Err(Error::InvalidArgument(format!(
                    "non-finite feature at row {i}, column {j}"
                )));
            }
        }
    }
    for (i, v) in y.iter().enumerate() {
        if !v.is_finite() {
            return Err(Error::InvalidArgument(format!("non-finite target at row {i}")));
        }
    }
    Ok(())
}

fn mae(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum::<f64>() / a.len() as f64
}

/// Trains a boosted ensemble on squared error. With a validation set and
/// `early_stop_rounds`, the model is truncated at the best validation round.
pub fn train_gbt(
    x: &DMatrix<f64>,
    y: &[f64],
    cfg: &GbtConfig,
    validation: Option<(&DMatrix<f64>, &[f64])>,
) -> Result<GbtModel> {
    cfg.validate()?;
    if x.nrows() != y.len() {
        return Err(Error::DimMismatch(format!(
            "{} rows vs {} targets",
            x.nrows(),
            y.len()
        )));
    }
    if y.is_empty() {
        return Err(Error::Empty("gbt training set".into()));
    }
    check_finite(x, y)?;
    if let Some((xv, yv)) = validation {
        if yv.is_empty() {
            return Err(Error::Empty("gbt validation set".into()));
        }
        check_finite(xv, yv)?;
        if xv.ncols() != x.ncols() {
            return Err(Error::DimMismatch("validation feature count differs".into()));
        }
    }

    let n = y.len();
    let cols: Vec<Vec<f64>> =
        (0..x.ncols()).map(|j| x.column(j).iter().copied().collect()).collect();
    // A constant target must be reproduced exactly, not up to summation
    // rounding.
    let init = if y.iter().all(|v| *v == y[0]) {
        y[0]
    } else {
        y.iter().sum::<f64>() / n as f64
    };
    let mut pred = vec![init; n];
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let val_rows: Option<Vec<Vec<f64>>> = validation.map(|(xv, _)| {
        (0..xv.nrows()).map(|i| xv.row(i).iter().copied().collect()).collect()
    });
    let mut val_pred: Vec<f64> = validation.map_or(Vec::new(), |(xv, _)| vec![init; xv.nrows()]);

    let mut model = GbtModel {
        config: *cfg,
        n_features: x.ncols(),
        init,
        trees: Vec::with_capacity(cfg.n_estimators),
        train_curve: Vec::with_capacity(cfg.n_estimators),
        val_curve: Vec::new(),
    };
    let mut best = (f64::INFINITY, 0usize); // best val MAE, round count at best

    let m = ((cfg.subsample * n as f64).round() as usize).clamp(1, n);
    let mut all_rows: Vec<usize> = (0..n).collect();

    for round in 0..cfg.n_estimators {
        let grad: Vec<f64> = pred.iter().zip(y).map(|(p, t)| p - t).collect();
        let mut rows: Vec<usize> = if m < n {
            all_rows.shuffle(&mut rng);
            let mut s = all_rows[..m].to_vec();
            s.sort_unstable();
            s
        } else {
            all_rows.clone()
        };

        let mut builder = TreeBuilder { cols: &cols, grad: &grad, cfg, nodes: Vec::new() };
        let root = builder.grow(&mut rows, 0);
        debug_assert_eq!(root, 0);
        let tree = Tree { nodes: builder.nodes };

        for i in 0..n {
            let row: Vec<f64> = (0..cols.len()).map(|j| cols[j][i]).collect();
            pred[i] += tree.predict_row(&row);
        }
        model.trees.push(tree);
        model.train_curve.push(mae(&pred, y));

        if let (Some(vr), Some((_, yv))) = (&val_rows, validation) {
            let t = model.trees.last().unwrap();
            for (vp, row) in val_pred.iter_mut().zip(vr) {
                *vp += t.predict_row(row);
            }
            let vm = mae(&val_pred, yv);
            model.val_curve.push(vm);
            if vm < best.0 {
                best = (vm, round + 1);
            }
            if let Some(patience) = cfg.early_stop_rounds {
                if round + 1 - best.1 >= patience {
                    break;
                }
            }
        }
    }

    if validation.is_some() && cfg.early_stop_rounds.is_some() && best.1 > 0 {
        model.trees.truncate(best.1);
        model.train_curve.truncate(best.1);
        model.val_curve.truncate(best.1);
    }
    Ok(model)
}
