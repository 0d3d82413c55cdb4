//! Second-order gradient-boosted regression trees for logistic loss.
//!
//! Trees are grown level by level with exact greedy split search: for every
//! open node and every feature the node's rows are scanned in ascending
//! feature order, and each midpoint between consecutive distinct values is a
//! candidate threshold. Rows with `x < threshold` go left. Among candidates of
//! equal gain the lowest feature index wins, then the lowest threshold.

use rand::Rng as _;
use serde::{Deserialize, Serialize};

use crate::ingest::AntibioticDataset;
use crate::mlp::sigmoid;
use crate::rng::seeded;

const MIN_HESSIAN: f64 = 1e-16;

#[derive(Debug, thiserror::Error)]
pub enum GbtError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("input has dimension {found}, model expects {expected}")]
    DimMismatch { expected: usize, found: usize },
    #[error("non-finite feature value at row {row}, column {column}")]
    NonFinite { row: usize, column: usize },
    #[error("boosting diverged: non-finite logit after round {round}")]
    Divergence { round: usize },
    #[error("training set is empty")]
    Empty,
    #[error("malformed model: {0}")]
    Malformed(String),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GbtConfig {
    pub n_estimators: usize,
    /// Shrinkage applied to every tree's output.
    pub eta: f64,
    pub max_depth: usize,
    /// Fraction of rows sampled per round; 1.0 uses every row.
    pub subsample: f64,
    /// L2 penalty on leaf weights.
    pub lambda: f64,
    /// Minimum gain required to split.
    pub gamma: f64,
    /// Minimum hessian sum in each child.
    pub min_child_weight: f64,
    pub base_score: f64,
    pub seed: u64,
}

impl Default for GbtConfig {
    fn default() -> Self {
        GbtConfig {
            n_estimators: 100,
            eta: 0.3,
            max_depth: 6,
            subsample: 1.0,
            lambda: 1.0,
            gamma: 0.0,
            min_child_weight: 1.0,
            base_score: 0.5,
            seed: 0,
        }
    }
}

impl GbtConfig {
    pub fn validate(&self) -> Result<(), GbtError> {
        let problem = if !(self.eta > 0.0 && self.eta <= 1.0) {
            Some("eta must be in (0, 1]")
        } else if !(self.subsample > 0.0 && self.subsample <= 1.0) {
            Some("subsample must be in (0, 1]")
        } else if self.max_depth == 0 {
            Some("max_depth must be at least 1")
        } else if !(self.lambda >= 0.0) || !(self.gamma >= 0.0) || !(self.min_child_weight >= 0.0) {
            Some("lambda, gamma and min_child_weight must be non-negative")
        } else if !(self.base_score > 0.0 && self.base_score < 1.0) {
            Some("base_score must be in (0, 1)")
        } else {
            None
        };
        problem.map_or(Ok(()), |p| Err(GbtError::Config(p.into())))
    }

    pub fn base_logit(&self) -> f64 {
        (self.base_score / (1.0 - self.base_score)).ln()
    }
}

/// Per-row logistic-loss gradient `p - y` and hessian `p(1 - p)`, with the
/// hessian floored at 1e-16.
pub fn grad_hess(labels: &[u8], logits: &[f64]) -> (Vec<f64>, Vec<f64>) {
    labels
        .iter()
        .zip(logits)
        .map(|(&y, &l)| {
            let p = sigmoid(l);
            (p - f64::from(y), (p * (1.0 - p)).max(MIN_HESSIAN))
        })
        .unzip()
}

/// Optimal leaf value `-G / (H + lambda)`.
pub fn leaf_weight(g: f64, h: f64, lambda: f64) -> f64 {
    -g / (h + lambda)
}

/// Loss reduction of a split, net of `gamma`.
#[inline]
pub fn split_gain(gl: f64, hl: f64, gr: f64, hr: f64, lambda: f64, gamma: f64) -> f64 {
    let score = |g: f64, h: f64| g * g / (h + lambda);
    0.5 * (score(gl, hl) + score(gr, hr) - score(gl + gr, hl + hr)) - gamma
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum TreeNode {
    Split {
        feature_index: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
    Leaf {
        weight: f64,
    },
}

/// Binary regression tree; node 0 is the root.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegressionTree {
    pub nodes: Vec<TreeNode>,
}

impl RegressionTree {
    /// Raw leaf weight reached by `x` (before shrinkage).
    pub fn predict(&self, x: &[f64]) -> f64 {
        let mut idx = 0;
        loop {
            match self.nodes[idx] {
                TreeNode::Leaf { weight } => return weight,
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => idx = if x[feature_index] < threshold { left } else { right },
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(nodes: &[TreeNode], idx: usize) -> usize {
            match nodes[idx] {
                TreeNode::Leaf { .. } => 0,
                TreeNode::Split { left, right, .. } => 1 + walk(nodes, left).max(walk(nodes, right)),
            }
        }
        walk(&self.nodes, 0)
    }

    pub fn root(&self) -> &TreeNode {
        &self.nodes[0]
    }

    fn validate(&self, dim: usize) -> Result<(), GbtError> {
        let n = self.nodes.len();
        if n == 0 {
            return Err(GbtError::Malformed("empty tree".into()));
        }
        for (i, node) in self.nodes.iter().enumerate() {
            match *node {
                TreeNode::Split {
                    feature_index,
                    threshold,
                    left,
                    right,
                } => {
                    if feature_index >= dim || !threshold.is_finite() || left <= i || right <= i || left >= n || right >= n {
                        return Err(GbtError::Malformed(format!("bad split node {i}")));
                    }
                }
                TreeNode::Leaf { weight } if !weight.is_finite() => {
                    return Err(GbtError::Malformed(format!("non-finite leaf {i}")));
                }
                TreeNode::Leaf { .. } => {}
            }
        }
        Ok(())
    }
}

/// Row-major feature matrix with per-column row orderings.
pub struct FeatureMatrix<'a> {
    x: &'a [f64],
    rows: usize,
    dim: usize,
    /// For each column, row indices sorted by value (ties by row index).
    sorted: Vec<Vec<u32>>,
    /// The column values in that same order.
    sorted_values: Vec<Vec<f64>>,
}

impl<'a> FeatureMatrix<'a> {
    pub fn new(x: &'a [f64], dim: usize) -> Result<Self, GbtError> {
        if dim == 0 || x.len() % dim != 0 {
            return Err(GbtError::DimMismatch {
                expected: dim,
                found: x.len() % dim.max(1),
            });
        }
        let rows = x.len() / dim;
        if let Some(pos) = x.iter().position(|v| !v.is_finite()) {
            return Err(GbtError::NonFinite {
                row: pos / dim,
                column: pos % dim,
            });
        }
        let sorted = (0..dim)
            .map(|f| {
                let mut idx: Vec<u32> = (0..rows as u32).collect();
                idx.sort_by(|&a, &b| {
                    x[a as usize * dim + f]
                        .total_cmp(&x[b as usize * dim + f])
                        .then(a.cmp(&b))
                });
                idx
            })
            .collect::<Vec<Vec<u32>>>();
        let sorted_values = sorted
            .iter()
            .enumerate()
            .map(|(f, order)| order.iter().map(|&r| x[r as usize * dim + f]).collect())
            .collect();
        Ok(FeatureMatrix { x, rows, dim, sorted, sorted_values })
    }

    #[inline]
    fn value(&self, row: usize, feature: usize) -> f64 {
        self.x[row * self.dim + feature]
    }

    fn row(&self, row: usize) -> &[f64] {
        &self.x[row * self.dim..(row + 1) * self.dim]
    }
}

#[derive(Clone, Copy)]
struct Candidate {
    gain: f64,
    feature: usize,
    threshold: f64,
}

/// A node still open for splitting. Its rows occupy `start..end` of every
/// column segment.
struct OpenNode {
    id: usize,
    start: usize,
    end: usize,
    g: f64,
    h: f64,
}

/// Best split of one node: features in ascending order, thresholds ascending
/// within a feature, and a candidate replaces the incumbent only on a
/// strictly larger gain.
fn best_split(
    node: &OpenNode,
    orders: &[Vec<u32>],
    values: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    config: &GbtConfig,
) -> Option<Candidate> {
    let mut best: Option<Candidate> = None;
    for (f, (order, vals)) in orders.iter().zip(values).enumerate() {
        let order = &order[node.start..node.end];
        let vals = &vals[node.start..node.end];
        let (mut gl, mut hl) = (0.0, 0.0);
        let mut last = vals[0];
        for (&r, &v) in order.iter().zip(vals) {
            if v > last {
                let (gr, hr) = (node.g - gl, node.h - hl);
                if hl >= config.min_child_weight && hr >= config.min_child_weight {
                    let gain = split_gain(gl, hl, gr, hr, config.lambda, config.gamma);
                    if best.is_none_or(|b| gain > b.gain) {
                        best = Some(Candidate {
                            gain,
                            feature: f,
                            threshold: 0.5 * (last + v),
                        });
                    }
                }
            }
            gl += grad[r as usize];
            hl += hess[r as usize];
            last = v;
        }
    }
    best
}

/// Grows one tree on the `active` rows. Fails only if `active` is empty.
///
/// Every column keeps the rows of each open node in one contiguous segment,
/// ordered by (value, row index); splitting a node partitions its segments
/// stably. Node sums of gradients and hessians are always accumulated in row
/// index order.
pub fn build_tree(
    features: &FeatureMatrix,
    grad: &[f64],
    hess: &[f64],
    config: &GbtConfig,
    active: &[usize],
) -> Result<RegressionTree, GbtError> {
    if active.is_empty() {
        return Err(GbtError::Empty);
    }
    let lambda = config.lambda;
    let mut in_tree = vec![false; features.rows];
    for &r in active {
        in_tree[r] = true;
    }
    let (mut orders, mut values): (Vec<Vec<u32>>, Vec<Vec<f64>>) = if active.len() == features.rows {
        (features.sorted.clone(), features.sorted_values.clone())
    } else {
        features
            .sorted
            .iter()
            .zip(&features.sorted_values)
            .map(|(order, vals)| {
                order
                    .iter()
                    .zip(vals)
                    .filter(|(&r, _)| in_tree[r as usize])
                    .map(|(&r, &v)| (r, v))
                    .unzip()
            })
            .unzip()
    };
    let mut scratch_order = vec![0u32; active.len()];
    let mut scratch_values = vec![0.0; active.len()];

    // Current node of every active row, and the side it takes in this level's split.
    let mut node_of = vec![0usize; features.rows];
    let mut goes_left = vec![false; features.rows];

    let (g0, h0) = active.iter().fold((0.0, 0.0), |(g, h), &r| (g + grad[r], h + hess[r]));
    let mut nodes = vec![TreeNode::Leaf {
        weight: leaf_weight(g0, h0, lambda),
    }];
    let mut open = vec![OpenNode {
        id: 0,
        start: 0,
        end: active.len(),
        g: g0,
        h: h0,
    }];

    for depth in 0..config.max_depth {
        // Children created at the last level are never scanned, so their
        // segments need no partitioning.
        let last_level = depth + 1 == config.max_depth;
        if open.is_empty() {
            break;
        }
        let splits: Vec<(usize, Candidate)> = open
            .iter()
            .enumerate()
            .filter_map(|(slot, node)| {
                best_split(node, &orders, &values, grad, hess, config)
                    .filter(|c| c.gain > 0.0)
                    .map(|c| (slot, c))
            })
            .collect();
        if splits.is_empty() {
            break;
        }

        // Allocate children in slot order and route the rows.
        let mut children: Vec<Option<(usize, usize)>> = vec![None; nodes.len()];
        let mut split_of: Vec<Option<Candidate>> = vec![None; nodes.len()];
        for &(slot, c) in &splits {
            let id = open[slot].id;
            let left = nodes.len();
            nodes.push(TreeNode::Leaf { weight: 0.0 });
            nodes.push(TreeNode::Leaf { weight: 0.0 });
            nodes[id] = TreeNode::Split {
                feature_index: c.feature,
                threshold: c.threshold,
                left,
                right: left + 1,
            };
            children[id] = Some((left, left + 1));
            split_of[id] = Some(c);
        }
        children.resize(nodes.len(), None);
        let mut sums = vec![(0.0, 0.0); nodes.len()];
        for &r in active {
            let Some(c) = split_of.get(node_of[r]).copied().flatten() else {
                continue;
            };
            let (left, right) = children[node_of[r]].expect("split node has children");
            goes_left[r] = features.value(r, c.feature) < c.threshold;
            node_of[r] = if goes_left[r] { left } else { right };
            let s = &mut sums[node_of[r]];
            s.0 += grad[r];
            s.1 += hess[r];
        }

        let mut next_open = Vec::with_capacity(2 * splits.len());
        for &(slot, _) in &splits {
            let parent = &open[slot];
            let (left, right) = children[parent.id].expect("split node has children");
            let (start, end) = (parent.start, parent.end);
            let mut n_left = 0;
            let columns = if last_level { 0 } else { orders.len() };
            for (order, vals) in orders.iter_mut().zip(values.iter_mut()).take(columns) {
                let seg_order = &mut order[start..end];
                let seg_vals = &mut vals[start..end];
                let n_seg = seg_order.len();
                let lefts = seg_order.iter().map(|&r| usize::from(goes_left[r as usize])).sum::<usize>();
                // Branch-free stable partition; the side is unpredictable.
                let (mut li, mut ri) = (0, lefts);
                for (&r, &v) in seg_order.iter().zip(seg_vals.iter()) {
                    let left = goes_left[r as usize];
                    let pos = if left { li } else { ri };
                    scratch_order[pos] = r;
                    scratch_values[pos] = v;
                    li += usize::from(left);
                    ri += usize::from(!left);
                }
                seg_order.copy_from_slice(&scratch_order[..n_seg]);
                seg_vals.copy_from_slice(&scratch_values[..n_seg]);
                n_left = lefts;
            }
            for (id, s, e) in [(left, start, start + n_left), (right, start + n_left, end)] {
                let (g, h) = sums[id];
                nodes[id] = TreeNode::Leaf {
                    weight: leaf_weight(g, h, lambda),
                };
                next_open.push(OpenNode { id, start: s, end: e, g, h });
            }
        }
        open = next_open;
    }
    Ok(RegressionTree { nodes })
}

#[derive(Clone, Debug, PartialEq)]
pub struct GbtModel {
    pub trees: Vec<RegressionTree>,
    pub base_logit: f64,
    pub dim: usize,
    pub config: GbtConfig,
}

/// Per-round training diagnostics.
#[derive(Clone, Debug, PartialEq)]
pub struct FitTrace {
    /// Total logistic loss before the first round and after each round.
    pub losses: Vec<f64>,
    /// Training logits after the last round.
    pub train_logits: Vec<f64>,
}

fn total_log_loss(labels: &[u8], logits: &[f64]) -> f64 {
    labels
        .iter()
        .zip(logits)
        .map(|(&y, &l)| l.max(0.0) + (-l.abs()).exp().ln_1p() - f64::from(y) * l)
        .sum()
}

pub fn fit_matrix(x: &[f64], dim: usize, labels: &[u8], config: &GbtConfig) -> Result<GbtModel, GbtError> {
    fit_matrix_traced(x, dim, labels, config).map(|(model, _)| model)
}

pub fn fit_matrix_traced(
    x: &[f64],
    dim: usize,
    labels: &[u8],
    config: &GbtConfig,
) -> Result<(GbtModel, FitTrace), GbtError> {
    config.validate()?;
    let features = FeatureMatrix::new(x, dim)?;
    let n = features.rows;
    if n == 0 {
        return Err(GbtError::Empty);
    }
    if labels.len() != n {
        return Err(GbtError::DimMismatch {
            expected: n,
            found: labels.len(),
        });
    }
    let base_logit = config.base_logit();
    let mut logits = vec![base_logit; n];
    let mut losses = vec![total_log_loss(labels, &logits)];
    let mut trees = Vec::with_capacity(config.n_estimators);
    let all: Vec<usize> = (0..n).collect();
    let mut rng = seeded(config.seed);

    for round in 0..config.n_estimators {
        let (g, h) = grad_hess(labels, &logits);
        let sampled;
        let active: &[usize] = if config.subsample < 1.0 {
            let mut picked: Vec<usize> = all
                .iter()
                .copied()
                .filter(|_| rng.random::<f64>() < config.subsample)
                .collect();
            if picked.is_empty() {
                picked.push(rng.random_range(0..n));
            }
            sampled = picked;
            &sampled
        } else {
            &all
        };
        let tree = build_tree(&features, &g, &h, config, active)?;
        for (r, logit) in logits.iter_mut().enumerate() {
            *logit += config.eta * tree.predict(features.row(r));
        }
        if logits.iter().any(|l| !l.is_finite()) {
            return Err(GbtError::Divergence { round });
        }
        losses.push(total_log_loss(labels, &logits));
        trees.push(tree);
    }
    let model = GbtModel {
        trees,
        base_logit,
        dim,
        config: config.clone(),
    };
    Ok((
        model,
        FitTrace {
            losses,
            train_logits: logits,
        },
    ))
}

pub fn fit(dataset: &AntibioticDataset, config: &GbtConfig) -> Result<GbtModel, GbtError> {
    let all: Vec<usize> = (0..dataset.len()).collect();
    fit_matrix(&dataset.feature_matrix(&all), dataset.dim(), &dataset.labels(), config)
}

impl GbtModel {
    /// Logit for one row: base plus the shrunken sum of tree outputs.
    pub fn score(&self, x: &[f64]) -> f64 {
        self.trees
            .iter()
            .fold(self.base_logit, |acc, t| acc + self.config.eta * t.predict(x))
    }

    pub fn predict_matrix(&self, x: &[f64]) -> Result<Vec<f64>, GbtError> {
        if x.len() % self.dim != 0 {
            return Err(GbtError::DimMismatch {
                expected: self.dim,
                found: x.len() % self.dim,
            });
        }
        Ok(x.chunks_exact(self.dim).map(|row| sigmoid(self.score(row))).collect())
    }

    pub fn predict_proba(&self, rows: &[crate::EmbeddingVector]) -> Result<Vec<f64>, GbtError> {
        rows.iter()
            .map(|r| {
                if r.dim() != self.dim {
                    return Err(GbtError::DimMismatch {
                        expected: self.dim,
                        found: r.dim(),
                    });
                }
                let x: Vec<f64> = r.as_slice().iter().map(|&v| f64::from(v)).collect();
                Ok(sigmoid(self.score(&x)))
            })
            .collect()
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&GbtModelJson {
            dim: self.dim,
            base_logit: self.base_logit,
            config: self.config.clone(),
            trees: self.trees.clone(),
        })
        .expect("model serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, GbtError> {
        let raw: GbtModelJson = serde_json::from_str(s).map_err(|e| GbtError::Malformed(e.to_string()))?;
        for tree in &raw.trees {
            tree.validate(raw.dim)?;
        }
        Ok(GbtModel {
            trees: raw.trees,
            base_logit: raw.base_logit,
            dim: raw.dim,
            config: raw.config,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct GbtModelJson {
    dim: usize,
    base_logit: f64,
    config: GbtConfig,
    trees: Vec<RegressionTree>,
}
