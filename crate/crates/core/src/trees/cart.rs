use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{check_rows, TreeError};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TreeNode {
    /// Split feature; `None` for leaves.
    pub feature: Option<usize>,
    pub threshold: f64,
    /// `[left, right]` node indices; `None` for leaves.
    pub children: Option<[usize; 2]>,
    pub value: f64,
}

/// Binary tree stored as a node array, root first.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Tree {
    pub nodes: Vec<TreeNode>,
}

impl Tree {
    pub fn predict(&self, row: &[f64]) -> f64 {
        let mut i = 0;
        loop {
            let node = &self.nodes[i];
            match (node.feature, node.children) {
                (Some(f), Some([l, r])) => i = if row[f] <= node.threshold { l } else { r },
                _ => return node.value,
            }
        }
    }

    pub fn depth(&self) -> usize {
        fn walk(t: &Tree, i: usize) -> usize {
            match t.nodes[i].children {
                Some([l, r]) => 1 + walk(t, l).max(walk(t, r)),
                None => 0,
            }
        }
        walk(self, 0)
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes.iter().filter(|n| n.children.is_none()).count()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TreeConfig {
    pub max_depth: Option<usize>,
    pub min_leaf: usize,
    /// Features examined per split; `None` examines all.
    pub max_features: Option<usize>,
    /// L2 penalty on leaf values in regression mode.
    pub lambda: f64,
}

impl Default for TreeConfig {
    fn default() -> Self {
        Self { max_depth: None, min_leaf: 5, max_features: None, lambda: 1.0 }
    }
}

/// Sufficient statistics of a node for one of the two split criteria.
trait SplitStats: Copy + Default {
    fn add(&mut self, i: usize);
    fn sub(&self, other: &Self) -> Self;
    /// Larger is better; a split's gain is `score(l) + score(r) - score(parent)`.
    fn score(&self) -> f64;
    fn leaf_value(&self) -> f64;
    fn is_pure(&self) -> bool;
}

#[derive(Clone, Copy, Default)]
struct GiniStats<'a> {
    labels: Option<&'a [bool]>,
    n: f64,
    pos: f64,
}

impl SplitStats for GiniStats<'_> {
    fn add(&mut self, i: usize) {
        self.n += 1.0;
        if self.labels.expect("labels bound")[i] {
            self.pos += 1.0;
        }
    }

    fn sub(&self, o: &Self) -> Self {
        Self { labels: self.labels, n: self.n - o.n, pos: self.pos - o.pos }
    }

    /// Negative count-weighted Gini impurity.
    fn score(&self) -> f64 {
        if self.n == 0.0 {
            return 0.0;
        }
        let p = self.pos / self.n;
        -self.n * (1.0 - p * p - (1.0 - p) * (1.0 - p))
    }

    fn leaf_value(&self) -> f64 {
        if self.n == 0.0 { 0.0 } else { self.pos / self.n }
    }

    fn is_pure(&self) -> bool {
        self.pos == 0.0 || self.pos == self.n
    }
}

#[derive(Clone, Copy, Default)]
struct NewtonStats<'a> {
    grad: Option<&'a [f64]>,
    hess: Option<&'a [f64]>,
    lambda: f64,
    g: f64,
    h: f64,
}

impl SplitStats for NewtonStats<'_> {
    fn add(&mut self, i: usize) {
        self.g += self.grad.expect("gradients bound")[i];
        self.h += self.hess.expect("hessians bound")[i];
    }

    fn sub(&self, o: &Self) -> Self {
        Self { g: self.g - o.g, h: self.h - o.h, ..*self }
    }

    fn score(&self) -> f64 {
        self.g * self.g / (self.h + self.lambda)
    }

    fn leaf_value(&self) -> f64 {
        -self.g / (self.h + self.lambda)
    }

    fn is_pure(&self) -> bool {
        false
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub(crate) struct Split {
    pub feature: usize,
    pub threshold: f64,
    pub gain: f64,
}

/// Exhaustive threshold scan over `features` for the rows in `idx`.
fn best_split<S: SplitStats>(
    x: &[Vec<f64>],
    idx: &[usize],
    features: &[usize],
    min_leaf: usize,
    empty: S,
) -> Option<Split> {
    let mut total = empty;
    for &i in idx {
        total.add(i);
    }
    let parent = total.score();
    let mut best: Option<Split> = None;
    let mut order = idx.to_vec();
    for &f in features {
        order.sort_by(|&a, &b| x[a][f].total_cmp(&x[b][f]));
        let mut left = empty;
        for pos in 0..order.len().saturating_sub(1) {
            left.add(order[pos]);
            let n_left = pos + 1;
            if n_left < min_leaf || order.len() - n_left < min_leaf {
                continue;
            }
            let (lo, hi) = (x[order[pos]][f], x[order[pos + 1]][f]);
            if lo >= hi {
                continue;
            }
            let right = total.sub(&left);
            let gain = left.score() + right.score() - parent;
            if gain > 1e-12 && best.is_none_or(|b| gain > b.gain) {
                let mid = lo + (hi - lo) / 2.0;
                let threshold = if mid < hi { mid } else { lo };
                best = Some(Split { feature: f, threshold, gain });
            }
        }
    }
    best
}

struct Builder<'a, S, R> {
    x: &'a [Vec<f64>],
    cfg: &'a TreeConfig,
    empty: S,
    rng: &'a mut R,
    nodes: Vec<TreeNode>,
    importance: Vec<f64>,
}

impl<S: SplitStats, R: Rng> Builder<'_, S, R> {
    fn candidate_features(&mut self) -> Vec<usize> {
        let f = self.importance.len();
        let mut all: Vec<usize> = (0..f).collect();
        match self.cfg.max_features {
            Some(k) if k < f => {
                for i in 0..k {
                    let j = self.rng.gen_range(i..f);
                    all.swap(i, j);
                }
                all.truncate(k.max(1));
                all
            }
            _ => all,
        }
    }

    fn grow(&mut self, idx: &[usize], depth: usize) -> usize {
        let mut stats = self.empty;
        for &i in idx {
            stats.add(i);
        }
        let id = self.nodes.len();
        self.nodes.push(TreeNode { feature: None, threshold: 0.0, children: None, value: stats.leaf_value() });
        let depth_ok = self.cfg.max_depth.is_none_or(|d| depth < d);
        if !depth_ok || idx.len() < 2 * self.cfg.min_leaf.max(1) || stats.is_pure() {
            return id;
        }
        let features = self.candidate_features();
        let Some(split) = best_split(self.x, idx, &features, self.cfg.min_leaf.max(1), self.empty) else {
            return id;
        };
        let (left, right): (Vec<usize>, Vec<usize>) =
            idx.iter().partition(|&&i| self.x[i][split.feature] <= split.threshold);
        self.importance[split.feature] += split.gain;
        let l = self.grow(&left, depth + 1);
        let r = self.grow(&right, depth + 1);
        let node = &mut self.nodes[id];
        node.feature = Some(split.feature);
        node.threshold = split.threshold;
        node.children = Some([l, r]);
        id
    }
}

fn check_idx(x: &[Vec<f64>], idx: &[usize], min_leaf: usize) -> Result<(), TreeError> {
    if idx.is_empty() {
        return Err(TreeError::Empty);
    }
    if idx.len() < 2 * min_leaf {
        return Err(TreeError::TooFewRows { needed: 2 * min_leaf, got: idx.len() });
    }
    if let Some(&bad) = idx.iter().find(|&&i| i >= x.len()) {
        return Err(TreeError::Config(format!("row index {bad} out of range")));
    }
    Ok(())
}

/// Gini classification tree on the (possibly repeated) rows `idx`. Leaves
/// hold the positive fraction. Returns the tree and per-feature impurity
/// decrease (count-weighted).
pub fn fit_classification_tree<R: Rng>(
    x: &[Vec<f64>],
    y: &[bool],
    idx: &[usize],
    cfg: &TreeConfig,
    rng: &mut R,
) -> Result<(Tree, Vec<f64>), TreeError> {
    let f = check_rows(x, y.len())?;
    check_idx(x, idx, cfg.min_leaf)?;
    let empty = GiniStats { labels: Some(y), n: 0.0, pos: 0.0 };
    let mut b = Builder { x, cfg, empty, rng, nodes: Vec::new(), importance: vec![0.0; f] };
    b.grow(idx, 0);
    Ok((Tree { nodes: b.nodes }, b.importance))
}

/// Second-order regression tree: splits maximize
/// `G_L²/(H_L+λ) + G_R²/(H_R+λ) - G²/(H+λ)` and leaves hold `-G/(H+λ)`.
pub fn fit_regression_tree<R: Rng>(
    x: &[Vec<f64>],
    grad: &[f64],
    hess: &[f64],
    idx: &[usize],
    cfg: &TreeConfig,
    rng: &mut R,
) -> Result<(Tree, Vec<f64>), TreeError> {
    let f = check_rows(x, grad.len())?;
    if hess.len() != grad.len() {
        return Err(TreeError::Config("gradient and hessian lengths differ".into()));
    }
    check_idx(x, idx, cfg.min_leaf)?;
    let empty = NewtonStats { grad: Some(grad), hess: Some(hess), lambda: cfg.lambda, g: 0.0, h: 0.0 };
    let mut b = Builder { x, cfg, empty, rng, nodes: Vec::new(), importance: vec![0.0; f] };
    b.grow(idx, 0);
    Ok((Tree { nodes: b.nodes }, b.importance))
}

#[cfg(test)]
mod tests {
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    use super::*;

    fn gini_weighted(rows: &[usize], y: &[bool]) -> f64 {
        let n = rows.len() as f64;
        if n == 0.0 {
            return 0.0;
        }
        let p = rows.iter().filter(|&&i| y[i]).count() as f64 / n;
        n * (1.0 - p * p - (1.0 - p).powi(2))
    }

    /// O(n²) oracle: every (feature, data value) threshold, partition and
    /// impurity recomputed from scratch.
    fn brute_force_best_gain(x: &[Vec<f64>], y: &[bool], min_leaf: usize) -> Option<f64> {
        let all: Vec<usize> = (0..x.len()).collect();
        let parent = gini_weighted(&all, y);
        let mut best: Option<f64> = None;
        for f in 0..x[0].len() {
            for t in 0..x.len() {
                let thr = x[t][f];
                let left: Vec<usize> = all.iter().copied().filter(|&i| x[i][f] <= thr).collect();
                let right: Vec<usize> = all.iter().copied().filter(|&i| x[i][f] > thr).collect();
                if left.len() < min_leaf || right.len() < min_leaf {
                    continue;
                }
                let gain = parent - gini_weighted(&left, y) - gini_weighted(&right, y);
                if gain > 1e-12 && best.is_none_or(|b| gain > b) {
                    best = Some(gain);
                }
            }
        }
        best
    }

    #[test]
    fn pure_labels_give_a_single_leaf() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64]).collect();
        let y = vec![true; 20];
        let idx: Vec<usize> = (0..20).collect();
        let (t, imp) = fit_classification_tree(&x, &y, &idx, &TreeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert_eq!(t.nodes.len(), 1);
        assert_eq!(t.nodes[0].value, 1.0);
        assert_eq!(imp, vec![0.0]);
    }

    #[test]
    fn separable_1d_threshold_lies_in_the_gap() {
        let xs = [-3.0, -2.5, -1.0, -0.7, -0.2, 0.4, 0.9, 1.3, 2.0, 4.0, -1.5, 3.1];
        let x: Vec<Vec<f64>> = xs.iter().map(|&v| vec![v]).collect();
        let y: Vec<bool> = xs.iter().map(|&v| v > 0.0).collect();
        let idx: Vec<usize> = (0..xs.len()).collect();
        let cfg = TreeConfig { min_leaf: 1, ..TreeConfig::default() };
        let (t, _) = fit_classification_tree(&x, &y, &idx, &cfg, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let thr = t.nodes[0].threshold;
        assert!(thr > -0.2 && thr <= 0.4, "threshold {thr}");
        for (row, &label) in x.iter().zip(&y) {
            assert_eq!(t.predict(row) > 0.5, label);
        }
    }

    #[test]
    fn depth_cap_bounds_node_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let x: Vec<Vec<f64>> = (0..100).map(|_| vec![rng.gen(), rng.gen()]).collect();
        let y: Vec<bool> = x.iter().map(|r| r[0] + r[1] > 1.0).collect();
        let idx: Vec<usize> = (0..100).collect();
        let cfg = TreeConfig { max_depth: Some(1), ..TreeConfig::default() };
        let (t, _) = fit_classification_tree(&x, &y, &idx, &cfg, &mut rng).unwrap();
        assert!(t.nodes.len() <= 3);
        assert!(t.depth() <= 1);
    }

    #[test]
    fn empty_and_tiny_inputs_are_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let cfg = TreeConfig::default();
        assert_eq!(fit_classification_tree(&[], &[], &[], &cfg, &mut rng).unwrap_err(), TreeError::Empty);
        let x = vec![vec![1.0]; 4];
        let y = vec![true, false, true, false];
        assert!(matches!(
            fit_classification_tree(&x, &y, &[0, 1, 2, 3], &cfg, &mut rng),
            Err(TreeError::TooFewRows { .. })
        ));
    }

    #[test]
    fn regression_leaf_is_newton_step() {
        let x: Vec<Vec<f64>> = (0..10).map(|i| vec![i as f64]).collect();
        let g = vec![0.5; 10];
        let h = vec![0.25; 10];
        let idx: Vec<usize> = (0..10).collect();
        let (t, _) = fit_regression_tree(&x, &g, &h, &idx, &TreeConfig::default(), &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        // constant gradients never produce a positive gain
        assert_eq!(t.nodes.len(), 1);
        assert!((t.nodes[0].value - (-5.0 / (2.5 + 1.0))).abs() < 1e-12);
    }

    #[test]
    fn json_shape() {
        let t = Tree {
            nodes: vec![
                TreeNode { feature: Some(0), threshold: 0.5, children: Some([1, 2]), value: 0.3 },
                TreeNode { feature: None, threshold: 0.0, children: None, value: 0.0 },
                TreeNode { feature: None, threshold: 0.0, children: None, value: 1.0 },
            ],
        };
        let json = serde_json::to_string(&t).unwrap();
        assert!(json.contains(r#""children":[1,2]"#));
        assert_eq!(serde_json::from_str::<Tree>(&json).unwrap(), t);
        assert_eq!(t.predict(&[0.2]), 0.0);
        assert_eq!(t.predict(&[0.7]), 1.0);
    }

    proptest! {
        #[test]
        fn scan_matches_brute_force(seed in 0u64..400, n in 10usize..50, min_leaf in 1usize..5) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let x: Vec<Vec<f64>> = (0..n).map(|_| vec![(rng.gen_range(0..12) as f64) * 0.5, rng.gen_range(-1.0..1.0)]).collect();
            let y: Vec<bool> = x.iter().map(|r| r[0] + r[1] + rng.gen_range(-1.0..1.0) > 3.0).collect();
            let idx: Vec<usize> = (0..n).collect();
            let empty = GiniStats { labels: Some(&y), n: 0.0, pos: 0.0 };
            let fast = best_split(&x, &idx, &[0, 1], min_leaf, empty).map(|s| s.gain);
            let slow = brute_force_best_gain(&x, &y, min_leaf);
            match (fast, slow) {
                (Some(a), Some(b)) => prop_assert!((a - b).abs() < 1e-9, "{a} vs {b}"),
                (None, None) => {}
                other => prop_assert!(false, "mismatch {other:?}"),
            }
        }
    }
}
