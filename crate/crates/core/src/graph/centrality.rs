//! Degree, betweenness, closeness, PageRank and clustering coefficient.
//!
//! Self-loops are ignored everywhere in this module. Edges are unweighted.

use std::collections::VecDeque;

use super::{Adjacency, GraphError};

/// Per-node topological descriptors, all raw (unnormalized).
#[derive(Clone, Debug, PartialEq)]
pub struct TopoFeatures {
    pub degree: Vec<f64>,
    pub betweenness: Vec<f64>,
    pub closeness: Vec<f64>,
    pub pagerank: Vec<f64>,
    pub clustering: Vec<f64>,
}

impl TopoFeatures {
    pub const NAMES: [&'static str; 5] = ["degree", "betweenness", "closeness", "pagerank", "clustering"];

    /// The five features of node `i` in [`TopoFeatures::NAMES`] order.
    pub fn row(&self, i: usize) -> [f64; 5] {
        [self.degree[i], self.betweenness[i], self.closeness[i], self.pagerank[i], self.clustering[i]]
    }
}

pub fn topo_features(g: &Adjacency) -> Result<TopoFeatures, GraphError> {
    Ok(TopoFeatures {
        degree: degree(g),
        betweenness: betweenness(g),
        closeness: closeness(g),
        pagerank: pagerank(g, 0.85, 1e-10, 1000)?,
        clustering: clustering(g),
    })
}

pub fn degree(g: &Adjacency) -> Vec<f64> {
    (0..g.len()).map(|i| g.neighbors(i).count() as f64).collect()
}

fn bfs_distances(g: &Adjacency, source: usize) -> Vec<Option<usize>> {
    let mut dist = vec![None; g.len()];
    dist[source] = Some(0);
    let mut queue = VecDeque::from([source]);
    while let Some(u) = queue.pop_front() {
        let du = dist[u].expect("queued nodes have a distance");
        for w in g.neighbors(u) {
            if dist[w].is_none() {
                dist[w] = Some(du + 1);
                queue.push_back(w);
            }
        }
    }
    dist
}

/// Reciprocal of the summed distance to every reachable node; 0 for an
/// isolated node.
pub fn closeness(g: &Adjacency) -> Vec<f64> {
    (0..g.len())
        .map(|s| {
            let total: usize = bfs_distances(g, s).into_iter().flatten().sum();
            if total == 0 { 0.0 } else { 1.0 / total as f64 }
        })
        .collect()
}

/// Local clustering coefficient; 0 when a node has fewer than two neighbours.
pub fn clustering(g: &Adjacency) -> Vec<f64> {
    (0..g.len())
        .map(|s| {
            let nb: Vec<usize> = g.neighbors(s).collect();
            let k = nb.len();
            if k < 2 {
                return 0.0;
            }
            let mut links = 0usize;
            for (a, &j) in nb.iter().enumerate() {
                for &l in &nb[a + 1..] {
                    if g.is_adjacent(j, l) {
                        links += 1;
                    }
                }
            }
            2.0 * links as f64 / (k * (k - 1)) as f64
        })
        .collect()
}

/// Shortest-path betweenness over unordered endpoint pairs (Brandes).
pub fn betweenness(g: &Adjacency) -> Vec<f64> {
    let n = g.len();
    let mut cb = vec![0.0; n];
    for s in 0..n {
        let mut stack = Vec::with_capacity(n);
        let mut preds: Vec<Vec<usize>> = vec![Vec::new(); n];
        let mut sigma = vec![0.0f64; n];
        let mut dist: Vec<i64> = vec![-1; n];
        sigma[s] = 1.0;
        dist[s] = 0;
        let mut queue = VecDeque::from([s]);
        while let Some(v) = queue.pop_front() {
            stack.push(v);
            for w in g.neighbors(v) {
                if dist[w] < 0 {
                    dist[w] = dist[v] + 1;
                    queue.push_back(w);
                }
                if dist[w] == dist[v] + 1 {
                    sigma[w] += sigma[v];
                    preds[w].push(v);
                }
            }
        }
        let mut delta = vec![0.0; n];
        while let Some(w) = stack.pop() {
            for &v in &preds[w] {
                delta[v] += sigma[v] / sigma[w] * (1.0 + delta[w]);
            }
            if w != s {
                cb[w] += delta[w];
            }
        }
    }
    // every unordered pair was counted once from each endpoint
    cb.iter_mut().for_each(|x| *x /= 2.0);
    cb
}

/// Power iteration on `PR(s) = (1-α)/N + α Σ_{j∈N(s)} PR(j)/|N(j)|`.
///
/// Isolated nodes have no out-links; their mass is spread uniformly so the
/// scores keep summing to one.
pub fn pagerank(g: &Adjacency, alpha: f64, tol: f64, max_iter: usize) -> Result<Vec<f64>, GraphError> {
    let n = g.len();
    if n == 0 {
        return Ok(Vec::new());
    }
    let deg = degree(g);
    let neighbors: Vec<Vec<usize>> = (0..n).map(|i| g.neighbors(i).collect()).collect();
    let mut pr = vec![1.0 / n as f64; n];
    for _ in 0..max_iter {
        let dangling: f64 = (0..n).filter(|&j| deg[j] == 0.0).map(|j| pr[j]).sum();
        let base = (1.0 - alpha) / n as f64 + alpha * dangling / n as f64;
        let next: Vec<f64> = (0..n)
            .map(|s| base + alpha * neighbors[s].iter().map(|&j| pr[j] / deg[j]).sum::<f64>())
            .collect();
        let change: f64 = next.iter().zip(&pr).map(|(a, b)| (a - b).abs()).sum();
        pr = next;
        if change < tol {
            return Ok(pr);
        }
    }
    Err(GraphError::NotConverged(max_iter))
}
