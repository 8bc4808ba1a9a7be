//! Proximity graph between substations and its topological descriptors.

mod centrality;
mod geo;

pub use centrality::{betweenness, closeness, clustering, degree, pagerank, topo_features, TopoFeatures};
pub use geo::{great_circle_km, LatLon, EARTH_RADIUS_KM};

use std::io::Write;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("invalid coordinate ({lat}, {lon})")]
    InvalidCoordinate { lat: f64, lon: f64 },
    #[error("invalid graph: {0}")]
    Invalid(String),
    #[error("pagerank did not converge within {0} iterations")]
    NotConverged(usize),
    #[error("csv: {0}")]
    Csv(String),
}

/// Symmetric binary adjacency matrix with self-loops on the diagonal.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Adjacency {
    n: usize,
    bits: Vec<bool>,
}

impl Adjacency {
    /// Graph on `n` nodes with the given undirected edges plus self-loops.
    pub fn from_edges(n: usize, edges: &[(usize, usize)]) -> Result<Self, GraphError> {
        let mut bits = vec![false; n * n];
        for i in 0..n {
            bits[i * n + i] = true;
        }
        for &(a, b) in edges {
            if a >= n || b >= n {
                return Err(GraphError::Invalid(format!("edge ({a}, {b}) out of range for {n} nodes")));
            }
            bits[a * n + b] = true;
            bits[b * n + a] = true;
        }
        Ok(Self { n, bits })
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn is_adjacent(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.n + j]
    }

    /// Neighbours of `i`, excluding `i` itself.
    pub fn neighbors(&self, i: usize) -> impl Iterator<Item = usize> + '_ {
        (0..self.n).filter(move |&j| j != i && self.bits[i * self.n + j])
    }

    /// Undirected edges `(i, j)` with `i < j`.
    pub fn edges(&self) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for i in 0..self.n {
            for j in i + 1..self.n {
                if self.is_adjacent(i, j) {
                    out.push((i, j));
                }
            }
        }
        out
    }

    /// 0/1 sub-matrix over `nodes`, row-major, in the given order.
    pub fn sub_mask(&self, nodes: &[usize]) -> Vec<f64> {
        let mut out = Vec::with_capacity(nodes.len() * nodes.len());
        for &i in nodes {
            for &j in nodes {
                out.push(if self.is_adjacent(i, j) { 1.0 } else { 0.0 });
            }
        }
        out
    }

    /// Relabels nodes: node `i` of `self` becomes node `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        let n = self.n;
        let mut bits = vec![false; n * n];
        for i in 0..n {
            for j in 0..n {
                bits[perm[i] * n + perm[j]] = self.bits[i * n + j];
            }
        }
        Self { n, bits }
    }

    pub fn mean_degree(&self) -> f64 {
        if self.n == 0 {
            return 0.0;
        }
        (0..self.n).map(|i| self.neighbors(i).count()).sum::<usize>() as f64 / self.n as f64
    }
}

/// Substations, their coordinates and the proximity adjacency.
#[derive(Clone, Debug, PartialEq)]
pub struct GridGraph {
    pub coords: Vec<LatLon>,
    pub tau_km: f64,
    pub adjacency: Adjacency,
}

impl GridGraph {
    /// Connects every pair closer than `tau_km` (strictly) along the great
    /// circle. The diagonal is always set.
    pub fn build(coords: Vec<LatLon>, tau_km: f64) -> Result<Self, GraphError> {
        if coords.len() < 2 {
            return Err(GraphError::Invalid(format!("need at least 2 substations, got {}", coords.len())));
        }
        if !(tau_km > 0.0) {
            return Err(GraphError::Invalid(format!("proximity threshold must be positive, got {tau_km}")));
        }
        let n = coords.len();
        let mut edges = Vec::new();
        for i in 0..n {
            for j in i + 1..n {
                if great_circle_km(coords[i], coords[j])? < tau_km {
                    edges.push((i, j));
                }
            }
        }
        let adjacency = Adjacency::from_edges(n, &edges)?;
        Ok(Self { coords, tau_km, adjacency })
    }

    pub fn len(&self) -> usize {
        self.coords.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
}

/// Writes `src,dst` rows, one per undirected edge.
pub fn write_edges_csv<W: Write>(adjacency: &Adjacency, names: &[String], out: W) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["src", "dst"]).map_err(csv_err)?;
    for (i, j) in adjacency.edges() {
        w.write_record([names[i].as_str(), names[j].as_str()]).map_err(csv_err)?;
    }
    w.flush().map_err(|e| GraphError::Csv(e.to_string()))
}

/// Writes `node,degree,betweenness,closeness,pagerank,clustering` rows.
pub fn write_features_csv<W: Write>(features: &TopoFeatures, names: &[String], out: W) -> Result<(), GraphError> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["node", "degree", "betweenness", "closeness", "pagerank", "clustering"]).map_err(csv_err)?;
    for (i, name) in names.iter().enumerate() {
        w.write_record([
            name.clone(),
            features.degree[i].to_string(),
            features.betweenness[i].to_string(),
            features.closeness[i].to_string(),
            features.pagerank[i].to_string(),
            features.clustering[i].to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| GraphError::Csv(e.to_string()))
}

fn csv_err(e: csv::Error) -> GraphError {
    GraphError::Csv(e.to_string())
}
