//! Propagation graph kernel over operator graphs.
//!
//! Each node starts with a one-hot distribution over its label. Every round
//! replaces a node's distribution by the mean over itself and its neighbours
//! in the symmetrized graph; before each update the distributions are hashed
//! into bins of width `w` shifted by a seeded offset, and two graphs score the
//! number of node pairs that share a bin. Scores are summed over rounds and
//! normalized to `K(a, b) / sqrt(K(a, a) K(b, b))`.

use std::collections::HashMap;

use thiserror::Error;

use crate::format::ModelGraph;

/// Labels are node degrees capped at this value.
pub const MAX_LABEL: u32 = 8;
const N_LABELS: usize = MAX_LABEL as usize + 1;

#[derive(Debug, Error, PartialEq)]
pub enum SimilarityError {
    #[error("graph has no nodes")]
    EmptyGraph,
    #[error("invalid kernel configuration: {0}")]
    BadConfig(String),
    #[error("invalid labeled graph: {0}")]
    BadGraph(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PKConfig {
    pub t_max: u32,
    pub bin_width: f64,
    pub seed: u64,
}

impl Default for PKConfig {
    fn default() -> Self {
        Self {
            t_max: 10,
            bin_width: 1e-5,
            seed: 0,
        }
    }
}

impl PKConfig {
    fn check(&self) -> Result<(), SimilarityError> {
        if self.t_max < 1 {
            return Err(SimilarityError::BadConfig("t_max must be at least 1".into()));
        }
        if !(self.bin_width > 0.0 && self.bin_width.is_finite()) {
            return Err(SimilarityError::BadConfig(format!("bin width {} must be positive", self.bin_width)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabeledGraph {
    pub n: usize,
    pub edges: Vec<(usize, usize)>,
    pub labels: Vec<u32>,
}

impl LabeledGraph {
    pub fn new(n: usize, edges: Vec<(usize, usize)>, labels: Vec<u32>) -> Result<Self, SimilarityError> {
        if labels.len() != n {
            return Err(SimilarityError::BadGraph(format!("{} labels for {n} nodes", labels.len())));
        }
        if let Some(&(u, v)) = edges.iter().find(|&&(u, v)| u >= n || v >= n || u == v) {
            return Err(SimilarityError::BadGraph(format!("edge ({u}, {v})")));
        }
        if let Some(&l) = labels.iter().find(|&&l| l > MAX_LABEL) {
            return Err(SimilarityError::BadGraph(format!("label {l} above {MAX_LABEL}")));
        }
        Ok(Self { n, edges, labels })
    }

    /// Labels every node with its total degree, capped at [`MAX_LABEL`].
    pub fn with_degree_labels(n: usize, edges: Vec<(usize, usize)>) -> Result<Self, SimilarityError> {
        let mut deg = vec![0u32; n];
        for &(u, v) in &edges {
            if u < n && v < n {
                deg[u] += 1;
                deg[v] += 1;
            }
        }
        Self::new(n, edges, deg.into_iter().map(|d| d.min(MAX_LABEL)).collect())
    }

    /// Sorted distinct neighbours of every node in the symmetrized graph.
    fn neighbours(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.n];
        for &(u, v) in &self.edges {
            adj[u].push(v);
            adj[v].push(u);
        }
        for a in &mut adj {
            a.sort_unstable();
            a.dedup();
        }
        adj
    }
}

/// One node per operator, an edge wherever an operator output is declared as
/// an input of another operator.
pub fn to_labeled_graph(graph: &ModelGraph) -> LabeledGraph {
    LabeledGraph::with_degree_labels(graph.operators.len(), graph.operator_edges())
        .expect("operator edges are in range and acyclic")
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

/// Offset in `[0, 1)` (in units of the bin width) for one round and label.
pub fn bin_offset(seed: u64, round: u32, label: u32) -> f64 {
    let h = splitmix64(seed ^ splitmix64(((round as u64) << 16) | label as u64));
    (h >> 11) as f64 / (1u64 << 53) as f64
}

type BinKey = Vec<(u8, i64)>;

fn bin_key(dist: &[f64; N_LABELS], round: u32, cfg: &PKConfig) -> BinKey {
    dist.iter()
        .enumerate()
        .filter(|(_, &p)| p > 0.0)
        .map(|(c, &p)| {
            let shift = bin_offset(cfg.seed, round, c as u32) * cfg.bin_width;
            (c as u8, ((p + shift) / cfg.bin_width).floor() as i64)
        })
        .collect()
}

/// Bin histogram of every round.
fn histograms(g: &LabeledGraph, cfg: &PKConfig) -> Vec<HashMap<BinKey, u64>> {
    let adj = g.neighbours();
    let mut dist: Vec<[f64; N_LABELS]> = g
        .labels
        .iter()
        .map(|&l| {
            let mut d = [0.0; N_LABELS];
            d[l as usize] = 1.0;
            d
        })
        .collect();
    let mut out = Vec::with_capacity(cfg.t_max as usize + 1);
    for round in 0..=cfg.t_max {
        let mut h = HashMap::new();
        for d in &dist {
            *h.entry(bin_key(d, round, cfg)).or_insert(0) += 1;
        }
        out.push(h);
        if round == cfg.t_max {
            break;
        }
        dist = (0..g.n)
            .map(|i| {
                // self plus neighbours, ascending node order
                let mut members = adj[i].clone();
                let at = members.partition_point(|&j| j < i);
                members.insert(at, i);
                let mut next = [0.0; N_LABELS];
                for (c, slot) in next.iter_mut().enumerate() {
                    let mut s = 0.0;
                    for &j in &members {
                        s += dist[j][c];
                    }
                    *slot = s / members.len() as f64;
                }
                next
            })
            .collect();
    }
    out
}

fn cross(a: &[HashMap<BinKey, u64>], b: &[HashMap<BinKey, u64>]) -> u128 {
    a.iter()
        .zip(b)
        .map(|(ha, hb)| {
            ha.iter()
                .filter_map(|(k, &ca)| hb.get(k).map(|&cb| ca as u128 * cb as u128))
                .sum::<u128>()
        })
        .sum()
}

/// Unnormalized kernel value `Σ_t k_t`.
pub fn raw_kernel(g1: &LabeledGraph, g2: &LabeledGraph, cfg: &PKConfig) -> Result<u128, SimilarityError> {
    cfg.check()?;
    if g1.n == 0 || g2.n == 0 {
        return Err(SimilarityError::EmptyGraph);
    }
    Ok(cross(&histograms(g1, cfg), &histograms(g2, cfg)))
}

/// Normalized similarity in `[0, 1]`.
pub fn propagation_kernel(g1: &LabeledGraph, g2: &LabeledGraph, cfg: &PKConfig) -> Result<f64, SimilarityError> {
    cfg.check()?;
    if g1.n == 0 || g2.n == 0 {
        return Err(SimilarityError::EmptyGraph);
    }
    let h1 = histograms(g1, cfg);
    let h2 = histograms(g2, cfg);
    Ok(normalize(cross(&h1, &h2), cross(&h1, &h1), cross(&h2, &h2)))
}

fn normalize(k12: u128, k11: u128, k22: u128) -> f64 {
    k12 as f64 / ((k11 as f64) * (k22 as f64)).sqrt()
}

/// Pairwise similarities; each graph's histograms are computed once.
pub fn similarity_matrix(graphs: &[LabeledGraph], cfg: &PKConfig) -> Result<Vec<Vec<f64>>, SimilarityError> {
    cfg.check()?;
    if graphs.iter().any(|g| g.n == 0) {
        return Err(SimilarityError::EmptyGraph);
    }
    let hs: Vec<_> = graphs.iter().map(|g| histograms(g, cfg)).collect();
    let selfk: Vec<u128> = hs.iter().map(|h| cross(h, h)).collect();
    let n = graphs.len();
    let mut m = vec![vec![0.0; n]; n];
    for i in 0..n {
        for j in i..n {
            let v = normalize(cross(&hs[i], &hs[j]), selfk[i], selfk[j]);
            m[i][j] = v;
            m[j][i] = v;
        }
    }
    Ok(m)
}

/// CSV with a header row and column, values to two decimals.
pub fn matrix_csv(names: &[String], m: &[Vec<f64>]) -> String {
    let mut out = String::from("model");
    for n in names {
        out.push(',');
        out.push_str(n);
    }
    out.push('\n');
    for (n, row) in names.iter().zip(m) {
        out.push_str(n);
        for v in row {
            out.push_str(&format!(",{v:.2}"));
        }
        out.push('\n');
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::format::{build_fixture, FixtureId};

    fn chain(n: usize) -> LabeledGraph {
        LabeledGraph::with_degree_labels(n, (1..n).map(|i| (i - 1, i)).collect()).unwrap()
    }

    #[test]
    fn chain_labels() {
        let g = chain(3);
        assert_eq!(g.edges, vec![(0, 1), (1, 2)]);
        assert_eq!(g.labels, vec![1, 2, 1]);
    }

    #[test]
    fn lenet_nodes() {
        let g = to_labeled_graph(&build_fixture(FixtureId::Lenet, 1));
        assert_eq!(g.n, 7);
        assert_eq!(g.edges.len(), 6);
    }

    #[test]
    fn self_similarity_and_symmetry() {
        let cfg = PKConfig::default();
        let a = chain(5);
        let b = to_labeled_graph(&build_fixture(FixtureId::Branchy, 1));
        assert!((propagation_kernel(&a, &a, &cfg).unwrap() - 1.0).abs() < 1e-9);
        let ab = propagation_kernel(&a, &b, &cfg).unwrap();
        assert_eq!(ab, propagation_kernel(&b, &a, &cfg).unwrap());
        assert!((0.0..=1.0).contains(&ab));
    }

    #[test]
    fn empty_graph_rejected() {
        let e = LabeledGraph::new(0, vec![], vec![]).unwrap();
        assert_eq!(
            propagation_kernel(&e, &chain(2), &PKConfig::default()),
            Err(SimilarityError::EmptyGraph)
        );
    }

    #[test]
    fn bad_inputs_rejected() {
        assert!(LabeledGraph::new(2, vec![(0, 0)], vec![0, 0]).is_err());
        assert!(LabeledGraph::new(2, vec![(0, 2)], vec![0, 0]).is_err());
        let cfg = PKConfig {
            bin_width: 0.0,
            ..PKConfig::default()
        };
        assert!(propagation_kernel(&chain(2), &chain(2), &cfg).is_err());
    }

    #[test]
    fn csv_layout() {
        let names = vec!["a".to_string(), "b".to_string()];
        let csv = matrix_csv(&names, &[vec![1.0, 0.5], vec![0.5, 1.0]]);
        assert_eq!(csv, "model,a,b\na,1.00,0.50\nb,0.50,1.00\n");
    }
}
