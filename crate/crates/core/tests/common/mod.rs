//! Brute-force propagation kernel: dense adjacency with self loops, explicit
//! bin keys and pairwise key comparison.

#![allow(dead_code)]

use nnveil_core::similarity::{LabeledGraph, PKConfig, MAX_LABEL};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub const L: usize = MAX_LABEL as usize + 1;

fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e3779b97f4a7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

pub fn offset(seed: u64, round: u32, label: usize) -> f64 {
    let h = mix(seed ^ mix(((round as u64) << 16) | label as u64));
    (h >> 11) as f64 * (1.0 / 9007199254740992.0)
}

/// Per-round bin keys of every node: (label, bin) for each positive entry.
fn keys(n: usize, edges: &[(usize, usize)], labels: &[u32], cfg: &PKConfig) -> Vec<Vec<Vec<(usize, i64)>>> {
    // adjacency with self loops, symmetrized, as a 0/1 matrix
    let mut a = vec![vec![0u8; n]; n];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = 1;
    }
    for &(u, v) in edges {
        a[u][v] = 1;
        a[v][u] = 1;
    }
    let mut p = vec![vec![0.0f64; L]; n];
    for (i, &l) in labels.iter().enumerate() {
        p[i][l as usize] = 1.0;
    }
    let mut rounds = Vec::new();
    for t in 0..=cfg.t_max {
        rounds.push(
            p.iter()
                .map(|row| {
                    (0..L)
                        .filter(|&c| row[c] > 0.0)
                        .map(|c| {
                            let shifted = row[c] + offset(cfg.seed, t, c) * cfg.bin_width;
                            (c, (shifted / cfg.bin_width).floor() as i64)
                        })
                        .collect()
                })
                .collect(),
        );
        let mut next = vec![vec![0.0f64; L]; n];
        for i in 0..n {
            let deg: u32 = a[i].iter().map(|&x| x as u32).sum();
            for (c, slot) in next[i].iter_mut().enumerate() {
                let mut s = 0.0;
                for j in 0..n {
                    if a[i][j] == 1 {
                        s += p[j][c];
                    }
                }
                *slot = s / deg as f64;
            }
        }
        p = next;
    }
    rounds
}

pub fn reference(g1: &LabeledGraph, g2: &LabeledGraph, cfg: &PKConfig) -> u128 {
    let k1 = keys(g1.n, &g1.edges, &g1.labels, cfg);
    let k2 = keys(g2.n, &g2.edges, &g2.labels, cfg);
    let mut total = 0u128;
    for (r1, r2) in k1.iter().zip(&k2) {
        for a in r1 {
            for b in r2 {
                if a == b {
                    total += 1;
                }
            }
        }
    }
    total
}

pub fn random_graph(rng: &mut ChaCha8Rng) -> LabeledGraph {
    let n = rng.gen_range(1..=14);
    let mut edges = Vec::new();
    if n > 1 {
        for _ in 0..rng.gen_range(0..=2 * n) {
            let u = rng.gen_range(0..n);
            let v = rng.gen_range(0..n);
            if u != v {
                edges.push((u, v));
            }
        }
    }
    if rng.gen_bool(0.5) {
        LabeledGraph::with_degree_labels(n, edges).unwrap()
    } else {
        let labels = (0..n).map(|_| rng.gen_range(0..=MAX_LABEL)).collect();
        LabeledGraph::new(n, edges, labels).unwrap()
    }
}

/// Every graph on up to `max_n` nodes whose edge set (ordered pairs u < v)
/// has at most `max_e` edges, labelled by degree.
pub fn small_graphs(max_n: usize, max_e: usize) -> Vec<LabeledGraph> {
    let mut out = Vec::new();
    for n in 1..=max_n {
        let pairs: Vec<(usize, usize)> = (0..n).flat_map(|u| (u + 1..n).map(move |v| (u, v))).collect();
        for mask in 0u32..(1 << pairs.len()) {
            if mask.count_ones() as usize > max_e {
                continue;
            }
            let edges = pairs.iter().enumerate().filter(|(i, _)| mask >> i & 1 == 1).map(|(_, &e)| e).collect();
            out.push(LabeledGraph::with_degree_labels(n, edges).unwrap());
        }
    }
    out
}
