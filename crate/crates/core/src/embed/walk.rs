use rand::Rng;
use rayon::prelude::*;

use crate::covis::CovisGraph;
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WalkConfig {
    /// Return parameter.
    pub p: f64,
    /// In-out parameter.
    pub q: f64,
    pub walk_len: usize,
    pub walks_per_node: usize,
    pub rng_seed: u64,
}

impl Default for WalkConfig {
    fn default() -> Self {
        Self {
            p: 0.25,
            q: 4.0,
            walk_len: 40,
            walks_per_node: 10,
            rng_seed: 0,
        }
    }
}

impl WalkConfig {
    pub fn validate(&self) -> Result<()> {
        if self.p > 0.0 && self.q > 0.0 && self.walk_len >= 2 && self.walks_per_node >= 1 {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("bad walk config {self:?}")))
        }
    }
}

/// Unnormalized second-order transition weights out of `current` (graph
/// indices) given the node visited before it.
pub fn transition_weights(g: &CovisGraph, prev: Option<usize>, current: usize, p: f64, q: f64) -> Vec<(usize, f64)> {
    let nbrs = g.neighbors_of_index(current);
    match prev {
        None => nbrs.to_vec(),
        Some(prev) => {
            let prev_nbrs = g.neighbors_of_index(prev);
            nbrs.iter()
                .map(|&(x, w)| {
                    let bias = if x == prev {
                        1.0 / p
                    } else if prev_nbrs.binary_search_by_key(&x, |e| e.0).is_ok() {
                        1.0
                    } else {
                        1.0 / q
                    };
                    (x, w * bias)
                })
                .collect()
        }
    }
}

fn sample(weights: &[(usize, f64)], rng: &mut impl Rng) -> usize {
    let total: f64 = weights.iter().map(|e| e.1).sum();
    let mut u = rng.gen::<f64>() * total;
    for &(x, w) in weights {
        if u < w {
            return x;
        }
        u -= w;
    }
    weights.last().expect("nonempty").0
}

/// Biased random walks, `walks_per_node` per start node, ordered by start
/// node id then repetition. Each start node draws from its own stream.
pub fn node2vec_walks(g: &CovisGraph, cfg: &WalkConfig) -> Result<Vec<Vec<u32>>> {
    cfg.validate()?;
    if g.is_empty() {
        return Err(Error::InvalidConfig("empty covisibility graph".into()));
    }
    let per_node: Vec<Vec<Vec<u32>>> = (0..g.len())
        .into_par_iter()
        .map(|start| {
            let mut rng = rng::tagged_stream(cfg.rng_seed, "walk", u64::from(g.nodes()[start]));
            (0..cfg.walks_per_node)
                .map(|_| {
                    let mut walk = vec![start];
                    let mut prev = None;
                    while walk.len() < cfg.walk_len {
                        let cur = *walk.last().expect("nonempty");
                        let weights = transition_weights(g, prev, cur, cfg.p, cfg.q);
                        if weights.is_empty() {
                            break;
                        }
                        let next = sample(&weights, &mut rng);
                        prev = Some(cur);
                        walk.push(next);
                    }
                    walk.into_iter().map(|i| g.nodes()[i]).collect()
                })
                .collect()
        })
        .collect();
    Ok(per_node.into_iter().flatten().collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn path_graph() -> CovisGraph {
        let mut g = CovisGraph::new(vec![0, 1, 2], 0.2, 8.0);
        g.add_edge(0, 1, 1.0).unwrap();
        g.add_edge(1, 2, 1.0).unwrap();
        g
    }

    #[test]
    fn return_probability_on_path_graph() {
        let g = path_graph();
        let w = transition_weights(&g, Some(0), 1, 0.25, 4.0);
        assert_eq!(w, vec![(0, 4.0), (2, 0.25)]);
        let p_return = w[0].1 / (w[0].1 + w[1].1);
        assert!((p_return - 0.9412).abs() < 1e-4);
    }

    #[test]
    fn isolated_node_walk_is_singleton() {
        let mut g = CovisGraph::new(vec![3, 5, 8], 0.2, 8.0);
        g.add_edge(3, 5, 0.5).unwrap();
        let walks = node2vec_walks(&g, &WalkConfig { walks_per_node: 2, ..Default::default() }).unwrap();
        assert_eq!(walks.len(), 6);
        assert_eq!(walks[4], vec![8]);
        assert_eq!(walks[5], vec![8]);
        assert_eq!(walks[0].len(), 40);
    }

    #[test]
    fn walks_follow_edges_and_are_deterministic() {
        let g = path_graph();
        let cfg = WalkConfig { rng_seed: 9, ..Default::default() };
        let a = node2vec_walks(&g, &cfg).unwrap();
        assert_eq!(a, node2vec_walks(&g, &cfg).unwrap());
        for walk in &a {
            for pair in walk.windows(2) {
                assert!(g.weight(pair[0], pair[1]).is_some());
            }
        }
    }

    #[test]
    fn rejects_bad_config() {
        let g = path_graph();
        assert!(node2vec_walks(&g, &WalkConfig { p: 0.0, ..Default::default() }).is_err());
        assert!(node2vec_walks(&g, &WalkConfig { walk_len: 1, ..Default::default() }).is_err());
    }
}
