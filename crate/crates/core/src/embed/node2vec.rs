//! Node2Vec: second-order biased random walks fed to skip-gram with
//! negative sampling.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;

use super::sampling::{uniform_step, NegativeSampler};
use super::{check_method, collect_rows, provenance, EmbeddingConfig, EmbeddingSet, Method, Node2VecParams};
use crate::error::Result;
use crate::projection::ProjectedGraph;

#[derive(Clone, Debug, PartialEq)]
pub struct Node2VecStats {
    pub walks: usize,
    /// Positive (center, context) pairs visited in one epoch.
    pub pairs_per_epoch: usize,
    pub epochs: usize,
}

/// Number of `(center, context)` pairs a walk of `len` nodes yields with a
/// symmetric window of `window`.
pub fn window_pair_count(len: usize, window: usize) -> usize {
    (0..len)
        .map(|i| {
            let lo = i.saturating_sub(window);
            let hi = (i + window).min(len.saturating_sub(1));
            hi - lo
        })
        .sum()
}

fn biased_step<R: Rng + ?Sized>(
    adjacency: &[Vec<usize>],
    prev: usize,
    cur: usize,
    p: f64,
    q: f64,
    rng: &mut R,
) -> Option<usize> {
    let nbrs = &adjacency[cur];
    if nbrs.is_empty() {
        return None;
    }
    if p == 1.0 && q == 1.0 {
        return Some(nbrs[rng.random_range(0..nbrs.len())]);
    }
    let weight = |x: usize| {
        if x == prev {
            1.0 / p
        } else if adjacency[prev].binary_search(&x).is_ok() {
            1.0
        } else {
            1.0 / q
        }
    };
    let total: f64 = nbrs.iter().map(|&x| weight(x)).sum();
    let mut r = rng.random::<f64>() * total;
    for &x in nbrs {
        r -= weight(x);
        if r < 0.0 {
            return Some(x);
        }
    }
    nbrs.last().copied()
}

fn walks_with<R: Rng + ?Sized>(view: &ProjectedGraph<'_>, params: &Node2VecParams, rng: &mut R) -> Vec<Vec<usize>> {
    let adjacency = view.adjacency();
    let (p, q) = (params.return_factor, params.in_out_factor);
    let mut walks = Vec::with_capacity(view.node_count() * params.walks_per_node);
    for _ in 0..params.walks_per_node {
        for start in 0..view.node_count() {
            let mut walk = Vec::with_capacity(params.walk_length);
            walk.push(start);
            if let Some(first) = uniform_step(adjacency, start, rng) {
                walk.push(first);
                while walk.len() < params.walk_length {
                    let (prev, cur) = (walk[walk.len() - 2], walk[walk.len() - 1]);
                    match biased_step(adjacency, prev, cur, p, q, rng) {
                        Some(next) => walk.push(next),
                        None => break,
                    }
                }
            }
            walks.push(walk);
        }
    }
    walks
}

/// The walk corpus Node2Vec trains on, as dense view indices. Walks stop
/// early at nodes without outgoing neighbours.
pub fn random_walks(view: &ProjectedGraph<'_>, params: &Node2VecParams, seed: u64) -> Vec<Vec<usize>> {
    walks_with(view, params, &mut ChaCha8Rng::seed_from_u64(seed))
}

pub fn node2vec(view: &ProjectedGraph<'_>, cfg: &EmbeddingConfig) -> Result<EmbeddingSet> {
    node2vec_with_stats(view, cfg).map(|(set, _)| set)
}

pub fn node2vec_with_stats(view: &ProjectedGraph<'_>, cfg: &EmbeddingConfig) -> Result<(EmbeddingSet, Node2VecStats)> {
    check_method(cfg, Method::Node2vec)?;
    let params = &cfg.node2vec;
    let dim = cfg.dimension;
    let n = view.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    if view.edges().is_empty() {
        log::warn!("projection {} has no edges; node2vec vectors stay at their initial values", view.name());
    }

    let walks = walks_with(view, params, &mut rng);

    let scale = 0.5 / dim as f64;
    let mut input: Vec<f64> = (0..n * dim).map(|_| rng.random_range(-scale..scale)).collect();
    let mut output = vec![0.0; n * dim];

    let mut counts = vec![0.0; n];
    for walk in &walks {
        for &v in walk {
            counts[v] += 1.0;
        }
    }
    let sampler = NegativeSampler::from_counts(&counts);

    let pairs_per_epoch: usize = walks
        .iter()
        .map(|w| window_pair_count(w.len(), params.window))
        .sum();
    let total = (pairs_per_epoch * params.epochs).max(1) as f64;
    let floor = params.min_learning_rate.min(params.learning_rate);

    let mut step = 0usize;
    let mut grad = vec![0.0; dim];
    for _ in 0..params.epochs {
        for walk in &walks {
            for (i, &center) in walk.iter().enumerate() {
                let lo = i.saturating_sub(params.window);
                let hi = (i + params.window).min(walk.len() - 1);
                for (j, &context) in walk.iter().enumerate().take(hi + 1).skip(lo) {
                    if j == i {
                        continue;
                    }
                    let lr = (params.learning_rate * (1.0 - step as f64 / total)).max(floor);
                    step += 1;
                    grad.iter_mut().for_each(|g| *g = 0.0);
                    let h = center * dim;

                    let update = |target: usize, label: f64, output: &mut [f64], grad: &mut [f64]| {
                        let o = target * dim;
                        let dot: f64 = (0..dim).map(|k| input[h + k] * output[o + k]).sum();
                        let g = (label - sigmoid(dot)) * lr;
                        for k in 0..dim {
                            grad[k] += g * output[o + k];
                            output[o + k] += g * input[h + k];
                        }
                    };
                    update(context, 1.0, &mut output, &mut grad);
                    for _ in 0..params.negative_samples {
                        match sampler.sample(&mut rng) {
                            Some(neg) if neg != context => update(neg, 0.0, &mut output, &mut grad),
                            _ => {}
                        }
                    }
                    for k in 0..dim {
                        input[h + k] += grad[k];
                    }
                }
            }
        }
    }

    let stats = Node2VecStats {
        walks: walks.len(),
        pairs_per_epoch,
        epochs: params.epochs,
    };
    debug_assert_eq!(step, pairs_per_epoch * params.epochs);
    let set = EmbeddingSet::new(provenance(view, cfg, true), collect_rows(view, &input, dim))?;
    Ok((set, stats))
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}
