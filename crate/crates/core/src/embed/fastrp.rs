//! FastRP: very sparse random base vectors propagated by repeated
//! degree-normalised neighbour averaging.

use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{check_method, collect_rows, provenance, EmbeddingConfig, EmbeddingSet, Method};
use crate::error::Result;
use crate::graph::NodeId;
use crate::projection::ProjectedGraph;

fn splitmix64(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// Sparse random vector for `node`: each entry is `+√3` or `-√3` with
/// probability 1/6 and `0` with probability 2/3. A pure function of
/// `(seed, node)`, so it does not depend on iteration order or threads.
pub fn base_vector(seed: u64, node: NodeId, dim: usize) -> Vec<f64> {
    let s = 3f64.sqrt();
    let mut rng = ChaCha8Rng::seed_from_u64(splitmix64(seed ^ splitmix64(node)));
    (0..dim)
        .map(|_| {
            let u: f64 = rng.random();
            if u < 1.0 / 6.0 {
                s
            } else if u < 1.0 / 3.0 {
                -s
            } else {
                0.0
            }
        })
        .collect()
}

fn normalize(v: &mut [f64]) {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm > 0.0 {
        v.iter_mut().for_each(|x| *x /= norm);
    }
}

pub fn fastrp(view: &ProjectedGraph<'_>, cfg: &EmbeddingConfig) -> Result<EmbeddingSet> {
    check_method(cfg, Method::Fastrp)?;
    let dim = cfg.dimension;
    let params = &cfg.fastrp;
    let n = view.node_count();
    let ids = view.nodes();

    let initial = |i: usize| {
        let mut v = base_vector(cfg.seed, ids[i], dim);
        let deg = view.degree(i).max(1) as f64;
        let scale = deg.powf(params.normalization_strength);
        v.iter_mut().for_each(|x| *x *= scale);
        normalize(&mut v);
        v
    };
    let mut current: Vec<Vec<f64>> = if cfg.parallel {
        (0..n).into_par_iter().map(initial).collect()
    } else {
        (0..n).map(initial).collect()
    };

    let mut out = vec![0.0; n * dim];
    let accumulate = |out: &mut [f64], layer: &[Vec<f64>], weight: f64| {
        if weight != 0.0 {
            for (i, v) in layer.iter().enumerate() {
                for (o, x) in out[i * dim..(i + 1) * dim].iter_mut().zip(v) {
                    *o += weight * x;
                }
            }
        }
    };
    accumulate(&mut out, &current, params.iteration_weights[0]);

    for &weight in &params.iteration_weights[1..] {
        let step = |i: usize| {
            let mut v = vec![0.0; dim];
            let nbrs = view.neighbors(i);
            if nbrs.is_empty() {
                return v;
            }
            for &j in nbrs {
                for (a, b) in v.iter_mut().zip(&current[j]) {
                    *a += b;
                }
            }
            let inv = 1.0 / nbrs.len() as f64;
            v.iter_mut().for_each(|x| *x *= inv);
            normalize(&mut v);
            v
        };
        let next: Vec<Vec<f64>> = if cfg.parallel {
            (0..n).into_par_iter().map(step).collect()
        } else {
            (0..n).map(step).collect()
        };
        accumulate(&mut out, &next, weight);
        current = next;
    }

    EmbeddingSet::new(provenance(view, cfg, true), collect_rows(view, &out, dim))
}
