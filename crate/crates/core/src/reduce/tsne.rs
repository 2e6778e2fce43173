use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{points_of, squared, Reduction2D, ReductionMethod};
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};

const ENTROPY_TOLERANCE: f64 = 1e-4;
const BISECTION_CAP: usize = 50;
const EXAGGERATION: f64 = 12.0;
const EXAGGERATION_ITERATIONS: usize = 250;
const INITIAL_SD: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TsneParams {
    /// `min(30, (n - 1) / 3)` when unset.
    pub perplexity: Option<f64>,
    pub iterations: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TsneParams {
    fn default() -> Self {
        Self {
            perplexity: None,
            iterations: 1000,
            learning_rate: 200.0,
            seed: 42,
        }
    }
}

/// Conditional probabilities of row `i` at precision `beta`, and their entropy.
fn row_distribution(d: &[f64], i: usize, beta: f64, out: &mut [f64]) -> f64 {
    let floor = d
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != i)
        .map(|(_, &x)| x)
        .fold(f64::INFINITY, f64::min);
    let mut sum = 0.0;
    let mut weighted = 0.0;
    for (j, (&dj, p)) in d.iter().zip(out.iter_mut()).enumerate() {
        if j == i {
            *p = 0.0;
            continue;
        }
        let shifted = dj - floor;
        *p = (-beta * shifted).exp();
        sum += *p;
        weighted += shifted * *p;
    }
    out.iter_mut().for_each(|p| *p /= sum);
    sum.ln() + beta * weighted / sum
}

struct Affinities {
    /// Symmetrised joint probabilities, row-major.
    p: Vec<f64>,
    cap_hits: usize,
    max_entropy_error: f64,
}

fn affinities(dist2: &[Vec<f64>], perplexity: f64) -> Affinities {
    let n = dist2.len();
    let target = perplexity.ln();
    let rows: Vec<(Vec<f64>, f64, bool)> = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut row = vec![0.0; n];
            let (mut beta, mut lo, mut hi) = (1.0, 0.0, f64::INFINITY);
            let mut err = f64::INFINITY;
            for _ in 0..BISECTION_CAP {
                let h = row_distribution(&dist2[i], i, beta, &mut row);
                err = h - target;
                if err.abs() < ENTROPY_TOLERANCE {
                    return (row, err.abs(), false);
                }
                if err > 0.0 {
                    lo = beta;
                    beta = if hi.is_finite() { (beta + hi) / 2.0 } else { beta * 2.0 };
                } else {
                    hi = beta;
                    beta = (beta + lo) / 2.0;
                }
            }
            (row, err.abs(), true)
        })
        .collect();
    let mut p = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            p[i * n + j] = ((rows[i].0[j] + rows[j].0[i]) / (2.0 * n as f64)).max(1e-12);
        }
        p[i * n + i] = 0.0;
    }
    Affinities {
        p,
        cap_hits: rows.iter().filter(|r| r.2).count(),
        max_entropy_error: rows.iter().map(|r| r.1).fold(0.0, f64::max),
    }
}

/// Student-t kernel rows and their total.
fn kernel(y: &[[f64; 2]]) -> (Vec<f64>, f64) {
    let n = y.len();
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if i == j {
                        0.0
                    } else {
                        let (dx, dy) = (y[i][0] - y[j][0], y[i][1] - y[j][1]);
                        1.0 / (1.0 + dx * dx + dy * dy)
                    }
                })
                .collect()
        })
        .collect();
    let z: f64 = rows.iter().map(|r| r.iter().sum::<f64>()).sum();
    (rows.concat(), z)
}

fn kl_divergence(p: &[f64], q_num: &[f64], z: f64) -> f64 {
    p.iter()
        .zip(q_num)
        .filter(|(&pij, _)| pij > 0.0)
        .map(|(&pij, &num)| pij * (pij / (num / z).max(1e-300)).ln())
        .sum()
}

/// Exact t-SNE to two dimensions.
pub fn tsne(vectors: &EmbeddingSet, params: &TsneParams) -> Result<Reduction2D> {
    let (ids, points) = points_of(vectors);
    let n = points.len();
    if n < 5 {
        return Err(Error::Size(format!("t-SNE needs at least 5 points, got {n}")));
    }
    let max_perplexity = (n - 1) as f64 / 3.0;
    let perplexity = params.perplexity.unwrap_or_else(|| max_perplexity.min(30.0));
    if !(1.0..=max_perplexity).contains(&perplexity) {
        return Err(Error::Config(format!(
            "perplexity {perplexity} outside [1, {max_perplexity}] for {n} points"
        )));
    }
    if !(params.learning_rate > 0.0) {
        return Err(Error::Config("t-SNE learning_rate must be positive".into()));
    }

    let dist2: Vec<Vec<f64>> = points.iter().map(|a| points.iter().map(|b| squared(a, b)).collect()).collect();
    let aff = affinities(&dist2, perplexity);
    if aff.cap_hits > 0 {
        log::warn!("{} t-SNE bandwidth searches hit the bisection cap", aff.cap_hits);
    }
    let p = aff.p;

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let normal = Normal::new(0.0, INITIAL_SD).expect("valid normal");
    let mut y: Vec<[f64; 2]> = (0..n).map(|_| [normal.sample(&mut rng), normal.sample(&mut rng)]).collect();
    let mut update = vec![[0.0; 2]; n];
    let mut gains = vec![[1.0f64; 2]; n];

    let (num, z) = kernel(&y);
    let kl_initial = kl_divergence(&p, &num, z);

    for it in 0..params.iterations {
        let exaggeration = if it < EXAGGERATION_ITERATIONS { EXAGGERATION } else { 1.0 };
        let momentum = if it < EXAGGERATION_ITERATIONS { 0.5 } else { 0.8 };
        let (num, z) = kernel(&y);
        let grad: Vec<[f64; 2]> = (0..n)
            .into_par_iter()
            .map(|i| {
                let mut g = [0.0; 2];
                for j in 0..n {
                    let q = num[i * n + j];
                    let m = (exaggeration * p[i * n + j] - q / z) * q;
                    g[0] += m * (y[i][0] - y[j][0]);
                    g[1] += m * (y[i][1] - y[j][1]);
                }
                [4.0 * g[0], 4.0 * g[1]]
            })
            .collect();
        if grad.iter().flatten().any(|g| !g.is_finite()) {
            return Err(Error::Divergence { iteration: it });
        }
        for i in 0..n {
            for c in 0..2 {
                let (g, u) = (grad[i][c], update[i][c]);
                gains[i][c] = if (g > 0.0) != (u > 0.0) { gains[i][c] + 0.2 } else { gains[i][c] * 0.8 };
                gains[i][c] = gains[i][c].max(0.01);
                update[i][c] = momentum * u - params.learning_rate * gains[i][c] * g;
                y[i][c] += update[i][c];
            }
        }
        for c in 0..2 {
            let mean = y.iter().map(|r| r[c]).sum::<f64>() / n as f64;
            y.iter_mut().for_each(|r| r[c] -= mean);
        }
    }

    let (num, z) = kernel(&y);
    let kl_final = kl_divergence(&p, &num, z);
    let diag = BTreeMap::from([
        ("kl_initial".into(), kl_initial),
        ("kl_final".into(), kl_final),
        ("perplexity".into(), perplexity),
        ("bisection_cap_hits".into(), aff.cap_hits as f64),
        ("max_entropy_error".into(), aff.max_entropy_error),
        ("iterations".into(), params.iterations as f64),
    ]);
    Reduction2D::from_rows(ReductionMethod::Tsne, &ids, &y, diag)
}
