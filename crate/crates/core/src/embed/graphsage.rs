//! GraphSAGE with the mean aggregator, trained without labels: nodes that
//! co-occur on short random walks are pulled together, nodes drawn from a
//! degree-based noise distribution are pushed apart.

use rand::prelude::*;
use rand::seq::index;
use rand_chacha::ChaCha8Rng;

use super::sampling::{uniform_step, NegativeSampler};
use super::{check_method, collect_rows, provenance, EmbeddingConfig, EmbeddingSet, Method};
use crate::error::{Error, Result};
use crate::projection::ProjectedGraph;

/// Dense row-major matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Matrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl Matrix {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Self {
            rows,
            cols,
            data: vec![0.0; rows * cols],
        }
    }

    pub fn from_fn(rows: usize, cols: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(rows * cols);
        for r in 0..rows {
            for c in 0..cols {
                data.push(f(r, c));
            }
        }
        Self { rows, cols, data }
    }

    pub fn get(&self, r: usize, c: usize) -> f64 {
        self.data[r * self.cols + c]
    }

    pub fn row(&self, r: usize) -> &[f64] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    pub fn row_mut(&mut self, r: usize) -> &mut [f64] {
        &mut self.data[r * self.cols..(r + 1) * self.cols]
    }
}

/// Node features: each label's numeric projection properties, z-normalised
/// within the label and zero-padded to the widest label. Labels without
/// numeric properties get `[ln(1 + degree)]` when `degree_fallback` is set.
pub fn build_features(view: &ProjectedGraph<'_>, degree_fallback: bool) -> Result<Matrix> {
    let schema = view.feature_schema();
    let n = view.node_count();
    let bare: Vec<&String> = schema.iter().filter(|(_, p)| p.is_empty()).map(|(l, _)| l).collect();
    if !bare.is_empty() && !degree_fallback {
        return Err(Error::Feature(format!(
            "labels {bare:?} have no numeric properties and degree fallback is off"
        )));
    }
    let width = schema.values().map(Vec::len).max().unwrap_or(0).max(usize::from(!bare.is_empty()));
    let mut x = Matrix::zeros(n, width.max(1));
    let graph = view.graph();

    for (label, properties) in schema {
        let members: Vec<usize> = (0..n).filter(|&i| view.label_of(i) == label).collect();
        if properties.is_empty() {
            for &i in &members {
                x.row_mut(i)[0] = (1.0 + view.degree(i) as f64).ln();
            }
            continue;
        }
        for (c, prop) in properties.iter().enumerate() {
            let values: Vec<Option<f64>> = members
                .iter()
                .map(|&i| graph.node(view.nodes()[i]).ok().and_then(|nd| nd.property(prop)).and_then(|v| v.as_f64()))
                .collect();
            let present: Vec<f64> = values.iter().flatten().copied().collect();
            if present.is_empty() {
                continue;
            }
            let mean = present.iter().sum::<f64>() / present.len() as f64;
            let var = present.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / present.len() as f64;
            let sd = var.sqrt();
            for (&i, v) in members.iter().zip(&values) {
                // Missing values sit at the label mean.
                x.row_mut(i)[c] = match v {
                    Some(v) if sd > 0.0 => (v - mean) / sd,
                    _ => 0.0,
                };
            }
        }
    }
    Ok(x)
}

/// Layer weights; layer `k` maps `concat(h_self, mean(h_neighbours))` of
/// width `2 * in_k` to `out_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct SageModel {
    pub weights: Vec<Matrix>,
}

struct Forward {
    /// Per-layer input `H_k` and neighbour mean `A_k`.
    inputs: Vec<Matrix>,
    means: Vec<Matrix>,
    /// Per-layer pre-activation.
    pre: Vec<Matrix>,
    output: Matrix,
}

impl SageModel {
    fn xavier<R: Rng + ?Sized>(dims: &[usize], rng: &mut R) -> Self {
        let weights = dims
            .windows(2)
            .map(|w| {
                let (inp, out) = (2 * w[0], w[1]);
                let bound = (6.0 / (inp + out) as f64).sqrt();
                Matrix::from_fn(out, inp, |_, _| rng.random_range(-bound..bound))
            })
            .collect();
        Self { weights }
    }

    /// `layers` layers of `[I | 0]`: each node's output is its own
    /// (rectified, then normalised) feature vector.
    pub fn identity(dim: usize, layers: usize) -> Self {
        let w = Matrix::from_fn(dim, 2 * dim, |r, c| f64::from(u8::from(r == c)));
        Self {
            weights: vec![w; layers],
        }
    }

    /// L2-normalised embeddings using full neighbourhoods at every layer.
    pub fn forward(&self, features: &Matrix, adjacency: &[Vec<usize>]) -> Matrix {
        let per_layer: Vec<&[Vec<usize>]> = vec![adjacency; self.weights.len()];
        self.run(features, &per_layer).output
    }

    fn run(&self, features: &Matrix, neighbours: &[&[Vec<usize>]]) -> Forward {
        let n = features.rows;
        let last = self.weights.len() - 1;
        let mut inputs = Vec::with_capacity(self.weights.len());
        let mut means = Vec::with_capacity(self.weights.len());
        let mut pre = Vec::with_capacity(self.weights.len());
        let mut h = features.clone();
        for (k, w) in self.weights.iter().enumerate() {
            let d = h.cols;
            let mut a = Matrix::zeros(n, d);
            for v in 0..n {
                let nb = &neighbours[k][v];
                if nb.is_empty() {
                    continue;
                }
                let inv = 1.0 / nb.len() as f64;
                let row = a.row_mut(v);
                for &u in nb {
                    for (x, y) in row.iter_mut().zip(h.row(u)) {
                        *x += y * inv;
                    }
                }
            }
            let mut z = Matrix::zeros(n, w.rows);
            for v in 0..n {
                let (hs, am) = (h.row(v), a.row(v));
                for o in 0..w.rows {
                    let wr = w.row(o);
                    let s: f64 = wr[..d].iter().zip(hs).map(|(p, q)| p * q).sum::<f64>()
                        + wr[d..].iter().zip(am).map(|(p, q)| p * q).sum::<f64>();
                    z.data[v * w.rows + o] = s;
                }
            }
            let next = if k < last {
                Matrix {
                    rows: z.rows,
                    cols: z.cols,
                    data: z.data.iter().map(|&x| x.max(0.0)).collect(),
                }
            } else {
                z.clone()
            };
            inputs.push(h);
            means.push(a);
            pre.push(z);
            h = next;
        }
        let mut output = h;
        let d = output.cols;
        for v in 0..n {
            let row = output.row_mut(v);
            let norm = row.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                row.iter_mut().for_each(|x| *x = 1.0 / (d as f64).sqrt());
            } else {
                row.iter_mut().for_each(|x| *x /= norm);
            }
        }
        Forward {
            inputs,
            means,
            pre,
            output,
        }
    }
}

/// Loss after initialisation and after every epoch.
#[derive(Clone, Debug, PartialEq)]
pub struct SageTrace {
    pub loss: Vec<f64>,
}

struct Objective {
    positives: Vec<(usize, usize)>,
    /// `negative_samples` noise nodes per positive pair.
    negatives: Vec<Vec<usize>>,
}

fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

/// Mean loss per positive pair and its gradient w.r.t. every weight.
fn loss_and_grad(
    model: &SageModel,
    features: &Matrix,
    neighbours: &[&[Vec<usize>]],
    obj: &Objective,
) -> (f64, Vec<Matrix>) {
    let fw = model.run(features, neighbours);
    let e = &fw.output;
    let n = e.rows;
    let scale = 1.0 / obj.positives.len().max(1) as f64;
    let mut loss = 0.0;
    let mut de = Matrix::zeros(n, e.cols);
    let push = |u: usize, v: usize, sign: f64, de: &mut Matrix| {
        // term = softplus(-sign * e_u . e_v)
        let s = dot(e.row(u), e.row(v));
        let g = -sign * sigmoid(-sign * s) * scale;
        for c in 0..e.cols {
            let (eu, ev) = (e.get(u, c), e.get(v, c));
            de.data[u * e.cols + c] += g * ev;
            de.data[v * e.cols + c] += g * eu;
        }
        softplus(-sign * s) * scale
    };
    for (&(u, v), negs) in obj.positives.iter().zip(&obj.negatives) {
        loss += push(u, v, 1.0, &mut de);
        for &m in negs {
            loss += push(u, m, -1.0, &mut de);
        }
    }

    let last = model.weights.len() - 1;
    let z_last = &fw.pre[last];
    let mut dz = Matrix::zeros(n, z_last.cols);
    for v in 0..n {
        let z = z_last.row(v);
        let norm = dot(z, z).sqrt();
        if norm == 0.0 {
            continue;
        }
        let (ev, dev) = (e.row(v), de.row(v));
        let proj = dot(ev, dev);
        for (c, out) in dz.row_mut(v).iter_mut().enumerate() {
            *out = (dev[c] - ev[c] * proj) / norm;
        }
    }

    let mut grads: Vec<Matrix> = model.weights.iter().map(|w| Matrix::zeros(w.rows, w.cols)).collect();
    for k in (0..=last).rev() {
        let w = &model.weights[k];
        let (h, a) = (&fw.inputs[k], &fw.means[k]);
        let d = h.cols;
        let gw = &mut grads[k];
        for v in 0..n {
            let (dzr, hs, am) = (dz.row(v), h.row(v), a.row(v));
            for (o, &g) in dzr.iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let row = gw.row_mut(o);
                for c in 0..d {
                    row[c] += g * hs[c];
                    row[d + c] += g * am[c];
                }
            }
        }
        if k == 0 {
            break;
        }
        let mut dh = Matrix::zeros(n, d);
        for v in 0..n {
            let nb = &neighbours[k][v];
            let inv = if nb.is_empty() { 0.0 } else { 1.0 / nb.len() as f64 };
            for (o, &g) in dz.row(v).iter().enumerate() {
                if g == 0.0 {
                    continue;
                }
                let wr = w.row(o);
                for c in 0..d {
                    dh.data[v * d + c] += g * wr[c];
                }
                for &u in nb {
                    for c in 0..d {
                        dh.data[u * d + c] += g * wr[d + c] * inv;
                    }
                }
            }
        }
        let zp = &fw.pre[k - 1];
        for (g, &z) in dh.data.iter_mut().zip(&zp.data) {
            if z <= 0.0 {
                *g = 0.0;
            }
        }
        dz = dh;
    }
    (loss, grads)
}

struct Adam {
    m: Vec<Matrix>,
    v: Vec<Matrix>,
    t: i32,
    lr: f64,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(model: &SageModel, lr: f64) -> Self {
        let zeros: Vec<Matrix> = model.weights.iter().map(|w| Matrix::zeros(w.rows, w.cols)).collect();
        Self {
            m: zeros.clone(),
            v: zeros,
            t: 0,
            lr,
        }
    }

    fn step(&mut self, model: &mut SageModel, grads: &[Matrix]) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        for (k, g) in grads.iter().enumerate() {
            let (m, v, w) = (&mut self.m[k].data, &mut self.v[k].data, &mut model.weights[k].data);
            for i in 0..g.data.len() {
                m[i] = Self::B1 * m[i] + (1.0 - Self::B1) * g.data[i];
                v[i] = Self::B2 * v[i] + (1.0 - Self::B2) * g.data[i] * g.data[i];
                w[i] -= self.lr * (m[i] / c1) / ((v[i] / c2).sqrt() + Self::EPS);
            }
        }
    }
}

fn sampled_neighbourhoods<R: Rng + ?Sized>(adjacency: &[Vec<usize>], caps: &[usize], rng: &mut R) -> Vec<Vec<Vec<usize>>> {
    caps.iter()
        .map(|&cap| {
            adjacency
                .iter()
                .map(|nb| {
                    if nb.len() <= cap {
                        nb.clone()
                    } else {
                        let mut picked: Vec<usize> = index::sample(rng, nb.len(), cap).into_iter().map(|i| nb[i]).collect();
                        picked.sort_unstable();
                        picked
                    }
                })
                .collect()
        })
        .collect()
}

pub fn graphsage(view: &ProjectedGraph<'_>, cfg: &EmbeddingConfig) -> Result<EmbeddingSet> {
    graphsage_with_trace(view, cfg).map(|(set, _)| set)
}

pub fn graphsage_with_trace(view: &ProjectedGraph<'_>, cfg: &EmbeddingConfig) -> Result<(EmbeddingSet, SageTrace)> {
    check_method(cfg, Method::Graphsage)?;
    let params = &cfg.graphsage;
    let features = build_features(view, params.degree_fallback)?;
    let adjacency = view.adjacency();
    let n = view.node_count();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);

    let hidden = params.hidden_dimension.unwrap_or(cfg.dimension);
    let mut dims = vec![features.cols];
    dims.extend(std::iter::repeat(hidden).take(params.layers - 1));
    dims.push(cfg.dimension);
    let mut model = SageModel::xavier(&dims, &mut rng);

    let sampled = params
        .sample_sizes
        .as_ref()
        .map(|caps| sampled_neighbourhoods(adjacency, caps, &mut rng));
    let neighbours: Vec<&[Vec<usize>]> = match &sampled {
        Some(layers) => layers.iter().map(Vec::as_slice).collect(),
        None => vec![adjacency; params.layers],
    };

    let degrees: Vec<f64> = (0..n).map(|i| view.degree(i) as f64).collect();
    let noise = NegativeSampler::from_counts(&degrees);
    let mut positives = Vec::new();
    for start in 0..n {
        for _ in 0..params.walks_per_node {
            let mut cur = start;
            for _ in 1..params.walk_length {
                match uniform_step(adjacency, cur, &mut rng) {
                    Some(next) => {
                        if next != start {
                            positives.push((start, next));
                        }
                        cur = next;
                    }
                    None => break,
                }
            }
        }
    }
    let negatives = positives
        .iter()
        .map(|_| (0..params.negative_samples).filter_map(|_| noise.sample(&mut rng)).collect())
        .collect();
    let obj = Objective { positives, negatives };

    let mut adam = Adam::new(&model, params.learning_rate);
    let mut trace = SageTrace { loss: Vec::with_capacity(params.epochs + 1) };
    for epoch in 0..=params.epochs {
        let (loss, grads) = loss_and_grad(&model, &features, &neighbours, &obj);
        if !loss.is_finite() {
            return Err(Error::Training { epoch, loss });
        }
        trace.loss.push(loss);
        if epoch < params.epochs && !obj.positives.is_empty() {
            adam.step(&mut model, &grads);
        }
    }

    let out = model.run(&features, &neighbours).output;
    let set = EmbeddingSet::new(provenance(view, cfg, true), collect_rows(view, &out.data, cfg.dimension))?;
    Ok((set, trace))
}
