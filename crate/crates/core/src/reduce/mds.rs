use std::collections::BTreeMap;

use super::eigen::{canonical_sign, symmetric_eigen};
use super::{points_of, DistanceMatrix, Reduction2D, ReductionMethod};
use crate::embed::EmbeddingSet;
use crate::error::{Error, Result};

fn check_size(n: usize) -> Result<()> {
    if n < 3 {
        return Err(Error::Size(format!("MDS needs at least 3 points, got {n}")));
    }
    Ok(())
}

/// Eigenvalues at or below this fraction of the largest count as zero.
const RELATIVE_FLOOR: f64 = 1e-12;

fn diagnostics(values: &[f64]) -> BTreeMap<String, f64> {
    let positive: f64 = values.iter().filter(|&&v| v > 0.0).sum();
    let kept: f64 = values.iter().take(2).filter(|&&v| v > 0.0).sum();
    BTreeMap::from([
        ("eigenvalue_1".into(), values.first().copied().unwrap_or(0.0)),
        ("eigenvalue_2".into(), values.get(1).copied().unwrap_or(0.0)),
        ("positive_eigenmass_fraction".into(), if positive > 0.0 { kept / positive } else { 0.0 }),
    ])
}

/// Classical MDS rows for a square distance table.
pub(super) fn classical_rows(d: &[Vec<f64>]) -> Result<(Vec<[f64; 2]>, BTreeMap<String, f64>)> {
    let n = d.len();
    check_size(n)?;
    let sq: Vec<Vec<f64>> = d.iter().map(|r| r.iter().map(|x| x * x).collect()).collect();
    let row_mean: Vec<f64> = sq.iter().map(|r| r.iter().sum::<f64>() / n as f64).collect();
    let grand = row_mean.iter().sum::<f64>() / n as f64;
    let b: Vec<Vec<f64>> = (0..n)
        .map(|i| (0..n).map(|j| -0.5 * (sq[i][j] - row_mean[i] - row_mean[j] + grand)).collect())
        .collect();
    let e = symmetric_eigen(&b)?;
    let floor = RELATIVE_FLOOR * e.values[0].max(0.0);
    let mut rows = vec![[0.0; 2]; n];
    for c in 0..2.min(n) {
        let lambda = e.values[c];
        if lambda > floor && lambda > 0.0 {
            let s = lambda.sqrt();
            for (row, &v) in rows.iter_mut().zip(&e.vectors[c]) {
                row[c] = v * s;
            }
        }
    }
    Ok((rows, diagnostics(&e.values)))
}

/// Classical MDS on a distance matrix: `B = -1/2 J D² J`, top two
/// eigenvectors scaled by `sqrt(eigenvalue)`.
pub fn mds_classical(d: &DistanceMatrix) -> Result<Reduction2D> {
    let (rows, diag) = classical_rows(d.entries())?;
    Reduction2D::from_rows(ReductionMethod::Mds, d.ids(), &rows, diag)
}

/// Classical MDS of the euclidean distances between `vectors`, computed
/// through the `d×d` covariance of the centred vectors instead of the
/// `n×n` inner-product matrix. Matches [`mds_classical`] on
/// [`DistanceMatrix::euclidean`] up to round-off.
pub fn mds(vectors: &EmbeddingSet) -> Result<Reduction2D> {
    let (ids, points) = points_of(vectors);
    let n = points.len();
    check_size(n)?;
    let dim = vectors.dimension();
    let mut mean = vec![0.0; dim];
    for p in &points {
        for (m, x) in mean.iter_mut().zip(p.iter()) {
            *m += x / n as f64;
        }
    }
    let centred: Vec<Vec<f64>> = points.iter().map(|p| p.iter().zip(&mean).map(|(x, m)| x - m).collect()).collect();
    let mut cov = vec![vec![0.0; dim]; dim];
    for p in &centred {
        for a in 0..dim {
            if p[a] == 0.0 {
                continue;
            }
            for b in a..dim {
                cov[a][b] += p[a] * p[b];
            }
        }
    }
    for a in 0..dim {
        for b in 0..a {
            cov[a][b] = cov[b][a];
        }
    }
    let e = symmetric_eigen(&cov)?;
    let floor = RELATIVE_FLOOR * e.values[0].max(0.0);
    let mut rows = vec![[0.0; 2]; n];
    for c in 0..2.min(dim) {
        let lambda = e.values[c];
        if !(lambda > floor && lambda > 0.0) {
            continue;
        }
        let mut col: Vec<f64> = centred
            .iter()
            .map(|p| p.iter().zip(&e.vectors[c]).map(|(x, v)| x * v).sum())
            .collect();
        canonical_sign(&mut col);
        for (row, v) in rows.iter_mut().zip(col) {
            row[c] = v;
        }
    }
    Reduction2D::from_rows(ReductionMethod::Mds, &ids, &rows, diagnostics(&e.values))
}
