use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::Rng;

/// Negative-sampling distribution: node frequency raised to the 3/4 power.
pub(crate) struct NegativeSampler {
    dist: Option<WeightedIndex<f64>>,
}

impl NegativeSampler {
    pub fn from_counts(counts: &[f64]) -> Self {
        let weights: Vec<f64> = counts.iter().map(|&c| c.max(0.0).powf(0.75)).collect();
        Self {
            dist: WeightedIndex::new(&weights).ok(),
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Option<usize> {
        self.dist.as_ref().map(|d| d.sample(rng))
    }
}

/// Picks a neighbour of `from` uniformly; `None` when it has none.
pub(crate) fn uniform_step<R: Rng + ?Sized>(adjacency: &[Vec<usize>], from: usize, rng: &mut R) -> Option<usize> {
    let nbrs = &adjacency[from];
    if nbrs.is_empty() {
        None
    } else {
        Some(nbrs[rng.random_range(0..nbrs.len())])
    }
}
