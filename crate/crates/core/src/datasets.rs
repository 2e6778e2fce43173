//! Seeded synthetic stand-ins for the heart-disease and MovieLens CSV files.
//!
//! The heart generator draws every column from a distribution conditioned on
//! the target, loosely following the marginals of the public UCI file, so
//! embeddings and separation scores have something to find.

use rand::distr::weighted::WeightedIndex;
use rand::prelude::*;
use rand_chacha::ChaCha8Rng;
use rand_distr::Normal;

use crate::graph::HEART_COLUMNS;

fn pick(rng: &mut ChaCha8Rng, values: &[i64], weights: &[f64]) -> i64 {
    let dist = WeightedIndex::new(weights).expect("valid weights");
    values[dist.sample(rng)]
}

fn normal_int(rng: &mut ChaCha8Rng, mean: f64, sd: f64, lo: i64, hi: i64) -> i64 {
    let x: f64 = Normal::new(mean, sd).unwrap().sample(rng);
    (x.round() as i64).clamp(lo, hi)
}

/// Heart-disease CSV text with `rows` data rows and the standard 14 columns.
pub fn synthetic_heart_csv(rows: usize, seed: u64) -> String {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = HEART_COLUMNS.join(",");
    out.push('\n');
    for _ in 0..rows {
        let sick = rng.random_bool(0.54);
        let age = normal_int(&mut rng, 54.0, 9.0, 29, 77);
        let sex = i64::from(rng.random_bool(0.68));
        let cp = if sick {
            pick(&mut rng, &[0, 1, 2, 3], &[0.15, 0.25, 0.5, 0.1])
        } else {
            pick(&mut rng, &[0, 1, 2, 3], &[0.75, 0.05, 0.15, 0.05])
        };
        let trestbps = normal_int(&mut rng, 131.0, 17.0, 94, 200);
        let chol = normal_int(&mut rng, 246.0, 51.0, 126, 564);
        let fbs = i64::from(rng.random_bool(0.15));
        let restecg = pick(&mut rng, &[0, 1, 2], &[0.48, 0.5, 0.02]);
        let thalach = if sick {
            normal_int(&mut rng, 158.0, 19.0, 71, 202)
        } else {
            normal_int(&mut rng, 139.0, 22.0, 71, 202)
        };
        let exang = i64::from(rng.random_bool(if sick { 0.14 } else { 0.55 }));
        let oldpeak_mean = if sick { 0.6 } else { 1.6 };
        let oldpeak = (Normal::new(oldpeak_mean, 0.8).unwrap().sample(&mut rng) as f64)
            .clamp(0.0, 6.2);
        let oldpeak = (oldpeak * 10.0).round() / 10.0;
        let slope = if sick {
            pick(&mut rng, &[0, 1, 2], &[0.05, 0.25, 0.7])
        } else {
            pick(&mut rng, &[0, 1, 2], &[0.1, 0.65, 0.25])
        };
        let ca = if sick {
            pick(&mut rng, &[0, 1, 2, 3], &[0.8, 0.12, 0.05, 0.03])
        } else {
            pick(&mut rng, &[0, 1, 2, 3], &[0.33, 0.3, 0.22, 0.15])
        };
        let thal = if sick {
            pick(&mut rng, &[1, 2, 3], &[0.05, 0.8, 0.15])
        } else {
            pick(&mut rng, &[1, 2, 3], &[0.1, 0.2, 0.7])
        };
        out.push_str(&format!(
            "{age},{sex},{cp},{trestbps},{chol},{fbs},{restecg},{thalach},{exang},{oldpeak:.1},{slope},{ca},{thal},{}\n",
            i64::from(sick)
        ));
    }
    out
}

const GENRES: [&str; 8] = [
    "Action", "Comedy", "Drama", "War", "Horror", "Romance", "Sci-Fi", "Thriller",
];

/// `(ratings.csv, movies.csv)` text for a small MovieLens-shaped dataset.
/// Ratings follow per-user genre tastes and are rounded to half stars.
pub fn synthetic_movielens(users: usize, movies: usize, seed: u64) -> (String, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.5).unwrap();

    let mut movie_genres = Vec::with_capacity(movies);
    let mut movies_csv = String::from("movieId,title,genres\n");
    for m in 0..movies {
        let n = rng.random_range(1..=2);
        let mut gs: Vec<usize> = (0..GENRES.len()).collect();
        gs.shuffle(&mut rng);
        gs.truncate(n);
        gs.sort_unstable();
        let names: Vec<&str> = gs.iter().map(|&g| GENRES[g]).collect();
        movies_csv.push_str(&format!("{},Movie {},{}\n", m + 1, m + 1, names.join("|")));
        movie_genres.push(gs);
    }

    let mut ratings_csv = String::from("userId,movieId,rating,timestamp\n");
    let mut ts = 964_982_703u64;
    for u in 0..users {
        let taste: Vec<f64> = (0..GENRES.len()).map(|_| rng.random_range(-1.5..1.5)).collect();
        for (m, gs) in movie_genres.iter().enumerate() {
            if !rng.random_bool(0.35) {
                continue;
            }
            let affinity: f64 = gs.iter().map(|&g| taste[g]).sum::<f64>() / gs.len() as f64;
            let raw: f64 = 3.2 + affinity + noise.sample(&mut rng);
            let rating = ((raw * 2.0).round() / 2.0).clamp(0.5, 5.0);
            ts += rng.random_range(1..5000);
            ratings_csv.push_str(&format!("{},{},{rating:.1},{ts}\n", u + 1, m + 1));
        }
    }
    (ratings_csv, movies_csv)
}
