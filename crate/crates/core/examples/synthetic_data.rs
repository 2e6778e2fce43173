//! Writes the synthetic heart and MovieLens CSV files used by the sample
//! configs: `cargo run --example synthetic_data -- data/`.

use std::path::PathBuf;

use graphpredict::datasets::{synthetic_heart_csv, synthetic_movielens};
use graphpredict::io::write_text;

fn main() -> graphpredict::Result<()> {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data".into()));
    write_text(dir.join("heart.csv"), &synthetic_heart_csv(303, 7))?;
    let (ratings, movies) = synthetic_movielens(60, 40, 7);
    write_text(dir.join("ratings.csv"), &ratings)?;
    write_text(dir.join("movies.csv"), &movies)?;
    println!("wrote heart.csv, ratings.csv and movies.csv to {}", dir.display());
    Ok(())
}
