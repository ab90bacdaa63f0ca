//! Load the MovieLens 100k ratings file as a binary interaction matrix and
//! report its shape.
//!
//! cargo run --release --example movielens -- path/to/ml-100k/u.data

use std::path::PathBuf;

use dcmf::io::load_movielens_100k;

fn main() -> dcmf::Result<()> {
    let Some(path) = std::env::args().nth(1).map(PathBuf::from) else {
        eprintln!("usage: movielens <u.data>");
        std::process::exit(2);
    };
    let m = load_movielens_100k(&path, true)?;
    let (users, items) = m.shape();
    println!("{users} users x {items} items, {} ratings, density {:.4}", m.nnz(), m.nnz() as f64 / (users * items) as f64);
    Ok(())
}
