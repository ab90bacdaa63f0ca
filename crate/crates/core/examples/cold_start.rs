//! Score items for users who have no ratings, using only their side
//! features and the trained encoders. The same projection applied to the
//! true generating factors gives the best achievable answer.
//!
//! cargo run --release --example cold_start

use ndarray::{ArrayView1, Axis};

use dcmf::autoencoder::Activation;
use dcmf::bench::{generate_synthetic, SyntheticSpec};
use dcmf::engine::{build_network, cold_start_scores, predict_cold_start, train, TrainConfig};
use dcmf::experiment::mask_view;
use dcmf::graph::max_abs_scale;

fn correlation(a: ArrayView1<f64>, b: ArrayView1<f64>) -> f64 {
    let (am, bm) = (a.mean().unwrap(), b.mean().unwrap());
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - am) * (y - bm)).sum();
    cov / (a.mapv(|x| (x - am).powi(2)).sum() * b.mapv(|y| (y - bm).powi(2)).sum()).sqrt()
}

fn main() -> dcmf::Result<()> {
    // x1: users x items, x2: users x user-features
    let (g, truth) = generate_synthetic(&SyntheticSpec::sparsity_preset(0.3, 10, 10, 3))?;
    let actual = g.view("x1")?.data.to_dense();
    let features = g.view("x2")?.data.to_dense();
    let cold_users: Vec<usize> = (0..10).collect();

    // hide every rating of the cold users
    let mut train_graph = g.clone();
    let hidden: Vec<(usize, usize)> =
        cold_users.iter().flat_map(|&u| (0..actual.ncols()).map(move |j| (u, j))).collect();
    mask_view(&mut train_graph, "x1", &hidden)?;
    let (scaled, factors) = max_abs_scale(&train_graph);
    let mut net = build_network(&scaled, 10, 0.2, Activation::Identity, 3)?;
    let cfg = TrainConfig { learning_rate: 0.003, max_epochs: 3000, convergence_threshold: 1e-9, ..TrainConfig::default() };
    let out = train(&mut net, &cfg, None)?;
    println!("trained {} epochs", out.epochs());

    let (mut model_sum, mut oracle_sum) = (0.0, 0.0);
    for &u in &cold_users {
        let h = features.row(u).to_owned().insert_axis(Axis(0));
        let scores = predict_cold_start(&net, "x2", "x1", &(&h / factors[1]))? * factors[0];
        // e2 are items, e3 user features
        let oracle = cold_start_scores(&truth.factors[2], &truth.factors[1], &h)?;
        let (m, o) = (correlation(scores.row(0), actual.row(u)), correlation(oracle.row(0), actual.row(u)));
        println!("user {u}: correlation with hidden ratings {m:+.3} (true factors {o:+.3})");
        model_sum += m;
        oracle_sum += o;
    }
    let n = cold_users.len() as f64;
    println!("mean: {:+.3} (true factors {:+.3})", model_sum / n, oracle_sum / n);
    Ok(())
}
