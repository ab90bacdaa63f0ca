//! Hide a tenth of a synthetic ratings matrix, complete it with dCMF and with
//! the CMF baseline, and compare held-out RMSE.
//!
//! cargo run --release --example synthetic_completion

use dcmf::autoencoder::Activation;
use dcmf::bench::{fixed_test_subset, generate_synthetic, nonzero_coords, SyntheticSpec};
use dcmf::cmf::{cmf_reconstruct, cmf_train};
use dcmf::engine::{build_network, train, HoldOut, TrainConfig};
use dcmf::experiment::mask_view;
use dcmf::graph::max_abs_scale;

fn main() -> dcmf::Result<()> {
    // 200 users x 400 items with user and item side information, half zero
    let spec = SyntheticSpec::sparsity_preset(0.5, 2, 20, 7);
    let (g, _) = generate_synthetic(&spec)?;
    let test = fixed_test_subset(&nonzero_coords(&g.view("x1")?.data), 1000, 7)?;

    let (scaled, factors) = max_abs_scale(&g);
    let mut net = build_network(&scaled, 20, 0.1, Activation::Tanh, 7)?;
    let cfg = TrainConfig { learning_rate: 0.01, batch_count: 4, max_epochs: 300, convergence_threshold: 1e-7, ..TrainConfig::default() };
    let out = train(&mut net, &cfg, Some(&HoldOut { view: "x1".into(), coords: test.clone() }))?;
    let dcmf_rmse = out.validation_rmse.unwrap() * factors[0];
    println!("dCMF: {} epochs, held-out RMSE {dcmf_rmse:.4}", out.epochs());

    let mut masked = scaled.clone();
    let truth = mask_view(&mut masked, "x1", &test)?;
    let ccfg = TrainConfig { learning_rate: 10.0, max_epochs: 1000, convergence_threshold: 1e-9, ..TrainConfig::default() };
    let fit = cmf_train(&masked, 20, 1e-4, &ccfg)?;
    let pred = cmf_reconstruct(&fit.factors, "x1")?;
    let se: f64 = test.iter().zip(&truth).map(|(&(i, j), v)| (pred[[i, j]] - v).powi(2)).sum();
    let cmf_rmse = (se / test.len() as f64).sqrt() * factors[0];
    println!("CMF:  {} epochs, held-out RMSE {cmf_rmse:.4}", fit.history.len());
    Ok(())
}
