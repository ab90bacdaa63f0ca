//! Collective matrix factorization on two views that share the user entity,
//! plus the parameter budget that matches a dCMF network.
//!
//! cargo run --release --example cmf_baseline

use dcmf::autoencoder::Activation;
use dcmf::bench::{generate_synthetic, SyntheticSpec};
use dcmf::cmf::{cmf_train, cmf_view_rmse};
use dcmf::engine::{build_network, cmf_param_count, TrainConfig};

fn main() -> dcmf::Result<()> {
    let (g, _) = generate_synthetic(&SyntheticSpec::sparsity_preset(0.0, 10, 10, 5))?;
    let sizes: Vec<usize> = g.entities.iter().map(|e| e.size).collect();

    let net = build_network(&g, 10, 0.1, Activation::Tanh, 5)?;
    let budget = net.param_count().total;
    let mut k = 1;
    while cmf_param_count(&sizes, k + 1).total <= budget {
        k += 1;
    }
    println!("dCMF has {budget} parameters; CMF with K={k} has {}", cmf_param_count(&sizes, k).total);

    let cfg = TrainConfig { learning_rate: 10.0, max_epochs: 2000, convergence_threshold: 1e-9, ..TrainConfig::default() };
    for lambda in [0.0, 1e-3] {
        let fit = cmf_train(&g, 10, lambda, &cfg)?;
        let rmse = cmf_view_rmse(&fit.factors, &g, "x1")?;
        println!("lambda {lambda:e}: {} epochs, train RMSE on x1 {rmse:.4}", fit.history.len());
    }
    Ok(())
}
