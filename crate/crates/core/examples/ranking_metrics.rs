//! Recall@N for a ranked list and the cumulative rank distribution of
//! hidden pairs.
//!
//! cargo run --example ranking_metrics

use std::collections::HashSet;

use dcmf::bench::{hidden_ranks, probability_at_n, recall_at_n};

fn main() -> dcmf::Result<()> {
    let scores = [0.9, 0.1, 0.8, 0.2, 0.3, 0.7];
    let train: HashSet<usize> = [0].into();
    let test: HashSet<usize> = [2, 3].into();
    for n in 1..=4 {
        println!("recall@{n} = {:?}", recall_at_n(&scores, &train, &test, n));
    }

    // item 0 is known, so hidden item 5 ranks second among the rest
    let ranks = hidden_ranks(&scores, &train, &[5, 4, 1]);
    println!("ranks of hidden items: {ranks:?}");
    let p = probability_at_n(&ranks, 5)?;
    println!("P(rank <= N) for N = 1..5: {p:?}");
    Ok(())
}
