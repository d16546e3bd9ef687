//! End-to-end run on a synthetic Cora-shaped network.
//!
//! cargo run --release -p binaryne --example synthetic_pipeline -- [iters] [seed] [geometric|linear]

use std::time::Instant;

use binaryne::codes::{binarize, CodeMatrix};
use binaryne::eval::{format_table, run_benchmark, EvalConfig};
use binaryne::model::Trainer;
use binaryne::synthetic::AttributedSbm;
use binaryne::{DenseMatrix, PairCounts, TrainConfig, WalkConfig};

fn main() -> binaryne::Result<()> {
    let mut args = std::env::args().skip(1);
    let iters: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(20_000_000);
    let seed: u64 = args.next().map(|s| s.parse().unwrap()).unwrap_or(1);
    let beta_curve = args.next().map(|s| s.parse().unwrap()).unwrap_or_default();

    let net = AttributedSbm::default().generate();
    let t = Instant::now();
    let pairs = PairCounts::collect(&net.graph, &WalkConfig { seed, ..Default::default() })?;
    eprintln!("pairs: {} distinct, total {} ({:.1?})", pairs.len(), pairs.total(), t.elapsed());

    let cfg = TrainConfig { max_iters: iters, seed, beta_curve, ..Default::default() };
    let t = Instant::now();
    let trained = Trainer::new(&net.graph, &pairs, &net.attrs, &cfg)?.run_with_progress(iters / 10, |p| {
        eprintln!(
            "iter {:>10}  eta {:.6}  beta {:.4}  O_s {:.4}  O_a {:.4}",
            p.iter,
            p.eta,
            p.beta,
            p.structure_loss.unwrap_or(f64::NAN),
            p.attribute_loss.unwrap_or(f64::NAN)
        )
    })?;
    eprintln!("trained in {:.1?}", t.elapsed());

    let eval = EvalConfig::default();
    let codes = binarize(&trained.params);
    let ours = run_benchmark("BinaryNE", &codes, &net.labels, &eval)?;
    let features = run_benchmark("Feature", &CodeMatrix::from_attributes(&net.attrs), &net.labels, &eval)?;
    let p = &trained.params;
    let dense = DenseMatrix::new(p.node_count(), p.dim(), p.w_in().iter().map(|&w| w as f64).collect())?;
    let real = run_benchmark("Real-valued", &dense, &net.labels, &eval)?;
    let scale = 0.5 / p.dim() as f32;
    let moved = p.w_in().iter().filter(|w| w.abs() > scale).count() as f64 / p.w_in().len() as f64;
    let n = p.node_count() as f64;
    let skew: f64 = (0..p.dim())
        .map(|r| ((0..p.node_count()).filter(|&i| codes.get(i, r)).count() as f64 / n - 0.5).abs())
        .sum::<f64>()
        / p.dim() as f64;
    eprintln!("mean bit imbalance |P(bit)-0.5|: {skew:.3}");
    eprintln!("entries beyond init range: {:.1}%", 100.0 * moved);
    print!("{}", format_table(&[ours, real, features]));
    Ok(())
}
