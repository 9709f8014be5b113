//! Traces the score/cost curve of a trained policy over the default grid and
//! writes it as CSV.
//!
//! Run with `cargo run --release --example preference_sweep [out.csv]`.

use std::sync::Arc;

use prefroute::environment::{gen_synthetic, BanditEnvironment, Split, SyntheticKind, SyntheticSpec};
use prefroute::evaluation::{sweep_oracle, sweep_preferences, sweep_to_csv, DEFAULT_SWEEP_GRID};
use prefroute::learning::{Trainer, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::new(SyntheticKind::Linear, 4, 8, 3000);
    let env = BanditEnvironment::with_default_reward(Arc::new(gen_synthetic(&spec, 2)?))?;
    let mut trainer = Trainer::new(
        TrainingConfig {
            epochs: 20,
            seed: 2,
            ..Default::default()
        },
        8,
        4,
    )?;
    trainer.train(&env)?;
    let net = trainer.into_network();

    let curve = sweep_preferences(&net, &env, Split::Test, &DEFAULT_SWEEP_GRID)?;
    let oracle = sweep_oracle(&env, Split::Test, &DEFAULT_SWEEP_GRID)?;
    println!(
        "{:>5} {:>10} {:>10} {:>10} {:>10}",
        "w_c", "score", "cost", "oracle", "o.cost"
    );
    for (p, o) in curve.iter().zip(&oracle) {
        println!(
            "{:>5.2} {:>10.2} {:>10.5} {:>10.2} {:>10.5}",
            p.w_c, p.score_pct, p.cost_usd, o.score_pct, o.cost_usd
        );
    }
    if let Some(path) = std::env::args().nth(1) {
        std::fs::write(&path, sweep_to_csv(&curve))?;
        println!("wrote {path}");
    }
    Ok(())
}
