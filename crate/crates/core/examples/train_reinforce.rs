//! Trains the preference-conditioned policy on the piecewise generator and
//! shows how its routing changes with the cost weight.
//!
//! Run with `cargo run --release --example train_reinforce`.

use std::sync::Arc;

use prefroute::domain::PreferenceVector;
use prefroute::environment::{gen_synthetic, BanditEnvironment, Split, SyntheticSpec};
use prefroute::evaluation::{evaluate, evaluate_oracle};
use prefroute::learning::{Trainer, TrainingConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let ds = gen_synthetic(&SyntheticSpec::piecewise(2000, 8), 11)?;
    let env = BanditEnvironment::with_default_reward(Arc::new(ds))?;
    let cfg = TrainingConfig {
        epochs: 30,
        seed: 11,
        ..Default::default()
    };
    let mut trainer = Trainer::new(cfg, 8, 2)?;
    let trace = trainer.train_with(&env, |_, s| {
        if s.epoch % 5 == 0 {
            println!(
                "epoch {:>3}  reward {:.4}  entropy {:.4}",
                s.epoch, s.mean_reward, s.mean_entropy
            );
        }
        Ok(())
    })?;
    println!(
        "final epoch reward {:.4}",
        trace.epochs.last().map(|s| s.mean_reward).unwrap_or(0.0)
    );

    let net = trainer.into_network();
    for w_c in [0.1, 0.25, 0.35, 0.9] {
        let pref = PreferenceVector::from_cost_weight(w_c)?;
        let learned = evaluate(&net, &env, Split::Test, pref)?;
        let oracle = evaluate_oracle(&env, Split::Test, pref)?;
        println!(
            "w_c {w_c:.2}: policy score {:.1}% cost {:.5}  (oracle {:.1}% / {:.5})",
            learned.avg_score_pct, learned.avg_cost_usd, oracle.avg_score_pct, oracle.avg_cost_usd
        );
    }
    Ok(())
}
