//! Linear, bilinear and MLP heads on the xor generator, where the good arm
//! depends on a sign interaction no linear score can express.
//!
//! Run with `cargo run --release --example head_ablation`.

use std::sync::Arc;

use prefroute::domain::PreferenceVector;
use prefroute::environment::{gen_synthetic, BanditEnvironment, Split, SyntheticSpec};
use prefroute::evaluation::{evaluate, evaluate_oracle};
use prefroute::learning::{Trainer, TrainingConfig};
use prefroute::policy::{HeadKind, PolicyNetwork};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let env = BanditEnvironment::with_default_reward(Arc::new(gen_synthetic(&SyntheticSpec::xor(4000, 8), 100)?))?;
    let pref = PreferenceVector::balanced();
    println!(
        "oracle   reward {:.4}",
        evaluate_oracle(&env, Split::Test, pref)?.mean_reward
    );
    for head in [HeadKind::Linear, HeadKind::Bilinear, HeadKind::Mlp] {
        let cfg = TrainingConfig {
            epochs: 40,
            seed: 0,
            head_kind: head,
            ..Default::default()
        };
        let params = PolicyNetwork::param_count(head, &cfg.policy_dims(8, 3));
        let mut trainer = Trainer::new(cfg, 8, 3)?;
        trainer.train(&env)?;
        let r = evaluate(trainer.network(), &env, Split::Test, pref)?;
        println!(
            "{:<8} reward {:.4}  score {:.1}%  ({params} parameters)",
            head.to_string(),
            r.mean_reward,
            r.avg_score_pct
        );
    }
    Ok(())
}
