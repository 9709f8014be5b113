//! LinUCB, LinTS and ε-greedy on the same logged data, scored greedily at
//! the balanced preference.
//!
//! Run with `cargo run --release --example linear_bandits`.

use std::sync::Arc;

use prefroute::bandits::{train_agent, AgentConfig, AgentKind, LinearAgent};
use prefroute::domain::PreferenceVector;
use prefroute::environment::{gen_synthetic, BanditEnvironment, Split, SyntheticKind, SyntheticSpec};
use prefroute::evaluation::{evaluate, evaluate_oracle};
use prefroute::numerics::SeededRng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = SyntheticSpec::new(SyntheticKind::Linear, 3, 6, 3000);
    let env = BanditEnvironment::with_default_reward(Arc::new(gen_synthetic(&spec, 4)?))?;
    let pref = PreferenceVector::balanced();
    let oracle = evaluate_oracle(&env, Split::Test, pref)?;
    println!("oracle         reward {:.4}", oracle.mean_reward);
    for kind in [AgentKind::LinUcb, AgentKind::LinTs, AgentKind::EpsilonGreedy] {
        let mut agent = LinearAgent::new(AgentConfig::of_kind(kind), spec.d_e + 2, spec.k)?;
        let trace = train_agent(&mut agent, &env, 5, &mut SeededRng::new(4))?;
        let report = evaluate(&agent, &env, Split::Test, pref)?;
        println!(
            "{:<14} reward {:.4}  (last training epoch {:.4}, pulls {:?})",
            kind.to_string(),
            report.mean_reward,
            trace.epoch_mean_reward.last().copied().unwrap_or(0.0),
            (0..spec.k).map(|a| agent.arm(a).pulls()).collect::<Vec<_>>()
        );
    }
    Ok(())
}
