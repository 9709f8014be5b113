//! Scalarized reward across the preference simplex for two logged outcomes.
//!
//! Run with `cargo run --example reward_and_preferences`.

use prefroute::domain::{compute_reward, normalize_cost, Outcome, PreferenceVector, RewardSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let spec = RewardSpec::new(0.01)?;
    let strong = Outcome::new(0.9, 0.012)?;
    let cheap = Outcome::new(0.6, 0.0008)?;
    println!(
        "normalized costs: strong {:.3}, cheap {:.3}",
        normalize_cost(strong.cost(), &spec)?,
        normalize_cost(cheap.cost(), &spec)?
    );
    println!("{:>5} {:>9} {:>9}  best", "w_c", "strong", "cheap");
    for i in 0..=10 {
        let w = PreferenceVector::from_cost_weight(i as f64 / 10.0)?;
        let rs = compute_reward(&w, &strong, &spec)?;
        let rc = compute_reward(&w, &cheap, &spec)?;
        let best = if rs >= rc { "strong" } else { "cheap" };
        println!("{:>5.1} {:>9.4} {:>9.4}  {best}", w.cost(), rs, rc);
    }
    Ok(())
}
