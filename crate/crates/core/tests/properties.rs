mod common;

use common::{reward_oracle, ridge_oracle};
use prefroute::bandits::{AgentConfig, AgentKind, LinearAgent};
use prefroute::domain::{compute_reward, normalize_cost, Outcome, PreferenceVector, RewardSpec};
use prefroute::environment::{hash_embedding, in_train_split};
use prefroute::learning::batch_baseline;
use prefroute::numerics::{sample_simplex_preference, SeededRng};
use proptest::prelude::*;

fn reward(w_c: f64, q: f64, c: f64, tau: f64) -> f64 {
    compute_reward(
        &PreferenceVector::from_cost_weight(w_c).unwrap(),
        &Outcome::new(q, c).unwrap(),
        &RewardSpec::new(tau).unwrap(),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(2000))]

    #[test]
    fn reward_matches_formula_and_is_bounded(
        w_c in 0.0f64..=1.0, q in 0.0f64..=1.0, c in 0.0f64..1.0, tau in 1e-4f64..1.0
    ) {
        let r = reward(w_c, q, c, tau);
        prop_assert!((-1.0..=1.0).contains(&r));
        prop_assert!((r - reward_oracle(1.0 - w_c, w_c, q, c, tau)).abs() < 1e-12);
    }

    #[test]
    fn reward_rises_with_score_and_falls_with_cost(
        w_c in 0.0f64..=1.0, q1 in 0.0f64..=1.0, q2 in 0.0f64..=1.0,
        c1 in 0.0f64..0.1, c2 in 0.0f64..0.1, tau in 1e-3f64..0.1
    ) {
        let (lo_q, hi_q) = if q1 <= q2 { (q1, q2) } else { (q2, q1) };
        let (lo_c, hi_c) = if c1 <= c2 { (c1, c2) } else { (c2, c1) };
        prop_assert!(reward(w_c, hi_q, lo_c, tau) >= reward(w_c, lo_q, lo_c, tau));
        prop_assert!(reward(w_c, lo_q, lo_c, tau) >= reward(w_c, lo_q, hi_c, tau));
    }

    #[test]
    fn preference_extremes_isolate_one_term(q in 0.0f64..=1.0, c in 0.0f64..1.0, tau in 1e-3f64..1.0) {
        prop_assert_eq!(reward(0.0, q, c, tau), q);
        prop_assert_eq!(reward(1.0, q, c, tau), -(c / tau).min(1.0));
    }

    #[test]
    fn normalized_cost_is_capped(c in 0.0f64..10.0, tau in 1e-3f64..1.0) {
        let n = normalize_cost(c, &RewardSpec::new(tau).unwrap()).unwrap();
        prop_assert!((0.0..=1.0).contains(&n));
        if c >= tau {
            prop_assert_eq!(n, 1.0);
        }
    }

    #[test]
    fn simplex_draws_are_valid(seed in any::<u64>()) {
        let mut rng = SeededRng::new(seed);
        for _ in 0..50 {
            let w = sample_simplex_preference(&mut rng);
            prop_assert!(w.quality() >= 0.0 && w.cost() >= 0.0);
            prop_assert!((w.quality() + w.cost() - 1.0).abs() <= 1e-12);
            prop_assert!(PreferenceVector::new(w.quality(), w.cost()).is_ok());
        }
    }

    #[test]
    fn off_simplex_preferences_are_rejected(a in 0.0f64..1.0, b in 0.0f64..1.0) {
        prop_assume!((a + b - 1.0).abs() > 1e-9);
        prop_assert!(PreferenceVector::new(a, b).is_err());
    }

    #[test]
    fn baseline_is_the_arithmetic_mean(rs in prop::collection::vec(-1.0f64..1.0, 1..64)) {
        let want = rs.iter().sum::<f64>() / rs.len() as f64;
        prop_assert!((batch_baseline(&rs).unwrap() - want).abs() < 1e-14);
    }

    #[test]
    fn split_assignment_is_stable(id in "[a-z0-9_-]{1,24}", seed in any::<u64>()) {
        prop_assert_eq!(in_train_split(&id, seed), in_train_split(&id, seed));
    }

    #[test]
    fn hash_features_are_bounded_and_stable(id in "[ -~]{0,40}", seed in any::<u64>(), dim in 1usize..70) {
        let a = hash_embedding(&id, seed, dim);
        prop_assert_eq!(a.len(), dim);
        prop_assert!(a.iter().all(|x| (-1.0..=1.0).contains(x)));
        prop_assert_eq!(&a, &hash_embedding(&id, seed, dim));
        let longer = hash_embedding(&id, seed, dim + 5);
        prop_assert_eq!(&a[..], &longer[..dim]);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn incremental_ridge_matches_batch_solution(
        seed in any::<u64>(),
        n in 1usize..60,
        refactor_every in 1usize..30,
        lambda in 0.1f64..5.0,
    ) {
        let d = 4;
        let mut rng = SeededRng::new(seed);
        let cfg = AgentConfig { lambda, refactor_every, ..AgentConfig::of_kind(AgentKind::LinUcb) };
        let mut agent = LinearAgent::new(cfg, d, 2).unwrap();
        let (mut xs, mut ys) = (Vec::new(), Vec::new());
        for _ in 0..n {
            let z: Vec<f64> = (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
            let r = rng.uniform_range(-1.0, 1.0);
            let arm = rng.below(2);
            agent.update(&z, arm, r).unwrap();
            if arm == 1 {
                xs.push(z);
                ys.push(r);
            }
        }
        let want = ridge_oracle(&xs, &ys, lambda, d);
        let got = agent.arm(1).theta();
        for (a, b) in got.iter().zip(&want) {
            prop_assert!((a - b).abs() < 1e-9, "{:?} vs {:?}", got, want);
        }
        prop_assert_eq!(agent.arm(1).pulls(), xs.len() as u64);
    }
}

#[test]
fn split_fraction_is_near_eighty_percent() {
    let n = 20_000;
    let train = (0..n).filter(|i| in_train_split(&format!("prompt-{i}"), 7)).count();
    let frac = train as f64 / n as f64;
    assert!((frac - 0.8).abs() < 0.01, "train fraction {frac}");
    let moved = (0..n)
        .filter(|i| in_train_split(&format!("prompt-{i}"), 7) != in_train_split(&format!("prompt-{i}"), 8))
        .count();
    assert!(moved > n / 10);
}
