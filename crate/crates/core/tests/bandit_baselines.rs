mod common;

use common::{best_arm, env_with_tau, fixture_dataset, random_embedding, row_of};
use prefroute::bandits::{agent_features, train_agent, AgentConfig, AgentKind, BanditError, LinearAgent};
use prefroute::checkpoint::{Checkpoint, Model};
use prefroute::domain::PreferenceVector;
use prefroute::environment::{AccessToken, BanditEnvironment, BanditFeedback, Split};
use prefroute::numerics::SeededRng;

/// `(A⁻¹ b)` for a symmetric 2x2 `A` via the adjugate.
fn solve2(a: [[f64; 2]; 2], b: [f64; 2]) -> [f64; 2] {
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    [
        (a[1][1] * b[0] - a[0][1] * b[1]) / det,
        (a[0][0] * b[1] - a[1][0] * b[0]) / det,
    ]
}

#[test]
fn two_dimensional_updates_match_closed_form_ridge() {
    let updates = [
        ([1.0, 0.0], 0.5),
        ([0.0, 2.0], -0.2),
        ([1.0, 1.0], 0.9),
        ([-0.5, 0.25], 0.1),
        ([3.0, -1.0], 0.0),
    ];
    let lambda = 0.5;
    let mut agent = LinearAgent::new(
        AgentConfig {
            lambda,
            ..Default::default()
        },
        2,
        2,
    )
    .unwrap();
    let mut a = [[lambda, 0.0], [0.0, lambda]];
    let mut b = [0.0, 0.0];
    for (z, r) in updates {
        agent.update(&z, 0, r).unwrap();
        for i in 0..2 {
            b[i] += r * z[i];
            for j in 0..2 {
                a[i][j] += z[i] * z[j];
            }
        }
    }
    let want = solve2(a, b);
    let got = agent.arm(0).theta();
    assert!(
        (got[0] - want[0]).abs() < 1e-12 && (got[1] - want[1]).abs() < 1e-12,
        "{got:?} vs {want:?}"
    );
    let det = a[0][0] * a[1][1] - a[0][1] * a[1][0];
    let inv = [[a[1][1] / det, -a[0][1] / det], [-a[1][0] / det, a[0][0] / det]];
    for i in 0..2 {
        for j in 0..2 {
            assert!((agent.arm(0).gram_inv().get(i, j) - inv[i][j]).abs() < 1e-12);
        }
    }
    assert_eq!(agent.arm(1).theta(), vec![0.0, 0.0]);
    assert_eq!(agent.arm(0).pulls(), 5);
}

#[test]
fn ucb_width_shrinks_along_observed_directions() {
    let mut agent = LinearAgent::new(AgentConfig::default(), 2, 2).unwrap();
    let z = [1.0, 0.0];
    let before = agent.ucb_scores(&z).unwrap()[0];
    for _ in 0..10 {
        agent.update(&z, 0, 0.0).unwrap();
    }
    let after = agent.ucb_scores(&z).unwrap()[0];
    assert!((before - 1.0).abs() < 1e-12);
    assert!((after - (1.0f64 / 11.0).sqrt()).abs() < 1e-12);
    assert!((agent.ucb_scores(&[0.0, 1.0]).unwrap()[0] - 1.0).abs() < 1e-12);
}

#[test]
fn thompson_without_noise_is_greedy() {
    let cfg = AgentConfig {
        nu: 0.0,
        ..AgentConfig::of_kind(AgentKind::LinTs)
    };
    let mut agent = LinearAgent::new(cfg, 3, 3).unwrap();
    let mut rng = SeededRng::new(1);
    for _ in 0..40 {
        let z = random_embedding(&mut rng, 3);
        agent.update(&z, rng.below(3), rng.uniform()).unwrap();
    }
    for _ in 0..100 {
        let z = random_embedding(&mut rng, 3);
        assert_eq!(agent.select(&z, &mut rng).unwrap(), agent.greedy(&z).unwrap());
    }
}

#[test]
fn epsilon_extremes() {
    let mut rng = SeededRng::new(2);
    let mut greedy = LinearAgent::new(
        AgentConfig {
            epsilon: 0.0,
            ..AgentConfig::of_kind(AgentKind::EpsilonGreedy)
        },
        2,
        3,
    )
    .unwrap();
    greedy.update(&[1.0, 1.0], 2, 1.0).unwrap();
    for _ in 0..50 {
        assert_eq!(greedy.select(&[1.0, 1.0], &mut rng).unwrap(), 2);
    }
    let random = LinearAgent::new(
        AgentConfig {
            epsilon: 1.0,
            ..AgentConfig::of_kind(AgentKind::EpsilonGreedy)
        },
        2,
        3,
    )
    .unwrap();
    let mut counts = [0usize; 3];
    for _ in 0..3000 {
        counts[random.select(&[1.0, 1.0], &mut rng).unwrap()] += 1;
    }
    assert!(counts.iter().all(|c| (850..1150).contains(c)), "{counts:?}");
}

#[test]
fn invalid_inputs_are_rejected() {
    assert!(LinearAgent::new(
        AgentConfig {
            lambda: 0.0,
            ..Default::default()
        },
        2,
        2
    )
    .is_err());
    assert!(LinearAgent::new(
        AgentConfig {
            epsilon: 1.5,
            ..Default::default()
        },
        2,
        2
    )
    .is_err());
    assert!(LinearAgent::new(AgentConfig::default(), 2, 1).is_err());
    let mut agent = LinearAgent::new(AgentConfig::default(), 2, 2).unwrap();
    assert!(matches!(
        agent.update(&[1.0], 0, 0.0),
        Err(BanditError::Dimension { .. })
    ));
    assert!(matches!(
        agent.update(&[1.0, 0.0], 2, 0.0),
        Err(BanditError::ArmOutOfRange { .. })
    ));
    assert!(matches!(
        agent.update(&[1.0, 0.0], 0, f64::NAN),
        Err(BanditError::NonFiniteReward(_))
    ));
}

#[test]
fn checkpoints_restore_every_agent_kind() {
    for kind in [AgentKind::LinUcb, AgentKind::LinTs, AgentKind::EpsilonGreedy] {
        let mut agent = LinearAgent::new(AgentConfig::of_kind(kind), 4, 3).unwrap();
        let mut rng = SeededRng::new(8);
        for _ in 0..25 {
            let z = random_embedding(&mut rng, 4);
            agent.update(&z, rng.below(3), rng.uniform()).unwrap();
        }
        let json = Checkpoint::from_agent(&agent, 8, 25).to_json();
        let Model::Agent(back) = Checkpoint::from_json(&json).unwrap().into_model().unwrap() else {
            panic!("expected agent");
        };
        assert_eq!(back.kind(), kind);
        let (mut r1, mut r2) = (SeededRng::new(3), SeededRng::new(3));
        for _ in 0..20 {
            let z = random_embedding(&mut rng, 4);
            assert_eq!(back.mean_scores(&z).unwrap(), agent.mean_scores(&z).unwrap());
            assert_eq!(back.select(&z, &mut r1).unwrap(), agent.select(&z, &mut r2).unwrap());
        }
    }
}

#[test]
fn agents_learn_a_context_dependent_rule() {
    // Arm 0 is right when e_0 > 0, arm 1 otherwise; both are free.
    let mut rng = SeededRng::new(4);
    let rows = (0..600)
        .map(|_| {
            let e = random_embedding(&mut rng, 3);
            let outs = if e[0] > 0.0 {
                vec![(1.0, 0.0), (0.0, 0.0)]
            } else {
                vec![(0.0, 0.0), (1.0, 0.0)]
            };
            ("t", e, outs)
        })
        .collect();
    let env: BanditEnvironment = env_with_tau(fixture_dataset(2, rows, 0), 1.0);
    let token = AccessToken::evaluation();
    for kind in [AgentKind::LinUcb, AgentKind::LinTs, AgentKind::EpsilonGreedy] {
        let mut agent = LinearAgent::new(AgentConfig::of_kind(kind), 5, 2).unwrap();
        let trace = train_agent(&mut agent, &env, 3, &mut SeededRng::new(5)).unwrap();
        assert_eq!(trace.epoch_mean_reward.len(), 3);
        let test = env.dataset().indices(Split::Test);
        let pref = PreferenceVector::balanced();
        let hits = test
            .iter()
            .filter(|&&i| {
                let row = row_of(env.full_outcomes(i, &token).unwrap());
                let z = agent_features(env.embedding(i).unwrap(), &pref);
                agent.greedy(&z).unwrap() == best_arm(0.5, &row, 1.0)
            })
            .count();
        let acc = hits as f64 / test.len() as f64;
        assert!(acc > 0.95, "{kind}: accuracy {acc}");
    }
}
