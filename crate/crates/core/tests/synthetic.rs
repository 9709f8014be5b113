mod common;

use common::{best_arm, gauss_solve, row_of};
use prefroute::environment::{
    gen_synthetic, xor_parity, SyntheticKind, SyntheticSpec, XOR_FALLBACK_SCORE, XOR_PARITY_COST_FRACTION,
};

fn xor_data(n: usize, seed: u64) -> (Vec<Vec<f64>>, Vec<f64>) {
    let ds = gen_synthetic(&SyntheticSpec::xor(n, 8), seed).unwrap();
    let xs = ds
        .records()
        .iter()
        .map(|r| r.embedding.iter().copied().chain([1.0]).collect())
        .collect();
    let ys = ds
        .records()
        .iter()
        .map(|r| if r.outcomes[0].score() == 1.0 { 1.0 } else { -1.0 })
        .collect();
    (xs, ys)
}

fn accuracy(w: &[f64], xs: &[Vec<f64>], ys: &[f64]) -> f64 {
    let hits = xs
        .iter()
        .zip(ys)
        .filter(|(x, y)| {
            let s: f64 = x.iter().zip(w).map(|(a, b)| a * b).sum();
            (s >= 0.0) == (**y > 0.0)
        })
        .count();
    hits as f64 / xs.len() as f64
}

#[test]
fn xor_labels_defeat_linear_classifiers() {
    let (xs, ys) = xor_data(4000, 1);
    let (test_x, test_y) = xor_data(2000, 2);
    let d = xs[0].len();

    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for (x, y) in xs.iter().zip(&ys) {
        for i in 0..d {
            b[i] += x[i] * y;
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
        }
    }
    let ls = gauss_solve(a, b);
    let ls_acc = accuracy(&ls, &test_x, &test_y);
    assert!(ls_acc <= 0.6, "least squares {ls_acc}");

    let mut w = vec![0.0; d];
    for _ in 0..300 {
        let mut g = vec![0.0; d];
        for (x, y) in xs.iter().zip(&ys) {
            let m: f64 = y * x.iter().zip(&w).map(|(a, b)| a * b).sum::<f64>();
            let s = 1.0 / (1.0 + m.exp());
            for i in 0..d {
                g[i] -= y * x[i] * s;
            }
        }
        for i in 0..d {
            w[i] -= 0.5 * g[i] / xs.len() as f64;
        }
    }
    let lr_acc = accuracy(&w, &test_x, &test_y);
    assert!(lr_acc <= 0.6, "logistic {lr_acc}");
}

#[test]
fn xor_lookup_rule_is_exact() {
    let ds = gen_synthetic(&SyntheticSpec::xor(2000, 8), 3).unwrap();
    let tau = ds.declared_tau().unwrap();
    for r in ds.records() {
        let good = if xor_parity(&r.embedding) { 0 } else { 1 };
        assert_eq!(r.outcomes[good].score(), 1.0);
        assert_eq!(r.outcomes[1 - good].score(), 0.0);
        assert_eq!(r.outcomes[0].cost(), tau * XOR_PARITY_COST_FRACTION);
        assert_eq!(r.outcomes[2].score(), XOR_FALLBACK_SCORE);
        assert_eq!(r.outcomes[2].cost(), 0.0);
        let row = row_of(&r.outcomes);
        assert_eq!(best_arm(0.0, &row, tau), good);
        assert_eq!(best_arm(1.0, &row, tau), 2);
    }
    let agree = ds.records().iter().filter(|r| xor_parity(&r.embedding)).count();
    assert!((900..1100).contains(&agree), "{agree}");
}

#[test]
fn piecewise_best_arm_switches_once() {
    let ds = gen_synthetic(&SyntheticSpec::piecewise(10, 4), 5).unwrap();
    let tau = ds.declared_tau().unwrap();
    let row = row_of(&ds.records()[0].outcomes);
    let arms: Vec<usize> = (0..=100).map(|i| best_arm(i as f64 / 100.0, &row, tau)).collect();
    let switch = arms.iter().position(|a| *a == 1).unwrap();
    assert!(arms[..switch].iter().all(|a| *a == 0));
    assert!(arms[switch..].iter().all(|a| *a == 1));
    // Quality gap 0.4 against a cost gap of one full tau: indifferent at 2/7.
    assert_eq!(switch, 29);
    assert!((SyntheticSpec::piecewise_threshold() - 2.0 / 7.0).abs() < 1e-15);
}

#[test]
fn linear_generator_costs_rise_with_arm_index() {
    let spec = SyntheticSpec::new(SyntheticKind::Linear, 4, 5, 200);
    let ds = gen_synthetic(&spec, 6).unwrap();
    for r in ds.records() {
        let c: Vec<f64> = r.outcomes.iter().map(|o| o.cost()).collect();
        assert!(c.windows(2).all(|w| w[0] < w[1]));
        assert!((c[3] - spec.tau).abs() < 1e-15);
        assert!(r.outcomes.iter().all(|o| (0.0..=1.0).contains(&o.score())));
    }
}

#[test]
fn generators_are_seeded() {
    for spec in [
        SyntheticSpec::piecewise(50, 3),
        SyntheticSpec::xor(50, 3),
        SyntheticSpec::new(SyntheticKind::Linear, 3, 3, 50),
    ] {
        let a = gen_synthetic(&spec, 1).unwrap();
        assert_eq!(a, gen_synthetic(&spec, 1).unwrap());
        assert_ne!(a.records(), gen_synthetic(&spec, 2).unwrap().records());
    }
}

#[test]
fn invalid_specs_are_rejected() {
    let bad = [
        SyntheticSpec {
            k: 3,
            ..SyntheticSpec::piecewise(10, 2)
        },
        SyntheticSpec {
            d_e: 1,
            ..SyntheticSpec::xor(10, 2)
        },
        SyntheticSpec {
            n: 0,
            ..SyntheticSpec::xor(10, 2)
        },
        SyntheticSpec {
            tau: 0.0,
            ..SyntheticSpec::xor(10, 2)
        },
    ];
    for s in bad {
        assert!(gen_synthetic(&s, 0).is_err(), "{s:?}");
    }
}
