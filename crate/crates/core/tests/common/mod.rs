//! Oracles and fixtures shared by the integration tests. Everything here is
//! computed independently of the library's numerics.
#![allow(dead_code)]

use std::cell::RefCell;
use std::sync::Arc;

use prefroute::domain::{ArmSet, Context, Outcome, PreferenceVector, RewardSpec};
use prefroute::environment::{BanditEnvironment, BanditFeedback, EnvError, LoggedDataset, LoggedRecord};
use prefroute::numerics::SeededRng;
use prefroute::policy::PolicyNetwork;

pub mod wide;

/// Reward by direct formula: `w_q q - w_c min(c / tau, 1)`.
pub fn reward_oracle(w_q: f64, w_c: f64, q: f64, c: f64, tau: f64) -> f64 {
    let capped = if c / tau > 1.0 { 1.0 } else { c / tau };
    w_q * q - w_c * capped
}

/// Index of the best arm by exhaustive comparison; ties go to the lowest index.
pub fn best_arm(w_c: f64, row: &[(f64, f64)], tau: f64) -> usize {
    let mut best = 0;
    let mut best_r = f64::NEG_INFINITY;
    for (a, (q, c)) in row.iter().enumerate() {
        let r = reward_oracle(1.0 - w_c, w_c, *q, *c, tau);
        if r > best_r {
            best = a;
            best_r = r;
        }
    }
    best
}

pub fn row_of(outcomes: &[Outcome]) -> Vec<(f64, f64)> {
    outcomes.iter().map(|o| (o.score(), o.cost())).collect()
}

/// Solves `A x = b` by Gauss-Jordan elimination with partial pivoting.
pub fn gauss_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n)
            .max_by(|i, j| a[*i][col].abs().total_cmp(&a[*j][col].abs()))
            .unwrap();
        a.swap(col, piv);
        b.swap(col, piv);
        let p = a[col][col];
        for j in 0..n {
            a[col][j] /= p;
        }
        b[col] /= p;
        for i in 0..n {
            if i != col {
                let f = a[i][col];
                if f != 0.0 {
                    for j in 0..n {
                        a[i][j] -= f * a[col][j];
                    }
                    b[i] -= f * b[col];
                }
            }
        }
    }
    b
}

/// Batch ridge regression `(XᵀX + λI)⁻¹ Xᵀy`.
pub fn ridge_oracle(xs: &[Vec<f64>], ys: &[f64], lambda: f64, d: usize) -> Vec<f64> {
    let mut a = vec![vec![0.0; d]; d];
    let mut b = vec![0.0; d];
    for (i, row) in a.iter_mut().enumerate() {
        row[i] = lambda;
    }
    for (x, y) in xs.iter().zip(ys) {
        for i in 0..d {
            b[i] += x[i] * y;
            for j in 0..d {
                a[i][j] += x[i] * x[j];
            }
        }
    }
    gauss_solve(a, b)
}

/// Analytic gradients paired with double-double central differences at step
/// `h`, for every parameter.
pub fn gradient_pairs(
    net: &PolicyNetwork,
    embedding: &[f64],
    pref: PreferenceVector,
    action: usize,
    adv: f64,
    beta: f64,
    h: f64,
) -> Vec<(f64, f64)> {
    let out = net.forward(&Context::new(embedding, pref).unwrap()).unwrap();
    let analytic = net.backward(&out, action, adv, beta).unwrap();
    let numeric = wide::central_differences(
        net.kind(),
        net.dims(),
        net.params(),
        embedding,
        pref,
        action,
        adv,
        beta,
        h,
    );
    analytic.into_iter().zip(numeric).collect()
}

/// `|a - n| / max(|a|, |n|, floor)`; zero when both vanish.
pub fn relative_error(a: f64, n: f64, floor: f64) -> f64 {
    let d = a.abs().max(n.abs()).max(floor);
    if d == 0.0 {
        0.0
    } else {
        (a - n).abs() / d
    }
}

/// Worst per-coordinate relative error and its index.
#[allow(clippy::too_many_arguments)]
pub fn gradient_check(
    net: &PolicyNetwork,
    embedding: &[f64],
    pref: PreferenceVector,
    action: usize,
    adv: f64,
    beta: f64,
    h: f64,
    floor: f64,
) -> (f64, usize) {
    gradient_pairs(net, embedding, pref, action, adv, beta, h)
        .iter()
        .enumerate()
        .map(|(i, (a, n))| (relative_error(*a, *n, floor), i))
        .fold((0.0, 0), |w, x| if x.0 > w.0 { x } else { w })
}

/// Dataset from explicit `(task, embedding, [(q, c)])` rows.
pub fn fixture_dataset(arms: usize, rows: Vec<(&str, Vec<f64>, Vec<(f64, f64)>)>, split_seed: u64) -> LoggedDataset {
    let ids: Vec<String> = (0..arms).map(|a| format!("arm{a}")).collect();
    let d_e = rows[0].1.len();
    let records = rows
        .into_iter()
        .enumerate()
        .map(|(i, (task, e, outs))| LoggedRecord {
            prompt_id: format!("p{i:05}"),
            task_id: task.to_string(),
            embedding: e,
            outcomes: outs.iter().map(|(q, c)| Outcome::new(*q, *c).unwrap()).collect(),
        })
        .collect();
    LoggedDataset::new(ArmSet::from_ids(&ids).unwrap(), d_e, records, split_seed).unwrap()
}

pub fn env_with_tau(ds: LoggedDataset, tau: f64) -> BanditEnvironment {
    BanditEnvironment::new(Arc::new(ds), RewardSpec::new(tau).unwrap())
}

pub fn random_embedding(rng: &mut SeededRng, d: usize) -> Vec<f64> {
    (0..d).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

/// Bandit environment whose outcome table starts entirely NaN. `step`
/// fills in only the requested cell from a hidden source and reads the
/// outcome back from the table, so any path that touched another cell would
/// observe NaN. Every call is logged.
pub struct SpyEnvironment {
    source: Arc<LoggedDataset>,
    tau: f64,
    pub table: RefCell<Vec<Vec<(f64, f64)>>>,
    pub log: RefCell<Vec<(usize, usize)>>,
}

impl SpyEnvironment {
    pub fn new(source: Arc<LoggedDataset>, tau: f64) -> Self {
        let table = source
            .records()
            .iter()
            .map(|r| vec![(f64::NAN, f64::NAN); r.outcomes.len()])
            .collect();
        Self {
            source,
            tau,
            table: RefCell::new(table),
            log: RefCell::new(Vec::new()),
        }
    }

    /// Cells that were ever revealed.
    pub fn revealed_cells(&self) -> usize {
        self.table
            .borrow()
            .iter()
            .flatten()
            .filter(|(q, _)| !q.is_nan())
            .count()
    }
}

impl BanditFeedback for SpyEnvironment {
    fn num_arms(&self) -> usize {
        self.source.num_arms()
    }

    fn embedding_dim(&self) -> usize {
        self.source.embedding_dim()
    }

    fn reward_spec(&self) -> RewardSpec {
        RewardSpec::new(self.tau).unwrap()
    }

    fn train_indices(&self) -> Vec<usize> {
        self.source.indices(prefroute::environment::Split::Train)
    }

    fn embedding(&self, record: usize) -> Result<&[f64], EnvError> {
        Ok(&self.source.records()[record].embedding)
    }

    fn step(&self, record: usize, arm: usize) -> Result<Outcome, EnvError> {
        self.log.borrow_mut().push((record, arm));
        let hidden = &self.source.records()[record].outcomes[arm];
        let mut table = self.table.borrow_mut();
        table[record][arm] = (hidden.score(), hidden.cost());
        let (q, c) = table[record][arm];
        Ok(Outcome::new(q, c)?)
    }
}
