//! Aggregates per-task scores into a report and compares two routers.
//!
//! Run with `cargo run --example table_arithmetic`.

use prefroute::evaluation::{compare, EvaluationReport, ReportMeta, TaskRow};

fn report(router: &str, rows: &[(&str, f64, f64)]) -> EvaluationReport {
    let tasks = rows
        .iter()
        .map(|(task, score, cost)| TaskRow {
            task: task.to_string(),
            n: 100,
            score_pct: *score,
            cost_usd: *cost,
            mean_reward: 0.0,
        })
        .collect();
    EvaluationReport::from_tasks(
        ReportMeta {
            router: router.into(),
            ..Default::default()
        },
        tasks,
    )
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let reference = report(
        "largest-model",
        &[("mmlu", 81.0, 0.0031), ("gsm8k", 74.0, 0.0042), ("mbpp", 58.0, 0.0027)],
    );
    let candidate = report(
        "router",
        &[("mmlu", 79.5, 0.0012), ("gsm8k", 76.0, 0.0019), ("mbpp", 61.0, 0.0015)],
    );
    print!("{}", reference.render_table());
    println!();
    print!("{}", candidate.render_table());
    println!();
    println!("{}", compare(&reference, &candidate)?.render());
    print!("{}", candidate.to_csv());
    Ok(())
}
