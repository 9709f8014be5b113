//! Writes a small JSONL log with an embedding sidecar, ingests it back, and
//! shows what the training loop may and may not see.
//!
//! Run with `cargo run --example ingest_logs`.

use std::sync::Arc;

use prefroute::environment::{
    gen_synthetic, ingest, write_dataset, AccessToken, BanditEnvironment, BanditFeedback, IngestOptions, LogFormat,
    Split, SyntheticSpec,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let dir = std::env::temp_dir().join(format!("prefroute-ingest-{}", std::process::id()));
    std::fs::create_dir_all(&dir)?;
    let path = dir.join("log.jsonl");
    write_dataset(&gen_synthetic(&SyntheticSpec::xor(200, 4), 9)?, &path)?;
    let head: Vec<String> = std::fs::read_to_string(&path)?
        .lines()
        .take(2)
        .map(String::from)
        .collect();
    println!("{}", head.join("\n"));

    let opts = IngestOptions {
        strict: true,
        split_seed: 1,
        ..Default::default()
    };
    let ds = Arc::new(ingest(&path, LogFormat::Jsonl, &opts)?);
    println!(
        "{} records, {} arms, d_e {}, train {}, test {}, declared tau {:?}",
        ds.len(),
        ds.num_arms(),
        ds.embedding_dim(),
        ds.indices(Split::Train).len(),
        ds.indices(Split::Test).len(),
        ds.declared_tau()
    );

    let env = BanditEnvironment::with_default_reward(Arc::clone(&ds))?;
    let o = env.step(0, 1)?;
    println!("bandit step on record 0, arm 1: score {} cost {}", o.score(), o.cost());
    let row = env.full_outcomes(0, &AccessToken::evaluation())?;
    println!("evaluation view of record 0: {} outcomes", row.len());
    println!("outcome cells revealed so far: {}", env.audit_count());
    std::fs::remove_dir_all(&dir)?;
    Ok(())
}
