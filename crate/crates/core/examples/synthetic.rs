//! Trains on a planted-community network and prints the evaluation table.
//!
//! cargo run --release -p tenence-core --example synthetic -- [nodes] [steps] [epochs] [dim]

use std::time::Instant;

use tenence::eval::{EvalConfig, Regime};
use tenence::experiment::run_experiment;
use tenence::synthetic::{generate, SyntheticConfig};
use tenence::train::TrainConfig;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let args: Vec<usize> = std::env::args()
        .skip(1)
        .map(|a| a.parse())
        .collect::<Result<_, _>>()?;
    let arg = |i: usize, default: usize| args.get(i).copied().unwrap_or(default);
    let data = generate(&SyntheticConfig {
        nodes: arg(0, 60),
        steps: arg(1, 11),
        ..SyntheticConfig::default()
    })?;
    let config = TrainConfig {
        epochs: arg(2, 200),
        dim: arg(3, 64),
        ..TrainConfig::default()
    };
    let start = Instant::now();
    let result = run_experiment(&data, &config, &[0], &Regime::ALL, &EvalConfig::default())?;
    let history = &result.runs[0].history.records;
    if let (Some(first), Some(last)) = (history.first(), history.last()) {
        println!("first {first:?}\nlast  {last:?}");
    }
    print!("{}", result.report.summary_table());
    println!("{:.1}s", start.elapsed().as_secs_f64());
    Ok(())
}
