//! Recall@20 as the number of propagation layers changes.
//!
//!     cargo run --release --example sweep

use semidfegl::config::{DatasetFormat, ExperimentConfig};
use semidfegl::sim::run_experiment;

fn main() -> semidfegl::Result<()> {
    let base = ExperimentConfig {
        dataset_format: DatasetFormat::Synthetic,
        synth_users: 150,
        synth_items: 100,
        dim: 16,
        groups: Some(30),
        rounds: 6,
        eval_every: 6,
        ldp_lambda: 0.01,
        lr: 0.01,
        ..ExperimentConfig::default()
    };
    for layers in 1..=4 {
        let mut cfg = base.clone();
        cfg.set("layers", &layers.to_string()).map_err(|e| semidfegl::Error::Config(vec![e]))?;
        let out = run_experiment(cfg.load_dataset()?, cfg.sim_config(), cfg.schedule())?;
        let last = out.reports.last().unwrap();
        println!("layers={layers}  recall@20 {:.4}  ndcg@20 {:.4}  d2d/round {}", last.recall, last.ndcg, last.d2d);
    }
    Ok(())
}
