//! Paired runs with and without fake common items over a few seeds.
//!
//!     cargo run --release --example ablation [seeds]

use semidfegl::config::{DatasetFormat, ExperimentConfig};
use semidfegl::sim::run_experiment;

fn final_recall(cfg: &ExperimentConfig) -> semidfegl::Result<(f64, u64)> {
    let out = run_experiment(cfg.load_dataset()?, cfg.sim_config(), cfg.schedule())?;
    let d2d = out.world.ledger.rows.iter().map(|r| r.d2d).sum();
    Ok((out.reports.last().unwrap().recall, d2d))
}

fn main() -> semidfegl::Result<()> {
    let seeds: u64 = std::env::args().nth(1).map_or(3, |s| s.parse().expect("seeds"));
    let base = ExperimentConfig {
        dataset_format: DatasetFormat::Synthetic,
        synth_users: 150,
        synth_items: 100,
        dim: 16,
        layers: 2,
        groups: Some(30),
        rounds: 8,
        eval_every: 8,
        ldp_lambda: 0.01,
        lr: 0.01,
        ..ExperimentConfig::default()
    };
    println!("seed  with_fake  d2d        without  d2d");
    for seed in 0..seeds {
        let (rw, dw) = final_recall(&ExperimentConfig { seed, ..base.clone() })?;
        let (ro, d0) = final_recall(&ExperimentConfig { seed, fake_items: 0, ..base.clone() })?;
        println!("{seed:>4}  {rw:.4}     {dw:<9}  {ro:.4}   {d0}");
    }
    Ok(())
}
