//! Full protocol on the synthetic block dataset with per-round metrics and
//! communication counts.
//!
//!     cargo run --release --example federated_run [rounds]

use semidfegl::config::{DatasetFormat, ExperimentConfig};
use semidfegl::metrics::{random_recall_expectation, Split};
use semidfegl::sim::World;

fn main() -> semidfegl::Result<()> {
    let rounds: u64 = std::env::args().nth(1).map_or(10, |s| s.parse().expect("rounds"));
    let cfg = ExperimentConfig {
        dataset_format: DatasetFormat::Synthetic,
        synth_users: 200,
        synth_items: 120,
        dim: 16,
        layers: 2,
        groups: Some(40),
        ldp_lambda: 0.01,
        lr: 0.01,
        ..ExperimentConfig::default()
    };
    cfg.validate()?;
    let ds = cfg.load_dataset()?;
    println!("random Recall@20 expectation: {:.4}", random_recall_expectation(&ds, Split::Test, 20));
    let mut world = World::new(ds, cfg.sim_config())?;
    println!("round  recall  ndcg    loss     uplink  downlink  d2d");
    loop {
        let r = world.report(20, false)?;
        let loss = r.mean_loss.map_or("-".to_string(), |l| format!("{l:.3}"));
        println!(
            "{:>5}  {:.4}  {:.4}  {loss:>7}  {:>6}  {:>8}  {:>5}",
            r.round, r.recall, r.ndcg, r.uplink, r.downlink, r.d2d
        );
        if world.round == rounds {
            break;
        }
        world.run_round()?;
    }
    Ok(())
}
