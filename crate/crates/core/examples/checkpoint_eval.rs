//! Save the server state after a short run, reload it and rank for a user.
//!
//!     cargo run --release --example checkpoint_eval

use std::collections::BTreeSet;

use semidfegl::config::{DatasetFormat, ExperimentConfig};
use semidfegl::metrics::{evaluate, Split};
use semidfegl::server::checkpoint::Checkpoint;
use semidfegl::server::rank_topk;
use semidfegl::sim::run_experiment;

fn main() -> semidfegl::Result<()> {
    let cfg = ExperimentConfig {
        dataset_format: DatasetFormat::Synthetic,
        synth_users: 100,
        synth_items: 80,
        dim: 8,
        layers: 2,
        groups: Some(20),
        rounds: 3,
        ldp_lambda: 0.01,
        lr: 0.01,
        ..ExperimentConfig::default()
    };
    let ds = cfg.load_dataset()?;
    let out = run_experiment(ds.clone(), cfg.sim_config(), cfg.schedule())?;
    let path = std::env::temp_dir().join("sdfe-example.ckpt");
    out.checkpoint.write(&path)?;

    let ck = Checkpoint::read(&path)?;
    println!("checkpoint: round {} N={} M={} d={}", ck.round, ck.num_users, ck.num_items, ck.dim);
    let (table, registry) = (ck.item_table(), ck.ego_registry());
    let s = evaluate(&registry, &table, &ds, Split::Test, 20)?;
    println!("reloaded Recall@20 {:.4}, in-memory {:.4}", s.recall, out.reports.last().unwrap().recall);
    let seen: BTreeSet<u32> = ds.train[0].iter().copied().collect();
    println!("top 5 for user 0: {:?}", rank_topk(&registry, &table, 0, 5, &seen)?);
    println!("held-out for user 0: {:?}", ds.test[0]);
    Ok(())
}
