//! One device on its own: fetch item rows, train BPR locally against a
//! fallback negative, then build the privacy-protected upload.
//!
//!     cargo run --example device_training

use semidfegl::data::EgoGraph;
use semidfegl::device::{DeviceConfig, DeviceState};
use semidfegl::numeric::RngStream;
use semidfegl::propagate::uniform_alphas;
use semidfegl::server::ItemTable;

fn main() -> semidfegl::Result<()> {
    let (num_items, dim) = (50, 8);
    let mut rng = RngStream::new(3, "example");
    let table = ItemTable::xavier(num_items, dim, &mut rng)?;
    let ego = EgoGraph::new(0, vec![2, 5, 11, 17, 23]);
    let mut dev = DeviceState::new(ego.clone(), num_items, 10, dim, 3)?;
    dev.receive_items(ego.items.iter().map(|&i| (i, table.rows[i as usize].clone())).collect())?;
    let neg = dev.sample_non_interacted(2, &Default::default());
    dev.receive_fallback(neg.iter().map(|&i| (i, table.rows[i as usize].clone())).collect())?;

    let cfg = DeviceConfig {
        dim,
        layers: 1,
        alphas: uniform_alphas(1),
        adam: semidfegl::numeric::AdamConfig { lr: 0.05, ..DeviceConfig::default().adam },
        ..DeviceConfig::default()
    };
    for epoch in 0..5 {
        let loss = dev.local_train(&cfg, 4)?;
        println!("after {} epochs: mean BPR loss {:.4}", (epoch + 1) * 4, loss.unwrap());
    }

    let bundle = dev.make_upload(&cfg)?;
    println!("positives uploaded: {:?}", bundle.positives.iter().map(|(i, _)| *i).collect::<Vec<_>>());
    println!("fabricated ids: {:?}", bundle.fabricated.iter().map(|(i, _)| *i).collect::<Vec<_>>());
    println!("uplink scalars: {} (full table would be {})", bundle.scalar_count(), num_items * dim);
    println!("ego l1 norm after clip+noise: {:.3}", bundle.ego_embedding.l1_norm());
    Ok(())
}
