//! Fuzzy c-means over user and item embeddings, then hard groups and fake
//! common items per group.
//!
//!     cargo run --example clustering

use semidfegl::cluster::{assign_groups, fcm_fit, FakeItemMode, FcmConfig};
use semidfegl::numeric::{Embedding, RngStream};

fn main() -> semidfegl::Result<()> {
    let (users, items, dim) = (30, 20, 4);
    let mut rng = RngStream::new(7, "example");
    // three well-separated blobs, users first then items
    let points: Vec<Embedding> = (0..users + items)
        .map(|i| {
            let c = (i % 3) as f64 * 4.0;
            Embedding::from_vec((0..dim).map(|d| if d == 0 { c } else { 0.0 } + rng.standard_normal() * 0.5).collect())
        })
        .collect();
    let cfg = FcmConfig { groups: 3, ..FcmConfig::default() };
    let fit = fcm_fit(&points, &cfg, &mut rng)?;
    println!("iterations: {}", fit.iterations);
    println!(
        "objective: {:.3} -> {:.3}",
        fit.objective_history[0],
        fit.objective_history.last().unwrap()
    );
    let asg = assign_groups(&fit.membership, users, 2, FakeItemMode::PerGroup);
    for (j, g) in asg.groups.iter().enumerate() {
        println!("group {j}: {} users, fake items {:?}", g.users.len(), g.fake_ids());
    }
    Ok(())
}
