//! Parse a MovieLens-style log, apply the k-core filter and split per user.
//!
//!     cargo run --example ingest_split [path/to/ratings.dat]

use semidfegl::data::{build_ego_graphs, filter_and_split, ingest, parse_interactions, Format, SplitConfig};

fn toy_log() -> String {
    let mut text = String::new();
    for u in 1..=40u64 {
        for k in 0..12u64 {
            let item = (u * 7 + k * 3) % 50 + 1;
            text.push_str(&format!("{u}::{item}::4::{}\n", 978_300_000 + u * 100 + k));
        }
    }
    text
}

fn main() -> semidfegl::Result<()> {
    let raw = match std::env::args().nth(1) {
        Some(path) => ingest(path, Format::MovielensDat)?,
        None => parse_interactions(&toy_log(), Format::MovielensDat)?,
    };
    let cfg = SplitConfig { min_interactions: 5, ..SplitConfig::default() };
    let ds = filter_and_split(&raw, &cfg)?;
    println!("raw interactions: {}", raw.len());
    println!("users {} items {}", ds.num_users, ds.num_items);
    println!("train {} valid {} test {}", ds.train_len(), ds.valid_len(), ds.test_len());

    let egos = build_ego_graphs(&ds);
    let sizes: Vec<usize> = egos.iter().map(|e| e.n()).collect();
    let mean = sizes.iter().sum::<usize>() as f64 / sizes.len() as f64;
    println!("ego graph size: min {} mean {mean:.1} max {}", sizes.iter().min().unwrap(), sizes.iter().max().unwrap());
    println!("user 0 (raw id {}) trains on {:?}", ds.id_map.users[0], egos[0].items);
    Ok(())
}
