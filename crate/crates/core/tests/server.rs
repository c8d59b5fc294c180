use std::collections::{BTreeMap, BTreeSet};

use proptest::prelude::*;
use semidfegl::device::UploadBundle;
use semidfegl::numeric::{Embedding, RngStream};
use semidfegl::server::checkpoint::Checkpoint;
use semidfegl::server::{fedavg_items, rank_topk, EgoRegistry, ItemTable};

fn random_table(rng: &mut RngStream, items: usize, dim: usize) -> ItemTable {
    let rows = (0..items)
        .map(|_| Embedding::from_vec((0..dim).map(|_| rng.uniform() - 0.5).collect()))
        .collect();
    ItemTable { rows, version: 0 }
}

fn random_uploads(rng: &mut RngStream, users: usize, items: usize, dim: usize) -> Vec<UploadBundle> {
    let vec = |rng: &mut RngStream| Embedding::from_vec((0..dim).map(|_| rng.uniform() * 2.0 - 1.0).collect());
    (0..users as u32)
        .map(|u| {
            let mut ids: Vec<u32> = (0..items as u32).collect();
            rng.shuffle(&mut ids);
            let n = 1 + rng.index(items - 1);
            let split = rng.index(n + 1);
            UploadBundle {
                user: u,
                ego_embedding: vec(rng),
                positives: ids[..split].iter().map(|&i| (i, vec(rng))).collect(),
                fabricated: ids[split..n].iter().map(|&i| (i, vec(rng))).collect(),
            }
        })
        .collect()
}

/// Plain per-item mean, computed without the server code path.
fn brute_mean(table: &ItemTable, uploads: &[UploadBundle]) -> Vec<Embedding> {
    let mut rows = table.rows.clone();
    for (i, row) in rows.iter_mut().enumerate() {
        let contribs: Vec<&Embedding> = uploads
            .iter()
            .flat_map(|b| b.positives.iter().chain(&b.fabricated))
            .filter(|(id, _)| *id as usize == i)
            .map(|(_, e)| e)
            .collect();
        if contribs.is_empty() {
            continue;
        }
        *row = Embedding::from_vec(
            (0..row.dim())
                .map(|d| contribs.iter().map(|e| e[d]).sum::<f64>() / contribs.len() as f64)
                .collect(),
        );
    }
    rows
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn fedavg_is_the_per_item_mean(seed in any::<u64>(), users in 1usize..8, items in 2usize..10) {
        let mut rng = RngStream::new(seed, "fedavg");
        let table = random_table(&mut rng, items, 3);
        let uploads = random_uploads(&mut rng, users, items, 3);
        let next = fedavg_items(&table, &uploads).unwrap();
        for (got, want) in next.rows.iter().zip(brute_mean(&table, &uploads)) {
            for (a, b) in got.iter().zip(want.iter()) {
                prop_assert!((a - b).abs() < 1e-12);
            }
        }
        prop_assert_eq!(next.version, 1);
    }

    #[test]
    fn fedavg_ignores_arrival_order(seed in any::<u64>(), users in 2usize..8) {
        let mut rng = RngStream::new(seed, "fedavg");
        let table = random_table(&mut rng, 6, 4);
        let uploads = random_uploads(&mut rng, users, 6, 4);
        let mut shuffled = uploads.clone();
        rng.shuffle(&mut shuffled);
        prop_assert_eq!(fedavg_items(&table, &uploads).unwrap(), fedavg_items(&table, &shuffled).unwrap());
    }

    #[test]
    fn ranking_matches_full_sort(seed in any::<u64>(), items in 1usize..40, k in 1usize..50) {
        let mut rng = RngStream::new(seed, "rank");
        let mut table = random_table(&mut rng, items, 3);
        // force exact ties on a few rows
        if items > 3 {
            table.rows[3] = table.rows[1].clone();
        }
        let mut reg = EgoRegistry::default();
        reg.update(0, Embedding::from_vec(vec![0.3, -0.2, 0.5]), 0).unwrap();
        let exclude: BTreeSet<u32> = (0..items as u32).filter(|_| rng.uniform() < 0.2).collect();
        let got = rank_topk(&reg, &table, 0, k, &exclude).unwrap();

        let ego = &reg.get(0).unwrap().embedding;
        let mut all: Vec<(f64, u32)> = (0..items as u32)
            .filter(|i| !exclude.contains(i))
            .map(|i| (ego.iter().zip(table.rows[i as usize].iter()).map(|(a, b)| a * b).sum(), i))
            .collect();
        all.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(&b.1)));
        let want: Vec<u32> = all.into_iter().take(k).map(|(_, i)| i).collect();
        prop_assert_eq!(got, want);
    }

    #[test]
    fn ranking_is_invariant_to_positive_rescaling(seed in any::<u64>(), scale in 0.01f64..100.0) {
        let mut rng = RngStream::new(seed, "rank");
        let table = random_table(&mut rng, 30, 4);
        let ego = Embedding::from_vec((0..4).map(|_| rng.uniform() - 0.5).collect());
        let mut a = EgoRegistry::default();
        a.update(0, ego.clone(), 0).unwrap();
        let mut b = EgoRegistry::default();
        b.update(0, ego.scaled(scale), 0).unwrap();
        let none = BTreeSet::new();
        prop_assert_eq!(rank_topk(&a, &table, 0, 10, &none).unwrap(), rank_topk(&b, &table, 0, 10, &none).unwrap());
    }

    #[test]
    fn checkpoint_bytes_round_trip(seed in any::<u64>(), users in 1usize..12, items in 1usize..9, dim in 1usize..5) {
        let mut rng = RngStream::new(seed, "ckpt");
        let table = random_table(&mut rng, items, dim);
        let mut reg = EgoRegistry::default();
        for u in 0..users as u32 {
            if rng.uniform() < 0.7 {
                reg.update(u, Embedding::from_vec((0..dim).map(|_| rng.uniform()).collect()), 3).unwrap();
            }
        }
        let ck = Checkpoint::capture(&table, &reg, users, 7, 4);
        let bytes = ck.to_bytes();
        let back = Checkpoint::from_bytes(&bytes).unwrap();
        prop_assert_eq!(&back, &ck);
        prop_assert_eq!(back.to_bytes(), bytes);
        prop_assert_eq!(back.ego_registry().len(), reg.len());
        for (row, orig) in back.item_table().rows.iter().zip(&table.rows) {
            for (x, y) in row.iter().zip(orig.iter()) {
                prop_assert_eq!(*x, *y as f32 as f64);
            }
        }
    }
}

#[test]
fn stale_ego_upload_is_rejected() {
    let mut reg = EgoRegistry::default();
    reg.update(4, Embedding::from_vec(vec![1.0]), 5).unwrap();
    assert!(reg.update(4, Embedding::from_vec(vec![2.0]), 4).is_err());
    reg.update(4, Embedding::from_vec(vec![3.0]), 5).unwrap();
    assert_eq!(reg.get(4).unwrap().embedding[0], 3.0);
}

#[test]
fn truncated_checkpoint_is_an_error() {
    let mut rng = RngStream::new(1, "ckpt");
    let table = random_table(&mut rng, 5, 3);
    let bytes = Checkpoint::capture(&table, &EgoRegistry::default(), 2, 0, 2).to_bytes();
    assert!(Checkpoint::from_bytes(&bytes[..bytes.len() - 1]).is_err());
    assert!(Checkpoint::from_bytes(b"nope").is_err());
}

#[test]
fn untouched_items_keep_their_rows() {
    let mut rng = RngStream::new(2, "fedavg");
    let table = random_table(&mut rng, 4, 2);
    let upload = UploadBundle {
        user: 0,
        ego_embedding: Embedding::zeros(2),
        positives: vec![(1, Embedding::from_vec(vec![9.0, 9.0]))],
        fabricated: vec![],
    };
    let next = fedavg_items(&table, &[upload]).unwrap();
    let changed: BTreeMap<usize, bool> = (0..4).map(|i| (i, next.rows[i] != table.rows[i])).collect();
    assert_eq!(changed.values().filter(|c| **c).count(), 1);
    assert!(changed[&1]);
}
