use std::sync::Arc;

use semidfegl::cluster::FcmConfig;
use semidfegl::data::{filter_and_split, synthetic_block, Dataset, SplitConfig, SyntheticConfig};
use semidfegl::device::DeviceConfig;
use semidfegl::metrics::LedgerRow;
use semidfegl::propagate::uniform_alphas;
use semidfegl::sim::{
    run_experiment, ActorId, CommLedger, MessageKind, RankSource, Schedule, SimConfig, World,
};

fn dataset(users: usize, items: usize) -> Arc<Dataset> {
    let syn = SyntheticConfig {
        users,
        items,
        communities: 3,
        interactions_per_user: 12,
        in_community: 0.9,
    };
    let raw = synthetic_block(&syn, 5).unwrap();
    Arc::new(filter_and_split(&raw, &SplitConfig::default()).unwrap())
}

fn config(groups: usize, fake: usize) -> SimConfig {
    SimConfig {
        device: DeviceConfig {
            dim: 6,
            layers: 2,
            alphas: uniform_alphas(2),
            local_epochs: 1,
            ..DeviceConfig::default()
        },
        fcm: FcmConfig {
            groups,
            max_iters: 30,
            ..FcmConfig::default()
        },
        fake_count: fake,
        seed: 21,
        ..SimConfig::default()
    }
}

fn run(world: &mut World, rounds: u64) {
    for _ in 0..rounds {
        world.run_round().unwrap();
    }
}

#[test]
fn ledger_equals_transcript_replay() {
    let mut w = World::new(dataset(40, 60), config(4, 1)).unwrap();
    run(&mut w, 3);
    assert_eq!(CommLedger::from_transcript(&w.transcript), w.ledger);
    // independent tally straight from message headers
    for round in 0..=3 {
        let mut row = LedgerRow { round, ..LedgerRow::default() };
        for m in w.transcript.iter().filter(|m| m.round == round) {
            match (m.src, m.dst) {
                (ActorId::Device(_), ActorId::Server) => row.uplink += m.payload_params as u64,
                (ActorId::Server, ActorId::Device(_)) => row.downlink += m.payload_params as u64,
                _ => row.d2d += m.payload_params as u64,
            }
        }
        assert_eq!(w.ledger.get(round), Some(&row));
    }
    assert!(w.ledger.get(2).unwrap().d2d > 0);
}

#[test]
fn uploads_stay_below_full_table() {
    let mut w = World::new(dataset(40, 60), config(4, 2)).unwrap();
    run(&mut w, 2);
    let d = w.config.device.dim;
    let m = w.dataset.num_items;
    for dev in &w.devices {
        let up: usize = w
            .transcript
            .iter()
            .filter(|x| x.round == 2 && x.kind == MessageKind::ItemUpload && x.src == ActorId::Device(dev.user()))
            .map(|x| x.payload_params)
            .sum();
        assert_eq!(up, d * (1 + dev.ego.n() + w.config.device.neg_count));
        assert!(up < d * m);
    }
}

#[test]
fn visiting_order_does_not_change_results() {
    let mut a = World::new(dataset(30, 50), config(3, 1)).unwrap();
    let mut b = World::new(dataset(30, 50), SimConfig { schedule_seed: Some(77), ..config(3, 1) }).unwrap();
    run(&mut a, 2);
    run(&mut b, 2);
    assert_eq!(a.server.table, b.server.table);
    assert_eq!(a.server.registry, b.server.registry);
    assert_eq!(a.ledger, b.ledger);
    assert_eq!(a.checkpoint().to_bytes(), b.checkpoint().to_bytes());
    assert_ne!(a.transcript, b.transcript, "schedule seed had no effect on message order");
}

#[test]
fn thread_count_does_not_change_results() {
    let go = |threads: usize| {
        let pool = rayon::ThreadPoolBuilder::new().num_threads(threads).build().unwrap();
        pool.install(|| {
            let out = run_experiment(
                dataset(30, 50),
                config(3, 1),
                Schedule { rounds: 2, ..Schedule::default() },
            )
            .unwrap();
            (out.reports, out.checkpoint.to_bytes(), out.world.ledger)
        })
    };
    assert_eq!(go(1), go(3));
}

#[test]
fn zero_rounds_gives_one_report() {
    let out = run_experiment(dataset(20, 40), config(2, 1), Schedule { rounds: 0, ..Schedule::default() }).unwrap();
    assert_eq!(out.reports.len(), 1);
    assert_eq!(out.reports[0].round, 0);
    assert_eq!(out.reports[0].mean_loss, None);
}

#[test]
fn report_cadence_includes_final_round() {
    let out = run_experiment(
        dataset(20, 40),
        config(2, 1),
        Schedule { rounds: 5, eval_every: 2, ..Schedule::default() },
    )
    .unwrap();
    let rounds: Vec<u64> = out.reports.iter().map(|r| r.round).collect();
    assert_eq!(rounds, vec![0, 2, 4, 5]);
}

#[test]
fn ego_cadence_skips_uploads() {
    let mut w = World::new(dataset(20, 40), SimConfig { ego_upload_every: 2, ..config(2, 1) }).unwrap();
    run(&mut w, 2);
    let egos = |r: u64| w.transcript.iter().filter(|m| m.round == r && m.kind == MessageKind::EgoUpload).count();
    assert_eq!(egos(1), 20);
    assert_eq!(egos(2), 0);
}

#[test]
fn sampling_trains_a_ceiling_fraction_per_group() {
    let mut w = World::new(dataset(30, 50), SimConfig { sample_frac: 0.3, ..config(3, 1) }).unwrap();
    let s = w.run_round().unwrap();
    let expect: usize = w
        .server
        .assignment
        .as_ref()
        .unwrap()
        .groups
        .iter()
        .map(|g| (0.3 * g.users.len() as f64).ceil() as usize)
        .sum();
    assert_eq!(s.trained.len(), expect);
    let uploads = w.transcript.iter().filter(|m| m.round == 1 && m.kind == MessageKind::ItemUpload).count();
    assert_eq!(uploads, expect);
}

#[test]
fn combined_rank_source_ranks_with_bundle_embeddings() {
    let mut w = World::new(dataset(20, 40), SimConfig { rank_source: RankSource::Combined, ..config(2, 1) }).unwrap();
    run(&mut w, 1);
    for (u, e) in w.server.combined.iter() {
        assert_eq!(w.server.registry.get(*u), Some(e));
    }
    let mut v = World::new(dataset(20, 40), config(2, 1)).unwrap();
    run(&mut v, 1);
    assert!(v.server.registry.iter().all(|(_, e)| e.round == 1));
    assert_ne!(v.server.registry, v.server.combined);
}
