//! Round scheduler driving devices and the server over the message bus.
//!
//! Every cross-actor effect is a [`Payload`] on the [`Bus`]. Device work runs
//! on the rayon pool between barriers; all sends happen on the scheduling
//! thread in a fixed order, so results do not depend on thread count.

mod bus;

pub use bus::{write_transcript_jsonl, ActorId, Bus, CommLedger, Envelope, MessageKind, Payload, RoundMessage};

use std::collections::{BTreeMap, BTreeSet};
use std::sync::Arc;

use rayon::prelude::*;

use crate::cluster::{FakeItemMode, FcmConfig, GroupAssignment};
use crate::data::{build_ego_graphs, Dataset, EgoGraph, ItemId, UserId};
use crate::device::{apply_ldp, DeviceConfig, DeviceState, GroupNotice, UploadBundle};
use crate::error::{Error, Result};
use crate::metrics::{evaluate, EvalSummary, MetricsReport, Split};
use crate::numeric::{Embedding, RngStream};
use crate::propagate::{GroupGraph, LayerStack, Node};
use crate::server::checkpoint::Checkpoint;
use crate::server::{fedavg_items, recluster, EgoRegistry, ItemTable};

/// Which upload feeds the registry used for ranking and clustering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum RankSource {
    /// One-hop ego-graph embedding uploaded in step 2 of each round.
    #[default]
    EgoGraph,
    /// Post-training combined user embedding carried by the upload bundle.
    Combined,
}

impl std::str::FromStr for RankSource {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "ego_graph" => Ok(RankSource::EgoGraph),
            "combined" => Ok(RankSource::Combined),
            other => Err(Error::Argument(format!("unknown rank source {other:?}; expected ego_graph or combined"))),
        }
    }
}

impl std::fmt::Display for RankSource {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            RankSource::EgoGraph => "ego_graph",
            RankSource::Combined => "combined",
        })
    }
}

/// Protocol knobs of a simulation.
#[derive(Debug, Clone, PartialEq)]
pub struct SimConfig {
    pub device: DeviceConfig,
    pub fcm: FcmConfig,
    pub fake_count: usize,
    pub fake_mode: FakeItemMode,
    pub sample_frac: f64,
    pub recluster_every: u64,
    pub ego_upload_every: u64,
    pub rank_source: RankSource,
    pub seed: u64,
    /// When set, devices are visited in a per-round random order.
    pub schedule_seed: Option<u64>,
}

impl Default for SimConfig {
    fn default() -> Self {
        SimConfig {
            device: DeviceConfig::default(),
            fcm: FcmConfig::default(),
            fake_count: 1,
            fake_mode: FakeItemMode::PerGroup,
            sample_frac: 1.0,
            recluster_every: 1,
            ego_upload_every: 1,
            rank_source: RankSource::EgoGraph,
            seed: 0,
            schedule_seed: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Event {
    Warning { round: u64, message: String },
    RoundAborted { round: u64, message: String },
}

#[derive(Debug, Clone)]
pub struct ServerState {
    pub table: ItemTable,
    /// Embeddings used for ranking and clustering.
    pub registry: EgoRegistry,
    /// Latest combined user embedding from each upload bundle.
    pub combined: EgoRegistry,
    pub assignment: Option<GroupAssignment>,
    pub cluster_rng: RngStream,
    pub sample_rng: RngStream,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RoundSummary {
    pub round: u64,
    pub mean_loss: Option<f64>,
    pub trained: Vec<UserId>,
}

/// Next device and server state, transcript, summary and warnings of a round.
type RoundOutcome = (Vec<DeviceState>, ServerState, Vec<RoundMessage>, RoundSummary, Vec<String>);

/// Full simulation state. Rounds are atomic: a failed round leaves every
/// field except `events` untouched.
#[derive(Debug, Clone)]
pub struct World {
    pub config: SimConfig,
    pub dataset: Arc<Dataset>,
    pub devices: Vec<DeviceState>,
    pub server: ServerState,
    pub round: u64,
    pub transcript: Vec<RoundMessage>,
    pub ledger: CommLedger,
    pub events: Vec<Event>,
    pub last_loss: Option<f64>,
}

fn ldp(cfg: &DeviceConfig, v: &Embedding, rng: &mut RngStream) -> Result<Embedding> {
    apply_ldp(v, cfg.delta, cfg.ldp_lambda, rng)
}

fn divisible(round: u64, every: u64) -> bool {
    every > 0 && (round - 1).is_multiple_of(every)
}

/// Drains every device mailbox in visiting order, indexed by user.
fn collect_mail(bus: &mut Bus, n: usize, order: &[usize]) -> Vec<Vec<Envelope>> {
    let mut mail = vec![Vec::new(); n];
    for &u in order {
        mail[u] = bus.drain(ActorId::Device(u as UserId));
    }
    mail
}

/// Answers every pending ItemFetch request on the server mailbox.
fn serve_fetches(bus: &mut Bus, table: &ItemTable) -> Result<()> {
    for env in bus.drain(ActorId::Server) {
        match env.payload {
            Payload::ItemRequest(ids) => {
                let rows = ids.iter().map(|&i| Ok((i, table.row(i)?.clone()))).collect::<Result<Vec<_>>>()?;
                bus.send(ActorId::Server, env.header.src, Payload::ItemRows(rows));
            }
            other => {
                return Err(Error::Protocol(format!("server expected ItemFetch, got {:?}", other.kind())));
            }
        }
    }
    Ok(())
}

fn rows_from(mail: Vec<Envelope>, user: usize) -> Result<Vec<(ItemId, Embedding)>> {
    let mut rows = Vec::new();
    for env in mail {
        match env.payload {
            Payload::ItemRows(r) => rows.extend(r),
            other => {
                return Err(Error::Protocol(format!("device {user} expected item rows, got {:?}", other.kind())));
            }
        }
    }
    Ok(rows)
}

impl World {
    /// Builds devices and the server table, then runs the round-0 exchange:
    /// item fetch and ego upload for every device.
    pub fn new(dataset: Arc<Dataset>, config: SimConfig) -> Result<Self> {
        let dim = config.device.dim;
        if dim == 0 {
            return Err(Error::Argument("embedding dimension must be positive".into()));
        }
        let mut init_rng = RngStream::new(config.seed, "server:init");
        let table = ItemTable::xavier(dataset.num_items, dim, &mut init_rng)?;
        let devices = build_ego_graphs(&dataset)
            .into_iter()
            .map(|ego| DeviceState::new(ego, dataset.num_items, dataset.num_users, dim, config.seed))
            .collect::<Result<Vec<_>>>()?;
        let server = ServerState {
            table,
            registry: EgoRegistry::default(),
            combined: EgoRegistry::default(),
            assignment: None,
            cluster_rng: RngStream::new(config.seed, "server:cluster"),
            sample_rng: RngStream::new(config.seed, "server:sample"),
        };
        let mut world = World {
            config,
            dataset,
            devices,
            server,
            round: 0,
            transcript: Vec::new(),
            ledger: CommLedger::default(),
            events: Vec::new(),
            last_loss: None,
        };
        let mut devices = world.devices.clone();
        let mut server = world.server.clone();
        let mut bus = Bus::new(0);
        let order = world.visit_order(0);
        world.fetch_private_items(&mut bus, &mut devices, &server, &order)?;
        world.upload_egos(&mut bus, &mut devices, &mut server, &order, 0)?;
        let transcript = bus.finish()?;
        world.devices = devices;
        world.server = server;
        world.commit_transcript(0, transcript);
        Ok(world)
    }

    pub fn num_users(&self) -> usize {
        self.devices.len()
    }

    fn visit_order(&self, round: u64) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.devices.len()).collect();
        if let Some(s) = self.config.schedule_seed {
            RngStream::new(s, format!("schedule:{round}")).shuffle(&mut order);
        }
        order
    }

    fn commit_transcript(&mut self, round: u64, transcript: Vec<RoundMessage>) {
        self.ledger.push(CommLedger::row_for(round, &transcript));
        self.transcript.extend(transcript);
    }

    fn fetch_private_items(
        &self,
        bus: &mut Bus,
        devices: &mut [DeviceState],
        server: &ServerState,
        order: &[usize],
    ) -> Result<()> {
        for &u in order {
            let dev = &devices[u];
            bus.send(ActorId::Device(dev.user()), ActorId::Server, Payload::ItemRequest(dev.ego.items.clone()));
        }
        serve_fetches(bus, &server.table)?;
        let mail = collect_mail(bus, devices.len(), order);
        devices.par_iter_mut().zip(mail).try_for_each(|(dev, mail)| {
            dev.begin_round();
            let rows = rows_from(mail, dev.user() as usize)?;
            dev.receive_items(rows)
        })
    }

    fn upload_egos(
        &self,
        bus: &mut Bus,
        devices: &mut [DeviceState],
        server: &mut ServerState,
        order: &[usize],
        round: u64,
    ) -> Result<()> {
        let cfg = &self.config.device;
        let egos: Vec<Embedding> = devices
            .par_iter_mut()
            .map(|dev| {
                let e = dev.ego_embedding()?;
                ldp(cfg, &e, &mut dev.rng)
            })
            .collect::<Result<_>>()?;
        for &u in order {
            bus.send(ActorId::Device(u as UserId), ActorId::Server, Payload::Ego(egos[u].clone()));
        }
        for env in bus.drain(ActorId::Server) {
            match (env.header.src, env.payload) {
                (ActorId::Device(u), Payload::Ego(e)) => server.registry.update(u, e, round)?,
                (_, other) => return Err(Error::Protocol(format!("server expected EgoUpload, got {:?}", other.kind()))),
            }
        }
        Ok(())
    }

    /// Picks `ceil(sample_frac * |G|)` members per group, at least one.
    fn sample_devices(&self, server: &mut ServerState, assignment: &GroupAssignment) -> BTreeSet<UserId> {
        let frac = self.config.sample_frac;
        let mut out = BTreeSet::new();
        for group in &assignment.groups {
            if group.users.is_empty() {
                continue;
            }
            if frac >= 1.0 {
                out.extend(group.users.iter().copied());
                continue;
            }
            let take = ((frac * group.users.len() as f64).ceil() as usize).clamp(1, group.users.len());
            let mut members = group.users.clone();
            server.sample_rng.shuffle(&mut members);
            out.extend(members.into_iter().take(take));
        }
        out
    }

    fn execute_round(&self, round: u64) -> Result<RoundOutcome> {
        let cfg = &self.config;
        let dcfg = &cfg.device;
        let n = self.devices.len();
        let mut devices = self.devices.clone();
        let mut server = self.server.clone();
        let mut bus = Bus::new(round);
        let mut warnings = Vec::new();
        let order = self.visit_order(round);

        // (1) private item rows
        self.fetch_private_items(&mut bus, &mut devices, &server, &order)?;

        // (2) ego embeddings
        if divisible(round, cfg.ego_upload_every) {
            self.upload_egos(&mut bus, &mut devices, &mut server, &order, round)?;
        }

        // (3) grouping and notices
        if server.assignment.is_none() || divisible(round, cfg.recluster_every) {
            let outcome = recluster(
                &server.registry,
                &server.table,
                n,
                &cfg.fcm,
                cfg.fake_count,
                cfg.fake_mode,
                &mut server.cluster_rng,
            )?;
            warnings.extend(outcome.assignment.warnings.iter().cloned());
            server.assignment = Some(outcome.assignment);
        }
        let assignment = server.assignment.clone().expect("assignment");
        let sampled = self.sample_devices(&mut server, &assignment);
        for (g, group) in assignment.groups.iter().enumerate() {
            if group.users.is_empty() {
                continue;
            }
            let fake_items = group
                .fake_ids()
                .into_iter()
                .map(|f| Ok((f, server.table.row(f)?.clone())))
                .collect::<Result<Vec<_>>>()?;
            let notice = GroupNotice {
                group: g,
                roster: group.users.clone(),
                fake_items,
            };
            for &u in &group.users {
                bus.send(ActorId::Server, ActorId::Device(u), Payload::Notice(notice.clone()));
            }
        }
        let mail = collect_mail(&mut bus, n, &order);
        devices.par_iter_mut().zip(mail).try_for_each(|(dev, mail)| -> Result<()> {
            for env in mail {
                match env.payload {
                    Payload::Notice(notice) => dev.join_group(notice)?,
                    other => return Err(Error::Protocol(format!("expected GroupNotify, got {:?}", other.kind()))),
                }
            }
            Ok(())
        })?;

        // fallback negatives for trained devices without an attached fake item
        let fallback_count = cfg.fake_count.max(1);
        let requests: Vec<Option<Vec<ItemId>>> = devices
            .par_iter_mut()
            .map(|dev| {
                (sampled.contains(&dev.user()) && dev.needs_fallback())
                    .then(|| dev.sample_non_interacted(fallback_count, &BTreeSet::new()))
            })
            .collect();
        for &u in &order {
            if let Some(ids) = &requests[u] {
                bus.send(ActorId::Device(u as UserId), ActorId::Server, Payload::ItemRequest(ids.clone()));
            }
        }
        serve_fetches(&mut bus, &server.table)?;
        let mail = collect_mail(&mut bus, n, &order);
        devices.par_iter_mut().zip(mail).try_for_each(|(dev, mail)| {
            let rows = rows_from(mail, dev.user() as usize)?;
            if rows.is_empty() {
                return Ok(());
            }
            dev.receive_fallback(rows)
        })?;

        // (4) layer-synchronous neighbor broadcasts, then local training
        for k in 0..dcfg.layers {
            let outgoing: Vec<Option<_>> = devices
                .par_iter()
                .map(|dev| {
                    if dev.expected_peers().is_empty() {
                        Ok(None)
                    } else {
                        dev.broadcast(k).map(Some)
                    }
                })
                .collect::<Result<_>>()?;
            for &u in &order {
                if let Some(b) = &outgoing[u] {
                    for p in devices[u].expected_peers() {
                        bus.send(ActorId::Device(u as UserId), ActorId::Device(p), Payload::Broadcast(b.clone()));
                    }
                }
            }
            let mail = collect_mail(&mut bus, n, &order);
            devices.par_iter_mut().zip(mail).try_for_each(|(dev, mail)| -> Result<()> {
                for env in mail {
                    match env.payload {
                        Payload::Broadcast(b) => dev.receive_broadcast(b)?,
                        other => {
                            return Err(Error::Protocol(format!("expected NeighborBroadcast, got {:?}", other.kind())))
                        }
                    }
                }
                Ok(())
            })?;
        }
        let losses: Vec<Option<f64>> = devices
            .par_iter_mut()
            .map(|dev| {
                if sampled.contains(&dev.user()) {
                    dev.local_train(dcfg, dcfg.local_epochs)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;

        // (5) uploads
        let bundles: Vec<Option<UploadBundle>> = devices
            .par_iter_mut()
            .map(|dev| {
                if sampled.contains(&dev.user()) {
                    dev.make_upload(dcfg).map(Some)
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        for &u in &order {
            if let Some(b) = &bundles[u] {
                bus.send(
                    ActorId::Device(b.user),
                    ActorId::Server,
                    Payload::Upload {
                        ego: b.ego_embedding.clone(),
                        items: b.wire_items(),
                    },
                );
            }
        }

        // (6) aggregation
        let mut received = Vec::new();
        for env in bus.drain(ActorId::Server) {
            match (env.header.src, env.payload) {
                (ActorId::Device(u), Payload::Upload { ego, items }) => {
                    server.combined.update(u, ego.clone(), round)?;
                    if cfg.rank_source == RankSource::Combined {
                        server.registry.update(u, ego.clone(), round)?;
                    }
                    received.push(UploadBundle {
                        user: u,
                        ego_embedding: ego,
                        positives: items,
                        fabricated: Vec::new(),
                    });
                }
                (_, other) => return Err(Error::Protocol(format!("server expected ItemUpload, got {:?}", other.kind()))),
            }
        }
        server.table = fedavg_items(&server.table, &received)?;
        let transcript = bus.finish()?;

        let trained: Vec<UserId> = sampled.iter().copied().collect();
        let finite: Vec<f64> = losses.iter().flatten().copied().collect();
        let mean_loss = (!finite.is_empty()).then(|| finite.iter().sum::<f64>() / finite.len() as f64);
        Ok((devices, server, transcript, RoundSummary { round, mean_loss, trained }, warnings))
    }

    /// Runs one protocol round. On error the world is left as it was and a
    /// `RoundAborted` event is recorded.
    pub fn run_round(&mut self) -> Result<RoundSummary> {
        let round = self.round + 1;
        match self.execute_round(round) {
            Ok((devices, server, transcript, summary, warnings)) => {
                self.devices = devices;
                self.server = server;
                self.round = round;
                self.commit_transcript(round, transcript);
                self.events
                    .extend(warnings.into_iter().map(|message| Event::Warning { round, message }));
                self.last_loss = summary.mean_loss;
                Ok(summary)
            }
            Err(e) => {
                log::error!("round {round} aborted: {e}");
                self.events.push(Event::RoundAborted {
                    round,
                    message: e.to_string(),
                });
                Err(e)
            }
        }
    }

    pub fn evaluate(&self, split: Split, k: usize) -> Result<EvalSummary> {
        evaluate(&self.server.registry, &self.server.table, &self.dataset, split, k)
    }

    pub fn checkpoint(&self) -> Checkpoint {
        Checkpoint::capture(
            &self.server.table,
            &self.server.registry,
            self.num_users(),
            self.round,
            self.config.fcm.groups,
        )
    }

    /// Report row for the current round.
    pub fn report(&self, k: usize, with_valid: bool) -> Result<MetricsReport> {
        let test = self.evaluate(Split::Test, k)?;
        let valid = if with_valid { Some(self.evaluate(Split::Valid, k)?) } else { None };
        let row = self.ledger.get(self.round).copied().unwrap_or_default();
        Ok(MetricsReport {
            round: self.round,
            k,
            recall: test.recall,
            ndcg: test.ndcg,
            mean_loss: self.last_loss,
            uplink: row.uplink,
            downlink: row.downlink,
            d2d: row.d2d,
            valid,
        })
    }
}

/// Evaluation cadence of an experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Schedule {
    pub rounds: u64,
    pub eval_every: u64,
    pub k: usize,
    pub select_on_valid: bool,
}

impl Default for Schedule {
    fn default() -> Self {
        Schedule {
            rounds: 20,
            eval_every: 1,
            k: 20,
            select_on_valid: false,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    pub reports: Vec<MetricsReport>,
    pub world: World,
    /// Final checkpoint, or the best-on-valid one under `select_on_valid`.
    pub checkpoint: Checkpoint,
}

/// Round 0 then `rounds` protocol rounds, reporting at round 0, every
/// `eval_every` rounds and at the final round.
pub fn run_experiment(dataset: Arc<Dataset>, config: SimConfig, schedule: Schedule) -> Result<ExperimentOutput> {
    if schedule.eval_every == 0 {
        return Err(Error::Argument("eval_every must be positive".into()));
    }
    if schedule.k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    let mut world = World::new(dataset, config)?;
    let mut reports = vec![world.report(schedule.k, schedule.select_on_valid)?];
    let mut best = (reports[0].valid.map_or(f64::NEG_INFINITY, |v| v.recall), world.checkpoint());
    for r in 1..=schedule.rounds {
        world.run_round()?;
        if r % schedule.eval_every == 0 || r == schedule.rounds {
            let report = world.report(schedule.k, schedule.select_on_valid)?;
            log::info!("round {r}: recall@{} {:.4} ndcg {:.4}", schedule.k, report.recall, report.ndcg);
            if let Some(v) = report.valid {
                if v.recall > best.0 {
                    best = (v.recall, world.checkpoint());
                }
            }
            reports.push(report);
        }
    }
    let checkpoint = if schedule.select_on_valid { best.1 } else { world.checkpoint() };
    Ok(ExperimentOutput {
        reports,
        world,
        checkpoint,
    })
}

/// One device per member of `graph`, initialized from `init`, after `layers`
/// rounds of neighbor broadcasts over a bus. Also returns the transcript.
pub fn wire_group(
    graph: &GroupGraph,
    init: &BTreeMap<Node, Embedding>,
    layers: usize,
) -> Result<(Vec<DeviceState>, Vec<RoundMessage>)> {
    let missing = |n: Node| Error::Argument(format!("no initial embedding for {n:?}"));
    let users: Vec<UserId> = graph.members().iter().map(|(u, _)| *u).collect();
    let mut fake_rows = Vec::with_capacity(graph.fake_items().len());
    for &f in graph.fake_items() {
        fake_rows.push((f, init.get(&Node::Fake(f)).ok_or_else(|| missing(Node::Fake(f)))?.clone()));
    }
    let num_items = graph
        .members()
        .iter()
        .flat_map(|(_, items)| items.iter())
        .chain(graph.fake_items())
        .max()
        .map_or(0, |&m| m as usize + 1);
    let mut devices = Vec::with_capacity(users.len());
    for (u, items) in graph.members() {
        let user_init = init.get(&Node::User(*u)).ok_or_else(|| missing(Node::User(*u)))?;
        let mut dev = DeviceState::new(EgoGraph::new(*u, items.clone()), num_items, 1, user_init.dim(), 0)?;
        dev.user_param = user_init.clone();
        let rows = items
            .iter()
            .map(|&i| Ok((i, init.get(&Node::Private(*u, i)).ok_or_else(|| missing(Node::Private(*u, i)))?.clone())))
            .collect::<Result<Vec<_>>>()?;
        dev.receive_items(rows)?;
        dev.join_group(GroupNotice {
            group: 0,
            roster: users.clone(),
            fake_items: fake_rows.clone(),
        })?;
        devices.push(dev);
    }
    let mut bus = Bus::new(0);
    for k in 0..layers {
        let outgoing = devices
            .iter()
            .map(|d| if d.expected_peers().is_empty() { Ok(None) } else { d.broadcast(k).map(Some) })
            .collect::<Result<Vec<_>>>()?;
        for (dev, b) in devices.iter().zip(&outgoing) {
            if let Some(b) = b {
                for p in dev.expected_peers() {
                    bus.send(ActorId::Device(dev.user()), ActorId::Device(p), Payload::Broadcast(b.clone()));
                }
            }
        }
        for dev in devices.iter_mut() {
            for env in bus.drain(ActorId::Device(dev.user())) {
                if let Payload::Broadcast(b) = env.payload {
                    dev.receive_broadcast(b)?;
                }
            }
        }
    }
    Ok((devices, bus.finish()?))
}

/// Propagates `graph` by running one device per member and exchanging the
/// layer broadcasts over a bus. Returns the resulting layer stack in the
/// same shape as [`crate::propagate::group_propagate`] and the transcript.
pub fn distributed_group_propagate(
    graph: &GroupGraph,
    init: &BTreeMap<Node, Embedding>,
    layers: usize,
    alphas: &[f64],
) -> Result<(LayerStack, Vec<RoundMessage>)> {
    let (devices, transcript) = wire_group(graph, init, layers)?;

    let mut stack: BTreeMap<Node, Vec<Embedding>> = BTreeMap::new();
    for dev in &devices {
        let u = dev.user();
        let fwd = dev.local_forward(layers, alphas)?;
        stack.insert(Node::User(u), fwd.user_layers);
        for (i, ls) in fwd.private_layers {
            stack.insert(Node::Private(u, i), ls);
        }
        for (f, ls) in fwd.fake_layers {
            match stack.get(&Node::Fake(f)) {
                Some(prev) if *prev != ls => {
                    return Err(Error::Protocol(format!("devices disagree on fake item {f}")));
                }
                Some(_) => {}
                None => {
                    stack.insert(Node::Fake(f), ls);
                }
            }
        }
    }
    // fake items every member holds privately are isolated
    for &f in graph.fake_items() {
        if let Some(e) = init.get(&Node::Fake(f)) {
            stack.entry(Node::Fake(f)).or_insert_with(|| vec![e.clone(); layers + 1]);
        }
    }
    let combined = stack
        .iter()
        .map(|(n, ls)| (*n, crate::propagate::combine_layers(ls, alphas)))
        .collect();
    Ok((
        LayerStack {
            layers: stack,
            combined,
            alphas: alphas.to_vec(),
        },
        transcript,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{filter_and_split, synthetic_block, SplitConfig, SyntheticConfig};
    use crate::propagate::{group_propagate, uniform_alphas};

    fn small_world(users: usize, groups: usize, fake: usize) -> World {
        let syn = SyntheticConfig {
            users,
            items: 40,
            communities: 2,
            interactions_per_user: 10,
            in_community: 0.9,
        };
        let raw = synthetic_block(&syn, 3).unwrap();
        let ds = filter_and_split(
            &raw,
            &SplitConfig {
                min_interactions: 1,
                ..SplitConfig::default()
            },
        )
        .unwrap();
        let config = SimConfig {
            device: DeviceConfig {
                dim: 4,
                layers: 2,
                alphas: uniform_alphas(2),
                local_epochs: 1,
                ..DeviceConfig::default()
            },
            fcm: FcmConfig {
                groups,
                ..FcmConfig::default()
            },
            fake_count: fake,
            seed: 11,
            ..SimConfig::default()
        };
        World::new(Arc::new(ds), config).unwrap()
    }

    #[test]
    fn round_zero_uploads_every_ego() {
        let w = small_world(6, 2, 1);
        assert_eq!(w.server.registry.len(), 6);
        let row = w.ledger.get(0).unwrap();
        assert_eq!(row.uplink, 6 * 4);
        assert_eq!(row.d2d, 0);
    }

    #[test]
    fn uplink_per_device_matches_bundle_size() {
        let mut w = small_world(6, 2, 1);
        w.run_round().unwrap();
        for dev in &w.devices {
            let up: usize = w
                .transcript
                .iter()
                .filter(|m| m.round == 1 && m.kind == MessageKind::ItemUpload && m.src == ActorId::Device(dev.user()))
                .map(|m| m.payload_params)
                .sum();
            assert_eq!(up, 4 * (1 + dev.ego.n() + 1));
        }
    }

    #[test]
    fn no_fake_items_means_no_d2d() {
        let mut w = small_world(6, 2, 0);
        w.run_round().unwrap();
        assert_eq!(w.ledger.get(1).unwrap().d2d, 0);
    }

    #[test]
    fn single_group_broadcast_count() {
        let mut w = small_world(5, 2, 1);
        // force every user into one group by pinning the assignment
        w.config.recluster_every = 1000;
        let last = (w.dataset.num_items - 1) as ItemId;
        let mut a = GroupAssignment::default();
        a.groups.push(crate::cluster::Group {
            users: (0..5).collect(),
            fake_items: vec![(last, 1.0)],
        });
        a.user_group = vec![0; 5];
        w.server.assignment = Some(a);
        w.round = 1;
        w.run_round().unwrap();
        // G(G-1)Kd: every member sends to every peer once the group has a fake item
        assert_eq!(w.ledger.get(2).unwrap().d2d, 5 * 4 * 2 * 4);
    }

    #[test]
    fn failed_round_leaves_world_unchanged() {
        let mut w = small_world(6, 2, 1);
        w.config.fcm.groups = 10_000;
        let before_table = w.server.table.clone();
        let before_len = w.transcript.len();
        assert!(w.run_round().is_err());
        assert_eq!(w.round, 0);
        assert_eq!(w.server.table, before_table);
        assert_eq!(w.transcript.len(), before_len);
        assert!(matches!(w.events.last(), Some(Event::RoundAborted { round: 1, .. })));
    }

    #[test]
    fn distributed_matches_sparse_kernel() {
        let graph = GroupGraph::new(vec![(0, vec![1, 2]), (1, vec![2]), (2, vec![0])], vec![2, 3]);
        let mut rng = RngStream::new(4, "init");
        let init: BTreeMap<Node, Embedding> = graph
            .nodes()
            .into_iter()
            .map(|n| (n, Embedding::from_vec((0..3).map(|_| rng.uniform() - 0.5).collect())))
            .collect();
        let (dist, _) = distributed_group_propagate(&graph, &init, 3, &uniform_alphas(3)).unwrap();
        let central = group_propagate(&graph, &init, 3, &uniform_alphas(3)).unwrap();
        assert_eq!(dist, central);
    }
}
