//! Server actor state: the global item table, the ego registry, FedAvg,
//! co-clustering and ranking. Checkpoint I/O lives in [`checkpoint`].

pub mod checkpoint;

use std::collections::{BTreeMap, BTreeSet};

use crate::cluster::{assign_groups, fcm_fit, FakeItemMode, FcmConfig, FcmResult, GroupAssignment};
use crate::data::{ItemId, UserId};
use crate::device::UploadBundle;
use crate::error::{Error, Result};
use crate::numeric::{xavier_init, Embedding, RngStream};

/// Global item embedding table.
#[derive(Debug, Clone, PartialEq)]
pub struct ItemTable {
    pub rows: Vec<Embedding>,
    pub version: u64,
}

impl ItemTable {
    /// Xavier-initialized table with fan `(dim, num_items)`.
    pub fn xavier(num_items: usize, dim: usize, rng: &mut RngStream) -> Result<Self> {
        let rows = (0..num_items)
            .map(|_| xavier_init(rng, dim, num_items, dim))
            .collect::<Result<_>>()?;
        Ok(ItemTable { rows, version: 0 })
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.rows.first().map_or(0, |r| r.dim())
    }

    pub fn row(&self, item: ItemId) -> Result<&Embedding> {
        self.rows.get(item as usize).ok_or(Error::MissingEmbedding(item))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RegistryEntry {
    pub embedding: Embedding,
    pub round: u64,
}

/// Latest uploaded ego embedding per user.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct EgoRegistry {
    entries: BTreeMap<UserId, RegistryEntry>,
}

impl EgoRegistry {
    pub fn update(&mut self, user: UserId, embedding: Embedding, round: u64) -> Result<()> {
        if let Some(prev) = self.entries.get(&user) {
            if prev.round > round {
                return Err(Error::Protocol(format!(
                    "stale ego upload for user {user}: round {round} after {}",
                    prev.round
                )));
            }
        }
        self.entries.insert(user, RegistryEntry { embedding, round });
        Ok(())
    }

    pub fn get(&self, user: UserId) -> Option<&RegistryEntry> {
        self.entries.get(&user)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&UserId, &RegistryEntry)> {
        self.entries.iter()
    }
}

/// Unweighted per-id mean of every uploaded item embedding. Contributions are
/// summed in ascending sender order so the result does not depend on arrival
/// order. Items without uploads keep their value.
pub fn fedavg_items(table: &ItemTable, uploads: &[UploadBundle]) -> Result<ItemTable> {
    let dim = table.dim();
    let mut order: Vec<&UploadBundle> = uploads.iter().collect();
    order.sort_by_key(|b| b.user);
    let mut sums: BTreeMap<ItemId, (Embedding, usize)> = BTreeMap::new();
    for bundle in order {
        for (item, e) in bundle.wire_items() {
            if e.dim() != dim {
                return Err(Error::Protocol(format!(
                    "upload from {} for item {item} has dimension {}, table has {dim}",
                    bundle.user,
                    e.dim()
                )));
            }
            if item as usize >= table.len() {
                return Err(Error::Protocol(format!("upload for unknown item {item}")));
            }
            let slot = sums.entry(item).or_insert_with(|| (Embedding::zeros(dim), 0));
            slot.0.add_assign(&e);
            slot.1 += 1;
        }
    }
    let mut next = table.clone();
    for (item, (sum, count)) in sums {
        next.rows[item as usize] = sum.scaled(1.0 / count as f64);
    }
    next.version += 1;
    Ok(next)
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClusterOutcome {
    pub fit: FcmResult,
    pub assignment: GroupAssignment,
}

/// Fuzzy co-clustering of registry users (rows `0..N`) and table items
/// (rows `N..N+M`), then hard user groups and fake items.
pub fn recluster(
    registry: &EgoRegistry,
    table: &ItemTable,
    num_users: usize,
    fcm: &FcmConfig,
    fake_count: usize,
    mode: FakeItemMode,
    rng: &mut RngStream,
) -> Result<ClusterOutcome> {
    let mut points = Vec::with_capacity(num_users + table.len());
    for u in 0..num_users as UserId {
        let entry = registry
            .get(u)
            .ok_or_else(|| Error::Protocol(format!("no ego embedding registered for user {u}")))?;
        points.push(entry.embedding.clone());
    }
    points.extend(table.rows.iter().cloned());
    let fit = fcm_fit(&points, fcm, rng)?;
    let assignment = assign_groups(&fit.membership, num_users, fake_count, mode);
    Ok(ClusterOutcome { fit, assignment })
}

/// Top-`k` items by `e_ego . e_i` outside `exclude`, ties to the lower id.
pub fn rank_topk(
    registry: &EgoRegistry,
    table: &ItemTable,
    user: UserId,
    k: usize,
    exclude: &BTreeSet<ItemId>,
) -> Result<Vec<ItemId>> {
    if k == 0 {
        return Err(Error::Argument("k must be positive".into()));
    }
    let ego = &registry
        .get(user)
        .ok_or_else(|| Error::Argument(format!("user {user} not in registry")))?
        .embedding;
    let mut scored: Vec<(f64, ItemId)> = table
        .rows
        .iter()
        .enumerate()
        .filter(|(i, _)| !exclude.contains(&(*i as ItemId)))
        .map(|(i, e)| (ego.dot(e), i as ItemId))
        .collect();
    let cmp = |a: &(f64, ItemId), b: &(f64, ItemId)| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1));
    if scored.len() > k {
        scored.select_nth_unstable_by(k - 1, cmp);
        scored.truncate(k);
    }
    scored.sort_by(cmp);
    Ok(scored.into_iter().map(|(_, i)| i).collect())
}
