//! Device actor: private ego graph, local parameters, neighbor broadcasts,
//! BPR training and privacy-protected uploads.
//!
//! A device only ever sees its own ego graph, the rows of the item table that
//! the server sends it, and the degree-normalized user embeddings `c_v^(k)`
//! broadcast by other members of its group. From those it reproduces its own
//! rows of the group-graph propagation exactly.

use std::collections::{BTreeMap, BTreeSet};

use crate::data::{EgoGraph, ItemId, UserId};
use crate::error::{Error, Result};
use crate::numeric::{inv_sqrt, laplace_sample, xavier_init, AdamConfig, AdamState, Embedding, RngStream};
use crate::propagate::{attached_fakes, combine_layers, ego_embed};

/// Variance at or below which fabricated embeddings collapse to the mean.
pub const VARIANCE_FLOOR: f64 = 1e-12;

/// Hyperparameters shared by all devices.
#[derive(Debug, Clone, PartialEq)]
pub struct DeviceConfig {
    pub dim: usize,
    pub layers: usize,
    pub alphas: Vec<f64>,
    pub adam: AdamConfig,
    pub local_epochs: usize,
    pub neg_count: usize,
    pub delta: f64,
    pub ldp_lambda: f64,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        DeviceConfig {
            dim: 64,
            layers: 4,
            alphas: crate::propagate::uniform_alphas(4),
            adam: AdamConfig::default(),
            local_epochs: 3,
            neg_count: 1,
            delta: 1.0,
            ldp_lambda: 0.1,
        }
    }
}

/// Trainable parameter handle.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum ParamKey {
    User,
    Item(ItemId),
    Fake(ItemId),
    Fallback(ItemId),
}

/// Degree-normalized user embedding sent to group peers for one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborBroadcast {
    pub from: UserId,
    pub layer: usize,
    pub vector: Embedding,
    /// Fake items the sender is connected to (ids only).
    pub attached: Vec<ItemId>,
}

/// Group membership notice from the server.
#[derive(Debug, Clone, PartialEq)]
pub struct GroupNotice {
    pub group: usize,
    pub roster: Vec<UserId>,
    pub fake_items: Vec<(ItemId, Embedding)>,
}

/// Broadcasts received from peers during the current round.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborCache {
    pub layers: BTreeMap<usize, BTreeMap<UserId, Embedding>>,
    pub attachments: BTreeMap<UserId, Vec<ItemId>>,
}

/// Upload for FedAvg; every embedding is already clipped and noised.
#[derive(Debug, Clone, PartialEq)]
pub struct UploadBundle {
    pub user: UserId,
    pub ego_embedding: Embedding,
    pub positives: Vec<(ItemId, Embedding)>,
    pub fabricated: Vec<(ItemId, Embedding)>,
}

impl UploadBundle {
    /// Item embeddings as transmitted: positives and fabricated merged and
    /// sorted by id, indistinguishable on the wire.
    pub fn wire_items(&self) -> Vec<(ItemId, Embedding)> {
        let mut items: Vec<(ItemId, Embedding)> = self.positives.iter().chain(&self.fabricated).cloned().collect();
        items.sort_by_key(|(i, _)| *i);
        items
    }

    pub fn scalar_count(&self) -> usize {
        self.ego_embedding.dim()
            + self.positives.iter().chain(&self.fabricated).map(|(_, e)| e.dim()).sum::<usize>()
    }
}

/// Layer embeddings of every node this device owns or is connected to.
#[derive(Debug, Clone, PartialEq)]
pub struct LocalForward {
    pub user_layers: Vec<Embedding>,
    /// `c_u^(k)` for each computed layer transition.
    pub broadcasts: Vec<Embedding>,
    pub private_layers: BTreeMap<ItemId, Vec<Embedding>>,
    pub fake_layers: BTreeMap<ItemId, Vec<Embedding>>,
    pub user_final: Embedding,
    pub private_finals: BTreeMap<ItemId, Embedding>,
    pub fake_finals: BTreeMap<ItemId, Embedding>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LossAndGrads {
    pub loss: f64,
    pub grads: BTreeMap<ParamKey, Embedding>,
}

/// Apply L1 clipping to `delta` followed by additive Laplace(0, lambda) noise.
pub fn apply_ldp(v: &Embedding, delta: f64, lambda: f64, rng: &mut RngStream) -> Result<Embedding> {
    if delta.is_nan() || delta <= 0.0 {
        return Err(Error::Argument(format!("clip threshold must be positive, got {delta}")));
    }
    let mut out = clip_l1(v, delta);
    let noise = laplace_sample(rng, lambda, v.dim())?;
    out.add_assign(&noise);
    Ok(out)
}

/// `v * min(1, delta / ||v||_1)`.
pub fn clip_l1(v: &Embedding, delta: f64) -> Embedding {
    let norm = v.l1_norm();
    if norm <= delta {
        v.clone()
    } else {
        v.scaled(delta / norm)
    }
}

fn log_sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        -(-x).exp().ln_1p()
    } else {
        x - x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

#[derive(Debug, Clone)]
pub struct DeviceState {
    pub ego: EgoGraph,
    pub num_items: usize,
    pub user_param: Embedding,
    pub item_params: BTreeMap<ItemId, Embedding>,
    /// Every fake item of the group with its server-provided embedding.
    pub fake_cache: BTreeMap<ItemId, Embedding>,
    /// Non-graph negatives used when no fake item is attached.
    pub fallback_cache: BTreeMap<ItemId, Embedding>,
    pub neighbor_cache: NeighborCache,
    pub group: Option<usize>,
    pub roster: Vec<UserId>,
    pub adam: BTreeMap<ParamKey, AdamState>,
    pub rng: RngStream,
    pub trained_this_round: bool,
}

impl DeviceState {
    /// Fresh device with a Xavier user embedding. `user_fan` is the size of
    /// the user population, used as the Xavier fan-out.
    pub fn new(ego: EgoGraph, num_items: usize, user_fan: usize, dim: usize, seed: u64) -> Result<Self> {
        if ego.items.is_empty() {
            return Err(Error::Argument(format!("user {} has no training items", ego.user)));
        }
        let rng = RngStream::new(seed, format!("device:{}", ego.user));
        let mut init = rng.child("init");
        let user_param = xavier_init(&mut init, dim, user_fan, dim)?;
        Ok(DeviceState {
            ego,
            num_items,
            user_param,
            item_params: BTreeMap::new(),
            fake_cache: BTreeMap::new(),
            fallback_cache: BTreeMap::new(),
            neighbor_cache: NeighborCache::default(),
            group: None,
            roster: Vec::new(),
            adam: BTreeMap::new(),
            rng,
            trained_this_round: false,
        })
    }

    pub fn user(&self) -> UserId {
        self.ego.user
    }

    pub fn dim(&self) -> usize {
        self.user_param.dim()
    }

    /// Clears round-scoped caches; only the user parameter and its optimizer
    /// state persist across rounds.
    pub fn begin_round(&mut self) {
        self.fake_cache.clear();
        self.fallback_cache.clear();
        self.neighbor_cache = NeighborCache::default();
        self.group = None;
        self.roster.clear();
        self.adam.retain(|k, _| *k == ParamKey::User);
        self.trained_this_round = false;
    }

    /// Installs fetched rows of the server's item table for the private items.
    pub fn receive_items(&mut self, rows: Vec<(ItemId, Embedding)>) -> Result<()> {
        let mut params = BTreeMap::new();
        for (item, e) in rows {
            if !self.ego.contains(item) {
                return Err(Error::Protocol(format!("device {} received non-private item {item}", self.user())));
            }
            params.insert(item, e);
        }
        if params.len() != self.ego.n() {
            return Err(Error::Protocol(format!(
                "device {} expected {} item rows, got {}",
                self.user(),
                self.ego.n(),
                params.len()
            )));
        }
        self.item_params = params;
        Ok(())
    }

    /// One-hop ego-graph embedding over the current private item parameters.
    pub fn ego_embedding(&self) -> Result<Embedding> {
        ego_embed(&self.ego, &self.item_params)
    }

    pub fn join_group(&mut self, notice: GroupNotice) -> Result<()> {
        if !notice.roster.contains(&self.user()) {
            return Err(Error::Protocol(format!("device {} not on roster of group {}", self.user(), notice.group)));
        }
        self.group = Some(notice.group);
        let mut roster = notice.roster;
        roster.sort_unstable();
        self.roster = roster;
        self.fake_cache = notice.fake_items.into_iter().collect();
        Ok(())
    }

    /// Fake items this device is connected to, ascending.
    pub fn attached(&self) -> Vec<ItemId> {
        let fakes: Vec<ItemId> = self.fake_cache.keys().copied().collect();
        attached_fakes(&self.ego.items, &fakes)
    }

    pub fn degree(&self) -> usize {
        self.ego.n() + self.attached().len()
    }

    /// Peers whose broadcasts this device must receive. Groups without fake
    /// items are disconnected and exchange nothing.
    pub fn expected_peers(&self) -> Vec<UserId> {
        if self.fake_cache.is_empty() {
            return Vec::new();
        }
        self.roster.iter().copied().filter(|&u| u != self.user()).collect()
    }

    pub fn needs_fallback(&self) -> bool {
        self.attached().is_empty()
    }

    /// Uniformly samples `count` distinct catalog items the user has not
    /// interacted with. Clamped to the number of candidates.
    pub fn sample_non_interacted(&mut self, count: usize, exclude: &BTreeSet<ItemId>) -> Vec<ItemId> {
        let mut candidates: Vec<ItemId> = (0..self.num_items as ItemId)
            .filter(|i| !self.ego.contains(*i) && !exclude.contains(i))
            .collect();
        let take = if count > candidates.len() {
            log::warn!(
                "device {}: requested {count} non-interacted items, only {} available",
                self.user(),
                candidates.len()
            );
            candidates.len()
        } else {
            count
        };
        for i in 0..take {
            let j = i + self.rng.index(candidates.len() - i);
            candidates.swap(i, j);
        }
        let mut picked = candidates[..take].to_vec();
        picked.sort_unstable();
        picked
    }

    pub fn receive_fallback(&mut self, rows: Vec<(ItemId, Embedding)>) -> Result<()> {
        for (item, e) in rows {
            if self.ego.contains(item) {
                return Err(Error::Protocol(format!("fallback negative {item} is a positive of {}", self.user())));
            }
            self.fallback_cache.insert(item, e);
        }
        Ok(())
    }

    pub fn receive_broadcast(&mut self, b: NeighborBroadcast) -> Result<()> {
        if !self.roster.contains(&b.from) || b.from == self.user() {
            return Err(Error::Protocol(format!("device {} got broadcast from non-peer {}", self.user(), b.from)));
        }
        self.neighbor_cache.attachments.insert(b.from, b.attached);
        let slot = self.neighbor_cache.layers.entry(b.layer).or_default();
        if slot.insert(b.from, b.vector).is_some() {
            return Err(Error::Protocol(format!("duplicate layer {} broadcast from {}", b.layer, b.from)));
        }
        Ok(())
    }

    fn check_cache(&self, upto: usize) -> Result<()> {
        let peers = self.expected_peers();
        for k in 0..upto {
            let received = self.neighbor_cache.layers.get(&k);
            for p in &peers {
                if !received.is_some_and(|m| m.contains_key(p)) {
                    return Err(Error::Protocol(format!(
                        "device {} missing layer {k} broadcast from {p}",
                        self.user()
                    )));
                }
            }
        }
        Ok(())
    }

    /// Users connected to fake item `f`, ascending, including this device.
    fn fake_members(&self, f: ItemId) -> Vec<UserId> {
        let mut users: Vec<UserId> = self
            .neighbor_cache
            .attachments
            .iter()
            .filter(|(_, att)| att.binary_search(&f).is_ok())
            .map(|(u, _)| *u)
            .collect();
        users.push(self.user());
        users.sort_unstable();
        users
    }

    /// Runs the layer recursion up to layer `upto` using cached broadcasts for
    /// layers below `upto`.
    fn layers_upto(&self, upto: usize) -> Result<LocalForward> {
        self.check_cache(upto)?;
        let me = self.user();
        let s_u = inv_sqrt(self.degree());
        let attached = self.attached();
        let members: BTreeMap<ItemId, Vec<UserId>> = attached.iter().map(|&f| (f, self.fake_members(f))).collect();
        let mut user_layers = vec![self.user_param.clone()];
        let mut broadcasts = Vec::with_capacity(upto);
        let mut private_layers: BTreeMap<ItemId, Vec<Embedding>> =
            self.item_params.iter().map(|(i, e)| (*i, vec![e.clone()])).collect();
        let mut fake_layers: BTreeMap<ItemId, Vec<Embedding>> = BTreeMap::new();
        for f in &attached {
            let e = self.fake_cache.get(f).ok_or(Error::MissingEmbedding(*f))?;
            fake_layers.insert(*f, vec![e.clone()]);
        }
        let dim = self.dim();
        for k in 0..upto {
            let c_k = user_layers[k].scaled(s_u);
            // user layer k+1 from item layers k
            let mut acc = Embedding::zeros(dim);
            for layers in private_layers.values() {
                acc.add_assign(&layers[k].scaled(inv_sqrt(1)));
            }
            for (f, layers) in &fake_layers {
                acc.add_assign(&layers[k].scaled(inv_sqrt(members[f].len())));
            }
            let next_user = acc.scaled(s_u);
            // item layers k+1 from user layers k
            for (f, layers) in fake_layers.iter_mut() {
                let mut acc = Embedding::zeros(dim);
                for v in &members[f] {
                    if *v == me {
                        acc.add_assign(&c_k);
                    } else {
                        acc.add_assign(&self.neighbor_cache.layers[&k][v]);
                    }
                }
                layers.push(acc.scaled(inv_sqrt(members[f].len())));
            }
            for layers in private_layers.values_mut() {
                let mut acc = Embedding::zeros(dim);
                acc.add_assign(&c_k);
                layers.push(acc.scaled(inv_sqrt(1)));
            }
            user_layers.push(next_user);
            broadcasts.push(c_k);
        }
        Ok(LocalForward {
            user_layers,
            broadcasts,
            private_layers,
            fake_layers,
            user_final: Embedding::default(),
            private_finals: BTreeMap::new(),
            fake_finals: BTreeMap::new(),
        })
    }

    /// This device's broadcast for `layer`: `c_u^(layer) = e_u^(layer) / sqrt(deg(u))`.
    pub fn broadcast(&self, layer: usize) -> Result<NeighborBroadcast> {
        let fwd = self.layers_upto(layer)?;
        Ok(NeighborBroadcast {
            from: self.user(),
            layer,
            vector: fwd.user_layers[layer].scaled(inv_sqrt(self.degree())),
            attached: self.attached(),
        })
    }

    /// Full K-layer local propagation with layer combination.
    pub fn local_forward(&self, layers: usize, alphas: &[f64]) -> Result<LocalForward> {
        let mut fwd = self.layers_upto(layers)?;
        fwd.user_final = combine_layers(&fwd.user_layers, alphas);
        fwd.private_finals = fwd.private_layers.iter().map(|(i, ls)| (*i, combine_layers(ls, alphas))).collect();
        fwd.fake_finals = fwd.fake_layers.iter().map(|(i, ls)| (*i, combine_layers(ls, alphas))).collect();
        Ok(fwd)
    }

    /// BPR over all (positive, negative) pairs and analytic gradients of every
    /// local parameter. Negatives are the attached fake items plus fallback
    /// negatives; neighbor broadcasts are constants.
    pub fn bpr_loss_and_grads(&self, fwd: &LocalForward, alphas: &[f64]) -> Result<LossAndGrads> {
        let negatives: Vec<(ParamKey, &Embedding)> = fwd
            .fake_finals
            .iter()
            .map(|(i, e)| (ParamKey::Fake(*i), e))
            .chain(self.fallback_cache.iter().map(|(i, e)| (ParamKey::Fallback(*i), e)))
            .collect();
        if negatives.is_empty() {
            return Err(Error::Protocol(format!("device {} has no negative items", self.user())));
        }
        if fwd.private_finals.is_empty() {
            return Err(Error::Protocol(format!("device {} has no positive items", self.user())));
        }
        let eu = &fwd.user_final;
        let dim = eu.dim();
        let neg_scores: Vec<f64> = negatives.iter().map(|(_, e)| eu.dot(e)).collect();
        let mut loss = 0.0;
        let mut g_user = Embedding::zeros(dim);
        let mut g_pos: BTreeMap<ItemId, Embedding> = BTreeMap::new();
        let mut g_neg: Vec<Embedding> = vec![Embedding::zeros(dim); negatives.len()];
        for (item, ep) in &fwd.private_finals {
            let pos_score = eu.dot(ep);
            let mut coef_sum = 0.0;
            for (j, (_, en)) in negatives.iter().enumerate() {
                let x = pos_score - neg_scores[j];
                loss -= log_sigmoid(x);
                let w = -sigmoid(-x);
                // d/dE_u of x is (E_p - E_j)
                g_user.add_scaled(w, ep);
                g_user.add_scaled(-w, en);
                g_neg[j].add_scaled(-w, eu);
                coef_sum += w;
            }
            g_pos.insert(*item, eu.scaled(coef_sum));
        }

        // Reverse accumulation through the layer recursion.
        let k_max = fwd.user_layers.len() - 1;
        let s_u = inv_sqrt(self.degree());
        let fake_scale: BTreeMap<ItemId, f64> =
            fwd.fake_layers.keys().map(|&f| (f, inv_sqrt(self.fake_members(f).len()))).collect();
        let mut adj_user: Vec<Embedding> = (0..=k_max).map(|k| g_user.scaled(alphas[k])).collect();
        let mut adj_pos: BTreeMap<ItemId, Vec<Embedding>> = g_pos
            .iter()
            .map(|(i, g)| (*i, (0..=k_max).map(|k| g.scaled(alphas[k])).collect()))
            .collect();
        let fake_grad: BTreeMap<ItemId, &Embedding> = negatives
            .iter()
            .zip(&g_neg)
            .filter_map(|((key, _), g)| match key {
                ParamKey::Fake(f) => Some((*f, g)),
                _ => None,
            })
            .collect();
        let mut adj_fake: BTreeMap<ItemId, Vec<Embedding>> = fake_grad
            .iter()
            .map(|(f, g)| (*f, (0..=k_max).map(|k| g.scaled(alphas[k])).collect()))
            .collect();
        for k in (1..=k_max).rev() {
            let gu = adj_user[k].clone();
            let mut into_user = Embedding::zeros(dim);
            for layers in adj_pos.values_mut() {
                into_user.add_assign(&layers[k]);
                layers[k - 1].add_scaled(s_u, &gu);
            }
            let mut user_acc = into_user.scaled(s_u);
            for (f, layers) in adj_fake.iter_mut() {
                let a_f = fake_scale[f];
                user_acc.add_scaled(a_f * s_u, &layers[k]);
                layers[k - 1].add_scaled(s_u * a_f, &gu);
            }
            adj_user[k - 1].add_assign(&user_acc);
        }

        let mut grads = BTreeMap::new();
        grads.insert(ParamKey::User, adj_user.swap_remove(0));
        for (i, mut layers) in adj_pos {
            grads.insert(ParamKey::Item(i), layers.swap_remove(0));
        }
        for (f, mut layers) in adj_fake {
            grads.insert(ParamKey::Fake(f), layers.swap_remove(0));
        }
        for ((key, _), g) in negatives.iter().zip(g_neg) {
            if let ParamKey::Fallback(_) = key {
                grads.insert(*key, g);
            }
        }
        Ok(LossAndGrads { loss, grads })
    }

    /// Forward pass and loss only.
    pub fn loss(&self, layers: usize, alphas: &[f64]) -> Result<f64> {
        let fwd = self.local_forward(layers, alphas)?;
        Ok(self.bpr_loss_and_grads(&fwd, alphas)?.loss)
    }

    pub fn param(&self, key: ParamKey) -> Option<&Embedding> {
        match key {
            ParamKey::User => Some(&self.user_param),
            ParamKey::Item(i) => self.item_params.get(&i),
            ParamKey::Fake(i) => self.fake_cache.get(&i),
            ParamKey::Fallback(i) => self.fallback_cache.get(&i),
        }
    }

    pub fn param_mut(&mut self, key: ParamKey) -> Option<&mut Embedding> {
        match key {
            ParamKey::User => Some(&mut self.user_param),
            ParamKey::Item(i) => self.item_params.get_mut(&i),
            ParamKey::Fake(i) => self.fake_cache.get_mut(&i),
            ParamKey::Fallback(i) => self.fallback_cache.get_mut(&i),
        }
    }

    /// `epochs` rounds of forward, BPR and Adam with neighbor broadcasts held
    /// fixed. Returns the mean loss over epochs, or `None` for zero epochs.
    pub fn local_train(&mut self, cfg: &DeviceConfig, epochs: usize) -> Result<Option<f64>> {
        let mut total = 0.0;
        for _ in 0..epochs {
            let fwd = self.local_forward(cfg.layers, &cfg.alphas)?;
            let LossAndGrads { loss, grads } = self.bpr_loss_and_grads(&fwd, &cfg.alphas)?;
            if !loss.is_finite() {
                return Err(Error::Numeric(format!("device {} diverged: loss {loss}", self.user())));
            }
            total += loss;
            for (key, grad) in grads {
                let dim = grad.dim();
                let state = self.adam.entry(key).or_insert_with(|| AdamState::new(dim, cfg.adam));
                let param = match key {
                    ParamKey::User => &mut self.user_param,
                    ParamKey::Item(i) => self.item_params.get_mut(&i).expect("item param"),
                    ParamKey::Fake(i) => self.fake_cache.get_mut(&i).expect("fake param"),
                    ParamKey::Fallback(i) => self.fallback_cache.get_mut(&i).expect("fallback param"),
                };
                state.step(param, &grad)?;
            }
        }
        self.trained_this_round = true;
        Ok((epochs > 0).then(|| total / epochs as f64))
    }

    /// `count` non-interacted ids with Gaussian embeddings matching the
    /// per-dimension mean and variance of the private item parameters.
    pub fn fabricate_negatives(&mut self, count: usize) -> Vec<(ItemId, Embedding)> {
        if count == 0 {
            return Vec::new();
        }
        let ids = self.sample_non_interacted(count, &BTreeSet::new());
        let dim = self.dim();
        let n = self.item_params.len().max(1) as f64;
        let mut mean = Embedding::zeros(dim);
        for e in self.item_params.values() {
            mean.add_assign(e);
        }
        let mean = mean.scaled(1.0 / n);
        let mut var = Embedding::zeros(dim);
        for e in self.item_params.values() {
            for d in 0..dim {
                var[d] += (e[d] - mean[d]).powi(2);
            }
        }
        let std: Vec<f64> = var
            .iter()
            .map(|v| v / n)
            .map(|v| if v <= VARIANCE_FLOOR { 0.0 } else { v.sqrt() })
            .collect();
        ids.into_iter()
            .map(|id| {
                let values = (0..dim)
                    .map(|d| if std[d] == 0.0 { mean[d] } else { mean[d] + std[d] * self.rng.standard_normal() })
                    .collect();
                (id, Embedding::from_vec(values))
            })
            .collect()
    }

    /// Builds the privacy-protected upload after local training.
    pub fn make_upload(&mut self, cfg: &DeviceConfig) -> Result<UploadBundle> {
        if !self.trained_this_round {
            return Err(Error::Protocol(format!("device {} uploads before training", self.user())));
        }
        let fwd = self.local_forward(cfg.layers, &cfg.alphas)?;
        let fabricated_raw = self.fabricate_negatives(cfg.neg_count);
        let ego_embedding = apply_ldp(&fwd.user_final, cfg.delta, cfg.ldp_lambda, &mut self.rng)?;
        let mut positives = Vec::with_capacity(self.item_params.len());
        let items: Vec<(ItemId, Embedding)> = self.item_params.iter().map(|(i, e)| (*i, e.clone())).collect();
        for (i, e) in items {
            positives.push((i, apply_ldp(&e, cfg.delta, cfg.ldp_lambda, &mut self.rng)?));
        }
        let mut fabricated = Vec::with_capacity(fabricated_raw.len());
        for (i, e) in fabricated_raw {
            fabricated.push((i, apply_ldp(&e, cfg.delta, cfg.ldp_lambda, &mut self.rng)?));
        }
        Ok(UploadBundle {
            user: self.user(),
            ego_embedding,
            positives,
            fabricated,
        })
    }
}
