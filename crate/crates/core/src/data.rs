//! Interaction ingestion, k-core filtering, train/valid/test splitting and
//! per-user ego graphs.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fmt;
use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::numeric::RngStream;

/// Dense user index.
pub type UserId = u32;
/// Dense item index.
pub type ItemId = u32;

/// One positive implicit interaction, in original (raw) ids.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Interaction {
    pub user: u64,
    pub item: u64,
    pub timestamp: Option<i64>,
}

impl Interaction {
    pub fn new(user: u64, item: u64) -> Self {
        Interaction {
            user,
            item,
            timestamp: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Format {
    /// `user::item::rating::timestamp`
    MovielensDat,
    /// `user<TAB>item[<TAB>timestamp]`
    Tsv,
}

impl FromStr for Format {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "movielens-dat" => Ok(Format::MovielensDat),
            "tsv" => Ok(Format::Tsv),
            other => Err(Error::Argument(format!("unknown dataset format `{other}`"))),
        }
    }
}

impl fmt::Display for Format {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Format::MovielensDat => "movielens-dat",
            Format::Tsv => "tsv",
        })
    }
}

fn parse_field<T: FromStr>(field: Option<&str>, line: usize, name: &str) -> Result<T> {
    let raw = field.ok_or_else(|| Error::Parse {
        line,
        message: format!("missing {name} field"),
    })?;
    raw.trim().parse().map_err(|_| Error::Parse {
        line,
        message: format!("invalid {name} `{raw}`"),
    })
}

/// Parses interaction text. Duplicate `(user, item)` pairs keep their first
/// occurrence; ratings are discarded.
pub fn parse_interactions(text: &str, format: Format) -> Result<Vec<Interaction>> {
    let mut seen = HashSet::new();
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = line.trim_end_matches('\r');
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = match format {
            Format::MovielensDat => line.split("::").collect(),
            Format::Tsv => line.split('\t').collect(),
        };
        let (max_fields, ts_index) = match format {
            Format::MovielensDat => (4, 3),
            Format::Tsv => (3, 2),
        };
        if fields.len() < 2 || fields.len() > max_fields {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 2..={max_fields} fields, found {}", fields.len()),
            });
        }
        let user: u64 = parse_field(fields.first().copied(), line_no, "user")?;
        let item: u64 = parse_field(fields.get(1).copied(), line_no, "item")?;
        if format == Format::MovielensDat && fields.len() >= 3 {
            let _: f64 = parse_field(fields.get(2).copied(), line_no, "rating")?;
        }
        let timestamp = match fields.get(ts_index) {
            Some(ts) => Some(parse_field::<i64>(Some(ts), line_no, "timestamp")?),
            None => None,
        };
        if seen.insert((user, item)) {
            out.push(Interaction { user, item, timestamp });
        }
    }
    if out.is_empty() {
        return Err(Error::EmptyDataset("no interactions parsed".into()));
    }
    Ok(out)
}

/// Reads and parses an interaction file.
pub fn ingest(path: impl AsRef<Path>, format: Format) -> Result<Vec<Interaction>> {
    let text = fs::read_to_string(path.as_ref())?;
    parse_interactions(&text, format)
}

/// Bijection between original ids and dense indices.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct IdMap {
    pub users: Vec<u64>,
    pub items: Vec<u64>,
    user_index: BTreeMap<u64, UserId>,
    item_index: BTreeMap<u64, ItemId>,
}

impl IdMap {
    fn new(users: Vec<u64>, items: Vec<u64>) -> Self {
        let user_index = users.iter().enumerate().map(|(i, &u)| (u, i as UserId)).collect();
        let item_index = items.iter().enumerate().map(|(i, &v)| (v, i as ItemId)).collect();
        IdMap {
            users,
            items,
            user_index,
            item_index,
        }
    }

    pub fn user(&self, raw: u64) -> Option<UserId> {
        self.user_index.get(&raw).copied()
    }

    pub fn item(&self, raw: u64) -> Option<ItemId> {
        self.item_index.get(&raw).copied()
    }

    /// `orig<TAB>dense` lines: users, then a `#items` marker, then items.
    pub fn write_tsv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = BufWriter::new(fs::File::create(path)?);
        for (dense, raw) in self.users.iter().enumerate() {
            writeln!(out, "{raw}\t{dense}")?;
        }
        writeln!(out, "#items")?;
        for (dense, raw) in self.items.iter().enumerate() {
            writeln!(out, "{raw}\t{dense}")?;
        }
        out.flush()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum SplitMode {
    /// Each user's interactions are shuffled and cut separately.
    #[default]
    PerUser,
    /// All interactions are shuffled together and cut once.
    Global,
}

impl FromStr for SplitMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_user" | "per-user" => Ok(SplitMode::PerUser),
            "global" => Ok(SplitMode::Global),
            other => Err(Error::Argument(format!("unknown split mode `{other}`"))),
        }
    }
}

impl fmt::Display for SplitMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SplitMode::PerUser => "per_user",
            SplitMode::Global => "global",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitConfig {
    pub min_interactions: usize,
    pub ratios: (f64, f64, f64),
    pub seed: u64,
    pub mode: SplitMode,
}

impl Default for SplitConfig {
    fn default() -> Self {
        SplitConfig {
            min_interactions: 1,
            ratios: (0.8, 0.1, 0.1),
            seed: 0,
            mode: SplitMode::PerUser,
        }
    }
}

/// Filtered and split interaction data in dense indices. Per-user item lists
/// are sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub num_users: usize,
    pub num_items: usize,
    pub train: Vec<Vec<ItemId>>,
    pub valid: Vec<Vec<ItemId>>,
    pub test: Vec<Vec<ItemId>>,
    pub id_map: IdMap,
}

impl Dataset {
    pub fn train_len(&self) -> usize {
        self.train.iter().map(Vec::len).sum()
    }

    pub fn valid_len(&self) -> usize {
        self.valid.iter().map(Vec::len).sum()
    }

    pub fn test_len(&self) -> usize {
        self.test.iter().map(Vec::len).sum()
    }

    /// Writes `train.tsv`, `valid.tsv`, `test.tsv` (dense ids) and `idmap.tsv`.
    pub fn write_dir(&self, dir: impl AsRef<Path>) -> Result<()> {
        let dir = dir.as_ref();
        fs::create_dir_all(dir)?;
        for (name, split) in [("train.tsv", &self.train), ("valid.tsv", &self.valid), ("test.tsv", &self.test)] {
            let mut out = BufWriter::new(fs::File::create(dir.join(name))?);
            for (user, items) in split.iter().enumerate() {
                for item in items {
                    writeln!(out, "{user}\t{item}")?;
                }
            }
            out.flush()?;
        }
        self.id_map.write_tsv(dir.join("idmap.tsv"))
    }
}

/// Iteratively drops users and items with fewer than `min` interactions until
/// nothing changes.
pub fn kcore_filter(raw: &[Interaction], min: usize) -> Vec<Interaction> {
    let mut current: Vec<Interaction> = raw.to_vec();
    loop {
        let mut user_count: BTreeMap<u64, usize> = BTreeMap::new();
        let mut item_count: BTreeMap<u64, usize> = BTreeMap::new();
        for it in &current {
            *user_count.entry(it.user).or_default() += 1;
            *item_count.entry(it.item).or_default() += 1;
        }
        let before = current.len();
        current.retain(|it| user_count[&it.user] >= min && item_count[&it.item] >= min);
        if current.len() == before {
            return current;
        }
    }
}

fn cut(n: usize, ratio: f64) -> usize {
    (ratio * n as f64 + 1e-9).floor() as usize
}

/// Filters to the k-core and splits into train/valid/test.
pub fn filter_and_split(raw: &[Interaction], cfg: &SplitConfig) -> Result<Dataset> {
    if cfg.min_interactions == 0 {
        return Err(Error::Argument("min_interactions must be >= 1".into()));
    }
    let (rt, rv, rs) = cfg.ratios;
    if [rt, rv, rs].iter().any(|r| !(0.0..=1.0).contains(r)) || ((rt + rv + rs) - 1.0).abs() > 1e-9 {
        return Err(Error::Argument(format!("split ratios must be in [0,1] and sum to 1, got {:?}", cfg.ratios)));
    }
    let mut dedup = HashSet::new();
    let raw: Vec<Interaction> = raw.iter().copied().filter(|it| dedup.insert((it.user, it.item))).collect();
    let kept = kcore_filter(&raw, cfg.min_interactions);
    if kept.is_empty() {
        return Err(Error::EmptyDataset(format!(
            "no interactions survive filtering at min_interactions = {}",
            cfg.min_interactions
        )));
    }

    let mut rng = RngStream::new(cfg.seed, "split");
    // (user, item) triples per split in raw ids
    let mut train: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let mut valid: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    let mut test: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
    match cfg.mode {
        SplitMode::PerUser => {
            let mut by_user: BTreeMap<u64, Vec<u64>> = BTreeMap::new();
            for it in &kept {
                by_user.entry(it.user).or_default().push(it.item);
            }
            for (user, mut items) in by_user {
                items.sort_unstable();
                rng.shuffle(&mut items);
                let n = items.len();
                let n_valid = cut(n, rv);
                let n_test = cut(n, rs);
                let n_train = n - n_valid - n_test;
                train.insert(user, items[..n_train].to_vec());
                valid.insert(user, items[n_train..n_train + n_valid].to_vec());
                test.insert(user, items[n_train + n_valid..].to_vec());
            }
        }
        SplitMode::Global => {
            let mut pairs: Vec<(u64, u64)> = kept.iter().map(|it| (it.user, it.item)).collect();
            pairs.sort_unstable();
            rng.shuffle(&mut pairs);
            let n = pairs.len();
            let n_valid = cut(n, rv);
            let n_test = cut(n, rs);
            let n_train = n - n_valid - n_test;
            for (idx, (user, item)) in pairs.into_iter().enumerate() {
                let target = if idx < n_train {
                    &mut train
                } else if idx < n_train + n_valid {
                    &mut valid
                } else {
                    &mut test
                };
                target.entry(user).or_default().push(item);
            }
        }
    }
    train.retain(|_, items| !items.is_empty());
    if train.is_empty() {
        return Err(Error::EmptyDataset("no user retains a training interaction".into()));
    }
    let users: Vec<u64> = train.keys().copied().collect();
    let user_set: BTreeSet<u64> = users.iter().copied().collect();
    let items: Vec<u64> = kept
        .iter()
        .filter(|it| user_set.contains(&it.user))
        .map(|it| it.item)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let id_map = IdMap::new(users, items);

    let densify = |split: &BTreeMap<u64, Vec<u64>>| -> Vec<Vec<ItemId>> {
        id_map
            .users
            .iter()
            .map(|raw_user| {
                let mut list: Vec<ItemId> = split
                    .get(raw_user)
                    .map(|items| items.iter().map(|raw| id_map.item(*raw).expect("item in map")).collect())
                    .unwrap_or_default();
                list.sort_unstable();
                list
            })
            .collect()
    };
    Ok(Dataset {
        num_users: id_map.users.len(),
        num_items: id_map.items.len(),
        train: densify(&train),
        valid: densify(&valid),
        test: densify(&test),
        id_map,
    })
}

/// A user node and its first-order training items.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EgoGraph {
    pub user: UserId,
    pub items: Vec<ItemId>,
}

impl EgoGraph {
    pub fn new(user: UserId, mut items: Vec<ItemId>) -> Self {
        items.sort_unstable();
        items.dedup();
        EgoGraph { user, items }
    }

    pub fn n(&self) -> usize {
        self.items.len()
    }

    pub fn contains(&self, item: ItemId) -> bool {
        self.items.binary_search(&item).is_ok()
    }
}

pub fn build_ego_graphs(ds: &Dataset) -> Vec<EgoGraph> {
    ds.train
        .iter()
        .enumerate()
        .map(|(user, items)| EgoGraph::new(user as UserId, items.clone()))
        .collect()
}

/// Parameters of the block-structured synthetic corpus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticConfig {
    pub users: usize,
    pub items: usize,
    pub communities: usize,
    pub interactions_per_user: usize,
    /// Probability that a pick comes from the user's own community block.
    pub in_community: f64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        // 36 interactions split 8:1:1 with floor leave exactly 30 for training.
        SyntheticConfig {
            users: 500,
            items: 300,
            communities: 5,
            interactions_per_user: 36,
            in_community: 0.9,
        }
    }
}

impl SyntheticConfig {
    pub fn community_of_user(&self, user: u64) -> usize {
        user as usize % self.communities
    }

    pub fn community_of_item(&self, item: u64) -> usize {
        item as usize * self.communities / self.items
    }
}

/// Users and items are partitioned into communities; each user draws most of
/// its items from its own community's block.
pub fn synthetic_block(cfg: &SyntheticConfig, seed: u64) -> Result<Vec<Interaction>> {
    if cfg.communities == 0 || cfg.items < cfg.communities || cfg.users == 0 {
        return Err(Error::Argument("synthetic corpus needs users >= 1 and items >= communities >= 1".into()));
    }
    if cfg.interactions_per_user > cfg.items {
        return Err(Error::Argument("interactions_per_user exceeds catalog size".into()));
    }
    let mut rng = RngStream::new(seed, "synthetic");
    let blocks: Vec<Vec<u64>> = (0..cfg.communities)
        .map(|c| (0..cfg.items as u64).filter(|&i| cfg.community_of_item(i) == c).collect())
        .collect();
    let mut out = Vec::with_capacity(cfg.users * cfg.interactions_per_user);
    for user in 0..cfg.users as u64 {
        let home = cfg.community_of_user(user);
        let mut picked = BTreeSet::new();
        let mut order = Vec::with_capacity(cfg.interactions_per_user);
        while picked.len() < cfg.interactions_per_user {
            let item = if rng.uniform() < cfg.in_community && picked.len() < blocks[home].len() {
                blocks[home][rng.index(blocks[home].len())]
            } else {
                rng.index(cfg.items) as u64
            };
            if picked.insert(item) {
                order.push(item);
            }
        }
        out.extend(order.into_iter().map(|item| Interaction::new(user, item)));
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_movielens_line() {
        let got = parse_interactions("1::1193::5::978300760\n", Format::MovielensDat).unwrap();
        assert_eq!(
            got,
            vec![Interaction {
                user: 1,
                item: 1193,
                timestamp: Some(978300760)
            }]
        );
    }

    #[test]
    fn duplicates_collapse() {
        let got = parse_interactions("1\t2\n1\t2\t99\n", Format::Tsv).unwrap();
        assert_eq!(got.len(), 1);
    }

    #[test]
    fn malformed_line_names_line_number() {
        let err = parse_interactions("1\t2\nfoo\tbar\n", Format::Tsv).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 2, .. }), "{err}");
        let err = parse_interactions("1::2::x::3\n", Format::MovielensDat).unwrap_err();
        assert!(matches!(err, Error::Parse { line: 1, .. }));
    }

    #[test]
    fn empty_input_is_an_error() {
        assert!(matches!(parse_interactions("\n\n", Format::Tsv), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn five_line_fixture_remaps_densely() {
        let text = "10\t100\n10\t200\n30\t200\n20\t300\n30\t100\n";
        let raw = parse_interactions(text, Format::Tsv).unwrap();
        assert_eq!(raw.len(), 5);
        let ds = filter_and_split(
            &raw,
            &SplitConfig {
                ratios: (1.0, 0.0, 0.0),
                ..SplitConfig::default()
            },
        )
        .unwrap();
        assert_eq!(ds.id_map.users, vec![10, 20, 30]);
        assert_eq!(ds.id_map.items, vec![100, 200, 300]);
        assert_eq!(ds.train, vec![vec![0, 1], vec![2], vec![0, 1]]);
    }

    #[test]
    fn sparse_user_removed() {
        let mut raw: Vec<Interaction> = (0..25).flat_map(|u| (0..25).map(move |i| Interaction::new(u, i))).collect();
        raw.extend((0..3).map(|i| Interaction::new(99, i)));
        let ds = filter_and_split(
            &raw,
            &SplitConfig {
                min_interactions: 20,
                ..SplitConfig::default()
            },
        )
        .unwrap();
        assert!(ds.id_map.user(99).is_none());
        assert_eq!(ds.num_users, 25);
    }

    #[test]
    fn exact_eight_one_one() {
        let raw: Vec<Interaction> = (0..7).flat_map(|u| (0..10).map(move |i| Interaction::new(u, i))).collect();
        let ds = filter_and_split(&raw, &SplitConfig::default()).unwrap();
        for u in 0..7 {
            assert_eq!((ds.train[u].len(), ds.valid[u].len(), ds.test[u].len()), (8, 1, 1));
        }
    }

    #[test]
    fn filtering_to_nothing_fails() {
        let raw = vec![Interaction::new(1, 1)];
        let cfg = SplitConfig {
            min_interactions: 2,
            ..SplitConfig::default()
        };
        assert!(matches!(filter_and_split(&raw, &cfg), Err(Error::EmptyDataset(_))));
    }

    #[test]
    fn ego_graph_from_train_items() {
        let ds = Dataset {
            num_users: 1,
            num_items: 8,
            train: vec![vec![3, 7]],
            valid: vec![vec![1]],
            test: vec![vec![2]],
            id_map: IdMap::default(),
        };
        let egos = build_ego_graphs(&ds);
        assert_eq!(egos, vec![EgoGraph::new(0, vec![3, 7])]);
        assert_eq!(egos[0].n(), 2);
    }

    #[test]
    fn synthetic_default_has_thirty_train_items() {
        let raw = synthetic_block(&SyntheticConfig::default(), 1).unwrap();
        let ds = filter_and_split(&raw, &SplitConfig::default()).unwrap();
        assert_eq!(ds.num_users, 500);
        assert!(ds.train.iter().all(|t| t.len() == 30));
        assert!(ds.test.iter().all(|t| t.len() == 3));
    }

    #[test]
    fn global_mode_keeps_disjoint_splits() {
        let raw = synthetic_block(&SyntheticConfig::default(), 4).unwrap();
        let ds = filter_and_split(
            &raw,
            &SplitConfig {
                mode: SplitMode::Global,
                ..SplitConfig::default()
            },
        )
        .unwrap();
        for u in 0..ds.num_users {
            assert!(!ds.train[u].is_empty());
            assert!(ds.test[u].iter().all(|i| ds.train[u].binary_search(i).is_err()));
        }
    }
}
