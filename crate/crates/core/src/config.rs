//! Experiment configuration: flat `key = value` text, validation and the
//! resolved echo written next to run outputs.
//!
//! `[section]` headers are accepted and ignored, `#` starts a comment. Keys
//! are unique across sections.

use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use crate::cluster::{FakeItemMode, FcmConfig};
use crate::data::{filter_and_split, ingest, synthetic_block, Dataset, Format, SplitConfig, SplitMode, SyntheticConfig};
use crate::device::DeviceConfig;
use crate::error::{Error, Result};
use crate::numeric::AdamConfig;
use crate::propagate::uniform_alphas;
use crate::sim::{RankSource, Schedule, SimConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DatasetFormat {
    File(Format),
    Synthetic,
}

impl FromStr for DatasetFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "synthetic" => Ok(DatasetFormat::Synthetic),
            other => other.parse().map(DatasetFormat::File),
        }
    }
}

impl fmt::Display for DatasetFormat {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetFormat::File(x) => write!(f, "{x}"),
            DatasetFormat::Synthetic => f.write_str("synthetic"),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub dataset_path: Option<PathBuf>,
    pub dataset_format: DatasetFormat,
    /// Defaults to 20 for MovieLens, 10 for TSV and 1 for synthetic data.
    pub min_interactions: Option<usize>,
    pub split_ratios: [f64; 3],
    pub split_mode: SplitMode,
    pub dim: usize,
    pub layers: usize,
    /// Defaults to 100 for MovieLens and 200 otherwise.
    pub groups: Option<usize>,
    pub fake_items: usize,
    pub neg_count: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub delta: f64,
    pub ldp_lambda: f64,
    pub fuzziness: f64,
    pub fcm_max_iters: usize,
    pub fcm_tol: f64,
    pub rounds: u64,
    pub local_epochs: usize,
    pub sample_frac: f64,
    pub recluster_every: u64,
    pub ego_upload_every: u64,
    pub rank_source: RankSource,
    pub eval_every: u64,
    pub k: usize,
    pub seed: u64,
    pub item_topk_mode: bool,
    pub select_on_valid: bool,
    pub synth_users: usize,
    pub synth_items: usize,
    pub synth_communities: usize,
    pub synth_interactions: usize,
    pub synth_in_community: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        let syn = SyntheticConfig::default();
        ExperimentConfig {
            dataset_path: None,
            dataset_format: DatasetFormat::File(Format::MovielensDat),
            min_interactions: None,
            split_ratios: [0.8, 0.1, 0.1],
            split_mode: SplitMode::PerUser,
            dim: 64,
            layers: 4,
            groups: None,
            fake_items: 1,
            neg_count: 1,
            lr: 0.001,
            weight_decay: 0.0001,
            delta: 1.0,
            ldp_lambda: 0.1,
            fuzziness: 2.0,
            fcm_max_iters: 100,
            fcm_tol: 1e-4,
            rounds: 20,
            local_epochs: 3,
            sample_frac: 1.0,
            recluster_every: 1,
            ego_upload_every: 1,
            rank_source: RankSource::EgoGraph,
            eval_every: 1,
            k: 20,
            seed: 0,
            item_topk_mode: false,
            select_on_valid: false,
            synth_users: syn.users,
            synth_items: syn.items,
            synth_communities: syn.communities,
            synth_interactions: syn.interactions_per_user,
            synth_in_community: syn.in_community,
        }
    }
}

pub const KEYS: &[&str] = &[
    "dataset_path",
    "dataset_format",
    "min_interactions",
    "split_ratios",
    "split_mode",
    "dim",
    "layers",
    "groups",
    "fake_items",
    "neg_count",
    "lr",
    "weight_decay",
    "delta",
    "ldp_lambda",
    "fuzziness",
    "fcm_max_iters",
    "fcm_tol",
    "rounds",
    "local_epochs",
    "sample_frac",
    "recluster_every",
    "ego_upload_every",
    "rank_source",
    "eval_every",
    "k",
    "seed",
    "item_topk_mode",
    "select_on_valid",
    "synth_users",
    "synth_items",
    "synth_communities",
    "synth_interactions",
    "synth_in_community",
];

fn parse<T: FromStr>(key: &str, value: &str) -> std::result::Result<T, String> {
    value.parse().map_err(|_| format!("{key}: cannot parse {value:?}"))
}

fn parse_bool(key: &str, value: &str) -> std::result::Result<bool, String> {
    match value {
        "true" | "1" | "yes" => Ok(true),
        "false" | "0" | "no" => Ok(false),
        _ => Err(format!("{key}: expected true or false, got {value:?}")),
    }
}

/// Splits `key = value` lines, skipping blanks, comments and section headers.
pub fn parse_pairs(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    let mut errors = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() || (line.starts_with('[') && line.ends_with(']')) {
            continue;
        }
        match line.split_once('=') {
            Some((k, v)) => out.push((k.trim().to_string(), v.trim().trim_matches('"').to_string())),
            None => errors.push(format!("line {}: expected key = value", n + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(Error::Config(errors))
    }
}

impl ExperimentConfig {
    pub fn from_file(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = ExperimentConfig::default();
        cfg.apply(&parse_pairs(&text)?)?;
        Ok(cfg)
    }

    /// Applies overrides in order; later pairs win.
    pub fn apply(&mut self, pairs: &[(String, String)]) -> Result<()> {
        let errors: Vec<String> = pairs.iter().filter_map(|(k, v)| self.set(k, v).err()).collect();
        if errors.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(errors))
        }
    }

    pub fn set(&mut self, key: &str, value: &str) -> std::result::Result<(), String> {
        match key {
            "dataset_path" => self.dataset_path = (!value.is_empty()).then(|| PathBuf::from(value)),
            "dataset_format" => self.dataset_format = value.parse().map_err(|e: Error| format!("{key}: {e}"))?,
            "min_interactions" => self.min_interactions = Some(parse(key, value)?),
            "split_ratios" => {
                let parts: Vec<f64> = value.split(',').map(|p| parse(key, p.trim())).collect::<std::result::Result<_, _>>()?;
                self.split_ratios = parts
                    .try_into()
                    .map_err(|_| format!("{key}: expected three comma-separated ratios"))?;
            }
            "split_mode" => {
                self.split_mode = match value {
                    "per_user" => SplitMode::PerUser,
                    "global" => SplitMode::Global,
                    _ => return Err(format!("{key}: expected per_user or global, got {value:?}")),
                }
            }
            "dim" => self.dim = parse(key, value)?,
            "layers" => self.layers = parse(key, value)?,
            "groups" => self.groups = Some(parse(key, value)?),
            "fake_items" => self.fake_items = parse(key, value)?,
            "neg_count" => self.neg_count = parse(key, value)?,
            "lr" => self.lr = parse(key, value)?,
            "weight_decay" => self.weight_decay = parse(key, value)?,
            "delta" => self.delta = parse(key, value)?,
            "ldp_lambda" => self.ldp_lambda = parse(key, value)?,
            "fuzziness" => self.fuzziness = parse(key, value)?,
            "fcm_max_iters" => self.fcm_max_iters = parse(key, value)?,
            "fcm_tol" => self.fcm_tol = parse(key, value)?,
            "rounds" => self.rounds = parse(key, value)?,
            "local_epochs" => self.local_epochs = parse(key, value)?,
            "sample_frac" => self.sample_frac = parse(key, value)?,
            "recluster_every" => self.recluster_every = parse(key, value)?,
            "ego_upload_every" => self.ego_upload_every = parse(key, value)?,
            "rank_source" => self.rank_source = value.parse().map_err(|e: Error| format!("{key}: {e}"))?,
            "eval_every" => self.eval_every = parse(key, value)?,
            "k" => self.k = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            "item_topk_mode" => self.item_topk_mode = parse_bool(key, value)?,
            "select_on_valid" => self.select_on_valid = parse_bool(key, value)?,
            "synth_users" => self.synth_users = parse(key, value)?,
            "synth_items" => self.synth_items = parse(key, value)?,
            "synth_communities" => self.synth_communities = parse(key, value)?,
            "synth_interactions" => self.synth_interactions = parse(key, value)?,
            "synth_in_community" => self.synth_in_community = parse(key, value)?,
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    pub fn resolved_min_interactions(&self) -> usize {
        self.min_interactions.unwrap_or(match self.dataset_format {
            DatasetFormat::File(Format::MovielensDat) => 20,
            DatasetFormat::File(Format::Tsv) => 10,
            DatasetFormat::Synthetic => 1,
        })
    }

    pub fn resolved_groups(&self) -> usize {
        self.groups.unwrap_or(match self.dataset_format {
            DatasetFormat::File(Format::MovielensDat) => 100,
            _ => 200,
        })
    }

    /// Every range violation, not just the first.
    pub fn violations(&self) -> Vec<String> {
        let mut v = Vec::new();
        let mut check = |ok: bool, msg: &str| {
            if !ok {
                v.push(msg.to_string());
            }
        };
        if self.dataset_format != DatasetFormat::Synthetic {
            check(
                self.dataset_path.is_some(),
                &format!("dataset_path: required for dataset_format {}", self.dataset_format),
            );
        }
        check(self.resolved_min_interactions() >= 1, "min_interactions: must be at least 1");
        check(
            self.split_ratios.iter().all(|r| *r >= 0.0) && (self.split_ratios.iter().sum::<f64>() - 1.0).abs() < 1e-9,
            "split_ratios: must be non-negative and sum to 1",
        );
        check(self.dim >= 1, "dim: must be positive");
        check(self.layers >= 1, "layers: must be at least 1");
        check(self.resolved_groups() >= 2, "groups: must be at least 2");
        check(self.lr >= 0.0 && self.lr.is_finite(), "lr: must be finite and non-negative");
        check(self.weight_decay >= 0.0 && self.weight_decay.is_finite(), "weight_decay: must be finite and non-negative");
        check(self.delta > 0.0 && self.delta.is_finite(), "delta: must be positive");
        check(self.ldp_lambda >= 0.0 && self.ldp_lambda.is_finite(), "ldp_lambda: must be non-negative");
        check(self.fuzziness > 1.0 && self.fuzziness.is_finite(), "fuzziness: must exceed 1");
        check(self.fcm_max_iters >= 1, "fcm_max_iters: must be positive");
        check(self.fcm_tol >= 0.0, "fcm_tol: must be non-negative");
        check(self.sample_frac > 0.0 && self.sample_frac <= 1.0, "sample_frac: must lie in (0, 1]");
        check(self.recluster_every >= 1, "recluster_every: must be positive");
        check(self.ego_upload_every >= 1, "ego_upload_every: must be positive");
        check(self.eval_every >= 1, "eval_every: must be positive");
        check(self.k >= 1, "k: must be positive");
        if self.dataset_format == DatasetFormat::Synthetic {
            check(self.synth_users >= 1, "synth_users: must be positive");
            check(self.synth_communities >= 1, "synth_communities: must be positive");
            check(
                self.synth_items >= self.synth_communities,
                "synth_items: must be at least synth_communities",
            );
            check(
                self.synth_interactions <= self.synth_items,
                "synth_interactions: must not exceed synth_items",
            );
            check(
                (0.0..=1.0).contains(&self.synth_in_community),
                "synth_in_community: must lie in [0, 1]",
            );
        }
        v
    }

    pub fn validate(&self) -> Result<()> {
        let v = self.violations();
        if v.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(v))
        }
    }

    /// `key = value` for every key, defaults resolved.
    pub fn resolved(&self) -> String {
        let mut out = String::new();
        for key in KEYS {
            out.push_str(&format!("{key} = {}\n", self.value_of(key)));
        }
        out
    }

    fn value_of(&self, key: &str) -> String {
        match key {
            "dataset_path" => self.dataset_path.as_ref().map_or(String::new(), |p| p.display().to_string()),
            "dataset_format" => self.dataset_format.to_string(),
            "min_interactions" => self.resolved_min_interactions().to_string(),
            "split_ratios" => {
                let [a, b, c] = self.split_ratios;
                format!("{a},{b},{c}")
            }
            "split_mode" => self.split_mode.to_string(),
            "dim" => self.dim.to_string(),
            "layers" => self.layers.to_string(),
            "groups" => self.resolved_groups().to_string(),
            "fake_items" => self.fake_items.to_string(),
            "neg_count" => self.neg_count.to_string(),
            "lr" => self.lr.to_string(),
            "weight_decay" => self.weight_decay.to_string(),
            "delta" => self.delta.to_string(),
            "ldp_lambda" => self.ldp_lambda.to_string(),
            "fuzziness" => self.fuzziness.to_string(),
            "fcm_max_iters" => self.fcm_max_iters.to_string(),
            "fcm_tol" => self.fcm_tol.to_string(),
            "rounds" => self.rounds.to_string(),
            "local_epochs" => self.local_epochs.to_string(),
            "sample_frac" => self.sample_frac.to_string(),
            "recluster_every" => self.recluster_every.to_string(),
            "ego_upload_every" => self.ego_upload_every.to_string(),
            "rank_source" => self.rank_source.to_string(),
            "eval_every" => self.eval_every.to_string(),
            "k" => self.k.to_string(),
            "seed" => self.seed.to_string(),
            "item_topk_mode" => self.item_topk_mode.to_string(),
            "select_on_valid" => self.select_on_valid.to_string(),
            "synth_users" => self.synth_users.to_string(),
            "synth_items" => self.synth_items.to_string(),
            "synth_communities" => self.synth_communities.to_string(),
            "synth_interactions" => self.synth_interactions.to_string(),
            "synth_in_community" => self.synth_in_community.to_string(),
            _ => unreachable!("unknown key {key}"),
        }
    }

    pub fn split_config(&self) -> SplitConfig {
        SplitConfig {
            min_interactions: self.resolved_min_interactions(),
            ratios: (self.split_ratios[0], self.split_ratios[1], self.split_ratios[2]),
            seed: self.seed,
            mode: self.split_mode,
        }
    }

    pub fn synthetic_config(&self) -> SyntheticConfig {
        SyntheticConfig {
            users: self.synth_users,
            items: self.synth_items,
            communities: self.synth_communities,
            interactions_per_user: self.synth_interactions,
            in_community: self.synth_in_community,
        }
    }

    pub fn sim_config(&self) -> SimConfig {
        SimConfig {
            device: DeviceConfig {
                dim: self.dim,
                layers: self.layers,
                alphas: uniform_alphas(self.layers),
                adam: AdamConfig {
                    lr: self.lr,
                    weight_decay: self.weight_decay,
                    ..AdamConfig::default()
                },
                local_epochs: self.local_epochs,
                neg_count: self.neg_count,
                delta: self.delta,
                ldp_lambda: self.ldp_lambda,
            },
            fcm: FcmConfig {
                groups: self.resolved_groups(),
                fuzziness: self.fuzziness,
                max_iters: self.fcm_max_iters,
                tol: self.fcm_tol,
            },
            fake_count: self.fake_items,
            fake_mode: if self.item_topk_mode {
                FakeItemMode::PerItem
            } else {
                FakeItemMode::PerGroup
            },
            sample_frac: self.sample_frac,
            recluster_every: self.recluster_every,
            ego_upload_every: self.ego_upload_every,
            rank_source: self.rank_source,
            seed: self.seed,
            schedule_seed: None,
        }
    }

    pub fn schedule(&self) -> Schedule {
        Schedule {
            rounds: self.rounds,
            eval_every: self.eval_every,
            k: self.k,
            select_on_valid: self.select_on_valid,
        }
    }

    /// Reads or generates the interactions and splits them.
    pub fn load_dataset(&self) -> Result<Arc<Dataset>> {
        let raw = match self.dataset_format {
            DatasetFormat::Synthetic => synthetic_block(&self.synthetic_config(), self.seed)?,
            DatasetFormat::File(format) => {
                let path = self
                    .dataset_path
                    .as_ref()
                    .ok_or_else(|| Error::Config(vec!["dataset_path: required".into()]))?;
                ingest(path, format)?
            }
        };
        Ok(Arc::new(filter_and_split(&raw, &self.split_config())?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_match_published_settings() {
        let c = ExperimentConfig::default();
        assert_eq!((c.dim, c.layers, c.fake_items, c.neg_count, c.k), (64, 4, 1, 1, 20));
        assert_eq!((c.lr, c.weight_decay, c.delta, c.ldp_lambda, c.fuzziness), (0.001, 0.0001, 1.0, 0.1, 2.0));
        assert_eq!((c.local_epochs, c.sample_frac, c.recluster_every, c.ego_upload_every), (3, 1.0, 1, 1));
        assert_eq!(c.resolved_groups(), 100);
        let tsv = ExperimentConfig {
            dataset_format: DatasetFormat::File(Format::Tsv),
            ..c
        };
        assert_eq!(tsv.resolved_groups(), 200);
    }

    #[test]
    fn sections_and_comments_are_ignored() {
        let pairs = parse_pairs("[data]\ndataset_format = synthetic # inline\n\n[model]\nlayers=2\n").unwrap();
        let mut c = ExperimentConfig::default();
        c.apply(&pairs).unwrap();
        assert_eq!(c.dataset_format, DatasetFormat::Synthetic);
        assert_eq!(c.layers, 2);
        assert!(c.validate().is_ok());
    }

    #[test]
    fn missing_dataset_path_names_the_key() {
        let err = ExperimentConfig::default().validate().unwrap_err();
        assert!(err.to_string().contains("dataset_path"), "{err}");
    }

    #[test]
    fn every_violation_is_listed() {
        let mut c = ExperimentConfig::default();
        c.apply(&[("dim".into(), "0".into()), ("sample_frac".into(), "2".into())]).unwrap();
        let v = c.violations();
        assert_eq!(v.len(), 3, "{v:?}");
        let mut c = ExperimentConfig::default();
        let err = c.apply(&[("bogus".into(), "1".into()), ("dim".into(), "x".into())]).unwrap_err();
        match err {
            Error::Config(list) => assert_eq!(list.len(), 2),
            other => panic!("{other}"),
        }
    }

    #[test]
    fn resolved_round_trips() {
        let mut c = ExperimentConfig::default();
        c.apply(&[
            ("dataset_format".into(), "synthetic".into()),
            ("split_ratios".into(), "0.7,0.2,0.1".into()),
            ("item_topk_mode".into(), "true".into()),
        ])
        .unwrap();
        let text = c.resolved();
        let mut back = ExperimentConfig::default();
        back.apply(&parse_pairs(&text).unwrap()).unwrap();
        assert_eq!(back.resolved(), text);
        assert_eq!(back.sim_config(), c.sim_config());
    }
}
