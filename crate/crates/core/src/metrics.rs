//! Offline top-K evaluation over the held-out split.
//!
//! The evaluator reads server state and the ground-truth split directly; it
//! sits outside the protocol and never touches the message bus.

use std::collections::BTreeSet;
use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use crate::data::{Dataset, ItemId, UserId};
use crate::error::Result;
use crate::server::{rank_topk, EgoRegistry, ItemTable};

pub fn recall_at_k(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    hits as f64 / relevant.len() as f64
}

/// Binary-relevance NDCG with `1 / log2(p + 1)` discounts, 1-based positions.
pub fn ndcg_at_k(ranked: &[ItemId], relevant: &BTreeSet<ItemId>, k: usize) -> f64 {
    if relevant.is_empty() {
        return 0.0;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(p, _)| 1.0 / ((p + 2) as f64).log2())
        .sum();
    let ideal: f64 = (0..k.min(relevant.len())).map(|p| 1.0 / ((p + 2) as f64).log2()).sum();
    dcg / ideal
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Valid,
    Test,
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize)]
pub struct EvalSummary {
    pub recall: f64,
    pub ndcg: f64,
    pub users: usize,
    /// Users with held-out items but no registry entry.
    pub skipped: usize,
}

/// Averages Recall@k and NDCG@k over users with at least one held-out item.
/// Candidates are all items outside the user's training set.
pub fn evaluate(registry: &EgoRegistry, table: &ItemTable, ds: &Dataset, split: Split, k: usize) -> Result<EvalSummary> {
    let held = match split {
        Split::Valid => &ds.valid,
        Split::Test => &ds.test,
    };
    let per_user: Vec<Option<(f64, f64)>> = (0..ds.num_users)
        .into_par_iter()
        .filter(|&u| !held[u].is_empty())
        .map(|u| -> Result<Option<(f64, f64)>> {
            if registry.get(u as UserId).is_none() {
                return Ok(None);
            }
            let exclude: BTreeSet<ItemId> = ds.train[u].iter().copied().collect();
            let relevant: BTreeSet<ItemId> = held[u].iter().copied().collect();
            let ranked = rank_topk(registry, table, u as UserId, k, &exclude)?;
            Ok(Some((recall_at_k(&ranked, &relevant, k), ndcg_at_k(&ranked, &relevant, k))))
        })
        .collect::<Result<_>>()?;
    let mut out = EvalSummary::default();
    for r in per_user {
        match r {
            Some((recall, ndcg)) => {
                out.recall += recall;
                out.ndcg += ndcg;
                out.users += 1;
            }
            None => out.skipped += 1,
        }
    }
    if out.users > 0 {
        out.recall /= out.users as f64;
        out.ndcg /= out.users as f64;
    }
    Ok(out)
}

/// Expected Recall@k of a uniformly random ranking: per user `k / candidates`
/// (capped at 1), averaged over users with held-out items.
pub fn random_recall_expectation(ds: &Dataset, split: Split, k: usize) -> f64 {
    let held = match split {
        Split::Valid => &ds.valid,
        Split::Test => &ds.test,
    };
    let vals: Vec<f64> = (0..ds.num_users)
        .filter(|&u| !held[u].is_empty())
        .map(|u| (k as f64 / (ds.num_items - ds.train[u].len()) as f64).min(1.0))
        .collect();
    vals.iter().sum::<f64>() / vals.len().max(1) as f64
}

/// Per-round communication counts in scalars.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct LedgerRow {
    pub round: u64,
    pub uplink: u64,
    pub downlink: u64,
    pub d2d: u64,
}

/// One evaluation point of an experiment.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricsReport {
    pub round: u64,
    pub k: usize,
    pub recall: f64,
    pub ndcg: f64,
    /// Mean local BPR loss of the round's trained devices; empty at round 0.
    pub mean_loss: Option<f64>,
    pub uplink: u64,
    pub downlink: u64,
    pub d2d: u64,
    #[serde(skip)]
    pub valid: Option<EvalSummary>,
}

pub const REPORT_HEADER: &str = "round,k,recall,ndcg,mean_loss,uplink,downlink,d2d";

impl MetricsReport {
    pub fn csv_row(&self) -> String {
        let loss = self.mean_loss.map_or(String::new(), |l| l.to_string());
        format!(
            "{},{},{},{},{},{},{},{}",
            self.round, self.k, self.recall, self.ndcg, loss, self.uplink, self.downlink, self.d2d
        )
    }
}

pub fn write_report_csv(mut out: impl Write, reports: &[MetricsReport]) -> Result<()> {
    writeln!(out, "{REPORT_HEADER}")?;
    for r in reports {
        writeln!(out, "{}", r.csv_row())?;
    }
    Ok(())
}

pub fn write_report_jsonl(mut out: impl Write, reports: &[MetricsReport]) -> Result<()> {
    for r in reports {
        serde_json::to_writer(&mut out, r)?;
        writeln!(out)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(items: &[ItemId]) -> BTreeSet<ItemId> {
        items.iter().copied().collect()
    }

    #[test]
    fn recall_cases() {
        let ranked: Vec<ItemId> = (0..30).collect();
        assert_eq!(recall_at_k(&ranked, &set(&[3, 11]), 20), 1.0);
        assert_eq!(recall_at_k(&ranked, &set(&[25, 29]), 20), 0.0);
        assert_eq!(recall_at_k(&ranked, &set(&[2, 40, 41, 42]), 20), 0.25);
    }

    #[test]
    fn ndcg_cases() {
        let ranked: Vec<ItemId> = vec![5, 6, 7, 8];
        assert_eq!(ndcg_at_k(&ranked, &set(&[5]), 20), 1.0);
        assert!((ndcg_at_k(&ranked, &set(&[7]), 20) - 0.5).abs() < 1e-15);
        assert!((ndcg_at_k(&ranked, &set(&[6, 5]), 20) - 1.0).abs() < 1e-15);
    }

    #[test]
    fn csv_schema() {
        let r = MetricsReport {
            round: 2,
            k: 20,
            recall: 0.5,
            ndcg: 0.25,
            mean_loss: Some(1.5),
            uplink: 10,
            downlink: 20,
            d2d: 0,
            valid: None,
        };
        let mut buf = Vec::new();
        write_report_csv(&mut buf, &[r]).unwrap();
        assert_eq!(
            String::from_utf8(buf).unwrap(),
            "round,k,recall,ndcg,mean_loss,uplink,downlink,d2d\n2,20,0.5,0.25,1.5,10,20,0\n"
        );
    }
}
