//! Fuzzy c-means co-clustering of users and items, and group formation with
//! fake common items.

use std::fmt;
use std::str::FromStr;

use rayon::prelude::*;

use crate::data::{ItemId, UserId};
use crate::error::{Error, Result};
use crate::numeric::{Embedding, RngStream};

/// Row-stochastic membership of `rows` points in `groups` clusters, row-major.
/// Rows are users first, then items.
#[derive(Debug, Clone, PartialEq)]
pub struct MembershipMatrix {
    rows: usize,
    groups: usize,
    values: Vec<f64>,
}

impl MembershipMatrix {
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Self {
        let groups = rows.first().map_or(0, Vec::len);
        let n = rows.len();
        MembershipMatrix {
            rows: n,
            groups,
            values: rows.into_iter().flatten().collect(),
        }
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn groups(&self) -> usize {
        self.groups
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.values[i * self.groups..(i + 1) * self.groups]
    }

    pub fn get(&self, i: usize, j: usize) -> f64 {
        self.values[i * self.groups + j]
    }

    fn max_abs_diff(&self, other: &MembershipMatrix) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FcmResult {
    pub membership: MembershipMatrix,
    pub centroids: Vec<Embedding>,
    /// Criterion value after initialization, then after every iteration.
    pub objective_history: Vec<f64>,
    pub iterations: usize,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FcmConfig {
    pub groups: usize,
    pub fuzziness: f64,
    pub max_iters: usize,
    pub tol: f64,
}

impl Default for FcmConfig {
    fn default() -> Self {
        FcmConfig {
            groups: 100,
            fuzziness: 2.0,
            max_iters: 100,
            tol: 1e-4,
        }
    }
}

fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Membership of one point given its squared distances to every centroid.
/// A zero distance yields a one-hot row on the lowest such centroid.
pub fn membership_row(sq_dists: &[f64], fuzziness: f64, out: &mut [f64]) {
    if let Some(hit) = sq_dists.iter().position(|&d| d == 0.0) {
        out.fill(0.0);
        out[hit] = 1.0;
        return;
    }
    let min = sq_dists.iter().copied().fold(f64::INFINITY, f64::min);
    let exponent = 1.0 / (fuzziness - 1.0);
    let mut total = 0.0;
    for (o, &d) in out.iter_mut().zip(sq_dists) {
        *o = (min / d).powf(exponent);
        total += *o;
    }
    for o in out.iter_mut() {
        *o /= total;
    }
}

fn update_membership(points: &[Embedding], centroids: &[Embedding], fuzziness: f64) -> MembershipMatrix {
    let groups = centroids.len();
    let mut values = vec![0.0; points.len() * groups];
    values.par_chunks_mut(groups).zip(points.par_iter()).for_each(|(row, x)| {
        let d: Vec<f64> = centroids.iter().map(|c| sq_dist(x, c)).collect();
        membership_row(&d, fuzziness, row);
    });
    MembershipMatrix {
        rows: points.len(),
        groups,
        values,
    }
}

/// Weighted-mean centroid update. A centroid whose weights all vanish keeps
/// its previous position.
pub fn update_centroids(
    points: &[Embedding],
    membership: &MembershipMatrix,
    fuzziness: f64,
    previous: &[Embedding],
) -> Vec<Embedding> {
    let dim = points.first().map_or(0, |p| p.dim());
    (0..membership.groups())
        .into_par_iter()
        .map(|j| {
            let mut num = Embedding::zeros(dim);
            let mut den = 0.0;
            for (i, x) in points.iter().enumerate() {
                let w = membership.get(i, j).powf(fuzziness);
                if w != 0.0 {
                    num.add_scaled(w, x);
                    den += w;
                }
            }
            if den > 0.0 {
                num.scaled(1.0 / den)
            } else {
                previous[j].clone()
            }
        })
        .collect()
}

/// `sum_i sum_j P_ij^l * ||x_i - c_j||^2`.
pub fn objective(points: &[Embedding], membership: &MembershipMatrix, centroids: &[Embedding], fuzziness: f64) -> f64 {
    points
        .iter()
        .enumerate()
        .map(|(i, x)| {
            centroids
                .iter()
                .enumerate()
                .map(|(j, c)| membership.get(i, j).powf(fuzziness) * sq_dist(x, c))
                .sum::<f64>()
        })
        .sum()
}

/// Distance-weighted seeding: the first centroid is a uniform point, each
/// subsequent one is drawn with probability proportional to the squared
/// distance to the nearest already chosen centroid.
fn seed_centroids(points: &[Embedding], groups: usize, rng: &mut RngStream) -> Vec<Embedding> {
    let mut chosen = vec![points[rng.index(points.len())].clone()];
    let mut nearest: Vec<f64> = points.iter().map(|x| sq_dist(x, &chosen[0])).collect();
    while chosen.len() < groups {
        let total: f64 = nearest.iter().sum();
        let pick = if total > 0.0 {
            let target = rng.uniform() * total;
            let mut acc = 0.0;
            let mut pick = points.len() - 1;
            for (i, d) in nearest.iter().enumerate() {
                acc += d;
                if acc > target && *d > 0.0 {
                    pick = i;
                    break;
                }
            }
            pick
        } else {
            rng.index(points.len())
        };
        let c = points[pick].clone();
        for (n, x) in nearest.iter_mut().zip(points) {
            *n = n.min(sq_dist(x, &c));
        }
        chosen.push(c);
    }
    chosen
}

/// Alternating fuzzy c-means minimization.
pub fn fcm_fit(points: &[Embedding], cfg: &FcmConfig, rng: &mut RngStream) -> Result<FcmResult> {
    if cfg.groups < 2 {
        return Err(Error::Argument(format!("need at least 2 groups, got {}", cfg.groups)));
    }
    if cfg.fuzziness.is_nan() || cfg.fuzziness <= 1.0 {
        return Err(Error::Argument(format!("fuzziness exponent must exceed 1, got {}", cfg.fuzziness)));
    }
    if points.len() < cfg.groups {
        return Err(Error::Argument(format!(
            "{} points cannot form {} groups",
            points.len(),
            cfg.groups
        )));
    }
    let dim = points[0].dim();
    if points.iter().any(|p| p.dim() != dim || !p.is_finite()) {
        return Err(Error::Argument("clustering input must be finite vectors of one dimension".into()));
    }
    let l = cfg.fuzziness;
    let mut centroids = seed_centroids(points, cfg.groups, rng);
    let mut membership = update_membership(points, &centroids, l);
    let mut history = vec![objective(points, &membership, &centroids, l)];
    let mut iterations = 0;
    for _ in 0..cfg.max_iters {
        iterations += 1;
        centroids = update_centroids(points, &membership, l, &centroids);
        let next = update_membership(points, &centroids, l);
        history.push(objective(points, &next, &centroids, l));
        let delta = next.max_abs_diff(&membership);
        membership = next;
        if delta < cfg.tol {
            break;
        }
    }
    Ok(FcmResult {
        membership,
        centroids,
        objective_history: history,
        iterations,
    })
}

/// How fake items are attached to groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum FakeItemMode {
    /// Each group takes the `F` items with the highest membership in it.
    #[default]
    PerGroup,
    /// Each item joins the `F` groups where its membership is highest.
    PerItem,
}

impl FromStr for FakeItemMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_group" | "false" => Ok(FakeItemMode::PerGroup),
            "per_item" | "true" => Ok(FakeItemMode::PerItem),
            other => Err(Error::Argument(format!("unknown fake item mode `{other}`"))),
        }
    }
}

impl fmt::Display for FakeItemMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FakeItemMode::PerGroup => "per_group",
            FakeItemMode::PerItem => "per_item",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Group {
    pub users: Vec<UserId>,
    /// Fake common items with their membership score, best first.
    pub fake_items: Vec<(ItemId, f64)>,
}

impl Group {
    pub fn fake_ids(&self) -> Vec<ItemId> {
        self.fake_items.iter().map(|(i, _)| *i).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct GroupAssignment {
    pub groups: Vec<Group>,
    pub user_group: Vec<usize>,
    pub warnings: Vec<String>,
}

fn argmax_lowest(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}

/// Indices of the `k` largest values, descending, ties to the lowest index.
fn top_k(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].total_cmp(&values[a]).then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

/// Hard user groups by argmax and fake items by top-`F` membership.
pub fn assign_groups(
    membership: &MembershipMatrix,
    num_users: usize,
    fake_count: usize,
    mode: FakeItemMode,
) -> GroupAssignment {
    let groups = membership.groups();
    let num_items = membership.rows() - num_users;
    let mut out = GroupAssignment {
        groups: vec![Group::default(); groups],
        user_group: Vec::with_capacity(num_users),
        warnings: Vec::new(),
    };
    for u in 0..num_users {
        let g = argmax_lowest(membership.row(u));
        out.groups[g].users.push(u as UserId);
        out.user_group.push(g);
    }
    match mode {
        FakeItemMode::PerGroup => {
            let mut f = fake_count;
            if f > num_items {
                out.warnings.push(format!("fake item count {f} exceeds catalog size {num_items}; clamped"));
                f = num_items;
            }
            for (j, group) in out.groups.iter_mut().enumerate() {
                let column: Vec<f64> = (0..num_items).map(|i| membership.get(num_users + i, j)).collect();
                group.fake_items = top_k(&column, f).into_iter().map(|i| (i as ItemId, column[i])).collect();
            }
        }
        FakeItemMode::PerItem => {
            let mut f = fake_count;
            if f > groups {
                out.warnings.push(format!("fake item count {f} exceeds group count {groups}; clamped"));
                f = groups;
            }
            for i in 0..num_items {
                let row = membership.row(num_users + i);
                for j in top_k(row, f) {
                    out.groups[j].fake_items.push((i as ItemId, row[j]));
                }
            }
            for group in &mut out.groups {
                group.fake_items.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
            }
        }
    }
    for w in &out.warnings {
        log::warn!("{w}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equidistant_point_splits_evenly() {
        let mut out = [0.0; 2];
        membership_row(&[4.0, 4.0], 2.0, &mut out);
        assert_eq!(out, [0.5, 0.5]);
    }

    #[test]
    fn distances_one_and_two_give_eighty_twenty() {
        let mut out = [0.0; 2];
        membership_row(&[1.0, 4.0], 2.0, &mut out);
        assert!((out[0] - 0.8).abs() < 1e-15 && (out[1] - 0.2).abs() < 1e-15);
    }

    #[test]
    fn coincident_point_is_one_hot() {
        let mut out = [0.0; 3];
        membership_row(&[1.0, 0.0, 0.0], 2.0, &mut out);
        assert_eq!(out, [0.0, 1.0, 0.0]);
    }

    #[test]
    fn one_hot_centroid_is_mean() {
        let pts: Vec<Embedding> = [[0.0, 0.0], [2.0, 0.0], [10.0, 10.0]].iter().map(|p| p.to_vec().into()).collect();
        let m = MembershipMatrix::from_rows(vec![vec![1.0, 0.0], vec![1.0, 0.0], vec![0.0, 1.0]]);
        let prev = vec![Embedding::zeros(2); 2];
        let c = update_centroids(&pts, &m, 2.0, &prev);
        assert_eq!(&c[0][..], &[1.0, 0.0]);
        assert_eq!(&c[1][..], &[10.0, 10.0]);
    }

    #[test]
    fn argmax_user_and_top1_item() {
        // one user, three items, two groups
        let m = MembershipMatrix::from_rows(vec![
            vec![0.1, 0.9],
            vec![0.8, 0.2],
            vec![0.3, 0.7],
            vec![0.9, 0.1],
        ]);
        let a = assign_groups(&m, 1, 1, FakeItemMode::PerGroup);
        assert_eq!(a.user_group, vec![1]);
        assert_eq!(a.groups[1].fake_ids(), vec![1]);
        assert_eq!(a.groups[0].fake_ids(), vec![2]);
    }

    #[test]
    fn fake_count_clamped_to_catalog() {
        let m = MembershipMatrix::from_rows(vec![vec![0.5, 0.5], vec![0.4, 0.6]]);
        let a = assign_groups(&m, 1, 5, FakeItemMode::PerGroup);
        assert_eq!(a.groups[0].fake_items.len(), 1);
        assert_eq!(a.warnings.len(), 1);
    }

    #[test]
    fn per_item_mode_lets_items_join_several_groups() {
        let m = MembershipMatrix::from_rows(vec![
            vec![0.6, 0.3, 0.1],
            vec![0.5, 0.4, 0.1],
            vec![0.2, 0.2, 0.6],
        ]);
        let a = assign_groups(&m, 1, 2, FakeItemMode::PerItem);
        // item 1 ties between groups 0 and 1 for its second slot
        assert_eq!(a.groups[0].fake_ids(), vec![0, 1]);
        assert_eq!(a.groups[1].fake_ids(), vec![0]);
        assert_eq!(a.groups[2].fake_ids(), vec![1]);
    }

    #[test]
    fn rejects_bad_arguments() {
        let pts: Vec<Embedding> = vec![vec![0.0].into(); 3];
        let mut rng = RngStream::new(0, "fcm");
        let cfg = FcmConfig {
            groups: 1,
            ..FcmConfig::default()
        };
        assert!(fcm_fit(&pts, &cfg, &mut rng).is_err());
        let cfg = FcmConfig {
            groups: 2,
            fuzziness: 1.0,
            ..FcmConfig::default()
        };
        assert!(fcm_fit(&pts, &cfg, &mut rng).is_err());
    }

    #[test]
    fn identical_points_collapse_to_group_zero() {
        let pts: Vec<Embedding> = vec![vec![0.5, 0.5].into(); 6];
        let mut rng = RngStream::new(3, "fcm");
        let cfg = FcmConfig {
            groups: 3,
            ..FcmConfig::default()
        };
        let fit = fcm_fit(&pts, &cfg, &mut rng).unwrap();
        let a = assign_groups(&fit.membership, 4, 1, FakeItemMode::PerGroup);
        assert_eq!(a.groups[0].users, vec![0, 1, 2, 3]);
    }
}
