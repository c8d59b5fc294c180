use proptest::prelude::*;
use semidfegl::cluster::{assign_groups, fcm_fit, membership_row, FakeItemMode, FcmConfig, MembershipMatrix};
use semidfegl::numeric::{Embedding, RngStream};

fn blobs(rng: &mut RngStream, n: usize, dim: usize, centers: usize) -> Vec<Embedding> {
    (0..n)
        .map(|i| {
            let c = (i % centers) as f64 * 3.0;
            Embedding::from_vec((0..dim).map(|_| c + rng.standard_normal()).collect())
        })
        .collect()
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn objective_never_increases(seed in any::<u64>(), n in 10usize..200, groups in 2usize..10, dim in 1usize..6) {
        let mut rng = RngStream::new(seed, "fcm");
        let points = blobs(&mut rng, n, dim, 3);
        let cfg = FcmConfig { groups, fuzziness: 2.0, max_iters: 60, tol: 1e-9 };
        let fit = fcm_fit(&points, &cfg, &mut rng).unwrap();
        for w in fit.objective_history.windows(2) {
            prop_assert!(w[1] <= w[0] + 1e-7, "{} -> {}", w[0], w[1]);
        }
        for i in 0..n {
            let s: f64 = fit.membership.row(i).iter().sum();
            prop_assert!((s - 1.0).abs() < 1e-9);
        }
    }

    #[test]
    fn membership_row_is_inverse_distance_ratio(d in prop::collection::vec(0.01f64..50.0, 2..8)) {
        let mut out = vec![0.0; d.len()];
        membership_row(&d, 2.0, &mut out);
        // with l = 2, u_j = (1/d_j) / sum_c (1/d_c)
        let inv: f64 = d.iter().map(|x| 1.0 / x).sum();
        for (u, x) in out.iter().zip(&d) {
            prop_assert!((u - (1.0 / x) / inv).abs() < 1e-12);
        }
    }
}

#[test]
fn coincident_point_gets_one_hot_row() {
    let mut out = vec![0.0; 3];
    membership_row(&[4.0, 0.0, 0.0], 2.0, &mut out);
    assert_eq!(out, vec![0.0, 1.0, 0.0]);
}

#[test]
fn separated_blobs_are_recovered() {
    let mut rng = RngStream::new(3, "fcm");
    let points: Vec<Embedding> = (0..60)
        .map(|i| {
            let c = (i % 3) as f64 * 20.0;
            Embedding::from_vec(vec![c + rng.standard_normal() * 0.1, rng.standard_normal() * 0.1])
        })
        .collect();
    let fit = fcm_fit(&points, &FcmConfig { groups: 3, ..FcmConfig::default() }, &mut rng).unwrap();
    let asg = assign_groups(&fit.membership, 60, 0, FakeItemMode::PerGroup);
    for i in 0..60 {
        assert_eq!(asg.user_group[i], asg.user_group[i % 3]);
    }
    let mut distinct = asg.user_group[..3].to_vec();
    distinct.sort();
    distinct.dedup();
    assert_eq!(distinct.len(), 3);
}

#[test]
fn ties_break_to_lowest_index() {
    // two users and three items over two groups
    let m = MembershipMatrix::from_rows(vec![
        vec![0.5, 0.5],
        vec![0.2, 0.8],
        vec![0.6, 0.4],
        vec![0.6, 0.4],
        vec![0.1, 0.9],
    ]);
    let asg = assign_groups(&m, 2, 1, FakeItemMode::PerGroup);
    assert_eq!(asg.user_group, vec![0, 1]);
    assert_eq!(asg.groups[0].fake_ids(), vec![0]);
    assert_eq!(asg.groups[1].fake_ids(), vec![2]);
}

#[test]
fn oversized_fake_count_is_clamped_with_warning() {
    let m = MembershipMatrix::from_rows(vec![vec![0.7, 0.3], vec![0.5, 0.5], vec![0.1, 0.9]]);
    let asg = assign_groups(&m, 1, 5, FakeItemMode::PerGroup);
    assert_eq!(asg.groups[0].fake_items.len(), 2);
    assert!(!asg.warnings.is_empty());
}

#[test]
fn too_few_points_is_an_error() {
    let points = vec![Embedding::zeros(2); 3];
    let mut rng = RngStream::new(0, "fcm");
    assert!(fcm_fit(&points, &FcmConfig { groups: 4, ..FcmConfig::default() }, &mut rng).is_err());
}
