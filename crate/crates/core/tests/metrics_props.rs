//! Metric implementations against exhaustive O(n²) oracles.

use arch_core::metrics::{chamfer, cov_mmd_1nna, grid_to_points, novelty_histogram, tmd, uhd, PointSet};
use arch_core::voxcore::VoxelGrid;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

fn d2(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    (0..3).map(|i| (a[i] - b[i]).powi(2)).sum()
}

fn nn2(p: &[f64; 3], q: &[[f64; 3]]) -> f64 {
    q.iter().map(|x| d2(p, x)).fold(f64::INFINITY, f64::min)
}

fn oracle_cd(p: &[[f64; 3]], q: &[[f64; 3]]) -> f64 {
    p.iter().map(|a| nn2(a, q)).sum::<f64>() / p.len() as f64 + q.iter().map(|b| nn2(b, p)).sum::<f64>() / q.len() as f64
}

fn oracle_set(gen: &[Vec<[f64; 3]>], refs: &[Vec<[f64; 3]>]) -> (f64, f64, f64) {
    let mut covered = vec![false; refs.len()];
    for g in gen {
        let mut best = 0;
        for r in 1..refs.len() {
            if oracle_cd(g, &refs[r]) < oracle_cd(g, &refs[best]) {
                best = r;
            }
        }
        covered[best] = true;
    }
    let cov = covered.iter().filter(|c| **c).count() as f64 / refs.len() as f64;
    let mmd = refs.iter().map(|r| gen.iter().map(|g| oracle_cd(g, r)).fold(f64::INFINITY, f64::min)).sum::<f64>()
        / refs.len() as f64;
    let union: Vec<(&Vec<[f64; 3]>, bool)> = gen.iter().map(|g| (g, true)).chain(refs.iter().map(|r| (r, false))).collect();
    let mut correct = 0;
    for (i, (s, label)) in union.iter().enumerate() {
        let mut best: Option<(usize, f64)> = None;
        for (j, (t, _)) in union.iter().enumerate() {
            if i == j {
                continue;
            }
            let d = oracle_cd(s, t);
            if best.is_none_or(|(_, bd)| d < bd) {
                best = Some((j, d));
            }
        }
        if union[best.unwrap().0].1 == *label {
            correct += 1;
        }
    }
    (cov, mmd, correct as f64 / union.len() as f64)
}

fn cloud() -> impl Strategy<Value = Vec<[f64; 3]>> {
    prop::collection::vec(prop::array::uniform3(-0.5f64..0.5), 1..100)
}

fn sets(v: &[Vec<[f64; 3]>]) -> Vec<PointSet> {
    v.iter().cloned().map(PointSet::new).collect()
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= 1e-9
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn chamfer_matches_oracle_and_is_symmetric(p in cloud(), q in cloud()) {
        let (ps, qs) = (PointSet::new(p.clone()), PointSet::new(q.clone()));
        let cd = chamfer(&ps, &qs).unwrap();
        prop_assert!(close(cd, oracle_cd(&p, &q)));
        prop_assert_eq!(cd, chamfer(&qs, &ps).unwrap());
        prop_assert_eq!(chamfer(&ps, &ps).unwrap(), 0.0);
    }

    #[test]
    fn chamfer_zero_only_for_equal_sets(p in cloud(), extra in prop::array::uniform3(0.6f64..1.0)) {
        let mut q = p.clone();
        q.reverse();
        q.push(p[0]);
        prop_assert_eq!(chamfer(&PointSet::new(p.clone()), &PointSet::new(q)).unwrap(), 0.0);
        let mut r = p.clone();
        r.push(extra);
        prop_assert!(chamfer(&PointSet::new(p), &PointSet::new(r)).unwrap() > 1e-12);
    }

    #[test]
    fn set_metrics_match_oracle(gen in prop::collection::vec(cloud(), 1..5), refs in prop::collection::vec(cloud(), 1..5)) {
        let m = cov_mmd_1nna(&sets(&gen), &sets(&refs)).unwrap();
        let (cov, mmd, nna) = oracle_set(&gen, &refs);
        prop_assert!(close(m.cov, cov), "cov {} vs {}", m.cov, cov);
        prop_assert!(close(m.mmd, mmd));
        prop_assert!(close(m.one_nna, nna), "1-nna {} vs {}", m.one_nna, nna);
        prop_assert!((0.0..=1.0).contains(&m.cov) && (0.0..=1.0).contains(&m.one_nna) && m.mmd >= 0.0);
    }

    #[test]
    fn uhd_and_tmd_match_oracle(partial in cloud(), comps in prop::collection::vec(cloud(), 2..5)) {
        let expect_uhd = comps
            .iter()
            .map(|c| partial.iter().map(|p| nn2(p, c).sqrt()).fold(0.0, f64::max))
            .sum::<f64>()
            / comps.len() as f64;
        let got = uhd(&PointSet::new(partial.clone()), &sets(&comps)).unwrap();
        prop_assert!(close(got, expect_uhd));
        let k = comps.len();
        let expect_tmd: f64 = (0..k)
            .map(|i| (0..k).filter(|&j| j != i).map(|j| oracle_cd(&comps[i], &comps[j])).sum::<f64>() / (k - 1) as f64)
            .sum();
        prop_assert!(close(tmd(&sets(&comps)).unwrap(), expect_tmd));
        // Dropping partial points never raises UHD.
        let half = PointSet::new(partial[..partial.len().div_ceil(2)].to_vec());
        prop_assert!(uhd(&half, &sets(&comps)).unwrap() <= got);
    }
}

#[test]
fn separated_clusters_are_fully_distinguishable() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let n = Normal::new(0.0, 0.05).unwrap();
    let mut cluster = |c: f64| -> Vec<PointSet> {
        (0..8).map(|_| PointSet::new((0..30).map(|_| [c + n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)]).collect())).collect()
    };
    let gen = cluster(-2.0);
    let refs = cluster(2.0);
    let m = cov_mmd_1nna(&gen, &refs).unwrap();
    assert_eq!(m.one_nna, 1.0);
}

#[test]
fn identical_grids_give_degenerate_identity() {
    let grids: Vec<PointSet> = (0..5)
        .map(|k| grid_to_points(&VoxelGrid::from_fn(8, 0.75, [0.0; 3], |x, y, z| x + y + z < 3 + 2 * k)).unwrap())
        .collect();
    let m = cov_mmd_1nna(&grids, &grids.clone()).unwrap();
    assert_eq!((m.cov, m.mmd, m.one_nna), (1.0, 0.0, 0.0));
}

#[test]
fn novelty_on_training_subset() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let n = Normal::new(0.0, 0.2).unwrap();
    let train: Vec<PointSet> =
        (0..7).map(|_| PointSet::new((0..20).map(|_| [n.sample(&mut rng), n.sample(&mut rng), n.sample(&mut rng)]).collect())).collect();
    let r = novelty_histogram(&train[2..6], &train, 5, 10).unwrap();
    assert_eq!(r.rows.len(), 4);
    for row in &r.rows {
        assert_eq!(row.nearest[0].1, 0.0);
        assert_eq!(row.nearest.len(), 5);
        assert!(row.nearest.windows(2).all(|w| w[0].1 <= w[1].1));
    }
    assert_eq!(r.histogram[0].2, 4);
}
