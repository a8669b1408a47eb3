use arch_core::dataprep::*;
use arch_core::voxcore::{clean_up, VoxelGrid, DEFAULT_CLEAN_ITERATIONS};
use proptest::prelude::*;

/// Maximal runs of z layers that are nearly as full as the fullest layer.
fn slab_runs(g: &VoxelGrid) -> usize {
    let r = g.resolution();
    let counts: Vec<usize> = (0..r).map(|z| (0..r).flat_map(|y| (0..r).map(move |x| (x, y))).filter(|&(x, y)| g.get(x, y, z)).count()).collect();
    let max = *counts.iter().max().unwrap();
    let full: Vec<bool> = counts.iter().map(|&c| c as f64 >= 0.9 * max as f64).collect();
    full.windows(2).filter(|w| w[1] && !w[0]).count() + full[0] as usize
}

use arch_core::voxcore::Volume;

#[test]
fn synthetic_houses_meet_their_contract() {
    for r in [32, 64] {
        let houses: Vec<VoxelGrid> = (0..24).map(|s| synth_house(s, r).grid).collect();
        for (seed, g) in houses.iter().enumerate() {
            assert_eq!(&clean_up(g, DEFAULT_CLEAN_ITERATIONS), g, "seed {seed} R {r} is not a clean-up fixpoint");
            let f = g.fraction();
            assert!((0.02..=0.35).contains(&f), "seed {seed} R {r} fraction {f}");
            assert!(slab_runs(g) >= 2, "seed {seed} R {r} slabs");
            assert_eq!(g.voxel_size(), 0.75);
        }
        for i in 0..houses.len() {
            for j in 0..i {
                assert!(houses[i].iou(&houses[j]) < 0.9, "seeds {i} and {j} too similar at R {r}");
            }
        }
        assert_eq!(synth_house(3, r), synth_house(3, r));
    }
}

#[test]
fn chunk_hierarchy_is_consistent_on_houses() {
    for seed in 0..3 {
        let house = synth_house(seed, 32);
        let mesh = filter_parts(&house.mesh);
        let pts = poisson_sample_surface(&mesh, 12, seed).unwrap();
        for set in crop_chunks(&mesh, &pts.points) {
            if set.grids[3].is_empty() {
                continue;
            }
            let iou = set.hierarchy_iou();
            assert!(iou >= 0.5, "seed {seed} chunk at {:?}: IoU {iou}", set.center);
        }
    }
}

#[test]
fn obj_survives_text_round_trip_and_filtering() {
    let house = synth_house(5, 32);
    let parsed = parse_obj(&house.mesh.to_obj()).unwrap();
    assert_eq!(parsed, house.mesh);
    let kept = filter_parts(&parsed);
    assert!(kept.triangles.iter().all(|t| !matches!(t.label, PartLabel::Door | PartLabel::Window | PartLabel::Ground)));
    let origin = grid_origin(32, 0.75);
    let g = voxelize(&kept, 32, Cube { min: origin, edge: 24.0 }).grid;
    assert_eq!(g.occupancy(), house.grid.occupancy());
}

#[test]
fn corpus_manifest_matches_files() {
    let dir = tempfile::tempdir().unwrap();
    let opts = PrepOptions { models: 4, chunks_per_model: 3, holdout_fraction: 0.25, ..Default::default() };
    let m = prepare_corpus(dir.path(), &opts).unwrap();
    assert_eq!(DatasetManifest::load(dir.path()).unwrap(), m);
    assert_eq!(m.models.len(), 4);
    assert_eq!(m.load_grids(dir.path(), Split::Train).unwrap().len(), 2);
    assert_eq!(m.load_chunks(dir.path(), Split::Train).unwrap().len(), 6);
    assert!(m.split(Split::Val).count() == 1 && m.split(Split::Test).count() == 1);
}

fn random_box() -> impl Strategy<Value = (Point, Point)> {
    (prop::array::uniform3(0.0f64..7.0), prop::array::uniform3(0.2f64..3.0))
        .prop_map(|(lo, size)| (lo, [lo[0] + size[0], lo[1] + size[1], lo[2] + size[2]]))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(48))]

    #[test]
    fn voxelize_is_monotone(boxes in prop::collection::vec(random_box(), 1..5), extra in random_box(), open in any::<bool>()) {
        let mut m = HouseMesh::default();
        for (i, (lo, hi)) in boxes.iter().enumerate() {
            m.add_box(format!("wall_{i}"), PartLabel::Wall, *lo, *hi);
        }
        let bounds = Cube { min: [0.5; 3], edge: 8.0 };
        let before = voxelize(&m, 16, bounds).grid;
        let mut more = m.clone();
        if open {
            more.add_object("other_x", PartLabel::Other, &box_triangles(extra.0, extra.1)[..7]);
        } else {
            more.add_box("other_x", PartLabel::Other, extra.0, extra.1);
        }
        let after = voxelize(&more, 16, bounds).grid;
        prop_assert!(before.is_subset_of(&after));
    }

    #[test]
    fn filter_is_idempotent(labels in prop::collection::vec(0usize..9, 0..40)) {
        let mut m = HouseMesh::default();
        for (i, l) in labels.iter().enumerate() {
            let z = i as f64;
            m.add_object(format!("p{i}"), PartLabel::ALL[*l], &[[[0.0, 0.0, z], [1.0, 0.0, z], [0.0, 1.0, z]]]);
        }
        let once = filter_parts(&m);
        prop_assert_eq!(filter_parts(&once), once.clone());
        prop_assert_eq!(once.triangles.len(), labels.iter().filter(|&&l| l < 5 || l == 8).count());
    }

    #[test]
    fn poisson_radius_holds(seed in any::<u64>(), n in 1usize..40) {
        let mut m = HouseMesh::default();
        m.add_box("wall", PartLabel::Wall, [0.0; 3], [3.0, 1.0, 2.0]);
        let s = poisson_sample_surface(&m, n, seed).unwrap();
        prop_assert_eq!(s.points.len(), n);
        for i in 0..n {
            for j in 0..i {
                let p = s.points[i];
                let q = s.points[j];
                let d = ((p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2) + (p[2] - q[2]).powi(2)).sqrt();
                prop_assert!(d >= s.radius);
            }
        }
    }
}
