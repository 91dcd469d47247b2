use std::f64::consts::PI;

use proptest::prelude::*;

use knoll::eval::l1_error;
use knoll::geom::{validate_scenario, yaw_distance_mod_pi, ObjectSpec, Pose2D, ScenarioRecord, Workspace};
use knoll::gmm::GmmParams;
use knoll::laygen::{
    apply_ordering, bounding_square_area, decode_record, encode_record, legalize, min_pairwise_gap, optimize_layout,
    pack_rows, AnnealConfig, Legalized, OrderingRule, PackConfig,
};
use knoll::percept::{canonical_pose, keypoints_from_pose, pose_from_keypoints, KeypointQuad};

fn object() -> impl Strategy<Value = ObjectSpec<f64>> {
    (0.01f64..=0.05, 0.01f64..=0.05).prop_map(|(w, l)| ObjectSpec::new(w, l).unwrap())
}

fn objects(max: usize) -> impl Strategy<Value = Vec<ObjectSpec<f64>>> {
    prop::collection::vec(object(), 1..=max)
}

/// Smallest bounding square over every split of `n` equal squares into rows.
fn row_partition_optimum(n: usize, side: f64, gap: f64) -> f64 {
    fn walk(left: usize, widest: usize, rows: usize, side: f64, gap: f64, best: &mut f64) {
        if left == 0 {
            let w = widest as f64 * side + (widest - 1) as f64 * gap;
            let h = rows as f64 * side + (rows - 1) as f64 * gap;
            *best = best.min(w.max(h).powi(2));
            return;
        }
        for take in 1..=left {
            walk(left - take, widest.max(take), rows + 1, side, gap, best);
        }
    }
    let mut best = f64::INFINITY;
    walk(n, 0, 0, side, gap, &mut best);
    best
}

proptest! {
    #[test]
    fn record_text_roundtrip(objs in objects(10), seed in any::<u64>()) {
        let targets: Vec<[f64; 2]> = objs
            .iter()
            .enumerate()
            .map(|(i, _)| {
                let a = (seed.wrapping_mul(i as u64 + 1) % 1_000_003) as f64 / 1_000_003.0;
                [0.3 * a, 0.3 * (1.0 - a) / 3.0]
            })
            .collect();
        let r = ScenarioRecord::new(objs, targets);
        prop_assert_eq!(decode_record(&encode_record(&r)).unwrap(), r);
    }

    #[test]
    fn row_packing_is_valid_and_spaced(objs in objects(10)) {
        let pack = PackConfig::default();
        let layout = pack_rows(&objs, &pack).unwrap();
        let record = ScenarioRecord::from_layout(&layout);
        prop_assert!(validate_scenario(&record, &Workspace::default()).is_ok());
        prop_assert!(min_pairwise_gap(&layout) >= pack.gap - 1e-9);
        prop_assert_eq!(layout.specs(), objs);
    }

    #[test]
    fn orderings_are_sorted_permutations(objs in objects(10)) {
        for (rule, key) in [
            (OrderingRule::AreaDescending, (|o: &ObjectSpec<f64>| -o.area()) as fn(&ObjectSpec<f64>) -> f64),
            (OrderingRule::AreaAscending, |o: &ObjectSpec<f64>| o.area()),
            (OrderingRule::AspectDescending, |o: &ObjectSpec<f64>| -o.aspect_ratio()),
        ] {
            let (sorted, perm) = apply_ordering(&objs, rule);
            let mut seen = perm.clone();
            seen.sort_unstable();
            prop_assert_eq!(seen, (0..objs.len()).collect::<Vec<_>>());
            for (s, &p) in sorted.iter().zip(&perm) {
                prop_assert_eq!(*s, objs[p]);
            }
            prop_assert!(sorted.windows(2).all(|w| key(&w[0]) <= key(&w[1])));
        }
        let (same, perm) = apply_ordering(&objs, OrderingRule::AsGiven);
        prop_assert_eq!(same, objs.clone());
        prop_assert_eq!(perm, (0..objs.len()).collect::<Vec<_>>());
    }

    #[test]
    fn equal_squares_reach_row_partition_optimum(n in 1usize..=4, mm in 10u32..=50, seed in any::<u64>()) {
        let side = mm as f64 * 1e-3;
        let objs = vec![ObjectSpec::new(side, side).unwrap(); n];
        let pack = PackConfig::default();
        let cfg = AnnealConfig { iterations: 2_000, seed, ..AnnealConfig::default() };
        let layout = optimize_layout(&objs, &cfg, &pack).unwrap();
        let area = bounding_square_area(&layout).unwrap();
        prop_assert!((area - row_partition_optimum(n, side, pack.gap)).abs() < 1e-12);
    }

    #[test]
    fn legalized_targets_always_validate(objs in objects(10), raw in prop::collection::vec((-0.05f64..0.35, -0.05f64..0.35), 10)) {
        let predicted: Vec<[f64; 2]> = raw[..objs.len()].iter().map(|&(x, y)| [x, y]).collect();
        let ws = Workspace::default();
        let (targets, how) = legalize(&objs, &predicted, &PackConfig::default(), &ws).unwrap();
        prop_assert!(validate_scenario(&ScenarioRecord::new(objs.clone(), targets.clone()), &ws).is_ok());
        if how == Legalized::AsPredicted {
            prop_assert_eq!(targets, predicted);
        }
    }

    #[test]
    fn valid_prediction_is_kept(objs in objects(10)) {
        let layout = pack_rows(&objs, &PackConfig::default()).unwrap();
        let centers = layout.centers();
        let (targets, how) = legalize(&objs, &centers, &PackConfig::default(), &Workspace::default()).unwrap();
        prop_assert_eq!(how, Legalized::AsPredicted);
        prop_assert_eq!(targets, centers);
    }

    #[test]
    fn keypoint_roundtrip(spec in object(), x in -1.0f64..1.0, y in -1.0f64..1.0, yaw in -PI..PI) {
        let pose = Pose2D::new(x, y, yaw);
        let q = keypoints_from_pose(&pose, &spec, 0.0, 0).unwrap();
        let (p, s) = pose_from_keypoints(&q).unwrap();
        let (cp, cs) = canonical_pose(&pose, &spec);
        prop_assert!((p.x - x).abs() < 1e-9 && (p.y - y).abs() < 1e-9);
        prop_assert!((s.width - cs.width).abs() < 1e-9 && (s.length - cs.length).abs() < 1e-9);
        prop_assert!(s.width >= s.length);
        if (spec.width - spec.length).abs() > 1e-6 {
            prop_assert!(yaw_distance_mod_pi(p.yaw, cp.yaw) < 1e-9);
        }
    }

    #[test]
    fn keypoint_order_does_not_matter(spec in object(), yaw in -PI..PI, perm in Just((0..4).collect::<Vec<usize>>()).prop_shuffle()) {
        let q = keypoints_from_pose(&Pose2D::new(0.1, 0.2, yaw), &spec, 0.0, 0).unwrap();
        let shuffled = KeypointQuad::new([q.points[perm[0]], q.points[perm[1]], q.points[perm[2]], q.points[perm[3]]]);
        prop_assert_eq!(pose_from_keypoints(&q).unwrap(), pose_from_keypoints(&shuffled).unwrap());
    }

    #[test]
    fn dimensions_survive_rigid_motion(spec in object(), dx in -0.5f64..0.5, dy in -0.5f64..0.5, turn in -PI..PI) {
        let base = keypoints_from_pose(&Pose2D::new(0.1, 0.1, 0.3), &spec, 0.0, 0).unwrap();
        let (c, s) = (turn.cos(), turn.sin());
        let moved = KeypointQuad::new(base.points.map(|[x, y]| [c * x - s * y + dx, s * x + c * y + dy]));
        let (_, a) = pose_from_keypoints(&base).unwrap();
        let (_, b) = pose_from_keypoints(&moved).unwrap();
        prop_assert!((a.width - b.width).abs() < 1e-9 && (a.length - b.length).abs() < 1e-9);
    }

    #[test]
    fn small_keypoint_noise_gives_small_error(spec in object(), yaw in -PI..PI, seed in any::<u64>()) {
        let pose = Pose2D::new(0.15, 0.15, yaw);
        let q = keypoints_from_pose(&pose, &spec, 1e-5, seed).unwrap();
        let (p, s) = pose_from_keypoints(&q).unwrap();
        let (_, cs) = canonical_pose(&pose, &spec);
        prop_assert!((p.x - 0.15).abs() < 1e-4 && (p.y - 0.15).abs() < 1e-4);
        prop_assert!((s.width - cs.width).abs() < 2e-4 && (s.length - cs.length).abs() < 2e-4);
    }

    #[test]
    fn l1_is_a_mean_absolute_metric(
        pts in prop::collection::vec((-1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0, -1.0f64..1.0), 1..10),
        shift in (-1.0f64..1.0, -1.0f64..1.0),
    ) {
        let a: Vec<[f64; 2]> = pts.iter().map(|p| [p.0, p.1]).collect();
        let b: Vec<[f64; 2]> = pts.iter().map(|p| [p.2, p.3]).collect();
        let c: Vec<[f64; 2]> = pts.iter().map(|p| [p.4, p.5]).collect();
        let d = |x: &[[f64; 2]], y: &[[f64; 2]]| l1_error(x, y).unwrap();
        prop_assert_eq!(d(&a, &a), 0.0);
        prop_assert!((d(&a, &b) - d(&b, &a)).abs() < 1e-15);
        prop_assert!(d(&a, &c) <= d(&a, &b) + d(&b, &c) + 1e-12);
        let mv = |x: &[[f64; 2]]| x.iter().map(|p| [p[0] + shift.0, p[1] + shift.1]).collect::<Vec<_>>();
        prop_assert!((d(&mv(&a), &mv(&b)) - d(&a, &b)).abs() < 1e-12);
        let k = 2 * a.len();
        let total: f64 = a.iter().zip(&b).map(|(p, q)| (p[0] - q[0]).abs() + (p[1] - q[1]).abs()).sum();
        prop_assert!((d(&a, &b) * k as f64 - total).abs() < 1e-12);
    }

    #[test]
    fn raw_rows_decode_to_valid_mixtures(row in prop::collection::vec(-60.0f64..60.0, 25)) {
        let g = GmmParams::from_raw(&row, 5, 0.3);
        let sum: f64 = g.weights.iter().sum();
        prop_assert!((sum - 1.0).abs() < 1e-6);
        prop_assert!(g.weights.iter().all(|w| *w >= 0.0 && w.is_finite()));
        prop_assert!(g.stds.iter().flatten().all(|s| *s > 0.0 && s.is_finite()));
    }
}

#[test]
fn row_partition_oracle_examples() {
    // one square; two side by side; 2x2 grid
    assert!((row_partition_optimum(1, 0.02, 0.005) - 0.0004).abs() < 1e-15);
    assert!((row_partition_optimum(2, 0.02, 0.005) - 0.045f64.powi(2)).abs() < 1e-15);
    assert!((row_partition_optimum(4, 0.02, 0.005) - 0.045f64.powi(2)).abs() < 1e-15);
    assert!((row_partition_optimum(3, 0.02, 0.005) - 0.045f64.powi(2)).abs() < 1e-15);
}
