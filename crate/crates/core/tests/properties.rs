use ibmvs::cloud::{read_ply_from, write_ply_to, Point, PointCloud};
use ibmvs::decision::SoftMask;
use ibmvs::engine::{init_hypothesis, step_size, update_hypothesis};
use ibmvs::fusion::{binary_entropy, fuse_hypotheses, naive_fuse};
use ibmvs::geometry::{intrinsics, InverseDepthInterval};
use ibmvs::io::{read_camera, write_camera};
use ibmvs::metrics::{bce, cloud_accuracy_completeness, f_score, MetricMode};
use ibmvs::{Camera, Grid};
use nalgebra::{Rotation3, Vector3};
use proptest::prelude::*;

fn interval() -> impl Strategy<Value = InverseDepthInterval> {
    (0.05f64..5.0, 1.0f64..200.0).prop_map(|(d, r)| InverseDepthInterval::new(d, d * r).unwrap())
}

proptest! {
    #[test]
    fn hypotheses_stay_inside_the_interval(iv in interval(), masks in prop::collection::vec(prop::collection::vec(0.0f64..=1.0, 6), 1..20)) {
        let mut h = init_hypothesis(iv, 3, 2).unwrap();
        let (lo, hi) = iv.bounds();
        for m in masks {
            h = update_hypothesis(&h, &SoftMask::dense(Grid::from_vec(3, 2, m).unwrap()).unwrap()).unwrap();
            prop_assert!(h.values().data().iter().all(|v| *v >= lo && *v <= hi));
        }
    }

    #[test]
    fn hard_decisions_bisect(iv in interval(), target in 0.0f64..1.0, t in 1usize..30) {
        let (lo, hi) = iv.bounds();
        let goal = lo + (hi - lo) * target;
        let mut h = init_hypothesis(iv, 1, 1).unwrap();
        for _ in 0..t {
            let b = if goal > h.values().data()[0] { 1.0 } else { 0.0 };
            h = update_hypothesis(&h, &SoftMask::dense(Grid::filled(1, 1, b)).unwrap()).unwrap();
        }
        prop_assert!((h.values().data()[0] - goal).abs() <= iv.half_width().abs() / 2f64.powi(t as i32) + 1e-12);
    }

    #[test]
    fn step_sizes_sum_to_the_half_width(r in -10.0f64..-1e-3) {
        let total: f64 = (0..60).map(|t| step_size(t, r).abs()).sum();
        prop_assert!((total - r.abs()).abs() <= 1e-12 * r.abs());
    }

    #[test]
    fn fusion_is_a_convex_combination(values in prop::collection::vec((0.1f64..3.0, -30.0f64..30.0), 1..8)) {
        let hyps: Vec<Grid<f64>> = values.iter().map(|(h, _)| Grid::filled(1, 1, *h)).collect();
        let weights: Vec<Grid<f64>> = values.iter().map(|(_, w)| Grid::filled(1, 1, w.exp())).collect();
        let refs: Vec<&Grid<f64>> = weights.iter().collect();
        let fused = fuse_hypotheses(&hyps, &refs).unwrap().data()[0];
        let lo = values.iter().map(|v| v.0).fold(f64::INFINITY, f64::min);
        let hi = values.iter().map(|v| v.0).fold(f64::NEG_INFINITY, f64::max);
        prop_assert!(fused >= lo && fused <= hi);
        let naive = naive_fuse(&hyps).unwrap().data()[0];
        prop_assert!(naive >= lo && naive <= hi);
    }

    #[test]
    fn entropy_and_bce_ranges(b in 0.0f64..=1.0, g in 0.0f64..=1.0) {
        let e = binary_entropy(b);
        prop_assert!((0.0..=std::f64::consts::LN_2 + 1e-15).contains(&e));
        prop_assert!(bce(b, g) >= 0.0);
        prop_assert!((binary_entropy(1.0 - b) - e).abs() < 1e-12);
    }

    #[test]
    fn f_score_between_its_inputs(a in 0.0f64..=100.0, c in 0.0f64..=100.0) {
        let f = f_score(a, c);
        prop_assert!(f >= a.min(c) - 1e-9 && f <= a.max(c) + 1e-9);
    }

    #[test]
    fn cloud_metrics_swap_symmetry(
        a in prop::collection::vec([-1.0f32..1.0, -1.0f32..1.0, -1.0f32..1.0], 1..60),
        b in prop::collection::vec([-1.0f32..1.0, -1.0f32..1.0, -1.0f32..1.0], 1..60),
        tau in 0.01f64..0.5,
    ) {
        let (pa, pb) = (PointCloud::from_positions(a), PointCloud::from_positions(b));
        for mode in [MetricMode::Percentage, MetricMode::Distance] {
            let ab = cloud_accuracy_completeness(&pa, &pb, tau, mode).unwrap();
            let ba = cloud_accuracy_completeness(&pb, &pa, tau, mode).unwrap();
            prop_assert_eq!(ab.accuracy, Some(ba.completeness));
            prop_assert_eq!(Some(ab.completeness), ba.accuracy);
        }
    }

    #[test]
    fn ply_round_trip(points in prop::collection::vec(([-1e3f32..1e3, -1e3f32..1e3, -1e3f32..1e3], any::<[u8; 3]>()), 0..50)) {
        let cloud = PointCloud {
            points: points.into_iter().map(|(position, color)| Point { position, color }).collect(),
        };
        let mut buf = Vec::new();
        write_ply_to(&cloud, &mut buf).unwrap();
        prop_assert_eq!(read_ply_from(buf.as_slice()).unwrap(), cloud);
    }

    #[test]
    fn camera_text_round_trip(
        angles in [-3.0f64..3.0, -1.5f64..1.5, -3.0f64..3.0],
        t in [-10.0f64..10.0, -10.0f64..10.0, -10.0f64..10.0],
        f in 10.0f64..2000.0,
    ) {
        let r = Rotation3::from_euler_angles(angles[0], angles[1], angles[2]).into_inner();
        let cam = Camera::new(intrinsics(f, f * 1.01, 40.5, 30.25), r, Vector3::from(t), 80, 60).unwrap();
        let mut buf = Vec::new();
        write_camera(&cam, &mut buf).unwrap();
        let back = read_camera(buf.as_slice()).unwrap();
        prop_assert_eq!(back.rt(), cam.rt());
        prop_assert_eq!(back.k(), cam.k());
    }
}
