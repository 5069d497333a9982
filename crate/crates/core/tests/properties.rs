use std::f64::consts::{PI, TAU};

use autolabel3d::eval::{bev_iou, iou_3d, yaw_error_deg};
use autolabel3d::fit::fit_direct;
use autolabel3d::geometry::{builtin_car_template, posed_box, wrap_pi, OrientedBox3D, Pose4DoF, TemplateMesh, Vec3};
use autolabel3d::kitti_io::KittiLabel;
use autolabel3d::losses::{half_chamfer, yaw_bin_search, YawBins};
use autolabel3d::model::{forward, ModelConfig, ModelParams};
use autolabel3d::synth::{observe, SynthConfig};
use autolabel3d::tracking::pseudo_centre;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn car() -> TemplateMesh {
    builtin_car_template(4.0, 1.6, 1.5).unwrap()
}

fn surface(mesh: &TemplateMesh, pose: &Pose4DoF, n: usize, seed: u64) -> Vec<Vec3> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| pose.apply(&mesh.sample_surface(&mut rng).0)).collect()
}

fn arb_box() -> impl Strategy<Value = OrientedBox3D> {
    (-10.0..10.0f64, 0.0..2.0f64, 5.0..30.0f64, 1.0..5.0f64, 1.0..2.5f64, 1.0..2.0f64, -PI..PI)
        .prop_map(|(x, y, z, l, w, h, yaw)| OrientedBox3D::new(Vec3::new(x, y, z), [l, w, h], yaw, 1.0).unwrap())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn pose_inverse_round_trip(yaw in -10.0..10.0f64, x in -20.0..20.0f64, z in 0.0..40.0f64, px in -5.0..5.0f64, pz in -5.0..5.0f64) {
        let pose = Pose4DoF::new(yaw, Vec3::new(x, 1.0, z));
        let p = Vec3::new(px, 0.3, pz);
        prop_assert!((pose.apply_inverse(&pose.apply(&p)) - p).norm() < 1e-9);
        let id = pose.compose(&pose.inverse());
        prop_assert!(id.translation().norm() < 1e-9);
        prop_assert!(wrap_pi(id.yaw()).abs() < 1e-9);
    }

    #[test]
    fn iou_symmetric_and_bounded(a in arb_box(), b in arb_box()) {
        let (ab, ba) = (bev_iou(&a, &b), bev_iou(&b, &a));
        prop_assert!((ab - ba).abs() < 1e-9);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert!((0.0..=1.0).contains(&iou_3d(&a, &b)));
        prop_assert!((bev_iou(&a, &a) - 1.0).abs() < 1e-9);
        prop_assert!((iou_3d(&a, &a) - 1.0).abs() < 1e-9);
    }

    #[test]
    fn half_turn_keeps_the_footprint(a in arb_box()) {
        let flipped = OrientedBox3D::new(a.centre(), a.dims, a.yaw + PI, 1.0).unwrap();
        prop_assert!((bev_iou(&a, &flipped) - 1.0).abs() < 1e-9);
        prop_assert!((yaw_error_deg(flipped.yaw, a.yaw) - 180.0).abs() < 1e-6);
    }

    #[test]
    fn label_round_trip(a in arb_box()) {
        let back = KittiLabel::from_box(&a, None, None).to_box().unwrap();
        prop_assert!((back.centre() - a.centre()).norm() < 1e-9);
        prop_assert!(wrap_pi(back.yaw - a.yaw).abs() < 1e-9);
        for k in 0..3 {
            prop_assert!((back.dims[k] - a.dims[k]).abs() < 1e-12);
        }
    }

    #[test]
    fn posed_box_is_centred_on_the_translation(yaw in -PI..PI, x in -10.0..10.0f64, z in 5.0..30.0f64) {
        let mesh = car();
        let pose = Pose4DoF::new(yaw, Vec3::new(x, 0.9, z));
        let b = posed_box(&pose, &mesh);
        prop_assert!((b.centre() - pose.translation()).norm() < 1e-9);
        prop_assert!(wrap_pi(b.yaw - yaw).abs() < 1e-9);
    }

    #[test]
    fn bin_search_returns_the_minimum(yaw in 0.0..TAU, seed in 0u64..1000) {
        let mesh = car();
        let pose = Pose4DoF::new(yaw, Vec3::new(1.0, 0.9, 15.0));
        let pts = surface(&mesh, &pose, 30, seed);
        let bins = YawBins::new(16).unwrap();
        let zeros = vec![0.0; pts.len()];
        let (best, value) = yaw_bin_search(&pose.translation(), &mesh, &pts, &zeros, &bins).unwrap();
        for k in 0..bins.len() {
            let v = half_chamfer(&Pose4DoF::new(bins.centre(k), pose.translation()), &mesh, &pts).unwrap();
            prop_assert!(value <= v + 1e-12);
            if k == best {
                prop_assert!((value - v).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn network_ignores_point_order(seed in 0u64..1000) {
        let model = ModelConfig { encoder_widths: vec![8, 16], head_hidden: 8, variance_hidden: 8, ..ModelConfig::default() };
        let params = ModelParams::init(&model, 16, seed).unwrap();
        let mesh = car();
        let pts = surface(&mesh, &Pose4DoF::new(0.3, Vec3::new(0.0, 0.9, 12.0)), 40, seed);
        let mut rev = pts.clone();
        rev.reverse();
        let (a, b) = (forward(&params, &pts).unwrap(), forward(&params, &rev).unwrap());
        prop_assert!((a.translation - b.translation).norm() < 1e-12);
        prop_assert_eq!(a.yaw_logits().unwrap(), b.yaw_logits().unwrap());
        let lv: Vec<f64> = b.log_var.as_slice().iter().rev().copied().collect();
        prop_assert_eq!(a.log_var.as_slice(), lv.as_slice());
        prop_assert_eq!(pseudo_centre(&pts).unwrap(), pseudo_centre(&rev).unwrap());
    }
}

#[test]
fn direct_fit_recovers_a_noiseless_pose() {
    let mesh = car();
    let bins = YawBins::new(64).unwrap();
    // on a bin centre the fit is exact; off it the yaw is quantized and the
    // translation absorbs part of the residual
    let cases = [(bins.centre(5), 0.05), (bins.centre(40), 0.05), (0.4, 0.15), (2.0, 0.15), (-2.7, 0.15)];
    for (k, (yaw, tol)) in cases.into_iter().enumerate() {
        let pose = Pose4DoF::new(yaw, Vec3::new(-3.0 + 2.0 * k as f64, 0.9, 10.0 + 4.0 * k as f64));
        let pts = surface(&mesh, &pose, 400, k as u64);
        let fit = fit_direct(&pts, &mesh, &bins, 20).unwrap();
        assert!(fit.iterations <= 40);
        assert!(
            yaw_error_deg(fit.pose.yaw(), yaw) <= 360.0 / 64.0,
            "yaw {} vs {}",
            fit.pose.yaw(),
            yaw
        );
        let err = (fit.pose.translation() - pose.translation()).norm();
        assert!(err <= tol, "translation error {err} at yaw {yaw}");
    }
}

#[test]
fn direct_fit_resolves_front_and_back_of_a_partial_view() {
    let config = SynthConfig {
        outlier_fraction: 0.0,
        ..SynthConfig::default()
    };
    let mesh = config.template().unwrap();
    let bins = YawBins::new(64).unwrap();
    // from the median start these all settle on the half-turned car
    for yaw_deg in [0.0f64, 30.0, 300.0] {
        let pose = Pose4DoF::new(yaw_deg.to_radians(), Vec3::new(2.0, 0.9, 15.0));
        let scan = observe(&mut ChaCha8Rng::seed_from_u64(1), &mesh, &pose, &config).unwrap();
        let fit = fit_direct(&scan.points, &mesh, &bins, 100).unwrap();
        assert!(yaw_error_deg(fit.pose.yaw(), pose.yaw()) <= 360.0 / 64.0, "{yaw_deg}: {:?}", fit.pose);
        assert!((fit.pose.translation() - pose.translation()).norm() < 0.1);
    }
}
