use nalgebra::DVector;
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use se3_gic::control::{action_to_gains, Action, ErrorKind, ImpedanceGains};
use se3_gic::dynamics::{mass_matrix, ManipulatorModel};
use se3_gic::environment::{
    contact_wrench, episode_rng, make_scene, peg_samples, reward_terms, sample_initial_pose, success, ContactParams,
    InitRanges, SceneCase, SimState, START_OFFSET,
};
use se3_gic::liegroup::{
    adjoint, compose, distance, elastic_wrench, exp_se3, exp_so3, gcev, inverse, log_se3, velocity_error,
    wrench_body_to_spatial, Frame, Pose, Rotation, Twist, Vec3, Vec6, Wrench,
};
use se3_gic::policy::{Mlp, MlpPolicy};

const TOL: f64 = 1e-9;

fn vec3(r: f64) -> impl Strategy<Value = Vec3> {
    (-r..r, -r..r, -r..r).prop_map(|(a, b, c)| Vec3::new(a, b, c))
}

fn vec6(r: f64) -> impl Strategy<Value = Vec6> {
    (vec3(r), vec3(r)).prop_map(|(a, b)| Vec6::new(a.x, a.y, a.z, b.x, b.y, b.z))
}

fn pose() -> impl Strategy<Value = Pose> {
    any::<u64>().prop_map(|s| Pose::random(&mut ChaCha8Rng::seed_from_u64(s), 2.0))
}

fn gains() -> impl Strategy<Value = ImpedanceGains> {
    vec6(1.0).prop_map(|a| action_to_gains(&Action::new(a)))
}

fn state_at(g: Pose, f_ext: Wrench) -> SimState {
    SimState { joints: None, ee_pose: g, ee_twist: Twist::zero(Frame::Body), f_ext, t: 0.0 }
}

fn case() -> impl Strategy<Value = SceneCase> {
    prop::sample::select(SceneCase::ALL.to_vec())
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(512))]

    #[test]
    fn compositions_stay_on_the_group(a in pose(), b in pose()) {
        let g = compose(&a, &b);
        prop_assert!(g.rot.orthonormality_error() < TOL);
        prop_assert!((g.rot.matrix().determinant() - 1.0).abs() < TOL);
        let e = compose(&inverse(&g), &g);
        prop_assert!((e.matrix() - Pose::identity().matrix()).amax() < TOL);
    }

    #[test]
    fn exp_log_round_trip(v in vec3(2.0), axis in vec3(1.0), angle in 0.0..3.1f64) {
        prop_assume!(axis.norm() > 1e-3);
        let xi = Twist::body(v, axis.normalize() * angle);
        let back = log_se3(&exp_se3(&xi, 1.0)).unwrap();
        prop_assert!((back.to_vector() - xi.to_vector()).amax() < 1e-8);
    }

    #[test]
    fn adjoint_is_a_homomorphism(a in pose(), b in pose()) {
        let lhs = adjoint(&compose(&a, &b));
        let rhs = adjoint(&a) * adjoint(&b);
        prop_assert!((lhs - rhs).amax() < TOL * 10.0);
    }

    #[test]
    fn left_invariance(g in pose(), g_d in pose(), g_l in pose(), k in gains(),
                       v in vec6(1.0), v_d in vec6(1.0)) {
        let (lg, lgd) = (compose(&g_l, &g), compose(&g_l, &g_d));
        prop_assert!((gcev(&lg, &lgd) - gcev(&g, &g_d)).amax() < TOL);
        let scale = 1.0 + k.to_vector().amax();
        let w = (elastic_wrench(&lg, &lgd, &k).to_vector() - elastic_wrench(&g, &g_d, &k).to_vector()).amax();
        prop_assert!(w < TOL * scale);
        prop_assert!((distance(&lg, &lgd) - distance(&g, &g_d)).abs() < TOL);
        let vb = Twist::from_vector(&v, Frame::Body);
        let vdb = Twist::from_vector(&v_d, Frame::Body);
        let ev = velocity_error(&lg, &lgd, &vb, &vdb).unwrap().to_vector()
            - velocity_error(&g, &g_d, &vb, &vdb).unwrap().to_vector();
        prop_assert!(ev.amax() < TOL);
    }

    #[test]
    fn goal_randomization_identity(g in pose(), g_d in pose(), g_l in pose(), k in gains()) {
        let a = elastic_wrench(&g, &compose(&g_l, &g_d), &k).to_vector();
        let b = elastic_wrench(&compose(&inverse(&g_l), &g), &g_d, &k).to_vector();
        prop_assert!((a - b).amax() < TOL * (1.0 + k.to_vector().amax()));
    }

    #[test]
    fn spatial_feedback_is_equivariant(g in pose(), g_d in pose(), g_l in pose(), k in gains()) {
        let lg = compose(&g_l, &g);
        let moved = wrench_body_to_spatial(&lg, &elastic_wrench(&lg, &compose(&g_l, &g_d), &k)).unwrap();
        let base = wrench_body_to_spatial(&g, &elastic_wrench(&g, &g_d, &k)).unwrap();
        let expected = adjoint(&inverse(&g_l)).transpose() * base.to_vector();
        prop_assert!((moved.to_vector() - expected).amax() < TOL * (1.0 + k.to_vector().amax()));
    }

    #[test]
    fn distance_vanishes_with_the_error(g in pose(), w in vec3(1.0), p in vec3(0.5), zero in any::<bool>()) {
        let offset = if zero { Pose::identity() } else { Pose::new(exp_so3(&w), p) };
        let g_d = compose(&g, &offset);
        let d = distance(&g, &g_d);
        let e = gcev(&g, &g_d).norm();
        prop_assert!(d >= -TOL);
        if zero {
            prop_assert!(d.abs() < TOL && e < TOL);
        } else {
            prop_assume!(w.norm() > 1e-3 || p.norm() > 1e-3);
            prop_assert!(d > 0.0 && e > 0.0);
        }
    }

    #[test]
    fn small_angle_rotation_error(axis in vec3(1.0), angle in 1e-7..1e-3f64) {
        prop_assume!(axis.norm() > 1e-3);
        let w = axis.normalize() * angle;
        let g = Pose::from_rotation(exp_so3(&w));
        let e_r = gcev(&g, &Pose::identity()).fixed_rows::<3>(3).into_owned();
        let expected = 2.0 * g.rot.log().unwrap();
        prop_assert!((e_r - expected).norm() <= 1e-6 * expected.norm());
    }

    #[test]
    fn actions_are_clamped(raw in vec6(5.0), nan_at in 0usize..7) {
        let mut x = raw;
        if nan_at < 6 {
            x[nan_at] = f64::NAN;
        }
        let a = Action::new(x);
        for i in 0..6 {
            let v = a.as_vector()[i];
            prop_assert!((-1.0..=1.0).contains(&v));
            if i == nan_at {
                prop_assert_eq!(v, 0.0);
            } else {
                prop_assert_eq!(v, raw[i].clamp(-1.0, 1.0));
            }
        }
    }

    #[test]
    fn gain_mapping_is_monotone_and_bounded(a in vec6(1.0), step in vec6(1.0)) {
        let lo = Action::new(a);
        let hi = Action::new(a + step.abs());
        let (g_lo, g_hi) = (action_to_gains(&lo).to_vector(), action_to_gains(&hi).to_vector());
        let slack = 1.0 + 1e-12;
        for i in 0..6 {
            prop_assert!(g_lo[i] <= g_hi[i]);
            let (min, max) = match i {
                0 | 1 => (10f64.powf(1.5), 10f64.powf(3.5)),
                2 => (10f64.powf(0.5), 10f64.powf(3.5)),
                _ => (10f64.powf(1.4), 10f64.powf(2.6)),
            };
            prop_assert!(g_lo[i] >= min / slack && g_lo[i] <= max * slack, "gain {i} = {}", g_lo[i]);
        }
    }

    #[test]
    fn reward_bounds(case in case(), local in vec3(0.1), w in vec3(1.0), f in vec6(200.0)) {
        let scene = make_scene(case);
        let g = scene.hole_pose.compose(&Pose::new(exp_so3(&w), local + Vec3::new(0.0, 0.0, 0.04)));
        let state = state_at(g, Wrench::from_vector(&f, Frame::Body));
        let (r1, r2, r3) = reward_terms(&state, &scene);
        prop_assert!(r1 <= 0.0 && r3 <= 0.0);
        prop_assert!(r1 + r2 + r3 <= 120.0);
        if success(&state, &scene) {
            prop_assert_eq!(r2, 120.0);
        }
    }

    #[test]
    fn no_contact_wrench_above_the_surface(case in case(), xy in vec3(0.2), lift in 0.0..0.3f64,
                                           w in vec3(0.6), v in vec6(1.0)) {
        let scene = make_scene(case);
        let local = Pose::new(exp_so3(&w), Vec3::new(xy.x, xy.y, scene.hole_depth + lift));
        let lowest = peg_samples(scene.peg_radius)
            .iter()
            .map(|x| local.transform_point(x).z)
            .fold(f64::INFINITY, f64::min);
        prop_assume!(lowest > scene.hole_depth + 1e-6);
        let g = scene.hole_pose.compose(&local);
        let f = contact_wrench(&scene, &g, &Twist::from_vector(&v, Frame::Body), &ContactParams::default()).unwrap();
        prop_assert_eq!(f.to_vector(), Vec6::zeros());
    }

    #[test]
    fn initial_poses_respect_their_ranges(case in case(), seed in any::<u64>(),
                                          h in 0.0..0.05f64, rot in 0.0..0.5f64) {
        let scene = make_scene(case);
        let ranges = InitRanges { translation: h, rotation: rot };
        let g = sample_initial_pose(&mut episode_rng(seed), &scene, &ranges);
        let local = scene.hole_pose.inverse().compose(&g);
        let offset = local.pos - Vec3::new(0.0, 0.0, START_OFFSET);
        prop_assert!(offset.amax() <= h + 1e-12);
        prop_assert!(local.rot.angle() <= rot + 1e-9);
        prop_assert!(g.rot.orthonormality_error() < TOL);
    }

    #[test]
    fn gcev_policies_are_left_invariant(seed in any::<u64>(), g in pose(), g_d in pose(), g_l in pose()) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let policy = MlpPolicy::new(Mlp::random(&[6, 32, 32, 6], &mut rng), ErrorKind::Gcev);
        let a = policy.forward(&gcev(&g, &g_d)).unwrap();
        let b = policy.forward(&gcev(&compose(&g_l, &g), &compose(&g_l, &g_d))).unwrap();
        prop_assert!((a.as_vector() - b.as_vector()).amax() < TOL);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn reference_arm_mass_matrix_is_spd(q in prop::collection::vec(-3.0..3.0f64, 6)) {
        let model = ManipulatorModel::reference_arm();
        let m = mass_matrix(&model, &DVector::from_vec(q)).unwrap();
        prop_assert!((&m - m.transpose()).amax() < 1e-9 * (1.0 + m.amax()));
        prop_assert!(m.cholesky().is_some());
    }

    #[test]
    fn rotations_from_quaternions_are_proper(q in prop::array::uniform4(-1.0..1.0f64)) {
        prop_assume!(q.iter().map(|x| x * x).sum::<f64>() > 1e-3);
        let r = Rotation::from_quaternion(q);
        prop_assert!(r.orthonormality_error() < TOL);
        prop_assert!((r.matrix().determinant() - 1.0).abs() < TOL);
    }
}
