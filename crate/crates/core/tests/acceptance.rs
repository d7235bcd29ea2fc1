//! Acceptance suite. Runs every primary criterion at its stated tolerance and
//! prints one PASS/FAIL line per criterion; exits nonzero if any fails.
//!
//! `cargo test --release --test acceptance`

use std::sync::Arc;
use std::time::Instant;

use nalgebra::{DMatrix, DVector, Matrix3, Matrix4, Matrix6};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use se3_gic::control::{action_to_gains, gic_regulation, Action, ControllerKind};
use se3_gic::dynamics::{
    body_jacobian, coriolis_matrix, forward_kinematics, gravity_vector, mass_matrix, operational_space,
    spatial_jacobian, ManipulatorModel,
};
use se3_gic::environment::{
    admittance_flow, make_scene, regulate, reward, reward_terms, ArmPlant, EpisodeConfig, Plant, SceneCase, SimState,
};
use se3_gic::experiments::{
    cmd_propcheck, collect_demos, evaluate, invariance_samples, paired_traces, trace_divergence, Combo,
    ExperimentConfig, PlantKind,
};
use se3_gic::liegroup::{distance, gcev, Frame, Pose, Rotation, Vec3, Vec6, Wrench};
use se3_gic::policy::{bc_train, policy_gradient_check, Mlp, MlpPolicy};

struct Outcome {
    name: &'static str,
    passed: bool,
    detail: String,
}

fn run(name: &'static str, f: impl FnOnce() -> (bool, String)) -> Outcome {
    let t0 = Instant::now();
    let (passed, detail) = f();
    let detail = format!("{detail} [{:.1?}]", t0.elapsed());
    println!("{} {name}: {detail}", if passed { "PASS" } else { "FAIL" });
    Outcome { name, passed, detail }
}

fn homogeneous(g: &Pose) -> Matrix4<f64> {
    let mut m = Matrix4::identity();
    m.fixed_view_mut::<3, 3>(0, 0).copy_from(g.rot.matrix());
    m.fixed_view_mut::<3, 1>(0, 3).copy_from(&g.pos);
    m
}

fn skew(w: &Vec3) -> Matrix3<f64> {
    Matrix3::new(0.0, -w.z, w.y, w.z, 0.0, -w.x, -w.y, w.x, 0.0)
}

/// `e_G` straight from 4x4 matrices.
fn gcev_oracle(g: &Matrix4<f64>, gd: &Matrix4<f64>) -> Vec6 {
    let (r, p) = (g.fixed_view::<3, 3>(0, 0).into_owned(), g.fixed_view::<3, 1>(0, 3).into_owned());
    let (rd, pd) = (gd.fixed_view::<3, 3>(0, 0).into_owned(), gd.fixed_view::<3, 1>(0, 3).into_owned());
    let ep = r.transpose() * (p - pd);
    let m = rd.transpose() * r - r.transpose() * rd;
    Vec6::new(ep.x, ep.y, ep.z, m[(2, 1)], m[(0, 2)], m[(1, 0)])
}

/// `Ad_g` assembled from a homogeneous matrix.
fn adjoint_oracle(g: &Matrix4<f64>) -> Matrix6<f64> {
    let r = g.fixed_view::<3, 3>(0, 0).into_owned();
    let p = g.fixed_view::<3, 1>(0, 3).into_owned();
    let mut a = Matrix6::zeros();
    a.fixed_view_mut::<3, 3>(0, 0).copy_from(&r);
    a.fixed_view_mut::<3, 3>(3, 3).copy_from(&r);
    a.fixed_view_mut::<3, 3>(0, 3).copy_from(&(skew(&p) * r));
    a
}

fn prop(report: &se3_gic::experiments::PropReport, name: &str) -> (bool, f64) {
    let p = report.properties.iter().find(|p| p.name == name).expect("property present");
    (p.passed, p.max_residual)
}

fn left_invariance() -> (bool, String) {
    let report = cmd_propcheck(10_000, 1e-9, 11).expect("propcheck");
    let names = [
        "gcev left-invariance",
        "elastic wrench left-invariance",
        "distance left-invariance",
        "velocity error left-invariance",
    ];
    let mut ok = true;
    let mut parts = Vec::new();
    for n in names {
        let (p, r) = prop(&report, n);
        ok &= p;
        parts.push(format!("{} {r:.1e}", n.split(' ').next().unwrap()));
    }
    // independent route: matrix-form e_G on the lifted pairs
    let oracle = invariance_samples(10_000, 11)
        .iter()
        .map(|s| {
            let (a, b) = (s.g_l.compose(&s.g), s.g_l.compose(&s.g_d));
            let lifted = homogeneous(&s.g_l) * homogeneous(&s.g);
            let lifted_d = homogeneous(&s.g_l) * homogeneous(&s.g_d);
            (gcev_oracle(&lifted, &lifted_d) - gcev(&a, &b))
                .amax()
                .max((gcev_oracle(&homogeneous(&s.g), &homogeneous(&s.g_d)) - gcev(&a, &b)).amax())
        })
        .fold(0.0, f64::max);
    ok &= oracle <= 1e-9;
    (ok, format!("10^4 samples, max inf-norm {}; matrix oracle {oracle:.1e} (tol 1e-9)", parts.join(", ")))
}

fn randomization_identity() -> (bool, String) {
    let report = cmd_propcheck(10_000, 1e-9, 12).expect("propcheck");
    let (p, r) = prop(&report, "goal randomization identity");
    (p, format!("10^4 samples, max inf-norm {r:.1e} (tol 1e-9)"))
}

fn equivariance() -> (bool, String) {
    let report = cmd_propcheck(10_000, 1e-9, 13).expect("propcheck");
    let (p, r) = prop(&report, "feedback wrench equivariance");
    // independent route: F^s = Ad_{g^-1}^T F^b with the adjoint built from matrices
    let zero = Wrench::zero(Frame::Body);
    let oracle = invariance_samples(10_000, 13)
        .iter()
        .map(|s| {
            let fb = gic_regulation(&s.g, &s.g_d, &s.v, &s.gains, &zero).unwrap().to_vector();
            let (a, b) = (s.g_l.compose(&s.g), s.g_l.compose(&s.g_d));
            let fb_l = gic_regulation(&a, &b, &s.v, &s.gains, &zero).unwrap().to_vector();
            let gm = homogeneous(&s.g);
            let lm = homogeneous(&s.g_l);
            let fs = adjoint_oracle(&gm.try_inverse().unwrap()).transpose() * fb;
            let fs_l = adjoint_oracle(&(lm * gm).try_inverse().unwrap()).transpose() * fb_l;
            let expected = adjoint_oracle(&lm.try_inverse().unwrap()).transpose() * fs;
            (fs_l - expected).amax()
        })
        .fold(0.0, f64::max);
    (p && oracle <= 1e-9, format!("10^4 samples, max inf-norm {r:.1e}; matrix-adjoint route {oracle:.1e} (tol 1e-9)"))
}

fn dynamics_identities() -> (bool, String) {
    let arm = ManipulatorModel::reference_arm();
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let q_of = |rng: &mut ChaCha8Rng| DVector::from_fn(6, |_, _| rng.random_range(-3.0..3.0));
    let (mut spd, mut skew_res, mut jac_res, mut power_res, mut skipped) = (0usize, 0.0f64, 0.0f64, 0.0f64, 0);
    for _ in 0..1000 {
        let q = q_of(&mut rng);
        let qdot = DVector::from_fn(6, |_, _| rng.random_range(-2.0..2.0));
        let m = mass_matrix(&arm, &q).unwrap();
        let sym = (&m - m.transpose()).amax();
        if sym < 1e-12 && m.clone().cholesky().is_some() {
            spd += 1;
        }
        let c = coriolis_matrix(&arm, &q, &qdot).unwrap();
        let h = 1e-6;
        let mdot =
            (mass_matrix(&arm, &(&q + &qdot * h)).unwrap() - mass_matrix(&arm, &(&q - &qdot * h)).unwrap()) / (2.0 * h);
        let v = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let scale = v.norm_squared() * (mdot.norm() + 2.0 * c.norm());
        if scale > 0.0 {
            skew_res = skew_res.max(v.dot(&((&mdot - &c * 2.0) * &v)).abs() / scale);
        }
        let g = forward_kinematics(&arm, &q).unwrap();
        let js = spatial_jacobian(&arm, &q).unwrap().matrix;
        let jb = body_jacobian(&arm, &q).unwrap().matrix;
        let ad = DMatrix::from_iterator(6, 6, adjoint_oracle(&homogeneous(&g)).iter().cloned());
        jac_res = jac_res.max((js - ad * &jb).amax());
        let qddot = DVector::from_fn(6, |_, _| rng.random_range(-1.0..1.0));
        let Ok(op) = operational_space(&arm, &q, &qdot) else {
            skipped += 1;
            continue;
        };
        let lhs = qdot.dot(&(&m * &qddot + &c * &qdot + gravity_vector(&arm, &q).unwrap()));
        let jb_dot = (body_jacobian(&arm, &(&q + &qdot * h)).unwrap().matrix
            - body_jacobian(&arm, &(&q - &qdot * h)).unwrap().matrix)
            / (2.0 * h);
        let vb = Vec6::from_column_slice((&jb * &qdot).as_slice());
        let vbdot = Vec6::from_column_slice((&jb * &qddot + jb_dot * &qdot).as_slice());
        let rhs = vb.dot(&(op.mass * vbdot + op.coriolis * vb + op.gravity));
        power_res = power_res.max((lhs - rhs).abs() / lhs.abs().max(1.0));
    }
    let ok = spd == 1000 && skew_res <= 1e-4 && jac_res <= 1e-9 && power_res <= 1e-8;
    (
        ok,
        format!(
            "M SPD {spd}/1000; skew rel {skew_res:.1e} (tol 1e-4); |J_s - Ad J_b| {jac_res:.1e} (tol 1e-9); \
             power rel {power_res:.1e} (tol 1e-8, {skipped} near-singular skipped)"
        ),
    )
}

fn regulation() -> (bool, String) {
    let model = Arc::new(ManipulatorModel::reference_arm());
    let scene = make_scene(SceneCase::Default);
    let base = ArmPlant::for_scene(model, &scene).unwrap();
    let g_d = scene.nominal_start();
    let mut rng = ChaCha8Rng::seed_from_u64(15);
    let n = 1000;
    let mut converged = 0;
    let mut worst: f64 = 0.0;
    for _ in 0..n {
        let axis = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
        let rot = Rotation::from_axis_angle(&axis.normalize(), rng.random_range(0.0..0.35));
        let t = Vec3::from_fn(|_, _| rng.random_range(-0.05..0.05));
        let g0 = g_d.compose(&Pose::new(rot, t));
        let a: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
        let gains = action_to_gains(&Action::from(a));
        let mut arm = base.clone();
        if arm.reset(&g0).is_err() {
            continue;
        }
        if let Ok(Some(t)) = regulate(&mut arm, &g_d, &gains, ControllerKind::Gic, 1e-3, 10.0, 1e-3) {
            converged += 1;
            worst = worst.max(t);
        }
    }
    let rate = 100.0 * converged as f64 / n as f64;
    (
        rate >= 99.0,
        format!("{converged}/{n} starts reach Psi < 1e-3 within 10 s ({rate:.1}%, need >= 99%); slowest {worst:.2} s"),
    )
}

fn gradient_check() -> (bool, String) {
    let mut rng = ChaCha8Rng::seed_from_u64(16);
    let net = Mlp::random(&[6, 8, 8, 6], &mut rng);
    let x = DMatrix::from_fn(6, 16, |_, _| rng.random_range(-1.0..1.0));
    let y = DMatrix::from_fn(6, 16, |_, _| rng.random_range(-1.0..1.0));
    match policy_gradient_check(&net, &x, &y, 1e-5) {
        Ok(r) => {
            (true, format!("{} parameters, max relative error {:.1e} (tol 1e-5)", r.checked, r.max_relative_error))
        }
        Err(e) => (false, e.to_string()),
    }
}

fn transfer() -> (bool, String) {
    let cfg = ExperimentConfig { seed: 17, ..ExperimentConfig::default() };
    let demos = match collect_demos(&cfg) {
        Ok(d) => d,
        Err(e) => return (false, format!("collection: {e}")),
    };
    let (gcev_policy, _) = bc_train(&demos.gcev, &cfg.train).expect("train gcev");
    let (cev_policy, _) = bc_train(&demos.cev, &cfg.train).expect("train cev");
    let (table, _) = evaluate(&cfg, Some(&gcev_policy), Some(&cev_policy)).expect("evaluate");
    println!(
        "     expert {}/{} successful, {} records per dataset; success rate (%), {} episodes per cell:",
        demos.succeeded,
        demos.attempted,
        demos.gcev.len(),
        cfg.episodes_per_cell
    );
    for line in table.render().lines() {
        println!("     {line}");
    }
    let pct = |c: Combo, s: SceneCase| table.get(c, s).unwrap().success_pct;
    let def = pct(Combo::GIC_GCEV, SceneCase::Default);
    let spread = [SceneCase::Case1, SceneCase::Case2, SceneCase::Case3]
        .iter()
        .map(|&s| (pct(Combo::GIC_GCEV, s) - def).abs())
        .fold(0.0, f64::max);
    let a = def >= 90.0 && spread <= 10.0;
    let cic_drop = pct(Combo::CIC_CEV, SceneCase::Default) - pct(Combo::CIC_CEV, SceneCase::Case3);
    let b = cic_drop >= 50.0;

    let (c, c_detail) = rollout_equivariance(&gcev_policy, &cev_policy, &cfg.episode);
    (
        a && b && c,
        format!(
            "(a) GIC+GCEV default {def:.0}%, max gap {spread:.0} pts (need >= 90%, <= 10) {}; \
             (b) CIC+CEV default-case3 drop {cic_drop:.0} pts (need >= 50) {}; (c) {c_detail} {}",
            verdict(a),
            verdict(b),
            verdict(c)
        ),
    )
}

fn verdict(ok: bool) -> &'static str {
    if ok {
        "ok"
    } else {
        "MISSED"
    }
}

fn rollout_equivariance(gcev_policy: &MlpPolicy, cev_policy: &MlpPolicy, base: &EpisodeConfig) -> (bool, String) {
    let model = Arc::new(ManipulatorModel::reference_arm());
    let scene = make_scene(SceneCase::Default);
    let mut rng = ChaCha8Rng::seed_from_u64(18);
    let movers: Vec<Pose> = (0..4).map(|_| Pose::random(&mut rng, 0.5)).collect();
    let (mut gic_max, mut gic_lengths) = (0.0f64, true);
    let (mut cic_min, mut cic_diverged) = (f64::INFINITY, 0);
    let mut arm_max = 0.0f64;
    let mut runs = 0;
    let traces = |r: &(se3_gic::environment::EpisodeResult, se3_gic::environment::EpisodeResult)| {
        trace_divergence(r.0.trace.as_ref().unwrap(), r.1.trace.as_ref().unwrap())
    };
    for (i, g_l) in movers.iter().enumerate() {
        for seed in 0..3u64 {
            let ep = |combo: Combo| EpisodeConfig {
                controller: combo.controller,
                error_kind: combo.error_kind,
                seed: 100 * i as u64 + seed,
                ..*base
            };
            runs += 1;
            let gic = paired_traces(
                PlantKind::FreeBody,
                model.clone(),
                &scene,
                g_l,
                &mut gcev_policy.clone(),
                &ep(Combo::GIC_GCEV),
            )
            .expect("free body gic");
            let (gap, same_len) = traces(&gic);
            gic_max = gic_max.max(gap);
            gic_lengths &= same_len;
            let cic = paired_traces(
                PlantKind::FreeBody,
                model.clone(),
                &scene,
                g_l,
                &mut cev_policy.clone(),
                &ep(Combo::CIC_CEV),
            )
            .expect("free body cic");
            let (gap, same_len) = traces(&cic);
            cic_min = cic_min.min(gap);
            cic_diverged += (gap > 1e-3 || !same_len) as usize;
            if seed == 0 {
                if let Ok(arm) = paired_traces(
                    PlantKind::Arm,
                    model.clone(),
                    &scene,
                    g_l,
                    &mut gcev_policy.clone(),
                    &ep(Combo::GIC_GCEV),
                ) {
                    arm_max = arm_max.max(traces(&arm).0);
                }
            }
        }
    }
    let ok = gic_max <= 1e-6 && gic_lengths && cic_diverged == runs;
    (
        ok,
        format!(
            "free-body GIC+GCEV trace gap {gic_max:.1e} (tol 1e-6, equal lengths {gic_lengths}); \
             CIC+CEV diverged in {cic_diverged}/{runs} pairs (smallest gap {cic_min:.1e}); \
             info: fixed-base arm GIC+GCEV gap {arm_max:.1e}"
        ),
    )
}

fn reward_spot_checks() -> (bool, String) {
    let scene = make_scene(SceneCase::Default);
    let state = |g: Pose, f: Wrench| SimState {
        joints: None,
        ee_pose: g,
        ee_twist: se3_gic::liegroup::Twist::zero(Frame::Body),
        f_ext: f,
        t: 0.0,
    };
    let zero = Wrench::zero(Frame::Body);
    let at_goal = reward(&state(scene.hole_pose, zero), &scene);
    let up = scene.hole_pose.compose(&Pose::from_translation(Vec3::new(0.0, 0.0, 0.03)));
    let (r1, r2, _) = reward_terms(&state(up, zero), &scene);
    let off = scene.hole_pose.compose(&Pose::from_translation(Vec3::new(0.005, 0.0, 0.1)));
    let push = Wrench::new(Vec3::new(0.0, 0.0, 10.0), Vec3::zeros(), Frame::Body);
    let (_, _, r3) = reward_terms(&state(off, push), &scene);
    let ok = at_goal == 120.0
        && (r2 - 0.01).abs() < 1e-12
        && r1 == -0.1 * distance(&up, &scene.hole_pose)
        && (r3 + 0.05).abs() < 1e-15;
    (ok, format!("goal {at_goal}, middle branch r2 {r2:.15}, force branch r3 {r3}"))
}

fn gac_convergence() -> (bool, String) {
    let gains = action_to_gains(&Action::splat(0.0));
    let g_d = make_scene(SceneCase::Default).nominal_start();
    let g0 = g_d.compose(&Pose::new(
        Rotation::from_matrix_unchecked(Rotation::rot_x(0.4).matrix() * Rotation::rot_z(-0.3).matrix()),
        Vec3::new(0.05, -0.04, 0.06),
    ));
    let (g_end, _) = admittance_flow(&g0, &g_d, &gains, 1e-3, 10.0).unwrap();
    let psi = distance(&g_end, &g_d);
    let at = |dt: f64| admittance_flow(&g0, &g_d, &gains, dt, 0.3).unwrap().0;
    let (a, b, c) = (at(2e-3), at(1e-3), at(5e-4));
    let diff = |x: &Pose, y: &Pose| gcev(x, y).amax();
    let ratio = diff(&a, &b) / diff(&b, &c);
    let ok = psi < 1e-3 && (1.6..=2.5).contains(&ratio);
    (
        ok,
        format!(
            "Psi after 10 s {psi:.1e} (tol 1e-3); Richardson ratio {ratio:.3} at dt 2e-3/1e-3/5e-4 (first order ~2)"
        ),
    )
}

type Criterion = (&'static str, fn() -> (bool, String));

fn main() {
    let filter: Option<String> = std::env::args().skip(1).find(|a| !a.starts_with('-'));
    let criteria: Vec<Criterion> = vec![
        ("left-invariance", left_invariance),
        ("randomization identity", randomization_identity),
        ("equivariance", equivariance),
        ("dynamics identities", dynamics_identities),
        ("regulation", regulation),
        ("gradient check", gradient_check),
        ("transfer study", transfer),
        ("reward spot checks", reward_spot_checks),
        ("GAC convergence", gac_convergence),
    ];
    let mut outcomes = Vec::new();
    for (name, f) in criteria {
        if filter.as_ref().is_some_and(|p| !name.contains(p.as_str())) {
            continue;
        }
        outcomes.push(run(name, f));
    }
    let failed: Vec<&Outcome> = outcomes.iter().filter(|o| !o.passed).collect();
    println!("\n{} of {} criteria passed", outcomes.len() - failed.len(), outcomes.len());
    if !failed.is_empty() {
        for o in failed {
            eprintln!("failed: {} ({})", o.name, o.detail);
        }
        std::process::exit(1);
    }
}
