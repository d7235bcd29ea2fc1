//! Seeded episodes on the default scene and on a rotated, shifted copy. With the
//! geometric controller and error the two traces coincide; the Cartesian pair drifts apart.

use std::sync::Arc;

use se3_gic::control::{ControllerKind, ErrorKind};
use se3_gic::dynamics::ManipulatorModel;
use se3_gic::environment::{make_scene, EpisodeConfig, SceneCase};
use se3_gic::experiments::{paired_traces, trace_divergence, PlantKind};
use se3_gic::liegroup::{exp_so3, Pose, Vec3};
use se3_gic::policy::ScriptedExpert;

fn main() -> se3_gic::Result<()> {
    let scene = make_scene(SceneCase::Default);
    let g_l = Pose::new(exp_so3(&Vec3::new(0.4, -0.3, 0.9)), Vec3::new(0.3, -0.2, 0.1));
    let model = Arc::new(ManipulatorModel::reference_arm());
    for (controller, error_kind) in [(ControllerKind::Gic, ErrorKind::Gcev), (ControllerKind::Cic, ErrorKind::Cev)] {
        let ep = EpisodeConfig { controller, error_kind, record_trace: true, seed: 3, ..EpisodeConfig::default() };
        let mut expert = ScriptedExpert::new(scene.hole_depth);
        let (a, b) = paired_traces(PlantKind::FreeBody, model.clone(), &scene, &g_l, &mut expert, &ep)?;
        let (gap, same_len) = trace_divergence(a.trace.as_deref().unwrap_or(&[]), b.trace.as_deref().unwrap_or(&[]));
        println!(
            "{}+{}: success {} / {}, steps {} / {}, max trace gap {:.2e}{}{}",
            controller.as_str(),
            error_kind.as_str(),
            a.success,
            b.success,
            a.steps,
            b.steps,
            gap,
            if same_len { "" } else { " (lengths differ)" },
            b.failure.map(|f| format!("; moved run stopped: {f}")).unwrap_or_default()
        );
    }
    Ok(())
}
