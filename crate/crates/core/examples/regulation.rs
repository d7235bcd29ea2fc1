//! Contact-free regulation with the geometric and the Cartesian controllers,
//! on the reference arm and on a free rigid body.

use std::sync::Arc;

use se3_gic::control::{action_to_gains, Action, ControllerKind};
use se3_gic::dynamics::ManipulatorModel;
use se3_gic::environment::{make_scene, ArmPlant, FreeBodyPlant, Plant, SceneCase};
use se3_gic::liegroup::{exp_so3, Pose, Vec3};

fn main() -> se3_gic::Result<()> {
    let scene = make_scene(SceneCase::Default);
    let g_d = scene.nominal_start();
    let offset = Pose::new(exp_so3(&Vec3::new(0.15, -0.2, 0.25)), Vec3::new(0.03, -0.02, 0.04));
    let g0 = g_d.compose(&offset);
    let gains = action_to_gains(&Action::splat(0.0));
    let model = Arc::new(ManipulatorModel::reference_arm());

    for controller in [ControllerKind::Gic, ControllerKind::Cic, ControllerKind::Gac] {
        let mut arm = ArmPlant::for_scene(model.clone(), &scene)?;
        arm.reset(&g0)?;
        let t_arm = se3_gic::environment::regulate(&mut arm, &g_d, &gains, controller, 1e-3, 10.0, 1e-3)?;
        let mut body = FreeBodyPlant::tool_like();
        body.reset(&g0)?;
        let t_body = se3_gic::environment::regulate(&mut body, &g_d, &gains, controller, 1e-3, 10.0, 1e-3)?;
        let show = |t: Option<f64>| t.map_or("not reached".to_string(), |t| format!("{t:.3} s"));
        println!("{:>4}: arm {}, free body {}", controller.as_str(), show(t_arm), show(t_body));
    }
    Ok(())
}
