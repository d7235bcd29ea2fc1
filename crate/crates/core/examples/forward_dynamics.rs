//! The six-joint reference arm: kinematics, the mass matrix and a passive swing
//! with gravity compensation and joint damping, tracking mechanical energy.

use nalgebra::DVector;

use se3_gic::dynamics::{
    forward_kinematics, gravity_vector, kinetic_energy, mass_matrix, potential_energy, step, JointState,
    ManipulatorModel,
};
use se3_gic::environment::home_configuration;

fn main() -> se3_gic::Result<()> {
    let model = ManipulatorModel::reference_arm();
    let q = home_configuration();
    let g = forward_kinematics(&model, &q)?;
    println!("home tool position {:.4?}", g.pos.as_slice());
    let m = mass_matrix(&model, &q)?;
    println!("mass matrix eigenvalues {:.4?}", m.symmetric_eigenvalues().as_slice());

    let mut s = JointState { qdot: DVector::from_element(6, 0.5), ..JointState::at_rest(q) };
    let zero = DVector::zeros(6);
    let energy =
        |s: &JointState| -> se3_gic::Result<f64> { Ok(kinetic_energy(&model, s)? + potential_energy(&model, &s.q)?) };
    let e0 = energy(&s)?;
    for k in 1..=2000 {
        let tau = gravity_vector(&model, &s.q)? - &s.qdot * 2.0;
        s = step(&model, &s, &tau, &zero, 1e-3)?;
        if k % 400 == 0 {
            println!("t = {:.1} s  |qdot| = {:.4}  kinetic = {:.5} J", s.t, s.qdot.norm(), kinetic_energy(&model, &s)?);
        }
    }
    println!("energy {:.5} J -> {:.5} J", e0, energy(&s)?);
    Ok(())
}
