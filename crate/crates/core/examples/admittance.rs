//! The admittance law integrated on its own: Psi decay for several stiffness
//! levels and the first-order convergence of the discrete update.

use se3_gic::control::{action_to_gains, Action};
use se3_gic::environment::admittance_flow;
use se3_gic::liegroup::{distance, exp_so3, Pose, Vec3};

fn main() -> se3_gic::Result<()> {
    let g_d = Pose::identity();
    let g0 = Pose::new(exp_so3(&Vec3::new(0.3, 0.1, -0.2)), Vec3::new(0.05, -0.03, 0.02));
    println!("Psi(0) = {:.5}", distance(&g0, &g_d));
    for a in [-1.0, 0.0, 1.0] {
        let gains = action_to_gains(&Action::splat(a));
        let row: Vec<String> = [0.25, 0.5, 1.0, 2.0]
            .iter()
            .map(|&t| admittance_flow(&g0, &g_d, &gains, 1e-3, t).map(|(g, _)| format!("{:.2e}", distance(&g, &g_d))))
            .collect::<se3_gic::Result<_>>()?;
        println!("a = {a:+.0}: Psi at 0.25/0.5/1/2 s = {}", row.join(" "));
    }

    let gains = action_to_gains(&Action::splat(0.0));
    let end = |dt: f64| admittance_flow(&g0, &g_d, &gains, dt, 0.2).map(|(g, _)| g.matrix());
    let (a, b, c) = (end(1e-3)?, end(5e-4)?, end(2.5e-4)?);
    println!("step-halving error ratio {:.3} (first order gives 2)", (a - b).amax() / (b - c).amax());
    Ok(())
}
