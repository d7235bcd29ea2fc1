//! SE(3) basics: exponential coordinates, the geometric error vector and its
//! invariance under a common left transform.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use se3_gic::liegroup::{compose, distance, exp_se3, gcev, log_se3, Pose, Twist, Vec3};

fn main() -> se3_gic::Result<()> {
    let xi = Twist::body(Vec3::new(0.1, -0.2, 0.3), Vec3::new(0.0, 0.0, 1.2));
    let g = exp_se3(&xi, 1.0);
    println!("exp(xi) =\n{:.4}", g.matrix());
    println!("log(exp(xi)) = {}", show(log_se3(&g)?.to_vector().as_slice()));

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let g = Pose::random(&mut rng, 1.0);
    let g_d = Pose::random(&mut rng, 1.0);
    let g_l = Pose::random(&mut rng, 2.0);
    let e = gcev(&g, &g_d);
    let e_moved = gcev(&compose(&g_l, &g), &compose(&g_l, &g_d));
    println!("e_G          = {}", show(e.as_slice()));
    println!("e_G (moved)  = {}", show(e_moved.as_slice()));
    println!("max deviation {:.2e}", (e - e_moved).amax());
    println!("Psi = {:.6}, moved {:.6}", distance(&g, &g_d), distance(&compose(&g_l, &g), &compose(&g_l, &g_d)));
    Ok(())
}

fn show(x: &[f64]) -> String {
    x.iter().map(|v| format!("{v:+.6}")).collect::<Vec<_>>().join(" ")
}
