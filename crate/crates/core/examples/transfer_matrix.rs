//! Collect expert demonstrations on the default scene, clone them into GCEV and
//! CEV policies, and evaluate every controller/error pairing on all scenes.
//!
//! `cargo run --release --example transfer_matrix -- [trajectories] [episodes]`

use std::time::Instant;

use se3_gic::experiments::{collect_demos, evaluate, ExperimentConfig};
use se3_gic::policy::{bc_train, TrainConfig};

fn main() -> se3_gic::Result<()> {
    let mut args = std::env::args().skip(1).map(|a| a.parse::<usize>().expect("integer argument"));
    let trajectories = args.next().unwrap_or(60);
    let episodes = args.next().unwrap_or(20);
    let cfg = ExperimentConfig {
        trajectories,
        episodes_per_cell: episodes,
        train: TrainConfig { max_epochs: 40, ..TrainConfig::default() },
        ..ExperimentConfig::default()
    };

    let t0 = Instant::now();
    let demos = collect_demos(&cfg)?;
    println!(
        "expert: {}/{} successful, {} records ({:.1?})",
        demos.succeeded,
        demos.attempted,
        demos.gcev.len(),
        t0.elapsed()
    );

    let t0 = Instant::now();
    let (gcev, rg) = bc_train(&demos.gcev, &cfg.train)?;
    let (cev, rc) = bc_train(&demos.cev, &cfg.train)?;
    println!(
        "trained: gcev val {:.4} / cev val {:.4} ({:.1?})",
        rg.best_validation_loss,
        rc.best_validation_loss,
        t0.elapsed()
    );

    let t0 = Instant::now();
    let (table, _) = evaluate(&cfg, Some(&gcev), Some(&cev))?;
    println!("success rate (%), {episodes} episodes per cell ({:.1?})", t0.elapsed());
    print!("{}", table.render());
    Ok(())
}
