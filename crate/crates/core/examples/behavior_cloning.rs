//! Record noisy expert demonstrations, fit a gain-scheduling network, round-trip
//! it through its JSON file and roll it out.

use std::sync::Arc;

use se3_gic::dynamics::ManipulatorModel;
use se3_gic::environment::{make_scene, run_episode, ArmPlant, EpisodeConfig, SceneCase};
use se3_gic::experiments::{collect_demos, ExperimentConfig};
use se3_gic::policy::{bc_train, load_policy, save_policy, TrainConfig};

fn main() -> se3_gic::Result<()> {
    let cfg = ExperimentConfig {
        trajectories: 30,
        train: TrainConfig { max_epochs: 30, ..TrainConfig::default() },
        ..ExperimentConfig::default()
    };
    let demos = collect_demos(&cfg)?;
    println!("{} records from {} successful demonstrations", demos.gcev.len(), demos.succeeded);

    let (policy, report) = bc_train(&demos.gcev, &cfg.train)?;
    println!(
        "validation loss {:.4} -> {:.4} after {} epochs",
        report.initial_validation_loss, report.best_validation_loss, report.epochs
    );
    let path = std::env::temp_dir().join("se3_gic_policy_gcev.json");
    save_policy(&policy, &path)?;
    let mut policy = load_policy(&path)?;

    let scene = make_scene(SceneCase::Default);
    let plant = ArmPlant::for_scene(Arc::new(ManipulatorModel::reference_arm()), &scene)?;
    let mut ok = 0;
    for seed in 0..10 {
        let ep = EpisodeConfig { seed: 1000 + seed, ..EpisodeConfig::default() };
        ok += run_episode(&mut plant.clone(), &scene, &mut policy, &ep)?.success as usize;
    }
    println!("cloned policy: {ok}/10 insertions on unseen starts");
    Ok(())
}
