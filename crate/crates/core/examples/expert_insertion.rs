//! The scripted two-phase expert inserting the peg on every scene under the
//! geometric controller, and a constant stiff schedule for comparison.

use std::sync::Arc;

use se3_gic::control::Action;
use se3_gic::dynamics::ManipulatorModel;
use se3_gic::environment::{make_scene, run_episode, ArmPlant, EpisodeConfig, SceneCase};
use se3_gic::policy::{ConstantPolicy, GainPolicy, ScriptedExpert, INSERT_ACTION};

fn main() -> se3_gic::Result<()> {
    let model = Arc::new(ManipulatorModel::reference_arm());
    let episodes = 10;
    for case in SceneCase::ALL {
        let scene = make_scene(case);
        let plant = ArmPlant::for_scene(model.clone(), &scene)?;
        let mut line = format!("{:>8}:", case.as_str());
        let mut expert = ScriptedExpert::new(scene.hole_depth);
        let mut stiff = ConstantPolicy::new(Action::from(INSERT_ACTION));
        let policies: [(&str, &mut dyn GainPolicy); 2] = [("expert", &mut expert), ("stiff", &mut stiff)];
        for (name, policy) in policies {
            let mut ok = 0;
            let mut steps = 0;
            for seed in 0..episodes {
                let cfg = EpisodeConfig { seed, ..EpisodeConfig::default() };
                let r = run_episode(&mut plant.clone(), &scene, policy, &cfg)?;
                ok += r.success as usize;
                steps += r.steps;
            }
            line += &format!("  {name} {ok}/{episodes} (mean {} steps)", steps / episodes as usize);
        }
        println!("{line}");
    }
    Ok(())
}
