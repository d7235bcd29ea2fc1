//! The simulation owned by the control loop.

use std::path::Path;
use std::sync::Arc;

use nalgebra::{Matrix6, Vector6};

use se3_gic::control::{action_to_gains, gac_step, Action, ErrorKind, ImpedanceGains, DEFAULT_ADMITTANCE_INERTIA};
use se3_gic::dynamics::ManipulatorModel;
use se3_gic::environment::{
    contact_wrench_with, episode_rng, make_scene, reward, sample_initial_pose, success, ArmPlant, ContactParams,
    ContactState, InitRanges, Plant, SceneCase, SimState, TaskScene,
};
use se3_gic::liegroup::{gcev, Frame, Pose, Twist, Wrench};
use se3_gic::policy::{save_dataset, DemoDataset, DemoRecord, DemoSource};

use crate::protocol::{Command, Flags, Telemetry};

#[derive(Clone, Debug)]
pub struct SessionConfig {
    pub case: SceneCase,
    pub seed: u64,
    pub dt: f64,
    /// Control ticks per telemetry frame.
    pub telemetry_every: u64,
    pub init: InitRanges,
    pub contact: ContactParams,
    pub kv: f64,
}

impl Default for SessionConfig {
    fn default() -> Self {
        SessionConfig {
            case: SceneCase::Default,
            seed: 0,
            dt: 1e-3,
            telemetry_every: 20,
            init: InitRanges::default(),
            contact: ContactParams::default(),
            kv: se3_gic::environment::DEFAULT_KV,
        }
    }
}

/// One GAC session: arm, scene, commanded gains and the demonstration buffer.
pub struct Session {
    model: Arc<ManipulatorModel>,
    config: SessionConfig,
    scene: TaskScene,
    case: SceneCase,
    plant: ArmPlant,
    start: Pose,
    contact: ContactState,
    v_adm: Twist,
    m_des: Matrix6<f64>,
    action: Action,
    gains: ImpedanceGains,
    recording: bool,
    buffer: Vec<DemoRecord>,
    seeds: Vec<u64>,
    episode: u64,
    tick: u64,
}

impl Session {
    pub fn new(model: Arc<ManipulatorModel>, config: SessionConfig) -> se3_gic::Result<Self> {
        let scene = make_scene(config.case);
        let mut plant = ArmPlant::for_scene(model.clone(), &scene)?;
        plant.kv = config.kv;
        let action = Action::splat(0.0);
        let mut s = Session {
            model,
            scene,
            case: config.case,
            start: scene.nominal_start(),
            plant,
            contact: ContactState::new(),
            v_adm: Twist::zero(Frame::Body),
            m_des: Matrix6::from_diagonal(&Vector6::from(DEFAULT_ADMITTANCE_INERTIA)),
            gains: action_to_gains(&action),
            action,
            recording: false,
            buffer: Vec::new(),
            seeds: Vec::new(),
            episode: 0,
            tick: 0,
            config,
        };
        let seed = s.config.seed;
        s.reset(s.config.case, seed)?;
        Ok(s)
    }

    pub fn tick(&self) -> u64 {
        self.tick
    }

    pub fn scene(&self) -> &TaskScene {
        &self.scene
    }

    pub fn scene_case(&self) -> SceneCase {
        self.case
    }

    pub fn start_pose(&self) -> Pose {
        self.start
    }

    pub fn plant(&self) -> &ArmPlant {
        &self.plant
    }

    pub fn action(&self) -> Action {
        self.action
    }

    pub fn recording(&self) -> bool {
        self.recording
    }

    pub fn records(&self) -> &[DemoRecord] {
        &self.buffer
    }

    /// Place the peg at a start sampled exactly as episodes do for `seed`.
    pub fn reset(&mut self, case: SceneCase, seed: u64) -> se3_gic::Result<()> {
        if case != self.case {
            self.scene = make_scene(case);
            let kv = self.plant.kv;
            self.plant = ArmPlant::for_scene(self.model.clone(), &self.scene)?;
            self.plant.kv = kv;
            self.case = case;
        }
        let mut rng = episode_rng(seed);
        self.start = sample_initial_pose(&mut rng, &self.scene, &self.config.init);
        self.plant.reset(&self.start)?;
        self.contact.clear();
        self.v_adm = Twist::zero(Frame::Body);
        self.episode += 1;
        self.seeds.push(seed);
        Ok(())
    }

    /// Apply a command; `Ok` carries an optional acknowledgement detail.
    pub fn apply(&mut self, command: &Command) -> Result<Option<String>, String> {
        match command {
            Command::SetGains { action } => {
                if action.iter().any(|a| !a.is_finite()) {
                    return Err("set_gains needs six finite log-actions".into());
                }
                self.action = Action::from(*action);
                self.gains = action_to_gains(&self.action);
                Ok(None)
            }
            Command::StartRecording => {
                self.recording = true;
                Ok(None)
            }
            Command::StopRecording => {
                self.recording = false;
                Ok(Some(format!("{} records", self.buffer.len())))
            }
            Command::Reset { case, seed } => {
                let seed = seed.unwrap_or_else(|| self.config.seed.wrapping_add(self.episode));
                self.reset(*case, seed).map_err(|e| e.to_string())?;
                Ok(Some(format!("seed {seed}")))
            }
            Command::Save { path } => {
                let n = self.save(Path::new(path)).map_err(|e| e.to_string())?;
                Ok(Some(format!("{n} records saved to {path}")))
            }
        }
    }

    /// Write the buffer as a GCEV dataset tagged as teleoperated.
    pub fn save(&self, path: &Path) -> se3_gic::Result<usize> {
        if self.buffer.is_empty() {
            return Err(se3_gic::Error::InvalidConfig("nothing recorded".into()));
        }
        let mut data = DemoDataset::new(ErrorKind::Gcev, DemoSource::Teleop, self.case.as_str());
        data.records = self.buffer.clone();
        data.seeds = self.seeds.clone();
        save_dataset(&data, path)?;
        Ok(data.len())
    }

    /// One control tick. Returns telemetry on telemetry ticks.
    ///
    /// Telemetry and recorded errors describe the state the tick's control step acted on.
    pub fn step(&mut self) -> se3_gic::Result<Option<Telemetry>> {
        let dt = self.config.dt;
        let g = self.plant.pose();
        let g_d = self.scene.hole_pose;
        let v_b = self.plant.body_twist();
        let f_ext = contact_wrench_with(&self.scene, &g, &v_b, &self.config.contact, &mut self.contact)?;
        let publish = self.tick.is_multiple_of(self.config.telemetry_every);
        let frame = publish.then(|| self.telemetry(&g, &f_ext));
        if let (Some(f), true) = (&frame, self.recording) {
            self.buffer.push(DemoRecord { error: f.e_g, action: f.action, t: f.t, episode_id: self.episode });
        }
        self.v_adm = gac_step(&self.v_adm, &g, &g_d, &self.m_des, &self.gains, &f_ext, dt)?;
        self.plant.track_velocity(&self.v_adm, &f_ext, dt)?;
        self.tick += 1;
        Ok(frame)
    }

    fn telemetry(&self, g: &Pose, f_ext: &Wrench) -> Telemetry {
        let state = SimState {
            joints: self.plant.joints().cloned(),
            ee_pose: *g,
            ee_twist: self.plant.body_twist(),
            f_ext: *f_ext,
            t: self.plant.time(),
        };
        let (depth, lateral) = self.scene.hole_offsets(&g.pos);
        Telemetry {
            tick: self.tick,
            t: state.t,
            case: self.case,
            pose: *g,
            hole: self.scene.hole_pose,
            e_g: gcev(g, &self.scene.hole_pose).into(),
            f_ext: f_ext.to_vector().into(),
            action: self.action.to_array(),
            gains: self.gains.to_vector().into(),
            reward: reward(&state, &self.scene),
            depth,
            lateral,
            flags: Flags {
                in_contact: self.contact.in_contact() > 0,
                success: success(&state, &self.scene),
                recording: self.recording,
            },
            records: self.buffer.len(),
        }
    }
}
