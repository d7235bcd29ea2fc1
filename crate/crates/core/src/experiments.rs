//! Study harness: demonstration collection, training, the transfer table,
//! the invariance audit and per-step traces.

use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::Arc;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::control::{action_to_gains, gic_regulation, Action, ControllerKind, ErrorKind};
use crate::dynamics::ManipulatorModel;
use crate::environment::{
    make_scene, run_episode, write_episode_rows, ArmPlant, EpisodeConfig, EpisodeResult, EpisodeRow, FreeBodyPlant,
    SceneCase, TaskScene, TraceRow,
};
use crate::error::{Error, Result};
use crate::liegroup::{
    distance, elastic_wrench, gcev, velocity_error, wrench_body_to_spatial, Frame, Pose, Rotation, Twist, Vec3, Vec6,
    Wrench,
};
use crate::policy::{
    bc_train, load_dataset, load_policy, save_dataset, save_policy, DemoDataset, DemoRecord, DemoSource, GainPolicy,
    MlpPolicy, ScriptedExpert, TrainConfig, TrainReport,
};

/// A controller paired with the error vector fed to the policy.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Combo {
    pub controller: ControllerKind,
    pub error_kind: ErrorKind,
}

impl Combo {
    pub const GIC_GCEV: Combo = Combo { controller: ControllerKind::Gic, error_kind: ErrorKind::Gcev };
    pub const CIC_CEV: Combo = Combo { controller: ControllerKind::Cic, error_kind: ErrorKind::Cev };
    pub const GIC_CEV: Combo = Combo { controller: ControllerKind::Gic, error_kind: ErrorKind::Cev };
    pub const CIC_GCEV: Combo = Combo { controller: ControllerKind::Cic, error_kind: ErrorKind::Gcev };
    pub const TABLE: [Combo; 4] = [Combo::GIC_GCEV, Combo::CIC_CEV, Combo::GIC_CEV, Combo::CIC_GCEV];
}

impl fmt::Display for Combo {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}+{}", self.controller.as_str().to_uppercase(), self.error_kind.as_str().to_uppercase())
    }
}

impl FromStr for Combo {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let (c, e) =
            s.split_once('+').ok_or_else(|| Error::InvalidConfig(format!("combo {s:?} is not CONTROLLER+ERROR")))?;
        Ok(Combo { controller: c.parse()?, error_kind: e.parse()? })
    }
}

impl Serialize for Combo {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Combo {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PlantKind {
    Arm,
    FreeBody,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ExperimentConfig {
    pub cases: Vec<SceneCase>,
    pub combos: Vec<Combo>,
    pub episodes_per_cell: usize,
    pub seed: u64,
    pub trajectories: usize,
    pub noise_sigma: f64,
    /// Smallest expert success rate (percent) accepted during collection.
    pub expert_gate: f64,
    pub plant: PlantKind,
    pub episode: EpisodeConfig,
    pub train: TrainConfig,
    pub model_path: Option<PathBuf>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            cases: SceneCase::ALL.to_vec(),
            combos: Combo::TABLE.to_vec(),
            episodes_per_cell: 100,
            seed: 0,
            trajectories: 200,
            noise_sigma: 0.05,
            expert_gate: 90.0,
            plant: PlantKind::Arm,
            episode: EpisodeConfig::default(),
            train: TrainConfig::default(),
            model_path: None,
        }
    }
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let cfg: ExperimentConfig = serde_json::from_str(&std::fs::read_to_string(path)?)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.cases.is_empty() || self.combos.is_empty() || self.episodes_per_cell == 0 {
            return Err(Error::InvalidConfig("cases, combos and episodes must be nonempty".into()));
        }
        Ok(())
    }

    pub fn model(&self) -> Result<Arc<ManipulatorModel>> {
        Ok(Arc::new(match &self.model_path {
            Some(p) => ManipulatorModel::load(p)?,
            None => ManipulatorModel::reference_arm(),
        }))
    }
}

/// Independent stream id for `(master, a, b, c)` (splitmix64 mixing).
pub fn derive_seed(master: u64, a: u64, b: u64, c: u64) -> u64 {
    let mut x = master;
    for v in [a, b, c] {
        x = x.wrapping_add(0x9e37_79b9_7f4a_7c15).wrapping_add(v.wrapping_mul(0xbf58_476d_1ce4_e5b9));
        x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
        x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
        x ^= x >> 31;
    }
    x
}

/// Builds a fresh plant per episode for a fixed scene.
#[derive(Clone)]
pub enum PlantFactory {
    Arm(ArmPlant),
    FreeBody(FreeBodyPlant),
}

impl PlantFactory {
    pub fn new(kind: PlantKind, model: Arc<ManipulatorModel>, scene: &TaskScene) -> Result<Self> {
        Ok(match kind {
            PlantKind::Arm => PlantFactory::Arm(ArmPlant::for_scene(model, scene)?),
            PlantKind::FreeBody => PlantFactory::FreeBody(FreeBodyPlant::tool_like()),
        })
    }

    pub fn run(&self, scene: &TaskScene, policy: &mut dyn GainPolicy, cfg: &EpisodeConfig) -> Result<EpisodeResult> {
        match self {
            PlantFactory::Arm(p) => run_episode(&mut p.clone(), scene, policy, cfg),
            PlantFactory::FreeBody(p) => run_episode(&mut p.clone(), scene, policy, cfg),
        }
    }
}

/// Scripted expert that logs its noise-free labels.
struct LabelledExpert {
    inner: ScriptedExpert,
    labels: Vec<Action>,
}

impl GainPolicy for LabelledExpert {
    fn reset(&mut self, seed: u64) {
        self.inner.reset(seed);
        self.labels.clear();
    }

    fn act(&mut self, e: &Vec6) -> Result<Action> {
        let a = self.inner.act(e)?;
        self.labels.push(self.inner.last_clean_action());
        Ok(a)
    }
}

#[derive(Clone, Debug)]
pub struct Collection {
    pub gcev: DemoDataset,
    pub cev: DemoDataset,
    pub attempted: usize,
    pub succeeded: usize,
}

impl Collection {
    pub fn success_rate(&self) -> f64 {
        100.0 * self.succeeded as f64 / self.attempted.max(1) as f64
    }
}

/// Run the noisy scripted expert under GIC on the default scene and record both
/// error streams against the expert's labels. Only successful trajectories are kept.
pub fn collect_demos(cfg: &ExperimentConfig) -> Result<Collection> {
    if cfg.trajectories == 0 {
        return Err(Error::InvalidConfig("trajectory count must be positive".into()));
    }
    let scene = make_scene(SceneCase::Default);
    let factory = PlantFactory::new(cfg.plant, cfg.model()?, &scene)?;
    let period = cfg.episode.update_period;
    type Run = (u64, Result<(EpisodeResult, Vec<Action>)>);
    let runs: Vec<Run> = (0..cfg.trajectories)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, 0xc011, 0, i as u64);
            let mut expert = LabelledExpert {
                inner: ScriptedExpert::new(scene.hole_depth).with_noise(cfg.noise_sigma),
                labels: Vec::new(),
            };
            let ep = EpisodeConfig {
                controller: ControllerKind::Gic,
                error_kind: ErrorKind::Gcev,
                record_trace: true,
                seed,
                ..cfg.episode
            };
            (seed, factory.run(&scene, &mut expert, &ep).map(|r| (r, expert.labels)))
        })
        .collect();

    let mut gcev_data = DemoDataset::new(ErrorKind::Gcev, DemoSource::Scripted, "default");
    let mut cev_data = DemoDataset::new(ErrorKind::Cev, DemoSource::Scripted, "default");
    let mut succeeded = 0;
    for (episode_id, (seed, run)) in runs.into_iter().enumerate() {
        let (result, labels) = run?;
        if !result.success {
            continue;
        }
        succeeded += 1;
        let trace = result.trace.expect("trace requested");
        for (q, label) in labels.iter().enumerate() {
            let row = &trace[q * period];
            let t = row.t - cfg.episode.dt;
            let action = label.to_array();
            gcev_data.records.push(DemoRecord { error: row.e_g.into(), action, t, episode_id: episode_id as u64 });
            cev_data.records.push(DemoRecord { error: row.e_c.into(), action, t, episode_id: episode_id as u64 });
        }
        gcev_data.seeds.push(seed);
        cev_data.seeds.push(seed);
    }
    let out = Collection { gcev: gcev_data, cev: cev_data, attempted: cfg.trajectories, succeeded };
    if out.success_rate() < cfg.expert_gate {
        return Err(Error::ExpertFailureRate { rate: out.success_rate(), required: cfg.expert_gate });
    }
    Ok(out)
}

pub fn dataset_path(out_dir: &Path, kind: ErrorKind) -> PathBuf {
    out_dir.join(format!("demos_{}.jsonl", kind.as_str()))
}

pub fn policy_path(out_dir: &Path, kind: ErrorKind) -> PathBuf {
    out_dir.join(format!("policy_{}.json", kind.as_str()))
}

pub fn cmd_collect(cfg: &ExperimentConfig, out_dir: &Path) -> Result<Collection> {
    std::fs::create_dir_all(out_dir)?;
    let c = collect_demos(cfg)?;
    save_dataset(&c.gcev, &dataset_path(out_dir, ErrorKind::Gcev))?;
    save_dataset(&c.cev, &dataset_path(out_dir, ErrorKind::Cev))?;
    Ok(c)
}

pub fn cmd_train(dataset: &Path, error_kind: ErrorKind, cfg: &TrainConfig, out: &Path) -> Result<TrainReport> {
    let data = load_dataset(dataset)?;
    if data.error_kind != error_kind {
        return Err(Error::InvalidConfig(format!(
            "dataset holds {} errors but {} was requested",
            data.error_kind, error_kind
        )));
    }
    let (policy, report) = bc_train(&data, cfg)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    save_policy(&policy, out)?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct Cell {
    pub combo: Combo,
    pub case: SceneCase,
    pub episodes: usize,
    pub successes: usize,
    pub failures: usize,
    /// Failures caused by a numerical fault rather than the task.
    pub solver_failures: usize,
    pub success_pct: f64,
    pub mean_steps: f64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize)]
pub struct ResultTable {
    pub cells: Vec<Cell>,
}

impl ResultTable {
    pub fn get(&self, combo: Combo, case: SceneCase) -> Option<&Cell> {
        self.cells.iter().find(|c| c.combo == combo && c.case == case)
    }

    /// Rows per combo, one column per case, success percentages.
    pub fn render(&self) -> String {
        let mut combos: Vec<Combo> = Vec::new();
        let mut cases: Vec<SceneCase> = Vec::new();
        for c in &self.cells {
            if !combos.contains(&c.combo) {
                combos.push(c.combo);
            }
            if !cases.contains(&c.case) {
                cases.push(c.case);
            }
        }
        let mut s = format!("{:<10}", "");
        for case in &cases {
            s.push_str(&format!("{:>9}", case.as_str()));
        }
        s.push('\n');
        for combo in combos {
            s.push_str(&format!("{:<10}", combo.to_string()));
            for &case in &cases {
                match self.get(combo, case) {
                    Some(c) => s.push_str(&format!("{:>9.0}", c.success_pct)),
                    None => s.push_str(&format!("{:>9}", "-")),
                }
            }
            s.push('\n');
        }
        s
    }
}

/// Run one (combo, case) cell; episode `i` uses seed `derive_seed(master, combo, case, i)`.
pub fn evaluate_cell(
    factory: &PlantFactory,
    scene: &TaskScene,
    combo: Combo,
    case_index: u64,
    combo_index: u64,
    policy: &MlpPolicy,
    cfg: &ExperimentConfig,
) -> Result<(Cell, Vec<EpisodeRow>)> {
    if policy.error_kind != combo.error_kind {
        return Err(Error::InvalidConfig(format!("{combo} needs a {} policy", combo.error_kind)));
    }
    let results: Vec<(u64, Result<EpisodeResult>)> = (0..cfg.episodes_per_cell)
        .into_par_iter()
        .map(|i| {
            let seed = derive_seed(cfg.seed, combo_index, case_index, i as u64);
            let ep = EpisodeConfig {
                controller: combo.controller,
                error_kind: combo.error_kind,
                record_trace: false,
                seed,
                ..cfg.episode
            };
            let mut p = policy.clone();
            (seed, factory.run(scene, &mut p, &ep))
        })
        .collect();
    let case = SceneCase::ALL[case_index as usize];
    let mut rows = Vec::with_capacity(results.len());
    let (mut successes, mut failures, mut steps) = (0, 0, 0usize);
    for (seed, r) in results {
        let r = r?;
        successes += r.success as usize;
        failures += r.failure.is_some() as usize;
        steps += r.steps;
        rows.push(EpisodeRow {
            case,
            controller: combo.controller,
            error_kind: combo.error_kind,
            seed,
            success: r.success,
            steps: r.steps,
            final_depth: r.final_depth,
            return_sum: r.return_sum,
        });
    }
    let n = cfg.episodes_per_cell;
    Ok((
        Cell {
            combo,
            case,
            episodes: n,
            successes,
            failures: n - successes,
            solver_failures: failures,
            success_pct: 100.0 * successes as f64 / n as f64,
            mean_steps: steps as f64 / n as f64,
        },
        rows,
    ))
}

/// Evaluate every selected (combo, case) cell with the matching policy.
pub fn evaluate(
    cfg: &ExperimentConfig,
    gcev_policy: Option<&MlpPolicy>,
    cev_policy: Option<&MlpPolicy>,
) -> Result<(ResultTable, Vec<EpisodeRow>)> {
    cfg.validate()?;
    let model = cfg.model()?;
    let mut table = ResultTable::default();
    let mut rows = Vec::new();
    for &case in &cfg.cases {
        let scene = make_scene(case);
        let factory = PlantFactory::new(cfg.plant, model.clone(), &scene)?;
        let case_index = SceneCase::ALL.iter().position(|&c| c == case).expect("known case") as u64;
        for &combo in &cfg.combos {
            let policy = match combo.error_kind {
                ErrorKind::Gcev => gcev_policy,
                ErrorKind::Cev => cev_policy,
            }
            .ok_or_else(|| Error::MissingPolicy(format!("no {} policy for {combo}", combo.error_kind)))?;
            let combo_index = Combo::TABLE.iter().position(|&c| c == combo).unwrap_or(4) as u64;
            let (cell, r) = evaluate_cell(&factory, &scene, combo, case_index, combo_index, policy, cfg)?;
            table.cells.push(cell);
            rows.extend(r);
        }
    }
    Ok((table, rows))
}

pub fn cmd_eval(
    cfg: &ExperimentConfig,
    gcev_policy: Option<&Path>,
    cev_policy: Option<&Path>,
    out_dir: &Path,
) -> Result<ResultTable> {
    let needs = |k: ErrorKind| cfg.combos.iter().any(|c| c.error_kind == k);
    let load = |p: Option<&Path>, k: ErrorKind| -> Result<Option<MlpPolicy>> {
        if !needs(k) {
            return Ok(None);
        }
        let p = p.ok_or_else(|| Error::MissingPolicy(format!("{k} policy path")))?;
        let policy = load_policy(p)?;
        if policy.error_kind != k {
            return Err(Error::InvalidConfig(format!(
                "{} is a {} policy, expected {k}",
                p.display(),
                policy.error_kind
            )));
        }
        Ok(Some(policy))
    };
    let g = load(gcev_policy, ErrorKind::Gcev)?;
    let c = load(cev_policy, ErrorKind::Cev)?;
    let (table, rows) = evaluate(cfg, g.as_ref(), c.as_ref())?;
    std::fs::create_dir_all(out_dir)?;
    write_episode_rows(std::fs::File::create(out_dir.join("episodes.csv"))?, &rows)?;
    std::fs::write(out_dir.join("table.json"), serde_json::to_string_pretty(&table)?)?;
    std::fs::write(out_dir.join("table.txt"), table.render())?;
    Ok(table)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropertyResult {
    pub name: String,
    pub samples: usize,
    pub max_residual: f64,
    pub tolerance: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct PropReport {
    pub properties: Vec<PropertyResult>,
}

impl PropReport {
    pub fn passed(&self) -> bool {
        self.properties.iter().all(|p| p.passed)
    }

    pub fn summary(&self) -> String {
        self.properties
            .iter()
            .map(|p| {
                format!(
                    "{} {:<34} max residual {:.3e} (tol {:.0e}, n={})\n",
                    if p.passed { "PASS" } else { "FAIL" },
                    p.name,
                    p.max_residual,
                    p.tolerance,
                    p.samples
                )
            })
            .collect()
    }
}

/// Random `(g, g_d, g_l, V^b, V_d^b, gains)` draws shared by the invariance properties.
pub struct InvarianceSample {
    pub g: Pose,
    pub g_d: Pose,
    pub g_l: Pose,
    pub v: Twist,
    pub v_d: Twist,
    pub gains: crate::control::ImpedanceGains,
}

pub fn invariance_samples(n: usize, seed: u64) -> Vec<InvarianceSample> {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n)
        .map(|_| {
            let mut v3 = |s: f64| Vec3::new(rng.random_range(-s..s), rng.random_range(-s..s), rng.random_range(-s..s));
            let (v, w, vd, wd) = (v3(1.0), v3(1.0), v3(1.0), v3(1.0));
            let a: [f64; 6] = std::array::from_fn(|_| rng.random_range(-1.0..1.0));
            // keep the relative rotation off the half-turn cut of the logarithm
            let g = Pose::random(&mut rng, 1.0);
            let rel = loop {
                let r = Pose::random(&mut rng, 1.0);
                if r.rot.angle() < std::f64::consts::PI - 1e-3 {
                    break r;
                }
            };
            InvarianceSample {
                g,
                g_d: g.compose(&rel),
                g_l: Pose::random(&mut rng, 1.0),
                v: Twist::body(v, w),
                v_d: Twist::body(vd, wd),
                gains: action_to_gains(&Action::from(a)),
            }
        })
        .collect()
}

fn check(name: &str, samples: usize, tol: f64, residuals: impl Iterator<Item = f64>) -> PropertyResult {
    let max = residuals.fold(0.0, |m: f64, r| if r.is_nan() { f64::INFINITY } else { m.max(r) });
    PropertyResult { name: name.into(), samples, max_residual: max, tolerance: tol, passed: max <= tol }
}

/// The invariance and equivariance audit.
pub fn cmd_propcheck(samples: usize, tol: f64, seed: u64) -> Result<PropReport> {
    propcheck_with(samples, tol, seed, gcev)
}

fn propcheck_with(samples: usize, tol: f64, seed: u64, gcev: fn(&Pose, &Pose) -> Vec6) -> Result<PropReport> {
    let s = invariance_samples(samples, seed);
    let lift = |x: &InvarianceSample| (x.g_l.compose(&x.g), x.g_l.compose(&x.g_d));
    let mut props = vec![
        check(
            "gcev left-invariance",
            samples,
            tol,
            s.iter().map(|x| {
                let (a, b) = lift(x);
                (gcev(&x.g, &x.g_d) - gcev(&a, &b)).amax()
            }),
        ),
        check(
            "elastic wrench left-invariance",
            samples,
            tol,
            s.iter().map(|x| {
                let (a, b) = lift(x);
                (elastic_wrench(&x.g, &x.g_d, &x.gains).to_vector() - elastic_wrench(&a, &b, &x.gains).to_vector())
                    .amax()
            }),
        ),
        check(
            "distance left-invariance",
            samples,
            tol,
            s.iter().map(|x| {
                let (a, b) = lift(x);
                (distance(&x.g, &x.g_d) - distance(&a, &b)).abs()
            }),
        ),
    ];
    let ev: Vec<f64> = s
        .iter()
        .map(|x| {
            let (a, b) = lift(x);
            Ok((velocity_error(&x.g, &x.g_d, &x.v, &x.v_d)?.to_vector()
                - velocity_error(&a, &b, &x.v, &x.v_d)?.to_vector())
            .amax())
        })
        .collect::<Result<_>>()?;
    props.push(check("velocity error left-invariance", samples, tol, ev.into_iter()));
    props.push(check(
        "goal randomization identity",
        samples,
        tol,
        s.iter().map(|x| {
            let lhs = elastic_wrench(&x.g, &x.g_l.compose(&x.g_d), &x.gains).to_vector();
            let rhs = elastic_wrench(&x.g_l.inverse().compose(&x.g), &x.g_d, &x.gains).to_vector();
            (lhs - rhs).amax()
        }),
    ));
    let eq: Vec<f64> = s
        .iter()
        .map(|x| {
            let (a, b) = lift(x);
            let zero = Wrench::zero(Frame::Body);
            let fb = gic_regulation(&x.g, &x.g_d, &x.v, &x.gains, &zero)?;
            let fb_l = gic_regulation(&a, &b, &x.v, &x.gains, &zero)?;
            let fs = wrench_body_to_spatial(&x.g, &fb)?.to_vector();
            let fs_l = wrench_body_to_spatial(&a, &fb_l)?.to_vector();
            let expected = x.g_l.inverse().adjoint().transpose() * fs;
            Ok((fs_l - expected).amax())
        })
        .collect::<Result<_>>()?;
    props.push(check("feedback wrench equivariance", samples, tol, eq.into_iter()));
    // closed-form rotational error: R = Rz(theta), R_d = I gives e_R = (0, 0, 2 sin theta)
    props.push(check(
        "gcev rotational closed form",
        samples,
        tol,
        (0..samples).map(|i| {
            let th = -3.0 + 6.0 * i as f64 / samples.max(1) as f64;
            let e = gcev(&Pose::from_rotation(Rotation::rot_z(th)), &Pose::identity());
            (e[5] - 2.0 * th.sin()).abs().max(e[3].abs()).max(e[4].abs())
        }),
    ));
    Ok(PropReport { properties: props })
}

pub fn write_trace<W: Write>(w: W, trace: &[TraceRow]) -> Result<()> {
    let mut csv = csv::Writer::from_writer(w);
    let mut header: Vec<String> = vec!["t".into()];
    header.extend(["px", "py", "pz", "qw", "qx", "qy", "qz"].map(String::from));
    for prefix in ["eg", "ec", "a", "gain", "fext"] {
        header.extend((1..=6).map(|i| format!("{prefix}{i}")));
    }
    header.push("reward".into());
    csv.write_record(&header)?;
    for r in trace {
        let mut rec = vec![r.t];
        rec.extend(r.pose.pos.iter());
        rec.extend(r.pose.rot.to_quaternion());
        rec.extend(r.e_g.iter());
        rec.extend(r.e_c.iter());
        rec.extend(r.action.to_array());
        rec.extend(r.gains.iter());
        rec.extend(r.f_ext.iter());
        rec.push(r.reward);
        csv.write_record(rec.iter().map(|v| v.to_string()))?;
    }
    csv.flush()?;
    Ok(())
}

/// One traced episode of `combo` on `case`.
pub fn trace_episode(
    cfg: &ExperimentConfig,
    policy: &mut dyn GainPolicy,
    combo: Combo,
    case: SceneCase,
    seed: u64,
) -> Result<EpisodeResult> {
    let scene = make_scene(case);
    let factory = PlantFactory::new(cfg.plant, cfg.model()?, &scene)?;
    let ep = EpisodeConfig {
        controller: combo.controller,
        error_kind: combo.error_kind,
        record_trace: true,
        seed,
        ..cfg.episode
    };
    factory.run(&scene, policy, &ep)
}

pub fn cmd_trace(
    cfg: &ExperimentConfig,
    policy_file: &Path,
    combo: Combo,
    case: SceneCase,
    seed: u64,
    out: &Path,
) -> Result<EpisodeResult> {
    let mut policy = load_policy(policy_file)?;
    if policy.error_kind != combo.error_kind {
        return Err(Error::InvalidConfig(format!("{combo} needs a {} policy", combo.error_kind)));
    }
    let r = trace_episode(cfg, &mut policy, combo, case, seed)?;
    if let Some(dir) = out.parent() {
        std::fs::create_dir_all(dir)?;
    }
    write_trace(std::fs::File::create(out)?, r.trace.as_deref().unwrap_or(&[]))?;
    Ok(r)
}

/// Largest per-step difference of GCEV, action, gains and body feedback wrench
/// over the common prefix of two traces, and whether their lengths agree.
pub fn trace_divergence(a: &[TraceRow], b: &[TraceRow]) -> (f64, bool) {
    let gap = a
        .iter()
        .zip(b)
        .map(|(x, y)| {
            (x.e_g - y.e_g)
                .amax()
                .max((x.action.as_vector() - y.action.as_vector()).amax())
                .max((x.gains - y.gains).amax())
                .max((x.feedback - y.feedback).amax())
        })
        .fold(0.0, f64::max);
    (gap, a.len() == b.len())
}

/// Run the same seeded episode on `scene` and on `g_l scene`; return both traces.
pub fn paired_traces(
    plant: PlantKind,
    model: Arc<ManipulatorModel>,
    scene: &TaskScene,
    g_l: &Pose,
    policy: &mut dyn GainPolicy,
    ep: &EpisodeConfig,
) -> Result<(EpisodeResult, EpisodeResult)> {
    let moved = crate::environment::transform_scene(scene, g_l);
    let ep = EpisodeConfig { record_trace: true, ..*ep };
    let a = PlantFactory::new(plant, model.clone(), scene)?.run(scene, policy, &ep)?;
    let b = PlantFactory::new(plant, model, &moved)?.run(&moved, policy, &ep)?;
    Ok((a, b))
}
