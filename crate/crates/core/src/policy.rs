//! Gain-scheduling policies: the MLP, behaviour cloning, the scripted expert,
//! and on-disk formats for policies and demonstrations.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::control::{action_to_gains, Action, ErrorKind, ImpedanceGains};
use crate::error::{Error, Result};
use crate::liegroup::{Vec3, Vec6};

pub const POLICY_VERSION: u32 = 1;
pub const DATASET_VERSION: u32 = 1;
pub const DEFAULT_ARCH: [usize; 5] = [6, 128, 128, 128, 6];

/// Anything that maps an error vector to an action.
pub trait GainPolicy {
    /// Called at the start of every episode.
    fn reset(&mut self, _seed: u64) {}

    fn act(&mut self, e: &Vec6) -> Result<Action>;

    fn gains(&self, a: &Action) -> ImpedanceGains {
        action_to_gains(a)
    }
}

/// A fixed action, or an (almost) zero-stiffness limp controller.
#[derive(Clone, Debug)]
pub struct ConstantPolicy {
    pub action: Action,
    limp: bool,
}

impl ConstantPolicy {
    pub fn new(action: Action) -> Self {
        ConstantPolicy { action, limp: false }
    }

    pub fn limp() -> Self {
        ConstantPolicy { action: Action::splat(-1.0), limp: true }
    }
}

impl GainPolicy for ConstantPolicy {
    fn act(&mut self, _e: &Vec6) -> Result<Action> {
        Ok(self.action)
    }

    fn gains(&self, a: &Action) -> ImpedanceGains {
        if self.limp {
            ImpedanceGains { kp: Vec3::repeat(1e-9), kr: Vec3::repeat(1e-9) }
        } else {
            action_to_gains(a)
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Layer {
    /// `out x in`
    pub w: DMatrix<f64>,
    pub b: DVector<f64>,
}

/// Fully connected network: rectifier hidden layers, hyperbolic-tangent output.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub layers: Vec<Layer>,
}

/// Parameter gradients, laid out like [`Mlp::layers`].
#[derive(Clone, Debug)]
pub struct Gradients {
    pub layers: Vec<Layer>,
}

impl Mlp {
    pub fn zeros(arch: &[usize]) -> Self {
        let layers =
            arch.windows(2).map(|p| Layer { w: DMatrix::zeros(p[1], p[0]), b: DVector::zeros(p[1]) }).collect();
        Mlp { layers }
    }

    /// Uniform fan-in initialisation `U(-1/sqrt(in), 1/sqrt(in))`, zero biases.
    pub fn random<R: Rng + ?Sized>(arch: &[usize], rng: &mut R) -> Self {
        let layers = arch
            .windows(2)
            .map(|p| {
                let bound = 1.0 / (p[0] as f64).sqrt();
                Layer {
                    w: DMatrix::from_fn(p[1], p[0], |_, _| rng.random_range(-bound..bound)),
                    b: DVector::zeros(p[1]),
                }
            })
            .collect();
        Mlp { layers }
    }

    pub fn arch(&self) -> Vec<usize> {
        let mut a = vec![self.layers[0].w.ncols()];
        a.extend(self.layers.iter().map(|l| l.w.nrows()));
        a
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.w.len() + l.b.len()).sum()
    }

    /// Column-batched forward pass; `x` is `in x batch`.
    pub fn forward_batch(&self, x: &DMatrix<f64>) -> DMatrix<f64> {
        self.forward_cached(x).pop().expect("network has layers")
    }

    fn forward_cached(&self, x: &DMatrix<f64>) -> Vec<DMatrix<f64>> {
        let last = self.layers.len() - 1;
        let mut acts = Vec::with_capacity(self.layers.len() + 1);
        acts.push(x.clone());
        for (i, l) in self.layers.iter().enumerate() {
            let mut z = &l.w * acts.last().expect("input pushed");
            for mut c in z.column_iter_mut() {
                c += &l.b;
            }
            if i == last {
                z.apply(|v| *v = v.tanh());
            } else {
                z.apply(|v| *v = v.max(0.0));
            }
            acts.push(z);
        }
        acts
    }

    pub fn forward(&self, e: &[f64]) -> Result<Vec<f64>> {
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let x = DMatrix::from_column_slice(e.len(), 1, e);
        Ok(self.forward_batch(&x).as_slice().to_vec())
    }

    /// Loss `(1/N) sum_i |y_i - mu(x_i)|^2` and its parameter gradient.
    pub fn loss_and_gradient(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> (f64, Gradients) {
        let n = x.ncols() as f64;
        let acts = self.forward_cached(x);
        let out = acts.last().expect("output");
        let diff = out - y;
        let loss = diff.norm_squared() / n;
        let mut delta = diff * (2.0 / n);
        delta.zip_apply(out, |d, o| *d *= 1.0 - o * o);
        let mut grads = Vec::with_capacity(self.layers.len());
        for i in (0..self.layers.len()).rev() {
            let h = &acts[i];
            let gw = &delta * h.transpose();
            let gb = delta.column_sum();
            if i > 0 {
                let mut back = self.layers[i].w.transpose() * &delta;
                back.zip_apply(h, |d, a| {
                    if a <= 0.0 {
                        *d = 0.0
                    }
                });
                delta = back;
            }
            grads.push(Layer { w: gw, b: gb });
        }
        grads.reverse();
        (loss, Gradients { layers: grads })
    }

    pub fn loss(&self, x: &DMatrix<f64>, y: &DMatrix<f64>) -> f64 {
        (self.forward_batch(x) - y).norm_squared() / x.ncols() as f64
    }

    /// All parameters, layer by layer, weights (row-major) before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            v.extend(l.w.transpose().iter());
            v.extend(l.b.iter());
        }
        v
    }

    fn param_mut(&mut self, mut index: usize) -> &mut f64 {
        for l in &mut self.layers {
            let (r, c) = l.w.shape();
            if index < r * c {
                return &mut l.w[(index / c, index % c)];
            }
            index -= r * c;
            if index < r {
                return &mut l.b[index];
            }
            index -= r;
        }
        panic!("parameter index out of range");
    }
}

impl Gradients {
    pub fn flat(&self) -> Vec<f64> {
        Mlp { layers: self.layers.clone() }.flat_params()
    }
}

/// Outcome of [`policy_gradient_check`].
#[derive(Clone, Debug, PartialEq)]
pub struct GradientReport {
    pub max_relative_error: f64,
    pub worst_index: usize,
    pub checked: usize,
}

/// Denominator floor of the relative error, so that vanishing gradients are
/// compared in absolute terms.
pub const GRADIENT_FLOOR: f64 = 1e-6;

fn relative_error(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(GRADIENT_FLOOR)
}

/// Compare an analytic gradient with central differences of step `h`.
pub fn compare_gradient(
    net: &Mlp,
    x: &DMatrix<f64>,
    y: &DMatrix<f64>,
    analytic: &[f64],
    h: f64,
    tol: f64,
) -> Result<GradientReport> {
    let mut probe = net.clone();
    let mut worst = (0.0, 0, 0.0, 0.0);
    for (i, &a) in analytic.iter().enumerate() {
        let p0 = *probe.param_mut(i);
        *probe.param_mut(i) = p0 + h;
        let lp = probe.loss(x, y);
        *probe.param_mut(i) = p0 - h;
        let lm = probe.loss(x, y);
        *probe.param_mut(i) = p0;
        let num = (lp - lm) / (2.0 * h);
        let rel = relative_error(a, num);
        if rel > worst.0 {
            worst = (rel, i, a, num);
        }
    }
    if !(worst.0 < tol) {
        return Err(Error::GradientMismatch { index: worst.1, analytic: worst.2, numeric: worst.3, relative: worst.0 });
    }
    Ok(GradientReport { max_relative_error: worst.0, worst_index: worst.1, checked: analytic.len() })
}

/// Backpropagation against finite differences (`h = 1e-5`) on every parameter.
pub fn policy_gradient_check(net: &Mlp, x: &DMatrix<f64>, y: &DMatrix<f64>, tol: f64) -> Result<GradientReport> {
    let (_, g) = net.loss_and_gradient(x, y);
    compare_gradient(net, x, y, &g.flat(), 1e-5, tol)
}

/// A trained network tagged with the error vector it consumes.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpPolicy {
    pub net: Mlp,
    pub error_kind: ErrorKind,
}

impl MlpPolicy {
    pub fn new(net: Mlp, error_kind: ErrorKind) -> Self {
        MlpPolicy { net, error_kind }
    }

    pub fn forward(&self, e: &Vec6) -> Result<Action> {
        let out = self.net.forward(e.as_slice())?;
        Ok(Action::new(Vec6::from_column_slice(&out)))
    }
}

impl GainPolicy for MlpPolicy {
    fn act(&mut self, e: &Vec6) -> Result<Action> {
        self.forward(e)
    }
}

#[derive(Serialize, Deserialize)]
struct PolicyFile {
    version: u32,
    error_kind: ErrorKind,
    arch: Vec<usize>,
    weights_b64: String,
    biases_b64: String,
}

fn encode_f64(v: impl Iterator<Item = f64>) -> String {
    let bytes: Vec<u8> = v.flat_map(|x| x.to_le_bytes()).collect();
    B64.encode(bytes)
}

fn decode_f64(s: &str) -> Result<Vec<f64>> {
    let bytes = B64.decode(s.trim()).map_err(|e| Error::CorruptPayload(format!("base64: {e}")))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::CorruptPayload(format!("{} bytes is not a whole number of f64", bytes.len())));
    }
    Ok(bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
}

pub fn policy_to_json(p: &MlpPolicy) -> Result<String> {
    let file = PolicyFile {
        version: POLICY_VERSION,
        error_kind: p.error_kind,
        arch: p.net.arch(),
        weights_b64: encode_f64(p.net.layers.iter().flat_map(|l| l.w.transpose().iter().cloned().collect::<Vec<_>>())),
        biases_b64: encode_f64(p.net.layers.iter().flat_map(|l| l.b.iter().cloned().collect::<Vec<_>>())),
    };
    Ok(serde_json::to_string_pretty(&file)?)
}

pub fn policy_from_json(s: &str) -> Result<MlpPolicy> {
    let raw: serde_json::Value = serde_json::from_str(s).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    let version =
        raw.get("version").and_then(|v| v.as_u64()).ok_or_else(|| Error::CorruptPayload("missing version".into()))?;
    if version as u32 != POLICY_VERSION {
        return Err(Error::SchemaVersionMismatch { found: version as u32, supported: POLICY_VERSION });
    }
    let file: PolicyFile = serde_json::from_value(raw).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    if file.arch.len() < 2 || file.arch.contains(&0) {
        return Err(Error::CorruptPayload(format!("bad architecture {:?}", file.arch)));
    }
    let w = decode_f64(&file.weights_b64)?;
    let b = decode_f64(&file.biases_b64)?;
    let nw: usize = file.arch.windows(2).map(|p| p[0] * p[1]).sum();
    let nb: usize = file.arch[1..].iter().sum();
    if w.len() != nw || b.len() != nb {
        return Err(Error::CorruptPayload(format!(
            "expected {nw} weights and {nb} biases, found {} and {}",
            w.len(),
            b.len()
        )));
    }
    let (mut wi, mut bi) = (0, 0);
    let layers = file
        .arch
        .windows(2)
        .map(|p| {
            let l = Layer {
                w: DMatrix::from_row_slice(p[1], p[0], &w[wi..wi + p[0] * p[1]]),
                b: DVector::from_column_slice(&b[bi..bi + p[1]]),
            };
            wi += p[0] * p[1];
            bi += p[1];
            l
        })
        .collect();
    Ok(MlpPolicy { net: Mlp { layers }, error_kind: file.error_kind })
}

pub fn save_policy(p: &MlpPolicy, path: &Path) -> Result<()> {
    std::fs::write(path, policy_to_json(p)?)?;
    Ok(())
}

pub fn load_policy(path: &Path) -> Result<MlpPolicy> {
    if !path.exists() {
        return Err(Error::MissingPolicy(path.display().to_string()));
    }
    policy_from_json(&std::fs::read_to_string(path)?)
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Phase {
    Align,
    Insert,
}

/// Two-phase rule on the GCEV: stiff laterally with a soft axis while aligning,
/// stiff everywhere once centred over the hole.
#[derive(Clone, Debug)]
pub struct ScriptedExpert {
    pub hole_depth: f64,
    pub enter_lateral: f64,
    pub exit_lateral: f64,
    pub enter_rotation: f64,
    pub exit_rotation: f64,
    pub sigma: f64,
    phase: Phase,
    rng: ChaCha8Rng,
    last_clean: Action,
}

pub const ALIGN_ACTION: [f64; 6] = [1.0, 1.0, -1.0, 1.0, 1.0, 1.0];
pub const INSERT_ACTION: [f64; 6] = [1.0; 6];

impl ScriptedExpert {
    pub fn new(hole_depth: f64) -> Self {
        ScriptedExpert {
            hole_depth,
            enter_lateral: 0.25e-3,
            exit_lateral: 0.75e-3,
            enter_rotation: 0.02,
            exit_rotation: 0.06,
            sigma: 0.0,
            phase: Phase::Align,
            rng: ChaCha8Rng::seed_from_u64(0),
            last_clean: Action::from(ALIGN_ACTION),
        }
    }

    pub fn with_noise(mut self, sigma: f64) -> Self {
        self.sigma = sigma;
        self
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    /// The noise-free action behind the most recent [`GainPolicy::act`] call.
    pub fn last_clean_action(&self) -> Action {
        self.last_clean
    }

    /// Pure phase transition.
    pub fn decide(&self, e: &Vec6, phase: Phase) -> (Action, Phase) {
        let lateral = e[0].hypot(e[1]);
        let rot = Vec3::new(e[3], e[4], e[5]).norm();
        let above_mouth = e[2] > self.hole_depth;
        let next = match phase {
            Phase::Align if lateral < self.enter_lateral && rot < self.enter_rotation => Phase::Insert,
            Phase::Insert if above_mouth && (lateral > self.exit_lateral || rot > self.exit_rotation) => Phase::Align,
            p => p,
        };
        let a = match next {
            Phase::Align => Action::from(ALIGN_ACTION),
            Phase::Insert => Action::from(INSERT_ACTION),
        };
        (a, next)
    }
}

impl GainPolicy for ScriptedExpert {
    fn reset(&mut self, seed: u64) {
        self.phase = Phase::Align;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
    }

    fn act(&mut self, e: &Vec6) -> Result<Action> {
        if e.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFiniteInput);
        }
        let (a, phase) = self.decide(e, self.phase);
        self.phase = phase;
        self.last_clean = a;
        Ok(add_noise(&a, self.sigma, &mut self.rng))
    }
}

/// `clamp(a + N(0, sigma^2 I), -1, 1)`.
pub fn add_noise<R: Rng + ?Sized>(a: &Action, sigma: f64, rng: &mut R) -> Action {
    if sigma <= 0.0 {
        return *a;
    }
    let n = Normal::new(0.0, sigma).expect("finite sigma");
    Action::new(a.as_vector().map(|x| x + n.sample(rng)))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DemoRecord {
    pub error: [f64; 6],
    pub action: [f64; 6],
    pub t: f64,
    pub episode_id: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DemoSource {
    Scripted,
    Teleop,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub version: u32,
    pub error_kind: ErrorKind,
    pub source: DemoSource,
    pub case: String,
    pub seeds: Vec<u64>,
    pub records: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DemoDataset {
    pub records: Vec<DemoRecord>,
    pub error_kind: ErrorKind,
    pub source: DemoSource,
    pub case: String,
    pub seeds: Vec<u64>,
}

impl DemoDataset {
    pub fn new(error_kind: ErrorKind, source: DemoSource, case: &str) -> Self {
        DemoDataset { records: Vec::new(), error_kind, source, case: case.to_string(), seeds: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    pub fn meta(&self) -> DatasetMeta {
        DatasetMeta {
            version: DATASET_VERSION,
            error_kind: self.error_kind,
            source: self.source,
            case: self.case.clone(),
            seeds: self.seeds.clone(),
            records: self.records.len(),
        }
    }
}

/// Sidecar path: `data.jsonl` -> `data.jsonl.meta.json`.
pub fn meta_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".meta.json");
    PathBuf::from(s)
}

pub fn save_dataset(data: &DemoDataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    for r in &data.records {
        serde_json::to_writer(&mut w, r)?;
        w.write_all(b"\n")?;
    }
    w.flush()?;
    std::fs::write(meta_path(path), serde_json::to_string_pretty(&data.meta())?)?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<DemoDataset> {
    let meta_raw: serde_json::Value = serde_json::from_str(&std::fs::read_to_string(meta_path(path))?)
        .map_err(|e| Error::CorruptPayload(format!("metadata: {e}")))?;
    let version = meta_raw.get("version").and_then(|v| v.as_u64()).unwrap_or(0) as u32;
    if version != DATASET_VERSION {
        return Err(Error::SchemaVersionMismatch { found: version, supported: DATASET_VERSION });
    }
    let meta: DatasetMeta = serde_json::from_value(meta_raw).map_err(|e| Error::CorruptPayload(e.to_string()))?;
    let mut records = Vec::with_capacity(meta.records);
    for (i, line) in BufReader::new(File::open(path)?).lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let r: DemoRecord =
            serde_json::from_str(&line).map_err(|e| Error::CorruptPayload(format!("line {}: {e}", i + 1)))?;
        if r.error.iter().any(|v| !v.is_finite()) || r.action.iter().any(|a| !(a.abs() <= 1.0)) {
            return Err(Error::CorruptPayload(format!("line {}: record out of bounds", i + 1)));
        }
        records.push(r);
    }
    if records.len() != meta.records {
        return Err(Error::CorruptPayload(format!(
            "metadata lists {} records, file has {}",
            meta.records,
            records.len()
        )));
    }
    Ok(DemoDataset { records, error_kind: meta.error_kind, source: meta.source, case: meta.case, seeds: meta.seeds })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden: Vec<usize>,
    pub batch_size: usize,
    pub learning_rate: f64,
    /// The learning rate is multiplied by `decay` every `decay_every` epochs.
    pub decay_every: usize,
    pub decay: f64,
    pub max_epochs: usize,
    pub patience: usize,
    pub validation_fraction: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            hidden: vec![128, 128, 128],
            batch_size: 256,
            learning_rate: 1e-3,
            decay_every: 20,
            decay: 0.5,
            max_epochs: 100,
            patience: 10,
            validation_fraction: 0.1,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.batch_size > 0
            && self.learning_rate > 0.0
            && self.decay_every > 0
            && self.decay > 0.0
            && self.max_epochs > 0
            && self.patience > 0
            && self.validation_fraction > 0.0
            && self.validation_fraction <= 0.5
            && self.hidden.iter().all(|&h| h > 0);
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidConfig(format!("invalid training configuration {self:?}")))
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TrainReport {
    pub epochs: usize,
    pub best_epoch: usize,
    pub initial_validation_loss: f64,
    pub best_validation_loss: f64,
    pub final_training_loss: f64,
}

struct Adam {
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    const B1: f64 = 0.9;
    const B2: f64 = 0.999;
    const EPS: f64 = 1e-8;

    fn new(n: usize) -> Self {
        Adam { m: vec![0.0; n], v: vec![0.0; n], t: 0 }
    }

    fn step(&mut self, net: &mut Mlp, grads: &Gradients, lr: f64) {
        self.t += 1;
        let c1 = 1.0 - Self::B1.powi(self.t);
        let c2 = 1.0 - Self::B2.powi(self.t);
        let mut k = 0;
        for (layer, g) in net.layers.iter_mut().zip(&grads.layers) {
            for (p, gi) in layer.w.iter_mut().chain(layer.b.iter_mut()).zip(g.w.iter().chain(g.b.iter())) {
                self.m[k] = Self::B1 * self.m[k] + (1.0 - Self::B1) * gi;
                self.v[k] = Self::B2 * self.v[k] + (1.0 - Self::B2) * gi * gi;
                *p -= lr * (self.m[k] / c1) / ((self.v[k] / c2).sqrt() + Self::EPS);
                k += 1;
            }
        }
    }
}

fn columns(records: &[&DemoRecord], f: impl Fn(&DemoRecord) -> [f64; 6]) -> DMatrix<f64> {
    let data: Vec<f64> = records.iter().flat_map(|r| f(r)).collect();
    DMatrix::from_column_slice(6, records.len(), &data)
}

/// Behaviour cloning by minibatch Adam on the squared action error.
///
/// Inputs are standardised during training; the affine normalisation is folded
/// into the first layer of the returned network.
pub fn bc_train(data: &DemoDataset, cfg: &TrainConfig) -> Result<(MlpPolicy, TrainReport)> {
    cfg.validate()?;
    if data.records.len() < cfg.batch_size {
        return Err(Error::InvalidConfig(format!(
            "dataset has {} records, fewer than the batch size {}",
            data.records.len(),
            cfg.batch_size
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut order: Vec<&DemoRecord> = data.records.iter().collect();
    order.shuffle(&mut rng);
    let n_val = ((order.len() as f64 * cfg.validation_fraction).round() as usize).clamp(1, order.len() - 1);
    let (val, train) = order.split_at(n_val);
    let mut train: Vec<&DemoRecord> = train.to_vec();

    let x_all = columns(&train, |r| r.error);
    let mean = x_all.column_mean();
    let std = x_all.column_variance().map(|v| v.sqrt().max(1e-6));
    let normalise = |x: &DMatrix<f64>| {
        let mut out = x.clone();
        for mut c in out.column_iter_mut() {
            c -= &mean;
            c.component_div_assign(&std);
        }
        out
    };
    let x_val = normalise(&columns(val, |r| r.error));
    let y_val = columns(val, |r| r.action);

    let mut arch = vec![6];
    arch.extend(&cfg.hidden);
    arch.push(6);
    let mut net = Mlp::random(&arch, &mut rng);
    let mut adam = Adam::new(net.num_params());
    let initial = net.loss(&x_val, &y_val);
    let mut best = (initial, net.clone(), 0);
    let mut since_best = 0;
    let mut lr = cfg.learning_rate;
    let mut epochs = 0;
    let mut train_loss = f64::NAN;

    for epoch in 1..=cfg.max_epochs {
        epochs = epoch;
        train.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut count = 0;
        for chunk in train.chunks(cfg.batch_size) {
            let x = normalise(&columns(chunk, |r| r.error));
            let y = columns(chunk, |r| r.action);
            let (loss, g) = net.loss_and_gradient(&x, &y);
            adam.step(&mut net, &g, lr);
            sum += loss * chunk.len() as f64;
            count += chunk.len();
        }
        train_loss = sum / count as f64;
        let v = net.loss(&x_val, &y_val);
        if !v.is_finite() {
            return Err(Error::Degenerate(format!("validation loss {v} at epoch {epoch}")));
        }
        if v < best.0 {
            best = (v, net.clone(), epoch);
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
        if epoch % cfg.decay_every == 0 {
            lr *= cfg.decay;
        }
    }

    let (best_loss, mut net, best_epoch) = best;
    fold_normalisation(&mut net, &mean, &std);
    let report = TrainReport {
        epochs,
        best_epoch,
        initial_validation_loss: initial,
        best_validation_loss: best_loss,
        final_training_loss: train_loss,
    };
    Ok((MlpPolicy::new(net, data.error_kind), report))
}

/// `W ((x - mu) / s) + b = (W / s) x + (b - W (mu / s))`.
fn fold_normalisation(net: &mut Mlp, mean: &DVector<f64>, std: &DVector<f64>) {
    let first = &mut net.layers[0];
    let shift = first.w.clone() * mean.component_div(std);
    first.b -= shift;
    for (j, mut col) in first.w.column_iter_mut().enumerate() {
        col /= std[j];
    }
}
