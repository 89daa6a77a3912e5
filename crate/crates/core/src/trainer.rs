//! Generator training on a released slice bundle.
//!
//! Everything here consumes only the bundle, a config and seeds. Randomness
//! for step `t` comes from `(seed, label, t)` sub-streams, so a run resumed
//! from a checkpoint at step `t` continues exactly as the original would.
//!
//! Training checkpoint layout (little-endian):
//!
//! | offset | type        | field                                   |
//! |--------|-------------|-----------------------------------------|
//! | 0      | `[u8; 4]`   | magic `b"SLTC"`                         |
//! | 4      | `u32`       | format version (currently 1)            |
//! | 8      | `u64`       | completed steps                         |
//! | 16     | `u64`       | training seed                           |
//! | 24     | `f64` × 4   | learning rate, beta1, beta2, epsilon    |
//! | 56     | `u64`       | optimizer step                          |
//! | 64     | `u64`       | parameter count `P`                     |
//! | 72     | `f64` × 2P  | first then second moments               |
//! | …      |             | generator checkpoint (`SLGM`)           |

use std::fmt;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::time::Instant;

use rand::seq::{index, SliceRandom};
use serde::{Deserialize, Serialize};

use crate::divergence::{
    sliced_wasserstein_1d_loss, smoothed_sliced_loss, FDivergence, KernelConfig, LossGrad, SliceBatch,
};
use crate::error::{Error, Result};
use crate::generator::{adam_step, AdamConfig, GeneratorModel, OptimizerState};
use crate::matrix::Matrix;
use crate::mechanism::{decode, read_f64, read_f64s, read_u32, read_u64, write_f64s, Encoding, SliceBundle};
use crate::rng::{normal_matrix, SeedSequence, Stream};
use crate::table::Table;

pub const TRAIN_MAGIC: &[u8; 4] = b"SLTC";
pub const TRAIN_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LossKind {
    #[default]
    SmoothedSliced,
    SlicedWasserstein,
}

impl fmt::Display for LossKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LossKind::SmoothedSliced => "smoothed-sliced",
            LossKind::SlicedWasserstein => "sliced-wasserstein",
        })
    }
}

impl FromStr for LossKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "smoothed-sliced" | "ssf" => Ok(LossKind::SmoothedSliced),
            "sliced-wasserstein" | "sw" => Ok(LossKind::SlicedWasserstein),
            other => Err(Error::InvalidConfig(format!("unknown loss `{other}`"))),
        }
    }
}

/// Learning-rate multiplier over the run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum LrSchedule {
    #[default]
    Constant,
    /// `0.5 (1 + cos(pi t / max_steps))`.
    Cosine,
}

impl LrSchedule {
    pub fn factor(self, step: u64, max_steps: u64) -> f64 {
        match self {
            LrSchedule::Constant => 1.0,
            LrSchedule::Cosine if max_steps == 0 => 1.0,
            LrSchedule::Cosine => {
                0.5 * (1.0 + (std::f64::consts::PI * step as f64 / max_steps as f64).cos())
            }
        }
    }
}

impl FromStr for LrSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "constant" => Ok(LrSchedule::Constant),
            "cosine" => Ok(LrSchedule::Cosine),
            other => Err(Error::InvalidConfig(format!("unknown learning-rate schedule `{other}`"))),
        }
    }
}

/// How often the synthetic-side noise is redrawn.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum NoiseSchedule {
    #[default]
    PerStep,
    PerEpoch,
}

impl FromStr for NoiseSchedule {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "step" | "per-step" => Ok(NoiseSchedule::PerStep),
            "epoch" | "per-epoch" => Ok(NoiseSchedule::PerEpoch),
            other => Err(Error::InvalidConfig(format!("unknown noise schedule `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub max_steps: u64,
    pub adam: AdamConfig,
    pub lr_schedule: LrSchedule,
    pub loss: LossKind,
    pub f: FDivergence,
    pub kernel: KernelConfig,
    pub seed: u64,
    /// Save a checkpoint every this many steps; 0 disables.
    pub checkpoint_interval: u64,
    pub noise: NoiseSchedule,
    /// Use a random subset of this many slices per step instead of all.
    pub slices_per_step: Option<usize>,
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            batch_size: 128,
            max_steps: 2000,
            adam: AdamConfig::default(),
            lr_schedule: LrSchedule::default(),
            loss: LossKind::default(),
            f: FDivergence::default(),
            kernel: KernelConfig::default(),
            seed: 0,
            checkpoint_interval: 0,
            noise: NoiseSchedule::default(),
            slices_per_step: None,
            latent_dim: 16,
            hidden: vec![128, 128],
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::InvalidConfig(format!(
                "batch size must be at least 2, got {}",
                self.batch_size
            )));
        }
        if self.slices_per_step == Some(0) {
            return Err(Error::InvalidConfig("slices per step must be positive".into()));
        }
        if self.latent_dim == 0 || self.hidden.contains(&0) {
            return Err(Error::InvalidConfig("layer widths must be positive".into()));
        }
        self.adam.validate()?;
        self.kernel.validate()
    }

    /// `latent -> hidden... -> d`.
    pub fn layer_dims(&self, d: usize) -> Vec<usize> {
        let mut dims = vec![self.latent_dim];
        dims.extend_from_slice(&self.hidden);
        dims.push(d);
        dims
    }

    pub fn init_model(&self, d: usize) -> Result<GeneratorModel> {
        GeneratorModel::init(&self.layer_dims(d), &SeedSequence::new(self.seed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub epoch: u64,
    pub loss: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    /// Wall-clock seconds of each epoch touched by this run.
    pub epoch_seconds: Vec<f64>,
    pub checkpoints: Vec<PathBuf>,
}

impl TrainHistory {
    pub fn losses(&self) -> Vec<f64> {
        self.steps.iter().map(|s| s.loss).collect()
    }

    pub fn write_csv<W: Write>(&self, w: W) -> Result<()> {
        let mut out = csv::Writer::from_writer(w);
        for rec in &self.steps {
            out.serialize(rec)?;
        }
        out.flush()?;
        Ok(())
    }

    pub fn save_csv(&self, path: &Path) -> Result<()> {
        self.write_csv(std::fs::File::create(path)?)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainState {
    pub model: GeneratorModel,
    pub optimizer: OptimizerState,
    /// Completed steps.
    pub step: u64,
    pub seed: u64,
}

impl TrainState {
    pub fn new(model: GeneratorModel, cfg: &TrainConfig) -> Self {
        let optimizer = OptimizerState::new(&model, cfg.adam);
        TrainState {
            model,
            optimizer,
            step: 0,
            seed: cfg.seed,
        }
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(TRAIN_MAGIC)?;
        w.write_all(&TRAIN_VERSION.to_le_bytes())?;
        w.write_all(&self.step.to_le_bytes())?;
        w.write_all(&self.seed.to_le_bytes())?;
        let c = self.optimizer.config;
        write_f64s(&mut w, &[c.learning_rate, c.beta1, c.beta2, c.epsilon])?;
        w.write_all(&self.optimizer.step.to_le_bytes())?;
        let (first, second) = self.optimizer.moments();
        w.write_all(&(first.len() as u64).to_le_bytes())?;
        write_f64s(&mut w, first)?;
        write_f64s(&mut w, second)?;
        self.model.write_to(&mut w)
    }

    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != TRAIN_MAGIC {
            return Err(Error::Format("not a training checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != TRAIN_VERSION {
            return Err(Error::Format(format!("unsupported checkpoint version {version}")));
        }
        let step = read_u64(&mut r)?;
        let seed = read_u64(&mut r)?;
        let config = AdamConfig {
            learning_rate: read_f64(&mut r)?,
            beta1: read_f64(&mut r)?,
            beta2: read_f64(&mut r)?,
            epsilon: read_f64(&mut r)?,
        };
        let opt_step = read_u64(&mut r)?;
        let n = read_u64(&mut r)? as usize;
        let first = read_f64s(&mut r, n)?;
        let second = read_f64s(&mut r, n)?;
        let model = GeneratorModel::read_from(&mut r)?;
        if model.n_params() != n {
            return Err(Error::Format("optimizer state does not match model".into()));
        }
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after checkpoint".into()));
        }
        Ok(TrainState {
            model,
            optimizer: OptimizerState::from_parts(config, opt_step, first, second)?,
            step,
            seed,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::read_from(std::io::BufReader::new(std::fs::File::open(path)?))
    }
}

struct Plan<'a> {
    bundle: &'a SliceBundle,
    slices: Vec<(Matrix, Matrix)>,
    batch: usize,
    steps_per_epoch: u64,
    seeds: SeedSequence,
}

impl<'a> Plan<'a> {
    fn new(bundle: &'a SliceBundle, cfg: &TrainConfig) -> Result<Self> {
        let n = bundle.n_rows();
        if n < 2 {
            return Err(Error::InvalidConfig(format!("bundle has {n} rows, need at least 2")));
        }
        let batch = cfg.batch_size.min(n);
        let slices = bundle
            .slices_view()
            .into_iter()
            .map(|v| (v.theta, v.projections))
            .collect();
        Ok(Plan {
            bundle,
            slices,
            batch,
            steps_per_epoch: (n / batch) as u64,
            seeds: SeedSequence::new(cfg.seed),
        })
    }

    fn epoch_of(&self, step: u64) -> u64 {
        step / self.steps_per_epoch
    }

    fn batch_rows(&self, step: u64) -> Vec<usize> {
        let epoch = self.epoch_of(step);
        let mut perm: Vec<usize> = (0..self.bundle.n_rows()).collect();
        perm.shuffle(&mut self.seeds.stream(Stream::Shuffle, epoch));
        let pos = (step % self.steps_per_epoch) as usize * self.batch;
        perm[pos..pos + self.batch].to_vec()
    }

    fn step_loss(&self, model: &GeneratorModel, step: u64, cfg: &TrainConfig) -> Result<(LossGrad, crate::generator::Tape)> {
        let dims = self.bundle.dims();
        let (b, k) = (self.batch, dims.k);
        let rows = self.batch_rows(step);

        let chosen: Vec<usize> = match cfg.slices_per_step {
            Some(s) if s < dims.m => {
                let mut idx = index::sample(&mut self.seeds.stream(Stream::SliceSelect, step), dims.m, s).into_vec();
                idx.sort_unstable();
                idx
            }
            _ => (0..dims.m).collect(),
        };

        let noise_key = match cfg.noise {
            NoiseSchedule::PerStep => step,
            NoiseSchedule::PerEpoch => self.epoch_of(step),
        };
        let noise_all = normal_matrix(
            &mut self.seeds.stream(Stream::SyntheticNoise, noise_key),
            b,
            dims.m_prime(),
            self.bundle.sigma(),
        );

        let mut batches = Vec::with_capacity(chosen.len());
        let mut noise = Vec::with_capacity(chosen.len());
        for &s in &chosen {
            let (theta, proj) = &self.slices[s];
            batches.push(SliceBatch {
                theta: theta.clone(),
                real: proj.select_rows(&rows),
            });
            noise.push(noise_all.columns(s * k, (s + 1) * k));
        }

        let z = normal_matrix(&mut self.seeds.stream(Stream::Latent, step), b, model.latent_dim(), 1.0);
        let (x, tape) = model.forward(&z)?;
        let lg = match cfg.loss {
            LossKind::SmoothedSliced => smoothed_sliced_loss(&batches, &x, &noise, cfg.f, &cfg.kernel)?,
            LossKind::SlicedWasserstein => sliced_wasserstein_1d_loss(&batches, &x, &noise)?,
        };
        Ok((lg, tape))
    }
}

fn check_compatible(bundle: &SliceBundle, model: &GeneratorModel, cfg: &TrainConfig) -> Result<()> {
    cfg.validate()?;
    let d = bundle.dims().d;
    if model.output_dim() != d {
        return Err(Error::DimensionMismatch(format!(
            "generator emits {} columns but the bundle was released at d = {d}",
            model.output_dim()
        )));
    }
    if cfg.loss == LossKind::SlicedWasserstein && bundle.dims().k != 1 {
        return Err(Error::InvalidConfig(format!(
            "sliced Wasserstein loss needs k = 1, bundle has k = {}",
            bundle.dims().k
        )));
    }
    Ok(())
}

/// Trains a fresh optimizer state from `model` for `cfg.max_steps` steps.
pub fn train(bundle: &SliceBundle, model: GeneratorModel, cfg: &TrainConfig) -> Result<(GeneratorModel, TrainHistory)> {
    let (state, history) = resume(bundle, TrainState::new(model, cfg), cfg, None, |_, _| Ok(()))?;
    Ok((state.model, history))
}

/// Continues `state` up to `cfg.max_steps` completed steps.
///
/// With a checkpoint directory and a nonzero interval, the state is written
/// to `<dir>/step-<t>.sltc` whenever `t` completed steps is a multiple of the
/// interval. `on_step` sees the state after every update.
pub fn resume<F>(
    bundle: &SliceBundle,
    mut state: TrainState,
    cfg: &TrainConfig,
    checkpoint_dir: Option<&Path>,
    mut on_step: F,
) -> Result<(TrainState, TrainHistory)>
where
    F: FnMut(&TrainState, &StepRecord) -> Result<()>,
{
    check_compatible(bundle, &state.model, cfg)?;
    if state.seed != cfg.seed {
        return Err(Error::InvalidConfig(format!(
            "checkpoint was trained with seed {}, config has seed {}",
            state.seed, cfg.seed
        )));
    }
    let plan = Plan::new(bundle, cfg)?;
    let mut history = TrainHistory::default();
    let mut epoch_start = Instant::now();
    let mut current_epoch = plan.epoch_of(state.step);

    while state.step < cfg.max_steps {
        let t = state.step;
        let epoch = plan.epoch_of(t);
        if epoch != current_epoch {
            history.epoch_seconds.push(epoch_start.elapsed().as_secs_f64());
            epoch_start = Instant::now();
            current_epoch = epoch;
        }
        let (lg, tape) = plan.step_loss(&state.model, t, cfg)?;
        if !lg.loss.is_finite() || !lg.grad.is_finite() {
            return Err(Error::NonFiniteLoss { step: t, value: lg.loss });
        }
        let grad = state.model.backward(&tape, &lg.grad)?;
        state.optimizer.config = AdamConfig {
            learning_rate: cfg.adam.learning_rate * cfg.lr_schedule.factor(t, cfg.max_steps),
            ..cfg.adam
        };
        adam_step(&mut state.model, &mut state.optimizer, &grad)?;
        state.step += 1;

        let record = StepRecord { step: t, epoch, loss: lg.loss };
        if t % 100 == 0 {
            log::debug!("step {t} loss {:.6}", lg.loss);
        }
        history.steps.push(record);
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_interval > 0 && state.step % cfg.checkpoint_interval == 0 {
                let path = dir.join(format!("step-{:08}.sltc", state.step));
                state.save(&path)?;
                history.checkpoints.push(path);
            }
        }
        on_step(&state, &record)?;
    }
    if !history.steps.is_empty() {
        history.epoch_seconds.push(epoch_start.elapsed().as_secs_f64());
    }
    Ok((state, history))
}

/// Loss of `model` on the bundle at step `step` of the schedule in `cfg`,
/// without updating anything.
pub fn evaluate_loss(bundle: &SliceBundle, model: &GeneratorModel, cfg: &TrainConfig, step: u64) -> Result<f64> {
    check_compatible(bundle, model, cfg)?;
    let plan = Plan::new(bundle, cfg)?;
    Ok(plan.step_loss(model, step, cfg)?.0.loss)
}

/// `count` generator outputs in encoded space.
pub fn generate_matrix(model: &GeneratorModel, count: usize, seed: u64) -> Result<Matrix> {
    let z = normal_matrix(
        &mut SeedSequence::new(seed).stream(Stream::Generate, 0),
        count,
        model.latent_dim(),
        1.0,
    );
    Ok(model.forward(&z)?.0)
}

/// Samples `count` rows and decodes them into a table.
pub fn generate(model: &GeneratorModel, count: usize, encoding: &Encoding, seed: u64) -> Result<Table> {
    if model.output_dim() != encoding.width() {
        return Err(Error::DimensionMismatch(format!(
            "generator emits {} columns, encoding has width {}",
            model.output_dim(),
            encoding.width()
        )));
    }
    decode(&generate_matrix(model, count, seed)?, encoding)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::accounting::MechanismDims;
    use crate::mechanism::{apply_mechanism, EncodedMatrix};
    use crate::table::{ColumnSchema, ColumnSpec};

    fn small_bundle(k: usize, seed: u64) -> SliceBundle {
        let s = SeedSequence::new(seed);
        let mut x = normal_matrix(&mut s.stream(Stream::Latent, 99), 60, 3, 0.3);
        let norm = x.max_row_norm();
        if norm > 1.0 {
            x.scale(1.0 / norm);
        }
        let x = EncodedMatrix::from_unit_rows(x).unwrap();
        apply_mechanism(&x, MechanismDims::new(3, k, 4).unwrap(), 0.1, s).unwrap()
    }

    fn small_cfg() -> TrainConfig {
        TrainConfig {
            batch_size: 16,
            max_steps: 12,
            adam: AdamConfig {
                learning_rate: 1e-3,
                ..AdamConfig::default()
            },
            seed: 3,
            latent_dim: 4,
            hidden: vec![8],
            ..TrainConfig::default()
        }
    }

    #[test]
    fn zero_steps_return_initial_model() {
        let bundle = small_bundle(2, 1);
        let cfg = TrainConfig { max_steps: 0, ..small_cfg() };
        let model = cfg.init_model(3).unwrap();
        let (out, hist) = train(&bundle, model.clone(), &cfg).unwrap();
        assert_eq!(out, model);
        assert!(hist.steps.is_empty());
    }

    #[test]
    fn runs_are_reproducible_and_restartable() {
        let bundle = small_bundle(2, 2);
        let cfg = small_cfg();
        let model = cfg.init_model(3).unwrap();
        let (a, ha) = train(&bundle, model.clone(), &cfg).unwrap();
        let (b, hb) = train(&bundle, model.clone(), &cfg).unwrap();
        assert_eq!(a.params(), b.params());
        assert_eq!(ha.losses(), hb.losses());
        assert_eq!(ha.steps.len(), 12);
        assert!(ha.losses().iter().all(|l| l.is_finite() && *l >= 0.0));

        let dir = tempfile::tempdir().unwrap();
        let cfg_ck = TrainConfig { checkpoint_interval: 5, ..cfg.clone() };
        let (_, hc) = resume(&bundle, TrainState::new(model, &cfg_ck), &cfg_ck, Some(dir.path()), |_, _| Ok(())).unwrap();
        assert_eq!(hc.checkpoints.len(), 2);
        let mid = TrainState::load(&hc.checkpoints[0]).unwrap();
        assert_eq!(mid.step, 5);
        let (resumed, hr) = resume(&bundle, mid, &cfg, None, |_, _| Ok(())).unwrap();
        assert_eq!(resumed.model.params(), a.params());
        assert_eq!(hr.losses(), ha.losses()[5..].to_vec());
    }

    #[test]
    fn per_epoch_noise_and_slice_subsets_run() {
        let bundle = small_bundle(1, 4);
        for cfg in [
            TrainConfig { noise: NoiseSchedule::PerEpoch, ..small_cfg() },
            TrainConfig { slices_per_step: Some(2), ..small_cfg() },
            TrainConfig { loss: LossKind::SlicedWasserstein, ..small_cfg() },
            TrainConfig { lr_schedule: LrSchedule::Cosine, ..small_cfg() },
        ] {
            let (_, h) = train(&bundle, cfg.init_model(3).unwrap(), &cfg).unwrap();
            assert_eq!(h.steps.len(), 12);
        }
    }

    #[test]
    fn incompatible_inputs_are_rejected() {
        let bundle = small_bundle(2, 5);
        let cfg = small_cfg();
        assert!(train(&bundle, cfg.init_model(4).unwrap(), &cfg).is_err());
        let sw = TrainConfig { loss: LossKind::SlicedWasserstein, ..small_cfg() };
        assert!(train(&bundle, sw.init_model(3).unwrap(), &sw).is_err());
        let tiny = TrainConfig { batch_size: 1, ..small_cfg() };
        assert!(tiny.validate().is_err());
        let state = TrainState::new(cfg.init_model(3).unwrap(), &cfg);
        let other = TrainConfig { seed: 4, ..small_cfg() };
        assert!(resume(&bundle, state, &other, None, |_, _| Ok(())).is_err());
    }

    #[test]
    fn cosine_schedule_endpoints() {
        assert_eq!(LrSchedule::Cosine.factor(0, 100), 1.0);
        assert!((LrSchedule::Cosine.factor(50, 100) - 0.5).abs() < 1e-15);
        assert!(LrSchedule::Cosine.factor(100, 100).abs() < 1e-15);
        assert_eq!(LrSchedule::Constant.factor(70, 100), 1.0);
    }

    #[test]
    fn history_csv_has_one_row_per_step() {
        let bundle = small_bundle(2, 6);
        let cfg = TrainConfig { max_steps: 3, ..small_cfg() };
        let (_, h) = train(&bundle, cfg.init_model(3).unwrap(), &cfg).unwrap();
        let mut buf = Vec::new();
        h.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<&str> = text.lines().collect();
        assert_eq!(lines[0], "step,epoch,loss");
        assert_eq!(lines.len(), 4);
    }

    #[test]
    fn generation_is_seeded() {
        let schema = ColumnSchema::new(vec![
            ColumnSpec::numerical("x", 0.0, 1.0),
            ColumnSpec::categorical("c", &["a", "b"]),
        ])
        .unwrap();
        let enc = Encoding::new(schema);
        let cfg = small_cfg();
        let model = cfg.init_model(enc.width()).unwrap();
        let a = generate(&model, 25, &enc, 8).unwrap();
        assert_eq!(a.n_rows(), 25);
        assert_eq!(a, generate(&model, 25, &enc, 8).unwrap());
        assert_eq!(generate(&model, 0, &enc, 8).unwrap().n_rows(), 0);
        assert!(generate(&cfg.init_model(2).unwrap(), 5, &enc, 8).is_err());
    }
}
