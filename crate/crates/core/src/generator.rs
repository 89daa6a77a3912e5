//! Feed-forward generator with hand-written backpropagation and Adam.
//!
//! Parameters are addressed through one flat vector: for each layer, the
//! weight matrix (fan_in × fan_out, row-major) followed by its bias.
//!
//! Checkpoint layout (little-endian):
//!
//! | offset | type        | field                          |
//! |--------|-------------|--------------------------------|
//! | 0      | `[u8; 4]`   | magic `b"SLGM"`                |
//! | 4      | `u32`       | format version (currently 1)   |
//! | 8      | `f64`       | leaky slope                    |
//! | 16     | `u64`       | number of layer dims `L`       |
//! | 24     | `u64` × L   | layer dims                     |
//! | …      | `f64` × P   | flat parameters                |

use std::io::{Read, Write};
use std::path::Path;
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::matrix::Matrix;
use crate::mechanism::{read_f64, read_f64s, read_u32, read_u64, write_f64s};
use crate::rng::{normal_matrix, SeedSequence, Stream};

pub const MODEL_MAGIC: &[u8; 4] = b"SLGM";
pub const MODEL_VERSION: u32 = 1;
pub const DEFAULT_LEAKY_SLOPE: f64 = 0.2;

static REVISION: AtomicU64 = AtomicU64::new(1);

fn next_revision() -> u64 {
    REVISION.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// fan_in × fan_out
    pub weight: Matrix,
    pub bias: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct GeneratorModel {
    layer_dims: Vec<usize>,
    layers: Vec<Layer>,
    leaky_slope: f64,
    revision: u64,
}

impl PartialEq for GeneratorModel {
    fn eq(&self, other: &Self) -> bool {
        self.layer_dims == other.layer_dims
            && self.leaky_slope == other.leaky_slope
            && self.layers == other.layers
    }
}

/// Activations cached by [`GeneratorModel::forward`].
#[derive(Debug, Clone)]
pub struct Tape {
    /// Input to each layer.
    inputs: Vec<Matrix>,
    /// Pre-activation of each hidden layer.
    pre: Vec<Matrix>,
    revision: u64,
}

fn check_dims(layer_dims: &[usize]) -> Result<()> {
    if layer_dims.len() < 2 || layer_dims.contains(&0) {
        return Err(Error::InvalidConfig(format!(
            "layer dims must list at least two positive widths, got {layer_dims:?}"
        )));
    }
    Ok(())
}

impl GeneratorModel {
    /// He-initialized network: weights `N(0, 2 / fan_in)`, zero biases.
    pub fn init(layer_dims: &[usize], seeds: &SeedSequence) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .enumerate()
            .map(|(l, w)| Layer {
                weight: normal_matrix(
                    &mut seeds.stream(Stream::Init, l as u64),
                    w[0],
                    w[1],
                    (2.0 / w[0] as f64).sqrt(),
                ),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(GeneratorModel {
            layer_dims: layer_dims.to_vec(),
            layers,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            revision: next_revision(),
        })
    }

    pub fn zeros(layer_dims: &[usize]) -> Result<Self> {
        check_dims(layer_dims)?;
        let layers = layer_dims
            .windows(2)
            .map(|w| Layer {
                weight: Matrix::zeros(w[0], w[1]),
                bias: vec![0.0; w[1]],
            })
            .collect();
        Ok(GeneratorModel {
            layer_dims: layer_dims.to_vec(),
            layers,
            leaky_slope: DEFAULT_LEAKY_SLOPE,
            revision: next_revision(),
        })
    }

    /// Builds a model from explicit layers; consecutive shapes must chain.
    pub fn from_layers(layers: Vec<Layer>, leaky_slope: f64) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::InvalidConfig("a generator needs at least one layer".into()));
        }
        let mut dims = vec![layers[0].weight.rows()];
        for (l, layer) in layers.iter().enumerate() {
            if layer.weight.rows() != *dims.last().unwrap() || layer.bias.len() != layer.weight.cols() {
                return Err(Error::DimensionMismatch(format!("layer {l} does not chain")));
            }
            if !layer.weight.is_finite() || layer.bias.iter().any(|b| !b.is_finite()) {
                return Err(Error::InvalidConfig(format!("layer {l} has non-finite parameters")));
            }
            dims.push(layer.weight.cols());
        }
        check_dims(&dims)?;
        Ok(GeneratorModel {
            layer_dims: dims,
            layers,
            leaky_slope,
            revision: next_revision(),
        })
    }

    pub fn with_leaky_slope(mut self, slope: f64) -> Self {
        self.leaky_slope = slope;
        self.revision = next_revision();
        self
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn leaky_slope(&self) -> f64 {
        self.leaky_slope
    }

    pub fn latent_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn n_params(&self) -> usize {
        self.layer_dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.n_params());
        for layer in &self.layers {
            out.extend_from_slice(layer.weight.as_slice());
            out.extend_from_slice(&layer.bias);
        }
        out
    }

    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.n_params() {
            return Err(Error::DimensionMismatch(format!(
                "expected {} parameters, got {}",
                self.n_params(),
                flat.len()
            )));
        }
        let mut at = 0;
        for layer in &mut self.layers {
            let w = layer.weight.as_mut_slice();
            w.copy_from_slice(&flat[at..at + w.len()]);
            at += w.len();
            let nb = layer.bias.len();
            layer.bias.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        self.revision = next_revision();
        Ok(())
    }

    fn leaky(&self, v: f64) -> f64 {
        if v > 0.0 {
            v
        } else {
            self.leaky_slope * v
        }
    }

    pub fn forward(&self, z: &Matrix) -> Result<(Matrix, Tape)> {
        if z.cols() != self.latent_dim() {
            return Err(Error::DimensionMismatch(format!(
                "latent batch has width {}, model expects {}",
                z.cols(),
                self.latent_dim()
            )));
        }
        let last = self.layers.len() - 1;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(last);
        let mut h = z.clone();
        for (l, layer) in self.layers.iter().enumerate() {
            let mut a = h.matmul(&layer.weight)?;
            for i in 0..a.rows() {
                for (v, b) in a.row_mut(i).iter_mut().zip(&layer.bias) {
                    *v += b;
                }
            }
            inputs.push(h);
            if l == last {
                h = a;
            } else {
                let mut act = a.clone();
                act.as_mut_slice().iter_mut().for_each(|v| *v = self.leaky(*v));
                pre.push(a);
                h = act;
            }
        }
        Ok((
            h,
            Tape {
                inputs,
                pre,
                revision: self.revision,
            },
        ))
    }

    /// Gradient of `sum_ij grad_x[i, j] * x[i, j]` with respect to the flat
    /// parameter vector, where `x` is the output recorded on `tape`.
    pub fn backward(&self, tape: &Tape, grad_x: &Matrix) -> Result<Vec<f64>> {
        if tape.revision != self.revision {
            return Err(Error::StaleTape);
        }
        let b = tape.inputs[0].rows();
        if grad_x.rows() != b || grad_x.cols() != self.output_dim() {
            return Err(Error::DimensionMismatch(format!(
                "output gradient is {}x{}, forward produced {}x{}",
                grad_x.rows(),
                grad_x.cols(),
                b,
                self.output_dim()
            )));
        }
        let mut per_layer: Vec<(Matrix, Vec<f64>)> = Vec::with_capacity(self.layers.len());
        let mut g = grad_x.clone();
        for l in (0..self.layers.len()).rev() {
            let gw = tape.inputs[l].t_matmul(&g)?;
            let mut gb = vec![0.0; g.cols()];
            for i in 0..g.rows() {
                for (acc, v) in gb.iter_mut().zip(g.row(i)) {
                    *acc += v;
                }
            }
            per_layer.push((gw, gb));
            if l > 0 {
                let mut gh = g.matmul_t(&self.layers[l].weight)?;
                for (v, a) in gh.as_mut_slice().iter_mut().zip(tape.pre[l - 1].as_slice()) {
                    if *a <= 0.0 {
                        *v *= self.leaky_slope;
                    }
                }
                g = gh;
            }
        }
        let mut flat = Vec::with_capacity(self.n_params());
        for (gw, gb) in per_layer.into_iter().rev() {
            flat.extend_from_slice(gw.as_slice());
            flat.extend_from_slice(&gb);
        }
        Ok(flat)
    }

    pub fn write_to<W: Write>(&self, mut w: W) -> Result<()> {
        w.write_all(MODEL_MAGIC)?;
        w.write_all(&MODEL_VERSION.to_le_bytes())?;
        w.write_all(&self.leaky_slope.to_le_bytes())?;
        w.write_all(&(self.layer_dims.len() as u64).to_le_bytes())?;
        for &dim in &self.layer_dims {
            w.write_all(&(dim as u64).to_le_bytes())?;
        }
        write_f64s(&mut w, &self.params())
    }

    /// Reads one model from `r`, leaving any following bytes unread.
    pub fn read_from<R: Read>(mut r: R) -> Result<Self> {
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != MODEL_MAGIC {
            return Err(Error::Format("not a generator checkpoint (bad magic)".into()));
        }
        let version = read_u32(&mut r)?;
        if version != MODEL_VERSION {
            return Err(Error::Format(format!("unsupported model version {version}")));
        }
        let slope = read_f64(&mut r)?;
        let n_dims = read_u64(&mut r)? as usize;
        if !(2..=1024).contains(&n_dims) {
            return Err(Error::Format(format!("implausible layer count {n_dims}")));
        }
        let dims = (0..n_dims)
            .map(|_| read_u64(&mut r).map(|v| v as usize))
            .collect::<Result<Vec<_>>>()?;
        let mut model = GeneratorModel::zeros(&dims).map_err(|e| Error::Format(e.to_string()))?;
        model.leaky_slope = slope;
        let params = read_f64s(&mut r, model.n_params())?;
        model.set_params(&params)?;
        Ok(model)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut w = std::io::BufWriter::new(std::fs::File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let mut r = std::io::BufReader::new(std::fs::File::open(path)?);
        let model = Self::read_from(&mut r)?;
        let mut rest = [0u8; 1];
        if r.read(&mut rest)? != 0 {
            return Err(Error::Format("trailing bytes after model parameters".into()));
        }
        Ok(model)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            learning_rate: 2e-5,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::domain("learning rate", self.learning_rate, "(0, inf)"));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::domain(name, b, "[0, 1)"));
            }
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::domain("adam epsilon", self.epsilon, "(0, inf)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerState {
    pub config: AdamConfig,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimizerState {
    pub fn new(model: &GeneratorModel, config: AdamConfig) -> Self {
        let n = model.n_params();
        OptimizerState {
            config,
            step: 0,
            first: vec![0.0; n],
            second: vec![0.0; n],
        }
    }

    pub(crate) fn moments(&self) -> (&[f64], &[f64]) {
        (&self.first, &self.second)
    }

    pub(crate) fn from_parts(config: AdamConfig, step: u64, first: Vec<f64>, second: Vec<f64>) -> Result<Self> {
        if first.len() != second.len() {
            return Err(Error::Format("moment vectors differ in length".into()));
        }
        Ok(OptimizerState {
            config,
            step,
            first,
            second,
        })
    }
}

/// One bias-corrected Adam update of `model` in place.
pub fn adam_step(model: &mut GeneratorModel, state: &mut OptimizerState, grad: &[f64]) -> Result<()> {
    let n = model.n_params();
    if grad.len() != n || state.first.len() != n {
        return Err(Error::DimensionMismatch(format!(
            "model has {n} parameters, gradient {} and optimizer state {}",
            grad.len(),
            state.first.len()
        )));
    }
    let c = state.config;
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - c.beta1.powi(t);
    let bc2 = 1.0 - c.beta2.powi(t);
    let mut params = model.params();
    for i in 0..n {
        let g = grad[i];
        state.first[i] = c.beta1 * state.first[i] + (1.0 - c.beta1) * g;
        state.second[i] = c.beta2 * state.second[i] + (1.0 - c.beta2) * g * g;
        let m_hat = state.first[i] / bc1;
        let v_hat = state.second[i] / bc2;
        params[i] -= c.learning_rate * m_hat / (v_hat.sqrt() + c.epsilon);
    }
    model.set_params(&params)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn weighted_output(model: &GeneratorModel, z: &Matrix, weights: &Matrix) -> f64 {
        let (x, _) = model.forward(z).unwrap();
        x.as_slice().iter().zip(weights.as_slice()).map(|(a, b)| a * b).sum()
    }

    #[test]
    fn backward_matches_finite_differences() {
        let seeds = SeedSequence::new(4);
        let mut model = GeneratorModel::init(&[2, 8, 4], &seeds).unwrap();
        // nonzero biases so every code path is exercised
        let mut p = model.params();
        let mut rng = seeds.stream(Stream::Latent, 7);
        let jitter = normal_matrix(&mut rng, 1, p.len(), 0.1);
        p.iter_mut().zip(jitter.as_slice()).for_each(|(a, b)| *a += b);
        model.set_params(&p).unwrap();

        let z = normal_matrix(&mut seeds.stream(Stream::Latent, 0), 4, 2, 1.0);
        let gx = normal_matrix(&mut seeds.stream(Stream::Latent, 1), 4, 4, 1.0);
        let (_, tape) = model.forward(&z).unwrap();
        let grad = model.backward(&tape, &gx).unwrap();
        let h = 1e-6;
        for i in 0..p.len() {
            let mut plus = model.clone();
            let mut q = p.clone();
            q[i] += h;
            plus.set_params(&q).unwrap();
            let mut minus = model.clone();
            q[i] -= 2.0 * h;
            minus.set_params(&q).unwrap();
            let fd = (weighted_output(&plus, &z, &gx) - weighted_output(&minus, &z, &gx)) / (2.0 * h);
            let scale = fd.abs().max(grad[i].abs()).max(1e-6);
            assert!((fd - grad[i]).abs() <= 1e-4 * scale, "param {i}: {} vs {fd}", grad[i]);
        }
    }

    #[test]
    fn backward_is_linear_in_seed_gradient() {
        let seeds = SeedSequence::new(5);
        let model = GeneratorModel::init(&[3, 6, 2], &seeds).unwrap();
        let z = normal_matrix(&mut seeds.stream(Stream::Latent, 0), 5, 3, 1.0);
        let gx = normal_matrix(&mut seeds.stream(Stream::Latent, 1), 5, 2, 1.0);
        let (_, tape) = model.forward(&z).unwrap();
        let g1 = model.backward(&tape, &gx).unwrap();
        let mut gx3 = gx.clone();
        gx3.scale(3.0);
        let g3 = model.backward(&tape, &gx3).unwrap();
        for (a, b) in g1.iter().zip(&g3) {
            assert!((3.0 * a - b).abs() <= 1e-12 * b.abs().max(1.0));
        }
        let g0 = model.backward(&tape, &Matrix::zeros(5, 2)).unwrap();
        assert!(g0.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn stale_tape_is_rejected() {
        let seeds = SeedSequence::new(6);
        let mut model = GeneratorModel::init(&[2, 3, 2], &seeds).unwrap();
        let z = Matrix::zeros(2, 2);
        let (_, tape) = model.forward(&z).unwrap();
        let mut state = OptimizerState::new(&model, AdamConfig::default());
        let ones = vec![1.0; model.n_params()];
        adam_step(&mut model, &mut state, &ones).unwrap();
        assert!(matches!(model.backward(&tape, &Matrix::zeros(2, 2)), Err(Error::StaleTape)));
    }

    #[test]
    fn forward_special_cases() {
        let zero = GeneratorModel::zeros(&[3, 5, 2]).unwrap();
        let z = normal_matrix(&mut SeedSequence::new(1).stream(Stream::Latent, 0), 4, 3, 1.0);
        let (x, _) = zero.forward(&z).unwrap();
        assert!(x.as_slice().iter().all(|&v| v == 0.0));

        let id = GeneratorModel::from_layers(
            vec![Layer {
                weight: Matrix::identity(3),
                bias: vec![0.0; 3],
            }],
            0.2,
        )
        .unwrap();
        assert_eq!(id.forward(&z).unwrap().0, z);
        assert!(id.forward(&Matrix::zeros(1, 2)).is_err());
        assert!(GeneratorModel::init(&[3], &SeedSequence::new(1)).is_err());
        assert!(GeneratorModel::init(&[3, 0, 1], &SeedSequence::new(1)).is_err());
    }

    #[test]
    fn init_is_seeded_he_normal() {
        let a = GeneratorModel::init(&[200, 100], &SeedSequence::new(8)).unwrap();
        let b = GeneratorModel::init(&[200, 100], &SeedSequence::new(8)).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, GeneratorModel::init(&[200, 100], &SeedSequence::new(9)).unwrap());
        let w = a.layers()[0].weight.as_slice();
        let mean = w.iter().sum::<f64>() / w.len() as f64;
        let var = w.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / w.len() as f64;
        assert!((var / (2.0 / 200.0) - 1.0).abs() < 0.1, "variance {var}");
        assert!(a.layers()[0].bias.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn adam_update_rule() {
        let mut model = GeneratorModel::init(&[2, 3], &SeedSequence::new(2)).unwrap();
        let before = model.params();
        let cfg = AdamConfig {
            learning_rate: 0.01,
            ..AdamConfig::default()
        };
        let mut state = OptimizerState::new(&model, cfg);
        adam_step(&mut model, &mut state, &vec![0.0; before.len()]).unwrap();
        assert_eq!(model.params(), before);
        assert_eq!(state.step, 1);

        let mut state = OptimizerState::new(&model, cfg);
        let g: Vec<f64> = (0..before.len()).map(|i| if i % 2 == 0 { 0.3 } else { -2.0 }).collect();
        adam_step(&mut model, &mut state, &g).unwrap();
        for ((after, b), gi) in model.params().iter().zip(&before).zip(&g) {
            let step = b - after;
            assert!((step - 0.01 * gi.signum()).abs() < 1e-8);
        }
        assert!(adam_step(&mut model, &mut state, &[1.0]).is_err());
    }

    #[test]
    fn checkpoint_round_trip() {
        let model = GeneratorModel::init(&[4, 7, 3], &SeedSequence::new(3))
            .unwrap()
            .with_leaky_slope(0.1);
        let mut buf = Vec::new();
        model.write_to(&mut buf).unwrap();
        assert_eq!(buf.len(), 24 + 8 * 3 + 8 * model.n_params());
        let back = GeneratorModel::read_from(buf.as_slice()).unwrap();
        assert_eq!(back, model);
        assert_eq!(back.leaky_slope(), 0.1);
        buf[0] = b'X';
        assert!(GeneratorModel::read_from(buf.as_slice()).is_err());

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("g.bin");
        model.save(&path).unwrap();
        assert_eq!(GeneratorModel::load(&path).unwrap(), model);
    }
}
