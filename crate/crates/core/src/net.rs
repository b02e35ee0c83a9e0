//! Dense feed-forward scorer `s(q, x; theta)` with hand-written backprop.
//!
//! Architecture: `F -> h1 -> ... -> hk -> 1`, ReLU on hidden layers, identity
//! output, inverted dropout on hidden activations during training. Weights are
//! stored `in x out` so a batch of documents is scored as `X . W + b`.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use ndarray::{Array1, Array2, ArrayView2, Axis, Zip};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::calibrate::PlattModel;
use crate::error::{Error, Result};

/// Hidden sizes of the reference architecture.
pub const DEFAULT_HIDDEN: [usize; 3] = [1024, 512, 256];
pub const DEFAULT_DROPOUT: f64 = 0.5;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    /// `fan_in x fan_out`
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl Dense {
    fn zeros(fan_in: usize, fan_out: usize) -> Self {
        Self {
            weights: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
        }
    }
}

/// All trainable parameters; gradients and Adam moments share this shape.
#[derive(Clone, Debug, PartialEq)]
pub struct Parameters {
    pub layers: Vec<Dense>,
}

impl Parameters {
    pub fn zeros_like(&self) -> Self {
        Self {
            layers: self
                .layers
                .iter()
                .map(|l| Dense::zeros(l.weights.nrows(), l.weights.ncols()))
                .collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.bias.len())
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn same_shape(&self, other: &Self) -> bool {
        self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.weights.dim() == b.weights.dim() && a.bias.len() == b.bias.len())
    }

    pub fn all_finite(&self) -> bool {
        self.iter().all(|x| x.is_finite())
    }

    /// Flat view in layer order: each layer's weights (row-major) then its bias.
    pub fn iter(&self) -> impl Iterator<Item = &f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(l.bias.iter()))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut f64> + '_ {
        self.layers
            .iter_mut()
            .flat_map(|l| l.weights.iter_mut().chain(l.bias.iter_mut()))
    }

    pub fn add_assign(&mut self, other: &Self) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights += &b.weights;
            a.bias += &b.bias;
        }
    }

    pub fn scale(&mut self, factor: f64) {
        self.iter_mut().for_each(|x| *x *= factor);
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScorerNetwork {
    pub params: Parameters,
    pub hidden_activation: Activation,
    pub dropout_rate: f64,
}

/// Intermediate values of one forward pass, consumed by [`ScorerNetwork::backward`].
#[derive(Clone, Debug)]
pub struct ForwardTrace {
    /// Input of each layer (post-activation, post-dropout for hidden layers).
    pub inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    pub pre_activations: Vec<Array2<f64>>,
    /// Inverted-dropout multipliers (0 or `1/(1-d)`) per hidden layer.
    pub masks: Vec<Option<Array2<f64>>>,
}

impl ForwardTrace {
    pub fn documents(&self) -> usize {
        self.inputs.first().map_or(0, |x| x.nrows())
    }
}

impl ScorerNetwork {
    /// Glorot-uniform weights, zero biases, deterministic in `seed`.
    pub fn init(feature_count: usize, hidden: &[usize], dropout_rate: f64, seed: u64) -> Result<Self> {
        if feature_count == 0 {
            return Err(Error::InvalidArgument("feature_count must be >= 1".into()));
        }
        if hidden.contains(&0) {
            return Err(Error::InvalidArgument("hidden layer sizes must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&dropout_rate) {
            return Err(Error::InvalidArgument(format!(
                "dropout rate must lie in [0, 1), got {dropout_rate}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dims: Vec<usize> = std::iter::once(feature_count)
            .chain(hidden.iter().copied())
            .chain(std::iter::once(1))
            .collect();
        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                Dense {
                    weights: Array2::from_shape_simple_fn((fan_in, fan_out), || {
                        rng.random_range(-limit..=limit)
                    }),
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();
        Ok(Self {
            params: Parameters { layers },
            hidden_activation: Activation::Relu,
            dropout_rate,
        })
    }

    pub fn from_parameters(params: Parameters, hidden_activation: Activation, dropout_rate: f64) -> Result<Self> {
        if params.layers.is_empty() {
            return Err(Error::Shape("network needs at least one layer".into()));
        }
        for w in params.layers.windows(2) {
            if w[0].weights.ncols() != w[1].weights.nrows() {
                return Err(Error::Shape(format!(
                    "layer output {} does not match next input {}",
                    w[0].weights.ncols(),
                    w[1].weights.nrows()
                )));
            }
        }
        if params.layers.iter().any(|l| l.bias.len() != l.weights.ncols()) {
            return Err(Error::Shape("bias length must equal layer width".into()));
        }
        if params.layers.last().unwrap().weights.ncols() != 1 {
            return Err(Error::Shape("output layer must have width 1".into()));
        }
        Ok(Self {
            params,
            hidden_activation,
            dropout_rate,
        })
    }

    /// `[F, h1, ..., 1]`
    pub fn layer_dims(&self) -> Vec<usize> {
        let layers = &self.params.layers;
        std::iter::once(layers[0].weights.nrows())
            .chain(layers.iter().map(|l| l.weights.ncols()))
            .collect()
    }

    pub fn feature_count(&self) -> usize {
        self.params.layers[0].weights.nrows()
    }

    /// Scores `N` documents. Dropout is applied only when `train` is set.
    pub fn forward<R: Rng + ?Sized>(
        &self,
        features: ArrayView2<'_, f64>,
        train: bool,
        rng: &mut R,
    ) -> Result<(Vec<f64>, ForwardTrace)> {
        if features.ncols() != self.feature_count() {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.feature_count(),
                features.ncols()
            )));
        }
        if features.iter().any(|x| !x.is_finite()) {
            return Err(Error::NonFinite("input features".into()));
        }
        let depth = self.params.layers.len();
        let mut trace = ForwardTrace {
            inputs: Vec::with_capacity(depth),
            pre_activations: Vec::with_capacity(depth - 1),
            masks: Vec::with_capacity(depth - 1),
        };
        let mut x = features.to_owned();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let z = x.dot(&layer.weights) + &layer.bias;
            trace.inputs.push(x);
            if i + 1 == depth {
                let scores = z.column(0).to_vec();
                return Ok((scores, trace));
            }
            let mut h = match self.hidden_activation {
                Activation::Relu => z.mapv(|v| v.max(0.0)),
                Activation::Identity => z.clone(),
            };
            let mask = if train && self.dropout_rate > 0.0 {
                let keep = 1.0 - self.dropout_rate;
                let scale = 1.0 / keep;
                let d = self.dropout_rate;
                let mask = Array2::from_shape_simple_fn(h.dim(), || {
                    if rng.random::<f64>() < d {
                        0.0
                    } else {
                        scale
                    }
                });
                h *= &mask;
                Some(mask)
            } else {
                None
            };
            trace.pre_activations.push(z);
            trace.masks.push(mask);
            x = h;
        }
        unreachable!("network has an output layer")
    }

    /// Eval-mode scores without keeping the trace.
    pub fn predict(&self, features: ArrayView2<'_, f64>) -> Result<Vec<f64>> {
        let mut x = features.to_owned();
        if x.ncols() != self.feature_count() {
            return Err(Error::Shape(format!(
                "expected {} features, got {}",
                self.feature_count(),
                x.ncols()
            )));
        }
        let depth = self.params.layers.len();
        for (i, layer) in self.params.layers.iter().enumerate() {
            let mut z = x.dot(&layer.weights) + &layer.bias;
            if i + 1 < depth && self.hidden_activation == Activation::Relu {
                z.mapv_inplace(|v| v.max(0.0));
            }
            x = z;
        }
        Ok(x.column(0).to_vec())
    }

    /// Gradient of `sum_i dloss_dscores[i] * s_i` with respect to every parameter.
    pub fn backward(&self, trace: &ForwardTrace, dloss_dscores: &[f64]) -> Result<Parameters> {
        let depth = self.params.layers.len();
        if trace.inputs.len() != depth
            || trace.pre_activations.len() + 1 != depth
            || trace.masks.len() + 1 != depth
        {
            return Err(Error::Shape("trace does not match network depth".into()));
        }
        if dloss_dscores.len() != trace.documents() {
            return Err(Error::Shape(format!(
                "{} score gradients for {} documents",
                dloss_dscores.len(),
                trace.documents()
            )));
        }
        let mut grads = Vec::with_capacity(depth);
        let mut delta =
            Array2::from_shape_vec((dloss_dscores.len(), 1), dloss_dscores.to_vec()).expect("shape");
        for i in (0..depth).rev() {
            let layer = &self.params.layers[i];
            let input = &trace.inputs[i];
            if input.ncols() != layer.weights.nrows() {
                return Err(Error::Shape(format!("trace input of layer {i} has wrong width")));
            }
            grads.push(Dense {
                weights: input.t().dot(&delta),
                bias: delta.sum_axis(Axis(0)),
            });
            if i == 0 {
                break;
            }
            // into the previous hidden layer's output
            let mut upstream = delta.dot(&layer.weights.t());
            if let Some(mask) = &trace.masks[i - 1] {
                upstream *= mask;
            }
            if self.hidden_activation == Activation::Relu {
                Zip::from(&mut upstream)
                    .and(&trace.pre_activations[i - 1])
                    .for_each(|g, &z| {
                        if z <= 0.0 {
                            *g = 0.0;
                        }
                    });
            }
            delta = upstream;
        }
        grads.reverse();
        Ok(Parameters { layers: grads })
    }

    pub fn save(&self, path: impl AsRef<Path>, platt: Option<&PlattModel>) -> Result<()> {
        let path = path.as_ref();
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = BufWriter::new(file);
        write_checkpoint(&mut w, self, platt).map_err(|e| Error::io(path, e))?;
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<(Self, Option<PlattModel>)> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| Error::io(path, e))?;
        read_checkpoint(&mut BufReader::new(file))
    }
}

// Checkpoint layout, all little-endian:
//   magic  b"CALIRANK"
//   u32    format version (1)
//   u8     hidden activation (0 relu, 1 identity)
//   f64    dropout rate
//   u32    number of dims D, then D x u64 layer dims [F, h1, .., 1]
//   per layer: fan_in*fan_out f64 weights (row-major, in x out), fan_out f64 biases
//   u8     platt flag, then f64 scale, f64 offset when the flag is 1
const MAGIC: &[u8; 8] = b"CALIRANK";
const FORMAT_VERSION: u32 = 1;

fn write_checkpoint<W: Write>(w: &mut W, net: &ScorerNetwork, platt: Option<&PlattModel>) -> std::io::Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[match net.hidden_activation {
        Activation::Relu => 0,
        Activation::Identity => 1,
    }])?;
    w.write_all(&net.dropout_rate.to_le_bytes())?;
    let dims = net.layer_dims();
    w.write_all(&(dims.len() as u32).to_le_bytes())?;
    for d in &dims {
        w.write_all(&(*d as u64).to_le_bytes())?;
    }
    for x in net.params.iter() {
        w.write_all(&x.to_le_bytes())?;
    }
    match platt {
        Some(p) => {
            w.write_all(&[1])?;
            w.write_all(&p.scale.to_le_bytes())?;
            w.write_all(&p.offset.to_le_bytes())?;
        }
        None => w.write_all(&[0])?,
    }
    Ok(())
}

fn read_checkpoint<R: Read>(r: &mut R) -> Result<(ScorerNetwork, Option<PlattModel>)> {
    fn bytes<const N: usize>(r: &mut impl Read) -> Result<[u8; N]> {
        let mut buf = [0u8; N];
        r.read_exact(&mut buf)
            .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
        Ok(buf)
    }
    let f64_le = |r: &mut R| bytes::<8>(r).map(f64::from_le_bytes);

    if &bytes::<8>(r)? != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = u32::from_le_bytes(bytes(r)?);
    if version != FORMAT_VERSION {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let activation = match bytes::<1>(r)?[0] {
        0 => Activation::Relu,
        1 => Activation::Identity,
        other => return Err(Error::Checkpoint(format!("unknown activation tag {other}"))),
    };
    let dropout_rate = f64_le(r)?;
    let n_dims = u32::from_le_bytes(bytes(r)?) as usize;
    if !(2..=64).contains(&n_dims) {
        return Err(Error::Checkpoint(format!("implausible layer count {n_dims}")));
    }
    let dims: Vec<usize> = (0..n_dims)
        .map(|_| bytes::<8>(r).map(|b| u64::from_le_bytes(b) as usize))
        .collect::<Result<_>>()?;
    let mut layers = Vec::with_capacity(n_dims - 1);
    for w in dims.windows(2) {
        let weights: Vec<f64> = (0..w[0] * w[1]).map(|_| f64_le(r)).collect::<Result<_>>()?;
        let bias: Vec<f64> = (0..w[1]).map(|_| f64_le(r)).collect::<Result<_>>()?;
        layers.push(Dense {
            weights: Array2::from_shape_vec((w[0], w[1]), weights).expect("shape"),
            bias: Array1::from(bias),
        });
    }
    let platt = match bytes::<1>(r)?[0] {
        0 => None,
        1 => Some(PlattModel {
            scale: f64_le(r)?,
            offset: f64_le(r)?,
        }),
        other => return Err(Error::Checkpoint(format!("bad platt flag {other}"))),
    };
    let net = ScorerNetwork::from_parameters(Parameters { layers }, activation, dropout_rate)?;
    Ok((net, platt))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl AdamConfig {
    pub fn with_learning_rate(learning_rate: f64) -> Self {
        Self {
            learning_rate,
            ..Self::default()
        }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-7,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub m: Parameters,
    pub v: Parameters,
    pub step: u64,
    pub config: AdamConfig,
}

impl AdamState {
    pub fn new(net: &ScorerNetwork, config: AdamConfig) -> Self {
        Self {
            m: net.params.zeros_like(),
            v: net.params.zeros_like(),
            step: 0,
            config,
        }
    }

    /// One bias-corrected Adam update of `net` in place.
    pub fn step(&mut self, net: &mut ScorerNetwork, grad: &Parameters) -> Result<()> {
        if !grad.same_shape(&net.params) || !self.m.same_shape(&net.params) {
            return Err(Error::Shape("gradient does not match parameters".into()));
        }
        if !grad.all_finite() {
            return Err(Error::NonFinite("gradient".into()));
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - b1.powi(t);
        let c2 = 1.0 - b2.powi(t);
        for (((p, g), m), v) in net
            .params
            .iter_mut()
            .zip(grad.iter())
            .zip(self.m.iter_mut())
            .zip(self.v.iter_mut())
        {
            *m = b1 * *m + (1.0 - b1) * g;
            *v = b2 * *v + (1.0 - b2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}
