//! DisBeaNet: a fully connected regression MLP mapping the seven box
//! features to distance and bearing.
//!
//! Weights are stored row-major (`out x in`) per layer. Hidden layers use a
//! configurable activation, the output layer is affine.

mod model_io;
mod train;

use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{
    extract_features, invert_norm, BearingEncoding, Detection, NormStats, NUM_FEATURES,
};
use crate::geodesy::{wrap_bearing, RangeBearing};

pub use model_io::{load_model, read_model, save_model, write_model, MODEL_VERSION};
pub use train::{
    hidden_layer_sweep, physical_rmse, train, LossHistory, OptimizerKind, SweepRow, TrainConfig,
    TrainOutcome,
};

/// Hidden width used when none is given.
pub const DEFAULT_HIDDEN_WIDTH: usize = 16;
/// Number of hidden layers in the reference architecture.
pub const DEFAULT_DEPTH: usize = 3;

#[derive(Debug, Error)]
pub enum MlpError {
    #[error("invalid layer spec: {0}")]
    InvalidSpec(String),
    #[error("input has {got} entries, network expects {expected}")]
    InputDim { expected: usize, got: usize },
    #[error("non-finite network input")]
    NonFiniteInput,
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("training set is empty")]
    EmptyTrainingSet,
    #[error("network has no normalization statistics attached")]
    MissingNormStats,
    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize },
    #[error("depth {depth}: {source}")]
    Sweep {
        depth: usize,
        #[source]
        source: Box<MlpError>,
    },
    #[error("model file: {0}")]
    Model(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Relu,
}

impl Activation {
    #[inline]
    fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Tanh => z.tanh(),
            Activation::Relu => z.max(0.0),
        }
    }

    /// Derivative expressed through the activation output.
    #[inline]
    fn derivative_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - a * a,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(format!("unknown activation {other:?} (expected tanh|relu)")),
        }
    }
}

/// Layer widths from input to output, plus the hidden activation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub sizes: Vec<usize>,
    pub activation: Activation,
}

impl LayerSpec {
    pub fn new(sizes: Vec<usize>, activation: Activation) -> Result<Self, MlpError> {
        let spec = Self { sizes, activation };
        spec.validate()?;
        Ok(spec)
    }

    /// `depth` hidden layers of `width` units between the feature input and
    /// the targets implied by `encoding`.
    pub fn with_depth(
        depth: usize,
        width: usize,
        activation: Activation,
        encoding: BearingEncoding,
    ) -> Result<Self, MlpError> {
        let mut sizes = vec![NUM_FEATURES];
        sizes.extend(std::iter::repeat_n(width, depth));
        sizes.push(encoding.target_dim());
        Self::new(sizes, activation)
    }

    pub fn validate(&self) -> Result<(), MlpError> {
        let s = &self.sizes;
        if s.len() < 3 {
            return Err(MlpError::InvalidSpec(format!(
                "need at least one hidden layer, got sizes {s:?}"
            )));
        }
        if s[0] != NUM_FEATURES {
            return Err(MlpError::InvalidSpec(format!(
                "input width must be {NUM_FEATURES}, got {}",
                s[0]
            )));
        }
        let out = *s.last().unwrap();
        if out != BearingEncoding::Degrees.target_dim()
            && out != BearingEncoding::Sincos.target_dim()
        {
            return Err(MlpError::InvalidSpec(format!(
                "output width must be 2 or 3, got {out}"
            )));
        }
        if s.contains(&0) {
            return Err(MlpError::InvalidSpec(format!("zero-width layer in {s:?}")));
        }
        Ok(())
    }

    pub fn hidden_depth(&self) -> usize {
        self.sizes.len() - 2
    }

    pub fn output_dim(&self) -> usize {
        *self.sizes.last().unwrap()
    }
}

/// One affine layer: `out = W * in + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major, `outputs x inputs`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
}

impl Dense {
    fn zeros(inputs: usize, outputs: usize) -> Self {
        Self {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            biases: vec![0.0; outputs],
        }
    }

    #[inline]
    fn affine(&self, input: &[f64], out: &mut [f64]) {
        for (i, o) in out.iter_mut().enumerate() {
            let row = &self.weights[i * self.inputs..(i + 1) * self.inputs];
            *o = self.biases[i] + row.iter().zip(input).map(|(w, x)| w * x).sum::<f64>();
        }
    }

    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainMetadata {
    pub seed: u64,
    pub epochs_run: usize,
    pub best_val_loss: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub spec: LayerSpec,
    pub layers: Vec<Dense>,
    pub norm_stats: Option<NormStats>,
    pub metadata: TrainMetadata,
}

/// Per-parameter gradients (or optimizer state) shaped like a network.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl Gradients {
    pub fn zeros_like(net: &Network) -> Self {
        Self {
            weights: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.weights.len()])
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| vec![0.0; l.biases.len()])
                .collect(),
        }
    }

    fn fill_zero(&mut self) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .for_each(|v| v.fill(0.0));
    }

    fn scale(&mut self, k: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|g| *g *= k);
    }

    pub fn iter(&self) -> impl Iterator<Item = f64> + '_ {
        self.weights.iter().chain(&self.biases).flatten().copied()
    }
}

/// Activation buffers reused across forward/backward passes.
#[derive(Debug, Clone)]
pub(crate) struct Workspace {
    activations: Vec<Vec<f64>>,
    delta: Vec<f64>,
    delta_prev: Vec<f64>,
}

impl Workspace {
    pub(crate) fn new(spec: &LayerSpec) -> Self {
        let widest = *spec.sizes.iter().max().unwrap();
        Self {
            activations: spec.sizes.iter().map(|&n| vec![0.0; n]).collect(),
            delta: vec![0.0; widest],
            delta_prev: vec![0.0; widest],
        }
    }

    fn output(&self) -> &[f64] {
        self.activations.last().unwrap()
    }
}

/// Mean of squared componentwise errors.
pub fn loss(pred: &[f64], target: &[f64]) -> f64 {
    debug_assert_eq!(pred.len(), target.len());
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (p - t) * (p - t))
        .sum();
    sum / pred.len() as f64
}

/// Fresh network: weights ~ N(0, 1/fan_in), biases zero.
pub fn init(spec: &LayerSpec, seed: u64) -> Result<Network, MlpError> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let layers = spec
        .sizes
        .windows(2)
        .map(|w| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let dist = Normal::new(0.0, 1.0 / (fan_in as f64).sqrt()).expect("positive scale");
            let mut layer = Dense::zeros(fan_in, fan_out);
            layer
                .weights
                .iter_mut()
                .for_each(|v| *v = dist.sample(&mut rng));
            layer
        })
        .collect();
    Ok(Network {
        spec: spec.clone(),
        layers,
        norm_stats: None,
        metadata: TrainMetadata {
            seed,
            ..Default::default()
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Prediction {
    pub range_bearing: RangeBearing,
    /// The raw distance output was negative and has been clamped to zero.
    pub distance_clamped: bool,
}

impl Network {
    /// Network with every parameter zero.
    pub fn zeros(spec: &LayerSpec) -> Result<Self, MlpError> {
        spec.validate()?;
        Ok(Self {
            spec: spec.clone(),
            layers: spec
                .sizes
                .windows(2)
                .map(|w| Dense::zeros(w[0], w[1]))
                .collect(),
            norm_stats: None,
            metadata: TrainMetadata::default(),
        })
    }

    pub fn with_norm_stats(mut self, stats: NormStats) -> Self {
        self.norm_stats = Some(stats);
        self
    }

    pub fn input_dim(&self) -> usize {
        self.spec.sizes[0]
    }

    pub fn output_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn num_parameters(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weights.len() + l.biases.len())
            .sum()
    }

    pub fn parameters(&self) -> impl Iterator<Item = f64> + '_ {
        self.layers
            .iter()
            .flat_map(|l| l.weights.iter().chain(&l.biases))
            .copied()
    }

    fn check_input(&self, x: &[f64]) -> Result<(), MlpError> {
        if x.len() != self.input_dim() {
            return Err(MlpError::InputDim {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(MlpError::NonFiniteInput);
        }
        Ok(())
    }

    pub(crate) fn forward_into(&self, x: &[f64], ws: &mut Workspace) {
        ws.activations[0].copy_from_slice(x);
        let last = self.layers.len() - 1;
        for (l, layer) in self.layers.iter().enumerate() {
            let (before, after) = ws.activations.split_at_mut(l + 1);
            let out = &mut after[0];
            layer.affine(&before[l], out);
            if l != last {
                let act = self.spec.activation;
                out.iter_mut().for_each(|v| *v = act.apply(*v));
            }
        }
    }

    /// Normalized outputs for a normalized input vector.
    pub fn forward(&self, x: &[f64]) -> Result<Vec<f64>, MlpError> {
        self.check_input(x)?;
        let mut ws = Workspace::new(&self.spec);
        self.forward_into(x, &mut ws);
        Ok(ws.output().to_vec())
    }

    /// Adds d(loss)/d(params) for one sample to `grads`; returns the loss.
    pub(crate) fn accumulate_gradients(
        &self,
        x: &[f64],
        target: &[f64],
        ws: &mut Workspace,
        grads: &mut Gradients,
    ) -> f64 {
        self.forward_into(x, ws);
        let k = self.output_dim();
        let pred = ws.activations.last().unwrap();
        let sample_loss = loss(pred, target);

        let scale = 2.0 / k as f64;
        for (d, (p, t)) in ws.delta.iter_mut().zip(pred.iter().zip(target)) {
            *d = scale * (p - t);
        }

        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            let input = &ws.activations[l];
            let delta = &ws.delta[..layer.outputs];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            for (i, &d) in delta.iter().enumerate() {
                gb[i] += d;
                let row = &mut gw[i * layer.inputs..(i + 1) * layer.inputs];
                row.iter_mut().zip(input).for_each(|(g, a)| *g += d * a);
            }
            if l == 0 {
                break;
            }
            let act = self.spec.activation;
            let prev = &mut ws.delta_prev[..layer.inputs];
            prev.fill(0.0);
            for (i, &d) in delta.iter().enumerate() {
                let row = &layer.weights[i * layer.inputs..(i + 1) * layer.inputs];
                prev.iter_mut().zip(row).for_each(|(p, w)| *p += w * d);
            }
            prev.iter_mut()
                .zip(input)
                .for_each(|(p, a)| *p *= act.derivative_from_output(*a));
            std::mem::swap(&mut ws.delta, &mut ws.delta_prev);
        }
        sample_loss
    }

    /// Exact gradients of `loss(forward(x), target)` by reverse-mode chain rule.
    pub fn backward(&self, x: &[f64], target: &[f64]) -> Result<Gradients, MlpError> {
        self.check_input(x)?;
        if target.len() != self.output_dim() {
            return Err(MlpError::InputDim {
                expected: self.output_dim(),
                got: target.len(),
            });
        }
        let mut ws = Workspace::new(&self.spec);
        let mut grads = Gradients::zeros_like(self);
        self.accumulate_gradients(x, target, &mut ws, &mut grads);
        Ok(grads)
    }

    /// Distance and bearing for one detection in physical units.
    pub fn predict(
        &self,
        d: &Detection,
        frame_w: f64,
        frame_h: f64,
    ) -> Result<Prediction, MlpError> {
        let stats = self.norm_stats.as_ref().ok_or(MlpError::MissingNormStats)?;
        let features = extract_features(d, frame_w, frame_h);
        let out = self.forward(&stats.normalize_features(&features))?;
        let (distance, bearing) = invert_norm(stats, &out);
        let distance_clamped = distance < 0.0;
        if distance_clamped {
            log::warn!("negative distance {distance} NM clamped to 0 at t={}", d.t);
        }
        Ok(Prediction {
            range_bearing: RangeBearing {
                distance_nm: distance.max(0.0),
                bearing_deg: wrap_bearing(bearing),
            },
            distance_clamped,
        })
    }
}

/// See [`Network::predict`].
pub fn predict(
    net: &Network,
    d: &Detection,
    frame_w: f64,
    frame_h: f64,
) -> Result<Prediction, MlpError> {
    net.predict(d, frame_w, frame_h)
}
