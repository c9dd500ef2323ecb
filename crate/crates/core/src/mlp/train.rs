//! Minibatch training loop, optimizers and the hidden-layer sweep.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{init, Activation, Gradients, LayerSpec, MlpError, Network, Workspace};
use crate::dataset::{apply_norm, invert_norm, LabeledSample, NormStats, NormalizedSample};
use crate::eval::{circular_rmse_deg, rmse};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    /// SGD with classical momentum.
    #[default]
    Sgd,
    Adam,
}

impl std::str::FromStr for OptimizerKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "sgd" => Ok(OptimizerKind::Sgd),
            "adam" => Ok(OptimizerKind::Adam),
            other => Err(format!("unknown optimizer {other:?} (expected sgd|adam)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    /// SGD momentum coefficient.
    pub momentum: f64,
    pub seed: u64,
    /// Stop after this many epochs without a new best validation loss.
    pub patience: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 5000,
            batch_size: 32,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Sgd,
            momentum: 0.9,
            seed: 42,
            patience: Some(200),
        }
    }
}

impl TrainConfig {
    /// The original long-run budget.
    pub const FULL_EPOCHS: usize = 120_000;

    pub fn validate(&self) -> Result<(), MlpError> {
        if self.epochs == 0 {
            return Err(MlpError::InvalidConfig("epochs must be >= 1".into()));
        }
        if self.batch_size == 0 {
            return Err(MlpError::InvalidConfig("batch size must be >= 1".into()));
        }
        // zero is accepted: it freezes the parameters
        if !(self.learning_rate.is_finite() && self.learning_rate >= 0.0) {
            return Err(MlpError::InvalidConfig(format!(
                "learning rate {} must be finite and non-negative",
                self.learning_rate
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(MlpError::InvalidConfig(format!(
                "momentum {} outside [0, 1)",
                self.momentum
            )));
        }
        Ok(())
    }
}

/// Mean loss per epoch on normalized targets.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LossHistory {
    pub train: Vec<f64>,
    /// Empty when training ran without a validation set.
    pub val: Vec<f64>,
}

impl LossHistory {
    pub fn epochs(&self) -> usize {
        self.train.len()
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Parameters from the epoch with the best validation loss.
    pub network: Network,
    pub history: LossHistory,
    pub best_epoch: usize,
}

enum Optimizer {
    Sgd {
        momentum: f64,
        velocity: Gradients,
    },
    Adam {
        m: Gradients,
        v: Gradients,
        step: i32,
    },
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    fn new(cfg: &TrainConfig, net: &Network) -> Self {
        match cfg.optimizer {
            OptimizerKind::Sgd => Optimizer::Sgd {
                momentum: cfg.momentum,
                velocity: Gradients::zeros_like(net),
            },
            OptimizerKind::Adam => Optimizer::Adam {
                m: Gradients::zeros_like(net),
                v: Gradients::zeros_like(net),
                step: 0,
            },
        }
    }

    fn step(&mut self, net: &mut Network, grads: &Gradients, lr: f64) {
        match self {
            Optimizer::Sgd { momentum, velocity } => {
                for (l, layer) in net.layers.iter_mut().enumerate() {
                    let pairs = [
                        (
                            &mut layer.weights,
                            &grads.weights[l],
                            &mut velocity.weights[l],
                        ),
                        (&mut layer.biases, &grads.biases[l], &mut velocity.biases[l]),
                    ];
                    for (params, g, vel) in pairs {
                        for ((p, g), v) in params.iter_mut().zip(g).zip(vel.iter_mut()) {
                            *v = *momentum * *v + g;
                            *p -= lr * *v;
                        }
                    }
                }
            }
            Optimizer::Adam { m, v, step } => {
                *step += 1;
                let c1 = 1.0 - ADAM_BETA1.powi(*step);
                let c2 = 1.0 - ADAM_BETA2.powi(*step);
                for (l, layer) in net.layers.iter_mut().enumerate() {
                    let pairs = [
                        (
                            &mut layer.weights,
                            &grads.weights[l],
                            &mut m.weights[l],
                            &mut v.weights[l],
                        ),
                        (
                            &mut layer.biases,
                            &grads.biases[l],
                            &mut m.biases[l],
                            &mut v.biases[l],
                        ),
                    ];
                    for (params, g, m1, m2) in pairs {
                        for (((p, g), a), b) in params
                            .iter_mut()
                            .zip(g)
                            .zip(m1.iter_mut())
                            .zip(m2.iter_mut())
                        {
                            *a = ADAM_BETA1 * *a + (1.0 - ADAM_BETA1) * g;
                            *b = ADAM_BETA2 * *b + (1.0 - ADAM_BETA2) * g * g;
                            *p -= lr * (*a / c1) / ((*b / c2).sqrt() + ADAM_EPS);
                        }
                    }
                }
            }
        }
    }
}

fn mean_loss(net: &Network, data: &[NormalizedSample], ws: &mut Workspace) -> f64 {
    let total: f64 = data
        .iter()
        .map(|s| {
            net.forward_into(&s.features, ws);
            super::loss(ws.output(), &s.targets)
        })
        .sum();
    total / data.len() as f64
}

/// Trains `net` with seeded minibatch descent, keeping the parameters of the
/// epoch with the lowest validation loss (training loss if `val` is empty).
pub fn train(
    mut net: Network,
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    cfg: &TrainConfig,
) -> Result<TrainOutcome, MlpError> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(MlpError::EmptyTrainingSet);
    }
    let stats = net.norm_stats.clone().ok_or(MlpError::MissingNormStats)?;
    if stats.target_dim() != net.output_dim() {
        return Err(MlpError::InvalidSpec(format!(
            "network has {} outputs but statistics describe {} targets",
            net.output_dim(),
            stats.target_dim()
        )));
    }
    let train_data: Vec<NormalizedSample> =
        train_set.iter().map(|s| apply_norm(&stats, s)).collect();
    let val_data: Vec<NormalizedSample> = val_set.iter().map(|s| apply_norm(&stats, s)).collect();

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut optimizer = Optimizer::new(cfg, &net);
    let mut grads = Gradients::zeros_like(&net);
    let mut ws = Workspace::new(&net.spec);
    let mut order: Vec<usize> = (0..train_data.len()).collect();
    let mut history = LossHistory::default();

    let mut best_loss = f64::INFINITY;
    let mut best_layers = net.layers.clone();
    let mut best_epoch = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            grads.fill_zero();
            for &i in batch {
                let s = &train_data[i];
                epoch_loss +=
                    net.accumulate_gradients(&s.features, &s.targets, &mut ws, &mut grads);
            }
            grads.scale(1.0 / batch.len() as f64);
            optimizer.step(&mut net, &grads, cfg.learning_rate);
        }
        let train_loss = epoch_loss / train_data.len() as f64;
        history.train.push(train_loss);
        let monitored = if val_data.is_empty() {
            train_loss
        } else {
            let v = mean_loss(&net, &val_data, &mut ws);
            history.val.push(v);
            v
        };
        if !train_loss.is_finite() || !monitored.is_finite() {
            return Err(MlpError::Diverged { epoch });
        }
        if monitored < best_loss {
            best_loss = monitored;
            best_layers.clone_from(&net.layers);
            best_epoch = epoch;
        } else if cfg.patience.is_some_and(|p| epoch - best_epoch >= p) {
            log::debug!("early stop at epoch {epoch}, best {best_epoch}");
            break;
        }
    }

    net.layers = best_layers;
    net.metadata.seed = cfg.seed;
    net.metadata.epochs_run = history.epochs();
    net.metadata.best_val_loss = Some(best_loss);
    Ok(TrainOutcome {
        network: net,
        history,
        best_epoch,
    })
}

/// One row of the hidden-layer sweep table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub depth: usize,
    pub epochs_run: usize,
    /// Validation RMSE on normalized targets (sqrt of the best validation loss).
    pub val_rmse: f64,
    pub val_rmse_distance_nm: f64,
    pub val_rmse_bearing_deg: f64,
}

/// Distance (NM) and circular bearing (deg) RMSE of a network over samples.
pub fn physical_rmse(
    net: &Network,
    stats: &NormStats,
    val: &[LabeledSample],
) -> Result<(f64, f64), MlpError> {
    let mut pred_d = Vec::with_capacity(val.len());
    let mut pred_b = Vec::with_capacity(val.len());
    for s in val {
        let out = net.forward(&stats.normalize_features(&s.features))?;
        let (d, b) = invert_norm(stats, &out);
        pred_d.push(d);
        pred_b.push(b);
    }
    let true_d: Vec<f64> = val.iter().map(|s| s.target_distance_nm).collect();
    let true_b: Vec<f64> = val.iter().map(|s| s.target_bearing_deg).collect();
    let rd = rmse(&pred_d, &true_d).map_err(|e| MlpError::InvalidConfig(e.to_string()))?;
    let rb =
        circular_rmse_deg(&pred_b, &true_b).map_err(|e| MlpError::InvalidConfig(e.to_string()))?;
    Ok((rd, rb))
}

/// Trains one network per hidden depth with identical seed and config and
/// reports validation RMSEs. Networks are returned alongside the table.
pub fn hidden_layer_sweep(
    train_set: &[LabeledSample],
    val_set: &[LabeledSample],
    stats: &NormStats,
    width: usize,
    depths: &[usize],
    activation: Activation,
    cfg: &TrainConfig,
) -> Result<Vec<(SweepRow, Network)>, MlpError> {
    if depths.is_empty() {
        return Err(MlpError::InvalidConfig("depth list is empty".into()));
    }
    if val_set.is_empty() {
        return Err(MlpError::InvalidConfig(
            "sweep needs a validation set".into(),
        ));
    }
    depths
        .iter()
        .map(|&depth| {
            let annotate = |e: MlpError| MlpError::Sweep {
                depth,
                source: Box::new(e),
            };
            let spec = LayerSpec::with_depth(depth, width, activation, stats.encoding)
                .map_err(annotate)?;
            let net = init(&spec, cfg.seed)
                .map_err(annotate)?
                .with_norm_stats(stats.clone());
            let outcome = train(net, train_set, val_set, cfg).map_err(annotate)?;
            let (rd, rb) = physical_rmse(&outcome.network, stats, val_set).map_err(annotate)?;
            log::info!("depth {depth}: distance rmse {rd:.5} NM, bearing rmse {rb:.4} deg");
            let row = SweepRow {
                depth,
                epochs_run: outcome.history.epochs(),
                val_rmse: outcome
                    .network
                    .metadata
                    .best_val_loss
                    .unwrap_or(f64::NAN)
                    .sqrt(),
                val_rmse_distance_nm: rd,
                val_rmse_bearing_deg: rb,
            };
            Ok((row, outcome.network))
        })
        .collect()
}
