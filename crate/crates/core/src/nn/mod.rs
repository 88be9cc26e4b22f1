//! The trainable heuristic: a small convolutional network mapping a sensor
//! image to a nonnegative action-value vector.
//!
//! The reference architecture stacks two convolution blocks (each
//! convolution → non-learnable layer normalization → leaky ReLU), one dense
//! block, a dense output layer and a final `abs` stage that enforces the
//! nonnegative output the search relies on. Gradients are hand-written
//! reverse mode; the only optimizer is plain constant-rate SGD.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::env::Sensors;

mod layers;
pub mod checkpoint;

pub use checkpoint::CheckpointError;
pub use layers::{Layer, LayerAux, LAYER_NORM_EPS};

#[derive(Debug, Error, PartialEq)]
pub enum NnError {
    #[error("input shape {got_h}x{got_w} does not match network input {want_h}x{want_w}")]
    ShapeMismatch {
        want_h: usize,
        want_w: usize,
        got_h: usize,
        got_w: usize,
    },
    #[error("input contains a non-finite value")]
    NonFiniteInput,
    #[error("prediction and target lengths differ: {pred} vs {target}")]
    LengthMismatch { pred: usize, target: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("invalid architecture: {0}")]
    BadArchitecture(String),
}

/// One convolution block: `filters` kernels of `kernel`×`kernel`, valid
/// padding, square stride.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub filters: usize,
    pub kernel: usize,
    pub stride: usize,
}

/// Architecture description. Every conv and hidden dense block is followed
/// by a layer normalization and a leaky ReLU; the output layer is dense
/// followed by `abs`.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub input_height: usize,
    pub input_width: usize,
    pub convs: Vec<ConvSpec>,
    pub hidden: Vec<usize>,
    pub actions: usize,
    pub leaky_alpha: f64,
}

impl NetConfig {
    /// The reference architecture: 84×84 input, 16 8×8 stride-4 filters,
    /// 32 4×4 stride-2 filters, 256 dense units, leaky ReLU α = 0.3.
    pub fn reference(actions: usize) -> Self {
        NetConfig {
            input_height: 84,
            input_width: 84,
            convs: vec![
                ConvSpec {
                    filters: 16,
                    kernel: 8,
                    stride: 4,
                },
                ConvSpec {
                    filters: 32,
                    kernel: 4,
                    stride: 2,
                },
            ],
            hidden: vec![256],
            actions,
            leaky_alpha: 0.3,
        }
    }

    /// A deliberately small net for gradient checking.
    pub fn tiny() -> Self {
        NetConfig {
            input_height: 8,
            input_width: 8,
            convs: vec![ConvSpec {
                filters: 2,
                kernel: 3,
                stride: 1,
            }],
            hidden: vec![],
            actions: 4,
            leaky_alpha: 0.3,
        }
    }

    fn build_layers(&self) -> Result<Vec<Layer>, NnError> {
        if self.actions == 0 {
            return Err(NnError::BadArchitecture("zero actions".into()));
        }
        let mut layers = Vec::new();
        let (mut h, mut w, mut ch) = (self.input_height, self.input_width, 1usize);
        for conv in &self.convs {
            if conv.kernel == 0 || conv.stride == 0 || conv.kernel > h || conv.kernel > w {
                return Err(NnError::BadArchitecture(format!(
                    "conv {}x{} stride {} does not fit a {h}x{w} input",
                    conv.kernel, conv.kernel, conv.stride
                )));
            }
            let out_h = (h - conv.kernel) / conv.stride + 1;
            let out_w = (w - conv.kernel) / conv.stride + 1;
            layers.push(Layer::Conv {
                in_ch: ch,
                out_ch: conv.filters,
                kernel: conv.kernel,
                stride: conv.stride,
                in_h: h,
                in_w: w,
                out_h,
                out_w,
            });
            let size = conv.filters * out_h * out_w;
            layers.push(Layer::LayerNorm { size });
            layers.push(Layer::LeakyRelu {
                alpha: self.leaky_alpha,
                size,
            });
            h = out_h;
            w = out_w;
            ch = conv.filters;
        }
        let mut dim = ch * h * w;
        for &units in &self.hidden {
            layers.push(Layer::Dense {
                in_dim: dim,
                out_dim: units,
            });
            layers.push(Layer::LayerNorm { size: units });
            layers.push(Layer::LeakyRelu {
                alpha: self.leaky_alpha,
                size: units,
            });
            dim = units;
        }
        layers.push(Layer::Dense {
            in_dim: dim,
            out_dim: self.actions,
        });
        layers.push(Layer::Abs { size: self.actions });
        Ok(layers)
    }

    /// One-line architecture descriptor, stored in checkpoints.
    pub fn descriptor(&self) -> String {
        let mut parts = vec![format!("in={}x{}", self.input_height, self.input_width)];
        for c in &self.convs {
            parts.push(format!("conv={}x{}x{}", c.filters, c.kernel, c.stride));
        }
        for h in &self.hidden {
            parts.push(format!("hidden={h}"));
        }
        parts.push(format!("actions={}", self.actions));
        parts.push(format!("alpha={}", self.leaky_alpha));
        parts.join(" ")
    }

    pub fn parse_descriptor(text: &str) -> Result<Self, NnError> {
        let mut cfg = NetConfig {
            input_height: 0,
            input_width: 0,
            convs: Vec::new(),
            hidden: Vec::new(),
            actions: 0,
            leaky_alpha: 0.3,
        };
        let bad = |msg: &str| NnError::BadArchitecture(msg.to_string());
        for token in text.split_whitespace() {
            let (key, value) = token
                .split_once('=')
                .ok_or_else(|| bad(&format!("token without '=': {token}")))?;
            match key {
                "in" => {
                    let (h, w) = value
                        .split_once('x')
                        .ok_or_else(|| bad("malformed input size"))?;
                    cfg.input_height = h.parse().map_err(|_| bad("bad input height"))?;
                    cfg.input_width = w.parse().map_err(|_| bad("bad input width"))?;
                }
                "conv" => {
                    let nums: Vec<usize> = value
                        .split('x')
                        .map(|v| v.parse())
                        .collect::<Result<_, _>>()
                        .map_err(|_| bad("bad conv spec"))?;
                    if nums.len() != 3 {
                        return Err(bad("conv spec needs filters x kernel x stride"));
                    }
                    cfg.convs.push(ConvSpec {
                        filters: nums[0],
                        kernel: nums[1],
                        stride: nums[2],
                    });
                }
                "hidden" => cfg
                    .hidden
                    .push(value.parse().map_err(|_| bad("bad hidden size"))?),
                "actions" => cfg.actions = value.parse().map_err(|_| bad("bad action count"))?,
                "alpha" => cfg.leaky_alpha = value.parse().map_err(|_| bad("bad alpha"))?,
                other => return Err(bad(&format!("unknown descriptor key {other}"))),
            }
        }
        if cfg.input_height == 0 || cfg.actions == 0 {
            return Err(bad("descriptor missing input size or action count"));
        }
        Ok(cfg)
    }
}

/// Result of one SGD step.
#[derive(Debug, Clone)]
pub struct SgdOutcome {
    /// Mean pre-step batch loss.
    pub loss: f64,
    /// Pre-step loss of each batch element, for prioritized replay.
    pub per_example_loss: Vec<f64>,
}

/// The heuristic network. Parameters are `f32` (matching the checkpoint
/// format); all computation runs in `f64`.
#[derive(Debug, Clone)]
pub struct HeuristicNet {
    config: NetConfig,
    layers: Vec<Layer>,
    /// Parameter slice offset of each layer.
    offsets: Vec<usize>,
    params: Vec<f32>,
}

struct Trace {
    /// `bufs[0]` is the input; `bufs[i + 1]` the output of layer `i`.
    bufs: Vec<Vec<f64>>,
    aux: Vec<LayerAux>,
}

impl HeuristicNet {
    /// He-uniform weight init (biases zero), seeded and reproducible.
    pub fn new(config: NetConfig, seed: u64) -> Result<Self, NnError> {
        let mut net = Self::zeros(config)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for (i, layer) in net.layers.iter().enumerate() {
            let n = layer.param_count();
            if n == 0 {
                continue;
            }
            let fan_in = layer.fan_in() as f64;
            let limit = (6.0 / fan_in).sqrt();
            let weights = n - match layer {
                Layer::Conv { out_ch, .. } => *out_ch,
                Layer::Dense { out_dim, .. } => *out_dim,
                _ => 0,
            };
            let base = net.offsets[i];
            for w in 0..weights {
                net.params[base + w] = rng.gen_range(-limit..limit) as f32;
            }
        }
        Ok(net)
    }

    /// All-zero parameters; used by the loader and by tests.
    pub fn zeros(config: NetConfig) -> Result<Self, NnError> {
        let layers = config.build_layers()?;
        let mut offsets = Vec::with_capacity(layers.len());
        let mut total = 0;
        for layer in &layers {
            offsets.push(total);
            total += layer.param_count();
        }
        Ok(HeuristicNet {
            config,
            layers,
            offsets,
            params: vec![0.0; total],
        })
    }

    pub fn config(&self) -> &NetConfig {
        &self.config
    }

    pub fn descriptor(&self) -> String {
        self.config.descriptor()
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f32] {
        &self.params
    }

    pub fn set_param(&mut self, index: usize, value: f32) {
        self.params[index] = value;
    }

    pub(crate) fn set_params(&mut self, params: Vec<f32>) {
        assert_eq!(params.len(), self.params.len());
        self.params = params;
    }

    fn layer_params(&self, i: usize) -> &[f32] {
        &self.params[self.offsets[i]..self.offsets[i] + self.layers[i].param_count()]
    }

    fn validate_input(&self, sensors: &Sensors) -> Result<(), NnError> {
        if sensors.height() != self.config.input_height
            || sensors.width() != self.config.input_width
        {
            return Err(NnError::ShapeMismatch {
                want_h: self.config.input_height,
                want_w: self.config.input_width,
                got_h: sensors.height(),
                got_w: sensors.width(),
            });
        }
        if !sensors.data().iter().all(|v| v.is_finite()) {
            return Err(NnError::NonFiniteInput);
        }
        Ok(())
    }

    fn forward_trace(&self, sensors: &Sensors) -> Result<Trace, NnError> {
        self.validate_input(sensors)?;
        let mut bufs = Vec::with_capacity(self.layers.len() + 1);
        bufs.push(sensors.data().iter().map(|&v| v as f64).collect::<Vec<_>>());
        let mut aux = Vec::with_capacity(self.layers.len());
        for (i, layer) in self.layers.iter().enumerate() {
            let mut out = vec![0.0; layer.out_len()];
            let mut a = LayerAux::default();
            let (input, output) = (&bufs[i], &mut out);
            layer.forward(self.layer_params(i), input, output, &mut a);
            bufs.push(out);
            aux.push(a);
        }
        Ok(Trace { bufs, aux })
    }

    /// Maps a sensor image to the action-value vector. Deterministic given
    /// the parameters, and nonnegative by the final `abs` stage.
    pub fn forward(&self, sensors: &Sensors) -> Result<Vec<f64>, NnError> {
        let trace = self.forward_trace(sensors)?;
        Ok(trace.bufs.into_iter().last().expect("output buffer"))
    }

    /// Independent forward passes over a batch.
    pub fn forward_batch(&self, batch: &[&Sensors]) -> Result<Vec<Vec<f64>>, NnError> {
        batch.iter().map(|s| self.forward(s)).collect()
    }

    /// Smallest |input| over all kinked nonlinearities (leaky ReLU, abs)
    /// for this sample — finite-difference tests use it to skip
    /// kink-adjacent parameter coordinates.
    pub fn min_abs_preactivation(&self, sensors: &Sensors) -> Result<f64, NnError> {
        let trace = self.forward_trace(sensors)?;
        let mut min = f64::INFINITY;
        for (i, layer) in self.layers.iter().enumerate() {
            if layer.has_kink() {
                for &x in &trace.bufs[i] {
                    min = min.min(x.abs());
                }
            }
        }
        Ok(min)
    }

    /// Batch loss and its gradient with respect to every parameter, without
    /// touching the parameters.
    pub fn loss_gradients(
        &self,
        batch: &[(&Sensors, &[f32])],
    ) -> Result<(SgdOutcome, Vec<f64>), NnError> {
        if batch.is_empty() {
            return Err(NnError::EmptyBatch);
        }
        let a = self.config.actions as f64;
        let b = batch.len() as f64;
        let mut grads = vec![0.0f64; self.params.len()];
        let mut per_example = Vec::with_capacity(batch.len());
        for &(sensors, target) in batch {
            if target.len() != self.config.actions {
                return Err(NnError::LengthMismatch {
                    pred: self.config.actions,
                    target: target.len(),
                });
            }
            let trace = self.forward_trace(sensors)?;
            let output = trace.bufs.last().expect("output buffer");
            let mut example_loss = 0.0;
            let mut grad: Vec<f64> = Vec::with_capacity(self.config.actions);
            for (o, t) in output.iter().zip(target) {
                let d = o - *t as f64;
                example_loss += d * d;
                grad.push(2.0 * d / (a * b));
            }
            per_example.push(example_loss / a);
            self.backward(&trace, grad, &mut grads);
        }
        let loss = per_example.iter().sum::<f64>() / b;
        Ok((
            SgdOutcome {
                loss,
                per_example_loss: per_example,
            },
            grads,
        ))
    }

    fn backward(&self, trace: &Trace, grad_out: Vec<f64>, grads: &mut [f64]) {
        let mut g = grad_out;
        for i in (0..self.layers.len()).rev() {
            let layer = &self.layers[i];
            let mut grad_in = vec![0.0; layer.in_len()];
            let gp = &mut grads[self.offsets[i]..self.offsets[i] + layer.param_count()];
            layer.backward(
                self.layer_params(i),
                &trace.bufs[i],
                &trace.aux[i],
                &g,
                &mut grad_in,
                gp,
            );
            g = grad_in;
        }
    }

    /// One SGD step on a batch: `θ ← θ − lr · ∇θ (batch loss)`. Returns the
    /// pre-step loss. With `lr = 0` the parameters are bit-for-bit
    /// unchanged.
    pub fn sgd_step(&mut self, batch: &[(&Sensors, &[f32])], lr: f64) -> Result<SgdOutcome, NnError> {
        let (outcome, grads) = self.loss_gradients(batch)?;
        for (p, g) in self.params.iter_mut().zip(&grads) {
            *p = (*p as f64 - lr * *g) as f32;
        }
        Ok(outcome)
    }

    pub fn save(&self, path: &Path) -> Result<(), CheckpointError> {
        checkpoint::save_net(self, path)
    }

    pub fn load(path: &Path) -> Result<Self, CheckpointError> {
        checkpoint::load_net(path)
    }
}

/// Mean squared per-action error: `|target − pred|² / len(A)`.
pub fn mse_loss(pred: &[f64], target: &[f64]) -> Result<f64, NnError> {
    if pred.len() != target.len() {
        return Err(NnError::LengthMismatch {
            pred: pred.len(),
            target: target.len(),
        });
    }
    let sum: f64 = pred
        .iter()
        .zip(target)
        .map(|(p, t)| (t - p) * (t - p))
        .sum();
    Ok(sum / pred.len() as f64)
}
