//! Fully connected ReLU scoring model with manual reverse-mode gradients.
//!
//! The network maps a feature matrix to scores in `(0, 1)`: hidden layers
//! apply ReLU (with optional inverted dropout during training), the output
//! layer applies a logistic sigmoid. Everything runs in `f64` so gradient
//! checks are not confounded by precision.

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hidden-layer-count values searched during tuning.
pub const HIDDEN_LAYER_GRID: [usize; 3] = [2, 3, 4];
/// Hidden-layer-width values searched during tuning.
pub const HIDDEN_SIZE_GRID: [usize; 4] = [16, 32, 64, 128];
/// Dropout probabilities searched during tuning.
pub const DROPOUT_GRID: [f64; 3] = [0.0, 0.01, 0.1];
/// L2 penalties searched during tuning.
pub const L2_GRID: [f64; 3] = [0.0, 0.01, 0.05];

/// Scores are clamped into `[SCORE_FLOOR, 1 - SCORE_FLOOR]` so they stay
/// strictly inside (0, 1) and log-losses stay finite.
pub const SCORE_FLOOR: f64 = 1e-12;

/// Architecture and optimizer settings for one MLP.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpConfig {
    pub hidden_layers: usize,
    pub hidden_size: usize,
    pub dropout_prob: f64,
    pub l2_weight: f64,
    pub learning_rate: f64,
    pub init_seed: u64,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self {
            hidden_layers: 2,
            hidden_size: 64,
            dropout_prob: 0.0,
            l2_weight: 0.01,
            learning_rate: 0.01,
            init_seed: 0,
        }
    }
}

impl MlpConfig {
    /// Hard validity checks. Values outside the tuning grids are allowed;
    /// see [`MlpConfig::off_grid_notes`].
    pub fn validate(&self) -> Result<()> {
        if self.hidden_layers == 0 {
            return Err(Error::Config("hidden_layers must be >= 1".into()));
        }
        if self.hidden_size == 0 {
            return Err(Error::Config("hidden_size must be >= 1".into()));
        }
        if !(self.dropout_prob >= 0.0 && self.dropout_prob < 1.0) {
            return Err(Error::Config(format!(
                "dropout_prob {} not in [0, 1)",
                self.dropout_prob
            )));
        }
        if !(self.l2_weight >= 0.0 && self.l2_weight.is_finite()) {
            return Err(Error::Config(format!(
                "l2_weight {} must be finite and >= 0",
                self.l2_weight
            )));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!(
                "learning_rate {} must be finite and > 0",
                self.learning_rate
            )));
        }
        Ok(())
    }

    /// Human-readable notes for every field outside its default search grid.
    pub fn off_grid_notes(&self) -> Vec<String> {
        let mut notes = Vec::new();
        if !HIDDEN_LAYER_GRID.contains(&self.hidden_layers) {
            notes.push(format!("hidden_layers {} off grid", self.hidden_layers));
        }
        if !HIDDEN_SIZE_GRID.contains(&self.hidden_size) {
            notes.push(format!("hidden_size {} off grid", self.hidden_size));
        }
        if !DROPOUT_GRID.iter().any(|&v| v == self.dropout_prob) {
            notes.push(format!("dropout_prob {} off grid", self.dropout_prob));
        }
        if !L2_GRID.iter().any(|&v| v == self.l2_weight) {
            notes.push(format!("l2_weight {} off grid", self.l2_weight));
        }
        notes
    }
}

/// One dense layer: `weights` is `in x out`, `bias` has length `out`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weights: Array2<f64>,
    pub bias: Array1<f64>,
}

impl DenseLayer {
    fn zeros_like(&self) -> Self {
        Self {
            weights: Array2::zeros(self.weights.raw_dim()),
            bias: Array1::zeros(self.bias.raw_dim()),
        }
    }
}

/// All trainable parameters, ordered input-to-output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpParameters {
    pub layers: Vec<DenseLayer>,
}

/// Parameter gradients, mirroring [`MlpParameters`] shapes.
#[derive(Debug, Clone)]
pub struct MlpGradients {
    pub layers: Vec<DenseLayer>,
}

/// Whether a forward pass applies dropout.
#[derive(Debug, Clone, Copy)]
pub enum ForwardMode {
    /// Training pass: inverted dropout with the given seed.
    Train { dropout_seed: u64 },
    /// Evaluation pass: dropout disabled.
    Eval,
}

/// Everything the backward pass needs from a forward pass.
pub struct ForwardCache {
    /// Input to each layer (the batch for layer 0).
    layer_inputs: Vec<Array2<f64>>,
    /// Pre-activation of each hidden layer.
    hidden_pre: Vec<Array2<f64>>,
    /// Scaled dropout mask per hidden layer (entries 0 or 1/(1-p)).
    dropout_masks: Vec<Option<Array2<f64>>>,
    /// Clamped sigmoid outputs.
    scores: Array1<f64>,
}

impl ForwardCache {
    pub fn scores(&self) -> &Array1<f64> {
        &self.scores
    }
}

/// A scoring model `f: R^k -> (0, 1)`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Mlp {
    pub config: MlpConfig,
    pub input_dim: usize,
    pub params: MlpParameters,
}

fn sigmoid(z: f64) -> f64 {
    if z >= 0.0 {
        1.0 / (1.0 + (-z).exp())
    } else {
        let e = z.exp();
        e / (1.0 + e)
    }
}

impl Mlp {
    /// Initialize parameters: weights uniform in `(-1/sqrt(fan_in), +1/sqrt(fan_in))`,
    /// biases zero. Deterministic given `config.init_seed`.
    pub fn init(input_dim: usize, config: MlpConfig) -> Result<Self> {
        if input_dim == 0 {
            return Err(Error::Config("input_dim must be >= 1".into()));
        }
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let mut dims = vec![input_dim];
        dims.extend(std::iter::repeat(config.hidden_size).take(config.hidden_layers));
        dims.push(1);

        let layers = dims
            .windows(2)
            .map(|w| {
                let (fan_in, fan_out) = (w[0], w[1]);
                let bound = 1.0 / (fan_in as f64).sqrt();
                let weights =
                    Array2::from_shape_fn((fan_in, fan_out), |_| rng.random_range(-bound..bound));
                DenseLayer {
                    weights,
                    bias: Array1::zeros(fan_out),
                }
            })
            .collect();

        Ok(Self {
            config,
            input_dim,
            params: MlpParameters { layers },
        })
    }

    fn check_input(&self, x: &ArrayView2<f64>) -> Result<()> {
        if x.ncols() != self.input_dim {
            return Err(Error::Shape(format!(
                "batch has {} columns, model expects {}",
                x.ncols(),
                self.input_dim
            )));
        }
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Value("non-finite value in input batch".into()));
        }
        Ok(())
    }

    /// Forward pass. Returns clamped scores and the cache consumed by
    /// [`Mlp::backward`].
    pub fn forward(&self, x: ArrayView2<f64>, mode: ForwardMode) -> Result<(Array1<f64>, ForwardCache)> {
        self.check_input(&x)?;
        let n_layers = self.params.layers.len();
        let p = self.config.dropout_prob;
        let mut dropout_rng = match mode {
            ForwardMode::Train { dropout_seed } if p > 0.0 => {
                Some(ChaCha8Rng::seed_from_u64(dropout_seed))
            }
            _ => None,
        };

        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut hidden_pre = Vec::with_capacity(n_layers - 1);
        let mut dropout_masks = Vec::with_capacity(n_layers - 1);

        let mut activation = x.to_owned();
        for layer in &self.params.layers[..n_layers - 1] {
            let pre = activation.dot(&layer.weights) + &layer.bias;
            let mut post = pre.mapv(|z| z.max(0.0));
            let mask = dropout_rng.as_mut().map(|rng| {
                let keep = 1.0 - p;
                Array2::from_shape_fn(post.raw_dim(), |_| {
                    if rng.random_range(0.0..1.0) < keep {
                        1.0 / keep
                    } else {
                        0.0
                    }
                })
            });
            if let Some(m) = &mask {
                post *= m;
            }
            layer_inputs.push(activation);
            hidden_pre.push(pre);
            dropout_masks.push(mask);
            activation = post;
        }

        let out_layer = &self.params.layers[n_layers - 1];
        let pre_out = activation.dot(&out_layer.weights) + &out_layer.bias;
        layer_inputs.push(activation);
        let scores = pre_out
            .index_axis(Axis(1), 0)
            .mapv(|z| sigmoid(z).clamp(SCORE_FLOOR, 1.0 - SCORE_FLOOR));

        let cache = ForwardCache {
            layer_inputs,
            hidden_pre,
            dropout_masks,
            scores: scores.clone(),
        };
        Ok((scores, cache))
    }

    /// Evaluation-mode scores without keeping the cache.
    pub fn scores(&self, x: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.forward(x, ForwardMode::Eval)?.0)
    }

    /// Backpropagate `dL/dscore` through the cached forward pass. The
    /// returned gradients include the `l2_weight/2 * ||W||^2` term on every
    /// weight matrix (biases are not regularized).
    pub fn backward(&self, cache: &ForwardCache, upstream: ArrayView1<f64>) -> Result<MlpGradients> {
        let n_layers = self.params.layers.len();
        if cache.layer_inputs.len() != n_layers || cache.hidden_pre.len() != n_layers - 1 {
            return Err(Error::State("cache does not match model depth".into()));
        }
        for (input, layer) in cache.layer_inputs.iter().zip(&self.params.layers) {
            if input.ncols() != layer.weights.nrows() {
                return Err(Error::State("cache shapes do not match parameters".into()));
            }
        }
        let batch = cache.layer_inputs[0].nrows();
        if upstream.len() != batch || cache.scores.len() != batch {
            return Err(Error::State(format!(
                "upstream gradient has {} entries for a batch of {}",
                upstream.len(),
                batch
            )));
        }

        let mut grads: Vec<DenseLayer> = self.params.layers.iter().map(DenseLayer::zeros_like).collect();

        // d(loss)/d(pre-sigmoid) = upstream * score * (1 - score)
        let dz_out: Array1<f64> = upstream
            .iter()
            .zip(cache.scores.iter())
            .map(|(&u, &s)| u * s * (1.0 - s))
            .collect();
        let mut delta = dz_out.insert_axis(Axis(1));

        for l in (0..n_layers).rev() {
            let input = &cache.layer_inputs[l];
            grads[l].weights = input.t().dot(&delta);
            grads[l].bias = delta.sum_axis(Axis(0));
            if l > 0 {
                let mut da = delta.dot(&self.params.layers[l].weights.t());
                if let Some(mask) = &cache.dropout_masks[l - 1] {
                    da *= mask;
                }
                let relu_gate = cache.hidden_pre[l - 1].mapv(|z| if z > 0.0 { 1.0 } else { 0.0 });
                da *= &relu_gate;
                delta = da;
            }
        }

        if self.config.l2_weight > 0.0 {
            for (g, p) in grads.iter_mut().zip(&self.params.layers) {
                g.weights.scaled_add(self.config.l2_weight, &p.weights);
            }
        }

        Ok(MlpGradients { layers: grads })
    }

    /// Sum of squared weights (biases excluded), used for the L2 loss term.
    pub fn weight_sq_norm(&self) -> f64 {
        self.params
            .layers
            .iter()
            .map(|l| l.weights.iter().map(|w| w * w).sum::<f64>())
            .sum()
    }
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

/// Adam moment accumulators; shapes mirror the parameters they update.
#[derive(Debug, Clone)]
pub struct AdamState {
    first: Vec<DenseLayer>,
    second: Vec<DenseLayer>,
    step_count: u64,
}

impl AdamState {
    pub fn new(params: &MlpParameters) -> Self {
        Self {
            first: params.layers.iter().map(DenseLayer::zeros_like).collect(),
            second: params.layers.iter().map(DenseLayer::zeros_like).collect(),
            step_count: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update, in place.
    pub fn step(&mut self, params: &mut MlpParameters, grads: &MlpGradients, lr: f64) -> Result<()> {
        if params.layers.len() != grads.layers.len() || params.layers.len() != self.first.len() {
            return Err(Error::Shape("parameter/gradient layer counts differ".into()));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - ADAM_BETA1.powi(t);
        let bc2 = 1.0 - ADAM_BETA2.powi(t);

        for l in 0..params.layers.len() {
            if params.layers[l].weights.raw_dim() != grads.layers[l].weights.raw_dim() {
                return Err(Error::Shape(format!("gradient shape mismatch at layer {l}")));
            }
            let update = |p: &mut f64, g: f64, m: &mut f64, v: &mut f64| {
                *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
                *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
            };
            let (pl, gl) = (&mut params.layers[l], &grads.layers[l]);
            let (ml, vl) = (&mut self.first[l], &mut self.second[l]);
            for ((p, &g), (m, v)) in pl
                .weights
                .iter_mut()
                .zip(gl.weights.iter())
                .zip(ml.weights.iter_mut().zip(vl.weights.iter_mut()))
            {
                update(p, g, m, v);
            }
            for ((p, &g), (m, v)) in pl
                .bias
                .iter_mut()
                .zip(gl.bias.iter())
                .zip(ml.bias.iter_mut().zip(vl.bias.iter_mut()))
            {
                update(p, g, m, v);
            }
        }
        Ok(())
    }
}

/// Number of trainable scalars in a model with the given architecture.
pub fn parameter_count(input_dim: usize, config: &MlpConfig) -> usize {
    let mut dims = vec![input_dim];
    dims.extend(std::iter::repeat(config.hidden_size).take(config.hidden_layers));
    dims.push(1);
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

/// Serialized model bundle: everything needed to score raw CSV rows later.
///
/// Layout (JSON): `format_version`, `input_dim`, `config`, `params`
/// (layer-major weight matrices and bias vectors), the fitted
/// [`Preprocessor`](crate::data::Preprocessor) and the [`DataSchema`](crate::data::DataSchema)
/// it was fitted under. The layout is frozen at version 1.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ModelCheckpoint {
    pub format_version: u32,
    pub input_dim: usize,
    pub config: MlpConfig,
    pub params: MlpParameters,
    pub preprocessor: crate::data::Preprocessor,
    pub schema: crate::data::DataSchema,
}

impl ModelCheckpoint {
    pub const FORMAT_VERSION: u32 = 1;

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let ckpt: Self = serde_json::from_reader(std::io::BufReader::new(file))?;
        if ckpt.format_version != Self::FORMAT_VERSION {
            return Err(Error::Value(format!(
                "unsupported checkpoint format_version {}",
                ckpt.format_version
            )));
        }
        Ok(ckpt)
    }

    pub fn model(&self) -> Mlp {
        Mlp {
            config: self.config.clone(),
            input_dim: self.input_dim,
            params: self.params.clone(),
        }
    }
}
