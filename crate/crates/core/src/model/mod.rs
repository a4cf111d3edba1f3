//! Convolutional social pooling base learner.
//!
//! Every vehicle history goes through one shared LSTM encoder. Neighbor states
//! fill a 13×3 social tensor that is pooled by two convolutions and a max-pool;
//! the pooled features follow the target's own state in the context vector. With
//! maneuvers enabled, a softmax head predicts the six maneuver probabilities and
//! the decoder is conditioned on a maneuver one-hot.

mod persist;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::autodiff::{Graph, GridPlacement, Var};
use crate::data::{GridSpec, ManeuverClass, TrajectorySample, GRID_COLS, GRID_ROWS, MANEUVER_COUNT};
use crate::nn::{init_uniform, lstm_cell, lstm_input_projection, lstm_step, LstmWeights};
use crate::tensor::{Tensor, TensorError};

pub use persist::{read_weights, write_weights, WEIGHTS_FORMAT_VERSION};

#[derive(Debug, Error)]
pub enum ModelError {
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("weight file: {0}")]
    Format(String),
    #[error("{path}: {source}")]
    Io {
        path: std::path::PathBuf,
        #[source]
        source: std::io::Error,
    },
}

type Result<T> = std::result::Result<T, ModelError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Maneuver-conditioned, six decoded sequences.
    WithManeuvers,
    /// Single unconditioned sequence.
    WithoutManeuvers,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub encoder_hidden: usize,
    pub decoder_hidden: usize,
    pub conv1_depth: usize,
    pub conv2_depth: usize,
    pub t_h: usize,
    pub t_f: usize,
    pub grid: GridSpec,
    pub leaky_alpha: f64,
    /// Meters per network unit: inputs are divided by it, predicted means and
    /// standard deviations multiplied by it.
    pub position_scale: f64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            encoder_hidden: 64,
            decoder_hidden: 128,
            conv1_depth: 64,
            conv2_depth: 16,
            t_h: 15,
            t_f: 25,
            grid: GridSpec::default(),
            leaky_alpha: 0.1,
            position_scale: 10.0,
        }
    }
}

const CONV1: (usize, usize) = (3, 3);
const CONV2: (usize, usize) = (3, 1);
const POOL: (usize, usize) = (2, 1);

impl ModelConfig {
    /// Hidden sizes 4/8, conv depths 4/4, t_h = 3, t_f = 4.
    pub fn tiny() -> Self {
        ModelConfig {
            encoder_hidden: 4,
            decoder_hidden: 8,
            conv1_depth: 4,
            conv2_depth: 4,
            t_h: 3,
            t_f: 4,
            position_scale: 1.0,
            ..ModelConfig::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let sizes = [
            ("encoder_hidden", self.encoder_hidden),
            ("decoder_hidden", self.decoder_hidden),
            ("conv1_depth", self.conv1_depth),
            ("conv2_depth", self.conv2_depth),
            ("t_h", self.t_h),
            ("t_f", self.t_f),
        ];
        if let Some((name, _)) = sizes.iter().find(|(_, v)| *v == 0) {
            return Err(ModelError::Config(format!("{name} must be positive")));
        }
        if !(self.position_scale > 0.0) || !(self.leaky_alpha >= 0.0) || !(self.grid.cell_length > 0.0) {
            return Err(ModelError::Config(
                "scale, alpha and cell length must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Spatial size after conv(3×3) → conv(3×1) → maxpool(2×1).
    pub fn pooled_dims(&self) -> (usize, usize) {
        let h = (GRID_ROWS - CONV1.0 + 1 - CONV2.0 + 1) / POOL.0;
        let w = (GRID_COLS - CONV1.1 + 1 - CONV2.1 + 1) / POOL.1;
        (h, w)
    }

    pub fn pooled_len(&self) -> usize {
        let (h, w) = self.pooled_dims();
        self.conv2_depth * h * w
    }

    pub fn context_len(&self) -> usize {
        self.encoder_hidden + self.pooled_len()
    }

    fn decoder_input_len(&self, variant: Variant) -> usize {
        match variant {
            Variant::WithManeuvers => self.context_len() + MANEUVER_COUNT,
            Variant::WithoutManeuvers => self.context_len(),
        }
    }
}

/// Bivariate Gaussian over one future position; `s_x`, `s_y` are standard deviations.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaussianStep {
    pub m_x: f64,
    pub m_y: f64,
    pub s_x: f64,
    pub s_y: f64,
    pub r: f64,
}

impl GaussianStep {
    pub fn is_valid(&self) -> bool {
        self.s_x > 0.0 && self.s_y > 0.0 && self.r.abs() < 1.0 && self.m_x.is_finite() && self.m_y.is_finite()
    }

    fn from_row(row: &[f64]) -> Self {
        GaussianStep {
            m_x: row[0],
            m_y: row[1],
            s_x: row[2],
            s_y: row[3],
            r: row[4],
        }
    }
}

/// Probabilities over the six maneuvers, indexed by [`ManeuverClass::slot`].
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManeuverDistribution {
    pub p: [f64; MANEUVER_COUNT],
}

impl ManeuverDistribution {
    pub fn new(p: [f64; MANEUVER_COUNT]) -> Result<Self> {
        let total: f64 = p.iter().sum();
        if p.iter().any(|v| !(*v >= 0.0)) || (total - 1.0).abs() > 1e-9 {
            return Err(ModelError::Usage(format!("not a distribution: {p:?}")));
        }
        Ok(ManeuverDistribution { p })
    }

    pub fn uniform() -> Self {
        ManeuverDistribution {
            p: [1.0 / MANEUVER_COUNT as f64; MANEUVER_COUNT],
        }
    }

    pub fn one_hot(m: ManeuverClass) -> Self {
        let mut p = [0.0; MANEUVER_COUNT];
        p[m.slot()] = 1.0;
        ManeuverDistribution { p }
    }

    /// Most probable maneuver; ties resolve to the lowest index.
    pub fn argmax(&self) -> ManeuverClass {
        let mut best = 0;
        for (i, &v) in self.p.iter().enumerate() {
            if v > self.p[best] {
                best = i;
            }
        }
        ManeuverClass::from_slot(best).expect("slot < 6")
    }

    pub fn prob(&self, m: ManeuverClass) -> f64 {
        self.p[m.slot()]
    }
}

/// Output of one base learner on one sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BaseLearnerPrediction {
    pub variant: Variant,
    /// Uniform placeholder for the maneuver-free variant.
    pub maneuver_probs: ManeuverDistribution,
    /// `6 × t_f` (one sequence per maneuver slot) or `1 × t_f`.
    pub gaussians: Vec<Vec<GaussianStep>>,
}

impl BaseLearnerPrediction {
    /// Sequence decoded under `m`, or the single sequence of the maneuver-free variant.
    pub fn sequence(&self, m: ManeuverClass) -> &[GaussianStep] {
        match self.variant {
            Variant::WithManeuvers => &self.gaussians[m.slot()],
            Variant::WithoutManeuvers => &self.gaussians[0],
        }
    }
}

/// Ordered, named parameter tensors.
#[derive(Clone, Debug, PartialEq)]
pub struct Weights {
    entries: Vec<(String, Tensor)>,
}

impl Weights {
    pub fn new(entries: Vec<(String, Tensor)>) -> Self {
        Weights { entries }
    }

    pub fn get(&self, name: &str) -> Result<&Tensor> {
        self.entries
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, t)| t)
            .ok_or_else(|| ModelError::Format(format!("missing tensor `{name}`")))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.entries.iter().map(|(n, t)| (n.as_str(), t))
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.entries.iter().map(|(_, t)| t).collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.entries.iter_mut().map(|(_, t)| t).collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn param_count(&self) -> usize {
        self.entries.iter().map(|(_, t)| t.len()).sum()
    }

    /// Hex SHA-256 over names, shapes and little-endian values.
    pub fn checksum(&self) -> String {
        use sha2::{Digest, Sha256};
        let mut h = Sha256::new();
        for (name, t) in &self.entries {
            h.update(name.as_bytes());
            for d in t.shape() {
                h.update((*d as u64).to_le_bytes());
            }
            for v in t.data() {
                h.update(v.to_le_bytes());
            }
        }
        hex::encode(h.finalize())
    }
}

/// Expected `(name, shape, fan_in)` of every parameter.
fn layout(cfg: &ModelConfig, variant: Variant) -> Vec<(&'static str, Vec<usize>, usize)> {
    let (he, hd) = (cfg.encoder_hidden, cfg.decoder_hidden);
    let (c1, c2) = (cfg.conv1_depth, cfg.conv2_depth);
    let ctx = cfg.context_len();
    let dec_in = cfg.decoder_input_len(variant);
    let mut l = vec![
        ("encoder.w_ih", vec![2, 4 * he], 2),
        ("encoder.w_hh", vec![he, 4 * he], he),
        ("encoder.bias", vec![4 * he], he),
        ("conv1.kernel", vec![c1, he, CONV1.0, CONV1.1], he * CONV1.0 * CONV1.1),
        ("conv1.bias", vec![c1], he * CONV1.0 * CONV1.1),
        ("conv2.kernel", vec![c2, c1, CONV2.0, CONV2.1], c1 * CONV2.0 * CONV2.1),
        ("conv2.bias", vec![c2], c1 * CONV2.0 * CONV2.1),
    ];
    if variant == Variant::WithManeuvers {
        l.push(("maneuver.weight", vec![ctx, MANEUVER_COUNT], ctx));
        l.push(("maneuver.bias", vec![MANEUVER_COUNT], ctx));
    }
    l.extend([
        ("decoder.w_ih", vec![dec_in, 4 * hd], dec_in),
        ("decoder.w_hh", vec![hd, 4 * hd], hd),
        ("decoder.bias", vec![4 * hd], hd),
        ("output.weight", vec![hd, 5], hd),
        ("output.bias", vec![5], hd),
    ]);
    l
}

/// A trained (or initialized) base learner, numbered from 1.
#[derive(Clone, Debug, PartialEq)]
pub struct BaseLearner {
    pub index: usize,
    pub variant: Variant,
    pub config: ModelConfig,
    pub weights: Weights,
}

/// Graph handles of all parameters.
pub(crate) struct Bound {
    pub(crate) params: Vec<Var>,
    encoder: LstmWeights,
    conv1: (Var, Var),
    conv2: (Var, Var),
    maneuver: Option<(Var, Var)>,
    decoder: LstmWeights,
    output: (Var, Var),
}

/// Encoder/pooling outputs for a batch of samples.
pub(crate) struct Encoded {
    pub(crate) target_state: Var,
    pub(crate) social: Var,
    pub(crate) context: Var,
}

impl BaseLearner {
    /// Seeded uniform initialization in `±1/√fan_in`.
    pub fn init(index: usize, variant: Variant, config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let entries = layout(&config, variant)
            .into_iter()
            .map(|(name, shape, fan_in)| (name.to_string(), init_uniform(&shape, fan_in, &mut rng)))
            .collect();
        Ok(BaseLearner {
            index,
            variant,
            config,
            weights: Weights::new(entries),
        })
    }

    /// Builds a learner from explicit weights, checking names and shapes.
    pub fn from_weights(index: usize, variant: Variant, config: ModelConfig, weights: Weights) -> Result<Self> {
        config.validate()?;
        let expected = layout(&config, variant);
        if expected.len() != weights.len() {
            return Err(ModelError::Format(format!(
                "{} tensors, expected {}",
                weights.len(),
                expected.len()
            )));
        }
        for ((name, shape, _), (got_name, t)) in expected.iter().zip(weights.iter()) {
            if *name != got_name || shape.as_slice() != t.shape() {
                return Err(ModelError::Format(format!(
                    "tensor `{got_name}` {:?}, expected `{name}` {shape:?}",
                    t.shape()
                )));
            }
        }
        Ok(BaseLearner {
            index,
            variant,
            config,
            weights,
        })
    }

    pub fn checksum(&self) -> String {
        self.weights.checksum()
    }

    pub(crate) fn bind<'a>(&'a self, g: &mut Graph<'a>) -> Result<Bound> {
        let mut params = Vec::with_capacity(self.weights.len());
        let mut p = |name: &str| -> Result<Var> {
            let v = g.param(self.weights.get(name)?);
            params.push(v);
            Ok(v)
        };
        let encoder = LstmWeights {
            w_ih: p("encoder.w_ih")?,
            w_hh: p("encoder.w_hh")?,
            bias: p("encoder.bias")?,
        };
        let conv1 = (p("conv1.kernel")?, p("conv1.bias")?);
        let conv2 = (p("conv2.kernel")?, p("conv2.bias")?);
        let maneuver = match self.variant {
            Variant::WithManeuvers => Some((p("maneuver.weight")?, p("maneuver.bias")?)),
            Variant::WithoutManeuvers => None,
        };
        let decoder = LstmWeights {
            w_ih: p("decoder.w_ih")?,
            w_hh: p("decoder.w_hh")?,
            bias: p("decoder.bias")?,
        };
        let output = (p("output.weight")?, p("output.bias")?);
        Ok(Bound {
            params,
            encoder,
            conv1,
            conv2,
            maneuver,
            decoder,
            output,
        })
    }

    fn check_sample(&self, s: &TrajectorySample) -> Result<()> {
        let n = self.config.t_h + 1;
        if s.target_history.len() != n || s.neighbors.iter().any(|nb| nb.history.len() != n) {
            return Err(ModelError::Usage(format!(
                "sample {} history length differs from t_h + 1 = {n}",
                s.sample_id
            )));
        }
        if s.neighbors
            .iter()
            .any(|nb| nb.cell.row >= GRID_ROWS || nb.cell.col >= GRID_COLS)
        {
            return Err(ModelError::Usage(format!(
                "sample {} has a neighbor outside the grid",
                s.sample_id
            )));
        }
        Ok(())
    }

    /// Encodes all vehicles of a batch and pools the social tensor.
    pub(crate) fn encode_batch(&self, g: &mut Graph<'_>, b: &Bound, samples: &[&TrajectorySample]) -> Result<Encoded> {
        for s in samples {
            self.check_sample(s)?;
        }
        let cfg = &self.config;
        let batch = samples.len();
        let mut placements = Vec::new();
        let mut histories: Vec<&[crate::data::Point]> = samples.iter().map(|s| s.target_history.as_slice()).collect();
        for (bi, s) in samples.iter().enumerate() {
            for nb in &s.neighbors {
                placements.push(GridPlacement {
                    batch: bi,
                    row: nb.cell.row,
                    col: nb.cell.col,
                    source: histories.len(),
                });
                histories.push(&nb.history);
            }
        }
        let vehicles = histories.len();
        let he = cfg.encoder_hidden;
        let mut h = g.constant(Tensor::zeros(&[vehicles, he]));
        let mut c = g.constant(Tensor::zeros(&[vehicles, he]));
        let inv = 1.0 / cfg.position_scale;
        for step in 0..=cfg.t_h {
            let data = histories
                .iter()
                .flat_map(|hist| [hist[step].x * inv, hist[step].y * inv])
                .collect();
            let x = g.constant(Tensor::matrix(vehicles, 2, data)?);
            (h, c) = lstm_cell(g, x, h, c, &b.encoder)?;
        }
        let target_rows: Vec<usize> = (0..batch).collect();
        let target_state = g.select_rows(h, &target_rows)?;
        let social = g.scatter_grid(h, &placements, batch, GRID_ROWS, GRID_COLS)?;
        let pooled = self.pool_graph(g, b, social)?;
        let context = g.concat_cols(&[target_state, pooled])?;
        Ok(Encoded {
            target_state,
            social,
            context,
        })
    }

    /// conv(3×3) → leaky → conv(3×1) → leaky → maxpool(2×1) → flatten, `B × pooled_len`.
    pub(crate) fn pool_graph(&self, g: &mut Graph<'_>, b: &Bound, social: Var) -> Result<Var> {
        let alpha = self.config.leaky_alpha;
        let shape = g.value(social).shape().to_vec();
        let expected = [self.config.encoder_hidden, GRID_ROWS, GRID_COLS];
        if shape.len() != 4 || shape[1..] != expected {
            return Err(ModelError::Config(format!(
                "social tensor {shape:?}, expected [B, {}, {GRID_ROWS}, {GRID_COLS}]",
                self.config.encoder_hidden
            )));
        }
        let batch = shape[0];
        let x = g.conv2d(social, b.conv1.0)?;
        let x = g.channel_bias(x, b.conv1.1)?;
        let x = g.leaky_relu(x, alpha)?;
        let x = g.conv2d(x, b.conv2.0)?;
        let x = g.channel_bias(x, b.conv2.1)?;
        let x = g.leaky_relu(x, alpha)?;
        let x = g.maxpool2d(x, POOL.0, POOL.1)?;
        Ok(g.reshape(x, &[batch, self.config.pooled_len()])?)
    }

    /// Softmax maneuver head, `B × 6`.
    pub(crate) fn maneuver_graph(&self, g: &mut Graph<'_>, b: &Bound, context: Var) -> Result<Var> {
        let (w, bias) = b
            .maneuver
            .ok_or_else(|| ModelError::Usage("maneuver head requested on the maneuver-free variant".into()))?;
        let logits = g.matmul(context, w)?;
        let logits = g.add_row(logits, bias)?;
        Ok(g.softmax(logits)?)
    }

    /// Unrolls the decoder `t_f` steps on a constant input; returns one `R × 5`
    /// parameter matrix per future step.
    pub(crate) fn decode_graph(
        &self,
        g: &mut Graph<'_>,
        b: &Bound,
        context: Var,
        maneuvers: Option<&[ManeuverClass]>,
    ) -> Result<Vec<Var>> {
        let rows = g.value(context).dims2("decode")?.0;
        let input = match (self.variant, maneuvers) {
            (Variant::WithManeuvers, Some(ms)) => {
                if ms.len() != rows {
                    return Err(ModelError::Usage(format!("{} maneuvers for {rows} rows", ms.len())));
                }
                let mut onehot = Tensor::zeros(&[rows, MANEUVER_COUNT]);
                for (i, m) in ms.iter().enumerate() {
                    onehot.data_mut()[i * MANEUVER_COUNT + m.slot()] = 1.0;
                }
                let oh = g.constant(onehot);
                g.concat_cols(&[context, oh])?
            }
            (Variant::WithoutManeuvers, None) => context,
            (Variant::WithManeuvers, None) => {
                return Err(ModelError::Usage(
                    "maneuver required by the maneuver-conditioned decoder".into(),
                ))
            }
            (Variant::WithoutManeuvers, Some(_)) => {
                return Err(ModelError::Usage("maneuver-free decoder takes no maneuver".into()))
            }
        };
        let hd = self.config.decoder_hidden;
        let proj = lstm_input_projection(g, input, &b.decoder)?;
        let mut h = g.constant(Tensor::zeros(&[rows, hd]));
        let mut c = g.constant(Tensor::zeros(&[rows, hd]));
        let mut steps = Vec::with_capacity(self.config.t_f);
        for _ in 0..self.config.t_f {
            (h, c) = lstm_step(g, proj, h, c, &b.decoder)?;
            let raw = g.matmul(h, b.output.0)?;
            let raw = g.add_row(raw, b.output.1)?;
            steps.push(g.gaussian_head(raw, self.config.position_scale)?);
        }
        Ok(steps)
    }

    /// Final encoder state of the target and the `encoder_hidden × 13 × 3` social tensor.
    pub fn encode(&self, sample: &TrajectorySample) -> Result<(Vec<f64>, Tensor)> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let enc = self.encode_batch(&mut g, &b, &[sample])?;
        let state = g.value(enc.target_state).data().to_vec();
        let social = g
            .value(enc.social)
            .clone()
            .reshape(&[self.config.encoder_hidden, GRID_ROWS, GRID_COLS])?;
        Ok((state, social))
    }

    /// Pooled social features of one `encoder_hidden × 13 × 3` tensor.
    pub fn pool(&self, social: &Tensor) -> Result<Vec<f64>> {
        let shape = social.shape();
        if shape.len() != 3 {
            return Err(ModelError::Config(format!("social tensor shape {shape:?}")));
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let batched = social.clone().reshape(&[1, shape[0], shape[1], shape[2]]);
        let x = g.constant(batched.map_err(ModelError::from)?);
        let pooled = self.pool_graph(&mut g, &b, x)?;
        Ok(g.value(pooled).data().to_vec())
    }

    /// Decoder context: target state followed by pooled social features.
    pub fn context(&self, sample: &TrajectorySample) -> Result<Vec<f64>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let enc = self.encode_batch(&mut g, &b, &[sample])?;
        Ok(g.value(enc.context).data().to_vec())
    }

    fn context_var(&self, g: &mut Graph<'_>, context: &[f64]) -> Result<Var> {
        if context.len() != self.config.context_len() {
            return Err(ModelError::Config(format!(
                "context length {}, expected {}",
                context.len(),
                self.config.context_len()
            )));
        }
        Ok(g.constant(Tensor::matrix(1, context.len(), context.to_vec())?))
    }

    pub fn predict_maneuvers(&self, context: &[f64]) -> Result<ManeuverDistribution> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let ctx = self.context_var(&mut g, context)?;
        let probs = self.maneuver_graph(&mut g, &b, ctx)?;
        let mut p = [0.0; MANEUVER_COUNT];
        p.copy_from_slice(g.value(probs).data());
        Ok(ManeuverDistribution { p })
    }

    pub fn decode(&self, context: &[f64], maneuver: Option<ManeuverClass>) -> Result<Vec<GaussianStep>> {
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let ctx = self.context_var(&mut g, context)?;
        let ms = maneuver.map(|m| [m]);
        let steps = self.decode_graph(&mut g, &b, ctx, ms.as_ref().map(|m| m.as_slice()))?;
        Ok(steps
            .iter()
            .map(|&s| GaussianStep::from_row(g.value(s).data()))
            .collect())
    }

    pub fn forward(&self, sample: &TrajectorySample) -> Result<BaseLearnerPrediction> {
        Ok(self.forward_batch(&[sample])?.pop().expect("one prediction per sample"))
    }

    /// Batched inference: all maneuvers decoded for every sample.
    pub fn forward_batch(&self, samples: &[&TrajectorySample]) -> Result<Vec<BaseLearnerPrediction>> {
        if samples.is_empty() {
            return Ok(Vec::new());
        }
        let mut g = Graph::new();
        let b = self.bind(&mut g)?;
        let enc = self.encode_batch(&mut g, &b, samples)?;
        let batch = samples.len();
        let t_f = self.config.t_f;
        match self.variant {
            Variant::WithManeuvers => {
                let probs = self.maneuver_graph(&mut g, &b, enc.context)?;
                let rows: Vec<usize> = (0..batch)
                    .flat_map(|i| std::iter::repeat_n(i, MANEUVER_COUNT))
                    .collect();
                let ms: Vec<ManeuverClass> = (0..batch).flat_map(|_| ManeuverClass::ALL).collect();
                let ctx = g.select_rows(enc.context, &rows)?;
                let steps = self.decode_graph(&mut g, &b, ctx, Some(&ms))?;
                Ok((0..batch)
                    .map(|i| {
                        let mut p = [0.0; MANEUVER_COUNT];
                        p.copy_from_slice(g.value(probs).row(i));
                        let gaussians = (0..MANEUVER_COUNT)
                            .map(|m| {
                                (0..t_f)
                                    .map(|t| GaussianStep::from_row(g.value(steps[t]).row(i * MANEUVER_COUNT + m)))
                                    .collect()
                            })
                            .collect();
                        BaseLearnerPrediction {
                            variant: self.variant,
                            maneuver_probs: ManeuverDistribution { p },
                            gaussians,
                        }
                    })
                    .collect())
            }
            Variant::WithoutManeuvers => {
                let steps = self.decode_graph(&mut g, &b, enc.context, None)?;
                Ok((0..batch)
                    .map(|i| BaseLearnerPrediction {
                        variant: self.variant,
                        maneuver_probs: ManeuverDistribution::uniform(),
                        gaussians: vec![(0..t_f)
                            .map(|t| GaussianStep::from_row(g.value(steps[t]).row(i)))
                            .collect()],
                    })
                    .collect())
            }
        }
    }
}
