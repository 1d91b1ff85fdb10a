//! Two-stream lip-motion recognizer with a regional feedback gate.
//!
//! Input layout is `[N, 3, 28, 200]`: xyz as channels, frames as height and
//! landmarks as width. The landmark stream sees the gated input
//! `W ⊙ θ + W`; the frame stream sees the raw input. Their feature maps are
//! concatenated on channels and passed to a residual backbone (2× average
//! pooling ahead of each stage), global average pooling and a fully
//! connected head.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::to_canonical_json;
use crate::error::{Error, Result};
use crate::prior::PriorVector;
use crate::rng::{self, streams};
use crate::sequence::S3dlmSequence;
use crate::tensor::init::kaiming_uniform;
use crate::tensor::{Graph, Tensor, Var};
use crate::{FRAMES, LANDMARKS};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    Baseline,
    RfmOnly,
    RfmPrior,
    RfmPriorOpposed,
}

impl AblationMode {
    /// Row order of the ablation table.
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Baseline,
        AblationMode::RfmOnly,
        AblationMode::RfmPriorOpposed,
        AblationMode::RfmPrior,
    ];

    pub fn name(self) -> &'static str {
        match self {
            AblationMode::Baseline => "baseline",
            AblationMode::RfmOnly => "rfm_only",
            AblationMode::RfmPrior => "rfm_prior",
            AblationMode::RfmPriorOpposed => "rfm_prior_opposed",
        }
    }

    pub fn has_rfm(self) -> bool {
        self != AblationMode::Baseline
    }

    pub fn needs_prior(self) -> bool {
        matches!(self, AblationMode::RfmPrior | AblationMode::RfmPriorOpposed)
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StageConfig {
    pub blocks: usize,
    pub width: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub num_speakers: usize,
    pub landmark_stream_channels: usize,
    pub frame_stream_channels: usize,
    pub backbone_stages: Vec<StageConfig>,
    /// Output widths of the fully connected layers; the last is `num_speakers`.
    pub fc_dims: Vec<usize>,
    pub ablation_mode: AblationMode,
    /// Multiplier applied to standardized inputs before the network.
    #[serde(default = "one")]
    pub input_scale: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            num_speakers: 68,
            landmark_stream_channels: 32,
            frame_stream_channels: 32,
            backbone_stages: vec![
                StageConfig { blocks: 1, width: 64 },
                StageConfig { blocks: 1, width: 128 },
            ],
            fc_dims: vec![1024, 256, 68],
            ablation_mode: AblationMode::RfmPrior,
            input_scale: 1.0,
        }
    }
}

impl ModelConfig {
    /// Small network that trains in seconds on one core.
    pub fn desk(num_speakers: usize, mode: AblationMode) -> Self {
        Self {
            num_speakers,
            landmark_stream_channels: 4,
            frame_stream_channels: 4,
            backbone_stages: vec![StageConfig { blocks: 1, width: 8 }],
            fc_dims: vec![num_speakers],
            ablation_mode: mode,
            input_scale: 1.0,
        }
    }

    /// Smallest useful network, for exhaustive gradient checks.
    pub fn micro(num_speakers: usize, mode: AblationMode) -> Self {
        Self {
            num_speakers,
            landmark_stream_channels: 2,
            frame_stream_channels: 1,
            backbone_stages: vec![StageConfig { blocks: 1, width: 2 }],
            fc_dims: vec![3, num_speakers],
            ablation_mode: mode,
            input_scale: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidArgument(m.into()));
        if self.num_speakers == 0 {
            return bad("num_speakers must be positive");
        }
        if self.landmark_stream_channels == 0 || self.frame_stream_channels == 0 {
            return bad("stream channel counts must be positive");
        }
        if self.backbone_stages.iter().any(|s| s.blocks == 0 || s.width == 0) {
            return bad("backbone stages need positive block counts and widths");
        }
        if self.fc_dims.last() != Some(&self.num_speakers) {
            return bad("fc_dims must end at num_speakers");
        }
        if self.fc_dims.contains(&0) {
            return bad("fc_dims must be positive");
        }
        if !(self.input_scale.is_finite() && self.input_scale > 0.0) {
            return bad("input_scale must be positive");
        }
        Ok(())
    }

    fn merged_channels(&self) -> usize {
        self.landmark_stream_channels + self.frame_stream_channels
    }
}

/// Trainable per-landmark gate `θ`.
#[derive(Clone, Debug, PartialEq)]
pub struct FeedbackVector {
    pub theta: Vec<f64>,
}

impl FeedbackVector {
    pub fn new(theta: Vec<f64>) -> Result<Self> {
        if theta.len() != LANDMARKS {
            return Err(Error::Dimension {
                op: "feedback",
                axis: "landmarks",
                expected: LANDMARKS,
                got: theta.len(),
            });
        }
        Ok(Self { theta })
    }
}

/// Initial gate: `p`, `1 − p`, constant 0.5, or none for the baseline.
pub fn init_feedback(mode: AblationMode, prior: Option<&PriorVector>) -> Result<Option<FeedbackVector>> {
    let theta = match mode {
        AblationMode::Baseline => return Ok(None),
        AblationMode::RfmOnly => vec![0.5; LANDMARKS],
        AblationMode::RfmPrior => prior
            .ok_or(Error::MissingPrior { mode: mode.name() })?
            .as_vec(),
        AblationMode::RfmPriorOpposed => crate::prior::opposite_prior(
            prior.ok_or(Error::MissingPrior { mode: mode.name() })?,
        )
        .as_vec(),
    };
    FeedbackVector::new(theta).map(Some)
}

/// Plain gradient step `θ ← θ − lr·∂L/∂θ`.
pub fn update_feedback(theta: Option<&mut FeedbackVector>, grad: &[f64], lr: f64) -> Result<()> {
    let theta = theta.ok_or(Error::NoFeedback)?;
    if grad.len() != theta.theta.len() {
        return Err(Error::Dimension {
            op: "update_feedback",
            axis: "landmarks",
            expected: theta.theta.len(),
            got: grad.len(),
        });
    }
    theta.theta.iter_mut().zip(grad).for_each(|(t, g)| *t -= lr * g);
    Ok(())
}

/// `W ⊙ θ + W`, with `θ` broadcast over batch, channels and frames.
pub fn rfm_apply(g: &mut Graph, w: Var, theta: Var) -> Result<Var> {
    let gated = g.hadamard_landmark(w, theta)?;
    g.add(gated, w)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
}

/// Weight tensors in declaration order; the gate, if any, is kept apart.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    config: ModelConfig,
    params: Vec<Param>,
    pub feedback: Option<FeedbackVector>,
    norm: InputNorm,
}

fn param_shapes(cfg: &ModelConfig) -> Vec<(String, Vec<usize>, usize)> {
    let mut out = Vec::new();
    let mut conv = |name: String, k: usize, c: usize, kh: usize, kw: usize| {
        out.push((format!("{name}.weight"), vec![k, c, kh, kw], c * kh * kw));
        out.push((format!("{name}.bias"), vec![k], 0));
    };
    conv("landmark.conv".into(), cfg.landmark_stream_channels, 3, 5, 5);
    conv("frame.point".into(), cfg.frame_stream_channels, 3, 1, 1);
    conv("frame.temporal".into(), cfg.frame_stream_channels, cfg.frame_stream_channels, 3, 1);
    let mut width = cfg.merged_channels();
    for (s, stage) in cfg.backbone_stages.iter().enumerate() {
        for b in 0..stage.blocks {
            let name = format!("stage{s}.block{b}");
            conv(format!("{name}.conv1"), stage.width, width, 3, 3);
            conv(format!("{name}.conv2"), stage.width, stage.width, 3, 3);
            if width != stage.width {
                conv(format!("{name}.proj"), stage.width, width, 1, 1);
            }
            width = stage.width;
        }
    }
    for (i, &d) in cfg.fc_dims.iter().enumerate() {
        out.push((format!("fc{i}.weight"), vec![width, d], width));
        out.push((format!("fc{i}.bias"), vec![d], 0));
        width = d;
    }
    out
}

/// Per-(axis, landmark) affine map `(v − mean) · gain` applied to inputs.
#[derive(Clone, Debug, PartialEq)]
pub struct InputNorm {
    /// `[3 · 200]`, axis-major.
    pub mean: Vec<f64>,
    pub gain: Vec<f64>,
}

impl InputNorm {
    pub const LEN: usize = 3 * LANDMARKS;

    pub fn identity() -> Self {
        Self {
            mean: vec![0.0; Self::LEN],
            gain: vec![1.0; Self::LEN],
        }
    }

    /// Standardizes each coordinate over all frames of `seqs`; constant
    /// coordinates keep unit gain.
    pub fn fit(seqs: &[&S3dlmSequence]) -> Self {
        let mut sum = vec![0.0; Self::LEN];
        let mut sq = vec![0.0; Self::LEN];
        for s in seqs {
            for frame in s.data().chunks(LANDMARKS * 3) {
                for (l, p) in frame.chunks(3).enumerate() {
                    for (c, &v) in p.iter().enumerate() {
                        sum[c * LANDMARKS + l] += v;
                        sq[c * LANDMARKS + l] += v * v;
                    }
                }
            }
        }
        let n = (seqs.len() * FRAMES).max(1) as f64;
        let mean: Vec<f64> = sum.iter().map(|s| s / n).collect();
        let gain = sq
            .iter()
            .zip(&mean)
            .map(|(q, m)| {
                let sd = (q / n - m * m).max(0.0).sqrt();
                if sd > 1e-9 { 1.0 / sd } else { 1.0 }
            })
            .collect();
        Self { mean, gain }
    }

    fn validate(&self) -> Result<()> {
        for v in [&self.mean, &self.gain] {
            if v.len() != Self::LEN {
                return Err(Error::Dimension {
                    op: "input_norm",
                    axis: "axis·landmark",
                    expected: Self::LEN,
                    got: v.len(),
                });
            }
        }
        if self.mean.iter().chain(&self.gain).any(|v| !v.is_finite()) {
            return Err(Error::InvalidArgument("input normalization must be finite".into()));
        }
        Ok(())
    }
}

/// Packs sequences into a `[N, 3, 28, 200]` input tensor, normalized and scaled.
pub fn batch_tensor(seqs: &[&S3dlmSequence], norm: &InputNorm, scale: f64) -> Tensor {
    let mut data = Vec::with_capacity(seqs.len() * S3dlmSequence::LEN);
    for s in seqs {
        let cf = s.to_channels_first();
        for (c, plane) in cf.chunks(FRAMES * LANDMARKS).enumerate() {
            let (m, g) = (&norm.mean[c * LANDMARKS..][..LANDMARKS], &norm.gain[c * LANDMARKS..][..LANDMARKS]);
            for row in plane.chunks(LANDMARKS) {
                data.extend(row.iter().zip(m).zip(g).map(|((v, m), g)| (v - m) * g * scale));
            }
        }
    }
    Tensor::new(vec![seqs.len(), 3, FRAMES, LANDMARKS], data).expect("fixed sequence size")
}

/// Graph handles created by one forward pass.
#[derive(Debug)]
pub struct Bound {
    pub logits: Var,
    /// Leaves of `Model::params`, in order.
    pub params: Vec<Var>,
    pub theta: Option<Var>,
}

const MAGIC: &[u8; 4] = b"3LMN";
const HEAD_INIT_GAIN: f64 = 0.01;
const CHECKPOINT_VERSION: u8 = 2;

impl Model {
    /// Kaiming-uniform weights (output layer scaled by 0.01) and zero biases
    /// from the `INIT` stream of `seed`.
    pub fn new(config: ModelConfig, feedback: Option<FeedbackVector>, seed: u64) -> Result<Self> {
        config.validate()?;
        Self::check_feedback(&config, feedback.as_ref())?;
        let mut rng = rng::stream(seed, streams::INIT);
        let head = format!("fc{}.weight", config.fc_dims.len() - 1);
        let params = param_shapes(&config)
            .into_iter()
            .map(|(name, shape, fan_in)| {
                let mut value = if fan_in == 0 {
                    Tensor::zeros(&shape)
                } else {
                    kaiming_uniform(&shape, fan_in, &mut rng)
                };
                if name == head {
                    // Near-zero logits: step-0 loss sits at ln C.
                    value.data_mut().iter_mut().for_each(|v| *v *= HEAD_INIT_GAIN);
                }
                Param { name, value }
            })
            .collect();
        Ok(Self {
            config,
            params,
            feedback,
            norm: InputNorm::identity(),
        })
    }

    fn check_feedback(config: &ModelConfig, feedback: Option<&FeedbackVector>) -> Result<()> {
        match (config.ablation_mode.has_rfm(), feedback) {
            (true, None) => Err(Error::InvalidArgument(format!(
                "{} mode needs a feedback vector",
                config.ablation_mode
            ))),
            (false, Some(_)) => Err(Error::InvalidArgument(
                "baseline mode takes no feedback vector".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn input_norm(&self) -> &InputNorm {
        &self.norm
    }

    pub fn set_input_norm(&mut self, norm: InputNorm) -> Result<()> {
        norm.validate()?;
        self.norm = norm;
        Ok(())
    }

    /// Network input for `seqs`.
    pub fn input(&self, seqs: &[&S3dlmSequence]) -> Tensor {
        batch_tensor(seqs, &self.norm, self.config.input_scale)
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    /// Mutable weight buffers in declaration order, plus the gate.
    pub fn buffers_mut(&mut self) -> (Vec<&mut [f64]>, Option<&mut FeedbackVector>) {
        let bufs = self.params.iter_mut().map(|p| p.value.data_mut()).collect();
        (bufs, self.feedback.as_mut())
    }

    /// Scalar count of weights plus the gate.
    pub fn parameter_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum::<usize>()
            + self.feedback.as_ref().map_or(0, |f| f.theta.len())
    }

    /// Records the network on `g`. Weights become trainable leaves when
    /// `trainable`; otherwise they are constants.
    pub fn bind(&self, g: &mut Graph, input: Var, trainable: bool) -> Result<Bound> {
        let params: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf(p.value.clone(), trainable))
            .collect();
        let theta = self
            .feedback
            .as_ref()
            .map(|f| g.leaf(Tensor::from_vec(f.theta.clone()), trainable));
        let logits = self.bind_with(g, input, &params, theta)?;
        Ok(Bound { logits, params, theta })
    }

    /// Records the network using caller-supplied weight nodes, laid out as
    /// [`Model::params`]; returns the logits.
    pub fn bind_with(&self, g: &mut Graph, input: Var, params: &[Var], theta: Option<Var>) -> Result<Var> {
        if params.len() != self.params.len() {
            return Err(Error::InvalidArgument(format!(
                "expected {} weight nodes, got {}",
                self.params.len(),
                params.len()
            )));
        }
        if theta.is_some() != self.config.ablation_mode.has_rfm() {
            return Err(Error::InvalidArgument(format!(
                "{} mode {} a gate node",
                self.config.ablation_mode,
                if theta.is_some() { "takes no" } else { "needs" }
            )));
        }
        let mut it = params.iter().copied();
        let mut next = || it.next().expect("parameter layout matches config");

        let gated = match theta {
            Some(t) => rfm_apply(g, input, t)?,
            None => input,
        };
        let (lw, lb) = (next(), next());
        let landmark = g.conv2d(gated, lw, lb, (2, 2))?;
        let landmark = g.relu(landmark);

        let (pw, pb) = (next(), next());
        let frame = g.conv2d(input, pw, pb, (0, 0))?;
        let frame = g.relu(frame);
        let (tw, tb) = (next(), next());
        let frame = g.conv2d(frame, tw, tb, (1, 0))?;
        let frame = g.relu(frame);

        let mut x = g.concat_channels(landmark, frame)?;
        let mut width = self.config.merged_channels();
        for stage in &self.config.backbone_stages {
            x = g.avg_pool2(x)?;
            for _ in 0..stage.blocks {
                let (w1, b1, w2, b2) = (next(), next(), next(), next());
                let h = g.conv2d(x, w1, b1, (1, 1))?;
                let h = g.relu(h);
                let h = g.conv2d(h, w2, b2, (1, 1))?;
                let skip = if width != stage.width {
                    let (pw, pb) = (next(), next());
                    g.conv2d(x, pw, pb, (0, 0))?
                } else {
                    x
                };
                let sum = g.add(h, skip)?;
                x = g.relu(sum);
                width = stage.width;
            }
        }
        let mut x = g.global_avg_pool(x)?;
        let last = self.config.fc_dims.len() - 1;
        for i in 0..=last {
            let (w, b) = (next(), next());
            x = g.linear(x, w, b)?;
            if i < last {
                x = g.relu(x);
            }
        }
        Ok(x)
    }

    /// Logits `[N, num_speakers]` without gradient tracking.
    pub fn forward(&self, input: &Tensor) -> Result<Tensor> {
        let mut g = Graph::new();
        let x = g.input(input.clone());
        let b = self.bind(&mut g, x, false)?;
        Ok(g.value(b.logits).clone())
    }

    pub fn logits(&self, seqs: &[&S3dlmSequence]) -> Result<Tensor> {
        self.forward(&self.input(seqs))
    }

    /// `3LMN` | version u8 | config length u32 | canonical config JSON |
    /// scalar count u64 | f64 values (weights in declaration order, then θ) |
    /// input mean and gain, 600 f64 each.
    pub fn to_bytes(&self) -> Vec<u8> {
        let cfg = to_canonical_json(&self.config);
        let n = self.parameter_count();
        let mut out = Vec::with_capacity(4 + 1 + 4 + cfg.len() + 8 + (n + 2 * InputNorm::LEN) * 8);
        out.extend_from_slice(MAGIC);
        out.push(CHECKPOINT_VERSION);
        out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
        out.extend_from_slice(cfg.as_bytes());
        out.extend_from_slice(&(n as u64).to_le_bytes());
        let theta = self.feedback.iter().flat_map(|f| f.theta.iter());
        let norm = self.norm.mean.iter().chain(&self.norm.gain);
        for v in self.params.iter().flat_map(|p| p.value.data()).chain(theta).chain(norm) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_bytes(bytes: &[u8], path: &Path) -> Result<Self> {
        let perr = |at: usize, msg: String| Error::parse(path, format!("byte {at}"), msg);
        let take = |at: usize, len: usize| {
            bytes
                .get(at..at + len)
                .ok_or_else(|| perr(bytes.len(), format!("truncated: need {len} bytes at offset {at}")))
        };
        if take(0, 4)? != MAGIC {
            return Err(perr(0, "bad magic, expected 3LMN".into()));
        }
        let version = take(4, 1)?[0];
        if version != CHECKPOINT_VERSION {
            return Err(Error::Version {
                found: version as u32,
                expected: CHECKPOINT_VERSION as u32,
            });
        }
        let cfg_len = u32::from_le_bytes(take(5, 4)?.try_into().expect("4 bytes")) as usize;
        let cfg_text = std::str::from_utf8(take(9, cfg_len)?)
            .map_err(|e| perr(9 + e.valid_up_to(), "config block is not UTF-8".into()))?;
        let config: ModelConfig = serde_json::from_str(cfg_text).map_err(|e| Error::Validation {
            path: path.to_path_buf(),
            message: format!("checkpoint config: {e}"),
        })?;
        config.validate()?;
        let at = 9 + cfg_len;
        let n = u64::from_le_bytes(take(at, 8)?.try_into().expect("8 bytes")) as usize;
        let payload = &bytes[at + 8..];
        let expected = param_shapes(&config).iter().map(|(_, s, _)| s.iter().product::<usize>()).sum::<usize>()
            + if config.ablation_mode.has_rfm() { LANDMARKS } else { 0 };
        if n != expected || payload.len() != (n + 2 * InputNorm::LEN) * 8 {
            return Err(perr(
                at,
                format!(
                    "expected {expected} parameters ({} bytes), header says {n} with {} payload bytes",
                    (expected + 2 * InputNorm::LEN) * 8,
                    payload.len()
                ),
            ));
        }
        let mut values = payload
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")));
        let params = param_shapes(&config)
            .into_iter()
            .map(|(name, shape, _)| {
                let len = shape.iter().product();
                let data = values.by_ref().take(len).collect();
                Ok(Param {
                    name,
                    value: Tensor::new(shape, data)?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let feedback = config
            .ablation_mode
            .has_rfm()
            .then(|| FeedbackVector::new(values.by_ref().take(LANDMARKS).collect()))
            .transpose()?;
        let mean = values.by_ref().take(InputNorm::LEN).collect();
        let norm = InputNorm {
            mean,
            gain: values.collect(),
        };
        norm.validate()?;
        Ok(Self {
            config,
            params,
            feedback,
            norm,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes, path)
    }
}
