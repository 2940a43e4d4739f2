//! The voice encoder: a CNN taking a compressed spectrogram `[T, 257, 2]` to a
//! 4096-D face feature.
//!
//! Structure (fixed): nine 4x4 conv blocks with channel widths from the
//! config; blocks 1-8 are CONV-RELU-BN, block 9 is a bare conv; blocks 8 and 9
//! use stride 2, the rest stride 1 with "same" padding; temporal 2x1 max pools
//! follow blocks 3, 4, 5 and 6; a full-time average pool, RELU and BN close
//! the conv stack; two fully connected layers produce the output feature.
//! Pooling touches only the time axis, so the frequency resolution survives
//! until the stride-2 convs, and the average pool makes the output dimension
//! independent of input duration.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::kernels::{self, Conv2dSpec};
use crate::autodiff::{Tape, Tensor, VarId};
use crate::error::{Error, Result};
use crate::rng;

pub const CONV_BLOCKS: usize = 9;
/// Conv blocks (0-based) followed by a temporal max pool.
pub const POOL_AFTER: [usize; 4] = [2, 3, 4, 5];
/// Minimum spectrogram frames the encoder accepts (~0.66 s of audio).
pub const MIN_FRAMES: usize = 64;

/// A 4096-D face feature: the regression target and the encoder prediction.
#[derive(Debug, Clone, PartialEq)]
pub struct FaceFeature(Vec<f64>);

pub const FACE_FEATURE_DIM: usize = 4096;

impl FaceFeature {
    pub fn new(values: Vec<f64>) -> Result<Self> {
        if values.len() != FACE_FEATURE_DIM {
            return Err(Error::shape(
                "face_feature",
                format!("expected {FACE_FEATURE_DIM} values, got {}", values.len()),
            ));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::NonFinite("face feature".into()));
        }
        Ok(FaceFeature(values))
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EncoderConfig {
    pub in_channels: usize,
    /// Output channels of the nine conv blocks.
    pub conv_channels: Vec<usize>,
    pub conv_kernel: (usize, usize),
    pub pool_k: usize,
    pub pool_stride: usize,
    /// Widths of the two fully connected layers; the second is the feature dim.
    pub fc_widths: (usize, usize),
    pub use_batchnorm: bool,
    pub bn_epsilon: f64,
    pub bn_momentum: f64,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        EncoderConfig {
            in_channels: 2,
            conv_channels: vec![64, 64, 128, 128, 128, 256, 512, 512, 512],
            conv_kernel: (4, 4),
            pool_k: 2,
            pool_stride: 2,
            fc_widths: (4096, 4096),
            use_batchnorm: true,
            bn_epsilon: 1e-5,
            bn_momentum: 0.1,
        }
    }
}

impl EncoderConfig {
    pub fn validate(&self) -> Result<()> {
        if self.conv_channels.len() != CONV_BLOCKS {
            return Err(Error::InvalidConfig(format!(
                "conv_channels must list {CONV_BLOCKS} widths, got {}",
                self.conv_channels.len()
            )));
        }
        if self.in_channels == 0 || self.conv_channels.iter().any(|&c| c == 0) {
            return Err(Error::InvalidConfig("channel widths must be positive".into()));
        }
        if self.fc_widths.0 == 0 || self.fc_widths.1 == 0 {
            return Err(Error::InvalidConfig("fc widths must be positive".into()));
        }
        if self.conv_kernel.0 == 0 || self.conv_kernel.1 == 0 || self.pool_k == 0 || self.pool_stride == 0 {
            return Err(Error::InvalidConfig("kernel and pool sizes must be positive".into()));
        }
        if !(self.bn_epsilon > 0.0) || !(self.bn_momentum > 0.0 && self.bn_momentum < 1.0) {
            return Err(Error::InvalidConfig("bn epsilon/momentum out of range".into()));
        }
        Ok(())
    }

    pub fn conv_stride(&self, block: usize) -> (usize, usize) {
        if block >= CONV_BLOCKS - 2 {
            (2, 2)
        } else {
            (1, 1)
        }
    }

    pub fn feature_dim(&self) -> usize {
        self.fc_widths.1
    }
}

/// "Same"-style padding: output length `ceil(len / stride)`, surplus split
/// with the larger half in front (pad (2,1) for a 4-kernel at stride 1).
pub fn same_pad(len: usize, k: usize, stride: usize) -> (usize, usize) {
    let out = len.div_ceil(stride);
    let needed = ((out - 1) * stride + k).saturating_sub(len);
    let before = needed.div_ceil(2);
    (before, needed - before)
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerShape {
    pub name: String,
    pub channels: usize,
    pub t: usize,
    pub f: usize,
}

enum PlanStep {
    /// Edge-replicate padding on the time axis ahead of a conv; keeps
    /// time-constant content exactly constant, so encoder outputs are exactly
    /// duration-independent for such inputs.
    PadTime { before: usize, after: usize },
    Conv { block: usize, spec: Conv2dSpec },
    Relu,
    Bn { block: Option<usize> },
    MaxPool,
    AvgPool,
    Flatten { width: usize },
    Fc { idx: usize },
}

fn build_plan(cfg: &EncoderConfig, t0: usize, f0: usize) -> Result<(Vec<PlanStep>, Vec<LayerShape>)> {
    cfg.validate()?;
    let (kh, kw) = cfg.conv_kernel;
    let mut steps = Vec::new();
    let mut trace = vec![LayerShape {
        name: "input".into(),
        channels: cfg.in_channels,
        t: t0,
        f: f0,
    }];
    let (mut t, mut f) = (t0, f0);
    let mut channels = cfg.in_channels;

    for block in 0..CONV_BLOCKS {
        let (st, sf) = cfg.conv_stride(block);
        let (pt0, pt1) = same_pad(t, kh, st);
        let (pf0, pf1) = same_pad(f, kw, sf);
        // time padding is applied by edge replication before the conv; the
        // conv itself zero-pads only the frequency axis
        let spec = Conv2dSpec { stride: (st, sf), pad: (0, 0, pf0, pf1) };
        t = t.div_ceil(st);
        f = f.div_ceil(sf);
        channels = cfg.conv_channels[block];
        if pt0 + pt1 > 0 {
            steps.push(PlanStep::PadTime { before: pt0, after: pt1 });
        }
        steps.push(PlanStep::Conv { block, spec });
        trace.push(LayerShape { name: format!("conv{}", block + 1), channels, t, f });
        let bare = block == CONV_BLOCKS - 1;
        if !bare {
            steps.push(PlanStep::Relu);
            if cfg.use_batchnorm {
                steps.push(PlanStep::Bn { block: Some(block) });
            }
        }
        if POOL_AFTER.contains(&block) {
            if t < cfg.pool_k {
                return Err(Error::InputTooShort(format!(
                    "time axis vanishes at maxpool after conv{}: {} frames left, pool needs {}",
                    block + 1,
                    t,
                    cfg.pool_k
                )));
            }
            t = (t - cfg.pool_k) / cfg.pool_stride + 1;
            steps.push(PlanStep::MaxPool);
            trace.push(LayerShape { name: format!("maxpool{}", POOL_AFTER.iter().position(|&p| p == block).unwrap() + 1), channels, t, f });
        }
    }

    steps.push(PlanStep::AvgPool);
    t = 1;
    trace.push(LayerShape { name: "avgpool".into(), channels, t, f });
    steps.push(PlanStep::Relu);
    if cfg.use_batchnorm {
        steps.push(PlanStep::Bn { block: None });
    }

    let width = channels * f;
    steps.push(PlanStep::Flatten { width });
    steps.push(PlanStep::Fc { idx: 0 });
    trace.push(LayerShape { name: "fc1".into(), channels: cfg.fc_widths.0, t: 1, f: 1 });
    steps.push(PlanStep::Relu);
    steps.push(PlanStep::Fc { idx: 1 });
    trace.push(LayerShape { name: "fc2".into(), channels: cfg.fc_widths.1, t: 1, f: 1 });

    Ok((steps, trace))
}

/// Symbolic shape propagation through every layer; also the source of the
/// flattened width feeding the first dense layer.
pub fn shape_trace(cfg: &EncoderConfig, t: usize, f: usize) -> Result<Vec<LayerShape>> {
    Ok(build_plan(cfg, t, f)?.1)
}

/// Flattened width entering fc1 for a given input frequency size.
pub fn fc_input_width(cfg: &EncoderConfig, f0: usize) -> Result<usize> {
    let trace = shape_trace(cfg, 4 * MIN_FRAMES, f0)?;
    let avg = trace.iter().rev().find(|l| l.name == "avgpool").unwrap();
    Ok(avg.channels * avg.f)
}

#[derive(Debug, Clone, PartialEq)]
pub struct BnParams {
    pub gamma: Tensor,
    pub beta: Tensor,
    pub running_mean: Vec<f64>,
    pub running_var: Vec<f64>,
}

impl BnParams {
    fn fresh(channels: usize) -> Self {
        BnParams {
            gamma: Tensor::full(&[channels], 1.0),
            beta: Tensor::zeros(&[channels]),
            running_mean: vec![0.0; channels],
            running_var: vec![1.0; channels],
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ConvBlockParams {
    pub weight: Tensor,
    pub bias: Tensor,
    pub bn: Option<BnParams>,
}

/// All learnable state of the encoder plus batch-norm running statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub config: EncoderConfig,
    pub seed: u64,
    pub conv_blocks: Vec<ConvBlockParams>,
    pub head_bn: Option<BnParams>,
    pub fc1_weight: Tensor,
    pub fc1_bias: Tensor,
    pub fc2_weight: Tensor,
    pub fc2_bias: Tensor,
    /// Frequency size the dense widths were derived for.
    pub input_bins: usize,
}

fn gaussian_tensor(shape: &[usize], std: f64, seed: u64, name: &str) -> Tensor {
    let mut stream = rng::stream(seed, name, &[]);
    Tensor::from_fn(shape, |_| {
        let z: f64 = stream.sample(StandardNormal);
        z * std
    })
}

/// Fan-in-scaled Gaussian initialization (std `sqrt(2 / fan_in)`), biases at
/// zero, BN at identity. Deterministic in the seed.
pub fn build_encoder(cfg: &EncoderConfig, seed: u64, input_bins: usize) -> Result<EncoderParams> {
    cfg.validate()?;
    let (kh, kw) = cfg.conv_kernel;
    let mut conv_blocks = Vec::with_capacity(CONV_BLOCKS);
    let mut in_c = cfg.in_channels;
    for block in 0..CONV_BLOCKS {
        let out_c = cfg.conv_channels[block];
        let fan_in = (in_c * kh * kw) as f64;
        let weight = gaussian_tensor(
            &[out_c, in_c, kh, kw],
            (2.0 / fan_in).sqrt(),
            seed,
            &format!("init.conv{}.weight", block + 1),
        );
        let bare = block == CONV_BLOCKS - 1;
        conv_blocks.push(ConvBlockParams {
            weight,
            bias: Tensor::zeros(&[out_c]),
            bn: (cfg.use_batchnorm && !bare).then(|| BnParams::fresh(out_c)),
        });
        in_c = out_c;
    }
    let head_bn = cfg.use_batchnorm.then(|| BnParams::fresh(in_c));

    let fc_in = fc_input_width(cfg, input_bins)?;
    let fc1_weight = gaussian_tensor(
        &[fc_in, cfg.fc_widths.0],
        (2.0 / fc_in as f64).sqrt(),
        seed,
        "init.fc1.weight",
    );
    let fc2_weight = gaussian_tensor(
        &[cfg.fc_widths.0, cfg.fc_widths.1],
        (2.0 / cfg.fc_widths.0 as f64).sqrt(),
        seed,
        "init.fc2.weight",
    );
    Ok(EncoderParams {
        config: cfg.clone(),
        seed,
        conv_blocks,
        head_bn,
        fc1_weight,
        fc1_bias: Tensor::zeros(&[cfg.fc_widths.0]),
        fc2_weight,
        fc2_bias: Tensor::zeros(&[cfg.fc_widths.1]),
        input_bins,
    })
}

impl EncoderParams {
    /// Visit every trainable tensor in a fixed order.
    pub fn visit(&self, mut f: impl FnMut(&str, &Tensor)) {
        for (i, block) in self.conv_blocks.iter().enumerate() {
            f(&format!("conv{}.weight", i + 1), &block.weight);
            f(&format!("conv{}.bias", i + 1), &block.bias);
            if let Some(bn) = &block.bn {
                f(&format!("conv{}.bn.gamma", i + 1), &bn.gamma);
                f(&format!("conv{}.bn.beta", i + 1), &bn.beta);
            }
        }
        if let Some(bn) = &self.head_bn {
            f("head.bn.gamma", &bn.gamma);
            f("head.bn.beta", &bn.beta);
        }
        f("fc1.weight", &self.fc1_weight);
        f("fc1.bias", &self.fc1_bias);
        f("fc2.weight", &self.fc2_weight);
        f("fc2.bias", &self.fc2_bias);
    }

    /// Visit every trainable tensor mutably, same order as [`visit`].
    pub fn visit_mut(&mut self, mut f: impl FnMut(&str, &mut Tensor)) {
        for i in 0..self.conv_blocks.len() {
            let name = format!("conv{}", i + 1);
            let block = &mut self.conv_blocks[i];
            f(&format!("{name}.weight"), &mut block.weight);
            f(&format!("{name}.bias"), &mut block.bias);
            if let Some(bn) = &mut block.bn {
                f(&format!("{name}.bn.gamma"), &mut bn.gamma);
                f(&format!("{name}.bn.beta"), &mut bn.beta);
            }
        }
        if let Some(bn) = &mut self.head_bn {
            f("head.bn.gamma", &mut bn.gamma);
            f("head.bn.beta", &mut bn.beta);
        }
        f("fc1.weight", &mut self.fc1_weight);
        f("fc1.bias", &mut self.fc1_bias);
        f("fc2.weight", &mut self.fc2_weight);
        f("fc2.bias", &mut self.fc2_bias);
    }

    pub fn param_count(&self) -> usize {
        let mut n = 0;
        self.visit(|_, t| n += t.numel());
        n
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Handles into the tape after a traced forward pass.
pub struct TracedEncoder {
    pub output: VarId,
    /// `(name, id)` for every trainable tensor, in `visit` order.
    pub params: Vec<(String, VarId)>,
}

fn check_input(params: &EncoderParams, input: &Tensor) -> Result<()> {
    let s = input.shape();
    if s.len() != 4 || s[1] != params.config.in_channels {
        return Err(Error::shape(
            "encoder",
            format!(
                "input must be [N, {}, T, F], got {s:?}",
                params.config.in_channels
            ),
        ));
    }
    if s[2] < MIN_FRAMES {
        return Err(Error::InputTooShort(format!(
            "encoder needs at least {MIN_FRAMES} frames, got {}",
            s[2]
        )));
    }
    if s[3] != params.input_bins {
        return Err(Error::shape(
            "encoder",
            format!(
                "frequency dimension (dim 3): got {}, parameters were built for {}",
                s[3], params.input_bins
            ),
        ));
    }
    Ok(())
}

fn update_running(bn: &mut BnParams, momentum: f64, mean: &[f64], var: &[f64]) {
    for (r, &m) in bn.running_mean.iter_mut().zip(mean) {
        *r = (1.0 - momentum) * *r + momentum * m;
    }
    for (r, &v) in bn.running_var.iter_mut().zip(var) {
        *r = (1.0 - momentum) * *r + momentum * v;
    }
}

/// Forward pass recorded on a tape; parameters are registered as trainable
/// leaves. Train mode uses batch statistics and updates the running averages.
pub fn forward_traced(
    params: &mut EncoderParams,
    tape: &mut Tape,
    input: &Tensor,
    mode: Mode,
) -> Result<TracedEncoder> {
    check_input(params, input)?;
    let (steps, _) = build_plan(&params.config, input.shape()[2], input.shape()[3])?;
    let n = input.shape()[0];
    let eps = params.config.bn_epsilon;
    let momentum = params.config.bn_momentum;

    let mut named: Vec<(String, VarId)> = Vec::new();
    let mut conv_ids = Vec::with_capacity(CONV_BLOCKS);
    for (i, block) in params.conv_blocks.iter().enumerate() {
        let w = tape.param(block.weight.clone());
        let b = tape.param(block.bias.clone());
        named.push((format!("conv{}.weight", i + 1), w));
        named.push((format!("conv{}.bias", i + 1), b));
        let bn = block.bn.as_ref().map(|bn| {
            let g = tape.param(bn.gamma.clone());
            let be = tape.param(bn.beta.clone());
            named.push((format!("conv{}.bn.gamma", i + 1), g));
            named.push((format!("conv{}.bn.beta", i + 1), be));
            (g, be)
        });
        conv_ids.push((w, b, bn));
    }
    let head_bn_ids = params.head_bn.as_ref().map(|bn| {
        let g = tape.param(bn.gamma.clone());
        let b = tape.param(bn.beta.clone());
        named.push(("head.bn.gamma".into(), g));
        named.push(("head.bn.beta".into(), b));
        (g, b)
    });
    let fc1_w = tape.param(params.fc1_weight.clone());
    let fc1_b = tape.param(params.fc1_bias.clone());
    let fc2_w = tape.param(params.fc2_weight.clone());
    let fc2_b = tape.param(params.fc2_bias.clone());
    named.push(("fc1.weight".into(), fc1_w));
    named.push(("fc1.bias".into(), fc1_b));
    named.push(("fc2.weight".into(), fc2_w));
    named.push(("fc2.bias".into(), fc2_b));

    let mut x = tape.constant(input.clone());
    for step in &steps {
        x = match step {
            PlanStep::PadTime { before, after } => tape.pad_time_edge(x, *before, *after)?,
            PlanStep::Conv { block, spec } => {
                let (w, b, _) = conv_ids[*block];
                tape.conv2d(x, w, b, *spec)?
            }
            PlanStep::Relu => tape.relu(x),
            PlanStep::Bn { block } => {
                let (g, b) = match block {
                    Some(i) => conv_ids[*i].2.expect("bn ids exist for bn step"),
                    None => head_bn_ids.expect("head bn ids exist"),
                };
                let bn_state = match block {
                    Some(i) => params.conv_blocks[*i].bn.as_mut().unwrap(),
                    None => params.head_bn.as_mut().unwrap(),
                };
                match mode {
                    Mode::Train => {
                        let (id, mean, var) = tape.batchnorm_train(x, g, b, eps)?;
                        update_running(bn_state, momentum, &mean, &var);
                        id
                    }
                    Mode::Eval => tape.batchnorm_eval(
                        x,
                        g,
                        b,
                        &bn_state.running_mean,
                        &bn_state.running_var,
                        eps,
                    )?,
                }
            }
            PlanStep::MaxPool => tape.maxpool_time(x, params.config.pool_k, params.config.pool_stride)?,
            PlanStep::AvgPool => tape.avgpool_all_time(x)?,
            PlanStep::Flatten { width } => tape.reshape(x, &[n, *width])?,
            PlanStep::Fc { idx: 0 } => tape.linear(x, fc1_w, fc1_b)?,
            PlanStep::Fc { .. } => tape.linear(x, fc2_w, fc2_b)?,
        };
    }
    Ok(TracedEncoder { output: x, params: named })
}

/// Plain forward pass without a tape. Eval mode is a pure function of the
/// parameters; train mode additionally updates BN running statistics.
pub fn forward(params: &mut EncoderParams, input: &Tensor, mode: Mode) -> Result<Tensor> {
    check_input(params, input)?;
    let (steps, _) = build_plan(&params.config, input.shape()[2], input.shape()[3])?;
    let n = input.shape()[0];
    let eps = params.config.bn_epsilon;
    let momentum = params.config.bn_momentum;

    let mut x = input.clone();
    for step in &steps {
        x = match step {
            PlanStep::PadTime { before, after } => kernels::pad_time_edge_forward(&x, *before, *after)?,
            PlanStep::Conv { block, spec } => {
                let bp = &params.conv_blocks[*block];
                kernels::conv2d_forward(&x, &bp.weight, &bp.bias, spec)?
            }
            PlanStep::Relu => kernels::relu_forward(&x),
            PlanStep::Bn { block } => {
                let bn = match block {
                    Some(i) => params.conv_blocks[*i].bn.as_mut().unwrap(),
                    None => params.head_bn.as_mut().unwrap(),
                };
                match mode {
                    Mode::Train => {
                        let (y, saved) =
                            kernels::batchnorm_train_forward(&x, &bn.gamma, &bn.beta, eps)?;
                        update_running(bn, momentum, &saved.mean, &saved.var);
                        y
                    }
                    Mode::Eval => {
                        kernels::batchnorm_eval_forward(
                            &x,
                            &bn.gamma,
                            &bn.beta,
                            &bn.running_mean,
                            &bn.running_var,
                            eps,
                        )?
                        .0
                    }
                }
            }
            PlanStep::MaxPool => {
                kernels::maxpool_time_forward(&x, params.config.pool_k, params.config.pool_stride)?
            }
            PlanStep::AvgPool => kernels::avgpool_all_time_forward(&x)?,
            PlanStep::Flatten { width } => x.reshape(&[n, *width])?,
            PlanStep::Fc { idx: 0 } => kernels::linear_forward(&x, &params.fc1_weight, &params.fc1_bias)?,
            PlanStep::Fc { .. } => kernels::linear_forward(&x, &params.fc2_weight, &params.fc2_bias)?,
        };
    }
    Ok(x)
}

/// Stack spectrograms `[T, F, 2]` into an encoder batch `[N, 2, T, F]`.
pub fn batch_from_spectrograms(specs: &[&crate::audio::CompressedSpectrogram]) -> Result<Tensor> {
    if specs.is_empty() {
        return Err(Error::EmptyInput);
    }
    let (t, f) = (specs[0].frames, specs[0].bins);
    for s in specs {
        if s.frames != t || s.bins != f {
            return Err(Error::shape(
                "batch",
                format!("mixed spectrogram shapes: [{t}, {f}] vs [{}, {}]", s.frames, s.bins),
            ));
        }
    }
    let n = specs.len();
    let mut data = vec![0.0; n * 2 * t * f];
    for (ni, s) in specs.iter().enumerate() {
        for ti in 0..t {
            for fi in 0..f {
                let re = s.data[(ti * f + fi) * 2];
                let im = s.data[(ti * f + fi) * 2 + 1];
                data[((ni * 2) * t + ti) * f + fi] = re;
                data[((ni * 2 + 1) * t + ti) * f + fi] = im;
            }
        }
    }
    Tensor::new(vec![n, 2, t, f], data)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny_cfg() -> EncoderConfig {
        EncoderConfig {
            conv_channels: vec![3, 3, 4, 4, 4, 5, 6, 6, 6],
            fc_widths: (7, 9),
            ..EncoderConfig::default()
        }
    }

    #[test]
    fn default_config_reproduces_reference_table() {
        let cfg = EncoderConfig::default();
        assert_eq!(cfg.conv_channels, vec![64, 64, 128, 128, 128, 256, 512, 512, 512]);
        assert_eq!(cfg.conv_stride(0), (1, 1));
        assert_eq!(cfg.conv_stride(6), (1, 1));
        assert_eq!(cfg.conv_stride(7), (2, 2));
        assert_eq!(cfg.conv_stride(8), (2, 2));
        assert_eq!(cfg.fc_widths, (4096, 4096));
    }

    #[test]
    fn same_seed_gives_identical_parameters() {
        let cfg = tiny_cfg();
        let a = build_encoder(&cfg, 99, 257).unwrap();
        let b = build_encoder(&cfg, 99, 257).unwrap();
        let mut identical = true;
        a.visit(|name, t| {
            let mut other = None;
            b.visit(|n2, t2| {
                if n2 == name {
                    other = Some(t2.clone());
                }
            });
            let o = other.unwrap();
            if t.data()
                .iter()
                .zip(o.data())
                .any(|(x, y)| x.to_bits() != y.to_bits())
            {
                identical = false;
            }
        });
        assert!(identical);
        let c = build_encoder(&cfg, 100, 257).unwrap();
        assert_ne!(a.conv_blocks[0].weight.data(), c.conv_blocks[0].weight.data());
    }

    #[test]
    fn default_first_conv_weight_shape() {
        let p = build_encoder(&EncoderConfig::default(), 1, 257).unwrap();
        assert_eq!(p.conv_blocks[0].weight.shape(), &[64, 2, 4, 4]);
    }

    #[test]
    fn default_fc_input_width_is_512_by_65() {
        let cfg = EncoderConfig::default();
        assert_eq!(fc_input_width(&cfg, 257).unwrap(), 512 * 65);
    }

    #[test]
    fn shape_trace_matches_hand_propagation() {
        let cfg = EncoderConfig::default();
        let trace = shape_trace(&cfg, 598, 257).unwrap();
        let find = |name: &str| trace.iter().find(|l| l.name == name).unwrap().clone();
        assert_eq!(find("maxpool1").t, 299);
        assert_eq!(find("maxpool2").t, 149);
        assert_eq!(find("maxpool3").t, 74);
        assert_eq!(find("maxpool4").t, 37);
        // frequency untouched until the stride-2 convs
        assert_eq!(find("conv7").f, 257);
        assert_eq!(find("conv8").f, 129);
        let conv9 = find("conv9");
        assert_eq!((conv9.channels, conv9.f), (512, 65));
        let avg = find("avgpool");
        assert_eq!((avg.channels, avg.t, avg.f), (512, 1, 65));
        assert_eq!(find("fc2").channels, 4096);
    }

    #[test]
    fn stride1_same_padding_is_2_then_1() {
        assert_eq!(same_pad(257, 4, 1), (2, 1));
        assert_eq!(same_pad(598, 4, 1), (2, 1));
        assert_eq!(same_pad(257, 4, 2), (2, 1));
        assert_eq!(same_pad(129, 4, 2), (2, 1));
        assert_eq!(same_pad(37, 4, 2), (2, 1));
    }

    #[test]
    fn output_dimension_is_duration_independent() {
        let cfg = EncoderConfig {
            conv_channels: vec![4, 4, 8, 8, 8, 8, 16, 16, 16],
            fc_widths: (32, 4096),
            ..EncoderConfig::default()
        };
        let mut p = build_encoder(&cfg, 7, 257).unwrap();
        let six = Tensor::from_fn(&[1, 2, 598, 257], |i| ((i % 83) as f64 - 41.0) / 50.0);
        let three = Tensor::from_fn(&[1, 2, 298, 257], |i| ((i % 83) as f64 - 41.0) / 50.0);
        let y6 = forward(&mut p, &six, Mode::Eval).unwrap();
        let y3 = forward(&mut p, &three, Mode::Eval).unwrap();
        assert_eq!(y6.shape(), &[1, 4096]);
        assert_eq!(y3.shape(), &[1, 4096]);
    }

    #[test]
    fn eval_mode_is_pure() {
        let cfg = tiny_cfg();
        let mut p = build_encoder(&cfg, 3, 33).unwrap();
        let x = Tensor::from_fn(&[2, 2, 72, 33], |i| ((i * 31 % 101) as f64 - 50.0) / 60.0);
        let a = forward(&mut p, &x, Mode::Eval).unwrap();
        let b = forward(&mut p, &x, Mode::Eval).unwrap();
        assert_eq!(a.data(), b.data());
    }

    #[test]
    fn train_mode_updates_running_stats() {
        let cfg = tiny_cfg();
        let mut p = build_encoder(&cfg, 3, 33).unwrap();
        let before = p.conv_blocks[0].bn.as_ref().unwrap().running_mean.clone();
        let x = Tensor::from_fn(&[2, 2, 72, 33], |i| ((i * 17 % 97) as f64 - 48.0) / 40.0);
        forward(&mut p, &x, Mode::Train).unwrap();
        let after = &p.conv_blocks[0].bn.as_ref().unwrap().running_mean;
        assert_ne!(&before, after);
    }

    #[test]
    fn too_short_input_reports_frame_floor() {
        let cfg = tiny_cfg();
        let mut p = build_encoder(&cfg, 3, 33).unwrap();
        let x = Tensor::zeros(&[1, 2, 32, 33]);
        let err = forward(&mut p, &x, Mode::Eval).unwrap_err();
        assert!(err.to_string().contains("at least 64 frames"), "{err}");
    }

    #[test]
    fn plan_reports_layer_where_time_axis_would_vanish() {
        let cfg = tiny_cfg();
        // bypass the frame floor to exercise the per-layer message
        let err = shape_trace(&cfg, 9, 33).unwrap_err();
        assert!(err.to_string().contains("maxpool after conv"), "{err}");
    }

    #[test]
    fn gradient_reaches_every_parameter() {
        let cfg = tiny_cfg();
        let mut p = build_encoder(&cfg, 5, 33).unwrap();
        let mut r = rng::stream(6, "grad-flow", &[]);
        let x = Tensor::from_fn(&[2, 2, 70, 33], |_| r.gen_range(-1.0..1.0));
        let mut tape = Tape::new();
        let traced = forward_traced(&mut p, &mut tape, &x, Mode::Train).unwrap();
        let target = tape.constant(Tensor::zeros(&[2, cfg.fc_widths.1]));
        let loss = tape.l2_sq_diff(traced.output, target).unwrap();
        let mut grads = tape.backward(loss).unwrap();
        for (name, id) in &traced.params {
            let g = grads
                .take(*id)
                .unwrap_or_else(|| panic!("no gradient for {name}"));
            assert!(
                g.data().iter().any(|&v| v.abs() > 0.0),
                "gradient for {name} is all zero"
            );
        }
    }

    #[test]
    fn traced_and_plain_forward_agree_in_eval_mode() {
        let cfg = tiny_cfg();
        let mut p = build_encoder(&cfg, 8, 33).unwrap();
        let x = Tensor::from_fn(&[1, 2, 70, 33], |i| ((i * 13 % 89) as f64 - 44.0) / 45.0);
        let plain = forward(&mut p, &x, Mode::Eval).unwrap();
        let mut tape = Tape::new();
        let traced = forward_traced(&mut p, &mut tape, &x, Mode::Eval).unwrap();
        assert_eq!(tape.value(traced.output).data(), plain.data());
    }

    #[test]
    fn no_batchnorm_profile_builds_and_runs() {
        let cfg = EncoderConfig {
            use_batchnorm: false,
            ..tiny_cfg()
        };
        let mut p = build_encoder(&cfg, 5, 33).unwrap();
        assert!(p.conv_blocks.iter().all(|b| b.bn.is_none()));
        assert!(p.head_bn.is_none());
        let x = Tensor::from_fn(&[1, 2, 70, 33], |i| (i % 7) as f64 / 7.0 - 0.5);
        let y = forward(&mut p, &x, Mode::Eval).unwrap();
        assert_eq!(y.shape(), &[1, 9]);
    }
}
