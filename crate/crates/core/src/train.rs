//! ADAM training of the voice encoder with checkpointing.
//!
//! Everything a run does is a pure function of `(seed, dataset, config)`:
//! shuffles come from counter-keyed streams, the optimizer is deterministic,
//! and checkpoints serialize every byte of mutable state, so resuming from a
//! checkpoint is bitwise identical to never having stopped.

use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::audio::load_spectrogram;
use crate::autodiff::{Tape, Tensor};
use crate::encoder::{
    self, batch_from_spectrograms, build_encoder, EncoderConfig, EncoderParams, Mode,
};
use crate::error::{Error, Result};
use crate::io::{TensorFile, TensorRecord};
use crate::loss::{self, build_heads, Heads, LossWeights};
use crate::parallel;
use crate::rng;

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"S2FCKPT1";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub base_lr: f64,
    pub decay_rate: f64,
    pub decay_every: u64,
    pub batch_size: usize,
    pub epochs: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.5,
            beta2: 0.999,
            epsilon: 1e-4,
            base_lr: 0.001,
            decay_rate: 0.95,
            decay_every: 10_000,
            batch_size: 8,
            epochs: 3,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if self.epsilon <= 0.0 || self.base_lr <= 0.0 || self.decay_rate <= 0.0 {
            return Err(Error::InvalidConfig("adam epsilon/lr/decay must be positive".into()));
        }
        if self.batch_size == 0 || self.epochs == 0 || self.decay_every == 0 {
            return Err(Error::InvalidConfig("batch size, epochs and decay cadence must be positive".into()));
        }
        Ok(())
    }
}

/// Stepwise-exponential schedule: `base_lr * decay_rate^floor(step / decay_every)`.
pub fn lr_at(step: u64, cfg: &AdamConfig) -> f64 {
    cfg.base_lr * cfg.decay_rate.powi((step / cfg.decay_every) as i32)
}

/// First/second moment estimates, one pair per parameter tensor in
/// `EncoderParams::visit` order.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub moments: Vec<(Vec<f64>, Vec<f64>)>,
    pub step: u64,
}

impl AdamState {
    pub fn new(params: &EncoderParams) -> Self {
        let mut moments = Vec::new();
        params.visit(|_, t| moments.push((vec![0.0; t.numel()], vec![0.0; t.numel()])));
        AdamState { moments, step: 0 }
    }
}

/// One bias-corrected ADAM update on a single tensor.
pub fn adam_update_tensor(
    param: &mut Tensor,
    grad: &[f64],
    m: &mut [f64],
    v: &mut [f64],
    lr: f64,
    cfg: &AdamConfig,
    t: u64,
) {
    let b1 = cfg.beta1;
    let b2 = cfg.beta2;
    let bc1 = 1.0 - b1.powi(t as i32);
    let bc2 = 1.0 - b2.powi(t as i32);
    let data = param.data_mut();
    for i in 0..data.len() {
        let g = grad[i];
        m[i] = b1 * m[i] + (1.0 - b1) * g;
        v[i] = b2 * v[i] + (1.0 - b2) * g * g;
        let m_hat = m[i] / bc1;
        let v_hat = v[i] / bc2;
        data[i] -= lr * m_hat / (v_hat.sqrt() + cfg.epsilon);
    }
}

/// Apply one optimizer step to every encoder parameter. `grads` must align
/// with `EncoderParams::visit` order; all gradients are checked finite first.
pub fn adam_step(
    params: &mut EncoderParams,
    grads: &[(String, Tensor)],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    for (name, g) in grads {
        if !g.data().iter().all(|v| v.is_finite()) {
            return Err(Error::NonFiniteGradient(name.clone()));
        }
    }
    let lr = lr_at(state.step, cfg);
    let t = state.step + 1;
    let mut idx = 0;
    let mut mismatch: Option<String> = None;
    params.visit_mut(|name, tensor| {
        if mismatch.is_some() {
            return;
        }
        let Some((gname, grad)) = grads.get(idx) else {
            mismatch = Some(format!("missing gradient for {name}"));
            return;
        };
        if gname != name || grad.numel() != tensor.numel() {
            mismatch = Some(format!("gradient {gname} does not match parameter {name}"));
            return;
        }
        let (m, v) = &mut state.moments[idx];
        adam_update_tensor(tensor, grad.data(), m, v, lr, cfg, t);
        idx += 1;
    });
    if let Some(msg) = mismatch {
        return Err(Error::InvalidConfig(msg));
    }
    state.step += 1;
    Ok(())
}

// ---------------------------------------------------------------------------
// checkpoints
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub format_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub iteration: u64,
    pub encoder: EncoderConfig,
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub cls_head_seed: u64,
    pub dec_head_seed: u64,
    pub input_bins: usize,
    /// All randomness derives from `(seed, tag, counters)` streams; together
    /// with `iteration` this field pins the complete RNG state of the run.
    pub rng_scheme: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: EncoderParams,
    pub adam: AdamState,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        let header = serde_json::to_vec(&self.header)
            .map_err(|e| Error::format(path.display().to_string(), format!("header encode: {e}")))?;
        let mut tf = TensorFile::new(&self.header.config_hash);
        self.params.visit(|name, t| {
            tf.push(TensorRecord::f64(name, t.shape(), t.data().to_vec()));
        });
        let mut push_running = |name: &str, bn: &encoder::BnParams| {
            tf.push(TensorRecord::f64(
                format!("{name}.running_mean"),
                &[bn.running_mean.len()],
                bn.running_mean.clone(),
            ));
            tf.push(TensorRecord::f64(
                format!("{name}.running_var"),
                &[bn.running_var.len()],
                bn.running_var.clone(),
            ));
        };
        for (i, block) in self.params.conv_blocks.iter().enumerate() {
            if let Some(bn) = &block.bn {
                push_running(&format!("conv{}.bn", i + 1), bn);
            }
        }
        if let Some(bn) = &self.params.head_bn {
            push_running("head.bn", bn);
        }
        let mut idx = 0;
        self.params.visit(|name, _| {
            let (m, v) = &self.adam.moments[idx];
            tf.push(TensorRecord::f64(format!("adam.{name}.m"), &[m.len()], m.clone()));
            tf.push(TensorRecord::f64(format!("adam.{name}.v"), &[v.len()], v.clone()));
            idx += 1;
        });

        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        out.write_all(CHECKPOINT_MAGIC)?;
        out.write_all(&(header.len() as u64).to_le_bytes())?;
        out.write_all(&header)?;
        tf.write_to(&mut out)?;
        out.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path)?;
        let origin = path.display().to_string();
        if bytes.len() < 16 || &bytes[..8] != CHECKPOINT_MAGIC {
            return Err(Error::format(&origin, "bad magic, not a checkpoint"));
        }
        let hlen = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
        if bytes.len() < 16 + hlen {
            return Err(Error::format(&origin, "truncated header"));
        }
        let header: CheckpointHeader = serde_json::from_slice(&bytes[16..16 + hlen])
            .map_err(|e| Error::format(&origin, format!("header decode: {e}")))?;
        if header.format_version != CHECKPOINT_VERSION {
            return Err(Error::format(
                &origin,
                format!("unsupported checkpoint version {}", header.format_version),
            ));
        }
        let tf = TensorFile::parse(&bytes[16 + hlen..], &origin)?;

        let mut params = build_encoder(&header.encoder, header.seed, header.input_bins)?;
        let mut missing: Vec<String> = Vec::new();
        params.visit_mut(|name, tensor| match tf.find(name) {
            Some(rec) if rec.numel() == tensor.numel() => {
                *tensor = Tensor::new(tensor.shape().to_vec(), rec.data.clone()).expect("shape checked");
            }
            _ => missing.push(name.to_string()),
        });
        let mut load_running = |prefix: &str, bn: &mut encoder::BnParams, missing: &mut Vec<String>| {
            match tf.find(&format!("{prefix}.running_mean")) {
                Some(r) if r.data.len() == bn.running_mean.len() => bn.running_mean = r.data.clone(),
                _ => missing.push(format!("{prefix}.running_mean")),
            }
            match tf.find(&format!("{prefix}.running_var")) {
                Some(r) if r.data.len() == bn.running_var.len() => bn.running_var = r.data.clone(),
                _ => missing.push(format!("{prefix}.running_var")),
            }
        };
        for i in 0..params.conv_blocks.len() {
            if params.conv_blocks[i].bn.is_some() {
                let mut bn = params.conv_blocks[i].bn.take().unwrap();
                load_running(&format!("conv{}.bn", i + 1), &mut bn, &mut missing);
                params.conv_blocks[i].bn = Some(bn);
            }
        }
        if params.head_bn.is_some() {
            let mut bn = params.head_bn.take().unwrap();
            load_running("head.bn", &mut bn, &mut missing);
            params.head_bn = Some(bn);
        }

        let mut moments = Vec::new();
        params.visit(|name, t| {
            let m = tf.find(&format!("adam.{name}.m"));
            let v = tf.find(&format!("adam.{name}.v"));
            match (m, v) {
                (Some(m), Some(v)) if m.data.len() == t.numel() && v.data.len() == t.numel() => {
                    moments.push((m.data.clone(), v.data.clone()));
                }
                _ => missing.push(format!("adam.{name}")),
            }
        });
        if !missing.is_empty() {
            return Err(Error::format(&origin, format!("missing or mis-sized records: {missing:?}")));
        }
        Ok(Checkpoint {
            params,
            adam: AdamState { moments, step: header.iteration },
            header,
        })
    }
}

// ---------------------------------------------------------------------------
// training loop
// ---------------------------------------------------------------------------

/// One training example: a cached spectrogram on disk plus its target feature.
#[derive(Debug, Clone)]
pub struct TrainSample {
    pub spectrogram_path: PathBuf,
    pub target: Vec<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct Dataset {
    pub train: Vec<TrainSample>,
    pub val: Vec<TrainSample>,
}

#[derive(Debug, Clone)]
pub struct TrainOptions {
    pub adam: AdamConfig,
    pub loss: LossWeights,
    pub seed: u64,
    pub cls_head_seed: u64,
    pub dec_head_seed: u64,
    pub out_dir: PathBuf,
    pub config_hash: String,
    pub checkpoint_every: u64,
    pub val_every: u64,
}

impl TrainOptions {
    pub fn new(out_dir: impl Into<PathBuf>, seed: u64, config_hash: impl Into<String>) -> Self {
        TrainOptions {
            adam: AdamConfig::default(),
            loss: LossWeights::default(),
            seed,
            cls_head_seed: seed ^ 0xc1a5_51f1,
            dec_head_seed: seed ^ 0xdec0_0de5,
            out_dir: out_dir.into(),
            config_hash: config_hash.into(),
            checkpoint_every: 500,
            val_every: 500,
        }
    }
}

#[derive(Debug)]
pub struct TrainOutcome {
    pub final_checkpoint_path: PathBuf,
    pub curve_path: PathBuf,
    pub iterations: u64,
    pub initial_val_loss: f64,
    pub final_val_loss: f64,
    pub final_train_loss: f64,
    pub heads_checksum: (u64, u64),
}

fn load_batch(samples: &[&TrainSample], expected_hash: &str) -> Result<(Tensor, Tensor)> {
    let specs = parallel::try_par_map(samples.len(), |i| {
        let (spec, hash) = load_spectrogram(&samples[i].spectrogram_path)?;
        if hash != expected_hash {
            return Err(Error::ConfigHashMismatch(format!(
                "{} carries hash {hash}, run expects {expected_hash}",
                samples[i].spectrogram_path.display()
            )));
        }
        Ok(spec)
    })?;
    let refs: Vec<&crate::audio::CompressedSpectrogram> = specs.iter().collect();
    let batch = batch_from_spectrograms(&refs)?;
    let dim = samples[0].target.len();
    let mut targets = Vec::with_capacity(samples.len() * dim);
    for s in samples {
        if s.target.len() != dim {
            return Err(Error::shape("train", "mixed target dimensions"));
        }
        targets.extend_from_slice(&s.target);
    }
    Ok((batch, Tensor::new(vec![samples.len(), dim], targets)?))
}

fn validation_loss(
    params: &mut EncoderParams,
    dataset: &Dataset,
    heads: &Heads,
    w: &LossWeights,
    batch_size: usize,
    expected_hash: &str,
) -> Result<f64> {
    if dataset.val.is_empty() {
        return Ok(f64::NAN);
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for chunk in dataset.val.chunks(batch_size) {
        let refs: Vec<&TrainSample> = chunk.iter().collect();
        let (batch, targets) = load_batch(&refs, expected_hash)?;
        let v_s = encoder::forward(params, &batch, Mode::Eval)?;
        let b = loss::total_loss(&targets, &v_s, heads, w)?;
        total += b.total * chunk.len() as f64;
        count += chunk.len();
    }
    Ok(total / count as f64)
}

/// Train from scratch (`start` = fresh encoder config) or resume.
pub enum TrainStart {
    Fresh { encoder: EncoderConfig, input_bins: usize },
    Resume(Box<Checkpoint>),
}

pub fn train(dataset: &Dataset, start: TrainStart, opts: &TrainOptions) -> Result<TrainOutcome> {
    opts.adam.validate()?;
    opts.loss.validate()?;
    if dataset.train.is_empty() {
        return Err(Error::EmptyDataset);
    }
    std::fs::create_dir_all(&opts.out_dir)?;

    let heads = build_heads(opts.cls_head_seed, opts.dec_head_seed);
    let heads_checksum_before = heads.checksum();

    let (mut params, mut adam, start_iter) = match start {
        TrainStart::Fresh { encoder: cfg, input_bins } => {
            let params = build_encoder(&cfg, opts.seed, input_bins)?;
            let adam = AdamState::new(&params);
            (params, adam, 0u64)
        }
        TrainStart::Resume(ckpt) => {
            let iter = ckpt.header.iteration;
            (ckpt.params, ckpt.adam, iter)
        }
    };

    let n_train = dataset.train.len();
    let batch = opts.adam.batch_size.min(n_train);
    let iters_per_epoch = n_train.div_ceil(batch) as u64;
    let total_iters = iters_per_epoch * opts.adam.epochs as u64;
    if start_iter > total_iters {
        return Err(Error::InvalidConfig(format!(
            "checkpoint at iteration {start_iter} is beyond the {total_iters}-iteration schedule"
        )));
    }

    let curve_path = opts.out_dir.join("loss_curve.csv");
    let mut curve = std::io::BufWriter::new(std::fs::File::create(&curve_path)?);
    writeln!(curve, "iteration,lr,total,term1,term2,term3,val_total")?;

    let mut initial_val = f64::NAN;
    let mut last_val = f64::NAN;
    let mut last_train = f64::NAN;

    if start_iter == 0 {
        initial_val = validation_loss(&mut params, dataset, &heads, &opts.loss, batch, &opts.config_hash)?;
        last_val = initial_val;
        writeln!(curve, "0,{},,,,,{}", lr_at(0, &opts.adam), initial_val)?;
    }

    let header_for = |iteration: u64, params: &EncoderParams| CheckpointHeader {
        format_version: CHECKPOINT_VERSION,
        config_hash: opts.config_hash.clone(),
        seed: opts.seed,
        iteration,
        encoder: params.config.clone(),
        adam: opts.adam,
        loss: opts.loss,
        cls_head_seed: opts.cls_head_seed,
        dec_head_seed: opts.dec_head_seed,
        input_bins: params.input_bins,
        rng_scheme: "chacha8(seed, tag, counters)".into(),
    };

    for it in start_iter..total_iters {
        let epoch = it / iters_per_epoch;
        let within = (it % iters_per_epoch) as usize;
        let mut shuffle_rng = rng::stream(opts.seed, "shuffle", &[epoch]);
        let perm = rng::permutation(&mut shuffle_rng, n_train);
        let lo = within * batch;
        let hi = (lo + batch).min(n_train);
        let samples: Vec<&TrainSample> = perm[lo..hi].iter().map(|&i| &dataset.train[i]).collect();
        let (input, targets) = load_batch(&samples, &opts.config_hash)?;

        let mut tape = Tape::new();
        let traced = encoder::forward_traced(&mut params, &mut tape, &input, Mode::Train)?;
        let v_f = tape.constant(targets);
        let traced_loss = loss::total_loss_traced(&mut tape, v_f, traced.output, &heads, &opts.loss)?;
        let breakdown = traced_loss.breakdown(&tape);
        if !breakdown.total.is_finite() {
            return Err(Error::NonFinite(format!("training loss at iteration {}", it + 1)));
        }
        let mut grads = tape.backward(traced_loss.total)?;
        let named_grads: Vec<(String, Tensor)> = traced
            .params
            .iter()
            .map(|(name, id)| {
                let g = grads
                    .take(*id)
                    .unwrap_or_else(|| Tensor::zeros(tape.value(*id).shape()));
                (name.clone(), g)
            })
            .collect();
        drop(grads);
        drop(tape);

        let lr = lr_at(adam.step, &opts.adam);
        adam_step(&mut params, &named_grads, &mut adam, &opts.adam)?;
        let iteration = it + 1;
        last_train = breakdown.total;

        let validate_now = (opts.val_every > 0 && iteration % opts.val_every == 0) || iteration == total_iters;
        let val_field = if validate_now {
            let v = validation_loss(&mut params, dataset, &heads, &opts.loss, batch, &opts.config_hash)?;
            last_val = v;
            format!("{v}")
        } else {
            String::new()
        };
        writeln!(
            curve,
            "{iteration},{lr},{},{},{},{},{val_field}",
            breakdown.total, breakdown.term1_dec_l1, breakdown.term2_unit_l2, breakdown.term3_distill
        )?;

        if (opts.checkpoint_every > 0 && iteration % opts.checkpoint_every == 0) || iteration == total_iters {
            let ckpt = Checkpoint {
                header: header_for(iteration, &params),
                params: params.clone(),
                adam: adam.clone(),
            };
            let path = opts.out_dir.join(format!("checkpoint_{iteration:06}.ckpt"));
            ckpt.save(&path).map_err(|e| {
                Error::format(path.display().to_string(), format!("checkpoint write failed: {e}"))
            })?;
        }
    }
    curve.flush()?;

    let final_path = opts.out_dir.join(format!("checkpoint_{total_iters:06}.ckpt"));
    if start_iter == total_iters {
        // nothing ran; still emit a checkpoint so resume-at-end is well formed
        let ckpt = Checkpoint {
            header: header_for(total_iters, &params),
            params: params.clone(),
            adam: adam.clone(),
        };
        ckpt.save(&final_path)?;
        last_val = validation_loss(&mut params, dataset, &heads, &opts.loss, batch, &opts.config_hash)?;
    }

    assert_eq!(heads.checksum(), heads_checksum_before, "frozen heads changed during training");

    Ok(TrainOutcome {
        final_checkpoint_path: final_path,
        curve_path,
        iterations: total_iters,
        initial_val_loss: initial_val,
        final_val_loss: last_val,
        final_train_loss: last_train,
        heads_checksum: heads_checksum_before,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn lr_schedule_matches_pinned_points() {
        let cfg = AdamConfig::default();
        assert_eq!(lr_at(0, &cfg), 0.001);
        assert!((lr_at(9_999, &cfg) - 0.001).abs() < 1e-15);
        assert!((lr_at(10_000, &cfg) - 0.00095).abs() < 1e-15);
        assert!((lr_at(25_000, &cfg) - 0.0009025).abs() < 1e-15);
    }

    #[test]
    fn zero_gradients_leave_parameters_unchanged() {
        let cfg = AdamConfig::default();
        let mut p = Tensor::new(vec![3], vec![1.0, -2.0, 0.5]).unwrap();
        let before = p.data().to_vec();
        let mut m = vec![0.0; 3];
        let mut v = vec![0.0; 3];
        adam_update_tensor(&mut p, &[0.0; 3], &mut m, &mut v, 0.001, &cfg, 1);
        assert_eq!(p.data(), before.as_slice());
        // decaying moments stay at zero from zero
        assert!(m.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn adam_drives_a_quadratic_to_zero() {
        // Frozen from an independent run of the update rule: |x| after 2000
        // steps is 0.02254108546..., and |x| first drops below 1e-3 at step
        // 2765 with these hyperparameters.
        let cfg = AdamConfig::default();
        let mut x = Tensor::new(vec![1], vec![1.0]).unwrap();
        let mut m = vec![0.0];
        let mut v = vec![0.0];
        for t in 1..=2000u64 {
            let g = 2.0 * x.data()[0];
            let lr = lr_at(t - 1, &cfg);
            adam_update_tensor(&mut x, &[g], &mut m, &mut v, lr, &cfg, t);
        }
        assert!((x.data()[0] - 0.0225410854623).abs() < 1e-9, "x = {}", x.data()[0]);
        for t in 2001..=2800u64 {
            let g = 2.0 * x.data()[0];
            let lr = lr_at(t - 1, &cfg);
            adam_update_tensor(&mut x, &[g], &mut m, &mut v, lr, &cfg, t);
        }
        assert!(x.data()[0].abs() < 1e-3, "x = {}", x.data()[0]);
    }

    #[test]
    fn non_finite_gradient_is_a_named_hard_error() {
        let cfg = EncoderConfig {
            conv_channels: vec![2, 2, 2, 2, 2, 2, 2, 2, 2],
            fc_widths: (3, 4),
            ..EncoderConfig::default()
        };
        let mut params = build_encoder(&cfg, 1, 17).unwrap();
        let mut state = AdamState::new(&params);
        let mut grads: Vec<(String, Tensor)> = Vec::new();
        params.visit(|name, t| grads.push((name.to_string(), Tensor::zeros(t.shape()))));
        grads[3].1 = Tensor::full(grads[3].1.shape(), f64::NAN);
        let name = grads[3].0.clone();
        let err = adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap_err();
        assert_eq!(err.to_string(), format!("non-finite gradient at {name}"));
    }

    #[test]
    fn checkpoint_roundtrip_is_bitwise() {
        let cfg = EncoderConfig {
            conv_channels: vec![3, 3, 3, 3, 3, 4, 4, 4, 4],
            fc_widths: (5, 6),
            ..EncoderConfig::default()
        };
        let params = build_encoder(&cfg, 11, 33).unwrap();
        let mut adam = AdamState::new(&params);
        adam.step = 42;
        for (m, v) in &mut adam.moments {
            for (i, x) in m.iter_mut().enumerate() {
                *x = (i as f64) * 0.125 - 1.0;
            }
            for (i, x) in v.iter_mut().enumerate() {
                *x = (i as f64) * 0.0625;
            }
        }
        let ckpt = Checkpoint {
            header: CheckpointHeader {
                format_version: CHECKPOINT_VERSION,
                config_hash: "abcd1234abcd1234".into(),
                seed: 11,
                iteration: 42,
                encoder: cfg,
                adam: AdamConfig::default(),
                loss: LossWeights::default(),
                cls_head_seed: 7,
                dec_head_seed: 8,
                input_bins: 33,
                rng_scheme: "chacha8(seed, tag, counters)".into(),
            },
            params,
            adam,
        };
        let dir = tempfile::tempdir().unwrap();
        let p1 = dir.path().join("a.ckpt");
        let p2 = dir.path().join("b.ckpt");
        ckpt.save(&p1).unwrap();
        let loaded = Checkpoint::load(&p1).unwrap();
        assert_eq!(loaded.header, ckpt.header);
        assert_eq!(loaded.adam.step, 42);
        loaded.save(&p2).unwrap();
        assert_eq!(std::fs::read(&p1).unwrap(), std::fs::read(&p2).unwrap());
    }

    #[test]
    fn empty_dataset_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let opts = TrainOptions::new(dir.path(), 1, "0000000000000000");
        let err = train(
            &Dataset::default(),
            TrainStart::Fresh { encoder: EncoderConfig::default(), input_bins: 257 },
            &opts,
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "empty dataset");
    }
}
