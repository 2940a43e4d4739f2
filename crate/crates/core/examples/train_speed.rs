// temporary scratch: time forward+backward+adam at candidate profiles
use facevox_core::autodiff::{Tape, Tensor};
use facevox_core::encoder::{build_encoder, forward_traced, EncoderConfig, Mode};
use facevox_core::loss::{build_heads, total_loss_traced, LossWeights};
use facevox_core::train::{adam_step, AdamConfig, AdamState};
use std::time::Instant;

fn bench(name: &str, channels: Vec<usize>, fc1: usize, iters: usize) {
    let cfg = EncoderConfig {
        conv_channels: channels,
        fc_widths: (fc1, 4096),
        ..EncoderConfig::default()
    };
    let mut params = build_encoder(&cfg, 1, 257).unwrap();
    println!("{name}: {} parameters", params.param_count());
    let heads = build_heads(2, 3);
    let w = LossWeights::default();
    let mut adam = AdamState::new(&params);
    let acfg = AdamConfig::default();
    let input = Tensor::from_fn(&[8, 2, 598, 257], |i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0);
    let target = Tensor::from_fn(&[8, 4096], |i| ((i * 40503) % 1000) as f64 / 500.0 - 1.0);

    let t0 = Instant::now();
    for _ in 0..iters {
        let mut tape = Tape::new();
        let traced = forward_traced(&mut params, &mut tape, &input, Mode::Train).unwrap();
        let vf = tape.constant(target.clone());
        let tl = total_loss_traced(&mut tape, vf, traced.output, &heads, &w).unwrap();
        let mut grads = tape.backward(tl.total).unwrap();
        let named: Vec<(String, Tensor)> = traced
            .params
            .iter()
            .map(|(n, id)| (n.clone(), grads.take(*id).unwrap_or_else(|| Tensor::zeros(tape.value(*id).shape()))))
            .collect();
        drop(grads);
        drop(tape);
        adam_step(&mut params, &named, &mut adam, &acfg).unwrap();
    }
    let dt = t0.elapsed().as_secs_f64() / iters as f64;
    println!("{name}: {dt:.2} s/iter -> 600 iters = {:.1} min", dt * 600.0 / 60.0);
}

fn main() {
    bench("tiny  [2,4,4,4,4,8,8,16,16] fc 64", vec![4, 4, 4, 4, 4, 8, 8, 16, 16], 64, 3);
    bench("small [2,4,4,8,8,8,16,32,32] fc 128", vec![4, 4, 8, 8, 8, 16, 32, 32, 32], 128, 2);
}
