// temporary scratch: split iteration cost into phases
use facevox_core::autodiff::{Tape, Tensor};
use facevox_core::encoder::{build_encoder, forward_traced, EncoderConfig, Mode};
use facevox_core::loss::{build_heads, total_loss_traced, LossWeights};
use std::time::Instant;

fn main() {
    let cfg = EncoderConfig {
        conv_channels: vec![4, 4, 4, 4, 4, 8, 8, 16, 16],
        fc_widths: (64, 4096),
        ..EncoderConfig::default()
    };
    let mut params = build_encoder(&cfg, 1, 257).unwrap();
    let heads = build_heads(2, 3);
    let w = LossWeights::default();
    let input = Tensor::from_fn(&[8, 2, 598, 257], |i| ((i * 2654435761) % 1000) as f64 / 500.0 - 1.0);
    let target = Tensor::from_fn(&[8, 4096], |i| ((i * 40503) % 1000) as f64 / 500.0 - 1.0);

    for trial in 0..2 {
        let t0 = Instant::now();
        let mut tape = Tape::new();
        let traced = forward_traced(&mut params, &mut tape, &input, Mode::Train).unwrap();
        let t_fwd = t0.elapsed();

        let t1 = Instant::now();
        let vf = tape.constant(target.clone());
        let tl = total_loss_traced(&mut tape, vf, traced.output, &heads, &w).unwrap();
        let t_loss = t1.elapsed();

        let t2 = Instant::now();
        let grads = tape.backward(tl.total).unwrap();
        let t_bwd = t2.elapsed();
        drop(grads);
        println!(
            "trial {trial}: encoder fwd {:.3}s  loss fwd {:.3}s  backward {:.3}s",
            t_fwd.as_secs_f64(),
            t_loss.as_secs_f64(),
            t_bwd.as_secs_f64()
        );
    }
}
