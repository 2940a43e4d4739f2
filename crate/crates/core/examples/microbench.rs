// temporary scratch: saxpy/dot/conv micro-throughput
use facevox_core::autodiff::kernels::{conv2d_forward, Conv2dSpec};
use facevox_core::autodiff::Tensor;
use std::time::Instant;

#[inline(never)]
fn saxpy(dst: &mut [f64], src: &[f64], a: f64) {
    for (d, s) in dst.iter_mut().zip(src) {
        *d += a * *s;
    }
}

fn main() {
    // saxpy throughput
    let n = 257;
    let mut dst = vec![1.0f64; n];
    let src = vec![0.5f64; n];
    let reps = 2_000_000;
    let t0 = Instant::now();
    for i in 0..reps {
        saxpy(&mut dst, &src, 1.0 + (i as f64) * 1e-12);
    }
    let dt = t0.elapsed().as_secs_f64();
    println!(
        "saxpy len {n}: {:.2} GMAC/s single-thread (checksum {})",
        reps as f64 * n as f64 / dt / 1e9,
        dst[0]
    );

    // conv2-like shape
    let x = Tensor::from_fn(&[8, 4, 598, 257], |i| (i % 97) as f64 / 97.0);
    let w = Tensor::from_fn(&[4, 4, 4, 4], |i| (i % 13) as f64 / 13.0 - 0.5);
    let b = Tensor::zeros(&[4]);
    let spec = Conv2dSpec { stride: (1, 1), pad: (0, 0, 2, 1) };
    let t0 = Instant::now();
    let reps = 5;
    for _ in 0..reps {
        let y = conv2d_forward(&x, &w, &b, &spec).unwrap();
        std::hint::black_box(y.data()[0]);
    }
    let dt = t0.elapsed().as_secs_f64() / reps as f64;
    let macs = 8.0 * 4.0 * 595.0 * 257.0 * (4.0 * 16.0);
    println!("conv fwd [8,4,598,257]x[4,4,4,4]: {:.3} s -> {:.2} GMAC/s (2 threads)", dt, macs / dt / 1e9);
}
