// temporary scratch: per-op timing at the first-block shape
use facevox_core::autodiff::kernels::*;
use facevox_core::autodiff::Tensor;
use std::time::Instant;

fn time<F: FnMut()>(name: &str, mut f: F) {
    let reps = 5;
    let t0 = Instant::now();
    for _ in 0..reps {
        f();
    }
    println!("{name}: {:.1} ms", t0.elapsed().as_secs_f64() * 1000.0 / reps as f64);
}

fn main() {
    let x = Tensor::from_fn(&[8, 4, 601, 257], |i| (i % 97) as f64 / 97.0 - 0.5);
    let xs = Tensor::from_fn(&[8, 4, 598, 257], |i| (i % 97) as f64 / 97.0 - 0.5);
    let w = Tensor::from_fn(&[4, 4, 4, 4], |i| (i % 13) as f64 / 13.0 - 0.5);
    let b = Tensor::zeros(&[4]);
    let gamma = Tensor::full(&[4], 1.0);
    let beta = Tensor::zeros(&[4]);
    let spec = Conv2dSpec { stride: (1, 1), pad: (0, 0, 2, 1) };
    let y = conv2d_forward(&x, &w, &b, &spec).unwrap();

    time("pad_time_edge fwd", || {
        std::hint::black_box(pad_time_edge_forward(&xs, 2, 1).unwrap());
    });
    time("conv fwd  [8,4,601,257]x[4,4,4,4]", || {
        std::hint::black_box(conv2d_forward(&x, &w, &b, &spec).unwrap());
    });
    time("conv bwd dx+dw+db", || {
        std::hint::black_box(conv2d_backward(&x, &w, &b, &spec, &y, (true, true, true)).unwrap());
    });
    time("relu fwd", || {
        std::hint::black_box(relu_forward(&y));
    });
    time("relu bwd", || {
        std::hint::black_box(relu_backward(&y, &y));
    });
    time("bn train fwd", || {
        std::hint::black_box(batchnorm_train_forward(&y, &gamma, &beta, 1e-5).unwrap());
    });
    let (_, saved) = batchnorm_train_forward(&y, &gamma, &beta, 1e-5).unwrap();
    time("bn train bwd", || {
        std::hint::black_box(batchnorm_train_backward(&y, &gamma, &saved, &y).unwrap());
    });
    time("maxpool fwd", || {
        std::hint::black_box(maxpool_time_forward(&y, 2, 2).unwrap());
    });
    time("maxpool bwd", || {
        let g = maxpool_time_forward(&y, 2, 2).unwrap();
        std::hint::black_box(maxpool_time_backward(&y, 2, 2, &g).unwrap());
    });
    // fc1-sized linear: [8, 1040] x [1040, 64]
    let fx = Tensor::from_fn(&[8, 16 * 65], |i| (i % 31) as f64 / 31.0);
    let fw = Tensor::from_fn(&[16 * 65, 64], |i| (i % 17) as f64 / 17.0 - 0.5);
    let fb = Tensor::zeros(&[64]);
    time("fc1 fwd+bwd", || {
        let y = linear_forward(&fx, &fw, &fb).unwrap();
        std::hint::black_box(linear_backward(&fx, &fw, &y, (true, true, true)).unwrap());
    });
}
