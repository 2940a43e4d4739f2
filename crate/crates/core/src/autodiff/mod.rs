//! Minimal dense-tensor engine with reverse-mode differentiation.
//!
//! Provides exactly the layer set the encoder and loss need: conv2d, temporal
//! max pooling, full-time average pooling, batch normalization, relu, dense
//! layers, temperature softmax, unit normalization, L1/L2 distances, and the
//! distillation cross-entropy.

pub mod gradcheck;
pub mod kernels;
pub mod tape;
pub mod tensor;

pub use gradcheck::{grad_check, GradCheckEntry, GradCheckOpts};
pub use kernels::Conv2dSpec;
pub use tape::{Gradients, Tape, VarId};
pub use tensor::Tensor;

#[cfg(test)]
mod oracle_tests {
    use super::*;
    use crate::rng;
    use rand::Rng;

    fn randn(shape: &[usize], seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "autodiff-oracle", &[]);
        Tensor::from_fn(shape, |_| r.gen_range(-1.0..1.0))
    }

    /// Direct quintuple-loop cross-correlation, independent of the kernels.
    fn naive_conv2d(x: &Tensor, w: &Tensor, b: &Tensor, spec: &Conv2dSpec) -> Tensor {
        let (n, c, t, f) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
        let (k, kh, kw) = (w.shape()[0], w.shape()[2], w.shape()[3]);
        let (st, sf) = spec.stride;
        let (pt0, pt1, pf0, pf1) = spec.pad;
        let t_out = (t + pt0 + pt1 - kh) / st + 1;
        let f_out = (f + pf0 + pf1 - kw) / sf + 1;
        let mut out = vec![0.0; n * k * t_out * f_out];
        for ni in 0..n {
            for ki in 0..k {
                for to in 0..t_out {
                    for fo in 0..f_out {
                        let mut acc = b.data()[ki];
                        for ci in 0..c {
                            for dy in 0..kh {
                                for dx in 0..kw {
                                    let ti = (to * st + dy) as isize - pt0 as isize;
                                    let fi = (fo * sf + dx) as isize - pf0 as isize;
                                    if ti >= 0 && (ti as usize) < t && fi >= 0 && (fi as usize) < f {
                                        let xv = x.data()
                                            [((ni * c + ci) * t + ti as usize) * f + fi as usize];
                                        let wv = w.data()[((ki * c + ci) * kh + dy) * kw + dx];
                                        acc += xv * wv;
                                    }
                                }
                            }
                        }
                        out[((ni * k + ki) * t_out + to) * f_out + fo] = acc;
                    }
                }
            }
        }
        Tensor::new(vec![n, k, t_out, f_out], out).unwrap()
    }

    #[test]
    fn conv_identity_kernel_passes_input_through() {
        let x = randn(&[1, 1, 5, 7], 10);
        let w = Tensor::new(vec![1, 1, 1, 1], vec![1.0]).unwrap();
        let b = Tensor::zeros(&[1]);
        let spec = Conv2dSpec { stride: (1, 1), pad: (0, 0, 0, 0) };
        let y = kernels::conv2d_forward(&x, &w, &b, &spec).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn conv_of_ones_sums_the_window() {
        let x = Tensor::full(&[1, 1, 4, 4], 1.0);
        let w = Tensor::full(&[1, 1, 2, 2], 1.0);
        let b = Tensor::zeros(&[1]);
        let spec = Conv2dSpec { stride: (1, 1), pad: (0, 0, 0, 0) };
        let y = kernels::conv2d_forward(&x, &w, &b, &spec).unwrap();
        assert_eq!(y.shape(), &[1, 1, 3, 3]);
        assert!(y.data().iter().all(|&v| v == 4.0));
    }

    #[test]
    fn conv_matches_naive_loop_oracle_over_trials() {
        let mut seeds = rng::stream(42, "conv-oracle-shapes", &[]);
        for trial in 0..100u64 {
            let n = seeds.gen_range(1..3usize);
            let c = seeds.gen_range(1..4usize);
            let k = seeds.gen_range(1..4usize);
            let kh = seeds.gen_range(1..5usize);
            let kw = seeds.gen_range(1..5usize);
            let t = seeds.gen_range(kh..kh + 7);
            let f = seeds.gen_range(kw..kw + 7);
            let st = seeds.gen_range(1..3usize);
            let sf = seeds.gen_range(1..3usize);
            let pad = (
                seeds.gen_range(0..kh),
                seeds.gen_range(0..kh),
                seeds.gen_range(0..kw),
                seeds.gen_range(0..kw),
            );
            let spec = Conv2dSpec { stride: (st, sf), pad };
            let x = randn(&[n, c, t, f], 100 + trial);
            let w = randn(&[k, c, kh, kw], 200 + trial);
            let b = randn(&[k], 300 + trial);
            let fast = kernels::conv2d_forward(&x, &w, &b, &spec).unwrap();
            let slow = naive_conv2d(&x, &w, &b, &spec);
            assert_eq!(fast.shape(), slow.shape(), "trial {trial} spec {spec:?}");
            assert!(
                fast.max_abs_diff(&slow) < 1e-10,
                "trial {trial}: diff {}",
                fast.max_abs_diff(&slow)
            );
        }
    }

    #[test]
    fn conv_same_pad_random_matches_oracle() {
        // stride (2,1) "same"-style padded case on a bigger tensor
        let x = randn(&[2, 3, 9, 7], 11);
        let w = randn(&[4, 3, 4, 4], 12);
        let b = randn(&[4], 13);
        let spec = Conv2dSpec { stride: (2, 1), pad: (2, 1, 2, 1) };
        let fast = kernels::conv2d_forward(&x, &w, &b, &spec).unwrap();
        let slow = naive_conv2d(&x, &w, &b, &spec);
        assert!(fast.max_abs_diff(&slow) < 1e-10);
    }

    #[test]
    fn conv_shape_error_names_dimension() {
        let x = randn(&[1, 3, 5, 5], 14);
        let w = randn(&[2, 4, 3, 3], 15);
        let b = Tensor::zeros(&[2]);
        let spec = Conv2dSpec { stride: (1, 1), pad: (0, 0, 0, 0) };
        let err = kernels::conv2d_forward(&x, &w, &b, &spec).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("channel dimension") && msg.contains("dim 1"), "{msg}");
    }

    #[test]
    fn maxpool_monotone_series_takes_later_element() {
        let x = Tensor::from_fn(&[1, 1, 10, 3], |i| i as f64);
        let y = kernels::maxpool_time_forward(&x, 2, 2).unwrap();
        assert_eq!(y.shape(), &[1, 1, 5, 3]);
        for to in 0..5 {
            for f in 0..3 {
                let expect = ((2 * to + 1) * 3 + f) as f64;
                assert_eq!(y.data()[to * 3 + f], expect);
            }
        }
    }

    #[test]
    fn maxpool_tie_routes_gradient_to_first_element() {
        let x = Tensor::full(&[1, 1, 4, 2], 3.0);
        let g = Tensor::full(&[1, 1, 2, 2], 1.0);
        let dx = kernels::maxpool_time_backward(&x, 2, 2, &g).unwrap();
        assert_eq!(dx.data(), &[1.0, 1.0, 0.0, 0.0, 1.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn maxpool_matches_window_scan_oracle() {
        let x = randn(&[1, 2, 10, 5], 16);
        let y = kernels::maxpool_time_forward(&x, 2, 2).unwrap();
        for ci in 0..2 {
            for to in 0..y.shape()[2] {
                for f in 0..5 {
                    let a = x.data()[(ci * 10 + 2 * to) * 5 + f];
                    let b = x.data()[(ci * 10 + 2 * to + 1) * 5 + f];
                    assert_eq!(y.data()[(ci * y.shape()[2] + to) * 5 + f], a.max(b));
                }
            }
        }
    }

    #[test]
    fn maxpool_too_short_errors() {
        let x = randn(&[1, 1, 1, 3], 17);
        assert!(kernels::maxpool_time_forward(&x, 2, 2).is_err());
    }

    #[test]
    fn avgpool_t1_is_identity() {
        let x = randn(&[2, 3, 1, 4], 18);
        let y = kernels::avgpool_all_time_forward(&x).unwrap();
        assert_eq!(y.data(), x.data());
    }

    #[test]
    fn avgpool_antisymmetric_slices_cancel() {
        let base = randn(&[1, 2, 1, 6], 19);
        let x = Tensor::from_fn(&[1, 2, 2, 6], |i| {
            let plane = 2 * 6;
            let within = i % plane;
            let c = i / plane;
            if within < 6 {
                base.data()[c * 6 + within]
            } else {
                -base.data()[c * 6 + (within - 6)]
            }
        });
        let y = kernels::avgpool_all_time_forward(&x).unwrap();
        assert!(y.data().iter().all(|&v| v.abs() < 1e-15));
    }

    #[test]
    fn avgpool_matches_mean_oracle() {
        let x = randn(&[1, 3, 7, 4], 20);
        let y = kernels::avgpool_all_time_forward(&x).unwrap();
        for c in 0..3 {
            for f in 0..4 {
                let mut s = 0.0;
                for t in 0..7 {
                    s += x.data()[(c * 7 + t) * 4 + f];
                }
                assert!((y.data()[c * 4 + f] - s / 7.0).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn batchnorm_normalizes_per_channel() {
        // input variance well above epsilon so the eps bias stays below 1e-5
        let x = kernels::scale_forward(&randn(&[4, 3, 5, 6], 21), 3.0);
        let gamma = Tensor::full(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let (y, _) = kernels::batchnorm_train_forward(&x, &gamma, &beta, 1e-5).unwrap();
        let m = 4 * 5 * 6;
        for c in 0..3 {
            let mut mean = 0.0;
            let mut var = 0.0;
            for n in 0..4 {
                for i in 0..30 {
                    mean += y.data()[(n * 3 + c) * 30 + i];
                }
            }
            mean /= m as f64;
            for n in 0..4 {
                for i in 0..30 {
                    let d = y.data()[(n * 3 + c) * 30 + i] - mean;
                    var += d * d;
                }
            }
            var /= m as f64;
            assert!(mean.abs() < 1e-6, "channel {c} mean {mean}");
            assert!((var - 1.0).abs() < 1e-5, "channel {c} var {var}");
        }
    }

    #[test]
    fn batchnorm_eval_with_unit_stats_is_nearly_identity() {
        let x = randn(&[2, 3, 4, 4], 22);
        let gamma = Tensor::full(&[3], 1.0);
        let beta = Tensor::zeros(&[3]);
        let (y, _) =
            kernels::batchnorm_eval_forward(&x, &gamma, &beta, &[0.0; 3], &[1.0; 3], 1e-5).unwrap();
        for (a, b) in x.data().iter().zip(y.data()) {
            assert!((a - b).abs() < 1e-4); // off only by the epsilon factor
        }
    }

    #[test]
    fn batchnorm_matches_two_pass_oracle() {
        let x = randn(&[2, 4, 3, 5], 23);
        let gamma = randn(&[4], 24);
        let beta = randn(&[4], 25);
        let eps = 1e-5;
        let (y, _) = kernels::batchnorm_train_forward(&x, &gamma, &beta, eps).unwrap();
        let m = (2 * 3 * 5) as f64;
        for c in 0..4 {
            let mut mean = 0.0;
            for n in 0..2 {
                for i in 0..15 {
                    mean += x.data()[(n * 4 + c) * 15 + i];
                }
            }
            mean /= m;
            let mut var = 0.0;
            for n in 0..2 {
                for i in 0..15 {
                    let d = x.data()[(n * 4 + c) * 15 + i] - mean;
                    var += d * d;
                }
            }
            var /= m;
            for n in 0..2 {
                for i in 0..15 {
                    let xhat = (x.data()[(n * 4 + c) * 15 + i] - mean) / (var + eps).sqrt();
                    let expect = gamma.data()[c] * xhat + beta.data()[c];
                    assert!((y.data()[(n * 4 + c) * 15 + i] - expect).abs() < 1e-10);
                }
            }
        }
    }

    #[test]
    fn batchnorm_degenerate_batch_errors() {
        let x = randn(&[1, 2, 1, 1], 26);
        let gamma = Tensor::full(&[2], 1.0);
        let beta = Tensor::zeros(&[2]);
        let err = kernels::batchnorm_train_forward(&x, &gamma, &beta, 1e-5).unwrap_err();
        assert_eq!(err.to_string(), "degenerate batch");
    }

    #[test]
    fn softmax_uniform_logits_give_uniform_distribution() {
        for temp in [0.5, 1.0, 2.0] {
            let x = Tensor::full(&[2, 8], 3.7);
            let y = kernels::softmax_t_forward(&x, temp).unwrap();
            assert!(y.data().iter().all(|&v| (v - 0.125).abs() < 1e-12));
        }
    }

    #[test]
    fn softmax_temperature_equals_scaled_logits() {
        let x = randn(&[3, 6], 27);
        let temp = 2.0;
        let a = kernels::softmax_t_forward(&x, temp).unwrap();
        let scaled = kernels::scale_forward(&x, 1.0 / temp);
        let b = kernels::softmax_t_forward(&scaled, 1.0).unwrap();
        assert!(a.max_abs_diff(&b) < 1e-12);
    }

    #[test]
    fn softmax_rows_sum_to_one_and_are_positive() {
        let x = randn(&[5, 11], 28);
        let y = kernels::softmax_t_forward(&x, 2.0).unwrap();
        for n in 0..5 {
            let row = &y.data()[n * 11..(n + 1) * 11];
            let s: f64 = row.iter().sum();
            assert!((s - 1.0).abs() < 1e-12);
            assert!(row.iter().all(|&v| v > 0.0));
        }
    }

    #[test]
    fn unit_normalize_zero_vector_errors() {
        let x = Tensor::zeros(&[4]);
        let err = kernels::unit_normalize_forward(&x).unwrap_err();
        assert_eq!(err.to_string(), "zero-norm feature");
    }

    #[test]
    fn distill_loss_uniform_logits_is_ln_class_count() {
        let a = Tensor::full(&[1, 2622], 0.1);
        let (loss, _) = kernels::distill_forward(&a, &a, 2.0).unwrap();
        assert!((loss.item() - 2622f64.ln()).abs() < 1e-9);
        assert!((loss.item() - 7.871692664323645).abs() < 1e-9);
    }

    #[test]
    fn distill_matches_direct_summation_oracle() {
        for trial in 0..100u64 {
            let a = randn(&[1, 33], 400 + trial);
            let b = randn(&[1, 33], 500 + trial);
            let temp = 2.0;
            let (loss, _) = kernels::distill_forward(&a, &b, temp).unwrap();
            // direct definition without stabilization tricks
            let soft = |v: &[f64]| {
                let e: Vec<f64> = v.iter().map(|x| (x / temp).exp()).collect();
                let s: f64 = e.iter().sum();
                e.into_iter().map(|x| x / s).collect::<Vec<f64>>()
            };
            let pa = soft(a.data());
            let pb = soft(b.data());
            let direct: f64 = -pa.iter().zip(&pb).map(|(p, q)| p * q.ln()).sum::<f64>();
            assert!(
                (loss.item() - direct).abs() < 1e-10,
                "trial {trial}: {} vs {direct}",
                loss.item()
            );
        }
    }

    #[test]
    fn distill_gibbs_inequality_holds_numerically() {
        for trial in 0..50u64 {
            let a = randn(&[1, 17], 600 + trial);
            let b = randn(&[1, 17], 700 + trial);
            let (lab, _) = kernels::distill_forward(&a, &b, 2.0).unwrap();
            let (laa, _) = kernels::distill_forward(&a, &a, 2.0).unwrap();
            assert!(lab.item() >= laa.item() - 1e-9, "trial {trial}");
        }
    }

    #[test]
    fn relu_finite_difference_away_from_kinks() {
        let mut r = rng::stream(29, "relu-fd", &[]);
        let x = Tensor::from_fn(&[40], |_| {
            let v: f64 = r.gen_range(1e-3..1.0);
            if r.gen_bool(0.5) {
                v
            } else {
                -v
            }
        });
        let entry = grad_check(
            "relu-fd",
            &[x],
            |tape, ids| {
                let y = tape.relu(ids[0]);
                let t = tape.constant(Tensor::full(&[40], 0.3));
                tape.l2_sq_diff(y, t)
            },
            &GradCheckOpts { tolerance: 1e-6, ..GradCheckOpts::default() },
        )
        .unwrap();
        assert!(entry.passed(), "{}", entry.max_rel_err);
    }
}
