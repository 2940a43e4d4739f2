//! The three-term training loss and its fixed supervision heads.
//!
//! `total = ||h_dec(v_f) - h_dec(v_s)||_1
//!        + lambda1 * || v_f/||v_f|| - v_s/||v_s|| ||_2^2
//!        + lambda2 * distill(h_cls(v_f), h_cls(v_s))`
//!
//! `h_cls` (4096 -> 2622) and `h_dec` (4096 -> 1000) are seeded affine maps,
//! frozen for the lifetime of a run; only the prediction `v_s` carries
//! gradient. Per-term values are reduced by mean over the batch.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::autodiff::{Tape, Tensor, VarId};
use crate::encoder::FACE_FEATURE_DIM;
use crate::error::{Error, Result};
use crate::rng;

/// Output width of the classifier-style head.
pub const CLS_HEAD_DIM: usize = 2622;
/// Output width of the decoder-style head.
pub const DEC_HEAD_DIM: usize = 1000;

/// Weights of the composite loss.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LossWeights {
    pub lambda1: f64,
    pub lambda2: f64,
    pub temperature: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        LossWeights {
            lambda1: 0.025,
            lambda2: 200.0,
            temperature: 2.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        if self.lambda1 < 0.0 || self.lambda2 < 0.0 || self.temperature <= 0.0 {
            return Err(Error::InvalidConfig(
                "loss weights must be nonnegative with positive temperature".into(),
            ));
        }
        Ok(())
    }
}

/// A fixed affine map used inside the loss; never trained.
#[derive(Debug, Clone, PartialEq)]
pub struct AffineHead {
    pub weight: Tensor,
    pub bias: Tensor,
    pub seed: u64,
}

impl AffineHead {
    fn build(seed: u64, tag: &str, out_dim: usize) -> Self {
        let std = (2.0 / FACE_FEATURE_DIM as f64).sqrt();
        let mut stream = rng::stream(seed, tag, &[]);
        let weight = Tensor::from_fn(&[FACE_FEATURE_DIM, out_dim], |_| {
            let z: f64 = stream.sample(StandardNormal);
            z * std
        });
        AffineHead {
            weight,
            bias: Tensor::zeros(&[out_dim]),
            seed,
        }
    }

    pub fn out_dim(&self) -> usize {
        self.weight.shape()[1]
    }

    /// FNV-1a over the exact parameter bits; training must leave it unchanged.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |v: f64| {
            for b in v.to_le_bytes() {
                h ^= b as u64;
                h = h.wrapping_mul(0x0000_0100_0000_01b3);
            }
        };
        self.weight.data().iter().copied().for_each(&mut feed);
        self.bias.data().iter().copied().for_each(&mut feed);
        h
    }
}

/// Both supervision heads.
#[derive(Debug, Clone, PartialEq)]
pub struct Heads {
    pub cls: AffineHead,
    pub dec: AffineHead,
}

pub fn build_heads(cls_seed: u64, dec_seed: u64) -> Heads {
    Heads {
        cls: AffineHead::build(cls_seed, "head.cls.weight", CLS_HEAD_DIM),
        dec: AffineHead::build(dec_seed, "head.dec.weight", DEC_HEAD_DIM),
    }
}

impl Heads {
    pub fn checksum(&self) -> (u64, u64) {
        (self.cls.checksum(), self.dec.checksum())
    }
}

/// Per-term values of one loss evaluation (unweighted terms plus the
/// lambda-weighted total).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub total: f64,
    pub term1_dec_l1: f64,
    pub term2_unit_l2: f64,
    pub term3_distill: f64,
}

/// Tape handles of the assembled loss.
pub struct TracedLoss {
    pub total: VarId,
    pub term1: VarId,
    pub term2: VarId,
    pub term3: VarId,
}

/// Record the composite loss on a tape. `v_f` is the (constant) target batch
/// node, `v_s` the prediction node; both `[N, 4096]`.
pub fn total_loss_traced(
    tape: &mut Tape,
    v_f: VarId,
    v_s: VarId,
    heads: &Heads,
    w: &LossWeights,
) -> Result<TracedLoss> {
    w.validate()?;
    let dec_w = tape.constant(heads.dec.weight.clone());
    let dec_b = tape.constant(heads.dec.bias.clone());
    let cls_w = tape.constant(heads.cls.weight.clone());
    let cls_b = tape.constant(heads.cls.bias.clone());

    let dec_f = tape.linear(v_f, dec_w, dec_b)?;
    let dec_s = tape.linear(v_s, dec_w, dec_b)?;
    let term1 = tape.l1_diff(dec_f, dec_s)?;

    let unit_f = tape.unit_normalize(v_f)?;
    let unit_s = tape.unit_normalize(v_s)?;
    let term2 = tape.l2_sq_diff(unit_f, unit_s)?;

    let cls_f = tape.linear(v_f, cls_w, cls_b)?;
    let cls_s = tape.linear(v_s, cls_w, cls_b)?;
    let term3 = tape.distill_loss(cls_f, cls_s, w.temperature)?;

    let t2w = tape.scale(term2, w.lambda1);
    let t3w = tape.scale(term3, w.lambda2);
    let partial = tape.add(term1, t2w)?;
    let total = tape.add(partial, t3w)?;
    Ok(TracedLoss { total, term1, term2, term3 })
}

impl TracedLoss {
    pub fn breakdown(&self, tape: &Tape) -> LossBreakdown {
        LossBreakdown {
            total: tape.value(self.total).item(),
            term1_dec_l1: tape.value(self.term1).item(),
            term2_unit_l2: tape.value(self.term2).item(),
            term3_distill: tape.value(self.term3).item(),
        }
    }
}

/// Loss values without gradients.
pub fn total_loss(v_f: &Tensor, v_s: &Tensor, heads: &Heads, w: &LossWeights) -> Result<LossBreakdown> {
    let mut tape = Tape::new();
    let f = tape.constant(v_f.clone());
    let s = tape.constant(v_s.clone());
    let traced = total_loss_traced(&mut tape, f, s, heads, w)?;
    Ok(traced.breakdown(&tape))
}

/// Distillation loss of two logit batches (target first), without gradients.
pub fn distill_loss(target: &Tensor, pred: &Tensor, temperature: f64) -> Result<f64> {
    let (v, _) = crate::autodiff::kernels::distill_forward(target, pred, temperature)?;
    Ok(v.item())
}

/// L2 norms of each weighted term's gradient with respect to `v_s`; the
/// diagnostic behind the lambda choices.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GradBalanceReport {
    pub term1_grad_norm: f64,
    pub term2_grad_norm: f64,
    pub term3_grad_norm: f64,
}

pub fn grad_balance_report(
    v_f: &Tensor,
    v_s: &Tensor,
    heads: &Heads,
    w: &LossWeights,
) -> Result<GradBalanceReport> {
    let norm_of = |weighted: &dyn Fn(&mut Tape, &TracedLoss) -> VarId| -> Result<f64> {
        let mut tape = Tape::new();
        let f = tape.constant(v_f.clone());
        let s = tape.param(v_s.clone());
        let traced = total_loss_traced(&mut tape, f, s, heads, w)?;
        let root = weighted(&mut tape, &traced);
        let mut grads = tape.backward(root)?;
        let g = grads.take(s).expect("v_s gradient");
        Ok(g.data().iter().map(|v| v * v).sum::<f64>().sqrt())
    };
    let l1 = w.lambda1;
    let l2 = w.lambda2;
    Ok(GradBalanceReport {
        term1_grad_norm: norm_of(&|_t, l| l.term1)?,
        term2_grad_norm: norm_of(&move |t, l| t.scale(l.term2, l1))?,
        term3_grad_norm: norm_of(&move |t, l| t.scale(l.term3, l2))?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check, GradCheckOpts};

    fn randn_rows(n: usize, seed: u64, scale: f64) -> Tensor {
        let mut r = rng::stream(seed, "loss-test", &[]);
        Tensor::from_fn(&[n, FACE_FEATURE_DIM], |_| {
            let z: f64 = r.sample(StandardNormal);
            z * scale
        })
    }

    #[test]
    fn heads_are_deterministic_in_seed() {
        let a = build_heads(10, 20);
        let b = build_heads(10, 20);
        assert_eq!(a.checksum(), b.checksum());
        let c = build_heads(11, 20);
        assert_ne!(a.cls.checksum(), c.cls.checksum());
        assert_eq!(a.cls.out_dim(), CLS_HEAD_DIM);
        assert_eq!(a.dec.out_dim(), DEC_HEAD_DIM);
    }

    #[test]
    fn identical_features_zero_first_two_terms() {
        let heads = build_heads(1, 2);
        let w = LossWeights::default();
        let v = randn_rows(2, 3, 1.0);
        let b = total_loss(&v, &v, &heads, &w).unwrap();
        assert_eq!(b.term1_dec_l1, 0.0);
        assert_eq!(b.term2_unit_l2, 0.0);
        assert!(b.term3_distill > 0.0);
        assert!(b.term3_distill <= 2622f64.ln() + 1e-9);
    }

    #[test]
    fn all_equal_logits_give_ln_class_count() {
        // zero head weights force all-equal (zero) logits -> uniform softmax
        let mut heads = build_heads(1, 2);
        heads.cls.weight = Tensor::zeros(&[FACE_FEATURE_DIM, CLS_HEAD_DIM]);
        let v = randn_rows(1, 4, 1.0);
        let b = total_loss(&v, &v, &heads, &LossWeights::default()).unwrap();
        assert!((b.term3_distill - 2622f64.ln()).abs() < 1e-12);
    }

    #[test]
    fn matches_straight_line_scalar_reimplementation() {
        let heads = build_heads(5, 6);
        let w = LossWeights::default();
        let vf = randn_rows(2, 7, 1.0);
        let vs = randn_rows(2, 8, 1.0);
        let got = total_loss(&vf, &vs, &heads, &w).unwrap();

        // Independent scalar path: plain loops over rows.
        let n = 2;
        let affine = |v: &[f64], wt: &Tensor, width: usize| -> Vec<f64> {
            let mut out = vec![0.0; width];
            for (o, ov) in out.iter_mut().enumerate() {
                let mut acc = 0.0;
                for d in 0..FACE_FEATURE_DIM {
                    acc += v[d] * wt.data()[d * width + o];
                }
                *ov = acc;
            }
            out
        };
        let mut term1 = 0.0;
        let mut term2 = 0.0;
        let mut term3 = 0.0;
        for row in 0..n {
            let f = &vf.data()[row * FACE_FEATURE_DIM..(row + 1) * FACE_FEATURE_DIM];
            let s = &vs.data()[row * FACE_FEATURE_DIM..(row + 1) * FACE_FEATURE_DIM];
            let df = affine(f, &heads.dec.weight, DEC_HEAD_DIM);
            let ds = affine(s, &heads.dec.weight, DEC_HEAD_DIM);
            term1 += df.iter().zip(&ds).map(|(a, b)| (a - b).abs()).sum::<f64>();
            let nf = f.iter().map(|v| v * v).sum::<f64>().sqrt();
            let ns = s.iter().map(|v| v * v).sum::<f64>().sqrt();
            term2 += f
                .iter()
                .zip(s)
                .map(|(a, b)| {
                    let d = a / nf - b / ns;
                    d * d
                })
                .sum::<f64>();
            let cf = affine(f, &heads.cls.weight, CLS_HEAD_DIM);
            let cs = affine(s, &heads.cls.weight, CLS_HEAD_DIM);
            let soft = |v: &[f64]| {
                let e: Vec<f64> = v.iter().map(|x| (x / w.temperature).exp()).collect();
                let z: f64 = e.iter().sum();
                e.into_iter().map(|x| x / z).collect::<Vec<f64>>()
            };
            let pf = soft(&cf);
            let ps = soft(&cs);
            term3 -= pf.iter().zip(&ps).map(|(p, q)| p * q.ln()).sum::<f64>();
        }
        term1 /= n as f64;
        term2 /= n as f64;
        term3 /= n as f64;
        let total = term1 + w.lambda1 * term2 + w.lambda2 * term3;
        assert!((got.term1_dec_l1 - term1).abs() < 1e-10, "{} vs {term1}", got.term1_dec_l1);
        assert!((got.term2_unit_l2 - term2).abs() < 1e-10);
        assert!((got.term3_distill - term3).abs() < 1e-10);
        assert!((got.total - total).abs() < 1e-8);
    }

    #[test]
    fn term2_is_scale_invariant_and_bounded() {
        let heads = build_heads(9, 10);
        let w = LossWeights::default();
        let vf = randn_rows(1, 11, 1.0);
        let vs = randn_rows(1, 12, 1.0);
        let base = total_loss(&vf, &vs, &heads, &w).unwrap();
        for c in [0.1, 3.0, 250.0] {
            let scaled = crate::autodiff::kernels::scale_forward(&vs, c);
            let got = total_loss(&vf, &scaled, &heads, &w).unwrap();
            assert!((got.term2_unit_l2 - base.term2_unit_l2).abs() < 1e-10);
        }
        assert!(base.term2_unit_l2 >= 0.0 && base.term2_unit_l2 <= 4.0);
    }

    #[test]
    fn zero_norm_feature_is_rejected() {
        let heads = build_heads(1, 2);
        let vf = randn_rows(1, 13, 1.0);
        let vs = Tensor::zeros(&[1, FACE_FEATURE_DIM]);
        let err = total_loss(&vf, &vs, &heads, &LossWeights::default()).unwrap_err();
        assert_eq!(err.to_string(), "zero-norm feature");
    }

    #[test]
    fn term2_gradient_vanishes_at_target() {
        let heads = build_heads(14, 15);
        let w = LossWeights::default();
        let v = randn_rows(1, 16, 1.0);
        let mut tape = Tape::new();
        let f = tape.constant(v.clone());
        let s = tape.param(v.clone());
        let traced = total_loss_traced(&mut tape, f, s, &heads, &w).unwrap();
        let mut grads = tape.backward(traced.term2).unwrap();
        let g = grads.take(s).unwrap();
        assert!(g.data().iter().all(|&x| x.abs() < 1e-12));
    }

    #[test]
    fn zero_lambdas_leave_only_term1_gradient() {
        let heads = build_heads(17, 18);
        let w = LossWeights { lambda1: 0.0, lambda2: 0.0, ..LossWeights::default() };
        let vf = randn_rows(1, 19, 1.0);
        let vs = randn_rows(1, 20, 1.0);
        let rep = grad_balance_report(&vf, &vs, &heads, &w).unwrap();
        assert!(rep.term1_grad_norm > 0.0);
        assert_eq!(rep.term2_grad_norm, 0.0);
        assert_eq!(rep.term3_grad_norm, 0.0);
    }

    #[test]
    fn total_loss_gradient_matches_finite_differences() {
        let heads = build_heads(21, 22);
        let w = LossWeights::default();
        let vf = randn_rows(1, 23, 1.0);
        let vs = randn_rows(1, 24, 1.0);
        let entry = grad_check(
            "total_loss_vs",
            &[vs],
            |tape, ids| {
                let f = tape.constant(vf.clone());
                let traced = total_loss_traced(tape, f, ids[0], &heads, &w)?;
                Ok(traced.total)
            },
            // Wider step: the loss magnitude (~3e3 through the 2622-wide head)
            // makes 1e-5 differences roundoff-limited.
            &GradCheckOpts {
                tolerance: 1e-6,
                max_coords_per_input: 24,
                step: 1e-4,
                ..GradCheckOpts::default()
            },
        )
        .unwrap();
        assert!(entry.passed(), "max rel err {}", entry.max_rel_err);
    }
}
