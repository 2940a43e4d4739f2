//! Central finite-difference verification of tape gradients.

use crate::error::Result;
use crate::rng;

use super::tape::{Tape, VarId};
use super::tensor::Tensor;

#[derive(Debug, Clone)]
pub struct GradCheckOpts {
    /// Central-difference step.
    pub step: f64,
    /// Relative-error denominator floor; coordinates where both gradients are
    /// below it are compared absolutely.
    pub floor: f64,
    /// Cap on checked coordinates per input tensor (seeded subsample above it).
    pub max_coords_per_input: usize,
    pub tolerance: f64,
    pub seed: u64,
}

impl Default for GradCheckOpts {
    fn default() -> Self {
        GradCheckOpts {
            step: 1e-5,
            floor: 1e-6,
            max_coords_per_input: usize::MAX,
            tolerance: 1e-5,
            seed: 0x5eed,
        }
    }
}

#[derive(Debug, Clone)]
pub struct GradCheckEntry {
    pub name: String,
    pub max_rel_err: f64,
    pub coords_checked: usize,
    pub tolerance: f64,
}

impl GradCheckEntry {
    pub fn passed(&self) -> bool {
        self.max_rel_err < self.tolerance
    }
}

/// Compare the tape gradient of `build` against central finite differences for
/// every (possibly subsampled) coordinate of every input.
///
/// `build` receives one `VarId` per input tensor, all registered as
/// parameters, and must return a scalar loss node.
pub fn grad_check<F>(name: &str, inputs: &[Tensor], build: F, opts: &GradCheckOpts) -> Result<GradCheckEntry>
where
    F: Fn(&mut Tape, &[VarId]) -> Result<VarId>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut tape = Tape::new();
        let ids: Vec<VarId> = tensors.iter().map(|t| tape.param(t.clone())).collect();
        let root = build(&mut tape, &ids)?;
        Ok(tape.value(root).item())
    };

    // Analytic pass.
    let mut tape = Tape::new();
    let ids: Vec<VarId> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let root = build(&mut tape, &ids)?;
    let mut grads = tape.backward(root)?;
    let analytic: Vec<Tensor> = ids
        .iter()
        .map(|&id| grads.take(id).unwrap_or_else(|| Tensor::zeros(tape.value(id).shape())))
        .collect();
    drop(tape);

    let mut max_rel = 0.0f64;
    let mut checked = 0usize;
    let mut work: Vec<Tensor> = inputs.to_vec();

    for (i, input) in inputs.iter().enumerate() {
        let numel = input.numel();
        let coords: Vec<usize> = if numel <= opts.max_coords_per_input {
            (0..numel).collect()
        } else {
            let mut stream = rng::stream(opts.seed, "gradcheck-coords", &[i as u64]);
            rng::permutation(&mut stream, numel)
                .into_iter()
                .take(opts.max_coords_per_input)
                .collect()
        };
        for &c in &coords {
            let orig = input.data()[c];
            work[i].data_mut()[c] = orig + opts.step;
            let up = eval(&work)?;
            work[i].data_mut()[c] = orig - opts.step;
            let down = eval(&work)?;
            work[i].data_mut()[c] = orig;

            let numeric = (up - down) / (2.0 * opts.step);
            let a = analytic[i].data()[c];
            let denom = a.abs().max(numeric.abs());
            let rel = if denom < opts.floor {
                (a - numeric).abs()
            } else {
                (a - numeric).abs() / denom
            };
            if rel > max_rel {
                max_rel = rel;
            }
            checked += 1;
        }
    }

    Ok(GradCheckEntry {
        name: name.to_string(),
        max_rel_err: max_rel,
        coords_checked: checked,
        tolerance: opts.tolerance,
    })
}
