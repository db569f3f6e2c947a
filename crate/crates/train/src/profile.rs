//! Parameter, FLOP and peak-memory accounting for a model at an input size.

use std::fmt;

use ldg_tensor::{no_grad, stats, Element, Tensor, Var};
use ldgnet::LdgNet;

use crate::error::Result;

/// Costs of one forward pass on a `1 x 3 x s x s` pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CostReport {
    pub input_size: usize,
    pub params: usize,
    pub flops: u64,
    pub peak_bytes: usize,
}

/// Published measurements for the reference network at 256x256, quoted for
/// comparison only. They come from a GPU implementation with unstated layer
/// widths, so no configuration here is expected to match them.
pub const REFERENCE_PARAMS: f64 = 3.43e6;
pub const REFERENCE_FLOPS: f64 = 1.12e9;
pub const REFERENCE_MEMORY_MB: f64 = 513.0;

pub const SWEEP_SIZES: [usize; 5] = [256, 384, 512, 768, 1024];

impl fmt::Display for CostReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{0}x{0}: {1:.3}M params, {2:.3} GFLOPs, peak {3:.1} MB",
            self.input_size,
            self.params as f64 / 1e6,
            self.flops as f64 / 1e9,
            self.peak_bytes as f64 / (1024.0 * 1024.0)
        )
    }
}

/// Measures one inference forward (eval mode, no gradient tape). FLOPs come
/// from the per-layer closed forms; peak bytes are the high-water mark of
/// live tensor storage above what was allocated before the call.
pub fn profile<T: Element>(model: &LdgNet<T>, input_size: usize) -> Result<CostReport> {
    model.set_training(false);
    let x = Var::constant(Tensor::<T>::zeros(&[1, 3, input_size, input_size]));
    let y = Var::constant(Tensor::<T>::zeros(&[1, 3, input_size, input_size]));
    let (r, flops, peak_bytes) = stats::measure(|| no_grad(|| model.forward(&x, &y).map(drop)));
    r?;
    Ok(CostReport {
        input_size,
        params: model.param_count(),
        flops,
        peak_bytes,
    })
}

pub fn sweep<T: Element>(model: &LdgNet<T>, sizes: &[usize]) -> Result<Vec<CostReport>> {
    sizes.iter().map(|&s| profile(model, s)).collect()
}

/// A two-line comparison against the published reference point.
pub fn reference_note(r: &CostReport) -> String {
    format!(
        "ours at {0}x{0}: {1:.2}M params, {2:.2} GFLOPs, {3:.1} MB peak (CPU tensor storage)\n\
         published reference (their GPU measurements, not ours): {4:.2}M params, {5:.2} GFLOPs, {6:.0} MB; \
         exact agreement is not expected because their layer widths are not given",
        r.input_size,
        r.params as f64 / 1e6,
        r.flops as f64 / 1e9,
        r.peak_bytes as f64 / (1024.0 * 1024.0),
        REFERENCE_PARAMS / 1e6,
        REFERENCE_FLOPS / 1e9,
        REFERENCE_MEMORY_MB
    )
}
