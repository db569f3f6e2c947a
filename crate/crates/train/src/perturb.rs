//! Test-time corruptions applied to both dates of every pair.

use std::str::FromStr;

use ldg_tensor::nn::init::rng_for;
use rand_distr::{Distribution, Normal};

use crate::data::Dataset;
use crate::error::{Result, TrainError};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PerturbKind {
    GaussNoise,
    GaussBlur,
}

impl FromStr for PerturbKind {
    type Err = TrainError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "gauss_noise" | "noise" => Ok(PerturbKind::GaussNoise),
            "gauss_blur" | "blur" => Ok(PerturbKind::GaussBlur),
            _ => Err(TrainError::Settings(format!("unknown perturbation {s:?} (gauss_noise, gauss_blur)"))),
        }
    }
}

/// Normalised 3x3 Gaussian weights, row-major.
pub fn blur_kernel(sigma: f64) -> [f64; 9] {
    let mut k = [0.0; 9];
    for (i, w) in k.iter_mut().enumerate() {
        let (dy, dx) = ((i / 3) as f64 - 1.0, (i % 3) as f64 - 1.0);
        *w = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
    }
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|w| *w /= s);
    k
}

/// Blurs each `h x w` plane of `img` with replicated borders.
pub fn blur_planes(img: &[f32], h: usize, w: usize, sigma: f64) -> Vec<f32> {
    let k = blur_kernel(sigma);
    let mut out = vec![0.0f32; img.len()];
    for (src, dst) in img.chunks_exact(h * w).zip(out.chunks_exact_mut(h * w)) {
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (i, kw) in k.iter().enumerate() {
                    let yy = (y as isize + i as isize / 3 - 1).clamp(0, h as isize - 1) as usize;
                    let xx = (x as isize + i as isize % 3 - 1).clamp(0, w as isize - 1) as usize;
                    acc += kw * src[yy * w + xx] as f64;
                }
                dst[y * w + x] = acc as f32;
            }
        }
    }
    out
}

/// Returns a corrupted copy of `ds`; `sigma == 0` returns it unchanged.
/// Noise is i.i.d. per pixel (seeded per sample id) and clamped to `[0, 1]`.
pub fn perturb(ds: &Dataset, kind: PerturbKind, sigma: f64, seed: u64) -> Result<Dataset> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(TrainError::Contract(format!("perturbation sigma must be a non-negative number, got {sigma}")));
    }
    let mut out = ds.clone();
    if sigma == 0.0 {
        return Ok(out);
    }
    for s in &mut out.samples {
        match kind {
            PerturbKind::GaussNoise => {
                let mut rng = rng_for(seed, &format!("perturb.{}", s.id));
                let normal = Normal::new(0.0, sigma).expect("finite sigma");
                for img in [&mut s.pre, &mut s.post] {
                    for v in img.iter_mut() {
                        *v = (*v as f64 + normal.sample(&mut rng)).clamp(0.0, 1.0) as f32;
                    }
                }
            }
            PerturbKind::GaussBlur => {
                s.pre = blur_planes(&s.pre, ds.h, ds.w, sigma);
                s.post = blur_planes(&s.post, ds.h, ds.w, sigma);
            }
        }
    }
    Ok(out)
}
