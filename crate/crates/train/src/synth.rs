//! Procedural change-detection pairs: textured ground with "buildings",
//! some of which appear or disappear between the two dates.
//!
//! The post image also gets a global illumination shift, and both images get
//! per-pixel noise. Neither is marked as change.

use ldg_tensor::nn::init::rng_for;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{Dataset, Sample};
use crate::error::{Result, TrainError};

#[derive(Debug, Clone, PartialEq)]
pub struct SynthOptions {
    pub n: usize,
    pub size: usize,
    pub seed: u64,
    /// Target share of changed pixels per sample; 0 keeps every pair
    /// unchanged.
    pub change_fraction: f64,
    /// Standard deviation of the per-pixel noise.
    pub noise_sigma: f64,
    /// Largest global gain/offset applied to the post image.
    pub illumination: f64,
    pub static_objects: usize,
}

impl Default for SynthOptions {
    fn default() -> Self {
        SynthOptions {
            n: 400,
            size: 128,
            seed: 0,
            change_fraction: 0.10,
            noise_sigma: 0.02,
            illumination: 0.12,
            static_objects: 4,
        }
    }
}

#[derive(Debug, Clone, Copy)]
enum ShapeKind {
    Rect,
    Rotated(f64),
    Ellipse,
}

#[derive(Debug, Clone, Copy)]
struct Object {
    kind: ShapeKind,
    cx: f64,
    cy: f64,
    hx: f64,
    hy: f64,
    color: [f32; 3],
}

impl Object {
    fn contains(&self, x: f64, y: f64) -> bool {
        let (dx, dy) = (x - self.cx, y - self.cy);
        match self.kind {
            ShapeKind::Rect => dx.abs() <= self.hx && dy.abs() <= self.hy,
            ShapeKind::Rotated(t) => {
                let (s, c) = t.sin_cos();
                let (u, v) = (c * dx + s * dy, -s * dx + c * dy);
                u.abs() <= self.hx && v.abs() <= self.hy
            }
            ShapeKind::Ellipse => (dx / self.hx).powi(2) + (dy / self.hy).powi(2) <= 1.0,
        }
    }

    fn random(rng: &mut ChaCha8Rng, size: usize) -> Self {
        let s = size as f64;
        let hx = rng.gen_range(0.04..0.11) * s;
        let hy = rng.gen_range(0.04..0.11) * s;
        let kind = match rng.gen_range(0..3) {
            0 => ShapeKind::Rect,
            1 => ShapeKind::Rotated(rng.gen_range(0.0..std::f64::consts::PI)),
            _ => ShapeKind::Ellipse,
        };
        // Roof colours: light greys, reds and blues, away from the ground tones.
        let color = match rng.gen_range(0..3) {
            0 => {
                let g = rng.gen_range(0.75..0.95);
                [g, g, g]
            }
            1 => [rng.gen_range(0.7..0.9), rng.gen_range(0.2..0.35), rng.gen_range(0.15..0.3)],
            _ => [rng.gen_range(0.2..0.35), rng.gen_range(0.4..0.55), rng.gen_range(0.75..0.95)],
        };
        Object {
            kind,
            cx: rng.gen_range(hx..s - hx),
            cy: rng.gen_range(hy..s - hy),
            hx,
            hy,
            color,
        }
    }

    fn area(&self, size: usize) -> usize {
        let mut n = 0;
        for y in 0..size {
            for x in 0..size {
                n += usize::from(self.contains(x as f64 + 0.5, y as f64 + 0.5));
            }
        }
        n
    }
}

/// Smooth ground texture: a base colour, a few low-frequency waves and a
/// coarse value-noise layer.
fn background(rng: &mut ChaCha8Rng, size: usize) -> Vec<f32> {
    let hw = size * size;
    let base = [rng.gen_range(0.25..0.45), rng.gen_range(0.3..0.5), rng.gen_range(0.15..0.3)];
    let waves: Vec<(f64, f64, f64, f64)> = (0..3)
        .map(|_| {
            (
                rng.gen_range(0.02..0.12),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.0..std::f64::consts::TAU),
                rng.gen_range(0.02..0.06),
            )
        })
        .collect();
    let grid = 9;
    let coarse: Vec<f64> = (0..grid * grid).map(|_| rng.gen_range(-0.06..0.06)).collect();
    let mut out = vec![0.0f32; 3 * hw];
    let cell = (size - 1) as f64 / (grid - 1) as f64;
    for y in 0..size {
        for x in 0..size {
            let (fx, fy) = (x as f64 / cell, y as f64 / cell);
            let (x0, y0) = ((fx as usize).min(grid - 2), (fy as usize).min(grid - 2));
            let (tx, ty) = (fx - x0 as f64, fy - y0 as f64);
            let g = |i: usize, j: usize| coarse[j * grid + i];
            let vn = g(x0, y0) * (1.0 - tx) * (1.0 - ty)
                + g(x0 + 1, y0) * tx * (1.0 - ty)
                + g(x0, y0 + 1) * (1.0 - tx) * ty
                + g(x0 + 1, y0 + 1) * tx * ty;
            let wv: f64 = waves
                .iter()
                .map(|&(f, ang, ph, amp)| amp * ((x as f64 * ang.cos() + y as f64 * ang.sin()) * f + ph).sin())
                .sum();
            for c in 0..3 {
                out[c * hw + y * size + x] = (base[c] + vn + wv) as f32;
            }
        }
    }
    out
}

/// Paints objects in order; returns 1 + index of the top object per pixel
/// (0 for ground).
fn paint(img: &mut [f32], objects: &[Object], size: usize) -> Vec<u16> {
    let hw = size * size;
    let mut ids = vec![0u16; hw];
    for (k, o) in objects.iter().enumerate() {
        let (x0, x1) = bbox(o.cx, o.hx.max(o.hy) * 1.5, size);
        let (y0, y1) = bbox(o.cy, o.hx.max(o.hy) * 1.5, size);
        for y in y0..y1 {
            for x in x0..x1 {
                if o.contains(x as f64 + 0.5, y as f64 + 0.5) {
                    let i = y * size + x;
                    ids[i] = k as u16 + 1;
                    // A faint gradient so roofs are not perfectly flat.
                    let shade = 1.0 - 0.08 * ((x as f64 - o.cx) / (o.hx + 1.0)).clamp(-1.0, 1.0) as f32;
                    for c in 0..3 {
                        img[c * hw + i] = o.color[c] * shade;
                    }
                }
            }
        }
    }
    ids
}

fn bbox(c: f64, r: f64, size: usize) -> (usize, usize) {
    let lo = (c - r).floor().max(0.0) as usize;
    let hi = ((c + r).ceil().max(0.0) as usize + 1).min(size);
    (lo.min(size), hi)
}

fn sample(opts: &SynthOptions, index: usize) -> Sample {
    let size = opts.size;
    let hw = size * size;
    let mut rng = rng_for(opts.seed, &format!("synth.{index}"));
    let ground = background(&mut rng, size);

    let statics: Vec<Object> = (0..opts.static_objects).map(|_| Object::random(&mut rng, size)).collect();
    // Changed objects: each either appears (post only) or disappears (pre only).
    let target = (opts.change_fraction * hw as f64).round() as usize;
    let mut appear = Vec::new();
    let mut vanish = Vec::new();
    let mut changed = 0usize;
    let mut attempts = 0;
    while changed < target && attempts < 200 {
        attempts += 1;
        let o = Object::random(&mut rng, size);
        let a = o.area(size);
        if a == 0 || changed + a > target + target / 2 {
            continue;
        }
        changed += a;
        if rng.gen_bool(0.6) {
            appear.push(o);
        } else {
            vanish.push(o);
        }
    }

    let mut pre = ground.clone();
    let mut post = ground;
    // Ids: statics first, then every changed object, with the same numbering
    // on both dates so a static object yields equal ids.
    let mut pre_objs = statics.clone();
    let mut post_objs = statics;
    let none = Object {
        kind: ShapeKind::Rect,
        cx: -1e9,
        cy: -1e9,
        hx: 0.0,
        hy: 0.0,
        color: [0.0; 3],
    };
    for o in &vanish {
        pre_objs.push(*o);
        post_objs.push(none);
    }
    for o in &appear {
        pre_objs.push(none);
        post_objs.push(*o);
    }
    let ids_pre = paint(&mut pre, &pre_objs, size);
    let ids_post = paint(&mut post, &post_objs, size);
    let mask: Vec<u8> = ids_pre.iter().zip(&ids_post).map(|(a, b)| u8::from(a != b)).collect();

    let gain: Vec<f64> = (0..3)
        .map(|_| 1.0 + rng.gen_range(-opts.illumination..=opts.illumination))
        .collect();
    let offset = rng.gen_range(-opts.illumination..=opts.illumination) * 0.5;
    let noise = Normal::new(0.0, opts.noise_sigma.max(0.0)).expect("finite sigma");
    for c in 0..3 {
        for i in 0..hw {
            let p = &mut post[c * hw + i];
            *p = ((*p as f64) * gain[c] + offset) as f32;
        }
    }
    for img in [&mut pre, &mut post] {
        for v in img.iter_mut() {
            *v = (*v as f64 + noise.sample(&mut rng)).clamp(0.0, 1.0) as f32;
        }
    }
    Sample {
        id: format!("{index:05}"),
        pre,
        post,
        mask,
    }
}

/// Generates `opts.n` pairs; the same options give bitwise-identical data.
pub fn synth_generate(opts: &SynthOptions) -> Result<Dataset> {
    if opts.size < 64 {
        return Err(TrainError::Contract(format!("synthetic size must be at least 64, got {}", opts.size)));
    }
    if !(0.0..=0.5).contains(&opts.change_fraction) {
        return Err(TrainError::Contract("change_fraction must lie in [0, 0.5]".into()));
    }
    let mut ds = Dataset::new(opts.size, opts.size);
    for i in 0..opts.n {
        ds.push(sample(opts, i))?;
    }
    Ok(ds)
}
