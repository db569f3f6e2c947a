//! Change maps for a single pair.

use std::path::Path;

use image::ImageReader;
use ldg_tensor::{no_grad, Element, Tensor, Var};
use ldgnet::metrics::argmax_classes;
use ldgnet::LdgNet;

use crate::data::{save_mask, Dataset, Sample};
use crate::error::{io_err, Result, TrainError};

/// Reads an 8-bit RGB PNG as planar `[0, 1]` values and its size.
pub fn read_rgb(path: &Path) -> Result<(Vec<f32>, usize, usize)> {
    let img = ImageReader::open(path)
        .map_err(io_err(path))?
        .decode()
        .map_err(|source| TrainError::Image {
            path: path.to_path_buf(),
            source,
        })?
        .to_rgb8();
    let (w, h) = (img.width() as usize, img.height() as usize);
    let hw = w * h;
    let mut out = vec![0.0f32; 3 * hw];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * hw + i] = px[c] as f32 / 255.0;
        }
    }
    Ok((out, h, w))
}

pub struct Prediction<T: Element> {
    /// 0 or 1 per pixel.
    pub mask: Vec<u8>,
    /// `[1, 2, H, W]`.
    pub logits: Tensor<T>,
}

/// Runs the model in eval mode on one planar pair of size `h x w`.
pub fn predict<T: Element>(model: &LdgNet<T>, pre: &[f32], post: &[f32], h: usize, w: usize) -> Result<Prediction<T>> {
    let mut ds = Dataset::new(h, w);
    ds.push(Sample {
        id: String::new(),
        pre: pre.to_vec(),
        post: post.to_vec(),
        mask: vec![0; h * w],
    })?;
    let b = ds.batch::<T>(&[0])?;
    model.set_training(false);
    let logits: Var<T> = no_grad(|| model.forward(&b.pre, &b.post))?;
    let logits = logits.value().clone();
    Ok(Prediction {
        mask: argmax_classes(&logits)?,
        logits,
    })
}

/// Writes the change map of `pre`/`post` as a 0/255 PNG and, if asked, the
/// raw logits as little-endian values.
pub fn infer_files<T: Element>(
    model: &LdgNet<T>,
    pre: &Path,
    post: &Path,
    out: &Path,
    logits_out: Option<&Path>,
) -> Result<Prediction<T>> {
    let (a, h, w) = read_rgb(pre)?;
    let (b, h2, w2) = read_rgb(post)?;
    if (h, w) != (h2, w2) {
        return Err(TrainError::Dataset(format!(
            "pre image is {w}x{h} but post image is {w2}x{h2}"
        )));
    }
    let p = predict(model, &a, &b, h, w)?;
    save_mask(out, &p.mask, h, w)?;
    if let Some(path) = logits_out {
        let mut bytes = Vec::new();
        T::write_le(p.logits.data(), &mut bytes);
        std::fs::write(path, bytes).map_err(io_err(path))?;
    }
    Ok(p)
}
