//! Bi-temporal image pairs with binary change masks, read from and written
//! to `A/`, `B/` and `label/` PNG folders.

use std::collections::BTreeSet;
use std::path::{Path, PathBuf};

use image::{GrayImage, ImageReader, RgbImage};
use ldg_tensor::nn::init::fnv1a;
use ldg_tensor::{Element, Tensor, Var};
use ldgnet::Labels;

use crate::error::{io_err, Result, TrainError};

pub const PRE_DIR: &str = "A";
pub const POST_DIR: &str = "B";
pub const LABEL_DIR: &str = "label";

/// One co-registered pair. Images are planar RGB in `[0, 1]`, masks hold
/// 0 (unchanged) or 1 (changed).
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub id: String,
    pub pre: Vec<f32>,
    pub post: Vec<f32>,
    pub mask: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub h: usize,
    pub w: usize,
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn new(h: usize, w: usize) -> Self {
        Dataset { h, w, samples: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn push(&mut self, s: Sample) -> Result<()> {
        let hw = self.h * self.w;
        if s.pre.len() != 3 * hw || s.post.len() != 3 * hw || s.mask.len() != hw {
            return Err(TrainError::Dataset(format!(
                "sample {} does not match {}x{}",
                s.id, self.h, self.w
            )));
        }
        self.samples.push(s);
        Ok(())
    }

    /// Fraction of changed pixels over all samples.
    pub fn change_fraction(&self) -> f64 {
        let total: usize = self.samples.iter().map(|s| s.mask.len()).sum();
        let changed: usize = self.samples.iter().map(|s| s.mask.iter().filter(|&&m| m != 0).count()).sum();
        if total == 0 {
            0.0
        } else {
            changed as f64 / total as f64
        }
    }

    /// Deterministic 80/20 split by a hash of each id: `(train, val)`.
    pub fn split(self) -> (Dataset, Dataset) {
        let (h, w) = (self.h, self.w);
        let (val, train): (Vec<_>, Vec<_>) = self.samples.into_iter().partition(|s| is_val_id(&s.id));
        (Dataset { h, w, samples: train }, Dataset { h, w, samples: val })
    }

    /// Stacks the samples at `idx` into `[n, 3, h, w]` inputs and labels.
    pub fn batch<T: Element>(&self, idx: &[usize]) -> Result<Batch<T>> {
        let hw = self.h * self.w;
        let n = idx.len();
        let mut pre = Vec::with_capacity(n * 3 * hw);
        let mut post = Vec::with_capacity(n * 3 * hw);
        let mut mask = Vec::with_capacity(n * hw);
        for &i in idx {
            let s = self
                .samples
                .get(i)
                .ok_or_else(|| TrainError::Contract(format!("sample index {i} out of range")))?;
            pre.extend(s.pre.iter().map(|&v| normalize::<T>(v)));
            post.extend(s.post.iter().map(|&v| normalize::<T>(v)));
            mask.extend_from_slice(&s.mask);
        }
        let shape = [n, 3, self.h, self.w];
        Ok(Batch {
            pre: Var::constant(Tensor::new(pre, shape)?),
            post: Var::constant(Tensor::new(post, shape)?),
            labels: Labels::new(mask, [n, self.h, self.w])?,
        })
    }
}

pub struct Batch<T: Element> {
    pub pre: Var<T>,
    pub post: Var<T>,
    pub labels: Labels,
}

/// Maps `[0, 1]` intensities to `[-1, 1]`.
fn normalize<T: Element>(v: f32) -> T {
    T::lit((v as f64 - 0.5) * 2.0)
}

pub fn is_val_id(id: &str) -> bool {
    fnv1a(id.as_bytes()).is_multiple_of(5)
}

fn png_ids(dir: &Path) -> Result<BTreeSet<String>> {
    let mut ids = BTreeSet::new();
    for entry in std::fs::read_dir(dir).map_err(io_err(dir))? {
        let path = entry.map_err(io_err(dir))?.path();
        if path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png")) {
            if let Some(stem) = path.file_stem().and_then(|s| s.to_str()) {
                ids.insert(stem.to_string());
            }
        }
    }
    Ok(ids)
}

fn open(path: &Path) -> Result<image::DynamicImage> {
    let img_err = |source| TrainError::Image {
        path: path.to_path_buf(),
        source,
    };
    ImageReader::open(path).map_err(io_err(path))?.decode().map_err(img_err)
}

fn rgb_planar(img: &RgbImage) -> Vec<f32> {
    let (w, h) = img.dimensions();
    let hw = (w * h) as usize;
    let mut out = vec![0.0f32; 3 * hw];
    for (i, px) in img.pixels().enumerate() {
        for c in 0..3 {
            out[c * hw + i] = px[c] as f32 / 255.0;
        }
    }
    out
}

/// Loads every pair under `root`. Each id needs a PNG in all three folders;
/// labels are binarized at 128.
pub fn load_dataset(root: &Path) -> Result<Dataset> {
    let dirs: Vec<PathBuf> = [PRE_DIR, POST_DIR, LABEL_DIR].iter().map(|d| root.join(d)).collect();
    for d in &dirs {
        if !d.is_dir() {
            return Err(TrainError::Dataset(format!("missing folder {}", d.display())));
        }
    }
    let sets = dirs.iter().map(|d| png_ids(d)).collect::<Result<Vec<_>>>()?;
    let all: BTreeSet<&String> = sets.iter().flatten().collect();
    let mut missing = Vec::new();
    for id in &all {
        for (d, set) in [PRE_DIR, POST_DIR, LABEL_DIR].iter().zip(&sets) {
            if !set.contains(*id) {
                missing.push(format!("{d}/{id}.png"));
            }
        }
    }
    if !missing.is_empty() {
        return Err(TrainError::Dataset(format!(
            "{}: incomplete pairs, missing {}",
            root.display(),
            missing.join(", ")
        )));
    }
    let mut ds: Option<Dataset> = None;
    for id in all {
        let file = format!("{id}.png");
        let pre = open(&dirs[0].join(&file))?.to_rgb8();
        let post = open(&dirs[1].join(&file))?.to_rgb8();
        let label = open(&dirs[2].join(&file))?.to_luma8();
        let dims = pre.dimensions();
        if post.dimensions() != dims || label.dimensions() != dims {
            return Err(TrainError::Dataset(format!(
                "{id}: image sizes differ ({:?}, {:?}, {:?})",
                dims,
                post.dimensions(),
                label.dimensions()
            )));
        }
        let (w, h) = (dims.0 as usize, dims.1 as usize);
        let ds = ds.get_or_insert_with(|| Dataset::new(h, w));
        if (ds.h, ds.w) != (h, w) {
            return Err(TrainError::Dataset(format!(
                "{id}: size {w}x{h} differs from {}x{} of earlier pairs",
                ds.w, ds.h
            )));
        }
        ds.push(Sample {
            id: id.clone(),
            pre: rgb_planar(&pre),
            post: rgb_planar(&post),
            mask: label.pixels().map(|p| u8::from(p[0] >= 128)).collect(),
        })?;
    }
    ds.ok_or_else(|| TrainError::Dataset(format!("{}: no pairs found", root.display())))
}

/// Loads `root/train` and `root/val` when both exist, otherwise splits
/// `root` itself.
pub fn load_splits(root: &Path) -> Result<(Dataset, Dataset)> {
    let (t, v) = (root.join("train"), root.join("val"));
    if t.is_dir() && v.is_dir() {
        Ok((load_dataset(&t)?, load_dataset(&v)?))
    } else {
        Ok(load_dataset(root)?.split())
    }
}

fn to_rgb(planar: &[f32], h: usize, w: usize) -> RgbImage {
    let hw = h * w;
    RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let q = |c: usize| (planar[c * hw + i].clamp(0.0, 1.0) * 255.0).round() as u8;
        image::Rgb([q(0), q(1), q(2)])
    })
}

/// Writes a 0/255 mask PNG.
pub fn save_mask(path: &Path, mask: &[u8], h: usize, w: usize) -> Result<()> {
    let img = GrayImage::from_fn(w as u32, h as u32, |x, y| {
        image::Luma([if mask[y as usize * w + x as usize] != 0 { 255 } else { 0 }])
    });
    img.save(path).map_err(|source| TrainError::Image {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes the dataset in the layout [`load_dataset`] reads.
pub fn save_dataset(ds: &Dataset, root: &Path) -> Result<()> {
    for d in [PRE_DIR, POST_DIR, LABEL_DIR] {
        let p = root.join(d);
        std::fs::create_dir_all(&p).map_err(io_err(&p))?;
    }
    for s in &ds.samples {
        let file = format!("{}.png", s.id);
        for (d, img) in [(PRE_DIR, &s.pre), (POST_DIR, &s.post)] {
            let path = root.join(d).join(&file);
            to_rgb(img, ds.h, ds.w).save(&path).map_err(|source| TrainError::Image { path, source })?;
        }
        save_mask(&root.join(LABEL_DIR).join(&file), &s.mask, ds.h, ds.w)?;
    }
    Ok(())
}
