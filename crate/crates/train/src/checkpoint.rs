//! Self-describing checkpoint container.
//!
//! ```text
//! ldgnet-checkpoint 1
//! [config]
//! key = value            (every model config field)
//! [meta]
//! key = value            (free-form run information)
//! [tensors]
//! name kind dtype shape offset
//! [end]
//! <little-endian payload>
//! ```
//!
//! `kind` is `param` or `buffer`, `shape` is comma separated (`-` for a
//! scalar) and `offset` counts bytes from the start of the payload.

use std::collections::BTreeMap;
use std::path::Path;

use ldg_tensor::nn::{assign_buffer, for_each_entry, Entry};
use ldg_tensor::{DType, Element, Tensor};
use ldgnet::{LdgNet, ModelConfig};

use crate::error::{io_err, Result, TrainError};

pub const MAGIC: &str = "ldgnet-checkpoint";
pub const VERSION: u32 = 1;
const END: &str = "[end]\n";

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    pub name: String,
    pub is_param: bool,
    pub dtype: DType,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl ManifestEntry {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// A parsed checkpoint: header plus raw payload.
#[derive(Debug, Clone)]
pub struct Checkpoint {
    pub version: u32,
    pub config: ModelConfig,
    pub meta: BTreeMap<String, String>,
    pub tensors: Vec<ManifestEntry>,
    pub payload: Vec<u8>,
}

fn shape_text(shape: &[usize]) -> String {
    if shape.is_empty() {
        "-".into()
    } else {
        shape.iter().map(ToString::to_string).collect::<Vec<_>>().join(",")
    }
}

/// Serializes every parameter and buffer of `model`.
pub fn to_bytes<T: Element>(model: &LdgNet<T>, meta: &BTreeMap<String, String>) -> Vec<u8> {
    let mut header = format!("{MAGIC} {VERSION}\n[config]\n");
    for (k, v) in model.config.to_pairs() {
        header.push_str(&format!("{k} = {v}\n"));
    }
    header.push_str("[meta]\n");
    for (k, v) in meta {
        header.push_str(&format!("{k} = {v}\n"));
    }
    header.push_str("[tensors]\n");
    let mut payload = Vec::new();
    for_each_entry(model, |name, e| {
        let (kind, t) = match e {
            Entry::Param(p) => ("param", p.value().clone()),
            Entry::Buffer(b) => ("buffer", b.borrow().clone()),
        };
        header.push_str(&format!(
            "{name} {kind} {} {} {}\n",
            T::DTYPE,
            shape_text(t.shape()),
            payload.len()
        ));
        T::write_le(t.data(), &mut payload);
    });
    header.push_str(END);
    let mut out = header.into_bytes();
    out.extend_from_slice(&payload);
    out
}

pub fn save<T: Element>(model: &LdgNet<T>, meta: &BTreeMap<String, String>, path: &Path) -> Result<()> {
    std::fs::write(path, to_bytes(model, meta)).map_err(io_err(path))
}

impl Checkpoint {
    pub fn parse(bytes: &[u8], path: &Path) -> Result<Self> {
        let bad = |msg: String| TrainError::Checkpoint {
            path: path.to_path_buf(),
            msg,
        };
        let end = bytes
            .windows(END.len())
            .position(|w| w == END.as_bytes())
            .ok_or_else(|| bad("no [end] marker; not a checkpoint".into()))?;
        let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not UTF-8".into()))?;
        let payload = bytes[end + END.len()..].to_vec();
        let mut lines = header.lines();
        let first = lines.next().unwrap_or("");
        let version = match first.split_once(' ') {
            Some((MAGIC, v)) => v.trim().parse::<u32>().map_err(|_| bad(format!("bad version line {first:?}")))?,
            _ => return Err(bad(format!("bad magic line {first:?}"))),
        };
        if version != VERSION {
            return Err(bad(format!("format version {version}, this build reads version {VERSION}")));
        }
        let mut section = "";
        let mut config = Vec::new();
        let mut meta = BTreeMap::new();
        let mut tensors = Vec::new();
        for line in lines {
            if line.starts_with('[') {
                section = match line {
                    "[config]" | "[meta]" | "[tensors]" => line,
                    _ => return Err(bad(format!("unknown section {line:?}"))),
                };
                continue;
            }
            match section {
                "[config]" | "[meta]" => {
                    let (k, v) = line.split_once(" = ").ok_or_else(|| bad(format!("bad line {line:?}")))?;
                    if section == "[config]" {
                        config.push((k.to_string(), v.to_string()));
                    } else {
                        meta.insert(k.to_string(), v.to_string());
                    }
                }
                "[tensors]" => {
                    let f: Vec<&str> = line.split_whitespace().collect();
                    if f.len() != 5 {
                        return Err(bad(format!("bad manifest line {line:?}")));
                    }
                    let is_param = match f[1] {
                        "param" => true,
                        "buffer" => false,
                        k => return Err(bad(format!("{}: unknown kind {k:?}", f[0]))),
                    };
                    let dtype = DType::parse(f[2]).ok_or_else(|| bad(format!("{}: unknown dtype {:?}", f[0], f[2])))?;
                    let shape = if f[3] == "-" {
                        Vec::new()
                    } else {
                        f[3].split(',')
                            .map(|d| d.parse::<usize>())
                            .collect::<std::result::Result<Vec<_>, _>>()
                            .map_err(|_| bad(format!("{}: bad shape {:?}", f[0], f[3])))?
                    };
                    let offset = f[4].parse().map_err(|_| bad(format!("{}: bad offset", f[0])))?;
                    tensors.push(ManifestEntry {
                        name: f[0].to_string(),
                        is_param,
                        dtype,
                        shape,
                        offset,
                    });
                }
                _ => return Err(bad(format!("content before the first section: {line:?}"))),
            }
        }
        for t in &tensors {
            if t.offset + t.numel() * t.dtype.size_of() > payload.len() {
                return Err(bad(format!("{}: payload truncated", t.name)));
            }
        }
        let config = ModelConfig::from_pairs(config.iter().map(|(k, v)| (k.as_str(), v.as_str())))
            .map_err(|e| bad(format!("config: {e}")))?;
        Ok(Checkpoint {
            version,
            config,
            meta,
            tensors,
            payload,
        })
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(io_err(path))?;
        Self::parse(&bytes, path)
    }

    /// Total element count of the learnable tensors.
    pub fn param_elements(&self) -> usize {
        self.tensors.iter().filter(|t| t.is_param).map(ManifestEntry::numel).sum()
    }

    /// Copies the stored tensors into `model`. Names, kinds, dtypes and
    /// shapes must match the model exactly.
    pub fn restore<T: Element>(&self, model: &LdgNet<T>, path: &Path) -> Result<()> {
        let bad = |msg: String| TrainError::Checkpoint {
            path: path.to_path_buf(),
            msg: format!("(format version {}) {msg}", self.version),
        };
        let mut expected = Vec::new();
        for_each_entry(model, |name, e| {
            let (is_param, shape) = match e {
                Entry::Param(p) => (true, p.shape()),
                Entry::Buffer(b) => (false, b.borrow().shape().to_vec()),
            };
            expected.push((name.to_string(), is_param, shape));
        });
        if expected.len() != self.tensors.len() {
            return Err(bad(format!(
                "model has {} tensors, checkpoint has {}",
                expected.len(),
                self.tensors.len()
            )));
        }
        for ((name, is_param, shape), t) in expected.iter().zip(&self.tensors) {
            if *name != t.name || *is_param != t.is_param || *shape != t.shape || t.dtype != T::DTYPE {
                return Err(bad(format!(
                    "tensor {} ({}, {} {:?}) does not match model tensor {name} ({}, {} {shape:?})",
                    t.name,
                    if t.is_param { "param" } else { "buffer" },
                    t.dtype,
                    t.shape,
                    if *is_param { "param" } else { "buffer" },
                    T::DTYPE,
                )));
            }
        }
        let mut values = self.tensors.iter().map(|t| {
            let bytes = &self.payload[t.offset..t.offset + t.numel() * t.dtype.size_of()];
            Tensor::new(T::read_le(bytes), t.shape.clone())
        });
        let mut err = None;
        for_each_entry(model, |name, e| {
            let Some(v) = values.next() else { return };
            let r = v.and_then(|v| match e {
                Entry::Param(p) => p.set_value(v),
                Entry::Buffer(b) => assign_buffer(name, b, v),
            });
            if let Err(e) = r {
                err.get_or_insert(e);
            }
        });
        match err {
            Some(e) => Err(e.into()),
            None => Ok(()),
        }
    }

    /// Builds the model described by the header and loads its weights. The
    /// element type must match the stored dtype.
    pub fn build<T: Element>(&self, path: &Path) -> Result<LdgNet<T>> {
        if self.config.dtype != T::DTYPE {
            return Err(TrainError::Checkpoint {
                path: path.to_path_buf(),
                msg: format!("stored dtype {} but {} requested", self.config.dtype, T::DTYPE),
            });
        }
        let model = LdgNet::new(&self.config)?;
        self.restore(&model, path)?;
        Ok(model)
    }
}
