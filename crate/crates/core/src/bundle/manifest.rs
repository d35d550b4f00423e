// On-disk bundle layout: `manifest.json` plus `*.bin` tensor files.

use std::collections::HashMap;
use std::fs;
use std::path::{Component, Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{validate_bundle, Annotation, TextItem, TextRole, VideoBundle};
use crate::error::{Error, Result};
use crate::head::{Activation, HeadSpec, Layer};
use crate::tensor::{read_tensor, write_tensor, Tensor};

pub const MANIFEST: &str = "manifest.json";

/// Either a whole tensor file or one row of a 2-D tensor file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(untagged)]
enum TensorRef {
    File(String),
    Row { file: String, row: usize },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
enum LayerRecord {
    Affine {
        weight: TensorRef,
        bias: TensorRef,
    },
    Activation {
        kind: Activation,
    },
    LayerNorm {
        gamma: TensorRef,
        beta: TensorRef,
        epsilon: f64,
    },
}

#[derive(Debug, Serialize, Deserialize)]
struct TextRecord {
    id: String,
    role: TextRole,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    class_ref: Option<String>,
    text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pre_head: Option<TensorRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    sentence_embedding: Option<TensorRef>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    frame_ref: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    video_id: String,
    fps: f64,
    frame_times: Vec<f64>,
    frame_pre_head: TensorRef,
    head_v: Vec<LayerRecord>,
    head_t: Vec<LayerRecord>,
    logit_scale: f64,
    logit_bias: f64,
    texts: Vec<TextRecord>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    annotations: Option<Vec<Annotation>>,
}

struct Resolver<'a> {
    dir: &'a Path,
    cache: HashMap<String, Tensor>,
}

impl Resolver<'_> {
    fn file(&mut self, name: &str) -> Result<&Tensor> {
        if !self.cache.contains_key(name) {
            let path = safe_join(self.dir, name)?;
            let t = read_tensor(&path)?;
            self.cache.insert(name.to_string(), t);
        }
        Ok(&self.cache[name])
    }

    fn resolve(&mut self, r: &TensorRef) -> Result<Tensor> {
        match r {
            TensorRef::File(f) => self.file(f).cloned(),
            TensorRef::Row { file, row } => {
                let t = self.file(file)?;
                if t.rank() != 2 || *row >= t.rows() {
                    return Err(Error::Shape(format!(
                        "{file}: row {row} out of range for dims {:?}",
                        t.dims()
                    )));
                }
                Tensor::vector(t.row(*row).to_vec())
            }
        }
    }

    fn head(&mut self, records: &[LayerRecord]) -> Result<HeadSpec> {
        let mut layers = Vec::with_capacity(records.len());
        for r in records {
            layers.push(match r {
                LayerRecord::Affine { weight, bias } => Layer::Affine {
                    weight: self.resolve(weight)?,
                    bias: self.resolve(bias)?,
                },
                LayerRecord::Activation { kind } => Layer::Activation(*kind),
                LayerRecord::LayerNorm {
                    gamma,
                    beta,
                    epsilon,
                } => Layer::LayerNorm {
                    gamma: self.resolve(gamma)?,
                    beta: self.resolve(beta)?,
                    epsilon: *epsilon,
                },
            });
        }
        Ok(HeadSpec::new(layers))
    }
}

fn safe_join(dir: &Path, name: &str) -> Result<PathBuf> {
    let rel = Path::new(name);
    if rel.is_absolute()
        || rel
            .components()
            .any(|c| !matches!(c, Component::Normal(_) | Component::CurDir))
    {
        return Err(Error::Shape(format!(
            "tensor reference {name:?} must be a relative path inside the bundle"
        )));
    }
    Ok(dir.join(rel))
}

/// Reads and fully validates a bundle directory.
pub fn load_bundle(dir: impl AsRef<Path>) -> Result<VideoBundle> {
    let dir = dir.as_ref();
    let manifest_path = dir.join(MANIFEST);
    let raw = fs::read(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let m: Manifest = serde_json::from_slice(&raw).map_err(|source| Error::Json {
        path: manifest_path.clone(),
        source,
    })?;

    let mut res = Resolver {
        dir,
        cache: HashMap::new(),
    };
    let frame_pre_head = res.resolve(&m.frame_pre_head)?;
    let head_v = res.head(&m.head_v)?;
    let head_t = res.head(&m.head_t)?;
    let mut texts = Vec::with_capacity(m.texts.len());
    for t in &m.texts {
        texts.push(TextItem {
            id: t.id.clone(),
            role: t.role,
            class_ref: t.class_ref.clone(),
            text: t.text.clone(),
            pre_head: t.pre_head.as_ref().map(|r| res.resolve(r)).transpose()?,
            sentence_embedding: t
                .sentence_embedding
                .as_ref()
                .map(|r| res.resolve(r))
                .transpose()?,
            frame_ref: t.frame_ref,
        });
    }
    let bundle = VideoBundle {
        video_id: m.video_id,
        fps: m.fps,
        frame_times: m.frame_times,
        frame_pre_head,
        head_v,
        head_t,
        logit_scale: m.logit_scale,
        logit_bias: m.logit_bias,
        texts,
        annotations: m.annotations,
    };
    let violations = validate_bundle(&bundle);
    if violations.is_empty() {
        Ok(bundle)
    } else {
        Err(Error::Invalid(violations))
    }
}

struct Writer<'a> {
    dir: &'a Path,
}

impl Writer<'_> {
    fn put(&self, name: &str, t: &Tensor) -> Result<TensorRef> {
        write_tensor(self.dir.join(name), t)?;
        Ok(TensorRef::File(name.to_string()))
    }

    fn head(&self, prefix: &str, head: &HeadSpec) -> Result<Vec<LayerRecord>> {
        head.layers
            .iter()
            .enumerate()
            .map(|(i, l)| {
                Ok(match l {
                    Layer::Affine { weight, bias } => LayerRecord::Affine {
                        weight: self.put(&format!("{prefix}_{i}_weight.bin"), weight)?,
                        bias: self.put(&format!("{prefix}_{i}_bias.bin"), bias)?,
                    },
                    Layer::Activation(kind) => LayerRecord::Activation { kind: *kind },
                    Layer::LayerNorm {
                        gamma,
                        beta,
                        epsilon,
                    } => LayerRecord::LayerNorm {
                        gamma: self.put(&format!("{prefix}_{i}_gamma.bin"), gamma)?,
                        beta: self.put(&format!("{prefix}_{i}_beta.bin"), beta)?,
                        epsilon: *epsilon,
                    },
                })
            })
            .collect()
    }

    /// Packs one optional vector per text item into a stacked matrix file when
    /// all present vectors share a width, otherwise writes one file per item.
    fn text_vectors(
        &self,
        stem: &str,
        items: &[Option<&Tensor>],
    ) -> Result<Vec<Option<TensorRef>>> {
        let present: Vec<&Tensor> = items.iter().flatten().copied().collect();
        if present.is_empty() {
            return Ok(vec![None; items.len()]);
        }
        let uniform = present
            .iter()
            .all(|t| t.rank() == 1 && t.len() == present[0].len());
        if uniform {
            let file = format!("{stem}.bin");
            let stacked = Tensor::from_rows(&present.iter().map(|t| t.values()).collect::<Vec<_>>())?;
            write_tensor(self.dir.join(&file), &stacked)?;
            let mut row = 0;
            Ok(items
                .iter()
                .map(|t| {
                    t.map(|_| {
                        let r = TensorRef::Row {
                            file: file.clone(),
                            row,
                        };
                        row += 1;
                        r
                    })
                })
                .collect())
        } else {
            items
                .iter()
                .enumerate()
                .map(|(i, t)| {
                    t.map(|t| self.put(&format!("{stem}_{i}.bin"), t))
                        .transpose()
                })
                .collect()
        }
    }
}

/// Writes a bundle directory. Tensors are stored at 32-bit precision.
pub fn save_bundle(b: &VideoBundle, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let w = Writer { dir };
    let frame_pre_head = w.put("frame_pre_head.bin", &b.frame_pre_head)?;
    let head_v = w.head("head_v", &b.head_v)?;
    let head_t = w.head("head_t", &b.head_t)?;
    let pre: Vec<Option<&Tensor>> = b.texts.iter().map(|t| t.pre_head.as_ref()).collect();
    let sent: Vec<Option<&Tensor>> = b
        .texts
        .iter()
        .map(|t| t.sentence_embedding.as_ref())
        .collect();
    let pre_refs = w.text_vectors("text_pre_head", &pre)?;
    let sent_refs = w.text_vectors("text_sentence_embedding", &sent)?;
    let texts = b
        .texts
        .iter()
        .zip(pre_refs.into_iter().zip(sent_refs))
        .map(|(t, (p, s))| TextRecord {
            id: t.id.clone(),
            role: t.role,
            class_ref: t.class_ref.clone(),
            text: t.text.clone(),
            pre_head: p,
            sentence_embedding: s,
            frame_ref: t.frame_ref,
        })
        .collect();
    let m = Manifest {
        video_id: b.video_id.clone(),
        fps: b.fps,
        frame_times: b.frame_times.clone(),
        frame_pre_head,
        head_v,
        head_t,
        logit_scale: b.logit_scale,
        logit_bias: b.logit_bias,
        texts,
        annotations: b.annotations.clone(),
    };
    let path = dir.join(MANIFEST);
    let mut json = serde_json::to_vec_pretty(&m).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    json.push(b'\n');
    fs::write(&path, json).map_err(|e| Error::io(&path, e))
}
