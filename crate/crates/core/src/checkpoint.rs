//! Single-file model checkpoints: a versioned JSON header (architecture
//! config + tensor index) followed by raw little-endian f32 data.

use std::collections::BTreeMap;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{Array1, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::data::Label;
use crate::error::{Error, Result};
use crate::netcore::{
    FullFaceConfig, FullFaceModel, FusionModel, PatchConfig, PatchModel, StyleBank, StyleEntry,
};

const MAGIC: &[u8; 8] = b"PADCKPT\0";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    name: String,
    shape: Vec<usize>,
    offset: usize,
    len: usize,
}

#[derive(Debug, Serialize, Deserialize)]
struct Header {
    version: u32,
    kind: String,
    config: serde_json::Value,
    tensors: Vec<TensorEntry>,
}

/// A named-tensor archive plus free-form config.
pub struct Archive {
    pub kind: String,
    pub config: serde_json::Value,
    pub tensors: BTreeMap<String, ArrayD<f32>>,
}

pub fn save_archive(path: &Path, archive: &Archive) -> Result<()> {
    let mut entries = Vec::new();
    let mut data: Vec<u8> = Vec::new();
    for (name, t) in &archive.tensors {
        let offset = data.len() / 4;
        let slice = t
            .as_slice()
            .map(|s| s.to_vec())
            .unwrap_or_else(|| t.iter().copied().collect());
        for v in &slice {
            data.extend_from_slice(&v.to_le_bytes());
        }
        entries.push(TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            offset,
            len: slice.len(),
        });
    }
    let header = Header {
        version: VERSION,
        kind: archive.kind.clone(),
        config: archive.config.clone(),
        tensors: entries,
    };
    let header_bytes =
        serde_json::to_vec(&header).map_err(|e| Error::Checkpoint(e.to_string()))?;

    let mut file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    let io = |e: std::io::Error| Error::io(path, e);
    file.write_all(MAGIC).map_err(io)?;
    file.write_all(&VERSION.to_le_bytes()).map_err(io)?;
    file.write_all(&(header_bytes.len() as u64).to_le_bytes())
        .map_err(io)?;
    file.write_all(&header_bytes).map_err(io)?;
    file.write_all(&data).map_err(io)?;
    Ok(())
}

pub fn load_archive(path: &Path) -> Result<Archive> {
    let mut file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut buf = Vec::new();
    file.read_to_end(&mut buf).map_err(|e| Error::io(path, e))?;
    if buf.len() < 20 || &buf[..8] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{} is not a padkit checkpoint",
            path.display()
        )));
    }
    let version = u32::from_le_bytes(buf[8..12].try_into().unwrap());
    if version != VERSION {
        return Err(Error::Checkpoint(format!(
            "unsupported checkpoint version {version}"
        )));
    }
    let header_len = u64::from_le_bytes(buf[12..20].try_into().unwrap()) as usize;
    let header: Header = serde_json::from_slice(&buf[20..20 + header_len])
        .map_err(|e| Error::Checkpoint(format!("bad header: {e}")))?;
    let data = &buf[20 + header_len..];
    let mut tensors = BTreeMap::new();
    for e in header.tensors {
        let start = e.offset * 4;
        let end = start + e.len * 4;
        if end > data.len() {
            return Err(Error::Checkpoint(format!("tensor {} out of bounds", e.name)));
        }
        let vals: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&e.shape), vals)
            .map_err(|err| Error::Checkpoint(format!("tensor {}: {err}", e.name)))?;
        tensors.insert(e.name, arr);
    }
    Ok(Archive {
        kind: header.kind,
        config: header.config,
        tensors,
    })
}

fn take(tensors: &mut BTreeMap<String, ArrayD<f32>>, name: &str) -> Result<ArrayD<f32>> {
    tensors
        .remove(name)
        .ok_or_else(|| Error::Checkpoint(format!("missing tensor `{name}`")))
}

fn take1(tensors: &mut BTreeMap<String, ArrayD<f32>>, name: &str) -> Result<Array1<f32>> {
    take(tensors, name)?
        .into_dimensionality()
        .map_err(|e| Error::Checkpoint(format!("tensor `{name}`: {e}")))
}

#[derive(Debug, Serialize, Deserialize)]
struct FullFaceMeta {
    arch: FullFaceConfig,
    style_labels: Option<Vec<Label>>,
}

pub fn save_fullface(path: &Path, model: &FullFaceModel) -> Result<()> {
    let mut tensors = BTreeMap::new();
    for (name, p) in model.param_names().into_iter().zip(model.params()) {
        tensors.insert(name, p.clone());
    }
    for (i, s) in model.stages.iter().enumerate() {
        tensors.insert(format!("stage{i}.running_mean"), s.running_mean.clone().into_dyn());
        tensors.insert(format!("stage{i}.running_var"), s.running_var.clone().into_dyn());
    }
    tensors.insert("reduce.running_mean".into(), model.reduce.running_mean.clone().into_dyn());
    tensors.insert("reduce.running_var".into(), model.reduce.running_var.clone().into_dyn());
    let style_labels = model.style_bank.as_ref().map(|bank| {
        for (k, s) in bank.styles.iter().enumerate() {
            tensors.insert(format!("style{k:03}.mean"), s.mean.clone().into_dyn());
            tensors.insert(format!("style{k:03}.std"), s.std.clone().into_dyn());
        }
        bank.styles.iter().map(|s| s.label).collect()
    });
    let meta = FullFaceMeta {
        arch: model.cfg.clone(),
        style_labels,
    };
    save_archive(
        path,
        &Archive {
            kind: "fullface".into(),
            config: serde_json::to_value(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?,
            tensors,
        },
    )
}

pub fn load_fullface(path: &Path) -> Result<FullFaceModel> {
    let mut archive = load_archive(path)?;
    if archive.kind != "fullface" {
        return Err(Error::Checkpoint(format!(
            "expected a fullface checkpoint, found `{}`",
            archive.kind
        )));
    }
    let meta: FullFaceMeta = serde_json::from_value(archive.config.clone())
        .map_err(|e| Error::Checkpoint(format!("bad fullface config: {e}")))?;
    let mut model = FullFaceModel::new(
        meta.arch,
        &mut crate::rng::stream_rng(0, crate::rng::Stream::ModelInit),
    );
    let names = model.param_names();
    for (name, p) in names.into_iter().zip(model.params_mut()) {
        let t = take(&mut archive.tensors, &name)?;
        if t.shape() != p.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
        }
        *p = t;
    }
    for i in 0..model.stages.len() {
        model.stages[i].running_mean = take1(&mut archive.tensors, &format!("stage{i}.running_mean"))?;
        model.stages[i].running_var = take1(&mut archive.tensors, &format!("stage{i}.running_var"))?;
    }
    model.reduce.running_mean = take1(&mut archive.tensors, "reduce.running_mean")?;
    model.reduce.running_var = take1(&mut archive.tensors, "reduce.running_var")?;
    if let Some(labels) = meta.style_labels {
        let mut styles = Vec::with_capacity(labels.len());
        for (k, label) in labels.into_iter().enumerate() {
            styles.push(StyleEntry {
                label,
                mean: take1(&mut archive.tensors, &format!("style{k:03}.mean"))?,
                std: take1(&mut archive.tensors, &format!("style{k:03}.std"))?,
            });
        }
        model.style_bank = Some(StyleBank { styles });
    }
    Ok(model)
}

pub fn save_patch(path: &Path, model: &PatchModel) -> Result<()> {
    let mut tensors = BTreeMap::new();
    for (name, p) in model.param_names().into_iter().zip(model.params()) {
        tensors.insert(name, p.clone());
    }
    for (i, s) in model.stages.iter().enumerate() {
        tensors.insert(format!("stage{i}.running_mean"), s.running_mean.clone().into_dyn());
        tensors.insert(format!("stage{i}.running_var"), s.running_var.clone().into_dyn());
    }
    save_archive(
        path,
        &Archive {
            kind: "patch".into(),
            config: serde_json::to_value(&model.cfg).map_err(|e| Error::Checkpoint(e.to_string()))?,
            tensors,
        },
    )
}

pub fn load_patch(path: &Path) -> Result<PatchModel> {
    let mut archive = load_archive(path)?;
    if archive.kind != "patch" {
        return Err(Error::Checkpoint(format!(
            "expected a patch checkpoint, found `{}`",
            archive.kind
        )));
    }
    let cfg: PatchConfig = serde_json::from_value(archive.config.clone())
        .map_err(|e| Error::Checkpoint(format!("bad patch config: {e}")))?;
    let mut model = PatchModel::new(cfg, &mut crate::rng::stream_rng(0, crate::rng::Stream::ModelInit));
    let names = model.param_names();
    for (name, p) in names.into_iter().zip(model.params_mut()) {
        let t = take(&mut archive.tensors, &name)?;
        if t.shape() != p.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
        }
        *p = t;
    }
    for i in 0..model.stages.len() {
        model.stages[i].running_mean = take1(&mut archive.tensors, &format!("stage{i}.running_mean"))?;
        model.stages[i].running_var = take1(&mut archive.tensors, &format!("stage{i}.running_var"))?;
    }
    Ok(model)
}

#[derive(Debug, Serialize, Deserialize)]
struct FusionMeta {
    embed_dim: usize,
    hidden_dim: usize,
}

pub fn save_fusion(path: &Path, model: &FusionModel) -> Result<()> {
    let mut tensors = BTreeMap::new();
    for (name, p) in model.param_names().into_iter().zip(model.params()) {
        tensors.insert(name, p.clone());
    }
    let meta = FusionMeta {
        embed_dim: model.embed_dim,
        hidden_dim: model.hidden.bias.len(),
    };
    save_archive(
        path,
        &Archive {
            kind: "fusion".into(),
            config: serde_json::to_value(&meta).map_err(|e| Error::Checkpoint(e.to_string()))?,
            tensors,
        },
    )
}

pub fn load_fusion(path: &Path) -> Result<FusionModel> {
    let mut archive = load_archive(path)?;
    if archive.kind != "fusion" {
        return Err(Error::Checkpoint(format!(
            "expected a fusion checkpoint, found `{}`",
            archive.kind
        )));
    }
    let meta: FusionMeta = serde_json::from_value(archive.config.clone())
        .map_err(|e| Error::Checkpoint(format!("bad fusion config: {e}")))?;
    let mut model = FusionModel::new(
        meta.embed_dim,
        meta.hidden_dim,
        &mut crate::rng::stream_rng(0, crate::rng::Stream::ModelInit),
    );
    let names = model.param_names();
    for (name, p) in names.into_iter().zip(model.params_mut()) {
        let t = take(&mut archive.tensors, &name)?;
        if t.shape() != p.shape() {
            return Err(Error::Checkpoint(format!("shape mismatch for `{name}`")));
        }
        *p = t;
    }
    Ok(model)
}
