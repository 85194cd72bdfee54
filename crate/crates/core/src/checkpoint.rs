//! Checkpoint container plus a JSON sidecar.
//!
//! Container layout: magic `MIMK`, `u32` format version, `u32` entry count,
//! then per entry a `u32` name length, the UTF-8 name and one `MIMT` tensor.
//! Integers are little-endian. Entries are `param/<name>`, `adam_m/<name>`
//! and `adam_v/<name>`. The sidecar lives next to the container at
//! `<path>.json`.

use std::path::{Path, PathBuf};

use candle_core::{DType, Tensor};
use ndarray::{Array2, ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::data::TemplateMesh;
use crate::error::{Error, ParseError, Result};
use crate::losses::Preset;
use crate::manifest::Dataset;
use crate::model::{ModelConfig, MotionModel};
use crate::optim::{Adam, AdamConfig};
use crate::tensor_io::{decode_tensor_prefix, encode_tensor, Cursor};
use crate::train::TrainConfig;

pub const MAGIC: [u8; 4] = *b"MIMK";
pub const VERSION: u32 = 1;
const MAX_NAME: usize = 4096;

pub fn encode_container(entries: &[(String, ArrayD<f32>)]) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, array) in entries {
        if name.is_empty() || name.len() > MAX_NAME {
            return Err(ParseError::InvalidName(name.clone()).into());
        }
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&encode_tensor(array)?);
    }
    Ok(out)
}

pub fn decode_container(bytes: &[u8]) -> std::result::Result<Vec<(String, ArrayD<f32>)>, ParseError> {
    let mut cur = Cursor { bytes, pos: 0 };
    let magic = cur.take(4)?;
    if magic != MAGIC {
        let mut found = [0u8; 4];
        found.copy_from_slice(magic);
        return Err(ParseError::BadMagic { expected: MAGIC, found });
    }
    let version = cur.u32()?;
    if version != VERSION {
        return Err(ParseError::Version(version));
    }
    let count = cur.u32()?;
    let mut entries = Vec::new();
    for _ in 0..count {
        let len = cur.u32()? as usize;
        if len == 0 || len > MAX_NAME {
            return Err(ParseError::InvalidName(format!("<{len} bytes>")));
        }
        let raw = cur.take(len)?;
        let name = std::str::from_utf8(raw)
            .map_err(|_| ParseError::InvalidName(String::from_utf8_lossy(raw).into_owned()))?
            .to_string();
        let (array, used) = decode_tensor_prefix(&bytes[cur.pos..])?;
        cur.pos += used;
        entries.push((name, array));
    }
    if cur.pos != bytes.len() {
        return Err(ParseError::TrailingBytes(bytes.len() - cur.pos));
    }
    Ok(entries)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RngState {
    pub seed: u64,
    /// Epoch whose stream is drawn next.
    pub next_epoch: usize,
}

/// Face topology of the training corpus, kept so inference tools can work
/// from a checkpoint alone.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FaceInfo {
    pub template: Vec<[f32; 3]>,
    pub lip_mask: Vec<usize>,
    pub lip_pair: Option<[usize; 2]>,
}

impl FaceInfo {
    pub fn from_dataset(dataset: &Dataset) -> Self {
        Self {
            template: dataset.template.vertices.rows().into_iter().map(|r| [r[0], r[1], r[2]]).collect(),
            lip_mask: dataset.template.lip_mask.clone(),
            lip_pair: dataset.manifest.lip_pair,
        }
    }

    pub fn template_mesh(&self) -> Result<TemplateMesh> {
        let flat: Vec<f32> = self.template.iter().flatten().copied().collect();
        let v = Array2::from_shape_vec((self.template.len(), 3), flat).expect("rows of 3");
        TemplateMesh::new(v, self.lip_mask.clone())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sidecar {
    pub format_version: u32,
    pub preset: Preset,
    pub seed: u64,
    pub epoch: usize,
    pub adam_step: u64,
    pub adam: AdamConfig,
    pub identities: Vec<usize>,
    pub train: TrainConfig,
    pub model: Option<ModelConfig>,
    pub rng: RngState,
    pub face: Option<FaceInfo>,
}

impl Sidecar {
    pub fn new(cfg: &TrainConfig, identities: &[usize], epoch: usize) -> Self {
        Self {
            format_version: VERSION,
            preset: cfg.preset,
            seed: cfg.seed,
            epoch,
            adam_step: 0,
            adam: cfg.adam(),
            identities: identities.to_vec(),
            train: cfg.clone(),
            model: None,
            rng: RngState { seed: cfg.seed, next_epoch: epoch },
            face: None,
        }
    }
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

fn to_array(t: &Tensor) -> Result<ArrayD<f32>> {
    let shape = t.dims().to_vec();
    let data: Vec<f32> = t.to_dtype(DType::F32)?.flatten_all()?.to_vec1()?;
    Ok(ArrayD::from_shape_vec(IxDyn(&shape), data).expect("tensor shape"))
}

fn to_tensor(a: &ArrayD<f32>, model: &MotionModel) -> Result<Tensor> {
    let t = Tensor::from_vec(a.iter().copied().collect::<Vec<_>>(), a.shape(), model.device())?;
    Ok(t.to_dtype(model.dtype())?)
}

pub fn save(path: &Path, model: &MotionModel, adam: Option<&Adam>, sidecar: &Sidecar) -> Result<()> {
    let mut entries = Vec::new();
    for (name, var) in model.params.iter() {
        entries.push((format!("param/{name}"), to_array(var.as_tensor())?));
    }
    if let Some(adam) = adam {
        for (name, m) in &adam.m {
            entries.push((format!("adam_m/{name}"), to_array(m)?));
        }
        for (name, v) in &adam.v {
            entries.push((format!("adam_v/{name}"), to_array(v)?));
        }
    }
    let bytes = encode_container(&entries)?;
    let mut side = sidecar.clone();
    side.model = Some(model.config.clone());
    side.adam_step = adam.map_or(0, |a| a.step);
    let json = serde_json::to_string_pretty(&side).expect("sidecar serializes");
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::Io { path: dir.to_path_buf(), source: e })?;
    }
    std::fs::write(path, bytes).map_err(|e| Error::Io { path: path.to_path_buf(), source: e })?;
    let side_path = sidecar_path(path);
    std::fs::write(&side_path, json).map_err(|e| Error::Io { path: side_path, source: e })
}

pub fn read_sidecar(path: &Path) -> Result<Sidecar> {
    let side_path = sidecar_path(path);
    let text = std::fs::read_to_string(&side_path).map_err(|e| Error::io(&side_path, e))?;
    let side: Sidecar = serde_json::from_str(&text).map_err(|e| Error::json(&side_path, e))?;
    if side.format_version != VERSION {
        return Err(Error::Config(format!(
            "{}: checkpoint format version {} is not supported (expected {VERSION})",
            side_path.display(),
            side.format_version
        )));
    }
    Ok(side)
}

fn read_entries(path: &Path) -> Result<Vec<(String, ArrayD<f32>)>> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_container(&bytes).map_err(|source| Error::Parse { path: path.to_path_buf(), source })
}

/// Copies container parameters into an existing model. Every model parameter
/// must be present with the same shape.
pub fn load_params(model: &MotionModel, entries: &[(String, ArrayD<f32>)]) -> Result<()> {
    let mut seen = 0;
    for (name, array) in entries {
        let Some(pname) = name.strip_prefix("param/") else { continue };
        let var = model
            .params
            .get(pname)
            .ok_or_else(|| Error::Shape(format!("checkpoint parameter {pname} does not exist in this model")))?;
        if var.dims() != array.shape() {
            return Err(Error::Shape(format!(
                "parameter {pname} is {:?} in the checkpoint but {:?} in the model",
                array.shape(),
                var.dims()
            )));
        }
        var.set(&to_tensor(array, model)?)?;
        seen += 1;
    }
    if seen != model.params.len() {
        return Err(Error::Shape(format!(
            "checkpoint holds {seen} of the model's {} parameters",
            model.params.len()
        )));
    }
    Ok(())
}

pub struct Loaded {
    pub model: MotionModel,
    pub adam: Adam,
    pub sidecar: Sidecar,
}

pub fn load(path: &Path) -> Result<Loaded> {
    let sidecar = read_sidecar(path)?;
    let config = sidecar
        .model
        .clone()
        .ok_or_else(|| Error::Config(format!("{}: sidecar lacks a model config", path.display())))?;
    let model = MotionModel::new(config, sidecar.seed, DType::F32)?;
    let entries = read_entries(path)?;
    load_params(&model, &entries)?;
    let mut adam = Adam::new(sidecar.adam);
    adam.step = sidecar.adam_step;
    for (name, array) in &entries {
        if let Some(p) = name.strip_prefix("adam_m/") {
            adam.m.insert(p.to_string(), to_tensor(array, &model)?);
        } else if let Some(p) = name.strip_prefix("adam_v/") {
            adam.v.insert(p.to_string(), to_tensor(array, &model)?);
        }
    }
    Ok(Loaded { model, adam, sidecar })
}

/// Loads parameters saved for `model`'s architecture into it.
pub fn load_into(model: &MotionModel, path: &Path) -> Result<()> {
    load_params(model, &read_entries(path)?)
}

/// Copies `audio.*` parameters from a container into `model`, leaving the
/// rest untouched. This is where externally pretrained audio weights enter.
pub fn import_audio_weights(model: &MotionModel, path: &Path) -> Result<usize> {
    let entries = read_entries(path)?;
    let mut n = 0;
    for (name, array) in &entries {
        let Some(pname) = name.strip_prefix("param/").filter(|p| p.starts_with("audio.")) else { continue };
        let var = model
            .params
            .get(pname)
            .ok_or_else(|| Error::Shape(format!("{pname} does not exist in this model")))?;
        if var.dims() != array.shape() {
            return Err(Error::Shape(format!("{pname}: {:?} vs {:?}", array.shape(), var.dims())));
        }
        var.set(&to_tensor(array, model)?)?;
        n += 1;
    }
    Ok(n)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn container_roundtrip_and_errors() {
        let a = ArrayD::from_shape_vec(IxDyn(&[2]), vec![1.0f32, -2.0]).unwrap();
        let b = ArrayD::from_shape_vec(IxDyn(&[]), vec![0.5f32]).unwrap();
        let entries = vec![("param/a".to_string(), a), ("param/b".to_string(), b)];
        let bytes = encode_container(&entries).unwrap();
        assert_eq!(decode_container(&bytes).unwrap(), entries);
        let mut wrong = bytes.clone();
        wrong[4] = 9;
        assert!(matches!(decode_container(&wrong), Err(ParseError::Version(9))));
        assert!(matches!(decode_container(&bytes[..bytes.len() - 1]), Err(ParseError::Truncated { .. })));
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(matches!(decode_container(&extra), Err(ParseError::TrailingBytes(1))));
        assert!(matches!(decode_container(b"MIMT\x01\0\0\0"), Err(ParseError::BadMagic { .. })));
    }
}
