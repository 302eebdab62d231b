//! Versioned checkpoint container.
//!
//! Layout: `CKPT`, format version (u32 LE), manifest length (u64 LE), the
//! JSON manifest, then one `TNS1` tensor blob per manifest entry in order.

use std::collections::BTreeMap;
use std::io::Read;
use std::path::Path;

use serde::{Deserialize, Serialize};

use ccrnn::ccgru::{Ccrnn, ModelConfig};
use ccrnn::ingest::{read_tensor_blob, write_tensor_blob, Scaler, StationSet};
use ccrnn::tensor::{ParamStore, Tensor};
use ccrnn::train_eval::{AblationVariant, AdamState};
use ccrnn::{Error, Result};

use crate::config::RunConfig;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"CKPT";
pub const CHECKPOINT_VERSION: u32 = 1;
pub const TENSOR_MAGIC: &[u8; 4] = b"TNS1";

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
enum EntryKind {
    Param,
    AdamFirst,
    AdamSecond,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Entry {
    name: String,
    kind: EntryKind,
    shape: Vec<usize>,
    trainable: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct Manifest {
    version: u32,
    config: RunConfig,
    model: ModelConfig,
    variant: AblationVariant,
    scaler: Scaler,
    stations: StationSet,
    best_epoch: usize,
    best_val_rmse: Option<f64>,
    adam_step: Option<u64>,
    entries: Vec<Entry>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct NamedTensor {
    pub name: String,
    pub trainable: bool,
    pub value: Tensor<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: RunConfig,
    pub model: ModelConfig,
    pub variant: AblationVariant,
    pub scaler: Scaler,
    pub stations: StationSet,
    pub best_epoch: usize,
    pub best_val_rmse: Option<f64>,
    pub params: Vec<NamedTensor>,
    pub adam: Option<AdamState<f64>>,
}

impl Checkpoint {
    pub fn from_store(store: &ParamStore<f64>) -> Vec<NamedTensor> {
        store
            .iter()
            .map(|(_, e)| NamedTensor { name: e.name.clone(), trainable: e.trainable, value: e.value.clone() })
            .collect()
    }

    /// Rebuilds the network, checking that every stored tensor has a home.
    pub fn to_model(&self) -> Result<Ccrnn<f64>> {
        let mut model = Ccrnn::skeleton(self.model)?;
        if model.store.len() != self.params.len() {
            return Err(Error::Format(format!("checkpoint holds {} tensors, the model has {}", self.params.len(), model.store.len())));
        }
        for p in &self.params {
            let id = model.store.find(&p.name).ok_or_else(|| Error::Format(format!("unknown tensor `{}`", p.name)))?;
            if model.store.get(id).shape() != p.value.shape() {
                return Err(Error::Format(format!("tensor `{}` has shape {:?}, model expects {:?}", p.name, p.value.shape(), model.store.get(id).shape())));
            }
            *model.store.get_mut(id) = p.value.clone();
            model.store.set_trainable(id, p.trainable);
        }
        Ok(model)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut entries = Vec::new();
        let mut blobs: Vec<&Tensor<f64>> = Vec::new();
        for p in &self.params {
            entries.push(Entry { name: p.name.clone(), kind: EntryKind::Param, shape: p.value.shape().to_vec(), trainable: p.trainable });
            blobs.push(&p.value);
        }
        if let Some(adam) = &self.adam {
            for (kind, map) in [(EntryKind::AdamFirst, &adam.first), (EntryKind::AdamSecond, &adam.second)] {
                for (name, t) in map {
                    entries.push(Entry { name: name.clone(), kind, shape: t.shape().to_vec(), trainable: true });
                    blobs.push(t);
                }
            }
        }
        let manifest = Manifest {
            version: CHECKPOINT_VERSION,
            config: self.config.clone(),
            model: self.model,
            variant: self.variant,
            scaler: self.scaler.clone(),
            stations: self.stations.clone(),
            best_epoch: self.best_epoch,
            best_val_rmse: self.best_val_rmse,
            adam_step: self.adam.as_ref().map(|a| a.step),
            entries,
        };
        let text = serde_json::to_vec_pretty(&manifest)?;
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
        out.extend_from_slice(&(text.len() as u64).to_le_bytes());
        out.extend_from_slice(&text);
        for t in blobs {
            write_tensor_blob(&mut out, TENSOR_MAGIC, t)?;
        }
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = bytes;
        let mut magic = [0u8; 4];
        r.read_exact(&mut magic)?;
        if &magic != CHECKPOINT_MAGIC {
            return Err(Error::Format("not a checkpoint file".into()));
        }
        let mut word = [0u8; 4];
        r.read_exact(&mut word)?;
        let version = u32::from_le_bytes(word);
        if version != CHECKPOINT_VERSION {
            return Err(Error::VersionMismatch { found: version, expected: CHECKPOINT_VERSION });
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len)?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|_| Error::Format("manifest too large".into()))?;
        if len > r.len() {
            return Err(Error::Format("truncated manifest".into()));
        }
        let manifest: Manifest = serde_json::from_slice(&r[..len])?;
        r = &r[len..];
        if manifest.version != version {
            return Err(Error::VersionMismatch { found: manifest.version, expected: CHECKPOINT_VERSION });
        }
        let mut params = Vec::new();
        let (mut first, mut second) = (BTreeMap::new(), BTreeMap::new());
        for e in manifest.entries {
            let numel: usize = e.shape.iter().product();
            let size = 4 + 8 * e.shape.len() + 8 * numel;
            if size > r.len() {
                return Err(Error::Format(format!("truncated tensor `{}`", e.name)));
            }
            let t = read_tensor_blob(&r[..size], TENSOR_MAGIC, e.shape.len())?;
            r = &r[size..];
            if t.shape() != e.shape {
                return Err(Error::Format(format!("tensor `{}` shape disagrees with the manifest", e.name)));
            }
            match e.kind {
                EntryKind::Param => params.push(NamedTensor { name: e.name, trainable: e.trainable, value: t }),
                EntryKind::AdamFirst => drop(first.insert(e.name, t)),
                EntryKind::AdamSecond => drop(second.insert(e.name, t)),
            }
        }
        if !r.is_empty() {
            return Err(Error::Format(format!("{} trailing bytes after the last tensor", r.len())));
        }
        let adam = manifest.adam_step.map(|step| AdamState { step, first, second, ..AdamState::new() });
        Ok(Self {
            config: manifest.config,
            model: manifest.model,
            variant: manifest.variant,
            scaler: manifest.scaler,
            stations: manifest.stations,
            best_epoch: manifest.best_epoch,
            best_val_rmse: manifest.best_val_rmse,
            params,
            adam,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}
