//! Binary checkpoint files.
//!
//! Layout: the 8-byte magic `CHTRCKPT`, a little-endian `u32` format
//! version, a `u64` header length, the JSON header, every tensor listed in
//! the header as little-endian `f64`s, and finally the SHA-256 of all
//! preceding bytes.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cells::EmbeddingTable;
use crate::error::{Error, Result};
use crate::models::{Architecture, Model, ModelConfig};
use crate::params::ParamSet;
use crate::tensor::Tensor;
use crate::text::CharVocab;
use crate::train::{Checkpoint, MetricSnapshot};
use crate::Real;

pub const MAGIC: &[u8; 8] = b"CHTRCKPT";
pub const FORMAT_VERSION: u32 = 1;
const DIGEST_LEN: usize = 32;
const PREFIX_LEN: usize = 8 + 4 + 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Payload {
    Transducer,
    Embedding,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub trainable: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Header {
    pub format_version: u32,
    pub payload: Payload,
    pub config: Option<ModelConfig>,
    pub vocab: CharVocab,
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: f64,
    pub metrics: Option<MetricSnapshot>,
    pub tensors: Vec<TensorEntry>,
}

fn encode(header: &Header, params: &ParamSet<Real>) -> Result<Vec<u8>> {
    let json = serde_json::to_vec(header)?;
    let mut out =
        Vec::with_capacity(PREFIX_LEN + json.len() + params.num_scalars() * 8 + DIGEST_LEN);
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&header.format_version.to_le_bytes());
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for entry in &header.tensors {
        for x in params.get(&entry.name)?.data() {
            out.extend_from_slice(&x.to_le_bytes());
        }
    }
    let digest = Sha256::digest(&out);
    out.extend_from_slice(&digest);
    Ok(out)
}

fn decode(bytes: &[u8]) -> Result<(Header, ParamSet<Real>)> {
    if bytes.len() >= MAGIC.len() && &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::IncompatibleCheckpoint(
            "not a checkpoint file".into(),
        ));
    }
    if bytes.len() < PREFIX_LEN + DIGEST_LEN {
        return Err(Error::Checksum);
    }
    let (body, digest) = bytes.split_at(bytes.len() - DIGEST_LEN);
    if Sha256::digest(body).as_slice() != digest {
        return Err(Error::Checksum);
    }
    let version = u32::from_le_bytes(body[8..12].try_into().expect("4 bytes"));
    if version != FORMAT_VERSION {
        return Err(Error::IncompatibleCheckpoint(format!(
            "format version {version}, expected {FORMAT_VERSION}"
        )));
    }
    let header_len = u64::from_le_bytes(body[12..20].try_into().expect("8 bytes")) as usize;
    let json = body
        .get(PREFIX_LEN..PREFIX_LEN.saturating_add(header_len))
        .ok_or(Error::Checksum)?;
    let header: Header = serde_json::from_slice(json)?;
    let mut rest = &body[PREFIX_LEN + header_len..];
    let mut params = ParamSet::new();
    for entry in &header.tensors {
        let n: usize = entry.shape.iter().product();
        if rest.len() < n * 8 {
            return Err(Error::IncompatibleCheckpoint(format!(
                "tensor `{}` is cut short",
                entry.name
            )));
        }
        let (raw, tail) = rest.split_at(n * 8);
        let data = raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        params.insert(entry.name.clone(), Tensor::new(entry.shape.clone(), data)?);
        params
            .get_mut(&entry.name)?
            .set_requires_grad(entry.trainable);
        rest = tail;
    }
    if !rest.is_empty() {
        return Err(Error::IncompatibleCheckpoint(format!(
            "{} trailing bytes",
            rest.len()
        )));
    }
    Ok((header, params))
}

fn entries(params: &ParamSet<Real>) -> Vec<TensorEntry> {
    params
        .iter()
        .map(|(name, t)| TensorEntry {
            name: name.clone(),
            shape: t.shape().to_vec(),
            trainable: t.requires_grad(),
        })
        .collect()
}

/// Writes `bytes` to a temporary file next to `path` and renames it over.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = match path.parent() {
        Some(d) if !d.as_os_str().is_empty() => d,
        _ => Path::new("."),
    };
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

pub fn checkpoint_to_bytes(ckpt: &Checkpoint) -> Result<Vec<u8>> {
    let header = Header {
        format_version: FORMAT_VERSION,
        payload: Payload::Transducer,
        config: Some(ckpt.model.config.clone()),
        vocab: ckpt.model.vocab.clone(),
        epoch: ckpt.epoch,
        train_loss: ckpt.train_loss,
        val_loss: ckpt.val_loss,
        metrics: ckpt.metrics,
        tensors: entries(&ckpt.model.params),
    };
    encode(&header, &ckpt.model.params)
}

pub fn checkpoint_from_bytes(bytes: &[u8]) -> Result<Checkpoint> {
    let (header, params) = decode(bytes)?;
    let config = match (header.payload, header.config) {
        (Payload::Transducer, Some(c)) => c,
        _ => {
            return Err(Error::IncompatibleCheckpoint(
                "file holds an embedding table, not a model".into(),
            ))
        }
    };
    Ok(Checkpoint {
        model: Model {
            config,
            vocab: header.vocab,
            params,
        },
        epoch: header.epoch,
        train_loss: header.train_loss,
        val_loss: header.val_loss,
        metrics: header.metrics,
    })
}

pub fn save_checkpoint(ckpt: &Checkpoint, path: impl AsRef<Path>) -> Result<()> {
    write_atomic(path.as_ref(), &checkpoint_to_bytes(ckpt)?)
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    checkpoint_from_bytes(&fs::read(path)?)
}

/// Loads a checkpoint and checks it holds the expected architecture.
pub fn load_checkpoint_for(
    path: impl AsRef<Path>,
    architecture: Architecture,
) -> Result<Checkpoint> {
    let ckpt = load_checkpoint(path)?;
    let found = ckpt.model.config.architecture;
    if found != architecture {
        return Err(Error::IncompatibleCheckpoint(format!(
            "checkpoint holds a {} model, run expects {}",
            found.label(),
            architecture.label()
        )));
    }
    Ok(ckpt)
}

/// Stores a character embedding with the vocabulary its rows follow.
pub fn save_embedding(
    table: &EmbeddingTable,
    vocab: &CharVocab,
    path: impl AsRef<Path>,
) -> Result<()> {
    if table.vocab_size() != vocab.len() {
        return Err(Error::InvalidShape(format!(
            "embedding has {} rows for a vocabulary of {}",
            table.vocab_size(),
            vocab.len()
        )));
    }
    let mut params = ParamSet::new();
    table.install(&mut params, Model::EMBEDDING)?;
    let header = Header {
        format_version: FORMAT_VERSION,
        payload: Payload::Embedding,
        config: None,
        vocab: vocab.clone(),
        epoch: 0,
        train_loss: 0.0,
        val_loss: 0.0,
        metrics: None,
        tensors: entries(&params),
    };
    write_atomic(path.as_ref(), &encode(&header, &params)?)
}

pub fn load_embedding(path: impl AsRef<Path>) -> Result<(CharVocab, EmbeddingTable)> {
    let (header, params) = decode(&fs::read(path)?)?;
    if header.payload != Payload::Embedding {
        return Err(Error::IncompatibleCheckpoint(
            "file holds a model, not an embedding table".into(),
        ));
    }
    let t = params.get(Model::EMBEDDING)?;
    let mut table = EmbeddingTable::new(t.rows(), t.cols(), t.data().to_vec())?;
    table.trainable = t.requires_grad();
    Ok((header.vocab, table))
}
