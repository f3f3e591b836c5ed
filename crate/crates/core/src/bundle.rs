//! On-disk model bundle: `bundle.json` (config and split), plus a parameter
//! snapshot (`manifest.json`, `params.bin`).

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use steerank_autodiff::{snapshot, ParamStore};

use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::hypernet::ParamSplitSpec;
use crate::model::Model;

pub const BUNDLE_FILE: &str = "bundle.json";
pub const FORMAT: u32 = 1;
pub const NAMESPACES: [&str; 3] = ["hypernet/", "actor/", "evaluator/"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BundleHeader {
    pub format: u32,
    pub config: RunConfig,
    pub split: ParamSplitSpec,
    pub n: usize,
    pub m: usize,
    pub utilities: Vec<String>,
    pub caps: Vec<f64>,
    /// Training steps the parameters have seen.
    pub steps: usize,
}

#[derive(Clone, Debug)]
pub struct Bundle {
    pub model: Model,
    pub header: BundleHeader,
    /// Hex sha256 over `bundle.json`, `manifest.json` and `params.bin`.
    pub hash: String,
}

fn bundle_err(e: impl std::fmt::Display) -> Error {
    Error::Bundle(e.to_string())
}

fn encode(model: &Model, steps: usize) -> Result<(Vec<u8>, Vec<u8>, Vec<u8>)> {
    let header = BundleHeader {
        format: FORMAT,
        config: model.config.clone(),
        split: model.split.clone(),
        n: model.config.data.n,
        m: model.config.data.m,
        utilities: model.config.utility_names(),
        caps: model.caps(),
        steps,
    };
    let head = serde_json::to_vec_pretty(&header)?;
    let (manifest, buf) = snapshot::encode(&model.params).map_err(bundle_err)?;
    Ok((head, manifest, buf))
}

fn digest(head: &[u8], manifest: &[u8], buf: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(head);
    h.update(manifest);
    h.update(buf);
    hex::encode(h.finalize())
}

/// Writes the bundle and returns its hash.
pub fn save(model: &Model, steps: usize, dir: &Path) -> Result<String> {
    let (head, manifest, buf) = encode(model, steps)?;
    fs::create_dir_all(dir)?;
    fs::write(dir.join(BUNDLE_FILE), &head)?;
    fs::write(dir.join(snapshot::MANIFEST_FILE), &manifest)?;
    fs::write(dir.join(snapshot::BUFFER_FILE), &buf)?;
    Ok(digest(&head, &manifest, &buf))
}

/// Hash the bundle would have on disk, without writing it.
pub fn hash_of(model: &Model, steps: usize) -> Result<String> {
    let (head, manifest, buf) = encode(model, steps)?;
    Ok(digest(&head, &manifest, &buf))
}

fn read(dir: &Path, file: &str) -> Result<Vec<u8>> {
    fs::read(dir.join(file)).map_err(|e| Error::Bundle(format!("{}: {e}", dir.join(file).display())))
}

pub fn load(dir: &Path) -> Result<Bundle> {
    let head = read(dir, BUNDLE_FILE)?;
    let manifest = read(dir, snapshot::MANIFEST_FILE)?;
    let buf = read(dir, snapshot::BUFFER_FILE)?;
    let header: BundleHeader =
        serde_json::from_slice(&head).map_err(|e| Error::Bundle(format!("corrupt {BUNDLE_FILE}: {e}")))?;
    if header.format != FORMAT {
        return Err(Error::Bundle(format!("unsupported bundle format {}", header.format)));
    }
    let params = snapshot::decode(&manifest, &buf).map_err(bundle_err)?;
    let hash = digest(&head, &manifest, &buf);
    let model = from_parts(header.config.clone(), params)?;
    if model.split != header.split {
        return Err(Error::Bundle("parameter split does not match the config".into()));
    }
    Ok(Bundle { model, header, hash })
}

/// Rebuilds a model from a config and a complete parameter store, checking
/// that every expected tensor is present with the right shape.
pub fn from_parts(config: RunConfig, params: ParamStore) -> Result<Model> {
    let mut model = Model::init(config)?;
    let expected = model.params.clone();
    for (name, t) in expected.iter() {
        let got = params
            .get(name)
            .ok_or_else(|| Error::Bundle(format!("missing parameter `{name}`")))?;
        if got.shape() != t.shape() {
            return Err(Error::Bundle(format!("`{name}` has shape {:?}, expected {:?}", got.shape(), t.shape())));
        }
    }
    if let Some(extra) = params.names().find(|n| !expected.contains(n)) {
        return Err(Error::Bundle(format!("unexpected parameter `{extra}`")));
    }
    if let Some(bad) = params.first_non_finite() {
        return Err(Error::NonFinite(bad.to_string()));
    }
    model.params = params;
    Ok(model)
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TensorReport {
    pub name: String,
    pub shape: Vec<usize>,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct NamespaceReport {
    pub namespace: String,
    pub tensors: Vec<TensorReport>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct InspectReport {
    pub hash: String,
    pub utilities: Vec<String>,
    pub caps: Vec<f64>,
    pub n: usize,
    pub m: usize,
    pub steps: usize,
    pub namespaces: Vec<NamespaceReport>,
}

pub fn tensor_hash(values: &[f64]) -> String {
    let mut h = Sha256::new();
    for v in values {
        h.update(v.to_le_bytes());
    }
    hex::encode(h.finalize())
}

/// Per-tensor hash of a parameter store (for "did this change" checks).
pub fn store_hash(store: &ParamStore) -> String {
    let mut h = Sha256::new();
    for (name, t) in store.iter() {
        h.update(name.as_bytes());
        h.update(tensor_hash(t.data()).as_bytes());
    }
    hex::encode(h.finalize())
}

pub fn inspect(dir: &Path) -> Result<InspectReport> {
    let b = load(dir)?;
    let namespaces = NAMESPACES
        .iter()
        .map(|ns| NamespaceReport {
            namespace: ns.to_string(),
            tensors: b
                .model
                .params
                .iter()
                .filter(|(n, _)| n.starts_with(ns))
                .map(|(n, t)| TensorReport {
                    name: n.to_string(),
                    shape: t.shape().to_vec(),
                    sha256: tensor_hash(t.data()),
                })
                .collect(),
        })
        .collect();
    Ok(InspectReport {
        hash: b.hash,
        utilities: b.header.utilities,
        caps: b.header.caps,
        n: b.header.n,
        m: b.header.m,
        steps: b.header.steps,
        namespaces,
    })
}
