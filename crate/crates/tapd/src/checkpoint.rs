//! Parameter checkpoints: each tensor map is a little-endian `f64` blob next
//! to a JSON shape manifest, and a full experiment snapshot is a directory of
//! such pairs plus a `state.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use tapd_core::consolidation::{EwcConfig, EwcState};
use tapd_core::nn::{Tensor, TensorMap};
use tapd_core::schedule::{PhaseRecord, Snapshot};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Offset into the blob, in `f64` elements.
    pub offset: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorManifest {
    pub entries: Vec<TensorEntry>,
    pub scalars: usize,
    pub checksum: String,
}

pub fn encode_tensors(map: &TensorMap) -> (TensorManifest, Vec<u8>) {
    let mut bytes = Vec::with_capacity(map.num_scalars() * 8);
    let mut entries = Vec::new();
    let mut offset = 0;
    for (name, t) in map.iter() {
        entries.push(TensorEntry { name: name.to_string(), shape: t.shape.clone(), offset });
        for v in &t.data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        offset += t.data.len();
    }
    let manifest = TensorManifest { entries, scalars: offset, checksum: format!("{:016x}", map.checksum()) };
    (manifest, bytes)
}

pub fn decode_tensors(manifest: &TensorManifest, bytes: &[u8], path: &Path) -> Result<TensorMap> {
    if bytes.len() != manifest.scalars * 8 {
        return Err(Error::format(path, format!("blob holds {} bytes, manifest expects {}", bytes.len(), manifest.scalars * 8)));
    }
    let values: Vec<f64> = bytes.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk"))).collect();
    let mut map = TensorMap::new();
    let mut expected = 0;
    for e in &manifest.entries {
        let len: usize = e.shape.iter().product();
        if e.offset != expected || e.offset + len > values.len() {
            return Err(Error::format(path, format!("entry `{}` is out of place", e.name)));
        }
        map.insert(&e.name, Tensor::from_vec(&e.shape, values[e.offset..e.offset + len].to_vec())?)?;
        expected += len;
    }
    if expected != manifest.scalars {
        return Err(Error::format(path, "manifest entries do not cover the blob"));
    }
    if format!("{:016x}", map.checksum()) != manifest.checksum {
        return Err(Error::format(path, "checksum mismatch"));
    }
    Ok(map)
}

pub fn write_tensors(dir: &Path, stem: &str, map: &TensorMap) -> Result<()> {
    let (manifest, bytes) = encode_tensors(map);
    let bin = dir.join(format!("{stem}.bin"));
    fs::write(&bin, bytes).map_err(Error::io(&bin))?;
    let json = dir.join(format!("{stem}.json"));
    let text = serde_json::to_string_pretty(&manifest).map_err(Error::json(&json))?;
    fs::write(&json, text).map_err(Error::io(&json))?;
    Ok(())
}

pub fn read_tensors(dir: &Path, stem: &str) -> Result<TensorMap> {
    let json = dir.join(format!("{stem}.json"));
    let text = fs::read_to_string(&json).map_err(Error::io(&json))?;
    let manifest: TensorManifest = serde_json::from_str(&text).map_err(Error::json(&json))?;
    let bin = dir.join(format!("{stem}.bin"));
    let bytes = fs::read(&bin).map_err(Error::io(&bin))?;
    decode_tensors(&manifest, &bytes, &bin)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct SnapshotState {
    global_step: u64,
    next_unit: usize,
    lateral_enabled: bool,
    active_seed: u64,
    kb_seed: u64,
    ewc_config: EwcConfig,
    tasks_compressed: u32,
    has_forward_model: bool,
    /// Lines of the metrics file that belong to the completed units.
    metrics_lines: u64,
    records: Vec<PhaseRecord>,
}

/// Writes a snapshot into `dir`, replacing any previous contents. The
/// directory is built under a temporary name and renamed into place.
pub fn save_snapshot(dir: &Path, snap: &Snapshot, metrics_lines: u64) -> Result<()> {
    let tmp = temp_sibling(dir);
    if tmp.exists() {
        fs::remove_dir_all(&tmp).map_err(Error::io(&tmp))?;
    }
    fs::create_dir_all(&tmp).map_err(Error::io(&tmp))?;
    write_tensors(&tmp, "active", &snap.active)?;
    write_tensors(&tmp, "kb", &snap.kb)?;
    write_tensors(&tmp, "active_opt", &snap.active_opt)?;
    write_tensors(&tmp, "kb_opt", &snap.kb_opt)?;
    write_tensors(&tmp, "ewc_anchor", &snap.ewc.anchor)?;
    write_tensors(&tmp, "ewc_fisher", &snap.ewc.fisher)?;
    if let Some((p, o)) = &snap.forward_model {
        write_tensors(&tmp, "forward_model", p)?;
        write_tensors(&tmp, "forward_model_opt", o)?;
    }
    let state = SnapshotState {
        global_step: snap.global_step,
        next_unit: snap.next_unit,
        lateral_enabled: snap.lateral_enabled,
        active_seed: snap.active_seed,
        kb_seed: snap.kb_seed,
        ewc_config: snap.ewc.config,
        tasks_compressed: snap.ewc.tasks_compressed,
        has_forward_model: snap.forward_model.is_some(),
        metrics_lines,
        records: snap.records.clone(),
    };
    let path = tmp.join("state.json");
    fs::write(&path, serde_json::to_string_pretty(&state).map_err(Error::json(&path))?).map_err(Error::io(&path))?;
    if dir.exists() {
        fs::remove_dir_all(dir).map_err(Error::io(dir))?;
    }
    fs::rename(&tmp, dir).map_err(Error::io(dir))?;
    Ok(())
}

/// Loads a snapshot and the metrics line count recorded with it.
pub fn load_snapshot(dir: &Path) -> Result<(Snapshot, u64)> {
    let path = dir.join("state.json");
    let text = fs::read_to_string(&path).map_err(Error::io(&path))?;
    let s: SnapshotState = serde_json::from_str(&text).map_err(Error::json(&path))?;
    let forward_model = if s.has_forward_model {
        Some((read_tensors(dir, "forward_model")?, read_tensors(dir, "forward_model_opt")?))
    } else {
        None
    };
    let snap = Snapshot {
        global_step: s.global_step,
        next_unit: s.next_unit,
        records: s.records,
        lateral_enabled: s.lateral_enabled,
        active: read_tensors(dir, "active")?,
        active_seed: s.active_seed,
        kb: read_tensors(dir, "kb")?,
        kb_seed: s.kb_seed,
        active_opt: read_tensors(dir, "active_opt")?,
        kb_opt: read_tensors(dir, "kb_opt")?,
        forward_model,
        ewc: EwcState {
            config: s.ewc_config,
            anchor: read_tensors(dir, "ewc_anchor")?,
            fisher: read_tensors(dir, "ewc_fisher")?,
            tasks_compressed: s.tasks_compressed,
        },
    };
    Ok((snap, s.metrics_lines))
}

fn temp_sibling(dir: &Path) -> PathBuf {
    let mut name = dir.file_name().map(|n| n.to_os_string()).unwrap_or_default();
    name.push(".tmp");
    dir.with_file_name(name)
}
