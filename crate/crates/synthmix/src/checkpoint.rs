//! Checkpoint archive: one file holding a JSON manifest (names, shapes,
//! config hash, iteration) followed by raw little-endian f32 parameter
//! blobs, one per parameter, named `<network>/<layer param>`. Writes go
//! to a temp file in the same directory and are renamed into place.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use ndarray::{ArrayD, IxDyn};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gan::ModelBundle;

const MAGIC: &[u8; 8] = b"SMXCKPT1";

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BlobEntry {
    pub name: String,
    pub shape: Vec<usize>,
    /// Byte offset from the start of the blob section.
    pub offset: u64,
    pub len_bytes: u64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointManifest {
    pub version: u32,
    pub iteration: u64,
    pub config_hash: String,
    /// The originating run config, embedded so a checkpoint is
    /// self-describing for evaluation.
    pub config: serde_json::Value,
    pub blobs: Vec<BlobEntry>,
}

/// Write all bundle parameters to `path` atomically.
pub fn save_checkpoint(
    path: &Path,
    bundle: &ModelBundle<f32>,
    iteration: u64,
    config_hash: &str,
    config: &serde_json::Value,
) -> Result<()> {
    let mut blobs = Vec::new();
    let mut data = Vec::<u8>::new();
    for store in bundle.stores() {
        for param in store.params() {
            let name = format!("{}/{}", store.name, param.name);
            let offset = data.len() as u64;
            for &v in param.value.iter() {
                data.extend_from_slice(&v.to_le_bytes());
            }
            blobs.push(BlobEntry {
                name,
                shape: param.value.shape().to_vec(),
                offset,
                len_bytes: data.len() as u64 - offset,
            });
        }
    }
    let manifest = CheckpointManifest {
        version: 1,
        iteration,
        config_hash: config_hash.to_string(),
        config: config.clone(),
        blobs,
    };
    let json = serde_json::to_vec(&manifest).expect("manifest serializes");

    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let tmp = dir.join(format!(
        ".{}.tmp",
        path.file_name()
            .map(|n| n.to_string_lossy().into_owned())
            .unwrap_or_else(|| "checkpoint".to_string())
    ));
    {
        let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(MAGIC).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&(json.len() as u64).to_le_bytes())
            .map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&json).map_err(|e| Error::io(&tmp, e))?;
        f.write_all(&data).map_err(|e| Error::io(&tmp, e))?;
        f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    }
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))?;
    Ok(())
}

fn read_archive(path: &Path) -> Result<(CheckpointManifest, Vec<u8>)> {
    let mut f = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut magic = [0u8; 8];
    f.read_exact(&mut magic).map_err(|e| Error::io(path, e))?;
    if &magic != MAGIC {
        return Err(Error::data(format!(
            "{} is not a checkpoint archive",
            path.display()
        )));
    }
    let mut len_bytes = [0u8; 8];
    f.read_exact(&mut len_bytes).map_err(|e| Error::io(path, e))?;
    let json_len = u64::from_le_bytes(len_bytes) as usize;
    let mut json = vec![0u8; json_len];
    f.read_exact(&mut json).map_err(|e| Error::io(path, e))?;
    let manifest: CheckpointManifest =
        serde_json::from_slice(&json).map_err(|e| Error::data(format!("manifest parse: {e}")))?;
    let mut data = Vec::new();
    f.read_to_end(&mut data).map_err(|e| Error::io(path, e))?;
    Ok((manifest, data))
}

/// Read just the manifest.
pub fn read_checkpoint_manifest(path: &Path) -> Result<CheckpointManifest> {
    Ok(read_archive(path)?.0)
}

/// Load parameters into an already-built bundle of the same architecture.
pub fn load_checkpoint_into(
    path: &Path,
    bundle: &mut ModelBundle<f32>,
) -> Result<CheckpointManifest> {
    let (manifest, data) = read_archive(path)?;
    let mut expected: Vec<String> = Vec::new();
    for store in bundle.stores() {
        for param in store.params() {
            expected.push(format!("{}/{}", store.name, param.name));
        }
    }
    let found: std::collections::BTreeSet<&str> =
        manifest.blobs.iter().map(|b| b.name.as_str()).collect();
    for name in &expected {
        if !found.contains(name.as_str()) {
            return Err(Error::data(format!(
                "checkpoint is missing parameter {name}"
            )));
        }
    }
    if found.len() != expected.len() {
        return Err(Error::data(format!(
            "checkpoint holds {} parameters, model expects {}",
            found.len(),
            expected.len()
        )));
    }

    for blob in &manifest.blobs {
        let (store_name, param_name) = blob
            .name
            .split_once('/')
            .ok_or_else(|| Error::data(format!("malformed blob name {}", blob.name)))?;
        let start = blob.offset as usize;
        let end = start + blob.len_bytes as usize;
        if end > data.len() {
            return Err(Error::data(format!(
                "blob {} extends past the archive end",
                blob.name
            )));
        }
        let n: usize = blob.shape.iter().product();
        if n * 4 != blob.len_bytes as usize {
            return Err(Error::data(format!(
                "blob {} length does not match its shape",
                blob.name
            )));
        }
        let vals: Vec<f32> = data[start..end]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        let arr = ArrayD::from_shape_vec(IxDyn(&blob.shape), vals)
            .map_err(|e| Error::data(format!("blob {}: {e}", blob.name)))?;
        let store = bundle
            .stores_mut()
            .into_iter()
            .find(|s| s.name == store_name)
            .ok_or_else(|| Error::data(format!("unknown network {store_name} in checkpoint")))?;
        store.load_value(param_name, arr)?;
    }
    Ok(manifest)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gan::{BundleOptions, ModelCfg};

    fn tiny() -> (ModelCfg, BundleOptions) {
        let cfg = ModelCfg {
            image_side: 16,
            class_count: 3,
            gen_base: 2,
            gen_res_blocks: 1,
            gen_zero_init_head: false,
            disc_base: 2,
            disc_layers: 2,
            seg_head_ch: 4,
            inspector_base: 2,
            inspector_depth: 2,
        };
        let opts = BundleOptions {
            k: 4,
            ..BundleOptions::default()
        };
        (cfg, opts)
    }

    #[test]
    fn save_load_round_trip_restores_every_parameter() {
        let (cfg, opts) = tiny();
        let bundle = ModelBundle::<f32>::build(&cfg, &opts, 42).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.smx");
        save_checkpoint(&path, &bundle, 123, "cfg-hash", &serde_json::json!({"note": "t"})).unwrap();

        let mut other = ModelBundle::<f32>::build(&cfg, &opts, 999).unwrap();
        let before: Vec<u64> = other.stores().iter().map(|s| s.hash_values()).collect();
        let manifest = load_checkpoint_into(&path, &mut other).unwrap();
        assert_eq!(manifest.iteration, 123);
        assert_eq!(manifest.config_hash, "cfg-hash");
        let after: Vec<u64> = other.stores().iter().map(|s| s.hash_values()).collect();
        let original: Vec<u64> = bundle.stores().iter().map(|s| s.hash_values()).collect();
        assert_ne!(before, original);
        assert_eq!(after, original);
    }

    #[test]
    fn architecture_mismatch_is_rejected() {
        let (cfg, opts) = tiny();
        let bundle = ModelBundle::<f32>::build(&cfg, &opts, 1).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.smx");
        save_checkpoint(&path, &bundle, 0, "h", &serde_json::json!({})).unwrap();

        let bigger = ModelCfg {
            gen_base: 4,
            ..cfg
        };
        let mut other = ModelBundle::<f32>::build(&bigger, &opts, 1).unwrap();
        assert!(load_checkpoint_into(&path, &mut other).is_err());

        // Missing inspector: parameter set differs.
        let no_insp = BundleOptions {
            with_inspector: false,
            ..opts
        };
        let mut other = ModelBundle::<f32>::build(&cfg, &no_insp, 1).unwrap();
        assert!(load_checkpoint_into(&path, &mut other).is_err());
    }

    #[test]
    fn non_checkpoint_file_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("junk");
        std::fs::write(&path, b"not a checkpoint at all").unwrap();
        assert!(matches!(
            read_checkpoint_manifest(&path),
            Err(Error::Data(_))
        ));
    }
}
