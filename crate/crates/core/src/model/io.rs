//! Model artifacts on disk.
//!
//! ```text
//! <dir>/spec.json            ModelSpec (resolved head widths and input dims)
//! <dir>/layers/<id>.bin      one parameter blob per layer ('/' in ids -> "__")
//! ```
//!
//! Blob layout, little-endian: `b"WSVB"`, u32 version (1), u32 id length,
//! id bytes, u32 rank, rank × u64 weight dims, u64 bias length, weight f64s,
//! bias f64s.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use super::layers::{Conv2d, Dense};
use super::{build, BackboneRegistry, ModelError, ModelHandle, ModelSpec};

const MAGIC: &[u8; 4] = b"WSVB";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Blob {
    pub layer_id: String,
    pub weight_shape: Vec<usize>,
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Blob {
    pub fn encode(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + 8 * (self.weights.len() + self.bias.len()));
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.layer_id.len() as u32).to_le_bytes());
        out.extend_from_slice(self.layer_id.as_bytes());
        out.extend_from_slice(&(self.weight_shape.len() as u32).to_le_bytes());
        for d in &self.weight_shape {
            out.extend_from_slice(&(*d as u64).to_le_bytes());
        }
        out.extend_from_slice(&(self.bias.len() as u64).to_le_bytes());
        for v in self.weights.iter().chain(&self.bias) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, ModelError> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(corrupt("bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(corrupt(&format!("unsupported blob version {version}")));
        }
        let id_len = r.u32()? as usize;
        let layer_id = String::from_utf8(r.take(id_len)?.to_vec()).map_err(|_| corrupt("layer id is not UTF-8"))?;
        let rank = r.u32()? as usize;
        let weight_shape = (0..rank).map(|_| r.u64().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
        let bias_len = r.u64()? as usize;
        let n_weights: usize = weight_shape.iter().product();
        let weights = (0..n_weights).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        let bias = (0..bias_len).map(|_| r.f64()).collect::<Result<Vec<_>, _>>()?;
        if r.pos != bytes.len() {
            return Err(corrupt("trailing bytes"));
        }
        Ok(Self { layer_id, weight_shape, weights, bias })
    }
}

fn corrupt(msg: &str) -> ModelError {
    ModelError::ArtifactMismatch(format!("corrupt parameter blob: {msg}"))
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], ModelError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len()).ok_or_else(|| corrupt("truncated"))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32, ModelError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, ModelError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, ModelError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn file_name(layer_id: &str) -> String {
    format!("{}.bin", layer_id.replace('/', "__"))
}

pub fn write_blob_dir(dir: &Path, blobs: &[Blob]) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    for b in blobs {
        fs::write(dir.join(file_name(&b.layer_id)), b.encode())?;
    }
    Ok(())
}

pub fn read_blob_dir(dir: &Path) -> Result<BTreeMap<String, Blob>, ModelError> {
    let mut out = BTreeMap::new();
    let mut paths: Vec<_> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<Result<_, _>>()?;
    paths.sort();
    for path in paths {
        if path.extension().and_then(|e| e.to_str()) != Some("bin") {
            continue;
        }
        let blob = Blob::decode(&fs::read(&path)?)?;
        out.insert(blob.layer_id.clone(), blob);
    }
    Ok(out)
}

fn take_blob<'a>(blobs: &'a BTreeMap<String, Blob>, id: &str, shape: &[usize], bias_len: usize) -> Result<&'a Blob, ModelError> {
    let blob = blobs.get(id).ok_or_else(|| ModelError::ArtifactMismatch(format!("missing parameters for layer {id}")))?;
    if blob.weight_shape != shape || blob.bias.len() != bias_len {
        return Err(ModelError::ArtifactMismatch(format!(
            "layer {id}: expected weights {shape:?} + bias {bias_len}, found {:?} + {}",
            blob.weight_shape,
            blob.bias.len()
        )));
    }
    Ok(blob)
}

pub(crate) fn assign_conv(conv: &mut Conv2d, blobs: &BTreeMap<String, Blob>) -> Result<(), ModelError> {
    let blob = take_blob(blobs, &conv.id, &conv.weight_shape(), conv.out_channels)?;
    conv.weights.clone_from(&blob.weights);
    conv.bias.clone_from(&blob.bias);
    Ok(())
}

fn assign_dense(dense: &mut Dense, blobs: &BTreeMap<String, Blob>) -> Result<(), ModelError> {
    let blob = take_blob(blobs, &dense.id, &[dense.outputs, dense.inputs], dense.outputs)?;
    dense.weights.clone_from(&blob.weights);
    dense.bias.clone_from(&blob.bias);
    Ok(())
}

fn collect_blobs(handle: &ModelHandle) -> Vec<Blob> {
    let convs = handle.branches().iter().flat_map(|b| b.convs()).map(|c| Blob {
        layer_id: c.id.clone(),
        weight_shape: c.weight_shape(),
        weights: c.weights.clone(),
        bias: c.bias.clone(),
    });
    let dense = handle.head().layers().iter().map(|l| Blob {
        layer_id: l.id.clone(),
        weight_shape: vec![l.outputs, l.inputs],
        weights: l.weights.clone(),
        bias: l.bias.clone(),
    });
    convs.chain(dense).collect()
}

pub fn save(handle: &ModelHandle, dir: &Path) -> Result<(), ModelError> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("spec.json"), serde_json::to_string_pretty(handle.spec())?)?;
    let layers = dir.join("layers");
    if layers.exists() {
        fs::remove_dir_all(&layers)?;
    }
    write_blob_dir(&layers, &collect_blobs(handle))
}

/// Rebuilds the model from `spec.json` and fills every layer from its blob.
/// Missing, extra, or mis-shaped blobs are rejected.
pub fn load(registry: &BackboneRegistry, dir: &Path) -> Result<ModelHandle, ModelError> {
    let spec: ModelSpec = serde_json::from_str(&fs::read_to_string(dir.join("spec.json"))?)?;
    let mut handle = build(registry, &spec)?;
    if handle.spec() != &spec {
        return Err(ModelError::ArtifactMismatch("spec.json is not a resolved spec for this registry".into()));
    }
    let blobs = read_blob_dir(&dir.join("layers"))?;
    let expected = handle.parameters().len();
    if blobs.len() != expected {
        return Err(ModelError::ArtifactMismatch(format!("expected {expected} layer blobs, found {}", blobs.len())));
    }
    for branch in handle.branches_mut() {
        for conv in branch.convs_mut() {
            assign_conv(conv, &blobs)?;
        }
    }
    for layer in handle.head_mut().layers_mut() {
        assign_dense(layer, &blobs)?;
    }
    Ok(handle)
}

/// Writes a backbone's current weights in the cache layout
/// (`<cache>/<name>/<layer>.bin`).
pub fn export_backbone_weights(backbone: &super::ConvBackbone, cache_dir: &Path) -> Result<(), ModelError> {
    let blobs: Vec<Blob> = backbone
        .convs()
        .map(|c| Blob { layer_id: c.id.clone(), weight_shape: c.weight_shape(), weights: c.weights.clone(), bias: c.bias.clone() })
        .collect();
    write_blob_dir(&cache_dir.join(backbone.name.to_string()), &blobs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{build_single, BackboneName, WeightPolicy};

    #[test]
    fn blob_round_trip_and_corruption() {
        let b = Blob { layer_id: "a/b".into(), weight_shape: vec![2, 3], weights: (0..6).map(f64::from).collect(), bias: vec![0.5, -0.5] };
        let bytes = b.encode();
        assert_eq!(Blob::decode(&bytes).unwrap(), b);
        assert!(Blob::decode(&bytes[..bytes.len() - 1]).is_err());
        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(Blob::decode(&bad).is_err());
    }

    #[test]
    fn save_load_round_trip() {
        let reg = BackboneRegistry::new().with_weights_dir(None);
        let mut h = build_single(&reg, BackboneName::ToySmall, 3, vec![8]).unwrap();
        h.head_mut().output_mut().bias = vec![0.1, 0.2, 0.3];
        let dir = tempfile::tempdir().unwrap();
        save(&h, dir.path()).unwrap();
        let back = load(&reg, dir.path()).unwrap();
        assert_eq!(back, h);

        // a blob with the wrong shape is rejected
        let path = dir.path().join("layers").join("head__output.bin");
        let mut blob = Blob::decode(&fs::read(&path).unwrap()).unwrap();
        blob.weight_shape = vec![3, 4];
        blob.weights.truncate(12);
        fs::write(&path, blob.encode()).unwrap();
        assert!(matches!(load(&reg, dir.path()), Err(ModelError::ArtifactMismatch(_))));
    }

    #[test]
    fn cached_backbone_weights_are_used() {
        let cache = tempfile::tempdir().unwrap();
        let reg = BackboneRegistry::new().with_weights_dir(None);
        let mut vgg = reg.instantiate(BackboneName::Vgg16).unwrap();
        for conv in vgg.convs_mut() {
            conv.bias.fill(0.25);
        }
        export_backbone_weights(&vgg, cache.path()).unwrap();
        let strict = BackboneRegistry::new()
            .with_weights_dir(Some(cache.path().to_path_buf()))
            .with_policy(WeightPolicy::RequireCached);
        let loaded = strict.instantiate(BackboneName::Vgg16).unwrap();
        assert_eq!(loaded, vgg);
    }
}
