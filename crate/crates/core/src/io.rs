//! Binary tensors, dataset directories and checkpoints.

use std::fs;
use std::hash::Hasher;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use fnv::FnvHasher;
use serde::{Deserialize, Serialize};

use crate::env::{Action, Demo};
use crate::error::{Error, Result};
use crate::group::RepSpec;
use crate::policy::{PolicyBundle, PolicyConfig};
use crate::steerable::{BlockBasisInfo, Network};
use crate::tensor::DiffTensor;
use crate::train::Sample;

pub const TENSOR_MAGIC: &[u8; 4] = b"EOHT";
pub const TENSOR_VERSION: u32 = 1;
pub const DTYPE_F64: u8 = 1;
pub const CHECKPOINT_VERSION: u32 = 1;

/// Serialize a tensor in the `.tns` layout.
pub fn write_tensor(out: &mut impl Write, shape: &[usize], data: &[f64]) -> Result<()> {
    if shape.iter().product::<usize>() != data.len() {
        return Err(Error::Shape(format!("{} values for shape {shape:?}", data.len())));
    }
    out.write_all(TENSOR_MAGIC)?;
    out.write_all(&TENSOR_VERSION.to_le_bytes())?;
    out.write_all(&[DTYPE_F64])?;
    out.write_all(&(shape.len() as u32).to_le_bytes())?;
    for &d in shape {
        out.write_all(&(d as u32).to_le_bytes())?;
    }
    for v in data {
        out.write_all(&v.to_le_bytes())?;
    }
    Ok(())
}

fn read_u32(input: &mut impl Read) -> Result<u32> {
    let mut b = [0u8; 4];
    input.read_exact(&mut b)?;
    Ok(u32::from_le_bytes(b))
}

/// Parse a `.tns` tensor into `(shape, data)`.
pub fn read_tensor(input: &mut impl Read) -> Result<(Vec<usize>, Vec<f64>)> {
    let mut magic = [0u8; 4];
    input.read_exact(&mut magic)?;
    if &magic != TENSOR_MAGIC {
        return Err(Error::Corrupt("bad tensor magic".into()));
    }
    let version = read_u32(input)?;
    if version != TENSOR_VERSION {
        return Err(Error::Corrupt(format!("unsupported tensor version {version}")));
    }
    let mut dtype = [0u8; 1];
    input.read_exact(&mut dtype)?;
    if dtype[0] != DTYPE_F64 {
        return Err(Error::Corrupt(format!("unsupported dtype code {}", dtype[0])));
    }
    let rank = read_u32(input)? as usize;
    let shape = (0..rank).map(|_| read_u32(input).map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
    let len: usize = shape.iter().product();
    let mut bytes = vec![0u8; len * 8];
    input.read_exact(&mut bytes)?;
    let data = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect();
    let mut rest = Vec::new();
    input.read_to_end(&mut rest)?;
    if !rest.is_empty() {
        return Err(Error::Corrupt(format!("{} trailing bytes after tensor", rest.len())));
    }
    Ok((shape, data))
}

pub fn save_tensor(path: &Path, shape: &[usize], data: &[f64]) -> Result<()> {
    let mut buf = Vec::new();
    write_tensor(&mut buf, shape, data)?;
    fs::write(path, buf)?;
    Ok(())
}

pub fn load_tensor(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    read_tensor(&mut fs::File::open(path)?)
}

/// Label file of one dataset step.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct StepLabels {
    pub pick: Action,
    pub place: Action,
    #[serde(rename = "N")]
    pub n: usize,
    pub seed: u64,
}

/// Write demos as `episode_XXXXX/obs_k.tns` plus `act_k.json`.
pub fn write_dataset(dir: &Path, demos: &[Demo], dims: [usize; 3]) -> Result<()> {
    fs::create_dir_all(dir)?;
    for (i, demo) in demos.iter().enumerate() {
        let ep = dir.join(format!("episode_{i:05}"));
        fs::create_dir_all(&ep)?;
        for (k, step) in demo.steps.iter().enumerate() {
            save_tensor(&ep.join(format!("obs_{k}.tns")), &dims, &step.obs)?;
            let labels = StepLabels {
                pick: step.pick,
                place: step.place,
                n: demo.n,
                seed: demo.seed,
            };
            fs::write(ep.join(format!("act_{k}.json")), serde_json::to_string_pretty(&labels)? + "\n")?;
        }
    }
    Ok(())
}

fn sorted_entries(dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    let mut out: Vec<PathBuf> = fs::read_dir(dir)?
        .map(|e| e.map(|e| e.path()))
        .collect::<std::io::Result<_>>()?;
    out.retain(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with(prefix)));
    out.sort();
    Ok(out)
}

/// A dataset read back from disk.
#[derive(Clone, Debug)]
pub struct Dataset {
    pub samples: Vec<Sample>,
    pub dims: [usize; 3],
    pub n: usize,
}

/// Read every episode directory under `dir`.
pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let mut samples = Vec::new();
    let mut dims: Option<[usize; 3]> = None;
    let mut n: Option<usize> = None;
    for ep in sorted_entries(dir, "episode_")? {
        let mut k = 0;
        loop {
            let obs_path = ep.join(format!("obs_{k}.tns"));
            if !obs_path.exists() {
                break;
            }
            let (shape, obs) = load_tensor(&obs_path)?;
            let &[c, h, w] = shape.as_slice() else {
                return Err(Error::Corrupt(format!("{} is not rank 3", obs_path.display())));
            };
            if *dims.get_or_insert([c, h, w]) != [c, h, w] {
                return Err(Error::ConfigMismatch(format!("{} has shape {shape:?}", obs_path.display())));
            }
            let labels: StepLabels = serde_json::from_str(&fs::read_to_string(ep.join(format!("act_{k}.json")))?)?;
            if *n.get_or_insert(labels.n) != labels.n {
                return Err(Error::ConfigMismatch(format!("mixed bin counts in {}", ep.display())));
            }
            samples.push(Sample {
                obs,
                pick: labels.pick,
                place: labels.place,
            });
            k += 1;
        }
    }
    let (Some(dims), Some(n)) = (dims, n) else {
        return Err(Error::InvalidArgument(format!("no samples under {}", dir.display())));
    };
    Ok(Dataset { samples, dims, n })
}

/// One steerable convolution in a checkpoint manifest.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ConvDescription {
    pub rep_in: RepSpec,
    pub rep_out: RepSpec,
    pub fields_in: usize,
    pub fields_out: usize,
    pub size: usize,
    pub coefficient_shape: Vec<usize>,
    pub blocks: Vec<BlockBasisInfo>,
}

/// One weight tensor in blob order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub seed: u64,
    pub policy: PolicyConfig,
    pub convolutions: Vec<(String, ConvDescription)>,
    pub tensors: Vec<TensorEntry>,
    /// Free-form training summary.
    #[serde(default)]
    pub notes: serde_json::Value,
}

fn networks(bundle: &PolicyBundle) -> [(&'static str, &Network); 4] {
    [
        ("pick", &bundle.pick_net),
        ("angle", &bundle.angle_net),
        ("scene", &bundle.scene_net),
        ("crop", &bundle.crop_net),
    ]
}

/// Manifest describing a bundle's weights.
pub fn manifest_for(bundle: &PolicyBundle, seed: u64, notes: serde_json::Value) -> Manifest {
    let mut convolutions = Vec::new();
    let mut tensors = Vec::new();
    for (name, net) in networks(bundle) {
        for (i, conv) in net.conv_layers().iter().enumerate() {
            convolutions.push((
                format!("{name}.conv{i}"),
                ConvDescription {
                    rep_in: conv.rep_in,
                    rep_out: conv.rep_out,
                    fields_in: conv.fields_in,
                    fields_out: conv.fields_out,
                    size: conv.size,
                    coefficient_shape: conv.coefficients.shape().to_vec(),
                    blocks: conv.blocks.clone(),
                },
            ));
        }
        for (i, p) in net.parameters().iter().enumerate() {
            tensors.push(TensorEntry {
                name: format!("{name}.p{i}"),
                shape: p.shape().to_vec(),
            });
        }
    }
    Manifest {
        format_version: CHECKPOINT_VERSION,
        seed,
        policy: bundle.config.clone(),
        convolutions,
        tensors,
        notes,
    }
}

pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h = FnvHasher::default();
    h.write(bytes);
    h.finish()
}

/// Little-endian weights followed by their FNV-1a checksum.
pub fn weight_blob(params: &[DiffTensor]) -> Vec<u8> {
    let mut out: Vec<u8> = params.iter().flat_map(|p| p.data()).flat_map(|v| v.to_le_bytes()).collect();
    let sum = fnv1a(&out);
    out.extend(sum.to_le_bytes());
    out
}

/// Split a blob into weights, verifying the checksum.
pub fn parse_weight_blob(blob: &[u8]) -> Result<Vec<f64>> {
    if blob.len() < 8 || (blob.len() - 8) % 8 != 0 {
        return Err(Error::Corrupt(format!("weight blob of {} bytes", blob.len())));
    }
    let (body, tail) = blob.split_at(blob.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().expect("8-byte tail"));
    let computed = fnv1a(body);
    if stored != computed {
        return Err(Error::Checksum { stored, computed });
    }
    Ok(body
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

pub const MANIFEST_FILE: &str = "manifest.json";
pub const WEIGHTS_FILE: &str = "weights.bin";

pub fn save_checkpoint(dir: &Path, bundle: &PolicyBundle, seed: u64, notes: serde_json::Value) -> Result<()> {
    fs::create_dir_all(dir)?;
    let manifest = manifest_for(bundle, seed, notes);
    fs::write(dir.join(MANIFEST_FILE), serde_json::to_string_pretty(&manifest)? + "\n")?;
    fs::write(dir.join(WEIGHTS_FILE), weight_blob(&bundle.parameters()))?;
    Ok(())
}

/// Rebuild a bundle from its manifest and weights. The checksum is checked
/// first, then every tensor shape against the architecture the stored
/// config produces.
pub fn load_checkpoint(dir: &Path) -> Result<(PolicyBundle, Manifest)> {
    let manifest: Manifest = serde_json::from_str(&fs::read_to_string(dir.join(MANIFEST_FILE))?)?;
    if manifest.format_version != CHECKPOINT_VERSION {
        return Err(Error::ConfigMismatch(format!(
            "checkpoint format {} (expected {CHECKPOINT_VERSION})",
            manifest.format_version
        )));
    }
    let values = parse_weight_blob(&fs::read(dir.join(WEIGHTS_FILE))?)?;
    let mut bundle = PolicyBundle::new(manifest.policy.clone(), manifest.seed)?;
    let fresh = manifest_for(&bundle, manifest.seed, serde_json::Value::Null);
    if fresh.tensors != manifest.tensors {
        return Err(Error::ConfigMismatch("manifest tensors differ from the configured architecture".into()));
    }
    let expected: usize = manifest.tensors.iter().map(|t| t.shape.iter().product::<usize>()).sum();
    if expected != values.len() {
        return Err(Error::Corrupt(format!(
            "manifest describes {expected} weights, blob holds {}",
            values.len()
        )));
    }
    let mut offset = 0;
    let mut params = Vec::with_capacity(manifest.tensors.len());
    for t in &manifest.tensors {
        let len: usize = t.shape.iter().product();
        params.push(DiffTensor::parameter(&t.shape, values[offset..offset + len].to_vec())?);
        offset += len;
    }
    bundle.set_parameters(params)?;
    Ok((bundle, manifest))
}
