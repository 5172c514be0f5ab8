//! Directory container: `manifest.json` plus one raw little-endian file per
//! array. Real arrays are `f64`, complex arrays interleaved `(re, im)` `f64`
//! pairs, both row-major. Every array carries its SHA-256.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::field::{ComplexField, Grid, RealField, ScanGeometry};
use crate::forward::Dataset;

pub const FORMAT_VERSION: u32 = 1;
pub const MANIFEST_FILE: &str = "manifest.json";

pub type Metadata = BTreeMap<String, Value>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dtype {
    #[serde(rename = "f64")]
    F64,
    #[serde(rename = "c128")]
    C128,
}

impl Dtype {
    fn item_bytes(self) -> usize {
        match self {
            Dtype::F64 => 8,
            Dtype::C128 => 16,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArrayEntry {
    pub dtype: Dtype,
    pub shape: Vec<usize>,
    pub file: String,
    pub sha256: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub format_version: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub geometry: Option<ScanGeometry>,
    pub arrays: BTreeMap<String, ArrayEntry>,
    #[serde(default)]
    pub metadata: Metadata,
}

impl Manifest {
    pub fn new(kind: &str) -> Self {
        Self {
            format_version: FORMAT_VERSION,
            kind: kind.to_string(),
            geometry: None,
            arrays: BTreeMap::new(),
            metadata: Metadata::new(),
        }
    }
}

/// Writes arrays as they are added; the manifest goes last.
pub struct ContainerWriter {
    dir: PathBuf,
    manifest: Manifest,
}

impl ContainerWriter {
    pub fn create(dir: &Path, kind: &str) -> Result<Self> {
        fs::create_dir_all(dir)?;
        Ok(Self { dir: dir.to_path_buf(), manifest: Manifest::new(kind) })
    }

    pub fn manifest_mut(&mut self) -> &mut Manifest {
        &mut self.manifest
    }

    fn put_bytes(&mut self, name: &str, dtype: Dtype, shape: Vec<usize>, bytes: Vec<u8>) -> Result<()> {
        let file = format!("{name}.{}", if dtype == Dtype::F64 { "f64" } else { "c128" });
        fs::write(self.dir.join(&file), &bytes)?;
        let sha256 = hex::encode(Sha256::digest(&bytes));
        self.manifest.arrays.insert(name.to_string(), ArrayEntry { dtype, shape, file, sha256 });
        Ok(())
    }

    pub fn put_real(&mut self, name: &str, shape: Vec<usize>, data: impl IntoIterator<Item = f64>) -> Result<()> {
        let bytes: Vec<u8> = data.into_iter().flat_map(f64::to_le_bytes).collect();
        check_len(name, &shape, Dtype::F64, bytes.len())?;
        self.put_bytes(name, Dtype::F64, shape, bytes)
    }

    pub fn put_complex(
        &mut self,
        name: &str,
        shape: Vec<usize>,
        data: impl IntoIterator<Item = Complex64>,
    ) -> Result<()> {
        let bytes: Vec<u8> =
            data.into_iter().flat_map(|v| v.re.to_le_bytes().into_iter().chain(v.im.to_le_bytes())).collect();
        check_len(name, &shape, Dtype::C128, bytes.len())?;
        self.put_bytes(name, Dtype::C128, shape, bytes)
    }

    pub fn put_real_field(&mut self, name: &str, f: &RealField) -> Result<()> {
        self.put_real(name, vec![f.rows(), f.cols()], f.iter().copied())
    }

    pub fn put_complex_field(&mut self, name: &str, f: &ComplexField) -> Result<()> {
        self.put_complex(name, vec![f.rows(), f.cols()], f.iter().copied())
    }

    pub fn put_real_stack(&mut self, name: &str, frames: &[RealField]) -> Result<()> {
        let (rows, cols) = frames.first().map_or((0, 0), RealField::shape);
        if frames.iter().any(|f| f.shape() != (rows, cols)) {
            return Err(Error::shape(format!("frames of '{name}' differ in shape")));
        }
        self.put_real(name, vec![frames.len(), rows, cols], frames.iter().flat_map(|f| f.iter().copied()))
    }

    pub fn finish(self) -> Result<PathBuf> {
        let text = serde_json::to_string_pretty(&self.manifest)?;
        let path = self.dir.join(MANIFEST_FILE);
        fs::write(&path, text + "\n")?;
        Ok(self.dir)
    }
}

fn check_len(name: &str, shape: &[usize], dtype: Dtype, bytes: usize) -> Result<()> {
    let expected = shape.iter().product::<usize>() * dtype.item_bytes();
    if expected != bytes {
        return Err(Error::shape(format!("array '{name}' has {bytes} bytes, shape {shape:?} needs {expected}")));
    }
    Ok(())
}

/// Read side of the container; every array is verified on access.
pub struct ContainerReader {
    dir: PathBuf,
    manifest: Manifest,
}

impl ContainerReader {
    pub fn open(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = fs::read_to_string(&path)?;
        let corrupt = |reason: String| Error::Corrupt { path: path.clone(), reason };
        let value: Value = serde_json::from_str(&text).map_err(|e| corrupt(format!("manifest is not JSON: {e}")))?;
        let version = value
            .get("format_version")
            .and_then(Value::as_u64)
            .ok_or_else(|| corrupt("manifest has no format_version".into()))?;
        if version != u64::from(FORMAT_VERSION) {
            return Err(Error::UnsupportedVersion {
                found: u32::try_from(version).unwrap_or(u32::MAX),
                expected: FORMAT_VERSION,
            });
        }
        let manifest: Manifest = serde_json::from_value(value).map_err(|e| corrupt(format!("bad manifest: {e}")))?;
        Ok(Self { dir: dir.to_path_buf(), manifest })
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn has(&self, name: &str) -> bool {
        self.manifest.arrays.contains_key(name)
    }

    fn bytes(&self, name: &str, dtype: Dtype) -> Result<(Vec<usize>, Vec<u8>)> {
        let entry = self
            .manifest
            .arrays
            .get(name)
            .ok_or_else(|| Error::Missing(format!("array '{name}' not in {}", self.dir.display())))?;
        let path = self.dir.join(&entry.file);
        let corrupt = |reason: String| Error::Corrupt { path: path.clone(), reason };
        if entry.dtype != dtype {
            return Err(corrupt(format!("array '{name}' has dtype {:?}, expected {dtype:?}", entry.dtype)));
        }
        let bytes = fs::read(&path).map_err(|e| corrupt(format!("cannot read: {e}")))?;
        let expected = entry.shape.iter().product::<usize>() * dtype.item_bytes();
        if bytes.len() != expected {
            return Err(corrupt(format!("{} bytes, shape {:?} needs {expected}", bytes.len(), entry.shape)));
        }
        if hex::encode(Sha256::digest(&bytes)) != entry.sha256 {
            return Err(corrupt("checksum mismatch".into()));
        }
        Ok((entry.shape.clone(), bytes))
    }

    pub fn real(&self, name: &str) -> Result<(Vec<usize>, Vec<f64>)> {
        let (shape, bytes) = self.bytes(name, Dtype::F64)?;
        let data = bytes.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        Ok((shape, data))
    }

    pub fn complex(&self, name: &str) -> Result<(Vec<usize>, Vec<Complex64>)> {
        let (shape, bytes) = self.bytes(name, Dtype::C128)?;
        let data = bytes
            .chunks_exact(16)
            .map(|b| {
                let re = f64::from_le_bytes(b[..8].try_into().expect("8 bytes"));
                let im = f64::from_le_bytes(b[8..].try_into().expect("8 bytes"));
                Complex64::new(re, im)
            })
            .collect();
        Ok((shape, data))
    }

    fn expect_2d(&self, name: &str, shape: &[usize]) -> Result<(usize, usize)> {
        match *shape {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Corrupt {
                path: self.dir.join(MANIFEST_FILE),
                reason: format!("array '{name}' should be 2-D, has shape {shape:?}"),
            }),
        }
    }

    pub fn real_field(&self, name: &str) -> Result<RealField> {
        let (shape, data) = self.real(name)?;
        let (r, c) = self.expect_2d(name, &shape)?;
        Grid::from_vec(r, c, data)
    }

    pub fn complex_field(&self, name: &str) -> Result<ComplexField> {
        let (shape, data) = self.complex(name)?;
        let (r, c) = self.expect_2d(name, &shape)?;
        Grid::from_vec(r, c, data)
    }

    pub fn real_stack(&self, name: &str) -> Result<Vec<RealField>> {
        let (shape, data) = self.real(name)?;
        let [_, r, c] = shape[..] else {
            return Err(Error::Corrupt {
                path: self.dir.join(MANIFEST_FILE),
                reason: format!("array '{name}' should be 3-D, has shape {shape:?}"),
            });
        };
        if r * c == 0 {
            return Ok(Vec::new());
        }
        data.chunks_exact(r * c).map(|f| Grid::from_vec(r, c, f.to_vec())).collect()
    }
}

pub const DATASET_KIND: &str = "dataset";
pub const RECONSTRUCTION_KIND: &str = "reconstruction";

/// [`save_dataset_with`] without extra metadata.
pub fn save_dataset(dir: &Path, dataset: &Dataset) -> Result<()> {
    save_dataset_with(dir, dataset, &Metadata::new())
}

/// Writes a dataset; `metadata` is stored verbatim (provenance, seeds).
pub fn save_dataset_with(dir: &Path, dataset: &Dataset, metadata: &Metadata) -> Result<()> {
    dataset.validate()?;
    let mut w = ContainerWriter::create(dir, DATASET_KIND)?;
    w.put_real_stack("intensities", &dataset.intensities)?;
    if let Some(clean) = &dataset.clean_intensities {
        w.put_real_stack("clean_intensities", clean)?;
    }
    if let Some(z) = &dataset.truth_object {
        w.put_complex_field("truth_object", z)?;
    }
    if let Some(q) = &dataset.truth_probe {
        w.put_complex_field("truth_probe", q)?;
    }
    let m = w.manifest_mut();
    m.geometry = Some(dataset.geometry.clone());
    m.metadata = metadata.clone();
    if let Some(p) = dataset.noise_percent {
        m.metadata.insert("noise_percent".into(), Value::from(p));
    }
    w.finish()?;
    Ok(())
}

/// Reads and verifies a dataset. Nothing is returned unless every array checks out.
pub fn load_dataset(dir: &Path) -> Result<Dataset> {
    let r = ContainerReader::open(dir)?;
    let m = r.manifest();
    if m.kind != DATASET_KIND {
        return Err(Error::Corrupt {
            path: dir.join(MANIFEST_FILE),
            reason: format!("kind is '{}', not a dataset", m.kind),
        });
    }
    let geometry = m
        .geometry
        .clone()
        .ok_or_else(|| Error::Corrupt { path: dir.join(MANIFEST_FILE), reason: "dataset has no geometry".into() })?;
    let mut ds = Dataset::new(geometry, r.real_stack("intensities")?)
        .map_err(|e| Error::Corrupt { path: dir.to_path_buf(), reason: e.to_string() })?;
    if r.has("clean_intensities") {
        ds.clean_intensities = Some(r.real_stack("clean_intensities")?);
    }
    if r.has("truth_object") {
        ds.truth_object = Some(r.complex_field("truth_object")?);
    }
    if r.has("truth_probe") {
        ds.truth_probe = Some(r.complex_field("truth_probe")?);
    }
    ds.noise_percent = m.metadata.get("noise_percent").and_then(Value::as_f64);
    ds.validate().map_err(|e| Error::Corrupt { path: dir.to_path_buf(), reason: e.to_string() })?;
    Ok(ds)
}

/// Final probe and object of a run.
#[derive(Debug, Clone, PartialEq)]
pub struct Reconstruction {
    pub probe: ComplexField,
    pub object: ComplexField,
    pub metadata: Metadata,
}

pub fn save_reconstruction(dir: &Path, rec: &Reconstruction) -> Result<()> {
    let mut w = ContainerWriter::create(dir, RECONSTRUCTION_KIND)?;
    w.put_complex_field("probe", &rec.probe)?;
    w.put_complex_field("object", &rec.object)?;
    w.manifest_mut().metadata = rec.metadata.clone();
    w.finish()?;
    Ok(())
}

pub fn load_reconstruction(dir: &Path) -> Result<Reconstruction> {
    let r = ContainerReader::open(dir)?;
    if r.manifest().kind != RECONSTRUCTION_KIND {
        return Err(Error::Corrupt {
            path: dir.join(MANIFEST_FILE),
            reason: format!("kind is '{}', not a reconstruction", r.manifest().kind),
        });
    }
    Ok(Reconstruction {
        probe: r.complex_field("probe")?,
        object: r.complex_field("object")?,
        metadata: r.manifest().metadata.clone(),
    })
}

/// SHA-256 over the manifest bytes; identifies a dataset for log comparison.
pub fn dataset_fingerprint(dir: &Path) -> Result<String> {
    let bytes = fs::read(dir.join(MANIFEST_FILE))?;
    Ok(hex::encode(Sha256::digest(&bytes)))
}
