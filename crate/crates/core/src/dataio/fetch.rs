//! Digest-verified dataset cache: `<cache>/<dataset>/<idx filename>`, with a
//! `manifest.json` alongside recording payload digests and the
//! normalization target.

use std::collections::BTreeMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::idx::{gunzip, is_gzip, load_idx};
use crate::error::{Result, SnnError};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetName {
    Mnist,
    FashionMnist,
}

impl DatasetName {
    pub fn as_str(self) -> &'static str {
        match self {
            DatasetName::Mnist => "mnist",
            DatasetName::FashionMnist => "fashion-mnist",
        }
    }
}

impl std::str::FromStr for DatasetName {
    type Err = SnnError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "mnist" => Ok(DatasetName::Mnist),
            "fashion-mnist" | "fashion" => Ok(DatasetName::FashionMnist),
            other => Err(SnnError::config(
                "dataset",
                format!("unknown dataset `{other}` (expected mnist or fashion-mnist)"),
            )),
        }
    }
}

impl std::fmt::Display for DatasetName {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestFile {
    /// Uncompressed IDX file name; mirrors serve `<filename>.gz`.
    pub filename: String,
    /// SHA-256 of the uncompressed IDX bytes. `None` means the digest is
    /// recorded on first import and enforced afterwards.
    pub sha256: Option<String>,
}

impl ManifestFile {
    fn new(filename: &str, sha256: Option<&str>) -> Self {
        ManifestFile {
            filename: filename.to_string(),
            sha256: sha256.map(str::to_string),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: DatasetName,
    /// Base URLs, tried in order.
    pub mirrors: Vec<String>,
    pub train_images: ManifestFile,
    pub train_labels: ManifestFile,
    pub test_images: ManifestFile,
    pub test_labels: ManifestFile,
    pub train_size: usize,
    pub test_size: usize,
}

impl DatasetManifest {
    pub fn builtin(name: DatasetName) -> Self {
        match name {
            DatasetName::Mnist => DatasetManifest {
                name,
                mirrors: vec![
                    "https://ossci-datasets.s3.amazonaws.com/mnist/".into(),
                    "https://storage.googleapis.com/cvdf-datasets/mnist/".into(),
                    "http://yann.lecun.com/exdb/mnist/".into(),
                ],
                train_images: ManifestFile::new(
                    "train-images-idx3-ubyte",
                    Some("ba891046e6505d7aadcbbe25680a0738ad16aec93bde7f9b65e87a2fc25776db"),
                ),
                train_labels: ManifestFile::new(
                    "train-labels-idx1-ubyte",
                    Some("65a50cbbf4e906d70832878ad85ccda5333a97f0f4c3dd2ef09a8a9eef7101c5"),
                ),
                test_images: ManifestFile::new(
                    "t10k-images-idx3-ubyte",
                    Some("0fa7898d509279e482958e8ce81c8e77db3f2f8254e26661ceb7762c4d494ce7"),
                ),
                test_labels: ManifestFile::new(
                    "t10k-labels-idx1-ubyte",
                    Some("ff7bcfd416de33731a308c3f266cc351222c34898ecbeaf847f06e48f7ec33f2"),
                ),
                train_size: 60_000,
                test_size: 10_000,
            },
            DatasetName::FashionMnist => DatasetManifest {
                name,
                mirrors: vec![
                    "http://fashion-mnist.s3-website.eu-central-1.amazonaws.com/".into(),
                    "https://github.com/zalandoresearch/fashion-mnist/raw/master/data/fashion/"
                        .into(),
                ],
                train_images: ManifestFile::new("train-images-idx3-ubyte", None),
                train_labels: ManifestFile::new("train-labels-idx1-ubyte", None),
                test_images: ManifestFile::new("t10k-images-idx3-ubyte", None),
                test_labels: ManifestFile::new("t10k-labels-idx1-ubyte", None),
                train_size: 60_000,
                test_size: 10_000,
            },
        }
    }

    pub fn files(&self) -> [&ManifestFile; 4] {
        [
            &self.train_images,
            &self.train_labels,
            &self.test_images,
            &self.test_labels,
        ]
    }
}

/// Contents of `<cache>/<dataset>/manifest.json`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CacheRecord {
    pub dataset: Option<DatasetName>,
    pub sha256: BTreeMap<String, String>,
    /// Mean pixel sum of the training split, once computed.
    pub target_sum: Option<f64>,
}

impl CacheRecord {
    pub fn path(dir: &Path) -> PathBuf {
        dir.join("manifest.json")
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = Self::path(dir);
        match fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| SnnError::Data(format!("{}: {e}", path.display()))),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Ok(CacheRecord::default()),
            Err(e) => Err(SnnError::io(path, e)),
        }
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        let path = Self::path(dir);
        let json = serde_json::to_vec_pretty(self).expect("cache record serializes");
        write_atomic(&path, &json)
    }
}

/// Where missing files come from.
#[derive(Clone, Copy, Debug)]
pub enum Source<'a> {
    Mirrors,
    /// A directory holding the IDX files, raw or as `<filename>.gz`.
    LocalDir(&'a Path),
    /// Only the cache; anything missing is an error.
    CacheOnly,
}

#[derive(Clone, Debug)]
pub struct DatasetHandle {
    pub dir: PathBuf,
    pub manifest: DatasetManifest,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let digest = Sha256::digest(bytes);
    digest.iter().map(|b| format!("{b:02x}")).collect()
}

fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("partial");
    fs::write(&tmp, bytes).map_err(|e| SnnError::io(&tmp, e))?;
    fs::rename(&tmp, path).map_err(|e| SnnError::io(path, e))
}

fn download(url: &str) -> std::result::Result<Vec<u8>, String> {
    let mut resp = ureq::get(url).call().map_err(|e| e.to_string())?;
    let mut out = Vec::new();
    resp.body_mut()
        .as_reader()
        .read_to_end(&mut out)
        .map_err(|e| e.to_string())?;
    Ok(out)
}

fn obtain(manifest: &DatasetManifest, file: &ManifestFile, source: Source<'_>) -> Result<Vec<u8>> {
    let bytes = match source {
        Source::CacheOnly => {
            return Err(SnnError::Data(format!(
                "{} is not cached for {}; run `symstdp fetch --dataset {}` first",
                file.filename, manifest.name, manifest.name
            )))
        }
        Source::LocalDir(dir) => {
            let raw = dir.join(&file.filename);
            let gz = dir.join(format!("{}.gz", file.filename));
            let path = if raw.exists() { raw } else { gz };
            fs::read(&path).map_err(|e| SnnError::io(path, e))?
        }
        Source::Mirrors => {
            let mut tried = Vec::new();
            let mut found = None;
            for mirror in &manifest.mirrors {
                let url = format!("{mirror}{}.gz", file.filename);
                log::info!("downloading {url}");
                match download(&url) {
                    Ok(b) => {
                        found = Some(b);
                        break;
                    }
                    Err(e) => tried.push(format!("{url} ({e})")),
                }
            }
            found.ok_or_else(|| {
                SnnError::Data(format!(
                    "could not download {}; mirrors tried: {}",
                    file.filename,
                    tried.join(", ")
                ))
            })?
        }
    };
    if is_gzip(&bytes) {
        gunzip(&bytes)
    } else {
        Ok(bytes)
    }
}

/// Makes sure every file of `manifest` is present under
/// `<cache_dir>/<dataset>/` with a verified digest.
pub fn fetch_dataset(
    manifest: &DatasetManifest,
    cache_dir: &Path,
    source: Source<'_>,
) -> Result<DatasetHandle> {
    let dir = cache_dir.join(manifest.name.as_str());
    fs::create_dir_all(&dir).map_err(|e| SnnError::io(&dir, e))?;
    let mut record = CacheRecord::load(&dir)?;
    record.dataset = Some(manifest.name);

    for file in manifest.files() {
        let path = dir.join(&file.filename);
        let expected = file
            .sha256
            .clone()
            .or_else(|| record.sha256.get(&file.filename).cloned());
        let (bytes, fresh) = match fs::read(&path) {
            Ok(b) => (b, false),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                (obtain(manifest, file, source)?, true)
            }
            Err(e) => return Err(SnnError::io(path, e)),
        };
        let actual = sha256_hex(&bytes);
        if let Some(expected) = expected {
            if actual != expected {
                return Err(SnnError::Digest {
                    path,
                    expected,
                    actual,
                });
            }
        }
        if fresh {
            load_idx(&bytes)?;
            write_atomic(&path, &bytes)?;
        }
        record.sha256.insert(file.filename.clone(), actual);
    }
    record.save(&dir)?;
    Ok(DatasetHandle {
        dir,
        manifest: manifest.clone(),
    })
}
