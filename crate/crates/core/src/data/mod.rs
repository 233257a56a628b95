//! Datasets: the synthetic shapes-on-clutter benchmark with exact saliency
//! ground truth, and manifest-based loading of user-supplied image folders.

mod raster;
mod shapes;

pub use raster::{rasterize, Shape, ShapeRaster, ALL_SHAPES};
pub use shapes::{generate_shapes_dataset, ShapesSpec, Texture, ALL_TEXTURES};

use std::collections::HashSet;
use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array3;

use crate::error::{Error, Result};
use crate::maps::BinaryMap;

pub const MANIFEST_HEADER: &str = "path,label,split";

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Test => "test",
        }
    }
}

/// Sidecar metadata written next to every manifest.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct DatasetMeta {
    pub image_size: usize,
    pub class_names: Vec<String>,
    pub seed: u64,
    pub generator_version: u32,
    pub has_masks: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ManifestEntry {
    /// Path relative to the dataset root.
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

/// A parsed dataset directory: entries in file order plus metadata.
#[derive(Debug, Clone)]
pub struct DatasetManifest {
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
    pub meta: DatasetMeta,
}

/// One fully loaded sample.
#[derive(Debug, Clone)]
pub struct SampleRecord {
    pub index: usize,
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
    /// Channel-first RGB in [0, 1].
    pub image: Array3<f64>,
    pub mask: Option<BinaryMap>,
}

/// Parse a dataset directory (or a manifest.csv path directly). Validates
/// the header, uniqueness of paths, on-disk existence, declared image size,
/// and that every class has at least one train and one test record.
pub fn load_manifest(path: impl AsRef<Path>) -> Result<DatasetManifest> {
    let path = path.as_ref();
    let (root, manifest_path) = if path.is_dir() {
        (path.to_path_buf(), path.join("manifest.csv"))
    } else {
        (path.parent().unwrap_or_else(|| Path::new(".")).to_path_buf(), path.to_path_buf())
    };
    if !manifest_path.exists() {
        return Err(Error::NotFound(manifest_path));
    }
    let meta_path = root.join("meta.json");
    if !meta_path.exists() {
        return Err(Error::NotFound(meta_path));
    }
    let meta: DatasetMeta = serde_json::from_str(&fs::read_to_string(&meta_path)?)?;

    let text = fs::read_to_string(&manifest_path)?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, header)) if header.trim() == MANIFEST_HEADER => {}
        Some((_, header)) => {
            return Err(Error::Parse {
                line: 1,
                message: format!("expected header '{MANIFEST_HEADER}', got '{header}'"),
            })
        }
        None => {
            return Err(Error::Parse { line: 1, message: "empty manifest: header required".into() })
        }
    }

    let mut entries = Vec::new();
    let mut seen = HashSet::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 3 {
            return Err(Error::Parse {
                line: line_no,
                message: format!("expected 3 comma-separated fields, got {}", fields.len()),
            });
        }
        let rel = PathBuf::from(fields[0]);
        if !seen.insert(rel.clone()) {
            return Err(Error::Parse {
                line: line_no,
                message: format!("duplicate path '{}'", rel.display()),
            });
        }
        let label: usize = fields[1].parse().map_err(|_| Error::Parse {
            line: line_no,
            message: format!("invalid label '{}'", fields[1]),
        })?;
        let split = match fields[2] {
            "train" => Split::Train,
            "test" => Split::Test,
            other => {
                return Err(Error::Parse {
                    line: line_no,
                    message: format!("invalid split '{other}' (expected train|test)"),
                })
            }
        };
        let full = root.join(&rel);
        if !full.exists() {
            return Err(Error::NotFound(full));
        }
        let (w, h) = image::image_dimensions(&full)?;
        if w as usize != meta.image_size || h as usize != meta.image_size {
            return Err(Error::invalid(format!(
                "{}: image is {w}x{h}, manifest declares {s}x{s}",
                rel.display(),
                s = meta.image_size,
            )));
        }
        entries.push(ManifestEntry { path: rel, label, split });
    }

    // every class must have both splits populated
    let labels: HashSet<usize> = entries.iter().map(|e| e.label).collect();
    for &label in &labels {
        for split in [Split::Train, Split::Test] {
            if !entries.iter().any(|e| e.label == label && e.split == split) {
                return Err(Error::invalid(format!(
                    "class {label} has no {} records",
                    split.as_str()
                )));
            }
        }
    }

    Ok(DatasetManifest { root, entries, meta })
}

impl DatasetManifest {
    pub fn class_count(&self) -> usize {
        self.entries.iter().map(|e| e.label + 1).max().unwrap_or(0)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    /// Decode one record into memory.
    pub fn load_sample(&self, index: usize) -> Result<SampleRecord> {
        let entry = self
            .entries
            .get(index)
            .ok_or_else(|| Error::invalid(format!("sample index {index} out of range")))?;
        let full = self.root.join(&entry.path);
        let img = image::open(&full)?.to_rgb8();
        let (w, h) = img.dimensions();
        let mut image = Array3::<f64>::zeros((3, h as usize, w as usize));
        for (x, y, p) in img.enumerate_pixels() {
            for ch in 0..3 {
                image[[ch, y as usize, x as usize]] = p.0[ch] as f64 / 255.0;
            }
        }
        let mask = if self.meta.has_masks {
            let mask_path = self.mask_path(entry);
            if mask_path.exists() {
                let m = crate::maps::SaliencyMap::read_png(&mask_path)?;
                Some(BinaryMap::from_fn(m.height(), m.width(), |r, c| m.get(r, c) >= 0.5))
            } else {
                None
            }
        } else {
            None
        };
        Ok(SampleRecord { index, path: full, label: entry.label, split: entry.split, image, mask })
    }

    pub fn mask_path(&self, entry: &ManifestEntry) -> PathBuf {
        let file = entry.path.file_name().map(PathBuf::from).unwrap_or_default();
        self.root.join("masks").join(file)
    }

    /// Indices of records with the given split and label set.
    pub fn indices_for(&self, split: Split, labels: &[usize]) -> Vec<usize> {
        self.entries
            .iter()
            .enumerate()
            .filter(|(_, e)| e.split == split && labels.contains(&e.label))
            .map(|(i, _)| i)
            .collect()
    }

    /// Iterate entries in file order.
    pub fn iter(&self) -> impl Iterator<Item = &ManifestEntry> {
        self.entries.iter()
    }
}
