//! Teacher maps A(x) = (saliency, boundary) for low-level supervision.
//!
//! Two sources: a synthetic teacher that derives exact maps from a
//! generated sample's ground-truth object mask, and a file-based loader for
//! maps precomputed offline and stored as PNG sidecars next to each image.

use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use crate::error::{Error, Result};
use crate::maps::{laplacian_boundary, BinaryMap, SaliencyMap};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TeacherSource {
    Synthetic,
    Precomputed,
}

/// Paired saliency and (pre-binarization) boundary planes for one image.
#[derive(Debug, Clone, PartialEq)]
pub struct TeacherMaps {
    pub saliency: SaliencyMap,
    pub boundary: SaliencyMap,
    pub source: TeacherSource,
}

impl TeacherMaps {
    pub fn planes(&self) -> (&SaliencyMap, &SaliencyMap) {
        (&self.saliency, &self.boundary)
    }
}

/// Build teacher maps from a generated sample's exact object mask: the mask
/// itself is the saliency plane, its Laplacian response the boundary plane.
pub fn synthetic_teacher(mask: &BinaryMap, image_h: usize, image_w: usize) -> Result<TeacherMaps> {
    if mask.height() != image_h || mask.width() != image_w {
        return Err(Error::invalid(format!(
            "mask dims {}x{} do not match image dims {image_h}x{image_w}",
            mask.height(),
            mask.width()
        )));
    }
    let saliency = mask.to_saliency();
    let boundary = laplacian_boundary(&saliency);
    Ok(TeacherMaps { saliency, boundary, source: TeacherSource::Synthetic })
}

/// Sidecar paths for an image: `<stem>.sal.png` and `<stem>.bnd.png`.
pub fn sidecar_paths(image_path: &Path) -> (PathBuf, PathBuf) {
    let stem = image_path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
    let dir = image_path.parent().unwrap_or_else(|| Path::new(""));
    (dir.join(format!("{stem}.sal.png")), dir.join(format!("{stem}.bnd.png")))
}

/// Load precomputed teacher maps from the image's sidecars. A missing
/// boundary sidecar is tolerated: the boundary is synthesized from the
/// saliency plane with a logged notice. Dimension mismatches are errors.
pub fn load_precomputed(image_path: &Path, image_h: usize, image_w: usize) -> Result<TeacherMaps> {
    let (sal_path, bnd_path) = sidecar_paths(image_path);
    if !sal_path.exists() {
        return Err(Error::NotFound(sal_path));
    }
    let saliency = SaliencyMap::read_png(&sal_path)?;
    if saliency.height() != image_h || saliency.width() != image_w {
        return Err(Error::invalid(format!(
            "{}: saliency sidecar is {}x{} but the image is {image_h}x{image_w}",
            sal_path.display(),
            saliency.height(),
            saliency.width()
        )));
    }
    let boundary = if bnd_path.exists() {
        let b = SaliencyMap::read_png(&bnd_path)?;
        if b.height() != image_h || b.width() != image_w {
            return Err(Error::invalid(format!(
                "{}: boundary sidecar is {}x{} but the image is {image_h}x{image_w}",
                bnd_path.display(),
                b.height(),
                b.width()
            )));
        }
        b
    } else {
        log::warn!(
            "{}: no boundary sidecar; deriving it from the saliency plane",
            image_path.display()
        );
        laplacian_boundary(&saliency)
    };
    Ok(TeacherMaps { saliency, boundary, source: TeacherSource::Precomputed })
}

/// Teacher abstraction used by the training engine. Maps for a given sample
/// must be identical every time they are requested — the supervision signal
/// is stationary across tasks and epochs.
pub trait Teacher: Send + Sync {
    fn maps_for(&self, key: &TeacherKey<'_>) -> Result<TeacherMaps>;
}

/// What a teacher needs to identify a sample.
pub struct TeacherKey<'a> {
    pub image_path: &'a Path,
    pub mask: Option<&'a BinaryMap>,
    pub image_h: usize,
    pub image_w: usize,
}

/// Teacher backed by ground-truth masks of the synthetic dataset.
pub struct SyntheticTeacher;

impl Teacher for SyntheticTeacher {
    fn maps_for(&self, key: &TeacherKey<'_>) -> Result<TeacherMaps> {
        let mask = key.mask.ok_or_else(|| {
            Error::invalid(format!("{}: sample has no ground-truth mask", key.image_path.display()))
        })?;
        synthetic_teacher(mask, key.image_h, key.image_w)
    }
}

/// Teacher backed by precomputed sidecar files, cached per path. The cache
/// takes a write lock only on first load of each key.
pub struct PrecomputedTeacher {
    cache: RwLock<HashMap<PathBuf, TeacherMaps>>,
}

impl PrecomputedTeacher {
    pub fn new() -> Self {
        Self { cache: RwLock::new(HashMap::new()) }
    }
}

impl Default for PrecomputedTeacher {
    fn default() -> Self {
        Self::new()
    }
}

impl Teacher for PrecomputedTeacher {
    fn maps_for(&self, key: &TeacherKey<'_>) -> Result<TeacherMaps> {
        if let Some(hit) = self.cache.read().expect("cache lock").get(key.image_path) {
            return Ok(hit.clone());
        }
        let maps = load_precomputed(key.image_path, key.image_h, key.image_w)?;
        self.cache
            .write()
            .expect("cache lock")
            .insert(key.image_path.to_path_buf(), maps.clone());
        Ok(maps)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::maps::binarize;

    fn disk_mask(h: usize, w: usize, r: f64) -> BinaryMap {
        let (cy, cx) = ((h / 2) as f64, (w / 2) as f64);
        BinaryMap::from_fn(h, w, |row, col| {
            (row as f64 - cy).powi(2) + (col as f64 - cx).powi(2) <= r * r
        })
    }

    #[test]
    fn blank_mask_gives_zero_planes() {
        let t = synthetic_teacher(&BinaryMap::zeros(16, 16), 16, 16).unwrap();
        assert!(t.saliency.values().iter().all(|&v| v == 0.0));
        assert!(t.boundary.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn full_frame_mask_has_zero_boundary() {
        // Replicate padding makes the Laplacian of a constant plane vanish
        // everywhere, including the frame edge.
        let full = BinaryMap::from_fn(12, 12, |_, _| true);
        let t = synthetic_teacher(&full, 12, 12).unwrap();
        assert!(t.boundary.values().iter().all(|&v| v == 0.0));
    }

    /// 8-connected component size starting from the first set pixel.
    fn component_size(map: &BinaryMap) -> usize {
        let (h, w) = (map.height(), map.width());
        let mut seen = vec![false; h * w];
        let start = match (0..h * w).find(|&i| map.values()[i] == 1) {
            Some(i) => i,
            None => return 0,
        };
        let mut stack = vec![start];
        seen[start] = true;
        let mut count = 0;
        while let Some(i) = stack.pop() {
            count += 1;
            let (r, c) = (i / w, i % w);
            for dr in -1i64..=1 {
                for dc in -1i64..=1 {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    if (0..h as i64).contains(&nr) && (0..w as i64).contains(&nc) {
                        let j = (nr * w as i64 + nc) as usize;
                        if map.values()[j] == 1 && !seen[j] {
                            seen[j] = true;
                            stack.push(j);
                        }
                    }
                }
            }
        }
        count
    }

    #[test]
    fn disk_mask_boundary_forms_a_ring() {
        // The max-rescaled Laplacian response of a hard binary disk peaks at
        // the one-pixel poles, so thresholding at 0.5 keeps only the
        // strongest rim pixels; the supervision pipeline always dilates by
        // at least one pixel before use, which closes the band into a ring.
        for radius in [4.0, 6.0, 8.0, 11.0] {
            let mask = disk_mask(32, 32, radius);
            let t = synthetic_teacher(&mask, 32, 32).unwrap();
            let band = binarize(&t.boundary, 0.5).unwrap();
            assert!(band.count_ones() > 0, "radius {radius}: empty band");

            // every band pixel sits on the mask rim
            for r in 0..32usize {
                for c in 0..32usize {
                    if band.get(r, c) == 1 {
                        let on_rim = (r.saturating_sub(1)..=(r + 1).min(31)).any(|rr| {
                            (c.saturating_sub(1)..=(c + 1).min(31))
                                .any(|cc| mask.get(rr, cc) != mask.get(r, c))
                        });
                        assert!(on_rim, "band pixel ({r},{c}) away from the rim");
                    }
                }
            }

            let ring = crate::maps::dilate(&band, 1).unwrap();
            assert_eq!(
                component_size(&ring),
                ring.count_ones(),
                "radius {radius}: ring is disconnected"
            );

            // the ring separates the disk center from the image border:
            // flood fill over non-ring pixels from the center never escapes
            let complement = BinaryMap::from_fn(32, 32, |r, c| ring.get(r, c) == 0);
            assert_eq!(complement.get(16, 16), 1, "center swallowed by the ring");
            let mut seen = vec![false; 32 * 32];
            let mut stack = vec![16 * 32 + 16];
            seen[16 * 32 + 16] = true;
            let mut escaped = false;
            while let Some(i) = stack.pop() {
                let (r, c) = (i / 32, i % 32);
                if r == 0 || r == 31 || c == 0 || c == 31 {
                    escaped = true;
                    break;
                }
                for (dr, dc) in [(-1i64, 0i64), (1, 0), (0, -1), (0, 1)] {
                    let (nr, nc) = (r as i64 + dr, c as i64 + dc);
                    let j = (nr * 32 + nc) as usize;
                    if (0..32).contains(&nr)
                        && (0..32).contains(&nc)
                        && complement.values()[j] == 1
                        && !seen[j]
                    {
                        seen[j] = true;
                        stack.push(j);
                    }
                }
            }
            assert!(!escaped, "radius {radius}: ring does not enclose the disk");
        }
    }

    #[test]
    fn mask_dims_must_match_image() {
        assert!(synthetic_teacher(&BinaryMap::zeros(8, 8), 16, 16).is_err());
    }

    #[test]
    fn precomputed_round_trip_and_fallback() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("sample.png");
        image::RgbImage::new(8, 8).save(&img_path).unwrap();

        let sal = SaliencyMap::from_fn(8, 8, |r, c| ((r + c) % 5) as f64 / 8.0);
        let bnd = SaliencyMap::from_fn(8, 8, |r, c| ((r * c) % 3) as f64 / 4.0);
        let (sal_path, bnd_path) = sidecar_paths(&img_path);

        // missing saliency sidecar
        assert!(matches!(load_precomputed(&img_path, 8, 8), Err(Error::NotFound(_))));

        sal.write_png(&sal_path).unwrap();
        bnd.write_png(&bnd_path).unwrap();
        let t = load_precomputed(&img_path, 8, 8).unwrap();
        assert_eq!(t.saliency, SaliencyMap::read_png(&sal_path).unwrap());
        assert_eq!(t.boundary, SaliencyMap::read_png(&bnd_path).unwrap());
        assert_eq!(t.source, TeacherSource::Precomputed);

        // wrong-size sidecar
        assert!(load_precomputed(&img_path, 16, 16).is_err());

        // absent boundary sidecar falls back to the Laplacian
        std::fs::remove_file(&bnd_path).unwrap();
        let t = load_precomputed(&img_path, 8, 8).unwrap();
        assert_eq!(t.boundary, laplacian_boundary(&t.saliency));
    }

    #[test]
    fn teacher_maps_are_stationary() {
        let mask = disk_mask(24, 24, 6.0);
        let teacher = SyntheticTeacher;
        let key = TeacherKey {
            image_path: Path::new("probe.png"),
            mask: Some(&mask),
            image_h: 24,
            image_w: 24,
        };
        let first = teacher.maps_for(&key).unwrap();
        for _ in 0..5 {
            assert_eq!(teacher.maps_for(&key).unwrap(), first);
        }
    }

    #[test]
    fn precomputed_cache_serves_identical_copies() {
        let dir = tempfile::tempdir().unwrap();
        let img_path = dir.path().join("x.png");
        image::RgbImage::new(6, 6).save(&img_path).unwrap();
        let sal = SaliencyMap::from_fn(6, 6, |r, _| r as f64 / 6.0);
        let (sal_path, _) = sidecar_paths(&img_path);
        sal.write_png(&sal_path).unwrap();

        let teacher = PrecomputedTeacher::new();
        let key =
            TeacherKey { image_path: &img_path, mask: None, image_h: 6, image_w: 6 };
        let a = teacher.maps_for(&key).unwrap();
        // deleting the file no longer matters: the cache answers
        std::fs::remove_file(&sal_path).unwrap();
        let b = teacher.maps_for(&key).unwrap();
        assert_eq!(a, b);
    }
}
