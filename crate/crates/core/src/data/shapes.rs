//! Procedural shapes-on-clutter benchmark generator.
//!
//! Each class is a (shape, texture) combination. Images place one textured
//! foreground shape at a random pose over a gradient background littered
//! with low-contrast clutter blobs that reuse the same shape and texture
//! vocabulary, so texture alone cannot identify the class. The ground-truth
//! mask is the exact foreground raster.

use std::fs;
use std::io::Write;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::raster::{rasterize, Shape, ShapeRaster, ALL_SHAPES};
use super::{DatasetMeta, MANIFEST_HEADER};
use crate::error::{Error, Result};
use crate::numeric::derive_seed;

pub const GENERATOR_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Texture {
    Solid,
    Stripes,
    Dots,
    Checker,
}

pub const ALL_TEXTURES: [Texture; 4] =
    [Texture::Solid, Texture::Stripes, Texture::Dots, Texture::Checker];

impl Texture {
    pub fn name(self) -> &'static str {
        match self {
            Texture::Solid => "solid",
            Texture::Stripes => "stripes",
            Texture::Dots => "dots",
            Texture::Checker => "checker",
        }
    }
}

/// Class id -> (shape, texture): shapes cycle fastest so small class counts
/// still cover several shapes.
pub fn class_combo(class: usize) -> (Shape, Texture) {
    (ALL_SHAPES[class % 5], ALL_TEXTURES[(class / 5) % 4])
}

#[derive(Debug, Clone, Copy)]
pub struct ShapesSpec {
    pub classes: usize,
    pub per_class: usize,
    pub size: usize,
    pub seed: u64,
}

/// Sampled texture parameters; all integral so pixel classification is
/// exact.
#[derive(Debug, Clone, Copy)]
struct TextureParams {
    kind: Texture,
    period: usize,
    phase: usize,
    horizontal: bool,
}

fn sample_texture(rng: &mut ChaCha8Rng, kind: Texture) -> TextureParams {
    let period = match kind {
        Texture::Dots => rng.gen_range(4..=7),
        _ => rng.gen_range(3..=6),
    };
    let phase = rng.gen_range(0..period);
    let horizontal = rng.gen_bool(0.5);
    TextureParams { kind, period, phase, horizontal }
}

/// Whether the pixel takes the secondary color under this texture.
fn texture_secondary(t: &TextureParams, r: usize, c: usize) -> bool {
    match t.kind {
        Texture::Solid => false,
        Texture::Stripes => {
            let axis = if t.horizontal { r } else { c };
            ((axis + t.phase) / t.period) % 2 == 1
        }
        Texture::Dots => {
            let p = t.period as i64;
            let rd = (p / 3).max(1);
            let dr = (r as i64 + t.phase as i64) % p - p / 2;
            let dc = (c as i64 + t.phase as i64) % p - p / 2;
            dr * dr + dc * dc <= rd * rd
        }
        Texture::Checker => (((r + t.phase) / t.period) + ((c + t.phase) / t.period)) % 2 == 1,
    }
}

type Rgb = [f64; 3];

fn muted_color(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> Rgb {
    [rng.gen_range(lo..hi), rng.gen_range(lo..hi), rng.gen_range(lo..hi)]
}

fn vivid_color(rng: &mut ChaCha8Rng) -> Rgb {
    let dominant = rng.gen_range(0..3usize);
    let mut c = [0.0; 3];
    for (i, v) in c.iter_mut().enumerate() {
        *v = if i == dominant { rng.gen_range(170.0..255.0) } else { rng.gen_range(30.0..120.0) };
    }
    c
}

struct Blob {
    raster: ShapeRaster,
    texture: TextureParams,
    color_a: Rgb,
    color_b: Rgb,
    alpha: f64,
}

/// Render one sample; returns (RGB image, mask bytes 0/255).
fn render_sample(spec: &ShapesSpec, class: usize, seed: u64) -> (image::RgbImage, Vec<u8>) {
    let s = spec.size;
    let sf = s as f64;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    // background gradient
    let bg0 = muted_color(&mut rng, 40.0, 140.0);
    let bg1 = muted_color(&mut rng, 40.0, 140.0);
    let theta = rng.gen_range(0.0..std::f64::consts::TAU);
    let (gsin, gcos) = crate::numeric::sin_cos(theta);

    // clutter blobs reuse the foreground vocabulary at low contrast
    let n_blobs = rng.gen_range(3..=6);
    let mut blobs = Vec::with_capacity(n_blobs);
    for _ in 0..n_blobs {
        let shape = ALL_SHAPES[rng.gen_range(0..5)];
        let texture_kind = super::ALL_TEXTURES[rng.gen_range(0..4)];
        let texture = sample_texture(&mut rng, texture_kind);
        let cy = rng.gen_range(0.0..sf);
        let cx = rng.gen_range(0.0..sf);
        let radius = rng.gen_range(0.12 * sf..0.28 * sf);
        let angle = rng.gen_range(0.0..std::f64::consts::TAU);
        let color_a = muted_color(&mut rng, 60.0, 160.0);
        let color_b = muted_color(&mut rng, 60.0, 160.0);
        blobs.push(Blob {
            raster: rasterize(shape, cy, cx, radius, angle),
            texture,
            color_a,
            color_b,
            alpha: 0.35,
        });
    }

    // foreground shape/texture from the class
    let (fg_shape, fg_texture_kind) = class_combo(class);
    let fg_texture = sample_texture(&mut rng, fg_texture_kind);
    let fg_cy = sf / 2.0 + rng.gen_range(-0.12 * sf..0.12 * sf);
    let fg_cx = sf / 2.0 + rng.gen_range(-0.12 * sf..0.12 * sf);
    let fg_radius = rng.gen_range(0.22 * sf..0.38 * sf);
    let fg_angle = rng.gen_range(0.0..std::f64::consts::TAU);
    let fg_a = vivid_color(&mut rng);
    let fg_b = vivid_color(&mut rng);
    let fg = rasterize(fg_shape, fg_cy, fg_cx, fg_radius, fg_angle);

    let mut img = image::RgbImage::new(s as u32, s as u32);
    let mut mask = vec![0u8; s * s];
    let diag = sf * (gcos.abs() + gsin.abs()).max(1e-9);
    for r in 0..s {
        for c in 0..s {
            let t = ((r as f64 * gsin + c as f64 * gcos) / diag + 1.0) / 2.0;
            let mut px = [
                bg0[0] + (bg1[0] - bg0[0]) * t,
                bg0[1] + (bg1[1] - bg0[1]) * t,
                bg0[2] + (bg1[2] - bg0[2]) * t,
            ];
            for b in &blobs {
                if b.raster.contains(r, c) {
                    let col =
                        if texture_secondary(&b.texture, r, c) { b.color_b } else { b.color_a };
                    for ch in 0..3 {
                        px[ch] = (1.0 - b.alpha) * px[ch] + b.alpha * col[ch];
                    }
                }
            }
            if fg.contains(r, c) {
                px = if texture_secondary(&fg_texture, r, c) { fg_b } else { fg_a };
                mask[r * s + c] = 255;
            }
            let quant = [
                px[0].round().clamp(0.0, 255.0) as u8,
                px[1].round().clamp(0.0, 255.0) as u8,
                px[2].round().clamp(0.0, 255.0) as u8,
            ];
            img.put_pixel(c as u32, r as u32, image::Rgb(quant));
        }
    }
    (img, mask)
}

fn save_mask(path: &Path, mask: &[u8], size: usize) -> Result<()> {
    let img = image::GrayImage::from_raw(size as u32, size as u32, mask.to_vec())
        .expect("mask buffer matches dims");
    img.save(path)?;
    Ok(())
}

/// Generate the dataset directory: `images/`, `masks/`, `manifest.csv` and
/// `meta.json`. Deterministic given the seed; every image derives its own
/// seed so worker threads (capped by ROSS_NUM_THREADS) cannot change the
/// output bytes.
pub fn generate_shapes_dataset(out_dir: impl AsRef<Path>, spec: &ShapesSpec) -> Result<()> {
    let max_classes = ALL_SHAPES.len() * ALL_TEXTURES.len();
    if spec.classes < 4 || spec.classes > max_classes {
        return Err(Error::invalid(format!(
            "classes must lie in [4, {max_classes}], got {}",
            spec.classes
        )));
    }
    if spec.per_class < 20 {
        return Err(Error::invalid(format!("per_class must be >= 20, got {}", spec.per_class)));
    }
    if spec.size < 32 {
        return Err(Error::invalid(format!("size must be >= 32, got {}", spec.size)));
    }

    let out = out_dir.as_ref();
    fs::create_dir_all(out.join("images"))?;
    fs::create_dir_all(out.join("masks"))?;

    let total = spec.classes * spec.per_class;
    let workers = worker_count().min(total).max(1);
    let spec_copy = *spec;
    let out_path = out.to_path_buf();
    std::thread::scope(|scope| -> Result<()> {
        let mut handles = Vec::new();
        for worker in 0..workers {
            let out_path = out_path.clone();
            handles.push(scope.spawn(move || -> Result<()> {
                let mut idx = worker;
                while idx < total {
                    let class = idx / spec_copy.per_class;
                    let name = format!("img_{idx:05}.png");
                    let (img, mask) =
                        render_sample(&spec_copy, class, derive_seed(spec_copy.seed, idx as u64));
                    img.save(out_path.join("images").join(&name))?;
                    save_mask(&out_path.join("masks").join(&name), &mask, spec_copy.size)?;
                    idx += workers;
                }
                Ok(())
            }));
        }
        for h in handles {
            h.join().expect("generator worker panicked")?;
        }
        Ok(())
    })?;

    let mut manifest = fs::File::create(out.join("manifest.csv"))?;
    writeln!(manifest, "{MANIFEST_HEADER}")?;
    for idx in 0..total {
        let class = idx / spec.per_class;
        let within = idx % spec.per_class;
        let split = if within % 5 == 4 { "test" } else { "train" };
        writeln!(manifest, "images/img_{idx:05}.png,{class},{split}")?;
    }

    let class_names = (0..spec.classes)
        .map(|c| {
            let (shape, texture) = class_combo(c);
            format!("{}_{}", shape.name(), texture.name())
        })
        .collect();
    let meta = DatasetMeta {
        image_size: spec.size,
        class_names,
        seed: spec.seed,
        generator_version: GENERATOR_VERSION,
        has_masks: true,
    };
    fs::write(out.join("meta.json"), serde_json::to_string_pretty(&meta)?)?;
    Ok(())
}

fn worker_count() -> usize {
    if let Ok(v) = std::env::var("ROSS_NUM_THREADS") {
        if let Ok(n) = v.parse::<usize>() {
            return n.max(1);
        }
    }
    std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{load_manifest, Split};
    use sha2::{Digest, Sha256};

    fn dir_hash(dir: &Path) -> String {
        let mut paths = Vec::new();
        fn walk(dir: &Path, acc: &mut Vec<std::path::PathBuf>) {
            for entry in fs::read_dir(dir).unwrap() {
                let p = entry.unwrap().path();
                if p.is_dir() {
                    walk(&p, acc);
                } else {
                    acc.push(p);
                }
            }
        }
        walk(dir, &mut paths);
        paths.sort();
        let mut hasher = Sha256::new();
        for p in paths {
            hasher.update(p.file_name().unwrap().to_string_lossy().as_bytes());
            hasher.update(fs::read(&p).unwrap());
        }
        format!("{:x}", hasher.finalize())
    }

    #[test]
    fn generator_contract_and_balance() {
        let dir = tempfile::tempdir().unwrap();
        let spec = ShapesSpec { classes: 10, per_class: 20, size: 32, seed: 7 };
        generate_shapes_dataset(dir.path(), &spec).unwrap();
        let m = load_manifest(dir.path()).unwrap();
        assert_eq!(m.len(), 200);
        assert_eq!(m.class_count(), 10);
        assert_eq!(m.meta.class_names.len(), 10);
        for label in 0..10 {
            let train = m.indices_for(Split::Train, &[label]).len();
            let test = m.indices_for(Split::Test, &[label]).len();
            assert_eq!(train + test, 20, "class {label} imbalance");
            assert_eq!(test, 4, "80/20 split for class {label}");
        }
        // distinct combos
        let combos: std::collections::HashSet<String> =
            m.meta.class_names.iter().cloned().collect();
        assert_eq!(combos.len(), 10);

        // every mask is nonempty and matches its image dims
        for idx in (0..200).step_by(17) {
            let sample = m.load_sample(idx).unwrap();
            let mask = sample.mask.expect("synthetic dataset has masks");
            assert!(mask.count_ones() > 0, "empty foreground at {idx}");
            assert_eq!(mask.height(), 32);
            assert_eq!(sample.image.dim(), (3, 32, 32));
        }
    }

    #[test]
    fn same_seed_is_byte_identical() {
        let spec = ShapesSpec { classes: 4, per_class: 20, size: 32, seed: 99 };
        let a = tempfile::tempdir().unwrap();
        let b = tempfile::tempdir().unwrap();
        generate_shapes_dataset(a.path(), &spec).unwrap();
        generate_shapes_dataset(b.path(), &spec).unwrap();
        assert_eq!(dir_hash(a.path()), dir_hash(b.path()));

        let c = tempfile::tempdir().unwrap();
        generate_shapes_dataset(c.path(), &ShapesSpec { seed: 100, ..spec }).unwrap();
        assert_ne!(dir_hash(a.path()), dir_hash(c.path()), "different seed, same bytes");
    }

    #[test]
    fn invalid_specs_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let base = ShapesSpec { classes: 10, per_class: 20, size: 32, seed: 1 };
        for bad in [
            ShapesSpec { classes: 3, ..base },
            ShapesSpec { classes: 21, ..base },
            ShapesSpec { per_class: 19, ..base },
            ShapesSpec { size: 31, ..base },
        ] {
            assert!(generate_shapes_dataset(dir.path(), &bad).is_err());
        }
    }
}
