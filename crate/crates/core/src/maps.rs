//! Pure, deterministic kernels for saliency and boundary maps.
//!
//! A [`SaliencyMap`] is a real-valued grid in `[0, 1]` over image pixels; a
//! [`BinaryMap`] is its `{0, 1}` counterpart. All operations here are total
//! functions of their inputs: no randomness, no shared state, identical
//! inputs yield bit-identical outputs.

use std::path::Path;

use crate::error::{Error, Result};

/// Real-valued attention grid with values in `[0, 1]`, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct SaliencyMap {
    height: usize,
    width: usize,
    values: Vec<f64>,
}

impl SaliencyMap {
    /// Build a map from row-major values, validating shape and range.
    pub fn new(height: usize, width: usize, values: Vec<f64>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("map dimensions must be at least 1x1"));
        }
        if values.len() != height * width {
            return Err(Error::invalid(format!(
                "value count {} does not match {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|v| !(0.0..=1.0).contains(v)) {
            return Err(Error::invalid("saliency values must lie in [0, 1]"));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self::constant(height, width, 0.0)
    }

    pub fn constant(height: usize, width: usize, value: f64) -> Self {
        assert!(height > 0 && width > 0 && (0.0..=1.0).contains(&value));
        Self { height, width, values: vec![value; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c).clamp(0.0, 1.0));
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn pixel_count(&self) -> usize {
        self.values.len()
    }

    /// Load from an 8-bit single-channel PNG; pixel value v encodes v/255.
    /// Multi-channel files are rejected.
    pub fn read_png(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        if !path.exists() {
            return Err(Error::NotFound(path.to_path_buf()));
        }
        let img = image::open(path)?;
        let gray = match img {
            image::DynamicImage::ImageLuma8(g) => g,
            other => {
                return Err(Error::invalid(format!(
                    "{}: map PNGs must be 8-bit single-channel, got {:?}",
                    path.display(),
                    other.color()
                )))
            }
        };
        let (w, h) = gray.dimensions();
        let values = gray.pixels().map(|p| p.0[0] as f64 / 255.0).collect();
        Self::new(h as usize, w as usize, values)
    }

    /// Write as 8-bit single-channel PNG (values quantized by round(v*255)).
    pub fn write_png(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut img = image::GrayImage::new(self.width as u32, self.height as u32);
        for r in 0..self.height {
            for c in 0..self.width {
                let v = (self.get(r, c) * 255.0).round().clamp(0.0, 255.0) as u8;
                img.put_pixel(c as u32, r as u32, image::Luma([v]));
            }
        }
        img.save(path.as_ref())?;
        Ok(())
    }
}

/// Grid with values strictly in `{0, 1}`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BinaryMap {
    height: usize,
    width: usize,
    values: Vec<u8>,
}

impl BinaryMap {
    pub fn new(height: usize, width: usize, values: Vec<u8>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::invalid("map dimensions must be at least 1x1"));
        }
        if values.len() != height * width {
            return Err(Error::invalid(format!(
                "value count {} does not match {height}x{width}",
                values.len()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::invalid("binary values must be 0 or 1"));
        }
        Ok(Self { height, width, values })
    }

    pub fn zeros(height: usize, width: usize) -> Self {
        Self { height, width, values: vec![0; height * width] }
    }

    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut values = Vec::with_capacity(height * width);
        for r in 0..height {
            for c in 0..width {
                values.push(f(r, c) as u8);
            }
        }
        Self { height, width, values }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn get(&self, row: usize, col: usize) -> u8 {
        self.values[row * self.width + col]
    }

    pub fn values(&self) -> &[u8] {
        &self.values
    }

    pub fn count_ones(&self) -> usize {
        self.values.iter().map(|&v| v as usize).sum()
    }

    /// View as a real-valued map (0.0 / 1.0).
    pub fn to_saliency(&self) -> SaliencyMap {
        SaliencyMap {
            height: self.height,
            width: self.width,
            values: self.values.iter().map(|&v| v as f64).collect(),
        }
    }
}

/// Absolute response of the 4-neighbor Laplacian stencil
/// `[[0,1,0],[1,-4,1],[0,1,0]]` with edge-replicate padding, rescaled by its
/// own maximum into `[0, 1]`. An all-equal input yields the all-zero map
/// (rescaling is skipped when the maximum response is 0).
pub fn laplacian_boundary(sal: &SaliencyMap) -> SaliencyMap {
    let (h, w) = (sal.height, sal.width);
    let at = |r: isize, c: isize| -> f64 {
        let r = r.clamp(0, h as isize - 1) as usize;
        let c = c.clamp(0, w as isize - 1) as usize;
        sal.get(r, c)
    };
    let mut out = vec![0.0; h * w];
    let mut max = 0.0f64;
    for r in 0..h {
        for c in 0..w {
            let (ri, ci) = (r as isize, c as isize);
            let resp = at(ri - 1, ci) + at(ri + 1, ci) + at(ri, ci - 1) + at(ri, ci + 1)
                - 4.0 * sal.get(r, c);
            let resp = resp.abs();
            out[r * w + c] = resp;
            if resp > max {
                max = resp;
            }
        }
    }
    if max > 0.0 {
        for v in &mut out {
            *v /= max;
        }
    }
    SaliencyMap { height: h, width: w, values: out }
}

/// Threshold a map into `{0, 1}`: output pixel is 1 iff input >= threshold.
pub fn binarize(map: &SaliencyMap, threshold: f64) -> Result<BinaryMap> {
    if !(threshold > 0.0 && threshold < 1.0) {
        return Err(Error::invalid(format!(
            "binarize threshold must lie in (0, 1), got {threshold}"
        )));
    }
    Ok(BinaryMap {
        height: map.height,
        width: map.width,
        values: map.values.iter().map(|&v| (v >= threshold) as u8).collect(),
    })
}

/// Morphological dilation with a Euclidean disk structuring element:
/// output pixel p is 1 iff some input pixel q is 1 with |p - q| <= radius.
/// Radius 0 is the identity.
pub fn dilate(map: &BinaryMap, radius_px: i32) -> Result<BinaryMap> {
    if radius_px < 0 {
        return Err(Error::invalid(format!("dilation radius must be >= 0, got {radius_px}")));
    }
    if radius_px == 0 {
        return Ok(map.clone());
    }
    let r = radius_px as i64;
    // Disk offsets enumerated once, then stamped over every set pixel.
    let mut offsets = Vec::new();
    for dr in -r..=r {
        for dc in -r..=r {
            if dr * dr + dc * dc <= r * r {
                offsets.push((dr, dc));
            }
        }
    }
    let (h, w) = (map.height as i64, map.width as i64);
    let mut out = vec![0u8; map.values.len()];
    for row in 0..h {
        for col in 0..w {
            if map.values[(row * w + col) as usize] == 0 {
                continue;
            }
            for &(dr, dc) in &offsets {
                let (nr, nc) = (row + dr, col + dc);
                if nr >= 0 && nr < h && nc >= 0 && nc < w {
                    out[(nr * w + nc) as usize] = 1;
                }
            }
        }
    }
    Ok(BinaryMap { height: map.height, width: map.width, values: out })
}

/// Convert a dilation fraction of the image size into a pixel radius:
/// `max(1, round(fraction * min(height, width)))`, with 0 for fraction 0.
pub fn fraction_to_radius(fraction: f64, height: usize, width: usize) -> Result<i32> {
    if !(0.0..=1.0).contains(&fraction) {
        return Err(Error::invalid(format!("fraction must lie in [0, 1], got {fraction}")));
    }
    if fraction == 0.0 {
        return Ok(0);
    }
    let r = (fraction * height.min(width) as f64).round() as i32;
    Ok(r.max(1))
}

/// Block max-pooling of a binary map down to `out_h x out_w`: output pixel
/// is 1 iff any input pixel in its block is 1. Blocks partition the input by
/// proportional index ranges, so boundary coverage survives shrinking.
pub fn downsample_binary(map: &BinaryMap, out_h: usize, out_w: usize) -> Result<BinaryMap> {
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("output dimensions must be at least 1x1"));
    }
    if out_h > map.height || out_w > map.width {
        return Err(Error::invalid(format!(
            "downsample_binary cannot upsample: {}x{} -> {out_h}x{out_w}",
            map.height, map.width
        )));
    }
    let (h, w) = (map.height, map.width);
    let mut out = vec![0u8; out_h * out_w];
    for (i, item) in out.iter_mut().enumerate() {
        let (oi, oj) = (i / out_w, i % out_w);
        let r0 = oi * h / out_h;
        let r1 = (oi + 1) * h / out_h;
        let c0 = oj * w / out_w;
        let c1 = (oj + 1) * w / out_w;
        'block: for r in r0..r1 {
            for c in c0..c1 {
                if map.get(r, c) == 1 {
                    *item = 1;
                    break 'block;
                }
            }
        }
    }
    Ok(BinaryMap { height: out_h, width: out_w, values: out })
}

/// Bilinear resize with corner-aligned sampling. Output stays in `[0, 1]`.
pub fn resize_map(map: &SaliencyMap, out_h: usize, out_w: usize) -> SaliencyMap {
    assert!(out_h > 0 && out_w > 0, "resize target must be at least 1x1");
    if out_h == map.height && out_w == map.width {
        return map.clone();
    }
    let src_pos = |i: usize, out_n: usize, in_n: usize| -> f64 {
        if out_n == 1 {
            (in_n as f64 - 1.0) / 2.0
        } else {
            i as f64 * (in_n as f64 - 1.0) / (out_n as f64 - 1.0)
        }
    };
    let mut values = Vec::with_capacity(out_h * out_w);
    for i in 0..out_h {
        let y = src_pos(i, out_h, map.height);
        let y0 = y.floor() as usize;
        let y1 = (y0 + 1).min(map.height - 1);
        let fy = y - y0 as f64;
        for j in 0..out_w {
            let x = src_pos(j, out_w, map.width);
            let x0 = x.floor() as usize;
            let x1 = (x0 + 1).min(map.width - 1);
            let fx = x - x0 as f64;
            let top = map.get(y0, x0) * (1.0 - fx) + map.get(y0, x1) * fx;
            let bot = map.get(y1, x0) * (1.0 - fx) + map.get(y1, x1) * fx;
            values.push((top * (1.0 - fy) + bot * fy).clamp(0.0, 1.0));
        }
    }
    SaliencyMap { height: out_h, width: out_w, values }
}

/// Rescale to `[0, 1]` by the map's own range, then clamp the top to
/// `1 - epsilon` so downstream `log(1 - v)` terms stay finite. An all-equal
/// input maps to the all-zero map.
///
/// `epsilon` must lie in `(0, 0.01]`.
pub fn minmax_normalize(map: &SaliencyMap, epsilon: f64) -> SaliencyMap {
    assert!(
        epsilon > 0.0 && epsilon <= 0.01,
        "minmax_normalize epsilon must lie in (0, 0.01], got {epsilon}"
    );
    let min = map.values.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = map.values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if max - min <= 0.0 {
        return SaliencyMap::zeros(map.height, map.width);
    }
    let range = max - min;
    SaliencyMap {
        height: map.height,
        width: map.width,
        values: map.values.iter().map(|&v| ((v - min) / range).clamp(0.0, 1.0 - epsilon)).collect(),
    }
}

/// Normalize an arbitrary real grid (not yet range-checked) into a map.
/// Same semantics as [`minmax_normalize`] but accepts unbounded input.
pub fn minmax_normalize_raw(height: usize, width: usize, raw: &[f64], epsilon: f64) -> SaliencyMap {
    assert!(epsilon > 0.0 && epsilon <= 0.01);
    assert_eq!(raw.len(), height * width);
    let min = raw.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = raw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(max - min > 0.0) {
        return SaliencyMap::zeros(height, width);
    }
    let range = max - min;
    SaliencyMap {
        height,
        width,
        values: raw.iter().map(|&v| ((v - min) / range).clamp(0.0, 1.0 - epsilon)).collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_binary(rng: &mut ChaCha8Rng, h: usize, w: usize) -> BinaryMap {
        BinaryMap::from_fn(h, w, |_, _| rng.gen_bool(0.5))
    }

    /// O(N^2) pairwise-distance dilation oracle, independent of the
    /// offset-stamping production path.
    fn dilate_brute_force(map: &BinaryMap, radius: i64) -> BinaryMap {
        BinaryMap::from_fn(map.height(), map.width(), |r, c| {
            for qr in 0..map.height() {
                for qc in 0..map.width() {
                    if map.get(qr, qc) == 1 {
                        let dr = r as i64 - qr as i64;
                        let dc = c as i64 - qc as i64;
                        if dr * dr + dc * dc <= radius * radius {
                            return true;
                        }
                    }
                }
            }
            false
        })
    }

    #[test]
    fn laplacian_of_constant_is_zero() {
        for level in [0.0, 0.3, 0.7, 1.0] {
            let out = laplacian_boundary(&SaliencyMap::constant(8, 8, level));
            assert!(out.values().iter().all(|&v| v == 0.0), "level {level}");
        }
    }

    #[test]
    fn laplacian_vertical_step_edge() {
        // Left half 0, right half 1: response is 1 exactly on the two
        // columns adjacent to the step (hand-convolved), max already 1.
        let step = SaliencyMap::from_fn(8, 8, |_, c| if c < 4 { 0.0 } else { 1.0 });
        let out = laplacian_boundary(&step);
        for r in 0..8 {
            for c in 0..8 {
                let expected = if c == 3 || c == 4 { 1.0 } else { 0.0 };
                assert_eq!(out.get(r, c), expected, "at ({r},{c})");
            }
        }
    }

    #[test]
    fn laplacian_single_bright_pixel() {
        // Center response 4, the four neighbors 1; rescaled to 1 and 0.25.
        let map = SaliencyMap::from_fn(5, 5, |r, c| if (r, c) == (2, 2) { 1.0 } else { 0.0 });
        let out = laplacian_boundary(&map);
        assert_eq!(out.get(2, 2), 1.0);
        for (r, c) in [(1, 2), (3, 2), (2, 1), (2, 3)] {
            assert_eq!(out.get(r, c), 0.25, "neighbor ({r},{c})");
        }
        assert_eq!(out.get(0, 0), 0.0);
        assert_eq!(out.get(1, 1), 0.0);
    }

    #[test]
    fn binarize_threshold_is_inclusive() {
        let map = SaliencyMap::new(2, 2, vec![0.4, 0.5, 0.6, 0.49]).unwrap();
        let b = binarize(&map, 0.5).unwrap();
        assert_eq!(b.values(), &[0, 1, 1, 0]);
    }

    #[test]
    fn binarize_extremes_and_errors() {
        let zeros = SaliencyMap::zeros(3, 3);
        assert_eq!(binarize(&zeros, 0.5).unwrap().count_ones(), 0);
        let ones = SaliencyMap::constant(3, 3, 1.0);
        assert_eq!(binarize(&ones, 0.5).unwrap().count_ones(), 9);
        assert!(binarize(&zeros, 0.0).is_err());
        assert!(binarize(&zeros, 1.0).is_err());
        assert!(binarize(&zeros, -0.1).is_err());
    }

    #[test]
    fn dilate_radius_zero_is_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = random_binary(&mut rng, 9, 7);
        assert_eq!(dilate(&m, 0).unwrap(), m);
    }

    #[test]
    fn dilate_center_pixel_disk_counts() {
        let m = BinaryMap::from_fn(5, 5, |r, c| (r, c) == (2, 2));
        assert_eq!(dilate(&m, 1).unwrap().count_ones(), 5); // plus shape
        assert_eq!(dilate(&m, 2).unwrap().count_ones(), 13); // disk radius 2
    }

    #[test]
    fn dilate_rejects_negative_radius() {
        let m = BinaryMap::zeros(4, 4);
        assert!(dilate(&m, -1).is_err());
    }

    #[test]
    fn dilate_matches_brute_force_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..25 {
            let m = random_binary(&mut rng, 16, 16);
            for r in [0, 1, 2, 3, 5] {
                assert_eq!(dilate(&m, r).unwrap(), dilate_brute_force(&m, r as i64));
            }
        }
    }

    #[test]
    fn dilate_monotone_and_contains_input() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..20 {
            let m = random_binary(&mut rng, 12, 12);
            let d1 = dilate(&m, 1).unwrap();
            let d2 = dilate(&m, 2).unwrap();
            for i in 0..m.values().len() {
                assert!(d1.values()[i] >= m.values()[i], "dilation cleared a set pixel");
                assert!(d2.values()[i] >= d1.values()[i], "larger radius lost a pixel");
            }
        }
    }

    #[test]
    fn fraction_to_radius_examples() {
        assert_eq!(fraction_to_radius(0.05, 64, 64).unwrap(), 3);
        assert_eq!(fraction_to_radius(0.15, 64, 64).unwrap(), 10);
        assert_eq!(fraction_to_radius(0.0, 128, 99).unwrap(), 0);
        // floor of 1 pixel for tiny nonzero fractions
        assert_eq!(fraction_to_radius(0.001, 64, 64).unwrap(), 1);
        // applies to min(H, W)
        assert_eq!(fraction_to_radius(0.10, 64, 32).unwrap(), 3);
        assert!(fraction_to_radius(-0.1, 8, 8).is_err());
        assert!(fraction_to_radius(1.1, 8, 8).is_err());
    }

    #[test]
    fn downsample_preserves_single_pixel_quadrant() {
        for (r, c) in [(0, 0), (1, 3), (3, 0), (2, 2)] {
            let m = BinaryMap::from_fn(4, 4, |rr, cc| (rr, cc) == (r, c));
            let d = downsample_binary(&m, 2, 2).unwrap();
            assert_eq!(d.count_ones(), 1);
            assert_eq!(d.get(r / 2, c / 2), 1, "pixel ({r},{c})");
        }
    }

    #[test]
    fn downsample_identity_zeros_and_errors() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let m = random_binary(&mut rng, 6, 6);
        assert_eq!(downsample_binary(&m, 6, 6).unwrap(), m);
        let z = BinaryMap::zeros(8, 8);
        assert_eq!(downsample_binary(&z, 3, 5).unwrap().count_ones(), 0);
        assert!(downsample_binary(&m, 7, 6).is_err());
        assert!(downsample_binary(&m, 6, 0).is_err());
    }

    #[test]
    fn downsample_block_membership_enumeration() {
        // A block holds a 1 iff the input holds a 1 inside that block.
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for _ in 0..50 {
            let m = random_binary(&mut rng, 8, 8);
            let d = downsample_binary(&m, 2, 2).unwrap();
            for oi in 0..2 {
                for oj in 0..2 {
                    let mut any = false;
                    for r in oi * 4..(oi + 1) * 4 {
                        for c in oj * 4..(oj + 1) * 4 {
                            any |= m.get(r, c) == 1;
                        }
                    }
                    assert_eq!(d.get(oi, oj) == 1, any);
                }
            }
        }
    }

    #[test]
    fn resize_identity_and_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let m = SaliencyMap::from_fn(5, 7, |_, _| rng.gen_range(0.0..1.0));
        assert_eq!(resize_map(&m, 5, 7), m);
        let c = SaliencyMap::constant(4, 4, 0.42);
        let r = resize_map(&c, 9, 3);
        assert!(r.values().iter().all(|&v| (v - 0.42).abs() < 1e-12));
    }

    #[test]
    fn resize_interpolates_rows_monotonically() {
        let m = SaliencyMap::new(2, 2, vec![0.0, 1.0, 0.0, 1.0]).unwrap();
        let r = resize_map(&m, 2, 4);
        let expected = [0.0, 1.0 / 3.0, 2.0 / 3.0, 1.0];
        for row in 0..2 {
            for (j, &e) in expected.iter().enumerate() {
                assert!((r.get(row, j) - e).abs() < 1e-12, "({row},{j})");
            }
        }
    }

    #[test]
    fn minmax_examples() {
        let eps = 1e-6;
        let flat = SaliencyMap::constant(3, 3, 0.8);
        assert!(minmax_normalize(&flat, eps).values().iter().all(|&v| v == 0.0));

        let raw = [0.0, 2.0, 4.0, 4.0];
        let out = minmax_normalize_raw(2, 2, &raw, eps);
        assert_eq!(out.get(0, 0), 0.0);
        assert!((out.get(0, 1) - 0.5).abs() < 1e-12);
        assert!((out.get(1, 0) - (1.0 - eps)).abs() < 1e-12);
        assert!((out.get(1, 1) - (1.0 - eps)).abs() < 1e-12);

        // Already spanning [0, 1-eps]: unchanged up to O(eps).
        let m = SaliencyMap::new(1, 3, vec![0.0, 0.5, 1.0 - eps]).unwrap();
        let n = minmax_normalize(&m, eps);
        for i in 0..3 {
            assert!((n.get(0, i) - m.get(0, i)).abs() <= 2.0 * eps);
        }
    }

    #[test]
    fn png_round_trip_and_channel_rejection() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("map.png");
        let m = SaliencyMap::from_fn(6, 4, |r, c| ((r * 4 + c) as f64 / 255.0).min(1.0));
        m.write_png(&path).unwrap();
        let loaded = SaliencyMap::read_png(&path).unwrap();
        assert_eq!(loaded, m);

        let rgb_path = dir.path().join("rgb.png");
        image::RgbImage::new(4, 4).save(&rgb_path).unwrap();
        assert!(SaliencyMap::read_png(&rgb_path).is_err(), "multi-channel must be rejected");
        assert!(matches!(
            SaliencyMap::read_png(dir.path().join("missing.png")),
            Err(Error::NotFound(_))
        ));
    }

    proptest! {
        #[test]
        fn binarize_is_idempotent_on_binary_input(
            bits in proptest::collection::vec(0u8..=1, 16),
            t in 0.01f64..0.99
        ) {
            let b = BinaryMap::new(4, 4, bits).unwrap();
            let round = binarize(&b.to_saliency(), t).unwrap();
            prop_assert_eq!(round, b);
        }

        #[test]
        fn minmax_output_in_bounds(values in proptest::collection::vec(-10.0f64..10.0, 12)) {
            let out = minmax_normalize_raw(3, 4, &values, 1e-4);
            prop_assert!(out.values().iter().all(|&v| (0.0..=1.0 - 1e-4).contains(&v)));
        }
    }
}
