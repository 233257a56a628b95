//! Integer shape rasterization.
//!
//! Geometry is rounded onto a fixed 1/16-pixel subgrid and membership tests
//! run in 64/128-bit integer arithmetic, so rendered masks are identical on
//! every platform for the same seed.

use crate::numeric::sin_cos;

/// Subpixel scale: all coordinates live on a 1/SCALE pixel grid.
const SCALE: f64 = 16.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Disk,
    Triangle,
    Square,
    Star,
    Cross,
}

pub const ALL_SHAPES: [Shape; 5] =
    [Shape::Disk, Shape::Triangle, Shape::Square, Shape::Star, Shape::Cross];

impl Shape {
    pub fn name(self) -> &'static str {
        match self {
            Shape::Disk => "disk",
            Shape::Triangle => "triangle",
            Shape::Square => "square",
            Shape::Star => "star",
            Shape::Cross => "cross",
        }
    }
}

/// A shape instance fixed to the integer subgrid, ready for membership
/// queries. Distances are in subgrid units.
pub enum ShapeRaster {
    Disk { cx: i64, cy: i64, r: i64 },
    Polygon { vertices: Vec<(i64, i64)> },
    /// Union of two rotated rectangles (the cross arms); each rectangle is
    /// (axis vector u, axis vector v, half-extent along u, half-extent
    /// along v), with axes scaled by SCALE.
    RectUnion { cx: i64, cy: i64, rects: [(i64, i64, i64, i64); 2] },
}

/// Place `shape` at center (row, col) = (cy, cx) in pixels with the given
/// circumradius (pixels) and rotation.
pub fn rasterize(shape: Shape, cy: f64, cx: f64, radius: f64, angle: f64) -> ShapeRaster {
    let to_sub = |v: f64| -> i64 { (v * SCALE).round() as i64 };
    match shape {
        Shape::Disk => ShapeRaster::Disk { cx: to_sub(cx), cy: to_sub(cy), r: to_sub(radius) },
        Shape::Triangle => polygon(cy, cx, radius, angle, &[0.0, 120.0, 240.0], &[1.0, 1.0, 1.0]),
        Shape::Square => {
            polygon(cy, cx, radius, angle, &[45.0, 135.0, 225.0, 315.0], &[1.0; 4])
        }
        Shape::Star => {
            let mut angles = Vec::with_capacity(10);
            let mut radii = Vec::with_capacity(10);
            for k in 0..10 {
                angles.push(k as f64 * 36.0);
                radii.push(if k % 2 == 0 { 1.0 } else { 0.45 });
            }
            polygon(cy, cx, radius, angle, &angles, &radii)
        }
        Shape::Cross => {
            let (s, c) = sin_cos(angle);
            let u = (to_sub(c), to_sub(s));
            let v = (to_sub(-s), to_sub(c));
            let long = to_sub(radius);
            let short = to_sub(radius * 0.34);
            ShapeRaster::RectUnion {
                cx: to_sub(cx),
                cy: to_sub(cy),
                rects: [(u.0, u.1, long, short), (v.0, v.1, long, short)],
            }
        }
    }
}

fn polygon(cy: f64, cx: f64, radius: f64, angle: f64, degs: &[f64], radii: &[f64]) -> ShapeRaster {
    let vertices = degs
        .iter()
        .zip(radii)
        .map(|(&deg, &rscale)| {
            let a = angle + deg.to_radians();
            let (s, c) = sin_cos(a);
            let x = cx + radius * rscale * c;
            let y = cy + radius * rscale * s;
            ((x * SCALE).round() as i64, (y * SCALE).round() as i64)
        })
        .collect();
    ShapeRaster::Polygon { vertices }
}

impl ShapeRaster {
    /// Membership of the pixel center (row, col).
    pub fn contains(&self, row: usize, col: usize) -> bool {
        let px = col as i64 * SCALE as i64;
        let py = row as i64 * SCALE as i64;
        match self {
            ShapeRaster::Disk { cx, cy, r } => {
                let dx = px - cx;
                let dy = py - cy;
                dx * dx + dy * dy <= r * r
            }
            ShapeRaster::Polygon { vertices } => point_in_polygon(px, py, vertices),
            ShapeRaster::RectUnion { cx, cy, rects } => {
                let dx = px - cx;
                let dy = py - cy;
                rects.iter().any(|&(ux, uy, half_long, half_short)| {
                    // axis (ux, uy) is SCALE * unit vector; perpendicular is
                    // (-uy, ux). Comparing |projection| against extent *
                    // SCALE keeps everything integral.
                    let along = (dx * ux + dy * uy).abs();
                    let across = (-dx * uy + dy * ux).abs();
                    along <= half_long * SCALE as i64 && across <= half_short * SCALE as i64
                })
            }
        }
    }
}

/// Even-odd rule with pure integer arithmetic on subgrid coordinates.
fn point_in_polygon(px: i64, py: i64, vertices: &[(i64, i64)]) -> bool {
    let n = vertices.len();
    let mut inside = false;
    for i in 0..n {
        let (x1, y1) = vertices[i];
        let (x2, y2) = vertices[(i + 1) % n];
        if (y1 > py) != (y2 > py) {
            // x coordinate of the edge at height py, compared without
            // division: px < x1 + (py - y1) * (x2 - x1) / (y2 - y1)
            let lhs = (px - x1) as i128 * (y2 - y1) as i128;
            let rhs = (py - y1) as i128 * (x2 - x1) as i128;
            let crosses = if y2 > y1 { lhs < rhs } else { lhs > rhs };
            if crosses {
                inside = !inside;
            }
        }
    }
    inside
}
