//! Exact geometry primitives for complement sets and probe sets.
//!
//! Distances are closed-form (or exactly recursive for Cantor iterates), never
//! rasterized: grid spacing enters only when a caller compares a distance
//! against it.

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, PartialEq, Debug, Serialize, Deserialize)]
pub struct Point {
    pub x: f64,
    /// Always 0.0 for one-dimensional domains.
    #[serde(default)]
    pub y: f64,
}

impl Point {
    pub fn new(x: f64, y: f64) -> Self {
        Point { x, y }
    }

    pub fn dist(self, other: Point) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }
}

/// A building block of a complement set. Unions of these describe the closed
/// set whose distance field defines the domain; each knows its exact
/// point-to-set distance.
#[derive(Clone, PartialEq, Debug, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Primitive {
    Point { at: Point },
    PointCloud { points: Vec<Point> },
    Segment { a: Point, b: Point },
    /// Closed disk (closed interval in 1D).
    Disk { center: Point, radius: f64 },
    /// Complement of the open disk: everything at distance >= radius from center.
    DiskExterior { center: Point, radius: f64 },
    /// Closed half-plane { x : normal . x >= offset }. The normal need not be
    /// unit length; it is normalized on evaluation.
    HalfPlane { normal: Point, offset: f64 },
    /// Closed axis-aligned rectangle (interval in 1D).
    Rect { min: Point, max: Point },
    /// Complement of the open rectangle.
    RectExterior { min: Point, max: Point },
    /// Middle-thirds Cantor iterate on the segment [a,b] x {y}: 2^depth
    /// closed subsegments of length (b-a)/3^depth. depth = 0 is the full segment.
    CantorIterate { a: f64, b: f64, y: f64, depth: u32 },
}

fn segment_dist(p: Point, a: Point, b: Point) -> f64 {
    let (dx, dy) = (b.x - a.x, b.y - a.y);
    let len2 = dx * dx + dy * dy;
    if len2 == 0.0 {
        return p.dist(a);
    }
    let t = (((p.x - a.x) * dx + (p.y - a.y) * dy) / len2).clamp(0.0, 1.0);
    p.dist(Point::new(a.x + t * dx, a.y + t * dy))
}

fn rect_dist(p: Point, min: Point, max: Point) -> f64 {
    let dx = (min.x - p.x).max(p.x - max.x).max(0.0);
    let dy = (min.y - p.y).max(p.y - max.y).max(0.0);
    dx.hypot(dy)
}

/// Distance from p to the Cantor iterate of [a,b] at the given depth,
/// restricted to the x-axis coordinate; exact via recursion on the two thirds.
fn cantor_dist_x(px: f64, a: f64, b: f64, depth: u32, best: f64) -> f64 {
    // Prune: distance to the enclosing interval lower-bounds every descendant.
    let lower = (a - px).max(px - b).max(0.0);
    if lower >= best {
        return best;
    }
    if depth == 0 {
        return lower;
    }
    let third = (b - a) / 3.0;
    // Search the nearer child first so pruning bites.
    let (l0, l1) = (a, a + third);
    let (r0, r1) = (b - third, b);
    let mid = (a + b) / 2.0;
    let mut best = best;
    if px <= mid {
        best = cantor_dist_x(px, l0, l1, depth - 1, best);
        best = cantor_dist_x(px, r0, r1, depth - 1, best);
    } else {
        best = cantor_dist_x(px, r0, r1, depth - 1, best);
        best = cantor_dist_x(px, l0, l1, depth - 1, best);
    }
    best
}

impl Primitive {
    pub fn distance(&self, p: Point) -> f64 {
        match self {
            Primitive::Point { at } => p.dist(*at),
            Primitive::PointCloud { points } => points
                .iter()
                .map(|q| p.dist(*q))
                .fold(f64::INFINITY, f64::min),
            Primitive::Segment { a, b } => segment_dist(p, *a, *b),
            Primitive::Disk { center, radius } => (p.dist(*center) - radius).max(0.0),
            Primitive::DiskExterior { center, radius } => (radius - p.dist(*center)).max(0.0),
            Primitive::HalfPlane { normal, offset } => {
                // Set is { x : normal . x >= offset }; margin scales by |normal|.
                let n = (normal.x * normal.x + normal.y * normal.y).sqrt();
                ((offset - (normal.x * p.x + normal.y * p.y)) / n).max(0.0)
            }
            Primitive::Rect { min, max } => rect_dist(p, *min, *max),
            Primitive::RectExterior { min, max } => {
                let inside_x = p.x > min.x && p.x < max.x;
                let inside_y = p.y > min.y && p.y < max.y;
                if inside_x && inside_y {
                    (p.x - min.x)
                        .min(max.x - p.x)
                        .min(p.y - min.y)
                        .min(max.y - p.y)
                } else {
                    0.0
                }
            }
            Primitive::CantorIterate { a, b, y, depth } => {
                let dy = p.y - y;
                let dx = cantor_dist_x(p.x, *a, *b, *depth, f64::INFINITY);
                dx.hypot(dy)
            }
        }
    }

    /// Whether the set carries positive area (positive length in 1D); such
    /// sets have infinite singular integrals for any positive exponent.
    pub fn has_positive_measure(&self, dim: usize) -> bool {
        match self {
            Primitive::Point { .. } | Primitive::PointCloud { .. } => false,
            Primitive::Segment { .. } | Primitive::CantorIterate { .. } => dim == 1,
            Primitive::Disk { .. }
            | Primitive::DiskExterior { .. }
            | Primitive::HalfPlane { .. }
            | Primitive::Rect { .. }
            | Primitive::RectExterior { .. } => true,
        }
    }

    /// Points on the set at pitch <= spacing, clipped to bbox = (x0,x1,y0,y1).
    /// Used to seed greedy covers; density, not exactness, is what matters here.
    pub fn sample_points(&self, bbox: [f64; 4], spacing: f64) -> Vec<Point> {
        let clip = |pts: Vec<Point>| -> Vec<Point> {
            pts.into_iter()
                .filter(|p| {
                    p.x >= bbox[0] && p.x <= bbox[1] && p.y >= bbox[2] && p.y <= bbox[3]
                })
                .collect()
        };
        match self {
            Primitive::Point { at } => clip(vec![*at]),
            Primitive::PointCloud { points } => clip(points.clone()),
            Primitive::Segment { a, b } => {
                let len = a.dist(*b);
                let n = (len / spacing).ceil() as usize + 1;
                clip(
                    (0..=n)
                        .map(|i| {
                            let t = i as f64 / n as f64;
                            Point::new(a.x + t * (b.x - a.x), a.y + t * (b.y - a.y))
                        })
                        .collect(),
                )
            }
            Primitive::Disk { center, radius } => {
                let mut pts = area_samples(
                    [
                        center.x - radius,
                        center.x + radius,
                        center.y - radius,
                        center.y + radius,
                    ],
                    bbox,
                    spacing,
                    |p| p.dist(*center) <= *radius,
                );
                pts.push(*center);
                clip(pts)
            }
            Primitive::DiskExterior { center, radius } => {
                area_samples(bbox, bbox, spacing, |p| p.dist(*center) >= *radius)
            }
            Primitive::HalfPlane { normal, offset } => {
                area_samples(bbox, bbox, spacing, |p| {
                    normal.x * p.x + normal.y * p.y >= *offset
                })
            }
            Primitive::Rect { min, max } => area_samples(
                [min.x, max.x, min.y, max.y],
                bbox,
                spacing,
                |_| true,
            ),
            Primitive::RectExterior { min, max } => area_samples(bbox, bbox, spacing, |p| {
                !(p.x > min.x && p.x < max.x && p.y > min.y && p.y < max.y)
            }),
            Primitive::CantorIterate { a, b, y, depth } => {
                let levels = ((b - a) / spacing).log(3.0).ceil().max(0.0) as u32;
                let d = (*depth).min(levels + 1);
                let mut pts = Vec::new();
                cantor_intervals(*a, *b, d, &mut |ia, ib| {
                    let n = ((ib - ia) / spacing).ceil() as usize + 1;
                    for i in 0..=n {
                        pts.push(Point::new(ia + (ib - ia) * i as f64 / n as f64, *y));
                    }
                });
                clip(pts)
            }
        }
    }
}

fn cantor_intervals(a: f64, b: f64, depth: u32, f: &mut impl FnMut(f64, f64)) {
    if depth == 0 {
        f(a, b);
        return;
    }
    let third = (b - a) / 3.0;
    cantor_intervals(a, a + third, depth - 1, f);
    cantor_intervals(b - third, b, depth - 1, f);
}

fn area_samples(
    window: [f64; 4],
    bbox: [f64; 4],
    spacing: f64,
    inside: impl Fn(Point) -> bool,
) -> Vec<Point> {
    let x0 = window[0].max(bbox[0]);
    let x1 = window[1].min(bbox[1]);
    let y0 = window[2].max(bbox[2]);
    let y1 = window[3].min(bbox[3]);
    let mut pts = Vec::new();
    if x1 < x0 || y1 < y0 {
        return pts;
    }
    let nx = ((x1 - x0) / spacing).ceil() as usize;
    let ny = ((y1 - y0) / spacing).ceil() as usize;
    for j in 0..=ny {
        for i in 0..=nx {
            let p = Point::new(
                x0 + (x1 - x0) * i as f64 / nx.max(1) as f64,
                y0 + (y1 - y0) * j as f64 / ny.max(1) as f64,
            );
            if inside(p) {
                pts.push(p);
            }
        }
    }
    pts
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn segment_distance_endpoints_and_interior() {
        let a = Point::new(0.0, 0.0);
        let b = Point::new(1.0, 0.0);
        let s = Primitive::Segment { a, b };
        assert_eq!(s.distance(Point::new(0.5, 0.25)), 0.25);
        assert_eq!(s.distance(Point::new(-0.3, 0.4)), 0.5);
        assert_eq!(s.distance(Point::new(0.7, 0.0)), 0.0);
    }

    #[test]
    fn disk_and_exterior_partition_the_plane() {
        let c = Point::new(0.0, 0.0);
        let d = Primitive::Disk { center: c, radius: 1.0 };
        let e = Primitive::DiskExterior { center: c, radius: 1.0 };
        for p in [
            Point::new(0.3, 0.1),
            Point::new(1.5, 0.0),
            Point::new(0.0, 0.999),
            Point::new(-2.0, 2.0),
        ] {
            let r = p.dist(c);
            assert!((d.distance(p) - (r - 1.0).max(0.0)).abs() < 1e-15);
            assert!((e.distance(p) - (1.0 - r).max(0.0)).abs() < 1e-15);
        }
    }

    #[test]
    fn rect_exterior_is_inner_wall_distance() {
        let r = Primitive::RectExterior {
            min: Point::new(0.0, 0.0),
            max: Point::new(1.0, 2.0),
        };
        assert_eq!(r.distance(Point::new(0.25, 1.0)), 0.25);
        assert!((r.distance(Point::new(0.5, 1.9)) - 0.1).abs() < 1e-15);
        assert_eq!(r.distance(Point::new(1.5, 1.0)), 0.0);
        assert_eq!(r.distance(Point::new(1.0, 1.0)), 0.0);
    }

    #[test]
    fn cantor_iterate_matches_explicit_segments() {
        // Depth 2 on [0,1]: [0,1/9] u [2/9,3/9] u [6/9,7/9] u [8/9,1].
        let c = Primitive::CantorIterate { a: 0.0, b: 1.0, y: 0.0, depth: 2 };
        let segs = [
            (0.0, 1.0 / 9.0),
            (2.0 / 9.0, 3.0 / 9.0),
            (6.0 / 9.0, 7.0 / 9.0),
            (8.0 / 9.0, 1.0),
        ];
        for i in 0..200 {
            let p = Point::new(-0.1 + 1.2 * i as f64 / 199.0, 0.07);
            let expect = segs
                .iter()
                .map(|&(a, b)| {
                    segment_dist(p, Point::new(a, 0.0), Point::new(b, 0.0))
                })
                .fold(f64::INFINITY, f64::min);
            assert!((c.distance(p) - expect).abs() < 1e-12);
        }
    }

    #[test]
    fn half_plane_distance_is_signed_margin() {
        // { (x,y) : y >= 0 } via unnormalized normal.
        let hp = Primitive::HalfPlane {
            normal: Point::new(0.0, 2.0),
            offset: 0.0,
        };
        assert_eq!(hp.distance(Point::new(3.0, 0.5)), 0.0);
        assert!((hp.distance(Point::new(-1.0, -0.75)) - 0.75).abs() < 1e-15);
    }
}
