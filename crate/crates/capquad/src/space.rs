//! Grid domains, weighted measures, and scaling diagnostics.
//!
//! A domain is a box lattice together with an exact distance field to a
//! complement set given by geometry primitives. A node belongs to the domain
//! when its distance to the complement exceeds h/2 (ties go to the
//! complement). The measure is a node weight times h^dim; balls are Euclidean
//! node sets {y : |y - x| < r}.

use crate::error::{CapquadError, Result};
use crate::geometry::{Point, Primitive};
use serde::{Deserialize, Serialize};

/// Nodes within this many lattice steps of the box edge form the box collar;
/// coverage and chain diagnostics treat the box wall there as artificial.
pub const BOX_COLLAR_STEPS: usize = 4;

#[derive(Clone, Debug)]
pub struct GridDomain {
    pub dim: usize,
    /// Requested box [x0, x1, y0, y1]; y ignored in 1D.
    pub bbox: [f64; 4],
    pub h: f64,
    pub nx: usize,
    pub ny: usize,
    pub geometry: Vec<Primitive>,
    /// Node is inside the domain: exact complement distance > h/2.
    pub in_omega: Vec<bool>,
    /// Exact distance from each node to the complement geometry.
    pub dist: Vec<f64>,
    /// Node lies within BOX_COLLAR_STEPS lattice steps of the box edge.
    pub box_collar: Vec<bool>,
    /// Some interior node sits in the box collar: the box truncates the domain
    /// and its walls act as an artificial boundary there.
    pub artificial_boundary: bool,
    /// Largest complement distance over interior nodes.
    pub s0: f64,
    pub omega_count: usize,
}

impl GridDomain {
    pub fn build(dim: usize, bbox: [f64; 4], h: f64, geometry: Vec<Primitive>) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(CapquadError::InvalidDomain(format!("dim = {dim}")));
        }
        if !(h > 0.0) {
            return Err(CapquadError::InvalidDomain(format!("spacing h = {h}")));
        }
        if geometry.is_empty() {
            return Err(CapquadError::InvalidDomain(
                "complement geometry is empty".into(),
            ));
        }
        let axis_nodes = |a: f64, b: f64| -> Result<usize> {
            let steps = (b - a) / h;
            let n = steps.round();
            if (steps - n).abs() > 1e-6 || n < 0.0 {
                return Err(CapquadError::InvalidDomain(format!(
                    "box side [{a}, {b}] is not a multiple of h = {h}"
                )));
            }
            Ok(n as usize + 1)
        };
        let nx = axis_nodes(bbox[0], bbox[1])?;
        let ny = if dim == 2 { axis_nodes(bbox[2], bbox[3])? } else { 1 };
        let min_side = 2 * BOX_COLLAR_STEPS + 1;
        if nx < min_side || (dim == 2 && ny < min_side) {
            return Err(CapquadError::InvalidDomain(format!(
                "box admits no {BOX_COLLAR_STEPS}h collar at h = {h}"
            )));
        }

        let n = nx * ny;
        let mut dist = vec![0.0f64; n];
        let mut in_omega = vec![false; n];
        let mut box_collar = vec![false; n];
        let mut s0 = 0.0f64;
        let mut omega_count = 0usize;
        let mut artificial = false;
        for j in 0..ny {
            for i in 0..nx {
                let idx = j * nx + i;
                let p = Point::new(bbox[0] + i as f64 * h, bbox[2] + j as f64 * h);
                let p = if dim == 1 { Point::new(p.x, 0.0) } else { p };
                let d = geometry
                    .iter()
                    .map(|g| g.distance(p))
                    .fold(f64::INFINITY, f64::min);
                dist[idx] = d;
                let edge_steps = if dim == 2 {
                    i.min(nx - 1 - i).min(j).min(ny - 1 - j)
                } else {
                    i.min(nx - 1 - i)
                };
                box_collar[idx] = edge_steps < BOX_COLLAR_STEPS;
                if d > 0.5 * h {
                    in_omega[idx] = true;
                    omega_count += 1;
                    s0 = s0.max(d);
                    artificial |= box_collar[idx];
                }
            }
        }
        if omega_count == 0 {
            return Err(CapquadError::EmptyOmega { h });
        }
        Ok(GridDomain {
            dim,
            bbox,
            h,
            nx,
            ny,
            geometry,
            in_omega,
            dist,
            box_collar,
            artificial_boundary: artificial,
            s0,
            omega_count,
        })
    }

    pub fn node_count(&self) -> usize {
        self.nx * self.ny
    }

    pub fn node_point(&self, idx: usize) -> Point {
        let i = idx % self.nx;
        let j = idx / self.nx;
        Point::new(
            self.bbox[0] + i as f64 * self.h,
            if self.dim == 2 {
                self.bbox[2] + j as f64 * self.h
            } else {
                0.0
            },
        )
    }

    /// Box diameter at the resolved lattice extents.
    pub fn diam(&self) -> f64 {
        let wx = (self.nx - 1) as f64 * self.h;
        let wy = (self.ny - 1) as f64 * self.h;
        if self.dim == 2 {
            wx.hypot(wy)
        } else {
            wx
        }
    }

    /// Node indices (ascending) with |node - center| < r. All lattice nodes
    /// count: the measure lives on the whole box, not just the domain.
    pub fn ball_nodes(&self, center: Point, r: f64) -> Vec<u32> {
        let mut out = Vec::new();
        let (i0, i1) = self.axis_window(center.x, r, self.nx, self.bbox[0]);
        let (j0, j1) = if self.dim == 2 {
            self.axis_window(center.y, r, self.ny, self.bbox[2])
        } else {
            (0, 0)
        };
        for j in j0..=j1 {
            for i in i0..=i1 {
                let idx = j * self.nx + i;
                if self.node_point(idx).dist(center) < r {
                    out.push(idx as u32);
                }
            }
        }
        out
    }

    fn axis_window(&self, c: f64, r: f64, n: usize, origin: f64) -> (usize, usize) {
        let lo = ((c - r - origin) / self.h).floor().max(0.0) as usize;
        let hi = ((c + r - origin) / self.h).ceil().min((n - 1) as f64) as usize;
        (lo.min(n - 1), hi)
    }

    /// Index of the lattice node nearest the point, or None outside the box.
    pub fn nearest_node(&self, p: Point) -> Option<usize> {
        let i = ((p.x - self.bbox[0]) / self.h).round();
        if i < 0.0 || i > (self.nx - 1) as f64 {
            return None;
        }
        let j = if self.dim == 2 {
            let j = ((p.y - self.bbox[2]) / self.h).round();
            if j < 0.0 || j > (self.ny - 1) as f64 {
                return None;
            }
            j
        } else {
            0.0
        };
        Some(j as usize * self.nx + i as usize)
    }

    /// Whether the full Euclidean ball sits inside the lattice box.
    pub fn ball_inside_box(&self, center: Point, r: f64) -> bool {
        let x1 = self.bbox[0] + (self.nx - 1) as f64 * self.h;
        let mut ok = center.x - r >= self.bbox[0] && center.x + r <= x1;
        if self.dim == 2 {
            let y1 = self.bbox[2] + (self.ny - 1) as f64 * self.h;
            ok = ok && center.y - r >= self.bbox[2] && center.y + r <= y1;
        }
        ok
    }
}

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MeasureWeight {
    Lebesgue,
    /// w(x) = |x - center|^alpha with alpha > -dim; the radius is clamped
    /// below at h/2 so the singular node carries the mass of its half-cell.
    Power { center: Point, alpha: f64 },
}

impl MeasureWeight {
    pub fn validate(&self, dim: usize) -> Result<()> {
        if let MeasureWeight::Power { alpha, .. } = self {
            if *alpha <= -(dim as f64) {
                return Err(CapquadError::InvalidWeight {
                    alpha: *alpha,
                    min: -(dim as f64),
                });
            }
        }
        Ok(())
    }

    pub fn node_weight(&self, p: Point, h: f64) -> f64 {
        match self {
            MeasureWeight::Lebesgue => 1.0,
            MeasureWeight::Power { center, alpha } => {
                let r = p.dist(*center).max(0.5 * h);
                r.powf(*alpha)
            }
        }
    }
}

/// Weighted node mass over the given nodes; callers pass ascending indices so
/// the summation order (and hence the float result) is reproducible.
pub fn mass(domain: &GridDomain, weight: &MeasureWeight, nodes: &[u32]) -> f64 {
    let cell = domain.h.powi(domain.dim as i32);
    nodes
        .iter()
        .map(|&i| weight.node_weight(domain.node_point(i as usize), domain.h) * cell)
        .sum::<f64>()
}

pub fn node_weights(domain: &GridDomain, weight: &MeasureWeight) -> Vec<f64> {
    (0..domain.node_count())
        .map(|i| weight.node_weight(domain.node_point(i), domain.h))
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct SpaceProfile {
    pub dim: usize,
    /// Max of mu(2B)/mu(B) over the scanned balls.
    pub doubling_constant: f64,
    /// Largest per-center log-log mass slope: lower mass-decay exponent.
    pub q_lower: f64,
    /// Smallest per-center slope: upper mass-growth exponent.
    pub q_upper_mass: f64,
    pub fit_r_min: f64,
    pub fit_r_max: f64,
    pub samples: usize,
    pub skipped_centers: usize,
}

use crate::stats::ls_slope;

/// Measure doubling ratios and mass-scaling exponents over sample balls.
/// Radii must lie in [4h, diam/4]; balls reaching outside the box are skipped
/// (the truncated measure would fake non-doubling).
pub fn doubling_scan(
    domain: &GridDomain,
    weight: &MeasureWeight,
    centers: &[Point],
    radii: &[f64],
) -> Result<SpaceProfile> {
    weight.validate(domain.dim)?;
    let (r_lo, r_hi) = (4.0 * domain.h, domain.diam() / 4.0);
    for &r in radii {
        if r < r_lo || r > r_hi {
            return Err(CapquadError::UnresolvedRadius {
                radius: r,
                min: r_lo,
                max: r_hi,
            });
        }
    }
    let mut doubling: f64 = 0.0;
    let mut q_lower = f64::NEG_INFINITY;
    let mut q_upper = f64::INFINITY;
    let mut samples = 0usize;
    let mut skipped = 0usize;
    let mut used_r = (f64::INFINITY, f64::NEG_INFINITY);
    for &x in centers {
        let mut fit = Vec::new();
        for &r in radii {
            if !domain.ball_inside_box(x, 2.0 * r) {
                continue;
            }
            let m1 = mass(domain, weight, &domain.ball_nodes(x, r));
            let m2 = mass(domain, weight, &domain.ball_nodes(x, 2.0 * r));
            if m1 <= 0.0 {
                continue;
            }
            doubling = doubling.max(m2 / m1);
            fit.push((r.ln(), m1.ln()));
            used_r = (used_r.0.min(r), used_r.1.max(r));
            samples += 1;
        }
        if fit.len() >= 2 {
            let s = ls_slope(&fit);
            q_lower = q_lower.max(s);
            q_upper = q_upper.min(s);
        } else {
            skipped += 1;
        }
    }
    if samples == 0 {
        return Err(CapquadError::InvalidDomain(
            "no doubling sample ball fits inside the box".into(),
        ));
    }
    Ok(SpaceProfile {
        dim: domain.dim,
        doubling_constant: doubling,
        q_lower,
        q_upper_mass: q_upper,
        fit_r_min: used_r.0,
        fit_r_max: used_r.1,
        samples,
        skipped_centers: skipped,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct QDiagnostic {
    pub q: f64,
    /// Worst per-center growth slope of log(normalized integral) in log r.
    pub slope: f64,
    pub max_over_median: f64,
    pub pass: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct AikawaEstimate {
    /// Largest grid exponent whose normalized singular integral stays stable.
    pub q_star: f64,
    /// Set has positive measure: the integral is infinite for every q > 0.
    pub infinite: bool,
    /// No grid exponent passed the stability test.
    pub none_passed: bool,
    pub diagnostics: Vec<QDiagnostic>,
}

/// Growth test bounds: the normalized integral r^q mu(B)^-1 int_B dist^-q may
/// drift this much in log-log slope, and its max may exceed the median by
/// this factor, before q is declared unstable.
pub const AIKAWA_SLOPE_TOL: f64 = 0.05;
pub const AIKAWA_RATIO_TOL: f64 = 10.0;

/// Estimate the largest q with sup_B r^q mu(B)^-1 int_B dist(y,E)^-q dmu
/// bounded, scanning sample balls centered on E. Distances are clamped below
/// at h/2 (cells straddling E carry their half-cell value).
pub fn aikawa_codim_estimate(
    domain: &GridDomain,
    weight: &MeasureWeight,
    e_geometry: &[Primitive],
    q_grid: &[f64],
    centers: &[Point],
    radii: &[f64],
) -> Result<AikawaEstimate> {
    weight.validate(domain.dim)?;
    if e_geometry.is_empty() || q_grid.is_empty() {
        return Err(CapquadError::EmptyProbeSet);
    }
    if e_geometry
        .iter()
        .any(|g| g.has_positive_measure(domain.dim))
    {
        return Ok(AikawaEstimate {
            q_star: 0.0,
            infinite: true,
            none_passed: false,
            diagnostics: Vec::new(),
        });
    }
    let r_lo = 4.0 * domain.h;
    for &r in radii {
        if r < r_lo {
            return Err(CapquadError::UnresolvedRadius {
                radius: r,
                min: r_lo,
                max: domain.diam(),
            });
        }
    }
    // Distance to E over the box, clamped at the half-cell.
    let dist_e: Vec<f64> = (0..domain.node_count())
        .map(|i| {
            let p = domain.node_point(i);
            e_geometry
                .iter()
                .map(|g| g.distance(p))
                .fold(f64::INFINITY, f64::min)
                .max(0.5 * domain.h)
        })
        .collect();
    let cell = domain.h.powi(domain.dim as i32);

    let mut diagnostics = Vec::new();
    for &q in q_grid {
        let mut slope_worst = f64::NEG_INFINITY;
        let mut values = Vec::new();
        for &x in centers {
            let mut fit = Vec::new();
            for &r in radii {
                if !domain.ball_inside_box(x, r) {
                    continue;
                }
                let ball = domain.ball_nodes(x, r);
                let mu = mass(domain, weight, &ball);
                if mu <= 0.0 {
                    continue;
                }
                let integral: f64 = ball
                    .iter()
                    .map(|&i| {
                        let p = domain.node_point(i as usize);
                        dist_e[i as usize].powf(-q) * weight.node_weight(p, domain.h) * cell
                    })
                    .sum();
                let normalized = r.powf(q) * integral / mu;
                fit.push((r.ln(), normalized.ln()));
                values.push(normalized);
            }
            if fit.len() >= 2 {
                slope_worst = slope_worst.max(ls_slope(&fit));
            }
        }
        if values.is_empty() {
            return Err(CapquadError::EmptyProbeSet);
        }
        let median = crate::stats::median(&values);
        let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let pass = slope_worst <= AIKAWA_SLOPE_TOL && max <= AIKAWA_RATIO_TOL * median;
        diagnostics.push(QDiagnostic {
            q,
            slope: slope_worst,
            max_over_median: max / median,
            pass,
        });
    }
    let q_star = diagnostics
        .iter()
        .filter(|d| d.pass)
        .map(|d| d.q)
        .fold(f64::NEG_INFINITY, f64::max);
    let none = !q_star.is_finite();
    Ok(AikawaEstimate {
        q_star: if none { 0.0 } else { q_star },
        infinite: false,
        none_passed: none,
        diagnostics,
    })
}

/// One scale of a greedy covering of E by balls of radius `scale`, and the
/// q-codimensional content sum rad^-q mu(B) over the chosen balls.
pub fn hausdorff_content(
    domain: &GridDomain,
    weight: &MeasureWeight,
    e_geometry: &[Primitive],
    q: f64,
    scale: f64,
) -> Result<(f64, usize)> {
    if scale < 2.0 * domain.h {
        return Err(CapquadError::UnresolvedRadius {
            radius: scale,
            min: 2.0 * domain.h,
            max: domain.diam(),
        });
    }
    let mut samples: Vec<Point> = e_geometry
        .iter()
        .flat_map(|g| g.sample_points(domain.bbox, scale / 2.0))
        .collect();
    if samples.is_empty() {
        return Err(CapquadError::EmptyProbeSet);
    }
    samples.sort_by(|a, b| (a.x, a.y).partial_cmp(&(b.x, b.y)).unwrap());
    // Greedy maximal scale-separated subset via a bucket grid; every sample
    // ends up within < scale of a chosen center, so the scale-balls cover E.
    let inv = 1.0 / scale;
    let key = |p: Point| ((p.x * inv).floor() as i64, (p.y * inv).floor() as i64);
    let mut buckets: std::collections::HashMap<(i64, i64), Vec<Point>> =
        std::collections::HashMap::new();
    let mut centers: Vec<Point> = Vec::new();
    'next: for &p in &samples {
        let (bi, bj) = key(p);
        for di in -1..=1 {
            for dj in -1..=1 {
                if let Some(v) = buckets.get(&(bi + di, bj + dj)) {
                    if v.iter().any(|c| c.dist(p) < scale) {
                        continue 'next;
                    }
                }
            }
        }
        buckets.entry((bi, bj)).or_default().push(p);
        centers.push(p);
    }
    let content: f64 = centers
        .iter()
        .map(|&c| scale.powf(-q) * mass(domain, weight, &domain.ball_nodes(c, scale)))
        .sum();
    Ok((content, centers.len()))
}

#[derive(Clone, Debug, Serialize)]
pub struct ContentTrend {
    pub q: f64,
    /// Least-squares slope of log content against log scale; positive means
    /// the content vanishes as the scale shrinks.
    pub slope: f64,
    pub contents: Vec<(f64, f64)>,
}

#[derive(Clone, Debug, Serialize)]
pub struct HausdorffBracket {
    /// Largest grid q with clearly vanishing content (codim >= q_low).
    pub q_low: f64,
    /// Smallest grid q with clearly exploding content (codim <= q_high).
    pub q_high: Option<f64>,
    pub trends: Vec<ContentTrend>,
}

pub fn hausdorff_codim_bracket(
    domain: &GridDomain,
    weight: &MeasureWeight,
    e_geometry: &[Primitive],
    q_grid: &[f64],
    scales: &[f64],
) -> Result<HausdorffBracket> {
    let mut trends = Vec::new();
    for &q in q_grid {
        let mut pts = Vec::new();
        let mut contents = Vec::new();
        for &s in scales {
            let (c, _) = hausdorff_content(domain, weight, e_geometry, q, s)?;
            pts.push((s.ln(), c.ln()));
            contents.push((s, c));
        }
        trends.push(ContentTrend {
            q,
            slope: ls_slope(&pts),
            contents,
        });
    }
    let q_low = trends
        .iter()
        .filter(|t| t.slope >= 0.05)
        .map(|t| t.q)
        .fold(0.0f64, f64::max);
    let q_high = trends
        .iter()
        .filter(|t| t.slope <= -0.05)
        .map(|t| t.q)
        .fold(f64::INFINITY, f64::min);
    Ok(HausdorffBracket {
        q_low,
        q_high: if q_high.is_finite() { Some(q_high) } else { None },
        trends,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn unit_interval(h: f64) -> GridDomain {
        GridDomain::build(
            1,
            [0.0, 1.0, 0.0, 0.0],
            h,
            vec![
                Primitive::Point { at: Point::new(0.0, 0.0) },
                Primitive::Point { at: Point::new(1.0, 0.0) },
            ],
        )
        .unwrap()
    }

    #[test]
    fn interval_masks_boundary_nodes() {
        // h = 0.25 on (0,1): interior nodes exactly at 0.25, 0.5, 0.75.
        let d = GridDomain::build(
            1,
            [0.0, 1.0, 0.0, 0.0],
            0.125,
            vec![
                Primitive::Point { at: Point::new(0.0, 0.0) },
                Primitive::Point { at: Point::new(1.0, 0.0) },
            ],
        )
        .unwrap();
        let interior: Vec<f64> = (0..d.node_count())
            .filter(|&i| d.in_omega[i])
            .map(|i| d.node_point(i).x)
            .collect();
        assert_eq!(interior.len(), 7);
        assert!((interior[0] - 0.125).abs() < 1e-12);
        assert!((d.s0 - 0.5).abs() < 1e-12);
    }

    #[test]
    fn half_h_tie_goes_to_complement() {
        // Complement point at 0.0625 = h/2 from the node at 0.125: masked out.
        let d = GridDomain::build(
            1,
            [0.0, 1.0, 0.0, 0.0],
            0.125,
            vec![
                Primitive::Point { at: Point::new(0.1875, 0.0) },
                Primitive::Point { at: Point::new(1.0, 0.0) },
            ],
        )
        .unwrap();
        let node = (0.125 / d.h).round() as usize;
        assert!((d.dist[node] - d.h / 2.0).abs() < 1e-15);
        assert!(!d.in_omega[node]);
    }

    #[test]
    fn distance_field_is_lipschitz_on_edges() {
        let d = GridDomain::build(
            2,
            [-1.0, 1.0, -1.0, 1.0],
            0.05,
            vec![
                Primitive::DiskExterior { center: Point::new(0.0, 0.0), radius: 1.0 },
                Primitive::Point { at: Point::new(0.0, 0.0) },
            ],
        )
        .unwrap();
        let mut worst = 0.0f64;
        for j in 0..d.ny {
            for i in 0..d.nx {
                let idx = j * d.nx + i;
                if i + 1 < d.nx {
                    worst = worst.max((d.dist[idx] - d.dist[idx + 1]).abs() - d.h);
                }
                if j + 1 < d.ny {
                    worst = worst.max((d.dist[idx] - d.dist[idx + d.nx]).abs() - d.h);
                }
            }
        }
        // Closed-form distances: any excess over h is float dust.
        assert!(worst <= 1e-12, "lipschitz excess {worst}");
    }

    #[test]
    fn punctured_disk_masks_origin() {
        let d = GridDomain::build(
            2,
            [-1.0, 1.0, -1.0, 1.0],
            0.1,
            vec![
                Primitive::DiskExterior { center: Point::new(0.0, 0.0), radius: 1.0 },
                Primitive::Point { at: Point::new(0.0, 0.0) },
            ],
        )
        .unwrap();
        let center = (d.ny / 2) * d.nx + d.nx / 2;
        assert_eq!(d.node_point(center), Point::new(0.0, 0.0));
        assert!(!d.in_omega[center]);
        // Neighbor at distance h from the puncture is interior.
        assert!(d.in_omega[center + 1]);
    }

    #[test]
    fn empty_domain_is_an_error() {
        let err = GridDomain::build(
            2,
            [0.0, 1.0, 0.0, 1.0],
            0.1,
            vec![Primitive::Rect {
                min: Point::new(-1.0, -1.0),
                max: Point::new(2.0, 2.0),
            }],
        )
        .unwrap_err();
        assert!(matches!(err, CapquadError::EmptyOmega { .. }));
    }

    #[test]
    fn power_weight_validates_alpha() {
        let w = MeasureWeight::Power { center: Point::new(0.0, 0.0), alpha: -2.0 };
        assert!(w.validate(2).is_err());
        let w = MeasureWeight::Power { center: Point::new(0.0, 0.0), alpha: -1.5 };
        assert!(w.validate(2).is_ok());
    }

    #[test]
    fn mass_is_additive_over_disjoint_node_sets() {
        let d = unit_interval(0.01);
        let w = MeasureWeight::Lebesgue;
        let all: Vec<u32> = (0..d.node_count() as u32).collect();
        let (left, right): (Vec<u32>, Vec<u32>) =
            all.iter().partition(|&&i| (i as usize) < d.node_count() / 2);
        let total = mass(&d, &w, &all);
        assert!((mass(&d, &w, &left) + mass(&d, &w, &right) - total).abs() < 1e-12);
        // Unit interval at pitch h: 101 nodes of mass h.
        assert!((total - 1.01).abs() < 1e-12);
    }

    #[test]
    fn doubling_rejects_unresolved_radius() {
        let d = unit_interval(0.01);
        let err = doubling_scan(
            &d,
            &MeasureWeight::Lebesgue,
            &[Point::new(0.5, 0.0)],
            &[0.02],
        )
        .unwrap_err();
        assert!(matches!(err, CapquadError::UnresolvedRadius { .. }));
    }

    #[test]
    fn lebesgue_doubling_in_2d_is_near_4() {
        let d = GridDomain::build(
            2,
            [-1.0, 1.0, -1.0, 1.0],
            1.0 / 64.0,
            vec![Primitive::DiskExterior { center: Point::new(0.0, 0.0), radius: 1.0 }],
        )
        .unwrap();
        let centers = [Point::new(0.0, 0.0), Point::new(0.25, -0.125)];
        let radii = [0.125, 0.25];
        let prof = doubling_scan(&d, &MeasureWeight::Lebesgue, &centers, &radii).unwrap();
        assert!((prof.doubling_constant - 4.0).abs() < 0.2, "{prof:?}");
        assert!((prof.q_lower - 2.0).abs() < 0.1);
        assert!((prof.q_upper_mass - 2.0).abs() < 0.1);
        assert!(prof.q_upper_mass <= prof.q_lower);
    }
}
