//! Whitney-type ball covers and discrete John chains.
//!
//! The cover packs each dyadic distance shell A_k = {x : d(x)/s0 in
//! [2^(-k-1), 2^(-k))} with a greedy maximal separated subset of lattice nodes
//! (lexicographic order, separation c * 2^(-k-1) * s0) and attaches the ball
//! B(x, max(c*d(x), 1.25h)) to every chosen center. Maximality makes the
//! balls cover the shell; the separation keeps the overlap bounded. Flooring
//! the radius just above the pitch keeps every ball a nondegenerate node set
//! (the center plus its axis neighbors; balls are open, so a radius of
//! exactly h would hold a single node); without the floor, shells with
//! c * depth < h collapse to singletons and the overlap constant jumps
//! between refinement levels instead of settling.

use crate::error::{CapquadError, Result};
use crate::geometry::Point;
use crate::space::GridDomain;
use serde::Serialize;
use std::collections::HashMap;

#[derive(Clone, Debug, Serialize)]
pub struct WhitneyBall {
    pub id: u32,
    /// Lattice index of the center node.
    pub center_idx: u32,
    pub center: Point,
    pub radius: f64,
    pub shell_k: i32,
}

#[derive(Clone, Debug, Serialize)]
pub struct WhitneyCover {
    pub c: f64,
    pub s0: f64,
    pub balls: Vec<WhitneyBall>,
    /// In-domain nodes with d >= 4h covered by no ball (0 after a successful
    /// build; the collar below 4h is exempt by construction).
    pub coverage_defect: usize,
    pub overlap_max: u32,
    /// Deepest shell index that was packed (largest balls).
    pub k_min: i32,
    /// Shallowest packed shell (bottom >= 2h keeps balls resolved).
    pub k_max: i32,
    /// Separation was halved once to repair a coverage defect.
    pub halved: bool,
}

/// Shell index of a normalized depth t = d/s0 in (0, 1]: the k with
/// t in [2^(-k-1), 2^(-k)). The deepest node (t = 1) lands in k = -1.
fn shell_index(t: f64) -> i32 {
    let mut k = (-t.log2()).floor() as i32;
    // Exact powers of two sit on the closed lower edge of the shallower shell.
    if t >= 0.5f64.powi(k) {
        k -= 1;
    }
    k
}

impl WhitneyCover {
    pub fn ball(&self, id: u32) -> &WhitneyBall {
        &self.balls[id as usize]
    }

    /// Ids of balls intersecting the given ball (including itself).
    pub fn intersecting(&self, id: u32, index: &CoverIndex) -> Vec<u32> {
        let b = self.ball(id);
        index.balls_near(self, b.center, b.radius, |other| {
            b.center.dist(other.center) < b.radius + other.radius
        })
    }

    /// The ball charged with a point under the partition rule: the smallest
    /// containing ball, ties broken by id. None inside the uncovered collar.
    pub fn owner_of(&self, p: Point, index: &CoverIndex) -> Option<u32> {
        index
            .balls_near(self, p, 0.0, |b| p.dist(b.center) < b.radius)
            .into_iter()
            .min_by(|&x, &y| {
                let (bx, by) = (&self.balls[x as usize], &self.balls[y as usize]);
                bx.radius.partial_cmp(&by.radius).unwrap().then(x.cmp(&y))
            })
    }

    /// Ids of balls whose closure meets the given node set.
    pub fn balls_meeting_nodes(
        &self,
        domain: &GridDomain,
        nodes: &[u32],
        index: &CoverIndex,
    ) -> Vec<u32> {
        let mut hit = vec![false; self.balls.len()];
        for &n in nodes {
            let p = domain.node_point(n as usize);
            for id in index.balls_near(self, p, 0.0, |b| p.dist(b.center) < b.radius) {
                hit[id as usize] = true;
            }
        }
        (0..self.balls.len() as u32).filter(|&i| hit[i as usize]).collect()
    }
}

/// Bucket index over ball centers, one grid per shell so query windows match
/// ball sizes.
pub struct CoverIndex {
    shells: Vec<(i32, f64, HashMap<(i64, i64), Vec<u32>>)>,
    max_radius_per_shell: Vec<f64>,
}

impl CoverIndex {
    pub fn build(cover: &WhitneyCover) -> CoverIndex {
        let mut by_shell: HashMap<i32, Vec<u32>> = HashMap::new();
        for b in &cover.balls {
            by_shell.entry(b.shell_k).or_default().push(b.id);
        }
        let mut keys: Vec<i32> = by_shell.keys().copied().collect();
        keys.sort();
        let mut shells = Vec::new();
        let mut max_radius = Vec::new();
        for k in keys {
            let ids = &by_shell[&k];
            let rmax = ids
                .iter()
                .map(|&i| cover.balls[i as usize].radius)
                .fold(0.0f64, f64::max);
            let cell = rmax.max(1e-12);
            let mut grid: HashMap<(i64, i64), Vec<u32>> = HashMap::new();
            for &i in ids {
                let c = cover.balls[i as usize].center;
                let key = ((c.x / cell).floor() as i64, (c.y / cell).floor() as i64);
                grid.entry(key).or_default().push(i);
            }
            shells.push((k, cell, grid));
            max_radius.push(rmax);
        }
        CoverIndex {
            shells,
            max_radius_per_shell: max_radius,
        }
    }

    /// Ball ids within reach + their own radius of the point, filtered by the
    /// predicate, ascending id order.
    fn balls_near(
        &self,
        cover: &WhitneyCover,
        p: Point,
        reach: f64,
        pred: impl Fn(&WhitneyBall) -> bool,
    ) -> Vec<u32> {
        let mut out = Vec::new();
        for ((_, cell, grid), rmax) in self.shells.iter().zip(&self.max_radius_per_shell) {
            let range = reach + rmax;
            let (i0, i1) = (
                ((p.x - range) / cell).floor() as i64,
                ((p.x + range) / cell).floor() as i64,
            );
            let (j0, j1) = (
                ((p.y - range) / cell).floor() as i64,
                ((p.y + range) / cell).floor() as i64,
            );
            for j in j0..=j1 {
                for i in i0..=i1 {
                    if let Some(ids) = grid.get(&(i, j)) {
                        for &id in ids {
                            if pred(&cover.balls[id as usize]) {
                                out.push(id);
                            }
                        }
                    }
                }
            }
        }
        out.sort_unstable();
        out.dedup();
        out
    }
}

pub fn build_cover(domain: &GridDomain, c: f64) -> Result<WhitneyCover> {
    if !(c > 0.0 && c <= 0.5) {
        return Err(CapquadError::InvalidCoverParam { c });
    }
    for attempt in 0..2 {
        let sep_scale = if attempt == 0 { 1.0 } else { 0.5 };
        let cover = pack(domain, c, sep_scale)?;
        if cover.coverage_defect == 0 {
            return Ok(cover);
        }
        if attempt == 1 {
            return Err(CapquadError::CoverageDefect {
                count: cover.coverage_defect,
            });
        }
    }
    unreachable!()
}

fn pack(domain: &GridDomain, c: f64, sep_scale: f64) -> Result<WhitneyCover> {
    let s0 = domain.s0;
    let h = domain.h;
    // Shells with bottom below 2h would carry balls smaller than the lattice
    // pitch; nodes that deep sit in the exempt collar anyway.
    let mut nodes_by_shell: HashMap<i32, Vec<u32>> = HashMap::new();
    for idx in 0..domain.node_count() {
        if !domain.in_omega[idx] {
            continue;
        }
        let d = domain.dist[idx];
        let k = shell_index(d / s0);
        if 0.5f64.powi(k + 1) * s0 >= 2.0 * h {
            nodes_by_shell.entry(k).or_default().push(idx as u32);
        }
    }
    let mut shell_keys: Vec<i32> = nodes_by_shell.keys().copied().collect();
    shell_keys.sort();

    let mut balls: Vec<WhitneyBall> = Vec::new();
    for &k in &shell_keys {
        let bottom = 0.5f64.powi(k + 1) * s0;
        let sep = sep_scale * c * bottom;
        let cell = sep.max(1e-12);
        let mut grid: HashMap<(i64, i64), Vec<Point>> = HashMap::new();
        // Node indices ascend in (y, x): deterministic greedy order.
        'next: for &idx in &nodes_by_shell[&k] {
            let p = domain.node_point(idx as usize);
            let (bi, bj) = ((p.x / cell).floor() as i64, (p.y / cell).floor() as i64);
            for dj in -1..=1 {
                for di in -1..=1 {
                    if let Some(pts) = grid.get(&(bi + di, bj + dj)) {
                        if pts.iter().any(|q| q.dist(p) < sep) {
                            continue 'next;
                        }
                    }
                }
            }
            grid.entry((bi, bj)).or_default().push(p);
            balls.push(WhitneyBall {
                id: balls.len() as u32,
                center_idx: idx,
                center: p,
                // Floored just above the pitch; shells keep bottom >= 2h and
                // dist is 1-Lipschitz, so every covered node stays in Omega.
                radius: (c * domain.dist[idx as usize]).max(1.25 * h),
                shell_k: k,
            });
        }
    }

    // Exact pointwise multiplicity by rasterizing every ball.
    let mut multiplicity = vec![0u32; domain.node_count()];
    for b in &balls {
        for idx in domain.ball_nodes(b.center, b.radius) {
            multiplicity[idx as usize] += 1;
        }
    }
    let mut defect = 0usize;
    let mut overlap = 0u32;
    for idx in 0..domain.node_count() {
        if domain.in_omega[idx] {
            overlap = overlap.max(multiplicity[idx]);
            if domain.dist[idx] >= 4.0 * h && multiplicity[idx] == 0 {
                defect += 1;
            }
        }
    }
    Ok(WhitneyCover {
        c,
        s0,
        k_min: shell_keys.first().copied().unwrap_or(0),
        k_max: shell_keys.last().copied().unwrap_or(0),
        balls,
        coverage_defect: defect,
        overlap_max: overlap,
        halved: sep_scale < 1.0,
    })
}

/// Exact max pointwise multiplicity of the dilated family {L * B_i}, with a
/// flag when (L, c) sit outside the regime that guarantees a bound.
pub fn dilated_overlap(domain: &GridDomain, cover: &WhitneyCover, l: f64) -> (u32, bool) {
    let mut multiplicity = vec![0u32; domain.node_count()];
    for b in &cover.balls {
        for idx in domain.ball_nodes(b.center, l * b.radius) {
            multiplicity[idx as usize] += 1;
        }
    }
    let max = multiplicity.iter().copied().max().unwrap_or(0);
    let outside_hypothesis = !(l >= 1.0 && cover.c <= 1.0 / (3.0 * l));
    (max, outside_hypothesis)
}

#[derive(Clone, Debug, Serialize)]
pub struct JohnChain {
    pub ball_ids: Vec<u32>,
    /// Per-step geometric radius growth (r_last / r_first)^(1/steps).
    pub fitted_a: f64,
    /// Largest C with rad(B_m) >= C * fitted_a^m * rad(B_0) along this chain.
    pub fitted_c: f64,
    /// Chain stopped at the top shell of a finite box; the infinite tail is
    /// not certifiable.
    pub truncated: bool,
}

#[derive(Clone, Debug)]
pub struct ChainFailure {
    pub blocking_ball: u32,
    pub reason: String,
}

/// Greedy max-radius ascent through the intersection graph: each step moves to
/// the largest intersecting ball that still contains B_0 in its L-dilate.
/// Succeeds on reaching the deepest shell (or max_len steps of growth).
pub fn find_john_chain(
    cover: &WhitneyCover,
    index: &CoverIndex,
    start: u32,
    l: f64,
    max_len: usize,
) -> std::result::Result<JohnChain, ChainFailure> {
    let b0 = cover.ball(start);
    let mut chain = vec![start];
    let mut current = start;
    while chain.len() <= max_len {
        let cur = cover.ball(current);
        if cur.shell_k <= cover.k_min {
            break;
        }
        let candidates = cover.intersecting(current, index);
        let mut best: Option<&WhitneyBall> = None;
        for id in candidates {
            let cand = cover.ball(id);
            if cand.radius <= cur.radius || id == current {
                continue;
            }
            // B_0 subset of L*cand:
            if b0.center.dist(cand.center) + b0.radius > l * cand.radius {
                continue;
            }
            let better = match best {
                None => true,
                Some(b) => {
                    cand.radius > b.radius || (cand.radius == b.radius && cand.id < b.id)
                }
            };
            if better {
                best = Some(cand);
            }
        }
        match best {
            Some(b) => {
                chain.push(b.id);
                current = b.id;
            }
            None => {
                return Err(ChainFailure {
                    blocking_ball: current,
                    reason: "no intersecting larger ball keeps the start inside its L-dilate"
                        .into(),
                });
            }
        }
    }
    let m = chain.len() - 1;
    let (fitted_a, fitted_c) = if m == 0 {
        (1.0, 1.0)
    } else {
        let r0 = b0.radius;
        let rm = cover.ball(chain[m]).radius;
        let a = (rm / r0).powf(1.0 / m as f64);
        let c = chain
            .iter()
            .enumerate()
            .map(|(j, &id)| cover.ball(id).radius / (a.powi(j as i32) * r0))
            .fold(f64::INFINITY, f64::min);
        (a, c)
    };
    Ok(JohnChain {
        ball_ids: chain,
        fitted_a,
        fitted_c,
        truncated: true,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct JohnReport {
    pub l: f64,
    pub a_required: f64,
    pub c_required: f64,
    /// Fraction of examined balls with a chain meeting the (a, C, L) demands.
    pub fraction_valid: f64,
    pub examined: usize,
    /// Balls skipped: radius under 2h (sub-lattice intersections unreliable).
    pub exempt_unresolved: usize,
    /// Balls skipped: center inside the box collar (artificial wall).
    pub exempt_collar: usize,
    /// Worst offenders (ball id, blocking ball or shortfall), capped.
    pub offenders: Vec<(u32, String)>,
}

pub fn john_condition_report(
    domain: &GridDomain,
    cover: &WhitneyCover,
    a: f64,
    l: f64,
    c_required: f64,
    max_len: usize,
) -> JohnReport {
    let index = CoverIndex::build(cover);
    let mut examined = 0usize;
    let mut valid = 0usize;
    let mut exempt_unresolved = 0usize;
    let mut exempt_collar = 0usize;
    let mut offenders = Vec::new();
    for b in &cover.balls {
        if b.radius < 2.0 * domain.h {
            exempt_unresolved += 1;
            continue;
        }
        if domain.box_collar[b.center_idx as usize] {
            exempt_collar += 1;
            continue;
        }
        examined += 1;
        match find_john_chain(cover, &index, b.id, l, max_len) {
            Ok(chain) => {
                let m = chain.ball_ids.len() - 1;
                // rad(B_m) >= C a^m rad(B_0) for every prefix with the given
                // constants; chains of length 0 start in the top shell.
                let ok = chain.ball_ids.iter().enumerate().all(|(j, &id)| {
                    cover.ball(id).radius
                        >= c_required * a.powi(j as i32) * b.radius * (1.0 - 1e-12)
                });
                if ok && (m > 0 || cover.ball(*chain.ball_ids.last().unwrap()).shell_k <= cover.k_min)
                {
                    valid += 1;
                } else if offenders.len() < 20 {
                    offenders.push((b.id, format!("growth below a = {a} with C = {c_required}")));
                }
            }
            Err(f) => {
                if offenders.len() < 20 {
                    offenders.push((b.id, format!("dead end at ball {}", f.blocking_ball)));
                }
            }
        }
    }
    JohnReport {
        l,
        a_required: a,
        c_required,
        fraction_valid: if examined == 0 {
            1.0
        } else {
            valid as f64 / examined as f64
        },
        examined,
        exempt_unresolved,
        exempt_collar,
        offenders,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Primitive;

    fn interval(h: f64) -> GridDomain {
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
    fn shell_index_brackets_dyadically() {
        assert_eq!(shell_index(1.0), -1);
        assert_eq!(shell_index(0.75), 0);
        assert_eq!(shell_index(0.5), 0);
        assert_eq!(shell_index(0.49), 1);
        assert_eq!(shell_index(0.25), 1);
        assert_eq!(shell_index(0.125), 2);
    }

    #[test]
    fn interval_cover_has_small_overlap() {
        // Fine 1D interval at c = 1/4: hand-counting the packing of each shell
        // (separation = shell bottom / 4, radii in [bottom/4, bottom/2)) gives
        // pointwise multiplicity 4 for ideal center positions; rounding
        // centers to lattice nodes admits one extra ball where shells meet.
        let d = interval(1.0 / 1024.0);
        let cover = build_cover(&d, 0.25).unwrap();
        assert_eq!(cover.coverage_defect, 0);
        assert!(!cover.halved);
        assert!(
            (2..=5).contains(&cover.overlap_max),
            "overlap {}",
            cover.overlap_max
        );
        for b in &cover.balls {
            assert!(b.radius > 0.0);
            assert!(d.in_omega[b.center_idx as usize]);
            // B subset of the domain: radius stays below the center depth.
            assert!(b.radius < d.dist[b.center_idx as usize]);
        }
    }

    #[test]
    fn no_ball_falls_below_the_pitch() {
        let d = GridDomain::build(
            2,
            [-1.125, 1.125, -1.125, 1.125],
            1.0 / 24.0,
            vec![
                Primitive::DiskExterior { center: Point::new(0.0, 0.0), radius: 1.0 },
                Primitive::Point { at: Point::new(0.0, 0.0) },
            ],
        )
        .unwrap();
        let cover = build_cover(&d, 1.0 / 12.0).unwrap();
        // At c = 1/12 and h = 1/24 every depth below 0.5 would give c*d < h;
        // the floor keeps those balls at 1.25h (5 nodes), never smaller.
        for b in &cover.balls {
            assert!(b.radius >= 1.25 * d.h - 1e-12, "ball {} radius {}", b.id, b.radius);
            assert!(d.ball_nodes(b.center, b.radius).len() >= 5);
        }
    }

    #[test]
    fn cover_rejects_bad_c() {
        let d = interval(1.0 / 64.0);
        assert!(matches!(
            build_cover(&d, 0.0),
            Err(CapquadError::InvalidCoverParam { .. })
        ));
        assert!(matches!(
            build_cover(&d, 0.6),
            Err(CapquadError::InvalidCoverParam { .. })
        ));
    }

    #[test]
    fn radius_comparability_inside_each_ball() {
        let d = GridDomain::build(
            2,
            [-1.0, 1.0, -1.0, 1.0],
            1.0 / 32.0,
            vec![Primitive::DiskExterior { center: Point::new(0.0, 0.0), radius: 1.0 }],
        )
        .unwrap();
        let cover = build_cover(&d, 0.25).unwrap();
        let (lo, hi) = (1.0 / cover.c - 1.0, 1.0 / cover.c + 1.0);
        for b in &cover.balls {
            if b.radius <= 1.25 * d.h {
                continue; // pitch-floored ball: radius decoupled from c * d
            }
            for idx in d.ball_nodes(b.center, b.radius) {
                let ratio = d.dist[idx as usize] / b.radius;
                assert!(
                    ratio > lo - 1e-9 && ratio < hi + 1e-9,
                    "d/rad = {ratio} outside [{lo}, {hi}]"
                );
            }
        }
    }

    #[test]
    fn overlap_stable_under_refinement() {
        let overlaps: Vec<u32> = [1.0 / 64.0, 1.0 / 128.0, 1.0 / 256.0]
            .iter()
            .map(|&h| build_cover(&interval(h), 0.25).unwrap().overlap_max)
            .collect();
        let spread = overlaps.iter().max().unwrap() - overlaps.iter().min().unwrap();
        assert!(spread <= 1, "overlaps {overlaps:?}");
    }

    #[test]
    fn dilated_overlap_flags_hypothesis() {
        let d = interval(1.0 / 256.0);
        let fine = build_cover(&d, 1.0 / 12.0).unwrap();
        let (m4, outside) = dilated_overlap(&d, &fine, 4.0);
        assert!(!outside, "c = 1/12 satisfies c <= 1/(3L) at L = 4");
        assert!(m4 >= fine.overlap_max && m4 <= 30, "dilated overlap {m4}");
        let coarse = build_cover(&d, 0.5).unwrap();
        let (_, outside) = dilated_overlap(&d, &coarse, 10.0);
        assert!(outside);
    }

    #[test]
    fn dilated_overlap_stable_under_refinement() {
        let values: Vec<u32> = [1.0 / 128.0, 1.0 / 256.0, 1.0 / 512.0]
            .iter()
            .map(|&h| {
                let d = interval(h);
                dilated_overlap(&d, &build_cover(&d, 1.0 / 12.0).unwrap(), 4.0).0
            })
            .collect();
        let spread = values.iter().max().unwrap() - values.iter().min().unwrap();
        assert!(spread <= 2, "dilated overlaps {values:?}");
    }

    #[test]
    fn half_plane_chains_march_up_with_a_near_two() {
        // Complement = lower half plane; d(x) = y exactly. Chains ascend and
        // roughly double their radius per shell crossing.
        let d = GridDomain::build(
            2,
            [0.0, 2.0, 0.0, 1.0],
            1.0 / 64.0,
            vec![Primitive::HalfPlane {
                normal: Point::new(0.0, -1.0),
                offset: 0.0,
            }],
        )
        .unwrap();
        let cover = build_cover(&d, 0.25).unwrap();
        let index = CoverIndex::build(&cover);
        let l = 2.0 / cover.c;
        let mut checked = 0;
        for b in &cover.balls {
            if b.radius < 2.0 * d.h || d.box_collar[b.center_idx as usize] {
                continue;
            }
            if b.shell_k < 2 {
                continue; // already near the top
            }
            let chain = find_john_chain(&cover, &index, b.id, l, 64).unwrap();
            assert!(chain.fitted_a > 1.2, "a = {} too flat", chain.fitted_a);
            assert!(chain.fitted_a < 3.0, "a = {} too steep", chain.fitted_a);
            let last = cover.ball(*chain.ball_ids.last().unwrap());
            assert!(last.shell_k <= cover.k_min);
            checked += 1;
        }
        assert!(checked > 10, "not enough deep balls checked: {checked}");
    }

    #[test]
    fn punctured_plane_passes_john_report() {
        let d = GridDomain::build(
            2,
            [-1.0, 1.0, -1.0, 1.0],
            1.0 / 64.0,
            vec![Primitive::Point { at: Point::new(0.0, 0.0) }],
        )
        .unwrap();
        let cover = build_cover(&d, 0.25).unwrap();
        let report = john_condition_report(&d, &cover, 1.2, 2.0 / cover.c, 0.5, 64);
        assert!(
            report.fraction_valid > 0.95,
            "fraction {} offenders {:?}",
            report.fraction_valid,
            report.offenders
        );
    }

    #[test]
    fn narrow_throat_blocks_mid_corridor_chains() {
        // Two chambers joined by a long corridor of width 0.1. Mid-corridor
        // balls have radius ~ 0.0125 and the nearest larger ball sits in a
        // chamber, too far to intersect: the greedy ascent dead-ends there.
        let d = GridDomain::build(
            2,
            [0.0, 1.0, 0.0, 1.0],
            1.0 / 256.0,
            vec![
                Primitive::Rect {
                    min: Point::new(0.2, 0.0),
                    max: Point::new(0.8, 0.45),
                },
                Primitive::Rect {
                    min: Point::new(0.2, 0.55),
                    max: Point::new(0.8, 1.0),
                },
            ],
        )
        .unwrap();
        let cover = build_cover(&d, 0.25).unwrap();
        let report = john_condition_report(&d, &cover, 1.2, 2.0 / cover.c, 0.5, 64);
        assert!(
            report.fraction_valid < 1.0,
            "throat should block some chains: {report:?}"
        );
        assert!(!report.offenders.is_empty());
        assert!(report.fraction_valid > 0.0, "chamber chains should pass");
    }
}
