//! Ratio diagnostics comparing capacity against distance-weighted mass.
//!
//! Every quantity here is a quotient of two measured numbers on one grid:
//! summing over a family of probe sets and tracking the worst quotient per
//! grid level turns "is this constant uniform?" into a measurable trend.

use crate::capacity::{
    cap_p_with_weights, default_tol, p_energy, solve_potential_with_weights, NormalizedBand,
    PotentialSpec,
};
use crate::error::Result;
use crate::geometry::Point;
use crate::space::{mass, GridDomain, MeasureWeight};
use crate::whitney::{CoverIndex, WhitneyCover};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;

/// A named node set E subset of Omega used as a capacity probe.
#[derive(Clone, Debug)]
pub struct ProbeSet {
    pub tag: String,
    pub nodes: Vec<u32>,
}

/// A named selection of cover ball ids whose union forms a probe set.
#[derive(Clone, Debug)]
pub struct UnionFamily {
    pub tag: String,
    pub ball_ids: Vec<u32>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioSample {
    pub tag: String,
    pub numerator: f64,
    pub denominator: f64,
    pub ratio: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct RatioReport {
    pub label: String,
    pub samples: Vec<RatioSample>,
    pub max_ratio: f64,
    /// Instances whose denominator fell below the zero threshold; they are
    /// excluded from the max rather than reported as infinite.
    pub skipped_zero: usize,
}

impl RatioReport {
    pub fn from_samples(label: &str, raw: Vec<RatioSample>, zero_threshold: f64) -> RatioReport {
        let mut samples = Vec::new();
        let mut skipped = 0usize;
        for mut s in raw {
            if s.denominator <= zero_threshold {
                skipped += 1;
                continue;
            }
            s.ratio = s.numerator / s.denominator;
            samples.push(s);
        }
        let max_ratio = samples.iter().map(|s| s.ratio).fold(0.0f64, f64::max);
        RatioReport {
            label: label.to_string(),
            samples,
            max_ratio,
            skipped_zero: skipped,
        }
    }
}

/// Denominators below 10 tol * s0^-p * mu(Omega) are treated as zero: that is
/// the solver noise floor for capacities on this grid.
pub fn zero_threshold(domain: &GridDomain, weight: &MeasureWeight, p: f64, tol: f64) -> f64 {
    let omega: Vec<u32> = (0..domain.node_count() as u32)
        .filter(|&i| domain.in_omega[i as usize])
        .collect();
    10.0 * tol * domain.s0.powf(-p) * mass(domain, weight, &omega)
}

/// Distance-weighted mass int_E d_Omega^-p dmu (nodes in Omega keep d > h/2,
/// so the integrand is finite).
pub fn distance_mass(
    domain: &GridDomain,
    weight: &MeasureWeight,
    p: f64,
    nodes: &[u32],
) -> f64 {
    let cell = domain.h.powi(domain.dim as i32);
    nodes
        .iter()
        .filter(|&&i| domain.in_omega[i as usize])
        .map(|&i| {
            let w = weight.node_weight(domain.node_point(i as usize), domain.h);
            w * cell * domain.dist[i as usize].powf(-p)
        })
        .sum()
}

fn cap_of(
    domain: &GridDomain,
    node_w: &[f64],
    p: f64,
    tol: Option<f64>,
    nodes: &[u32],
) -> Result<f64> {
    let mut spec = PotentialSpec::new(nodes, p);
    spec.tol = tol;
    Ok(cap_p_with_weights(domain, node_w, &spec)?.value)
}

/// Condition (a): int_E d^-p dmu against cap_p(E, Omega).
pub fn mazya_sample(
    domain: &GridDomain,
    weight: &MeasureWeight,
    node_w: &[f64],
    p: f64,
    tol: Option<f64>,
    probe: &ProbeSet,
) -> Result<RatioSample> {
    let numerator = distance_mass(domain, weight, p, &probe.nodes);
    let denominator = cap_of(domain, node_w, p, tol, &probe.nodes)?;
    Ok(RatioSample {
        tag: probe.tag.clone(),
        numerator,
        denominator,
        ratio: f64::NAN,
    })
}

/// Condition (c): sum over the cover of cap_p(E_i, Omega) against
/// cap_p(E, Omega), where the E_i partition E by charging each node to its
/// smallest containing ball. A partition (rather than the overlapping
/// intersections E n B_i) keeps the node sets disjoint, so the sum measures
/// how capacity distributes across scales instead of how often the cover
/// multiply-counts the same nodes; either way the pieces union back to E and
/// subadditivity forces numerator >= denominator up to tolerance. Collar
/// nodes below the cover's reach form one extra piece of their own.
pub fn quasiadd_sample(
    domain: &GridDomain,
    node_w: &[f64],
    cover: &WhitneyCover,
    index: &CoverIndex,
    p: f64,
    tol: Option<f64>,
    probe: &ProbeSet,
) -> Result<RatioSample> {
    let denominator = cap_of(domain, node_w, p, tol, &probe.nodes)?;
    let numerator = partition_cap_sum(domain, node_w, cover, index, p, tol, &probe.nodes)?;
    Ok(RatioSample {
        tag: probe.tag.clone(),
        numerator,
        denominator,
        ratio: f64::NAN,
    })
}

/// The decomposition numerator alone, for callers that already hold
/// cap_p(E, Omega) from an earlier solve.
pub fn partition_cap_sum(
    domain: &GridDomain,
    node_w: &[f64],
    cover: &WhitneyCover,
    index: &CoverIndex,
    p: f64,
    tol: Option<f64>,
    nodes: &[u32],
) -> Result<f64> {
    let mut chunks: BTreeMap<Option<u32>, Vec<u32>> = BTreeMap::new();
    for &n in nodes {
        if !domain.in_omega[n as usize] {
            continue;
        }
        let owner = cover.owner_of(domain.node_point(n as usize), index);
        chunks.entry(owner).or_default().push(n);
    }
    let pieces: Vec<Result<f64>> = chunks
        .par_iter()
        .map(|(_, ns)| cap_of(domain, node_w, p, tol, ns))
        .collect();
    let mut numerator = 0.0;
    for piece in pieces {
        numerator += piece?;
    }
    Ok(numerator)
}

/// Relative capacities of the selected cover balls, solved in parallel and
/// returned keyed by ball id.
pub fn ball_capacities(
    domain: &GridDomain,
    node_w: &[f64],
    cover: &WhitneyCover,
    ids: &[u32],
    p: f64,
    tol: Option<f64>,
) -> Result<BTreeMap<u32, f64>> {
    let solved: Vec<Result<(u32, f64)>> = ids
        .par_iter()
        .map(|&id| {
            let b = cover.ball(id);
            let nodes: Vec<u32> = domain
                .ball_nodes(b.center, b.radius)
                .into_iter()
                .filter(|&i| domain.in_omega[i as usize])
                .collect();
            let v = cap_of(domain, node_w, p, tol, &nodes)?;
            Ok((id, v))
        })
        .collect();
    let mut out = BTreeMap::new();
    for s in solved {
        let (id, v) = s?;
        out.insert(id, v);
    }
    Ok(out)
}

#[derive(Clone, Debug, Serialize)]
pub struct UnionConditions {
    pub tag: String,
    /// int_U d^-p dmu.
    pub mass_num: f64,
    /// sum_i cap_p(B_i, Omega) over the member balls.
    pub cap_sum: f64,
    /// cap_p(U, Omega).
    pub denominator: f64,
    /// (b): mass_num / denominator.
    pub ratio_b: f64,
    /// (d): cap_sum / denominator.
    pub ratio_d: f64,
    /// Comparability of the mass numerator with the capacity sum.
    pub kappa: f64,
}

/// Conditions (b) and (d) on unions of cover balls; per-ball capacities come
/// from the shared cache so each instance costs one solve.
pub fn ball_union_conditions(
    domain: &GridDomain,
    weight: &MeasureWeight,
    node_w: &[f64],
    cover: &WhitneyCover,
    p: f64,
    tol: Option<f64>,
    families: &[UnionFamily],
    ball_caps: &BTreeMap<u32, f64>,
) -> Result<Vec<UnionConditions>> {
    let solved: Vec<Result<UnionConditions>> = families
        .par_iter()
        .map(|fam| {
            let mut nodes = Vec::new();
            let mut cap_sum = 0.0;
            for &id in &fam.ball_ids {
                let b = cover.ball(id);
                nodes.extend(
                    domain
                        .ball_nodes(b.center, b.radius)
                        .into_iter()
                        .filter(|&i| domain.in_omega[i as usize]),
                );
                cap_sum += ball_caps.get(&id).copied().unwrap_or(0.0);
            }
            nodes.sort_unstable();
            nodes.dedup();
            let num_b = distance_mass(domain, weight, p, &nodes);
            let den = cap_of(domain, node_w, p, tol, &nodes)?;
            Ok(UnionConditions {
                tag: fam.tag.clone(),
                mass_num: num_b,
                cap_sum,
                denominator: den,
                ratio_b: if den > 0.0 { num_b / den } else { f64::NAN },
                ratio_d: if den > 0.0 { cap_sum / den } else { f64::NAN },
                kappa: if cap_sum > 0.0 { num_b / cap_sum } else { f64::NAN },
            })
        })
        .collect();
    solved.into_iter().collect()
}

/// Normalized capacity cap * rad^p / mu(B) for each cached ball.
pub fn band_from_caps(
    domain: &GridDomain,
    weight: &MeasureWeight,
    cover: &WhitneyCover,
    p: f64,
    caps: &BTreeMap<u32, f64>,
) -> (NormalizedBand, Vec<(u32, f64)>) {
    let mut per_ball = Vec::new();
    for (&id, &cap) in caps {
        let b = cover.ball(id);
        let mu = mass(domain, weight, &domain.ball_nodes(b.center, b.radius));
        if mu > 0.0 {
            per_ball.push((id, cap * b.radius.powf(p) / mu));
        }
    }
    let values: Vec<f64> = per_ball.iter().map(|&(_, v)| v).collect();
    (crate::capacity::normalized_band(&values), per_ball)
}

#[derive(Clone, Debug, Serialize)]
pub struct HarnackReport {
    /// Worst ratio of the q-mean of u over the doubled ball to its min over
    /// the ball.
    pub a_max: f64,
    pub checked: usize,
    /// Balls with vanishing min but positive mean: the inequality cannot hold
    /// there at any constant.
    pub violations: usize,
}

/// Scans cover balls with C_A * B inside Omega minus E, where the potential
/// is a genuine subsolution, and measures sup of mean_q(2B) / min(B).
pub fn weak_harnack_scan(
    domain: &GridDomain,
    weight: &MeasureWeight,
    u: &[f64],
    e_nodes: &[u32],
    cover: &WhitneyCover,
    q: f64,
    c_a: f64,
) -> HarnackReport {
    let mut in_e = vec![false; domain.node_count()];
    for &i in e_nodes {
        in_e[i as usize] = true;
    }
    let cell = domain.h.powi(domain.dim as i32);
    let mut a_max: f64 = 0.0;
    let mut checked = 0usize;
    let mut violations = 0usize;
    for b in &cover.balls {
        if !domain.ball_inside_box(b.center, c_a * b.radius) {
            continue;
        }
        let dilated = domain.ball_nodes(b.center, c_a * b.radius);
        if dilated
            .iter()
            .any(|&i| !domain.in_omega[i as usize] || in_e[i as usize])
        {
            continue;
        }
        let doubled = domain.ball_nodes(b.center, 2.0 * b.radius);
        let mut mq = 0.0;
        let mut mu = 0.0;
        for &i in &doubled {
            let w = weight.node_weight(domain.node_point(i as usize), domain.h) * cell;
            mq += w * u[i as usize].max(0.0).powf(q);
            mu += w;
        }
        if mu == 0.0 {
            continue;
        }
        let mean = (mq / mu).powf(1.0 / q);
        let min = domain
            .ball_nodes(b.center, b.radius)
            .iter()
            .map(|&i| u[i as usize])
            .fold(f64::INFINITY, f64::min);
        if mean <= 1e-14 && min <= 1e-14 {
            continue; // dead zone far from the probe set
        }
        if min <= 0.0 {
            violations += 1;
            continue;
        }
        checked += 1;
        a_max = a_max.max(mean / min);
    }
    HarnackReport {
        a_max,
        checked,
        violations,
    }
}

/// sup over the family of int |u|^p d^-p dmu / energy(u): a lower bound on
/// the best constant in the corresponding weighted inequality.
pub fn hardy_constant(
    domain: &GridDomain,
    weight: &MeasureWeight,
    p: f64,
    family: &[(String, Vec<f64>)],
) -> RatioReport {
    let cell = domain.h.powi(domain.dim as i32);
    let mut samples = Vec::new();
    let mut skipped = 0usize;
    for (tag, u) in family {
        let mut num = 0.0;
        for i in 0..domain.node_count() {
            if domain.in_omega[i] && u[i] != 0.0 {
                let w = weight.node_weight(domain.node_point(i), domain.h) * cell;
                num += w * u[i].abs().powf(p) * domain.dist[i].powf(-p);
            }
        }
        let energy = p_energy(domain, weight, p, u);
        if energy <= 1e-14 * (1.0 + num) {
            skipped += 1;
            continue;
        }
        samples.push(RatioSample {
            tag: tag.clone(),
            numerator: num,
            denominator: energy,
            ratio: num / energy,
        });
    }
    let max_ratio = samples.iter().map(|s| s.ratio).fold(0.0f64, f64::max);
    RatioReport {
        label: "hardy".into(),
        samples,
        max_ratio,
        skipped_zero: skipped,
    }
}

/// Standard trial functions for the weighted-inequality scan.
pub fn hardy_family(
    domain: &GridDomain,
    cover: &WhitneyCover,
    p: f64,
    potentials: &[(String, Vec<f64>)],
    cutoff_centers: &[Point],
) -> Vec<(String, Vec<f64>)> {
    let n = domain.node_count();
    let mut family: Vec<(String, Vec<f64>)> = potentials.to_vec();

    // Tents on a spread of cover balls.
    for &id in &systematic_sample(cover.balls.len(), 6) {
        let b = &cover.balls[id];
        let mut u = vec![0.0; n];
        for idx in domain.ball_nodes(b.center, b.radius) {
            let t = 1.0 - domain.node_point(idx as usize).dist(b.center) / b.radius;
            if domain.in_omega[idx as usize] {
                u[idx as usize] = t.max(0.0);
            }
        }
        family.push((format!("tent_ball_{}", b.id), u));
    }

    // Distance powers d^beta with beta above the integrability edge 1 - 1/p.
    let edge = 1.0 - 1.0 / p;
    for beta in [edge + 0.1, edge + 0.4, 1.0, 1.5] {
        if beta <= edge {
            continue;
        }
        let mut u = vec![0.0; n];
        for i in 0..n {
            if domain.in_omega[i] {
                u[i] = (domain.dist[i] / domain.s0).powf(beta);
            }
        }
        family.push((format!("dist_pow_{beta:.2}"), u));
    }

    // Radial log cutoffs concentrating at thin boundary pieces: u = 1 inside
    // r_in = 6h, falling to 0 at R = s0 like ln(R/r). The inner plateau sits
    // just past the lattice collar so the logarithmic shoulder, the part that
    // probes the inequality, is resolved at every ladder level.
    let r_in = 6.0 * domain.h;
    let big_r = domain.s0;
    if big_r > 1.25 * r_in {
        let denom = (big_r / r_in).ln();
        for (ci, c) in cutoff_centers.iter().enumerate() {
            let mut u = vec![0.0; n];
            for i in 0..n {
                if domain.in_omega[i] {
                    let r = domain.node_point(i).dist(*c).max(0.5 * domain.h);
                    u[i] = ((big_r / r).ln() / denom).clamp(0.0, 1.0);
                }
            }
            family.push((format!("log_cutoff_{ci}"), u));
        }
    }
    family
}

/// Evenly spread index sample: deterministic, order-preserving.
pub fn systematic_sample(len: usize, quota: usize) -> Vec<usize> {
    if len == 0 || quota == 0 {
        return Vec::new();
    }
    if len <= quota {
        return (0..len).collect();
    }
    (0..quota)
        .map(|j| j * len / quota + len / (2 * quota))
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Verdict {
    Bounded,
    Diverging,
    Inconclusive,
}

/// Growth classification of a positive constant across grid levels, with the
/// 10% / 50% decision bands. Returns the total relative growth over the
/// ladder. Bounded is decided by the final step (< 10%): a constant that has
/// stopped moving is settled no matter how far the coarsest level sat from
/// its limit, since coarse grids systematically understate these ratios.
/// Diverging requires >= 50% in total, because the slowest genuine blow-ups
/// here are linear in log(1/h) and a tripled resolution only multiplies that
/// log by a modest factor per step.
pub fn growth_verdict(values: &[f64]) -> (f64, Verdict) {
    let vals: Vec<f64> = values.iter().copied().filter(|v| v.is_finite()).collect();
    if vals.len() < 2 {
        return (0.0, Verdict::Inconclusive);
    }
    let first = vals[0];
    let last = *vals.last().unwrap();
    let prev = vals[vals.len() - 2];
    if first <= 1e-12 && last <= 1e-12 {
        return (0.0, Verdict::Bounded);
    }
    if first <= 1e-12 || prev <= 1e-12 {
        return (f64::INFINITY, Verdict::Diverging);
    }
    let growth = last / first - 1.0;
    let last_step = last / prev - 1.0;
    let verdict = if last_step < 0.10 {
        Verdict::Bounded
    } else if growth >= 0.50 {
        Verdict::Diverging
    } else {
        Verdict::Inconclusive
    };
    (growth, verdict)
}

/// Codim estimate against the exponent p, with one q-grid step of slack
/// deciding the near-critical band.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum PSide {
    BelowP,
    AboveP,
    NearP,
}

pub fn dichotomy_probe(codim_estimate: f64, p: f64, grid_step: f64) -> PSide {
    if codim_estimate > p + grid_step {
        PSide::AboveP
    } else if codim_estimate < p - grid_step {
        PSide::BelowP
    } else {
        PSide::NearP
    }
}

/// Deterministic nested probe pairs (E, F) with E inside F, drawn from deep
/// nodes of the domain.
pub fn seeded_probe_pairs(
    domain: &GridDomain,
    seed: u64,
    count: usize,
) -> Vec<(ProbeSet, ProbeSet)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let deep: Vec<u32> = (0..domain.node_count() as u32)
        .filter(|&i| domain.in_omega[i as usize] && domain.dist[i as usize] >= 6.0 * domain.h)
        .collect();
    let mut out = Vec::new();
    if deep.is_empty() {
        return out;
    }
    let mut attempts = 0;
    while out.len() < count && attempts < count * 20 {
        attempts += 1;
        let center_idx = deep[rng.random_range(0..deep.len())];
        let c = domain.node_point(center_idx as usize);
        let d = domain.dist[center_idx as usize];
        let r_small = rng.random_range(1.2 * domain.h..(0.6 * d).max(1.3 * domain.h));
        let r_large = r_small + rng.random_range(domain.h..(0.35 * d).max(1.1 * domain.h));
        let filter_omega = |nodes: Vec<u32>| -> Vec<u32> {
            nodes
                .into_iter()
                .filter(|&i| domain.in_omega[i as usize])
                .collect()
        };
        let e = filter_omega(domain.ball_nodes(c, r_small));
        let f = filter_omega(domain.ball_nodes(c, r_large));
        if e.is_empty() || f.len() <= e.len() {
            continue;
        }
        let k = out.len();
        out.push((
            ProbeSet {
                tag: format!("pair_{k}_small"),
                nodes: e,
            },
            ProbeSet {
                tag: format!("pair_{k}_large"),
                nodes: f,
            },
        ));
    }
    out
}

/// Deterministic unions of nearby sampled balls, used as generic (b)/(c)/(d)
/// instances.
pub fn sampled_ball_unions(
    cover: &WhitneyCover,
    sampled_ids: &[u32],
    seed: u64,
    count: usize,
    size: usize,
) -> Vec<UnionFamily> {
    if sampled_ids.is_empty() {
        return Vec::new();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    for k in 0..count {
        let anchor = sampled_ids[rng.random_range(0..sampled_ids.len())];
        let ac = cover.ball(anchor).center;
        // The `size` sampled balls nearest the anchor.
        let mut by_dist: Vec<u32> = sampled_ids.to_vec();
        by_dist.sort_by(|&x, &y| {
            let dx = cover.ball(x).center.dist(ac);
            let dy = cover.ball(y).center.dist(ac);
            dx.partial_cmp(&dy).unwrap().then(x.cmp(&y))
        });
        by_dist.truncate(size);
        by_dist.sort_unstable();
        out.push(UnionFamily {
            tag: format!("union_{k}"),
            ball_ids: by_dist,
        });
    }
    out
}

/// The two anchored depth bands every designated witness uses. `Full` is the
/// continuum-fixed ball B(anchor, rho): its ratios converge as h -> 0, so it
/// carries the bounded verdicts. `Mid` is the sliding log-band
/// [h^(3/4) rho^(1/4), h^(1/4) rho^(3/4)]: it recedes from the anchor and
/// from the fixed scale rho at matched logarithmic speed, which is the regime
/// where capacity degenerates when the anchor piece of the boundary is too
/// thin for the exponent. Bounded geometries hold both bands flat.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum WitnessBand {
    Full,
    Mid,
}

impl WitnessBand {
    pub fn tag(self) -> &'static str {
        match self {
            WitnessBand::Full => "full",
            WitnessBand::Mid => "mid",
        }
    }

    /// Radial range [lo, hi) around the anchor at pitch h.
    pub fn range(self, h: f64, rho: f64) -> (f64, f64) {
        match self {
            WitnessBand::Full => (0.0, rho),
            WitnessBand::Mid => (
                h.powf(0.75) * rho.powf(0.25),
                h.powf(0.25) * rho.powf(0.75),
            ),
        }
    }
}

/// Witness set for the distance-mass condition: the in-domain nodes of the
/// banded ball around the anchor.
pub fn witness_probe(
    domain: &GridDomain,
    anchor: Point,
    rho: f64,
    band: WitnessBand,
) -> ProbeSet {
    let (lo, hi) = band.range(domain.h, rho);
    let nodes: Vec<u32> = domain
        .ball_nodes(anchor, hi)
        .into_iter()
        .filter(|&i| {
            domain.in_omega[i as usize] && domain.node_point(i as usize).dist(anchor) >= lo
        })
        .collect();
    ProbeSet {
        tag: format!("witness_{}", band.tag()),
        nodes,
    }
}

/// Witness set for the decomposition condition: a one-node-wide dash along
/// the ray anchor + t * dir, t in the band range. A dash crosses every cover
/// scale exactly once, so its partition pieces count scales rather than area.
pub fn witness_corridor(
    domain: &GridDomain,
    anchor: Point,
    dir: Point,
    rho: f64,
    band: WitnessBand,
) -> ProbeSet {
    let norm = (dir.x * dir.x + dir.y * dir.y).sqrt();
    let (ux, uy) = (dir.x / norm, dir.y / norm);
    let (lo, hi) = band.range(domain.h, rho);
    let mut nodes = Vec::new();
    let mut t = lo.max(domain.h);
    while t <= hi {
        let q = Point::new(anchor.x + t * ux, anchor.y + t * uy);
        if let Some(idx) = domain.nearest_node(q) {
            if domain.in_omega[idx] {
                nodes.push(idx as u32);
            }
        }
        t += 0.5 * domain.h;
    }
    nodes.sort_unstable();
    nodes.dedup();
    ProbeSet {
        tag: format!("corridor_{}", band.tag()),
        nodes,
    }
}

/// Witness union for the ball-sum conditions: per shell, the `per_shell`
/// cover balls nearest the ray anchor + t * dir whose centers project into
/// the band. Deterministic: sorted by distance to the ray, then id.
pub fn witness_union(
    cover: &WhitneyCover,
    anchor: Point,
    dir: Point,
    rho: f64,
    band: WitnessBand,
    h: f64,
    per_shell: usize,
) -> UnionFamily {
    let norm = (dir.x * dir.x + dir.y * dir.y).sqrt();
    let (ux, uy) = (dir.x / norm, dir.y / norm);
    let (lo, hi) = band.range(h, rho);
    let mut by_shell: BTreeMap<i32, Vec<(f64, u32)>> = BTreeMap::new();
    for b in &cover.balls {
        let (vx, vy) = (b.center.x - anchor.x, b.center.y - anchor.y);
        let t = vx * ux + vy * uy;
        if t < lo || t >= hi {
            continue;
        }
        let perp = (vx - t * ux).hypot(vy - t * uy);
        by_shell.entry(b.shell_k).or_default().push((perp, b.id));
    }
    let mut ids = Vec::new();
    for (_, mut cands) in by_shell {
        cands.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)));
        ids.extend(cands.into_iter().take(per_shell).map(|(_, id)| id));
    }
    ids.sort_unstable();
    UnionFamily {
        tag: format!("witness_union_{}", band.tag()),
        ball_ids: ids,
    }
}

/// Probe disks B(center, m h) for a dyadic ladder of multiples m, each capped
/// to stay inside the domain box.
pub fn probe_disks_at(
    domain: &GridDomain,
    center: Point,
    multiples: &[f64],
    r_max: f64,
) -> Vec<ProbeSet> {
    let mut out = Vec::new();
    for &m in multiples {
        let r = m * domain.h;
        if r > r_max {
            continue;
        }
        let nodes: Vec<u32> = domain
            .ball_nodes(center, r)
            .into_iter()
            .filter(|&i| domain.in_omega[i as usize])
            .collect();
        if nodes.is_empty() {
            continue;
        }
        out.push(ProbeSet {
            tag: format!("disk_{m}h"),
            nodes,
        });
    }
    out
}

pub fn default_tol_for(p: f64, tol: Option<f64>) -> f64 {
    tol.unwrap_or_else(|| default_tol(p))
}

/// Potential of a probe set, for reuse across the Hardy family and the
/// weak-Harnack scan.
pub fn probe_potential(
    domain: &GridDomain,
    node_w: &[f64],
    p: f64,
    tol: Option<f64>,
    probe: &ProbeSet,
) -> Result<Vec<f64>> {
    let mut spec = PotentialSpec::new(&probe.nodes, p);
    spec.tol = tol;
    Ok(solve_potential_with_weights(domain, node_w, &spec)?.u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::Primitive;
    use crate::space::node_weights;
    use crate::whitney::build_cover;

    fn punctured_box(h: f64) -> GridDomain {
        GridDomain::build(
            2,
            [-1.0, 1.0, -1.0, 1.0],
            h,
            vec![Primitive::Point {
                at: Point::new(0.0, 0.0),
            }],
        )
        .unwrap()
    }

    #[test]
    fn systematic_sample_is_spread_and_deterministic() {
        assert_eq!(systematic_sample(10, 20), (0..10).collect::<Vec<_>>());
        let s = systematic_sample(100, 4);
        assert_eq!(s.len(), 4);
        assert!(s.windows(2).all(|w| w[1] > w[0]));
        assert_eq!(s, systematic_sample(100, 4));
    }

    #[test]
    fn growth_verdict_bands() {
        assert_eq!(growth_verdict(&[1.0, 1.05, 1.08]).1, Verdict::Bounded);
        assert_eq!(growth_verdict(&[1.0, 1.6, 2.6]).1, Verdict::Diverging);
        // Total growth >= 50% counts even when single steps stay below it.
        assert_eq!(growth_verdict(&[1.0, 1.3, 1.6]).1, Verdict::Diverging);
        assert_eq!(growth_verdict(&[1.0, 1.15, 1.3]).1, Verdict::Inconclusive);
        assert_eq!(growth_verdict(&[2.0, 1.5, 1.2]).1, Verdict::Bounded);
        assert_eq!(growth_verdict(&[0.0, 0.0]).1, Verdict::Bounded);
        // A constant that has settled is bounded even after a steep coarse
        // start; one steep final step alone is not enough to call a blow-up.
        assert_eq!(growth_verdict(&[1.0, 3.0, 3.05]).1, Verdict::Bounded);
        assert_eq!(growth_verdict(&[1.0, 1.05, 1.3]).1, Verdict::Inconclusive);
    }

    #[test]
    fn dichotomy_probe_uses_grid_slack() {
        assert_eq!(dichotomy_probe(1.9, 1.5, 0.05), PSide::AboveP);
        assert_eq!(dichotomy_probe(1.2, 1.5, 0.05), PSide::BelowP);
        assert_eq!(dichotomy_probe(1.52, 1.5, 0.05), PSide::NearP);
    }

    #[test]
    fn mazya_ratio_finite_on_a_fat_probe() {
        let d = punctured_box(1.0 / 32.0);
        let w = MeasureWeight::Lebesgue;
        let nw = node_weights(&d, &w);
        let probe = ProbeSet {
            tag: "disk".into(),
            nodes: d
                .ball_nodes(Point::new(0.5, 0.5), 0.2)
                .into_iter()
                .filter(|&i| d.in_omega[i as usize])
                .collect(),
        };
        let s = mazya_sample(&d, &w, &nw, 2.0, None, &probe).unwrap();
        assert!(s.numerator.is_finite() && s.numerator > 0.0);
        assert!(s.denominator > 0.1, "denominator {}", s.denominator);
    }

    #[test]
    fn quasiadd_sum_dominates_capacity() {
        // Subadditivity in reverse: the pieces E n B_i cover E, so their
        // capacity sum must reach at least cap(E) (up to tolerance).
        let d = punctured_box(1.0 / 32.0);
        let w = MeasureWeight::Lebesgue;
        let nw = node_weights(&d, &w);
        let cover = build_cover(&d, 0.25).unwrap();
        let index = CoverIndex::build(&cover);
        let probe = ProbeSet {
            tag: "ring".into(),
            nodes: d
                .ball_nodes(Point::new(0.0, 0.0), 0.25)
                .into_iter()
                .filter(|&i| d.in_omega[i as usize] && d.dist[i as usize] >= 4.0 * d.h)
                .collect(),
        };
        let s = quasiadd_sample(&d, &nw, &cover, &index, 2.0, None, &probe).unwrap();
        assert!(
            s.numerator >= s.denominator * 0.9,
            "sum {} vs cap {}",
            s.numerator,
            s.denominator
        );
    }

    #[test]
    fn harnack_ratio_is_one_for_constants() {
        let d = punctured_box(1.0 / 32.0);
        let w = MeasureWeight::Lebesgue;
        let cover = build_cover(&d, 1.0 / 12.0).unwrap();
        let u = vec![1.0; d.node_count()];
        let rep = weak_harnack_scan(&d, &w, &u, &[], &cover, 1.0, 8.0);
        assert!(rep.checked > 0);
        assert_eq!(rep.violations, 0);
        assert!((rep.a_max - 1.0).abs() < 1e-12);
    }

    #[test]
    fn hardy_family_members_vanish_off_omega() {
        let d = punctured_box(1.0 / 16.0);
        let cover = build_cover(&d, 0.25).unwrap();
        let fam = hardy_family(&d, &cover, 2.0, &[], &[Point::new(0.0, 0.0)]);
        assert!(fam.len() >= 5);
        for (tag, u) in &fam {
            assert_eq!(u.len(), d.node_count());
            for i in 0..d.node_count() {
                if !d.in_omega[i] {
                    assert_eq!(u[i], 0.0, "{tag} leaks outside the domain");
                }
            }
        }
    }

    #[test]
    fn seeded_pairs_are_nested_and_reproducible() {
        let d = punctured_box(1.0 / 32.0);
        let a = seeded_probe_pairs(&d, 7, 12);
        let b = seeded_probe_pairs(&d, 7, 12);
        assert_eq!(a.len(), 12);
        for ((e1, f1), (e2, f2)) in a.iter().zip(&b) {
            assert_eq!(e1.nodes, e2.nodes);
            assert_eq!(f1.nodes, f2.nodes);
            let fs: std::collections::BTreeSet<u32> = f1.nodes.iter().copied().collect();
            assert!(e1.nodes.iter().all(|i| fs.contains(i)), "pair not nested");
        }
    }

    #[test]
    fn witness_union_walks_the_ray_one_shell_at_a_time() {
        let d = punctured_box(1.0 / 64.0);
        let cover = build_cover(&d, 0.25).unwrap();
        let anchor = Point::new(0.0, 0.0);
        let dir = Point::new(1.0, 0.0);
        let u = witness_union(&cover, anchor, dir, 0.5, WitnessBand::Full, d.h, 1);
        let mut shells: Vec<i32> = u
            .ball_ids
            .iter()
            .map(|&i| cover.ball(i).shell_k)
            .collect();
        shells.sort_unstable();
        shells.dedup();
        assert_eq!(shells.len(), u.ball_ids.len(), "one ball per shell");
        assert!(u.ball_ids.len() >= 3);
        // Every member projects into the band and hugs the ray.
        for &id in &u.ball_ids {
            let c = cover.ball(id).center;
            assert!(c.x >= 0.0 && c.x < 0.5, "projection {} out of band", c.x);
        }
        let mid = witness_union(&cover, anchor, dir, 0.5, WitnessBand::Mid, d.h, 2);
        let (lo, hi) = WitnessBand::Mid.range(d.h, 0.5);
        for &id in &mid.ball_ids {
            let t = cover.ball(id).center.x;
            assert!(t >= lo && t < hi, "mid projection {t} outside [{lo}, {hi})");
        }
        assert!(!mid.ball_ids.is_empty());
    }
}
