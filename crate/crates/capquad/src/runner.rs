//! Batch execution of scenarios across their grid ladders, with deterministic
//! file emission.
//!
//! Each (scenario, p, pitch) cell builds the domain and cover once, solves the
//! probe families, and emits four files; verdicts are assembled per ladder
//! from the growth of the measured constants. All parallel reductions collect
//! into index-ordered vectors first, so reruns are byte-identical.

use crate::capacity::{
    default_tol, fatness_scan, solve_potential_with_weights, FatnessReport, NormalizedBand,
    PotentialSpec,
};
use crate::error::{CapquadError, Result};
use crate::geometry::{Point, Primitive};
use crate::quasiadd::{
    ball_capacities, ball_union_conditions, band_from_caps, dichotomy_probe, distance_mass,
    growth_verdict, hardy_constant, hardy_family, partition_cap_sum, sampled_ball_unions,
    systematic_sample, weak_harnack_scan, witness_corridor, witness_probe, witness_union,
    zero_threshold, HarnackReport, PSide, ProbeSet, RatioReport, RatioSample, UnionFamily,
    Verdict, WitnessBand,
};
use crate::scenario::{Scenario, SegmentSpec, SuiteConfig};
use crate::space::{aikawa_codim_estimate, hausdorff_codim_bracket, node_weights, GridDomain};
use crate::whitney::{build_cover, dilated_overlap, john_condition_report, CoverIndex};
use rayon::prelude::*;
use serde::Serialize;
use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::time::Instant;

pub struct RunOptions {
    pub out: PathBuf,
    /// 0 = one thread per core.
    pub jobs: usize,
    /// Overrides the config seed when set.
    pub seed: Option<u64>,
    /// Run only the scenario with this name.
    pub filter: Option<String>,
    /// Skip grid levels with more than this many nodes per side.
    pub grid_max: Option<usize>,
}

/// Radius of the fixed witness ball. Every built-in anchor keeps this much
/// clearance from boundary pieces other than its own, so the two depth bands
/// see one boundary feature.
const WITNESS_RHO: f64 = 0.5;
/// Cover balls charged per shell along the witness ray.
const WITNESS_PER_SHELL: usize = 4;

/// Anchor point and ray direction the witness instances are pinned to: the
/// first probe segment, falling back to the first thin target and then the
/// box center for config-supplied scenarios without one.
fn witness_frame(scn: &Scenario) -> (Point, Point) {
    if let Some(s) = scn.probe_segments.first() {
        return (s.target, s.dir);
    }
    if let Some(t) = scn.thin_targets.first() {
        return (*t, Point::new(1.0, 0.0));
    }
    (
        Point::new(
            0.5 * (scn.bbox[0] + scn.bbox[1]),
            0.5 * (scn.bbox[2] + scn.bbox[3]),
        ),
        Point::new(1.0, 0.0),
    )
}

#[derive(Clone, Debug, Serialize)]
pub struct CoverSummary {
    pub balls: usize,
    pub k_min: i32,
    pub k_max: i32,
    pub overlap_max: u32,
    pub coverage_defect: usize,
    pub halved: bool,
    pub dilated_overlap_l4: u32,
    /// c <= 1/(3 L) for L = 4; outside this the dilation bound is heuristic.
    pub dilation_hypothesis_ok: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct ConditionMaxima {
    pub mazya: f64,
    pub union_b: f64,
    pub quasiadd: f64,
    pub union_d: f64,
    pub skipped_zero: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct BandPoint {
    /// Distance from ball center to the nearest thin target.
    pub dist: f64,
    pub radius: f64,
    pub normalized: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct JohnSummary {
    pub l: f64,
    pub a_required: f64,
    pub c_required: f64,
    pub fraction_valid: f64,
    pub examined: usize,
    pub offenders: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct DichotomySummary {
    pub codim_a: f64,
    pub aikawa_infinite: bool,
    pub codim_h_low: f64,
    pub codim_h_high: Option<f64>,
    pub side: PSide,
}

#[derive(Clone, Debug, Serialize)]
pub struct FatnessSummary {
    pub min_ratio: f64,
    pub max_ratio: f64,
    pub samples: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct CellReport {
    pub scenario: String,
    pub p: f64,
    pub h: f64,
    pub level: usize,
    pub nodes: usize,
    pub omega_nodes: usize,
    pub s0: f64,
    pub zero_threshold: f64,
    pub cover: CoverSummary,
    pub conditions: ConditionMaxima,
    /// Anchored instance values keyed by condition and depth band, e.g.
    /// "a_full", "d_mid". One ladder per key drives the suite verdicts.
    pub witness: BTreeMap<String, f64>,
    pub kappa_min: f64,
    pub kappa_max: f64,
    pub band: NormalizedBand,
    pub band_points: Vec<BandPoint>,
    pub hardy_max: f64,
    pub hardy_log_cutoff_max: Option<f64>,
    pub harnack: HarnackReport,
    pub fatness: Option<FatnessSummary>,
    pub john: JohnSummary,
    pub dichotomy: DichotomySummary,
}

pub struct CellData {
    pub report: CellReport,
    ratios_csv: String,
    cover_csv: String,
    potential_csv: String,
}

/// One witness instance across the grid ladder.
#[derive(Clone, Debug, Serialize)]
pub struct InstanceLadder {
    pub tag: String,
    pub values: Vec<f64>,
    pub growth: f64,
    pub verdict: Verdict,
}

/// A condition's verdict over its witness instances. Every instance is a
/// lower bound for the condition's supremum, so one diverging instance makes
/// the condition diverge no matter how flat the others sit; with none, the
/// instance with the largest finest-level value speaks for the condition.
#[derive(Clone, Debug, Serialize)]
pub struct ConditionVerdict {
    pub instances: Vec<InstanceLadder>,
    pub dominant: String,
    pub verdict: Verdict,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunStatus {
    pub scenario: String,
    pub p: f64,
    pub status: String,
    pub expected: Option<Verdict>,
    pub consensus: Verdict,
    pub split: bool,
    pub hardy_matches_consensus: bool,
    pub mazya: ConditionVerdict,
    pub union_b: ConditionVerdict,
    pub quasiadd: ConditionVerdict,
    pub union_d: ConditionVerdict,
    pub hardy: ConditionVerdict,
    pub outputs: Vec<String>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub suite: String,
    pub version: String,
    pub seed: u64,
    pub runs: Vec<RunStatus>,
    pub all_expectations_met: bool,
}

pub struct RunOutcome {
    pub manifest: RunManifest,
    pub cells: Vec<CellReport>,
    pub out_dir: PathBuf,
}

/// Stable per-cell seed: identical across reruns and unaffected by scenario
/// filtering, so partial runs reproduce the same families.
fn mix_seed(base: u64, scenario: &str, p: f64, level: usize) -> u64 {
    let mut x = base ^ 0x9e37_79b9_7f4a_7c15u64.wrapping_mul(level as u64 + 1);
    for b in scenario.bytes() {
        x = (x.rotate_left(5) ^ b as u64).wrapping_mul(0x0100_0000_01b3);
    }
    x ^ p.to_bits()
}

/// Sparse multi-scale probe: a few nodes ("dash") at dyadically spaced
/// distances 3h, 6h, 12h, ... along a ray from the target. Couples every
/// scale like a full segment at a fraction of the ball intersections.
fn dash_string_probe(domain: &GridDomain, spec: &SegmentSpec, tag: String) -> Option<ProbeSet> {
    let n = (spec.dir.x * spec.dir.x + spec.dir.y * spec.dir.y).sqrt();
    if n == 0.0 || spec.len <= 0.0 {
        return None;
    }
    let (ux, uy) = (spec.dir.x / n, spec.dir.y / n);
    let mut nodes = Vec::new();
    let mut t = 3.0 * domain.h;
    while t <= spec.len {
        let center = Point::new(spec.target.x + t * ux, spec.target.y + t * uy);
        nodes.extend(
            domain
                .ball_nodes(center, 1.05 * domain.h)
                .into_iter()
                .filter(|&i| domain.in_omega[i as usize]),
        );
        t *= 2.0;
    }
    nodes.sort_unstable();
    nodes.dedup();
    if nodes.is_empty() {
        None
    } else {
        Some(ProbeSet { tag, nodes })
    }
}

/// Whether this probe enters the quasiadditivity sum (the per-ball piece
/// solves); distance-mass rows are recorded for every probe.
#[derive(Clone, Copy, PartialEq)]
enum ProbeClass {
    Full,
    MassOnly,
}

struct SolvedProbe {
    tag: String,
    nodes: Vec<u32>,
    class: ProbeClass,
    cap: f64,
}

fn fmt(v: f64) -> String {
    format!("{v}")
}

pub fn run_cell(scn: &Scenario, p: f64, h: f64, level: usize, seed: u64) -> Result<CellData> {
    let prims = scn.primitives_for(h);
    let domain = GridDomain::build(2, scn.bbox, h, prims.clone())?;
    let weight = scn.weight.clone();
    let node_w = node_weights(&domain, &weight);
    let tol = default_tol(p);
    let zero_thr = zero_threshold(&domain, &weight, p, tol);

    let cover = build_cover(&domain, scn.cover_c)?;
    let index = CoverIndex::build(&cover);
    let (dil, dil_outside) = dilated_overlap(&domain, &cover, 4.0);

    // Anchored witness frame and the two along-ray ball chains; their member
    // capacities ride the shared cache.
    let (anchor, wdir) = witness_frame(scn);
    let w_unions: Vec<(WitnessBand, UnionFamily)> = [WitnessBand::Full, WitnessBand::Mid]
        .into_iter()
        .map(|b| {
            (
                b,
                witness_union(&cover, anchor, wdir, WITNESS_RHO, b, domain.h, WITNESS_PER_SHELL),
            )
        })
        .collect();

    // Per-shell systematic sample for the ball capacity cache.
    let mut by_shell: BTreeMap<i32, Vec<u32>> = BTreeMap::new();
    for b in &cover.balls {
        by_shell.entry(b.shell_k).or_default().push(b.id);
    }
    let mut sampled: Vec<u32> = Vec::new();
    for ids in by_shell.values() {
        for j in systematic_sample(ids.len(), scn.families.shell_quota) {
            sampled.push(ids[j]);
        }
    }
    sampled.sort_unstable();

    let mut cache_ids = sampled.clone();
    for (_, uf) in &w_unions {
        cache_ids.extend(&uf.ball_ids);
    }
    cache_ids.sort_unstable();
    cache_ids.dedup();
    let caps = ball_capacities(&domain, &node_w, &cover, &cache_ids, p, Some(tol))?;
    let caps_band: BTreeMap<u32, f64> = sampled
        .iter()
        .filter_map(|id| caps.get(id).map(|&v| (*id, v)))
        .collect();
    let (band, per_ball) = band_from_caps(&domain, &weight, &cover, p, &caps_band);
    let band_points: Vec<BandPoint> = per_ball
        .iter()
        .map(|&(id, normalized)| {
            let b = cover.ball(id);
            let dist = scn
                .thin_targets
                .iter()
                .map(|t| b.center.dist(*t))
                .fold(f64::INFINITY, f64::min);
            BandPoint {
                dist,
                radius: b.radius,
                normalized,
            }
        })
        .collect();

    // Probe families.
    let cell_seed = mix_seed(seed, &scn.name, p, level);
    let omega_nodes_of_ball = |id: u32| -> Vec<u32> {
        let b = cover.ball(id);
        domain
            .ball_nodes(b.center, b.radius)
            .into_iter()
            .filter(|&i| domain.in_omega[i as usize])
            .collect()
    };
    let unions = sampled_ball_unions(
        &cover,
        &sampled,
        cell_seed,
        scn.families.unions,
        scn.families.union_size,
    );

    let mut probes: Vec<(ProbeSet, ProbeClass)> = Vec::new();
    for (ord, si) in systematic_sample(sampled.len(), scn.families.singles)
        .into_iter()
        .enumerate()
    {
        let nodes = omega_nodes_of_ball(sampled[si]);
        if !nodes.is_empty() {
            probes.push((
                ProbeSet {
                    tag: format!("single_{ord}"),
                    nodes,
                },
                ProbeClass::Full,
            ));
        }
    }
    for (i, segspec) in scn.probe_segments.iter().enumerate() {
        if let Some(probe) = dash_string_probe(&domain, segspec, format!("dash_string_{i}")) {
            probes.push((probe, ProbeClass::Full));
        }
    }
    for uf in unions.iter().take(2) {
        let mut nodes = Vec::new();
        for &id in &uf.ball_ids {
            nodes.extend(omega_nodes_of_ball(id));
        }
        nodes.sort_unstable();
        nodes.dedup();
        if !nodes.is_empty() {
            probes.push((
                ProbeSet {
                    tag: format!("probe_{}", uf.tag),
                    nodes,
                },
                ProbeClass::Full,
            ));
        }
    }
    for (ti, target) in scn.thin_targets.iter().enumerate() {
        for &m in &scn.families.ring_multiples {
            let r = m * domain.h;
            if r > 0.45 * domain.s0 {
                continue;
            }
            let nodes: Vec<u32> = domain
                .ball_nodes(*target, r)
                .into_iter()
                .filter(|&i| domain.in_omega[i as usize])
                .collect();
            if nodes.is_empty() {
                continue;
            }
            probes.push((
                ProbeSet {
                    tag: format!("ring_t{ti}_m{m}"),
                    nodes,
                },
                ProbeClass::MassOnly,
            ));
        }
    }

    if probes.is_empty() {
        return Err(CapquadError::EmptyProbeSet);
    }

    let solved: Vec<SolvedProbe> = probes
        .par_iter()
        .map(|(probe, class)| -> Result<SolvedProbe> {
            let mut spec = PotentialSpec::new(&probe.nodes, p);
            spec.tol = Some(tol);
            let pot = solve_potential_with_weights(&domain, &node_w, &spec)?;
            Ok(SolvedProbe {
                tag: probe.tag.clone(),
                nodes: probe.nodes.clone(),
                class: *class,
                cap: pot.energy,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;

    // Condition (a): distance mass against capacity, every probe.
    let raw_a: Vec<RatioSample> = solved
        .iter()
        .map(|sp| RatioSample {
            tag: sp.tag.clone(),
            numerator: distance_mass(&domain, &weight, p, &sp.nodes),
            denominator: sp.cap,
            ratio: f64::NAN,
        })
        .collect();
    let rep_a = RatioReport::from_samples("mazya", raw_a, zero_thr);

    // Condition (c): partitioned capacity sum against capacity, structured
    // probes.
    let raw_c: Vec<RatioSample> = solved
        .iter()
        .filter(|sp| sp.class == ProbeClass::Full)
        .map(|sp| -> Result<RatioSample> {
            let num = partition_cap_sum(&domain, &node_w, &cover, &index, p, Some(tol), &sp.nodes)?;
            Ok(RatioSample {
                tag: sp.tag.clone(),
                numerator: num,
                denominator: sp.cap,
                ratio: f64::NAN,
            })
        })
        .collect::<Vec<_>>()
        .into_iter()
        .collect::<Result<Vec<_>>>()?;
    let rep_c = RatioReport::from_samples("quasiadd", raw_c, zero_thr);

    // The witness instances: banded ball and corridor around the anchor. The
    // full-ball potential doubles as the primary potential for the
    // weighted-inequality family, the mean-to-min scan, and potential.csv.
    let mut witness: BTreeMap<String, f64> = BTreeMap::new();
    let mut witness_samples: Vec<RatioSample> = Vec::new();
    let mut witness_u: Option<(Vec<u32>, Vec<f64>)> = None;
    let mut corridor_u: Option<Vec<f64>> = None;
    for wband in [WitnessBand::Full, WitnessBand::Mid] {
        let bp = witness_probe(&domain, anchor, WITNESS_RHO, wband);
        if !bp.nodes.is_empty() {
            let mut spec = PotentialSpec::new(&bp.nodes, p);
            spec.tol = Some(tol);
            let pot = solve_potential_with_weights(&domain, &node_w, &spec)?;
            let num = distance_mass(&domain, &weight, p, &bp.nodes);
            if pot.energy > zero_thr {
                let key = format!("a_{}", wband.tag());
                witness.insert(key.clone(), num / pot.energy);
                witness_samples.push(RatioSample {
                    tag: key,
                    numerator: num,
                    denominator: pot.energy,
                    ratio: num / pot.energy,
                });
            }
            if wband == WitnessBand::Full {
                witness_u = Some((bp.nodes, pot.u));
            }
        }
        let cp = witness_corridor(&domain, anchor, wdir, WITNESS_RHO, wband);
        if !cp.nodes.is_empty() {
            let mut spec = PotentialSpec::new(&cp.nodes, p);
            spec.tol = Some(tol);
            let pot = solve_potential_with_weights(&domain, &node_w, &spec)?;
            let num = partition_cap_sum(&domain, &node_w, &cover, &index, p, Some(tol), &cp.nodes)?;
            if pot.energy > zero_thr {
                let key = format!("c_{}", wband.tag());
                witness.insert(key.clone(), num / pot.energy);
                witness_samples.push(RatioSample {
                    tag: key,
                    numerator: num,
                    denominator: pot.energy,
                    ratio: num / pot.energy,
                });
            }
            if wband == WitnessBand::Full {
                corridor_u = Some(pot.u);
            }
        }
    }

    // Conditions (b) and (d) on ball unions: the witness chains plus the
    // seeded families.
    let mut ufams: Vec<UnionFamily> = unions.clone();
    for (_, uf) in &w_unions {
        if !uf.ball_ids.is_empty() {
            ufams.push(uf.clone());
        }
    }
    for (i, &id) in sampled.iter().take(2).enumerate() {
        ufams.push(UnionFamily {
            tag: format!("single_union_{i}"),
            ball_ids: vec![id],
        });
    }
    let uc = ball_union_conditions(&domain, &weight, &node_w, &cover, p, Some(tol), &ufams, &caps)?;
    let mut max_b = 0.0f64;
    let mut max_d = 0.0f64;
    let mut kappa_min = f64::INFINITY;
    let mut kappa_max = 0.0f64;
    let mut skipped_union = 0usize;
    for c in &uc {
        if c.denominator <= zero_thr {
            skipped_union += 1;
            continue;
        }
        max_b = max_b.max(c.ratio_b);
        max_d = max_d.max(c.ratio_d);
        if c.kappa.is_finite() {
            kappa_min = kappa_min.min(c.kappa);
            kappa_max = kappa_max.max(c.kappa);
        }
    }
    for (wband, uf) in &w_unions {
        if let Some(c) = uc.iter().find(|c| c.tag == uf.tag) {
            if c.denominator > zero_thr {
                witness.insert(format!("b_{}", wband.tag()), c.ratio_b);
                witness.insert(format!("d_{}", wband.tag()), c.ratio_d);
                witness_samples.push(RatioSample {
                    tag: format!("b_{}", wband.tag()),
                    numerator: c.mass_num,
                    denominator: c.denominator,
                    ratio: c.ratio_b,
                });
                witness_samples.push(RatioSample {
                    tag: format!("d_{}", wband.tag()),
                    numerator: c.cap_sum,
                    denominator: c.denominator,
                    ratio: c.ratio_d,
                });
            }
        }
    }

    // The primary potential: the full witness ball, or the first structured
    // probe when the anchor ball misses the grid entirely.
    let (primary_nodes, primary_u) = match witness_u {
        Some(pair) => pair,
        None => {
            let pr = &probes[0].0;
            let mut spec = PotentialSpec::new(&pr.nodes, p);
            spec.tol = Some(tol);
            let pot = solve_potential_with_weights(&domain, &node_w, &spec)?;
            (pr.nodes.clone(), pot.u)
        }
    };

    // Weighted-inequality family: equilibrium potentials, tents, distance
    // powers, and log cutoffs at the thin targets.
    let mut potentials: Vec<(String, Vec<f64>)> =
        vec![("potential_witness_full".into(), primary_u.clone())];
    if let Some(u) = corridor_u {
        potentials.push(("potential_corridor_full".into(), u));
    }
    let family = hardy_family(&domain, &cover, p, &potentials, &scn.thin_targets);
    let hardy = hardy_constant(&domain, &weight, p, &family);
    let hardy_log_cutoff_max = {
        let m = hardy
            .samples
            .iter()
            .filter(|s| s.tag.starts_with("log_cutoff"))
            .map(|s| s.ratio)
            .fold(0.0f64, f64::max);
        (m > 0.0).then_some(m)
    };

    let harnack = weak_harnack_scan(
        &domain,
        &weight,
        &primary_u,
        &primary_nodes,
        &cover,
        1.0,
        8.0,
    );

    // Fatness scan over the declared complement points.
    let mut fat_radii = Vec::new();
    let mut r = 8.0 * domain.h;
    while r <= domain.diam() / 8.0 && fat_radii.len() < 4 {
        fat_radii.push(r);
        r *= 2.0;
    }
    let fatness: Option<FatnessReport> = if scn.fatness_centers.is_empty() || fat_radii.is_empty()
    {
        None
    } else {
        Some(fatness_scan(
            &domain,
            &weight,
            &scn.fatness_centers,
            &fat_radii,
            p,
            Some(tol),
        )?)
    };

    let john = john_condition_report(&domain, &cover, 1.3, 2.0 / scn.cover_c, 0.3, 64);

    // Codimension estimates of the thin complement part (whole complement
    // when nothing is thin: the estimate then reports the fat side).
    let thin_prims: Vec<Primitive> = prims
        .iter()
        .filter(|pr| !pr.has_positive_measure(2))
        .cloned()
        .collect();
    let dicho_geometry = if thin_prims.is_empty() {
        prims.clone()
    } else {
        thin_prims
    };
    let q_grid: Vec<f64> = (1..=25).map(|i| i as f64 * 0.1).collect();
    let centers: Vec<Point> = if scn.thin_targets.is_empty() {
        let mut pts = Vec::new();
        for g in &dicho_geometry {
            pts.extend(g.sample_points(scn.bbox, domain.s0 / 2.0));
        }
        systematic_sample(pts.len(), 4).into_iter().map(|i| pts[i]).collect()
    } else {
        scn.thin_targets.clone()
    };
    let mut dicho_radii = Vec::new();
    let mut r = 8.0 * domain.h;
    while r <= domain.s0 && dicho_radii.len() < 5 {
        dicho_radii.push(r);
        r *= 2.0;
    }
    if dicho_radii.len() < 2 {
        dicho_radii = vec![4.0 * domain.h, 8.0 * domain.h];
    }
    let aikawa = aikawa_codim_estimate(&domain, &weight, &dicho_geometry, &q_grid, &centers, &dicho_radii)?;
    let mut scales = Vec::new();
    let mut s = domain.s0 / 2.0;
    while s >= 4.0 * domain.h && scales.len() < 5 {
        scales.push(s);
        s /= 2.0;
    }
    if scales.len() < 2 {
        scales = vec![8.0 * domain.h, 4.0 * domain.h];
    }
    let hb = hausdorff_codim_bracket(&domain, &weight, &dicho_geometry, &q_grid, &scales)?;
    let codim_a = if aikawa.infinite { 0.0 } else { aikawa.q_star };
    let side = dichotomy_probe(codim_a, p, 0.1);

    // Assemble CSV bodies.
    let mut ratios = String::from("kind,tag,numerator,denominator,ratio\n");
    for s in &rep_a.samples {
        let _ = writeln!(
            ratios,
            "mazya,{},{},{},{}",
            s.tag,
            fmt(s.numerator),
            fmt(s.denominator),
            fmt(s.ratio)
        );
    }
    for s in &rep_c.samples {
        let _ = writeln!(
            ratios,
            "quasiadd,{},{},{},{}",
            s.tag,
            fmt(s.numerator),
            fmt(s.denominator),
            fmt(s.ratio)
        );
    }
    for s in &witness_samples {
        let _ = writeln!(
            ratios,
            "witness,{},{},{},{}",
            s.tag,
            fmt(s.numerator),
            fmt(s.denominator),
            fmt(s.ratio)
        );
    }
    for c in &uc {
        if c.denominator <= zero_thr {
            continue;
        }
        let _ = writeln!(
            ratios,
            "union_b,{},{},{},{}",
            c.tag,
            fmt(c.mass_num),
            fmt(c.denominator),
            fmt(c.ratio_b)
        );
        let _ = writeln!(
            ratios,
            "union_d,{},{},{},{}",
            c.tag,
            fmt(c.cap_sum),
            fmt(c.denominator),
            fmt(c.ratio_d)
        );
        let _ = writeln!(
            ratios,
            "kappa,{},{},{},{}",
            c.tag,
            fmt(c.mass_num),
            fmt(c.cap_sum),
            fmt(c.kappa)
        );
    }
    for &(id, norm) in &per_ball {
        let b = cover.ball(id);
        let cap = caps_band[&id];
        let mu = crate::space::mass(&domain, &weight, &domain.ball_nodes(b.center, b.radius));
        let _ = writeln!(
            ratios,
            "band,ball_{},{},{},{}",
            id,
            fmt(cap * b.radius.powf(p)),
            fmt(mu),
            fmt(norm)
        );
    }
    if let Some(f) = &fatness {
        for s in &f.samples {
            let _ = writeln!(
                ratios,
                "fatness,c({} {})_r{},{},{},{}",
                fmt(s.center.x),
                fmt(s.center.y),
                fmt(s.radius),
                fmt(s.numerator),
                fmt(s.denominator),
                fmt(s.ratio)
            );
        }
    }
    for s in &hardy.samples {
        let _ = writeln!(
            ratios,
            "hardy,{},{},{},{}",
            s.tag,
            fmt(s.numerator),
            fmt(s.denominator),
            fmt(s.ratio)
        );
    }
    let _ = writeln!(
        ratios,
        "harnack,q1_ca8,{},{},{}",
        harnack.checked,
        harnack.violations,
        fmt(harnack.a_max)
    );

    let mut cover_csv = String::from("id,shell,cx,cy,radius,cap,normalized\n");
    let norm_by_id: BTreeMap<u32, f64> = per_ball.iter().copied().collect();
    for b in &cover.balls {
        let cap_s = caps.get(&b.id).map(|v| fmt(*v)).unwrap_or_default();
        let norm_s = norm_by_id.get(&b.id).map(|v| fmt(*v)).unwrap_or_default();
        let _ = writeln!(
            cover_csv,
            "{},{},{},{},{},{},{}",
            b.id,
            b.shell_k,
            fmt(b.center.x),
            fmt(b.center.y),
            fmt(b.radius),
            cap_s,
            norm_s
        );
    }

    let mut potential_csv = String::from("i,x,y,dist,u\n");
    for i in 0..domain.node_count() {
        if domain.in_omega[i] {
            let pt = domain.node_point(i);
            let _ = writeln!(
                potential_csv,
                "{},{},{},{},{}",
                i,
                fmt(pt.x),
                fmt(pt.y),
                fmt(domain.dist[i]),
                fmt(primary_u[i])
            );
        }
    }

    let report = CellReport {
        scenario: scn.name.clone(),
        p,
        h,
        level,
        nodes: domain.node_count(),
        omega_nodes: domain.omega_count,
        s0: domain.s0,
        zero_threshold: zero_thr,
        cover: CoverSummary {
            balls: cover.balls.len(),
            k_min: cover.k_min,
            k_max: cover.k_max,
            overlap_max: cover.overlap_max,
            coverage_defect: cover.coverage_defect,
            halved: cover.halved,
            dilated_overlap_l4: dil,
            dilation_hypothesis_ok: !dil_outside,
        },
        conditions: ConditionMaxima {
            mazya: rep_a.max_ratio,
            union_b: max_b,
            quasiadd: rep_c.max_ratio,
            union_d: max_d,
            skipped_zero: rep_a.skipped_zero + rep_c.skipped_zero + skipped_union,
        },
        witness,
        kappa_min: if kappa_min.is_finite() { kappa_min } else { 0.0 },
        kappa_max,
        band,
        band_points,
        hardy_max: hardy.max_ratio,
        hardy_log_cutoff_max,
        harnack,
        fatness: fatness.map(|f| FatnessSummary {
            min_ratio: f.min_ratio,
            max_ratio: f.max_ratio,
            samples: f.samples.len(),
        }),
        john: JohnSummary {
            l: john.l,
            a_required: john.a_required,
            c_required: john.c_required,
            fraction_valid: john.fraction_valid,
            examined: john.examined,
            offenders: john.offenders.len(),
        },
        dichotomy: DichotomySummary {
            codim_a,
            aikawa_infinite: aikawa.infinite,
            codim_h_low: hb.q_low,
            codim_h_high: hb.q_high,
            side,
        },
    };

    Ok(CellData {
        report,
        ratios_csv: ratios,
        cover_csv,
        potential_csv,
    })
}

fn consensus(vs: &[Verdict]) -> (Verdict, bool) {
    let b = vs.contains(&Verdict::Bounded);
    let d = vs.contains(&Verdict::Diverging);
    match (b, d) {
        (true, true) => (Verdict::Inconclusive, true),
        (false, true) => (Verdict::Diverging, false),
        (true, false) => (Verdict::Bounded, false),
        (false, false) => (Verdict::Inconclusive, false),
    }
}

fn verdict_str(v: Verdict) -> &'static str {
    match v {
        Verdict::Bounded => "bounded",
        Verdict::Diverging => "diverging",
        Verdict::Inconclusive => "inconclusive",
    }
}

/// Ladder of one witness instance across grid levels; None unless the
/// instance produced a value at every level.
fn instance_ladder(tag: &str, ladder: &[CellReport]) -> Option<InstanceLadder> {
    let mut values = Vec::with_capacity(ladder.len());
    for c in ladder {
        values.push(*c.witness.get(tag)?);
    }
    if values.is_empty() {
        return None;
    }
    let (growth, verdict) = growth_verdict(&values);
    Some(InstanceLadder {
        tag: tag.to_string(),
        values,
        growth,
        verdict,
    })
}

/// Every instance lower-bounds the condition supremum, so one diverging
/// ladder decides; otherwise the verdict follows the instance that is
/// largest at the finest level.
fn condition_verdict(instances: Vec<InstanceLadder>) -> ConditionVerdict {
    let last = |inst: &InstanceLadder| inst.values.last().copied().unwrap_or(0.0);
    let dominant_of = |want_div: bool| -> Option<usize> {
        instances
            .iter()
            .enumerate()
            .filter(|(_, inst)| !want_div || inst.verdict == Verdict::Diverging)
            .max_by(|(_, a), (_, b)| last(a).total_cmp(&last(b)))
            .map(|(i, _)| i)
    };
    let idx = dominant_of(true).or_else(|| dominant_of(false));
    match idx {
        Some(i) => ConditionVerdict {
            dominant: instances[i].tag.clone(),
            verdict: instances[i].verdict,
            instances,
        },
        None => ConditionVerdict {
            dominant: String::new(),
            verdict: Verdict::Inconclusive,
            instances,
        },
    }
}

fn grid_side(bbox: [f64; 4], h: f64) -> usize {
    let nx = ((bbox[1] - bbox[0]) / h).round() as usize + 1;
    let ny = ((bbox[3] - bbox[2]) / h).round() as usize + 1;
    nx.max(ny)
}

pub fn run_suite(cfg: &SuiteConfig, opts: &RunOptions) -> Result<RunOutcome> {
    cfg.validate()?;
    let seed = opts.seed.unwrap_or(cfg.seed);
    std::fs::create_dir_all(&opts.out)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(opts.jobs)
        .build()
        .map_err(|e| CapquadError::Config {
            location: "jobs".into(),
            message: e.to_string(),
        })?;

    let mut runs: Vec<RunStatus> = Vec::new();
    let mut cells: Vec<CellReport> = Vec::new();
    let mut verdict_rows = String::from(
        "scenario,p,condition,instance,grid_level,value,ladder_growth,instance_verdict,condition_verdict\n",
    );
    let mut timings = Vec::new();

    for scn in &cfg.scenarios {
        if let Some(f) = &opts.filter {
            if &scn.name != f {
                continue;
            }
        }
        for ps in &scn.p_values {
            let levels: Vec<(usize, f64)> = scn
                .grid_levels
                .iter()
                .copied()
                .enumerate()
                .filter(|&(_, h)| {
                    opts.grid_max
                        .map(|m| grid_side(scn.bbox, h) <= m)
                        .unwrap_or(true)
                })
                .collect();
            if levels.is_empty() {
                runs.push(RunStatus {
                    scenario: scn.name.clone(),
                    p: ps.p,
                    status: "skipped".into(),
                    expected: ps.expected,
                    consensus: Verdict::Inconclusive,
                    split: false,
                    hardy_matches_consensus: true,
                    mazya: condition_verdict(vec![]),
                    union_b: condition_verdict(vec![]),
                    quasiadd: condition_verdict(vec![]),
                    union_d: condition_verdict(vec![]),
                    hardy: condition_verdict(vec![]),
                    outputs: vec![],
                });
                continue;
            }

            let mut ladder: Vec<CellReport> = Vec::new();
            let mut outputs: Vec<String> = Vec::new();
            let mut error: Option<String> = None;
            for &(li, h) in &levels {
                let t0 = Instant::now();
                let data = pool.install(|| run_cell(scn, ps.p, h, li, seed));
                match data {
                    Ok(data) => {
                        let rel = format!("{}/p{}/h{}", scn.name, ps.p, h);
                        let dir = opts.out.join(&rel);
                        std::fs::create_dir_all(&dir)?;
                        std::fs::write(dir.join("ratios.csv"), &data.ratios_csv)?;
                        let mut rj = serde_json::to_string_pretty(&data.report)?;
                        rj.push('\n');
                        std::fs::write(dir.join("report.json"), rj)?;
                        std::fs::write(dir.join("potential.csv"), &data.potential_csv)?;
                        std::fs::write(dir.join("cover.csv"), &data.cover_csv)?;
                        for f in ["ratios.csv", "report.json", "potential.csv", "cover.csv"] {
                            outputs.push(format!("{rel}/{f}"));
                        }
                        timings.push((
                            format!("{} p{} h{}", scn.name, ps.p, h),
                            t0.elapsed().as_millis() as u64,
                        ));
                        ladder.push(data.report.clone());
                        cells.push(data.report);
                    }
                    Err(e) => {
                        error = Some(format!("level h={h}: {e}"));
                        break;
                    }
                }
            }

            let inst = |tags: &[&str]| -> Vec<InstanceLadder> {
                tags.iter()
                    .filter_map(|t| instance_ladder(t, &ladder))
                    .collect()
            };
            let va = condition_verdict(inst(&["a_full", "a_mid"]));
            let vb = condition_verdict(inst(&["b_full", "b_mid"]));
            let vc = condition_verdict(inst(&["c_full", "c_mid"]));
            let vd = condition_verdict(inst(&["d_full", "d_mid"]));
            let mut h_inst: Vec<InstanceLadder> = Vec::new();
            if !ladder.is_empty() {
                let values: Vec<f64> = ladder.iter().map(|c| c.hardy_max).collect();
                let (growth, verdict) = growth_verdict(&values);
                h_inst.push(InstanceLadder {
                    tag: "hardy_all".into(),
                    values,
                    growth,
                    verdict,
                });
                let logs: Option<Vec<f64>> =
                    ladder.iter().map(|c| c.hardy_log_cutoff_max).collect();
                if let Some(values) = logs {
                    let (growth, verdict) = growth_verdict(&values);
                    h_inst.push(InstanceLadder {
                        tag: "hardy_log".into(),
                        values,
                        growth,
                        verdict,
                    });
                }
            }
            let vh = condition_verdict(h_inst);
            let (cons, split) = consensus(&[va.verdict, vb.verdict, vc.verdict, vd.verdict]);
            let hardy_matches = vh.verdict == cons
                || vh.verdict == Verdict::Inconclusive
                || cons == Verdict::Inconclusive;

            for (cname, cv) in [
                ("mazya", &va),
                ("union_b", &vb),
                ("quasiadd", &vc),
                ("union_d", &vd),
                ("hardy", &vh),
            ] {
                let cvs = verdict_str(cv.verdict);
                for il in &cv.instances {
                    let ivs = verdict_str(il.verdict);
                    for (j, &(li, _)) in levels.iter().enumerate() {
                        if j < il.values.len() {
                            let _ = writeln!(
                                verdict_rows,
                                "{},{},{},{},{},{},{},{},{}",
                                scn.name,
                                ps.p,
                                cname,
                                il.tag,
                                li,
                                fmt(il.values[j]),
                                fmt(il.growth),
                                ivs,
                                cvs
                            );
                        }
                    }
                }
            }

            let status = if let Some(e) = error {
                format!("error: {e}")
            } else if split {
                "split_verdict".into()
            } else if ps.expected.is_some() && Some(cons) != ps.expected {
                "verdict_mismatch".into()
            } else {
                "ok".into()
            };
            runs.push(RunStatus {
                scenario: scn.name.clone(),
                p: ps.p,
                status,
                expected: ps.expected,
                consensus: cons,
                split,
                hardy_matches_consensus: hardy_matches,
                mazya: va,
                union_b: vb,
                quasiadd: vc,
                union_d: vd,
                hardy: vh,
                outputs,
            });
        }
    }

    let all_ok = runs.iter().all(|r| {
        !r.split && (r.expected.is_none() || r.status == "ok")
    });
    let manifest = RunManifest {
        suite: cfg.suite.clone(),
        version: env!("CARGO_PKG_VERSION").to_string(),
        seed,
        runs,
        all_expectations_met: all_ok,
    };

    std::fs::write(opts.out.join("verdicts.csv"), verdict_rows)?;
    let mut mj = serde_json::to_string_pretty(&manifest)?;
    mj.push('\n');
    std::fs::write(opts.out.join("manifest.json"), mj)?;
    // Wall-clock lives apart from the deterministic outputs so reruns stay
    // byte-identical everywhere else.
    let mut tj = String::from("{\n");
    let total: u64 = timings.iter().map(|t| t.1).sum();
    let _ = writeln!(tj, "  \"total_ms\": {total},");
    let _ = writeln!(tj, "  \"cells\": [");
    for (i, (name, ms)) in timings.iter().enumerate() {
        let comma = if i + 1 < timings.len() { "," } else { "" };
        let _ = writeln!(tj, "    {{\"cell\": \"{name}\", \"ms\": {ms}}}{comma}");
    }
    tj.push_str("  ]\n}\n");
    std::fs::write(opts.out.join("timings.json"), tj)?;

    Ok(RunOutcome {
        manifest,
        cells,
        out_dir: opts.out.clone(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::builtin_suite;

    #[test]
    fn coarse_cell_produces_consistent_report() {
        let suite = builtin_suite();
        let scn = &suite.scenarios[0];
        let data = run_cell(scn, 2.0, 1.0 / 16.0, 0, 7).unwrap();
        let r = &data.report;
        assert_eq!(r.scenario, "fat_square");
        assert_eq!(r.cover.coverage_defect, 0);
        assert!(r.conditions.quasiadd >= 1.0 - 4.0 * 1e-6);
        assert!(r.conditions.mazya > 0.0);
        for key in ["a_full", "c_full", "b_full", "d_full"] {
            let v = r.witness.get(key).copied().unwrap_or(f64::NAN);
            assert!(v.is_finite() && v > 0.0, "witness {key} = {v}");
        }
        assert!(r.band.max >= r.band.min && r.band.min > 0.0);
        assert!(r.harnack.violations == 0);
        assert!(data.ratios_csv.lines().count() > 10);
        assert!(data.cover_csv.lines().count() == r.cover.balls + 1);
    }

    #[test]
    fn suite_runner_emits_deterministic_files() {
        let mut suite = builtin_suite();
        suite.scenarios.truncate(1);
        suite.scenarios[0].grid_levels = vec![1.0 / 16.0];
        suite.scenarios[0].p_values.truncate(1);
        let tmp = tempfile::tempdir().unwrap();
        let run = |dir: &std::path::Path| {
            let opts = RunOptions {
                out: dir.to_path_buf(),
                jobs: 2,
                seed: None,
                filter: None,
                grid_max: None,
            };
            run_suite(&suite, &opts).unwrap()
        };
        let a = run(&tmp.path().join("a"));
        let b = run(&tmp.path().join("b"));
        assert_eq!(a.manifest.runs.len(), 1);
        for rel in &a.manifest.runs[0].outputs {
            let fa = std::fs::read(tmp.path().join("a").join(rel)).unwrap();
            let fb = std::fs::read(tmp.path().join("b").join(rel)).unwrap();
            assert_eq!(fa, fb, "output {rel} differs between reruns");
        }
        let ma = std::fs::read(tmp.path().join("a/manifest.json")).unwrap();
        let mb = std::fs::read(tmp.path().join("b/manifest.json")).unwrap();
        assert_eq!(ma, mb);
        let _ = b;
    }

    fn ladder(tag: &str, values: &[f64]) -> InstanceLadder {
        let (growth, verdict) = growth_verdict(values);
        InstanceLadder {
            tag: tag.into(),
            values: values.to_vec(),
            growth,
            verdict,
        }
    }

    #[test]
    fn condition_follows_divergence_then_dominance() {
        // One diverging instance decides even when a flat one sits higher.
        let cv = condition_verdict(vec![
            ladder("a_full", &[5.0, 5.1, 5.15]),
            ladder("a_mid", &[1.0, 1.4, 1.9]),
        ]);
        assert_eq!(cv.verdict, Verdict::Diverging);
        assert_eq!(cv.dominant, "a_mid");
        // Without divergence the largest finest-level instance speaks.
        let cv = condition_verdict(vec![
            ladder("a_full", &[1.5, 1.6, 1.63]),
            ladder("a_mid", &[0.9, 1.05, 1.2]),
        ]);
        assert_eq!(cv.verdict, Verdict::Bounded);
        assert_eq!(cv.dominant, "a_full");
        // No instances at all: nothing to say.
        let cv = condition_verdict(vec![]);
        assert_eq!(cv.verdict, Verdict::Inconclusive);
        assert!(cv.dominant.is_empty());
        // Single-level ladders cannot certify growth either way.
        let cv = condition_verdict(vec![ladder("a_full", &[2.0])]);
        assert_eq!(cv.verdict, Verdict::Inconclusive);
    }

    #[test]
    fn consensus_tolerates_inconclusive_but_flags_splits() {
        let (c, split) = consensus(&[
            Verdict::Bounded,
            Verdict::Bounded,
            Verdict::Inconclusive,
            Verdict::Bounded,
        ]);
        assert_eq!(c, Verdict::Bounded);
        assert!(!split);
        let (c2, split2) = consensus(&[
            Verdict::Bounded,
            Verdict::Diverging,
            Verdict::Bounded,
            Verdict::Bounded,
        ]);
        assert_eq!(c2, Verdict::Inconclusive);
        assert!(split2);
    }
}
