//! Named experiment setups: a domain, a grid ladder, exponents, and the probe
//! families measured on them.

use crate::error::{CapquadError, Result};
use crate::geometry::{Point, Primitive};
use crate::quasiadd::Verdict;
use crate::space::MeasureWeight;
use serde::{Deserialize, Serialize};

/// One exponent to run, with an optional regression verdict. Runs without an
/// expectation never fail the suite.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PSpec {
    pub p: f64,
    #[serde(default)]
    pub expected: Option<Verdict>,
}

/// An adversarial probe segment: starts 2h past the target along `dir` (so
/// the tip tracks the lattice pitch) and extends to `len`.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SegmentSpec {
    pub target: Point,
    pub dir: Point,
    pub len: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FamilySpec {
    /// Single cover balls used as probe sets.
    pub singles: usize,
    /// Random unions of nearby sampled balls.
    pub unions: usize,
    pub union_size: usize,
    /// Probe disks of radius m*h around each thin target.
    pub ring_multiples: Vec<f64>,
    /// Cover balls per shell whose capacities are cached.
    pub shell_quota: usize,
}

impl Default for FamilySpec {
    fn default() -> Self {
        FamilySpec {
            singles: 4,
            unions: 2,
            union_size: 8,
            ring_multiples: vec![2.0, 4.0],
            shell_quota: 3,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    /// [x0, x1, y0, y1]
    pub bbox: [f64; 4],
    pub primitives: Vec<Primitive>,
    #[serde(default = "default_weight")]
    pub weight: MeasureWeight,
    pub p_values: Vec<PSpec>,
    #[serde(default = "default_cover_c")]
    pub cover_c: f64,
    /// Grid pitches, strictly decreasing.
    pub grid_levels: Vec<f64>,
    #[serde(default)]
    pub families: FamilySpec,
    /// Boundary points where the complement is thin; ring probes, radial
    /// strings, and log cutoffs concentrate here.
    #[serde(default)]
    pub thin_targets: Vec<Point>,
    #[serde(default)]
    pub probe_segments: Vec<SegmentSpec>,
    /// Complement points for the fatness scan.
    #[serde(default)]
    pub fatness_centers: Vec<Point>,
}

fn default_weight() -> MeasureWeight {
    MeasureWeight::Lebesgue
}

fn default_cover_c() -> f64 {
    1.0 / 12.0
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SuiteConfig {
    pub suite: String,
    #[serde(default = "default_seed")]
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
}

fn default_seed() -> u64 {
    7
}

impl SuiteConfig {
    pub fn validate(&self) -> Result<()> {
        let mut names = std::collections::BTreeSet::new();
        for s in &self.scenarios {
            if !names.insert(s.name.clone()) {
                return Err(CapquadError::Config {
                    location: format!("scenarios.{}", s.name),
                    message: "duplicate scenario name".into(),
                });
            }
            s.validate()?;
        }
        Ok(())
    }

    pub fn from_json(text: &str) -> Result<SuiteConfig> {
        let cfg: SuiteConfig =
            serde_json::from_str(text).map_err(|e| CapquadError::Config {
                location: format!("line {} column {}", e.line(), e.column()),
                message: e.to_string(),
            })?;
        cfg.validate()?;
        Ok(cfg)
    }
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| {
            Err(CapquadError::Config {
                location: format!("scenarios.{}", self.name),
                message: msg,
            })
        };
        if self.grid_levels.is_empty() {
            return err("grid_levels is empty".into());
        }
        if !self
            .grid_levels
            .windows(2)
            .all(|w| w[1] < w[0] && w[1] > 0.0)
            || self.grid_levels[0] <= 0.0
        {
            return err(format!(
                "grid_levels must be strictly decreasing and positive, got {:?}",
                self.grid_levels
            ));
        }
        if self.primitives.is_empty() {
            return err("primitives is empty".into());
        }
        if !(0.0..=0.5).contains(&self.cover_c) || self.cover_c == 0.0 {
            return err(format!("cover_c = {} outside (0, 1/2]", self.cover_c));
        }
        if self.p_values.is_empty() {
            return err("p_values is empty".into());
        }
        for ps in &self.p_values {
            if ps.p <= 1.0 {
                return err(format!("p = {} must exceed 1", ps.p));
            }
        }
        self.weight.validate(2)?;
        Ok(())
    }

    /// Primitives adjusted to the pitch: a Cantor iterate declared with depth
    /// 0 is deepened until its segments fall below one cell, so each level
    /// sees the set at its own resolution.
    pub fn primitives_for(&self, h: f64) -> Vec<Primitive> {
        self.primitives
            .iter()
            .map(|prim| match prim {
                Primitive::CantorIterate { a, b, y, depth: 0 } => {
                    let depth = ((b - a) / h).log(3.0).ceil().max(1.0) as u32 + 1;
                    Primitive::CantorIterate {
                        a: *a,
                        b: *b,
                        y: *y,
                        depth,
                    }
                }
                other => other.clone(),
            })
            .collect()
    }
}

/// The five built-in setups exercised by the regression suite.
///
/// The shared grid ladder refines by 3: coarse steps move log(1/h) far enough
/// per level that logarithmically divergent constants clear the decision
/// bands within three levels, while every side stays at or under 512 cells at
/// the bottom. All pitches divide the anchor coordinates (eighths), so the
/// witness anchors land on lattice nodes at every level.
pub fn builtin_scenarios() -> Vec<Scenario> {
    let disk = Primitive::DiskExterior {
        center: Point::new(0.0, 0.0),
        radius: 1.0,
    };
    let ladder = vec![1.0 / 24.0, 1.0 / 72.0, 1.0 / 216.0];
    // Pairwise gaps 0.75, wall clearance 0.625: a ball of radius 1/2 around
    // any cloud point sees exactly one puncture and stays off the walls.
    let cloud = vec![
        Point::new(-0.375, -0.375),
        Point::new(0.375, -0.375),
        Point::new(-0.375, 0.375),
        Point::new(0.375, 0.375),
    ];

    vec![
        Scenario {
            name: "fat_square".into(),
            bbox: [-0.75, 0.75, -0.75, 0.75],
            primitives: vec![Primitive::RectExterior {
                min: Point::new(-0.5, -0.5),
                max: Point::new(0.5, 0.5),
            }],
            weight: MeasureWeight::Lebesgue,
            p_values: vec![
                PSpec { p: 1.5, expected: Some(Verdict::Bounded) },
                PSpec { p: 2.0, expected: Some(Verdict::Bounded) },
                PSpec { p: 3.0, expected: Some(Verdict::Bounded) },
            ],
            cover_c: 1.0 / 12.0,
            grid_levels: ladder.clone(),
            families: FamilySpec::default(),
            thin_targets: vec![],
            probe_segments: vec![SegmentSpec {
                target: Point::new(0.5, 0.0),
                dir: Point::new(-1.0, 0.0),
                len: 0.5,
            }],
            fatness_centers: vec![
                Point::new(0.5, 0.0),
                Point::new(0.0, 0.5),
                Point::new(0.5, 0.5),
            ],
        },
        Scenario {
            name: "punctured_disk".into(),
            bbox: [-1.125, 1.125, -1.125, 1.125],
            primitives: vec![
                disk.clone(),
                Primitive::Point { at: Point::new(0.0, 0.0) },
            ],
            weight: MeasureWeight::Lebesgue,
            p_values: vec![
                PSpec { p: 1.5, expected: Some(Verdict::Bounded) },
                PSpec { p: 2.0, expected: Some(Verdict::Diverging) },
            ],
            cover_c: 1.0 / 12.0,
            grid_levels: ladder.clone(),
            families: FamilySpec::default(),
            thin_targets: vec![Point::new(0.0, 0.0)],
            probe_segments: vec![SegmentSpec {
                target: Point::new(0.0, 0.0),
                dir: Point::new(1.0, 0.0),
                len: 0.5,
            }],
            fatness_centers: vec![Point::new(0.0, 0.0), Point::new(0.0, 1.0)],
        },
        Scenario {
            name: "thin_pointcloud".into(),
            bbox: [-1.125, 1.125, -1.125, 1.125],
            primitives: vec![
                Primitive::RectExterior {
                    min: Point::new(-1.0, -1.0),
                    max: Point::new(1.0, 1.0),
                },
                Primitive::PointCloud { points: cloud.clone() },
            ],
            weight: MeasureWeight::Lebesgue,
            p_values: vec![
                PSpec { p: 1.5, expected: Some(Verdict::Bounded) },
                PSpec { p: 2.0, expected: None },
            ],
            cover_c: 1.0 / 12.0,
            grid_levels: ladder.clone(),
            families: FamilySpec::default(),
            thin_targets: vec![cloud[0], cloud[1]],
            probe_segments: vec![SegmentSpec {
                // Diagonal toward the center: the ray keeps distance >= 0.53
                // from the other three punctures.
                target: cloud[0],
                dir: Point::new(1.0, 1.0),
                len: 0.5,
            }],
            fatness_centers: vec![cloud[0], Point::new(1.0, 0.0)],
        },
        Scenario {
            name: "combo".into(),
            bbox: [-1.125, 1.125, -1.125, 1.125],
            primitives: vec![
                disk,
                Primitive::Point { at: Point::new(0.375, 0.125) },
            ],
            weight: MeasureWeight::Lebesgue,
            p_values: vec![PSpec { p: 1.5, expected: Some(Verdict::Bounded) }],
            cover_c: 1.0 / 12.0,
            grid_levels: ladder.clone(),
            families: FamilySpec::default(),
            thin_targets: vec![Point::new(0.375, 0.125)],
            probe_segments: vec![SegmentSpec {
                // Inward, away from the nearby circle: a ball of radius 1/2
                // around the puncture clears the outer boundary by 0.105.
                target: Point::new(0.375, 0.125),
                dir: Point::new(-3.0, -1.0),
                len: 0.5,
            }],
            fatness_centers: vec![Point::new(0.375, 0.125), Point::new(0.0, 1.0)],
        },
        Scenario {
            name: "cantor_axis".into(),
            bbox: [-0.875, 0.875, -0.875, 0.875],
            primitives: vec![
                Primitive::RectExterior {
                    min: Point::new(-0.75, -0.75),
                    max: Point::new(0.75, 0.75),
                },
                // depth 0 = resolution-matched iterate, see primitives_for.
                Primitive::CantorIterate { a: -0.5, b: 0.5, y: 0.0, depth: 0 },
            ],
            weight: MeasureWeight::Lebesgue,
            p_values: vec![PSpec { p: 1.37, expected: None }],
            cover_c: 1.0 / 12.0,
            grid_levels: ladder,
            families: FamilySpec::default(),
            thin_targets: vec![
                Point::new(-1.0 / 6.0, 0.0),
                Point::new(1.0 / 6.0, 0.0),
            ],
            probe_segments: vec![SegmentSpec {
                // Gap endpoint of the set, marching into open space above.
                target: Point::new(-1.0 / 6.0, 0.0),
                dir: Point::new(0.0, 1.0),
                len: 0.5,
            }],
            fatness_centers: vec![
                Point::new(-1.0 / 6.0, 0.0),
                Point::new(0.75, 0.0),
            ],
        },
    ]
}

pub fn builtin_suite() -> SuiteConfig {
    SuiteConfig {
        suite: "core".into(),
        seed: 7,
        scenarios: builtin_scenarios(),
    }
}

/// Column-by-column documentation of the emitted files for one scenario.
pub fn explain(name: &str) -> Result<String> {
    let all = builtin_scenarios();
    let scn = all.iter().find(|s| s.name == name).ok_or_else(|| {
        CapquadError::UnknownScenario {
            name: name.into(),
            known: all
                .iter()
                .map(|s| s.name.as_str())
                .collect::<Vec<_>>()
                .join(", "),
        }
    })?;
    let mut t = String::new();
    let p_list = scn
        .p_values
        .iter()
        .map(|ps| format!("{}", ps.p))
        .collect::<Vec<_>>()
        .join(", ");
    t.push_str(&format!("scenario {}\n", scn.name));
    t.push_str(&format!(
        "  domain: complement of {} primitive(s) in box [{}, {}] x [{}, {}]\n",
        scn.primitives.len(),
        scn.bbox[0],
        scn.bbox[1],
        scn.bbox[2],
        scn.bbox[3]
    ));
    t.push_str(&format!(
        "  exponents p: {p_list}; cover parameter c = {}; grid pitches {:?}\n\n",
        scn.cover_c, scn.grid_levels
    ));
    t.push_str(concat!(
        "emitted columns (ratios.csv: kind,tag,numerator,denominator,ratio)\n",
        "  mazya      numerator   = sum over probe nodes of w(x) h^2 d(x)^-p (the integral of d^-p over E)\n",
        "             denominator = cap_p(E, Omega), the p-energy of the probe's equilibrium potential\n",
        "             a bounded max ratio over all E is the distance-mass capacity condition\n",
        "  quasiadd   numerator   = sum over partition pieces of cap_p(E_i, Omega), each probe node\n",
        "             charged to its smallest containing cover ball (collar leftovers form one piece)\n",
        "             denominator = cap_p(E, Omega)\n",
        "             a bounded max ratio means capacity adds up across the cover, reversing subadditivity\n",
        "  union_b    same as mazya but E = a union of cover balls\n",
        "  union_d    numerator   = sum of cap_p(B_i, Omega) over the member balls\n",
        "             denominator = cap_p(union, Omega)\n",
        "  kappa      union_b numerator / union_d numerator (ball-mass vs capacity-sum comparability)\n",
        "  witness    the anchored ladder instances behind the verdicts: tags a/b/c/d x full/mid,\n",
        "             where a = banded-ball mazya ratio, b/d = union conditions on the along-ray ball\n",
        "             chain, c = decomposition ratio of a one-node corridor; full = fixed ball\n",
        "             B(anchor, 1/2), mid = the sliding log-band between h^(3/4) and h^(1/4) depths\n",
        "  band       per-ball normalized capacity cap_p(B, Omega) rad(B)^p / mu(B); a two-sided\n",
        "             band across all balls is the side condition the union conditions rely on\n",
        "  fatness    cap_p(complement n B, 2B) / cap_p(B, 2B) at complement points: uniform lower\n",
        "             bounds certify a fat (nondegenerate) boundary piece\n",
        "  hardy      numerator   = sum of w h^2 |u|^p d^-p for a trial u vanishing off Omega\n",
        "             denominator = discrete p-energy of u\n",
        "             the max over the family lower-bounds the best constant in the weighted inequality\n",
        "  harnack    mean of u over 2B (exponent q) vs min over B for balls with C_A B inside\n",
        "             Omega minus E; the max ratio is the empirical mean-to-min constant\n",
        "\n",
        "report.json: per-level maxima of the four conditions (a = mazya, b = union_b, c = quasiadd,\n",
        "d = union_d), the witness instance values, the normalized-capacity band, hardy and harnack\n",
        "summaries, cover statistics (overlap, coverage defect, dilated overlap), chain-condition\n",
        "report, and the codimension estimates with their side-of-p classification.\n",
        "\n",
        "verdicts.csv (suite root): one row per (scenario, p, condition, witness instance, level)\n",
        "with the instance value, its ladder growth, and verdicts. An instance is bounded when the\n",
        "final refinement moves it < 10%, diverging when it grows >= 50% over the ladder,\n",
        "inconclusive between. A condition diverges if any of its instances does (each instance is a\n",
        "lower bound for the condition's supremum); otherwise it follows its largest instance. The\n",
        "scenario passes when no condition says bounded while another says diverging and the\n",
        "consensus matches the expected verdict, if one is declared.\n",
    ));
    match scn.name.as_str() {
        "fat_square" => t.push_str(
            "\nfat_square: every boundary point of the square complement carries capacity at all\n\
             scales, so all four constants should stay flat as the grid refines, at every p.\n",
        ),
        "punctured_disk" => t.push_str(
            "\npunctured_disk: the isolated boundary point is invisible to capacity at p = 2 but\n\
             carries distance-mass, so all four constants should blow up together under refinement;\n\
             at p = 1.5 the puncture has positive relative capacity at every scale and the\n\
             constants should stay flat.\n",
        ),
        "thin_pointcloud" => t.push_str(
            "\nthin_pointcloud: finitely many punctures inside a fat square behave like the single\n\
             puncture at subcritical p = 1.5: flat constants expected.\n",
        ),
        "combo" => t.push_str(
            "\ncombo: a fat outer circle plus one interior puncture; at p = 1.5 the puncture is\n\
             harmless and the constants should stay flat.\n",
        ),
        "cantor_axis" => t.push_str(
            "\ncantor_axis: the middle-thirds set has interior codimension about 1.369; p = 1.37\n\
             sits essentially on top of it, so growth rates near the decision bands and an\n\
             inconclusive verdict are the expected outcome.\n",
        ),
        _ => {}
    }
    Ok(t)
}

/// One line per scenario: name, exponents, ladder, expectations.
pub fn list_text() -> String {
    let mut t = String::new();
    for s in builtin_scenarios() {
        let ps = s
            .p_values
            .iter()
            .map(|ps| {
                let e = match ps.expected {
                    Some(Verdict::Bounded) => "bounded",
                    Some(Verdict::Diverging) => "diverging",
                    Some(Verdict::Inconclusive) => "inconclusive",
                    None => "unpinned",
                };
                format!("p={} ({e})", ps.p)
            })
            .collect::<Vec<_>>()
            .join(", ");
        t.push_str(&format!(
            "{:<16} {}; h in {:?}\n",
            s.name, ps, s.grid_levels
        ));
    }
    t
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn builtins_validate_and_have_unique_names() {
        let suite = builtin_suite();
        suite.validate().unwrap();
        assert_eq!(suite.scenarios.len(), 5);
    }

    #[test]
    fn increasing_grid_levels_are_rejected() {
        let mut suite = builtin_suite();
        suite.scenarios[0].grid_levels = vec![1.0 / 64.0, 1.0 / 16.0];
        let err = suite.validate().unwrap_err();
        assert!(err.to_string().contains("strictly decreasing"));
    }

    #[test]
    fn unknown_primitive_kind_is_named_in_the_error() {
        let json = r#"{
            "suite": "x",
            "scenarios": [{
                "name": "bad",
                "bbox": [0, 1, 0, 1],
                "primitives": [{"kind": "moebius_strip"}],
                "p_values": [{"p": 2.0}],
                "grid_levels": [0.25]
            }]
        }"#;
        let err = SuiteConfig::from_json(json).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("moebius_strip"), "{msg}");
        assert!(msg.contains("line"), "{msg}");
    }

    #[test]
    fn cantor_depth_tracks_resolution() {
        let scn = builtin_scenarios().pop().unwrap();
        let prims = scn.primitives_for(1.0 / 64.0);
        let depth = prims
            .iter()
            .find_map(|p| match p {
                Primitive::CantorIterate { depth, .. } => Some(*depth),
                _ => None,
            })
            .unwrap();
        // Segments of length 3^-depth must drop below one cell: 3^5 > 64.
        assert!(depth >= 5, "depth {depth}");
        assert!(3f64.powi(depth as i32) * (1.0 / 64.0) >= 1.0);
    }

    #[test]
    fn explain_names_every_builtin_and_rejects_others() {
        for s in builtin_scenarios() {
            let text = explain(&s.name).unwrap();
            assert!(text.contains("mazya"));
            assert!(text.contains(&s.name));
        }
        let err = explain("nope").unwrap_err().to_string();
        assert!(err.contains("fat_square"));
    }

    #[test]
    fn suite_round_trips_through_json() {
        let suite = builtin_suite();
        let text = serde_json::to_string_pretty(&suite).unwrap();
        let back = SuiteConfig::from_json(&text).unwrap();
        assert_eq!(back.scenarios.len(), suite.scenarios.len());
        assert_eq!(back.scenarios[1].name, "punctured_disk");
        assert_eq!(back.scenarios[1].p_values[1].expected, Some(Verdict::Diverging));
    }
}
