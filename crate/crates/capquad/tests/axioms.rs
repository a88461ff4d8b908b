//! Randomized structural properties of the discrete capacity: monotonicity,
//! subadditivity, the comparison principle, and restart stability.

use capquad::capacity::{cap_p, default_tol, solve_potential, PotentialSpec};
use capquad::geometry::{Point, Primitive};
use capquad::space::{GridDomain, MeasureWeight};
use proptest::prelude::*;

const H: f64 = 1.0 / 32.0;

fn unit_box() -> GridDomain {
    GridDomain::build(
        2,
        [0.0, 1.0, 0.0, 1.0],
        H,
        vec![Primitive::RectExterior {
            min: Point::new(0.0, 0.0),
            max: Point::new(1.0, 1.0),
        }],
    )
    .unwrap()
}

fn union(a: &[u32], b: &[u32]) -> Vec<u32> {
    let mut out: Vec<u32> = a.iter().chain(b.iter()).copied().collect();
    out.sort_unstable();
    out.dedup();
    out
}

fn arb_p() -> impl Strategy<Value = f64> {
    prop_oneof![Just(1.5), Just(2.0), Just(3.0)]
}

fn arb_center() -> impl Strategy<Value = Point> {
    ((0.3f64..0.7), (0.3f64..0.7)).prop_map(|(x, y)| Point::new(x, y))
}

fn arb_radius() -> impl Strategy<Value = f64> {
    3.0 * H..0.15
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 24, ..ProptestConfig::default() })]

    #[test]
    fn capacity_monotone_in_the_probe_set(p in arb_p(), c in arb_center(), r in arb_radius(), grow in 0.02f64..0.08) {
        let d = unit_box();
        let w = MeasureWeight::Lebesgue;
        let small = d.ball_nodes(c, r);
        let large = d.ball_nodes(c, r + grow);
        let tol = default_tol(p);
        let a = cap_p(&d, &w, &PotentialSpec::new(&small, p)).unwrap().value;
        let b = cap_p(&d, &w, &PotentialSpec::new(&large, p)).unwrap().value;
        prop_assert!(a <= b * (1.0 + 2.0 * tol) + 2.0 * tol, "cap {a} > cap {b} of superset");
    }

    #[test]
    fn capacity_subadditive_on_unions(p in arb_p(),
                                      c1 in arb_center(), r1 in arb_radius(),
                                      c2 in arb_center(), r2 in arb_radius()) {
        let d = unit_box();
        let w = MeasureWeight::Lebesgue;
        let e = d.ball_nodes(c1, r1);
        let f = d.ball_nodes(c2, r2);
        let ef = union(&e, &f);
        let tol = default_tol(p);
        let ce = cap_p(&d, &w, &PotentialSpec::new(&e, p)).unwrap().value;
        let cf = cap_p(&d, &w, &PotentialSpec::new(&f, p)).unwrap().value;
        let cu = cap_p(&d, &w, &PotentialSpec::new(&ef, p)).unwrap().value;
        prop_assert!(
            cu <= (ce + cf) * (1.0 + 4.0 * tol) + 4.0 * tol,
            "cap(E u F) = {cu} > {ce} + {cf}"
        );
    }

    #[test]
    fn potentials_respect_the_comparison_principle(c in arb_center(), r in arb_radius(), grow in 0.02f64..0.08) {
        let d = unit_box();
        let w = MeasureWeight::Lebesgue;
        let small = d.ball_nodes(c, r);
        let large = d.ball_nodes(c, r + grow);
        let mut spec_small = PotentialSpec::new(&small, 2.0);
        spec_small.tol = Some(1e-8);
        let mut spec_large = PotentialSpec::new(&large, 2.0);
        spec_large.tol = Some(1e-8);
        let us = solve_potential(&d, &w, &spec_small).unwrap();
        let ul = solve_potential(&d, &w, &spec_large).unwrap();
        for (&a, &b) in us.u.iter().zip(ul.u.iter()) {
            prop_assert!(a <= b + 1e-5, "u_small = {a} above u_large = {b}");
        }
    }

    #[test]
    fn capacity_grows_when_the_window_shrinks(p in arb_p(), c in arb_center(), r in 3.0 * H..0.1) {
        let d = unit_box();
        let w = MeasureWeight::Lebesgue;
        let e = d.ball_nodes(c, r);
        let tol = default_tol(p);
        let tight = cap_p(&d, &w, &PotentialSpec::new(&e, p).restricted(c, r + 0.06))
            .unwrap()
            .value;
        let loose = cap_p(&d, &w, &PotentialSpec::new(&e, p).restricted(c, r + 0.12))
            .unwrap()
            .value;
        prop_assert!(
            loose <= tight * (1.0 + 4.0 * tol) + 4.0 * tol,
            "shrinking the window lowered capacity: {tight} -> {loose}"
        );
    }

    #[test]
    fn resolving_from_the_answer_is_stable(p in arb_p(), c in arb_center(), r in arb_radius()) {
        let d = unit_box();
        let w = MeasureWeight::Lebesgue;
        let e = d.ball_nodes(c, r);
        let tol = default_tol(p);
        let first = solve_potential(&d, &w, &PotentialSpec::new(&e, p)).unwrap();
        let mut spec = PotentialSpec::new(&e, p);
        spec.init = Some(&first.u);
        let second = solve_potential(&d, &w, &spec).unwrap();
        let rel = (second.energy - first.energy).abs() / (1.0 + first.energy);
        prop_assert!(rel <= 2.0 * tol, "restart moved energy by {rel}");
    }
}
