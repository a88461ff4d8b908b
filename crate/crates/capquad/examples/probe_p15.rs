use capquad::capacity::{cap_p, PotentialSpec};
use capquad::geometry::{Point, Primitive};
use capquad::space::{GridDomain, MeasureWeight};
use std::time::Instant;

fn main() {
    let h = 1.0 / 512.0;
    let d = GridDomain::build(
        2,
        [-1.125, 1.125, -1.125, 1.125],
        h,
        vec![Primitive::DiskExterior { center: Point::new(0.0, 0.0), radius: 1.0 }],
    )
    .unwrap();
    let e = d.ball_nodes(Point::new(0.0, 0.0), 0.5);
    let w = MeasureWeight::Lebesgue;
    for p in [2.0, 1.5, 3.0] {
        let t0 = Instant::now();
        let r = cap_p(&d, &w, &PotentialSpec::new(&e, p)).unwrap();
        println!(
            "p={p}: value={:.6} iters={} res={:.3e} in {:.2}s",
            r.value,
            r.iterations,
            r.residual,
            t0.elapsed().as_secs_f64()
        );
    }
}
