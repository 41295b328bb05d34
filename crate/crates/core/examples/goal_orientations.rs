//! The 24 goal orientations, their angles from the identity, and a boxplus
//! update applied to a state estimate.
//!
//! cargo run --example goal_orientations

use ecrl::estimator::Estimate;
use ecrl::manifold::{boxplus, geodesic_distance, octahedral_group, quat_log, StateIncrement, Tangent3, UnitQuaternion};

fn main() {
    let goals = octahedral_group();
    for (i, g) in goals.iter().enumerate() {
        let axis = quat_log(*g).0;
        println!(
            "goal {i:2}: q = ({:+.3}, {:+.3}, {:+.3}, {:+.3})  angle {:5.1} deg  log = ({:+.2}, {:+.2}, {:+.2})",
            g.w,
            g.x,
            g.y,
            g.z,
            geodesic_distance(UnitQuaternion::IDENTITY, *g).to_degrees(),
            axis[0],
            axis[1],
            axis[2]
        );
    }

    let s = Estimate::zeros(2);
    let mut d = StateIncrement::zero(2);
    d.dr = Tangent3([std::f64::consts::FRAC_PI_2, 0.0, 0.0]);
    d.dx = [0.01, 0.0, 0.0];
    let next = boxplus(&s, &d);
    println!(
        "boxplus: x = {:?}, rotated {:.1} deg about x1",
        next.x,
        geodesic_distance(s.r, next.r).to_degrees()
    );
}
