//! Discretize direction cones into finite bases, decompose in-cone
//! directions as convex combinations, and build per-direction and mixed
//! control-barrier certificates.
//!
//! Run with: cargo run --example cone_decomposition

use veriflight::cbf::{
    basis_certificate, decompose_direction, discretize_cone, mix_certificates, recompose,
    DirectionCone,
};
use veriflight::world::{AgentState, Obstacle, Vector};

fn main() {
    // A 60-degree half-angle cone pointed northeast, discretized into 5 rays.
    let cone = DirectionCone::new(Vector::new2(1.0, 1.0), 60.0_f64.to_radians());
    let basis = discretize_cone(&cone, 5).expect("valid cone");
    println!("basis of {} rays:", basis.directions.len());
    for e in &basis.directions {
        println!("  ({:+.4}, {:+.4})", e.x(), e.y());
    }

    // Any unit direction inside the cone decomposes with nonnegative weights
    // and recomposes to the same direction.
    let v = Vector::from_angle2(30.0_f64.to_radians());
    let weights = decompose_direction(&v, &basis).expect("in-cone direction");
    let back = recompose(&weights, &basis).normalized().unwrap();
    println!(
        "decompose ({:+.4}, {:+.4}) -> weights {:?}",
        v.x(),
        v.y(),
        weights.iter().map(|w| (w * 1e4).round() / 1e4).collect::<Vec<_>>()
    );
    println!("recompose error: {:.2e} rad", back.angle_to(&v));

    // Certify each basis direction against an obstacle field, then mix the
    // certificates with the decomposition weights.
    let state = AgentState::at_rest(Vector::new2(0.0, 0.0));
    let obstacles = vec![Obstacle::Sphere { center: Vector::new2(4.0, 0.0), radius: 1.0 }];
    let certs: Vec<_> = basis
        .directions
        .iter()
        .map(|e| basis_certificate(&state, e, &obstacles, 1.0, 2.0, 0.5))
        .collect();
    for c in &certs {
        println!(
            "  cert dir ({:+.3}, {:+.3}): h = {:.3}, residual = {:+.3}, feasible = {}",
            c.direction.x(),
            c.direction.y(),
            c.h,
            c.residual,
            c.feasible
        );
    }
    let mixed = mix_certificates(&weights, &certs).expect("weights match certificates");
    println!(
        "mixed certificate: u = ({:+.3}, {:+.3}), residual = {:+.3}",
        mixed.u.x(),
        mixed.u.y(),
        mixed.residual
    );
}
