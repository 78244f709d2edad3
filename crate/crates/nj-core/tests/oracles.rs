//! Cross-checks of the production solvers against independent methods.
//!
//! The line connection is re-solved here as a boundary value problem:
//! second-order central differences on the optimality system, damped Newton
//! with a block-tridiagonal elimination.  Nothing of that pipeline is shared
//! with the energy descent inside the library, so agreement pins both the
//! solver and the discretization.  The disk side is checked by refining the
//! wedge test map and watching the energy settle.

use std::sync::OnceLock;

use nj_core::disk::{build_test_function, total_energy, PolarGrid};
use nj_core::geometry::{Mat2, Vec2};
use nj_core::heteroclinic::{solve_heteroclinic, HeteroclinicProfile};
use nj_core::potential::{fd_hessian, Potential};

/// Closed-form connection energy of the scalar double well.
const SCALAR_ACTION: f64 = 0.9428090415820634;

fn triple_well() -> &'static (Potential, HeteroclinicProfile) {
    static CELL: OnceLock<(Potential, HeteroclinicProfile)> = OnceLock::new();
    CELL.get_or_init(|| {
        let p = Potential::complex_well(3, 1.0).unwrap();
        let profile = solve_heteroclinic(&p, 8.0, 800, 1e-6).unwrap();
        (p, profile)
    })
}

fn inv(m: Mat2) -> Mat2 {
    let det = m.a * m.d - m.b * m.c;
    assert!(det.abs() > 1e-300, "singular Newton block");
    Mat2 {
        a: m.d / det,
        b: -m.b / det,
        c: -m.c / det,
        d: m.a / det,
    }
}

fn solve2(m: Mat2, r: Vec2) -> Vec2 {
    inv(m).apply(r)
}

fn mat_axpy(x: Mat2, y: Mat2, t: f64) -> Mat2 {
    Mat2 {
        a: x.a + t * y.a,
        b: x.b + t * y.b,
        c: x.c + t * y.c,
        d: x.d + t * y.d,
    }
}

/// Largest interior residual of the discrete optimality system.
fn residual_norm(p: &Potential, u: &[Vec2], h: f64) -> f64 {
    let inv_h2 = 1.0 / (h * h);
    let mut worst = 0.0f64;
    for i in 1..u.len() - 1 {
        let lap = (u[i + 1] - u[i].scale(2.0) + u[i - 1]).scale(inv_h2);
        let f = lap - p.grad(u[i]);
        worst = worst.max(f.norm());
    }
    worst
}

/// Solve the connection equation between adjacent wells with damped Newton
/// and return the node values together with the discrete energy.
fn newton_connection(p: &Potential, half_length: f64, n: usize) -> (Vec<Vec2>, f64) {
    let h = 2.0 * half_length / n as f64;
    let ws = p.wells();
    let left = ws.a;
    let right = p.omega().apply(ws.a);
    let mut u: Vec<Vec2> = (0..=n)
        .map(|i| {
            let s = -half_length + i as f64 * h;
            let t = 0.5 * (1.0 + (1.5 * s).tanh());
            if p.m == 1 {
                left.lerp(right, t)
            } else {
                // rotate along the well circle instead of cutting the chord,
                // so the seed never passes near the origin spike
                let a0 = left.angle();
                let a1 = a0 + 2.0 * std::f64::consts::PI / p.n_sym as f64;
                Vec2::from_polar(p.well_radius, a0 + (a1 - a0) * t)
            }
        })
        .collect();

    let inv_h2 = 1.0 / (h * h);
    let mut res = residual_norm(p, &u, h);
    for _ in 0..60 {
        if res < 1e-10 {
            break;
        }
        let count = n - 1;
        let mut schur: Vec<Mat2> = Vec::with_capacity(count);
        let mut z: Vec<Vec2> = Vec::with_capacity(count);
        for i in 1..n {
            let lap = (u[i + 1] - u[i].scale(2.0) + u[i - 1]).scale(inv_h2);
            let f = lap - p.grad(u[i]);
            let hess = fd_hessian(p, u[i], 1e-5);
            let diag = Mat2 {
                a: -2.0 * inv_h2 - hess.a,
                b: -hess.b,
                c: -hess.c,
                d: -2.0 * inv_h2 - hess.d,
            };
            let k = i - 1;
            let (ci, zi) = if k == 0 {
                (diag, f.scale(-1.0))
            } else {
                let prev = inv(schur[k - 1]);
                (
                    mat_axpy(diag, prev, -(inv_h2 * inv_h2)),
                    f.scale(-1.0) - prev.apply(z[k - 1]).scale(inv_h2),
                )
            };
            schur.push(ci);
            z.push(zi);
        }
        let mut d = vec![Vec2::new(0.0, 0.0); count];
        d[count - 1] = solve2(schur[count - 1], z[count - 1]);
        for k in (0..count - 1).rev() {
            d[k] = solve2(schur[k], z[k] - d[k + 1].scale(inv_h2));
        }

        // damped step; a stall means the residual reached the rounding
        // floor of the stencil, which sits near eps / h^2
        let mut accepted = false;
        let mut step = 1.0;
        for _ in 0..8 {
            let mut trial = u.clone();
            for (k, di) in d.iter().enumerate() {
                trial[k + 1] = u[k + 1] + di.scale(step);
            }
            let trial_res = residual_norm(p, &trial, h);
            if trial_res < res {
                u = trial;
                res = trial_res;
                accepted = true;
                break;
            }
            step *= 0.5;
        }
        if !accepted {
            break;
        }
    }
    assert!(res < 1e-8, "Newton did not converge: residual {res:.3e}");

    let mut action = 0.0;
    for i in 0..n {
        let kin = (u[i + 1] - u[i]).norm_sq() / (2.0 * h);
        let pot = 0.5 * h * (p.eval(u[i]) + p.eval(u[i + 1]));
        action += kin + pot;
    }
    (u, action)
}

#[test]
fn newton_bvp_matches_the_scalar_closed_form() {
    let p = Potential::scalar_bistable();
    let (_, action) = newton_connection(&p, 10.0, 4000);
    assert!(
        (action - SCALAR_ACTION).abs() < 5e-5,
        "newton action {action:.8} vs closed form {SCALAR_ACTION:.8}"
    );
}

#[test]
fn newton_bvp_agrees_with_descent_on_the_triple_well() {
    let (p, profile) = triple_well();
    let (nodes, newton_action) = newton_connection(p, 8.0, 1600);
    assert!(
        (newton_action - profile.action).abs() < 2e-3 * newton_action,
        "newton {newton_action:.6} vs descent {:.6}",
        profile.action
    );
    assert!(newton_action > 1.0 && newton_action < 2.5);
    // The connection shortcuts inside the well circle: on the mid-angle ray
    // the potential falls from 4 at radius one toward 1 at the origin, so
    // the optimal path trades length for a pass at moderate radius.  It
    // must still clear the center, where all three wells pull equally.
    let closest = nodes.iter().map(|v| v.norm()).fold(f64::INFINITY, f64::min);
    assert!(
        closest > 0.15 && closest < 0.8,
        "path closest approach |u| = {closest:.3}"
    );
}

#[test]
fn test_map_energy_converges_under_refinement() {
    let (p, profile) = triple_well();
    let radius = 26.0;
    let mut energies = Vec::new();
    for scale in [1usize, 2, 4] {
        let grid = PolarGrid::new(radius, 64 * scale, 96 * scale, 3).unwrap();
        let field = build_test_function(p, profile, grid).unwrap();
        energies.push(total_energy(p, &field).unwrap());
    }
    let d1 = energies[0] - energies[1];
    let d2 = energies[1] - energies[2];
    assert!(
        d2.abs() < d1.abs(),
        "refinement is not contracting: {energies:?}"
    );
    // The map is Lipschitz with creases along the zone seams, so the
    // quadrature converges at first order there and second order in the
    // smooth bulk; the contraction per refinement lands in between.
    let ratio = d1 / d2;
    assert!(
        (1.6..8.0).contains(&ratio),
        "contraction ratio {ratio:.2} from {energies:?}"
    );
    let limit = energies[2] - d2 / (ratio - 1.0);
    assert!((energies[2] - limit).abs() <= d2.abs() * 1.5);
}
