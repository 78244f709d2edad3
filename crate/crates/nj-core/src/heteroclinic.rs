//! Heteroclinic connections between adjacent wells on the line.
//!
//! The solver minimizes the one-dimensional energy
//!
//! ```text
//!     J(u) = integral over [-L, L] of |u'|^2 / 2 + W(u)
//! ```
//!
//! with `u(-L)` pinned at the distinguished well `a` and `u(L)` at the
//! rotated well `omega a`.  The converged profile is recentered so the point
//! equidistant from the two wells sits at the middle of the grid, and its
//! exponential tail rate is fitted for later use as an extension formula.
//!
//! From a profile one can read off ball-crossing times and assemble the
//! periodic seed used to initialize fiber minimizations: a short linear
//! bridge closing the gap between the two delta-sphere crossing points,
//! followed by the truncated connection itself.

use crate::descent::{minimize, DescentParams, EnergyFunctional};
use crate::error::{NjError, Result};
use crate::geometry::{line_fit, Mat2, Vec2};
use crate::potential::{fd_hessian, Potential, PotentialConstants};

/// Pinned boundary values must sit on the wells to this accuracy.
const BOUNDARY_TOL: f64 = 1e-6;
/// Values below this are treated as converged-to-the-well when fitting the
/// tail rate.
const TAIL_FLOOR: f64 = 1e-12;
/// Minimum number of usable nodes for the tail fit.
const TAIL_MIN_NODES: usize = 8;
/// Iteration budget for the 1d solves.
const MAX_ITER_1D: usize = 200_000;
/// Descent hands over to the Newton endgame once the residual is below
/// this; earlier the iterate may sit outside the quadratic basin.
const NEWTON_HANDOFF: f64 = 1e-2;
/// Newton iterations; quadratic convergence makes the cap generous.
const NEWTON_MAX_ITER: usize = 60;
/// Step halvings before a Newton step counts as stalled.
const NEWTON_BACKTRACK: usize = 8;
/// Hessian finite-difference step for the Newton blocks.
const HESS_STEP: f64 = 1e-5;

#[derive(Debug, Clone)]
pub struct HeteroclinicProfile {
    /// Half the domain length; samples live on `[-L, L]`.
    pub half_length: f64,
    pub samples: Vec<Vec2>,
    /// Well the profile leaves at `-L`.
    pub well_neg: Vec2,
    /// Well the profile reaches at `+L`.
    pub well_pos: Vec2,
    /// Energy of the converged discrete profile.
    pub action: f64,
    /// Sup over interior nodes of `| |u'|^2/2 - W(u) |`.
    pub equipartition_residual: f64,
    /// Fitted exponential approach rate of the tail toward `well_pos`;
    /// NaN when too few nodes carry a resolvable deviation.
    pub tail_rate: f64,
}

impl HeteroclinicProfile {
    pub fn step(&self) -> f64 {
        2.0 * self.half_length / (self.samples.len() - 1) as f64
    }

    pub fn node_s(&self, i: usize) -> f64 {
        -self.half_length + i as f64 * self.step()
    }

    /// Linear interpolation on the grid; beyond the ends the profile is
    /// extended by the exponential tail toward the respective well (which
    /// collapses to the well itself for pinned boundaries).
    pub fn eval(&self, s: f64) -> Vec2 {
        let l = self.half_length;
        if s <= -l {
            return extend(self.well_neg, self.samples[0], self.tail_rate, -l - s);
        }
        if s >= l {
            let last = *self.samples.last().unwrap();
            return extend(self.well_pos, last, self.tail_rate, s - l);
        }
        let t = (s + l) / self.step();
        let i = (t.floor() as usize).min(self.samples.len() - 2);
        self.samples[i].lerp(self.samples[i + 1], t - i as f64)
    }
}

fn extend(well: Vec2, edge_value: Vec2, rate: f64, dist: f64) -> Vec2 {
    let r = if rate.is_finite() && rate > 0.0 { rate } else { 1.0 };
    well + (edge_value - well).scale((-r * dist).exp())
}

/// The discrete 1d energy with pinned ends; unknowns are the interior nodes
/// flattened as `[x1, y1, x2, y2, ...]`.
pub struct LineProblem<'a> {
    p: &'a Potential,
    left: Vec2,
    right: Vec2,
    h: f64,
    n_cells: usize,
    masses: Vec<f64>,
}

impl<'a> LineProblem<'a> {
    pub fn new(p: &'a Potential, left: Vec2, right: Vec2, h: f64, n_cells: usize) -> Self {
        let masses = vec![h; 2 * (n_cells - 1)];
        LineProblem {
            p,
            left,
            right,
            h,
            n_cells,
            masses,
        }
    }

    fn node(&self, x: &[f64], i: usize) -> Vec2 {
        if i == 0 {
            self.left
        } else if i == self.n_cells {
            self.right
        } else {
            Vec2::new(x[2 * (i - 1)], x[2 * (i - 1) + 1])
        }
    }
}

impl EnergyFunctional for LineProblem<'_> {
    fn energy(&self, x: &[f64]) -> f64 {
        let mut kin = 0.0;
        let mut pot = 0.5 * (self.p.eval(self.left) + self.p.eval(self.right));
        let mut prev = self.left;
        for i in 1..=self.n_cells {
            let cur = self.node(x, i);
            kin += (cur - prev).norm_sq();
            if i < self.n_cells {
                pot += self.p.eval(cur);
            }
            prev = cur;
        }
        kin / (2.0 * self.h) + self.h * pot
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        for i in 1..self.n_cells {
            let u = self.node(x, i);
            let lap = (u.scale(2.0) - self.node(x, i - 1) - self.node(x, i + 1)).scale(1.0 / self.h);
            let force = self.p.grad(u).scale(self.h);
            g[2 * (i - 1)] = lap.x + force.x;
            g[2 * (i - 1) + 1] = lap.y + force.y;
        }
    }

    fn masses(&self) -> &[f64] {
        &self.masses
    }
}

fn discrete_energy(p: &Potential, samples: &[Vec2], h: f64) -> f64 {
    let n = samples.len() - 1;
    let mut kin = 0.0;
    for i in 0..n {
        kin += (samples[i + 1] - samples[i]).norm_sq();
    }
    let mut pot = 0.5 * (p.eval(samples[0]) + p.eval(samples[n]));
    for s in &samples[1..n] {
        pot += p.eval(*s);
    }
    kin / (2.0 * h) + h * pot
}

fn equipartition(p: &Potential, samples: &[Vec2], h: f64) -> f64 {
    let mut worst: f64 = 0.0;
    for i in 1..samples.len() - 1 {
        let du = (samples[i + 1] - samples[i - 1]).scale(0.5 / h);
        worst = worst.max((0.5 * du.norm_sq() - p.eval(samples[i])).abs());
    }
    worst
}

fn inv2(m: Mat2) -> Option<Mat2> {
    let det = m.a * m.d - m.b * m.c;
    if det.abs() < 1e-300 {
        return None;
    }
    let s = 1.0 / det;
    Some(Mat2 {
        a: s * m.d,
        b: -s * m.b,
        c: -s * m.c,
        d: s * m.a,
    })
}

/// Sup norm of the Euler-Lagrange residual `u'' - grad W(u)` over the
/// interior nodes; this matches the descent solver's weighted gradient.
fn el_residual_sup(p: &Potential, samples: &[Vec2], h: f64) -> f64 {
    let inv_h2 = 1.0 / (h * h);
    let mut worst = 0.0f64;
    for i in 1..samples.len() - 1 {
        let lap = (samples[i - 1] - samples[i].scale(2.0) + samples[i + 1]).scale(inv_h2);
        let r = lap - p.grad(samples[i]);
        worst = worst.max(r.x.abs()).max(r.y.abs());
    }
    worst
}

/// Damped Newton endgame on the pinned Euler-Lagrange system.  The block
/// tridiagonal Jacobian is factored by forward elimination of the Schur
/// complements; steps are halved while the residual refuses to drop.
/// Returns the residual actually reached (the stencil's rounding floor is
/// near `eps / h^2`, so demands far below that stall harmlessly).
fn newton_polish(p: &Potential, samples: &mut Vec<Vec2>, h: f64, tol: f64) -> f64 {
    let n = samples.len();
    if n < 3 {
        return el_residual_sup(p, samples, h);
    }
    let m = n - 2;
    let inv_h2 = 1.0 / (h * h);
    let mut res = el_residual_sup(p, samples, h);
    let mut cap = vec![Mat2::IDENTITY; m];
    let mut rhs = vec![Vec2::ZERO; m];
    let mut delta = vec![Vec2::ZERO; m];
    for _ in 0..NEWTON_MAX_ITER {
        if res <= tol {
            break;
        }
        // assemble and eliminate: cap[i] holds the pivot block after the
        // lower off-diagonal (a multiple of the identity) is absorbed
        let mut ok = true;
        for i in 0..m {
            let u = samples[i + 1];
            let hess = fd_hessian(p, u, HESS_STEP);
            let diag = Mat2 {
                a: -2.0 * inv_h2 - hess.a,
                b: -hess.b,
                c: -hess.c,
                d: -2.0 * inv_h2 - hess.d,
            };
            let lap = (samples[i] - u.scale(2.0) + samples[i + 2]).scale(inv_h2);
            let mut r = (lap - p.grad(u)).scale(-1.0);
            let mut piv = diag;
            if i > 0 {
                let prev_inv = match inv2(cap[i - 1]) {
                    Some(v) => v,
                    None => {
                        ok = false;
                        break;
                    }
                };
                let fac = prev_inv.mul(&Mat2 {
                    a: inv_h2,
                    b: 0.0,
                    c: 0.0,
                    d: inv_h2,
                });
                piv = Mat2 {
                    a: diag.a - inv_h2 * fac.a,
                    b: diag.b - inv_h2 * fac.b,
                    c: diag.c - inv_h2 * fac.c,
                    d: diag.d - inv_h2 * fac.d,
                };
                r = r - fac.apply(rhs[i - 1]);
            }
            cap[i] = piv;
            rhs[i] = r;
        }
        if !ok {
            break;
        }
        let last = match inv2(cap[m - 1]) {
            Some(v) => v,
            None => break,
        };
        delta[m - 1] = last.apply(rhs[m - 1]);
        for i in (0..m - 1).rev() {
            let inv = match inv2(cap[i]) {
                Some(v) => v,
                None => {
                    ok = false;
                    break;
                }
            };
            delta[i] = inv.apply(rhs[i] - delta[i + 1].scale(inv_h2));
        }
        if !ok {
            break;
        }
        // damped acceptance: keep halving until the residual drops
        let mut improved = false;
        let mut step = 1.0;
        for _ in 0..=NEWTON_BACKTRACK {
            let mut trial = samples.clone();
            for i in 0..m {
                trial[i + 1] += delta[i].scale(step);
            }
            let r_t = el_residual_sup(p, &trial, h);
            if r_t < res {
                *samples = trial;
                res = r_t;
                improved = true;
                break;
            }
            step *= 0.5;
        }
        if !improved {
            break;
        }
    }
    res
}

fn solve_pinned(
    p: &Potential,
    left: Vec2,
    right: Vec2,
    half_length: f64,
    n: usize,
    tol: f64,
) -> Result<Vec<Vec2>> {
    let h = 2.0 * half_length / n as f64;
    let problem = LineProblem::new(p, left, right, h, n);
    let mut x = Vec::with_capacity(2 * (n - 1));
    for i in 1..n {
        let u = left.lerp(right, i as f64 / n as f64);
        x.push(u.x);
        x.push(u.y);
    }
    // descent globalizes cheaply; the Newton endgame finishes the last
    // orders of magnitude, where explicit steps would crawl
    let mut params = DescentParams::new(tol.max(NEWTON_HANDOFF), MAX_ITER_1D);
    params.init_step = 0.25 * h * h;
    minimize(&problem, &mut x, &params)?;
    let mut samples: Vec<Vec2> = (0..=n).map(|i| problem.node(&x, i)).collect();
    let res = newton_polish(p, &mut samples, h, tol);
    if res > tol {
        // polish stalled shy of the target; plain descent owns the
        // convergence policy, so resume it from the polished iterate
        for i in 1..n {
            x[2 * (i - 1)] = samples[i].x;
            x[2 * (i - 1) + 1] = samples[i].y;
        }
        params.tol = tol;
        minimize(&problem, &mut x, &params)?;
        samples = (0..=n).map(|i| problem.node(&x, i)).collect();
    }
    Ok(samples)
}

/// Shift samples by `k` whole cells, filling the exposed end with the well
/// the profile is pinned to there.
fn roll(samples: &[Vec2], k: i64, left: Vec2, right: Vec2) -> Vec<Vec2> {
    let n = samples.len() as i64;
    (0..n)
        .map(|i| {
            let j = i + k;
            if j < 0 {
                left
            } else if j >= n {
                right
            } else {
                samples[j as usize]
            }
        })
        .collect()
}

fn fit_tail(samples: &[Vec2], well_pos: Vec2, half_length: f64) -> f64 {
    let n = samples.len();
    let h = 2.0 * half_length / (n - 1) as f64;
    // stop short of the pinned end, whose mirror-image correction bends the
    // log slope; widen the window toward the center if nodes run out
    for (start_frac, end_frac) in [(0.5, 0.85), (0.25, 0.95)] {
        let start = (n as f64 * start_frac) as usize;
        let end = (n as f64 * end_frac) as usize;
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for i in start..end.min(n) {
            let d = samples[i].dist(well_pos);
            if d > TAIL_FLOOR {
                xs.push(-half_length + i as f64 * h);
                ys.push(d.ln());
            }
        }
        if xs.len() >= TAIL_MIN_NODES {
            if let Some((_, slope)) = line_fit(&xs, &ys) {
                return -slope;
            }
        }
    }
    f64::NAN
}

/// Minimize the line energy between the distinguished well and its rotation.
///
/// `n` is the cell count of the uniform grid on `[-L, L]`; the returned
/// profile is recentered so the point equidistant from the two wells lies
/// within one cell of the middle node.
pub fn solve_heteroclinic(
    p: &Potential,
    half_length: f64,
    n: usize,
    tol: f64,
) -> Result<HeteroclinicProfile> {
    p.validate()?;
    if !(half_length > 0.0) || !half_length.is_finite() {
        return Err(NjError::Parameter(format!(
            "half length must be positive, got {half_length}"
        )));
    }
    if n < 200 {
        return Err(NjError::Parameter(format!(
            "need at least 200 cells to resolve a connection, got {n}"
        )));
    }
    let ws = p.wells();
    let om = p.omega();
    let a = ws.a;
    let b = om.apply(a);

    let mut samples = solve_pinned(p, a, b, half_length, n, tol)?;
    let h = 2.0 * half_length / n as f64;
    let mut energy = discrete_energy(p, &samples, h);

    // A lopsided potential can make the transition through the other
    // adjacent well cheaper; in that case the reflected-and-rotated copy of
    // the opposite connection beats the direct solve, and minimality demands
    // we use it.
    if p.n_sym > 2 {
        let b_rev = om.transpose().apply(a);
        if let Ok(other) = solve_pinned(p, a, b_rev, half_length, n, tol) {
            let reflected: Vec<Vec2> = other.iter().rev().map(|&u| om.apply(u)).collect();
            let e_ref = discrete_energy(p, &reflected, h);
            if e_ref < energy - 1e-12 {
                samples = reflected;
                energy = e_ref;
            }
        }
    }

    // recenter: locate the sign change of |u - a| - |u - b|
    let f: Vec<f64> = samples.iter().map(|u| u.dist(a) - u.dist(b)).collect();
    let mut crossing = None;
    for i in 0..n {
        if f[i] < 0.0 && f[i + 1] >= 0.0 {
            let t = f[i] / (f[i] - f[i + 1]);
            crossing = Some(i as f64 + t);
            break;
        }
    }
    let crossing = crossing.ok_or_else(|| {
        NjError::Construction("profile never crosses the midplane between the wells".into())
    })?;
    let shift = (crossing - n as f64 / 2.0).round() as i64;
    if shift != 0 {
        samples = roll(&samples, shift, a, b);
        energy = discrete_energy(p, &samples, h);
    }

    if samples[0].dist(a) > BOUNDARY_TOL || samples[n].dist(b) > BOUNDARY_TOL {
        return Err(NjError::Construction(
            "recentered profile no longer matches the pinned wells".into(),
        ));
    }

    let tail_rate = fit_tail(&samples, b, half_length);
    let equi = equipartition(p, &samples, h);
    Ok(HeteroclinicProfile {
        half_length,
        samples,
        well_neg: a,
        well_pos: b,
        action: energy,
        equipartition_residual: equi,
        tail_rate,
    })
}

/// The action `integral of |u'|^2` computed by the trapezoid rule with
/// centered differences (one-sided at the ends).  For an equipartitioned
/// profile this equals the energy up to `2 * residual * domain length`.
pub fn action(profile: &HeteroclinicProfile) -> f64 {
    let n = profile.samples.len();
    let h = profile.step();
    let deriv = |i: usize| -> Vec2 {
        if i == 0 {
            (profile.samples[1] - profile.samples[0]).scale(1.0 / h)
        } else if i == n - 1 {
            (profile.samples[n - 1] - profile.samples[n - 2]).scale(1.0 / h)
        } else {
            (profile.samples[i + 1] - profile.samples[i - 1]).scale(0.5 / h)
        }
    };
    let mut total = 0.5 * (deriv(0).norm_sq() + deriv(n - 1).norm_sq());
    for i in 1..n - 1 {
        total += deriv(i).norm_sq();
    }
    total * h
}

/// Recompute the equipartition defect of a stored profile.
pub fn equipartition_residual(p: &Potential, profile: &HeteroclinicProfile) -> f64 {
    equipartition(p, &profile.samples, profile.step())
}

/// Times at which the profile last leaves the ball of radius `delta` around
/// the starting well and first enters the ball around the target well.
pub fn crossing_times(profile: &HeteroclinicProfile, delta: f64) -> Result<(f64, f64)> {
    let sep = profile.well_neg.dist(profile.well_pos);
    if !(delta > 0.0) || delta >= 0.5 * sep {
        return Err(NjError::Parameter(format!(
            "delta must lie in (0, {:.4}), got {delta}",
            0.5 * sep
        )));
    }
    let n = profile.samples.len();
    let h = profile.step();

    // last exit from the starting ball
    let mut t_exit = None;
    for i in (0..n - 1).rev() {
        let d0 = profile.samples[i].dist(profile.well_neg);
        let d1 = profile.samples[i + 1].dist(profile.well_neg);
        if d0 <= delta && d1 > delta {
            let t = (delta - d0) / (d1 - d0);
            t_exit = Some(profile.node_s(i) + t * h);
            break;
        }
    }
    // first entry into the target ball
    let mut t_enter = None;
    for i in 0..n - 1 {
        let d0 = profile.samples[i].dist(profile.well_pos);
        let d1 = profile.samples[i + 1].dist(profile.well_pos);
        if d0 > delta && d1 <= delta {
            let t = (d0 - delta) / (d0 - d1);
            t_enter = Some(profile.node_s(i) + t * h);
            break;
        }
    }
    match (t_exit, t_enter) {
        (Some(a), Some(b)) if a < b => Ok((a, b)),
        (Some(_), Some(_)) => Err(NjError::Construction(
            "ball crossings out of order; profile is not a clean transition".into(),
        )),
        _ => Err(NjError::Construction(format!(
            "profile does not cross the delta = {delta} spheres"
        ))),
    }
}

/// One fundamental segment of the periodic comparison map built from a
/// heteroclinic profile.
#[derive(Debug, Clone)]
pub struct PeriodicSeed {
    /// Uniform samples on `[0, t_seg)`; the continuation past the end is the
    /// rotate of the first sample.
    pub samples: Vec<Vec2>,
    pub t_seg: f64,
    /// Circle radius whose fundamental arc has length `t_seg` when the full
    /// period consists of `segments_per_turn` segments.
    pub radius: f64,
    pub delta: f64,
    /// Discrete energy of one segment (with the twisted closure).
    pub segment_energy: f64,
    /// Energy carried by the linear bridge alone.
    pub bridge_energy: f64,
}

/// Assemble the periodic seed for ball radius `delta`: a linear bridge from
/// the rotated entry point back to the exit point, followed by the truncated
/// connection.  `segments_per_turn` is the number of fundamental segments in
/// one full period (the symmetry order times the domain fold).
pub fn build_periodic_seed(
    p: &Potential,
    profile: &HeteroclinicProfile,
    constants: &PotentialConstants,
    delta: f64,
    segments_per_turn: usize,
) -> Result<PeriodicSeed> {
    if delta > constants.delta_w {
        return Err(NjError::Parameter(format!(
            "delta = {delta} exceeds the certified radius {}",
            constants.delta_w
        )));
    }
    if segments_per_turn < 2 {
        return Err(NjError::Parameter(
            "a period needs at least two segments".into(),
        ));
    }
    let (t_exit, t_enter) = crossing_times(profile, delta)?;
    let om = profile_rotation(profile, p)?;
    let z_plus = profile.eval(t_exit);
    let z_minus = om.transpose().apply(profile.eval(t_enter));
    let tau = z_plus.dist(z_minus) / (constants.c_hi * delta);
    let t_seg = t_enter - t_exit + tau;

    let n_samples = ((t_seg / profile.step()).ceil() as usize * 2).max(128);
    let dt = t_seg / n_samples as f64;
    let mut samples = Vec::with_capacity(n_samples);
    let mut bridge_cells = 0usize;
    for j in 0..n_samples {
        let t = j as f64 * dt;
        if t < tau && tau > 0.0 {
            samples.push(z_minus.lerp(z_plus, t / tau));
            bridge_cells += 1;
        } else {
            samples.push(profile.eval(t_exit + t - tau));
        }
    }

    // energy with the twisted closure (last cell wraps to omega * first)
    let mut segment_energy = 0.0;
    let mut bridge_energy = 0.0;
    for j in 0..n_samples {
        let next = if j + 1 < n_samples {
            samples[j + 1]
        } else {
            om.apply(samples[0])
        };
        let cell = (next - samples[j]).norm_sq() / (2.0 * dt) + dt * p.eval(samples[j]);
        segment_energy += cell;
        if j < bridge_cells {
            bridge_energy += cell;
        }
    }

    Ok(PeriodicSeed {
        samples,
        t_seg,
        radius: segments_per_turn as f64 * t_seg / (2.0 * std::f64::consts::PI),
        delta,
        segment_energy,
        bridge_energy,
    })
}

/// Rotation carrying `well_neg` to `well_pos`; sanity-checks the profile
/// against the potential it is being combined with.
fn profile_rotation(profile: &HeteroclinicProfile, p: &Potential) -> Result<crate::geometry::Mat2> {
    let om = p.omega();
    if om.apply(profile.well_neg).dist(profile.well_pos) > 1e-9 {
        return Err(NjError::Parameter(
            "profile wells do not match the potential's rotation".into(),
        ));
    }
    Ok(om)
}

/// Lower bound for the energy of any path joining the boundary of a
/// `d_minus` ball around one well to the boundary of a `d_plus` ball around
/// an adjacent one: the full transition cost minus the quadratic caps.
pub fn segment_lower_bound(sigma: f64, c_hi: f64, d_minus: f64, d_plus: f64) -> f64 {
    sigma - 0.5 * c_hi * (d_minus * d_minus + d_plus * d_plus)
}
