//! Periodic equivariant maps on circles.
//!
//! A map on the circle of radius `r` subject to the twisted symmetry
//! `v(theta + 2*pi/(h*N)) = omega v(theta)` is stored as samples on one
//! fundamental arc; the neighbor past the seam is the rotate of the first
//! sample.  This module minimizes the one-dimensional energy in that
//! storage, classifies arbitrary arcs into the structure ladder (single
//! clean transition layer versus the four ways a map can fail to be one),
//! and measures how fast the minimal energy approaches the flat transition
//! count as the radius grows.

use std::f64::consts::PI;
use std::fmt;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::descent::{minimize, DescentParams, EnergyFunctional};
use crate::error::{NjError, Result};
use crate::geometry::{line_fit, Mat2, Vec2};
use crate::heteroclinic::{
    build_periodic_seed, crossing_times, solve_heteroclinic, HeteroclinicProfile,
};
use crate::potential::{estimate_constants, Potential, PotentialConstants, WellSet};

/// Minimum sample count on the fundamental arc.
const MIN_ARC_SAMPLES: usize = 128;
/// Iteration budget for ring solves.
const MAX_ITER_RING: usize = 400_000;
/// Bisection steps when matching the seed construction to a circumference.
const SEED_BISECT_STEPS: usize = 80;
/// The plateau radius is capped at this fraction of the well separation so
/// plateau balls around adjacent wells stay disjoint.
const PLATEAU_CAP: f64 = 0.45;

/// One fundamental arc of a twisted-periodic map.
#[derive(Debug, Clone)]
pub struct FiberProfile {
    pub radius: f64,
    /// Values at angles `k * arc_step`; the full circle continues by
    /// `v(theta + arc) = omega v(theta)`.
    pub samples: Vec<Vec2>,
    /// Angle between adjacent samples.
    pub arc_step: f64,
    /// Fundamental arcs per turn: the symmetry order times the domain fold.
    pub segments: usize,
    /// Energy of the full period (`segments` times the arc energy).
    pub energy: f64,
}

impl FiberProfile {
    pub fn arc_angle(&self) -> f64 {
        2.0 * PI / self.segments as f64
    }

    pub fn arc_length(&self) -> f64 {
        self.radius * self.arc_angle()
    }

    /// Arc length between adjacent samples.
    pub fn ds(&self) -> f64 {
        self.arc_length() / self.samples.len() as f64
    }

    /// Sample of the full-circle reconstruction at any integer slot.
    pub fn fetch(&self, k: i64, om: Mat2) -> Vec2 {
        let n = self.samples.len() as i64;
        let wraps = k.div_euclid(n);
        let i = k.rem_euclid(n) as usize;
        om.pow(wraps).apply(self.samples[i])
    }
}

/// The discrete energy of one fundamental arc with the twisted closure.
/// Unknowns are all arc nodes flattened as `[x0, y0, x1, y1, ...]`; the
/// neighbor of the last node is the rotate of the first.
pub struct RingEnergy<'a> {
    p: &'a Potential,
    om: Mat2,
    ds: f64,
    n: usize,
    masses: Vec<f64>,
}

impl<'a> RingEnergy<'a> {
    pub fn new(p: &'a Potential, segments: usize, radius: f64, n_arc: usize) -> Result<Self> {
        p.validate()?;
        if segments < 2 {
            return Err(NjError::Parameter(
                "a full turn needs at least two fundamental arcs".into(),
            ));
        }
        if !(radius.is_finite() && radius > 0.0) {
            return Err(NjError::Parameter(format!(
                "circle radius must be positive, got {radius}"
            )));
        }
        if n_arc < 8 {
            return Err(NjError::Parameter(format!(
                "arc needs at least 8 samples, got {n_arc}"
            )));
        }
        let ds = 2.0 * PI * radius / (segments * n_arc) as f64;
        Ok(RingEnergy {
            p,
            om: p.omega(),
            ds,
            n: n_arc,
            masses: vec![ds; 2 * n_arc],
        })
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    fn node(&self, x: &[f64], i: usize) -> Vec2 {
        Vec2::new(x[2 * i], x[2 * i + 1])
    }
}

impl EnergyFunctional for RingEnergy<'_> {
    fn energy(&self, x: &[f64]) -> f64 {
        let mut kin = 0.0;
        let mut pot = 0.0;
        for i in 0..self.n {
            let cur = self.node(x, i);
            let next = if i + 1 < self.n {
                self.node(x, i + 1)
            } else {
                self.om.apply(self.node(x, 0))
            };
            kin += (next - cur).norm_sq();
            pot += self.p.eval(cur);
        }
        kin / (2.0 * self.ds) + self.ds * pot
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        for i in 0..self.n {
            let cur = self.node(x, i);
            let left = if i > 0 {
                self.node(x, i - 1)
            } else {
                self.om.transpose().apply(self.node(x, self.n - 1))
            };
            let right = if i + 1 < self.n {
                self.node(x, i + 1)
            } else {
                self.om.apply(self.node(x, 0))
            };
            let lap = (cur.scale(2.0) - left - right).scale(1.0 / self.ds);
            let force = self.p.grad(cur).scale(self.ds);
            g[2 * i] = lap.x + force.x;
            g[2 * i + 1] = lap.y + force.y;
        }
    }

    fn masses(&self) -> &[f64] {
        &self.masses
    }
}

fn flatten(samples: &[Vec2]) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * samples.len());
    for u in samples {
        x.push(u.x);
        x.push(u.y);
    }
    x
}

fn unflatten(x: &[f64]) -> Vec<Vec2> {
    x.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect()
}

/// Shared inputs for fiber solves at many radii: the potential, its
/// certified constants, the stored heteroclinic connection and the derived
/// seed threshold.
#[derive(Debug, Clone)]
pub struct FiberContext {
    pub potential: Potential,
    /// Domain fold: the domain rotates by `2*pi/(h*N)` while the target
    /// rotates by `2*pi/N`.
    pub h: usize,
    pub profile: HeteroclinicProfile,
    pub constants: PotentialConstants,
    /// Transition energy of the stored connection.
    pub sigma: f64,
    /// Smallest radius the matched seed construction can target.
    pub r_bar: f64,
}

impl FiberContext {
    /// Solve the connection on a default grid and certify the constants.
    pub fn new(p: &Potential, h: usize, tol: f64) -> Result<FiberContext> {
        let constants = estimate_constants(p, &[], 128)?;
        // long enough that the pinned tails sit below the solver tolerance
        let half = (16.0 / constants.c_lo).max(8.0);
        let n = ((2.0 * half / 0.01).ceil() as usize).max(400);
        let profile = solve_heteroclinic(p, half, n, tol)?;
        FiberContext::with_parts(p.clone(), h, profile, constants)
    }

    pub fn with_parts(
        potential: Potential,
        h: usize,
        profile: HeteroclinicProfile,
        constants: PotentialConstants,
    ) -> Result<FiberContext> {
        potential.validate()?;
        if h == 0 {
            return Err(NjError::Parameter("domain fold must be at least 1".into()));
        }
        let ws = potential.wells();
        let om = potential.omega();
        if profile.well_neg.dist(ws.a) > 1e-9 || profile.well_pos.dist(om.apply(ws.a)) > 1e-9 {
            return Err(NjError::Parameter(
                "stored connection does not join the potential's adjacent wells".into(),
            ));
        }
        let (t_exit, t_enter) = crossing_times(&profile, constants.delta_w)?;
        let segments = (h * potential.n_sym) as f64;
        let r_bar = segments * (t_enter - t_exit + 2.0 / constants.c_hi) / (2.0 * PI);
        let sigma = profile.action;
        Ok(FiberContext {
            potential,
            h,
            profile,
            constants,
            sigma,
            r_bar,
        })
    }

    pub fn segments(&self) -> usize {
        self.h * self.potential.n_sym
    }

    pub fn arc_angle(&self) -> f64 {
        2.0 * PI / self.segments() as f64
    }

    pub fn arc_length(&self, r: f64) -> f64 {
        r * self.arc_angle()
    }
}

/// Initial guess for a ring solve.
#[derive(Debug, Clone)]
pub enum FiberSeed {
    /// Bridge-plus-truncated-connection comparison map with the ball radius
    /// bisected so one segment fills the fundamental arc; falls back to a
    /// single centered layer padded by the wells when the stored connection
    /// cannot span the arc.
    Periodic,
    /// Constant map at the distinguished well.  Always rejected: the rotate
    /// of a well is a different well, so the twisted closure would carry a
    /// jump whose energy diverges under refinement.
    Uniform,
    /// Caller-provided samples on the fundamental arc.
    Samples(Vec<Vec2>),
}

/// Ball radius whose matched seed fills the fundamental arc of the circle
/// of radius `r`: one truncated connection plus its closing bridge.
pub fn match_seed_delta(ctx: &FiberContext, r: f64) -> Result<f64> {
    let target = ctx.arc_length(r);
    let om = ctx.potential.omega();
    let seg_len = |delta: f64| -> Result<f64> {
        let (t_exit, t_enter) = crossing_times(&ctx.profile, delta)?;
        let z_plus = ctx.profile.eval(t_exit);
        let z_minus = om.transpose().apply(ctx.profile.eval(t_enter));
        Ok(t_enter - t_exit + z_plus.dist(z_minus) / (ctx.constants.c_hi * delta))
    };
    // the segment grows as delta shrinks
    let mut hi = ctx.constants.delta_w;
    if seg_len(hi)? > target {
        return Err(NjError::Parameter(format!(
            "radius {r} is below the matched-seed range"
        )));
    }
    let mut lo = hi;
    let mut reached = false;
    while lo > 1e-12 {
        lo *= 0.5;
        if seg_len(lo)? >= target {
            reached = true;
            break;
        }
    }
    if !reached {
        return Err(NjError::Construction(format!(
            "stored connection cannot span a fundamental arc of length {target:.3}"
        )));
    }
    for _ in 0..SEED_BISECT_STEPS {
        let mid = 0.5 * (lo + hi);
        if seg_len(mid)? >= target {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

fn seed_samples(ctx: &FiberContext, r: f64, n_arc: usize) -> Result<Vec<Vec2>> {
    let om = ctx.potential.omega();
    let arc_len = ctx.arc_length(r);
    match match_seed_delta(ctx, r) {
        Ok(delta) => {
            let seed =
                build_periodic_seed(&ctx.potential, &ctx.profile, &ctx.constants, delta, ctx.segments())?;
            // resample index-proportionally onto the arc grid; the remaining
            // length mismatch is the bisection residual
            let m = seed.samples.len();
            Ok((0..n_arc)
                .map(|k| {
                    let t = k as f64 / n_arc as f64 * m as f64;
                    let i = (t.floor() as usize).min(m - 1);
                    let next = if i + 1 < m {
                        seed.samples[i + 1]
                    } else {
                        om.apply(seed.samples[0])
                    };
                    seed.samples[i].lerp(next, t - i as f64)
                })
                .collect())
        }
        // arc too long for the stored connection: park a single layer at the
        // middle and let the exponential extension pad the rest with wells
        Err(_) => {
            let ds = arc_len / n_arc as f64;
            Ok((0..n_arc)
                .map(|k| ctx.profile.eval(k as f64 * ds - 0.5 * arc_len))
                .collect())
        }
    }
}

/// Minimize the arc energy with the twisted closure.  The reported energy
/// covers the full period.
pub fn minimize_fiber(
    ctx: &FiberContext,
    r: f64,
    n_arc: usize,
    tol: f64,
    seed: &FiberSeed,
) -> Result<FiberProfile> {
    if !r.is_finite() || r < ctx.r_bar {
        return Err(NjError::Parameter(format!(
            "radius {r} is below the admissible threshold {:.6}",
            ctx.r_bar
        )));
    }
    if n_arc < MIN_ARC_SAMPLES {
        return Err(NjError::Parameter(format!(
            "need at least {MIN_ARC_SAMPLES} samples on the arc, got {n_arc}"
        )));
    }
    let init = match seed {
        FiberSeed::Uniform => {
            return Err(NjError::Parameter(
                "a constant map cannot satisfy the twisted closure: the rotate of a well is a different well".into(),
            ));
        }
        FiberSeed::Samples(v) => {
            if v.len() != n_arc {
                return Err(NjError::Parameter(format!(
                    "seed has {} samples but the arc grid has {n_arc}",
                    v.len()
                )));
            }
            if v.iter().any(|u| !(u.x.is_finite() && u.y.is_finite())) {
                return Err(NjError::Parameter("seed contains non-finite values".into()));
            }
            v.clone()
        }
        FiberSeed::Periodic => seed_samples(ctx, r, n_arc)?,
    };

    let segments = ctx.segments();
    let ring = RingEnergy::new(&ctx.potential, segments, r, n_arc)?;
    let mut x = flatten(&init);
    let mut params = DescentParams::new(tol, MAX_ITER_RING);
    params.init_step = 0.25 * ring.ds() * ring.ds();
    minimize(&ring, &mut x, &params)?;

    let arc_energy = ring.energy(&x);
    Ok(FiberProfile {
        radius: r,
        samples: unflatten(&x),
        arc_step: 2.0 * PI / (segments * n_arc) as f64,
        segments,
        energy: segments as f64 * arc_energy,
    })
}

/// Knobs for the structure classification, with every derived constant
/// spelled out once at construction.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnalysisParams {
    /// Well ball radius.
    pub delta: f64,
    pub alpha: f64,
    pub alpha_prime: f64,
    /// Multiplier in the plateau radius `delta' = c * delta^alpha`.
    pub c: f64,
    /// Plateau radius actually used (clamped below half the separation).
    pub delta_prime: f64,
    /// Largest admissible transition window.
    pub nu: f64,
    /// Radius beyond which every minimizing fiber must be structured.
    pub r_delta: f64,
    /// Fundamental arcs per turn.
    pub segments: usize,
}

impl AnalysisParams {
    pub fn derive(
        p: &Potential,
        k: &PotentialConstants,
        sigma: f64,
        h: usize,
        delta: f64,
        alpha: f64,
        alpha_prime: f64,
    ) -> Result<AnalysisParams> {
        p.validate()?;
        if h == 0 {
            return Err(NjError::Parameter("domain fold must be at least 1".into()));
        }
        if !(delta > 0.0 && delta <= k.delta_w) {
            return Err(NjError::Parameter(format!(
                "ball radius must lie in (0, {:.4}], got {delta}",
                k.delta_w
            )));
        }
        if !(alpha > 0.0 && alpha < 1.0 && alpha_prime > 0.0 && alpha_prime < 1.0) {
            return Err(NjError::Parameter(
                "exponents must lie strictly inside (0, 1)".into(),
            ));
        }
        if 2.0 * alpha + alpha_prime >= 1.0 {
            return Err(NjError::Parameter(format!(
                "exponent budget violated: 2*{alpha} + {alpha_prime} must stay below 1"
            )));
        }
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(NjError::Parameter(format!(
                "transition energy must be positive, got {sigma}"
            )));
        }
        let sep = p.wells().separation();
        let c = 1.0 + 1.0 / (k.c_lo * p.n_sym as f64) + k.c_hi / k.c_lo;
        let delta_prime = (c * delta.powf(alpha)).min(PLATEAU_CAP * sep);
        if delta_prime <= delta {
            return Err(NjError::Parameter(format!(
                "plateau radius {delta_prime:.4} does not clear the ball radius {delta}; lower delta"
            )));
        }
        let nu = 4.0 * sigma / (k.c_lo * k.c_lo * delta * delta);
        let segments = h * p.n_sym;
        Ok(AnalysisParams {
            delta,
            alpha,
            alpha_prime,
            c,
            delta_prime,
            nu,
            r_delta: segments as f64 * nu / PI,
            segments,
        })
    }

    /// Conservative ball radius with the standard exponent split.
    pub fn defaults(
        p: &Potential,
        k: &PotentialConstants,
        sigma: f64,
        h: usize,
    ) -> Result<AnalysisParams> {
        let delta = (0.05 * p.well_radius).min(0.25 * k.delta_w);
        AnalysisParams::derive(p, k, sigma, h, delta, 0.25, 0.25)
    }
}

/// Outcome of the structure ladder.  The variants are decided in order;
/// each test runs inside the complement of the previous one.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum FiberClass {
    /// The circle never enters any well ball: the potential alone forces
    /// energy linear in the radius.
    V1,
    /// After normalization the arc visits a well other than the two its
    /// endpoints hand off between.
    V2,
    /// The arc re-enters an endpoint well ball strictly inside the
    /// transition window.
    V3,
    /// The transition window is at least the admissible bound.
    V4,
    /// A single short transition between plateaus at the anchor well and
    /// its rotate.
    VStar {
        /// Angular midpoint of the transition window on the stored arc.
        theta_r: f64,
        /// Arc length of the transition window.
        s_transition: f64,
        /// Well the layer hands off to; with the twisted storage this is
        /// always the positive rotate of the anchor.
        a_prime: Vec2,
    },
}

impl FiberClass {
    pub fn tag(&self) -> &'static str {
        match self {
            FiberClass::V1 => "V1",
            FiberClass::V2 => "V2",
            FiberClass::V3 => "V3",
            FiberClass::V4 => "V4",
            FiberClass::VStar { .. } => "VSTAR",
        }
    }

    pub fn is_structured(&self) -> bool {
        matches!(self, FiberClass::VStar { .. })
    }

    pub fn theta_r(&self) -> Option<f64> {
        match self {
            FiberClass::VStar { theta_r, .. } => Some(*theta_r),
            _ => None,
        }
    }

    pub fn s_transition(&self) -> Option<f64> {
        match self {
            FiberClass::VStar { s_transition, .. } => Some(*s_transition),
            _ => None,
        }
    }
}

impl fmt::Display for FiberClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Closest approach to any well over the stored samples: slot, well index
/// and distance.  Distances to the well set are rotation invariant, so one
/// arc scans the whole circle.
fn anchor(samples: &[Vec2], ws: &WellSet) -> (usize, usize, f64) {
    let mut slot = 0;
    let mut well = 0;
    let mut best = f64::INFINITY;
    for (k, &u) in samples.iter().enumerate() {
        let (j, d) = ws.nearest(u);
        if d < best {
            best = d;
            slot = k;
            well = j;
        }
    }
    (slot, well, best)
}

/// Gauge the anchor to the distinguished well and shift it to slot zero.
/// Returns `n + 1` values; the last is the seam image of the first.
fn normalized_arc(v: &FiberProfile, om: Mat2, slot: usize, well: usize) -> Vec<Vec2> {
    let n = v.samples.len();
    let gauge = om.pow(-(well as i64));
    (0..=n)
        .map(|k| gauge.apply(v.fetch((slot + k) as i64, om)))
        .collect()
}

/// First arc length at which the distance to `well` rises through `level`
/// (the values start inside).
fn first_exit(vals: &[Vec2], ds: f64, well: Vec2, level: f64) -> Option<f64> {
    for i in 0..vals.len() - 1 {
        let d0 = vals[i].dist(well);
        let d1 = vals[i + 1].dist(well);
        if d0 <= level && d1 > level {
            return Some((i as f64 + (level - d0) / (d1 - d0)) * ds);
        }
    }
    None
}

/// Last arc length at which the distance to `well` falls through `level`
/// (the values end inside).
fn last_entry(vals: &[Vec2], ds: f64, well: Vec2, level: f64) -> Option<f64> {
    for i in (0..vals.len() - 1).rev() {
        let d0 = vals[i].dist(well);
        let d1 = vals[i + 1].dist(well);
        if d0 > level && d1 <= level {
            return Some((i as f64 + (d0 - level) / (d0 - d1)) * ds);
        }
    }
    None
}

/// Replay the structure ladder on the sampled arc.  Ball membership is
/// decided at sample level; window endpoints interpolate linearly between
/// samples, which localizes them far below the admissible window size for
/// any reasonable grid.
pub fn classify_fiber(p: &Potential, v: &FiberProfile, params: &AnalysisParams) -> FiberClass {
    let ws = p.wells();
    let om = p.omega();
    let n = v.samples.len();

    let (slot, well, d_star) = anchor(&v.samples, &ws);
    if !(d_star <= params.delta) {
        return FiberClass::V1;
    }

    let vals = normalized_arc(v, om, slot, well);
    let ds = v.ds();
    let base_angle = slot as f64 * v.arc_step;
    let a = ws.a;
    let a_next = om.apply(a);

    // a detour through any well that is neither the anchor nor its rotate
    for u in &vals[1..n] {
        for far in &ws.wells[2..] {
            if u.dist(*far) <= params.delta {
                return FiberClass::V2;
            }
        }
    }

    // the transition window: first time the arc clears the anchor plateau,
    // last time it settles into the next one.  Both crossings exist because
    // the normalized arc starts inside one plateau and ends inside the
    // other.
    let s_minus = first_exit(&vals, ds, a, params.delta_prime)
        .expect("arc starts inside the plateau and must leave it");
    let s_plus = last_entry(&vals, ds, a_next, params.delta_prime)
        .expect("arc ends inside the rotated plateau and must enter it");

    for (i, u) in vals.iter().enumerate() {
        let s = i as f64 * ds;
        if s > s_minus && s < s_plus && (u.dist(a) <= params.delta || u.dist(a_next) <= params.delta)
        {
            return FiberClass::V3;
        }
    }

    if s_plus - s_minus >= params.nu {
        return FiberClass::V4;
    }

    let mid = 0.5 * (s_minus + s_plus);
    FiberClass::VStar {
        theta_r: (base_angle + mid / v.radius).rem_euclid(v.arc_angle()),
        s_transition: s_plus - s_minus,
        a_prime: a_next,
    }
}

/// Measured plateau midpoint against the hyperbolic-cosine comparison
/// envelope anchored at the certified ball crossings.
#[derive(Debug, Clone, Copy)]
pub struct MidpointCheck {
    /// Distance from the plateau midpoint to the anchor well.
    pub distance: f64,
    /// Envelope value at the midpoint.
    pub envelope: f64,
    /// Half-length of the plateau between consecutive layers.
    pub plateau_half: f64,
}

/// Evaluate the comparison envelope at the point of the arc farthest from
/// the transition layer.  Meaningful for structured fibers; errors when the
/// arc has no plateau at the certified radius.
pub fn midpoint_envelope(
    p: &Potential,
    v: &FiberProfile,
    k: &PotentialConstants,
) -> Result<MidpointCheck> {
    let ws = p.wells();
    let om = p.omega();
    let (slot, well, d_star) = anchor(&v.samples, &ws);
    if !(d_star <= k.delta_w) {
        return Err(NjError::Construction(
            "no sample approaches a well within the certified radius".into(),
        ));
    }
    let vals = normalized_arc(v, om, slot, well);
    let ds = v.ds();
    let arc_len = v.arc_length();
    let s_minus = first_exit(&vals, ds, ws.a, k.delta_w).ok_or_else(|| {
        NjError::Construction("arc never leaves the certified ball of its anchor well".into())
    })?;
    let s_plus = last_entry(&vals, ds, om.apply(ws.a), k.delta_w).ok_or_else(|| {
        NjError::Construction("arc never settles into the rotated well's certified ball".into())
    })?;
    let plateau = arc_len - (s_plus - s_minus);
    if plateau <= 0.0 {
        return Err(NjError::Construction(
            "transition window fills the whole arc".into(),
        ));
    }
    let half = 0.5 * plateau;

    // antipodal point of the layer midpoint, one half-arc back; negative
    // arc lengths wrap with the inverse twist
    let s_mid = 0.5 * (s_minus + s_plus) - 0.5 * arc_len;
    let n = vals.len() - 1;
    let wraps = (s_mid / arc_len).floor();
    let rem = s_mid - wraps * arc_len;
    let t = (rem / ds).min(n as f64 - 1e-9).max(0.0);
    let i = t.floor() as usize;
    let interp = vals[i].lerp(vals[i + 1], t - i as f64);
    let u_mid = om.pow(wraps as i64).apply(interp);

    Ok(MidpointCheck {
        distance: u_mid.dist(ws.a),
        envelope: k.delta_w * k.delta_w / (k.c_lo * half).cosh(),
        plateau_half: half,
    })
}

/// One radius of a gap sweep.
#[derive(Debug, Clone)]
pub struct FiberSweepRow {
    pub radius: f64,
    /// Full-period energy of the computed minimizer.
    pub energy: f64,
    /// Flat transition count minus the energy; positive when the circle
    /// still feels the curvature.
    pub gap: f64,
    pub class: FiberClass,
}

/// Minimize at every radius (in parallel) and report the energy gap to the
/// flat transition count together with each fiber's classification.  Sample
/// counts scale with the circumference so the arc step stays near
/// `ds_target`.
pub fn fiber_gap(
    ctx: &FiberContext,
    params: &AnalysisParams,
    radii: &[f64],
    ds_target: f64,
    tol: f64,
) -> Result<Vec<FiberSweepRow>> {
    if radii.is_empty() {
        return Err(NjError::Parameter("no radii requested".into()));
    }
    if !radii.windows(2).all(|w| w[0] < w[1]) {
        return Err(NjError::Parameter("radii must be strictly increasing".into()));
    }
    if !(ds_target > 0.0 && ds_target.is_finite()) {
        return Err(NjError::Parameter(format!(
            "arc step target must be positive, got {ds_target}"
        )));
    }
    let flat = ctx.segments() as f64 * ctx.sigma;
    radii
        .par_iter()
        .map(|&r| {
            let n_arc = ((ctx.arc_length(r) / ds_target).round() as usize).max(MIN_ARC_SAMPLES);
            let prof = minimize_fiber(ctx, r, n_arc, tol, &FiberSeed::Periodic)?;
            let class = classify_fiber(&ctx.potential, &prof, params);
            Ok(FiberSweepRow {
                radius: r,
                energy: prof.energy,
                gap: flat - prof.energy,
                class,
            })
        })
        .collect()
}

/// Exponential fit `gap ~ amplitude * exp(-rate * r)` over the rows with a
/// positive gap.  `None` when fewer than two rows qualify.
#[derive(Debug, Clone, Copy)]
pub struct GapFit {
    pub rate: f64,
    pub amplitude: f64,
    /// Rows that entered the fit.
    pub used: usize,
}

pub fn gap_rate(rows: &[FiberSweepRow]) -> Option<GapFit> {
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for row in rows {
        if row.gap > 0.0 {
            xs.push(row.radius);
            ys.push(row.gap.ln());
        }
    }
    line_fit(&xs, &ys).map(|(intercept, slope)| GapFit {
        rate: -slope,
        amplitude: intercept.exp(),
        used: xs.len(),
    })
}

/// Decay rate of the gap predicted by the comparison envelope: certified
/// rate times the plateau half-angle.
pub fn expected_gap_rate(ctx: &FiberContext) -> f64 {
    ctx.constants.c_lo * PI / ctx.segments() as f64
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn scalar_ctx() -> &'static FiberContext {
        static CTX: OnceLock<FiberContext> = OnceLock::new();
        CTX.get_or_init(|| {
            let p = Potential::scalar_bistable();
            let profile = solve_heteroclinic(&p, 16.0, 1600, 1e-6).unwrap();
            let k = estimate_constants(&p, &[], 128).unwrap();
            FiberContext::with_parts(p, 1, profile, k).unwrap()
        })
    }

    fn scalar_params(ctx: &FiberContext) -> AnalysisParams {
        AnalysisParams::derive(
            &ctx.potential,
            &ctx.constants,
            ctx.sigma,
            ctx.h,
            ctx.constants.delta_w,
            0.25,
            0.25,
        )
        .unwrap()
    }

    /// Sample an arc-length parametrization into a profile, with the energy
    /// filled in through the ring functional.
    fn profile_from_fn(
        p: &Potential,
        segments: usize,
        radius: f64,
        n: usize,
        f: impl Fn(f64) -> Vec2,
    ) -> FiberProfile {
        let arc_len = 2.0 * PI * radius / segments as f64;
        let ds = arc_len / n as f64;
        let samples: Vec<Vec2> = (0..n).map(|k| f(k as f64 * ds)).collect();
        let ring = RingEnergy::new(p, segments, radius, n).unwrap();
        let energy = segments as f64 * ring.energy(&flatten(&samples));
        FiberProfile {
            radius,
            samples,
            arc_step: 2.0 * PI / (segments * n) as f64,
            segments,
            energy,
        }
    }

    /// Piecewise-linear path through `(t, value)` knots, `t` in [0, 1].
    fn knot_path(knots: &[(f64, Vec2)], t: f64) -> Vec2 {
        for w in knots.windows(2) {
            if t >= w[0].0 && t <= w[1].0 {
                let frac = (t - w[0].0) / (w[1].0 - w[0].0);
                return w[0].1.lerp(w[1].1, frac);
            }
        }
        knots.last().unwrap().1
    }

    #[test]
    fn rejects_uniform_seed_and_bad_parameters() {
        let ctx = scalar_ctx();
        assert!(matches!(
            minimize_fiber(&ctx, 10.0, 256, 1e-5, &FiberSeed::Uniform),
            Err(NjError::Parameter(_))
        ));
        assert!(matches!(
            minimize_fiber(&ctx, 10.0, 64, 1e-5, &FiberSeed::Periodic),
            Err(NjError::Parameter(_))
        ));
        let err = minimize_fiber(&ctx, 0.3, 256, 1e-5, &FiberSeed::Periodic).unwrap_err();
        match err {
            NjError::Parameter(msg) => assert!(msg.contains("threshold")),
            other => panic!("expected parameter error, got {other:?}"),
        }
        // exponent budget and oversized ball radius
        assert!(AnalysisParams::derive(
            &ctx.potential,
            &ctx.constants,
            ctx.sigma,
            1,
            0.1,
            0.4,
            0.3
        )
        .is_err());
        assert!(AnalysisParams::derive(
            &ctx.potential,
            &ctx.constants,
            ctx.sigma,
            1,
            2.0 * ctx.constants.delta_w,
            0.25,
            0.25
        )
        .is_err());
    }

    #[test]
    fn scalar_minimizer_is_two_glued_layers() {
        let ctx = scalar_ctx();
        let r = 9.0;
        let n_arc = (ctx.arc_length(r) / 0.02).round() as usize;
        let prof = minimize_fiber(&ctx, r, n_arc, 1e-6, &FiberSeed::Periodic).unwrap();

        // beats the matched comparison map
        let delta_r = match_seed_delta(&ctx, r).unwrap();
        let bound = 2.0 * (ctx.sigma + 2.0 * ctx.constants.c_hi * delta_r * delta_r);
        assert!(
            prof.energy <= bound + 1e-3,
            "energy {} above seed bound {bound}",
            prof.energy
        );

        // one sign change per arc, hence two layers per turn
        let om = ctx.potential.omega();
        let full: Vec<Vec2> = (0..2 * n_arc as i64).map(|k| prof.fetch(k, om)).collect();
        let mut flips = 0;
        for i in 0..full.len() {
            let next = full[(i + 1) % full.len()];
            if full[i].x * next.x < 0.0 {
                flips += 1;
            }
        }
        assert_eq!(flips, 2);

        // close to the stored connection glued at its zero crossing
        let ds = prof.ds();
        let mut s0 = None;
        for i in 0..n_arc - 1 {
            if prof.samples[i].x > 0.0 && prof.samples[i + 1].x <= 0.0 {
                let t = prof.samples[i].x / (prof.samples[i].x - prof.samples[i + 1].x);
                s0 = Some((i as f64 + t) * ds);
                break;
            }
        }
        let s0 = s0.expect("arc must cross the midplane");
        let mut l2 = 0.0;
        for (i, &u) in prof.samples.iter().enumerate() {
            let d = u - ctx.profile.eval(i as f64 * ds - s0);
            l2 += d.norm_sq() * ds;
        }
        assert!(l2.sqrt() < 0.05, "distance to glued layers {}", l2.sqrt());
    }

    #[test]
    fn fiber_energy_gap_decays_exponentially() {
        let ctx = scalar_ctx();
        let params = scalar_params(&ctx);
        // small radii keep the gap far above the discretization noise; by
        // r = 8 it has fallen below 1e-15 and only solver noise remains
        let ds = ctx.profile.step();
        let rows = fiber_gap(&ctx, &params, &[1.5, 2.0, 2.5, 3.0], ds, 1e-6).unwrap();
        for row in &rows {
            eprintln!(
                "r = {:5.1}  energy = {:.12}  gap = {:+.3e}  class = {}",
                row.radius, row.energy, row.gap, row.class
            );
        }
        for w in rows.windows(2) {
            assert!(w[0].gap > w[1].gap, "gap did not decay: {w:?}");
        }
        for row in &rows {
            assert!(row.gap > 0.0, "gap at r = {} is {}", row.radius, row.gap);
        }

        let fit = gap_rate(&rows).unwrap();
        assert_eq!(fit.used, rows.len());
        // the certified rate only bounds the gap from above, so the
        // measured slope must be at least comparable and is allowed to be
        // steeper by the certification slack
        let expected = expected_gap_rate(&ctx);
        assert!(
            fit.rate > 0.8 * expected && fit.rate < 5.0 * expected,
            "fitted rate {} vs certified bound {expected}",
            fit.rate
        );
    }

    #[test]
    fn classify_constant_zero_is_v1() {
        let p = Potential::complex_well(3, 1.0).unwrap();
        let k = estimate_constants(&p, &[], 128).unwrap();
        let params = AnalysisParams::derive(&p, &k, 1.7, 1, k.delta_w, 0.25, 0.25).unwrap();
        let prof = profile_from_fn(&p, 3, 20.0, 256, |_| Vec2::new(0.0, 0.0));
        assert_eq!(classify_fiber(&p, &prof, &params), FiberClass::V1);
    }

    #[test]
    fn classify_detour_through_far_well_is_v2() {
        let p = Potential::complex_well(4, 1.0).unwrap();
        let a = Vec2::new(1.0, 0.0);
        let far = Vec2::new(-1.0, 0.0);
        let next = Vec2::new(0.0, 1.0);
        let knots = [
            (0.0, a),
            (0.1, a),
            (0.4, far),
            (0.55, far),
            (0.9, next),
            (1.0, next),
        ];
        let radius = 30.0;
        let arc_len = 2.0 * PI * radius / 4.0;
        let prof = profile_from_fn(&p, 4, radius, 512, |s| knot_path(&knots, s / arc_len));
        let params = AnalysisParams {
            delta: 0.15,
            alpha: 0.25,
            alpha_prime: 0.25,
            c: 2.0,
            delta_prime: 0.5,
            nu: 1e6,
            r_delta: 1.0,
            segments: 4,
        };
        assert_eq!(classify_fiber(&p, &prof, &params), FiberClass::V2);
    }

    fn reentry_profile(p: &Potential) -> (FiberProfile, AnalysisParams) {
        let plus = Vec2::new(1.0, 0.0);
        let minus = Vec2::new(-1.0, 0.0);
        let knots = [
            (0.0, plus),
            (0.1, plus),
            (0.35, Vec2::new(0.0, 0.0)),
            (0.5, Vec2::new(0.85, 0.0)),
            (0.8, minus),
            (1.0, minus),
        ];
        let radius = 20.0;
        let arc_len = PI * radius;
        let prof = profile_from_fn(p, 2, radius, 512, |s| knot_path(&knots, s / arc_len));
        let params = AnalysisParams {
            delta: 0.2,
            alpha: 0.25,
            alpha_prime: 0.25,
            c: 2.0,
            delta_prime: 0.5,
            nu: 1e9,
            r_delta: 1.0,
            segments: 2,
        };
        (prof, params)
    }

    #[test]
    fn classify_reentry_is_v3() {
        let p = Potential::scalar_bistable();
        let (prof, params) = reentry_profile(&p);
        assert_eq!(classify_fiber(&p, &prof, &params), FiberClass::V3);

        // the tag survives relabeling the sample origin
        let om = p.omega();
        let n = prof.samples.len();
        let rolled = FiberProfile {
            samples: (0..n).map(|i| prof.fetch((i + 11) as i64, om)).collect(),
            ..prof.clone()
        };
        assert_eq!(classify_fiber(&p, &rolled, &params), FiberClass::V3);
    }

    #[test]
    fn classify_slow_transition_is_v4() {
        let p = Potential::scalar_bistable();
        let radius = 20.0;
        let arc_len = PI * radius;
        let prof = profile_from_fn(&p, 2, radius, 512, |s| {
            Vec2::new(1.0 - 2.0 * s / arc_len, 0.0)
        });
        let params = AnalysisParams {
            delta: 0.2,
            alpha: 0.25,
            alpha_prime: 0.25,
            c: 2.0,
            delta_prime: 0.5,
            nu: 0.3 * arc_len,
            r_delta: 1.0,
            segments: 2,
        };
        assert_eq!(classify_fiber(&p, &prof, &params), FiberClass::V4);
    }

    #[test]
    fn classify_layer_is_vstar_and_rotation_covariant() {
        let p = Potential::scalar_bistable();
        let radius = 12.73;
        let arc_len = PI * radius;
        let s_c = 0.6 * arc_len;
        let prof = profile_from_fn(&p, 2, radius, 1024, |s| {
            Vec2::new(-((s - s_c).tanh()), 0.0)
        });
        let params = AnalysisParams {
            delta: 0.2,
            alpha: 0.25,
            alpha_prime: 0.25,
            c: 2.0,
            delta_prime: 0.5,
            nu: 20.0,
            r_delta: 1.0,
            segments: 2,
        };
        let class = classify_fiber(&p, &prof, &params);
        let theta = class.theta_r().expect("layer map must be structured");
        assert!((theta - s_c / radius).abs() < 1e-3);
        assert!(class.s_transition().unwrap() < 2.0);

        let om = p.omega();
        let n = prof.samples.len();
        let shift = 37usize;
        let rolled = FiberProfile {
            samples: (0..n).map(|i| prof.fetch((i + shift) as i64, om)).collect(),
            ..prof.clone()
        };
        let rolled_class = classify_fiber(&p, &rolled, &params);
        assert_eq!(rolled_class.tag(), "VSTAR");
        let expect = (theta - shift as f64 * prof.arc_step).rem_euclid(prof.arc_angle());
        let got = rolled_class.theta_r().unwrap();
        let arc = prof.arc_angle();
        let diff = (got - expect + 0.5 * arc).rem_euclid(arc) - 0.5 * arc;
        assert!(diff.abs() < 1e-9, "theta shifted by {diff}");
    }

    #[test]
    fn full_period_energy_matches_direct_sum() {
        let p = Potential::complex_well(3, 1.0).unwrap();
        let radius = 9.0;
        let n = 384;
        let arc_len = 2.0 * PI * radius / 3.0;
        // an off-axis wandering loop, nothing special about it
        let prof = profile_from_fn(&p, 3, radius, n, |s| {
            Vec2::new(
                (2.0 * PI * s / arc_len).cos() * 0.9,
                0.3 + 0.2 * (4.0 * PI * s / arc_len).sin(),
            )
        });
        let om = p.omega();
        let total = 3 * n;
        let full: Vec<Vec2> = (0..total as i64).map(|k| prof.fetch(k, om)).collect();
        let ds = prof.ds();
        let mut kin = 0.0;
        let mut pot = 0.0;
        for i in 0..total {
            let next = full[(i + 1) % total];
            kin += (next - full[i]).norm_sq();
            pot += p.eval(full[i]);
        }
        let direct = kin / (2.0 * ds) + ds * pot;
        assert!(
            (direct - prof.energy).abs() <= 1e-12 * prof.energy.abs().max(1.0),
            "direct {direct} vs stored {}",
            prof.energy
        );
    }

    #[test]
    fn midpoint_stays_under_comparison_envelope() {
        let ctx = scalar_ctx();
        let r = 13.0;
        let n_arc = (ctx.arc_length(r) / 0.02).round() as usize;
        let prof = minimize_fiber(&ctx, r, n_arc, 1e-6, &FiberSeed::Periodic).unwrap();
        let check = midpoint_envelope(&ctx.potential, &prof, &ctx.constants).unwrap();
        assert!(
            check.distance <= check.envelope + 1e-3,
            "midpoint {} vs envelope {}",
            check.distance,
            check.envelope
        );
        assert!(check.plateau_half > 1.0);

        // the radius clears the structure threshold, so the minimizer must
        // classify as a single clean layer
        let params = scalar_params(&ctx);
        assert!(r >= params.r_delta);
        let class = classify_fiber(&ctx.potential, &prof, &params);
        assert!(class.is_structured(), "expected a layer, got {class}");
        assert!(class.s_transition().unwrap() < params.nu);
    }

    #[test]
    fn explicit_seed_accepted() {
        let ctx = scalar_ctx();
        let r = 10.0;
        let n_arc = 512;
        let arc_len = ctx.arc_length(r);
        let ds = arc_len / n_arc as f64;
        let seed: Vec<Vec2> = (0..n_arc)
            .map(|k| ctx.profile.eval(k as f64 * ds - 0.5 * arc_len))
            .collect();
        let prof = minimize_fiber(&ctx, r, n_arc, 1e-5, &FiberSeed::Samples(seed)).unwrap();
        assert_eq!(prof.samples.len(), n_arc);
        assert!(prof.energy < 2.0 * ctx.sigma + 0.5);
    }

    #[test]
    fn ring_gradient_matches_finite_differences() {
        let p = Potential::complex_well(3, 1.0).unwrap();
        let ring = RingEnergy::new(&p, 3, 5.0, 200).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0x52494e47);
        let x: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.2..1.2)).collect();
        let mut g = vec![0.0; 400];
        ring.gradient(&x, &mut g);
        for _ in 0..5 {
            let dir: Vec<f64> = (0..400).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let dir: Vec<f64> = dir.iter().map(|d| d / norm).collect();
            let analytic: f64 = g.iter().zip(&dir).map(|(gi, di)| gi * di).sum();
            let eps = 1e-5;
            let plus: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + eps * di).collect();
            let minus: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi - eps * di).collect();
            let fd = (ring.energy(&plus) - ring.energy(&minus)) / (2.0 * eps);
            let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
            assert!(rel < 1e-5, "gradient mismatch: {analytic} vs {fd}");
        }
    }
}
