//! Structure extraction for converged disk fields.
//!
//! The pipeline reads a field radially.  Every resolved ring is classified,
//! the radii that fail to carry a single layer are collected, and the layer
//! angle is tracked across the structured rings together with the Lipschitz
//! budget it must respect.  Around the layer a staged decomposition into
//! annular cells is built, the shortest curve threading the cells is
//! computed, and the energy is accounted for in sections transverse to that
//! curve.  Two sampled certificates close the loop: an exponential fit of
//! the approach to the preferred well, and a ball-hypothesis check of the
//! pointwise well bound.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::disk::{radial_kinetic, restrict_fiber, total_energy, EquivariantField};
use crate::error::{NjError, Result};
use crate::fiber::{classify_fiber, AnalysisParams, FiberClass};
use crate::geometry::{line_fit, Vec2};
use crate::heteroclinic::segment_lower_bound;
use crate::potential::Potential;

/// Vertex arcs never reach past this fraction of the sector, and outer
/// arcs past the next one, so a cell cannot spill into its own images.
const P_CAP: f64 = 0.40;
const Q_CAP: f64 = 0.45;
/// Points per free arc in the shortest-path stage.
const ARC_POINTS: usize = 65;
/// Angular bracket below which a vertex is considered settled.
const VERTEX_TOL: f64 = 1e-12;
/// A vertex this close to an arc end counts as pinned there.
const EDGE_TOL: f64 = 1e-9;
/// Stop sweeping once a whole pass gains less than this much length.
const SWEEP_TOL: f64 = 1e-10;
/// Straightness tolerance for the corner conditions.
const KKT_TOL: f64 = 1e-6;
/// Signal floor and minimum population for the decay fit.
const DECAY_FLOOR: f64 = 1e-12;
const DECAY_MIN_NODES: usize = 30;
/// Factor a decay-fit row must sit above the measured far-field plateau.
const PLATEAU_HEADROOM: f64 = 10.0;
/// Distance bins for the decay envelope.
const ENVELOPE_BINS: usize = 64;
/// Occupied envelope bins needed for a credible rate fit.
const ENVELOPE_MIN_BINS: usize = 12;
/// Relative slack for the transverse energy comparisons; covers the
/// defect of sampling a piecewise-bilinear field along oblique chords.
const SECTION_SLACK: f64 = 0.05;
/// Target chord step is this length over the stiffness rate.
const CHORD_STEP: f64 = 0.15;
/// Probe sampling seed.
const PROBE_SEED: u64 = 0x6a75_6e63_74;

/// Signed difference `a - b` folded into `(-period/2, period/2]`.
fn wrapped_diff(a: f64, b: f64, period: f64) -> f64 {
    let d = (a - b).rem_euclid(period);
    if d > 0.5 * period {
        d - period
    } else {
        d
    }
}

/// Radii whose fiber restriction fails the single-layer classification.
#[derive(Debug, Clone)]
pub struct SigmaSet {
    /// Grid radii at or beyond the structure threshold, increasing.
    pub radii: Vec<f64>,
    pub flagged: Vec<bool>,
    pub classes: Vec<FiberClass>,
    /// Total flagged length, `dr` per flagged ring.
    pub measure: f64,
    pub delta: f64,
    pub alpha: f64,
    pub dr: f64,
}

impl SigmaSet {
    pub fn flagged_count(&self) -> usize {
        self.flagged.iter().filter(|&&f| f).count()
    }

    /// Membership by nearest ring; radii outside the resolved range are
    /// never members.
    pub fn contains(&self, r: f64) -> bool {
        if self.radii.is_empty() {
            return false;
        }
        let idx = ((r - self.radii[0]) / self.dr).round();
        if idx < 0.0 || idx >= self.radii.len() as f64 {
            return false;
        }
        self.flagged[idx as usize]
    }
}

/// Classify every ring at or beyond the structure threshold and measure
/// the set that fails.
pub fn detect_sigma(
    p: &Potential,
    field: &EquivariantField,
    params: &AnalysisParams,
) -> Result<SigmaSet> {
    let grid = field.grid;
    if params.segments != grid.segments {
        return Err(NjError::Parameter(format!(
            "params describe {} arcs per turn but the grid stores {}",
            params.segments, grid.segments
        )));
    }
    let rows: Vec<usize> = (0..grid.n_r)
        .filter(|&i| grid.radius(i) >= params.r_delta)
        .collect();
    if rows.is_empty() {
        return Err(NjError::InsufficientData(format!(
            "no ring reaches the structure threshold {:.2}; the grid stops at {:.2}",
            params.r_delta,
            grid.radius(grid.n_r - 1)
        )));
    }
    let classes: Vec<FiberClass> = rows
        .par_iter()
        .map(|&i| {
            let prof = restrict_fiber(p, field, grid.radius(i))?;
            Ok(classify_fiber(p, &prof, params))
        })
        .collect::<Result<_>>()?;
    let flagged: Vec<bool> = classes.iter().map(|c| !c.is_structured()).collect();
    let measure = grid.dr() * flagged.iter().filter(|&&f| f).count() as f64;
    Ok(SigmaSet {
        radii: rows.iter().map(|&i| grid.radius(i)).collect(),
        flagged,
        classes,
        measure,
        delta: params.delta,
        alpha: params.alpha,
        dr: grid.dr(),
    })
}

/// Layer angle at one structured radius, with the half-width of the
/// bracket the classification guarantees around it.
#[derive(Debug, Clone, Copy)]
pub struct ThetaEntry {
    pub r: f64,
    pub theta: f64,
    pub bracket: f64,
}

/// The layer-angle map, defined off the flagged set.
#[derive(Debug, Clone)]
pub struct ThetaMap {
    pub entries: Vec<ThetaEntry>,
    /// Angular grid step, the slack unit for geometric comparisons.
    pub dtheta: f64,
    /// Fundamental sector angle.
    pub sector: f64,
}

impl ThetaMap {
    pub fn lookup(&self, r: f64, tol: f64) -> Option<&ThetaEntry> {
        self.entries.iter().find(|e| (e.r - r).abs() <= tol)
    }
}

/// Collect the layer angles of the structured rings.
pub fn theta_map(field: &EquivariantField, sigma: &SigmaSet, params: &AnalysisParams) -> ThetaMap {
    let entries = sigma
        .radii
        .iter()
        .zip(&sigma.classes)
        .filter_map(|(&r, class)| {
            class.theta_r().map(|theta| ThetaEntry {
                r,
                theta,
                bracket: 0.5 * params.nu / r,
            })
        })
        .collect();
    ThetaMap {
        entries,
        dtheta: field.grid.dtheta(),
        sector: field.grid.sector_angle(),
    }
}

/// Modulus for the layer-angle comparison across radii, driven by the
/// measured radial kinetic energy and the certified plateau clearance.
pub fn lipschitz_constant(p: &Potential, field: &EquivariantField, params: &AnalysisParams) -> f64 {
    let sep = p.wells().separation();
    let clearance = sep - 2.0 * params.delta_prime;
    radial_kinetic(field) / (params.segments as f64 * clearance * clearance)
}

/// Relative radius window inside which the angle comparison applies.  The
/// window shrinks as the modulus grows so the compared brackets can never
/// wrap around the sector.
pub fn beta_window(c_hat: f64, segments: usize) -> f64 {
    (1.0 - (-PI / (2.0 * c_hat.max(1e-12) * segments as f64)).exp()).min(0.9)
}

/// Outcome of sweeping all radius pairs inside the comparison window.
#[derive(Debug, Clone, Serialize)]
pub struct LipschitzReport {
    pub pairs_checked: usize,
    /// Pairs `(r_lo, r_hi)` whose angle gap exceeds the budget.
    pub violations: Vec<(f64, f64)>,
    /// Radii whose bracket alone wraps the whole sector.
    pub cap_violations: Vec<f64>,
    pub c_hat: f64,
    pub beta: f64,
}

/// Check every pair of structured radii within the window against the
/// travel budget `nu/r + nu/r' + c_hat |ln(r'/r)|`, with one angular grid
/// cell of slack.
pub fn lipschitz_violations(
    tm: &ThetaMap,
    params: &AnalysisParams,
    c_hat: f64,
) -> LipschitzReport {
    let beta = beta_window(c_hat, params.segments);
    let mut pairs_checked = 0;
    let mut violations = Vec::new();
    for i in 0..tm.entries.len() {
        let lo = tm.entries[i];
        for hi in &tm.entries[i + 1..] {
            if hi.r >= lo.r * (1.0 + beta) {
                break;
            }
            pairs_checked += 1;
            let budget =
                params.nu / lo.r + params.nu / hi.r + c_hat * (hi.r / lo.r).ln() + tm.dtheta;
            if wrapped_diff(hi.theta, lo.theta, tm.sector).abs() > budget {
                violations.push((lo.r, hi.r));
            }
        }
    }
    let cap_violations = tm
        .entries
        .iter()
        .filter(|e| params.nu / e.r >= tm.sector)
        .map(|e| e.r)
        .collect();
    LipschitzReport {
        pairs_checked,
        violations,
        cap_violations,
        c_hat,
        beta,
    }
}

/// One annular cell of the staged interface.  All angles are unwrapped:
/// consecutive layer angles differ by their shortest wrapped difference,
/// so the cells chain continuously even when the raw map crosses the seam.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct InterfaceCell {
    pub r_lo: f64,
    pub r_hi: f64,
    /// Layer angle at `r_lo`; the vertex arc and both side segments hang
    /// off it, and so does the outer arc, which stages the angle the layer
    /// had before crossing the cell.
    pub theta_lo: f64,
    /// Layer angle at `r_hi`.
    pub theta_hi: f64,
    /// Half-width of the vertex arc at `r_lo`.
    pub half_p: f64,
    /// Half-width of the bare bracket arc at `r_lo`, without the width
    /// allowance.
    pub half_phat: f64,
    /// Half-width of the outer arc at `r_hi`, centered on `theta_lo`.
    pub half_q: f64,
}

impl InterfaceCell {
    pub fn p_plus(&self) -> Vec2 {
        Vec2::from_polar(self.r_lo, self.theta_lo + self.half_p)
    }

    pub fn p_minus(&self) -> Vec2 {
        Vec2::from_polar(self.r_lo, self.theta_lo - self.half_p)
    }

    pub fn phat_plus(&self) -> Vec2 {
        Vec2::from_polar(self.r_lo, self.theta_lo + self.half_phat)
    }

    pub fn phat_minus(&self) -> Vec2 {
        Vec2::from_polar(self.r_lo, self.theta_lo - self.half_phat)
    }

    pub fn q_plus(&self) -> Vec2 {
        Vec2::from_polar(self.r_hi, self.theta_lo + self.half_q)
    }

    pub fn q_minus(&self) -> Vec2 {
        Vec2::from_polar(self.r_hi, self.theta_lo - self.half_q)
    }
}

/// The staged interface: quadratically spaced radii dodged off the flagged
/// set, logarithmic width allowances, and the marker arcs bounding each
/// cell.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct InterfaceGraph {
    pub c1: u32,
    pub c_tilde: f64,
    pub c_hat: f64,
    pub nu: f64,
    pub sector: f64,
    pub segments: usize,
    pub dtheta: f64,
    /// Staged radii, one more than the number of cells.
    pub radii: Vec<f64>,
    /// Unwrapped layer angles at the staged radii.
    pub thetas: Vec<f64>,
    /// Downward shifts that moved each staged radius off the flagged set.
    pub mus: Vec<f64>,
    /// Width allowances at the staged radii.
    pub lambdas: Vec<f64>,
    pub cells: Vec<InterfaceCell>,
    /// Achieved bracketing of `(r_{j+1} - r_j) / sqrt(r_j)`.
    pub ratio_lo: f64,
    pub ratio_hi: f64,
    /// Largest relative radius step, and the half-window it should stay
    /// under for the angle comparison to cover every cell.
    pub beta_max: f64,
    pub beta_budget: f64,
    /// Smallest same-radius angular gap between an outer arc and the next
    /// vertex arc; positive means the staging orders correctly.
    pub pq_margin: f64,
    /// Marker half-widths clipped to the sector caps.
    pub clamped: usize,
}

impl InterfaceGraph {
    pub fn cell_count(&self) -> usize {
        self.cells.len()
    }
}

/// Build the staged interface around the layer.  `c1` offsets the
/// quadratic radius schedule (chosen automatically when absent) and
/// `c_tilde` scales the logarithmic width allowance.
pub fn build_interface(
    p: &Potential,
    field: &EquivariantField,
    tm: &ThetaMap,
    sigma: &SigmaSet,
    params: &AnalysisParams,
    c1: Option<u32>,
    c_tilde: f64,
) -> Result<InterfaceGraph> {
    let grid = field.grid;
    if params.segments != grid.segments {
        return Err(NjError::Parameter(format!(
            "params describe {} arcs per turn but the grid stores {}",
            params.segments, grid.segments
        )));
    }
    if (sigma.dr - grid.dr()).abs() > 1e-9 * grid.dr() {
        return Err(NjError::Parameter(
            "the flagged set was measured on a different grid".into(),
        ));
    }
    if !(c_tilde > 0.0 && c_tilde.is_finite()) {
        return Err(NjError::Parameter(format!(
            "width coefficient must be positive, got {c_tilde}"
        )));
    }
    let dr = grid.dr();
    let sector = grid.sector_angle();
    let floor_r = params.r_delta.max(4.0 * dr);
    let c1 = c1.unwrap_or_else(|| {
        let mut c = 0u32;
        while f64::from(1 + c) * f64::from(1 + c) < floor_r {
            c += 1;
        }
        c
    });

    // Quadratic schedule, snapped to the grid and walked inward off the
    // flagged set.  The walk budget is the measured flagged length plus
    // one cell for the snap itself.
    let top = grid.radius(grid.n_r - 1);
    let budget = sigma.measure + dr;
    let mut radii: Vec<f64> = Vec::new();
    let mut mus = Vec::new();
    let mut raw_thetas = Vec::new();
    for j in 1u32.. {
        let target = f64::from(j + c1) * f64::from(j + c1);
        if target > top {
            break;
        }
        let mut k = ((target / dr) - 0.5).floor() as i64;
        k = k.min(grid.n_r as i64 - 1);
        let staged = loop {
            if k < 0 {
                return Err(NjError::Construction(format!(
                    "interface stage {j} walked below the resolved rings while dodging the flagged set"
                )));
            }
            let r = grid.radius(k as usize);
            if target - r > budget {
                return Err(NjError::Construction(format!(
                    "interface stage {j} (target {target:.2}) cannot leave the flagged set within the shift budget {budget:.2}"
                )));
            }
            if r >= params.r_delta && !sigma.contains(r) {
                break r;
            }
            k -= 1;
        };
        if let Some(&prev) = radii.last() {
            if staged <= prev + 0.5 * dr {
                return Err(NjError::Construction(format!(
                    "interface stage {j} collides with the previous one at radius {staged:.2}"
                )));
            }
        }
        let entry = tm.lookup(staged, 0.5 * dr).ok_or_else(|| {
            NjError::Construction(format!(
                "no layer angle recorded at staged radius {staged:.3} (stage {j})"
            ))
        })?;
        radii.push(staged);
        mus.push(target - staged);
        raw_thetas.push(entry.theta);
    }
    let stages = radii.len();
    if stages < 4 {
        return Err(NjError::Construction(format!(
            "only {} interface cells fit below radius {top:.1}; at least 3 are required",
            stages.saturating_sub(1)
        )));
    }

    let mut thetas = Vec::with_capacity(stages);
    thetas.push(raw_thetas[0]);
    for s in 1..stages {
        let prev = thetas[s - 1];
        thetas.push(prev + wrapped_diff(raw_thetas[s], raw_thetas[s - 1], sector));
    }
    let lambdas: Vec<f64> = radii.iter().map(|r| (c_tilde * r.ln()).max(0.0)).collect();

    let nu = params.nu;
    let c_hat = lipschitz_constant(p, field, params);
    let cap_p = P_CAP * sector;
    let cap_q = Q_CAP * sector;
    let mut clamped = 0;
    let mut clip = |raw: f64, cap: f64| {
        if raw > cap {
            clamped += 1;
            cap
        } else {
            raw
        }
    };
    let half_phats: Vec<f64> = radii.iter().map(|r| clip(1.5 * nu / r, cap_p)).collect();
    let half_ps: Vec<f64> = (0..stages)
        .map(|s| clip(1.5 * nu / radii[s] + lambdas[s] / radii[s], cap_p))
        .collect();
    // Outer arcs live at each stage radius but are centered on the angle
    // of the stage below, so their width carries the whole travel budget.
    let half_qs: Vec<f64> = (1..stages)
        .map(|s| {
            let (r_in, r_out) = (radii[s - 1], radii[s]);
            clip(
                1.5 * nu / r_in + nu / r_out + c_hat * (r_out / r_in).ln() + lambdas[s] / r_out,
                cap_q,
            )
        })
        .collect();
    let cells: Vec<InterfaceCell> = (0..stages - 1)
        .map(|s| InterfaceCell {
            r_lo: radii[s],
            r_hi: radii[s + 1],
            theta_lo: thetas[s],
            theta_hi: thetas[s + 1],
            half_p: half_ps[s],
            half_phat: half_phats[s],
            half_q: half_qs[s],
        })
        .collect();

    let mut ratio_lo = f64::INFINITY;
    let mut ratio_hi: f64 = 0.0;
    let mut beta_max: f64 = 0.0;
    for s in 0..stages - 1 {
        let gap = radii[s + 1] - radii[s];
        ratio_lo = ratio_lo.min(gap / radii[s].sqrt());
        ratio_hi = ratio_hi.max(gap / radii[s].sqrt());
        beta_max = beta_max.max(gap / radii[s]);
    }
    // Same-radius ordering: each outer arc must reach past the vertex arc
    // sitting at its radius on both sides, layer drift included.
    let mut pq_margin = f64::INFINITY;
    for s in 1..stages {
        let drift = (thetas[s] - thetas[s - 1]).abs();
        pq_margin = pq_margin.min(half_qs[s - 1] - drift - half_ps[s]);
    }

    Ok(InterfaceGraph {
        c1,
        c_tilde,
        c_hat,
        nu,
        sector,
        segments: grid.segments,
        dtheta: grid.dtheta(),
        radii,
        thetas,
        mus,
        lambdas,
        cells,
        ratio_lo,
        ratio_hi,
        beta_max,
        beta_budget: 0.5 * beta_window(c_hat, grid.segments),
        pq_margin,
        clamped,
    })
}

/// Shortest curve threading the staged cells: a polygonal chain pinned to
/// the layer points at both ends with one free vertex per interior arc.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MinimalCurve {
    /// Staged radii carrying a vertex, from the second stage outward.
    pub radii: Vec<f64>,
    pub vertices: Vec<Vec2>,
    pub length: f64,
}

impl MinimalCurve {
    pub fn tangents(&self) -> Vec<Vec2> {
        self.vertices
            .windows(2)
            .map(|w| (w[1] - w[0]).unit(1e-30).unwrap_or(Vec2::new(1.0, 0.0)))
            .collect()
    }

    /// Point of the chain at the given radius, with its segment index.
    /// Radius grows monotonically along every segment, so the point is
    /// unique.
    pub fn at_radius(&self, r: f64) -> Option<(Vec2, usize)> {
        let k = self
            .radii
            .windows(2)
            .position(|w| r >= w[0] - 1e-9 && r <= w[1] + 1e-9)?;
        let a = self.vertices[k];
        let d = self.vertices[k + 1] - a;
        let aa = d.norm_sq();
        let bb = 2.0 * a.dot(d);
        let cc = a.norm_sq() - r * r;
        let disc = bb * bb - 4.0 * aa * cc;
        if disc < 0.0 || aa == 0.0 {
            return None;
        }
        let t = (-bb + disc.sqrt()) / (2.0 * aa);
        Some((a + d.scale(t.clamp(0.0, 1.0)), k))
    }

    /// Largest angular drift from the outer endpoint ray, scaled by the
    /// square root of the radius.
    pub fn angular_confinement(&self) -> f64 {
        let end = self.vertices[self.vertices.len() - 1].angle();
        self.vertices
            .iter()
            .zip(&self.radii)
            .map(|(v, &r)| wrapped_diff(v.angle(), end, 2.0 * PI).abs() * r.sqrt())
            .fold(0.0, f64::max)
    }
}

fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let mut x1 = hi - INVPHI * (hi - lo);
    let mut x2 = lo + INVPHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    while hi - lo > VERTEX_TOL {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INVPHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INVPHI * (hi - lo);
            f2 = f(x2);
        }
    }
    0.5 * (lo + hi)
}

fn chain_length(verts: &[Vec2]) -> f64 {
    verts.windows(2).map(|w| w[0].dist(w[1])).sum()
}

/// Shortest-path solve at the default arc resolution.
pub fn minimal_curve(ig: &InterfaceGraph) -> Result<MinimalCurve> {
    minimal_curve_with(ig, ARC_POINTS)
}

/// Layered shortest path over discretized vertex arcs followed by cyclic
/// per-vertex refinement; the result satisfies the corner conditions: a
/// free vertex is either straight or pinned at the arc end it turns
/// around.
pub fn minimal_curve_with(ig: &InterfaceGraph, arc_points: usize) -> Result<MinimalCurve> {
    let n = ig.cells.len();
    if n < 3 {
        return Err(NjError::Parameter(
            "the shortest-curve stage needs at least 3 cells".into(),
        ));
    }
    let k = arc_points.max(ARC_POINTS);
    // Stages 1..=n of the graph carry vertices; the two end vertices are
    // pinned to the layer points, the interior ones roam their arcs.
    let free: Vec<usize> = (2..n).collect();
    let arc = |s: usize| (ig.radii[s], ig.thetas[s], ig.cells[s].half_p);

    let mut layers: Vec<Vec<Vec2>> = Vec::with_capacity(n);
    layers.push(vec![Vec2::from_polar(ig.radii[1], ig.thetas[1])]);
    for &s in &free {
        let (r, c, h) = arc(s);
        layers.push(
            (0..k)
                .map(|m| Vec2::from_polar(r, c - h + 2.0 * h * m as f64 / (k - 1) as f64))
                .collect(),
        );
    }
    layers.push(vec![Vec2::from_polar(ig.radii[n], ig.thetas[n])]);

    let mut cost = vec![0.0f64];
    let mut parents: Vec<Vec<usize>> = Vec::new();
    for li in 1..layers.len() {
        let mut next = vec![f64::INFINITY; layers[li].len()];
        let mut par = vec![0usize; layers[li].len()];
        for (qi, q) in layers[li].iter().enumerate() {
            for (pi, &pc) in cost.iter().enumerate() {
                let c = pc + layers[li - 1][pi].dist(*q);
                if c < next[qi] {
                    next[qi] = c;
                    par[qi] = pi;
                }
            }
        }
        parents.push(par);
        cost = next;
    }
    let mut picks = vec![0usize; layers.len()];
    for li in (1..layers.len()).rev() {
        picks[li - 1] = parents[li - 1][picks[li]];
    }
    let mut verts: Vec<Vec2> = picks
        .iter()
        .enumerate()
        .map(|(li, &pi)| layers[li][pi])
        .collect();

    // Cyclic refinement: each free vertex slides on its arc to shorten the
    // two segments it joins.
    loop {
        let before = chain_length(&verts);
        for (fi, &s) in free.iter().enumerate() {
            let (r, c, h) = arc(s);
            let prev = verts[fi];
            let next = verts[fi + 2];
            let best = golden_min(c - h, c + h, |t| {
                let v = Vec2::from_polar(r, t);
                prev.dist(v) + v.dist(next)
            });
            verts[fi + 1] = Vec2::from_polar(r, best);
        }
        let after = chain_length(&verts);
        if before - after < SWEEP_TOL {
            break;
        }
    }

    // Corner conditions.
    for (fi, &s) in free.iter().enumerate() {
        let (r, c, h) = arc(s);
        let t_in = (verts[fi + 1] - verts[fi]).unit(1e-30).unwrap();
        let t_out = (verts[fi + 2] - verts[fi + 1]).unit(1e-30).unwrap();
        let turn = t_in.cross(t_out);
        let angle = c + wrapped_diff(verts[fi + 1].angle(), c, 2.0 * PI);
        let at_minus = angle - (c - h) <= EDGE_TOL * (1.0 + h / r);
        let at_plus = (c + h) - angle <= EDGE_TOL * (1.0 + h / r);
        let ok = if at_minus {
            turn <= KKT_TOL
        } else if at_plus {
            turn >= -KKT_TOL
        } else {
            turn.abs() <= KKT_TOL && t_in.dot(t_out) > 0.0
        };
        if !ok {
            return Err(NjError::Construction(format!(
                "vertex at radius {r:.2} violates the corner condition: turn {turn:.2e}"
            )));
        }
    }

    let length = chain_length(&verts);
    debug_assert!(length >= ig.radii[n] - ig.radii[1] - 1e-9);
    // When the staging orders correctly the chain cannot leave its cell's
    // angular hull; a graph with a negative margin promises nothing.
    #[cfg(debug_assertions)]
    if ig.pq_margin >= 0.0 {
        for (k, w) in verts.windows(2).enumerate() {
            let cell = &ig.cells[k + 1];
            let hull = cell.half_p.max(cell.half_q) + ig.dtheta;
            for t in [0.25, 0.5, 0.75] {
                let pt = w[0].lerp(w[1], t);
                let drift = wrapped_diff(pt.angle(), cell.theta_lo, 2.0 * PI).abs();
                debug_assert!(
                    drift <= hull + 1e-9,
                    "chain leaves cell {k}: drift {drift:.3} over hull {hull:.3}"
                );
            }
        }
    }

    Ok(MinimalCurve {
        radii: ig.radii[1..].to_vec(),
        vertices: verts,
        length,
    })
}

/// Length of the threaded curve against the disk radius.
pub fn length_excess(mc: &MinimalCurve, outer_radius: f64) -> f64 {
    mc.length - outer_radius
}

/// One transverse section: the chord through the curve at radius `r`,
/// normal to the local segment, with its 1D energy.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct TransverseRow {
    pub r: f64,
    pub j_star: f64,
    /// Chord length actually integrated.
    pub width: f64,
    /// Arc-length weight along the curve.
    pub ds: f64,
}

/// The transverse energy account over the whole curve.
#[derive(Debug, Clone, Serialize)]
pub struct TransverseTable {
    pub rows: Vec<TransverseRow>,
    /// Curve integral of the section energies, one sector copy.
    pub integral: f64,
    /// Sections dropped as degenerate.
    pub skipped: usize,
    /// Sections whose chord ends parked in distinct wells, where the
    /// crossing bound applied.
    pub bounded_rows: usize,
}

fn ray_segment(origin: Vec2, dir: Vec2, a: Vec2, b: Vec2) -> Option<f64> {
    let e = b - a;
    let den = dir.cross(e);
    if den.abs() < 1e-14 {
        return None;
    }
    let w = a - origin;
    let s = w.cross(e) / den;
    let t = w.cross(dir) / den;
    (s > 0.0 && (-1e-12..=1.0 + 1e-12).contains(&t)).then_some(s)
}

/// Smallest positive ray parameter reaching the circle of the given
/// radius; `dir` must be unit.
fn ray_circle(origin: Vec2, dir: Vec2, radius: f64) -> Option<f64> {
    let b = 2.0 * origin.dot(dir);
    let c = origin.norm_sq() - radius * radius;
    let disc = b * b - 4.0 * c;
    if disc < 0.0 {
        return None;
    }
    let sq = disc.sqrt();
    let lo = 0.5 * (-b - sq);
    let hi = 0.5 * (-b + sq);
    if lo > 1e-12 {
        Some(lo)
    } else if hi > 1e-12 {
        Some(hi)
    } else {
        None
    }
}

/// Integrate the field's 1D energy along chords normal to the curve, one
/// per sampled radius, clipped to the owning cell and the disk.  Checks
/// both energy comparisons: the sector total must cover the curve
/// integral, and every well-to-well chord must clear the crossing bound.
pub fn transverse_profile(
    p: &Potential,
    field: &EquivariantField,
    mc: &MinimalCurve,
    ig: &InterfaceGraph,
    params: &AnalysisParams,
    sigma: f64,
    c_hi: f64,
) -> Result<TransverseTable> {
    let grid = field.grid;
    let om = p.omega();
    let wells = p.wells();
    let total = total_energy(p, field)?;
    let top = grid.radius(grid.n_r - 1);
    let dr = grid.dr();
    let step = (CHORD_STEP / c_hi).min(0.5 * dr);

    let mut rows = Vec::new();
    let mut integral = 0.0;
    let mut skipped = 0;
    let mut bounded_rows = 0;
    for seg in 0..mc.vertices.len() - 1 {
        let cell = &ig.cells[seg + 1];
        let a = mc.vertices[seg];
        let b = mc.vertices[seg + 1];
        let seg_len = a.dist(b);
        let Some(tau) = (b - a).unit(1e-12) else {
            skipped += 1;
            continue;
        };
        let upsilon = tau.perp();
        let span = cell.r_hi - cell.r_lo;
        let samples = ((span / dr).round() as usize).max(8);
        let ds = seg_len / samples as f64;
        for m in 0..samples {
            let r = cell.r_lo + (m as f64 + 0.5) * span / samples as f64;
            let Some((center, _)) = mc.at_radius(r) else {
                skipped += 1;
                continue;
            };
            let cap_ang = r * Q_CAP * ig.sector;
            let cap_disk = if top > r {
                (top * top - r * r).sqrt()
            } else {
                0.0
            };
            let side = |dir: Vec2, sa: Vec2, sb: Vec2| {
                let mut reach = cap_ang.min(cap_disk);
                if let Some(s) = ray_segment(center, dir, sa, sb) {
                    reach = reach.min(s);
                }
                // Chords exiting through a cell arc rather than a side are
                // truncated there.
                if let Some(s) = ray_circle(center, dir, cell.r_hi) {
                    reach = reach.min(s);
                }
                if let Some(s) = ray_circle(center, dir, cell.r_lo) {
                    reach = reach.min(s);
                }
                reach
            };
            let reach_p = side(upsilon, cell.p_plus(), cell.q_plus());
            let reach_m = side(upsilon.scale(-1.0), cell.p_minus(), cell.q_minus());
            let width = reach_p + reach_m;
            if width < 0.25 * dr {
                skipped += 1;
                continue;
            }
            let count = ((width / step).ceil() as usize).clamp(64, 8192) + 1;
            let h = width / (count - 1) as f64;
            let x0 = center - upsilon.scale(reach_m);
            let at = |x: Vec2| field.sample(om, x.norm(), x.y.atan2(x.x));
            let first = at(x0);
            let mut prev = first;
            let mut j_star = 0.0;
            for kk in 1..count {
                let u = at(x0 + upsilon.scale(h * kk as f64));
                j_star += (u - prev).norm_sq() / (2.0 * h) + 0.5 * h * (p.eval(u) + p.eval(prev));
                prev = u;
            }
            let (w_lo, d_lo) = wells.nearest(first);
            let (w_hi, d_hi) = wells.nearest(prev);
            if w_lo != w_hi && d_lo <= params.delta_prime && d_hi <= params.delta_prime {
                bounded_rows += 1;
                let bound = segment_lower_bound(sigma, c_hi, d_lo, d_hi);
                if j_star < bound * (1.0 - SECTION_SLACK) - 1e-9 {
                    return Err(NjError::Construction(format!(
                        "section at radius {r:.2} undercuts the crossing bound: {j_star:.6} < {bound:.6}"
                    )));
                }
            }
            integral += j_star * ds;
            rows.push(TransverseRow {
                r,
                j_star,
                width,
                ds,
            });
        }
    }
    let budget = total * (1.0 + SECTION_SLACK) / ig.segments as f64;
    if integral > budget {
        return Err(NjError::Construction(format!(
            "sector section integral {integral:.4} exceeds the energy budget {budget:.4}"
        )));
    }
    Ok(TransverseTable {
        rows,
        integral,
        skipped,
        bounded_rows,
    })
}

/// Exponential fit of the approach to the preferred well over the sector
/// interior.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct DecayFit {
    pub r_ring: f64,
    pub c_ring: f64,
    /// Fitted prefactor.
    pub amplitude: f64,
    /// Fitted rate; positive means decay away from the region boundary.
    pub rate: f64,
    pub rms: f64,
    pub nodes_used: usize,
}

/// Fit `ln |u - a|` against the distance to the boundary of the region
/// `{r > r_ring, c_ring/sqrt(r) < theta < sector - c_ring/sqrt(r)}`.  The
/// well is read off the region's center node; the outermost two rings are
/// excluded as boundary-dominated.  Rows below the solver's far-field
/// noise plateau are dropped and the fit runs on the per-distance envelope
/// of what remains, since the decay law bounds the deviation from above.
pub fn decay_fit(
    p: &Potential,
    field: &EquivariantField,
    r_ring: f64,
    c_ring: f64,
) -> Result<DecayFit> {
    let grid = field.grid;
    let sector = grid.sector_angle();
    let floor_ring = (c_ring * grid.segments as f64 / PI).powi(2);
    if !(c_ring >= 0.0) || r_ring < floor_ring {
        return Err(NjError::Parameter(format!(
            "inner fit radius {r_ring:.2} is below the admissible floor {floor_ring:.2}"
        )));
    }
    let top = grid.radius(grid.n_r - 1);
    let rim = top - 2.0 * grid.dr();
    if r_ring >= rim {
        return Err(NjError::Parameter(format!(
            "inner fit radius {r_ring:.2} leaves no rings below the rim {rim:.2}"
        )));
    }
    let i_mid = (((0.5 * (r_ring + top)) / grid.dr() - 0.5).round() as usize).min(grid.n_r - 1);
    let probe = field.value(i_mid, grid.n_theta / 2);
    let wells = p.wells();
    let (wi, _) = wells.nearest(probe);
    let a_q = wells.wells[wi];

    let mut pts: Vec<(f64, f64)> = Vec::new();
    for i in 0..grid.n_r {
        let r = grid.radius(i);
        if r <= r_ring || r > rim {
            continue;
        }
        let margin = c_ring / r.sqrt();
        for j in 0..grid.n_theta {
            let th = grid.theta(j);
            let d = (r * (th - margin))
                .min(r * (sector - margin - th))
                .min(r - r_ring);
            if d <= 0.0 {
                continue;
            }
            let v = field.value(i, j).dist(a_q);
            if v <= DECAY_FLOOR {
                continue;
            }
            pts.push((d, v));
        }
    }
    if pts.len() < DECAY_MIN_NODES {
        return Err(NjError::InsufficientData(format!(
            "decay fit needs at least {DECAY_MIN_NODES} usable nodes, found {}",
            pts.len()
        )));
    }
    // Deep in the region the deviation bottoms out at the solver's noise
    // floor instead of decaying further; those rows would drag the slope
    // toward zero and swamp the residual.  Read the floor off the deepest
    // quarter of the region and keep only rows a full decade above it.
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let mut deep: Vec<f64> = pts[3 * pts.len() / 4..].iter().map(|q| q.1).collect();
    deep.sort_by(f64::total_cmp);
    let cut = (PLATEAU_HEADROOM * deep[deep.len() / 2]).max(DECAY_FLOOR);
    // The law being measured is an upper envelope: a row saturates it only
    // when the nearest piece of the region boundary dominates, and interior
    // rows fall arbitrarily far below.  Bin by distance and fit the largest
    // deviation per bin.
    let mut d_lo = f64::INFINITY;
    let mut d_hi = f64::NEG_INFINITY;
    for &(d, v) in &pts {
        if v >= cut {
            d_lo = d_lo.min(d);
            d_hi = d_hi.max(d);
        }
    }
    if !d_lo.is_finite() || d_hi <= d_lo {
        return Err(NjError::InsufficientData(format!(
            "no distance spread above the noise floor {cut:.2e}"
        )));
    }
    let width = (d_hi - d_lo) / ENVELOPE_BINS as f64;
    let mut best: Vec<Option<(f64, f64)>> = vec![None; ENVELOPE_BINS + 1];
    for &(d, v) in &pts {
        if v < cut {
            continue;
        }
        let b = (((d - d_lo) / width) as usize).min(ENVELOPE_BINS);
        if best[b].is_none_or(|(_, bv)| v > bv) {
            best[b] = Some((d, v));
        }
    }
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    for (d, v) in best.into_iter().flatten() {
        xs.push(d);
        ys.push(v.ln());
    }
    if xs.len() < ENVELOPE_MIN_BINS {
        return Err(NjError::InsufficientData(format!(
            "decay envelope has {} occupied bins above the floor {cut:.2e}, needs {ENVELOPE_MIN_BINS}",
            xs.len()
        )));
    }
    let (intercept, slope) = line_fit(&xs, &ys).ok_or_else(|| {
        NjError::InsufficientData("decay fit nodes are colinear in distance".into())
    })?;
    let rms = (xs
        .iter()
        .zip(&ys)
        .map(|(&x, &y)| {
            let e = y - (intercept + slope * x);
            e * e
        })
        .sum::<f64>()
        / xs.len() as f64)
        .sqrt();
    Ok(DecayFit {
        r_ring,
        c_ring,
        amplitude: intercept.exp(),
        rate: -slope,
        rms,
        nodes_used: xs.len(),
    })
}

/// What a single pointwise probe concluded.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ProbeOutcome {
    /// No well plateau covered every unflagged ring node in the ball.
    HypothesisFailed,
    /// The hypothesis held and the center obeyed the well bound.
    Confirmed { distance: f64 },
    /// The hypothesis held but the center escaped the bound.
    Violated { distance: f64 },
}

/// Test the pointwise well bound at one center: if every unflagged ring
/// node within distance `l` sits in one common well plateau, the value at
/// the center itself must lie within twice the ball radius of that well.
pub fn pointwise_probe(
    p: &Potential,
    field: &EquivariantField,
    sigma: &SigmaSet,
    params: &AnalysisParams,
    l: f64,
    r0: f64,
    theta0: f64,
) -> ProbeOutcome {
    let grid = field.grid;
    let om = p.omega();
    let wells = p.wells();
    let mut candidates = vec![true; wells.wells.len()];
    let mut any_node = false;
    for i in 0..grid.n_r {
        let r = grid.radius(i);
        if (r - r0).abs() > l {
            continue;
        }
        if sigma.contains(r) {
            continue;
        }
        let cos_half = ((r * r + r0 * r0 - l * l) / (2.0 * r * r0)).clamp(-1.0, 1.0);
        let half = cos_half.acos();
        let j_lo = ((theta0 - half) / grid.dtheta()).ceil() as i64;
        let j_hi = ((theta0 + half) / grid.dtheta()).floor() as i64;
        for j in j_lo..=j_hi {
            any_node = true;
            let u = field.fetch(i, j, om);
            for (wi, w) in wells.wells.iter().enumerate() {
                if candidates[wi] && u.dist(*w) > params.delta_prime {
                    candidates[wi] = false;
                }
            }
        }
    }
    let live: Vec<usize> = (0..candidates.len()).filter(|&w| candidates[w]).collect();
    if !any_node || live.is_empty() {
        return ProbeOutcome::HypothesisFailed;
    }
    let u0 = field.sample(om, r0, theta0);
    let distance = live
        .iter()
        .map(|&w| u0.dist(wells.wells[w]))
        .fold(f64::INFINITY, f64::min);
    if distance <= 2.0 * params.delta {
        ProbeOutcome::Confirmed { distance }
    } else {
        ProbeOutcome::Violated { distance }
    }
}

/// Aggregate of sampled pointwise probes.
#[derive(Debug, Clone, Serialize)]
pub struct PointwiseReport {
    pub tested: usize,
    pub hypothesis_held: usize,
    /// Violating centers as `(r, theta, distance)`.
    pub violations: Vec<(f64, f64, f64)>,
}

/// Sample probe centers uniformly over the band where the ball fits
/// between the structure threshold and the rim, and run the well-bound
/// probe at each.
pub fn pointwise_check(
    p: &Potential,
    field: &EquivariantField,
    sigma: &SigmaSet,
    params: &AnalysisParams,
    l: f64,
    sample_count: usize,
) -> Result<PointwiseReport> {
    let grid = field.grid;
    if l < 4.0 * grid.dr() {
        return Err(NjError::Parameter(format!(
            "probe ball radius {l:.3} is below four grid cells"
        )));
    }
    let lo = params.r_delta + l;
    let hi = grid.radius(grid.n_r - 1) - l;
    if lo >= hi {
        return Err(NjError::Parameter(format!(
            "probe band [{lo:.2}, {hi:.2}] is empty; shrink the ball"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(PROBE_SEED);
    let mut hypothesis_held = 0;
    let mut violations = Vec::new();
    for _ in 0..sample_count {
        let r0 = rng.gen_range(lo..hi);
        let theta0 = rng.gen_range(0.0..grid.sector_angle());
        match pointwise_probe(p, field, sigma, params, l, r0, theta0) {
            ProbeOutcome::HypothesisFailed => {}
            ProbeOutcome::Confirmed { .. } => hypothesis_held += 1,
            ProbeOutcome::Violated { distance } => {
                hypothesis_held += 1;
                violations.push((r0, theta0, distance));
            }
        }
    }
    Ok(PointwiseReport {
        tested: sample_count,
        hypothesis_held,
        violations,
    })
}
