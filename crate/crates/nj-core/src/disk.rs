//! Equivariant maps on disks, discretized on one polar fundamental sector.
//!
//! The full disk is `segments` rotated copies of the sector; values across
//! the angular seam pick up one factor of the target rotation, and the
//! center is pinned to the origin (the only point the symmetry fixes).
//! The solver minimizes the quadrature of the polar Dirichlet energy plus
//! the potential, differentiating the quadrature itself so the discrete
//! gradient is exact.

use std::f64::consts::PI;
use std::time::Instant;

use rayon::prelude::*;

use crate::descent::{minimize, DescentParams, EnergyFunctional};
use crate::error::{NjError, Result};
use crate::fiber::{classify_fiber, AnalysisParams, FiberProfile, RingEnergy};
use crate::geometry::{Mat2, Vec2};
use crate::heteroclinic::HeteroclinicProfile;
use crate::potential::Potential;

/// Uniform polar grid on the fundamental sector `[0, 2*pi/segments)`.
/// Radial nodes sit at cell midpoints `(i + 1/2) * dr`, so the metric
/// factor never vanishes and the midpoint rule integrates `r` exactly.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PolarGrid {
    pub outer_radius: f64,
    /// Radial cells (and radial nodes).
    pub n_r: usize,
    /// Angular cells over the sector; node `j` sits at `j * dtheta`.
    pub n_theta: usize,
    /// Sectors per turn: symmetry order times the domain fold.
    pub segments: usize,
}

impl PolarGrid {
    pub fn new(outer_radius: f64, n_r: usize, n_theta: usize, segments: usize) -> Result<PolarGrid> {
        if !(outer_radius.is_finite() && outer_radius > 0.0) {
            return Err(NjError::Parameter(format!(
                "disk radius must be positive, got {outer_radius}"
            )));
        }
        if n_r == 0 || n_theta == 0 {
            return Err(NjError::Parameter("grid needs at least one cell each way".into()));
        }
        if segments < 2 {
            return Err(NjError::Parameter(
                "a full turn needs at least two sectors".into(),
            ));
        }
        Ok(PolarGrid {
            outer_radius,
            n_r,
            n_theta,
            segments,
        })
    }

    pub fn dr(&self) -> f64 {
        self.outer_radius / self.n_r as f64
    }

    pub fn dtheta(&self) -> f64 {
        self.sector_angle() / self.n_theta as f64
    }

    pub fn sector_angle(&self) -> f64 {
        2.0 * PI / self.segments as f64
    }

    /// Innermost radial node.
    pub fn r_min(&self) -> f64 {
        0.5 * self.dr()
    }

    pub fn radius(&self, i: usize) -> f64 {
        (i as f64 + 0.5) * self.dr()
    }

    pub fn theta(&self, j: usize) -> f64 {
        j as f64 * self.dtheta()
    }

    pub fn node_count(&self) -> usize {
        self.n_r * self.n_theta
    }
}

/// Sector samples of an equivariant field, radius-major.  The center value
/// is not stored: equivariance forces it to the origin, and the energy
/// carries that pin through the innermost radial links.
#[derive(Debug, Clone)]
pub struct EquivariantField {
    pub grid: PolarGrid,
    pub values: Vec<Vec2>,
}

impl EquivariantField {
    pub fn zero(grid: PolarGrid) -> EquivariantField {
        EquivariantField {
            grid,
            values: vec![Vec2::new(0.0, 0.0); grid.node_count()],
        }
    }

    /// The fixed point of the target action.
    pub fn center_value(&self) -> Vec2 {
        Vec2::new(0.0, 0.0)
    }

    pub fn value(&self, i: usize, j: usize) -> Vec2 {
        self.values[i * self.grid.n_theta + j]
    }

    pub fn set(&mut self, i: usize, j: usize, v: Vec2) {
        self.values[i * self.grid.n_theta + j] = v;
    }

    /// Full-circle reconstruction at radial row `i` and any angular slot.
    pub fn fetch(&self, i: usize, j: i64, om: Mat2) -> Vec2 {
        let nt = self.grid.n_theta as i64;
        let wraps = j.div_euclid(nt);
        let jj = j.rem_euclid(nt) as usize;
        om.pow(wraps).apply(self.value(i, jj))
    }

    /// Bilinear reconstruction at an arbitrary point of the full disk.
    /// Below the innermost row the value shrinks linearly into the center
    /// pin; beyond the outermost row it is held constant.
    pub fn sample(&self, om: Mat2, r: f64, theta: f64) -> Vec2 {
        let y = theta / self.grid.dtheta();
        let j0 = y.floor();
        let fy = y - j0;
        let j0 = j0 as i64;
        let ring = |i: usize| {
            self.fetch(i, j0, om)
                .lerp(self.fetch(i, j0 + 1, om), fy)
        };
        let t = (r - self.grid.r_min()) / self.grid.dr();
        if t <= 0.0 {
            return ring(0).scale((r / self.grid.r_min()).clamp(0.0, 1.0));
        }
        let i0 = (t.floor() as usize).min(self.grid.n_r - 1);
        let i1 = (i0 + 1).min(self.grid.n_r - 1);
        ring(i0).lerp(ring(i1), (t - i0 as f64).min(1.0))
    }
}

fn flatten(values: &[Vec2]) -> Vec<f64> {
    let mut x = Vec::with_capacity(2 * values.len());
    for u in values {
        x.push(u.x);
        x.push(u.y);
    }
    x
}

fn unflatten(x: &[f64]) -> Vec<Vec2> {
    x.chunks_exact(2).map(|c| Vec2::new(c[0], c[1])).collect()
}

/// Discrete sector energy: radial differences on cell faces, angular
/// differences with the `1/r^2` metric and the twisted seam, midpoint
/// quadrature for the potential, and the center pin folded into the
/// innermost links.
pub struct DiskProblem<'a> {
    p: &'a Potential,
    grid: PolarGrid,
    om: Mat2,
    masses: Vec<f64>,
}

impl<'a> DiskProblem<'a> {
    pub fn new(p: &'a Potential, grid: PolarGrid) -> Result<Self> {
        p.validate()?;
        if grid.segments % p.n_sym != 0 {
            return Err(NjError::Parameter(format!(
                "sector count {} is not a multiple of the symmetry order {}",
                grid.segments, p.n_sym
            )));
        }
        let dr = grid.dr();
        let dth = grid.dtheta();
        let mut masses = Vec::with_capacity(2 * grid.node_count());
        for i in 0..grid.n_r {
            let w = grid.radius(i) * dr * dth;
            for _ in 0..grid.n_theta {
                masses.push(w);
                masses.push(w);
            }
        }
        Ok(DiskProblem {
            p,
            grid,
            om: p.omega(),
            masses,
        })
    }

    fn node(x: &[f64], k: usize) -> Vec2 {
        Vec2::new(x[2 * k], x[2 * k + 1])
    }

    fn row_energy(&self, x: &[f64], i: usize) -> f64 {
        let nt = self.grid.n_theta;
        let dr = self.grid.dr();
        let dth = self.grid.dtheta();
        let r_i = self.grid.radius(i);
        let c_theta = dr / (2.0 * r_i * dth);
        let w_pot = r_i * dr * dth;
        // radial face above this row, weighted by the face radius
        let c_up = (i + 1) as f64 * dth / 2.0;
        let mut e = 0.0;
        for j in 0..nt {
            let cur = Self::node(x, i * nt + j);
            let right = if j + 1 < nt {
                Self::node(x, i * nt + j + 1)
            } else {
                self.om.apply(Self::node(x, i * nt))
            };
            e += c_theta * (right - cur).norm_sq();
            e += w_pot * self.p.eval(cur);
            if i + 1 < self.grid.n_r {
                let above = Self::node(x, (i + 1) * nt + j);
                e += c_up * (above - cur).norm_sq();
            }
            if i == 0 {
                e += dth / 4.0 * cur.norm_sq();
            }
        }
        e
    }
}

impl EnergyFunctional for DiskProblem<'_> {
    fn energy(&self, x: &[f64]) -> f64 {
        // banded sums reduced in row order keep the result independent of
        // the thread count
        let rows: Vec<f64> = (0..self.grid.n_r)
            .into_par_iter()
            .map(|i| self.row_energy(x, i))
            .collect();
        rows.iter().sum()
    }

    fn gradient(&self, x: &[f64], g: &mut [f64]) {
        let nt = self.grid.n_theta;
        let nr = self.grid.n_r;
        let dr = self.grid.dr();
        let dth = self.grid.dtheta();
        g.par_chunks_mut(2 * nt).enumerate().for_each(|(i, row)| {
            let r_i = self.grid.radius(i);
            let c_theta = dr / (2.0 * r_i * dth);
            let w_pot = r_i * dr * dth;
            for j in 0..nt {
                let cur = Self::node(x, i * nt + j);
                let left = if j > 0 {
                    Self::node(x, i * nt + j - 1)
                } else {
                    self.om.transpose().apply(Self::node(x, i * nt + nt - 1))
                };
                let right = if j + 1 < nt {
                    Self::node(x, i * nt + j + 1)
                } else {
                    self.om.apply(Self::node(x, i * nt))
                };
                let mut grad = self.p.grad(cur).scale(w_pot);
                grad = grad + (cur.scale(2.0) - left - right).scale(2.0 * c_theta);
                if i > 0 {
                    let below = Self::node(x, (i - 1) * nt + j);
                    grad = grad + (cur - below).scale(i as f64 * dth);
                } else {
                    grad = grad + cur.scale(dth / 2.0);
                }
                if i + 1 < nr {
                    let above = Self::node(x, (i + 1) * nt + j);
                    grad = grad + (cur - above).scale((i + 1) as f64 * dth);
                }
                row[2 * j] = grad.x;
                row[2 * j + 1] = grad.y;
            }
        });
    }

    fn masses(&self) -> &[f64] {
        &self.masses
    }
}

/// Full-disk energy: `segments` times the sector quadrature.
pub fn total_energy(p: &Potential, field: &EquivariantField) -> Result<f64> {
    let problem = DiskProblem::new(p, field.grid)?;
    Ok(field.grid.segments as f64 * problem.energy(&flatten(&field.values)))
}

/// Full-disk integral of `|du/dr|^2 r` over the interior radial faces.
/// The innermost center links are excluded, so fields with no radial
/// variation report exactly zero.
pub fn radial_kinetic(field: &EquivariantField) -> f64 {
    let grid = field.grid;
    let dth = grid.dtheta();
    let mut total = 0.0;
    for i in 0..grid.n_r.saturating_sub(1) {
        let c = (i + 1) as f64 * dth;
        for j in 0..grid.n_theta {
            total += c * (field.value(i + 1, j) - field.value(i, j)).norm_sq();
        }
    }
    grid.segments as f64 * total
}

/// Outcome of one descent run.
#[derive(Debug, Clone, Copy)]
pub struct SolveReport {
    /// Full-disk energy at the final iterate.
    pub energy: f64,
    /// Mass-weighted residual of the discrete Euler-Lagrange system.
    pub residual: f64,
    pub iterations: usize,
    pub wall_seconds: f64,
    /// Energy sequence never increased.
    pub monotone: bool,
}

/// Descend the sector energy from `init`.  Stops at residual `tol`, accepts
/// a stall within ten times that, and reports anything worse as a
/// convergence failure.
pub fn minimize_disk(
    p: &Potential,
    grid: PolarGrid,
    init: &EquivariantField,
    tol: f64,
    max_iter: usize,
) -> Result<(EquivariantField, SolveReport)> {
    if init.grid != grid {
        return Err(NjError::Parameter(
            "initial field lives on a different grid".into(),
        ));
    }
    let problem = DiskProblem::new(p, grid)?;
    let mut x = flatten(&init.values);
    let mut params = DescentParams::new(tol, max_iter);
    let h_min = grid.dr().min(grid.r_min() * grid.dtheta());
    params.init_step = 0.25 * h_min * h_min;
    let start = Instant::now();
    let trace = minimize(&problem, &mut x, &params)?;
    let report = SolveReport {
        energy: grid.segments as f64 * trace.energy,
        residual: trace.residual,
        iterations: trace.iterations,
        wall_seconds: start.elapsed().as_secs_f64(),
        monotone: trace.monotone,
    };
    Ok((
        EquivariantField {
            grid,
            values: unflatten(&x),
        },
        report,
    ))
}

/// Three-zone comparison map: a transition layer along the sector's lower
/// seam ray, its equivariant image along the upper one, and a linear
/// angular blend between their far fields across the middle half.
pub fn build_test_function(
    p: &Potential,
    profile: &HeteroclinicProfile,
    grid: PolarGrid,
) -> Result<EquivariantField> {
    let problem_check = DiskProblem::new(p, grid)?;
    drop(problem_check);
    let ws = p.wells();
    let om = p.omega();
    if profile.well_neg.dist(ws.a) > 1e-9 || profile.well_pos.dist(om.apply(ws.a)) > 1e-9 {
        return Err(NjError::Parameter(
            "stored connection does not join the potential's adjacent wells".into(),
        ));
    }
    let om_inv = om.transpose();
    let sector = grid.sector_angle();
    let quarter = 0.25 * sector;
    let sin_q = quarter.sin();
    let mut field = EquivariantField::zero(grid);
    for i in 0..grid.n_r {
        let r = grid.radius(i);
        for j in 0..grid.n_theta {
            let th = grid.theta(j);
            let v = if th <= quarter {
                om_inv.apply(profile.eval(r * th.sin()))
            } else if th >= 3.0 * quarter {
                profile.eval(r * (th - sector).sin())
            } else {
                let t = 1.5 - 2.0 * th / sector;
                let lower = om_inv.apply(profile.eval(r * sin_q));
                let upper = profile.eval(-r * sin_q);
                lower.scale(t) + upper.scale(1.0 - t)
            };
            field.set(i, j, v);
        }
    }
    Ok(field)
}

/// Angular slice of the field at radius `r`, packaged with the
/// tangential-only energy so it can feed the fiber classification.
/// Radial position interpolates linearly between node rings and clamps to
/// the outermost ring past its midpoint.
pub fn restrict_fiber(p: &Potential, field: &EquivariantField, r: f64) -> Result<FiberProfile> {
    let grid = field.grid;
    if !(r >= grid.r_min() && r <= grid.outer_radius) {
        return Err(NjError::Parameter(format!(
            "fiber radius {r} outside the resolved range [{}, {}]",
            grid.r_min(),
            grid.outer_radius
        )));
    }
    let t = (r - grid.r_min()) / grid.dr();
    let i0 = (t.floor() as usize).min(grid.n_r - 1);
    let i1 = (i0 + 1).min(grid.n_r - 1);
    let frac = (t - i0 as f64).clamp(0.0, 1.0);
    let samples: Vec<Vec2> = (0..grid.n_theta)
        .map(|j| field.value(i0, j).lerp(field.value(i1, j), frac))
        .collect();
    let ring = RingEnergy::new(p, grid.segments, r, grid.n_theta)?;
    let energy = grid.segments as f64 * ring.energy(&flatten(&samples));
    Ok(FiberProfile {
        radius: r,
        samples,
        arc_step: grid.dtheta(),
        segments: grid.segments,
        energy,
    })
}

/// Result of pinning the rotational gauge.
#[derive(Debug, Clone)]
pub struct GaugeFix {
    pub field: EquivariantField,
    /// Whole-node domain rotation that was applied.
    pub shift: i64,
    /// Radius of the structured ring that set the gauge.
    pub radius: f64,
    /// Layer angle after the rotation, within half a cell of zero
    /// (modulo the sector).
    pub theta_r: f64,
}

/// Rotate the domain by whole angular cells so the outermost structured
/// ring puts its transition layer on the seam ray.
pub fn gauge_fix(
    p: &Potential,
    field: &EquivariantField,
    params: &AnalysisParams,
) -> Result<GaugeFix> {
    let grid = field.grid;
    let om = p.omega();
    for i in (0..grid.n_r).rev() {
        let r = grid.radius(i);
        let prof = restrict_fiber(p, field, r)?;
        let class = classify_fiber(p, &prof, params);
        if let Some(theta) = class.theta_r() {
            let shift = (theta / grid.dtheta()).round() as i64;
            let mut rotated = EquivariantField::zero(grid);
            for row in 0..grid.n_r {
                for j in 0..grid.n_theta {
                    rotated.set(row, j, field.fetch(row, j as i64 + shift, om));
                }
            }
            let after = classify_fiber(p, &restrict_fiber(p, &rotated, r)?, params);
            let theta_r = after.theta_r().ok_or_else(|| {
                NjError::Construction("gauge rotation destroyed the ring structure".into())
            })?;
            return Ok(GaugeFix {
                field: rotated,
                shift,
                radius: r,
                theta_r,
            });
        }
    }
    Err(NjError::Construction(
        "no ring classifies as a single layer; cannot set the gauge".into(),
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fiber::FiberClass;
    use crate::heteroclinic::solve_heteroclinic;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::sync::OnceLock;

    fn triple() -> &'static (Potential, HeteroclinicProfile) {
        static CTX: OnceLock<(Potential, HeteroclinicProfile)> = OnceLock::new();
        CTX.get_or_init(|| {
            let p = Potential::complex_well(3, 1.0).unwrap();
            let profile = solve_heteroclinic(&p, 8.0, 800, 1e-6).unwrap();
            (p, profile)
        })
    }

    fn hand_params(segments: usize) -> AnalysisParams {
        AnalysisParams {
            delta: 0.3,
            alpha: 0.25,
            alpha_prime: 0.25,
            c: 2.0,
            delta_prime: 0.7,
            nu: 1e6,
            r_delta: 1.0,
            segments,
        }
    }

    #[test]
    fn zero_field_energy_is_bulk_area() {
        let (p, _) = triple();
        let grid = PolarGrid::new(6.0, 48, 64, 3).unwrap();
        let field = EquivariantField::zero(grid);
        let e = total_energy(p, &field).unwrap();
        let expect = p.eval(Vec2::new(0.0, 0.0)) * PI * 36.0;
        assert!(
            (e - expect).abs() <= 1e-8 * expect,
            "zero field energy {e} vs bulk {expect}"
        );
        assert_eq!(radial_kinetic(&field), 0.0);

        // a map with no radial variation has no radial kinetic energy even
        // though it varies in angle
        let mut swirl = EquivariantField::zero(grid);
        for i in 0..grid.n_r {
            for j in 0..grid.n_theta {
                let th = grid.theta(j);
                swirl.set(i, j, Vec2::new(th.cos(), th.sin()).scale(0.4));
            }
        }
        assert_eq!(radial_kinetic(&swirl), 0.0);
    }

    #[test]
    fn disk_gradient_matches_finite_differences() {
        let (p, _) = triple();
        let grid = PolarGrid::new(4.0, 10, 12, 3).unwrap();
        let problem = DiskProblem::new(p, grid).unwrap();
        let dof = 2 * grid.node_count();
        let mut rng = ChaCha8Rng::seed_from_u64(0x4449534b);
        let x: Vec<f64> = (0..dof).map(|_| rng.gen_range(-1.2..1.2)).collect();
        let mut g = vec![0.0; dof];
        problem.gradient(&x, &mut g);
        for _ in 0..5 {
            let dir: Vec<f64> = (0..dof).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let norm = dir.iter().map(|d| d * d).sum::<f64>().sqrt();
            let dir: Vec<f64> = dir.iter().map(|d| d / norm).collect();
            let analytic: f64 = g.iter().zip(&dir).map(|(gi, di)| gi * di).sum();
            let eps = 1e-6;
            let plus: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi + eps * di).collect();
            let minus: Vec<f64> = x.iter().zip(&dir).map(|(xi, di)| xi - eps * di).collect();
            let fd = (problem.energy(&plus) - problem.energy(&minus)) / (2.0 * eps);
            let rel = (analytic - fd).abs() / analytic.abs().max(1.0);
            assert!(rel < 1e-5, "gradient mismatch: {analytic} vs {fd}");
        }
    }

    #[test]
    fn test_function_zones_and_far_field() {
        let (p, profile) = triple();
        let grid = PolarGrid::new(20.0, 80, 96, 3).unwrap();
        let field = build_test_function(p, profile, grid).unwrap();
        let om = p.omega();

        // the lower seam ray carries the layer midpoint at every radius
        let expect = om.transpose().apply(profile.eval(0.0));
        for i in 0..grid.n_r {
            assert!(field.value(i, 0).dist(expect) < 1e-12);
        }

        // far out on the bisector the field is pinned to the sector's well
        // by both blended tails
        let a = p.wells().a;
        let j_mid = grid.n_theta / 2;
        let i_out = grid.n_r - 1;
        let r = grid.radius(i_out);
        let y = r * (0.25 * grid.sector_angle()).sin();
        let tail = profile
            .eval(y)
            .dist(profile.well_pos)
            .max(profile.eval(-y).dist(profile.well_neg));
        assert!(
            field.value(i_out, j_mid).dist(a) <= 2.0 * tail,
            "bisector value {} from well vs tail bound {}",
            field.value(i_out, j_mid).dist(a),
            2.0 * tail
        );

        // slices far from the center look like a single layer on the seam
        let prof = restrict_fiber(p, &field, 16.0).unwrap();
        let class = classify_fiber(p, &prof, &hand_params(3));
        let theta = class.theta_r().expect("test map slice must be a layer");
        let wrapped = theta.min(grid.sector_angle() - theta);
        assert!(wrapped <= 3.0 * grid.dtheta(), "layer angle {theta}");

        // the zero map near the pinned center has no structure
        let small = restrict_fiber(p, &EquivariantField::zero(grid), grid.r_min()).unwrap();
        assert_eq!(classify_fiber(p, &small, &hand_params(3)), FiberClass::V1);

        // out-of-range restrictions are refused
        assert!(restrict_fiber(p, &field, 21.0).is_err());
        assert!(restrict_fiber(p, &field, 0.0).is_err());
    }

    #[test]
    fn minimizer_descends_from_test_map() {
        let (p, profile) = triple();
        let grid = PolarGrid::new(6.0, 36, 48, 3).unwrap();
        let seed = build_test_function(p, profile, grid).unwrap();
        let seed_energy = total_energy(p, &seed).unwrap();
        let (field, report) = minimize_disk(p, grid, &seed, 1e-3, 200_000).unwrap();
        assert!(report.monotone);
        assert!(report.residual <= 1e-2);
        assert!(
            report.energy <= seed_energy + 1e-12,
            "descent went up: {} vs {}",
            report.energy,
            seed_energy
        );
        let direct = total_energy(p, &field).unwrap();
        assert!((direct - report.energy).abs() <= 1e-9 * direct.abs().max(1.0));

        // stacking the ring energies over the rings never exceeds the disk
        // energy: the radial terms are nonnegative
        let mut ring_sum = 0.0;
        for i in 0..grid.n_r {
            let prof = restrict_fiber(p, &field, grid.radius(i)).unwrap();
            ring_sum += prof.energy * grid.dr();
        }
        assert!(
            ring_sum <= direct + 1e-9,
            "ring stack {ring_sum} above disk energy {direct}"
        );
    }

    #[test]
    fn scalar_saddle_vanishes_on_seam() {
        let p = Potential::scalar_bistable();
        let profile = solve_heteroclinic(&p, 10.0, 1000, 1e-6).unwrap();
        let grid = PolarGrid::new(8.0, 40, 32, 4).unwrap();
        let seed = build_test_function(&p, &profile, grid).unwrap();
        let (field, report) = minimize_disk(&p, grid, &seed, 1e-3, 200_000).unwrap();
        assert!(report.monotone);
        for i in 0..grid.n_r {
            let u = field.value(i, 0);
            assert!(
                u.x.abs() <= 5e-2,
                "seam value {} at r = {}",
                u.x,
                grid.radius(i)
            );
        }
        // the second target component never activates for a scalar well set
        for v in &field.values {
            assert!(v.y.abs() <= 1e-12);
        }
        // equivariant sign alternation: the sector interior and its seam
        // image have opposite signs
        let om = p.omega();
        let mid = field.value(grid.n_r - 1, grid.n_theta / 2);
        let image = field.fetch(grid.n_r - 1, (grid.n_theta + grid.n_theta / 2) as i64, om);
        assert!(mid.x > 0.5 && image.x < -0.5);
    }

    #[test]
    fn gauge_rotation_moves_layer_to_seam() {
        let (p, profile) = triple();
        let grid = PolarGrid::new(14.0, 56, 72, 3).unwrap();
        let base = build_test_function(p, profile, grid).unwrap();
        let om = p.omega();
        // knock the layer off the seam by a known whole-cell rotation
        let mut shifted = EquivariantField::zero(grid);
        let knock = 17i64;
        for i in 0..grid.n_r {
            for j in 0..grid.n_theta {
                shifted.set(i, j, base.fetch(i, j as i64 - knock, om));
            }
        }
        let params = hand_params(3);
        let fixed = gauge_fix(p, &shifted, &params).unwrap();
        let sector = grid.sector_angle();
        let wrapped = fixed.theta_r.min(sector - fixed.theta_r);
        assert!(
            wrapped <= 0.51 * grid.dtheta(),
            "layer still at angle {} after gauge fix",
            fixed.theta_r
        );
        assert_eq!(fixed.shift.rem_euclid(grid.n_theta as i64), knock);
    }
}
