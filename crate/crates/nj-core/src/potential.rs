//! Potentials with a finite cyclic symmetry and their certified constants.
//!
//! Everything downstream (heteroclinic solver, fiber classification, disk
//! analysis) consumes a potential only through `eval` / `grad` plus a small
//! set of measured constants: quadratic envelope rates around the wells, the
//! radius on which those rates are certified, a radial coercivity threshold,
//! and a monotonicity radius.  `estimate_constants` produces them by dense
//! sampling and conservative tightening, so every inequality the analysis
//! layer later relies on has actually been checked on this machine.

use crate::error::{NjError, Result};
use crate::geometry::{Mat2, Vec2};
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Step for the central-difference Hessian at a well.
const HESSIAN_FD_STEP: f64 = 1e-4;
/// Relative margin applied to the Hessian eigenvalue rates before the
/// sampled envelope can tighten them further.
const ENVELOPE_MARGIN: f64 = 0.05;
/// A probe radius is rejected when sampling would force the lower rate
/// below this fraction of `sqrt(lambda_min)`; the estimate then retries on
/// the next smaller radius instead of certifying a uselessly weak constant.
const ENVELOPE_FLOOR: f64 = 0.5;
/// One-sided conservative trim applied to the final rates so that fresh
/// samples drawn later stay on the correct side of the envelope.
const SAFETY_TRIM: f64 = 1e-3;
/// Probe radii may not exceed this fraction of the well separation, which
/// keeps the certified balls around distinct wells disjoint.
const MAX_RADIUS_FRACTION: f64 = 0.49;
/// Tolerances for the hypothesis report.
const SYMMETRY_TOL: f64 = 1e-9;
const WELL_VALUE_TOL: f64 = 1e-9;
const WELL_GRAD_TOL: f64 = 1e-7;

/// Number of radii sampled inside each probe radius.
const RADIAL_SAMPLES: usize = 48;
/// Radial resolution of the between-wells scan and the ray scan.
const FAR_RADIAL_SAMPLES: usize = 192;
const RAY_COUNT: usize = 128;
const RAY_STEPS: usize = 512;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum PotentialKind {
    /// `W(z) = |z^N - a^N|^2` on the plane, wells at the N-th roots scaled
    /// by the well radius.
    PolynomialComplexWell,
    /// `W(u) = (1 - u^2)^2 / 4` on the line, wells at +1 and -1.
    ScalarBistable,
    /// Caller-supplied polynomial in the two target components.
    UserPolynomial,
}

/// One monomial `coef * x^pow_x * y^pow_y` of a user polynomial.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct MonomialTerm {
    pub pow_x: u32,
    pub pow_y: u32,
    pub coef: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Potential {
    pub kind: PotentialKind,
    /// Target dimension, 1 or 2.  Scalar problems still move `Vec2` values
    /// around; their second component is identically zero.
    pub m: usize,
    /// Order of the cyclic symmetry group acting on the target.
    pub n_sym: usize,
    /// Distance of the wells from the origin.
    pub well_radius: f64,
    /// Monomials of a user polynomial; unused by the built-in kinds.
    #[serde(default)]
    pub coefficients: Vec<MonomialTerm>,
}

/// The distinguished well `a` together with its full symmetry orbit.
#[derive(Debug, Clone)]
pub struct WellSet {
    pub a: Vec2,
    pub wells: Vec<Vec2>,
}

impl WellSet {
    /// Minimal distance between distinct wells.
    pub fn separation(&self) -> f64 {
        let mut best = f64::INFINITY;
        for i in 0..self.wells.len() {
            for j in (i + 1)..self.wells.len() {
                best = best.min(self.wells[i].dist(self.wells[j]));
            }
        }
        best
    }

    /// Distance from `u` to the nearest well, and that well's index.
    pub fn nearest(&self, u: Vec2) -> (usize, f64) {
        let mut k = 0;
        let mut best = f64::INFINITY;
        for (i, w) in self.wells.iter().enumerate() {
            let d = u.dist(*w);
            if d < best {
                best = d;
                k = i;
            }
        }
        (k, best)
    }
}

/// Constants certified by `estimate_constants`.
///
/// On every sampled point with `|z - well| = d <= delta_w` the potential
/// satisfies `c_lo^2 d^2 / 2 <= W(z) <= c_hi^2 d^2 / 2` together with the
/// inner-product bound `grad W(z) . (z - well) >= c_lo^2 d^2`, and on the
/// coercivity ball points at distance `d >= delta` from every well satisfy
/// `W >= c_lo^2 min(d, delta_w)^2 / 2`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct PotentialConstants {
    pub c_lo: f64,
    pub c_hi: f64,
    pub delta_w: f64,
    /// Radius beyond which `grad W(u) . u >= 0` was verified (checked out to
    /// four times this value).
    pub m_radius: f64,
    /// Along every sampled ray from the well, `W` at distance `d <= delta0`
    /// is strictly below `W` anywhere farther out on that ray (away from the
    /// other wells' exclusion balls, inside the coercivity ball).
    pub delta0: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct HypothesisReport {
    /// Max relative mismatch of `W(omega u)` against `W(u)` over the sample.
    pub symmetry_residual: f64,
    pub well_values: Vec<f64>,
    pub well_gradient_norms: Vec<f64>,
    /// Eigenvalues of the Hessian at the distinguished well, ascending.
    pub hessian_eigenvalues: (f64, f64),
    pub coercivity_radius: f64,
    pub symmetry_ok: bool,
    pub wells_ok: bool,
    pub coercive_ok: bool,
}

impl HypothesisReport {
    pub fn passed(&self) -> bool {
        self.symmetry_ok && self.wells_ok && self.coercive_ok
    }
}

impl Potential {
    pub fn complex_well(n_sym: usize, well_radius: f64) -> Result<Potential> {
        let p = Potential {
            kind: PotentialKind::PolynomialComplexWell,
            m: 2,
            n_sym,
            well_radius,
            coefficients: Vec::new(),
        };
        p.validate()?;
        Ok(p)
    }

    pub fn scalar_bistable() -> Potential {
        Potential {
            kind: PotentialKind::ScalarBistable,
            m: 1,
            n_sym: 2,
            well_radius: 1.0,
            coefficients: Vec::new(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.m != 1 && self.m != 2 {
            return Err(NjError::Parameter(format!(
                "target dimension must be 1 or 2, got {}",
                self.m
            )));
        }
        if self.n_sym < 2 {
            return Err(NjError::Parameter(format!(
                "symmetry order must be at least 2, got {}",
                self.n_sym
            )));
        }
        if self.m == 1 && self.n_sym != 2 {
            return Err(NjError::Parameter(
                "a one-dimensional target only supports symmetry order 2".into(),
            ));
        }
        if !(self.well_radius > 0.0) || !self.well_radius.is_finite() {
            return Err(NjError::Parameter(format!(
                "well radius must be positive and finite, got {}",
                self.well_radius
            )));
        }
        match self.kind {
            PotentialKind::PolynomialComplexWell => {
                if self.m != 2 {
                    return Err(NjError::Parameter(
                        "complex-well potential needs a two-dimensional target".into(),
                    ));
                }
            }
            PotentialKind::ScalarBistable => {
                if self.m != 1 || self.n_sym != 2 {
                    return Err(NjError::Parameter(
                        "scalar bistable potential requires m = 1, N = 2".into(),
                    ));
                }
                if (self.well_radius - 1.0).abs() > 1e-12 {
                    return Err(NjError::Parameter(
                        "scalar bistable wells sit at +1 and -1; well_radius must be 1".into(),
                    ));
                }
            }
            PotentialKind::UserPolynomial => {
                if self.coefficients.is_empty() {
                    return Err(NjError::Parameter(
                        "user polynomial needs at least one monomial".into(),
                    ));
                }
                for t in &self.coefficients {
                    if !t.coef.is_finite() {
                        return Err(NjError::NonFinite("user polynomial coefficient"));
                    }
                }
            }
        }
        Ok(())
    }

    /// The target-space rotation generating the symmetry.
    pub fn omega(&self) -> Mat2 {
        Mat2::rotation_fraction(self.n_sym)
    }

    pub fn wells(&self) -> WellSet {
        let a = Vec2::new(self.well_radius, 0.0);
        let om = self.omega();
        let mut wells = Vec::with_capacity(self.n_sym);
        let mut w = a;
        for _ in 0..self.n_sym {
            wells.push(w);
            w = om.apply(w);
        }
        WellSet { a, wells }
    }

    /// Unchecked evaluation; the hot path for the solvers.
    pub fn eval(&self, u: Vec2) -> f64 {
        match self.kind {
            PotentialKind::PolynomialComplexWell => {
                let z = Complex64::new(u.x, u.y);
                let f = z.powu(self.n_sym as u32) - self.well_pow();
                f.norm_sqr()
            }
            PotentialKind::ScalarBistable => {
                let q = 1.0 - u.x * u.x;
                0.25 * q * q
            }
            PotentialKind::UserPolynomial => {
                let mut w = 0.0;
                for t in &self.coefficients {
                    w += t.coef * u.x.powi(t.pow_x as i32) * u.y.powi(t.pow_y as i32);
                }
                w
            }
        }
    }

    /// Unchecked gradient of `eval` in the target variables.
    pub fn grad(&self, u: Vec2) -> Vec2 {
        match self.kind {
            PotentialKind::PolynomialComplexWell => {
                let n = self.n_sym as u32;
                let z = Complex64::new(u.x, u.y);
                let f = z.powu(n) - self.well_pow();
                let fp = Complex64::new(n as f64, 0.0) * z.powu(n - 1);
                let g = fp * f.conj();
                Vec2::new(2.0 * g.re, -2.0 * g.im)
            }
            PotentialKind::ScalarBistable => Vec2::new(u.x * u.x * u.x - u.x, 0.0),
            PotentialKind::UserPolynomial => {
                let mut gx = 0.0;
                let mut gy = 0.0;
                for t in &self.coefficients {
                    if t.pow_x > 0 {
                        gx += t.coef
                            * t.pow_x as f64
                            * u.x.powi(t.pow_x as i32 - 1)
                            * u.y.powi(t.pow_y as i32);
                    }
                    if t.pow_y > 0 {
                        gy += t.coef
                            * t.pow_y as f64
                            * u.x.powi(t.pow_x as i32)
                            * u.y.powi(t.pow_y as i32 - 1);
                    }
                }
                Vec2::new(gx, gy)
            }
        }
    }

    fn well_pow(&self) -> Complex64 {
        Complex64::new(self.well_radius.powi(self.n_sym as i32), 0.0)
    }
}

/// Checked evaluation of the potential.
pub fn eval_w(p: &Potential, u: Vec2) -> Result<f64> {
    if !u.is_finite() {
        return Err(NjError::NonFinite("potential argument"));
    }
    let w = p.eval(u);
    if !w.is_finite() {
        return Err(NjError::NonFinite("potential value"));
    }
    Ok(w)
}

/// Checked gradient of the potential.
pub fn grad_w(p: &Potential, u: Vec2) -> Result<Vec2> {
    if !u.is_finite() {
        return Err(NjError::NonFinite("potential argument"));
    }
    let g = p.grad(u);
    if !g.is_finite() {
        return Err(NjError::NonFinite("potential gradient"));
    }
    Ok(g)
}

/// Target rotation of order `n` and the domain rotation whose `h`-th power
/// it matches under equivariance.
pub fn rotation_generator(n: usize, h: usize) -> Result<(Mat2, Mat2)> {
    if n < 2 {
        return Err(NjError::Parameter(format!(
            "symmetry order must be at least 2, got {n}"
        )));
    }
    if h < 1 {
        return Err(NjError::Parameter("fold count must be at least 1".into()));
    }
    let target = Mat2::rotation_fraction(n);
    let domain = Mat2::rotation_fraction(n * h);
    Ok((target, domain))
}

/// Central-difference Hessian of the potential at `u`.
pub fn fd_hessian(p: &Potential, u: Vec2, step: f64) -> Mat2 {
    let gxp = p.grad(u + Vec2::new(step, 0.0));
    let gxm = p.grad(u - Vec2::new(step, 0.0));
    let gyp = p.grad(u + Vec2::new(0.0, step));
    let gym = p.grad(u - Vec2::new(0.0, step));
    let col_x = (gxp - gxm).scale(0.5 / step);
    let col_y = (gyp - gym).scale(0.5 / step);
    // symmetrize; the off-diagonal entries agree up to truncation error
    Mat2 {
        a: col_x.x,
        b: 0.5 * (col_y.x + col_x.y),
        c: 0.5 * (col_x.y + col_y.x),
        d: col_y.y,
    }
}

fn hessian_range(p: &Potential, at: Vec2) -> (f64, f64) {
    let step = HESSIAN_FD_STEP * p.well_radius.max(1.0);
    let h = fd_hessian(p, at, step);
    if p.m == 1 {
        (h.a, h.a)
    } else {
        h.sym_eigenvalues()
    }
}

/// Points at distance `d` from `center`: the full circle for planar targets,
/// the two axis points for scalar ones.
fn sphere_points(p: &Potential, center: Vec2, d: f64, count: usize, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    if p.m == 1 {
        vec![center + Vec2::new(d, 0.0), center - Vec2::new(d, 0.0)]
    } else {
        let jitter: f64 = rng.gen::<f64>();
        (0..count)
            .map(|k| {
                let th = 2.0 * PI * (k as f64 + jitter) / count as f64;
                center + Vec2::from_polar(d, th)
            })
            .collect()
    }
}

fn coercivity_radius(p: &Potential, sphere_samples: usize, rng: &mut ChaCha8Rng) -> Result<f64> {
    let mut m = 1.05 * p.well_radius;
    let angle_count = sphere_samples.max(64);
    for _ in 0..200 {
        let mut ok = true;
        'radii: for k in 0..32 {
            let r = m * (1.0 + 3.0 * k as f64 / 31.0);
            for u in sphere_points(p, Vec2::ZERO, r, angle_count, rng) {
                if p.grad(u).dot(u) < 0.0 {
                    ok = false;
                    break 'radii;
                }
            }
        }
        if ok {
            return Ok(m);
        }
        m *= 1.05;
        if !m.is_finite() {
            break;
        }
    }
    Err(NjError::Hypothesis(
        "no radius found with grad W(u) . u >= 0 outside it".into(),
    ))
}

/// Deterministic sample of the coercivity ball, used for the between-wells
/// part of the envelope.
fn ball_samples(p: &Potential, m_radius: f64, rng: &mut ChaCha8Rng) -> Vec<Vec2> {
    let mut pts = Vec::new();
    if p.m == 1 {
        let n = 4 * FAR_RADIAL_SAMPLES;
        for k in 0..=n {
            pts.push(Vec2::new(m_radius * (2.0 * k as f64 / n as f64 - 1.0), 0.0));
        }
    } else {
        for i in 1..=FAR_RADIAL_SAMPLES {
            let r = m_radius * i as f64 / FAR_RADIAL_SAMPLES as f64;
            for k in 0..RAY_COUNT {
                pts.push(Vec2::from_polar(r, 2.0 * PI * k as f64 / RAY_COUNT as f64));
            }
        }
        for _ in 0..4096 {
            let th = rng.gen::<f64>() * 2.0 * PI;
            let r = m_radius * rng.gen::<f64>().sqrt();
            pts.push(Vec2::from_polar(r, th));
        }
    }
    pts
}

/// Largest radius along each ray from the well below which the potential is
/// strictly smaller than anywhere farther out on the same ray (staying inside
/// the coercivity ball and outside the other wells' exclusion balls).
fn monotonicity_radius(
    p: &Potential,
    ws: &WellSet,
    delta_w: f64,
    m_radius: f64,
) -> Result<f64> {
    let exclusion = 0.5 * delta_w;
    let ray_count = if p.m == 1 { 2 } else { RAY_COUNT };
    let d_end = m_radius + p.well_radius;
    let mut delta0 = delta_w;
    for kr in 0..ray_count {
        let n = if p.m == 1 {
            Vec2::new(if kr == 0 { 1.0 } else { -1.0 }, 0.0)
        } else {
            Vec2::from_polar(1.0, 2.0 * PI * kr as f64 / ray_count as f64)
        };
        let mut w_vals = Vec::with_capacity(RAY_STEPS);
        let mut admissible = Vec::with_capacity(RAY_STEPS);
        for i in 1..=RAY_STEPS {
            let d = d_end * i as f64 / RAY_STEPS as f64;
            let z = ws.a + n.scale(d);
            let far_from_others = ws
                .wells
                .iter()
                .skip(1)
                .all(|wj| z.dist(*wj) >= exclusion);
            w_vals.push(p.eval(z));
            admissible.push(z.norm() <= m_radius && far_from_others);
        }
        // minimum of W over admissible points strictly beyond each index
        let mut suffix = vec![f64::INFINITY; RAY_STEPS + 1];
        for i in (0..RAY_STEPS).rev() {
            suffix[i] = if admissible[i] {
                suffix[i + 1].min(w_vals[i])
            } else {
                suffix[i + 1]
            };
        }
        let mut ray_delta: f64 = 0.0;
        for i in 0..RAY_STEPS {
            let d = d_end * (i + 1) as f64 / RAY_STEPS as f64;
            if d > delta_w {
                break;
            }
            if w_vals[i] < suffix[i + 1] {
                ray_delta = d;
            } else {
                break;
            }
        }
        if ray_delta == 0.0 {
            return Err(NjError::Hypothesis(format!(
                "potential not increasing near the well along ray {kr}"
            )));
        }
        delta0 = delta0.min(ray_delta);
    }
    Ok(delta0)
}

/// Measure the quadratic envelope rates, the certified radius, the
/// coercivity threshold and the monotonicity radius for `p`.
///
/// `delta_probe_grid` lists candidate certified radii; the largest candidate
/// whose sampled envelope stays above the rejection floor wins.  Pass an
/// empty slice for the default grid of 10 radii between 5% and 50% of the
/// well distance.  `sphere_samples` controls the angular resolution of each
/// sampled sphere (minimum 64).
pub fn estimate_constants(
    p: &Potential,
    delta_probe_grid: &[f64],
    sphere_samples: usize,
) -> Result<PotentialConstants> {
    p.validate()?;
    let ws = p.wells();
    let (lambda_min, lambda_max) = hessian_range(p, ws.a);
    if lambda_min <= 0.0 {
        return Err(NjError::Hypothesis(format!(
            "well Hessian not positive definite: lambda_min = {lambda_min:.3e}"
        )));
    }
    let sep = ws.separation();
    let mut rng = ChaCha8Rng::seed_from_u64(0x57454c4c);
    let m_radius = coercivity_radius(p, sphere_samples, &mut rng)?;
    let far = ball_samples(p, m_radius, &mut rng);

    let default_grid: Vec<f64> = (1..=10)
        .map(|k| 0.05 * k as f64 * p.well_radius)
        .collect();
    let grid = if delta_probe_grid.is_empty() {
        &default_grid[..]
    } else {
        delta_probe_grid
    };
    let mut candidates: Vec<f64> = grid
        .iter()
        .copied()
        .filter(|&d| d.is_finite() && d > 0.0 && d <= MAX_RADIUS_FRACTION * sep)
        .collect();
    if candidates.is_empty() {
        return Err(NjError::Parameter(format!(
            "no admissible probe radius below {:.3} (well separation {:.3})",
            MAX_RADIUS_FRACTION * sep,
            sep
        )));
    }
    candidates.sort_by(|a, b| b.partial_cmp(a).unwrap());

    let rate_lo_cap = (1.0 - ENVELOPE_MARGIN) * lambda_min.sqrt();
    let rate_hi_cap = (1.0 + ENVELOPE_MARGIN) * lambda_max.sqrt();
    let floor = ENVELOPE_FLOOR * lambda_min.sqrt();

    for &delta_w in &candidates {
        let mut q_min = f64::INFINITY;
        let mut q_max: f64 = 0.0;
        let mut g_min = f64::INFINITY;
        for i in 1..=RADIAL_SAMPLES {
            let d = delta_w * i as f64 / RADIAL_SAMPLES as f64;
            for z in sphere_points(p, ws.a, d, sphere_samples.max(64), &mut rng) {
                let dd = z.dist(ws.a);
                let ratio = 2.0 * p.eval(z) / (dd * dd);
                q_min = q_min.min(ratio);
                q_max = q_max.max(ratio);
                g_min = g_min.min(p.grad(z).dot(z - ws.a) / (dd * dd));
            }
        }
        if !(q_min > 0.0) || !(g_min > 0.0) {
            continue;
        }
        // between-wells floor: W at distance d from every well must beat the
        // envelope evaluated at min(d, delta_w)
        let mut out_min = f64::INFINITY;
        for &z in &far {
            let (_, d) = ws.nearest(z);
            if d <= 0.0 {
                continue;
            }
            let eff = d.min(delta_w);
            out_min = out_min.min(2.0 * p.eval(z) / (eff * eff));
        }
        let c_lo = rate_lo_cap
            .min(q_min.sqrt())
            .min(g_min.sqrt())
            .min(out_min.sqrt())
            * (1.0 - SAFETY_TRIM);
        if c_lo < floor {
            continue;
        }
        let c_hi = rate_hi_cap.max(q_max.sqrt()) * (1.0 + SAFETY_TRIM);
        let delta0 = monotonicity_radius(p, &ws, delta_w, m_radius)?;
        return Ok(PotentialConstants {
            c_lo,
            c_hi,
            delta_w,
            m_radius,
            delta0,
        });
    }
    Err(NjError::Hypothesis(
        "no probe radius certifies a quadratic envelope above the rejection floor; \
         refine the probe grid or check the wells"
            .into(),
    ))
}

/// Sample-based check of the structural hypotheses: symmetry of `W`,
/// nondegenerate zeros exactly on the well orbit, radial coercivity.
pub fn verify_hypotheses(p: &Potential) -> Result<HypothesisReport> {
    p.validate()?;
    let ws = p.wells();
    let om = p.omega();
    let mut rng = ChaCha8Rng::seed_from_u64(0x48595054);
    let span = 2.0 * p.well_radius.max(1.0);
    let mut symmetry_residual: f64 = 0.0;
    for _ in 0..2000 {
        let u = Vec2::new(
            span * (2.0 * rng.gen::<f64>() - 1.0),
            if p.m == 1 {
                0.0
            } else {
                span * (2.0 * rng.gen::<f64>() - 1.0)
            },
        );
        let w = p.eval(u);
        let wr = p.eval(om.apply(u));
        let res = (wr - w).abs() / (1.0 + w.abs());
        symmetry_residual = symmetry_residual.max(res);
    }

    let scale = p.eval(Vec2::ZERO).abs().max(1.0);
    let mut well_values = Vec::new();
    let mut well_gradient_norms = Vec::new();
    let mut wells_ok = true;
    for &w in &ws.wells {
        let v = p.eval(w);
        let g = p.grad(w).norm();
        wells_ok &= v.abs() <= WELL_VALUE_TOL * scale && g <= WELL_GRAD_TOL * scale;
        well_values.push(v);
        well_gradient_norms.push(g);
    }
    let hessian_eigenvalues = hessian_range(p, ws.a);
    wells_ok &= hessian_eigenvalues.0 > 0.0;

    let coercive = coercivity_radius(p, 128, &mut rng);
    let (coercivity_radius, coercive_ok) = match coercive {
        Ok(r) => (r, true),
        Err(_) => (f64::NAN, false),
    };

    Ok(HypothesisReport {
        symmetry_ok: symmetry_residual <= SYMMETRY_TOL,
        symmetry_residual,
        well_values,
        well_gradient_norms,
        hessian_eigenvalues,
        coercivity_radius,
        wells_ok,
        coercive_ok,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn triple_well() -> Potential {
        Potential::complex_well(3, 1.0).unwrap()
    }

    #[test]
    fn complex_well_values() {
        let p = triple_well();
        assert_abs_diff_eq!(p.eval(Vec2::ZERO), 1.0, epsilon = 1e-15);
        for w in p.wells().wells {
            assert!(p.eval(w).abs() < 1e-14);
            assert!(p.grad(w).norm() < 1e-13);
        }
        // quartic growth away from the wells
        assert!(p.eval(Vec2::new(3.0, 0.0)) > 100.0);
    }

    #[test]
    fn scalar_values() {
        let p = Potential::scalar_bistable();
        assert_abs_diff_eq!(p.eval(Vec2::ZERO), 0.25, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eval(Vec2::new(1.0, 0.0)), 0.0, epsilon = 1e-15);
        assert_abs_diff_eq!(p.eval(Vec2::new(-1.0, 0.0)), 0.0, epsilon = 1e-15);
        let (lo, hi) = hessian_range(&p, Vec2::new(1.0, 0.0));
        assert_abs_diff_eq!(lo, 2.0, epsilon = 1e-6);
        assert_abs_diff_eq!(hi, 2.0, epsilon = 1e-6);
    }

    #[test]
    fn complex_well_hessian_matches_closed_form() {
        // |z^N - a^N|^2 has an isotropic Hessian 2 N^2 a^(2N-2) at the well
        for (n, a) in [(2usize, 1.0f64), (3, 1.0), (4, 1.0), (3, 0.7)] {
            let p = Potential::complex_well(n, a).unwrap();
            let (lo, hi) = hessian_range(&p, p.wells().a);
            let expect = 2.0 * (n * n) as f64 * a.powi(2 * n as i32 - 2);
            assert_abs_diff_eq!(lo, expect, epsilon = 1e-4 * expect);
            assert_abs_diff_eq!(hi, expect, epsilon = 1e-4 * expect);
        }
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let user = Potential {
            kind: PotentialKind::UserPolynomial,
            m: 2,
            n_sym: 2,
            well_radius: 1.0,
            coefficients: vec![
                MonomialTerm { pow_x: 4, pow_y: 0, coef: 0.25 },
                MonomialTerm { pow_x: 2, pow_y: 0, coef: -0.5 },
                MonomialTerm { pow_x: 0, pow_y: 2, coef: 0.5 },
                MonomialTerm { pow_x: 0, pow_y: 0, coef: 0.25 },
                MonomialTerm { pow_x: 2, pow_y: 2, coef: 0.3 },
            ],
        };
        for p in [triple_well(), Potential::scalar_bistable(), user] {
            for _ in 0..50 {
                let u = Vec2::new(
                    2.0 * rng.gen::<f64>() - 1.0,
                    if p.m == 1 { 0.0 } else { 2.0 * rng.gen::<f64>() - 1.0 },
                );
                let g = p.grad(u);
                let e = 1e-6;
                let fx = (p.eval(u + Vec2::new(e, 0.0)) - p.eval(u - Vec2::new(e, 0.0))) / (2.0 * e);
                let fy = (p.eval(u + Vec2::new(0.0, e)) - p.eval(u - Vec2::new(0.0, e))) / (2.0 * e);
                assert_abs_diff_eq!(g.x, fx, epsilon = 1e-7 + 1e-6 * g.norm());
                assert_abs_diff_eq!(g.y, fy, epsilon = 1e-7 + 1e-6 * g.norm());
            }
        }
    }

    #[test]
    fn rotation_generator_orders() {
        let (om, dom) = rotation_generator(3, 2).unwrap();
        // omega has order 3, the domain generator squared equals omega's action angle
        let mut acc = Mat2::IDENTITY;
        for _ in 0..3 {
            acc = acc.mul(&om);
        }
        assert_abs_diff_eq!(acc.a, 1.0, epsilon = 1e-14);
        assert_abs_diff_eq!(acc.b, 0.0, epsilon = 1e-14);
        let d2 = dom.pow(2);
        assert_abs_diff_eq!(d2.a, om.a, epsilon = 1e-14);
        assert_abs_diff_eq!(d2.c, om.c, epsilon = 1e-14);
        assert!(rotation_generator(1, 1).is_err());
        assert!(rotation_generator(3, 0).is_err());
    }

    #[test]
    fn envelope_certified_on_fresh_sample() {
        for p in [triple_well(), Potential::scalar_bistable()] {
            let ws = p.wells();
            let k = estimate_constants(&p, &[], 256).unwrap();
            assert!(k.c_lo > 0.0 && k.c_lo <= k.c_hi);
            assert!(k.delta0 > 0.0 && k.delta0 <= k.delta_w);
            // fresh sample, different seed than the estimator's
            let mut rng = ChaCha8Rng::seed_from_u64(0xf5e5);
            for _ in 0..10_000 {
                let d = k.delta_w * rng.gen::<f64>().max(1e-6);
                let th = if p.m == 1 {
                    if rng.gen::<bool>() { 0.0 } else { PI }
                } else {
                    2.0 * PI * rng.gen::<f64>()
                };
                let z = ws.a + Vec2::from_polar(d, th);
                let w = p.eval(z);
                assert!(w + 1e-10 >= 0.5 * k.c_lo * k.c_lo * d * d);
                assert!(w - 1e-10 <= 0.5 * k.c_hi * k.c_hi * d * d);
                assert!(p.grad(z).dot(z - ws.a) + 1e-10 >= k.c_lo * k.c_lo * d * d);
            }
            // between-wells floor on a fresh sample of the coercivity ball
            for _ in 0..10_000 {
                let r = k.m_radius * rng.gen::<f64>().sqrt();
                let th = if p.m == 1 {
                    if rng.gen::<bool>() { 0.0 } else { PI }
                } else {
                    2.0 * PI * rng.gen::<f64>()
                };
                let z = Vec2::from_polar(r, th);
                let (_, d) = ws.nearest(z);
                if d <= 1e-9 {
                    continue;
                }
                let eff = d.min(k.delta_w);
                assert!(p.eval(z) + 1e-10 >= 0.5 * k.c_lo * k.c_lo * eff * eff);
            }
        }
    }

    #[test]
    fn scalar_constants_reflect_known_rates() {
        let p = Potential::scalar_bistable();
        let k = estimate_constants(&p, &[], 256).unwrap();
        // curvature at the wells is exactly 2
        assert!(k.c_lo <= (1.0 - ENVELOPE_MARGIN) * 2.0f64.sqrt() + 1e-9);
        assert!(k.c_hi >= (1.0 + ENVELOPE_MARGIN) * 2.0f64.sqrt() - 1e-9);
        assert!(k.m_radius >= 1.0);
        // grad W . u = u^4 - u^2 >= 0 outside the unit ball, checked directly
        for i in 0..200 {
            let r = k.m_radius * (1.0 + 3.0 * i as f64 / 199.0);
            assert!(p.grad(Vec2::new(r, 0.0)).dot(Vec2::new(r, 0.0)) >= 0.0);
        }
    }

    #[test]
    fn hypothesis_report_flags_broken_symmetry() {
        let good = verify_hypotheses(&triple_well()).unwrap();
        assert!(good.passed(), "report: {good:?}");
        assert!(good.symmetry_residual <= SYMMETRY_TOL);

        // scalar double well written out as a user polynomial: passes
        let scalar_poly = Potential {
            kind: PotentialKind::UserPolynomial,
            m: 1,
            n_sym: 2,
            well_radius: 1.0,
            coefficients: vec![
                MonomialTerm { pow_x: 0, pow_y: 0, coef: 0.25 },
                MonomialTerm { pow_x: 2, pow_y: 0, coef: -0.5 },
                MonomialTerm { pow_x: 4, pow_y: 0, coef: 0.25 },
            ],
        };
        assert!(verify_hypotheses(&scalar_poly).unwrap().passed());

        // adding an odd term breaks the sign symmetry and shifts the zeros
        let mut broken = scalar_poly;
        broken.coefficients.push(MonomialTerm { pow_x: 3, pow_y: 0, coef: 0.1 });
        let report = verify_hypotheses(&broken).unwrap();
        assert!(!report.symmetry_ok);
        assert!(report.symmetry_residual > SYMMETRY_TOL);
        assert!(!report.passed());
    }

    #[test]
    fn checked_entry_points_reject_non_finite() {
        let p = triple_well();
        assert!(eval_w(&p, Vec2::new(f64::NAN, 0.0)).is_err());
        assert!(grad_w(&p, Vec2::new(0.0, f64::INFINITY)).is_err());
        assert!(eval_w(&p, Vec2::new(0.2, -0.4)).is_ok());
    }
}
