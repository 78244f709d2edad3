//! Energy descent shared by the line, circle and disk solvers.
//!
//! The scheme is steepest descent in the discrete L2 metric (each degree of
//! freedom weighted by its quadrature mass), with Barzilai-Borwein step
//! proposals and a backtracking guard so the energy never increases.  The
//! termination quantity is the weighted gradient, which for all three
//! problems coincides with the pointwise Euler-Lagrange residual of the
//! discretization.

use crate::error::{NjError, Result};

/// Armijo sufficient-decrease fraction.
const ARMIJO_C: f64 = 1e-4;
/// Step clamp.
const STEP_MIN: f64 = 1e-14;
const STEP_MAX: f64 = 1e3;
/// Backtracking halvings before giving up on an iteration.
const MAX_BACKTRACK: usize = 60;

/// A discretized energy over a flat vector of unknowns.
pub trait EnergyFunctional: Sync {
    fn energy(&self, x: &[f64]) -> f64;
    /// Raw differential of the energy; `g` has the same layout as `x`.
    fn gradient(&self, x: &[f64], g: &mut [f64]);
    /// Quadrature mass of each degree of freedom.  Dividing the raw
    /// differential by these weights turns it into the Euler-Lagrange
    /// residual field.
    fn masses(&self) -> &[f64];
}

#[derive(Debug, Clone, Copy)]
pub struct DescentParams {
    /// Terminate when the weighted gradient sup norm drops below this.
    pub tol: f64,
    pub max_iter: usize,
    /// First trial step before any curvature information exists.
    pub init_step: f64,
    /// Accept a `max_iter` exit while the residual is at most
    /// `grace * tol`; above that the run is an error.
    pub grace: f64,
}

impl DescentParams {
    pub fn new(tol: f64, max_iter: usize) -> Self {
        DescentParams {
            tol,
            max_iter,
            init_step: 1e-3,
            grace: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DescentTrace {
    pub iterations: usize,
    pub energy: f64,
    /// Weighted gradient sup norm at exit.
    pub residual: f64,
    /// True when the energy decreased at every accepted step (the guard
    /// enforces it; recorded for reporting).
    pub monotone: bool,
    /// True when the tolerance was met, false on a tolerated max_iter exit.
    pub converged: bool,
}

/// Minimize `f` in place.  Returns the trace, or a convergence /divergence
/// error per the policy in `DescentParams`.
pub fn minimize<F: EnergyFunctional>(
    f: &F,
    x: &mut [f64],
    params: &DescentParams,
) -> Result<DescentTrace> {
    let n = x.len();
    let w = f.masses();
    assert_eq!(w.len(), n, "mass vector must match the unknowns");
    if !(params.tol > 0.0) {
        return Err(NjError::Parameter(format!(
            "descent tolerance must be positive, got {}",
            params.tol
        )));
    }

    let mut g = vec![0.0; n];
    let mut x_prev = vec![0.0; n];
    let mut g_prev = vec![0.0; n];
    let mut trial = vec![0.0; n];

    let mut energy = f.energy(x);
    if !energy.is_finite() {
        return Err(NjError::Divergence { iteration: 0 });
    }
    f.gradient(x, &mut g);

    let mut monotone = true;
    let mut have_prev = false;
    let mut residual = weighted_sup(&g, w);

    for iter in 0..params.max_iter {
        if residual <= params.tol {
            return Ok(DescentTrace {
                iterations: iter,
                energy,
                residual,
                monotone,
                converged: true,
            });
        }
        if !residual.is_finite() {
            return Err(NjError::Divergence { iteration: iter });
        }

        // Barzilai-Borwein step in the weighted metric, from the previous
        // iterate pair; plain init_step on the first pass.
        let mut step = if have_prev {
            let mut sy = 0.0;
            let mut yy = 0.0;
            for i in 0..n {
                let s = x[i] - x_prev[i];
                // preconditioned gradient difference
                let y = (g[i] - g_prev[i]) / w[i];
                sy += s * y * w[i];
                yy += y * y * w[i];
            }
            if sy > 0.0 && yy > 0.0 {
                (sy / yy).clamp(STEP_MIN, STEP_MAX)
            } else {
                params.init_step
            }
        } else {
            params.init_step
        };

        // squared weighted gradient norm = directional decrease rate
        let mut gg = 0.0;
        for i in 0..n {
            gg += g[i] * g[i] / w[i];
        }

        let mut accepted = false;
        for _ in 0..MAX_BACKTRACK {
            for i in 0..n {
                trial[i] = x[i] - step * g[i] / w[i];
            }
            let e_trial = f.energy(&trial);
            if e_trial.is_finite() && e_trial <= energy - ARMIJO_C * step * gg {
                x_prev.copy_from_slice(x);
                g_prev.copy_from_slice(&g);
                x.copy_from_slice(&trial);
                if e_trial > energy {
                    monotone = false;
                }
                energy = e_trial;
                accepted = true;
                have_prev = true;
                break;
            }
            step *= 0.5;
            if step < STEP_MIN {
                break;
            }
        }
        if !accepted {
            // numerically stationary: the energy cannot be decreased along
            // the gradient at any representable step
            if residual <= params.grace * params.tol {
                return Ok(DescentTrace {
                    iterations: iter,
                    energy,
                    residual,
                    monotone,
                    converged: false,
                });
            }
            return Err(NjError::Convergence {
                residual,
                iterations: iter,
            });
        }

        f.gradient(x, &mut g);
        residual = weighted_sup(&g, w);
    }

    if residual <= params.tol {
        return Ok(DescentTrace {
            iterations: params.max_iter,
            energy,
            residual,
            monotone,
            converged: true,
        });
    }
    if residual <= params.grace * params.tol {
        return Ok(DescentTrace {
            iterations: params.max_iter,
            energy,
            residual,
            monotone,
            converged: false,
        });
    }
    Err(NjError::Convergence {
        residual,
        iterations: params.max_iter,
    })
}

fn weighted_sup(g: &[f64], w: &[f64]) -> f64 {
    g.iter()
        .zip(w)
        .map(|(gi, wi)| (gi / wi).abs())
        .fold(0.0, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Separable quartic with known minimum, unequal masses.
    struct Quartic {
        target: Vec<f64>,
        w: Vec<f64>,
    }

    impl EnergyFunctional for Quartic {
        fn energy(&self, x: &[f64]) -> f64 {
            x.iter()
                .zip(&self.target)
                .zip(&self.w)
                .map(|((xi, ti), wi)| {
                    let d = xi - ti;
                    wi * (0.25 * d.powi(4) + 0.5 * d * d)
                })
                .sum()
        }
        fn gradient(&self, x: &[f64], g: &mut [f64]) {
            for i in 0..x.len() {
                let d = x[i] - self.target[i];
                g[i] = self.w[i] * (d.powi(3) + d);
            }
        }
        fn masses(&self) -> &[f64] {
            &self.w
        }
    }

    #[test]
    fn quartic_converges_to_target() {
        let f = Quartic {
            target: (0..40).map(|i| (i as f64 * 0.3).sin()).collect(),
            w: (0..40).map(|i| 0.1 + 0.05 * i as f64).collect(),
        };
        let mut x = vec![0.0; 40];
        let trace = minimize(&f, &mut x, &DescentParams::new(1e-10, 5000)).unwrap();
        assert!(trace.converged);
        assert!(trace.monotone);
        for (xi, ti) in x.iter().zip(&f.target) {
            assert!((xi - ti).abs() < 1e-9);
        }
    }

    #[test]
    fn divergent_energy_is_reported() {
        struct Bad;
        impl EnergyFunctional for Bad {
            fn energy(&self, x: &[f64]) -> f64 {
                if x[0] > 0.5 {
                    f64::NAN
                } else {
                    -x[0]
                }
            }
            fn gradient(&self, _x: &[f64], g: &mut [f64]) {
                g[0] = -1.0;
            }
            fn masses(&self) -> &[f64] {
                &[1.0]
            }
        }
        let mut x = vec![1.0];
        // energy is NaN at the start: divergence, not convergence failure
        match minimize(&Bad, &mut x, &DescentParams::new(1e-8, 10)) {
            Err(NjError::Divergence { iteration }) => assert_eq!(iteration, 0),
            other => panic!("wanted divergence, got {other:?}"),
        }
    }

    #[test]
    fn max_iter_with_large_residual_errors() {
        let f = Quartic {
            target: vec![10.0; 4],
            w: vec![1.0; 4],
        };
        let mut x = vec![0.0; 4];
        match minimize(&f, &mut x, &DescentParams::new(1e-14, 2)) {
            Err(NjError::Convergence { iterations, .. }) => assert_eq!(iterations, 2),
            other => panic!("wanted convergence error, got {other:?}"),
        }
    }
}
