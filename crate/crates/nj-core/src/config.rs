//! Run configuration: one JSON document drives a whole batch run.
//!
//! The document names the potential, the sector grid, the descent
//! settings, the structure-analysis knobs, and the sweep radii.  Every
//! invariant that can be checked without running anything is checked at
//! load time, and file paths named by the document are resolved against
//! its own directory so a run can be launched from anywhere.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::disk::PolarGrid;
use crate::error::{NjError, Result};
use crate::potential::Potential;

fn default_fold() -> usize {
    1
}

/// The potential together with the domain fold `h`; the boundary twist
/// advances by one well orbit step per `1/(h n_sym)` turn.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PotentialBlock {
    #[serde(flatten)]
    pub potential: Potential,
    #[serde(default = "default_fold")]
    pub h: usize,
}

impl PotentialBlock {
    pub fn segments(&self) -> usize {
        self.h * self.potential.n_sym
    }
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct GridBlock {
    #[serde(rename = "R")]
    pub r: f64,
    pub n_r: usize,
    pub n_theta: usize,
}

/// Where descent starts from.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitKind {
    /// Comparison map woven from the stored 1D connection.
    #[default]
    Test,
    /// The fully symmetric zero state.
    Zero,
    /// Resume from a stored field file.
    File(PathBuf),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SolverBlock {
    pub tol: f64,
    pub max_iter: usize,
    #[serde(default)]
    pub init: InitKind,
}

#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct AnalysisBlock {
    /// Well ball radius.
    pub delta: f64,
    pub alpha: f64,
    pub alpha_prime: f64,
    /// Offset of the quadratic stage schedule; chosen automatically when
    /// absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c1: Option<u32>,
    /// Width-allowance coefficient; derived from the decay fit when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub c_tilde: Option<f64>,
    /// Angular confinement coefficient of the decay region; measured from
    /// the threaded curve when absent.
    #[serde(default, rename = "C_ring", skip_serializing_if = "Option::is_none")]
    pub c_ring: Option<f64>,
    /// Inner radius of the decay region; derived from the confinement
    /// floor when absent.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub r_ring: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SweepBlock {
    #[serde(rename = "R_list")]
    pub r_list: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RunConfig {
    pub potential: PotentialBlock,
    pub grid: GridBlock,
    pub solver: SolverBlock,
    pub analysis: AnalysisBlock,
    pub sweep: SweepBlock,
    /// Directory receiving every artifact of the run.
    pub output: PathBuf,
}

impl RunConfig {
    /// Parse and validate a JSON config file.  Relative paths inside the
    /// document are rewritten to be relative to the file's directory.
    pub fn load(path: &Path) -> Result<RunConfig> {
        let text = fs::read_to_string(path)
            .map_err(|e| NjError::Parameter(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig = serde_json::from_str(&text).map_err(|e| {
            NjError::Format(format!(
                "{} (line {}, column {})",
                e,
                e.line(),
                e.column()
            ))
        })?;
        let base = path.parent().unwrap_or_else(|| Path::new("."));
        cfg.anchor(base);
        cfg.validate()?;
        Ok(cfg)
    }

    /// Rewrite relative paths against `base`.
    pub fn anchor(&mut self, base: &Path) {
        if let InitKind::File(p) = &mut self.solver.init {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        if self.output.is_relative() {
            self.output = base.join(&self.output);
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.potential.potential.validate()?;
        if self.potential.h == 0 {
            return Err(NjError::Parameter("fold h must be at least 1".into()));
        }
        let segments = self.potential.segments();
        // The grid constructor owns the resolution and divisibility rules;
        // every swept radius must pass them too.
        PolarGrid::new(self.grid.r, self.grid.n_r, self.grid.n_theta, segments)?;
        for &r in &self.sweep.r_list {
            PolarGrid::new(r, self.grid.n_r, self.grid.n_theta, segments)?;
        }
        if self.sweep.r_list.is_empty() {
            return Err(NjError::Parameter("sweep R_list is empty".into()));
        }

        if !(self.solver.tol > 0.0 && self.solver.tol.is_finite()) {
            return Err(NjError::Parameter(format!(
                "solver tol must be positive, got {}",
                self.solver.tol
            )));
        }
        if self.solver.max_iter == 0 {
            return Err(NjError::Parameter("solver max_iter must be at least 1".into()));
        }
        if let InitKind::File(p) = &self.solver.init {
            if !p.is_file() {
                return Err(NjError::Parameter(format!(
                    "init field file not found: {}",
                    p.display()
                )));
            }
        }

        let a = &self.analysis;
        if !(a.delta > 0.0 && a.delta.is_finite()) {
            return Err(NjError::Parameter(format!(
                "delta must be positive, got {}",
                a.delta
            )));
        }
        for (name, v) in [("alpha", a.alpha), ("alpha_prime", a.alpha_prime)] {
            if !(v > 0.0 && v < 1.0) {
                return Err(NjError::Parameter(format!(
                    "{name} must lie in (0, 1), got {v}"
                )));
            }
        }
        if 2.0 * a.alpha + a.alpha_prime >= 1.0 {
            return Err(NjError::Parameter(format!(
                "exponents too large: 2*{} + {} must stay below 1",
                a.alpha, a.alpha_prime
            )));
        }
        if let Some(c) = a.c_tilde {
            if !(c > 0.0 && c.is_finite()) {
                return Err(NjError::Parameter(format!(
                    "c_tilde must be positive, got {c}"
                )));
            }
        }
        if let Some(c) = a.c_ring {
            if !(c >= 0.0 && c.is_finite()) {
                return Err(NjError::Parameter(format!(
                    "C_ring must be nonnegative, got {c}"
                )));
            }
        }
        if let Some(r) = a.r_ring {
            if !(r > 0.0 && r.is_finite()) {
                return Err(NjError::Parameter(format!(
                    "r_ring must be positive, got {r}"
                )));
            }
        }

        if self.output.as_os_str().is_empty() {
            return Err(NjError::Parameter("output directory is empty".into()));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn minimal_json() -> String {
        r#"{
            "potential": {"kind": "scalar-bistable", "m": 1, "n_sym": 2, "well_radius": 1.0, "h": 2},
            "grid": {"R": 20.0, "n_r": 64, "n_theta": 64},
            "solver": {"tol": 1e-5, "max_iter": 5000},
            "analysis": {"delta": 0.4, "alpha": 0.25, "alpha_prime": 0.25},
            "sweep": {"R_list": [20.0]},
            "output": "out"
        }"#
        .to_string()
    }

    fn write_config(dir: &Path, text: &str) -> PathBuf {
        let path = dir.join("run.json");
        let mut f = fs::File::create(&path).unwrap();
        f.write_all(text.as_bytes()).unwrap();
        path
    }

    #[test]
    fn minimal_document_loads_with_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &minimal_json());
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(cfg.solver.init, InitKind::Test);
        assert_eq!(cfg.potential.h, 2);
        assert_eq!(cfg.potential.segments(), 4);
        assert!(cfg.analysis.c_tilde.is_none());
        // Relative output paths anchor at the config's directory.
        assert_eq!(cfg.output, dir.path().join("out"));
    }

    #[test]
    fn round_trip_preserves_the_document() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), &minimal_json());
        let cfg = RunConfig::load(&path).unwrap();
        let json = serde_json::to_string_pretty(&cfg).unwrap();
        let again: RunConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(again.grid.n_theta, cfg.grid.n_theta);
        assert_eq!(again.sweep.r_list, cfg.sweep.r_list);
        assert_eq!(again.solver.init, cfg.solver.init);
        assert_eq!(again.potential.h, cfg.potential.h);
    }

    #[test]
    fn exponent_budget_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal_json().replace("\"alpha\": 0.25", "\"alpha\": 0.4");
        let path = write_config(dir.path(), &text);
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("below 1"), "{err}");
    }

    #[test]
    fn init_file_must_resolve_at_parse_time() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal_json().replace(
            "\"max_iter\": 5000",
            "\"max_iter\": 5000, \"init\": {\"file\": \"warm.bin\"}",
        );
        let path = write_config(dir.path(), &text);
        let err = RunConfig::load(&path).unwrap_err();
        assert!(err.to_string().contains("warm.bin"), "{err}");

        fs::write(dir.path().join("warm.bin"), b"stub").unwrap();
        let cfg = RunConfig::load(&path).unwrap();
        assert_eq!(
            cfg.solver.init,
            InitKind::File(dir.path().join("warm.bin"))
        );
    }

    #[test]
    fn malformed_json_reports_the_position() {
        let dir = tempfile::tempdir().unwrap();
        let path = write_config(dir.path(), "{\"potential\": ");
        let err = RunConfig::load(&path).unwrap_err();
        assert!(matches!(err, NjError::Format(_)));
        assert!(err.to_string().contains("line"), "{err}");
    }

    #[test]
    fn swept_radii_use_the_grid_rules() {
        let dir = tempfile::tempdir().unwrap();
        let text = minimal_json().replace("[20.0]", "[20.0, -5.0]");
        let path = write_config(dir.path(), &text);
        assert!(RunConfig::load(&path).is_err());
    }
}
