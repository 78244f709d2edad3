//! Pipeline stages behind the `nj` subcommands.
//!
//! Each stage is a plain function so the one-shot subcommands and the full
//! `run` driver share the same code paths and artifact formats.  `run`
//! records the first failing stage but keeps going, so a partial sweep
//! still leaves usable files behind.

use std::f64::consts::PI;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use nj_core::analysis::{
    self, DecayFit, InterfaceGraph, LipschitzReport, MinimalCurve, PointwiseReport, SigmaSet,
    ThetaMap, TransverseTable,
};
use nj_core::config::{InitKind, RunConfig};
use nj_core::disk::{
    build_test_function, gauge_fix, minimize_disk, radial_kinetic, total_energy,
    EquivariantField, PolarGrid, SolveReport,
};
use nj_core::error::{NjError, Result};
use nj_core::fiber::{
    expected_gap_rate, fiber_gap, gap_rate, AnalysisParams, FiberContext, FiberSweepRow,
};
use nj_core::field_io::{load_field, save_field, FieldMeta};
use nj_core::heteroclinic::{solve_heteroclinic, HeteroclinicProfile};
use nj_core::potential::{estimate_constants, Potential, PotentialConstants};

/// The line solve is cheap, so it always runs at least this tight no matter
/// how loose the disk tolerance is.
const HETERO_TOL: f64 = 1e-6;
/// Arc length between ring samples in a radius sweep.
const FIBER_DS: f64 = 0.05;
/// Probe ball radius for the pointwise well bound, in grid cells.
const PROBE_CELLS: f64 = 6.0;
/// Probe centers per analyzed field.
const PROBE_SAMPLES: usize = 200;
/// Rungs in the automatic fiber ladder used by `run`.
const SWEEP_RUNGS: usize = 16;

/// A stage name together with what went wrong there, for the final
/// diagnostic line and the process exit code.
pub struct StageFailure {
    pub stage: String,
    pub error: NjError,
}

impl StageFailure {
    pub fn new(stage: impl Into<String>, error: NjError) -> StageFailure {
        StageFailure {
            stage: stage.into(),
            error,
        }
    }
}

/// Everything the stages share: the validated configuration, the line
/// connection, and the measurement windows derived from it.
pub struct Toolkit {
    pub cfg: RunConfig,
    pub potential: Potential,
    pub constants: PotentialConstants,
    pub profile: HeteroclinicProfile,
    /// Energy of the line connection.
    pub sigma: f64,
    pub params: AnalysisParams,
}

impl Toolkit {
    /// Solve the connection on an automatically sized line domain.
    pub fn prepare(cfg: RunConfig) -> Result<Toolkit> {
        let constants = estimate_constants(&cfg.potential.potential, &[], 256)?;
        // long enough that the pinned tails sit below the solver tolerance
        let half = (16.0 / constants.c_lo).max(8.0);
        let nodes = ((2.0 * half / 0.01).ceil() as usize).max(400);
        Toolkit::assemble(cfg, constants, half, nodes)
    }

    /// Same, with an explicit line domain.
    pub fn prepare_with(cfg: RunConfig, half_length: f64, nodes: usize) -> Result<Toolkit> {
        let constants = estimate_constants(&cfg.potential.potential, &[], 256)?;
        Toolkit::assemble(cfg, constants, half_length, nodes)
    }

    fn assemble(
        cfg: RunConfig,
        constants: PotentialConstants,
        half_length: f64,
        nodes: usize,
    ) -> Result<Toolkit> {
        let potential = cfg.potential.potential.clone();
        let tol = cfg.solver.tol.min(HETERO_TOL);
        let profile = solve_heteroclinic(&potential, half_length, nodes, tol)?;
        let sigma = profile.action;
        let params = AnalysisParams::derive(
            &potential,
            &constants,
            sigma,
            cfg.potential.h,
            cfg.analysis.delta,
            cfg.analysis.alpha,
            cfg.analysis.alpha_prime,
        )?;
        Ok(Toolkit {
            cfg,
            potential,
            constants,
            profile,
            sigma,
            params,
        })
    }

    pub fn segments(&self) -> usize {
        self.cfg.potential.segments()
    }

    pub fn meta(&self) -> FieldMeta {
        FieldMeta {
            m: self.potential.m,
            n_sym: self.potential.n_sym,
            h: self.cfg.potential.h,
        }
    }
}

pub fn cmd_hetero(config: &Path, out: &Path, half_length: f64, nodes: usize) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let tk = Toolkit::prepare_with(cfg, half_length, nodes)?;
    write_profile(out, &tk)?;
    println!(
        "connection energy {:.9}, equipartition residual {:.3e}, tail rate {:.4}",
        tk.sigma, tk.profile.equipartition_residual, tk.profile.tail_rate
    );
    Ok(())
}

pub fn cmd_fiber(config: &Path, spec: &str, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let radii = parse_radii(spec)?;
    let tk = Toolkit::prepare(cfg)?;
    let ctx = FiberContext::with_parts(
        tk.potential.clone(),
        tk.cfg.potential.h,
        tk.profile.clone(),
        tk.constants,
    )?;
    let rows = fiber_gap(&ctx, &tk.params, &radii, FIBER_DS, tk.cfg.solver.tol)?;
    write_fibers(out, &rows)?;
    match gap_rate(&rows) {
        Some(fit) => println!(
            "{} radii; gap rate {:.4} from {} positive rows (curvature reference {:.4})",
            rows.len(),
            fit.rate,
            fit.used,
            expected_gap_rate(&ctx)
        ),
        None => println!(
            "{} radii; too few positive gaps for a rate fit (curvature reference {:.4})",
            rows.len(),
            expected_gap_rate(&ctx)
        ),
    }
    Ok(())
}

pub fn cmd_disk(config: &Path, radius: Option<f64>, init: Option<&str>, out: &Path) -> Result<()> {
    let mut cfg = RunConfig::load(config)?;
    if let Some(r) = radius {
        cfg.grid.r = r;
    }
    let init_kind = match init {
        None => cfg.solver.init.clone(),
        Some(s) => parse_init(s)?,
    };
    let tk = Toolkit::prepare(cfg)?;
    let (field, report) = solve_disk(&tk, tk.cfg.grid.r, &init_kind)?;
    save_field(out, &field, tk.meta())?;
    println!(
        "R {}: energy {:.9}, residual {:.3e}, {} iterations, {:.1}s",
        tk.cfg.grid.r, report.energy, report.residual, report.iterations, report.wall_seconds
    );
    Ok(())
}

pub fn cmd_analyze(field_path: &Path, config: &Path, out: &Path) -> Result<()> {
    let cfg = RunConfig::load(config)?;
    let (field, meta) = load_field(field_path)?;
    let tk = Toolkit::prepare(cfg)?;
    if meta != tk.meta() {
        return Err(NjError::Parameter(format!(
            "field symmetry ({}, {}, {}) does not match the configuration ({}, {}, {})",
            meta.m,
            meta.n_sym,
            meta.h,
            tk.meta().m,
            tk.meta().n_sym,
            tk.meta().h
        )));
    }
    let mut outcome = analyze_field(&tk, &field)?;
    write_analysis(out, None, &tk, &outcome, None)?;
    println!("{}", outcome.summary_line());
    if outcome.failures.is_empty() {
        Ok(())
    } else {
        Err(outcome.failures.remove(0))
    }
}

pub fn cmd_run(config: &Path) -> std::result::Result<(), StageFailure> {
    let cfg = RunConfig::load(config).map_err(|e| StageFailure::new("config", e))?;
    let out_dir = cfg.output.clone();
    fs::create_dir_all(&out_dir).map_err(|e| StageFailure::new("setup", e.into()))?;

    let tk = Toolkit::prepare(cfg).map_err(|e| StageFailure::new("hetero", e))?;
    write_profile(&out_dir.join("profile.csv"), &tk)
        .map_err(|e| StageFailure::new("hetero", e))?;
    println!(
        "hetero: energy {:.9}, residual {:.2e}",
        tk.sigma, tk.profile.equipartition_residual
    );

    let ctx = FiberContext::with_parts(
        tk.potential.clone(),
        tk.cfg.potential.h,
        tk.profile.clone(),
        tk.constants,
    )
    .map_err(|e| StageFailure::new("fiber", e))?;
    let r_max = tk.cfg.sweep.r_list.iter().cloned().fold(0.0, f64::max);
    match fiber_ladder(ctx.r_bar, r_max) {
        Some(radii) => {
            let rows = fiber_gap(&ctx, &tk.params, &radii, FIBER_DS, tk.cfg.solver.tol)
                .map_err(|e| StageFailure::new("fiber", e))?;
            write_fibers(&out_dir.join("fibers.csv"), &rows)
                .map_err(|e| StageFailure::new("fiber", e))?;
            println!("fiber: {} radii into fibers.csv", rows.len());
        }
        None => {
            write_fibers(&out_dir.join("fibers.csv"), &[])
                .map_err(|e| StageFailure::new("fiber", e))?;
            println!("fiber: sweep skipped, every disk sits inside the core radius");
        }
    }

    let mut first: Option<StageFailure> = None;
    let mut summary: Vec<SummaryRow> = Vec::new();
    for &r in &tk.cfg.sweep.r_list {
        let tag = format!("{r}");
        let stage_disk = format!("disk R={tag}");
        let (field, report) = match solve_disk(&tk, r, &tk.cfg.solver.init) {
            Ok(pair) => pair,
            Err(e) => {
                note(&mut first, &stage_disk, e);
                continue;
            }
        };
        if let Err(e) = save_field(&out_dir.join(format!("field_R{tag}.bin")), &field, tk.meta())
        {
            note(&mut first, &stage_disk, e);
            continue;
        }
        println!(
            "{stage_disk}: energy {:.6} after {} iterations",
            report.energy, report.iterations
        );
        let stage_an = format!("analyze R={tag}");
        let mut outcome = match analyze_field(&tk, &field) {
            Ok(o) => o,
            Err(e) => {
                note(&mut first, &stage_an, e);
                continue;
            }
        };
        summary.push(SummaryRow {
            radius: r,
            energy: outcome.energy,
            reference: tk.segments() as f64 * tk.sigma * r,
            sigma_measure: outcome.sigma_set.measure,
            length_excess: outcome.length_excess,
            decay_rate: outcome.decay.as_ref().map(|d| d.rate),
        });
        let report_path = out_dir.join(format!("report_R{tag}.json"));
        if let Err(e) = write_analysis(&report_path, Some(&tag), &tk, &outcome, Some(&report)) {
            note(&mut first, &stage_an, e);
            continue;
        }
        println!("{stage_an}: {}", outcome.summary_line());
        for e in outcome.failures.drain(..) {
            note(&mut first, &stage_an, e);
        }
    }

    if let Err(e) = write_summary(&out_dir.join("summary.csv"), &summary) {
        note(&mut first, "summary", e);
    }
    match first {
        None => Ok(()),
        Some(f) => Err(f),
    }
}

/// Record the first failure for the exit status and report every one.
fn note(first: &mut Option<StageFailure>, stage: &str, error: NjError) {
    eprintln!("nj: continuing past stage {stage}: {error}");
    if first.is_none() {
        *first = Some(StageFailure::new(stage, error));
    }
}

/// Sweep radii for `run`: a geometric ladder from just outside the core
/// radius up to the largest disk.  `None` when no disk pokes past the core.
fn fiber_ladder(r_bar: f64, r_max: f64) -> Option<Vec<f64>> {
    let lo = (1.05 * r_bar).max(0.75);
    if !(r_max > lo) {
        return None;
    }
    let mut radii: Vec<f64> = (0..SWEEP_RUNGS)
        .map(|k| lo * (r_max / lo).powf(k as f64 / (SWEEP_RUNGS - 1) as f64))
        .collect();
    radii.dedup_by(|b, a| *b <= *a * (1.0 + 1e-9));
    Some(radii)
}

fn parse_radii(spec: &str) -> Result<Vec<f64>> {
    let parse = |tok: &str| -> Result<f64> {
        tok.trim()
            .parse::<f64>()
            .map_err(|_| NjError::Parameter(format!("bad radius {tok:?} in {spec:?}")))
    };
    let mut radii = Vec::new();
    if spec.contains(':') {
        let parts: Vec<&str> = spec.split(':').collect();
        if parts.len() != 3 {
            return Err(NjError::Parameter(format!(
                "radius ranges are start:end:step, got {spec:?}"
            )));
        }
        let (start, end, step) = (parse(parts[0])?, parse(parts[1])?, parse(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(NjError::Parameter(format!(
                "radius range {spec:?} must step forward"
            )));
        }
        let mut k = 0usize;
        loop {
            let r = start + k as f64 * step;
            if r > end * (1.0 + 1e-12) {
                break;
            }
            radii.push(r);
            k += 1;
        }
    } else {
        for tok in spec.split(',') {
            radii.push(parse(tok)?);
        }
    }
    if radii.is_empty() {
        return Err(NjError::Parameter(format!("no radii in {spec:?}")));
    }
    if !radii.windows(2).all(|w| w[0] < w[1]) {
        return Err(NjError::Parameter(
            "radii must be strictly increasing".into(),
        ));
    }
    Ok(radii)
}

fn parse_init(s: &str) -> Result<InitKind> {
    match s {
        "test" => Ok(InitKind::Test),
        "zero" => Ok(InitKind::Zero),
        _ => match s.strip_prefix("file:") {
            Some(path) if !path.is_empty() => Ok(InitKind::File(PathBuf::from(path))),
            _ => Err(NjError::Parameter(format!(
                "starting guess must be test, zero, or file:PATH, got {s:?}"
            ))),
        },
    }
}

/// Build the starting guess and minimize on a grid with the configured
/// resolution at the requested radius.
pub fn solve_disk(
    tk: &Toolkit,
    radius: f64,
    init: &InitKind,
) -> Result<(EquivariantField, SolveReport)> {
    let grid = PolarGrid::new(radius, tk.cfg.grid.n_r, tk.cfg.grid.n_theta, tk.segments())?;
    let start = match init {
        InitKind::Test => build_test_function(&tk.potential, &tk.profile, grid)?,
        InitKind::Zero => EquivariantField::zero(grid),
        InitKind::File(path) => {
            let (stored, meta) = load_field(path)?;
            if meta != tk.meta() {
                return Err(NjError::Parameter(format!(
                    "stored field symmetry ({}, {}, {}) does not match the run",
                    meta.m, meta.n_sym, meta.h
                )));
            }
            resample(&tk.potential, &stored, grid)
        }
    };
    minimize_disk(
        &tk.potential,
        grid,
        &start,
        tk.cfg.solver.tol,
        tk.cfg.solver.max_iter,
    )
}

/// Transfer a stored field onto the target grid.  A matching grid copies
/// nodes exactly; anything else interpolates, so a coarse solve can
/// warm-start a finer one.
fn resample(p: &Potential, stored: &EquivariantField, grid: PolarGrid) -> EquivariantField {
    if stored.grid == grid {
        return stored.clone();
    }
    let om = p.omega();
    let mut out = EquivariantField::zero(grid);
    for i in 0..grid.n_r {
        for j in 0..grid.n_theta {
            out.set(i, j, stored.sample(om, grid.radius(i), grid.theta(j)));
        }
    }
    out
}

/// Everything the structure pass measured on one field, with soft failures
/// kept alongside the pieces that did come out.
pub struct AnalysisOutcome {
    pub radius: f64,
    pub energy: f64,
    pub kinetic_radial: f64,
    /// Sector rotation applied before measuring, when one was found.
    pub theta_gauge: Option<f64>,
    pub sigma_set: SigmaSet,
    pub theta: ThetaMap,
    pub lipschitz: LipschitzReport,
    pub c_tilde: f64,
    pub interface: Option<InterfaceGraph>,
    pub interface_error: Option<String>,
    pub curve: Option<MinimalCurve>,
    pub curve_error: Option<String>,
    pub gamma_length: Option<f64>,
    pub length_excess: Option<f64>,
    pub confinement: Option<f64>,
    pub transverse: Option<TransverseTable>,
    pub transverse_error: Option<String>,
    pub decay: Option<DecayFit>,
    pub decay_error: Option<String>,
    pub pointwise: Option<PointwiseReport>,
    pub pointwise_error: Option<String>,
    /// Errors behind the `*_error` strings, in report order.
    pub failures: Vec<NjError>,
}

impl AnalysisOutcome {
    pub fn summary_line(&self) -> String {
        let mut s = format!(
            "sigma measure {:.4} over {} rings ({} flagged)",
            self.sigma_set.measure,
            self.sigma_set.radii.len(),
            self.sigma_set.flagged_count()
        );
        if let Some(l) = self.gamma_length {
            s.push_str(&format!(", curve length {l:.4}"));
        }
        if let Some(d) = &self.decay {
            s.push_str(&format!(", tail rate {:.4}", d.rate));
        }
        if !self.failures.is_empty() {
            s.push_str(&format!(", {} measurement(s) unavailable", self.failures.len()));
        }
        s
    }
}

/// Run the full structure pass on a converged field.
pub fn analyze_field(tk: &Toolkit, raw: &EquivariantField) -> Result<AnalysisOutcome> {
    let p = &tk.potential;
    let params = &tk.params;

    // Rotate the sector so the outermost structured transition sits at the
    // midline; every later window is centered there.  A field with no
    // structured fiber at all just stays put.
    let (field, theta_gauge) = match gauge_fix(p, raw, params) {
        Ok(gf) => (gf.field, Some(gf.theta_r)),
        Err(_) => (raw.clone(), None),
    };

    let energy = total_energy(p, &field)?;
    let kinetic_radial = radial_kinetic(&field);
    let sigma_set = analysis::detect_sigma(p, &field, params)?;
    let theta = analysis::theta_map(&field, &sigma_set, params);
    let c_hat = analysis::lipschitz_constant(p, &field, params);
    let lipschitz = analysis::lipschitz_violations(&theta, params, c_hat);

    let mut failures: Vec<NjError> = Vec::new();
    let cfga = &tk.cfg.analysis;

    // Tail fit first: the corridor slack needs a decay scale when the
    // configuration does not pin one.
    let mut decay = None;
    let mut decay_failure: Option<NjError> = None;
    let ring0 = cfga.r_ring.unwrap_or(params.r_delta);
    let cring0 = cfga.c_ring.unwrap_or(1.0);
    match analysis::decay_fit(p, &field, ring0, cring0) {
        Ok(f) => decay = Some(f),
        Err(e) => decay_failure = Some(e),
    }

    let c_tilde = cfga.c_tilde.unwrap_or_else(|| {
        decay
            .as_ref()
            .map_or(2.0, |d| (2.0 / d.rate.max(0.05)).clamp(0.2, 40.0))
    });

    let (interface, interface_error) =
        match analysis::build_interface(p, &field, &theta, &sigma_set, params, cfga.c1, c_tilde) {
            Ok(g) => (Some(g), None),
            Err(e) => {
                let msg = e.to_string();
                failures.push(e);
                (None, Some(msg))
            }
        };

    let mut curve = None;
    let mut curve_error = None;
    if let Some(g) = &interface {
        match analysis::minimal_curve(g) {
            Ok(c) => curve = Some(c),
            Err(e) => {
                curve_error = Some(e.to_string());
                failures.push(e);
            }
        }
    }
    let gamma_length = curve.as_ref().map(|c| c.length);
    let length_excess = curve
        .as_ref()
        .map(|c| analysis::length_excess(c, field.grid.outer_radius));
    let confinement = curve.as_ref().map(|c| c.angular_confinement());

    // Second tail fit: a computed curve pins the excluded cone, replacing
    // the placeholder width.
    if cfga.c_ring.is_none() {
        if let Some(spread) = confinement {
            if spread.is_finite() {
                let cring = spread.max(0.05);
                let floor = (cring * field.grid.segments as f64 / PI).powi(2);
                let ring = cfga
                    .r_ring
                    .unwrap_or(params.r_delta)
                    .max(floor * (1.0 + 1e-9));
                match analysis::decay_fit(p, &field, ring, cring) {
                    Ok(f) => {
                        decay = Some(f);
                        decay_failure = None;
                    }
                    Err(e) => {
                        if decay.is_none() && decay_failure.is_none() {
                            decay_failure = Some(e);
                        }
                    }
                }
            }
        }
    }
    let decay_error = decay_failure.as_ref().map(|e| e.to_string());
    if let Some(e) = decay_failure {
        failures.push(e);
    }

    let mut transverse = None;
    let mut transverse_error = None;
    if let (Some(c), Some(g)) = (&curve, &interface) {
        match analysis::transverse_profile(p, &field, c, g, params, tk.sigma, tk.constants.c_hi) {
            Ok(t) => transverse = Some(t),
            Err(e) => {
                transverse_error = Some(e.to_string());
                failures.push(e);
            }
        }
    }

    let mut pointwise = None;
    let mut pointwise_error = None;
    let l = PROBE_CELLS * field.grid.dr();
    match analysis::pointwise_check(p, &field, &sigma_set, params, l, PROBE_SAMPLES) {
        Ok(rep) => pointwise = Some(rep),
        Err(e) => {
            pointwise_error = Some(e.to_string());
            failures.push(e);
        }
    }

    Ok(AnalysisOutcome {
        radius: field.grid.outer_radius,
        energy,
        kinetic_radial,
        theta_gauge,
        sigma_set,
        theta,
        lipschitz,
        c_tilde,
        interface,
        interface_error,
        curve,
        curve_error,
        gamma_length,
        length_excess,
        confinement,
        transverse,
        transverse_error,
        decay,
        decay_error,
        pointwise,
        pointwise_error,
        failures,
    })
}

/// What `interface.json` holds.
#[derive(Deserialize)]
pub struct InterfaceDoc {
    pub interface: InterfaceGraph,
    #[serde(default)]
    pub curve: Option<MinimalCurve>,
}

#[derive(Serialize)]
struct InterfaceDocRef<'a> {
    interface: &'a InterfaceGraph,
    curve: Option<&'a MinimalCurve>,
}

#[derive(Serialize)]
struct SolveJson {
    energy: f64,
    residual: f64,
    iterations: usize,
    wall_seconds: f64,
    monotone: bool,
}

#[derive(Serialize)]
struct DecayJson {
    #[serde(rename = "K")]
    amplitude: f64,
    k: f64,
    rms: f64,
    nodes: usize,
    r_ring: f64,
    #[serde(rename = "C_ring")]
    c_ring: f64,
}

#[derive(Serialize)]
struct TransverseJson {
    integral: f64,
    sections: usize,
    skipped: usize,
    bounded_rows: usize,
}

#[derive(Serialize)]
struct PointwiseJson<'a> {
    tested: usize,
    hypothesis_held: usize,
    violations: &'a [(f64, f64, f64)],
}

#[derive(Serialize)]
struct ReportJson<'a> {
    radius: f64,
    segments: usize,
    /// Energy of the line connection underlying all references.
    sigma_line: f64,
    energy: f64,
    radial_kinetic: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    solve: Option<SolveJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    theta_gauge: Option<f64>,
    sigma_measure: f64,
    flagged_rings: usize,
    structured_rings: usize,
    lipschitz: &'a LipschitzReport,
    c_tilde: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    gamma_length: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    length_excess: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    angular_confinement: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    interface_error: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    curve_error: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transverse: Option<TransverseJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    transverse_error: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay: Option<DecayJson>,
    #[serde(skip_serializing_if = "Option::is_none")]
    decay_error: Option<&'a str>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pointwise: Option<PointwiseJson<'a>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pointwise_error: Option<&'a str>,
}

/// Write `report.json` plus the `theta_map` and `interface` side files.
/// `tag` distinguishes sweep entries (`report_R40.json` next to
/// `theta_map_R40.csv`); without it the side files get the plain names.
pub fn write_analysis(
    report_path: &Path,
    tag: Option<&str>,
    tk: &Toolkit,
    outcome: &AnalysisOutcome,
    solve: Option<&SolveReport>,
) -> Result<()> {
    let dir = report_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_default();
    write_theta_csv(&dir.join(side_name("theta_map", "csv", tag)), &outcome.theta)?;
    if let Some(g) = &outcome.interface {
        let doc = InterfaceDocRef {
            interface: g,
            curve: outcome.curve.as_ref(),
        };
        write_json(&dir.join(side_name("interface", "json", tag)), &doc)?;
    }
    let report = ReportJson {
        radius: outcome.radius,
        segments: tk.segments(),
        sigma_line: tk.sigma,
        energy: outcome.energy,
        radial_kinetic: outcome.kinetic_radial,
        solve: solve.map(|s| SolveJson {
            energy: s.energy,
            residual: s.residual,
            iterations: s.iterations,
            wall_seconds: s.wall_seconds,
            monotone: s.monotone,
        }),
        theta_gauge: outcome.theta_gauge,
        sigma_measure: outcome.sigma_set.measure,
        flagged_rings: outcome.sigma_set.flagged_count(),
        structured_rings: outcome.sigma_set.radii.len() - outcome.sigma_set.flagged_count(),
        lipschitz: &outcome.lipschitz,
        c_tilde: outcome.c_tilde,
        gamma_length: outcome.gamma_length,
        length_excess: outcome.length_excess,
        angular_confinement: outcome.confinement,
        interface_error: outcome.interface_error.as_deref(),
        curve_error: outcome.curve_error.as_deref(),
        transverse: outcome.transverse.as_ref().map(|t| TransverseJson {
            integral: t.integral,
            sections: t.rows.len(),
            skipped: t.skipped,
            bounded_rows: t.bounded_rows,
        }),
        transverse_error: outcome.transverse_error.as_deref(),
        decay: outcome.decay.as_ref().map(|d| DecayJson {
            amplitude: d.amplitude,
            k: d.rate,
            rms: d.rms,
            nodes: d.nodes_used,
            r_ring: d.r_ring,
            c_ring: d.c_ring,
        }),
        decay_error: outcome.decay_error.as_deref(),
        pointwise: outcome.pointwise.as_ref().map(|p| PointwiseJson {
            tested: p.tested,
            hypothesis_held: p.hypothesis_held,
            violations: &p.violations,
        }),
        pointwise_error: outcome.pointwise_error.as_deref(),
    };
    write_json(report_path, &report)
}

fn side_name(base: &str, ext: &str, tag: Option<&str>) -> String {
    match tag {
        Some(t) => format!("{base}_R{t}.{ext}"),
        None => format!("{base}.{ext}"),
    }
}

struct SummaryRow {
    radius: f64,
    energy: f64,
    /// Flat per-transition reference at this radius.
    reference: f64,
    sigma_measure: f64,
    length_excess: Option<f64>,
    decay_rate: Option<f64>,
}

fn write_summary(path: &Path, rows: &[SummaryRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["R", "J", "NsigmaR", "sigma_measure", "length_excess", "k"])
        .map_err(csv_err)?;
    for row in rows {
        w.write_record([
            fmt(row.radius),
            fmt(row.energy),
            fmt(row.reference),
            fmt(row.sigma_measure),
            row.length_excess.map(fmt).unwrap_or_default(),
            row.decay_rate.map(fmt).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_profile(path: &Path, tk: &Toolkit) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["s", "u1", "u2"]).map_err(csv_err)?;
    let scalar = tk.potential.m == 1;
    for (i, u) in tk.profile.samples.iter().enumerate() {
        let u2 = if scalar { String::new() } else { fmt(u.y) };
        w.write_record([fmt(tk.profile.node_s(i)), fmt(u.x), u2])
            .map_err(csv_err)?;
    }
    w.flush()?;
    let sidecar = serde_json::json!({
        "sigma": tk.sigma,
        "residual": tk.profile.equipartition_residual,
        "tail_rate": tk.profile.tail_rate,
    });
    write_json(&path.with_extension("json"), &sidecar)
}

fn write_fibers(path: &Path, rows: &[FiberSweepRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["r", "J_r", "gap", "class", "theta_r", "s_transition"])
        .map_err(csv_err)?;
    for row in rows {
        w.write_record([
            fmt(row.radius),
            fmt(row.energy),
            fmt(row.gap),
            row.class.tag().to_string(),
            row.class.theta_r().map(fmt).unwrap_or_default(),
            row.class.s_transition().map(fmt).unwrap_or_default(),
        ])
        .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_theta_csv(path: &Path, tm: &ThetaMap) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(csv_err)?;
    w.write_record(["r", "theta", "bracket"]).map_err(csv_err)?;
    for e in &tm.entries {
        w.write_record([fmt(e.r), fmt(e.theta), fmt(e.bracket)])
            .map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| NjError::Format(format!("json encode: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn csv_err(e: csv::Error) -> NjError {
    NjError::Format(format!("csv write: {e}"))
}

/// Shortest decimal that round-trips, keeping the CSV artifacts exact.
fn fmt(x: f64) -> String {
    format!("{x}")
}
