//! Deterministic SVG pictures of stored fields and interface descriptions.
//!
//! Field pictures tile the disk with annular wedges colored by the nearest
//! well and overlay the level curve where the distance to the nearest well
//! crosses the plateau radius.  Interface pictures draw the staged corridor
//! cells with their marker points and the chained minimal curve.  Output
//! depends only on the input bytes: no timestamps, no generated ids.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use nj_core::analysis::InterfaceCell;
use nj_core::config::RunConfig;
use nj_core::disk::EquivariantField;
use nj_core::error::{NjError, Result};
use nj_core::field_io::load_field;
use nj_core::geometry::Vec2;

use crate::pipeline::{InterfaceDoc, Toolkit};

/// Colors for up to eight wells; longer orbits wrap around.
const PALETTE: [&str; 8] = [
    "#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#b07aa1", "#edc949", "#76b7b2", "#ff9da7",
];
const CURVE_COLOR: &str = "#d62728";
const GHOST_CURVE_COLOR: &str = "#f1b3ae";
/// Margin between the disk and the image border, as a fraction of the
/// half-width.
const PAD_FRACTION: f64 = 0.05;

pub fn cmd_render(input: &Path, out: &Path, config: Option<&Path>, width: u32) -> Result<()> {
    if width < 64 {
        return Err(NjError::Parameter(format!(
            "image width {width} is below the 64 pixel minimum"
        )));
    }
    let ext = input.extension().and_then(|e| e.to_str()).unwrap_or("");
    let svg = if ext.eq_ignore_ascii_case("json") {
        let text = fs::read_to_string(input)?;
        let doc = parse_interface(&text)?;
        render_interface(&doc, width)
    } else {
        let cfg_path = config.ok_or_else(|| {
            NjError::Parameter("field pictures need --config to identify the wells".into())
        })?;
        let cfg = RunConfig::load(cfg_path)?;
        let (field, meta) = load_field(input)?;
        if meta.m != cfg.potential.potential.m
            || meta.n_sym != cfg.potential.potential.n_sym
            || meta.h != cfg.potential.h
        {
            return Err(NjError::Parameter(format!(
                "field symmetry ({}, {}, {}) does not match the configuration",
                meta.m, meta.n_sym, meta.h
            )));
        }
        let tk = Toolkit::prepare(cfg)?;
        render_field(&tk, &field, width)
    };
    fs::write(out, svg)?;
    Ok(())
}

fn parse_interface(text: &str) -> Result<InterfaceDoc> {
    serde_json::from_str(text).map_err(|e| {
        let off = byte_offset(text, e.line(), e.column());
        NjError::Format(format!("interface description: {e} (byte {off})"))
    })
}

/// serde_json reports 1-based line and column; convert to a byte offset.
fn byte_offset(text: &str, line: usize, column: usize) -> usize {
    let mut start = 0;
    for (idx, l) in text.split('\n').enumerate() {
        if idx + 1 == line {
            return (start + column.saturating_sub(1)).min(text.len());
        }
        start += l.len() + 1;
    }
    text.len()
}

/// Square viewport centered on the origin, `world_radius` from center to
/// the padded border, y up.
struct Canvas {
    body: String,
    scale: f64,
    center: f64,
    width: u32,
}

impl Canvas {
    fn new(width: u32, world_radius: f64) -> Canvas {
        let half = f64::from(width) / 2.0;
        Canvas {
            body: String::new(),
            scale: half * (1.0 - PAD_FRACTION) / world_radius,
            center: half,
            width,
        }
    }

    fn map(&self, p: Vec2) -> (f64, f64) {
        (
            self.center + self.scale * p.x,
            self.center - self.scale * p.y,
        )
    }

    fn px(&self, v: f64) -> f64 {
        self.scale * v
    }

    fn point(&self, p: Vec2) -> String {
        let (x, y) = self.map(p);
        format!("{x:.2} {y:.2}")
    }

    fn circle(&mut self, center: Vec2, world_r: f64, style: &str) {
        let (x, y) = self.map(center);
        let r = self.px(world_r);
        let _ = writeln!(
            self.body,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{r:.2}\" {style}/>"
        );
    }

    fn dot(&mut self, p: Vec2, px_r: f64, style: &str) {
        let (x, y) = self.map(p);
        let _ = writeln!(
            self.body,
            "<circle cx=\"{x:.2}\" cy=\"{y:.2}\" r=\"{px_r:.1}\" {style}/>"
        );
    }

    fn finish(self) -> String {
        format!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{w}\" viewBox=\"0 0 {w} {w}\">\n{}</svg>\n",
            self.body,
            w = self.width
        )
    }
}

/// `A` command from `(r, a0)` to `(r, a1)` along the circle, `a1 > a0`.
fn arc_to(c: &Canvas, r: f64, a0: f64, a1: f64, sweep_back: bool) -> String {
    let large = if (a1 - a0).abs() > std::f64::consts::PI {
        1
    } else {
        0
    };
    let sweep = if sweep_back { 1 } else { 0 };
    let end = if sweep_back {
        Vec2::from_polar(r, a0)
    } else {
        Vec2::from_polar(r, a1)
    };
    let rr = c.px(r);
    format!("A{rr:.2} {rr:.2} 0 {large} {sweep} {}", c.point(end))
}

fn render_field(tk: &Toolkit, field: &EquivariantField, width: u32) -> String {
    let grid = field.grid;
    let om = tk.potential.omega();
    let wells = tk.potential.wells();
    let n_wells = wells.wells.len();
    let total = grid.segments * grid.n_theta;
    let dth = grid.dtheta();
    let dr = grid.dr();
    let level = tk.params.delta_prime;

    // Nearest well index and distance at every node of the full circle.
    let mut color = vec![0usize; grid.n_r * total];
    let mut dist = vec![0.0f64; grid.n_r * total];
    for i in 0..grid.n_r {
        for jj in 0..total {
            let (k, d) = wells.nearest(field.fetch(i, jj as i64, om));
            color[i * total + jj] = k % PALETTE.len().min(n_wells.max(1));
            dist[i * total + jj] = d;
        }
    }

    let mut c = Canvas::new(width, grid.outer_radius);
    let mut style = String::from("<style>");
    for (k, col) in PALETTE.iter().enumerate().take(n_wells.min(PALETTE.len())) {
        // stroke in the fill color hides hairline antialiasing seams
        let _ = write!(
            style,
            ".w{k}{{fill:{col};stroke:{col};stroke-width:0.5}}"
        );
    }
    style.push_str("</style>\n");
    c.body.push_str(&style);

    for i in 0..grid.n_r {
        let r_lo = (grid.radius(i) - 0.5 * dr).max(0.0);
        let r_hi = (grid.radius(i) + 0.5 * dr).min(grid.outer_radius);
        // merge equal-color runs around the circle, folding the seam
        let mut runs: Vec<(isize, usize, usize)> = Vec::new();
        for jj in 0..total {
            let col = color[i * total + jj];
            match runs.last_mut() {
                Some((_, len, k)) if *k == col => *len += 1,
                _ => runs.push((jj as isize, 1, col)),
            }
        }
        if runs.len() > 1 {
            let first_color = runs[0].2;
            let last = *runs.last().unwrap();
            if last.2 == first_color && last.0 as usize + last.1 == total {
                runs.pop();
                runs[0].0 = last.0 - total as isize;
                runs[0].1 += last.1;
            }
        }
        let mut spans: Vec<(f64, f64, usize)> = Vec::new();
        for (start, len, col) in runs {
            let a0 = (start as f64 - 0.5) * dth;
            let a1 = (start as f64 + len as f64 - 0.5) * dth;
            if len == total {
                let mid = 0.5 * (a0 + a1);
                spans.push((a0, mid, col));
                spans.push((mid, a1, col));
            } else {
                spans.push((a0, a1, col));
            }
        }
        for (a0, a1, col) in spans {
            let mut d = format!("M{}", c.point(Vec2::from_polar(r_lo, a0)));
            let _ = write!(
                d,
                "L{}{}",
                c.point(Vec2::from_polar(r_hi, a0)),
                arc_to(&c, r_hi, a0, a1, false)
            );
            if r_lo > 1e-12 {
                let _ = write!(
                    d,
                    "L{}{}",
                    c.point(Vec2::from_polar(r_lo, a1)),
                    arc_to(&c, r_lo, a0, a1, true)
                );
            }
            d.push('Z');
            let _ = writeln!(c.body, "<path class=\"w{col}\" d=\"{d}\"/>");
        }
    }

    // level curve of the distance to the nearest well
    let contour = contour_path(&c, grid, total, dth, &dist, level);
    if !contour.is_empty() {
        let _ = writeln!(
            c.body,
            "<path d=\"{contour}\" fill=\"none\" stroke=\"#111111\" stroke-width=\"1.2\"/>"
        );
    }
    c.circle(
        Vec2::new(0.0, 0.0),
        grid.outer_radius,
        "fill=\"none\" stroke=\"#333333\" stroke-width=\"1\"",
    );
    c.finish()
}

/// Marching squares on the polar node lattice.  Corner order within a cell:
/// `(i, j)`, `(i, j+1)`, `(i+1, j+1)`, `(i+1, j)`; edge `e` joins corner `e`
/// to corner `e+1` mod 4.
fn contour_path(
    c: &Canvas,
    grid: nj_core::disk::PolarGrid,
    total: usize,
    dth: f64,
    dist: &[f64],
    level: f64,
) -> String {
    const EDGES: [(usize, usize); 4] = [(0, 1), (1, 2), (2, 3), (3, 0)];
    const CASES: [&[(usize, usize)]; 16] = [
        &[],
        &[(3, 0)],
        &[(0, 1)],
        &[(3, 1)],
        &[(1, 2)],
        &[(3, 0), (1, 2)],
        &[(0, 2)],
        &[(3, 2)],
        &[(2, 3)],
        &[(0, 2)],
        &[(0, 1), (2, 3)],
        &[(1, 2)],
        &[(1, 3)],
        &[(0, 1)],
        &[(0, 3)],
        &[],
    ];
    let mut path = String::new();
    for i in 0..grid.n_r.saturating_sub(1) {
        for jj in 0..total {
            let corners = [(i, jj), (i, jj + 1), (i + 1, jj + 1), (i + 1, jj)];
            let val = corners.map(|(a, b)| dist[a * total + b % total] - level);
            let mut mask = 0usize;
            for (k, v) in val.iter().enumerate() {
                if *v < 0.0 {
                    mask |= 1 << k;
                }
            }
            if CASES[mask].is_empty() {
                continue;
            }
            let world =
                corners.map(|(a, b)| Vec2::from_polar(grid.radius(a), b as f64 * dth));
            let cross = |e: usize| -> Vec2 {
                let (a, b) = EDGES[e];
                let (va, vb) = (val[a], val[b]);
                world[a].lerp(world[b], va / (va - vb))
            };
            for &(ea, eb) in CASES[mask] {
                let _ = write!(path, "M{}L{}", c.point(cross(ea)), c.point(cross(eb)));
            }
        }
    }
    path
}

fn rotate(p: Vec2, angle: f64) -> Vec2 {
    let (s, co) = angle.sin_cos();
    Vec2::new(co * p.x - s * p.y, s * p.x + co * p.y)
}

fn render_interface(doc: &InterfaceDoc, width: u32) -> String {
    let ig = &doc.interface;
    let world = ig
        .cells
        .last()
        .map(|cell| cell.r_hi)
        .or_else(|| ig.radii.last().copied())
        .unwrap_or(1.0);
    let mut c = Canvas::new(width, world * 1.02);

    for &r in &ig.radii {
        c.circle(
            Vec2::new(0.0, 0.0),
            r,
            "fill=\"none\" stroke=\"#e3e3e3\" stroke-width=\"0.8\"",
        );
    }

    for k in (0..ig.segments).rev() {
        let phi = k as f64 * ig.sector;
        let (stroke, w, fill) = if k == 0 {
            ("#333333", 1.6, "fill=\"#000000\" fill-opacity=\"0.05\"")
        } else {
            ("#c9c9c9", 0.8, "fill=\"none\"")
        };
        for cell in &ig.cells {
            let d = cell_outline(&c, cell, phi);
            let _ = writeln!(
                c.body,
                "<path d=\"{d}\" {fill} stroke=\"{stroke}\" stroke-width=\"{w}\"/>"
            );
        }
    }

    if let Some(mc) = &doc.curve {
        for k in (0..ig.segments).rev() {
            let phi = k as f64 * ig.sector;
            let (color, w) = if k == 0 {
                (CURVE_COLOR, 2.2)
            } else {
                (GHOST_CURVE_COLOR, 1.0)
            };
            let mut d = String::new();
            for (n, v) in mc.vertices.iter().enumerate() {
                let cmd = if n == 0 { 'M' } else { 'L' };
                let _ = write!(d, "{cmd}{}", c.point(rotate(*v, phi)));
            }
            let _ = writeln!(
                c.body,
                "<path d=\"{d}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"{w}\"/>"
            );
        }
        for v in &mc.vertices {
            c.dot(*v, 2.4, &format!("fill=\"{CURVE_COLOR}\""));
        }
    }

    // marker points on the fundamental copy only
    for cell in &ig.cells {
        for p in [cell.p_minus(), cell.p_plus()] {
            c.dot(p, 3.0, "fill=\"#333333\"");
        }
        for p in [cell.phat_minus(), cell.phat_plus()] {
            c.dot(p, 2.2, "fill=\"#ffffff\" stroke=\"#333333\" stroke-width=\"1\"");
        }
        for p in [cell.q_minus(), cell.q_plus()] {
            c.dot(p, 2.4, "fill=\"#777777\"");
        }
    }

    c.finish()
}

/// Closed outline of one corridor cell rotated by `phi`: entry window arc
/// at the inner radius, straight flanks, exit window arc at the outer one.
fn cell_outline(c: &Canvas, cell: &InterfaceCell, phi: f64) -> String {
    let th = cell.theta_lo + phi;
    let p0 = Vec2::from_polar(cell.r_lo, th - cell.half_p);
    let q1 = Vec2::from_polar(cell.r_hi, th + cell.half_q);
    let mut d = format!("M{}", c.point(p0));
    let _ = write!(
        d,
        "{}L{}{}Z",
        arc_to(c, cell.r_lo, th - cell.half_p, th + cell.half_p, false),
        c.point(q1),
        arc_to(c, cell.r_hi, th - cell.half_q, th + cell.half_q, true)
    );
    d
}
