//! Plots and tables of a run directory, rendered as SVG and CSV.

use crate::io::{read_to_string, write_atomic};
use anyhow::{bail, Context, Result};
use corwa_core::scenario::ScenarioConfig;
use corwa_core::sim::METRICS_COLUMNS;
use corwa_core::topology::JointState;
use corwa_core::{CoRwaCertificate, System};
use std::fmt::Write;
use std::path::{Path, PathBuf};

pub const CONFIG_FILE: &str = "config.toml";
pub const CERTIFICATE_FILE: &str = "certificate.json";
pub const METRICS_FILE: &str = "metrics.csv";

const W: f64 = 640.0;
const H: f64 = 480.0;
const PAD: f64 = 50.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf"];

/// One trajectory table: time stamps and per-agent states.
pub struct Trajectory {
    pub times: Vec<f64>,
    /// `states[k][agent]`.
    pub states: Vec<Vec<Vec<f64>>>,
}

pub fn parse_trajectory(text: &str, n: usize) -> Result<Trajectory> {
    let mut times: Vec<f64> = Vec::new();
    let mut states: Vec<Vec<Vec<f64>>> = Vec::new();
    for (line_no, line) in text.lines().enumerate().skip(1) {
        let cols: Vec<&str> = line.split(',').collect();
        if cols.len() < 2 + n {
            bail!("trajectory line {} has {} columns", line_no + 1, cols.len());
        }
        let t: f64 = cols[0].parse()?;
        let agent: usize = cols[1].parse()?;
        let x = cols[2..2 + n].iter().map(|c| c.parse::<f64>()).collect::<Result<Vec<_>, _>>()?;
        if agent == 0 {
            times.push(t);
            states.push(Vec::new());
        }
        states.last_mut().context("trajectory does not start with agent 0")?.push(x);
    }
    Ok(Trajectory { times, states })
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn new(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Frame { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        PAD + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * PAD)
    }

    fn py(&self, y: f64) -> f64 {
        H - PAD - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * PAD)
    }

    fn axes(&self, s: &mut String, title: &str, xlabel: &str, ylabel: &str) {
        let _ = writeln!(s, r#"<rect x="{PAD}" y="{PAD}" width="{}" height="{}" fill="none" stroke="black"/>"#, W - 2.0 * PAD, H - 2.0 * PAD);
        let _ = writeln!(s, r#"<text x="{}" y="25" text-anchor="middle" font-size="16">{title}</text>"#, W / 2.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle" font-size="12">{xlabel}</text>"#, W / 2.0, H - 12.0);
        let _ = writeln!(s, r#"<text x="14" y="{}" font-size="12" transform="rotate(-90 14 {})" text-anchor="middle">{ylabel}</text>"#, H / 2.0, H / 2.0);
        for (v, x) in [(self.x0, PAD), (self.x1, W - PAD)] {
            let _ = writeln!(s, r#"<text x="{x}" y="{}" font-size="10" text-anchor="middle">{v:.3}</text>"#, H - PAD + 14.0);
        }
        for (v, y) in [(self.y0, H - PAD), (self.y1, PAD)] {
            let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="10" text-anchor="end">{v:.3}</text>"#, PAD - 4.0);
        }
    }
}

fn bounds(v: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = v.filter(|x| x.is_finite()).fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), x| (a.min(x), b.max(x)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn svg_open() -> String {
    format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{W}\" height=\"{H}\" viewBox=\"0 0 {W} {H}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n")
}

fn polyline(s: &mut String, pts: &[(f64, f64)], color: &str) {
    let mut d = String::new();
    for (x, y) in pts {
        let _ = write!(d, "{x:.2},{y:.2} ");
    }
    let _ = writeln!(s, r#"<polyline points="{d}" fill="none" stroke="{color}" stroke-width="1.5"/>"#);
}

/// Own-state trajectories: the two position coordinates, or the first
/// coordinate over time when there is only one.
pub fn trajectory_svg(sys: &System, traj: &Trajectory, obstacles: &[corwa_core::training::Obstacle]) -> String {
    let pos = &sys.topology.position_slice;
    let planar = pos.len() >= 2;
    let point = |k: usize, i: usize| -> (f64, f64) {
        let x = &traj.states[k][i];
        if planar {
            (x[pos[0]], x[pos[1]])
        } else {
            (traj.times[k], x[pos[0]])
        }
    };
    let q = sys.q();
    let all = (0..traj.states.len()).flat_map(|k| (0..q).map(move |i| (k, i)));
    let mut xs: Vec<f64> = all.clone().map(|(k, i)| point(k, i).0).collect();
    let mut ys: Vec<f64> = all.map(|(k, i)| point(k, i).1).collect();
    if planar {
        for o in obstacles {
            xs.extend([o.center[0] - o.radius, o.center[0] + o.radius]);
            ys.extend([o.center[1] - o.radius, o.center[1] + o.radius]);
        }
    }
    let f = Frame::new(xs.iter().copied(), ys.iter().copied());
    let mut s = svg_open();
    let (xl, yl) = if planar { ("x", "y") } else { ("t", "x0") };
    f.axes(&mut s, "Trajectories", xl, yl);
    if planar {
        for o in obstacles {
            let r = o.radius / (f.x1 - f.x0) * (W - 2.0 * PAD);
            let ry = o.radius / (f.y1 - f.y0) * (H - 2.0 * PAD);
            let _ = writeln!(s, r##"<ellipse cx="{:.2}" cy="{:.2}" rx="{r:.2}" ry="{ry:.2}" fill="#bbbbbb" stroke="black"/>"##, f.px(o.center[0]), f.py(o.center[1]));
        }
    }
    for i in 0..q {
        let pts: Vec<(f64, f64)> = (0..traj.states.len()).map(|k| point(k, i)).map(|(x, y)| (f.px(x), f.py(y))).collect();
        polyline(&mut s, &pts, PALETTE[i % PALETTE.len()]);
    }
    s.push_str("</svg>\n");
    s
}

/// Minimum inter-agent and obstacle distances over time.
pub fn distance_svg(sys: &System, traj: &Trajectory, obstacles: &[corwa_core::training::Obstacle]) -> String {
    let pos = &sys.topology.position_slice;
    let q = sys.q();
    let p = |x: &[f64]| pos.iter().map(|&k| x[k]).collect::<Vec<f64>>();
    let d = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut agent_series = Vec::new();
    let mut obs_series = Vec::new();
    for (k, row) in traj.states.iter().enumerate() {
        let mut m = f64::INFINITY;
        for i in 0..q {
            for j in i + 1..q {
                m = m.min(d(&p(&row[i]), &p(&row[j])));
            }
        }
        if m.is_finite() {
            agent_series.push((traj.times[k], m));
        }
        if pos.len() >= 2 && !obstacles.is_empty() {
            let mo = (0..q)
                .flat_map(|i| obstacles.iter().map(move |o| (i, o)))
                .map(|(i, o)| d(&p(&row[i])[..2], &o.center) - o.radius)
                .fold(f64::INFINITY, f64::min);
            obs_series.push((traj.times[k], mo));
        }
    }
    let ys = agent_series.iter().chain(&obs_series).map(|p| p.1).chain(std::iter::once(0.0));
    let f = Frame::new(traj.times.iter().copied(), ys.clone());
    let mut s = svg_open();
    f.axes(&mut s, "Minimum distances", "t", "distance");
    let zero = f.py(0.0);
    let _ = writeln!(s, r#"<line x1="{PAD}" y1="{zero:.2}" x2="{}" y2="{zero:.2}" stroke="gray" stroke-dasharray="4 3"/>"#, W - PAD);
    for (series, color, label) in [(&agent_series, PALETTE[0], "inter-agent"), (&obs_series, PALETTE[1], "obstacle")] {
        if series.is_empty() {
            continue;
        }
        let pts: Vec<(f64, f64)> = series.iter().map(|&(t, v)| (f.px(t), f.py(v))).collect();
        polyline(&mut s, &pts, color);
        let (x, y) = pts[pts.len() - 1];
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" font-size="11" fill="{color}" text-anchor="end">{label}</text>"#, x, y - 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Values of agent `i`'s Lyapunov or barrier function on a grid over two
/// own-state coordinates; other coordinates sit at the equilibrium and no
/// neighbor is present.
pub fn certificate_grid(sys: &System, cert: &CoRwaCertificate, i: usize, axes: [usize; 2], res: usize, barrier: bool) -> (Vec<f64>, Vec<f64>, Vec<Vec<f64>>) {
    let dom = &sys.agents[i].domain;
    let lin = |k: usize| -> Vec<f64> {
        let iv = dom[k];
        (0..res).map(|r| iv.lo + (iv.hi - iv.lo) * r as f64 / (res.max(2) - 1) as f64).collect()
    };
    let xs = lin(axes[0]);
    let ys = lin(axes[1]);
    let exo: Vec<f64> = (0..sys.exo_dim()).map(|k| sys.exo.domain[k].mid()).collect();
    let mut joint = JointState::new(sys.agents.iter().map(|a| a.equilibrium.clone()).collect());
    let mut grid = vec![vec![0.0; res]; res];
    for (r, &y) in ys.iter().enumerate() {
        for (c, &x) in xs.iter().enumerate() {
            joint.x[i][axes[0]] = x;
            joint.x[i][axes[1]] = y;
            grid[r][c] = if barrier {
                let mut xin = sys.topology.extend_with(&joint, i, &[]).flatten();
                xin.extend_from_slice(&exo);
                cert.barrier_value(i, &xin)
            } else {
                cert.lyapunov_value(i, &joint.x[i])
            };
        }
    }
    (xs, ys, grid)
}

fn color(t: f64) -> String {
    let t = t.clamp(0.0, 1.0);
    let r = (255.0 * t) as u8;
    let b = (255.0 * (1.0 - t)) as u8;
    let g = (255.0 * (1.0 - (2.0 * t - 1.0).abs()) * 0.8) as u8;
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Heat map of a grid with its zero level set marked.
pub fn contour_svg(title: &str, xs: &[f64], ys: &[f64], grid: &[Vec<f64>], labels: (&str, &str)) -> String {
    let f = Frame { x0: xs[0], x1: xs[xs.len() - 1], y0: ys[0], y1: ys[ys.len() - 1] };
    let (lo, hi) = bounds(grid.iter().flatten().copied());
    let mut s = svg_open();
    let cw = (W - 2.0 * PAD) / xs.len() as f64;
    let ch = (H - 2.0 * PAD) / ys.len() as f64;
    for (r, row) in grid.iter().enumerate() {
        for (c, &v) in row.iter().enumerate() {
            let x = PAD + c as f64 * cw;
            let y = H - PAD - (r + 1) as f64 * ch;
            let _ = writeln!(s, r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}"/>"#, cw + 0.05, ch + 0.05, color((v - lo) / (hi - lo)));
        }
    }
    for r in 0..grid.len() {
        for c in 0..grid[r].len() {
            let v = grid[r][c];
            let right = grid[r].get(c + 1).is_some_and(|&w| (v < 0.0) != (w < 0.0));
            let up = grid.get(r + 1).is_some_and(|row| (v < 0.0) != (row[c] < 0.0));
            if right || up {
                let _ = writeln!(s, r#"<circle cx="{:.2}" cy="{:.2}" r="0.9" fill="black"/>"#, PAD + (c as f64 + 0.5) * cw, H - PAD - (r as f64 + 0.5) * ch);
            }
        }
    }
    f.axes(&mut s, title, labels.0, labels.1);
    let _ = writeln!(s, r#"<text x="{}" y="{}" font-size="10" text-anchor="end">range [{lo:.3}, {hi:.3}]</text>"#, W - PAD, PAD - 6.0);
    s.push_str("</svg>\n");
    s
}

pub fn grid_csv(xs: &[f64], ys: &[f64], grid: &[Vec<f64>]) -> String {
    let mut s = String::from("x,y,value\n");
    for (r, &y) in ys.iter().enumerate() {
        for (c, &x) in xs.iter().enumerate() {
            let _ = writeln!(s, "{x},{y},{}", grid[r][c]);
        }
    }
    s
}

/// Metrics table rendered as SVG text.
pub fn table_svg(csv: &str) -> String {
    let rows: Vec<Vec<&str>> = csv.lines().map(|l| l.split(',').collect()).collect();
    let height = 40.0 + 20.0 * rows.len() as f64;
    let width = 150.0 * METRICS_COLUMNS.len() as f64 + 80.0;
    let mut s = format!("<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width}\" height=\"{height}\">\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
    for (r, row) in rows.iter().enumerate() {
        let y = 30.0 + 20.0 * r as f64;
        let weight = if r == 0 { "bold" } else { "normal" };
        let label = if r == 0 { "rollout".to_string() } else { (r - 1).to_string() };
        let _ = writeln!(s, r#"<text x="10" y="{y}" font-size="11" font-weight="{weight}">{label}</text>"#);
        for (c, cell) in row.iter().enumerate() {
            let cell: String = cell.chars().take(22).collect();
            let _ = writeln!(s, r#"<text x="{}" y="{y}" font-size="11" font-weight="{weight}">{cell}</text>"#, 80.0 + 150.0 * c as f64);
        }
    }
    s.push_str("</svg>\n");
    s
}

fn trajectory_files(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut v: Vec<PathBuf> = std::fs::read_dir(dir)
        .with_context(|| format!("reading {}", dir.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.file_name().and_then(|n| n.to_str()).is_some_and(|n| n.starts_with("trajectory_") && n.ends_with(".csv")))
        .collect();
    v.sort();
    Ok(v)
}

/// Renders every artifact the run directory supports. Returns the files
/// written.
pub fn render(dir: &Path) -> Result<Vec<PathBuf>> {
    let config = dir.join(CONFIG_FILE);
    let cert_path = dir.join(CERTIFICATE_FILE);
    let trajs = if dir.is_dir() { trajectory_files(dir)? } else { vec![] };
    if !config.exists() || (!cert_path.exists() && trajs.is_empty()) {
        bail!(
            "{} is not a run directory; expected {CONFIG_FILE} together with {CERTIFICATE_FILE} and/or trajectory_<k>.csv (and optionally {METRICS_FILE})",
            dir.display()
        );
    }
    let cfg = ScenarioConfig::load(&config)?;
    let sys = cfg.system()?;
    let mut written = Vec::new();
    let mut put = |name: &str, text: String| -> Result<()> {
        let p = dir.join(name);
        write_atomic(&p, text.as_bytes())?;
        written.push(p);
        Ok(())
    };
    if let Some(first) = trajs.first() {
        let traj = parse_trajectory(&read_to_string(first)?, sys.n())?;
        put("trajectories.svg", trajectory_svg(&sys, &traj, cfg.obstacles()))?;
        put("distances.svg", distance_svg(&sys, &traj, cfg.obstacles()))?;
    }
    if cert_path.exists() {
        let cert = CoRwaCertificate::from_json(&read_to_string(&cert_path)?)?;
        cert.check_against(&sys)?;
        let sim = &cfg.simulation;
        let i = sim.contour_agent.min(sys.q() - 1);
        let axes = sim.contour_axes.map(|a| a.min(sys.n() - 1));
        let labels = (format!("x{}", axes[0]), format!("x{}", axes[1]));
        for (barrier, stem, title) in [(false, "lyapunov", "Lyapunov function"), (true, "barrier", "Barrier function")] {
            let (xs, ys, grid) = certificate_grid(&sys, &cert, i, axes, sim.contour_resolution.max(2), barrier);
            put(&format!("contour_{stem}.svg"), contour_svg(&format!("{title}, agent {i}"), &xs, &ys, &grid, (&labels.0, &labels.1)))?;
            put(&format!("contour_{stem}.csv"), grid_csv(&xs, &ys, &grid))?;
        }
    }
    let metrics = dir.join(METRICS_FILE);
    if metrics.exists() {
        let text = read_to_string(&metrics)?;
        put("metrics_table.svg", table_svg(&text))?;
    }
    Ok(written)
}
