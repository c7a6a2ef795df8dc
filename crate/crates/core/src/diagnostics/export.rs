use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use crate::env::GridSpec;
use crate::io::atomic_write;
use crate::transfer::{aggregate_curves, read_curve, recorded_plan, AggregateCurve, Cell};

use super::{DiagError, Heatmap};

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DiagError + '_ {
    move |source| DiagError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// One row of comma-separated counts per grid row.
pub fn heatmap_csv(h: &Heatmap) -> String {
    let mut s = String::new();
    for row in h.counts.chunks(h.size) {
        let cells: Vec<String> = row.iter().map(u64::to_string).collect();
        s.push_str(&cells.join(","));
        s.push('\n');
    }
    s
}

pub fn parse_heatmap_csv(text: &str) -> Result<Vec<Vec<u64>>, DiagError> {
    text.lines()
        .enumerate()
        .map(|(i, line)| {
            line.split(',')
                .map(|v| {
                    v.parse::<u64>()
                        .map_err(|_| DiagError::Invalid(format!("line {}: bad count `{v}`", i + 1)))
                })
                .collect()
        })
        .collect()
}

const WHITE: [u8; 3] = [255, 255, 255];
const BLACK: [u8; 3] = [0, 0, 0];
const RED: [u8; 3] = [220, 30, 30];
const GREEN: [u8; 3] = [30, 170, 60];

/// Binary P6 image, `size * scale` pixels square. Walls are black, start
/// red, goal green; other cells shade from white (never visited) to full
/// blue (most visited) on a log scale.
pub fn heatmap_ppm(h: &Heatmap, spec: &GridSpec, scale: usize) -> Vec<u8> {
    let scale = scale.max(1);
    let px = h.size * scale;
    let max = h.counts.iter().copied().max().unwrap_or(0);
    let denom = (1.0 + max as f64).ln();
    let colour = |r: usize, c: usize| -> [u8; 3] {
        if spec.is_wall((r, c)) {
            return BLACK;
        }
        if (r, c) == spec.start {
            return RED;
        }
        if (r, c) == spec.goal {
            return GREEN;
        }
        let n = h.counts[r * h.size + c];
        if n == 0 || denom == 0.0 {
            return WHITE;
        }
        let t = (1.0 + n as f64).ln() / denom;
        let fade = (255.0 * (1.0 - t)).round() as u8;
        [fade, fade, 255]
    };
    let mut out = format!("P6\n{px} {px}\n255\n").into_bytes();
    for y in 0..px {
        for x in 0..px {
            out.extend_from_slice(&colour(y / scale, x / scale));
        }
    }
    out
}

/// Writes `heatmap_z{index}.csv` and `heatmap_z{index}.ppm` into `dir`.
pub fn export_heatmap(
    h: &Heatmap,
    spec: &GridSpec,
    dir: &Path,
    index: usize,
    scale: usize,
) -> Result<(PathBuf, PathBuf), DiagError> {
    if h.size != spec.size {
        return Err(DiagError::Invalid(format!(
            "heatmap is {}x{0}, grid is {}x{1}",
            h.size, spec.size
        )));
    }
    let csv = dir.join(format!("heatmap_z{index}.csv"));
    let ppm = dir.join(format!("heatmap_z{index}.ppm"));
    atomic_write(&csv, heatmap_csv(h).as_bytes()).map_err(io_err(&csv))?;
    atomic_write(&ppm, &heatmap_ppm(h, spec, scale)).map_err(io_err(&ppm))?;
    Ok((csv, ppm))
}

const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
        .replace('"', "&quot;")
}

/// SVG 1.1 line chart: one mean polyline per curve over a translucent
/// mean ± std band, with a legend and labelled axes.
pub fn curves_svg(title: &str, curves: &[(String, AggregateCurve)]) -> Result<String, DiagError> {
    if curves.is_empty() {
        return Err(DiagError::Invalid("no curves to plot".into()));
    }
    let (w, h) = (640.0, 400.0);
    let (left, right, top, bottom) = (70.0, 170.0, 40.0, 50.0);
    let (pw, ph) = (w - left - right, h - top - bottom);
    let len = curves.iter().map(|(_, c)| c.mean.len()).max().unwrap_or(0).max(2);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for (_, c) in curves {
        for (m, s) in c.mean.iter().zip(&c.std) {
            lo = lo.min(m - s);
            hi = hi.max(m + s);
        }
    }
    if !lo.is_finite() || !hi.is_finite() {
        lo = 0.0;
        hi = 1.0;
    }
    if hi - lo < 1e-9 {
        lo -= 0.5;
        hi += 0.5;
    }
    let x = |i: usize| left + pw * i as f64 / (len - 1) as f64;
    let y = |v: f64| top + ph * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<?xml version="1.0" encoding="UTF-8"?>"#);
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" version="1.1" width="{w}" height="{h}" viewBox="0 0 {w} {h}">"#
    );
    let _ = writeln!(s, r#"<rect x="0" y="0" width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="24" text-anchor="middle" font-family="sans-serif" font-size="15">{}</text>"#,
        left + pw / 2.0,
        escape(title)
    );
    let _ = writeln!(
        s,
        r#"<g stroke="black" stroke-width="1"><line x1="{left}" y1="{:.1}" x2="{:.1}" y2="{:.1}"/><line x1="{left}" y1="{top}" x2="{left}" y2="{:.1}"/></g>"#,
        top + ph,
        left + pw,
        top + ph,
        top + ph
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end" font-family="sans-serif" font-size="11">{v:.2}</text>"#,
            left - 6.0,
            y(v) + 4.0
        );
        let i = (len - 1) * k / 4;
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="11">{i}</text>"#,
            x(i),
            top + ph + 16.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13">updates</text>"#,
        left + pw / 2.0,
        h - 12.0
    );
    let _ = writeln!(
        s,
        r#"<text x="18" y="{:.1}" text-anchor="middle" font-family="sans-serif" font-size="13" transform="rotate(-90 18 {:.1})">mean cumulative reward</text>"#,
        top + ph / 2.0,
        top + ph / 2.0
    );
    for (k, (label, c)) in curves.iter().enumerate() {
        let colour = PALETTE[k % PALETTE.len()];
        let upper = c
            .mean
            .iter()
            .zip(&c.std)
            .enumerate()
            .map(|(i, (m, sd))| (x(i), y(m + sd)));
        let lower = c
            .mean
            .iter()
            .zip(&c.std)
            .enumerate()
            .rev()
            .map(|(i, (m, sd))| (x(i), y(m - sd)));
        let band: Vec<String> = upper.chain(lower).map(|(a, b)| format!("{a:.2},{b:.2}")).collect();
        let line: Vec<String> = c
            .mean
            .iter()
            .enumerate()
            .map(|(i, m)| format!("{:.2},{:.2}", x(i), y(*m)))
            .collect();
        let _ = writeln!(
            s,
            r#"<polygon points="{}" fill="{colour}" fill-opacity="0.2" stroke="none"/>"#,
            band.join(" ")
        );
        let _ = writeln!(
            s,
            r#"<polyline points="{}" fill="none" stroke="{colour}" stroke-width="1.5"/>"#,
            line.join(" ")
        );
        let ly = top + 18.0 * k as f64 + 10.0;
        let lx = left + pw + 14.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{colour}" stroke-width="3"/><text x="{:.1}" y="{:.1}" font-family="sans-serif" font-size="12">{}</text>"#,
            lx + 20.0,
            lx + 26.0,
            ly + 4.0,
            escape(label)
        );
    }
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn export_curves_svg(title: &str, curves: &[(String, AggregateCurve)], path: &Path) -> Result<(), DiagError> {
    let svg = curves_svg(title, curves)?;
    atomic_write(path, svg.as_bytes()).map_err(io_err(path))
}

/// One comparison chart: every arm of a (target, retrain algorithm) pair.
#[derive(Clone, Debug)]
pub struct Panel {
    pub name: String,
    pub curves: Vec<(String, AggregateCurve)>,
}

/// Panels of a transfer directory; arms without complete curves for every
/// seed are left out.
pub fn transfer_panels(root: &Path) -> Result<Vec<Panel>, DiagError> {
    let plan = recorded_plan(root).map_err(|e| DiagError::Invalid(e.to_string()))?;
    let mut out = Vec::new();
    for (t, env) in plan.targets.iter().enumerate() {
        for &retrain in &plan.retrain_algorithms {
            let mut curves = Vec::new();
            for &arm in &plan.arms {
                let seeds: Result<Vec<Vec<f64>>, _> = plan
                    .seeds
                    .iter()
                    .map(|&seed| {
                        let cell = Cell::Target {
                            target: t,
                            retrain,
                            arm,
                            seed,
                        };
                        read_curve(root, &cell.key(&plan))
                    })
                    .collect();
                if let Ok(seeds) = seeds {
                    let agg = aggregate_curves(&seeds, plan.window).map_err(|e| DiagError::Invalid(e.to_string()))?;
                    curves.push((arm.to_string(), agg));
                }
            }
            if !curves.is_empty() {
                out.push(Panel {
                    name: format!("{}_{}", env.id(), retrain.as_str().replace('+', "-")),
                    curves,
                });
            }
        }
    }
    Ok(out)
}
