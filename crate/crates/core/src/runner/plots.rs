//! SVG report plots. Every plotted sample embeds its value in a
//! `data-value` attribute using the same decimal rendering as the CSV
//! output, so plot and table contents can be diffed mechanically.

use super::render_f64;
use crate::bubbletree::{BubbleNode, BubbleTree};
use crate::diagnostics::DiagRow;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PlotError {
    #[error("empty series")]
    EmptySeries,
}

pub type Result<T> = std::result::Result<T, PlotError>;

const W: f64 = 720.0;
const H: f64 = 440.0;
const MARGIN: f64 = 60.0;

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn from_points(pts: impl Iterator<Item = (f64, f64)>) -> Result<Frame> {
        let mut f = Frame {
            x0: f64::INFINITY,
            x1: f64::NEG_INFINITY,
            y0: f64::INFINITY,
            y1: f64::NEG_INFINITY,
        };
        let mut any = false;
        for (x, y) in pts {
            any = true;
            f.x0 = f.x0.min(x);
            f.x1 = f.x1.max(x);
            f.y0 = f.y0.min(y);
            f.y1 = f.y1.max(y);
        }
        if !any {
            return Err(PlotError::EmptySeries);
        }
        // degenerate ranges get a symmetric pad so single points still plot
        if f.x1 - f.x0 < 1e-300 {
            f.x0 -= 0.5;
            f.x1 += 0.5;
        }
        if f.y1 - f.y0 < 1e-300 {
            f.y0 -= 0.5;
            f.y1 += 0.5;
        }
        Ok(f)
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (W - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        H - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (H - 2.0 * MARGIN)
    }
}

fn document(title: &str, body: &str) -> String {
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" ",
            "viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"24\" text-anchor=\"middle\" font-size=\"16\">{title}</text>\n",
            "{body}</svg>\n"
        ),
        w = W,
        h = H,
        tx = W / 2.0,
        title = title,
        body = body
    )
}

/// One labelled series of `(x, y)` samples with pre-rendered value strings.
pub struct Series<'a> {
    pub label: &'a str,
    pub color: &'a str,
    pub points: Vec<(f64, f64, String)>,
}

fn render_series(title: &str, series: &[Series]) -> Result<String> {
    let frame = Frame::from_points(
        series
            .iter()
            .flat_map(|s| s.points.iter().map(|&(x, y, _)| (x, y))),
    )?;
    let mut body = String::new();
    body.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{pw}\" height=\"{ph}\" fill=\"none\" stroke=\"#ccc\"/>\n",
        m = MARGIN,
        pw = W - 2.0 * MARGIN,
        ph = H - 2.0 * MARGIN
    ));
    for (si, s) in series.iter().enumerate() {
        if s.points.len() > 1 {
            let path: Vec<String> = s
                .points
                .iter()
                .map(|&(x, y, _)| format!("{:.2},{:.2}", frame.px(x), frame.py(y)))
                .collect();
            body.push_str(&format!(
                "<polyline points=\"{}\" fill=\"none\" stroke=\"{}\" stroke-width=\"1.5\"/>\n",
                path.join(" "),
                s.color
            ));
        }
        for (x, y, rendered) in &s.points {
            body.push_str(&format!(
                "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"2.5\" fill=\"{}\" data-series=\"{}\" data-value=\"{}\"/>\n",
                frame.px(*x),
                frame.py(*y),
                s.color,
                s.label,
                rendered
            ));
        }
        body.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" font-size=\"12\" fill=\"{}\">{}</text>\n",
            W - MARGIN + 6.0,
            MARGIN + 16.0 * si as f64,
            s.color,
            s.label
        ));
    }
    Ok(document(title, &body))
}

/// Dirichlet and perturbed energy against time.
pub fn energy_plot(rows: &[DiagRow]) -> Result<String> {
    if rows.is_empty() {
        return Err(PlotError::EmptySeries);
    }
    let series = [
        Series {
            label: "E",
            color: "#1f77b4",
            points: rows.iter().map(|r| (r.t, r.e, render_f64(r.e))).collect(),
        },
        Series {
            label: "E_alpha",
            color: "#d62728",
            points: rows
                .iter()
                .map(|r| (r.t, r.e_alpha, render_f64(r.e_alpha)))
                .collect(),
        },
    ];
    render_series("energy vs t", &series)
}

/// Backward-kernel values against radius, log-log; the reference slope for
/// a constant map is `2 alpha`.
pub fn psi_loglog_plot(radii: &[f64], psi_values: &[f64]) -> Result<String> {
    if radii.is_empty() || radii.len() != psi_values.len() {
        return Err(PlotError::EmptySeries);
    }
    let series = [Series {
        label: "psi",
        color: "#2ca02c",
        points: radii
            .iter()
            .zip(psi_values)
            .map(|(&r, &v)| (r.ln(), v.max(1e-300).ln(), render_f64(v)))
            .collect(),
    }];
    render_series("ln psi vs ln rho", &series)
}

/// Final energies across the alpha schedule.
pub fn alpha_limit_plot(pairs: &[(f64, f64)]) -> Result<String> {
    if pairs.is_empty() {
        return Err(PlotError::EmptySeries);
    }
    let series = [Series {
        label: "E_end",
        color: "#9467bd",
        points: pairs
            .iter()
            .map(|&(a, e)| (a, e, render_f64(e)))
            .collect(),
    }];
    render_series("limit energy vs alpha", &series)
}

/// Nested-circle schematic of a bubble tree: one circle per bubble at its
/// center, radius proportional to the separation scale.
pub fn tree_plot(tree: &BubbleTree) -> Result<String> {
    let side = tree.root.grid().side();
    let scale = (W.min(H) - 2.0 * MARGIN) / side;
    let mut body = String::new();
    body.push_str(&format!(
        "<rect x=\"{m}\" y=\"{m}\" width=\"{s}\" height=\"{s}\" fill=\"none\" stroke=\"#999\"/>\n",
        m = MARGIN,
        s = side * scale
    ));
    fn draw(node: &BubbleNode, grid_scale: f64, grid: &crate::geometry::TorusGrid, out: &mut String) {
        let [x, y] = grid.position(node.center.0, node.center.1);
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#d62728\" data-value=\"{}\"/>\n",
            MARGIN + x * grid_scale,
            MARGIN + y * grid_scale,
            (node.scale * grid_scale).max(2.0),
            render_f64(node.bubble_energy)
        ));
        out.push_str(&format!(
            "<circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"{:.2}\" fill=\"none\" stroke=\"#ff9896\" stroke-dasharray=\"4 3\" data-value=\"{}\"/>\n",
            MARGIN + x * grid_scale,
            MARGIN + y * grid_scale,
            (node.neck_outer * grid_scale).max(3.0),
            render_f64(node.neck_energy)
        ));
        for child in &node.children {
            draw(child, grid_scale, grid, out);
        }
    }
    for node in &tree.nodes {
        draw(node, scale, tree.root.grid(), &mut body);
    }
    body.push_str(&format!(
        "<text x=\"{}\" y=\"{}\" font-size=\"12\">residual {}</text>\n",
        MARGIN,
        H - MARGIN / 2.0,
        render_f64(tree.identity_residual)
    ));
    Ok(document("bubble tree", &body))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(t: f64, e: f64) -> DiagRow {
        DiagRow {
            step: 0,
            t,
            e,
            e_alpha: e + 1.0,
            dissipation: 0.0,
            sup_e: e,
            degree_real: 0.0,
            degree_int: 0,
            tau_norm: 0.0,
        }
    }

    #[test]
    fn empty_series_rejected() {
        assert!(matches!(energy_plot(&[]), Err(PlotError::EmptySeries)));
        assert!(matches!(psi_loglog_plot(&[], &[]), Err(PlotError::EmptySeries)));
    }

    #[test]
    fn single_point_plots() {
        let svg = energy_plot(&[row(0.0, 2.0)]).unwrap();
        assert!(svg.starts_with("<svg"));
        assert!(svg.contains("data-value"));
    }

    #[test]
    fn monotone_series_polyline_nonincreasing() {
        let rows: Vec<DiagRow> = (0..10)
            .map(|i| row(i as f64 * 0.1, 5.0 - 0.3 * i as f64))
            .collect();
        let svg = energy_plot(&rows).unwrap();
        // E_alpha polyline y-coordinates must be nondecreasing in pixel space
        // (pixel y grows downward, value is nonincreasing)
        let poly = svg
            .split("<polyline points=\"")
            .nth(2)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        let ys: Vec<f64> = poly
            .split(' ')
            .map(|p| p.split(',').nth(1).unwrap().parse().unwrap())
            .collect();
        for w in ys.windows(2) {
            assert!(w[1] >= w[0] - 1e-9);
        }
    }

    #[test]
    fn psi_loglog_slope_matches_power_law() {
        let alpha = 1.3;
        let radii = [0.01, 0.02, 0.04, 0.08];
        let psi: Vec<f64> = radii
            .iter()
            .map(|r: &f64| 12.0 * std::f64::consts::PI * r.powf(2.0 * alpha))
            .collect();
        let svg = psi_loglog_plot(&radii, &psi).unwrap();
        assert!(svg.contains("data-value"));
        // slope recovered from the embedded coordinates of first/last circle
        let circles: Vec<(f64, f64)> = svg
            .lines()
            .filter(|l| l.starts_with("<circle"))
            .map(|l| {
                let cx: f64 = l.split("cx=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
                let cy: f64 = l.split("cy=\"").nth(1).unwrap().split('"').next().unwrap().parse().unwrap();
                (cx, cy)
            })
            .collect();
        assert_eq!(circles.len(), 4);
        // pixel-space slope ratio between the two log axes is uniform for a
        // pure power law: collinearity check
        let (x0, y0) = circles[0];
        let (x3, y3) = circles[3];
        for &(x, y) in &circles[1..3] {
            let expect = y0 + (y3 - y0) * (x - x0) / (x3 - x0);
            assert!((y - expect).abs() < 0.5, "not collinear in log-log");
        }
    }
}
