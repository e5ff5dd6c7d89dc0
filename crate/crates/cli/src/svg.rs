//! Static SVG plots: feasibility heatmaps and closed-loop trajectories.

use std::fmt::Write as _;

use nalgebra::DVector;

const W: f64 = 640.0;
const H: f64 = 420.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 110.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;

/// White to dark blue.
fn ramp(v: f64) -> String {
    let v = v.clamp(0.0, 1.0);
    let mix = |a: f64, b: f64| (a + (b - a) * v).round() as u8;
    format!("#{:02x}{:02x}{:02x}", mix(255.0, 8.0), mix(255.0, 48.0), mix(255.0, 107.0))
}

fn open(out: &mut String, title: &str) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        out,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
        W / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Heatmap of `values[ti][thi]` with `T` on the horizontal axis and
/// `log₁₀ θ` on the vertical axis.
pub fn heatmap(title: &str, t_grid: &[usize], theta_grid: &[f64], values: &[Vec<f64>]) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let cw = pw / t_grid.len().max(1) as f64;
    let ch = ph / theta_grid.len().max(1) as f64;
    for (ti, row) in values.iter().enumerate() {
        for (thi, &v) in row.iter().enumerate() {
            // smallest θ at the bottom
            let x = LEFT + ti as f64 * cw;
            let y = TOP + ph - (thi + 1) as f64 * ch;
            let _ = writeln!(
                out,
                r##"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="#999" stroke-width="0.5"><title>T={} theta={:e} ratio={v:.3}</title></rect>"##,
                cw,
                ch,
                ramp(v),
                t_grid[ti],
                theta_grid[thi]
            );
        }
    }
    for (ti, t) in t_grid.iter().enumerate() {
        let x = LEFT + (ti as f64 + 0.5) * cw;
        let _ = writeln!(out, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{t}</text>"#, TOP + ph + 16.0);
    }
    for (thi, th) in theta_grid.iter().enumerate() {
        let y = TOP + ph - (thi as f64 + 0.5) * ch + 4.0;
        let label = if *th > 0.0 { format!("{:.1}", th.log10()) } else { "-inf".into() };
        let _ = writeln!(out, r#"<text x="{:.2}" y="{y:.2}" text-anchor="end">{label}</text>"#, LEFT - 6.0);
    }
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">T</text>"#, LEFT + pw / 2.0, H - 18.0);
    let _ = writeln!(
        out,
        r#"<text x="18" y="{:.2}" text-anchor="middle" transform="rotate(-90 18 {:.2})">log10 theta</text>"#,
        TOP + ph / 2.0,
        TOP + ph / 2.0
    );
    // colour bar
    let bx = W - RIGHT + 30.0;
    for i in 0..20 {
        let v = 1.0 - i as f64 / 19.0;
        let _ = writeln!(
            out,
            r#"<rect x="{bx}" y="{:.2}" width="18" height="{:.2}" fill="{}"/>"#,
            TOP + i as f64 * ph / 20.0,
            ph / 20.0 + 0.5,
            ramp(v)
        );
    }
    let _ = writeln!(out, r#"<text x="{}" y="{}">1.0</text>"#, bx + 24.0, TOP + 10.0);
    let _ = writeln!(out, r#"<text x="{}" y="{}">0.0</text>"#, bx + 24.0, TOP + ph);
    out.push_str("</svg>\n");
    out
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#8c564b", "#e377c2"];

/// One polyline per state component against the step index.
pub fn trajectory(title: &str, states: &[DVector<f64>]) -> String {
    let mut out = String::new();
    open(&mut out, title);
    let n = states.first().map_or(0, |x| x.len());
    let steps = states.len().saturating_sub(1).max(1) as f64;
    let mut lo = states.iter().flat_map(|x| x.iter().copied()).fold(0.0f64, f64::min);
    let mut hi = states.iter().flat_map(|x| x.iter().copied()).fold(0.0f64, f64::max);
    if hi - lo < 1e-12 {
        lo -= 1.0;
        hi += 1.0;
    }
    let pw = W - LEFT - RIGHT;
    let ph = H - TOP - BOTTOM;
    let px = |k: usize| LEFT + k as f64 / steps * pw;
    let py = |v: f64| TOP + (hi - v) / (hi - lo) * ph;
    let _ = writeln!(
        out,
        r##"<rect x="{LEFT}" y="{TOP}" width="{pw}" height="{ph}" fill="none" stroke="#444"/>"##
    );
    let _ = writeln!(
        out,
        r##"<line x1="{LEFT}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#bbb" stroke-dasharray="4 3"/>"##,
        LEFT + pw,
        y = py(0.0)
    );
    for i in 0..n {
        let pts: Vec<String> = states
            .iter()
            .enumerate()
            .map(|(k, x)| format!("{:.2},{:.2}", px(k), py(x[i])))
            .collect();
        let colour = PALETTE[i % PALETTE.len()];
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{colour}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.2}" y="{:.2}" fill="{colour}">x{}</text>"#,
            W - RIGHT + 12.0,
            TOP + 14.0 * (i + 1) as f64,
            i + 1
        );
    }
    let _ = writeln!(out, r#"<text x="{LEFT}" y="{:.2}">0</text>"#, TOP + ph + 16.0);
    let _ = writeln!(
        out,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
        LEFT + pw,
        TOP + ph + 16.0,
        states.len().saturating_sub(1)
    );
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{hi:.3}</text>"#, LEFT - 6.0, TOP + 4.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{lo:.3}</text>"#, LEFT - 6.0, TOP + ph + 4.0);
    let _ = writeln!(out, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">k</text>"#, LEFT + pw / 2.0, H - 18.0);
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn heatmap_has_one_cell_per_entry() {
        let s = heatmap("r", &[20, 40], &[1e-6, 1e-5, 1e-4], &[vec![1.0, 0.5, 0.0], vec![1.0, 1.0, 0.2]]);
        assert_eq!(s.matches("<title>").count(), 6);
        assert!(s.contains("theta=1e-5"));
        assert!(s.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn trajectory_draws_each_state() {
        let xs: Vec<DVector<f64>> = (0..5).map(|k| DVector::from_vec(vec![0.5f64.powi(k), -1.0])).collect();
        let s = trajectory("cl", &xs);
        assert_eq!(s.matches("<polyline").count(), 2);
    }
}
