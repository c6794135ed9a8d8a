//! Minimal SVG plots: precision-recall curves and tube trajectories.

use std::fmt::Write as _;

use crate::geometry::Tube;

const SIZE: f64 = 400.0;
const MARGIN: f64 = 40.0;
const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

fn header(title: &str) -> String {
    let full = SIZE + 2.0 * MARGIN;
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{full}" height="{full}" viewBox="0 0 {full} {full}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{full}" height="{full}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{MARGIN}" y="20" font-size="13">{}</text>"#, escape(title));
    let _ = writeln!(
        s,
        r##"<rect x="{MARGIN}" y="{MARGIN}" width="{SIZE}" height="{SIZE}" fill="none" stroke="#444"/>"##
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Maps unit coordinates to the plot area; `flip` puts y = 0 at the bottom.
fn px(x: f64, y: f64, flip: bool) -> (f64, f64) {
    let y = if flip { 1.0 - y } else { y };
    (MARGIN + x.clamp(-0.1, 1.1) * SIZE, MARGIN + y.clamp(-0.1, 1.1) * SIZE)
}

fn polyline(points: impl Iterator<Item = (f64, f64)>, color: &str, dashed: bool) -> String {
    let pts: Vec<String> = points.map(|(x, y)| format!("{x:.2},{y:.2}")).collect();
    let dash = if dashed { r#" stroke-dasharray="5,3""# } else { "" };
    format!(
        r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"{dash}/>"#,
        pts.join(" ")
    )
}

fn legend(s: &mut String, i: usize, name: &str, color: &str) {
    let y = MARGIN + 14.0 + 14.0 * i as f64;
    let x = MARGIN + SIZE - 130.0;
    let _ = writeln!(s, r#"<rect x="{x}" y="{:.1}" width="10" height="10" fill="{color}"/>"#, y - 9.0);
    let _ = writeln!(s, r#"<text x="{:.1}" y="{y:.1}">{}</text>"#, x + 14.0, escape(name));
}

/// Precision-recall curves, one per named series of `(recall, precision)`.
pub fn pr_curves(title: &str, series: &[(String, Vec<(f64, f64)>)]) -> String {
    let mut s = header(title);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">recall</text>"#,
        MARGIN + SIZE / 2.0,
        SIZE + MARGIN + 28.0
    );
    let _ = writeln!(
        s,
        r#"<text x="12" y="{:.1}" transform="rotate(-90 12 {:.1})" text-anchor="middle">precision</text>"#,
        MARGIN + SIZE / 2.0,
        MARGIN + SIZE / 2.0
    );
    for (i, (name, curve)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let line = std::iter::once((0.0, curve.first().map_or(1.0, |p| p.1)))
            .chain(curve.iter().copied())
            .map(|(r, p)| px(r, p, true));
        let _ = writeln!(s, "{}", polyline(line, color, false));
        legend(&mut s, i, name, color);
    }
    s.push_str("</svg>\n");
    s
}

/// Box-center paths in the image plane: ground truth solid, detections
/// dashed, with the first and last boxes outlined.
pub fn trajectories(title: &str, ground_truth: &[Tube], detections: &[(String, Tube)]) -> String {
    let mut s = header(title);
    let draw = |s: &mut String, tube: &Tube, color: &str, dashed: bool| {
        let _ = writeln!(s, "{}", polyline(tube.boxes().map(|b| px(b.cx(), b.cy(), false)), color, dashed));
        for b in [tube.frames()[0].bbox, tube.frames()[tube.len() - 1].bbox] {
            let (x, y) = px(b.left(), b.top(), false);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{y:.2}" width="{:.2}" height="{:.2}" fill="none" stroke="{color}" stroke-width="0.8"/>"#,
                b.w() * SIZE,
                b.h() * SIZE
            );
        }
    };
    let mut names: Vec<String> = Vec::new();
    for t in ground_truth {
        draw(&mut s, t, "#222", false);
    }
    if !ground_truth.is_empty() {
        names.push("ground truth".into());
    }
    for (i, (name, t)) in detections.iter().enumerate() {
        draw(&mut s, t, PALETTE[i % PALETTE.len()], true);
        names.push(name.clone());
    }
    let offset = usize::from(!ground_truth.is_empty());
    for (i, name) in names.iter().enumerate() {
        let color = if i < offset { "#222" } else { PALETTE[(i - offset) % PALETTE.len()] };
        legend(&mut s, i, name, color);
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::BBox;

    #[test]
    fn pr_svg_is_well_formed() {
        let s = pr_curves("AP <test>", &[("class 1".into(), vec![(0.5, 1.0), (1.0, 0.5)])]);
        assert!(s.starts_with("<svg"));
        assert!(s.trim_end().ends_with("</svg>"));
        assert!(s.contains("AP &lt;test&gt;"));
        assert!(s.contains("polyline"));
    }

    #[test]
    fn trajectory_svg_draws_every_tube() {
        let t = Tube::contiguous(0, 0, (0..4).map(|i| BBox::new(0.2 + 0.1 * i as f64, 0.5, 0.1, 0.1).unwrap())).unwrap();
        let s = trajectories("v", std::slice::from_ref(&t), &[("refined".into(), t.clone())]);
        assert_eq!(s.matches("<polyline").count(), 2);
        assert!(s.contains("ground truth") && s.contains("refined"));
    }
}
