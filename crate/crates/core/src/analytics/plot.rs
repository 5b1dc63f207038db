use std::fmt::Write as _;

use super::{LossLog, LossReport};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 480.0;
const MARGIN: f64 = 56.0;

struct Frame {
    x0: f64,
    x1: f64,
    y1: f64,
}

impl Frame {
    fn x(&self, step: u64) -> f64 {
        let span = (self.x1 - self.x0).max(1.0);
        MARGIN + (step as f64 - self.x0) / span * (WIDTH - 2.0 * MARGIN)
    }

    fn y(&self, loss: f64) -> f64 {
        HEIGHT - MARGIN - loss / self.y1 * (HEIGHT - 2.0 * MARGIN)
    }
}

fn points(frame: &Frame, pts: impl Iterator<Item = (u64, f64)>) -> String {
    pts.map(|(s, v)| format!("{:.2},{:.2}", frame.x(s), frame.y(v)))
        .collect::<Vec<_>>()
        .join(" ")
}

/// Static SVG: both loss curves, the shaded gap between them and the ABC value.
pub fn render_svg(log: &LossLog, report: &LossReport) -> String {
    let steps = log.entries.iter().map(|e| e.step);
    let x0 = steps.clone().min().unwrap_or(0) as f64;
    let x1 = steps.max().unwrap_or(1) as f64;
    let y1 = log
        .entries
        .iter()
        .flat_map(|e| std::iter::once(e.train_loss).chain(e.val_loss))
        .fold(0.0_f64, f64::max)
        .max(f64::MIN_POSITIVE)
        * 1.05;
    let frame = Frame { x0, x1, y1 };

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);

    let shared: Vec<(u64, f64, f64)> = log.shared().collect();
    if shared.len() >= 2 {
        let upper = points(&frame, shared.iter().map(|&(s, _, v)| (s, v)));
        let lower = points(&frame, shared.iter().rev().map(|&(s, t, _)| (s, t)));
        let _ = writeln!(svg, r##"<polygon points="{upper} {lower}" fill="#f4a261" fill-opacity="0.25" stroke="none"/>"##);
    }

    let (bx, by) = (MARGIN, HEIGHT - MARGIN);
    let _ = writeln!(
        svg,
        r#"<path d="M{bx},{MARGIN} L{bx},{by} L{},{by}" stroke="black" fill="none"/>"#,
        WIDTH - MARGIN
    );
    let _ = writeln!(svg, r#"<text x="{bx}" y="{}" text-anchor="middle">{x0}</text>"#, by + 18.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">{x1}</text>"#, WIDTH - MARGIN, by + 18.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">{y1:.3}</text>"#, bx - 6.0, MARGIN + 4.0);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="end">0</text>"#, bx - 6.0, by);
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">step</text>"#, WIDTH / 2.0, HEIGHT - 12.0);

    let train = points(&frame, log.entries.iter().map(|e| (e.step, e.train_loss)));
    let _ = writeln!(svg, r##"<polyline points="{train}" fill="none" stroke="#1d4e89" stroke-width="2"/>"##);
    let val_pts: Vec<(u64, f64)> = log.val_series().iter().map(|p| (p.step, p.value)).collect();
    if !val_pts.is_empty() {
        let val = points(&frame, val_pts.into_iter());
        let _ = writeln!(svg, r##"<polyline points="{val}" fill="none" stroke="#e76f51" stroke-width="2"/>"##);
    }
    for step in &report.overfit_steps {
        if let Some((_, _, v)) = shared.iter().find(|(s, _, _)| s == step) {
            let _ = writeln!(
                svg,
                r##"<circle cx="{:.2}" cy="{:.2}" r="4" fill="#c1121f"/>"##,
                frame.x(*step),
                frame.y(*v)
            );
        }
    }

    let _ = writeln!(
        svg,
        r##"<text x="{}" y="24" text-anchor="middle" font-size="14">Training (blue) vs validation (orange) loss, area between curves = {:.4}</text>"##,
        WIDTH / 2.0,
        report.abc
    );
    svg.push_str("</svg>\n");
    svg
}
