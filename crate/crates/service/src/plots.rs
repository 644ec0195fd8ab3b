//! Minimal SVG charts for `evaluate --emit-plots`.

use std::fmt::Write;

const W: f64 = 480.0;
const H: f64 = 320.0;
const PAD: f64 = 48.0;

fn frame(title: &str, x_label: &str, y_label: &str, body: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">
<rect width="100%" height="100%" fill="white"/>
<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>
<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/>
<line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>
<text x="{}" y="{}" text-anchor="middle">{}</text>
<text x="14" y="{}" text-anchor="middle" transform="rotate(-90 14 {})">{}</text>
{body}</svg>
"#,
        W / 2.0,
        escape(title),
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD,
        W / 2.0,
        H - 10.0,
        escape(x_label),
        H / 2.0,
        H / 2.0,
        escape(y_label),
    );
    s
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn scale(v: f64, lo: f64, hi: f64, out_lo: f64, out_hi: f64) -> f64 {
    if hi == lo {
        return (out_lo + out_hi) / 2.0;
    }
    out_lo + (v - lo) / (hi - lo) * (out_hi - out_lo)
}

/// Scatter of `(x, y)` points with fixed axis ranges.
pub fn scatter(title: &str, x_label: &str, y_label: &str, points: &[(f64, f64)], x_range: (f64, f64), y_range: (f64, f64)) -> String {
    let mut body = String::new();
    for (lo, hi, axis) in [(x_range.0, x_range.1, 'x'), (y_range.0, y_range.1, 'y')] {
        for i in 0..=4 {
            let v = lo + (hi - lo) * i as f64 / 4.0;
            let _ = if axis == 'x' {
                let px = scale(v, lo, hi, PAD, W - PAD);
                writeln!(body, r#"<text x="{px:.1}" y="{}" text-anchor="middle">{v}</text>"#, H - PAD + 16.0)
            } else {
                let py = scale(v, lo, hi, H - PAD, PAD);
                writeln!(body, r#"<text x="{}" y="{:.1}" text-anchor="end">{v}</text>"#, PAD - 6.0, py + 4.0)
            };
        }
    }
    for (x, y) in points {
        let _ = writeln!(
            body,
            r#"<circle cx="{:.1}" cy="{:.1}" r="3" fill="steelblue"/>"#,
            scale(*x, x_range.0, x_range.1, PAD, W - PAD),
            scale(*y, y_range.0, y_range.1, H - PAD, PAD)
        );
    }
    frame(title, x_label, y_label, &body)
}

/// Vertical bars for values in `[0, 1]`.
pub fn bars(title: &str, y_label: &str, items: &[(String, f64)]) -> String {
    let mut body = String::new();
    let n = items.len().max(1) as f64;
    let slot = (W - 2.0 * PAD) / n;
    for (i, (label, v)) in items.iter().enumerate() {
        let x = PAD + slot * i as f64 + slot * 0.15;
        let top = scale(v.clamp(0.0, 1.0), 0.0, 1.0, H - PAD, PAD);
        let _ = writeln!(
            body,
            r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="steelblue"/>
<text x="{:.1}" y="{}" text-anchor="middle">{}</text>
<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
            slot * 0.7,
            H - PAD - top,
            x + slot * 0.35,
            H - PAD + 16.0,
            escape(label),
            x + slot * 0.35,
            top - 4.0
        );
    }
    frame(title, "", y_label, &body)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn svg_has_one_mark_per_point() {
        let s = scatter("t", "mood", "sentiment", &[(1.0, 2.0), (5.0, 4.0)], (1.0, 5.0), (0.0, 5.0));
        assert!(s.starts_with("<svg"));
        assert_eq!(s.matches("<circle").count(), 2);
        let b = bars("r", "recall", &[("a<b".into(), 0.5)]);
        assert_eq!(b.matches("<rect x").count(), 1);
        assert!(b.contains("a&lt;b"));
    }
}
