//! Minimal flat SVG charts.

use std::fmt::Write;

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 48.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = write!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = write!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = write!(
        s,
        r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#,
        W / 2.0,
        escape(title)
    );
    let _ = write!(
        s,
        r#"<line x1="{PAD}" y1="{}" x2="{}" y2="{}" stroke="black"/><line x1="{PAD}" y1="{PAD}" x2="{PAD}" y2="{}" stroke="black"/>"#,
        H - PAD,
        W - PAD,
        H - PAD,
        H - PAD
    );
    s
}

fn range(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min).min(0.0);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max).max(lo + 1e-9);
    (lo, hi)
}

fn y_axis(s: &mut String, lo: f64, hi: f64) {
    for (v, y) in [(lo, H - PAD), (hi, PAD)] {
        let _ = write!(s, r#"<text x="{}" y="{y}" text-anchor="end">{v:.3}</text>"#, PAD - 4.0);
    }
}

/// Polyline of `ys` against `xs`.
pub fn line_chart(title: &str, x_label: &str, xs: &[f64], ys: &[f64]) -> String {
    let mut s = header(title);
    if !xs.is_empty() {
        let (ylo, yhi) = range(ys);
        let (xlo, xhi) = (xs[0], xs[xs.len() - 1].max(xs[0] + 1.0));
        let sx = |x: f64| PAD + (x - xlo) / (xhi - xlo) * (W - 2.0 * PAD);
        let sy = |y: f64| H - PAD - (y - ylo) / (yhi - ylo) * (H - 2.0 * PAD);
        let points: Vec<String> = xs
            .iter()
            .zip(ys)
            .map(|(&x, &y)| format!("{:.1},{:.1}", sx(x), sy(y)))
            .collect();
        let _ = write!(
            s,
            r#"<polyline fill="none" stroke="steelblue" stroke-width="1" points="{}"/>"#,
            points.join(" ")
        );
        y_axis(&mut s, ylo, yhi);
        let _ = write!(s, r#"<text x="{PAD}" y="{}">{xlo}</text>"#, H - PAD + 14.0);
        let _ = write!(
            s,
            r#"<text x="{}" y="{}" text-anchor="end">{xhi}</text>"#,
            W - PAD,
            H - PAD + 14.0
        );
    }
    let _ = write!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{}</text></svg>"#,
        W / 2.0,
        H - 10.0,
        escape(x_label)
    );
    s
}

/// One labelled bar per value.
pub fn bar_chart(title: &str, names: &[&str], values: &[f64]) -> String {
    let mut s = header(title);
    if !values.is_empty() {
        let (lo, hi) = range(values);
        let slot = (W - 2.0 * PAD) / values.len() as f64;
        let sy = |y: f64| H - PAD - (y - lo) / (hi - lo) * (H - 2.0 * PAD);
        for (i, (&v, name)) in values.iter().zip(names).enumerate() {
            let x = PAD + i as f64 * slot + slot * 0.15;
            let (top, bottom) = (sy(v.max(0.0)), sy(v.min(0.0)));
            let _ = write!(
                s,
                r#"<rect x="{x:.1}" y="{top:.1}" width="{:.1}" height="{:.1}" fill="steelblue"/>"#,
                slot * 0.7,
                bottom - top
            );
            let _ = write!(
                s,
                r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{v:.2}</text>"#,
                x + slot * 0.35,
                top - 3.0
            );
            let _ = write!(
                s,
                r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
                x + slot * 0.35,
                H - PAD + 14.0,
                escape(name)
            );
        }
        y_axis(&mut s, lo, hi);
    }
    s.push_str("</svg>");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_closed_documents() {
        let l = line_chart("r", "episode", &[0.0, 1.0, 2.0], &[1.0, -1.0, 0.5]);
        assert!(l.starts_with("<svg") && l.ends_with("</svg>"));
        assert!(l.contains("<polyline"));
        let b = bar_chart("s <x>", &["a", "b"], &[60.0, 40.0]);
        assert_eq!(b.matches("<rect").count(), 3);
        assert!(b.contains("s &lt;x&gt;"));
    }

    #[test]
    fn empty_inputs_still_render() {
        assert!(line_chart("t", "x", &[], &[]).ends_with("</svg>"));
        assert!(bar_chart("t", &[], &[]).ends_with("</svg>"));
    }
}
