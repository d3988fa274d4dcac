//! Self-contained SVG box plots.

use std::fmt::Write;

use penn::eval::BoxStats;

pub struct BoxGroup {
    pub label: String,
    /// `(series name, stats)`, drawn left to right.
    pub boxes: Vec<(String, BoxStats)>,
}

const PALETTE: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];
const HEIGHT: f64 = 360.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const LEFT: f64 = 70.0;
const GROUP_WIDTH: f64 = 180.0;

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

pub fn box_plot(title: &str, y_label: &str, groups: &[BoxGroup]) -> String {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for (_, b) in groups.iter().flat_map(|g| &g.boxes) {
        lo = lo.min(b.min);
        hi = hi.max(b.max);
    }
    if !lo.is_finite() {
        (lo, hi) = (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo, hi) = (lo - 0.5, hi + 0.5);
    }
    let pad = 0.05 * (hi - lo);
    (lo, hi) = (lo - pad, hi + pad);
    let plot_h = HEIGHT - TOP - BOTTOM;
    let y = |v: f64| TOP + plot_h * (hi - v) / (hi - lo);
    let width = LEFT + GROUP_WIDTH * groups.len().max(1) as f64 + 20.0;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{}</text>"#, width / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<text transform="translate(16,{}) rotate(-90)" text-anchor="middle">{}</text>"#,
        TOP + plot_h / 2.0,
        escape(y_label)
    );
    for k in 0..=5 {
        let v = lo + (hi - lo) * k as f64 / 5.0;
        let yy = y(v);
        let _ = writeln!(s, r##"<line x1="{LEFT}" x2="{}" y1="{yy:.2}" y2="{yy:.2}" stroke="#ddd"/>"##, width - 20.0);
        let _ = writeln!(s, r#"<text x="{}" y="{:.2}" text-anchor="end">{v:.3}</text>"#, LEFT - 6.0, yy + 4.0);
    }
    for (g, group) in groups.iter().enumerate() {
        let x0 = LEFT + GROUP_WIDTH * g as f64;
        let n = group.boxes.len().max(1) as f64;
        let slot = GROUP_WIDTH / n;
        for (b, (name, st)) in group.boxes.iter().enumerate() {
            let color = PALETTE[b % PALETTE.len()];
            let cx = x0 + slot * (b as f64 + 0.5);
            let half = slot * 0.3;
            let _ = writeln!(
                s,
                r#"<line x1="{cx:.2}" x2="{cx:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
                y(st.max),
                y(st.min)
            );
            for v in [st.min, st.max] {
                let _ = writeln!(
                    s,
                    r#"<line x1="{:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="black"/>"#,
                    cx - half / 2.0,
                    cx + half / 2.0,
                    y(v),
                    y(v)
                );
            }
            let _ = writeln!(
                s,
                r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{color}" fill-opacity="0.7" stroke="black"/>"#,
                cx - half,
                y(st.q3),
                2.0 * half,
                (y(st.q1) - y(st.q3)).max(0.5)
            );
            let _ = writeln!(
                s,
                r#"<line x1="{:.2}" x2="{:.2}" y1="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
                cx - half,
                cx + half,
                y(st.median),
                y(st.median)
            );
            let _ = writeln!(s, r#"<text x="{cx:.2}" y="{}" text-anchor="middle">{}</text>"#, HEIGHT - BOTTOM + 16.0, escape(name));
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{}" text-anchor="middle" font-weight="bold">{}</text>"#,
            x0 + GROUP_WIDTH / 2.0,
            HEIGHT - BOTTOM + 36.0,
            escape(&group.label)
        );
    }
    s.push_str("</svg>\n");
    s
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_rect_per_box() {
        let st = BoxStats::from_values(&[1.0, 2.0, 3.0]).unwrap();
        let groups = vec![
            BoxGroup { label: "zero".into(), boxes: vec![("penn".into(), st), ("nn".into(), st)] },
            BoxGroup { label: "mean & co".into(), boxes: vec![("penn".into(), st)] },
        ];
        let svg = box_plot("excess risk", "risk", &groups);
        assert!(svg.starts_with("<svg"));
        assert!(svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("fill-opacity").count(), 3);
        assert!(svg.contains("mean &amp; co"));
    }
}
