//! Static SVG bar charts.

use std::fmt::Write;

const PALETTE: [&str; 6] = ["#4e79a7", "#f28e2b", "#59a14f", "#e15759", "#76b7b2", "#b07aa1"];

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Grouped bars: one group per category, one bar per series. Missing
/// values leave a gap.
pub fn grouped_bars(title: &str, y_label: &str, categories: &[String], series: &[(String, Vec<Option<f64>>)]) -> String {
    let (w, h) = (640.0, 360.0);
    let (left, right, top, bottom) = (60.0, 150.0, 40.0, 50.0);
    let plot_w = w - left - right;
    let plot_h = h - top - bottom;
    let values = series.iter().flat_map(|s| s.1.iter().flatten().copied());
    let (lo, hi) = values.fold((0.0f64, 0.0f64), |(a, b), v| (a.min(v), b.max(v)));
    let hi = if hi - lo < 1e-12 { lo + 1.0 } else { hi };
    let y = |v: f64| top + plot_h * (hi - v) / (hi - lo);

    let mut s = String::new();
    let _ = writeln!(s, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#);
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="22" text-anchor="middle" font-size="14">{}</text>"#, left + plot_w / 2.0, escape(title));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{}" transform="rotate(-90 16 {})" text-anchor="middle">{}</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0,
        escape(y_label)
    );
    for k in 0..=4 {
        let v = lo + (hi - lo) * k as f64 / 4.0;
        let yy = y(v);
        let _ = writeln!(s, r##"<line x1="{left}" x2="{}" y1="{yy:.1}" y2="{yy:.1}" stroke="#ddd"/>"##, left + plot_w);
        let _ = writeln!(s, r#"<text x="{}" y="{:.1}" text-anchor="end">{v:.3}</text>"#, left - 6.0, yy + 4.0);
    }
    let n_cat = categories.len().max(1) as f64;
    let group_w = plot_w / n_cat;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    for (c, cat) in categories.iter().enumerate() {
        let gx = left + group_w * c as f64 + group_w * 0.1;
        for (k, (_, vals)) in series.iter().enumerate() {
            if let Some(Some(v)) = vals.get(c) {
                let (y0, y1) = (y(v.max(0.0).min(hi)), y(v.min(0.0).max(lo)));
                let _ = writeln!(
                    s,
                    r#"<rect x="{:.1}" y="{y0:.1}" width="{:.1}" height="{:.1}" fill="{}"/>"#,
                    gx + bar_w * k as f64,
                    bar_w * 0.95,
                    (y1 - y0).max(0.5),
                    PALETTE[k % PALETTE.len()]
                );
            }
        }
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{}" text-anchor="middle">{}</text>"#,
            left + group_w * (c as f64 + 0.5),
            top + plot_h + 18.0,
            escape(cat)
        );
    }
    for (k, (name, _)) in series.iter().enumerate() {
        let ly = top + 16.0 * k as f64;
        let _ = writeln!(s, r#"<rect x="{}" y="{ly}" width="10" height="10" fill="{}"/>"#, w - right + 12.0, PALETTE[k % PALETTE.len()]);
        let _ = writeln!(s, r#"<text x="{}" y="{}">{}</text>"#, w - right + 28.0, ly + 9.0, escape(name));
    }
    s.push_str("</svg>\n");
    s
}
