//! Grouped bar chart of error histograms, written by hand.

use std::collections::BTreeSet;
use std::fmt::Write as _;

use cafv_core::eval::HistogramBin;

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 360.0;
const LEFT: f64 = 56.0;
const RIGHT: f64 = 16.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 48.0;
const COLORS: [&str; 4] = ["#4c72b0", "#dd8452", "#55a868", "#c44e52"];

pub struct Series<'a> {
    pub name: &'a str,
    pub bins: &'a [HistogramBin],
}

fn count_at(bins: &[HistogramBin], lower: f64) -> usize {
    bins.iter().find(|b| b.lower == lower).map_or(0, |b| b.count)
}

/// One group per bin lower edge present in any series.
pub fn bar_chart(title: &str, x_label: &str, series: &[Series<'_>]) -> String {
    let mut lowers: Vec<f64> = series
        .iter()
        .flat_map(|s| s.bins.iter().map(|b| b.lower.to_bits()))
        .collect::<BTreeSet<_>>()
        .into_iter()
        .map(f64::from_bits)
        .collect();
    lowers.sort_by(f64::total_cmp);
    let max = series
        .iter()
        .flat_map(|s| s.bins.iter().map(|b| b.count))
        .max()
        .unwrap_or(0)
        .max(1);

    let plot_w = WIDTH - LEFT - RIGHT;
    let plot_h = HEIGHT - TOP - BOTTOM;
    let groups = lowers.len().max(1) as f64;
    let group_w = plot_w / groups;
    let bar_w = group_w * 0.8 / series.len().max(1) as f64;
    let y = |c: usize| TOP + plot_h * (1.0 - c as f64 / max as f64);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="20" text-anchor="middle" font-size="13">{}</text>"#,
        WIDTH / 2.0,
        escape(title)
    );

    for (k, sr) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        for (g, &lower) in lowers.iter().enumerate() {
            let c = count_at(sr.bins, lower);
            if c == 0 {
                continue;
            }
            let x = LEFT + g as f64 * group_w + group_w * 0.1 + k as f64 * bar_w;
            let top = y(c);
            let _ = writeln!(
                s,
                r#"<rect x="{x:.2}" y="{top:.2}" width="{bar_w:.2}" height="{:.2}" fill="{color}"><title>{}: {c}</title></rect>"#,
                TOP + plot_h - top,
                escape(sr.name)
            );
        }
    }

    let base = TOP + plot_h;
    let _ = writeln!(
        s,
        r#"<line x1="{LEFT}" y1="{base}" x2="{:.1}" y2="{base}" stroke="black"/>"#,
        WIDTH - RIGHT
    );
    let _ = writeln!(s, r#"<line x1="{LEFT}" y1="{TOP}" x2="{LEFT}" y2="{base}" stroke="black"/>"#);
    for tick in 0..=4 {
        let c = (max as f64 * tick as f64 / 4.0).round() as usize;
        let ty = y(c);
        let _ = writeln!(
            s,
            r#"<line x1="{:.1}" y1="{ty:.2}" x2="{LEFT}" y2="{ty:.2}" stroke="black"/><text x="{:.1}" y="{:.2}" text-anchor="end">{c}</text>"#,
            LEFT - 4.0,
            LEFT - 6.0,
            ty + 4.0
        );
    }
    for (g, lower) in lowers.iter().enumerate() {
        let cx = LEFT + (g as f64 + 0.5) * group_w;
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{:.1}" text-anchor="middle">{lower}</text>"#,
            base + 14.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        LEFT + plot_w / 2.0,
        HEIGHT - 10.0,
        escape(x_label)
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(14 {:.1}) rotate(-90)" text-anchor="middle">count</text>"#,
        TOP + plot_h / 2.0
    );
    for (k, sr) in series.iter().enumerate() {
        let lx = WIDTH - RIGHT - 110.0;
        let ly = TOP + 4.0 + k as f64 * 16.0;
        let _ = writeln!(
            s,
            r#"<rect x="{lx:.1}" y="{ly:.1}" width="10" height="10" fill="{}"/><text x="{:.1}" y="{:.1}">{}</text>"#,
            COLORS[k % COLORS.len()],
            lx + 14.0,
            ly + 9.0,
            escape(sr.name)
        );
    }
    s.push_str("</svg>\n");
    s
}

fn escape(t: &str) -> String {
    t.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

#[cfg(test)]
mod tests {
    use super::*;

    fn bins(v: &[(f64, usize)]) -> Vec<HistogramBin> {
        v.iter().map(|&(lower, count)| HistogramBin { lower, count }).collect()
    }

    #[test]
    fn one_rect_per_nonzero_bar() {
        let a = bins(&[(0.0, 5), (1.0, 2)]);
        let b = bins(&[(0.0, 6), (3.0, 1)]);
        let svg = bar_chart(
            "errors",
            "|error| (m/s)",
            &[Series { name: "baseline", bins: &a }, Series { name: "augmented", bins: &b }],
        );
        assert!(svg.starts_with("<svg") && svg.ends_with("</svg>\n"));
        assert_eq!(svg.matches("<title>").count(), 4);
        assert!(svg.contains("|error| (m/s)"));
    }

    #[test]
    fn deterministic_and_escaped() {
        let a = bins(&[(0.0, 1)]);
        let one = bar_chart("a<b", "x", &[Series { name: "s&t", bins: &a }]);
        let two = bar_chart("a<b", "x", &[Series { name: "s&t", bins: &a }]);
        assert_eq!(one, two);
        assert!(one.contains("a&lt;b") && one.contains("s&amp;t"));
    }

    #[test]
    fn empty_series_still_renders_axes() {
        let svg = bar_chart("none", "x", &[]);
        assert!(svg.contains("<line"));
    }
}
