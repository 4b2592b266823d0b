//! Self-contained SVG line charts: polylines, axis ticks, legend, and a
//! transition marker per curve. No external assets; byte-deterministic for
//! identical inputs.

pub struct Curve {
    pub label: String,
    /// (step, dev WER) points in step order.
    pub points: Vec<(f64, f64)>,
    /// Burn-in to continuous-PL switch, marked with a solid circle.
    pub transition: Option<(f64, f64)>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#17becf", "#7f7f7f",
];

const WIDTH: f64 = 840.0;
const HEIGHT: f64 = 520.0;
const MARGIN_LEFT: f64 = 64.0;
const MARGIN_RIGHT: f64 = 220.0;
const MARGIN_TOP: f64 = 40.0;
const MARGIN_BOTTOM: f64 = 56.0;

pub fn render_chart(curves: &[Curve], title: &str) -> String {
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;

    let x_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.0))
        .fold(1.0f64, f64::max);
    let y_max = curves
        .iter()
        .flat_map(|c| c.points.iter().map(|p| p.1))
        .fold(0.0f64, f64::max)
        .max(1e-9)
        * 1.05;

    let sx = move |x: f64| MARGIN_LEFT + x / x_max * plot_w;
    let sy = move |y: f64| MARGIN_TOP + plot_h - y / y_max * plot_h;

    let mut out = String::new();
    out.push_str(&format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\">\n"
    ));
    out.push_str(&format!(
        "  <rect x=\"0\" y=\"0\" width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n"
    ));
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"24\" font-size=\"16\" text-anchor=\"middle\">{}</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        escape(title)
    ));

    // Axes and ticks.
    out.push_str(&format!(
        "  <line x1=\"{l:.2}\" y1=\"{b:.2}\" x2=\"{r:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n",
        l = MARGIN_LEFT,
        b = MARGIN_TOP + plot_h,
        r = MARGIN_LEFT + plot_w
    ));
    out.push_str(&format!(
        "  <line x1=\"{l:.2}\" y1=\"{t:.2}\" x2=\"{l:.2}\" y2=\"{b:.2}\" stroke=\"black\"/>\n",
        l = MARGIN_LEFT,
        t = MARGIN_TOP,
        b = MARGIN_TOP + plot_h
    ));
    for i in 0..=5 {
        let frac = i as f64 / 5.0;
        let xv = frac * x_max;
        let yv = frac * y_max;
        out.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"middle\">{}</text>\n",
            sx(xv),
            MARGIN_TOP + plot_h + 18.0,
            format_tick(xv)
        ));
        out.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"11\" text-anchor=\"end\">{}</text>\n",
            MARGIN_LEFT - 6.0,
            sy(yv) + 4.0,
            format_tick(yv)
        ));
        out.push_str(&format!(
            "  <line x1=\"{:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" stroke=\"#dddddd\"/>\n",
            MARGIN_LEFT,
            sy(yv),
            MARGIN_LEFT + plot_w,
            sy(yv)
        ));
    }
    out.push_str(&format!(
        "  <text x=\"{:.2}\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\">training step</text>\n",
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 14.0
    ));
    out.push_str(&format!(
        "  <text x=\"18\" y=\"{:.2}\" font-size=\"12\" text-anchor=\"middle\" \
         transform=\"rotate(-90 18 {:.2})\">dev WER</text>\n",
        MARGIN_TOP + plot_h / 2.0,
        MARGIN_TOP + plot_h / 2.0
    ));

    for (i, curve) in curves.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let points: Vec<String> = curve
            .points
            .iter()
            .map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y)))
            .collect();
        out.push_str(&format!(
            "  <polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.8\" points=\"{}\"/>\n",
            points.join(" ")
        ));
        if let Some((x, y)) = curve.transition {
            out.push_str(&format!(
                "  <circle cx=\"{:.2}\" cy=\"{:.2}\" r=\"4.5\" fill=\"{color}\" \
                 class=\"transition-marker\"/>\n",
                sx(x),
                sy(y)
            ));
        }
        let ly = MARGIN_TOP + 14.0 + i as f64 * 18.0;
        let lx = MARGIN_LEFT + plot_w + 12.0;
        out.push_str(&format!(
            "  <line x1=\"{lx:.2}\" y1=\"{:.2}\" x2=\"{:.2}\" y2=\"{:.2}\" \
             stroke=\"{color}\" stroke-width=\"1.8\"/>\n",
            ly - 4.0,
            lx + 22.0,
            ly - 4.0
        ));
        out.push_str(&format!(
            "  <text x=\"{:.2}\" y=\"{ly:.2}\" font-size=\"11\" class=\"legend\">{}</text>\n",
            lx + 28.0,
            escape(&curve.label)
        ));
    }
    out.push_str("</svg>\n");
    out
}

fn format_tick(v: f64) -> String {
    if v == 0.0 {
        "0".to_string()
    } else if v >= 100.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn one_curve_one_polyline_one_marker() {
        let svg = render_chart(
            &[Curve {
                label: "a=0.001".into(),
                points: vec![(0.0, 1.0), (100.0, 0.5), (200.0, 0.4)],
                transition: Some((100.0, 0.5)),
            }],
            "demo",
        );
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("transition-marker").count(), 1);
        assert!(svg.contains("dev WER"));
    }

    #[test]
    fn legend_matches_curve_count_and_bytes_are_deterministic() {
        let curves: Vec<Curve> = (0..3)
            .map(|i| Curve {
                label: format!("run {i}"),
                points: vec![(0.0, 1.0), (50.0, 0.2 * i as f64)],
                transition: None,
            })
            .collect();
        let a = render_chart(&curves, "t");
        let b = render_chart(&curves, "t");
        assert_eq!(a, b);
        assert_eq!(a.matches("class=\"legend\"").count(), 3);
    }
}
