use std::fmt::Write;

use super::{pareto_frontier, Method, ParetoPoint};

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 600.0;
const MARGIN_LEFT: f64 = 80.0;
const MARGIN_RIGHT: f64 = 220.0;
const MARGIN_TOP: f64 = 30.0;
const MARGIN_BOTTOM: f64 = 60.0;

/// Fixed per-method colors (matplotlib "tab10").
pub fn method_color(method: Method) -> &'static str {
    match method {
        Method::SigmoidCe => "#1f77b4",
        Method::PairwiseLogistic => "#8c564b",
        Method::SoftmaxCe => "#ff7f0e",
        Method::SoftmaxCePlatt => "#2ca02c",
        Method::ListCeSigmoid => "#d62728",
        Method::SigmoidCePlusSoftmaxCe => "#9467bd",
        Method::SigmoidCePlusListCe => "#e377c2",
    }
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
    for v in values {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-3);
    (lo - pad, hi + pad)
}

/// Scatter of every trial with each method's frontier drawn as a polyline.
/// x is test NDCG@10, y is negated test LogLoss. Dominated points are hollow.
pub fn render_pareto_svg(series: &[(Method, Vec<ParetoPoint>)]) -> String {
    let all = || series.iter().flat_map(|(_, pts)| pts.iter());
    let (x0, x1) = bounds(all().map(|p| p.x));
    let (y0, y1) = bounds(all().map(|p| p.y));
    let plot_w = WIDTH - MARGIN_LEFT - MARGIN_RIGHT;
    let plot_h = HEIGHT - MARGIN_TOP - MARGIN_BOTTOM;
    let px = |x: f64| MARGIN_LEFT + (x - x0) / (x1 - x0) * plot_w;
    let py = |y: f64| MARGIN_TOP + (y1 - y) / (y1 - y0) * plot_h;

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#);
    let _ = writeln!(
        s,
        r#"<rect x="{MARGIN_LEFT}" y="{MARGIN_TOP}" width="{plot_w}" height="{plot_h}" fill="none" stroke="black"/>"#
    );
    for i in 0..=4 {
        let t = i as f64 / 4.0;
        let xv = x0 + t * (x1 - x0);
        let yv = y0 + t * (y1 - y0);
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{xv:.4}</text>"#,
            px(xv),
            HEIGHT - MARGIN_BOTTOM + 18.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{yv:.4}</text>"#,
            MARGIN_LEFT - 6.0,
            py(yv) + 4.0
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">NDCG@10</text>"#,
        MARGIN_LEFT + plot_w / 2.0,
        HEIGHT - 15.0
    );
    let _ = writeln!(
        s,
        r#"<text transform="translate(18 {:.1}) rotate(-90)" text-anchor="middle">-LogLoss</text>"#,
        MARGIN_TOP + plot_h / 2.0
    );

    for (row, (method, points)) in series.iter().enumerate() {
        let color = method_color(*method);
        let _ = writeln!(s, r#"<g class="{}">"#, method.name());
        let front = pareto_frontier(points);
        if front.len() > 1 {
            let coords: Vec<String> = front
                .iter()
                .map(|p| format!("{:.2},{:.2}", px(p.x), py(p.y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#,
                coords.join(" ")
            );
        }
        for p in points {
            let fill = if p.dominated { "none" } else { color };
            let _ = writeln!(
                s,
                r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{fill}" stroke="{color}"/>"#,
                px(p.x),
                py(p.y)
            );
        }
        let ly = MARGIN_TOP + 10.0 + row as f64 * 20.0;
        let lx = WIDTH - MARGIN_RIGHT + 15.0;
        let _ = writeln!(s, r#"<circle cx="{lx}" cy="{ly}" r="5" fill="{color}"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}">{}</text>"#,
            lx + 12.0,
            ly + 4.0,
            method.name()
        );
        s.push_str("</g>\n");
    }
    s.push_str("</svg>\n");
    s
}
