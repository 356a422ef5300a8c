//! Template-based SVG figures: radar, correlation heatmap, grouped bars.
//! Diagnostic quality, no plotting dependency, deterministic output.

use crate::metrics::CorrelationMatrix;

fn header(width: f64, height: f64, config_hash: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{width:.0}\" height=\"{height:.0}\" viewBox=\"0 0 {width:.0} {height:.0}\">\n<!-- config {config_hash} -->\n<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n"
    )
}

/// Radar chart over fixed-order axes; values expected in [0, 1], missing
/// values drawn at the center.
pub fn radar(
    title: &str,
    axes: &[(String, Option<f64>)],
    config_hash: &str,
) -> String {
    let size = 640.0;
    let cx = size / 2.0;
    let cy = size / 2.0 + 10.0;
    let radius = size / 2.0 - 90.0;
    let n = axes.len().max(1);
    let angle = |i: usize| -std::f64::consts::FRAC_PI_2 + (i as f64) * std::f64::consts::TAU / n as f64;

    let mut svg = header(size, size + 20.0, config_hash);
    svg.push_str(&format!(
        "<text x=\"{cx:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n"
    ));
    for ring in [0.25, 0.5, 0.75, 1.0] {
        let points: Vec<String> = (0..n)
            .map(|i| {
                let a = angle(i);
                format!("{:.1},{:.1}", cx + radius * ring * a.cos(), cy + radius * ring * a.sin())
            })
            .collect();
        svg.push_str(&format!(
            "<polygon points=\"{}\" fill=\"none\" stroke=\"#cccccc\" stroke-width=\"1\"/>\n",
            points.join(" ")
        ));
    }
    for (i, (label, _)) in axes.iter().enumerate() {
        let a = angle(i);
        let (x, y) = (cx + radius * a.cos(), cy + radius * a.sin());
        svg.push_str(&format!(
            "<line x1=\"{cx:.1}\" y1=\"{cy:.1}\" x2=\"{x:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\" stroke-width=\"1\"/>\n"
        ));
        let (lx, ly) = (cx + (radius + 16.0) * a.cos(), cy + (radius + 16.0) * a.sin());
        let anchor = if lx < cx - 1.0 {
            "end"
        } else if lx > cx + 1.0 {
            "start"
        } else {
            "middle"
        };
        svg.push_str(&format!(
            "<text x=\"{lx:.1}\" y=\"{ly:.1}\" text-anchor=\"{anchor}\" font-family=\"sans-serif\" font-size=\"10\">{label}</text>\n"
        ));
    }
    let points: Vec<String> = axes
        .iter()
        .enumerate()
        .map(|(i, (_, value))| {
            let a = angle(i);
            let r = radius * value.unwrap_or(0.0).clamp(0.0, 1.0);
            format!("{:.1},{:.1}", cx + r * a.cos(), cy + r * a.sin())
        })
        .collect();
    svg.push_str(&format!(
        "<polygon points=\"{}\" fill=\"#4a90d9\" fill-opacity=\"0.35\" stroke=\"#2166ac\" stroke-width=\"2\"/>\n",
        points.join(" ")
    ));
    svg.push_str("</svg>\n");
    svg
}

/// Diverging blue-white-red fill for a correlation value clamped to [-1, 1].
fn diverging_color(value: f64) -> String {
    let v = value.clamp(-1.0, 1.0);
    let (r, g, b) = if v < 0.0 {
        let t = -v;
        (
            (255.0 * (1.0 - t) + 33.0 * t) as u8,
            (255.0 * (1.0 - t) + 102.0 * t) as u8,
            (255.0 * (1.0 - t) + 172.0 * t) as u8,
        )
    } else {
        let t = v;
        (
            (255.0 * (1.0 - t) + 178.0 * t) as u8,
            (255.0 * (1.0 - t) + 24.0 * t) as u8,
            (255.0 * (1.0 - t) + 43.0 * t) as u8,
        )
    };
    format!("#{r:02x}{g:02x}{b:02x}")
}

/// Correlation heatmap with the diverging scale clamped to [-1, 1]; missing
/// entries render gray.
pub fn heatmap(title: &str, matrix: &CorrelationMatrix, config_hash: &str) -> String {
    let n = matrix.categories.len();
    let cell = 26.0;
    let left = 130.0;
    let top = 60.0;
    let width = left + n as f64 * cell + 40.0;
    let height = top + n as f64 * cell + 130.0;
    let mut svg = header(width, height, config_hash);
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        width / 2.0
    ));
    for (i, row) in matrix.entries.iter().enumerate() {
        for (j, entry) in row.iter().enumerate() {
            let x = left + j as f64 * cell;
            let y = top + i as f64 * cell;
            let fill = match entry {
                Some(v) => diverging_color(*v),
                None => "#bbbbbb".to_string(),
            };
            svg.push_str(&format!(
                "<rect x=\"{x:.1}\" y=\"{y:.1}\" width=\"{cell:.1}\" height=\"{cell:.1}\" fill=\"{fill}\" stroke=\"#ffffff\" stroke-width=\"1\"/>\n"
            ));
            if let Some(v) = entry {
                svg.push_str(&format!(
                    "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"7\" fill=\"#333333\">{v:.2}</text>\n",
                    x + cell / 2.0,
                    y + cell / 2.0 + 2.5
                ));
            }
        }
    }
    for (i, cat) in matrix.categories.iter().enumerate() {
        let y = top + i as f64 * cell + cell / 2.0 + 3.0;
        svg.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{y:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"9\">{}</text>\n",
            left - 6.0,
            cat.label()
        ));
        let x = left + i as f64 * cell + cell / 2.0;
        let ty = top + matrix.entries.len() as f64 * cell + 8.0;
        svg.push_str(&format!(
            "<text x=\"{x:.1}\" y=\"{ty:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"9\" transform=\"rotate(-60 {x:.1} {ty:.1})\">{}</text>\n",
            cat.label()
        ));
    }
    svg.push_str("</svg>\n");
    svg
}

/// Grouped bars per category (two series), with a caption line for the DP
/// and EO aggregates.
pub fn grouped_bars(
    title: &str,
    categories: &[String],
    series_a: (&str, &[Option<f64>]),
    series_b: (&str, &[Option<f64>]),
    caption: &str,
    config_hash: &str,
) -> String {
    let n = categories.len().max(1);
    let group = 34.0;
    let bar = 13.0;
    let left = 50.0;
    let top = 50.0;
    let plot_h = 220.0;
    let width = left + n as f64 * group + 40.0;
    let height = top + plot_h + 120.0;
    let mut svg = header(width, height, config_hash);
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"24\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"16\">{title}</text>\n",
        width / 2.0
    ));
    svg.push_str(&format!(
        "<text x=\"{:.1}\" y=\"40\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\" fill=\"#555555\">{caption}</text>\n",
        width / 2.0
    ));
    // Axis and gridlines at 0, 0.5, 1.
    for frac in [0.0, 0.5, 1.0] {
        let y = top + plot_h * (1.0 - frac);
        svg.push_str(&format!(
            "<line x1=\"{left:.1}\" y1=\"{y:.1}\" x2=\"{:.1}\" y2=\"{y:.1}\" stroke=\"#dddddd\"/>\n<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"9\">{frac:.1}</text>\n",
            left + n as f64 * group,
            left - 5.0,
            y + 3.0
        ));
    }
    for (i, label) in categories.iter().enumerate() {
        let x0 = left + i as f64 * group;
        for (k, (name, values)) in [series_a, series_b].iter().enumerate() {
            let value = values.get(i).copied().flatten();
            if let Some(v) = value {
                let h = plot_h * v.clamp(0.0, 1.0);
                let x = x0 + 3.0 + k as f64 * (bar + 2.0);
                let color = if k == 0 { "#2166ac" } else { "#b2182b" };
                svg.push_str(&format!(
                    "<rect x=\"{x:.1}\" y=\"{:.1}\" width=\"{bar:.1}\" height=\"{h:.1}\" fill=\"{color}\"><title>{name} {label}: {v:.4}</title></rect>\n",
                    top + plot_h - h
                ));
            }
        }
        let tx = x0 + group / 2.0;
        let ty = top + plot_h + 10.0;
        svg.push_str(&format!(
            "<text x=\"{tx:.1}\" y=\"{ty:.1}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"9\" transform=\"rotate(-55 {tx:.1} {ty:.1})\">{label}</text>\n"
        ));
    }
    svg.push_str(&format!(
        "<rect x=\"{left:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"#2166ac\"/><text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
        height - 24.0,
        left + 14.0,
        height - 15.0,
        series_a.0
    ));
    svg.push_str(&format!(
        "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"10\" height=\"10\" fill=\"#b2182b\"/><text x=\"{:.1}\" y=\"{:.1}\" font-family=\"sans-serif\" font-size=\"10\">{}</text>\n",
        left + 120.0,
        height - 24.0,
        left + 134.0,
        height - 15.0,
        series_b.0
    ));
    svg.push_str("</svg>\n");
    svg
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::category::Category;

    #[test]
    fn radar_has_all_axes() {
        let axes: Vec<(String, Option<f64>)> = crate::category::ALL_CATEGORIES
            .iter()
            .map(|c| (c.label().to_string(), Some(0.5)))
            .collect();
        let svg = radar("error rate", &axes, "deadbeef");
        assert_eq!(svg.matches("<line").count(), 21);
        assert!(svg.contains("LGBT+"));
        assert!(svg.contains("<!-- config deadbeef -->"));
    }

    #[test]
    fn negative_entries_render_in_the_blue_band() {
        // -0.26 must land on the negative (blue) side of the scale.
        let color = diverging_color(-0.26);
        let r = u8::from_str_radix(&color[1..3], 16).unwrap();
        let b = u8::from_str_radix(&color[5..7], 16).unwrap();
        assert!(b > r, "expected blue-dominant, got {color}");
        let positive = diverging_color(0.5);
        let pr = u8::from_str_radix(&positive[1..3], 16).unwrap();
        let pb = u8::from_str_radix(&positive[5..7], 16).unwrap();
        assert!(pr > pb, "expected red-dominant, got {positive}");
    }

    #[test]
    fn heatmap_marks_missing_entries_gray() {
        let matrix = CorrelationMatrix {
            categories: vec![Category::Male, Category::Female],
            entries: vec![vec![Some(0.5), None], vec![None, Some(-0.26)]],
        };
        let svg = heatmap("corr", &matrix, "cafebabe");
        assert!(svg.contains("#bbbbbb"));
        assert!(svg.contains("-0.26"));
    }

    #[test]
    fn deterministic_output() {
        let axes = vec![("Base".to_string(), Some(0.25))];
        assert_eq!(radar("t", &axes, "h"), radar("t", &axes, "h"));
    }
}
