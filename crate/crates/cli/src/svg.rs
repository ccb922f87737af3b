//! Minimal deterministic SVG emitters for report charts. Pure functions of
//! their inputs, so regenerated charts are byte-identical.

const WIDTH: f64 = 800.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 50.0;
const PALETTE: [&str; 6] = [
    "#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b",
];

fn header(title: &str) -> String {
    format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" viewBox=\"0 0 {WIDTH} {HEIGHT}\" \
         font-family=\"monospace\" font-size=\"12\">\n\
         <rect width=\"{WIDTH}\" height=\"{HEIGHT}\" fill=\"white\"/>\n\
         <text x=\"{MARGIN}\" y=\"20\" font-size=\"14\">{title}</text>\n\
         <line x1=\"{MARGIN}\" y1=\"{y0}\" x2=\"{x1}\" y2=\"{y0}\" stroke=\"black\"/>\n\
         <line x1=\"{MARGIN}\" y1=\"30\" x2=\"{MARGIN}\" y2=\"{y0}\" stroke=\"black\"/>\n",
        y0 = HEIGHT - MARGIN,
        x1 = WIDTH - 10.0,
    )
}

/// A line chart with one polyline per named series.
pub fn line_chart(title: &str, series: &[(String, Vec<u32>)]) -> String {
    let mut out = header(title);
    let max_len = series.iter().map(|(_, s)| s.len()).max().unwrap_or(0);
    let max_val = series
        .iter()
        .flat_map(|(_, s)| s.iter().copied())
        .max()
        .unwrap_or(0)
        .max(1);
    let plot_w = WIDTH - MARGIN - 10.0;
    let plot_h = HEIGHT - MARGIN - 30.0;
    for (i, (name, points)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        if points.len() > 1 {
            let coords: Vec<String> = points
                .iter()
                .enumerate()
                .map(|(x, &v)| {
                    let px = MARGIN + plot_w * x as f64 / (max_len - 1).max(1) as f64;
                    let py = HEIGHT - MARGIN - plot_h * f64::from(v) / f64::from(max_val);
                    format!("{px:.1},{py:.1}")
                })
                .collect();
            out.push_str(&format!(
                "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>\n",
                coords.join(" ")
            ));
        }
        out.push_str(&format!(
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{name}</text>\n",
            WIDTH - 160.0,
            40.0 + 16.0 * i as f64,
        ));
    }
    out.push_str(&format!(
        "<text x=\"6\" y=\"34\">{max_val}</text><text x=\"6\" y=\"{}\">0</text>\n",
        HEIGHT - MARGIN,
    ));
    out.push_str("</svg>\n");
    out
}

/// A histogram of small integer values (chain lengths, pool sizes).
pub fn histogram(title: &str, values: &[u32]) -> String {
    let mut out = header(title);
    let max_bucket = values.iter().copied().max().unwrap_or(0).min(30);
    let mut counts = vec![0u32; max_bucket as usize + 1];
    for &v in values {
        counts[v.min(max_bucket) as usize] += 1;
    }
    let max_count = counts.iter().copied().max().unwrap_or(0).max(1);
    let plot_w = WIDTH - MARGIN - 10.0;
    let plot_h = HEIGHT - MARGIN - 30.0;
    let bar_w = plot_w / counts.len() as f64;
    for (i, &c) in counts.iter().enumerate() {
        let bh = plot_h * f64::from(c) / f64::from(max_count);
        let x = MARGIN + bar_w * i as f64;
        let y = HEIGHT - MARGIN - bh;
        out.push_str(&format!(
            "<rect x=\"{:.1}\" y=\"{y:.1}\" width=\"{:.1}\" height=\"{bh:.1}\" \
             fill=\"{}\" stroke=\"white\"/>\n",
            x,
            (bar_w - 1.0).max(1.0),
            PALETTE[0],
        ));
        out.push_str(&format!(
            "<text x=\"{:.1}\" y=\"{}\">{i}</text>\n",
            x + bar_w / 2.0 - 4.0,
            HEIGHT - MARGIN + 16.0,
        ));
    }
    out.push_str(&format!(
        "<text x=\"6\" y=\"34\">{max_count}</text>\n"
    ));
    out.push_str("</svg>\n");
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn charts_are_valid_and_deterministic() {
        let series = vec![("node0".to_string(), vec![0, 2, 5, 3]), ("node1".to_string(), vec![1, 1, 0, 0])];
        let a = line_chart("pools", &series);
        let b = line_chart("pools", &series);
        assert_eq!(a, b);
        assert!(a.starts_with("<svg"));
        assert!(a.ends_with("</svg>\n"));
        assert!(a.contains("polyline"));

        let h = histogram("chains", &[1, 2, 2, 3]);
        assert!(h.starts_with("<svg"));
        assert!(h.contains("rect"));

        // Empty inputs still render a valid (axes-only) document.
        let empty = line_chart("empty", &[]);
        assert!(empty.starts_with("<svg") && empty.ends_with("</svg>\n"));
        let empty_h = histogram("empty", &[]);
        assert!(empty_h.starts_with("<svg"));
    }
}
