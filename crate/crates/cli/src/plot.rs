//! Standalone SVG line charts for training metrics.

/// One parsed metrics row: episode index plus the numeric columns.
pub struct MetricsRow {
    pub episode: f64,
    pub undiscounted: f64,
    pub total_loss: f64,
}

const HEADER: &str = "episode,undiscounted,discounted,completion_step,captures,l1,mi,total_loss";

pub fn parse_metrics(text: &str) -> Result<Vec<MetricsRow>, String> {
    let mut lines = text.lines();
    match lines.next() {
        Some(h) if h.trim() == HEADER => {}
        Some(h) => return Err(format!("unexpected header {:?}", h)),
        None => return Err("empty file".into()),
    }
    let mut rows = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 8 {
            return Err(format!("line {}: expected 8 fields", i + 2));
        }
        let num = |j: usize| -> Result<f64, String> {
            fields[j]
                .parse::<f64>()
                .map_err(|_| format!("line {}: bad number {:?}", i + 2, fields[j]))
        };
        rows.push(MetricsRow {
            episode: num(0)?,
            undiscounted: num(1)?,
            total_loss: num(7)?,
        });
    }
    if rows.is_empty() {
        return Err("no data rows".into());
    }
    Ok(rows)
}

const W: f64 = 800.0;
const H: f64 = 500.0;
const ML: f64 = 80.0; // left margin
const MR: f64 = 30.0;
const MT: f64 = 50.0;
const MB: f64 = 60.0;

fn span(values: &[f64]) -> (f64, f64) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

/// Single-series line chart as a self-contained SVG document.
pub fn line_chart(title: &str, x_label: &str, y_label: &str, xs: &[f64], ys: &[f64]) -> String {
    assert_eq!(xs.len(), ys.len());
    let (x0, x1) = span(xs);
    let (y0, y1) = span(ys);
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);
    let points: Vec<String> = xs
        .iter()
        .zip(ys.iter())
        .map(|(x, y)| format!("{:.2},{:.2}", px(*x), py(*y)))
        .collect();
    format!(
        concat!(
            "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" viewBox=\"0 0 {w} {h}\">\n",
            "<rect width=\"{w}\" height=\"{h}\" fill=\"white\"/>\n",
            "<text x=\"{tx}\" y=\"28\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"18\">{title}</text>\n",
            "<line x1=\"{ml}\" y1=\"{yb}\" x2=\"{xr}\" y2=\"{yb}\" stroke=\"black\"/>\n",
            "<line x1=\"{ml}\" y1=\"{mt}\" x2=\"{ml}\" y2=\"{yb}\" stroke=\"black\"/>\n",
            "<text x=\"{tx}\" y=\"{xlt}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\">{xl}</text>\n",
            "<text x=\"18\" y=\"{ylt}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"13\" transform=\"rotate(-90 18 {ylt})\">{yl}</text>\n",
            "<text x=\"{ml}\" y=\"{tick}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{xmin}</text>\n",
            "<text x=\"{xr}\" y=\"{tick}\" text-anchor=\"middle\" font-family=\"sans-serif\" font-size=\"11\">{xmax}</text>\n",
            "<text x=\"{yt}\" y=\"{yb2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{ymin}</text>\n",
            "<text x=\"{yt}\" y=\"{mt2}\" text-anchor=\"end\" font-family=\"sans-serif\" font-size=\"11\">{ymax}</text>\n",
            "<polyline fill=\"none\" stroke=\"#1f77b4\" stroke-width=\"1.5\" points=\"{pts}\"/>\n",
            "</svg>\n"
        ),
        w = W,
        h = H,
        tx = (ML + W - MR) / 2.0,
        title = title,
        ml = ML,
        mt = MT,
        xr = W - MR,
        yb = H - MB,
        xlt = H - 20.0,
        xl = x_label,
        ylt = (MT + H - MB) / 2.0,
        yl = y_label,
        tick = H - MB + 18.0,
        xmin = format_tick(x0),
        xmax = format_tick(x1),
        yt = ML - 8.0,
        yb2 = H - MB + 4.0,
        mt2 = MT + 4.0,
        ymin = format_tick(y0),
        ymax = format_tick(y1),
        pts = points.join(" "),
    )
}

fn format_tick(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e9 {
        format!("{}", v as i64)
    } else {
        format!("{:.3}", v)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_well_formed_metrics() {
        let text = format!("{}\n0,1.5,1.2,40,1,0.5,0.1,0.4\n1,2.5,2.0,38,1,0.4,0.2,0.2\n", HEADER);
        let rows = parse_metrics(&text).unwrap();
        assert_eq!(rows.len(), 2);
        assert_eq!(rows[1].undiscounted, 2.5);
        assert_eq!(rows[1].total_loss, 0.2);
    }

    #[test]
    fn rejects_malformed_metrics() {
        assert!(parse_metrics("").is_err());
        assert!(parse_metrics("bad,header\n").is_err());
        assert!(parse_metrics(&format!("{}\n", HEADER)).is_err());
        assert!(parse_metrics(&format!("{}\n1,2\n", HEADER)).is_err());
        assert!(parse_metrics(&format!("{}\n0,a,1,1,1,1,1,1\n", HEADER)).is_err());
    }

    #[test]
    fn two_rows_make_a_two_point_polyline() {
        let svg = line_chart("t", "x", "y", &[0.0, 1.0], &[3.0, 4.0]);
        let points = svg
            .split("points=\"")
            .nth(1)
            .unwrap()
            .split('"')
            .next()
            .unwrap();
        assert_eq!(points.split_whitespace().count(), 2);
        assert!(svg.starts_with("<svg"));
        assert!(svg.ends_with("</svg>\n"));
    }

    #[test]
    fn chart_bytes_are_deterministic() {
        let a = line_chart("t", "x", "y", &[0.0, 1.0, 2.0], &[5.0, -1.0, 2.5]);
        let b = line_chart("t", "x", "y", &[0.0, 1.0, 2.0], &[5.0, -1.0, 2.5]);
        assert_eq!(a, b);
    }

    #[test]
    fn flat_series_still_render() {
        let svg = line_chart("t", "x", "y", &[0.0, 1.0], &[2.0, 2.0]);
        assert!(svg.contains("polyline"));
    }
}
