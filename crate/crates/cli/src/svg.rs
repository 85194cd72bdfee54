//! Minimal SVG line chart for lip-distance curves.

use std::fmt::Write as _;

use stylemotion::Error;

pub struct Chart {
    pub labels: Vec<String>,
    /// One series per label, all of equal length.
    pub series: Vec<Vec<f64>>,
}

/// Reads a CSV whose first column is the frame index and whose remaining
/// columns are one curve each.
pub fn parse_curves(text: &str) -> stylemotion::Result<Chart> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Config("empty CSV".into()))?;
    let labels: Vec<String> = header.split(',').skip(1).map(str::to_string).collect();
    if labels.is_empty() {
        return Err(Error::Config("CSV has no data columns".into()));
    }
    let mut series = vec![Vec::new(); labels.len()];
    for (row, line) in lines.enumerate() {
        let cells: Vec<&str> = line.split(',').skip(1).collect();
        if cells.len() != labels.len() {
            return Err(Error::Config(format!("CSV row {} has {} values, expected {}", row + 1, cells.len(), labels.len())));
        }
        for (s, c) in series.iter_mut().zip(cells) {
            let v: f64 = c
                .trim()
                .parse()
                .map_err(|_| Error::Config(format!("CSV row {}: {c:?} is not a number", row + 1)))?;
            s.push(v);
        }
    }
    if series[0].is_empty() {
        return Err(Error::Config("CSV has no rows".into()));
    }
    Ok(Chart { labels, series })
}

const W: f64 = 640.0;
const H: f64 = 360.0;
const PAD: f64 = 40.0;
const COLORS: [&str; 6] = ["#1b9e77", "#d95f02", "#7570b3", "#e7298a", "#66a61e", "#e6ab02"];

pub fn render(chart: &Chart) -> String {
    let n = chart.series[0].len();
    let all = chart.series.iter().flatten().copied().filter(|v| v.is_finite());
    let (lo, hi) = all.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let x = |t: usize| PAD + (W - 2.0 * PAD) * t as f64 / (n.max(2) - 1) as f64;
    let y = |v: f64| H - PAD - (H - 2.0 * PAD) * (v - lo) / span;
    let mut out = String::new();
    writeln!(out, r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}">"#).unwrap();
    writeln!(out, r#"<rect width="{W}" height="{H}" fill="white"/>"#).unwrap();
    writeln!(
        out,
        r#"<path d="M{PAD} {PAD} V{} H{}" fill="none" stroke="black"/>"#,
        H - PAD,
        W - PAD
    )
    .unwrap();
    writeln!(out, r#"<text x="{PAD}" y="{}" font-size="11">{lo:.3}</text>"#, H - PAD + 14.0).unwrap();
    writeln!(out, r#"<text x="{PAD}" y="{}" font-size="11">{hi:.3}</text>"#, PAD - 6.0).unwrap();
    for (k, (label, s)) in chart.labels.iter().zip(&chart.series).enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = s.iter().enumerate().map(|(t, &v)| format!("{:.2},{:.2}", x(t), y(v))).collect();
        writeln!(out, r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="1.5"/>"#, pts.join(" ")).unwrap();
        let ly = PAD + 14.0 * k as f64;
        writeln!(out, r#"<text x="{}" y="{ly}" font-size="11" fill="{color}">{}</text>"#, W - PAD - 90.0, escape(label)).unwrap();
    }
    out.push_str("</svg>\n");
    out
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_and_renders() {
        let chart = parse_curves("frame,a,b\n0,1,2\n1,2,3\n").unwrap();
        assert_eq!(chart.series, vec![vec![1.0, 2.0], vec![2.0, 3.0]]);
        let svg = render(&chart);
        assert_eq!(svg.matches("<polyline").count(), 2);
        assert!(parse_curves("frame,a\n0,x\n").is_err());
        assert!(parse_curves("frame,a\n").is_err());
    }
}
