use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use super::lifetime::{CURVE_HEADER, LIFETIME_HEADER};
use super::read_csv;
use super::sweep::SWEEP_HEADER;
use crate::error::{Error, Result};

const W: f64 = 640.0;
const H: f64 = 400.0;
const ML: f64 = 70.0;
const MR: f64 = 130.0;
const MT: f64 = 40.0;
const MB: f64 = 50.0;
const COLORS: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#7f7f7f"];

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

fn esc(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

fn header(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, r##"<rect width="{W}" height="{H}" fill="#ffffff"/>"##);
    let _ = writeln!(s, r#"<text x="{:.1}" y="22" text-anchor="middle" font-size="14">{}</text>"#, W / 2.0, esc(title));
    s
}

fn ticks(lo: f64, hi: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| lo + (hi - lo) * i as f64 / n as f64).collect()
}

/// Line chart; with `log_y` the y axis is log10 and non-positive points are dropped.
pub fn svg_line_chart(title: &str, x_label: &str, y_label: &str, log_y: bool, series: &[Series]) -> String {
    let ty = |y: f64| if log_y { y.log10() } else { y };
    let pts: Vec<(f64, f64)> = series
        .iter()
        .flat_map(|s| s.points.iter().copied())
        .filter(|p| !log_y || p.1 > 0.0)
        .map(|(x, y)| (x, ty(y)))
        .collect();
    let (mut x0, mut x1, mut y0, mut y1) = (0.0, 1.0, 0.0, 1.0);
    if !pts.is_empty() {
        x0 = pts.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        x1 = pts.iter().map(|p| p.0).fold(f64::NEG_INFINITY, f64::max);
        y0 = pts.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        y1 = pts.iter().map(|p| p.1).fold(f64::NEG_INFINITY, f64::max);
        if log_y {
            y0 = y0.floor();
            y1 = y1.ceil();
        }
    }
    if x1 <= x0 {
        x1 = x0 + 1.0;
    }
    if y1 <= y0 {
        y1 = y0 + 1.0;
    }
    let px = |x: f64| ML + (x - x0) / (x1 - x0) * (W - ML - MR);
    let py = |y: f64| H - MB - (y - y0) / (y1 - y0) * (H - MT - MB);

    let mut s = header(title);
    let _ = writeln!(
        s,
        r##"<rect x="{ML}" y="{MT}" width="{:.1}" height="{:.1}" fill="none" stroke="#000"/>"##,
        W - ML - MR,
        H - MT - MB
    );
    for x in ticks(x0, x1, 5) {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, px(x), H - MB + 16.0, fmt_tick(x));
    }
    let ny = if log_y { ((y1 - y0) as usize).clamp(1, 10) } else { 5 };
    for y in ticks(y0, y1, ny) {
        let label = if log_y { format!("1e{}", y.round() as i64) } else { fmt_tick(y) };
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{label}</text>"#, ML - 6.0, py(y) + 4.0);
        let _ = writeln!(s, r##"<line x1="{ML}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#dddddd"/>"##, py(y), W - MR);
    }
    let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#, ML + (W - ML - MR) / 2.0, H - 12.0, esc(x_label));
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"#,
        MT + (H - MT - MB) / 2.0,
        esc(y_label)
    );
    for (i, ser) in series.iter().enumerate() {
        let c = COLORS[i % COLORS.len()];
        let path: Vec<String> = ser
            .points
            .iter()
            .filter(|p| !log_y || p.1 > 0.0)
            .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(ty(y))))
            .collect();
        let _ = writeln!(s, r#"<polyline fill="none" stroke="{c}" stroke-width="1.5" points="{}"/>"#, path.join(" "));
        let ly = MT + 14.0 + 16.0 * i as f64;
        let _ = writeln!(s, r#"<line x1="{:.1}" y1="{ly:.1}" x2="{:.1}" y2="{ly:.1}" stroke="{c}" stroke-width="2"/>"#, W - MR + 10.0, W - MR + 28.0);
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}">{}</text>"#, W - MR + 32.0, ly + 4.0, esc(&ser.name));
    }
    s.push_str("</svg>\n");
    s
}

/// Vertical bar chart starting at zero.
pub fn svg_bar_chart(title: &str, y_label: &str, bars: &[(String, f64)]) -> String {
    let ymax = bars.iter().map(|b| b.1).fold(0.0, f64::max);
    let ymax = if ymax > 0.0 { ymax * 1.1 } else { 1.0 };
    let py = |y: f64| H - MB - y / ymax * (H - MT - MB);
    let mut s = header(title);
    let pw = W - ML - 30.0;
    let _ = writeln!(s, r##"<line x1="{ML}" y1="{0:.1}" x2="{1:.1}" y2="{0:.1}" stroke="#000"/>"##, H - MB, ML + pw);
    for y in ticks(0.0, ymax, 5) {
        let _ = writeln!(s, r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#, ML - 6.0, py(y) + 4.0, fmt_tick(y));
    }
    let _ = writeln!(
        s,
        r#"<text x="16" y="{0:.1}" text-anchor="middle" transform="rotate(-90 16 {0:.1})">{1}</text>"#,
        MT + (H - MT - MB) / 2.0,
        esc(y_label)
    );
    let slot = pw / bars.len().max(1) as f64;
    for (i, (name, v)) in bars.iter().enumerate() {
        let x = ML + slot * i as f64 + slot * 0.15;
        let c = COLORS[i % COLORS.len()];
        let _ = writeln!(
            s,
            r#"<rect x="{x:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{c}"/>"#,
            py(*v),
            slot * 0.7,
            (H - MB - py(*v)).max(0.0)
        );
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.1}" text-anchor="middle">{}</text>"#, x + slot * 0.35, H - MB + 16.0, esc(name));
        let _ = writeln!(s, r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">{}</text>"#, x + slot * 0.35, py(*v) - 4.0, fmt_tick(*v));
    }
    s.push_str("</svg>\n");
    s
}

fn fmt_tick(v: f64) -> String {
    if v != 0.0 && (v.abs() >= 1e5 || v.abs() < 1e-2) {
        format!("{v:.1e}")
    } else if v.fract() == 0.0 {
        format!("{v:.0}")
    } else {
        format!("{v:.2}")
    }
}

fn num(s: &str, what: &str) -> Result<f64> {
    s.parse::<f64>().map_err(|_| Error::Schema(format!("{what}: not a number: {s:?}")))
}

// Series keyed by the label column, in first-appearance order.
fn group(rows: &[Vec<String>], xi: usize, label: usize, yi: usize) -> Result<Vec<Series>> {
    let mut out: Vec<Series> = Vec::new();
    for r in rows {
        let (x, y) = (num(&r[xi], "x")?, num(&r[yi], "y")?);
        match out.iter_mut().find(|s| s.name == r[label]) {
            Some(s) => s.points.push((x, y)),
            None => out.push(Series {
                name: r[label].clone(),
                points: vec![(x, y)],
            }),
        }
    }
    Ok(out)
}

/// Render the charts for a CSV written by the harness. The schema is
/// recognized from the header; anything else is an error.
pub fn emit_plots(csv_path: &Path, out_dir: &Path) -> Result<Vec<PathBuf>> {
    let (header, rows) = read_csv(csv_path)?;
    let stem = csv_path.file_stem().and_then(|s| s.to_str()).unwrap_or("plot").to_string();
    let h: Vec<&str> = header.iter().map(String::as_str).collect();
    let mut charts: Vec<(String, String)> = Vec::new();
    if h == SWEEP_HEADER {
        let avg = group(&rows, 0, 1, 2)?;
        let worst = group(&rows, 0, 1, 3)?;
        charts.push((format!("{stem}_avg.svg"), svg_line_chart("Average RBER", "P/E cycles", "RBER", true, &avg)));
        charts.push((format!("{stem}_worst.svg"), svg_line_chart("Worst-page RBER", "P/E cycles", "RBER", true, &worst)));
    } else if h == CURVE_HEADER {
        let s = group(&rows, 0, 1, 2)?;
        charts.push((format!("{stem}.svg"), svg_line_chart("Worst-case RBER", "P/E cycles", "RBER", true, &s)));
    } else if h == LIFETIME_HEADER {
        let bars = rows.iter().map(|r| Ok((r[0].clone(), num(&r[3], "improvement")?))).collect::<Result<Vec<_>>>()?;
        let ecc = rows.iter().map(|r| Ok((r[0].clone(), 100.0 * num(&r[6], "ecc_reduction")?))).collect::<Result<Vec<_>>>()?;
        charts.push((format!("{stem}.svg"), svg_bar_chart("Lifetime relative to baseline", "x baseline", &bars)));
        charts.push((format!("{stem}_ecc.svg"), svg_bar_chart("ECC redundancy reduction", "%", &ecc)));
    } else {
        return Err(Error::Schema(format!(
            "{}: unrecognized header [{}]; expected a sweep, lifetime or lifetime curve CSV",
            csv_path.display(),
            header.join(",")
        )));
    }
    std::fs::create_dir_all(out_dir)?;
    let mut written = Vec::new();
    for (name, svg) in charts {
        let p = out_dir.join(name);
        std::fs::write(&p, svg)?;
        written.push(p);
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::write_csv;

    fn sweep_csv(dir: &Path) -> PathBuf {
        let p = dir.join("sweep.csv");
        let rows = vec![
            vec!["0".into(), "sota".into(), "1e-4".into(), "2e-4".into(), "1".into()],
            vec!["1000".into(), "sota".into(), "2e-4".into(), "3e-4".into(), "1".into()],
        ];
        write_csv(std::fs::File::create(&p).unwrap(), "h", 1, &SWEEP_HEADER, &rows).unwrap();
        p
    }

    #[test]
    fn plots_are_byte_stable() {
        let d = tempfile::tempdir().unwrap();
        let p = sweep_csv(d.path());
        let a = emit_plots(&p, &d.path().join("a")).unwrap();
        let b = emit_plots(&p, &d.path().join("b")).unwrap();
        assert_eq!(a.len(), 2);
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(std::fs::read(x).unwrap(), std::fs::read(y).unwrap());
        }
        let svg = std::fs::read_to_string(&a[0]).unwrap();
        assert!(svg.starts_with("<svg") && svg.contains("polyline"));
    }

    #[test]
    fn schema_mismatch() {
        let d = tempfile::tempdir().unwrap();
        let p = d.path().join("x.csv");
        std::fs::write(&p, "a,b\n1,2\n").unwrap();
        assert!(matches!(emit_plots(&p, d.path()), Err(Error::Schema(_))));
    }
}
