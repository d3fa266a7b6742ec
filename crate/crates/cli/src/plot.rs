//! Self-contained SVG plots. Every plotted number is embedded in a comment
//! block, rendered exactly as in the CSV outputs, so plots can be diffed.

use std::fmt::Write;

use thiserror::Error;

use crate::table::format_float;

#[derive(Debug, Error, PartialEq)]
pub enum PlotError {
    #[error("nothing to plot")]
    Empty,
    #[error("non-positive value {0} on a logarithmic axis")]
    NonPositive(f64),
    #[error("heatmap has {got} values for a {nx}x{ny} grid")]
    Shape { nx: usize, ny: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

const W: f64 = 480.0;
const H: f64 = 320.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd"];

struct Axis {
    lo: f64,
    hi: f64,
    log: bool,
}

impl Axis {
    fn fit(values: impl Iterator<Item = f64>, log: bool) -> Result<Axis, PlotError> {
        let (mut lo, mut hi) = (f64::INFINITY, f64::NEG_INFINITY);
        for v in values {
            if log && !(v > 0.0) {
                return Err(PlotError::NonPositive(v));
            }
            let t = if log { v.log10() } else { v };
            lo = lo.min(t);
            hi = hi.max(t);
        }
        if !lo.is_finite() {
            return Err(PlotError::Empty);
        }
        if hi - lo < 1e-12 {
            let pad = if lo == 0.0 { 1.0 } else { 0.1 * lo.abs() };
            lo -= pad;
            hi += pad;
        }
        Ok(Axis { lo, hi, log })
    }

    fn unit(&self, v: f64) -> f64 {
        let t = if self.log { v.log10() } else { v };
        (t - self.lo) / (self.hi - self.lo)
    }

    fn label(&self, u: f64) -> String {
        let t = self.lo + u * (self.hi - self.lo);
        let v = if self.log { 10f64.powf(t) } else { t };
        format!("{v:.3e}")
    }
}

fn data_comment(out: &mut String, header: &str, rows: impl Iterator<Item = Vec<f64>>) {
    out.push_str("<!-- data\n");
    out.push_str(header);
    out.push('\n');
    for row in rows {
        let line: Vec<String> = row.into_iter().map(format_float).collect();
        out.push_str(&line.join(","));
        out.push('\n');
    }
    out.push_str("-->\n");
}

fn panel(out: &mut String, x0: f64, title: &str, series: &[Series], log_x: bool, log_y: bool) -> Result<(), PlotError> {
    let xs = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.0)), log_x)?;
    let ys = Axis::fit(series.iter().flat_map(|s| s.points.iter().map(|p| p.1)), log_y)?;
    let (left, top) = (x0 + MARGIN, MARGIN / 2.0);
    let (pw, ph) = (W - 1.5 * MARGIN, H - 1.5 * MARGIN);
    let px = |v: f64| left + xs.unit(v) * pw;
    let py = |v: f64| top + (1.0 - ys.unit(v)) * ph;
    let _ = writeln!(
        out,
        r##"<g><rect x="{left}" y="{top}" width="{pw}" height="{ph}" fill="none" stroke="#333"/>"##
    );
    let _ = writeln!(
        out,
        r#"<text x="{}" y="{}" font-size="13" text-anchor="middle">{title}</text>"#,
        left + pw / 2.0,
        top - 8.0
    );
    for i in 0..=4 {
        let u = i as f64 / 4.0;
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="middle">{}</text>"#,
            left + u * pw,
            top + ph + 14.0,
            xs.label(u)
        );
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" text-anchor="end">{}</text>"#,
            left - 4.0,
            top + (1.0 - u) * ph + 3.0,
            ys.label(u)
        );
    }
    for (i, s) in series.iter().enumerate() {
        let color = COLORS[i % COLORS.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y))).collect();
        let _ = writeln!(
            out,
            r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#,
            pts.join(" ")
        );
        for &(x, y) in &s.points {
            let _ = writeln!(out, r#"<circle cx="{:.2}" cy="{:.2}" r="2.5" fill="{color}"/>"#, px(x), py(y));
        }
        let _ = writeln!(
            out,
            r#"<text x="{:.1}" y="{:.1}" font-size="10" fill="{color}">{}</text>"#,
            left + 6.0,
            top + 14.0 + 12.0 * i as f64,
            s.label
        );
    }
    out.push_str("</g>\n");
    Ok(())
}

fn open(out: &mut String, width: f64) {
    let _ = writeln!(
        out,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{H}" viewBox="0 0 {width} {H}">"#
    );
    out.push_str("<rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n");
}

/// δ(ρ) on a log-ρ axis next to ω(ρ, R) on log-log axes.
pub fn delta_omega(rho: &[f64], delta: &[f64], omega: &[f64]) -> Result<String, PlotError> {
    if rho.is_empty() || rho.len() != delta.len() || rho.len() != omega.len() {
        return Err(PlotError::Empty);
    }
    let mut out = String::new();
    open(&mut out, 2.0 * W);
    data_comment(
        &mut out,
        "rho,delta,omega",
        (0..rho.len()).map(|i| vec![rho[i], delta[i], omega[i]]),
    );
    let zip = |y: &[f64]| rho.iter().cloned().zip(y.iter().cloned()).collect::<Vec<_>>();
    panel(&mut out, 0.0, "delta(rho)", &[Series { label: "delta".into(), points: zip(delta) }], true, false)?;
    panel(&mut out, W, "omega(rho, R)", &[Series { label: "omega".into(), points: zip(omega) }], true, true)?;
    out.push_str("</svg>\n");
    Ok(out)
}

/// V(r) against r, log-log when every value is positive.
pub fn energy_decay(r: &[f64], v: &[f64]) -> Result<String, PlotError> {
    if r.is_empty() || r.len() != v.len() {
        return Err(PlotError::Empty);
    }
    let mut out = String::new();
    open(&mut out, W);
    data_comment(&mut out, "r,V", r.iter().zip(v).map(|(a, b)| vec![*a, *b]));
    let log_y = v.iter().all(|&x| x > 0.0);
    let points = r.iter().cloned().zip(v.iter().cloned()).collect();
    panel(&mut out, 0.0, "V(r)", &[Series { label: "V".into(), points }], true, log_y)?;
    out.push_str("</svg>\n");
    Ok(out)
}

/// Node values on the tensor grid `xs × ys`, first index fastest, as
/// coloured cells.
pub fn field_heatmap(xs: &[f64], ys: &[f64], values: &[f64]) -> Result<String, PlotError> {
    let (nx, ny) = (xs.len(), ys.len());
    if nx == 0 || ny == 0 {
        return Err(PlotError::Empty);
    }
    if values.len() != nx * ny {
        return Err(PlotError::Shape { nx, ny, got: values.len() });
    }
    let (lo, hi) = values
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let span = if hi > lo { hi - lo } else { 1.0 };
    let mut out = String::new();
    open(&mut out, W);
    data_comment(&mut out, "x,y,value", (0..values.len()).map(|k| vec![xs[k % nx], ys[k / nx], values[k]]));
    let size = (H - MARGIN).min(W - MARGIN);
    let (cw, ch) = (size / nx as f64, size / ny as f64);
    for (k, &v) in values.iter().enumerate() {
        let t = (v - lo) / span;
        let (r, b) = ((255.0 * t).round() as u8, (255.0 * (1.0 - t)).round() as u8);
        let _ = writeln!(
            out,
            r#"<rect x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="rgb({r},64,{b})"/>"#,
            MARGIN / 2.0 + (k % nx) as f64 * cw,
            MARGIN / 2.0 + (ny - 1 - k / nx) as f64 * ch,
            cw + 0.05,
            ch + 0.05
        );
    }
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" font-size="11">min {} max {}</text>"#,
        MARGIN / 2.0,
        H - 8.0,
        format_float(lo),
        format_float(hi)
    );
    out.push_str("</svg>\n");
    Ok(out)
}

/// Values of the embedded data block, row by row.
pub fn embedded_data(svg: &str) -> Vec<Vec<String>> {
    let Some(start) = svg.find("<!-- data\n") else {
        return Vec::new();
    };
    let body = &svg[start + 10..];
    let end = body.find("-->").unwrap_or(body.len());
    body[..end]
        .lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|l| l.split(',').map(str::to_string).collect())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_delta_gives_unit_slope_omega() {
        let rho = [0.5, 0.25, 0.125, 0.0625];
        let delta = [1.0; 4];
        let omega: Vec<f64> = rho.iter().map(|r| r / 0.5).collect();
        let svg = delta_omega(&rho, &delta, &omega).unwrap();
        let data = embedded_data(&svg);
        assert_eq!(data.len(), 4);
        for (row, r) in data.iter().zip(rho) {
            assert_eq!(row[0], format_float(r));
            assert_eq!(row[1], format_float(1.0));
        }
        let slopes: Vec<f64> = (1..4)
            .map(|i| (omega[i] / omega[i - 1]).ln() / (rho[i] / rho[i - 1]).ln())
            .collect();
        assert!(slopes.iter().all(|s| (s - 1.0).abs() < 1e-12));
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
    }

    #[test]
    fn energy_comment_matches_values() {
        let r = [0.1, 0.05, 0.025];
        let v = [3.0, 1.5, 0.7];
        let svg = energy_decay(&r, &v).unwrap();
        let data = embedded_data(&svg);
        assert_eq!(data[2], vec![format_float(0.025), format_float(0.7)]);
    }

    #[test]
    fn empty_and_bad_inputs_are_refused() {
        assert_eq!(energy_decay(&[], &[]), Err(PlotError::Empty));
        assert!(delta_omega(&[0.1], &[0.5], &[0.0]).is_err());
        assert!(matches!(field_heatmap(&[0.0, 1.0], &[0.0, 1.0], &[1.0]), Err(PlotError::Shape { .. })));
    }

    #[test]
    fn heatmap_of_unit_range() {
        let values: Vec<f64> = (0..16).map(|k| k as f64 / 15.0).collect();
        let axis = [0.0, 0.25, 0.5, 0.75];
        let svg = field_heatmap(&axis, &axis, &values).unwrap();
        assert!(svg.contains("rgb(0,64,255)") && svg.contains("rgb(255,64,0)"));
        assert_eq!(embedded_data(&svg).len(), 16);
    }
}
