//! Aggregates a sweep directory's per-seed metrics into a per-rate summary
//! and SVG line charts with standard-deviation bars. Output depends only on
//! `per_seed.csv`.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use navsim_core::metrics::mean_std;

use crate::io::{self, finite, num, read_records, write_rows};
use crate::run::PER_SEED;
use crate::Error;

pub const REPORT_SUMMARY: &str = "report_summary.csv";

/// Mean and standard deviation of one metric at each rate.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: &'static str,
    pub label: &'static str,
    pub rates: Vec<u32>,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

const METRICS: [(&str, &str); 3] = [
    ("route_diversity", "route diversity (edges)"),
    ("total_co2_mg", "total CO2 (kg)"),
    ("entropy_norm", "normalized CO2 entropy"),
];

pub fn series_from_per_seed(path: &Path) -> Result<Vec<Series>, Error> {
    let rows = read_records(path, io::METRICS_HEADER, |r| {
        let rate: u32 = io::field(r, 0, "rate")?;
        let vals = [
            finite(r, 2, "route_diversity")?,
            finite(r, 4, "total_co2_mg")?,
            finite(r, 5, "entropy_norm")?,
        ];
        Ok((rate, vals))
    })?;
    if rows.is_empty() {
        return Err(Error::Data {
            path: path.to_path_buf(),
            line: 2,
            msg: "no metric rows".into(),
        });
    }
    let mut by_rate: BTreeMap<u32, Vec<[f64; 3]>> = BTreeMap::new();
    for (_, (rate, v)) in rows {
        by_rate.entry(rate).or_default().push(v);
    }
    Ok(METRICS
        .iter()
        .enumerate()
        .map(|(k, &(name, label))| {
            let mut s = Series {
                name,
                label,
                rates: Vec::new(),
                mean: Vec::new(),
                std: Vec::new(),
            };
            for (&rate, vals) in &by_rate {
                let xs: Vec<f64> = vals.iter().map(|v| v[k]).collect();
                let (m, sd) = mean_std(&xs);
                s.rates.push(rate);
                s.mean.push(m);
                s.std.push(sd);
            }
            s
        })
        .collect())
}

/// Writes `report_summary.csv` and one SVG per metric into `out`; returns
/// the files written.
pub fn write_report(run_dir: &Path, out: &Path) -> Result<Vec<PathBuf>, Error> {
    let series = series_from_per_seed(&run_dir.join(PER_SEED))?;
    let mut written = Vec::new();
    let summary = out.join(REPORT_SUMMARY);
    let mut header = vec!["rate".to_string()];
    for s in &series {
        header.push(format!("{}_mean", s.name));
        header.push(format!("{}_std", s.name));
    }
    let header_refs: Vec<&str> = header.iter().map(String::as_str).collect();
    write_rows(
        &summary,
        &header_refs,
        (0..series[0].rates.len()).map(|i| {
            let mut row = vec![series[0].rates[i].to_string()];
            for s in &series {
                row.push(num(s.mean[i]));
                row.push(num(s.std[i]));
            }
            row
        }),
    )?;
    written.push(summary);
    for s in &series {
        let p = out.join(format!("{}.svg", s.name));
        io::write_text(&p, &svg_chart(s))?;
        written.push(p);
    }
    Ok(written)
}

/// Round tick step near `span / 5`: 1, 2 or 5 times a power of ten.
fn tick_step(span: f64) -> f64 {
    if span.is_nan() || span <= 0.0 {
        return 1.0;
    }
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let r = raw / mag;
    mag * if r < 1.5 {
        1.0
    } else if r < 3.5 {
        2.0
    } else if r < 7.5 {
        5.0
    } else {
        10.0
    }
}

pub fn svg_chart(s: &Series) -> String {
    const W: f64 = 640.0;
    const H: f64 = 400.0;
    const L: f64 = 80.0;
    const R: f64 = 20.0;
    const T: f64 = 40.0;
    const B: f64 = 50.0;
    // milligrams are charted as kilograms
    let k = if s.name == "total_co2_mg" { 1e-6 } else { 1.0 };
    let mean: Vec<f64> = s.mean.iter().map(|m| m * k).collect();
    let std: Vec<f64> = s.std.iter().map(|d| d * k).collect();
    let lo = mean
        .iter()
        .zip(&std)
        .map(|(m, d)| m - d)
        .fold(f64::INFINITY, f64::min);
    let hi = mean
        .iter()
        .zip(&std)
        .map(|(m, d)| m + d)
        .fold(f64::NEG_INFINITY, f64::max);
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        lo.abs().max(1.0) * 0.05
    };
    let step = tick_step(hi - lo + 2.0 * pad);
    let y0 = ((lo - pad) / step).floor() * step;
    let y1 = ((hi + pad) / step).ceil() * step;
    let (x0, x1) = (0.0, 100.0);
    let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
    let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

    let mut o = String::new();
    let _ = writeln!(
        o,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(o, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(
        o,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{} vs adoption rate</text>"#,
        W / 2.0,
        s.label
    );
    let mut y = y0;
    while y <= y1 + step * 1e-9 {
        let v = py(y);
        let _ = writeln!(
            o,
            r##"<line x1="{L}" y1="{v:.2}" x2="{:.2}" y2="{v:.2}" stroke="#ddd"/><text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"##,
            W - R,
            L - 6.0,
            v + 4.0,
            fmt_tick(y, step)
        );
        y += step;
    }
    for r in (0..=100).step_by(10) {
        let u = px(f64::from(r));
        let _ = writeln!(
            o,
            r#"<line x1="{u:.2}" y1="{:.2}" x2="{u:.2}" y2="{:.2}" stroke="black"/><text x="{u:.2}" y="{:.2}" text-anchor="middle">{r}</text>"#,
            H - B,
            H - B + 5.0,
            H - B + 19.0
        );
    }
    let _ = writeln!(
        o,
        r#"<polyline points="{L},{T} {L},{hb} {wr},{hb}" fill="none" stroke="black"/>"#,
        hb = H - B,
        wr = W - R
    );
    let _ = writeln!(
        o,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">adoption rate r (%)</text>"#,
        (L + W - R) / 2.0,
        H - 10.0
    );
    let pts: Vec<String> = s
        .rates
        .iter()
        .zip(&mean)
        .map(|(&r, &m)| format!("{:.2},{:.2}", px(f64::from(r)), py(m)))
        .collect();
    let _ = writeln!(
        o,
        r##"<polyline points="{}" fill="none" stroke="#1f77b4" stroke-width="2"/>"##,
        pts.join(" ")
    );
    for ((&r, &m), &d) in s.rates.iter().zip(&mean).zip(&std) {
        let u = px(f64::from(r));
        let _ = writeln!(
            o,
            r##"<line x1="{u:.2}" y1="{:.2}" x2="{u:.2}" y2="{:.2}" stroke="#1f77b4"/><circle cx="{u:.2}" cy="{:.2}" r="3.5" fill="#1f77b4"/>"##,
            py(m - d),
            py(m + d),
            py(m)
        );
    }
    o.push_str("</svg>\n");
    o
}

fn fmt_tick(v: f64, step: f64) -> String {
    let decimals = if step >= 1.0 {
        0
    } else {
        (-step.log10().floor()) as usize
    };
    format!("{v:.decimals$}")
}
