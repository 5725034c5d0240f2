//! Plot-ready series files and optional SVG line charts from campaign CSVs.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};

use crate::output::{ACCEPTANCE_CSV, MASS_CSV, SPEEDUP_CSV};

type Series = BTreeMap<String, Vec<(f64, Vec<f64>)>>;

struct Table {
    header: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    fn read(path: &Path) -> Result<Self> {
        let mut r = csv::Reader::from_path(path).with_context(|| format!("reading {}", path.display()))?;
        let header = r.headers()?.iter().map(str::to_string).collect();
        let rows = r.records().collect::<std::result::Result<_, _>>()?;
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str, path: &Path) -> Result<usize> {
        match self.header.iter().position(|h| h == name) {
            Some(i) => Ok(i),
            None => bail!("{}: missing column `{name}`", path.display()),
        }
    }
}

fn num(rec: &csv::StringRecord, i: usize) -> Option<f64> {
    rec.get(i).and_then(|v| v.parse().ok())
}

fn sanitize(s: &str) -> String {
    s.chars()
        .map(|c| if c.is_ascii_alphanumeric() || c == '.' || c == '-' { c } else { '_' })
        .collect()
}

/// Groups rows by `key` columns into series of `(x, ys)`, sorted by x.
fn group(table: &Table, path: &Path, key: &[&str], x: &str, ys: &[&str]) -> Result<Series> {
    let keys = key.iter().map(|k| table.col(k, path)).collect::<Result<Vec<_>>>()?;
    let xi = table.col(x, path)?;
    let yis = ys.iter().map(|y| table.col(y, path)).collect::<Result<Vec<_>>>()?;
    let mut out = Series::new();
    for rec in &table.rows {
        let Some(xv) = num(rec, xi) else { continue };
        let Some(yv) = yis.iter().map(|&i| num(rec, i)).collect::<Option<Vec<_>>>() else {
            continue;
        };
        let name = keys.iter().map(|&i| sanitize(&rec[i])).collect::<Vec<_>>().join("_");
        out.entry(name).or_default().push((xv, yv));
    }
    for pts in out.values_mut() {
        pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    }
    Ok(out)
}

fn write_series(dir: &Path, prefix: &str, columns: &str, series: &Series, written: &mut Vec<PathBuf>) -> Result<()> {
    if series.is_empty() {
        let path = dir.join(format!("{prefix}.dat"));
        fs::write(&path, "")?;
        written.push(path);
        return Ok(());
    }
    for (name, pts) in series {
        let mut s = format!("# {columns}\n");
        for (x, ys) in pts {
            let ys: Vec<String> = ys.iter().map(f64::to_string).collect();
            let _ = writeln!(s, "{x} {}", ys.join(" "));
        }
        let path = dir.join(format!("{prefix}_{name}.dat"));
        fs::write(&path, s)?;
        written.push(path);
    }
    Ok(())
}

const PALETTE: &[&str] = &["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf"];

/// A self-contained line chart with a log-scaled x axis.
pub fn svg_chart(title: &str, x_label: &str, y_label: &str, series: &Series) -> String {
    let (w, h, ml, mr, mt, mb) = (640.0, 400.0, 70.0, 170.0, 40.0, 50.0);
    let pts = series.values().flatten().filter(|p| p.0 > 0.0);
    let (mut x0, mut x1, mut y0, mut y1) = (f64::INFINITY, f64::NEG_INFINITY, f64::INFINITY, f64::NEG_INFINITY);
    for (x, ys) in pts {
        x0 = x0.min(x.log10());
        x1 = x1.max(x.log10());
        y0 = y0.min(ys[0]);
        y1 = y1.max(ys[0]);
    }
    if !x0.is_finite() {
        (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
    }
    if x1 - x0 < 1e-9 {
        x1 = x0 + 1.0;
    }
    if y1 - y0 < 1e-9 {
        y1 = y0 + 1.0;
    }
    let pad = 0.05 * (y1 - y0);
    let (y0, y1) = (y0 - pad, y1 + pad);
    let px = |x: f64| ml + (x.log10() - x0) / (x1 - x0) * (w - ml - mr);
    let py = |y: f64| mt + (1.0 - (y - y0) / (y1 - y0)) * (h - mt - mb);
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="20" text-anchor="middle" font-size="14">{title}</text>"#, w / 2.0);
    let (left, right, top, bottom) = (ml, w - mr, mt, h - mb);
    let _ = writeln!(
        s,
        r#"<path d="M{left},{top} L{left},{bottom} L{right},{bottom}" fill="none" stroke="black"/>"#
    );
    for d in (x0.floor() as i32)..=(x1.ceil() as i32) {
        let v = 10f64.powi(d);
        let x = px(v);
        if x < left - 0.5 || x > right + 0.5 {
            continue;
        }
        let _ = writeln!(s, r#"<line x1="{x}" y1="{bottom}" x2="{x}" y2="{}" stroke="black"/>"#, bottom + 5.0);
        let _ = writeln!(s, r#"<text x="{x}" y="{}" text-anchor="middle">{v}</text>"#, bottom + 18.0);
    }
    for i in 0..=4 {
        let v = y0 + (y1 - y0) * i as f64 / 4.0;
        let y = py(v);
        let _ = writeln!(s, r#"<line x1="{}" y1="{y}" x2="{left}" y2="{y}" stroke="black"/>"#, left - 5.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{v:.3}</text>"#, left - 8.0, y + 4.0);
    }
    let _ = writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        (left + right) / 2.0,
        h - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="15" y="{}" text-anchor="middle" transform="rotate(-90 15 {})">{y_label}</text>"#,
        (top + bottom) / 2.0,
        (top + bottom) / 2.0
    );
    for (i, (name, pts)) in series.iter().enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let path: Vec<String> = pts
            .iter()
            .filter(|p| p.0 > 0.0)
            .map(|(x, ys)| format!("{:.2},{:.2}", px(*x), py(ys[0])))
            .collect();
        if !path.is_empty() {
            let _ = writeln!(
                s,
                r#"<polyline points="{}" fill="none" stroke="{color}" stroke-width="2"/>"#,
                path.join(" ")
            );
        }
        let ly = top + 16.0 * i as f64;
        let _ = writeln!(
            s,
            r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            right + 10.0,
            right + 30.0
        );
        let _ = writeln!(s, r#"<text x="{}" y="{}">{name}</text>"#, right + 35.0, ly + 4.0);
    }
    s.push_str("</svg>\n");
    s
}

/// Writes one whitespace-separated series file per curve found in the CSVs
/// of `dir` (and SVG charts when `svg` is set) into `out`.
pub fn emit_plot_data(dir: &Path, out: &Path, svg: bool) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let mut written = Vec::new();
    let mut found = false;
    let mut charts: Vec<(String, String, String, String, Series)> = Vec::new();

    let path = dir.join(MASS_CSV);
    if path.exists() {
        found = true;
        let t = Table::read(&path)?;
        let s = group(&t, &path, &["vocab_size"], "k_fraction", &["mean_top_k_mass", "k"])?;
        write_series(out, "mass", "k_fraction mean_top_k_mass k", &s, &mut written)?;
        let s = s.into_iter().map(|(k, v)| (format!("v{k}"), v)).collect();
        charts.push(("mass".into(), "Top-K probability mass".into(), "K / V".into(), "mass".into(), s));
    }
    let path = dir.join(ACCEPTANCE_CSV);
    if path.exists() {
        found = true;
        let t = Table::read(&path)?;
        let s = group(&t, &path, &["mode"], "k_stat", &["measured_alpha", "alpha_stderr", "mean_sigma"])?;
        write_series(out, "acceptance", "k_stat measured_alpha alpha_stderr mean_sigma", &s, &mut written)?;
        charts.push(("acceptance".into(), "Acceptance rate vs K".into(), "K".into(), "alpha".into(), s));
    }
    let path = dir.join(SPEEDUP_CSV);
    if path.exists() {
        found = true;
        let t = Table::read(&path)?;
        let s = group(&t, &path, &["convention", "mode", "truncation"], "rate_mbps", &["speedup", "throughput_tok_per_s"])?;
        write_series(out, "speedup", "rate_mbps speedup throughput_tok_per_s", &s, &mut written)?;
        let mut by_panel: BTreeMap<String, Series> = BTreeMap::new();
        for (name, pts) in s {
            let mut parts = name.splitn(3, '_');
            let panel = format!("{}_{}", parts.next().unwrap_or(""), parts.next().unwrap_or(""));
            let curve = parts.next().unwrap_or("").to_string();
            by_panel.entry(panel).or_default().insert(curve, pts);
        }
        for (panel, s) in by_panel {
            charts.push((
                format!("speedup_{panel}"),
                format!("Speedup vs uplink rate ({panel})"),
                "R_up (Mbit/s)".into(),
                "speedup".into(),
                s,
            ));
        }
    }
    if !found {
        bail!("{}: no campaign CSVs found", dir.display());
    }
    if svg {
        for (name, title, xl, yl, s) in charts {
            let path = out.join(format!("{name}.svg"));
            fs::write(&path, svg_chart(&title, &xl, &yl, &s))?;
            written.push(path);
        }
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn series_per_mode_and_missing_columns() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(
            dir.path().join(ACCEPTANCE_CSV),
            "mode,k_stat,measured_alpha,alpha_stderr,mean_sigma\nsc,5,0.7,0.01,0.1\nmc,5,0.8,0.01,0.1\nsc,1,0.5,0.01,0.4\nsc,,0.6,0.01,0.1\n",
        )
        .unwrap();
        let out = dir.path().join("plots");
        let files = emit_plot_data(dir.path(), &out, true).unwrap();
        let sc = fs::read_to_string(out.join("acceptance_sc.dat")).unwrap();
        assert_eq!(sc, "# k_stat measured_alpha alpha_stderr mean_sigma\n1 0.5 0.01 0.4\n5 0.7 0.01 0.1\n");
        assert!(out.join("acceptance_mc.dat").exists());
        assert!(files.iter().any(|f| f.ends_with("acceptance.svg")));

        fs::write(dir.path().join(MASS_CSV), "vocab_size,k\n1,2\n").unwrap();
        let e = emit_plot_data(dir.path(), &out, false).unwrap_err();
        assert!(e.to_string().contains("k_fraction"));
    }

    #[test]
    fn empty_tables_give_empty_files() {
        let dir = tempfile::tempdir().unwrap();
        fs::write(dir.path().join(SPEEDUP_CSV), "convention,mode,truncation,rate_mbps,speedup,throughput_tok_per_s\n").unwrap();
        emit_plot_data(dir.path(), dir.path(), true).unwrap();
        assert_eq!(fs::read_to_string(dir.path().join("speedup.dat")).unwrap(), "");
    }

    #[test]
    fn no_csvs_is_an_error() {
        let dir = tempfile::tempdir().unwrap();
        assert!(emit_plot_data(dir.path(), dir.path(), false).is_err());
    }
}
