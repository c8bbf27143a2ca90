//! Text artifacts: per-epoch metrics CSV, sweep CSV, confusion matrices and
//! SVG line plots.
//!
//! Floats are written with Rust's shortest round-trip formatting, so every
//! value parses back to the identical `f64`.

use std::fmt::Write as _;

use crate::config::Mode;
use crate::error::{Error, Result};
use crate::trainer::{ConfusionMatrix, EpochStats};

pub const METRICS_HEADER: &str = "epoch,test_acc,L_s,L_c,confident_frac,seconds";
pub const SWEEP_HEADER: &str = "mode,noise_kind,noise_rate,k,seed,max_acc,last5_mean";

/// One line of the metrics CSV.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricsRow {
    pub epoch: usize,
    pub test_acc: f64,
    pub supervised: f64,
    pub consistency: f64,
    pub confident_frac: f64,
    /// 0 when timing was not recorded.
    pub seconds: f64,
}

impl From<&EpochStats> for MetricsRow {
    fn from(e: &EpochStats) -> Self {
        MetricsRow {
            epoch: e.epoch,
            test_acc: e.test_accuracy,
            supervised: e.mean_supervised,
            consistency: e.mean_consistency,
            confident_frac: e.confident_fraction,
            seconds: e.seconds.unwrap_or(0.0),
        }
    }
}

fn malformed(what: &'static str, line: usize, detail: impl std::fmt::Display) -> Error {
    Error::Malformed {
        what,
        detail: format!("line {line}: {detail}"),
    }
}

fn field<T: std::str::FromStr>(what: &'static str, line: usize, name: &str, v: &str) -> Result<T> {
    v.parse()
        .map_err(|_| malformed(what, line, format!("bad {name} {v:?}")))
}

/// Splits a CSV body into rows of `columns` fields after checking the header.
fn csv_rows<'a>(
    what: &'static str,
    text: &'a str,
    header: &str,
    columns: usize,
) -> Result<Vec<(usize, Vec<&'a str>)>> {
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h == header => {}
        Some((_, h)) => return Err(malformed(what, 1, format!("unexpected header {h:?}"))),
        None => return Err(malformed(what, 1, "empty file")),
    }
    lines
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| {
            let f: Vec<&str> = l.split(',').collect();
            if f.len() != columns {
                return Err(malformed(
                    what,
                    i + 1,
                    format!("expected {columns} fields, found {}", f.len()),
                ));
            }
            Ok((i + 1, f))
        })
        .collect()
}

pub fn metrics_csv(rows: &[MetricsRow]) -> String {
    let mut s = String::from(METRICS_HEADER);
    s.push('\n');
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.epoch, r.test_acc, r.supervised, r.consistency, r.confident_frac, r.seconds
        );
    }
    s
}

pub fn parse_metrics_csv(text: &str) -> Result<Vec<MetricsRow>> {
    const W: &str = "metrics csv";
    csv_rows(W, text, METRICS_HEADER, 6)?
        .into_iter()
        .map(|(n, f)| {
            Ok(MetricsRow {
                epoch: field(W, n, "epoch", f[0])?,
                test_acc: field(W, n, "test_acc", f[1])?,
                supervised: field(W, n, "L_s", f[2])?,
                consistency: field(W, n, "L_c", f[3])?,
                confident_frac: field(W, n, "confident_frac", f[4])?,
                seconds: field(W, n, "seconds", f[5])?,
            })
        })
        .collect()
}

/// One line of the sweep CSV. `k` is empty for modes that ignore it.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepRow {
    pub mode: Mode,
    pub noise_kind: String,
    pub noise_rate: f64,
    pub k: Option<usize>,
    pub seed: u64,
    pub max_acc: f64,
    pub last5_mean: f64,
}

pub fn sweep_csv(rows: &[SweepRow]) -> String {
    let mut s = String::from(SWEEP_HEADER);
    s.push('\n');
    for r in rows {
        let k = r.k.map(|k| k.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.mode, r.noise_kind, r.noise_rate, k, r.seed, r.max_acc, r.last5_mean
        );
    }
    s
}

pub fn parse_sweep_csv(text: &str) -> Result<Vec<SweepRow>> {
    const W: &str = "sweep csv";
    csv_rows(W, text, SWEEP_HEADER, 7)?
        .into_iter()
        .map(|(n, f)| {
            Ok(SweepRow {
                mode: f[0].parse().map_err(|e| malformed(W, n, e))?,
                noise_kind: f[1].to_string(),
                noise_rate: field(W, n, "noise_rate", f[2])?,
                k: match f[3] {
                    "" => None,
                    v => Some(field(W, n, "k", v)?),
                },
                seed: field(W, n, "seed", f[4])?,
                max_acc: field(W, n, "max_acc", f[5])?,
                last5_mean: field(W, n, "last5_mean", f[6])?,
            })
        })
        .collect()
}

/// Right-aligned table with true classes down the side and predicted
/// classes across the top.
pub fn confusion_text(m: &ConfusionMatrix, names: Option<&[&str]>) -> String {
    let c = m.classes();
    let label = |i: usize| match names {
        Some(n) if i < n.len() => n[i].to_string(),
        _ => i.to_string(),
    };
    let mut width = (0..c).map(|i| label(i).len()).max().unwrap_or(1);
    for t in 0..c {
        for p in 0..c {
            width = width.max(m.get(t, p).to_string().len());
        }
    }
    let corner = "true\\pred";
    let first = (0..c).map(|i| label(i).len()).max().unwrap_or(1).max(corner.len());
    let mut s = format!("{corner:>first$}");
    for p in 0..c {
        let _ = write!(s, " {:>width$}", label(p));
    }
    s.push('\n');
    for t in 0..c {
        let _ = write!(s, "{:>first$}", label(t));
        for p in 0..c {
            let _ = write!(s, " {:>width$}", m.get(t, p));
        }
        s.push('\n');
    }
    let _ = writeln!(
        s,
        "accuracy {} ({} / {})",
        m.accuracy(),
        m.trace(),
        m.total()
    );
    s
}

pub fn confusion_csv(m: &ConfusionMatrix) -> String {
    let c = m.classes();
    let mut s = String::from("true\\pred");
    for p in 0..c {
        let _ = write!(s, ",{p}");
    }
    s.push('\n');
    for t in 0..c {
        s.push_str(&t.to_string());
        for p in 0..c {
            let _ = write!(s, ",{}", m.get(t, p));
        }
        s.push('\n');
    }
    s
}

pub fn parse_confusion_csv(text: &str) -> Result<ConfusionMatrix> {
    const W: &str = "confusion csv";
    let mut lines = text.lines().filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| malformed(W, 1, "empty file"))?;
    let c = header.split(',').count() - 1;
    let mut counts = Vec::with_capacity(c * c);
    for (i, line) in lines.enumerate() {
        let f: Vec<&str> = line.split(',').collect();
        if f.len() != c + 1 || f[0] != i.to_string() {
            return Err(malformed(W, i + 2, "row does not match the header"));
        }
        for v in &f[1..] {
            counts.push(field(W, i + 2, "count", v)?);
        }
    }
    ConfusionMatrix::from_counts(c, counts)
}

/// One named polyline.
#[derive(Debug, Clone, PartialEq)]
pub struct Series {
    pub name: String,
    pub points: Vec<(f64, f64)>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LinePlot {
    pub title: String,
    pub x_label: String,
    pub y_label: String,
    pub series: Vec<Series>,
}

const PALETTE: [&str; 8] = [
    "#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b", "#e377c2", "#17becf",
];

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for ch in s.chars() {
        match ch {
            '&' => out.push_str("&amp;"),
            '<' => out.push_str("&lt;"),
            '>' => out.push_str("&gt;"),
            '"' => out.push_str("&quot;"),
            '\'' => out.push_str("&apos;"),
            _ => out.push(ch),
        }
    }
    out
}

/// Roughly five round tick values covering `[lo, hi]`.
fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let span = hi - lo;
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    let step = [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|&s| s >= raw)
        .unwrap_or(10.0 * mag);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step).floor() as i64;
    (first..=last).map(|i| i as f64 * step).collect()
}

fn tick_label(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s == "-0" { "0".into() } else { s.into() }
}

impl LinePlot {
    /// A self-contained SVG document.
    pub fn to_svg(&self) -> String {
        const W: f64 = 640.0;
        const H: f64 = 400.0;
        const L: f64 = 64.0;
        const R: f64 = 150.0;
        const T: f64 = 40.0;
        const B: f64 = 52.0;
        let pts = self.series.iter().flat_map(|s| s.points.iter());
        let (mut x0, mut x1, mut y0, mut y1) = (f64::MAX, f64::MIN, f64::MAX, f64::MIN);
        for &(x, y) in pts.filter(|(x, y)| x.is_finite() && y.is_finite()) {
            x0 = x0.min(x);
            x1 = x1.max(x);
            y0 = y0.min(y);
            y1 = y1.max(y);
        }
        if x0 > x1 {
            (x0, x1, y0, y1) = (0.0, 1.0, 0.0, 1.0);
        }
        if x1 - x0 < 1e-12 {
            (x0, x1) = (x0 - 0.5, x1 + 0.5);
        }
        if y1 - y0 < 1e-12 {
            (y0, y1) = (y0 - 0.05, y1 + 0.05);
        }
        let px = |x: f64| L + (x - x0) / (x1 - x0) * (W - L - R);
        let py = |y: f64| H - B - (y - y0) / (y1 - y0) * (H - T - B);

        let mut s = String::new();
        let _ = writeln!(
            s,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
        );
        let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
        let _ = writeln!(
            s,
            r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#,
            (L + W - R) / 2.0,
            escape(&self.title)
        );
        let _ = writeln!(
            s,
            r#"<rect x="{L}" y="{T}" width="{}" height="{}" fill="none" stroke="black"/>"#,
            W - L - R,
            H - T - B
        );
        for t in ticks(x0, x1) {
            let x = px(t);
            let _ = writeln!(
                s,
                r#"<line x1="{x:.2}" y1="{}" x2="{x:.2}" y2="{}" stroke="black"/><text x="{x:.2}" y="{}" text-anchor="middle">{}</text>"#,
                H - B,
                H - B + 5.0,
                H - B + 18.0,
                tick_label(t)
            );
        }
        for t in ticks(y0, y1) {
            let y = py(t);
            let _ = writeln!(
                s,
                r##"<line x1="{}" y1="{y:.2}" x2="{}" y2="{y:.2}" stroke="#ddd"/><text x="{}" y="{:.2}" text-anchor="end">{}</text>"##,
                L,
                W - R,
                L - 6.0,
                y + 4.0,
                tick_label(t)
            );
        }
        let _ = writeln!(
            s,
            r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#,
            (L + W - R) / 2.0,
            H - 12.0,
            escape(&self.x_label)
        );
        let _ = writeln!(
            s,
            r#"<text x="16" y="{}" text-anchor="middle" transform="rotate(-90 16 {})">{}</text>"#,
            (T + H - B) / 2.0,
            (T + H - B) / 2.0,
            escape(&self.y_label)
        );
        for (i, series) in self.series.iter().enumerate() {
            let color = PALETTE[i % PALETTE.len()];
            let path: Vec<String> = series
                .points
                .iter()
                .filter(|(x, y)| x.is_finite() && y.is_finite())
                .map(|&(x, y)| format!("{:.2},{:.2}", px(x), py(y)))
                .collect();
            let _ = writeln!(
                s,
                r#"<polyline class="series" data-name="{}" fill="none" stroke="{color}" stroke-width="2" points="{}"/>"#,
                escape(&series.name),
                path.join(" ")
            );
            let ly = T + 12.0 + 18.0 * i as f64;
            let _ = writeln!(
                s,
                r#"<line x1="{}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/><text x="{}" y="{}">{}</text>"#,
                W - R + 10.0,
                W - R + 30.0,
                W - R + 36.0,
                ly + 4.0,
                escape(&series.name)
            );
        }
        s.push_str("</svg>\n");
        s
    }
}
