//! Static SVG charts of sweep, ablation and training-curve CSVs.

use std::fmt::{self, Write as _};
use std::path::Path;
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PlotKind {
    /// `value,mean_acc,ci95` as a line with whiskers.
    Sweep,
    /// `variant,mean_acc,ci95` as bars with whiskers.
    Ablation,
    /// `epoch,split,mean_acc,ci95` as one line per split.
    Curve,
}

impl fmt::Display for PlotKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Sweep => "sweep",
            Self::Ablation => "ablation",
            Self::Curve => "curve",
        })
    }
}

impl FromStr for PlotKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sweep" => Ok(Self::Sweep),
            "ablation" => Ok(Self::Ablation),
            "curve" => Ok(Self::Curve),
            other => Err(Error::Config(format!("unknown plot kind {other:?}"))),
        }
    }
}

/// Header-addressed CSV table.
struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn parse(text: &str) -> Result<Self> {
        let mut reader = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(text.as_bytes());
        let header: Vec<String> = reader
            .headers()
            .map_err(|e| Error::Format(format!("unreadable CSV header: {e}")))?
            .iter()
            .map(str::to_string)
            .collect();
        if header.iter().all(String::is_empty) {
            return Err(Error::Format("CSV is empty".into()));
        }
        let mut rows = Vec::new();
        for rec in reader.records() {
            let rec = rec.map_err(|e| Error::Format(format!("bad CSV record: {e}")))?;
            rows.push(rec.iter().map(str::to_string).collect());
        }
        if rows.is_empty() {
            return Err(Error::Format("CSV has no data rows".into()));
        }
        Ok(Self { header, rows })
    }

    fn column(&self, name: &str) -> Result<usize> {
        self.header
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| Error::Format(format!("CSV is missing column {name:?}")))
    }

    fn numbers(&self, name: &str) -> Result<Vec<f64>> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .enumerate()
            .map(|(i, r)| {
                r[c].parse()
                    .map_err(|_| Error::Format(format!("row {}: column {name:?} is not a number: {:?}", i + 1, r[c])))
            })
            .collect()
    }

    fn strings(&self, name: &str) -> Result<Vec<String>> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|r| r[c].clone()).collect())
    }
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 400.0;
const LEFT: f64 = 70.0;
const RIGHT: f64 = 20.0;
const TOP: f64 = 40.0;
const BOTTOM: f64 = 60.0;
const PALETTE: [&str; 6] = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"];

/// Linear map from data range to pixel range.
#[derive(Clone, Copy)]
struct Axis {
    lo: f64,
    hi: f64,
    px_lo: f64,
    px_hi: f64,
}

impl Axis {
    fn new(lo: f64, hi: f64, px_lo: f64, px_hi: f64) -> Self {
        let (lo, hi) = if hi - lo < 1e-12 { (lo - 0.5, hi + 0.5) } else { (lo, hi) };
        Self { lo, hi, px_lo, px_hi }
    }

    fn map(&self, v: f64) -> f64 {
        self.px_lo + (v - self.lo) / (self.hi - self.lo) * (self.px_hi - self.px_lo)
    }

    fn ticks(&self) -> Vec<f64> {
        (0..=4).map(|i| self.lo + (self.hi - self.lo) * i as f64 / 4.0).collect()
    }
}

fn header(svg: &mut String, title: &str) {
    let _ = write!(
        svg,
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{WIDTH}\" height=\"{HEIGHT}\" \
         viewBox=\"0 0 {WIDTH} {HEIGHT}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{:.1}\" y=\"22\" text-anchor=\"middle\" font-size=\"15\">{}</text>\n",
        WIDTH / 2.0,
        escape(title)
    );
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

fn y_axis(svg: &mut String, y: &Axis, label: &str) {
    let _ = writeln!(
        svg,
        "<line x1=\"{LEFT}\" y1=\"{TOP}\" x2=\"{LEFT}\" y2=\"{:.1}\" stroke=\"black\"/>",
        HEIGHT - BOTTOM
    );
    for t in y.ticks() {
        let py = y.map(t);
        let _ = writeln!(
            svg,
            "<line x1=\"{:.1}\" y1=\"{py:.1}\" x2=\"{LEFT}\" y2=\"{py:.1}\" stroke=\"black\"/>\
             <text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"end\">{t:.3}</text>",
            LEFT - 5.0,
            LEFT - 8.0,
            py + 4.0
        );
    }
    let _ = writeln!(
        svg,
        "<text x=\"16\" y=\"{:.1}\" text-anchor=\"middle\" transform=\"rotate(-90 16 {:.1})\">{}</text>",
        (TOP + HEIGHT - BOTTOM) / 2.0,
        (TOP + HEIGHT - BOTTOM) / 2.0,
        escape(label)
    );
}

fn x_axis_line(svg: &mut String, label: &str) {
    let _ = writeln!(
        svg,
        "<line x1=\"{LEFT}\" y1=\"{0:.1}\" x2=\"{1:.1}\" y2=\"{0:.1}\" stroke=\"black\"/>\n\
         <text x=\"{2:.1}\" y=\"{3:.1}\" text-anchor=\"middle\">{4}</text>",
        HEIGHT - BOTTOM,
        WIDTH - RIGHT,
        (LEFT + WIDTH - RIGHT) / 2.0,
        HEIGHT - 15.0,
        escape(label)
    );
}

fn whisker(svg: &mut String, px: f64, lo: f64, hi: f64, color: &str) {
    let _ = writeln!(
        svg,
        "<line x1=\"{px:.1}\" y1=\"{lo:.1}\" x2=\"{px:.1}\" y2=\"{hi:.1}\" stroke=\"{color}\"/>\
         <line x1=\"{:.1}\" y1=\"{lo:.1}\" x2=\"{:.1}\" y2=\"{lo:.1}\" stroke=\"{color}\"/>\
         <line x1=\"{:.1}\" y1=\"{hi:.1}\" x2=\"{:.1}\" y2=\"{hi:.1}\" stroke=\"{color}\"/>",
        px - 4.0,
        px + 4.0,
        px - 4.0,
        px + 4.0
    );
}

fn y_range(means: &[f64], cis: &[f64]) -> Axis {
    let lo = means.iter().zip(cis).map(|(m, c)| m - c).fold(f64::INFINITY, f64::min);
    let hi = means.iter().zip(cis).map(|(m, c)| m + c).fold(f64::NEG_INFINITY, f64::max);
    let pad = 0.05 * (hi - lo).max(1e-3);
    Axis::new(lo - pad, hi + pad, HEIGHT - BOTTOM, TOP)
}

/// `(name, xs, means, cis)`.
type Series = (String, Vec<f64>, Vec<f64>, Vec<f64>);

/// Line series with whiskers.
fn lines(title: &str, x_label: &str, series: &[Series]) -> String {
    let all_x: Vec<f64> = series.iter().flat_map(|s| s.1.clone()).collect();
    let all_m: Vec<f64> = series.iter().flat_map(|s| s.2.clone()).collect();
    let all_c: Vec<f64> = series.iter().flat_map(|s| s.3.clone()).collect();
    let x = Axis::new(
        all_x.iter().cloned().fold(f64::INFINITY, f64::min),
        all_x.iter().cloned().fold(f64::NEG_INFINITY, f64::max),
        LEFT + 20.0,
        WIDTH - RIGHT - 20.0,
    );
    let y = y_range(&all_m, &all_c);
    let mut svg = String::new();
    header(&mut svg, title);
    y_axis(&mut svg, &y, "mean accuracy");
    x_axis_line(&mut svg, x_label);
    for t in x.ticks() {
        let _ = writeln!(
            svg,
            "<text x=\"{:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            x.map(t),
            HEIGHT - BOTTOM + 16.0,
            trim_number(t)
        );
    }
    for (k, (name, xs, ms, cs)) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let points: Vec<String> = xs
            .iter()
            .zip(ms)
            .map(|(&a, &b)| format!("{:.1},{:.1}", x.map(a), y.map(b)))
            .collect();
        let _ = writeln!(
            svg,
            "<polyline points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\"/>",
            points.join(" ")
        );
        for ((&a, &m), &c) in xs.iter().zip(ms).zip(cs) {
            let px = x.map(a);
            whisker(&mut svg, px, y.map(m - c), y.map(m + c), color);
            let _ = writeln!(svg, "<circle cx=\"{px:.1}\" cy=\"{:.1}\" r=\"3\" fill=\"{color}\"/>", y.map(m));
        }
        if series.len() > 1 {
            let ly = TOP + 14.0 * k as f64;
            let _ = writeln!(
                svg,
                "<text x=\"{:.1}\" y=\"{ly:.1}\" fill=\"{color}\" text-anchor=\"end\">{}</text>",
                WIDTH - RIGHT,
                escape(name)
            );
        }
    }
    svg.push_str("</svg>\n");
    svg
}

fn trim_number(v: f64) -> String {
    let s = format!("{v:.3}");
    let s = s.trim_end_matches('0').trim_end_matches('.');
    if s.is_empty() || s == "-" {
        "0".into()
    } else {
        s.to_string()
    }
}

fn bars(title: &str, names: &[String], means: &[f64], cis: &[f64]) -> String {
    let lo = means.iter().zip(cis).map(|(m, c)| m - c).fold(f64::INFINITY, f64::min).min(0.0);
    let hi = means.iter().zip(cis).map(|(m, c)| m + c).fold(f64::NEG_INFINITY, f64::max);
    let y = Axis::new(lo, hi * 1.05, HEIGHT - BOTTOM, TOP);
    let mut svg = String::new();
    header(&mut svg, title);
    y_axis(&mut svg, &y, "mean accuracy");
    x_axis_line(&mut svg, "variant");
    let slot = (WIDTH - RIGHT - LEFT) / names.len() as f64;
    for (i, ((name, &m), &c)) in names.iter().zip(means).zip(cis).enumerate() {
        let color = PALETTE[i % PALETTE.len()];
        let cx = LEFT + slot * (i as f64 + 0.5);
        let top = y.map(m);
        let base = y.map(lo.max(0.0));
        let _ = writeln!(
            svg,
            "<rect x=\"{:.1}\" y=\"{top:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"{color}\" fill-opacity=\"0.7\"/>",
            cx - slot * 0.3,
            slot * 0.6,
            (base - top).max(0.0)
        );
        whisker(&mut svg, cx, y.map(m - c), y.map(m + c), "black");
        let _ = writeln!(
            svg,
            "<text x=\"{cx:.1}\" y=\"{:.1}\" text-anchor=\"middle\">{}</text>",
            HEIGHT - BOTTOM + 16.0,
            escape(name)
        );
    }
    svg.push_str("</svg>\n");
    svg
}

/// Render CSV text as an SVG chart of the given kind.
pub fn render_csv(text: &str, kind: PlotKind) -> Result<String> {
    let t = Table::parse(text)?;
    match kind {
        PlotKind::Sweep => {
            let xs = t.numbers("value")?;
            let ms = t.numbers("mean_acc")?;
            let cs = t.numbers("ci95")?;
            let param = t.strings("param").ok().and_then(|p| p.first().cloned());
            let label = param.unwrap_or_else(|| "value".into());
            Ok(lines(&format!("{label} sweep"), &label, &[(label.clone(), xs, ms, cs)]))
        }
        PlotKind::Ablation => {
            let names = t.strings("variant")?;
            Ok(bars("ablation", &names, &t.numbers("mean_acc")?, &t.numbers("ci95")?))
        }
        PlotKind::Curve => {
            let epochs = t.numbers("epoch")?;
            let splits = t.strings("split")?;
            let ms = t.numbers("mean_acc")?;
            let cs = t.numbers("ci95")?;
            let mut series: Vec<Series> = Vec::new();
            for i in 0..epochs.len() {
                let idx = match series.iter().position(|s| s.0 == splits[i]) {
                    Some(p) => p,
                    None => {
                        series.push((splits[i].clone(), Vec::new(), Vec::new(), Vec::new()));
                        series.len() - 1
                    }
                };
                series[idx].1.push(epochs[i]);
                series[idx].2.push(ms[i]);
                series[idx].3.push(cs[i]);
            }
            Ok(lines("training curve", "epoch", &series))
        }
    }
}

pub fn plot_file(csv_path: &Path, kind: PlotKind, out: &Path) -> Result<()> {
    let text = std::fs::read_to_string(csv_path).map_err(|e| Error::io(csv_path, e))?;
    let svg = render_csv(&text, kind).map_err(|e| match e {
        Error::Format(m) => Error::Format(format!("{}: {m}", csv_path.display())),
        other => other,
    })?;
    std::fs::write(out, svg).map_err(|e| Error::io(out, e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn nine_point_sweep() {
        let mut csv = String::from("param,value,mean_acc,ci95\n");
        for i in 1..=9 {
            csv += &format!("lambda,{},{},0.01\n", i as f64 / 10.0, 0.5 + i as f64 / 100.0);
        }
        let svg = render_csv(&csv, PlotKind::Sweep).unwrap();
        assert_eq!(svg.matches("<circle").count(), 9);
        assert_eq!(svg, render_csv(&csv, PlotKind::Sweep).unwrap());
    }

    #[test]
    fn schema_errors_name_the_column() {
        let err = render_csv("variant,mean_acc\nbase,0.5\n", PlotKind::Ablation).unwrap_err();
        assert!(matches!(&err, Error::Format(m) if m.contains("ci95")));
        assert!(matches!(render_csv("", PlotKind::Sweep), Err(Error::Format(_))));
        assert!(matches!(render_csv("value,mean_acc,ci95\n", PlotKind::Sweep), Err(Error::Format(_))));
    }

    #[test]
    fn single_row_sweep_renders() {
        let svg = render_csv("value,mean_acc,ci95\n0.5,0.7,0\n", PlotKind::Sweep).unwrap();
        assert!(svg.contains("<circle"));
    }
}
