//! CSV and SVG artifacts.

use std::fmt::Write as _;
use std::fs::File;
use std::io::Write;
use std::path::Path;

use aoii_core::curve::{CurvePoint, Family};

use crate::CliError;

/// Rounds to 12 significant digits and prints the shortest form of the result.
pub fn num(x: f64) -> String {
    if !x.is_finite() {
        return x.to_string();
    }
    let rounded: f64 = format!("{x:.11e}")
        .parse()
        .expect("scientific literal parses");
    rounded.to_string()
}

pub fn opt_num(x: Option<f64>) -> String {
    x.map(num).unwrap_or_default()
}

/// CSV file whose first line is `# <schema>: <columns>`.
pub struct SchemaCsv {
    writer: csv::Writer<File>,
}

impl SchemaCsv {
    pub fn create(path: &Path, schema: &str, columns: &[&str]) -> Result<Self, CliError> {
        let mut file = File::create(path).map_err(|e| CliError::io(path, e))?;
        writeln!(file, "# {schema}: {}", columns.join(",")).map_err(|e| CliError::io(path, e))?;
        let mut writer = csv::Writer::from_writer(file);
        writer.write_record(columns).map_err(CliError::runtime)?;
        Ok(Self { writer })
    }

    pub fn row<I, S>(&mut self, fields: I) -> Result<(), CliError>
    where
        I: IntoIterator<Item = S>,
        S: AsRef<[u8]>,
    {
        self.writer.write_record(fields).map_err(CliError::runtime)
    }

    pub fn finish(mut self) -> Result<(), CliError> {
        self.writer.flush().map_err(CliError::runtime)
    }
}

pub const CURVE_SCHEMA: &str = "aoii-curve v1";
pub const CURVE_COLUMNS: [&str; 6] = [
    "family",
    "R",
    "aoii_closed_form",
    "aoii_simulated",
    "aoii_se",
    "rate_closed_form",
];

pub fn write_curve_csv(path: &Path, points: &[CurvePoint]) -> Result<(), CliError> {
    let mut out = SchemaCsv::create(path, CURVE_SCHEMA, &CURVE_COLUMNS)?;
    for p in points {
        out.row([
            p.family.name().to_string(),
            num(p.target_rate),
            num(p.aoii_closed_form),
            opt_num(p.aoii_simulated.map(|e| e.mean)),
            opt_num(p.aoii_simulated.map(|e| e.std_error)),
            num(p.rate_closed_form),
        ])?;
    }
    out.finish()
}

const WIDTH: f64 = 640.0;
const HEIGHT: f64 = 420.0;
const MARGIN: (f64, f64, f64, f64) = (70.0, 20.0, 20.0, 50.0); // left, right, top, bottom

fn color(f: Family) -> &'static str {
    match f {
        Family::Multi => "#1f77b4",
        Family::Single => "#2ca02c",
        Family::Periodic => "#d62728",
        Family::OptimalOracle => "#7f7f7f",
    }
}

fn nice_step(span: f64) -> f64 {
    let raw = span / 5.0;
    let mag = 10f64.powf(raw.log10().floor());
    [1.0, 2.0, 5.0, 10.0]
        .iter()
        .map(|m| m * mag)
        .find(|s| *s >= raw)
        .unwrap_or(10.0 * mag)
}

fn ticks(lo: f64, hi: f64) -> Vec<f64> {
    let step = nice_step(hi - lo);
    let first = (lo / step).ceil() as i64;
    let last = (hi / step + 1e-9).floor() as i64;
    (first..=last).map(|k| k as f64 * step).collect()
}

fn range(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values.fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| {
        (a.min(v), b.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo {
        0.05 * (hi - lo)
    } else {
        0.5_f64.max(0.05 * hi.abs())
    };
    (lo - pad, hi + pad)
}

/// Average AoII against rate, one polyline per family, in closed form.
pub fn curve_svg(points: &[CurvePoint], title: &str) -> String {
    let (x0, x1) = range(points.iter().map(|p| p.rate_closed_form));
    let (y0, y1) = range(points.iter().map(|p| p.aoii_closed_form));
    let (ml, mr, mt, mb) = MARGIN;
    let px = |x: f64| ml + (x - x0) / (x1 - x0) * (WIDTH - ml - mr);
    let py = |y: f64| HEIGHT - mb - (y - y0) / (y1 - y0) * (HEIGHT - mt - mb);

    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(s, "<title>{}</title>", escape(title));
    let _ = writeln!(
        s,
        r#"<rect x="0" y="0" width="{WIDTH}" height="{HEIGHT}" fill="white"/>"#
    );
    let (bx, by) = (HEIGHT - mb, WIDTH - mr);
    let _ = writeln!(
        s,
        r#"<line x1="{ml}" y1="{bx}" x2="{by}" y2="{bx}" stroke="black"/>"#
    );
    let _ = writeln!(
        s,
        r#"<line x1="{ml}" y1="{mt}" x2="{ml}" y2="{bx}" stroke="black"/>"#
    );
    for t in ticks(x0, x1) {
        let x = px(t);
        let _ = writeln!(
            s,
            r#"<line x1="{x:.2}" y1="{bx}" x2="{x:.2}" y2="{:.2}" stroke="black"/>"#,
            bx + 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">{}</text>"#,
            bx + 18.0,
            tick_label(t)
        );
    }
    for t in ticks(y0, y1) {
        let y = py(t);
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{y:.2}" x2="{ml}" y2="{y:.2}" stroke="black"/>"#,
            ml - 5.0
        );
        let _ = writeln!(
            s,
            r#"<text x="{:.2}" y="{:.2}" text-anchor="end">{}</text>"#,
            ml - 8.0,
            y + 4.0,
            tick_label(t)
        );
    }
    let _ = writeln!(
        s,
        r#"<text x="{:.2}" y="{:.2}" text-anchor="middle">transmission rate</text>"#,
        ml + (WIDTH - ml - mr) / 2.0,
        HEIGHT - 10.0
    );
    let _ = writeln!(
        s,
        r#"<text x="16" y="{:.2}" text-anchor="middle" transform="rotate(-90 16 {:.2})">average AoII</text>"#,
        mt + (HEIGHT - mt - mb) / 2.0,
        mt + (HEIGHT - mt - mb) / 2.0
    );

    let mut families: Vec<Family> = points.iter().map(|p| p.family).collect();
    families.dedup();
    for (i, fam) in families.iter().enumerate() {
        let coords: Vec<String> = points
            .iter()
            .filter(|p| p.family == *fam)
            .map(|p| {
                format!(
                    "{:.2},{:.2}",
                    px(p.rate_closed_form),
                    py(p.aoii_closed_form)
                )
            })
            .collect();
        let _ = writeln!(
            s,
            r#"<polyline fill="none" stroke="{}" stroke-width="1.5" points="{}"><title>{}</title></polyline>"#,
            color(*fam),
            coords.join(" "),
            fam.name()
        );
        let ly = mt + 12.0 + 14.0 * i as f64;
        let lx = WIDTH - mr - 110.0;
        let _ = writeln!(
            s,
            r#"<line x1="{lx:.2}" y1="{ly:.2}" x2="{:.2}" y2="{ly:.2}" stroke="{}" stroke-width="1.5"/><text x="{:.2}" y="{:.2}">{}</text>"#,
            lx + 18.0,
            color(*fam),
            lx + 22.0,
            ly + 4.0,
            fam.name()
        );
    }
    s.push_str("</svg>\n");
    s
}

fn tick_label(t: f64) -> String {
    let r = (t * 1e6).round() / 1e6;
    if r == 0.0 {
        "0".into()
    } else {
        r.to_string()
    }
}

fn escape(text: &str) -> String {
    text.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
