//! Renders plot-data CSVs as SVG. Every number drawn comes from a CSV the
//! other commands already wrote; output bytes depend only on those files.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::Args;
use log::info;

use crate::artifacts::{read_bytes, Outputs};
use crate::error::CliError;

#[derive(Debug, Args)]
pub struct ReportArgs {
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Directory holding the plot-data CSVs; defaults to `--out`.
    #[arg(long)]
    pub input: Option<PathBuf>,
}

/// Plot-data files the report knows how to draw.
const PLOTS: [&str; 6] = ["acf", "pdf", "returns", "prices", "loss", "diversity"];

const WIDTH: f64 = 720.0;
const HEIGHT: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 3] = ["#1f77b4", "#d62728", "#2ca02c"];

/// A CSV whose columns are parsed as numbers on request; empty cells are
/// `None`.
pub struct Table {
    path: PathBuf,
    headers: Vec<String>,
    rows: Vec<csv::StringRecord>,
}

impl Table {
    pub fn parse(path: &Path, bytes: &[u8]) -> Result<Self, CliError> {
        let mut reader = csv::Reader::from_reader(bytes);
        let headers: Vec<String> = reader
            .headers()
            .map_err(|e| CliError::io(path, e))?
            .iter()
            .map(str::to_owned)
            .collect();
        let rows = reader
            .records()
            .collect::<Result<Vec<_>, _>>()
            .map_err(|e| CliError::io(path, e))?;
        if rows.is_empty() {
            return Err(CliError::Data(format!("{}: no data rows", path.display())));
        }
        Ok(Self {
            path: path.to_path_buf(),
            headers,
            rows,
        })
    }

    fn column(&self, name: &str) -> Result<Vec<Option<f64>>, CliError> {
        let i = self.headers.iter().position(|h| h == name).ok_or_else(|| {
            CliError::Data(format!("{}: missing column {name:?}", self.path.display()))
        })?;
        self.rows
            .iter()
            .enumerate()
            .map(|(r, rec)| match rec.get(i).unwrap_or("").trim() {
                "" => Ok(None),
                s => s.parse::<f64>().map(Some).map_err(|_| {
                    CliError::Data(format!(
                        "{}: row {} column {name:?} has non-numeric value {s:?}",
                        self.path.display(),
                        r + 2
                    ))
                }),
            })
            .collect()
    }
}

struct Frame {
    x0: f64,
    x1: f64,
    y0: f64,
    y1: f64,
}

impl Frame {
    fn fit(xs: impl Iterator<Item = f64> + Clone, ys: impl Iterator<Item = f64> + Clone) -> Self {
        let (x0, x1) = bounds(xs);
        let (y0, y1) = bounds(ys);
        Self { x0, x1, y0, y1 }
    }

    fn px(&self, x: f64) -> f64 {
        MARGIN + (x - self.x0) / (self.x1 - self.x0) * (WIDTH - 2.0 * MARGIN)
    }

    fn py(&self, y: f64) -> f64 {
        HEIGHT - MARGIN - (y - self.y0) / (self.y1 - self.y0) * (HEIGHT - 2.0 * MARGIN)
    }
}

/// Min and max, widened to a non-empty interval.
fn bounds(vals: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = vals.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| {
        (lo.min(v), hi.max(v))
    });
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi > lo {
        (lo, hi)
    } else {
        (lo - 0.5, hi + 0.5)
    }
}

fn header(title: &str, f: &Frame, x_label: &str) -> String {
    let mut s = String::new();
    writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{WIDTH}" height="{HEIGHT}" viewBox="0 0 {WIDTH} {HEIGHT}" font-family="sans-serif" font-size="12">"#
    )
    .unwrap();
    writeln!(s, r##"<rect width="100%" height="100%" fill="#ffffff"/>"##).unwrap();
    writeln!(
        s,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{title}</text>"#,
        WIDTH / 2.0
    )
    .unwrap();
    let (l, r, t, b) = (MARGIN, WIDTH - MARGIN, MARGIN, HEIGHT - MARGIN);
    writeln!(
        s,
        r##"<path class="axes" d="M{l} {t}V{b}H{r}" fill="none" stroke="#333333"/>"##
    )
    .unwrap();
    for (v, anchor_y) in [(f.y0, b), (f.y1, t)] {
        writeln!(
            s,
            r#"<text x="{}" y="{:.2}" text-anchor="end">{}</text>"#,
            l - 6.0,
            anchor_y + 4.0,
            tick(v)
        )
        .unwrap();
    }
    for (v, anchor_x, anchor) in [(f.x0, l, "start"), (f.x1, r, "end")] {
        writeln!(
            s,
            r#"<text x="{anchor_x}" y="{}" text-anchor="{anchor}">{}</text>"#,
            b + 18.0,
            tick(v)
        )
        .unwrap();
    }
    writeln!(
        s,
        r#"<text x="{}" y="{}" text-anchor="middle">{x_label}</text>"#,
        WIDTH / 2.0,
        HEIGHT - 12.0
    )
    .unwrap();
    s
}

fn tick(v: f64) -> String {
    if v != 0.0 && (v.abs() < 1e-3 || v.abs() >= 1e5) {
        format!("{v:.2e}")
    } else {
        format!("{v:.4}")
    }
}

fn polyline(f: &Frame, xs: &[f64], ys: &[Option<f64>], color: &str, name: &str) -> String {
    let mut pts = String::new();
    for (x, y) in xs.iter().zip(ys) {
        if let Some(y) = y {
            write!(pts, "{:.2},{:.2} ", f.px(*x), f.py(*y)).unwrap();
        }
    }
    format!(
        "<polyline class=\"series\" data-name=\"{name}\" points=\"{}\" fill=\"none\" stroke=\"{color}\" stroke-width=\"1.2\"/>\n",
        pts.trim_end()
    )
}

fn legend(names: &[&str]) -> String {
    let mut s = String::new();
    for (i, name) in names.iter().enumerate() {
        let y = MARGIN + 4.0 + 16.0 * i as f64;
        let x = WIDTH - MARGIN - 150.0;
        writeln!(
            s,
            r#"<rect x="{x}" y="{}" width="12" height="3" fill="{}"/>"#,
            y - 4.0,
            COLORS[i % COLORS.len()]
        )
        .unwrap();
        writeln!(s, r#"<text x="{}" y="{y}">{name}</text>"#, x + 18.0).unwrap();
    }
    s
}

fn values(col: &[Option<f64>]) -> impl Iterator<Item = f64> + Clone + '_ {
    col.iter().flatten().copied()
}

/// One line per named column against the `x` column.
pub fn line_chart(title: &str, t: &Table, x: &str, series: &[&str]) -> Result<String, CliError> {
    let xs: Vec<f64> = t.column(x)?.iter().map(|v| v.unwrap_or(f64::NAN)).collect();
    let cols: Vec<Vec<Option<f64>>> = series
        .iter()
        .map(|c| t.column(c))
        .collect::<Result<_, _>>()?;
    let f = Frame::fit(
        xs.iter().copied().filter(|v| v.is_finite()),
        cols.iter().flat_map(|c| values(c)),
    );
    let mut s = header(title, &f, x);
    for (i, (c, name)) in cols.iter().zip(series).enumerate() {
        s.push_str(&polyline(&f, &xs, c, COLORS[i % COLORS.len()], name));
    }
    s.push_str(&legend(series));
    s.push_str("</svg>\n");
    Ok(s)
}

/// Candidate autocorrelations as bars, the reference as a line and the
/// white-noise band as two dashed lines.
pub fn acf_chart(t: &Table) -> Result<String, CliError> {
    let (lags, cand, reference, band) = (
        t.column("lag")?,
        t.column("candidate")?,
        t.column("reference")?,
        t.column("band")?,
    );
    let b = values(&band).next().unwrap_or(0.0);
    let lag_vals: Vec<f64> = values(&lags).collect();
    let (l0, l1) = bounds(lag_vals.iter().copied());
    let mut f = Frame::fit(
        [l0 - 0.5, l1 + 0.5].into_iter(),
        values(&cand).chain(values(&reference)).chain([b, -b, 0.0]),
    );
    f.y0 = f.y0.min(0.0);
    let mut s = header("Autocorrelation of returns", &f, "lag");
    let step = (f.px(1.0) - f.px(0.0)) * 0.6;
    for (lag, c) in lags.iter().zip(&cand) {
        if let (Some(lag), Some(c)) = (lag, c) {
            let (top, bottom) = (f.py(c.max(0.0)), f.py(c.min(0.0)));
            writeln!(
                s,
                r#"<rect class="bar" x="{:.2}" y="{top:.2}" width="{step:.2}" height="{:.2}" fill="{}"/>"#,
                f.px(*lag) - step / 2.0,
                bottom - top,
                COLORS[0]
            )
            .unwrap();
        }
    }
    s.push_str(&polyline(&f, &lag_vals, &reference, COLORS[1], "reference"));
    for y in [b, -b] {
        writeln!(
            s,
            r##"<line class="band" x1="{MARGIN}" y1="{0:.2}" x2="{1}" y2="{0:.2}" stroke="#7f7f7f" stroke-dasharray="5,4"/>"##,
            f.py(y),
            WIDTH - MARGIN
        )
        .unwrap();
    }
    s.push_str(&legend(&["candidate", "reference"]));
    s.push_str("</svg>\n");
    Ok(s)
}

pub fn render(name: &str, t: &Table) -> Result<String, CliError> {
    match name {
        "acf" => acf_chart(t),
        "pdf" => line_chart(
            "Density of returns",
            t,
            "bin_center",
            &["candidate_density", "reference_density"],
        ),
        "returns" => line_chart("Log returns", t, "index", &["candidate", "reference"]),
        "prices" => line_chart("Price paths", t, "index", &["candidate", "reference"]),
        "loss" => line_chart("Training losses", t, "step", &["d_loss", "g_loss"]),
        "diversity" => line_chart("Generator diversity", t, "epoch", &["diversity"]),
        other => Err(CliError::Config(format!("no renderer for {other}"))),
    }
}

pub fn run(args: &ReportArgs) -> Result<(), CliError> {
    let input = args.input.clone().unwrap_or_else(|| args.out.clone());
    let mut out = Outputs::new(&args.out, "report");
    let mut rendered = 0;
    for name in PLOTS {
        let path = input.join(format!("{name}.csv"));
        if !path.exists() {
            continue;
        }
        let bytes = read_bytes(&path)?;
        out.record_input(&path, &bytes);
        let table = Table::parse(&path, &bytes)?;
        let svg = render(name, &table)?;
        let written = out.write(&format!("{name}.svg"), svg.as_bytes())?;
        info!("wrote {}", written.display());
        rendered += 1;
    }
    if rendered == 0 {
        return Err(CliError::Data(format!(
            "{} holds none of {}",
            input.display(),
            PLOTS.map(|p| format!("{p}.csv")).join(", ")
        )));
    }
    out.finish(
        None,
        serde_json::json!({ "input": input.display().to_string() }),
    )?;
    Ok(())
}
