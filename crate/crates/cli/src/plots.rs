//! `report`: figures and a Markdown summary from result files.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::sync::OnceLock;

use plotters::coord::Shift;
use plotters::prelude::*;
use starshape::c2st::{median_mad, C2stReport};
use starshape::latent::prior_nll_moments;
use starshape::training::read_log;

use crate::error::{CliError, Result};

const PANEL_WIDTH: u32 = 900;
const PANEL_HEIGHT: u32 = 420;
const FONT_CANDIDATES: &[&str] = &[
    "/usr/share/fonts/truetype/dejavu/DejaVuSans.ttf",
    "/usr/share/fonts/TTF/DejaVuSans.ttf",
    "/usr/share/fonts/dejavu/DejaVuSans.ttf",
    "/Library/Fonts/Arial.ttf",
    "C:\\Windows\\Fonts\\arial.ttf",
];

/// Registers a TrueType font for labels. Without one, figures are drawn unlabelled.
fn font_available() -> bool {
    static FONT: OnceLock<bool> = OnceLock::new();
    *FONT.get_or_init(|| {
        let env = std::env::var_os("STARSHAPE_FONT").map(PathBuf::from);
        let found = env
            .into_iter()
            .chain(FONT_CANDIDATES.iter().map(PathBuf::from))
            .find_map(|p| fs::read(p).ok());
        match found {
            Some(bytes) => {
                let bytes: &'static [u8] = Box::leak(bytes.into_boxed_slice());
                plotters::style::register_font("sans-serif", FontStyle::Normal, bytes).is_ok()
            }
            None => {
                log::warn!("no font found (set STARSHAPE_FONT); plots will have no labels");
                false
            }
        }
    })
}

pub struct ReconRow {
    pub class: String,
    pub mode: String,
    pub l2_error: f64,
    pub nll: f64,
    pub nn_error: f64,
    pub latent_dim: usize,
}

pub struct MatrixCell {
    pub train_class: String,
    pub test_class: String,
    pub median: f64,
    pub mad: f64,
}

pub enum Input {
    Log {
        path: PathBuf,
        columns: Vec<String>,
        rows: Vec<(u64, Vec<f64>)>,
    },
    C2st { path: PathBuf, report: C2stReport },
    Recon { path: PathBuf, rows: Vec<ReconRow> },
    Matrix { path: PathBuf, cells: Vec<MatrixCell> },
}

fn field<'a>(rec: &'a csv::StringRecord, headers: &csv::StringRecord, name: &str) -> Option<&'a str> {
    headers.iter().position(|h| h == name).and_then(|i| rec.get(i))
}

fn num(rec: &csv::StringRecord, headers: &csv::StringRecord, name: &str, path: &Path) -> Result<f64> {
    field(rec, headers, name)
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Schema {
            path: path.to_path_buf(),
            reason: format!("missing or non-numeric `{name}`"),
        })
}

impl Input {
    /// Detects the kind of result file from its content.
    pub fn read(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
        let schema = |reason: String| CliError::Schema {
            path: path.to_path_buf(),
            reason,
        };
        if text.trim_start().starts_with('{') {
            let report: C2stReport = serde_json::from_str(&text).map_err(|e| schema(e.to_string()))?;
            return Ok(Self::C2st {
                path: path.to_path_buf(),
                report,
            });
        }
        let first = text.lines().next().unwrap_or_default();
        match first.split(',').next().unwrap_or_default() {
            "step" => {
                let (columns, rows) = read_log(path)?;
                Ok(Self::Log {
                    path: path.to_path_buf(),
                    columns,
                    rows,
                })
            }
            "image_id" => {
                let mut r = csv::Reader::from_reader(text.as_bytes());
                let headers = r.headers().map_err(|e| CliError::csv(path, e))?.clone();
                let mut rows = Vec::new();
                for rec in r.records() {
                    let rec = rec.map_err(|e| CliError::csv(path, e))?;
                    rows.push(ReconRow {
                        class: field(&rec, &headers, "class").unwrap_or_default().to_string(),
                        mode: field(&rec, &headers, "mode").unwrap_or_default().to_string(),
                        l2_error: num(&rec, &headers, "l2_error", path)?,
                        nll: num(&rec, &headers, "nll", path)?,
                        nn_error: num(&rec, &headers, "nn_error", path)?,
                        latent_dim: num(&rec, &headers, "latent_dim", path)? as usize,
                    });
                }
                Ok(Self::Recon {
                    path: path.to_path_buf(),
                    rows,
                })
            }
            "train_class" => {
                let mut r = csv::Reader::from_reader(text.as_bytes());
                let headers = r.headers().map_err(|e| CliError::csv(path, e))?.clone();
                let mut cells = Vec::new();
                for rec in r.records() {
                    let rec = rec.map_err(|e| CliError::csv(path, e))?;
                    cells.push(MatrixCell {
                        train_class: field(&rec, &headers, "train_class").unwrap_or_default().to_string(),
                        test_class: field(&rec, &headers, "test_class").unwrap_or_default().to_string(),
                        median: num(&rec, &headers, "median", path)?,
                        mad: num(&rec, &headers, "mad", path)?,
                    });
                }
                Ok(Self::Matrix {
                    path: path.to_path_buf(),
                    cells,
                })
            }
            other => Err(schema(format!("unknown header starting with {other:?}"))),
        }
    }
}

type Area<'a> = DrawingArea<BitMapBackend<'a>, Shift>;

fn plot_err(e: impl std::fmt::Display) -> CliError {
    CliError::Plot(e.to_string())
}

fn bounds(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = ((hi - lo) * 0.05).max(1e-9);
    (lo - pad, hi + pad)
}

fn palette(i: usize) -> RGBColor {
    const COLORS: [RGBColor; 6] = [
        RGBColor(31, 119, 180),
        RGBColor(214, 39, 40),
        RGBColor(44, 160, 44),
        RGBColor(255, 127, 14),
        RGBColor(148, 103, 189),
        RGBColor(140, 86, 75),
    ];
    COLORS[i % COLORS.len()]
}

fn chart<'a, 'b>(
    area: &'a Area<'b>,
    title: &str,
    x: std::ops::Range<f64>,
    y: std::ops::Range<f64>,
    xdesc: &str,
    ydesc: &str,
) -> Result<ChartContext<'a, BitMapBackend<'b>, Cartesian2d<plotters::coord::types::RangedCoordf64, plotters::coord::types::RangedCoordf64>>> {
    let labels = font_available();
    let mut b = ChartBuilder::on(area);
    b.margin(12);
    if labels {
        b.caption(title, ("sans-serif", 20)).x_label_area_size(36).y_label_area_size(90);
    }
    let mut c = b.build_cartesian_2d(x, y).map_err(plot_err)?;
    let mut mesh = c.configure_mesh();
    if labels {
        mesh.x_desc(xdesc).y_desc(ydesc);
    } else {
        mesh.x_labels(0).y_labels(0);
    }
    mesh.draw().map_err(plot_err)?;
    Ok(c)
}

fn draw_log(area: &Area, path: &Path, columns: &[String], rows: &[(u64, Vec<f64>)], md: &mut String) -> Result<()> {
    // Aggregate columns only; per-pair columns of star runs would clutter the figure.
    let shown: Vec<usize> = (1..columns.len()).filter(|&i| i <= 3).collect();
    let x_max = rows.last().map_or(1, |r| r.0).max(1) as f64;
    let y = bounds(rows.iter().flat_map(|(_, v)| shown.iter().map(move |&i| v[i - 1])));
    let mut c = chart(area, "training losses", 0.0..x_max, y.0..y.1, "step", "loss")?;
    for (k, &i) in shown.iter().enumerate() {
        let color = palette(k);
        let s = c
            .draw_series(LineSeries::new(
                rows.iter().filter(|r| r.1[i - 1].is_finite()).map(|(s, v)| (*s as f64, v[i - 1])),
                color,
            ))
            .map_err(plot_err)?;
        if font_available() {
            s.label(columns[i].as_str())
                .legend(move |(x, y)| PathElement::new([(x, y), (x + 16, y)], color));
        }
    }
    if font_available() {
        c.configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    let _ = writeln!(md, "## Training log `{}`\n", path.display());
    let _ = writeln!(md, "{} logged steps.", rows.len());
    if let Some((s, v)) = rows.last() {
        let last: Vec<String> = shown.iter().map(|&i| format!("{} = {:.4}", columns[i], v[i - 1])).collect();
        let _ = writeln!(md, "Last row (step {s}): {}.", last.join(", "));
    }
    md.push('\n');
    Ok(())
}

fn draw_c2st(area: &Area, path: &Path, r: &C2stReport, md: &mut String) -> Result<()> {
    let n = r.per_split_scores.len().max(1);
    let y = bounds(r.per_split_scores.iter().copied().chain([0.0, r.median]));
    let title = format!("C2ST ({}) per split", r.flavor);
    let mut c = chart(area, &title, -0.5..n as f64 - 0.5, y.0..y.1, "split", "score")?;
    c.draw_series(r.per_split_scores.iter().enumerate().map(|(i, &s)| {
        Rectangle::new([(i as f64 - 0.35, 0.0), (i as f64 + 0.35, s)], palette(0).filled())
    }))
    .map_err(plot_err)?;
    c.draw_series(LineSeries::new([(-0.5, r.median), (n as f64 - 0.5, r.median)], palette(1).stroke_width(2)))
        .map_err(plot_err)?;
    let _ = writeln!(md, "## C2ST report `{}`\n", path.display());
    let _ = writeln!(md, "| group | median | MAD | splits | excluded |\n|---|---|---|---|---|");
    let row = |md: &mut String, name: &str, r: &C2stReport| {
        let _ = writeln!(
            md,
            "| {name} | {:.4} | {:.4} | {} | {} |",
            r.median,
            r.mad,
            r.per_split_scores.len(),
            r.excluded_splits.len()
        );
    };
    row(md, "all", r);
    for sub in &r.sub_reports {
        row(md, sub.label.as_deref().unwrap_or("?"), sub);
    }
    md.push('\n');
    Ok(())
}

fn draw_c2st_trend(area: &Area, reports: &[(&Path, &C2stReport)], md: &mut String) -> Result<()> {
    let mut pts: Vec<(f64, f64, f64)> = reports
        .iter()
        .enumerate()
        .map(|(i, (_, r))| (r.step.map_or(i as f64, |s| s as f64), r.median, r.mad))
        .collect();
    pts.sort_by(|a, b| a.0.total_cmp(&b.0));
    let x = bounds(pts.iter().map(|p| p.0));
    let y = bounds(pts.iter().flat_map(|p| [p.1 - p.2, p.1 + p.2]));
    let mut c = chart(area, "C2ST median over training", x.0..x.1, y.0..y.1, "step", "score")?;
    c.draw_series(LineSeries::new(pts.iter().map(|p| (p.0, p.1)), palette(0)))
        .map_err(plot_err)?;
    c.draw_series(pts.iter().map(|p| {
        PathElement::new([(p.0, p.1 - p.2), (p.0, p.1 + p.2)], palette(0).stroke_width(1))
    }))
    .map_err(plot_err)?;
    c.draw_series(pts.iter().map(|p| Circle::new((p.0, p.1), 4, palette(0).filled())))
        .map_err(plot_err)?;
    let _ = writeln!(md, "## C2ST over training\n\n| step | median | MAD |\n|---|---|---|");
    for p in &pts {
        let _ = writeln!(md, "| {} | {:.4} | {:.4} |", p.0, p.1, p.2);
    }
    md.push('\n');
    Ok(())
}

fn draw_recon(area: &Area, path: &Path, rows: &[ReconRow], md: &mut String) -> Result<()> {
    let nn: Vec<f64> = rows.iter().map(|r| r.nn_error).filter(|v| v.is_finite()).collect();
    let nn_median = median_mad(&nn).ok().map(|m| m.0);
    let nll_guide = rows.first().map(|r| prior_nll_moments(r.latent_dim));
    let mut ys: Vec<f64> = rows.iter().map(|r| r.nll).collect();
    if let Some((m, s)) = nll_guide {
        ys.extend([m - 3.0 * s, m + 3.0 * s]);
    }
    let x = bounds(rows.iter().map(|r| r.l2_error).chain(nn_median));
    let y = bounds(ys.into_iter());
    let mut c = chart(area, "latent recovery", x.0..x.1, y.0..y.1, "reconstruction MSE", "latent NLL")?;
    let mut classes: Vec<&str> = rows.iter().map(|r| r.class.as_str()).collect();
    classes.sort_unstable();
    classes.dedup();
    for (k, class) in classes.iter().enumerate() {
        let color = palette(k);
        let s = c
            .draw_series(
                rows.iter()
                    .filter(|r| r.class == *class)
                    .map(|r| Circle::new((r.l2_error, r.nll), 3, color.filled())),
            )
            .map_err(plot_err)?;
        if font_available() {
            s.label(*class).legend(move |(x, y)| Circle::new((x + 8, y), 3, color.filled()));
        }
    }
    let grey = RGBColor(120, 120, 120);
    if let Some(m) = nn_median {
        c.draw_series(LineSeries::new([(m, y.0), (m, y.1)], grey.stroke_width(2)))
            .map_err(plot_err)?;
    }
    if let Some((m, s)) = nll_guide {
        for v in [m - 3.0 * s, m, m + 3.0 * s] {
            c.draw_series(LineSeries::new([(x.0, v), (x.1, v)], grey)).map_err(plot_err)?;
        }
    }
    if font_available() && !classes.is_empty() {
        c.configure_series_labels()
            .background_style(WHITE.mix(0.8))
            .border_style(BLACK)
            .draw()
            .map_err(plot_err)?;
    }
    let errors: Vec<f64> = rows.iter().map(|r| r.l2_error).collect();
    let _ = writeln!(md, "## Reconstructions `{}`\n", path.display());
    let modes: Vec<&str> = rows.iter().map(|r| r.mode.as_str()).take(1).collect();
    let _ = writeln!(md, "{} targets, mode {}.", rows.len(), modes.first().unwrap_or(&"?"));
    if let Ok((m, d)) = median_mad(&errors) {
        let _ = writeln!(md, "Median MSE {m:.5} (MAD {d:.5}).");
    }
    if let Some(m) = nn_median {
        let _ = writeln!(md, "Median nearest-neighbour MSE {m:.5}.");
    }
    md.push('\n');
    Ok(())
}

fn draw_matrix(area: &Area, path: &Path, cells: &[MatrixCell], md: &mut String) -> Result<()> {
    let mut names: Vec<&str> = Vec::new();
    for cell in cells {
        for n in [cell.train_class.as_str(), cell.test_class.as_str()] {
            if !names.contains(&n) {
                names.push(n);
            }
        }
    }
    let k = names.len().max(1);
    let labels = font_available();
    let mut b = ChartBuilder::on(area);
    b.margin(12);
    if labels {
        b.caption("C2ST between classes (rows: train, columns: test)", ("sans-serif", 20));
    }
    let mut c = b.build_cartesian_2d(0.0..k as f64, 0.0..k as f64).map_err(plot_err)?;
    let hi = cells.iter().map(|c| c.median).fold(f64::EPSILON, f64::max);
    let idx = |n: &str| names.iter().position(|m| *m == n).unwrap_or(0) as f64;
    for cell in cells {
        let (i, j) = (idx(&cell.train_class), idx(&cell.test_class));
        let t = (cell.median.max(0.0) / hi).clamp(0.0, 1.0);
        let shade = (255.0 * (1.0 - t)) as u8;
        let fill = if i == j {
            RGBColor(shade / 2 + 40, shade / 2 + 40, shade)
        } else {
            RGBColor(255, shade, shade)
        };
        let row = k as f64 - 1.0 - i;
        c.draw_series([Rectangle::new([(j, row), (j + 1.0, row + 1.0)], fill.filled())])
            .map_err(plot_err)?;
        if labels {
            c.draw_series([Text::new(
                format!("{:.2}±{:.2}", cell.median, cell.mad),
                (j + 0.1, row + 0.5),
                ("sans-serif", 14),
            )])
            .map_err(plot_err)?;
        }
    }
    let _ = writeln!(md, "## C2ST matrix `{}`\n", path.display());
    let _ = write!(md, "| train \\ test |");
    for n in &names {
        let _ = write!(md, " {n} |");
    }
    let _ = write!(md, "\n|---|");
    md.push_str(&"---|".repeat(names.len()));
    md.push('\n');
    for a in &names {
        let _ = write!(md, "| {a} |");
        for b in &names {
            match cells.iter().find(|c| c.train_class == *a && c.test_class == *b) {
                Some(c) => {
                    let _ = write!(md, " {:.3} ± {:.3} |", c.median, c.mad);
                }
                None => md.push_str(" |"),
            }
        }
        md.push('\n');
    }
    md.push('\n');
    Ok(())
}

fn write_png(path: &Path, width: u32, height: u32, rgb: &[u8]) -> Result<()> {
    let file = fs::File::create(path).map_err(|e| CliError::io(path, e))?;
    let mut enc = png::Encoder::new(std::io::BufWriter::new(file), width, height);
    enc.set_color(png::ColorType::Rgb);
    enc.set_depth(png::BitDepth::Eight);
    let mut w = enc.write_header().map_err(plot_err)?;
    w.write_image_data(rgb).map_err(plot_err)?;
    w.finish().map_err(plot_err)
}

/// Draws one panel per input (several C2ST reports share a trend panel), writes the PNG
/// to `out` and returns the Markdown summary.
pub fn render(inputs: &[Input], out: &Path) -> Result<String> {
    let reports: Vec<(&Path, &C2stReport)> = inputs
        .iter()
        .filter_map(|i| match i {
            Input::C2st { path, report } => Some((path.as_path(), report)),
            _ => None,
        })
        .collect();
    let others: Vec<&Input> = inputs.iter().filter(|i| !matches!(i, Input::C2st { .. })).collect();
    let panels = others.len() + usize::from(!reports.is_empty());
    let height = PANEL_HEIGHT * panels as u32;
    let mut buf = vec![0u8; (PANEL_WIDTH * height * 3) as usize];
    let mut md = String::from("# starshape report\n\n");
    {
        let root = BitMapBackend::with_buffer(&mut buf, (PANEL_WIDTH, height)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let areas = root.split_evenly((panels, 1));
        let mut areas = areas.iter();
        match reports.as_slice() {
            [] => {}
            [(p, r)] => draw_c2st(areas.next().expect("panel"), p, r, &mut md)?,
            many => draw_c2st_trend(areas.next().expect("panel"), many, &mut md)?,
        }
        for input in others {
            let area = areas.next().expect("panel");
            match input {
                Input::Log { path, columns, rows } => draw_log(area, path, columns, rows, &mut md)?,
                Input::Recon { path, rows } => draw_recon(area, path, rows, &mut md)?,
                Input::Matrix { path, cells } => draw_matrix(area, path, cells, &mut md)?,
                Input::C2st { .. } => unreachable!("filtered above"),
            }
        }
        root.present().map_err(plot_err)?;
    }
    write_png(out, PANEL_WIDTH, height, &buf)?;
    Ok(md)
}
