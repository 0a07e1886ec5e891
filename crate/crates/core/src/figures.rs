//! Plot data and minimal SVG images from aggregate CSV files.
//!
//! Each figure kind reads the columns it needs from one or more aggregate
//! files (by header name) and writes two files next to the requested output
//! path: `<out>.csv` with exactly the plotted series in long form, and
//! `<out>.svg`. Nothing is written if an input is empty or lacks a column.

use std::collections::BTreeMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FigureKind {
    /// Mean suboptimal mass and mean ex-ante gain per agent against bias.
    DeviationVsBias,
    /// ε-Nash frequency against bias, one panel per (α, λ).
    EpsNashFrequencyGrid,
    /// Modal canonical policies per bias.
    ModalPolicyHeatmap,
    /// Payoff histograms per bias with babbling and optimal overlays.
    PayoffDistribution,
    /// Mutual-information histograms per bias with optimal and worst overlays.
    MiDistribution,
    /// Equilibrium MI levels per bias with the modal policy's MI.
    EquilibriumLadder,
}

impl FigureKind {
    pub const ALL: [FigureKind; 6] = [
        FigureKind::DeviationVsBias,
        FigureKind::EpsNashFrequencyGrid,
        FigureKind::ModalPolicyHeatmap,
        FigureKind::PayoffDistribution,
        FigureKind::MiDistribution,
        FigureKind::EquilibriumLadder,
    ];

    pub fn name(self) -> &'static str {
        match self {
            FigureKind::DeviationVsBias => "deviation_vs_bias",
            FigureKind::EpsNashFrequencyGrid => "eps_nash_frequency_grid",
            FigureKind::ModalPolicyHeatmap => "modal_policy_heatmap",
            FigureKind::PayoffDistribution => "payoff_distribution",
            FigureKind::MiDistribution => "mi_distribution",
            FigureKind::EquilibriumLadder => "equilibrium_ladder",
        }
    }

    /// Aggregate columns the kind reads.
    pub fn required_columns(self) -> Vec<&'static str> {
        let mut cols = vec!["alpha", "lambda", "bias"];
        cols.extend(match self {
            FigureKind::DeviationVsBias => vec![
                "max_subopt_sender_mean",
                "max_subopt_receiver_mean",
                "gain_sender_mean",
                "gain_receiver_mean",
            ],
            FigureKind::EpsNashFrequencyGrid => vec!["eps_nash_freq"],
            FigureKind::ModalPolicyHeatmap => vec![
                "modal_sender_actions",
                "modal_sender_freq",
                "modal_receiver_actions",
                "modal_receiver_freq",
            ],
            FigureKind::PayoffDistribution => vec![
                "u_sender_hist_lo",
                "u_sender_hist_hi",
                "u_sender_hist",
                "u_sender_median",
                "u_receiver_hist_lo",
                "u_receiver_hist_hi",
                "u_receiver_hist",
                "u_receiver_median",
                "babbling_u_sender",
                "babbling_u_receiver",
                "optimal_u_sender",
                "optimal_u_receiver",
            ],
            FigureKind::MiDistribution => vec![
                "mutual_info_hist_lo",
                "mutual_info_hist_hi",
                "mutual_info_hist",
                "mutual_info_median",
                "optimal_mi",
                "equilibrium_mi_levels",
            ],
            FigureKind::EquilibriumLadder => vec!["equilibrium_mi_levels", "modal_mi"],
        });
        cols
    }
}

impl fmt::Display for FigureKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for FigureKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        FigureKind::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| Error::Figure {
                kind: s.to_string(),
                message: format!(
                    "unknown figure kind; expected one of {}",
                    FigureKind::ALL.map(|k| k.name()).join(", ")
                ),
            })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FigureSpec {
    pub kind: FigureKind,
    pub inputs: Vec<PathBuf>,
    /// Extension is replaced by `.csv` and `.svg`.
    pub output: PathBuf,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FigureFiles {
    pub data: PathBuf,
    pub image: PathBuf,
}

/// Long-form table of plotted values.
#[derive(Debug, Clone, PartialEq)]
pub struct FigureData {
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<String>>,
}

impl FigureData {
    fn new(columns: &[&'static str]) -> Self {
        FigureData {
            columns: columns.to_vec(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.columns.len());
        self.rows.push(row);
    }

    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        let wrap = |e: csv::Error| Error::csv("<figure data>", e);
        w.write_record(&self.columns).map_err(wrap)?;
        for r in &self.rows {
            w.write_record(r).map_err(wrap)?;
        }
        let bytes = w
            .into_inner()
            .map_err(|e| Error::io("<figure data>", e.into_error()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }
}

/// One parsed aggregate row, accessed by column name.
struct Row {
    cells: BTreeMap<String, String>,
}

impl Row {
    fn f(&self, col: &str) -> Result<f64> {
        let raw = &self.cells[col];
        raw.trim().parse().map_err(|_| Error::Figure {
            kind: String::new(),
            message: format!("column {col}: cannot parse {raw:?}"),
        })
    }

    fn list<T: FromStr>(&self, col: &str) -> Result<Vec<T>> {
        let raw = &self.cells[col];
        if raw.is_empty() {
            return Ok(Vec::new());
        }
        raw.split(';')
            .map(|x| {
                x.trim().parse().map_err(|_| Error::Figure {
                    kind: String::new(),
                    message: format!("column {col}: cannot parse {x:?}"),
                })
            })
            .collect()
    }

    fn cell(&self) -> Result<(f64, f64)> {
        Ok((self.f("alpha")?, self.f("lambda")?))
    }
}

fn load_rows(kind: FigureKind, inputs: &[PathBuf]) -> Result<Vec<Row>> {
    let fail = |message: String| Error::Figure {
        kind: kind.name().to_string(),
        message,
    };
    if inputs.is_empty() {
        return Err(fail("no input aggregate files".into()));
    }
    let required = kind.required_columns();
    let mut rows = Vec::new();
    for path in inputs {
        let mut r = csv::Reader::from_path(path).map_err(|e| Error::csv(path, e))?;
        let headers = r.headers().map_err(|e| Error::csv(path, e))?.clone();
        let missing: Vec<&str> = required
            .iter()
            .copied()
            .filter(|c| !headers.iter().any(|h| h == *c))
            .collect();
        if !missing.is_empty() {
            return Err(fail(format!(
                "{} lacks column(s) {}",
                path.display(),
                missing.join(", ")
            )));
        }
        for rec in r.records() {
            let rec = rec.map_err(|e| Error::csv(path, e))?;
            let cells = headers
                .iter()
                .zip(rec.iter())
                .map(|(h, v)| (h.to_string(), v.to_string()))
                .collect();
            rows.push(Row { cells });
        }
    }
    if rows.is_empty() {
        return Err(fail("input aggregates are empty".into()));
    }
    Ok(rows)
}

fn with_kind(kind: FigureKind, e: Error) -> Error {
    match e {
        Error::Figure { message, .. } => Error::Figure {
            kind: kind.name().to_string(),
            message,
        },
        other => other,
    }
}

/// Reads the inputs and returns the data table and SVG text without writing.
pub fn build_figure(kind: FigureKind, inputs: &[PathBuf]) -> Result<(FigureData, String)> {
    let rows = load_rows(kind, inputs)?;
    let built = match kind {
        FigureKind::DeviationVsBias => deviation_vs_bias(&rows),
        FigureKind::EpsNashFrequencyGrid => eps_nash_grid(&rows),
        FigureKind::ModalPolicyHeatmap => modal_heatmap(&rows),
        FigureKind::PayoffDistribution => payoff_distribution(&rows),
        FigureKind::MiDistribution => mi_distribution(&rows),
        FigureKind::EquilibriumLadder => equilibrium_ladder(&rows),
    };
    let (data, plot) = built.map_err(|e| with_kind(kind, e))?;
    Ok((data, plot.to_svg(kind.name())))
}

pub fn render_figure(spec: &FigureSpec) -> Result<FigureFiles> {
    let (data, svg) = build_figure(spec.kind, &spec.inputs)?;
    let csv_text = data.to_csv()?;
    let files = FigureFiles {
        data: spec.output.with_extension("csv"),
        image: spec.output.with_extension("svg"),
    };
    write_file(&files.data, &csv_text)?;
    write_file(&files.image, &svg)?;
    Ok(files)
}

fn write_file(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn s(x: f64) -> String {
    x.to_string()
}

const SENDER: &str = "#1f77b4";
const RECEIVER: &str = "#ff7f0e";
const OPTIMAL: &str = "#d62728";
const GREY: &str = "#7f7f7f";

/// Distinct (α, λ) cells in first-seen order.
fn cells(rows: &[Row]) -> Result<Vec<(f64, f64)>> {
    let mut out: Vec<(f64, f64)> = Vec::new();
    for r in rows {
        let c = r.cell()?;
        if !out.contains(&c) {
            out.push(c);
        }
    }
    Ok(out)
}

/// Width of one bias column: the smallest gap between distinct biases.
fn bias_step(rows: &[Row]) -> Result<f64> {
    let mut b: Vec<f64> = rows.iter().map(|r| r.f("bias")).collect::<Result<_>>()?;
    b.sort_by(f64::total_cmp);
    b.dedup();
    Ok(b.windows(2)
        .map(|w| w[1] - w[0])
        .fold(f64::INFINITY, f64::min)
        .clamp(1e-6, 0.05))
}

fn sorted_by_bias(rows: &[Row]) -> Vec<&Row> {
    let mut v: Vec<&Row> = rows.iter().collect();
    v.sort_by(|a, b| {
        let key = |r: &Row| r.f("bias").unwrap_or(f64::NAN);
        key(a).total_cmp(&key(b))
    });
    v
}

fn deviation_vs_bias(rows: &[Row]) -> Result<(FigureData, Plot)> {
    let mut data = FigureData::new(&["alpha", "lambda", "bias", "panel", "series", "value"]);
    let mut subopt = Panel::new("max suboptimal mass (mean)", "bias", "mass");
    let mut gain = Panel::new("ex-ante deviation gain (mean)", "bias", "gain");
    for (alpha, lambda) in cells(rows)? {
        let mut lines: [Vec<(f64, f64)>; 4] = Default::default();
        for r in sorted_by_bias(rows) {
            if r.cell()? != (alpha, lambda) {
                continue;
            }
            let b = r.f("bias")?;
            let vals = [
                ("max_subopt", "sender", r.f("max_subopt_sender_mean")?),
                ("max_subopt", "receiver", r.f("max_subopt_receiver_mean")?),
                ("gain", "sender", r.f("gain_sender_mean")?),
                ("gain", "receiver", r.f("gain_receiver_mean")?),
            ];
            for (i, (panel, series, v)) in vals.into_iter().enumerate() {
                data.push(vec![
                    s(alpha),
                    s(lambda),
                    s(b),
                    panel.into(),
                    series.into(),
                    s(v),
                ]);
                lines[i].push((b, v));
            }
        }
        let [s0, s1, s2, s3] = lines;
        subopt.line(s0, SENDER, false);
        subopt.line(s1, RECEIVER, false);
        gain.line(s2, SENDER, false);
        gain.line(s3, RECEIVER, false);
    }
    Ok((data, Plot::new(vec![subopt, gain], 1)))
}

fn eps_nash_grid(rows: &[Row]) -> Result<(FigureData, Plot)> {
    let mut data = FigureData::new(&["alpha", "lambda", "bias", "eps_nash_freq"]);
    let cells = cells(rows)?;
    let mut alphas: Vec<f64> = cells.iter().map(|c| c.0).collect();
    alphas.sort_by(f64::total_cmp);
    alphas.dedup();
    let mut panels = Vec::new();
    let mut ordered = cells.clone();
    ordered.sort_by(|a, b| b.1.total_cmp(&a.1).then(a.0.total_cmp(&b.0)));
    for (alpha, lambda) in ordered {
        let mut p = Panel::new(&format!("α={alpha}, λ={lambda}"), "bias", "frequency");
        p.y_range = Some((0.0, 1.0));
        let mut pts = Vec::new();
        for r in sorted_by_bias(rows) {
            if r.cell()? != (alpha, lambda) {
                continue;
            }
            let (b, v) = (r.f("bias")?, r.f("eps_nash_freq")?);
            data.push(vec![s(alpha), s(lambda), s(b), s(v)]);
            pts.push((b, v));
        }
        let (lo, hi) = extent(pts.iter().map(|p| p.0));
        p.line(vec![(lo, 0.0), (hi, 0.0)], GREY, true);
        p.line(vec![(lo, 1.0), (hi, 1.0)], GREY, true);
        p.line(pts, SENDER, false);
        panels.push(p);
    }
    Ok((data, Plot::new(panels, alphas.len().max(1))))
}

fn modal_heatmap(rows: &[Row]) -> Result<(FigureData, Plot)> {
    let mut data = FigureData::new(&[
        "alpha",
        "lambda",
        "bias",
        "role",
        "state",
        "action",
        "frequency",
    ]);
    let step = bias_step(rows)?;
    let mut panels = Vec::new();
    for (role, label) in [
        ("sender", "sender: message per type"),
        ("receiver", "receiver: action per message"),
    ] {
        let mut p = Panel::new(label, "bias", "state");
        let mut max_action = 1usize;
        let mut cellsv = Vec::new();
        for r in sorted_by_bias(rows) {
            let (alpha, lambda) = r.cell()?;
            let b = r.f("bias")?;
            let actions: Vec<usize> = r.list(&format!("modal_{role}_actions"))?;
            let freq: Vec<f64> = r.list(&format!("modal_{role}_freq"))?;
            for (state, (&a, &f)) in actions.iter().zip(&freq).enumerate() {
                data.push(vec![
                    s(alpha),
                    s(lambda),
                    s(b),
                    role.into(),
                    state.to_string(),
                    a.to_string(),
                    s(f),
                ]);
                max_action = max_action.max(a);
                cellsv.push((b, state, a, f));
            }
        }
        for (b, state, a, f) in cellsv {
            let hue = 240.0 * (1.0 - a as f64 / max_action as f64);
            p.rect(
                (b - step / 2.0, b + step / 2.0),
                (state as f64 - 0.5, state as f64 + 0.5),
                &format!("hsl({hue:.0},70%,50%)"),
                f.clamp(0.1, 1.0),
            );
        }
        panels.push(p);
    }
    Ok((data, Plot::new(panels, 1)))
}

const DIST_COLUMNS: [&str; 8] = [
    "alpha", "lambda", "bias", "role", "series", "bin_lo", "bin_hi", "value",
];

/// Histogram rectangles and data rows for one metric; returns the medians.
fn histogram_layer(
    rows: &[Row],
    metric: &str,
    role: &str,
    step: f64,
    data: &mut FigureData,
    panel: &mut Panel,
) -> Result<Vec<(f64, f64)>> {
    let mut medians = Vec::new();
    for r in sorted_by_bias(rows) {
        let (alpha, lambda) = r.cell()?;
        let b = r.f("bias")?;
        let lo = r.f(&format!("{metric}_hist_lo"))?;
        let hi = r.f(&format!("{metric}_hist_hi"))?;
        let counts: Vec<u64> = r.list(&format!("{metric}_hist"))?;
        let total: u64 = counts.iter().sum();
        let width = (hi - lo) / counts.len().max(1) as f64;
        for (i, &c) in counts.iter().enumerate() {
            let (y0, y1) = (lo + width * i as f64, lo + width * (i + 1) as f64);
            data.push(vec![
                s(alpha),
                s(lambda),
                s(b),
                role.into(),
                "histogram".into(),
                s(y0),
                s(y1),
                c.to_string(),
            ]);
            if c > 0 && total > 0 {
                let share = c as f64 / total as f64;
                panel.rect(
                    (b - step / 2.0, b + step / 2.0),
                    (y0, y1),
                    SENDER,
                    0.15 + 0.85 * share,
                );
            }
        }
        let m = r.f(&format!("{metric}_median"))?;
        data.push(vec![
            s(alpha),
            s(lambda),
            s(b),
            role.into(),
            "median".into(),
            String::new(),
            String::new(),
            s(m),
        ]);
        medians.push((b, m));
    }
    Ok(medians)
}

fn benchmark_series(
    rows: &[Row],
    role: &str,
    series: &str,
    value: impl Fn(&Row) -> Result<f64>,
    data: &mut FigureData,
) -> Result<Vec<(f64, f64)>> {
    let mut pts = Vec::new();
    for r in sorted_by_bias(rows) {
        let (alpha, lambda) = r.cell()?;
        let b = r.f("bias")?;
        let v = value(r)?;
        data.push(vec![
            s(alpha),
            s(lambda),
            s(b),
            role.into(),
            series.into(),
            String::new(),
            String::new(),
            s(v),
        ]);
        pts.push((b, v));
    }
    Ok(pts)
}

fn payoff_distribution(rows: &[Row]) -> Result<(FigureData, Plot)> {
    let mut data = FigureData::new(&DIST_COLUMNS);
    let step = bias_step(rows)?;
    let mut panels = Vec::new();
    for role in ["sender", "receiver"] {
        let mut p = Panel::new(&format!("{role} ex-ante payoff"), "bias", "payoff");
        let metric = format!("u_{role}");
        let medians = histogram_layer(rows, &metric, role, step, &mut data, &mut p)?;
        let bab_col = format!("babbling_u_{role}");
        let opt_col = format!("optimal_u_{role}");
        let bab = benchmark_series(rows, role, "babbling", |r| r.f(&bab_col), &mut data)?;
        let opt = benchmark_series(rows, role, "optimal", |r| r.f(&opt_col), &mut data)?;
        p.line(bab, GREY, true);
        p.line(opt, OPTIMAL, false);
        p.points(medians, "#08306b", 1.5);
        panels.push(p);
    }
    Ok((data, Plot::new(panels, 2)))
}

fn mi_distribution(rows: &[Row]) -> Result<(FigureData, Plot)> {
    let mut data = FigureData::new(&DIST_COLUMNS);
    let step = bias_step(rows)?;
    let mut p = Panel::new("normalized mutual information", "bias", "MI");
    p.y_range = Some((0.0, 1.0));
    let medians = histogram_layer(rows, "mutual_info", "sender", step, &mut data, &mut p)?;
    let opt = benchmark_series(rows, "sender", "optimal", |r| r.f("optimal_mi"), &mut data)?;
    let worst = benchmark_series(
        rows,
        "sender",
        "worst",
        |r| {
            let levels: Vec<f64> = r.list("equilibrium_mi_levels")?;
            Ok(levels.into_iter().fold(f64::INFINITY, f64::min))
        },
        &mut data,
    )?;
    p.line(worst, GREY, true);
    p.line(opt, OPTIMAL, false);
    p.points(medians, "#08306b", 1.5);
    Ok((data, Plot::new(vec![p], 1)))
}

fn equilibrium_ladder(rows: &[Row]) -> Result<(FigureData, Plot)> {
    let mut data = FigureData::new(&["alpha", "lambda", "bias", "series", "value"]);
    let step = bias_step(rows)?;
    let mut p = Panel::new(
        "MI of modal policy and of partitional equilibria",
        "bias",
        "MI",
    );
    p.y_range = Some((0.0, 1.0));
    let mut modal = Vec::new();
    for r in sorted_by_bias(rows) {
        let (alpha, lambda) = r.cell()?;
        let b = r.f("bias")?;
        for level in r.list::<f64>("equilibrium_mi_levels")? {
            data.push(vec![
                s(alpha),
                s(lambda),
                s(b),
                "equilibrium".into(),
                s(level),
            ]);
            p.line(
                vec![(b - step * 0.4, level), (b + step * 0.4, level)],
                GREY,
                false,
            );
        }
        let m = r.f("modal_mi")?;
        data.push(vec![s(alpha), s(lambda), s(b), "modal".into(), s(m)]);
        if m.is_finite() {
            modal.push((b, m));
        }
    }
    p.points(modal, SENDER, 2.0);
    Ok((data, Plot::new(vec![p], 1)))
}

fn extent(xs: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = xs
        .filter(|x| x.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), x| {
            (lo.min(x), hi.max(x))
        });
    if lo > hi {
        (0.0, 1.0)
    } else if lo == hi {
        (lo - 0.5, hi + 0.5)
    } else {
        (lo, hi)
    }
}

enum Layer {
    Rect {
        x: (f64, f64),
        y: (f64, f64),
        fill: String,
        opacity: f64,
    },
    Line {
        points: Vec<(f64, f64)>,
        stroke: &'static str,
        dashed: bool,
    },
    Points {
        points: Vec<(f64, f64)>,
        fill: &'static str,
        radius: f64,
    },
}

struct Panel {
    title: String,
    x_label: &'static str,
    y_label: &'static str,
    y_range: Option<(f64, f64)>,
    layers: Vec<Layer>,
}

impl Panel {
    fn new(title: &str, x_label: &'static str, y_label: &'static str) -> Self {
        Panel {
            title: title.to_string(),
            x_label,
            y_label,
            y_range: None,
            layers: Vec::new(),
        }
    }

    fn rect(&mut self, x: (f64, f64), y: (f64, f64), fill: &str, opacity: f64) {
        self.layers.push(Layer::Rect {
            x,
            y,
            fill: fill.to_string(),
            opacity,
        });
    }

    fn line(&mut self, points: Vec<(f64, f64)>, stroke: &'static str, dashed: bool) {
        let points: Vec<(f64, f64)> = points
            .into_iter()
            .filter(|p| p.0.is_finite() && p.1.is_finite())
            .collect();
        if !points.is_empty() {
            self.layers.push(Layer::Line {
                points,
                stroke,
                dashed,
            });
        }
    }

    fn points(&mut self, points: Vec<(f64, f64)>, fill: &'static str, radius: f64) {
        self.layers.push(Layer::Points {
            points,
            fill,
            radius,
        });
    }

    fn bounds(&self) -> ((f64, f64), (f64, f64)) {
        let mut xs = Vec::new();
        let mut ys = Vec::new();
        for l in &self.layers {
            match l {
                Layer::Rect { x, y, .. } => {
                    xs.extend([x.0, x.1]);
                    ys.extend([y.0, y.1]);
                }
                Layer::Line { points, .. } | Layer::Points { points, .. } => {
                    xs.extend(points.iter().map(|p| p.0));
                    ys.extend(points.iter().map(|p| p.1));
                }
            }
        }
        let x = extent(xs.into_iter());
        let y = self.y_range.unwrap_or_else(|| extent(ys.into_iter()));
        (x, y)
    }
}

struct Plot {
    panels: Vec<Panel>,
    columns: usize,
}

const PANEL_W: f64 = 360.0;
const PANEL_H: f64 = 220.0;
const MARGIN_L: f64 = 56.0;
const MARGIN_T: f64 = 28.0;
const MARGIN_B: f64 = 34.0;
const MARGIN_R: f64 = 14.0;

impl Plot {
    fn new(panels: Vec<Panel>, columns: usize) -> Self {
        Plot {
            panels,
            columns: columns.max(1),
        }
    }

    fn to_svg(&self, title: &str) -> String {
        let cols = self.columns.min(self.panels.len().max(1));
        let rows = self.panels.len().div_ceil(cols).max(1);
        let cell_w = PANEL_W + MARGIN_L + MARGIN_R;
        let cell_h = PANEL_H + MARGIN_T + MARGIN_B;
        let (w, h) = (cell_w * cols as f64, cell_h * rows as f64 + 24.0);
        let mut out = String::new();
        let _ = writeln!(
            out,
            r#"<svg xmlns="http://www.w3.org/2000/svg" width="{w}" height="{h}" viewBox="0 0 {w} {h}" font-family="sans-serif" font-size="11">"#
        );
        let _ = writeln!(out, r#"<rect width="{w}" height="{h}" fill="white"/>"#);
        let _ = writeln!(
            out,
            r#"<text x="8" y="16" font-size="13">{}</text>"#,
            escape(title)
        );
        for (i, panel) in self.panels.iter().enumerate() {
            let ox = cell_w * (i % cols) as f64 + MARGIN_L;
            let oy = 24.0 + cell_h * (i / cols) as f64 + MARGIN_T;
            draw_panel(&mut out, panel, ox, oy);
        }
        out.push_str("</svg>\n");
        out
    }
}

fn draw_panel(out: &mut String, panel: &Panel, ox: f64, oy: f64) {
    let ((x0, x1), (y0, y1)) = panel.bounds();
    let sx = |x: f64| ox + (x - x0) / (x1 - x0) * PANEL_W;
    let sy = |y: f64| oy + PANEL_H - (y - y0) / (y1 - y0) * PANEL_H;
    let _ = writeln!(out, r#"<g>"#);
    let _ = writeln!(
        out,
        r#"<text x="{ox}" y="{:.1}">{}</text>"#,
        oy - 8.0,
        escape(&panel.title)
    );
    for layer in &panel.layers {
        match layer {
            Layer::Rect {
                x,
                y,
                fill,
                opacity,
            } => {
                let (ax, bx) = (sx(x.0), sx(x.1));
                let (ay, by) = (sy(y.1), sy(y.0));
                let _ = writeln!(
                    out,
                    r#"<rect x="{ax:.2}" y="{ay:.2}" width="{:.2}" height="{:.2}" fill="{fill}" fill-opacity="{opacity:.3}"/>"#,
                    (bx - ax).max(0.5),
                    (by - ay).max(0.5)
                );
            }
            Layer::Line {
                points,
                stroke,
                dashed,
            } => {
                let pts: Vec<String> = points
                    .iter()
                    .map(|p| format!("{:.2},{:.2}", sx(p.0), sy(p.1)))
                    .collect();
                let dash = if *dashed {
                    r#" stroke-dasharray="4 3""#
                } else {
                    ""
                };
                let _ = writeln!(
                    out,
                    r#"<polyline points="{}" fill="none" stroke="{stroke}" stroke-width="1.5"{dash}/>"#,
                    pts.join(" ")
                );
            }
            Layer::Points {
                points,
                fill,
                radius,
            } => {
                for p in points {
                    let _ = writeln!(
                        out,
                        r#"<circle cx="{:.2}" cy="{:.2}" r="{radius}" fill="{fill}"/>"#,
                        sx(p.0),
                        sy(p.1)
                    );
                }
            }
        }
    }
    let _ = writeln!(
        out,
        r#"<rect x="{ox}" y="{oy}" width="{PANEL_W}" height="{PANEL_H}" fill="none" stroke="black"/>"#
    );
    let bottom = oy + PANEL_H;
    let _ = writeln!(
        out,
        r#"<text x="{ox}" y="{:.1}">{}</text>"#,
        bottom + 14.0,
        tick(x0)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
        ox + PANEL_W,
        bottom + 14.0,
        tick(x1)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="middle">{}</text>"#,
        ox + PANEL_W / 2.0,
        bottom + 28.0,
        panel.x_label
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
        ox - 4.0,
        bottom,
        tick(y0)
    );
    let _ = writeln!(
        out,
        r#"<text x="{:.1}" y="{:.1}" text-anchor="end">{}</text>"#,
        ox - 4.0,
        oy + 10.0,
        tick(y1)
    );
    let _ = writeln!(
        out,
        r#"<text transform="translate({:.1},{:.1}) rotate(-90)" text-anchor="middle">{}</text>"#,
        ox - 40.0,
        oy + PANEL_H / 2.0,
        panel.y_label
    );
    let _ = writeln!(out, "</g>");
}

fn tick(v: f64) -> String {
    let t = format!("{v:.3}");
    let t = t.trim_end_matches('0').trim_end_matches('.');
    if t == "-0" {
        "0".into()
    } else {
        t.to_string()
    }
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;")
        .replace('<', "&lt;")
        .replace('>', "&gt;")
}
