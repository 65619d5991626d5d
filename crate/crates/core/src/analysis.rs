//! Regression of fitness on morphological complexity and controller cost,
//! per-metric box-plot statistics, and the CSV/SVG report.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::morphometrics::MorphoMetrics;
use crate::scalar::Scalar;
use crate::tasks::TaskKind;

/// One evaluated (genome, controller, task) triple.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRecord {
    pub genome_id: String,
    pub task: TaskKind,
    pub seed: u64,
    pub metrics: MorphoMetrics<f64>,
    pub flops: u64,
    pub fitness: f64,
}

pub const RESULTS_HEADER: &str = "genome_id,task,seed,heterogeneity,connectivity,symmetry,actuator_dispersion,het_norm,conn_norm,sym_norm,act_norm,composite,flops,fitness";

#[derive(Debug, Serialize, Deserialize)]
struct ResultRow {
    genome_id: String,
    task: String,
    seed: u64,
    heterogeneity: f64,
    connectivity: f64,
    symmetry: f64,
    actuator_dispersion: f64,
    het_norm: f64,
    conn_norm: f64,
    sym_norm: f64,
    act_norm: f64,
    composite: f64,
    flops: u64,
    fitness: f64,
}

impl From<&EvalRecord> for ResultRow {
    fn from(r: &EvalRecord) -> Self {
        let m = &r.metrics;
        ResultRow {
            genome_id: r.genome_id.clone(),
            task: r.task.cli_name().to_string(),
            seed: r.seed,
            heterogeneity: m.heterogeneity,
            connectivity: m.connectivity,
            symmetry: m.symmetry,
            actuator_dispersion: m.actuator_dispersion,
            het_norm: m.het_norm,
            conn_norm: m.conn_norm,
            sym_norm: m.sym_norm,
            act_norm: m.act_norm,
            composite: m.composite,
            flops: r.flops,
            fitness: r.fitness,
        }
    }
}

pub fn write_results_csv<W: Write>(records: &[EvalRecord], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in records {
        w.serialize(ResultRow::from(r))?;
    }
    if records.is_empty() {
        w.write_record(RESULTS_HEADER.split(','))?;
    }
    w.flush()?;
    Ok(())
}

fn csv_parse_error(e: csv::Error) -> Error {
    let line = e.position().map_or(0, |p| p.line() as usize);
    let field = match e.kind() {
        csv::ErrorKind::Deserialize { err, .. } => err.field().map_or(0, |f| f as usize + 1),
        _ => 0,
    };
    Error::Parse {
        line,
        field,
        msg: e.to_string(),
    }
}

pub fn read_results_csv<R: Read>(input: R) -> Result<Vec<EvalRecord>> {
    let mut rd = csv::Reader::from_reader(input);
    let header = rd.headers().map_err(csv_parse_error)?;
    let got: Vec<&str> = header.iter().collect();
    let expected: Vec<&str> = RESULTS_HEADER.split(',').collect();
    if got != expected {
        return Err(Error::Parse {
            line: 1,
            field: got.iter().zip(&expected).position(|(a, b)| a != b).unwrap_or(got.len().min(expected.len())) + 1,
            msg: format!("expected header `{RESULTS_HEADER}`"),
        });
    }
    let mut records = Vec::new();
    for (i, row) in rd.deserialize::<ResultRow>().enumerate() {
        let row = row.map_err(csv_parse_error)?;
        let line = i + 2;
        let task = row.task.parse::<TaskKind>().map_err(|_| Error::Parse {
            line,
            field: 2,
            msg: format!("unknown task `{}`", row.task),
        })?;
        if row.flops == 0 {
            return Err(Error::Parse {
                line,
                field: 13,
                msg: "flops must be > 0".into(),
            });
        }
        records.push(EvalRecord {
            genome_id: row.genome_id,
            task,
            seed: row.seed,
            metrics: MorphoMetrics {
                heterogeneity: row.heterogeneity,
                connectivity: row.connectivity,
                symmetry: row.symmetry,
                actuator_dispersion: row.actuator_dispersion,
                het_norm: row.het_norm,
                conn_norm: row.conn_norm,
                sym_norm: row.sym_norm,
                act_norm: row.act_norm,
                composite: row.composite,
            },
            flops: row.flops,
            fitness: row.fitness,
        });
    }
    Ok(records)
}

/// `y = beta0 + beta1 * x1 + beta2 * x2`
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionFit<T> {
    pub beta0: T,
    pub beta1: T,
    pub beta2: T,
    /// `1 - SS_res / SS_tot`; 1 when the response has zero variance.
    pub r_squared: T,
    pub n_samples: usize,
}

impl<T: Scalar> RegressionFit<T> {
    pub fn predict(&self, x1: T, x2: T) -> T {
        self.beta0 + self.beta1 * x1 + self.beta2 * x2
    }
}

fn mean<T: Scalar>(v: &[T]) -> T {
    v.iter().copied().sum::<T>() / T::of_usize(v.len())
}

/// Two-regressor OLS through the mean-centred normal equations.
pub fn fit_plane<T: Scalar>(x1: &[T], x2: &[T], y: &[T]) -> Result<RegressionFit<T>> {
    let n = y.len();
    if x1.len() != n || x2.len() != n {
        return Err(Error::DimensionMismatch {
            what: "regression columns",
            expected: n,
            got: x1.len().min(x2.len()),
        });
    }
    if n < 3 {
        return Err(Error::DegenerateDesign(format!("need at least 3 samples, got {n}")));
    }
    let (m1, m2, my) = (mean(x1), mean(x2), mean(y));
    let (mut s11, mut s12, mut s22, mut s1y, mut s2y) = (T::zero(), T::zero(), T::zero(), T::zero(), T::zero());
    for i in 0..n {
        let (a, b, c) = (x1[i] - m1, x2[i] - m2, y[i] - my);
        s11 += a * a;
        s12 += a * b;
        s22 += b * b;
        s1y += a * c;
        s2y += b * c;
    }
    let det = s11 * s22 - s12 * s12;
    // relative to the product of variances: 1 - corr^2
    if !(s11 > T::zero() && s22 > T::zero()) || det <= T::of(1e-12) * s11 * s22 {
        return Err(Error::DegenerateDesign(
            "regressors are constant or collinear".into(),
        ));
    }
    let beta1 = (s22 * s1y - s12 * s2y) / det;
    let beta2 = (s11 * s2y - s12 * s1y) / det;
    let beta0 = my - beta1 * m1 - beta2 * m2;
    let (mut ss_res, mut ss_tot) = (T::zero(), T::zero());
    for i in 0..n {
        let r = y[i] - (beta0 + beta1 * x1[i] + beta2 * x2[i]);
        ss_res += r * r;
        ss_tot += (y[i] - my) * (y[i] - my);
    }
    let r_squared = if ss_tot > T::zero() {
        T::one() - ss_res / ss_tot
    } else {
        T::one()
    };
    Ok(RegressionFit {
        beta0,
        beta1,
        beta2,
        r_squared,
        n_samples: n,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FlopsScale {
    #[default]
    Log10,
    Raw,
}

impl FlopsScale {
    pub fn apply(self, flops: u64) -> f64 {
        match self {
            FlopsScale::Log10 => (flops as f64).log10(),
            FlopsScale::Raw => flops as f64,
        }
    }
}

/// Fitness on (composite complexity, FLOPs under `scale`).
pub fn fit_regression(records: &[EvalRecord], scale: FlopsScale) -> Result<RegressionFit<f64>> {
    let x1: Vec<f64> = records.iter().map(|r| r.metrics.composite).collect();
    let x2: Vec<f64> = records.iter().map(|r| scale.apply(r.flops)).collect();
    let y: Vec<f64> = records.iter().map(|r| r.fitness).collect();
    fit_plane(&x1, &x2, &y)
}

/// Linear interpolation between order statistics (type 7). `sorted` must
/// be ascending and non-empty; `p` in [0, 1].
pub fn quantile<T: Scalar>(sorted: &[T], p: T) -> T {
    assert!(!sorted.is_empty(), "quantile of empty sample");
    let h = T::of_usize(sorted.len() - 1) * p;
    let lo = h.floor();
    let i = lo.to_usize().expect("index");
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    sorted[i] + (h - lo) * (sorted[i + 1] - sorted[i])
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    /// Most extreme data points within 1.5 IQR of the quartiles.
    pub whisker_low: f64,
    pub whisker_high: f64,
    pub outliers: Vec<f64>,
}

impl BoxStats {
    /// `None` for an empty sample. NaNs are not allowed.
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(|a, b| a.partial_cmp(b).expect("NaN in box-plot data"));
        let (q1, median, q3) = (quantile(&v, 0.25), quantile(&v, 0.5), quantile(&v, 0.75));
        let iqr = q3 - q1;
        let (lo_fence, hi_fence) = (q1 - 1.5 * iqr, q3 + 1.5 * iqr);
        let inside = || v.iter().copied().filter(|&x| x >= lo_fence && x <= hi_fence);
        Some(BoxStats {
            n: v.len(),
            min: v[0],
            q1,
            median,
            q3,
            max: v[v.len() - 1],
            whisker_low: inside().fold(f64::INFINITY, f64::min),
            whisker_high: inside().fold(f64::NEG_INFINITY, f64::max),
            outliers: v.iter().copied().filter(|&x| x < lo_fence || x > hi_fence).collect(),
        })
    }
}

pub const METRIC_NAMES: [&str; 4] = ["heterogeneity", "connectivity", "symmetry", "actuator_dispersion"];

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Response {
    Flops,
    Fitness,
}

impl Response {
    pub const ALL: [Response; 2] = [Response::Flops, Response::Fitness];

    pub fn name(self) -> &'static str {
        match self {
            Response::Flops => "flops",
            Response::Fitness => "fitness",
        }
    }

    fn of(self, r: &EvalRecord) -> f64 {
        match self {
            Response::Flops => r.flops as f64,
            Response::Fitness => r.fitness,
        }
    }
}

/// Level label: low/mid/high for three levels, `level<k>` otherwise.
pub fn level_name(level: usize, levels: usize) -> String {
    match (levels, level) {
        (3, 0) => "low".into(),
        (3, 1) => "mid".into(),
        (3, 2) => "high".into(),
        _ => format!("level{level}"),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityCell {
    pub metric: &'static str,
    pub level: usize,
    pub response: Response,
    /// `None` when no record falls in the level.
    pub stats: Option<BoxStats>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SensitivityTable {
    pub levels: usize,
    /// Ordered by metric, level, response.
    pub cells: Vec<SensitivityCell>,
}

impl SensitivityTable {
    pub fn get(&self, metric: &str, level: usize, response: Response) -> Option<&SensitivityCell> {
        self.cells
            .iter()
            .find(|c| c.metric == metric && c.level == level && c.response == response)
    }
}

/// Partitions records by each normalized metric into equal-width levels
/// and summarizes both responses per level.
pub fn sensitivity(records: &[EvalRecord], levels: usize) -> SensitivityTable {
    assert!(levels >= 1, "levels must be >= 1");
    let mut cells = Vec::with_capacity(4 * levels * 2);
    for (k, metric) in METRIC_NAMES.iter().enumerate() {
        for level in 0..levels {
            let members: Vec<&EvalRecord> = records
                .iter()
                .filter(|r| crate::mapelites::level_of(r.metrics.normalized()[k], levels) == level)
                .collect();
            for response in Response::ALL {
                let values: Vec<f64> = members.iter().map(|r| response.of(r)).collect();
                cells.push(SensitivityCell {
                    metric,
                    level,
                    response,
                    stats: BoxStats::of(&values),
                });
            }
        }
    }
    SensitivityTable { levels, cells }
}

pub const REGRESSION_HEADER: &str = "task,beta0,beta1,beta2,r_squared,n_samples";
pub const SENSITIVITY_HEADER: &str =
    "task,metric,level,response,n,min,q1,median,q3,max,whisker_low,whisker_high,outliers";

pub fn write_regression_csv<W: Write>(fits: &[(TaskKind, RegressionFit<f64>)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(REGRESSION_HEADER.split(','))?;
    for (task, f) in fits {
        w.write_record([
            task.cli_name().to_string(),
            f.beta0.to_string(),
            f.beta1.to_string(),
            f.beta2.to_string(),
            f.r_squared.to_string(),
            f.n_samples.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_regression_csv<R: Read>(input: R) -> Result<Vec<(TaskKind, RegressionFit<f64>)>> {
    let mut rd = csv::Reader::from_reader(input);
    let mut out = Vec::new();
    for (i, rec) in rd.records().enumerate() {
        let rec = rec.map_err(csv_parse_error)?;
        let line = i + 2;
        let field = |k: usize| -> Result<&str> {
            rec.get(k).ok_or_else(|| Error::Parse {
                line,
                field: k + 1,
                msg: "missing field".into(),
            })
        };
        let num = |k: usize| -> Result<f64> {
            field(k)?.parse().map_err(|e| Error::Parse {
                line,
                field: k + 1,
                msg: format!("{e}"),
            })
        };
        let task = field(0)?.parse::<TaskKind>().map_err(|e| Error::Parse {
            line,
            field: 1,
            msg: e.to_string(),
        })?;
        let n_samples = field(5)?.parse().map_err(|e| Error::Parse {
            line,
            field: 6,
            msg: format!("{e}"),
        })?;
        out.push((
            task,
            RegressionFit {
                beta0: num(1)?,
                beta1: num(2)?,
                beta2: num(3)?,
                r_squared: num(4)?,
                n_samples,
            },
        ));
    }
    Ok(out)
}

pub fn write_sensitivity_csv<W: Write>(tables: &[(TaskKind, SensitivityTable)], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(SENSITIVITY_HEADER.split(','))?;
    for (task, t) in tables {
        for c in &t.cells {
            let mut row = vec![
                task.cli_name().to_string(),
                c.metric.to_string(),
                level_name(c.level, t.levels),
                c.response.name().to_string(),
            ];
            match &c.stats {
                None => {
                    row.push("0".into());
                    row.extend(std::iter::repeat_n(String::new(), 8));
                }
                Some(s) => {
                    row.push(s.n.to_string());
                    for v in [s.min, s.q1, s.median, s.q3, s.max, s.whisker_low, s.whisker_high] {
                        row.push(v.to_string());
                    }
                    row.push(s.outliers.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(";"));
                }
            }
            w.write_record(&row)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// Groups records by task in task order.
pub fn by_task(records: &[EvalRecord]) -> BTreeMap<TaskKind, Vec<EvalRecord>> {
    let mut m: BTreeMap<TaskKind, Vec<EvalRecord>> = BTreeMap::new();
    for r in records {
        m.entry(r.task).or_default().push(r.clone());
    }
    m
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportSummary {
    pub files: Vec<PathBuf>,
    pub fits: Vec<(TaskKind, RegressionFit<f64>)>,
    /// Tasks whose regression was skipped, with the reason.
    pub skipped: Vec<(TaskKind, String)>,
}

/// Runs the regression and sensitivity analysis per task and writes
/// `regression.csv`, `sensitivity.csv`, `scatter_<task>.svg` and
/// `boxplot_<task>_<response>.svg` into `out_dir`.
pub fn emit_report(records: &[EvalRecord], out_dir: &Path, scale: FlopsScale, levels: usize) -> Result<ReportSummary> {
    fs::create_dir_all(out_dir)?;
    let groups = by_task(records);
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    let mut tables = Vec::new();
    let mut files = Vec::new();
    for (task, rs) in &groups {
        let fit = match fit_regression(rs, scale) {
            Ok(f) => {
                fits.push((*task, f));
                Some(f)
            }
            Err(e @ Error::DegenerateDesign(_)) => {
                skipped.push((*task, e.to_string()));
                None
            }
            Err(e) => return Err(e),
        };
        let table = sensitivity(rs, levels);
        let path = out_dir.join(format!("scatter_{}.svg", task.cli_name()));
        fs::write(&path, scatter_svg(rs, fit.as_ref(), scale, task.cli_name()))?;
        files.push(path);
        for response in Response::ALL {
            let path = out_dir.join(format!("boxplot_{}_{}.svg", task.cli_name(), response.name()));
            fs::write(&path, boxplot_svg(&table, response, task.cli_name()))?;
            files.push(path);
        }
        tables.push((*task, table));
    }
    let path = out_dir.join("regression.csv");
    write_regression_csv(&fits, fs::File::create(&path)?)?;
    files.push(path);
    let path = out_dir.join("sensitivity.csv");
    write_sensitivity_csv(&tables, fs::File::create(&path)?)?;
    files.push(path);
    files.sort();
    Ok(ReportSummary { files, fits, skipped })
}

const W: f64 = 640.0;
const H: f64 = 480.0;
const MARGIN: f64 = 60.0;

fn svg_open(title: &str) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{W}" height="{H}" viewBox="0 0 {W} {H}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(s, r#"<rect width="{W}" height="{H}" fill="white"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="24" text-anchor="middle" font-size="15">{}</text>"#, W / 2.0, xml_escape(title));
    s
}

fn xml_escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;").replace('"', "&quot;")
}

/// Padded `(lo, hi)` of finite values, never zero-width.
fn extent(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), v| (a.min(v), b.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    let pad = if hi > lo { 0.05 * (hi - lo) } else { 0.5 };
    (lo - pad, hi + pad)
}

/// Linear blue-to-yellow ramp for `t` in [0, 1].
fn color_ramp(t: f64) -> String {
    let t = if t.is_finite() { t.clamp(0.0, 1.0) } else { 0.0 };
    let lerp = |a: f64, b: f64| (a + (b - a) * t).round() as u8;
    format!("#{:02x}{:02x}{:02x}", lerp(68.0, 253.0), lerp(1.0, 231.0), lerp(84.0, 37.0))
}

fn axes(s: &mut String, x_label: &str, y_label: &str, x: (f64, f64), y: Option<(f64, f64)>) {
    let (x0, x1, y0, y1) = (MARGIN, W - MARGIN, H - MARGIN, MARGIN);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x1}" y2="{y0}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<line x1="{x0}" y1="{y0}" x2="{x0}" y2="{y1}" stroke="black"/>"#);
    let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="middle">{}</text>"#, W / 2.0, H - 20.0, xml_escape(x_label));
    let _ = writeln!(
        s,
        r#"<text x="18" y="{}" text-anchor="middle" transform="rotate(-90 18 {})">{}</text>"#,
        H / 2.0,
        H / 2.0,
        xml_escape(y_label)
    );
    let _ = writeln!(s, r#"<text x="{x0}" y="{}" text-anchor="middle">{:.3}</text>"#, y0 + 16.0, x.0);
    let _ = writeln!(s, r#"<text x="{x1}" y="{}" text-anchor="middle">{:.3}</text>"#, y0 + 16.0, x.1);
    if let Some(y) = y {
        let _ = writeln!(s, r#"<text x="{}" y="{y0}" text-anchor="end">{:.3}</text>"#, x0 - 4.0, y.0);
        let _ = writeln!(s, r#"<text x="{}" y="{}" text-anchor="end">{:.3}</text>"#, x0 - 4.0, y1 + 4.0, y.1);
    }
}

/// Scatter of composite complexity vs FLOPs, coloured by fitness, with
/// contour lines of the fitted plane.
pub fn scatter_svg(records: &[EvalRecord], fit: Option<&RegressionFit<f64>>, scale: FlopsScale, task: &str) -> String {
    let xs: Vec<f64> = records.iter().map(|r| r.metrics.composite).collect();
    let ys: Vec<f64> = records.iter().map(|r| scale.apply(r.flops)).collect();
    let fs: Vec<f64> = records.iter().map(|r| r.fitness).collect();
    let (xr, yr) = (extent(xs.iter().copied()), extent(ys.iter().copied()));
    let (flo, fhi) = fs
        .iter()
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    let px = |x: f64| MARGIN + (x - xr.0) / (xr.1 - xr.0) * (W - 2.0 * MARGIN);
    let py = |y: f64| H - MARGIN - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * MARGIN);

    let mut s = svg_open(&format!("{task}: fitness over complexity"));
    let y_label = match scale {
        FlopsScale::Log10 => "log10 FLOPs",
        FlopsScale::Raw => "FLOPs",
    };
    axes(&mut s, "composite morphological complexity", y_label, xr, Some(yr));

    if let Some(f) = fit {
        // fitted plane b0 + b1 x + b2 y = level, clipped to the plot box
        let levels = 5;
        for k in 1..=levels {
            let level = flo + (fhi - flo) * k as f64 / (levels + 1) as f64;
            if let Some(((ax, ay), (bx, by))) = clip_line(f, level, xr, yr) {
                let _ = writeln!(
                    s,
                    r#"<line class="contour" x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="{}" stroke-dasharray="4 3"/>"#,
                    px(ax),
                    py(ay),
                    px(bx),
                    py(by),
                    color_ramp((level - flo) / (fhi - flo))
                );
            }
        }
    }
    for ((x, y), f) in xs.iter().zip(&ys).zip(&fs) {
        let t = if fhi > flo { (f - flo) / (fhi - flo) } else { 0.5 };
        let _ = writeln!(
            s,
            r#"<circle cx="{:.2}" cy="{:.2}" r="4" fill="{}" stroke="black" stroke-width="0.5"/>"#,
            px(*x),
            py(*y),
            color_ramp(t)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Segment of `b0 + b1 x + b2 y = level` inside the box.
fn clip_line(f: &RegressionFit<f64>, level: f64, xr: (f64, f64), yr: (f64, f64)) -> Option<((f64, f64), (f64, f64))> {
    let c = level - f.beta0;
    let mut pts: Vec<(f64, f64)> = Vec::new();
    if f.beta2 != 0.0 {
        for x in [xr.0, xr.1] {
            let y = (c - f.beta1 * x) / f.beta2;
            if y >= yr.0 && y <= yr.1 {
                pts.push((x, y));
            }
        }
    }
    if f.beta1 != 0.0 {
        for y in [yr.0, yr.1] {
            let x = (c - f.beta2 * y) / f.beta1;
            if x >= xr.0 && x <= xr.1 {
                pts.push((x, y));
            }
        }
    }
    pts.dedup_by(|a, b| (a.0 - b.0).abs() < 1e-12 && (a.1 - b.1).abs() < 1e-12);
    (pts.len() >= 2).then(|| (pts[0], pts[1]))
}

/// One box per (metric, level) for `response`.
pub fn boxplot_svg(table: &SensitivityTable, response: Response, task: &str) -> String {
    let cells: Vec<&SensitivityCell> = table.cells.iter().filter(|c| c.response == response).collect();
    let yr = extent(cells.iter().filter_map(|c| c.stats.as_ref()).flat_map(|s| [s.min, s.max]));
    let py = |y: f64| H - MARGIN - (y - yr.0) / (yr.1 - yr.0) * (H - 2.0 * MARGIN);
    let slot = (W - 2.0 * MARGIN) / cells.len().max(1) as f64;

    let mut s = svg_open(&format!("{task}: {} by metric level", response.name()));
    axes(&mut s, "metric / level", response.name(), (0.0, 0.0), Some(yr));
    for (i, c) in cells.iter().enumerate() {
        let cx = MARGIN + slot * (i as f64 + 0.5);
        let half = slot * 0.3;
        let label = format!("{} {}", &c.metric[..3], level_name(c.level, table.levels));
        let _ = writeln!(
            s,
            r#"<text x="{cx:.2}" y="{}" text-anchor="end" font-size="9" transform="rotate(-45 {cx:.2} {})">{}</text>"#,
            H - MARGIN + 12.0,
            H - MARGIN + 12.0,
            xml_escape(&label)
        );
        let Some(st) = &c.stats else { continue };
        let _ = writeln!(
            s,
            r#"<line x1="{cx:.2}" y1="{:.2}" x2="{cx:.2}" y2="{:.2}" stroke="black"/>"#,
            py(st.whisker_low),
            py(st.whisker_high)
        );
        let _ = writeln!(
            s,
            r#"<rect class="box" x="{:.2}" y="{:.2}" width="{:.2}" height="{:.2}" fill="{}" stroke="black"/>"#,
            cx - half,
            py(st.q3),
            2.0 * half,
            (py(st.q1) - py(st.q3)).max(0.5),
            color_ramp(c.level as f64 / (table.levels.max(2) - 1) as f64)
        );
        let _ = writeln!(
            s,
            r#"<line x1="{:.2}" y1="{:.2}" x2="{:.2}" y2="{:.2}" stroke="black" stroke-width="2"/>"#,
            cx - half,
            py(st.median),
            cx + half,
            py(st.median)
        );
        for o in &st.outliers {
            let _ = writeln!(s, r#"<circle cx="{cx:.2}" cy="{:.2}" r="2.5" fill="none" stroke="black"/>"#, py(*o));
        }
    }
    s.push_str("</svg>\n");
    s
}
