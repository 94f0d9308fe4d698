use std::fmt::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use super::svg::{heatmap, line_chart, scatter, Axes, Series};
use crate::analysis::{
    AngleGrid, AngleTrajectory, CorrelationReport, GapPredictionReport, LayerAngle,
};
use crate::error::{Error, Result};
use crate::subspace::{Histogram, SpectrumSummary};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ReportFormat {
    Csv,
    Json,
    Svg,
}

impl FromStr for ReportFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "csv" => Ok(Self::Csv),
            "json" => Ok(Self::Json),
            "svg" => Ok(Self::Svg),
            other => Err(Error::Validation(format!(
                "unknown report format {other:?}"
            ))),
        }
    }
}

impl ReportFormat {
    /// Format implied by a file extension.
    pub fn from_path(path: &Path) -> Option<Self> {
        path.extension()?.to_str()?.parse().ok()
    }
}

/// Anything `emit_report` can write.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "report", content = "data")]
pub enum Report {
    Trajectory(AngleTrajectory),
    /// Several trajectories of one run (e.g. `k = 1..6`) on one chart.
    Trajectories(Vec<AngleTrajectory>),
    Grid(AngleGrid),
    Correlation(CorrelationReport),
    GapPrediction(GapPredictionReport),
    Spectrum(SpectrumSummary),
    Histogram(Histogram),
    LayerAngles(Vec<LayerAngle>),
}

impl Report {
    fn name(&self) -> &'static str {
        match self {
            Report::Trajectory(_) => "trajectory",
            Report::Trajectories(_) => "trajectories",
            Report::Grid(_) => "grid",
            Report::Correlation(_) => "correlation",
            Report::GapPrediction(_) => "gap prediction",
            Report::Spectrum(_) => "spectrum",
            Report::Histogram(_) => "histogram",
            Report::LayerAngles(_) => "layer angles",
        }
    }
}

fn opt<T: std::fmt::Display>(v: Option<T>) -> String {
    v.map(|v| v.to_string()).unwrap_or_default()
}

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

fn trajectory_rows(out: &mut String, t: &AngleTrajectory) {
    for p in &t.points {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{}",
            csv_field(&t.run_id),
            t.k,
            t.split,
            p.epoch,
            opt(p.iteration),
            p.degrees,
            p.cosine_abs,
            p.degenerate
        );
    }
}

const TRAJECTORY_HEADER: &str = "run_id,k,split,epoch,iteration,degrees,cosine_abs,degenerate";

fn to_csv(report: &Report) -> Result<String> {
    let mut out = String::new();
    match report {
        Report::Trajectory(t) => {
            out.push_str(TRAJECTORY_HEADER);
            out.push('\n');
            trajectory_rows(&mut out, t);
        }
        Report::Trajectories(ts) => {
            out.push_str(TRAJECTORY_HEADER);
            out.push('\n');
            for t in ts {
                trajectory_rows(&mut out, t);
            }
        }
        Report::Grid(g) => {
            out.push_str("row,col,cosine_abs,row_degenerate,col_degenerate\n");
            for (i, a) in g.labels.iter().enumerate() {
                for (j, b) in g.labels.iter().enumerate() {
                    let _ = writeln!(
                        out,
                        "{},{},{},{},{}",
                        csv_field(a),
                        csv_field(b),
                        g.cosines[i][j],
                        g.degenerate[i],
                        g.degenerate[j]
                    );
                }
            }
        }
        Report::Correlation(c) => {
            out.push_str("index,x,y\n");
            for (i, (x, y)) in c.x.iter().zip(&c.y).enumerate() {
                let _ = writeln!(out, "{i},{x},{y}");
            }
        }
        Report::GapPrediction(g) => {
            let names: Vec<&String> = g
                .rows
                .first()
                .map(|r| r.measures.keys().collect())
                .unwrap_or_default();
            out.push_str("model_id,observed_gap,degenerate");
            for n in &names {
                out.push(',');
                out.push_str(&csv_field(n));
            }
            out.push('\n');
            for r in &g.rows {
                let _ = write!(
                    out,
                    "{},{},{}",
                    csv_field(&r.model_id),
                    opt(r.observed_gap),
                    r.degenerate
                );
                for n in &names {
                    let _ = write!(out, ",{}", r.measures[*n]);
                }
                out.push('\n');
            }
        }
        Report::Spectrum(s) => {
            out.push_str(
                "k,singular_value,explained_variance_ratio,cumulative_ratio,reconstruction_error\n",
            );
            for i in 0..s.singular_values.len() {
                let _ = writeln!(
                    out,
                    "{},{},{},{},{}",
                    i + 1,
                    s.singular_values[i],
                    s.explained_variance_ratios[i],
                    s.cumulative_ratios[i],
                    s.reconstruction_errors[i]
                );
            }
        }
        Report::Histogram(h) => {
            out.push_str("bin_lo,bin_hi,count,density\n");
            for (i, c) in h.counts.iter().enumerate() {
                let d = h.smoothed_density.as_ref().map(|d| d[i]);
                let _ = writeln!(
                    out,
                    "{},{},{c},{}",
                    h.bin_edges[i],
                    h.bin_edges[i + 1],
                    opt(d)
                );
            }
        }
        Report::LayerAngles(ls) => {
            out.push_str("layer,degrees,cosine_abs,degenerate\n");
            for l in ls {
                let _ = writeln!(
                    out,
                    "{},{},{},{}",
                    l.layer,
                    opt(l.angle.map(|a| a.degrees)),
                    opt(l.angle.map(|a| a.cosine_abs)),
                    l.degenerate
                );
            }
        }
    }
    Ok(out)
}

/// Chart points of a trajectory: epoch 0 is drawn at the largest angle
/// reached during the first epoch when per-step data exists.
fn chart_points(t: &AngleTrajectory) -> Vec<(f64, f64)> {
    let mut pts = Vec::new();
    if let Some(m) = t.first_epoch_max() {
        pts.push((0.0, m));
    }
    pts.extend(
        t.points
            .iter()
            .filter(|p| p.iteration.is_none())
            .map(|p| (p.epoch as f64, p.degrees)),
    );
    pts
}

fn to_svg(report: &Report) -> Result<String> {
    let traj_axes = Axes {
        title: "Angle trajectory",
        x_label: "epoch",
        y_label: "angle (degrees)",
    };
    match report {
        Report::Trajectory(t) => {
            let name = format!("k={}", t.k);
            Ok(line_chart(
                &traj_axes,
                &[Series {
                    name: &name,
                    points: chart_points(t),
                }],
            ))
        }
        Report::Trajectories(ts) => {
            let names: Vec<String> = ts.iter().map(|t| format!("k={}", t.k)).collect();
            let series: Vec<Series<'_>> = ts
                .iter()
                .zip(&names)
                .map(|(t, n)| Series {
                    name: n,
                    points: chart_points(t),
                })
                .collect();
            Ok(line_chart(&traj_axes, &series))
        }
        Report::Grid(g) => Ok(heatmap("|cos| between P-vectors", &g.labels, &g.cosines)),
        Report::Correlation(c) => {
            let title = format!(
                "spearman rho={:.3} p={:.3e} n={}",
                c.spearman_rho, c.spearman_p, c.n
            );
            let pts: Vec<(f64, f64)> = c.x.iter().copied().zip(c.y.iter().copied()).collect();
            scatter(
                &Axes {
                    title: &title,
                    x_label: &c.variables[0],
                    y_label: &c.variables[1],
                },
                &pts,
                c.log_log,
            )
        }
        Report::Spectrum(s) => Ok(line_chart(
            &Axes {
                title: "Explained variance",
                x_label: "k",
                y_label: "ratio",
            },
            &[
                Series {
                    name: "ratio",
                    points: s
                        .explained_variance_ratios
                        .iter()
                        .enumerate()
                        .map(|(i, &r)| ((i + 1) as f64, r))
                        .collect(),
                },
                Series {
                    name: "cumulative",
                    points: s
                        .cumulative_ratios
                        .iter()
                        .enumerate()
                        .map(|(i, &r)| ((i + 1) as f64, r))
                        .collect(),
                },
            ],
        )),
        Report::LayerAngles(ls) => Ok(line_chart(
            &Axes {
                title: "Angle to data P-vector by layer",
                x_label: "layer",
                y_label: "angle (degrees)",
            },
            &[Series {
                name: "angle",
                points: ls
                    .iter()
                    .filter_map(|l| l.angle.map(|a| (l.layer as f64, a.degrees)))
                    .collect(),
            }],
        )),
        Report::GapPrediction(_) | Report::Histogram(_) => Err(Error::Validation(format!(
            "{} reports cannot be rendered as svg",
            report.name()
        ))),
    }
}

/// Renders `report` in `format`.
pub fn render_report(report: &Report, format: ReportFormat) -> Result<String> {
    match format {
        ReportFormat::Csv => to_csv(report),
        ReportFormat::Svg => to_svg(report),
        ReportFormat::Json => serde_json::to_string_pretty(report)
            .map(|mut s| {
                s.push('\n');
                s
            })
            .map_err(|e| Error::Numerical(format!("report serialization failed: {e}"))),
    }
}

/// Renders and atomically writes `report` to `path`.
pub fn emit_report(report: &Report, path: &Path, format: ReportFormat) -> Result<()> {
    let text = render_report(report, format)?;
    super::write_atomic(path, text.as_bytes())
}
