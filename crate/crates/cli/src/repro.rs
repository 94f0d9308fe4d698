//! Experiment presets. Each writes a JSON report plus CSV/SVG views under
//! the output directory.

use std::path::{Path, PathBuf};

use subspectra_core::analysis::AngleTrajectory;
use subspectra_core::experiments::{
    convergence_trajectories, cross_model_suite, model_data_grid, CrossModelConfig, GridConfig,
    TrajectoryConfig,
};
use subspectra_core::store::{emit_report, save_json};
use subspectra_core::{Report, ReportFormat, Result};

use crate::{Outcome, Preset, ReproArgs};

struct Writer<'a> {
    dir: &'a Path,
    artifacts: Vec<PathBuf>,
}

impl Writer<'_> {
    fn json<T: serde::Serialize>(&mut self, name: &str, value: &T) -> Result<()> {
        let p = self.dir.join(name);
        save_json(&p, value)?;
        self.artifacts.push(p);
        Ok(())
    }

    fn report(&mut self, stem: &str, report: &Report, formats: &[ReportFormat]) -> Result<()> {
        for &f in formats {
            let ext = match f {
                ReportFormat::Csv => "csv",
                ReportFormat::Json => "json",
                ReportFormat::Svg => "svg",
            };
            let p = self.dir.join(format!("{stem}.{ext}"));
            emit_report(report, &p, f)?;
            self.artifacts.push(p);
        }
        Ok(())
    }
}

const CHARTED: &[ReportFormat] = &[ReportFormat::Csv, ReportFormat::Svg];

pub fn run(a: ReproArgs) -> Result<Outcome> {
    let mut w = Writer {
        dir: &a.out,
        artifacts: Vec::new(),
    };
    let seeds = a.seeds.clone();
    let summary = match a.preset {
        Preset::H1Grid => h1(&mut w, seeds)?,
        Preset::H2Trajectories => h2(&mut w, seeds)?,
        Preset::H3Correlation => h3(&mut w)?,
        Preset::Epoch0Zigzag => zigzag(&mut w, seeds)?,
        Preset::TopkNoconverge => topk(&mut w, seeds)?,
    };
    Ok(Outcome {
        summary,
        artifacts: w.artifacts,
    })
}

fn h1(w: &mut Writer<'_>, seeds: Option<Vec<u64>>) -> Result<String> {
    let mut cfg = CrossModelConfig::default();
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    let r = cross_model_suite(&cfg)?;
    w.json("h1.json", &r)?;
    w.report("grid_trained", &Report::Grid(r.trained.clone()), CHARTED)?;
    w.report("grid_initial", &Report::Grid(r.initial.clone()), CHARTED)?;
    Ok(format!(
        "h1-grid models={} baseline_mean={:.4} baseline_sd={:.4} baseline_p99={:.4} trained_mean={:.4} \
         trained_min={:.4} all_above_p99={} mean_above_5sd={}",
        r.run_ids.len(),
        r.baseline_mean,
        r.baseline_std,
        r.baseline_p99,
        r.trained_mean,
        r.trained_min,
        r.all_above_baseline_p99(),
        r.mean_above_baseline(5.0)
    ))
}

fn trajectory_config(seeds: Option<Vec<u64>>) -> TrajectoryConfig {
    let mut cfg = TrajectoryConfig::default();
    if let Some(s) = seeds {
        cfg.seeds = s;
    }
    cfg
}

fn h2(w: &mut Writer<'_>, seeds: Option<Vec<u64>>) -> Result<String> {
    let cfg = TrajectoryConfig {
        topk: Vec::new(),
        ..trajectory_config(seeds)
    };
    let r = convergence_trajectories(&cfg)?;
    w.json("h2.json", &r)?;
    let mut parts = Vec::new();
    for s in &r.runs {
        w.report(
            &format!("seed{}", s.seed),
            &Report::Trajectory(s.trajectory.clone()),
            CHARTED,
        )?;
        parts.push(format!(
            "seed{}:rho={:.3},p={:.1e},reversals={}",
            s.seed, s.spearman.rho, s.spearman.p, s.first_epoch_reversals
        ));
    }
    Ok(format!("h2-trajectories {}", parts.join(" ")))
}

/// Only the per-step points of epoch 0.
fn first_epoch(t: &AngleTrajectory) -> AngleTrajectory {
    AngleTrajectory {
        points: t.points.iter().filter(|p| p.epoch == 0).cloned().collect(),
        gaps: t.gaps.iter().filter(|g| g.epoch == 0).cloned().collect(),
        ..t.clone()
    }
}

fn zigzag(w: &mut Writer<'_>, seeds: Option<Vec<u64>>) -> Result<String> {
    let cfg = TrajectoryConfig {
        topk: Vec::new(),
        ..trajectory_config(seeds)
    };
    let r = convergence_trajectories(&cfg)?;
    let firsts: Vec<AngleTrajectory> = r.runs.iter().map(|s| first_epoch(&s.trajectory)).collect();
    w.json("epoch0.json", &firsts)?;
    w.report(
        "epoch0",
        &Report::Trajectories(firsts),
        &[ReportFormat::Csv],
    )?;
    let parts: Vec<String> = r
        .runs
        .iter()
        .map(|s| {
            format!(
                "seed{}:max={:.2},reversals={}",
                s.seed,
                s.first_epoch_max.unwrap_or(f64::NAN),
                s.first_epoch_reversals
            )
        })
        .collect();
    Ok(format!("epoch0-zigzag {}", parts.join(" ")))
}

fn topk(w: &mut Writer<'_>, seeds: Option<Vec<u64>>) -> Result<String> {
    let mut cfg = trajectory_config(seeds);
    cfg.seeds.truncate(1);
    let r = convergence_trajectories(&cfg)?;
    let mut traces = vec![r.runs[0].trajectory.clone()];
    traces.extend(r.topk.iter().map(|(t, _)| t.clone()));
    w.json("topk.json", &r)?;
    w.report("topk", &Report::Trajectories(traces), CHARTED)?;
    let mut parts = vec![format!("k1:rho={:.3}", r.runs[0].spearman.rho)];
    for (t, s) in &r.topk {
        parts.push(match s {
            Some(s) => format!("k{}:rho={:.3}", t.k, s.rho),
            None => format!("k{}:rho=undefined", t.k),
        });
    }
    Ok(format!(
        "topk-noconverge seed={} {}",
        cfg.seeds[0],
        parts.join(" ")
    ))
}

fn h3(w: &mut Writer<'_>) -> Result<String> {
    let r = model_data_grid(&GridConfig::default())?;
    w.json("h3.json", &r)?;
    w.report(
        "angle_vs_test",
        &Report::Correlation(r.angle_vs_test.clone()),
        CHARTED,
    )?;
    w.report(
        "gap_prediction",
        &Report::GapPrediction(r.gap_prediction.clone()),
        &[ReportFormat::Csv],
    )?;
    let traces: Vec<AngleTrajectory> = r.runs.iter().map(|g| g.trajectory.clone()).collect();
    w.report("data_angle", &Report::Trajectories(traces), CHARTED)?;
    Ok(format!(
        "h3-correlation runs={} spearman_rho={:.4} spearman_p={:.3e} decreasing={}/{} mi_angle={:.4} \
         mi_shuffled_p95={:.4} mi_pseudo_val={:.4} mi_combined={:.4}",
        r.runs.len(),
        r.angle_vs_test.spearman_rho,
        r.angle_vs_test.spearman_p,
        r.decreasing_runs,
        r.runs.len(),
        r.angle_mi(),
        r.shuffled_mi_p95,
        r.pseudo_val_mi(),
        r.combined_mi()
    ))
}
