use std::path::{Path, PathBuf};

use subspectra_core::analysis::{
    correlate, model_data_angle, per_layer_angles, predict_gap, trajectory, GapCandidate,
    GapPredictionConfig, Pooling,
};
use subspectra_core::experiments::{svd_bench, MixtureConfig};
use subspectra_core::store::{
    emit_report, load_json, load_run, read_fmat, save_json, save_run, write_fmat,
};
use subspectra_core::subspace::{
    angle_between, pvector_sketched, spectrum_summary, value_histogram, KdeBandwidth,
};
use subspectra_core::toynets::{
    evaluate_accuracy, extract_features, load_raw_matrix, train, write_labels,
};
use subspectra_core::{
    Checkpoint, DenseMatrix, Error, FeatureMatrix, ModelKind, ModelSpec, PVector, Provenance,
    Report, ReportFormat, Result, Run, Split, ToyDataset, TrainConfig,
};

use crate::{
    AngleArgs, Command, CorrelateArgs, DataAngleArgs, DataFlags, ExtractArgs, GenDataArgs,
    GridArgs, HistogramArgs, Outcome, OutputFlags, PerLayerArgs, PoolingArg, PredictGapArgs,
    PvectorArgs, SpectrumArgs, SplitArg, SvdBenchArgs, TrainArgs, TrajectoryArgs,
};

pub fn dispatch(cmd: Command) -> Result<Outcome> {
    match cmd {
        Command::GenData(a) => gen_data(a),
        Command::Train(a) => train_cmd(a),
        Command::Extract(a) => extract(a),
        Command::Pvector(a) => pvector_cmd(a),
        Command::Angle(a) => angle(a),
        Command::Grid(a) => grid(a),
        Command::Trajectory(a) => trajectory_cmd(a),
        Command::DataAngle(a) => data_angle(a),
        Command::PerLayer(a) => per_layer(a),
        Command::Spectrum(a) => spectrum(a),
        Command::Histogram(a) => histogram(a),
        Command::Correlate(a) => correlate_cmd(a),
        Command::PredictGap(a) => predict_gap_cmd(a),
        Command::SvdBench(a) => svd_bench_cmd(a),
        Command::Repro(a) => crate::repro::run(a),
    }
}

fn io_error(path: &Path, source: std::io::Error) -> Error {
    Error::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn labels_path(input: &Path, explicit: Option<&Path>) -> Option<PathBuf> {
    explicit.map(Path::to_path_buf).or_else(|| {
        let p = input.with_extension("labels");
        p.exists().then_some(p)
    })
}

pub(crate) fn load_dataset(flags: &DataFlags) -> Result<ToyDataset> {
    load_raw_matrix(
        &flags.input,
        labels_path(&flags.input, flags.labels.as_deref()).as_deref(),
    )
}

pub(crate) fn report_format(out: &OutputFlags) -> ReportFormat {
    out.format
        .map(Into::into)
        .or_else(|| ReportFormat::from_path(&out.out))
        .unwrap_or(ReportFormat::Json)
}

fn emit(report: &Report, out: &OutputFlags) -> Result<PathBuf> {
    emit_report(report, &out.out, report_format(out))?;
    Ok(out.out.clone())
}

fn select(run: &Run, epoch: Option<u32>, iteration: Option<u32>) -> Result<&Checkpoint> {
    if epoch.is_none() && iteration.is_none() {
        return run.final_checkpoint().ok_or_else(|| {
            Error::Validation(format!(
                "run {} has no well-trained checkpoint",
                run.run_id()
            ))
        });
    }
    let epoch = epoch.unwrap_or(0);
    run.checkpoints
        .iter()
        .find(|c| c.epoch == epoch && c.iteration == iteration)
        .ok_or_else(|| {
            Error::Validation(format!(
                "run {} has no checkpoint at epoch {epoch} iteration {iteration:?}",
                run.run_id()
            ))
        })
}

/// Rounds to f32 so the dataset id survives the FMAT round trip.
fn quantized(ds: &ToyDataset) -> Result<ToyDataset> {
    let values = ds.x.as_slice().iter().map(|&v| v as f32 as f64).collect();
    let x = DenseMatrix::new(ds.len(), ds.dim(), values)?;
    ToyDataset::new(x, ds.labels.clone(), ds.split)
}

fn write_dataset(ds: &ToyDataset, dir: &Path, name: &str) -> Result<Vec<PathBuf>> {
    let fmat = dir.join(format!("{name}.fmat"));
    let f = FeatureMatrix::new(
        ds.x.clone(),
        Provenance::new(ds.dataset_id.clone(), ds.split),
    )?;
    write_fmat(&f, &fmat)?;
    let mut out = vec![fmat];
    if let Some(l) = &ds.labels {
        let p = dir.join(format!("{name}.labels"));
        write_labels(&p, l)?;
        out.push(p);
    }
    Ok(out)
}

fn gen_data(a: GenDataArgs) -> Result<Outcome> {
    let cfg = MixtureConfig {
        seed: a.seed,
        n_train: a.n,
        n_test: a.n_test,
        dim: a.dim,
        classes: a.classes,
        spread: a.spread,
    };
    let (train_ds, test_ds) = cfg.build()?;
    let (train_ds, test_ds) = (quantized(&train_ds)?, quantized(&test_ds)?);
    let mut artifacts = write_dataset(&train_ds, &a.out, "train")?;
    artifacts.extend(write_dataset(&test_ds, &a.out, "test")?);
    Ok(Outcome {
        summary: format!(
            "dataset train={} ({} samples) test={} ({} samples) dim={} classes={}",
            train_ds.dataset_id,
            train_ds.len(),
            test_ds.dataset_id,
            test_ds.len(),
            a.dim,
            a.classes
        ),
        artifacts,
    })
}

fn train_cmd(a: TrainArgs) -> Result<Outcome> {
    let ds = load_dataset(&a.data)?;
    let kind: ModelKind = a.model.parse()?;
    let classes =
        match kind {
            ModelKind::MlpClassifier => Some(ds.num_classes.ok_or_else(|| {
                Error::Validation("classifier training needs a labels file".into())
            })?),
            _ => None,
        };
    let spec = ModelSpec::new(kind, ds.dim(), a.widths, classes)?;
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        weight_decay: a.weight_decay,
        seed: a.seed,
        ..TrainConfig::default()
    };
    let run = train(&ds, &spec, &cfg)?;
    let dir = save_run(&run, &a.out)?;
    let loss = run
        .manifest
        .loss_history
        .last()
        .copied()
        .unwrap_or(f64::NAN);
    Ok(Outcome {
        summary: format!(
            "run {} status={:?} checkpoints={} final_loss={loss:.6}",
            run.run_id(),
            run.manifest.status,
            run.checkpoints.len()
        ),
        artifacts: vec![dir],
    })
}

fn extract(a: ExtractArgs) -> Result<Outcome> {
    let run = load_run(&a.ckpt.run)?;
    let ckpt = select(&run, a.ckpt.epoch, a.ckpt.iteration)?;
    let mut ds = load_dataset(&a.data)?;
    ds.split = match a.split {
        SplitArg::Train => Split::Train,
        SplitArg::Test => Split::Test,
    };
    let f = extract_features(ckpt, &ds, a.layer)?;
    write_fmat(&f, &a.out)?;
    Ok(Outcome {
        summary: format!(
            "features {}x{} from {}",
            f.samples(),
            f.features(),
            ckpt.label()
        ),
        artifacts: vec![a.out],
    })
}

fn pvector_cmd(a: PvectorArgs) -> Result<Outcome> {
    let f = read_fmat(&a.input)?;
    let p = pvector_sketched(
        &f,
        a.svd.method.into(),
        a.svd.seed,
        a.svd.oversample,
        a.svd.power_iters,
    )?;
    save_json(&a.out, &p)?;
    Ok(Outcome {
        summary: format!(
            "pvector dim={} sigma1={:.6} method={:?} degenerate={}",
            p.len(),
            p.sigma1,
            p.svd_method,
            p.degenerate
        )
        .to_lowercase(),
        artifacts: vec![a.out],
    })
}

fn angle(a: AngleArgs) -> Result<Outcome> {
    let u: PVector = load_json(&a.a)?;
    let v: PVector = load_json(&a.b)?;
    let ang = angle_between(&u.values, &v.values)?;
    let mut artifacts = Vec::new();
    if let Some(out) = a.out {
        save_json(&out, &ang)?;
        artifacts.push(out);
    }
    Ok(Outcome {
        summary: format!("cosine={:.6} degrees={:.2}", ang.cosine_abs, ang.degrees),
        artifacts,
    })
}

fn grid(a: GridArgs) -> Result<Outcome> {
    let pvs = a
        .inputs
        .iter()
        .map(|p| load_json::<PVector>(p))
        .collect::<Result<Vec<_>>>()?;
    let labels = a
        .inputs
        .iter()
        .map(|p| {
            p.file_stem()
                .map_or_else(|| p.display().to_string(), |s| s.to_string_lossy().into())
        })
        .collect();
    let g = subspectra_core::analysis::angle_grid(&pvs, labels)?;
    let pairs = g.pairs();
    let min = pairs.iter().copied().fold(f64::INFINITY, f64::min);
    let mean = pairs.iter().sum::<f64>() / pairs.len() as f64;
    let path = emit(&Report::Grid(g), &a.output)?;
    Ok(Outcome {
        summary: format!(
            "grid models={} mean_cosine={mean:.6} min_cosine={min:.6}",
            pvs.len()
        ),
        artifacts: vec![path],
    })
}

fn trajectory_summary(t: &subspectra_core::analysis::AngleTrajectory) -> String {
    let first = t.points.first().map_or(f64::NAN, |p| p.degrees);
    let last = t.points.last().map_or(f64::NAN, |p| p.degrees);
    let mut s = format!(
        "points={} gaps={} degenerate={} first_degrees={first:.2} last_degrees={last:.2}",
        t.points.len(),
        t.gaps.len(),
        t.degenerate_count()
    );
    if let Ok(r) = t.epoch_spearman(1) {
        s.push_str(&format!(
            " spearman_rho={:.4} spearman_p={:.3e}",
            r.rho, r.p
        ));
    }
    s
}

fn trajectory_cmd(a: TrajectoryArgs) -> Result<Outcome> {
    let run = load_run(&a.run)?;
    let ds = load_dataset(&a.data)?;
    let reference_run = match &a.reference_run {
        Some(dir) => Some(load_run(dir)?),
        None => None,
    };
    let rr = reference_run.as_ref().unwrap_or(&run);
    let reference = select(rr, a.reference_epoch, None)?;
    let t = trajectory(&run, reference, &ds, a.k)?;
    let summary = format!("trajectory k={} {}", a.k, trajectory_summary(&t));
    let path = emit(&Report::Trajectory(t), &a.output)?;
    Ok(Outcome {
        summary,
        artifacts: vec![path],
    })
}

fn data_angle(a: DataAngleArgs) -> Result<Outcome> {
    let run = load_run(&a.run)?;
    let ds = load_dataset(&a.data)?;
    let t = model_data_angle(&run, &ds)?;
    let summary = format!("data-angle {}", trajectory_summary(&t));
    let path = emit(&Report::Trajectory(t), &a.output)?;
    Ok(Outcome {
        summary,
        artifacts: vec![path],
    })
}

fn per_layer(a: PerLayerArgs) -> Result<Outcome> {
    let run = load_run(&a.ckpt.run)?;
    let ckpt = select(&run, a.ckpt.epoch, a.ckpt.iteration)?;
    let ds = load_dataset(&a.data)?;
    let layers = per_layer_angles(ckpt, &ds)?;
    let parts: Vec<String> = layers
        .iter()
        .map(|l| match &l.angle {
            Some(ang) => format!("layer{}={:.2}", l.layer, ang.degrees),
            None => format!("layer{}=none", l.layer),
        })
        .collect();
    let path = emit(&Report::LayerAngles(layers), &a.output)?;
    Ok(Outcome {
        summary: format!("per-layer {}", parts.join(" ")),
        artifacts: vec![path],
    })
}

fn spectrum(a: SpectrumArgs) -> Result<Outcome> {
    let f = read_fmat(&a.input)?;
    let k = a.k.min(f.samples().min(f.features()));
    let s = spectrum_summary(&f, k)?;
    let summary = format!(
        "spectrum k={k} sigma1={:.6} ratio1={:.6} cumulative_k={:.6}",
        s.singular_values[0],
        s.explained_variance_ratios[0],
        s.cumulative_ratios[k - 1]
    );
    let path = emit(&Report::Spectrum(s), &a.output)?;
    Ok(Outcome {
        summary,
        artifacts: vec![path],
    })
}

fn parse_kde(s: &str) -> Result<KdeBandwidth> {
    if s == "silverman" {
        return Ok(KdeBandwidth::Silverman);
    }
    match s.parse::<f64>() {
        Ok(h) if h > 0.0 => Ok(KdeBandwidth::Fixed(h)),
        _ => Err(Error::Validation(format!(
            "--kde expects `silverman` or a positive bandwidth, got {s:?}"
        ))),
    }
}

fn histogram(a: HistogramArgs) -> Result<Outcome> {
    let values = if a.input.extension().is_some_and(|e| e == "json") {
        load_json::<PVector>(&a.input)?.values
    } else {
        read_fmat(&a.input)?.data.into_vec()
    };
    let kde = a.kde.as_deref().map(parse_kde).transpose()?;
    let h = value_histogram(&values, a.bins, kde)?;
    let summary = format!(
        "histogram values={} bins={} degenerate={}",
        values.len(),
        h.counts.len(),
        h.degenerate
    );
    let path = emit(&Report::Histogram(h), &a.output)?;
    Ok(Outcome {
        summary,
        artifacts: vec![path],
    })
}

fn read_columns(path: &Path, names: &[&str]) -> Result<Vec<Vec<f64>>> {
    let bad = |msg: String| Error::Validation(format!("{}: {msg}", path.display()));
    let mut rdr = csv::Reader::from_path(path).map_err(|e| match e.into_kind() {
        csv::ErrorKind::Io(io) => io_error(path, io),
        other => bad(format!("{other:?}")),
    })?;
    let headers = rdr.headers().map_err(|e| bad(e.to_string()))?.clone();
    let idx = names
        .iter()
        .map(|n| {
            headers
                .iter()
                .position(|h| h == *n)
                .ok_or_else(|| bad(format!("no column {n:?}")))
        })
        .collect::<Result<Vec<_>>>()?;
    let mut cols = vec![Vec::new(); names.len()];
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec.map_err(|e| bad(e.to_string()))?;
        for (c, &i) in idx.iter().enumerate() {
            let field = rec.get(i).unwrap_or("");
            let v = match field {
                "true" => 1.0,
                "false" => 0.0,
                f => f
                    .parse::<f64>()
                    .map_err(|_| bad(format!("row {}: {field:?} is not a number", line + 2)))?,
            };
            cols[c].push(v);
        }
    }
    Ok(cols)
}

fn correlate_cmd(a: CorrelateArgs) -> Result<Outcome> {
    let mut names = vec![a.x.as_str(), a.y.as_str()];
    if let Some(d) = &a.degenerate_column {
        names.push(d);
    }
    let cols = read_columns(&a.input, &names)?;
    let degenerate = cols
        .get(2)
        .map_or(0, |d| d.iter().filter(|&&v| v != 0.0).count());
    let pooling = match a.pooling {
        PoolingArg::AcrossEpochs => Pooling::AcrossEpochs,
        PoolingArg::AcrossRuns => Pooling::AcrossRuns,
        PoolingArg::Unspecified => Pooling::Unspecified,
    };
    let r = correlate(
        &cols[0],
        &cols[1],
        [&a.x, &a.y],
        a.log_log,
        pooling,
        degenerate,
    )?;
    let summary = format!(
        "spearman_rho={:.4} spearman_p={:.3e} pearson_r={:.4} n={} degenerate={}",
        r.spearman_rho, r.spearman_p, r.pearson_r, r.n, r.degenerate_points
    );
    let path = emit(&Report::Correlation(r), &a.output)?;
    Ok(Outcome {
        summary,
        artifacts: vec![path],
    })
}

fn predict_gap_cmd(a: PredictGapArgs) -> Result<Outcome> {
    let mut train_ds = load_dataset(&a.data)?;
    train_ds.split = Split::Train;
    let test_ds = match &a.test {
        Some(p) => {
            let labels = labels_path(p, a.test_labels.as_deref());
            let mut ds = load_raw_matrix(p, labels.as_deref())?;
            ds.split = Split::Test;
            Some(ds)
        }
        None => None,
    };
    let runs = a
        .runs
        .iter()
        .map(|d| load_run(d))
        .collect::<Result<Vec<_>>>()?;
    let mut cands = Vec::with_capacity(runs.len());
    for run in &runs {
        let fin = select(run, None, None)?;
        let init = run.initial().ok_or_else(|| {
            Error::Validation(format!("run {} has no initial checkpoint", run.run_id()))
        })?;
        let observed_gap = match &test_ds {
            Some(t) => Some(evaluate_accuracy(fin, &train_ds)? - evaluate_accuracy(fin, t)?),
            None => None,
        };
        cands.push(GapCandidate {
            model_id: run.run_id().to_string(),
            final_ckpt: fin,
            init_ckpt: init,
            observed_gap,
        });
    }
    let cfg = GapPredictionConfig {
        weight: a.weight,
        bins: a.bins,
        pseudo_seed: a.seed,
        ..GapPredictionConfig::default()
    };
    let report = predict_gap(&cands, &train_ds, &cfg)?;
    let summary = if report.mi_scores.is_empty() {
        format!(
            "predict-gap models={} (no test split: rankings only)",
            report.rows.len()
        )
    } else {
        let parts: Vec<String> = report
            .mi_scores
            .iter()
            .map(|(k, v)| format!("mi[{k}]={v:.4}"))
            .collect();
        format!(
            "predict-gap models={} bins={} {}",
            report.rows.len(),
            report.bins,
            parts.join(" ")
        )
    };
    let path = emit(&Report::GapPrediction(report), &a.output)?;
    Ok(Outcome {
        summary,
        artifacts: vec![path],
    })
}

fn svd_bench_cmd(a: SvdBenchArgs) -> Result<Outcome> {
    let r = svd_bench(a.rows, a.cols, a.k, a.seed, a.oversample, a.power_iters)?;
    let mut artifacts = Vec::new();
    if let Some(out) = a.out {
        save_json(&out, &r)?;
        artifacts.push(out);
    }
    Ok(Outcome {
        summary: format!(
            "svd-bench {}x{} k={} exact={:.3}s randomized={:.3}s speedup={:.1}x cosine={:.6} sigma1_rel_err={:.2e}",
            r.rows, r.cols, r.k, r.exact_seconds, r.randomized_seconds, r.speedup, r.cosine_abs, r.sigma1_relative_error
        ),
        artifacts,
    })
}
