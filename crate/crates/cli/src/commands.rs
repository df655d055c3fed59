use std::collections::BTreeMap;
use std::path::PathBuf;

use anyhow::{anyhow, bail, Context, Result};
use fairdcov::model::{
    chunked_parts, train, EarlyStopping, ObjectiveSpec, OptimiserConfig, RegulariserKind,
    TrainHistory, TrainedModel,
};
use fairdcov::pipeline::{
    calibrate_lambda, evaluate_model, ingest_csv, oversample_subgroups, preprocess,
    stratified_split, suggest_lambda_scale, tune_hyperparams, Calibration, CalibrationConfig,
    Candidate, Dataset, FairnessReport, FittedTransforms, ProtectedKind, RawTable, SplitPlan,
    TuneResult,
};
use fairdcov::scoring::{wilcoxon_one_sided, PairedScores};
use fairdcov::Error;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bundle::*;
use crate::config::RunConfig;
use crate::figures::{ecdf_points, grid, histogram, histogram_steps, line_chart, lowess, Series};

type PredictionOf = fn(&PredictionRow) -> f64;

/// Resolved settings shared by every command; flags already applied.
pub struct Ctx {
    pub config_path: PathBuf,
    pub cfg: RunConfig,
    pub seed: u64,
    pub out: PathBuf,
}

impl Ctx {
    fn bundle(&self, command: &str, seeds: Vec<u64>) -> Bundle {
        Bundle::open(&self.out, command, &self.config_path, seeds)
    }
}

/// Row positions, relative to `train.csv`, of the fitting and validation
/// parts, plus the source rows of both split files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BundleSplits {
    pub plan: SplitPlan,
    pub subtrain: Vec<usize>,
    pub validation: Vec<usize>,
    pub source_train: Vec<usize>,
    pub source_test: Vec<usize>,
}

/// Floats in CSV output use the shortest round-trip form.
fn num(v: f64) -> String {
    format!("{v}")
}

fn opt(v: Option<f64>) -> String {
    v.map(num).unwrap_or_default()
}

fn csv_text(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    Ok(String::from_utf8(w.into_inner()?)?)
}

fn parse_table(text: &str) -> Result<RawTable> {
    let (table, rejects) = RawTable::from_reader(text.as_bytes())?;
    if let Some(r) = rejects.first() {
        bail!("bundle table is malformed at line {}: {}", r.line, r.reason);
    }
    Ok(table)
}

pub fn prep(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut b = ctx.bundle("prep", vec![ctx.seed]);
    b.note_external(&ctx.config_path)?;
    b.note_external(&cfg.data)?;
    let (table, report) = ingest_csv(&cfg.data, &cfg.schema)?;
    if table.n() == 0 {
        return Err(Error::EmptyInput("no rows survived ingestion".into()).into());
    }
    // Quantile bins for the strata come from all rows; the frozen transforms
    // below are fitted on the fitting rows only.
    let (all, _) = preprocess(&table, &cfg.schema)?;
    let plan = SplitPlan {
        train_fraction: cfg.split.train_fraction,
        subtrain_fraction: cfg.split.subtrain_fraction,
        seed: ctx.seed,
    };
    let splits = stratified_split(&all.strata()?, &plan)?;
    let position = |rows: &[usize]| -> Vec<usize> {
        rows.iter()
            .map(|r| {
                splits
                    .train
                    .binary_search(r)
                    .expect("fitting rows lie in train")
            })
            .collect()
    };
    let transforms = FittedTransforms::fit(&table.select_rows(&splits.subtrain), &cfg.schema)?;
    let bundle_splits = BundleSplits {
        plan,
        subtrain: position(&splits.subtrain),
        validation: position(&splits.validation),
        source_train: splits.train.clone(),
        source_test: splits.test.clone(),
    };
    b.write(TRAIN_CSV, &table.select_rows(&splits.train).to_csv()?)?;
    b.write(TEST_CSV, &table.select_rows(&splits.test).to_csv()?)?;
    b.write(TRANSFORMS, &transforms.to_json()?)?;
    b.write(SPLITS, &serde_json::to_string_pretty(&bundle_splits)?)?;
    b.write(INGEST, &serde_json::to_string_pretty(&report)?)?;
    b.note(format!(
        "{} of {} rows kept; train {} (fit {}, validation {}), test {}",
        report.rows_kept,
        report.rows_read,
        splits.train.len(),
        splits.subtrain.len(),
        splits.validation.len(),
        splits.test.len()
    ));
    for (filter, dropped) in &report.filtered {
        b.note(format!("{filter}: {dropped} rows"));
    }
    eprintln!(
        "prepared {} rows into {} ({} train, {} test)",
        report.rows_kept,
        ctx.out.display(),
        splits.train.len(),
        splits.test.len()
    );
    b.finish(true)
}

struct TrainData {
    data: Dataset,
    splits: BundleSplits,
    transforms_sha: String,
}

fn load_train(b: &mut Bundle) -> Result<TrainData> {
    let table = parse_table(&b.read(TRAIN_CSV)?)?;
    let transforms_text = b.read(TRANSFORMS)?;
    let transforms = FittedTransforms::from_json(&transforms_text)?;
    let splits: BundleSplits = serde_json::from_str(&b.read(SPLITS)?)?;
    Ok(TrainData {
        data: transforms.transform(&table)?,
        splits,
        transforms_sha: hex::encode(Sha256::digest(transforms_text.as_bytes())),
    })
}

fn oversampled(cfg: &RunConfig, data: &Dataset, rows: &[usize], seed: u64) -> Result<Vec<usize>> {
    if cfg.split.oversample_min_count == 0 {
        return Ok(rows.to_vec());
    }
    let keys = data.subgroup_keys()?;
    Ok(oversample_subgroups(
        rows,
        &keys,
        cfg.split.oversample_min_count,
        seed,
    ))
}

fn candidate(b: &mut Bundle, cfg: &RunConfig) -> Result<Candidate> {
    if b.exists(TUNED) {
        let tuned: TuneResult = serde_json::from_str(&b.read(TUNED)?)?;
        return Ok(tuned.best);
    }
    Ok(cfg.candidate())
}

pub fn tune(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut b = ctx.bundle("tune", vec![ctx.seed]);
    b.note_external(&ctx.config_path)?;
    let td = load_train(&mut b)?;
    let rows: Vec<usize> = (0..td.data.n()).collect();
    let result = tune_hyperparams(
        &td.data,
        &rows,
        &cfg.tune.space,
        &cfg.stopping,
        cfg.tune.budget,
        cfg.tune.n_rand,
        ctx.seed,
    )?;
    let best = result
        .trials
        .iter()
        .map(|t| t.mean_loss)
        .fold(f64::INFINITY, f64::min);
    b.note(format!(
        "{} candidates, best mean fold loss {best}",
        result.trials.len()
    ));
    b.write(TUNED, &serde_json::to_string_pretty(&result)?)?;
    eprintln!(
        "tuned {} candidates; best mean fold loss {best:.6}",
        result.trials.len()
    );
    b.finish(false)
}

/// Options of `calibrate` that flags may override.
pub struct CalibrateArgs {
    pub seeds: Option<usize>,
    pub regulariser: Option<RegulariserKind>,
    pub grid: Option<Vec<f64>>,
}

const AGGREGATE_HEADER: [&str; 8] = [
    "lambda",
    "mean_RPS",
    "mean_JSD",
    "mean_UF",
    "mean_CCdCov",
    "mean_JdCov",
    "n_seeds",
    "n_diverged",
];

pub fn calibration_csv(cal: &Calibration) -> Result<String> {
    csv_text(
        &AGGREGATE_HEADER,
        cal.records.iter().map(|r| {
            vec![
                num(r.lambda),
                opt(r.mean_rps),
                opt(r.mean_jsd),
                opt(r.mean_uf),
                opt(r.mean_ccdcov),
                opt(r.mean_jdcov),
                r.n_seeds.to_string(),
                r.n_diverged.to_string(),
            ]
        }),
    )
}

pub fn calibrate(ctx: &Ctx, args: &CalibrateArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let n_seeds = args.seeds.unwrap_or(cfg.calibration.seeds);
    if n_seeds == 0 {
        return Err(Error::Config("--seeds must be at least 1".into()).into());
    }
    let seeds: Vec<u64> = (0..n_seeds as u64)
        .map(|i| ctx.seed.wrapping_add(i))
        .collect();
    let kinds = match args.regulariser {
        Some(k) => vec![k],
        None => cfg.calibration.regularisers.clone(),
    };
    if kinds.is_empty() {
        return Err(Error::Config("no regulariser to calibrate".into()).into());
    }
    let mut b = ctx.bundle("calibrate", seeds.clone());
    b.note_external(&ctx.config_path)?;
    let td = load_train(&mut b)?;
    let cand = candidate(&mut b, cfg)?;
    let fit_rows = oversampled(cfg, &td.data, &td.splits.subtrain, ctx.seed)?;
    let subtrain = td.data.select(&fit_rows);
    let validation = td.data.select(&td.splits.validation);
    let network = cand.network(&td.data);

    let mut curves: Vec<(RegulariserKind, Calibration)> = Vec::new();
    let mut run_rows = Vec::new();
    for kind in kinds {
        let grid = match (&args.grid, &cfg.calibration.grid) {
            (Some(g), _) | (None, Some(g)) => g.clone(),
            (None, None) if kind == RegulariserKind::None => vec![0.0],
            (None, None) => {
                let scale = suggested_scale(cfg, &cand, &subtrain, &validation, kind, ctx.seed)?;
                b.note(format!("{kind}: suggested lambda scale {scale}"));
                cfg.calibration
                    .multiples
                    .iter()
                    .map(|m| m * scale)
                    .collect()
            }
        };
        let cc = CalibrationConfig {
            grid,
            seeds: seeds.clone(),
            regulariser: kind,
            network: network.clone(),
            optimiser: cand.optimiser.clone(),
            stopping: cfg.stopping.clone(),
            weights: cfg.calibration.weights.clone(),
            eval: cfg.eval.clone(),
        };
        let cal = calibrate_lambda(&subtrain, &validation, &cc)?;
        for r in cal.records.iter().flat_map(|r| &r.runs) {
            if let Some(reason) = &r.divergence {
                b.note(format!(
                    "diverged: {kind} lambda={} seed={}: {reason}",
                    r.lambda, r.seed
                ));
            }
            run_rows.push(vec![
                kind.to_string(),
                num(r.lambda),
                r.seed.to_string(),
                r.diverged.to_string(),
                opt(r.rps),
                opt(r.jsd),
                opt(r.uf),
                opt(r.ccdcov),
                opt(r.jdcov),
            ]);
        }
        if let Some(e) = cal.elbow {
            b.note(format!("{kind}: advisory elbow at lambda={e}"));
        }
        b.write(&format!("calibration_{kind}.csv"), &calibration_csv(&cal)?)?;
        b.write(
            &format!("calibration_{kind}.json"),
            &serde_json::to_string_pretty(&cal)?,
        )?;
        eprintln!(
            "calibrated {kind} over {} lambdas x {} seeds",
            cal.records.len(),
            seeds.len()
        );
        curves.push((kind, cal));
    }
    b.write(
        "calibration_runs.csv",
        &csv_text(
            &[
                "regulariser",
                "lambda",
                "seed",
                "diverged",
                "RPS",
                "JSD",
                "UF",
                "CCdCov",
                "JdCov",
            ],
            run_rows,
        )?,
    )?;
    write_calibration_plots(&mut b, &curves)?;
    b.finish(false)
}

fn suggested_scale(
    cfg: &RunConfig,
    cand: &Candidate,
    subtrain: &Dataset,
    validation: &Dataset,
    kind: RegulariserKind,
    seed: u64,
) -> Result<f64> {
    let base = ObjectiveSpec::new(subtrain.task, RegulariserKind::None, 0.0);
    let out = train(
        &subtrain.to_batch()?,
        &validation.to_batch()?,
        &cand.network(subtrain),
        &base,
        &cand.optimiser,
        &cfg.stopping,
        seed,
    )?;
    let mut probe = ObjectiveSpec::new(subtrain.task, kind, 1.0);
    probe.weights = cfg.calibration.weights.clone();
    let parts = chunked_parts(
        &out.model.network,
        &validation.to_batch()?,
        &probe,
        cand.optimiser.eval_chunk,
    )?;
    Ok(suggest_lambda_scale(parts.task_loss, parts.psi)?)
}

fn write_calibration_plots(
    b: &mut Bundle,
    curves: &[(RegulariserKind, Calibration)],
) -> Result<()> {
    let mut by_lambda = Vec::new();
    let mut by_rps = Vec::new();
    let mut rows = Vec::new();
    for (kind, cal) in curves {
        let ok: Vec<_> = cal
            .records
            .iter()
            .filter_map(|r| Some((r.lambda, r.mean_rps?, r.mean_jsd?)))
            .collect();
        by_lambda.push(Series {
            name: kind.to_string(),
            points: ok.iter().map(|&(l, _, j)| (l, j)).collect(),
            step: false,
        });
        by_rps.push(Series {
            name: kind.to_string(),
            points: ok.iter().map(|&(_, r, j)| (r, j)).collect(),
            step: false,
        });
        rows.extend(
            ok.iter()
                .map(|&(l, r, j)| vec![kind.to_string(), num(l), num(r), num(j)]),
        );
    }
    let twin = csv_text(&["regulariser", "lambda", "mean_RPS", "mean_JSD"], rows)?;
    b.write(
        "jsd_vs_lambda.svg",
        &line_chart(
            "Validation JSD against lambda",
            "lambda",
            "mean JSD",
            &by_lambda,
        ),
    )?;
    b.write("jsd_vs_lambda.csv", &twin)?;
    b.write(
        "jsd_vs_rps.svg",
        &line_chart(
            "Fairness-accuracy trade-off",
            "mean RPS",
            "mean JSD",
            &by_rps,
        ),
    )?;
    b.write("jsd_vs_rps.csv", &twin)?;
    Ok(())
}

/// Options of `train` that flags may override.
pub struct TrainArgs {
    pub lambda: Option<f64>,
    pub regulariser: Option<RegulariserKind>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct FitHistory {
    /// Run on the fitting rows with early stopping on validation.
    probe: TrainHistory,
    /// Refit on all training rows for the probe's best epoch count.
    full: TrainHistory,
}

fn fit_full(
    cfg: &RunConfig,
    cand: &Candidate,
    td: &TrainData,
    objective: &ObjectiveSpec,
    seed: u64,
    b: &mut Bundle,
    name: &str,
) -> Result<(TrainedModel, FitHistory)> {
    let net = cand.network(&td.data);
    let fit = td
        .data
        .select(&oversampled(cfg, &td.data, &td.splits.subtrain, seed)?)
        .to_batch()?;
    let val = td.data.select(&td.splits.validation).to_batch()?;
    let all: Vec<usize> = (0..td.data.n()).collect();
    let full = td
        .data
        .select(&oversampled(cfg, &td.data, &all, seed)?)
        .to_batch()?;
    let guarded = |r: fairdcov::Result<fairdcov::model::TrainOutcome>, b: &mut Bundle| match r {
        Err(Error::DivergenceDetected { reason, last_good }) => {
            if let Some(m) = last_good {
                b.write(&format!("{name}_last_good.json"), &m.to_json()?)?;
            }
            Err(anyhow!(Error::DivergenceDetected {
                reason,
                last_good: None
            }))
        }
        other => Ok(other?),
    };
    let probe = guarded(
        train(
            &fit,
            &val,
            &net,
            objective,
            &cand.optimiser,
            &cfg.stopping,
            seed,
        ),
        b,
    )?;
    let epochs = probe.history.best_epoch.max(1);
    let refit_opt = OptimiserConfig {
        max_epochs: epochs,
        ..cand.optimiser.clone()
    };
    let no_stop = EarlyStopping {
        patience: epochs + 1,
        min_delta: 0.0,
    };
    let mut out = guarded(
        train(&full, &full, &net, objective, &refit_opt, &no_stop, seed),
        b,
    )?;
    out.model.preprocessing_ref = Some(td.transforms_sha.clone());
    Ok((
        out.model,
        FitHistory {
            probe: probe.history,
            full: out.history,
        },
    ))
}

/// Display keys per row: the full subgroup (continuous attributes by
/// quantile bin) and the group of the non-continuous attributes.
fn display_keys(table: &RawTable, data: &Dataset) -> Result<(Vec<String>, Vec<String>)> {
    let n = data.n();
    let mut full = vec![Vec::new(); n];
    let mut discrete = vec![Vec::new(); n];
    for p in &data.protected {
        let raw = table.column(&p.name)?;
        for i in 0..n {
            if p.kind == ProtectedKind::Continuous {
                full[i].push(format!("{}=q{}", p.name, p.labels[i]));
            } else {
                let piece = format!("{}={}", p.name, raw[i]);
                full[i].push(piece.clone());
                discrete[i].push(piece);
            }
        }
    }
    let join = |v: Vec<Vec<String>>| -> Vec<String> {
        v.into_iter()
            .map(|p| {
                if p.is_empty() {
                    "all".to_string()
                } else {
                    p.join("|")
                }
            })
            .collect()
    };
    Ok((join(full), join(discrete)))
}

pub fn train_cmd(ctx: &Ctx, args: &TrainArgs) -> Result<()> {
    let cfg = &ctx.cfg;
    let lambda = args.lambda.or(cfg.train.lambda).ok_or_else(|| {
        Error::Config("train needs an explicit lambda (--lambda or [train] lambda)".into())
    })?;
    if !(lambda.is_finite() && lambda >= 0.0) {
        return Err(Error::Config(format!("invalid lambda {lambda}")).into());
    }
    let kind = args.regulariser.unwrap_or(cfg.train.regulariser);
    let mut b = ctx.bundle("train", vec![ctx.seed]);
    b.note_external(&ctx.config_path)?;
    let table = parse_table(&b.read(TRAIN_CSV)?)?;
    let td = load_train(&mut b)?;
    let cand = candidate(&mut b, cfg)?;
    let task = td.data.task;
    let (baseline, base_hist) = fit_full(
        cfg,
        &cand,
        &td,
        &ObjectiveSpec::new(task, RegulariserKind::None, 0.0),
        ctx.seed,
        &mut b,
        "baseline",
    )?;
    let (model, model_hist) = if lambda == 0.0 || kind == RegulariserKind::None {
        (baseline.clone(), base_hist.clone())
    } else {
        let mut spec = ObjectiveSpec::new(task, kind, lambda);
        spec.weights = cfg.calibration.weights.clone();
        fit_full(cfg, &cand, &td, &spec, ctx.seed, &mut b, "model")?
    };
    let (full, discrete) = display_keys(&table, &td.data)?;
    let mut counts: BTreeMap<(&str, &str), usize> = BTreeMap::new();
    for (f, d) in full.iter().zip(&discrete) {
        *counts.entry(("subgroup", f)).or_default() += 1;
        *counts.entry(("group", d)).or_default() += 1;
    }
    b.write(BASELINE, &baseline.to_json()?)?;
    b.write(MODEL, &model.to_json()?)?;
    let histories: BTreeMap<&str, &FitHistory> =
        [("baseline", &base_hist), ("model", &model_hist)].into();
    b.write(
        "train_history.json",
        &serde_json::to_string_pretty(&histories)?,
    )?;
    b.write(
        "train_subgroup_counts.csv",
        &csv_text(
            &["level", "key", "count"],
            counts
                .iter()
                .map(|((l, k), c)| vec![l.to_string(), k.to_string(), c.to_string()]),
        )?,
    )?;
    b.note(format!(
        "{kind} lambda={lambda}; refit epochs {}",
        model_hist.full.epochs.len()
    ));
    eprintln!(
        "trained baseline and {kind} (lambda={lambda}) on {} rows",
        td.data.n()
    );
    b.finish(false)
}

fn metric_rows(base: &FairnessReport, model: &FairnessReport) -> Vec<Vec<String>> {
    let mut rows = vec![
        ("RPS", Some(base.rps), Some(model.rps)),
        ("ACC", base.acc, model.acc),
        (
            "poisson_deviance",
            base.poisson_deviance,
            model.poisson_deviance,
        ),
        ("CCdCov", Some(base.ccdcov), Some(model.ccdcov)),
        ("JdCov", Some(base.jdcov), Some(model.jdcov)),
        ("JSD", Some(base.jsd), Some(model.jsd)),
        ("UF", base.uf, model.uf),
    ];
    if let (Some(bt), Some(mt)) = (&base.tests, &model.tests) {
        rows.push(("chi2_p", Some(bt.chi2.p_value), Some(mt.chi2.p_value)));
        rows.push((
            "perm_joint_p",
            Some(bt.perm_joint.p_value),
            Some(mt.perm_joint.p_value),
        ));
        rows.push((
            "perm_mutual_p",
            Some(bt.perm_mutual.p_value),
            Some(mt.perm_mutual.p_value),
        ));
    }
    if let Some(w) = &model.wilcoxon {
        rows.push(("wilcoxon_p", None, Some(w.p_value)));
    }
    rows.into_iter()
        .filter(|(_, a, b)| a.is_some() || b.is_some())
        .map(|(m, a, b)| vec![m.to_string(), opt(a), opt(b)])
        .collect()
}

pub fn evaluate(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg;
    let mut b = ctx.bundle("evaluate", vec![ctx.seed]);
    if b.manifest()?.test_evaluated() {
        bail!(
            "the test split of {} was already evaluated; rerun prep to start a new bundle",
            ctx.out.display()
        );
    }
    b.note_external(&ctx.config_path)?;
    let transforms = FittedTransforms::from_json(&b.read(TRANSFORMS)?)?;
    let baseline = TrainedModel::from_json(&b.read(BASELINE)?)?;
    let model = TrainedModel::from_json(&b.read(MODEL)?)?;
    let table = parse_table(&b.read(TEST_CSV)?)?;
    let data = transforms.transform(&table)?;
    let eval = fairdcov::pipeline::EvalConfig {
        test_seed: ctx.seed,
        ..cfg.eval.clone()
    };
    let base_report = evaluate_model(&baseline, &data, &eval)?;
    let mut report = evaluate_model(&model, &data, &eval)?;
    report.wilcoxon = Some(wilcoxon_one_sided(&PairedScores::new(
        base_report.per_observation_rps.clone(),
        report.per_observation_rps.clone(),
    )?));
    let base_pred = baseline.forward(&data.x, data.exposure.as_deref())?;
    let model_pred = model.forward(&data.x, data.exposure.as_deref())?;
    let (full, discrete) = display_keys(&table, &data)?;
    let names: Vec<&str> = data.protected.iter().map(|p| p.name.as_str()).collect();
    let raw: Vec<Vec<&str>> = names
        .iter()
        .map(|n| table.column(n))
        .collect::<fairdcov::Result<_>>()?;
    let mut header = vec!["subgroup", "group"];
    header.extend(&names);
    header.extend(["y", "baseline", "model"]);
    let pred_rows = (0..data.n()).map(|i| {
        let mut r = vec![full[i].clone(), discrete[i].clone()];
        r.extend(raw.iter().map(|c| c[i].to_string()));
        r.extend([num(data.y[i]), num(base_pred[i]), num(model_pred[i])]);
        r
    });
    b.write(PREDICTIONS, &csv_text(&header, pred_rows)?)?;
    let mut groups: BTreeMap<&str, (usize, f64, f64)> = BTreeMap::new();
    for i in 0..data.n() {
        let g = groups.entry(&full[i]).or_default();
        g.0 += 1;
        g.1 += base_pred[i];
        g.2 += model_pred[i];
    }
    b.write(
        "subgroups.csv",
        &csv_text(
            &["subgroup", "count", "mean_baseline", "mean_model"],
            groups.iter().map(|(k, &(c, sb, sm))| {
                vec![
                    k.to_string(),
                    c.to_string(),
                    num(sb / c as f64),
                    num(sm / c as f64),
                ]
            }),
        )?,
    )?;
    b.write(
        "metrics.csv",
        &csv_text(
            &["metric", "baseline", "model"],
            metric_rows(&base_report, &report),
        )?,
    )?;
    b.write(BASELINE_REPORT, &base_report.to_json()?)?;
    b.write(REPORT, &report.to_json()?)?;
    eprintln!(
        "test RPS {:.4} -> {:.4}, JSD {:.4} -> {:.4}",
        base_report.rps, report.rps, base_report.jsd, report.jsd
    );
    b.finish(false)
}

struct PredictionRow {
    subgroup: String,
    group: String,
    attrs: Vec<String>,
    baseline: f64,
    model: f64,
}

fn read_predictions(text: &str) -> Result<(Vec<String>, Vec<PredictionRow>)> {
    let mut rdr = csv::Reader::from_reader(text.as_bytes());
    let headers: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    let n = headers.len();
    if n < 5 {
        bail!("{PREDICTIONS} has too few columns");
    }
    let attr_names = headers[2..n - 3].to_vec();
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec?;
        let f = |i: usize| -> Result<f64> {
            rec[i]
                .parse()
                .with_context(|| format!("bad number {:?} in {PREDICTIONS}", &rec[i]))
        };
        rows.push(PredictionRow {
            subgroup: rec[0].to_string(),
            group: rec[1].to_string(),
            attrs: (2..n - 3).map(|i| rec[i].to_string()).collect(),
            baseline: f(n - 2)?,
            model: f(n - 1)?,
        });
    }
    Ok((attr_names, rows))
}

pub fn report(ctx: &Ctx) -> Result<()> {
    let cfg = &ctx.cfg.report;
    let mut b = ctx.bundle("report", vec![ctx.seed]);
    b.note_external(&ctx.config_path)?;
    let model_report = FairnessReport::from_json(&b.read(REPORT)?)?;
    let base_report = FairnessReport::from_json(&b.read(BASELINE_REPORT)?)?;
    let transforms = FittedTransforms::from_json(&b.read(TRANSFORMS)?)?;
    let (attr_names, rows) = read_predictions(&b.read(PREDICTIONS)?)?;
    let mut train_counts: BTreeMap<(String, String), usize> = BTreeMap::new();
    let counts_text = b.read("train_subgroup_counts.csv")?;
    let mut rdr = csv::Reader::from_reader(counts_text.as_bytes());
    for rec in rdr.records() {
        let rec = rec?;
        train_counts.insert((rec[0].to_string(), rec[1].to_string()), rec[2].parse()?);
    }
    let shown = |level: &str, key: &str| {
        train_counts
            .get(&(level.to_string(), key.to_string()))
            .is_some_and(|&c| c >= cfg.min_display)
    };
    let mut omitted: Vec<String> = Vec::new();
    let models: [(&str, PredictionOf); 2] = [("baseline", |r| r.baseline), ("model", |r| r.model)];

    for fp in transforms
        .protected
        .iter()
        .filter(|p| p.kind == ProtectedKind::Continuous)
    {
        let col = attr_names
            .iter()
            .position(|n| n == &fp.name)
            .ok_or_else(|| anyhow!("{} missing from predictions", fp.name))?;
        let mut twin = Vec::new();
        for (label, pick) in models {
            let mut by_group: BTreeMap<&str, (Vec<f64>, Vec<f64>)> = BTreeMap::new();
            for r in &rows {
                let x: f64 = r.attrs[col]
                    .parse()
                    .with_context(|| format!("{} value {:?}", fp.name, r.attrs[col]))?;
                let g = by_group.entry(&r.group).or_default();
                g.0.push(x);
                g.1.push(pick(r));
            }
            let mut series = Vec::new();
            for (g, (x, y)) in &by_group {
                if !shown("group", g) {
                    continue;
                }
                let at = grid(x, 50);
                let fit = lowess(x, y, cfg.lowess_span, &at);
                let points: Vec<(f64, f64)> = at
                    .into_iter()
                    .zip(fit)
                    .filter(|(_, f)| f.is_finite())
                    .collect();
                twin.extend(
                    points
                        .iter()
                        .map(|&(a, f)| vec![label.to_string(), g.to_string(), num(a), num(f)]),
                );
                series.push(Series {
                    name: g.to_string(),
                    points,
                    step: false,
                });
            }
            let title = format!("Mean prediction by {} ({label})", fp.name);
            b.write(
                &format!("curves_{}_{label}.svg", fp.name),
                &line_chart(&title, &fp.name, "prediction", &series),
            )?;
        }
        b.write(
            &format!("curves_{}.csv", fp.name),
            &csv_text(
                &["model", "group", fp.name.as_str(), "smoothed_prediction"],
                twin,
            )?,
        )?;
    }

    let mut by_sub: BTreeMap<&str, Vec<&PredictionRow>> = BTreeMap::new();
    for r in &rows {
        by_sub.entry(&r.subgroup).or_default().push(r);
    }
    for k in by_sub.keys().filter(|k| !shown("subgroup", k)) {
        omitted.push(k.to_string());
    }
    let all_preds: Vec<f64> = rows.iter().flat_map(|r| [r.baseline, r.model]).collect();
    let lo = all_preds
        .iter()
        .copied()
        .fold(f64::INFINITY, f64::min)
        .min(0.0);
    let hi = all_preds
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max)
        .max(1.0);
    let (lo, hi) = if model_report.task == fairdcov::model::Task::Binary {
        (0.0, 1.0)
    } else {
        (lo, hi)
    };
    let mut ecdf_rows = Vec::new();
    let mut hist_rows = Vec::new();
    for (label, pick) in models {
        let mut ecdf_series = Vec::new();
        let mut hist_series = Vec::new();
        for (k, rs) in by_sub.iter().filter(|(k, _)| shown("subgroup", k)) {
            let v: Vec<f64> = rs.iter().map(|r| pick(r)).collect();
            let pts = ecdf_points(&v);
            ecdf_rows.extend(
                pts.iter()
                    .map(|&(x, f)| vec![label.to_string(), k.to_string(), num(x), num(f)]),
            );
            ecdf_series.push(Series {
                name: k.to_string(),
                points: pts,
                step: true,
            });
            let h = histogram(&v, lo, hi, cfg.histogram_bins);
            hist_rows.extend(
                h.iter().map(|&(l, r, d)| {
                    vec![label.to_string(), k.to_string(), num(l), num(r), num(d)]
                }),
            );
            hist_series.push(Series {
                name: k.to_string(),
                points: histogram_steps(&h),
                step: true,
            });
        }
        b.write(
            &format!("ecdf_{label}.svg"),
            &line_chart(
                &format!("Prediction ECDF by subgroup ({label})"),
                "prediction",
                "ECDF",
                &ecdf_series,
            ),
        )?;
        b.write(
            &format!("hist_{label}.svg"),
            &line_chart(
                &format!("Prediction histogram by subgroup ({label})"),
                "prediction",
                "density",
                &hist_series,
            ),
        )?;
    }
    b.write(
        "ecdf.csv",
        &csv_text(&["model", "subgroup", "prediction", "ecdf"], ecdf_rows)?,
    )?;
    b.write(
        "hist.csv",
        &csv_text(
            &["model", "subgroup", "bin_lo", "bin_hi", "density"],
            hist_rows,
        )?,
    )?;
    b.write(
        "report.md",
        &summary(&base_report, &model_report, &omitted, cfg.min_display),
    )?;
    if !omitted.is_empty() {
        b.note(format!(
            "{} subgroups below {} training rows omitted from figures",
            omitted.len(),
            cfg.min_display
        ));
    }
    eprintln!("report written to {}", ctx.out.display());
    b.finish(false)
}

fn summary(
    base: &FairnessReport,
    model: &FairnessReport,
    omitted: &[String],
    min_display: usize,
) -> String {
    let mut s = format!(
        "# Test evaluation\n\nRegulariser `{}`, lambda {}, {} test rows.\n\n| metric | baseline | model |\n|---|---|---|\n",
        model.regulariser, model.lambda, model.n
    );
    for r in metric_rows(base, model) {
        s.push_str(&format!("| {} | {} | {} |\n", r[0], r[1], r[2]));
    }
    if model.uf_degenerate {
        s.push_str("\nUF is undefined for the model: its predictions have no variance.\n");
    }
    if let Some(w) = &model.wilcoxon {
        s.push_str(&format!(
            "\nWilcoxon signed-rank (model RPS above baseline): W+ = {}, z = {:.4}, p = {:.4}, {} non-zero pairs.\n",
            w.w_plus, w.z, w.p_value, w.n_used
        ));
    }
    if let Some(t) = &model.tests {
        s.push_str(&format!(
            "\nIndependence tests used {} rows.\n",
            t.rows_used
        ));
    }
    s.push_str(
        "\n## Subgroup means\n\n| subgroup | count | baseline | model |\n|---|---|---|---|\n",
    );
    let base_means: BTreeMap<&str, f64> = base
        .subgroups
        .iter()
        .map(|g| (g.key.as_str(), g.mean_prediction))
        .collect();
    for g in &model.subgroups {
        s.push_str(&format!(
            "| {} | {} | {:.4} | {:.4} |\n",
            g.key,
            g.count,
            base_means.get(g.key.as_str()).copied().unwrap_or(f64::NAN),
            g.mean_prediction
        ));
    }
    if !omitted.is_empty() {
        s.push_str(&format!(
            "\nSubgroups with fewer than {min_display} training rows are left out of the figures: {}.\n",
            omitted.join(", ")
        ));
    }
    s
}
