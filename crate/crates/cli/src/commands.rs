use std::collections::{BTreeMap, HashMap};
use std::io::{self, Write};
use std::path::{Path, PathBuf};

use ndarray::Array2;
use serde_json::{json, Value};

use selpred_core::analysis::{
    bucket_refinement_report, bucketize, sorted_results, summarize_by, BucketSpec, ConfigKey, ConfigResult,
    GroupAxis, TrainingFrequencySpec,
};
use selpred_core::confidence::{estimate_confidences, EstimatorKind, EstimatorSpec};
use selpred_core::defaults::{BUCKET_BOUNDARIES, CER_WEIGHTS, DECISION_THRESHOLD, ECE_BINS, GAMBLER_REWARDS, MC_RUNS};
use selpred_core::losses::{self, LossKind, Regularizer};
use selpred_core::selective::{label_metrics, macro_f1, risk_coverage_curve, summarize, DegeneratePolicy};
use selpred_core::testkit::{self, gradient_suite, CalibrationMode, GradientSuiteConfig, SyntheticSpec};
use selpred_core::{ConfidenceMatrix, Dataset, LabelSet};

use crate::args::*;
use crate::error::{CliError, Result};
use crate::ingest::{ingest, write_jsonl_file, Ingested};
use crate::report::{self, num, text, Table};
use crate::svg::render_curve;

/// Resolved settings for `eval`.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub input: PathBuf,
    pub estimator: EstimatorSpec,
    pub scale: f64,
    pub out: PathBuf,
    pub formats: Vec<Format>,
    pub degenerate: DegeneratePolicy,
    pub expect_samples: Option<usize>,
}

impl RunConfig {
    pub fn from_args(args: &EvalArgs) -> Result<Self> {
        let cfg = Self {
            input: args.input.clone(),
            estimator: estimator_spec(&args.estimator),
            scale: args.scale,
            out: args.out.clone(),
            formats: args.format.clone(),
            degenerate: args.degenerate_rf.into(),
            expect_samples: args.expect_samples,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.input.is_file() {
            return Err(CliError::Usage(format!("input {} does not exist", self.input.display())));
        }
        if !(self.scale.is_finite() && self.scale > 0.0) {
            return Err(CliError::Usage(format!("--scale must be positive, got {}", self.scale)));
        }
        if self.formats.is_empty() {
            return Err(CliError::Usage("--format needs at least one of csv, jsonl, svg".into()));
        }
        Ok(())
    }

    fn wants(&self, f: Format) -> bool {
        self.formats.contains(&f)
    }
}

fn estimator_spec(args: &EstimatorArgs) -> EstimatorSpec {
    EstimatorSpec { kind: args.estimator.into(), bald_convention: args.bald_convention.into() }
}

/// JSON view of the built-in defaults.
pub fn defaults_json() -> Value {
    json!({
        "mc_runs": MC_RUNS,
        "ece_bins": ECE_BINS,
        "cer_weights": CER_WEIGHTS,
        "gambler_rewards": GAMBLER_REWARDS,
        "bucket_boundaries": BUCKET_BOUNDARIES,
        "decision_threshold": DECISION_THRESHOLD,
        "estimators": EstimatorKind::ALL.iter().map(|k| k.name()).collect::<Vec<_>>(),
        "bald_convention": "standard",
        "degenerate_rf": "exclude",
    })
}

pub fn cmd_config(out: &mut dyn Write) -> Result<()> {
    writeln!(out, "{}", serde_json::to_string_pretty(&defaults_json())?).map_err(CliError::io("<stdout>"))
}

pub fn cmd_validate(args: &ValidateArgs, out: &mut dyn Write) -> Result<()> {
    let ing = ingest(&args.input)?;
    let d = &ing.dataset;
    writeln!(
        out,
        "{}: valid ({} records, {} labels, N = {})",
        args.input.display(),
        d.len(),
        d.n_labels(),
        d.n_samples()
    )
    .map_err(CliError::io("<stdout>"))
}

fn decision_source(d: &Dataset) -> &'static str {
    let with_det = d.records().iter().filter(|r| r.det_probs.is_some()).count();
    match with_det {
        0 => "sample_mean",
        n if n == d.len() => "det",
        _ => "mixed",
    }
}

fn check_estimator(d: &Dataset, spec: EstimatorSpec) -> Result<()> {
    if spec.kind.needs_samples() && d.n_samples() < 2 {
        return Err(CliError::Check(format!(
            "estimator {} requires N ≥ 2 MC samples; input has N = {}",
            spec.kind,
            d.n_samples()
        )));
    }
    Ok(())
}

/// Per-label and macro metrics as a table.
pub fn metrics_table(d: &Dataset, conf: &ConfidenceMatrix, scale: f64, policy: DegeneratePolicy) -> Result<Table> {
    let per_label = (0..d.n_labels())
        .map(|l| label_metrics(&d.binary_view(l)?, &conf.column(l)))
        .collect::<selpred_core::Result<Vec<_>>>()?;
    let m = summarize(per_label, policy);
    let f1 = macro_f1(d);

    let mut table = Table::new(vec![
        "label", "aurcc", "rpp", "rf", "rf_degenerate", "error_rate", "n_correct", "precision", "recall", "f1",
    ]);
    for (lm, lf) in m.per_label.iter().zip(&f1.per_label) {
        table.push(vec![
            text(d.label_set().get(lm.label_index).unwrap_or_default()),
            num(lm.aurcc * scale),
            num(lm.rpp * scale),
            num(lm.rf.value()),
            Value::Bool(lm.rf.is_degenerate()),
            num(lm.error_rate),
            Value::from(lm.n_correct),
            num(lf.precision),
            num(lf.recall),
            num(lf.f1),
        ]);
    }
    let n = m.per_label.len() as f64;
    table.push(vec![
        text("macro"),
        num(m.macro_aurcc * scale),
        num(m.macro_rpp * scale),
        m.macro_rf.map_or(Value::Null, num),
        Value::from(m.degenerate_labels.len()),
        num(m.per_label.iter().map(|l| l.error_rate).sum::<f64>() / n),
        Value::Null,
        num(f1.per_label.iter().map(|l| l.precision).sum::<f64>() / n),
        num(f1.per_label.iter().map(|l| l.recall).sum::<f64>() / n),
        num(f1.macro_f1),
    ]);
    Ok(table)
}

fn curve_table(curve: &selpred_core::RiskCoverageCurve) -> Table {
    let mut t = Table::new(vec!["coverage", "risk", "confidence"]);
    for p in &curve.points {
        t.push(vec![num(p.coverage), num(p.risk), num(p.confidence)]);
    }
    t
}

pub fn cmd_eval(args: &EvalArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = RunConfig::from_args(args)?;
    let ing = ingest(&cfg.input)?;
    let d = &ing.dataset;
    if let Some(n) = cfg.expect_samples.filter(|&n| n != d.n_samples()) {
        return Err(CliError::Check(format!("expected N = {n} MC samples, input has N = {}", d.n_samples())));
    }
    check_estimator(d, cfg.estimator)?;
    let conf = estimate_confidences(d, cfg.estimator)?;
    let table = metrics_table(d, &conf, cfg.scale, cfg.degenerate)?;
    if cfg.wants(Format::Csv) {
        table.write_csv(report::create(&cfg.out.join("metrics.csv"))?)?;
    }
    if cfg.wants(Format::Jsonl) {
        table.write_jsonl(report::create(&cfg.out.join("metrics.jsonl"))?)?;
    }

    let curves_dir = cfg.out.join("curves");
    for l in 0..d.n_labels() {
        let view = d.binary_view(l)?;
        let curve = risk_coverage_curve(&view, &conf.column(l))?;
        let name = d.label_set().get(l).unwrap_or_default();
        let stem = format!("curve_{}", report::file_stem(name));
        curve_table(&curve).write_csv(report::create(&curves_dir.join(format!("{stem}.csv")))?)?;
        if cfg.wants(Format::Svg) {
            let area = selpred_core::selective::aurcc(&curve);
            let title = format!("label {name} · {}", cfg.estimator.kind);
            report::write_text(&curves_dir.join(format!("{stem}.svg")), &render_curve(&curve, &title, area))?;
        }
    }

    let macro_row = table.rows.last().expect("macro row");
    let degenerate: Vec<&str> = table
        .rows
        .iter()
        .filter(|r| r[4] == Value::Bool(true))
        .map(|r| r[0].as_str().unwrap_or_default())
        .collect();
    let run = json!({
        "input": cfg.input.display().to_string(),
        "estimator": cfg.estimator.kind.name(),
        "bald_convention": match cfg.estimator.bald_convention {
            selpred_core::BaldConvention::Standard => "standard",
            selpred_core::BaldConvention::PaperLiteral => "paper-literal",
        },
        "scale": cfg.scale,
        "scaled_columns": ["aurcc", "rpp"],
        "decision_source": decision_source(d),
        "decision_threshold": DECISION_THRESHOLD,
        "degenerate_rf_policy": match cfg.degenerate {
            DegeneratePolicy::Exclude => "exclude",
            DegeneratePolicy::IncludeAsZero => "zero",
        },
        "degenerate_labels": degenerate,
        "n_records": d.len(),
        "n_labels": d.n_labels(),
        "n_samples": d.n_samples(),
        "meta": ing.meta,
    });
    report::write_text(&cfg.out.join("run.json"), &(serde_json::to_string_pretty(&run)? + "\n"))?;

    let cell = |v: &Value| match v {
        Value::Null => "n/a".to_string(),
        other => other.to_string(),
    };
    writeln!(
        out,
        "{} [{}]: macro AURCC {} RPP {} Rf {} F1 {} -> {}",
        cfg.input.display(),
        cfg.estimator.kind,
        cell(&macro_row[1]),
        cell(&macro_row[2]),
        cell(&macro_row[3]),
        cell(&macro_row[9]),
        cfg.out.display()
    )
    .map_err(CliError::io("<stdout>"))
}

pub fn cmd_curve(args: &CurveArgs, out: &mut dyn Write) -> Result<()> {
    let ing = ingest(&args.input)?;
    let d = &ing.dataset;
    let spec = estimator_spec(&args.estimator);
    check_estimator(d, spec)?;
    let labels: Vec<usize> = match &args.label {
        Some(name) => vec![d
            .label_set()
            .index_of(name)
            .ok_or_else(|| CliError::Usage(format!("unknown label {name:?}")))?],
        None => (0..d.n_labels()).collect(),
    };
    let conf = estimate_confidences(d, spec)?;
    for l in labels {
        let curve = risk_coverage_curve(&d.binary_view(l)?, &conf.column(l))?;
        let name = d.label_set().get(l).unwrap_or_default();
        let table = curve_table(&curve);
        match &args.out {
            None => {
                writeln!(out, "# label {name}").map_err(CliError::io("<stdout>"))?;
                table.write_csv(&mut *out)?;
            }
            Some(dir) => {
                let stem = format!("curve_{}", report::file_stem(name));
                if args.format.contains(&Format::Csv) {
                    table.write_csv(report::create(&dir.join(format!("{stem}.csv")))?)?;
                }
                if args.format.contains(&Format::Jsonl) {
                    table.write_jsonl(report::create(&dir.join(format!("{stem}.jsonl")))?)?;
                }
                if args.format.contains(&Format::Svg) {
                    let area = selpred_core::selective::aurcc(&curve);
                    let svg = render_curve(&curve, &format!("label {name} · {}", spec.kind), area);
                    report::write_text(&dir.join(format!("{stem}.svg")), &svg)?;
                }
            }
        }
    }
    Ok(())
}

struct ValueCheck {
    name: String,
    got: f64,
    expected: f64,
}

fn value_checks() -> Result<Vec<ValueCheck>> {
    let logit = |p: f64| (p / (1.0 - p)).ln();
    let mut checks = Vec::new();

    let perfect = losses::LossBatch::new(Array2::from_shape_vec((2, 1), vec![40.0, -40.0]).expect("shape"), Array2::from_shape_vec((2, 1), vec![1, 0]).expect("shape"))?;
    checks.push(ValueCheck { name: "ece perfect".into(), got: losses::ece_loss(&perfect)?.value, expected: 0.0 });

    let z = logit(0.8);
    let mixed = losses::LossBatch::new(
        Array2::from_elem((5, 1), z),
        Array2::from_shape_vec((5, 1), vec![1, 1, 1, 0, 0]).expect("shape"),
    )?;
    checks.push(ValueCheck {
        name: "ece single bin".into(),
        got: losses::ece_loss(&mixed.clone().with_bins(1))?.value,
        expected: 0.2,
    });
    checks.push(ValueCheck {
        name: format!("ece empty bins (M = {ECE_BINS})"),
        got: losses::ece_loss(&mixed.with_bins(ECE_BINS))?.value,
        expected: 0.2,
    });

    // One confident error (0.9) above one correct prediction (0.6).
    let batch = losses::LossBatch::new(
        Array2::from_shape_vec((2, 1), vec![logit(0.9), logit(0.6)]).expect("shape"),
        Array2::from_shape_vec((2, 1), vec![0, 1]).expect("shape"),
    )?;
    let cer = losses::cer_loss(&batch)?.value;
    checks.push(ValueCheck { name: "cer reversed pair".into(), got: cer, expected: 0.09 });
    let task = losses::bce_task_loss(&batch)?.value;
    for lambda in CER_WEIGHTS {
        let combined = losses::combined_loss(&batch.clone().with_lambda(lambda), Regularizer::Cer)?.value;
        checks.push(ValueCheck { name: format!("task + {lambda}·cer"), got: combined, expected: task + lambda * cer });
    }
    Ok(checks)
}

pub fn cmd_losscheck(args: &LosscheckArgs, out: &mut dyn Write) -> Result<()> {
    let cfg = GradientSuiteConfig {
        batches: args.batches,
        seed: args.seed,
        step: args.step,
        tolerance: args.tolerance,
        inject_fault: args.inject_fault,
        ..Default::default()
    };
    let w = |out: &mut dyn Write, s: String| writeln!(out, "{s}").map_err(CliError::io("<stdout>"));
    let mut failed = Vec::new();
    for kind in [LossKind::Bce, LossKind::Cer, LossKind::Ece, LossKind::Gambler] {
        let r = gradient_suite(kind, &cfg)?;
        w(
            out,
            format!(
                "{:<8} {} max rel err {:.3e} (tol {:.0e}) over {} coords in {} batches; worst batch {} index {:?}: analytic {:.12e} numeric {:.12e}",
                kind.name(),
                if r.passed { "PASS" } else { "FAIL" },
                r.max_rel_error,
                r.tolerance,
                r.coordinates,
                r.batches,
                r.worst.batch,
                r.worst.index,
                r.worst.analytic,
                r.worst.numeric
            ),
        )?;
        if !r.passed {
            failed.push(kind.name().to_string());
        }
    }
    for c in value_checks()? {
        let ok = (c.got - c.expected).abs() <= 1e-12;
        w(out, format!("{:<8} {} {}: {} (expected {})", "value", if ok { "PASS" } else { "FAIL" }, c.name, c.got, c.expected))?;
        if !ok {
            failed.push(c.name);
        }
    }
    if failed.is_empty() {
        Ok(())
    } else {
        Err(CliError::Check(format!("loss check failed: {}", failed.join(", "))))
    }
}

fn read_frequencies(path: &Path, labels: &LabelSet) -> Result<TrainingFrequencySpec> {
    let mut rdr = csv::Reader::from_path(path).map_err(|e| CliError::Usage(format!("{}: {e}", path.display())))?;
    let mut found: HashMap<String, f64> = HashMap::new();
    for (i, row) in rdr.records().enumerate() {
        let row = row?;
        let (label, frac) = match (row.get(0), row.get(1)) {
            (Some(l), Some(f)) => (l.trim().to_string(), f.trim()),
            _ => return Err(CliError::Parse { path: path.into(), line: i + 2, message: "expected label,fraction".into() }),
        };
        let frac: f64 = frac.parse().map_err(|_| CliError::Parse {
            path: path.into(),
            line: i + 2,
            message: format!("bad fraction {frac:?}"),
        })?;
        found.insert(label, frac);
    }
    let fractions = labels
        .iter()
        .map(|l| found.get(l).copied().ok_or_else(|| CliError::Check(format!("missing frequency for label {l:?}"))))
        .collect::<Result<Vec<_>>>()?;
    Ok(TrainingFrequencySpec::new(fractions)?)
}

fn model_tag(ing: &Ingested, path: &Path) -> String {
    ing.meta.get("model").cloned().unwrap_or_else(|| {
        path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_else(|| "model".into())
    })
}

pub fn cmd_bucket(args: &BucketArgs, out: &mut dyn Write, err: &mut dyn Write) -> Result<()> {
    let spec = match &args.boundaries {
        Some(b) => BucketSpec::new(b.clone())?,
        None => BucketSpec::default(),
    };
    let logs = args.input.iter().map(|p| ingest(p).map(|i| (p, i))).collect::<Result<Vec<_>>>()?;
    let labels = logs[0].1.dataset.label_set().clone();
    if let Some((p, _)) = logs.iter().find(|(_, i)| i.dataset.label_set() != &labels) {
        return Err(CliError::Check(format!("{} uses a different label set", p.display())));
    }
    let freq = read_frequencies(&args.buckets, &labels)?;
    let assignment = bucketize(&freq, &spec);
    let note = |err: &mut dyn Write, s: &str| writeln!(err, "notice: {s}").map_err(CliError::io("<stderr>"));
    for w in &assignment.warnings {
        note(err, w)?;
    }

    let explicit: Vec<EstimatorKind> = args.estimator.iter().map(|&e| e.into()).collect();
    let mut results = Vec::new();
    for (path, ing) in &logs {
        let d = &ing.dataset;
        let kinds = if explicit.is_empty() {
            EstimatorKind::ALL.iter().copied().filter(|k| !k.needs_samples() || d.n_samples() >= 2).collect()
        } else {
            explicit.clone()
        };
        let f1 = macro_f1(d).macro_f1;
        for kind in kinds {
            let spec = EstimatorSpec { kind, bald_convention: args.bald_convention.into() };
            check_estimator(d, spec)?;
            let conf = estimate_confidences(d, spec)?;
            let metrics = selpred_core::selective::macro_metrics(d, &conf)?;
            let key = ConfigKey::new(kind.name(), ing.meta_or("loss", "unknown"), model_tag(ing, path));
            results.push(ConfigResult { key, metrics, macro_f1: f1 });
        }
    }
    let results = sorted_results(results)?;
    let bucket_report = bucket_refinement_report(&results, &assignment, &spec)?;
    for n in &bucket_report.notices {
        note(err, n)?;
    }

    let mut membership = Table::new(vec!["label", "fraction", "bucket", "bucket_name"]);
    for (l, name) in labels.iter().enumerate() {
        let k = assignment.bucket_of(l).expect("partition");
        membership.push(vec![text(name), num(freq.fractions[l]), Value::from(k + 1), text(spec.bucket_name(k))]);
    }
    let mut table = Table::new(vec!["bucket", "bucket_name", "n_labels", "axis", "group", "mean_rf", "cells"]);
    for r in &bucket_report.rows {
        table.push(vec![
            Value::from(r.bucket),
            text(&r.bucket_name),
            Value::from(r.n_labels),
            text(r.axis.name()),
            text(&r.group),
            num(r.mean_rf),
            Value::from(r.cells),
        ]);
    }
    let mut summary = Table::new(vec!["axis", "group", "configs", "metric", "mean", "std"]);
    for axis in GroupAxis::ALL {
        for r in summarize_by(&results, axis) {
            summary.push(vec![
                text(axis.name()),
                text(r.group),
                Value::from(r.configs),
                text(r.metric),
                num(r.mean),
                num(r.std),
            ]);
        }
    }

    match &args.out {
        None => {
            table.write_csv(&mut *out)?;
        }
        Some(dir) => {
            membership.write_csv(report::create(&dir.join("buckets.csv"))?)?;
            table.write_csv(report::create(&dir.join("bucket_report.csv"))?)?;
            table.write_jsonl(report::create(&dir.join("bucket_report.jsonl"))?)?;
            summary.write_csv(report::create(&dir.join("summary.csv"))?)?;
            summary.write_jsonl(report::create(&dir.join("summary.jsonl"))?)?;
            writeln!(
                out,
                "bucket sizes {:?}; {} configurations; reports in {}",
                assignment.sizes(),
                results.len(),
                dir.display()
            )
            .map_err(CliError::io("<stdout>"))?;
        }
    }
    Ok(())
}

pub fn cmd_simulate(args: &SimulateArgs, out: &mut dyn Write) -> Result<()> {
    let mode = CalibrationMode::from_temperature(args.temperature)?;
    let mut spec = SyntheticSpec::new(args.records, args.labels, args.samples, args.seed)
        .with_calibration(mode)
        .with_noise(args.noise);
    if let Some(rates) = &args.base_rates {
        spec = spec.with_base_rates(rates.clone());
    }
    let mut d = testkit::generate(&spec)?;
    if args.labels == LabelSet::ecthr().len() {
        d = Dataset::from_parts(LabelSet::ecthr(), d.records().to_vec());
    }
    let mut meta = BTreeMap::new();
    meta.insert("generator".to_string(), "selpred simulate".to_string());
    meta.insert("seed".to_string(), args.seed.to_string());
    meta.insert("temperature".to_string(), args.temperature.to_string());
    if let Some(t) = &args.loss_tag {
        meta.insert("loss".to_string(), t.clone());
    }
    if let Some(t) = &args.model_tag {
        meta.insert("model".to_string(), t.clone());
    }
    write_jsonl_file(&args.out, &d, &meta)?;
    writeln!(
        out,
        "wrote {} records × {} labels × N = {} to {}",
        d.len(),
        d.n_labels(),
        d.n_samples(),
        args.out.display()
    )
    .map_err(CliError::io("<stdout>"))
}

pub fn run(cli: &Cli) -> Result<()> {
    let stdout = io::stdout();
    let mut out = stdout.lock();
    match &cli.command {
        Command::Validate(a) => cmd_validate(a, &mut out),
        Command::Eval(a) => cmd_eval(a, &mut out),
        Command::Curve(a) => cmd_curve(a, &mut out),
        Command::Losscheck(a) => cmd_losscheck(a, &mut out),
        Command::Bucket(a) => cmd_bucket(a, &mut out, &mut io::stderr()),
        Command::Simulate(a) => cmd_simulate(a, &mut out),
        Command::Config => cmd_config(&mut out),
    }
}
