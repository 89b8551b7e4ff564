use std::fs;
use std::path::Path;

use anyhow::{Context, Result};
use serde_json::{json, Map, Value};

use stemeval::correlation::{
    aggregate_tau, per_unit_tau, read_scores_csv, weight_sweep, write_sweep, write_tau_table, MetricScoreRecord,
    SkippedPage, TauAggregate, TauOptions,
};
use stemeval::energy;
use stemeval::fad::{COVARIANCE_DIVISOR, COVARIANCE_RIDGE};
use stemeval::ratings::{
    filter_ratings, parse_ratings_csv, run_quality_checks, write_ratings, write_violations, FilterOutcome, ParseMode,
    ParsedRatings, QcSummary, QcThresholds, ViolationReport,
};

use crate::{cli_error, eval, layout, write_output, AnalyzeArgs, RatingsQcArgs, SweepArgs};

struct QcRun {
    parsed: ParsedRatings,
    reports: Vec<ViolationReport>,
    thresholds: QcThresholds,
}

impl QcRun {
    fn new(path: &Path, mode: ParseMode, thresholds: QcThresholds) -> Result<Self> {
        let parsed = parse_ratings_csv(path, mode).with_context(|| format!("ratings {}", path.display()))?;
        let reports = run_quality_checks(&parsed.records, &thresholds)?;
        Ok(Self { parsed, reports, thresholds })
    }

    fn filter(&self, max_violations: u8) -> Result<FilterOutcome> {
        Ok(filter_ratings(&self.parsed.records, &self.reports, max_violations)?)
    }

    fn summary(&self, outcome: &FilterOutcome, max_violations: u8) -> QcSummary {
        QcSummary::new(outcome, max_violations, self.thresholds, self.parsed.skipped.len())
    }

    fn write(&self, dir: &Path, outcome: &FilterOutcome, max_violations: u8) -> Result<Value> {
        let mut csv = Vec::new();
        write_violations(&mut csv, &self.reports)?;
        write_file(&dir.join("qc_violations.csv"), &csv)?;
        let mut summary = serde_json::to_value(self.summary(outcome, max_violations))?;
        summary["skipped_rows"] = json!(self
            .parsed
            .skipped
            .iter()
            .map(|s| json!({"line": s.line, "message": s.message}))
            .collect::<Vec<_>>());
        write_file(&dir.join("qc_summary.json"), &pretty(&summary)?)?;
        Ok(summary)
    }
}

fn pretty(v: &Value) -> Result<Vec<u8>> {
    let mut s = serde_json::to_string_pretty(v)?;
    s.push('\n');
    Ok(s.into_bytes())
}

fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).with_context(|| format!("writing {}", path.display()))
}

fn ensure_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

/// Table order: BSSEval, scale-invariant family, reweighted, FAD, others.
fn metric_rank(name: &str) -> (usize, String) {
    let fixed = [
        energy::SDR,
        energy::ISR,
        energy::SAR,
        energy::SIR,
        energy::SD_SDR,
        energy::SI_SDR,
        energy::SI_SAR,
        energy::SI_SIR,
    ];
    if let Some(i) = fixed.iter().position(|m| *m == name) {
        return (i, String::new());
    }
    if let Some(w) = energy::parse_reweighted_name(name) {
        return (20, format!("{:020.12}", w));
    }
    if name == "FAD" || name.starts_with("FAD-") {
        return (30, name.to_owned());
    }
    (40, name.to_owned())
}

fn tau_meta(opts: &TauOptions) -> Value {
    json!({
        "tau_variant": opts.mode.as_str(),
        "include_hidden_conditions": opts.include_hidden,
        "stem_mean_weighting": "page",
        "average": "mean of per-stem means",
        "fad_covariance_ridge": COVARIANCE_RIDGE,
        "fad_covariance_divisor": COVARIANCE_DIVISOR,
    })
}

struct Correlated {
    columns: Vec<(String, TauAggregate)>,
    json: Map<String, Value>,
    skipped: Vec<SkippedPage>,
}

fn correlate(
    kept: &[stemeval::ratings::RatingRecord],
    scores: &[MetricScoreRecord],
    metrics: &[String],
    opts: &TauOptions,
) -> Result<Correlated> {
    let mut out = Correlated { columns: Vec::new(), json: Map::new(), skipped: Vec::new() };
    for metric in metrics {
        let result = per_unit_tau(kept, scores, metric, opts).with_context(|| format!("metric {metric}"))?;
        out.skipped.extend(result.skipped);
        let entry = if result.records.is_empty() {
            json!({ "average": Value::Null, "pages": 0 })
        } else {
            let agg = aggregate_tau(&result.records)?;
            let mut m = Map::new();
            for (stem, v) in &agg.per_stem {
                m.insert(stem.as_str().to_owned(), json!(v));
            }
            m.insert("average".into(), json!(agg.average));
            m.insert("pages".into(), json!(result.records.len()));
            out.columns.push((metric.clone(), agg));
            m.into()
        };
        out.json.insert(metric.clone(), entry);
    }
    Ok(out)
}

fn table_bytes(columns: &[(String, TauAggregate)]) -> Result<Vec<u8>> {
    let mut buf = Vec::new();
    write_tau_table(&mut buf, columns)?;
    Ok(buf)
}

fn skipped_json(skipped: &[SkippedPage]) -> Value {
    json!(skipped
        .iter()
        .map(|s| json!({
            "participant_id": s.page.participant_id,
            "track_id": s.page.track_id,
            "stem": s.page.stem.as_str(),
            "metric": s.metric,
            "reason": s.reason,
        }))
        .collect::<Vec<_>>())
}

pub fn analyze(a: &AnalyzeArgs, mode: ParseMode) -> Result<()> {
    let qc = QcRun::new(&a.ratings, mode, a.qc.thresholds()?)?;
    let scores = read_scores_csv(&a.scores).with_context(|| format!("scores {}", a.scores.display()))?;
    let mut metrics: Vec<String> = if a.metrics.is_empty() {
        let mut all: Vec<String> = scores.iter().map(|s| s.metric.clone()).collect();
        all.sort();
        all.dedup();
        all
    } else {
        let mut m: Vec<String> = Vec::new();
        for name in &a.metrics {
            if !scores.iter().any(|s| &s.metric == name) {
                anyhow::bail!(cli_error(format!("metric {name:?} does not occur in {}", a.scores.display())));
            }
            if !m.contains(name) {
                m.push(name.clone());
            }
        }
        m
    };
    if metrics.is_empty() {
        anyhow::bail!(cli_error(format!("{} holds no scores", a.scores.display())));
    }
    if a.metrics.is_empty() {
        metrics.sort_by_key(|m| metric_rank(m));
    }
    let opts = a.tau.options();
    ensure_dir(&a.out_dir)?;

    let outcome = qc.filter(a.qc.max_violations)?;
    let qc_summary = qc.write(&a.out_dir, &outcome, a.qc.max_violations)?;
    let main = correlate(&outcome.kept, &scores, &metrics, &opts)?;
    write_file(&a.out_dir.join("tables.csv"), &table_bytes(&main.columns)?)?;

    let mut report = json!({
        "metadata": tau_meta(&opts),
        "metrics": main.json,
        "skipped_pages": skipped_json(&main.skipped),
        "qc": qc_summary,
    });
    if a.strict_qc {
        let strict_outcome = qc.filter(0)?;
        let strict = correlate(&strict_outcome.kept, &scores, &metrics, &opts)?;
        write_file(&a.out_dir.join("tables_strict.csv"), &table_bytes(&strict.columns)?)?;
        report["strict_qc"] = json!({
            "max_violations": 0,
            "metrics": strict.json,
            "skipped_pages": skipped_json(&strict.skipped),
            "qc": serde_json::to_value(qc.summary(&strict_outcome, 0))?,
        });
    }
    write_file(&a.out_dir.join("report.json"), &pretty(&report)?)
}

pub fn sweep(a: &SweepArgs, mode: ParseMode) -> Result<()> {
    let qc = QcRun::new(&a.ratings, mode, a.qc.thresholds()?)?;
    let kept = qc.filter(a.qc.max_violations)?.kept;
    let layout = layout::load(a.input.root.as_deref(), a.input.manifest.as_deref())?;
    let energies = eval::si_energies(&layout)?;
    let curve = weight_sweep(&energies, &kept, a.grid_step, &a.tau.options())?;
    let mut buf = Vec::new();
    write_sweep(&mut buf, &curve)?;
    write_output(a.output.as_ref(), &buf)
}

pub fn ratings_qc(a: &RatingsQcArgs, mode: ParseMode) -> Result<()> {
    let qc = QcRun::new(&a.ratings, mode, a.qc.thresholds()?)?;
    ensure_dir(&a.out_dir)?;
    let outcome = qc.filter(a.qc.max_violations)?;
    qc.write(&a.out_dir, &outcome, a.qc.max_violations)?;
    let mut kept = Vec::new();
    write_ratings(&mut kept, &outcome.kept)?;
    write_file(&a.out_dir.join("kept_ratings.csv"), &kept)
}
