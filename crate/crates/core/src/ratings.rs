//! Listener ratings: CSV ingestion, the four per-page quality checks, and
//! filtering by violation count.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use serde::Serialize;

use crate::audio::StemKind;
use crate::error::{Error, Result};

pub const REFERENCE: &str = "reference";
pub const ANCHOR: &str = "anchor";

pub const RATINGS_HEADER: [&str; 7] = [
    "participant_id",
    "batch",
    "track_id",
    "stem",
    "condition",
    "score",
    "page_time_s",
];

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RatingRecord {
    pub participant_id: String,
    pub batch: String,
    pub track_id: String,
    pub stem: StemKind,
    pub condition: String,
    pub score: u8,
    pub page_time_s: f64,
}

impl RatingRecord {
    pub fn page(&self) -> PageKey {
        PageKey {
            participant_id: self.participant_id.clone(),
            track_id: self.track_id.clone(),
            stem: self.stem,
        }
    }

    pub fn is_hidden(&self) -> bool {
        self.condition == REFERENCE || self.condition == ANCHOR
    }
}

/// One participant's rating screen for one stem of one track.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize)]
pub struct PageKey {
    pub participant_id: String,
    pub track_id: String,
    pub stem: StemKind,
}

impl std::fmt::Display for PageKey {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}/{}/{}", self.participant_id, self.track_id, self.stem)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParseMode {
    /// Abort on the first bad row.
    Strict,
    /// Skip bad rows and report them.
    Lenient,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowIssue {
    pub line: u64,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParsedRatings {
    pub records: Vec<RatingRecord>,
    pub skipped: Vec<RowIssue>,
}

pub fn parse_ratings_csv(path: impl AsRef<Path>, mode: ParseMode) -> Result<ParsedRatings> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_ratings(file, mode)
}

pub fn read_ratings<R: Read>(reader: R, mode: ParseMode) -> Result<ParsedRatings> {
    let mut rdr = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Row {
            line: 1,
            message: e.to_string(),
        })?
        .clone();
    let mut index = [0usize; 7];
    for (slot, name) in index.iter_mut().zip(RATINGS_HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Row {
            line: 1,
            message: format!("missing column {name:?}"),
        })?;
    }

    let mut out = ParsedRatings::default();
    for row in rdr.records() {
        let (line, parsed) = match row {
            Ok(rec) => {
                let line = rec.position().map_or(0, |p| p.line());
                (line, parse_row(&rec, &index))
            }
            Err(e) => {
                let line = e.position().map_or(0, |p| p.line());
                (line, Err(e.to_string()))
            }
        };
        match parsed {
            Ok(r) => out.records.push(r),
            Err(message) => match mode {
                ParseMode::Strict => return Err(Error::Row { line, message }),
                ParseMode::Lenient => out.skipped.push(RowIssue { line, message }),
            },
        }
    }
    Ok(out)
}

fn parse_row(rec: &csv::StringRecord, index: &[usize; 7]) -> std::result::Result<RatingRecord, String> {
    let field = |i: usize| -> std::result::Result<&str, String> {
        rec.get(index[i])
            .ok_or_else(|| format!("missing value for column {:?}", RATINGS_HEADER[i]))
    };
    let stem: StemKind = field(3)?.parse().map_err(|e: Error| e.to_string())?;
    let condition = field(4)?;
    if condition.is_empty() {
        return Err("empty condition".into());
    }
    let raw_score = field(5)?;
    let score: i64 = raw_score
        .parse()
        .map_err(|_| format!("score {raw_score:?} is not an integer"))?;
    if !(0..=100).contains(&score) {
        return Err(format!("score {score} outside 0-100"));
    }
    let raw_time = field(6)?;
    let page_time_s: f64 = raw_time
        .parse()
        .map_err(|_| format!("page_time_s {raw_time:?} is not a number"))?;
    if !(page_time_s >= 0.0) || !page_time_s.is_finite() {
        return Err(format!("page_time_s {page_time_s} must be a nonnegative number"));
    }
    Ok(RatingRecord {
        participant_id: field(0)?.to_owned(),
        batch: field(1)?.to_owned(),
        track_id: field(2)?.to_owned(),
        stem,
        condition: condition.to_owned(),
        score: score as u8,
        page_time_s,
    })
}

pub fn write_ratings<W: Write>(writer: W, records: &[RatingRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Structural(format!("writing ratings: {e}"));
    w.write_record(RATINGS_HEADER).map_err(csv_err)?;
    for r in records {
        w.write_record([
            r.participant_id.as_str(),
            &r.batch,
            &r.track_id,
            r.stem.as_str(),
            &r.condition,
            &r.score.to_string(),
            &r.page_time_s.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Structural(format!("writing ratings: {e}")))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct QcThresholds {
    /// Reference minus anchor must exceed this.
    pub min_ref_anchor_gap: f64,
    /// Reference must be at least this.
    pub min_reference_score: f64,
    /// Population std-dev of a participant's scores must be at least this.
    pub min_user_stddev: f64,
    pub min_page_time_s: f64,
    pub max_page_time_s: f64,
}

impl Default for QcThresholds {
    fn default() -> Self {
        Self {
            min_ref_anchor_gap: 10.0,
            min_reference_score: 90.0,
            min_user_stddev: 20.0,
            min_page_time_s: 20.0,
            max_page_time_s: 213.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub struct ViolationFlags {
    pub c1_ref_anchor_gap: bool,
    pub c2_reference_floor: bool,
    pub c3_user_stddev: bool,
    pub c4_page_time: bool,
}

impl ViolationFlags {
    pub fn count(&self) -> u8 {
        [
            self.c1_ref_anchor_gap,
            self.c2_reference_floor,
            self.c3_user_stddev,
            self.c4_page_time,
        ]
        .iter()
        .filter(|&&f| f)
        .count() as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ViolationReport {
    pub page: PageKey,
    pub flags: ViolationFlags,
    pub violation_count: u8,
}

fn population_stddev(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    (values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n).sqrt()
}

/// Evaluates the checks for every page, sorted by (participant, track, stem).
pub fn run_quality_checks(records: &[RatingRecord], thresholds: &QcThresholds) -> Result<Vec<ViolationReport>> {
    let mut by_user: BTreeMap<&str, Vec<f64>> = BTreeMap::new();
    let mut pages: BTreeMap<PageKey, Vec<&RatingRecord>> = BTreeMap::new();
    for r in records {
        by_user.entry(&r.participant_id).or_default().push(r.score as f64);
        pages.entry(r.page()).or_default().push(r);
    }
    let low_spread: BTreeMap<&str, bool> = by_user
        .iter()
        .map(|(&u, scores)| (u, population_stddev(scores) < thresholds.min_user_stddev))
        .collect();

    let mut out = Vec::with_capacity(pages.len());
    for (page, rows) in pages {
        let find = |cond: &str| -> Result<f64> {
            let mut hits = rows.iter().filter(|r| r.condition == cond);
            match (hits.next(), hits.next()) {
                (Some(r), None) => Ok(r.score as f64),
                (None, _) => Err(Error::Structural(format!("page {page} has no {cond:?} rating"))),
                (Some(_), Some(_)) => Err(Error::Structural(format!(
                    "page {page} has more than one {cond:?} rating"
                ))),
            }
        };
        let reference = find(REFERENCE)?;
        let anchor = find(ANCHOR)?;
        let time = rows[0].page_time_s;
        if rows.iter().any(|r| r.page_time_s != time) {
            return Err(Error::Structural(format!(
                "page {page} carries differing page_time_s values"
            )));
        }
        let flags = ViolationFlags {
            c1_ref_anchor_gap: reference - anchor <= thresholds.min_ref_anchor_gap,
            c2_reference_floor: reference < thresholds.min_reference_score,
            c3_user_stddev: low_spread[page.participant_id.as_str()],
            c4_page_time: time < thresholds.min_page_time_s || time > thresholds.max_page_time_s,
        };
        out.push(ViolationReport {
            violation_count: flags.count(),
            page,
            flags,
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct FilterOutcome {
    pub kept: Vec<RatingRecord>,
    pub kept_pages: usize,
    pub dropped_pages: usize,
    pub dropped_records: usize,
    /// Pages by violation count, index 0 through 4.
    pub histogram: [usize; 5],
}

impl FilterOutcome {
    pub fn total_pages(&self) -> usize {
        self.kept_pages + self.dropped_pages
    }

    pub fn dropped_fraction(&self) -> f64 {
        if self.total_pages() == 0 {
            0.0
        } else {
            self.dropped_pages as f64 / self.total_pages() as f64
        }
    }
}

/// Keeps the records of pages with at most `max_violations` failed checks.
pub fn filter_ratings(
    records: &[RatingRecord],
    reports: &[ViolationReport],
    max_violations: u8,
) -> Result<FilterOutcome> {
    let counts: BTreeMap<&PageKey, u8> = reports.iter().map(|r| (&r.page, r.violation_count)).collect();
    let mut histogram = [0usize; 5];
    let mut kept_set = BTreeSet::new();
    for (&page, &count) in &counts {
        histogram[count.min(4) as usize] += 1;
        if count <= max_violations {
            kept_set.insert(page.clone());
        }
    }
    let mut kept = Vec::new();
    let mut dropped_records = 0;
    for r in records {
        let page = r.page();
        if !counts.contains_key(&page) {
            return Err(Error::Structural(format!("page {page} has no quality report")));
        }
        if kept_set.contains(&page) {
            kept.push(r.clone());
        } else {
            dropped_records += 1;
        }
    }
    Ok(FilterOutcome {
        kept,
        kept_pages: kept_set.len(),
        dropped_pages: counts.len() - kept_set.len(),
        dropped_records,
        histogram,
    })
}

pub fn write_violations<W: Write>(writer: W, reports: &[ViolationReport]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let csv_err = |e: csv::Error| Error::Structural(format!("writing violations: {e}"));
    w.write_record([
        "participant_id",
        "track_id",
        "stem",
        "c1_ref_anchor_gap",
        "c2_reference_floor",
        "c3_user_stddev",
        "c4_page_time",
        "violation_count",
    ])
    .map_err(csv_err)?;
    for r in reports {
        let b = |v: bool| if v { "1" } else { "0" };
        w.write_record([
            r.page.participant_id.as_str(),
            &r.page.track_id,
            r.page.stem.as_str(),
            b(r.flags.c1_ref_anchor_gap),
            b(r.flags.c2_reference_floor),
            b(r.flags.c3_user_stddev),
            b(r.flags.c4_page_time),
            &r.violation_count.to_string(),
        ])
        .map_err(csv_err)?;
    }
    w.flush().map_err(|e| Error::Structural(format!("writing violations: {e}")))
}

/// JSON-ready summary of a QC run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct QcSummary {
    pub histogram: [usize; 5],
    pub dropped_fraction: f64,
    pub total_pages: usize,
    pub dropped_pages: usize,
    pub kept_records: usize,
    pub dropped_records: usize,
    pub max_violations: u8,
    pub thresholds: QcThresholds,
    pub stddev_estimator: &'static str,
    pub skipped_rows: usize,
}

impl QcSummary {
    pub fn new(outcome: &FilterOutcome, max_violations: u8, thresholds: QcThresholds, skipped_rows: usize) -> Self {
        Self {
            histogram: outcome.histogram,
            dropped_fraction: outcome.dropped_fraction(),
            total_pages: outcome.total_pages(),
            dropped_pages: outcome.dropped_pages,
            kept_records: outcome.kept.len(),
            dropped_records: outcome.dropped_records,
            max_violations,
            thresholds,
            stddev_estimator: "population",
            skipped_rows,
        }
    }
}
