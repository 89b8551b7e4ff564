//! Kendall's τ between listener scores and objective metrics, aggregated per
//! stem, plus the reweighted SI-SDR weight sweep.

use std::cmp::Ordering;
use std::collections::{BTreeMap, BTreeSet};
use std::fs::File;
use std::io::{Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::audio::StemKind;
use crate::energy::{MetricValue, SiEnergies};
use crate::error::{Error, Result};
use crate::ratings::{PageKey, RatingRecord};

pub const SCORES_HEADER: [&str; 5] = ["track_id", "stem", "condition", "metric", "value"];

pub const DEFAULT_GRID_STEP: f64 = 0.05;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize)]
pub enum TauMode {
    /// Tie-corrected.
    #[default]
    #[serde(rename = "tau-b")]
    B,
    /// Plain (concordant − discordant) / pairs.
    #[serde(rename = "tau-a")]
    A,
}

impl TauMode {
    pub fn as_str(self) -> &'static str {
        match self {
            TauMode::B => "tau-b",
            TauMode::A => "tau-a",
        }
    }
}

// Total order on non-NaN values with 0.0 == -0.0 and +inf above all finite.
fn cmp_value(a: f64, b: f64) -> Ordering {
    if a == b {
        Ordering::Equal
    } else {
        a.total_cmp(&b)
    }
}

fn tied_pairs(sorted: &[f64]) -> i64 {
    let mut total = 0i64;
    let mut run = 1i64;
    for w in sorted.windows(2) {
        if cmp_value(w[0], w[1]) == Ordering::Equal {
            run += 1;
        } else {
            total += run * (run - 1) / 2;
            run = 1;
        }
    }
    total + run * (run - 1) / 2
}

// Stable merge sort counting inversions.
fn sort_counting_swaps(v: &mut Vec<f64>) -> i64 {
    let n = v.len();
    let mut buf = v.clone();
    let mut swaps = 0i64;
    let mut width = 1;
    while width < n {
        let mut lo = 0;
        while lo < n {
            let mid = (lo + width).min(n);
            let hi = (lo + 2 * width).min(n);
            let (mut i, mut j, mut k) = (lo, mid, lo);
            while i < mid && j < hi {
                if cmp_value(v[j], v[i]) == Ordering::Less {
                    buf[k] = v[j];
                    swaps += (mid - i) as i64;
                    j += 1;
                } else {
                    buf[k] = v[i];
                    i += 1;
                }
                k += 1;
            }
            buf[k..k + mid - i].copy_from_slice(&v[i..mid]);
            k += mid - i;
            buf[k..k + hi - j].copy_from_slice(&v[j..hi]);
            lo = hi;
        }
        std::mem::swap(v, &mut buf);
        width *= 2;
    }
    swaps
}

/// Pair counts behind τ. `concordant_minus_discordant` is exact.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PairCounts {
    pub pairs: i64,
    pub tied_x: i64,
    pub tied_y: i64,
    pub concordant_minus_discordant: i64,
}

impl PairCounts {
    pub fn tau(&self, mode: TauMode) -> Result<f64> {
        let nx = self.pairs - self.tied_x;
        let ny = self.pairs - self.tied_y;
        if nx == 0 || ny == 0 {
            return Err(Error::UndefinedCorrelation(
                "one of the rankings is entirely tied".into(),
            ));
        }
        let num = self.concordant_minus_discordant as f64;
        Ok(match mode {
            TauMode::B => num / ((nx as f64) * (ny as f64)).sqrt(),
            TauMode::A => num / self.pairs as f64,
        })
    }
}

/// Counts pairs in O(n log n) (Knight's method).
pub fn pair_counts(x: &[f64], y: &[f64]) -> Result<PairCounts> {
    if x.len() != y.len() {
        return Err(Error::Parameter(format!(
            "rankings differ in length: {} vs {}",
            x.len(),
            y.len()
        )));
    }
    if x.len() < 2 {
        return Err(Error::Parameter("need at least two paired values".into()));
    }
    if x.iter().chain(y).any(|v| v.is_nan()) {
        return Err(Error::Parameter("NaN in ranking".into()));
    }
    let n = x.len() as i64;
    let mut order: Vec<usize> = (0..x.len()).collect();
    order.sort_by(|&a, &b| cmp_value(x[a], x[b]).then(cmp_value(y[a], y[b])));
    let xs: Vec<f64> = order.iter().map(|&i| x[i]).collect();
    let mut ys: Vec<f64> = order.iter().map(|&i| y[i]).collect();

    let tied_x = tied_pairs(&xs);
    let mut tied_xy = 0i64;
    let mut run = 1i64;
    for k in 1..xs.len() {
        if cmp_value(xs[k - 1], xs[k]) == Ordering::Equal && cmp_value(ys[k - 1], ys[k]) == Ordering::Equal {
            run += 1;
        } else {
            tied_xy += run * (run - 1) / 2;
            run = 1;
        }
    }
    tied_xy += run * (run - 1) / 2;

    let swaps = sort_counting_swaps(&mut ys);
    let tied_y = tied_pairs(&ys);
    let pairs = n * (n - 1) / 2;
    Ok(PairCounts {
        pairs,
        tied_x,
        tied_y,
        concordant_minus_discordant: pairs - tied_x - tied_y + tied_xy - 2 * swaps,
    })
}

/// Kendall's τ. `+inf` stands for `PerfectFit`: above every finite value and
/// tied with itself.
pub fn kendall_tau(x: &[f64], y: &[f64], mode: TauMode) -> Result<f64> {
    pair_counts(x, y)?.tau(mode)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MetricScoreRecord {
    pub track_id: String,
    pub stem: StemKind,
    pub condition: String,
    pub metric: String,
    #[serde(serialize_with = "serialize_metric")]
    pub value: MetricValue,
}

fn serialize_metric<S: serde::Serializer>(v: &MetricValue, s: S) -> std::result::Result<S::Ok, S::Error> {
    s.collect_str(v)
}

impl MetricScoreRecord {
    pub fn key(&self) -> (&str, StemKind, &str, &str) {
        (&self.track_id, self.stem, &self.condition, &self.metric)
    }
}

/// Sorts by (track, stem, condition, metric).
pub fn sort_scores(records: &mut [MetricScoreRecord]) {
    records.sort_by(|a, b| a.key().cmp(&b.key()));
}

pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<Vec<MetricScoreRecord>> {
    let path = path.as_ref();
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    read_scores(file)
}

pub fn read_scores<R: Read>(reader: R) -> Result<Vec<MetricScoreRecord>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
    let headers = rdr
        .headers()
        .map_err(|e| Error::Row { line: 1, message: e.to_string() })?
        .clone();
    let mut index = [0usize; 5];
    for (slot, name) in index.iter_mut().zip(SCORES_HEADER) {
        *slot = headers.iter().position(|h| h == name).ok_or_else(|| Error::Row {
            line: 1,
            message: format!("missing column {name:?}"),
        })?;
    }
    let mut out = Vec::new();
    let mut seen = BTreeSet::new();
    for row in rdr.records() {
        let row = row.map_err(|e| Error::Row {
            line: e.position().map_or(0, |p| p.line()),
            message: e.to_string(),
        })?;
        let line = row.position().map_or(0, |p| p.line());
        let bad = |message: String| Error::Row { line, message };
        let f = |i: usize| row.get(index[i]).unwrap_or("");
        let stem: StemKind = f(1).parse().map_err(|e: Error| bad(e.to_string()))?;
        let value: MetricValue = f(4).parse().map_err(|e: Error| bad(e.to_string()))?;
        let rec = MetricScoreRecord {
            track_id: f(0).to_owned(),
            stem,
            condition: f(2).to_owned(),
            metric: f(3).to_owned(),
            value,
        };
        if rec.condition.is_empty() || rec.metric.is_empty() {
            return Err(bad("empty condition or metric".into()));
        }
        let key = (rec.track_id.clone(), stem, rec.condition.clone(), rec.metric.clone());
        if !seen.insert(key) {
            return Err(bad(format!(
                "duplicate score for {}/{}/{}/{}",
                rec.track_id, stem, rec.condition, rec.metric
            )));
        }
        out.push(rec);
    }
    Ok(out)
}

pub fn write_scores<W: Write>(writer: W, records: &[MetricScoreRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Structural(format!("writing scores: {e}"));
    w.write_record(SCORES_HEADER).map_err(err)?;
    for r in records {
        w.write_record([
            r.track_id.as_str(),
            r.stem.as_str(),
            &r.condition,
            &r.metric,
            &r.value.to_string(),
        ])
        .map_err(err)?;
    }
    w.flush().map_err(|e| Error::Structural(format!("writing scores: {e}")))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauRecord {
    pub participant_id: String,
    pub track_id: String,
    pub stem: StemKind,
    pub metric: String,
    pub tau: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct TauOptions {
    pub mode: TauMode,
    /// Keep the hidden reference and anchor in each page's ranking.
    pub include_hidden: bool,
}

impl Default for TauOptions {
    fn default() -> Self {
        Self { mode: TauMode::B, include_hidden: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SkippedPage {
    pub page: PageKey,
    pub metric: String,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct TauResult {
    pub records: Vec<TauRecord>,
    pub skipped: Vec<SkippedPage>,
}

/// One τ per (participant, track, stem) page for `metric`.
pub fn per_unit_tau(
    ratings: &[RatingRecord],
    scores: &[MetricScoreRecord],
    metric: &str,
    opts: &TauOptions,
) -> Result<TauResult> {
    let lookup: BTreeMap<(&str, StemKind, &str), MetricValue> = scores
        .iter()
        .filter(|s| s.metric == metric)
        .map(|s| ((s.track_id.as_str(), s.stem, s.condition.as_str()), s.value))
        .collect();
    per_unit_tau_with(ratings, metric, opts, |track, stem, cond| {
        lookup.get(&(track, stem, cond)).copied()
    })
}

fn per_unit_tau_with(
    ratings: &[RatingRecord],
    metric: &str,
    opts: &TauOptions,
    lookup: impl Fn(&str, StemKind, &str) -> Option<MetricValue>,
) -> Result<TauResult> {
    let mut pages: BTreeMap<PageKey, BTreeMap<&str, f64>> = BTreeMap::new();
    for r in ratings {
        if !opts.include_hidden && r.is_hidden() {
            continue;
        }
        let page = pages.entry(r.page()).or_default();
        if page.insert(&r.condition, r.score as f64).is_some() {
            return Err(Error::Structural(format!(
                "page {} rates condition {:?} more than once",
                r.page(),
                r.condition
            )));
        }
    }

    let mut missing = BTreeSet::new();
    let mut joined = Vec::with_capacity(pages.len());
    for (page, conds) in &pages {
        let mut xs = Vec::with_capacity(conds.len());
        let mut ys = Vec::with_capacity(conds.len());
        for (&cond, &score) in conds {
            match lookup(&page.track_id, page.stem, cond) {
                Some(v) => {
                    xs.push(score);
                    ys.push(v.as_f64());
                }
                None => {
                    missing.insert(format!("{}/{}/{}/{}", page.track_id, page.stem, cond, metric));
                }
            }
        }
        joined.push((page, xs, ys));
    }
    if !missing.is_empty() {
        return Err(Error::Join { missing: missing.into_iter().collect() });
    }

    let mut out = TauResult::default();
    for (page, xs, ys) in joined {
        let skip = |reason: String| SkippedPage {
            page: page.clone(),
            metric: metric.to_owned(),
            reason,
        };
        if xs.len() < 2 {
            out.skipped.push(skip(format!("{} condition(s) to rank", xs.len())));
            continue;
        }
        match kendall_tau(&xs, &ys, opts.mode) {
            Ok(tau) => out.records.push(TauRecord {
                participant_id: page.participant_id.clone(),
                track_id: page.track_id.clone(),
                stem: page.stem,
                metric: metric.to_owned(),
                tau,
                n: xs.len(),
            }),
            Err(Error::UndefinedCorrelation(m)) => out.skipped.push(skip(m)),
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TauAggregate {
    /// Stems without records are absent.
    pub per_stem: BTreeMap<StemKind, f64>,
    pub counts: BTreeMap<StemKind, usize>,
    /// Mean of the per-stem means that are present.
    pub average: f64,
}

/// Page-weighted per-stem means and their unweighted average.
pub fn aggregate_tau(records: &[TauRecord]) -> Result<TauAggregate> {
    if records.is_empty() {
        return Err(Error::Parameter("no tau records to aggregate".into()));
    }
    let mut sums: BTreeMap<StemKind, (f64, usize)> = BTreeMap::new();
    for r in records {
        let e = sums.entry(r.stem).or_default();
        e.0 += r.tau;
        e.1 += 1;
    }
    let per_stem: BTreeMap<StemKind, f64> = sums.iter().map(|(&k, &(s, n))| (k, s / n as f64)).collect();
    let average = per_stem.values().sum::<f64>() / per_stem.len() as f64;
    Ok(TauAggregate {
        counts: sums.iter().map(|(&k, &(_, n))| (k, n)).collect(),
        per_stem,
        average,
    })
}

/// Rows per stem plus an `Average` row, one column per metric.
pub fn write_tau_table<W: Write>(writer: W, columns: &[(String, TauAggregate)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Structural(format!("writing table: {e}"));
    let mut header = vec!["stem".to_owned()];
    header.extend(columns.iter().map(|(m, _)| m.clone()));
    w.write_record(&header).map_err(err)?;
    for stem in StemKind::ALL {
        let mut row = vec![stem.label().to_owned()];
        row.extend(
            columns
                .iter()
                .map(|(_, a)| a.per_stem.get(&stem).map_or(String::new(), |v| v.to_string())),
        );
        w.write_record(&row).map_err(err)?;
    }
    let mut row = vec!["Average".to_owned()];
    row.extend(columns.iter().map(|(_, a)| a.average.to_string()));
    w.write_record(&row).map_err(err)?;
    w.flush().map_err(|e| Error::Structural(format!("writing table: {e}")))
}

/// Weights `0, step, 2·step, …, 1`. Both endpoints are exact.
pub fn sweep_grid(step: f64) -> Result<Vec<f64>> {
    if !(step > 0.0 && step <= 0.5) {
        return Err(Error::Parameter(format!("grid step {step} outside (0, 0.5]")));
    }
    let intervals = (1.0 / step).round();
    if ((intervals * step) - 1.0).abs() < 1e-9 {
        let n = intervals as usize;
        return Ok((0..=n).map(|k| k as f64 / n as f64).collect());
    }
    let mut grid: Vec<f64> = (0..).map(|k| k as f64 * step).take_while(|&w| w < 1.0).collect();
    grid.push(1.0);
    Ok(grid)
}

/// (track, stem, condition) identifying one estimate.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ConditionKey {
    pub track_id: String,
    pub stem: StemKind,
    pub condition: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepCurve {
    pub grid: Vec<f64>,
    /// Aligned with `grid`; `None` where a stem had no τ records.
    pub mean_tau_per_stem: BTreeMap<StemKind, Vec<Option<f64>>>,
    /// Pages skipped for undefined τ at each grid point.
    pub skipped_pages: Vec<usize>,
}

pub fn weight_sweep(
    energies: &BTreeMap<ConditionKey, SiEnergies>,
    ratings: &[RatingRecord],
    grid_step: f64,
    opts: &TauOptions,
) -> Result<SweepCurve> {
    let grid = sweep_grid(grid_step)?;
    let points: Vec<(BTreeMap<StemKind, f64>, usize)> = grid
        .par_iter()
        .map(|&w| {
            let mut values = BTreeMap::new();
            for (k, e) in energies {
                values.insert((k.track_id.as_str(), k.stem, k.condition.as_str()), e.reweighted(w)?);
            }
            let name = crate::energy::reweighted_name(w);
            let result = per_unit_tau_with(ratings, &name, opts, |t, s, c| values.get(&(t, s, c)).copied())?;
            let per_stem = if result.records.is_empty() {
                BTreeMap::new()
            } else {
                aggregate_tau(&result.records)?.per_stem
            };
            Ok((per_stem, result.skipped.len()))
        })
        .collect::<Result<_>>()?;

    let stems: BTreeSet<StemKind> = points.iter().flat_map(|(m, _)| m.keys().copied()).collect();
    let mean_tau_per_stem = stems
        .into_iter()
        .map(|s| (s, points.iter().map(|(m, _)| m.get(&s).copied()).collect()))
        .collect();
    Ok(SweepCurve {
        grid,
        mean_tau_per_stem,
        skipped_pages: points.iter().map(|(_, n)| *n).collect(),
    })
}

/// `w,stem,mean_tau` rows, grid-major, skipping absent stems.
pub fn write_sweep<W: Write>(writer: W, curve: &SweepCurve) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let err = |e: csv::Error| Error::Structural(format!("writing sweep: {e}"));
    w.write_record(["w", "stem", "mean_tau"]).map_err(err)?;
    for (i, weight) in curve.grid.iter().enumerate() {
        for (stem, values) in &curve.mean_tau_per_stem {
            if let Some(tau) = values[i] {
                w.write_record([weight.to_string(), stem.as_str().to_owned(), tau.to_string()])
                    .map_err(err)?;
            }
        }
    }
    w.flush().map_err(|e| Error::Structural(format!("writing sweep: {e}")))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ratings::{ANCHOR, REFERENCE};

    fn tau(x: &[f64], y: &[f64]) -> f64 {
        kendall_tau(x, y, TauMode::B).unwrap()
    }

    #[test]
    fn small_cases() {
        assert_eq!(tau(&[1., 2., 3.], &[10., 20., 30.]), 1.0);
        assert_eq!(tau(&[1., 2., 3.], &[30., 20., 10.]), -1.0);
        assert!((tau(&[1., 2., 3.], &[10., 30., 20.]) - 1.0 / 3.0).abs() < 1e-15);
        assert!((tau(&[1., 1., 2.], &[1., 2., 3.]) - 2.0 / 6f64.sqrt()).abs() < 1e-15);
        // τ-a does not correct for the tie.
        assert!((kendall_tau(&[1., 1., 2.], &[1., 2., 3.], TauMode::A).unwrap() - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn perfect_fit_ranks_on_top() {
        let inf = f64::INFINITY;
        assert_eq!(tau(&[1., 2., 3.], &[0., 5., inf]), 1.0);
        // Two perfect fits tie with each other.
        let c = pair_counts(&[1., 2., 3.], &[inf, inf, 0.]).unwrap();
        assert_eq!(c.tied_y, 1);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(matches!(
            kendall_tau(&[4., 4., 4.], &[1., 2., 3.], TauMode::B),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(matches!(
            kendall_tau(&[1., 2.], &[7., 7.], TauMode::A),
            Err(Error::UndefinedCorrelation(_))
        ));
        assert!(kendall_tau(&[1.], &[1.], TauMode::B).is_err());
        assert!(kendall_tau(&[1., 2.], &[1.], TauMode::B).is_err());
        assert!(kendall_tau(&[1., f64::NAN], &[1., 2.], TauMode::B).is_err());
    }

    #[test]
    fn signed_zero_ties() {
        let c = pair_counts(&[0.0, -0.0, 1.0], &[1., 2., 3.]).unwrap();
        assert_eq!(c.tied_x, 1);
        assert_eq!(c.concordant_minus_discordant, 2);
    }

    fn rating(user: &str, track: &str, cond: &str, score: u8) -> RatingRecord {
        RatingRecord {
            participant_id: user.into(),
            batch: "b".into(),
            track_id: track.into(),
            stem: StemKind::Drums,
            condition: cond.into(),
            score,
            page_time_s: 60.0,
        }
    }

    fn score(track: &str, cond: &str, v: f64) -> MetricScoreRecord {
        MetricScoreRecord {
            track_id: track.into(),
            stem: StemKind::Drums,
            condition: cond.into(),
            metric: "M".into(),
            value: MetricValue::Finite(v),
        }
    }

    #[test]
    fn per_page_tau() {
        let ratings = vec![
            rating("u1", "t", REFERENCE, 100),
            rating("u1", "t", ANCHOR, 10),
            rating("u1", "t", "A", 30),
            rating("u1", "t", "B", 60),
            rating("u2", "t", "A", 60),
            rating("u2", "t", "B", 30),
        ];
        let scores = vec![score("t", "A", 1.0), score("t", "B", 2.0)];
        let r = per_unit_tau(&ratings, &scores, "M", &TauOptions::default()).unwrap();
        assert_eq!(r.records.len(), 2);
        assert_eq!((r.records[0].tau, r.records[0].n), (1.0, 2));
        assert_eq!(r.records[1].tau, -1.0);
        assert!(r.skipped.is_empty());
    }

    #[test]
    fn missing_scores_are_listed() {
        let ratings = vec![rating("u1", "t", "A", 1), rating("u1", "t", "B", 2), rating("u1", "t", "C", 3)];
        let scores = vec![score("t", "A", 1.0)];
        match per_unit_tau(&ratings, &scores, "M", &TauOptions::default()) {
            Err(Error::Join { missing }) => assert_eq!(missing, vec!["t/drums/B/M", "t/drums/C/M"]),
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn tied_page_is_skipped_and_reported() {
        let ratings = vec![rating("u1", "t", "A", 50), rating("u1", "t", "B", 50)];
        let scores = vec![score("t", "A", 1.0), score("t", "B", 2.0)];
        let r = per_unit_tau(&ratings, &scores, "M", &TauOptions::default()).unwrap();
        assert!(r.records.is_empty());
        assert_eq!(r.skipped.len(), 1);
        assert_eq!(r.skipped[0].page.participant_id, "u1");
    }

    #[test]
    fn aggregate_means() {
        let rec = |stem, tau| TauRecord {
            participant_id: "u".into(),
            track_id: "t".into(),
            stem,
            metric: "M".into(),
            tau,
            n: 3,
        };
        let a = aggregate_tau(&[rec(StemKind::Bass, 1.0), rec(StemKind::Bass, -1.0)]).unwrap();
        assert_eq!(a.per_stem[&StemKind::Bass], 0.0);
        assert!(!a.per_stem.contains_key(&StemKind::Vocals));
        let a = aggregate_tau(&[rec(StemKind::Bass, 0.5), rec(StemKind::Vocals, 0.25)]).unwrap();
        assert_eq!(a.average, 0.375);
        assert!(aggregate_tau(&[]).is_err());
    }

    #[test]
    fn grids() {
        assert_eq!(sweep_grid(0.5).unwrap(), vec![0.0, 0.5, 1.0]);
        let g = sweep_grid(0.05).unwrap();
        assert_eq!(g.len(), 21);
        assert_eq!((g[0], g[20]), (0.0, 1.0));
        let g = sweep_grid(0.3).unwrap();
        assert_eq!(g, vec![0.0, 0.3, 0.6, 0.8999999999999999, 1.0]);
        assert!(sweep_grid(0.0).is_err());
        assert!(sweep_grid(0.6).is_err());
        assert!(sweep_grid(f64::NAN).is_err());
    }

    #[test]
    fn score_csv_round_trip() {
        let mut recs = vec![score("t2", "A", -3.5), score("t1", "B", 0.1)];
        recs.push(MetricScoreRecord { value: MetricValue::PerfectFit, ..score("t1", "A", 0.0) });
        sort_scores(&mut recs);
        let mut buf = Vec::new();
        write_scores(&mut buf, &recs).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.contains("t1,drums,A,M,inf"));
        assert_eq!(read_scores(buf.as_slice()).unwrap(), recs);
    }

    #[test]
    fn duplicate_score_rejected() {
        let text = "track_id,stem,condition,metric,value\nt,bass,A,M,1\nt,bass,A,M,2\n";
        assert!(matches!(read_scores(text.as_bytes()), Err(Error::Row { line: 3, .. })));
    }
}
