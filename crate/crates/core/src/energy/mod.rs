//! Energy-ratio metrics: the scale-invariant family, SD-SDR, the reweighted
//! SI-SDR, and framewise BSSEval-style SDR/ISR/SIR/SAR.

mod bss;
mod fir;
mod si;

use std::cmp::Ordering;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use bss::{
    bss_decompose, bsseval, bsseval_targets, BssAggregate, BssConfig, BssDecomposition,
    BssFrameScores, Framing,
};
pub use fir::{fir_project, FirProjection, CONDITION_LIMIT};
pub use si::{
    reweighted_si_sdr, si_decompose, si_metrics, SiDecomposition, SiEnergies, SiScores,
};

/// Relative energy below which a ratio's denominator counts as zero.
pub const EPS_ZERO: f64 = 1e-12;

pub const SDR: &str = "SDR";
pub const ISR: &str = "ISR";
pub const SIR: &str = "SIR";
pub const SAR: &str = "SAR";
pub const SI_SDR: &str = "SI-SDR";
pub const SI_SIR: &str = "SI-SIR";
pub const SI_SAR: &str = "SI-SAR";
pub const SD_SDR: &str = "SD-SDR";

/// Name of the reweighted SI-SDR at weight `w`, e.g. `RW-SISDR(0.25)`.
pub fn reweighted_name(w: f64) -> String {
    format!("RW-SISDR({w})")
}

/// Parses the weight out of a `RW-SISDR(w)` name.
pub fn parse_reweighted_name(name: &str) -> Option<f64> {
    let inner = name.strip_prefix("RW-SISDR(")?.strip_suffix(')')?;
    inner.trim().parse().ok()
}

/// A metric in decibels, or `PerfectFit` when the error energy vanishes.
///
/// `PerfectFit` sorts above every finite value. A target with no energy at
/// all yields `Finite(-inf)`, which sorts below every other value.
#[derive(Debug, Clone, Copy)]
pub enum MetricValue {
    Finite(f64),
    PerfectFit,
}

impl MetricValue {
    pub fn finite(&self) -> Option<f64> {
        match *self {
            MetricValue::Finite(v) => Some(v),
            MetricValue::PerfectFit => None,
        }
    }

    pub fn is_perfect(&self) -> bool {
        matches!(self, MetricValue::PerfectFit)
    }

    /// `+inf` for `PerfectFit`.
    pub fn as_f64(&self) -> f64 {
        match *self {
            MetricValue::Finite(v) => v,
            MetricValue::PerfectFit => f64::INFINITY,
        }
    }
}

impl PartialEq for MetricValue {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for MetricValue {}

impl PartialOrd for MetricValue {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for MetricValue {
    fn cmp(&self, other: &Self) -> Ordering {
        use MetricValue::*;
        match (self, other) {
            (PerfectFit, PerfectFit) => Ordering::Equal,
            (PerfectFit, Finite(_)) => Ordering::Greater,
            (Finite(_), PerfectFit) => Ordering::Less,
            // `==` first so that 0.0 and -0.0 tie.
            (Finite(a), Finite(b)) if a == b => Ordering::Equal,
            (Finite(a), Finite(b)) => a.total_cmp(b),
        }
    }
}

impl fmt::Display for MetricValue {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            MetricValue::Finite(v) => write!(f, "{v}"),
            MetricValue::PerfectFit => f.write_str("inf"),
        }
    }
}

impl FromStr for MetricValue {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        match t.to_ascii_lowercase().as_str() {
            "inf" | "+inf" | "infinity" | "+infinity" => return Ok(MetricValue::PerfectFit),
            _ => {}
        }
        match t.parse::<f64>() {
            Ok(v) if !v.is_nan() && v != f64::INFINITY => Ok(MetricValue::Finite(v)),
            _ => Err(Error::Parameter(format!("not a metric value: {s:?}"))),
        }
    }
}

/// `10 log10(num / den)` with the `EPS_ZERO` perfect-fit rule.
pub(crate) fn energy_ratio_db(num: f64, den: f64) -> MetricValue {
    if !(num > 0.0) {
        return MetricValue::Finite(f64::NEG_INFINITY);
    }
    if den < EPS_ZERO * num {
        MetricValue::PerfectFit
    } else {
        MetricValue::Finite(10.0 * (num / den).log10())
    }
}

pub(crate) fn energy(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}
