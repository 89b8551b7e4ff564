//! Framewise image-style BSSEval: per-channel distortion filters over all
//! reference channels, median aggregation across frames.

use nalgebra::DMatrix;
use rayon::prelude::*;

use super::fir::{FrameOperator, GramSolver};
use super::{energy, energy_ratio_db, MetricValue, EPS_ZERO};
use crate::audio::{ensure_same_rate, AudioBuffer};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Framing {
    Windowed { window_s: f64, hop_s: f64 },
    WholeTrack,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssConfig {
    pub framing: Framing,
    pub filter_len: usize,
}

impl Default for BssConfig {
    fn default() -> Self {
        Self {
            framing: Framing::Windowed {
                window_s: 1.0,
                hop_s: 1.0,
            },
            filter_len: 512,
        }
    }
}

/// The four parts of one estimate frame; channel-major.
#[derive(Debug, Clone, PartialEq)]
pub struct BssDecomposition {
    pub s_target: Vec<Vec<f64>>,
    pub e_spatial: Vec<Vec<f64>>,
    pub e_interference: Vec<Vec<f64>>,
    pub e_artifact: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct FrameScore {
    sdr: MetricValue,
    isr: MetricValue,
    sir: MetricValue,
    sar: MetricValue,
}

fn summed_energy(parts: &[&[Vec<f64>]]) -> f64 {
    let channels = parts[0].len();
    let len = parts[0][0].len();
    let mut total = 0.0;
    for c in 0..channels {
        for t in 0..len {
            let v: f64 = parts.iter().map(|p| p[c][t]).sum();
            total += v * v;
        }
    }
    total
}

impl BssDecomposition {
    fn scores(&self) -> FrameScore {
        let target = summed_energy(&[&self.s_target]);
        FrameScore {
            sdr: energy_ratio_db(
                target,
                summed_energy(&[&self.e_spatial, &self.e_interference, &self.e_artifact]),
            ),
            isr: energy_ratio_db(target, summed_energy(&[&self.e_spatial])),
            sir: energy_ratio_db(
                summed_energy(&[&self.s_target, &self.e_spatial]),
                summed_energy(&[&self.e_interference]),
            ),
            sar: energy_ratio_db(
                summed_energy(&[&self.s_target, &self.e_spatial, &self.e_interference]),
                summed_energy(&[&self.e_artifact]),
            ),
        }
    }

    pub fn sdr(&self) -> MetricValue {
        self.scores().sdr
    }

    pub fn isr(&self) -> MetricValue {
        self.scores().isr
    }

    pub fn sir(&self) -> MetricValue {
        self.scores().sir
    }

    pub fn sar(&self) -> MetricValue {
        self.scores().sar
    }
}

/// Per-frame scores for one estimate. `None` marks a frame whose reference
/// was silent.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct BssFrameScores {
    pub sdr: Vec<Option<MetricValue>>,
    pub isr: Vec<Option<MetricValue>>,
    pub sir: Vec<Option<MetricValue>>,
    pub sar: Vec<Option<MetricValue>>,
}

/// Median over defined frames; `None` when no frame was defined.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BssAggregate {
    pub sdr: Option<MetricValue>,
    pub isr: Option<MetricValue>,
    pub sir: Option<MetricValue>,
    pub sar: Option<MetricValue>,
}

fn median(values: &[Option<MetricValue>]) -> Option<MetricValue> {
    let mut v: Vec<MetricValue> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return None;
    }
    v.sort();
    let mid = v.len() / 2;
    if v.len() % 2 == 1 {
        return Some(v[mid]);
    }
    match (v[mid - 1], v[mid]) {
        (MetricValue::Finite(a), MetricValue::Finite(b)) => Some(MetricValue::Finite((a + b) / 2.0)),
        _ => Some(MetricValue::PerfectFit),
    }
}

impl BssFrameScores {
    pub fn frames(&self) -> usize {
        self.sdr.len()
    }

    pub fn aggregate(&self) -> BssAggregate {
        BssAggregate {
            sdr: median(&self.sdr),
            isr: median(&self.isr),
            sir: median(&self.sir),
            sar: median(&self.sar),
        }
    }

    fn push(&mut self, score: Option<FrameScore>) {
        self.sdr.push(score.map(|s| s.sdr));
        self.isr.push(score.map(|s| s.isr));
        self.sir.push(score.map(|s| s.sir));
        self.sar.push(score.map(|s| s.sar));
    }
}

fn check_shapes(references: &[AudioBuffer], estimates: &[(usize, &AudioBuffer)], filter_len: usize) -> Result<()> {
    if references.is_empty() {
        return Err(Error::Parameter("no references".into()));
    }
    if filter_len == 0 {
        return Err(Error::Parameter("filter length must be at least 1".into()));
    }
    let (n, nch) = (references[0].len(), references[0].num_channels());
    let all = references.iter().chain(estimates.iter().map(|(_, e)| *e));
    for (i, b) in all.enumerate() {
        if b.len() != n || b.num_channels() != nch {
            return Err(Error::Parameter(format!(
                "signal {i} is {}x{}, expected {nch}x{n}",
                b.num_channels(),
                b.len()
            )));
        }
    }
    if let Some((j, _)) = estimates.iter().find(|(j, _)| *j >= references.len()) {
        return Err(Error::Parameter(format!("estimate target {j} has no reference")));
    }
    ensure_same_rate(references.iter().chain(estimates.iter().map(|(_, e)| *e)))
}

/// Decomposes the span `[start, start + len)` for each listed estimate.
fn decompose_span(
    references: &[AudioBuffer],
    estimates: &[(usize, &AudioBuffer)],
    start: usize,
    len: usize,
    taps: usize,
) -> Result<Vec<Option<BssDecomposition>>> {
    let nch = references[0].num_channels();
    let energies: Vec<f64> = references
        .iter()
        .map(|r| r.channels().iter().map(|c| energy(&c[start..start + len])).sum())
        .collect();
    let max_energy = energies.iter().cloned().fold(0.0, f64::max);
    let active: Vec<usize> = (0..references.len())
        .filter(|&j| energies[j] > 0.0 && energies[j] > EPS_ZERO * max_energy)
        .collect();
    if active.is_empty() {
        return Ok(vec![None; estimates.len()]);
    }

    let signals: Vec<&[f64]> = active
        .iter()
        .flat_map(|&j| references[j].channels().iter().map(|c| c.as_slice()))
        .collect();
    let op = FrameOperator::new(&signals, start, len, taps);
    let all: Vec<usize> = (0..signals.len()).collect();
    let gram = op.gram();

    let position = |j: usize| active.iter().position(|&a| a == j);
    let mut targets: Vec<usize> = estimates.iter().filter_map(|(j, _)| position(*j)).collect();
    targets.sort_unstable();
    targets.dedup();

    let subsets: Vec<(usize, Vec<usize>, DMatrix<f64>)> = targets
        .iter()
        .map(|&k| {
            let idx: Vec<usize> = (k * nch..(k + 1) * nch).collect();
            let rows: Vec<usize> = idx.iter().flat_map(|&p| p * taps..(p + 1) * taps).collect();
            let sub = DMatrix::from_fn(rows.len(), rows.len(), |a, b| gram[(rows[a], rows[b])]);
            (k, idx, sub)
        })
        .collect();
    let full = if active.len() > 1 {
        Some(GramSolver::new(&op, gram, all.clone())?)
    } else {
        None
    };
    let mut single = Vec::with_capacity(subsets.len());
    for (k, idx, sub) in subsets {
        single.push((k, GramSolver::new(&op, sub, idx)?));
    }

    let mut out = Vec::with_capacity(estimates.len());
    for (j, est) in estimates {
        let Some(k) = position(*j) else {
            out.push(None);
            continue;
        };
        let solver = &single.iter().find(|(kk, _)| *kk == k).expect("target solver").1;
        let own: Vec<usize> = (k * nch..(k + 1) * nch).collect();
        let mut d = BssDecomposition {
            s_target: Vec::with_capacity(nch),
            e_spatial: Vec::with_capacity(nch),
            e_interference: Vec::with_capacity(nch),
            e_artifact: Vec::with_capacity(nch),
        };
        for c in 0..nch {
            let y = &est.channel(c)[start..start + len];
            let rhs_all = op.correlate(&all, y);
            let rhs_own = rhs_all[k * nch * taps..(k + 1) * nch * taps].to_vec();
            let p_own = op.synthesize(&own, &solver.solve(&op, y, rhs_own));
            let p_all = match &full {
                Some(f) => op.synthesize(&all, &f.solve(&op, y, rhs_all)),
                None => p_own.clone(),
            };
            let s_true = op.frame(k * nch + c);
            d.e_spatial.push(p_own.iter().zip(s_true).map(|(p, s)| p - s).collect());
            d.e_interference.push(p_all.iter().zip(&p_own).map(|(a, o)| a - o).collect());
            d.e_artifact.push(y.iter().zip(&p_all).map(|(e, a)| e - a).collect());
            d.s_target.push(s_true.to_vec());
        }
        out.push(Some(d));
    }
    Ok(out)
}

/// Whole-signal decomposition of `estimate` with `references[target]` as the
/// true source, no history before sample 0.
pub fn bss_decompose(
    estimate: &AudioBuffer,
    references: &[AudioBuffer],
    target: usize,
    filter_len: usize,
) -> Result<BssDecomposition> {
    check_shapes(references, &[(target, estimate)], filter_len)?;
    let n = estimate.len();
    if n <= filter_len {
        return Err(Error::Parameter(format!(
            "signals of {n} samples are not longer than the {filter_len}-tap filter"
        )));
    }
    decompose_span(references, &[(target, estimate)], 0, n, filter_len)?
        .pop()
        .flatten()
        .ok_or_else(|| Error::DegenerateReference(format!("reference {target} is silent")))
}

/// Scores `estimates[i]` against `references[i]` for every source.
pub fn bsseval(
    estimates: &[AudioBuffer],
    references: &[AudioBuffer],
    config: &BssConfig,
) -> Result<Vec<BssFrameScores>> {
    if estimates.len() != references.len() {
        return Err(Error::Parameter(format!(
            "{} estimates for {} references",
            estimates.len(),
            references.len()
        )));
    }
    let pairs: Vec<(usize, &AudioBuffer)> = estimates.iter().enumerate().collect();
    bsseval_targets(references, &pairs, config)
}

/// Like [`bsseval`] for a subset of sources: each entry pairs a reference
/// index with its estimate. All references still form the interference span.
pub fn bsseval_targets(
    references: &[AudioBuffer],
    estimates: &[(usize, &AudioBuffer)],
    config: &BssConfig,
) -> Result<Vec<BssFrameScores>> {
    let taps = config.filter_len;
    check_shapes(references, estimates, taps)?;
    let n = references[0].len();
    let rate = references[0].sample_rate() as f64;
    let (win, hop) = match config.framing {
        Framing::WholeTrack => (n, n.max(1)),
        Framing::Windowed { window_s, hop_s } => {
            if !(window_s > 0.0) || !(hop_s > 0.0) {
                return Err(Error::Parameter("window and hop must be positive".into()));
            }
            let win = (window_s * rate).round() as usize;
            let hop = ((hop_s * rate).round() as usize).max(1);
            if win <= taps {
                return Err(Error::Parameter(format!(
                    "window of {win} samples does not exceed the {taps}-tap filter"
                )));
            }
            (win.min(n), hop)
        }
    };
    if win <= taps {
        return Err(Error::Parameter(format!(
            "signals of {n} samples are not longer than the {taps}-tap filter"
        )));
    }
    let frames = (n - win) / hop + 1;

    let per_frame: Vec<Vec<Option<FrameScore>>> = (0..frames)
        .into_par_iter()
        .map(|f| {
            decompose_span(references, estimates, f * hop, win, taps)
                .map(|ds| ds.into_iter().map(|d| d.map(|d| d.scores())).collect())
        })
        .collect::<Result<_>>()?;

    let mut out = vec![BssFrameScores::default(); estimates.len()];
    for frame in per_frame {
        for (scores, s) in out.iter_mut().zip(frame) {
            scores.push(s);
        }
    }
    Ok(out)
}
