//! Least-squares projection onto delayed copies of reference signals.
//!
//! A regressor is one channel of one reference delayed by `0..taps` samples.
//! Delays read real signal history before the start of the analysed span
//! (zeros before sample 0), so an estimate that is an FIR-filtered copy of a
//! reference lies exactly in the span even when the span is a frame in the
//! middle of a track.
//!
//! Correlations come from FFTs; the Gram matrix is filled block by block
//! from one FFT correlation per block plus a diagonal recursion for the edge
//! terms. The system is regularized by `1e-10 · trace / dim` and solved by
//! Cholesky with one refinement step.

use std::sync::Arc;

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use crate::audio::AudioBuffer;
use crate::error::{Error, Result};

/// Gram systems conditioned worse than this are rejected.
pub const CONDITION_LIMIT: f64 = 1e12;

const REGULARIZATION: f64 = 1e-10;
const CONDITION_ITERATIONS: usize = 40;

/// Delayed-regressor operator for one analysis span.
pub(crate) struct FrameOperator {
    taps: usize,
    len: usize,
    nfft: usize,
    /// `ext[p][k] = x_p(start - taps + 1 + k)` for `k < len + taps - 1`.
    ext: Vec<Vec<f64>>,
    ext_spec: Vec<Vec<Complex<f64>>>,
    fft: Arc<dyn Fft<f64>>,
    ifft: Arc<dyn Fft<f64>>,
}

impl FrameOperator {
    /// `signals` are whole-track channels; the span is `[start, start + len)`.
    pub(crate) fn new(signals: &[&[f64]], start: usize, len: usize, taps: usize) -> Self {
        let nfft = (len + 2 * taps).next_power_of_two();
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(nfft);
        let ifft = planner.plan_fft_inverse(nfft);
        let ext: Vec<Vec<f64>> = signals
            .iter()
            .map(|x| {
                (0..len + taps - 1)
                    .map(|k| {
                        let idx = start as isize - taps as isize + 1 + k as isize;
                        if idx < 0 {
                            0.0
                        } else {
                            x.get(idx as usize).copied().unwrap_or(0.0)
                        }
                    })
                    .collect()
            })
            .collect();
        let mut op = Self {
            taps,
            len,
            nfft,
            ext,
            ext_spec: Vec::new(),
            fft,
            ifft,
        };
        op.ext_spec = op.ext.iter().map(|e| op.spectrum(e)).collect();
        op
    }

    pub(crate) fn num_signals(&self) -> usize {
        self.ext.len()
    }

    /// Undelayed span of signal `p`.
    pub(crate) fn frame(&self, p: usize) -> &[f64] {
        &self.ext[p][self.taps - 1..]
    }

    fn spectrum(&self, x: &[f64]) -> Vec<Complex<f64>> {
        let mut buf = vec![Complex::new(0.0, 0.0); self.nfft];
        for (b, &v) in buf.iter_mut().zip(x) {
            b.re = v;
        }
        self.fft.process(&mut buf);
        buf
    }

    fn inverse(&self, mut spec: Vec<Complex<f64>>) -> Vec<f64> {
        self.ifft.process(&mut spec);
        let scale = 1.0 / self.nfft as f64;
        spec.iter().map(|c| c.re * scale).collect()
    }

    /// `cc[m] = Σ_t y(t) ext_p(t + m)` for `m < taps`, given `Y = FFT(y)`.
    fn cross(&self, y_spec: &[Complex<f64>], p: usize) -> Vec<f64> {
        let prod = y_spec
            .iter()
            .zip(&self.ext_spec[p])
            .map(|(y, x)| y.conj() * x)
            .collect();
        let mut cc = self.inverse(prod);
        cc.truncate(self.taps);
        cc
    }

    /// Regressor correlations `Aᵀy` over the signals in `subset`, laid out
    /// `[signal][delay]`.
    pub(crate) fn correlate(&self, subset: &[usize], y: &[f64]) -> Vec<f64> {
        let y_spec = self.spectrum(y);
        let mut out = Vec::with_capacity(subset.len() * self.taps);
        for &p in subset {
            let cc = self.cross(&y_spec, p);
            out.extend((0..self.taps).map(|a| cc[self.taps - 1 - a]));
        }
        out
    }

    /// `A c`: the span-length signal synthesized from filter coefficients.
    pub(crate) fn synthesize(&self, subset: &[usize], coeffs: &[f64]) -> Vec<f64> {
        let mut acc = vec![Complex::new(0.0, 0.0); self.nfft];
        for (i, &p) in subset.iter().enumerate() {
            let h = self.spectrum(&coeffs[i * self.taps..(i + 1) * self.taps]);
            for ((a, h), x) in acc.iter_mut().zip(&h).zip(&self.ext_spec[p]) {
                *a += h * x;
            }
        }
        let full = self.inverse(acc);
        full[self.taps - 1..self.taps - 1 + self.len].to_vec()
    }

    /// Gram matrix of all regressors, `[signal][delay]` ordering.
    pub(crate) fn gram(&self) -> DMatrix<f64> {
        let r = self.num_signals();
        let taps = self.taps;
        let len = self.len;
        let dim = r * taps;
        let frame_spec: Vec<Vec<Complex<f64>>> = (0..r).map(|p| self.spectrum(self.frame(p))).collect();
        let mut g = DMatrix::<f64>::zeros(dim, dim);
        for p in 0..r {
            for q in p..r {
                // First row: G[(p,0),(q,b)]; first column: G[(p,a),(q,0)].
                let row = self.cross(&frame_spec[p], q);
                let col = if p == q { row.clone() } else { self.cross(&frame_spec[q], p) };
                let (xp, xq) = (&self.ext[p], &self.ext[q]);
                let mut block = vec![0.0; taps * taps];
                for b in 0..taps {
                    block[b] = row[taps - 1 - b];
                }
                for a in 1..taps {
                    block[a * taps] = col[taps - 1 - a];
                }
                // G[a+1][b+1] = G[a][b] + x_p(s-a-1) x_q(s-b-1) - x_p(s+len-1-a) x_q(s+len-1-b)
                for a in 0..taps - 1 {
                    for b in 0..taps - 1 {
                        block[(a + 1) * taps + b + 1] = block[a * taps + b]
                            + xp[taps - 2 - a] * xq[taps - 2 - b]
                            - xp[len + taps - 2 - a] * xq[len + taps - 2 - b];
                    }
                }
                for a in 0..taps {
                    for b in 0..taps {
                        let v = block[a * taps + b];
                        g[(p * taps + a, q * taps + b)] = v;
                        g[(q * taps + b, p * taps + a)] = v;
                    }
                }
            }
        }
        g
    }
}

/// Regularized Cholesky factorization of a Gram matrix over `subset`.
pub(crate) struct GramSolver {
    chol: Cholesky<f64, Dyn>,
    lambda: f64,
    subset: Vec<usize>,
    pub(crate) condition: f64,
}

impl GramSolver {
    pub(crate) fn new(op: &FrameOperator, mut gram: DMatrix<f64>, subset: Vec<usize>) -> Result<Self> {
        let dim = gram.nrows();
        let trace = gram.trace();
        if !(trace > 0.0) || !trace.is_finite() {
            return Err(Error::DependentReferences {
                condition: f64::INFINITY,
                limit: CONDITION_LIMIT,
            });
        }
        let lambda = REGULARIZATION * trace / dim as f64;
        for i in 0..dim {
            gram[(i, i)] += lambda;
        }
        let chol = Cholesky::new(gram).ok_or(Error::DependentReferences {
            condition: f64::INFINITY,
            limit: CONDITION_LIMIT,
        })?;
        let mut solver = Self {
            chol,
            lambda,
            subset,
            condition: f64::NAN,
        };
        solver.condition = solver.estimate_condition(op);
        if !(solver.condition <= CONDITION_LIMIT) {
            return Err(Error::DependentReferences {
                condition: solver.condition,
                limit: CONDITION_LIMIT,
            });
        }
        Ok(solver)
    }

    fn apply(&self, op: &FrameOperator, x: &[f64]) -> Vec<f64> {
        let ax = op.synthesize(&self.subset, x);
        let mut out = op.correlate(&self.subset, &ax);
        for (o, v) in out.iter_mut().zip(x) {
            *o += self.lambda * v;
        }
        out
    }

    /// Power iteration for the largest eigenvalue, inverse iteration through
    /// the factor for the smallest.
    fn estimate_condition(&self, op: &FrameOperator) -> f64 {
        let dim = self.chol.l_dirty().nrows();
        let start: Vec<f64> = (0..dim)
            .map(|i| 1.0 + 0.5 * ((i as f64 * 0.618_033_988_75).fract() - 0.5))
            .collect();
        let normalize = |v: &mut Vec<f64>| {
            let n = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            v.iter_mut().for_each(|x| *x /= n);
            n
        };

        let mut v = start.clone();
        normalize(&mut v);
        let mut hi = 0.0;
        for _ in 0..CONDITION_ITERATIONS {
            let mut w = self.apply(op, &v);
            hi = normalize(&mut w);
            v = w;
        }

        let mut v = DVector::from_vec(start);
        v.normalize_mut();
        let mut inv_lo = 0.0;
        for _ in 0..CONDITION_ITERATIONS {
            let mut w = self.chol.solve(&v);
            inv_lo = w.norm();
            w /= inv_lo;
            v = w;
        }
        if inv_lo > 0.0 && inv_lo.is_finite() {
            hi * inv_lo
        } else {
            f64::INFINITY
        }
    }

    /// Least-squares filter coefficients for `y`, with `rhs = Aᵀy`.
    pub(crate) fn solve(&self, op: &FrameOperator, y: &[f64], rhs: Vec<f64>) -> Vec<f64> {
        let mut coef = self.chol.solve(&DVector::from_vec(rhs));
        let prediction = op.synthesize(&self.subset, coef.as_slice());
        let residual: Vec<f64> = y.iter().zip(&prediction).map(|(a, b)| a - b).collect();
        let mut g = op.correlate(&self.subset, &residual);
        for (gi, ci) in g.iter_mut().zip(coef.iter()) {
            *gi -= self.lambda * ci;
        }
        coef += self.chol.solve(&DVector::from_vec(g));
        coef.as_slice().to_vec()
    }
}

/// Result of [`fir_project`]: same channel layout as the estimate.
#[derive(Debug, Clone, PartialEq)]
pub struct FirProjection {
    pub projection: AudioBuffer,
    pub residual: AudioBuffer,
}

/// Projects each channel of `estimate` onto every channel of every reference
/// delayed by `0..filter_len` samples.
pub fn fir_project(estimate: &AudioBuffer, references: &[AudioBuffer], filter_len: usize) -> Result<FirProjection> {
    if filter_len == 0 {
        return Err(Error::Parameter("filter length must be at least 1".into()));
    }
    if references.is_empty() {
        return Err(Error::Parameter("no references".into()));
    }
    let n = estimate.len();
    if n <= filter_len {
        return Err(Error::Parameter(format!(
            "signals of {n} samples are not longer than the {filter_len}-tap filter"
        )));
    }
    for (i, r) in references.iter().enumerate() {
        if r.len() != n || r.num_channels() != estimate.num_channels() {
            return Err(Error::Parameter(format!(
                "reference {i} is {}x{}, estimate is {}x{n}",
                r.num_channels(),
                r.len(),
                estimate.num_channels()
            )));
        }
    }
    crate::audio::ensure_same_rate(references.iter().chain([estimate]))?;

    let signals: Vec<&[f64]> = references
        .iter()
        .flat_map(|r| r.channels().iter().map(|c| c.as_slice()))
        .collect();
    let op = FrameOperator::new(&signals, 0, n, filter_len);
    let all: Vec<usize> = (0..op.num_signals()).collect();
    let solver = GramSolver::new(&op, op.gram(), all.clone())?;

    let mut proj = Vec::with_capacity(estimate.num_channels());
    let mut resid = Vec::with_capacity(estimate.num_channels());
    for y in estimate.channels() {
        let rhs = op.correlate(&all, y);
        let coef = solver.solve(&op, y, rhs);
        let p = op.synthesize(&all, &coef);
        resid.push(y.iter().zip(&p).map(|(a, b)| a - b).collect());
        proj.push(p);
    }
    Ok(FirProjection {
        projection: AudioBuffer::new(proj, estimate.sample_rate())?,
        residual: AudioBuffer::new(resid, estimate.sample_rate())?,
    })
}
