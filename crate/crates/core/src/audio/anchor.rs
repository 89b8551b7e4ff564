//! Low-pass anchors: 8th-order Butterworth, run forward then backward.

use std::f64::consts::PI;

use super::{AudioBuffer, StemKind};
use crate::error::{Error, Result};

const ANCHOR_ORDER: usize = 8;

pub fn anchor_cutoff_hz(kind: StemKind) -> f64 {
    match kind {
        StemKind::Bass => 175.0,
        StemKind::Vocals | StemKind::Drums | StemKind::Other => 3500.0,
    }
}

/// One second-order section in transposed direct form II, `a0 = 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 2],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (1.0 + self.a[0] + self.a[1])
    }

    /// State that makes a constant input `x` a fixed point.
    fn steady_state(&self, x: f64) -> [f64; 2] {
        let y = self.dc_gain() * x;
        let z2 = self.b[2] * x - self.a[1] * y;
        let z1 = self.b[1] * x - self.a[0] * y + z2;
        [z1, z2]
    }

    fn run(&self, signal: &mut [f64], mut z: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [a1, a2] = self.a;
        for x in signal.iter_mut() {
            let input = *x;
            let y = b0 * input + z[0];
            z[0] = b1 * input - a1 * y + z[1];
            z[1] = b2 * input - a2 * y;
            *x = y;
        }
    }
}

/// Cascade of biquads implementing a digital Butterworth low-pass.
#[derive(Debug, Clone, PartialEq)]
pub struct LowpassSos {
    pub sections: Vec<Biquad>,
    pub cutoff_hz: f64,
    pub sample_rate: u32,
}

/// Bilinear-transform Butterworth design with pre-warped cutoff. `order`
/// must be even.
pub fn butterworth_lowpass_sos(order: usize, cutoff_hz: f64, sample_rate: u32) -> Result<LowpassSos> {
    if order == 0 || order % 2 != 0 {
        return Err(Error::Parameter(format!(
            "Butterworth order must be even and positive, got {order}"
        )));
    }
    let fs = sample_rate as f64;
    if !(cutoff_hz > 0.0) || fs <= 2.0 * cutoff_hz {
        return Err(Error::Parameter(format!(
            "cutoff {cutoff_hz} Hz needs a sample rate above {} Hz, got {sample_rate}",
            2.0 * cutoff_hz
        )));
    }
    let k = (PI * cutoff_hz / fs).tan();
    let k2 = k * k;
    let sections = (1..=order / 2)
        .map(|i| {
            // Conjugate pole pair i of the analog prototype has Q = 1 / (2 sin θ).
            let theta = (2 * i - 1) as f64 * PI / (2 * order) as f64;
            let q = 1.0 / (2.0 * theta.sin());
            let norm = 1.0 / (1.0 + k / q + k2);
            let b0 = k2 * norm;
            Biquad {
                b: [b0, 2.0 * b0, b0],
                a: [2.0 * (k2 - 1.0) * norm, (1.0 - k / q + k2) * norm],
            }
        })
        .collect();
    Ok(LowpassSos {
        sections,
        cutoff_hz,
        sample_rate,
    })
}

impl LowpassSos {
    /// Magnitude of one pass at `freq_hz`, from the closed-form response
    /// `1 / sqrt(1 + (tan(πf/fs) / tan(πfc/fs))^(2N))`.
    pub fn analytic_magnitude(&self, freq_hz: f64) -> f64 {
        let fs = self.sample_rate as f64;
        let ratio = (PI * freq_hz / fs).tan() / (PI * self.cutoff_hz / fs).tan();
        let order = 2 * self.sections.len();
        1.0 / (1.0 + ratio.powi(2 * order as i32)).sqrt()
    }

    fn pass(&self, signal: &mut [f64]) {
        let mut x0 = signal[0];
        for s in &self.sections {
            s.run(signal, s.steady_state(x0));
            x0 *= s.dc_gain();
        }
    }

    /// Zero-phase filtering with odd-symmetric edge extension and
    /// steady-state initial conditions.
    pub fn filtfilt(&self, signal: &[f64]) -> Vec<f64> {
        if signal.is_empty() {
            return Vec::new();
        }
        let n = signal.len();
        let pad = (3 * (2 * self.sections.len() + 1)).min(n - 1);
        let (first, last) = (signal[0], signal[n - 1]);
        let mut ext = Vec::with_capacity(n + 2 * pad);
        ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
        ext.extend_from_slice(signal);
        ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

        self.pass(&mut ext);
        ext.reverse();
        self.pass(&mut ext);
        ext.reverse();
        ext[pad..pad + n].to_vec()
    }
}

/// Low-pass copy of `buffer` used as the hidden anchor for `kind`.
pub fn make_anchor(buffer: &AudioBuffer, kind: StemKind) -> Result<AudioBuffer> {
    let sos = butterworth_lowpass_sos(ANCHOR_ORDER, anchor_cutoff_hz(kind), buffer.sample_rate())?;
    let channels = buffer.channels().iter().map(|c| sos.filtfilt(c)).collect();
    AudioBuffer::new(channels, buffer.sample_rate())
}
