//! Audio buffers and the pre-processing applied before scoring: WAV I/O,
//! fragment extraction, low-pass anchors and mono downmix.

mod anchor;
mod wav;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use anchor::{anchor_cutoff_hz, butterworth_lowpass_sos, make_anchor, Biquad, LowpassSos};
pub use wav::{load_wav, read_wav, save_wav, write_wav, SampleFormat};

/// Multichannel audio, one `Vec` per channel, amplitudes in full-scale units.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioBuffer {
    channels: Vec<Vec<f64>>,
    sample_rate: u32,
}

impl AudioBuffer {
    pub fn new(channels: Vec<Vec<f64>>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Parameter("sample rate must be positive".into()));
        }
        if channels.is_empty() {
            return Err(Error::Parameter("buffer needs at least one channel".into()));
        }
        let len = channels[0].len();
        if let Some(bad) = channels.iter().position(|c| c.len() != len) {
            return Err(Error::Parameter(format!(
                "channel {bad} has {} samples, channel 0 has {len}",
                channels[bad].len()
            )));
        }
        Ok(Self {
            channels,
            sample_rate,
        })
    }

    pub fn mono(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        Self::new(vec![samples], sample_rate)
    }

    pub fn channels(&self) -> &[Vec<f64>] {
        &self.channels
    }

    pub fn channel(&self, index: usize) -> &[f64] {
        &self.channels[index]
    }

    pub fn into_channels(self) -> Vec<Vec<f64>> {
        self.channels
    }

    pub fn num_channels(&self) -> usize {
        self.channels.len()
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.channels[0].len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn duration_s(&self) -> f64 {
        self.len() as f64 / self.sample_rate as f64
    }

    /// Applies `f` to every sample of every channel.
    pub fn map(&self, f: impl Fn(f64) -> f64) -> Self {
        Self {
            channels: self
                .channels
                .iter()
                .map(|c| c.iter().map(|&x| f(x)).collect())
                .collect(),
            sample_rate: self.sample_rate,
        }
    }

    pub(crate) fn ensure_nonempty(&self) -> Result<()> {
        if self.is_empty() {
            Err(Error::Parameter("empty audio buffer".into()))
        } else {
            Ok(())
        }
    }
}

/// Checks that every buffer shares the first one's sample rate.
pub fn ensure_same_rate<'a>(buffers: impl IntoIterator<Item = &'a AudioBuffer>) -> Result<()> {
    let mut expected = None;
    for b in buffers {
        match expected {
            None => expected = Some(b.sample_rate()),
            Some(rate) if rate != b.sample_rate() => {
                return Err(Error::SampleRateMismatch {
                    expected: rate,
                    found: b.sample_rate(),
                })
            }
            Some(_) => {}
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum StemKind {
    Vocals,
    Drums,
    Bass,
    Other,
}

impl StemKind {
    pub const ALL: [StemKind; 4] = [
        StemKind::Vocals,
        StemKind::Drums,
        StemKind::Bass,
        StemKind::Other,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            StemKind::Vocals => "vocals",
            StemKind::Drums => "drums",
            StemKind::Bass => "bass",
            StemKind::Other => "other",
        }
    }

    /// Capitalized label used in report tables.
    pub fn label(self) -> &'static str {
        match self {
            StemKind::Vocals => "Vocals",
            StemKind::Drums => "Drums",
            StemKind::Bass => "Bass",
            StemKind::Other => "Other",
        }
    }
}

impl fmt::Display for StemKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for StemKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "vocals" => Ok(StemKind::Vocals),
            "drums" => Ok(StemKind::Drums),
            "bass" => Ok(StemKind::Bass),
            "other" => Ok(StemKind::Other),
            _ => Err(Error::Parameter(format!("unknown stem {s:?}"))),
        }
    }
}

impl TryFrom<String> for StemKind {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<StemKind> for String {
    fn from(s: StemKind) -> String {
        s.as_str().to_owned()
    }
}

/// Cuts `[start_s, start_s + duration_s)` out of `buffer`, truncating at the
/// end of the input instead of padding.
pub fn extract_fragment(buffer: &AudioBuffer, start_s: f64, duration_s: f64) -> Result<AudioBuffer> {
    if !start_s.is_finite() || start_s < 0.0 {
        return Err(Error::Range(format!("fragment start {start_s} s is negative")));
    }
    if !duration_s.is_finite() || duration_s <= 0.0 {
        return Err(Error::Parameter(format!(
            "fragment duration {duration_s} s must be positive"
        )));
    }
    let rate = buffer.sample_rate() as f64;
    let start = (start_s * rate).round() as usize;
    if start >= buffer.len() {
        return Err(Error::Range(format!(
            "fragment start sample {start} is beyond the buffer end ({} samples)",
            buffer.len()
        )));
    }
    let wanted = (duration_s * rate).round() as usize;
    let end = start.saturating_add(wanted).min(buffer.len());
    let samples = end - start;
    if samples < buffer.sample_rate() as usize {
        return Err(Error::ShortFragment {
            samples,
            sample_rate: buffer.sample_rate(),
        });
    }
    let channels = buffer
        .channels()
        .iter()
        .map(|c| c[start..end].to_vec())
        .collect();
    AudioBuffer::new(channels, buffer.sample_rate())
}

/// Arithmetic mean of the channels; mono input comes back unchanged.
pub fn downmix_mono(buffer: &AudioBuffer) -> Result<AudioBuffer> {
    buffer.ensure_nonempty()?;
    match buffer.num_channels() {
        1 => Ok(buffer.clone()),
        2 => {
            let (l, r) = (buffer.channel(0), buffer.channel(1));
            let mono = l.iter().zip(r).map(|(&a, &b)| (a + b) / 2.0).collect();
            AudioBuffer::mono(mono, buffer.sample_rate())
        }
        n => Err(Error::Parameter(format!(
            "downmix supports 1 or 2 channels, got {n}"
        ))),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp(seconds: usize, rate: u32) -> AudioBuffer {
        let n = seconds * rate as usize;
        AudioBuffer::new(
            vec![
                (0..n).map(|i| i as f64).collect(),
                (0..n).map(|i| -(i as f64)).collect(),
            ],
            rate,
        )
        .unwrap()
    }

    #[test]
    fn rejects_ragged_channels() {
        assert!(AudioBuffer::new(vec![vec![0.0; 3], vec![0.0; 2]], 8000).is_err());
        assert!(AudioBuffer::new(vec![vec![0.0; 3]], 0).is_err());
    }

    #[test]
    fn fragment_starts_at_requested_sample() {
        let rate = 100;
        let b = ramp(30, rate);
        let f = extract_fragment(&b, 10.0, 10.0).unwrap();
        assert_eq!(f.len(), 10 * rate as usize);
        assert_eq!(f.channel(0)[0], (10 * rate) as f64);
        assert_eq!(f.channel(1)[0], -((10 * rate) as f64));
    }

    #[test]
    fn full_length_fragment_is_identity() {
        let b = ramp(5, 100);
        let f = extract_fragment(&b, 0.0, b.duration_s()).unwrap();
        assert_eq!(f, b);
    }

    #[test]
    fn fragment_truncates_at_end() {
        let b = ramp(15, 100);
        let f = extract_fragment(&b, 10.0, 10.0).unwrap();
        assert_eq!(f.len(), 500);
        assert_eq!(*f.channel(0).last().unwrap(), 1499.0);
    }

    #[test]
    fn fragment_errors() {
        let b = ramp(15, 100);
        assert!(matches!(extract_fragment(&b, 15.0, 1.0), Err(Error::Range(_))));
        assert!(matches!(extract_fragment(&b, -1.0, 1.0), Err(Error::Range(_))));
        assert!(matches!(
            extract_fragment(&b, 14.5, 10.0),
            Err(Error::ShortFragment { samples: 50, .. })
        ));
    }

    #[test]
    fn downmix_means_channels() {
        let b = AudioBuffer::new(vec![vec![1.0, 1.0], vec![-1.0, 1.0]], 8000).unwrap();
        assert_eq!(downmix_mono(&b).unwrap().channel(0), &[0.0, 1.0]);

        let m = AudioBuffer::mono(vec![0.25, -0.5], 8000).unwrap();
        assert_eq!(downmix_mono(&m).unwrap(), m);

        let same = AudioBuffer::new(vec![vec![0.3, -0.7], vec![0.3, -0.7]], 8000).unwrap();
        assert_eq!(downmix_mono(&same).unwrap().channel(0), same.channel(0));
    }

    #[test]
    fn downmix_rejects_empty() {
        let b = AudioBuffer::mono(vec![], 8000).unwrap();
        assert!(downmix_mono(&b).is_err());
    }

    #[test]
    fn stem_parse_is_case_insensitive() {
        assert_eq!("VOCALS".parse::<StemKind>().unwrap(), StemKind::Vocals);
        assert_eq!(" Bass ".parse::<StemKind>().unwrap(), StemKind::Bass);
        assert!("guitar".parse::<StemKind>().is_err());
    }

    #[test]
    fn rate_mismatch_is_reported() {
        let a = AudioBuffer::mono(vec![0.0], 8000).unwrap();
        let b = AudioBuffer::mono(vec![0.0], 16000).unwrap();
        assert!(matches!(
            ensure_same_rate([&a, &b]),
            Err(Error::SampleRateMismatch {
                expected: 8000,
                found: 16000
            })
        ));
    }
}
