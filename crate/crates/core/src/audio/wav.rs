//! RIFF/WAVE reading and writing for 16/24/32-bit PCM and 32-bit float.

use std::fs;
use std::path::Path;

use super::AudioBuffer;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 0x0001;
const FORMAT_FLOAT: u16 = 0x0003;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

/// Sample encodings accepted by [`save_wav`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SampleFormat {
    Int16,
    Int24,
    Int32,
    Float32,
}

impl SampleFormat {
    fn bits(self) -> u16 {
        match self {
            SampleFormat::Int16 => 16,
            SampleFormat::Int24 => 24,
            SampleFormat::Int32 | SampleFormat::Float32 => 32,
        }
    }

    fn tag(self) -> u16 {
        match self {
            SampleFormat::Float32 => FORMAT_FLOAT,
            _ => FORMAT_PCM,
        }
    }
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let out = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(out)
            }
            None => Err(Error::Parse {
                offset: self.pos as u64,
                message: format!(
                    "truncated {what}: needed {n} bytes, {} available",
                    self.bytes.len() - self.pos
                ),
            }),
        }
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        let b = self.take(2, what)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        let b = self.take(4, what)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

#[derive(Debug, Clone, Copy)]
struct FmtChunk {
    tag: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

pub fn load_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    read_wav(&bytes)
}

/// Decodes a complete WAV file held in memory.
pub fn read_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "RIFF id")? != b"RIFF" {
        return Err(Error::Format("missing RIFF signature".into()));
    }
    cur.u32("RIFF size")?;
    if cur.take(4, "WAVE id")? != b"WAVE" {
        return Err(Error::Format("RIFF form type is not WAVE".into()));
    }

    let mut fmt: Option<FmtChunk> = None;
    loop {
        if cur.pos == bytes.len() {
            return Err(Error::Parse {
                offset: cur.pos as u64,
                message: "reached end of file without a data chunk".into(),
            });
        }
        let id = cur.take(4, "chunk id")?;
        let size = cur.u32("chunk size")? as usize;
        let body_offset = cur.pos;
        match id {
            b"fmt " => {
                let body = cur.take(size, "fmt chunk")?;
                fmt = Some(parse_fmt(body, body_offset)?);
            }
            b"data" => {
                let fmt = fmt.ok_or_else(|| Error::Format("data chunk precedes fmt chunk".into()))?;
                let body = cur.take(size, "data chunk")?;
                return decode_samples(fmt, body, body_offset);
            }
            _ => {
                cur.take(size, "chunk body")?;
            }
        }
        if size % 2 == 1 && cur.pos < bytes.len() {
            cur.pos += 1;
        }
    }
}

fn parse_fmt(body: &[u8], offset: usize) -> Result<FmtChunk> {
    let mut cur = Cursor { bytes: body, pos: 0 };
    let short = |e: Error| match e {
        Error::Parse { offset: o, message } => Error::Parse {
            offset: o + offset as u64,
            message,
        },
        other => other,
    };
    let mut tag = cur.u16("format tag").map_err(short)?;
    let channels = cur.u16("channel count").map_err(short)?;
    let sample_rate = cur.u32("sample rate").map_err(short)?;
    cur.u32("byte rate").map_err(short)?;
    cur.u16("block align").map_err(short)?;
    let bits = cur.u16("bits per sample").map_err(short)?;
    if tag == FORMAT_EXTENSIBLE {
        let ext = cur.u16("extension size").map_err(short)?;
        if ext < 22 {
            return Err(Error::Format(format!(
                "WAVE_FORMAT_EXTENSIBLE extension is {ext} bytes, expected 22"
            )));
        }
        cur.u16("valid bits").map_err(short)?;
        cur.u32("channel mask").map_err(short)?;
        tag = cur.u16("sub-format").map_err(short)?;
    }

    if !(1..=2).contains(&channels) {
        return Err(Error::Format(format!(
            "{channels} channels declared; only mono and stereo are supported"
        )));
    }
    if sample_rate == 0 {
        return Err(Error::Format("sample rate of 0 Hz".into()));
    }
    match (tag, bits) {
        (FORMAT_PCM, 16 | 24 | 32) | (FORMAT_FLOAT, 32) => {}
        (FORMAT_PCM, b) => {
            return Err(Error::Format(format!("unsupported PCM bit depth {b}")));
        }
        (FORMAT_FLOAT, b) => {
            return Err(Error::Format(format!("unsupported float bit depth {b}")));
        }
        (t, _) => return Err(Error::Format(format!("unsupported codec tag {t:#06x}"))),
    }
    Ok(FmtChunk {
        tag,
        channels,
        sample_rate,
        bits,
    })
}

fn decode_samples(fmt: FmtChunk, data: &[u8], offset: usize) -> Result<AudioBuffer> {
    let width = fmt.bits as usize / 8;
    let nch = fmt.channels as usize;
    let frame = width * nch;
    if data.len() % frame != 0 {
        let whole = data.len() / frame * frame;
        return Err(Error::Parse {
            offset: (offset + whole) as u64,
            message: format!(
                "data chunk ends {} bytes into a {frame}-byte sample frame",
                data.len() - whole
            ),
        });
    }
    let frames = data.len() / frame;
    let mut channels = vec![Vec::with_capacity(frames); nch];
    let decode: fn(&[u8]) -> f64 = match (fmt.tag, fmt.bits) {
        (FORMAT_FLOAT, _) => |b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64,
        (_, 16) => |b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0,
        (_, 24) => |b| {
            let v = i32::from_le_bytes([0, b[0], b[1], b[2]]) >> 8;
            v as f64 / 8_388_608.0
        },
        _ => |b| i32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64 / 2_147_483_648.0,
    };
    for chunk in data.chunks_exact(frame) {
        for (ch, sample) in channels.iter_mut().zip(chunk.chunks_exact(width)) {
            ch.push(decode(sample));
        }
    }
    AudioBuffer::new(channels, fmt.sample_rate)
}

pub fn save_wav(path: impl AsRef<Path>, buffer: &AudioBuffer, format: SampleFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = write_wav(buffer, format)?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Encodes `buffer`. Integer formats scale by `2^(bits-1)` and clip to the
/// representable range.
pub fn write_wav(buffer: &AudioBuffer, format: SampleFormat) -> Result<Vec<u8>> {
    let nch = buffer.num_channels();
    if !(1..=2).contains(&nch) {
        return Err(Error::Format(format!(
            "{nch} channels; only mono and stereo are supported"
        )));
    }
    let bits = format.bits();
    let width = bits as usize / 8;
    let block = (width * nch) as u16;
    let data_len = buffer.len() * width * nch;
    let data_len_u32 = u32::try_from(data_len)
        .ok()
        .filter(|&n| n <= u32::MAX - 36)
        .ok_or_else(|| Error::Format("audio too long for a RIFF container".into()))?;

    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len_u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&format.tag().to_le_bytes());
    out.extend_from_slice(&(nch as u16).to_le_bytes());
    out.extend_from_slice(&buffer.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buffer.sample_rate() * block as u32).to_le_bytes());
    out.extend_from_slice(&block.to_le_bytes());
    out.extend_from_slice(&bits.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len_u32.to_le_bytes());

    for i in 0..buffer.len() {
        for ch in buffer.channels() {
            let x = ch[i];
            match format {
                SampleFormat::Float32 => out.extend_from_slice(&(x as f32).to_le_bytes()),
                SampleFormat::Int16 => {
                    out.extend_from_slice(&(quantize(x, 16) as i16).to_le_bytes())
                }
                SampleFormat::Int24 => out.extend_from_slice(&quantize(x, 24).to_le_bytes()[..3]),
                SampleFormat::Int32 => out.extend_from_slice(&quantize(x, 32).to_le_bytes()),
            }
        }
    }
    Ok(out)
}

fn quantize(x: f64, bits: u32) -> i32 {
    let scale = (1u64 << (bits - 1)) as f64;
    (x * scale).round().clamp(-scale, scale - 1.0) as i32
}
