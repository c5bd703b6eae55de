//! Minimal RIFF/WAVE codec: PCM 16-bit and IEEE float 32-bit, mono or
//! stereo. Decoding always yields mono.

use std::fs;
use std::path::Path;

use super::AudioBuffer;
use crate::error::{Error, Result};

const FORMAT_PCM: u16 = 1;
const FORMAT_IEEE_FLOAT: u16 = 3;
const FORMAT_EXTENSIBLE: u16 = 0xFFFE;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum WavSampleFormat {
    Pcm16,
    Float32,
}

impl WavSampleFormat {
    fn bytes(self) -> usize {
        match self {
            WavSampleFormat::Pcm16 => 2,
            WavSampleFormat::Float32 => 4,
        }
    }
}

/// Header-level description of a WAV file.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WavInfo {
    pub sample_rate: u32,
    pub channels: u16,
    pub format: WavSampleFormat,
    /// Sample frames (one per channel group).
    pub frames: usize,
}

struct Parsed<'a> {
    info: WavInfo,
    data: &'a [u8],
}

fn u16_at(b: &[u8], at: usize) -> u16 {
    u16::from_le_bytes([b[at], b[at + 1]])
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes([b[at], b[at + 1], b[at + 2], b[at + 3]])
}

fn parse(bytes: &[u8]) -> Result<Parsed<'_>> {
    if bytes.len() < 12 || &bytes[0..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(Error::Format("not a RIFF/WAVE file".into()));
    }
    let mut pos = 12;
    let mut fmt: Option<(WavSampleFormat, u16, u32, u16)> = None;
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(bytes, pos + 4) as usize;
        let body = pos + 8;
        if id == b"fmt " {
            if size < 16 || body + size > bytes.len() {
                return Err(Error::CorruptFile("truncated fmt chunk".into()));
            }
            let mut tag = u16_at(bytes, body);
            let channels = u16_at(bytes, body + 2);
            let rate = u32_at(bytes, body + 4);
            let block_align = u16_at(bytes, body + 12);
            let bits = u16_at(bytes, body + 14);
            if tag == FORMAT_EXTENSIBLE {
                if size < 40 {
                    return Err(Error::CorruptFile("truncated extensible fmt chunk".into()));
                }
                // first two bytes of the sub-format GUID carry the real tag
                tag = u16_at(bytes, body + 24);
            }
            let format = match (tag, bits) {
                (FORMAT_PCM, 16) => WavSampleFormat::Pcm16,
                (FORMAT_IEEE_FLOAT, 32) => WavSampleFormat::Float32,
                _ => {
                    return Err(Error::Format(format!(
                        "format tag {tag} with {bits} bits per sample"
                    )))
                }
            };
            if channels == 0 || channels > 2 {
                return Err(Error::Format(format!("{channels} channels")));
            }
            if rate == 0 {
                return Err(Error::CorruptFile("zero sample rate".into()));
            }
            if block_align as usize != format.bytes() * channels as usize {
                return Err(Error::CorruptFile(format!("block align {block_align}")));
            }
            fmt = Some((format, channels, rate, block_align));
        } else if id == b"data" {
            let (format, channels, sample_rate, block_align) =
                fmt.ok_or_else(|| Error::CorruptFile("data chunk before fmt chunk".into()))?;
            let available = bytes.len() - body;
            if size > available {
                return Err(Error::CorruptFile(format!(
                    "data chunk declares {size} bytes, {available} present"
                )));
            }
            let frames = size / block_align as usize;
            return Ok(Parsed {
                info: WavInfo {
                    sample_rate,
                    channels,
                    format,
                    frames,
                },
                data: &bytes[body..body + frames * block_align as usize],
            });
        }
        // chunks are word aligned
        pos = body + size + (size & 1);
    }
    Err(Error::CorruptFile("no data chunk".into()))
}

/// Decode an in-memory WAV file to mono.
pub fn decode_wav(bytes: &[u8]) -> Result<AudioBuffer> {
    let Parsed { info, data } = parse(bytes)?;
    if info.frames == 0 {
        return Err(Error::EmptyAudio);
    }
    let channels = info.channels as usize;
    let width = info.format.bytes();
    let sample = |i: usize| -> f32 {
        let at = i * width;
        match info.format {
            WavSampleFormat::Pcm16 => i16::from_le_bytes([data[at], data[at + 1]]) as f32 / 32768.0,
            WavSampleFormat::Float32 => {
                f32::from_le_bytes([data[at], data[at + 1], data[at + 2], data[at + 3]])
            }
        }
    };
    let mut samples = Vec::with_capacity(info.frames);
    for frame in 0..info.frames {
        let base = frame * channels;
        let v = if channels == 1 {
            sample(base)
        } else {
            0.5 * (sample(base) + sample(base + 1))
        };
        if !v.is_finite() {
            return Err(Error::CorruptFile(format!("non-finite sample at frame {frame}")));
        }
        samples.push(v);
    }
    AudioBuffer::new(samples, info.sample_rate)
}

/// Read and decode a WAV file to mono, preserving its sample rate.
pub fn read_wav(path: impl AsRef<Path>) -> Result<AudioBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_wav(&bytes)
}

/// Header information only. Still validates that the data chunk is complete.
pub fn probe_wav(path: impl AsRef<Path>) -> Result<WavInfo> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(parse(&bytes)?.info)
}

/// Encode mono audio. PCM16 quantizes with rounding and saturation.
pub fn encode_wav(buf: &AudioBuffer, format: WavSampleFormat) -> Vec<u8> {
    let width = format.bytes();
    let data_len = buf.len() * width;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    let tag = match format {
        WavSampleFormat::Pcm16 => FORMAT_PCM,
        WavSampleFormat::Float32 => FORMAT_IEEE_FLOAT,
    };
    out.extend_from_slice(&tag.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes());
    out.extend_from_slice(&buf.sample_rate().to_le_bytes());
    out.extend_from_slice(&(buf.sample_rate() * width as u32).to_le_bytes());
    out.extend_from_slice(&(width as u16).to_le_bytes());
    out.extend_from_slice(&((width * 8) as u16).to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in buf.samples() {
        match format {
            WavSampleFormat::Pcm16 => {
                let q = (s as f64 * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
                out.extend_from_slice(&q.to_le_bytes());
            }
            WavSampleFormat::Float32 => out.extend_from_slice(&s.to_le_bytes()),
        }
    }
    out
}

pub fn write_wav(path: impl AsRef<Path>, buf: &AudioBuffer, format: WavSampleFormat) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode_wav(buf, format)).map_err(|e| Error::io(path, e))
}
