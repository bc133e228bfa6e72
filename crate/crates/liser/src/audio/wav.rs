//! Minimal RIFF/WAVE codec: reads 16-bit PCM and 32-bit IEEE float, mono or
//! stereo (averaged to mono), writes 16-bit PCM mono.

use super::{AudioError, Waveform};
use std::io::Write;
use std::path::Path;

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, chunk: &str) -> Result<&'a [u8], AudioError> {
        if self.pos + n > self.bytes.len() {
            return Err(AudioError::Malformed {
                chunk: chunk.to_string(),
                detail: format!("needs {n} bytes at offset {}, file has {}", self.pos, self.bytes.len()),
            });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u16(&mut self, chunk: &str) -> Result<u16, AudioError> {
        let b = self.take(2, chunk)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self, chunk: &str) -> Result<u32, AudioError> {
        let b = self.take(4, chunk)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }
}

struct Format {
    code: u16,
    channels: u16,
    sample_rate: u32,
    bits: u16,
}

/// Decode a WAV byte stream into a mono waveform in [-1, 1].
pub fn decode_wav(bytes: &[u8]) -> Result<Waveform, AudioError> {
    let mut cur = Cursor { bytes, pos: 0 };
    if cur.take(4, "RIFF")? != b"RIFF" {
        return Err(AudioError::Malformed { chunk: "RIFF".into(), detail: "missing RIFF magic".into() });
    }
    let _riff_size = cur.u32("RIFF")?;
    if cur.take(4, "WAVE")? != b"WAVE" {
        return Err(AudioError::Malformed { chunk: "WAVE".into(), detail: "missing WAVE form type".into() });
    }

    let mut format: Option<Format> = None;
    let mut samples: Option<Vec<f64>> = None;
    while cur.pos + 8 <= bytes.len() {
        let id = cur.take(4, "chunk header")?;
        let id_str = String::from_utf8_lossy(id).to_string();
        let size = cur.u32(&id_str)? as usize;
        match id {
            b"fmt " => {
                let body_start = cur.pos;
                let code = cur.u16("fmt ")?;
                let channels = cur.u16("fmt ")?;
                let sample_rate = cur.u32("fmt ")?;
                let _byte_rate = cur.u32("fmt ")?;
                let _block_align = cur.u16("fmt ")?;
                let bits = cur.u16("fmt ")?;
                cur.pos = body_start + size;
                format = Some(Format { code, channels, sample_rate, bits });
            }
            b"data" => {
                let fmt = format.as_ref().ok_or_else(|| AudioError::Malformed {
                    chunk: "data".into(),
                    detail: "data chunk before fmt chunk".into(),
                })?;
                let raw = cur.take(size, "data")?;
                samples = Some(decode_samples(raw, fmt)?);
            }
            _ => {
                cur.take(size, &id_str)?;
            }
        }
        if size % 2 == 1 && cur.pos < bytes.len() {
            cur.pos += 1; // chunks are word-aligned
        }
    }

    let fmt = format.ok_or_else(|| AudioError::Malformed { chunk: "fmt ".into(), detail: "chunk missing".into() })?;
    let samples =
        samples.ok_or_else(|| AudioError::Malformed { chunk: "data".into(), detail: "chunk missing".into() })?;
    Waveform::new(samples, fmt.sample_rate)
}

fn decode_samples(raw: &[u8], fmt: &Format) -> Result<Vec<f64>, AudioError> {
    if fmt.channels == 0 || fmt.channels > 2 {
        return Err(AudioError::Malformed {
            chunk: "fmt ".into(),
            detail: format!("unsupported channel count {}", fmt.channels),
        });
    }
    let ch = fmt.channels as usize;
    let interleaved: Vec<f64> = match (fmt.code, fmt.bits) {
        (1, 16) => {
            if raw.len() % 2 != 0 {
                return Err(AudioError::Malformed { chunk: "data".into(), detail: "odd pcm16 byte count".into() });
            }
            raw.chunks_exact(2).map(|b| i16::from_le_bytes([b[0], b[1]]) as f64 / 32768.0).collect()
        }
        (3, 32) => {
            if raw.len() % 4 != 0 {
                return Err(AudioError::Malformed { chunk: "data".into(), detail: "ragged float32 byte count".into() });
            }
            raw.chunks_exact(4)
                .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
                .collect()
        }
        (code, bits) => {
            return Err(AudioError::Malformed {
                chunk: "fmt ".into(),
                detail: format!("unsupported codec: format {code}, {bits}-bit"),
            })
        }
    };
    if interleaved.len() % ch != 0 {
        return Err(AudioError::Malformed {
            chunk: "data".into(),
            detail: format!("{} samples do not split into {ch} channels", interleaved.len()),
        });
    }
    Ok(if ch == 1 {
        interleaved
    } else {
        interleaved.chunks_exact(2).map(|p| (p[0] + p[1]) / 2.0).collect()
    })
}

/// Encode a mono waveform as 16-bit PCM WAV bytes.
pub fn encode_wav_pcm16(w: &Waveform) -> Vec<u8> {
    let data_len = w.samples().len() * 2;
    let mut out = Vec::with_capacity(44 + data_len);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&((36 + data_len) as u32).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&w.sample_rate().to_le_bytes());
    out.extend_from_slice(&(w.sample_rate() * 2).to_le_bytes());
    out.extend_from_slice(&2u16.to_le_bytes());
    out.extend_from_slice(&16u16.to_le_bytes());
    out.extend_from_slice(b"data");
    out.extend_from_slice(&(data_len as u32).to_le_bytes());
    for &s in w.samples() {
        let v = (s * 32767.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&v.to_le_bytes());
    }
    out
}

pub fn read_wav(path: &Path) -> Result<Waveform, AudioError> {
    let bytes = std::fs::read(path)
        .map_err(|e| AudioError::Io { path: path.display().to_string(), detail: e.to_string() })?;
    decode_wav(&bytes)
}

pub fn write_wav(path: &Path, w: &Waveform) -> Result<(), AudioError> {
    let bytes = encode_wav_pcm16(w);
    let mut f = std::fs::File::create(path)
        .map_err(|e| AudioError::Io { path: path.display().to_string(), detail: e.to_string() })?;
    f.write_all(&bytes)
        .map_err(|e| AudioError::Io { path: path.display().to_string(), detail: e.to_string() })?;
    Ok(())
}
