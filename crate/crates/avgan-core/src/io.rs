//! Binary artifact formats.
//!
//! Three dependency-free formats cover everything the pipeline touches:
//!
//! * `AVT1` — raw tensor dump (magic, dtype byte, rank, extents, LE scalars).
//! * P6 PPM — video frames, maxval 255, bit-exact and viewable anywhere.
//! * RIFF WAV — PCM 16-bit input audio (stereo averaged to mono).
//!
//! Pixels map to model space via `u8 / 127.5 - 1` and back with
//! round-to-nearest; the round trip is exact on every byte value.

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use crate::Scalar;

const TENSOR_MAGIC: &[u8; 4] = b"AVT1";

/// Serialize a tensor: magic, dtype byte, rank byte, u32 extents, elements.
/// All integers and scalars little-endian.
pub fn tensor_to_bytes<T: Scalar>(t: &Tensor<T>) -> Vec<u8> {
    let mut out = Vec::with_capacity(6 + 4 * t.rank() + T::BYTES * t.numel());
    out.extend_from_slice(TENSOR_MAGIC);
    out.push(T::DTYPE);
    out.push(t.rank() as u8);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u32).to_le_bytes());
    }
    for &x in t.data() {
        x.write_le(&mut out);
    }
    out
}

pub fn tensor_from_bytes<T: Scalar>(bytes: &[u8]) -> Result<Tensor<T>> {
    let fail = |msg: &str| Error::Data(format!("tensor decode: {msg}"));
    if bytes.len() < 6 || &bytes[..4] != TENSOR_MAGIC {
        return Err(fail("bad magic"));
    }
    if bytes[4] != T::DTYPE {
        return Err(fail(&format!(
            "dtype byte {} does not match requested scalar (want {})",
            bytes[4],
            T::DTYPE
        )));
    }
    let rank = bytes[5] as usize;
    let mut off = 6;
    let mut shape = Vec::with_capacity(rank);
    for _ in 0..rank {
        let end = off + 4;
        if end > bytes.len() {
            return Err(fail("truncated extents"));
        }
        shape.push(u32::from_le_bytes(bytes[off..end].try_into().unwrap()) as usize);
        off = end;
    }
    let numel: usize = shape.iter().product();
    if bytes.len() - off != numel * T::BYTES {
        return Err(fail("payload length does not match extents"));
    }
    let mut data = Vec::with_capacity(numel);
    for i in 0..numel {
        data.push(T::read_le(&bytes[off + i * T::BYTES..]));
    }
    Tensor::new(&shape, data)
}

pub fn write_tensor<T: Scalar>(path: impl AsRef<Path>, t: &Tensor<T>) -> Result<()> {
    std::fs::write(path, tensor_to_bytes(t))?;
    Ok(())
}

pub fn read_tensor<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    tensor_from_bytes(&std::fs::read(path)?)
}

/// Byte → model space, the inverse of [`unit_to_pixel`] up to quantization.
pub fn pixel_to_unit(b: u8) -> f64 {
    b as f64 / 127.5 - 1.0
}

/// Model space → byte with round-to-nearest; values outside [−1,1] clamp.
pub fn unit_to_pixel(x: f64) -> u8 {
    ((x + 1.0) * 127.5).round().clamp(0.0, 255.0) as u8
}

/// Write a `[3, H, W]` image in [−1,1] as binary PPM (P6, maxval 255).
pub fn write_ppm<T: Scalar>(path: impl AsRef<Path>, image: &Tensor<T>) -> Result<()> {
    let s = image.shape();
    if image.rank() != 3 || s[0] != 3 {
        return Err(Error::Data(format!("write_ppm wants [3,H,W], got {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut out = Vec::with_capacity(20 + 3 * h * w);
    out.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    let d = image.data();
    let plane = h * w;
    for p in 0..plane {
        for c in 0..3 {
            out.push(unit_to_pixel(d[c * plane + p].to_f64()));
        }
    }
    let mut f = std::fs::File::create(path)?;
    f.write_all(&out)?;
    Ok(())
}

/// Read a binary PPM into `[3, H, W]` in [−1,1]. Comments and arbitrary
/// whitespace in the header are accepted; maxval must be 255.
pub fn read_ppm<T: Scalar>(path: impl AsRef<Path>) -> Result<Tensor<T>> {
    let bytes = std::fs::read(&path)?;
    let fail = |msg: &str| Error::Data(format!("ppm decode: {msg}"));
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        return Err(fail("not a P6 file"));
    }
    // Header is ASCII tokens separated by whitespace; '#' starts a comment.
    let mut pos = 2usize;
    let mut next_token = |bytes: &[u8]| -> Result<usize> {
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
                continue;
            }
            break;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        let tok = std::str::from_utf8(&bytes[start..pos])
            .map_err(|_| Error::Data("ppm decode: non-ascii header".into()))?;
        tok.parse::<usize>()
            .map_err(|_| Error::Data(format!("ppm decode: bad header token {tok:?}")))
    };
    let w = next_token(&bytes)?;
    let h = next_token(&bytes)?;
    let maxval = next_token(&bytes)?;
    if maxval != 255 {
        return Err(fail("maxval must be 255"));
    }
    // Exactly one whitespace byte separates the header from pixel data.
    pos += 1;
    let need = 3 * w * h;
    if bytes.len() - pos < need {
        return Err(fail("truncated pixel data"));
    }
    let plane = w * h;
    let mut data = vec![T::zero(); need];
    for p in 0..plane {
        for c in 0..3 {
            data[c * plane + p] = T::of(pixel_to_unit(bytes[pos + 3 * p + c]));
        }
    }
    Tensor::new(&[3, h, w], data)
}

/// Read a RIFF/WAVE file holding 16-bit PCM. Stereo (or any channel count)
/// is averaged down to mono; samples scale to [−1,1] by 1/32768.
pub fn read_wav(path: impl AsRef<Path>) -> Result<(Vec<f64>, u32)> {
    let mut bytes = Vec::new();
    std::fs::File::open(&path)?.read_to_end(&mut bytes)?;
    let fail = |msg: &str| Error::Audio(format!("wav decode: {msg}"));
    if bytes.len() < 12 || &bytes[..4] != b"RIFF" || &bytes[8..12] != b"WAVE" {
        return Err(fail("not a RIFF/WAVE file"));
    }
    let u16_at = |off: usize| u16::from_le_bytes(bytes[off..off + 2].try_into().unwrap());
    let u32_at = |off: usize| u32::from_le_bytes(bytes[off..off + 4].try_into().unwrap());

    let mut pos = 12usize;
    let mut fmt: Option<(u16, u32)> = None; // (channels, sample_rate)
    let mut data: Option<(usize, usize)> = None; // (offset, len)
    while pos + 8 <= bytes.len() {
        let id = &bytes[pos..pos + 4];
        let size = u32_at(pos + 4) as usize;
        let body = pos + 8;
        if body + size > bytes.len() {
            return Err(fail("chunk overruns file"));
        }
        match id {
            b"fmt " => {
                if size < 16 {
                    return Err(fail("fmt chunk too short"));
                }
                let audio_format = u16_at(body);
                let channels = u16_at(body + 2);
                let sample_rate = u32_at(body + 4);
                let bits = u16_at(body + 14);
                if audio_format != 1 || bits != 16 {
                    return Err(fail(&format!(
                        "unsupported encoding (format {audio_format}, {bits}-bit); only 16-bit PCM"
                    )));
                }
                if channels == 0 {
                    return Err(fail("zero channels"));
                }
                fmt = Some((channels, sample_rate));
            }
            b"data" => data = Some((body, size)),
            _ => {}
        }
        pos = body + size + (size & 1); // RIFF chunks are word-aligned
    }
    let (channels, sample_rate) = fmt.ok_or_else(|| fail("missing fmt chunk"))?;
    let (off, len) = data.ok_or_else(|| fail("missing data chunk"))?;
    let frame_bytes = 2 * channels as usize;
    let frames = len / frame_bytes;
    if frames == 0 {
        return Err(fail("zero-length audio"));
    }
    let mut samples = Vec::with_capacity(frames);
    for n in 0..frames {
        let mut acc = 0.0f64;
        for c in 0..channels as usize {
            let s = i16::from_le_bytes(
                bytes[off + n * frame_bytes + 2 * c..off + n * frame_bytes + 2 * c + 2]
                    .try_into()
                    .unwrap(),
            );
            acc += s as f64;
        }
        samples.push(acc / channels as f64 / 32768.0);
    }
    Ok((samples, sample_rate))
}

/// Write mono 16-bit PCM. Values clamp to the representable range.
pub fn write_wav(path: impl AsRef<Path>, samples: &[f64], sample_rate: u32) -> Result<()> {
    let data_len = 2 * samples.len() as u32;
    let mut out = Vec::with_capacity(44 + data_len as usize);
    out.extend_from_slice(b"RIFF");
    out.extend_from_slice(&(36 + data_len).to_le_bytes());
    out.extend_from_slice(b"WAVE");
    out.extend_from_slice(b"fmt ");
    out.extend_from_slice(&16u32.to_le_bytes());
    out.extend_from_slice(&1u16.to_le_bytes()); // PCM
    out.extend_from_slice(&1u16.to_le_bytes()); // mono
    out.extend_from_slice(&sample_rate.to_le_bytes());
    out.extend_from_slice(&(2 * sample_rate).to_le_bytes()); // byte rate
    out.extend_from_slice(&2u16.to_le_bytes()); // block align
    out.extend_from_slice(&16u16.to_le_bytes()); // bits per sample
    out.extend_from_slice(b"data");
    out.extend_from_slice(&data_len.to_le_bytes());
    for &x in samples {
        let q = (x * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        out.extend_from_slice(&q.to_le_bytes());
    }
    std::fs::write(path, out)?;
    Ok(())
}
