//! Binary and text file formats.
//!
//! All multi-byte fields are little-endian.
//!
//! - `I2IM` measurements: magic, u32 version (1), u32 P, f64 alpha, u64 seed,
//!   then P² f64 magnitudes in row-major order.
//! - `IGRD` images: magic, u32 N, u32 P, then P² f64 values.
//! - `I2DN` denoiser models: magic, u32 version, u32 input channels, hidden
//!   channels, layers, kernel size, embedding size, trained steps, u32
//!   parameter count, then the f64 parameters.
//! - 8-bit binary PGM (P5) of the N×N window, values scaled by 255.

use std::fs;
use std::io::Write;
use std::path::Path;

use phaseret_core::denoiser::{DenoiserArch, DenoiserModel};
use phaseret_core::{ImageGrid, MagnitudeMeasurements};

use crate::error::CliError;

const I2IM_VERSION: u32 = 1;
const I2DN_VERSION: u32 = 2;

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
    what: &'static str,
}

impl<'a> Reader<'a> {
    fn new(bytes: &'a [u8], what: &'static str) -> Self {
        Self { bytes, pos: 0, what }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], CliError> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let end = end.ok_or_else(|| CliError::Format(format!("{}: truncated at byte {}", self.what, self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn magic(&mut self, magic: &[u8; 4]) -> Result<(), CliError> {
        if self.take(4)? != magic {
            return Err(CliError::Format(format!("{}: bad magic", self.what)));
        }
        Ok(())
    }

    fn u32(&mut self) -> Result<u32, CliError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64, CliError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64(&mut self) -> Result<f64, CliError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    fn f64s(&mut self, n: usize) -> Result<Vec<f64>, CliError> {
        let raw = self.take(n.checked_mul(8).ok_or_else(|| CliError::Format(format!("{}: size overflow", self.what)))?)?;
        Ok(raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes"))).collect())
    }

    fn finish(&self) -> Result<(), CliError> {
        if self.pos != self.bytes.len() {
            return Err(CliError::Format(format!("{}: {} trailing bytes", self.what, self.bytes.len() - self.pos)));
        }
        Ok(())
    }
}

fn put_f64s(out: &mut Vec<u8>, values: &[f64]) {
    for v in values {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub fn encode_measurements(y: &MagnitudeMeasurements) -> Vec<u8> {
    let p = y.padded_dim();
    let mut out = Vec::with_capacity(28 + 8 * p * p);
    out.extend_from_slice(b"I2IM");
    out.extend_from_slice(&I2IM_VERSION.to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    out.extend_from_slice(&y.alpha.to_le_bytes());
    out.extend_from_slice(&y.seed.to_le_bytes());
    put_f64s(&mut out, y.magnitudes());
    out
}

pub fn decode_measurements(bytes: &[u8]) -> Result<MagnitudeMeasurements, CliError> {
    let mut r = Reader::new(bytes, "I2IM");
    r.magic(b"I2IM")?;
    let version = r.u32()?;
    if version != I2IM_VERSION {
        return Err(CliError::Format(format!("I2IM: unsupported version {version}")));
    }
    let p = r.u32()? as usize;
    let alpha = r.f64()?;
    let seed = r.u64()?;
    let mags = r.f64s(p * p)?;
    r.finish()?;
    Ok(MagnitudeMeasurements::new(p, mags, alpha, seed)?)
}

pub fn encode_image(x: &ImageGrid) -> Vec<u8> {
    let p = x.padded_dim();
    let mut out = Vec::with_capacity(12 + 8 * p * p);
    out.extend_from_slice(b"IGRD");
    out.extend_from_slice(&(x.inner_dim() as u32).to_le_bytes());
    out.extend_from_slice(&(p as u32).to_le_bytes());
    put_f64s(&mut out, x.values());
    out
}

pub fn decode_image(bytes: &[u8]) -> Result<ImageGrid, CliError> {
    let mut r = Reader::new(bytes, "IGRD");
    r.magic(b"IGRD")?;
    let n = r.u32()? as usize;
    let p = r.u32()? as usize;
    let values = r.f64s(p * p)?;
    r.finish()?;
    Ok(ImageGrid::from_frame(n, p, values)?)
}

pub fn encode_model(m: &DenoiserModel) -> Vec<u8> {
    let a = &m.arch;
    let mut out = Vec::with_capacity(36 + 8 * m.params.len());
    out.extend_from_slice(b"I2DN");
    for v in [
        I2DN_VERSION,
        a.input_channels as u32,
        a.hidden_channels as u32,
        a.layers as u32,
        a.kernel_size as u32,
        a.embed_dim as u32,
        m.trained_steps as u32,
        m.params.len() as u32,
    ] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    put_f64s(&mut out, &m.params);
    out
}

pub fn decode_model(bytes: &[u8]) -> Result<DenoiserModel, CliError> {
    let mut r = Reader::new(bytes, "I2DN");
    r.magic(b"I2DN")?;
    let version = r.u32()?;
    if version != I2DN_VERSION {
        return Err(CliError::Format(format!("I2DN: unsupported version {version}")));
    }
    let arch = DenoiserArch {
        input_channels: r.u32()? as usize,
        hidden_channels: r.u32()? as usize,
        layers: r.u32()? as usize,
        kernel_size: r.u32()? as usize,
        embed_dim: r.u32()? as usize,
    };
    let trained_steps = r.u32()? as usize;
    let count = r.u32()? as usize;
    let params = r.f64s(count)?;
    r.finish()?;
    Ok(DenoiserModel::from_params(arch, trained_steps, params)?)
}

/// 8-bit PGM of the `N×N` window; values are clamped to `[0, 1]` and rounded
/// half away from zero.
pub fn encode_pgm(x: &ImageGrid) -> Vec<u8> {
    let n = x.inner_dim();
    let mut out = format!("P5\n{n} {n}\n255\n").into_bytes();
    out.extend(x.inner_values().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    out
}

/// Reads a square P5 PGM into a frame of size `padded_dim` (twice the image
/// size when `None`).
pub fn decode_pgm(bytes: &[u8], padded_dim: Option<usize>) -> Result<ImageGrid, CliError> {
    let bad = |msg: &str| CliError::Format(format!("PGM: {msg}"));
    let mut fields = Vec::with_capacity(4);
    let mut pos = 0;
    while fields.len() < 4 {
        while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if pos < bytes.len() && bytes[pos] == b'#' {
            while pos < bytes.len() && bytes[pos] != b'\n' {
                pos += 1;
            }
            continue;
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("non-ASCII header"))?);
    }
    if fields[0] != "P5" {
        return Err(bad("only binary P5 is supported"));
    }
    let parse = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, maxval) = (parse(fields[1])?, parse(fields[2])?, parse(fields[3])?);
    if w != h {
        return Err(bad("image must be square"));
    }
    if maxval != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    // exactly one whitespace byte separates the header from the raster
    let data = bytes.get(pos + 1..).ok_or_else(|| bad("missing raster"))?;
    if data.len() != w * h {
        return Err(bad("raster size mismatch"));
    }
    let px: Vec<f64> = data.iter().map(|&b| b as f64 / 255.0).collect();
    Ok(ImageGrid::from_inner(w, padded_dim.unwrap_or(2 * w), &px)?)
}

/// Writes through a temporary file in the target directory and renames it
/// into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), CliError> {
    let dir = path.parent().filter(|d| !d.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e))?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(|e| CliError::io(dir, e))?;
    tmp.write_all(bytes).map_err(|e| CliError::io(path, e))?;
    tmp.persist(path).map_err(|e| CliError::io(path, e.error))?;
    Ok(())
}

pub fn read_file(path: &Path) -> Result<Vec<u8>, CliError> {
    fs::read(path).map_err(|e| CliError::io(path, e))
}

pub fn read_image(path: &Path) -> Result<ImageGrid, CliError> {
    decode_image(&read_file(path)?).map_err(|e| e.context(path))
}

pub fn read_measurements(path: &Path) -> Result<MagnitudeMeasurements, CliError> {
    decode_measurements(&read_file(path)?).map_err(|e| e.context(path))
}

pub fn read_model(path: &Path) -> Result<DenoiserModel, CliError> {
    decode_model(&read_file(path)?).map_err(|e| e.context(path))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_rounds_half_away_from_zero() {
        // 0.5/255 above 127 rounds up
        let v = 127.5 / 255.0;
        let x = ImageGrid::from_inner(1, 2, &[v]).unwrap();
        assert_eq!(*encode_pgm(&x).last().unwrap(), 128);
    }

    #[test]
    fn pgm_header_comments_are_skipped() {
        let mut bytes = b"P5\n# made by hand\n2 2\n255\n".to_vec();
        bytes.extend([0, 255, 51, 102]);
        let x = decode_pgm(&bytes, None).unwrap();
        assert_eq!(x.padded_dim(), 4);
        assert_eq!(x.inner_values(), vec![0.0, 1.0, 0.2, 0.4]);
        assert_eq!(encode_pgm(&x), b"P5\n2 2\n255\n\x00\xff\x33\x66".to_vec());
    }

    #[test]
    fn truncated_files_are_rejected() {
        let x = ImageGrid::from_inner(2, 4, &[0.1, 0.2, 0.3, 0.4]).unwrap();
        let bytes = encode_image(&x);
        assert!(decode_image(&bytes[..bytes.len() - 1]).is_err());
        let mut extra = bytes.clone();
        extra.push(0);
        assert!(decode_image(&extra).is_err());
        assert!(decode_measurements(&bytes).is_err());
    }
}
