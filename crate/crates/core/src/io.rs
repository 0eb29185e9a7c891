//! File formats: 16-bit binary PGM images and length-prefixed `f64` vectors.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{invalid, Error, Result};

/// Writes a row-major `width × height` image as binary PGM (`P5`, maxval
/// 65535, big-endian samples). Values are clipped to `[lo, hi]` and mapped
/// linearly onto `0..=65535`.
pub fn write_pgm16(mut w: impl Write, pixels: &[f64], width: usize, height: usize, lo: f64, hi: f64) -> Result<()> {
    if pixels.len() != width * height {
        return Err(Error::DimensionMismatch {
            expected: width * height,
            actual: pixels.len(),
        });
    }
    if !(hi > lo) {
        return Err(invalid("pgm range needs hi > lo"));
    }
    write!(w, "P5\n{width} {height}\n65535\n")?;
    let mut buf = Vec::with_capacity(pixels.len() * 2);
    for &p in pixels {
        let t = if p.is_nan() {
            0.0
        } else {
            ((p - lo) / (hi - lo)).clamp(0.0, 1.0)
        };
        let v = (t * 65535.0).round() as u16;
        buf.extend_from_slice(&v.to_be_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn save_pgm16(path: impl AsRef<Path>, pixels: &[f64], width: usize, height: usize) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut out = std::io::BufWriter::new(file);
    write_pgm16(&mut out, pixels, width, height, 0.0, 1.0)?;
    out.flush()?;
    Ok(())
}

/// A decoded PGM image with raw samples.
#[derive(Debug, Clone, PartialEq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

impl Pgm {
    /// Samples scaled to `[0, 1]`.
    pub fn normalized(&self) -> Vec<f64> {
        let m = self.maxval as f64;
        self.samples.iter().map(|&s| s as f64 / m).collect()
    }
}

fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut token = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && token.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if token.is_empty() {
                continue;
            }
            break;
        }
        token.push(c as char);
    }
    if token.is_empty() {
        return Err(invalid("truncated pgm header"));
    }
    Ok(token)
}

/// Reads a binary (`P5`) PGM with 8- or 16-bit samples.
pub fn read_pgm(r: impl Read) -> Result<Pgm> {
    let mut r = BufReader::new(r);
    if header_token(&mut r)? != "P5" {
        return Err(invalid("not a binary pgm"));
    }
    let parse = |s: String| {
        s.parse::<usize>()
            .map_err(|_| invalid(format!("bad pgm header field {s:?}")))
    };
    let width = parse(header_token(&mut r)?)?;
    let height = parse(header_token(&mut r)?)?;
    let maxval = parse(header_token(&mut r)?)?;
    if maxval == 0 || maxval > 65535 {
        return Err(invalid("pgm maxval out of range"));
    }
    let wide = maxval > 255;
    let count = width * height;
    let mut raw = vec![0u8; if wide { 2 * count } else { count }];
    r.read_exact(&mut raw)?;
    let samples = if wide {
        raw.chunks_exact(2).map(|c| u16::from_be_bytes([c[0], c[1]])).collect()
    } else {
        raw.into_iter().map(u16::from).collect()
    };
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

/// Writes `u64` little-endian length followed by the values as little-endian
/// `f64`.
pub fn write_vector(mut w: impl Write, v: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(8 + 8 * v.len());
    buf.extend_from_slice(&(v.len() as u64).to_le_bytes());
    for x in v {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

pub fn read_vector(mut r: impl Read) -> Result<Vec<f64>> {
    let mut len = [0u8; 8];
    r.read_exact(&mut len)?;
    let n = usize::try_from(u64::from_le_bytes(len)).map_err(|_| invalid("vector too long"))?;
    let mut raw = Vec::new();
    r.read_to_end(&mut raw)?;
    if raw.len() != 8 * n {
        return Err(invalid(format!(
            "vector header says {n} values but {} bytes follow",
            raw.len()
        )));
    }
    Ok(raw
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect())
}

pub fn save_vector(path: impl AsRef<Path>, v: &[f64]) -> Result<()> {
    let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
    write_vector(&mut out, v)?;
    out.flush()?;
    Ok(())
}

pub fn load_vector(path: impl AsRef<Path>) -> Result<Vec<f64>> {
    read_vector(std::io::BufReader::new(std::fs::File::open(path)?))
}

/// One value per line, shortest round-trip formatting.
pub fn write_vector_csv(mut w: impl Write, v: &[f64]) -> Result<()> {
    for x in v {
        writeln!(w, "{x:?}")?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn vector_round_trip() {
        let v = vec![1.5, -0.0, f64::INFINITY, 1e-300, std::f64::consts::PI];
        let mut buf = Vec::new();
        write_vector(&mut buf, &v).unwrap();
        assert_eq!(buf.len(), 8 + 8 * v.len());
        assert_eq!(&buf[..8], &5u64.to_le_bytes());
        let back = read_vector(&buf[..]).unwrap();
        assert_eq!(
            back.iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            v.iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
    }

    #[test]
    fn truncated_vector_rejected() {
        let mut buf = Vec::new();
        write_vector(&mut buf, &[1.0, 2.0]).unwrap();
        buf.pop();
        assert!(read_vector(&buf[..]).is_err());
    }

    #[test]
    fn pgm_round_trip() {
        let px = vec![0.0, 0.25, 0.5, 1.0, 1.7, -3.0];
        let mut buf = Vec::new();
        write_pgm16(&mut buf, &px, 3, 2, 0.0, 1.0).unwrap();
        assert!(buf.starts_with(b"P5\n3 2\n65535\n"));
        let img = read_pgm(&buf[..]).unwrap();
        assert_eq!((img.width, img.height, img.maxval), (3, 2, 65535));
        assert_eq!(img.samples, vec![0, 16384, 32768, 65535, 65535, 0]);
    }

    #[test]
    fn pgm_with_comment() {
        let mut data = b"P5 # comment\n2 1\n255\n".to_vec();
        data.extend_from_slice(&[0, 255]);
        let img = read_pgm(&data[..]).unwrap();
        assert_eq!(img.normalized(), vec![0.0, 1.0]);
    }

    #[test]
    fn csv_vector() {
        let mut buf = Vec::new();
        write_vector_csv(&mut buf, &[0.1, 2.0]).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "0.1\n2.0\n");
    }
}
