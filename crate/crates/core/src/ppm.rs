//! Binary PPM ("P6", maxval 255) reader/writer with a bit-exact round
//! trip for the 8-bit quantized pixel data.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::io::{Read, Write};
use std::path::Path;

/// Quantizes a `[0,1]` float to the 8-bit grid (round-half-up, clamped).
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn dequantize(b: u8) -> f32 {
    b as f32 / 255.0
}

/// Writes a `[3, h, w]` tensor with values in `[0,1]` as binary PPM.
pub fn write_ppm(path: &Path, image: &Tensor) -> Result<()> {
    let s = image.shape();
    if s.len() != 3 || s[0] != 3 {
        return Err(Error::dim(format!("write_ppm: image shape {s:?}")));
    }
    let (h, w) = (s[1], s[2]);
    let mut buf = Vec::with_capacity(32 + 3 * h * w);
    buf.extend_from_slice(format!("P6\n{w} {h}\n255\n").as_bytes());
    let d = image.data();
    let plane = h * w;
    for i in 0..plane {
        buf.push(quantize(d[i]));
        buf.push(quantize(d[plane + i]));
        buf.push(quantize(d[2 * plane + i]));
    }
    let mut f =
        std::fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&buf)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a binary PPM into a `[3, h, w]` tensor with values `k/255`.
pub fn read_ppm(path: &Path) -> Result<Tensor> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    parse_ppm(&bytes).map_err(|msg| Error::Parse {
        path: path.display().to_string(),
        line: 0,
        msg,
    })
}

fn parse_ppm(bytes: &[u8]) -> std::result::Result<Tensor, String> {
    let mut pos = 0usize;
    let mut token = |bytes: &[u8]| -> std::result::Result<String, String> {
        // skip whitespace and '#' comments
        loop {
            while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if pos < bytes.len() && bytes[pos] == b'#' {
                while pos < bytes.len() && bytes[pos] != b'\n' {
                    pos += 1;
                }
            } else {
                break;
            }
        }
        let start = pos;
        while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
            pos += 1;
        }
        if start == pos {
            return Err("unexpected end of header".into());
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token(bytes)?;
    if magic != "P6" {
        return Err(format!("bad magic {magic:?}, expected P6"));
    }
    let w: usize = token(bytes)?.parse().map_err(|_| "bad width")?;
    let h: usize = token(bytes)?.parse().map_err(|_| "bad height")?;
    let maxval: usize = token(bytes)?.parse().map_err(|_| "bad maxval")?;
    if maxval != 255 {
        return Err(format!("unsupported maxval {maxval}"));
    }
    // exactly one whitespace byte after maxval
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err("missing separator after maxval".into());
    }
    pos += 1;
    let need = 3 * w * h;
    let pixels = &bytes[pos..];
    if pixels.len() != need {
        return Err(format!(
            "pixel payload is {} bytes, expected {need}",
            pixels.len()
        ));
    }
    let plane = w * h;
    let mut data = vec![0.0f32; 3 * plane];
    for i in 0..plane {
        data[i] = dequantize(pixels[3 * i]);
        data[plane + i] = dequantize(pixels[3 * i + 1]);
        data[2 * plane + i] = dequantize(pixels[3 * i + 2]);
    }
    Tensor::new(vec![3, h, w], data).map_err(|e| e.to_string())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tmp(name: &str) -> std::path::PathBuf {
        let dir = std::env::temp_dir().join("mmrdet_ppm_test");
        std::fs::create_dir_all(&dir).unwrap();
        dir.join(name)
    }

    #[test]
    fn round_trip_is_bit_exact() {
        // values already on the 8-bit grid survive exactly
        let mut data = Vec::new();
        for i in 0..(3 * 4 * 5) {
            data.push(((i * 7) % 256) as f32 / 255.0);
        }
        let img = Tensor::new(vec![3, 4, 5], data).unwrap();
        let p = tmp("rt.ppm");
        write_ppm(&p, &img).unwrap();
        let back = read_ppm(&p).unwrap();
        assert_eq!(img, back);
        // and the file itself is byte-stable across rewrites
        let b1 = std::fs::read(&p).unwrap();
        write_ppm(&p, &back).unwrap();
        assert_eq!(b1, std::fs::read(&p).unwrap());
    }

    #[test]
    fn quantize_clamps_out_of_range() {
        assert_eq!(quantize(-0.5), 0);
        assert_eq!(quantize(1.5), 255);
        assert_eq!(quantize(0.5), 128);
    }

    #[test]
    fn rejects_non_p6() {
        let p = tmp("bad.ppm");
        std::fs::write(&p, b"P3\n1 1\n255\n0 0 0\n").unwrap();
        assert!(read_ppm(&p).is_err());
    }

    #[test]
    fn rejects_truncated_payload() {
        let p = tmp("short.ppm");
        std::fs::write(&p, b"P6\n2 2\n255\nabc").unwrap();
        assert!(read_ppm(&p).is_err());
    }
}
