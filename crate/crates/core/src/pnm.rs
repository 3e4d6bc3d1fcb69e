//! Binary PGM (P5) and PPM (P6) images with 8-bit samples.
//!
//! Tensors are `(1,H,W)` or `(3,H,W)` with values in `[0,1]`; a sample `k`
//! maps to `k/255`, so values already on that grid round-trip exactly.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

fn bad(detail: impl Into<String>) -> Error {
    Error::Format { what: "pnm", detail: detail.into() }
}

/// Nearest 8-bit level of `v`, clamped to `[0, 255]`.
pub fn to_byte(v: f64) -> u8 {
    (v * 255.0).round().clamp(0.0, 255.0) as u8
}

/// Rounds every value to the nearest multiple of `1/255`.
pub fn quantize(t: &Tensor<f64>) -> Tensor<f64> {
    t.map(|v| to_byte(v) as f64 / 255.0)
}

pub fn write_pnm(w: &mut impl Write, t: &Tensor<f64>) -> Result<()> {
    let (magic, c, h, wd) = match *t.shape() {
        [1, h, w] => ("P5", 1, h, w),
        [3, h, w] => ("P6", 3, h, w),
        ref s => return Err(bad(format!("cannot store a tensor of shape {s:?}"))),
    };
    write!(w, "{magic}\n{wd} {h}\n255\n")?;
    let plane = h * wd;
    let d = t.data();
    let mut bytes = Vec::with_capacity(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            bytes.push(to_byte(d[ch * plane + i]));
        }
    }
    w.write_all(&bytes)?;
    Ok(())
}

fn header_token(r: &mut impl BufRead) -> Result<String> {
    let mut tok = String::new();
    loop {
        let mut b = [0u8];
        if r.read(&mut b)? == 0 {
            return if tok.is_empty() { Err(bad("truncated header")) } else { Ok(tok) };
        }
        match b[0] {
            b'#' if tok.is_empty() => {
                let mut skip = String::new();
                r.read_line(&mut skip)?;
            }
            c if c.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            c => tok.push(c as char),
        }
    }
}

pub fn read_pnm(r: &mut impl BufRead) -> Result<Tensor<f64>> {
    let c = match header_token(r)?.as_str() {
        "P5" => 1,
        "P6" => 3,
        m => return Err(bad(format!("unsupported magic {m:?}"))),
    };
    let mut num = || -> Result<usize> {
        let t = header_token(r)?;
        t.parse().map_err(|_| bad(format!("bad header field {t:?}")))
    };
    let (w, h, max) = (num()?, num()?, num()?);
    if max != 255 {
        return Err(bad(format!("only 8-bit images are supported, maxval {max}")));
    }
    let plane = h * w;
    let mut bytes = vec![0u8; c * plane];
    r.read_exact(&mut bytes).map_err(|_| bad("truncated pixel data"))?;
    let mut data = vec![0.0; c * plane];
    for i in 0..plane {
        for ch in 0..c {
            data[ch * plane + i] = bytes[i * c + ch] as f64 / 255.0;
        }
    }
    Tensor::new(&[c, h, w], data)
}

pub fn save(path: &Path, t: &Tensor<f64>) -> Result<()> {
    let mut w = BufWriter::new(File::create(path)?);
    write_pnm(&mut w, t)?;
    w.flush()?;
    Ok(())
}

pub fn load(path: &Path) -> Result<Tensor<f64>> {
    read_pnm(&mut BufReader::new(File::open(path)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn roundtrip_on_grid() {
        for c in [1, 3] {
            let t = Tensor::from_fn(&[c, 5, 7], |i| ((i * 37) % 256) as f64 / 255.0);
            let mut buf = Vec::new();
            write_pnm(&mut buf, &t).unwrap();
            assert_eq!(read_pnm(&mut buf.as_slice()).unwrap(), t);
        }
    }

    #[test]
    fn header_with_comment() {
        let bytes = b"P5\n# made by hand\n2 1\n255\n\x00\xff";
        let t = read_pnm(&mut &bytes[..]).unwrap();
        assert_eq!(t.shape(), &[1, 1, 2]);
        assert_eq!(t.data(), &[0.0, 1.0]);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(read_pnm(&mut &b"P2\n1 1\n255\n0"[..]).is_err());
        assert!(read_pnm(&mut &b"P5\n2 2\n255\n\x00"[..]).is_err());
        assert!(write_pnm(&mut Vec::new(), &Tensor::zeros(&[2, 2, 2])).is_err());
    }

    #[test]
    fn quantize_is_idempotent() {
        let t = Tensor::from_fn(&[1, 3, 3], |i| i as f64 / 9.0);
        let q = quantize(&t);
        assert_eq!(quantize(&q), q);
        assert!(q.max_abs_diff(&t) <= 0.5 / 255.0 + 1e-15);
    }
}
