//! Binary greymap (P5) images.

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use thiserror::Error;
use vitse_core::Tensor;

#[derive(Debug, Error)]
pub enum PgmError {
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error("not a binary PGM (P5) file")]
    Magic,
    #[error("malformed PGM header: {0}")]
    Header(String),
    #[error("PGM maxval {0} is not in 1..=255")]
    Maxval(u32),
    #[error("PGM data holds {found} bytes, header promises {expected}")]
    Truncated { expected: usize, found: usize },
}

pub fn write_pgm<W: Write>(mut w: W, width: usize, height: usize, pixels: &[u8]) -> io::Result<()> {
    assert_eq!(pixels.len(), width * height, "pixel buffer does not match the image size");
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(pixels)?;
    w.flush()
}

/// Grey levels for values in `[0, 1]`; out-of-range values are clamped.
pub fn to_grey(values: &[f64]) -> Vec<u8> {
    values.iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8).collect()
}

/// Writes a `[H x W]` map with values in `[0, 1]`.
pub fn save_map(path: &Path, map: &Tensor<f64>) -> io::Result<()> {
    let (h, w) = match map.shape() {
        &[h, w] => (h, w),
        s => return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("map of shape {s:?}"))),
    };
    write_pgm(BufWriter::new(File::create(path)?), w, h, &to_grey(map.data()))
}

/// Writes a `[C x H x W]` image in `[0, 1]` as grey (channel mean).
pub fn save_image(path: &Path, image: &Tensor<f32>) -> io::Result<()> {
    let (c, h, w) = match image.shape() {
        &[c, h, w] => (c, h, w),
        s => return Err(io::Error::new(io::ErrorKind::InvalidInput, format!("image of shape {s:?}"))),
    };
    let plane = h * w;
    let grey: Vec<f64> = (0..plane)
        .map(|i| (0..c).map(|k| image.data()[k * plane + i] as f64).sum::<f64>() / c as f64)
        .collect();
    write_pgm(BufWriter::new(File::create(path)?), w, h, &to_grey(&grey))
}

fn header_token<R: Read>(r: &mut R) -> Result<String, PgmError> {
    let mut tok = String::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            return if tok.is_empty() {
                Err(PgmError::Header("unexpected end of header".into()))
            } else {
                Ok(tok)
            };
        }
        match byte[0] {
            b'#' if tok.is_empty() => {
                while r.read(&mut byte)? == 1 && byte[0] != b'\n' {}
            }
            b if b.is_ascii_whitespace() => {
                if !tok.is_empty() {
                    return Ok(tok);
                }
            }
            b => tok.push(b as char),
        }
    }
}

/// Reads a P5 image: `(width, height, maxval, pixels)`.
pub fn read_pgm<R: Read>(mut r: R) -> Result<(usize, usize, u32, Vec<u8>), PgmError> {
    if header_token(&mut r)? != "P5" {
        return Err(PgmError::Magic);
    }
    let mut num = |what: &str| -> Result<u32, PgmError> {
        let tok = header_token(&mut r)?;
        tok.parse().map_err(|_| PgmError::Header(format!("{what} `{tok}`")))
    };
    let width = num("width")? as usize;
    let height = num("height")? as usize;
    let maxval = num("maxval")?;
    if !(1..=255).contains(&maxval) {
        return Err(PgmError::Maxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PgmError::Header("zero-sized image".into()));
    }
    let expected = width * height;
    let mut pixels = Vec::with_capacity(expected);
    r.take(expected as u64).read_to_end(&mut pixels)?;
    if pixels.len() != expected {
        return Err(PgmError::Truncated { expected, found: pixels.len() });
    }
    Ok((width, height, maxval, pixels))
}

/// Loads a P5 file as a `[1 x H x W]` image in `[0, 1]`.
pub fn load_image(path: &Path) -> Result<Tensor<f32>, PgmError> {
    let (w, h, maxval, pixels) = read_pgm(BufReader::new(File::open(path)?))?;
    let data = pixels.iter().map(|&p| (p as f32 / maxval as f32).min(1.0)).collect();
    Ok(Tensor::new(&[1, h, w], data).expect("pixel count checked"))
}
