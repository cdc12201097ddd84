//! Binary portable pixmap (P6, maxval 255) reading and writing.

use std::fs;
use std::path::Path;

use hydraprompt_core::Tensor;

use crate::error::{Error, PpmError, Result};

/// Decodes a P6 file into an `H×W×3` tensor with values in `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor, PpmError> {
    let mut pos = 0;
    let magic = next_token(bytes, &mut pos)?;
    if magic != "P6" {
        return Err(PpmError::UnsupportedFormat(magic));
    }
    let width = parse_dim(bytes, &mut pos, "width")?;
    let height = parse_dim(bytes, &mut pos, "height")?;
    let maxval = parse_dim(bytes, &mut pos, "maxval")?;
    if maxval != 255 {
        return Err(PpmError::UnsupportedMaxval(maxval as u32));
    }
    // exactly one whitespace byte separates the header from the raster
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(PpmError::MalformedHeader("missing separator after maxval".into())),
    }
    let expected = width * height * 3;
    let raster = &bytes[pos..];
    if raster.len() < expected {
        return Err(PpmError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let data = raster[..expected].iter().map(|&b| f64::from(b) / 255.0).collect();
    Tensor::new(&[height, width, 3], data).map_err(|e| PpmError::MalformedHeader(e.to_string()))
}

/// Encodes an `H×W×3` tensor, clamping to `[0, 1]` and rounding to 8 bits.
pub fn encode(image: &Tensor) -> Result<Vec<u8>, PpmError> {
    let s = image.shape();
    if s.len() != 3 || s[2] != 3 {
        return Err(PpmError::BadTensor(s.to_vec()));
    }
    let mut out = format!("P6\n{} {}\n255\n", s[1], s[0]).into_bytes();
    out.extend(image.data().iter().map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8));
    Ok(out)
}

pub fn read_image(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes).map_err(|source| Error::Ppm {
        path: path.to_path_buf(),
        source,
    })
}

pub fn write_image(path: &Path, image: &Tensor) -> Result<()> {
    let bytes = encode(image).map_err(|source| Error::Ppm {
        path: path.to_path_buf(),
        source,
    })?;
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn next_token(bytes: &[u8], pos: &mut usize) -> Result<String, PpmError> {
    loop {
        match bytes.get(*pos) {
            Some(b) if b.is_ascii_whitespace() => *pos += 1,
            Some(b'#') => {
                while bytes.get(*pos).is_some_and(|&b| b != b'\n') {
                    *pos += 1;
                }
            }
            Some(_) => break,
            None => return Err(PpmError::MalformedHeader("unexpected end of header".into())),
        }
    }
    let start = *pos;
    while bytes.get(*pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
        *pos += 1;
    }
    Ok(String::from_utf8_lossy(&bytes[start..*pos]).into_owned())
}

fn parse_dim(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize, PpmError> {
    let tok = next_token(bytes, pos)?;
    match tok.parse::<usize>() {
        Ok(v) if v > 0 => Ok(v),
        _ => Err(PpmError::MalformedHeader(format!("bad {what} `{tok}`"))),
    }
}
