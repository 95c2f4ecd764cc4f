//! Binary portable graymap (P5) and pixmap (P6) images, 8 bits per sample.

use logattn_core::detector::GrayMap;
use logattn_core::Tensor;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum PnmError {
    #[error("not a binary PGM/PPM file (magic {0:?})")]
    Magic(String),
    #[error("truncated or malformed header")]
    Header,
    #[error("only 8-bit images are supported, maxval is {0}")]
    MaxVal(u32),
    #[error("expected {expected} bytes of pixel data, found {found}")]
    Truncated { expected: usize, found: usize },
    #[error("cannot encode a tensor of shape {0:?} (need [1|3, H, W])")]
    Shape(Vec<usize>),
}

/// Encodes a `[1, H, W]` (P5) or `[3, H, W]` (P6) tensor with values in `[0, 1]`.
pub fn encode(image: &Tensor) -> Result<Vec<u8>, PnmError> {
    let shape = image.shape();
    let (c, h, w) = match *shape {
        [c @ (1 | 3), h, w] => (c, h, w),
        _ => return Err(PnmError::Shape(shape.to_vec())),
    };
    let magic = if c == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
    let data = image.data();
    let plane = h * w;
    out.reserve(c * plane);
    for i in 0..plane {
        for ch in 0..c {
            out.push((data[ch * plane + i].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    Ok(out)
}

pub fn encode_gray(map: &GrayMap) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", map.width, map.height).into_bytes();
    out.extend_from_slice(&map.pixels);
    out
}

/// Decodes into a `[C, H, W]` tensor scaled to `[0, 1]`.
pub fn decode(bytes: &[u8]) -> Result<Tensor, PnmError> {
    let mut pos = 0;
    let mut token = || -> Result<String, PnmError> {
        loop {
            match bytes.get(pos) {
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(_) => break,
                None => return Err(PnmError::Header),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace()) {
            pos += 1;
        }
        Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
    };
    let magic = token()?;
    let channels = match magic.as_str() {
        "P5" => 1,
        "P6" => 3,
        _ => return Err(PnmError::Magic(magic)),
    };
    let num = |s: String| s.parse::<usize>().map_err(|_| PnmError::Header);
    let w = num(token()?)?;
    let h = num(token()?)?;
    let maxval = num(token()?)?;
    if maxval == 0 || maxval > 255 {
        return Err(PnmError::MaxVal(maxval as u32));
    }
    if w == 0 || h == 0 {
        return Err(PnmError::Header);
    }
    // Exactly one whitespace byte separates the header from the raster.
    let start = pos + 1;
    let expected = channels * w * h;
    let raster = bytes.get(start..).unwrap_or(&[]);
    if raster.len() < expected {
        return Err(PnmError::Truncated {
            expected,
            found: raster.len(),
        });
    }
    let plane = w * h;
    let mut data = vec![0.0; expected];
    for i in 0..plane {
        for ch in 0..channels {
            data[ch * plane + i] = raster[i * channels + ch] as f64 / maxval as f64;
        }
    }
    Ok(Tensor::new(vec![channels, h, w], data).expect("buffer matches shape"))
}
