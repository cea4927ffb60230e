//! Binary PPM ("P6", maxval 255) images.

use std::path::Path;

use triadrec_core::data::Image;

use crate::error::{self, HarnessError, Result};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum PpmError {
    #[error("not a binary PPM (magic {0:?})")]
    BadMagic(String),
    #[error("malformed header: {0}")]
    BadHeader(String),
    #[error("maxval must be 255, got {0}")]
    BadMaxval(u64),
    #[error("truncated payload: expected {expected} bytes, found {found}")]
    Truncated { expected: usize, found: usize },
}

pub fn encode_ppm(image: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend_from_slice(&image.to_rgb8());
    out
}

struct Header<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl Header<'_> {
    fn skip_space(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while self.bytes.get(self.pos).is_some_and(|&c| c != b'\n') {
                    self.pos += 1;
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64, PpmError> {
        self.skip_space();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| PpmError::BadHeader(format!("missing or invalid {what}")))
    }
}

pub fn decode_ppm(bytes: &[u8]) -> Result<Image, PpmError> {
    if bytes.get(..2) != Some(b"P6") {
        let magic = String::from_utf8_lossy(&bytes[..bytes.len().min(2)]).into_owned();
        return Err(PpmError::BadMagic(magic));
    }
    let mut h = Header { bytes, pos: 2 };
    let width = h.number("width")?;
    let height = h.number("height")?;
    let maxval = h.number("maxval")?;
    if maxval != 255 {
        return Err(PpmError::BadMaxval(maxval));
    }
    if width == 0 || height == 0 {
        return Err(PpmError::BadHeader(format!("zero dimension {width}x{height}")));
    }
    match bytes.get(h.pos) {
        Some(b) if b.is_ascii_whitespace() => h.pos += 1,
        _ => return Err(PpmError::BadHeader("no whitespace after maxval".into())),
    }
    let (w, hgt) = (width as usize, height as usize);
    let expected = w
        .checked_mul(hgt)
        .and_then(|n| n.checked_mul(3))
        .ok_or_else(|| PpmError::BadHeader("dimensions overflow".into()))?;
    let payload = &bytes[h.pos..];
    if payload.len() < expected {
        return Err(PpmError::Truncated { expected, found: payload.len() });
    }
    Image::from_rgb8(hgt, w, &payload[..expected]).map_err(|e| PpmError::BadHeader(e.to_string()))
}

pub fn read_ppm(path: &Path) -> Result<Image> {
    let bytes = error::read(path)?;
    decode_ppm(&bytes).map_err(|source| HarnessError::Ppm { path: path.to_path_buf(), source })
}

pub fn write_ppm(image: &Image, path: &Path) -> Result<()> {
    error::write(path, &encode_ppm(image))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn white_pixel_layout() {
        let img = Image::new(1, 1, vec![1.0; 3]).unwrap();
        assert_eq!(encode_ppm(&img), b"P6\n1 1\n255\n\xff\xff\xff");
    }

    #[test]
    fn header_errors() {
        assert!(matches!(decode_ppm(b"P3\n1 1\n255\n   "), Err(PpmError::BadMagic(_))));
        assert_eq!(decode_ppm(b"P6\n1 1\n65535\n\0\0\0\0\0\0"), Err(PpmError::BadMaxval(65535)));
        assert_eq!(decode_ppm(b"P6\n2 1\n255\n\0\0\0"), Err(PpmError::Truncated { expected: 6, found: 3 }));
        assert!(matches!(decode_ppm(b"P6\n1\n"), Err(PpmError::BadHeader(_))));
    }

    #[test]
    fn comments_in_header() {
        let img = decode_ppm(b"P6\n# made by hand\n1 1 # size\n255\n\x00\x80\xff").unwrap();
        assert_eq!(img.to_rgb8(), vec![0, 128, 255]);
    }
}
