//! Grayscale PGM (P2 ASCII / P5 binary) reading and writing.
//!
//! Intensities are divided by `maxval` on read, and clamped to `[0, 1]` and
//! rounded on write. P5 samples are one byte when `maxval < 256` and two
//! big-endian bytes otherwise.

use std::path::Path;

use crate::error::{Error, Result};
use crate::image::Image;

/// Largest accepted pixel count; guards allocations on hostile headers.
pub const MAX_PIXELS: usize = 1 << 26;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PgmFormat {
    /// P2
    Ascii,
    /// P5
    Binary,
}

fn perr(offset: usize, message: impl Into<String>) -> Error {
    Error::Parse {
        offset,
        message: message.into(),
    }
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn skip_ws_and_comments(&mut self) {
        while let Some(&b) = self.buf.get(self.pos) {
            if b.is_ascii_whitespace() {
                self.pos += 1;
            } else if b == b'#' {
                while let Some(&c) = self.buf.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str, allow_comments: bool) -> Result<(u64, usize)> {
        if allow_comments {
            self.skip_ws_and_comments();
        } else {
            while self.buf.get(self.pos).is_some_and(|b| b.is_ascii_whitespace()) {
                self.pos += 1;
            }
        }
        let start = self.pos;
        let mut v: u64 = 0;
        while let Some(&b) = self.buf.get(self.pos) {
            if !b.is_ascii_digit() {
                break;
            }
            v = v
                .checked_mul(10)
                .and_then(|v| v.checked_add(u64::from(b - b'0')))
                .filter(|&v| v <= u64::from(u32::MAX))
                .ok_or_else(|| perr(start, format!("{what} is too large")))?;
            self.pos += 1;
        }
        if self.pos == start {
            return Err(match self.buf.get(start) {
                None => perr(start, format!("unexpected end of file, expected {what}")),
                Some(&b) => perr(start, format!("expected {what}, found byte 0x{b:02x}")),
            });
        }
        if let Some(&b) = self.buf.get(self.pos) {
            if !b.is_ascii_whitespace() && b != b'#' {
                return Err(perr(self.pos, format!("unexpected byte 0x{b:02x} after {what}")));
            }
        }
        Ok((v, start))
    }
}

/// Decodes a P2 or P5 file.
pub fn decode_pgm(bytes: &[u8]) -> Result<Image> {
    let format = match bytes.get(..2) {
        Some(b"P2") => PgmFormat::Ascii,
        Some(b"P5") => PgmFormat::Binary,
        Some(m) if m[0] == b'P' => {
            return Err(perr(0, format!("unsupported magic {:?}", String::from_utf8_lossy(m))))
        }
        _ => return Err(perr(0, "not a PGM file (missing P2/P5 magic)")),
    };
    let mut cur = Cursor { buf: bytes, pos: 2 };
    match cur.buf.get(2) {
        Some(b) if b.is_ascii_whitespace() || *b == b'#' => {}
        Some(_) => return Err(perr(2, "magic must be followed by whitespace")),
        None => return Err(perr(2, "unexpected end of file after magic")),
    }
    let (width, width_at) = cur.number("width", true)?;
    let (height, _) = cur.number("height", true)?;
    let (maxval, maxval_at) = cur.number("maxval", true)?;
    if width == 0 || height == 0 {
        return Err(perr(width_at, format!("zero image dimension {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(perr(maxval_at, format!("maxval {maxval} outside 1..=65535")));
    }
    let (w, h) = (width as usize, height as usize);
    let n = w
        .checked_mul(h)
        .filter(|&n| n <= MAX_PIXELS)
        .ok_or_else(|| perr(width_at, format!("image {width}x{height} exceeds {MAX_PIXELS} pixels")))?;
    let scale = 1.0 / maxval as f64;
    let mut data = Vec::with_capacity(n);
    match format {
        PgmFormat::Ascii => {
            for k in 0..n {
                let (v, at) = cur
                    .number("sample", true)
                    .map_err(|e| match e {
                        Error::Parse { offset, message } if offset >= bytes.len() => perr(
                            offset,
                            format!("truncated payload: {message} ({k} of {n} samples read)"),
                        ),
                        e => e,
                    })?;
                if v > maxval {
                    return Err(perr(at, format!("sample {v} exceeds maxval {maxval}")));
                }
                data.push(v as f64 * scale);
            }
        }
        PgmFormat::Binary => {
            // exactly one whitespace byte separates the header from the raster
            match bytes.get(cur.pos) {
                Some(b) if b.is_ascii_whitespace() => cur.pos += 1,
                Some(_) => return Err(perr(cur.pos, "expected whitespace before raster")),
                None => return Err(perr(cur.pos, "truncated payload: no raster data")),
            }
            let bps = if maxval < 256 { 1 } else { 2 };
            let need = n * bps;
            let raster = bytes.get(cur.pos..cur.pos + need).ok_or_else(|| {
                perr(
                    bytes.len(),
                    format!(
                        "truncated payload: need {need} raster bytes, found {}",
                        bytes.len() - cur.pos
                    ),
                )
            })?;
            for k in 0..n {
                let v = if bps == 1 {
                    u64::from(raster[k])
                } else {
                    u64::from(u16::from_be_bytes([raster[2 * k], raster[2 * k + 1]]))
                };
                if v > maxval {
                    return Err(perr(cur.pos + k * bps, format!("sample {v} exceeds maxval {maxval}")));
                }
                data.push(v as f64 * scale);
            }
        }
    }
    Image::new(h, w, data)
}

/// Encodes `img` with intensities clamped to `[0, 1]`.
pub fn encode_pgm(img: &Image, maxval: u16, format: PgmFormat) -> Result<Vec<u8>> {
    if maxval == 0 {
        return Err(Error::InvalidArgument("maxval must be positive".into()));
    }
    let m = f64::from(maxval);
    let q = |v: f64| (v.clamp(0.0, 1.0) * m).round() as u16;
    let magic = match format {
        PgmFormat::Ascii => "P2",
        PgmFormat::Binary => "P5",
    };
    let mut out = format!("{magic}\n{} {}\n{maxval}\n", img.width(), img.height()).into_bytes();
    match format {
        PgmFormat::Binary => {
            for &v in img.data() {
                let s = q(v);
                if maxval < 256 {
                    out.push(s as u8);
                } else {
                    out.extend_from_slice(&s.to_be_bytes());
                }
            }
        }
        PgmFormat::Ascii => {
            for row in img.data().chunks(img.width()) {
                let line: Vec<String> = row.iter().map(|&v| q(v).to_string()).collect();
                out.extend_from_slice(line.join(" ").as_bytes());
                out.push(b'\n');
            }
        }
    }
    Ok(out)
}

pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
    decode_pgm(&bytes)
}

/// Writes a 16-bit binary PGM.
pub fn write_image(img: &Image, path: impl AsRef<Path>) -> Result<()> {
    write_image_with(img, path, 65535, PgmFormat::Binary)
}

pub fn write_image_with(img: &Image, path: impl AsRef<Path>, maxval: u16, format: PgmFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = encode_pgm(img, maxval, format)?;
    std::fs::write(path, bytes).map_err(|e| Error::Io(format!("{}: {e}", path.display())))
}
