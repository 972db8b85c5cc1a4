//! Binary PGM (P5) / PPM (P6) with maxval 255.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::ImageBuffer;

/// `round(v·255)` after clamping to `[0, 1]`.
pub fn to_byte(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn from_byte(b: u8) -> f32 {
    b as f32 / 255.0
}

struct Header {
    channels: usize,
    width: usize,
    height: usize,
    data_offset: usize,
}

fn parse_header(bytes: &[u8], context: &str) -> Result<Header> {
    let err = |offset: usize, msg: &str| Error::format(context, offset, msg);
    if bytes.len() < 2 {
        return Err(err(0, "file too short for a netpbm magic number"));
    }
    let channels = match &bytes[..2] {
        b"P5" => 1,
        b"P6" => 3,
        _ => return Err(err(0, "expected magic P5 or P6")),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(err(pos, "unexpected end of header")),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| b.is_ascii_digit()) {
            pos += 1;
        }
        if start == pos {
            return Err(err(pos, "expected a decimal header field"));
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("ascii digits");
        *field = text.parse().map_err(|_| err(start, "header field out of range"))?;
    }
    match bytes.get(pos) {
        Some(b) if b.is_ascii_whitespace() => pos += 1,
        _ => return Err(err(pos, "expected a single whitespace byte after maxval")),
    }
    let [width, height, maxval] = fields;
    if width == 0 || height == 0 {
        return Err(err(2, "zero image extent"));
    }
    if maxval != 255 {
        return Err(err(pos - 1, "only maxval 255 is supported"));
    }
    Ok(Header {
        channels,
        width,
        height,
        data_offset: pos,
    })
}

/// Decodes an in-memory P5/P6 file.
pub fn decode(bytes: &[u8], context: &str) -> Result<ImageBuffer> {
    let h = parse_header(bytes, context)?;
    let n = h.width * h.height;
    let need = n * h.channels;
    let payload = &bytes[h.data_offset..];
    if payload.len() < need {
        return Err(Error::format(
            context,
            bytes.len(),
            format!("truncated pixel data: need {need} bytes, found {}", payload.len()),
        ));
    }
    let mut pixels = vec![0.0f32; need];
    for i in 0..n {
        for c in 0..h.channels {
            pixels[c * n + i] = from_byte(payload[i * h.channels + c]);
        }
    }
    ImageBuffer::new(h.width, h.height, h.channels, pixels)
}

/// Encodes as P5 (1 channel) or P6 (3 channels), interleaving channels.
pub fn encode(img: &ImageBuffer) -> Vec<u8> {
    let magic = if img.channels() == 1 { "P5" } else { "P6" };
    let mut out = format!("{magic}\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    let n = img.width() * img.height();
    out.reserve(n * img.channels());
    for i in 0..n {
        for c in 0..img.channels() {
            out.push(to_byte(img.pixels()[c * n + i]));
        }
    }
    out
}

pub fn load_image(path: impl AsRef<Path>) -> Result<ImageBuffer> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, &path.display().to_string())
}

pub fn save_image(img: &ImageBuffer, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    fs::write(path, encode(img)).map_err(|e| Error::io(path, e))
}
