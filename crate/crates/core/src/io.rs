//! On-disk formats: the TensorFile float container, PNG, and PPM fallback.
//!
//! TensorFile layout: one line of UTF-8 JSON (dims, dtype, endianness,
//! semantic tag) terminated by `\n`, followed by the raw little-endian f32
//! payload. Round trips are bit-exact.

use crate::error::{Error, Result};
use crate::tensor::{ImageTensor, ValueDomain};
use serde::{Deserialize, Serialize};
use std::fs;
use std::io::{Read, Write};
use std::path::Path;

#[derive(Debug, Serialize, Deserialize)]
struct TensorHeader {
    dims: [usize; 3],
    dtype: String,
    endianness: String,
    semantic: ValueDomain,
}

pub fn write_tensor(path: &Path, t: &ImageTensor) -> Result<()> {
    let header = TensorHeader {
        dims: [t.height(), t.width(), t.channels()],
        dtype: "f32".to_string(),
        endianness: "little".to_string(),
        semantic: t.domain(),
    };
    let mut bytes = serde_json::to_vec(&header).expect("header serializes");
    bytes.push(b'\n');
    bytes.reserve(t.len() * 4);
    for v in t.data() {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    fs::write(path, bytes).map_err(|e| Error::io(path.display().to_string(), e))
}

pub fn read_tensor(path: &Path) -> Result<ImageTensor> {
    let bytes = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let nl = bytes
        .iter()
        .position(|&b| b == b'\n')
        .ok_or_else(|| Error::Parse(format!("{}: no header line", path.display())))?;
    let header: TensorHeader = serde_json::from_slice(&bytes[..nl])
        .map_err(|e| Error::Parse(format!("{}: bad header: {e}", path.display())))?;
    if header.dtype != "f32" {
        return Err(Error::DtypeMismatch {
            expected: "f32".to_string(),
            found: header.dtype,
        });
    }
    if header.endianness != "little" {
        return Err(Error::Parse(format!(
            "{}: unsupported endianness {}",
            path.display(),
            header.endianness
        )));
    }
    let [h, w, c] = header.dims;
    let expect = h * w * c * 4;
    let payload = &bytes[nl + 1..];
    if payload.len() < expect {
        return Err(Error::Truncated(format!(
            "{}: payload {} bytes, header declares {}",
            path.display(),
            payload.len(),
            expect
        )));
    }
    if payload.len() > expect {
        return Err(Error::DimensionMismatch(format!(
            "{}: payload {} bytes exceeds header-declared {}",
            path.display(),
            payload.len(),
            expect
        )));
    }
    let mut data = Vec::with_capacity(h * w * c);
    for chunk in payload.chunks_exact(4) {
        data.push(f32::from_le_bytes([chunk[0], chunk[1], chunk[2], chunk[3]]));
    }
    ImageTensor::from_data(h, w, c, header.semantic, data)
}

/// Loads an 8-bit PNG or PPM/PGM image as a unit-domain tensor
/// (values scaled by 1/255).
pub fn load_image(path: &Path) -> Result<ImageTensor> {
    match extension(path) {
        Some("ppm") | Some("pgm") => load_pnm(path),
        _ => load_png(path),
    }
}

/// Saves a unit-domain tensor as PNG or PPM/PGM depending on the extension
/// (round-to-nearest ×255).
pub fn save_image(path: &Path, t: &ImageTensor) -> Result<()> {
    match extension(path) {
        Some("ppm") | Some("pgm") => save_pnm(path, t),
        _ => save_png(path, t),
    }
}

fn extension(path: &Path) -> Option<&str> {
    path.extension().and_then(|e| e.to_str())
}

fn to_bytes(t: &ImageTensor) -> Vec<u8> {
    t.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

fn load_png(path: &Path) -> Result<ImageTensor> {
    let img = image::open(path).map_err(|e| Error::Parse(format!("{}: {e}", path.display())))?;
    let (channels, w, h, raw) = match img {
        image::DynamicImage::ImageLuma8(g) => {
            let (w, h) = g.dimensions();
            (1usize, w, h, g.into_raw())
        }
        other => {
            let rgb = other.to_rgb8();
            let (w, h) = rgb.dimensions();
            (3usize, w, h, rgb.into_raw())
        }
    };
    let data = raw.iter().map(|&b| b as f32 / 255.0).collect();
    ImageTensor::from_data(h as usize, w as usize, channels, ValueDomain::Unit, data)
}

fn save_png(path: &Path, t: &ImageTensor) -> Result<()> {
    let bytes = to_bytes(t);
    let (w, h) = (t.width() as u32, t.height() as u32);
    let res = match t.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("sized buffer")
            .save(path),
        3 => image::RgbImage::from_raw(w, h, bytes)
            .expect("sized buffer")
            .save(path),
        c => return Err(Error::invalid(format!("cannot save {c}-channel image"))),
    };
    res.map_err(|e| Error::Parse(format!("{}: {e}", path.display())))
}

fn save_pnm(path: &Path, t: &ImageTensor) -> Result<()> {
    let magic = match t.channels() {
        1 => "P5",
        3 => "P6",
        c => return Err(Error::invalid(format!("cannot save {c}-channel image"))),
    };
    let mut out = format!("{magic}\n{} {}\n255\n", t.width(), t.height()).into_bytes();
    out.extend(to_bytes(t));
    let mut f =
        fs::File::create(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    f.write_all(&out)
        .map_err(|e| Error::io(path.display().to_string(), e))
}

fn load_pnm(path: &Path) -> Result<ImageTensor> {
    let mut bytes = Vec::new();
    fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut pos = 0usize;
    let mut fields = Vec::new();
    // magic, width, height, maxval; comments start with '#'
    while fields.len() < 4 && pos < bytes.len() {
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
        fields.push(String::from_utf8_lossy(&bytes[start..pos]).to_string());
    }
    if fields.len() < 4 {
        return Err(Error::Parse(format!("{}: short PNM header", path.display())));
    }
    let channels = match fields[0].as_str() {
        "P5" => 1usize,
        "P6" => 3usize,
        m => return Err(Error::Parse(format!("{}: unsupported magic {m}", path.display()))),
    };
    let w: usize = fields[1]
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad width", path.display())))?;
    let h: usize = fields[2]
        .parse()
        .map_err(|_| Error::Parse(format!("{}: bad height", path.display())))?;
    if fields[3] != "255" {
        return Err(Error::Parse(format!("{}: only maxval 255 supported", path.display())));
    }
    pos += 1; // single whitespace after maxval
    let expect = w * h * channels;
    if bytes.len() < pos + expect {
        return Err(Error::Truncated(format!(
            "{}: pixel data {} bytes, need {}",
            path.display(),
            bytes.len().saturating_sub(pos),
            expect
        )));
    }
    let data = bytes[pos..pos + expect]
        .iter()
        .map(|&b| b as f32 / 255.0)
        .collect();
    ImageTensor::from_data(h, w, channels, ValueDomain::Unit, data)
}
