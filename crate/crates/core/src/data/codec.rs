//! 8-bit PNG and binary PPM/PGM codecs. Pixel `p` maps to `2p/255 - 1`.

use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// An RGB image of shape `[1, 3, H, W]` with values in `[-1, 1]`.
#[derive(Clone, Debug)]
pub struct ImageRecord {
    pub pixels: Tensor<f32>,
    /// File path or synthetic id.
    pub source: String,
}

/// Integer class ids, row-major `h x w`.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    pub h: usize,
    pub w: usize,
    pub labels: Vec<u8>,
    pub source: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    Png,
    Ppm,
}

impl ImageFormat {
    /// From a file extension; anything but `ppm`/`pgm` is PNG.
    pub fn from_path(path: &Path) -> Self {
        match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
            Some("ppm") | Some("pgm") => ImageFormat::Ppm,
            _ => ImageFormat::Png,
        }
    }
}

pub fn byte_to_unit(p: u8) -> f32 {
    (2.0 * p as f64 / 255.0 - 1.0) as f32
}

/// Inverse of [`byte_to_unit`] with round-half-up, clamped to `[0, 255]`.
pub fn unit_to_byte(v: f32) -> u8 {
    let x = ((v as f64 + 1.0) * 127.5 + 0.5).floor();
    x.clamp(0.0, 255.0) as u8
}

impl ImageRecord {
    pub fn new(pixels: Tensor<f32>, source: impl Into<String>) -> Result<Self> {
        let (n, c, _, _) = pixels.dims4("image")?;
        if n != 1 || c != 3 {
            return Err(Error::Data(format!("image tensor must be [1,3,H,W], got {:?}", pixels.shape())));
        }
        Ok(ImageRecord { pixels, source: source.into() })
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[2]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[3]
    }

    /// Interleaved RGB bytes.
    pub fn to_rgb_bytes(&self) -> Vec<u8> {
        let (h, w) = (self.height(), self.width());
        let d = self.pixels.data();
        let mut out = Vec::with_capacity(3 * h * w);
        for i in 0..h * w {
            for c in 0..3 {
                out.push(unit_to_byte(d[c * h * w + i]));
            }
        }
        out
    }

    pub fn from_rgb_bytes(h: usize, w: usize, bytes: &[u8], source: impl Into<String>) -> Result<Self> {
        if bytes.len() != 3 * h * w {
            return Err(Error::Codec(format!("expected {} RGB bytes, got {}", 3 * h * w, bytes.len())));
        }
        let mut data = vec![0f32; 3 * h * w];
        for i in 0..h * w {
            for c in 0..3 {
                data[c * h * w + i] = byte_to_unit(bytes[3 * i + c]);
            }
        }
        ImageRecord::new(Tensor::from_vec(&[1, 3, h, w], data)?, source)
    }
}

struct Raw {
    h: usize,
    w: usize,
    channels: usize,
    bytes: Vec<u8>,
}

fn decode_png(bytes: &[u8]) -> Result<Raw> {
    let codec = |e: png::DecodingError| Error::Codec(format!("png: {e}"));
    let mut reader = png::Decoder::new(Cursor::new(bytes)).read_info().map_err(codec)?;
    let (color, depth) = reader.output_color_type();
    if depth != png::BitDepth::Eight {
        return Err(Error::Codec(format!("unsupported bit depth {depth:?}; only 8-bit images are accepted")));
    }
    let channels = match color {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err(Error::Codec("indexed png is not supported".into())),
    };
    let size = reader.output_buffer_size().ok_or_else(|| Error::Codec("png: image too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(codec)?;
    buf.truncate(info.buffer_size());
    Ok(Raw { h: info.height as usize, w: info.width as usize, channels, bytes: buf })
}

fn decode_pnm(bytes: &[u8]) -> Result<Raw> {
    let channels = match &bytes[..2] {
        b"P6" => 3,
        b"P5" => 1,
        _ => return Err(Error::Codec("bad magic".into())),
    };
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for f in &mut fields {
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err(Error::Codec("truncated pnm header".into())),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(u8::is_ascii_digit) {
            pos += 1;
        }
        *f = std::str::from_utf8(&bytes[start..pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Codec("malformed pnm header".into()))?;
    }
    if !bytes.get(pos).is_some_and(u8::is_ascii_whitespace) {
        return Err(Error::Codec("malformed pnm header".into()));
    }
    pos += 1;
    let [w, h, maxval] = fields;
    if maxval != 255 {
        return Err(Error::Codec(format!("unsupported bit depth: maxval {maxval}, only 255 is accepted")));
    }
    if w == 0 || h == 0 {
        return Err(Error::Codec("zero image extent".into()));
    }
    let need = w * h * channels;
    let body = &bytes[pos..];
    if body.len() < need {
        return Err(Error::Codec(format!("truncated pnm data: {} of {need} bytes", body.len())));
    }
    Ok(Raw { h, w, channels, bytes: body[..need].to_vec() })
}

fn decode_raw(bytes: &[u8]) -> Result<Raw> {
    if bytes.starts_with(b"\x89PNG") {
        decode_png(bytes)
    } else if bytes.len() >= 2 && bytes[0] == b'P' {
        decode_pnm(bytes)
    } else {
        Err(Error::Codec("bad magic: neither PNG nor binary PPM/PGM".into()))
    }
}

/// PNG (8-bit gray/RGB/RGBA, alpha dropped, gray replicated) or binary PPM.
pub fn decode_image(bytes: &[u8], source: &str) -> Result<ImageRecord> {
    let raw = decode_raw(bytes)?;
    let rgb: Vec<u8> = match raw.channels {
        3 => raw.bytes,
        c => raw
            .bytes
            .chunks_exact(c)
            .flat_map(|px| if c >= 3 { [px[0], px[1], px[2]] } else { [px[0]; 3] })
            .collect(),
    };
    ImageRecord::from_rgb_bytes(raw.h, raw.w, &rgb, source)
}

pub fn encode_image(rec: &ImageRecord, format: ImageFormat) -> Result<Vec<u8>> {
    encode_raw(rec.height(), rec.width(), 3, &rec.to_rgb_bytes(), format)
}

/// Single-channel 8-bit class ids (PNG grayscale or PGM).
pub fn decode_labels(bytes: &[u8], source: &str) -> Result<LabelMap> {
    let raw = decode_raw(bytes)?;
    if raw.channels != 1 {
        return Err(Error::Codec(format!("label map must be single-channel, got {} channels", raw.channels)));
    }
    Ok(LabelMap { h: raw.h, w: raw.w, labels: raw.bytes, source: source.to_string() })
}

pub fn encode_labels(map: &LabelMap, format: ImageFormat) -> Result<Vec<u8>> {
    encode_raw(map.h, map.w, 1, &map.labels, format)
}

fn encode_raw(h: usize, w: usize, channels: usize, bytes: &[u8], format: ImageFormat) -> Result<Vec<u8>> {
    match format {
        ImageFormat::Ppm => {
            let magic = if channels == 3 { "P6" } else { "P5" };
            let mut out = format!("{magic}\n{w} {h}\n255\n").into_bytes();
            out.extend_from_slice(bytes);
            Ok(out)
        }
        ImageFormat::Png => {
            let mut out = Vec::new();
            let mut enc = png::Encoder::new(&mut out, w as u32, h as u32);
            enc.set_color(if channels == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
            enc.set_depth(png::BitDepth::Eight);
            let codec = |e: png::EncodingError| Error::Codec(format!("png: {e}"));
            let mut writer = enc.write_header().map_err(codec)?;
            writer.write_image_data(bytes).map_err(codec)?;
            writer.finish().map_err(codec)?;
            Ok(out)
        }
    }
}

pub fn read_image(path: &Path) -> Result<ImageRecord> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_image(&bytes, &path.display().to_string())
        .map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_image(path: &Path, rec: &ImageRecord) -> Result<()> {
    let bytes = encode_image(rec, ImageFormat::from_path(path))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub fn read_labels(path: &Path) -> Result<LabelMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_labels(&bytes, &path.display().to_string()).map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

pub fn write_labels(path: &Path, map: &LabelMap) -> Result<()> {
    let bytes = encode_labels(map, ImageFormat::from_path(path))?;
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Source index for destination index `i`: `floor(i * src / dst)`.
pub fn nearest_index(i: usize, src: usize, dst: usize) -> usize {
    i * src / dst
}

/// Nearest-neighbour resize of an `[N, C, H, W]` tensor.
pub fn resize_nearest_tensor(x: &Tensor<f32>, h: usize, w: usize) -> Result<Tensor<f32>> {
    let (n, c, sh, sw) = x.dims4("resize_nearest")?;
    if h == 0 || w == 0 {
        return Err(Error::shape("resize_nearest", format!("target {h}x{w} must be positive")));
    }
    let d = x.data();
    let mut out = Vec::with_capacity(n * c * h * w);
    for plane in 0..n * c {
        for i in 0..h {
            let row = plane * sh * sw + nearest_index(i, sh, h) * sw;
            out.extend((0..w).map(|j| d[row + nearest_index(j, sw, w)]));
        }
    }
    Tensor::from_vec(&[n, c, h, w], out)
}

pub fn resize_nearest(rec: &ImageRecord, h: usize, w: usize) -> Result<ImageRecord> {
    ImageRecord::new(resize_nearest_tensor(&rec.pixels, h, w)?, rec.source.clone())
}

pub fn resize_labels(map: &LabelMap, h: usize, w: usize) -> Result<LabelMap> {
    if h == 0 || w == 0 {
        return Err(Error::shape("resize_nearest", format!("target {h}x{w} must be positive")));
    }
    let mut labels = Vec::with_capacity(h * w);
    for i in 0..h {
        let row = nearest_index(i, map.h, h) * map.w;
        labels.extend((0..w).map(|j| map.labels[row + nearest_index(j, map.w, w)]));
    }
    Ok(LabelMap { h, w, labels, source: map.source.clone() })
}
