//! 8-bit grayscale PGM/PNG codecs and bilinear resizing.

use std::fs;
use std::io::{BufReader, Cursor};
use std::path::Path;

use crate::error::{Error, Result};

/// Grayscale raster with intensities in `[0, 1]`, row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<f32>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize, pixels: Vec<f32>) -> Self {
        assert_eq!(pixels.len(), width * height, "pixel count");
        Self { width, height, pixels }
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.pixels[y * self.width + x]
    }
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

/// Decodes a `.pgm` (P5) or `.png` file by extension.
pub fn read_gray(path: &Path) -> Result<GrayImage> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match extension(path).as_deref() {
        Some("pgm") => decode_pgm(&bytes).map_err(|r| format_err(path, r)),
        Some("png") => decode_png(&bytes).map_err(|r| format_err(path, r)),
        _ => Err(format_err(path, "not a .pgm or .png file")),
    }
}

pub(crate) fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase)
}

/// Binary PGM (P5). 16-bit rasters (maxval > 255) are accepted as well.
pub fn decode_pgm(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut pos = 0;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
        // Skip whitespace and comments.
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while bytes.get(pos).is_some_and(|&b| b != b'\n') {
                        pos += 1;
                    }
                }
                Some(_) => break,
                None => return Err("truncated header".into()),
            }
        }
        let start = pos;
        while bytes.get(pos).is_some_and(|b| !b.is_ascii_whitespace() && *b != b'#') {
            pos += 1;
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| "non-ASCII header")?);
    }
    if fields[0] != "P5" {
        return Err(format!("magic `{}` is not P5", fields[0]));
    }
    let parse = |s: &str, what: &str| s.parse::<usize>().map_err(|_| format!("bad {what} `{s}`"));
    let width = parse(fields[1], "width")?;
    let height = parse(fields[2], "height")?;
    let maxval = parse(fields[3], "maxval")?;
    if width == 0 || height == 0 || maxval == 0 || maxval > 65535 {
        return Err(format!("invalid header {width}x{height} maxval {maxval}"));
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let n = width * height;
    let raster = bytes.get(pos..).unwrap_or_default();
    let maxval_f = maxval as f32;
    let pixels = if maxval < 256 {
        if raster.len() < n {
            return Err(format!("raster has {} bytes, expected {n}", raster.len()));
        }
        raster[..n].iter().map(|&v| (v as f32 / maxval_f).min(1.0)).collect()
    } else {
        if raster.len() < 2 * n {
            return Err(format!("raster has {} bytes, expected {}", raster.len(), 2 * n));
        }
        raster[..2 * n]
            .chunks_exact(2)
            .map(|c| (u16::from_be_bytes([c[0], c[1]]) as f32 / maxval_f).min(1.0))
            .collect()
    };
    Ok(GrayImage::new(width, height, pixels))
}

/// Quantizes `[0, 1]` intensities to 8 bits.
pub fn quantize(v: f32) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

pub fn encode_pgm(img: &GrayImage) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.pixels.iter().map(|&v| quantize(v)));
    out
}

pub fn write_pgm(path: &Path, img: &GrayImage) -> Result<()> {
    fs::write(path, encode_pgm(img)).map_err(|e| Error::io(path, e))
}

/// PNG of any color type, converted to 8-bit luma (ITU-R BT.601 weights).
pub fn decode_png(bytes: &[u8]) -> std::result::Result<GrayImage, String> {
    let mut decoder = png::Decoder::new(BufReader::new(Cursor::new(bytes)));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let mut reader = decoder.read_info().map_err(|e| e.to_string())?;
    let size = reader.output_buffer_size().ok_or("image too large")?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| e.to_string())?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => return Err("indexed PNG was not expanded".into()),
    };
    let mut pixels = Vec::with_capacity(w * h);
    for row in buf.chunks(info.line_size).take(h) {
        for px in row.chunks_exact(channels).take(w) {
            let v = if channels >= 3 {
                0.299 * px[0] as f32 + 0.587 * px[1] as f32 + 0.114 * px[2] as f32
            } else {
                px[0] as f32
            };
            pixels.push((v / 255.0).clamp(0.0, 1.0));
        }
    }
    Ok(GrayImage::new(w, h, pixels))
}

/// Bilinear resampling with half-pixel centers: output pixel `o` samples
/// source coordinate `(o + 0.5) * in / out - 0.5`, clamped to the image.
pub fn resize_bilinear(img: &GrayImage, width: usize, height: usize) -> GrayImage {
    if img.width == width && img.height == height {
        return img.clone();
    }
    let axis = |n_in: usize, n_out: usize| -> Vec<(usize, usize, f32)> {
        let scale = n_in as f64 / n_out as f64;
        (0..n_out)
            .map(|o| {
                let src = ((o as f64 + 0.5) * scale - 0.5).clamp(0.0, (n_in - 1) as f64);
                let i0 = src.floor() as usize;
                let i1 = (i0 + 1).min(n_in - 1);
                (i0, i1, (src - i0 as f64) as f32)
            })
            .collect()
    };
    let xs = axis(img.width, width);
    let ys = axis(img.height, height);
    let mut pixels = Vec::with_capacity(width * height);
    for &(y0, y1, wy) in &ys {
        for &(x0, x1, wx) in &xs {
            let top = img.at(x0, y0) * (1.0 - wx) + img.at(x1, y0) * wx;
            let bottom = img.at(x0, y1) * (1.0 - wx) + img.at(x1, y1) * wx;
            pixels.push(top * (1.0 - wy) + bottom * wy);
        }
    }
    GrayImage::new(width, height, pixels)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_round_trip_and_comments() {
        let img = GrayImage::new(3, 2, vec![0.0, 0.5, 1.0, 0.25, 0.75, 1.0]);
        let bytes = encode_pgm(&img);
        let back = decode_pgm(&bytes).unwrap();
        assert_eq!(back.width, 3);
        for (a, b) in back.pixels.iter().zip(&img.pixels) {
            assert!((a - b).abs() <= 0.5 / 255.0 + 1e-6);
        }
        let commented = b"P5\n# made by hand\n2 1\n# max\n255\n\x00\xff";
        assert_eq!(decode_pgm(commented).unwrap().pixels, vec![0.0, 1.0]);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P2\n1 1\n255\n0").is_err());
        assert!(decode_pgm(b"P5\n4 4\n255\n\x00").is_err());
        assert!(decode_pgm(b"P5\n").is_err());
    }

    #[test]
    fn png_gray_and_rgb_decode() {
        let encode = |color: png::ColorType, data: &[u8], w: u32| {
            let mut out = Vec::new();
            {
                let mut enc = png::Encoder::new(&mut out, w, 1);
                enc.set_color(color);
                enc.set_depth(png::BitDepth::Eight);
                let mut wr = enc.write_header().unwrap();
                wr.write_image_data(data).unwrap();
            }
            out
        };
        let gray = decode_png(&encode(png::ColorType::Grayscale, &[0, 255, 51], 3)).unwrap();
        assert_eq!(gray.pixels, vec![0.0, 1.0, 0.2]);
        let rgb = decode_png(&encode(png::ColorType::Rgb, &[255, 255, 255, 0, 0, 0], 2)).unwrap();
        assert!((rgb.pixels[0] - 1.0).abs() < 1e-6 && rgb.pixels[1] == 0.0);
    }

    #[test]
    fn resize_identity_and_constant() {
        let img = GrayImage::new(4, 4, (0..16).map(|i| i as f32 / 15.0).collect());
        assert_eq!(resize_bilinear(&img, 4, 4), img);
        let flat = GrayImage::new(5, 3, vec![0.3; 15]);
        let r = resize_bilinear(&flat, 7, 2);
        assert!(r.pixels.iter().all(|&v| (v - 0.3).abs() < 1e-6));
    }
}
