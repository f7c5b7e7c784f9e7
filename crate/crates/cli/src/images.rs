//! Plane input/output for the `sr` command: raw little-endian `f32` planes
//! (CHW, as in sample directories) and 8-bit PNG previews.

use std::fs::{self, File};
use std::io::BufWriter;
use std::path::Path;

use xrds::metrics::srgb_encode;
use xrds::FeatureMap;

/// How 8-bit PNG values map to linear values.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PngEncoding {
    /// sRGB-encoded colour (radiance previews, albedo).
    Srgb,
    /// `v / 255 * 2 - 1` (normal maps).
    SignedUnit,
}

fn srgb_decode(e: f64) -> f64 {
    if e <= 0.04045 {
        e / 12.92
    } else {
        ((e + 0.055) / 1.055).powf(2.4)
    }
}

pub fn is_png(path: &Path) -> bool {
    path.extension().is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Reads a 3-channel PNG (grayscale and alpha are expanded or dropped).
pub fn read_png(path: &Path, encoding: PngEncoding) -> Result<FeatureMap, String> {
    let file = File::open(path).map_err(|e| format!("cannot open {}: {e}", path.display()))?;
    let mut decoder = png::Decoder::new(file);
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| format!("cannot decode {}: {e}", path.display()))?;
    let mut buf = vec![0; reader.output_buffer_size()];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| format!("cannot decode {}: {e}", path.display()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.color_type.samples();
    let pixel = |y: usize, x: usize, c: usize| -> f64 {
        let base = (y * w + x) * stride;
        let v = if stride < 3 { buf[base] } else { buf[base + c] };
        v as f64 / 255.0
    };
    Ok(FeatureMap::from_fn(3, h, w, |c, y, x| {
        let v = pixel(y, x, c);
        (match encoding {
            PngEncoding::Srgb => srgb_decode(v),
            PngEncoding::SignedUnit => v * 2.0 - 1.0,
        }) as f32
    }))
}

/// Reads a raw 3-channel plane of known size.
pub fn read_raw(path: &Path, height: usize, width: usize, what: &str) -> Result<FeatureMap, String> {
    let bytes = fs::read(path).map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    let expected = 3 * height * width * 4;
    if bytes.len() != expected {
        let pixels = bytes.len() / 12;
        let side = (pixels as f64).sqrt().round() as usize;
        let hint = if side * side * 12 == bytes.len() {
            format!(" (a square 3x{side}x{side} plane)")
        } else {
            String::new()
        };
        return Err(format!(
            "{what}: expected 3x{height}x{width} ({expected} bytes), got {} bytes{hint}",
            bytes.len()
        ));
    }
    let values = bytes
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
        .collect();
    FeatureMap::new(3, height, width, values).map_err(|e| e.to_string())
}

/// 8-bit sRGB preview value: round-half-even of `255 * srgb(v)`.
pub fn preview_byte(v: f32) -> u8 {
    (srgb_encode(v as f64) * 255.0).round_ties_even() as u8
}

pub fn encode_png(map: &FeatureMap) -> Result<Vec<u8>, String> {
    let (c, h, w) = map.dims();
    if c != 3 {
        return Err(format!("PNG preview needs 3 channels, got {c}"));
    }
    let mut data = Vec::with_capacity(h * w * 3);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..3 {
                data.push(preview_byte(map.get(ch, y, x)));
            }
        }
    }
    let mut out = Vec::new();
    {
        let mut enc = png::Encoder::new(BufWriter::new(&mut out), w as u32, h as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        enc.set_source_srgb(png::SrgbRenderingIntent::Perceptual);
        let mut writer = enc.write_header().map_err(|e| e.to_string())?;
        writer.write_image_data(&data).map_err(|e| e.to_string())?;
    }
    Ok(out)
}

pub fn encode_raw(map: &FeatureMap) -> Vec<u8> {
    xrds::data_io::encode_plane(map)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_rounds_half_to_even() {
        assert_eq!(preview_byte(0.0), 0);
        assert_eq!(preview_byte(1.0), 255);
        assert_eq!(preview_byte(7.0), 255);
        assert_eq!(preview_byte(-1.0), 0);
    }

    #[test]
    fn png_round_trip_through_srgb() {
        let map = FeatureMap::from_fn(3, 4, 5, |c, y, x| ((c + y + x) as f32 / 12.0).min(1.0));
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        fs::write(&path, encode_png(&map).unwrap()).unwrap();
        let back = read_png(&path, PngEncoding::Srgb).unwrap();
        assert_eq!(back.dims(), (3, 4, 5));
        for (a, b) in map.values().iter().zip(back.values()) {
            assert!((a - b).abs() < 0.01, "{a} vs {b}");
        }
    }
}
