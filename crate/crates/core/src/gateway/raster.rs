//! Small PNG helpers for the stub backends.

use std::io::Cursor;

use image::{ImageFormat, Rgb, RgbImage};

use crate::error::{Error, Result};
use crate::htmlkit::Rect;

pub type Color = [u8; 3];

pub fn encode(img: &RgbImage) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    img.write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Render {
            message: format!("png encoding failed: {e}"),
            log_excerpt: String::new(),
        })?;
    Ok(out.into_inner())
}

pub fn decode(png: &[u8]) -> Result<RgbImage> {
    image::load_from_memory_with_format(png, ImageFormat::Png)
        .map(|img| img.to_rgb8())
        .map_err(|e| Error::InvalidInput(format!("not a png image: {e}")))
}

pub fn solid(width: u32, height: u32, color: Color) -> Result<Vec<u8>> {
    encode(&RgbImage::from_pixel(width, height, Rgb(color)))
}

/// Width and height from the IHDR chunk, without decoding pixels.
pub fn png_dimensions(png: &[u8]) -> Result<(u32, u32)> {
    const SIGNATURE: &[u8] = b"\x89PNG\r\n\x1a\n";
    if png.len() < 24 || &png[..8] != SIGNATURE || &png[12..16] != b"IHDR" {
        return Err(Error::Render {
            message: "screenshot is not a png".into(),
            log_excerpt: String::new(),
        });
    }
    let be = |b: &[u8]| u32::from_be_bytes([b[0], b[1], b[2], b[3]]);
    Ok((be(&png[16..20]), be(&png[20..24])))
}

/// Fills `rect` (in pixels, clipped to the canvas).
pub fn fill_rect(img: &mut RgbImage, rect: &Rect, color: Color) {
    let (w, h) = img.dimensions();
    let x0 = rect.x.max(0.0).floor() as u32;
    let y0 = rect.y.max(0.0).floor() as u32;
    let x1 = ((rect.x + rect.w).ceil().max(0.0) as u32).min(w);
    let y1 = ((rect.y + rect.h).ceil().max(0.0) as u32).min(h);
    for y in y0..y1 {
        for x in x0..x1 {
            img.put_pixel(x, y, Rgb(color));
        }
    }
}

/// Parses `#rgb` / `#rrggbb`.
pub fn parse_hex_color(s: &str) -> Option<Color> {
    let hex = s.trim().strip_prefix('#')?;
    let expanded: String = match hex.len() {
        3 => hex.chars().flat_map(|c| [c, c]).collect(),
        6 => hex.to_owned(),
        _ => return None,
    };
    let v = u32::from_str_radix(&expanded, 16).ok()?;
    Some([(v >> 16) as u8, (v >> 8) as u8, v as u8])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn solid_roundtrip() {
        let png = solid(7, 3, [10, 20, 30]).unwrap();
        assert_eq!(png_dimensions(&png).unwrap(), (7, 3));
        let img = decode(&png).unwrap();
        assert_eq!(img.get_pixel(6, 2).0, [10, 20, 30]);
    }

    #[test]
    fn fill_is_clipped() {
        let mut img = RgbImage::new(4, 4);
        fill_rect(&mut img, &Rect::new(2.0, 2.0, 10.0, 10.0), [255, 0, 0]);
        assert_eq!(img.get_pixel(3, 3).0, [255, 0, 0]);
        assert_eq!(img.get_pixel(1, 1).0, [0, 0, 0]);
    }

    #[test]
    fn hex_colors() {
        assert_eq!(parse_hex_color("#fff"), Some([255, 255, 255]));
        assert_eq!(parse_hex_color("#102030"), Some([16, 32, 48]));
        assert_eq!(parse_hex_color("red"), None);
    }
}
