//! Binary PPM frames and PGM density exports.

use vidcount_core::data::Image;

use crate::error::{CliError, Result};

fn to_byte(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

/// `P6` with maxval 255; channel values are clamped to `[0, 1]` and rounded.
pub fn encode_ppm(img: &Image) -> Vec<u8> {
    let mut out = format!("P6\n{} {}\n255\n", img.width, img.height).into_bytes();
    out.extend(img.data.iter().map(|&v| to_byte(v)));
    out
}

/// Reads the next whitespace-delimited header token, skipping `#` comments.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a [u8]> {
    loop {
        while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
            *pos += 1;
        }
        if *pos < bytes.len() && bytes[*pos] == b'#' {
            while *pos < bytes.len() && bytes[*pos] != b'\n' {
                *pos += 1;
            }
            continue;
        }
        break;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(CliError::Data("truncated PNM header".into()));
    }
    Ok(&bytes[start..*pos])
}

fn header_number(bytes: &[u8], pos: &mut usize, what: &str) -> Result<usize> {
    let tok = header_token(bytes, pos)?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| CliError::Data(format!("PNM header: bad {what} '{}'", String::from_utf8_lossy(tok))))
}

/// Decodes a `P6` image with maxval below 256; values are scaled to `[0, 1]`.
pub fn decode_ppm(bytes: &[u8]) -> Result<Image> {
    let mut pos = 0;
    if header_token(bytes, &mut pos)? != b"P6" {
        return Err(CliError::Data("not a binary PPM (expected P6)".into()));
    }
    let width = header_number(bytes, &mut pos, "width")?;
    let height = header_number(bytes, &mut pos, "height")?;
    let maxval = header_number(bytes, &mut pos, "maxval")?;
    if maxval == 0 || maxval > 255 {
        return Err(CliError::Data(format!("PPM maxval {maxval} not supported")));
    }
    // exactly one whitespace byte separates the header from the raster
    pos += 1;
    let n = width * height * 3;
    let raster = bytes
        .get(pos..pos + n)
        .ok_or_else(|| CliError::Data(format!("PPM raster truncated: need {n} bytes for {width}x{height}")))?;
    let scale = maxval as f64;
    Ok(Image::new(height, width, raster.iter().map(|&b| b as f64 / scale).collect())?)
}

/// `P5` export of a non-negative grid scaled so its maximum maps to 255.
/// Returns the bytes and the scale factor (density units per grey level);
/// an all-zero grid gets scale 0.
pub fn encode_density_pgm(grid: &[f64], height: usize, width: usize) -> Result<(Vec<u8>, f64)> {
    if grid.len() != height * width {
        return Err(CliError::Data(format!("density grid has {} values, expected {height}x{width}", grid.len())));
    }
    if grid.iter().any(|v| !v.is_finite()) {
        return Err(CliError::Numeric("density grid is not finite".into()));
    }
    let max = grid.iter().copied().fold(0.0, f64::max);
    let scale = max / 255.0;
    let mut out = format!("P5\n{width} {height}\n255\n").into_bytes();
    out.extend(grid.iter().map(|&v| if max > 0.0 { (v.max(0.0) / scale).round().min(255.0) as u8 } else { 0 }));
    Ok((out, scale))
}

/// Sidecar text recording the grey-level scale of a density export.
pub fn density_sidecar(scale: f64, total: f64) -> String {
    format!("scale {scale:e}\ntotal {total:.6}\n")
}

/// Draws a 3x3 plus sign centred on pixel `(x, y)`, clipped at the border.
pub fn draw_cross(img: &mut Image, x: usize, y: usize, rgb: [f64; 3]) {
    let offsets: [(isize, isize); 5] = [(0, 0), (-1, 0), (1, 0), (0, -1), (0, 1)];
    for (dx, dy) in offsets {
        let (px, py) = (x as isize + dx, y as isize + dy);
        if px >= 0 && py >= 0 && (px as usize) < img.width && (py as usize) < img.height {
            img.set_pixel(py as usize, px as usize, rgb);
        }
    }
}
