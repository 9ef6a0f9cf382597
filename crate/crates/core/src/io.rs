//! On-disk raster formats: grayscale PFM score maps and 16-bit PNG label
//! maps.
//!
//! PFM output is always `Pf\n<w> <h>\n-1.0\n` followed by little-endian
//! `f32` rows stored bottom row first, as the format prescribes.

use std::fs;
use std::io::{BufWriter, Write};
use std::path::Path;

use image::{ImageBuffer, Luma};

use crate::error::{Error, Result};
use crate::grid::{Grid, LabelMap, RgbGrid, ScoreMap};
use crate::synthgen::RgbImage;

pub fn encode_pfm(map: &Grid<f32>) -> Vec<u8> {
    let (h, w) = map.dims();
    let mut out = format!("Pf\n{w} {h}\n-1.0\n").into_bytes();
    out.reserve(h * w * 4);
    for r in (0..h).rev() {
        for &v in map.row(r) {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Reads one whitespace-delimited header token starting at `*pos`.
fn header_token<'a>(bytes: &'a [u8], pos: &mut usize) -> Result<&'a str> {
    while *pos < bytes.len() && bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    let start = *pos;
    while *pos < bytes.len() && !bytes[*pos].is_ascii_whitespace() {
        *pos += 1;
    }
    if start == *pos {
        return Err(Error::Pfm("truncated header".into()));
    }
    std::str::from_utf8(&bytes[start..*pos]).map_err(|_| Error::Pfm("non-ASCII header".into()))
}

/// Decodes a grayscale PFM. Big-endian files (positive scale) are accepted;
/// color (`PF`) files are rejected. Returns the map and the number of bytes
/// consumed.
pub fn decode_pfm_prefix(bytes: &[u8]) -> Result<(ScoreMap, usize)> {
    let mut pos = 0;
    match header_token(bytes, &mut pos)? {
        "Pf" => {}
        "PF" => return Err(Error::Pfm("color PFM is not a score map".into())),
        other => return Err(Error::Pfm(format!("bad magic {other:?}"))),
    }
    let parse_dim = |s: &str| {
        s.parse::<usize>()
            .map_err(|_| Error::Pfm(format!("bad dimension {s:?}")))
    };
    let w = parse_dim(header_token(bytes, &mut pos)?)?;
    let h = parse_dim(header_token(bytes, &mut pos)?)?;
    let scale_token = header_token(bytes, &mut pos)?;
    let scale: f32 = scale_token
        .parse()
        .map_err(|_| Error::Pfm(format!("bad scale {scale_token:?}")))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::Pfm(format!("bad scale {scale}")));
    }
    // exactly one whitespace byte separates the header from the raster
    if pos >= bytes.len() || !bytes[pos].is_ascii_whitespace() {
        return Err(Error::Pfm("missing raster".into()));
    }
    pos += 1;
    let need = h
        .checked_mul(w)
        .and_then(|n| n.checked_mul(4))
        .ok_or_else(|| Error::Pfm("dimensions overflow".into()))?;
    if h == 0 || w == 0 {
        return Err(Error::Pfm(format!("empty raster {w}x{h}")));
    }
    if bytes.len() < pos + need {
        return Err(Error::Pfm(format!(
            "raster truncated: {} of {need} bytes",
            bytes.len() - pos
        )));
    }
    let raster = &bytes[pos..pos + need];
    let little = scale < 0.0;
    let mut data = vec![0f32; h * w];
    for (k, chunk) in raster.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little {
            f32::from_le_bytes(b)
        } else {
            f32::from_be_bytes(b)
        };
        let (file_row, c) = (k / w, k % w);
        data[(h - 1 - file_row) * w + c] = v;
    }
    Ok((Grid::from_vec(h, w, data)?, pos + need))
}

pub fn decode_pfm(bytes: &[u8]) -> Result<ScoreMap> {
    let (map, used) = decode_pfm_prefix(bytes)?;
    if used != bytes.len() {
        return Err(Error::Pfm(format!(
            "{} trailing bytes after raster",
            bytes.len() - used
        )));
    }
    Ok(map)
}

pub fn write_pfm(path: &Path, map: &ScoreMap) -> Result<()> {
    let mut f = BufWriter::new(fs::File::create(path)?);
    f.write_all(&encode_pfm(map))?;
    f.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<ScoreMap> {
    decode_pfm(&fs::read(path)?)
}

/// Reads a score map and checks every value lies in `[0, 1]`.
pub fn read_score_map(path: &Path) -> Result<ScoreMap> {
    let map = read_pfm(path)?;
    map.validate_scores()?;
    Ok(map)
}

pub fn label_map_to_image(labels: &LabelMap) -> Result<ImageBuffer<Luma<u16>, Vec<u16>>> {
    let data = labels
        .as_slice()
        .iter()
        .map(|&l| u16::try_from(l).map_err(|_| Error::LabelOverflow(l)))
        .collect::<Result<Vec<u16>>>()?;
    Ok(ImageBuffer::from_raw(labels.width() as u32, labels.height() as u32, data)
        .expect("buffer sized to grid"))
}

pub fn write_label_png(path: &Path, labels: &LabelMap) -> Result<()> {
    label_map_to_image(labels)?.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads a grayscale PNG of any bit depth as a label map.
pub fn read_label_png(path: &Path) -> Result<LabelMap> {
    let img = image::open(path)?.into_luma16();
    let (w, h) = img.dimensions();
    let data = img.into_raw().into_iter().map(u32::from).collect();
    Grid::from_vec(h as usize, w as usize, data)
}

pub fn write_rgb_png(path: &Path, image: &RgbImage) -> Result<()> {
    image.save_with_format(path, image::ImageFormat::Png)?;
    Ok(())
}

/// Reads any supported image as 8-bit RGB.
pub fn read_rgb_png(path: &Path) -> Result<RgbGrid> {
    let img = image::open(path)?.into_rgb8();
    let (w, h) = img.dimensions();
    let data = img.pixels().map(|p| p.0).collect();
    Grid::from_vec(h as usize, w as usize, data)
}
