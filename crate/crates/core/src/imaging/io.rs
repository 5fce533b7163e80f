use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use super::Image;
use crate::error::{Error, Result};

/// Reads an 8-bit PNG into `[0, 1]`; grayscale stays single-channel, everything
/// else is converted to RGB.
pub fn read_png(path: &Path) -> Result<Image> {
    let img = image::open(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    match img {
        image::DynamicImage::ImageLuma8(g) => {
            Image::new(w, h, 1, g.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
        other => {
            let rgb = other.to_rgb8();
            Image::new(w, h, 3, rgb.into_raw().into_iter().map(|v| v as f64 / 255.0).collect())
        }
    }
}

pub fn write_png(path: &Path, img: &Image) -> Result<()> {
    let bytes: Vec<u8> = img
        .data()
        .iter()
        .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect();
    let (w, h) = (img.width() as u32, img.height() as u32);
    match img.channels() {
        1 => image::GrayImage::from_raw(w, h, bytes)
            .expect("buffer size")
            .save(path)?,
        _ => image::RgbImage::from_raw(w, h, bytes)
            .expect("buffer size")
            .save(path)?,
    }
    Ok(())
}

/// Decoded portable float map. Rows are stored top-to-bottom here.
#[derive(Clone, Debug, PartialEq)]
pub struct Pfm {
    pub width: usize,
    pub height: usize,
    pub channels: usize,
    pub data: Vec<f32>,
}

/// Writes `Pf` (one channel) or `PF` (three channels), little-endian.
pub fn write_pfm(path: &Path, width: usize, height: usize, channels: usize, data: &[f64]) -> Result<()> {
    if channels != 1 && channels != 3 {
        return Err(Error::ShapeMismatch(format!("PFM needs 1 or 3 channels, got {channels}")));
    }
    if data.len() != width * height * channels {
        return Err(Error::ShapeMismatch("PFM payload size".into()));
    }
    let mut out = BufWriter::new(File::create(path)?);
    let tag = if channels == 1 { "Pf" } else { "PF" };
    write!(out, "{tag}\n{width} {height}\n-1.0\n")?;
    let stride = width * channels;
    // PFM scanlines run bottom to top.
    for row in data.chunks(stride).rev() {
        for v in row {
            out.write_all(&(*v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

pub fn read_pfm(path: &Path) -> Result<Pfm> {
    let mut reader = BufReader::new(File::open(path)?);
    let bad = |line: usize, msg: &str| Error::Parse {
        path: path.to_path_buf(),
        line,
        msg: msg.to_string(),
    };
    let mut header = Vec::new();
    let mut line_no = 0;
    while header.len() < 4 {
        let mut line = String::new();
        if reader.read_line(&mut line)? == 0 {
            return Err(bad(line_no, "truncated header"));
        }
        line_no += 1;
        header.extend(line.split_whitespace().map(str::to_string));
    }
    let channels = match header[0].as_str() {
        "Pf" => 1,
        "PF" => 3,
        _ => return Err(bad(1, "expected Pf or PF")),
    };
    let width: usize = header[1].parse().map_err(|_| bad(2, "bad width"))?;
    let height: usize = header[2].parse().map_err(|_| bad(2, "bad height"))?;
    let scale: f64 = header[3].parse().map_err(|_| bad(3, "bad scale"))?;
    let little = scale < 0.0;

    let n = width * height * channels;
    let mut raw = vec![0u8; n * 4];
    reader.read_exact(&mut raw)?;
    let values: Vec<f32> = raw
        .chunks_exact(4)
        .map(|b| {
            let b = [b[0], b[1], b[2], b[3]];
            if little {
                f32::from_le_bytes(b)
            } else {
                f32::from_be_bytes(b)
            }
        })
        .collect();
    let stride = width * channels;
    let mut data = Vec::with_capacity(n);
    for row in values.chunks(stride.max(1)).rev() {
        data.extend_from_slice(row);
    }
    Ok(Pfm {
        width,
        height,
        channels,
        data,
    })
}
