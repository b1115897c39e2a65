//! Image files: binary PPM/PGM read and write, PNG read, heatmaps.

use std::fs;
use std::io::{BufRead, BufReader, Read};
use std::path::{Path, PathBuf};

use crate::error::{Error, Result};
use crate::image::{ColorSpace, PlanarImage, SampleRange};

/// Parses a binary PPM (P6) or PGM (P5) with maxval 255.
pub fn decode_pnm(bytes: &[u8]) -> Result<PlanarImage> {
    let bad = |d: &str| Error::format("PNM image", d.to_string());
    let mut pos = 0usize;
    let mut fields = Vec::with_capacity(4);
    while fields.len() < 4 {
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
        if start == pos {
            return Err(bad("truncated header"));
        }
        fields.push(std::str::from_utf8(&bytes[start..pos]).map_err(|_| bad("header is not ASCII"))?);
    }
    // Exactly one whitespace byte separates the header from the raster.
    pos += 1;
    let channels = match fields[0] {
        "P6" => 3,
        "P5" => 1,
        m => return Err(bad(&format!("unsupported magic `{m}`"))),
    };
    let num = |s: &str| s.parse::<usize>().map_err(|_| bad("bad header number"));
    let (w, h, max) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
    if max != 255 {
        return Err(bad("only maxval 255 is supported"));
    }
    let len = w * h * channels;
    let raster = bytes.get(pos..pos + len).ok_or_else(|| bad("raster is truncated"))?;
    let values: Vec<f64> = raster.iter().map(|&b| f64::from(b)).collect();
    let space = if channels == 3 { ColorSpace::Rgb } else { ColorSpace::Gray };
    PlanarImage::from_interleaved(h, w, channels, space, SampleRange::Byte, &values)
}

/// Encodes a byte-range image as P6 (three channels) or P5 (one channel).
/// Samples are clamped to [0, 255] and rounded.
pub fn encode_pnm(image: &PlanarImage) -> Result<Vec<u8>> {
    let magic = match image.channels() {
        3 => "P6",
        1 => "P5",
        c => return Err(Error::invalid(format!("cannot write a {c}-channel image as PNM"))),
    };
    let byte = image.to_range(SampleRange::Byte);
    let mut out = format!("{magic}\n{} {}\n255\n", image.width(), image.height()).into_bytes();
    out.extend(byte.to_interleaved().iter().map(|v| v.clamp(0.0, 255.0).round() as u8));
    Ok(out)
}

/// Decodes an 8-bit PNG. Alpha is dropped; grey and palette images expand to RGB.
pub fn decode_png(bytes: &[u8]) -> Result<PlanarImage> {
    let bad = |d: String| Error::format("PNG image", d);
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND | png::Transformations::STRIP_16);
    let mut reader = decoder.read_info().map_err(|e| bad(e.to_string()))?;
    let size = reader.output_buffer_size().ok_or_else(|| bad("image is too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(|e| bad(e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let stride = info.color_type.samples();
    let buf = &buf[..info.buffer_size()];
    let mut rgb = Vec::with_capacity(w * h * 3);
    for row in buf.chunks_exact(info.line_size) {
        for px in row[..w * stride].chunks_exact(stride) {
            match stride {
                1 | 2 => rgb.extend([px[0]; 3].map(f64::from)),
                _ => rgb.extend(px[..3].iter().map(|&b| f64::from(b))),
            }
        }
    }
    PlanarImage::from_interleaved(h, w, 3, ColorSpace::Rgb, SampleRange::Byte, &rgb)
}

/// Reads a PPM, PGM or PNG, choosing the decoder from the file signature.
pub fn read_image(path: &Path) -> Result<PlanarImage> {
    let mut bytes = Vec::new();
    BufReader::new(fs::File::open(path).map_err(|e| Error::io(path, e))?)
        .read_to_end(&mut bytes)
        .map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(b"\x89PNG") {
        decode_png(&bytes)
    } else {
        decode_pnm(&bytes)
    }
}

/// Reads an image as RGB, expanding a grey image to three equal planes.
pub fn read_rgb(path: &Path) -> Result<PlanarImage> {
    let img = read_image(path)?;
    if img.channels() == 3 {
        return Ok(img);
    }
    let plane = img.plane(0).to_vec();
    let data = [plane.clone(), plane.clone(), plane].concat();
    PlanarImage::new(img.height(), img.width(), 3, ColorSpace::Rgb, SampleRange::Byte, data)
}

pub fn write_pnm(path: &Path, image: &PlanarImage) -> Result<()> {
    fs::write(path, encode_pnm(image)?).map_err(|e| Error::io(path, e))
}

/// Image files (`.ppm`, `.pgm`, `.pnm`, `.png`) directly inside `dir`, sorted by name.
pub fn list_images(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        let path = entry.map_err(|e| Error::io(dir, e))?.path();
        let ext = path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase);
        if path.is_file() && matches!(ext.as_deref(), Some("ppm" | "pgm" | "pnm" | "png")) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

/// Renders a row-major grid as a P6 heatmap, black at the minimum and
/// yellow-white at the maximum, each cell drawn as `cell`×`cell` pixels.
pub fn heatmap_ppm(values: &[f64], rows: usize, cols: usize, cell: usize) -> Result<Vec<u8>> {
    if values.len() != rows * cols || cell == 0 {
        return Err(Error::shape(format!("heatmap of {rows}x{cols} needs {} values", rows * cols)));
    }
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = if hi > lo { hi - lo } else { 1.0 };
    let (h, w) = (rows * cell, cols * cell);
    let mut data = vec![0.0; 3 * h * w];
    for y in 0..h {
        for x in 0..w {
            let t = (values[(y / cell) * cols + x / cell] - lo) / span;
            let rgb = [(3.0 * t).min(1.0), (3.0 * t - 1.0).clamp(0.0, 1.0), (3.0 * t - 2.0).clamp(0.0, 1.0)];
            for (c, v) in rgb.iter().enumerate() {
                data[c * h * w + y * w + x] = (v * 255.0).round();
            }
        }
    }
    encode_pnm(&PlanarImage::new(h, w, 3, ColorSpace::Rgb, SampleRange::Byte, data)?)
}

/// Reads a text file line by line, skipping blanks and `#` comments.
pub fn read_lines(path: &Path) -> Result<Vec<String>> {
    let file = fs::File::open(path).map_err(|e| Error::io(path, e))?;
    let mut out = Vec::new();
    for line in BufReader::new(file).lines() {
        let line = line.map_err(|e| Error::io(path, e))?;
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            out.push(t.to_string());
        }
    }
    Ok(out)
}
