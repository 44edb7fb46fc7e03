//! File formats: PFM (linear radiance), PNG (gamma-encoded clipped images)
//! and the plain-text kernel grid.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{ClippedImage, Kernel2D, RadianceImage};

pub const DEFAULT_GAMMA: f64 = 2.2;

fn open(path: &Path) -> Result<BufReader<File>> {
    File::open(path)
        .map(BufReader::new)
        .map_err(|e| Error::io(path, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    File::create(path)
        .map(BufWriter::new)
        .map_err(|e| Error::io(path, e))
}

fn read_token_line(r: &mut impl BufRead, path: &Path) -> Result<String> {
    let mut line = String::new();
    loop {
        line.clear();
        let n = r.read_line(&mut line).map_err(|e| Error::io(path, e))?;
        if n == 0 {
            return Err(Error::format("PFM", "unexpected end of header"));
        }
        let t = line.trim();
        if !t.is_empty() && !t.starts_with('#') {
            return Ok(t.to_string());
        }
    }
}

/// Reads a portable float map. Rows are stored bottom-to-top; the sign of the
/// scale field selects the byte order (negative = little endian). Values are
/// returned as-is (the absolute scale is not applied); negatives and NaN are
/// rejected by the radiance invariant.
pub fn read_pfm(path: impl AsRef<Path>) -> Result<RadianceImage> {
    let path = path.as_ref();
    let mut r = open(path)?;
    let channels = match read_token_line(&mut r, path)?.as_str() {
        "PF" => 3,
        "Pf" => 1,
        other => return Err(Error::format("PFM", format!("bad magic {other:?}"))),
    };
    let dims = read_token_line(&mut r, path)?;
    let mut it = dims.split_whitespace().map(str::parse::<usize>);
    let (w, h) = match (it.next(), it.next(), it.next()) {
        (Some(Ok(w)), Some(Ok(h)), None) if w > 0 && h > 0 => (w, h),
        _ => return Err(Error::format("PFM", format!("bad dimensions {dims:?}"))),
    };
    let scale: f64 = read_token_line(&mut r, path)?
        .parse()
        .map_err(|_| Error::format("PFM", "bad scale field"))?;
    if scale == 0.0 || !scale.is_finite() {
        return Err(Error::format("PFM", "scale must be non-zero"));
    }
    let little = scale < 0.0;
    let mut buf = vec![0u8; w * h * channels * 4];
    r.read_exact(&mut buf).map_err(|e| Error::io(path, e))?;
    let n = w * h;
    let mut data = vec![0.0; n * channels];
    for (i, chunk) in buf.chunks_exact(4).enumerate() {
        let b = [chunk[0], chunk[1], chunk[2], chunk[3]];
        let v = if little { f32::from_le_bytes(b) } else { f32::from_be_bytes(b) };
        let pix = i / channels;
        let c = i % channels;
        let (x, file_row) = (pix % w, pix / w);
        let y = h - 1 - file_row;
        data[c * n + y * w + x] = v as f64;
    }
    RadianceImage::new(w, h, channels, data)
}

/// Writes a little-endian PFM (scale field `-1.0`).
pub fn write_pfm(path: impl AsRef<Path>, img: &RadianceImage) -> Result<()> {
    let path = path.as_ref();
    let mut out = create(path)?;
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let magic = if c == 3 { "PF" } else { "Pf" };
    let mut bytes = Vec::with_capacity(w * h * c * 4 + 32);
    write!(bytes, "{magic}\n{w} {h}\n-1.0\n").expect("in-memory write");
    for y in (0..h).rev() {
        for x in 0..w {
            for ch in 0..c {
                bytes.extend_from_slice(&(img.get(x, y, ch) as f32).to_le_bytes());
            }
        }
    }
    out.write_all(&bytes)
        .and_then(|_| out.flush())
        .map_err(|e| Error::io(path, e))
}

/// Reads an 8- or 16-bit PNG as a clipped image, linearised by `gamma`.
/// Alpha is dropped; grayscale stays single-channel.
pub fn read_png(path: impl AsRef<Path>, gamma: f64) -> Result<ClippedImage> {
    let path = path.as_ref();
    let mut decoder = png::Decoder::new(open(path)?);
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder
        .read_info()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::format("PNG", "image too large"))?;
    let mut buf = vec![0u8; size];
    let info = reader
        .next_frame(&mut buf)
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    let (w, h) = (info.width as usize, info.height as usize);
    let (src_channels, out_channels) = match info.color_type {
        png::ColorType::Grayscale => (1, 1),
        png::ColorType::GrayscaleAlpha => (2, 1),
        png::ColorType::Rgb => (3, 3),
        png::ColorType::Rgba => (4, 3),
        png::ColorType::Indexed => return Err(Error::format("PNG", "unexpanded palette")),
    };
    let (max, bytes) = match info.bit_depth {
        png::BitDepth::Sixteen => (65535.0, 2),
        png::BitDepth::Eight => (255.0, 1),
        d => return Err(Error::format("PNG", format!("unsupported bit depth {d:?}"))),
    };
    let n = w * h;
    let mut data = vec![0.0; n * out_channels];
    for y in 0..h {
        let line = &buf[y * info.line_size..(y + 1) * info.line_size];
        for x in 0..w {
            for c in 0..out_channels {
                let off = (x * src_channels + c) * bytes;
                let raw = if bytes == 2 {
                    u16::from_be_bytes([line[off], line[off + 1]]) as f64
                } else {
                    line[off] as f64
                };
                data[c * n + y * w + x] = (raw / max).powf(gamma);
            }
        }
    }
    ClippedImage::from_data(w, h, out_channels, data)
}

/// Writes a 16-bit PNG, clamping to `[0, 1]` and gamma-encoding by `1 / gamma`.
pub fn write_png(path: impl AsRef<Path>, img: &RadianceImage, gamma: f64) -> Result<()> {
    let path = path.as_ref();
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut encoder = png::Encoder::new(create(path)?, w as u32, h as u32);
    encoder.set_color(if c == 3 { png::ColorType::Rgb } else { png::ColorType::Grayscale });
    encoder.set_depth(png::BitDepth::Sixteen);
    let mut bytes = Vec::with_capacity(w * h * c * 2);
    for y in 0..h {
        for x in 0..w {
            for ch in 0..c {
                let v = img.get(x, y, ch).clamp(0.0, 1.0).powf(1.0 / gamma);
                bytes.extend_from_slice(&((v * 65535.0).round() as u16).to_be_bytes());
            }
        }
    }
    let mut writer = encoder
        .write_header()
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    writer
        .write_image_data(&bytes)
        .map_err(|e| Error::format("PNG", e.to_string()))?;
    writer.finish().map_err(|e| Error::format("PNG", e.to_string()))
}

/// Loads either format by extension. PNG input is returned as radiance in `[0, 1]`.
pub fn read_image(path: impl AsRef<Path>, gamma: f64) -> Result<RadianceImage> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()).map(str::to_ascii_lowercase).as_deref() {
        Some("pfm") => read_pfm(path),
        Some("png") => Ok(read_png(path, gamma)?.into_radiance()),
        _ => Err(Error::format("image", format!("{}: unknown extension", path.display()))),
    }
}

/// Kernel text format: a `"k k"` header line followed by `k` rows of `k` reals.
pub fn kernel_to_string(k: &Kernel2D) -> String {
    let mut s = format!("{} {}\n", k.width(), k.height());
    for row in k.taps().chunks(k.width()) {
        let line: Vec<String> = row.iter().map(|t| format!("{t:.12e}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s
}

pub fn parse_kernel(text: &str) -> Result<Kernel2D> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty());
    let header = lines.next().ok_or_else(|| Error::format("kernel", "empty file"))?;
    let dims: Vec<usize> = header
        .split_whitespace()
        .map(|t| t.parse().map_err(|_| Error::format("kernel", format!("bad header {header:?}"))))
        .collect::<Result<_>>()?;
    let (w, h) = match dims[..] {
        [w, h] => (w, h),
        _ => return Err(Error::format("kernel", format!("bad header {header:?}"))),
    };
    let mut taps = Vec::with_capacity(w * h);
    for (row, line) in lines.enumerate() {
        let vals: Vec<f64> = line
            .split_whitespace()
            .map(|t| t.parse().map_err(|_| Error::format("kernel", format!("bad tap {t:?}"))))
            .collect::<Result<_>>()?;
        if vals.len() != w {
            return Err(Error::format("kernel", format!("row {row} has {} taps, expected {w}", vals.len())));
        }
        taps.extend(vals);
    }
    if taps.len() != w * h {
        return Err(Error::format("kernel", format!("expected {h} rows")));
    }
    Kernel2D::new_rect(w, h, taps)
}

pub fn write_kernel(path: impl AsRef<Path>, k: &Kernel2D) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, kernel_to_string(k)).map_err(|e| Error::io(path, e))
}

pub fn read_kernel(path: impl AsRef<Path>) -> Result<Kernel2D> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_kernel(&text)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pfm_round_trip_is_exact_for_f32_values() {
        let dir = tempfile::tempdir().unwrap();
        let img = RadianceImage::from_fn(5, 3, 3, |x, y, c| (x + 10 * y + 100 * c) as f64 * 0.25).unwrap();
        let path = dir.path().join("a.pfm");
        write_pfm(&path, &img).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), img);

        let gray = RadianceImage::from_fn(4, 4, 1, |x, y, _| 1e4 * (x * y) as f64).unwrap();
        write_pfm(&path, &gray).unwrap();
        assert_eq!(read_pfm(&path).unwrap(), gray);
    }

    #[test]
    fn pfm_big_endian_and_bottom_up_rows() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("be.pfm");
        let mut bytes = b"Pf\n2 2\n1.0\n".to_vec();
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend_from_slice(&v.to_be_bytes());
        }
        std::fs::write(&path, bytes).unwrap();
        let img = read_pfm(&path).unwrap();
        // first stored row is the bottom one
        assert_eq!(img.get(0, 1, 0), 1.0);
        assert_eq!(img.get(1, 0, 0), 4.0);
    }

    #[test]
    fn pfm_rejects_garbage() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.pfm");
        std::fs::write(&path, b"P6\n2 2\n255\n").unwrap();
        assert!(matches!(read_pfm(&path), Err(Error::Format { .. })));
        assert!(matches!(read_pfm(dir.path().join("missing.pfm")), Err(Error::Io { .. })));
    }

    #[test]
    fn png_round_trip_within_quantisation() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.png");
        let img = RadianceImage::from_fn(7, 4, 3, |x, y, c| ((x + y + c) as f64 / 12.0).min(1.0)).unwrap();
        write_png(&path, &img, DEFAULT_GAMMA).unwrap();
        let back = read_png(&path, DEFAULT_GAMMA).unwrap();
        for (a, b) in img.data().iter().zip(back.as_radiance().data()) {
            assert!((a - b).abs() < 1e-3);
        }
    }

    #[test]
    fn kernel_text_round_trip() {
        let k = Kernel2D::uniform(3);
        let text = kernel_to_string(&k);
        assert!(text.starts_with("3 3\n"));
        let back = parse_kernel(&text).unwrap();
        for (a, b) in k.taps().iter().zip(back.taps()) {
            assert!((a - b).abs() < 1e-12);
        }
        assert!(parse_kernel("3 3\n1 2 3\n").is_err());
        assert!(parse_kernel("2 2\n1 0\n0 0\n").is_err());
    }
}
