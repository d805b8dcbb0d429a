//! Grayscale image files: binary PGM (P5) read/write and PNG read/write.
//! Intensities map to `[0, 1]` by dividing by the format's maximum value.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::ImageGrid;

const PNG_SIGNATURE: [u8; 8] = [0x89, b'P', b'N', b'G', 0x0d, 0x0a, 0x1a, 0x0a];

/// Loads a P5 PGM or a PNG, choosing the decoder from the file contents.
/// Color PNGs are reduced to Rec. 601 luma; alpha is ignored.
pub fn load_image(path: impl AsRef<Path>) -> Result<ImageGrid> {
    let path = path.as_ref();
    let mut bytes = Vec::new();
    File::open(path)?.read_to_end(&mut bytes)?;
    if bytes.starts_with(b"P5") {
        decode_pgm(&bytes)
    } else if bytes.starts_with(&PNG_SIGNATURE) {
        decode_png(&bytes)
    } else if bytes.starts_with(b"P2") {
        Err(Error::UnsupportedFormat(format!("{}: ASCII PGM (P2)", path.display())))
    } else {
        Err(Error::UnsupportedFormat(format!("{}: not a P5 PGM or PNG file", path.display())))
    }
}

/// Writes 8-bit grayscale, PNG when the extension is `.png` and binary PGM
/// otherwise. Values are clamped to `[0, 1]` and rounded half away from zero.
pub fn save_image(path: impl AsRef<Path>, u: &ImageGrid) -> Result<()> {
    let path = path.as_ref();
    let is_png = path
        .extension()
        .and_then(|e| e.to_str())
        .is_some_and(|e| e.eq_ignore_ascii_case("png"));
    let bytes = quantize(u);
    let w = BufWriter::new(File::create(path)?);
    if is_png {
        write_png(w, u.cols(), u.rows(), &bytes)
    } else {
        write_pgm(w, u.cols(), u.rows(), &bytes)
    }
}

/// 8-bit lattice values of `u`.
pub fn quantize(u: &ImageGrid) -> Vec<u8> {
    u.data()
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

pub fn write_pgm(mut w: impl Write, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    write!(w, "P5\n{width} {height}\n255\n")?;
    w.write_all(bytes)?;
    w.flush()?;
    Ok(())
}

fn write_png(w: impl Write, width: usize, height: usize, bytes: &[u8]) -> Result<()> {
    let mut enc = png::Encoder::new(w, width as u32, height as u32);
    enc.set_color(png::ColorType::Grayscale);
    enc.set_depth(png::BitDepth::Eight);
    let mut writer = enc
        .write_header()
        .map_err(|e| Error::CorruptFile(format!("png header: {e}")))?;
    writer
        .write_image_data(bytes)
        .map_err(|e| Error::CorruptFile(format!("png data: {e}")))?;
    writer
        .finish()
        .map_err(|e| Error::CorruptFile(format!("png trailer: {e}")))?;
    Ok(())
}

/// Reads whitespace-separated header fields, skipping `#` comments.
struct HeaderCursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderCursor<'a> {
    fn token(&mut self) -> Result<&'a [u8]> {
        loop {
            match self.bytes.get(self.pos) {
                None => return Err(Error::CorruptFile("truncated PGM header".into())),
                Some(b'#') => {
                    while let Some(&c) = self.bytes.get(self.pos) {
                        self.pos += 1;
                        if c == b'\n' || c == b'\r' {
                            break;
                        }
                    }
                }
                Some(c) if c.is_ascii_whitespace() => self.pos += 1,
                Some(_) => break,
            }
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        if self.pos == self.bytes.len() {
            return Err(Error::CorruptFile("truncated PGM header".into()));
        }
        Ok(&self.bytes[start..self.pos])
    }

    fn number(&mut self, what: &str) -> Result<usize> {
        let tok = self.token()?;
        std::str::from_utf8(tok)
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::CorruptFile(format!("PGM {what} is not a number")))
    }
}

pub fn decode_pgm(bytes: &[u8]) -> Result<ImageGrid> {
    let mut cur = HeaderCursor { bytes, pos: 0 };
    if cur.token()? != b"P5" {
        return Err(Error::UnsupportedFormat("missing P5 magic".into()));
    }
    let width = cur.number("width")?;
    let height = cur.number("height")?;
    let maxval = cur.number("maxval")?;
    if width == 0 || height == 0 {
        return Err(Error::CorruptFile(format!("PGM with empty shape {width}x{height}")));
    }
    if maxval == 0 || maxval > 65535 {
        return Err(Error::CorruptFile(format!("PGM maxval {maxval} out of range")));
    }
    // exactly one whitespace byte separates the header from the raster
    let start = cur.pos + 1;
    let sample = if maxval < 256 { 1 } else { 2 };
    let need = width * height * sample;
    let raster = bytes
        .get(start..start + need)
        .ok_or_else(|| Error::CorruptFile(format!("PGM raster holds {} of {need} bytes", bytes.len().saturating_sub(start))))?;
    let scale = maxval as f64;
    let data = if sample == 1 {
        raster.iter().map(|&b| b as f64 / scale).collect()
    } else {
        raster
            .chunks_exact(2)
            .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64 / scale)
            .collect()
    };
    ImageGrid::new(height, width, data)
}

fn decode_png(bytes: &[u8]) -> Result<ImageGrid> {
    let corrupt = |e: png::DecodingError| Error::CorruptFile(format!("png: {e}"));
    let mut decoder = png::Decoder::new(std::io::Cursor::new(bytes));
    decoder.set_transformations(png::Transformations::EXPAND);
    let mut reader = decoder.read_info().map_err(corrupt)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::UnsupportedFormat("png too large".into()))?;
    let mut buf = vec![0u8; size];
    let info = reader.next_frame(&mut buf).map_err(corrupt)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let channels = match info.color_type {
        png::ColorType::Grayscale => 1,
        png::ColorType::GrayscaleAlpha => 2,
        png::ColorType::Rgb => 3,
        png::ColorType::Rgba => 4,
        png::ColorType::Indexed => {
            return Err(Error::UnsupportedFormat("palette png was not expanded".into()));
        }
    };
    let (sample_bytes, maxval) = match info.bit_depth {
        png::BitDepth::Eight => (1, 255.0),
        png::BitDepth::Sixteen => (2, 65535.0),
        other => return Err(Error::UnsupportedFormat(format!("png bit depth {other:?}"))),
    };
    let mut data = Vec::with_capacity(w * h);
    for row in 0..h {
        let line = &buf[row * info.line_size..(row + 1) * info.line_size];
        for col in 0..w {
            let px = &line[col * channels * sample_bytes..];
            let sample = |k: usize| -> f64 {
                if sample_bytes == 1 {
                    px[k] as f64
                } else {
                    u16::from_be_bytes([px[2 * k], px[2 * k + 1]]) as f64
                }
            };
            let v = if channels >= 3 {
                0.299 * sample(0) + 0.587 * sample(1) + 0.114 * sample(2)
            } else {
                sample(0)
            };
            data.push(v / maxval);
        }
    }
    ImageGrid::new(h, w, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pgm_bytes_scale_to_unit_interval() {
        let mut file = b"P5\n2 2\n255\n".to_vec();
        file.extend_from_slice(&[0, 128, 255, 64]);
        let u = decode_pgm(&file).unwrap();
        assert_eq!(u.shape(), (2, 2));
        assert_eq!(u.data(), &[0.0, 128.0 / 255.0, 1.0, 64.0 / 255.0]);
    }

    #[test]
    fn pgm_comments_and_sixteen_bit() {
        let mut file = b"P5 # made by hand\n1 2 # shape\n65535\n".to_vec();
        file.extend_from_slice(&[0xff, 0xff, 0x00, 0x01]);
        let u = decode_pgm(&file).unwrap();
        assert_eq!(u.shape(), (2, 1));
        assert_eq!(u.data(), &[1.0, 1.0 / 65535.0]);
    }

    #[test]
    fn truncated_input_is_corrupt() {
        assert!(matches!(decode_pgm(b"P5\n2 2"), Err(Error::CorruptFile(_))));
        assert!(matches!(decode_pgm(b"P5\n2 2\n255\n\x01\x02"), Err(Error::CorruptFile(_))));
    }

    #[test]
    fn round_trip_on_lattice() {
        let dir = tempfile::tempdir().unwrap();
        let u = ImageGrid::from_fn(3, 5, |r, c| ((r * 5 + c) * 17 % 256) as f64 / 255.0);
        for name in ["a.pgm", "b.png"] {
            let path = dir.path().join(name);
            save_image(&path, &u).unwrap();
            let v = load_image(&path).unwrap();
            assert_eq!(v.shape(), u.shape());
            assert_eq!(v.data(), u.data(), "{name}");
        }
    }

    #[test]
    fn round_trip_error_is_half_a_level() {
        let dir = tempfile::tempdir().unwrap();
        let u = ImageGrid::from_fn(4, 4, |r, c| (r as f64 * 0.37 + c as f64 * 0.11) % 1.0);
        let path = dir.path().join("u.pgm");
        save_image(&path, &u).unwrap();
        let v = load_image(&path).unwrap();
        for (a, b) in u.data().iter().zip(v.data()) {
            assert!((a - b).abs() <= 1.0 / 510.0 + 1e-15);
        }
    }

    #[test]
    fn unknown_magic_is_unsupported() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        std::fs::write(&path, b"GIF89a").unwrap();
        assert!(matches!(load_image(&path), Err(Error::UnsupportedFormat(_))));
        assert!(matches!(load_image(dir.path().join("missing.pgm")), Err(Error::Io(_))));
    }

    #[test]
    fn rgb_png_uses_luma() {
        let mut out = Vec::new();
        {
            let mut enc = png::Encoder::new(&mut out, 2, 1);
            enc.set_color(png::ColorType::Rgb);
            enc.set_depth(png::BitDepth::Eight);
            let mut w = enc.write_header().unwrap();
            w.write_image_data(&[255, 0, 0, 0, 0, 255]).unwrap();
        }
        let u = decode_png(&out).unwrap();
        assert!((u.data()[0] - 0.299).abs() < 1e-12);
        assert!((u.data()[1] - 0.114).abs() < 1e-12);
    }
}
