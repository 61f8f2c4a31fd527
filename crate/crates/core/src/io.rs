//! Image files: PGM (P2 and P5, 8 or 16 bits) and a plain-text float matrix.

use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::patch::Image;

/// On-disk encoding of an image.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// Binary PGM.
    Pgm,
    /// ASCII PGM.
    PgmAscii,
    /// `MATRIX w h` header followed by one text row per image row.
    Matrix,
}

impl ImageFormat {
    /// `.pgm` maps to binary PGM; anything else to the matrix format.
    pub fn from_path(path: &Path) -> Self {
        match path
            .extension()
            .and_then(|e| e.to_str())
            .map(str::to_ascii_lowercase)
            .as_deref()
        {
            Some("pgm") | Some("pnm") => ImageFormat::Pgm,
            _ => ImageFormat::Matrix,
        }
    }
}

struct Tokens<'a> {
    data: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn skip_space_and_comments(&mut self) {
        while self.pos < self.data.len() {
            let c = self.data[self.pos];
            if c == b'#' {
                while self.pos < self.data.len() && self.data[self.pos] != b'\n' {
                    self.pos += 1;
                }
            } else if c.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn next(&mut self) -> Option<&'a str> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.pos < self.data.len() && !self.data[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        (self.pos > start)
            .then(|| std::str::from_utf8(&self.data[start..self.pos]).ok())
            .flatten()
    }

    fn uint(&mut self, what: &str) -> Result<usize> {
        self.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(format!("PGM: bad or missing {what}")))
    }
}

/// Parses a PGM image from memory.
pub fn decode_pgm(data: &[u8]) -> Result<Image> {
    let mut tok = Tokens { data, pos: 0 };
    let magic = tok.next().ok_or_else(|| Error::format("PGM: empty file"))?;
    let binary = match magic {
        "P5" => true,
        "P2" => false,
        _ => return Err(Error::format(format!("PGM: unsupported magic '{magic}'"))),
    };
    let width = tok.uint("width")?;
    let height = tok.uint("height")?;
    let maxval = tok.uint("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(Error::format("PGM: maxval must be in 1..=65535"));
    }
    let n = width
        .checked_mul(height)
        .ok_or_else(|| Error::format("PGM: image too large"))?;
    let mut pixels = Vec::with_capacity(n);
    if binary {
        // exactly one whitespace byte separates the header from the raster
        let start = tok.pos + 1;
        let bytes = if maxval < 256 { 1 } else { 2 };
        let raster = data
            .get(start..start + n * bytes)
            .ok_or_else(|| Error::format("PGM: truncated raster"))?;
        if bytes == 1 {
            pixels.extend(raster.iter().map(|&b| b as f64));
        } else {
            pixels.extend(
                raster
                    .chunks_exact(2)
                    .map(|c| u16::from_be_bytes([c[0], c[1]]) as f64),
            );
        }
    } else {
        for _ in 0..n {
            pixels.push(tok.uint("pixel")? as f64);
        }
    }
    if pixels.iter().any(|&v| v > maxval as f64) {
        return Err(Error::format("PGM: pixel exceeds maxval"));
    }
    Image::new(width, height, pixels)
}

fn quantize(image: &Image) -> (usize, Vec<u16>) {
    let q: Vec<u16> = image
        .pixels()
        .iter()
        .map(|&v| v.round().clamp(0.0, 65535.0) as u16)
        .collect();
    let maxval = if q.iter().all(|&v| v <= 255) {
        255
    } else {
        65535
    };
    (maxval, q)
}

/// Encodes an image as PGM after rounding to integers in `[0, 65535]`.
/// 8-bit samples are used whenever every pixel fits.
pub fn encode_pgm(image: &Image, ascii: bool) -> Vec<u8> {
    let (maxval, q) = quantize(image);
    let mut out = format!(
        "{}\n{} {}\n{}\n",
        if ascii { "P2" } else { "P5" },
        image.width(),
        image.height(),
        maxval
    )
    .into_bytes();
    if ascii {
        for row in q.chunks(image.width()) {
            let line: Vec<String> = row.iter().map(u16::to_string).collect();
            out.extend_from_slice(line.join(" ").as_bytes());
            out.push(b'\n');
        }
    } else if maxval == 255 {
        out.extend(q.iter().map(|&v| v as u8));
    } else {
        out.extend(q.iter().flat_map(|v| v.to_be_bytes()));
    }
    out
}

const MATRIX_MAGIC: &str = "MATRIX";

/// Shortest round-trip decimal text; reading it back is bit-exact.
pub fn encode_matrix(image: &Image) -> Vec<u8> {
    let mut s = format!("{MATRIX_MAGIC} {} {}\n", image.width(), image.height());
    for row in image.pixels().chunks(image.width()) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:?}")).collect();
        s.push_str(&line.join(" "));
        s.push('\n');
    }
    s.into_bytes()
}

pub fn decode_matrix(data: &[u8]) -> Result<Image> {
    let text = std::str::from_utf8(data).map_err(|_| Error::format("matrix: not UTF-8"))?;
    let mut it = text.split_ascii_whitespace();
    if it.next() != Some(MATRIX_MAGIC) {
        return Err(Error::format("matrix: missing MATRIX header"));
    }
    let mut dim = |what: &str| -> Result<usize> {
        it.next()
            .and_then(|t| t.parse().ok())
            .ok_or_else(|| Error::format(format!("matrix: bad {what}")))
    };
    let width = dim("width")?;
    let height = dim("height")?;
    let pixels = it
        .map(|t| {
            t.parse::<f64>()
                .map_err(|_| Error::format(format!("matrix: bad value '{t}'")))
        })
        .collect::<Result<Vec<_>>>()?;
    if pixels.len() != width * height {
        return Err(Error::format(format!(
            "matrix: expected {} values, found {}",
            width * height,
            pixels.len()
        )));
    }
    Image::new(width, height, pixels)
}

/// Reads either format, detected from the first bytes.
pub fn read_image<P: AsRef<Path>>(path: P) -> Result<Image> {
    let mut data = Vec::new();
    BufReader::new(File::open(path)?).read_to_end(&mut data)?;
    if data.starts_with(MATRIX_MAGIC.as_bytes()) {
        decode_matrix(&data)
    } else {
        decode_pgm(&data)
    }
}

pub fn encode_image(image: &Image, format: ImageFormat) -> Vec<u8> {
    match format {
        ImageFormat::Pgm => encode_pgm(image, false),
        ImageFormat::PgmAscii => encode_pgm(image, true),
        ImageFormat::Matrix => encode_matrix(image),
    }
}

/// Writes `bytes` to a sibling temporary file and renames it into place, so
/// a failed run never leaves a partial file behind.
pub fn write_atomic<P: AsRef<Path>>(
    path: P,
    write: impl FnOnce(&mut dyn Write) -> Result<()>,
) -> Result<()> {
    let path = path.as_ref();
    let name = path
        .file_name()
        .ok_or_else(|| Error::invalid(format!("not a file path: {}", path.display())))?;
    let mut tmp_name = std::ffi::OsString::from(".");
    tmp_name.push(name);
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp = path.with_file_name(tmp_name);
    let result = (|| {
        let mut w = BufWriter::new(File::create(&tmp)?);
        write(&mut w)?;
        w.into_inner().map_err(|e| e.into_error())?.sync_all()?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    })();
    if result.is_err() {
        let _ = std::fs::remove_file(&tmp);
    }
    result
}

pub fn write_image<P: AsRef<Path>>(path: P, image: &Image, format: ImageFormat) -> Result<()> {
    let bytes = encode_image(image, format);
    write_atomic(path, |w| Ok(w.write_all(&bytes)?))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn img(w: usize, h: usize, v: &[f64]) -> Image {
        Image::new(w, h, v.to_vec()).unwrap()
    }

    #[test]
    fn pgm_roundtrip_8_and_16_bit() {
        let small = img(3, 2, &[0.0, 1.0, 2.0, 128.0, 254.0, 255.0]);
        let big = img(2, 2, &[0.0, 256.0, 1000.0, 65535.0]);
        for ascii in [false, true] {
            assert_eq!(decode_pgm(&encode_pgm(&small, ascii)).unwrap(), small);
            assert_eq!(decode_pgm(&encode_pgm(&big, ascii)).unwrap(), big);
        }
        assert_eq!(encode_pgm(&small, false).len(), "P5\n3 2\n255\n".len() + 6);
        assert_eq!(encode_pgm(&big, false).len(), "P5\n2 2\n65535\n".len() + 8);
    }

    #[test]
    fn pgm_quantizes() {
        let i = img(3, 1, &[-4.0, 10.4, 10.6]);
        assert_eq!(
            decode_pgm(&encode_pgm(&i, false)).unwrap().pixels(),
            &[0.0, 10.0, 11.0]
        );
    }

    #[test]
    fn pgm_parses_comments_and_ascii() {
        let text = b"P2\n# a comment\n2 2 # trailing\n15\n0 5\n10 15\n";
        assert_eq!(decode_pgm(text).unwrap().pixels(), &[0.0, 5.0, 10.0, 15.0]);
    }

    #[test]
    fn pgm_rejects_bad_input() {
        assert!(decode_pgm(b"P6\n1 1\n255\n\0\0\0").is_err());
        assert!(decode_pgm(b"P5\n2 2\n255\n\0").is_err());
        assert!(decode_pgm(b"P2\n1 1\n10\n11\n").is_err());
        assert!(decode_pgm(b"").is_err());
    }

    #[test]
    fn matrix_roundtrip_is_bit_exact() {
        let i = img(
            2,
            2,
            &[0.1, -1e-300, std::f64::consts::PI, 12345.678901234567],
        );
        let back = decode_matrix(&encode_matrix(&i)).unwrap();
        assert!(back
            .pixels()
            .iter()
            .zip(i.pixels())
            .all(|(a, b)| a.to_bits() == b.to_bits()));
        assert!(decode_matrix(b"MATRIX 2 2\n1 2 3\n").is_err());
        assert!(decode_matrix(b"2 2\n1 2 3 4\n").is_err());
    }

    #[test]
    fn file_roundtrip_and_detection() {
        let dir = tempfile::tempdir().unwrap();
        let i = img(2, 1, &[1.5, 2.25]);
        let m = dir.path().join("a.txt");
        write_image(&m, &i, ImageFormat::from_path(&m)).unwrap();
        assert_eq!(read_image(&m).unwrap(), i);
        let p = dir.path().join("a.pgm");
        assert_eq!(ImageFormat::from_path(&p), ImageFormat::Pgm);
        write_image(&p, &i, ImageFormat::Pgm).unwrap();
        assert_eq!(read_image(&p).unwrap().pixels(), &[2.0, 2.0]);
    }

    #[test]
    fn failed_atomic_write_leaves_nothing() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("out.csv");
        let r = write_atomic(&p, |w| {
            w.write_all(b"partial")?;
            Err(Error::invalid("boom"))
        });
        assert!(r.is_err());
        assert_eq!(std::fs::read_dir(dir.path()).unwrap().count(), 0);
    }
}
