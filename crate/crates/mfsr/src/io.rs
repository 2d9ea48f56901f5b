//! File formats: binary PGM (P5), single-channel PFM and Middlebury `.flo`.
//!
//! PGM quantises to 8 bits on write (clamp to [0,255], round half up);
//! PFM and `.flo` store 32-bit floats and round-trip losslessly. PFM rows
//! are written top-to-bottom with a negative scale (little-endian).

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{FlowField, Image};

/// Output formats supported by [`write_image`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ImageFormat {
    /// 8-bit binary PGM, maxval 255.
    Pgm8,
    /// Little-endian single-channel PFM.
    Pfm,
}

const FLO_MAGIC: f32 = 202021.25;

/// Reads an 8-bit binary PGM or a single-channel PFM, dispatching on the
/// magic bytes.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    match bytes.get(0..2) {
        Some(b"P5") => read_pgm(path, &bytes),
        Some(b"Pf") => read_pfm(path, &bytes),
        Some(b"PF") => Err(Error::Unsupported {
            path: path.into(),
            detail: "colour PFM (PF); only single-channel Pf is supported".into(),
        }),
        _ => Err(Error::Unsupported {
            path: path.into(),
            detail: "unrecognised magic bytes; expected P5 or Pf".into(),
        }),
    }
}

/// Writes an image as PGM (quantised) or PFM (lossless f32).
pub fn write_image(img: &Image, path: impl AsRef<Path>, format: ImageFormat) -> Result<()> {
    let path = path.as_ref();
    let bytes = match format {
        ImageFormat::Pgm8 => encode_pgm(img),
        ImageFormat::Pfm => encode_pfm(img),
    };
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Clamp to [0,255] and round half up, the PGM export quantisation rule.
pub fn quantise_u8(v: f64) -> u8 {
    (v.clamp(0.0, 255.0) + 0.5).floor() as u8
}

fn encode_pgm(img: &Image) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n255\n", img.width(), img.height()).into_bytes();
    out.extend(img.data().iter().map(|&v| quantise_u8(v)));
    out
}

fn encode_pfm(img: &Image) -> Vec<u8> {
    let mut out = format!("Pf\n{} {}\n-1.0\n", img.width(), img.height()).into_bytes();
    for &v in img.data() {
        out.extend_from_slice(&(v as f32).to_le_bytes());
    }
    out
}

/// Whitespace/comment-skipping token reader for netpbm-style headers.
struct Tokens<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Tokens<'a> {
    fn new(bytes: &'a [u8], pos: usize) -> Self {
        Tokens { bytes, pos }
    }

    fn next(&mut self) -> Option<&'a [u8]> {
        loop {
            while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_whitespace() {
                self.pos += 1;
            }
            if self.pos < self.bytes.len() && self.bytes[self.pos] == b'#' {
                while self.pos < self.bytes.len() && self.bytes[self.pos] != b'\n' {
                    self.pos += 1;
                }
                continue;
            }
            break;
        }
        if self.pos >= self.bytes.len() {
            return None;
        }
        let start = self.pos;
        while self.pos < self.bytes.len() && !self.bytes[self.pos].is_ascii_whitespace() {
            self.pos += 1;
        }
        Some(&self.bytes[start..self.pos])
    }

    /// Position just past the single whitespace byte that terminates the
    /// header (the payload starts there).
    fn payload_start(&self) -> usize {
        self.pos + 1
    }
}

fn parse_dim(path: &Path, tok: Option<&[u8]>, what: &str) -> Result<usize> {
    let tok = tok.ok_or_else(|| Error::MalformedHeader {
        path: path.into(),
        detail: format!("missing {what}"),
    })?;
    std::str::from_utf8(tok)
        .ok()
        .and_then(|s| s.parse::<usize>().ok())
        .filter(|&v| v > 0)
        .ok_or_else(|| Error::MalformedHeader {
            path: path.into(),
            detail: format!("invalid {what}: {:?}", String::from_utf8_lossy(tok)),
        })
}

fn read_pgm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut toks = Tokens::new(bytes, 2);
    let width = parse_dim(path, toks.next(), "width")?;
    let height = parse_dim(path, toks.next(), "height")?;
    let maxval = parse_dim(path, toks.next(), "maxval")?;
    if maxval != 255 {
        return Err(Error::Unsupported {
            path: path.into(),
            detail: format!("maxval {maxval}; only 255 is supported"),
        });
    }
    let start = toks.payload_start();
    let need = width
        .checked_mul(height)
        .ok_or_else(|| Error::MalformedHeader {
            path: path.into(),
            detail: "dimension overflow".into(),
        })?;
    let payload = bytes.get(start..start + need).ok_or_else(|| Error::Truncated {
        path: path.into(),
        detail: format!(
            "expected {need} pixel bytes, found {}",
            bytes.len().saturating_sub(start)
        ),
    })?;
    let data = payload.iter().map(|&b| b as f64).collect();
    Image::new(width, height, data)
}

fn read_pfm(path: &Path, bytes: &[u8]) -> Result<Image> {
    let mut toks = Tokens::new(bytes, 2);
    let width = parse_dim(path, toks.next(), "width")?;
    let height = parse_dim(path, toks.next(), "height")?;
    let scale_tok = toks.next().ok_or_else(|| Error::MalformedHeader {
        path: path.into(),
        detail: "missing scale".into(),
    })?;
    let scale: f64 = std::str::from_utf8(scale_tok)
        .ok()
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::MalformedHeader {
            path: path.into(),
            detail: "invalid scale".into(),
        })?;
    if scale >= 0.0 {
        return Err(Error::Unsupported {
            path: path.into(),
            detail: "big-endian PFM (non-negative scale)".into(),
        });
    }
    let start = toks.payload_start();
    let need = width * height * 4;
    let payload = bytes.get(start..start + need).ok_or_else(|| Error::Truncated {
        path: path.into(),
        detail: format!(
            "expected {need} payload bytes, found {}",
            bytes.len().saturating_sub(start)
        ),
    })?;
    let data: Vec<f64> = payload
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
        .collect();
    Image::new(width, height, data)
}

/// Reads a Middlebury `.flo` flow file.
pub fn read_flow(path: impl AsRef<Path>) -> Result<FlowField> {
    let path = path.as_ref();
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() < 12 {
        return Err(Error::Truncated {
            path: path.into(),
            detail: format!("header needs 12 bytes, found {}", bytes.len()),
        });
    }
    let magic = f32::from_le_bytes([bytes[0], bytes[1], bytes[2], bytes[3]]);
    if magic != FLO_MAGIC {
        return Err(Error::MalformedHeader {
            path: path.into(),
            detail: format!("bad magic {magic}; expected {FLO_MAGIC}"),
        });
    }
    let width = i32::from_le_bytes([bytes[4], bytes[5], bytes[6], bytes[7]]);
    let height = i32::from_le_bytes([bytes[8], bytes[9], bytes[10], bytes[11]]);
    if width <= 0 || height <= 0 {
        return Err(Error::MalformedHeader {
            path: path.into(),
            detail: format!("invalid dimensions {width}x{height}"),
        });
    }
    let (width, height) = (width as usize, height as usize);
    let need = width * height * 8;
    let payload = bytes.get(12..12 + need).ok_or_else(|| Error::Truncated {
        path: path.into(),
        detail: format!(
            "expected {need} payload bytes, found {}",
            bytes.len() - 12
        ),
    })?;
    let mut u = Vec::with_capacity(width * height);
    let mut v = Vec::with_capacity(width * height);
    for pair in payload.chunks_exact(8) {
        u.push(f32::from_le_bytes([pair[0], pair[1], pair[2], pair[3]]) as f64);
        v.push(f32::from_le_bytes([pair[4], pair[5], pair[6], pair[7]]) as f64);
    }
    FlowField::new(width, height, u, v)
}

/// Writes a Middlebury `.flo` flow file (components stored as f32).
pub fn write_flow(flow: &FlowField, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = Vec::with_capacity(12 + flow.pixels() * 8);
    out.extend_from_slice(&FLO_MAGIC.to_le_bytes());
    out.extend_from_slice(&(flow.width() as i32).to_le_bytes());
    out.extend_from_slice(&(flow.height() as i32).to_le_bytes());
    for (du, dv) in flow.u().iter().zip(flow.v()) {
        out.extend_from_slice(&(*du as f32).to_le_bytes());
        out.extend_from_slice(&(*dv as f32).to_le_bytes());
    }
    fs::write(path, out).map_err(|e| Error::io(path, e))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::SplitMix64;
    use proptest::prelude::*;

    #[test]
    fn pgm_decode_2x2() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, [b"P5\n2 2\n255\n".as_ref(), &[0u8, 255, 128, 64]].concat()).unwrap();
        let img = read_image(&p).unwrap();
        assert_eq!(img.width(), 2);
        assert_eq!(img.height(), 2);
        assert_eq!(img.data(), &[0.0, 255.0, 128.0, 64.0]);
    }

    #[test]
    fn pgm_rejects_bad_maxval() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, [b"P5\n2 2\n65535\n".as_ref(), &[0u8; 8]].concat()).unwrap();
        match read_image(&p) {
            Err(Error::Unsupported { detail, .. }) => assert!(detail.contains("maxval")),
            other => panic!("expected Unsupported, got {other:?}"),
        }
    }

    #[test]
    fn pgm_distinct_errors() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");

        fs::write(&p, b"P5\n2 x\n255\n").unwrap();
        assert!(matches!(read_image(&p), Err(Error::MalformedHeader { .. })));

        fs::write(&p, [b"P5\n4 4\n255\n".as_ref(), &[0u8; 3]].concat()).unwrap();
        assert!(matches!(read_image(&p), Err(Error::Truncated { .. })));

        fs::write(&p, b"P3\n1 1\n255\n0").unwrap();
        assert!(matches!(read_image(&p), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn pgm_quantisation() {
        assert_eq!(quantise_u8(255.7), 255);
        assert_eq!(quantise_u8(-3.2), 0);
        assert_eq!(quantise_u8(127.5), 128);
        assert_eq!(quantise_u8(127.49), 127);
    }

    #[test]
    fn pgm_header_comments() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pgm");
        fs::write(&p, [b"P5\n# made up\n1 1\n255\n".as_ref(), &[42u8]].concat()).unwrap();
        assert_eq!(read_image(&p).unwrap().data(), &[42.0]);
    }

    #[test]
    fn pfm_round_trip_lossless() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pfm");
        let img = Image::new(3, 2, vec![-1.5, 0.0, 2.25, 300.0, 0.001f32 as f64, 1e6]).unwrap();
        write_image(&img, &p, ImageFormat::Pfm).unwrap();
        let back = read_image(&p).unwrap();
        assert_eq!(back.data(), img.data());
    }

    #[test]
    fn pfm_rejects_colour() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.pfm");
        fs::write(&p, b"PF\n1 1\n-1.0\n\0\0\0\0\0\0\0\0\0\0\0\0").unwrap();
        assert!(matches!(read_image(&p), Err(Error::Unsupported { .. })));
    }

    #[test]
    fn flo_1x1_is_20_bytes() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.flo");
        write_flow(&FlowField::zeros(1, 1), &p).unwrap();
        assert_eq!(fs::metadata(&p).unwrap().len(), 20);
    }

    #[test]
    fn flo_rejects_bad_magic() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.flo");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&123.0f32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&1i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]);
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_flow(&p), Err(Error::MalformedHeader { .. })));
    }

    #[test]
    fn flo_size_mismatch() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.flo");
        let mut bytes = Vec::new();
        bytes.extend_from_slice(&FLO_MAGIC.to_le_bytes());
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&2i32.to_le_bytes());
        bytes.extend_from_slice(&[0u8; 8]); // needs 32
        fs::write(&p, bytes).unwrap();
        assert!(matches!(read_flow(&p), Err(Error::Truncated { .. })));
    }

    #[test]
    fn flo_round_trip_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("t.flo");
        let mut rng = SplitMix64::new(17);
        let n = 7 * 5;
        let u: Vec<f64> = (0..n).map(|_| (rng.uniform() as f32 * 20.0 - 10.0) as f64).collect();
        let v: Vec<f64> = (0..n).map(|_| (rng.uniform() as f32 * 20.0 - 10.0) as f64).collect();
        let flow = FlowField::new(7, 5, u, v).unwrap();
        write_flow(&flow, &p).unwrap();
        let back = read_flow(&p).unwrap();
        assert_eq!(back.u(), flow.u());
        assert_eq!(back.v(), flow.v());
    }

    proptest! {
        // Quantised PGM round-trip: read(write(img)) equals clamp-and-round.
        #[test]
        fn pgm_round_trip(values in proptest::collection::vec(-50.0f64..310.0, 1..64), w in 1usize..8) {
            let h = (values.len() + w - 1) / w;
            let mut data = values.clone();
            data.resize(w * h, 0.0);
            let img = Image::new(w, h, data.clone()).unwrap();
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("t.pgm");
            write_image(&img, &p, ImageFormat::Pgm8).unwrap();
            let back = read_image(&p).unwrap();
            for (orig, got) in data.iter().zip(back.data()) {
                prop_assert_eq!(quantise_u8(*orig) as f64, *got);
            }
        }
    }
}
