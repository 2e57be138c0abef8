//! Binary PGM (`P5`) reading and writing, 8- and 16-bit.
//!
//! Intensities map to `[0, 1]` by division by `maxval`; writing rounds to
//! the nearest level, so a read-write cycle at the file's depth is lossless.
//! Masks are 8-bit PGMs whose pixel values are the class indices.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::image::{Image, Mask};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn maxval(self) -> u16 {
        match self {
            BitDepth::Eight => 255,
            BitDepth::Sixteen => 65535,
        }
    }
}

/// Raw samples of a decoded PGM.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Pgm {
    pub width: usize,
    pub height: usize,
    pub maxval: u16,
    pub samples: Vec<u16>,
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl Cursor<'_> {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::Format {
            path: self.path.to_path_buf(),
            offset: self.pos,
            msg: msg.into(),
        }
    }

    fn skip_space_and_comments(&mut self) {
        while let Some(&b) = self.bytes.get(self.pos) {
            if b == b'#' {
                while let Some(&c) = self.bytes.get(self.pos) {
                    self.pos += 1;
                    if c == b'\n' || c == b'\r' {
                        break;
                    }
                }
            } else if b.is_ascii_whitespace() {
                self.pos += 1;
            } else {
                break;
            }
        }
    }

    fn number(&mut self, what: &str) -> Result<u64> {
        self.skip_space_and_comments();
        let start = self.pos;
        while self.bytes.get(self.pos).is_some_and(u8::is_ascii_digit) {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(self.err(format!("expected {what}")));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| self.err(format!("{what} out of range")))
    }
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<Pgm> {
    let mut c = Cursor {
        bytes,
        pos: 0,
        path,
    };
    match bytes.get(..2) {
        Some(b"P5") => {}
        Some(b"P2") => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                msg: "ASCII PGM (P2); only binary P5 is supported".into(),
            })
        }
        Some([b'P', d]) if d.is_ascii_digit() => {
            return Err(Error::UnsupportedFormat {
                path: path.to_path_buf(),
                msg: format!("netpbm type P{}; only binary P5 is supported", *d as char),
            })
        }
        _ => return Err(c.err("missing P5 magic number")),
    }
    c.pos = 2;
    let width = c.number("width")? as usize;
    let height = c.number("height")? as usize;
    let maxval = c.number("maxval")?;
    if maxval == 0 || maxval > 65535 {
        return Err(c.err(format!("maxval {maxval} outside 1..=65535")));
    }
    if width == 0 || height == 0 {
        return Err(c.err(format!("empty image {width}x{height}")));
    }
    match c.bytes.get(c.pos) {
        Some(b) if b.is_ascii_whitespace() => c.pos += 1,
        _ => return Err(c.err("expected a single whitespace byte after maxval")),
    }
    let wide = maxval > 255;
    let count = width * height;
    let need = count * if wide { 2 } else { 1 };
    let payload = &bytes[c.pos..];
    if payload.len() < need {
        c.pos = bytes.len();
        return Err(c.err(format!(
            "truncated payload: {} of {need} bytes",
            payload.len()
        )));
    }
    let samples: Vec<u16> = if wide {
        payload[..need]
            .chunks_exact(2)
            .map(|p| u16::from_be_bytes([p[0], p[1]]))
            .collect()
    } else {
        payload[..need].iter().map(|&b| u16::from(b)).collect()
    };
    if let Some(i) = samples.iter().position(|&s| u64::from(s) > maxval) {
        c.pos += if wide { 2 * i } else { i };
        return Err(c.err(format!("sample {} exceeds maxval {maxval}", samples[i])));
    }
    Ok(Pgm {
        width,
        height,
        maxval: maxval as u16,
        samples,
    })
}

pub fn encode(pgm: &Pgm) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", pgm.width, pgm.height, pgm.maxval).into_bytes();
    if pgm.maxval > 255 {
        for s in &pgm.samples {
            out.extend_from_slice(&s.to_be_bytes());
        }
    } else {
        out.extend(pgm.samples.iter().map(|&s| s as u8));
    }
    out
}

fn read_file(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, path)
}

fn write_file(pgm: &Pgm, path: &Path) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, encode(pgm)).map_err(|e| Error::io(path, e))
}

impl Pgm {
    pub fn to_image(&self) -> Image {
        let m = f64::from(self.maxval);
        Image {
            width: self.width,
            height: self.height,
            data: self.samples.iter().map(|&s| f64::from(s) / m).collect(),
        }
    }

    pub fn from_image(img: &Image, depth: BitDepth) -> Self {
        let m = f64::from(depth.maxval());
        Pgm {
            width: img.width,
            height: img.height,
            maxval: depth.maxval(),
            samples: img
                .data
                .iter()
                .map(|&v| (v.clamp(0.0, 1.0) * m).round() as u16)
                .collect(),
        }
    }
}

pub fn read_pgm(path: impl AsRef<Path>) -> Result<Image> {
    Ok(read_file(path.as_ref())?.to_image())
}

pub fn write_pgm(img: &Image, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    write_file(&Pgm::from_image(img, depth), path.as_ref())
}

/// Reads an 8-bit mask whose pixel values are class indices.
pub fn read_mask(path: impl AsRef<Path>) -> Result<Mask> {
    let path = path.as_ref();
    let pgm = read_file(path)?;
    if pgm.maxval > 255 {
        return Err(Error::UnsupportedFormat {
            path: path.to_path_buf(),
            msg: format!("masks must be 8-bit, maxval is {}", pgm.maxval),
        });
    }
    let data: Vec<u8> = pgm.samples.iter().map(|&s| s as u8).collect();
    Mask::new(pgm.width, pgm.height, data).map_err(|e| Error::Format {
        path: path.to_path_buf(),
        offset: 0,
        msg: e.to_string(),
    })
}

pub fn write_mask(mask: &Mask, path: impl AsRef<Path>) -> Result<()> {
    let pgm = Pgm {
        width: mask.width,
        height: mask.height,
        maxval: 255,
        samples: mask.data.iter().map(|&c| u16::from(c)).collect(),
    };
    write_file(&pgm, path.as_ref())
}
