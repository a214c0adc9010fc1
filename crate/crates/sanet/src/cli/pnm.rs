//! Binary PPM (P6) and PGM (P5) at maxval 255, plus atomic file writes.
//! Headers allow '#' comments; all writes go through a temp-then-rename.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

pub struct Ppm {
    pub w: usize,
    pub h: usize,
    /// Interleaved RGB, row-major.
    pub rgb: Vec<u8>,
}

pub struct Pgm {
    pub w: usize,
    pub h: usize,
    pub gray: Vec<u8>,
}

/// Write via temp file then rename, so interrupted runs never leave torn
/// artifacts.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("out")
    ));
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

struct HeaderParser<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> HeaderParser<'a> {
    fn skip_space_and_comments(&mut self) -> Result<()> {
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
            return Ok(());
        }
    }

    fn number(&mut self) -> Result<usize> {
        self.skip_space_and_comments()?;
        let start = self.pos;
        while self.pos < self.bytes.len() && self.bytes[self.pos].is_ascii_digit() {
            self.pos += 1;
        }
        if start == self.pos {
            return Err(Error::Load("malformed header: expected a number".into()));
        }
        std::str::from_utf8(&self.bytes[start..self.pos])
            .ok()
            .and_then(|s| s.parse().ok())
            .ok_or_else(|| Error::Load("malformed header number".into()))
    }
}

fn parse(bytes: &[u8], magic: &[u8], channels: usize) -> Result<(usize, usize, Vec<u8>)> {
    if bytes.len() < 2 || &bytes[..2] != magic {
        return Err(Error::Load(format!(
            "expected {} file",
            std::str::from_utf8(magic).unwrap_or("?")
        )));
    }
    let mut p = HeaderParser { bytes, pos: 2 };
    let w = p.number()?;
    let h = p.number()?;
    let maxval = p.number()?;
    if maxval != 255 {
        return Err(Error::Load(format!("maxval {maxval} unsupported (need 255)")));
    }
    // exactly one whitespace byte separates header from data
    if p.pos >= bytes.len() || !bytes[p.pos].is_ascii_whitespace() {
        return Err(Error::Load("malformed header: missing data separator".into()));
    }
    p.pos += 1;
    let need = w * h * channels;
    let data = &bytes[p.pos..];
    if data.len() < need {
        return Err(Error::Load(format!(
            "truncated pixel data: {} of {need} bytes",
            data.len()
        )));
    }
    Ok((w, h, data[..need].to_vec()))
}

pub fn read_ppm(path: &Path) -> Result<Ppm> {
    let bytes = fs::read(path)?;
    let (w, h, rgb) = parse(&bytes, b"P6", 3)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    Ok(Ppm { w, h, rgb })
}

pub fn read_pgm(path: &Path) -> Result<Pgm> {
    let bytes = fs::read(path)?;
    let (w, h, gray) = parse(&bytes, b"P5", 1)
        .map_err(|e| Error::Load(format!("{}: {e}", path.display())))?;
    Ok(Pgm { w, h, gray })
}

pub fn write_ppm(path: &Path, img: &Ppm) -> Result<()> {
    let mut out = format!("P6\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend_from_slice(&img.rgb);
    atomic_write(path, &out)
}

pub fn write_pgm(path: &Path, img: &Pgm) -> Result<()> {
    let mut out = format!("P5\n{} {}\n255\n", img.w, img.h).into_bytes();
    out.extend_from_slice(&img.gray);
    atomic_write(path, &out)
}
