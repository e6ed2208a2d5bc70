use std::io::{BufRead, Read, Write};

use base64::engine::general_purpose::STANDARD;
use base64::Engine as _;

use super::Page;
use crate::{Error, Result};

/// On-disk page formats.
///
/// `Tsv`: one record per line, `url<TAB>base64(text)`.
/// `Binary`: repeated records of a little-endian `u32` url length, the url
/// bytes, a little-endian `u64` text length and the text bytes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PageFormat {
    Tsv,
    Binary,
}

impl std::str::FromStr for PageFormat {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" => Ok(PageFormat::Tsv),
            "binary" => Ok(PageFormat::Binary),
            other => Err(Error::Config(format!("unknown page format '{other}' (tsv or binary)"))),
        }
    }
}

fn bad(msg: String) -> Error {
    Error::Data(msg)
}

fn io_err(e: std::io::Error) -> Error {
    Error::Data(format!("read failed: {e}"))
}

pub fn read_pages<R: BufRead>(mut r: R, format: PageFormat) -> Result<Vec<Page>> {
    let mut pages = Vec::new();
    match format {
        PageFormat::Tsv => {
            for (n, line) in r.lines().enumerate() {
                let line = line.map_err(io_err)?;
                if line.is_empty() {
                    continue;
                }
                let (url, payload) = line
                    .split_once('\t')
                    .ok_or_else(|| bad(format!("line {}: expected url<TAB>base64", n + 1)))?;
                let bytes = STANDARD
                    .decode(payload.trim_end())
                    .map_err(|e| bad(format!("line {}: bad base64: {e}", n + 1)))?;
                let text = String::from_utf8(bytes).map_err(|_| bad(format!("line {}: text is not UTF-8", n + 1)))?;
                pages.push(Page::new(url, text)?);
            }
        }
        PageFormat::Binary => loop {
            let mut len4 = [0u8; 4];
            match r.read(&mut len4[..1]).map_err(io_err)? {
                0 => break,
                _ => r.read_exact(&mut len4[1..]).map_err(io_err)?,
            }
            let url = read_string(&mut r, u32::from_le_bytes(len4) as u64)?;
            let mut len8 = [0u8; 8];
            r.read_exact(&mut len8).map_err(io_err)?;
            let text = read_string(&mut r, u64::from_le_bytes(len8))?;
            pages.push(Page::new(url, text)?);
        },
    }
    Ok(pages)
}

fn read_string<R: Read>(r: &mut R, len: u64) -> Result<String> {
    let mut buf = Vec::new();
    r.take(len).read_to_end(&mut buf).map_err(io_err)?;
    if buf.len() as u64 != len {
        return Err(bad("truncated binary record".into()));
    }
    String::from_utf8(buf).map_err(|_| bad("record is not UTF-8".into()))
}

pub fn write_pages<W: Write>(w: &mut W, pages: &[Page], format: PageFormat) -> std::io::Result<()> {
    for p in pages {
        match format {
            PageFormat::Tsv => writeln!(w, "{}\t{}", p.url, STANDARD.encode(&p.text))?,
            PageFormat::Binary => {
                w.write_all(&(p.url.len() as u32).to_le_bytes())?;
                w.write_all(p.url.as_bytes())?;
                w.write_all(&(p.text.len() as u64).to_le_bytes())?;
                w.write_all(p.text.as_bytes())?;
            }
        }
    }
    Ok(())
}
