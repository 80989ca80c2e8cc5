//! Image file I/O: 8-bit PGM (P2/P5) natively, PNG through the `image` crate.

use std::io::{BufRead, BufReader, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{GrayImage, Grid};

pub fn write_pgm_u8<W: Write>(img: &Grid<u8>, mut w: W) -> Result<()> {
    write!(w, "P5\n{} {}\n255\n", img.width, img.height)?;
    w.write_all(&img.data)?;
    Ok(())
}

/// Quantizes a `[0, 1]` image to 8 bits.
pub fn to_u8(img: &GrayImage) -> Grid<u8> {
    img.map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
}

pub fn from_u8(img: &Grid<u8>) -> GrayImage {
    img.map(|&v| v as f32 / 255.0)
}

pub fn write_pgm<W: Write>(img: &GrayImage, w: W) -> Result<()> {
    write_pgm_u8(&to_u8(img), w)
}

fn next_token<R: BufRead>(r: &mut R) -> Result<String> {
    let mut tok = Vec::new();
    let mut byte = [0u8; 1];
    loop {
        if r.read(&mut byte)? == 0 {
            break;
        }
        let c = byte[0];
        if c == b'#' && tok.is_empty() {
            let mut skip = Vec::new();
            r.read_until(b'\n', &mut skip)?;
            continue;
        }
        if c.is_ascii_whitespace() {
            if tok.is_empty() {
                continue;
            }
            break;
        }
        tok.push(c);
    }
    if tok.is_empty() {
        return Err(Error::Format("unexpected end of PGM header".into()));
    }
    Ok(String::from_utf8_lossy(&tok).into_owned())
}

/// Reads a P2 (ASCII) or P5 (binary, maxval ≤ 255) graymap.
pub fn read_pgm<R: Read>(r: R) -> Result<Grid<u8>> {
    let mut br = BufReader::new(r);
    let magic = next_token(&mut br)?;
    let parse = |s: String| s.parse::<usize>().map_err(|_| Error::Format(format!("bad PGM number {s}")));
    let w = parse(next_token(&mut br)?)?;
    let h = parse(next_token(&mut br)?)?;
    let maxval = parse(next_token(&mut br)?)?;
    if maxval == 0 || maxval > 255 {
        return Err(Error::Format("only 8-bit PGM supported".into()));
    }
    let scale = |v: usize| ((v * 255 + maxval / 2) / maxval) as u8;
    let data = match magic.as_str() {
        "P5" => {
            let mut buf = vec![0u8; w * h];
            br.read_exact(&mut buf)?;
            buf.into_iter().map(|v| scale(v as usize)).collect()
        }
        "P2" => {
            let mut v = Vec::with_capacity(w * h);
            for _ in 0..w * h {
                v.push(scale(parse(next_token(&mut br)?)?));
            }
            v
        }
        m => return Err(Error::Format(format!("unsupported PGM magic {m}"))),
    };
    Ok(Grid::from_vec(w, h, data))
}

/// Loads a grayscale image from `.pgm` or `.png` by extension.
pub fn load_gray(path: &Path) -> Result<GrayImage> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "png" {
        let img = image::open(path).map_err(|e| Error::Format(e.to_string()))?.to_luma8();
        let (w, h) = img.dimensions();
        Ok(from_u8(&Grid::from_vec(w as usize, h as usize, img.into_raw())))
    } else {
        Ok(from_u8(&read_pgm(std::fs::File::open(path)?)?))
    }
}

/// Saves a grayscale image as `.png` or `.pgm` by extension.
pub fn save_gray(img: &GrayImage, path: &Path) -> Result<()> {
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
    if ext == "png" {
        let q = to_u8(img);
        let buf = image::GrayImage::from_raw(q.width as u32, q.height as u32, q.data)
            .ok_or_else(|| Error::Format("image buffer size".into()))?;
        buf.save(path).map_err(|e| Error::Format(e.to_string()))
    } else {
        write_pgm(img, std::io::BufWriter::new(std::fs::File::create(path)?))
    }
}
