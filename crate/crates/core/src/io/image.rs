//! 8-bit images: binary PGM/PPM writing, PNM (plain or binary) and PNG
//! reading.

use std::fs::File;
use std::io::{BufReader, Read};
use std::path::Path;

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    /// 1 (gray) or 3 (RGB).
    pub channels: usize,
    pub data: Vec<u8>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Result<Self> {
        if width == 0 || height == 0 || !(channels == 1 || channels == 3) {
            return Err(Error::invalid("image needs positive size and 1 or 3 channels"));
        }
        Ok(Self { width, height, channels, data: vec![0; width * height * channels] })
    }

    /// Gray image from values in `[0, 1]` (clamped), row-major.
    pub fn from_unit_gray(width: usize, height: usize, values: &[f64]) -> Result<Self> {
        if values.len() != width * height {
            return Err(Error::invalid("pixel count does not match image size"));
        }
        let mut img = Self::new(width, height, 1)?;
        for (p, v) in img.data.iter_mut().zip(values) {
            *p = quantize(*v);
        }
        Ok(img)
    }

    pub fn put(&mut self, x: usize, y: usize, rgb: [u8; 3]) {
        if x >= self.width || y >= self.height {
            return;
        }
        let at = (y * self.width + x) * self.channels;
        if self.channels == 1 {
            self.data[at] = ((rgb[0] as u16 + rgb[1] as u16 + rgb[2] as u16) / 3) as u8;
        } else {
            self.data[at..at + 3].copy_from_slice(&rgb);
        }
    }

    /// Gray level of a pixel in `[0, 1]` (RGB averaged).
    pub fn gray(&self, x: usize, y: usize) -> f64 {
        let at = (y * self.width + x) * self.channels;
        let sum: u32 = self.data[at..at + self.channels].iter().map(|&v| v as u32).sum();
        sum as f64 / (255.0 * self.channels as f64)
    }

    /// Binary PGM (`P5`) or PPM (`P6`).
    pub fn encode_pnm(&self) -> Vec<u8> {
        let magic = if self.channels == 1 { "P5" } else { "P6" };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend_from_slice(&self.data);
        out
    }

    pub fn write_pnm(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.encode_pnm()).map_err(|e| Error::io(path, e))
    }

    pub fn decode_pnm(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::Format(format!("PNM: {m}"));
        let mut pos = 0;
        let mut token = || -> Result<String> {
            loop {
                while pos < bytes.len() && bytes[pos].is_ascii_whitespace() {
                    pos += 1;
                }
                if pos < bytes.len() && bytes[pos] == b'#' {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                    continue;
                }
                break;
            }
            let start = pos;
            while pos < bytes.len() && !bytes[pos].is_ascii_whitespace() {
                pos += 1;
            }
            if start == pos {
                return Err(bad("truncated header"));
            }
            Ok(String::from_utf8_lossy(&bytes[start..pos]).into_owned())
        };
        let magic = token()?;
        let (channels, binary) = match magic.as_str() {
            "P2" => (1, false),
            "P3" => (3, false),
            "P5" => (1, true),
            "P6" => (3, true),
            _ => return Err(bad("unsupported magic number")),
        };
        let num = |s: String| s.parse::<usize>().map_err(|_| bad("bad header number"));
        let width = num(token()?)?;
        let height = num(token()?)?;
        let maxval = num(token()?)?;
        if maxval == 0 || maxval > 255 {
            return Err(bad("only 8-bit images are supported"));
        }
        let count = width * height * channels;
        let raw: Vec<usize> = if binary {
            let start = pos + 1;
            if bytes.len() < start + count {
                return Err(bad("truncated pixel data"));
            }
            bytes[start..start + count].iter().map(|&b| b as usize).collect()
        } else {
            (0..count).map(|_| token().and_then(num)).collect::<Result<_>>()?
        };
        let mut img = Image::new(width, height, channels)?;
        for (p, v) in img.data.iter_mut().zip(raw) {
            *p = (v.min(maxval) * 255 / maxval) as u8;
        }
        Ok(img)
    }

    /// Reads PGM/PPM, or PNG by extension.
    pub fn read(path: &Path) -> Result<Self> {
        let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("").to_ascii_lowercase();
        if ext == "png" {
            return read_png(path);
        }
        let mut bytes = Vec::new();
        File::open(path)
            .and_then(|mut f| f.read_to_end(&mut bytes))
            .map_err(|e| Error::io(path, e))?;
        Self::decode_pnm(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
    }
}

fn read_png(path: &Path) -> Result<Image> {
    let file = File::open(path).map_err(|e| Error::io(path, e))?;
    let mut decoder = png::Decoder::new(BufReader::new(file));
    decoder.set_transformations(png::Transformations::normalize_to_color8());
    let fail = |e: png::DecodingError| Error::Format(format!("{}: {e}", path.display()));
    let mut reader = decoder.read_info().map_err(fail)?;
    let size = reader
        .output_buffer_size()
        .ok_or_else(|| Error::Format(format!("{}: image too large", path.display())))?;
    let mut buf = vec![0; size];
    let info = reader.next_frame(&mut buf).map_err(fail)?;
    let (w, h) = (info.width as usize, info.height as usize);
    let src_channels = info.color_type.samples();
    let mut img = Image::new(w, h, 1)?;
    for i in 0..w * h {
        let px = &buf[i * src_channels..(i + 1) * src_channels];
        let color = if src_channels >= 3 { &px[..3] } else { &px[..1] };
        let sum: u32 = color.iter().map(|&v| v as u32).sum();
        img.data[i] = (sum / color.len() as u32) as u8;
    }
    Ok(img)
}

pub fn quantize(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}
