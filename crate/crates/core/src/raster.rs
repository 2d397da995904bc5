//! 8-bit raster images and their on-disk formats.
//!
//! Pixels are row-major with channels interleaved, so the sample for
//! `(x, y, c)` lives at `(y * width + x) * channels + c`. Two file formats
//! are understood: PNG (gray or RGB, 8-bit) and a raw planar format with a
//! small header:
//!
//! ```text
//! b"RAWP" | u32 LE width | u32 LE height | u32 LE channels | planar bytes
//! ```
//!
//! where the payload stores the whole first channel, then the second, and so on.

use std::fs;
use std::io::Cursor;
use std::path::Path;

use crate::error::{Error, Result};

const RAW_MAGIC: &[u8; 4] = b"RAWP";

#[derive(Clone, PartialEq, Eq, Hash)]
pub struct ImageBuffer {
    width: usize,
    height: usize,
    channels: usize,
    pixels: Vec<u8>,
}

impl std::fmt::Debug for ImageBuffer {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ImageBuffer")
            .field("width", &self.width)
            .field("height", &self.height)
            .field("channels", &self.channels)
            .finish_non_exhaustive()
    }
}

impl ImageBuffer {
    pub fn new(width: usize, height: usize, channels: usize, pixels: Vec<u8>) -> Result<Self> {
        if width == 0 || height == 0 {
            return Err(Error::InvalidImage(format!(
                "dimensions must be positive, got {width}x{height}"
            )));
        }
        if channels != 1 && channels != 3 {
            return Err(Error::InvalidImage(format!(
                "channels must be 1 or 3, got {channels}"
            )));
        }
        let expected = width * height * channels;
        if pixels.len() != expected {
            return Err(Error::InvalidImage(format!(
                "expected {expected} samples, got {}",
                pixels.len()
            )));
        }
        Ok(Self {
            width,
            height,
            channels,
            pixels,
        })
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: u8) -> Result<Self> {
        Self::new(width, height, channels, vec![value; width * height * channels])
    }

    /// Builds an image by evaluating `f(x, y, c)` for every sample.
    pub fn from_fn(
        width: usize,
        height: usize,
        channels: usize,
        mut f: impl FnMut(usize, usize, usize) -> u8,
    ) -> Result<Self> {
        let mut pixels = Vec::with_capacity(width * height * channels);
        for y in 0..height {
            for x in 0..width {
                for c in 0..channels {
                    pixels.push(f(x, y, c));
                }
            }
        }
        Self::new(width, height, channels, pixels)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn pixels(&self) -> &[u8] {
        &self.pixels
    }

    pub fn into_pixels(self) -> Vec<u8> {
        self.pixels
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> u8 {
        self.pixels[(y * self.width + x) * self.channels + c]
    }

    pub fn same_shape(&self, other: &ImageBuffer) -> bool {
        self.width == other.width && self.height == other.height && self.channels == other.channels
    }

    pub fn mean(&self) -> f64 {
        self.pixels.iter().map(|&p| p as f64).sum::<f64>() / self.pixels.len() as f64
    }

    /// Reads a PNG or raw planar file, chosen by extension (`.raw` selects
    /// the planar format, anything else is decoded as PNG).
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("raw") => Self::decode_raw(&bytes),
            _ => Self::decode_png(&bytes),
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let bytes = match path.extension().and_then(|e| e.to_str()) {
            Some(ext) if ext.eq_ignore_ascii_case("raw") => self.encode_raw(),
            _ => self.encode_png()?,
        };
        fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    pub fn decode_png(bytes: &[u8]) -> Result<Self> {
        let decoded = ::image::load_from_memory_with_format(bytes, ::image::ImageFormat::Png)?;
        match decoded.color() {
            ::image::ColorType::L8 | ::image::ColorType::L16 | ::image::ColorType::La8 => {
                let gray = decoded.to_luma8();
                let (w, h) = gray.dimensions();
                Self::new(w as usize, h as usize, 1, gray.into_raw())
            }
            _ => {
                let rgb = decoded.to_rgb8();
                let (w, h) = rgb.dimensions();
                Self::new(w as usize, h as usize, 3, rgb.into_raw())
            }
        }
    }

    pub fn encode_png(&self) -> Result<Vec<u8>> {
        let color = if self.channels == 1 {
            ::image::ExtendedColorType::L8
        } else {
            ::image::ExtendedColorType::Rgb8
        };
        let mut out = Cursor::new(Vec::new());
        ::image::write_buffer_with_format(
            &mut out,
            &self.pixels,
            self.width as u32,
            self.height as u32,
            color,
            ::image::ImageFormat::Png,
        )?;
        Ok(out.into_inner())
    }

    pub fn encode_raw(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(16 + self.pixels.len());
        out.extend_from_slice(RAW_MAGIC);
        out.extend_from_slice(&(self.width as u32).to_le_bytes());
        out.extend_from_slice(&(self.height as u32).to_le_bytes());
        out.extend_from_slice(&(self.channels as u32).to_le_bytes());
        let plane = self.width * self.height;
        for c in 0..self.channels {
            out.extend((0..plane).map(|i| self.pixels[i * self.channels + c]));
        }
        out
    }

    pub fn decode_raw(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 || &bytes[..4] != RAW_MAGIC {
            return Err(Error::InvalidImage("missing RAWP header".into()));
        }
        let word = |i: usize| u32::from_le_bytes(bytes[i..i + 4].try_into().unwrap()) as usize;
        let (width, height, channels) = (word(4), word(8), word(12));
        let plane = width * height;
        let payload = &bytes[16..];
        if payload.len() != plane * channels {
            return Err(Error::InvalidImage(format!(
                "raw payload has {} bytes, header implies {}",
                payload.len(),
                plane * channels
            )));
        }
        let mut pixels = vec![0u8; plane * channels];
        for c in 0..channels {
            for i in 0..plane {
                pixels[i * channels + c] = payload[c * plane + i];
            }
        }
        Self::new(width, height, channels, pixels)
    }
}
