//! Minimal RGB image assembly and PNG encoding for sample grids and strips.

use std::fs::File;
use std::io::BufWriter;
use std::path::Path;

use crate::data::{HEIGHT, WIDTH};
use crate::error::{Error, Result};

/// An 8-bit RGB raster.
#[derive(Clone, Debug, PartialEq)]
pub struct Rgb {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

fn to_byte(v: f32) -> u8 {
    (((v.clamp(-1.0, 1.0) + 1.0) * 127.5).round()) as u8
}

impl Rgb {
    pub fn new(width: usize, height: usize) -> Self {
        Self {
            width,
            height,
            pixels: vec![0; width * height * 3],
        }
    }

    /// Red/green overlay of two `[-1, 1]` planes, the usual two-channel microscopy view.
    pub fn overlay(red: &[f32], green: Option<&[f32]>) -> Self {
        let mut out = Self::new(WIDTH, HEIGHT);
        for i in 0..HEIGHT * WIDTH {
            out.pixels[3 * i] = to_byte(red[i]);
            out.pixels[3 * i + 1] = green.map_or(0, |g| to_byte(g[i]));
        }
        out
    }

    /// A single plane in gray levels, or tinted into one RGB component.
    pub fn plane(values: &[f32], tint: Option<usize>) -> Self {
        let mut out = Self::new(WIDTH, HEIGHT);
        for (i, &v) in values.iter().enumerate().take(HEIGHT * WIDTH) {
            let b = to_byte(v);
            match tint {
                Some(c) => out.pixels[3 * i + c] = b,
                None => out.pixels[3 * i..3 * i + 3].fill(b),
            }
        }
        out
    }

    pub fn blit(&mut self, tile: &Rgb, top: usize, left: usize) {
        for y in 0..tile.height.min(self.height.saturating_sub(top)) {
            let src = &tile.pixels[y * tile.width * 3..][..tile.width.min(self.width - left) * 3];
            let start = ((top + y) * self.width + left) * 3;
            self.pixels[start..start + src.len()].copy_from_slice(src);
        }
    }

    /// Tiles `rows × cols` equally sized images with a `gap`-pixel white border.
    pub fn grid(tiles: &[Rgb], cols: usize, gap: usize) -> Self {
        let cols = cols.max(1);
        let rows = tiles.len().div_ceil(cols);
        let (tw, th) = tiles.first().map_or((0, 0), |t| (t.width, t.height));
        let mut out = Self::new(cols * (tw + gap) + gap, rows * (th + gap) + gap);
        out.pixels.fill(255);
        for (i, t) in tiles.iter().enumerate() {
            out.blit(t, gap + (i / cols) * (th + gap), gap + (i % cols) * (tw + gap));
        }
        out
    }

    pub fn write_png(&self, path: &Path) -> Result<()> {
        let file = File::create(path).map_err(|e| Error::io(path, e))?;
        let mut enc = png::Encoder::new(BufWriter::new(file), self.width as u32, self.height as u32);
        enc.set_color(png::ColorType::Rgb);
        enc.set_depth(png::BitDepth::Eight);
        let mut writer = enc
            .write_header()
            .map_err(|e| Error::io(path, std::io::Error::other(e)))?;
        writer
            .write_image_data(&self.pixels)
            .map_err(|e| Error::io(path, std::io::Error::other(e)))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_layout_and_png_round_trip() {
        let red = vec![1.0f32; HEIGHT * WIDTH];
        let tiles = vec![Rgb::overlay(&red, None); 5];
        let g = Rgb::grid(&tiles, 2, 1);
        assert_eq!((g.width, g.height), (2 * 81 + 1, 3 * 49 + 1));
        assert_eq!(&g.pixels[(g.width + 1) * 3..(g.width + 1) * 3 + 3], &[255, 0, 0]);
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("g.png");
        g.write_png(&p).unwrap();
        let decoder = png::Decoder::new(std::io::BufReader::new(File::open(&p).unwrap()));
        let reader = decoder.read_info().unwrap();
        assert_eq!(reader.info().width as usize, g.width);
    }
}
