use super::{Dataset, Image2C, Plane, HEIGHT, WIDTH};
use crate::error::{Error, Result};

/// A raw multi-channel intensity image of arbitrary size, row-major per channel.
#[derive(Clone, Debug, PartialEq)]
pub struct RawImage {
    pub height: usize,
    pub width: usize,
    pub channels: Vec<Vec<f32>>,
}

impl RawImage {
    pub fn new(height: usize, width: usize, channels: Vec<Vec<f32>>) -> Result<Self> {
        for (i, c) in channels.iter().enumerate() {
            if c.len() != height * width {
                return Err(Error::Shape(format!(
                    "channel {i} has {} values, expected {height}×{width}",
                    c.len()
                )));
            }
        }
        Ok(Self {
            height,
            width,
            channels,
        })
    }
}

/// Largest centered window with the `HEIGHT:WIDTH` aspect ratio: `(top, left, h, w)`.
pub fn crop_to_aspect(height: usize, width: usize) -> (usize, usize, usize, usize) {
    if height * WIDTH > width * HEIGHT {
        let h = ((width * HEIGHT) as f64 / WIDTH as f64).round() as usize;
        ((height - h) / 2, 0, h, width)
    } else {
        let w = ((height * WIDTH) as f64 / HEIGHT as f64).round() as usize;
        (0, (width - w) / 2, height, w)
    }
}

/// Bilinear resampling with half-pixel centers and edge clamping.
pub fn resize_bilinear(src: &[f32], h: usize, w: usize, out_h: usize, out_w: usize) -> Vec<f32> {
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let axis = |o: usize, scale: f64, n: usize| {
        let p = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
        let i0 = (p.floor() as usize).min(n - 1);
        let i1 = (i0 + 1).min(n - 1);
        (i0, i1, p - i0 as f64)
    };
    let cols: Vec<_> = (0..out_w).map(|x| axis(x, sx, w)).collect();
    let mut out = Vec::with_capacity(out_h * out_w);
    for y in 0..out_h {
        let (y0, y1, fy) = axis(y, sy, h);
        for &(x0, x1, fx) in &cols {
            let at = |yy: usize, xx: usize| src[yy * w + xx] as f64;
            let top = at(y0, x0) * (1.0 - fx) + at(y0, x1) * fx;
            let bottom = at(y1, x0) * (1.0 - fx) + at(y1, x1) * fx;
            out.push((top * (1.0 - fy) + bottom * fy) as f32);
        }
    }
    out
}

/// Affine min-max map of a channel onto `[-1, 1]`; constant channels are only clamped.
pub fn minmax_normalize(values: &mut [f32]) {
    let (lo, hi) = values
        .iter()
        .fold((f32::INFINITY, f32::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    if hi > lo {
        let scale = 2.0 / (hi as f64 - lo as f64);
        for v in values.iter_mut() {
            *v = ((*v as f64 - lo as f64) * scale - 1.0).clamp(-1.0, 1.0) as f32;
        }
    } else {
        for v in values.iter_mut() {
            *v = v.clamp(-1.0, 1.0);
        }
    }
}

/// Center crop to the 48:80 aspect ratio, resize to 48×80 and rescale to `[-1, 1]`.
pub fn center_crop_resize(image: &RawImage, class: usize) -> Result<Image2C> {
    if image.channels.len() != 2 {
        return Err(Error::Shape(format!(
            "expected 2 channels, got {}",
            image.channels.len()
        )));
    }
    if image.height < 8 || image.width < 8 {
        return Err(Error::Shape(format!(
            "image {}×{} is smaller than 8×8",
            image.height, image.width
        )));
    }
    if image.channels.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite pixel value".into()));
    }
    let (top, left, h, w) = crop_to_aspect(image.height, image.width);
    let mut planes = image.channels.iter().map(|c| {
        let crop: Vec<f32> = (top..top + h)
            .flat_map(|y| c[y * image.width + left..y * image.width + left + w].iter().copied())
            .collect();
        let mut out = resize_bilinear(&crop, h, w, HEIGHT, WIDTH);
        minmax_normalize(&mut out);
        Plane(out)
    });
    Ok(Image2C {
        red: planes.next().unwrap(),
        green: planes.next().unwrap(),
        class,
    })
}

/// Preprocesses externally loaded images into a dataset; `images` pairs each image with its class index.
pub fn ingest_raw(classes: Vec<String>, images: &[(RawImage, usize)]) -> Result<Dataset> {
    let items = images
        .iter()
        .map(|(raw, class)| {
            if *class >= classes.len() {
                return Err(Error::Data(format!("class index {class} out of range")));
            }
            center_crop_resize(raw, *class)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(classes, items))
}
