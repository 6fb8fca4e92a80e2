//! Planar-free, row-major `h × w × c` floating point images plus PGM/PPM I/O.

use std::path::Path;

use crate::error::{Error, Result};

/// ITU-R BT.601 luma weights.
pub const LUMA: [f64; 3] = [0.299, 0.587, 0.114];

#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize) -> Self {
        Self::filled(height, width, channels, 0.0)
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f64) -> Self {
        Image {
            height,
            width,
            channels,
            data: vec![value; height * width * channels],
        }
    }

    pub fn from_vec(height: usize, width: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if data.len() != height * width * channels {
            return Err(Error::Shape {
                op: "image",
                lhs: vec![height, width, channels],
                rhs: vec![data.len()],
            });
        }
        Ok(Image {
            height,
            width,
            channels,
            data,
        })
    }

    /// Single-channel image from a per-pixel function of `(row, col)`.
    pub fn from_fn(height: usize, width: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(height * width);
        for y in 0..height {
            for x in 0..width {
                data.push(f(y, x));
            }
        }
        Image {
            height,
            width,
            channels: 1,
            data,
        }
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn shape(&self) -> [usize; 3] {
        [self.height, self.width, self.channels]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn at(&self, y: usize, x: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, y: usize, x: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// Value at `(y, x)` of a single-channel image.
    #[inline]
    pub fn px(&self, y: usize, x: usize) -> f64 {
        self.data[y * self.width + x]
    }

    /// Reflect-101 border sampling (`-1 -> 1`, `w -> w-2`).
    pub fn at_reflect(&self, y: isize, x: isize, c: usize) -> f64 {
        let y = reflect(y, self.height);
        let x = reflect(x, self.width);
        self.at(y, x, c)
    }

    /// Bilinear sample at fractional coordinates with reflective borders.
    pub fn sample_bilinear(&self, y: f64, x: f64, c: usize) -> f64 {
        let y0 = y.floor();
        let x0 = x.floor();
        let fy = y - y0;
        let fx = x - x0;
        let (y0, x0) = (y0 as isize, x0 as isize);
        let a = self.at_reflect(y0, x0, c);
        let b = self.at_reflect(y0, x0 + 1, c);
        let d = self.at_reflect(y0 + 1, x0, c);
        let e = self.at_reflect(y0 + 1, x0 + 1, c);
        (1.0 - fy) * ((1.0 - fx) * a + fx * b) + fy * ((1.0 - fx) * d + fx * e)
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..*self
        }
    }

    pub fn clamp01(mut self) -> Image {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
        self
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Luma conversion for 3-channel input; single-channel images are returned as is.
    pub fn to_gray(&self) -> Image {
        match self.channels {
            1 => self.clone(),
            3 => {
                let data = self
                    .data
                    .chunks_exact(3)
                    .map(|p| LUMA[0] * p[0] + LUMA[1] * p[1] + LUMA[2] * p[2])
                    .collect();
                Image {
                    height: self.height,
                    width: self.width,
                    channels: 1,
                    data,
                }
            }
            _ => {
                let c = self.channels as f64;
                let data = self
                    .data
                    .chunks_exact(self.channels)
                    .map(|p| p.iter().sum::<f64>() / c)
                    .collect();
                Image {
                    height: self.height,
                    width: self.width,
                    channels: 1,
                    data,
                }
            }
        }
    }

    /// Replicates a gray image into `channels` identical planes.
    pub fn expand_channels(&self, channels: usize) -> Image {
        if self.channels == channels {
            return self.clone();
        }
        let gray = self.to_gray();
        let mut data = Vec::with_capacity(gray.data.len() * channels);
        for &v in &gray.data {
            data.extend(std::iter::repeat_n(v, channels));
        }
        Image {
            height: self.height,
            width: self.width,
            channels,
            data,
        }
    }

    pub fn crop(&self, y0: usize, x0: usize, h: usize, w: usize) -> Image {
        let c = self.channels;
        let mut data = Vec::with_capacity(h * w * c);
        for y in y0..y0 + h {
            let start = ((y * self.width) + x0) * c;
            data.extend_from_slice(&self.data[start..start + w * c]);
        }
        Image {
            height: h,
            width: w,
            channels: c,
            data,
        }
    }

    /// Reads binary or ASCII PGM (gray) / PPM (RGB), scaled to `[0, 1]`.
    pub fn read_pnm(path: impl AsRef<Path>) -> Result<Image> {
        let path = path.as_ref();
        let img = image::open(path).map_err(|e| Error::Image {
            path: path.to_path_buf(),
            message: e.to_string(),
        })?;
        let (width, height) = (img.width() as usize, img.height() as usize);
        let out = match img.color().channel_count() {
            1 | 2 => {
                let buf = img.into_luma16();
                let data = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
                Image {
                    height,
                    width,
                    channels: 1,
                    data,
                }
            }
            _ => {
                let buf = img.into_rgb16();
                let data = buf.into_raw().into_iter().map(|v| v as f64 / 65535.0).collect();
                Image {
                    height,
                    width,
                    channels: 3,
                    data,
                }
            }
        };
        Ok(out)
    }

    /// 8-bit binary PNM bytes: P5 for one channel, P6 for three.
    pub fn to_pnm_bytes(&self) -> Result<Vec<u8>> {
        let magic = match self.channels {
            1 => "P5",
            3 => "P6",
            c => return Err(Error::invalid(format!("cannot encode {c}-channel image as PNM"))),
        };
        let mut out = format!("{magic}\n{} {}\n255\n", self.width, self.height).into_bytes();
        out.extend(self.data.iter().map(|&v| quantize_u8(v)));
        Ok(out)
    }

    pub fn write_pnm(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let bytes = self.to_pnm_bytes()?;
        std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
    }

    /// Round-trips through 8-bit quantization, i.e. what a reader of the written file sees.
    pub fn quantized(&self) -> Image {
        self.map(|v| quantize_u8(v) as f64 / 255.0)
    }
}

pub fn quantize_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn reflect(i: isize, n: usize) -> usize {
    let n = n as isize;
    if n == 1 {
        return 0;
    }
    let period = 2 * (n - 1);
    let mut i = i.rem_euclid(period);
    if i >= n {
        i = period - i;
    }
    i as usize
}

/// Area-weighted (box filter) resampling to an arbitrary size.
pub fn resize_area(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (h, w, c) = (img.height, img.width, img.channels);
    let wy = area_weights(h, out_h);
    let wx = area_weights(w, out_w);
    let mut out = Image::new(out_h, out_w, c);
    for (oy, ry) in wy.iter().enumerate() {
        for (ox, rx) in wx.iter().enumerate() {
            for ch in 0..c {
                let mut acc = 0.0;
                for &(iy, fy) in ry {
                    for &(ix, fx) in rx {
                        acc += fy * fx * img.at(iy, ix, ch);
                    }
                }
                out.set(oy, ox, ch, acc);
            }
        }
    }
    out
}

/// Bilinear resampling with half-pixel-centre alignment and clamped borders.
pub fn resize_bilinear(img: &Image, out_h: usize, out_w: usize) -> Image {
    let (h, w, c) = (img.height, img.width, img.channels);
    let sy = h as f64 / out_h as f64;
    let sx = w as f64 / out_w as f64;
    let mut out = Image::new(out_h, out_w, c);
    for oy in 0..out_h {
        let fy = ((oy as f64 + 0.5) * sy - 0.5).clamp(0.0, (h - 1) as f64);
        let y0 = fy.floor() as usize;
        let y1 = (y0 + 1).min(h - 1);
        let ty = fy - y0 as f64;
        for ox in 0..out_w {
            let fx = ((ox as f64 + 0.5) * sx - 0.5).clamp(0.0, (w - 1) as f64);
            let x0 = fx.floor() as usize;
            let x1 = (x0 + 1).min(w - 1);
            let tx = fx - x0 as f64;
            for ch in 0..c {
                let top = (1.0 - tx) * img.at(y0, x0, ch) + tx * img.at(y0, x1, ch);
                let bot = (1.0 - tx) * img.at(y1, x0, ch) + tx * img.at(y1, x1, ch);
                out.set(oy, ox, ch, (1.0 - ty) * top + ty * bot);
            }
        }
    }
    out
}

// For each output cell, the input indices it covers and their normalized overlap.
fn area_weights(n_in: usize, n_out: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let lo = o as f64 * scale;
            let hi = (o + 1) as f64 * scale;
            let mut v = Vec::new();
            let mut i = lo.floor() as usize;
            while (i as f64) < hi && i < n_in {
                let overlap = (hi.min(i as f64 + 1.0) - lo.max(i as f64)).max(0.0);
                if overlap > 0.0 {
                    v.push((i, overlap / scale));
                }
                i += 1;
            }
            v
        })
        .collect()
}
