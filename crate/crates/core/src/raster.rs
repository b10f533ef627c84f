//! Floating-point image buffers and PNG I/O.
//!
//! Values are stored as `f64` in row-major, channel-interleaved order. 8-bit
//! images load with values in `[0, 255]`; the event simulator works on
//! brightness normalized to `[0, 1]` (see [`Raster::normalized`]).

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, Rgb, RgbImage};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum RasterError {
    #[error("image error: {0}")]
    Image(#[from] image::ImageError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("unsupported channel count {0}")]
    Channels(usize),
    #[error("buffer of length {len} does not fit {width}x{height}x{channels}")]
    Shape { len: usize, width: u32, height: u32, channels: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct Raster {
    width: u32,
    height: u32,
    channels: usize,
    data: Vec<f64>,
}

impl Raster {
    pub fn new(width: u32, height: u32, channels: usize, data: Vec<f64>) -> Result<Self, RasterError> {
        if channels == 0 {
            return Err(RasterError::Channels(channels));
        }
        if data.len() != width as usize * height as usize * channels {
            return Err(RasterError::Shape { len: data.len(), width, height, channels });
        }
        Ok(Self { width, height, channels, data })
    }

    pub fn zeros(width: u32, height: u32, channels: usize) -> Self {
        Self { width, height, channels, data: vec![0.0; width as usize * height as usize * channels] }
    }

    pub fn filled(width: u32, height: u32, value: f64) -> Self {
        Self { width, height, channels: 1, data: vec![value; width as usize * height as usize] }
    }

    pub fn from_fn(width: u32, height: u32, f: impl Fn(u32, u32) -> f64) -> Self {
        let mut data = Vec::with_capacity(width as usize * height as usize);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self { width, height, channels: 1, data }
    }

    pub fn width(&self) -> u32 {
        self.width
    }

    pub fn height(&self) -> u32 {
        self.height
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn dimensions(&self) -> (u32, u32) {
        (self.width, self.height)
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    #[inline]
    fn index(&self, x: u32, y: u32, c: usize) -> usize {
        (y as usize * self.width as usize + x as usize) * self.channels + c
    }

    #[inline]
    pub fn get(&self, x: u32, y: u32, c: usize) -> f64 {
        self.data[self.index(x, y, c)]
    }

    #[inline]
    pub fn set(&mut self, x: u32, y: u32, c: usize, v: f64) {
        let i = self.index(x, y, c);
        self.data[i] = v;
    }

    /// Single-channel pixel access for grayscale rasters.
    #[inline]
    pub fn at(&self, x: u32, y: u32) -> f64 {
        self.data[y as usize * self.width as usize + x as usize]
    }

    /// Bilinear sample of channel `c` at a sub-pixel position, `None` outside
    /// `[0, w-1] × [0, h-1]`. Coordinates within 1e-9 of an integer snap to it
    /// so integer-aligned resampling stays exact.
    pub fn sample_bilinear(&self, x: f64, y: f64, c: usize) -> Option<f64> {
        let snap = |v: f64| {
            let r = v.round();
            if (v - r).abs() < 1e-9 {
                r
            } else {
                v
            }
        };
        let (x, y) = (snap(x), snap(y));
        if !(x >= 0.0 && y >= 0.0 && x <= (self.width - 1) as f64 && y <= (self.height - 1) as f64) {
            return None;
        }
        let x0 = x.floor() as u32;
        let y0 = y.floor() as u32;
        let fx = x - x0 as f64;
        let fy = y - y0 as f64;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let top = if fx == 0.0 { self.get(x0, y0, c) } else { self.get(x0, y0, c) * (1.0 - fx) + self.get(x1, y0, c) * fx };
        if fy == 0.0 {
            return Some(top);
        }
        let bottom = if fx == 0.0 { self.get(x0, y1, c) } else { self.get(x0, y1, c) * (1.0 - fx) + self.get(x1, y1, c) * fx };
        Some(top * (1.0 - fy) + bottom * fy)
    }

    /// Rec. 601 luma for 3-channel rasters; single-channel rasters are cloned.
    pub fn to_gray(&self) -> Raster {
        match self.channels {
            1 => self.clone(),
            3 | 4 => {
                let data = self.data.chunks_exact(self.channels).map(|px| 0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]).collect();
                Raster { width: self.width, height: self.height, channels: 1, data }
            }
            _ => {
                let n = self.channels as f64;
                let data = self.data.chunks_exact(self.channels).map(|px| px.iter().sum::<f64>() / n).collect();
                Raster { width: self.width, height: self.height, channels: 1, data }
            }
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Raster {
        Raster { data: self.data.iter().map(|&v| f(v)).collect(), ..self.clone() }
    }

    /// 8-bit values rescaled to `[0, 1]`.
    pub fn normalized(&self) -> Raster {
        self.map(|v| v / 255.0)
    }

    /// Values rounded and clamped to `[0, 255]`, as they would be stored.
    pub fn quantized(&self) -> Raster {
        self.map(quantize)
    }

    pub fn from_gray_image(img: &GrayImage) -> Raster {
        let (w, h) = img.dimensions();
        Raster { width: w, height: h, channels: 1, data: img.as_raw().iter().map(|&v| v as f64).collect() }
    }

    pub fn from_dynamic(img: &DynamicImage) -> Raster {
        match img {
            DynamicImage::ImageLuma8(g) => Self::from_gray_image(g),
            DynamicImage::ImageLuma16(_) | DynamicImage::ImageLumaA8(_) | DynamicImage::ImageLumaA16(_) => Self::from_gray_image(&img.to_luma8()),
            _ => {
                let rgb = img.to_rgb8();
                let (w, h) = rgb.dimensions();
                Raster { width: w, height: h, channels: 3, data: rgb.as_raw().iter().map(|&v| v as f64).collect() }
            }
        }
    }

    pub fn load(path: &Path) -> Result<Raster, RasterError> {
        Ok(Self::from_dynamic(&image::open(path)?))
    }

    pub fn to_dynamic(&self) -> Result<DynamicImage, RasterError> {
        let bytes: Vec<u8> = self.data.iter().map(|&v| quantize(v) as u8).collect();
        match self.channels {
            1 => Ok(DynamicImage::ImageLuma8(ImageBuffer::<Luma<u8>, _>::from_raw(self.width, self.height, bytes).expect("shape checked"))),
            3 => Ok(DynamicImage::ImageRgb8(ImageBuffer::<Rgb<u8>, _>::from_raw(self.width, self.height, bytes).expect("shape checked"))),
            c => Err(RasterError::Channels(c)),
        }
    }

    pub fn to_rgb_image(&self) -> Result<RgbImage, RasterError> {
        Ok(self.to_dynamic()?.to_rgb8())
    }

    /// Writes an 8-bit PNG (values rounded and clamped).
    pub fn save_png(&self, path: &Path) -> Result<(), RasterError> {
        self.to_dynamic()?.save_with_format(path, image::ImageFormat::Png)?;
        Ok(())
    }
}

#[inline]
pub fn quantize(v: f64) -> f64 {
    v.round().clamp(0.0, 255.0)
}
