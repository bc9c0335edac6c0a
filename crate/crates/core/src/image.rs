//! Three-channel floating point images.
//!
//! Pixels are stored interleaved (`[r, g, b, r, g, b, ...]`) in row-major
//! order. The same type is used for canonical linear images and for
//! JPEG-domain (display-encoded) images; which domain an image lives in is a
//! property of where it came from, not of the type.

use crate::error::{ensure, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(
            data.len() == width * height * 3,
            Shape,
            "image {}x{} needs {} values, got {}",
            width,
            height,
            width * height * 3,
            data.len()
        );
        Ok(Image { width, height, data })
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let data = (0..width * height).flat_map(|_| rgb).collect();
        Image { width, height, data }
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> [f32; 3]) -> Self {
        let mut data = Vec::with_capacity(width * height * 3);
        for y in 0..height {
            for x in 0..width {
                data.extend_from_slice(&f(x, y));
            }
        }
        Image { width, height, data }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    pub fn pixel(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    pub fn set_pixel(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn pixels(&self) -> impl Iterator<Item = [f32; 3]> + '_ {
        self.data.chunks_exact(3).map(|p| [p[0], p[1], p[2]])
    }

    pub fn same_size(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn check_same_size(&self, other: &Image, what: &str) -> Result<()> {
        if self.same_size(other) {
            Ok(())
        } else {
            Err(Error::Shape(format!(
                "{what}: {}x{} vs {}x{}",
                self.width, self.height, other.width, other.height
            )))
        }
    }

    pub fn map(&self, mut f: impl FnMut(f32) -> f32) -> Image {
        Image {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn clamp01(&self) -> Image {
        self.map(|v| v.clamp(0.0, 1.0))
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Channel-planar copy (`[3, H, W]`), the layout the networks consume.
    pub fn to_planar(&self) -> Vec<f32> {
        let n = self.pixel_count();
        let mut out = vec![0.0; 3 * n];
        for (p, px) in self.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * n + p] = px[c];
            }
        }
        out
    }

    pub fn from_planar(width: usize, height: usize, planar: &[f32]) -> Result<Self> {
        let n = width * height;
        ensure!(planar.len() == 3 * n, Shape, "planar buffer has {} values, need {}", planar.len(), 3 * n);
        let mut data = vec![0.0; 3 * n];
        for p in 0..n {
            for c in 0..3 {
                data[p * 3 + c] = planar[c * n + p];
            }
        }
        Ok(Image { width, height, data })
    }

    pub fn flip_horizontal(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| self.pixel(self.width - 1 - x, y))
    }

    pub fn flip_vertical(&self) -> Image {
        Image::from_fn(self.width, self.height, |x, y| self.pixel(x, self.height - 1 - y))
    }

    pub fn crop(&self, left: usize, top: usize, width: usize, height: usize) -> Result<Image> {
        ensure!(
            left + width <= self.width && top + height <= self.height,
            Contract,
            "crop {}x{}+{}+{} exceeds {}x{} image",
            width,
            height,
            left,
            top,
            self.width,
            self.height
        );
        Ok(Image::from_fn(width, height, |x, y| self.pixel(left + x, top + y)))
    }

    /// Bilinear resampling with pixel-center alignment.
    pub fn resize_bilinear(&self, width: usize, height: usize) -> Image {
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let max_x = self.width - 1;
        let max_y = self.height - 1;
        Image::from_fn(width, height, |x, y| {
            let fx = ((x as f32 + 0.5) * sx - 0.5).clamp(0.0, max_x as f32);
            let fy = ((y as f32 + 0.5) * sy - 0.5).clamp(0.0, max_y as f32);
            let x0 = fx.floor() as usize;
            let y0 = fy.floor() as usize;
            let x1 = (x0 + 1).min(max_x);
            let y1 = (y0 + 1).min(max_y);
            let tx = fx - x0 as f32;
            let ty = fy - y0 as f32;
            let (a, b, c, d) = (self.pixel(x0, y0), self.pixel(x1, y0), self.pixel(x0, y1), self.pixel(x1, y1));
            let mut out = [0.0; 3];
            for k in 0..3 {
                let top = a[k] + (b[k] - a[k]) * tx;
                let bottom = c[k] + (d[k] - c[k]) * tx;
                out[k] = top + (bottom - top) * ty;
            }
            out
        })
    }
}

/// Single-channel mask with values in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    width: usize,
    height: usize,
    data: Vec<f32>,
}

impl Mask {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Result<Self> {
        ensure!(data.len() == width * height, Shape, "mask {}x{} needs {} values, got {}", width, height, width * height, data.len());
        ensure!(
            data.iter().all(|v| (0.0..=1.0).contains(v)),
            Contract,
            "mask values must lie in [0, 1]"
        );
        Ok(Mask { width, height, data })
    }

    pub fn filled(width: usize, height: usize, value: f32) -> Result<Self> {
        Mask::new(width, height, vec![value; width * height])
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn at(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }
}
