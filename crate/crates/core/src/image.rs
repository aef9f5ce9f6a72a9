//! Grayscale slices and per-patient slice stacks.

use crate::error::{Error, Result};
use crate::numkernel::Tensor;

/// One H×W grayscale slice with intensities in `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    pixels: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, pixels: Vec<f32>) -> Result<Self> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape(format!("image must be non-empty, got {height}x{width}")));
        }
        if pixels.len() != height * width {
            return Err(Error::InvalidShape(format!(
                "{height}x{width} image needs {} pixels, got {}",
                height * width,
                pixels.len()
            )));
        }
        if let Some(bad) = pixels.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidArgument(format!("pixel value {bad} outside [0, 1]")));
        }
        Ok(Image {
            height,
            width,
            pixels,
        })
    }

    pub fn filled(height: usize, width: usize, value: f32) -> Result<Self> {
        Image::new(height, width, vec![value; height * width])
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn pixels(&self) -> &[f32] {
        &self.pixels
    }

    #[inline]
    pub fn get(&self, y: usize, x: usize) -> f32 {
        self.pixels[y * self.width + x]
    }

    /// Sets a pixel, clamping the value into `[0, 1]`.
    #[inline]
    pub fn set(&mut self, y: usize, x: usize, v: f32) {
        self.pixels[y * self.width + x] = v.clamp(0.0, 1.0);
    }

    /// Bilinear resampling with half-pixel centres and edge clamping.
    pub fn resize(&self, height: usize, width: usize) -> Result<Image> {
        if height == 0 || width == 0 {
            return Err(Error::InvalidShape("resize target must be non-empty".into()));
        }
        if height == self.height && width == self.width {
            return Ok(self.clone());
        }
        let sy = self.height as f64 / height as f64;
        let sx = self.width as f64 / width as f64;
        let mut out = Vec::with_capacity(height * width);
        for y in 0..height {
            let fy = ((y as f64 + 0.5) * sy - 0.5).clamp(0.0, (self.height - 1) as f64);
            let y0 = fy.floor() as usize;
            let y1 = (y0 + 1).min(self.height - 1);
            let ty = fy - y0 as f64;
            for x in 0..width {
                let fx = ((x as f64 + 0.5) * sx - 0.5).clamp(0.0, (self.width - 1) as f64);
                let x0 = fx.floor() as usize;
                let x1 = (x0 + 1).min(self.width - 1);
                let tx = fx - x0 as f64;
                let top = self.get(y0, x0) as f64 * (1.0 - tx) + self.get(y0, x1) as f64 * tx;
                let bot = self.get(y1, x0) as f64 * (1.0 - tx) + self.get(y1, x1) as f64 * tx;
                out.push(((top * (1.0 - ty) + bot * ty) as f32).clamp(0.0, 1.0));
            }
        }
        Image::new(height, width, out)
    }

    /// `[H, W, 1]` tensor view of the pixels, widened to `f64`.
    pub fn to_tensor(&self) -> Tensor {
        let data = self.pixels.iter().map(|&p| p as f64).collect();
        Tensor::new(&[self.height, self.width, 1], data).expect("image dims are consistent")
    }
}

/// One patient's ordered slice stack.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume {
    patient_id: String,
    slices: Vec<Image>,
}

impl Volume {
    pub fn new(patient_id: impl Into<String>, slices: Vec<Image>) -> Result<Self> {
        let patient_id = patient_id.into();
        let first = slices.first().ok_or_else(|| {
            Error::InvalidArgument(format!("volume {patient_id:?} has no slices"))
        })?;
        let (h, w) = (first.height(), first.width());
        for (i, s) in slices.iter().enumerate() {
            if s.height() != h || s.width() != w {
                return Err(Error::InvalidShape(format!(
                    "volume {patient_id:?}: slice {i} is {}x{}, expected {h}x{w}",
                    s.height(),
                    s.width()
                )));
            }
        }
        Ok(Volume { patient_id, slices })
    }

    pub fn patient_id(&self) -> &str {
        &self.patient_id
    }

    pub fn slices(&self) -> &[Image] {
        &self.slices
    }

    pub fn len(&self) -> usize {
        self.slices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.slices.is_empty()
    }

    pub fn height(&self) -> usize {
        self.slices[0].height()
    }

    pub fn width(&self) -> usize {
        self.slices[0].width()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_out_of_range_pixels() {
        assert!(Image::new(1, 2, vec![0.0, 1.5]).is_err());
        assert!(Image::new(1, 2, vec![0.0]).is_err());
    }

    #[test]
    fn volume_requires_uniform_slices() {
        let a = Image::filled(4, 4, 0.5).unwrap();
        let b = Image::filled(4, 5, 0.5).unwrap();
        assert!(Volume::new("p", vec![]).is_err());
        assert!(Volume::new("p", vec![a.clone(), b]).is_err());
        assert_eq!(Volume::new("p", vec![a.clone(), a]).unwrap().len(), 2);
    }

    #[test]
    fn resize_preserves_constant_images() {
        let img = Image::filled(48, 80, 0.25).unwrap();
        let r = img.resize(64, 64).unwrap();
        assert!(r.pixels().iter().all(|&p| (p - 0.25).abs() < 1e-7));
    }

    #[test]
    fn resize_downsample_by_two_averages_blocks() {
        let img = Image::new(2, 2, vec![0.0, 1.0, 1.0, 0.0]).unwrap();
        let r = img.resize(1, 1).unwrap();
        assert!((r.get(0, 0) - 0.5).abs() < 1e-7);
    }
}
