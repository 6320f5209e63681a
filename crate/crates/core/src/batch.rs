//! Dense image batches exchanged between models, classifiers and metrics.

use image::RgbImage;

use crate::error::{Error, Result};

/// NCHW batch of `f32` intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct ImageBatch {
    pub len: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub data: Vec<f32>,
}

impl ImageBatch {
    pub fn new(len: usize, channels: usize, height: usize, width: usize, data: Vec<f32>) -> Result<Self> {
        let expected = len * channels * height * width;
        if data.len() != expected {
            return Err(Error::ShapeMismatch {
                expected: format!("{len}×{channels}×{height}×{width} = {expected} values"),
                got: data.len().to_string(),
            });
        }
        Ok(Self {
            len,
            channels,
            height,
            width,
            data,
        })
    }

    pub fn image_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn from_rgb(images: &[RgbImage]) -> Result<Self> {
        let Some(first) = images.first() else {
            return Err(Error::InsufficientData("empty image list".into()));
        };
        let (w, h) = first.dimensions();
        let plane = (w * h) as usize;
        let mut data = vec![0f32; images.len() * 3 * plane];
        for (n, img) in images.iter().enumerate() {
            if img.dimensions() != (w, h) {
                return Err(Error::ShapeMismatch {
                    expected: format!("{w}×{h}"),
                    got: format!("{}×{}", img.width(), img.height()),
                });
            }
            let base = n * 3 * plane;
            for (p, px) in img.pixels().enumerate() {
                for c in 0..3 {
                    data[base + c * plane + p] = f32::from(px.0[c]) / 255.0;
                }
            }
        }
        Self::new(images.len(), 3, h as usize, w as usize, data)
    }

    pub fn image(&self, n: usize) -> &[f32] {
        let k = self.image_len();
        &self.data[n * k..(n + 1) * k]
    }

    pub fn to_rgb(&self, n: usize) -> Result<RgbImage> {
        if self.channels != 3 {
            return Err(Error::ShapeMismatch {
                expected: "3 channels".into(),
                got: self.channels.to_string(),
            });
        }
        let plane = self.height * self.width;
        let src = self.image(n);
        let mut img = RgbImage::new(self.width as u32, self.height as u32);
        for (p, px) in img.pixels_mut().enumerate() {
            for c in 0..3 {
                px.0[c] = (src[c * plane + p].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        Ok(img)
    }

    /// Batch made of the given images, in order.
    pub fn select(&self, indices: &[usize]) -> Self {
        let mut data = Vec::with_capacity(indices.len() * self.image_len());
        for &i in indices {
            data.extend_from_slice(self.image(i));
        }
        Self {
            len: indices.len(),
            data,
            ..*self
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rgb_round_trip() {
        let mut img = RgbImage::new(3, 2);
        for (i, p) in img.pixels_mut().enumerate() {
            p.0 = [i as u8 * 40, 255 - i as u8, 7];
        }
        let b = ImageBatch::from_rgb(&[img.clone(), img.clone()]).unwrap();
        assert_eq!(b.len, 2);
        assert_eq!(b.to_rgb(1).unwrap(), img);
        assert_eq!(b.select(&[1]).to_rgb(0).unwrap(), img);
    }
}
