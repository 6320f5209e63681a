//! Minimal float raster with a foreground coverage mask.
//!
//! Shapes are filled by testing each pixel center against an implicit
//! inside-predicate, so coverage is binary and bounding boxes are exact.

use image::RgbImage;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub type Rgb = [f64; 3];

#[derive(Debug, Clone)]
pub struct Canvas {
    pub width: u32,
    pub height: u32,
    pixels: Vec<Rgb>,
    foreground: Vec<bool>,
}

impl Canvas {
    pub fn new(width: u32, height: u32, fill: Rgb) -> Self {
        let n = (width * height) as usize;
        Self {
            width,
            height,
            pixels: vec![fill; n],
            foreground: vec![false; n],
        }
    }

    #[inline]
    fn idx(&self, col: u32, row: u32) -> usize {
        (row * self.width + col) as usize
    }

    pub fn get(&self, col: u32, row: u32) -> Rgb {
        self.pixels[self.idx(col, row)]
    }

    pub fn set(&mut self, col: u32, row: u32, c: Rgb) {
        let i = self.idx(col, row);
        self.pixels[i] = c;
    }

    /// Fills every pixel by a function of its center coordinates.
    pub fn paint(&mut self, mut f: impl FnMut(f64, f64, Rgb) -> Rgb) {
        for row in 0..self.height {
            for col in 0..self.width {
                let i = self.idx(col, row);
                self.pixels[i] = f(col as f64 + 0.5, row as f64 + 0.5, self.pixels[i]);
            }
        }
    }

    /// Shades the pixels whose centers satisfy `inside`, visiting only the
    /// clipped box `[x0,x1]×[y0,y1]` (pixel units, rows grow downwards).
    /// `shade` receives the center and previous color.
    pub fn fill_region(
        &mut self,
        bbox: (f64, f64, f64, f64),
        foreground: bool,
        inside: impl Fn(f64, f64) -> bool,
        shade: impl Fn(f64, f64, Rgb) -> Rgb,
    ) {
        let (x0, y0, x1, y1) = bbox;
        let c0 = x0.floor().max(0.0) as u32;
        let r0 = y0.floor().max(0.0) as u32;
        let c1 = (x1.ceil().max(0.0) as u32).min(self.width);
        let r1 = (y1.ceil().max(0.0) as u32).min(self.height);
        for row in r0..r1 {
            for col in c0..c1 {
                let (x, y) = (col as f64 + 0.5, row as f64 + 0.5);
                if inside(x, y) {
                    let i = self.idx(col, row);
                    self.pixels[i] = shade(x, y, self.pixels[i]);
                    if foreground {
                        self.foreground[i] = true;
                    }
                }
            }
        }
    }

    pub fn foreground_mask(&self) -> &[bool] {
        &self.foreground
    }

    pub fn foreground_count(&self) -> usize {
        self.foreground.iter().filter(|&&f| f).count()
    }

    pub fn to_rgb8(&self) -> RgbImage {
        let mut img = RgbImage::new(self.width, self.height);
        for (p, c) in img.pixels_mut().zip(&self.pixels) {
            for k in 0..3 {
                p.0[k] = (c[k].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        img
    }
}

/// Foreground box as bottom-left / top-right corners with `y` measured
/// upwards from the bottom image edge. The box covers the half-open pixel
/// range `[x0, x1) × [y0, y1)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(from = "[[u32; 2]; 2]", into = "[[u32; 2]; 2]")]
pub struct Bounds {
    pub x0: u32,
    pub y0: u32,
    pub x1: u32,
    pub y1: u32,
}

impl From<[[u32; 2]; 2]> for Bounds {
    fn from(v: [[u32; 2]; 2]) -> Self {
        Bounds {
            x0: v[0][0],
            y0: v[0][1],
            x1: v[1][0],
            y1: v[1][1],
        }
    }
}

impl From<Bounds> for [[u32; 2]; 2] {
    fn from(b: Bounds) -> Self {
        [[b.x0, b.y0], [b.x1, b.y1]]
    }
}

impl Bounds {
    /// Tight box around every set pixel of a row-major mask.
    pub fn from_mask(mask: &[bool], width: u32, height: u32) -> Result<Self> {
        if mask.len() != (width * height) as usize {
            return Err(Error::ShapeMismatch {
                expected: format!("{} mask pixels", width * height),
                got: mask.len().to_string(),
            });
        }
        let (mut cmin, mut cmax, mut rmin, mut rmax) = (u32::MAX, 0, u32::MAX, 0);
        let mut any = false;
        for row in 0..height {
            for col in 0..width {
                if mask[(row * width + col) as usize] {
                    any = true;
                    cmin = cmin.min(col);
                    cmax = cmax.max(col);
                    rmin = rmin.min(row);
                    rmax = rmax.max(row);
                }
            }
        }
        if !any {
            return Err(Error::Schema("image has no foreground object".into()));
        }
        Ok(Bounds {
            x0: cmin,
            x1: cmax + 1,
            y0: height - (rmax + 1),
            y1: height - rmin,
        })
    }

    /// Row range (top-down image rows) covered by the box.
    pub fn rows(&self, height: u32) -> std::ops::Range<u32> {
        (height - self.y1)..(height - self.y0)
    }

    pub fn cols(&self) -> std::ops::Range<u32> {
        self.x0..self.x1
    }

    pub fn contains_pixel(&self, col: u32, row: u32, height: u32) -> bool {
        self.cols().contains(&col) && self.rows(height).contains(&row)
    }

    pub fn is_valid_for(&self, width: u32, height: u32) -> bool {
        self.x0 < self.x1 && self.x1 <= width && self.y0 < self.y1 && self.y1 <= height
    }

    pub fn area(&self) -> u32 {
        (self.x1 - self.x0) * (self.y1 - self.y0)
    }

    /// Row-major {0,1} indicator of the box over a `width × height` frame.
    pub fn indicator(&self, width: u32, height: u32) -> Vec<bool> {
        let mut out = vec![false; (width * height) as usize];
        for row in self.rows(height) {
            for col in self.cols() {
                out[(row * width + col) as usize] = true;
            }
        }
        out
    }
}

pub fn lerp(a: Rgb, b: Rgb, t: f64) -> Rgb {
    [
        a[0] + (b[0] - a[0]) * t,
        a[1] + (b[1] - a[1]) * t,
        a[2] + (b[2] - a[2]) * t,
    ]
}

pub fn scale(c: Rgb, k: f64) -> Rgb {
    [c[0] * k, c[1] * k, c[2] * k]
}

/// Point-in-convex-or-concave polygon by the even-odd rule.
pub fn in_polygon(poly: &[(f64, f64)], x: f64, y: f64) -> bool {
    let mut inside = false;
    let mut j = poly.len() - 1;
    for i in 0..poly.len() {
        let (xi, yi) = poly[i];
        let (xj, yj) = poly[j];
        if (yi > y) != (yj > y) && x < (xj - xi) * (y - yi) / (yj - yi) + xi {
            inside = !inside;
        }
        j = i;
    }
    inside
}

pub fn polygon_bbox(poly: &[(f64, f64)]) -> (f64, f64, f64, f64) {
    poly.iter().fold(
        (f64::MAX, f64::MAX, f64::MIN, f64::MIN),
        |(a, b, c, d), &(x, y)| (a.min(x), b.min(y), c.max(x), d.max(y)),
    )
}

/// Axis-aligned ellipse test.
pub fn in_ellipse(cx: f64, cy: f64, rx: f64, ry: f64, x: f64, y: f64) -> bool {
    let dx = (x - cx) / rx;
    let dy = (y - cy) / ry;
    dx * dx + dy * dy <= 1.0
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bounds_enclose_mask_tightly() {
        let mut c = Canvas::new(10, 8, [0.0; 3]);
        c.fill_region((2.0, 1.0, 5.0, 4.0), true, |_, _| true, |_, _, _| [1.0; 3]);
        let b = Bounds::from_mask(c.foreground_mask(), 10, 8).unwrap();
        // columns 2..5, rows 1..4 → y from bottom: 8-4=4 .. 8-1=7
        assert_eq!(b, Bounds { x0: 2, y0: 4, x1: 5, y1: 7 });
        assert_eq!(b.rows(8), 1..4);
        assert_eq!(b.area(), 9);
    }

    #[test]
    fn empty_mask_is_rejected() {
        let c = Canvas::new(4, 4, [0.2; 3]);
        assert!(Bounds::from_mask(c.foreground_mask(), 4, 4).is_err());
    }

    #[test]
    fn bounds_serialize_as_corner_pairs() {
        let b = Bounds { x0: 95, y0: 29, x1: 154, y1: 87 };
        assert_eq!(serde_json::to_string(&b).unwrap(), "[[95,29],[154,87]]");
        let back: Bounds = serde_json::from_str("[[95,29],[154,87]]").unwrap();
        assert_eq!(back, b);
    }

    #[test]
    fn polygon_even_odd() {
        let sq = [(0.0, 0.0), (4.0, 0.0), (4.0, 4.0), (0.0, 4.0)];
        assert!(in_polygon(&sq, 2.0, 2.0));
        assert!(!in_polygon(&sq, 5.0, 2.0));
    }
}
