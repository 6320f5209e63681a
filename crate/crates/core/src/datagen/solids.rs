//! Flat-shaded pseudo-3D silhouettes shared by the toy and CANDLE-lite renderers.
//!
//! World axes are (right, toward the viewer, up). Objects stand on the floor
//! at screen position `(cx, base_y)`; `d` is the nominal diameter in pixels.

use super::raster::{in_ellipse, in_polygon, polygon_bbox, scale, Canvas, Rgb};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Solid {
    Cube,
    Sphere,
    Cylinder,
    Cone,
    Torus,
}

impl Solid {
    pub fn parse(name: &str) -> Option<Self> {
        Some(match name {
            "cube" => Solid::Cube,
            "sphere" => Solid::Sphere,
            "cylinder" => Solid::Cylinder,
            "cone" => Solid::Cone,
            "torus" => Solid::Torus,
            _ => return None,
        })
    }
}

#[derive(Debug, Clone, Copy)]
pub struct Lighting {
    dir: [f64; 3],
    ambient: f64,
}

impl Lighting {
    /// `side` is −1 for a light on the left, 0 centered, +1 on the right.
    pub fn from_side(side: f64) -> Self {
        let v = [side, 0.7, 0.8];
        let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
        Self {
            dir: [v[0] / n, v[1] / n, v[2] / n],
            ambient: 0.35,
        }
    }

    fn shade(&self, color: Rgb, normal: [f64; 3]) -> Rgb {
        let d = normal[0] * self.dir[0] + normal[1] * self.dir[1] + normal[2] * self.dir[2];
        scale(color, self.ambient + (1.0 - self.ambient) * d.max(0.0))
    }
}

fn normalize(v: [f64; 3]) -> [f64; 3] {
    let n = (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt();
    if n == 0.0 {
        [0.0, 0.0, 1.0]
    } else {
        [v[0] / n, v[1] / n, v[2] / n]
    }
}

/// Vertical squash applied to horizontal discs (camera slightly above the floor).
const TILT: f64 = 0.3;

pub fn draw_solid(
    canvas: &mut Canvas,
    solid: Solid,
    cx: f64,
    base_y: f64,
    d: f64,
    color: Rgb,
    light: &Lighting,
    angle_deg: f64,
) {
    match solid {
        Solid::Sphere => {
            let r = d / 2.0;
            let cy = base_y - r;
            canvas.fill_region(
                (cx - r, cy - r, cx + r, cy + r),
                true,
                |x, y| in_ellipse(cx, cy, r, r, x, y),
                |x, y, _| {
                    let nx = (x - cx) / r;
                    let nz = -(y - cy) / r;
                    let ny = (1.0 - nx * nx - nz * nz).max(0.0).sqrt();
                    light.shade(color, [nx, ny, nz])
                },
            );
        }
        Solid::Cylinder => {
            let w = 0.8 * d;
            let h = d;
            let rx = w / 2.0;
            let ry = TILT * rx;
            let bottom = base_y - ry;
            let top = base_y - h + ry;
            let body = move |x: f64, y: f64| {
                ((x - cx).abs() <= rx && y >= top && y <= bottom) || in_ellipse(cx, bottom, rx, ry, x, y)
            };
            canvas.fill_region((cx - rx, top - ry, cx + rx, base_y), true, body, |x, _, _| {
                let nx = ((x - cx) / rx).clamp(-1.0, 1.0);
                light.shade(color, [nx, (1.0 - nx * nx).sqrt(), 0.0])
            });
            canvas.fill_region(
                (cx - rx, top - ry, cx + rx, top + ry),
                true,
                |x, y| in_ellipse(cx, top, rx, ry, x, y),
                |_, _, _| light.shade(color, [0.0, 0.0, 1.0]),
            );
        }
        Solid::Cone => {
            let rx = 0.45 * d;
            let ry = TILT * rx;
            let h = d;
            let bottom = base_y - ry;
            let apex = (cx, base_y - h);
            let tri = [apex, (cx - rx, bottom), (cx + rx, bottom)];
            let slope = rx / (h - ry);
            canvas.fill_region(
                (cx - rx, apex.1, cx + rx, base_y),
                true,
                |x, y| in_polygon(&tri, x, y) || in_ellipse(cx, bottom, rx, ry, x, y),
                |x, y, _| {
                    let half = ((y - apex.1) * slope).max(1e-6);
                    let nx = ((x - cx) / half).clamp(-1.0, 1.0);
                    let n = normalize([nx, (1.0 - nx * nx).sqrt(), slope]);
                    light.shade(color, n)
                },
            );
        }
        Solid::Torus => {
            let rx = d / 2.0;
            let ry = 0.42 * rx;
            let inner = 0.45;
            let cy = base_y - ry;
            canvas.fill_region(
                (cx - rx, cy - ry, cx + rx, cy + ry),
                true,
                |x, y| {
                    let t = (((x - cx) / rx).powi(2) + ((y - cy) / ry).powi(2)).sqrt();
                    t <= 1.0 && t >= inner
                },
                |x, y, _| {
                    let dx = (x - cx) / rx;
                    let dy = (y - cy) / ry;
                    let t = (dx * dx + dy * dy).sqrt().max(1e-9);
                    let u = ((t - (1.0 + inner) / 2.0) / ((1.0 - inner) / 2.0)).clamp(-1.0, 1.0);
                    let up = (1.0 - u * u).sqrt();
                    let radial = [dx / t, dy / t, 0.0];
                    light.shade(color, normalize([radial[0] * u, radial[1] * u, up]))
                },
            );
        }
        Solid::Cube => draw_cube(canvas, cx, base_y, d, color, light, angle_deg),
    }
}

fn draw_cube(canvas: &mut Canvas, cx: f64, base_y: f64, d: f64, color: Rgb, light: &Lighting, angle_deg: f64) {
    // Edge chosen so the widest (45°) view spans exactly `d`.
    let s = d / std::f64::consts::SQRT_2;
    let half_diag = s / std::f64::consts::SQRT_2;
    let theta = angle_deg.to_radians();
    // Top-down corner positions: x right, y toward viewer.
    let corner = |k: usize| {
        let phi = theta + std::f64::consts::FRAC_PI_4 + std::f64::consts::FRAC_PI_2 * k as f64;
        (half_diag * phi.cos(), half_diag * phi.sin())
    };
    let depth_y = |toward: f64| TILT * toward;
    let project = |(x, toward): (f64, f64), z: f64| (cx + x, base_y - half_diag * TILT - z + depth_y(toward));
    // Side faces whose outward normal points at the viewer.
    for k in 0..4 {
        let psi = theta + std::f64::consts::FRAC_PI_2 * (k as f64 + 1.0);
        let (nx, ny) = (psi.cos(), psi.sin());
        if ny <= 1e-9 {
            continue;
        }
        let a = corner(k);
        let b = corner((k + 1) % 4);
        let quad = [project(a, 0.0), project(b, 0.0), project(b, s), project(a, s)];
        let shade = light.shade(color, [nx, ny, 0.0]);
        canvas.fill_region(polygon_bbox(&quad), true, |x, y| in_polygon(&quad, x, y), |_, _, _| shade);
    }
    let top: Vec<(f64, f64)> = (0..4).map(|k| project(corner(k), s)).collect();
    let shade = light.shade(color, [0.0, 0.0, 1.0]);
    canvas.fill_region(polygon_bbox(&top), true, |x, y| in_polygon(&top, x, y), |_, _, _| shade);
}
