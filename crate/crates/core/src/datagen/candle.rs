//! CANDLE-lite: procedural 2D scenes with one shaded solid, a light-dependent
//! shadow and a light/scene brightness interaction that is never labeled.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::raster::{in_ellipse, lerp, scale, Canvas, Rgb};
use super::solids::{draw_solid, Lighting, Solid};
use crate::error::{Error, Result};
use crate::scm::FactorAssignment;

/// Object diameter as a fraction of image width, per size value.
pub const SIZE_FRACTIONS: [(&str, f64); 3] = [("small", 0.10), ("medium", 0.16), ("large", 0.22)];

#[derive(Debug, Clone, Copy)]
enum Pattern {
    Plain,
    Window,
    Poles,
    Arches,
    Buildings,
    Columns,
    GrassStripes,
    Beams,
    Lanes,
    Waves,
    Lamps,
    Vignette,
    Stars,
    Checker,
    Bushes,
}

#[derive(Debug, Clone, Copy)]
struct Scene {
    sky_top: Rgb,
    sky_low: Rgb,
    floor_far: Rgb,
    floor_near: Rgb,
    /// Horizon height as a fraction of image height from the top.
    horizon: f64,
    pattern: Pattern,
    accent: Rgb,
    ambient: f64,
    /// Horizontal direction of the scene's own dominant light (−1 left, +1 right).
    sun: f64,
}

fn scene(name: &str) -> Option<Scene> {
    use Pattern::*;
    let s = |sky_top, sky_low, floor_far, floor_near, horizon, pattern, accent, ambient, sun| Scene {
        sky_top,
        sky_low,
        floor_far,
        floor_near,
        horizon,
        pattern,
        accent,
        ambient,
        sun,
    };
    Some(match name {
        "indoor" => s([0.78, 0.72, 0.62], [0.70, 0.64, 0.55], [0.55, 0.42, 0.30], [0.45, 0.33, 0.22], 0.55, Window, [0.95, 0.95, 0.85], 0.95, -0.6),
        "playground" => s([0.45, 0.70, 0.95], [0.75, 0.85, 0.95], [0.85, 0.60, 0.35], [0.75, 0.50, 0.28], 0.50, Poles, [0.90, 0.55, 0.15], 1.05, 0.5),
        "outdoor" => s([0.35, 0.60, 0.92], [0.70, 0.82, 0.95], [0.40, 0.62, 0.30], [0.30, 0.52, 0.22], 0.48, Plain, [1.0, 1.0, 1.0], 1.10, 0.8),
        "bridge" => s([0.95, 0.65, 0.35], [0.98, 0.80, 0.50], [0.55, 0.40, 0.30], [0.45, 0.32, 0.25], 0.52, Arches, [0.40, 0.22, 0.15], 1.0, -0.8),
        "city-square" => s([0.90, 0.75, 0.50], [0.95, 0.85, 0.65], [0.70, 0.62, 0.52], [0.62, 0.55, 0.45], 0.55, Buildings, [0.75, 0.55, 0.35], 1.0, 0.3),
        "hall" => s([0.82, 0.80, 0.76], [0.88, 0.86, 0.82], [0.65, 0.62, 0.58], [0.55, 0.52, 0.48], 0.58, Columns, [0.95, 0.93, 0.90], 0.9, 0.0),
        "grassland" => s([0.60, 0.78, 0.95], [0.85, 0.90, 0.95], [0.45, 0.75, 0.30], [0.35, 0.68, 0.22], 0.42, GrassStripes, [0.30, 0.55, 0.18], 1.15, 0.6),
        "garage" => s([0.35, 0.35, 0.38], [0.45, 0.45, 0.48], [0.40, 0.40, 0.42], [0.30, 0.30, 0.32], 0.50, Beams, [0.20, 0.20, 0.22], 0.75, -0.2),
        "street" => s([0.55, 0.70, 0.88], [0.78, 0.82, 0.88], [0.35, 0.35, 0.37], [0.28, 0.28, 0.30], 0.50, Lanes, [0.95, 0.95, 0.80], 1.0, 0.7),
        "beach" => s([0.40, 0.70, 0.98], [0.75, 0.90, 0.98], [0.92, 0.85, 0.62], [0.88, 0.78, 0.55], 0.45, Waves, [0.20, 0.50, 0.80], 1.2, -0.5),
        "station" => s([0.60, 0.45, 0.25], [0.80, 0.60, 0.35], [0.55, 0.45, 0.35], [0.45, 0.36, 0.28], 0.50, Lamps, [1.0, 0.75, 0.30], 0.9, 0.0),
        "tunnel" => s([0.20, 0.18, 0.16], [0.35, 0.30, 0.25], [0.30, 0.27, 0.24], [0.22, 0.20, 0.18], 0.50, Vignette, [0.05, 0.05, 0.05], 0.7, 0.0),
        "moonlit-grass" => s([0.05, 0.07, 0.20], [0.12, 0.15, 0.30], [0.10, 0.22, 0.12], [0.06, 0.16, 0.08], 0.50, Stars, [0.95, 0.95, 0.85], 0.65, 0.9),
        "dusk-city" => s([0.35, 0.20, 0.45], [0.95, 0.55, 0.30], [0.30, 0.25, 0.30], [0.22, 0.18, 0.22], 0.55, Buildings, [0.15, 0.10, 0.18], 0.8, -0.9),
        "skywalk" => s([0.55, 0.78, 0.98], [0.85, 0.92, 0.98], [0.80, 0.82, 0.85], [0.70, 0.72, 0.76], 0.50, Checker, [0.60, 0.62, 0.66], 1.1, 0.4),
        "garden" => s([0.55, 0.75, 0.92], [0.80, 0.88, 0.92], [0.35, 0.58, 0.25], [0.28, 0.50, 0.20], 0.48, Bushes, [0.15, 0.42, 0.15], 1.05, -0.3),
        _ => return None,
    })
}

pub fn candle_color(name: &str) -> Option<Rgb> {
    Some(match name {
        "red" => [0.85, 0.12, 0.12],
        "blue" => [0.12, 0.28, 0.88],
        "yellow" => [0.95, 0.85, 0.12],
        "purple" => [0.58, 0.18, 0.75],
        "orange" => [0.98, 0.52, 0.08],
        _ => return None,
    })
}

pub fn light_side(name: &str) -> Option<f64> {
    Some(match name {
        "left" => -1.0,
        "middle" => 0.0,
        "right" => 1.0,
        _ => return None,
    })
}

pub fn size_fraction(name: &str) -> Option<f64> {
    SIZE_FRACTIONS.iter().find(|(n, _)| *n == name).map(|(_, f)| *f)
}

fn need<'a>(assignment: &'a FactorAssignment, factor: &str) -> Result<&'a str> {
    assignment
        .get(factor)
        .ok_or_else(|| Error::Schema(format!("CANDLE-lite assignment needs `{factor}`")))
}

fn unknown(factor: &str, value: &str) -> Error {
    Error::Schema(format!("CANDLE-lite renderer has no {factor} `{value}`"))
}

fn paint_background(canvas: &mut Canvas, sc: &Scene, jx: f64, jy: f64) {
    let (w, h) = (canvas.width as f64, canvas.height as f64);
    let horizon = sc.horizon * h + jy;
    canvas.paint(|x, y, _| {
        let (u, v) = ((x - jx) / w, (y - jy) / h);
        if y < horizon {
            let t = (y / horizon).clamp(0.0, 1.0);
            let base = lerp(sc.sky_top, sc.sky_low, t);
            match sc.pattern {
                Pattern::Window if (0.15..0.40).contains(&u) && (0.12..0.40).contains(&v) => sc.accent,
                Pattern::Poles if ((u * 6.0).fract() < 0.08) && v > 0.25 => sc.accent,
                Pattern::Arches => {
                    let phase = ((u * 3.0).fract() - 0.5) * 2.0;
                    let arch_top = sc.horizon - 0.18 * (1.0 - phase * phase).sqrt();
                    if v > arch_top && v < arch_top + 0.05 {
                        sc.accent
                    } else {
                        base
                    }
                }
                Pattern::Buildings => {
                    let col = (u * 7.0).floor();
                    let height = 0.12 + 0.25 * ((col * 12.9898).sin() * 43758.5453).fract().abs();
                    if v > sc.horizon - height {
                        sc.accent
                    } else {
                        base
                    }
                }
                Pattern::Columns if (u * 5.0).fract() < 0.18 => sc.accent,
                Pattern::Beams if (v * 10.0).fract() < 0.12 => sc.accent,
                Pattern::Waves if v > sc.horizon - 0.06 => sc.accent,
                Pattern::Lamps if in_ellipse(((u * 4.0).floor() + 0.5) / 4.0, 0.15, 0.03, 0.04, u, v) => sc.accent,
                Pattern::Vignette => {
                    let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
                    scale(base, (1.3 - r * 1.6).clamp(0.2, 1.0))
                }
                Pattern::Stars => {
                    let cell = ((u * 23.0).floor() * 7.0 + (v * 17.0).floor() * 13.0).sin() * 43758.5453;
                    if cell.fract().abs() > 0.93 || in_ellipse(0.78, 0.15, 0.05, 0.06, u, v) {
                        sc.accent
                    } else {
                        base
                    }
                }
                _ => base,
            }
        } else {
            let t = ((y - horizon) / (h - horizon).max(1.0)).clamp(0.0, 1.0);
            let base = lerp(sc.floor_far, sc.floor_near, t);
            match sc.pattern {
                Pattern::GrassStripes if (u * 14.0 + v * 3.0).fract() < 0.3 => sc.accent,
                Pattern::Lanes if (u - 0.5).abs() < 0.01 + 0.02 * t && (v * 8.0).fract() < 0.5 => sc.accent,
                Pattern::Checker if (((u * 8.0).floor() + (v * 8.0).floor()) as i64) % 2 == 0 => sc.accent,
                Pattern::Bushes if in_ellipse(((u * 5.0).floor() + 0.5) / 5.0, sc.horizon + 0.04, 0.06, 0.04, u, v) => {
                    sc.accent
                }
                Pattern::Vignette => {
                    let r = ((u - 0.5).powi(2) + (v - 0.5).powi(2)).sqrt();
                    scale(base, (1.3 - r * 1.6).clamp(0.2, 1.0))
                }
                _ => base,
            }
        }
    });
}

pub(crate) fn draw(assignment: &FactorAssignment, width: u32, height: u32) -> Result<Canvas> {
    let light_name = need(assignment, "light")?;
    let scene_name = need(assignment, "scene")?;
    let object = need(assignment, "object")?;
    let size = need(assignment, "size")?;
    let color = need(assignment, "color")?;
    let angle = need(assignment, "angle")?;

    let side = light_side(light_name).ok_or_else(|| unknown("light", light_name))?;
    let sc = scene(scene_name).ok_or_else(|| unknown("scene", scene_name))?;
    let solid = Solid::parse(object).ok_or_else(|| unknown("object", object))?;
    let frac = size_fraction(size).ok_or_else(|| unknown("size", size))?;
    let rgb = candle_color(color).ok_or_else(|| unknown("color", color))?;
    let angle_deg: f64 = angle.parse().map_err(|_| unknown("angle", angle))?;

    let (w, h) = (width as f64, height as f64);
    let mut rng = ChaCha8Rng::seed_from_u64(assignment.seed);
    let jx = rng.gen_range(-0.03..0.03) * w;
    let jy = rng.gen_range(-0.03..0.03) * h;

    let mut canvas = Canvas::new(width, height, [0.0; 3]);
    paint_background(&mut canvas, &sc, jx, jy);

    let d = frac * w;
    let horizon = sc.horizon * h + jy;
    let cx = rng.gen_range(0.3..0.7) * w + jx;
    let floor_lo = horizon + 0.3 * (h - horizon);
    let base_y = rng.gen_range(floor_lo..(0.93 * h).max(floor_lo + 1.0));

    // Shadow falls away from the light.
    let (sx, srx, sry) = (cx - side * 0.45 * d, 0.6 * d + side.abs() * 0.25 * d, 0.14 * d);
    canvas.fill_region(
        (sx - srx, base_y - sry, sx + srx, base_y + sry),
        false,
        |x, y| in_ellipse(sx, base_y, srx, sry, x, y),
        |_, _, c| scale(c, 0.55),
    );

    draw_solid(&mut canvas, solid, cx, base_y, d, rgb, &Lighting::from_side(side), angle_deg);

    let brightness = sc.ambient * (1.0 + 0.12 * side * sc.sun);
    canvas.paint(|_, _, c| scale(c, brightness));
    Ok(canvas)
}
