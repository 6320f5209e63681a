//! 128×128 toy images: one solid on a plain backdrop, shape and color fully
//! confounded by the graph's rules. Position, scale and sensor noise come
//! from the record seed and never reach the labels.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::raster::{lerp, Canvas, Rgb};
use super::solids::{draw_solid, Lighting, Solid};
use crate::error::{Error, Result};
use crate::scm::FactorAssignment;

pub const TOY_SIZE: u32 = 128;

pub fn toy_color(name: &str) -> Option<Rgb> {
    Some(match name {
        "red" => [0.85, 0.12, 0.12],
        "green" => [0.15, 0.70, 0.20],
        "blue" => [0.15, 0.25, 0.85],
        _ => return None,
    })
}

pub(crate) fn draw(assignment: &FactorAssignment) -> Result<Canvas> {
    let shape = assignment.get("shape").ok_or_else(|| Error::Schema("toy assignment needs `shape`".into()))?;
    let color = assignment.get("color").ok_or_else(|| Error::Schema("toy assignment needs `color`".into()))?;
    let solid = Solid::parse(shape).ok_or_else(|| Error::Schema(format!("toy renderer cannot draw `{shape}`")))?;
    let rgb = toy_color(color).ok_or_else(|| Error::Schema(format!("toy renderer has no color `{color}`")))?;

    let mut rng = ChaCha8Rng::seed_from_u64(assignment.seed);
    let side = TOY_SIZE as f64;
    let mut canvas = Canvas::new(TOY_SIZE, TOY_SIZE, [0.0; 3]);
    canvas.paint(|_, y, _| lerp([0.93, 0.93, 0.95], [0.80, 0.80, 0.82], y / side));

    let d = 0.42 * side * rng.gen_range(0.985..1.015);
    let cx = side / 2.0 + rng.gen_range(-1.0..1.0);
    let base_y = side / 2.0 + d / 2.0 + rng.gen_range(-1.0..1.0);
    draw_solid(&mut canvas, solid, cx, base_y, d, rgb, &Lighting::from_side(-0.5), 30.0);

    canvas.paint(|_, _, c| {
        let mut out = c;
        for ch in &mut out {
            *ch += rng.gen_range(-0.02..0.02);
        }
        out
    });
    Ok(canvas)
}
