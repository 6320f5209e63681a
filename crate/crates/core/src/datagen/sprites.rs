//! dSprites-like 64×64 binary sprites on a 9×9 position grid.

use super::raster::Canvas;
use crate::error::{Error, Result};
use crate::scm::FactorAssignment;

pub const SPRITE_SIZE: u32 = 64;

fn need<'a>(assignment: &'a FactorAssignment, factor: &str) -> Result<&'a str> {
    assignment
        .get(factor)
        .ok_or_else(|| Error::Schema(format!("sprite assignment needs `{factor}`")))
}

fn parse_index(factor: &str, value: &str, max: u32) -> Result<u32> {
    value
        .parse::<u32>()
        .ok()
        .filter(|v| *v <= max)
        .ok_or_else(|| Error::Schema(format!("sprite {factor} `{value}` out of range")))
}

pub(crate) fn draw(assignment: &FactorAssignment) -> Result<Canvas> {
    let shape = need(assignment, "shape")?;
    let radius = match need(assignment, "scale")? {
        "small" => 4.0,
        "medium" => 6.0,
        "large" => 8.0,
        other => return Err(Error::Schema(format!("sprite scale `{other}` unknown"))),
    };
    let orientation = need(assignment, "orientation")?;
    let theta = (parse_index("orientation", orientation, 359)? as f64).to_radians();
    let px = parse_index("pos_x", need(assignment, "pos_x")?, 8)?;
    let py = parse_index("pos_y", need(assignment, "pos_y")?, 8)?;
    let cx = 12.0 + 5.0 * px as f64;
    let cy = 12.0 + 5.0 * py as f64;

    let inside: Box<dyn Fn(f64, f64) -> bool> = match shape {
        "square" => Box::new(move |u: f64, v: f64| u.abs() <= 0.8 * radius && v.abs() <= 0.8 * radius),
        "ellipse" => Box::new(move |u: f64, v: f64| (u / radius).powi(2) + (v / (0.5 * radius)).powi(2) <= 1.0),
        "heart" => Box::new(move |u: f64, v: f64| {
            let x = 1.2 * u / radius;
            let y = -1.2 * v / radius + 0.1;
            let a = x * x + y * y - 1.0;
            a * a * a - x * x * y * y * y <= 0.0
        }),
        other => return Err(Error::Schema(format!("sprite shape `{other}` unknown"))),
    };
    let (sin, cos) = theta.sin_cos();
    let reach = 1.5 * radius;
    let mut canvas = Canvas::new(SPRITE_SIZE, SPRITE_SIZE, [0.0; 3]);
    canvas.fill_region(
        (cx - reach, cy - reach, cx + reach, cy + reach),
        true,
        |x, y| {
            // Rotate the sample point back into the sprite frame.
            let (dx, dy) = (x - cx, y - cy);
            inside(cos * dx - sin * dy, sin * dx + cos * dy)
        },
        |_, _, _| [1.0; 3],
    );
    Ok(canvas)
}
