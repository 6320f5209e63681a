//! Per-image JSON metadata.
//!
//! CANDLE-lite records use the scene/lights/objects layout with one object
//! keyed `<Type>_0`; other renderers write a flat factor map.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Number;

use super::raster::Bounds;
use super::RendererKind;
use crate::error::{Error, Result};

/// Blender-unit sizes paired with the symbolic size values.
pub const CANDLE_SIZE_UNITS: [(&str, f64); 3] = [("small", 1.5), ("medium", 2.0), ("large", 2.5)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandleObject {
    pub object_type: String,
    pub color: String,
    pub size: Number,
    pub rotation: u32,
    pub bounds: Bounds,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandleMetadata {
    pub scene: String,
    pub lights: String,
    pub objects: BTreeMap<String, CandleObject>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GenericMetadata {
    pub factors: BTreeMap<String, String>,
    pub bounds: Bounds,
}

fn size_number(size: &str) -> Result<Number> {
    let units = CANDLE_SIZE_UNITS
        .iter()
        .find(|(n, _)| *n == size)
        .map(|(_, u)| *u)
        .ok_or_else(|| Error::Schema(format!("unknown size `{size}`")))?;
    // Whole numbers print without a fractional part, as in `"size": 2`.
    Ok(if units.fract() == 0.0 {
        Number::from(units as u64)
    } else {
        Number::from_f64(units).expect("finite")
    })
}

fn size_name(n: &Number) -> Result<&'static str> {
    let v = n.as_f64().ok_or_else(|| Error::Schema("size is not numeric".into()))?;
    CANDLE_SIZE_UNITS
        .iter()
        .find(|(_, u)| *u == v)
        .map(|(n, _)| *n)
        .ok_or_else(|| Error::Schema(format!("size {v} has no symbolic value")))
}

fn capitalize(s: &str) -> String {
    let mut c = s.chars();
    match c.next() {
        Some(f) => f.to_uppercase().chain(c).collect(),
        None => String::new(),
    }
}

fn factor<'a>(values: &'a BTreeMap<String, String>, name: &str) -> Result<&'a str> {
    values
        .get(name)
        .map(String::as_str)
        .ok_or_else(|| Error::Schema(format!("metadata needs factor `{name}`")))
}

/// Serializes labels and bounds in the renderer's metadata layout.
pub fn to_json(kind: RendererKind, values: &BTreeMap<String, String>, bounds: Bounds) -> Result<String> {
    let text = match kind {
        RendererKind::CandleLite => {
            let object = factor(values, "object")?;
            let angle = factor(values, "angle")?;
            let rotation = angle
                .parse::<u32>()
                .map_err(|_| Error::Schema(format!("angle `{angle}` is not an integer")))?;
            let mut objects = BTreeMap::new();
            objects.insert(
                format!("{}_0", capitalize(object)),
                CandleObject {
                    object_type: object.to_string(),
                    color: factor(values, "color")?.to_string(),
                    size: size_number(factor(values, "size")?)?,
                    rotation,
                    bounds,
                },
            );
            let meta = CandleMetadata {
                scene: factor(values, "scene")?.to_string(),
                lights: factor(values, "light")?.to_string(),
                objects,
            };
            serde_json::to_string_pretty(&meta)?
        }
        RendererKind::Toy | RendererKind::Sprites => serde_json::to_string_pretty(&GenericMetadata {
            factors: values.clone(),
            bounds,
        })?,
    };
    Ok(text)
}

/// Inverse of [`to_json`]: factor labels and bounds.
pub fn from_json(kind: RendererKind, text: &str) -> Result<(BTreeMap<String, String>, Bounds)> {
    match kind {
        RendererKind::CandleLite => {
            let meta: CandleMetadata = serde_json::from_str(text)?;
            if meta.objects.len() != 1 {
                return Err(Error::Schema(format!(
                    "expected exactly one object, found {}",
                    meta.objects.len()
                )));
            }
            let (key, obj) = meta.objects.into_iter().next().expect("one object");
            if key != format!("{}_0", capitalize(&obj.object_type)) {
                return Err(Error::Schema(format!("object key `{key}` does not match its type")));
            }
            let mut values = BTreeMap::new();
            values.insert("light".to_string(), meta.lights);
            values.insert("scene".to_string(), meta.scene);
            values.insert("object".to_string(), obj.object_type);
            values.insert("size".to_string(), size_name(&obj.size)?.to_string());
            values.insert("color".to_string(), obj.color);
            values.insert("angle".to_string(), obj.rotation.to_string());
            Ok((values, obj.bounds))
        }
        RendererKind::Toy | RendererKind::Sprites => {
            let meta: GenericMetadata = serde_json::from_str(text)?;
            Ok((meta.factors, meta.bounds))
        }
    }
}
