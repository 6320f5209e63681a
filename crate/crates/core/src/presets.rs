//! Shipped causal graphs and conditioning presets.

use crate::datagen::filter::{Conditioning, KeepRule};
use crate::scm::{CausalGraphSpec, ConstraintRule, FactorSpec, NuisanceSpec, Predicate};

pub const TOY_SHAPES: [&str; 3] = ["cylinder", "cone", "cube"];
pub const TOY_COLORS: [&str; 3] = ["red", "green", "blue"];
/// Nuisance replicates per valid toy assignment (3 × 144 = 432 images).
pub const TOY_REPLICATES: usize = 144;

pub const CANDLE_SCENES: [&str; 16] = [
    "indoor",
    "playground",
    "outdoor",
    "bridge",
    "city-square",
    "hall",
    "grassland",
    "garage",
    "street",
    "beach",
    "station",
    "tunnel",
    "moonlit-grass",
    "dusk-city",
    "skywalk",
    "garden",
];

/// Shape and color fully confounded: each shape appears in exactly one color.
pub fn toy_graph() -> CausalGraphSpec {
    let observed_rules = TOY_SHAPES
        .iter()
        .enumerate()
        .map(|(i, shape)| {
            let others: Vec<&str> = TOY_COLORS
                .iter()
                .enumerate()
                .filter(|(j, _)| *j != i)
                .map(|(_, c)| *c)
                .collect();
            ConstraintRule::new(
                vec![Predicate::new("shape", &[shape]), Predicate::new("color", &others)],
                &format!("{shape} only appears in {}", TOY_COLORS[i]),
            )
        })
        .collect();
    CausalGraphSpec {
        factors: vec![
            FactorSpec::new("shape", &TOY_SHAPES),
            FactorSpec::new("color", &TOY_COLORS),
        ],
        observed_rules,
        nuisance: vec![
            NuisanceSpec::new("position", "object center jitter"),
            NuisanceSpec::new("scale", "object size jitter"),
            NuisanceSpec::new("sensor", "additive pixel noise"),
        ],
        seed: 0,
    }
}

pub fn candle_lite_graph() -> CausalGraphSpec {
    let r = |preds: Vec<Predicate>, reason: &str| ConstraintRule::new(preds, reason);
    let p = Predicate::new;
    CausalGraphSpec {
        factors: vec![
            FactorSpec::new("light", &["left", "middle", "right"]),
            FactorSpec::new("scene", &CANDLE_SCENES),
            FactorSpec::new("object", &["cube", "sphere", "cylinder", "cone", "torus"]),
            FactorSpec::new("size", &["small", "medium", "large"]).ordered(),
            FactorSpec::new("color", &["red", "blue", "yellow", "purple", "orange"]),
            FactorSpec::new("angle", &["0", "15", "30", "45", "60", "90"]).ordered(),
        ],
        observed_rules: vec![
            r(
                vec![
                    p("size", &["large"]),
                    p("object", &["cube", "sphere", "cylinder", "cone"]),
                    p("scene", &["indoor"]),
                ],
                "large objects except torus are not present in indoor scene",
            ),
            r(
                vec![
                    p("size", &["large"]),
                    p("object", &["sphere", "cylinder", "cube"]),
                    p("scene", &["tunnel", "moonlit-grass"]),
                ],
                "large spheres, cylinders and cubes are not present in tunnel and moonlit grass scenes",
            ),
            r(
                vec![p("size", &["large"]), p("scene", &["hall"])],
                "large objects are not present in hall scenes",
            ),
            r(
                vec![p("size", &["small"]), p("scene", &["grassland", "garage"])],
                "small objects are not present in grassland and garage scenes",
            ),
            r(
                vec![p("color", &["yellow"]), p("scene", &["bridge", "city-square"])],
                "yellow objects are not present on bridge and city square scenes",
            ),
            r(
                vec![
                    p("color", &["orange", "yellow"]),
                    p("scene", &["station", "dusk-city", "playground"]),
                ],
                "orange and yellow objects are not present in station, dusk city and playground scenes",
            ),
            r(
                vec![p("object", &["cone"]), p("scene", &["hall", "tunnel", "skywalk"])],
                "cones are not present in hall, tunnel and skywalk scenes",
            ),
            r(
                vec![p("object", &["cone"]), p("color", &["orange"]), p("scene", &["bridge"])],
                "orange cones are not present on bridge scene",
            ),
            r(
                vec![p("object", &["sphere"]), p("scene", &["skywalk"])],
                "spheres are not present in skywalk scenes",
            ),
        ],
        nuisance: vec![
            NuisanceSpec::new("brightness", "light position and scene interact in global brightness"),
            NuisanceSpec::new("camera", "camera jitter shifts the whole frame"),
            NuisanceSpec::new("placement", "object floor position jitter"),
        ],
        seed: 0,
    }
}

/// dSprites-like grid: every combination present, no rules.
pub fn sprites_graph() -> CausalGraphSpec {
    let grid: Vec<String> = (0..9).map(|i| i.to_string()).collect();
    let grid: Vec<&str> = grid.iter().map(String::as_str).collect();
    CausalGraphSpec {
        factors: vec![
            FactorSpec::new("shape", &["square", "ellipse", "heart"]),
            FactorSpec::new("scale", &["small", "medium", "large"]).ordered(),
            FactorSpec::new("orientation", &["0", "60", "120", "180", "240", "300"]).ordered(),
            FactorSpec::new("pos_x", &grid).ordered(),
            FactorSpec::new("pos_y", &grid).ordered(),
        ],
        observed_rules: vec![],
        nuisance: vec![],
        seed: 0,
    }
}

/// Shape, scale, orientation band and position band tied together
/// (pos_y index 0 is the top row).
pub fn sprites_confounded_conditioning() -> Conditioning {
    let rows = [
        ("square", "small", ["0", "60"], ["0", "1", "2"]),
        ("ellipse", "medium", ["120", "180"], ["3", "4", "5"]),
        ("heart", "large", ["240", "300"], ["6", "7", "8"]),
    ];
    Conditioning {
        keep: rows
            .iter()
            .map(|(shape, scale, orient, band)| KeepRule {
                require: vec![
                    Predicate::new("shape", &[shape]),
                    Predicate::new("scale", &[scale]),
                    Predicate::new("orientation", orient),
                    Predicate::new("pos_x", band),
                    Predicate::new("pos_y", band),
                ],
                label: format!("{shape}/{scale}"),
            })
            .collect(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scm::{enumerate_valid_assignments, DEFAULT_ENUMERATION_CAP};

    #[test]
    fn presets_validate() {
        for g in [toy_graph(), candle_lite_graph(), sprites_graph()] {
            g.validate().unwrap();
        }
    }

    #[test]
    fn toy_keeps_the_diagonal_only() {
        let g = toy_graph();
        let all = enumerate_valid_assignments(&g, DEFAULT_ENUMERATION_CAP).unwrap();
        assert_eq!(all.len(), 3);
        for (a, (s, c)) in all.iter().zip(TOY_SHAPES.iter().zip(TOY_COLORS)) {
            assert_eq!(a.get("shape"), Some(*s));
            assert_eq!(a.get("color"), Some(c));
        }
    }

    #[test]
    fn candle_lite_rules_remove_combinations() {
        let g = candle_lite_graph();
        assert_eq!(g.product_size(), 3 * 16 * 5 * 3 * 5 * 6);
        let n = enumerate_valid_assignments(&g, DEFAULT_ENUMERATION_CAP).unwrap().len();
        assert!(n < 21_600 && n > 15_000, "{n}");
    }
}
