//! Built-in models shipped with the crate.

use crate::error::{Error, Result};
use crate::model::Model;

const MODELS: [(&str, &str); 7] = [
    ("euclidean", include_str!("../gallery/euclidean.json")),
    ("riemann-sphere", include_str!("../gallery/riemann-sphere.json")),
    ("hyperbolic", include_str!("../gallery/hyperbolic.json")),
    ("randers", include_str!("../gallery/randers.json")),
    ("rotation-algebroid", include_str!("../gallery/rotation-algebroid.json")),
    ("product-foliation", include_str!("../gallery/product-foliation.json")),
    ("forced-mechanical", include_str!("../gallery/forced-mechanical.json")),
];

const ALIASES: [(&str, &str); 3] =
    [("sphere", "riemann-sphere"), ("product-riemann", "product-foliation"), ("rotation", "rotation-algebroid")];

pub fn names() -> Vec<&'static str> {
    MODELS.iter().map(|(n, _)| *n).collect()
}

pub fn source(name: &str) -> Result<&'static str> {
    let name = ALIASES.iter().find(|(a, _)| *a == name).map_or(name, |(_, t)| t);
    MODELS
        .iter()
        .find(|(n, _)| *n == name)
        .map(|(_, s)| *s)
        .ok_or_else(|| Error::UnknownGallery(name.to_string()))
}

pub fn load(name: &str) -> Result<Model> {
    Model::from_json(source(name)?)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn every_gallery_model_loads() {
        for name in names() {
            let m = load(name).unwrap_or_else(|e| panic!("{name}: {e}"));
            assert_eq!(m.name(), name);
        }
        assert_eq!(load("sphere").unwrap().name(), "riemann-sphere");
        assert!(matches!(load("torus"), Err(Error::UnknownGallery(_))));
    }
}
