//! Scenarios shipped inside the binary.

pub const BUNDLED: &[(&str, &str)] = &[
    ("two-deltas", include_str!("../scenarios/two-deltas.json")),
    ("unequal-pair", include_str!("../scenarios/unequal-pair.json")),
    ("three-points-jump", include_str!("../scenarios/three-points-jump.json")),
    ("five-point-2d", include_str!("../scenarios/five-point-2d.json")),
    ("gaussian-isotropic", include_str!("../scenarios/gaussian-isotropic.json")),
    ("gaussian-subspace", include_str!("../scenarios/gaussian-subspace.json")),
    ("twentyq-16", include_str!("../scenarios/twentyq-16.json")),
];

pub fn bundled(name: &str) -> Option<&'static str> {
    BUNDLED.iter().find(|(n, _)| *n == name).map(|(_, text)| *text)
}

pub fn names() -> impl Iterator<Item = &'static str> {
    BUNDLED.iter().map(|(n, _)| *n)
}
