//! Published ablation figures, kept for side-by-side display. They never
//! feed a pass/fail verdict on our own runs.

use super::ordered;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ReferenceRow {
    pub label: &'static str,
    /// (SR, AS) for house, store, restaurant, office, garden.
    pub scenes: [(f64, f64); 5],
    pub average: (f64, f64),
}

pub const REFERENCE_ABLATION: [ReferenceRow; 3] = [
    ReferenceRow {
        label: "Full",
        scenes: [(0.90, 8.1), (0.96, 17.0), (0.89, 16.0), (0.92, 15.0), (0.95, 19.1)],
        average: (0.92, 15.04),
    },
    ReferenceRow {
        label: "NoHuman",
        scenes: [(0.85, 9.6), (0.92, 21.0), (0.83, 19.0), (0.86, 19.0), (0.95, 20.4)],
        average: (0.882, 17.00),
    },
    ReferenceRow {
        label: "NoHumanNoVerify",
        scenes: [(0.65, 12.5), (0.80, 24.0), (0.78, 35.0), (0.77, 27.5), (0.83, 22.1)],
        average: (0.766, 24.22),
    },
];

/// Direction check over the reference averages.
pub fn reference_direction() -> (bool, bool) {
    let [a, b, c] = REFERENCE_ABLATION.map(|r| r.average);
    ordered([a.0, b.0, c.0], [Some(a.1), Some(b.1), Some(c.1)])
}
