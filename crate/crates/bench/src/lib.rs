//! Fixtures shared by the benchmarks.

use balfmm::datasets::{generate, Distribution, GeneratorSpec};
use balfmm::harmonics::{p2m, MultipoleExpansion};
use balfmm::{FmmBox, Source};

pub fn uniform(n: usize, seed: u64) -> Vec<Source> {
    generate(&GeneratorSpec { distribution: Distribution::UniformCube, n, seed }).expect("uniform points")
}

/// Multipole of 64 points in the unit cube at order `q`, and a target
/// center three widths away off every axis.
pub fn m2l_fixture(q: usize) -> (MultipoleExpansion, [f64; 3]) {
    let bx = FmmBox::from_bounds([0.0; 3], [1.0; 3]);
    (p2m(&uniform(64, 1), &bx, q), [3.2, 1.9, 2.6])
}
