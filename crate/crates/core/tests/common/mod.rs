#![allow(dead_code)]

use coropve_core::phantom::{PhantomSpec, RadiusProfile};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Straight-vessel phantom with the imaging setup used throughout the tests:
/// 400 HU lumen, 0 HU background, 0.6 mm PSF, 0.5 mm voxels.
pub fn vessel(profile: RadiusProfile, length_mm: f64, noise_sigma_hu: f64) -> PhantomSpec {
    PhantomSpec {
        length_mm,
        radius_profile: profile,
        plaque_segments: vec![],
        lumen_hu: 400.0,
        background_hu: 0.0,
        psf_sigma_mm: 0.6,
        voxel_spacing_mm: [0.5; 3],
        noise_sigma_hu,
    }
}

/// Exhaustive minimum of `sum unary + lambda * sum w [x_p != x_q]` over
/// labelings that satisfy every `(outer, inner)` star constraint.
/// `unary[v] = (cost if lumen, cost if background)`.
pub fn brute_force_energy(
    unary: &[(f64, f64)],
    pairs: &[(usize, usize, f64)],
    star: &[(usize, usize)],
    lambda: f64,
) -> (f64, Vec<bool>) {
    let n = unary.len();
    assert!(n <= 20);
    let mut best = (f64::INFINITY, vec![]);
    for mask in 0u32..(1 << n) {
        let lab: Vec<bool> = (0..n).map(|v| mask >> v & 1 == 1).collect();
        if star.iter().any(|&(o, i)| lab[o] && !lab[i]) {
            continue;
        }
        let e = labeling_energy(unary, pairs, lambda, &lab);
        if e < best.0 {
            best = (e, lab);
        }
    }
    best
}

pub fn labeling_energy(unary: &[(f64, f64)], pairs: &[(usize, usize, f64)], lambda: f64, lab: &[bool]) -> f64 {
    let mut e = 0.0;
    for (v, &(l, b)) in unary.iter().enumerate() {
        e += if lab[v] { l } else { b };
    }
    for &(p, q, w) in pairs {
        if lab[p] != lab[q] {
            e += lambda * w;
        }
    }
    e
}
