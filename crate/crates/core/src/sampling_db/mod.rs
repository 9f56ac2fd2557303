//! Offline database construction: quasi-random load directions, paired
//! FM/TM ground-truth solves, error labels, and one classifier per radial
//! segment of the jump magnitude.

mod bank;
mod database;
mod halton;

use std::f64::consts::{FRAC_PI_2, FRAC_PI_4, PI, TAU};

use serde::{Deserialize, Serialize};

pub use bank::{evaluate_direction, BankOptions, SampleBank};
pub use database::{
    build_database, classification_error, Classification, DatabaseSpec, DbError, DbMetadata,
    OfflineDatabase, Segment, SigmaSelection, SvrOptions,
};
pub use halton::{halton_2d, halton_2d_raw, radical_inverse, HaltonScramble, SKIP, STRIDE};

use crate::ruc_micro::{Model, ModelingError};
use crate::tensor_mech::{norm3, Vec3};

/// Azimuth range of the sampled directions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiRange {
    /// `[0, 2π)`.
    Full,
    /// `[0, π/4)`, for cells with the square dihedral symmetry about `Y3`.
    Reduced,
}

impl PhiRange {
    pub fn width(self) -> f64 {
        match self {
            PhiRange::Full => TAU,
            PhiRange::Reduced => FRAC_PI_4,
        }
    }

    /// Maps an azimuth in `[0, 2π)` into the sampled range.
    pub fn fold(self, phi: f64) -> f64 {
        match self {
            PhiRange::Full => phi,
            PhiRange::Reduced => fold_dihedral(phi),
        }
    }
}

/// Folds `phi` into `[0, π/4]` under the reflections `x -> -x`, `y -> -y`
/// and `x <-> y`.
pub fn fold_dihedral(phi: f64) -> f64 {
    let q = phi.rem_euclid(FRAC_PI_2);
    if q > FRAC_PI_4 {
        FRAC_PI_2 - q
    } else {
        q
    }
}

/// `r (sin θ cos φ, sin θ sin φ, cos θ)`.
pub fn spherical_to_jump(r: f64, phi: f64, theta: f64) -> Vec3 {
    let (st, ct) = theta.sin_cos();
    let (sp, cp) = phi.sin_cos();
    [r * st * cp, r * st * sp, r * ct]
}

/// Inverse of [`spherical_to_jump`]: `θ = acos(u3 / r)`, `φ = atan2(u2, u1)`
/// wrapped to `[0, 2π)`. The zero vector maps to `(0, 0, 0)`.
pub fn jump_to_spherical(u: &Vec3) -> (f64, f64, f64) {
    let r = norm3(u);
    if r == 0.0 {
        return (0.0, 0.0, 0.0);
    }
    let theta = (u[2] / r).clamp(-1.0, 1.0).acos();
    let mut phi = u[1].atan2(u[0]);
    if phi < 0.0 {
        phi += TAU;
    }
    if phi >= TAU {
        phi -= TAU;
    }
    (r, phi, theta)
}

/// `N_t` directions `(φ, θ) = (width · H1, π · H2)` from the thinned,
/// scrambled sequence.
pub fn make_training_samples(n_t: usize, range: PhiRange, scramble_seed: u64) -> Vec<(f64, f64)> {
    let s = HaltonScramble::new(scramble_seed);
    (0..n_t as u64)
        .map(|i| {
            let (h1, h2) = halton_2d(i, &s);
            (range.width() * h1, PI * h2)
        })
        .collect()
}

/// One labeled ground-truth sample.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LoadSample {
    pub phi: f64,
    pub theta: f64,
    pub r: f64,
    pub jump: Vec3,
    pub label: Model,
    pub error: Option<f64>,
}

impl LoadSample {
    pub fn new(r: f64, phi: f64, theta: f64, error: ModelingError, gamma: f64) -> Self {
        LoadSample {
            phi,
            theta,
            r,
            jump: spherical_to_jump(r, phi, theta),
            label: error.label(gamma),
            error: error.value(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spherical_round_trip() {
        for (r, p, t) in [(1.0, 0.3, 1.2), (2.5, 5.9, 0.01), (0.1, 3.2, 3.1)] {
            let (r2, p2, t2) = jump_to_spherical(&spherical_to_jump(r, p, t));
            assert!((r - r2).abs() < 1e-12 && (p - p2).abs() < 1e-12 && (t - t2).abs() < 1e-12);
        }
        assert_eq!(jump_to_spherical(&[0.0; 3]), (0.0, 0.0, 0.0));
    }

    #[test]
    fn axis_conventions() {
        let (_, phi, theta) = jump_to_spherical(&[0.0, -1.0, 0.0]);
        assert!((phi - 1.5 * PI).abs() < 1e-15);
        assert!((theta - FRAC_PI_2).abs() < 1e-15);
        assert_eq!(jump_to_spherical(&[0.0, 0.0, -2.0]).2, PI);
    }

    #[test]
    fn dihedral_fold() {
        assert!((fold_dihedral(0.1) - 0.1).abs() < 1e-15);
        assert!((fold_dihedral(FRAC_PI_2 - 0.1) - 0.1).abs() < 1e-15);
        assert!((fold_dihedral(PI + 0.1) - 0.1).abs() < 1e-14);
        assert!((fold_dihedral(TAU - 0.1) - 0.1).abs() < 1e-14);
        for i in 0..100 {
            let f = fold_dihedral(i as f64 * 0.07);
            assert!((0.0..=FRAC_PI_4).contains(&f));
        }
    }

    #[test]
    fn samples_in_range_and_deterministic() {
        for range in [PhiRange::Full, PhiRange::Reduced] {
            let s = make_training_samples(500, range, 11);
            assert_eq!(s.len(), 500);
            assert!(s
                .iter()
                .all(|&(p, t)| (0.0..range.width()).contains(&p) && (0.0..=PI).contains(&t)));
            assert_eq!(s, make_training_samples(500, range, 11));
        }
    }
}
