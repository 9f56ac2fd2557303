use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::seed;

/// Leading sequence members discarded.
pub const SKIP: u64 = 1000;
/// Stride between retained members.
pub const STRIDE: u64 = 101;

const BASES: [u64; 2] = [2, 3];
/// Digits per coordinate; `b^D` exceeds every index reached in practice.
const DIGITS: [usize; 2] = [32, 21];

/// Plain radical inverse of `index` in `base`.
pub fn radical_inverse(mut index: u64, base: u64) -> f64 {
    let inv = 1.0 / base as f64;
    let mut scale = inv;
    let mut out = 0.0;
    while index > 0 {
        out += (index % base) as f64 * scale;
        index /= base;
        scale *= inv;
    }
    out
}

/// Unscrambled, unskipped Halton point in bases (2, 3).
pub fn halton_2d_raw(index: u64) -> (f64, f64) {
    (radical_inverse(index, 2), radical_inverse(index, 3))
}

/// Per-base digit permutations for reverse-radix scrambling.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct HaltonScramble {
    pub seed: u64,
    pub perms: [Vec<u8>; 2],
}

impl HaltonScramble {
    pub fn new(seed: u64) -> Self {
        let mut rng = seed::rng(seed);
        let perms = BASES.map(|b| {
            let mut p: Vec<u8> = (0..b as u8).collect();
            p.shuffle(&mut rng);
            p
        });
        HaltonScramble { seed, perms }
    }

    /// Identity permutations: reproduces the plain sequence.
    pub fn identity() -> Self {
        HaltonScramble {
            seed: 0,
            perms: BASES.map(|b| (0..b as u8).collect()),
        }
    }

    fn coordinate(&self, mut index: u64, axis: usize) -> f64 {
        let base = BASES[axis];
        let inv = 1.0 / base as f64;
        let mut scale = inv;
        let mut out = 0.0;
        for _ in 0..DIGITS[axis] {
            let d = (index % base) as usize;
            out += self.perms[axis][d] as f64 * scale;
            index /= base;
            scale *= inv;
        }
        out
    }

    /// Scrambled member at the given raw sequence position.
    pub fn at_position(&self, position: u64) -> (f64, f64) {
        (self.coordinate(position, 0), self.coordinate(position, 1))
    }
}

/// Sample `index` of the thinned sequence: position `1000 + 101 * index`,
/// digit-scrambled.
pub fn halton_2d(index: u64, scramble: &HaltonScramble) -> (f64, f64) {
    scramble.at_position(SKIP + STRIDE * index)
}
