use rand::Rng;
use serde::{Deserialize, Serialize};

use super::ruc::{MATRIX_PHASE, PARTICLE_PHASE};
use super::MicroError;
use crate::seed;

/// Largest particle volume fraction the packer accepts.
pub const MAX_FRACTION: f64 = 0.30;
/// Allowed gap between voxelized and requested volume fraction.
pub const FRACTION_TOLERANCE: f64 = 0.015;
const MAX_ATTEMPTS: usize = 5000;
const MAX_PLACEMENT_TRIES: usize = 1000;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PackingMode {
    /// Random sequential addition.
    Random,
    /// Quartets `(c±a, c±a, z)`, invariant under the dihedral group of the
    /// square about the `Y3` axis.
    Symmetric,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParticleSpec {
    pub count: usize,
    /// Sphere radius (µm).
    pub radius: f64,
    pub mode: PackingMode,
    pub seed: u64,
}

impl ParticleSpec {
    /// Requested volume fraction of ideal (non-voxelized) spheres.
    pub fn requested_fraction(&self, l_ruc: f64) -> f64 {
        self.count as f64 * 4.0 / 3.0 * std::f64::consts::PI * self.radius.powi(3) / l_ruc.powi(3)
    }
}

/// Places non-overlapping spheres inside the cell and voxelizes them.
///
/// Spheres are fully interior laterally and never reach the outer voxel
/// layers along `Y3`, so both bond faces stay matrix. Placement is retried
/// until the voxelized fraction is within [`FRACTION_TOLERANCE`] of the
/// requested one.
pub fn pack_particles(grid: usize, l_ruc: f64, spec: &ParticleSpec) -> Result<Vec<u8>, MicroError> {
    let n_vox = grid * grid * grid;
    if spec.count == 0 {
        return Ok(vec![MATRIX_PHASE; n_vox]);
    }
    let r = spec.radius;
    if !(r > 0.0) {
        return Err(MicroError::Packing(
            "particle radius must be positive".into(),
        ));
    }
    let target = spec.requested_fraction(l_ruc);
    if target > MAX_FRACTION {
        return Err(MicroError::Packing(format!(
            "requested fraction {target:.3} exceeds {MAX_FRACTION}"
        )));
    }
    let h = l_ruc / grid as f64;
    let lat = (r, l_ruc - r);
    let vert = (r + 0.5 * h, l_ruc - r - 0.5 * h);
    if lat.0 > lat.1 || vert.0 >= vert.1 {
        return Err(MicroError::Packing(
            "particles do not fit inside the cell".into(),
        ));
    }
    if spec.mode == PackingMode::Symmetric && (!spec.count.is_multiple_of(4) || 0.5 * l_ruc - r < r) {
        return Err(MicroError::Packing(
            "symmetric packing needs quartets that fit in half the cell".into(),
        ));
    }

    let mut rng = seed::rng(spec.seed);
    for _ in 0..MAX_ATTEMPTS {
        let centers = match spec.mode {
            PackingMode::Random => place_random(&mut rng, spec.count, r, lat, vert),
            PackingMode::Symmetric => place_symmetric(&mut rng, spec.count / 4, r, l_ruc, vert),
        };
        let Some(centers) = centers else { continue };
        let map = voxelize(grid, h, r, &centers);
        let n_particle = map.iter().filter(|&&p| p == PARTICLE_PHASE).count();
        let achieved = n_particle as f64 / n_vox as f64;
        let layer = grid * grid;
        let faces_clear = map[..layer]
            .iter()
            .chain(&map[n_vox - layer..])
            .all(|&p| p == MATRIX_PHASE);
        if faces_clear && (achieved - target).abs() <= FRACTION_TOLERANCE {
            return Ok(map);
        }
    }
    Err(MicroError::Packing(format!(
        "no admissible packing within {MAX_ATTEMPTS} attempts (target fraction {target:.4})"
    )))
}

fn overlaps(c: &[f64; 3], others: &[[f64; 3]], r: f64) -> bool {
    let min2 = (2.0 * r) * (2.0 * r);
    others.iter().any(|o| {
        let d = [c[0] - o[0], c[1] - o[1], c[2] - o[2]];
        d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < min2
    })
}

fn place_random(
    rng: &mut impl Rng,
    count: usize,
    r: f64,
    lat: (f64, f64),
    vert: (f64, f64),
) -> Option<Vec<[f64; 3]>> {
    let mut centers = Vec::with_capacity(count);
    for _ in 0..count {
        let placed = (0..MAX_PLACEMENT_TRIES).find_map(|_| {
            let c = [
                rng.gen_range(lat.0..=lat.1),
                rng.gen_range(lat.0..=lat.1),
                rng.gen_range(vert.0..vert.1),
            ];
            (!overlaps(&c, &centers, r)).then_some(c)
        })?;
        centers.push(placed);
    }
    Some(centers)
}

fn place_symmetric(
    rng: &mut impl Rng,
    quartets: usize,
    r: f64,
    l_ruc: f64,
    vert: (f64, f64),
) -> Option<Vec<[f64; 3]>> {
    let c = 0.5 * l_ruc;
    let mut centers: Vec<[f64; 3]> = Vec::with_capacity(4 * quartets);
    for _ in 0..quartets {
        let placed = (0..MAX_PLACEMENT_TRIES).find_map(|_| {
            let a = rng.gen_range(r..=(c - r));
            let z = rng.gen_range(vert.0..vert.1);
            let quad = [
                [c + a, c + a, z],
                [c - a, c + a, z],
                [c - a, c - a, z],
                [c + a, c - a, z],
            ];
            quad.iter()
                .all(|q| !overlaps(q, &centers, r))
                .then_some(quad)
        })?;
        centers.extend_from_slice(&placed);
    }
    Some(centers)
}

fn voxelize(grid: usize, h: f64, r: f64, centers: &[[f64; 3]]) -> Vec<u8> {
    let mut map = vec![MATRIX_PHASE; grid * grid * grid];
    let r2 = r * r;
    for k in 0..grid {
        let z = (k as f64 + 0.5) * h;
        for j in 0..grid {
            let y = (j as f64 + 0.5) * h;
            for i in 0..grid {
                let x = (i as f64 + 0.5) * h;
                let inside = centers.iter().any(|c| {
                    let d = [x - c[0], y - c[1], z - c[2]];
                    d[0] * d[0] + d[1] * d[1] + d[2] * d[2] < r2
                });
                if inside {
                    map[(k * grid + j) * grid + i] = PARTICLE_PHASE;
                }
            }
        }
    }
    map
}

#[cfg(test)]
mod tests {
    use super::*;

    fn fraction(map: &[u8]) -> f64 {
        map.iter().filter(|&&p| p == PARTICLE_PHASE).count() as f64 / map.len() as f64
    }

    #[test]
    fn zero_particles_is_homogeneous() {
        let spec = ParticleSpec {
            count: 0,
            radius: 10.0,
            mode: PackingMode::Random,
            seed: 1,
        };
        assert!(pack_particles(6, 100.0, &spec)
            .unwrap()
            .iter()
            .all(|&p| p == MATRIX_PHASE));
    }

    #[test]
    fn reference_cell_fraction() {
        for mode in [PackingMode::Random, PackingMode::Symmetric] {
            for grid in [8, 10, 12] {
                let spec = ParticleSpec {
                    count: 4,
                    radius: 18.2,
                    mode,
                    seed: 3,
                };
                let map = pack_particles(grid, 100.0, &spec).unwrap();
                let c = fraction(&map);
                assert!((0.086..=0.116).contains(&c), "{mode:?} n={grid}: {c}");
            }
        }
        let spec = ParticleSpec {
            count: 4,
            radius: 18.2,
            mode: PackingMode::Random,
            seed: 0,
        };
        assert!((spec.requested_fraction(100.0) - 0.1010).abs() < 1e-4);
    }

    #[test]
    fn deterministic_per_seed() {
        let spec = ParticleSpec {
            count: 4,
            radius: 18.2,
            mode: PackingMode::Random,
            seed: 42,
        };
        assert_eq!(
            pack_particles(10, 100.0, &spec).unwrap(),
            pack_particles(10, 100.0, &spec).unwrap()
        );
    }

    #[test]
    fn bond_faces_stay_matrix() {
        let grid = 10;
        let spec = ParticleSpec {
            count: 4,
            radius: 18.2,
            mode: PackingMode::Random,
            seed: 9,
        };
        let map = pack_particles(grid, 100.0, &spec).unwrap();
        let layer = grid * grid;
        assert!(map[..layer].iter().all(|&p| p == MATRIX_PHASE));
        assert!(map[map.len() - layer..].iter().all(|&p| p == MATRIX_PHASE));
    }

    #[test]
    fn symmetric_packing_is_dihedral() {
        let n = 8;
        let spec = ParticleSpec {
            count: 4,
            radius: 18.2,
            mode: PackingMode::Symmetric,
            seed: 5,
        };
        let map = pack_particles(n, 100.0, &spec).unwrap();
        let at = |i: usize, j: usize, k: usize| map[(k * n + j) * n + i];
        for k in 0..n {
            for j in 0..n {
                for i in 0..n {
                    assert_eq!(at(i, j, k), at(j, i, k));
                    assert_eq!(at(i, j, k), at(n - 1 - i, j, k));
                }
            }
        }
    }

    #[test]
    fn overfull_request_fails() {
        let spec = ParticleSpec {
            count: 40,
            radius: 18.2,
            mode: PackingMode::Random,
            seed: 1,
        };
        assert!(matches!(
            pack_particles(8, 100.0, &spec),
            Err(MicroError::Packing(_))
        ));
    }
}
