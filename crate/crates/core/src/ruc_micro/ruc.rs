use std::sync::{Arc, OnceLock};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::full_model::FmStructure;
use super::packing::{pack_particles, PackingMode, ParticleSpec};
use super::MicroError;
use crate::tensor_mech::{DamageState, MaterialParams};

pub const MATRIX_PHASE: u8 = 0;
pub const PARTICLE_PHASE: u8 = 1;

/// Shared unit-cell geometry and materials.
///
/// Voxels are indexed `(k * n + j) * n + i` with `k` along the cell normal
/// `Y3`. The finite-element structure for the full model is built lazily and
/// cached.
#[derive(Debug, Serialize, Deserialize)]
pub struct RucTemplate {
    pub grid: usize,
    /// Cell edge length (µm).
    pub l_ruc: f64,
    /// Adhesive layer thickness (µm).
    pub l_c: f64,
    #[serde(with = "rle")]
    pub phase_map: Vec<u8>,
    /// Material per phase id.
    pub phases: Vec<MaterialParams>,
    pub particles: Option<ParticleSpec>,
    #[serde(skip)]
    structure: OnceLock<Arc<FmStructure>>,
}

impl Clone for RucTemplate {
    fn clone(&self) -> Self {
        RucTemplate {
            grid: self.grid,
            l_ruc: self.l_ruc,
            l_c: self.l_c,
            phase_map: self.phase_map.clone(),
            phases: self.phases.clone(),
            particles: self.particles.clone(),
            structure: self.structure.clone(),
        }
    }
}

impl PartialEq for RucTemplate {
    fn eq(&self, other: &Self) -> bool {
        self.grid == other.grid
            && self.l_ruc == other.l_ruc
            && self.l_c == other.l_c
            && self.phase_map == other.phase_map
            && self.phases == other.phases
            && self.particles == other.particles
    }
}

impl RucTemplate {
    pub fn new(
        grid: usize,
        l_ruc: f64,
        l_c: f64,
        phase_map: Vec<u8>,
        phases: Vec<MaterialParams>,
        particles: Option<ParticleSpec>,
    ) -> Result<Self, MicroError> {
        if grid < 2 {
            return Err(MicroError::InvalidCell(
                "grid must have at least 2 voxels per edge".into(),
            ));
        }
        if !(l_ruc > 0.0) || !(l_c > 0.0) {
            return Err(MicroError::InvalidCell(
                "l_ruc and l_c must be positive".into(),
            ));
        }
        if phase_map.len() != grid * grid * grid {
            return Err(MicroError::InvalidCell(format!(
                "phase map has {} voxels, expected {}",
                phase_map.len(),
                grid * grid * grid
            )));
        }
        if let Some(bad) = phase_map.iter().find(|&&p| p as usize >= phases.len()) {
            return Err(MicroError::InvalidCell(format!(
                "phase id {bad} has no material"
            )));
        }
        for m in &phases {
            m.validate()?;
        }
        Ok(RucTemplate {
            grid,
            l_ruc,
            l_c,
            phase_map,
            phases,
            particles,
            structure: OnceLock::new(),
        })
    }

    /// Single-phase cell.
    pub fn homogeneous(
        grid: usize,
        l_ruc: f64,
        l_c: f64,
        material: MaterialParams,
    ) -> Result<Self, MicroError> {
        Self::new(
            grid,
            l_ruc,
            l_c,
            vec![MATRIX_PHASE; grid * grid * grid],
            vec![material],
            None,
        )
    }

    /// Matrix cell with packed spherical particles.
    pub fn packed(
        grid: usize,
        l_ruc: f64,
        l_c: f64,
        matrix: MaterialParams,
        particle: MaterialParams,
        spec: ParticleSpec,
    ) -> Result<Self, MicroError> {
        let map = pack_particles(grid, l_ruc, &spec)?;
        Self::new(grid, l_ruc, l_c, map, vec![matrix, particle], Some(spec))
    }

    /// The particulate cell used throughout the DCB study: four particles of
    /// radius 18.2 µm in a 100 µm cube, packed with axial symmetry about `Y3`.
    pub fn reference_two_phase(grid: usize, seed: u64) -> Result<Self, MicroError> {
        let spec = ParticleSpec {
            count: 4,
            radius: 18.2,
            mode: PackingMode::Symmetric,
            seed,
        };
        Self::packed(
            grid,
            100.0,
            100.0,
            MaterialParams::polyurethane_matrix(),
            MaterialParams::nylon_particle(),
            spec,
        )
    }

    pub fn n_voxels(&self) -> usize {
        self.phase_map.len()
    }

    pub fn voxel_index(&self, i: usize, j: usize, k: usize) -> usize {
        (k * self.grid + j) * self.grid + i
    }

    pub fn material_of(&self, voxel: usize) -> &MaterialParams {
        &self.phases[self.phase_map[voxel] as usize]
    }

    /// Volume fraction of each phase id.
    pub fn phase_fractions(&self) -> Vec<f64> {
        let mut counts = vec![0usize; self.phases.len()];
        for &p in &self.phase_map {
            counts[p as usize] += 1;
        }
        let n = self.n_voxels() as f64;
        counts.into_iter().map(|c| c as f64 / n).collect()
    }

    pub fn particle_fraction(&self) -> f64 {
        self.phase_map
            .iter()
            .filter(|&&p| p != MATRIX_PHASE)
            .count() as f64
            / self.n_voxels() as f64
    }

    pub fn is_homogeneous(&self) -> bool {
        let first = self.material_of(0);
        (0..self.n_voxels()).all(|v| self.material_of(v) == first)
    }

    pub(crate) fn structure(&self) -> Arc<FmStructure> {
        self.structure
            .get_or_init(|| Arc::new(FmStructure::new(self.grid)))
            .clone()
    }

    /// Hex digest identifying geometry and materials.
    pub fn fingerprint(&self) -> String {
        #[derive(Serialize)]
        struct Canon<'a> {
            grid: usize,
            l_ruc: f64,
            l_c: f64,
            phase_map: Vec<(u8, usize)>,
            phases: &'a [MaterialParams],
        }
        let canon = Canon {
            grid: self.grid,
            l_ruc: self.l_ruc,
            l_c: self.l_c,
            phase_map: rle::encode(&self.phase_map),
            phases: &self.phases,
        };
        let bytes = serde_json::to_vec(&canon).expect("canonical cell serializes");
        hex::encode(Sha256::digest(&bytes))
    }
}

/// A unit cell instance: shared template plus its own voxel damage field.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ruc {
    pub template: Arc<RucTemplate>,
    pub damage: Vec<DamageState>,
}

impl Ruc {
    pub fn pristine(template: Arc<RucTemplate>) -> Self {
        let n = template.n_voxels();
        Ruc {
            template,
            damage: vec![DamageState::default(); n],
        }
    }

    pub fn mean_damage(&self) -> f64 {
        self.damage
            .iter()
            .map(DamageState::omega_total)
            .sum::<f64>()
            / self.damage.len() as f64
    }

    pub fn max_damage(&self) -> f64 {
        self.damage
            .iter()
            .map(DamageState::omega_total)
            .fold(0.0, f64::max)
    }
}

/// Run-length encoding of the phase map as `[[phase, run], ...]`.
pub(crate) mod rle {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn encode(map: &[u8]) -> Vec<(u8, usize)> {
        let mut out: Vec<(u8, usize)> = Vec::new();
        for &p in map {
            match out.last_mut() {
                Some((q, n)) if *q == p => *n += 1,
                _ => out.push((p, 1)),
            }
        }
        out
    }

    pub fn decode(runs: &[(u8, usize)]) -> Vec<u8> {
        runs.iter()
            .flat_map(|&(p, n)| std::iter::repeat_n(p, n))
            .collect()
    }

    pub fn serialize<S: Serializer>(map: &[u8], s: S) -> Result<S::Ok, S::Error> {
        encode(map).serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Vec<u8>, D::Error> {
        let runs = Vec::<(u8, usize)>::deserialize(d)?;
        Ok(decode(&runs))
    }
}
