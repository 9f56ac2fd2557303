use std::collections::HashMap;
use std::time::Instant;

use super::ruc::Ruc;
use super::{update_voxel_damage, MicroError, MicroResult};
use crate::tensor_mech::{response, DamageState, DefGradient, Tensor3};

/// Taylor model: every voxel carries `F0` and the traction is the volume
/// average of `F0 S` contracted with the cell normal.
///
/// Constitutive work is done once per `(phase, damage state)` class; the
/// volume sum still runs voxel by voxel so the result is bitwise equal to a
/// naive per-voxel loop.
pub fn taylor_traction(
    f0: &DefGradient,
    ruc: &mut Ruc,
    dt: f64,
) -> Result<MicroResult, MicroError> {
    let start = Instant::now();
    let cell = ruc.template.clone();
    let f = *f0.tensor();
    let c = f.right_cauchy_green();

    let mut classes: HashMap<(u8, [u64; 4]), usize> = HashMap::new();
    let mut class_of = Vec::with_capacity(cell.n_voxels());
    let mut class_out: Vec<(DamageState, Tensor3)> = Vec::new();
    for (v, d) in ruc.damage.iter().enumerate() {
        let phase = cell.phase_map[v];
        let key = (phase, d.key());
        let id = match classes.get(&key) {
            Some(&id) => id,
            None => {
                let mat = &cell.phases[phase as usize];
                let (r, _) = response(&c, mat).ok_or(MicroError::Inadmissible(f.det()))?;
                let (yd, yv) = r.release_rates();
                let next = update_voxel_damage(*d, yd, yv, dt, mat);
                class_out.push((next, f * r.stress(&next)));
                classes.insert(key, class_out.len() - 1);
                class_out.len() - 1
            }
        };
        class_of.push(id);
    }

    let mut p_sum = Tensor3::ZERO;
    for (v, &id) in class_of.iter().enumerate() {
        let (next, p) = class_out[id];
        ruc.damage[v] = next;
        p_sum += p;
    }
    let p_avg = p_sum.scale(1.0 / cell.n_voxels() as f64);
    Ok(MicroResult {
        traction: p_avg.col(2),
        mean_damage: ruc.mean_damage(),
        iterations: 0,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: true,
    })
}

/// Volume-averaged Taylor energy density at fixed damage.
pub fn taylor_energy_density(f0: &DefGradient, ruc: &Ruc) -> Result<f64, MicroError> {
    let c = f0.right_cauchy_green();
    let mut sum = 0.0;
    for (v, d) in ruc.damage.iter().enumerate() {
        let (r, _) = response(&c, ruc.template.material_of(v))
            .ok_or(MicroError::Inadmissible(f0.jacobian()))?;
        sum += r.energy(d);
    }
    Ok(sum / ruc.damage.len() as f64)
}
