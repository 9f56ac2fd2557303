//! Full micro-model: finite-strain equilibrium of the fluctuation field on a
//! structured voxel grid of trilinear hexahedra.
//!
//! The cell is mapped to the unit cube, so fluctuations are measured in
//! units of the cell edge and the residual is the gradient of the
//! volume-averaged energy density. Fluctuations vanish on the two bond faces
//! `Y3 = 0, 1` and are periodic across the four lateral faces; periodicity is
//! imposed by giving paired lateral nodes a single set of unknowns.

use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::ruc::{Ruc, RucTemplate};
use super::sparse::{pcg, CgFailure, CsrPattern};
use super::{update_voxel_damage, MicroError, MicroResult, NewtonDiagnostics};
use crate::tensor_mech::{
    idx4, response, response_with_tangent, DamageState, DefGradient, Tensor3,
};

const FIXED: u32 = u32::MAX;

/// Sparsity and shape-function data for an `n³` grid, shared by all cells
/// with the same resolution.
#[derive(Debug)]
pub(crate) struct FmStructure {
    pub ndof: usize,
    elem_dofs: Vec<[u32; 24]>,
    pattern: CsrPattern,
    elem_slots: Vec<Vec<u32>>,
    /// `grads[gp][node][dim]` in unit-cube coordinates.
    grads: [[[f64; 3]; 8]; 8],
    weight: f64,
}

impl FmStructure {
    pub fn new(n: usize) -> Self {
        assert!(n >= 2, "full model needs at least two voxels per edge");
        let free_layers = n - 1;
        let ndof = 3 * n * n * free_layers;
        let node_base = |i: usize, j: usize, k: usize| -> u32 {
            if k == 0 || k == n {
                FIXED
            } else {
                (3 * (((k - 1) * n + j % n) * n + i % n)) as u32
            }
        };

        let mut elem_dofs = Vec::with_capacity(n * n * n);
        for ez in 0..n {
            for ey in 0..n {
                for ex in 0..n {
                    let mut dofs = [FIXED; 24];
                    for a in 0..8 {
                        let (dx, dy, dz) = (a & 1, (a >> 1) & 1, (a >> 2) & 1);
                        let base = node_base(ex + dx, ey + dy, ez + dz);
                        for c in 0..3 {
                            dofs[3 * a + c] = if base == FIXED {
                                FIXED
                            } else {
                                base + c as u32
                            };
                        }
                    }
                    elem_dofs.push(dofs);
                }
            }
        }

        let mut rows: Vec<Vec<u32>> = vec![Vec::new(); ndof];
        for dofs in &elem_dofs {
            for &p in dofs.iter().filter(|&&d| d != FIXED) {
                rows[p as usize].extend(dofs.iter().copied().filter(|&d| d != FIXED));
            }
        }
        let pattern = CsrPattern::from_rows(rows);
        let elem_slots = elem_dofs
            .iter()
            .map(|dofs| {
                let mut slots = vec![FIXED; 576];
                for (p, &dp) in dofs.iter().enumerate().filter(|(_, &d)| d != FIXED) {
                    for (q, &dq) in dofs.iter().enumerate().filter(|(_, &d)| d != FIXED) {
                        slots[p * 24 + q] = pattern
                            .slot(dp as usize, dq)
                            .expect("pattern covers element")
                            as u32;
                    }
                }
                slots
            })
            .collect();

        let h = 1.0 / n as f64;
        let g = 1.0 / 3f64.sqrt();
        let sign = |bit: usize| if bit == 1 { 1.0 } else { -1.0 };
        let mut grads = [[[0.0; 3]; 8]; 8];
        for (gp, grad_gp) in grads.iter_mut().enumerate() {
            let xi = [
                g * sign(gp & 1),
                g * sign((gp >> 1) & 1),
                g * sign((gp >> 2) & 1),
            ];
            for (a, grad) in grad_gp.iter_mut().enumerate() {
                let xa = [sign(a & 1), sign((a >> 1) & 1), sign((a >> 2) & 1)];
                let f = [
                    1.0 + xi[0] * xa[0],
                    1.0 + xi[1] * xa[1],
                    1.0 + xi[2] * xa[2],
                ];
                grad[0] = 0.125 * xa[0] * f[1] * f[2] * 2.0 / h;
                grad[1] = 0.125 * xa[1] * f[0] * f[2] * 2.0 / h;
                grad[2] = 0.125 * xa[2] * f[0] * f[1] * 2.0 / h;
            }
        }
        FmStructure {
            ndof,
            elem_dofs,
            pattern,
            elem_slots,
            grads,
            weight: h * h * h / 8.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.pattern.nnz()
    }

    fn element_gradients(&self, f0: &Tensor3, e: usize, u: &[f64]) -> [Tensor3; 8] {
        let dofs = &self.elem_dofs[e];
        let mut ue = [0.0; 24];
        for (p, &d) in dofs.iter().enumerate() {
            if d != FIXED {
                ue[p] = u[d as usize];
            }
        }
        let mut out = [*f0; 8];
        for (gp, f) in out.iter_mut().enumerate() {
            for a in 0..8 {
                let g = &self.grads[gp][a];
                for i in 0..3 {
                    let ua = ue[3 * a + i];
                    if ua != 0.0 {
                        f.0[i][0] += ua * g[0];
                        f.0[i][1] += ua * g[1];
                        f.0[i][2] += ua * g[2];
                    }
                }
            }
        }
        out
    }
}

/// Newton and linear-solver controls.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SolverOptions {
    pub max_newton: usize,
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub ls_factor: f64,
    pub ls_max_cuts: usize,
    pub max_substep_depth: usize,
    pub cg_rel_tol: f64,
    pub cg_max_iter: usize,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            max_newton: 25,
            rel_tol: 1e-8,
            abs_tol: 1e-12,
            ls_factor: 0.5,
            ls_max_cuts: 8,
            max_substep_depth: 6,
            cg_rel_tol: 1e-10,
            cg_max_iter: 20_000,
        }
    }
}

/// Converged fluctuation field at fixed damage.
#[derive(Clone, Debug)]
pub struct Equilibrium {
    /// Nodal fluctuations of the independent unknowns (cell-edge units).
    pub fluctuation: Vec<f64>,
    /// Volume-averaged strain energy density (MPa).
    pub energy_density: f64,
    pub newton_iterations: usize,
    pub cg_iterations: usize,
    pub substeps: usize,
}

impl Equilibrium {
    pub fn fluctuation_max(&self) -> f64 {
        self.fluctuation.iter().fold(0.0f64, |m, v| m.max(v.abs()))
    }
}

struct Assembler<'a> {
    s: &'a FmStructure,
    cell: &'a RucTemplate,
    damage: &'a [DamageState],
}

struct Evaluation {
    residual: Vec<f64>,
    energy: f64,
    norm: f64,
}

impl Assembler<'_> {
    /// Energy and residual; `None` when some integration point inverts.
    fn residual(&self, f0: &Tensor3, u: &[f64]) -> Option<Evaluation> {
        let s = self.s;
        let mut residual = vec![0.0; s.ndof];
        let mut energy = 0.0;
        for e in 0..s.elem_dofs.len() {
            let mat = self.cell.material_of(e);
            let d = &self.damage[e];
            let fs = s.element_gradients(f0, e, u);
            let mut re = [0.0; 24];
            for (gp, f) in fs.iter().enumerate() {
                let (r, _) = response(&f.right_cauchy_green(), mat)?;
                energy += s.weight * r.energy(d);
                let p = *f * r.stress(d);
                for a in 0..8 {
                    let g = &s.grads[gp][a];
                    for i in 0..3 {
                        re[3 * a + i] +=
                            s.weight * (p.0[i][0] * g[0] + p.0[i][1] * g[1] + p.0[i][2] * g[2]);
                    }
                }
            }
            for (p, &dof) in s.elem_dofs[e].iter().enumerate() {
                if dof != FIXED {
                    residual[dof as usize] += re[p];
                }
            }
        }
        let norm = residual.iter().map(|v| v * v).sum::<f64>().sqrt();
        Some(Evaluation {
            residual,
            energy,
            norm,
        })
    }

    fn tangent(&self, f0: &Tensor3, u: &[f64]) -> Option<Vec<f64>> {
        let s = self.s;
        let mut val = vec![0.0; s.nnz()];
        let mut ke = [[0.0f64; 24]; 24];
        for e in 0..s.elem_dofs.len() {
            let mat = self.cell.material_of(e);
            let d = &self.damage[e];
            let fs = s.element_gradients(f0, e, u);
            for row in ke.iter_mut() {
                row.fill(0.0);
            }
            for (gp, f) in fs.iter().enumerate() {
                let (r, cc) = response_with_tangent(&f.right_cauchy_green(), mat, d)?;
                let sm = r.stress(d);
                let a4 = spatialize(f, &sm, &cc);
                // G[a][i][k][l] = sum_j grad_aj A_ijkl
                let mut gmat = [[0.0f64; 27]; 8];
                for a in 0..8 {
                    let g = &s.grads[gp][a];
                    for i in 0..3 {
                        for k in 0..3 {
                            for l in 0..3 {
                                gmat[a][(i * 3 + k) * 3 + l] = g[0] * a4[idx4(i, 0, k, l)]
                                    + g[1] * a4[idx4(i, 1, k, l)]
                                    + g[2] * a4[idx4(i, 2, k, l)];
                            }
                        }
                    }
                }
                let w = s.weight;
                for a in 0..8 {
                    for b in 0..8 {
                        let gb = &s.grads[gp][b];
                        for i in 0..3 {
                            for k in 0..3 {
                                let base = (i * 3 + k) * 3;
                                ke[3 * a + i][3 * b + k] += w
                                    * (gmat[a][base] * gb[0]
                                        + gmat[a][base + 1] * gb[1]
                                        + gmat[a][base + 2] * gb[2]);
                            }
                        }
                    }
                }
            }
            let slots = &s.elem_slots[e];
            for p in 0..24 {
                for q in 0..24 {
                    let slot = slots[p * 24 + q];
                    if slot != FIXED {
                        val[slot as usize] += ke[p][q];
                    }
                }
            }
        }
        Some(val)
    }
}

/// First elasticity tensor `A_iJkL = δ_ik S_JL + F_iI F_kK ℂ_IJKL`.
fn spatialize(f: &Tensor3, s: &Tensor3, cc: &[f64; 81]) -> [f64; 81] {
    let f = &f.0;
    let mut t1 = [0.0; 81]; // [i][J][K][L]
    for i in 0..3 {
        for jj in 0..3 {
            for kk in 0..3 {
                for ll in 0..3 {
                    t1[idx4(i, jj, kk, ll)] = f[i][0] * cc[idx4(0, jj, kk, ll)]
                        + f[i][1] * cc[idx4(1, jj, kk, ll)]
                        + f[i][2] * cc[idx4(2, jj, kk, ll)];
                }
            }
        }
    }
    let mut a = [0.0; 81];
    for i in 0..3 {
        for jj in 0..3 {
            for k in 0..3 {
                for ll in 0..3 {
                    let mut v = t1[idx4(i, jj, 0, ll)] * f[k][0]
                        + t1[idx4(i, jj, 1, ll)] * f[k][1]
                        + t1[idx4(i, jj, 2, ll)] * f[k][2];
                    if i == k {
                        v += s.0[jj][ll];
                    }
                    a[idx4(i, jj, k, ll)] = v;
                }
            }
        }
    }
    a
}

struct Counters {
    newton: usize,
    cg: usize,
    substeps: usize,
}

fn newton(
    asm: &Assembler<'_>,
    f0: &Tensor3,
    u: &mut Vec<f64>,
    opts: &SolverOptions,
    counters: &mut Counters,
) -> Result<f64, NewtonDiagnostics> {
    let fail = |iterations, residual, reason: &str| NewtonDiagnostics {
        iterations,
        residual,
        reason: reason.to_string(),
    };
    let mut eval = asm
        .residual(f0, u)
        .ok_or_else(|| fail(0, f64::INFINITY, "inverted element at start"))?;
    let r0 = eval.norm;
    let mut du = vec![0.0; asm.s.ndof];
    for it in 0..=opts.max_newton {
        if eval.norm <= opts.abs_tol || eval.norm <= opts.rel_tol * r0 {
            return Ok(eval.energy);
        }
        if it == opts.max_newton {
            break;
        }
        let tangent = asm
            .tangent(f0, u)
            .ok_or_else(|| fail(it, eval.norm, "inverted element in tangent"))?;
        let rhs: Vec<f64> = eval.residual.iter().map(|v| -v).collect();
        match pcg(
            &asm.s.pattern,
            &tangent,
            &rhs,
            &mut du,
            opts.cg_rel_tol,
            opts.cg_max_iter,
        ) {
            Ok(n) => counters.cg += n,
            Err(CgFailure::Indefinite) => {
                // Truncated iterate, or scaled steepest descent if curvature failed at once.
                if du.iter().all(|v| *v == 0.0) {
                    let diag = asm.s.pattern.diagonal(&tangent);
                    for ((d, r), a) in du.iter_mut().zip(&rhs).zip(&diag) {
                        *d = if *a > 0.0 { r / a } else { *r };
                    }
                }
            }
            Err(CgFailure::NotConverged { residual }) => {
                return Err(fail(
                    it,
                    eval.norm,
                    &format!("linear solve stalled at {residual:.2e}"),
                ))
            }
        }
        counters.newton += 1;
        let slope: f64 = eval.residual.iter().zip(&du).map(|(r, d)| r * d).sum();
        let mut step = 1.0;
        let mut accepted = None;
        for _ in 0..=opts.ls_max_cuts {
            let trial: Vec<f64> = u.iter().zip(&du).map(|(a, b)| a + step * b).collect();
            if let Some(te) = asm.residual(f0, &trial) {
                let armijo = te.energy <= eval.energy + 1e-4 * step * slope;
                if armijo || te.norm < eval.norm {
                    accepted = Some((trial, te));
                    break;
                }
            }
            step *= opts.ls_factor;
        }
        let Some((trial, te)) = accepted else {
            return Err(fail(it + 1, eval.norm, "line search exhausted"));
        };
        *u = trial;
        eval = te;
    }
    Err(fail(opts.max_newton, eval.norm, "newton iteration limit"))
}

fn advance(
    asm: &Assembler<'_>,
    f0: &Tensor3,
    u: &mut Vec<f64>,
    from: f64,
    to: f64,
    depth: usize,
    opts: &SolverOptions,
    counters: &mut Counters,
) -> Result<f64, NewtonDiagnostics> {
    let target = Tensor3::IDENTITY + (*f0 - Tensor3::IDENTITY).scale(to);
    let mut trial = u.clone();
    match newton(asm, &target, &mut trial, opts, counters) {
        Ok(energy) => {
            *u = trial;
            Ok(energy)
        }
        Err(diag) if depth >= opts.max_substep_depth => Err(diag),
        Err(_) => {
            counters.substeps += 2;
            let mid = 0.5 * (from + to);
            advance(asm, f0, u, from, mid, depth + 1, opts, counters)?;
            advance(asm, f0, u, mid, to, depth + 1, opts, counters)
        }
    }
}

/// Solves micro equilibrium for macro gradient `f0` at the given (fixed)
/// voxel damage field, starting from zero fluctuations.
pub fn solve_equilibrium(
    cell: &RucTemplate,
    f0: &DefGradient,
    damage: &[DamageState],
    opts: &SolverOptions,
) -> Result<Equilibrium, MicroError> {
    let s = cell.structure();
    let asm = Assembler {
        s: &s,
        cell,
        damage,
    };
    let mut u = vec![0.0; s.ndof];
    let mut counters = Counters {
        newton: 0,
        cg: 0,
        substeps: 0,
    };
    let energy = advance(&asm, f0.tensor(), &mut u, 0.0, 1.0, 0, opts, &mut counters)
        .map_err(MicroError::NonConvergence)?;
    Ok(Equilibrium {
        fluctuation: u,
        energy_density: energy,
        newton_iterations: counters.newton,
        cg_iterations: counters.cg,
        substeps: counters.substeps,
    })
}

/// Per-voxel microscale deformation gradients at the eight Gauss points.
pub(crate) fn voxel_gradients(
    cell: &RucTemplate,
    f0: &DefGradient,
    fluctuation: &[f64],
) -> Vec<[Tensor3; 8]> {
    let s = cell.structure();
    (0..cell.n_voxels())
        .map(|e| s.element_gradients(f0.tensor(), e, fluctuation))
        .collect()
}

/// Full-model step: equilibrate at the current damage, advance voxel damage
/// over `dt` from the equilibrated field, then homogenize the traction with
/// the updated damage.
pub fn full_model_solve(
    f0: &DefGradient,
    ruc: &mut Ruc,
    dt: f64,
    opts: &SolverOptions,
) -> Result<MicroResult, MicroError> {
    let start = Instant::now();
    let cell = ruc.template.clone();
    let eq = solve_equilibrium(&cell, f0, &ruc.damage, opts)?;
    let fields = voxel_gradients(&cell, f0, &eq.fluctuation);

    let mut damage = ruc.damage.clone();
    let mut p_sum = Tensor3::ZERO;
    for (e, fs) in fields.iter().enumerate() {
        let mat = cell.material_of(e);
        let mut y = (0.0, 0.0);
        let mut responses = Vec::with_capacity(8);
        for f in fs {
            let (r, _) =
                response(&f.right_cauchy_green(), mat).ok_or(MicroError::Inadmissible(f.det()))?;
            let (yd, yv) = r.release_rates();
            y.0 += yd / 8.0;
            y.1 += yv / 8.0;
            responses.push(r);
        }
        damage[e] = update_voxel_damage(damage[e], y.0, y.1, dt, mat);
        let mut p_e = Tensor3::ZERO;
        for (f, r) in fs.iter().zip(&responses) {
            p_e += *f * r.stress(&damage[e]);
        }
        p_sum += p_e;
    }
    let p_avg = p_sum.scale(1.0 / cell.n_voxels() as f64 / 8.0);
    ruc.damage = damage;
    Ok(MicroResult {
        traction: p_avg.col(2),
        mean_damage: ruc.mean_damage(),
        iterations: eq.newton_iterations,
        wall_time_s: start.elapsed().as_secs_f64(),
        converged: true,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ruc_micro::taylor::taylor_traction;
    use crate::tensor_mech::MaterialParams;
    use std::sync::Arc;

    fn stretch(e33: f64) -> DefGradient {
        DefGradient::new(Tensor3::from_diag([1.0, 1.0, 1.0 + e33])).unwrap()
    }

    #[test]
    fn structure_counts() {
        let s = FmStructure::new(4);
        assert_eq!(s.ndof, 3 * 16 * 3);
        // interior node couples to 27 nodes in a periodic grid
        let row = 3 * (16 + 5);
        assert_eq!(s.pattern.row_ptr[row + 1] - s.pattern.row_ptr[row], 81);
        let gsum: f64 = s.grads.iter().flatten().map(|g| g[0]).sum();
        assert!(gsum.abs() < 1e-12);
    }

    #[test]
    fn identity_gives_zero_fluctuation() {
        let cell = RucTemplate::reference_two_phase(6, 1).unwrap();
        let damage = vec![DamageState::default(); cell.n_voxels()];
        let eq = solve_equilibrium(
            &cell,
            &DefGradient::identity(),
            &damage,
            &SolverOptions::default(),
        )
        .unwrap();
        assert_eq!(eq.fluctuation_max(), 0.0);
        assert_eq!(eq.energy_density, 0.0);
    }

    #[test]
    fn residual_matches_energy_gradient() {
        let cell = RucTemplate::reference_two_phase(6, 2).unwrap();
        let s = cell.structure();
        let damage = vec![DamageState::default(); cell.n_voxels()];
        let asm = Assembler {
            s: &s,
            cell: &cell,
            damage: &damage,
        };
        let f0 = Tensor3([[1.02, 0.01, 0.03], [0.0, 0.99, 0.02], [0.0, 0.0, 1.04]]);
        let u: Vec<f64> = (0..s.ndof)
            .map(|i| 1e-3 * ((i * 7919) % 13) as f64 / 13.0)
            .collect();
        let ev = asm.residual(&f0, &u).unwrap();
        let h = 1e-7;
        for &dof in &[0usize, 5, 17, s.ndof - 1] {
            let mut up = u.clone();
            let mut um = u.clone();
            up[dof] += h;
            um[dof] -= h;
            let fd = (asm.residual(&f0, &up).unwrap().energy
                - asm.residual(&f0, &um).unwrap().energy)
                / (2.0 * h);
            assert!(
                (fd - ev.residual[dof]).abs() < 1e-6 * (1.0 + fd.abs()),
                "{fd} vs {}",
                ev.residual[dof]
            );
        }
        let k = asm.tangent(&f0, &u).unwrap();
        for &dof in &[3usize, 11] {
            let mut up = u.clone();
            let mut um = u.clone();
            up[dof] += h;
            um[dof] -= h;
            let rp = asm.residual(&f0, &up).unwrap().residual;
            let rm = asm.residual(&f0, &um).unwrap().residual;
            for row in [0usize, dof, dof + 1, 40] {
                let fd = (rp[row] - rm[row]) / (2.0 * h);
                let an = s.pattern.slot(row, dof as u32).map(|p| k[p]).unwrap_or(0.0);
                assert!(
                    (fd - an).abs() < 1e-5 * (1.0 + an.abs()),
                    "K[{row},{dof}] {fd} vs {an}"
                );
            }
        }
    }

    #[test]
    fn homogeneous_cell_matches_taylor() {
        let cell = Arc::new(
            RucTemplate::homogeneous(4, 100.0, 100.0, MaterialParams::polyurethane_matrix())
                .unwrap(),
        );
        let f0 = DefGradient::new(Tensor3([
            [1.0, 0.0, 0.02],
            [0.0, 1.0, -0.01],
            [0.0, 0.0, 1.03],
        ]))
        .unwrap();
        let mut a = Ruc::pristine(cell.clone());
        let mut b = Ruc::pristine(cell);
        let fm = full_model_solve(&f0, &mut a, 0.01, &SolverOptions::default()).unwrap();
        let tm = taylor_traction(&f0, &mut b, 0.01).unwrap();
        let diff = crate::tensor_mech::norm3(&crate::tensor_mech::sub3(&fm.traction, &tm.traction));
        assert!(diff <= 1e-8 * crate::tensor_mech::norm3(&tm.traction));
    }

    #[test]
    fn two_phase_full_model_is_softer_than_taylor() {
        let cell = Arc::new(RucTemplate::reference_two_phase(6, 4).unwrap());
        let f0 = stretch(0.05);
        let mut a = Ruc::pristine(cell.clone());
        let mut b = Ruc::pristine(cell);
        let fm = full_model_solve(&f0, &mut a, 1e-6, &SolverOptions::default()).unwrap();
        let tm = taylor_traction(&f0, &mut b, 1e-6).unwrap();
        assert!(fm.converged);
        assert!(crate::tensor_mech::norm3(&fm.traction) <= crate::tensor_mech::norm3(&tm.traction));
    }
}
