use serde::{Deserialize, Serialize};

use super::tensor::Tensor3;
use super::{DamageState, DomainError};

/// Isotropic Neo-Hookean phase with split damage parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    #[serde(rename = "E")]
    pub e: f64,
    pub mu: f64,
    pub kappa: f64,
    pub nu: f64,
    #[serde(rename = "Y_in")]
    pub y_in: f64,
    pub p1: f64,
    pub p2: f64,
    /// Damage viscosity (1/s).
    pub mu_visc: f64,
    pub damageable: bool,
}

impl MaterialParams {
    /// Stiff nylon particle; damage never evolves.
    pub fn nylon_particle() -> Self {
        MaterialParams {
            e: 2.40e3,
            mu: 8.96e2,
            kappa: 2.50e3,
            nu: 0.34,
            y_in: 0.0,
            p1: 1.0,
            p2: 1.0,
            mu_visc: 0.0,
            damageable: false,
        }
    }

    /// Polyurethane adhesive matrix.
    pub fn polyurethane_matrix() -> Self {
        MaterialParams {
            e: 8.00e2,
            mu: 2.99e2,
            kappa: 8.33e2,
            nu: 0.34,
            y_in: 0.15,
            p1: 8.0,
            p2: 2.5,
            mu_visc: 100.0,
            damageable: true,
        }
    }

    pub fn validate(&self) -> Result<(), DomainError> {
        let fields = [
            self.e,
            self.mu,
            self.kappa,
            self.nu,
            self.y_in,
            self.p1,
            self.p2,
            self.mu_visc,
        ];
        if !fields.iter().all(|v| v.is_finite()) {
            return Err(DomainError::NonFinite);
        }
        if self.e <= 0.0 || self.mu <= 0.0 || self.kappa <= 0.0 {
            return Err(DomainError::InvalidMaterial(
                "E, mu and kappa must be positive",
            ));
        }
        if !(self.nu > 0.0 && self.nu < 0.5) {
            return Err(DomainError::InvalidMaterial("nu must lie in (0, 0.5)"));
        }
        if self.y_in < 0.0 || self.mu_visc < 0.0 {
            return Err(DomainError::InvalidMaterial(
                "Y_in and mu_visc must be nonnegative",
            ));
        }
        if self.p1 <= 0.0 || self.p2 <= 0.0 {
            return Err(DomainError::InvalidMaterial("p1 and p2 must be positive"));
        }
        if self.damageable && self.y_in == 0.0 {
            return Err(DomainError::InvalidMaterial(
                "damageable phase needs Y_in > 0",
            ));
        }
        let kappa_from_e = self.e / (3.0 * (1.0 - 2.0 * self.nu));
        if (self.kappa - kappa_from_e).abs() / self.kappa > 0.01 {
            log::warn!(
                "bulk modulus {} deviates from E/(3(1-2nu)) = {:.3} by more than 1%",
                self.kappa,
                kappa_from_e
            );
        }
        Ok(())
    }
}

/// Deviatoric Neo-Hookean energy `(mu/2)(tr Ĉ - 3)`.
pub fn dev_energy(c_hat: &Tensor3, mu: f64) -> Result<f64, DomainError> {
    c_hat.check_spd()?;
    Ok(0.5 * mu * (c_hat.trace() - 3.0))
}

/// Volumetric energy `(kappa/2)(exp(J-1) - ln J - 1)`.
pub fn vol_energy(j: f64, kappa: f64) -> Result<f64, DomainError> {
    if !j.is_finite() {
        return Err(DomainError::NonFinite);
    }
    if j <= 0.0 {
        return Err(DomainError::NonPositiveJacobian(j));
    }
    Ok(vol_energy_unchecked(j, kappa))
}

#[inline]
pub(crate) fn vol_energy_unchecked(j: f64, kappa: f64) -> f64 {
    0.5 * kappa * ((j - 1.0).exp() - j.ln() - 1.0)
}

/// Which damage branch an energy release rate drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Branch {
    Deviatoric,
    Volumetric,
}

/// `Y = alpha Ŵ + beta U` with `alpha = 1` and `beta = 1` only for `J >= 1`.
pub fn energy_release(w_hat: f64, u: f64, j: f64, branch: Branch) -> f64 {
    let (alpha, beta) = match branch {
        Branch::Deviatoric | Branch::Volumetric => (1.0, if j >= 1.0 { 1.0 } else { 0.0 }),
    };
    alpha * w_hat + beta * u
}

/// Undamaged energies and stress branches at a given `C`.
#[derive(Clone, Copy, Debug)]
pub(crate) struct Response {
    pub j: f64,
    pub w_hat: f64,
    pub u: f64,
    pub s_dev: Tensor3,
    pub s_vol: Tensor3,
}

impl Response {
    pub fn stress(&self, d: &DamageState) -> Tensor3 {
        self.s_dev.scale(1.0 - d.omega_d) + self.s_vol.scale(1.0 - d.omega_v)
    }

    pub fn energy(&self, d: &DamageState) -> f64 {
        (1.0 - d.omega_d) * self.w_hat + (1.0 - d.omega_v) * self.u
    }

    pub fn release_rates(&self) -> (f64, f64) {
        (
            energy_release(self.w_hat, self.u, self.j, Branch::Deviatoric),
            energy_release(self.w_hat, self.u, self.j, Branch::Volumetric),
        )
    }
}

/// Fourth-order material tangent `2 dS/dC`, flattened as `[I][J][K][L]`.
pub type Tangent4 = [f64; 81];

#[inline]
pub(crate) fn idx4(i: usize, j: usize, k: usize, l: usize) -> usize {
    ((i * 3 + j) * 3 + k) * 3 + l
}

/// Evaluates energies and stress branches; `None` when `det C <= 0`.
pub(crate) fn response(c: &Tensor3, p: &MaterialParams) -> Option<(Response, Tensor3)> {
    let det_c = c.det();
    if !(det_c > 0.0) {
        return None;
    }
    let c_inv = c.inverse()?;
    let j = det_c.sqrt();
    let i1 = c.trace();
    let j23 = j.powf(-2.0 / 3.0);
    let w_hat = 0.5 * p.mu * (j23 * i1 - 3.0);
    let u = vol_energy_unchecked(j, p.kappa);
    let du = 0.5 * p.kappa * ((j - 1.0).exp() - 1.0 / j);
    let s_dev = (Tensor3::IDENTITY - c_inv.scale(i1 / 3.0)).scale(p.mu * j23);
    let s_vol = c_inv.scale(du * j);
    Some((
        Response {
            j,
            w_hat,
            u,
            s_dev,
            s_vol,
        },
        c_inv,
    ))
}

/// Stress plus tangent at fixed damage.
pub(crate) fn response_with_tangent(
    c: &Tensor3,
    p: &MaterialParams,
    d: &DamageState,
) -> Option<(Response, Tangent4)> {
    let (r, ci) = response(c, p)?;
    let j = r.j;
    let i1 = c.trace();
    let j23 = j.powf(-2.0 / 3.0);
    let ex = (j - 1.0).exp();
    let du = 0.5 * p.kappa * (ex - 1.0 / j);
    let ddu = 0.5 * p.kappa * (ex + 1.0 / (j * j));
    let g = du * j;
    let dg = ddu * j + du;

    let wd = (1.0 - d.omega_d) * p.mu * j23;
    let wv = 1.0 - d.omega_v;
    let ci = &ci.0;
    let mut t = [0.0; 81];
    for a in 0..3 {
        for b in 0..3 {
            let delta_ab = if a == b { 1.0 } else { 0.0 };
            for k in 0..3 {
                for l in 0..3 {
                    let delta_kl = if k == l { 1.0 } else { 0.0 };
                    let sym = 0.5 * (ci[a][k] * ci[b][l] + ci[a][l] * ci[b][k]);
                    let dev = -2.0 / 3.0 * (delta_ab * ci[k][l] + ci[a][b] * delta_kl)
                        + 2.0 / 9.0 * i1 * ci[a][b] * ci[k][l]
                        + 2.0 / 3.0 * i1 * sym;
                    let vol = j * dg * ci[a][b] * ci[k][l] - 2.0 * g * sym;
                    t[idx4(a, b, k, l)] = wd * dev + wv * vol;
                }
            }
        }
    }
    Some((r, t))
}

/// Damaged second Piola-Kirchhoff stress
/// `S = (1-ω^d) 2∂Ŵ/∂C + (1-ω^v) U'(J) J C⁻¹`.
pub fn pk2_stress(
    c: &Tensor3,
    damage: &DamageState,
    params: &MaterialParams,
) -> Result<Tensor3, DomainError> {
    c.check_spd()?;
    let (r, _) = response(c, params).ok_or(DomainError::Singular)?;
    Ok(r.stress(damage))
}

/// Damaged strain energy density `(1-ω^d) Ŵ + (1-ω^v) U`.
pub fn strain_energy(
    c: &Tensor3,
    damage: &DamageState,
    params: &MaterialParams,
) -> Result<f64, DomainError> {
    c.check_spd()?;
    let (r, _) = response(c, params).ok_or(DomainError::Singular)?;
    Ok(r.energy(damage))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn dev_energy_identity_is_zero() {
        assert_eq!(dev_energy(&Tensor3::IDENTITY, 299.0).unwrap(), 0.0);
    }

    #[test]
    fn dev_energy_direct_substitution() {
        let c = Tensor3::from_diag([4.0, 0.5, 0.5]);
        assert!((dev_energy(&c, 2.0).unwrap() - 2.0).abs() < 1e-15);
    }

    #[test]
    fn dev_energy_rejects_indefinite() {
        let c = Tensor3::from_diag([1.0, -1.0, -1.0]);
        assert_eq!(dev_energy(&c, 1.0), Err(DomainError::NotPositiveDefinite));
        let mut c = Tensor3::IDENTITY;
        c.0[0][1] = 0.3;
        assert_eq!(dev_energy(&c, 1.0), Err(DomainError::NotSymmetric));
    }

    #[test]
    fn vol_energy_values() {
        assert_eq!(vol_energy(1.0, 833.0).unwrap(), 0.0);
        // exp(1) - ln 2 - 1
        assert!((vol_energy(2.0, 2.0).unwrap() - 1.025_134_647_899_099_7).abs() < 1e-12);
        let a = vol_energy(0.1, 1.0).unwrap();
        let b = vol_energy(0.01, 1.0).unwrap();
        assert!(b > a && a > 0.0);
        assert!(vol_energy(0.0, 1.0).is_err());
        assert!(vol_energy(-1.0, 1.0).is_err());
    }

    #[test]
    fn energy_release_branches() {
        for b in [Branch::Deviatoric, Branch::Volumetric] {
            assert_eq!(energy_release(1.0, 2.0, 1.1, b), 3.0);
            assert_eq!(energy_release(1.0, 2.0, 0.9, b), 1.0);
            assert_eq!(energy_release(0.0, 0.0, 1.0, b), 0.0);
        }
    }

    #[test]
    fn stress_free_reference() {
        let m = MaterialParams::polyurethane_matrix();
        let s = pk2_stress(&Tensor3::IDENTITY, &DamageState::default(), &m).unwrap();
        assert!(s.max_abs() < 1e-12);
    }

    #[test]
    fn table_values_validate() {
        MaterialParams::nylon_particle().validate().unwrap();
        MaterialParams::polyurethane_matrix().validate().unwrap();
        let mut bad = MaterialParams::polyurethane_matrix();
        bad.nu = 0.5;
        assert!(bad.validate().is_err());
    }

    #[test]
    fn tangent_matches_stress_differences() {
        let m = MaterialParams::polyurethane_matrix();
        let d = DamageState {
            omega_d: 0.3,
            omega_v: 0.1,
            ..Default::default()
        };
        let f = Tensor3([[1.05, 0.1, 0.0], [0.02, 0.97, 0.04], [0.0, -0.03, 1.08]]);
        let c = f.right_cauchy_green();
        let (_, t) = response_with_tangent(&c, &m, &d).unwrap();
        let h = 1e-6;
        for k in 0..3 {
            for l in k..3 {
                let mut cp = c;
                let mut cm = c;
                cp.0[k][l] += h;
                cm.0[k][l] -= h;
                if k != l {
                    cp.0[l][k] += h;
                    cm.0[l][k] -= h;
                }
                let sp = response(&cp, &m).unwrap().0.stress(&d);
                let sm = response(&cm, &m).unwrap().0.stress(&d);
                for a in 0..3 {
                    for b in 0..3 {
                        // 2 dS/dC contracted with the symmetric perturbation
                        let fd = (sp.0[a][b] - sm.0[a][b]) / (2.0 * h) * 2.0;
                        let an = if k == l {
                            t[idx4(a, b, k, l)]
                        } else {
                            t[idx4(a, b, k, l)] + t[idx4(a, b, l, k)]
                        };
                        assert!(
                            (fd - an).abs() < 1e-4 * (1.0 + an.abs()),
                            "{a}{b}{k}{l}: {fd} vs {an}"
                        );
                    }
                }
            }
        }
    }
}
