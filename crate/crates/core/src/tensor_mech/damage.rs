use serde::{Deserialize, Serialize};

use super::MaterialParams;

/// Largest damage value a branch may reach.
pub const OMEGA_MAX: f64 = 1.0 - 1e-9;

/// Deviatoric/volumetric damage pair with history variables.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct DamageState {
    pub omega_d: f64,
    pub omega_v: f64,
    /// Running maximum of the deviatoric release rate once it exceeded `Y_in`.
    pub kappa_hist_d: f64,
    pub kappa_hist_v: f64,
}

impl DamageState {
    pub fn omega_total(&self) -> f64 {
        (self.omega_d * self.omega_d + self.omega_v * self.omega_v).sqrt()
            / std::f64::consts::SQRT_2
    }

    pub fn is_valid(&self) -> bool {
        (0.0..1.0).contains(&self.omega_d) && (0.0..1.0).contains(&self.omega_v)
    }

    /// Bit pattern used to group voxels with identical states.
    pub(crate) fn key(&self) -> [u64; 4] {
        [
            self.omega_d.to_bits(),
            self.omega_v.to_bits(),
            self.kappa_hist_d.to_bits(),
            self.kappa_hist_v.to_bits(),
        ]
    }
}

/// Saturation damage `g(Y) = 1 - exp(-p1 <(Y - Y_in)/Y_in>^p2)`, clamped below one.
pub fn saturation(y: f64, params: &MaterialParams) -> f64 {
    if !params.damageable || y <= params.y_in {
        return 0.0;
    }
    let x = (y - params.y_in) / params.y_in;
    let g = 1.0 - (-params.p1 * x.powf(params.p2)).exp();
    g.clamp(0.0, OMEGA_MAX)
}

/// Backward Euler step of `dω/dt = mu_visc <g(Y) - ω>₊` for one branch.
fn advance_branch(omega: f64, kappa: f64, y: f64, dt: f64, params: &MaterialParams) -> (f64, f64) {
    if y <= params.y_in {
        return (omega, kappa);
    }
    let kappa = kappa.max(y);
    let g = saturation(y, params);
    if g <= omega {
        return (omega, kappa);
    }
    let a = params.mu_visc * dt;
    let next = ((omega + a * g) / (1.0 + a)).clamp(omega, OMEGA_MAX);
    (next, kappa)
}

/// Advances both damage branches over `dt` under release rates `y_d`, `y_v`.
pub fn damage_update(
    state: DamageState,
    y_d: f64,
    y_v: f64,
    dt: f64,
    params: &MaterialParams,
) -> DamageState {
    debug_assert!(dt > 0.0, "damage_update requires dt > 0");
    if !params.damageable {
        return state;
    }
    let (omega_d, kappa_hist_d) =
        advance_branch(state.omega_d, state.kappa_hist_d, y_d, dt, params);
    let (omega_v, kappa_hist_v) =
        advance_branch(state.omega_v, state.kappa_hist_v, y_v, dt, params);
    DamageState {
        omega_d,
        omega_v,
        kappa_hist_d,
        kappa_hist_v,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn matrix() -> MaterialParams {
        MaterialParams::polyurethane_matrix()
    }

    #[test]
    fn below_threshold_is_unchanged() {
        let s = DamageState::default();
        assert_eq!(damage_update(s, 0.0, 0.0, 0.01, &matrix()), s);
        assert_eq!(damage_update(s, 0.149, 0.1, 0.01, &matrix()), s);
    }

    #[test]
    fn non_damageable_is_identity() {
        let s = DamageState::default();
        assert_eq!(
            damage_update(s, 100.0, 100.0, 1.0, &MaterialParams::nylon_particle()),
            s
        );
    }

    #[test]
    fn backward_euler_converges_to_exact_relaxation() {
        // Constant Y: ω(t) = g - (g - ω0) exp(-mu_visc t).
        let p = matrix();
        let y = 0.2;
        let g = saturation(y, &p);
        let t_end = 0.02;
        let n = 200_000;
        let dt = t_end / n as f64;
        let mut s = DamageState::default();
        for _ in 0..n {
            s = damage_update(s, y, y, dt, &p);
        }
        let exact = g - g * (-p.mu_visc * t_end).exp();
        assert!(
            (s.omega_d - exact).abs() < 1e-5,
            "{} vs {}",
            s.omega_d,
            exact
        );
        assert_eq!(s.omega_d, s.omega_v);
    }

    #[test]
    fn saturates_monotonically_below_one() {
        let p = matrix();
        let mut s = DamageState::default();
        let mut last = 0.0;
        for _ in 0..500 {
            s = damage_update(s, 5.0, 5.0, 0.05, &p);
            assert!(s.omega_d >= last);
            assert!(s.omega_d < 1.0);
            last = s.omega_d;
        }
        assert!((s.omega_d - saturation(5.0, &p)).abs() < 1e-9);
    }

    #[test]
    fn increment_is_linear_in_small_dt() {
        let p = matrix();
        let s0 = DamageState::default();
        let d1 = damage_update(s0, 0.3, 0.3, 1e-6, &p).omega_d;
        let d2 = damage_update(s0, 0.3, 0.3, 2e-6, &p).omega_d;
        assert!(d1 > 0.0);
        assert!((d2 / d1 - 2.0).abs() < 1e-3);
    }

    #[test]
    fn unloading_does_not_heal() {
        let p = matrix();
        let s = damage_update(DamageState::default(), 0.5, 0.5, 0.01, &p);
        let s2 = damage_update(s, 0.0, 0.0, 0.01, &p);
        assert_eq!(s, s2);
        assert_eq!(s.kappa_hist_d, 0.5);
    }
}
