use std::collections::BTreeMap;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::database::DbError;
use super::{spherical_to_jump, LoadSample};
use crate::ruc_micro::{
    full_model_solve, macro_f_from_jump, taylor_traction, traction_model_error, Model,
    ModelingError, Ruc, RucTemplate, SolverOptions,
};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BankOptions {
    pub solver: SolverOptions,
    /// Bound on `|d jump / dt| / l_c` (1/s), fixing the step time.
    pub rate_cap: f64,
    /// Worker threads; `None` uses the global pool.
    pub threads: Option<usize>,
}

impl Default for BankOptions {
    fn default() -> Self {
        BankOptions {
            solver: SolverOptions::default(),
            rate_cap: 1.0,
            threads: None,
        }
    }
}

/// FM-vs-TM errors for a set of directions at every segment radius.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampleBank {
    pub lambda: f64,
    pub n_s: usize,
    pub directions: Vec<(f64, f64)>,
    /// `errors[i][k - 1]` for direction `i`, segment `k`.
    pub errors: Vec<Vec<ModelingError>>,
}

/// Segment radii `r_k = k λ / N_s`.
pub fn segment_radii(lambda: f64, n_s: usize) -> Vec<f64> {
    (1..=n_s).map(|k| k as f64 * lambda / n_s as f64).collect()
}

/// Proportional increments used to reach radius `r`.
pub fn increments(r: f64, l_c: f64) -> usize {
    ((r / (0.01 * l_c)).ceil() as usize).max(3)
}

/// Loads pristine FM and TM cells proportionally along `(φ, θ)` and returns
/// the traction error at each radius.
///
/// Radii whose increment length coincides share one loading path, since the
/// shorter path is then a prefix of the longer one.
pub fn evaluate_direction(
    template: &Arc<RucTemplate>,
    phi: f64,
    theta: f64,
    radii: &[f64],
    opts: &BankOptions,
) -> Vec<ModelingError> {
    let l_c = template.l_c;
    let mut groups: BTreeMap<u64, Vec<(usize, usize)>> = BTreeMap::new();
    for (k, &r) in radii.iter().enumerate() {
        let n = increments(r, l_c);
        groups
            .entry((r / n as f64).to_bits())
            .or_default()
            .push((k, n));
    }
    let mut out = vec![ModelingError::Unknown; radii.len()];
    let normal = [0.0, 0.0, 1.0];
    for (h_bits, members) in groups {
        let h = f64::from_bits(h_bits);
        let n_max = members.iter().map(|m| m.1).max().unwrap_or(0);
        let dt = h / (l_c * opts.rate_cap);
        let mut fm = Ruc::pristine(template.clone());
        let mut tm = Ruc::pristine(template.clone());
        for j in 1..=n_max {
            let jump = spherical_to_jump(j as f64 * h, phi, theta);
            let step = macro_f_from_jump(&jump, &normal, l_c).and_then(|f| {
                let a = full_model_solve(&f, &mut fm, dt, &opts.solver)?;
                let b = taylor_traction(&f, &mut tm, dt)?;
                Ok((a.traction, b.traction))
            });
            match step {
                Ok((t_fm, t_tm)) => {
                    for &(k, n) in &members {
                        if n == j {
                            out[k] = traction_model_error(&t_fm, &t_tm);
                        }
                    }
                }
                Err(e) => {
                    log::warn!(
                        "sample (phi {phi:.4}, theta {theta:.4}) failed at r = {:.4}: {e}",
                        j as f64 * h
                    );
                    break;
                }
            }
        }
    }
    out
}

impl SampleBank {
    pub fn compute(
        template: &Arc<RucTemplate>,
        lambda: f64,
        n_s: usize,
        directions: Vec<(f64, f64)>,
        opts: &BankOptions,
    ) -> Result<Self, DbError> {
        if !(lambda > 0.0) || n_s == 0 {
            return Err(DbError::InvalidSpec(
                "lambda must be positive and N_s at least 1".into(),
            ));
        }
        let radii = segment_radii(lambda, n_s);
        let run = || -> Vec<Vec<ModelingError>> {
            directions
                .par_iter()
                .map(|&(p, t)| evaluate_direction(template, p, t, &radii, opts))
                .collect()
        };
        let errors = match opts.threads {
            Some(n) => rayon::ThreadPoolBuilder::new()
                .num_threads(n.max(1))
                .build()
                .map_err(|e| DbError::InvalidSpec(e.to_string()))?
                .install(run),
            None => run(),
        };
        Ok(SampleBank {
            lambda,
            n_s,
            directions,
            errors,
        })
    }

    pub fn len(&self) -> usize {
        self.directions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.directions.is_empty()
    }

    /// The first `n` directions.
    pub fn prefix(&self, n: usize) -> SampleBank {
        let n = n.min(self.len());
        SampleBank {
            lambda: self.lambda,
            n_s: self.n_s,
            directions: self.directions[..n].to_vec(),
            errors: self.errors[..n].to_vec(),
        }
    }

    pub fn radius(&self, k: usize) -> f64 {
        k as f64 * self.lambda / self.n_s as f64
    }

    /// Labeled samples of segment `k` (1-based) at tolerance `gamma`.
    pub fn samples(&self, k: usize, gamma: f64) -> Vec<LoadSample> {
        let r = self.radius(k);
        self.directions
            .iter()
            .zip(&self.errors)
            .map(|(&(p, t), e)| LoadSample::new(r, p, t, e[k - 1], gamma))
            .collect()
    }

    pub fn labels(&self, k: usize, gamma: f64) -> Vec<Model> {
        self.errors.iter().map(|e| e[k - 1].label(gamma)).collect()
    }

    /// Samples whose error could not be measured.
    pub fn unknown_count(&self) -> usize {
        self.errors
            .iter()
            .flatten()
            .filter(|e| matches!(e, ModelingError::Unknown))
            .count()
    }

    /// Fraction of TM labels per segment.
    pub fn tm_fractions(&self, gamma: f64) -> Vec<f64> {
        (1..=self.n_s)
            .map(|k| {
                let tm = self
                    .labels(k, gamma)
                    .iter()
                    .filter(|m| **m == Model::Taylor)
                    .count();
                tm as f64 / self.len().max(1) as f64
            })
            .collect()
    }

    /// Audit CSV: one row per (segment, direction).
    pub fn write_audit_csv<W: std::io::Write>(&self, gamma: f64, w: W) -> Result<(), DbError> {
        let mut out = csv::Writer::from_writer(w);
        let io = |e: csv::Error| DbError::Io(e.to_string());
        out.write_record(["segment", "phi", "theta", "r", "label", "error"])
            .map_err(io)?;
        for k in 1..=self.n_s {
            for s in self.samples(k, gamma) {
                let err = s
                    .error
                    .map(|e| e.to_string())
                    .unwrap_or_else(|| "unknown".into());
                out.write_record([
                    k.to_string(),
                    s.phi.to_string(),
                    s.theta.to_string(),
                    s.r.to_string(),
                    s.label.to_string(),
                    err,
                ])
                .map_err(io)?;
            }
        }
        out.flush().map_err(|e| DbError::Io(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor_mech::MaterialParams;

    #[test]
    fn radii_and_increments() {
        let r = segment_radii(10.0, 10);
        assert_eq!(r[0], 1.0);
        assert_eq!(r[9], 10.0);
        assert_eq!(increments(1.0, 100.0), 3);
        assert_eq!(increments(10.0, 100.0), 10);
        assert_eq!(increments(4.5, 100.0), 5);
    }

    #[test]
    fn homogeneous_cell_has_zero_error() {
        let cell = Arc::new(
            RucTemplate::homogeneous(4, 100.0, 100.0, MaterialParams::polyurethane_matrix())
                .unwrap(),
        );
        let e = evaluate_direction(&cell, 0.4, 0.7, &[0.5, 1.0, 4.0], &BankOptions::default());
        for v in e {
            assert!(v.value().unwrap() < 1e-8, "{v:?}");
        }
    }
}
