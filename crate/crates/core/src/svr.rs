//! Epsilon-insensitive support vector regression with a Gaussian kernel,
//! trained by sequential minimal optimization and used as a sign classifier.
//!
//! The dual is solved in the doubled form over `a = [alpha; alpha*]` with
//! signs `s = [+1; -1]`:
//!
//! ```text
//! min  1/2 a'Qa + p'a,   Q_tu = s_t s_u K(x_t, x_u),   p = [eps - y; eps + y]
//! s.t. s'a = 0,  0 <= a <= C
//! ```
//!
//! which is the negated dual of the regression problem. Reported objectives
//! use the maximization sign.

use serde::{Deserialize, Serialize};

use crate::ruc_micro::Model;

pub type Point = [f64; 2];

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SvrError {
    #[error("invalid problem: {0}")]
    InvalidProblem(String),
    #[error("SMO stopped after {iterations} iterations with KKT violation {kkt_residual:.3e}")]
    NonConvergence {
        iterations: usize,
        kkt_residual: f64,
    },
}

/// Gaussian kernel `exp(-|a - b|^2 / sigma^2)`.
pub fn kernel(a: &Point, b: &Point, sigma: f64) -> f64 {
    let dx = a[0] - b[0];
    let dy = a[1] - b[1];
    (-(dx * dx + dy * dy) / (sigma * sigma)).exp()
}

/// Median pairwise distance, or 1 when it is zero or undefined.
pub fn median_heuristic(x: &[Point]) -> f64 {
    let mut d = Vec::with_capacity(x.len() * x.len().saturating_sub(1) / 2);
    for i in 0..x.len() {
        for j in i + 1..x.len() {
            d.push(((x[i][0] - x[j][0]).powi(2) + (x[i][1] - x[j][1]).powi(2)).sqrt());
        }
    }
    if d.is_empty() {
        return 1.0;
    }
    d.sort_by(f64::total_cmp);
    let m = d.len();
    let med = if m % 2 == 1 {
        d[m / 2]
    } else {
        0.5 * (d[m / 2 - 1] + d[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SvrProblem {
    pub x: Vec<Point>,
    pub y: Vec<f64>,
    pub c: f64,
    pub epsilon: f64,
    pub sigma: f64,
}

impl SvrProblem {
    pub fn validate(&self) -> Result<(), SvrError> {
        let bad = |m: &str| Err(SvrError::InvalidProblem(m.to_string()));
        if self.x.is_empty() {
            return bad("no samples");
        }
        if self.x.len() != self.y.len() {
            return bad("sample and target counts differ");
        }
        if self
            .x
            .iter()
            .flatten()
            .chain(&self.y)
            .any(|v| !v.is_finite())
        {
            return bad("non-finite sample");
        }
        if !(self.c > 0.0) || !(self.sigma > 0.0) || !(self.epsilon >= 0.0) {
            return bad("C and sigma must be positive and epsilon non-negative");
        }
        if !self.c.is_finite() || !self.sigma.is_finite() || !self.epsilon.is_finite() {
            return bad("non-finite hyperparameter");
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.x.len()
    }

    pub fn is_empty(&self) -> bool {
        self.x.is_empty()
    }

    pub fn gram(&self) -> Vec<f64> {
        let n = self.len();
        let mut k = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..=i {
                let v = kernel(&self.x[i], &self.x[j], self.sigma);
                k[i * n + j] = v;
                k[j * n + i] = v;
            }
        }
        k
    }

    /// Dual objective (maximization form) at coefficients `beta`.
    pub fn dual_objective(&self, beta: &[f64]) -> f64 {
        let n = self.len();
        let k = self.gram();
        let mut quad = 0.0;
        for i in 0..n {
            for j in 0..n {
                quad += beta[i] * beta[j] * k[i * n + j];
            }
        }
        let lin: f64 = beta
            .iter()
            .zip(&self.y)
            .map(|(b, y)| y * b - self.epsilon * b.abs())
            .sum();
        lin - 0.5 * quad
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainOptions {
    /// Maximal KKT violation at termination.
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for TrainOptions {
    fn default() -> Self {
        TrainOptions {
            tol: 1e-8,
            max_iterations: 1_000_000,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SupportVector {
    pub phi: f64,
    pub theta: f64,
    pub beta: f64,
}

impl SupportVector {
    fn point(&self) -> Point {
        [self.phi, self.theta]
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrainDiagnostics {
    pub dual_objective: f64,
    pub n_sv: usize,
    pub kkt_residual: f64,
    pub iterations: usize,
}

/// Trained decision function `f(x) = sum beta_i k(x_i, x) + b`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreFunction {
    pub sigma: f64,
    pub bias: f64,
    pub sv: Vec<SupportVector>,
    #[serde(default)]
    pub diagnostics: TrainDiagnostics,
}

impl ScoreFunction {
    /// Classifier answering `model` everywhere.
    pub fn constant(model: Model) -> Self {
        ScoreFunction {
            sigma: 1.0,
            bias: model.label(),
            sv: Vec::new(),
            diagnostics: TrainDiagnostics::default(),
        }
    }

    pub fn score(&self, x: &Point) -> f64 {
        self.sv
            .iter()
            .map(|s| s.beta * kernel(&s.point(), x, self.sigma))
            .sum::<f64>()
            + self.bias
    }

    /// Sign classification; an exact zero is FM.
    pub fn classify(&self, x: &Point) -> Model {
        if self.score(x) >= 0.0 {
            Model::Full
        } else {
            Model::Taylor
        }
    }

    /// Bound on `|grad f|`.
    pub fn lipschitz_bound(&self) -> f64 {
        let l1: f64 = self.sv.iter().map(|s| s.beta.abs()).sum();
        l1 * std::f64::consts::SQRT_2 / (self.sigma * 0.5f64.exp())
    }
}

/// Trains the score function.
pub fn train(problem: &SvrProblem, opts: &TrainOptions) -> Result<ScoreFunction, SvrError> {
    train_with_trace(problem, opts, None)
}

/// As [`train`], optionally recording the dual objective after every
/// SMO update.
pub fn train_with_trace(
    problem: &SvrProblem,
    opts: &TrainOptions,
    mut trace: Option<&mut Vec<f64>>,
) -> Result<ScoreFunction, SvrError> {
    problem.validate()?;
    let n = problem.len();
    let l = 2 * n;
    let c = problem.c;
    let k = problem.gram();
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let q = |t: usize, u: usize| sign(t) * sign(u) * k[(t % n) * n + u % n];

    let mut a = vec![0.0; l];
    let mut g: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                problem.epsilon - problem.y[t]
            } else {
                problem.epsilon + problem.y[t - n]
            }
        })
        .collect();
    let p = g.clone();
    let objective = |a: &[f64], g: &[f64]| -0.5 * (0..l).map(|t| a[t] * (g[t] + p[t])).sum::<f64>();
    const TAU: f64 = 1e-12;

    let mut iterations = 0;
    let kkt = loop {
        // i: most violating; j: largest second-order decrease paired with i
        let up = |t: usize| if sign(t) > 0.0 { a[t] < c } else { a[t] > 0.0 };
        let low = |t: usize| if sign(t) > 0.0 { a[t] > 0.0 } else { a[t] < c };
        let (mut gmax, mut i) = (f64::NEG_INFINITY, usize::MAX);
        for t in 0..l {
            let v = -sign(t) * g[t];
            if up(t) && v > gmax {
                gmax = v;
                i = t;
            }
        }
        let (mut gmin, mut j, mut best) = (f64::INFINITY, usize::MAX, f64::INFINITY);
        for t in 0..l {
            if !low(t) {
                continue;
            }
            let v = -sign(t) * g[t];
            gmin = gmin.min(v);
            let b = gmax - v;
            if i != usize::MAX && b > 0.0 {
                let quad = q(i, i) + q(t, t) - 2.0 * sign(i) * sign(t) * q(i, t);
                let gain = -b * b / if quad > 0.0 { quad } else { TAU };
                if gain < best {
                    best = gain;
                    j = t;
                }
            }
        }
        let violation = gmax - gmin;
        if i == usize::MAX || j == usize::MAX || violation <= opts.tol {
            break violation.max(0.0);
        }
        if iterations >= opts.max_iterations {
            return Err(SvrError::NonConvergence {
                iterations,
                kkt_residual: violation,
            });
        }
        iterations += 1;

        let (si, sj) = (sign(i), sign(j));
        let (old_ai, old_aj) = (a[i], a[j]);
        let quad = q(i, i) + q(j, j) - 2.0 * si * sj * q(i, j);
        let quad = if quad > 0.0 { quad } else { TAU };
        if si != sj {
            let delta = (-g[i] - g[j]) / quad;
            let diff = a[i] - a[j];
            a[i] += delta;
            a[j] += delta;
            if diff > 0.0 {
                if a[j] < 0.0 {
                    a[j] = 0.0;
                    a[i] = diff;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = -diff;
            }
            if diff > 0.0 {
                if a[i] > c {
                    a[i] = c;
                    a[j] = c - diff;
                }
            } else if a[j] > c {
                a[j] = c;
                a[i] = c + diff;
            }
        } else {
            let delta = (g[i] - g[j]) / quad;
            let sum = a[i] + a[j];
            a[i] -= delta;
            a[j] += delta;
            if sum > c {
                if a[i] > c {
                    a[i] = c;
                    a[j] = sum - c;
                }
            } else if a[j] < 0.0 {
                a[j] = 0.0;
                a[i] = sum;
            }
            if sum > c {
                if a[j] > c {
                    a[j] = c;
                    a[i] = sum - c;
                }
            } else if a[i] < 0.0 {
                a[i] = 0.0;
                a[j] = sum;
            }
        }
        let (di, dj) = (a[i] - old_ai, a[j] - old_aj);
        for (t, gt) in g.iter_mut().enumerate() {
            *gt += q(t, i) * di + q(t, j) * dj;
        }
        if let Some(tr) = trace.as_deref_mut() {
            tr.push(objective(&a, &g));
        }
    };

    // bias: average over free variables, else the feasible midpoint
    let (mut ub, mut lb) = (f64::INFINITY, f64::NEG_INFINITY);
    let (mut free, mut free_sum) = (0usize, 0.0);
    for t in 0..l {
        let yg = sign(t) * g[t];
        let at_upper = a[t] >= c;
        let at_lower = a[t] <= 0.0;
        if at_upper {
            if sign(t) < 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else if at_lower {
            if sign(t) > 0.0 {
                ub = ub.min(yg);
            } else {
                lb = lb.max(yg);
            }
        } else {
            free += 1;
            free_sum += yg;
        }
    }
    let rho = if free > 0 {
        free_sum / free as f64
    } else {
        0.5 * (ub + lb)
    };

    let sv: Vec<SupportVector> = (0..n)
        .filter_map(|i| {
            let beta = a[i] - a[i + n];
            (beta != 0.0).then(|| SupportVector {
                phi: problem.x[i][0],
                theta: problem.x[i][1],
                beta,
            })
        })
        .collect();
    let dual_objective = objective(&a, &g);
    Ok(ScoreFunction {
        sigma: problem.sigma,
        bias: -rho,
        diagnostics: TrainDiagnostics {
            dual_objective,
            n_sv: sv.len(),
            kkt_residual: kkt,
            iterations,
        },
        sv,
    })
}

/// Accelerated projected-gradient solution of the same dual, used as an
/// independent reference. Returns `beta`.
pub fn projected_gradient_reference(
    problem: &SvrProblem,
    iterations: usize,
) -> Result<Vec<f64>, SvrError> {
    problem.validate()?;
    let n = problem.len();
    let l = 2 * n;
    let k = problem.gram();
    let sign = |t: usize| if t < n { 1.0 } else { -1.0 };
    let p: Vec<f64> = (0..l)
        .map(|t| {
            if t < n {
                problem.epsilon - problem.y[t]
            } else {
                problem.epsilon + problem.y[t - n]
            }
        })
        .collect();
    // Gershgorin bound on the largest eigenvalue of Q
    let lip = (0..n)
        .map(|i| 2.0 * k[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<f64>())
        .fold(0.0, f64::max);
    let step = 1.0 / lip;
    let grad = |a: &[f64], out: &mut [f64]| {
        let beta: Vec<f64> = (0..n).map(|i| a[i] - a[i + n]).collect();
        for i in 0..n {
            let kb: f64 = (0..n).map(|j| k[i * n + j] * beta[j]).sum();
            out[i] = kb + p[i];
            out[i + n] = -kb + p[i + n];
        }
    };
    let project = |v: &mut [f64]| project_box_hyperplane(v, problem.c, &sign);

    let mut a = vec![0.0; l];
    let mut z = a.clone();
    let mut g = vec![0.0; l];
    let mut t_k = 1.0f64;
    for _ in 0..iterations {
        grad(&z, &mut g);
        let mut next: Vec<f64> = (0..l).map(|t| z[t] - step * g[t]).collect();
        project(&mut next);
        let t_next = 0.5 * (1.0 + (1.0 + 4.0 * t_k * t_k).sqrt());
        let w = (t_k - 1.0) / t_next;
        z = (0..l).map(|t| next[t] + w * (next[t] - a[t])).collect();
        let moved = (0..l).map(|t| (next[t] - a[t]).abs()).fold(0.0, f64::max);
        a = next;
        t_k = t_next;
        if moved < 1e-15 {
            break;
        }
    }
    Ok((0..n).map(|i| a[i] - a[i + n]).collect())
}

/// Euclidean projection onto `{0 <= a <= c, s'a = 0}` by bisection on the
/// multiplier.
fn project_box_hyperplane(v: &mut [f64], c: f64, sign: &dyn Fn(usize) -> f64) {
    let at = |nu: f64, t: usize, v: &[f64]| (v[t] - nu * sign(t)).clamp(0.0, c);
    let h = |nu: f64, v: &[f64]| (0..v.len()).map(|t| sign(t) * at(nu, t, v)).sum::<f64>();
    let span = v.iter().map(|x| x.abs()).fold(0.0, f64::max) + c;
    let (mut lo, mut hi) = (-span, span);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if h(mid, v) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let nu = 0.5 * (lo + hi);
    let out: Vec<f64> = (0..v.len()).map(|t| at(nu, t, v)).collect();
    v.copy_from_slice(&out);
}
