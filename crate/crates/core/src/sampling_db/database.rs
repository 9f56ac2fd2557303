use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::bank::{BankOptions, SampleBank};
use super::{jump_to_spherical, make_training_samples, PhiRange, SKIP, STRIDE};
use crate::ruc_micro::{MicroError, Model, RucTemplate};
use crate::seed;
use crate::svr::{
    median_heuristic, train, Point, ScoreFunction, SvrError, SvrProblem, TrainOptions,
};
use crate::tensor_mech::Vec3;

#[derive(Debug, thiserror::Error)]
pub enum DbError {
    #[error("invalid database spec: {0}")]
    InvalidSpec(String),
    #[error("cell fingerprint mismatch: database built for {expected}, queried with {got}")]
    FingerprintMismatch { expected: String, got: String },
    #[error("corrupted database: {0}")]
    Corrupted(String),
    #[error("i/o: {0}")]
    Io(String),
    #[error(transparent)]
    Micro(#[from] MicroError),
    #[error("segment {segment}: {source}")]
    Svr { segment: usize, source: SvrError },
}

/// How each segment picks its kernel depth from the base depth.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SigmaSelection {
    /// Every segment uses the base depth.
    #[default]
    Fixed,
    /// Per segment, the base depth times `2^-k`, `k = 0..=3`, with the fewest
    /// 5-fold validation errors on the training samples; ties keep the wider kernel.
    CrossValidated,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SvrOptions {
    pub c: f64,
    pub epsilon: f64,
    /// Base kernel depth; `None` selects the median pairwise distance.
    pub sigma: Option<f64>,
    pub sigma_selection: SigmaSelection,
    pub tol: f64,
    pub max_iterations: usize,
}

impl Default for SvrOptions {
    fn default() -> Self {
        SvrOptions {
            c: 10.0,
            epsilon: 0.1,
            sigma: None,
            sigma_selection: SigmaSelection::Fixed,
            tol: 1e-6,
            max_iterations: 10_000_000,
        }
    }
}

const CV_FOLDS: usize = 5;
const CV_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

fn fit(problem: &SvrProblem, opts: &TrainOptions) -> Result<ScoreFunction, SvrError> {
    let first = problem.y[0];
    if problem.y.iter().all(|&y| y == first) {
        let m = if first > 0.0 {
            Model::Full
        } else {
            Model::Taylor
        };
        return Ok(ScoreFunction::constant(m));
    }
    train(problem, opts)
}

/// Validation misclassifications of `problem` over interleaved folds.
fn cv_errors(problem: &SvrProblem, opts: &TrainOptions) -> Result<usize, SvrError> {
    let mut wrong = 0;
    for fold in 0..CV_FOLDS {
        let (mut fit_set, mut held) = (problem.clone(), Vec::new());
        fit_set.x.clear();
        fit_set.y.clear();
        for (i, (x, y)) in problem.x.iter().zip(&problem.y).enumerate() {
            if i % CV_FOLDS == fold {
                held.push((*x, *y));
            } else {
                fit_set.x.push(*x);
                fit_set.y.push(*y);
            }
        }
        let f = fit(&fit_set, opts)?;
        wrong += held
            .iter()
            .filter(|(x, y)| f.classify(x).label() != *y)
            .count();
    }
    Ok(wrong)
}

fn select_sigma(problem: &SvrProblem, opts: &TrainOptions) -> Result<f64, SvrError> {
    if problem.len() < 2 * CV_FOLDS {
        return Ok(problem.sigma);
    }
    let mut best = (usize::MAX, problem.sigma);
    for scale in CV_SCALES {
        let candidate = SvrProblem {
            sigma: problem.sigma * scale,
            ..problem.clone()
        };
        let e = cv_errors(&candidate, opts)?;
        if e < best.0 {
            best = (e, candidate.sigma);
        }
    }
    Ok(best.1)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatabaseSpec {
    /// Largest jump magnitude covered (µm).
    pub lambda: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub gamma: f64,
    pub phi_range: PhiRange,
    pub svr: SvrOptions,
    /// Root seed; the scramble stream is derived from it.
    pub seed: u64,
}

impl DatabaseSpec {
    pub fn validate(&self) -> Result<(), DbError> {
        if !(self.lambda > 0.0) || !self.lambda.is_finite() {
            return Err(DbError::InvalidSpec("lambda must be positive".into()));
        }
        if self.n_s == 0 || self.n_t == 0 {
            return Err(DbError::InvalidSpec(
                "N_s and N_t must be at least 1".into(),
            ));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(DbError::InvalidSpec(format!(
                "gamma {} outside (0, 1)",
                self.gamma
            )));
        }
        Ok(())
    }

    pub fn training_directions(&self) -> Vec<(f64, f64)> {
        make_training_samples(
            self.n_t,
            self.phi_range,
            seed::derive(self.seed, seed::HALTON_TRAIN),
        )
    }

    /// `n` held-out directions from the separately scrambled test stream.
    pub fn test_directions(&self, n: usize) -> Vec<(f64, f64)> {
        make_training_samples(
            n,
            self.phi_range,
            seed::derive(self.seed, seed::HALTON_TEST),
        )
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DbMetadata {
    pub lambda: f64,
    pub n_s: usize,
    pub n_t: usize,
    pub gamma: f64,
    pub phi_range: PhiRange,
    pub c: f64,
    pub epsilon: f64,
    /// Base kernel depth; segments hold their own when cross-validated.
    pub sigma: f64,
    #[serde(default)]
    pub sigma_selection: SigmaSelection,
    pub seed: u64,
    pub scramble_seed: u64,
    pub halton_skip: u64,
    pub halton_stride: u64,
    pub halton_rule: String,
    pub fingerprint: String,
    /// `(FM, TM)` training label counts per segment.
    pub label_counts: Vec<(usize, usize)>,
    pub unknown_errors: usize,
    pub segments_sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Segment {
    pub k: usize,
    pub r_lo: f64,
    pub r_hi: f64,
    pub score_function: ScoreFunction,
}

/// Per-segment classifiers over load directions.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct OfflineDatabase {
    pub metadata: DbMetadata,
    pub segments: Vec<Segment>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Classification {
    pub model: Model,
    /// Segment used, `None` for zero or out-of-range jumps.
    pub segment: Option<usize>,
    pub out_of_range: bool,
}

fn segments_digest(segments: &[Segment]) -> String {
    let bytes = serde_json::to_vec(segments).expect("segments serialize");
    hex::encode(Sha256::digest(&bytes))
}

/// Fraction of test points whose predicted model differs from the truth.
pub fn classification_error(score: &ScoreFunction, tests: &[(Point, Model)]) -> f64 {
    if tests.is_empty() {
        return 0.0;
    }
    let wrong = tests
        .iter()
        .filter(|(x, truth)| score.classify(x) != *truth)
        .count();
    wrong as f64 / tests.len() as f64
}

impl OfflineDatabase {
    /// Trains one classifier per segment from the labeled bank.
    pub fn train(
        bank: &SampleBank,
        spec: &DatabaseSpec,
        fingerprint: &str,
    ) -> Result<Self, DbError> {
        spec.validate()?;
        if bank.n_s != spec.n_s || bank.lambda != spec.lambda {
            return Err(DbError::InvalidSpec(
                "sample bank does not match the segment layout".into(),
            ));
        }
        if bank.is_empty() {
            return Err(DbError::InvalidSpec("empty sample bank".into()));
        }
        let x: Vec<Point> = bank.directions.iter().map(|&(p, t)| [p, t]).collect();
        let sigma = spec.svr.sigma.unwrap_or_else(|| median_heuristic(&x));
        let opts = TrainOptions {
            tol: spec.svr.tol,
            max_iterations: spec.svr.max_iterations,
        };
        let mut segments = Vec::with_capacity(spec.n_s);
        let mut label_counts = Vec::with_capacity(spec.n_s);
        for k in 1..=spec.n_s {
            let labels = bank.labels(k, spec.gamma);
            let fm = labels.iter().filter(|m| **m == Model::Full).count();
            let tm = labels.len() - fm;
            label_counts.push((fm, tm));
            let score_function = if fm == 0 {
                ScoreFunction::constant(Model::Taylor)
            } else if tm == 0 {
                ScoreFunction::constant(Model::Full)
            } else {
                let mut problem = SvrProblem {
                    x: x.clone(),
                    y: labels.iter().map(|m| m.label()).collect(),
                    c: spec.svr.c,
                    epsilon: spec.svr.epsilon,
                    sigma,
                };
                let svr_err = |source| DbError::Svr { segment: k, source };
                if spec.svr.sigma_selection == SigmaSelection::CrossValidated {
                    problem.sigma = select_sigma(&problem, &opts).map_err(svr_err)?;
                }
                train(&problem, &opts).map_err(svr_err)?
            };
            segments.push(Segment {
                k,
                r_lo: bank.radius(k - 1),
                r_hi: bank.radius(k),
                score_function,
            });
        }
        let metadata = DbMetadata {
            lambda: spec.lambda,
            n_s: spec.n_s,
            n_t: bank.len(),
            gamma: spec.gamma,
            phi_range: spec.phi_range,
            c: spec.svr.c,
            epsilon: spec.svr.epsilon,
            sigma,
            sigma_selection: spec.svr.sigma_selection,
            seed: spec.seed,
            scramble_seed: seed::derive(spec.seed, seed::HALTON_TRAIN),
            halton_skip: SKIP,
            halton_stride: STRIDE,
            halton_rule: format!("position {SKIP} + {STRIDE} i"),
            fingerprint: fingerprint.to_string(),
            label_counts,
            unknown_errors: bank.unknown_count(),
            segments_sha256: segments_digest(&segments),
        };
        Ok(OfflineDatabase { metadata, segments })
    }

    /// Per-segment misclassification rate on an independently labeled bank
    /// sharing this database's segment layout.
    pub fn segment_errors(&self, tests: &SampleBank) -> Result<Vec<f64>, DbError> {
        let m = &self.metadata;
        if tests.n_s != m.n_s || tests.lambda != m.lambda {
            return Err(DbError::InvalidSpec(
                "test bank does not match the segment layout".into(),
            ));
        }
        Ok(self
            .segments
            .iter()
            .map(|seg| {
                let labeled: Vec<(Point, Model)> = tests
                    .samples(seg.k, m.gamma)
                    .iter()
                    .map(|s| ([m.phi_range.fold(s.phi), s.theta], s.label))
                    .collect();
                classification_error(&seg.score_function, &labeled)
            })
            .collect())
    }

    /// 1-based segment containing `r`, `None` for `r = 0` or `r > λ`.
    pub fn segment_of(&self, r: f64) -> Option<usize> {
        let m = &self.metadata;
        if !(r > 0.0) || r > m.lambda {
            return None;
        }
        let edge = |k: usize| k as f64 * m.lambda / m.n_s as f64;
        let mut k = ((r * m.n_s as f64 / m.lambda).ceil() as usize).clamp(1, m.n_s);
        if k > 1 && r <= edge(k - 1) {
            k -= 1;
        }
        if k < m.n_s && r > edge(k) {
            k += 1;
        }
        Some(k)
    }

    /// Model for a cell-frame jump. Zero jumps are TM; jumps beyond `λ` are
    /// FM and flagged.
    pub fn classify(&self, jump: &Vec3, fingerprint: &str) -> Result<Classification, DbError> {
        if fingerprint != self.metadata.fingerprint {
            return Err(DbError::FingerprintMismatch {
                expected: self.metadata.fingerprint.clone(),
                got: fingerprint.to_string(),
            });
        }
        let (r, phi, theta) = jump_to_spherical(jump);
        if r == 0.0 {
            return Ok(Classification {
                model: Model::Taylor,
                segment: None,
                out_of_range: false,
            });
        }
        let Some(k) = self.segment_of(r) else {
            return Ok(Classification {
                model: Model::Full,
                segment: None,
                out_of_range: true,
            });
        };
        let x = [self.metadata.phi_range.fold(phi), theta];
        let model = self.segments[k - 1].score_function.classify(&x);
        Ok(Classification {
            model,
            segment: Some(k),
            out_of_range: false,
        })
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("database serializes")
    }

    /// Parses and checks the segment digest.
    pub fn from_json(s: &str) -> Result<Self, DbError> {
        let db: OfflineDatabase =
            serde_json::from_str(s).map_err(|e| DbError::Corrupted(e.to_string()))?;
        let digest = segments_digest(&db.segments);
        if digest != db.metadata.segments_sha256 {
            return Err(DbError::Corrupted("segment digest mismatch".into()));
        }
        if db.segments.len() != db.metadata.n_s
            || db.segments.iter().enumerate().any(|(i, s)| s.k != i + 1)
        {
            return Err(DbError::Corrupted("segment table incomplete".into()));
        }
        Ok(db)
    }

    pub fn write(&self, path: &Path) -> Result<(), DbError> {
        std::fs::write(path, self.to_json())
            .map_err(|e| DbError::Io(format!("{}: {e}", path.display())))
    }

    pub fn read(path: &Path) -> Result<Self, DbError> {
        let s = std::fs::read_to_string(path)
            .map_err(|e| DbError::Io(format!("{}: {e}", path.display())))?;
        Self::from_json(&s)
    }
}

/// Samples directions, runs the ground-truth solves and trains the
/// database. Returns the bank alongside for auditing.
pub fn build_database(
    template: &Arc<RucTemplate>,
    spec: &DatabaseSpec,
    opts: &BankOptions,
) -> Result<(OfflineDatabase, SampleBank), DbError> {
    spec.validate()?;
    let bank = SampleBank::compute(
        template,
        spec.lambda,
        spec.n_s,
        spec.training_directions(),
        opts,
    )?;
    let db = OfflineDatabase::train(&bank, spec, &template.fingerprint())?;
    log::info!(
        "database built: {} segments, label counts {:?}, {} unknown errors",
        spec.n_s,
        db.metadata.label_counts,
        db.metadata.unknown_errors
    );
    Ok((db, bank))
}
