use cohesim_core::svr::{kernel, median_heuristic, train, Point, SvrProblem, TrainOptions};
use nalgebra::DMatrix;
use proptest::prelude::*;
use serde::Deserialize;

#[derive(Deserialize)]
struct Reference {
    problems: Vec<RefProblem>,
}

#[derive(Deserialize)]
struct RefProblem {
    x: Vec<Point>,
    y: Vec<f64>,
    c: f64,
    epsilon: f64,
    sigma: f64,
    beta: Vec<f64>,
    dual_objective: f64,
    bias: f64,
}

fn reference() -> Reference {
    let path = concat!(env!("CARGO_MANIFEST_DIR"), "/tests/data/svr_reference.json");
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

fn ref_score(p: &RefProblem, z: &Point) -> f64 {
    p.x.iter()
        .zip(&p.beta)
        .map(|(x, b)| b * kernel(x, z, p.sigma))
        .sum::<f64>()
        + p.bias
}

#[test]
fn smo_matches_interior_point_fixture() {
    let opts = TrainOptions::default();
    for (i, rp) in reference().problems.iter().enumerate() {
        let problem = SvrProblem {
            x: rp.x.clone(),
            y: rp.y.clone(),
            c: rp.c,
            epsilon: rp.epsilon,
            sigma: rp.sigma,
        };
        let f = train(&problem, &opts).unwrap();
        let gap = (f.diagnostics.dual_objective - rp.dual_objective).abs();
        assert!(gap <= 1e-6, "problem {i}: objective gap {gap:e}");
        assert!((problem.dual_objective(&rp.beta) - rp.dual_objective).abs() < 1e-9);
        for a in 0..50 {
            for b in 0..50 {
                let z = [
                    std::f64::consts::FRAC_PI_4 * a as f64 / 49.0,
                    std::f64::consts::FRAC_PI_2 * b as f64 / 49.0,
                ];
                let (s, r) = (f.score(&z), ref_score(rp, &z));
                if s.abs() > 1e-6 && r.abs() > 1e-6 {
                    assert_eq!(s.signum(), r.signum(), "problem {i} at {z:?}: {s} vs {r}");
                }
            }
        }
    }
}

fn point() -> impl Strategy<Value = Point> {
    (
        0.0..std::f64::consts::FRAC_PI_4,
        0.0..std::f64::consts::FRAC_PI_2,
    )
        .prop_map(|(a, b)| [a, b])
}

fn labelled(max: usize) -> impl Strategy<Value = Vec<(Point, bool)>> {
    prop::collection::vec((point(), any::<bool>()), 2..max)
}

fn problem_of(data: &[(Point, bool)]) -> SvrProblem {
    let x: Vec<Point> = data.iter().map(|d| d.0).collect();
    let sigma = median_heuristic(&x);
    SvrProblem {
        y: data.iter().map(|d| if d.1 { 1.0 } else { -1.0 }).collect(),
        x,
        c: 10.0,
        epsilon: 0.1,
        sigma,
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn gram_is_positive_semidefinite(data in labelled(30), sigma in 0.05f64..3.0) {
        let mut p = problem_of(&data);
        p.sigma = sigma;
        let n = p.len();
        let g = DMatrix::from_row_slice(n, n, &p.gram());
        let eig = g.symmetric_eigen().eigenvalues;
        prop_assert!(eig.iter().all(|&l| l > -1e-10 * n as f64), "{eig:?}");
    }

    #[test]
    fn dual_solution_beats_feasible_perturbations(data in labelled(16), seed in any::<u64>()) {
        let p = problem_of(&data);
        let f = train(&p, &TrainOptions::default()).unwrap();
        let best = f.diagnostics.dual_objective;
        // Pairwise transfers preserve the equality constraint.
        let beta: Vec<f64> = p.x.iter().map(|x| {
            f.sv.iter().find(|s| [s.phi, s.theta] == *x).map_or(0.0, |s| s.beta)
        }).collect();
        let n = p.len();
        let mut state = seed | 1;
        for _ in 0..20 {
            state ^= state << 13; state ^= state >> 7; state ^= state << 17;
            let (i, j) = ((state % n as u64) as usize, ((state >> 20) % n as u64) as usize);
            if i == j { continue; }
            let d = ((state >> 40) as f64 / (1u64 << 24) as f64 - 0.5) * 0.2;
            let mut b = beta.clone();
            b[i] += d;
            b[j] -= d;
            if b.iter().all(|v| v.abs() <= p.c) {
                prop_assert!(p.dual_objective(&b) <= best + 1e-7);
            }
        }
    }

    #[test]
    fn sample_order_does_not_change_the_score(data in labelled(14), probe in point()) {
        let p = problem_of(&data);
        let mut rev = data.clone();
        rev.reverse();
        let q = problem_of(&rev);
        let opts = TrainOptions { tol: 1e-10, ..TrainOptions::default() };
        let (a, b) = (train(&p, &opts).unwrap(), train(&q, &opts).unwrap());
        prop_assert!((a.diagnostics.dual_objective - b.diagnostics.dual_objective).abs() < 1e-8);
        prop_assert!((a.score(&probe) - b.score(&probe)).abs() < 1e-5);
    }

    #[test]
    fn score_respects_lipschitz_bound(data in labelled(20), u in point(), v in point()) {
        let f = train(&problem_of(&data), &TrainOptions::default()).unwrap();
        let dist = ((u[0] - v[0]).powi(2) + (u[1] - v[1]).powi(2)).sqrt();
        prop_assert!((f.score(&u) - f.score(&v)).abs() <= f.lipschitz_bound() * dist + 1e-12);
    }
}

#[test]
fn duplicated_samples_keep_the_decision() {
    let base: Vec<(Point, bool)> = (0..10)
        .map(|i| {
            (
                [0.07 * i as f64, 0.5 + 0.1 * (i % 3) as f64],
                i % 2 == 0 || i > 6,
            )
        })
        .collect();
    let mut doubled = base.clone();
    doubled.extend(base.iter().copied());
    let p = problem_of(&base);
    let mut q = problem_of(&doubled);
    q.sigma = p.sigma;
    q.c = p.c / 2.0;
    let opts = TrainOptions {
        tol: 1e-10,
        ..TrainOptions::default()
    };
    let (a, b) = (train(&p, &opts).unwrap(), train(&q, &opts).unwrap());
    // Each weight splits evenly across its two copies.
    assert!((b.diagnostics.dual_objective - a.diagnostics.dual_objective).abs() < 1e-6);
    for i in 0..20 {
        let z = [0.04 * i as f64, 0.05 * i as f64];
        assert!(
            (a.score(&z) - b.score(&z)).abs() < 1e-5,
            "{} vs {}",
            a.score(&z),
            b.score(&z)
        );
    }
}
