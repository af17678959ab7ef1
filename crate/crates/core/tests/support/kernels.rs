//! Measurements over the numerical kernels, each computed against an
//! oracle that does not share code with the implementation.

use nalgebra::{Matrix2, Matrix3, SymmetricEigen, Vector2, Vector3};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use btloc::estimation::{
    align_scan, gate, motion_jacobian, predict, propagate, update_gps, update_lidar, AlignConfig, AlignmentResult,
    FilterMode, FilterState, GateBound, LidarPoseNoise, ProcessNoise,
};
use btloc::pipeline::{FilterId, UpdateOutcome};
use btloc::types::{
    normalize_heading, Covariance3, FeatureKind, FixStatus, GpsFix, LidarFeatureObs, LidarScan, MapFeature, Pose2D,
    Timestamp,
};

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn as_vec(p: &Pose2D) -> Vector3<f64> {
    Vector3::new(p.x, p.y, p.heading)
}

/// Worst relative Frobenius error between the analytic motion Jacobian and
/// central finite differences of the propagation, over `n` random states.
pub fn jacobian_max_rel_error(n: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let mut worst = 0.0f64;
    for _ in 0..n {
        let pose = Pose2D::new(
            r.random_range(-500.0..500.0),
            r.random_range(-500.0..500.0),
            r.random_range(-3.1..3.1),
        );
        let v = r.random_range(-20.0..20.0);
        let w = r.random_range(-1.0..1.0);
        let dt = r.random_range(0.01..1.0);
        let h = 1e-6;
        let mut fd = Matrix3::zeros();
        for j in 0..3 {
            let mut e = Vector3::zeros();
            e[j] = h;
            let plus = as_vec(&pose) + e;
            let minus = as_vec(&pose) - e;
            let a = propagate(&Pose2D { x: plus.x, y: plus.y, heading: plus.z }, v, w, dt);
            let b = propagate(&Pose2D { x: minus.x, y: minus.y, heading: minus.z }, v, w, dt);
            let mut d = as_vec(&a) - as_vec(&b);
            d.z = normalize_heading(d.z).unwrap();
            fd.set_column(j, &(d / (2.0 * h)));
        }
        let analytic = motion_jacobian(&pose, v, dt);
        worst = worst.max((analytic - fd).norm() / analytic.norm());
    }
    worst
}

/// Map of well-separated features around the origin.
pub fn grid_map(seed: u64) -> Vec<MapFeature> {
    let mut r = rng(seed);
    let mut out = Vec::new();
    for i in 0..6 {
        for j in 0..6 {
            out.push(MapFeature {
                id: (i * 6 + j) as u64,
                kind: if usize::is_multiple_of(i + j, 2) { FeatureKind::Pole } else { FeatureKind::Corner },
                x: -30.0 + 12.0 * i as f64 + r.random_range(-1.0..1.0),
                y: -30.0 + 12.0 * j as f64 + r.random_range(-1.0..1.0),
            });
        }
    }
    out
}

/// Noiseless scan of every map feature as seen from `truth`.
pub fn exact_scan(truth: &Pose2D, map: &[MapFeature]) -> LidarScan {
    LidarScan {
        features: map
            .iter()
            .map(|m| {
                let p = truth.transform_to_local(m.position());
                LidarFeatureObs {
                    kind: m.kind,
                    x: p.x,
                    y: p.y,
                    sigma: 0.0,
                }
            })
            .collect(),
    }
}

/// Worst (position, heading) error of alignments from perturbed priors with
/// noiseless observations.
pub fn align_max_error(n: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let map = grid_map(seed ^ 0x5eed);
    let (mut dp, mut dh) = (0.0f64, 0.0f64);
    for _ in 0..n {
        let truth = Pose2D::new(r.random_range(-5.0..5.0), r.random_range(-5.0..5.0), r.random_range(-3.1..3.1));
        // small enough that the prior associates every feature correctly
        let prior = Pose2D::new(
            truth.x + r.random_range(-0.5..0.5),
            truth.y + r.random_range(-0.5..0.5),
            truth.heading + r.random_range(-0.01..0.01),
        );
        let res = align_scan(&exact_scan(&truth, &map), &prior, &map, &AlignConfig::default());
        assert!(res.converged && res.matched_count == map.len());
        dp = dp.max(res.pose.distance_to(&truth));
        dh = dh.max(normalize_heading(res.pose.heading - truth.heading).unwrap().abs());
    }
    (dp, dh)
}

fn min_eigen(m: &Matrix3<f64>) -> f64 {
    SymmetricEigen::new(*m).eigenvalues.min()
}

/// Runs `steps` random predict/update steps and returns the number of steps
/// after which the covariance was asymmetric or had a negative eigenvalue.
pub fn covariance_violations(steps: usize, seed: u64) -> usize {
    let mut r = rng(seed);
    let mut s = FilterState::initialized(
        Pose2D::origin(),
        Covariance3::diagonal(1.0, 1.0, 0.01),
        Timestamp::ZERO,
        FilterMode::DrOnly,
    );
    let q = ProcessNoise::default();
    let lidar = LidarPoseNoise::default();
    let bounds = [GateBound::TwoSigma, GateBound::ThreeSigma, GateBound::All];
    let mut bad = 0;
    for k in 0..steps {
        let at = Timestamp::from_millis(100 * k as u64);
        s = match r.random_range(0..10) {
            0..=6 => predict(&s, r.random_range(0.0..15.0), r.random_range(-0.5..0.5), 0.1, &q).unwrap(),
            7 | 8 => {
                let var = r.random_range(0.01..25.0);
                let c = r.random_range(-0.9..0.9) * var;
                let fix = GpsFix {
                    position: [s.pose.x + r.random_range(-8.0..8.0), s.pose.y + r.random_range(-8.0..8.0)],
                    status: FixStatus::Fix,
                    cov: [[var, c], [c, var]],
                };
                update_gps(&s, &fix, at, bounds[k % 3], FilterId::Main).0
            }
            _ => {
                let res = AlignmentResult {
                    pose: Pose2D::new(
                        s.pose.x + r.random_range(-2.0..2.0),
                        s.pose.y + r.random_range(-2.0..2.0),
                        s.pose.heading + r.random_range(-0.3..0.3),
                    ),
                    matched_count: 5,
                    rms_residual: 0.1,
                    converged: true,
                };
                update_lidar(&s, &res, at, bounds[k % 3], true, &lidar, FilterId::Main).0
            }
        };
        let m = s.cov.0;
        let scale = m.abs().max();
        let asym = (m - m.transpose()).abs().max();
        if asym > 1e-12 * scale || min_eigen(&m) < -1e-12 * scale {
            bad += 1;
        }
    }
    bad
}

/// Random symmetric positive-definite matrix with condition number ≤ ~1e4.
fn spd2(r: &mut ChaCha8Rng) -> Matrix2<f64> {
    let a = Matrix2::from_fn(|_, _| r.random_range(-3.0..3.0));
    a * a.transpose() + Matrix2::identity() * r.random_range(0.01..1.0)
}

fn spd3(r: &mut ChaCha8Rng) -> Matrix3<f64> {
    let a = Matrix3::from_fn(|_, _| r.random_range(-3.0..3.0));
    a * a.transpose() + Matrix3::identity() * r.random_range(0.01..1.0)
}

/// νᵀS⁻¹ν through the explicit 2×2 inverse.
pub fn quad_form2(nu: &Vector2<f64>, s: &Matrix2<f64>) -> f64 {
    let det = s[(0, 0)] * s[(1, 1)] - s[(0, 1)] * s[(1, 0)];
    let (a, b, c, d) = (s[(1, 1)] / det, -s[(0, 1)] / det, -s[(1, 0)] / det, s[(0, 0)] / det);
    nu.x * (a * nu.x + b * nu.y) + nu.y * (c * nu.x + d * nu.y)
}

/// νᵀS⁻¹ν through the cofactor (adjugate) inverse.
pub fn quad_form3(nu: &Vector3<f64>, s: &Matrix3<f64>) -> f64 {
    let m = |i: usize, j: usize| s[(i, j)];
    let cof = |i: usize, j: usize| {
        let r: Vec<usize> = (0..3).filter(|&k| k != i).collect();
        let c: Vec<usize> = (0..3).filter(|&k| k != j).collect();
        let minor = m(r[0], c[0]) * m(r[1], c[1]) - m(r[0], c[1]) * m(r[1], c[0]);
        if usize::is_multiple_of(i + j, 2) {
            minor
        } else {
            -minor
        }
    };
    let det = (0..3).map(|j| m(0, j) * cof(0, j)).sum::<f64>();
    let mut acc = 0.0;
    for i in 0..3 {
        for j in 0..3 {
            // inverse[i][j] = cof(j, i) / det
            acc += nu[i] * cof(j, i) / det * nu[j];
        }
    }
    acc
}

fn oracle_accepts(d2: f64, bound: GateBound) -> bool {
    match bound {
        GateBound::TwoSigma => d2 <= 4.0,
        GateBound::ThreeSigma => d2 <= 9.0,
        GateBound::All => true,
    }
}

/// Gate decisions disagreeing with the quadratic-form oracle over `n` random
/// 2-D and `n` random 3-D innovations. Cases within 1e-9 of a threshold are
/// counted as agreeing only if both sides match anyway, so none are skipped.
pub fn gate_disagreements(n: usize, seed: u64) -> (usize, f64) {
    let mut r = rng(seed);
    let mut bad = 0;
    let mut worst_rel = 0.0f64;
    let bounds = [GateBound::TwoSigma, GateBound::ThreeSigma, GateBound::All];
    for _ in 0..n {
        let s = spd2(&mut r);
        let nu = Vector2::new(r.random_range(-8.0..8.0), r.random_range(-8.0..8.0));
        let d2 = quad_form2(&nu, &s);
        for b in bounds {
            let g = gate(&nu, &s, b).unwrap();
            worst_rel = worst_rel.max((g.mahalanobis * g.mahalanobis - d2).abs() / d2.max(1e-12));
            if g.accept != oracle_accepts(d2, b) && (d2.sqrt() - b.threshold().unwrap_or(0.0)).abs() > 1e-9 {
                bad += 1;
            }
        }
        let s = spd3(&mut r);
        let nu = Vector3::from_fn(|_, _| r.random_range(-8.0..8.0));
        let d2 = quad_form3(&nu, &s);
        for b in bounds {
            let g = gate(&nu, &s, b).unwrap();
            worst_rel = worst_rel.max((g.mahalanobis * g.mahalanobis - d2).abs() / d2.max(1e-12));
            if g.accept != oracle_accepts(d2, b) && (d2.sqrt() - b.threshold().unwrap_or(0.0)).abs() > 1e-9 {
                bad += 1;
            }
        }
    }
    (bad, worst_rel)
}

/// Acceptance rates at 2σ and 3σ over `n` GPS updates of a filter whose
/// process and measurement noise match the simulated truth exactly.
pub fn gps_gating_rates(n: usize, seed: u64) -> (f64, f64) {
    let mut r = rng(seed);
    let q = ProcessNoise::default();
    let dt = 1.0;
    let qm = q.q(dt);
    let wpos = Normal::new(0.0, qm[(0, 0)].sqrt()).unwrap();
    let whead = Normal::new(0.0, qm[(2, 2)].sqrt()).unwrap();
    let sigma_gps = 1.5;
    let gnoise = Normal::new(0.0, sigma_gps).unwrap();
    let p0 = Covariance3::diagonal(1.0, 1.0, 0.01);
    let mut truth = Pose2D::origin();
    // start the estimate at a draw from its own prior
    let mut est = FilterState::initialized(
        Pose2D::new(
            Normal::new(0.0, 1.0).unwrap().sample(&mut r),
            Normal::new(0.0, 1.0).unwrap().sample(&mut r),
            Normal::new(0.0, 0.1).unwrap().sample(&mut r),
        ),
        p0,
        Timestamp::ZERO,
        FilterMode::GpsDr,
    );
    let (mut two, mut three) = (0usize, 0usize);
    for k in 1..=n {
        // stationary vehicle: the motion model is exact, only Q perturbs the truth
        truth = Pose2D::new(
            truth.x + wpos.sample(&mut r),
            truth.y + wpos.sample(&mut r),
            truth.heading + whead.sample(&mut r),
        );
        est = predict(&est, 0.0, 0.0, dt, &q).unwrap();
        let fix = GpsFix {
            position: [truth.x + gnoise.sample(&mut r), truth.y + gnoise.sample(&mut r)],
            status: FixStatus::Fix,
            cov: [[sigma_gps * sigma_gps, 0.0], [0.0, sigma_gps * sigma_gps]],
        };
        let at = Timestamp::from_micros(k as u64 * 1_000_000);
        let (_, s2) = update_gps(&est, &fix, at, GateBound::TwoSigma, FilterId::Main);
        let (_, s3) = update_gps(&est, &fix, at, GateBound::ThreeSigma, FilterId::Main);
        two += usize::from(s2.outcome == UpdateOutcome::Accepted);
        three += usize::from(s3.outcome == UpdateOutcome::Accepted);
        // the filter itself always fuses, so its prior stays consistent
        est = update_gps(&est, &fix, at, GateBound::All, FilterId::Main).0;
    }
    (two as f64 / n as f64, three as f64 / n as f64)
}
