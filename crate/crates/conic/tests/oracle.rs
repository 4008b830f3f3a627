//! Random conic programs built from a known primal-dual optimal pair.

use nalgebra::{DMatrix, DVector};
use nfswipt_conic::cones::{mat_to_svec, min_eig};
use nfswipt_conic::{kkt_residuals, solve, Cone, ConicProblem, Status};
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn gauss(rng: &mut ChaCha8Rng) -> f64 {
    // Sum of uniforms is close enough to normal for test data.
    (0..6).map(|_| rng.gen::<f64>()).sum::<f64>() - 3.0
}

fn orthonormal(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| gauss(rng));
    m.qr().q()
}

/// Complementary (s, z) pair on one cone block.
fn complementary_pair(rng: &mut ChaCha8Rng, cone: &Cone) -> (Vec<f64>, Vec<f64>) {
    match *cone {
        Cone::NonNeg(n) => {
            let mut s = vec![0.0; n];
            let mut z = vec![0.0; n];
            for i in 0..n {
                if rng.gen_bool(0.5) {
                    s[i] = 0.5 + rng.gen::<f64>();
                } else {
                    z[i] = 0.5 + rng.gen::<f64>();
                }
            }
            (s, z)
        }
        Cone::Soc(n) => {
            let mode = rng.gen_range(0..3);
            let mut u: Vec<f64> = (0..n - 1).map(|_| gauss(rng)).collect();
            let nu = u.iter().map(|v| v * v).sum::<f64>().sqrt().max(1e-3);
            u.iter_mut().for_each(|v| *v /= nu);
            let a = 0.5 + rng.gen::<f64>();
            let b = 0.5 + rng.gen::<f64>();
            let mut s = vec![0.0; n];
            let mut z = vec![0.0; n];
            match mode {
                0 => {
                    s[0] = a * 2.0;
                    for i in 1..n {
                        s[i] = a * u[i - 1];
                    }
                }
                1 => {
                    z[0] = b * 2.0;
                    for i in 1..n {
                        z[i] = b * u[i - 1];
                    }
                }
                _ => {
                    s[0] = a;
                    z[0] = b;
                    for i in 1..n {
                        s[i] = a * u[i - 1];
                        z[i] = -b * u[i - 1];
                    }
                }
            }
            (s, z)
        }
        Cone::Psd(n) => {
            let q = orthonormal(rng, n);
            let r = rng.gen_range(0..=n);
            let mut ds = DMatrix::zeros(n, n);
            let mut dz = DMatrix::zeros(n, n);
            for i in 0..n {
                if i < r {
                    ds[(i, i)] = 0.5 + rng.gen::<f64>();
                } else {
                    dz[(i, i)] = 0.5 + rng.gen::<f64>();
                }
            }
            let sm = &q * ds * q.transpose();
            let zm = &q * dz * q.transpose();
            let d = cone.dim();
            let mut s = vec![0.0; d];
            let mut z = vec![0.0; d];
            mat_to_svec(&sm, &mut s);
            mat_to_svec(&zm, &mut z);
            (s, z)
        }
    }
}

struct Instance {
    problem: ConicProblem,
    optimum: f64,
}

fn random_instance(seed: u64, family: usize) -> Instance {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let cones: Vec<Cone> = match family {
        0 => vec![Cone::NonNeg(rng.gen_range(2..7))],
        1 => vec![Cone::NonNeg(rng.gen_range(1..3)), Cone::Soc(rng.gen_range(2..5)), Cone::Soc(3)],
        _ => vec![Cone::NonNeg(1), Cone::Psd(rng.gen_range(2..4))],
    };
    let m: usize = cones.iter().map(|k| k.dim()).sum();
    let n = rng.gen_range(1..=m.min(5));
    let p = rng.gen_range(0..n.min(2) + 1).min(n - 1);
    let g = DMatrix::from_fn(m, n, |_, _| gauss(&mut rng));
    let a = DMatrix::from_fn(p, n, |_, _| gauss(&mut rng));
    let x = DVector::from_fn(n, |_, _| gauss(&mut rng));
    let y = DVector::from_fn(p, |_, _| gauss(&mut rng));
    let mut s = Vec::new();
    let mut z = Vec::new();
    for k in &cones {
        let (sk, zk) = complementary_pair(&mut rng, k);
        s.extend(sk);
        z.extend(zk);
    }
    let s = DVector::from_vec(s);
    let z = DVector::from_vec(z);
    let h = &g * &x + &s;
    let b = &a * &x;
    let c = -(g.transpose() * &z) - a.transpose() * &y;
    let optimum = c.dot(&x);
    Instance {
        problem: ConicProblem { c, a, b, g, h, cones },
        optimum,
    }
}

#[test]
fn random_programs_match_constructed_optimum() {
    let mut worst_obj: f64 = 0.0;
    for seed in 0..200u64 {
        let inst = random_instance(seed, (seed % 3) as usize);
        let sol = solve(&inst.problem).unwrap();
        assert_eq!(sol.status, Status::Optimal, "seed {seed}");
        let err = (sol.primal_obj - inst.optimum).abs() / inst.optimum.abs().max(1.0);
        worst_obj = worst_obj.max(err);
        assert!(err <= 1e-6, "seed {seed}: objective error {err:e}");
        let r = kkt_residuals(&inst.problem, &sol.x, &sol.y, &sol.z);
        assert!(r.primal <= 1e-8 && r.dual <= 1e-8 && r.gap <= 1e-8, "seed {seed}: {r:?}");
        assert!(r.cone_violation <= 1e-8, "seed {seed}: {r:?}");
    }
    assert!(worst_obj <= 1e-6);
}

#[test]
fn scalar_lower_bound() {
    // minimize x s.t. x >= 1
    let p = ConicProblem {
        c: DVector::from_vec(vec![1.0]),
        a: DMatrix::zeros(0, 1),
        b: DVector::zeros(0),
        g: DMatrix::from_vec(1, 1, vec![-1.0]),
        h: DVector::from_vec(vec![-1.0]),
        cones: vec![Cone::NonNeg(1)],
    };
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.primal_obj - 1.0).abs() < 1e-8);
}

#[test]
fn contradictory_bounds_are_infeasible() {
    // maximize x s.t. x <= 0 and x >= 1
    let p = ConicProblem {
        c: DVector::from_vec(vec![-1.0]),
        a: DMatrix::zeros(0, 1),
        b: DVector::zeros(0),
        g: DMatrix::from_vec(2, 1, vec![1.0, -1.0]),
        h: DVector::from_vec(vec![0.0, -1.0]),
        cones: vec![Cone::NonNeg(2)],
    };
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Infeasible);
}

#[test]
fn unbounded_ray_is_detected() {
    // minimize -x s.t. x >= 0
    let p = ConicProblem {
        c: DVector::from_vec(vec![-1.0]),
        a: DMatrix::zeros(0, 1),
        b: DVector::zeros(0),
        g: DMatrix::from_vec(1, 1, vec![-1.0]),
        h: DVector::from_vec(vec![0.0]),
        cones: vec![Cone::NonNeg(1)],
    };
    assert_eq!(solve(&p).unwrap().status, Status::Unbounded);
}

#[test]
fn trace_minimisation_with_fixed_corner() {
    // minimize Tr(X) s.t. X_11 = 1, X PSD (2x2), in standard form over svec(X).
    let c = DVector::from_vec(vec![1.0, 0.0, 1.0]);
    let a = DMatrix::from_row_slice(1, 3, &[1.0, 0.0, 0.0]);
    let b = DVector::from_vec(vec![1.0]);
    let p = ConicProblem::standard_form(c, a, b, vec![Cone::Psd(2)]);
    let sol = solve(&p).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.primal_obj - 1.0).abs() < 1e-7);
    assert!(min_eig(&Cone::Psd(2), sol.x.as_slice()) > -1e-9);
}

#[test]
fn weak_duality_holds_along_the_path() {
    let inst = random_instance(7, 2);
    let settings = nfswipt_conic::Settings { record_log: true, ..Default::default() };
    let sol = nfswipt_conic::solve_with(&inst.problem, &settings).unwrap();
    assert!(!sol.log.is_empty());
    for entry in &sol.log {
        // p - d = gap + terms driven by the infeasibility of the iterate.
        assert!(entry.primal_obj - entry.dual_obj >= -(entry.infeasibility_slack + 1e-9 * entry.primal_obj.abs().max(1.0)));
    }
    assert!(sol.primal_obj >= sol.dual_obj - 1e-7);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(40))]
    #[test]
    fn optimal_status_certifies_small_residuals(seed in 1000u64..5000, family in 0usize..3) {
        let inst = random_instance(seed, family);
        let sol = solve(&inst.problem).unwrap();
        prop_assert_eq!(sol.status, Status::Optimal);
        prop_assert!(sol.primal_res <= 1e-8 && sol.dual_res <= 1e-8 && sol.gap_res <= 1e-8);
        prop_assert!(sol.primal_obj >= sol.dual_obj - 1e-7 * sol.primal_obj.abs().max(1.0));
    }

    #[test]
    fn hermitian_lift_preserves_objective(seed in 0u64..500) {
        use nalgebra::Complex;
        use nfswipt_conic::{lift_hermitian, unlift_hermitian};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.gen_range(1..5);
        let b = DMatrix::from_fn(n, n, |_, _| Complex::new(gauss(&mut rng), gauss(&mut rng)));
        let x = &b * b.adjoint();
        let c = DMatrix::from_fn(n, n, |_, _| Complex::new(gauss(&mut rng), gauss(&mut rng)));
        let c = &c + c.adjoint();
        let obj = (&c * &x).trace().re;
        let lifted = (lift_hermitian(&c) * lift_hermitian(&x)).trace() / 2.0;
        prop_assert!((obj - lifted).abs() <= 1e-8 * obj.abs().max(1.0));
        prop_assert!((unlift_hermitian(&lift_hermitian(&x)) - &x).norm() <= 1e-12 * x.norm().max(1.0));
        let mut v = vec![0.0; Cone::Psd(2 * n).dim()];
        mat_to_svec(&lift_hermitian(&x), &mut v);
        prop_assert!(min_eig(&Cone::Psd(2 * n), &v) >= -1e-9 * x.norm().max(1.0));
    }
}
