use dense_sdp::{min_eig, AffineExpr, Problem, SdpError, SolverOptions, Status};
use nalgebra::DMatrix;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn c1(v: f64) -> AffineExpr {
    AffineExpr::constant(DMatrix::from_element(1, 1, v))
}

fn opts() -> SolverOptions {
    SolverOptions::default()
}

/// Cyclic Jacobi eigenvalue iteration, used as an eigen-solver path that is
/// independent of nalgebra's tridiagonal QR.
fn jacobi_eigenvalues(m: &DMatrix<f64>) -> Vec<f64> {
    let n = m.nrows();
    let mut a = m.clone();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[(i, j)] * a[(i, j)])
            .sum();
        if off < 1e-26 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[(p, q)].abs() < 1e-300 {
                    continue;
                }
                let theta = (a[(q, q)] - a[(p, p)]) / (2.0 * a[(p, q)]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[(k, p)];
                    let akq = a[(k, q)];
                    a[(k, p)] = c * akp - s * akq;
                    a[(k, q)] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[(p, k)];
                    let aqk = a[(q, k)];
                    a[(p, k)] = c * apk - s * aqk;
                    a[(q, k)] = s * apk + c * aqk;
                }
            }
        }
    }
    (0..n).map(|i| a[(i, i)]).collect()
}

fn random_symmetric(rng: &mut ChaCha8Rng, n: usize) -> DMatrix<f64> {
    let m = DMatrix::from_fn(n, n, |_, _| rng.gen_range(-1.0..1.0));
    0.5 * (&m + m.transpose())
}

#[test]
fn scalar_lower_bound() {
    // minimize x s.t. [x - 1] ⪰ 0
    let mut p = Problem::new();
    let x = p.scalar("x");
    p.add_lmi_with_margin("x>=1", p.var(x) - c1(1.0), 0.0).unwrap();
    p.minimize_trace(x);
    let sol = p.solve(&opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.value(x)[(0, 0)] - 1.0).abs() < 1e-6, "{}", sol.value(x));
}

#[test]
fn schur_complement_instance() {
    // minimize w s.t. [[w, 3], [3, 1]] ⪰ 0  →  w = 9
    let mut p = Problem::new();
    let w = p.scalar("w");
    let lmi = AffineExpr::symmetric_blocks(vec![
        vec![Some(p.var(w)), Some(c1(3.0))],
        vec![None, Some(c1(1.0))],
    ]);
    p.add_lmi_with_margin("schur", lmi, 0.0).unwrap();
    p.minimize_trace(w);
    let sol = p.solve(&opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    assert!((sol.objective - 9.0).abs() < 1e-6, "{}", sol.objective);
}

#[test]
fn contradictory_bounds_are_infeasible() {
    let mut p = Problem::new();
    let x = p.scalar("x");
    p.add_lmi("x>=1", p.var(x) - c1(1.0)).unwrap();
    p.add_lmi("-x>=0", -p.var(x)).unwrap();
    p.minimize_trace(x);
    let sol = p.solve(&opts()).unwrap();
    assert_eq!(sol.status, Status::Infeasible);
    let cert = sol.certificate.expect("certificate");
    // Y ⪰ 0 with ⟨F_1, Y⟩ = y1 - y2 ≈ 0 and ⟨F_0 - εI, Y⟩ < 0
    assert!(cert.iter().all(|b| b[(0, 0)] >= 0.0));
    assert!((cert[0][(0, 0)] - cert[1][(0, 0)]).abs() < 1e-6);
}

#[test]
fn unbounded_objective_reported() {
    // minimize -x s.t. x ⪰ 0
    let mut p = Problem::new();
    let x = p.scalar("x");
    p.add_lmi("x>=0", p.var(x)).unwrap();
    p.minimize(x, DMatrix::from_element(1, 1, -1.0));
    let sol = p.solve(&opts()).unwrap();
    assert_eq!(sol.status, Status::Unbounded);
}

#[test]
fn variable_absent_from_constraints_with_cost_is_unbounded() {
    let mut p = Problem::new();
    let x = p.scalar("x");
    let y = p.scalar("y");
    p.add_lmi("x>=0", p.var(x)).unwrap();
    p.minimize_trace(y);
    assert_eq!(p.solve(&opts()).unwrap().status, Status::Unbounded);
}

#[test]
fn min_eig_matches_jacobi_oracle() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..20 {
        let m = random_symmetric(&mut rng, 10);
        let oracle = jacobi_eigenvalues(&m).into_iter().fold(f64::INFINITY, f64::min);
        let got = min_eig(&m).unwrap();
        assert!((got - oracle).abs() <= 1e-10 * oracle.abs().max(1.0), "{got} vs {oracle}");
    }
}

#[test]
fn min_eig_rejects_nonsymmetric() {
    let m = DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]);
    assert!(matches!(min_eig(&m), Err(SdpError::NonSymmetricInput(_))));
}

/// `t · I_n` for a scalar variable `t`.
fn scalar_identity(p: &Problem, t: dense_sdp::VarId, n: usize) -> AffineExpr {
    (0..n).fold(AffineExpr::zeros(n, n), |acc, i| {
        let e = DMatrix::from_fn(n, 1, |r, _| if r == i { 1.0 } else { 0.0 });
        acc + p.var(t).premul(&e).postmul(&e.transpose())
    })
}

/// maximize λ s.t. C - λI ⪰ 0  →  λ_min(C)
fn lambda_min_problem(c: &DMatrix<f64>) -> f64 {
    let n = c.nrows();
    let mut p = Problem::new();
    let lam = p.scalar("lambda");
    let lmi = AffineExpr::constant(c.clone()) - scalar_identity(&p, lam, n);
    p.add_lmi_with_margin("C-λI", lmi, 0.0).unwrap();
    p.minimize(lam, DMatrix::from_element(1, 1, -1.0));
    let sol = p.solve(&opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    sol.value(lam)[(0, 0)]
}

/// minimize t s.t. [[tI, A], [Aᵀ, tI]] ⪰ 0  →  σ_max(A)
fn spectral_norm_problem(a: &DMatrix<f64>) -> f64 {
    let (r, c) = a.shape();
    let mut p = Problem::new();
    let t = p.scalar("t");
    let lmi = AffineExpr::symmetric_blocks(vec![
        vec![Some(scalar_identity(&p, t, r)), Some(AffineExpr::constant(a.clone()))],
        vec![None, Some(scalar_identity(&p, t, c))],
    ]);
    p.add_lmi_with_margin("norm", lmi, 0.0).unwrap();
    p.minimize_trace(t);
    let sol = p.solve(&opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    sol.objective
}

/// minimize c1 x1 + c2 x2 s.t. [[x1, a], [a, x2]] ⪰ 0 (and x ≥ lower)
fn two_by_two_problem(c: (f64, f64), a: f64, lower: Option<f64>) -> f64 {
    let mut p = Problem::new();
    let x1 = p.scalar("x1");
    let x2 = p.scalar("x2");
    let lmi = AffineExpr::symmetric_blocks(vec![vec![Some(p.var(x1)), Some(c1(a))], vec![None, Some(p.var(x2))]]);
    p.add_lmi_with_margin("psd", lmi, 0.0).unwrap();
    if let Some(lb) = lower {
        p.add_lmi_with_margin("x1>=lb", p.var(x1) - c1(lb), 0.0).unwrap();
    }
    p.minimize(x1, DMatrix::from_element(1, 1, c.0));
    p.minimize(x2, DMatrix::from_element(1, 1, c.1));
    let sol = p.solve(&opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    sol.objective
}

/// Grid oracle for the 2×2 problem: on the boundary x2 = a²/x1.
fn two_by_two_grid(c: (f64, f64), a: f64, lower: Option<f64>) -> f64 {
    let lb = lower.unwrap_or(0.0).max(1e-9);
    let f = |x1: f64| c.0 * x1 + c.1 * a * a / x1;
    let (mut lo, mut hi) = (lb.ln(), (lb.max(1.0) * 1e4).ln());
    let mut best = (lo, f(lo.exp()));
    for _ in 0..6 {
        let n = 2000;
        for i in 0..=n {
            let t = lo + (hi - lo) * i as f64 / n as f64;
            let v = f(t.exp());
            if v < best.1 {
                best = (t, v);
            }
        }
        let w = (hi - lo) / 100.0;
        lo = (best.0 - w).max(lb.ln());
        hi = best.0 + w;
    }
    best.1
}

#[test]
fn randomized_small_sdps_match_oracles() {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    for case in 0..21 {
        let (got, want) = match case % 3 {
            0 => {
                let n = rng.gen_range(2..6);
                let c = random_symmetric(&mut rng, n) * 3.0;
                let want = jacobi_eigenvalues(&c).into_iter().fold(f64::INFINITY, f64::min);
                (lambda_min_problem(&c), want)
            }
            1 => {
                let (r, cc) = (rng.gen_range(1..4), rng.gen_range(1..4));
                let a = DMatrix::from_fn(r, cc, |_, _| rng.gen_range(-2.0..2.0));
                (spectral_norm_problem(&a), a.svd(false, false).singular_values.max())
            }
            _ => {
                let c = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
                let a = rng.gen_range(0.2..3.0);
                (two_by_two_problem(c, a, None), two_by_two_grid(c, a, None))
            }
        };
        let rel = (got - want).abs() / want.abs().max(1e-3);
        assert!(rel < 1e-4, "case {case}: {got} vs oracle {want}");
    }
}

#[test]
fn adding_a_constraint_never_lowers_the_optimum() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for _ in 0..10 {
        let c = (rng.gen_range(0.5..3.0), rng.gen_range(0.5..3.0));
        let a = rng.gen_range(0.2..3.0);
        let lb = rng.gen_range(0.0..4.0);
        let base = two_by_two_problem(c, a, None);
        let tighter = two_by_two_problem(c, a, Some(lb));
        assert!(tighter >= base - 1e-6 * base.abs().max(1.0));
        let oracle = two_by_two_grid(c, a, Some(lb));
        assert!((tighter - oracle).abs() / oracle < 1e-4);
    }
}

#[test]
fn symmetric_variables_come_back_symmetric() {
    // minimize tr(P) s.t. P - A Aᵀ ⪰ 0
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = DMatrix::from_fn(4, 3, |_, _| rng.gen_range(-1.0..1.0));
    let mut p = Problem::new();
    let pv = p.symmetric("P", 4);
    p.add_lmi("P>=AA'", p.var(pv) - AffineExpr::constant(&a * a.transpose())).unwrap();
    p.minimize_trace(pv);
    let sol = p.solve(&opts()).unwrap();
    assert_eq!(sol.status, Status::Optimal);
    let v = sol.value(pv);
    assert!((v - v.transpose()).amax() <= 1e-12);
    assert!((sol.objective - (&a * a.transpose()).trace()).abs() < 1e-6);
    assert!(sol.diagnostics.min_slack >= -1e-7);
}

#[test]
fn solves_are_deterministic() {
    let run = || two_by_two_problem((1.3, 0.7), 1.1, Some(0.4));
    assert_eq!(run().to_bits(), run().to_bits());
}

#[test]
fn dump_lists_variables_and_blocks() {
    let mut p = Problem::new();
    let w = p.scalar("w");
    let pv = p.symmetric("P", 2);
    p.add_lmi("c0", p.var(pv) - AffineExpr::identity(2)).unwrap();
    p.add_lmi("c1", p.var(w)).unwrap();
    p.minimize_trace(w);
    let text = p.dump(1e-8).unwrap();
    assert!(text.starts_with("sdp-dump 1\nscalars 4\n"));
    assert!(text.contains("var P 2 2 sym 1 3"));
    assert!(text.contains("constraint c0 2 1e-8"));
    assert_eq!(text.matches("\nend").count(), 2);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn feasibility_status_is_scale_invariant(lb in 0.1f64..3.0, ub in -1.0f64..3.0, gamma in 0.01f64..100.0) {
        // lb ≤ x ≤ ub, scaled by γ (and ε with it)
        let build = |g: f64| {
            let mut p = Problem::new();
            let x = p.scalar("x");
            p.add_lmi_with_margin("lo", (p.var(x) - c1(lb)).scale(g), 1e-8 * g).unwrap();
            p.add_lmi_with_margin("hi", (c1(ub) - p.var(x)).scale(g), 1e-8 * g).unwrap();
            p.minimize_trace(x);
            p.solve(&opts()).unwrap().status
        };
        let expected = if ub > lb + 1e-3 { Status::Optimal } else if ub < lb - 1e-3 { Status::Infeasible } else { return Ok(()) };
        prop_assert_eq!(build(1.0), expected);
        prop_assert_eq!(build(gamma), expected);
    }
}
