use koopman_h2::edmd::LinearPredictor;
use koopman_h2::linalg::spectral_radius;
use koopman_h2::polytope::{build_polytope, convex_combine, Block, Vertex};
use koopman_h2::synthesis::*;
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn m(r: usize, c: usize, v: &[f64]) -> DMatrix<f64> {
    DMatrix::from_row_slice(r, c, v)
}

fn scalar_model(a: f64, b: f64) -> LinearPredictor {
    LinearPredictor::new(m(1, 1, &[a]), m(1, 1, &[b]), m(1, 1, &[1.0]))
}

fn scalar_plant() -> GeneralizedPlant {
    GeneralizedPlant::new(m(2, 1, &[1.0, 0.0]), m(2, 1, &[0.0, 1.0])).unwrap()
}

/// `‖H_wz‖₂²` of the scalar loop `a + b s` with `z = [g; s g]`.
fn scalar_h2sq(a: f64, b: f64, s: f64) -> f64 {
    let acl = a + b * s;
    if acl.abs() >= 1.0 {
        f64::INFINITY
    } else {
        (1.0 + s * s) / (1.0 - acl * acl)
    }
}

fn grid_min(f: impl Fn(f64) -> f64, lo: f64, hi: f64) -> (f64, f64) {
    let mut best = (f64::INFINITY, 0.0);
    let n = 200_000;
    for k in 0..=n {
        let s = lo + (hi - lo) * k as f64 / n as f64;
        let v = f(s);
        if v < best.0 {
            best = (v, s);
        }
    }
    best
}

fn random_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize) -> DMatrix<f64> {
    DMatrix::from_fn(r, c, |_, _| rng.gen_range(-1.0..1.0))
}

fn random_stable(rng: &mut ChaCha8Rng, n: usize, radius: f64) -> DMatrix<f64> {
    let a = random_matrix(rng, n, n);
    let r = spectral_radius(&a);
    a * (radius / r)
}

#[test]
fn scalar_nominal_matches_grid_search() {
    let res = nominal_synthesis(&scalar_model(0.0, 1.0), &scalar_plant(), &SynthesisOptions::default()).unwrap();
    let (best, s_best) = grid_min(|s| scalar_h2sq(0.0, 1.0, s), -1.0, 1.0);
    assert!((res.j_syn - best).abs() <= 1e-3 * best, "{} vs {best}", res.j_syn);
    assert!((res.gain[(0, 0)] - s_best).abs() < 1e-3);
}

#[test]
fn scalar_robust_matches_grid_search() {
    let verts = vec![
        Vertex {
            a: m(1, 1, &[0.5]),
            b: m(1, 1, &[1.0]),
            b_w: m(1, 1, &[1.0]),
        },
        Vertex {
            a: m(1, 1, &[1.5]),
            b: m(1, 1, &[1.0]),
            b_w: m(1, 1, &[1.0]),
        },
    ];
    let res = robust_synthesis_vertices(&verts, &scalar_plant(), &SynthesisOptions::default()).unwrap();
    let (best, s_best) = grid_min(|s| scalar_h2sq(0.5, 1.0, s).max(scalar_h2sq(1.5, 1.0, s)), -2.5, 0.5);
    let s = res.gain[(0, 0)];
    let worst = scalar_h2sq(0.5, 1.0, s).max(scalar_h2sq(1.5, 1.0, s));
    assert!(worst <= res.j_syn * (1.0 + 1e-6), "bound {} below true worst {worst}", res.j_syn);
    assert!((res.j_syn - best).abs() <= 0.02 * best, "J_syn {} vs grid {best}", res.j_syn);
    assert!((s - s_best).abs() < 0.05, "{s} vs {s_best}");
}

#[test]
fn unstabilizable_vertex_is_infeasible() {
    let err = nominal_synthesis(&scalar_model(2.0, 0.0), &scalar_plant(), &SynthesisOptions::default()).unwrap_err();
    assert!(matches!(err, SynthesisError::Infeasible(_)), "{err}");
    let verts = vec![
        Vertex {
            a: m(1, 1, &[0.5]),
            b: m(1, 1, &[1.0]),
            b_w: m(1, 1, &[1.0]),
        },
        Vertex {
            a: m(1, 1, &[2.0]),
            b: m(1, 1, &[0.0]),
            b_w: m(1, 1, &[1.0]),
        },
    ];
    let err = robust_synthesis_vertices(&verts, &scalar_plant(), &SynthesisOptions::default()).unwrap_err();
    assert!(matches!(err, SynthesisError::Infeasible(_)), "{err}");
}

#[test]
fn stable_open_loop_without_input_gives_lyapunov_norm() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let a = random_stable(&mut rng, 3, 0.7);
    let b_w = random_matrix(&mut rng, 3, 1);
    let c = random_matrix(&mut rng, 2, 3);
    let model = LinearPredictor::new(a.clone(), DMatrix::zeros(3, 1), b_w.clone());
    let plant = GeneralizedPlant::new(c.clone(), DMatrix::zeros(2, 1)).unwrap();
    let res = nominal_synthesis(&model, &plant, &SynthesisOptions::default()).unwrap();
    let h2 = h2_lyapunov(&a, &b_w, &c).unwrap();
    assert!((res.j_syn - h2 * h2).abs() <= 0.01 * h2 * h2, "{} vs {}", res.j_syn, h2 * h2);
}

#[test]
fn nominal_gain_equals_lqr_gain() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    for n in [2usize, 4] {
        let a = random_matrix(&mut rng, n, n) * 1.2;
        let b = random_matrix(&mut rng, n, 1);
        let b_w = DMatrix::from_element(n, 1, 1.0);
        let mut c_z = DMatrix::zeros(n + 1, n);
        c_z.view_mut((0, 0), (n, n)).copy_from(&DMatrix::identity(n, n));
        let mut d_zu = DMatrix::zeros(n + 1, 1);
        d_zu[(n, 0)] = 1.0;
        let plant = GeneralizedPlant::new(c_z.clone(), d_zu.clone()).unwrap();
        let model = LinearPredictor::new(a.clone(), b.clone(), b_w.clone());
        let h2 = nominal_synthesis(&model, &plant, &SynthesisOptions::default()).unwrap();
        let lqr = lqr_gain(&a, &b, &(c_z.transpose() * &c_z), &(d_zu.transpose() * &d_zu)).unwrap();
        assert!((&h2.gain - &lqr.gain).amax() < 1e-3 * lqr.gain.amax().max(1.0), "{} vs {}", h2.gain, lqr.gain);
        // H2 cost of the LQR loop is the optimum
        let opt = h2_lyapunov(&(&a + &b * &lqr.gain), &b_w, &(&c_z + &d_zu * &lqr.gain)).unwrap();
        assert!((h2.j_syn - opt * opt).abs() <= 1e-4 * opt * opt);
    }
}

#[test]
fn single_vertex_robust_equals_nominal() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let a = random_matrix(&mut rng, 3, 3);
    let b = random_matrix(&mut rng, 3, 1);
    let model = LinearPredictor::new(a, b, DMatrix::from_element(3, 1, 1.0));
    let poly = build_polytope(std::slice::from_ref(&model), 0, &[Block::A]).unwrap();
    let plant = GeneralizedPlant::new(DMatrix::identity(3, 3).insert_row(3, 0.0), m(4, 1, &[0.0, 0.0, 0.0, 1.0])).unwrap();
    let r = robust_synthesis(&poly, &plant, &SynthesisOptions::default()).unwrap();
    let n = nominal_synthesis(&model, &plant, &SynthesisOptions::default()).unwrap();
    assert!((r.j_syn - n.j_syn).abs() <= 1e-6 * n.j_syn.max(1.0));
}

#[test]
fn deadbeat_loop_has_single_impulse_term() {
    // A + B S = 0 with S = -B⁺A for invertible B
    let a = m(2, 2, &[0.9, 0.3, -0.2, 1.1]);
    let b = DMatrix::identity(2, 2);
    let s = -a.clone();
    let b_w = m(2, 1, &[1.0, -2.0]);
    let c_z = m(3, 2, &[1.0, 0.0, 0.0, 1.0, 0.0, 0.0]);
    let d_zu = m(3, 2, &[0.0, 0.0, 0.0, 0.0, 1.0, 1.0]);
    let plant = GeneralizedPlant::new(c_z.clone(), d_zu.clone()).unwrap();
    let model = LinearPredictor::new(a, b, b_w.clone());
    let cert = evaluate_h2_bound(&model, &plant, &s, &Default::default()).unwrap();
    let expect = ((&c_z + &d_zu * &s) * &b_w).norm_squared();
    assert!((cert.j - expect).abs() <= 1e-6 * expect, "{} vs {expect}", cert.j);
}

#[test]
fn evaluation_rejects_unstable_gain() {
    let model = scalar_model(1.2, 1.0);
    let err = evaluate_h2_bound(&model, &scalar_plant(), &m(1, 1, &[0.0]), &Default::default()).unwrap_err();
    assert!(matches!(err, SynthesisError::Unstable(r) if (r - 1.2).abs() < 1e-12));
}

#[test]
fn evaluation_is_lossless_on_random_loops() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for n in 1..=5 {
        let radius = rng.gen_range(0.1..0.95);
        let a = random_stable(&mut rng, n, radius);
        let b_w = random_matrix(&mut rng, n, 1);
        let c = random_matrix(&mut rng, 2, n);
        let plant = GeneralizedPlant::new(c.clone(), DMatrix::zeros(2, 1)).unwrap();
        let model = LinearPredictor::new(a.clone(), DMatrix::zeros(n, 1), b_w.clone());
        let cert = evaluate_h2_bound(&model, &plant, &DMatrix::zeros(1, n), &Default::default()).unwrap();
        let h2 = h2_lyapunov(&a, &b_w, &c).unwrap();
        assert!((cert.j - h2 * h2).abs() <= 0.01 * h2 * h2, "n={n}: {} vs {}", cert.j, h2 * h2);
    }
}

#[test]
fn robust_bound_covers_polytope_and_certifies_vertices() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let base = random_matrix(&mut rng, 3, 3) * 0.8;
    let b = random_matrix(&mut rng, 3, 1);
    let models: Vec<LinearPredictor> = (0..4)
        .map(|_| LinearPredictor::new(&base + random_matrix(&mut rng, 3, 3) * 0.05, b.clone(), DMatrix::from_element(3, 1, 1.0)))
        .collect();
    let poly = build_polytope(&models, 2, &[Block::A]).unwrap();
    let plant = GeneralizedPlant::new(DMatrix::identity(3, 3).insert_row(3, 0.0), m(4, 1, &[0.0, 0.0, 0.0, 1.0])).unwrap();
    let res = robust_synthesis(&poly, &plant, &SynthesisOptions::default()).unwrap();
    assert_eq!(res.spectral_radii.len(), 4);
    for v in &poly.vertices {
        assert!(spectral_radius(&(&v.a + &v.b * &res.gain)) < 1.0);
    }
    assert!((&res.l - &res.gain * &res.x).amax() < 1e-9 * res.l.amax().max(1.0));
    for _ in 0..10 {
        let raw: Vec<f64> = (0..4).map(|_| rng.gen::<f64>()).collect();
        let sum: f64 = raw.iter().sum();
        let alpha: Vec<f64> = raw.iter().map(|v| v / sum).collect();
        let model = convex_combine(&alpha, &poly.vertices).unwrap();
        let j = evaluate_h2_bound(&model, &plant, &res.gain, &Default::default()).unwrap().j;
        assert!(j <= res.j_syn * (1.0 + 1e-6), "{j} > {}", res.j_syn);
    }
}

#[test]
fn shared_lyapunov_is_never_better() {
    let verts = vec![
        Vertex {
            a: m(1, 1, &[0.5]),
            b: m(1, 1, &[1.0]),
            b_w: m(1, 1, &[1.0]),
        },
        Vertex {
            a: m(1, 1, &[1.5]),
            b: m(1, 1, &[1.0]),
            b_w: m(1, 1, &[1.0]),
        },
    ];
    let per = robust_synthesis_vertices(&verts, &scalar_plant(), &SynthesisOptions::default()).unwrap();
    let opts = SynthesisOptions {
        shared_lyapunov: true,
        ..Default::default()
    };
    let shared = robust_synthesis_vertices(&verts, &scalar_plant(), &opts).unwrap();
    assert_eq!(shared.p.len(), 1);
    assert!(shared.j_syn >= per.j_syn * (1.0 - 1e-6));
}

#[test]
fn synthesis_result_serializes() {
    let res = nominal_synthesis(&scalar_model(0.0, 1.0), &scalar_plant(), &SynthesisOptions::default()).unwrap();
    let text = serde_json::to_string(&res).unwrap();
    let back: SynthesisResult = serde_json::from_str(&text).unwrap();
    assert_eq!(back, res);
}
