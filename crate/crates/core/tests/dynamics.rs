use std::f64::consts::PI;

use koopman_h2::dynamics::*;
use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Fine-step RK4 reference for the default Duffing oscillator.
fn duffing_reference(x: [f64; 2], u: f64, t: f64) -> [f64; 2] {
    let f = |x: [f64; 2]| [x[1], u - 0.5 * x[1] + x[0] - 4.0 * x[0].powi(3)];
    let steps = 100_000;
    let h = t / steps as f64;
    let mut s = x;
    for _ in 0..steps {
        let k1 = f(s);
        let k2 = f([s[0] + h / 2.0 * k1[0], s[1] + h / 2.0 * k1[1]]);
        let k3 = f([s[0] + h / 2.0 * k2[0], s[1] + h / 2.0 * k2[1]]);
        let k4 = f([s[0] + h * k3[0], s[1] + h * k3[1]]);
        s[0] += h / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]);
        s[1] += h / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]);
    }
    s
}

fn err(a: &[f64], b: [f64; 2]) -> f64 {
    ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt()
}

#[test]
fn duffing_step_matches_fine_reference() {
    let x0 = PlantState::new(vec![-0.08, 0.97]);
    let got = duffing_step(&x0, 0.3, 0.1).unwrap();
    let reference = duffing_reference([-0.08, 0.97], 0.3, 0.1);
    assert!(err(&got.values, reference) < 1e-5, "{:?} vs {reference:?}", got.values);
}

#[test]
fn duffing_rk4_has_fourth_order_local_error() {
    for (x, u) in [([-0.08, 0.97], 0.0), ([0.9, -0.6], 0.7), ([-1.0, 1.0], -1.0)] {
        let coarse = duffing_step(&PlantState::new(x.to_vec()), u, 0.1).unwrap();
        let fine = duffing_step(&PlantState::new(x.to_vec()), u, 0.05).unwrap();
        let e1 = err(&coarse.values, duffing_reference(x, u, 0.1));
        let e2 = err(&fine.values, duffing_reference(x, u, 0.05));
        assert!(e1 / e2 >= 15.0, "ratio {} at {x:?}", e1 / e2);
    }
}

#[test]
fn undamped_duffing_conserves_energy() {
    let plant = Duffing {
        damping: 0.0,
        ..Duffing::default()
    };
    let energy = |x: &[f64]| 0.5 * x[1] * x[1] - 0.5 * x[0] * x[0] + x[0].powi(4);
    let mut s = PlantState::new(vec![0.3, 0.2]);
    let e0 = energy(&s.values);
    for _ in 0..1000 {
        s = plant.step(&s, &[0.0], 0.01).unwrap();
    }
    assert!((energy(&s.values) - e0).abs() < 1e-8);
    assert!((s.time - 10.0).abs() < 1e-9);
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn kdv_conserves_mass_and_energy_without_forcing() {
    let kdv = Kdv::new(KdvConfig::default()).unwrap();
    let grid = periodic_grid(128);
    let field: Vec<f64> = grid.iter().map(|x| 0.4 * (-(x - 0.5).powi(2)).exp() - 0.2 * (2.0 * x).cos()).collect();
    let m0 = mean(&field);
    let e0: f64 = field.iter().map(|v| v * v).sum();
    let mut s = PlantState::new(field);
    for _ in 0..200 {
        s = kdv.step(&s, &[0.0; 3], 0.01).unwrap();
    }
    assert!((mean(&s.values) - m0).abs() < 1e-13);
    let e: f64 = s.values.iter().map(|v| v * v).sum();
    assert!((e - e0).abs() < 1e-4 * e0, "energy {e} vs {e0}");
}

#[test]
fn kdv_linear_modes_rotate_with_cubic_dispersion() {
    let kdv = Kdv::new(KdvConfig::default()).unwrap();
    let grid = periodic_grid(128);
    let amp = 1e-7;
    let mode = 5.0;
    let field: Vec<f64> = grid.iter().map(|x| amp * (mode * x).cos()).collect();
    let s = kdv.step(&PlantState::new(field), &[0.0; 3], 0.01).unwrap();
    // y_t = -y_xxx moves cos(m x) to cos(m x + m³ t)
    let phase = mode.powi(3) * 0.01;
    for (x, y) in grid.iter().zip(&s.values) {
        let expect = amp * (mode * x + phase).cos();
        assert!((y - expect).abs() < 1e-6 * amp, "{y} vs {expect}");
    }
}

#[test]
fn kdv_soliton_travels_at_its_speed() {
    // y = 3c sech²(√c/2 (x - c t)) solves y_t + y y_x + y_xxx = 0
    let c = 25.0;
    let profile = |x: f64, t: f64| {
        let mut xi = x - c * t;
        xi = (xi + PI).rem_euclid(2.0 * PI) - PI;
        3.0 * c / (c.sqrt() / 2.0 * xi).cosh().powi(2)
    };
    let kdv = Kdv::new(KdvConfig::default()).unwrap();
    let grid = periodic_grid(128);
    let dt = 5e-5;
    let steps = 1000;
    let mut s = PlantState::new(grid.iter().map(|&x| profile(x, 0.0)).collect());
    for _ in 0..steps {
        s = kdv.step(&s, &[0.0; 3], dt).unwrap();
    }
    let t = dt * steps as f64;
    let worst = grid
        .iter()
        .zip(&s.values)
        .map(|(&x, y)| (y - profile(x, t)).abs())
        .fold(0.0, f64::max);
    assert!(worst < 1e-3 * 3.0 * c, "max deviation {worst}");
}

#[test]
fn kdv_forcing_injects_profile_mass() {
    let kdv = Kdv::new(KdvConfig::default()).unwrap();
    let grid = periodic_grid(128);
    let dt = 0.01;
    let s = kdv.step(&PlantState::new(vec![0.0; 128]), &[0.0, 1.0, 0.0], dt).unwrap();
    let v2 = input_profile(2, &grid, ProfileSign::Negative).unwrap();
    assert!((mean(&s.values) - dt * mean(&v2)).abs() < 1e-15);
    // to first order the field is dt·v2 moved by dispersion; compare spectra magnitudes
    let mut planner = FftPlanner::new();
    let fft = planner.plan_fft_forward(128);
    let spec = |v: &[f64]| {
        let mut b: Vec<Complex64> = v.iter().map(|&r| Complex64::new(r, 0.0)).collect();
        fft.process(&mut b);
        b
    };
    let got = spec(&s.values);
    let want = spec(&v2);
    for k in 0..20 {
        assert!((got[k].norm() - dt * want[k].norm()).abs() < 1e-6 * dt * want[0].norm(), "mode {k}");
    }
}

#[test]
fn kdv_step_is_deterministic() {
    let grid = periodic_grid(128);
    let field: Vec<f64> = kdv_initial_profiles(&grid)[1].clone();
    let a = kdv_step(&PlantState::new(field.clone()), [0.3, -0.2, 0.9], 0.01).unwrap();
    let b = kdv_step(&PlantState::new(field), [0.3, -0.2, 0.9], 0.01).unwrap();
    assert!(a.values.iter().zip(&b.values).all(|(x, y)| x.to_bits() == y.to_bits()));
}

#[test]
fn noise_streams_are_reproducible() {
    let spec = NoiseSpec::new(0.01, 42);
    let mut a = spec.stream();
    let mut b = spec.stream();
    let xa: Vec<Vec<f64>> = (0..100).map(|_| a.perturb(&[0.0, 0.0])).collect();
    let xb: Vec<Vec<f64>> = (0..100).map(|_| b.perturb(&[0.0, 0.0])).collect();
    assert_eq!(xa, xb);
    let flat: Vec<f64> = xa.into_iter().flatten().collect();
    let var = flat.iter().map(|v| v * v).sum::<f64>() / flat.len() as f64;
    assert!((var - 0.01).abs() < 0.003, "sample variance {var}");
    let mut other = NoiseSpec::new(0.01, 43).stream();
    assert_ne!(other.perturb(&[0.0]), spec.stream().perturb(&[0.0]));
}
