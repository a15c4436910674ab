//! Ground-truth plant simulators and closed-loop simulation.
//!
//! Two plants ship: the forced Duffing oscillator (RK4 over one sampling
//! interval) and the forced KdV equation on a periodic grid (Strang
//! split-step with exact Fourier dispersion). The rest of the crate treats
//! them as black boxes through [`Plant`].

use std::f64::consts::PI;
use std::io::{BufRead, Write};
use std::sync::Arc;

use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use rustfft::num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::observables::{Dictionary, ObservableError};

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("non-finite {0}")]
    NonFinite(&'static str),
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
    #[error("grid size {0} is not a power of two")]
    GridNotPowerOfTwo(usize),
    #[error("{what} has dimension {got}, expected {expected}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("input profile index {0} out of range 1..=3")]
    ProfileIndex(usize),
    #[error("gain is {rows}x{cols}, expected {inputs}x{features}")]
    GainShape {
        rows: usize,
        cols: usize,
        inputs: usize,
        features: usize,
    },
    #[error(transparent)]
    Observable(#[from] ObservableError),
    #[error("csv: {0}")]
    Csv(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Clone, Debug, PartialEq)]
pub struct PlantState {
    pub values: Vec<f64>,
    pub time: f64,
}

impl PlantState {
    pub fn new(values: Vec<f64>) -> Self {
        Self { values, time: 0.0 }
    }
}

/// A sampled-data plant: the input is held constant over each step.
pub trait Plant: Send + Sync {
    fn name(&self) -> &str;
    fn state_dim(&self) -> usize;
    fn input_dim(&self) -> usize;
    fn step(&self, state: &PlantState, u: &[f64], dt: f64) -> Result<PlantState, DynamicsError>;
}

fn check_step(state: &PlantState, u: &[f64], dt: f64, n: usize, p: usize) -> Result<(), DynamicsError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(DynamicsError::InvalidStep(dt));
    }
    if state.values.len() != n {
        return Err(DynamicsError::Dimension {
            what: "state",
            expected: n,
            got: state.values.len(),
        });
    }
    if u.len() != p {
        return Err(DynamicsError::Dimension {
            what: "input",
            expected: p,
            got: u.len(),
        });
    }
    if !state.values.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite("state"));
    }
    if !u.iter().all(|v| v.is_finite()) {
        return Err(DynamicsError::NonFinite("input"));
    }
    Ok(())
}

/// `ẍ + δẋ + αx + βx³ = u`, state `[x, ẋ]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Duffing {
    pub damping: f64,
    pub linear: f64,
    pub cubic: f64,
}

impl Default for Duffing {
    fn default() -> Self {
        Self {
            damping: 0.5,
            linear: -1.0,
            cubic: 4.0,
        }
    }
}

impl Duffing {
    fn field(&self, x: [f64; 2], u: f64) -> [f64; 2] {
        [x[1], u - self.damping * x[1] - self.linear * x[0] - self.cubic * x[0].powi(3)]
    }

    /// One classical RK4 step of length `dt` with `u` held.
    pub fn rk4(&self, x: [f64; 2], u: f64, dt: f64) -> [f64; 2] {
        let add = |a: [f64; 2], b: [f64; 2], s: f64| [a[0] + s * b[0], a[1] + s * b[1]];
        let k1 = self.field(x, u);
        let k2 = self.field(add(x, k1, dt / 2.0), u);
        let k3 = self.field(add(x, k2, dt / 2.0), u);
        let k4 = self.field(add(x, k3, dt), u);
        [
            x[0] + dt / 6.0 * (k1[0] + 2.0 * k2[0] + 2.0 * k3[0] + k4[0]),
            x[1] + dt / 6.0 * (k1[1] + 2.0 * k2[1] + 2.0 * k3[1] + k4[1]),
        ]
    }
}

impl Plant for Duffing {
    fn name(&self) -> &str {
        "duffing"
    }

    fn state_dim(&self) -> usize {
        2
    }

    fn input_dim(&self) -> usize {
        1
    }

    fn step(&self, state: &PlantState, u: &[f64], dt: f64) -> Result<PlantState, DynamicsError> {
        check_step(state, u, dt, 2, 1)?;
        let next = self.rk4([state.values[0], state.values[1]], u[0], dt);
        Ok(PlantState {
            values: next.to_vec(),
            time: state.time + dt,
        })
    }
}

/// Advance the default Duffing oscillator by `dt`.
pub fn duffing_step(state: &PlantState, u: f64, dt: f64) -> Result<PlantState, DynamicsError> {
    Duffing::default().step(state, &[u], dt)
}

/// Sign of the exponent in the KdV actuator profiles `exp(±25 (x - c)²)`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ProfileSign {
    #[default]
    Negative,
    Positive,
}

pub const KDV_PROFILE_CENTERS: [f64; 3] = [-PI / 2.0, 0.0, PI / 2.0];
pub const KDV_PROFILE_WIDTH: f64 = 25.0;

/// Periodic grid on `[-π, π)`.
pub fn periodic_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| -PI + 2.0 * PI * j as f64 / n as f64).collect()
}

/// Actuator profile `v_i(x) = exp(∓25 (x - c_i)²)` sampled at `x`, `i ∈ 1..=3`.
pub fn input_profile(i: usize, x: &[f64], sign: ProfileSign) -> Result<Vec<f64>, DynamicsError> {
    if !(1..=3).contains(&i) {
        return Err(DynamicsError::ProfileIndex(i));
    }
    let c = KDV_PROFILE_CENTERS[i - 1];
    let s = match sign {
        ProfileSign::Negative => -1.0,
        ProfileSign::Positive => 1.0,
    };
    Ok(x.iter().map(|&xi| (s * KDV_PROFILE_WIDTH * (xi - c).powi(2)).exp()).collect())
}

/// The three spatial profiles mixed to form KdV initial conditions:
/// `exp(-(x-π/2)²)`, `-sin(x/2)²`, `exp(-(x+π/2)²)`.
pub fn kdv_initial_profiles(x: &[f64]) -> [Vec<f64>; 3] {
    [
        x.iter().map(|&v| (-(v - PI / 2.0).powi(2)).exp()).collect(),
        x.iter().map(|&v| -(v / 2.0).sin().powi(2)).collect(),
        x.iter().map(|&v| (-(v + PI / 2.0).powi(2)).exp()).collect(),
    ]
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KdvConfig {
    pub grid: usize,
    /// RK2 substeps for the advection half of each split step.
    pub nonlinear_substeps: usize,
    pub profile_sign: ProfileSign,
}

impl Default for KdvConfig {
    fn default() -> Self {
        Self {
            grid: 128,
            nonlinear_substeps: 2,
            profile_sign: ProfileSign::Negative,
        }
    }
}

/// `∂_t y + y ∂_x y + ∂_x³ y = Σ u_i v_i(x)` on `[-π, π)`, periodic.
///
/// Each step is `L(dt/2) N(dt) L(dt/2)`: the dispersion `L` is exact in
/// Fourier space (multiplier `exp(i k³ t)`), the advection-plus-forcing `N`
/// uses pseudo-spectral RK2 substeps with 2/3-rule dealiasing of the
/// quadratic term.
#[derive(Clone)]
pub struct Kdv {
    config: KdvConfig,
    grid: Vec<f64>,
    /// wavenumbers for odd derivatives (Nyquist zeroed)
    k_odd: Vec<f64>,
    dealias: Vec<f64>,
    profiles_hat: Vec<Vec<Complex64>>,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Kdv {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Kdv").field("config", &self.config).finish()
    }
}

impl Kdv {
    pub fn new(config: KdvConfig) -> Result<Self, DynamicsError> {
        let n = config.grid;
        if n < 4 || !n.is_power_of_two() {
            return Err(DynamicsError::GridNotPowerOfTwo(n));
        }
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let grid = periodic_grid(n);
        let k_odd: Vec<f64> = (0..n)
            .map(|j| {
                if j == n / 2 {
                    0.0
                } else if j < n / 2 {
                    j as f64
                } else {
                    j as f64 - n as f64
                }
            })
            .collect();
        let cut = n as f64 / 3.0;
        let dealias = (0..n)
            .map(|j| {
                let k = if j <= n / 2 { j as f64 } else { (n - j) as f64 };
                if k <= cut {
                    1.0
                } else {
                    0.0
                }
            })
            .collect();
        let mut kdv = Self {
            config,
            grid,
            k_odd,
            dealias,
            profiles_hat: Vec::new(),
            fwd,
            inv,
        };
        kdv.profiles_hat = (1..=3)
            .map(|i| {
                let v = input_profile(i, &kdv.grid, kdv.config.profile_sign)?;
                Ok(kdv.forward(&v))
            })
            .collect::<Result<_, DynamicsError>>()?;
        Ok(kdv)
    }

    pub fn config(&self) -> &KdvConfig {
        &self.config
    }

    pub fn grid(&self) -> &[f64] {
        &self.grid
    }

    fn forward(&self, y: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = y.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn inverse(&self, yh: &[Complex64]) -> Vec<f64> {
        let mut buf = yh.to_vec();
        self.inv.process(&mut buf);
        let n = buf.len() as f64;
        buf.into_iter().map(|c| c.re / n).collect()
    }

    /// Fourier-space right-hand side of `y_t = -(y²/2)_x + f`.
    fn advection(&self, yh: &[Complex64], forcing: &[Complex64]) -> Vec<Complex64> {
        let y = self.inverse(yh);
        let sq: Vec<f64> = y.iter().map(|v| v * v).collect();
        let sqh = self.forward(&sq);
        sqh.iter()
            .zip(&self.k_odd)
            .zip(&self.dealias)
            .zip(forcing)
            .map(|(((s, &k), &d), f)| Complex64::new(0.0, -0.5 * k * d) * s + f)
            .collect()
    }

    /// The forced KdV state after one step of length `dt`.
    pub fn advance(&self, field: &[f64], u: &[f64], dt: f64) -> Vec<f64> {
        let n = self.config.grid;
        let mut forcing = vec![Complex64::new(0.0, 0.0); n];
        for (ui, vh) in u.iter().zip(&self.profiles_hat) {
            if *ui != 0.0 {
                for (f, v) in forcing.iter_mut().zip(vh) {
                    *f += v * *ui;
                }
            }
        }
        let half: Vec<Complex64> = self
            .k_odd
            .iter()
            .map(|&k| Complex64::from_polar(1.0, k.powi(3) * dt / 2.0))
            .collect();

        let mut yh = self.forward(field);
        yh.iter_mut().zip(&half).for_each(|(y, h)| *y *= h);

        let substeps = self.config.nonlinear_substeps.max(1);
        let h = dt / substeps as f64;
        for _ in 0..substeps {
            let k1 = self.advection(&yh, &forcing);
            let trial: Vec<Complex64> = yh.iter().zip(&k1).map(|(y, k)| y + k * h).collect();
            let k2 = self.advection(&trial, &forcing);
            for ((y, a), b) in yh.iter_mut().zip(&k1).zip(&k2) {
                *y += (a + b) * (h / 2.0);
            }
        }

        yh.iter_mut().zip(&half).for_each(|(y, h)| *y *= h);
        self.inverse(&yh)
    }
}

impl Plant for Kdv {
    fn name(&self) -> &str {
        "kdv"
    }

    fn state_dim(&self) -> usize {
        self.config.grid
    }

    fn input_dim(&self) -> usize {
        3
    }

    fn step(&self, state: &PlantState, u: &[f64], dt: f64) -> Result<PlantState, DynamicsError> {
        check_step(state, u, dt, self.config.grid, 3)?;
        Ok(PlantState {
            values: self.advance(&state.values, u, dt),
            time: state.time + dt,
        })
    }
}

/// Advance a KdV field with the default solver settings. The grid size is
/// taken from the field length.
pub fn kdv_step(field: &PlantState, u: [f64; 3], dt: f64) -> Result<PlantState, DynamicsError> {
    let kdv = Kdv::new(KdvConfig {
        grid: field.values.len(),
        ..KdvConfig::default()
    })?;
    kdv.step(field, &u, dt)
}

/// Zero-mean Gaussian noise, applied independently to every coordinate.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoiseSpec {
    pub variance: f64,
    pub seed: u64,
}

impl NoiseSpec {
    pub fn new(variance: f64, seed: u64) -> Self {
        assert!(variance >= 0.0, "noise variance must be nonnegative");
        Self { variance, seed }
    }

    pub fn stream(&self) -> NoiseStream {
        NoiseStream {
            rng: ChaCha8Rng::seed_from_u64(self.seed),
            std: self.variance.sqrt(),
        }
    }
}

pub struct NoiseStream {
    rng: ChaCha8Rng,
    std: f64,
}

impl NoiseStream {
    pub fn perturb(&mut self, x: &[f64]) -> Vec<f64> {
        x.iter()
            .map(|v| {
                let e: f64 = StandardNormal.sample(&mut self.rng);
                v + self.std * e
            })
            .collect()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    Completed,
    /// `‖x‖_∞` exceeded the blow-up bound (or left the finite range).
    Diverged { step: usize, time: f64 },
}

#[derive(Clone, Debug)]
pub struct ClosedLoopOptions {
    pub dt: f64,
    pub steps: usize,
    pub blowup: f64,
    /// Measurement noise on the controller's path only.
    pub noise: Option<NoiseSpec>,
}

impl ClosedLoopOptions {
    pub fn new(dt: f64, steps: usize) -> Self {
        Self {
            dt,
            steps,
            blowup: 1e6,
            noise: None,
        }
    }
}

/// States and inputs per sample. `inputs[k]` is the control computed at
/// sample `k`; the one on the final sample is computed but not applied.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    pub inputs: Vec<Vec<f64>>,
    pub outcome: Outcome,
}

/// Run `u_k = S g(x_k + n_k)` on the plant from `x0`.
pub fn simulate_closed_loop(
    plant: &dyn Plant,
    dictionary: &Dictionary,
    gain: &DMatrix<f64>,
    x0: &[f64],
    opts: &ClosedLoopOptions,
) -> Result<Trajectory, DynamicsError> {
    let n_feat = dictionary.dim();
    let p = plant.input_dim();
    if gain.shape() != (p, n_feat) {
        return Err(DynamicsError::GainShape {
            rows: gain.nrows(),
            cols: gain.ncols(),
            inputs: p,
            features: n_feat,
        });
    }
    if x0.len() != plant.state_dim() {
        return Err(DynamicsError::Dimension {
            what: "initial state",
            expected: plant.state_dim(),
            got: x0.len(),
        });
    }
    let mut noise = opts.noise.as_ref().map(NoiseSpec::stream);
    let control = |x: &[f64], noise: &mut Option<NoiseStream>| -> Result<Vec<f64>, DynamicsError> {
        let measured = match noise {
            Some(n) => n.perturb(x),
            None => x.to_vec(),
        };
        let g = DVector::from_vec(dictionary.evaluate(&measured)?);
        Ok((gain * g).iter().copied().collect())
    };

    let mut state = PlantState::new(x0.to_vec());
    let mut traj = Trajectory {
        times: vec![0.0],
        states: vec![x0.to_vec()],
        inputs: Vec::new(),
        outcome: Outcome::Completed,
    };
    for k in 0..opts.steps {
        let u = control(&state.values, &mut noise)?;
        traj.inputs.push(u.clone());
        let next = match plant.step(&state, &u, opts.dt) {
            Ok(s) => s,
            Err(DynamicsError::NonFinite(_)) => {
                traj.outcome = Outcome::Diverged {
                    step: k,
                    time: state.time,
                };
                traj.inputs.pop();
                traj.inputs.push(vec![0.0; p]);
                return Ok(traj);
            }
            Err(e) => return Err(e),
        };
        state = next;
        traj.times.push(state.time);
        traj.states.push(state.values.clone());
        let norm_inf = state.values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if !(norm_inf <= opts.blowup) {
            traj.outcome = Outcome::Diverged {
                step: k + 1,
                time: state.time,
            };
            traj.inputs.push(vec![0.0; p]);
            return Ok(traj);
        }
    }
    let u = control(&state.values, &mut noise)?;
    traj.inputs.push(u);
    Ok(traj)
}

impl Trajectory {
    pub fn state_dim(&self) -> usize {
        self.states.first().map_or(0, |s| s.len())
    }

    pub fn input_dim(&self) -> usize {
        self.inputs.first().map_or(0, |u| u.len())
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self.outcome, Outcome::Diverged { .. })
    }

    /// `t,x1,...,xn,u1,...,up`, one row per sample, shortest round-trip
    /// decimal formatting.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<(), DynamicsError> {
        let n = self.state_dim();
        let p = self.input_dim();
        let mut header = vec!["t".to_string()];
        header.extend((1..=n).map(|i| format!("x{i}")));
        header.extend((1..=p).map(|i| format!("u{i}")));
        writeln!(w, "{}", header.join(","))?;
        for ((t, x), u) in self.times.iter().zip(&self.states).zip(&self.inputs) {
            let mut row = vec![format!("{t:?}")];
            row.extend(x.iter().map(|v| format!("{v:?}")));
            row.extend(u.iter().map(|v| format!("{v:?}")));
            writeln!(w, "{}", row.join(","))?;
        }
        Ok(())
    }

    /// Parse a trajectory CSV. The outcome is not stored in the file and is
    /// reported as `Completed`.
    pub fn read_csv<R: BufRead>(r: R) -> Result<Self, DynamicsError> {
        let mut lines = r.lines();
        let header = lines.next().ok_or_else(|| DynamicsError::Csv("empty file".into()))??;
        let cols: Vec<&str> = header.split(',').collect();
        if cols.first() != Some(&"t") {
            return Err(DynamicsError::Csv("first column must be t".into()));
        }
        let n = cols.iter().filter(|c| c.starts_with('x')).count();
        let p = cols.iter().filter(|c| c.starts_with('u')).count();
        if 1 + n + p != cols.len() {
            return Err(DynamicsError::Csv(format!("unexpected header `{header}`")));
        }
        let mut traj = Trajectory {
            times: Vec::new(),
            states: Vec::new(),
            inputs: Vec::new(),
            outcome: Outcome::Completed,
        };
        for (lineno, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let vals: Vec<f64> = line
                .split(',')
                .map(|s| s.trim().parse::<f64>())
                .collect::<Result<_, _>>()
                .map_err(|e| DynamicsError::Csv(format!("row {}: {e}", lineno + 2)))?;
            if vals.len() != cols.len() {
                return Err(DynamicsError::Csv(format!("row {} has {} fields", lineno + 2, vals.len())));
            }
            traj.times.push(vals[0]);
            traj.states.push(vals[1..1 + n].to_vec());
            traj.inputs.push(vals[1 + n..].to_vec());
        }
        Ok(traj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn duffing_equilibria_are_fixed() {
        for x in [[0.0, 0.0], [0.5, 0.0], [-0.5, 0.0]] {
            let s = duffing_step(&PlantState::new(x.to_vec()), 0.0, 0.1).unwrap();
            assert!(s.values.iter().zip(x).all(|(a, b)| (a - b).abs() < 1e-15), "{s:?}");
            assert!((s.time - 0.1).abs() < 1e-15);
        }
    }

    #[test]
    fn duffing_rejects_bad_input() {
        let s = PlantState::new(vec![0.0, f64::NAN]);
        assert!(matches!(duffing_step(&s, 0.0, 0.1), Err(DynamicsError::NonFinite(_))));
        let s = PlantState::new(vec![0.0, 0.0]);
        assert!(matches!(duffing_step(&s, f64::INFINITY, 0.1), Err(DynamicsError::NonFinite(_))));
        assert!(matches!(duffing_step(&s, 0.0, 0.0), Err(DynamicsError::InvalidStep(_))));
    }

    #[test]
    fn kdv_zero_is_fixed_point() {
        let s = kdv_step(&PlantState::new(vec![0.0; 128]), [0.0; 3], 0.01).unwrap();
        assert!(s.values.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn kdv_rejects_non_power_of_two_grid() {
        assert!(matches!(
            kdv_step(&PlantState::new(vec![0.0; 100]), [0.0; 3], 0.01),
            Err(DynamicsError::GridNotPowerOfTwo(100))
        ));
        let mut f = vec![0.0; 128];
        f[3] = f64::NAN;
        assert!(matches!(
            kdv_step(&PlantState::new(f), [0.0; 3], 0.01),
            Err(DynamicsError::NonFinite(_))
        ));
    }

    #[test]
    fn profile_values() {
        assert_eq!(input_profile(2, &[0.0], ProfileSign::Negative).unwrap(), vec![1.0]);
        assert_eq!(input_profile(1, &[-PI / 2.0], ProfileSign::Negative).unwrap(), vec![1.0]);
        let v = input_profile(2, &[0.2], ProfileSign::Negative).unwrap()[0];
        assert!((v - (-1.0f64).exp()).abs() < 1e-15);
        assert!((v - 0.3679).abs() < 1e-4);
        assert!(matches!(
            input_profile(4, &[0.0], ProfileSign::Negative),
            Err(DynamicsError::ProfileIndex(4))
        ));
    }

    #[test]
    fn zero_gain_at_equilibrium_is_constant() {
        let dict = Dictionary::monomials_deg2();
        let traj = simulate_closed_loop(
            &Duffing::default(),
            &dict,
            &DMatrix::zeros(1, 5),
            &[0.5, 0.0],
            &ClosedLoopOptions::new(0.1, 50),
        )
        .unwrap();
        assert_eq!(traj.outcome, Outcome::Completed);
        assert_eq!(traj.states.len(), 51);
        assert!(traj.states.iter().all(|s| s == &vec![0.5, 0.0]));
        assert!(traj.inputs.iter().all(|u| u == &vec![0.0]));
    }

    /// x⁺ = 2x (+ u), identity dictionary on one coordinate.
    struct Doubling;

    impl Plant for Doubling {
        fn name(&self) -> &str {
            "doubling"
        }
        fn state_dim(&self) -> usize {
            1
        }
        fn input_dim(&self) -> usize {
            1
        }
        fn step(&self, s: &PlantState, u: &[f64], dt: f64) -> Result<PlantState, DynamicsError> {
            Ok(PlantState {
                values: vec![2.0 * s.values[0] + u[0]],
                time: s.time + dt,
            })
        }
    }

    #[test]
    fn unstable_open_loop_is_reported_not_crashed() {
        let dict = Dictionary::monomials(1, vec![vec![1]]).unwrap();
        let traj = simulate_closed_loop(
            &Doubling,
            &dict,
            &DMatrix::zeros(1, 1),
            &[1.0],
            &ClosedLoopOptions::new(1.0, 100),
        )
        .unwrap();
        match traj.outcome {
            Outcome::Diverged { step, .. } => assert_eq!(step, 20), // 2^20 > 1e6
            other => panic!("expected divergence, got {other:?}"),
        }
        // a stabilizing gain keeps it bounded
        let traj = simulate_closed_loop(
            &Doubling,
            &dict,
            &DMatrix::from_element(1, 1, -1.9),
            &[1.0],
            &ClosedLoopOptions::new(1.0, 100),
        )
        .unwrap();
        assert_eq!(traj.outcome, Outcome::Completed);
    }

    #[test]
    fn gain_shape_checked() {
        let r = simulate_closed_loop(
            &Duffing::default(),
            &Dictionary::monomials_deg2(),
            &DMatrix::zeros(1, 4),
            &[0.0, 0.0],
            &ClosedLoopOptions::new(0.1, 1),
        );
        assert!(matches!(r, Err(DynamicsError::GainShape { .. })));
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let mut opts = ClosedLoopOptions::new(0.1, 20);
        opts.noise = Some(NoiseSpec::new(0.01, 3));
        let traj = simulate_closed_loop(
            &Duffing::default(),
            &Dictionary::monomials_deg2(),
            &DMatrix::from_row_slice(1, 5, &[-6.0, -2.5, 0.1, 0.0, 0.3]),
            &[-0.08, 0.97],
            &opts,
        )
        .unwrap();
        let mut buf = Vec::new();
        traj.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf.clone()).unwrap();
        assert!(text.starts_with("t,x1,x2,u1\n"));
        let back = Trajectory::read_csv(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(back, traj);
    }
}
