//! End-to-end runs: collect data, fit, build the polytope, synthesize the
//! robust, nominal and LQR gains, and compare them in closed loop on the
//! true plant.
//!
//! Configuration is TOML. A run starts from a preset (`duffing` or `kdv`),
//! merges the user's file over it, then applies `key.path=value` overrides,
//! so every field can be set from the command line.

use std::path::{Path, PathBuf};

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp1, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::artifact::{self, ArtifactError};
use crate::dynamics::{
    kdv_initial_profiles, simulate_closed_loop, ClosedLoopOptions, DynamicsError, Duffing, Kdv, KdvConfig,
    NoiseSpec, Outcome, Plant, PlantState, Trajectory,
};
use crate::edmd::{assemble, fit_predictor, EdmdError, FitOptions, LinearPredictor, Segment, SnapshotDataset};
use crate::linalg::spectral_radius;
use crate::observables::{Dictionary, ObservableError};
use crate::polytope::{build_polytope, spread_report, Block, EntryId, PolytopeError, PolytopeModel, SpreadReport};
use crate::synthesis::{
    evaluate_h2_bound, lqr_gain, nominal_synthesis, robust_synthesis, GeneralizedPlant, LqrResult, Method,
    SynthesisError, SynthesisOptions, SynthesisResult,
};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Read { path: String, source: std::io::Error },
    #[error("invalid TOML: {0}")]
    Toml(String),
    #[error("override `{0}` must look like key.path=value")]
    Override(String),
    #[error("unknown preset `{0}` (known: duffing, kdv)")]
    Preset(String),
    #[error("{0}")]
    Invalid(String),
}

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stage `{stage}`: {source}")]
    Synthesis {
        stage: &'static str,
        source: SynthesisError,
    },
    #[error("stage `{stage}`: {source}")]
    Dynamics {
        stage: &'static str,
        source: DynamicsError,
    },
    #[error("stage `{stage}`: {source}")]
    Edmd { stage: &'static str, source: EdmdError },
    #[error("stage `polytope`: {0}")]
    Polytope(#[from] PolytopeError),
    #[error(transparent)]
    Artifact(#[from] ArtifactError),
    #[error("writing {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

impl ExperimentError {
    /// True when the failure is an infeasible synthesis problem.
    pub fn is_infeasible(&self) -> bool {
        matches!(
            self,
            ExperimentError::Synthesis {
                source: SynthesisError::Infeasible(_),
                ..
            }
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PlantKind {
    Duffing,
    Kdv,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DataConfig {
    pub datasets: usize,
    /// One-step pairs per dataset (Duffing).
    pub samples: usize,
    /// Trajectories per dataset and states per trajectory (KdV).
    pub trajectories: usize,
    pub length: usize,
    pub state_range: [f64; 2],
    pub input_range: [f64; 2],
    /// Measurement noise on recorded states.
    pub noise_variance: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// `monomials2` or `probes`
    pub dictionary: String,
    pub probes: usize,
    /// Explicit monomial exponents; overrides `dictionary` when non-empty.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub exponents: Vec<Vec<u32>>,
    pub rel_cutoff: f64,
    /// Disturbance matrix rows; empty means a column of ones.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub b_w: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolytopeConfig {
    pub h: usize,
    pub blocks: Vec<Block>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthesisConfig {
    pub c_z: Vec<Vec<f64>>,
    pub d_zu: Vec<Vec<f64>>,
    pub q: Vec<Vec<f64>>,
    pub r: Vec<Vec<f64>>,
    pub margin: f64,
    pub tol: f64,
    pub max_iter: usize,
    pub shared_lyapunov: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SimulationConfig {
    pub steps: usize,
    /// Initial plant state (Duffing).
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub x0: Vec<f64>,
    /// Weights on the three KdV initial profiles.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub profile_weights: Vec<f64>,
    /// Measurement noise inside the loop.
    pub noise_variance: f64,
    pub noise_seed: u64,
    /// Give each controller its own noise realization.
    pub noise_per_controller: bool,
    pub blowup: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub name: String,
    pub plant: PlantKind,
    pub dt: f64,
    pub seed: u64,
    pub output_dir: PathBuf,
    pub duffing: Duffing,
    pub kdv: KdvConfig,
    pub data: DataConfig,
    pub model: ModelConfig,
    pub polytope: PolytopeConfig,
    pub synthesis: SynthesisConfig,
    pub simulation: SimulationConfig,
}

fn eye(n: usize) -> Vec<Vec<f64>> {
    (0..n).map(|i| (0..n).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect()
}

fn zeros(r: usize, c: usize) -> Vec<Vec<f64>> {
    vec![vec![0.0; c]; r]
}

impl ExperimentConfig {
    pub fn duffing() -> Self {
        let mut c_z = zeros(3, 5);
        c_z[0][0] = 10.0;
        c_z[1][1] = 1.0;
        let mut q = zeros(5, 5);
        q[0][0] = 100.0;
        q[1][1] = 1.0;
        Self {
            name: "duffing".into(),
            plant: PlantKind::Duffing,
            dt: 0.1,
            seed: 1,
            output_dir: PathBuf::from("out/duffing"),
            duffing: Duffing::default(),
            kdv: KdvConfig::default(),
            data: DataConfig {
                datasets: 4,
                samples: 150,
                trajectories: 100,
                length: 200,
                state_range: [-1.0, 1.0],
                input_range: [-1.0, 1.0],
                noise_variance: 0.01,
            },
            model: ModelConfig {
                dictionary: "monomials2".into(),
                probes: 7,
                exponents: Vec::new(),
                rel_cutoff: 1e-12,
                b_w: Vec::new(),
            },
            polytope: PolytopeConfig {
                h: 2,
                blocks: vec![Block::A],
            },
            synthesis: SynthesisConfig {
                c_z,
                d_zu: vec![vec![0.0], vec![0.0], vec![1.0]],
                q,
                r: vec![vec![1.0]],
                margin: 1e-8,
                tol: 1e-7,
                max_iter: 100,
                shared_lyapunov: false,
            },
            simulation: SimulationConfig {
                steps: 100,
                x0: vec![-0.08, 0.97],
                profile_weights: Vec::new(),
                noise_variance: 0.0,
                noise_seed: 7,
                noise_per_controller: false,
                blowup: 1e6,
            },
        }
    }

    pub fn kdv() -> Self {
        let mut c_z = eye(7);
        c_z.extend(zeros(3, 7));
        let mut d_zu = zeros(7, 3);
        d_zu.extend(eye(3));
        let mut cfg = Self::duffing();
        cfg.name = "kdv".into();
        cfg.plant = PlantKind::Kdv;
        cfg.dt = 0.01;
        cfg.output_dir = PathBuf::from("out/kdv");
        cfg.data.noise_variance = 0.0;
        cfg.model.dictionary = "probes".into();
        cfg.synthesis = SynthesisConfig {
            c_z,
            d_zu,
            q: eye(7),
            r: eye(3),
            ..cfg.synthesis
        };
        cfg.simulation.steps = 200;
        cfg.simulation.x0 = Vec::new();
        cfg.simulation.profile_weights = vec![1.0 / 3.0; 3];
        cfg
    }

    pub fn preset(name: &str) -> Result<Self, ConfigError> {
        match name {
            "duffing" => Ok(Self::duffing()),
            "kdv" => Ok(Self::kdv()),
            other => Err(ConfigError::Preset(other.to_string())),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serialization")
    }

    /// Preset, then `file` merged over it, then overrides.
    pub fn load(preset: Option<&str>, file: Option<&Path>, overrides: &[String]) -> Result<Self, ConfigError> {
        let value: toml::Value = match file {
            Some(path) => {
                let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Read {
                    path: path.display().to_string(),
                    source,
                })?;
                text.parse::<toml::Table>()
                    .map(toml::Value::Table)
                    .map_err(|e| ConfigError::Toml(e.to_string()))?
            }
            None => toml::Value::Table(Default::default()),
        };
        // the file may name its own preset via `plant`
        let preset_name = preset
            .map(str::to_string)
            .or_else(|| value.get("plant").and_then(|v| v.as_str()).map(str::to_string))
            .unwrap_or_else(|| "duffing".into());
        // a `plant=` override also picks the preset
        let preset_name = overrides
            .iter()
            .rev()
            .filter_map(|o| o.split_once('='))
            .find(|(k, _)| k.trim() == "plant")
            .map(|(_, v)| v.trim().trim_matches('"').to_string())
            .unwrap_or(preset_name);
        let mut base = toml::Value::try_from(Self::preset(&preset_name)?).map_err(|e| ConfigError::Toml(e.to_string()))?;
        merge(&mut base, value);
        for o in overrides {
            apply_override(&mut base, o)?;
        }
        let cfg: Self = base.try_into().map_err(|e: toml::de::Error| ConfigError::Toml(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn fit_options(&self) -> Result<FitOptions, ConfigError> {
        Ok(FitOptions {
            rel_cutoff: self.model.rel_cutoff,
            b_w: if self.model.b_w.is_empty() {
                None
            } else {
                Some(to_matrix("model.b_w", &self.model.b_w)?)
            },
        })
    }

    pub fn synthesis_options(&self) -> SynthesisOptions {
        SynthesisOptions {
            solver: dense_sdp::SolverOptions {
                margin: self.synthesis.margin,
                tol: self.synthesis.tol,
                max_iter: self.synthesis.max_iter,
                ..Default::default()
            },
            shared_lyapunov: self.synthesis.shared_lyapunov,
        }
    }

    pub fn dictionary(&self) -> Result<Dictionary, ConfigError> {
        let bad = |e: ObservableError| ConfigError::Invalid(format!("model: {e}"));
        if !self.model.exponents.is_empty() {
            let n = self.model.exponents[0].len();
            return Dictionary::monomials(n, self.model.exponents.clone()).map_err(bad);
        }
        Dictionary::from_name(&self.model.dictionary, self.kdv.grid, self.model.probes).map_err(bad)
    }

    pub fn plant(&self) -> Result<Box<dyn Plant>, ConfigError> {
        Ok(match self.plant {
            PlantKind::Duffing => Box::new(self.duffing.clone()),
            PlantKind::Kdv => {
                Box::new(Kdv::new(self.kdv.clone()).map_err(|e| ConfigError::Invalid(format!("kdv: {e}")))?)
            }
        })
    }

    pub fn generalized_plant(&self) -> Result<GeneralizedPlant, ConfigError> {
        GeneralizedPlant::new(
            to_matrix("synthesis.c_z", &self.synthesis.c_z)?,
            to_matrix("synthesis.d_zu", &self.synthesis.d_zu)?,
        )
        .map_err(|e| ConfigError::Invalid(e.to_string()))
    }

    /// LQR weights `(Q, R)`.
    pub fn lqr_weights(&self) -> Result<(DMatrix<f64>, DMatrix<f64>), ConfigError> {
        Ok((to_matrix("synthesis.q", &self.synthesis.q)?, to_matrix("synthesis.r", &self.synthesis.r)?))
    }

    /// Closed-loop initial plant state.
    pub fn initial_state(&self) -> Result<Vec<f64>, ConfigError> {
        match self.plant {
            PlantKind::Duffing => Ok(self.simulation.x0.clone()),
            PlantKind::Kdv => {
                if !self.simulation.x0.is_empty() {
                    return Ok(self.simulation.x0.clone());
                }
                let w = &self.simulation.profile_weights;
                let grid = crate::dynamics::periodic_grid(self.kdv.grid);
                let prof = kdv_initial_profiles(&grid);
                Ok((0..grid.len()).map(|j| (0..3).map(|i| w[i] * prof[i][j]).sum()).collect())
            }
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if !(self.dt > 0.0 && self.dt.is_finite()) {
            return bad(format!("dt must be positive, got {}", self.dt));
        }
        let d = &self.data;
        if d.datasets == 0 {
            return bad("data.datasets must be at least 1".into());
        }
        match self.plant {
            PlantKind::Duffing if d.samples == 0 => return bad("data.samples must be at least 1".into()),
            PlantKind::Kdv if d.trajectories == 0 || d.length < 2 => {
                return bad("data.trajectories >= 1 and data.length >= 2 required".into())
            }
            _ => {}
        }
        for (name, r) in [("data.state_range", d.state_range), ("data.input_range", d.input_range)] {
            if !(r[0] < r[1]) {
                return bad(format!("{name} must have lower < upper"));
            }
        }
        if !(d.noise_variance >= 0.0) || !(self.simulation.noise_variance >= 0.0) {
            return bad("noise variances must be nonnegative".into());
        }
        if self.kdv.grid < 4 || !self.kdv.grid.is_power_of_two() {
            return bad(format!("kdv.grid must be a power of two, got {}", self.kdv.grid));
        }
        let plant = self.plant()?;
        let dict = self.dictionary()?;
        let (n_state, p) = (plant.state_dim(), plant.input_dim());
        if dict.state_dim() != n_state {
            return bad(format!(
                "dictionary expects {}-dimensional states, plant has {n_state}",
                dict.state_dim()
            ));
        }
        let n = dict.dim();
        let gp = self.generalized_plant()?;
        if gp.c_z.ncols() != n || gp.d_zu.ncols() != p {
            return bad(format!(
                "C_z must have {n} columns and D_zu {p}; got {} and {}",
                gp.c_z.ncols(),
                gp.d_zu.ncols()
            ));
        }
        let (q, r) = self.lqr_weights()?;
        if q.shape() != (n, n) || r.shape() != (p, p) {
            return bad(format!("Q must be {n}x{n} and R {p}x{p}"));
        }
        let fit = self.fit_options()?;
        if let Some(bw) = &fit.b_w {
            if bw.nrows() != n {
                return bad(format!("model.b_w must have {n} rows"));
            }
        }
        let available: usize = self
            .polytope
            .blocks
            .iter()
            .collect::<std::collections::BTreeSet<_>>()
            .iter()
            .map(|b| match b {
                Block::A => n * n,
                Block::B => n * p,
                Block::Bw => n * fit.b_w.as_ref().map_or(1, |m| m.ncols()),
            })
            .sum();
        if self.polytope.h > available {
            return bad(format!("polytope.h = {} exceeds the {available} selectable entries", self.polytope.h));
        }
        if self.polytope.h > 16 {
            return bad("polytope.h above 16 gives more than 65536 vertices".into());
        }
        match self.plant {
            PlantKind::Duffing if self.simulation.x0.len() != n_state => {
                return bad(format!("simulation.x0 must have {n_state} entries"));
            }
            PlantKind::Kdv if self.simulation.x0.is_empty() && self.simulation.profile_weights.len() != 3 => {
                return bad("simulation.profile_weights must have 3 entries".into());
            }
            PlantKind::Kdv if !self.simulation.x0.is_empty() && self.simulation.x0.len() != n_state => {
                return bad(format!("simulation.x0 must have {n_state} entries"));
            }
            _ => {}
        }
        if !(self.synthesis.margin > 0.0) || !(self.synthesis.tol > 0.0) {
            return bad("synthesis.margin and synthesis.tol must be positive".into());
        }
        Ok(())
    }
}

fn to_matrix(name: &str, rows: &[Vec<f64>]) -> Result<DMatrix<f64>, ConfigError> {
    let r = rows.len();
    let c = rows.first().map_or(0, |x| x.len());
    if r == 0 || c == 0 || rows.iter().any(|x| x.len() != c) {
        return Err(ConfigError::Invalid(format!("{name} must be a non-empty rectangular matrix")));
    }
    Ok(DMatrix::from_row_iterator(r, c, rows.iter().flatten().copied()))
}

fn merge(base: &mut toml::Value, over: toml::Value) {
    match (base, over) {
        (toml::Value::Table(b), toml::Value::Table(o)) => {
            for (k, v) in o {
                match b.get_mut(&k) {
                    Some(slot) if slot.is_table() && v.is_table() => merge(slot, v),
                    _ => {
                        b.insert(k, v);
                    }
                }
            }
        }
        (b, o) => *b = o,
    }
}

/// `a.b.c=value`; the value is parsed as TOML and falls back to a string.
pub fn apply_override(root: &mut toml::Value, spec: &str) -> Result<(), ConfigError> {
    let (key, raw) = spec.split_once('=').ok_or_else(|| ConfigError::Override(spec.to_string()))?;
    let key = key.trim();
    if key.is_empty() {
        return Err(ConfigError::Override(spec.to_string()));
    }
    let raw = raw.trim();
    let value = format!("v = {raw}")
        .parse::<toml::Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()));
    let parts: Vec<&str> = key.split('.').collect();
    let mut cur = root;
    for part in &parts[..parts.len() - 1] {
        let table = cur
            .as_table_mut()
            .ok_or_else(|| ConfigError::Invalid(format!("`{key}`: `{part}` is not a table")))?;
        cur = table
            .entry(part.to_string())
            .or_insert_with(|| toml::Value::Table(Default::default()));
    }
    let table = cur
        .as_table_mut()
        .ok_or_else(|| ConfigError::Invalid(format!("`{key}` does not name a table field")))?;
    table.insert(parts[parts.len() - 1].to_string(), value);
    Ok(())
}

fn dataset_rng(seed: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(index as u64 + 1);
    rng
}

fn noisy(rng: &mut ChaCha8Rng, x: &[f64], std: f64) -> Vec<f64> {
    if std == 0.0 {
        return x.to_vec();
    }
    x.iter()
        .map(|v| {
            let e: f64 = StandardNormal.sample(rng);
            v + std * e
        })
        .collect()
}

fn uniform(rng: &mut ChaCha8Rng, n: usize, range: [f64; 2]) -> Vec<f64> {
    (0..n).map(|_| rng.gen_range(range[0]..range[1])).collect()
}

fn collect_one(cfg: &ExperimentConfig, plant: &dyn Plant, index: usize) -> Result<SnapshotDataset, DynamicsError> {
    let mut rng = dataset_rng(cfg.seed, index);
    let d = &cfg.data;
    let std = d.noise_variance.sqrt();
    let (n, p) = (plant.state_dim(), plant.input_dim());
    let mut segments = Vec::new();
    let sampler;
    match cfg.plant {
        PlantKind::Duffing => {
            sampler = format!(
                "one-step pairs, x ~ U{:?}^{n}, u ~ U{:?}^{p}, noise variance {}",
                d.state_range, d.input_range, d.noise_variance
            );
            for _ in 0..d.samples {
                let x = uniform(&mut rng, n, d.state_range);
                let u = uniform(&mut rng, p, d.input_range);
                let y = plant.step(&PlantState::new(x.clone()), &u, cfg.dt)?;
                let xm = noisy(&mut rng, &x, std);
                let ym = noisy(&mut rng, &y.values, std);
                segments.push(Segment {
                    states: vec![xm, ym],
                    inputs: vec![u],
                });
            }
        }
        PlantKind::Kdv => {
            sampler = format!(
                "{} trajectories x {} states, initial profile weights ~ Dirichlet(1,1,1), u ~ U{:?}^{p}, noise variance {}",
                d.trajectories, d.length, d.input_range, d.noise_variance
            );
            let grid = crate::dynamics::periodic_grid(n);
            let prof = kdv_initial_profiles(&grid);
            for _ in 0..d.trajectories {
                let e: Vec<f64> = (0..3).map(|_| Exp1.sample(&mut rng)).collect();
                let total: f64 = e.iter().sum();
                let w: Vec<f64> = e.iter().map(|v| v / total).collect();
                let y0: Vec<f64> = (0..n).map(|j| (0..3).map(|i| w[i] * prof[i][j]).sum()).collect();
                let mut state = PlantState::new(y0);
                let mut states = vec![noisy(&mut rng, &state.values, std)];
                let mut inputs = Vec::with_capacity(d.length - 1);
                for _ in 1..d.length {
                    let u = uniform(&mut rng, p, d.input_range);
                    state = plant.step(&state, &u, cfg.dt)?;
                    states.push(noisy(&mut rng, &state.values, std));
                    inputs.push(u);
                }
                segments.push(Segment { states, inputs });
            }
        }
    }
    Ok(SnapshotDataset {
        label: format!("D{}", index + 1),
        dt: cfg.dt,
        sampler,
        seed: cfg.seed,
        segments,
    })
}

/// `data.datasets` datasets, each from its own seeded stream, collected in
/// parallel.
pub fn collect_datasets(cfg: &ExperimentConfig) -> Result<Vec<SnapshotDataset>, ExperimentError> {
    let plant = cfg.plant()?;
    let plant: &dyn Plant = plant.as_ref();
    let results: Vec<Result<SnapshotDataset, DynamicsError>> = std::thread::scope(|s| {
        let handles: Vec<_> = (0..cfg.data.datasets)
            .map(|i| s.spawn(move || collect_one(cfg, plant, i)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("collector thread")).collect()
    });
    results
        .into_iter()
        .map(|r| r.map_err(|source| ExperimentError::Dynamics { stage: "collect", source }))
        .collect()
}

pub fn fit_datasets(
    datasets: &[SnapshotDataset],
    dict: &Dictionary,
    opts: &FitOptions,
) -> Result<Vec<LinearPredictor>, ExperimentError> {
    let results: Vec<Result<LinearPredictor, EdmdError>> = std::thread::scope(|s| {
        let handles: Vec<_> = datasets
            .iter()
            .map(|d| s.spawn(move || fit_predictor(&assemble(d, dict)?, opts)))
            .collect();
        handles.into_iter().map(|h| h.join().expect("fit thread")).collect()
    });
    results
        .into_iter()
        .map(|r| r.map_err(|source| ExperimentError::Edmd { stage: "fit", source }))
        .collect()
}

/// Part of the state a controller is meant to regulate: the probe samples
/// for probe dictionaries, the state itself otherwise.
pub fn regulated(dict: &Dictionary, x: &[f64]) -> Vec<f64> {
    match dict {
        Dictionary::Probes { indices, .. } => indices.iter().map(|&i| x[i]).collect(),
        Dictionary::Monomials { .. } => x.to_vec(),
    }
}

/// Running `Σ_{j≤k} ‖x_j‖²`.
pub fn l2_series(states: &[Vec<f64>]) -> Vec<f64> {
    let mut acc = 0.0;
    states
        .iter()
        .map(|x| {
            acc += x.iter().map(|v| v * v).sum::<f64>();
            acc
        })
        .collect()
}

pub fn l2_metric(states: &[Vec<f64>]) -> f64 {
    l2_series(states).last().copied().unwrap_or(0.0)
}

/// First sample index at which the norm has dropped to half its initial
/// value.
pub fn half_life(norms: &[f64]) -> Option<usize> {
    let first = *norms.first()?;
    norms.iter().position(|&v| v <= 0.5 * first)
}

/// A deployable gain with the lift it expects.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Controller {
    pub method: Method,
    #[serde(with = "crate::linalg::matrix_serde")]
    pub gain: DMatrix<f64>,
    /// Certified H2² bound, when the method gives one.
    pub bound: Option<f64>,
    pub dictionary: Option<Dictionary>,
    /// Hash of the model or polytope the gain was designed on.
    pub source: String,
    pub synthesis: Option<SynthesisResult>,
    pub lqr: Option<LqrResult>,
}

impl Controller {
    pub fn from_synthesis(res: SynthesisResult, dictionary: Option<Dictionary>, source: String) -> Self {
        Self {
            method: res.method,
            gain: res.gain.clone(),
            bound: Some(res.j_syn),
            dictionary,
            source,
            synthesis: Some(res),
            lqr: None,
        }
    }

    pub fn from_lqr(res: LqrResult, dictionary: Option<Dictionary>, source: String) -> Self {
        Self {
            method: Method::Lqr,
            gain: res.gain.clone(),
            bound: None,
            dictionary,
            source,
            synthesis: None,
            lqr: Some(res),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexPrediction {
    pub vertex: usize,
    pub rms_per_feature: Vec<f64>,
    pub rms: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VertexPredictionReport {
    pub dataset: String,
    pub in_sample: bool,
    pub vertices: Vec<VertexPrediction>,
}

/// Open-loop rollout error of each vertex model along every recorded
/// segment, started from the lifted first state of the segment.
pub fn vertex_prediction_report(
    poly: &PolytopeModel,
    dataset: &SnapshotDataset,
    dict: &Dictionary,
    in_sample: bool,
) -> Result<VertexPredictionReport, ObservableError> {
    let n = dict.dim();
    let mut lifted: Vec<Vec<Vec<f64>>> = Vec::with_capacity(dataset.segments.len());
    for s in &dataset.segments {
        lifted.push(s.states.iter().map(|x| dict.evaluate(x)).collect::<Result<_, _>>()?);
    }
    let vertices = poly
        .vertices
        .iter()
        .enumerate()
        .map(|(vi, v)| {
            let mut sq = vec![0.0; n];
            let mut count = 0usize;
            for (seg, g) in dataset.segments.iter().zip(&lifted) {
                let mut pred = nalgebra::DVector::from_column_slice(&g[0]);
                for (k, u) in seg.inputs.iter().enumerate() {
                    pred = &v.a * &pred + &v.b * nalgebra::DVector::from_column_slice(u);
                    for (i, e) in sq.iter_mut().enumerate() {
                        *e += (pred[i] - g[k + 1][i]).powi(2);
                    }
                    count += 1;
                }
            }
            let rms_per_feature: Vec<f64> = sq.iter().map(|e| (e / count.max(1) as f64).sqrt()).collect();
            let rms = (sq.iter().sum::<f64>() / (count.max(1) * n) as f64).sqrt();
            VertexPrediction {
                vertex: vi,
                rms_per_feature,
                rms,
            }
        })
        .collect();
    Ok(VertexPredictionReport {
        dataset: dataset.label.clone(),
        in_sample,
        vertices,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub label: String,
    pub id: String,
    pub pairs: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictorSummary {
    pub dataset: String,
    pub residual: f64,
    pub open_loop_spectral_radius: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PolytopeSummary {
    pub h: usize,
    pub varied: Vec<EntryId>,
    pub spread: SpreadReport,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ControllerReport {
    pub method: Method,
    #[serde(with = "crate::linalg::matrix_serde")]
    pub gain: DMatrix<f64>,
    pub bound: Option<f64>,
    /// Certified H2² of the gain on each fitted model; `None` where the
    /// loop is unstable.
    pub model_bounds: Vec<Option<f64>>,
    pub outcome: Outcome,
    pub l2: f64,
    pub l2_series: Vec<f64>,
    pub peak_first: f64,
    pub final_norm: f64,
    pub half_life_steps: Option<usize>,
    pub max_input: f64,
    pub trajectory_file: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub name: String,
    pub plant: PlantKind,
    pub dt: f64,
    pub seed: u64,
    pub config_hash: String,
    pub datasets: Vec<DatasetSummary>,
    pub predictors: Vec<PredictorSummary>,
    pub polytope: PolytopeSummary,
    pub vertex_prediction: VertexPredictionReport,
    pub controllers: Vec<ControllerReport>,
}

impl ExperimentReport {
    pub fn controller(&self, m: Method) -> Option<&ControllerReport> {
        self.controllers.iter().find(|c| c.method == m)
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        let p = |s: &mut String, line: String| {
            s.push_str(&line);
            s.push('\n');
        };
        p(&mut s, format!("experiment {} ({:?}), dt = {}, seed = {}", self.name, self.plant, self.dt, self.seed));
        for (d, m) in self.datasets.iter().zip(&self.predictors) {
            p(
                &mut s,
                format!(
                    "  {}: {} pairs, residual {:.4e}, open-loop rho {:.4}",
                    d.label, d.pairs, m.residual, m.open_loop_spectral_radius
                ),
            );
        }
        let varied: Vec<String> = self
            .polytope
            .varied
            .iter()
            .map(|e| format!("{:?}[{},{}]", e.block, e.row + 1, e.col + 1))
            .collect();
        p(&mut s, format!("  polytope h = {}, varied {}", self.polytope.h, varied.join(" ")));
        p(
            &mut s,
            format!(
                "  {:<8} {:>12} {:>12} {:>10} {:>10} {:>8} {:>10}",
                "method", "bound", "l2", "peak", "final", "t_half", "outcome"
            ),
        );
        for c in &self.controllers {
            p(
                &mut s,
                format!(
                    "  {:<8} {:>12} {:>12.5} {:>10.5} {:>10.3e} {:>8} {:>10}",
                    c.method.to_string(),
                    c.bound.map_or("-".into(), |b| format!("{b:.5}")),
                    c.l2,
                    c.peak_first,
                    c.final_norm,
                    c.half_life_steps.map_or("-".into(), |k| format!("{:.2}", k as f64 * self.dt)),
                    match c.outcome {
                        Outcome::Completed => "ok",
                        Outcome::Diverged { .. } => "diverged",
                    }
                ),
            );
        }
        s
    }
}

/// Everything produced by a run. Trajectories are kept in memory and, when
/// an output directory is given, written as CSV.
pub struct ExperimentRun {
    pub report: ExperimentReport,
    pub datasets: Vec<SnapshotDataset>,
    pub predictors: Vec<LinearPredictor>,
    pub polytope: PolytopeModel,
    pub controllers: Vec<Controller>,
    pub trajectories: Vec<Trajectory>,
}

fn syn_err(stage: &'static str) -> impl Fn(SynthesisError) -> ExperimentError {
    move |source| ExperimentError::Synthesis { stage, source }
}

fn write_text(path: &Path, text: &str) -> Result<(), ExperimentError> {
    std::fs::write(path, text).map_err(|source| ExperimentError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Simulate a gain on the configured plant from the configured initial
/// condition.
pub fn simulate_controller(cfg: &ExperimentConfig, gain: &DMatrix<f64>, run_index: u64) -> Result<Trajectory, ExperimentError> {
    let plant = cfg.plant()?;
    let dict = cfg.dictionary()?;
    let x0 = cfg.initial_state()?;
    let mut opts = ClosedLoopOptions::new(cfg.dt, cfg.simulation.steps);
    opts.blowup = cfg.simulation.blowup;
    if cfg.simulation.noise_variance > 0.0 {
        let seed = if cfg.simulation.noise_per_controller {
            cfg.simulation.noise_seed.wrapping_add(run_index)
        } else {
            cfg.simulation.noise_seed
        };
        opts.noise = Some(NoiseSpec::new(cfg.simulation.noise_variance, seed));
    }
    simulate_closed_loop(plant.as_ref(), &dict, gain, &x0, &opts)
        .map_err(|source| ExperimentError::Dynamics { stage: "simulate", source })
}

pub fn controller_report(
    dict: &Dictionary,
    ctrl: &Controller,
    traj: &Trajectory,
    model_bounds: Vec<Option<f64>>,
    file: String,
) -> ControllerReport {
    let reg: Vec<Vec<f64>> = traj.states.iter().map(|x| regulated(dict, x)).collect();
    let norms: Vec<f64> = reg.iter().map(|x| x.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let series = l2_series(&reg);
    ControllerReport {
        method: ctrl.method,
        gain: ctrl.gain.clone(),
        bound: ctrl.bound,
        model_bounds,
        outcome: traj.outcome.clone(),
        l2: series.last().copied().unwrap_or(0.0),
        l2_series: series,
        peak_first: reg.iter().map(|x| x[0].abs()).fold(0.0, f64::max),
        final_norm: norms.last().copied().unwrap_or(0.0),
        half_life_steps: half_life(&norms),
        max_input: traj.inputs.iter().flatten().map(|v| v.abs()).fold(0.0, f64::max),
        trajectory_file: file,
    }
}

/// Full pipeline. With `out` set, artifacts are written as each stage
/// finishes, so a failure leaves the earlier stages on disk.
pub fn run_experiment(cfg: &ExperimentConfig, out: Option<&Path>) -> Result<ExperimentRun, ExperimentError> {
    cfg.validate()?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| ExperimentError::Io {
            path: dir.display().to_string(),
            source,
        })?;
        write_text(&dir.join("config.toml"), &cfg.to_toml())?;
    }
    let dict = cfg.dictionary()?;
    let datasets = collect_datasets(cfg)?;
    let predictors = fit_datasets(&datasets, &dict, &cfg.fit_options()?)?;
    if let Some(dir) = out {
        artifact::save(&dir.join("predictors.json"), "predictors", &predictors)?;
    }
    let polytope = build_polytope(&predictors, cfg.polytope.h, &cfg.polytope.blocks)?;
    if let Some(dir) = out {
        artifact::save(&dir.join("polytope.json"), "polytope", &polytope)?;
    }

    let plant = cfg.generalized_plant()?;
    let sopts = cfg.synthesis_options();
    let d1 = &predictors[0];
    let d1_hash = artifact::content_hash(d1);
    let poly_hash = artifact::content_hash(&polytope);
    let robust = robust_synthesis(&polytope, &plant, &sopts).map_err(syn_err("synthesize-robust"))?;
    let nominal = nominal_synthesis(d1, &plant, &sopts).map_err(syn_err("synthesize-nominal"))?;
    let (q, r) = cfg.lqr_weights()?;
    let lqr = lqr_gain(&d1.a, &d1.b, &q, &r).map_err(syn_err("synthesize-lqr"))?;
    let controllers = vec![
        Controller::from_synthesis(robust, Some(dict.clone()), poly_hash),
        Controller::from_synthesis(nominal, Some(dict.clone()), d1_hash.clone()),
        Controller::from_lqr(lqr, Some(dict.clone()), d1_hash),
    ];
    if let Some(dir) = out {
        for c in &controllers {
            artifact::save(&dir.join(format!("gain_{}.json", c.method)), "controller", c)?;
        }
    }

    let mut trajectories = Vec::new();
    let mut reports = Vec::new();
    for (i, c) in controllers.iter().enumerate() {
        let traj = simulate_controller(cfg, &c.gain, i as u64)?;
        let bounds = predictors
            .iter()
            .map(|m| evaluate_h2_bound(m, &plant, &c.gain, &sopts.solver).ok().map(|cert| cert.j))
            .collect();
        let file = format!("trajectory_{}.csv", c.method);
        if let Some(dir) = out {
            let path = dir.join(&file);
            let f = std::fs::File::create(&path).map_err(|source| ExperimentError::Io {
                path: path.display().to_string(),
                source,
            })?;
            traj.write_csv(std::io::BufWriter::new(f))
                .map_err(|source| ExperimentError::Dynamics { stage: "write", source })?;
        }
        reports.push(controller_report(&dict, c, &traj, bounds, file));
        trajectories.push(traj);
    }

    let report = ExperimentReport {
        name: cfg.name.clone(),
        plant: cfg.plant,
        dt: cfg.dt,
        seed: cfg.seed,
        config_hash: artifact::content_hash(cfg),
        datasets: datasets
            .iter()
            .map(|d| DatasetSummary {
                label: d.label.clone(),
                id: d.id(),
                pairs: d.len(),
            })
            .collect(),
        predictors: datasets
            .iter()
            .zip(&predictors)
            .map(|(d, m)| PredictorSummary {
                dataset: d.label.clone(),
                residual: m.residual,
                open_loop_spectral_radius: spectral_radius(&m.a),
            })
            .collect(),
        polytope: PolytopeSummary {
            h: polytope.h,
            varied: polytope.varied.clone(),
            spread: spread_report(&polytope),
        },
        vertex_prediction: vertex_prediction_report(&polytope, &datasets[0], &dict, true)
            .map_err(|e| ExperimentError::Edmd {
                stage: "vertex-prediction",
                source: e.into(),
            })?,
        controllers: reports,
    };
    if let Some(dir) = out {
        artifact::save(&dir.join("report.json"), "report", &report)?;
        write_text(&dir.join("summary.txt"), &report.summary())?;
        write_text(&dir.join("l2_series.csv"), &l2_csv(&report))?;
    }
    Ok(ExperimentRun {
        report,
        datasets,
        predictors,
        polytope,
        controllers,
        trajectories,
    })
}

fn l2_csv(report: &ExperimentReport) -> String {
    let mut s = String::from("t");
    for c in &report.controllers {
        s.push_str(&format!(",{}", c.method));
    }
    s.push('\n');
    let len = report.controllers.iter().map(|c| c.l2_series.len()).max().unwrap_or(0);
    for k in 0..len {
        s.push_str(&format!("{:?}", k as f64 * report.dt));
        for c in &report.controllers {
            match c.l2_series.get(k) {
                Some(v) => s.push_str(&format!(",{v:?}")),
                None => s.push(','),
            }
        }
        s.push('\n');
    }
    s
}
