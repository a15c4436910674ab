use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use koopman_h2::artifact;
use koopman_h2::dynamics::Trajectory;
use koopman_h2::edmd::{assemble, fit_predictor, LinearPredictor, SnapshotDataset};
use koopman_h2::experiments::{
    collect_datasets, controller_report, run_experiment, simulate_controller, ConfigError, Controller,
    ExperimentConfig, ExperimentError, ExperimentReport,
};
use koopman_h2::polytope::{build_polytope, spread_report, PolytopeModel};
use koopman_h2::synthesis::{
    evaluate_h2_bound, lqr_gain, nominal_synthesis, robust_problem_dump, robust_synthesis, SynthesisError,
};
use serde::Serialize;

const EXIT_INFEASIBLE: u8 = 2;
const EXIT_CONFIG: u8 = 3;

#[derive(Parser)]
#[command(name = "koopman-h2", version, about = "Robust H2 control from data-driven Koopman predictors")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone, Debug)]
struct ConfigArgs {
    /// TOML configuration file, merged over the preset
    #[arg(long, short = 'c')]
    config: Option<PathBuf>,
    /// Built-in preset: duffing or kdv
    #[arg(long)]
    preset: Option<String>,
    /// Override any configuration field, e.g. --set polytope.h=3
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl ConfigArgs {
    fn load(&self) -> Result<ExperimentConfig, ConfigError> {
        ExperimentConfig::load(self.preset.as_deref(), self.config.as_deref(), &self.set)
    }
}

#[derive(Subcommand)]
enum Cmd {
    /// Simulate the plant and write one dataset file per collection run
    Collect {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: <output_dir>/data)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fit one linear predictor per dataset
    Fit {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Dataset files written by `collect`
        #[arg(long, required = true, num_args = 1..)]
        data: Vec<PathBuf>,
        /// Default: <output_dir>/predictors.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Build the vertex polytope from fitted predictors
    Polytope {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        predictors: PathBuf,
        /// Default: <output_dir>/polytope.json
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Compute a state-feedback gain
    Synthesize {
        #[command(subcommand)]
        method: SynthCmd,
    },
    /// Certified H2 bound of a gain on every predictor or polytope vertex
    Evaluate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        gain: PathBuf,
        #[arg(long, conflicts_with = "polytope", required_unless_present = "polytope")]
        predictors: Option<PathBuf>,
        #[arg(long)]
        polytope: Option<PathBuf>,
        /// Also write the bounds as JSON
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a gain in closed loop on the true plant and write the trajectory
    Simulate {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        gain: PathBuf,
        /// Trajectory CSV (default: <output_dir>/trajectory_<method>.csv)
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Print the summary of a finished run and recheck it against its CSVs
    Report {
        /// Directory written by `reproduce`
        dir: PathBuf,
    },
    /// Run the full pipeline for one of the benchmark plants
    Reproduce {
        which: Benchmark,
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Output directory (default: output_dir from the config)
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Subcommand)]
enum SynthCmd {
    /// Common gain for every polytope vertex
    Robust {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        polytope: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
        /// Also write the SDP in plain text
        #[arg(long)]
        dump: Option<PathBuf>,
    },
    /// H2 gain for a single predictor
    Nominal {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        predictors: PathBuf,
        /// Which predictor in the file
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Discrete LQR gain for a single predictor
    Lqr {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long)]
        predictors: PathBuf,
        #[arg(long, default_value_t = 0)]
        index: usize,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Benchmark {
    Duffing,
    Kdv,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        if cause.is::<ConfigError>() {
            return EXIT_CONFIG;
        }
        if let Some(x) = cause.downcast_ref::<ExperimentError>() {
            if matches!(x, ExperimentError::Config(_)) {
                return EXIT_CONFIG;
            }
            if x.is_infeasible() {
                return EXIT_INFEASIBLE;
            }
        }
        if let Some(SynthesisError::Infeasible(_)) = cause.downcast_ref::<SynthesisError>() {
            return EXIT_INFEASIBLE;
        }
    }
    1
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Collect { cfg, out } => collect(&cfg.load()?, out),
        Cmd::Fit { cfg, data, out } => fit(&cfg.load()?, &data, out),
        Cmd::Polytope { cfg, predictors, out } => polytope(&cfg.load()?, &predictors, out),
        Cmd::Synthesize { method } => synthesize(method),
        Cmd::Evaluate {
            cfg,
            gain,
            predictors,
            polytope,
            out,
        } => evaluate(&cfg.load()?, &gain, predictors.as_deref(), polytope.as_deref(), out),
        Cmd::Simulate { cfg, gain, out } => simulate(&cfg.load()?, &gain, out),
        Cmd::Report { dir } => report(&dir),
        Cmd::Reproduce { which, mut cfg, out } => {
            let name = match which {
                Benchmark::Duffing => "duffing",
                Benchmark::Kdv => "kdv",
            };
            // the benchmark name wins over a `plant` in the file
            cfg.set.insert(0, format!("plant={name}"));
            reproduce(&cfg.load()?, out)
        }
    }
}

fn collect(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.join("data"));
    let datasets = collect_datasets(cfg)?;
    for d in &datasets {
        let path = dir.join(format!("{}.json", d.label));
        artifact::save(&path, "dataset", d)?;
        println!("{}: {} pairs -> {}", d.label, d.len(), path.display());
    }
    Ok(())
}

fn fit(cfg: &ExperimentConfig, data: &[PathBuf], out: Option<PathBuf>) -> Result<()> {
    let dict = cfg.dictionary()?;
    let opts = cfg.fit_options()?;
    let mut models = Vec::new();
    for path in data {
        let ds: SnapshotDataset =
            artifact::load(path, "dataset").with_context(|| format!("loading {}", path.display()))?;
        let s = assemble(&ds, &dict).with_context(|| format!("assembling {}", ds.label))?;
        let m = fit_predictor(&s, &opts).with_context(|| format!("fitting {}", ds.label))?;
        println!("{}: residual {:.6e}{}", ds.label, m.residual, if m.degenerate { " (degenerate)" } else { "" });
        models.push(m);
    }
    let path = out.unwrap_or_else(|| cfg.output_dir.join("predictors.json"));
    artifact::save(&path, "predictors", &models)?;
    println!("-> {}", path.display());
    Ok(())
}

fn load_predictors(path: &Path) -> Result<Vec<LinearPredictor>> {
    artifact::load(path, "predictors").with_context(|| format!("loading {}", path.display()))
}

fn polytope(cfg: &ExperimentConfig, predictors: &Path, out: Option<PathBuf>) -> Result<()> {
    let models = load_predictors(predictors)?;
    let poly = build_polytope(&models, cfg.polytope.h, &cfg.polytope.blocks)?;
    let spread = spread_report(&poly);
    for e in spread.entries.iter().take(cfg.polytope.h.max(5)) {
        println!(
            "{:?}[{},{}] spread {:.6e}",
            e.entry.block,
            e.entry.row + 1,
            e.entry.col + 1,
            e.spread
        );
    }
    println!("spread histogram (bin width {:.3e}): {:?}", spread.bin_width, spread.histogram);
    let path = out.unwrap_or_else(|| cfg.output_dir.join("polytope.json"));
    artifact::save(&path, "polytope", &poly)?;
    println!("{} vertices -> {}", poly.vertices.len(), path.display());
    Ok(())
}

fn pick(models: &[LinearPredictor], index: usize) -> Result<&LinearPredictor> {
    models
        .get(index)
        .ok_or_else(|| anyhow!(ConfigError::Invalid(format!("predictor index {index} out of range ({} in file)", models.len()))))
}

fn save_controller(cfg: &ExperimentConfig, c: &Controller, out: Option<PathBuf>) -> Result<()> {
    let path = out.unwrap_or_else(|| cfg.output_dir.join(format!("gain_{}.json", c.method)));
    artifact::save(&path, "controller", c)?;
    match c.bound {
        Some(j) => println!("{}: bound {j:.6}, gain {:?}", c.method, c.gain.as_slice()),
        None => println!("{}: gain {:?}", c.method, c.gain.as_slice()),
    }
    println!("-> {}", path.display());
    Ok(())
}

fn synthesize(cmd: SynthCmd) -> Result<()> {
    match cmd {
        SynthCmd::Robust {
            cfg,
            polytope,
            out,
            dump,
        } => {
            let cfg = cfg.load()?;
            let poly: PolytopeModel =
                artifact::load(&polytope, "polytope").with_context(|| format!("loading {}", polytope.display()))?;
            let plant = cfg.generalized_plant()?;
            let opts = cfg.synthesis_options();
            if let Some(path) = dump {
                std::fs::write(&path, robust_problem_dump(&poly, &plant, &opts)?)
                    .with_context(|| format!("writing {}", path.display()))?;
            }
            let res = robust_synthesis(&poly, &plant, &opts)?;
            let c = Controller::from_synthesis(res, poly.dictionary.clone(), artifact::content_hash(&poly));
            save_controller(&cfg, &c, out)
        }
        SynthCmd::Nominal {
            cfg,
            predictors,
            index,
            out,
        } => {
            let cfg = cfg.load()?;
            let models = load_predictors(&predictors)?;
            let m = pick(&models, index)?;
            let res = nominal_synthesis(m, &cfg.generalized_plant()?, &cfg.synthesis_options())?;
            let c = Controller::from_synthesis(res, m.dictionary.clone(), artifact::content_hash(m));
            save_controller(&cfg, &c, out)
        }
        SynthCmd::Lqr {
            cfg,
            predictors,
            index,
            out,
        } => {
            let cfg = cfg.load()?;
            let models = load_predictors(&predictors)?;
            let m = pick(&models, index)?;
            let (q, r) = cfg.lqr_weights()?;
            let res = lqr_gain(&m.a, &m.b, &q, &r)?;
            let c = Controller::from_lqr(res, m.dictionary.clone(), artifact::content_hash(m));
            save_controller(&cfg, &c, out)
        }
    }
}

#[derive(Serialize)]
struct Evaluation {
    model: usize,
    /// `None` when the closed loop is unstable or the solve failed
    bound: Option<f64>,
    spectral_radius: Option<f64>,
    error: Option<String>,
}

fn evaluate(
    cfg: &ExperimentConfig,
    gain: &Path,
    predictors: Option<&Path>,
    polytope: Option<&Path>,
    out: Option<PathBuf>,
) -> Result<()> {
    let ctrl: Controller = artifact::load(gain, "controller").with_context(|| format!("loading {}", gain.display()))?;
    let models = match (predictors, polytope) {
        (Some(p), _) => load_predictors(p)?,
        (None, Some(p)) => {
            let poly: PolytopeModel = artifact::load(p, "polytope").with_context(|| format!("loading {}", p.display()))?;
            poly.vertices.iter().map(|v| v.to_predictor()).collect()
        }
        (None, None) => bail!(ConfigError::Invalid("either --predictors or --polytope is required".into())),
    };
    let plant = cfg.generalized_plant()?;
    let solver = cfg.synthesis_options().solver;
    let rows: Vec<Evaluation> = models
        .iter()
        .enumerate()
        .map(|(i, m)| match evaluate_h2_bound(m, &plant, &ctrl.gain, &solver) {
            Ok(cert) => Evaluation {
                model: i,
                bound: Some(cert.j),
                spectral_radius: Some(cert.spectral_radius),
                error: None,
            },
            Err(e) => Evaluation {
                model: i,
                bound: None,
                spectral_radius: match e {
                    SynthesisError::Unstable(r) => Some(r),
                    _ => None,
                },
                error: Some(e.to_string()),
            },
        })
        .collect();
    for r in &rows {
        match (&r.bound, &r.error) {
            (Some(j), _) => println!("model {}: bound {j:.6}, rho {:.6}", r.model, r.spectral_radius.unwrap_or(f64::NAN)),
            (None, Some(e)) => println!("model {}: {e}", r.model),
            _ => {}
        }
    }
    if let Some(path) = out {
        artifact::save(&path, "evaluation", &rows)?;
        println!("-> {}", path.display());
    }
    Ok(())
}

fn simulate(cfg: &ExperimentConfig, gain: &Path, out: Option<PathBuf>) -> Result<()> {
    let ctrl: Controller = artifact::load(gain, "controller").with_context(|| format!("loading {}", gain.display()))?;
    if let Some(d) = &ctrl.dictionary {
        if *d != cfg.dictionary()? {
            bail!(ConfigError::Invalid(format!(
                "gain was designed for dictionary `{}`, config uses `{}`",
                d.name(),
                cfg.dictionary()?.name()
            )));
        }
    }
    let traj = simulate_controller(cfg, &ctrl.gain, 0)?;
    let path = out.unwrap_or_else(|| cfg.output_dir.join(format!("trajectory_{}.csv", ctrl.method)));
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let f = std::fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?;
    traj.write_csv(std::io::BufWriter::new(f))?;
    let dict = cfg.dictionary()?;
    let rep = controller_report(&dict, &ctrl, &traj, Vec::new(), path.display().to_string());
    println!(
        "{}: l2 {:.6}, peak {:.6}, final {:.3e}, {:?} -> {}",
        ctrl.method,
        rep.l2,
        rep.peak_first,
        rep.final_norm,
        rep.outcome,
        path.display()
    );
    Ok(())
}

fn report(dir: &Path) -> Result<()> {
    let rep: ExperimentReport = artifact::load(&dir.join("report.json"), "report")?;
    let cfg = ExperimentConfig::load(None, Some(&dir.join("config.toml")), &[])?;
    let dict = cfg.dictionary()?;
    print!("{}", rep.summary());
    let mut mismatches = Vec::new();
    for c in &rep.controllers {
        let path = dir.join(&c.trajectory_file);
        let f = std::fs::File::open(&path).with_context(|| format!("opening {}", path.display()))?;
        let mut traj = Trajectory::read_csv(std::io::BufReader::new(f))?;
        traj.outcome = c.outcome.clone();
        let ctrl = Controller {
            method: c.method,
            gain: c.gain.clone(),
            bound: c.bound,
            dictionary: Some(dict.clone()),
            source: String::new(),
            synthesis: None,
            lqr: None,
        };
        let again = controller_report(&dict, &ctrl, &traj, c.model_bounds.clone(), c.trajectory_file.clone());
        if again != *c {
            mismatches.push(c.method.to_string());
        }
    }
    if !mismatches.is_empty() {
        bail!("metrics for {} do not match their trajectory files", mismatches.join(", "));
    }
    println!("all metrics recomputed from {} trajectory files", rep.controllers.len());
    Ok(())
}

fn reproduce(cfg: &ExperimentConfig, out: Option<PathBuf>) -> Result<()> {
    let dir = out.unwrap_or_else(|| cfg.output_dir.clone());
    let run = run_experiment(cfg, Some(&dir))?;
    print!("{}", run.report.summary());
    println!("-> {}", dir.display());
    Ok(())
}
