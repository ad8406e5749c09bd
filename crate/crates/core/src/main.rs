use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde_json::json;

use pgstab::annealing::{run_annealing, AnnealingConfig, AnnealingTrace, Variant};
use pgstab::control::{spectral_radius, LtiSystem, Policy};
use pgstab::harness::output::{
    create_file, write_cartpole_study_csv, write_dim_study_csv, write_dim_trials_csv, write_meta,
    write_roa_csv, write_trace_csv, Meta,
};
use pgstab::harness::verify::{run_all, VerifyMode};
use pgstab::harness::{
    cartpole_lqr_gain, estimate_roa, radius_grid, run_cartpole, run_dim_scaling, two_dim_config,
    two_dim_env, two_dim_noisy_env, BuiltPlant, CartPoleStudy, DimScalingConfig, ExperimentConfig,
    ExperimentKind,
};
use pgstab::rng::StreamKey;
use pgstab::simulator::{CartPole, CartPoleParams};
use pgstab::Error;

#[derive(Parser)]
#[command(
    name = "pgstab",
    version,
    about = "Stabilizing unknown plants by policy gradient with discount annealing"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// JSON experiment file.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    trials: Option<usize>,
    /// Output directory; defaults to the config's `output_dir` or `out/<command>`.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Exact,
    Sampled,
    Noisy,
    Nonlinear,
}

impl From<Mode> for Variant {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Exact => Variant::ExactOracle,
            Mode::Sampled => Variant::Sampled,
            Mode::Noisy => Variant::Noisy,
            Mode::Nonlinear => Variant::Nonlinear,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum VerifyLevel {
    Quick,
    Full,
}

#[derive(Subcommand)]
enum Command {
    /// One annealing run per trial on the 2D example or a custom plant.
    Anneal {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum)]
        mode: Option<Mode>,
    },
    /// Rollouts against state dimension on random plants.
    Dimscaling {
        #[command(flatten)]
        common: Common,
    },
    /// Nonlinear annealing on the cart-pole and region-of-attraction estimates.
    Cartpole {
        #[command(flatten)]
        common: Common,
    },
    /// Region of attraction of a fixed cart-pole gain.
    Roa {
        #[command(flatten)]
        common: Common,
        /// Comma-separated gain `k1,k2,k3,k4`; the LQR gain of the linearization by default.
        #[arg(long, allow_hyphen_values = true)]
        gain: Option<String>,
        #[arg(long, default_value_t = 0.01)]
        step: f64,
        #[arg(long, default_value_t = 2.0)]
        max_radius: f64,
        #[arg(long, default_value_t = 2000)]
        horizon: usize,
    },
    /// Randomized checks of the exact oracles and the discount update.
    Verify {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value = "quick")]
        mode: VerifyLevel,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

/// Errors split into bad input (exit 2) and failed studies (exit 3).
enum Failure {
    Usage(String),
    Study(String),
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        match e {
            Error::Config(_) | Error::InvalidArgument(_) | Error::Dimension { .. } => {
                Failure::Usage(e.to_string())
            }
            other => Failure::Study(other.to_string()),
        }
    }
}

type CliResult = std::result::Result<(), Failure>;

fn load(
    common: &Common,
    expected: ExperimentKind,
) -> std::result::Result<ExperimentConfig, Failure> {
    let cfg = match &common.config {
        Some(path) => ExperimentConfig::from_path(path)?,
        None => ExperimentConfig::preset(expected),
    };
    let ok = cfg.experiment == expected
        || (expected == ExperimentKind::TwoDim && cfg.experiment == ExperimentKind::Custom);
    if !ok {
        return Err(Failure::Usage(format!(
            "config describes a {:?} experiment",
            cfg.experiment
        )));
    }
    if common.trials == Some(0) {
        return Err(Failure::Usage("--trials must be at least 1".into()));
    }
    Ok(cfg)
}

fn out_dir(common: &Common, cfg: &ExperimentConfig, name: &str) -> PathBuf {
    common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| Path::new("out").join(name))
}

fn now_unix() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs())
}

fn finish_meta(
    dir: &Path,
    command: &str,
    seed: u64,
    config: serde_json::Value,
    summary: serde_json::Value,
    started: u64,
    clock: Instant,
) -> CliResult {
    let meta = Meta {
        command: command.into(),
        crate_version: env!("CARGO_PKG_VERSION"),
        seed,
        config,
        summary,
        started_unix_secs: started,
        wall_time_secs: clock.elapsed().as_secs_f64(),
        threads: rayon::current_num_threads(),
    };
    write_meta(dir, &meta)?;
    Ok(())
}

fn final_rho(known: Option<&LtiSystem>, trace: &AnnealingTrace) -> Option<f64> {
    known.and_then(|sys| spectral_radius(&sys.closed_loop(&trace.final_policy).ok()?).ok())
}

fn anneal(common: Common, mode: Option<Mode>) -> CliResult {
    let (started, clock) = (now_unix(), Instant::now());
    let cfg = load(&common, ExperimentKind::TwoDim)?;
    let seed = common.seed.unwrap_or(0);
    let (plant, base): (BuiltPlant, AnnealingConfig) = match cfg.experiment {
        ExperimentKind::Custom => {
            let spec = cfg.system.as_ref().expect("validated");
            let mut a = cfg.annealing.clone().expect("validated");
            if let Some(m) = mode {
                a.variant = m.into();
            }
            if common.seed.is_some() {
                a.rollout.seed = seed;
            }
            (spec.build()?, a)
        }
        _ => {
            let variant: Variant = mode.map_or(Variant::Sampled, Into::into);
            if variant == Variant::Nonlinear {
                return Err(Failure::Usage(
                    "the 2D example is linear; use a custom cart_pole system".into(),
                ));
            }
            let mut a = match &cfg.annealing {
                Some(a) => a.clone(),
                None => two_dim_config(variant, seed)?,
            };
            a.variant = variant;
            if common.seed.is_some() {
                a.rollout.seed = seed;
            }
            let plant = if variant == Variant::Noisy {
                BuiltPlant::Noisy(two_dim_noisy_env())
            } else {
                BuiltPlant::Linear(two_dim_env())
            };
            (plant, a)
        }
    };
    let trials = common.trials.or(cfg.trials).unwrap_or(1);
    let dir = out_dir(&common, &cfg, "anneal");
    let known = plant.known_system();
    let mut rows = Vec::new();
    let mut all_ok = true;
    for t in 0..trials {
        let mut run_cfg = base.clone();
        run_cfg.rollout.seed = base.rollout.seed + t as u64;
        let trace = run_annealing(plant.as_plant(), &run_cfg)?;
        let name = if trials == 1 {
            "trace.csv".to_string()
        } else {
            format!("trace_{t}.csv")
        };
        write_trace_csv(create_file(&dir, &name)?, &trace, known)?;
        let rho = final_rho(known, &trace);
        println!(
            "trial {t} seed {}: {:?} after {} iterations, {} rollouts, final gamma {:.6}{}",
            run_cfg.rollout.seed,
            trace.status,
            trace.outer_iterations(),
            trace.total_rollouts,
            trace.final_gamma,
            rho.map_or(String::new(), |r| format!(", rho(A-BK) {r:.6}"))
        );
        if let Some(msg) = &trace.message {
            println!("  {msg}");
        }
        all_ok &= trace.stabilized() && rho.is_none_or(|r| r < 1.0);
        rows.push(json!({
            "trial": t,
            "seed": run_cfg.rollout.seed,
            "status": trace.status,
            "outer_iterations": trace.outer_iterations(),
            "total_rollouts": trace.total_rollouts,
            "final_gamma": trace.final_gamma,
            "final_rho": rho,
            "final_gain": trace.final_policy.gain().as_slice(),
        }));
    }
    let config = json!({ "experiment": cfg.experiment, "annealing": base, "system": cfg.system, "trials": trials });
    finish_meta(
        &dir,
        "anneal",
        base.rollout.seed,
        config,
        json!({ "runs": rows }),
        started,
        clock,
    )?;
    println!("wrote {}", dir.display());
    if all_ok {
        Ok(())
    } else {
        Err(Failure::Study("not every run stabilized the plant".into()))
    }
}

fn dimscaling(common: Common) -> CliResult {
    let (started, clock) = (now_unix(), Instant::now());
    let cfg = load(&common, ExperimentKind::DimScaling)?;
    let seed = common.seed.unwrap_or(0);
    let mut study = cfg
        .dim_scaling
        .clone()
        .unwrap_or_else(|| DimScalingConfig::desk_scale(seed));
    if common.seed.is_some() {
        study.seed = seed;
    }
    if let Some(t) = common.trials.or(cfg.trials) {
        study.trials = t;
    }
    let dir = out_dir(&common, &cfg, "dimscaling");
    let res = run_dim_scaling(&study)?;
    write_dim_study_csv(create_file(&dir, "study.csv")?, &res)?;
    write_dim_trials_csv(create_file(&dir, "trials.csv")?, &res)?;
    for r in &res.rows {
        println!(
            "n = {:3}: {}/{} stabilized, mean rollouts {:.0} (sd {:.0})",
            r.n,
            r.completed,
            r.completed + r.excluded,
            r.mean_rollouts,
            r.std_rollouts
        );
    }
    match (res.slope, res.slope_ci) {
        (Some(s), Some((lo, hi))) => {
            println!("log-log slope {s:.3} (95% bootstrap [{lo:.3}, {hi:.3}])")
        }
        (Some(s), None) => println!("log-log slope {s:.3}"),
        _ => println!("slope undefined with a single dimension"),
    }
    let summary = json!({ "slope": res.slope, "slope_ci": res.slope_ci, "rows": res.rows });
    finish_meta(
        &dir,
        "dimscaling",
        study.seed,
        serde_json::to_value(&study).unwrap_or_default(),
        summary,
        started,
        clock,
    )?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn cartpole(common: Common) -> CliResult {
    let (started, clock) = (now_unix(), Instant::now());
    let cfg = load(&common, ExperimentKind::CartPole)?;
    let seed = common.seed.unwrap_or(0);
    let mut study = cfg
        .cart_pole
        .clone()
        .unwrap_or_else(|| CartPoleStudy::defaults(seed));
    if common.seed.is_some() {
        study.seed = seed;
    }
    if let Some(t) = common.trials.or(cfg.trials) {
        study.trials = t;
    }
    let dir = out_dir(&common, &cfg, "cartpole");
    let rep = run_cartpole(&study)?;
    write_cartpole_study_csv(create_file(&dir, "study.csv")?, &rep)?;
    let mut sweeps = vec![("lqr".to_string(), &rep.baseline_roa)];
    for run in &rep.runs {
        let name = format!("trace_r{}_t{}.csv", run.r_ini, run.trial);
        write_trace_csv(create_file(&dir.join("traces"), &name)?, &run.trace, None)?;
        if let Some(roa) = &run.roa {
            sweeps.push((format!("r_ini={} trial={}", run.r_ini, run.trial), roa));
        }
        println!(
            "r_ini {} trial {}: {:?} after {} iterations, {} rollouts, ROA {}",
            run.r_ini,
            run.trial,
            run.trace.status,
            run.trace.outer_iterations(),
            run.trace.total_rollouts,
            run.roa
                .as_ref()
                .map_or("-".into(), |r| format!("{:.2}", r.r_roa))
        );
    }
    write_roa_csv(create_file(&dir, "roa.csv")?, &sweeps)?;
    let means: Vec<_> = study
        .r_ini_values
        .iter()
        .map(|&r| json!({ "r_ini": r, "mean_roa": rep.mean_roa(r) }))
        .collect();
    for m in &means {
        println!("mean ROA {m}");
    }
    println!("LQR baseline ROA {:.2}", rep.baseline_roa.r_roa);
    let summary = json!({
        "mean_roa": means,
        "baseline_roa": rep.baseline_roa.r_roa,
        "baseline_gain": rep.baseline_gain.gain().as_slice(),
    });
    finish_meta(
        &dir,
        "cartpole",
        study.seed,
        serde_json::to_value(&study).unwrap_or_default(),
        summary,
        started,
        clock,
    )?;
    println!("wrote {}", dir.display());
    if rep.runs.iter().all(|r| r.roa.is_none()) {
        return Err(Failure::Study("no run stabilized the cart-pole".into()));
    }
    Ok(())
}

fn parse_gain(text: &str) -> std::result::Result<Policy, Failure> {
    let values = text
        .split(',')
        .map(|s| s.trim().parse::<f64>())
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| Failure::Usage(format!("--gain: {e}")))?;
    if values.len() != 4 {
        return Err(Failure::Usage(format!(
            "--gain needs 4 entries, got {}",
            values.len()
        )));
    }
    Ok(Policy::new(nalgebra::DMatrix::from_row_slice(
        1, 4, &values,
    ))?)
}

fn roa(
    common: Common,
    gain: Option<String>,
    step: f64,
    max_radius: f64,
    horizon: usize,
) -> CliResult {
    let (started, clock) = (now_unix(), Instant::now());
    let cfg = load(&common, ExperimentKind::CartPole)?;
    let params = cfg
        .cart_pole
        .as_ref()
        .map_or_else(CartPoleParams::default, |s| s.params);
    let pol = match &gain {
        Some(g) => parse_gain(g)?,
        None => cartpole_lqr_gain(params)?,
    };
    let seed = common.seed.unwrap_or(0);
    let trials = common.trials.or(cfg.trials).unwrap_or(1000);
    let grid = radius_grid(step, max_radius);
    let nl = CartPole::new(params).nonlinear_system();
    let res = estimate_roa(&nl, &pol, &grid, trials, horizon, StreamKey::new(seed))?;
    let dir = out_dir(&common, &cfg, "roa");
    write_roa_csv(create_file(&dir, "roa.csv")?, &[("gain".into(), &res)])?;
    println!(
        "gain {:?}: ROA radius {:.2}",
        pol.gain().as_slice(),
        res.r_roa
    );
    let config = json!({ "gain": pol.gain().as_slice(), "step": step, "max_radius": max_radius, "horizon": horizon, "trials": trials, "params": params });
    finish_meta(
        &dir,
        "roa",
        seed,
        config,
        json!({ "r_roa": res.r_roa, "successes": res.successes }),
        started,
        clock,
    )?;
    println!("wrote {}", dir.display());
    Ok(())
}

fn verify(seed: u64, level: VerifyLevel, out: Option<PathBuf>) -> CliResult {
    let mode = match level {
        VerifyLevel::Quick => VerifyMode::Quick,
        VerifyLevel::Full => VerifyMode::Full,
    };
    let reports = run_all(seed, mode)?;
    for r in &reports {
        println!(
            "{} {:<22} cases {:5} failures {:3} worst {:.3e} (tolerance {:.0e})",
            if r.passed() { "PASS" } else { "FAIL" },
            r.name,
            r.cases,
            r.failures,
            r.worst,
            r.tolerance
        );
    }
    if let Some(dir) = out {
        let f = create_file(&dir, "verify.json")?;
        serde_json::to_writer_pretty(f, &reports).map_err(|e| Failure::Usage(e.to_string()))?;
    }
    if reports.iter().all(|r| r.passed()) {
        Ok(())
    } else {
        Err(Failure::Study("verification failed".into()))
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Anneal { common, mode } => anneal(common, mode),
        Command::Dimscaling { common } => dimscaling(common),
        Command::Cartpole { common } => cartpole(common),
        Command::Roa {
            common,
            gain,
            step,
            max_radius,
            horizon,
        } => roa(common, gain, step, max_radius, horizon),
        Command::Verify { seed, mode, out } => verify(seed, mode, out),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(Failure::Study(msg)) => {
            eprintln!("study failed: {msg}");
            ExitCode::from(3)
        }
    }
}
