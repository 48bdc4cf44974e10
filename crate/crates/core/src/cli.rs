//! The `spectral-refine` command line.
//!
//! Every subcommand reads a [`RunConfig`] (defaults when `--config` is absent),
//! applies `--set section.key=value` and `--seed` overrides and writes its
//! artifacts into `--out`. Exit codes: 0 on success, 1 on runtime failure or a
//! failed `verify`, 2 on usage errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;
use crate::datagen::{generate_dataset, taylor_green, Dataset, IcKind};
use crate::error::{Error, Result};
use crate::grid::{resample, SpectralField};
use crate::io::{csv, Sfc1};
use crate::model::StfnoModel;
use crate::norms::{energy_spectrum, enstrophy_spectrum};
use crate::timestep::{advance, velocity_of, SolverState, StepOps};
use crate::train::{dataset_windows, evaluate_dataset, finetune_dataset, train, with_outputs, FtMode, Metrics};

/// Environment variable capping the worker threads.
pub const THREADS_VAR: &str = "SPECTRAL_REFINE_THREADS";

#[derive(Parser, Debug)]
#[command(name = "spectral-refine", version, about = "Spectral solvers, residual estimators and spectral fine-tuning")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// Run configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Seed for initial conditions, model initialization and batching.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = ".")]
    out: PathBuf,
    /// Override one setting, `section.key=value`; repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Solve, downsample and store train and test trajectories.
    Generate {
        #[command(flatten)]
        common: Common,
    },
    /// Run the solver from the initial condition, or through the output windows of `--data`.
    Solve {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train a model on a dataset.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Predict and fine-tune every window of a dataset.
    Finetune {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        model: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        mode: Option<String>,
        #[arg(long)]
        iters: Option<usize>,
        #[arg(long)]
        lr: Option<f64>,
    },
    /// Score predicted windows against a dataset or the Taylor-Green solution.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        pred: PathBuf,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Energy and enstrophy spectra of the final output snapshots.
    Spectra {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
    },
    /// Run the built-in property suite.
    Verify {
        #[command(flatten)]
        common: Common,
    },
}

/// Parses `argv`, runs the subcommand and returns the process exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return code;
        }
    };
    match init_threads().and_then(|_| dispatch(cli.command)) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            1
        }
    }
}

fn init_threads() -> Result<()> {
    let Ok(raw) = std::env::var(THREADS_VAR) else {
        return Ok(());
    };
    let n: usize = raw
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::InvalidArgument(format!("{THREADS_VAR} = {raw:?} is not a positive integer")))?;
    // A pool built earlier in the same process already fixes the count.
    let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    Ok(())
}

fn load_config(c: &Common) -> Result<RunConfig> {
    let mut cfg = match &c.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    for s in &c.sets {
        let (key, value) = s
            .split_once('=')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects section.key=value, got {s:?}")))?;
        let (section, key) = key
            .split_once('.')
            .ok_or_else(|| Error::InvalidArgument(format!("--set expects section.key=value, got {s:?}")))?;
        cfg.set(section.trim(), key.trim(), value.trim())?;
    }
    if let Some(seed) = c.seed {
        cfg.set("ic", "seed", &seed.to_string())?;
        cfg.set("model", "seed", &seed.to_string())?;
    }
    Ok(cfg)
}

fn out_path(c: &Common, name: &str) -> Result<PathBuf> {
    std::fs::create_dir_all(&c.out)?;
    Ok(c.out.join(name))
}

fn write_text(c: &Common, name: &str, text: &str) -> Result<PathBuf> {
    let p = out_path(c, name)?;
    std::fs::write(&p, text)?;
    Ok(p)
}

fn read_dataset(p: &Path) -> Result<Dataset> {
    Dataset::from_sfc1(&Sfc1::read(p)?)
}

fn dispatch(cmd: Command) -> Result<i32> {
    match cmd {
        Command::Generate { common } => generate(&common),
        Command::Solve { common, data } => solve(&common, data.as_deref()),
        Command::Train { common, data } => train_cmd(&common, &data),
        Command::Finetune { common, model, data, mode, iters, lr } => {
            let mut c = common.clone();
            if let Some(m) = mode {
                c.sets.push(format!("finetune.mode={m}"));
            }
            if let Some(i) = iters {
                c.sets.push(format!("finetune.iters={i}"));
            }
            if let Some(l) = lr {
                c.sets.push(format!("finetune.lr={l}"));
            }
            finetune_cmd(&c, &model, &data)
        }
        Command::Evaluate { common, pred, data } => evaluate_cmd(&common, &pred, data.as_deref()),
        Command::Spectra { common, data } => spectra(&common, &data),
        Command::Verify { common } => return verify(&common),
    }?;
    Ok(0)
}

fn generate(c: &Common) -> Result<()> {
    let cfg = load_config(c)?;
    let ic = cfg.ic()?;
    let g = generate_dataset(&cfg.dataset_spec()?, &ic, &cfg.solver()?)?;
    for (name, ds) in [("train", &g.train), ("test", &g.test)] {
        ds.to_sfc1().write(&out_path(c, &format!("{name}.sfc1"))?)?;
        write_text(c, &format!("{name}.meta"), &ds.metadata(&ic))?;
    }
    write_text(c, "config.cfg", &cfg.render())?;
    println!("generated {} train and {} test trajectories in {}", g.train.len(), g.test.len(), c.out.display());
    if !g.failed.is_empty() {
        println!("dropped trajectories after blow-up: {:?}", g.failed);
    }
    Ok(())
}

fn solve(c: &Common, data: Option<&Path>) -> Result<()> {
    let cfg = load_config(c)?;
    let solver = cfg.solver()?;
    let Some(data) = data else {
        let spec = cfg.dataset_spec()?;
        let gen = crate::grid::make_grid(spec.n_gen, spec.l)?;
        let w0 = cfg.ic()?.sample(&gen, 0, solver.nu)?;
        let record: usize = cfg.get("solver", "record_every")?;
        let traj = advance(&SolverState { field: w0, t: 0.0 }, &solver, cfg.get("solver", "t_end")?, record)?;
        let snaps = traj.snapshots.iter().map(|f| resample(f, spec.n)).collect::<Result<Vec<_>>>()?;
        let ds = solution_dataset(&snaps, &traj.times, &spec, solver.nu)?;
        ds.to_sfc1().write(&out_path(c, "solution.sfc1")?)?;
        println!("solved to t = {} with {} snapshots", traj.times.last().copied().unwrap_or(0.0), snaps.len());
        return Ok(());
    };
    let ds = read_dataset(data)?;
    let steps = ds.delta_t / solver.dt;
    if (steps - steps.round()).abs() > 1e-9 || steps.round() < 1.0 {
        return Err(Error::InvalidArgument(format!(
            "snapshot spacing {} is not a multiple of solver dt {}",
            ds.delta_t, solver.dt
        )));
    }
    let steps = steps.round() as usize;
    let mut s = solver.clone();
    s.nu = ds.nu;
    let grid = ds.grid()?;
    let ops = StepOps::new(&grid, &s, s.dt, false)?;
    let t_last = *ds.input_times.last().ok_or_else(|| Error::Shape("dataset has no inputs".into()))?;
    let windows = (0..ds.len())
        .map(|k| {
            let mut w = ds.input_field(k, ds.ell() - 1)?;
            let mut t = t_last;
            let mut out = Vec::with_capacity(ds.n_t());
            for _ in 0..ds.n_t() {
                for _ in 0..steps {
                    w = ops.step_field(&w, t)?;
                    t += s.dt;
                }
                out.push(w.clone());
            }
            Ok(out)
        })
        .collect::<Result<Vec<_>>>()?;
    with_outputs(&ds, &windows)?.to_sfc1().write(&out_path(c, "pred.sfc1")?)?;
    println!("solved {} windows", ds.len());
    Ok(())
}

fn solution_dataset(
    snaps: &[SpectralField],
    times: &[f64],
    spec: &crate::datagen::DatasetSpec,
    nu: f64,
) -> Result<Dataset> {
    let n = spec.n;
    let phys: Vec<_> = snaps.iter().map(|f| f.to_physical().remove(0)).collect();
    let mut inputs = ndarray::Array4::zeros((1, 1, n, n));
    inputs.slice_mut(ndarray::s![0, 0, .., ..]).assign(&phys[0]);
    let mut outputs = ndarray::Array4::zeros((1, phys.len() - 1, n, n));
    for (m, p) in phys[1..].iter().enumerate() {
        outputs.slice_mut(ndarray::s![0, m, .., ..]).assign(p);
    }
    Ok(Dataset {
        n,
        l: spec.l,
        nu,
        dt: spec.dt,
        delta_t: times.get(1).map(|t| t - times[0]).unwrap_or(0.0),
        input_times: vec![times[0]],
        output_times: times[1..].to_vec(),
        inputs,
        outputs,
        ids: vec![0],
    })
}

fn train_cmd(c: &Common, data: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let ds = read_dataset(data)?;
    let mut model = StfnoModel::new(cfg.model_config()?, ds.n, ds.l)?;
    let h = train(&mut model, &ds, &cfg.train_config()?)?;
    model.to_sfc1().write(&out_path(c, "model.sfc1")?)?;
    let rows: Vec<Vec<f64>> =
        h.loss.iter().zip(&h.slope_gap).enumerate().map(|(e, (l, s))| vec![(e + 1) as f64, *l, *s]).collect();
    write_text(c, "train_history.csv", &csv(&["epoch", "loss", "slope_gap"], &rows))?;
    println!("trained {} parameters, final loss {:.6e}", model.param_count(), h.loss.last().copied().unwrap_or(f64::NAN));
    Ok(())
}

fn finetune_cmd(c: &Common, model: &Path, data: &Path) -> Result<()> {
    let cfg = load_config(c)?;
    let ft = cfg.finetune_config()?;
    let ds = read_dataset(data)?;
    let model = StfnoModel::from_sfc1(&Sfc1::read(model)?)?;
    let preds = finetune_dataset(&model, &ds, &cfg.solver()?, &ft)?;
    let windows: Vec<_> = preds.iter().map(|p| p.outputs.clone()).collect();
    with_outputs(&ds, &windows)?.to_sfc1().write(&out_path(c, "pred.sfc1")?)?;
    let mut rows = Vec::new();
    for (k, p) in preds.iter().enumerate() {
        for (i, rep) in p.history.iter().enumerate() {
            rows.push(vec![k as f64, i as f64, rep.eta_total]);
        }
    }
    write_text(c, "finetune_history.csv", &csv(&["trajectory", "index", "eta"], &rows))?;
    let first: f64 = preds.iter().map(|p| p.history[0].eta_total).sum::<f64>() / preds.len().max(1) as f64;
    let last: f64 = preds.iter().map(|p| p.history.last().map_or(f64::NAN, |r| r.eta_total)).sum::<f64>()
        / preds.len().max(1) as f64;
    let mode = if ft.mode == FtMode::Parallel { "parallel" } else { "guaranteed" };
    println!("fine-tuned {} windows ({mode}): mean eta {first:.6e} -> {last:.6e}", preds.len());
    Ok(())
}

fn evaluate_cmd(c: &Common, pred: &Path, data: Option<&Path>) -> Result<()> {
    let cfg = load_config(c)?;
    let p = read_dataset(pred)?;
    let reference = match data {
        Some(d) => {
            let d = read_dataset(d)?;
            if d.inputs != p.inputs || d.output_times != p.output_times {
                return Err(Error::Shape("prediction and data windows differ".into()));
            }
            dataset_windows(&d)?
        }
        None => {
            let IcKind::TaylorGreen { kappa } = cfg.ic()?.kind else {
                return Err(Error::InvalidArgument("without --data the reference is Taylor-Green".into()));
            };
            let grid = p.grid()?;
            p.ids
                .iter()
                .map(|&id| {
                    p.output_times.iter().map(|&t| Ok(taylor_green(kappa + id as u32, p.nu, t, &grid)?.1)).collect()
                })
                .collect::<Result<Vec<_>>>()?
        }
    };
    let metrics = evaluate_dataset(&p, &reference)?;
    let mut header = vec!["trajectory"];
    header.extend(Metrics::HEADER);
    let rows: Vec<Vec<f64>> = metrics
        .iter()
        .enumerate()
        .map(|(k, m)| std::iter::once(k as f64).chain(m.row()).collect())
        .collect();
    write_text(c, "metrics.csv", &csv(&header, &rows))?;
    let mean = |f: fn(&Metrics) -> f64| metrics.iter().map(f).sum::<f64>() / metrics.len().max(1) as f64;
    println!(
        "mean rel_l2_final {:.6e}, mean residual_alpha0 {:.6e}",
        mean(|m| m.rel_l2_final),
        mean(|m| m.residual_alpha0)
    );
    Ok(())
}

fn spectra(c: &Common, data: &Path) -> Result<()> {
    let ds = read_dataset(data)?;
    if ds.is_empty() || ds.n_t() == 0 {
        return Err(Error::Shape("dataset has no output snapshots".into()));
    }
    let mut acc: Option<(Vec<f64>, Vec<f64>, Vec<f64>)> = None;
    for k in 0..ds.len() {
        let w = ds.output_field(k, ds.n_t() - 1)?;
        let z = enstrophy_spectrum(&w)?;
        let e = energy_spectrum(&velocity_of(&w)?)?;
        let entry = acc.get_or_insert_with(|| (z.k_bins.clone(), vec![0.0; z.values.len()], vec![0.0; z.values.len()]));
        entry.1.iter_mut().zip(&e.values).for_each(|(a, v)| *a += v / ds.len() as f64);
        entry.2.iter_mut().zip(&z.values).for_each(|(a, v)| *a += v / ds.len() as f64);
    }
    let (k, e, z) = acc.expect("at least one trajectory");
    let rows: Vec<Vec<f64>> = (0..k.len()).map(|i| vec![k[i], e[i], z[i]]).collect();
    let p = write_text(c, "spectra.csv", &csv(&["k", "energy", "enstrophy"], &rows))?;
    println!("wrote {}", p.display());
    Ok(())
}

fn verify(c: &Common) -> Result<i32> {
    let checks = crate::verify::run(c.seed.unwrap_or(0))?;
    let mut report = String::new();
    for ch in &checks {
        report.push_str(&ch.line());
        report.push('\n');
    }
    print!("{report}");
    if c.out != Path::new(".") {
        write_text(c, "verify.txt", &report)?;
    }
    Ok(if checks.iter().all(|ch| ch.passed()) { 0 } else { 1 })
}
