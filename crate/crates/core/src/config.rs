//! Plain-text run configuration.
//!
//! Files hold `[section]` headers followed by `key = value` lines; `#` starts a
//! comment. Every key must appear in [`SCHEMA`], which also lists the defaults.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::autodiff::Activation;
use crate::datagen::{DatasetSpec, IcKind, IcSpec};
use crate::error::{Error, Result};
use crate::model::StfnoConfig;
use crate::residual::Formulation;
use crate::timestep::{Scheme, SolverConfig};
use crate::train::{FinetuneConfig, TrainConfig};

/// `(section, key, default, meaning)` of every accepted setting.
pub const SCHEMA: &[(&str, &str, &str, &str)] = &[
    ("grid", "n", "64", "points per axis of stored fields"),
    ("grid", "l", "1.0", "domain edge length"),
    ("solver", "scheme", "rk2_cn", "imex_rk4 or rk2_cn"),
    ("solver", "dt", "1e-3", "solver time step"),
    ("solver", "nu", "1e-3", "kinematic viscosity"),
    ("solver", "drag", "0.0", "linear drag coefficient"),
    ("solver", "t_end", "1.0", "end time of `solve`"),
    ("solver", "record_every", "100", "solver steps between snapshots of `solve`"),
    ("ic", "kind", "taylor_green", "taylor_green, grf or mcwilliams"),
    ("ic", "kappa", "1", "Taylor-Green wavenumber index of the first trajectory"),
    ("ic", "alpha", "2.5", "random-field smoothness exponent"),
    ("ic", "tau", "7.0", "random-field length-scale parameter"),
    ("ic", "k0", "4.0", "peak wavenumber of the McWilliams spectrum"),
    ("ic", "energy", "none", "kinetic energy of each sample, or none"),
    ("ic", "seed", "0", "base seed; trajectory i uses stream i"),
    ("data", "n_train", "10", "training trajectories"),
    ("data", "n_test", "1", "test trajectories"),
    ("data", "n_gen", "64", "solver resolution"),
    ("data", "burn_in", "0.0", "time discarded before recording"),
    ("data", "ell", "10", "input snapshots"),
    ("data", "n_t", "10", "output snapshots"),
    ("data", "record_every", "5", "solver steps between stored snapshots"),
    ("model", "layers", "2", "backbone spectral convolutions"),
    ("model", "width", "8", "channel width"),
    ("model", "d_t", "10", "latent time steps"),
    ("model", "tau_max", "5", "retained temporal modes"),
    ("model", "k_max", "8", "retained spatial modes"),
    ("model", "t_pad", "0.5", "temporal padding fraction"),
    ("model", "helmholtz", "false", "Leray-project velocity outputs"),
    ("model", "formulation", "vs", "vs or vp"),
    ("model", "activation", "gelu", "gelu or identity"),
    ("model", "layer_norm", "true", "normalize lifted channels"),
    ("model", "seed", "0", "initialization seed"),
    ("train", "epochs", "10", "training epochs"),
    ("train", "lr", "1e-2", "peak learning rate"),
    ("train", "batch", "2", "trajectories per step"),
    ("train", "loss", "l2", "l2 or h_neg1"),
    ("train", "weight_decay", "0.0", "decoupled weight decay"),
    ("train", "one_cycle", "true", "warm-up and cosine decay"),
    ("finetune", "iters", "100", "updates of the parallel mode"),
    ("finetune", "lr", "0.1", "Adam learning rate"),
    ("finetune", "gamma", "2", "fine step exponent, step = spacing^gamma"),
    ("finetune", "loss", "h_neg1", "h_neg1 or l2"),
    ("finetune", "alpha", "0.0", "negative-norm shift"),
    ("finetune", "mode", "parallel", "parallel or guaranteed"),
    ("finetune", "tol", "1e-3", "per-step target of the guaranteed mode"),
    ("finetune", "iter_max", "100", "update budget per step of the guaranteed mode"),
    ("finetune", "train_reduce", "false", "also tune the channel reduction"),
];

/// Validated settings with defaults filled in.
#[derive(Clone, Debug, PartialEq)]
pub struct RunConfig {
    values: BTreeMap<(String, String), String>,
    path: PathBuf,
}

impl Default for RunConfig {
    fn default() -> Self {
        let values = SCHEMA
            .iter()
            .map(|(s, k, d, _)| ((s.to_string(), k.to_string()), d.to_string()))
            .collect();
        RunConfig { values, path: PathBuf::from("<defaults>") }
    }
}

impl RunConfig {
    pub fn parse(text: &str, path: &Path) -> Result<Self> {
        let mut cfg = RunConfig { path: path.to_path_buf(), ..RunConfig::default() };
        let mut section = String::new();
        for (i, raw) in text.lines().enumerate() {
            let err = |msg: String| Error::Config { path: path.to_path_buf(), line: i + 1, msg };
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[').and_then(|l| l.strip_suffix(']')) {
                let name = name.trim();
                if !SCHEMA.iter().any(|(s, ..)| *s == name) {
                    return Err(err(format!("unknown section [{name}]")));
                }
                section = name.to_string();
                continue;
            }
            let (k, v) = line.split_once('=').ok_or_else(|| err(format!("expected key = value, got {line:?}")))?;
            let (k, v) = (k.trim(), v.trim());
            if section.is_empty() {
                return Err(err(format!("key {k:?} outside a section")));
            }
            if !SCHEMA.iter().any(|(s, key, ..)| *s == section && *key == k) {
                return Err(err(format!("unknown key {k:?} in [{section}]")));
            }
            cfg.values.insert((section.clone(), k.to_string()), v.to_string());
        }
        cfg.check()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        RunConfig::parse(&std::fs::read_to_string(path)?, path)
    }

    /// Overrides one setting, as from a command-line flag.
    pub fn set(&mut self, section: &str, key: &str, value: &str) -> Result<()> {
        if !SCHEMA.iter().any(|(s, k, ..)| *s == section && *k == key) {
            return Err(Error::InvalidArgument(format!("unknown setting {section}.{key}")));
        }
        self.values.insert((section.into(), key.into()), value.into());
        self.check()
    }

    pub fn raw(&self, section: &str, key: &str) -> &str {
        self.values
            .get(&(section.to_string(), key.to_string()))
            .map(|s| s.as_str())
            .unwrap_or_else(|| panic!("{section}.{key} is not in the schema"))
    }

    pub fn get<T: FromStr>(&self, section: &str, key: &str) -> Result<T> {
        let raw = self.raw(section, key);
        raw.parse().map_err(|_| Error::Config {
            path: self.path.clone(),
            line: 0,
            msg: format!("{section}.{key} = {raw:?} has the wrong type"),
        })
    }

    fn check(&self) -> Result<()> {
        self.solver()?;
        self.dataset_spec()?;
        self.ic()?;
        self.model_config()?;
        self.train_config()?;
        self.finetune_config()?;
        Ok(())
    }

    pub fn solver(&self) -> Result<SolverConfig> {
        let mut cfg = SolverConfig::new(
            self.get::<Scheme>("solver", "scheme")?,
            self.get("solver", "dt")?,
            self.get("solver", "nu")?,
        )?;
        cfg.drag = self.get("solver", "drag")?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn ic(&self) -> Result<IcSpec> {
        let kind = match self.raw("ic", "kind") {
            "taylor_green" => IcKind::TaylorGreen { kappa: self.get("ic", "kappa")? },
            "grf" => IcKind::Grf { alpha: self.get("ic", "alpha")?, tau: self.get("ic", "tau")? },
            "mcwilliams" => IcKind::McWilliams { k0: self.get("ic", "k0")?, tau: self.get("ic", "tau")? },
            other => return Err(Error::InvalidArgument(format!("unknown ic.kind {other:?}"))),
        };
        let normalize_energy = match self.raw("ic", "energy") {
            "none" => None,
            _ => Some(self.get("ic", "energy")?),
        };
        Ok(IcSpec { kind, seed: self.get("ic", "seed")?, normalize_energy })
    }

    pub fn dataset_spec(&self) -> Result<DatasetSpec> {
        let spec = DatasetSpec {
            n_train: self.get("data", "n_train")?,
            n_test: self.get("data", "n_test")?,
            n_gen: self.get("data", "n_gen")?,
            n: self.get("grid", "n")?,
            l: self.get("grid", "l")?,
            dt: self.get("solver", "dt")?,
            burn_in: self.get("data", "burn_in")?,
            ell: self.get("data", "ell")?,
            n_t: self.get("data", "n_t")?,
            record_every: self.get("data", "record_every")?,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn model_config(&self) -> Result<StfnoConfig> {
        let activation = match self.raw("model", "activation") {
            "gelu" => Activation::Gelu,
            "identity" => Activation::Identity,
            other => return Err(Error::InvalidArgument(format!("unknown activation {other:?}"))),
        };
        let cfg = StfnoConfig {
            layers: self.get("model", "layers")?,
            width: self.get("model", "width")?,
            d_t: self.get("model", "d_t")?,
            tau_max: self.get("model", "tau_max")?,
            k_max: self.get("model", "k_max")?,
            t_pad: self.get("model", "t_pad")?,
            helmholtz: self.get("model", "helmholtz")?,
            formulation: self.get::<Formulation>("model", "formulation")?,
            activation,
            layer_norm: self.get("model", "layer_norm")?,
            seed: self.get("model", "seed")?,
        };
        cfg.validate(self.get("grid", "n")?)?;
        Ok(cfg)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        Ok(TrainConfig {
            epochs: self.get("train", "epochs")?,
            lr: self.get("train", "lr")?,
            batch: self.get("train", "batch")?,
            loss: self.get("train", "loss")?,
            weight_decay: self.get("train", "weight_decay")?,
            one_cycle: self.get("train", "one_cycle")?,
            seed: self.get("ic", "seed")?,
        })
    }

    pub fn finetune_config(&self) -> Result<FinetuneConfig> {
        let cfg = FinetuneConfig {
            iters: self.get("finetune", "iters")?,
            lr: self.get("finetune", "lr")?,
            gamma: self.get("finetune", "gamma")?,
            loss: self.get("finetune", "loss")?,
            alpha: self.get("finetune", "alpha")?,
            mode: self.get("finetune", "mode")?,
            tol: self.get("finetune", "tol")?,
            iter_max: self.get("finetune", "iter_max")?,
            train_reduce: self.get("finetune", "train_reduce")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    /// The full configuration, defaults included, in file syntax.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let mut current = "";
        for (s, k, _, meaning) in SCHEMA {
            if *s != current {
                if !current.is_empty() {
                    out.push('\n');
                }
                out.push_str(&format!("[{s}]\n"));
                current = s;
            }
            out.push_str(&format!("{k} = {}  # {meaning}\n", self.raw(s, k)));
        }
        out
    }
}
