//! Flat key-value run configuration.
//!
//! Values come from (highest precedence first) `--set key=value` flags, a
//! config file of `key = value` lines (`#` comments allowed), and the
//! documented defaults. Unknown keys are rejected.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::path::Path;
use std::str::FromStr;

use anyhow::{anyhow, bail, Context, Result};
use gocor::objective::{ObjectiveParams, QueryObjectiveParams, ReferenceObjectiveParams};
use gocor::solver::DEFAULT_LAMBDA;
use gocor::synthbench;
use gocor::{InitializerConfig, SolverConfig, VolumeKind};

use crate::formats::Dtype;

const KNOWN_KEYS: &[&str] = &[
    "mode",
    "radius",
    "num_iter",
    "eta",
    "lambda",
    "curvature_scale",
    "use_query",
    "initializer",
    "beta",
    "gamma",
    "basis_n",
    "basis_delta",
    "kernel_size",
    "kernel_channels",
    "kernel_seed",
    "seeds",
    "precision",
    "scene_h",
    "scene_w",
    "scene_d",
    "n_repeats",
    "shift_y",
    "shift_x",
    "noise_std",
    "rho_excl",
];

/// Parsed key-value configuration with typed accessors.
#[derive(Debug, Clone, Default)]
pub struct RunConfig {
    values: BTreeMap<String, String>,
}

impl RunConfig {
    /// Merge a config file (if given) and `--set` overrides.
    pub fn from_sources(file: Option<&Path>, sets: &[String]) -> Result<Self> {
        let mut values = BTreeMap::new();
        if let Some(path) = file {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading config file {}", path.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.split('#').next().unwrap_or("").trim();
                if line.is_empty() {
                    continue;
                }
                let (key, value) = split_pair(line)
                    .ok_or_else(|| anyhow!("{}:{}: expected `key = value`", path.display(), lineno + 1))?;
                insert_checked(&mut values, key, value)?;
            }
        }
        for set in sets {
            let (key, value) =
                split_pair(set).ok_or_else(|| anyhow!("--set {set}: expected `key=value`"))?;
            insert_checked(&mut values, key, value)?;
        }
        Ok(Self { values })
    }

    fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>>
    where
        T::Err: Display,
    {
        match self.values.get(key) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|e| anyhow!("config key `{key}`: cannot parse `{raw}`: {e}")),
        }
    }

    fn get_or<T: FromStr>(&self, key: &str, default: T) -> Result<T>
    where
        T::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    /// Volume mode: `mode` plus `radius` for local.
    pub fn mode(&self) -> Result<VolumeKind> {
        let mode: String = self.get_or("mode", "global".into())?;
        match mode.as_str() {
            "global" => Ok(VolumeKind::Global),
            "local" => Ok(VolumeKind::Local {
                radius: self.get_or("radius", 4usize)?,
            }),
            other => bail!("config key `mode`: expected `global` or `local`, got `{other}`"),
        }
    }

    /// Reference/query objective parameters.
    pub fn objective_params(&self) -> Result<ObjectiveParams> {
        let n: usize = self.get_or("basis_n", 10)?;
        let delta: f64 = self.get_or("basis_delta", 0.5)?;
        let eta: f64 = self.get_or("eta", 0.0)?;
        let defaults = ReferenceObjectiveParams::paper_init();
        let reference = if n == 10 && delta == 0.5 {
            defaults.with_eta(eta)
        } else {
            ReferenceObjectiveParams::new(
                gocor::WeightFunction::gaussian_target(n, delta),
                gocor::WeightFunction::constant(1.0, n, delta),
                gocor::WeightFunction::scaled_tanh_mask(n, delta),
                eta,
            )?
        };
        let k: usize = self.get_or("kernel_size", 3)?;
        let q: usize = self.get_or("kernel_channels", 16)?;
        let kernel_seed: u64 = self.get_or("kernel_seed", 7002)?;
        let query = QueryObjectiveParams::seeded(k, q, q, kernel_seed)?;
        Ok(ObjectiveParams { reference, query })
    }

    /// Solver configuration for the full matching pipeline (`solve`).
    ///
    /// The iteration count defaults to 3 in global mode and 7 in local mode;
    /// the query term defaults on for global and off for local.
    pub fn solver_config(&self) -> Result<SolverConfig> {
        let mode = self.mode()?;
        let global = mode == VolumeKind::Global;
        Ok(SolverConfig {
            mode,
            num_iter: self.get_or("num_iter", if global { 3 } else { 7 })?,
            lambda: self.get_or("lambda", DEFAULT_LAMBDA)?,
            use_query: self.get_or("use_query", global)?,
            curvature_scale: self.get_or("curvature_scale", 2.0)?,
        })
    }

    /// Solver configuration for the disambiguation benchmark: same defaults
    /// except the query term stays off (untrained kernels regularize toward
    /// nothing and the reference objective is the disambiguation mechanism).
    pub fn bench_solver_config(&self) -> Result<SolverConfig> {
        let mut cfg = self.solver_config()?;
        cfg.use_query = self.get_or("use_query", false)?;
        Ok(cfg)
    }

    /// Filter-map initializer; `solve` defaults to context-aware for global
    /// mode and simple for local mode.
    pub fn initializer(&self, default: &str) -> Result<InitializerConfig> {
        let name: String = self.get_or("initializer", default.into())?;
        let beta: f64 = self.get_or("beta", 1.0)?;
        let gamma: f64 = self.get_or("gamma", 0.0)?;
        match name.as_str() {
            "simple" => Ok(InitializerConfig::Simple { beta }),
            "context-aware" => Ok(InitializerConfig::ContextAware { beta, gamma }),
            other => bail!(
                "config key `initializer`: expected `simple` or `context-aware`, got `{other}` \
                 (the flexible variants take per-channel vectors and are library-only)"
            ),
        }
    }

    pub fn default_initializer_name(&self) -> Result<&'static str> {
        Ok(match self.mode()? {
            VolumeKind::Global => "context-aware",
            VolumeKind::Local { .. } => "simple",
        })
    }

    pub fn precision(&self) -> Result<Dtype> {
        let p: String = self.get_or("precision", "f64".into())?;
        match p.as_str() {
            "f32" => Ok(Dtype::F32),
            "f64" => Ok(Dtype::F64),
            other => bail!("config key `precision`: expected `f32` or `f64`, got `{other}`"),
        }
    }

    pub fn seeds(&self) -> Result<u64> {
        self.get_or("seeds", 20)
    }

    pub fn eta(&self) -> Result<f64> {
        self.get_or("eta", 0.0)
    }

    pub fn rho_excl(&self) -> Result<f64> {
        self.get_or("rho_excl", synthbench::DEFAULT_RHO_EXCL)
    }

    /// Scene geometry for the benchmark.
    pub fn scene(&self) -> Result<SceneConfig> {
        let (dh, dw, dd) = synthbench::DEFAULT_SCENE_SIZE;
        Ok(SceneConfig {
            h: self.get_or("scene_h", dh)?,
            w: self.get_or("scene_w", dw)?,
            d: self.get_or("scene_d", dd)?,
            n_repeats: self.get_or("n_repeats", 2)?,
            shift: (
                self.get_or("shift_y", synthbench::DEFAULT_SHIFT.0)?,
                self.get_or("shift_x", synthbench::DEFAULT_SHIFT.1)?,
            ),
            noise_std: self.get_or("noise_std", synthbench::DEFAULT_NOISE_STD)?,
        })
    }
}

/// Scene parameters used by `bench`.
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct SceneConfig {
    pub h: usize,
    pub w: usize,
    pub d: usize,
    pub n_repeats: usize,
    pub shift: (isize, isize),
    pub noise_std: f64,
}

fn split_pair(text: &str) -> Option<(&str, &str)> {
    let (key, value) = text.split_once('=').or_else(|| text.split_once(':'))?;
    let key = key.trim();
    let value = value.trim();
    if key.is_empty() || value.is_empty() {
        return None;
    }
    Some((key, value))
}

fn insert_checked(values: &mut BTreeMap<String, String>, key: &str, value: &str) -> Result<()> {
    if !KNOWN_KEYS.contains(&key) {
        bail!(
            "unknown config key `{key}` (known keys: {})",
            KNOWN_KEYS.join(", ")
        );
    }
    values.insert(key.to_string(), value.to_string());
    Ok(())
}
