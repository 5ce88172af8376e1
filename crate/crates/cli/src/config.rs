//! `--config` file: TOML overrides for solver and benchmark defaults.
//!
//! Precedence, lowest first: built-in defaults, the network file's `[config]`
//! block, this file, command-line flags.

use std::path::Path;

use anyhow::{Context, Result};
use gicshield::gic::FloatingPolicy;
use gicshield::{AcNetwork, AdmmOptions, BenchmarkOptions, SlOptions};
use serde::Deserialize;

/// Overrides for the NLP settings a network file carries.
#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlpOverrides {
    pub tol: Option<f64>,
    pub max_outer: Option<usize>,
    pub max_inner: Option<usize>,
}

impl NlpOverrides {
    pub fn merge(&mut self, other: &NlpOverrides) {
        self.tol = other.tol.or(self.tol);
        self.max_outer = other.max_outer.or(self.max_outer);
        self.max_inner = other.max_inner.or(self.max_inner);
    }

    /// Writes the overrides into the network's config block, which every
    /// evaluation reads its tolerances from.
    pub fn apply_to_network(&self, ac: &mut AcNetwork) {
        if let Some(t) = self.tol {
            ac.config.nlp_tol = t;
        }
        if let Some(n) = self.max_outer {
            ac.config.nlp_max_outer = n;
        }
        if let Some(n) = self.max_inner {
            ac.config.nlp_max_inner = n;
        }
    }

    pub fn apply_to_admm(&self, opts: &mut AdmmOptions) {
        if let Some(t) = self.tol {
            opts.nlp.tol = t;
            opts.nlp.opt_tol = t;
        }
        if let Some(n) = self.max_outer {
            opts.nlp.max_outer = n;
        }
        if let Some(n) = self.max_inner {
            opts.nlp.max_inner = n;
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub restarts: Option<usize>,
    pub floating: Option<FloatingPolicy>,
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Config {
    pub nlp: NlpOverrides,
    pub eval: EvalSection,
    pub admm: AdmmOptions,
    pub sl: SlOptions,
    pub benchmark: Option<BenchmarkSection>,
}

/// Benchmark grid; solver settings come from the `[admm]` and `[sl]` tables.
#[derive(Debug, Clone, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchmarkSection {
    pub networks: Vec<String>,
    pub efields: Vec<f64>,
    pub direction: f64,
    pub budgets: Vec<usize>,
    pub algorithms: Vec<gicshield::Algorithm>,
    pub jobs: usize,
    pub force: bool,
    pub record_wall_time: bool,
}

impl Default for BenchmarkSection {
    fn default() -> Self {
        let d = BenchmarkOptions::default();
        Self {
            networks: Vec::new(),
            efields: d.efields,
            direction: d.direction,
            budgets: d.budgets,
            algorithms: d.algorithms,
            jobs: d.jobs,
            force: d.force,
            record_wall_time: d.record_wall_time,
        }
    }
}

impl Config {
    pub fn load(path: Option<&Path>) -> Result<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        let cfg: Config = toml::from_str(&text).map_err(|e| ConfigError(format!("{}: {e}", path.display())))?;
        cfg.admm.validate()?;
        cfg.sl.validate()?;
        Ok(cfg)
    }
}

/// A config file that does not parse; reported as a validation failure.
#[derive(Debug)]
pub struct ConfigError(pub String);

impl std::fmt::Display for ConfigError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "invalid config file {}", self.0)
    }
}

impl std::error::Error for ConfigError {}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn partial_tables_keep_defaults() {
        let cfg: Config = toml::from_str(
            "[nlp]\ntol = 1e-7\n[admm]\nrho0 = 10.0\n[admm.nrb]\ntau = 5.0\n[sl]\nseed = 3\n[benchmark]\nefields = [5.0]\n",
        )
        .unwrap();
        assert_eq!(cfg.nlp.tol, Some(1e-7));
        assert_eq!(cfg.admm.rho0, 10.0);
        assert_eq!(cfg.admm.nrb.tau, 5.0);
        assert_eq!(cfg.admm.nrb.beta, 2.0);
        assert_eq!(cfg.admm.max_iters, 200);
        assert_eq!(cfg.sl.seed, 3);
        assert_eq!(cfg.sl.n_samples, 8);
        let b = cfg.benchmark.unwrap();
        assert_eq!(b.efields, vec![5.0]);
        assert_eq!(b.budgets, vec![1, 2]);
    }

    #[test]
    fn unknown_keys_are_rejected() {
        assert!(toml::from_str::<Config>("[nlp]\ntolerance = 1.0\n").is_err());
    }
}
