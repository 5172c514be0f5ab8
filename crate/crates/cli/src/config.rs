//! Experiment config files.
//!
//! A config file is TOML whose keys are the long flag names, e.g.
//!
//! ```toml
//! n = 128
//! m = 32
//! overlap = 0.5
//! noise = 10
//! algo = "emagpie"
//! max-iters = 100
//! ```
//!
//! One file may hold keys for several subcommands; each reads the keys it
//! knows. Unknown keys are rejected so that typos surface. Flags given on
//! the command line override file values. Relative paths resolve against
//! the directory holding the file.

use std::fs;
use std::path::{Path, PathBuf};

use emagpie::runner::Algorithm;
use serde::Deserialize;

use crate::exit::CliError;

pub const OUT_DIR_ENV: &str = "EMAGPIE_OUT_DIR";
pub const DEFAULT_OUT_DIR: &str = "emagpie-out";

#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields, rename_all = "kebab-case")]
pub struct FileConfig {
    pub n: Option<usize>,
    pub m: Option<usize>,
    pub overlap: Option<f64>,
    pub noise: Option<f64>,
    pub seed: Option<u64>,
    pub object_mag: Option<PathBuf>,
    pub object_phase: Option<PathBuf>,

    pub dataset: Option<PathBuf>,
    pub algo: Option<Algorithm>,
    pub alpha: Option<f64>,
    pub levels: Option<usize>,
    pub window: Option<usize>,
    pub patience: Option<usize>,
    pub max_iters: Option<usize>,
    pub floor_factor: Option<f64>,
    pub no_noise_floor: Option<bool>,
    pub probe: Option<PathBuf>,
    pub certify: Option<bool>,
    pub no_timing: Option<bool>,

    pub reconstruction: Option<PathBuf>,
    pub points: Option<usize>,
    pub scale: Option<f64>,
    pub sweeps: Option<usize>,

    pub preset: Option<String>,
    pub pixel_size: Option<f64>,
    pub wavelength: Option<f64>,

    pub out: Option<PathBuf>,
}

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("cannot read config {}: {e}", path.display())))?;
        let mut cfg: FileConfig =
            toml::from_str(&text).map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new(""));
        for p in [
            &mut cfg.object_mag,
            &mut cfg.object_phase,
            &mut cfg.dataset,
            &mut cfg.probe,
            &mut cfg.reconstruction,
            &mut cfg.out,
        ]
        .into_iter()
        .flatten()
        {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        Ok(cfg)
    }
}

/// Flag, then file, then default.
pub fn pick<T>(flag: Option<T>, file: Option<T>, default: T) -> T {
    flag.or(file).unwrap_or(default)
}

/// Boolean switches: set by the flag or by the file.
pub fn switch(flag: bool, file: Option<bool>) -> bool {
    flag || file.unwrap_or(false)
}

/// Output directory: flag, file, `EMAGPIE_OUT_DIR`, then `./emagpie-out`.
pub fn out_dir(flag: Option<PathBuf>, file: Option<PathBuf>) -> PathBuf {
    flag.or(file)
        .or_else(|| std::env::var_os(OUT_DIR_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT_DIR))
}
