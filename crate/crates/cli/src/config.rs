use std::path::{Path, PathBuf};

use mixnl::verify::Tolerances;
use mixnl::{KernelParams, Normalization, QuadratureConfig, RegionSpec, Toggles};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct KernelSection {
    pub normalization: Normalization,
}

fn default_k() -> usize {
    5
}

fn default_h() -> f64 {
    1.0 / 64.0
}

/// Everything one run needs. Unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub region: RegionSpec,
    #[serde(default)]
    pub kernel: KernelSection,
    #[serde(default)]
    pub quadrature: QuadratureConfig,
    #[serde(default)]
    pub toggles: Toggles,
    #[serde(default = "default_k")]
    pub k: usize,
    #[serde(default = "default_h")]
    pub target_h: f64,
    #[serde(default)]
    pub tolerances: Tolerances,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub h_list: Option<Vec<f64>>,
}

impl RunConfig {
    /// Parse a JSON or TOML file, chosen by extension (JSON otherwise).
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let is_toml = path
            .extension()
            .is_some_and(|e| e.eq_ignore_ascii_case("toml"));
        if is_toml {
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        } else {
            serde_json::from_str(&text)
                .map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
        }
    }

    pub fn kernel_params(&self) -> Result<KernelParams, CliError> {
        KernelParams::new(self.region.s, self.kernel.normalization)
            .map_err(|e| CliError::Config(format!("region.s: {e}")))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        self.kernel_params()?;
        self.quadrature
            .validate()
            .map_err(|e| CliError::Config(format!("quadrature: {e}")))?;
        if self.k == 0 {
            return Err(CliError::Config("k must be at least 1".into()));
        }
        if !(self.target_h.is_finite() && self.target_h > 0.0) {
            return Err(CliError::Config(format!(
                "target_h = {} must be positive",
                self.target_h
            )));
        }
        if !self.toggles.local && !self.toggles.nonlocal {
            return Err(CliError::Config(
                "toggles: at least one of local, nonlocal must be on".into(),
            ));
        }
        Ok(())
    }
}

pub fn parse_toggle(s: &str) -> Result<Toggles, CliError> {
    match s {
        "both" => Ok(Toggles::BOTH),
        "local-only" => Ok(Toggles::LOCAL_ONLY),
        "nonlocal-only" => Ok(Toggles::NONLOCAL_ONLY),
        _ => Err(CliError::Config(format!(
            "--toggle {s}: expected local-only, nonlocal-only or both"
        ))),
    }
}

pub fn parse_tol(s: &str) -> Result<(String, f64), CliError> {
    let (name, value) = s
        .split_once('=')
        .ok_or_else(|| CliError::Config(format!("--tol {s}: expected NAME=VALUE")))?;
    let value: f64 = value
        .trim()
        .parse()
        .map_err(|_| CliError::Config(format!("--tol {s}: {value} is not a number")))?;
    Ok((name.trim().to_string(), value))
}

pub fn parse_h_list(s: &str) -> Result<Vec<f64>, CliError> {
    s.split(',')
        .map(|p| {
            let p = p.trim();
            let value = match p.split_once('/') {
                Some((a, b)) => a
                    .trim()
                    .parse::<f64>()
                    .ok()
                    .zip(b.trim().parse::<f64>().ok())
                    .map(|(a, b)| a / b),
                None => p.parse().ok(),
            };
            value.ok_or_else(|| CliError::Config(format!("--h-list: cannot parse {p}")))
        })
        .collect()
}
