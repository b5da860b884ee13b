//! The run configuration: one TOML file holding the window, the priors, the
//! binning and the algorithm settings. Command-line flags override it.

use std::path::Path;

use etas_core::{BinningConfig, EtasParams, EtasPriors, ObservationWindow, PriorSpec, TiePolicy};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    pub window: ObservationWindow,
    /// True parameters, used by `simulate` only.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub params: Option<EtasParams>,
    #[serde(default)]
    pub simulate: SimulateSection,
    #[serde(default)]
    pub catalog: CatalogSection,
    #[serde(default)]
    pub priors: PriorsSection,
    #[serde(default)]
    pub binning: BinningSection,
    #[serde(default)]
    pub fit: FitSection,
    #[serde(default)]
    pub mcmc: McmcSection,
    #[serde(default)]
    pub diagnose: DiagnoseSection,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SimulateSection {
    /// Gutenberg-Richter rate on the natural-log scale.
    pub gr_beta: f64,
    pub max_events: usize,
}

impl Default for SimulateSection {
    fn default() -> Self {
        Self {
            gr_beta: std::f64::consts::LN_10,
            max_events: 1_000_000,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CatalogSection {
    /// Separate tied times by this many days per tie rank instead of
    /// rejecting them.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub jitter_ties: Option<f64>,
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Preset {
    Replicate,
    #[default]
    Gamma,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PriorsSection {
    pub preset: Preset,
    /// Gamma family with the gamma preset's means and variances divided by
    /// this factor.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub gamma_scale: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mu: Option<PriorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub k: Option<PriorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub alpha: Option<PriorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub c: Option<PriorSpec>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub p: Option<PriorSpec>,
}

impl PriorsSection {
    pub fn resolve(&self) -> Result<EtasPriors, CliError> {
        let mut priors = match (self.preset, self.gamma_scale) {
            (Preset::Replicate, None) => EtasPriors::replicate(),
            (Preset::Gamma, None) => EtasPriors::gamma(),
            (Preset::Gamma, Some(s)) => EtasPriors::gamma_scaled(s).map_err(|e| usage("priors.gamma_scale", e))?,
            (Preset::Replicate, Some(_)) => {
                return Err(CliError::Usage(
                    "priors.gamma_scale applies to the gamma preset only".into(),
                ))
            }
        };
        let overrides = [
            (&mut priors.mu, self.mu),
            (&mut priors.k, self.k),
            (&mut priors.alpha, self.alpha),
            (&mut priors.c, self.c),
            (&mut priors.p, self.p),
        ];
        for (slot, value) in overrides {
            if let Some(v) = value {
                *slot = v;
            }
        }
        priors.validate().map_err(|e| usage("priors", e))?;
        Ok(priors)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BinningSection {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub delta: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub growth: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub n_max: Option<u32>,
}

impl BinningSection {
    pub fn resolve(&self) -> Result<BinningConfig, CliError> {
        let d = BinningConfig::default();
        BinningConfig::new(
            self.delta.unwrap_or(d.delta),
            self.growth.unwrap_or(d.growth),
            self.n_max.unwrap_or(d.n_max),
        )
        .map_err(|e| usage("binning", e))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FitSection {
    pub max_outer: usize,
    pub convergence_frac: f64,
    /// Starting point in internal coordinates; zero is the prior median.
    pub theta0: [f64; 5],
    /// Posterior draws behind the reported quantiles.
    pub summary_samples: usize,
}

impl Default for FitSection {
    fn default() -> Self {
        Self {
            max_outer: 100,
            convergence_frac: 0.01,
            theta0: [0.0; 5],
            summary_samples: 10_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct McmcSection {
    pub n_iter: usize,
    pub burn_in: usize,
    pub proposal_scales: [f64; 5],
    pub theta0: [f64; 5],
}

impl Default for McmcSection {
    fn default() -> Self {
        Self {
            n_iter: 15_000,
            burn_in: 5_000,
            proposal_scales: [0.1; 5],
            theta0: [0.0; 5],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DiagnoseSection {
    /// Posterior draws behind the compensator band.
    pub samples: usize,
}

impl Default for DiagnoseSection {
    fn default() -> Self {
        Self { samples: 1000 }
    }
}

impl Config {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let config: Config = toml::from_str(text).map_err(|e| CliError::Usage(format!("bad config: {e}")))?;
        config.window.validate().map_err(|e| usage("window", e))?;
        if let Some(params) = &config.params {
            params.validate().map_err(|e| usage("params", e))?;
        }
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        Self::parse(&read_text(path)?)
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    pub fn ties(&self) -> TiePolicy {
        match self.catalog.jitter_ties {
            Some(eps) => TiePolicy::Jitter(eps),
            None => TiePolicy::Reject,
        }
    }
}

pub fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::Usage(format!("cannot read {}: {e}", path.display())))
}

pub(crate) fn usage(field: &str, e: etas_core::Error) -> CliError {
    CliError::Usage(format!("{field}: {e}"))
}
