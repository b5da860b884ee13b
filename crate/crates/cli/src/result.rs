//! The fit result file: convergence record, trace, Gaussian approximation
//! and posterior marginals, as TOML.

use std::path::Path;

use etas_core::inference::{posterior_summary, TraceEntry};
use etas_core::stats::QuantileSummary;
use etas_core::{BinningConfig, EventCatalog, EtasPriors, GaussianApprox, InternalTheta, ObservationWindow, PosteriorResult, TiePolicy};
use serde::{Deserialize, Serialize};

use crate::config::read_text;
use crate::CliError;

pub const PARAM_NAMES: [&str; 5] = ["mu", "k", "alpha", "c", "p"];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Marginal {
    pub name: String,
    /// Internal-scale mean and sd of the Gaussian approximation.
    pub theta_mean: f64,
    pub theta_sd: f64,
    /// Natural-scale summary of posterior draws.
    pub mean: f64,
    pub sd: f64,
    pub q01: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitRecord {
    pub converged: bool,
    pub iterations: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub diagnostic: Option<String>,
    pub n_events: usize,
    pub window: ObservationWindow,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub jitter_ties: Option<f64>,
    pub inert_rows: usize,
    pub summary_seed: u64,
    pub theta_star: [f64; 5],
    pub mean: [f64; 5],
    pub covariance: [[f64; 5]; 5],
    pub binning: BinningConfig,
    pub priors: EtasPriors,
    pub marginals: Vec<Marginal>,
    pub trace: Vec<TraceEntry>,
}

impl FitRecord {
    pub fn new(
        result: &PosteriorResult,
        binning: BinningConfig,
        catalog: &EventCatalog,
        ties: TiePolicy,
        samples: usize,
        seed: u64,
    ) -> Result<Self, CliError> {
        let g = &result.gaussian;
        let sd = g.sd();
        let summaries: [QuantileSummary; 5] =
            posterior_summary(result, samples.max(1), seed, true).map_err(|e| CliError::Numerical(e.to_string()))?;
        let marginals = summaries
            .iter()
            .enumerate()
            .map(|(j, s)| Marginal {
                name: PARAM_NAMES[j].to_string(),
                theta_mean: g.mean[j],
                theta_sd: sd[j],
                mean: s.mean,
                sd: s.sd,
                q01: s.q01,
                q25: s.q25,
                q50: s.q50,
                q75: s.q75,
                q99: s.q99,
            })
            .collect();
        Ok(Self {
            converged: result.converged,
            iterations: result.iterations,
            diagnostic: result.diagnostic.clone(),
            n_events: catalog.len(),
            window: *catalog.window(),
            jitter_ties: match ties {
                TiePolicy::Jitter(eps) => Some(eps),
                TiePolicy::Reject => None,
            },
            inert_rows: result.inert_rows,
            summary_seed: seed,
            theta_star: result.theta_star.into(),
            mean: g.mean.into(),
            covariance: std::array::from_fn(|i| std::array::from_fn(|j| g.covariance[(i, j)])),
            binning,
            priors: result.priors,
            marginals,
            trace: result.trace.clone(),
        })
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("fit record serializes")
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        toml::from_str(&read_text(path)?)
            .map_err(|e| CliError::Usage(format!("bad result file {}: {e}", path.display())))
    }

    pub fn ties(&self) -> TiePolicy {
        self.jitter_ties.map_or(TiePolicy::Reject, TiePolicy::Jitter)
    }

    /// Rebuilds the posterior the record was written from.
    pub fn posterior(&self) -> Result<PosteriorResult, CliError> {
        let covariance = etas_core::nalgebra::Matrix5::from_fn(|i, j| self.covariance[i][j]);
        let gaussian = GaussianApprox::new(InternalTheta::from(self.mean), covariance)
            .map_err(|e| CliError::Usage(format!("bad result file: {e}")))?;
        Ok(PosteriorResult {
            theta_star: InternalTheta::from(self.theta_star),
            gaussian,
            priors: self.priors,
            trace: self.trace.clone(),
            converged: self.converged,
            iterations: self.iterations,
            diagnostic: self.diagnostic.clone(),
            inert_rows: self.inert_rows,
        })
    }
}
