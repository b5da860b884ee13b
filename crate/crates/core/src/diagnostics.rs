//! Residual analysis by random time change, and posterior-predictive bands
//! for the compensator.
//!
//! If the model is right, the compensator maps the observed times to a
//! unit-rate Poisson process. Conditional on the number of events, the
//! transformed times are then uniform on `[0, Lambda(T2)]`.

use serde::{Deserialize, Serialize};

use crate::catalog::EventCatalog;
use crate::error::{Error, Result};
use crate::inference::{sample_posterior, PosteriorResult};
use crate::model::{compensator, EtasParams};
use crate::stats::{kolmogorov_p_value, ks_statistic, quantile_sorted};

/// `Lambda(t_i)` for every event, in time order.
pub fn transformed_times(catalog: &EventCatalog, params: &EtasParams) -> Vec<f64> {
    catalog.times().map(|t| compensator(t, catalog, params)).collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UniformityTest {
    pub statistic: f64,
    pub p_value: f64,
    pub n: usize,
}

/// KS test of `transformed / total_mass` against Uniform(0, 1), where
/// `total_mass` is the compensator at the end of the window.
pub fn uniformity_test(transformed: &[f64], total_mass: f64) -> Result<UniformityTest> {
    if transformed.len() < 5 {
        return Err(Error::Degenerate(format!(
            "uniformity test needs at least 5 points, got {}",
            transformed.len()
        )));
    }
    if !(total_mass > 0.0 && total_mass.is_finite()) {
        return Err(Error::Domain(format!("total mass must be positive, got {total_mass}")));
    }
    let scaled: Vec<f64> = transformed.iter().map(|v| v / total_mass).collect();
    let statistic = ks_statistic(&scaled, |x| x.clamp(0.0, 1.0));
    Ok(UniformityTest {
        statistic,
        p_value: kolmogorov_p_value(statistic, scaled.len()),
        n: scaled.len(),
    })
}

/// Random time change followed by the uniformity test.
pub fn residual_test(catalog: &EventCatalog, params: &EtasParams) -> Result<UniformityTest> {
    let transformed = transformed_times(catalog, params);
    uniformity_test(&transformed, compensator(catalog.window().t_end, catalog, params))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvelopeRow {
    pub t: f64,
    /// Observed events up to and including `t`.
    pub n_obs: usize,
    pub q025: f64,
    pub q25: f64,
    pub q50: f64,
    pub q75: f64,
    pub q975: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Envelope {
    pub rows: Vec<EnvelopeRow>,
}

impl Envelope {
    /// `t,N_obs,q2.5,q25,q50,q75,q97.5`.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("t,N_obs,q2.5,q25,q50,q75,q97.5\n");
        for r in &self.rows {
            out.push_str(&format!(
                "{},{},{},{},{},{},{}\n",
                r.t, r.n_obs, r.q025, r.q25, r.q50, r.q75, r.q975
            ));
        }
        out
    }

    /// Fraction of rows whose observed count lies inside the 95% band.
    pub fn coverage(&self) -> f64 {
        if self.rows.is_empty() {
            return f64::NAN;
        }
        let inside = self
            .rows
            .iter()
            .filter(|r| (r.q025..=r.q975).contains(&(r.n_obs as f64)))
            .count();
        inside as f64 / self.rows.len() as f64
    }
}

/// Percentiles of `Lambda(t_i)` across posterior draws at every event time,
/// alongside the observed cumulative count.
pub fn predictive_band(
    catalog: &EventCatalog,
    posterior: &PosteriorResult,
    n_samples: usize,
    seed: u64,
    force: bool,
) -> Result<Envelope> {
    if n_samples == 0 {
        return Err(Error::InvalidParameter("need at least one posterior draw".into()));
    }
    let draws = sample_posterior(posterior, n_samples, seed, force)?;
    Ok(band_from_draws(catalog, &draws))
}

/// Envelope over an explicit set of parameter draws.
pub fn band_from_draws(catalog: &EventCatalog, draws: &[EtasParams]) -> Envelope {
    let curves: Vec<Vec<f64>> = draws.iter().map(|p| transformed_times(catalog, p)).collect();
    let rows = catalog
        .times()
        .enumerate()
        .map(|(i, t)| {
            let mut col: Vec<f64> = curves.iter().map(|c| c[i]).collect();
            col.sort_by(f64::total_cmp);
            EnvelopeRow {
                t,
                n_obs: i + 1,
                q025: quantile_sorted(&col, 0.025),
                q25: quantile_sorted(&col, 0.25),
                q50: quantile_sorted(&col, 0.50),
                q75: quantile_sorted(&col, 0.75),
                q975: quantile_sorted(&col, 0.975),
            }
        })
        .collect();
    Envelope { rows }
}
