//! Synthetic ETAS catalogs by Ogata thinning, with Gutenberg-Richter
//! magnitudes.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Exp};
use serde::{Deserialize, Serialize};

use crate::catalog::{Event, EventCatalog, ObservationWindow, TiePolicy};
use crate::error::{Error, Result};
use crate::model::{branching_ratio, omori_log_integral, EtasParams};
use crate::sum::NeumaierSum;

fn default_max_events() -> usize {
    1_000_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimConfig {
    pub params: EtasParams,
    pub window: ObservationWindow,
    /// Gutenberg-Richter rate on the natural-log scale (`b ln 10`).
    pub gr_beta: f64,
    pub seed: u64,
    #[serde(default = "default_max_events")]
    pub max_events: usize,
}

impl SimConfig {
    pub fn new(params: EtasParams, window: ObservationWindow, gr_beta: f64, seed: u64) -> Self {
        Self {
            params,
            window,
            gr_beta,
            seed,
            max_events: default_max_events(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.window.validate()?;
        if !(self.gr_beta > 0.0 && self.gr_beta.is_finite()) {
            return Err(Error::InvalidParameter(format!("gr_beta must be > 0, got {}", self.gr_beta)));
        }
        Ok(())
    }
}

/// Expected direct offspring of one event within `horizon` days, averaging
/// the productivity over Gutenberg-Richter magnitudes.
pub fn expected_offspring(params: &EtasParams, gr_beta: f64, horizon: f64) -> f64 {
    if params.alpha >= gr_beta {
        return f64::INFINITY;
    }
    let mass = omori_log_integral(0.0, horizon, params.c, params.p).value.exp();
    params.k * gr_beta / (gr_beta - params.alpha) * mass
}

/// `M0 + Exponential(gr_beta)`.
pub fn sample_magnitude<R: Rng + ?Sized>(gr_beta: f64, m0: f64, rng: &mut R) -> Result<f64> {
    let exp = Exp::new(gr_beta).map_err(|_| Error::InvalidParameter(format!("gr_beta must be > 0, got {gr_beta}")))?;
    Ok(m0 + exp.sample(rng))
}

/// Maximum-likelihood Gutenberg-Richter rate `1 / mean(m - M0)`.
pub fn estimate_gr_beta(catalog: &EventCatalog) -> Result<f64> {
    if catalog.len() < 2 {
        return Err(Error::Degenerate("need at least two events to estimate gr_beta".into()));
    }
    let m0 = catalog.window().m_cutoff;
    let mut acc = NeumaierSum::new();
    for e in catalog.events() {
        acc.add(e.magnitude - m0);
    }
    let mean = acc.value() / catalog.len() as f64;
    if mean <= 0.0 {
        return Err(Error::Degenerate("all magnitudes equal the cutoff".into()));
    }
    Ok(1.0 / mean)
}

struct Triggering {
    productivity: Vec<f64>,
    times: Vec<f64>,
}

impl Triggering {
    fn intensity(&self, params: &EtasParams, t: f64) -> f64 {
        let mut acc = NeumaierSum::new();
        acc.add(params.mu);
        for (&kappa, &th) in self.productivity.iter().zip(&self.times) {
            acc.add(kappa * (-params.p * ((t - th) / params.c).ln_1p()).exp());
        }
        acc.value()
    }
}

/// Simulates a catalog whose ground intensity is the ETAS intensity with
/// `config.params`, by thinning. Between events the intensity only decays,
/// so its value just after the latest point bounds it until the next one.
pub fn simulate(config: &SimConfig) -> Result<EventCatalog> {
    config.validate()?;
    let SimConfig {
        params,
        window,
        gr_beta,
        seed,
        max_events,
    } = *config;
    let ratio = branching_ratio(&params, gr_beta);
    if expected_offspring(&params, gr_beta, window.length()) >= 1.0 {
        warn!("expected offspring per event is at least 1 (branching ratio {ratio:.3}); the process may explode");
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut state = Triggering {
        productivity: Vec::new(),
        times: Vec::new(),
    };
    let mut events = Vec::new();
    let mut t = window.t_start;
    loop {
        let bound = state.intensity(&params, t);
        if !(bound > 0.0) {
            break;
        }
        let wait: f64 = Exp::new(bound).expect("positive rate").sample(&mut rng);
        t += wait;
        if t >= window.t_end {
            break;
        }
        let lambda = state.intensity(&params, t);
        let u: f64 = rng.random();
        if u * bound <= lambda {
            let magnitude = sample_magnitude(gr_beta, window.m_cutoff, &mut rng)?;
            events.push(Event { time: t, magnitude });
            if events.len() > max_events {
                return Err(Error::Overflow {
                    max_events,
                    branching_ratio: ratio,
                });
            }
            state
                .productivity
                .push(params.k * (params.alpha * (magnitude - window.m_cutoff)).exp());
            state.times.push(t);
        }
    }
    if events.is_empty() {
        return EventCatalog::empty(window);
    }
    EventCatalog::new(events, window, TiePolicy::Reject)
}
