//! Component-wise random-walk Metropolis-Hastings on the exact ETAS
//! posterior in internal coordinates. Serves as the reference against which
//! the linearized fit is checked.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::EventCatalog;
use crate::error::{Error, Result};
use crate::model::{omori_log_integral, EtasParams};
use crate::priors::{EtasPriors, InternalTheta, THETA_CLAMP};
use crate::stats::{mean_sd, QuantileSummary};
use crate::sum::NeumaierSum;

/// Consecutive rejected proposals after which a chain is reported stuck.
pub const STUCK_THRESHOLD: usize = 10_000;
const ADAPT_BATCH: usize = 50;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct McmcConfig {
    /// Total iterations, burn-in included.
    pub n_iter: usize,
    pub burn_in: usize,
    pub proposal_scales: [f64; 5],
    pub seed: u64,
    pub priors: EtasPriors,
    #[serde(default)]
    pub theta0: [f64; 5],
}

impl McmcConfig {
    pub fn new(priors: EtasPriors, seed: u64) -> Self {
        Self {
            n_iter: 15_000,
            burn_in: 5_000,
            proposal_scales: [0.1; 5],
            seed,
            priors,
            theta0: [0.0; 5],
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        if self.burn_in >= self.n_iter {
            return Err(Error::InvalidParameter(format!(
                "burn_in ({}) must be below n_iter ({})",
                self.burn_in, self.n_iter
            )));
        }
        if self.proposal_scales.iter().any(|s| !(*s > 0.0 && s.is_finite())) {
            return Err(Error::InvalidParameter("proposal scales must be positive".into()));
        }
        if self.theta0.iter().any(|v| v.abs() > THETA_CLAMP || v.is_nan()) {
            return Err(Error::InvalidParameter("theta0 must lie within the link range".into()));
        }
        Ok(())
    }
}

/// A log-density that can be updated one coordinate at a time.
pub trait ComponentTarget {
    /// Log-density at the current state.
    fn log_density(&self) -> f64;
    /// Log-density at `theta`, which differs from the current state only in
    /// coordinate `j`. The evaluation is kept until the next call.
    fn propose(&mut self, theta: &InternalTheta, j: usize) -> f64;
    /// Makes the last proposal the current state.
    fn accept(&mut self);
}

/// Standard normal target: the posterior with the likelihood switched off.
#[derive(Debug, Clone)]
pub struct PriorOnlyTarget {
    current: f64,
    proposed: f64,
}

impl PriorOnlyTarget {
    pub fn new(theta: &InternalTheta) -> Self {
        let v = -0.5 * theta.norm_squared();
        Self {
            current: v,
            proposed: v,
        }
    }
}

impl ComponentTarget for PriorOnlyTarget {
    fn log_density(&self) -> f64 {
        self.current
    }

    fn propose(&mut self, theta: &InternalTheta, _j: usize) -> f64 {
        self.proposed = -0.5 * theta.norm_squared();
        self.proposed
    }

    fn accept(&mut self) {
        self.current = self.proposed;
    }
}

#[derive(Debug, Clone, Default)]
struct Buffers {
    /// `ln(1 + (t_i - t_k)/c)` for `k < i`, row-major lower triangle.
    log_u: Vec<f64>,
    /// `exp(alpha (m_k - M0))`.
    prod: Vec<f64>,
    /// Triggered sum at each event, without the factor `K`.
    s: Vec<f64>,
    /// Omori mass of each event over the rest of the window.
    mass: Vec<f64>,
}

#[derive(Debug, Clone, Copy, Default)]
struct Fresh {
    log_u: bool,
    prod: bool,
    s: bool,
    mass: bool,
}

/// Exact ETAS log-posterior with cached per-pair terms, so `mu` and `K`
/// updates cost `O(n)` and the others `O(n^2)`.
#[derive(Debug, Clone)]
pub struct EtasTarget {
    priors: EtasPriors,
    times: Vec<f64>,
    dm: Vec<f64>,
    length: f64,
    t_end: f64,
    params: EtasParams,
    value: f64,
    cur: Buffers,
    cand: Buffers,
    fresh: Fresh,
    cand_params: EtasParams,
    cand_value: f64,
}

fn tri(i: usize) -> usize {
    i * (i.saturating_sub(1)) / 2
}

impl EtasTarget {
    pub fn new(catalog: &EventCatalog, priors: &EtasPriors, theta: &InternalTheta) -> Self {
        let w = catalog.window();
        let times: Vec<f64> = catalog.times().collect();
        let dm = catalog.events().iter().map(|e| e.magnitude - w.m_cutoff).collect();
        let params = priors.to_natural(theta);
        let mut target = Self {
            priors: *priors,
            times,
            dm,
            length: w.length(),
            t_end: w.t_end,
            params,
            value: 0.0,
            cur: Buffers::default(),
            cand: Buffers::default(),
            fresh: Fresh::default(),
            cand_params: params,
            cand_value: 0.0,
        };
        let mut b = Buffers::default();
        target.fill_log_u(&mut b.log_u, params.c);
        target.fill_prod(&mut b.prod, params.alpha);
        target.fill_s(&mut b.s, &b.log_u, &b.prod, params.p);
        target.fill_mass(&mut b.mass, params.c, params.p);
        target.value = target.log_likelihood(&params, &b.prod, &b.s, &b.mass) - 0.5 * theta.norm_squared();
        target.cand = b.clone();
        target.cur = b;
        target
    }

    pub fn params(&self) -> &EtasParams {
        &self.params
    }

    fn fill_log_u(&self, out: &mut Vec<f64>, c: f64) {
        let n = self.times.len();
        out.clear();
        out.reserve(tri(n));
        for i in 0..n {
            for k in 0..i {
                out.push(((self.times[i] - self.times[k]) / c).ln_1p());
            }
        }
    }

    fn fill_prod(&self, out: &mut Vec<f64>, alpha: f64) {
        out.clear();
        out.extend(self.dm.iter().map(|d| (alpha * d).exp()));
    }

    fn fill_s(&self, out: &mut Vec<f64>, log_u: &[f64], prod: &[f64], p: f64) {
        let n = self.times.len();
        out.clear();
        for i in 0..n {
            let row = &log_u[tri(i)..tri(i) + i];
            let mut acc = NeumaierSum::new();
            for (lu, pr) in row.iter().zip(prod) {
                acc.add(pr * (-p * lu).exp());
            }
            out.push(acc.value());
        }
    }

    fn fill_mass(&self, out: &mut Vec<f64>, c: f64, p: f64) {
        out.clear();
        out.extend(
            self.times
                .iter()
                .map(|t| omori_log_integral(0.0, self.t_end - t, c, p).value.exp()),
        );
    }

    fn log_likelihood(&self, params: &EtasParams, prod: &[f64], s: &[f64], mass: &[f64]) -> f64 {
        let mut acc = NeumaierSum::new();
        acc.add(-params.mu * self.length);
        let mut triggered = NeumaierSum::new();
        for (pr, m) in prod.iter().zip(mass) {
            triggered.add(pr * m);
        }
        acc.add(-params.k * triggered.value());
        for &si in s {
            let lambda = params.mu + params.k * si;
            if !(lambda > 0.0) {
                return f64::NEG_INFINITY;
            }
            acc.add(lambda.ln());
        }
        acc.value()
    }
}

impl ComponentTarget for EtasTarget {
    fn log_density(&self) -> f64 {
        self.value
    }

    fn propose(&mut self, theta: &InternalTheta, j: usize) -> f64 {
        let params = self.priors.to_natural(theta);
        let mut cand = std::mem::take(&mut self.cand);
        self.fresh = Fresh::default();
        match j {
            2 => {
                self.fill_prod(&mut cand.prod, params.alpha);
                self.fill_s(&mut cand.s, &self.cur.log_u, &cand.prod, params.p);
                self.fresh.prod = true;
                self.fresh.s = true;
            }
            3 => {
                self.fill_log_u(&mut cand.log_u, params.c);
                self.fill_s(&mut cand.s, &cand.log_u, &self.cur.prod, params.p);
                self.fill_mass(&mut cand.mass, params.c, params.p);
                self.fresh = Fresh {
                    log_u: true,
                    prod: false,
                    s: true,
                    mass: true,
                };
            }
            4 => {
                self.fill_s(&mut cand.s, &self.cur.log_u, &self.cur.prod, params.p);
                self.fill_mass(&mut cand.mass, params.c, params.p);
                self.fresh.s = true;
                self.fresh.mass = true;
            }
            _ => {}
        }
        let prod = if self.fresh.prod { &cand.prod } else { &self.cur.prod };
        let s = if self.fresh.s { &cand.s } else { &self.cur.s };
        let mass = if self.fresh.mass { &cand.mass } else { &self.cur.mass };
        let ll = self.log_likelihood(&params, prod, s, mass);
        self.cand = cand;
        self.cand_params = params;
        self.cand_value = ll - 0.5 * theta.norm_squared();
        self.cand_value
    }

    fn accept(&mut self) {
        let f = self.fresh;
        if f.log_u {
            std::mem::swap(&mut self.cur.log_u, &mut self.cand.log_u);
        }
        if f.prod {
            std::mem::swap(&mut self.cur.prod, &mut self.cand.prod);
        }
        if f.s {
            std::mem::swap(&mut self.cur.s, &mut self.cand.s);
        }
        if f.mass {
            std::mem::swap(&mut self.cur.mass, &mut self.cand.mass);
        }
        self.fresh = Fresh::default();
        self.params = self.cand_params;
        self.value = self.cand_value;
    }
}

/// Post-burn-in draws of a chain.
#[derive(Debug, Clone, PartialEq)]
pub struct McmcChains {
    pub internal: Vec<[f64; 5]>,
    pub natural: Vec<EtasParams>,
    /// Post-burn-in acceptance rate per coordinate.
    pub acceptance: [f64; 5],
    /// Proposal scales frozen at the end of burn-in.
    pub scales: [f64; 5],
    pub stuck: bool,
}

impl McmcChains {
    /// `iteration,theta_mu,...,theta_p,mu,k,alpha,c,p`.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("iteration,theta_mu,theta_k,theta_alpha,theta_c,theta_p,mu,k,alpha,c,p\n");
        for (i, (t, n)) in self.internal.iter().zip(&self.natural).enumerate() {
            let cols: Vec<String> = t
                .iter()
                .chain(n.as_array().iter())
                .map(|v| v.to_string())
                .collect();
            out.push_str(&format!("{},{}\n", i, cols.join(",")));
        }
        out
    }
}

/// Runs the component-wise sampler on any [`ComponentTarget`]. Scales adapt
/// towards 20-40% acceptance during burn-in and are frozen afterwards.
pub fn run_sampler<T: ComponentTarget>(target: &mut T, config: &McmcConfig) -> Result<Vec<[f64; 5]>> {
    Ok(run_chain(target, config)?.0)
}

fn run_chain<T: ComponentTarget>(target: &mut T, config: &McmcConfig) -> Result<(Vec<[f64; 5]>, [f64; 5], [f64; 5], bool)> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut theta = InternalTheta::from(config.theta0);
    let mut scales = config.proposal_scales;
    let mut batch_accepts = [0usize; 5];
    let mut post_accepts = [0usize; 5];
    let mut rejected_run = 0usize;
    let mut stuck = false;
    let mut draws = Vec::with_capacity(config.n_iter - config.burn_in);
    for it in 0..config.n_iter {
        for j in 0..5 {
            let z: f64 = StandardNormal.sample(&mut rng);
            let u: f64 = rng.random();
            let proposal = theta[j] + scales[j] * z;
            // the prior puts negligible mass beyond the link clamp
            let accepted = if proposal.abs() > THETA_CLAMP {
                false
            } else {
                let mut cand = theta;
                cand[j] = proposal;
                let current = target.log_density();
                let value = target.propose(&cand, j);
                let ok = value > f64::NEG_INFINITY && (value >= current || u.ln() < value - current);
                if ok {
                    target.accept();
                    theta = cand;
                }
                ok
            };
            if accepted {
                rejected_run = 0;
                if it < config.burn_in {
                    batch_accepts[j] += 1;
                } else {
                    post_accepts[j] += 1;
                }
            } else {
                rejected_run += 1;
                if rejected_run >= STUCK_THRESHOLD && !stuck {
                    stuck = true;
                    warn!("chain stuck: {STUCK_THRESHOLD} consecutive proposals rejected at iteration {it}");
                }
            }
        }
        if it < config.burn_in && (it + 1) % ADAPT_BATCH == 0 {
            for j in 0..5 {
                let rate = batch_accepts[j] as f64 / ADAPT_BATCH as f64;
                if rate < 0.2 {
                    scales[j] *= 0.7;
                } else if rate > 0.4 {
                    scales[j] *= 1.4;
                }
                batch_accepts[j] = 0;
            }
        }
        if it >= config.burn_in {
            draws.push(std::array::from_fn(|j| theta[j]));
        }
    }
    let kept = draws.len() as f64;
    let acceptance = std::array::from_fn(|j| post_accepts[j] as f64 / kept);
    Ok((draws, acceptance, scales, stuck))
}

/// Samples the exact ETAS posterior for `catalog`.
pub fn mh_sample(catalog: &EventCatalog, config: &McmcConfig) -> Result<McmcChains> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    config.validate()?;
    let mut target = EtasTarget::new(catalog, &config.priors, &InternalTheta::from(config.theta0));
    let (internal, acceptance, scales, stuck) = run_chain(&mut target, config)?;
    let natural = internal
        .iter()
        .map(|t| config.priors.to_natural(&InternalTheta::from(*t)))
        .collect();
    Ok(McmcChains {
        internal,
        natural,
        acceptance,
        scales,
        stuck,
    })
}

/// Effective sample size by Geyer's initial monotone sequence estimator.
/// `None` for a constant chain.
pub fn effective_sample_size(x: &[f64]) -> Option<f64> {
    let n = x.len();
    if n < 4 {
        return None;
    }
    let (mean, _) = mean_sd(x);
    let centered: Vec<f64> = x.iter().map(|v| v - mean).collect();
    let autocov = |lag: usize| -> f64 {
        let mut acc = NeumaierSum::new();
        for i in 0..n - lag {
            acc.add(centered[i] * centered[i + lag]);
        }
        acc.value() / n as f64
    };
    let c0 = autocov(0);
    if !(c0 > 0.0) {
        return None;
    }
    let mut tau = -1.0;
    let mut prev_pair = f64::INFINITY;
    let mut lag = 0;
    while lag + 1 < n {
        let pair = (autocov(lag) + autocov(lag + 1)) / c0;
        if pair <= 0.0 {
            break;
        }
        let pair = pair.min(prev_pair);
        tau += 2.0 * pair;
        prev_pair = pair;
        lag += 2;
    }
    Some(n as f64 / tau.max(1.0 / n as f64))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoordinateReport {
    pub name: String,
    pub acceptance: f64,
    /// `None` when the chain is constant.
    pub ess: Option<f64>,
    pub summary: QuantileSummary,
}

/// Per-parameter acceptance, effective sample size and natural-scale
/// summaries.
pub fn chain_diagnostics(chains: &McmcChains) -> Result<Vec<CoordinateReport>> {
    if chains.natural.is_empty() {
        return Err(Error::Degenerate("empty chain".into()));
    }
    Ok((0..5)
        .map(|j| {
            let col: Vec<f64> = chains.natural.iter().map(|p| p.as_array()[j]).collect();
            CoordinateReport {
                name: EtasParams::NAMES[j].to_string(),
                acceptance: chains.acceptance[j],
                ess: effective_sample_size(&col),
                summary: QuantileSummary::from_samples(col),
            }
        })
        .collect())
}
