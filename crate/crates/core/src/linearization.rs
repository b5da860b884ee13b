//! Three-part linearization of the ETAS log-likelihood.
//!
//! The log-likelihood is split into the expected number of background
//! events, the expected number of events triggered by each observation
//! (integrated bin by bin), and the sum of log-intensities at the observed
//! times. Each piece is written as the log-predictor of a surrogate Poisson
//! observation, and every log-predictor is expanded to first order in the
//! internal parameters around a linearization point `theta*`:
//!
//! ```text
//! L~(theta) = -exp(lin_0) - sum_{h,i} exp(lin_{h,i}) + sum_h lin_h
//! ```
//!
//! Because each bin integral has a closed form, the expansion reproduces the
//! exact log-likelihood at `theta = theta*`.

use nalgebra::{Matrix5, Vector5};
use serde::{Deserialize, Serialize};

use crate::catalog::{EventCatalog, ObservationWindow};
use crate::error::{Error, Result};
use crate::model::{omori_log_integral, EtasParams};
use crate::priors::{EtasPriors, InternalTheta};
use crate::sum::NeumaierSum;

pub const MU: usize = 0;
pub const K: usize = 1;
pub const ALPHA: usize = 2;
pub const C: usize = 3;
pub const P: usize = 4;

/// Part-II rows whose bin mass falls below this are dropped as inert.
pub const UNDERFLOW_MASS: f64 = 1e-300;

/// Geometric per-event time binning: the first bin has length `delta` and
/// breakpoints sit at `t_h + delta (1 + growth)^k` for `k = 0..=n_max`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BinningConfig {
    pub delta: f64,
    pub growth: f64,
    pub n_max: u32,
}

impl Default for BinningConfig {
    fn default() -> Self {
        Self {
            delta: 0.1,
            growth: 2.0,
            n_max: 10,
        }
    }
}

impl BinningConfig {
    pub fn new(delta: f64, growth: f64, n_max: u32) -> Result<Self> {
        let cfg = Self { delta, growth, n_max };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.delta > 0.0 && self.growth > 0.0 && self.delta.is_finite() && self.growth.is_finite() {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid binning {self:?}")))
        }
    }
}

/// Breakpoints of the bins for an event at `t_h`: starts at
/// `max(t_start, t_h)`, ends at `t_end`, strictly increasing.
pub fn time_bins(t_h: f64, window: &ObservationWindow, cfg: &BinningConfig) -> Vec<f64> {
    let start = t_h.max(window.t_start);
    let mut points = vec![start];
    let mut width = cfg.delta;
    for _ in 0..=cfg.n_max {
        let t = t_h + width;
        if t >= window.t_end {
            break;
        }
        if t > *points.last().expect("non-empty") {
            points.push(t);
        }
        width *= 1.0 + cfg.growth;
    }
    if window.t_end > *points.last().expect("non-empty") {
        points.push(window.t_end);
    }
    points
}

/// Which likelihood component a surrogate row encodes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Part {
    /// Integrated background rate.
    #[serde(rename = "I")]
    Background,
    /// Events triggered by one observation inside one bin.
    #[serde(rename = "II")]
    Triggered,
    /// Log-intensity at an observed time.
    #[serde(rename = "III")]
    Intensity,
}

impl Part {
    pub fn label(self) -> &'static str {
        match self {
            Part::Background => "I",
            Part::Triggered => "II",
            Part::Intensity => "III",
        }
    }
}

/// One pseudo-observation of the surrogate Poisson model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SurrogateRow {
    pub part: Part,
    pub event: Option<usize>,
    pub bin: Option<(f64, f64)>,
    pub count: u8,
    pub exposure: u8,
}

/// All surrogate rows for one catalog and binning. The bins do not depend on
/// the parameters, so they are built once per fit.
#[derive(Debug, Clone)]
pub struct SurrogateDataset<'a> {
    catalog: &'a EventCatalog,
    binning: BinningConfig,
    rows: Vec<SurrogateRow>,
}

/// Builds the surrogate dataset: one Part-I row, one Part-II row per bin of
/// every event and one Part-III row per event.
pub fn build_surrogate<'a>(catalog: &'a EventCatalog, cfg: &BinningConfig) -> Result<SurrogateDataset<'a>> {
    if catalog.is_empty() {
        return Err(Error::EmptyCatalog);
    }
    cfg.validate()?;
    let window = catalog.window();
    let mut rows = vec![SurrogateRow {
        part: Part::Background,
        event: None,
        bin: None,
        count: 0,
        exposure: 1,
    }];
    for (h, e) in catalog.events().iter().enumerate() {
        let bins = time_bins(e.time, window, cfg);
        rows.extend(bins.windows(2).map(|b| SurrogateRow {
            part: Part::Triggered,
            event: Some(h),
            bin: Some((b[0], b[1])),
            count: 0,
            exposure: 1,
        }));
    }
    rows.extend((0..catalog.len()).map(|h| SurrogateRow {
        part: Part::Intensity,
        event: Some(h),
        bin: None,
        count: 1,
        exposure: 0,
    }));
    Ok(SurrogateDataset {
        catalog,
        binning: *cfg,
        rows,
    })
}

impl<'a> SurrogateDataset<'a> {
    pub fn rows(&self) -> &[SurrogateRow] {
        &self.rows
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn catalog(&self) -> &'a EventCatalog {
        self.catalog
    }

    pub fn binning(&self) -> &BinningConfig {
        &self.binning
    }

    /// Debug export: `part,event,t_lo,t_hi,count,exposure`.
    pub fn to_delimited(&self) -> String {
        let mut out = String::from("part,event,t_lo,t_hi,count,exposure\n");
        for r in &self.rows {
            let event = r.event.map(|h| h.to_string()).unwrap_or_default();
            let (lo, hi) = r
                .bin
                .map(|(a, b)| (a.to_string(), b.to_string()))
                .unwrap_or_default();
            out.push_str(&format!(
                "{},{},{},{},{},{}\n",
                r.part.label(),
                event,
                lo,
                hi,
                r.count,
                r.exposure
            ));
        }
        out
    }

    /// Evaluates every row's log-predictor and gradient at `theta_star`.
    pub fn linearize(&self, theta_star: &InternalTheta, priors: &EtasPriors) -> Result<Linearization> {
        let params = priors.to_natural(theta_star);
        let jac = priors.jacobians(theta_star)?;
        let mut linear_value = NeumaierSum::new();
        let mut linear_grad = [NeumaierSum::new(); 5];
        let mut exposure_terms = Vec::with_capacity(self.rows.len());
        let mut inert = 0;
        let mut degenerate = false;
        for row in &self.rows {
            let pred = match row.part {
                Part::Background => part1(self.catalog.window(), &params, &jac),
                Part::Triggered => part2(row, self.catalog, &params, &jac)?,
                Part::Intensity => {
                    let h = row.event.ok_or_else(|| Error::Domain("intensity row without event".into()))?;
                    part3(h, self.catalog, &params, &jac)
                }
            };
            if row.exposure > 0 {
                if pred.value < UNDERFLOW_MASS.ln() {
                    inert += 1;
                    continue;
                }
                exposure_terms.push(ExposureTerm {
                    exposure: f64::from(row.exposure),
                    value: pred.value,
                    gradient: pred.gradient,
                });
            }
            if row.count > 0 {
                if pred.value == f64::NEG_INFINITY {
                    degenerate = true;
                    continue;
                }
                let c = f64::from(row.count);
                linear_value.add(c * pred.value);
                for j in 0..5 {
                    linear_grad[j].add(c * pred.gradient[j]);
                }
            }
        }
        Ok(Linearization {
            theta_star: *theta_star,
            linear_value: if degenerate {
                f64::NEG_INFINITY
            } else {
                linear_value.value()
            },
            linear_gradient: Vector5::from_fn(|j, _| linear_grad[j].value()),
            exposure_terms,
            inert_rows: inert,
        })
    }
}

/// A log-predictor and its gradient in internal coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Predictor {
    pub value: f64,
    pub gradient: Vector5<f64>,
}

impl Predictor {
    fn sentinel() -> Self {
        Self {
            value: f64::NEG_INFINITY,
            gradient: Vector5::zeros(),
        }
    }

    /// First-order expansion at `theta` around the point it was computed at.
    pub fn linear(&self, delta: &Vector5<f64>) -> f64 {
        self.value + self.gradient.dot(delta)
    }
}

fn part1(window: &ObservationWindow, params: &EtasParams, jac: &[f64; 5]) -> Predictor {
    let mut gradient = Vector5::zeros();
    gradient[MU] = jac[MU] / params.mu;
    Predictor {
        value: window.length().ln() + params.mu.ln(),
        gradient,
    }
}

fn part2(row: &SurrogateRow, catalog: &EventCatalog, params: &EtasParams, jac: &[f64; 5]) -> Result<Predictor> {
    let (h, (t_lo, t_hi)) = match (row.event, row.bin) {
        (Some(h), Some(bin)) => (h, bin),
        _ => return Err(Error::Domain("triggered row needs an event and a bin".into())),
    };
    let event = catalog.events()[h];
    if params.k <= 0.0 {
        return Ok(Predictor::sentinel());
    }
    let dm = event.magnitude - catalog.window().m_cutoff;
    let integral = omori_log_integral(t_lo - event.time, t_hi - event.time, params.c, params.p);
    let value = params.k.ln() + params.alpha * dm + integral.value;
    if value == f64::NEG_INFINITY {
        return Ok(Predictor::sentinel());
    }
    let mut gradient = Vector5::zeros();
    gradient[K] = jac[K] / params.k;
    gradient[ALPHA] = dm * jac[ALPHA];
    gradient[C] = integral.d_c * jac[C];
    gradient[P] = integral.d_p * jac[P];
    Ok(Predictor { value, gradient })
}

fn part3(h: usize, catalog: &EventCatalog, params: &EtasParams, jac: &[f64; 5]) -> Predictor {
    let event = catalog.events()[h];
    let m0 = catalog.window().m_cutoff;
    let history = catalog.history_before(event.time);
    let EtasParams { mu, k, alpha, c, p } = *params;

    // triggered terms are scaled by exp(-max) to keep them in range
    let mut logs = Vec::with_capacity(history.len());
    for prev in history {
        let dt = event.time - prev.time;
        logs.push(alpha * (prev.magnitude - m0) - p * (dt / c).ln_1p());
    }
    let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut s0 = NeumaierSum::new();
    let mut s_alpha = NeumaierSum::new();
    let mut s_c = NeumaierSum::new();
    let mut s_p = NeumaierSum::new();
    for (prev, &l) in history.iter().zip(&logs) {
        let w = (l - max).exp();
        let dt = event.time - prev.time;
        let log_u = (dt / c).ln_1p();
        s0.add(w);
        s_alpha.add(w * (prev.magnitude - m0));
        s_c.add(w * p * dt / (c * (c + dt)));
        s_p.add(-w * log_u);
    }
    let s0 = s0.value();
    let triggered_log = if history.is_empty() || k <= 0.0 {
        f64::NEG_INFINITY
    } else {
        k.ln() + max + s0.ln()
    };
    let log_lambda = log_add(mu.ln(), triggered_log);
    if log_lambda == f64::NEG_INFINITY {
        return Predictor::sentinel();
    }
    let mut gradient = Vector5::zeros();
    gradient[MU] = (-log_lambda).exp() * jac[MU];
    if !history.is_empty() {
        // derivative of lambda per unit of K, relative to lambda
        let per_k = (max - log_lambda).exp();
        gradient[K] = per_k * s0 * jac[K];
        gradient[ALPHA] = k * per_k * s_alpha.value() * jac[ALPHA];
        gradient[C] = k * per_k * s_c.value() * jac[C];
        gradient[P] = k * per_k * s_p.value() * jac[P];
    }
    Predictor {
        value: log_lambda,
        gradient,
    }
}

fn log_add(a: f64, b: f64) -> f64 {
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    if hi == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    hi + (lo - hi).exp().ln_1p()
}

/// Log-predictor of the background row: `ln((T2 - T1) mu)`.
pub fn predictor_part1(theta: &InternalTheta, window: &ObservationWindow, priors: &EtasPriors) -> Result<Predictor> {
    let params = priors.to_natural(theta);
    Ok(part1(window, &params, &priors.jacobians(theta)?))
}

/// Log-predictor of a triggered-events row: `ln(K e^{alpha (m_h - M0)} I_t(bin))`.
pub fn predictor_part2(
    theta: &InternalTheta,
    row: &SurrogateRow,
    catalog: &EventCatalog,
    priors: &EtasPriors,
) -> Result<Predictor> {
    if row.part != Part::Triggered {
        return Err(Error::Domain(format!("expected a Part II row, got {:?}", row.part)));
    }
    let params = priors.to_natural(theta);
    part2(row, catalog, &params, &priors.jacobians(theta)?)
}

/// Log-predictor of an intensity row: `ln lambda(t_h)`.
pub fn predictor_part3(
    theta: &InternalTheta,
    event_index: usize,
    catalog: &EventCatalog,
    priors: &EtasPriors,
) -> Result<Predictor> {
    if event_index >= catalog.len() {
        return Err(Error::Domain(format!("event index {event_index} out of range")));
    }
    let params = priors.to_natural(theta);
    Ok(part3(event_index, catalog, &params, &priors.jacobians(theta)?))
}

#[derive(Debug, Clone, Copy, PartialEq)]
struct ExposureTerm {
    exposure: f64,
    value: f64,
    gradient: Vector5<f64>,
}

/// The surrogate Poisson log-likelihood with every log-predictor linearized
/// around `theta_star`.
#[derive(Debug, Clone)]
pub struct Linearization {
    theta_star: InternalTheta,
    /// Sum of `count * predictor` over count rows, at `theta_star`.
    linear_value: f64,
    linear_gradient: Vector5<f64>,
    exposure_terms: Vec<ExposureTerm>,
    inert_rows: usize,
}

/// Value, gradient and Hessian of an objective in internal coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Derivatives {
    pub value: f64,
    pub gradient: Vector5<f64>,
    pub hessian: Matrix5<f64>,
}

impl Linearization {
    /// Assembles a linearization from explicit `(count, predictor)` and
    /// `(exposure, predictor)` terms, all expanded around `theta_star`.
    pub fn from_terms(theta_star: InternalTheta, counts: &[(f64, Predictor)], exposures: &[(f64, Predictor)]) -> Self {
        let mut value = NeumaierSum::new();
        let mut grad = [NeumaierSum::new(); 5];
        for (c, pred) in counts {
            value.add(c * pred.value);
            for j in 0..5 {
                grad[j].add(c * pred.gradient[j]);
            }
        }
        Self {
            theta_star,
            linear_value: value.value(),
            linear_gradient: Vector5::from_fn(|j, _| grad[j].value()),
            exposure_terms: exposures
                .iter()
                .map(|(e, pred)| ExposureTerm {
                    exposure: *e,
                    value: pred.value,
                    gradient: pred.gradient,
                })
                .collect(),
            inert_rows: 0,
        }
    }

    pub fn theta_star(&self) -> &InternalTheta {
        &self.theta_star
    }

    /// Number of Part-II rows dropped because their mass underflowed.
    pub fn inert_rows(&self) -> usize {
        self.inert_rows
    }

    /// Approximate log-likelihood at `theta`.
    pub fn log_likelihood(&self, theta: &InternalTheta) -> f64 {
        let delta = theta - self.theta_star;
        let mut acc = NeumaierSum::new();
        acc.add(self.linear_value + self.linear_gradient.dot(&delta));
        for t in &self.exposure_terms {
            acc.add(-t.exposure * (t.value + t.gradient.dot(&delta)).exp());
        }
        acc.value()
    }

    /// Linearized log-posterior: approximate log-likelihood plus the
    /// standard-normal log-prior (constants dropped).
    pub fn log_posterior(&self, theta: &InternalTheta) -> f64 {
        self.log_likelihood(theta) - 0.5 * theta.norm_squared()
    }

    /// Log-posterior with gradient and Hessian.
    pub fn derivatives(&self, theta: &InternalTheta) -> Derivatives {
        let delta = theta - self.theta_star;
        let mut value = NeumaierSum::new();
        let mut grad = [NeumaierSum::new(); 5];
        value.add(self.linear_value + self.linear_gradient.dot(&delta));
        value.add(-0.5 * theta.norm_squared());
        for j in 0..5 {
            grad[j].add(self.linear_gradient[j]);
            grad[j].add(-theta[j]);
        }
        let mut hessian = -Matrix5::identity();
        for t in &self.exposure_terms {
            let w = t.exposure * (t.value + t.gradient.dot(&delta)).exp();
            value.add(-w);
            for j in 0..5 {
                grad[j].add(-w * t.gradient[j]);
            }
            hessian -= w * t.gradient * t.gradient.transpose();
        }
        Derivatives {
            value: value.value(),
            gradient: Vector5::from_fn(|j, _| grad[j].value()),
            hessian,
        }
    }
}

/// Approximate log-likelihood at `theta` for the expansion around
/// `theta_star`.
pub fn approx_log_likelihood(
    theta: &InternalTheta,
    theta_star: &InternalTheta,
    surrogate: &SurrogateDataset<'_>,
    priors: &EtasPriors,
) -> Result<f64> {
    Ok(surrogate.linearize(theta_star, priors)?.log_likelihood(theta))
}
