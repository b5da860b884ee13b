//! Exact temporal ETAS model: triggering kernels, conditional intensity,
//! closed-form compensator and log-likelihood.
//!
//! The intensity is
//!
//! ```text
//! lambda(t) = mu + K * sum_{t_h < t} exp(alpha (m_h - M0)) ((t - t_h)/c + 1)^(-p)
//! ```
//!
//! with the mark density left out, since magnitudes are not modelled here.

use serde::{Deserialize, Serialize};

use crate::catalog::EventCatalog;
use crate::error::{Error, Result};
use crate::sum::NeumaierSum;

/// Parameters of the unnormalized Omori parametrization.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtasParams {
    /// Background rate, events per day.
    pub mu: f64,
    /// Productivity.
    pub k: f64,
    /// Magnitude scaling of productivity, per unit magnitude.
    pub alpha: f64,
    /// Omori offset, days.
    pub c: f64,
    /// Omori decay exponent.
    pub p: f64,
}

impl EtasParams {
    pub const NAMES: [&'static str; 5] = ["mu", "k", "alpha", "c", "p"];

    pub fn new(mu: f64, k: f64, alpha: f64, c: f64, p: f64) -> Result<Self> {
        let params = Self { mu, k, alpha, c, p };
        params.validate()?;
        Ok(params)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.as_array().iter().all(|v| v.is_finite())
            && self.mu >= 0.0
            && self.k >= 0.0
            && self.alpha >= 0.0
            && self.c > 0.0
            && self.p > 1.0;
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "need mu, K, alpha >= 0, c > 0, p > 1; got {self:?}"
            )))
        }
    }

    pub fn as_array(&self) -> [f64; 5] {
        [self.mu, self.k, self.alpha, self.c, self.p]
    }

    pub fn from_array(v: [f64; 5]) -> Self {
        Self {
            mu: v[0],
            k: v[1],
            alpha: v[2],
            c: v[3],
            p: v[4],
        }
    }
}

/// Parameters of the normalized-kernel parametrization, where each event's
/// Omori factor is `c^(p-1)/(p-1) (t - t_h + c)^(-p)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LegacyEtasParams {
    pub mu: f64,
    pub k: f64,
    pub alpha: f64,
    pub c: f64,
    pub p: f64,
}

impl LegacyEtasParams {
    pub fn new(mu: f64, k: f64, alpha: f64, c: f64, p: f64) -> Result<Self> {
        let ok = [mu, k, alpha, c, p].iter().all(|v| v.is_finite())
            && mu >= 0.0
            && k >= 0.0
            && alpha >= 0.0
            && c >= 0.0
            && p >= 1.0;
        if !ok {
            return Err(Error::InvalidParameter(format!(
                "need mu, K, alpha, c >= 0 and p >= 1; got ({mu}, {k}, {alpha}, {c}, {p})"
            )));
        }
        Ok(Self { mu, k, alpha, c, p })
    }
}

/// Maps normalized-kernel parameters onto the unnormalized ones:
/// `K_b = K / (c (p - 1))`, other parameters unchanged.
pub fn convert_legacy(legacy: &LegacyEtasParams) -> Result<EtasParams> {
    if legacy.p == 1.0 || legacy.c == 0.0 {
        return Err(Error::Conversion);
    }
    EtasParams::new(
        legacy.mu,
        legacy.k / (legacy.c * (legacy.p - 1.0)),
        legacy.alpha,
        legacy.c,
        legacy.p,
    )
}

/// Omori decay factor `(dt/c + 1)^(-p)`.
pub fn omori_kernel(dt: f64, c: f64, p: f64) -> Result<f64> {
    if dt < 0.0 || dt.is_nan() {
        return Err(Error::Domain(format!("kernel lag must be >= 0, got {dt}")));
    }
    if c <= 0.0 || c.is_nan() {
        return Err(Error::Domain(format!("c must be > 0, got {c}")));
    }
    Ok((-p * (dt / c).ln_1p()).exp())
}

/// Exponential kernel `beta * exp(-alpha dt)`.
pub fn exp_kernel(dt: f64, alpha: f64, beta: f64) -> Result<f64> {
    if dt < 0.0 || dt.is_nan() {
        return Err(Error::Domain(format!("kernel lag must be >= 0, got {dt}")));
    }
    if alpha < 0.0 || beta < 0.0 || alpha.is_nan() || beta.is_nan() {
        return Err(Error::Domain(format!(
            "exponential kernel needs alpha, beta >= 0, got ({alpha}, {beta})"
        )));
    }
    Ok(beta * (-alpha * dt).exp())
}

/// Productivity of an event of magnitude `m`: `K exp(alpha (m - M0))`.
pub fn magnitude_factor(m: f64, k: f64, alpha: f64, m0: f64) -> Result<f64> {
    if m < m0 || m.is_nan() {
        return Err(Error::Domain(format!("magnitude {m} is below the cutoff {m0}")));
    }
    Ok(k * (alpha * (m - m0)).exp())
}

/// `ln I_t` for the Omori kernel integrated over lags `[x_lo, x_hi]`, with
/// its partial derivatives in `c` and `p`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct OmoriLogIntegral {
    pub value: f64,
    pub d_c: f64,
    pub d_p: f64,
}

/// Below this `|p - 1|` the logarithmic antiderivative is used.
const LOG_BRANCH: f64 = 1e-8;

/// `1/expm1(y) - 1/y`, smooth through `y = 0`.
fn inv_expm1_minus_inv(y: f64) -> f64 {
    if y.abs() < 1e-3 {
        let y2 = y * y;
        -0.5 + y / 12.0 - y * y2 / 720.0
    } else {
        1.0 / y.exp_m1() - 1.0 / y
    }
}

/// `y / expm1(y)`, equal to 1 at `y = 0`.
fn y_over_expm1(y: f64) -> f64 {
    if y.abs() < 1e-5 {
        1.0 - 0.5 * y + y * y / 12.0
    } else {
        y / y.exp_m1()
    }
}

/// Closed-form log integral. Callers guarantee `0 <= x_lo <= x_hi`, `c > 0`,
/// and `p > 1` when `x_hi` is infinite. A zero-width interval gives `-inf`.
///
/// Writing `u = x/c + 1`, `q = p - 1`, `L = ln u(x_lo)` and
/// `D = ln(u(x_hi)/u(x_lo))`, the integral is `c e^(-qL) (1 - e^(-qD)) / q`.
pub(crate) fn omori_log_integral(x_lo: f64, x_hi: f64, c: f64, p: f64) -> OmoriLogIntegral {
    let q = p - 1.0;
    let a = c + x_lo;
    let l_lo = (x_lo / c).ln_1p();
    let dl_lo_dc = -x_lo / (c * a);
    if x_hi.is_infinite() {
        return OmoriLogIntegral {
            value: c.ln() - q * l_lo - q.ln(),
            d_c: 1.0 / c - q * dl_lo_dc,
            d_p: -l_lo - 1.0 / q,
        };
    }
    let width = x_hi - x_lo;
    if width <= 0.0 {
        return OmoriLogIntegral {
            value: f64::NEG_INFINITY,
            d_c: 0.0,
            d_p: 0.0,
        };
    }
    let d = (width / a).ln_1p();
    let y = q * d;
    let ln_e = if q.abs() < LOG_BRANCH {
        d.ln() - 0.5 * y + y * y / 24.0
    } else {
        (-(-y).exp_m1() / q).ln()
    };
    let dd_dc = -width / ((c + x_hi) * a);
    let dln_e_dd = y_over_expm1(y) / d;
    OmoriLogIntegral {
        value: c.ln() - q * l_lo + ln_e,
        d_c: 1.0 / c - q * dl_lo_dc + dln_e_dd * dd_dc,
        d_p: -l_lo + d * inv_expm1_minus_inv(y),
    }
}

/// Integral of the Omori kernel of an event at `t_h` over `[t_lo, t_hi]`:
/// `c/(p-1) [((t_lo-t_h)/c+1)^(1-p) - ((t_hi-t_h)/c+1)^(1-p)]`.
///
/// `t_hi` may be `+inf` when `p > 1`. Finite intervals accept any `p > 0`,
/// switching to the logarithmic form near `p = 1`.
pub fn omori_integral(t_lo: f64, t_hi: f64, t_h: f64, c: f64, p: f64) -> Result<f64> {
    if !(t_h <= t_lo && t_lo <= t_hi) {
        return Err(Error::Domain(format!(
            "need t_h <= t_lo <= t_hi, got ({t_h}, {t_lo}, {t_hi})"
        )));
    }
    if c <= 0.0 || c.is_nan() {
        return Err(Error::Domain(format!("c must be > 0, got {c}")));
    }
    if t_hi.is_infinite() && !(p > 1.0) {
        return Err(Error::Divergent { p });
    }
    if !(p > 0.0) {
        return Err(Error::Domain(format!("p must be > 0, got {p}")));
    }
    Ok(omori_log_integral(t_lo - t_h, t_hi - t_h, c, p).value.exp())
}

fn ln_productivity(params: &EtasParams, magnitude: f64, m0: f64) -> f64 {
    params.k.ln() + params.alpha * (magnitude - m0)
}

/// `lambda(t | H_t)`; events at exactly `t` are not part of the history.
pub fn conditional_intensity(t: f64, catalog: &EventCatalog, params: &EtasParams) -> f64 {
    let m0 = catalog.window().m_cutoff;
    let mut acc = NeumaierSum::new();
    acc.add(params.mu);
    if params.k > 0.0 {
        for e in catalog.history_before(t) {
            let log_term = ln_productivity(params, e.magnitude, m0)
                - params.p * ((t - e.time) / params.c).ln_1p();
            acc.add(log_term.exp());
        }
    }
    acc.value()
}

/// `ln lambda(t | H_t)` evaluated with a log-sum-exp so that a triggered sum
/// far above `mu` neither overflows nor drowns `mu`.
pub fn log_conditional_intensity(t: f64, catalog: &EventCatalog, params: &EtasParams) -> f64 {
    let m0 = catalog.window().m_cutoff;
    let history = if params.k > 0.0 {
        catalog.history_before(t)
    } else {
        &[]
    };
    let log_terms: Vec<f64> = history
        .iter()
        .map(|e| ln_productivity(params, e.magnitude, m0) - params.p * ((t - e.time) / params.c).ln_1p())
        .collect();
    log_sum_exp(params.mu.ln(), &log_terms)
}

pub(crate) fn log_sum_exp(first: f64, rest: &[f64]) -> f64 {
    let max = rest.iter().copied().fold(first, f64::max);
    if max == f64::NEG_INFINITY {
        return f64::NEG_INFINITY;
    }
    let mut acc = NeumaierSum::new();
    acc.add((first - max).exp());
    for &v in rest {
        acc.add((v - max).exp());
    }
    max + acc.value().ln()
}

/// Expected number of events in `[t_start, t]` given the history.
pub fn compensator(t: f64, catalog: &EventCatalog, params: &EtasParams) -> f64 {
    let window = catalog.window();
    let mut acc = NeumaierSum::new();
    acc.add(params.mu * (t - window.t_start));
    if params.k > 0.0 {
        for e in catalog.history_before(t) {
            let log_int = omori_log_integral(0.0, t - e.time, params.c, params.p).value;
            acc.add((ln_productivity(params, e.magnitude, window.m_cutoff) + log_int).exp());
        }
    }
    acc.value()
}

/// Point-process log-likelihood `-Lambda(T2) + sum_h ln lambda(t_h)`.
///
/// Returns `-inf` (not an error) when some event has zero intensity, e.g.
/// `mu = 0` with a non-empty catalog.
pub fn exact_log_likelihood(catalog: &EventCatalog, params: &EtasParams) -> f64 {
    let mut acc = NeumaierSum::new();
    acc.add(-compensator(catalog.window().t_end, catalog, params));
    for e in catalog.events() {
        let v = log_conditional_intensity(e.time, catalog, params);
        if v == f64::NEG_INFINITY {
            return f64::NEG_INFINITY;
        }
        acc.add(v);
    }
    acc.value()
}

/// Log-likelihood evaluated directly in the normalized-kernel
/// parametrization, without converting parameters.
pub fn legacy_log_likelihood(catalog: &EventCatalog, params: &LegacyEtasParams) -> f64 {
    let window = catalog.window();
    let LegacyEtasParams { mu, k, alpha, c, p } = *params;
    let norm = c.powf(p - 1.0) / (p - 1.0);
    let mut total = NeumaierSum::new();
    total.add(-mu * window.length());
    for (i, e) in catalog.events().iter().enumerate() {
        let productivity = k * (alpha * (e.magnitude - window.m_cutoff)).exp();
        let mass = (c.powf(1.0 - p) - (window.t_end - e.time + c).powf(1.0 - p)) / (p - 1.0);
        total.add(-productivity * norm * mass);

        let mut lambda = NeumaierSum::new();
        lambda.add(mu);
        for prev in &catalog.events()[..i] {
            let prod = k * (alpha * (prev.magnitude - window.m_cutoff)).exp();
            lambda.add(prod * norm * (e.time - prev.time + c).powf(-p));
        }
        total.add(lambda.value().ln());
    }
    total.value()
}

/// Expected number of direct offspring of one event, with magnitudes drawn
/// from a Gutenberg-Richter law of rate `gr_beta`, over an unbounded horizon.
pub fn branching_ratio(params: &EtasParams, gr_beta: f64) -> f64 {
    if params.alpha >= gr_beta {
        return f64::INFINITY;
    }
    let mean_productivity = params.k * gr_beta / (gr_beta - params.alpha);
    mean_productivity * params.c / (params.p - 1.0)
}
