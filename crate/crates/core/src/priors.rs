//! Prior distributions expressed as links from standard-normal internal
//! parameters.
//!
//! Every ETAS parameter is represented internally by `theta ~ N(0, 1)` and
//! mapped to its natural scale with `eta(theta) = F^-1(Phi(theta))`, where
//! `F` is the CDF of the chosen prior. The push-forward of the standard
//! normal is then exactly that prior.

use nalgebra::Vector5;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::EtasParams;
use crate::special::{
    gamma_p, gamma_p_inv, gamma_q_inv, ln_gamma, ln_normal_pdf, normal_cdf, normal_pdf, normal_quantile,
};
use crate::stats::QuantileSummary;

/// Internal (standard-normal scale) parameter vector, ordered
/// `(mu, K, alpha, c, p)`.
pub type InternalTheta = Vector5<f64>;

/// Internal parameters beyond this magnitude are clamped before linking.
pub const THETA_CLAMP: f64 = 8.0;

/// One-dimensional prior distribution.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum PriorSpec {
    Uniform { lower: f64, upper: f64 },
    /// Shape/rate parametrization.
    Gamma { shape: f64, rate: f64 },
    Lognormal { meanlog: f64, sdlog: f64 },
    /// `shift + Gamma(shape, rate)`.
    ShiftedGamma { shape: f64, rate: f64, shift: f64 },
}

impl PriorSpec {
    pub fn uniform(lower: f64, upper: f64) -> Result<Self> {
        let spec = Self::Uniform { lower, upper };
        spec.validate()?;
        Ok(spec)
    }

    pub fn gamma(shape: f64, rate: f64) -> Result<Self> {
        let spec = Self::Gamma { shape, rate };
        spec.validate()?;
        Ok(spec)
    }

    pub fn lognormal(meanlog: f64, sdlog: f64) -> Result<Self> {
        let spec = Self::Lognormal { meanlog, sdlog };
        spec.validate()?;
        Ok(spec)
    }

    pub fn shifted_gamma(shape: f64, rate: f64, shift: f64) -> Result<Self> {
        let spec = Self::ShiftedGamma { shape, rate, shift };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        let ok = match *self {
            Self::Uniform { lower, upper } => lower.is_finite() && upper.is_finite() && upper > lower,
            Self::Gamma { shape, rate } => shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite(),
            Self::Lognormal { meanlog, sdlog } => meanlog.is_finite() && sdlog > 0.0 && sdlog.is_finite(),
            Self::ShiftedGamma { shape, rate, shift } => {
                shape > 0.0 && rate > 0.0 && shape.is_finite() && rate.is_finite() && shift.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!("invalid prior {self:?}")))
        }
    }

    /// Target CDF.
    pub fn cdf(&self, y: f64) -> f64 {
        match *self {
            Self::Uniform { lower, upper } => ((y - lower) / (upper - lower)).clamp(0.0, 1.0),
            Self::Gamma { shape, rate } => gamma_p(shape, rate * y),
            Self::Lognormal { meanlog, sdlog } => {
                if y <= 0.0 {
                    0.0
                } else {
                    normal_cdf((y.ln() - meanlog) / sdlog)
                }
            }
            Self::ShiftedGamma { shape, rate, shift } => gamma_p(shape, rate * (y - shift)),
        }
    }

    /// Target log-density.
    pub fn ln_pdf(&self, y: f64) -> f64 {
        let gamma_ln_pdf = |shape: f64, rate: f64, x: f64| {
            if x <= 0.0 {
                f64::NEG_INFINITY
            } else {
                shape * rate.ln() + (shape - 1.0) * x.ln() - rate * x - ln_gamma(shape)
            }
        };
        match *self {
            Self::Uniform { lower, upper } => {
                if y >= lower && y <= upper {
                    -(upper - lower).ln()
                } else {
                    f64::NEG_INFINITY
                }
            }
            Self::Gamma { shape, rate } => gamma_ln_pdf(shape, rate, y),
            Self::Lognormal { meanlog, sdlog } => {
                if y <= 0.0 {
                    f64::NEG_INFINITY
                } else {
                    ln_normal_pdf((y.ln() - meanlog) / sdlog) - sdlog.ln() - y.ln()
                }
            }
            Self::ShiftedGamma { shape, rate, shift } => gamma_ln_pdf(shape, rate, y - shift),
        }
    }

    /// Lower-tail quantile function.
    pub fn quantile(&self, prob: f64) -> f64 {
        match *self {
            Self::Uniform { lower, upper } => lower + (upper - lower) * prob,
            Self::Gamma { shape, rate } => gamma_p_inv(shape, prob) / rate,
            Self::Lognormal { meanlog, sdlog } => (meanlog + sdlog * normal_quantile(prob)).exp(),
            Self::ShiftedGamma { shape, rate, shift } => shift + gamma_p_inv(shape, prob) / rate,
        }
    }

    /// Natural-scale value `F^-1(Phi(theta))`.
    ///
    /// Upper-half arguments go through the upper tail of the target so that
    /// no precision is lost to `1 - Phi(theta)`.
    pub fn link(&self, theta: f64) -> f64 {
        let theta = clamp_theta(theta);
        match *self {
            Self::Uniform { lower, upper } => {
                if theta <= 0.0 {
                    lower + (upper - lower) * normal_cdf(theta)
                } else {
                    upper - (upper - lower) * normal_cdf(-theta)
                }
            }
            Self::Gamma { shape, rate } => gamma_link(shape, theta) / rate,
            Self::Lognormal { meanlog, sdlog } => (meanlog + sdlog * theta).exp(),
            Self::ShiftedGamma { shape, rate, shift } => shift + gamma_link(shape, theta) / rate,
        }
    }

    /// `d link / d theta = phi(theta) / f(link(theta))`.
    pub fn link_jacobian(&self, theta: f64) -> Result<f64> {
        let theta = clamp_theta(theta);
        match *self {
            Self::Uniform { lower, upper } => Ok((upper - lower) * normal_pdf(theta)),
            Self::Lognormal { sdlog, .. } => Ok(sdlog * self.link(theta)),
            Self::Gamma { shape, rate } | Self::ShiftedGamma { shape, rate, .. } => {
                // evaluated on the unit-rate variate so a shift cannot swamp it
                let x = gamma_link(shape, theta);
                if !(x > 0.0 && x.is_finite()) {
                    return Err(Error::ZeroDensity(self.link(theta)));
                }
                let ln_f = (shape - 1.0) * x.ln() - x - ln_gamma(shape);
                Ok((ln_normal_pdf(theta) - ln_f).exp() / rate)
            }
        }
    }

    /// Draw from the prior by pushing a standard normal through the link.
    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let z: f64 = StandardNormal.sample(rng);
        self.link(z)
    }
}

fn clamp_theta(theta: f64) -> f64 {
    if theta.abs() > THETA_CLAMP {
        log::warn!("internal parameter {theta} clamped to +/-{THETA_CLAMP}");
        theta.clamp(-THETA_CLAMP, THETA_CLAMP)
    } else {
        theta
    }
}

fn gamma_link(shape: f64, theta: f64) -> f64 {
    if theta <= 0.0 {
        gamma_p_inv(shape, normal_cdf(theta))
    } else {
        gamma_q_inv(shape, normal_cdf(-theta))
    }
}

/// Lognormal whose 1% and 99% quantiles are `q01` and `q99`.
pub fn match_lognormal_to_quantiles(q01: f64, q99: f64) -> Result<PriorSpec> {
    if !(q01 > 0.0 && q99 > q01 && q99.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "need 0 < q01 < q99, got ({q01}, {q99})"
        )));
    }
    let z = normal_quantile(0.99);
    let (lo, hi) = (q01.ln(), q99.ln());
    PriorSpec::lognormal(0.5 * (lo + hi), (hi - lo) / (2.0 * z))
}

/// Summary statistics in the layout of the prior comparison tables.
pub type PriorSummary = QuantileSummary;

/// Monte Carlo distribution of `K / (c (p - 1))` under `K, c ~ U(0, 10)` and
/// `p ~ U(1, 10)`: the productivity prior implied by uniform priors on the
/// normalized-kernel parameters.
pub fn empirical_kb_prior(n: usize, seed: u64) -> Result<PriorSummary> {
    if n < 10_000 {
        return Err(Error::InvalidParameter(format!("need at least 1e4 draws, got {n}")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let unit = Uniform::new(0.0, 10.0).expect("valid range");
    let p_dist = Uniform::new(1.0, 10.0).expect("valid range");
    let draws: Vec<f64> = (0..n)
        .map(|_| {
            let k = unit.sample(&mut rng);
            let c = unit.sample(&mut rng);
            let p = p_dist.sample(&mut rng);
            k / (c * (p - 1.0))
        })
        .collect();
    Ok(QuantileSummary::from_samples(draws))
}

/// Monte Carlo summary of a prior, drawn through its link.
pub fn prior_summary(spec: &PriorSpec, n: usize, seed: u64) -> Result<PriorSummary> {
    if n < 10_000 {
        return Err(Error::InvalidParameter(format!("need at least 1e4 draws, got {n}")));
    }
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let draws: Vec<f64> = (0..n).map(|_| spec.sample(&mut rng)).collect();
    Ok(QuantileSummary::from_samples(draws))
}

/// Priors for the five ETAS parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EtasPriors {
    pub mu: PriorSpec,
    pub k: PriorSpec,
    pub alpha: PriorSpec,
    pub c: PriorSpec,
    pub p: PriorSpec,
}

impl EtasPriors {
    /// Uniform-style priors of the normalized-kernel MCMC reference, with a
    /// lognormal on the productivity matched to their implied extremes.
    pub fn replicate() -> Self {
        Self {
            mu: PriorSpec::Gamma { shape: 0.1, rate: 0.1 },
            k: PriorSpec::Lognormal { meanlog: -1.0, sdlog: 2.03 },
            alpha: PriorSpec::Uniform { lower: 0.0, upper: 10.0 },
            c: PriorSpec::Uniform { lower: 0.0, upper: 10.0 },
            p: PriorSpec::Uniform { lower: 1.0, upper: 10.0 },
        }
    }

    /// Gamma priors scaled to each parameter.
    pub fn gamma() -> Self {
        Self {
            mu: PriorSpec::Gamma { shape: 0.1, rate: 1.0 },
            k: PriorSpec::Gamma { shape: 1.0, rate: 0.5 },
            alpha: PriorSpec::Gamma { shape: 1.0, rate: 0.5 },
            c: PriorSpec::Gamma { shape: 0.1, rate: 1.0 },
            p: PriorSpec::ShiftedGamma { shape: 0.1, rate: 0.5, shift: 1.0 },
        }
    }

    /// Gamma family with the same prior means as [`EtasPriors::gamma`] and a
    /// variance that shrinks as `scale` grows:
    /// `mu, c ~ Gamma(s, 10 s)`, `K, alpha ~ Gamma(2 s, s)`,
    /// `p - 1 ~ Gamma(s, 5 s)`.
    pub fn gamma_scaled(scale: f64) -> Result<Self> {
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::InvalidParameter(format!("gamma scale must be > 0, got {scale}")));
        }
        Ok(Self {
            mu: PriorSpec::gamma(scale, 10.0 * scale)?,
            k: PriorSpec::gamma(2.0 * scale, scale)?,
            alpha: PriorSpec::gamma(2.0 * scale, scale)?,
            c: PriorSpec::gamma(scale, 10.0 * scale)?,
            p: PriorSpec::shifted_gamma(scale, 5.0 * scale, 1.0)?,
        })
    }

    pub fn as_array(&self) -> [PriorSpec; 5] {
        [self.mu, self.k, self.alpha, self.c, self.p]
    }

    pub fn validate(&self) -> Result<()> {
        self.as_array().iter().try_for_each(PriorSpec::validate)
    }

    /// Natural-scale parameters for an internal vector.
    pub fn to_natural(&self, theta: &InternalTheta) -> EtasParams {
        let specs = self.as_array();
        EtasParams::from_array(std::array::from_fn(|j| specs[j].link(theta[j])))
    }

    /// Per-coordinate link derivatives.
    pub fn jacobians(&self, theta: &InternalTheta) -> Result<[f64; 5]> {
        let specs = self.as_array();
        let mut out = [0.0; 5];
        for j in 0..5 {
            out[j] = specs[j].link_jacobian(theta[j])?;
        }
        Ok(out)
    }
}
