//! Outer iteration of the linearized-likelihood fit.
//!
//! Each outer step linearizes the log-likelihood around the current point,
//! finds the mode of the resulting log-concave posterior by Newton's method,
//! and moves towards it by a backtracking line search on the exact
//! log-posterior. Iteration stops once every coordinate moves by less than a
//! fraction of its current posterior standard deviation.

use log::warn;
use nalgebra::{Matrix5, Vector5};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::catalog::EventCatalog;
use crate::error::{Error, Result};
use crate::linearization::{build_surrogate, BinningConfig, Linearization, SurrogateDataset};
use crate::model::{exact_log_likelihood, EtasParams};
use crate::priors::{EtasPriors, InternalTheta};
use crate::stats::QuantileSummary;

const NEWTON_MAX_ITER: usize = 200;
const NEWTON_GRAD_TOL: f64 = 1e-8;
const NEWTON_MAX_HALVINGS: usize = 60;
/// Smallest line-search step, `2^-10`.
pub const MIN_STEP: f64 = 1.0 / 1024.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitConfig {
    pub priors: EtasPriors,
    pub binning: BinningConfig,
    /// Starting linearization point; the prior medians when zero.
    pub theta0: [f64; 5],
    pub max_outer: usize,
    pub convergence_frac: f64,
}

impl FitConfig {
    pub fn new(priors: EtasPriors) -> Self {
        Self {
            priors,
            binning: BinningConfig::default(),
            theta0: [0.0; 5],
            max_outer: 100,
            convergence_frac: 0.01,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.priors.validate()?;
        self.binning.validate()?;
        if self.max_outer < 1 {
            return Err(Error::InvalidParameter("max_outer must be at least 1".into()));
        }
        if !(self.convergence_frac > 0.0) {
            return Err(Error::InvalidParameter("convergence_frac must be positive".into()));
        }
        if self.theta0.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter("theta0 must be finite".into()));
        }
        Ok(())
    }
}

/// Multivariate normal approximation in internal coordinates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GaussianApprox {
    pub mean: InternalTheta,
    pub covariance: Matrix5<f64>,
    factor: Matrix5<f64>,
}

impl GaussianApprox {
    /// Accepts positive semi-definite covariances, so a zero covariance gives
    /// a point mass.
    pub fn new(mean: InternalTheta, covariance: Matrix5<f64>) -> Result<Self> {
        let scale = covariance.amax().max(f64::MIN_POSITIVE);
        if (covariance - covariance.transpose()).amax() > 1e-12 * scale {
            return Err(Error::Degenerate("covariance is not symmetric".into()));
        }
        let covariance = (covariance + covariance.transpose()) * 0.5;
        let factor = semidefinite_cholesky(&covariance)
            .ok_or_else(|| Error::Degenerate("covariance is not positive semi-definite".into()))?;
        Ok(Self {
            mean,
            covariance,
            factor,
        })
    }

    pub fn sd(&self) -> Vector5<f64> {
        Vector5::from_fn(|j, _| self.covariance[(j, j)].sqrt())
    }

    /// Lower-triangular factor `L` with `L L^T = covariance`.
    pub fn factor(&self) -> &Matrix5<f64> {
        &self.factor
    }

    pub fn sample<R: rand::Rng + ?Sized>(&self, rng: &mut R) -> InternalTheta {
        let z = Vector5::from_fn(|_, _| StandardNormal.sample(rng));
        self.mean + self.factor * z
    }
}

fn semidefinite_cholesky(a: &Matrix5<f64>) -> Option<Matrix5<f64>> {
    let tol = 1e-14 * a.diagonal().amax();
    let mut l = Matrix5::zeros();
    for j in 0..5 {
        let d = a[(j, j)] - (0..j).map(|k| l[(j, k)] * l[(j, k)]).sum::<f64>();
        if d < -tol.max(1e-300) {
            return None;
        }
        if d <= tol {
            continue;
        }
        let ljj = d.sqrt();
        l[(j, j)] = ljj;
        for i in j + 1..5 {
            let s = a[(i, j)] - (0..j).map(|k| l[(i, k)] * l[(j, k)]).sum::<f64>();
            l[(i, j)] = s / ljj;
        }
    }
    Some(l)
}

/// Unnormalized exact log-posterior in internal coordinates.
pub fn exact_log_posterior(theta: &InternalTheta, catalog: &EventCatalog, priors: &EtasPriors) -> f64 {
    let params = priors.to_natural(theta);
    exact_log_likelihood(catalog, &params) - 0.5 * theta.norm_squared()
}

/// Linearized log-posterior at `theta` for the expansion around `theta_star`.
pub fn linearized_log_posterior(
    theta: &InternalTheta,
    theta_star: &InternalTheta,
    surrogate: &SurrogateDataset<'_>,
    priors: &EtasPriors,
) -> Result<f64> {
    Ok(surrogate.linearize(theta_star, priors)?.log_posterior(theta))
}

/// Mode and inverse negative Hessian of the linearized posterior.
pub fn inner_mode(theta_star: &InternalTheta, surrogate: &SurrogateDataset<'_>, priors: &EtasPriors) -> Result<GaussianApprox> {
    mode_of(&surrogate.linearize(theta_star, priors)?)
}

/// Newton's method with step halving on an already assembled linearization.
pub fn mode_of(lin: &Linearization) -> Result<GaussianApprox> {
    let mut x = *lin.theta_star();
    let mut d = lin.derivatives(&x);
    let non_finite = |x: &InternalTheta, it: usize| Error::NonFiniteStep {
        iterate: std::array::from_fn(|j| x[j]),
        iterations: it,
    };
    if !d.value.is_finite() {
        // the expansion point itself may overflow an exposure term; fall back
        // to the prior mode, where the objective is always finite
        x = InternalTheta::zeros();
        d = lin.derivatives(&x);
    }
    for it in 0..NEWTON_MAX_ITER {
        if !d.value.is_finite() || d.gradient.iter().any(|g| !g.is_finite()) {
            return Err(non_finite(&x, it));
        }
        if d.gradient.norm() < NEWTON_GRAD_TOL {
            break;
        }
        let neg_h = -d.hessian;
        let step = match neg_h.cholesky() {
            Some(ch) => ch.solve(&d.gradient),
            None => return Err(non_finite(&x, it)),
        };
        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..NEWTON_MAX_HALVINGS {
            let cand = x + step * t;
            let dc = lin.derivatives(&cand);
            // near the mode the value stops resolving progress; the gradient still does
            let tie = dc.value >= d.value - 8.0 * f64::EPSILON * d.value.abs()
                && dc.gradient.norm() < d.gradient.norm();
            if dc.value.is_finite() && (dc.value >= d.value || tie) {
                accepted = Some((cand, dc));
                break;
            }
            t *= 0.5;
        }
        match accepted {
            Some((cand, dc)) => {
                let moved = (cand - x).amax();
                x = cand;
                d = dc;
                if moved <= 4.0 * f64::EPSILON * (1.0 + x.amax()) {
                    // no representable progress left
                    break;
                }
            }
            None => break,
        }
    }
    if !d.value.is_finite() {
        return Err(non_finite(&x, NEWTON_MAX_ITER));
    }
    let neg_h = -d.hessian;
    let inv = neg_h
        .cholesky()
        .ok_or_else(|| non_finite(&x, NEWTON_MAX_ITER))?
        .inverse();
    GaussianApprox::new(x, (inv + inv.transpose()) * 0.5)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LineSearchOutcome {
    pub alpha: f64,
    pub theta_new: InternalTheta,
    /// Objective value at `theta_new`.
    pub value: f64,
    /// Set when no step improved on `theta_old` and the smallest step was
    /// taken anyway.
    pub hit_floor: bool,
}

/// Backtracking over `alpha = 1, 1/2, ..., 2^-10` along
/// `theta_old + alpha (theta_hat - theta_old)`, accepting the first step that
/// does not decrease `objective`.
pub fn line_search<F: Fn(&InternalTheta) -> f64>(
    theta_old: &InternalTheta,
    theta_hat: &InternalTheta,
    objective: F,
) -> Result<LineSearchOutcome> {
    let f_old = objective(theta_old);
    let dir = theta_hat - theta_old;
    let mut alpha = 1.0;
    let mut floor = None;
    while alpha >= MIN_STEP {
        let cand = theta_old + dir * alpha;
        let v = objective(&cand);
        if !v.is_nan() && v > f64::NEG_INFINITY && (v >= f_old || f_old.is_nan()) {
            return Ok(LineSearchOutcome {
                alpha,
                theta_new: cand,
                value: v,
                hit_floor: false,
            });
        }
        if alpha == MIN_STEP && v > f64::NEG_INFINITY && !v.is_nan() {
            floor = Some((cand, v));
        }
        alpha *= 0.5;
    }
    match floor {
        Some((theta_new, value)) => {
            warn!("line search found no improving step; taking alpha = 2^-10");
            Ok(LineSearchOutcome {
                alpha: MIN_STEP,
                theta_new,
                value,
                hit_floor: true,
            })
        }
        None => Err(Error::StepFailure),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub iteration: usize,
    pub theta_star: [f64; 5],
    /// Line-search step; zero for the starting point.
    pub alpha: f64,
    pub log_posterior: f64,
    pub hit_floor: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosteriorResult {
    pub theta_star: InternalTheta,
    pub gaussian: GaussianApprox,
    pub priors: EtasPriors,
    pub trace: Vec<TraceEntry>,
    pub converged: bool,
    pub iterations: usize,
    /// Why the fit stopped early, when it did.
    pub diagnostic: Option<String>,
    /// Part-II rows dropped at the final linearization.
    pub inert_rows: usize,
}

impl PosteriorResult {
    pub fn posterior_mean_natural(&self) -> EtasParams {
        self.priors.to_natural(&self.gaussian.mean)
    }
}

/// Runs the outer iteration until the linearization point settles.
///
/// Failures on the first iteration are returned as errors. Later failures
/// end the fit with `converged = false` and a diagnostic.
pub fn fit(catalog: &EventCatalog, config: &FitConfig) -> Result<PosteriorResult> {
    config.validate()?;
    let surrogate = build_surrogate(catalog, &config.binning)?;
    let priors = &config.priors;
    let objective = |t: &InternalTheta| exact_log_posterior(t, catalog, priors);

    let mut theta = InternalTheta::from(config.theta0);
    let mut trace = vec![TraceEntry {
        iteration: 0,
        theta_star: config.theta0,
        alpha: 0.0,
        log_posterior: objective(&theta),
        hit_floor: false,
    }];
    let mut gaussian: Option<GaussianApprox> = None;
    let mut inert_rows = 0;
    let mut converged = false;
    let mut diagnostic = None;

    for k in 1..=config.max_outer {
        let step = (|| -> Result<(GaussianApprox, LineSearchOutcome, usize)> {
            let lin = surrogate.linearize(&theta, priors)?;
            let g = mode_of(&lin)?;
            let ls = if g.mean == theta {
                LineSearchOutcome {
                    alpha: 1.0,
                    theta_new: theta,
                    value: objective(&theta),
                    hit_floor: false,
                }
            } else {
                line_search(&theta, &g.mean, objective)?
            };
            Ok((g, ls, lin.inert_rows()))
        })();
        let (g, ls, inert) = match step {
            Ok(v) => v,
            Err(e) if k == 1 => return Err(e),
            Err(e) => {
                diagnostic = Some(format!("iteration {k}: {e}"));
                break;
            }
        };
        let sd = g.sd();
        let small = (0..5).all(|j| (ls.theta_new[j] - theta[j]).abs() < config.convergence_frac * sd[j]);
        theta = ls.theta_new;
        inert_rows = inert;
        trace.push(TraceEntry {
            iteration: k,
            theta_star: std::array::from_fn(|j| theta[j]),
            alpha: ls.alpha,
            log_posterior: ls.value,
            hit_floor: ls.hit_floor,
        });
        gaussian = Some(g);
        if small {
            converged = true;
            break;
        }
    }
    if !converged && diagnostic.is_none() {
        diagnostic = Some(format!("no convergence within {} iterations", config.max_outer));
    }

    // Gaussian at the final linearization point.
    match surrogate
        .linearize(&theta, priors)
        .and_then(|lin| Ok((mode_of(&lin)?, lin.inert_rows())))
    {
        Ok((g, inert)) => {
            gaussian = Some(g);
            inert_rows = inert;
        }
        Err(e) => {
            if diagnostic.is_none() {
                diagnostic = Some(format!("final linearization failed: {e}"));
            }
            converged = false;
        }
    }
    let gaussian = gaussian.ok_or(Error::StepFailure)?;
    Ok(PosteriorResult {
        theta_star: theta,
        gaussian,
        priors: *priors,
        iterations: trace.len() - 1,
        trace,
        converged,
        diagnostic,
        inert_rows,
    })
}

/// Natural-scale draws from the Gaussian approximation pushed through the
/// links. Refuses a non-converged result unless `force` is set.
pub fn sample_posterior(result: &PosteriorResult, n: usize, seed: u64, force: bool) -> Result<Vec<EtasParams>> {
    Ok(sample_internal(result, n, seed, force)?
        .iter()
        .map(|t| result.priors.to_natural(t))
        .collect())
}

/// Internal-scale draws from the Gaussian approximation.
pub fn sample_internal(result: &PosteriorResult, n: usize, seed: u64, force: bool) -> Result<Vec<InternalTheta>> {
    if !result.converged && !force {
        return Err(Error::NotConverged);
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok((0..n).map(|_| result.gaussian.sample(&mut rng)).collect())
}

/// Per-parameter natural-scale summaries of `n` posterior draws, in the
/// order `mu, K, alpha, c, p`.
pub fn posterior_summary(result: &PosteriorResult, n: usize, seed: u64, force: bool) -> Result<[QuantileSummary; 5]> {
    let draws = sample_posterior(result, n, seed, force)?;
    Ok(std::array::from_fn(|j| {
        QuantileSummary::from_samples(draws.iter().map(|d| d.as_array()[j]).collect())
    }))
}
