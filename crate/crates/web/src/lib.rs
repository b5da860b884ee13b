//! Browser demo over `etas-core`. Each operation takes a JSON request and
//! returns a JSON response; the `api` functions do the work and the
//! `#[wasm_bindgen]` wrappers only convert errors.

use wasm_bindgen::prelude::*;

pub mod api {
    use etas_core::diagnostics::residual_test;
    use etas_core::model::{branching_ratio, compensator, conditional_intensity};
    use etas_core::{
        fit, simulate, BinningConfig, EtasParams, EtasPriors, Event, FitConfig, ObservationWindow, PriorSpec,
        SimConfig,
    };
    use serde::{Deserialize, Serialize};

    /// Largest catalog the page will simulate; keeps the tab responsive.
    pub const MAX_EVENTS: usize = 5000;

    fn default_cutoff() -> f64 {
        3.0
    }

    fn default_beta() -> f64 {
        std::f64::consts::LN_10
    }

    fn default_points() -> usize {
        400
    }

    #[derive(Debug, Deserialize)]
    pub struct Scenario {
        pub params: EtasParams,
        pub t_end: f64,
        #[serde(default = "default_cutoff")]
        pub m_cutoff: f64,
        #[serde(default = "default_beta")]
        pub gr_beta: f64,
        #[serde(default)]
        pub seed: u64,
    }

    impl Scenario {
        fn catalog(&self) -> Result<etas_core::EventCatalog, String> {
            let window = ObservationWindow::new(0.0, self.t_end, self.m_cutoff).map_err(|e| e.to_string())?;
            let mut cfg = SimConfig::new(self.params, window, self.gr_beta, self.seed);
            cfg.max_events = MAX_EVENTS;
            simulate(&cfg).map_err(|e| e.to_string())
        }
    }

    #[derive(Debug, Deserialize)]
    pub struct CurveRequest {
        #[serde(flatten)]
        pub scenario: Scenario,
        #[serde(default = "default_points")]
        pub points: usize,
    }

    #[derive(Debug, Serialize)]
    pub struct CurveResponse {
        pub events: Vec<Event>,
        pub branching_ratio: f64,
        pub t: Vec<f64>,
        pub intensity: Vec<f64>,
        pub compensator: Vec<f64>,
    }

    /// Simulates a catalog and tabulates its intensity and compensator on a
    /// grid that also brackets every event, so the jumps show.
    pub fn intensity_curves(request: &str) -> Result<String, String> {
        let req: CurveRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
        let cat = req.scenario.catalog()?;
        let params = &req.scenario.params;
        let t_end = req.scenario.t_end;
        let n = req.points.clamp(2, 20_000);
        let mut t: Vec<f64> = (0..n).map(|i| t_end * i as f64 / (n - 1) as f64).collect();
        for time in cat.times() {
            t.push(time);
            t.push((time + 1e-6 * t_end).min(t_end));
        }
        t.sort_by(f64::total_cmp);
        t.dedup();
        let resp = CurveResponse {
            branching_ratio: branching_ratio(params, req.scenario.gr_beta),
            intensity: t.iter().map(|&x| conditional_intensity(x, &cat, params)).collect(),
            compensator: t.iter().map(|&x| compensator(x, &cat, params)).collect(),
            events: cat.events().to_vec(),
            t,
        };
        serde_json::to_string(&resp).map_err(|e| e.to_string())
    }

    #[derive(Debug, Deserialize)]
    #[serde(rename_all = "kebab-case")]
    pub enum Preset {
        Gamma,
        Replicate,
    }

    #[derive(Debug, Deserialize)]
    pub struct FitRequest {
        #[serde(flatten)]
        pub scenario: Scenario,
        pub preset: Preset,
        #[serde(default)]
        pub binning: Option<BinningConfig>,
    }

    #[derive(Debug, Serialize)]
    pub struct Marginal {
        pub name: &'static str,
        pub truth: f64,
        pub q025: f64,
        pub median: f64,
        pub q975: f64,
    }

    #[derive(Debug, Serialize)]
    pub struct FitResponse {
        pub n_events: usize,
        pub converged: bool,
        pub iterations: usize,
        pub diagnostic: Option<String>,
        /// Exact log-posterior at each linearization point.
        pub trace: Vec<f64>,
        pub marginals: Vec<Marginal>,
        /// Residual test p-value at the posterior median.
        pub residual_p_value: Option<f64>,
    }

    /// Simulates a catalog, fits it and reports central 95% intervals next
    /// to the true values.
    pub fn simulate_and_fit(request: &str) -> Result<String, String> {
        let req: FitRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
        let cat = req.scenario.catalog()?;
        let priors = match req.preset {
            Preset::Gamma => EtasPriors::gamma(),
            Preset::Replicate => EtasPriors::replicate(),
        };
        let mut config = FitConfig::new(priors);
        if let Some(b) = req.binning {
            config.binning = b;
        }
        let r = fit(&cat, &config).map_err(|e| e.to_string())?;
        let sd = r.gaussian.sd();
        let truth = req.scenario.params.as_array();
        // marginal quantiles map through the monotone links exactly
        let marginals = ["mu", "K", "alpha", "c", "p"]
            .iter()
            .zip(priors.as_array())
            .enumerate()
            .map(|(j, (name, spec))| Marginal {
                name,
                truth: truth[j],
                q025: spec.link(r.gaussian.mean[j] - 1.959964 * sd[j]),
                median: spec.link(r.gaussian.mean[j]),
                q975: spec.link(r.gaussian.mean[j] + 1.959964 * sd[j]),
            })
            .collect();
        let resp = FitResponse {
            n_events: cat.len(),
            converged: r.converged,
            iterations: r.iterations,
            diagnostic: r.diagnostic.clone(),
            trace: r.trace.iter().map(|e| e.log_posterior).collect(),
            marginals,
            residual_p_value: residual_test(&cat, &r.posterior_mean_natural()).ok().map(|t| t.p_value),
        };
        serde_json::to_string(&resp).map_err(|e| e.to_string())
    }

    #[derive(Debug, Deserialize)]
    pub struct LinkRequest {
        pub prior: PriorSpec,
        #[serde(default = "default_points")]
        pub points: usize,
    }

    #[derive(Debug, Serialize)]
    pub struct LinkResponse {
        pub theta: Vec<f64>,
        pub value: Vec<f64>,
        pub log_jacobian: Vec<f64>,
        /// Prior quantiles at 1, 25, 50, 75 and 99%.
        pub quantiles: [f64; 5],
    }

    /// The link from a standard normal internal value to the prior's scale
    /// over `[-4, 4]`.
    pub fn prior_link(request: &str) -> Result<String, String> {
        let req: LinkRequest = serde_json::from_str(request).map_err(|e| e.to_string())?;
        req.prior.validate().map_err(|e| e.to_string())?;
        let n = req.points.clamp(2, 20_000);
        let theta: Vec<f64> = (0..n).map(|i| -4.0 + 8.0 * i as f64 / (n - 1) as f64).collect();
        let resp = LinkResponse {
            value: theta.iter().map(|&x| req.prior.link(x)).collect(),
            log_jacobian: theta
                .iter()
                .map(|&x| req.prior.link_jacobian(x).map_or(f64::NAN, f64::ln))
                .collect(),
            quantiles: [0.01, 0.25, 0.5, 0.75, 0.99].map(|p| req.prior.quantile(p)),
            theta,
        };
        serde_json::to_string(&resp).map_err(|e| e.to_string())
    }

    /// Prior sets behind the fit presets.
    pub fn presets() -> String {
        serde_json::json!({
            "gamma": EtasPriors::gamma(),
            "replicate": EtasPriors::replicate(),
        })
        .to_string()
    }
}

fn js(r: Result<String, String>) -> Result<String, JsError> {
    r.map_err(|e| JsError::new(&e))
}

#[wasm_bindgen]
pub fn intensity_curves(request: &str) -> Result<String, JsError> {
    js(api::intensity_curves(request))
}

#[wasm_bindgen]
pub fn simulate_and_fit(request: &str) -> Result<String, JsError> {
    js(api::simulate_and_fit(request))
}

#[wasm_bindgen]
pub fn prior_link(request: &str) -> Result<String, JsError> {
    js(api::prior_link(request))
}

#[wasm_bindgen]
pub fn presets() -> String {
    api::presets()
}
