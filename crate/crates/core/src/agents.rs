//! The bank of agent DLMs and their one-step-ahead forecast densities.
//!
//! Each agent is a discount DLM regressing `y_t` on an intercept and lagged
//! values of `y`, `u` and `r`. The forecast for time `t` only reads data at
//! times `< t`; the agent is updated with `y_t` afterwards.

use nalgebra::DVector;

use crate::data::MacroSeries;
use crate::density::{Density, StudentT};
use crate::dlm::{DiscountConfig, DlmMoments};
use crate::error::{invalid, Error, Result};
use crate::rng::Rng;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Variable {
    /// Inflation, the forecast target.
    Y,
    /// Unemployment.
    U,
    /// Short-term interest rate.
    R,
}

impl Variable {
    fn column<'a>(&self, data: &'a MacroSeries) -> &'a [f64] {
        match self {
            Variable::Y => &data.y,
            Variable::U => &data.u,
            Variable::R => &data.r,
        }
    }
}

/// A lagged predictor, e.g. `u` at lag 2.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Predictor {
    pub variable: Variable,
    pub lag: usize,
}

impl std::str::FromStr for Predictor {
    type Err = Error;

    /// Parses `y1`, `u3`, `r2`, ...
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        let mut chars = s.chars();
        let variable = match chars.next() {
            Some('y') => Variable::Y,
            Some('u') => Variable::U,
            Some('r') => Variable::R,
            _ => return Err(invalid("predictor", format!("unknown variable in `{s}`"))),
        };
        let lag: usize = chars
            .as_str()
            .parse()
            .map_err(|_| invalid("predictor", format!("bad lag in `{s}`")))?;
        if lag == 0 {
            return Err(invalid("predictor", format!("lag must be >= 1 in `{s}`")));
        }
        Ok(Predictor { variable, lag })
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AgentSpec {
    pub name: String,
    pub predictors: Vec<Predictor>,
    pub init: DlmMoments,
    pub discount: DiscountConfig,
}

impl AgentSpec {
    pub fn new(
        name: impl Into<String>,
        predictors: Vec<Predictor>,
        init: DlmMoments,
        discount: DiscountConfig,
    ) -> Result<Self> {
        if predictors.iter().any(|p| p.lag == 0) {
            return Err(invalid("predictors", "lags must be >= 1"));
        }
        if init.dim() != predictors.len() + 1 {
            return Err(Error::DimensionMismatch {
                expected: predictors.len() + 1,
                got: init.dim(),
            });
        }
        Ok(AgentSpec {
            name: name.into(),
            predictors,
            init,
            discount,
        })
    }

    /// Agent with the common hyperparameters `(m0, C0, n0, s0) = (0, I, 2, 0.01)`
    /// and `(beta, delta) = (0.99, 0.95)`.
    pub fn with_default_prior(name: &str, predictors: Vec<Predictor>) -> Self {
        let p = predictors.len() + 1;
        let init = DlmMoments::isotropic(DVector::zeros(p), 1.0, 2.0, 0.01).expect("valid constants");
        let discount = DiscountConfig::new(0.99, 0.95).expect("valid constants");
        AgentSpec::new(name, predictors, init, discount).expect("consistent dimensions")
    }

    pub fn max_lag(&self) -> usize {
        self.predictors.iter().map(|p| p.lag).max().unwrap_or(0)
    }

    /// Regressor vector for forecasting time `t` (0-based): intercept first,
    /// then the predictors in spec order.
    pub fn regressors(&self, data: &MacroSeries, t: usize) -> Result<DVector<f64>> {
        let max_lag = self.max_lag();
        if t < max_lag || t > data.len() {
            return Err(Error::InsufficientHistory { t, max_lag });
        }
        let mut f = DVector::zeros(self.predictors.len() + 1);
        f[0] = 1.0;
        for (i, p) in self.predictors.iter().enumerate() {
            f[i + 1] = p.variable.column(data)[t - p.lag];
        }
        Ok(f)
    }
}

fn lags(variable: Variable, max: usize) -> impl Iterator<Item = Predictor> {
    (1..=max).map(move |lag| Predictor { variable, lag })
}

/// The four agents of the inflation study: `y(t-1)`; three lags of each of
/// `y, u, r`; three lags of `y`; and one lag of each of `y, u, r`.
pub fn default_agents() -> Vec<AgentSpec> {
    vec![
        AgentSpec::with_default_prior("M1", lags(Variable::Y, 1).collect()),
        AgentSpec::with_default_prior(
            "M2",
            lags(Variable::Y, 3)
                .chain(lags(Variable::U, 3))
                .chain(lags(Variable::R, 3))
                .collect(),
        ),
        AgentSpec::with_default_prior("M3", lags(Variable::Y, 3).collect()),
        AgentSpec::with_default_prior(
            "M4",
            lags(Variable::Y, 1)
                .chain(lags(Variable::U, 1))
                .chain(lags(Variable::R, 1))
                .collect(),
        ),
    ]
}

/// Joint agent forecast at one time: independent Student-t densities with
/// dof `e_k`, location `mu_k` and squared scale `H_k`.
#[derive(Clone, Debug, PartialEq)]
pub struct AgentForecast {
    pub densities: Vec<StudentT>,
}

impl AgentForecast {
    pub fn new(densities: Vec<StudentT>) -> Self {
        AgentForecast { densities }
    }

    /// Point-mass forecasts at `mu` (zero scale).
    pub fn point_masses(mu: &[f64]) -> Self {
        AgentForecast {
            densities: mu
                .iter()
                .map(|&m| StudentT {
                    dof: 1.0,
                    loc: m,
                    scale2: 0.0,
                })
                .collect(),
        }
    }

    pub fn k(&self) -> usize {
        self.densities.len()
    }

    pub fn means(&self) -> Vec<f64> {
        self.densities.iter().map(|d| d.loc).collect()
    }

    /// Independent draws `x_k ~ t(e_k, mu_k, H_k)` by the scale-mixture route.
    pub fn sample(&self, rng: &mut Rng) -> Vec<f64> {
        self.densities.iter().map(|d| d.sample(rng)).collect()
    }

    /// Log of the product density at `x`.
    pub fn ln_pdf(&self, x: &[f64]) -> f64 {
        self.densities.iter().zip(x).map(|(d, &v)| d.ln_pdf(v)).sum()
    }
}

/// Live state of the agent bank.
#[derive(Clone, Debug)]
pub struct AgentBank {
    specs: Vec<AgentSpec>,
    states: Vec<DlmMoments>,
}

impl AgentBank {
    pub fn new(specs: Vec<AgentSpec>) -> Result<Self> {
        if specs.is_empty() {
            return Err(Error::Empty("agent bank"));
        }
        let states = specs.iter().map(|s| s.init.clone()).collect();
        Ok(AgentBank { specs, states })
    }

    pub fn specs(&self) -> &[AgentSpec] {
        &self.specs
    }

    pub fn max_lag(&self) -> usize {
        self.specs.iter().map(AgentSpec::max_lag).max().unwrap_or(0)
    }

    /// Forecasts for time `t` from the current states. Reads only data before `t`.
    pub fn forecast(&self, data: &MacroSeries, t: usize) -> Result<AgentForecast> {
        let densities = self
            .specs
            .iter()
            .zip(&self.states)
            .map(|(spec, state)| {
                let f = spec.regressors(data, t)?;
                state.prior(&spec.discount).predictive(&f)
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(AgentForecast { densities })
    }

    /// Assimilates `y_t` into every agent.
    pub fn update(&mut self, data: &MacroSeries, t: usize) -> Result<()> {
        let y = data.y[t];
        for (spec, state) in self.specs.iter().zip(self.states.iter_mut()) {
            let f = spec.regressors(data, t)?;
            *state = state.prior(&spec.discount).update(&f, y)?;
        }
        Ok(())
    }
}

/// Agent forecasts over a whole series.
#[derive(Clone, Debug)]
pub struct AgentRun {
    /// Index of the first forecast time.
    pub start: usize,
    pub forecasts: Vec<AgentForecast>,
    /// `log_scores[i][k]`: log density of agent `k` at the realized `y`.
    pub log_scores: Vec<Vec<f64>>,
    pub names: Vec<String>,
}

impl AgentRun {
    pub fn forecast(&self, t: usize) -> &AgentForecast {
        &self.forecasts[t - self.start]
    }

    pub fn log_scores_at(&self, t: usize) -> &[f64] {
        &self.log_scores[t - self.start]
    }

    pub fn end(&self) -> usize {
        self.start + self.forecasts.len()
    }

    pub fn k(&self) -> usize {
        self.names.len()
    }
}

/// Forecast-then-update over every time from the largest lag to the end.
pub fn run_agents(specs: Vec<AgentSpec>, data: &MacroSeries) -> Result<AgentRun> {
    let mut bank = AgentBank::new(specs)?;
    let start = bank.max_lag();
    let names = bank.specs.iter().map(|s| s.name.clone()).collect();
    let mut forecasts = Vec::new();
    let mut log_scores = Vec::new();
    for t in start..data.len() {
        let fc = bank.forecast(data, t)?;
        log_scores.push(fc.densities.iter().map(|d| d.ln_pdf(data.y[t])).collect());
        forecasts.push(fc);
        bank.update(data, t)?;
    }
    Ok(AgentRun {
        start,
        forecasts,
        log_scores,
        names,
    })
}
