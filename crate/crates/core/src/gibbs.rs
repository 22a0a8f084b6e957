//! Block Gibbs sampler for the synthesis model.
//!
//! One sweep draws, in order,
//!
//! 1. the calibration path `(theta_t, nu_t)` by forward filtering, backward
//!    sampling on the current agent-draw path;
//! 2. every `x_t` from its conditionally normal full conditional;
//! 3. every latent agent scale `sigma2_kt` from its inverse-gamma full
//!    conditional (the Student-t agents written as normal scale mixtures).
//!
//! Steps 2 and 3 are independent across `t` given the calibration path. Each
//! `(sweep, t)` pair owns its own random substream, so the result does not
//! depend on the order in which the `t` are visited or on the thread count.

use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::agents::AgentForecast;
use crate::dlm::{forward_filter, DiscountConfig, FilterStep};
use crate::error::{invalid, Error, Result};
use crate::rng::{Rng, Stream};
use crate::synthesis::{synthesis_regressor, SynthesisConfig};

/// Lower factor `L` with `L L' = cov`.
///
/// Falls back to an eigen-decomposition when Cholesky fails on a
/// semi-definite matrix; negative eigenvalues beyond round-off are an error.
pub fn psd_factor(cov: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    if let Some(ch) = cov.clone().cholesky() {
        return Ok(ch.l());
    }
    let eig = cov.clone().symmetric_eigen();
    let scale = eig.eigenvalues.amax().max(f64::MIN_POSITIVE);
    let min = eig.eigenvalues.min();
    if min < -1e-8 * scale {
        return Err(Error::NotPositiveSemiDefinite(min));
    }
    let sqrt = eig.eigenvalues.map(|v| v.max(0.0).sqrt());
    Ok(&eig.eigenvectors * DMatrix::from_diagonal(&sqrt))
}

fn normal(rng: &mut Rng) -> f64 {
    StandardNormal.sample(rng)
}

fn standard_normals(p: usize, rng: &mut Rng) -> DVector<f64> {
    DVector::from_iterator(p, (0..p).map(|_| normal(rng)))
}

/// `1 / Gamma(shape, rate)`.
fn inverse_gamma(shape: f64, rate: f64, rng: &mut Rng) -> f64 {
    1.0 / Gamma::new(shape, 1.0 / rate)
        .expect("positive shape and rate")
        .sample(rng)
}

/// Calibration path: `theta_t` and `nu_t` for every time.
#[derive(Clone, Debug, PartialEq)]
pub struct PhiPath {
    pub theta: Vec<DVector<f64>>,
    pub nu: Vec<f64>,
}

/// Backward sampling of `(theta_t, nu_t)` given forward-filter output.
pub fn ffbs(steps: &[FilterStep], discount: &DiscountConfig, rng: &mut Rng) -> Result<PhiPath> {
    let last = steps.last().ok_or(Error::Empty("filter output"))?;
    let len = steps.len();
    let beta = discount.beta();
    let delta = discount.delta();
    let mut theta = vec![DVector::zeros(0); len];
    let mut nu = vec![0.0; len];

    let post = &last.posterior;
    nu[len - 1] = inverse_gamma(post.n / 2.0, post.n * post.s / 2.0, rng);
    let l = psd_factor(&post.c)?;
    let z = standard_normals(post.dim(), rng);
    theta[len - 1] = &post.m + (l * z) * (nu[len - 1] / post.s).sqrt();

    for t in (0..len - 1).rev() {
        let post = &steps[t].posterior;
        let shape = (1.0 - beta) * post.n / 2.0;
        let gamma = if shape > 0.0 {
            Gamma::new(shape, 2.0 / (post.n * post.s))
                .expect("positive shape and rate")
                .sample(rng)
        } else {
            0.0
        };
        nu[t] = 1.0 / (beta / nu[t + 1] + gamma);
        let mean = &post.m + (&theta[t + 1] - &post.m) * delta;
        theta[t] = if delta < 1.0 {
            let l = psd_factor(&post.c)?;
            let z = standard_normals(post.dim(), rng);
            mean + (l * z) * ((1.0 - delta) * nu[t] / post.s).sqrt()
        } else {
            mean
        };
    }
    Ok(PhiPath { theta, nu })
}

/// Draws `x_t` from `N(mu + b c, H - b b' g)` where `H = diag(sigma2_k H_k)`,
/// `c = y - theta_0 - mu'theta_{1:K}`, `g = nu + theta'H theta` and
/// `b = H theta / g`.
///
/// The draw uses the exact conditioning identity
/// `x = mu + u + b (c - theta'u - sqrt(nu) eps)` with `u ~ N(0, H)`,
/// which has the required mean and covariance without a matrix factorization.
pub fn sample_x_full_conditional(
    theta: &DVector<f64>,
    nu: f64,
    forecast: &AgentForecast,
    sigma2: &[f64],
    y: f64,
    rng: &mut Rng,
) -> Result<Vec<f64>> {
    let k = forecast.k();
    if theta.len() != k + 1 || sigma2.len() != k {
        return Err(Error::DimensionMismatch {
            expected: k + 1,
            got: theta.len(),
        });
    }
    if !(nu > 0.0) {
        return Err(invalid("nu", format!("must be > 0, got {nu}")));
    }
    let mut c = y - theta[0];
    let mut g = nu;
    let mut h = vec![0.0; k];
    for (i, d) in forecast.densities.iter().enumerate() {
        if !(sigma2[i] > 0.0) {
            return Err(invalid("sigma2", format!("must be > 0, got {}", sigma2[i])));
        }
        h[i] = sigma2[i] * d.scale2;
        c -= d.loc * theta[i + 1];
        g += theta[i + 1] * theta[i + 1] * h[i];
    }
    let mut proj = nu.sqrt() * normal(rng);
    let u: Vec<f64> = h.iter().map(|hi| hi.sqrt() * normal(rng)).collect();
    for i in 0..k {
        proj += theta[i + 1] * u[i];
    }
    let resid = c - proj;
    Ok(forecast
        .densities
        .iter()
        .enumerate()
        .map(|(i, d)| d.loc + u[i] + h[i] * theta[i + 1] / g * resid)
        .collect())
}

/// Draws `sigma2_k ~ IG((e_k + 1)/2, (e_k + d_k)/2)` with
/// `d_k = (x_k - mu_k)^2 / H_k`.
pub fn sample_sigma2(x: &[f64], forecast: &AgentForecast, rng: &mut Rng) -> Vec<f64> {
    forecast
        .densities
        .iter()
        .zip(x)
        .map(|(dist, &xk)| {
            let d = if dist.scale2 > 0.0 {
                (xk - dist.loc).powi(2) / dist.scale2
            } else {
                0.0
            };
            inverse_gamma((dist.dof + 1.0) / 2.0, (dist.dof + d) / 2.0, rng)
        })
        .collect()
}

/// Chain length settings. `retained` draws are kept after `burn_in` sweeps.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ChainConfig {
    pub retained: usize,
    pub burn_in: usize,
}

impl ChainConfig {
    /// `retained` draws with the default burn-in of `retained / 10`.
    pub fn new(retained: usize) -> Self {
        ChainConfig {
            retained,
            burn_in: retained / 10,
        }
    }

    pub fn with_burn_in(retained: usize, burn_in: usize) -> Self {
        ChainConfig { retained, burn_in }
    }

    fn validate(&self) -> Result<()> {
        if self.retained == 0 {
            return Err(invalid("chain", "must retain at least one draw"));
        }
        Ok(())
    }
}

/// One agent-draw path `x_{1:T}` stored row-major (`T x K`).
#[derive(Clone, Debug, PartialEq)]
pub struct XPath {
    k: usize,
    data: Vec<f64>,
}

impl XPath {
    pub fn from_rows(rows: &[Vec<f64>]) -> Self {
        let k = rows.first().map_or(0, Vec::len);
        XPath {
            k,
            data: rows.iter().flatten().copied().collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.data.len().checked_div(self.k).unwrap_or(0)
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn k(&self) -> usize {
        self.k
    }

    pub fn at(&self, t: usize) -> &[f64] {
        &self.data[t * self.k..(t + 1) * self.k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.data.chunks(self.k.max(1))
    }
}

/// Hooks called while a chain runs.
pub trait ChainObserver {
    /// A retained agent-draw path together with the synthesis forward filter
    /// conditional on it.
    fn on_path(&mut self, path: &XPath, filter: &[FilterStep]);
    /// A retained calibration path.
    fn on_phi(&mut self, _phi: &PhiPath) {}
}

struct CollectPaths(Vec<XPath>);

impl ChainObserver for CollectPaths {
    fn on_path(&mut self, path: &XPath, _filter: &[FilterStep]) {
        self.0.push(path.clone());
    }
}

/// Stateful Gibbs sampler over a fixed data window.
pub struct GibbsSampler<'a> {
    ys: &'a [f64],
    forecasts: &'a [AgentForecast],
    synth: &'a SynthesisConfig,
    regressors: Vec<DVector<f64>>,
    x: XPath,
    sigma2: Vec<f64>,
}

impl<'a> GibbsSampler<'a> {
    /// Starts at `x_t = mu_t` and `sigma2 = 1`.
    pub fn new(ys: &'a [f64], forecasts: &'a [AgentForecast], synth: &'a SynthesisConfig) -> Result<Self> {
        if ys.is_empty() {
            return Err(Error::Empty("gibbs data window"));
        }
        if ys.len() != forecasts.len() {
            return Err(Error::Misaligned(format!(
                "{} observations but {} forecasts",
                ys.len(),
                forecasts.len()
            )));
        }
        let k = synth.k();
        if let Some(bad) = forecasts.iter().find(|f| f.k() != k) {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: bad.k(),
            });
        }
        let rows: Vec<Vec<f64>> = forecasts.iter().map(AgentForecast::means).collect();
        let x = XPath::from_rows(&rows);
        let sigma2 = vec![1.0; ys.len() * k];
        Ok(Self::from_state(ys, forecasts, synth, x, sigma2))
    }

    /// Starts from a given `(x, sigma2)` state.
    pub fn from_state(
        ys: &'a [f64],
        forecasts: &'a [AgentForecast],
        synth: &'a SynthesisConfig,
        x: XPath,
        sigma2: Vec<f64>,
    ) -> Self {
        let regressors = x.rows().map(synthesis_regressor).collect();
        GibbsSampler {
            ys,
            forecasts,
            synth,
            regressors,
            x,
            sigma2,
        }
    }

    pub fn x(&self) -> &XPath {
        &self.x
    }

    pub fn sigma2(&self) -> &[f64] {
        &self.sigma2
    }

    /// Synthesis forward filter conditional on the current path.
    pub fn filter(&self) -> Result<Vec<FilterStep>> {
        forward_filter(
            self.regressors.iter().zip(self.ys.iter().copied()),
            &self.synth.init,
            &self.synth.discount,
        )
    }

    /// One full sweep using the given filter of the current path. Returns the
    /// calibration draw.
    pub fn sweep_with(&mut self, filter: &[FilterStep], stream: Stream) -> Result<PhiPath> {
        let mut rng = stream.named("ffbs").rng();
        let phi = ffbs(filter, &self.synth.discount, &mut rng)?;
        let k = self.x.k;
        let forecasts = self.forecasts;
        let ys = self.ys;
        let theta = &phi.theta;
        let nu = &phi.nu;
        self.x
            .data
            .par_chunks_mut(k.max(1))
            .zip(self.sigma2.par_chunks_mut(k.max(1)))
            .enumerate()
            .with_min_len(16)
            .try_for_each(|(t, (x_t, s_t))| -> Result<()> {
                let mut rng = stream.child(t as u64).rng();
                let x_new = sample_x_full_conditional(&theta[t], nu[t], &forecasts[t], s_t, ys[t], &mut rng)?;
                let s_new = sample_sigma2(&x_new, &forecasts[t], &mut rng);
                x_t.copy_from_slice(&x_new);
                s_t.copy_from_slice(&s_new);
                Ok(())
            })?;
        for (f, row) in self.regressors.iter_mut().zip(self.x.data.chunks(k.max(1))) {
            f.rows_mut(1, k).copy_from_slice(row);
        }
        Ok(phi)
    }

    pub fn sweep(&mut self, stream: Stream) -> Result<PhiPath> {
        let filter = self.filter()?;
        self.sweep_with(&filter, stream)
    }

    /// Runs `burn_in + retained` sweeps, reporting retained draws to `observer`.
    pub fn run(&mut self, chain: ChainConfig, stream: Stream, observer: &mut dyn ChainObserver) -> Result<()> {
        chain.validate()?;
        let total = chain.burn_in + chain.retained;
        for i in 0..total {
            let filter = self.filter()?;
            // Sweep i starts from the path produced by sweep i - 1.
            if i > chain.burn_in {
                observer.on_path(&self.x, &filter);
            }
            let phi = self.sweep_with(&filter, stream.child(i as u64))?;
            if i >= chain.burn_in {
                observer.on_phi(&phi);
            }
        }
        let filter = self.filter()?;
        observer.on_path(&self.x, &filter);
        Ok(())
    }
}

/// Runs a chain on `ys` / `forecasts` from the default initialization and
/// returns exactly `chain.retained` agent-draw paths.
pub fn run_chain(
    ys: &[f64],
    forecasts: &[AgentForecast],
    synth: &SynthesisConfig,
    chain: ChainConfig,
    stream: Stream,
) -> Result<Vec<XPath>> {
    let mut sampler = GibbsSampler::new(ys, forecasts, synth)?;
    let mut out = CollectPaths(Vec::with_capacity(chain.retained));
    sampler.run(chain, stream, &mut out)?;
    Ok(out.0)
}
