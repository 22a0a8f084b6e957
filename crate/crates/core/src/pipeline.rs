//! End-to-end synthesis runs over an aligned window of observations and
//! agent forecasts: the particle filter with interventions, and the
//! repeated-Gibbs baseline.

use std::time::Instant;

use rayon::prelude::*;

use crate::agents::AgentForecast;
use crate::density::{Density, StudentT, TMixture};
use crate::dlm::{DlmMoments, FilterStep};
use crate::error::{invalid, Error, Result};
use crate::eval::predictive_quantiles;
use crate::gibbs::{ChainConfig, ChainObserver, GibbsSampler, XPath};
use crate::rng::Stream;
use crate::smc::{maybe_intervene, InterventionEntry, ParticleCloud, SmcConfig, StepOutput};
use crate::synthesis::{conditional_predictive, SynthesisConfig};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DbpsSettings {
    pub smc: SmcConfig,
    /// ESS threshold `C`; `None` disables interventions.
    pub ess_threshold: Option<f64>,
    pub chain: ChainConfig,
}

impl DbpsSettings {
    pub fn new(particles: usize, ess_threshold: Option<f64>, chain: ChainConfig) -> Self {
        DbpsSettings {
            smc: SmcConfig::new(particles),
            ess_threshold,
            chain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.smc.validate()?;
        if let Some(c) = self.ess_threshold {
            if !(1.0..=self.smc.particles as f64).contains(&c) {
                return Err(invalid(
                    "ess_threshold",
                    format!("must lie in [1, {}], got {c}", self.smc.particles),
                ));
            }
        }
        Ok(())
    }
}

/// Outcome of assimilating one observation.
#[derive(Clone, Debug)]
pub struct StepRecord {
    pub log_score: f64,
    /// ESS after weighting, before any intervention.
    pub ess: f64,
    pub intervened: bool,
    /// Wall time of the filtering step alone.
    pub seconds: f64,
    pub predictive: TMixture,
}

/// A particle-filter synthesis pipeline over a fixed window.
pub struct DbpsPipeline<'a> {
    ys: &'a [f64],
    forecasts: &'a [AgentForecast],
    synth: SynthesisConfig,
    settings: DbpsSettings,
    cloud: ParticleCloud,
    stream: Stream,
    interventions: Vec<InterventionEntry>,
}

impl<'a> DbpsPipeline<'a> {
    pub fn new(
        ys: &'a [f64],
        forecasts: &'a [AgentForecast],
        synth: SynthesisConfig,
        settings: DbpsSettings,
        stream: Stream,
    ) -> Result<Self> {
        settings.validate()?;
        if ys.len() != forecasts.len() {
            return Err(Error::Misaligned(format!(
                "{} observations but {} forecasts",
                ys.len(),
                forecasts.len()
            )));
        }
        let cloud = ParticleCloud::at_prior(&synth, &settings.smc)?;
        Ok(DbpsPipeline {
            ys,
            forecasts,
            synth,
            settings,
            cloud,
            stream,
            interventions: Vec::new(),
        })
    }

    pub fn steps(&self) -> usize {
        self.cloud.steps()
    }

    pub fn is_done(&self) -> bool {
        self.cloud.steps() == self.ys.len()
    }

    pub fn cloud(&self) -> &ParticleCloud {
        &self.cloud
    }

    pub fn interventions(&self) -> &[InterventionEntry] {
        &self.interventions
    }

    pub fn synth(&self) -> &SynthesisConfig {
        &self.synth
    }

    /// Assimilates the next observation, then intervenes if the ESS fell
    /// below the threshold.
    pub fn advance(&mut self) -> Result<StepRecord> {
        let i = self.cloud.steps();
        if i >= self.ys.len() {
            return Err(invalid("pipeline", "window exhausted"));
        }
        let start = Instant::now();
        let StepOutput {
            predictive,
            log_score,
            ess,
        } = self.cloud.step(
            &self.settings.smc,
            &self.synth,
            &self.forecasts[i],
            self.ys[i],
            self.stream,
        )?;
        let seconds = start.elapsed().as_secs_f64();
        let mut intervened = false;
        if let Some(c) = self.settings.ess_threshold {
            let window = i + 1;
            if let Some(entry) = maybe_intervene(
                &mut self.cloud,
                c,
                &self.ys[..window],
                &self.forecasts[..window],
                &self.synth,
                self.settings.chain,
                self.stream,
            )? {
                self.interventions.push(entry);
                intervened = true;
            }
        }
        Ok(StepRecord {
            log_score,
            ess,
            intervened,
            seconds,
            predictive,
        })
    }
}

/// Per-step results of a whole pipeline run.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct DbpsRun {
    pub log_scores: Vec<f64>,
    pub ess: Vec<f64>,
    pub intervened: Vec<bool>,
    pub step_seconds: Vec<f64>,
    pub interventions: Vec<InterventionEntry>,
    /// Empty unless quantiles were requested.
    pub quantiles: Vec<Vec<f64>>,
    pub log_evidence: f64,
}

/// Runs the particle filter over the whole window. `probs`, when given,
/// are the predictive quantile levels recorded at every step.
pub fn run_dbps(
    ys: &[f64],
    forecasts: &[AgentForecast],
    synth: &SynthesisConfig,
    settings: DbpsSettings,
    stream: Stream,
    probs: Option<&[f64]>,
) -> Result<DbpsRun> {
    let mut pipe = DbpsPipeline::new(ys, forecasts, synth.clone(), settings, stream)?;
    let mut run = DbpsRun::default();
    while !pipe.is_done() {
        let rec = pipe.advance()?;
        run.log_scores.push(rec.log_score);
        run.ess.push(rec.ess);
        run.intervened.push(rec.intervened);
        run.step_seconds.push(rec.seconds);
        if let Some(p) = probs {
            run.quantiles.push(predictive_quantiles(&rec.predictive, p)?);
        }
    }
    run.log_evidence = pipe.cloud().log_evidence();
    run.interventions = pipe.interventions().to_vec();
    Ok(run)
}

/// Steps `first, first + stride, ...` below `len`, always including `len - 1`.
pub fn strided_steps(first: usize, len: usize, stride: usize) -> Vec<usize> {
    let stride = stride.max(1);
    let mut out: Vec<usize> = (first..len).step_by(stride).collect();
    if len > first && out.last() != Some(&(len - 1)) {
        out.push(len - 1);
    }
    out
}

struct FinalMoments(Vec<DlmMoments>);

impl ChainObserver for FinalMoments {
    fn on_path(&mut self, _path: &XPath, filter: &[FilterStep]) {
        self.0.push(filter.last().expect("non-empty window").posterior.clone());
    }
}

/// Predictive of `y_i` from a Gibbs chain on the window before `i`.
pub fn gibbs_predictive(
    ys: &[f64],
    forecasts: &[AgentForecast],
    synth: &SynthesisConfig,
    chain: ChainConfig,
    i: usize,
    stream: Stream,
) -> Result<TMixture> {
    let moments = if i == 0 {
        vec![synth.init.clone(); chain.retained]
    } else {
        let mut sampler = GibbsSampler::new(&ys[..i], &forecasts[..i], synth)?;
        let mut out = FinalMoments(Vec::with_capacity(chain.retained));
        sampler.run(chain, stream.named("chain"), &mut out)?;
        out.0
    };
    let draws = stream.named("predictive");
    let components: Vec<StudentT> = moments
        .par_iter()
        .enumerate()
        .with_min_len(64)
        .map(|(j, m)| {
            let x = forecasts[i].sample(&mut draws.child(j as u64).rng());
            conditional_predictive(m, &synth.discount, &x)
        })
        .collect::<Result<_>>()?;
    TMixture::uniform(components)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct GibbsRun {
    pub steps: Vec<usize>,
    pub log_scores: Vec<f64>,
    pub step_seconds: Vec<f64>,
    pub quantiles: Vec<Vec<f64>>,
}

/// Repeated-MCMC baseline: at each listed step, a fresh chain on all
/// earlier observations produces the predictive.
pub fn run_repeated_gibbs(
    ys: &[f64],
    forecasts: &[AgentForecast],
    synth: &SynthesisConfig,
    chain: ChainConfig,
    steps: &[usize],
    stream: Stream,
    probs: Option<&[f64]>,
) -> Result<GibbsRun> {
    if ys.len() != forecasts.len() {
        return Err(Error::Misaligned(format!(
            "{} observations but {} forecasts",
            ys.len(),
            forecasts.len()
        )));
    }
    let mut run = GibbsRun::default();
    for &i in steps {
        if i >= ys.len() {
            return Err(invalid("steps", format!("step {i} beyond window of {}", ys.len())));
        }
        let start = Instant::now();
        let predictive = gibbs_predictive(ys, forecasts, synth, chain, i, stream.child(i as u64))?;
        run.step_seconds.push(start.elapsed().as_secs_f64());
        run.log_scores.push(predictive.ln_pdf(ys[i]));
        run.steps.push(i);
        if let Some(p) = probs {
            run.quantiles.push(predictive_quantiles(&predictive, p)?);
        }
    }
    Ok(run)
}

/// Projected wall time of the repeated-MCMC baseline at the last step:
/// `3 (T - t0 + 1) (N / M) * step_seconds`.
pub fn estimate_mcmc_time(t_end: usize, t0: usize, chain: usize, particles: usize, step_seconds: f64) -> Result<f64> {
    if t_end < t0 {
        return Err(invalid("t_end", format!("must be >= t0 = {t0}, got {t_end}")));
    }
    if particles == 0 {
        return Err(invalid("particles", "must be positive"));
    }
    if !(step_seconds >= 0.0) {
        return Err(invalid("step_seconds", format!("must be >= 0, got {step_seconds}")));
    }
    Ok(3.0 * (t_end - t0 + 1) as f64 * (chain as f64 / particles as f64) * step_seconds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn mcmc_time_examples() {
        assert_abs_diff_eq!(
            estimate_mcmc_time(248, 66, 10_000, 10_000, 0.53).unwrap(),
            3.0 * 183.0 * 0.53,
            epsilon = 1e-9
        );
        assert_eq!(estimate_mcmc_time(248, 66, 0, 10_000, 0.53).unwrap(), 0.0);
        let a = estimate_mcmc_time(200, 10, 100, 50, 0.1).unwrap();
        let b = estimate_mcmc_time(200, 10, 200, 50, 0.1).unwrap();
        assert_abs_diff_eq!(b, 2.0 * a, epsilon = 1e-12);
        assert!(estimate_mcmc_time(5, 10, 1, 1, 0.1).is_err());
    }

    #[test]
    fn strides() {
        assert_eq!(strided_steps(2, 10, 4), vec![2, 6, 9]);
        assert_eq!(strided_steps(0, 3, 1), vec![0, 1, 2]);
        assert!(strided_steps(5, 5, 2).is_empty());
    }

    #[test]
    fn threshold_range_checked() {
        let s = DbpsSettings::new(10, Some(11.0), ChainConfig::new(10));
        assert!(s.validate().unwrap_err().to_string().contains("ess_threshold"));
        assert!(DbpsSettings::new(10, Some(10.0), ChainConfig::new(10))
            .validate()
            .is_ok());
    }
}
