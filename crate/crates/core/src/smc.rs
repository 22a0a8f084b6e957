//! Rao-Blackwellized bootstrap particle filter over agent draws, with
//! effective-sample-size monitoring and Gibbs intervention.
//!
//! Each particle carries the synthesis posterior moments conditional on its
//! own agent-draw history, so the calibration parameters never need to be
//! sampled and the incremental weights are closed-form Student-t densities.

use std::time::Instant;

use nalgebra::DVector;
use rand::Rng as _;
use rand_distr::weighted::WeightedIndex;
use rand_distr::{Distribution, Gamma, StandardNormal};
use rayon::prelude::*;

use crate::agents::AgentForecast;
use crate::density::{log_sum_exp, Density, StudentT, TMixture};
use crate::dlm::{DlmMoments, FilterStep};
use crate::error::{invalid, Error, Result};
use crate::gibbs::{psd_factor, ChainConfig, ChainObserver, GibbsSampler, XPath};
use crate::rng::Stream;
use crate::synthesis::{synthesis_regressor, SynthesisConfig};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Default)]
pub enum Resampling {
    #[default]
    Multinomial,
    Systematic,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SmcConfig {
    pub particles: usize,
    pub resampling: Resampling,
    /// Resample only when ESS drops below half the cloud size.
    pub adaptive: bool,
    /// Keep every particle's agent-draw history.
    pub keep_histories: bool,
}

impl SmcConfig {
    pub fn new(particles: usize) -> Self {
        SmcConfig {
            particles,
            resampling: Resampling::Multinomial,
            adaptive: false,
            keep_histories: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.particles < 2 {
            return Err(invalid("particles", format!("need at least 2, got {}", self.particles)));
        }
        Ok(())
    }
}

/// Effective sample size `1 / sum(W^2)` of normalized weights.
pub fn ess(weights: &[f64]) -> f64 {
    1.0 / weights.iter().map(|w| w * w).sum::<f64>()
}

/// Ancestor indices drawn from normalized `weights`.
pub fn resample(weights: &[f64], count: usize, scheme: Resampling, stream: Stream) -> Result<Vec<usize>> {
    let mut rng = stream.rng();
    match scheme {
        Resampling::Multinomial => {
            let dist = WeightedIndex::new(weights).map_err(|e| invalid("weights", e.to_string()))?;
            Ok((0..count).map(|_| dist.sample(&mut rng)).collect())
        }
        Resampling::Systematic => {
            let u0: f64 = rng.random::<f64>() / count as f64;
            let mut out = Vec::with_capacity(count);
            let mut acc = weights[0];
            let mut j = 0;
            for i in 0..count {
                let u = u0 + i as f64 / count as f64;
                while u > acc && j + 1 < weights.len() {
                    j += 1;
                    acc += weights[j];
                }
                out.push(j);
            }
            Ok(out)
        }
    }
}

/// Output of one filtering step.
#[derive(Clone, Debug)]
pub struct StepOutput {
    /// One-step predictive of `y_t` before it was observed.
    pub predictive: TMixture,
    /// `ln` of the predictive density at the realized `y_t`.
    pub log_score: f64,
    /// ESS after weighting.
    pub ess: f64,
}

#[derive(Clone, Debug)]
pub struct ParticleCloud {
    moments: Vec<DlmMoments>,
    weights: Vec<f64>,
    histories: Option<Vec<Vec<f64>>>,
    steps: usize,
    log_evidence: f64,
}

impl ParticleCloud {
    /// `m` identical particles at the synthesis prior with uniform weights.
    pub fn at_prior(synth: &SynthesisConfig, config: &SmcConfig) -> Result<Self> {
        config.validate()?;
        let m = config.particles;
        Ok(ParticleCloud {
            moments: vec![synth.init.clone(); m],
            weights: vec![1.0 / m as f64; m],
            histories: config.keep_histories.then(|| vec![Vec::new(); m]),
            steps: 0,
            log_evidence: 0.0,
        })
    }

    /// Equal-weight cloud from given per-particle moments.
    pub fn from_moments(
        moments: Vec<DlmMoments>,
        histories: Option<Vec<Vec<f64>>>,
        steps: usize,
        log_evidence: f64,
    ) -> Result<Self> {
        if moments.len() < 2 {
            return Err(invalid("particles", format!("need at least 2, got {}", moments.len())));
        }
        let m = moments.len();
        Ok(ParticleCloud {
            moments,
            weights: vec![1.0 / m as f64; m],
            histories,
            steps,
            log_evidence,
        })
    }

    pub fn len(&self) -> usize {
        self.moments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.moments.is_empty()
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn moments(&self) -> &[DlmMoments] {
        &self.moments
    }

    pub fn histories(&self) -> Option<&[Vec<f64>]> {
        self.histories.as_deref()
    }

    /// Number of assimilated observations.
    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn log_evidence(&self) -> f64 {
        self.log_evidence
    }

    pub fn ess(&self) -> f64 {
        ess(&self.weights)
    }

    /// Replaces the weights, normalizing them. Intended for instrumentation.
    pub fn set_weights(&mut self, weights: Vec<f64>) -> Result<()> {
        if weights.len() != self.len() {
            return Err(Error::DimensionMismatch {
                expected: self.len(),
                got: weights.len(),
            });
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) || weights.iter().any(|w| !(*w >= 0.0)) {
            return Err(invalid("weights", "must be non-negative with positive sum"));
        }
        self.weights = weights.into_iter().map(|w| w / total).collect();
        Ok(())
    }

    fn resample_in_place(&mut self, config: &SmcConfig, stream: Stream) -> Result<()> {
        let m = self.len();
        let ancestors = resample(&self.weights, m, config.resampling, stream)?;
        self.moments = ancestors.iter().map(|&a| self.moments[a].clone()).collect();
        if let Some(h) = &self.histories {
            self.histories = Some(ancestors.iter().map(|&a| h[a].clone()).collect());
        }
        self.weights = vec![1.0 / m as f64; m];
        Ok(())
    }

    /// Propagates every particle through `h_t`, weights by the closed-form
    /// predictive of `y_t` and updates the moments. No resampling.
    pub fn assimilate(
        &mut self,
        synth: &SynthesisConfig,
        forecast: &AgentForecast,
        y: f64,
        stream: Stream,
    ) -> Result<StepOutput> {
        self.assimilate_with(synth, forecast, y, stream, rb_move)
    }

    /// Resample (unless adaptive and healthy), then [`assimilate`](Self::assimilate).
    pub fn step(
        &mut self,
        config: &SmcConfig,
        synth: &SynthesisConfig,
        forecast: &AgentForecast,
        y: f64,
        stream: Stream,
    ) -> Result<StepOutput> {
        self.maybe_resample(config, stream)?;
        self.assimilate(synth, forecast, y, stream)
    }

    /// Same as [`step`](Self::step) but with weights estimated by sampling
    /// the calibration parameters instead of integrating them out.
    pub fn step_non_rb(
        &mut self,
        config: &SmcConfig,
        synth: &SynthesisConfig,
        forecast: &AgentForecast,
        y: f64,
        stream: Stream,
    ) -> Result<StepOutput> {
        self.maybe_resample(config, stream)?;
        self.assimilate_with(synth, forecast, y, stream, sampled_move)
    }

    fn maybe_resample(&mut self, config: &SmcConfig, stream: Stream) -> Result<()> {
        if self.steps > 0 && (!config.adaptive || self.ess() < self.len() as f64 / 2.0) {
            self.resample_in_place(config, stream.child(self.steps as u64).named("resample"))?;
        }
        Ok(())
    }

    fn assimilate_with(
        &mut self,
        synth: &SynthesisConfig,
        forecast: &AgentForecast,
        y: f64,
        stream: Stream,
        mv: MoveFn,
    ) -> Result<StepOutput> {
        if forecast.k() != synth.k() {
            return Err(Error::DimensionMismatch {
                expected: synth.k(),
                got: forecast.k(),
            });
        }
        let t = self.steps as u64;
        let base = stream.child(t);
        let moves: Vec<Moved> = self
            .moments
            .par_iter()
            .enumerate()
            .with_min_len(64)
            .map(|(i, m)| mv(m, synth, forecast, y, base.child(i as u64)))
            .collect::<Result<_>>()?;

        let log_prev: Vec<f64> = self.weights.iter().map(|w| w.ln()).collect();
        let joint: Vec<f64> = moves.iter().zip(&log_prev).map(|(mv, lp)| lp + mv.log_weight).collect();
        let total = log_sum_exp(joint.iter().copied());
        if total == f64::NEG_INFINITY || total.is_nan() {
            return Err(Error::WeightCollapse(self.steps));
        }
        let predictive = TMixture::new(self.weights.clone(), moves.iter().map(|mv| mv.predictive).collect())?;
        self.weights = joint.iter().map(|j| (j - total).exp()).collect();
        if let Some(h) = self.histories.as_mut() {
            for (hist, mv) in h.iter_mut().zip(&moves) {
                hist.extend_from_slice(&mv.x);
            }
        }
        self.moments = moves.into_iter().map(|mv| mv.posterior).collect();
        self.steps += 1;
        self.log_evidence += total;
        Ok(StepOutput {
            predictive,
            log_score: total,
            ess: self.ess(),
        })
    }

    /// Predictive for the next observation: each particle draws
    /// `x ~ h_{t+1}` and contributes its conditional Student-t, weighted by
    /// the current weights.
    pub fn synthesized_predictive(
        &self,
        synth: &SynthesisConfig,
        forecast: &AgentForecast,
        stream: Stream,
    ) -> Result<TMixture> {
        let base = stream.child(self.steps as u64);
        let components: Vec<StudentT> = self
            .moments
            .par_iter()
            .enumerate()
            .with_min_len(64)
            .map(|(i, m)| {
                let mut rng = base.child(i as u64).rng();
                let x = forecast.sample(&mut rng);
                m.prior(&synth.discount).predictive(&synthesis_regressor(&x))
            })
            .collect::<Result<_>>()?;
        TMixture::new(self.weights.clone(), components)
    }
}

struct Moved {
    x: Vec<f64>,
    log_weight: f64,
    predictive: StudentT,
    posterior: DlmMoments,
}

type MoveFn = fn(&DlmMoments, &SynthesisConfig, &AgentForecast, f64, Stream) -> Result<Moved>;

fn rb_move(m: &DlmMoments, synth: &SynthesisConfig, forecast: &AgentForecast, y: f64, stream: Stream) -> Result<Moved> {
    let mut rng = stream.rng();
    let x = forecast.sample(&mut rng);
    let f = synthesis_regressor(&x);
    let prior = m.prior(&synth.discount);
    let predictive = prior.predictive(&f)?;
    let posterior = prior.update(&f, y)?;
    Ok(Moved {
        log_weight: predictive.ln_pdf(y),
        x,
        predictive,
        posterior,
    })
}

/// Draws `(nu, theta)` from the particle's one-step prior and weights by the
/// normal likelihood. Unbiased for the Rao-Blackwellized weight.
fn sampled_move(
    m: &DlmMoments,
    synth: &SynthesisConfig,
    forecast: &AgentForecast,
    y: f64,
    stream: Stream,
) -> Result<Moved> {
    let mut rng = stream.rng();
    let x = forecast.sample(&mut rng);
    let f = synthesis_regressor(&x);
    let prior = m.prior(&synth.discount);
    let nu = 1.0
        / Gamma::new(prior.dof / 2.0, 2.0 / (prior.dof * prior.s_prev))
            .expect("positive shape and rate")
            .sample(&mut rng);
    let l = psd_factor(&prior.r)?;
    let z = DVector::from_iterator(
        prior.a.len(),
        (0..prior.a.len()).map(|_| -> f64 { StandardNormal.sample(&mut rng) }),
    );
    let theta = &prior.a + (l * z) * (nu / prior.s_prev).sqrt();
    let mean = f.dot(&theta);
    let log_weight = -0.5 * (2.0 * std::f64::consts::PI * nu).ln() - (y - mean).powi(2) / (2.0 * nu);
    let predictive = prior.predictive(&f)?;
    let posterior = prior.update(&f, y)?;
    Ok(Moved {
        x,
        log_weight,
        predictive,
        posterior,
    })
}

/// One recorded intervention.
#[derive(Clone, Debug, PartialEq)]
pub struct InterventionEntry {
    /// Step index (number of observations assimilated, minus one).
    pub step: usize,
    pub ess: f64,
    pub chain_size: usize,
    pub seconds: f64,
}

struct RebuildObserver {
    moments: Vec<DlmMoments>,
    histories: Option<Vec<Vec<f64>>>,
}

impl ChainObserver for RebuildObserver {
    fn on_path(&mut self, path: &XPath, filter: &[FilterStep]) {
        let last = filter.last().expect("non-empty window");
        self.moments.push(last.posterior.clone());
        if let Some(h) = self.histories.as_mut() {
            h.push(path.rows().flatten().copied().collect());
        }
    }
}

/// If the cloud's ESS is below `threshold`, replaces it with a cloud rebuilt
/// from a Gibbs chain on everything assimilated so far.
///
/// `ys` and `forecasts` must cover exactly the assimilated window.
pub fn maybe_intervene(
    cloud: &mut ParticleCloud,
    threshold: f64,
    ys: &[f64],
    forecasts: &[AgentForecast],
    synth: &SynthesisConfig,
    chain: ChainConfig,
    stream: Stream,
) -> Result<Option<InterventionEntry>> {
    if !(threshold >= 1.0) {
        return Err(invalid("ess_threshold", format!("must be >= 1, got {threshold}")));
    }
    if ys.len() != cloud.steps {
        return Err(Error::Misaligned(format!(
            "cloud assimilated {} observations, window has {}",
            cloud.steps,
            ys.len()
        )));
    }
    let ess = cloud.ess();
    if ess >= threshold {
        return Ok(None);
    }
    let start = Instant::now();
    let mut sampler = GibbsSampler::new(ys, forecasts, synth)?;
    let mut rebuild = RebuildObserver {
        moments: Vec::with_capacity(chain.retained),
        histories: cloud.histories.is_some().then(Vec::new),
    };
    sampler.run(
        chain,
        stream.child(cloud.steps as u64).named("intervention"),
        &mut rebuild,
    )?;
    *cloud = ParticleCloud::from_moments(rebuild.moments, rebuild.histories, cloud.steps, cloud.log_evidence)?;
    Ok(Some(InterventionEntry {
        step: cloud.steps - 1,
        ess,
        chain_size: chain.retained,
        seconds: start.elapsed().as_secs_f64(),
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dlm::forward_filter;
    use approx::assert_abs_diff_eq;

    #[test]
    fn ess_examples() {
        assert_abs_diff_eq!(ess(&vec![1e-4; 10_000]), 10_000.0, epsilon = 1e-6);
        assert_eq!(ess(&[1.0, 0.0, 0.0]), 1.0);
        assert_eq!(ess(&[0.5, 0.5, 0.0, 0.0]), 2.0);
    }

    #[test]
    fn resampling_is_reproducible() {
        let w = vec![0.25; 4];
        for scheme in [Resampling::Multinomial, Resampling::Systematic] {
            let a = resample(&w, 4, scheme, Stream::new(3)).unwrap();
            assert_eq!(a, resample(&w, 4, scheme, Stream::new(3)).unwrap());
        }
        assert_eq!(
            resample(&w, 4, Resampling::Systematic, Stream::new(1)).unwrap(),
            vec![0, 1, 2, 3]
        );
        assert_eq!(
            resample(&[0.0, 1.0, 0.0], 5, Resampling::Multinomial, Stream::new(1)).unwrap(),
            vec![1; 5]
        );
    }

    #[test]
    fn point_mass_agents_match_analytic_filter() {
        let synth = SynthesisConfig::default_prior(2);
        let config = SmcConfig::new(5);
        let xs: Vec<Vec<f64>> = (0..15)
            .map(|t| vec![(t as f64 * 0.3).sin(), 1.0 + 0.1 * t as f64])
            .collect();
        let ys: Vec<f64> = (0..15)
            .map(|t| 0.5 * (t as f64 * 0.3).sin() + 0.02 * t as f64)
            .collect();
        let fs: Vec<_> = xs.iter().map(|x| synthesis_regressor(x)).collect();
        let oracle = forward_filter(fs.iter().zip(ys.iter().copied()), &synth.init, &synth.discount).unwrap();
        let mut cloud = ParticleCloud::at_prior(&synth, &config).unwrap();
        for t in 0..15 {
            let out = cloud
                .step(
                    &config,
                    &synth,
                    &AgentForecast::point_masses(&xs[t]),
                    ys[t],
                    Stream::new(9),
                )
                .unwrap();
            assert_abs_diff_eq!(out.log_score, oracle[t].log_score, epsilon = 1e-10);
            assert_abs_diff_eq!(out.ess, 5.0, epsilon = 1e-10);
        }
        assert_abs_diff_eq!(cloud.moments()[3].m, oracle[14].posterior.m, epsilon = 1e-10);
    }

    #[test]
    fn dead_particle_gets_zero_weight() {
        let synth = SynthesisConfig::default_prior(1);
        let mut cloud = ParticleCloud::at_prior(&synth, &SmcConfig::new(2)).unwrap();
        // Particle 1 starts with a collapsed variance so y is astronomically
        // far in its tail.
        cloud.moments[1].s = 1e-300;
        cloud.moments[1].c *= 1e-300;
        let out = cloud
            .assimilate(&synth, &AgentForecast::point_masses(&[0.0]), 1.0e3, Stream::new(0))
            .unwrap();
        assert_eq!(cloud.weights(), &[1.0, 0.0]);
        assert_eq!(out.ess, 1.0);
    }

    #[test]
    fn total_collapse_is_an_error() {
        let synth = SynthesisConfig::default_prior(1);
        let mut cloud = ParticleCloud::at_prior(&synth, &SmcConfig::new(2)).unwrap();
        for m in &mut cloud.moments {
            m.s = 1e-300;
            m.c *= 1e-300;
        }
        let err = cloud.assimilate(&synth, &AgentForecast::point_masses(&[0.0]), 1.0e200, Stream::new(0));
        assert!(matches!(err, Err(Error::WeightCollapse(0))));
    }

    #[test]
    fn too_few_particles() {
        let synth = SynthesisConfig::default_prior(1);
        assert!(ParticleCloud::at_prior(&synth, &SmcConfig::new(1)).is_err());
    }

    #[test]
    fn intervention_trigger() {
        let synth = SynthesisConfig::default_prior(1);
        let config = SmcConfig::new(4);
        let fc = AgentForecast::new(vec![StudentT::new(5.0, 1.0, 0.2).unwrap()]);
        let mut cloud = ParticleCloud::at_prior(&synth, &config).unwrap();
        cloud.assimilate(&synth, &fc, 1.1, Stream::new(1)).unwrap();
        cloud.set_weights(vec![0.7, 0.1, 0.1, 0.1]).unwrap();
        let e = cloud.ess();
        let chain = ChainConfig::new(6);
        let fcs = vec![fc.clone()];
        assert!(
            maybe_intervene(&mut cloud, e, &[1.1], &fcs, &synth, chain, Stream::new(2))
                .unwrap()
                .is_none()
        );
        let entry = maybe_intervene(&mut cloud, e + 1e-9, &[1.1], &fcs, &synth, chain, Stream::new(2))
            .unwrap()
            .unwrap();
        assert_eq!(entry.step, 0);
        assert_eq!(entry.chain_size, 6);
        assert_eq!(cloud.len(), 6);
        assert_abs_diff_eq!(cloud.ess(), 6.0, epsilon = 1e-12);
        assert!(maybe_intervene(&mut cloud, 0.5, &[1.1], &fcs, &synth, chain, Stream::new(2)).is_err());
    }

    #[test]
    fn histories_follow_ancestors() {
        let synth = SynthesisConfig::default_prior(1);
        let mut config = SmcConfig::new(8);
        config.keep_histories = true;
        let mut cloud = ParticleCloud::at_prior(&synth, &config).unwrap();
        let fc = AgentForecast::new(vec![StudentT::new(5.0, 1.0, 0.2).unwrap()]);
        for t in 0..3 {
            cloud.step(&config, &synth, &fc, 1.0, Stream::new(4).child(t)).unwrap();
        }
        assert!(cloud.histories().unwrap().iter().all(|h| h.len() == 3));
    }
}
