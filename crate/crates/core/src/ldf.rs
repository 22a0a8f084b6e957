//! Loss-discounting framework: discounted log predictive likelihoods,
//! softmax and argmax weights, the two-layer combination over agents and
//! the combination over a grid of synthesis discount factors.

use std::str::FromStr;

use rayon::prelude::*;

use crate::agents::AgentForecast;
use crate::density::{log_sum_exp, StudentT, TMixture};
use crate::dlm::DiscountConfig;
use crate::error::{invalid, Error, Result};
use crate::eval::predictive_quantiles;
use crate::pipeline::{DbpsPipeline, DbpsSettings, StepRecord};
use crate::rng::Stream;
use crate::synthesis::SynthesisConfig;

/// Running discounted log predictive likelihoods, one per model.
#[derive(Clone, Debug, PartialEq)]
pub struct LdplLedger {
    values: Vec<f64>,
    gamma: f64,
}

impl LdplLedger {
    pub fn new(models: usize, gamma: f64) -> Result<Self> {
        if !(gamma > 0.0 && gamma <= 1.0) {
            return Err(invalid("gamma", format!("must lie in (0, 1], got {gamma}")));
        }
        Ok(LdplLedger {
            values: vec![0.0; models],
            gamma,
        })
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    /// `L_j <- gamma L_j + score_j`.
    pub fn update(&mut self, scores: &[f64]) -> Result<()> {
        if scores.len() != self.values.len() {
            return Err(Error::DimensionMismatch {
                expected: self.values.len(),
                got: scores.len(),
            });
        }
        if let Some((index, &value)) = scores.iter().enumerate().find(|(_, s)| !s.is_finite()) {
            return Err(Error::NonFiniteScore { index, value });
        }
        for (v, s) in self.values.iter_mut().zip(scores) {
            *v = self.gamma * *v + s;
        }
        Ok(())
    }
}

/// `exp(a_k - max a) / sum`.
pub fn softmax_weights(a: &[f64]) -> Result<Vec<f64>> {
    let max = a.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max == f64::NEG_INFINITY {
        return Err(Error::AllScoresInfinite);
    }
    if let Some((index, &value)) = a.iter().enumerate().find(|(_, v)| v.is_nan() || **v == f64::INFINITY) {
        return Err(Error::NonFiniteScore { index, value });
    }
    let e: Vec<f64> = a.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = e.iter().sum();
    Ok(e.into_iter().map(|v| v / total).collect())
}

/// Index of the largest score; ties go to the lowest index.
pub fn argmax(a: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in a.iter().enumerate() {
        if v > a[best] {
            best = i;
        }
    }
    best
}

/// One-hot weights at [`argmax`].
pub fn argmax_weights(a: &[f64]) -> Vec<f64> {
    let mut w = vec![0.0; a.len()];
    if !a.is_empty() {
        w[argmax(a)] = 1.0;
    }
    w
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum WeightFn {
    Softmax,
    Argmax,
}

impl WeightFn {
    pub fn weights(self, a: &[f64]) -> Result<Vec<f64>> {
        match self {
            WeightFn::Softmax => softmax_weights(a),
            WeightFn::Argmax => Ok(argmax_weights(a)),
        }
    }

    pub fn letter(self) -> char {
        match self {
            WeightFn::Softmax => 's',
            WeightFn::Argmax => 'a',
        }
    }
}

impl FromStr for WeightFn {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "s" | "softmax" => Ok(WeightFn::Softmax),
            "a" | "argmax" => Ok(WeightFn::Argmax),
            other => Err(invalid("weight", format!("unknown weight function {other:?}"))),
        }
    }
}

/// Weighted mixture of mixtures, flattened.
pub fn combine_predictives(weights: &[f64], components: &[TMixture]) -> Result<TMixture> {
    if weights.len() != components.len() {
        return Err(Error::DimensionMismatch {
            expected: components.len(),
            got: weights.len(),
        });
    }
    let live: Vec<usize> = (0..weights.len()).filter(|&j| weights[j] > 0.0).collect();
    if let [j] = live[..] {
        return Ok(components[j].clone());
    }
    let mut w = Vec::new();
    let mut c: Vec<StudentT> = Vec::new();
    for (&wj, mix) in weights.iter().zip(components) {
        if wj > 0.0 {
            w.extend(mix.weights().iter().map(|v| wj * v));
            c.extend_from_slice(mix.components());
        }
    }
    TMixture::new(w, c)
}

/// `ln sum_j w_j exp(score_j)`.
pub fn combined_log_score(weights: &[f64], scores: &[f64]) -> f64 {
    log_sum_exp(
        weights
            .iter()
            .zip(scores)
            .filter(|(w, _)| **w > 0.0)
            .map(|(w, s)| w.ln() + s),
    )
}

/// Grid of synthesis discount pairs `(beta_j, delta_j)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DiscountGrid {
    pairs: Vec<DiscountConfig>,
}

fn round2(x: f64) -> f64 {
    (x * 100.0).round() / 100.0
}

impl DiscountGrid {
    pub fn new(pairs: Vec<DiscountConfig>) -> Result<Self> {
        if pairs.is_empty() {
            return Err(Error::Empty("discount grid"));
        }
        Ok(DiscountGrid { pairs })
    }

    pub fn from_pairs(pairs: &[(f64, f64)]) -> Result<Self> {
        DiscountGrid::new(
            pairs
                .iter()
                .map(|&(b, d)| DiscountConfig::new(b, d))
                .collect::<Result<_>>()?,
        )
    }

    /// The 35-pair grid: `(r, r)` for `r = 0.98, ..., 0.79`, then
    /// `(r, r - c)` for `c = 0.02, 0.04, 0.06` and `r = 0.99, 0.97, ..., 0.91`.
    pub fn preset_s() -> Self {
        let mut pairs: Vec<(f64, f64)> = (1..=20)
            .map(|i| {
                let r = round2(0.99 - 0.01 * i as f64);
                (r, r)
            })
            .collect();
        for gap in [0.02, 0.04, 0.06] {
            for i in 0..=4 {
                let r = round2(0.99 - 0.02 * i as f64);
                pairs.push((r, round2(r - gap)));
            }
        }
        DiscountGrid::from_pairs(&pairs).expect("valid constants")
    }

    pub fn pairs(&self) -> &[DiscountConfig] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }
}

/// The 15 first-layer discount values of the two-layer combination.
pub fn preset_gamma1_grid() -> Vec<f64> {
    vec![
        0.01, 0.3, 0.5, 0.6, 0.7, 0.75, 0.8, 0.85, 0.9, 0.92, 0.95, 0.97, 0.98, 0.99, 1.0,
    ]
}

/// Per-step output of the grid combination for one weight function.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct LdfTrace {
    pub log_scores: Vec<f64>,
    /// Grid index with the largest (lagged) ledger value at each step.
    pub selected: Vec<usize>,
    pub quantiles: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LdfBpsRun {
    pub grid: DiscountGrid,
    /// `pipeline_scores[j][i]`: log score of pipeline `j` at step `i`.
    pub pipeline_scores: Vec<Vec<f64>>,
    pub pipeline_interventions: Vec<usize>,
    pub traces: Vec<(WeightFn, LdfTrace)>,
}

impl LdfBpsRun {
    pub fn trace(&self, f: WeightFn) -> Option<&LdfTrace> {
        self.traces.iter().find(|(g, _)| *g == f).map(|(_, t)| t)
    }

    /// Selected `(beta, delta)` pairs for a weight function.
    pub fn selected_pairs(&self, f: WeightFn) -> Option<Vec<DiscountConfig>> {
        self.trace(f)
            .map(|t| t.selected.iter().map(|&j| self.grid.pairs[j]).collect())
    }
}

/// Runs one particle-filter pipeline per grid pair over the shared agent
/// forecasts and combines their predictives with discounted-score weights.
///
/// Pipeline `j` draws from `stream.child(j)`.
#[allow(clippy::too_many_arguments)]
pub fn run_ldf_bps(
    ys: &[f64],
    forecasts: &[AgentForecast],
    synth: &SynthesisConfig,
    grid: &DiscountGrid,
    gamma: f64,
    weight_fns: &[WeightFn],
    settings: DbpsSettings,
    stream: Stream,
    probs: Option<&[f64]>,
) -> Result<LdfBpsRun> {
    let j = grid.len();
    let mut pipes = grid
        .pairs
        .iter()
        .enumerate()
        .map(|(i, d)| DbpsPipeline::new(ys, forecasts, synth.with_discount(*d), settings, stream.child(i as u64)))
        .collect::<Result<Vec<_>>>()?;
    let mut ledger = LdplLedger::new(j, gamma)?;
    let mut pipeline_scores = vec![Vec::with_capacity(ys.len()); j];
    let mut traces: Vec<(WeightFn, LdfTrace)> = weight_fns.iter().map(|f| (*f, LdfTrace::default())).collect();
    for _ in 0..ys.len() {
        let records: Vec<StepRecord> = pipes.par_iter_mut().map(DbpsPipeline::advance).collect::<Result<_>>()?;
        let scores: Vec<f64> = records.iter().map(|r| r.log_score).collect();
        let selected = argmax(ledger.values());
        for (f, trace) in traces.iter_mut() {
            let w = f.weights(ledger.values())?;
            trace.log_scores.push(combined_log_score(&w, &scores));
            trace.selected.push(selected);
            if let Some(p) = probs {
                let mixes: Vec<TMixture> = records.iter().map(|r| r.predictive.clone()).collect();
                trace
                    .quantiles
                    .push(predictive_quantiles(&combine_predictives(&w, &mixes)?, p)?);
            }
        }
        for (s, col) in scores.iter().zip(pipeline_scores.iter_mut()) {
            col.push(*s);
        }
        ledger.update(&scores)?;
    }
    Ok(LdfBpsRun {
        grid: grid.clone(),
        pipeline_scores,
        pipeline_interventions: pipes.iter().map(|p| p.interventions().len()).collect(),
        traces,
    })
}

/// Per-step output of the two-layer combination.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TwoLayerTrace {
    pub log_scores: Vec<f64>,
    /// Final weights over agents at each step.
    pub agent_weights: Vec<Vec<f64>>,
    pub quantiles: Vec<Vec<f64>>,
}

/// Two-layer combination of agent densities: the first layer weights agents
/// by discounted scores for each value in `gamma1`; the second weights those
/// combinations by their own discounted scores under `gamma2`.
pub fn run_two_layer_ldf(
    ys: &[f64],
    forecasts: &[AgentForecast],
    gamma1: &[f64],
    gamma2: f64,
    first: WeightFn,
    second: WeightFn,
    probs: Option<&[f64]>,
) -> Result<TwoLayerTrace> {
    if ys.len() != forecasts.len() {
        return Err(Error::Misaligned(format!(
            "{} observations but {} forecasts",
            ys.len(),
            forecasts.len()
        )));
    }
    if gamma1.is_empty() {
        return Err(Error::Empty("first-layer discount grid"));
    }
    let k = forecasts.first().map_or(0, AgentForecast::k);
    let mut first_ledgers = gamma1
        .iter()
        .map(|&g| LdplLedger::new(k, g))
        .collect::<Result<Vec<_>>>()?;
    let mut second_ledger = LdplLedger::new(gamma1.len(), gamma2)?;
    let mut out = TwoLayerTrace::default();
    for (fc, &y) in forecasts.iter().zip(ys) {
        if fc.k() != k {
            return Err(Error::DimensionMismatch {
                expected: k,
                got: fc.k(),
            });
        }
        let agent_scores: Vec<f64> = fc
            .densities
            .iter()
            .map(|d| crate::density::Density::ln_pdf(d, y))
            .collect();
        let first_weights = first_ledgers
            .iter()
            .map(|l| first.weights(l.values()))
            .collect::<Result<Vec<_>>>()?;
        let layer_scores: Vec<f64> = first_weights
            .iter()
            .map(|w| combined_log_score(w, &agent_scores))
            .collect();
        let w2 = second.weights(second_ledger.values())?;
        let mut agent_weights = vec![0.0; k];
        for (w2g, w1) in w2.iter().zip(&first_weights) {
            for (a, b) in agent_weights.iter_mut().zip(w1) {
                *a += w2g * b;
            }
        }
        out.log_scores.push(combined_log_score(&w2, &layer_scores));
        if let Some(p) = probs {
            let mix = TMixture::new(agent_weights.clone(), fc.densities.clone())?;
            out.quantiles.push(predictive_quantiles(&mix, p)?);
        }
        out.agent_weights.push(agent_weights);
        for l in &mut first_ledgers {
            l.update(&agent_scores)?;
        }
        second_ledger.update(&layer_scores)?;
    }
    Ok(out)
}
