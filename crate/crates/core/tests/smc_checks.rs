mod common;

use approx::assert_abs_diff_eq;
use bpsynth_core::agents::AgentForecast;
use bpsynth_core::density::log_sum_exp;
use bpsynth_core::dlm::forward_filter;
use bpsynth_core::eval::predictive_quantiles;
use bpsynth_core::pipeline::{run_dbps, DbpsSettings};
use bpsynth_core::smc::{ParticleCloud, SmcConfig};
use bpsynth_core::synthesis::{synthesis_regressor, SynthesisConfig};
use bpsynth_core::{ChainConfig, Density, DiscountConfig, DlmMoments, Stream};
use common::{mean_var, synthetic_forecasts, synthetic_ys};
use nalgebra::DVector;

fn filtered_cloud(m: usize, steps: usize) -> (ParticleCloud, Vec<AgentForecast>, SynthesisConfig) {
    let fcs = synthetic_forecasts(2, steps + 1, 6.0, 0.1);
    let ys = synthetic_ys(&fcs, 0.2, Stream::new(1));
    let synth = SynthesisConfig::default_prior(2);
    let config = SmcConfig::new(m);
    let mut cloud = ParticleCloud::at_prior(&synth, &config).unwrap();
    for t in 0..steps {
        cloud.step(&config, &synth, &fcs[t], ys[t], Stream::new(2)).unwrap();
    }
    (cloud, fcs, synth)
}

#[test]
fn point_mass_predictive_is_the_analytic_t() {
    let synth = SynthesisConfig::default_prior(2);
    let xs = [[0.5, 1.5], [0.7, 1.2], [0.4, 1.0]];
    let ys = [1.0, 1.1, 0.8];
    let config = SmcConfig::new(6);
    let mut cloud = ParticleCloud::at_prior(&synth, &config).unwrap();
    for t in 0..2 {
        cloud
            .step(
                &config,
                &synth,
                &AgentForecast::point_masses(&xs[t]),
                ys[t],
                Stream::new(3),
            )
            .unwrap();
    }
    let next = AgentForecast::point_masses(&xs[2]);
    let mix = cloud.synthesized_predictive(&synth, &next, Stream::new(4)).unwrap();
    let fs: Vec<DVector<f64>> = xs.iter().map(|x| synthesis_regressor(x)).collect();
    let oracle = forward_filter(fs.iter().zip(ys), &synth.init, &synth.discount).unwrap();
    for c in mix.components() {
        assert_abs_diff_eq!(c.loc, oracle[2].predictive.loc, epsilon = 1e-12);
        assert_abs_diff_eq!(c.scale2, oracle[2].predictive.scale2, epsilon = 1e-12);
        assert_eq!(c.dof, oracle[2].predictive.dof);
    }
}

#[test]
fn predictive_mixture_integrates_to_one() {
    let (cloud, fcs, synth) = filtered_cloud(300, 12);
    let mix = cloud.synthesized_predictive(&synth, &fcs[12], Stream::new(5)).unwrap();
    let center = mix.mean();
    let scale = mix.components().iter().map(|c| c.scale2.sqrt()).fold(0.0, f64::max);
    let (lo, hi) = (center - 20.0 * scale, center + 20.0 * scale);
    let n = 40_000;
    let h = (hi - lo) / n as f64;
    let mut total = 0.0;
    for i in 0..=n {
        let w = if i == 0 || i == n { 0.5 } else { 1.0 };
        total += w * mix.ln_pdf(lo + i as f64 * h).exp();
    }
    assert!((total * h - 1.0).abs() < 1e-3, "integral {}", total * h);
}

#[test]
fn sampled_quantiles_match_cdf_inversion() {
    let (cloud, fcs, synth) = filtered_cloud(200, 10);
    let mix = cloud.synthesized_predictive(&synth, &fcs[10], Stream::new(6)).unwrap();
    let probs = [0.05, 0.5, 0.95];
    let exact = predictive_quantiles(&mix, &probs).unwrap();
    let mut rng = Stream::new(7).rng();
    let mut draws: Vec<f64> = (0..100_000).map(|_| mix.sample(&mut rng)).collect();
    draws.sort_by(f64::total_cmp);
    for (p, q) in probs.iter().zip(&exact) {
        let empirical = draws[(p * draws.len() as f64) as usize];
        assert!((empirical - q).abs() < 0.02, "p = {p}: {empirical} vs {q}");
    }
}

fn evidence_setup() -> (Vec<f64>, Vec<AgentForecast>, SynthesisConfig) {
    let fcs = synthetic_forecasts(1, 60, 8.0, 0.003);
    let ys = synthetic_ys(&fcs, 0.3, Stream::new(21));
    let synth = SynthesisConfig::new(
        DlmMoments::isotropic(DVector::from_vec(vec![0.0, 1.0]), 1.0, 10.0, 0.1).unwrap(),
        DiscountConfig::new(0.99, 0.95).unwrap(),
    )
    .unwrap();
    (ys, fcs, synth)
}

#[test]
fn evidence_matches_importance_sampling() {
    let (ys, fcs, synth) = evidence_setup();
    let draws = 200_000;
    let root = Stream::new(22);
    let logs: Vec<f64> = (0..draws)
        .map(|i| {
            let mut rng = root.child(i).rng();
            let fs: Vec<DVector<f64>> = fcs.iter().map(|f| synthesis_regressor(&f.sample(&mut rng))).collect();
            forward_filter(fs.iter().zip(ys.iter().copied()), &synth.init, &synth.discount)
                .unwrap()
                .iter()
                .map(|s| s.log_score)
                .sum()
        })
        .collect();
    let oracle = log_sum_exp(logs.iter().copied()) - (draws as f64).ln();
    // The oracle is only trustworthy when the importance weights are tame.
    let (_, v) = mean_var(&logs);
    eprintln!("log-weight variance {v}");
    assert!(v < 3.0, "log-weight variance {v}");
    let run = run_dbps(
        &ys,
        &fcs,
        &synth,
        DbpsSettings::new(20_000, None, ChainConfig::new(10)),
        Stream::new(23),
        None,
    )
    .unwrap();
    eprintln!("{} vs {oracle}", run.log_evidence);
    assert!(
        (run.log_evidence - oracle).abs() < 0.05,
        "{} vs {oracle}",
        run.log_evidence
    );
}

#[test]
fn rao_blackwellization_reduces_variance() {
    let fcs = synthetic_forecasts(2, 60, 6.0, 0.1);
    let ys = synthetic_ys(&fcs, 0.25, Stream::new(31));
    let synth = SynthesisConfig::default_prior(2);
    let config = SmcConfig::new(500);
    let mut rb = Vec::new();
    let mut plain = Vec::new();
    for run in 0..50u64 {
        let mut a = ParticleCloud::at_prior(&synth, &config).unwrap();
        let mut b = ParticleCloud::at_prior(&synth, &config).unwrap();
        for t in 0..ys.len() {
            a.step(&config, &synth, &fcs[t], ys[t], Stream::new(100 + run)).unwrap();
            b.step_non_rb(&config, &synth, &fcs[t], ys[t], Stream::new(100 + run))
                .unwrap();
        }
        rb.push(a.log_evidence());
        plain.push(b.log_evidence());
    }
    let (_, v_rb) = mean_var(&rb);
    let (_, v_plain) = mean_var(&plain);
    assert!(v_rb <= v_plain, "RB variance {v_rb} vs {v_plain}");
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let fcs = synthetic_forecasts(2, 25, 6.0, 0.1);
    let ys = synthetic_ys(&fcs, 0.2, Stream::new(41));
    let synth = SynthesisConfig::default_prior(2);
    let settings = DbpsSettings::new(300, Some(150.0), ChainConfig::new(300));
    let run_with = |threads| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| run_dbps(&ys, &fcs, &synth, settings, Stream::new(42), None).unwrap())
    };
    let one = run_with(1);
    let three = run_with(3);
    assert_eq!(one.log_scores, three.log_scores);
    assert_eq!(one.ess, three.ess);
    assert_eq!(one.intervened, three.intervened);
}

#[test]
fn interventions_fire_iff_ess_below_threshold() {
    let fcs = synthetic_forecasts(2, 40, 6.0, 0.1);
    let ys = synthetic_ys(&fcs, 0.2, Stream::new(51));
    let synth = SynthesisConfig::default_prior(2);
    for c in [1.0, 20.0, 60.0, 100.0] {
        let run = run_dbps(
            &ys,
            &fcs,
            &synth,
            DbpsSettings::new(100, Some(c), ChainConfig::new(100)),
            Stream::new(52),
            None,
        )
        .unwrap();
        for (e, i) in run.ess.iter().zip(&run.intervened) {
            assert_eq!(*e < c, *i, "threshold {c}, ess {e}");
        }
        if c == 1.0 {
            assert!(run.interventions.is_empty());
        }
        if c == 100.0 {
            assert!(run.intervened.iter().all(|i| *i));
        }
    }
}
