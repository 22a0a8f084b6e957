#![allow(dead_code)]

use bpsynth_core::agents::AgentForecast;
use bpsynth_core::rng::Stream;
use bpsynth_core::StudentT;
use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, Gamma, StandardNormal};

/// Batch normal/inverse-gamma regression posterior: prior
/// `theta | nu ~ N(m0, nu C0 / s0)`, `nu ~ IG(n0/2, n0 s0/2)`.
/// Returns `(m, C, n, s)` in the same parameterization.
pub fn batch_posterior(
    fs: &[DVector<f64>],
    ys: &[f64],
    m0: &DVector<f64>,
    c0: &DMatrix<f64>,
    n0: f64,
    s0: f64,
) -> (DVector<f64>, DMatrix<f64>, f64, f64) {
    let p = m0.len();
    let prior_prec = c0.clone().try_inverse().unwrap() * s0;
    let mut prec = prior_prec.clone();
    let mut rhs = &prior_prec * m0;
    let mut yy = 0.0;
    for (f, &y) in fs.iter().zip(ys) {
        prec += f * f.transpose();
        rhs += f * y;
        yy += y * y;
    }
    let cov = prec.clone().try_inverse().unwrap();
    let m = &cov * &rhs;
    let n = n0 + ys.len() as f64;
    let b = n0 * s0 + yy + (m0.transpose() * &prior_prec * m0)[(0, 0)] - (m.transpose() * &prec * &m)[(0, 0)];
    let s = b / n;
    assert_eq!(cov.nrows(), p);
    (m, cov * s, n, s)
}

pub fn normal(stream: Stream) -> f64 {
    StandardNormal.sample(&mut stream.rng())
}

/// Agent forecasts with slowly moving locations.
pub fn synthetic_forecasts(k: usize, len: usize, dof: f64, scale2: f64) -> Vec<AgentForecast> {
    (0..len)
        .map(|t| {
            AgentForecast::new(
                (0..k)
                    .map(|j| {
                        let loc = 1.0 + 0.8 * ((t as f64) * 0.21 + j as f64).sin();
                        StudentT::new(dof, loc, scale2).unwrap()
                    })
                    .collect(),
            )
        })
        .collect()
}

/// Observations from a fixed calibration: `y = 0.1 + sum_k x_k / K + noise`
/// with `x` drawn from the forecasts.
pub fn synthetic_ys(forecasts: &[AgentForecast], noise_sd: f64, stream: Stream) -> Vec<f64> {
    forecasts
        .iter()
        .enumerate()
        .map(|(t, fc)| {
            let mut rng = stream.child(t as u64).rng();
            let x = fc.sample(&mut rng);
            let z: f64 = StandardNormal.sample(&mut rng);
            0.1 + x.iter().sum::<f64>() / x.len() as f64 + noise_sd * z
        })
        .collect()
}

pub fn inverse_gamma(shape: f64, rate: f64, stream: Stream) -> f64 {
    1.0 / Gamma::new(shape, 1.0 / rate).unwrap().sample(&mut stream.rng())
}

pub fn mean_var(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let m = v.iter().sum::<f64>() / n;
    (m, v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0))
}
