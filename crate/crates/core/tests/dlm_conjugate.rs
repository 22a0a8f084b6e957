mod common;

use approx::assert_abs_diff_eq;
use bpsynth_core::dlm::{forward_filter, log_marginal_likelihood};
use bpsynth_core::{DiscountConfig, DlmMoments, Stream};
use common::{batch_posterior, normal};
use nalgebra::{dvector, DMatrix, DVector};
use proptest::prelude::*;
use statrs::function::gamma::ln_gamma;

fn regression_data(len: usize, seed: u64) -> (Vec<DVector<f64>>, Vec<f64>) {
    let s = Stream::new(seed);
    let fs: Vec<DVector<f64>> = (0..len)
        .map(|t| {
            dvector![
                1.0,
                normal(s.child(t as u64).named("a")),
                0.5 * normal(s.child(t as u64).named("b"))
            ]
        })
        .collect();
    let ys = fs
        .iter()
        .enumerate()
        .map(|(t, f)| 0.3 + 1.2 * f[1] - 0.7 * f[2] + 0.4 * normal(s.child(t as u64).named("e")))
        .collect();
    (fs, ys)
}

#[test]
fn unit_discounts_reproduce_batch_posterior() {
    let (fs, ys) = regression_data(100, 7);
    let m0 = dvector![0.0, 0.5, 0.0];
    let c0 = DMatrix::from_diagonal(&dvector![2.0, 1.0, 0.5]);
    let init = DlmMoments::new(m0.clone(), c0.clone(), 3.0, 0.2).unwrap();
    let steps = forward_filter(
        fs.iter().zip(ys.iter().copied()),
        &init,
        &DiscountConfig::new(1.0, 1.0).unwrap(),
    )
    .unwrap();
    let post = &steps.last().unwrap().posterior;
    let (m, c, n, s) = batch_posterior(&fs, &ys, &m0, &c0, 3.0, 0.2);
    assert_abs_diff_eq!(post.m, m, epsilon = 1e-8);
    assert_abs_diff_eq!(post.c, c, epsilon = 1e-8);
    assert_abs_diff_eq!(post.n, n, epsilon = 1e-8);
    assert_abs_diff_eq!(post.s, s, epsilon = 1e-8);
}

#[test]
fn unit_discounts_reproduce_marginal_likelihood() {
    let (fs, ys) = regression_data(40, 3);
    let m0 = dvector![0.1, 0.0, 0.0];
    let c0 = DMatrix::identity(3, 3);
    let (n0, s0) = (4.0, 0.5);
    let init = DlmMoments::new(m0.clone(), c0.clone(), n0, s0).unwrap();
    let steps = forward_filter(
        fs.iter().zip(ys.iter().copied()),
        &init,
        &DiscountConfig::new(1.0, 1.0).unwrap(),
    )
    .unwrap();

    let (_, c, n, s) = batch_posterior(&fs, &ys, &m0, &c0, n0, s0);
    // Precisions relative to nu: prior s0 C0^{-1}, posterior s C^{-1}.
    let prec0 = c0.clone().try_inverse().unwrap() * s0;
    let prec = c.try_inverse().unwrap() * s;
    let t = ys.len() as f64;
    let oracle = -t / 2.0 * (2.0 * std::f64::consts::PI).ln()
        + 0.5 * (prec0.determinant().ln() - prec.determinant().ln())
        + (n0 / 2.0) * (n0 * s0 / 2.0).ln()
        - ln_gamma(n0 / 2.0)
        + ln_gamma(n / 2.0)
        - (n / 2.0) * (n * s / 2.0).ln();
    assert_abs_diff_eq!(log_marginal_likelihood(&steps), oracle, epsilon = 1e-8);
}

proptest! {
    #[test]
    fn posterior_invariants(
        beta in 0.5f64..=1.0,
        delta in 0.5f64..=1.0,
        seed in 0u64..1000,
        len in 1usize..60,
    ) {
        let (fs, ys) = regression_data(len, seed);
        let init = DlmMoments::isotropic(DVector::zeros(3), 1.0, 2.0, 0.01).unwrap();
        let cfg = DiscountConfig::new(beta, delta).unwrap();
        let steps = forward_filter(fs.iter().zip(ys.iter().copied()), &init, &cfg).unwrap();
        let mut n_prev = 2.0;
        for st in &steps {
            let p = &st.posterior;
            prop_assert!((p.n - (beta * n_prev + 1.0)).abs() < 1e-12);
            n_prev = p.n;
            prop_assert!(p.s > 0.0);
            prop_assert_eq!(&p.c, &p.c.transpose());
            let min_eig = p.c.clone().symmetric_eigen().eigenvalues.min();
            prop_assert!(min_eig > -1e-12 * p.c.amax());
            prop_assert!(st.predictive.scale2 > 0.0);
        }
    }
}
