//! Linear Gaussian synthesis function `N(y | F'theta, nu)` with
//! `F = (1, x_1, ..., x_K)'`.
//!
//! The calibration parameter is `theta`; `nu` is integrated out analytically,
//! so conditional on an agent-draw path the synthesis posterior is carried as
//! [`DlmMoments`] and its predictive is a closed-form Student-t.

use nalgebra::DVector;

use crate::density::{Density, StudentT};
use crate::dlm::{DiscountConfig, DlmMoments};
use crate::error::{invalid, Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub struct SynthesisConfig {
    pub init: DlmMoments,
    pub discount: DiscountConfig,
}

impl SynthesisConfig {
    pub fn new(init: DlmMoments, discount: DiscountConfig) -> Result<Self> {
        if init.dim() < 1 {
            return Err(invalid("init", "needs at least the intercept"));
        }
        Ok(SynthesisConfig { init, discount })
    }

    /// `m0 = (0, 1/K, ..., 1/K)`, `C0 = I`, `n0 = 10`, `s0 = 0.002` with
    /// discounts `(0.99, 0.95)`.
    pub fn default_prior(k: usize) -> Self {
        let mut m = DVector::from_element(k + 1, 1.0 / k.max(1) as f64);
        m[0] = 0.0;
        SynthesisConfig {
            init: DlmMoments::isotropic(m, 1.0, 10.0, 0.002).expect("valid constants"),
            discount: DiscountConfig::new(0.99, 0.95).expect("valid constants"),
        }
    }

    /// Same prior, different discount factors.
    pub fn with_discount(&self, discount: DiscountConfig) -> Self {
        SynthesisConfig {
            init: self.init.clone(),
            discount,
        }
    }

    pub fn k(&self) -> usize {
        self.init.dim() - 1
    }
}

/// `(1, x_1, ..., x_K)'`.
pub fn synthesis_regressor(x: &[f64]) -> DVector<f64> {
    DVector::from_iterator(x.len() + 1, std::iter::once(1.0).chain(x.iter().copied()))
}

fn check(moments: &DlmMoments, x: &[f64]) -> Result<()> {
    if moments.dim() != x.len() + 1 {
        return Err(Error::DimensionMismatch {
            expected: moments.dim() - 1,
            got: x.len(),
        });
    }
    Ok(())
}

/// Predictive of `y` given the synthesis posterior and agent draw `x`.
pub fn conditional_predictive(moments: &DlmMoments, discount: &DiscountConfig, x: &[f64]) -> Result<StudentT> {
    check(moments, x)?;
    moments.prior(discount).predictive(&synthesis_regressor(x))
}

/// One synthesis step: returns `ln p(y | x, past)` and the updated moments.
pub fn conditional_step(
    moments: &DlmMoments,
    discount: &DiscountConfig,
    x: &[f64],
    y: f64,
) -> Result<(f64, DlmMoments)> {
    check(moments, x)?;
    let f = synthesis_regressor(x);
    let prior = moments.prior(discount);
    let log_score = prior.predictive(&f)?.ln_pdf(y);
    let posterior = prior.update(&f, y)?;
    Ok((log_score, posterior))
}

/// Forward-filters a whole agent-draw path, returning the final moments.
pub fn filter_path<'a>(
    config: &SynthesisConfig,
    xs: impl IntoIterator<Item = &'a [f64]>,
    ys: &[f64],
) -> Result<DlmMoments> {
    let mut m = config.init.clone();
    for (x, &y) in xs.into_iter().zip(ys) {
        m = conditional_step(&m, &config.discount, x, y)?.1;
    }
    Ok(m)
}
