//! Conjugate discount dynamic linear model.
//!
//! The state `theta` evolves as a random walk whose evolution variance is
//! specified through the state discount factor `delta`, and the observation
//! variance `nu` follows a beta-gamma random walk with discount `beta`.
//! Conditional on the regressors, the posterior of `(theta, nu)` stays
//! normal-inverse-gamma with sufficient statistics `(m, C, n, s)`:
//!
//! ```text
//! theta | nu ~ N(m, (nu / s) C),   nu ~ IG(n / 2, n s / 2)
//! ```
//!
//! and the one-step predictive of `y` is Student-t with `r` degrees of freedom,
//! location `F'a` and squared scale `q = s + F'RF`.
//!
//! The evolution variance `W_t` is never materialized; it exists only through
//! `R_t = C_{t-1} / delta`.

use nalgebra::{DMatrix, DVector};

use crate::density::{Density, StudentT};
use crate::error::{invalid, Error, Result};

/// Volatility (`beta`) and state (`delta`) discount factors, both in (0, 1].
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiscountConfig {
    beta: f64,
    delta: f64,
}

impl DiscountConfig {
    pub fn new(beta: f64, delta: f64) -> Result<Self> {
        if !(beta > 0.0 && beta <= 1.0) {
            return Err(invalid("beta", format!("must lie in (0, 1], got {beta}")));
        }
        if !(delta > 0.0 && delta <= 1.0) {
            return Err(invalid("delta", format!("must lie in (0, 1], got {delta}")));
        }
        Ok(DiscountConfig { beta, delta })
    }

    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn delta(&self) -> f64 {
        self.delta
    }
}

/// Posterior sufficient statistics `(m, C, n, s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct DlmMoments {
    pub m: DVector<f64>,
    pub c: DMatrix<f64>,
    pub n: f64,
    pub s: f64,
}

impl DlmMoments {
    pub fn new(m: DVector<f64>, c: DMatrix<f64>, n: f64, s: f64) -> Result<Self> {
        let p = m.len();
        if c.nrows() != p || c.ncols() != p {
            return Err(Error::DimensionMismatch {
                expected: p,
                got: c.nrows(),
            });
        }
        if !(n > 0.0) {
            return Err(invalid("n", format!("must be > 0, got {n}")));
        }
        if !(s > 0.0) {
            return Err(invalid("s", format!("must be > 0, got {s}")));
        }
        if (&c - c.transpose()).amax() > 1e-10 * c.amax().max(1.0) {
            return Err(invalid("C", "must be symmetric"));
        }
        Ok(DlmMoments { m, c, n, s })
    }

    /// Moments with mean `m`, scale `c_scale * I`.
    pub fn isotropic(m: DVector<f64>, c_scale: f64, n: f64, s: f64) -> Result<Self> {
        let p = m.len();
        DlmMoments::new(m, DMatrix::identity(p, p) * c_scale, n, s)
    }

    pub fn dim(&self) -> usize {
        self.m.len()
    }

    /// Posterior to prior: `a = m`, `R = C / delta`, `r = beta n`.
    pub fn prior(&self, config: &DiscountConfig) -> DlmPrior {
        DlmPrior {
            a: self.m.clone(),
            r: &self.c / config.delta,
            dof: config.beta * self.n,
            s_prev: self.s,
        }
    }
}

/// One-step prior `(a, R, r)` together with the carried volatility estimate.
#[derive(Clone, Debug, PartialEq)]
pub struct DlmPrior {
    pub a: DVector<f64>,
    pub r: DMatrix<f64>,
    pub dof: f64,
    pub s_prev: f64,
}

impl DlmPrior {
    fn check_dim(&self, f: &DVector<f64>) -> Result<()> {
        if f.len() != self.a.len() {
            return Err(Error::DimensionMismatch {
                expected: self.a.len(),
                got: f.len(),
            });
        }
        Ok(())
    }

    /// One-step predictive `t(r, F'a, s + F'RF)`.
    pub fn predictive(&self, f: &DVector<f64>) -> Result<StudentT> {
        self.check_dim(f)?;
        let q = self.s_prev + (f.transpose() * &self.r * f)[(0, 0)];
        if !(q > 0.0) {
            return Err(Error::DegenerateScale(q));
        }
        StudentT::new(self.dof, f.dot(&self.a), q)
    }

    /// Prior to posterior after observing `y` with regressors `f`.
    pub fn update(&self, f: &DVector<f64>, y: f64) -> Result<DlmMoments> {
        self.check_dim(f)?;
        let rf = &self.r * f;
        let q = self.s_prev + f.dot(&rf);
        if !(q > 0.0) {
            return Err(Error::DegenerateScale(q));
        }
        let e = y - f.dot(&self.a);
        let z = (self.dof + e * e / q) / (self.dof + 1.0);
        let gain = rf / q;
        let m = &self.a + &gain * e;
        let mut c = (&self.r - &gain * gain.transpose() * q) * z;
        symmetrize(&mut c);
        Ok(DlmMoments {
            m,
            c,
            n: self.dof + 1.0,
            s: self.s_prev * z,
        })
    }
}

/// Replace `c` by `(c + c') / 2`.
pub fn symmetrize(c: &mut DMatrix<f64>) {
    let p = c.nrows();
    for i in 0..p {
        for j in (i + 1)..p {
            let v = 0.5 * (c[(i, j)] + c[(j, i)]);
            c[(i, j)] = v;
            c[(j, i)] = v;
        }
    }
}

/// Everything produced at one time point of the forward filter.
#[derive(Clone, Debug)]
pub struct FilterStep {
    pub prior: DlmPrior,
    pub posterior: DlmMoments,
    pub predictive: StudentT,
    pub log_score: f64,
}

/// Runs prior, predictive, scoring and update over a sequence of
/// `(F_t, y_t)` pairs.
pub fn forward_filter<'a, I>(series: I, init: &DlmMoments, config: &DiscountConfig) -> Result<Vec<FilterStep>>
where
    I: IntoIterator<Item = (&'a DVector<f64>, f64)>,
{
    let mut current = init.clone();
    let mut out = Vec::new();
    for (f, y) in series {
        let prior = current.prior(config);
        let predictive = prior.predictive(f)?;
        let log_score = predictive.ln_pdf(y);
        let posterior = prior.update(f, y)?;
        current = posterior.clone();
        out.push(FilterStep {
            prior,
            posterior,
            predictive,
            log_score,
        });
    }
    Ok(out)
}

/// Sum of the one-step log predictive densities.
pub fn log_marginal_likelihood(steps: &[FilterStep]) -> f64 {
    steps.iter().map(|s| s.log_score).sum()
}
