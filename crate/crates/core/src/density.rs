//! Univariate predictive densities: the Student-t and finite Student-t mixtures.

use rand::Rng as _;
use rand_distr::{Distribution, Gamma, StandardNormal};
use statrs::function::beta::beta_reg;
use statrs::function::gamma::ln_gamma;

use crate::error::{invalid, Result};
use crate::rng::Rng;

/// Anything that can serve as a one-step-ahead predictive distribution.
pub trait Density {
    fn ln_pdf(&self, y: f64) -> f64;
    fn cdf(&self, y: f64) -> f64;
    fn sample(&self, rng: &mut Rng) -> f64;
    /// An interval that contains essentially all of the mass, used to
    /// bracket quantile searches.
    fn bracket(&self) -> (f64, f64);
}

/// Student-t with `dof` degrees of freedom, location `loc` and squared scale
/// `scale2`. A zero scale is a point mass at `loc`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StudentT {
    pub dof: f64,
    pub loc: f64,
    pub scale2: f64,
}

impl StudentT {
    pub fn new(dof: f64, loc: f64, scale2: f64) -> Result<Self> {
        if !(dof > 0.0) {
            return Err(invalid("dof", format!("must be > 0, got {dof}")));
        }
        if !loc.is_finite() {
            return Err(invalid("loc", format!("must be finite, got {loc}")));
        }
        if !(scale2 >= 0.0) || !scale2.is_finite() {
            return Err(invalid("scale2", format!("must be >= 0, got {scale2}")));
        }
        Ok(StudentT { dof, loc, scale2 })
    }

    pub fn is_point_mass(&self) -> bool {
        self.scale2 == 0.0
    }

    /// Log normalizing constant: -ln B(1/2, r/2) - ln(r q)/2.
    fn ln_norm(&self) -> f64 {
        let r = self.dof;
        ln_gamma(0.5 * (r + 1.0)) - ln_gamma(0.5 * r) - 0.5 * (std::f64::consts::PI * r * self.scale2).ln()
    }

    pub fn variance(&self) -> Option<f64> {
        (self.dof > 2.0).then(|| self.scale2 * self.dof / (self.dof - 2.0))
    }

    /// Draw via the normal scale mixture: sigma2 ~ IG(dof/2, dof/2), then
    /// N(loc, sigma2 * scale2). Returns `(x, sigma2)`.
    pub fn sample_with_scale(&self, rng: &mut Rng) -> (f64, f64) {
        let half = 0.5 * self.dof;
        let g: f64 = Gamma::new(half, 1.0 / half)
            .expect("dof validated positive")
            .sample(rng);
        let sigma2 = 1.0 / g;
        let z: f64 = StandardNormal.sample(rng);
        (self.loc + (sigma2 * self.scale2).sqrt() * z, sigma2)
    }
}

impl Density for StudentT {
    fn ln_pdf(&self, y: f64) -> f64 {
        if self.is_point_mass() {
            return if y == self.loc {
                f64::INFINITY
            } else {
                f64::NEG_INFINITY
            };
        }
        let e = y - self.loc;
        self.ln_norm() - 0.5 * (self.dof + 1.0) * (e * e / (self.dof * self.scale2)).ln_1p()
    }

    fn cdf(&self, y: f64) -> f64 {
        if self.is_point_mass() {
            return if y >= self.loc { 1.0 } else { 0.0 };
        }
        let x = (y - self.loc) / self.scale2.sqrt();
        if x.is_infinite() {
            return if x > 0.0 { 1.0 } else { 0.0 };
        }
        let r = self.dof;
        let tail = 0.5 * beta_reg(0.5 * r, 0.5, r / (r + x * x));
        if x > 0.0 {
            1.0 - tail
        } else {
            tail
        }
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        self.sample_with_scale(rng).0
    }

    fn bracket(&self) -> (f64, f64) {
        let sd = self.scale2.sqrt();
        // Wide enough for the far quantiles of a t with one degree of freedom.
        let width = if self.dof >= 3.0 { 60.0 } else { 1.0e4 };
        (self.loc - width * sd, self.loc + width * sd)
    }
}

/// Weighted finite mixture of Student-t densities.
#[derive(Clone, Debug, PartialEq)]
pub struct TMixture {
    weights: Vec<f64>,
    components: Vec<StudentT>,
}

impl TMixture {
    /// Builds a mixture, normalizing the weights. Zero-weight components are
    /// dropped.
    pub fn new(weights: Vec<f64>, components: Vec<StudentT>) -> Result<Self> {
        if weights.len() != components.len() {
            return Err(invalid("weights", "length differs from component count"));
        }
        if weights.iter().any(|w| !(*w >= 0.0) || !w.is_finite()) {
            return Err(invalid("weights", "must be finite and non-negative"));
        }
        let total: f64 = weights.iter().sum();
        if !(total > 0.0) {
            return Err(invalid("weights", "sum to zero"));
        }
        let (weights, components): (Vec<f64>, Vec<StudentT>) = weights
            .into_iter()
            .zip(components)
            .filter(|(w, _)| *w > 0.0)
            .map(|(w, c)| (w / total, c))
            .unzip();
        Ok(TMixture { weights, components })
    }

    /// Equal-weight mixture.
    pub fn uniform(components: Vec<StudentT>) -> Result<Self> {
        let n = components.len();
        TMixture::new(vec![1.0; n], components)
    }

    pub fn single(component: StudentT) -> Self {
        TMixture {
            weights: vec![1.0],
            components: vec![component],
        }
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn components(&self) -> &[StudentT] {
        &self.components
    }

    pub fn len(&self) -> usize {
        self.components.len()
    }

    pub fn is_empty(&self) -> bool {
        self.components.is_empty()
    }

    pub fn mean(&self) -> f64 {
        self.weights.iter().zip(&self.components).map(|(w, c)| w * c.loc).sum()
    }
}

/// Numerically stable `ln(sum(exp(x)))`.
pub fn log_sum_exp(values: impl IntoIterator<Item = f64>) -> f64 {
    let values: Vec<f64> = values.into_iter().collect();
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if max.is_infinite() {
        return max;
    }
    max + values.iter().map(|v| (v - max).exp()).sum::<f64>().ln()
}

impl Density for TMixture {
    fn ln_pdf(&self, y: f64) -> f64 {
        if self.components.len() == 1 {
            return self.components[0].ln_pdf(y);
        }
        log_sum_exp(
            self.weights
                .iter()
                .zip(&self.components)
                .map(|(w, c)| w.ln() + c.ln_pdf(y)),
        )
    }

    fn cdf(&self, y: f64) -> f64 {
        self.weights
            .iter()
            .zip(&self.components)
            .map(|(w, c)| w * c.cdf(y))
            .sum::<f64>()
            .clamp(0.0, 1.0)
    }

    fn sample(&self, rng: &mut Rng) -> f64 {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        for (w, c) in self.weights.iter().zip(&self.components) {
            acc += w;
            if u < acc {
                return c.sample(rng);
            }
        }
        self.components[self.components.len() - 1].sample(rng)
    }

    fn bracket(&self) -> (f64, f64) {
        self.components
            .iter()
            .map(|c| c.bracket())
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), (a, b)| {
                (lo.min(a), hi.max(b))
            })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Stream;
    use approx::assert_abs_diff_eq;
    use statrs::distribution::{ContinuousCDF, StudentsT};

    #[test]
    fn gaussian_limit() {
        let t = StudentT::new(1e8, 0.0, 1.0).unwrap();
        assert_abs_diff_eq!(t.ln_pdf(0.0), -0.5 * (2.0 * std::f64::consts::PI).ln(), epsilon = 1e-6);
    }

    #[test]
    fn symmetric_about_location() {
        let t = StudentT::new(3.5, 1.2, 0.8).unwrap();
        assert_abs_diff_eq!(t.ln_pdf(1.9), t.ln_pdf(0.5), epsilon = 1e-14);
    }

    #[test]
    fn cdf_matches_statrs() {
        for &(dof, loc, s2) in &[(2.0, 0.0, 1.01), (5.0, 2.0, 1.0), (40.0, -1.0, 0.3), (0.7, 0.5, 2.0)] {
            let t = StudentT::new(dof, loc, s2).unwrap();
            let oracle = StudentsT::new(loc, f64::sqrt(s2), dof).unwrap();
            for y in [-3.0, -0.4, 0.0, 0.5, 1.7, 6.0] {
                assert_abs_diff_eq!(t.cdf(y), oracle.cdf(y), epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn point_mass_behaviour() {
        let t = StudentT::new(4.0, 2.5, 0.0).unwrap();
        let mut rng = Stream::new(1).rng();
        assert_eq!(t.sample(&mut rng), 2.5);
        assert_eq!(t.cdf(2.4), 0.0);
        assert_eq!(t.cdf(2.5), 1.0);
    }

    #[test]
    fn rejects_invalid_parameters() {
        assert!(StudentT::new(0.0, 0.0, 1.0).is_err());
        assert!(StudentT::new(1.0, 0.0, -1.0).is_err());
        assert!(StudentT::new(1.0, f64::NAN, 1.0).is_err());
    }

    #[test]
    fn mixture_logpdf_matches_direct_sum() {
        let comps = vec![
            StudentT::new(3.0, 0.0, 1.0).unwrap(),
            StudentT::new(7.0, 1.5, 0.5).unwrap(),
            StudentT::new(2.5, -2.0, 2.0).unwrap(),
        ];
        let w = vec![0.2, 0.5, 0.3];
        let mix = TMixture::new(w.clone(), comps.clone()).unwrap();
        for y in [-3.0, -1.0, 0.0, 0.7, 2.2] {
            let direct: f64 = w.iter().zip(&comps).map(|(w, c)| w * c.ln_pdf(y).exp()).sum();
            assert_abs_diff_eq!(mix.ln_pdf(y), direct.ln(), epsilon = 1e-12);
        }
    }

    #[test]
    fn mixture_drops_zero_weights() {
        let a = StudentT::new(3.0, 0.0, 1.0).unwrap();
        let b = StudentT::new(3.0, 5.0, 1.0).unwrap();
        let mix = TMixture::new(vec![0.0, 2.0], vec![a, b]).unwrap();
        assert_eq!(mix.len(), 1);
        assert_eq!(mix.ln_pdf(1.0), b.ln_pdf(1.0));
    }

    #[test]
    fn log_sum_exp_edge_cases() {
        assert_eq!(log_sum_exp([f64::NEG_INFINITY, f64::NEG_INFINITY]), f64::NEG_INFINITY);
        assert_abs_diff_eq!(log_sum_exp([1000.0, 1000.0]), 1000.0 + 2f64.ln(), epsilon = 1e-12);
    }
}
