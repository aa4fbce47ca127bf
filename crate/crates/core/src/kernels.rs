//! Weekly lag kernels for the generation interval and the shedding profile.
//!
//! Both kernels discretize a gamma distribution, parameterized on the weekly
//! time scale, by CDF differences over intervals centered on integer lags.
//! Mass beyond the truncation lag is dropped and the retained weights are
//! renormalized.

use serde::{Deserialize, Serialize};
use statrs::function::gamma::gamma_lr;

use crate::error::{Error, Result};

pub const DAYS_PER_WEEK: f64 = 7.0;

/// Default cumulative mass used to choose the truncation lag.
pub const DEFAULT_TRUNCATION_MASS: f64 = 0.99;

/// Method-of-moments gamma distribution on the weekly scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaSpec {
    pub mean_days: f64,
    pub sd_days: f64,
    pub shape: f64,
    /// Scale in weeks.
    pub scale: f64,
}

impl GammaSpec {
    pub fn mean_weeks(&self) -> f64 {
        self.mean_days / DAYS_PER_WEEK
    }

    pub fn sd_weeks(&self) -> f64 {
        self.sd_days / DAYS_PER_WEEK
    }

    /// CDF at `x` weeks.
    pub fn cdf(&self, x: f64) -> f64 {
        if x <= 0.0 {
            0.0
        } else {
            gamma_lr(self.shape, x / self.scale)
        }
    }
}

pub fn gamma_from_moments(mean_days: f64, sd_days: f64) -> Result<GammaSpec> {
    if !(mean_days > 0.0 && mean_days.is_finite() && sd_days > 0.0 && sd_days.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "gamma moments must be positive, got mean {mean_days} sd {sd_days}"
        )));
    }
    let mean = mean_days / DAYS_PER_WEEK;
    let sd = sd_days / DAYS_PER_WEEK;
    Ok(GammaSpec {
        mean_days,
        sd_days,
        shape: (mean / sd).powi(2),
        scale: sd * sd / mean,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum KernelKind {
    Generation,
    Shedding,
}

/// Normalized weights over lags `min_lag..=max_lag`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelWeights {
    kind: KernelKind,
    max_lag: usize,
    weights: Vec<f64>,
}

impl KernelWeights {
    /// Builds a kernel from raw non-negative weights, renormalizing them.
    /// `weights[0]` is the weight of `min_lag` for the given kind.
    pub fn from_weights(kind: KernelKind, weights: Vec<f64>) -> Result<Self> {
        if weights.is_empty() {
            return Err(Error::InvalidParameter("kernel needs at least one lag".into()));
        }
        if weights.iter().any(|w| !(*w >= 0.0 && w.is_finite())) {
            return Err(Error::InvalidParameter("kernel weights must be non-negative".into()));
        }
        let total: f64 = weights.iter().sum();
        if total <= 0.0 {
            return Err(Error::InvalidParameter("kernel has no retained mass".into()));
        }
        let min_lag = match kind {
            KernelKind::Generation => 1,
            KernelKind::Shedding => 0,
        };
        Ok(Self {
            kind,
            max_lag: min_lag + weights.len() - 1,
            weights: weights.into_iter().map(|w| w / total).collect(),
        })
    }

    pub fn kind(&self) -> KernelKind {
        self.kind
    }

    pub fn min_lag(&self) -> usize {
        match self.kind {
            KernelKind::Generation => 1,
            KernelKind::Shedding => 0,
        }
    }

    pub fn max_lag(&self) -> usize {
        self.max_lag
    }

    /// Weights in lag order starting at [`min_lag`](Self::min_lag).
    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Weight at `lag`, zero outside the support.
    pub fn weight(&self, lag: usize) -> f64 {
        lag.checked_sub(self.min_lag())
            .and_then(|i| self.weights.get(i))
            .copied()
            .unwrap_or(0.0)
    }

    /// `(lag, weight)` pairs over the support.
    pub fn lags(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        let min = self.min_lag();
        self.weights.iter().enumerate().map(move |(i, &w)| (i + min, w))
    }

    pub fn mean_lag(&self) -> f64 {
        self.lags().map(|(l, w)| l as f64 * w).sum()
    }
}

pub fn generation_kernel(spec: &GammaSpec, max_lag: usize) -> Result<KernelWeights> {
    if max_lag < 1 {
        return Err(Error::InvalidParameter(
            "generation kernel needs max lag >= 1".into(),
        ));
    }
    let raw = (1..=max_lag)
        .map(|g| {
            let g = g as f64;
            spec.cdf(g + 0.5) - spec.cdf(g - 0.5)
        })
        .collect();
    KernelWeights::from_weights(KernelKind::Generation, raw)
}

/// Shedding kernel over lags `0..=max_lag`; lag 0 takes the mass on `[0, 1/2]`.
/// Negative truncation lags are unrepresentable, so the lower-bound check of
/// the contract lives in the `usize` type.
pub fn shedding_kernel(spec: &GammaSpec, max_lag: usize) -> Result<KernelWeights> {
    if max_lag == 0 {
        return KernelWeights::from_weights(KernelKind::Shedding, vec![1.0]);
    }
    let raw = (0..=max_lag)
        .map(|d| {
            let d = d as f64;
            spec.cdf(d + 0.5) - spec.cdf((d - 0.5).max(0.0))
        })
        .collect();
    KernelWeights::from_weights(KernelKind::Shedding, raw)
}

/// Smallest lag `L` whose untruncated cumulative mass through `L + 1/2`
/// reaches `mass`.
pub fn default_truncation(spec: &GammaSpec, mass: f64) -> usize {
    let mass = mass.clamp(f64::MIN_POSITIVE, 1.0 - f64::EPSILON);
    // Step out to a bracketing lag then scan; the CDF is monotone.
    let mut lag = 0usize;
    while spec.cdf(lag as f64 + 0.5) < mass {
        lag += 1;
        if lag > 100_000 {
            break;
        }
    }
    lag
}

/// Generation kernel truncated at `default_truncation(spec, mass)` (at least 1).
pub fn generation_kernel_by_mass(spec: &GammaSpec, mass: f64) -> Result<KernelWeights> {
    generation_kernel(spec, default_truncation(spec, mass).max(1))
}

pub fn shedding_kernel_by_mass(spec: &GammaSpec, mass: f64) -> Result<KernelWeights> {
    shedding_kernel(spec, default_truncation(spec, mass))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn rsv_generation_moments() {
        let g = gamma_from_moments(7.5, 2.1).unwrap();
        assert_relative_eq!(g.shape * g.scale, 7.5 / 7.0, max_relative = 1e-12);
        assert_relative_eq!((g.shape * g.scale * g.scale).sqrt(), 0.3, max_relative = 1e-12);
        assert_relative_eq!(g.shape * g.scale, 1.0714285714285714, max_relative = 1e-12);
    }

    #[test]
    fn rsv_shedding_moments() {
        let g = gamma_from_moments(4.6, 2.0).unwrap();
        assert_relative_eq!(g.shape * g.scale, 0.657142857142857, max_relative = 1e-12);
        assert_relative_eq!(
            (g.shape * g.scale * g.scale).sqrt(),
            0.2857142857142857,
            max_relative = 1e-12
        );
    }

    #[test]
    fn equal_mean_and_sd_is_exponential() {
        let g = gamma_from_moments(7.0, 7.0).unwrap();
        assert_relative_eq!(g.shape, 1.0, max_relative = 1e-15);
        assert_relative_eq!(g.scale, 1.0, max_relative = 1e-15);
    }

    #[test]
    fn rejects_bad_moments() {
        assert!(gamma_from_moments(0.0, 1.0).is_err());
        assert!(gamma_from_moments(1.0, -1.0).is_err());
        assert!(gamma_from_moments(f64::NAN, 1.0).is_err());
    }

    #[test]
    fn point_mass_limits() {
        // mean 1 week, sd tiny: all mass in (0.5, 1.5)
        let g = gamma_from_moments(7.0, 0.05).unwrap();
        let k = generation_kernel(&g, 4).unwrap();
        assert_eq!(k.weights().len(), 4);
        assert_relative_eq!(k.weights()[0], 1.0, epsilon = 1e-12);
        assert!(k.weights()[1..].iter().all(|w| *w < 1e-12));

        let g = gamma_from_moments(0.7, 0.05).unwrap();
        let k = shedding_kernel(&g, 3).unwrap();
        assert_eq!(k.weights().len(), 4);
        assert_relative_eq!(k.weights()[0], 1.0, epsilon = 1e-12);
    }

    #[test]
    fn zero_lag_shedding_is_unit() {
        let g = gamma_from_moments(4.6, 2.0).unwrap();
        let k = shedding_kernel(&g, 0).unwrap();
        assert_eq!(k.weights(), &[1.0]);
        assert_eq!(k.max_lag(), 0);
    }

    #[test]
    fn generation_needs_positive_lag() {
        let g = gamma_from_moments(7.5, 2.1).unwrap();
        assert!(generation_kernel(&g, 0).is_err());
    }

    #[test]
    fn support_conventions() {
        let g = gamma_from_moments(7.5, 2.1).unwrap();
        let gen = generation_kernel(&g, 3).unwrap();
        assert_eq!(gen.min_lag(), 1);
        assert_eq!(gen.weight(0), 0.0);
        assert_eq!(gen.lags().map(|(l, _)| l).collect::<Vec<_>>(), vec![1, 2, 3]);
        let shed = shedding_kernel(&g, 2).unwrap();
        assert_eq!(shed.min_lag(), 0);
        assert!(shed.weight(0) > 0.0);
    }

    #[test]
    fn exponential_truncation_matches_closed_form() {
        let g = gamma_from_moments(7.0, 7.0).unwrap();
        // F(x) = 1 - exp(-x); smallest L with 1 - exp(-(L + 0.5)) >= 0.99
        let expected = (0..)
            .find(|&l| 1.0 - (-(l as f64 + 0.5)).exp() >= 0.99)
            .unwrap();
        assert_eq!(expected, 5);
        assert_eq!(default_truncation(&g, 0.99), expected);
    }

    #[test]
    fn truncation_is_monotone_in_mass() {
        let g = gamma_from_moments(10.0, 14.0).unwrap();
        let lags: Vec<usize> = [0.9, 0.99, 0.999, 0.9999, 0.99999]
            .iter()
            .map(|m| default_truncation(&g, *m))
            .collect();
        assert!(lags.windows(2).all(|w| w[0] <= w[1]));
        assert!(lags.last() > lags.first());
    }
}
