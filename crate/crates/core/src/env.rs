//! Environment laws: the distribution of a single site variable `omega`,
//! its log moment generating function `lambda(beta) = log E[exp(beta * omega)]`
//! and the exponentially tilted law `exp(beta * omega - lambda(beta)) dP`.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Below this `beta` the uniform log-MGF switches to its series.
const UNIFORM_SERIES_CUTOFF: f64 = 1e-8;

/// Site distribution family. All shipped families have closed-form `lambda`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum EnvModel {
    /// Standard normal.
    StandardGaussian,
    /// `P(omega = a) = p`, `P(omega = b) = 1 - p`.
    TwoPoint { a: f64, b: f64, p: f64 },
    /// Uniform on `[lo, hi]`.
    Uniform { lo: f64, hi: f64 },
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta >= 0.0) || !beta.is_finite() {
        return Err(Error::invalid(
            "run.beta",
            format!("must be a finite value >= 0, got {beta}"),
        ));
    }
    Ok(())
}

impl EnvModel {
    pub fn gaussian() -> Self {
        EnvModel::StandardGaussian
    }

    /// Two-point law with mass `p` on `a` and `1 - p` on `b`.
    ///
    /// `a == b`, `p == 0` and `p == 1` are accepted and give a degenerate law.
    pub fn two_point(a: f64, b: f64, p: f64) -> Result<Self> {
        if !(a.is_finite() && b.is_finite()) || a > b {
            return Err(Error::invalid("env.a", format!("need finite a <= b, got a={a}, b={b}")));
        }
        if !(0.0..=1.0).contains(&p) {
            return Err(Error::invalid("env.p", format!("need p in [0, 1], got {p}")));
        }
        Ok(EnvModel::TwoPoint { a, b, p })
    }

    pub fn uniform(lo: f64, hi: f64) -> Result<Self> {
        if !(lo.is_finite() && hi.is_finite()) || lo >= hi {
            return Err(Error::invalid(
                "env.lo",
                format!("need finite lo < hi, got lo={lo}, hi={hi}"),
            ));
        }
        Ok(EnvModel::Uniform { lo, hi })
    }

    /// True when `omega` is almost surely constant (no disorder).
    pub fn is_degenerate(&self) -> bool {
        match *self {
            EnvModel::StandardGaussian | EnvModel::Uniform { .. } => false,
            EnvModel::TwoPoint { a, b, p } => a == b || p == 0.0 || p == 1.0,
        }
    }

    /// `lambda(beta) = log E[exp(beta * omega)]`.
    pub fn log_mgf(&self, beta: f64) -> Result<f64> {
        check_beta(beta)?;
        Ok(self.log_mgf_unchecked(beta))
    }

    pub(crate) fn log_mgf_unchecked(&self, beta: f64) -> f64 {
        if beta == 0.0 {
            return 0.0;
        }
        match *self {
            EnvModel::StandardGaussian => 0.5 * beta * beta,
            EnvModel::TwoPoint { a, b, p } => {
                let la = if p > 0.0 { p.ln() + beta * a } else { f64::NEG_INFINITY };
                let lb = if p < 1.0 {
                    (1.0 - p).ln() + beta * b
                } else {
                    f64::NEG_INFINITY
                };
                crate::numeric::logsumexp([la, lb])
            }
            EnvModel::Uniform { lo, hi } => {
                let width = hi - lo;
                let t = beta * width;
                if beta < UNIFORM_SERIES_CUTOFF {
                    beta * (lo + hi) / 2.0 + beta * beta * width * width / 24.0
                } else if t < 1e-3 {
                    let t2 = t * t;
                    beta * lo + t / 2.0 + t2 / 24.0 - t2 * t2 / 2880.0 + t2 * t2 * t2 / 181_440.0
                } else if t <= 1.0 {
                    beta * lo + (t.exp_m1() / t).ln()
                } else {
                    beta * hi + (-(-t).exp_m1()).ln() - t.ln()
                }
            }
        }
    }

    /// `chi(beta) = exp(lambda(2 beta) - 2 lambda(beta))`, the one-site
    /// replica overlap factor.
    pub fn chi(&self, beta: f64) -> Result<f64> {
        Ok(self.log_chi(beta)?.exp())
    }

    pub fn log_chi(&self, beta: f64) -> Result<f64> {
        check_beta(beta)?;
        Ok(self.log_mgf_unchecked(2.0 * beta) - 2.0 * self.log_mgf_unchecked(beta))
    }

    /// One draw of `omega`.
    #[inline]
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            EnvModel::StandardGaussian => rng.sample(StandardNormal),
            EnvModel::TwoPoint { a, b, p } => {
                if rng.random::<f64>() < p {
                    a
                } else {
                    b
                }
            }
            EnvModel::Uniform { lo, hi } => lo + (hi - lo) * rng.random::<f64>(),
        }
    }

    /// The tilted law `exp(beta * omega - lambda(beta)) dP`.
    pub fn tilted(&self, beta: f64) -> Result<TiltedEnv> {
        let lambda = self.log_mgf(beta)?;
        Ok(TiltedEnv {
            base: *self,
            beta,
            lambda,
        })
    }

    /// One draw from the tilted law.
    pub fn sample_tilted<R: Rng + ?Sized>(&self, beta: f64, rng: &mut R) -> Result<f64> {
        Ok(self.tilted(beta)?.sample(rng))
    }

    /// Mean and variance of the base law.
    pub fn mean_var(&self) -> (f64, f64) {
        match *self {
            EnvModel::StandardGaussian => (0.0, 1.0),
            EnvModel::TwoPoint { a, b, p } => {
                let m = p * a + (1.0 - p) * b;
                (m, p * (1.0 - p) * (b - a) * (b - a))
            }
            EnvModel::Uniform { lo, hi } => ((lo + hi) / 2.0, (hi - lo).powi(2) / 12.0),
        }
    }
}

/// Precomputed exponential tilt of an [`EnvModel`].
#[derive(Debug, Clone, Copy)]
pub struct TiltedEnv {
    base: EnvModel,
    beta: f64,
    lambda: f64,
}

impl TiltedEnv {
    pub fn beta(&self) -> f64 {
        self.beta
    }

    pub fn lambda(&self) -> f64 {
        self.lambda
    }

    /// Mass of `a` under the tilted two-point law.
    pub fn two_point_mass_a(&self) -> Option<f64> {
        match self.base {
            EnvModel::TwoPoint { a, p, .. } if p > 0.0 => Some((p.ln() + self.beta * a - self.lambda).exp()),
            EnvModel::TwoPoint { .. } => Some(0.0),
            _ => None,
        }
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        let beta = self.beta;
        match self.base {
            EnvModel::StandardGaussian => beta + rng.sample::<f64, _>(StandardNormal),
            EnvModel::TwoPoint { a, b, .. } => {
                let pa = self.two_point_mass_a().unwrap_or(0.0);
                if rng.random::<f64>() < pa {
                    a
                } else {
                    b
                }
            }
            EnvModel::Uniform { lo, hi } => {
                let u: f64 = rng.random();
                let width = hi - lo;
                let t = beta * width;
                if t < 1e-12 {
                    lo + u * width
                } else if t < 1.0 {
                    lo + (u * t.exp_m1()).ln_1p() / beta
                } else {
                    hi + (u + (1.0 - u) * (-t).exp()).ln() / beta
                }
            }
        }
    }
}
